//! Dense active-set projection onto a polyhedron {x : Ax ≤ b}.
//!
//! Solves min ½‖y − x‖² s.t. Ay ≤ b by a dual active-set method: start from
//! the unconstrained optimum y = x, repeatedly pick the lowest-index violated
//! constraint and drive it to feasibility, taking partial steps and dropping
//! working-set constraints whose multipliers would go negative. The dual
//! objective increases strictly at every step, so the method terminates
//! finitely; ties are broken by lowest index. On exit the working-set
//! equations hold to solver precision, so tight constraints read as exact
//! active sets downstream.

use nalgebra::{DMatrix, DVector};

use super::pseudo_inverse;
use crate::{Error, Result};

pub(crate) struct PolyhedronProjection {
    pub point: DVector<f64>,
    #[allow(dead_code)]
    pub active: Vec<usize>,
    #[allow(dead_code)]
    pub multipliers: Vec<f64>,
}

/// Equality-constrained projection of x onto {y : A_W y = b_W} with the KKT
/// multipliers, computed by normal equations on the working-set Gram matrix.
fn eq_projection(
    x: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    working: &[usize],
) -> Result<(DVector<f64>, Vec<f64>)> {
    if working.is_empty() {
        return Ok((x.clone(), Vec::new()));
    }
    let n = a.ncols();
    let mut c = DMatrix::zeros(working.len(), n);
    let mut rhs = DVector::zeros(working.len());
    for (row, &i) in working.iter().enumerate() {
        c.row_mut(row).copy_from(&a.row(i));
        rhs[row] = c.row(row).dot(&x.transpose()) - b[i];
    }
    let gram = &c * c.transpose();
    let mu = pseudo_inverse(&gram)? * rhs;
    let y = x - c.transpose() * &mu;
    Ok((y, mu.iter().copied().collect()))
}

pub(crate) fn project_polyhedron(
    x: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<PolyhedronProjection> {
    let m = a.nrows();
    let n = a.ncols();
    let scale = 1.0 + x.amax().max(b.amax());
    let feas_tol = 1e-11 * scale;

    let mut y = x.clone();
    let mut working: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();

    let max_pivots = 60 * (m + 1) * (n + 1);
    let mut pivots = 0;
    loop {
        // lowest-index violated constraint
        let violated = (0..m).find(|&i| {
            !working.contains(&i) && a.row(i).dot(&y.transpose()) - b[i] > feas_tol
        });
        let p = match violated {
            None => {
                // polish: re-solve the final working set for crisp tightness
                let (point, mult) = eq_projection(x, a, b, &working)?;
                return Ok(PolyhedronProjection { point, active: working, multipliers: mult });
            }
            Some(p) => p,
        };
        let cp = a.row(p).transpose();
        let mut mu_p = 0.0;

        // drive constraint p to its boundary, dropping blockers along the way
        loop {
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::NoConvergence {
                    what: "polyhedral projection QP",
                    residual: a.row(p).dot(&y.transpose()) - b[p],
                    iterations: pivots,
                });
            }
            // primal direction z keeps the working set tight while reducing
            // a_p·y; dual direction r is the induced multiplier change
            let (z, r) = if working.is_empty() {
                (-&cp, DVector::zeros(0))
            } else {
                let mut c = DMatrix::zeros(working.len(), n);
                for (row, &i) in working.iter().enumerate() {
                    c.row_mut(row).copy_from(&a.row(i));
                }
                let gram = &c * c.transpose();
                let r = pseudo_inverse(&gram)? * (&c * &cp);
                let z = c.transpose() * &r - &cp;
                (z, r)
            };
            let viol = a.row(p).dot(&y.transpose()) - b[p];
            let denom = -a.row(p).dot(&z.transpose());
            let t_full = if denom > 1e-13 * scale.max(cp.norm_squared()) {
                viol / denom
            } else {
                f64::INFINITY
            };
            // first working-set multiplier to hit zero (lowest index wins ties)
            let mut t_block = f64::INFINITY;
            let mut blocker = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-13 {
                    let t = mu[j] / rj;
                    if t < t_block {
                        t_block = t;
                        blocker = Some(j);
                    }
                }
            }
            if !t_full.is_finite() && !t_block.is_finite() {
                return Err(Error::Infeasible);
            }
            let t = t_full.min(t_block).max(0.0);
            y += t * &z;
            for (j, &rj) in r.iter().enumerate() {
                mu[j] -= t * rj;
            }
            mu_p += t;
            if t_block < t_full {
                let j = blocker.expect("finite blocking step has a blocker");
                working.remove(j);
                mu.remove(j);
            } else {
                working.push(p);
                mu.push(mu_p);
                break;
            }
        }
    }
}

//! Minimum-norm point in the intersection of an active manifold, a convex
//! set, and (optionally) a Euclidean ball.
//!
//! This realizes the safeguard branch of the manifold solver:
//! argmin{‖x‖ : x ∈ M ∩ X ∩ B}. The solve is a penalized projected-gradient
//! descent with feasibility restoration, run from five seeded starts to hedge
//! the nonconvex intersection geometry — any valid minimizer is acceptable to
//! the caller, and the branch fires rarely.

use nalgebra::DVector;

use super::{project_onto_manifold, project_onto_manifold_anchored, ConvexSet, Manifold};
use crate::rng::SplitMix64;
use crate::{Error, Result};

const FEAS_TOL: f64 = 1e-6;

fn ball_excess(x: &DVector<f64>, ball: Option<(&DVector<f64>, f64)>) -> f64 {
    match ball {
        None => 0.0,
        Some((c, r)) => ((x - c).norm() - r).max(0.0),
    }
}

fn infeasibility(
    x: &DVector<f64>,
    manifold: &Manifold,
    set: &ConvexSet,
    ball: Option<(&DVector<f64>, f64)>,
) -> f64 {
    let mf = if manifold.codim() == 0 { 0.0 } else { manifold.value(x).amax() };
    mf.max(set.max_violation(x)).max(ball_excess(x, ball))
}

/// One penalized descent pass followed by restoration and a tangent polish.
/// Returns the final point and its terminal infeasibility.
fn solve_from(
    start: &DVector<f64>,
    manifold: &Manifold,
    set: &ConvexSet,
    ball: Option<(&DVector<f64>, f64)>,
) -> (DVector<f64>, f64) {
    let mut x = start.clone();

    let grad = |x: &DVector<f64>, rho: f64| -> DVector<f64> {
        let mut g = x.clone();
        if manifold.codim() > 0 {
            let f = manifold.value(x);
            let j = manifold.jacobian(x);
            g += rho * (j * f);
        }
        if let Some((c, r)) = ball {
            let d = x - c;
            let norm = d.norm();
            if norm > r && norm > 0.0 {
                g += rho * ((norm - r) / norm) * d;
            }
        }
        g
    };
    let objective = |x: &DVector<f64>, rho: f64| -> f64 {
        let mut v = 0.5 * x.norm_squared();
        if manifold.codim() > 0 {
            v += 0.5 * rho * manifold.value(x).norm_squared();
        }
        let e = ball_excess(x, ball);
        v + 0.5 * rho * e * e
    };

    for &rho in &[1e2, 1e4, 1e6] {
        let mut eta = 1.0 / (1.0 + rho);
        for _ in 0..400 {
            let g = grad(&x, rho);
            let mut step_ok = false;
            let cur = objective(&x, rho);
            for _ in 0..40 {
                let cand = set.project(&(&x - eta * &g)).unwrap_or_else(|_| x.clone());
                if objective(&cand, rho) <= cur {
                    let moved = (&cand - &x).amax();
                    x = cand;
                    step_ok = moved > 1e-14;
                    break;
                }
                eta *= 0.5;
            }
            if !step_ok {
                break;
            }
            eta *= 1.5;
        }
    }

    // restoration: land exactly on the manifold, then keep set feasibility
    if manifold.codim() > 0 {
        if let Ok(y) = project_onto_manifold(&x, manifold) {
            x = y;
        }
    }

    // tangent polish: descend the norm along the manifold while staying
    // feasible for the other two sets
    for _ in 0..100 {
        let pit = match manifold.tangent_projector_at(&x) {
            Ok(p) => p,
            Err(_) => break,
        };
        let d = -(&pit * &x);
        if d.amax() <= 1e-9 * (1.0 + x.amax()) {
            break;
        }
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-7 {
            let moved = &x + t * &d;
            let cand = match project_onto_manifold_anchored(&moved, &moved, manifold) {
                Ok((y, _)) => y,
                Err(_) => {
                    t *= 0.5;
                    continue;
                }
            };
            let feasible = set.max_violation(&cand) <= 1e-8
                && ball_excess(&cand, ball) <= FEAS_TOL;
            if feasible && cand.norm_squared() < x.norm_squared() - 1e-14 {
                x = cand;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let inf = infeasibility(&x, manifold, set, ball);
    (x, inf)
}

/// argmin{‖x‖ : x ∈ M ∩ X ∩ B} to tolerance 1e-6, or `None` when the
/// intersection is detected infeasible. A stalled solve (close to feasible
/// but not within tolerance) surfaces as an error so the caller can fall back.
pub fn min_norm_point(
    manifold: &Manifold,
    set: &ConvexSet,
    ball: Option<(&DVector<f64>, f64)>,
) -> Result<Option<DVector<f64>>> {
    let n = set.dim();
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(5);
    starts.push(set.project(&DVector::zeros(n))?);
    if let Some((c, _)) = ball {
        starts.push(set.project(c)?);
    }
    let mut rng = SplitMix64::new(0x00D1_5EED ^ (n as u64).wrapping_mul(0x9E37));
    while starts.len() < 5 {
        let mut buf = vec![0.0; n];
        rng.fill_standard_normal(&mut buf);
        let center = ball.map(|(c, _)| c.clone()).unwrap_or_else(|| DVector::zeros(n));
        let p = center + 0.7 * DVector::from_vec(buf);
        starts.push(set.project(&p)?);
    }

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut least_infeasible = f64::INFINITY;
    for s in &starts {
        let (x, inf) = solve_from(s, manifold, set, ball);
        least_infeasible = least_infeasible.min(inf);
        if inf <= FEAS_TOL {
            let norm = x.norm();
            if best.as_ref().map_or(true, |(_, bn)| norm < *bn) {
                best = Some((x, norm));
            }
        }
    }

    match best {
        Some((x, _)) => Ok(Some(x)),
        // far from feasible from every start: treat the intersection as empty
        None if least_infeasible > 1e-3 => Ok(None),
        None => Err(Error::NoConvergence {
            what: "min-norm point",
            residual: least_infeasible,
            iterations: starts.len(),
        }),
    }
}

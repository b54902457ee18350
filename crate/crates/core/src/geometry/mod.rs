//! Dense linear algebra and projection primitives.
//!
//! Everything here is desk-scale (n ≤ 16): matrices are dense, eigenvalue
//! decompositions are exact, and projections favor exactness over speed.
//! Exact active sets matter downstream — the orthant and polyhedral
//! projections produce exact zeros on tight constraints, and the ball
//! projection produces exactly unit-norm points — because identification
//! statistics test set membership literally.

mod minnorm;
mod qp;

pub use minnorm::min_norm_point;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Tolerance for classifying a constraint as active at an iterate.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Relative eigenvalue cutoff below which the pseudo-inverse treats a
/// direction as null. Scale-invariant and far below problem conditioning at
/// desk scale.
pub const RANK_REL_TOL: f64 = 1e-10;

fn ensure_finite_matrix(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_finite_vector(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Moore-Penrose inverse of a symmetric matrix via eigendecomposition.
///
/// Eigenvalues with |λ| ≤ [`RANK_REL_TOL`] · max|λ| are annihilated. The
/// input must be symmetric up to 1e-12 (it is symmetrized before
/// factorization).
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite_matrix(m, "pseudo_inverse")?;
    if m.nrows() != m.ncols() {
        return Err(Error::Invalid(format!(
            "pseudo_inverse expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Invalid(format!(
            "pseudo_inverse expects a symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cutoff = RANK_REL_TOL * max_abs;
    let inv_diag =
        DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| {
                if l.abs() <= cutoff {
                    0.0
                } else {
                    1.0 / l
                }
            }),
        );
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&inv_diag) * q.transpose();
    // symmetrize away factorization round-off
    out = (&out + out.transpose()) * 0.5;
    Ok(out)
}

/// Orthogonal projector onto {v : Gᵀv = 0}, for G an n×l matrix whose
/// columns are constraint gradients: Π = I − G (GᵀG)† Gᵀ.
///
/// An empty G (l = 0) yields the identity.
pub fn tangent_projector(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite_matrix(g, "tangent_projector")?;
    let n = g.nrows();
    if g.ncols() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let gram = g.transpose() * g;
    let pinv = pseudo_inverse(&gram)?;
    let mut p = DMatrix::identity(n, n) - g * pinv * g.transpose();
    p = (&p + p.transpose()) * 0.5;
    Ok(p)
}

/// A smooth convex constraint f(x) ≤ 0 given by value, gradient, and Hessian
/// oracles.
#[derive(Clone)]
pub struct SmoothConstraint {
    pub value: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    pub hessian: Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
}

impl std::fmt::Debug for SmoothConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SmoothConstraint {..}")
    }
}

/// A closed convex constraint set X = {x : f_i(x) ≤ 0}.
///
/// The tagged closed-form families admit exact projections; the polyhedron
/// uses a small dense active-set QP and the smooth family an active-set
/// sequential projection.
#[derive(Clone, Debug)]
pub enum ConvexSet {
    WholeSpace { dim: usize },
    NonnegativeOrthant { dim: usize },
    Ball { center: DVector<f64>, radius: f64 },
    /// {x : Ax ≤ b}
    Polyhedron { a: DMatrix<f64>, b: DVector<f64> },
    Smooth { dim: usize, constraints: Vec<SmoothConstraint> },
}

impl ConvexSet {
    pub fn whole_space(dim: usize) -> Self {
        ConvexSet::WholeSpace { dim }
    }

    pub fn nonnegative_orthant(dim: usize) -> Self {
        ConvexSet::NonnegativeOrthant { dim }
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        ensure_finite_vector(&center, "ball center")?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    /// Unit ball at the origin, the constraint written as ½(‖x‖² − 1) ≤ 0 so
    /// that its multiplier convention matches the Lagrangian
    /// −e₁ᵀx + (λ/2)(‖x‖² − 1).
    pub fn unit_ball(dim: usize) -> Self {
        ConvexSet::Ball { center: DVector::zeros(dim), radius: 1.0 }
    }

    /// {x : Ax ≤ b}; rejects zero rows and infeasible systems.
    pub fn polyhedron(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        ensure_finite_matrix(&a, "polyhedron matrix")?;
        ensure_finite_vector(&b, "polyhedron rhs")?;
        if a.nrows() != b.len() {
            return Err(Error::Invalid(format!(
                "polyhedron has {} rows but rhs of length {}",
                a.nrows(),
                b.len()
            )));
        }
        for i in 0..a.nrows() {
            if a.row(i).amax() == 0.0 {
                return Err(Error::Invalid(format!("polyhedron row {i} is zero")));
            }
        }
        // feasibility probe: projecting the origin either succeeds or proves
        // the system empty
        qp::project_polyhedron(&DVector::zeros(a.ncols()), &a, &b)?;
        Ok(ConvexSet::Polyhedron { a, b })
    }

    /// Smooth constraint family; convexity is the caller's contract and is
    /// spot-checked by sampling Hessians for positive semidefiniteness.
    pub fn smooth(dim: usize, constraints: Vec<SmoothConstraint>) -> Result<Self> {
        let set = ConvexSet::Smooth { dim, constraints };
        let mut rng = crate::rng::SplitMix64::new(0x5107_7E57);
        let mut probe = DVector::zeros(dim);
        for trial in 0..5 {
            if trial > 0 {
                let mut buf = vec![0.0; dim];
                rng.fill_standard_normal(&mut buf);
                probe = DVector::from_vec(buf);
            }
            for i in 0..set.num_constraints() {
                let h = set.constraint_hessian(i, &probe);
                let min_eig = h
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(f64::INFINITY, |a, &l| a.min(l));
                if min_eig < -1e-8 * h.amax().max(1.0) {
                    return Err(Error::Invalid(format!(
                        "smooth constraint {i} has an indefinite Hessian (min eig {min_eig:.3e})"
                    )));
                }
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::WholeSpace { dim }
            | ConvexSet::NonnegativeOrthant { dim }
            | ConvexSet::Smooth { dim, .. } => *dim,
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Polyhedron { a, .. } => a.ncols(),
        }
    }

    pub fn num_constraints(&self) -> usize {
        match self {
            ConvexSet::WholeSpace { .. } => 0,
            ConvexSet::NonnegativeOrthant { dim } => *dim,
            ConvexSet::Ball { .. } => 1,
            ConvexSet::Polyhedron { a, .. } => a.nrows(),
            ConvexSet::Smooth { constraints, .. } => constraints.len(),
        }
    }

    /// f_i(x) for constraint index i.
    pub fn constraint_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::WholeSpace { .. } => panic!("whole space has no constraints"),
            ConvexSet::NonnegativeOrthant { .. } => -x[i],
            ConvexSet::Ball { center, radius } => {
                let d = x - center;
                0.5 * (d.norm_squared() - radius * radius)
            }
            ConvexSet::Polyhedron { a, b } => a.row(i).dot(&x.transpose()) - b[i],
            ConvexSet::Smooth { constraints, .. } => (constraints[i].value)(x),
        }
    }

    pub fn constraint_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexSet::WholeSpace { .. } => panic!("whole space has no constraints"),
            ConvexSet::NonnegativeOrthant { dim } => {
                let mut g = DVector::zeros(*dim);
                g[i] = -1.0;
                g
            }
            ConvexSet::Ball { center, .. } => x - center,
            ConvexSet::Polyhedron { a, .. } => a.row(i).transpose(),
            ConvexSet::Smooth { constraints, .. } => (constraints[i].gradient)(x),
        }
    }

    pub fn constraint_hessian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            ConvexSet::WholeSpace { .. } => panic!("whole space has no constraints"),
            ConvexSet::NonnegativeOrthant { .. } | ConvexSet::Polyhedron { .. } => {
                DMatrix::zeros(n, n)
            }
            ConvexSet::Ball { .. } => DMatrix::identity(n, n),
            ConvexSet::Smooth { constraints, .. } => (constraints[i].hessian)(x),
        }
    }

    pub fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.num_constraints(),
            (0..self.num_constraints()).map(|i| self.constraint_value(i, x)),
        )
    }

    /// max_i f_i(x)⁺, zero when feasible.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.num_constraints())
            .map(|i| self.constraint_value(i, x).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Indices with |f_i(x)| ≤ tol.
    pub fn active_set(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        (0..self.num_constraints())
            .filter(|&i| self.constraint_value(i, x).abs() <= tol)
            .collect()
    }

    /// Active set as a bitmask (requires ≤ 32 constraints).
    pub fn active_mask(&self, x: &DVector<f64>, tol: f64) -> u32 {
        debug_assert!(self.num_constraints() <= 32);
        let mut mask = 0u32;
        for i in 0..self.num_constraints() {
            if self.constraint_value(i, x).abs() <= tol {
                mask |= 1 << i;
            }
        }
        mask
    }

    /// Euclidean projection onto the set.
    ///
    /// Closed form for the whole space, orthant, and ball; dense active-set
    /// QP for polyhedra; active-set sequential projection for the smooth
    /// family (inner tolerance 1e-10, at most 10⁴ inner steps).
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free projection for the closed-form variants; the QP and
    /// smooth paths allocate internally.
    pub fn project_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        ensure_finite_vector(x, "project_onto_set input")?;
        match self {
            ConvexSet::WholeSpace { .. } => out.copy_from(x),
            ConvexSet::NonnegativeOrthant { .. } => {
                for i in 0..x.len() {
                    out[i] = x[i].max(0.0);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let mut dist_sq = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - center[i];
                    dist_sq += d * d;
                }
                let dist = dist_sq.sqrt();
                if dist <= *radius {
                    out.copy_from(x);
                } else {
                    let scale = radius / dist;
                    for i in 0..x.len() {
                        out[i] = center[i] + (x[i] - center[i]) * scale;
                    }
                }
            }
            ConvexSet::Polyhedron { a, b } => {
                let sol = qp::project_polyhedron(x, a, b)?;
                out.copy_from(&sol.point);
            }
            ConvexSet::Smooth { constraints, .. } => {
                let y = project_smooth(x, self, constraints.len())?;
                out.copy_from(&y);
            }
        }
        Ok(())
    }
}

/// Active-set sequential projection onto a smooth convex set.
///
/// Alternates equality-constrained Gauss-Newton projections onto the current
/// working set with multiplier sign checks (drop) and violation checks (add),
/// Bland-style lowest-index tie-breaking on both.
fn project_smooth(x: &DVector<f64>, set: &ConvexSet, m: usize) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-10;
    if set.max_violation(x) <= TOL {
        return Ok(x.clone());
    }
    let mut working: Vec<usize> = Vec::new();
    let mut y = x.clone();
    // seed the working set with the violated constraints at x
    for i in 0..m {
        if set.constraint_value(i, x) > TOL {
            working.push(i);
        }
    }
    for _ in 0..10_000 {
        let manifold = Manifold::from_active_set(set, working.clone());
        let (cand, mu) = project_onto_manifold_anchored(x, &y, &manifold)?;
        y = cand;
        // drop the lowest-index constraint pushing the wrong way
        if let Some(pos) = (0..working.len()).find(|&j| mu[j] < -1e-9) {
            working.remove(pos);
            continue;
        }
        // add the lowest-index violated constraint
        let violated = (0..m)
            .find(|i| !working.contains(i) && set.constraint_value(*i, &y) > TOL);
        match violated {
            Some(i) => working.push(i),
            None => return Ok(y),
        }
        working.sort_unstable();
    }
    Err(Error::NoConvergence {
        what: "smooth-set projection",
        residual: set.max_violation(&y),
        iterations: 10_000,
    })
}

/// An active manifold M = {x : f_i(x) = 0, i ∈ active} carved out of a
/// constraint set.
#[derive(Clone, Debug)]
pub struct Manifold {
    set: ConvexSet,
    active: Vec<usize>,
}

impl Manifold {
    pub fn from_active_set(set: &ConvexSet, mut active: Vec<usize>) -> Self {
        active.sort_unstable();
        active.dedup();
        debug_assert!(active.iter().all(|&i| i < set.num_constraints()));
        Manifold { set: set.clone(), active }
    }

    pub fn ambient_dim(&self) -> usize {
        self.set.dim()
    }

    /// Number of stacked equations (m₀).
    pub fn codim(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// F(x) ∈ R^{m₀}, the stacked active constraints.
    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.active.len(),
            self.active.iter().map(|&i| self.set.constraint_value(i, x)),
        )
    }

    /// ∇F(x) ∈ R^{n×m₀}, column i the gradient of the i-th active constraint.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.ambient_dim();
        let mut j = DMatrix::zeros(n, self.active.len());
        for (col, &i) in self.active.iter().enumerate() {
            j.set_column(col, &self.set.constraint_gradient(i, x));
        }
        j
    }

    /// Orthogonal projector onto the tangent space T_M(x).
    pub fn tangent_projector_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        tangent_projector(&self.jacobian(x))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.value(x).amax() <= tol
    }
}

/// Euclidean projection onto the active manifold via Gauss-Newton on the KKT
/// system y = x + ∇F(y)λ, F(y) = 0.
///
/// Converges inside the basin where ∇F has full column rank; ties (non-unique
/// projections) are broken by starting the iteration at x. Returns a point
/// with ‖F‖ ≤ 1e-10 or an error carrying the last residual.
pub fn project_onto_manifold(x: &DVector<f64>, manifold: &Manifold) -> Result<DVector<f64>> {
    Ok(project_onto_manifold_anchored(x, x, manifold)?.0)
}

/// Gauss-Newton projection of `anchor` onto the manifold, iterating from
/// `start`; returns the projected point and the KKT multipliers λ with
/// y − anchor = −∇F(y)λ.
pub(crate) fn project_onto_manifold_anchored(
    anchor: &DVector<f64>,
    start: &DVector<f64>,
    manifold: &Manifold,
) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_finite_vector(anchor, "project_onto_manifold input")?;
    if manifold.codim() == 0 {
        return Ok((anchor.clone(), DVector::zeros(0)));
    }
    let mut y = start.clone();
    let mut residual = f64::INFINITY;
    for it in 0..100 {
        let f = manifold.value(&y);
        let g = manifold.jacobian(&y);
        residual = f.amax();
        // full-column-rank guard: smallest singular value of ∇F
        let gram = g.transpose() * &g;
        let min_eig = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &l| a.min(l));
        if min_eig.max(0.0).sqrt() <= 1e-8 {
            return Err(Error::NoConvergence {
                what: "manifold projection (rank-deficient gradients)",
                residual,
                iterations: it,
            });
        }
        let rhs = &f + g.transpose() * (anchor - &y);
        let w = pseudo_inverse(&gram)? * rhs;
        let y_next = anchor - &g * &w;
        let step = (&y_next - &y).norm();
        y = y_next;
        if residual <= 1e-10 && step <= 1e-10 * (1.0 + y.norm()) {
            let gram_y = {
                let gy = manifold.jacobian(&y);
                (gy.transpose() * &gy, gy)
            };
            let mu = pseudo_inverse(&gram_y.0)? * gram_y.1.transpose() * (anchor - &y);
            return Ok((y, mu));
        }
    }
    Err(Error::NoConvergence { what: "manifold projection", residual, iterations: 100 })
}

/// Euclidean projection onto a convex set (free-function form of
/// [`ConvexSet::project`]).
pub fn project_onto_set(x: &DVector<f64>, set: &ConvexSet) -> Result<DVector<f64>> {
    set.project(x)
}

//! Stochastic program definitions and KKT ground truth.
//!
//! A [`StochasticProgram`] packages a per-sample gradient oracle, a seeded
//! sample generator, exact population oracles (value, gradient, Hessian), a
//! gradient-covariance oracle, and a constraint set. The three study
//! instances — constrained least squares, the linear-objective ball
//! problem, and the scalar half-line example — are built here with exact
//! closed forms; [`solve_kkt_ground_truth`] recovers the optimum, the
//! multipliers, the Lagrangian Hessian, the tangent projector, and the
//! gradient covariance that every covariance prediction consumes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::geometry::{pseudo_inverse, tangent_projector, ConvexSet};
use crate::rng::SplitMix64;
use crate::{Error, Result};

type Sampler = Arc<dyn Fn(&mut SplitMix64, &mut [f64]) + Send + Sync>;
type GradOracle = Arc<dyn Fn(&DVector<f64>, &[f64], &mut DVector<f64>) + Send + Sync>;
type ValueOracle = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VecOracle = Arc<dyn Fn(&DVector<f64>, &mut DVector<f64>) + Send + Sync>;
type MatOracle = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum SigmaOracle {
    /// Exact covariance of the stochastic gradient at a point.
    ClosedForm(MatOracle),
    /// Monte Carlo with a declared sample budget.
    MonteCarlo { samples: usize },
}

/// A smooth stochastic convex program min E[ℓ(x; S)] over a constraint set.
#[derive(Clone)]
pub struct StochasticProgram {
    name: String,
    dim: usize,
    set: ConvexSet,
    sample_dim: usize,
    sampler: Sampler,
    grad_loss: GradOracle,
    pop_value: ValueOracle,
    pop_grad: VecOracle,
    pop_hess: MatOracle,
    sigma: SigmaOracle,
    deterministic: bool,
}

impl std::fmt::Debug for StochasticProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticProgram")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("deterministic", &self.deterministic)
            .finish()
    }
}

impl StochasticProgram {
    /// Assemble a program from raw oracles. The named constructors below are
    /// the usual entry points; this exists for custom instances.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: impl Into<String>,
        set: ConvexSet,
        sample_dim: usize,
        sampler: Sampler,
        grad_loss: GradOracle,
        pop_value: ValueOracle,
        pop_grad: VecOracle,
        pop_hess: MatOracle,
    ) -> Self {
        StochasticProgram {
            name: name.into(),
            dim: set.dim(),
            set,
            sample_dim,
            sampler,
            grad_loss,
            pop_value,
            pop_grad,
            pop_hess,
            sigma: SigmaOracle::MonteCarlo { samples: 1_000_000 },
            deterministic: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraint_set(&self) -> &ConvexSet {
        &self.set
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    /// Replace the gradient oracle by the exact population gradient
    /// (the noiseless variant of the same program).
    pub fn with_deterministic_gradients(mut self) -> Self {
        self.deterministic = true;
        self.name.push_str("-noiseless");
        self
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    fn with_closed_form_sigma(mut self, sigma: MatOracle) -> Self {
        self.sigma = SigmaOracle::ClosedForm(sigma);
        self
    }

    /// Force the Monte Carlo covariance path with the given budget.
    pub fn with_monte_carlo_sigma(mut self, samples: usize) -> Self {
        self.sigma = SigmaOracle::MonteCarlo { samples };
        self
    }

    pub fn draw_sample_into(&self, rng: &mut SplitMix64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.sample_dim);
        (self.sampler)(rng, out);
    }

    /// ∇ℓ(x; s) for an explicit sample.
    pub fn gradient_at(&self, x: &DVector<f64>, sample: &[f64], out: &mut DVector<f64>) {
        (self.grad_loss)(x, sample, out);
    }

    /// Draw a sample from `rng` and evaluate the stochastic gradient at x
    /// (or the population gradient for a noiseless program).
    pub fn stochastic_gradient_into(
        &self,
        x: &DVector<f64>,
        rng: &mut SplitMix64,
        sample_buf: &mut [f64],
        out: &mut DVector<f64>,
    ) {
        if self.deterministic {
            (self.pop_grad)(x, out);
        } else {
            (self.sampler)(rng, sample_buf);
            (self.grad_loss)(x, sample_buf, out);
        }
    }

    pub fn population_value(&self, x: &DVector<f64>) -> f64 {
        (self.pop_value)(x)
    }

    pub fn population_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        (self.pop_grad)(x, &mut g);
        g
    }

    pub fn population_gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        (self.pop_grad)(x, out);
    }

    pub fn population_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.pop_hess)(x)
    }

    /// cov(∇ℓ(x; S)): closed form when available, otherwise Monte Carlo with
    /// the declared budget seeded by `seed`.
    pub fn gradient_covariance_at(&self, x: &DVector<f64>, seed: u64) -> DMatrix<f64> {
        match &self.sigma {
            SigmaOracle::ClosedForm(f) => f(x),
            SigmaOracle::MonteCarlo { samples } => {
                self.monte_carlo_covariance(x, *samples, seed)
            }
        }
    }

    /// Sample covariance of the stochastic gradient at x.
    pub fn monte_carlo_covariance(&self, x: &DVector<f64>, samples: usize, seed: u64) -> DMatrix<f64> {
        let n = self.dim;
        let mut rng = SplitMix64::new(seed);
        let mut sbuf = vec![0.0; self.sample_dim];
        let mut g = DVector::zeros(n);
        let mut mean = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        for _ in 0..samples {
            (self.sampler)(&mut rng, &mut sbuf);
            (self.grad_loss)(x, &sbuf, &mut g);
            mean += &g;
            second.syger(1.0, &g, &g, 1.0);
        }
        let t = samples as f64;
        mean /= t;
        let mut cov = second / t;
        cov.syger(-1.0, &mean, &mean, 1.0);
        // syger fills the lower triangle; mirror it
        for i in 0..n {
            for j in (i + 1)..n {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        cov
    }

    /// Monte Carlo check that E[∇ℓ(x; S)] = ∇f(x) at the given points,
    /// componentwise within 3 standard errors.
    pub fn check_gradient_unbiasedness(
        &self,
        points: &[DVector<f64>],
        samples: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = SplitMix64::new(seed);
        let mut sbuf = vec![0.0; self.sample_dim];
        let mut g = DVector::zeros(self.dim);
        for x in points {
            let mut mean = DVector::<f64>::zeros(self.dim);
            let mut sq = DVector::<f64>::zeros(self.dim);
            for _ in 0..samples {
                (self.sampler)(&mut rng, &mut sbuf);
                (self.grad_loss)(x, &sbuf, &mut g);
                for i in 0..self.dim {
                    mean[i] += g[i];
                    sq[i] += g[i] * g[i];
                }
            }
            let t = samples as f64;
            let pop = self.population_gradient(x);
            for i in 0..self.dim {
                let m = mean[i] / t;
                let var = (sq[i] / t - m * m).max(0.0);
                let se = (var / t).sqrt();
                if (m - pop[i]).abs() > 3.0 * se + 1e-12 {
                    return Err(Error::Invalid(format!(
                        "gradient bias at component {i}: sample mean {m:.6} vs population {:.6} (3 SE = {:.2e})",
                        pop[i],
                        3.0 * se
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Least squares ℓ(x; (a, b)) = ½(⟨a, x⟩ − b)² with isotropic Gaussian
/// design a ~ N(0, I) and targets b = ⟨a, x_true⟩ + ε, ε ~ N(0, noise_sd²).
///
/// Sample layout: [a₁, …, a_n, b]. Population oracles are exact for the
/// identity design: f(x) = ½‖x − x_true‖² + ½noise_sd², and
/// cov(∇ℓ(x)) = ddᵀ + (‖d‖² + noise_sd²)·I with d = x − x_true, by the
/// Gaussian fourth-moment identity E[aaᵀMaaᵀ] = 2M + tr(M)I.
pub fn make_least_squares(
    x_true: DVector<f64>,
    noise_sd: f64,
    set: ConvexSet,
) -> Result<StochasticProgram> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Invalid(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    let n = x_true.len();
    if set.dim() != n {
        return Err(Error::Invalid(format!(
            "constraint set dimension {} does not match x_true length {n}",
            set.dim()
        )));
    }
    let xt = Arc::new(x_true);
    let sd = noise_sd;

    let sampler: Sampler = {
        let xt = Arc::clone(&xt);
        Arc::new(move |rng, out| {
            rng.fill_standard_normal(out);
            let mut b = sd * out[n];
            for i in 0..n {
                b += out[i] * xt[i];
            }
            out[n] = b;
        })
    };
    let grad_loss: GradOracle = Arc::new(move |x, s, out| {
        let mut dot = -s[n];
        for i in 0..x.len() {
            dot += s[i] * x[i];
        }
        for i in 0..x.len() {
            out[i] = s[i] * dot;
        }
    });
    let pop_value: ValueOracle = {
        let xt = Arc::clone(&xt);
        Arc::new(move |x| 0.5 * (x - &*xt).norm_squared() + 0.5 * sd * sd)
    };
    let pop_grad: VecOracle = {
        let xt = Arc::clone(&xt);
        Arc::new(move |x, out| {
            for i in 0..x.len() {
                out[i] = x[i] - xt[i];
            }
        })
    };
    let pop_hess: MatOracle = Arc::new(move |x| DMatrix::identity(x.len(), x.len()));
    let sigma: MatOracle = {
        let xt = Arc::clone(&xt);
        Arc::new(move |x| {
            let d = x - &*xt;
            let mut m = DMatrix::identity(x.len(), x.len()) * (d.norm_squared() + sd * sd);
            m.syger(1.0, &d, &d, 1.0);
            for i in 0..x.len() {
                for j in (i + 1)..x.len() {
                    m[(i, j)] = m[(j, i)];
                }
            }
            m
        })
    };

    Ok(StochasticProgram::from_parts(
        "least-squares",
        set,
        n + 1,
        sampler,
        grad_loss,
        pop_value,
        pop_grad,
        pop_hess,
    )
    .with_closed_form_sigma(sigma))
}

/// The linear-objective ball problem: ℓ(x; s) = −(e₁ + s)ᵀx with
/// s ~ N(0, I) over the unit ball {‖x‖² ≤ 1}; the optimum is e₁ with
/// multiplier 1 under the ½(‖x‖² − 1) constraint convention.
pub fn make_ball_linear(n: usize) -> Result<StochasticProgram> {
    if n < 2 {
        return Err(Error::Invalid(format!("ball-linear needs dimension >= 2, got {n}")));
    }
    let sampler: Sampler = Arc::new(move |rng, out| rng.fill_standard_normal(out));
    let grad_loss: GradOracle = Arc::new(move |_x, s, out| {
        for i in 0..out.len() {
            out[i] = -s[i];
        }
        out[0] -= 1.0;
    });
    let pop_value: ValueOracle = Arc::new(|x| -x[0]);
    let pop_grad: VecOracle = Arc::new(|x, out| {
        out.fill(0.0);
        let _ = x;
        out[0] = -1.0;
    });
    let pop_hess: MatOracle = Arc::new(|x| DMatrix::zeros(x.len(), x.len()));
    let sigma: MatOracle = Arc::new(|x| DMatrix::identity(x.len(), x.len()));

    Ok(StochasticProgram::from_parts(
        "ball-linear",
        ConvexSet::unit_ball(n),
        n,
        sampler,
        grad_loss,
        pop_value,
        pop_grad,
        pop_hess,
    )
    .with_closed_form_sigma(sigma))
}

/// The scalar example f(x) = x on X = [−1, 1] with gradients g = 1 + w,
/// w ~ N(0, 1); the optimum is −1 and projected SGD keeps jumping off it.
pub fn make_halfline_example() -> Result<StochasticProgram> {
    let set = ConvexSet::polyhedron(
        DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
        DVector::from_vec(vec![1.0, 1.0]),
    )?;
    let sampler: Sampler = Arc::new(|rng, out| rng.fill_standard_normal(out));
    let grad_loss: GradOracle = Arc::new(|_x, s, out| {
        out[0] = 1.0 + s[0];
    });
    let pop_value: ValueOracle = Arc::new(|x| x[0]);
    let pop_grad: VecOracle = Arc::new(|_x, out| {
        out[0] = 1.0;
    });
    let pop_hess: MatOracle = Arc::new(|_x| DMatrix::zeros(1, 1));
    let sigma: MatOracle = Arc::new(|_x| DMatrix::identity(1, 1));

    Ok(StochasticProgram::from_parts(
        "half-line",
        set,
        1,
        sampler,
        grad_loss,
        pop_value,
        pop_grad,
        pop_hess,
    )
    .with_closed_form_sigma(sigma))
}

/// Ground truth at the optimum: x⋆, strictly positive multipliers on the
/// active set, the Lagrangian Hessian H⋆, the tangent projector Π_T, and the
/// gradient covariance Σ.
#[derive(Clone, Debug)]
pub struct KktSolution {
    pub x_star: DVector<f64>,
    /// λ⋆ aligned with `active`.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub h_star: DMatrix<f64>,
    pub pi_t: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Active-set classification tolerance on |f_i(x⋆)|; ground-truth solves are
/// deterministic and converge far below this.
pub const ACTIVE_CLASSIFICATION_TOL: f64 = 1e-8;

const KKT_SIGMA_SEED: u64 = 0x5163_0A0A_11CE_0001;

/// Deterministic projected gradient on a population (or empirical) gradient
/// oracle, to fixed-point residual `tol`.
pub(crate) fn projected_gradient_minimize(
    set: &ConvexSet,
    mut grad: impl FnMut(&DVector<f64>, &mut DVector<f64>),
    lipschitz_hint: f64,
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    what: &'static str,
) -> Result<DVector<f64>> {
    let mut eta = if lipschitz_hint > 0.0 { 1.0 / lipschitz_hint } else { 1.0 };
    let mut x = set.project(start)?;
    let mut g = DVector::zeros(x.len());
    let mut next = DVector::zeros(x.len());
    let mut restarts = 0;
    let start_norm = x.norm();
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        grad(&x, &mut g);
        set.project_into(&(&x - eta * &g), &mut next)?;
        let step = (&next - &x).norm();
        residual = step / eta;
        x.copy_from(&next);
        if step <= tol * eta * (1.0 + g.norm()) || step <= 1e-15 * (1.0 + x.norm()) {
            return Ok(x);
        }
        // divergence guard: a bad Lipschitz hint shows up as norm blow-up
        if it % 64 == 0 && x.norm() > 1e6 * (1.0 + start_norm) {
            if restarts >= 8 {
                break;
            }
            restarts += 1;
            eta *= 0.25;
            x = set.project(start)?;
        }
    }
    Err(Error::NoConvergence { what, residual, iterations: max_iter })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &l| a.max(l.abs()))
}

/// Solve for the KKT ground truth of a program with exact population
/// oracles.
///
/// x⋆ comes from a deterministic projected-gradient solve to 1e-10, λ⋆ from
/// least squares on the active constraint gradients, and Σ from the closed
/// form when the program carries one (Monte Carlo otherwise). A multiplier at
/// numerical zero is a hard error: the problem then violates strict
/// complementarity and sits outside every covariance prediction made here.
pub fn solve_kkt_ground_truth(p: &StochasticProgram) -> Result<KktSolution> {
    let n = p.dim();
    let set = p.constraint_set();
    let lipschitz = spectral_norm(&p.population_hessian(&DVector::zeros(n)));
    let x_star = projected_gradient_minimize(
        set,
        |x, out| p.population_gradient_into(x, out),
        lipschitz,
        &DVector::zeros(n),
        1e-10,
        1_000_000,
        "ground-truth projected gradient",
    )?;

    let active = set.active_set(&x_star, ACTIVE_CLASSIFICATION_TOL);
    let grad = p.population_gradient(&x_star);

    let mut jac = DMatrix::zeros(n, active.len());
    for (col, &i) in active.iter().enumerate() {
        jac.set_column(col, &set.constraint_gradient(i, &x_star));
    }

    let multipliers = if active.is_empty() {
        if grad.norm() > 1e-8 {
            return Err(Error::Invalid(format!(
                "interior point is not stationary: ‖∇f(x⋆)‖ = {:.3e}",
                grad.norm()
            )));
        }
        DVector::zeros(0)
    } else {
        let gram = jac.transpose() * &jac;
        let lambda = -(pseudo_inverse(&gram)? * jac.transpose() * &grad);
        let residual = (&grad + &jac * &lambda).norm();
        if residual > 1e-8 {
            return Err(Error::Invalid(format!(
                "KKT stationarity residual {residual:.3e} exceeds 1e-8"
            )));
        }
        for (j, &l) in lambda.iter().enumerate() {
            if l <= ACTIVE_CLASSIFICATION_TOL {
                return Err(Error::StrictComplementarity { index: active[j], value: l });
            }
        }
        lambda
    };

    // inactive constraints must be strictly slack
    for i in 0..set.num_constraints() {
        if !active.contains(&i) && set.constraint_value(i, &x_star) >= 0.0 {
            return Err(Error::Invalid(format!(
                "constraint {i} is neither classified active nor strictly slack"
            )));
        }
    }

    let mut h_star = p.population_hessian(&x_star);
    for (j, &i) in active.iter().enumerate() {
        h_star += multipliers[j] * set.constraint_hessian(i, &x_star);
    }
    h_star = (&h_star + h_star.transpose()) * 0.5;

    let pi_t = tangent_projector(&jac)?;

    // restricted strong convexity spot check: the Hessian of the Lagrangian
    // must be positive definite on the tangent space
    let tangent_dim = {
        let eigs = pi_t.clone().symmetric_eigen().eigenvalues;
        eigs.iter().filter(|&&l| l > 0.5).count()
    };
    if tangent_dim > 0 {
        let restricted = &pi_t * &h_star * &pi_t;
        let mut eigs: Vec<f64> = restricted.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mu = eigs[tangent_dim - 1];
        if mu <= 1e-10 {
            return Err(Error::Invalid(format!(
                "restricted strong convexity fails: tangent curvature {mu:.3e}"
            )));
        }
    }

    let sigma = p.gradient_covariance_at(&x_star, KKT_SIGMA_SEED);

    Ok(KktSolution { x_star, multipliers, active, h_star, pi_t, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    pub(crate) fn nnls_program() -> StochasticProgram {
        make_least_squares(vec2(1.0, -1.0), 1.0, ConvexSet::nonnegative_orthant(2)).unwrap()
    }

    pub(crate) fn ridge_program() -> StochasticProgram {
        make_least_squares(vec2(1.0, 1.0), 1.0, ConvexSet::unit_ball(2)).unwrap()
    }

    #[test]
    fn nnls_ground_truth() {
        let kkt = solve_kkt_ground_truth(&nnls_program()).unwrap();
        assert_abs_diff_eq!(kkt.x_star[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.x_star[1], 0.0, epsilon = 1e-9);
        assert_eq!(kkt.active, vec![1]);
        assert!((kkt.h_star.clone() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-9);
        let pi = DMatrix::from_diagonal(&vec2(1.0, 0.0));
        assert!((kkt.pi_t.clone() - pi).amax() < 1e-9);
        // Σ = ddᵀ + (‖d‖² + σ²)I with d = (0, 1): diag(2, 3)
        assert_abs_diff_eq!(kkt.sigma[(0, 0)], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.sigma[(1, 1)], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.sigma[(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn nnls_sigma_matches_monte_carlo() {
        // cross-check the fourth-moment closed form against sampling
        let p = nnls_program();
        let kkt = solve_kkt_ground_truth(&p).unwrap();
        let mc = p.monte_carlo_covariance(&kkt.x_star, 1_000_000, 77);
        // entrywise 3 SE; gradient entries here have fourth moments ~ 30, so
        // SE of a covariance entry at 10⁶ samples is below 0.01
        assert!((mc - &kkt.sigma).amax() < 0.03, "closed form vs Monte Carlo");
    }

    #[test]
    fn ridge_ground_truth() {
        let kkt = solve_kkt_ground_truth(&ridge_program()).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(kkt.x_star[0], s, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.x_star[1], s, epsilon = 1e-9);
        assert_eq!(kkt.active, vec![0]);
        assert_abs_diff_eq!(kkt.multipliers[0], 2.0f64.sqrt() - 1.0, epsilon = 1e-9);
        let expected_h = DMatrix::<f64>::identity(2, 2) * 2.0f64.sqrt();
        assert!((kkt.h_star.clone() - expected_h).amax() < 1e-9);
        // Π_T projects onto span{(1, −1)}
        let v = vec2(s, -s);
        assert!((&kkt.pi_t * &v - &v).amax() < 1e-9);
        assert!((&kkt.pi_t * &kkt.x_star).amax() < 1e-9);
    }

    #[test]
    fn unconstrained_least_squares_recovers_target() {
        let p = make_least_squares(vec2(0.0, 0.0), 1.0, ConvexSet::whole_space(2)).unwrap();
        let kkt = solve_kkt_ground_truth(&p).unwrap();
        assert!(kkt.x_star.amax() < 1e-9);
        assert!(kkt.active.is_empty());
    }

    #[test]
    fn ball_linear_ground_truth() {
        let p = make_ball_linear(2).unwrap();
        let kkt = solve_kkt_ground_truth(&p).unwrap();
        assert_abs_diff_eq!(kkt.x_star[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.x_star[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kkt.multipliers[0], 1.0, epsilon = 1e-9);
        assert!((kkt.h_star.clone() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-9);
        let pi = DMatrix::from_diagonal(&vec2(0.0, 1.0));
        assert!((kkt.pi_t.clone() - pi).amax() < 1e-9);
        assert!((kkt.sigma.clone() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn ball_linear_sigma_is_identity_in_three_dims() {
        let p = make_ball_linear(3).unwrap();
        let sigma = p.gradient_covariance_at(&DVector::from_vec(vec![1.0, 0.0, 0.0]), 5);
        assert!((sigma - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn ball_linear_noiseless_gradient_is_constant() {
        let p = make_ball_linear(2).unwrap().with_deterministic_gradients();
        let mut rng = SplitMix64::new(3);
        let mut sbuf = vec![0.0; p.sample_dim()];
        let mut g = DVector::zeros(2);
        p.stochastic_gradient_into(&vec2(0.3, -0.2), &mut rng, &mut sbuf, &mut g);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn halfline_ground_truth_and_projection_formula() {
        let p = make_halfline_example().unwrap();
        let kkt = solve_kkt_ground_truth(&p).unwrap();
        assert_abs_diff_eq!(kkt.x_star[0], -1.0, epsilon = 1e-12);
        assert_eq!(p.population_gradient(&DVector::from_vec(vec![0.3]))[0], 1.0);

        // SGD one step from -1 with noise w: max(-1, min(1, -1 - α(1 + w)))
        let set = p.constraint_set();
        for &(alpha, w) in &[(0.5, -3.0), (0.5, 0.7), (1.0, -0.2)] {
            let stepped = DVector::from_vec(vec![-1.0 - alpha * (1.0 + w)]);
            let proj = set.project(&stepped).unwrap();
            let expected = (-1.0f64 - alpha * (1.0 + w)).clamp(-1.0, 1.0);
            assert_abs_diff_eq!(proj[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_multiplier_is_rejected() {
        // x_true on the boundary face: λ⋆ = 0 on x₂ ≥ 0 by symmetry
        let p = make_least_squares(vec2(1.0, 0.0), 1.0, ConvexSet::nonnegative_orthant(2)).unwrap();
        match solve_kkt_ground_truth(&p) {
            Err(Error::StrictComplementarity { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected strict-complementarity error, got {other:?}"),
        }
    }

    #[test]
    fn stochastic_gradients_are_unbiased() {
        let points = vec![vec2(0.0, 0.0), vec2(1.0, 0.0), vec2(-0.3, 0.8)];
        for p in [nnls_program(), ridge_program(), make_ball_linear(2).unwrap()] {
            p.check_gradient_unbiasedness(&points, 100_000, 11).unwrap();
        }
        let hl = make_halfline_example().unwrap();
        hl.check_gradient_unbiasedness(&[DVector::from_vec(vec![0.2])], 100_000, 12)
            .unwrap();
    }
}

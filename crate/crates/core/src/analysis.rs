//! Theory oracle and ensemble statistics.
//!
//! The optimal asymptotic covariance of a constrained program is
//! Γ = Π_T H⋆† Π_T Σ Π_T H⋆† Π_T: it lower-bounds every estimator locally
//! and is attained by the sample-average approximation, by the dual-averaging
//! variant under linear constraints, and by the safeguarded Riemannian
//! method under smooth ones. Dual averaging on a curved constraint is
//! slower: on the linear-objective ball problem the variant's rescaled sums
//! have covariance σ_β²(I − e₁e₁ᵀ) with σ_β² = ((1−β)²/β²)·Σ_i i^(−2β),
//! and classical dual averaging has covariance 2(I − e₁e₁ᵀ). This module
//! computes all three predictions, runs tilt-stability sensitivity checks,
//! and estimates covariances empirically from trace ensembles.

use nalgebra::{DMatrix, DVector};

use crate::geometry::pseudo_inverse;
use crate::problems::{projected_gradient_minimize, KktSolution, StochasticProgram};
use crate::solvers::SolverTrace;
use crate::{Error, Result};

/// Γ = Π_T H⋆† Π_T Σ Π_T H⋆† Π_T, the optimal asymptotic covariance.
pub fn optimal_covariance(kkt: &KktSolution) -> Result<DMatrix<f64>> {
    let h_dag = pseudo_inverse(&kkt.h_star)?;
    let b = &kkt.pi_t * h_dag * &kkt.pi_t;
    let gamma = &b * &kkt.sigma * &b;
    Ok((&gamma + gamma.transpose()) * 0.5)
}

/// Asymptotic covariance predictions for dual averaging on the
/// linear-objective ball problem.
#[derive(Clone, Debug)]
pub struct DaPredictions {
    pub beta: f64,
    /// σ_β² = ((1−β)²/β²)·Σ_{i≥1} i^(−2β) (unit stepsize scale).
    pub sigma_beta_sq: f64,
    /// Classical dual averaging's variance factor (2, independent of β).
    pub classical_factor: f64,
}

impl DaPredictions {
    /// σ_β²·(I − e₁e₁ᵀ): covariance of k^(−β)Σ_i(x_i − x⋆) for the variant.
    pub fn variant_covariance(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(dim, dim) * self.sigma_beta_sq;
        m[(0, 0)] = 0.0;
        m
    }

    /// 2·(I − e₁e₁ᵀ): covariance of k^(−1/2)Σ_i(x_i − x⋆) for classical DA.
    pub fn classical_covariance(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(dim, dim) * self.classical_factor;
        m[(0, 0)] = 0.0;
        m
    }
}

/// Evaluate σ_β² by partial summation of Σ i^(−2β) with an Euler-Maclaurin
/// integral tail, to relative error below 1e-8.
pub fn suboptimal_da_predictions(beta: f64) -> Result<DaPredictions> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::Invalid(format!("beta must lie in (1/2, 1), got {beta}")));
    }
    let s = 2.0 * beta;
    let n = 65_536usize;
    let mut sum = 0.0;
    for i in 1..=n {
        sum += (i as f64).powf(-s);
    }
    // tail: ∫_N^∞ t^(−s) dt + ½N^(−s); the next correction is O(N^(−s−1))
    let nf = n as f64;
    let tail = nf.powf(1.0 - s) / (s - 1.0) - 0.5 * nf.powf(-s);
    let zeta = sum + tail;
    let pre = (1.0 - beta) / beta;
    Ok(DaPredictions { beta, sigma_beta_sq: pre * pre * zeta, classical_factor: 2.0 })
}

/// Derivative of the solution map under a linear tilt of the objective.
///
/// Solves min f(x) − δ⟨v, x⟩ over X deterministically and returns the
/// finite-difference sensitivity (x_{δv} − x⋆)/δ, which converges to
/// Π_T H⋆† Π_T v as δ ↓ 0.
pub fn tilt_sensitivity(
    p: &StochasticProgram,
    kkt: &KktSolution,
    v: &DVector<f64>,
    delta: f64,
) -> Result<DVector<f64>> {
    if !(1e-6..=1e-2).contains(&delta) {
        return Err(Error::Invalid(format!("delta must lie in [1e-6, 1e-2], got {delta}")));
    }
    if v.len() != p.dim() {
        return Err(Error::Invalid("tilt direction has wrong dimension".into()));
    }
    let lipschitz = {
        let h = p.population_hessian(&kkt.x_star);
        let sym = (&h + h.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()))
    };
    let tilted = projected_gradient_minimize(
        p.constraint_set(),
        |x, out| {
            p.population_gradient_into(x, out);
            *out -= delta * v;
        },
        lipschitz,
        &kkt.x_star,
        1e-12,
        2_000_000,
        "tilted deterministic solve",
    )?;
    Ok((tilted - &kkt.x_star) / delta)
}

/// How the averaged-iterate deviation is rescaled before taking covariances
/// across trials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AverageScaling {
    /// √k·(x̄_k − x⋆) — the optimal-rate statistic.
    SqrtK,
    /// k^(1−β)·(x̄_k − x⋆) = k^(−β)·Σ_{i≤k}(x_i − x⋆) — the scaling under
    /// which the dual-averaging variant has a limit on curved constraints.
    StepsizePower { beta: f64 },
}

impl AverageScaling {
    pub fn exponent(&self) -> f64 {
        match self {
            AverageScaling::SqrtK => 0.5,
            AverageScaling::StepsizePower { beta } => 1.0 - beta,
        }
    }
}

/// Variance of a directional statistic with its standard error.
#[derive(Clone, Debug)]
pub struct DirectionalVariance {
    pub direction: DVector<f64>,
    pub variance: f64,
    pub std_error: f64,
    /// vᵀΓv for the supplied theoretical covariance, if any.
    pub theoretical: Option<f64>,
}

/// Empirical covariance of the rescaled averaged iterates at one grid point.
#[derive(Clone, Debug)]
pub struct CovarianceAtK {
    pub k: usize,
    pub matrix: DMatrix<f64>,
    /// Entrywise standard errors of `matrix`.
    pub std_errors: DMatrix<f64>,
    pub directional: Vec<DirectionalVariance>,
}

/// Theoretical asymptotic covariance next to its Monte Carlo estimates.
#[derive(Clone, Debug)]
pub struct CovarianceReport {
    pub theoretical: Option<DMatrix<f64>>,
    pub scaling: AverageScaling,
    pub per_k: Vec<CovarianceAtK>,
    pub trials: usize,
    pub horizon: usize,
}

/// Sample variance with its delta-method standard error
/// SE ≈ sqrt((m₄ − v²)/T).
pub fn variance_with_std_error(xs: &[f64]) -> (f64, f64) {
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / t;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= t;
    m4 /= t;
    let var = if xs.len() > 1 { m2 * t / (t - 1.0) } else { 0.0 };
    let se = ((m4 - m2 * m2).max(0.0) / t).sqrt();
    (var, se)
}

/// Sample covariance across trials of k^e·(x̄_k − x⋆) at the grid of k
/// values, with delta-method standard errors and directional variances.
///
/// Requires at least 30 traces with a common horizon. The theoretical
/// covariance, when supplied, must match the chosen scaling (Γ for the √k
/// statistic; the suboptimal predictions for the stepsize-power statistic).
pub fn empirical_covariance(
    traces: &[SolverTrace],
    x_star: &DVector<f64>,
    scaling: AverageScaling,
    grid: &[usize],
    directions: &[DVector<f64>],
    theoretical: Option<DMatrix<f64>>,
) -> Result<CovarianceReport> {
    if traces.len() < 30 {
        return Err(Error::NotEnoughTraces { got: traces.len(), need: 30 });
    }
    let horizon = traces[0].horizon();
    let dim = traces[0].dim();
    for t in traces {
        if t.horizon() != horizon {
            return Err(Error::MismatchedHorizons(horizon, t.horizon()));
        }
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || *grid.last().unwrap() > horizon
    {
        return Err(Error::Invalid(
            "covariance grid must be strictly increasing and bounded by the horizon".into(),
        ));
    }
    let exponent = scaling.exponent();

    // statistics[g][t] = rescaled deviation of trial t at grid point g
    let mut statistics: Vec<Vec<DVector<f64>>> =
        vec![Vec::with_capacity(traces.len()); grid.len()];
    for trace in traces {
        let means = trace.averaged_iterates_at(grid);
        for (g, mean) in means.into_iter().enumerate() {
            let scale = (grid[g] as f64).powf(exponent);
            statistics[g].push((mean - x_star) * scale);
        }
    }

    let t = traces.len() as f64;
    let mut per_k = Vec::with_capacity(grid.len());
    for (g, &k) in grid.iter().enumerate() {
        let ys = &statistics[g];
        let mut mean = DVector::zeros(dim);
        for y in ys {
            mean += y;
        }
        mean /= t;

        let mut cov = DMatrix::zeros(dim, dim);
        let mut se = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let prods: Vec<f64> =
                    ys.iter().map(|y| (y[i] - mean[i]) * (y[j] - mean[j])).collect();
                let m = prods.iter().sum::<f64>() / t;
                let msq = prods.iter().map(|p| p * p).sum::<f64>() / t;
                let c = m * t / (t - 1.0);
                let s = ((msq - m * m).max(0.0) / t).sqrt();
                cov[(i, j)] = c;
                cov[(j, i)] = c;
                se[(i, j)] = s;
                se[(j, i)] = s;
            }
        }

        let directional = directions
            .iter()
            .map(|v| {
                let samples: Vec<f64> = ys.iter().map(|y| v.dot(y)).collect();
                let (variance, std_error) = variance_with_std_error(&samples);
                let theoretical = theoretical.as_ref().map(|g| (v.transpose() * g * v)[(0, 0)]);
                DirectionalVariance { direction: v.clone(), variance, std_error, theoretical }
            })
            .collect();

        per_k.push(CovarianceAtK { k, matrix: cov, std_errors: se, directional });
    }

    Ok(CovarianceReport { theoretical, scaling, per_k, trials: traces.len(), horizon })
}

/// Fraction of traces whose iterate-k active set equals the target exactly,
/// for every k up to the common horizon.
pub fn identification_rate(traces: &[SolverTrace], target_active: &[usize]) -> Result<Vec<f64>> {
    if traces.is_empty() {
        return Err(Error::NotEnoughTraces { got: 0, need: 1 });
    }
    let horizon = traces[0].horizon();
    for t in traces {
        if t.horizon() != horizon {
            return Err(Error::MismatchedHorizons(horizon, t.horizon()));
        }
    }
    let mut target_mask = 0u32;
    for &i in target_active {
        target_mask |= 1 << i;
    }
    let mut rates = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let hits = traces.iter().filter(|t| t.active_mask(k) == target_mask).count();
        rates.push(hits as f64 / traces.len() as f64);
    }
    Ok(rates)
}

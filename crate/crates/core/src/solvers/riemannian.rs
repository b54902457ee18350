//! Riemannian stochastic gradient safeguarded by dual averaging.
//!
//! The solver interleaves two processes. At the sparse set of dual-averaging
//! times T^da (|T^da ∩ [k]| ≍ k^ρ) it advances a variant dual-averaging
//! state whose stepsize is reindexed by the count of DA steps taken so far
//! (α_t^da = α₀·t^(−β)). At every other step it reads the active manifold
//! off the latest DA iterate, takes a tangent-projected stochastic gradient
//! step on that manifold, projects back, and then applies a three-branch
//! safeguard that keeps the iterate inside a shrinking ball of radius
//! ε_k = (Σ_{i∈T^da, i≤k} α_i^da)^(−q) around the weighted DA average:
//! accept the projected candidate if it lands within 3ε_k, otherwise fall
//! back to a minimum-norm point of manifold ∩ X ∩ B(avg, ε_k), and failing
//! that of manifold ∩ X. Manifold projection failures never abort a run;
//! they reroute through the same fallbacks.

use std::sync::Arc;

use nalgebra::DVector;

use crate::geometry::{min_norm_point, project_onto_manifold, Manifold, ACTIVE_TOL};
use crate::problems::StochasticProgram;
use crate::rng::{step_seed, SplitMix64};
use crate::{Error, Result};

use super::{check_horizon, SolverKind, SolverTrace, StepSchedule};

/// Which update produced the transition out of iterate k.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiemannianBranch {
    /// k ∈ T^da: the dual-averaging state advanced; the main iterate held.
    DualAveraging,
    /// Same manifold as the previous manifold step; tangent step accepted.
    Manifold,
    /// Same manifold, candidate outside the 3ε ball: min-norm point in the
    /// ε safeguard ball.
    ManifoldMinNormBall,
    /// Same manifold, safeguard ball empty: global min-norm point.
    ManifoldMinNormGlobal,
    /// Same manifold, all fallbacks stalled: projected DA average.
    ManifoldFallback,
    /// Manifold changed: restart from the latest DA iterate (accepted).
    Reset,
    ResetMinNormBall,
    ResetMinNormGlobal,
    ResetFallback,
}

/// Dual-averaging time rule.
#[derive(Clone)]
pub enum DaTimesRule {
    /// T^da = {⌈j^(1/ρ)⌉ : j ∈ ℕ}, duplicates removed.
    PowerLaw,
    /// An explicit sorted list of 1-based iteration indices.
    Explicit(Arc<Vec<usize>>),
}

impl std::fmt::Debug for DaTimesRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DaTimesRule::PowerLaw => f.write_str("PowerLaw"),
            DaTimesRule::Explicit(v) => write!(f, "Explicit({} times)", v.len()),
        }
    }
}

/// Parameters of the manifold solver: the safeguard exponent q ∈ (0, 1), the
/// DA-time density exponent ρ ∈ (0, 1), and the T^da generation rule.
#[derive(Clone, Debug)]
pub struct RiemannianConfig {
    q: f64,
    rho: f64,
    times: DaTimesRule,
}

impl RiemannianConfig {
    pub fn new(q: f64, rho: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Invalid(format!("q must lie in (0, 1), got {q}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Invalid(format!("rho must lie in (0, 1), got {rho}")));
        }
        Ok(RiemannianConfig { q, rho, times: DaTimesRule::PowerLaw })
    }

    pub fn with_da_times(mut self, times: Vec<usize>) -> Self {
        self.times = DaTimesRule::Explicit(Arc::new(times));
        self
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The bound 2qρ(1−β) < 2β−1 required for the asymptotics to go
    /// through; enforced before every run.
    pub fn validate_against(&self, schedule: &StepSchedule) -> Result<()> {
        let beta = schedule.beta();
        let limit = (2.0 * beta - 1.0) / (2.0 * self.rho * (1.0 - beta));
        if self.q >= limit {
            return Err(Error::Invalid(format!(
                "q = {} too large: need q < (2β−1)/(2ρ(1−β)) = {limit:.4}",
                self.q
            )));
        }
        Ok(())
    }

    /// Whether q also satisfies q < min{(1−2β)/((1−β)ρ), 1/(2(1−ρ)β)}.
    /// The first term is negative for β ∈ (½, 1), so this is typically
    /// false; it is reported, not enforced.
    pub fn satisfies_printed_bound(&self, beta: f64) -> bool {
        let a = (1.0 - 2.0 * beta) / ((1.0 - beta) * self.rho);
        let b = 1.0 / (2.0 * (1.0 - self.rho) * beta);
        self.q < a.min(b)
    }

    /// Boolean membership table for T^da up to `horizon`, with the density
    /// check |T^da ∩ [k]| / k^ρ ∈ [½, 2] enforced for every k.
    pub fn da_mask(&self, horizon: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; horizon + 1];
        match &self.times {
            DaTimesRule::PowerLaw => {
                let mut j = 1u64;
                loop {
                    let t = (j as f64).powf(1.0 / self.rho).ceil() as usize;
                    if t > horizon {
                        break;
                    }
                    mask[t.max(1)] = true;
                    j += 1;
                }
            }
            DaTimesRule::Explicit(ts) => {
                for &t in ts.iter() {
                    if t >= 1 && t <= horizon {
                        mask[t] = true;
                    }
                }
            }
        }
        let mut count = 0usize;
        for k in 1..=horizon {
            if mask[k] {
                count += 1;
            }
            let ratio = count as f64 / (k as f64).powf(self.rho);
            if !(0.5..=2.0).contains(&ratio) {
                return Err(Error::Invalid(format!(
                    "dual-averaging times have density ratio {ratio:.3} at k = {k}, outside [1/2, 2]"
                )));
            }
        }
        Ok(mask)
    }
}

/// Per-run bookkeeping specific to the manifold solver. Transition records
/// (branch, ε_k, weighted DA average, manifold mask) exist for
/// 1 ≤ k ≤ horizon − 1.
#[derive(Clone, Debug)]
pub struct RiemannianExtras {
    dim: usize,
    /// (global iteration k, DA iterate computed at k, DA stepsize used).
    da_steps: Vec<(usize, Vec<f64>, f64)>,
    branches: Vec<RiemannianBranch>,
    eps: Vec<f64>,
    weighted_avg: Vec<f64>,
    manifold_masks: Vec<u32>,
}

impl RiemannianExtras {
    fn check_k(&self, k: usize) {
        assert!(k >= 1 && k <= self.branches.len(), "transition index {k} out of range");
    }

    pub fn branch(&self, k: usize) -> RiemannianBranch {
        self.check_k(k);
        self.branches[k - 1]
    }

    /// ε_k at transition k (infinite before the first DA step completes).
    pub fn epsilon(&self, k: usize) -> f64 {
        self.check_k(k);
        self.eps[k - 1]
    }

    /// Weighted DA average x̄_k^da at transition k.
    pub fn weighted_da_average(&self, k: usize) -> DVector<f64> {
        self.check_k(k);
        DVector::from_column_slice(&self.weighted_avg[(k - 1) * self.dim..k * self.dim])
    }

    /// Active mask of the manifold M_k in force at transition k.
    pub fn manifold_mask(&self, k: usize) -> u32 {
        self.check_k(k);
        self.manifold_masks[k - 1]
    }

    /// DA iterates in order, with their global iteration index and stepsize.
    pub fn da_iterates(&self) -> impl Iterator<Item = (usize, DVector<f64>, f64)> + '_ {
        self.da_steps
            .iter()
            .map(|(k, x, a)| (*k, DVector::from_column_slice(x), *a))
    }

    pub fn num_da_steps(&self) -> usize {
        self.da_steps.len()
    }
}

/// Run the dual-averaging-safeguarded Riemannian stochastic gradient method.
pub fn run_riemannian_da(
    p: &StochasticProgram,
    schedule: &StepSchedule,
    config: &RiemannianConfig,
    seed: u64,
    horizon: usize,
) -> Result<SolverTrace> {
    check_horizon(horizon)?;
    config.validate_against(schedule)?;
    let da_mask = config.da_mask(horizon)?;

    let set = p.constraint_set();
    let n = p.dim();
    let mut trace = SolverTrace::new(SolverKind::RiemannianDa, n, horizon, *schedule, seed, true);
    let mut extras = RiemannianExtras {
        dim: n,
        da_steps: Vec::new(),
        branches: Vec::with_capacity(horizon.saturating_sub(1)),
        eps: Vec::with_capacity(horizon.saturating_sub(1)),
        weighted_avg: Vec::with_capacity(horizon.saturating_sub(1) * n),
        manifold_masks: Vec::with_capacity(horizon.saturating_sub(1)),
    };

    let mut x = set.project(&DVector::zeros(n))?;
    let mut z_da = DVector::zeros(n);
    let mut da_count = 0usize;
    let mut weight_sum = 0.0;
    let mut weighted_num = DVector::zeros(n);
    let mut latest_da: Option<DVector<f64>> = None;
    let mut prev_manifold_mask: Option<u32> = None;

    let mut g = DVector::zeros(n);
    let mut sbuf = vec![0.0; p.sample_dim()];

    for k in 1..=horizon {
        trace.push(&x, Some(&z_da), set.active_mask(&x, ACTIVE_TOL));
        if k == horizon {
            break;
        }
        let mut rng = SplitMix64::new(step_seed(seed, k as u64));

        let branch;
        if da_mask[k] {
            da_count += 1;
            let alpha_da = schedule.alpha(da_count);
            let x_da = set.project(&-&z_da)?;
            p.stochastic_gradient_into(&x_da, &mut rng, &mut sbuf, &mut g);
            z_da += alpha_da * &g;
            weight_sum += alpha_da;
            weighted_num += alpha_da * &x_da;
            extras.da_steps.push((k, x_da.as_slice().to_vec(), alpha_da));
            latest_da = Some(x_da);
            // the main iterate holds at DA times
            branch = RiemannianBranch::DualAveraging;
        } else {
            match &latest_da {
                None => {
                    // no DA iterate yet (only possible under an explicit rule
                    // with a late first time): run a pure DA step
                    da_count += 1;
                    let alpha_da = schedule.alpha(da_count);
                    let x_da = set.project(&-&z_da)?;
                    p.stochastic_gradient_into(&x_da, &mut rng, &mut sbuf, &mut g);
                    z_da += alpha_da * &g;
                    weight_sum += alpha_da;
                    weighted_num += alpha_da * &x_da;
                    extras.da_steps.push((k, x_da.as_slice().to_vec(), alpha_da));
                    x = x_da.clone();
                    latest_da = Some(x_da);
                    branch = RiemannianBranch::DualAveraging;
                }
                Some(anchor_da) => {
                    let active = set.active_set(anchor_da, ACTIVE_TOL);
                    let mask = set.active_mask(anchor_da, ACTIVE_TOL);
                    let manifold = Manifold::from_active_set(set, active);
                    let same = prev_manifold_mask == Some(mask);

                    p.stochastic_gradient_into(&x, &mut rng, &mut sbuf, &mut g);

                    // line 3: tangent step + manifold projection, or restart
                    // from the DA iterate when the manifold changed
                    let candidate: Option<DVector<f64>> = if same {
                        match manifold.tangent_projector_at(&x) {
                            Ok(pit) => {
                                let stepped = &x - schedule.alpha(k) * (&pit * &g);
                                project_onto_manifold(&stepped, &manifold).ok()
                            }
                            Err(_) => None,
                        }
                    } else {
                        Some(anchor_da.clone())
                    };

                    let eps = weight_sum.powf(-config.q);
                    let avg = &weighted_num / weight_sum;

                    let accepted = candidate.as_ref().and_then(|cand| {
                        set.project(cand)
                            .ok()
                            .filter(|c| (c - &avg).norm() <= 3.0 * eps)
                    });
                    let (next, which) = match accepted {
                        Some(c) => (c, 0u8),
                        None => match min_norm_point(&manifold, set, Some((&avg, eps))) {
                            Ok(Some(pt)) => (set.project(&pt)?, 1),
                            _ => match min_norm_point(&manifold, set, None) {
                                Ok(Some(pt)) => (set.project(&pt)?, 2),
                                _ => (set.project(&avg)?, 3),
                            },
                        },
                    };
                    x = next;
                    prev_manifold_mask = Some(mask);
                    branch = match (same, which) {
                        (true, 0) => RiemannianBranch::Manifold,
                        (true, 1) => RiemannianBranch::ManifoldMinNormBall,
                        (true, 2) => RiemannianBranch::ManifoldMinNormGlobal,
                        (true, _) => RiemannianBranch::ManifoldFallback,
                        (false, 0) => RiemannianBranch::Reset,
                        (false, 1) => RiemannianBranch::ResetMinNormBall,
                        (false, 2) => RiemannianBranch::ResetMinNormGlobal,
                        (false, _) => RiemannianBranch::ResetFallback,
                    };
                }
            }
        }

        extras.branches.push(branch);
        extras.eps.push(if weight_sum > 0.0 {
            weight_sum.powf(-config.q)
        } else {
            f64::INFINITY
        });
        let avg_snapshot = if weight_sum > 0.0 {
            &weighted_num / weight_sum
        } else {
            DVector::zeros(n)
        };
        extras.weighted_avg.extend_from_slice(avg_snapshot.as_slice());
        extras.manifold_masks.push(
            latest_da
                .as_ref()
                .map(|d| set.active_mask(d, ACTIVE_TOL))
                .unwrap_or(0),
        );
    }

    trace.set_riemannian(extras);
    Ok(trace)
}

//! Posterior sampling for the joint model.
//!
//! One sweep is a systematic scan: `beta -> sigma2 -> tau2 -> each b_i ->
//! (gamma, alpha) -> lambda -> recentre`. The conjugate blocks are exact Gibbs
//! draws; `b_i`, `(gamma, alpha)` and the recentring shift are random-walk
//! Metropolis steps whose scales adapt during burn-in only.

mod diagnostics;
mod draws;
mod sampler;
mod state;

pub use diagnostics::{
    chain_summaries, effective_sample_size, gelman_rubin, multi_chain_ess, Diag, DiagnosticsError, ParamSummary,
};
pub use draws::{ChainDraws, DrawMatrix, FitKind};
pub use sampler::{run_chain, run_chain_with, run_chains, run_chains_with, SamplerOptions};
pub use state::{
    draw_b_conjugate, gibbs_update_beta, gibbs_update_lambda, gibbs_update_sigma2, gibbs_update_tau2,
    mh_recenter, mh_update_b, mh_update_gamma_alpha, ModelData, MhOutcome, SamplerState,
};

use thiserror::Error;

use crate::model::{Cohort, ModelError, PriorSpec};

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid MCMC config: {0}")]
    Config(String),
    #[error("non-finite log-density in block '{block}' at iteration {iteration}")]
    NonFinite { block: &'static str, iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the baseline-hazard cut points are chosen for a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum CutRule {
    /// `n` intervals with interior cuts at empirical quantiles of the observed
    /// event times; equal-width over `[0, max follow-up]` if there are fewer
    /// than `n` events.
    Quantiles(usize),
    Fixed(Vec<f64>),
}

impl Default for CutRule {
    fn default() -> Self {
        CutRule::Quantiles(5)
    }
}

impl CutRule {
    pub fn resolve(&self, cohort: &Cohort) -> Result<Vec<f64>, ModelError> {
        let cuts = match self {
            CutRule::Fixed(c) => c.clone(),
            CutRule::Quantiles(n) => quantile_cuts(cohort, *n),
        };
        crate::model::validate_cuts(&cuts)?;
        Ok(cuts)
    }
}

fn quantile_cuts(cohort: &Cohort, n_intervals: usize) -> Vec<f64> {
    if n_intervals <= 1 {
        return Vec::new();
    }
    let mut events: Vec<f64> = cohort.patients.iter().filter(|p| p.event).map(|p| p.event_time).collect();
    events.sort_by(|a, b| a.total_cmp(b));
    let raw: Vec<f64> = if events.len() < n_intervals {
        let end = cohort.max_follow_up();
        if end <= 0.0 {
            return Vec::new();
        }
        (1..n_intervals).map(|k| end * k as f64 / n_intervals as f64).collect()
    } else {
        (1..n_intervals).map(|k| quantile_sorted(&events, k as f64 / n_intervals as f64)).collect()
    };
    let mut cuts: Vec<f64> = Vec::with_capacity(raw.len());
    for c in raw {
        if c > 0.0 && cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    cuts
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_window: usize,
    pub target_accept: f64,
    pub prior: PriorSpec,
    pub cuts: CutRule,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iter: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            adapt_window: 50,
            target_accept: 0.35,
            prior: PriorSpec::default(),
            cuts: CutRule::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        let fail = |m: &str| Err(McmcError::Config(m.to_string()));
        if self.n_chains == 0 {
            return fail("n_chains must be positive");
        }
        if self.n_iter == 0 {
            return fail("n_iter must be positive");
        }
        if self.burn_in >= self.n_iter {
            return fail("burn_in must be smaller than n_iter");
        }
        if self.thin == 0 {
            return fail("thin must be positive");
        }
        if self.adapt_window == 0 {
            return fail("adapt_window must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0,1)");
        }
        self.prior.validate()?;
        Ok(())
    }

    /// Number of stored draws per chain.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

/// Derives an independent 64-bit seed for sub-task `index` (SplitMix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

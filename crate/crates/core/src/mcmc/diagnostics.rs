//! Convergence diagnostics: split-R-hat and Geyer initial-positive-sequence ESS.

use serde::Serialize;
use thiserror::Error;

use super::draws::ChainDraws;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} chains, got {got}")]
    TooFewChains { needed: usize, got: usize },
    #[error("need at least {needed} draws per chain, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("chains have unequal lengths")]
    UnequalLengths,
}

/// A diagnostic value, or a flag that it is undefined because the draws do
/// not vary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Diag {
    Value(f64),
    Degenerate { divergent_means: bool },
}

impl Diag {
    pub fn value(&self) -> Option<f64> {
        match self {
            Diag::Value(v) => Some(*v),
            Diag::Degenerate { .. } => None,
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-R-hat: each chain is cut into two halves (dropping the middle draw
/// of odd-length chains) and the classic potential scale reduction factor is
/// computed over the `2 * n_chains` segments.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<Diag, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::TooFewChains { needed: 2, got: chains.len() });
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(DiagnosticsError::UnequalLengths);
    }
    if len < 4 {
        return Err(DiagnosticsError::TooFewDraws { needed: 4, got: len });
    }
    let half = len / 2;
    let segments: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    let m = segments.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = segments.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let between = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = segments.iter().zip(&means).map(|(s, &mu)| sample_var(s, mu)).sum::<f64>() / m;
    if within <= 0.0 {
        let divergent_means = means.iter().any(|&x| x != means[0]);
        return Ok(Diag::Degenerate { divergent_means });
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok(Diag::Value((var_plus / within).sqrt()))
}

/// Effective sample size of one chain with Geyer's initial positive sequence
/// truncation of the autocorrelation sum, clamped to `(0, n]`.
pub fn effective_sample_size(draws: &[f64]) -> Result<Diag, DiagnosticsError> {
    let n = draws.len();
    if n < 10 {
        return Err(DiagnosticsError::TooFewDraws { needed: 10, got: n });
    }
    let mu = mean(draws);
    let centered: Vec<f64> = draws.iter().map(|x| x - mu).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return Ok(Diag::Degenerate { divergent_means: false });
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0)
    };
    // tau = -1 + 2 * sum_m (rho_{2m} + rho_{2m+1}) over the initial positive run
    let mut sum_pairs = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(2 * m) + rho(2 * m + 1) };
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let ess = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Ok(Diag::Value(ess.clamp(f64::MIN_POSITIVE, n as f64)))
}

/// Sum of per-chain effective sample sizes.
pub fn multi_chain_ess(chains: &[&[f64]]) -> Result<Diag, DiagnosticsError> {
    let mut total = 0.0;
    let mut degenerate = 0;
    for c in chains {
        match effective_sample_size(c)? {
            Diag::Value(v) => total += v,
            Diag::Degenerate { .. } => degenerate += 1,
        }
    }
    if degenerate == chains.len() {
        return Ok(Diag::Degenerate { divergent_means: false });
    }
    Ok(Diag::Value(total))
}

/// Posterior summary of one named parameter pooled across chains.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Per-column summaries over a set of chains of the same fit.
pub fn chain_summaries(chains: &[ChainDraws]) -> Vec<ParamSummary> {
    let Some(first) = chains.first() else { return Vec::new() };
    first
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.params.column(j)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let mut pooled: Vec<f64> = cols.iter().flatten().copied().collect();
            pooled.sort_by(|a, b| a.total_cmp(b));
            let mu = mean(&pooled);
            let sd = if pooled.len() > 1 { sample_var(&pooled, mu).sqrt() } else { 0.0 };
            ParamSummary {
                name: name.clone(),
                mean: mu,
                sd,
                q025: super::quantile_sorted(&pooled, 0.025),
                q975: super::quantile_sorted(&pooled, 0.975),
                rhat: gelman_rubin(&refs).ok().and_then(|d| d.value()),
                ess: multi_chain_ess(&refs).ok().and_then(|d| d.value()),
            }
        })
        .collect()
}

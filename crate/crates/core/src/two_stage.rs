//! Two-stage comparator: fit the longitudinal submodel alone, then treat the
//! posterior-mean random effects as a known covariate in the survival model.

use crate::dynpred::{check_at_risk, check_horizons, summarise_curves, PredictError, SurvivalPrediction};
use crate::mcmc::{run_chains_with, ChainDraws, FitKind, McmcConfig, McmcError, SamplerOptions};
use crate::model::{dot, Cohort, HazardSpec, ModelError, PatientRecord};

/// Stage one: `beta`, `sigma2`, `tau2` and `b` only, with exact conjugate `b` draws.
pub fn fit_longitudinal_only(cohort: &Cohort, config: &McmcConfig) -> Result<Vec<ChainDraws>, McmcError> {
    let options = SamplerOptions { kind: FitKind::Longitudinal, alpha_fixed: Some(0.0), fixed_b: None };
    run_chains_with(cohort, config, &options)
}

/// Posterior mean of each `b_i`, Rao-Blackwellised: the conjugate conditional
/// mean of `b_i` averaged over the stage-one draws of `(beta, sigma2, tau2)`.
pub fn b_hat(cohort: &Cohort, stage1: &[ChainDraws]) -> Result<Vec<f64>, ModelError> {
    let long = longitudinal_draws(stage1, usize::MAX)?;
    if long.is_empty() {
        return Err(ModelError::InvalidParams("no stage-one draws".into()));
    }
    Ok(cohort.patients.iter().map(|p| b_hat_at_landmark(&long, p, f64::INFINITY)).collect())
}

/// Stage two: piecewise-exponential survival model with `b_hat` as a fixed covariate.
pub fn fit_survival_plugin(cohort: &Cohort, b_hat: &[f64], config: &McmcConfig) -> Result<Vec<ChainDraws>, McmcError> {
    if b_hat.len() != cohort.len() {
        return Err(ModelError::InvalidParams(format!("b_hat has {} entries for {} patients", b_hat.len(), cohort.len())).into());
    }
    let options = SamplerOptions { kind: FitKind::SurvivalPlugin, alpha_fixed: None, fixed_b: Some(b_hat.to_vec()) };
    run_chains_with(cohort, config, &options)
}

#[derive(Debug, Clone)]
pub struct TwoStageFit {
    pub stage1: Vec<ChainDraws>,
    pub b_hat: Vec<f64>,
    pub stage2: Vec<ChainDraws>,
}

pub fn fit_two_stage(cohort: &Cohort, config: &McmcConfig) -> Result<TwoStageFit, McmcError> {
    let stage1 = fit_longitudinal_only(cohort, config)?;
    let b_hat = b_hat(cohort, &stage1)?;
    let stage2 = fit_survival_plugin(cohort, &b_hat, config)?;
    Ok(TwoStageFit { stage1, b_hat, stage2 })
}

#[derive(Debug, Clone, Copy)]
pub struct LongitudinalDraw {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone)]
pub struct SurvivalDraw {
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub hazard: HazardSpec,
}

fn pooled_rows(chains: &[ChainDraws], max_draws: usize) -> Vec<(&ChainDraws, usize)> {
    let total: usize = chains.iter().map(|c| c.n_draws()).sum();
    let step = total.div_ceil(max_draws.max(1)).max(1);
    chains.iter().flat_map(|c| (0..c.n_draws()).map(move |r| (c, r))).step_by(step).collect()
}

fn col(c: &ChainDraws, name: &str) -> Result<usize, ModelError> {
    c.column_index(name).ok_or_else(|| ModelError::InvalidParams(format!("draws lack column '{name}'")))
}

pub fn longitudinal_draws(stage1: &[ChainDraws], max_draws: usize) -> Result<Vec<LongitudinalDraw>, ModelError> {
    pooled_rows(stage1, max_draws)
        .into_iter()
        .map(|(c, r)| {
            let row = c.params.row(r);
            Ok(LongitudinalDraw {
                beta0: row[col(c, "beta0")?],
                beta1: row[col(c, "beta1")?],
                sigma2: row[col(c, "log_sigma2")?].exp(),
                tau2: row[col(c, "log_tau2")?].exp(),
            })
        })
        .collect()
}

pub fn survival_draws(stage2: &[ChainDraws], max_draws: usize) -> Result<Vec<SurvivalDraw>, ModelError> {
    pooled_rows(stage2, max_draws)
        .into_iter()
        .map(|(c, r)| {
            let row = c.params.row(r);
            let p = c.n_covariates;
            let g0 = col(c, "gamma_1").unwrap_or(0);
            let a = col(c, "alpha")?;
            let l0 = col(c, "log_lambda_1")?;
            Ok(SurvivalDraw {
                gamma: row[g0..g0 + p].to_vec(),
                alpha: row[a],
                hazard: HazardSpec::new(c.cuts.clone(), row[l0..l0 + c.n_intervals()].iter().map(|v| v.exp()).collect())?,
            })
        })
        .collect()
}

/// Stage-one estimate of `b` from the history up to `t`: the conjugate
/// posterior mean averaged over longitudinal draws. Survival past `t` is not
/// used, which is the defining shortcut of the two-stage approach.
pub fn b_hat_at_landmark(long: &[LongitudinalDraw], history: &PatientRecord, t: f64) -> f64 {
    let mut acc = 0.0;
    for d in long {
        let mut s = 0.0;
        let mut n = 0.0;
        for (&tj, &y) in history.obs_times.iter().zip(&history.obs_values) {
            if tj <= t {
                s += y - d.beta0 - d.beta1 * tj;
                n += 1.0;
            }
        }
        acc += (s / d.sigma2) / (n / d.sigma2 + 1.0 / d.tau2);
    }
    acc / long.len() as f64
}

/// Plug-in conditional survival curve over `horizons`, with pointwise bands
/// from the stage-two draws.
pub fn predict_two_stage(
    long: &[LongitudinalDraw],
    surv: &[SurvivalDraw],
    history: &PatientRecord,
    t: f64,
    horizons: &[f64],
) -> Result<SurvivalPrediction, PredictError> {
    if long.is_empty() || surv.is_empty() {
        return Err(PredictError::NoDraws);
    }
    check_horizons(t, horizons)?;
    check_at_risk(history, t)?;
    let b = b_hat_at_landmark(long, history, t);
    let curves: Vec<Vec<f64>> = surv
        .iter()
        .map(|d| {
            let risk = (dot(&d.gamma, &history.covariates) + d.alpha * b).exp();
            let h_t = d.hazard.cumulative(t);
            horizons.iter().map(|&u| (-risk * (d.hazard.cumulative(u) - h_t)).exp()).collect()
        })
        .collect();
    Ok(summarise_curves(t, horizons, &curves, 0))
}

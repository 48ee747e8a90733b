use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::draws::{ChainDraws, DrawMatrix, FitKind};
use super::state::{
    draw_b_conjugate, gibbs_update_beta, gibbs_update_lambda, gibbs_update_sigma2, gibbs_update_tau2, mh_recenter,
    mh_update_b, mh_update_gamma_alpha, ModelData, MhOutcome, SamplerState,
};
use super::{derive_seed, McmcConfig, McmcError};
use crate::model::{Cohort, ModelError};

/// Which parts of the model a chain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    pub kind: FitKind,
    /// Holds `alpha` at a fixed value instead of sampling it.
    pub alpha_fixed: Option<f64>,
    /// Random effects used as a known covariate; required for
    /// [`FitKind::SurvivalPlugin`].
    pub fixed_b: Option<Vec<f64>>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { kind: FitKind::Joint, alpha_fixed: None, fixed_b: None }
    }
}

const RM_EXPONENT: f64 = 0.6;
/// `(gamma, alpha)` steps per sweep; each costs one pass over the patients.
const GA_REPEATS: usize = 5;

/// Proposal scales. Adapted by Robbins-Monro during burn-in, then frozen.
struct Tuning {
    b_log_scale: Vec<f64>,
    ga_base: Vec<f64>,
    ga_log_factor: f64,
    recenter_log_scale: f64,
    ga_moments: Vec<Welford>,
    frozen: bool,
}

#[derive(Default, Clone, Copy)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn sd(&self) -> Option<f64> {
        (self.n > 2.0 && self.m2 > 0.0).then(|| (self.m2 / (self.n - 1.0)).sqrt())
    }
}

#[derive(Default)]
struct Counter {
    accepted: f64,
    tried: f64,
}

impl Counter {
    fn record(&mut self, o: MhOutcome) {
        self.tried += 1.0;
        if o.accepted {
            self.accepted += 1.0;
        }
    }

    fn rate(&self) -> f64 {
        if self.tried == 0.0 {
            f64::NAN
        } else {
            self.accepted / self.tried
        }
    }
}

fn check(state: &SamplerState, block: &'static str, iteration: usize) -> Result<(), McmcError> {
    if state.all_finite() {
        Ok(())
    } else {
        Err(McmcError::NonFinite { block, iteration })
    }
}

/// Runs one joint-model chain.
pub fn run_chain(cohort: &Cohort, config: &McmcConfig, chain_seed: u64) -> Result<ChainDraws, McmcError> {
    run_chain_with(cohort, config, chain_seed, &SamplerOptions::default())
}

/// Runs `config.n_chains` joint-model chains with seeds derived from `config.seed`.
pub fn run_chains(cohort: &Cohort, config: &McmcConfig) -> Result<Vec<ChainDraws>, McmcError> {
    run_chains_with(cohort, config, &SamplerOptions::default())
}

pub fn run_chains_with(
    cohort: &Cohort,
    config: &McmcConfig,
    options: &SamplerOptions,
) -> Result<Vec<ChainDraws>, McmcError> {
    config.validate()?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain_with(cohort, config, derive_seed(config.seed, c as u64), options))
        .collect()
}

pub fn run_chain_with(
    cohort: &Cohort,
    config: &McmcConfig,
    chain_seed: u64,
    options: &SamplerOptions,
) -> Result<ChainDraws, McmcError> {
    config.validate()?;
    let kind = options.kind;
    let prior = &config.prior;
    let cuts = config.cuts.resolve(cohort)?;
    let data = ModelData::new(cohort, &cuts)?;
    let n = data.n_patients();
    let pc = data.n_covariates();

    let mut state = SamplerState::initial(&data, prior)?;
    if let Some(a) = options.alpha_fixed {
        state.set_alpha(a);
    }
    match (&options.fixed_b, kind) {
        (Some(b), _) => {
            if b.len() != n {
                return Err(ModelError::InvalidParams(format!("fixed_b has {} entries for {n} patients", b.len())).into());
            }
            state = SamplerState::new(state.params.clone(), b.clone(), &data)?;
        }
        (None, FitKind::SurvivalPlugin) => {
            return Err(McmcError::Config("survival plug-in fit needs fixed random effects".into()));
        }
        (None, _) => state = SamplerState::new(state.params.clone(), state.b.clone(), &data)?,
    }

    let alpha_free = options.alpha_fixed.is_none();
    let b_exact = kind == FitKind::Longitudinal || options.alpha_fixed == Some(0.0);
    let ga_dims = pc + usize::from(alpha_free);

    let mut long_rng = ChaCha8Rng::seed_from_u64(chain_seed);
    long_rng.set_stream(0);
    let mut surv_rng = ChaCha8Rng::seed_from_u64(chain_seed);
    surv_rng.set_stream(1);

    let mut tuning = Tuning {
        b_log_scale: (0..n).map(|i| (2.4 * state.b_conditional_sd(&data, i)).ln()).collect(),
        ga_base: state.gamma_alpha_sd(&data, prior),
        ga_log_factor: (2.4 / (ga_dims.max(1) as f64).sqrt()).ln(),
        recenter_log_scale: (2.4 * (state.params.tau2 / n.max(1) as f64).sqrt()).ln(),
        ga_moments: vec![Welford::default(); pc + 1],
        frozen: false,
    };

    let names = kind.column_names(pc, data.n_intervals());
    let retained = config.retained();
    let mut params_out = DrawMatrix::with_capacity(names.len(), retained);
    let b_cols = if kind.has_longitudinal() { n } else { 0 };
    let mut b_out = DrawMatrix::with_capacity(b_cols, retained);
    let (mut acc_b, mut acc_ga, mut acc_rc) = (Counter::default(), Counter::default(), Counter::default());
    let mut row = Vec::with_capacity(names.len());
    let mut scales = vec![0.0; pc + 1];

    for it in 0..config.n_iter {
        let adapting = it < config.burn_in;
        if !adapting {
            tuning.frozen = true;
        }
        let gain = (1.0 + it as f64 / config.adapt_window as f64).powf(-RM_EXPONENT);
        let target = config.target_accept;

        if kind.has_longitudinal() {
            gibbs_update_beta(&mut state, &data, prior, &mut long_rng);
            check(&state, "beta", it)?;
            gibbs_update_sigma2(&mut state, &data, prior, &mut long_rng);
            check(&state, "sigma2", it)?;
            gibbs_update_tau2(&mut state, prior, &mut long_rng);
            check(&state, "tau2", it)?;
            for i in 0..n {
                if b_exact {
                    draw_b_conjugate(&mut state, &data, i, &mut long_rng);
                } else {
                    let o = mh_update_b(&mut state, &data, i, tuning.b_log_scale[i].exp(), &mut long_rng);
                    if adapting {
                        tuning.b_log_scale[i] += gain * (o.accept_prob - target);
                    } else {
                        acc_b.record(o);
                    }
                }
            }
            check(&state, "b", it)?;
        }

        if kind.has_survival() {
            if ga_dims > 0 {
                for _ in 0..GA_REPEATS {
                    let factor = tuning.ga_log_factor.exp();
                    for (s, base) in scales.iter_mut().zip(&tuning.ga_base) {
                        *s = factor * base;
                    }
                    let o = mh_update_gamma_alpha(&mut state, &data, prior, &scales, alpha_free, &mut surv_rng);
                    if adapting {
                        tuning.ga_log_factor += gain * (o.accept_prob - target);
                        if it >= config.adapt_window {
                            for (j, w) in tuning.ga_moments.iter_mut().enumerate() {
                                let v = if j < pc { state.params.gamma[j] } else { state.params.alpha };
                                w.push(v);
                            }
                        }
                        if (it + 1) % config.adapt_window == 0 && it + 1 >= 3 * config.adapt_window {
                            for (base, w) in tuning.ga_base.iter_mut().zip(&tuning.ga_moments) {
                                if let Some(sd) = w.sd() {
                                    *base = sd;
                                }
                            }
                        }
                    } else {
                        acc_ga.record(o);
                    }
                    check(&state, "gamma_alpha", it)?;
                }
            }
            gibbs_update_lambda(&mut state, &data, prior, &mut surv_rng);
            check(&state, "lambda", it)?;
        }

        if kind.has_longitudinal() && n > 0 {
            let o = mh_recenter(
                &mut state,
                &data,
                prior,
                tuning.recenter_log_scale.exp(),
                kind.has_survival(),
                &mut long_rng,
            );
            if adapting {
                tuning.recenter_log_scale += gain * (o.accept_prob - target);
            } else {
                acc_rc.record(o);
            }
            check(&state, "recenter", it)?;
        }

        if !adapting && (it - config.burn_in).is_multiple_of(config.thin) {
            row.clear();
            let p = &state.params;
            if kind.has_longitudinal() {
                row.extend([p.beta0, p.beta1]);
            }
            if kind.has_survival() {
                row.extend(&p.gamma);
                row.push(p.alpha);
            }
            if kind.has_longitudinal() {
                row.extend([p.sigma2.ln(), p.tau2.ln()]);
            }
            if kind.has_survival() {
                row.extend(p.hazard.levels().iter().map(|l| l.ln()));
            }
            params_out.push_row(&row);
            if b_cols > 0 {
                b_out.push_row(&state.b);
            }
        }
    }

    let mut accept_rates = Vec::new();
    if kind.has_longitudinal() {
        if !b_exact {
            accept_rates.push(("b".to_string(), acc_b.rate()));
        }
        accept_rates.push(("recenter".to_string(), acc_rc.rate()));
    }
    if kind.has_survival() && ga_dims > 0 {
        accept_rates.push(("gamma_alpha".to_string(), acc_ga.rate()));
    }

    Ok(ChainDraws {
        kind,
        names,
        params: params_out,
        b: b_out,
        accept_rates,
        cuts,
        n_covariates: pc,
        chain_seed,
        adaptation_frozen: tuning.frozen,
    })
}

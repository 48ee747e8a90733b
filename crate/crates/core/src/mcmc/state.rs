use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::model::{dot, interval_exposures, interval_index, Cohort, HazardSpec, JointParams, ModelError, PriorSpec};

/// Per-patient quantities that never change during sampling.
#[derive(Debug, Clone)]
pub(crate) struct PatientData {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n: f64,
    pub sum_t: f64,
    pub sum_y: f64,
    pub z: Vec<f64>,
    pub event: bool,
    pub exposure: Vec<f64>,
}

/// Cohort preprocessed for a fixed set of hazard cut points.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub(crate) patients: Vec<PatientData>,
    pub(crate) cuts: Vec<f64>,
    pub(crate) n_covariates: usize,
    pub(crate) events_per_interval: Vec<f64>,
    n_obs: f64,
    sum_t: f64,
    sum_t2: f64,
}

impl ModelData {
    pub fn new(cohort: &Cohort, cuts: &[f64]) -> Result<Self, ModelError> {
        crate::model::validate_cuts(cuts)?;
        let k = cuts.len() + 1;
        let mut events_per_interval = vec![0.0; k];
        let mut patients = Vec::with_capacity(cohort.len());
        let (mut n_obs, mut sum_t, mut sum_t2) = (0.0, 0.0, 0.0);
        for p in &cohort.patients {
            if p.event {
                events_per_interval[interval_index(cuts, p.event_time)] += 1.0;
            }
            n_obs += p.n_obs() as f64;
            sum_t += p.obs_times.iter().sum::<f64>();
            sum_t2 += p.obs_times.iter().map(|t| t * t).sum::<f64>();
            patients.push(PatientData {
                times: p.obs_times.clone(),
                values: p.obs_values.clone(),
                n: p.n_obs() as f64,
                sum_t: p.obs_times.iter().sum(),
                sum_y: p.obs_values.iter().sum(),
                z: p.covariates.clone(),
                event: p.event,
                exposure: interval_exposures(cuts, p.event_time),
            });
        }
        Ok(Self {
            patients,
            cuts: cuts.to_vec(),
            n_covariates: cohort.n_covariates,
            events_per_interval,
            n_obs,
            sum_t,
            sum_t2,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs as usize
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_intervals(&self) -> usize {
        self.cuts.len() + 1
    }
}

/// Current parameter values plus the random intercepts, with cached
/// `gamma'Z_i` and `H0(T_i)`.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub params: JointParams,
    pub b: Vec<f64>,
    zgamma: Vec<f64>,
    cumhaz: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub accept_prob: f64,
}

impl SamplerState {
    pub fn new(params: JointParams, b: Vec<f64>, data: &ModelData) -> Result<Self, ModelError> {
        params.validate(data.n_covariates)?;
        if params.hazard.cuts() != data.cuts.as_slice() {
            return Err(ModelError::InvalidParams("hazard cuts differ from the data's cuts".into()));
        }
        if b.len() != data.n_patients() {
            return Err(ModelError::InvalidParams(format!(
                "{} random effects for {} patients",
                b.len(),
                data.n_patients()
            )));
        }
        let mut s = Self { params, b, zgamma: Vec::new(), cumhaz: Vec::new() };
        s.refresh_zgamma(data);
        s.refresh_cumhaz(data);
        Ok(s)
    }

    /// Deterministic starting point: pooled least-squares line, variances at
    /// their prior means, `b_i` at the mean residual, `gamma = alpha = 0`, and
    /// hazard levels from event/exposure counts.
    pub fn initial(data: &ModelData, prior: &PriorSpec) -> Result<Self, ModelError> {
        let (beta0, beta1) = pooled_ols(data).unwrap_or((prior.coef_mean, 0.0));
        let var0 = if prior.var_shape > 1.0 { prior.var_scale / (prior.var_shape - 1.0) } else { prior.var_scale };
        let b = data
            .patients
            .iter()
            .map(|p| if p.n > 0.0 { (p.sum_y - p.n * beta0 - beta1 * p.sum_t) / p.n } else { 0.0 })
            .collect();
        let levels = (0..data.n_intervals())
            .map(|k| {
                let exposure: f64 = data.patients.iter().map(|p| p.exposure[k]).sum();
                (prior.hazard_shape + data.events_per_interval[k]) / (prior.hazard_rate + exposure)
            })
            .collect();
        let params = JointParams {
            beta0,
            beta1,
            gamma: vec![0.0; data.n_covariates],
            alpha: 0.0,
            sigma2: var0,
            tau2: var0,
            hazard: HazardSpec::new(data.cuts.clone(), levels)?,
        };
        Self::new(params, b, data)
    }

    pub(crate) fn refresh_zgamma(&mut self, data: &ModelData) {
        self.zgamma = data.patients.iter().map(|p| dot(&self.params.gamma, &p.z)).collect();
    }

    pub(crate) fn refresh_cumhaz(&mut self, data: &ModelData) {
        let levels = self.params.hazard.levels();
        self.cumhaz = data.patients.iter().map(|p| dot(levels, &p.exposure)).collect();
    }

    /// Survival log-likelihood summed over patients (the `log h0` term included).
    pub fn survival_loglik_total(&self, data: &ModelData) -> f64 {
        let levels = self.params.hazard.levels();
        data.patients
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let eta = self.zgamma[i] + self.params.alpha * self.b[i];
                let mut ll = -eta.exp() * self.cumhaz[i];
                if p.event {
                    let k = interval_of_exposure(&p.exposure);
                    ll += levels[k].ln() + eta;
                }
                ll
            })
            .sum()
    }

    /// Mean of `y - beta0 - beta1 t` for patient `i` times its count.
    fn residual_sum(&self, p: &PatientData) -> f64 {
        p.sum_y - p.n * self.params.beta0 - self.params.beta1 * p.sum_t
    }
}

fn interval_of_exposure(exposure: &[f64]) -> usize {
    // the event interval is the last one with positive exposure
    exposure.iter().rposition(|&e| e > 0.0).unwrap_or(0)
}

fn pooled_ols(data: &ModelData) -> Option<(f64, f64)> {
    let n = data.n_obs;
    if n < 2.0 {
        return None;
    }
    let sum_y: f64 = data.patients.iter().map(|p| p.sum_y).sum();
    let sum_ty: f64 = data
        .patients
        .iter()
        .map(|p| p.times.iter().zip(&p.values).map(|(t, y)| t * y).sum::<f64>())
        .sum();
    let sxx = data.sum_t2 - data.sum_t * data.sum_t / n;
    if sxx <= 1e-12 {
        return Some((sum_y / n, 0.0));
    }
    let slope = (sum_ty - data.sum_t * sum_y / n) / sxx;
    Some(((sum_y - slope * data.sum_t) / n, slope))
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gamma_draw<R: Rng>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

fn inv_gamma_draw<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma_draw(rng, shape, scale)
}

/// Exact draw of `(beta0, beta1)` from its bivariate normal full conditional.
pub fn gibbs_update_beta<R: Rng>(
    state: &mut SamplerState,
    data: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> (f64, f64) {
    let s2 = state.params.sigma2;
    let v0 = prior.coef_var;
    let mut r_sum = 0.0;
    let mut tr_sum = 0.0;
    for (p, &b) in data.patients.iter().zip(&state.b) {
        for (&t, &y) in p.times.iter().zip(&p.values) {
            r_sum += y - b;
            tr_sum += t * (y - b);
        }
    }
    // precision P = X'X / s2 + I / v0
    let p00 = data.n_obs / s2 + 1.0 / v0;
    let p01 = data.sum_t / s2;
    let p11 = data.sum_t2 / s2 + 1.0 / v0;
    let h0 = r_sum / s2 + prior.coef_mean / v0;
    let h1 = tr_sum / s2 + prior.coef_mean / v0;
    // Cholesky P = L L'
    let l00 = p00.sqrt();
    let l10 = p01 / l00;
    let l11 = (p11 - l10 * l10).sqrt();
    // mean = P^{-1} h
    let det = p00 * p11 - p01 * p01;
    let m0 = (p11 * h0 - p01 * h1) / det;
    let m1 = (p00 * h1 - p01 * h0) / det;
    // x = m + L'^{-1} z
    let z0 = std_normal(rng);
    let z1 = std_normal(rng);
    let x1 = z1 / l11;
    let x0 = (z0 - l10 * x1) / l00;
    state.params.beta0 = m0 + x0;
    state.params.beta1 = m1 + x1;
    (state.params.beta0, state.params.beta1)
}

pub fn gibbs_update_sigma2<R: Rng>(
    state: &mut SamplerState,
    data: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> f64 {
    let (b0, b1) = (state.params.beta0, state.params.beta1);
    let mut ssr = 0.0;
    for (p, &b) in data.patients.iter().zip(&state.b) {
        for (&t, &y) in p.times.iter().zip(&p.values) {
            let r = y - b0 - b1 * t - b;
            ssr += r * r;
        }
    }
    let draw = inv_gamma_draw(rng, prior.var_shape + 0.5 * data.n_obs, prior.var_scale + 0.5 * ssr);
    state.params.sigma2 = draw;
    draw
}

pub fn gibbs_update_tau2<R: Rng>(state: &mut SamplerState, prior: &PriorSpec, rng: &mut R) -> f64 {
    let ss: f64 = state.b.iter().map(|b| b * b).sum();
    let n = state.b.len() as f64;
    let draw = inv_gamma_draw(rng, prior.var_shape + 0.5 * n, prior.var_scale + 0.5 * ss);
    state.params.tau2 = draw;
    draw
}

/// Conjugate draw of every hazard level given `gamma`, `alpha` and `b`.
pub fn gibbs_update_lambda<R: Rng>(
    state: &mut SamplerState,
    data: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> Vec<f64> {
    let k = data.n_intervals();
    let mut risk = vec![0.0; k];
    for (i, p) in data.patients.iter().enumerate() {
        let w = (state.zgamma[i] + state.params.alpha * state.b[i]).exp();
        for (r, e) in risk.iter_mut().zip(&p.exposure) {
            *r += w * e;
        }
    }
    let levels = state.params.hazard.levels_mut();
    for j in 0..k {
        levels[j] = gamma_draw(rng, prior.hazard_shape + data.events_per_interval[j], prior.hazard_rate + risk[j]);
    }
    let out = levels.to_vec();
    state.refresh_cumhaz(data);
    out
}

/// Unnormalised log full conditional of `b_i`.
fn b_log_target(state: &SamplerState, p: &PatientData, i: usize, s: f64, b: f64, with_survival: bool) -> f64 {
    let prm = &state.params;
    let mut lp = -0.5 * b * b / prm.tau2 - (p.n * b * b - 2.0 * b * s) / (2.0 * prm.sigma2);
    if with_survival {
        let eta = state.zgamma[i] + prm.alpha * b;
        lp -= eta.exp() * state.cumhaz[i];
        if p.event {
            lp += prm.alpha * b;
        }
    }
    lp
}

/// One random-walk Metropolis step on `b_i` with proposal sd `scale`.
pub fn mh_update_b<R: Rng>(state: &mut SamplerState, data: &ModelData, i: usize, scale: f64, rng: &mut R) -> MhOutcome {
    let p = &data.patients[i];
    let s = state.residual_sum(p);
    let current = state.b[i];
    let proposal = current + scale * std_normal(rng);
    let log_ratio = b_log_target(state, p, i, s, proposal, true) - b_log_target(state, p, i, s, current, true);
    let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        state.b[i] = proposal;
    }
    MhOutcome { accepted, accept_prob }
}

/// Exact normal draw of `b_i` when the survival term does not involve `b`
/// (survival part excluded, or `alpha = 0`).
pub fn draw_b_conjugate<R: Rng>(state: &mut SamplerState, data: &ModelData, i: usize, rng: &mut R) -> f64 {
    let p = &data.patients[i];
    let prec = p.n / state.params.sigma2 + 1.0 / state.params.tau2;
    let mean = state.residual_sum(p) / state.params.sigma2 / prec;
    let draw = mean + std_normal(rng) / prec.sqrt();
    state.b[i] = draw;
    draw
}

/// Survival log-likelihood terms that depend on `(gamma, alpha)`.
fn gamma_alpha_loglik(data: &ModelData, b: &[f64], cumhaz: &[f64], zgamma: &[f64], alpha: f64) -> f64 {
    data.patients
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let eta = zgamma[i] + alpha * b[i];
            let ev = if p.event { eta } else { 0.0 };
            ev - eta.exp() * cumhaz[i]
        })
        .sum()
}

/// Joint random-walk Metropolis step on `(gamma, alpha)`. `scales` holds one
/// proposal sd per covariate followed by one for `alpha`; when `alpha_free` is
/// false `alpha` stays at its current value.
pub fn mh_update_gamma_alpha<R: Rng>(
    state: &mut SamplerState,
    data: &ModelData,
    prior: &PriorSpec,
    scales: &[f64],
    alpha_free: bool,
    rng: &mut R,
) -> MhOutcome {
    let pc = data.n_covariates;
    debug_assert_eq!(scales.len(), pc + 1);
    let coef = |x: f64| -0.5 * (x - prior.coef_mean).powi(2) / prior.coef_var;
    let new_gamma: Vec<f64> = state.params.gamma.iter().zip(scales).map(|(g, s)| g + s * std_normal(rng)).collect();
    let new_alpha = if alpha_free { state.params.alpha + scales[pc] * std_normal(rng) } else { state.params.alpha };
    let new_zgamma: Vec<f64> = data.patients.iter().map(|p| dot(&new_gamma, &p.z)).collect();

    let mut log_ratio = gamma_alpha_loglik(data, &state.b, &state.cumhaz, &new_zgamma, new_alpha)
        - gamma_alpha_loglik(data, &state.b, &state.cumhaz, &state.zgamma, state.params.alpha);
    log_ratio += new_gamma.iter().map(|&g| coef(g)).sum::<f64>() - state.params.gamma.iter().map(|&g| coef(g)).sum::<f64>();
    if alpha_free {
        log_ratio += coef(new_alpha) - coef(state.params.alpha);
    }
    let accept_prob = if log_ratio >= 0.0 { 1.0 } else if log_ratio.is_nan() { 0.0 } else { log_ratio.exp() };
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        state.params.gamma = new_gamma;
        state.params.alpha = new_alpha;
        state.zgamma = new_zgamma;
    }
    MhOutcome { accepted, accept_prob }
}

/// Metropolis move along the direction that leaves the whole likelihood
/// unchanged: `beta0 + c`, every `b_i - c`, and (when the survival part is
/// active) every `log lambda_k + alpha c`. Only the priors enter the ratio.
pub fn mh_recenter<R: Rng>(
    state: &mut SamplerState,
    data: &ModelData,
    prior: &PriorSpec,
    scale: f64,
    with_survival: bool,
    rng: &mut R,
) -> MhOutcome {
    let c = scale * std_normal(rng);
    let prm = &state.params;
    let n = state.b.len() as f64;
    let sum_b: f64 = state.b.iter().sum();
    let mut log_ratio = -0.5 * ((prm.beta0 + c - prior.coef_mean).powi(2) - (prm.beta0 - prior.coef_mean).powi(2)) / prior.coef_var;
    log_ratio -= 0.5 * (n * c * c - 2.0 * c * sum_b) / prm.tau2;
    let shift = prm.alpha * c;
    if with_survival {
        // Gamma prior expressed on log lambda (Jacobian lambda included)
        let growth = shift.exp() - 1.0;
        for &l in prm.hazard.levels() {
            log_ratio += prior.hazard_shape * shift - prior.hazard_rate * l * growth;
        }
    }
    let accept_prob = if log_ratio >= 0.0 { 1.0 } else if log_ratio.is_nan() { 0.0 } else { log_ratio.exp() };
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        state.params.beta0 += c;
        for b in &mut state.b {
            *b -= c;
        }
        if with_survival && shift != 0.0 {
            let factor = shift.exp();
            for l in state.params.hazard.levels_mut() {
                *l *= factor;
            }
            state.refresh_cumhaz(data);
        }
    }
    MhOutcome { accepted, accept_prob }
}

impl SamplerState {
    pub(crate) fn set_alpha(&mut self, alpha: f64) {
        self.params.alpha = alpha;
    }

    /// Approximate posterior sd of `b_i` at the current state.
    pub(crate) fn b_conditional_sd(&self, data: &ModelData, i: usize) -> f64 {
        let p = &data.patients[i];
        let eta = self.zgamma[i] + self.params.alpha * self.b[i];
        let info = p.n / self.params.sigma2 + 1.0 / self.params.tau2 + self.params.alpha.powi(2) * eta.exp() * self.cumhaz[i];
        1.0 / info.sqrt()
    }

    /// Diagonal Fisher-information proposal sds for `(gamma, alpha)`.
    pub(crate) fn gamma_alpha_sd(&self, data: &ModelData, prior: &PriorSpec) -> Vec<f64> {
        let pc = data.n_covariates;
        let mut info = vec![1.0 / prior.coef_var; pc + 1];
        for (i, p) in data.patients.iter().enumerate() {
            let w = (self.zgamma[i] + self.params.alpha * self.b[i]).exp() * self.cumhaz[i];
            for (j, z) in p.z.iter().enumerate() {
                info[j] += w * z * z;
            }
            info[pc] += w * self.b[i] * self.b[i];
        }
        info.iter().map(|v| 1.0 / v.sqrt()).collect()
    }

    pub(crate) fn all_finite(&self) -> bool {
        let p = &self.params;
        p.beta0.is_finite()
            && p.beta1.is_finite()
            && p.alpha.is_finite()
            && p.gamma.iter().all(|g| g.is_finite())
            && p.sigma2.is_finite()
            && p.sigma2 > 0.0
            && p.tau2.is_finite()
            && p.tau2 > 0.0
            && p.hazard.levels().iter().all(|l| l.is_finite() && *l > 0.0)
            && self.b.iter().all(|b| b.is_finite())
    }
}

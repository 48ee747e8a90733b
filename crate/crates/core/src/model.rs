//! Domain types and log-density arithmetic for the shared random-intercept
//! joint model.
//!
//! Longitudinal submodel: `Y_i(t) = beta0 + beta1 * t + b_i + eps`, with
//! `eps ~ N(0, sigma2)` and `b_i ~ N(0, tau2)`.
//!
//! Survival submodel: `h_i(t) = h0(t) * exp(gamma' Z_i + alpha * b_i)` with a
//! piecewise-constant baseline hazard `h0`.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("patient {id}: {reason}")]
    InvalidPatient { id: String, reason: String },
    #[error("invalid hazard specification: {0}")]
    InvalidHazard(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("rejected non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// One subject: biomarker history, follow-up outcome and baseline covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub obs_times: Vec<f64>,
    pub obs_values: Vec<f64>,
    pub event_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        obs_times: Vec<f64>,
        obs_values: Vec<f64>,
        event_time: f64,
        event: bool,
        covariates: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let rec = Self { id: id.into(), obs_times, obs_values, event_time, event, covariates };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidPatient { id: self.id.clone(), reason };
        if self.obs_times.len() != self.obs_values.len() {
            return Err(bad(format!(
                "{} observation times but {} values",
                self.obs_times.len(),
                self.obs_values.len()
            )));
        }
        if !(self.event_time.is_finite() && self.event_time > 0.0) {
            return Err(bad(format!("event_time must be positive, got {}", self.event_time)));
        }
        for (j, (&t, &y)) in self.obs_times.iter().zip(&self.obs_values).enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(bad(format!("non-finite observation at index {j}")));
            }
            if t < 0.0 {
                return Err(bad(format!("negative observation time {t}")));
            }
            if t > self.event_time {
                return Err(bad(format!(
                    "observation time {t} after event_time {}",
                    self.event_time
                )));
            }
            if j > 0 && t <= self.obs_times[j - 1] {
                return Err(bad(format!("observation times not strictly increasing at index {j}")));
            }
        }
        if self.covariates.iter().any(|z| !z.is_finite()) {
            return Err(bad("non-finite covariate".into()));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.obs_times.len()
    }

    /// The record as seen at landmark `t`: only measurements taken at or
    /// before `t` are kept. Outcome fields are left untouched.
    pub fn history_until(&self, t: f64) -> PatientRecord {
        let keep = self.obs_times.partition_point(|&s| s <= t);
        PatientRecord {
            id: self.id.clone(),
            obs_times: self.obs_times[..keep].to_vec(),
            obs_values: self.obs_values[..keep].to_vec(),
            event_time: self.event_time,
            event: self.event,
            covariates: self.covariates.clone(),
        }
    }
}

/// A set of patients sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub n_covariates: usize,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, n_covariates: usize) -> Result<Self, ModelError> {
        for p in &patients {
            p.validate()?;
            if p.covariates.len() != n_covariates {
                return Err(ModelError::InvalidPatient {
                    id: p.id.clone(),
                    reason: format!(
                        "expected {n_covariates} covariates, found {}",
                        p.covariates.len()
                    ),
                });
            }
        }
        Ok(Self { patients, n_covariates })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.patients.iter().filter(|p| p.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    pub fn max_follow_up(&self) -> f64 {
        self.patients.iter().map(|p| p.event_time).fold(0.0, f64::max)
    }
}

/// Piecewise-constant baseline hazard.
///
/// Interval `k` is `(cuts[k-1], cuts[k]]` with an implicit leading boundary at
/// zero; the last interval is open-ended. A time lying exactly on a cut belongs
/// to the interval on its left.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSpec {
    cuts: Vec<f64>,
    levels: Vec<f64>,
}

impl HazardSpec {
    pub fn new(cuts: Vec<f64>, levels: Vec<f64>) -> Result<Self, ModelError> {
        if levels.len() != cuts.len() + 1 {
            return Err(ModelError::InvalidHazard(format!(
                "{} cuts require {} levels, got {}",
                cuts.len(),
                cuts.len() + 1,
                levels.len()
            )));
        }
        validate_cuts(&cuts)?;
        if levels.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(ModelError::InvalidHazard("hazard levels must be positive".into()));
        }
        Ok(Self { cuts, levels })
    }

    pub fn constant(level: f64) -> Result<Self, ModelError> {
        Self::new(Vec::new(), vec![level])
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn n_intervals(&self) -> usize {
        self.levels.len()
    }

    /// Replaces the levels, keeping the cut points.
    pub fn with_levels(&self, levels: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.cuts.clone(), levels)
    }

    pub(crate) fn levels_mut(&mut self) -> &mut [f64] {
        &mut self.levels
    }

    /// Index of the interval containing `t` (left-interval rule at cuts).
    pub fn interval_of(&self, t: f64) -> usize {
        interval_index(&self.cuts, t)
    }

    pub fn level_at(&self, t: f64) -> f64 {
        self.levels[self.interval_of(t)]
    }

    /// `H0(t)`, exact.
    pub fn cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut start = 0.0;
        for (k, &level) in self.levels.iter().enumerate() {
            let end = self.cuts.get(k).copied().unwrap_or(f64::INFINITY);
            if t <= end {
                return total + level * (t - start);
            }
            total += level * (end - start);
            start = end;
        }
        total
    }
}

pub(crate) fn validate_cuts(cuts: &[f64]) -> Result<(), ModelError> {
    if cuts.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
        return Err(ModelError::InvalidHazard("cut points must be positive and finite".into()));
    }
    if cuts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModelError::InvalidHazard("cut points must be strictly increasing".into()));
    }
    Ok(())
}

pub(crate) fn interval_index(cuts: &[f64], t: f64) -> usize {
    cuts.partition_point(|&c| c < t)
}

/// Time spent in each interval of `cuts` over `[0, t]`.
pub fn interval_exposures(cuts: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; cuts.len() + 1];
    let mut start = 0.0;
    for (k, slot) in out.iter_mut().enumerate() {
        let end = cuts.get(k).copied().unwrap_or(f64::INFINITY);
        if t <= start {
            break;
        }
        *slot = t.min(end) - start;
        start = end;
    }
    out
}

/// Full parameter state of the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub beta0: f64,
    pub beta1: f64,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub hazard: HazardSpec,
}

impl JointParams {
    /// `gamma' z + alpha * b`
    pub fn linear_predictor(&self, z: &[f64], b: f64) -> f64 {
        dot(&self.gamma, z) + self.alpha * b
    }

    pub fn validate(&self, n_covariates: usize) -> Result<(), ModelError> {
        if self.gamma.len() != n_covariates {
            return Err(ModelError::InvalidParams(format!(
                "gamma has length {} but data has {n_covariates} covariates",
                self.gamma.len()
            )));
        }
        if !(self.sigma2 > 0.0 && self.tau2 > 0.0) {
            return Err(ModelError::InvalidParams("variances must be positive".into()));
        }
        Ok(())
    }

    /// True values used throughout the simulation study, with a placeholder
    /// constant baseline hazard (normally replaced by calibration).
    pub fn table1_truth() -> Self {
        Self {
            beta0: 2.0,
            beta1: 0.5,
            gamma: vec![0.75],
            alpha: 1.0,
            sigma2: 0.25,
            tau2: 0.50,
            hazard: HazardSpec::constant(0.2).expect("positive level"),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hyperparameters: Gaussian priors on regression coefficients, inverse-gamma
/// (shape, scale) on the two variances, Gamma (shape, rate) on each hazard level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub coef_mean: f64,
    pub coef_var: f64,
    pub var_shape: f64,
    pub var_scale: f64,
    pub hazard_shape: f64,
    pub hazard_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            coef_mean: 0.0,
            coef_var: 100.0,
            var_shape: 2.0,
            var_scale: 1.0,
            hazard_shape: 0.1,
            hazard_rate: 0.1,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = [self.coef_var, self.var_shape, self.var_scale, self.hazard_shape, self.hazard_rate]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok && self.coef_mean.is_finite() {
            Ok(())
        } else {
            Err(ModelError::InvalidParams("prior variances, shapes, scales and rates must be positive".into()))
        }
    }
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Inverse-gamma in shape/scale form: density proportional to
/// `x^(-shape-1) exp(-scale/x)`. Returns `-inf` outside the support.
pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Gamma in shape/rate form. Returns `-inf` outside the support.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `beta0 + beta1 * t + b`
pub fn longitudinal_mean(params: &JointParams, b: f64, t: f64) -> f64 {
    params.beta0 + params.beta1 * t + b
}

/// Gaussian log-likelihood of the patient's measurements given `b`.
pub fn longitudinal_loglik(params: &JointParams, patient: &PatientRecord, b: f64) -> Result<f64, ModelError> {
    if !b.is_finite() || !params.beta0.is_finite() || !params.beta1.is_finite() {
        return Err(ModelError::NonFinite("longitudinal mean"));
    }
    if !(params.sigma2 > 0.0 && params.sigma2.is_finite()) {
        return Err(ModelError::Precondition("sigma2 must be positive".into()));
    }
    let mut total = 0.0;
    for (&t, &y) in patient.obs_times.iter().zip(&patient.obs_values) {
        if !t.is_finite() || !y.is_finite() {
            return Err(ModelError::NonFinite("observation"));
        }
        total += normal_logpdf(y, longitudinal_mean(params, b, t), params.sigma2);
    }
    Ok(total)
}

pub fn cumulative_baseline_hazard(hazard: &HazardSpec, t: f64) -> f64 {
    hazard.cumulative(t)
}

/// `delta * [log h0(T) + eta] - exp(eta) * H0(T)` with `eta = gamma'Z + alpha b`.
pub fn survival_loglik(params: &JointParams, patient: &PatientRecord, b: f64) -> Result<f64, ModelError> {
    if !b.is_finite() {
        return Err(ModelError::NonFinite("random effect"));
    }
    let eta = params.linear_predictor(&patient.covariates, b);
    if !eta.is_finite() {
        return Err(ModelError::NonFinite("linear predictor"));
    }
    let t = patient.event_time;
    let mut ll = -eta.exp() * params.hazard.cumulative(t);
    if patient.event {
        ll += params.hazard.level_at(t).ln() + eta;
    }
    Ok(ll)
}

/// Joint log-prior density. Support violations yield `-inf`.
pub fn log_prior(params: &JointParams, prior: &PriorSpec) -> f64 {
    let coef = |x: f64| normal_logpdf(x, prior.coef_mean, prior.coef_var);
    let mut total = coef(params.beta0) + coef(params.beta1) + coef(params.alpha);
    total += params.gamma.iter().map(|&g| coef(g)).sum::<f64>();
    total += inv_gamma_logpdf(params.sigma2, prior.var_shape, prior.var_scale);
    total += inv_gamma_logpdf(params.tau2, prior.var_shape, prior.var_scale);
    for &level in params.hazard.levels() {
        total += gamma_logpdf(level, prior.hazard_shape, prior.hazard_rate);
    }
    total
}

/// `P(T > u | T > t, b) = exp(-exp(gamma'z + alpha b) [H0(u) - H0(t)])`.
pub fn conditional_survival_given_b(
    params: &JointParams,
    b: f64,
    z: &[f64],
    t: f64,
    u: f64,
) -> Result<f64, ModelError> {
    if !(t >= 0.0 && u >= t) {
        return Err(ModelError::Precondition(format!("need 0 <= t <= u, got t={t}, u={u}")));
    }
    let eta = params.linear_predictor(z, b);
    let dh = params.hazard.cumulative(u) - params.hazard.cumulative(t);
    Ok((-eta.exp() * dh).exp())
}

/// Standard normal CDF, used by a few tests and the simulator's sanity checks.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[allow(dead_code)]
pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with(hazard: HazardSpec) -> JointParams {
        JointParams { hazard, ..JointParams::table1_truth() }
    }

    fn patient(times: &[f64], values: &[f64], t: f64, event: bool, z: &[f64]) -> PatientRecord {
        PatientRecord::new("p", times.to_vec(), values.to_vec(), t, event, z.to_vec()).unwrap()
    }

    #[test]
    fn longitudinal_mean_values() {
        let p = JointParams::table1_truth();
        assert_eq!(longitudinal_mean(&p, 0.0, 0.0), 2.0);
        let zero = JointParams { beta0: 0.0, beta1: 0.0, ..p.clone() };
        assert_eq!(longitudinal_mean(&zero, 0.0, 7.0), 0.0);
        assert_relative_eq!(longitudinal_mean(&p, -0.3, 2.0), 2.7, epsilon = 1e-12);
    }

    #[test]
    fn longitudinal_loglik_edge_cases() {
        let p = JointParams { sigma2: 1.0, ..JointParams::table1_truth() };
        let empty = patient(&[], &[], 1.0, false, &[0.0]);
        assert_eq!(longitudinal_loglik(&p, &empty, 0.3).unwrap(), 0.0);
        let one = patient(&[1.0], &[2.5], 2.0, false, &[0.0]);
        assert_relative_eq!(longitudinal_loglik(&p, &one, 0.0).unwrap(), -0.5 * (2.0 * PI).ln(), epsilon = 1e-14);
        assert!(longitudinal_loglik(&p, &one, f64::NAN).is_err());
    }

    #[test]
    fn longitudinal_loglik_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = JointParams { sigma2: 0.37, ..JointParams::table1_truth() };
        let times = [0.0, 0.4, 1.1, 2.0, 3.3];
        let values: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..5.0)).collect();
        let rec = patient(&times, &values, 4.0, true, &[0.2]);
        let b = -0.41;
        let oracle: f64 = times
            .iter()
            .zip(&values)
            .map(|(&t, &y)| {
                let m = 2.0 + 0.5 * t + b;
                let sd = 0.37f64.sqrt();
                -((y - m) / sd).powi(2) / 2.0 - sd.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum();
        assert_relative_eq!(longitudinal_loglik(&p, &rec, b).unwrap(), oracle, max_relative = 1e-13);
    }

    #[test]
    fn cumulative_hazard_examples() {
        let h = HazardSpec::new(vec![1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(h.cumulative(0.0), 0.0);
        assert_relative_eq!(h.cumulative(1.5), 2.0, epsilon = 1e-14);
        assert_relative_eq!(h.cumulative(1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn hazard_rejects_bad_specs() {
        assert!(HazardSpec::new(vec![2.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(HazardSpec::new(vec![1.0], vec![1.0]).is_err());
        assert!(HazardSpec::new(vec![1.0], vec![1.0, 0.0]).is_err());
        assert!(HazardSpec::new(vec![0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn level_at_cut_uses_left_interval() {
        let h = HazardSpec::new(vec![1.0, 2.0], vec![0.5, 3.0, 7.0]).unwrap();
        assert_eq!(h.level_at(1.0), 0.5);
        assert_eq!(h.level_at(1.0 + 1e-12), 3.0);
        assert_eq!(h.level_at(2.0), 3.0);
        assert_eq!(h.level_at(9.0), 7.0);
    }

    #[test]
    fn survival_loglik_examples() {
        // eta = 0 needs gamma'z = 0 and alpha*b = 0
        let h = HazardSpec::constant(0.4).unwrap();
        let p = params_with(h);
        let censored = patient(&[], &[], 5.0, false, &[0.0]);
        // H0(5) = 2
        assert_relative_eq!(survival_loglik(&p, &censored, 0.0).unwrap(), -2.0, epsilon = 1e-14);

        let p1 = params_with(HazardSpec::new(vec![0.5], vec![3.0, 1.0]).unwrap());
        // H0(T) = 3*0.5 + 1*(T-0.5) = 1 => T = 0.5 would sit on the cut; use
        // levels so that T is interior: H0(T)=1 with T in second interval.
        let p1 = JointParams { hazard: p1.hazard.with_levels(vec![1.0, 1.0]).unwrap(), ..p1 };
        let ev = patient(&[], &[], 1.0, true, &[0.0]);
        assert_relative_eq!(survival_loglik(&p1, &ev, 0.0).unwrap(), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn survival_loglik_event_on_cut_uses_left_level() {
        let p = params_with(HazardSpec::new(vec![1.0], vec![2.0, 5.0]).unwrap());
        let ev = patient(&[], &[], 1.0, true, &[0.0]);
        let expected = 2.0f64.ln() - 2.0;
        assert_relative_eq!(survival_loglik(&p, &ev, 0.0).unwrap(), expected, epsilon = 1e-14);
    }

    /// Survival-function oracle: log h(T)^delta + log S(T), computed by
    /// integrating the hazard with a fine midpoint rule on each interval.
    fn survival_oracle(p: &JointParams, rec: &PatientRecord, b: f64) -> f64 {
        let eta = dot(&p.gamma, &rec.covariates) + p.alpha * b;
        let t = rec.event_time;
        let mut edges = vec![0.0];
        edges.extend(p.hazard.cuts().iter().copied().filter(|&c| c < t));
        edges.push(t);
        let mut cum = 0.0;
        for w in edges.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            cum += p.hazard.level_at(mid) * (w[1] - w[0]);
        }
        let log_s = -eta.exp() * cum;
        let log_h = if rec.event {
            let k = p.hazard.cuts().partition_point(|&c| c < t);
            p.hazard.levels()[k].ln() + eta
        } else {
            0.0
        };
        log_h + log_s
    }

    #[test]
    fn survival_loglik_matches_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(0..4usize);
            let mut cuts: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..6.0)).collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup();
            let levels = (0..=cuts.len()).map(|_| rng.random_range(0.01..2.0)).collect();
            let mut p = params_with(HazardSpec::new(cuts, levels).unwrap());
            p.gamma = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            p.alpha = rng.random_range(-2.0..2.0);
            let z = [rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0)];
            let rec = patient(&[], &[], rng.random_range(0.01..8.0), rng.random_bool(0.5), &z);
            let b = rng.random_range(-2.0..2.0);
            let got = survival_loglik(&p, &rec, b).unwrap();
            assert_relative_eq!(got, survival_oracle(&p, &rec, b), max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_prior_component_oracle() {
        let prior = PriorSpec::default();
        // IG mode = scale/(shape+1); Gamma mode for shape < 1 does not exist,
        // so use a prior with shape > 1 for the lambda component.
        let prior = PriorSpec { hazard_shape: 3.0, hazard_rate: 2.0, ..prior };
        let ig_mode = prior.var_scale / (prior.var_shape + 1.0);
        let g_mode = (prior.hazard_shape - 1.0) / prior.hazard_rate;
        let p = JointParams {
            beta0: 0.0,
            beta1: 0.0,
            gamma: vec![0.0, 0.0],
            alpha: 0.0,
            sigma2: ig_mode,
            tau2: ig_mode,
            hazard: HazardSpec::new(vec![1.0], vec![g_mode, g_mode]).unwrap(),
        };
        let normal0 = -0.5 * (2.0 * PI * 100.0).ln();
        // IG(2,1) at 1/3: 2 ln 1 - ln Γ(2) - 3 ln(1/3) - 3
        let ig = 3.0 * 3.0f64.ln() - 3.0;
        // Gamma(3,2) at 1: 3 ln 2 - ln Γ(3) + 0 - 2
        let ga = 3.0 * 2.0f64.ln() - 2.0f64.ln() - 2.0;
        let expected = 5.0 * normal0 + 2.0 * ig + 2.0 * ga;
        assert_relative_eq!(log_prior(&p, &prior), expected, max_relative = 1e-12);
    }

    #[test]
    fn log_prior_support_violation_is_neg_infinity() {
        let mut p = JointParams::table1_truth();
        p.sigma2 = -1.0;
        let lp = log_prior(&p, &PriorSpec::default());
        assert_eq!(lp, f64::NEG_INFINITY);
        assert!((lp + 3.0).is_infinite());
    }

    #[test]
    fn doubling_coef_var_shifts_zero_coefficient_logprior() {
        let mut p = JointParams::table1_truth();
        p.beta0 = 0.0;
        p.beta1 = 0.0;
        p.alpha = 0.0;
        p.gamma = vec![0.0];
        let a = PriorSpec::default();
        let b = PriorSpec { coef_var: 200.0, ..a };
        assert_relative_eq!(log_prior(&p, &a) - log_prior(&p, &b), 4.0 * 0.5 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn conditional_survival_examples() {
        let p = params_with(HazardSpec::constant(1.0).unwrap());
        let z = [0.0];
        assert_eq!(conditional_survival_given_b(&p, 0.0, &z, 1.3, 1.3).unwrap(), 1.0);
        let s = conditional_survival_given_b(&p, 0.0, &z, 0.0, 2.0f64.ln()).unwrap();
        assert_relative_eq!(s, 0.5, epsilon = 1e-14);
        assert!(conditional_survival_given_b(&p, 0.0, &z, 2.0, 1.0).is_err());
    }

    #[test]
    fn conditional_survival_is_ratio_of_survivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let levels = vec![rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
            let mut p = params_with(HazardSpec::new(vec![1.0, 2.5], levels).unwrap());
            p.alpha = rng.random_range(-1.5..1.5);
            let z = [rng.random_range(-1.0..1.0)];
            let b = rng.random_range(-1.0..1.0);
            let t = rng.random_range(0.0..4.0);
            let u = t + rng.random_range(0.0..4.0);
            let eta = p.gamma[0] * z[0] + p.alpha * b;
            let surv = |x: f64| (-eta.exp() * p.hazard.cumulative(x)).exp();
            let got = conditional_survival_given_b(&p, b, &z, t, u).unwrap();
            assert_relative_eq!(got, surv(u) / surv(t), max_relative = 1e-12);
        }
    }

    #[test]
    fn patient_validation_rejects_bad_records() {
        assert!(PatientRecord::new("a", vec![0.0, 0.0], vec![1.0, 1.0], 1.0, true, vec![]).is_err());
        assert!(PatientRecord::new("a", vec![0.0, 2.0], vec![1.0, 1.0], 1.0, true, vec![]).is_err());
        assert!(PatientRecord::new("a", vec![0.0], vec![1.0, 1.0], 1.0, true, vec![]).is_err());
        assert!(PatientRecord::new("a", vec![], vec![], 0.0, true, vec![]).is_err());
        assert!(PatientRecord::new("a", vec![0.0, 1.0], vec![1.0, 1.0], 1.0, true, vec![]).is_ok());
    }

    #[test]
    fn history_truncation() {
        let rec = patient(&[0.0, 0.5, 1.0, 1.5], &[1.0, 2.0, 3.0, 4.0], 2.0, true, &[0.1]);
        let h = rec.history_until(1.0);
        assert_eq!(h.obs_times, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.obs_values, vec![1.0, 2.0, 3.0]);
    }

    fn arb_hazard() -> impl Strategy<Value = HazardSpec> {
        (prop::collection::vec(0.05f64..3.0, 0..5), prop::collection::vec(0.01f64..5.0, 6)).prop_map(|(gaps, levels)| {
            let mut acc = 0.0;
            let cuts: Vec<f64> = gaps
                .iter()
                .map(|g| {
                    acc += g;
                    acc
                })
                .collect();
            let k = cuts.len() + 1;
            HazardSpec::new(cuts, levels[..k].to_vec()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cumulative_hazard_is_nondecreasing_and_continuous(h in arb_hazard(), a in 0.0f64..20.0, d in 0.0f64..5.0) {
            prop_assert!(h.cumulative(a + d) >= h.cumulative(a));
            prop_assert_eq!(h.cumulative(0.0), 0.0);
            let eps = 1e-9;
            prop_assert!((h.cumulative(a + eps) - h.cumulative(a)).abs() < 1e-7);
        }

        #[test]
        fn conditional_survival_monotone_in_horizon(h in arb_hazard(), b in -3.0f64..3.0, t in 0.0f64..5.0, d1 in 0.0f64..5.0, d2 in 0.0f64..5.0) {
            let p = params_with(h);
            let z = [0.3];
            let s1 = conditional_survival_given_b(&p, b, &z, t, t + d1).unwrap();
            let s2 = conditional_survival_given_b(&p, b, &z, t, t + d1 + d2).unwrap();
            prop_assert!(s2 <= s1);
            prop_assert!(s1 > 0.0 && s1 <= 1.0);
        }

        #[test]
        fn longitudinal_loglik_permutation_invariant(vals in prop::collection::vec(-5.0f64..5.0, 1..8), b in -2.0f64..2.0, seed in 0u64..1000) {
            let p = JointParams::table1_truth();
            let times: Vec<f64> = (0..vals.len()).map(|j| j as f64 * 0.5).collect();
            let rec = patient(&times, &vals, 10.0, false, &[0.0]);
            // evaluate the likelihood on a permuted copy of the (time, value) pairs
            let mut pairs: Vec<(f64, f64)> = times.iter().copied().zip(vals.iter().copied()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..pairs.len()).rev() {
                let j = rng.random_range(0..=i);
                pairs.swap(i, j);
            }
            let permuted = PatientRecord {
                obs_times: pairs.iter().map(|x| x.0).collect(),
                obs_values: pairs.iter().map(|x| x.1).collect(),
                ..rec.clone()
            };
            let a = longitudinal_loglik(&p, &rec, b).unwrap();
            let c = longitudinal_loglik(&p, &permuted, b).unwrap();
            prop_assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn log_prior_sigma2_change_is_ig_difference(s1 in 0.01f64..5.0, s2 in 0.01f64..5.0) {
            let prior = PriorSpec::default();
            let mut p = JointParams::table1_truth();
            p.sigma2 = s1;
            let a = log_prior(&p, &prior);
            p.sigma2 = s2;
            let c = log_prior(&p, &prior);
            let diff = inv_gamma_logpdf(s2, 2.0, 1.0) - inv_gamma_logpdf(s1, 2.0, 1.0);
            prop_assert!(((c - a) - diff).abs() < 1e-9);
        }
    }
}

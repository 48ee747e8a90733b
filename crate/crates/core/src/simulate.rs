//! Synthetic cohorts from the joint data-generating process.
//!
//! Every patient draws from its own ChaCha stream (`stream = patient index`)
//! seeded by `SimConfig::seed`, so cohorts can be generated in any order or
//! in parallel and still come out bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Cohort, HazardSpec, JointParams, ModelError, PatientRecord};

/// Seed used by [`calibrate_baseline_hazard`] for its Monte-Carlo cohort.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA11_B4A7_E000;
pub const CALIBRATION_PATIENTS: usize = 10_000;
const CALIBRATION_TOL: f64 = 0.01;
const CALIBRATION_MAX_STEPS: usize = 60;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("calibration did not reach event fraction {target} within {steps} bisection steps (last {last})")]
    Calibration { target: f64, steps: usize, last: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateDist {
    StandardNormal,
    Bernoulli(f64),
}

impl CovariateDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateDist::StandardNormal => rng.sample(StandardNormal),
            CovariateDist::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::fmt::Display for CovariateDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovariateDist::StandardNormal => write!(f, "normal"),
            CovariateDist::Bernoulli(p) => write!(f, "bernoulli({p})"),
        }
    }
}

impl std::str::FromStr for CovariateDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "normal" || s == "standard-normal" {
            return Ok(CovariateDist::StandardNormal);
        }
        if let Some(inner) = s.strip_prefix("bernoulli(").and_then(|r| r.strip_suffix(')')) {
            let p: f64 = inner.trim().parse().map_err(|_| format!("bad probability in {s}"))?;
            if (0.0..=1.0).contains(&p) {
                return Ok(CovariateDist::Bernoulli(p));
            }
        }
        Err(format!("unknown covariate distribution '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_patients: usize,
    pub max_follow_up: f64,
    pub true_params: JointParams,
    /// Nominal visit times. The visit at time zero is the enrolment visit and
    /// is never jittered.
    pub visit_grid: Vec<f64>,
    pub visit_jitter: f64,
    pub covariates: Vec<CovariateDist>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            max_follow_up: 5.0,
            true_params: JointParams::table1_truth(),
            visit_grid: (0..=10).map(|k| k as f64 * 0.5).collect(),
            visit_jitter: 0.15,
            covariates: vec![CovariateDist::StandardNormal],
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_patients == 0 {
            return Err(SimError::Config("n_patients must be at least 1".into()));
        }
        if !(self.max_follow_up > 0.0 && self.max_follow_up.is_finite()) {
            return Err(SimError::Config("max_follow_up must be positive".into()));
        }
        if self.covariates.len() != self.true_params.gamma.len() {
            return Err(SimError::Config(format!(
                "{} covariate distributions but gamma has length {}",
                self.covariates.len(),
                self.true_params.gamma.len()
            )));
        }
        if self.visit_grid.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(SimError::Config("visit grid times must be nonnegative".into()));
        }
        if self.visit_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::Config("visit grid must be strictly increasing".into()));
        }
        if !(self.visit_jitter >= 0.0) {
            return Err(SimError::Config("visit_jitter must be nonnegative".into()));
        }
        let min_gap = self.visit_grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if self.visit_jitter > 0.0 && self.visit_jitter >= 0.5 * min_gap {
            return Err(SimError::Config(format!(
                "visit_jitter {} must be below half the minimum grid spacing {min_gap}",
                self.visit_jitter
            )));
        }
        let p = &self.true_params;
        if !(p.sigma2 >= 0.0 && p.tau2 >= 0.0) {
            return Err(SimError::Config("true variances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Latent quantities behind a simulated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub ids: Vec<String>,
    pub b: Vec<f64>,
    pub t_star: Vec<f64>,
}

/// Smallest `t` with `exp(eta) * H0(t) = -ln(u01)`.
pub fn invert_survival(hazard: &HazardSpec, eta: f64, u01: f64) -> f64 {
    debug_assert!(u01 > 0.0 && u01 < 1.0);
    let target = -u01.ln() * (-eta).exp();
    let mut acc = 0.0;
    let mut start = 0.0;
    let cuts = hazard.cuts();
    for (k, &level) in hazard.levels().iter().enumerate() {
        match cuts.get(k) {
            Some(&end) => {
                let mass = level * (end - start);
                if acc + mass >= target {
                    return start + (target - acc) / level;
                }
                acc += mass;
                start = end;
            }
            None => return start + (target - acc) / level,
        }
    }
    f64::INFINITY
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Uniform draw on the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

struct SimulatedPatient {
    record: PatientRecord,
    b: f64,
    t_star: f64,
}

fn simulate_patient(config: &SimConfig, index: usize) -> Result<SimulatedPatient, ModelError> {
    let p = &config.true_params;
    let mut rng = patient_rng(config.seed, index);
    let z: Vec<f64> = config.covariates.iter().map(|d| d.sample(&mut rng)).collect();
    let b = p.tau2.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let eta = p.linear_predictor(&z, b);
    let t_star = invert_survival(&p.hazard, eta, open_unit(&mut rng));
    let event = t_star <= config.max_follow_up;
    let event_time = t_star.min(config.max_follow_up);

    let sd = p.sigma2.sqrt();
    let mut times = Vec::with_capacity(config.visit_grid.len());
    let mut values = Vec::with_capacity(config.visit_grid.len());
    for &nominal in &config.visit_grid {
        // jitter and noise are drawn for every nominal visit so the stream
        // layout does not depend on the outcome
        let jitter = if config.visit_jitter > 0.0 {
            rng.random_range(-config.visit_jitter..=config.visit_jitter)
        } else {
            0.0
        };
        let noise: f64 = rng.sample(StandardNormal);
        let t = if nominal == 0.0 { 0.0 } else { (nominal + jitter).max(0.0) };
        if t > event_time {
            continue;
        }
        times.push(t);
        values.push(p.beta0 + p.beta1 * t + b + sd * noise);
    }
    let record = PatientRecord::new(format!("{}", index + 1), times, values, event_time, event, z)?;
    Ok(SimulatedPatient { record, b, t_star })
}

/// Draws a cohort together with the latent `b_i` and uncensored event times.
pub fn simulate_cohort(config: &SimConfig) -> Result<(Cohort, TruthRecord), SimError> {
    config.validate()?;
    let sims: Vec<SimulatedPatient> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(config, i))
        .collect::<Result<_, _>>()?;
    let truth = TruthRecord {
        ids: sims.iter().map(|s| s.record.id.clone()).collect(),
        b: sims.iter().map(|s| s.b).collect(),
        t_star: sims.iter().map(|s| s.t_star).collect(),
    };
    let cohort = Cohort::new(sims.into_iter().map(|s| s.record).collect(), config.covariates.len())?;
    Ok((cohort, truth))
}

/// Scales the baseline hazard of `config.true_params` by a common factor so
/// that the Monte-Carlo fraction of events before `max_follow_up` matches
/// `target_event_fraction` to within 0.01.
pub fn calibrate_baseline_hazard(target_event_fraction: f64, config: &SimConfig) -> Result<HazardSpec, SimError> {
    if !(target_event_fraction > 0.0 && target_event_fraction < 1.0) {
        return Err(SimError::Config(format!("target event fraction {target_event_fraction} not in (0,1)")));
    }
    config.validate()?;
    let p = &config.true_params;
    let base = &p.hazard;
    let horizon_mass = base.cumulative(config.max_follow_up);

    // Event iff exp(eta) * scale * H0(horizon) >= E with E ~ Exp(1).
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let thresholds: Vec<f64> = (0..CALIBRATION_PATIENTS)
        .map(|_| {
            let z: Vec<f64> = config.covariates.iter().map(|d| d.sample(&mut rng)).collect();
            let b = p.tau2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let e = -open_unit(&mut rng).ln();
            e * (-p.linear_predictor(&z, b)).exp() / horizon_mass
        })
        .collect();
    let fraction = |log_scale: f64| {
        let s = log_scale.exp();
        thresholds.iter().filter(|&&th| th <= s).count() as f64 / thresholds.len() as f64
    };

    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..CALIBRATION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let f = fraction(mid);
        let err = (f - target_event_fraction).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= 1e-3 {
            break;
        }
        if f < target_event_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_TOL {
        return Err(SimError::Calibration {
            target: target_event_fraction,
            steps: CALIBRATION_MAX_STEPS,
            last: fraction(best.1),
        });
    }
    let scale = best.1.exp();
    Ok(base.with_levels(base.levels().iter().map(|l| l * scale).collect())?)
}

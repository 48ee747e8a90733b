//! Flat `key = value` run configuration shared by all subcommands.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Lists are comma separated. The resolved configuration is written
//! back in the same format next to every output.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::mcmc::{CutRule, McmcConfig};
use crate::model::{HazardSpec, JointParams, PriorSpec};
use crate::simulate::{CovariateDist, SimConfig};
use crate::study::{EvalSpec, StudyConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("config key '{key}': {msg}")]
    Value { key: String, msg: String },
    #[error("cannot read config {path}: {msg}")]
    Read { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub max_follow_up: f64,
    pub visit_step: f64,
    pub visit_jitter: f64,
    pub covariates: Vec<CovariateDist>,
    pub beta0: f64,
    pub beta1: f64,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub baseline_hazard: f64,
    pub target_event_fraction: Option<f64>,
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub adapt_window: usize,
    pub target_accept: f64,
    pub hazard_intervals: usize,
    pub hazard_cuts: Option<Vec<f64>>,
    pub prior_coef_mean: f64,
    pub prior_coef_var: f64,
    pub prior_var_shape: f64,
    pub prior_var_scale: f64,
    pub prior_hazard_shape: f64,
    pub prior_hazard_rate: f64,
    pub replications: usize,
    pub landmarks: Vec<f64>,
    pub horizons: Vec<f64>,
    pub brier_end: f64,
    pub brier_points: usize,
    pub max_prediction_draws: usize,
}

/// Which subcommand the defaults are for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Single simulate/fit/predict runs at full scale.
    Single,
    /// Accuracy evaluation at landmark 0.
    Evaluate,
    /// The replicated study at desk scale.
    Replicate,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let truth = JointParams::table1_truth();
        let mut cfg = Self {
            seed: 1,
            n_patients: 500,
            max_follow_up: 5.0,
            visit_step: 0.5,
            visit_jitter: 0.15,
            covariates: vec![CovariateDist::StandardNormal],
            beta0: truth.beta0,
            beta1: truth.beta1,
            gamma: truth.gamma.clone(),
            alpha: truth.alpha,
            sigma2: truth.sigma2,
            tau2: truth.tau2,
            baseline_hazard: truth.hazard.levels()[0],
            target_event_fraction: Some(0.675),
            chains: 3,
            iters: 5000,
            burnin: 1000,
            thin: 1,
            adapt_window: 50,
            target_accept: 0.35,
            hazard_intervals: 5,
            hazard_cuts: None,
            prior_coef_mean: 0.0,
            prior_coef_var: 100.0,
            prior_var_shape: 2.0,
            prior_var_scale: 1.0,
            prior_hazard_shape: 0.1,
            prior_hazard_rate: 0.1,
            replications: 50,
            landmarks: vec![1.0, 2.0, 3.0],
            horizons: (1..=10).map(|k| k as f64 * 0.5).collect(),
            brier_end: 5.0,
            brier_points: 21,
            max_prediction_draws: 300,
        };
        match profile {
            Profile::Single => {}
            Profile::Evaluate => {
                cfg.landmarks = vec![0.0];
                cfg.horizons = vec![1.0, 3.0, 5.0];
            }
            Profile::Replicate => {
                cfg.n_patients = 300;
                cfg.iters = 2000;
                cfg.burnin = 500;
                cfg.landmarks = vec![0.0];
                cfg.horizons = vec![1.0, 3.0, 5.0];
            }
        }
        cfg
    }

    /// Applies every assignment in `text`; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Line { line: n + 1, msg: format!("expected key = value, got '{line}'") });
            };
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                ConfigError::Value { key, msg } => ConfigError::Line { line: n + 1, msg: format!("{key}: {msg}") },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), msg: e.to_string() })?;
        self.apply_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |msg: String| ConfigError::Value { key: key.to_string(), msg };
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse::<T>().map_err(|_| format!("cannot parse '{v}'"))
        }
        fn list(v: &str) -> Result<Vec<f64>, String> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',').map(|x| num::<f64>(x.trim())).collect()
        }
        let none = |v: &str| v.eq_ignore_ascii_case("none");
        match key {
            "seed" => self.seed = num(value).map_err(err)?,
            "n_patients" => self.n_patients = num(value).map_err(err)?,
            "max_follow_up" => self.max_follow_up = num(value).map_err(err)?,
            "visit_step" => self.visit_step = num(value).map_err(err)?,
            "visit_jitter" => self.visit_jitter = num(value).map_err(err)?,
            "covariates" => {
                self.covariates = value.split(';').map(|s| s.trim().parse::<CovariateDist>()).collect::<Result<_, _>>().map_err(err)?
            }
            "beta0" => self.beta0 = num(value).map_err(err)?,
            "beta1" => self.beta1 = num(value).map_err(err)?,
            "gamma" => self.gamma = list(value).map_err(err)?,
            "alpha" => self.alpha = num(value).map_err(err)?,
            "sigma2" => self.sigma2 = num(value).map_err(err)?,
            "tau2" => self.tau2 = num(value).map_err(err)?,
            "baseline_hazard" => self.baseline_hazard = num(value).map_err(err)?,
            "target_event_fraction" => {
                self.target_event_fraction = if none(value) { None } else { Some(num(value).map_err(err)?) }
            }
            "chains" => self.chains = num(value).map_err(err)?,
            "iters" => self.iters = num(value).map_err(err)?,
            "burnin" => self.burnin = num(value).map_err(err)?,
            "thin" => self.thin = num(value).map_err(err)?,
            "adapt_window" => self.adapt_window = num(value).map_err(err)?,
            "target_accept" => self.target_accept = num(value).map_err(err)?,
            "hazard_intervals" => self.hazard_intervals = num(value).map_err(err)?,
            "hazard_cuts" => self.hazard_cuts = if none(value) { None } else { Some(list(value).map_err(err)?) },
            "prior_coef_mean" => self.prior_coef_mean = num(value).map_err(err)?,
            "prior_coef_var" => self.prior_coef_var = num(value).map_err(err)?,
            "prior_var_shape" => self.prior_var_shape = num(value).map_err(err)?,
            "prior_var_scale" => self.prior_var_scale = num(value).map_err(err)?,
            "prior_hazard_shape" => self.prior_hazard_shape = num(value).map_err(err)?,
            "prior_hazard_rate" => self.prior_hazard_rate = num(value).map_err(err)?,
            "replications" => self.replications = num(value).map_err(err)?,
            "landmarks" => self.landmarks = list(value).map_err(err)?,
            "horizons" => self.horizons = list(value).map_err(err)?,
            "brier_end" => self.brier_end = num(value).map_err(err)?,
            "brier_points" => self.brier_points = num(value).map_err(err)?,
            "max_prediction_draws" => self.max_prediction_draws = num(value).map_err(err)?,
            _ => return Err(err("unknown key".into())),
        }
        Ok(())
    }

    /// The configuration in the same `key = value` format it is read from.
    pub fn to_text(&self) -> String {
        fn join(v: &[f64]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("n_patients", self.n_patients.to_string());
        kv("max_follow_up", self.max_follow_up.to_string());
        kv("visit_step", self.visit_step.to_string());
        kv("visit_jitter", self.visit_jitter.to_string());
        kv("covariates", self.covariates.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"));
        kv("beta0", self.beta0.to_string());
        kv("beta1", self.beta1.to_string());
        kv("gamma", join(&self.gamma));
        kv("alpha", self.alpha.to_string());
        kv("sigma2", self.sigma2.to_string());
        kv("tau2", self.tau2.to_string());
        kv("baseline_hazard", self.baseline_hazard.to_string());
        kv("target_event_fraction", opt(self.target_event_fraction));
        kv("chains", self.chains.to_string());
        kv("iters", self.iters.to_string());
        kv("burnin", self.burnin.to_string());
        kv("thin", self.thin.to_string());
        kv("adapt_window", self.adapt_window.to_string());
        kv("target_accept", self.target_accept.to_string());
        kv("hazard_intervals", self.hazard_intervals.to_string());
        kv("hazard_cuts", self.hazard_cuts.as_deref().map_or_else(|| "none".to_string(), join));
        kv("prior_coef_mean", self.prior_coef_mean.to_string());
        kv("prior_coef_var", self.prior_coef_var.to_string());
        kv("prior_var_shape", self.prior_var_shape.to_string());
        kv("prior_var_scale", self.prior_var_scale.to_string());
        kv("prior_hazard_shape", self.prior_hazard_shape.to_string());
        kv("prior_hazard_rate", self.prior_hazard_rate.to_string());
        kv("replications", self.replications.to_string());
        kv("landmarks", join(&self.landmarks));
        kv("horizons", join(&self.horizons));
        kv("brier_end", self.brier_end.to_string());
        kv("brier_points", self.brier_points.to_string());
        kv("max_prediction_draws", self.max_prediction_draws.to_string());
        s
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let err = |msg: String| ConfigError::Value { key: "simulation".into(), msg };
        if !(self.visit_step > 0.0) {
            return Err(err("visit_step must be positive".into()));
        }
        let n_visits = (self.max_follow_up / self.visit_step + 1e-9).floor() as usize;
        let hazard = HazardSpec::constant(self.baseline_hazard).map_err(|e| err(e.to_string()))?;
        Ok(SimConfig {
            n_patients: self.n_patients,
            max_follow_up: self.max_follow_up,
            true_params: JointParams {
                beta0: self.beta0,
                beta1: self.beta1,
                gamma: self.gamma.clone(),
                alpha: self.alpha,
                sigma2: self.sigma2,
                tau2: self.tau2,
                hazard,
            },
            visit_grid: (0..=n_visits).map(|k| k as f64 * self.visit_step).collect(),
            visit_jitter: self.visit_jitter,
            covariates: self.covariates.clone(),
            seed: self.seed,
        })
    }

    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            n_chains: self.chains,
            n_iter: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed: self.seed,
            adapt_window: self.adapt_window,
            target_accept: self.target_accept,
            prior: PriorSpec {
                coef_mean: self.prior_coef_mean,
                coef_var: self.prior_coef_var,
                var_shape: self.prior_var_shape,
                var_scale: self.prior_var_scale,
                hazard_shape: self.prior_hazard_shape,
                hazard_rate: self.prior_hazard_rate,
            },
            cuts: match &self.hazard_cuts {
                Some(c) => CutRule::Fixed(c.clone()),
                None => CutRule::Quantiles(self.hazard_intervals),
            },
        }
    }

    /// Evaluation settings for one landmark, using `horizons` as AUC horizons.
    pub fn eval_spec(&self, landmark: f64) -> EvalSpec {
        EvalSpec {
            landmark,
            auc_horizons: self.horizons.iter().copied().filter(|&h| h > landmark).collect(),
            brier_end: self.brier_end,
            brier_points: self.brier_points,
            max_prediction_draws: self.max_prediction_draws,
        }
    }

    pub fn study_config(&self) -> Result<StudyConfig, ConfigError> {
        let landmark = match self.landmarks.as_slice() {
            [t] => *t,
            _ => {
                return Err(ConfigError::Value { key: "landmarks".into(), msg: "the study uses exactly one landmark".into() })
            }
        };
        Ok(StudyConfig {
            sim: self.sim_config()?,
            target_event_fraction: self.target_event_fraction,
            mcmc: self.mcmc_config(),
            replications: self.replications,
            seed: self.seed,
            eval: self.eval_spec(landmark),
        })
    }
}

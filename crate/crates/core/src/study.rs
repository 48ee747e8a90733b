//! Replicated simulation study: simulate, fit both models, evaluate, aggregate.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynpred::{predict_survival, PredictError};
use crate::mcmc::{
    derive_seed, gelman_rubin, multi_chain_ess, quantile_sorted, run_chains, ChainDraws, McmcConfig, McmcError,
};
use crate::metrics::{brier_grid, brier_score, integrated_brier, recovery_report, time_dependent_auc, Estimate, MetricError, RecoveryRow};
use crate::model::{Cohort, JointParams};
use crate::simulate::{calibrate_baseline_hazard, simulate_cohort, SimConfig, SimError};
use crate::two_stage::{fit_two_stage, longitudinal_draws, predict_two_stage, survival_draws};

/// Parameters reported in the recovery table, in order.
pub const TABLE1_PARAMS: [&str; 6] = ["beta0", "beta1", "gamma_1", "alpha", "sigma2", "tau2"];

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid study config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sim: SimConfig,
    /// Recalibrates the constant baseline hazard to this event fraction.
    pub target_event_fraction: Option<f64>,
    pub mcmc: McmcConfig,
    pub replications: usize,
    pub seed: u64,
    pub eval: EvalSpec,
}

/// Where and how predictive accuracy is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub landmark: f64,
    pub auc_horizons: Vec<f64>,
    pub brier_end: f64,
    pub brier_points: usize,
    /// Posterior draws used per prediction (evenly thinned).
    pub max_prediction_draws: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { landmark: 0.0, auc_horizons: vec![1.0, 3.0, 5.0], brier_end: 5.0, brier_points: 21, max_prediction_draws: 300 }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        if !(self.landmark >= 0.0)
            || self.auc_horizons.iter().any(|&h| !(h > self.landmark))
            || !(self.brier_end > self.landmark)
            || self.brier_points == 0
            || self.max_prediction_draws == 0
        {
            return Err(StudyError::Config("evaluation horizons must lie after the landmark".into()));
        }
        Ok(())
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig { n_patients: 300, ..SimConfig::default() },
            target_event_fraction: Some(0.675),
            mcmc: McmcConfig { n_iter: 2000, burn_in: 500, ..McmcConfig::default() },
            replications: 50,
            seed: 1,
            eval: EvalSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub sim_seed: u64,
    pub mcmc_seed: u64,
    pub censored_fraction: f64,
    pub joint: Vec<Estimate>,
    pub two_stage: Vec<Estimate>,
    pub joint_rhat: Vec<Option<f64>>,
    pub joint_ess: Vec<Option<f64>>,
    pub auc_joint: Vec<Option<f64>>,
    pub auc_two_stage: Vec<Option<f64>>,
    pub brier_joint: Vec<f64>,
    pub brier_two_stage: Vec<f64>,
    pub ibs_joint: f64,
    pub ibs_two_stage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table2Row {
    pub model: String,
    /// Mean AUC at each horizon over replications where it is defined.
    pub auc: Vec<f64>,
    pub brier: Vec<f64>,
    pub integrated_brier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub truth: Vec<f64>,
    pub horizons: Vec<f64>,
    pub recovery_joint: Vec<RecoveryRow>,
    pub recovery_two_stage: Vec<RecoveryRow>,
    pub table2: Vec<Table2Row>,
    pub censored_fraction: f64,
    pub replications: Vec<ReplicationResult>,
}

fn table1_truth(p: &JointParams) -> Vec<f64> {
    vec![p.beta0, p.beta1, p.gamma[0], p.alpha, p.sigma2, p.tau2]
}

/// Pooled posterior mean and equal-tailed 95% interval of a natural-scale column.
pub fn estimate(chains: &[ChainDraws], name: &str) -> Option<Estimate> {
    let mut pooled: Vec<f64> = Vec::new();
    for c in chains {
        pooled.extend(c.natural_column(name)?);
    }
    if pooled.is_empty() {
        return None;
    }
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    pooled.sort_by(|a, b| a.total_cmp(b));
    Some(Estimate { mean, q025: quantile_sorted(&pooled, 0.025), q975: quantile_sorted(&pooled, 0.975) })
}

fn convergence(chains: &[ChainDraws], name: &str) -> (Option<f64>, Option<f64>) {
    let Some(cols) = chains.iter().map(|c| c.natural_column(name)).collect::<Option<Vec<_>>>() else {
        return (None, None);
    };
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    (
        gelman_rubin(&refs).ok().and_then(|d| d.value()),
        multi_chain_ess(&refs).ok().and_then(|d| d.value()),
    )
}

/// Every `k`-th draw across chains so that at most `max` remain.
pub fn thinned_joint_params(chains: &[ChainDraws], max: usize) -> Result<Vec<JointParams>, StudyError> {
    let total: usize = chains.iter().map(|c| c.n_draws()).sum();
    let step = total.div_ceil(max.max(1)).max(1);
    let mut out = Vec::new();
    let mut k = 0usize;
    for c in chains {
        for r in 0..c.n_draws() {
            if k.is_multiple_of(step) {
                out.push(c.params_at(r).map_err(McmcError::from)?);
            }
            k += 1;
        }
    }
    Ok(out)
}

/// Union of the AUC horizons and the Brier grid, with index maps back into it.
fn evaluation_grid(cfg: &EvalSpec) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let bgrid = brier_grid(cfg.landmark, cfg.brier_end, cfg.brier_points);
    let mut all: Vec<f64> = bgrid.iter().chain(&cfg.auc_horizons).copied().collect();
    all.sort_by(|a, b| a.total_cmp(b));
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let find = |x: f64| all.iter().position(|&g| (g - x).abs() <= 1e-12 * x.abs().max(1.0)).unwrap();
    let auc_idx = cfg.auc_horizons.iter().map(|&h| find(h)).collect();
    let brier_idx = bgrid.iter().map(|&h| find(h)).collect();
    (all, auc_idx, brier_idx)
}

/// Accuracy of one model's predictions. AUC is `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub auc: Vec<Option<f64>>,
    /// Brier score at each AUC horizon.
    pub brier: Vec<f64>,
    pub integrated_brier: f64,
}

fn evaluate_curves(cfg: &EvalSpec, cohort: &Cohort, curves: &[Vec<f64>]) -> Result<Evaluation, StudyError> {
    let (_, auc_idx, brier_idx) = evaluation_grid(cfg);
    let t = cfg.landmark;
    let auc = auc_idx
        .iter()
        .zip(&cfg.auc_horizons)
        .map(|(&k, &u)| {
            let risk: Vec<f64> = curves.iter().map(|c| 1.0 - c[k]).collect();
            time_dependent_auc(&risk, cohort, t, u).ok()
        })
        .collect();
    let brier = auc_idx
        .iter()
        .zip(&cfg.auc_horizons)
        .map(|(&k, &u)| {
            let s: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            brier_score(&s, cohort, t, u)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bgrid = brier_grid(t, cfg.brier_end, cfg.brier_points);
    let bpred: Vec<Vec<f64>> = curves.iter().map(|c| brier_idx.iter().map(|&k| c[k]).collect()).collect();
    let ibs = integrated_brier(&bpred, cohort, t, &bgrid)?;
    Ok(Evaluation { auc, brier, integrated_brier: ibs })
}

/// Joint and two-stage accuracy on `cohort`, predicting from data up to the landmark.
pub fn evaluate_models(
    cohort: &Cohort,
    joint: &[ChainDraws],
    stage1: &[ChainDraws],
    stage2: &[ChainDraws],
    spec: &EvalSpec,
) -> Result<(Evaluation, Evaluation), StudyError> {
    spec.validate()?;
    let (grid, _, _) = evaluation_grid(spec);
    let t = spec.landmark;
    let posterior = thinned_joint_params(joint, spec.max_prediction_draws)?;
    let long = longitudinal_draws(stage1, spec.max_prediction_draws).map_err(McmcError::from)?;
    let surv = survival_draws(stage2, spec.max_prediction_draws).map_err(McmcError::from)?;

    // patients not at risk at the landmark get a placeholder curve; the
    // metrics exclude them
    let mut joint_curves = Vec::with_capacity(cohort.len());
    let mut two_curves = Vec::with_capacity(cohort.len());
    for p in &cohort.patients {
        if p.event_time > t || (p.event_time == t && !p.event) {
            joint_curves.push(predict_survival(&posterior, p, t, &grid)?.mean_survival);
            two_curves.push(predict_two_stage(&long, &surv, p, t, &grid)?.mean_survival);
        } else {
            joint_curves.push(vec![1.0; grid.len()]);
            two_curves.push(vec![1.0; grid.len()]);
        }
    }
    Ok((evaluate_curves(spec, cohort, &joint_curves)?, evaluate_curves(spec, cohort, &two_curves)?))
}

/// Baseline hazard used for every replication.
pub fn resolve_truth(cfg: &StudyConfig) -> Result<SimConfig, StudyError> {
    let mut sim = cfg.sim.clone();
    if let Some(target) = cfg.target_event_fraction {
        sim.true_params.hazard = calibrate_baseline_hazard(target, &sim)?;
    }
    Ok(sim)
}

pub fn run_replication(cfg: &StudyConfig, sim: &SimConfig, index: usize) -> Result<ReplicationResult, StudyError> {
    let sim_seed = derive_seed(cfg.seed, 2 * index as u64);
    let mcmc_seed = derive_seed(cfg.seed, 2 * index as u64 + 1);
    let (cohort, _) = simulate_cohort(&SimConfig { seed: sim_seed, ..sim.clone() })?;
    let mcmc = McmcConfig { seed: mcmc_seed, ..cfg.mcmc.clone() };

    let joint = run_chains(&cohort, &mcmc)?;
    let two = fit_two_stage(&cohort, &mcmc)?;

    let missing = |n: &str| StudyError::Config(format!("fit has no column '{n}'"));
    let joint_est = TABLE1_PARAMS.iter().map(|n| estimate(&joint, n).ok_or_else(|| missing(n))).collect::<Result<Vec<_>, _>>()?;
    let two_est = TABLE1_PARAMS
        .iter()
        .map(|n| estimate(&two.stage1, n).or_else(|| estimate(&two.stage2, n)).ok_or_else(|| missing(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let (joint_rhat, joint_ess) = TABLE1_PARAMS.iter().map(|n| convergence(&joint, n)).unzip();

    let (ej, et) = evaluate_models(&cohort, &joint, &two.stage1, &two.stage2, &cfg.eval)?;

    Ok(ReplicationResult {
        index,
        sim_seed,
        mcmc_seed,
        censored_fraction: cohort.censored_fraction(),
        joint: joint_est,
        two_stage: two_est,
        joint_rhat,
        joint_ess,
        auc_joint: ej.auc,
        auc_two_stage: et.auc,
        brier_joint: ej.brier,
        brier_two_stage: et.brier,
        ibs_joint: ej.integrated_brier,
        ibs_two_stage: et.integrated_brier,
    })
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn validate(cfg: &StudyConfig) -> Result<(), StudyError> {
    if cfg.replications < 2 {
        return Err(StudyError::Config("at least 2 replications are needed".into()));
    }
    if cfg.sim.true_params.gamma.len() != 1 {
        return Err(StudyError::Config("the recovery table expects exactly one covariate".into()));
    }
    cfg.eval.validate()?;
    cfg.mcmc.validate()?;
    Ok(())
}

/// Runs all replications in parallel; the result does not depend on scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport, StudyError> {
    validate(cfg)?;
    let sim = resolve_truth(cfg)?;
    let reps: Vec<ReplicationResult> =
        (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, &sim, r)).collect::<Result<_, _>>()?;
    let truth = table1_truth(&sim.true_params);
    let recovery_joint = recovery_report(&TABLE1_PARAMS, &truth, &reps.iter().map(|r| r.joint.clone()).collect::<Vec<_>>())?;
    let recovery_two_stage =
        recovery_report(&TABLE1_PARAMS, &truth, &reps.iter().map(|r| r.two_stage.clone()).collect::<Vec<_>>())?;
    let h = cfg.eval.auc_horizons.len();
    let table2 = vec![
        Table2Row {
            model: "joint".into(),
            auc: (0..h).map(|k| mean_defined(reps.iter().map(|r| r.auc_joint[k]))).collect(),
            brier: (0..h).map(|k| mean_defined(reps.iter().map(|r| Some(r.brier_joint[k])))).collect(),
            integrated_brier: mean_defined(reps.iter().map(|r| Some(r.ibs_joint))),
        },
        Table2Row {
            model: "two_stage".into(),
            auc: (0..h).map(|k| mean_defined(reps.iter().map(|r| r.auc_two_stage[k]))).collect(),
            brier: (0..h).map(|k| mean_defined(reps.iter().map(|r| Some(r.brier_two_stage[k])))).collect(),
            integrated_brier: mean_defined(reps.iter().map(|r| Some(r.ibs_two_stage))),
        },
    ];
    let censored_fraction = reps.iter().map(|r| r.censored_fraction).sum::<f64>() / reps.len() as f64;
    Ok(StudyReport {
        truth,
        horizons: cfg.eval.auc_horizons.clone(),
        recovery_joint,
        recovery_two_stage,
        table2,
        censored_fraction,
        replications: reps,
    })
}

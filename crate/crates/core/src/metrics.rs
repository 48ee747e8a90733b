//! Predictive accuracy under right censoring, and parameter-recovery summaries.
//!
//! Both AUC and Brier score use inverse probability of censoring weights from
//! a reverse Kaplan-Meier estimate `G`. Weights are taken relative to `G(t)`
//! at the landmark so that they average to one over the risk set.

use serde::Serialize;
use thiserror::Error;

use crate::model::Cohort;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty cohort")]
    Empty,
    #[error("{0} scores for {1} patients")]
    Length(usize, usize),
    #[error("horizon {u} must exceed landmark {t}")]
    Horizon { t: f64, u: f64 },
    #[error("no cases in ({t}, {u}]")]
    NoCases { t: f64, u: f64 },
    #[error("no controls event-free at {u}")]
    NoControls { u: f64 },
    #[error("nobody at risk at landmark {0}")]
    NoneAtRisk(f64),
    #[error("prediction {0} outside [0, 1]")]
    BadPrediction(f64),
    #[error("need at least {0} replications")]
    TooFewReplications(usize),
}

/// Reverse Kaplan-Meier estimate of the censoring survival function.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringKm {
    /// Distinct censoring times and `G` just after each.
    times: Vec<f64>,
    values: Vec<f64>,
}

impl CensoringKm {
    pub fn new(cohort: &Cohort) -> Result<Self, MetricError> {
        if cohort.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut obs: Vec<(f64, bool)> = cohort.patients.iter().map(|p| (p.event_time, p.event)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = obs.len();
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut g = 1.0;
        let mut i = 0;
        while i < n {
            let t = obs[i].0;
            let at_risk = (n - i) as f64;
            let mut censored = 0.0;
            let mut j = i;
            while j < n && obs[j].0 == t {
                if !obs[j].1 {
                    censored += 1.0;
                }
                j += 1;
            }
            if censored > 0.0 {
                g *= 1.0 - censored / at_risk;
                times.push(t);
                values.push(g);
            }
            i = j;
        }
        Ok(Self { times, values })
    }

    /// `G(s)`, right-continuous.
    pub fn at(&self, s: f64) -> f64 {
        let k = self.times.partition_point(|&c| c <= s);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// `G(s-)`, the left limit.
    pub fn before(&self, s: f64) -> f64 {
        let k = self.times.partition_point(|&c| c < s);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Case/control status of one patient for the window `(t, u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    /// Event in `(t, u]`, weight `G(t) / G(T-)`.
    Case(f64),
    /// Known event-free at `u`, weight `G(t) / G(u-)`.
    Control(f64),
    /// Not at risk at `t`, censored inside the window, or in a `G = 0` region.
    Excluded,
}

fn status(g: &CensoringKm, time: f64, event: bool, t: f64, u: f64) -> Status {
    if time <= t {
        return Status::Excluded;
    }
    let g_t = g.at(t);
    if event && time <= u {
        let denom = g.before(time);
        return if denom > 0.0 { Status::Case(g_t / denom) } else { Status::Excluded };
    }
    // censored exactly at u is still known to be event-free through u
    if time > u || (time == u && !event) {
        let denom = g.before(u);
        return if denom > 0.0 { Status::Control(g_t / denom) } else { Status::Excluded };
    }
    Status::Excluded
}

fn check_lengths(n_scores: usize, cohort: &Cohort, t: f64, u: f64) -> Result<(), MetricError> {
    if cohort.is_empty() {
        return Err(MetricError::Empty);
    }
    if n_scores != cohort.len() {
        return Err(MetricError::Length(n_scores, cohort.len()));
    }
    if !(u > t) {
        return Err(MetricError::Horizon { t, u });
    }
    Ok(())
}

/// Cumulative/dynamic IPCW AUC: weighted probability that a case in `(t, u]`
/// has a higher risk score than a control event-free at `u`; ties count one
/// half. Scores of patients not at risk at `t` are ignored.
pub fn time_dependent_auc(risk_scores: &[f64], cohort: &Cohort, t: f64, u: f64) -> Result<f64, MetricError> {
    check_lengths(risk_scores.len(), cohort, t, u)?;
    let g = CensoringKm::new(cohort)?;
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for (p, &r) in cohort.patients.iter().zip(risk_scores) {
        match status(&g, p.event_time, p.event, t, u) {
            Status::Case(w) => cases.push((r, w)),
            Status::Control(w) => controls.push((r, w)),
            Status::Excluded => {}
        }
    }
    if cases.is_empty() {
        return Err(MetricError::NoCases { t, u });
    }
    if controls.is_empty() {
        return Err(MetricError::NoControls { u });
    }
    let mut num = 0.0;
    for &(ri, wi) in &cases {
        for &(rj, wj) in &controls {
            if ri > rj {
                num += wi * wj;
            } else if ri == rj {
                num += 0.5 * wi * wj;
            }
        }
    }
    let wc: f64 = cases.iter().map(|c| c.1).sum();
    let wk: f64 = controls.iter().map(|c| c.1).sum();
    Ok(num / (wc * wk))
}

/// IPCW Brier score at horizon `u` for predictions `P(T > u | T > t)`,
/// averaged over the patients at risk at `t`.
pub fn brier_score(predicted_survival: &[f64], cohort: &Cohort, t: f64, u: f64) -> Result<f64, MetricError> {
    check_lengths(predicted_survival.len(), cohort, t, u)?;
    let g = CensoringKm::new(cohort)?;
    brier_with(&g, predicted_survival, cohort, t, u)
}

fn brier_with(g: &CensoringKm, pred: &[f64], cohort: &Cohort, t: f64, u: f64) -> Result<f64, MetricError> {
    let mut at_risk = 0usize;
    let mut total = 0.0;
    for (p, &s) in cohort.patients.iter().zip(pred) {
        if !(0.0..=1.0).contains(&s) {
            return Err(MetricError::BadPrediction(s));
        }
        if p.event_time <= t {
            continue;
        }
        at_risk += 1;
        match status(g, p.event_time, p.event, t, u) {
            Status::Case(w) => total += w * s * s,
            Status::Control(w) => total += w * (1.0 - s) * (1.0 - s),
            Status::Excluded => {}
        }
    }
    if at_risk == 0 {
        return Err(MetricError::NoneAtRisk(t));
    }
    Ok(total / at_risk as f64)
}

/// `k` equally spaced points over `(t, end]`.
pub fn brier_grid(t: f64, end: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|i| t + i as f64 * (end - t) / k as f64).collect()
}

/// Trapezoidal average of the Brier score over `grid`.
/// `predicted_survival[i][k]` is patient `i`'s prediction at `grid[k]`.
pub fn integrated_brier(predicted_survival: &[Vec<f64>], cohort: &Cohort, t: f64, grid: &[f64]) -> Result<f64, MetricError> {
    let first = *grid.first().ok_or(MetricError::Horizon { t, u: t })?;
    check_lengths(predicted_survival.len(), cohort, t, first)?;
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MetricError::Horizon { t, u: first });
    }
    let g = CensoringKm::new(cohort)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; cohort.len()];
    for (k, &u) in grid.iter().enumerate() {
        for (c, row) in column.iter_mut().zip(predicted_survival) {
            *c = row[k];
        }
        scores.push(brier_with(&g, &column, cohort, t, u)?);
    }
    if grid.len() == 1 {
        return Ok(scores[0]);
    }
    let area: f64 = grid.windows(2).zip(scores.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
    Ok(area / (grid[grid.len() - 1] - grid[0]))
}

/// One replication's posterior summary of one parameter on its natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub truth: f64,
    pub posterior_mean: f64,
    pub bias: f64,
    pub relative_bias: f64,
    pub coverage: f64,
    pub replications: usize,
}

/// Mean posterior mean, mean bias and 95% interval coverage across
/// replications. `estimates[r][j]` belongs to parameter `names[j]`.
pub fn recovery_report(names: &[&str], truth: &[f64], estimates: &[Vec<Estimate>]) -> Result<Vec<RecoveryRow>, MetricError> {
    if estimates.len() < 2 {
        return Err(MetricError::TooFewReplications(2));
    }
    let r = estimates.len() as f64;
    Ok(names
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(j, (name, &tr))| {
            let mean = estimates.iter().map(|e| e[j].mean).sum::<f64>() / r;
            let covered = estimates.iter().filter(|e| e[j].q025 <= tr && tr <= e[j].q975).count() as f64;
            RecoveryRow {
                parameter: name.to_string(),
                truth: tr,
                posterior_mean: mean,
                bias: mean - tr,
                relative_bias: (mean - tr) / tr.abs(),
                coverage: covered / r,
                replications: estimates.len(),
            }
        })
        .collect())
}

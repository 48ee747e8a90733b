//! Dynamic individualised survival prediction.
//!
//! For a patient known to be event-free at landmark `t` with measurements up
//! to `t`, the random intercept has conditional density
//!
//! ```text
//! p(b | Y(s <= t), T > t) ∝ N(b; 0, tau2) · Π_j N(y_j; beta0 + beta1 t_j + b, sigma2)
//!                            · exp(-exp(gamma'z + alpha b) H0(t))
//! ```
//!
//! which is log-concave in `b`. It is integrated with a 64-node Gauss-Hermite
//! rule centred at the mode and scaled by the curvature there.

use std::sync::OnceLock;

use thiserror::Error;

use crate::mcmc::ChainDraws;
use crate::model::{dot, JointParams, ModelError, PatientRecord};

pub const GH_NODES: usize = 64;
const NEWTON_MAX_STEPS: usize = 100;
const FALLBACK_POINTS: usize = 2001;
const FALLBACK_HALF_WIDTH_SD: f64 = 8.0;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("patient {id} is not at risk at landmark {landmark} (event_time {event_time}, event {event})")]
    NotAtRisk { id: String, landmark: f64, event_time: f64, event: bool },
    #[error("horizons must be increasing and not before the landmark")]
    BadHorizons,
    #[error("no posterior draws supplied")]
    NoDraws,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gauss-Hermite rule for the weight `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z: f64 = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Self { nodes: x, weights: w }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn gh64() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(GH_NODES))
}

/// Discrete representation of `p(b | history, T > t)`: nodes with weights
/// summing to one.
#[derive(Debug, Clone)]
pub struct BConditional {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode: f64,
    pub scale: f64,
    /// Set when Newton's method failed and a fixed wide grid was used.
    pub fallback: bool,
}

impl BConditional {
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&b, &w)| w * f(b)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|b| b)
    }

    pub fn second_moment(&self) -> f64 {
        self.expect(|b| b * b)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|b| (b - m) * (b - m))
    }
}

/// Log-concave target for `b` in closed form.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BTarget {
    prec_prior: f64,
    n_over_s2: f64,
    s_over_s2: f64,
    alpha: f64,
    /// `exp(gamma'z) * H0(t)`
    risk: f64,
}

impl BTarget {
    pub(crate) fn new(params: &JointParams, history: &PatientRecord, t: f64) -> Self {
        let mut s = 0.0;
        let mut n = 0.0;
        for (&tj, &y) in history.obs_times.iter().zip(&history.obs_values) {
            if tj <= t {
                s += y - params.beta0 - params.beta1 * tj;
                n += 1.0;
            }
        }
        Self {
            prec_prior: 1.0 / params.tau2,
            n_over_s2: n / params.sigma2,
            s_over_s2: s / params.sigma2,
            alpha: params.alpha,
            risk: dot(&params.gamma, &history.covariates).exp() * params.hazard.cumulative(t),
        }
    }

    pub(crate) fn log_density(&self, b: f64) -> f64 {
        let mut v = -0.5 * (self.prec_prior + self.n_over_s2) * b * b + self.s_over_s2 * b;
        if self.risk > 0.0 {
            v -= self.risk * (self.alpha * b).exp();
        }
        v
    }

    fn grad_hess(&self, b: f64) -> (f64, f64) {
        let mut g = -(self.prec_prior + self.n_over_s2) * b + self.s_over_s2;
        let mut h = -(self.prec_prior + self.n_over_s2);
        if self.risk > 0.0 {
            let e = self.risk * (self.alpha * b).exp();
            g -= self.alpha * e;
            h -= self.alpha * self.alpha * e;
        }
        (g, h)
    }

    /// Damped Newton ascent; `None` if it does not converge.
    fn mode(&self) -> Option<(f64, f64)> {
        let mut b = self.s_over_s2 / (self.prec_prior + self.n_over_s2);
        let mut f = self.log_density(b);
        for _ in 0..NEWTON_MAX_STEPS {
            let (g, h) = self.grad_hess(b);
            if !(g.is_finite() && h.is_finite() && h < 0.0) {
                return None;
            }
            let mut step = -g / h;
            let mut next = b + step;
            let mut fn_next = self.log_density(next);
            let mut halvings = 0;
            while !(fn_next >= f) && halvings < 60 {
                step *= 0.5;
                next = b + step;
                fn_next = self.log_density(next);
                halvings += 1;
            }
            let converged = step.abs() <= 1e-12 * (1.0 + b.abs());
            b = next;
            f = fn_next;
            if converged {
                let (_, h) = self.grad_hess(b);
                return Some((b, h));
            }
        }
        None
    }
}

/// Quadrature representation of the landmark-conditional distribution of `b`.
pub fn conditional_b_given_history(params: &JointParams, history: &PatientRecord, t: f64) -> BConditional {
    let target = BTarget::new(params, history, t);
    conditional_from_target(&target, params.tau2)
}

pub(crate) fn conditional_from_target(target: &BTarget, tau2: f64) -> BConditional {
    match target.mode() {
        Some((mode, hess)) => {
            let scale = 1.0 / (-hess).sqrt();
            let rule = gh64();
            let root2s = std::f64::consts::SQRT_2 * scale;
            let f_mode = target.log_density(mode);
            let mut nodes = Vec::with_capacity(GH_NODES);
            let mut logw = Vec::with_capacity(GH_NODES);
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let b = mode + root2s * x;
                nodes.push(b);
                logw.push(w.ln() + x * x + target.log_density(b) - f_mode);
            }
            BConditional { weights: normalise_log_weights(&logw), nodes, mode, scale, fallback: false }
        }
        None => {
            let half = FALLBACK_HALF_WIDTH_SD * tau2.sqrt();
            let step = 2.0 * half / (FALLBACK_POINTS - 1) as f64;
            let nodes: Vec<f64> = (0..FALLBACK_POINTS).map(|k| -half + k as f64 * step).collect();
            let logw: Vec<f64> = nodes.iter().map(|&b| target.log_density(b)).collect();
            BConditional { weights: normalise_log_weights(&logw), nodes, mode: f64::NAN, scale: tau2.sqrt(), fallback: true }
        }
    }
}

fn normalise_log_weights(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Individual survival curve beyond a landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPrediction {
    pub landmark: f64,
    pub horizons: Vec<f64>,
    pub mean_survival: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
    /// Number of posterior draws whose `b` integration used the fallback grid.
    pub fallback_draws: usize,
}

pub(crate) fn check_at_risk(history: &PatientRecord, t: f64) -> Result<(), PredictError> {
    let at_risk = history.event_time > t || (history.event_time == t && !history.event);
    if at_risk {
        Ok(())
    } else {
        Err(PredictError::NotAtRisk {
            id: history.id.clone(),
            landmark: t,
            event_time: history.event_time,
            event: history.event,
        })
    }
}

pub(crate) fn check_horizons(t: f64, horizons: &[f64]) -> Result<(), PredictError> {
    if !(t >= 0.0) || horizons.iter().any(|&u| !(u >= t)) || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PredictError::BadHorizons);
    }
    Ok(())
}

/// `E_b[S(u | b) / S(t | b)]` for one parameter draw; returns the curve and
/// whether the fallback grid was used.
pub fn predict_curve(params: &JointParams, history: &PatientRecord, t: f64, horizons: &[f64]) -> (Vec<f64>, bool) {
    let cond = conditional_b_given_history(params, history, t);
    let base = dot(&params.gamma, &history.covariates).exp();
    let h_t = params.hazard.cumulative(t);
    let dh: Vec<f64> = horizons.iter().map(|&u| base * (params.hazard.cumulative(u) - h_t)).collect();
    let mut curve = vec![0.0; horizons.len()];
    for (&b, &w) in cond.nodes.iter().zip(&cond.weights) {
        let e = (params.alpha * b).exp();
        for (c, &d) in curve.iter_mut().zip(&dh) {
            *c += w * (-e * d).exp();
        }
    }
    // the weights sum to one only up to round-off
    for (c, &d) in curve.iter_mut().zip(&dh) {
        *c = if d == 0.0 { 1.0 } else { c.clamp(0.0, 1.0) };
    }
    (curve, cond.fallback)
}

/// Posterior-predictive conditional survival `P(T > u | T > t, Y(s <= t), z)`
/// over `horizons`, averaged over `posterior` draws, with pointwise 95% bands.
pub fn predict_survival(
    posterior: &[JointParams],
    history: &PatientRecord,
    t: f64,
    horizons: &[f64],
) -> Result<SurvivalPrediction, PredictError> {
    if posterior.is_empty() {
        return Err(PredictError::NoDraws);
    }
    check_horizons(t, horizons)?;
    check_at_risk(history, t)?;
    let history = history.history_until(t);
    let mut fallback_draws = 0;
    let curves: Vec<Vec<f64>> = posterior
        .iter()
        .map(|p| {
            let (c, fb) = predict_curve(p, &history, t, horizons);
            fallback_draws += usize::from(fb);
            c
        })
        .collect();
    Ok(summarise_curves(t, horizons, &curves, fallback_draws))
}

/// Same as [`predict_survival`], reading the posterior from joint-model chains.
pub fn predict_from_draws(
    chains: &[ChainDraws],
    history: &PatientRecord,
    t: f64,
    horizons: &[f64],
) -> Result<SurvivalPrediction, PredictError> {
    let mut posterior = Vec::new();
    for c in chains {
        posterior.extend(c.all_params()?);
    }
    predict_survival(&posterior, history, t, horizons)
}

pub(crate) fn summarise_curves(t: f64, horizons: &[f64], curves: &[Vec<f64>], fallback_draws: usize) -> SurvivalPrediction {
    let n = curves.len() as f64;
    let mut mean = vec![0.0; horizons.len()];
    let mut lower = Vec::with_capacity(horizons.len());
    let mut upper = Vec::with_capacity(horizons.len());
    let mut column = Vec::with_capacity(curves.len());
    for (h, m) in mean.iter_mut().enumerate() {
        column.clear();
        column.extend(curves.iter().map(|c| c[h]));
        *m = column.iter().sum::<f64>() / n;
        column.sort_by(|a, b| a.total_cmp(b));
        // a mean outside the equal-tailed band can only happen for very
        // lopsided draw sets; widen the band to contain it
        lower.push(crate::mcmc::quantile_sorted(&column, 0.025).min(*m));
        upper.push(crate::mcmc::quantile_sorted(&column, 0.975).max(*m));
    }
    SurvivalPrediction { landmark: t, horizons: horizons.to_vec(), mean_survival: mean, lower95: lower, upper95: upper, fallback_draws }
}

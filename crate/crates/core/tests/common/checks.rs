//! Oracle comparisons returning the measured discrepancy, so the same check
//! can back an ordinary test and an acceptance line.

use jointsurv::dynpred::{conditional_b_given_history, predict_curve};
use jointsurv::mcmc::{
    gibbs_update_beta, gibbs_update_lambda, gibbs_update_sigma2, gibbs_update_tau2, mh_recenter, mh_update_b,
    mh_update_gamma_alpha, ModelData, SamplerState,
};
use jointsurv::model::cumulative_baseline_hazard;
use jointsurv::simulate::invert_survival;
use jointsurv::{Cohort, HazardSpec, JointParams, PatientRecord, PriorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{adaptive_simpson, b_moments_by_grid, ks_statistic, log_joint, mean_sd, small_cohort, survival_by_quadrature, tv_against_grid};

pub const TV_MAX: f64 = 0.02;
const BINS: usize = 30;

pub struct Fixture {
    pub cohort: Cohort,
    pub data: ModelData,
    pub state: SamplerState,
    pub prior: PriorSpec,
}

/// A small cohort with the state set to the generating values plus drawn `b`.
pub fn fixture() -> Fixture {
    let cohort = small_cohort(40, 17);
    let cuts = vec![1.5, 3.0];
    let data = ModelData::new(&cohort, &cuts).unwrap();
    let mut params = JointParams::table1_truth();
    params.hazard = HazardSpec::new(cuts, vec![0.2, 0.25, 0.3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, params.tau2.sqrt()).unwrap();
    let b: Vec<f64> = (0..cohort.len()).map(|_| normal.sample(&mut rng)).collect();
    let state = SamplerState::new(params, b, &data).unwrap();
    Fixture { cohort, data, state, prior: PriorSpec::default() }
}

fn log_target_with<F: Fn(&mut JointParams, &mut Vec<f64>)>(fx: &Fixture, edit: F) -> f64 {
    let mut p = fx.state.params.clone();
    let mut b = fx.state.b.clone();
    edit(&mut p, &mut b);
    log_joint(&p, &b, &fx.cohort, &fx.prior)
}

/// `log` of the marginal of one coordinate of a two-dimensional conditional,
/// integrating the other over `[lo, hi]` on a trapezoid grid.
fn log_marginal<F: Fn(f64, f64) -> f64>(f: F, x: f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..=n).map(|k| f(x, lo + k as f64 * h)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn positive(x: f64, f: impl Fn(f64) -> f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        f(x)
    }
}

/// TV distance of Gibbs `(beta0, beta1)` draws from the grid marginals.
pub fn beta_tv(fx: &Fixture) -> Vec<(String, f64)> {
    let mut state = fx.state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut b0s, mut b1s) = (Vec::new(), Vec::new());
    for _ in 0..40_000 {
        let (b0, b1) = gibbs_update_beta(&mut state, &fx.data, &fx.prior, &mut rng);
        b0s.push(b0);
        b1s.push(b1);
    }
    let (m1, s1) = mean_sd(&b1s);
    let (m0, s0) = mean_sd(&b0s);
    let joint = |x: f64, y: f64| {
        log_target_with(fx, |p, _| {
            p.beta0 = x;
            p.beta1 = y;
        })
    };
    let tv0 = tv_against_grid(&b0s, |x| log_marginal(joint, x, m1 - 8.0 * s1, m1 + 8.0 * s1, 160), BINS);
    let tv1 = tv_against_grid(&b1s, |y| log_marginal(|a, b| joint(b, a), y, m0 - 8.0 * s0, m0 + 8.0 * s0, 160), BINS);
    vec![("beta0".into(), tv0), ("beta1".into(), tv1)]
}

pub fn variance_tv(fx: &Fixture) -> Vec<(String, f64)> {
    let mut state = fx.state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s2: Vec<f64> = (0..40_000).map(|_| gibbs_update_sigma2(&mut state, &fx.data, &fx.prior, &mut rng)).collect();
    let t2: Vec<f64> = (0..40_000).map(|_| gibbs_update_tau2(&mut state, &fx.prior, &mut rng)).collect();
    let tv_s = tv_against_grid(&s2, |x| positive(x, |x| log_target_with(fx, |p, _| p.sigma2 = x)), BINS);
    let tv_t = tv_against_grid(&t2, |x| positive(x, |x| log_target_with(fx, |p, _| p.tau2 = x)), BINS);
    vec![("sigma2".into(), tv_s), ("tau2".into(), tv_t)]
}

pub fn lambda_tv(fx: &Fixture) -> Vec<(String, f64)> {
    let mut state = fx.state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws: Vec<Vec<f64>> = (0..40_000).map(|_| gibbs_update_lambda(&mut state, &fx.data, &fx.prior, &mut rng)).collect();
    (0..fx.state.params.hazard.n_intervals())
        .map(|k| {
            let col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let logf = |x: f64| {
                positive(x, |x| {
                    log_target_with(fx, |p, _| {
                        let mut levels = p.hazard.levels().to_vec();
                        levels[k] = x;
                        p.hazard = p.hazard.with_levels(levels).unwrap();
                    })
                })
            };
            (format!("lambda_{}", k + 1), tv_against_grid(&col, logf, BINS))
        })
        .collect()
}

/// Random-walk chain on one event patient's `b`.
pub fn b_tv(fx: &Fixture) -> (String, f64) {
    let i = fx.cohort.patients.iter().position(|p| p.event).unwrap();
    let mut state = fx.state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut draws = Vec::new();
    for it in 0..200_000 {
        mh_update_b(&mut state, &fx.data, i, 0.6, &mut rng);
        if it % 4 == 0 {
            draws.push(state.b[i]);
        }
    }
    (format!("b_{}", fx.cohort.patients[i].id), tv_against_grid(&draws, |x| log_target_with(fx, |_, b| b[i] = x), BINS))
}

pub fn gamma_alpha_tv(fx: &Fixture) -> Vec<(String, f64)> {
    let mut state = fx.state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (mut gs, mut als) = (Vec::new(), Vec::new());
    for it in 0..120_000 {
        mh_update_gamma_alpha(&mut state, &fx.data, &fx.prior, &[0.3, 0.4], true, &mut rng);
        if it % 3 == 0 {
            gs.push(state.params.gamma[0]);
            als.push(state.params.alpha);
        }
    }
    let joint = |g: f64, a: f64| {
        log_target_with(fx, |p, _| {
            p.gamma[0] = g;
            p.alpha = a;
        })
    };
    let (mg, sg) = mean_sd(&gs);
    let (ma, sa) = mean_sd(&als);
    let tv_g = tv_against_grid(&gs, |g| log_marginal(joint, g, ma - 8.0 * sa, ma + 8.0 * sa, 160), BINS);
    let tv_a = tv_against_grid(&als, |a| log_marginal(|x, y| joint(y, x), a, mg - 8.0 * sg, mg + 8.0 * sg, 160), BINS);
    vec![("gamma".into(), tv_g), ("alpha".into(), tv_a)]
}

/// Distribution of the recentring shift against the density along its line.
pub fn recenter_tv(fx: &Fixture) -> f64 {
    let mut state = fx.state.clone();
    let base = fx.state.params.beta0;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut shifts = Vec::new();
    for it in 0..200_000 {
        mh_recenter(&mut state, &fx.data, &fx.prior, 0.15, true, &mut rng);
        if it % 4 == 0 {
            shifts.push(state.params.beta0 - base);
        }
    }
    let k = fx.state.params.hazard.n_intervals() as f64;
    let alpha = fx.state.params.alpha;
    // the move is a random walk on log lambda, so the line density carries
    // the Jacobian prod(lambda_k), i.e. k * alpha * c
    let logf = |c: f64| {
        log_target_with(fx, |p, b| {
            p.beta0 += c;
            b.iter_mut().for_each(|x| *x -= c);
            let levels = p.hazard.levels().iter().map(|l| l * (alpha * c).exp()).collect();
            p.hazard = p.hazard.with_levels(levels).unwrap();
        }) + k * alpha * c
    };
    tv_against_grid(&shifts, logf, BINS)
}

pub fn kernel_hazard() -> HazardSpec {
    HazardSpec::new(vec![0.7, 1.9, 3.2], vec![0.15, 0.4, 0.08, 0.3]).unwrap()
}

/// Worst relative error of the closed-form cumulative hazard.
pub fn cumulative_hazard_error() -> f64 {
    let h = kernel_hazard();
    [0.05, 0.3, 0.7, 1.0, 1.9, 2.5, 3.2, 4.999, 7.5]
        .iter()
        .map(|&t| {
            let exact = cumulative_baseline_hazard(&h, t);
            let quad = adaptive_simpson(&|s| h.level_at(s), 0.0, t, 1e-13);
            (exact - quad).abs() / quad
        })
        .fold(0.0, f64::max)
}

/// KS distance of `10^5` inverted survival times from the model CDF.
pub fn inversion_ks() -> f64 {
    let h = kernel_hazard();
    let eta = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let u: f64 = rng.random();
            invert_survival(&h, eta, u.clamp(1e-300, 1.0 - 1e-16))
        })
        .collect();
    ks_statistic(&mut draws, |t| 1.0 - survival_by_quadrature(&h, eta, t))
}

/// Worst relative error of the quadrature moments of `b` given a history,
/// over a set of patients and landmarks. The mean is compared on the scale
/// `max(|mean|, sd)` since it can sit arbitrarily close to zero.
pub fn b_moment_error(params: &JointParams, cohort: &Cohort, landmarks: &[f64]) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for p in &cohort.patients {
        for &t in landmarks {
            let t = t.min(0.5 * p.event_time);
            let cond = conditional_b_given_history(params, &p.history_until(t), t);
            let (m, m2) = b_moments_by_grid(params, p, t);
            let sd = (m2 - m * m).sqrt();
            worst = worst.max((cond.mean() - m).abs() / m.abs().max(sd));
            worst = worst.max((cond.second_moment() - m2).abs() / m2);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn b_moment_error_default() -> f64 {
    let cohort = small_cohort(12, 8);
    let mut params = JointParams::table1_truth();
    params.hazard = kernel_hazard();
    let (e1, _) = b_moment_error(&params, &cohort, &[0.0, 1.0, 2.5]);
    // a strong association makes the conditional skewed
    params.alpha = 4.0;
    params.tau2 = 2.0;
    let (e2, _) = b_moment_error(&params, &small_cohort(10, 9), &[0.5]);
    e1.max(e2)
}

/// Prediction with no biomarker history at time zero against a Monte Carlo
/// average of the marginal survival; returns the largest error in standard errors.
pub fn marginal_prediction_z() -> f64 {
    let mut params = JointParams::table1_truth();
    params.hazard = kernel_hazard();
    let z = 0.8;
    let record = PatientRecord::new("x", vec![], vec![], 5.0, false, vec![z]).unwrap();
    let horizons = [0.5, 1.0, 2.0, 3.5, 5.0];
    let (curve, fallback) = predict_curve(&params, &record, 0.0, &horizons);
    assert!(!fallback);
    let normal = Normal::new(0.0, params.tau2.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let n = 400_000;
    let mut sums = vec![0.0; horizons.len()];
    let mut sq = vec![0.0; horizons.len()];
    for _ in 0..n {
        let b = normal.sample(&mut rng);
        let e = (params.gamma[0] * z + params.alpha * b).exp();
        for (k, &u) in horizons.iter().enumerate() {
            let s = (-e * params.hazard.cumulative(u)).exp();
            sums[k] += s;
            sq[k] += s * s;
        }
    }
    (0..horizons.len())
        .map(|k| {
            let mean = sums[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            (curve[k] - mean).abs() / se
        })
        .fold(0.0, f64::max)
}

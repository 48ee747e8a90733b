//! Independent numerical oracles shared by the integration tests.
//!
//! Everything here is computed from the public model densities by brute-force
//! quadrature, never from the sampler's own conditional formulas.

#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeMap;
use std::path::Path;

use jointsurv::model::{longitudinal_loglik, log_prior, normal_logpdf, survival_loglik};
use jointsurv::simulate::{simulate_cohort, SimConfig};
use jointsurv::{Cohort, HazardSpec, JointParams, PriorSpec};

/// Unnormalised log joint density `log p(theta, b, data)`.
pub fn log_joint(params: &JointParams, b: &[f64], cohort: &Cohort, prior: &PriorSpec) -> f64 {
    let mut lp = log_prior(params, prior);
    for (p, &bi) in cohort.patients.iter().zip(b) {
        lp += longitudinal_loglik(params, p, bi).unwrap();
        lp += survival_loglik(params, p, bi).unwrap();
        lp += normal_logpdf(bi, 0.0, params.tau2);
    }
    lp
}

/// Probability mass of each of `bins` equal bins on `[lo, hi]` under the
/// density `exp(logf)`, by composite Simpson with `sub` panels per bin.
pub fn bin_masses<F: Fn(f64) -> f64>(logf: F, lo: f64, hi: f64, bins: usize, sub: usize) -> Vec<f64> {
    let sub = sub + sub % 2;
    let n = bins * sub;
    let h = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..=n).map(|k| logf(lo + k as f64 * h)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mut masses: Vec<f64> = (0..bins)
        .map(|b| {
            let s = b * sub;
            let mut acc = f[s] + f[s + sub];
            for k in 1..sub {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f[s + k];
            }
            acc * h / 3.0
        })
        .collect();
    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    masses
}

pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let w = (hi - lo) / bins as f64;
    for &x in samples {
        if x >= lo && x < hi {
            h[((x - lo) / w) as usize] += 1.0;
        }
    }
    let n = samples.len() as f64;
    h.iter().map(|c| c / n).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// TV distance between `samples` and the density `exp(logf)`, binned on
/// mean ± 6 sd of the samples.
pub fn tv_against_grid<F: Fn(f64) -> f64>(samples: &[f64], logf: F, bins: usize) -> f64 {
    let (m, s) = mean_sd(samples);
    let (lo, hi) = (m - 6.0 * s, m + 6.0 * s);
    total_variation(&histogram(samples, lo, hi, bins), &bin_masses(logf, lo, hi, bins, 40))
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, whole: f64, m: f64, fm: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1) + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 60)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Survival of one patient at `t` given `b` directly from the definition
/// `exp(-exp(eta) * integral of h0)`, integrated by adaptive quadrature.
pub fn survival_by_quadrature(hazard: &HazardSpec, eta: f64, t: f64) -> f64 {
    let h = adaptive_simpson(&|s| hazard.level_at(s), 0.0, t, 1e-13);
    (-eta.exp() * h).exp()
}

pub fn small_cohort(n: usize, seed: u64) -> Cohort {
    simulate_cohort(&SimConfig { n_patients: n, seed, ..SimConfig::default() }).unwrap().0
}

/// Mode-free grid moments of `b` given the history up to `t` and survival
/// past `t`: `(mean, second moment)`.
pub fn b_moments_by_grid(params: &JointParams, patient: &jointsurv::PatientRecord, t: f64) -> (f64, f64) {
    let hist = patient.history_until(t);
    let h_t = params.hazard.cumulative(t);
    let z: f64 = params.gamma.iter().zip(&hist.covariates).map(|(g, z)| g * z).sum();
    let logf = |b: f64| {
        let mut lp = normal_logpdf(b, 0.0, params.tau2);
        for (&tj, &y) in hist.obs_times.iter().zip(&hist.obs_values) {
            lp += normal_logpdf(y, params.beta0 + params.beta1 * tj + b, params.sigma2);
        }
        lp - (z + params.alpha * b).exp() * h_t
    };
    let sd = params.tau2.sqrt();
    let (lo, hi) = (-14.0 * sd, 14.0 * sd);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..=n).map(|k| logf(lo + k as f64 * h)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for (k, l) in logs.iter().enumerate() {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let b = lo + k as f64 * h;
        let f = w * (l - max).exp();
        z0 += f;
        z1 += f * b;
        z2 += f * b * b;
    }
    (z1 / z0, z2 / z0)
}

/// Runs `jointsurv` with `args`, panicking with its stderr on failure.
pub fn run_cli(bin: &str, args: &[&str]) {
    let out = std::process::Command::new(bin).args(args).output().expect("spawn jointsurv");
    assert!(out.status.success(), "jointsurv {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Small end-to-end pipeline (simulate, fit, fit-two-stage, predict, evaluate,
/// replicate, diagnose) under `root`.
pub fn run_pipeline(bin: &str, root: &Path) {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (sim, joint, two, pred, eval, rep) = (p("sim"), p("joint"), p("two"), p("pred"), p("eval"), p("rep"));
    let long = format!("{sim}/longitudinal.csv");
    let surv = format!("{sim}/survival.csv");
    let quick = ["--seed", "9", "--chains", "2", "--iters", "300", "--burnin", "100"];
    let data = ["--longitudinal", long.as_str(), "--survival", surv.as_str()];
    let with = |head: &[&str], tail: &[&str]| -> Vec<String> {
        head.iter().chain(&quick).chain(tail).map(|s| s.to_string()).collect()
    };
    let go = |v: Vec<String>| run_cli(bin, &v.iter().map(String::as_str).collect::<Vec<_>>());

    go(with(&["simulate", "--set", "n_patients=80", "--out", &sim], &[]));
    go(with(&["fit", "--out", &joint], &data));
    go(with(&["fit-two-stage", "--out", &two], &data));
    go(with(&["predict", "--fit-dir", &joint, "--patients", "1,2", "--landmarks", "1,2", "--out", &pred], &data));
    go(with(&["evaluate", "--joint-dir", &joint, "--two-stage-dir", &two, "--out", &eval], &data));
    go(with(&["replicate", "--replications", "2", "--set", "n_patients=60", "--out", &rep], &[]));
    go(vec!["diagnose".into(), "--fit-dir".into(), joint.clone(), "--out".into(), p("diag")]);
}

/// Every file under `root` with its contents, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

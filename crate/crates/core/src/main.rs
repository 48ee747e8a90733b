use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use jointsurv::config::{Profile, RunConfig};
use jointsurv::dynpred::predict_survival;
use jointsurv::io;
use jointsurv::mcmc::run_chains;
use jointsurv::simulate::{calibrate_baseline_hazard, simulate_cohort};
use jointsurv::study::{evaluate_models, run_study, thinned_joint_params};
use jointsurv::two_stage::fit_two_stage;
use jointsurv::Cohort;

#[derive(Parser)]
#[command(name = "jointsurv", version, about = "Bayesian joint model of a longitudinal biomarker and survival")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    landmarks: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    horizons: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct CohortFiles {
    /// Long-format biomarker CSV (id,time,value).
    #[arg(long)]
    longitudinal: PathBuf,
    /// Survival CSV (id,event_time,event,z1..zp).
    #[arg(long)]
    survival: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and its latent truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint model.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortFiles,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the two-stage comparator.
    FitTwoStage {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortFiles,
        #[arg(long)]
        out: PathBuf,
    },
    /// Conditional survival curves at each landmark from a joint fit.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortFiles,
        /// Directory written by `fit`.
        #[arg(long)]
        fit_dir: PathBuf,
        /// Restrict to these patient ids.
        #[arg(long, value_delimiter = ',')]
        patients: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time-dependent AUC and Brier scores of a joint and a two-stage fit.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: CohortFiles,
        #[arg(long)]
        joint_dir: PathBuf,
        #[arg(long)]
        two_stage_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulation study with recovery and accuracy tables.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence report for stored draws.
    Diagnose {
        #[arg(long)]
        fit_dir: PathBuf,
        /// File prefix of the fit: joint, stage1 or stage2.
        #[arg(long, default_value = "joint")]
        prefix: String,
        /// Write diagnostics.json here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common, profile: Profile) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(profile);
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got '{kv}'") };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.chains {
        cfg.chains = v;
    }
    if let Some(v) = common.iters {
        cfg.iters = v;
    }
    if let Some(v) = common.burnin {
        cfg.burnin = v;
    }
    if let Some(v) = common.replications {
        cfg.replications = v;
    }
    if let Some(v) = &common.landmarks {
        cfg.landmarks = v.clone();
    }
    if let Some(v) = &common.horizons {
        cfg.horizons = v.clone();
    }
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    io::ensure_dir(out)?;
    io::write_text(&cfg.to_text(), &out.join("config.txt"))?;
    Ok(())
}

fn load(data: &CohortFiles) -> Result<Cohort> {
    io::load_cohort(&data.longitudinal, &data.survival).context("loading cohort")
}

fn simulate(common: &Common, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Single)?;
    prepare_out(out, &cfg)?;
    let mut sim = cfg.sim_config()?;
    if let Some(target) = cfg.target_event_fraction {
        sim.true_params.hazard = calibrate_baseline_hazard(target, &sim)?;
    }
    let (cohort, truth) = simulate_cohort(&sim)?;
    io::write_cohort(&cohort, &out.join("longitudinal.csv"), &out.join("survival.csv"))?;
    io::write_truth(&truth, &out.join("truth.csv"))?;
    println!(
        "simulated {} patients, {} events, censored fraction {:.3}, baseline hazard {}",
        cohort.len(),
        cohort.n_events(),
        cohort.censored_fraction(),
        sim.true_params.hazard.levels()[0]
    );
    Ok(())
}

fn fit(common: &Common, data: &CohortFiles, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Single)?;
    let cohort = load(data)?;
    prepare_out(out, &cfg)?;
    let chains = run_chains(&cohort, &cfg.mcmc_config())?;
    io::write_fit(&chains, out, "joint")?;
    io::write_b_summary(&chains, &cohort, &out.join("b_summary.csv"))?;
    io::write_diagnostics(&chains, &out.join("diagnostics.json"))?;
    print_summary(&chains);
    Ok(())
}

fn print_summary(chains: &[jointsurv::mcmc::ChainDraws]) {
    for s in jointsurv::mcmc::chain_summaries(chains) {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<14} mean {:>9.4}  sd {:>8.4}  95% [{:>8.4}, {:>8.4}]  rhat {}  ess {}",
            s.name, s.mean, s.sd, s.q025, s.q975, fmt(s.rhat), fmt(s.ess)
        );
    }
}

fn fit_two(common: &Common, data: &CohortFiles, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Single)?;
    let cohort = load(data)?;
    prepare_out(out, &cfg)?;
    let f = fit_two_stage(&cohort, &cfg.mcmc_config())?;
    io::write_fit(&f.stage1, out, "stage1")?;
    io::write_fit(&f.stage2, out, "stage2")?;
    io::write_b_hat(&f.b_hat, &cohort, &out.join("b_hat.csv"))?;
    io::write_diagnostics(&f.stage1, &out.join("diagnostics_stage1.json"))?;
    io::write_diagnostics(&f.stage2, &out.join("diagnostics_stage2.json"))?;
    print_summary(&f.stage1);
    print_summary(&f.stage2);
    Ok(())
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn predict(common: &Common, data: &CohortFiles, fit_dir: &Path, patients: Option<&[String]>, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Single)?;
    let cohort = load(data)?;
    let chains = io::read_fit(fit_dir, "joint")?;
    let posterior = thinned_joint_params(&chains, cfg.max_prediction_draws)?;
    if let Some(ids) = patients {
        for id in ids {
            if !cohort.patients.iter().any(|p| &p.id == id) {
                bail!("patient '{id}' not in cohort");
            }
        }
    }
    prepare_out(out, &cfg)?;
    let mut written = 0;
    for &t in &cfg.landmarks {
        let mut horizons = vec![t];
        horizons.extend(cfg.horizons.iter().copied().filter(|&h| h > t));
        for p in &cohort.patients {
            if patients.is_some_and(|ids| !ids.contains(&p.id)) {
                continue;
            }
            let at_risk = p.event_time > t || (p.event_time == t && !p.event);
            if !at_risk {
                if patients.is_some() {
                    eprintln!("skipping patient {} at landmark {t}: not at risk", p.id);
                }
                continue;
            }
            let pred = predict_survival(&posterior, p, t, &horizons)?;
            io::write_prediction(&pred, &out.join(format!("pred_{}_t{t}.csv", file_safe(&p.id))))?;
            written += 1;
        }
    }
    println!("wrote {written} prediction files");
    Ok(())
}

fn evaluate(common: &Common, data: &CohortFiles, joint_dir: &Path, two_dir: &Path, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Evaluate)?;
    let cohort = load(data)?;
    let joint = io::read_fit(joint_dir, "joint")?;
    let stage1 = io::read_fit(two_dir, "stage1")?;
    let stage2 = io::read_fit(two_dir, "stage2")?;
    prepare_out(out, &cfg)?;
    let mut text = String::from("landmark,metric,horizon,joint,two_stage\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for &t in &cfg.landmarks {
        let spec = cfg.eval_spec(t);
        let (ej, et) = evaluate_models(&cohort, &joint, &stage1, &stage2, &spec)?;
        for (k, h) in spec.auc_horizons.iter().enumerate() {
            text.push_str(&format!("{t},auc,{h},{},{}\n", opt(ej.auc[k]), opt(et.auc[k])));
            println!("landmark {t} horizon {h}: auc joint {} two-stage {}", opt(ej.auc[k]), opt(et.auc[k]));
        }
        for (k, h) in spec.auc_horizons.iter().enumerate() {
            text.push_str(&format!("{t},brier,{h},{},{}\n", ej.brier[k], et.brier[k]));
        }
        text.push_str(&format!("{t},integrated_brier,{},{},{}\n", spec.brier_end, ej.integrated_brier, et.integrated_brier));
        println!("landmark {t}: integrated brier joint {} two-stage {}", ej.integrated_brier, et.integrated_brier);
    }
    io::write_text(&text, &out.join("evaluation.csv"))?;
    Ok(())
}

fn replicate(common: &Common, out: &Path) -> Result<()> {
    let cfg = resolve(common, Profile::Replicate)?;
    let study = cfg.study_config()?;
    prepare_out(out, &cfg)?;
    let report = run_study(&study)?;
    io::write_table1(
        &[("joint", report.recovery_joint.as_slice()), ("two_stage", report.recovery_two_stage.as_slice())],
        &out.join("table1.csv"),
    )?;
    io::write_table2(&report.table2, &report.horizons, &out.join("table2.csv"))?;
    io::write_replications(&report, &out.join("replications.csv"))?;
    io::write_study_json(&report, &out.join("study.json"))?;
    println!("{:<10} {:>8} {:>10} {:>9} {:>9}", "parameter", "truth", "post.mean", "bias", "coverage");
    for r in &report.recovery_joint {
        println!("{:<10} {:>8.3} {:>10.4} {:>+9.4} {:>9.2}", r.parameter, r.truth, r.posterior_mean, r.bias, r.coverage);
    }
    for m in &report.table2 {
        println!("{:<10} auc {:?} integrated brier {:.4}", m.model, m.auc, m.integrated_brier);
    }
    println!("mean censored fraction {:.3}", report.censored_fraction);
    Ok(())
}

fn diagnose(fit_dir: &Path, prefix: &str, out: Option<&Path>) -> Result<()> {
    let chains = io::read_fit(fit_dir, prefix)?;
    match out {
        Some(dir) => {
            io::ensure_dir(dir)?;
            io::write_diagnostics(&chains, &dir.join("diagnostics.json"))?;
            print_summary(&chains);
        }
        None => println!("{}", serde_json::to_string_pretty(&io::diagnostics_report(&chains))?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { common, out } => simulate(common, out),
        Command::Fit { common, data, out } => fit(common, data, out),
        Command::FitTwoStage { common, data, out } => fit_two(common, data, out),
        Command::Predict { common, data, fit_dir, patients, out } => predict(common, data, fit_dir, patients.as_deref(), out),
        Command::Evaluate { common, data, joint_dir, two_stage_dir, out } => evaluate(common, data, joint_dir, two_stage_dir, out),
        Command::Replicate { common, out } => replicate(common, out),
        Command::Diagnose { fit_dir, prefix, out } => diagnose(fit_dir, prefix, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

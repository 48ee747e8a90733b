//! CSV and JSON reading and writing.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back parses to the identical `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynpred::SurvivalPrediction;
use crate::mcmc::{chain_summaries, quantile_sorted, ChainDraws, DrawMatrix, FitKind, ParamSummary};
use crate::metrics::RecoveryRow;
use crate::model::{Cohort, ModelError, PatientRecord};
use crate::simulate::TruthRecord;
use crate::study::{StudyReport, Table2Row};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path} line {line}: {msg}")]
    Row { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(io_err(path))
}

fn row<W: Write>(w: &mut csv::Writer<W>, fields: &[String], path: &Path) -> Result<(), IoError> {
    w.write_record(fields).map_err(csv_err(path))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64, IoError> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IoError::Row { path: path.to_path_buf(), line: line_of(rec), msg: format!("bad {name} '{raw}'") })
}

fn expect_header(path: &Path, header: &csv::StringRecord, want: &[&str]) -> Result<(), IoError> {
    let ok = header.len() >= want.len() && want.iter().zip(header.iter()).all(|(w, h)| *w == h);
    if ok {
        Ok(())
    } else {
        Err(IoError::File { path: path.to_path_buf(), msg: format!("header must start with {}", want.join(",")) })
    }
}

/// Writes the long-format biomarker file and the one-row-per-patient survival file.
pub fn write_cohort(cohort: &Cohort, longitudinal: &Path, survival: &Path) -> Result<(), IoError> {
    let mut w = create(longitudinal)?;
    row(&mut w, &["id".into(), "time".into(), "value".into()], longitudinal)?;
    for p in &cohort.patients {
        for (t, y) in p.obs_times.iter().zip(&p.obs_values) {
            row(&mut w, &[p.id.clone(), t.to_string(), y.to_string()], longitudinal)?;
        }
    }
    finish(w, longitudinal)?;

    let mut w = create(survival)?;
    let mut header = vec!["id".to_string(), "event_time".into(), "event".into()];
    header.extend((1..=cohort.n_covariates).map(|j| format!("z{j}")));
    row(&mut w, &header, survival)?;
    for p in &cohort.patients {
        let mut r = vec![p.id.clone(), p.event_time.to_string(), u8::from(p.event).to_string()];
        r.extend(p.covariates.iter().map(|z| z.to_string()));
        row(&mut w, &r, survival)?;
    }
    finish(w, survival)
}

/// Reads and joins the two cohort files. Patients keep the order of the
/// survival file.
pub fn load_cohort(longitudinal: &Path, survival: &Path) -> Result<Cohort, IoError> {
    let mut rdr = open_reader(survival)?;
    let header = rdr.headers().map_err(csv_err(survival))?.clone();
    expect_header(survival, &header, &["id", "event_time", "event"])?;
    let p = header.len() - 3;
    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(survival))?;
        let line = line_of(&rec);
        let bad = |msg: String| IoError::Row { path: survival.to_path_buf(), line, msg };
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let event_time = parse_f64(survival, &rec, 1, "event_time")?;
        let event = match rec.get(2) {
            Some("1") => true,
            Some("0") => false,
            other => return Err(bad(format!("event must be 0 or 1, got '{}'", other.unwrap_or("")))),
        };
        let covariates = (0..p).map(|j| parse_f64(survival, &rec, 3 + j, &format!("z{}", j + 1))).collect::<Result<Vec<_>, _>>()?;
        if !(event_time > 0.0) {
            return Err(bad(format!("event_time must be positive, got {event_time}")));
        }
        if index.insert(id.clone(), patients.len()).is_some() {
            return Err(bad(format!("duplicate id '{id}'")));
        }
        patients.push(PatientRecord { id, obs_times: vec![], obs_values: vec![], event_time, event, covariates });
    }

    let mut rdr = open_reader(longitudinal)?;
    let header = rdr.headers().map_err(csv_err(longitudinal))?.clone();
    expect_header(longitudinal, &header, &["id", "time", "value"])?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(longitudinal))?;
        let line = line_of(&rec);
        let bad = |msg: String| IoError::Row { path: longitudinal.to_path_buf(), line, msg };
        let id = rec.get(0).unwrap_or("");
        let Some(&i) = index.get(id) else {
            return Err(bad(format!("id '{id}' is missing from the survival file")));
        };
        let t = parse_f64(longitudinal, &rec, 1, "time")?;
        let y = parse_f64(longitudinal, &rec, 2, "value")?;
        let pat = &mut patients[i];
        if t < 0.0 {
            return Err(bad(format!("negative time {t}")));
        }
        if let Some(&last) = pat.obs_times.last() {
            if t <= last {
                return Err(bad(format!("times for id '{id}' not strictly increasing ({t} after {last})")));
            }
        }
        if t > pat.event_time {
            return Err(bad(format!("observation at {t} after event_time {} for id '{id}'", pat.event_time)));
        }
        pat.obs_times.push(t);
        pat.obs_values.push(y);
    }
    if let Some(pat) = patients.iter().find(|p| p.obs_times.is_empty()) {
        return Err(IoError::File {
            path: longitudinal.to_path_buf(),
            msg: format!("id '{}' from the survival file has no measurements", pat.id),
        });
    }
    Ok(Cohort::new(patients, p)?)
}

pub fn write_truth(truth: &TruthRecord, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    row(&mut w, &["id".into(), "b_true".into(), "t_star".into()], path)?;
    for ((id, b), t) in truth.ids.iter().zip(&truth.b).zip(&truth.t_star) {
        row(&mut w, &[id.clone(), b.to_string(), t.to_string()], path)?;
    }
    finish(w, path)
}

/// Everything about a fit except the draw values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitMeta {
    pub kind: String,
    pub cuts: Vec<f64>,
    pub n_covariates: usize,
    pub chain_seeds: Vec<u64>,
    pub accept_rates: Vec<Vec<(String, f64)>>,
    pub adaptation_frozen: Vec<bool>,
}

fn chain_path(dir: &Path, prefix: &str, c: usize) -> PathBuf {
    dir.join(format!("{prefix}_chain{}.csv", c + 1))
}

fn meta_path(dir: &Path, prefix: &str) -> PathBuf {
    dir.join(format!("{prefix}_fit.json"))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// One CSV of parameter draws per chain plus a JSON metadata file.
pub fn write_fit(chains: &[ChainDraws], dir: &Path, prefix: &str) -> Result<(), IoError> {
    let Some(first) = chains.first() else {
        return Err(IoError::File { path: dir.to_path_buf(), msg: "no chains to write".into() });
    };
    for (c, chain) in chains.iter().enumerate() {
        let path = chain_path(dir, prefix, c);
        let mut w = create(&path)?;
        row(&mut w, &chain.names, &path)?;
        let mut fields = Vec::with_capacity(chain.names.len());
        for r in chain.params.rows() {
            fields.clear();
            fields.extend(r.iter().map(|v| v.to_string()));
            row(&mut w, &fields, &path)?;
        }
        finish(w, &path)?;
    }
    let meta = FitMeta {
        kind: first.kind.as_str().to_string(),
        cuts: first.cuts.clone(),
        n_covariates: first.n_covariates,
        chain_seeds: chains.iter().map(|c| c.chain_seed).collect(),
        accept_rates: chains.iter().map(|c| c.accept_rates.clone()).collect(),
        adaptation_frozen: chains.iter().map(|c| c.adaptation_frozen).collect(),
    };
    write_json(&meta, &meta_path(dir, prefix))
}

/// Reads parameter draws written by [`write_fit`]. Random-effect draws are
/// not stored, so `b` is empty.
pub fn read_fit(dir: &Path, prefix: &str) -> Result<Vec<ChainDraws>, IoError> {
    let mpath = meta_path(dir, prefix);
    let f = File::open(&mpath).map_err(io_err(&mpath))?;
    let meta: FitMeta = serde_json::from_reader(f).map_err(|source| IoError::Json { path: mpath.clone(), source })?;
    let kind: FitKind = meta.kind.parse().map_err(|msg| IoError::File { path: mpath.clone(), msg })?;
    let mut chains = Vec::with_capacity(meta.chain_seeds.len());
    for c in 0..meta.chain_seeds.len() {
        let path = chain_path(dir, prefix, c);
        let mut rdr = open_reader(&path)?;
        let names: Vec<String> = rdr.headers().map_err(csv_err(&path))?.iter().map(String::from).collect();
        let expected = kind.column_names(meta.n_covariates, meta.cuts.len() + 1);
        if names != expected {
            return Err(IoError::File { path, msg: format!("columns {names:?} do not match {expected:?}") });
        }
        let mut params = DrawMatrix::new(names.len());
        let mut buf = Vec::with_capacity(names.len());
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err(&path))?;
            buf.clear();
            for (j, name) in names.iter().enumerate() {
                buf.push(parse_f64(&path, &rec, j, name)?);
            }
            params.push_row(&buf);
        }
        chains.push(ChainDraws {
            kind,
            names,
            params,
            b: DrawMatrix::new(0),
            accept_rates: meta.accept_rates.get(c).cloned().unwrap_or_default(),
            cuts: meta.cuts.clone(),
            n_covariates: meta.n_covariates,
            chain_seed: meta.chain_seeds[c],
            adaptation_frozen: meta.adaptation_frozen.get(c).copied().unwrap_or(true),
        });
    }
    Ok(chains)
}

/// Posterior mean and 95% interval of each patient's random effect.
pub fn write_b_summary(chains: &[ChainDraws], cohort: &Cohort, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    row(&mut w, &["id".into(), "mean".into(), "q025".into(), "q975".into()], path)?;
    let mut pooled = Vec::new();
    for (i, p) in cohort.patients.iter().enumerate() {
        pooled.clear();
        for c in chains {
            pooled.extend(c.b.rows().map(|r| r[i]));
        }
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        pooled.sort_by(|a, b| a.total_cmp(b));
        row(
            &mut w,
            &[p.id.clone(), mean.to_string(), quantile_sorted(&pooled, 0.025).to_string(), quantile_sorted(&pooled, 0.975).to_string()],
            path,
        )?;
    }
    finish(w, path)
}

pub fn write_b_hat(b_hat: &[f64], cohort: &Cohort, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    row(&mut w, &["id".into(), "b_hat".into()], path)?;
    for (p, b) in cohort.patients.iter().zip(b_hat) {
        row(&mut w, &[p.id.clone(), b.to_string()], path)?;
    }
    finish(w, path)
}

#[derive(Debug, Serialize)]
pub struct DiagnosticsReport {
    pub kind: String,
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub parameters: Vec<ParamSummary>,
    pub accept_rates: Vec<Vec<(String, f64)>>,
}

pub fn diagnostics_report(chains: &[ChainDraws]) -> DiagnosticsReport {
    DiagnosticsReport {
        kind: chains.first().map_or("", |c| c.kind.as_str()).to_string(),
        n_chains: chains.len(),
        draws_per_chain: chains.first().map_or(0, |c| c.n_draws()),
        parameters: chain_summaries(chains),
        accept_rates: chains.iter().map(|c| c.accept_rates.clone()).collect(),
    }
}

pub fn write_diagnostics(chains: &[ChainDraws], path: &Path) -> Result<(), IoError> {
    write_json(&diagnostics_report(chains), path)
}

pub fn write_prediction(pred: &SurvivalPrediction, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    row(&mut w, &["horizon".into(), "mean".into(), "lower95".into(), "upper95".into()], path)?;
    for k in 0..pred.horizons.len() {
        row(
            &mut w,
            &[
                pred.horizons[k].to_string(),
                pred.mean_survival[k].to_string(),
                pred.lower95[k].to_string(),
                pred.upper95[k].to_string(),
            ],
            path,
        )?;
    }
    finish(w, path)
}

/// Recovery table: one row per model and parameter.
pub fn write_table1(rows: &[(&str, &[RecoveryRow])], path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    let header = ["model", "parameter", "truth", "posterior_mean", "bias", "relative_bias", "coverage_95", "replications"];
    row(&mut w, &header.map(String::from), path)?;
    for (model, table) in rows {
        for r in *table {
            row(
                &mut w,
                &[
                    model.to_string(),
                    r.parameter.clone(),
                    r.truth.to_string(),
                    r.posterior_mean.to_string(),
                    r.bias.to_string(),
                    r.relative_bias.to_string(),
                    r.coverage.to_string(),
                    r.replications.to_string(),
                ],
                path,
            )?;
        }
    }
    finish(w, path)
}

fn horizon_label(h: f64) -> String {
    format!("{h}")
}

/// Accuracy table: one row per metric, one column per model.
pub fn write_table2(rows: &[Table2Row], horizons: &[f64], path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(rows.iter().map(|r| r.model.clone()));
    row(&mut w, &header, path)?;
    for (k, &h) in horizons.iter().enumerate() {
        let mut r = vec![format!("auc_at_{}", horizon_label(h))];
        r.extend(rows.iter().map(|m| m.auc[k].to_string()));
        row(&mut w, &r, path)?;
    }
    let mut r = vec!["integrated_brier".to_string()];
    r.extend(rows.iter().map(|m| m.integrated_brier.to_string()));
    row(&mut w, &r, path)?;
    for (k, &h) in horizons.iter().enumerate() {
        let mut r = vec![format!("brier_at_{}", horizon_label(h))];
        r.extend(rows.iter().map(|m| m.brier[k].to_string()));
        row(&mut w, &r, path)?;
    }
    finish(w, path)
}

/// Per-replication details, one row each.
pub fn write_replications(report: &StudyReport, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    let names = crate::study::TABLE1_PARAMS;
    let mut header = vec!["replication".to_string(), "sim_seed".into(), "mcmc_seed".into(), "censored_fraction".into()];
    for n in names {
        header.extend([format!("joint_{n}_mean"), format!("joint_{n}_rhat"), format!("joint_{n}_ess"), format!("two_stage_{n}_mean")]);
    }
    for h in &report.horizons {
        header.extend([format!("joint_auc_{h}"), format!("two_stage_auc_{h}")]);
    }
    header.extend(["joint_integrated_brier".into(), "two_stage_integrated_brier".into()]);
    row(&mut w, &header, path)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in &report.replications {
        let mut f = vec![r.index.to_string(), r.sim_seed.to_string(), r.mcmc_seed.to_string(), r.censored_fraction.to_string()];
        for j in 0..names.len() {
            f.extend([r.joint[j].mean.to_string(), opt(r.joint_rhat[j]), opt(r.joint_ess[j]), r.two_stage[j].mean.to_string()]);
        }
        for k in 0..report.horizons.len() {
            f.extend([opt(r.auc_joint[k]), opt(r.auc_two_stage[k])]);
        }
        f.extend([r.ibs_joint.to_string(), r.ibs_two_stage.to_string()]);
        row(&mut w, &f, path)?;
    }
    finish(w, path)
}

pub fn write_study_json(report: &StudyReport, path: &Path) -> Result<(), IoError> {
    write_json(report, path)
}

pub fn write_text(text: &str, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_cohort, SimConfig};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let long = write(dir.path(), "l.csv", "id,time,value\na,0,1.5\nb,0,2\na,1.25,1.75\n");
        let surv = write(dir.path(), "s.csv", "id,event_time,event,z1\nb,3,0,-1\na,2.5,1,0.5\n");
        let c = load_cohort(&long, &surv).unwrap();
        assert_eq!(c.n_covariates, 1);
        assert_eq!(c.patients[0], PatientRecord::new("b", vec![0.0], vec![2.0], 3.0, false, vec![-1.0]).unwrap());
        assert_eq!(c.patients[1], PatientRecord::new("a", vec![0.0, 1.25], vec![1.5, 1.75], 2.5, true, vec![0.5]).unwrap());
    }

    fn load_err(long: &str, surv: &str) -> String {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "l.csv", long);
        let s = write(dir.path(), "s.csv", surv);
        load_cohort(&l, &s).unwrap_err().to_string()
    }

    #[test]
    fn row_errors_name_the_line() {
        let surv = "id,event_time,event,z1\na,2,1,0\n";
        let e = load_err("id,time,value\na,0,1\na,3,1\n", surv);
        assert!(e.contains("line 3") && e.contains("after event_time"), "{e}");
        let e = load_err("id,time,value\na,1,1\na,0.5,1\n", surv);
        assert!(e.contains("line 3") && e.contains("not strictly increasing"), "{e}");
        let e = load_err("id,time,value\na,0,1\nzz,0,1\n", surv);
        assert!(e.contains("line 3") && e.contains("missing from the survival file"), "{e}");
        let e = load_err("id,time,value\na,0,x\n", surv);
        assert!(e.contains("line 2") && e.contains("value"), "{e}");
        let e = load_err("id,time,value\na,0,1\n", "id,event_time,event,z1\na,2,1,0\nb,2,2,0\n");
        assert!(e.contains("line 3") && e.contains("event must be"), "{e}");
        let e = load_err("id,time,value\na,0,1\n", "id,event_time,event,z1\na,2,1,0\nb,2,0,0\n");
        assert!(e.contains("'b'") && e.contains("no measurements"), "{e}");
        let e = load_err("id,t,value\na,0,1\n", surv);
        assert!(e.contains("header"), "{e}");
    }

    #[test]
    fn simulated_cohort_round_trips_exactly() {
        let (cohort, truth) = simulate_cohort(&SimConfig { n_patients: 60, seed: 4, ..SimConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let l = dir.path().join("l.csv");
        let s = dir.path().join("s.csv");
        write_cohort(&cohort, &l, &s).unwrap();
        assert_eq!(load_cohort(&l, &s).unwrap(), cohort);
        write_truth(&truth, &dir.path().join("t.csv")).unwrap();
    }

    #[test]
    fn fit_round_trips_exactly() {
        let (cohort, _) = simulate_cohort(&SimConfig { n_patients: 30, seed: 2, ..SimConfig::default() }).unwrap();
        let cfg = crate::mcmc::McmcConfig { n_chains: 2, n_iter: 120, burn_in: 20, ..Default::default() };
        let chains = crate::mcmc::run_chains(&cohort, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fit(&chains, dir.path(), "joint").unwrap();
        let back = read_fit(dir.path(), "joint").unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in chains.iter().zip(&back) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.names, b.names);
            assert_eq!(a.cuts, b.cuts);
            assert_eq!(a.accept_rates, b.accept_rates);
        }
    }
}

//! Run artifacts on disk and the cross-run report.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{hypervolume, pareto_front, TraceRecord};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const PARETO_FILE: &str = "pareto.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ORACLE_FRONT_FILE: &str = "oracle_front.csv";
pub const ORACLE_HV_FILE: &str = "oracle_hv.json";

pub const PARETO_HEADER: &str = "scheme;accuracy;params;flops;pr;fr;ar";

/// One `pareto.csv` row with the scheme kept as its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontRow {
    pub scheme: String,
    pub accuracy: f64,
    pub params: f64,
    pub flops: f64,
    pub pr: f64,
    pub fr: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub hypervolume: f64,
    pub best_accuracy_scheme: Option<String>,
    pub evaluation_count: usize,
    pub wall_time: f64,
    pub rounds: usize,
    pub partial: bool,
    pub seed: u64,
    pub gamma: f64,
    pub base_params: f64,
    pub kg_training: bool,
    pub exp_training: bool,
    pub progressive_replay: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub hypervolume: f64,
    pub evaluations: usize,
    pub front_size: usize,
    pub gamma: f64,
    pub max_len: usize,
    pub base_params: f64,
    pub config_hash: String,
}

fn named<T>(path: &Path, r: std::result::Result<T, impl std::fmt::Display>) -> Result<T> {
    r.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(named(path, File::create(path))?))
}

pub fn write_front(path: &Path, rows: &[FrontRow]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{PARETO_HEADER}")?;
    for r in rows {
        writeln!(out, "{};{};{};{};{};{};{}", r.scheme, r.accuracy, r.params, r.flops, r.pr, r.fr, r.ar)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_front(path: &Path) -> Result<Vec<FrontRow>> {
    let file = named(path, File::open(path))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == PARETO_HEADER => {}
        _ => return Err(Error::Data(format!("{}: missing header `{PARETO_HEADER}`", path.display()))),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split(';').collect();
        if cols.len() != 7 {
            return Err(Error::Data(format!("{}: line {} has {} columns", path.display(), n + 2, cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| Error::Data(format!("{}: line {}: bad number `{}`", path.display(), n + 2, cols[i])))
        };
        rows.push(FrontRow {
            scheme: cols[0].to_string(),
            accuracy: num(1)?,
            params: num(2)?,
            flops: num(3)?,
            pr: num(4)?,
            fr: num(5)?,
            ar: num(6)?,
        });
    }
    Ok(rows)
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = create(path)?;
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = named(path, File::open(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = named(path, std::fs::read_to_string(path))?;
    named(path, serde_json::from_str(&text))
}

/// Hypervolume of the constrained history front after each evaluation.
pub fn hypervolume_curve(trace: &[TraceRecord], gamma: f64, base_params: f64) -> Vec<f64> {
    let mut front: Vec<(f64, f64)> = Vec::new();
    let mut curve = Vec::with_capacity(trace.len());
    let mut hv = 0.0;
    for r in trace {
        if r.pr >= gamma {
            front.push((r.accuracy, r.params));
            front = pareto_front(&front).into_iter().map(|i| front[i]).collect();
            hv = hypervolume(&front, base_params);
        }
        curve.push(hv);
    }
    curve
}

/// A completed run directory, fully parsed.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: Summary,
    pub trace: Vec<TraceRecord>,
    pub front: Vec<FrontRow>,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let summary: Summary = read_json(&dir.join(SUMMARY_FILE))?;
        let trace_path = dir.join(TRACE_FILE);
        let trace = read_trace(&trace_path)?;
        if trace.len() != summary.evaluation_count {
            return Err(Error::Data(format!(
                "{}: {} lines but summary records {} evaluations",
                trace_path.display(),
                trace.len(),
                summary.evaluation_count
            )));
        }
        let front = read_front(&dir.join(PARETO_FILE))?;
        Ok(RunArtifacts { dir: dir.to_path_buf(), summary, trace, front })
    }
}

pub const REPORT_HEADER: &str =
    "run,seed,config_hash,kg_training,exp_training,progressive_replay,evaluations,partial,hypervolume,front_size,best_accuracy_scheme,oracle_hypervolume,hv_ratio";

/// Writes the per-run comparison table. `oracle` overrides any
/// `oracle_hv.json` found inside a run directory.
pub fn write_report<W: Write>(runs: &[RunArtifacts], oracle: Option<&OracleSummary>, mut out: W) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for run in runs {
        let local: Option<OracleSummary> = {
            let p = run.dir.join(ORACLE_HV_FILE);
            if oracle.is_none() && p.exists() {
                Some(read_json(&p)?)
            } else {
                None
            }
        };
        let o = oracle.or(local.as_ref());
        let s = &run.summary;
        let (ohv, ratio) = match o {
            Some(o) if o.hypervolume > 0.0 => (o.hypervolume.to_string(), (s.hypervolume / o.hypervolume).to_string()),
            Some(o) => (o.hypervolume.to_string(), String::new()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            run.dir.display(),
            s.seed,
            s.config_hash,
            s.kg_training,
            s.exp_training,
            s.progressive_replay,
            s.evaluation_count,
            s.partial,
            s.hypervolume,
            run.front.len(),
            s.best_accuracy_scheme.as_deref().unwrap_or(""),
            ohv,
            ratio
        )?;
    }
    Ok(())
}

/// Long-format curve data: `run,evaluations,hypervolume`.
pub fn write_curves<W: Write>(runs: &[RunArtifacts], mut out: W) -> Result<()> {
    writeln!(out, "run,evaluations,hypervolume")?;
    for run in runs {
        let curve = hypervolume_curve(&run.trace, run.summary.gamma, run.summary.base_params);
        for (i, hv) in curve.iter().enumerate() {
            writeln!(out, "{},{},{}", run.dir.display(), i + 1, hv)?;
        }
    }
    Ok(())
}

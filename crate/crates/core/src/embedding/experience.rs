//! Experimental-experience records: observed `(AR, PR)` of one strategy on one task.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, StrategyIdx};
use crate::error::{Error, Result};
use crate::evaluation::{simulate_step, EvaluatorConfig, ModelState};

/// Dataset and model descriptors of a compression task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    pub category_count: f64,
    pub image_size: f64,
    pub channel_count: f64,
    pub data_amount: f64,
    pub param_count: f64,
    pub flops: f64,
    pub accuracy: f64,
}

pub const TASK_FEATURES: usize = 7;

impl TaskFeatures {
    /// ResNet-56 on CIFAR-10.
    pub fn cifar10_resnet56() -> Self {
        TaskFeatures {
            category_count: 10.0,
            image_size: 32.0,
            channel_count: 3.0,
            data_amount: 50_000.0,
            param_count: 0.90e6,
            flops: 0.27e9,
            accuracy: 0.9104,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = self.raw();
        if fields.iter().any(|x| !x.is_finite() || *x < 0.0) || self.accuracy > 1.0 {
            return Err(Error::Input(format!("invalid task features {self:?}")));
        }
        Ok(())
    }

    fn raw(&self) -> [f64; TASK_FEATURES] {
        [
            self.category_count,
            self.image_size,
            self.channel_count,
            self.data_amount,
            self.param_count,
            self.flops,
            self.accuracy,
        ]
    }

    /// `log10(1 + x)` for the six counts, accuracy unchanged.
    pub fn normalized(&self) -> [f64; TASK_FEATURES] {
        let mut out = self.raw();
        for x in &mut out[..6] {
            *x = (1.0 + *x).log10();
        }
        out
    }

    /// Uncompressed model described by the task's model features.
    pub fn model_state(&self) -> ModelState {
        ModelState::new(self.param_count, self.flops, self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub strategy: String,
    pub task: TaskFeatures,
    pub ar: f64,
    pub pr: f64,
}

/// A record whose strategy has been resolved against a catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedRecord {
    pub strategy: StrategyIdx,
    pub task: TaskFeatures,
    pub ar: f64,
    pub pr: f64,
}

impl ExperienceRecord {
    pub fn resolve(&self, catalog: &Catalog) -> Result<ResolvedRecord> {
        let strategy = catalog
            .lookup(&self.strategy)
            .map_err(|_| Error::Data(format!("experience record references unknown strategy `{}`", self.strategy)))?;
        self.task.validate()?;
        if !(0.0..=1.0).contains(&self.pr) || !(self.ar > -1.0) || !self.ar.is_finite() {
            return Err(Error::Data(format!(
                "experience record for `{}` has out-of-range targets (ar {}, pr {})",
                self.strategy, self.ar, self.pr
            )));
        }
        Ok(ResolvedRecord { strategy, task: self.task, ar: self.ar, pr: self.pr })
    }
}

pub fn resolve_all(records: &[ExperienceRecord], catalog: &Catalog) -> Result<Vec<ResolvedRecord>> {
    records.iter().map(|r| r.resolve(catalog)).collect()
}

/// Reads a JSON-lines experience file; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<ExperienceRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("experience line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[ExperienceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Random image-classification task around CIFAR scale.
pub fn random_task<R: Rng + ?Sized>(rng: &mut R) -> TaskFeatures {
    let param_count = 10f64.powf(rng.gen_range(5.3..7.3));
    TaskFeatures {
        category_count: if rng.gen_bool(0.5) { 10.0 } else { 100.0 },
        image_size: 32.0,
        channel_count: 3.0,
        data_amount: 50_000.0,
        param_count,
        flops: param_count * rng.gen_range(50.0..400.0),
        accuracy: rng.gen_range(0.6..0.95),
    }
}

/// Experience produced by applying uniformly drawn strategies to random tasks
/// in the simulated environment seeded with `evaluator_seed`.
pub fn synthesize_records<R: Rng + ?Sized>(
    catalog: &Catalog,
    n: usize,
    evaluator_seed: u64,
    rng: &mut R,
) -> Result<Vec<ExperienceRecord>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = catalog.strategy(StrategyIdx(rng.gen_range(0..catalog.len() as u32)));
        let task = random_task(rng);
        let before = task.model_state();
        let cfg = EvaluatorConfig { seed: evaluator_seed, base_state: before, pretrain_epochs: 200 };
        let after = simulate_step(&before, s, &cfg)?;
        let delta = crate::evaluation::compute_metrics(&before, &after);
        out.push(ExperienceRecord { strategy: s.canonical_id.clone(), task, ar: delta.ar, pr: delta.pr });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization() {
        let t = TaskFeatures::cifar10_resnet56();
        let n = t.normalized();
        assert!((n[0] - 11f64.log10()).abs() < 1e-15);
        assert_eq!(n[6], 0.9104);
    }

    #[test]
    fn jsonl_round_trip_and_resolution() {
        let catalog = Catalog::full();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records = synthesize_records(&catalog, 20, 1, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&records, &mut buf).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, records);
        let resolved = resolve_all(&back, &catalog).unwrap();
        assert_eq!(resolved.len(), 20);
        for r in resolved {
            assert!((0.0..=1.0).contains(&r.pr) && r.ar > -1.0);
        }
    }

    #[test]
    fn unknown_strategy_is_data_error() {
        let catalog = Catalog::full();
        let rec = ExperienceRecord {
            strategy: "C3|HP1=*9".into(),
            task: TaskFeatures::cifar10_resnet56(),
            ar: 0.0,
            pr: 0.1,
        };
        let err = rec.resolve(&catalog).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("C3|HP1=*9")));
    }

    #[test]
    fn record_line_format() {
        let line = r#"{"strategy":"C4|HP2=x0.04|HP9=*0.1|HP10=1","task":{"category_count":10,"image_size":32,"channel_count":3,"data_amount":50000,"param_count":900000,"flops":270000000,"accuracy":0.91},"ar":-0.01,"pr":0.04}"#;
        let recs = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(recs[0].task.param_count, 900000.0);
    }
}

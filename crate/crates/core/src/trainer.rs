// SPDX-License-Identifier: Apache-2.0

//! Training loop, per-circuit evaluation tables and ablation runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stgcn::{Model, ModelConfig, Variant};
use crate::stgraph::{Dataset, FeatureMode, StGraph};

pub use crate::stgraph::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub split: Split,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.05,
            seed: 1,
            split: Split::Uniform,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be a finite non-negative number, got {}", self.lr)));
        }
        self.model.validate()
    }
}

/// Circuits (ascending by gate count) partitioned by `strategy`.
pub fn split_circuits<T: Clone>(sorted: &[T], strategy: Split) -> Result<(Vec<T>, Vec<T>)> {
    let flags = strategy.assign(sorted.len())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, is_train) in sorted.iter().zip(flags) {
        if is_train {
            train.push(c.clone());
        } else {
            test.push(c.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mse\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }
}

/// Per-sample Adam updates over a seeded shuffle of `samples` each epoch.
pub fn train(samples: &[&StGraph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    for g in samples {
        cfg.model.check_sample(g)?;
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a1e_5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = model.loss_and_grad(samples[i])?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample: samples[i].id(),
                });
            }
            total += loss;
            model.params.adam_step(&grads, cfg.lr)?;
        }
        losses.push(total / samples.len() as f64);
    }
    Ok(TrainOutcome { model, losses })
}

pub fn train_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_dataset(ds, &cfg.model)?;
    train(&ds.train_samples(), cfg)
}

fn check_dataset(ds: &Dataset, model: &ModelConfig) -> Result<()> {
    let m = &ds.manifest;
    if (m.m, m.s, m.p, m.q) != (model.m, model.s, model.p, model.q) {
        return Err(Error::ConfigMismatch(format!(
            "dataset has (m, s, p, q) = ({}, {}, {}, {}), model expects ({}, {}, {}, {})",
            m.m, m.s, m.p, m.q, model.m, model.s, model.p, model.q
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub circuit: String,
    pub split: String,
    pub windows: usize,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub tag: String,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Unweighted mean over rows with the given split tag (`None`: all rows).
    pub fn average(&self, split: Option<&str>) -> Option<(f64, f64)> {
        let rows: Vec<&EvalRow> = self
            .rows
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.rmse).sum::<f64>() / n,
            rows.iter().map(|r| r.mae).sum::<f64>() / n,
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,circuit,split,windows,rmse,mae\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", self.tag, r.circuit, r.split, r.windows, r.rmse, r.mae));
        }
        for tag in ["train", "test"] {
            if let Some((rmse, mae)) = self.average(Some(tag)) {
                s.push_str(&format!("{},average,{tag},,{rmse},{mae}\n", self.tag));
            }
        }
        s
    }
}

/// Short label such as `FIP-5-U` (features, horizon, split).
pub fn model_tag(mode: FeatureMode, s: usize, split: Split) -> String {
    let f = match mode {
        FeatureMode::Fip => "FIP",
        FeatureMode::Tm => "TM",
    };
    let sp = match split {
        Split::Uniform => "U",
        Split::Sparse => "S",
    };
    format!("{f}-{s}-{sp}")
}

/// Per-circuit metrics averaged over that circuit's windows.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<EvalTable> {
    check_dataset(ds, &model.config)?;
    let mut groups: BTreeMap<&str, (bool, Vec<&StGraph>)> = BTreeMap::new();
    for (g, &is_train) in ds.samples.iter().zip(&ds.is_train) {
        groups.entry(g.circuit()).or_insert((is_train, Vec::new())).1.push(g);
    }
    // Manifest order: ascending gate count.
    let order = ds.circuits();
    let rows: Result<Vec<EvalRow>> = order
        .par_iter()
        .filter_map(|c| groups.get(c).map(|g| (*c, g)))
        .map(|(c, (is_train, windows))| {
            let mut rmse = 0.0;
            let mut mae = 0.0;
            for g in windows {
                let m = model.evaluate_sample(g)?;
                rmse += m.rmse;
                mae += m.mae;
            }
            let k = windows.len() as f64;
            Ok(EvalRow {
                circuit: c.to_string(),
                split: if *is_train { "train" } else { "test" }.to_string(),
                windows: windows.len(),
                rmse: rmse / k,
                mae: mae / k,
            })
        })
        .collect();
    Ok(EvalTable {
        tag: model_tag(ds.manifest.mode, ds.manifest.s, ds.manifest.split),
        rows: rows?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Median over seeds of the test-row average.
    pub rmse: f64,
    pub mae: f64,
    pub delta_rmse_pct: f64,
    pub delta_mae_pct: f64,
    pub per_seed: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,rmse,mae,delta_rmse_pct,delta_mae_pct\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant.as_str(),
                r.rmse,
                r.mae,
                r.delta_rmse_pct,
                r.delta_mae_pct
            ));
        }
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains and evaluates every variant under identical seeds and split.
pub fn run_ablation(ds: &Dataset, base: &TrainConfig, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                model: ModelConfig {
                    variant: v,
                    ..base.model.clone()
                },
                ..base.clone()
            };
            let out = train_dataset(ds, &cfg)?;
            let table = evaluate(&out.model, ds)?;
            let (rmse, mae) = table
                .average(Some("test"))
                .ok_or_else(|| Error::invalid("dataset has no test circuits"))?;
            per_seed.push((seed, rmse, mae));
        }
        let rmse = median(&per_seed.iter().map(|r| r.1).collect::<Vec<_>>());
        let mae = median(&per_seed.iter().map(|r| r.2).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant: v,
            rmse,
            mae,
            delta_rmse_pct: 0.0,
            delta_mae_pct: 0.0,
            per_seed,
        });
    }
    let (fr, fm) = (rows[0].rmse, rows[0].mae);
    for r in &mut rows {
        r.delta_rmse_pct = 100.0 * (r.rmse - fr) / fr;
        r.delta_mae_pct = 100.0 * (r.mae - fm) / fm;
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_bench, s27};
    use crate::provenance::Provenance;
    use crate::stgraph::{ConvertOptions, Dataset};

    #[test]
    fn split_examples() {
        let c: Vec<usize> = (0..6).collect();
        assert_eq!(split_circuits(&c, Split::Uniform).unwrap(), (vec![0, 2, 4], vec![1, 3, 5]));
        assert_eq!(split_circuits(&c, Split::Sparse).unwrap(), (vec![0, 3], vec![1, 2, 4, 5]));
        assert!(split_circuits(&c[..1], Split::Uniform).is_err());
    }

    fn tiny_dataset(dir: &std::path::Path) -> Dataset {
        let other = parse_bench("loop", "INPUT(a)\nINPUT(b)\nOUTPUT(z)\nq = DFF(z)\nx = AND(a, q)\nz = XOR(x, b)\n").unwrap();
        let opts = ConvertOptions {
            m: 3,
            s: 2,
            n_patterns: 64,
            n_cycles: 6,
            ..Default::default()
        };
        Dataset::build(dir, &[s27(), other], &opts, Split::Uniform, Provenance::new("test", serde_json::json!({}))).unwrap()
    }

    fn tiny_config(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr,
            seed: 3,
            split: Split::Uniform,
            model: ModelConfig {
                d: 8,
                heads: 2,
                time_dim: 2,
                m: 3,
                s: 2,
                ..Default::default()
            },
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_params() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let cfg = tiny_config(2, 0.0);
        let out = train_dataset(&ds, &cfg).unwrap();
        assert_eq!(out.model.params.tensors, Model::new(cfg.model.clone(), cfg.seed).unwrap().params.tensors);
    }

    #[test]
    fn training_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let a = train_dataset(&ds, &tiny_config(3, 0.01)).unwrap();
        let b = train_dataset(&ds, &tiny_config(3, 0.01)).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model, b.model);
        assert!(a.loss_csv().starts_with("epoch,mse\n1,"));
    }

    #[test]
    fn single_sample_is_memorized() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let one = [&ds.samples[0]];
        let out = train(&one, &tiny_config(200, 0.01)).unwrap();
        let (first, last) = (out.losses[0], *out.losses.last().unwrap());
        assert!(last * 10.0 <= first, "{first} -> {last}");
    }

    #[test]
    fn evaluation_rows_and_average() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let out = train_dataset(&ds, &tiny_config(1, 0.01)).unwrap();
        let t = evaluate(&out.model, &ds).unwrap();
        assert_eq!(t.tag, "FIP-2-U");
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].split, "train");
        assert_eq!(t.rows[1].split, "test");
        let (r, m) = t.average(None).unwrap();
        assert!((r - (t.rows[0].rmse + t.rows[1].rmse) / 2.0).abs() < 1e-12);
        assert!((m - (t.rows[0].mae + t.rows[1].mae) / 2.0).abs() < 1e-12);
        assert!(t.to_csv().contains(",average,test,"));
        let bad = TrainConfig {
            model: ModelConfig { s: 3, ..tiny_config(1, 0.01).model },
            ..tiny_config(1, 0.01)
        };
        assert!(matches!(train_dataset(&ds, &bad), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn constant_half_on_zero_labels() {
        let y = vec![0.0; 6];
        let m = crate::stgcn::metrics(&y, &[0.5; 6], &[true; 6]).unwrap();
        assert_eq!((m.rmse, m.mae), (0.5, 0.5));
    }

    #[test]
    fn ablation_runs_every_variant() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let t = run_ablation(&ds, &tiny_config(1, 0.01), &[1]).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.row(Variant::Full).unwrap().delta_rmse_pct, 0.0);
        assert!(t.rows.iter().all(|r| r.rmse.is_finite() && r.mae.is_finite()));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }
}

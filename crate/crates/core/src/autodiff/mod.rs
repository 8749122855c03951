// SPDX-License-Identifier: Apache-2.0

//! Dense f64 tensors, a recording tape with reverse-mode gradients, Adam,
//! and a central-difference gradient checker.

mod tape;
mod tensor;

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::provenance::{read_bytes, sha256_hex, write_atomic};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Named parameters with per-parameter Adam state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: Vec<u64>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name.to_string());
        self.first.push(Tensor::zeros_like(&t));
        self.second.push(Tensor::zeros_like(&t));
        self.steps.push(0);
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    /// Uniform in `+-sqrt(6 / (rows + cols))`.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_rows(rows, cols, data)?)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn step_count(&self, index: usize) -> u64 {
        self.steps[index]
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.tensors.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![self.tensors.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape != self.tensors[i].shape {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: self.tensors[i].shape.clone(),
                    rhs: g.shape.clone(),
                });
            }
        }
        for (i, g) in grads.iter().enumerate() {
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let p = &mut self.tensors[i].data;
            let m = &mut self.first[i].data;
            let v = &mut self.second[i].data;
            for j in 0..p.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g.data[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g.data[j] * g.data[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Header line (JSON) followed by the raw little-endian f64 payload.
    pub fn to_checkpoint_bytes(&self, config: &serde_json::Value) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            names: self.names.clone(),
            shapes: self.tensors.iter().map(|t| t.shape.clone()).collect(),
            config_hash: config_hash(config),
            config: config.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::schema("checkpoint", "missing header line"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::schema("checkpoint.header", e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::schema("checkpoint.format", format!("unsupported `{}`", header.format)));
        }
        if config_hash(&header.config) != header.config_hash {
            return Err(Error::ConfigMismatch("checkpoint config hash does not match its config".into()));
        }
        if header.names.len() != header.shapes.len() {
            return Err(Error::schema("checkpoint.shapes", "one shape per name expected"));
        }
        let payload = &bytes[nl + 1..];
        let total: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(Error::schema(
                "checkpoint.payload",
                format!("expected {} bytes, found {}", total * 8, payload.len()),
            ));
        }
        let mut store = ParamStore::new();
        let mut vals = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for (name, shape) in header.names.iter().zip(header.shapes) {
            let n = shape.iter().product();
            let data: Vec<f64> = vals.by_ref().take(n).collect();
            store.add(name, Tensor::new(shape, data)?)?;
        }
        Ok((store, header.config))
    }

    pub fn save(&self, path: &Path, config: &serde_json::Value) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_bytes(config)?)
    }

    pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
        ParamStore::from_checkpoint_bytes(&read_bytes(path)?)
    }
}

const CHECKPOINT_FORMAT: &str = "fipgraph-params/1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    config: serde_json::Value,
    config_hash: String,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and element index of the worst probe.
    pub worst: Option<(String, usize)>,
    pub probes: usize,
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-8;
pub const GRAD_CHECK_PROBES: usize = 64;

/// Compares `grad` (analytic) with central differences of `loss` for up to
/// `GRAD_CHECK_PROBES` seeded elements per parameter (all when smaller).
pub fn grad_check(
    store: &ParamStore,
    eps: f64,
    seed: u64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    grad: impl FnOnce(&ParamStore) -> Result<Vec<Tensor>>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let analytic = grad(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        probes: 0,
    };
    for p in 0..store.len() {
        let len = store.tensors[p].len();
        let picks: Vec<usize> = if len <= GRAD_CHECK_PROBES {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, GRAD_CHECK_PROBES).into_vec();
            v.sort_unstable();
            v
        };
        for j in picks {
            let orig = work.tensors[p].data[j];
            work.tensors[p].data[j] = orig + eps;
            let up = loss(&work)?;
            work.tensors[p].data[j] = orig - eps;
            let down = loss(&work)?;
            work.tensors[p].data[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[p].data[j], numeric, GRAD_CHECK_FLOOR);
            report.probes += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.names[p].clone(), j));
            }
        }
    }
    Ok(report)
}

// SPDX-License-Identifier: Apache-2.0

//! Spatio-temporal graph network predicting per-node FIP for the cycles
//! after an input window.
//!
//! Pipeline per sample: embed gate kinds, then for every input frame run a
//! gated message-passing stack and an edge-aware attention stack side by
//! side, add the two, and decode the frame sequence into `s` future frames.
//! Weights are shared across frames.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{config_hash, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::netlist::GateKind;
use crate::stgraph::{StGraph, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoTimeEncoding,
    OnlySpatial,
    OnlyTemporal,
    MlpDecoder,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoTimeEncoding,
        Variant::OnlySpatial,
        Variant::OnlyTemporal,
        Variant::MlpDecoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTimeEncoding => "no_time_encoding",
            Variant::OnlySpatial => "only_spatial",
            Variant::OnlyTemporal => "only_temporal",
            Variant::MlpDecoder => "mlp_decoder",
        }
    }

    fn time_encoding(self) -> bool {
        self != Variant::NoTimeEncoding
    }

    fn spatial(self) -> bool {
        self != Variant::OnlyTemporal
    }

    fn temporal(self) -> bool {
        self != Variant::OnlySpatial
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub time_dim: usize,
    pub m: usize,
    pub s: usize,
    pub p: usize,
    pub q: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            heads: 4,
            spatial_layers: 2,
            temporal_layers: 2,
            time_dim: 8,
            m: 5,
            s: 5,
            p: 2,
            q: 2,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "hidden width {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.m == 0 || self.s == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::invalid("m, s, p and q must be at least 1"));
        }
        Ok(())
    }

    /// Width of an edge feature after the optional time suffix.
    pub fn edge_width(&self) -> usize {
        if self.variant.time_encoding() {
            self.p + self.time_dim
        } else {
            self.p
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_value())
    }

    /// Error unless `g` has the window and channel shape this model expects.
    pub fn check_sample(&self, g: &StGraph) -> Result<()> {
        if (g.m, g.s, g.p, g.q) != (self.m, self.s, self.p, self.q) {
            return Err(Error::ConfigMismatch(format!(
                "sample {} has (m, s, p, q) = ({}, {}, {}, {}), model expects ({}, {}, {}, {})",
                g.id(),
                g.m,
                g.s,
                g.p,
                g.q,
                self.m,
                self.s,
                self.p,
                self.q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// Errors over entries whose `mask` is set; `y` and `yhat` share a layout.
pub fn metrics(y: &[f64], yhat: &[f64], mask: &[bool]) -> Result<Metrics> {
    if y.len() != yhat.len() || y.len() != mask.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![y.len()],
            rhs: vec![yhat.len(), mask.len()],
        });
    }
    let mut n = 0usize;
    let (mut se, mut ae) = (0.0, 0.0);
    for ((a, b), &keep) in y.iter().zip(yhat).zip(mask) {
        if keep {
            n += 1;
            se += (a - b) * (a - b);
            ae += (a - b).abs();
        }
    }
    if n == 0 {
        return Ok(Metrics::default());
    }
    let mse = se / n as f64;
    Ok(Metrics {
        mse,
        rmse: mse.sqrt(),
        mae: ae / n as f64,
    })
}

/// Entry mask in label layout `[frame][node][channel]`: INPUT nodes are out.
pub fn label_mask(g: &StGraph) -> Vec<bool> {
    let node_mask = g.topology.label_mask();
    let mut out = Vec::with_capacity(g.y.len());
    for _ in 0..g.s {
        for &keep in &node_mask {
            out.extend(std::iter::repeat_n(keep, g.q));
        }
    }
    out
}

/// Indices of every parameter the model uses.
#[derive(Debug, Clone, PartialEq)]
struct Slots {
    embed_self: usize,
    embed_nbr: usize,
    time: Option<usize>,
    spatial: Vec<[usize; 4]>,
    temporal: Vec<[usize; 5]>,
    decoder: Option<[usize; 5]>,
    mlp: Option<[usize; 6]>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `n x (s*q)`, column `t*q + c`.
    pub yhat: Var,
    /// Spatial gate activations, one per (frame, layer).
    pub gates: Vec<Var>,
    /// Temporal attention weights `|E| x heads`, one per (frame, layer).
    pub attention: Vec<Var>,
    /// Per-frame fused node states.
    pub fused: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    slots: Slots,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let (d, k) = (config.d, GateKind::COUNT);
        let fe = config.edge_width();
        let out = config.s * config.q;
        let v = config.variant;
        let embed_self = ps.add_glorot("embed.self", k, d, &mut rng)?;
        let embed_nbr = ps.add_glorot("embed.neighbors", k, d, &mut rng)?;
        let time = if v.time_encoding() {
            Some(ps.add_glorot("time.table", config.m, config.time_dim, &mut rng)?)
        } else {
            None
        };
        let mut spatial = Vec::new();
        if v.spatial() {
            for l in 0..config.spatial_layers {
                spatial.push([
                    ps.add_glorot(&format!("spatial.{l}.self"), d, d, &mut rng)?,
                    ps.add_glorot(&format!("spatial.{l}.gate_dst"), d + fe, d, &mut rng)?,
                    ps.add_glorot(&format!("spatial.{l}.gate_src"), d + fe, d, &mut rng)?,
                    ps.add_glorot(&format!("spatial.{l}.message"), d + fe, d, &mut rng)?,
                ]);
            }
        }
        let mut temporal = Vec::new();
        if v.temporal() {
            for l in 0..config.temporal_layers {
                temporal.push([
                    ps.add_glorot(&format!("temporal.{l}.self"), d, d, &mut rng)?,
                    ps.add_glorot(&format!("temporal.{l}.value"), d, d, &mut rng)?,
                    ps.add_glorot(&format!("temporal.{l}.query"), d, d, &mut rng)?,
                    ps.add_glorot(&format!("temporal.{l}.key"), d, d, &mut rng)?,
                    ps.add_glorot(&format!("temporal.{l}.edge"), fe, d, &mut rng)?,
                ]);
            }
        }
        let (decoder, mlp) = if v == Variant::MlpDecoder {
            let w1 = ps.add_glorot("mlp.0.weight", d, d, &mut rng)?;
            let b1 = ps.add("mlp.0.bias", Tensor::zeros(1, d))?;
            let w2 = ps.add_glorot("mlp.1.weight", d, d, &mut rng)?;
            let b2 = ps.add("mlp.1.bias", Tensor::zeros(1, d))?;
            let w3 = ps.add_glorot("mlp.2.weight", d, out, &mut rng)?;
            let b3 = ps.add("mlp.2.bias", Tensor::zeros(1, out))?;
            (None, Some([w1, b1, w2, b2, w3, b3]))
        } else {
            (
                Some([
                    ps.add_glorot("decoder.value", d, d, &mut rng)?,
                    ps.add_glorot("decoder.query", d, d, &mut rng)?,
                    ps.add_glorot("decoder.key", d, d, &mut rng)?,
                    ps.add_glorot("decoder.out", d, out, &mut rng)?,
                    ps.add("decoder.out_bias", Tensor::zeros(1, out))?,
                ]),
                None,
            )
        };
        Ok(Model {
            config,
            params: ps,
            slots: Slots {
                embed_self,
                embed_nbr,
                time,
                spatial,
                temporal,
                decoder,
                mlp,
            },
        })
    }

    /// Rebuilds a model from a config and a parameter store with matching
    /// names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        let mut m = Model::new(config, 0)?;
        if m.params.names != params.names {
            return Err(Error::ConfigMismatch("parameter names differ from the model layout".into()));
        }
        for (a, b) in m.params.tensors.iter().zip(&params.tensors) {
            if a.shape != b.shape {
                return Err(Error::ConfigMismatch(format!("parameter shape {:?} vs {:?}", a.shape, b.shape)));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path, &self.config.to_value())
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        let (params, cfg) = ParamStore::load(path)?;
        let config: ModelConfig =
            serde_json::from_value(cfg).map_err(|e| Error::schema("checkpoint.config", e.to_string()))?;
        Model::from_params(config, params)
    }

    /// Records a full forward pass using parameters from `store` (normally
    /// `self.params`; gradient checks pass perturbed copies).
    pub fn forward_with(&self, store: &ParamStore, g: &StGraph, tape: &mut Tape) -> Result<ForwardVars> {
        let cfg = &self.config;
        cfg.check_sample(g)?;
        let topo = &g.topology;
        let n = topo.n_nodes();
        let ne = topo.n_edges();
        let d = cfg.d;
        let src = Arc::new(topo.edges.iter().map(|e| e.0).collect::<Vec<_>>());
        let dst = Arc::new(topo.edges.iter().map(|e| e.1).collect::<Vec<_>>());

        let h_embed = self.embed(store, topo, tape)?;

        let time_table = self.slots.time.map(|i| tape.param(store, i));
        let spatial: Vec<[Var; 4]> = self
            .slots
            .spatial
            .iter()
            .map(|w| w.map(|i| tape.param(store, i)))
            .collect();
        let temporal: Vec<[Var; 5]> = self
            .slots
            .temporal
            .iter()
            .map(|w| w.map(|i| tape.param(store, i)))
            .collect();

        let heads = cfg.heads;
        let head_w = d / heads;
        let mut block = Tensor::zeros(d, heads);
        for k in 0..d {
            block.data[k * heads + k / head_w] = 1.0;
        }
        let mut block_t = Tensor::zeros(heads, d);
        for k in 0..d {
            block_t.data[(k / head_w) * d + k] = 1.0;
        }
        let block = tape.constant(block);
        let block_t = tape.constant(block_t);
        let score_scale = 1.0 / (head_w as f64).sqrt();

        let mut out = ForwardVars {
            yhat: h_embed,
            gates: Vec::new(),
            attention: Vec::new(),
            fused: Vec::new(),
        };
        for t in 0..cfg.m {
            let e_t = tape.constant(Tensor::from_rows(ne, cfg.p, g.edge_frame(t).to_vec())?);
            let e_te = match time_table {
                Some(table) => {
                    let suffix = tape.gather(table, Arc::new(vec![t; ne]))?;
                    tape.concat(e_t, suffix)?
                }
                None => e_t,
            };

            let mut hs = h_embed;
            for w in &spatial {
                let hi = tape.gather(hs, Arc::clone(&dst))?;
                let hj = tape.gather(hs, Arc::clone(&src))?;
                let xi = tape.concat(hi, e_te)?;
                let xj = tape.concat(hj, e_te)?;
                let gi = tape.matmul(xi, w[1])?;
                let gj = tape.matmul(xj, w[2])?;
                let pre = tape.add(gi, gj)?;
                let gate = tape.sigmoid(pre);
                out.gates.push(gate);
                let msg = tape.matmul(xj, w[3])?;
                let msg = tape.hadamard(gate, msg)?;
                let agg = tape.scatter_add(msg, Arc::clone(&dst), n)?;
                let own = tape.matmul(hs, w[0])?;
                let upd = tape.add(own, agg)?;
                let res = tape.add(upd, hs)?;
                hs = tape.layer_norm(res);
            }

            let mut ht = h_embed;
            for w in &temporal {
                let q = tape.matmul(ht, w[2])?;
                let k = tape.matmul(ht, w[3])?;
                let v = tape.matmul(ht, w[1])?;
                let ee = tape.matmul(e_te, w[4])?;
                let qi = tape.gather(q, Arc::clone(&dst))?;
                let kj = tape.gather(k, Arc::clone(&src))?;
                let kj = tape.add(kj, ee)?;
                let vj = tape.gather(v, Arc::clone(&src))?;
                let vj = tape.add(vj, ee)?;
                let prod = tape.hadamard(qi, kj)?;
                let scores = tape.matmul(prod, block)?;
                let scores = tape.scale(scores, score_scale);
                let alpha = tape.segment_softmax(scores, Arc::clone(&dst), n)?;
                out.attention.push(alpha);
                let alpha_wide = tape.matmul(alpha, block_t)?;
                let msg = tape.hadamard(alpha_wide, vj)?;
                let agg = tape.scatter_add(msg, Arc::clone(&dst), n)?;
                let own = tape.matmul(ht, w[0])?;
                let upd = tape.add(own, agg)?;
                let res = tape.add(upd, ht)?;
                ht = tape.layer_norm(res);
            }

            let fused = match cfg.variant {
                Variant::OnlySpatial => hs,
                Variant::OnlyTemporal => ht,
                _ => tape.add(hs, ht)?,
            };
            out.fused.push(fused);
        }

        out.yhat = self.decode(store, tape, &out.fused)?;
        Ok(out)
    }

    /// Own one-hot projection plus projection of the sum of in-neighbor
    /// one-hots, `n x d`.
    pub fn embed(&self, store: &ParamStore, topo: &Topology, tape: &mut Tape) -> Result<Var> {
        let n = topo.n_nodes();
        let h = Tensor::from_rows(n, GateKind::COUNT, topo.one_hot())?;
        let mut nbr = Tensor::zeros(n, GateKind::COUNT);
        for &(s, t) in &topo.edges {
            nbr.data[t * GateKind::COUNT + topo.kinds[s].index()] += 1.0;
        }
        let h = tape.constant(h);
        let nbr = tape.constant(nbr);
        let w_self = tape.param(store, self.slots.embed_self);
        let w_nbr = tape.param(store, self.slots.embed_nbr);
        let a = tape.matmul(h, w_self)?;
        let b = tape.matmul(nbr, w_nbr)?;
        tape.add(a, b)
    }

    fn decode(&self, store: &ParamStore, tape: &mut Tape, frames: &[Var]) -> Result<Var> {
        let m = frames.len();
        let mean_of = |tape: &mut Tape, xs: &[Var]| -> Result<Var> {
            let mut acc = xs[0];
            for &x in &xs[1..] {
                acc = tape.add(acc, x)?;
            }
            Ok(tape.scale(acc, 1.0 / xs.len() as f64))
        };
        if let Some(w) = self.slots.mlp {
            let w = w.map(|i| tape.param(store, i));
            let pooled = mean_of(tape, frames)?;
            let h = tape.matmul(pooled, w[0])?;
            let h = tape.add_row(h, w[1])?;
            let h = tape.tanh(h);
            let h = tape.matmul(h, w[2])?;
            let h = tape.add_row(h, w[3])?;
            let h = tape.tanh(h);
            let y = tape.matmul(h, w[4])?;
            let y = tape.add_row(y, w[5])?;
            return Ok(tape.sigmoid(y));
        }
        let w = self.slots.decoder.expect("attention decoder").map(|i| tape.param(store, i));
        let scale = 1.0 / (self.config.d as f64).sqrt();
        let mut values = Vec::with_capacity(m);
        let mut queries = Vec::with_capacity(m);
        let mut keys = Vec::with_capacity(m);
        for &x in frames {
            values.push(tape.matmul(x, w[0])?);
            queries.push(tape.matmul(x, w[1])?);
            keys.push(tape.matmul(x, w[2])?);
        }
        let mut attended = Vec::with_capacity(m);
        for a in 0..m {
            let mut scores: Option<Var> = None;
            for b in 0..m {
                let prod = tape.hadamard(queries[a], keys[b])?;
                let col = tape.row_sum(prod);
                scores = Some(match scores {
                    None => col,
                    Some(s) => tape.concat(s, col)?,
                });
            }
            let scores = tape.scale(scores.expect("m >= 1"), scale);
            let alpha = tape.row_softmax(scores);
            let mut acc: Option<Var> = None;
            for (b, &vb) in values.iter().enumerate() {
                let wb = tape.col(alpha, b)?;
                let term = tape.mul_rows(vb, wb)?;
                acc = Some(match acc {
                    None => term,
                    Some(s) => tape.add(s, term)?,
                });
            }
            attended.push(acc.expect("m >= 1"));
        }
        let pooled = mean_of(tape, &attended)?;
        let y = tape.matmul(pooled, w[3])?;
        let y = tape.add_row(y, w[4])?;
        Ok(tape.sigmoid(y))
    }

    /// Predictions in label layout `[frame][node][channel]`.
    pub fn predict(&self, g: &StGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward_with(&self.params, g, &mut tape)?;
        Ok(rows_to_frames(tape.value(f.yhat), g.n_nodes(), self.config.s, self.config.q))
    }

    /// Records forward plus masked MSE against the sample labels.
    pub fn loss_with(&self, store: &ParamStore, g: &StGraph, tape: &mut Tape) -> Result<Var> {
        let f = self.forward_with(store, g, tape)?;
        let n = g.n_nodes();
        let width = self.config.s * self.config.q;
        let target = Arc::new(Tensor::from_rows(n, width, g.label_rows())?);
        let weights: Vec<f64> = g
            .topology
            .label_mask()
            .iter()
            .flat_map(|&keep| std::iter::repeat_n(if keep { 1.0 } else { 0.0 }, width))
            .collect();
        tape.mse(f.yhat, target, Arc::new(weights))
    }

    /// Loss value and gradients for one sample.
    pub fn loss_and_grad(&self, g: &StGraph) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let loss = self.loss_with(&self.params, g, &mut tape)?;
        let grads = tape.backward(loss, &self.params)?;
        Ok((tape.value(loss).item(), grads))
    }

    pub fn evaluate_sample(&self, g: &StGraph) -> Result<Metrics> {
        let yhat = self.predict(g)?;
        metrics(&g.y, &yhat, &label_mask(g))
    }
}

/// `n x (s*q)` rows to `[frame][node][channel]`.
pub fn rows_to_frames(t: &Tensor, n: usize, s: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * n * q];
    for i in 0..n {
        for f in 0..s {
            for c in 0..q {
                out[(f * n + i) * q + c] = t.data[i * s * q + f * q + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;

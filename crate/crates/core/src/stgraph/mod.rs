// SPDX-License-Identifier: Apache-2.0

//! Spatio-temporal circuit graphs.
//!
//! One node per primary input, gate and flip-flop; one directed edge per
//! (driver line, consuming gate) pair. Edges carry the driver line's
//! per-cycle features, replicated across fanout branches. Node labels are
//! the FIP of the node's output line in the cycles after the input window.

mod dataset;
mod io;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault_sim::{FaultKind, FipMatrix};
use crate::netlist::{Circuit, GateKind};
use crate::testability::TestabilityFrames;

pub use dataset::{
    convert_circuit, convert_unlabeled, CircuitEntry, ConvertOptions, Dataset, Manifest, SampleRef, Split, MANIFEST_FORMAT,
};
pub use io::{read_jsonl, sample_from_json, sample_to_json, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "FIP")]
    Fip,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Tm => "TM",
            FeatureMode::Fip => "FIP",
        }
    }

    /// Edge feature width.
    pub fn channels(self) -> usize {
        match self {
            FeatureMode::Tm => 5,
            FeatureMode::Fip => 2,
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tm" => Ok(FeatureMode::Tm),
            "fip" => Ok(FeatureMode::Fip),
            _ => Err(Error::invalid(format!("unknown feature mode `{s}`"))),
        }
    }
}

/// Static graph structure shared by every window of a circuit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub circuit: String,
    pub kinds: Vec<GateKind>,
    /// `(src, dst)`: signal flows from `src` into `dst`.
    pub edges: Vec<(usize, usize)>,
    /// Driver line of each edge (equal to `src`).
    pub edge_line: Vec<usize>,
}

impl Topology {
    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// `n x 9` one-hot rows.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.n_nodes() * GateKind::COUNT];
        for (i, k) in self.kinds.iter().enumerate() {
            h[i * GateKind::COUNT + k.index()] = 1.0;
        }
        h
    }

    /// Nodes whose labels count in the loss (everything but primary inputs).
    pub fn label_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|&k| k != GateKind::Input).collect()
    }
}

/// Nodes, and edges in gate order then fanin order. Repeated connections
/// (a gate reading the same line twice) become one edge.
pub fn build_topology(circuit: &Circuit) -> Topology {
    let mut edges = Vec::new();
    for g in &circuit.gates {
        for (i, &l) in g.fanin.iter().enumerate() {
            if g.fanin[..i].contains(&l) {
                continue;
            }
            edges.push((circuit.lines[l].driver, g.id));
        }
    }
    Topology {
        circuit: circuit.name.clone(),
        kinds: circuit.gates.iter().map(|g| g.kind).collect(),
        edge_line: edges.iter().map(|e| e.0).collect(),
        edges,
    }
}

/// Per-cycle edge features over the whole simulated horizon,
/// laid out `[cycle][edge][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSequence {
    pub cycles: usize,
    pub n_edges: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

/// Per-cycle node labels, laid out `[cycle][node][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub cycles: usize,
    pub n_nodes: usize,
    pub q: usize,
    pub data: Vec<f64>,
}

/// Testability features: edge `u -> v` at frame `t` carries the driver's
/// `[cc0n, cc1n, con, c1, o]`.
pub fn attach_tm_features(topo: &Topology, frames: &TestabilityFrames, cycles: usize) -> Result<EdgeSequence> {
    if frames.n_frames < cycles {
        return Err(Error::invalid(format!(
            "testability covers {} frames, {cycles} needed",
            frames.n_frames
        )));
    }
    let mut data = Vec::with_capacity(cycles * topo.n_edges() * 5);
    for t in 0..cycles {
        for &l in &topo.edge_line {
            data.extend_from_slice(&frames.features(t, l));
        }
    }
    Ok(EdgeSequence {
        cycles,
        n_edges: topo.n_edges(),
        p: 5,
        data,
    })
}

/// FIP features: edge `u -> v` at cycle `t` carries the driver line's FIP
/// for each channel kind.
pub fn attach_fip_features(topo: &Topology, fip: &FipMatrix, channels: &[FaultKind]) -> Result<EdgeSequence> {
    let idx = channel_indices(fip, channels)?;
    let mut data = Vec::with_capacity(fip.n_cycles * topo.n_edges() * channels.len());
    let n = fip.n_patterns as f64;
    for t in 0..fip.n_cycles {
        for &l in &topo.edge_line {
            for &k in &idx {
                data.push(fip.counts[k][l][t] as f64 / n);
            }
        }
    }
    Ok(EdgeSequence {
        cycles: fip.n_cycles,
        n_edges: topo.n_edges(),
        p: channels.len(),
        data,
    })
}

/// Node labels from simulated FIP; primary-input nodes get zeros.
pub fn fip_labels(topo: &Topology, fip: &FipMatrix, channels: &[FaultKind]) -> Result<LabelSequence> {
    let idx = channel_indices(fip, channels)?;
    if fip.n_lines() != topo.n_nodes() {
        return Err(Error::invalid(format!(
            "FIP matrix has {} lines, graph has {} nodes",
            fip.n_lines(),
            topo.n_nodes()
        )));
    }
    let n = fip.n_patterns as f64;
    let mut data = Vec::with_capacity(fip.n_cycles * topo.n_nodes() * channels.len());
    for t in 0..fip.n_cycles {
        for (node, kind) in topo.kinds.iter().enumerate() {
            for &k in &idx {
                data.push(if *kind == GateKind::Input {
                    0.0
                } else {
                    fip.counts[k][node][t] as f64 / n
                });
            }
        }
    }
    Ok(LabelSequence {
        cycles: fip.n_cycles,
        n_nodes: topo.n_nodes(),
        q: channels.len(),
        data,
    })
}

fn channel_indices(fip: &FipMatrix, channels: &[FaultKind]) -> Result<Vec<usize>> {
    channels
        .iter()
        .map(|&c| {
            fip.kind_index(c)
                .ok_or_else(|| Error::invalid(format!("FIP matrix lacks {c} faults")))
        })
        .collect()
}

/// One training or inference sample: `m` input frames, `s` label frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StGraph {
    pub mode: FeatureMode,
    pub m: usize,
    pub s: usize,
    pub p: usize,
    pub q: usize,
    /// 0-based offset: inputs are cycles `window_start+1 ..= window_start+m`.
    pub window_start: usize,
    pub topology: Arc<Topology>,
    /// `[frame][edge][channel]`.
    pub e: Vec<f64>,
    /// `[frame][node][channel]`.
    pub y: Vec<f64>,
}

impl StGraph {
    pub fn circuit(&self) -> &str {
        &self.topology.circuit
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn n_edges(&self) -> usize {
        self.topology.n_edges()
    }

    /// Edge features of input frame `t` (0-based), `|E| x p`.
    pub fn edge_frame(&self, t: usize) -> &[f64] {
        let w = self.n_edges() * self.p;
        &self.e[t * w..(t + 1) * w]
    }

    /// Labels as `n x (s*q)` rows: column `t*q + c`.
    pub fn label_rows(&self) -> Vec<f64> {
        let n = self.n_nodes();
        let mut out = vec![0.0; n * self.s * self.q];
        for t in 0..self.s {
            for i in 0..n {
                for c in 0..self.q {
                    out[i * self.s * self.q + t * self.q + c] = self.y[(t * n + i) * self.q + c];
                }
            }
        }
        out
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.circuit(), self.window_start)
    }

    /// Checks the structural invariants of a sample.
    pub fn validate(&self) -> Result<()> {
        let topo = &self.topology;
        let n = topo.n_nodes();
        if self.mode.channels() != self.p {
            return Err(Error::schema(
                "p",
                format!("mode {} requires p = {}, got {}", self.mode.as_str(), self.mode.channels(), self.p),
            ));
        }
        for (k, &(src, dst)) in topo.edges.iter().enumerate() {
            if src >= n || dst >= n {
                return Err(Error::schema(format!("edges[{k}]"), "endpoint out of range"));
            }
            if topo.kinds[dst] == GateKind::Input {
                return Err(Error::schema(format!("edges[{k}]"), "edge into an INPUT node"));
            }
        }
        if self.e.len() != self.m * topo.n_edges() * self.p {
            return Err(Error::schema("E", "dimensions do not match m x |E| x p"));
        }
        if self.y.len() != self.s * n * self.q {
            return Err(Error::schema("Y", "dimensions do not match s x n x q"));
        }
        if let Some(i) = self.e.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::schema(format!("E[{i}]"), "value outside [0,1]"));
        }
        if let Some(i) = self.y.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::schema(format!("Y[{i}]"), "value outside [0,1]"));
        }
        Ok(())
    }
}

/// Slices full-horizon sequences into overlapping windows with stride 1.
/// Window `k` uses cycles `k+1..=k+m` as input and `k+m+1..=k+m+s` as labels.
pub fn make_windows(
    topo: &Arc<Topology>,
    mode: FeatureMode,
    features: &EdgeSequence,
    labels: &LabelSequence,
    m: usize,
    s: usize,
) -> Result<Vec<StGraph>> {
    let total = features.cycles.min(labels.cycles);
    if m == 0 || s == 0 {
        return Err(Error::invalid("window lengths must be positive"));
    }
    if total < m + s {
        return Err(Error::invalid(format!(
            "{total} cycles cannot hold an input window of {m} and a horizon of {s}"
        )));
    }
    let ew = features.n_edges * features.p;
    let lw = labels.n_nodes * labels.q;
    Ok((0..=total - m - s)
        .map(|k| StGraph {
            mode,
            m,
            s,
            p: features.p,
            q: labels.q,
            window_start: k,
            topology: Arc::clone(topo),
            e: features.data[k * ew..(k + m) * ew].to_vec(),
            y: labels.data[(k + m) * lw..(k + m + s) * lw].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault_sim::{build_fip_matrix, ObservationSet, PatternSet, SimOptions};
    use crate::netlist::{parse_bench, s27};
    use crate::testability::compute_testability;

    #[test]
    fn inverter_topology() {
        let c = parse_bench("inv", "INPUT(a) OUTPUT(y) y = NOT(a)").unwrap();
        let t = build_topology(&c);
        assert_eq!(t.n_nodes(), 2);
        assert_eq!(t.edges, vec![(0, 1)]);
        assert_eq!(t.kinds, vec![GateKind::Input, GateKind::Not]);
        let h = t.one_hot();
        for row in h.chunks(9) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn s27_edges_equal_total_fanin() {
        // Fanin arities in s27: 3 DFF x1, 2 NOT x1, AND 2, OR 2+2, NAND 2, NOR 2x4.
        let t = build_topology(&s27());
        assert_eq!(t.n_edges(), 3 + 2 + 2 + 4 + 2 + 8);
        assert_eq!(t.n_nodes(), 4 + 3 + 10);
    }

    #[test]
    fn stem_branches_share_features() {
        let c = parse_bench("fan", "INPUT(a)\nOUTPUT(x)\nOUTPUT(y)\nx = NOT(a)\ny = BUFF(a)\n").unwrap();
        let t = build_topology(&c);
        let fr = compute_testability(&c, 3, &c.primary_outputs).unwrap();
        let seq = attach_tm_features(&t, &fr, 3).unwrap();
        for cyc in 0..3 {
            let base = cyc * 2 * 5;
            assert_eq!(seq.data[base..base + 5], seq.data[base + 5..base + 10]);
            // Primary input conventions.
            assert_eq!(seq.data[base + 3], 0.5);
        }
        assert!(seq.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(attach_tm_features(&t, &fr, 4).is_err());
    }

    #[test]
    fn and_gate_fip_channel() {
        let c = parse_bench("and", "INPUT(a)\nINPUT(b)\nOUTPUT(c)\nc = AND(a, b)\n").unwrap();
        let t = build_topology(&c);
        let ps = PatternSet::exhaustive(1, 2).unwrap();
        let m = build_fip_matrix(&c, &[FaultKind::Sa0, FaultKind::Sa1], &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let lab = fip_labels(&t, &m, &[FaultKind::Sa0, FaultKind::Sa1]).unwrap();
        assert_eq!(lab.data[2 * 2], 0.25);
        // Primary inputs are zero-labelled.
        assert_eq!(lab.data[0], 0.0);
    }

    #[test]
    fn window_counts() {
        let c = s27();
        let topo = Arc::new(build_topology(&c));
        let ps = PatternSet::random(1, 64, 20, 4).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1];
        let m = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let f = attach_fip_features(&topo, &m, &kinds).unwrap();
        let l = fip_labels(&topo, &m, &kinds).unwrap();
        assert_eq!(make_windows(&topo, FeatureMode::Fip, &f, &l, 5, 5).unwrap().len(), 11);
        assert_eq!(make_windows(&topo, FeatureMode::Fip, &f, &l, 5, 10).unwrap().len(), 6);
        let short = PatternSet::random(1, 64, 10, 4).unwrap();
        let m10 = build_fip_matrix(&c, &kinds, &short, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let f10 = attach_fip_features(&topo, &m10, &kinds).unwrap();
        let l10 = fip_labels(&topo, &m10, &kinds).unwrap();
        assert!(make_windows(&topo, FeatureMode::Fip, &f10, &l10, 5, 10).is_err());
    }

    #[test]
    fn windows_partition_cycles() {
        let c = s27();
        let topo = Arc::new(build_topology(&c));
        let ps = PatternSet::random(2, 128, 12, 4).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1];
        let m = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let f = attach_fip_features(&topo, &m, &kinds).unwrap();
        let l = fip_labels(&topo, &m, &kinds).unwrap();
        let w = make_windows(&topo, FeatureMode::Fip, &f, &l, 5, 3).unwrap();
        let sample = &w[2];
        // Input frame 0 is cycle 3; label frame 0 is cycle 8.
        let e0 = &topo.edges[0];
        assert_eq!(sample.edge_frame(0)[0], m.fip(e0.0, FaultKind::Sa0, 3));
        let node = topo.kinds.iter().position(|k| *k != GateKind::Input).unwrap();
        assert_eq!(sample.y[node * 2 + 1], m.fip(node, FaultKind::Sa1, 8));
        sample.validate().unwrap();
    }
}

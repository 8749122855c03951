// SPDX-License-Identifier: Apache-2.0

//! Whole-circuit conversion and on-disk datasets (one JSONL file per
//! circuit plus a manifest).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    attach_fip_features, attach_tm_features, build_topology, fip_labels, make_windows, read_jsonl, write_jsonl,
    EdgeSequence, FeatureMode, LabelSequence, StGraph, Topology,
};
use crate::error::{Error, Result};
use crate::fault_sim::{build_fip_matrix, FaultKind, FipMatrix, ObservationSet, PatternSet, SimOptions};
use crate::netlist::Circuit;
use crate::provenance::{read_text, write_atomic, Provenance};
use crate::testability::compute_testability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Uniform,
    Sparse,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Uniform => "uniform",
            Split::Sparse => "sparse",
        }
    }

    fn stride(self) -> usize {
        match self {
            Split::Uniform => 2,
            Split::Sparse => 3,
        }
    }

    /// `is_train[i]` for circuits already sorted ascending by gate count.
    pub fn assign(self, n_circuits: usize) -> Result<Vec<bool>> {
        if n_circuits < 2 {
            return Err(Error::invalid("splitting needs at least 2 circuits"));
        }
        Ok((0..n_circuits).map(|i| i % self.stride() == 0).collect())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Split::Uniform),
            "sparse" => Ok(Split::Sparse),
            _ => Err(Error::invalid(format!("unknown split `{s}` (uniform|sparse)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertOptions {
    pub mode: FeatureMode,
    pub m: usize,
    pub s: usize,
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub seed: u64,
    pub observe: ObservationSet,
    /// Fault kinds used as FIP channels (and label channels).
    pub channels: Vec<FaultKind>,
    pub sim: SimOptions,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions {
            mode: FeatureMode::Fip,
            m: 5,
            s: 5,
            n_patterns: 1000,
            n_cycles: 20,
            seed: 1,
            observe: ObservationSet::pos(),
            channels: vec![FaultKind::Sa0, FaultKind::Sa1],
            sim: SimOptions::default(),
        }
    }
}

impl ConvertOptions {
    pub fn simulate(&self, circuit: &Circuit) -> Result<FipMatrix> {
        let ps = PatternSet::random(self.seed, self.n_patterns, self.n_cycles, circuit.primary_inputs.len())?;
        build_fip_matrix(circuit, &self.channels, &ps, &self.observe, &self.sim)
    }

    /// Testability edge features over the full horizon.
    pub fn tm_features(&self, circuit: &Circuit, topo: &Topology) -> Result<EdgeSequence> {
        let obs = self.observe.resolve(circuit)?;
        let frames = compute_testability(circuit, self.n_cycles, &obs)?;
        attach_tm_features(topo, &frames, self.n_cycles)
    }
}

/// Labelled windows for one circuit. Labels always come from simulation.
pub fn convert_circuit(circuit: &Circuit, opts: &ConvertOptions) -> Result<Vec<StGraph>> {
    let topo = Arc::new(build_topology(circuit));
    let fip = opts.simulate(circuit)?;
    let labels = fip_labels(&topo, &fip, &opts.channels)?;
    let features = match opts.mode {
        FeatureMode::Fip => attach_fip_features(&topo, &fip, &opts.channels)?,
        FeatureMode::Tm => opts.tm_features(circuit, &topo)?,
    };
    make_windows(&topo, opts.mode, &features, &labels, opts.m, opts.s)
}

/// Testability-only windows with zero labels, for inference.
pub fn convert_unlabeled(circuit: &Circuit, opts: &ConvertOptions) -> Result<Vec<StGraph>> {
    let topo = Arc::new(build_topology(circuit));
    let features = opts.tm_features(circuit, &topo)?;
    let q = opts.channels.len();
    let labels = LabelSequence {
        cycles: opts.n_cycles,
        n_nodes: topo.n_nodes(),
        q,
        data: vec![0.0; opts.n_cycles * topo.n_nodes() * q],
    };
    make_windows(&topo, FeatureMode::Tm, &features, &labels, opts.m, opts.s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitEntry {
    pub circuit: String,
    pub gates: usize,
    pub file: String,
    pub split: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub file: String,
    pub line: usize,
    pub circuit: String,
    pub split: String,
    pub window_start: usize,
    pub in_cycles: [usize; 2],
    pub out_cycles: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub mode: FeatureMode,
    pub m: usize,
    pub s: usize,
    pub p: usize,
    pub q: usize,
    pub channels: Vec<FaultKind>,
    pub split: Split,
    pub seed: u64,
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub observe: String,
    pub circuits: Vec<CircuitEntry>,
    pub samples: Vec<SampleRef>,
    pub provenance: Provenance,
}

pub const MANIFEST_FORMAT: &str = "fipgraph-dataset/1";

/// A loaded dataset: manifest plus samples in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<StGraph>,
    /// `true` for training samples, parallel to `samples`.
    pub is_train: Vec<bool>,
}

impl Dataset {
    /// Converts `circuits`, writes one JSONL per circuit and `manifest.json`
    /// into `dir`, and returns the loaded dataset.
    pub fn build(dir: &Path, circuits: &[Circuit], opts: &ConvertOptions, split: Split, provenance: Provenance) -> Result<Dataset> {
        Dataset::build_with(dir, circuits, opts, split, None, provenance)
    }

    /// Like [`Dataset::build`], but `train_names` (when given) overrides the
    /// split rule and names the training circuits explicitly.
    pub fn build_with(
        dir: &Path,
        circuits: &[Circuit],
        opts: &ConvertOptions,
        split: Split,
        train_names: Option<&[&str]>,
        provenance: Provenance,
    ) -> Result<Dataset> {
        let mut order: Vec<usize> = (0..circuits.len()).collect();
        order.sort_by_key(|&i| (circuits[i].stats().gates, circuits[i].name.clone()));
        let train = match train_names {
            None => split.assign(circuits.len())?,
            Some(names) => {
                for n in names {
                    if !circuits.iter().any(|c| c.name == *n) {
                        return Err(Error::invalid(format!("training circuit `{n}` is not in the dataset")));
                    }
                }
                let flags: Vec<bool> = order.iter().map(|&i| names.contains(&circuits[i].name.as_str())).collect();
                if flags.iter().all(|&f| f) || !flags.iter().any(|&f| f) {
                    return Err(Error::invalid("explicit split needs at least one training and one test circuit"));
                }
                flags
            }
        };
        let mut entries = Vec::new();
        let mut refs = Vec::new();
        let mut samples = Vec::new();
        let mut is_train = Vec::new();
        for (rank, &ci) in order.iter().enumerate() {
            let c = &circuits[ci];
            let windows = convert_circuit(c, opts)?;
            let file = format!("{}.jsonl", c.name);
            write_jsonl(&dir.join(&file), &windows)?;
            let tag = if train[rank] { "train" } else { "test" };
            for (line, w) in windows.iter().enumerate() {
                refs.push(SampleRef {
                    file: file.clone(),
                    line,
                    circuit: c.name.clone(),
                    split: tag.to_string(),
                    window_start: w.window_start,
                    in_cycles: [w.window_start + 1, w.window_start + opts.m],
                    out_cycles: [w.window_start + opts.m + 1, w.window_start + opts.m + opts.s],
                });
                is_train.push(train[rank]);
            }
            entries.push(CircuitEntry {
                circuit: c.name.clone(),
                gates: c.stats().gates,
                file,
                split: tag.to_string(),
                samples: windows.len(),
            });
            samples.extend(windows);
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            mode: opts.mode,
            m: opts.m,
            s: opts.s,
            p: opts.mode.channels(),
            q: opts.channels.len(),
            channels: opts.channels.clone(),
            split,
            seed: opts.seed,
            n_patterns: opts.n_patterns,
            n_cycles: opts.n_cycles,
            observe: opts.observe.label(),
            circuits: entries,
            samples: refs,
            provenance,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(Dataset {
            manifest,
            samples,
            is_train,
        })
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = read_text(manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::schema(manifest_path.display().to_string(), e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::schema("format", format!("unsupported dataset format `{}`", manifest.format)));
        }
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let mut files: Vec<(String, Vec<StGraph>)> = Vec::new();
        let mut samples = Vec::with_capacity(manifest.samples.len());
        let mut is_train = Vec::with_capacity(manifest.samples.len());
        for (i, r) in manifest.samples.iter().enumerate() {
            if !files.iter().any(|(f, _)| *f == r.file) {
                files.push((r.file.clone(), read_jsonl(&dir.join(&r.file))?));
            }
            let (_, rows) = files.iter().find(|(f, _)| *f == r.file).expect("loaded");
            let g = rows
                .get(r.line)
                .ok_or_else(|| Error::schema(format!("samples[{i}].line"), format!("{} has no line {}", r.file, r.line)))?;
            if g.circuit() != r.circuit || g.mode != manifest.mode || g.m != manifest.m || g.s != manifest.s || g.q != manifest.q {
                return Err(Error::schema(format!("samples[{i}]"), "sample disagrees with manifest"));
            }
            samples.push(g.clone());
            is_train.push(match r.split.as_str() {
                "train" => true,
                "test" => false,
                other => return Err(Error::schema(format!("samples[{i}].split"), format!("unknown split tag `{other}`"))),
            });
        }
        Ok(Dataset {
            manifest,
            samples,
            is_train,
        })
    }

    /// Circuit names ascending by gate count, as recorded in the manifest.
    pub fn circuits(&self) -> Vec<&str> {
        self.manifest.circuits.iter().map(|c| c.circuit.as_str()).collect()
    }

    /// Re-tags samples with a different split of the same circuits.
    pub fn resplit(&mut self, split: Split) -> Result<()> {
        let train = split.assign(self.manifest.circuits.len())?;
        for (entry, t) in self.manifest.circuits.iter_mut().zip(&train) {
            entry.split = if *t { "train" } else { "test" }.to_string();
        }
        for (r, flag) in self.manifest.samples.iter_mut().zip(self.is_train.iter_mut()) {
            let idx = self
                .manifest
                .circuits
                .iter()
                .position(|c| c.circuit == r.circuit)
                .expect("circuit listed");
            *flag = train[idx];
            r.split = self.manifest.circuits[idx].split.clone();
        }
        self.manifest.split = split;
        Ok(())
    }

    pub fn train_samples(&self) -> Vec<&StGraph> {
        self.samples.iter().zip(&self.is_train).filter(|(_, t)| **t).map(|(s, _)| s).collect()
    }

    pub fn test_samples(&self) -> Vec<&StGraph> {
        self.samples.iter().zip(&self.is_train).filter(|(_, t)| !**t).map(|(s, _)| s).collect()
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Multi-cycle fault simulation and fault impact probabilities.
//!
//! `FIP(f, t)` is the fraction of test patterns under which fault `f` is
//! visible at any observed line during cycle `t` (not "by" cycle `t`).
//! Faults are permanent from cycle 1 and sit on stems only.

mod patterns;
pub mod sim;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::{Circuit, LineId};

pub use patterns::{InitState, PatternSet, PatternSource};
pub use sim::{simulate_faulty, simulate_good, simulate_good_block, BlockTrace, FaultySim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultKind {
    #[serde(rename = "SA0")]
    Sa0,
    #[serde(rename = "SA1")]
    Sa1,
    /// Slow to rise.
    #[serde(rename = "STR")]
    Str,
    /// Slow to fall.
    #[serde(rename = "STF")]
    Stf,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::Sa0 => "SA0",
            FaultKind::Sa1 => "SA1",
            FaultKind::Str => "STR",
            FaultKind::Stf => "STF",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SA0" => Ok(FaultKind::Sa0),
            "SA1" => Ok(FaultKind::Sa1),
            "STR" => Ok(FaultKind::Str),
            "STF" => Ok(FaultKind::Stf),
            _ => Err(Error::invalid(format!("unknown fault kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fault {
    pub line: LineId,
    pub kind: FaultKind,
}

/// Which lines count as observation points.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObservationSet {
    pub include_pos: bool,
    /// Flip-flop D pins (what a scan or BIST capture would see).
    pub include_ppos: bool,
    pub extra: Vec<LineId>,
}

impl ObservationSet {
    pub fn pos() -> Self {
        ObservationSet {
            include_pos: true,
            ..Default::default()
        }
    }

    pub fn pos_and_ppos() -> Self {
        ObservationSet {
            include_pos: true,
            include_ppos: true,
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, lines: impl IntoIterator<Item = LineId>) -> Self {
        self.extra.extend(lines);
        self
    }

    /// Sorted, deduplicated observed lines.
    pub fn resolve(&self, circuit: &Circuit) -> Result<Vec<LineId>> {
        let mut v = Vec::new();
        if self.include_pos {
            v.extend_from_slice(&circuit.primary_outputs);
        }
        if self.include_ppos {
            v.extend(circuit.dff_inputs());
        }
        for &l in &self.extra {
            if l >= circuit.lines.len() {
                return Err(Error::invalid(format!("observed line {l} does not exist")));
            }
            v.push(l);
        }
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::EmptyObservation);
        }
        Ok(v)
    }

    pub fn label(&self) -> String {
        let mut s = String::from(match (self.include_pos, self.include_ppos) {
            (true, true) => "po+ppo",
            (true, false) => "po",
            (false, true) => "ppo",
            (false, false) => "none",
        });
        if !self.extra.is_empty() {
            s.push_str(&format!("+{}extra", self.extra.len()));
        }
        s
    }
}

/// Detection counts per fault kind, line and cycle. `FIP = count / N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FipMatrix {
    pub circuit: String,
    pub seed: u64,
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub kinds: Vec<FaultKind>,
    pub lines: Vec<String>,
    pub observe: Vec<String>,
    /// `counts[kind][line][cycle - 1]`.
    pub counts: Vec<Vec<Vec<u32>>>,
}

impl FipMatrix {
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn kind_index(&self, kind: FaultKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    /// FIP of `(line, kind)` at 1-based `cycle`.
    pub fn fip(&self, line: LineId, kind: FaultKind, cycle: usize) -> f64 {
        let k = self.kind_index(kind).expect("kind present in matrix");
        self.counts[k][line][cycle - 1] as f64 / self.n_patterns as f64
    }

    pub fn curve(&self, line: LineId, kind: FaultKind) -> Vec<f64> {
        (1..=self.n_cycles).map(|t| self.fip(line, kind, t)).collect()
    }

    /// CSV with header `line,kind,cycle,fip,n_patterns,seed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("line,kind,cycle,fip,n_patterns,seed\n");
        for (line, name) in self.lines.iter().enumerate() {
            for (k, kind) in self.kinds.iter().enumerate() {
                for t in 0..self.n_cycles {
                    let v = self.counts[k][line][t] as f64 / self.n_patterns as f64;
                    s.push_str(&format!(
                        "{name},{kind},{},{v},{},{}\n",
                        t + 1,
                        self.n_patterns,
                        self.seed
                    ));
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<FipMatrix> {
        let m: FipMatrix = serde_json::from_str(text)?;
        if m.counts.len() != m.kinds.len() {
            return Err(Error::schema("counts", "one table per kind expected"));
        }
        for (k, table) in m.counts.iter().enumerate() {
            if table.len() != m.lines.len() {
                return Err(Error::schema(format!("counts[{k}]"), "one row per line expected"));
            }
            for (l, row) in table.iter().enumerate() {
                if row.len() != m.n_cycles {
                    return Err(Error::schema(format!("counts[{k}][{l}]"), "one entry per cycle expected"));
                }
                if row.iter().any(|&c| c as usize > m.n_patterns) {
                    return Err(Error::schema(format!("counts[{k}][{l}]"), "count exceeds N"));
                }
            }
        }
        Ok(m)
    }
}

/// Options shared by every FIP computation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimOptions {
    pub init: InitState,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Runs `f` on a pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Lines from which some observed line is reachable, across frames.
fn reaches_observation(circuit: &Circuit, observe: &[LineId]) -> Vec<bool> {
    let mut reach = vec![false; circuit.lines.len()];
    let mut stack: Vec<LineId> = observe.to_vec();
    for &o in observe {
        reach[o] = true;
    }
    while let Some(l) = stack.pop() {
        let g = &circuit.gates[circuit.lines[l].driver];
        for &f in &g.fanin {
            if !reach[f] {
                reach[f] = true;
                stack.push(f);
            }
        }
    }
    reach
}

/// Per-fault detection counts per cycle, summed over all pattern blocks.
pub fn detection_counts(
    circuit: &Circuit,
    faults: &[Fault],
    patterns: &PatternSet,
    observe: &[LineId],
    opts: &SimOptions,
) -> Result<Vec<Vec<u32>>> {
    if observe.is_empty() {
        return Err(Error::EmptyObservation);
    }
    if patterns.pi_count != circuit.primary_inputs.len() {
        return Err(Error::invalid(format!(
            "pattern set drives {} inputs, circuit has {}",
            patterns.pi_count,
            circuit.primary_inputs.len()
        )));
    }
    for f in faults {
        if f.line >= circuit.lines.len() {
            return Err(Error::invalid(format!("fault line {} does not exist", f.line)));
        }
    }
    let reach = reaches_observation(circuit, observe);
    let n_cycles = patterns.n_cycles;
    let run = || {
        let mut totals = vec![vec![0u32; n_cycles]; faults.len()];
        for block in 0..patterns.n_blocks() {
            let init: Vec<u64> = (0..circuit.dffs.len())
                .map(|k| opts.init.word(block, k) & patterns.valid_mask(block))
                .collect();
            let good = simulate_good_block(circuit, n_cycles, |t, i| patterns.word(block, t, i), &init);
            let mask = patterns.valid_mask(block);
            let per_fault: Vec<Vec<u32>> = faults
                .par_iter()
                .map_init(
                    || FaultySim::new(circuit),
                    |sim, &fault| {
                        let mut counts = vec![0u32; n_cycles];
                        if reach[fault.line] {
                            sim.run(
                                fault,
                                &good,
                                &init,
                                observe,
                                |t, diff| counts[t] += (diff & mask).count_ones(),
                                None,
                            );
                        }
                        counts
                    },
                )
                .collect();
            for (tot, c) in totals.iter_mut().zip(per_fault) {
                for (a, b) in tot.iter_mut().zip(c) {
                    *a += b;
                }
            }
        }
        totals
    };
    Ok(with_threads(opts.threads, run))
}

/// Per-cycle FIP curve of one fault.
pub fn compute_fip(
    circuit: &Circuit,
    fault: Fault,
    patterns: &PatternSet,
    observe: &ObservationSet,
) -> Result<Vec<f64>> {
    let obs = observe.resolve(circuit)?;
    let counts = detection_counts(circuit, &[fault], patterns, &obs, &SimOptions::default())?;
    Ok(counts[0]
        .iter()
        .map(|&c| c as f64 / patterns.n_patterns as f64)
        .collect())
}

/// FIP of every stem for each requested fault kind.
pub fn build_fip_matrix(
    circuit: &Circuit,
    kinds: &[FaultKind],
    patterns: &PatternSet,
    observe: &ObservationSet,
    opts: &SimOptions,
) -> Result<FipMatrix> {
    if kinds.is_empty() {
        return Err(Error::invalid("at least one fault kind is required"));
    }
    let obs = observe.resolve(circuit)?;
    let n = circuit.lines.len();
    let faults: Vec<Fault> = kinds
        .iter()
        .flat_map(|&kind| (0..n).map(move |line| Fault { line, kind }))
        .collect();
    let counts = detection_counts(circuit, &faults, patterns, &obs, opts)?;
    let mut it = counts.into_iter();
    let tables = kinds
        .iter()
        .map(|_| (0..n).map(|_| it.next().expect("count row")).collect())
        .collect();
    Ok(FipMatrix {
        circuit: circuit.name.clone(),
        seed: patterns.seed,
        n_patterns: patterns.n_patterns,
        n_cycles: patterns.n_cycles,
        kinds: kinds.to_vec(),
        lines: circuit.lines.iter().map(|l| l.name.clone()).collect(),
        observe: obs.iter().map(|&l| circuit.lines[l].name.clone()).collect(),
        counts: tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_bench, s27};

    fn and_po() -> Circuit {
        parse_bench("and", "INPUT(a)\nINPUT(b)\nOUTPUT(c)\nc = AND(a, b)\n").unwrap()
    }

    #[test]
    fn seven_of_ten_patterns_detect() {
        // y = BUFF(a); SA0 on y is seen at cycle 2 exactly when a = 1 then.
        let c = parse_bench("buf", "INPUT(a)\nOUTPUT(y)\ny = BUFF(a)\n").unwrap();
        let pats: Vec<Vec<Vec<bool>>> = (0..10)
            .map(|k| vec![vec![false], vec![k < 7], vec![true]])
            .collect();
        let ps = PatternSet::explicit(&pats).unwrap();
        let y = c.line_by_name("y").unwrap();
        let curve = compute_fip(&c, Fault { line: y, kind: FaultKind::Sa0 }, &ps, &ObservationSet::pos()).unwrap();
        assert_eq!(curve, vec![0.0, 0.7, 1.0]);
    }

    #[test]
    fn always_one_output_stuck_at_zero() {
        let c = parse_bench("or", "INPUT(a)\nOUTPUT(y)\ny = OR(a, b)\nb = NOT(a)\n").unwrap();
        let y = c.line_by_name("y").unwrap();
        let ps = PatternSet::random(5, 100, 3, 1).unwrap();
        let curve = compute_fip(&c, Fault { line: y, kind: FaultKind::Sa0 }, &ps, &ObservationSet::pos()).unwrap();
        assert_eq!(curve, vec![1.0; 3]);
    }

    #[test]
    fn and_output_exhaustive_quarter() {
        // Of the 4 input combinations only a=b=1 excites SA0 on c.
        let c = and_po();
        let ps = PatternSet::exhaustive(1, 2).unwrap();
        let cl = c.line_by_name("c").unwrap();
        let curve = compute_fip(&c, Fault { line: cl, kind: FaultKind::Sa0 }, &ps, &ObservationSet::pos()).unwrap();
        assert_eq!(curve, vec![0.25]);
    }

    #[test]
    fn empty_observation_is_an_error() {
        let c = and_po();
        let ps = PatternSet::exhaustive(1, 2).unwrap();
        let none = ObservationSet::default();
        assert!(matches!(
            compute_fip(&c, Fault { line: 0, kind: FaultKind::Sa0 }, &ps, &none),
            Err(Error::EmptyObservation)
        ));
    }

    #[test]
    fn not_matrix_lives_on_the_quarter_grid() {
        let c = parse_bench("inv", "INPUT(G0) OUTPUT(G1) G1 = NOT(G0)").unwrap();
        let ps = PatternSet::exhaustive(2, 1).unwrap();
        let m = build_fip_matrix(&c, &[FaultKind::Sa0, FaultKind::Sa1], &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        assert_eq!(m.counts.len(), 2);
        assert_eq!(m.n_lines(), 2);
        for k in [FaultKind::Sa0, FaultKind::Sa1] {
            for l in 0..2 {
                for t in 1..=2 {
                    let v = m.fip(l, k, t) * 4.0;
                    assert_eq!(v, v.round());
                }
            }
        }
    }

    #[test]
    fn ppo_observation_never_lowers_fip() {
        let c = s27();
        let ps = PatternSet::random(11, 200, 5, 4).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1, FaultKind::Str, FaultKind::Stf];
        let po = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let all = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos_and_ppos(), &SimOptions::default()).unwrap();
        for k in 0..kinds.len() {
            for l in 0..c.lines.len() {
                for t in 0..5 {
                    assert!(all.counts[k][l][t] >= po.counts[k][l][t]);
                }
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = s27();
        let ps = PatternSet::random(3, 500, 6, 4).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1];
        let one = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions { threads: Some(1), ..Default::default() }).unwrap();
        let many = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions { threads: Some(8), ..Default::default() }).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = s27();
        let ps = PatternSet::random(3, 64, 3, 4).unwrap();
        let m = build_fip_matrix(&c, &[FaultKind::Sa0], &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        assert_eq!(FipMatrix::from_json(&m.to_json().unwrap()).unwrap(), m);
        let mut bad = m.clone();
        bad.counts[0][0].pop();
        assert!(matches!(
            FipMatrix::from_json(&bad.to_json().unwrap()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn csv_has_one_row_per_entry() {
        let c = and_po();
        let ps = PatternSet::exhaustive(1, 2).unwrap();
        let m = build_fip_matrix(&c, &[FaultKind::Sa0], &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let csv = m.to_csv();
        let mut rows = csv.lines();
        assert_eq!(rows.next(), Some("line,kind,cycle,fip,n_patterns,seed"));
        assert_eq!(rows.count(), 3);
        assert!(csv.contains("c,SA0,1,0.25,4,0"));
    }
}

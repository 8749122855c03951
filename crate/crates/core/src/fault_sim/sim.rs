// SPDX-License-Identifier: Apache-2.0

//! Bit-parallel two-valued simulation, 64 patterns per machine word.
//!
//! The good machine is simulated in full, frame by frame. Faulty machines
//! are simulated event-driven against the stored good trace: only gates
//! downstream of a difference are re-evaluated.

use super::{Fault, FaultKind};
use crate::netlist::{Circuit, LineId};

/// Good-machine values of one pattern block, laid out `[cycle][line]`.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub n_lines: usize,
    pub n_cycles: usize,
    pub values: Vec<u64>,
}

impl BlockTrace {
    #[inline]
    pub fn at(&self, cycle: usize, line: LineId) -> u64 {
        self.values[cycle * self.n_lines + line]
    }

    pub fn frame(&self, cycle: usize) -> &[u64] {
        &self.values[cycle * self.n_lines..(cycle + 1) * self.n_lines]
    }
}

/// Simulates the fault-free machine. `pi_word(cycle, pi_index)` supplies
/// inputs; `init[k]` is the initial state of `circuit.dffs[k]`.
pub fn simulate_good_block(
    circuit: &Circuit,
    n_cycles: usize,
    pi_word: impl Fn(usize, usize) -> u64,
    init: &[u64],
) -> BlockTrace {
    let n = circuit.lines.len();
    let mut values = vec![0u64; n * n_cycles];
    let mut state: Vec<u64> = init.to_vec();
    for t in 0..n_cycles {
        let frame = &mut values[t * n..(t + 1) * n];
        for (i, &pi) in circuit.primary_inputs.iter().enumerate() {
            frame[pi] = pi_word(t, i);
        }
        for (k, &d) in circuit.dffs.iter().enumerate() {
            frame[circuit.gates[d].output] = state[k];
        }
        for &g in &circuit.level_order {
            let gate = &circuit.gates[g];
            frame[gate.output] = gate.kind.eval_words(gate.fanin.iter().map(|&l| frame[l]));
        }
        for (k, &d) in circuit.dffs.iter().enumerate() {
            state[k] = frame[circuit.gates[d].fanin[0]];
        }
    }
    BlockTrace {
        n_lines: n,
        n_cycles,
        values,
    }
}

/// Value seen downstream of a faulty site, given the site's own value now
/// and one cycle earlier.
#[inline]
pub(crate) fn fault_view(kind: FaultKind, raw: u64, prev_raw: u64) -> u64 {
    match kind {
        FaultKind::Sa0 => 0,
        FaultKind::Sa1 => !0,
        // A rising edge arrives one cycle late; so does a falling one.
        FaultKind::Str => raw & prev_raw,
        FaultKind::Stf => raw | prev_raw,
    }
}

/// Reusable scratch space for event-driven faulty simulation.
pub struct FaultySim<'c> {
    circuit: &'c Circuit,
    stamp: Vec<u32>,
    fval: Vec<u64>,
    queued: Vec<u32>,
    epoch: u32,
    buckets: Vec<Vec<usize>>,
    state: Vec<u64>,
}

impl<'c> FaultySim<'c> {
    pub fn new(circuit: &'c Circuit) -> Self {
        let n = circuit.lines.len();
        let max_level = circuit.levels.iter().copied().max().unwrap_or(0) as usize;
        FaultySim {
            circuit,
            stamp: vec![0; n],
            fval: vec![0; n],
            queued: vec![0; n],
            epoch: 0,
            buckets: vec![Vec::new(); max_level + 1],
            state: Vec::new(),
        }
    }

    fn next_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.queued.fill(0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn value(&self, good: &[u64], line: LineId) -> u64 {
        if self.stamp[line] == self.epoch {
            self.fval[line]
        } else {
            good[line]
        }
    }

    #[inline]
    fn set(&mut self, line: LineId, v: u64) {
        self.stamp[line] = self.epoch;
        self.fval[line] = v;
    }

    fn schedule_sinks(&mut self, line: LineId) {
        let c = self.circuit;
        for &s in &c.lines[line].sinks {
            if c.gates[s].kind.is_combinational() && self.queued[s] != self.epoch {
                self.queued[s] = self.epoch;
                self.buckets[c.levels[s] as usize].push(s);
            }
        }
    }

    /// Runs one faulty machine over a block and calls `on_cycle(t, diff)`
    /// where `diff` is the per-pattern mask of observed lines that differ
    /// from the good machine at cycle `t`. Also returns the faulty values of
    /// every line through `on_frame` when provided.
    pub fn run(
        &mut self,
        fault: Fault,
        good: &BlockTrace,
        init: &[u64],
        observe: &[LineId],
        mut on_cycle: impl FnMut(usize, u64),
        mut on_frame: Option<&mut dyn FnMut(usize, &dyn Fn(LineId) -> u64)>,
    ) {
        let c = self.circuit;
        self.state.clear();
        self.state.extend_from_slice(init);
        let site = fault.line;
        let site_kind = c.gates[c.lines[site].driver].kind;
        let mut prev_raw: Option<u64> = None;
        for t in 0..good.n_cycles {
            self.next_epoch();
            let frame = good.frame(t);
            // Flip-flop outputs carrying a faulty state.
            for k in 0..c.dffs.len() {
                let q = c.gates[c.dffs[k]].output;
                if self.state[k] != frame[q] {
                    let v = self.state[k];
                    self.set(q, v);
                    self.schedule_sinks(q);
                }
            }
            // The fault site itself.
            if site_kind.is_combinational() {
                if self.queued[site] != self.epoch {
                    self.queued[site] = self.epoch;
                    self.buckets[c.levels[site] as usize].push(site);
                }
            } else {
                let raw = self.value(frame, site);
                let view = fault_view(fault.kind, raw, prev_raw.unwrap_or(raw));
                prev_raw = Some(raw);
                if view != frame[site] || self.stamp[site] == self.epoch {
                    self.set(site, view);
                    self.schedule_sinks(site);
                }
            }
            for level in 1..self.buckets.len() {
                let mut bucket = std::mem::take(&mut self.buckets[level]);
                for &g in &bucket {
                    let gate = &c.gates[g];
                    let mut v = gate
                        .kind
                        .eval_words(gate.fanin.iter().map(|&l| self.value(frame, l)));
                    if g == site {
                        let raw = v;
                        v = fault_view(fault.kind, raw, prev_raw.unwrap_or(raw));
                        prev_raw = Some(raw);
                    }
                    if v != frame[gate.output] {
                        self.set(gate.output, v);
                        self.schedule_sinks(gate.output);
                    }
                }
                bucket.clear();
                self.buckets[level] = bucket;
            }
            let mut diff = 0u64;
            for &o in observe {
                diff |= self.value(frame, o) ^ frame[o];
            }
            on_cycle(t, diff);
            if let Some(cb) = on_frame.as_mut() {
                let get = |l: LineId| self.value(frame, l);
                cb(t, &get);
            }
            for k in 0..c.dffs.len() {
                let d = c.gates[c.dffs[k]].fanin[0];
                self.state[k] = self.value(frame, d);
            }
        }
    }
}

/// Good-machine trace for a single pattern: `trace[cycle][line]`.
pub fn simulate_good(circuit: &Circuit, pattern: &[Vec<bool>], init: &[bool]) -> Vec<Vec<bool>> {
    let init_w: Vec<u64> = init.iter().map(|&b| b as u64).collect();
    let tr = simulate_good_block(
        circuit,
        pattern.len(),
        |t, i| pattern[t][i] as u64,
        &init_w,
    );
    (0..pattern.len())
        .map(|t| tr.frame(t).iter().map(|w| w & 1 == 1).collect())
        .collect()
}

/// Faulty-machine trace for a single pattern. Values are what each line's
/// sinks observe; at a transition-fault site that is the delayed value.
pub fn simulate_faulty(
    circuit: &Circuit,
    fault: Fault,
    pattern: &[Vec<bool>],
    init: &[bool],
) -> Vec<Vec<bool>> {
    let init_w: Vec<u64> = init.iter().map(|&b| b as u64).collect();
    let good = simulate_good_block(circuit, pattern.len(), |t, i| pattern[t][i] as u64, &init_w);
    let mut sim = FaultySim::new(circuit);
    let n = circuit.lines.len();
    let mut out = vec![vec![false; n]; pattern.len()];
    let mut record = |t: usize, get: &dyn Fn(LineId) -> u64| {
        for (l, slot) in out[t].iter_mut().enumerate() {
            *slot = get(l) & 1 == 1;
        }
    };
    sim.run(fault, &good, &init_w, &[], |_, _| {}, Some(&mut record));
    out
}

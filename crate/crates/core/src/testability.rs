// SPDX-License-Identifier: Apache-2.0

//! Per-cycle SCOAP and COP testability via time-frame expansion.
//!
//! Each frame is one combinational copy of the circuit. Flip-flops carry
//! controllability forward (frame `t` output = frame `t-1` input, plus one
//! for SCOAP) and observability backward (frame `t` input inherits frame
//! `t+1` output observability, plus one for SCOAP). Frame 0 flip-flops hold
//! the reset value 0. Observed lines are observed in every frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::{Circuit, GateKind, LineId};

/// Stand-in for "not reachable in this frame". Saturating arithmetic keeps
/// every derived value at or below it.
pub const SENTINEL: u64 = 1 << 40;

#[inline]
fn sat(a: u64, b: u64) -> u64 {
    (a + b).min(SENTINEL)
}

/// Raw SCOAP values laid out `[frame][line]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scoap {
    pub n_lines: usize,
    pub n_frames: usize,
    pub cc0: Vec<u64>,
    pub cc1: Vec<u64>,
    pub co: Vec<u64>,
}

/// COP probabilities laid out `[frame][line]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cop {
    pub n_lines: usize,
    pub n_frames: usize,
    pub c1: Vec<f64>,
    pub o: Vec<f64>,
}

impl Scoap {
    pub fn at(&self, frame: usize, line: LineId) -> (u64, u64, u64) {
        let i = frame * self.n_lines + line;
        (self.cc0[i], self.cc1[i], self.co[i])
    }
}

impl Cop {
    pub fn at(&self, frame: usize, line: LineId) -> (f64, f64) {
        let i = frame * self.n_lines + line;
        (self.c1[i], self.o[i])
    }
}

fn check_frames(n_frames: usize) -> Result<()> {
    if n_frames == 0 {
        Err(Error::invalid("frame count must be at least 1"))
    } else {
        Ok(())
    }
}

/// SCOAP with primary outputs observed.
pub fn compute_scoap(circuit: &Circuit, n_frames: usize) -> Result<Scoap> {
    compute_scoap_observed(circuit, n_frames, &circuit.primary_outputs)
}

pub fn compute_scoap_observed(circuit: &Circuit, n_frames: usize, observe: &[LineId]) -> Result<Scoap> {
    check_frames(n_frames)?;
    let n = circuit.lines.len();
    let mut cc0 = vec![SENTINEL; n * n_frames];
    let mut cc1 = vec![SENTINEL; n * n_frames];
    for f in 0..n_frames {
        let base = f * n;
        for &pi in &circuit.primary_inputs {
            cc0[base + pi] = 1;
            cc1[base + pi] = 1;
        }
        for &d in &circuit.dffs {
            let q = circuit.gates[d].output;
            if f == 0 {
                cc0[base + q] = 1;
                cc1[base + q] = SENTINEL;
            } else {
                let dl = circuit.gates[d].fanin[0];
                cc0[base + q] = sat(cc0[base - n + dl], 1);
                cc1[base + q] = sat(cc1[base - n + dl], 1);
            }
        }
        for &g in &circuit.level_order {
            let gate = &circuit.gates[g];
            let z = |l: LineId| cc0[base + l];
            let o = |l: LineId| cc1[base + l];
            let sum = |get: &dyn Fn(LineId) -> u64| gate.fanin.iter().fold(0, |acc, &l| sat(acc, get(l)));
            let min = |get: &dyn Fn(LineId) -> u64| gate.fanin.iter().map(|&l| get(l)).min().unwrap_or(SENTINEL);
            let (c0, c1) = match gate.kind {
                GateKind::And => (min(&z), sum(&o)),
                GateKind::Nand => (sum(&o), min(&z)),
                GateKind::Or => (sum(&z), min(&o)),
                GateKind::Nor => (min(&o), sum(&z)),
                GateKind::Not => (o(gate.fanin[0]), z(gate.fanin[0])),
                GateKind::Buff => (z(gate.fanin[0]), o(gate.fanin[0])),
                GateKind::Xor => {
                    let first = gate.fanin[0];
                    let (mut a0, mut a1) = (z(first), o(first));
                    for &l in &gate.fanin[1..] {
                        let (b0, b1) = (z(l), o(l));
                        let n0 = sat(a0, b0).min(sat(a1, b1));
                        let n1 = sat(a0, b1).min(sat(a1, b0));
                        a0 = n0;
                        a1 = n1;
                    }
                    (a0, a1)
                }
                GateKind::Input | GateKind::Dff => unreachable!("not in level order"),
            };
            cc0[base + g] = sat(c0, 1);
            cc1[base + g] = sat(c1, 1);
        }
    }

    let mut co = vec![SENTINEL; n * n_frames];
    for f in (0..n_frames).rev() {
        let base = f * n;
        for &l in observe {
            co[base + l] = 0;
        }
        if f + 1 < n_frames {
            for &d in &circuit.dffs {
                let dl = circuit.gates[d].fanin[0];
                let q = circuit.gates[d].output;
                let v = sat(co[base + n + q], 1);
                co[base + dl] = co[base + dl].min(v);
            }
        }
        for &g in circuit.level_order.iter().rev() {
            let gate = &circuit.gates[g];
            let out = co[base + gate.output];
            for (i, &l) in gate.fanin.iter().enumerate() {
                let side = gate
                    .fanin
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .fold(0, |acc, (_, &s)| {
                        let c = match gate.kind {
                            GateKind::And | GateKind::Nand => cc1[base + s],
                            GateKind::Or | GateKind::Nor => cc0[base + s],
                            GateKind::Xor => cc0[base + s].min(cc1[base + s]),
                            _ => 0,
                        };
                        sat(acc, c)
                    });
                let v = sat(sat(out, side), 1);
                co[base + l] = co[base + l].min(v);
            }
        }
    }
    Ok(Scoap {
        n_lines: n,
        n_frames,
        cc0,
        cc1,
        co,
    })
}

/// COP with primary outputs observed.
pub fn compute_cop(circuit: &Circuit, n_frames: usize) -> Result<Cop> {
    compute_cop_observed(circuit, n_frames, &circuit.primary_outputs)
}

pub fn compute_cop_observed(circuit: &Circuit, n_frames: usize, observe: &[LineId]) -> Result<Cop> {
    check_frames(n_frames)?;
    let n = circuit.lines.len();
    let mut c1 = vec![0.0; n * n_frames];
    for f in 0..n_frames {
        let base = f * n;
        for &pi in &circuit.primary_inputs {
            c1[base + pi] = 0.5;
        }
        for &d in &circuit.dffs {
            let q = circuit.gates[d].output;
            c1[base + q] = if f == 0 {
                0.0
            } else {
                c1[base - n + circuit.gates[d].fanin[0]]
            };
        }
        for &g in &circuit.level_order {
            let gate = &circuit.gates[g];
            let p = |l: LineId| c1[base + l];
            let all_one = || gate.fanin.iter().map(|&l| p(l)).product::<f64>();
            let all_zero = || gate.fanin.iter().map(|&l| 1.0 - p(l)).product::<f64>();
            c1[base + g] = match gate.kind {
                GateKind::And => all_one(),
                GateKind::Nand => 1.0 - all_one(),
                GateKind::Or => 1.0 - all_zero(),
                GateKind::Nor => all_zero(),
                GateKind::Not => 1.0 - p(gate.fanin[0]),
                GateKind::Buff => p(gate.fanin[0]),
                GateKind::Xor => gate.fanin[1..]
                    .iter()
                    .fold(p(gate.fanin[0]), |a, &l| a * (1.0 - p(l)) + p(l) * (1.0 - a)),
                GateKind::Input | GateKind::Dff => unreachable!("not in level order"),
            };
        }
    }

    // Probability that no branch observes the line; observability = 1 - miss.
    let mut miss = vec![1.0; n * n_frames];
    for f in (0..n_frames).rev() {
        let base = f * n;
        for &l in observe {
            miss[base + l] = 0.0;
        }
        if f + 1 < n_frames {
            for &d in &circuit.dffs {
                let dl = circuit.gates[d].fanin[0];
                let q = circuit.gates[d].output;
                miss[base + dl] *= miss[base + n + q];
            }
        }
        for &g in circuit.level_order.iter().rev() {
            let gate = &circuit.gates[g];
            let out = 1.0 - miss[base + gate.output];
            for (i, &l) in gate.fanin.iter().enumerate() {
                let side: f64 = gate
                    .fanin
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &s)| match gate.kind {
                        GateKind::And | GateKind::Nand => c1[base + s],
                        GateKind::Or | GateKind::Nor => 1.0 - c1[base + s],
                        _ => 1.0,
                    })
                    .product();
                miss[base + l] *= 1.0 - out * side;
            }
        }
    }
    let o = miss.into_iter().map(|m| 1.0 - m).collect();
    Ok(Cop {
        n_lines: n,
        n_frames,
        c1,
        o,
    })
}

/// Min-max scaling to `[0,1]`; a constant input maps to all zeros.
pub fn minmax(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return (Vec::new(), 0.0, 0.0);
    }
    let span = hi - lo;
    let out = values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    (out, lo, hi)
}

/// Replaces sentinel entries by the largest reachable value.
fn desentinel(values: &[u64]) -> Vec<f64> {
    let max = values.iter().copied().filter(|&v| v < SENTINEL).max().unwrap_or(0);
    values
        .iter()
        .map(|&v| if v >= SENTINEL { max as f64 } else { v as f64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRange {
    pub min: f64,
    pub max: f64,
}

/// SCOAP and COP per frame with SCOAP min-max normalized per circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestabilityFrames {
    pub n_lines: usize,
    pub n_frames: usize,
    pub scoap: Scoap,
    pub cop: Cop,
    pub cc0n: Vec<f64>,
    pub cc1n: Vec<f64>,
    pub con: Vec<f64>,
    /// Ranges used for cc0, cc1 and co.
    pub ranges: [MetricRange; 3],
}

impl TestabilityFrames {
    /// `[cc0n, cc1n, con, c1, o]` of `line` at 0-based `frame`.
    pub fn features(&self, frame: usize, line: LineId) -> [f64; 5] {
        let i = frame * self.n_lines + line;
        [
            self.cc0n[i],
            self.cc1n[i],
            self.con[i],
            self.cop.c1[i],
            self.cop.o[i],
        ]
    }

    /// CSV with header `line,cycle,cc0n,cc1n,con,c1,o`.
    pub fn to_csv(&self, circuit: &Circuit) -> String {
        let mut s = String::from("line,cycle,cc0n,cc1n,con,c1,o\n");
        for (l, line) in circuit.lines.iter().enumerate() {
            for f in 0..self.n_frames {
                let [a, b, c, d, e] = self.features(f, l);
                s.push_str(&format!("{},{},{a},{b},{c},{d},{e}\n", line.name, f + 1));
            }
        }
        s
    }
}

pub fn normalize_minmax(scoap: Scoap, cop: Cop) -> TestabilityFrames {
    let (cc0n, a0, b0) = minmax(&desentinel(&scoap.cc0));
    let (cc1n, a1, b1) = minmax(&desentinel(&scoap.cc1));
    let (con, a2, b2) = minmax(&desentinel(&scoap.co));
    TestabilityFrames {
        n_lines: scoap.n_lines,
        n_frames: scoap.n_frames,
        scoap,
        cop,
        cc0n,
        cc1n,
        con,
        ranges: [
            MetricRange { min: a0, max: b0 },
            MetricRange { min: a1, max: b1 },
            MetricRange { min: a2, max: b2 },
        ],
    }
}

/// Full testability feature frames with the given observed lines.
pub fn compute_testability(circuit: &Circuit, n_frames: usize, observe: &[LineId]) -> Result<TestabilityFrames> {
    let scoap = compute_scoap_observed(circuit, n_frames, observe)?;
    let cop = compute_cop_observed(circuit, n_frames, observe)?;
    Ok(normalize_minmax(scoap, cop))
}

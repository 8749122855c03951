// SPDX-License-Identifier: Apache-2.0

//! Gate-level sequential netlists in ISCAS'89 `.bench` form.
//!
//! Every gate (including primary inputs, modelled as `INPUT` gates, and
//! flip-flops) drives exactly one line, and the line shares the gate's id.
//! Fanout branches are not separate lines: a stem records all of its sinks.

mod parse;
pub mod synth;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::parse_bench;

pub type GateId = usize;
pub type LineId = usize;

/// The nine node categories. The declaration order fixes the one-hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    Input,
    And,
    Nand,
    Or,
    Nor,
    Not,
    Buff,
    Xor,
    Dff,
}

impl GateKind {
    pub const COUNT: usize = 9;

    pub const ALL: [GateKind; 9] = [
        GateKind::Input,
        GateKind::And,
        GateKind::Nand,
        GateKind::Or,
        GateKind::Nor,
        GateKind::Not,
        GateKind::Buff,
        GateKind::Xor,
        GateKind::Dff,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<GateKind> {
        Self::ALL.get(index).copied()
    }

    pub fn keyword(self) -> &'static str {
        match self {
            GateKind::Input => "INPUT",
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Not => "NOT",
            GateKind::Buff => "BUFF",
            GateKind::Xor => "XOR",
            GateKind::Dff => "DFF",
        }
    }

    /// True for gates evaluated inside a time frame.
    pub fn is_combinational(self) -> bool {
        !matches!(self, GateKind::Input | GateKind::Dff)
    }

    /// Evaluates the gate over 64 bit-parallel patterns.
    #[inline]
    pub fn eval_words(self, inputs: impl IntoIterator<Item = u64>) -> u64 {
        let mut it = inputs.into_iter();
        match self {
            GateKind::And => it.fold(!0, |a, b| a & b),
            GateKind::Nand => !it.fold(!0, |a, b| a & b),
            GateKind::Or => it.fold(0, |a, b| a | b),
            GateKind::Nor => !it.fold(0, |a, b| a | b),
            GateKind::Xor => it.fold(0, |a, b| a ^ b),
            GateKind::Not => !it.next().unwrap_or(0),
            GateKind::Buff | GateKind::Dff => it.next().unwrap_or(0),
            GateKind::Input => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub id: GateId,
    pub kind: GateKind,
    /// Ordered fanin lines.
    pub fanin: Vec<LineId>,
    pub output: LineId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub id: LineId,
    pub name: String,
    pub driver: GateId,
    pub sinks: Vec<GateId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub name: String,
    pub gates: Vec<Gate>,
    pub lines: Vec<Line>,
    pub primary_inputs: Vec<LineId>,
    pub primary_outputs: Vec<LineId>,
    pub dffs: Vec<GateId>,
    /// Combinational gates in evaluation order.
    pub level_order: Vec<GateId>,
    /// Per-gate level: 0 for inputs and flip-flops.
    pub levels: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitStats {
    pub gates: usize,
    pub dffs: usize,
    pub pis: usize,
    pub pos: usize,
    pub lines: usize,
}

impl Circuit {
    /// Builds a circuit from gates whose ids equal their output line ids.
    /// Computes sinks and the levelized order.
    pub(crate) fn assemble(
        name: String,
        kinds_fanin: Vec<(String, GateKind, Vec<LineId>)>,
        primary_outputs: Vec<LineId>,
    ) -> Result<Circuit> {
        let n = kinds_fanin.len();
        let mut gates = Vec::with_capacity(n);
        let mut lines = Vec::with_capacity(n);
        for (id, (line_name, kind, fanin)) in kinds_fanin.into_iter().enumerate() {
            gates.push(Gate {
                id,
                kind,
                fanin,
                output: id,
            });
            lines.push(Line {
                id,
                name: line_name,
                driver: id,
                sinks: Vec::new(),
            });
        }
        for g in &gates {
            for &l in &g.fanin {
                if l >= n {
                    return Err(Error::invalid(format!("gate {} references line {l}", g.id)));
                }
                if !lines[l].sinks.contains(&g.id) {
                    lines[l].sinks.push(g.id);
                }
            }
        }
        for &po in &primary_outputs {
            if po >= n {
                return Err(Error::UnknownOutput(po.to_string()));
            }
        }
        let primary_inputs = gates
            .iter()
            .filter(|g| g.kind == GateKind::Input)
            .map(|g| g.id)
            .collect();
        let dffs = gates
            .iter()
            .filter(|g| g.kind == GateKind::Dff)
            .map(|g| g.id)
            .collect();
        let mut circuit = Circuit {
            name,
            gates,
            lines,
            primary_inputs,
            primary_outputs,
            dffs,
            level_order: Vec::new(),
            levels: Vec::new(),
        };
        let (order, levels) = levelize_with_levels(&circuit)?;
        circuit.level_order = order;
        circuit.levels = levels;
        Ok(circuit)
    }

    pub fn stats(&self) -> CircuitStats {
        CircuitStats {
            gates: self
                .gates
                .iter()
                .filter(|g| g.kind.is_combinational())
                .count(),
            dffs: self.dffs.len(),
            pis: self.primary_inputs.len(),
            pos: self.primary_outputs.len(),
            lines: self.lines.len(),
        }
    }

    /// Non-fatal structural oddities.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.primary_outputs.is_empty() {
            out.push("no outputs".to_string());
        }
        if self.primary_inputs.is_empty() {
            out.push("no inputs".to_string());
        }
        let dangling = self
            .lines
            .iter()
            .filter(|l| l.sinks.is_empty() && !self.primary_outputs.contains(&l.id))
            .count();
        if dangling > 0 {
            out.push(format!("{dangling} lines drive nothing"));
        }
        out
    }

    pub fn line_by_name(&self, name: &str) -> Option<LineId> {
        self.lines.iter().position(|l| l.name == name)
    }

    pub fn gate(&self, id: GateId) -> &Gate {
        &self.gates[id]
    }

    /// D-pin line of each flip-flop, in `dffs` order.
    pub fn dff_inputs(&self) -> Vec<LineId> {
        self.dffs.iter().map(|&d| self.gates[d].fanin[0]).collect()
    }

    /// Serializes back to `.bench` text.
    pub fn to_bench(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.name);
        for &pi in &self.primary_inputs {
            let _ = writeln!(s, "INPUT({})", self.lines[pi].name);
        }
        for &po in &self.primary_outputs {
            let _ = writeln!(s, "OUTPUT({})", self.lines[po].name);
        }
        let emit = |s: &mut String, g: &Gate| {
            let args: Vec<&str> = g.fanin.iter().map(|&l| self.lines[l].name.as_str()).collect();
            let _ = writeln!(
                s,
                "{} = {}({})",
                self.lines[g.output].name,
                g.kind.keyword(),
                args.join(", ")
            );
        };
        for &d in &self.dffs {
            emit(&mut s, &self.gates[d]);
        }
        for &g in &self.level_order {
            emit(&mut s, &self.gates[g]);
        }
        s
    }
}

/// Topological order of the combinational gates, with flip-flop outputs and
/// primary inputs as level-0 sources.
pub fn levelize(circuit: &Circuit) -> Result<Vec<GateId>> {
    levelize_with_levels(circuit).map(|(order, _)| order)
}

fn levelize_with_levels(circuit: &Circuit) -> Result<(Vec<GateId>, Vec<u32>)> {
    let n = circuit.gates.len();
    let mut pending = vec![0usize; n];
    let mut levels = vec![0u32; n];
    let mut ready: Vec<GateId> = Vec::new();
    for g in &circuit.gates {
        if g.kind.is_combinational() {
            pending[g.id] = g
                .fanin
                .iter()
                .filter(|&&l| circuit.gates[circuit.lines[l].driver].kind.is_combinational())
                .count();
            if pending[g.id] == 0 {
                ready.push(g.id);
            }
        }
    }
    let mut order = Vec::new();
    let mut head = 0;
    while head < ready.len() {
        let g = ready[head];
        head += 1;
        let gate = &circuit.gates[g];
        levels[g] = 1 + gate
            .fanin
            .iter()
            .map(|&l| levels[circuit.lines[l].driver])
            .max()
            .unwrap_or(0);
        order.push(g);
        for &sink in &circuit.lines[gate.output].sinks {
            if circuit.gates[sink].kind.is_combinational() {
                // A sink listing the same line twice is still one sink entry.
                let times = circuit.gates[sink]
                    .fanin
                    .iter()
                    .filter(|&&l| l == gate.output)
                    .count();
                pending[sink] -= times;
                if pending[sink] == 0 {
                    ready.push(sink);
                }
            }
        }
    }
    let comb = circuit
        .gates
        .iter()
        .filter(|g| g.kind.is_combinational())
        .count();
    if order.len() != comb {
        let stuck = circuit
            .gates
            .iter()
            .find(|g| g.kind.is_combinational() && pending[g.id] > 0)
            .map(|g| circuit.lines[g.output].name.clone())
            .unwrap_or_default();
        return Err(Error::CombinationalCycle(stuck));
    }
    // Stable sort by level keeps the result independent of queue details.
    order.sort_by_key(|&g| (levels[g], g));
    Ok((order, levels))
}

/// The ISCAS'89 s27 benchmark as distributed.
pub const S27_BENCH: &str = "\
# s27
# 4 inputs
# 1 outputs
# 3 D-type flipflops
# 2 inverters
# 8 gates (1 ANDs + 1 NANDs + 2 ORs + 4 NORs)

INPUT(G0)
INPUT(G1)
INPUT(G2)
INPUT(G3)

OUTPUT(G17)

G5 = DFF(G10)
G6 = DFF(G11)
G7 = DFF(G13)

G14 = NOT(G0)
G17 = NOT(G11)

G8 = AND(G14, G6)

G15 = OR(G12, G8)
G16 = OR(G3, G8)

G9 = NAND(G16, G15)

G10 = NOR(G14, G11)
G11 = NOR(G5, G9)
G12 = NOR(G1, G7)
G13 = NOR(G2, G12)
";

pub fn s27() -> Circuit {
    parse_bench("s27", S27_BENCH).expect("embedded s27 parses")
}

// SPDX-License-Identifier: Apache-2.0

//! Seeded generator for ISCAS'89-style sequential netlists.
//!
//! The published benchmark files are not bundled (only s27 is). Instead,
//! [`PROFILES`] records the interface sizes of the ISCAS'89 circuits and
//! [`generate`] emits a random netlist of the same PI/PO/DFF/gate counts
//! with ISCAS-like gate mix and locality. Output is `.bench` text that goes
//! through the regular parser.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_bench, Circuit};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub name: &'static str,
    pub pis: usize,
    pub pos: usize,
    pub dffs: usize,
    pub gates: usize,
}

const fn p(name: &'static str, pis: usize, pos: usize, dffs: usize, gates: usize) -> Profile {
    Profile {
        name,
        pis,
        pos,
        dffs,
        gates,
    }
}

/// Interface sizes of the ISCAS'89 circuits, ascending by gate count.
pub const PROFILES: &[Profile] = &[
    p("s298", 3, 6, 14, 119),
    p("s344", 9, 11, 15, 160),
    p("s349", 9, 11, 15, 161),
    p("s382", 3, 6, 21, 158),
    p("s386", 7, 7, 6, 159),
    p("s420", 19, 2, 16, 218),
    p("s444", 3, 6, 21, 181),
    p("s510", 19, 7, 6, 211),
    p("s641", 35, 24, 19, 379),
    p("s713", 35, 23, 19, 393),
    p("s820", 18, 19, 5, 289),
    p("s832", 18, 19, 5, 287),
    p("s838", 35, 2, 32, 446),
    p("s953", 16, 23, 29, 395),
    p("s1238", 14, 14, 18, 508),
    p("s1488", 8, 19, 6, 653),
    p("s5378", 35, 49, 179, 2779),
    p("s9234", 36, 39, 211, 5597),
];

pub fn profile(name: &str) -> Option<Profile> {
    PROFILES.iter().copied().find(|p| p.name == name)
}

/// Emits `.bench` text for a random circuit with the given interface.
pub fn generate_bench(profile: &Profile, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1c0_17a5_u64);
    let n_src = profile.pis + profile.dffs;
    let total = n_src + profile.gates;
    let name = |i: usize| format!("G{i}");

    // Kinds roughly follow the ISCAS'89 mix: inverters and NAND/NOR dominate.
    let kinds: [(&str, u32); 7] = [
        ("NOT", 22),
        ("AND", 19),
        ("NAND", 19),
        ("OR", 12),
        ("NOR", 19),
        ("BUFF", 3),
        ("XOR", 6),
    ];
    let weight_sum: u32 = kinds.iter().map(|k| k.1).sum();

    let mut fanout = vec![0usize; total];
    let mut gate_kind = Vec::with_capacity(profile.gates);
    let mut gate_fanin: Vec<Vec<usize>> = Vec::with_capacity(profile.gates);
    for k in 0..profile.gates {
        let id = n_src + k;
        let mut r = rng.gen_range(0..weight_sum);
        let mut kind = kinds[0].0;
        for (kw, w) in kinds {
            if r < w {
                kind = kw;
                break;
            }
            r -= w;
        }
        let want = match kind {
            "NOT" | "BUFF" => 1,
            _ => match rng.gen_range(0..10) {
                0..=6 => 2,
                7..=8 => 3,
                _ => 4,
            },
        };
        let arity = want.min(id);
        let mut fanin: Vec<usize> = Vec::with_capacity(arity);
        let mut guard = 0;
        while fanin.len() < arity && guard < 64 {
            guard += 1;
            let pick = if rng.gen_bool(0.45) {
                // Prefer signals nobody reads yet, so little logic dangles.
                let unused: Vec<usize> = (0..id).filter(|&s| fanout[s] == 0).collect();
                match unused.choose(&mut rng) {
                    Some(&s) => s,
                    None => rng.gen_range(0..id),
                }
            } else if rng.gen_bool(0.6) && id > n_src {
                let window = 24.min(id - n_src);
                id - 1 - rng.gen_range(0..window)
            } else {
                rng.gen_range(0..id)
            };
            if !fanin.contains(&pick) {
                fanin.push(pick);
            }
        }
        for &f in &fanin {
            fanout[f] += 1;
        }
        gate_kind.push(kind);
        gate_fanin.push(fanin);
    }

    // Flip-flop D inputs and primary outputs come from gates, preferring
    // gates nobody reads yet and the deeper half of the netlist.
    let take_sink = |rng: &mut ChaCha8Rng, fanout: &mut [usize], exclude: &[usize]| {
        let unused: Vec<usize> = (n_src..total)
            .filter(|&g| fanout[g] == 0 && !exclude.contains(&g))
            .collect();
        let pick = if let Some(&g) = unused.choose(rng) {
            g
        } else {
            let lo = n_src + profile.gates / 2;
            rng.gen_range(lo.min(total - 1)..total)
        };
        fanout[pick] += 1;
        pick
    };
    let mut dff_d = Vec::with_capacity(profile.dffs);
    for _ in 0..profile.dffs {
        let d = take_sink(&mut rng, &mut fanout, &[]);
        dff_d.push(d);
    }
    let mut pos: Vec<usize> = Vec::with_capacity(profile.pos);
    let mut guard = 0;
    while pos.len() < profile.pos.min(profile.gates) && guard < 10 * profile.pos + 100 {
        guard += 1;
        let o = take_sink(&mut rng, &mut fanout, &pos);
        if !pos.contains(&o) {
            pos.push(o);
        }
    }

    // Remaining dangling gates feed a later multi-input gate.
    for k in 0..profile.gates {
        let id = n_src + k;
        if fanout[id] > 0 {
            continue;
        }
        let later: Vec<usize> = (k + 1..profile.gates)
            .filter(|&j| !matches!(gate_kind[j], "NOT" | "BUFF") && gate_fanin[j].len() < 5)
            .collect();
        if let Some(&j) = later.choose(&mut rng) {
            gate_fanin[j].push(id);
            fanout[id] += 1;
        }
    }

    let mut s = String::new();
    let _ = writeln!(
        s,
        "# {} (synthetic, seed {seed})\n# {} inputs\n# {} outputs\n# {} D-type flipflops\n# {} gates",
        profile.name, profile.pis, profile.pos, profile.dffs, profile.gates
    );
    for i in 0..profile.pis {
        let _ = writeln!(s, "INPUT({})", name(i));
    }
    for &o in &pos {
        let _ = writeln!(s, "OUTPUT({})", name(o));
    }
    for (q, d) in dff_d.iter().enumerate() {
        let _ = writeln!(s, "{} = DFF({})", name(profile.pis + q), name(*d));
    }
    for k in 0..profile.gates {
        let args: Vec<String> = gate_fanin[k].iter().map(|&f| name(f)).collect();
        let _ = writeln!(s, "{} = {}({})", name(n_src + k), gate_kind[k], args.join(", "));
    }
    s
}

/// Generates and parses a synthetic circuit.
pub fn generate(profile: &Profile, seed: u64) -> Result<Circuit> {
    parse_bench(profile.name, &generate_bench(profile, seed))
}

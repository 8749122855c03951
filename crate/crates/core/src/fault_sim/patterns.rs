// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based 64-bit draw keyed by a seed and three indices.
#[inline]
pub(crate) fn counter_word(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let h = mix64(seed ^ 0x243f_6a88_85a3_08d3);
    let h = mix64(h ^ a);
    let h = mix64(h ^ b.rotate_left(21));
    mix64(h ^ c.rotate_left(42))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternSource {
    /// Fresh pseudo-random vector per pattern and cycle.
    Random,
    /// Every input sequence exactly once; pattern `k` reads its bits from `k`.
    Exhaustive,
    /// Caller-provided words laid out `[block][cycle][pi]`.
    Explicit(#[serde(skip)] Arc<Vec<u64>>),
}

/// A reproducible, lazily evaluated set of multi-cycle test patterns.
///
/// A pattern is a full input sequence: one PI vector per cycle. Patterns are
/// packed 64 to a word so that bit `k % 64` of block `k / 64` is pattern `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSet {
    pub seed: u64,
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub pi_count: usize,
    pub source: PatternSource,
}

impl PatternSet {
    pub fn random(seed: u64, n_patterns: usize, n_cycles: usize, pi_count: usize) -> Result<Self> {
        if pi_count == 0 {
            return Err(Error::NoPrimaryInputs);
        }
        if n_patterns == 0 || n_cycles == 0 {
            return Err(Error::invalid("pattern and cycle counts must be positive"));
        }
        Ok(PatternSet {
            seed,
            n_patterns,
            n_cycles,
            pi_count,
            source: PatternSource::Random,
        })
    }

    /// All `2^(pi_count * n_cycles)` input sequences.
    pub fn exhaustive(n_cycles: usize, pi_count: usize) -> Result<Self> {
        if pi_count == 0 {
            return Err(Error::NoPrimaryInputs);
        }
        let bits = pi_count * n_cycles;
        if n_cycles == 0 || bits > 24 {
            return Err(Error::invalid(format!(
                "exhaustive patterns need 1..=24 input bits, got {bits}"
            )));
        }
        Ok(PatternSet {
            seed: 0,
            n_patterns: 1usize << bits,
            n_cycles,
            pi_count,
            source: PatternSource::Exhaustive,
        })
    }

    /// Patterns given as `patterns[k][cycle][pi]`.
    pub fn explicit(patterns: &[Vec<Vec<bool>>]) -> Result<Self> {
        let n_patterns = patterns.len();
        let n_cycles = patterns.first().map(Vec::len).unwrap_or(0);
        let pi_count = patterns
            .first()
            .and_then(|p| p.first())
            .map(Vec::len)
            .unwrap_or(0);
        if pi_count == 0 {
            return Err(Error::NoPrimaryInputs);
        }
        if n_patterns == 0 || n_cycles == 0 {
            return Err(Error::invalid("pattern and cycle counts must be positive"));
        }
        let blocks = n_patterns.div_ceil(64);
        let mut words = vec![0u64; blocks * n_cycles * pi_count];
        for (k, pat) in patterns.iter().enumerate() {
            if pat.len() != n_cycles || pat.iter().any(|v| v.len() != pi_count) {
                return Err(Error::invalid(format!("pattern {k} has a ragged shape")));
            }
            for (t, vec) in pat.iter().enumerate() {
                for (i, &b) in vec.iter().enumerate() {
                    if b {
                        words[((k / 64) * n_cycles + t) * pi_count + i] |= 1 << (k % 64);
                    }
                }
            }
        }
        Ok(PatternSet {
            seed: 0,
            n_patterns,
            n_cycles,
            pi_count,
            source: PatternSource::Explicit(Arc::new(words)),
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_patterns.div_ceil(64)
    }

    /// Mask of patterns that exist in `block`.
    pub fn valid_mask(&self, block: usize) -> u64 {
        let remaining = self.n_patterns - block * 64;
        if remaining >= 64 {
            !0
        } else {
            (1u64 << remaining) - 1
        }
    }

    /// PI `pi` at `cycle` (0-based) for the 64 patterns of `block`.
    pub fn word(&self, block: usize, cycle: usize, pi: usize) -> u64 {
        match &self.source {
            PatternSource::Random => {
                counter_word(self.seed, block as u64, cycle as u64, pi as u64) & self.valid_mask(block)
            }
            PatternSource::Exhaustive => {
                let bit = cycle * self.pi_count + pi;
                let mut w = 0u64;
                for j in 0..64 {
                    let k = block * 64 + j;
                    if k < self.n_patterns && (k >> bit) & 1 == 1 {
                        w |= 1 << j;
                    }
                }
                w
            }
            PatternSource::Explicit(words) => words[(block * self.n_cycles + cycle) * self.pi_count + pi],
        }
    }

    pub fn value(&self, pattern: usize, cycle: usize, pi: usize) -> bool {
        (self.word(pattern / 64, cycle, pi) >> (pattern % 64)) & 1 == 1
    }

    /// Pattern `k` as `[cycle][pi]` booleans.
    pub fn pattern(&self, k: usize) -> Vec<Vec<bool>> {
        (0..self.n_cycles)
            .map(|t| (0..self.pi_count).map(|i| self.value(k, t, i)).collect())
            .collect()
    }
}

/// Initial flip-flop contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitState {
    #[default]
    Zero,
    /// Seeded random state, drawn per pattern.
    Random(u64),
}

impl InitState {
    pub(crate) fn word(&self, block: usize, dff: usize) -> u64 {
        match *self {
            InitState::Zero => 0,
            InitState::Random(seed) => counter_word(seed, block as u64, u64::MAX, dff as u64),
        }
    }
}

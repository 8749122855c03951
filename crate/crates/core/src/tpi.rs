// SPDX-License-Identifier: Apache-2.0

//! Greedy observation-point selection over flip-flops.
//!
//! A fault is cycle-sensitive when its FIP stays low over the first cycles
//! and rises later. Observing a flip-flop's D pin shortens the path to an
//! observation point; the greedy loop picks the flip-flop that clears the
//! most cycle-sensitive faults.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault_sim::{build_fip_matrix, FaultKind, ObservationSet, PatternSet, SimOptions};
use crate::netlist::{Circuit, GateId, GateKind, LineId};
use crate::stgcn::Model;
use crate::stgraph::{convert_unlabeled, ConvertOptions, FeatureMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpiConfig {
    /// Fraction of flip-flops to select.
    pub budget: f64,
    /// Select at least one point whenever the circuit has a flip-flop.
    pub min_one: bool,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Number of early cycles.
    pub early: usize,
    pub random_seeds: Vec<u64>,
    /// Observe the Q pin instead of the D pin.
    pub observe_q: bool,
}

impl Default for TpiConfig {
    fn default() -> Self {
        TpiConfig {
            budget: 0.02,
            min_one: true,
            theta_lo: 0.1,
            theta_hi: 0.5,
            early: 4,
            random_seeds: (0..10).collect(),
            observe_q: false,
        }
    }
}

impl TpiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.theta_lo && self.theta_lo < self.theta_hi && self.theta_hi <= 1.0) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy 0 <= lo < hi <= 1, got {} and {}",
                self.theta_lo, self.theta_hi
            )));
        }
        if !(0.0..=1.0).contains(&self.budget) {
            return Err(Error::invalid(format!("budget must lie in [0, 1], got {}", self.budget)));
        }
        if self.early == 0 {
            return Err(Error::invalid("early window must be at least 1 cycle"));
        }
        Ok(())
    }

    /// `max(1, floor(budget * n_dff))`, or plain floor without `min_one`.
    pub fn budget_count(&self, n_dff: usize) -> usize {
        let k = (self.budget * n_dff as f64).floor() as usize;
        if self.min_one && n_dff > 0 {
            k.max(1).min(n_dff)
        } else {
            k.min(n_dff)
        }
    }
}

/// Predicted or simulated FIP per channel, line and cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FipCurves {
    pub n_lines: usize,
    pub n_cycles: usize,
    /// Clock cycle (1-based) of the first column.
    pub first_cycle: usize,
    pub channels: Vec<FaultKind>,
    /// Lines that count as faults: every gate and flip-flop output.
    pub lines: Vec<LineId>,
    /// `[channel][line][cycle]`.
    pub data: Vec<f64>,
}

impl FipCurves {
    pub fn curve(&self, channel: usize, line: LineId) -> &[f64] {
        let base = (channel * self.n_lines + line) * self.n_cycles;
        &self.data[base..base + self.n_cycles]
    }

    /// Per cycle, mean over counted lines and channels.
    pub fn average(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cycles];
        let k = (self.lines.len() * self.channels.len()).max(1) as f64;
        for c in 0..self.channels.len() {
            for &l in &self.lines {
                for (o, v) in out.iter_mut().zip(self.curve(c, l)) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= k);
        out
    }
}

/// True when the mean over the first `early` values is below `theta_lo` and
/// the maximum of the remaining values reaches `theta_hi`.
pub fn is_cycle_sensitive(curve: &[f64], cfg: &TpiConfig) -> Result<bool> {
    if curve.len() < cfg.early + 1 {
        return Err(Error::invalid(format!(
            "curve of {} cycles is shorter than early window {} + 1",
            curve.len(),
            cfg.early
        )));
    }
    let early = curve[..cfg.early].iter().sum::<f64>() / cfg.early as f64;
    let late = curve[cfg.early..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(early < cfg.theta_lo && late >= cfg.theta_hi)
}

/// Cycle-sensitive faults as `(line, kind)` pairs.
pub fn cycle_sensitive_set(curves: &FipCurves, cfg: &TpiConfig) -> Result<Vec<(LineId, FaultKind)>> {
    let mut out = Vec::new();
    for (c, &kind) in curves.channels.iter().enumerate() {
        for &l in &curves.lines {
            if is_cycle_sensitive(curves.curve(c, l), cfg)? {
                out.push((l, kind));
            }
        }
    }
    out.sort_by_key(|&(l, k)| (l, k as u8));
    Ok(out)
}

/// Anything that yields FIP curves for a circuit under an observation set.
pub trait Predictor: Sync {
    fn curves(&self, circuit: &Circuit, observe: &ObservationSet) -> Result<FipCurves>;

    /// Whether adding observation points can only raise predictions.
    fn is_monotone(&self) -> bool {
        false
    }
}

fn counted_lines(circuit: &Circuit) -> Vec<LineId> {
    circuit
        .gates
        .iter()
        .filter(|g| g.kind != GateKind::Input)
        .map(|g| g.output)
        .collect()
}

/// Ground truth by fault simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorOracle {
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub seed: u64,
    pub channels: Vec<FaultKind>,
    pub sim: SimOptions,
}

impl Default for SimulatorOracle {
    fn default() -> Self {
        SimulatorOracle {
            n_patterns: 1000,
            n_cycles: 10,
            seed: 1,
            channels: vec![FaultKind::Sa0, FaultKind::Sa1],
            sim: SimOptions::default(),
        }
    }
}

impl Predictor for SimulatorOracle {
    fn curves(&self, circuit: &Circuit, observe: &ObservationSet) -> Result<FipCurves> {
        let ps = PatternSet::random(self.seed, self.n_patterns, self.n_cycles, circuit.primary_inputs.len())?;
        let m = build_fip_matrix(circuit, &self.channels, &ps, observe, &self.sim)?;
        let n = circuit.lines.len();
        let mut data = Vec::with_capacity(self.channels.len() * n * self.n_cycles);
        for k in 0..self.channels.len() {
            for l in 0..n {
                data.extend(m.counts[k][l].iter().map(|&c| c as f64 / self.n_patterns as f64));
            }
        }
        Ok(FipCurves {
            n_lines: n,
            n_cycles: self.n_cycles,
            first_cycle: 1,
            channels: self.channels.clone(),
            lines: counted_lines(circuit),
            data,
        })
    }

    fn is_monotone(&self) -> bool {
        true
    }
}

/// Trained testability-feature model. The circuit is re-converted for every
/// observation set, since observability metrics depend on it.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub model: Model,
    pub channels: Vec<FaultKind>,
}

impl ModelPredictor {
    pub fn new(model: Model) -> Result<Self> {
        if model.config.p != FeatureMode::Tm.channels() {
            return Err(Error::ConfigMismatch(format!(
                "observation-point search needs a testability-feature model (p = 5), got p = {}",
                model.config.p
            )));
        }
        let channels = match model.config.q {
            2 => vec![FaultKind::Sa0, FaultKind::Sa1],
            q => return Err(Error::ConfigMismatch(format!("model predicts {q} channels, 2 expected"))),
        };
        Ok(ModelPredictor { model, channels })
    }
}

impl Predictor for ModelPredictor {
    /// Predictions of the first window: cycles `m+1 ..= m+s`.
    fn curves(&self, circuit: &Circuit, observe: &ObservationSet) -> Result<FipCurves> {
        let cfg = &self.model.config;
        let opts = ConvertOptions {
            mode: FeatureMode::Tm,
            m: cfg.m,
            s: cfg.s,
            n_cycles: cfg.m + cfg.s,
            observe: observe.clone(),
            channels: self.channels.clone(),
            ..Default::default()
        };
        let windows = convert_unlabeled(circuit, &opts)?;
        let y = self.model.predict(&windows[0])?;
        let n = circuit.lines.len();
        let (s, q) = (cfg.s, cfg.q);
        let mut data = vec![0.0; q * n * s];
        for t in 0..s {
            for l in 0..n {
                for c in 0..q {
                    data[(c * n + l) * s + t] = y[(t * n + l) * q + c];
                }
            }
        }
        Ok(FipCurves {
            n_lines: n,
            n_cycles: s,
            first_cycle: cfg.m + 1,
            channels: self.channels.clone(),
            lines: counted_lines(circuit),
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomRun {
    pub seed: u64,
    pub selected: Vec<GateId>,
    pub sensitive: usize,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpiReport {
    pub circuit: String,
    pub config: TpiConfig,
    pub first_cycle: usize,
    /// Flip-flop gate ids in selection order.
    pub selected: Vec<GateId>,
    pub selected_names: Vec<String>,
    /// Cycle-sensitive fault count before any point and after each pick.
    pub sensitive_counts: Vec<usize>,
    /// Steps (1-based) where the predicted average curve dropped at some cycle.
    pub non_monotone_steps: Vec<usize>,
    pub before: Vec<f64>,
    pub greedy: Vec<f64>,
    pub random: Vec<RandomRun>,
}

impl TpiReport {
    pub fn random_mean_std(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.before.len();
        if self.random.is_empty() {
            return (vec![f64::NAN; n], vec![f64::NAN; n]);
        }
        let k = self.random.len() as f64;
        let mean: Vec<f64> = (0..n).map(|c| self.random.iter().map(|r| r.curve[c]).sum::<f64>() / k).collect();
        let std = (0..n)
            .map(|c| (self.random.iter().map(|r| (r.curve[c] - mean[c]).powi(2)).sum::<f64>() / k).sqrt())
            .collect();
        (mean, std)
    }

    pub fn random_mean_sensitive(&self) -> f64 {
        if self.random.is_empty() {
            return f64::NAN;
        }
        self.random.iter().map(|r| r.sensitive as f64).sum::<f64>() / self.random.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let (mean, std) = self.random_mean_std();
        let mut s = String::from("cycle,before,greedy,random_mean,random_std\n");
        for c in 0..self.before.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.first_cycle + c,
                self.before[c],
                self.greedy[c],
                mean[c],
                std[c]
            ));
        }
        s
    }
}

fn observe_with(circuit: &Circuit, base: &ObservationSet, dffs: &[GateId], q_pin: bool) -> ObservationSet {
    base.clone().with_extra(dffs.iter().map(|&g| {
        let gate = &circuit.gates[g];
        if q_pin {
            gate.output
        } else {
            gate.fanin[0]
        }
    }))
}

fn count_sensitive(curves: &FipCurves, cfg: &TpiConfig) -> Result<usize> {
    Ok(cycle_sensitive_set(curves, cfg)?.len())
}

/// Greedy selection from primary-output observation, plus the random
/// baseline for every seed in the config.
pub fn greedy_select(circuit: &Circuit, predictor: &dyn Predictor, cfg: &TpiConfig) -> Result<TpiReport> {
    cfg.validate()?;
    if circuit.dffs.is_empty() {
        return Err(Error::NoFlipFlops);
    }
    let base = ObservationSet::pos();
    let budget = cfg.budget_count(circuit.dffs.len());
    let before = predictor.curves(circuit, &base)?;
    let mut count = count_sensitive(&before, cfg)?;
    let mut counts = vec![count];
    let mut selected: Vec<GateId> = Vec::new();
    let mut non_monotone = Vec::new();
    let mut current = before.clone();
    while selected.len() < budget {
        let cands: Vec<GateId> = circuit.dffs.iter().copied().filter(|d| !selected.contains(d)).collect();
        let evals: Result<Vec<(GateId, usize, FipCurves)>> = cands
            .par_iter()
            .map(|&d| {
                let mut trial = selected.clone();
                trial.push(d);
                let curves = predictor.curves(circuit, &observe_with(circuit, &base, &trial, cfg.observe_q))?;
                let c = count_sensitive(&curves, cfg)?;
                Ok((d, c, curves))
            })
            .collect();
        // Lowest count wins; ties go to the lowest flip-flop id.
        let dff_rank = |g: &GateId| circuit.dffs.iter().position(|x| x == g);
        let Some((d, c, curves)) = evals?.into_iter().min_by_key(|(d, c, _)| (*c, dff_rank(d))) else {
            break;
        };
        if c >= count {
            break;
        }
        selected.push(d);
        counts.push(c);
        let (prev, next) = (current.average(), curves.average());
        if next.iter().zip(&prev).any(|(n, p)| n + 1e-12 < *p) {
            non_monotone.push(selected.len());
        }
        count = c;
        current = curves;
    }

    let mut random = Vec::new();
    for &seed in &cfg.random_seeds {
        random.push(random_baseline(circuit, predictor, cfg, seed, selected.len())?);
    }
    Ok(TpiReport {
        circuit: circuit.name.clone(),
        config: cfg.clone(),
        first_cycle: before.first_cycle,
        selected_names: selected.iter().map(|&g| circuit.lines[circuit.gates[g].output].name.clone()).collect(),
        selected,
        sensitive_counts: counts,
        non_monotone_steps: non_monotone,
        before: before.average(),
        greedy: current.average(),
        random,
    })
}

/// `count` flip-flops drawn uniformly without replacement.
pub fn random_baseline(
    circuit: &Circuit,
    predictor: &dyn Predictor,
    cfg: &TpiConfig,
    seed: u64,
    count: usize,
) -> Result<RandomRun> {
    if circuit.dffs.is_empty() {
        return Err(Error::NoFlipFlops);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = count.min(circuit.dffs.len());
    let mut selected: Vec<GateId> = sample(&mut rng, circuit.dffs.len(), count)
        .into_iter()
        .map(|i| circuit.dffs[i])
        .collect();
    selected.sort_unstable();
    let curves = predictor.curves(circuit, &observe_with(circuit, &ObservationSet::pos(), &selected, cfg.observe_q))?;
    Ok(RandomRun {
        seed,
        sensitive: count_sensitive(&curves, cfg)?,
        curve: curves.average(),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_bench;

    #[test]
    fn sensitivity_examples() {
        let cfg = TpiConfig::default();
        assert!(!is_cycle_sensitive(&[0.0; 6], &cfg).unwrap());
        assert!(is_cycle_sensitive(&[0.0, 0.0, 0.0, 0.0, 0.8, 0.9], &cfg).unwrap());
        assert!(!is_cycle_sensitive(&[0.6; 6], &cfg).unwrap());
        assert!(is_cycle_sensitive(&[0.0; 4], &cfg).is_err());
    }

    #[test]
    fn budget_rounding() {
        let cfg = TpiConfig::default();
        assert_eq!(cfg.budget_count(32), 1);
        assert_eq!(cfg.budget_count(211), 4);
        let off = TpiConfig {
            budget: 0.0,
            min_one: false,
            ..Default::default()
        };
        assert_eq!(off.budget_count(32), 0);
        assert!(TpiConfig { theta_lo: 0.6, ..Default::default() }.validate().is_err());
    }

    /// A 4-stage shift chain q1..q4 feeding the output late, and a dead
    /// flip-flop r. Stuck-at-0 on x, every chain stage and y first shows at
    /// cycle 5. Observing q4's D pin exposes x..q3 by cycle 4;
    /// observing q1's D pin only exposes x; observing r exposes nothing.
    fn chain() -> Circuit {
        parse_bench(
            "chain",
            "INPUT(a)\nINPUT(b)\nOUTPUT(y)\n\
             q1 = DFF(x)\nq2 = DFF(q1)\nq3 = DFF(q2)\nq4 = DFF(q3)\nr = DFF(w)\n\
             x = OR(a, b)\ny = BUFF(q4)\nw = AND(a, r)\n",
        )
        .unwrap()
    }

    fn oracle() -> SimulatorOracle {
        SimulatorOracle {
            n_patterns: 256,
            n_cycles: 8,
            ..Default::default()
        }
    }

    #[test]
    fn greedy_picks_chain_head() {
        let c = chain();
        let cfg = TpiConfig {
            random_seeds: vec![],
            ..Default::default()
        };
        let r = greedy_select(&c, &oracle(), &cfg).unwrap();
        assert_eq!(r.selected_names, vec!["q4"]);
        let mut expect: Vec<(LineId, FaultKind)> = ["x", "q1", "q2", "q3", "q4", "y"]
            .iter()
            .map(|n| (c.line_by_name(n).unwrap(), FaultKind::Sa0))
            .collect();
        expect.sort_by_key(|&(l, k)| (l, k as u8));
        let base = oracle().curves(&c, &ObservationSet::pos()).unwrap();
        assert_eq!(cycle_sensitive_set(&base, &cfg).unwrap(), expect);
        assert_eq!(r.sensitive_counts, vec![6, 2]);
        let ff = |n: &str| c.gates[c.lines[c.line_by_name(n).unwrap()].driver].id;
        let count_with = |n: &str| {
            let cv = oracle().curves(&c, &observe_with(&c, &ObservationSet::pos(), &[ff(n)], false)).unwrap();
            count_sensitive(&cv, &cfg).unwrap()
        };
        assert_eq!(count_with("r"), 6);
        assert_eq!(count_with("q1"), 5);
        assert!(r.non_monotone_steps.is_empty());
        for (a, b) in r.before.iter().zip(&r.greedy) {
            assert!(b >= a);
        }
    }

    #[test]
    fn empty_budget_keeps_baseline() {
        let c = chain();
        let cfg = TpiConfig {
            budget: 0.0,
            min_one: false,
            random_seeds: vec![3],
            ..Default::default()
        };
        let r = greedy_select(&c, &oracle(), &cfg).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.before, r.greedy);
        assert_eq!(r.random[0].curve, r.before);
    }

    #[test]
    fn full_budget_matches_random() {
        let c = chain();
        let all = TpiConfig {
            budget: 1.0,
            random_seeds: vec![5],
            ..Default::default()
        };
        let rr = random_baseline(&c, &oracle(), &all, 5, c.dffs.len()).unwrap();
        let mut dffs = c.dffs.clone();
        dffs.sort_unstable();
        assert_eq!(rr.selected, dffs);
        let again = random_baseline(&c, &oracle(), &all, 5, 2).unwrap();
        assert_eq!(again, random_baseline(&c, &oracle(), &all, 5, 2).unwrap());
    }

    #[test]
    fn average_is_hand_mean() {
        let c = parse_bench("inv", "INPUT(a) OUTPUT(y) y = NOT(a)").unwrap();
        let curves = FipCurves {
            n_lines: 2,
            n_cycles: 2,
            first_cycle: 1,
            channels: vec![FaultKind::Sa0, FaultKind::Sa1],
            lines: counted_lines(&c),
            data: vec![9.0, 9.0, 0.5, 0.25, 9.0, 9.0, 0.5, 0.75],
        };
        assert_eq!(curves.lines, vec![1]);
        assert_eq!(curves.average(), vec![0.5, 0.5]);
    }

    #[test]
    fn no_flip_flops_is_an_error() {
        let c = parse_bench("inv", "INPUT(a) OUTPUT(y) y = NOT(a)").unwrap();
        assert!(matches!(greedy_select(&c, &oracle(), &TpiConfig::default()), Err(Error::NoFlipFlops)));
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Property tests over randomly generated circuits, tensors and graphs.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fipgraph::autodiff::{grad_check, ParamStore, Tape, Tensor};
use fipgraph::fault_sim::{
    build_fip_matrix, simulate_faulty, simulate_good, Fault, FaultKind, ObservationSet, PatternSet, SimOptions,
};
use fipgraph::netlist::synth::{generate, Profile};
use fipgraph::netlist::{levelize, parse_bench, Circuit, GateKind};
use fipgraph::stgcn::{Model, ModelConfig, Variant};
use fipgraph::stgraph::{build_topology, convert_circuit, ConvertOptions, FeatureMode, StGraph, Topology};
use fipgraph::testability::compute_testability;
use fipgraph::tpi::{cycle_sensitive_set, greedy_select, Predictor, SimulatorOracle, TpiConfig};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn small_circuit(pis: usize, dffs: usize, gates: usize, seed: u64) -> Circuit {
    let p = Profile {
        name: "rand",
        pis,
        pos: 2,
        dffs,
        gates,
    };
    generate(&p, seed).unwrap()
}

prop_compose! {
    fn circuits()(pis in 1usize..5, dffs in 1usize..4, gates in 4usize..24, seed in any::<u64>()) -> Circuit {
        small_circuit(pis, dffs, gates, seed)
    }
}

/// Structure keyed by names so line ids do not matter.
fn structure(c: &Circuit) -> Vec<(String, GateKind, Vec<String>)> {
    let mut v: Vec<_> = c
        .gates
        .iter()
        .map(|g| {
            (
                c.lines[g.output].name.clone(),
                g.kind,
                g.fanin.iter().map(|&l| c.lines[l].name.clone()).collect(),
            )
        })
        .collect();
    v.sort();
    v
}

fn names(c: &Circuit, ids: &[usize]) -> Vec<String> {
    ids.iter().map(|&l| c.lines[l].name.clone()).collect()
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn bench_roundtrip_preserves_structure(c in circuits()) {
        let back = parse_bench(&c.name, &c.to_bench()).unwrap();
        prop_assert_eq!(structure(&back), structure(&c));
        prop_assert_eq!(names(&back, &back.primary_inputs), names(&c, &c.primary_inputs));
        prop_assert_eq!(names(&back, &back.primary_outputs), names(&c, &c.primary_outputs));
    }

    #[test]
    fn declaration_order_is_irrelevant(c in circuits(), seed in any::<u64>()) {
        let text = c.to_bench();
        let (decls, body): (Vec<&str>, Vec<&str>) = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .partition(|l| l.starts_with("INPUT") || l.starts_with("OUTPUT"));
        let mut body = body;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..body.len()).rev() {
            body.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = decls.iter().chain(body.iter()).cloned().collect::<Vec<_>>().join("\n");
        let back = parse_bench(&c.name, &shuffled).unwrap();
        prop_assert_eq!(structure(&back), structure(&c));
    }

    #[test]
    fn levelize_orders_fanins_first(c in circuits()) {
        let order = levelize(&c).unwrap();
        let mut comb: Vec<usize> = c.gates.iter().filter(|g| g.kind.is_combinational()).map(|g| g.id).collect();
        let mut sorted = order.clone();
        sorted.sort();
        comb.sort();
        prop_assert_eq!(sorted, comb);
        let mut pos = vec![usize::MAX; c.gates.len()];
        for (i, &g) in order.iter().enumerate() {
            pos[g] = i;
        }
        for &g in &order {
            for &f in &c.gates[g].fanin {
                let d = c.lines[f].driver;
                if c.gates[d].kind.is_combinational() {
                    prop_assert!(pos[d] < pos[g]);
                }
            }
        }
    }

    #[test]
    fn fip_is_a_fraction_and_grows_with_observation(c in circuits(), seed in any::<u64>(), n in 1usize..150) {
        let ps = PatternSet::random(seed, n, 4, c.primary_inputs.len()).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1, FaultKind::Str, FaultKind::Stf];
        let po = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &SimOptions::default()).unwrap();
        let all = build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos_and_ppos(), &SimOptions::default()).unwrap();
        for k in 0..kinds.len() {
            for l in 0..c.lines.len() {
                for t in 1..=4 {
                    let (a, b) = (po.fip(l, kinds[k], t), all.fip(l, kinds[k], t));
                    prop_assert!((0.0..=1.0).contains(&a));
                    let scaled = a * n as f64;
                    prop_assert!((scaled - scaled.round()).abs() < 1e-9);
                    prop_assert!(b >= a);
                }
            }
        }
    }

    #[test]
    fn fip_independent_of_thread_count(c in circuits(), seed in any::<u64>()) {
        let ps = PatternSet::random(seed, 200, 3, c.primary_inputs.len()).unwrap();
        let kinds = [FaultKind::Sa0, FaultKind::Sa1];
        let run = |threads| {
            let opts = SimOptions { threads: Some(threads), ..Default::default() };
            build_fip_matrix(&c, &kinds, &ps, &ObservationSet::pos(), &opts).unwrap()
        };
        prop_assert_eq!(run(1), run(4));
    }

    #[test]
    fn null_fault_leaves_trace_unchanged(c in circuits(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern: Vec<Vec<bool>> = (0..4).map(|_| (0..c.primary_inputs.len()).map(|_| rng.gen()).collect()).collect();
        let init = vec![false; c.dffs.len()];
        let good = simulate_good(&c, &pattern, &init);
        // A stuck value that matches the good machine at every cycle is inert.
        for l in 0..c.lines.len() {
            let vals: Vec<bool> = good.iter().map(|f| f[l]).collect();
            let kind = if vals.iter().all(|&v| !v) {
                FaultKind::Sa0
            } else if vals.iter().all(|&v| v) {
                FaultKind::Sa1
            } else {
                continue;
            };
            let bad = simulate_faulty(&c, Fault { line: l, kind }, &pattern, &init);
            prop_assert_eq!(&bad, &good);
        }
    }

    #[test]
    fn testability_prefix_stable(c in circuits(), short in 1usize..4, extra in 1usize..4) {
        let obs = ObservationSet::pos().resolve(&c).unwrap();
        let a = compute_testability(&c, short, &obs).unwrap();
        let b = compute_testability(&c, short + extra, &obs).unwrap();
        // Raw SCOAP/COP are compared; normalized values depend on the frame range.
        for f in 0..short {
            for l in 0..c.lines.len() {
                prop_assert_eq!(a.scoap.at(f, l).0, b.scoap.at(f, l).0);
                prop_assert_eq!(a.scoap.at(f, l).1, b.scoap.at(f, l).1);
                prop_assert_eq!(a.cop.at(f, l).0, b.cop.at(f, l).0);
            }
        }
    }

    #[test]
    fn graph_shape_and_window_ranges(c in circuits(), seed in any::<u64>()) {
        let topo = build_topology(&c);
        prop_assert_eq!(topo.n_nodes(), c.gates.len());
        let h = topo.one_hot();
        for row in h.chunks(9) {
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
        let opts = ConvertOptions {
            m: 3,
            s: 2,
            n_patterns: 64,
            n_cycles: 7,
            seed,
            ..Default::default()
        };
        let ws = convert_circuit(&c, &opts).unwrap();
        prop_assert_eq!(ws.len(), 3);
        for w in &ws {
            prop_assert!(Arc::ptr_eq(&w.topology, &ws[0].topology));
            let inputs = (w.window_start + 1)..=(w.window_start + w.m);
            let labels = (w.window_start + w.m + 1)..=(w.window_start + w.m + w.s);
            prop_assert_eq!(*inputs.end() + 1, *labels.start());
        }
    }
}

/// Checks one primitive's reverse rule against central differences.
fn check_primitive(
    shapes: &[(usize, usize)],
    seed: u64,
    build: impl Fn(&mut Tape, &[fipgraph::autodiff::Var]) -> fipgraph::Result<fipgraph::autodiff::Var>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let data = (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect();
        store.add(&format!("x{i}"), Tensor::new(vec![r, c], data).unwrap()).unwrap();
    }
    // A random linear read-out keeps the loss sensitive to every output.
    let forward = |s: &ParamStore, tape: &mut Tape| -> fipgraph::Result<fipgraph::autodiff::Var> {
        let vars: Vec<_> = (0..shapes.len()).map(|i| tape.param(s, i)).collect();
        let out = build(tape, &vars)?;
        let t = tape.value(out).clone();
        let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let w = Tensor::new(t.shape.clone(), (0..t.len()).map(|_| r2.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = tape.constant(w);
        let prod = tape.hadamard(out, w)?;
        Ok(tape.sum(prod))
    };
    let report = grad_check(
        &store,
        1e-5,
        seed,
        |s| {
            let mut t = Tape::new();
            let l = forward(s, &mut t)?;
            Ok(t.value(l).item())
        },
        |s| {
            let mut t = Tape::new();
            let l = forward(s, &mut t)?;
            t.backward(l, s)
        },
    )
    .unwrap();
    report.max_rel_error
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn primitive_gradients(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, j in 1usize..4) {
        let tol = 1e-6;
        let seg: Arc<Vec<usize>> = Arc::new((0..n).map(|r| r % 2).collect());
        let idx: Arc<Vec<usize>> = Arc::new((0..n + 1).map(|r| (r * 7) % n).collect());
        let target = Arc::new(Tensor::new(vec![n, k], (0..n * k).map(|x| (x % 3) as f64 / 3.0).collect()).unwrap());
        let weights = Arc::new((0..n * k).map(|x| ((x + 1) % 2) as f64).collect::<Vec<f64>>());
        type Build = Box<dyn Fn(&mut Tape, &[fipgraph::autodiff::Var]) -> fipgraph::Result<fipgraph::autodiff::Var>>;
        let cases: Vec<(&str, Vec<(usize, usize)>, Build)> = vec![
            ("matmul", vec![(n, k), (k, j)], Box::new(|t, v| t.matmul(v[0], v[1]))),
            ("add", vec![(n, k), (n, k)], Box::new(|t, v| t.add(v[0], v[1]))),
            ("hadamard", vec![(n, k), (n, k)], Box::new(|t, v| t.hadamard(v[0], v[1]))),
            ("add_row", vec![(n, k), (1, k)], Box::new(|t, v| t.add_row(v[0], v[1]))),
            ("concat", vec![(n, k), (n, j)], Box::new(|t, v| t.concat(v[0], v[1]))),
            ("sigmoid", vec![(n, k)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
            ("tanh", vec![(n, k)], Box::new(|t, v| Ok(t.tanh(v[0])))),
            ("scale", vec![(n, k)], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
            ("row_softmax", vec![(n, k)], Box::new(|t, v| Ok(t.row_softmax(v[0])))),
            ("layer_norm", vec![(n, k + 2)], Box::new(|t, v| Ok(t.layer_norm(v[0])))),
            ("row_sum", vec![(n, k)], Box::new(|t, v| Ok(t.row_sum(v[0])))),
            ("col", vec![(n, k)], Box::new(move |t, v| t.col(v[0], k - 1))),
            ("mul_rows", vec![(n, k), (n, 1)], Box::new(|t, v| t.mul_rows(v[0], v[1]))),
            ("segment_softmax", vec![(n, k)], { let s = seg.clone(); Box::new(move |t, v| t.segment_softmax(v[0], s.clone(), 2)) }),
            ("gather", vec![(n, k)], { let i = idx.clone(); Box::new(move |t, v| t.gather(v[0], i.clone())) }),
            ("scatter_add", vec![(n + 1, k)], { let i = idx.clone(); Box::new(move |t, v| t.scatter_add(v[0], i.clone(), n)) }),
            ("mse", vec![(n, k)], { let (tg, w) = (target.clone(), weights.clone()); Box::new(move |t, v| t.mse(v[0], tg.clone(), w.clone())) }),
        ];
        for (name, shapes, build) in cases {
            let err = check_primitive(&shapes, seed, build);
            prop_assert!(err <= tol, "{} error {:e}", name, err);
        }
    }
}

fn random_graph(n_nodes: usize, seed: u64) -> (Topology, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<GateKind> = (0..n_nodes).map(|_| GateKind::from_index(rng.gen_range(0..9)).unwrap()).collect();
    let mut edges = Vec::new();
    for d in 0..n_nodes {
        for s in 0..n_nodes {
            if s != d && rng.gen_bool(0.3) {
                edges.push((s, d));
            }
        }
    }
    let topo = Topology {
        circuit: "g".into(),
        kinds,
        edge_line: edges.iter().map(|e| e.0).collect(),
        edges,
    };
    (topo, rng)
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn model_is_relabel_equivariant(n in 2usize..7, seed in any::<u64>(), variant in 0usize..5) {
        let (topo, mut rng) = random_graph(n, seed);
        let (m, s, q) = (2, 2, 2);
        let ne = topo.n_edges();
        let g = StGraph {
            mode: FeatureMode::Fip,
            m,
            s,
            p: 2,
            q,
            window_start: 0,
            e: (0..m * ne * 2).map(|_| rng.gen()).collect(),
            y: vec![0.0; s * n * q],
            topology: Arc::new(topo.clone()),
        };
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut kinds = vec![GateKind::Input; n];
        for (old, &new) in perm.iter().enumerate() {
            kinds[new] = topo.kinds[old];
        }
        let edges: Vec<(usize, usize)> = topo.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let h = StGraph {
            topology: Arc::new(Topology {
                circuit: "g".into(),
                kinds,
                edge_line: edges.iter().map(|e| e.0).collect(),
                edges,
            }),
            ..g.clone()
        };
        let cfg = ModelConfig { d: 8, heads: 2, time_dim: 3, m, s, variant: Variant::ALL[variant], ..Default::default() };
        let model = Model::new(cfg, seed).unwrap();
        let (a, b) = (model.predict(&g).unwrap(), model.predict(&h).unwrap());
        for f in 0..s {
            for old in 0..n {
                for c in 0..q {
                    let x = a[(f * n + old) * q + c];
                    let y = b[(f * n + perm[old]) * q + c];
                    prop_assert!(x > 0.0 && x < 1.0);
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn oracle_greedy_never_increases_and_full_budget_matches_ppo(seed in any::<u64>(), dffs in 2usize..6) {
        let c = small_circuit(3, dffs, 20, seed);
        let oracle = SimulatorOracle { n_patterns: 128, n_cycles: 8, seed, ..Default::default() };
        let cfg = TpiConfig { budget: 1.0, random_seeds: vec![], ..Default::default() };
        let r = greedy_select(&c, &oracle, &cfg).unwrap();
        for w in r.sensitive_counts.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let ppo = oracle.curves(&c, &ObservationSet::pos_and_ppos()).unwrap();
        let floor = cycle_sensitive_set(&ppo, &cfg).unwrap().len();
        prop_assert!(*r.sensitive_counts.last().unwrap() >= floor);
        // Observing every flip-flop reaches the full-observation count.
        let all = TpiConfig { budget: 1.0, random_seeds: vec![seed], ..Default::default() };
        let r_all = greedy_select(&c, &oracle, &all).unwrap();
        prop_assert_eq!(r_all.random[0].sensitive, floor);
    }
}

// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::netlist::parse_bench;
use crate::stgraph::{build_topology, FeatureMode, Topology};

/// a -> g1 = NAND(a, q) -> g2 = NOT(g1) -> q = DFF(g2).
fn toy_topology() -> Topology {
    let c = parse_bench("toy", "INPUT(a)\nOUTPUT(g2)\nq = DFF(g2)\ng1 = NAND(a, q)\ng2 = NOT(g1)\n").unwrap();
    build_topology(&c)
}

fn random_sample(topo: Topology, m: usize, s: usize, p: usize, q: usize, seed: u64) -> StGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, ne) = (topo.n_nodes(), topo.n_edges());
    let mode = if p == 5 { FeatureMode::Tm } else { FeatureMode::Fip };
    StGraph {
        mode,
        m,
        s,
        p,
        q,
        window_start: 0,
        e: (0..m * ne * p).map(|_| rng.gen::<f64>()).collect(),
        y: (0..s * n * q).map(|_| rng.gen::<f64>()).collect(),
        topology: Arc::new(topo),
    }
}

fn small_config(variant: Variant, m: usize, s: usize) -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        time_dim: 3,
        m,
        s,
        variant,
        ..Default::default()
    }
}

#[test]
fn output_shape_and_range() {
    let c = parse_bench("c3", "INPUT(a)\nOUTPUT(y)\nx = NOT(a)\ny = BUFF(x)\n").unwrap();
    let g = random_sample(build_topology(&c), 5, 5, 2, 2, 1);
    for v in Variant::ALL {
        let model = Model::new(small_config(v, 5, 5), 3).unwrap();
        let y = model.predict(&g).unwrap();
        assert_eq!(y.len(), 5 * 3 * 2);
        assert!(y.iter().all(|&x| x > 0.0 && x < 1.0), "{v:?}");
    }
}

#[test]
fn zero_output_projection_gives_half() {
    let g = random_sample(toy_topology(), 3, 2, 2, 2, 2);
    let mut model = Model::new(small_config(Variant::Full, 3, 2), 5).unwrap();
    for x in &mut model.params.get_mut("decoder.out").unwrap().data {
        *x = 0.0;
    }
    assert!(model.predict(&g).unwrap().iter().all(|&v| v == 0.5));
}

#[test]
fn forward_is_deterministic() {
    let g = random_sample(toy_topology(), 3, 2, 2, 2, 3);
    let a = Model::new(small_config(Variant::Full, 3, 2), 9).unwrap();
    let b = Model::new(small_config(Variant::Full, 3, 2), 9).unwrap();
    assert_eq!(a.predict(&g).unwrap(), b.predict(&g).unwrap());
}

#[test]
fn embedding_of_isolated_node() {
    let topo = toy_topology();
    let mut model = Model::new(small_config(Variant::Full, 3, 2), 1).unwrap();
    let mut tape = Tape::new();
    let e = model.embed(&model.params, &topo, &mut tape).unwrap();
    let w_self = model.params.get("embed.self").unwrap().clone();
    // Node 0 is the primary input: no in-edges.
    let row = tape.value(e).row(0).to_vec();
    assert_eq!(row, w_self.row(GateKind::Input.index()).to_vec());
    // With the neighbor projection zeroed every row is the own-kind row.
    for x in &mut model.params.get_mut("embed.neighbors").unwrap().data {
        *x = 0.0;
    }
    let mut tape = Tape::new();
    let e = model.embed(&model.params, &topo, &mut tape).unwrap();
    for (i, k) in topo.kinds.iter().enumerate() {
        assert_eq!(tape.value(e).row(i), w_self.row(k.index()));
    }
}

#[test]
fn gates_and_attention_are_well_formed() {
    let topo = toy_topology();
    let g = random_sample(topo.clone(), 3, 2, 2, 2, 4);
    let model = Model::new(small_config(Variant::Full, 3, 2), 2).unwrap();
    let mut tape = Tape::new();
    let f = model.forward_with(&model.params, &g, &mut tape).unwrap();
    assert_eq!(f.gates.len(), 3 * 2);
    for &gv in &f.gates {
        assert!(tape.value(gv).data.iter().all(|&x| x > 0.0 && x < 1.0));
    }
    assert_eq!(f.attention.len(), 3 * 2);
    for &av in &f.attention {
        let a = tape.value(av);
        for h in 0..2 {
            let mut per_dst = vec![0.0; topo.n_nodes()];
            for (k, &(_, dst)) in topo.edges.iter().enumerate() {
                per_dst[dst] += a.get(k, h);
            }
            for (node, total) in per_dst.iter().enumerate() {
                let indeg = topo.edges.iter().filter(|e| e.1 == node).count();
                if indeg > 0 {
                    assert!((total - 1.0).abs() < 1e-12);
                }
                if indeg == 1 {
                    let k = topo.edges.iter().position(|e| e.1 == node).unwrap();
                    assert_eq!(a.get(k, h), 1.0);
                }
            }
        }
    }
}

#[test]
fn only_spatial_fuses_spatial_branch() {
    let g = random_sample(toy_topology(), 3, 2, 2, 2, 5);
    let model = Model::new(small_config(Variant::OnlySpatial, 3, 2), 2).unwrap();
    assert!(model.params.index("temporal.0.self").is_none());
    assert!(model.params.index("spatial.0.self").is_some());
    let model = Model::new(small_config(Variant::NoTimeEncoding, 3, 2), 2).unwrap();
    assert!(model.params.index("time.table").is_none());
    model.predict(&g).unwrap();
}

/// Relabels nodes by `perm` (old id -> new id), keeping edge order.
fn permute(g: &StGraph, perm: &[usize]) -> StGraph {
    let topo = &g.topology;
    let n = topo.n_nodes();
    let mut kinds = vec![GateKind::Input; n];
    for (old, &new) in perm.iter().enumerate() {
        kinds[new] = topo.kinds[old];
    }
    let edges: Vec<(usize, usize)> = topo.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
    let mut y = vec![0.0; g.y.len()];
    for f in 0..g.s {
        for old in 0..n {
            for c in 0..g.q {
                y[(f * n + perm[old]) * g.q + c] = g.y[(f * n + old) * g.q + c];
            }
        }
    }
    StGraph {
        topology: Arc::new(Topology {
            circuit: topo.circuit.clone(),
            kinds,
            edge_line: edges.iter().map(|e| e.0).collect(),
            edges,
        }),
        y,
        ..g.clone()
    }
}

#[test]
fn relabeling_permutes_predictions() {
    let g = random_sample(toy_topology(), 3, 2, 2, 2, 6);
    let perm = [2, 0, 3, 1];
    let h = permute(&g, &perm);
    for v in Variant::ALL {
        let model = Model::new(small_config(v, 3, 2), 8).unwrap();
        let (a, b) = (model.predict(&g).unwrap(), model.predict(&h).unwrap());
        let n = 4;
        for f in 0..2 {
            for old in 0..n {
                for c in 0..2 {
                    let x = a[(f * n + old) * 2 + c];
                    let y = b[(f * n + perm[old]) * 2 + c];
                    assert!((x - y).abs() < 1e-12, "{v:?}");
                }
            }
        }
    }
}

#[test]
fn metrics_examples() {
    let m = metrics(&[1.0, 0.0], &[0.5, 0.5], &[true, true]).unwrap();
    assert_eq!((m.mse, m.rmse, m.mae), (0.25, 0.5, 0.5));
    let z = metrics(&[0.3, 0.7], &[0.3, 0.7], &[true, true]).unwrap();
    assert_eq!((z.mse, z.rmse, z.mae), (0.0, 0.0, 0.0));
    assert!(metrics(&[0.0], &[0.0, 1.0], &[true]).is_err());
}

#[test]
fn every_variant_passes_gradient_check() {
    let g = random_sample(toy_topology(), 3, 2, 2, 2, 7);
    for v in Variant::ALL {
        let model = Model::new(small_config(v, 3, 2), 10).unwrap();
        let r = grad_check(
            &model.params,
            1e-5,
            1,
            |s| {
                let mut t = Tape::new();
                let l = model.loss_with(s, &g, &mut t)?;
                Ok(t.value(l).item())
            },
            |s| {
                let mut t = Tape::new();
                let l = model.loss_with(s, &g, &mut t)?;
                t.backward(l, s)
            },
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{v:?}: {r:?}");
    }
}

#[test]
fn checkpoint_roundtrip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::new(small_config(Variant::Full, 3, 2), 4).unwrap();
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back, model);
    let other = small_config(Variant::OnlySpatial, 3, 2);
    assert!(Model::from_params(other, model.params.clone()).is_err());
    let g = random_sample(toy_topology(), 5, 2, 2, 2, 1);
    assert!(matches!(model.predict(&g), Err(Error::ConfigMismatch(_))));
}

// SPDX-License-Identifier: Apache-2.0

//! JSON-Lines sample format.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::{FeatureMode, StGraph, Topology};
use crate::error::{Error, Result};
use crate::netlist::GateKind;
use crate::provenance::{read_text, write_atomic};

fn nested(data: &[f64], outer: usize, mid: usize, inner: usize) -> Value {
    Value::Array(
        (0..outer)
            .map(|a| {
                Value::Array(
                    (0..mid)
                        .map(|b| {
                            let base = (a * mid + b) * inner;
                            Value::Array(data[base..base + inner].iter().map(|&v| json!(v)).collect())
                        })
                        .collect(),
                )
            })
            .collect(),
    )
}

pub fn sample_to_json(g: &StGraph) -> Value {
    let topo = &g.topology;
    let nodes: Vec<Value> = topo
        .kinds
        .iter()
        .enumerate()
        .map(|(i, k)| json!({"id": i, "kind": k.index()}))
        .collect();
    let edges: Vec<Value> = topo.edges.iter().map(|&(s, d)| json!([s, d])).collect();
    let mut m = Map::new();
    m.insert("circuit".into(), json!(topo.circuit));
    m.insert("mode".into(), json!(g.mode.as_str()));
    m.insert("m".into(), json!(g.m));
    m.insert("s".into(), json!(g.s));
    m.insert("p".into(), json!(g.p));
    m.insert("q".into(), json!(g.q));
    m.insert("window_start".into(), json!(g.window_start));
    m.insert("nodes".into(), Value::Array(nodes));
    m.insert("edges".into(), Value::Array(edges));
    m.insert("E".into(), nested(&g.e, g.m, topo.n_edges(), g.p));
    m.insert("Y".into(), nested(&g.y, g.s, topo.n_nodes(), g.q));
    Value::Object(m)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::schema(key, "missing field"))
}

fn uint(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))
}

fn read_cube(v: &Value, name: &str, dims: [usize; 3]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dims.iter().product());
    let a = array(v, name)?;
    if a.len() != dims[0] {
        return Err(Error::schema(name, format!("expected {} frames, found {}", dims[0], a.len())));
    }
    for (i, row) in a.iter().enumerate() {
        let pi = format!("{name}[{i}]");
        let b = array(row, &pi)?;
        if b.len() != dims[1] {
            return Err(Error::schema(&pi, format!("expected {} rows, found {}", dims[1], b.len())));
        }
        for (j, cell) in b.iter().enumerate() {
            let pj = format!("{pi}[{j}]");
            let c = array(cell, &pj)?;
            if c.len() != dims[2] {
                return Err(Error::schema(&pj, format!("expected {} channels, found {}", dims[2], c.len())));
            }
            for (k, x) in c.iter().enumerate() {
                let x = x
                    .as_f64()
                    .ok_or_else(|| Error::schema(format!("{pj}[{k}]"), "expected a number"))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::schema(format!("{pj}[{k}]"), format!("value {x} outside [0,1]")));
                }
                out.push(x);
            }
        }
    }
    Ok(out)
}

fn read_topology(obj: &Map<String, Value>, circuit: &str) -> Result<Topology> {
    let nodes = array(field(obj, "nodes")?, "nodes")?;
    let mut kinds = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let path = format!("nodes[{i}]");
        let n = node
            .as_object()
            .ok_or_else(|| Error::schema(&path, "expected an object"))?;
        let id = uint(n.get("id").ok_or_else(|| Error::schema(format!("{path}.id"), "missing field"))?, &format!("{path}.id"))?;
        if id != i {
            return Err(Error::schema(format!("{path}.id"), format!("node ids must be 0..n in order, found {id}")));
        }
        let kidx = uint(
            n.get("kind").ok_or_else(|| Error::schema(format!("{path}.kind"), "missing field"))?,
            &format!("{path}.kind"),
        )?;
        let kind = GateKind::from_index(kidx)
            .ok_or_else(|| Error::schema(format!("{path}.kind"), format!("kind index {kidx} out of range")))?;
        // An explicit one-hot row, when present, must agree with `kind`.
        if let Some(h) = n.get("h") {
            let row = array(h, &format!("{path}.h"))?;
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| v.as_f64() == Some(1.0))
                .map(|(j, _)| j)
                .collect();
            let zeros = row.iter().filter(|v| v.as_f64() == Some(0.0)).count();
            if row.len() != GateKind::COUNT || ones.len() != 1 || zeros != GateKind::COUNT - 1 || ones[0] != kidx {
                return Err(Error::schema(
                    format!("{path}.h"),
                    format!("node {i} one-hot row must have exactly one 1 at index {kidx}"),
                ));
            }
        }
        kinds.push(kind);
    }
    let raw_edges = array(field(obj, "edges")?, "edges")?;
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (k, e) in raw_edges.iter().enumerate() {
        let path = format!("edges[{k}]");
        let pair = array(e, &path)?;
        if pair.len() != 2 {
            return Err(Error::schema(&path, "expected [src, dst]"));
        }
        edges.push((uint(&pair[0], &path)?, uint(&pair[1], &path)?));
    }
    Ok(Topology {
        circuit: circuit.to_string(),
        kinds,
        edge_line: edges.iter().map(|e| e.0).collect(),
        edges,
    })
}

/// Parses and validates one sample. `shared` lets consecutive samples of a
/// circuit reuse one topology allocation.
fn parse_sample(v: &Value, shared: Option<&Arc<Topology>>) -> Result<StGraph> {
    let obj = v.as_object().ok_or_else(|| Error::schema("$", "expected an object"))?;
    let circuit = field(obj, "circuit")?
        .as_str()
        .ok_or_else(|| Error::schema("circuit", "expected a string"))?;
    let mode = match field(obj, "mode")?.as_str() {
        Some("TM") => FeatureMode::Tm,
        Some("FIP") => FeatureMode::Fip,
        _ => return Err(Error::schema("mode", "expected \"TM\" or \"FIP\"")),
    };
    let m = uint(field(obj, "m")?, "m")?;
    let s = uint(field(obj, "s")?, "s")?;
    let p = uint(field(obj, "p")?, "p")?;
    let q = uint(field(obj, "q")?, "q")?;
    let window_start = uint(field(obj, "window_start")?, "window_start")?;
    if p != mode.channels() {
        return Err(Error::schema(
            "p",
            format!("mode {} requires p = {}, found {p}", mode.as_str(), mode.channels()),
        ));
    }
    if m == 0 || s == 0 || q == 0 {
        return Err(Error::schema("m", "m, s and q must be positive"));
    }
    let topo = read_topology(obj, circuit)?;
    let topology = match shared {
        Some(t) if **t == topo => Arc::clone(t),
        _ => Arc::new(topo),
    };
    let e = read_cube(field(obj, "E")?, "E", [m, topology.n_edges(), p])?;
    let y = read_cube(field(obj, "Y")?, "Y", [s, topology.n_nodes(), q])?;
    let g = StGraph {
        mode,
        m,
        s,
        p,
        q,
        window_start,
        topology,
        e,
        y,
    };
    g.validate()?;
    Ok(g)
}

pub fn sample_from_json(v: &Value) -> Result<StGraph> {
    parse_sample(v, None)
}

pub fn write_jsonl(path: &Path, samples: &[StGraph]) -> Result<()> {
    let mut out = String::new();
    for g in samples {
        out.push_str(&serde_json::to_string(&sample_to_json(g))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StGraph>> {
    let text = read_text(path)?;
    let mut out: Vec<StGraph> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::schema(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        let shared = out.last().map(|g| &g.topology);
        let g = parse_sample(&v, shared).map_err(|e| match e {
            Error::Schema { path: p, message } => Error::schema(format!("{}:{}: {p}", path.display(), i + 1), message),
            other => other,
        })?;
        out.push(g);
    }
    Ok(out)
}

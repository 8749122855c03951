// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::{Circuit, GateKind, LineId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Open,
    Close,
    Comma,
    Eq,
}

fn tokenize(text: &str) -> Vec<(Tok<'_>, usize)> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let tok = match c {
                b'(' => Some(Tok::Open),
                b')' => Some(Tok::Close),
                b',' => Some(Tok::Comma),
                b'=' => Some(Tok::Eq),
                _ => None,
            };
            if let Some(t) = tok {
                out.push((t, lineno + 1));
                i += 1;
            } else if c.is_ascii_whitespace() {
                i += 1;
            } else {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'(' | b')' | b',' | b'=')
                {
                    i += 1;
                }
                out.push((Tok::Ident(&line[start..i]), lineno + 1));
            }
        }
    }
    out
}

struct Def {
    kind: GateKind,
    args: Vec<String>,
    line: usize,
}

fn keyword(word: &str) -> Option<(GateKind, bool)> {
    let k = match word.to_ascii_uppercase().as_str() {
        "AND" => GateKind::And,
        "NAND" => GateKind::Nand,
        "OR" => GateKind::Or,
        "NOR" => GateKind::Nor,
        "NOT" | "INV" => GateKind::Not,
        "BUFF" | "BUF" => GateKind::Buff,
        "XOR" => GateKind::Xor,
        "DFF" => GateKind::Dff,
        "XNOR" => return Some((GateKind::Xor, true)),
        _ => return None,
    };
    Some((k, false))
}

/// Parses ISCAS'89 `.bench` text.
///
/// `XNOR` is rewritten as an `XOR` feeding a `NOT`, so the gate alphabet
/// stays at nine categories.
pub fn parse_bench(name: &str, text: &str) -> Result<Circuit> {
    let toks = tokenize(text);
    let mut inputs: Vec<(String, usize)> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    let mut defs: Vec<(String, Def)> = Vec::new();

    let mut i = 0;
    let syntax = |i: usize| {
        let line = toks.get(i).or(toks.last()).map(|t| t.1).unwrap_or(0);
        let text: Vec<String> = toks
            .iter()
            .filter(|t| t.1 == line)
            .map(|t| match t.0 {
                Tok::Ident(s) => s.to_string(),
                Tok::Open => "(".into(),
                Tok::Close => ")".into(),
                Tok::Comma => ",".into(),
                Tok::Eq => "=".into(),
            })
            .collect();
        Error::Syntax {
            text: text.join(" "),
            line,
        }
    };
    while i < toks.len() {
        let (Tok::Ident(head), line) = toks[i] else {
            return Err(syntax(i));
        };
        match toks.get(i + 1).map(|t| &t.0) {
            Some(Tok::Open) => {
                // INPUT(x) / OUTPUT(x)
                let (Some((Tok::Ident(arg), _)), Some((Tok::Close, _))) =
                    (toks.get(i + 2), toks.get(i + 3))
                else {
                    return Err(syntax(i));
                };
                match head.to_ascii_uppercase().as_str() {
                    "INPUT" => inputs.push((arg.to_string(), line)),
                    "OUTPUT" => outputs.push(arg.to_string()),
                    _ => {
                        return Err(Error::UnknownGate {
                            keyword: head.to_string(),
                            line,
                        })
                    }
                }
                i += 4;
            }
            Some(Tok::Eq) => {
                let Some((Tok::Ident(kw), kw_line)) = toks.get(i + 2) else {
                    return Err(syntax(i));
                };
                let Some((kind, negate)) = keyword(kw) else {
                    return Err(Error::UnknownGate {
                        keyword: kw.to_string(),
                        line: *kw_line,
                    });
                };
                if !matches!(toks.get(i + 3), Some((Tok::Open, _))) {
                    return Err(syntax(i));
                }
                let mut j = i + 4;
                let mut args = Vec::new();
                loop {
                    match toks.get(j) {
                        Some((Tok::Ident(a), _)) => {
                            args.push(a.to_string());
                            j += 1;
                            match toks.get(j) {
                                Some((Tok::Comma, _)) => j += 1,
                                Some((Tok::Close, _)) => {
                                    j += 1;
                                    break;
                                }
                                _ => return Err(syntax(i)),
                            }
                        }
                        Some((Tok::Close, _)) if args.is_empty() => {
                            j += 1;
                            break;
                        }
                        _ => return Err(syntax(i)),
                    }
                }
                let arity_ok = match kind {
                    GateKind::Not | GateKind::Buff | GateKind::Dff => args.len() == 1,
                    _ => !args.is_empty(),
                };
                if !arity_ok {
                    return Err(syntax(i));
                }
                if negate {
                    let inner = format!("{head}$xor");
                    defs.push((
                        inner.clone(),
                        Def {
                            kind: GateKind::Xor,
                            args,
                            line,
                        },
                    ));
                    defs.push((
                        head.to_string(),
                        Def {
                            kind: GateKind::Not,
                            args: vec![inner],
                            line,
                        },
                    ));
                } else {
                    defs.push((head.to_string(), Def { kind, args, line }));
                }
                i = j;
            }
            _ => return Err(syntax(i)),
        }
    }

    let mut ids: HashMap<String, LineId> = HashMap::new();
    let mut nodes: Vec<(String, GateKind, Vec<String>)> = Vec::new();
    for (pi, line) in inputs {
        if ids.contains_key(&pi) {
            return Err(Error::DuplicateDriver { name: pi, line });
        }
        ids.insert(pi.clone(), nodes.len());
        nodes.push((pi, GateKind::Input, Vec::new()));
    }
    for (out, def) in defs {
        if ids.contains_key(&out) {
            return Err(Error::DuplicateDriver {
                name: out,
                line: def.line,
            });
        }
        ids.insert(out.clone(), nodes.len());
        nodes.push((out, def.kind, def.args));
    }
    let mut resolved = Vec::with_capacity(nodes.len());
    for (n, kind, args) in nodes {
        let fanin = args
            .iter()
            .map(|a| ids.get(a).copied().ok_or_else(|| Error::UndefinedSignal(a.clone())))
            .collect::<Result<Vec<_>>>()?;
        resolved.push((n, kind, fanin));
    }
    let mut pos = Vec::new();
    for o in outputs {
        let id = *ids.get(&o).ok_or_else(|| Error::UnknownOutput(o.clone()))?;
        if !pos.contains(&id) {
            pos.push(id);
        }
    }
    Circuit::assemble(name.to_string(), resolved, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::S27_BENCH;

    #[test]
    fn single_line_statements() {
        let c = parse_bench("inv", "INPUT(G0) OUTPUT(G1) G1 = NOT(G0)").unwrap();
        assert_eq!(c.primary_inputs.len(), 1);
        assert_eq!(c.primary_outputs.len(), 1);
        assert_eq!(c.gates[1].kind, GateKind::Not);
        assert!(c.dffs.is_empty());
    }

    #[test]
    fn unknown_gate_names_keyword_and_line() {
        let err = parse_bench("bad", "INPUT(G0)\nG1 = FOO(G0)\n").unwrap_err();
        match err {
            Error::UnknownGate { keyword, line } => {
                assert_eq!(keyword, "FOO");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(parse_bench("bad", "G1 = FOO(G0)")
            .unwrap_err()
            .to_string()
            .contains("FOO"));
    }

    #[test]
    fn undefined_and_duplicate_signals() {
        assert!(matches!(
            parse_bench("u", "OUTPUT(b)\nb = NOT(a)\n").unwrap_err(),
            Error::UndefinedSignal(s) if s == "a"
        ));
        assert!(matches!(
            parse_bench("d", "INPUT(a)\nb = NOT(a)\nb = BUFF(a)\n").unwrap_err(),
            Error::DuplicateDriver { name, line: 3 } if name == "b"
        ));
        assert!(matches!(
            parse_bench("o", "INPUT(a)\nOUTPUT(z)\n").unwrap_err(),
            Error::UnknownOutput(_)
        ));
    }

    #[test]
    fn keywords_are_case_insensitive_names_are_not() {
        let c = parse_bench("k", "input(a)\ninput(A)\noutput(y)\ny = nand(a, A)\n").unwrap();
        assert_eq!(c.primary_inputs.len(), 2);
        assert_eq!(c.gates[2].kind, GateKind::Nand);
    }

    #[test]
    fn xnor_becomes_xor_then_not() {
        let c = parse_bench("x", "INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = XNOR(a, b)\n").unwrap();
        let y = c.line_by_name("y").unwrap();
        assert_eq!(c.gates[y].kind, GateKind::Not);
        let inner = c.gates[y].fanin[0];
        assert_eq!(c.gates[inner].kind, GateKind::Xor);
        assert_eq!(c.stats().gates, 2);
    }

    #[test]
    fn bench_round_trip_keeps_structure() {
        let c = parse_bench("s27", S27_BENCH).unwrap();
        let again = parse_bench("s27", &c.to_bench()).unwrap();
        assert_eq!(structure(&c), structure(&again));
    }

    pub(crate) fn structure(c: &Circuit) -> Vec<(String, GateKind, Vec<String>)> {
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
}

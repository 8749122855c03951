// SPDX-License-Identifier: Apache-2.0

//! Command-line front end. Every subcommand reads files, writes files under
//! `--out`, and stamps outputs with a provenance record.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::autodiff::{grad_check, Tape};
use crate::error::{Error, Result};
use crate::fault_sim::{build_fip_matrix, with_threads, FaultKind, ObservationSet, PatternSet, SimOptions};
use crate::netlist::{parse_bench, synth, Circuit};
use crate::provenance::{read_bytes, read_text, sha256_hex, write_atomic, Provenance};
use crate::stgcn::{Model, ModelConfig, Variant};
use crate::stgraph::{
    attach_tm_features, build_topology, convert_circuit, convert_unlabeled, ConvertOptions, Dataset, FeatureMode, Split,
    StGraph,
};
use crate::testability::compute_testability;
use crate::tpi::{greedy_select, ModelPredictor, Predictor, SimulatorOracle, TpiConfig};
use crate::trainer::{evaluate, model_tag, run_ablation, train_dataset, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "fipgraph", version, about = "Fault impact probability analysis and prediction for sequential circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Random seed for patterns, initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    /// TOML file with default values for any flag (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct SimArgs {
    /// Random patterns per fault.
    #[arg(long)]
    patterns: Option<usize>,
    /// Clock cycles to simulate.
    #[arg(long)]
    cycles: Option<usize>,
    /// Observation points: `po` or `po+ppo`.
    #[arg(long)]
    observe: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Model variant.
    #[arg(long)]
    variant: Option<String>,
    /// Hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    spatial_layers: Option<usize>,
    #[arg(long)]
    temporal_layers: Option<usize>,
    #[arg(long)]
    time_dim: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Re-split the dataset's circuits: `uniform` or `sparse`.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a netlist and print its statistics as JSON.
    #[command(alias = "stats")]
    Parse {
        circuit: String,
        #[command(flatten)]
        common: Common,
    },
    /// Emit a seeded synthetic netlist with a named benchmark's interface.
    Synth {
        profile: String,
        #[command(flatten)]
        common: Common,
    },
    /// Fault-simulate every line and write the FIP matrix.
    Simulate {
        circuit: String,
        /// Fault kinds, comma separated (sa0,sa1,str,stf).
        #[arg(long)]
        kinds: Option<String>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-frame SCOAP/COP metrics.
    Testability {
        circuit: String,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Convert circuits into a windowed graph dataset.
    Convert {
        circuits: Vec<String>,
        /// Edge features: `tm` or `fip`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        in_cycles: Option<usize>,
        #[arg(long)]
        out_cycles: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        /// Comma-separated training circuits (overrides --split).
        #[arg(long)]
        train: Option<String>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset's training circuits.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Per-circuit RMSE/MAE of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate all model variants.
    Ablation {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated seeds (medians are reported).
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Predict future FIP for a circuit with a trained model.
    Predict {
        circuit: String,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Greedy observation-point selection over flip-flops.
    Tpi {
        circuit: String,
        /// Fraction of flip-flops to observe.
        #[arg(long)]
        budget: Option<f64>,
        /// Trained testability-feature model; the simulator is used otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Early-cycle FIP below this marks a fault as cycle-sensitive
        #[arg(long)]
        theta_lo: Option<f64>,
        /// Late-cycle FIP at or above this marks a fault as cycle-sensitive
        #[arg(long)]
        theta_hi: Option<f64>,
        /// Number of leading cycles treated as early
        #[arg(long)]
        early: Option<usize>,
        /// Number of random-baseline seeds.
        #[arg(long)]
        random_runs: Option<u64>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of model gradients on a toy graph.
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Time each pipeline stage per circuit.
    Bench {
        circuits: Vec<String>,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
}

/// Flag values merged over an optional TOML file; records what was used.
struct Settings {
    file: toml::Table,
    effective: Map<String, Value>,
}

impl Settings {
    fn load(common: &Common) -> Result<Settings> {
        let file = match &common.config {
            None => toml::Table::new(),
            Some(p) => read_text(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::schema(p.display().to_string(), e.to_string()))?,
        };
        Ok(Settings {
            file,
            effective: Map::new(),
        })
    }

    fn pick<T: Serialize + DeserializeOwned>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .clone()
                    .try_into::<T>()
                    .map_err(|e| Error::schema(format!("config.{key}"), e.to_string()))?,
                None => default,
            },
        };
        self.effective.insert(key.to_string(), serde_json::to_value(&v)?);
        Ok(v)
    }

    /// Like `pick`, but kept out of the provenance record.
    fn pick_quiet<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self
                .file
                .get(key)
                .map(|raw| raw.clone().try_into::<T>().map_err(|e| Error::schema(format!("config.{key}"), e.to_string())))
                .transpose(),
        }
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(command, Value::Object(self.effective.clone()))
    }
}

struct Run {
    settings: Settings,
    out: PathBuf,
    threads: Option<usize>,
    inputs: Vec<(String, String)>,
}

impl Run {
    fn new(common: &Common) -> Result<Run> {
        let settings = Settings::load(common)?;
        let out = settings
            .pick_quiet::<PathBuf>("out", common.out.clone())?
            .unwrap_or_else(|| PathBuf::from("out"));
        let threads = settings.pick_quiet::<usize>("threads", common.threads)?;
        Ok(Run {
            settings,
            out,
            threads,
            inputs: Vec::new(),
        })
    }

    fn seed(&mut self, common: &Common) -> Result<u64> {
        self.settings.pick("seed", common.seed, 1)
    }

    fn note_input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.push((label.to_string(), sha256_hex(bytes)));
    }

    fn provenance(&self, command: &str) -> Provenance {
        let mut p = self.settings.provenance(command);
        for (label, digest) in &self.inputs {
            p.inputs.push(crate::provenance::InputDigest {
                path: label.clone(),
                sha256: digest.clone(),
            });
        }
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_csv(&self, name: &str, command: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let text = self.provenance(command).csv_comment() + body;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    fn write_json(&self, name: &str, command: &str, mut body: Value) -> Result<PathBuf> {
        let path = self.path(name);
        if let Value::Object(m) = &mut body {
            m.insert("provenance".into(), self.provenance(command).to_value());
        }
        let text = serde_json::to_string_pretty(&body)? + "\n";
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Reads a `.bench` file, the built-in `builtin:s27`, or generates
    /// `synth:NAME[@SEED]`.
    fn circuit(&mut self, spec: &str) -> Result<Circuit> {
        if spec == "builtin:s27" {
            let c = crate::netlist::s27();
            self.note_input(spec, c.to_bench().as_bytes());
            return Ok(c);
        }
        if let Some(rest) = spec.strip_prefix("synth:") {
            let (name, seed) = match rest.split_once('@') {
                Some((n, s)) => (n, s.parse::<u64>().map_err(|_| Error::invalid(format!("bad seed in `{spec}`")))?),
                None => (rest, 1),
            };
            let profile = synth::profile(name).ok_or_else(|| Error::invalid(format!("unknown profile `{name}`")))?;
            let text = synth::generate_bench(&profile, seed);
            self.note_input(spec, text.as_bytes());
            return parse_bench(name, &text);
        }
        let path = Path::new(spec);
        let bytes = read_bytes(path)?;
        self.note_input(spec, &bytes);
        let text = String::from_utf8(bytes).map_err(|_| Error::invalid(format!("{spec} is not UTF-8")))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("circuit");
        let c = parse_bench(name, &text)?;
        for w in c.warnings() {
            eprintln!("warning: {spec}: {w}");
        }
        Ok(c)
    }

    fn observe(&mut self, sim: &SimArgs) -> Result<ObservationSet> {
        let s: String = self.settings.pick("observe", sim.observe.clone(), "po".to_string())?;
        parse_observe(&s)
    }
}

fn parse_observe(s: &str) -> Result<ObservationSet> {
    match s {
        "po" => Ok(ObservationSet::pos()),
        "po+ppo" => Ok(ObservationSet::pos_and_ppos()),
        _ => Err(Error::invalid(format!("unknown observation set `{s}` (po|po+ppo)"))),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| Error::invalid(format!("bad {what} `{x}`"))))
        .collect()
}

fn model_config(run: &mut Run, args: &ModelArgs, base: ModelConfig) -> Result<ModelConfig> {
    let st = &mut run.settings;
    let variant: String = st.pick("variant", args.variant.clone(), base.variant.as_str().to_string())?;
    Ok(ModelConfig {
        d: st.pick("hidden", args.hidden, base.d)?,
        heads: st.pick("heads", args.heads, base.heads)?,
        spatial_layers: st.pick("spatial_layers", args.spatial_layers, base.spatial_layers)?,
        temporal_layers: st.pick("temporal_layers", args.temporal_layers, base.temporal_layers)?,
        time_dim: st.pick("time_dim", args.time_dim, base.time_dim)?,
        variant: variant.parse()?,
        ..base
    })
}

fn train_config(run: &mut Run, common: &Common, args: &TrainArgs, model: ModelConfig, ds: &Dataset) -> Result<TrainConfig> {
    let seed = run.seed(common)?;
    let st = &mut run.settings;
    let split: String = st.pick("split", args.split.clone(), ds.manifest.split.as_str().to_string())?;
    Ok(TrainConfig {
        epochs: st.pick("epochs", args.epochs, 200)?,
        lr: st.pick("lr", args.lr, 0.05)?,
        seed,
        split: split.parse()?,
        model,
    })
}

fn load_dataset(run: &mut Run, path: &Path, split: Option<Split>) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    run.note_input(&path.display().to_string(), &bytes);
    let mut ds = Dataset::load(path)?;
    if let Some(s) = split {
        if s != ds.manifest.split {
            ds.resplit(s)?;
        }
    }
    Ok(ds)
}

fn dataset_model_base(ds: &Dataset) -> ModelConfig {
    ModelConfig {
        m: ds.manifest.m,
        s: ds.manifest.s,
        p: ds.manifest.p,
        q: ds.manifest.q,
        ..ModelConfig::default()
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn cmd_parse(circuit: &str, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let c = run.circuit(circuit)?;
    let s = c.stats();
    let mut v = json!({
        "circuit": c.name,
        "gates": s.gates,
        "dffs": s.dffs,
        "pis": s.pis,
        "pos": s.pos,
        "lines": s.lines,
        "warnings": c.warnings(),
    });
    v["provenance"] = run.provenance("parse").to_value();
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn cmd_synth(profile: &str, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let seed = run.seed(common)?;
    let p = synth::profile(profile).ok_or_else(|| Error::invalid(format!("unknown profile `{profile}`")))?;
    let text = synth::generate_bench(&p, seed);
    let path = run.path(&format!("{profile}.bench"));
    write_atomic(&path, text.as_bytes())?;
    print_written(&[path]);
    Ok(())
}

fn cmd_simulate(circuit: &str, kinds: Option<String>, sim: &SimArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let c = run.circuit(circuit)?;
    let seed = run.seed(common)?;
    let n = run.settings.pick("patterns", sim.patterns, 1000usize)?;
    let t = run.settings.pick("cycles", sim.cycles, 20usize)?;
    let observe = run.observe(sim)?;
    let kinds: String = run.settings.pick("kinds", kinds, "sa0,sa1".to_string())?;
    let kinds: Vec<FaultKind> = parse_list(&kinds, "fault kind")?;
    let ps = PatternSet::random(seed, n, t, c.primary_inputs.len())?;
    let opts = SimOptions {
        threads: run.threads,
        ..Default::default()
    };
    let m = build_fip_matrix(&c, &kinds, &ps, &observe, &opts)?;
    let csv = run.write_csv(&format!("{}.fip.csv", c.name), "simulate", &m.to_csv())?;
    let json = run.write_json(&format!("{}.fip.json", c.name), "simulate", serde_json::to_value(&m)?)?;
    print_written(&[csv, json]);
    Ok(())
}

fn cmd_testability(circuit: &str, sim: &SimArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let c = run.circuit(circuit)?;
    let t = run.settings.pick("cycles", sim.cycles, 20usize)?;
    let observe = run.observe(sim)?.resolve(&c)?;
    let frames = compute_testability(&c, t, &observe)?;
    let csv = run.write_csv(&format!("{}.testability.csv", c.name), "testability", &frames.to_csv(&c))?;
    print_written(&[csv]);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_convert(
    circuits: &[String],
    mode: Option<String>,
    in_cycles: Option<usize>,
    out_cycles: Option<usize>,
    split: Option<String>,
    train: Option<String>,
    sim: &SimArgs,
    common: &Common,
) -> Result<()> {
    let mut run = Run::new(common)?;
    if circuits.is_empty() {
        return Err(Error::invalid("convert needs at least one circuit"));
    }
    let cs: Vec<Circuit> = circuits.iter().map(|s| run.circuit(s)).collect::<Result<_>>()?;
    let seed = run.seed(common)?;
    let mode: String = run.settings.pick("mode", mode, "fip".to_string())?;
    let opts = ConvertOptions {
        mode: mode.parse()?,
        m: run.settings.pick("in_cycles", in_cycles, 5usize)?,
        s: run.settings.pick("out_cycles", out_cycles, 5usize)?,
        n_patterns: run.settings.pick("patterns", sim.patterns, 1000usize)?,
        n_cycles: run.settings.pick("cycles", sim.cycles, 20usize)?,
        seed,
        observe: run.observe(sim)?,
        channels: vec![FaultKind::Sa0, FaultKind::Sa1],
        sim: SimOptions {
            threads: run.threads,
            ..Default::default()
        },
    };
    let split: String = run.settings.pick("split", split, "uniform".to_string())?;
    let train: Option<String> = run.settings.pick("train", train.map(Some), None)?;
    let names: Option<Vec<String>> = train.map(|t| parse_list(&t, "circuit")).transpose()?;
    let refs: Option<Vec<&str>> = names.as_ref().map(|v| v.iter().map(String::as_str).collect());
    let prov = run.provenance("convert");
    if cs.len() < 2 {
        return Err(Error::invalid("convert needs at least two circuits to form a train/test split"));
    }
    let ds = Dataset::build_with(&run.out, &cs, &opts, split.parse()?, refs.as_deref(), prov)?;
    println!("{}", run.path("manifest.json").display());
    eprintln!("{} samples from {} circuits", ds.samples.len(), ds.manifest.circuits.len());
    Ok(())
}

fn cmd_train(dataset: &Path, targs: &TrainArgs, margs: &ModelArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let split = targs.split.as_deref().map(str::parse::<Split>).transpose()?;
    let ds = load_dataset(&mut run, dataset, split)?;
    let model = model_config(&mut run, margs, dataset_model_base(&ds))?;
    let cfg = train_config(&mut run, common, targs, model, &ds)?;
    let out = with_threads(run.threads, || train_dataset(&ds, &cfg))?;
    let ckpt = run.path("model.ckpt");
    out.model.save(&ckpt)?;
    let loss = run.write_csv("loss.csv", "train", &out.loss_csv())?;
    let summary = run.write_json(
        "train.json",
        "train",
        json!({
            "tag": model_tag(ds.manifest.mode, ds.manifest.s, cfg.split),
            "config": cfg,
            "config_hash": cfg.model.hash(),
            "final_loss": out.losses.last(),
        }),
    )?;
    print_written(&[ckpt, loss, summary]);
    Ok(())
}

fn cmd_eval(dataset: &Path, model: &Path, split: Option<String>, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let split: Option<String> = run.settings.pick("split", split.map(Some), None)?;
    let split = split.as_deref().map(str::parse::<Split>).transpose()?;
    let ds = load_dataset(&mut run, dataset, split)?;
    let bytes = read_bytes(model)?;
    run.note_input(&model.display().to_string(), &bytes);
    let m = Model::load(model)?;
    let table = with_threads(run.threads, || evaluate(&m, &ds))?;
    let csv = run.write_csv("eval.csv", "eval", &table.to_csv())?;
    print_written(&[csv]);
    Ok(())
}

fn cmd_ablation(dataset: &Path, seeds: Option<String>, targs: &TrainArgs, margs: &ModelArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let split = targs.split.as_deref().map(str::parse::<Split>).transpose()?;
    let ds = load_dataset(&mut run, dataset, split)?;
    let model = model_config(&mut run, margs, dataset_model_base(&ds))?;
    let cfg = train_config(&mut run, common, targs, model, &ds)?;
    let seeds: String = run.settings.pick("seeds", seeds, cfg.seed.to_string())?;
    let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
    let table = with_threads(run.threads, || run_ablation(&ds, &cfg, &seeds))?;
    let csv = run.write_csv("ablation.csv", "ablation", &table.to_csv())?;
    let js = run.write_json("ablation.json", "ablation", serde_json::to_value(&table)?)?;
    print_written(&[csv, js]);
    Ok(())
}

fn predictions_csv(c: &Circuit, windows: &[StGraph], model: &Model) -> Result<String> {
    let mut s = String::from("window_start,line,kind,cycle,fip\n");
    let kinds = [FaultKind::Sa0, FaultKind::Sa1];
    for w in windows {
        let y = model.predict(w)?;
        let n = w.n_nodes();
        for t in 0..w.s {
            for (l, line) in c.lines.iter().enumerate() {
                for (k, kind) in kinds.iter().enumerate().take(w.q) {
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        w.window_start,
                        line.name,
                        kind,
                        w.window_start + w.m + t + 1,
                        y[(t * n + l) * w.q + k]
                    ));
                }
            }
        }
    }
    Ok(s)
}

fn cmd_predict(circuit: &str, model: &Path, sim: &SimArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let c = run.circuit(circuit)?;
    let bytes = read_bytes(model)?;
    run.note_input(&model.display().to_string(), &bytes);
    let m = Model::load(model)?;
    let seed = run.seed(common)?;
    let mode = if m.config.p == FeatureMode::Tm.channels() {
        FeatureMode::Tm
    } else {
        FeatureMode::Fip
    };
    let opts = ConvertOptions {
        mode,
        m: m.config.m,
        s: m.config.s,
        n_patterns: run.settings.pick("patterns", sim.patterns, 1000usize)?,
        n_cycles: run.settings.pick("cycles", sim.cycles, m.config.m + m.config.s)?,
        seed,
        observe: run.observe(sim)?,
        sim: SimOptions {
            threads: run.threads,
            ..Default::default()
        },
        ..Default::default()
    };
    let windows = match mode {
        FeatureMode::Tm => convert_unlabeled(&c, &opts)?,
        FeatureMode::Fip => convert_circuit(&c, &opts)?,
    };
    let body = predictions_csv(&c, &windows, &m)?;
    let csv = run.write_csv(&format!("{}.predict.csv", c.name), "predict", &body)?;
    print_written(&[csv]);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_tpi(
    circuit: &str,
    budget: Option<f64>,
    model: Option<PathBuf>,
    theta_lo: Option<f64>,
    theta_hi: Option<f64>,
    early: Option<usize>,
    random_runs: Option<u64>,
    sim: &SimArgs,
    common: &Common,
) -> Result<()> {
    let mut run = Run::new(common)?;
    let c = run.circuit(circuit)?;
    let seed = run.seed(common)?;
    let defaults = TpiConfig::default();
    let runs: u64 = run.settings.pick("random_runs", random_runs, 10)?;
    let cfg = TpiConfig {
        budget: run.settings.pick("budget", budget, defaults.budget)?,
        theta_lo: run.settings.pick("theta_lo", theta_lo, defaults.theta_lo)?,
        theta_hi: run.settings.pick("theta_hi", theta_hi, defaults.theta_hi)?,
        early: run.settings.pick("early", early, defaults.early)?,
        random_seeds: (0..runs).map(|k| seed.wrapping_add(k)).collect(),
        ..defaults
    };
    let predictor: Box<dyn Predictor> = match model {
        Some(p) => {
            let bytes = read_bytes(&p)?;
            run.note_input(&p.display().to_string(), &bytes);
            run.settings.effective.insert("predictor".into(), json!("model"));
            Box::new(ModelPredictor::new(Model::load(&p)?)?)
        }
        None => {
            run.settings.effective.insert("predictor".into(), json!("simulator"));
            Box::new(SimulatorOracle {
                n_patterns: run.settings.pick("patterns", sim.patterns, 1000usize)?,
                n_cycles: run.settings.pick("cycles", sim.cycles, 10usize)?,
                seed,
                ..Default::default()
            })
        }
    };
    let threads = run.threads;
    let report = with_threads(threads, || greedy_select(&c, predictor.as_ref(), &cfg))?;
    let csv = run.write_csv(&format!("{}.tpi.csv", c.name), "tpi", &report.to_csv())?;
    let js = run.write_json(&format!("{}.tpi.json", c.name), "tpi", serde_json::to_value(&report)?)?;
    print_written(&[csv, js]);
    Ok(())
}

/// Four-node toy sample: a primary input, a flip-flop and two gates.
pub fn toy_sample(m: usize, s: usize, p: usize, seed: u64) -> Result<StGraph> {
    use rand::{Rng, SeedableRng};
    let c = parse_bench("toy", "INPUT(a)\nOUTPUT(g2)\nq = DFF(g2)\ng1 = NAND(a, q)\ng2 = NOT(g1)\n")?;
    let topo = std::sync::Arc::new(build_topology(&c));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mode = if p == FeatureMode::Tm.channels() {
        FeatureMode::Tm
    } else {
        FeatureMode::Fip
    };
    let (n, ne, q) = (topo.n_nodes(), topo.n_edges(), 2);
    let g = StGraph {
        mode,
        m,
        s,
        p,
        q,
        window_start: 0,
        e: (0..m * ne * p).map(|_| rng.gen::<f64>()).collect(),
        y: (0..s * n * q).map(|_| rng.gen::<f64>()).collect(),
        topology: topo,
    };
    g.validate()?;
    Ok(g)
}

/// Max relative gradient error of `config` on the toy sample.
pub fn gradcheck_variant(config: &ModelConfig, seed: u64) -> Result<crate::autodiff::GradCheckReport> {
    let g = toy_sample(config.m, config.s, config.p, seed)?;
    let model = Model::new(config.clone(), seed)?;
    grad_check(
        &model.params,
        1e-5,
        seed,
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
}

fn cmd_gradcheck(margs: &ModelArgs, tolerance: Option<f64>, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let seed = run.seed(common)?;
    let tol = run.settings.pick("tolerance", tolerance, 1e-4)?;
    let base = ModelConfig {
        m: 3,
        s: 2,
        ..ModelConfig::default()
    };
    let variants: Vec<Variant> = match margs.variant.as_deref() {
        Some(v) => vec![v.parse()?],
        None => Variant::ALL.to_vec(),
    };
    let mut body = String::from("variant,probes,max_rel_error,pass\n");
    let mut ok = true;
    for v in variants {
        let args = ModelArgs {
            variant: Some(v.as_str().to_string()),
            ..margs.clone()
        };
        let cfg = model_config(&mut run, &args, base.clone())?;
        let r = gradcheck_variant(&cfg, seed)?;
        let pass = r.max_rel_error <= tol;
        ok &= pass;
        body.push_str(&format!("{},{},{:e},{}\n", v.as_str(), r.probes, r.max_rel_error, pass));
    }
    run.settings.effective.remove("variant");
    let csv = run.write_csv("gradcheck.csv", "gradcheck", &body)?;
    print!("{body}");
    print_written(&[csv]);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("gradient check exceeded tolerance {tol}")))
    }
}

/// Stage timings for one circuit: `(stage, seconds)`.
pub fn bench_circuit(c: &Circuit, n_patterns: usize, n_cycles: usize, seed: u64, observe: &ObservationSet, threads: Option<usize>) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    let topo = build_topology(c);
    let t0 = Instant::now();
    let obs = observe.resolve(c)?;
    let frames = compute_testability(c, n_cycles, &obs)?;
    let _tm = attach_tm_features(&topo, &frames, n_cycles)?;
    out.push(("tm_convert", t0.elapsed().as_secs_f64()));
    let t0 = Instant::now();
    let ps = PatternSet::random(seed, n_patterns, n_cycles, c.primary_inputs.len())?;
    let kinds = [FaultKind::Sa0, FaultKind::Sa1];
    let m = build_fip_matrix(
        c,
        &kinds,
        &ps,
        observe,
        &SimOptions {
            threads,
            ..Default::default()
        },
    )?;
    let _fip = crate::stgraph::attach_fip_features(&topo, &m, &kinds)?;
    out.push(("fip_convert", t0.elapsed().as_secs_f64()));
    Ok(out)
}

fn cmd_bench(circuits: &[String], sim: &SimArgs, common: &Common) -> Result<()> {
    let mut run = Run::new(common)?;
    let seed = run.seed(common)?;
    let n = run.settings.pick("patterns", sim.patterns, 1000usize)?;
    let t = run.settings.pick("cycles", sim.cycles, 5usize)?;
    let observe = run.observe(sim)?;
    let mut body = String::from("circuit,gates,stage,seconds\n");
    for spec in circuits {
        let t0 = Instant::now();
        let c = run.circuit(spec)?;
        let parse = t0.elapsed().as_secs_f64();
        let gates = c.stats().gates;
        body.push_str(&format!("{},{gates},parse,{parse:.6}\n", c.name));
        for (stage, secs) in bench_circuit(&c, n, t, seed, &observe, run.threads)? {
            body.push_str(&format!("{},{gates},{stage},{secs:.6}\n", c.name));
        }
    }
    let csv = run.write_csv("bench.csv", "bench", &body)?;
    print!("{body}");
    print_written(&[csv]);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { circuit, common } => cmd_parse(&circuit, &common),
        Command::Synth { profile, common } => cmd_synth(&profile, &common),
        Command::Simulate {
            circuit,
            kinds,
            sim,
            common,
        } => cmd_simulate(&circuit, kinds, &sim, &common),
        Command::Testability { circuit, sim, common } => cmd_testability(&circuit, &sim, &common),
        Command::Convert {
            circuits,
            mode,
            in_cycles,
            out_cycles,
            split,
            train,
            sim,
            common,
        } => cmd_convert(&circuits, mode, in_cycles, out_cycles, split, train, &sim, &common),
        Command::Train {
            dataset,
            train,
            model,
            common,
        } => cmd_train(&dataset, &train, &model, &common),
        Command::Eval {
            dataset,
            model,
            split,
            common,
        } => cmd_eval(&dataset, &model, split, &common),
        Command::Ablation {
            dataset,
            seeds,
            train,
            model,
            common,
        } => cmd_ablation(&dataset, seeds, &train, &model, &common),
        Command::Predict {
            circuit,
            model,
            sim,
            common,
        } => cmd_predict(&circuit, &model, &sim, &common),
        Command::Tpi {
            circuit,
            budget,
            model,
            theta_lo,
            theta_hi,
            early,
            random_runs,
            sim,
            common,
        } => cmd_tpi(&circuit, budget, model, theta_lo, theta_hi, early, random_runs, &sim, &common),
        Command::Gradcheck {
            model,
            tolerance,
            common,
        } => cmd_gradcheck(&model, tolerance, &common),
        Command::Bench { circuits, sim, common } => cmd_bench(&circuits, &sim, &common),
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

//! Command-line entry points.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numerical failures.

pub mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{PpdeError, Result};
use crate::evaluation::{self, MetricsRow, OracleSettings, HEDGE_ERROR_NORM};
use crate::market_models::{self, InitialLaw, Model};
use crate::nets::checkpoint::Checkpoint;
use crate::pricing::{self, HedgeNet, History};
use crate::rng::{derive_seed, stream};
use crate::signatures;
use crate::training::batch::EncodingKind;
use crate::training::{self, spec_of_checkpoint, write_history, Method, TrainSetup};
use config::{Config, Resolved};

#[derive(Debug, Parser)]
#[command(name = "ppde", version, about = "Path-dependent PDE solver with signature/LSTM networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths and dump them with their signature streams.
    Simulate(Common),
    /// Train price (and hedge) networks.
    Train(Common),
    /// Price at time t given a path history.
    Price(PriceArgs),
    /// Score trained networks against Monte Carlo oracles.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Hedge checkpoint; omit for plain Monte Carlo.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV `time_index,asset_index,value` covering `[0, t]`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "n-mc")]
    pub n_mc: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training output directory or price checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Exit code of an error.
pub fn exit_code(err: &PpdeError) -> i32 {
    match err {
        PpdeError::Training(_) | PpdeError::Estimator(_) | PpdeError::Decomposition { .. } => 3,
        _ => 2,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Train(c) => cmd_train(c),
        Command::Price(p) => cmd_price(p),
        Command::Evaluate(e) => cmd_evaluate(e),
    }
}

struct Prepared {
    config: Config,
    resolved: Resolved,
    hash: String,
    out: PathBuf,
}

fn prepare(common: &Common) -> Result<Prepared> {
    let mut config = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(PpdeError::Config("--workers must be at least 1".into()));
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let resolved = config.resolve().map_err(as_config)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("effective_config.toml"), config.to_toml())?;
    let hash = config.hash();
    Ok(Prepared { config, resolved, hash, out: common.out.clone() })
}

fn as_config(e: PpdeError) -> PpdeError {
    match e {
        PpdeError::Param(m) | PpdeError::Shape(m) => PpdeError::Config(m),
        other => other,
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn metadata(p: &Prepared, command: &str, artifacts: &[&str], extra: Value) -> Result<()> {
    let mut meta = json!({
        "command": command,
        "seed": p.config.seed,
        "config_hash": p.hash,
        "artifacts": artifacts,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    write_json(&p.out.join("metadata.json"), &meta)
}

fn provenance(p: &Prepared) -> Value {
    json!({ "config_hash": p.hash, "seed": p.config.seed })
}

pub fn cmd_simulate(c: &Common) -> Result<()> {
    let p = prepare(c)?;
    let Resolved { model, grid, .. } = &p.resolved;
    let batch = p.config.training.as_ref().map(|t| t.batch_size).unwrap_or(200);
    let paths = market_models::simulate(model, grid, batch, p.config.seed, stream::SIMULATE)?;
    paths.write_csv(BufWriter::new(File::create(p.out.join("paths.csv"))?))?;
    let mut artifacts = vec!["effective_config.toml", "paths.csv"];
    let enc = p.config.encoding;
    if enc.kind == EncodingKind::SigStream {
        use std::io::Write;
        let mut w = BufWriter::new(File::create(p.out.join("signatures.csv"))?);
        writeln!(w, "path_id,window_index,coeff_index,value")?;
        for i in 0..batch {
            let s = signatures::stream_of_signatures(paths.path(i), grid, enc.depth, enc.transform)?;
            s.write_csv_rows(i, &mut w)?;
        }
        w.flush()?;
        artifacts.push("signatures.csv");
    }
    artifacts.push("metadata.json");
    metadata(
        &p,
        "simulate",
        &artifacts,
        json!({ "batch": batch, "grid": grid, "model": model, "encoding": enc }),
    )?;
    eprintln!("simulated {batch} paths into {}", p.out.display());
    Ok(())
}

pub fn cmd_train(c: &Common) -> Result<()> {
    let p = prepare(c)?;
    let tc = p.config.training()?.clone();
    let Resolved { model, grid, payoff, spec } = &p.resolved;
    let setup = TrainSetup {
        model,
        grid,
        payoff,
        spec: *spec,
        network: &p.config.network,
        config: &tc,
        seed: p.config.seed,
    };
    let result = training::train(&setup, |r| {
        if let Some(t) = r.test_loss {
            eprintln!("iter {:>6}  train {:.6e}  test {:.6e}  {:.1}s", r.iteration, r.train_loss, t, r.wall_time_s);
        }
    });
    let trained = match result {
        Ok(t) => t,
        Err(e) => {
            fs::write(p.out.join("diagnostics.txt"), format!("{e}\nconfig_hash {}\nseed {}\n", p.hash, p.config.seed))?;
            return Err(e);
        }
    };
    write_history(&trained.history, BufWriter::new(File::create(p.out.join("history.csv"))?))?;
    let meta = provenance(&p);
    trained.price_checkpoint(meta.clone()).save(&p.out.join("price.ckpt"))?;
    let mut artifacts = vec!["effective_config.toml", "history.csv", "price.ckpt"];
    if let Some(ck) = trained.hedge_checkpoint(meta) {
        ck.save(&p.out.join("hedge.ckpt"))?;
        artifacts.push("hedge.ckpt");
    }
    artifacts.push("metadata.json");
    let last = trained.history.last().map(|r| r.train_loss);
    metadata(&p, "train", &artifacts, json!({ "method": tc.method.as_str(), "final_train_loss": last }))?;
    Ok(())
}

/// Model with `β` pinned, as needed to condition on one path.
fn pinned_model(model: &Model, sigma: Option<f64>) -> Result<Model> {
    match (model.fixed_beta(), sigma) {
        (_, Some(s)) => model.with_fixed_beta(&[s]).map_err(as_config),
        (Some(b), None) => model.with_fixed_beta(&b).map_err(as_config),
        (None, None) => Err(PpdeError::Config("model draws sigma at random; set pricing.sigma".into())),
    }
}

fn deterministic_start(model: &Model) -> Option<Vec<f64>> {
    match model {
        Model::BlackScholes(p) => match &p.initial {
            InitialLaw::Fixed { values } => Some(values.clone()),
            InitialLaw::LogNormal { .. } => None,
        },
        Model::Heston(h) => Some(vec![h.s0]),
    }
}

pub fn cmd_price(a: &PriceArgs) -> Result<()> {
    let mut p = prepare(&a.common)?;
    if let Some(t) = a.t {
        p.config.pricing.t = t;
    }
    if let Some(al) = a.alpha {
        p.config.pricing.alpha = al;
    }
    if let Some(n) = a.n_mc {
        p.config.pricing.n_mc = n;
    }
    let pc = p.config.pricing.clone();
    let Resolved { model, grid, payoff, spec } = &p.resolved;
    let model = pinned_model(model, pc.sigma)?;
    let k = grid
        .coarse_index_of_time(pc.t)
        .ok_or_else(|| PpdeError::Config(format!("t = {} is not a coarse time", pc.t)))?;
    let history = match &a.history {
        Some(path) => {
            let file = File::open(path).map_err(|e| PpdeError::Input(format!("{}: {e}", path.display())))?;
            History::read_csv(std::io::BufReader::new(file), &model)?
        }
        None if k == 0 => {
            let x0 = deterministic_start(&model)
                .ok_or_else(|| PpdeError::Config("initial values are random; pass --history".into()))?;
            History::from_x0(&model, &x0)?
        }
        None => return Err(PpdeError::Config("--history is required when t > 0".into())),
    };
    let expected = grid.fine_index_of_coarse(k);
    if history.fine_index() != expected {
        return Err(PpdeError::Input(format!(
            "history ends at time_index {}, t = {} is time_index {expected}",
            history.fine_index(),
            pc.t
        )));
    }
    let (est, mode) = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let hedge = HedgeNet::from_checkpoint(&ck, spec)?;
            (pricing::cv_price(&model, grid, payoff, &hedge, &history, pc.n_mc, pc.alpha, p.config.seed)?, "control_variate")
        }
        None => (pricing::mc_price(&model, grid, payoff, &history, pc.n_mc, pc.alpha, p.config.seed)?, "plain"),
    };
    let mut v = serde_json::to_value(est).expect("estimate serializes");
    if let Value::Object(m) = &mut v {
        m.insert("t".into(), json!(pc.t));
        m.insert("mode".into(), json!(mode));
        m.insert("config_hash".into(), json!(p.hash));
    }
    write_json(&p.out.join("estimate.json"), &v)?;
    println!("{}", serde_json::to_string(&v).expect("json serializes"));
    metadata(&p, "price", &["effective_config.toml", "estimate.json", "metadata.json"], json!({ "mode": mode }))?;
    Ok(())
}

struct LoadedNets {
    method: Method,
    price: Checkpoint,
    hedge: Option<HedgeNet>,
}

fn load_nets(path: &Path, r: &Resolved) -> Result<LoadedNets> {
    let (price_path, hedge_path) = if path.is_dir() {
        (path.join("price.ckpt"), path.join("hedge.ckpt"))
    } else {
        (path.to_path_buf(), path.with_file_name("hedge.ckpt"))
    };
    let price = Checkpoint::load(&price_path)?;
    let spec = spec_of_checkpoint(&price)?;
    let diff = spec.mismatches(&r.spec);
    if !diff.is_empty() {
        return Err(PpdeError::Input(format!(
            "checkpoint descriptor disagrees with the configured encoding on: {}",
            diff.join(", ")
        )));
    }
    let method = match price.input.get("method").and_then(|m| m.as_str()) {
        Some("martingale") => Method::Martingale,
        Some("orthogonal") => Method::Orthogonal,
        other => return Err(PpdeError::Checkpoint(format!("unknown training method {other:?}"))),
    };
    let hedge = if hedge_path.exists() {
        Some(HedgeNet::from_checkpoint(&Checkpoint::load(&hedge_path)?, &r.spec)?)
    } else {
        None
    };
    Ok(LoadedNets { method, price, hedge })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let p = prepare(&a.common)?;
    let ec = p.config.evaluation.clone();
    let r = &p.resolved;
    let nets = match (&a.checkpoint, ec.oracle_injection) {
        (_, true) => None,
        (Some(path), false) => Some(load_nets(path, r)?),
        (None, false) => {
            return Err(PpdeError::Config("--checkpoint is required unless evaluation.oracle_injection is set".into()));
        }
    };
    let cache = ec.cache_dir.as_ref().map(PathBuf::from).unwrap_or_else(|| p.out.join("oracle_cache"));
    let sigmas: Vec<Option<f64>> = if !ec.sigmas.is_empty() {
        ec.sigmas.iter().map(|s| Some(*s)).collect()
    } else {
        match r.model.fixed_beta() {
            Some(b) => vec![b.first().copied()],
            None => return Err(PpdeError::Config("parametric model needs evaluation.sigmas".into())),
        }
    };
    let mut rows = Vec::new();
    let mut keys = Vec::new();
    for (idx, sigma) in sigmas.iter().enumerate() {
        let model = pinned_model(&r.model, *sigma)?;
        let paths = evaluation::test_paths(&model, &r.grid, ec.n_test, derive_seed(p.config.seed, &[idx as u64]))?;
        let settings = OracleSettings {
            n_mc: ec.oracle_n_mc,
            rel_bump: (!ec.price_only).then_some(ec.bump),
            seed: derive_seed(p.config.seed, &[stream::ORACLE, idx as u64]),
        };
        eprintln!("oracle for sigma {sigma:?}: {} paths x {} steps", ec.n_test, r.grid.n_coarse());
        let oracle = evaluation::cached_oracle(&cache, &model, &r.grid, &r.payoff, &paths, &settings)?;
        keys.push(oracle.key.clone());
        let row = match &nets {
            None => MetricsRow {
                method: p.config.training.as_ref().map(|t| t.method).unwrap_or(Method::Martingale),
                net_type: r.spec.net_type,
                net_input: evaluation::net_input_label(&r.spec.encoding),
                sigma: *sigma,
                e_integral: evaluation::integral_error_from_values(&r.grid, &oracle.price, &oracle.price)?,
                e_hedging: match &oracle.hedge {
                    Some(h) => Some(evaluation::hedge_error_from_values(&r.grid, h, h)?),
                    None => None,
                },
                rho: None,
            },
            Some(n) => {
                let e_integral = evaluation::integral_error_price(&n.price.network, &r.spec, &paths, &oracle)?;
                let (e_hedging, rho) = match &n.hedge {
                    Some(h) => {
                        let e = if oracle.hedge.is_some() {
                            Some(evaluation::integral_error_hedge(h, &paths, &oracle)?)
                        } else {
                            None
                        };
                        let x0 = ec.x0.clone().unwrap_or_else(|| vec![1.0; model.dim()]);
                        let start = History::from_x0(&model, &x0)?;
                        let rho = evaluation::cv_correlation(
                            &model,
                            &r.grid,
                            &r.payoff,
                            h,
                            &start,
                            ec.n_correlation,
                            p.config.seed,
                        )?;
                        (e, Some(rho))
                    }
                    None => (None, None),
                };
                MetricsRow {
                    method: n.method,
                    net_type: r.spec.net_type,
                    net_input: evaluation::net_input_label(&r.spec.encoding),
                    sigma: *sigma,
                    e_integral,
                    e_hedging,
                    rho,
                }
            }
        };
        eprintln!("{row:?}");
        rows.push(row);
    }
    evaluation::write_metrics(&rows, BufWriter::new(File::create(p.out.join("metrics.csv"))?))?;
    metadata(
        &p,
        "evaluate",
        &["effective_config.toml", "metrics.csv", "metadata.json"],
        json!({ "hedge_error_norm": HEDGE_ERROR_NORM, "oracle_keys": keys, "rows": rows }),
    )?;
    Ok(())
}

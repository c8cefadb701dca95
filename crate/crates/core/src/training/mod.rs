//! Batch construction, losses and the online optimization loop.

pub mod batch;
pub mod loss;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{param, PpdeError, Result};
use crate::market_models::{Model, TimeGrid};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::optim::grad_norm;
use crate::nets::tape::Tape;
use crate::nets::{Architecture, Network, Optimizer, OptimizerConfig};
use crate::payoffs::Payoff;
use crate::rng::{derive_seed, stream};

pub use batch::{build_batch, encode_paths, make_batch, Encoding, EncodingKind, InputSpec, NetType, TrainBatch};
pub use loss::{loss_martingale, loss_orthogonal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Orthogonal,
    Martingale,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Orthogonal => "orthogonal",
            Method::Martingale => "martingale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub net_type: NetType,
    #[serde(default = "default_ffn_hidden")]
    pub ffn_hidden: Vec<usize>,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "default_head_width")]
    pub head_width: usize,
}

fn default_ffn_hidden() -> Vec<usize> {
    vec![100; 4]
}
fn default_lstm_hidden() -> usize {
    128
}
fn default_head_width() -> usize {
    100
}

impl NetworkConfig {
    pub fn new(net_type: NetType) -> Self {
        Self { net_type, ffn_hidden: default_ffn_hidden(), lstm_hidden: default_lstm_hidden(), head_width: default_head_width() }
    }

    pub fn architecture(&self, input: usize, output: usize) -> Architecture {
        match self.net_type {
            NetType::Ffn => Architecture::ffn(input, self.ffn_hidden.clone(), output),
            NetType::Lstm => Architecture::lstm(input, self.lstm_hidden, self.head_width, output),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_test_batch")]
    pub test_batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Optional `(iteration, factor)` pairs; the learning rate is multiplied
    /// by `factor` from that iteration on.
    #[serde(default)]
    pub lr_schedule: Vec<(usize, f64)>,
}

fn default_batch() -> usize {
    200
}
fn default_test_batch() -> usize {
    1000
}
fn default_eval_every() -> usize {
    50
}

impl TrainConfig {
    pub fn new(method: Method, iterations: usize) -> Self {
        Self {
            method,
            iterations,
            batch_size: default_batch(),
            test_batch_size: default_test_batch(),
            eval_every: default_eval_every(),
            optimizer: OptimizerConfig::default(),
            lr_schedule: Vec::new(),
        }
    }

    fn optimizer_at(&self, iteration: usize) -> OptimizerConfig {
        let factor: f64 = self.lr_schedule.iter().filter(|(it, _)| iteration >= *it).map(|(_, f)| f).product();
        match self.optimizer {
            OptimizerConfig::Sgd { lr } => OptimizerConfig::Sgd { lr: lr * factor },
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => OptimizerConfig::Adam { lr: lr * factor, beta1, beta2, eps },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub spec: InputSpec,
    pub price: Network,
    pub hedge: Option<Network>,
    pub history: Vec<LossRecord>,
}

/// Descriptor stored with each checkpoint.
pub fn input_descriptor(spec: &InputSpec, role: &str, method: Method) -> Value {
    json!({ "spec": spec.descriptor(), "role": role, "method": method.as_str() })
}

/// Reads the input spec back from a checkpoint descriptor.
pub fn spec_of_checkpoint(ck: &Checkpoint) -> Result<InputSpec> {
    let spec = ck.input.get("spec").ok_or_else(|| PpdeError::Checkpoint("descriptor has no spec".into()))?;
    InputSpec::from_descriptor(spec)
}

impl TrainedModel {
    pub fn price_checkpoint(&self, meta: Value) -> Checkpoint {
        Checkpoint::new(self.price.clone(), input_descriptor(&self.spec, "price", self.method), meta)
    }

    pub fn hedge_checkpoint(&self, meta: Value) -> Option<Checkpoint> {
        self.hedge
            .as_ref()
            .map(|h| Checkpoint::new(h.clone(), input_descriptor(&self.spec, "hedge", self.method), meta))
    }
}

/// Writes `iteration,train_loss,test_loss,wall_time_s`; untested rows leave
/// `test_loss` empty.
pub fn write_history<W: Write>(records: &[LossRecord], mut out: W) -> Result<()> {
    writeln!(out, "iteration,train_loss,test_loss,wall_time_s")?;
    for r in records {
        let test = r.test_loss.map(|t| format!("{t:?}")).unwrap_or_default();
        writeln!(out, "{},{:?},{},{:.3}", r.iteration, r.train_loss, test, r.wall_time_s)?;
    }
    Ok(())
}

struct Loss {
    value: f64,
    price_grad: Vec<f64>,
    hedge_grad: Vec<f64>,
}

fn loss_and_grads(batch: &TrainBatch, method: Method, price: &Network, hedge: Option<&Network>) -> Result<Loss> {
    let mut tape = Tape::new();
    let lp = price.leaves(&mut tape, true);
    let x = tape.constant(batch.inputs.clone());
    let y = price.forward(&mut tape, &lp, x, batch.steps)?;
    let (l, lh) = match method {
        Method::Orthogonal => (loss::orthogonal_on_tape(&mut tape, batch, y)?, Vec::new()),
        Method::Martingale => {
            let hedge = hedge.expect("martingale training has a hedge network");
            let lh = hedge.leaves(&mut tape, true);
            let z = hedge.forward(&mut tape, &lh, x, batch.steps)?;
            (loss::martingale_on_tape(&mut tape, batch, y, z)?, lh)
        }
    };
    let value = tape.value(l)[[0, 0]];
    let grads = tape.backward(l)?;
    let price_grad = price.collect_grads(&tape, &grads, &lp);
    let hedge_grad = hedge.map(|h| h.collect_grads(&tape, &grads, &lh)).unwrap_or_default();
    Ok(Loss { value, price_grad, hedge_grad })
}

fn test_loss(batch: &TrainBatch, method: Method, price: &Network, hedge: Option<&Network>) -> Result<f64> {
    match method {
        Method::Orthogonal => loss_orthogonal(batch, price),
        Method::Martingale => loss_martingale(batch, price, hedge.expect("hedge network")),
    }
}

fn beta_range(batch: &TrainBatch) -> String {
    if batch.beta.ncols() == 0 {
        return "none".into();
    }
    let lo = batch.beta.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = batch.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!("[{lo}, {hi}]")
}

pub struct TrainSetup<'a> {
    pub model: &'a Model,
    pub grid: &'a TimeGrid,
    pub payoff: &'a Payoff,
    pub spec: InputSpec,
    pub network: &'a NetworkConfig,
    pub config: &'a TrainConfig,
    pub seed: u64,
}

/// Online training: a fresh batch every iteration, a fixed held-out batch
/// for the test loss.
pub fn train(setup: &TrainSetup, mut progress: impl FnMut(&LossRecord)) -> Result<TrainedModel> {
    let TrainSetup { model, grid, payoff, spec, network, config, seed } = *setup;
    if config.batch_size == 0 || config.test_batch_size == 0 {
        return param("batch sizes must be at least 1");
    }
    if spec.net_type != network.net_type {
        return param("input spec and network config disagree on the network type");
    }
    let width = spec.input_width();
    let mut price = Network::init(network.architecture(width, 1), derive_seed(seed, &[1]))?;
    let mut hedge = match config.method {
        Method::Orthogonal => None,
        Method::Martingale => Some(Network::init(network.architecture(width, model.dim()), derive_seed(seed, &[2]))?),
    };
    let mut opt_price = Optimizer::new(config.optimizer_at(0), price.params.len());
    let mut opt_hedge = hedge.as_ref().map(|h| Optimizer::new(config.optimizer_at(0), h.params.len()));
    let test = if config.iterations > 0 {
        Some(make_batch(model, grid, config.test_batch_size, &spec, payoff, seed, stream::TEST, 0)?)
    } else {
        None
    };
    let start = Instant::now();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        for (at, _) in &config.lr_schedule {
            if *at == it && it > 0 {
                opt_price.set_config(config.optimizer_at(it));
                if let Some(o) = opt_hedge.as_mut() {
                    o.set_config(config.optimizer_at(it));
                }
            }
        }
        let batch = make_batch(model, grid, config.batch_size, &spec, payoff, seed, stream::TRAIN, it as u64)?;
        let l = loss_and_grads(&batch, config.method, &price, hedge.as_ref())?;
        let diagnose = |what: &str| {
            PpdeError::Training(format!(
                "{what} at iteration {}: loss {}, beta range {}, gradient norms price {} hedge {}",
                it + 1,
                l.value,
                beta_range(&batch),
                grad_norm(&l.price_grad),
                grad_norm(&l.hedge_grad)
            ))
        };
        if !l.value.is_finite() {
            return Err(diagnose("non-finite loss"));
        }
        opt_price.step(&mut price.params, &l.price_grad).map_err(|_| diagnose("non-finite price gradient"))?;
        if let (Some(h), Some(o)) = (hedge.as_mut(), opt_hedge.as_mut()) {
            o.step(&mut h.params, &l.hedge_grad).map_err(|_| diagnose("non-finite hedge gradient"))?;
        }
        let evaluate = (it + 1) % config.eval_every.max(1) == 0 || it + 1 == config.iterations;
        let test_loss = match (&test, evaluate) {
            (Some(tb), true) => Some(test_loss(tb, config.method, &price, hedge.as_ref())?),
            _ => None,
        };
        let record = LossRecord { iteration: it + 1, train_loss: l.value, test_loss, wall_time_s: start.elapsed().as_secs_f64() };
        progress(&record);
        history.push(record);
    }
    Ok(TrainedModel { method: config.method, spec, price, hedge, history })
}

//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and a
//! summary; with `PPDE_ACCEPTANCE_STRICT=1` any failure exits non-zero.
//!
//! `cargo test --release --test acceptance -- 1 4` runs a subset.
//! `PPDE_ACCEPTANCE_SCALE` multiplies every training budget (default 1) and
//! `PPDE_ACCEPTANCE_ORACLE_MC` sets the oracle sample count (default 1e5).

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ContinuousCDF, Normal};

use ppde::error::Result;
use ppde::evaluation::{cached_oracle, cv_correlation, integral_error_price, test_paths, OracleSettings};
use ppde::market_models::{simulate_with_increments, BlackScholesParams, HestonParams, InitialLaw, Model, PathBatch, PathStart, TimeGrid};
use ppde::nets::tape::Tape;
use ppde::nets::{relative_error, Architecture, Network};
use ppde::payoffs::{AutocallSpec, Payoff, Redemption};
use ppde::pricing::{cv_price, mc_oracle, mc_price, HedgeNet, History};
use ppde::rng::{derive_seed, stream};
use ppde::signatures::{signature_of_segment, stream_of_signatures, Transform};
use ppde::training::batch::{build_batch, make_batch, Encoding, InputSpec, NetType, TrainBatch};
use ppde::training::loss::{martingale_from_predictions, martingale_on_tape, orthogonal_on_tape};
use ppde::training::{loss_martingale, loss_orthogonal, train, Method, NetworkConfig, TrainConfig, TrainSetup, TrainedModel};

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn scale() -> f64 {
    std::env::var("PPDE_ACCEPTANCE_SCALE").ok().and_then(|s| s.parse().ok()).unwrap_or(1.0)
}

fn oracle_mc() -> usize {
    std::env::var("PPDE_ACCEPTANCE_ORACLE_MC").ok().and_then(|s| s.parse().ok()).unwrap_or(100_000)
}

fn iterations(base: usize) -> usize {
    ((base as f64 * scale()).round() as usize).max(1)
}

fn cache_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_oracles")
}

fn lookback_grid() -> TimeGrid {
    TimeGrid::uniform(0.5, 100, 10).unwrap()
}

fn lognormal() -> InitialLaw {
    InitialLaw::LogNormal { mu: 0.08, tau: 0.1, sigma: None }
}

fn bs_lookback_model(sigma: f64) -> Model {
    Model::BlackScholes(BlackScholesParams::independent(0.05, sigma, 2, lognormal()).unwrap())
}

fn train_config(method: Method, iters: usize) -> TrainConfig {
    let mut c = TrainConfig::new(method, iters);
    c.eval_every = 250;
    c.lr_schedule = vec![(iters * 6 / 10, 0.3), (iters * 85 / 100, 1.0 / 3.0)];
    c
}

#[allow(clippy::too_many_arguments)]
fn fit(
    tag: &str,
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    net_type: NetType,
    encoding: Encoding,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let spec = InputSpec::new(net_type, encoding, model, grid);
    let network = NetworkConfig::new(net_type);
    let setup = TrainSetup { model, grid, payoff, spec, network: &network, config, seed };
    let every = (config.iterations / 6).max(1);
    train(&setup, |r| {
        if r.iteration % every == 0 || r.iteration == config.iterations {
            eprintln!("  [{tag}] iteration {} loss {:.4e} ({:.0} s)", r.iteration, r.train_loss, r.wall_time_s);
        }
    })
}

fn lead_lag4() -> Encoding {
    Encoding::sig_stream(4, Transform::LeadLag)
}

/// Price-only oracle on fresh test paths.
fn oracle_error(model: &Model, grid: &TimeGrid, payoff: &Payoff, net: &TrainedModel, n_test: usize, id: u64) -> Result<f64> {
    let paths = test_paths(model, grid, n_test, derive_seed(SEED, &[id]))?;
    let settings = OracleSettings { n_mc: oracle_mc(), rel_bump: None, seed: derive_seed(SEED, &[stream::ORACLE, id]) };
    let t = Instant::now();
    let oracle = cached_oracle(&cache_dir(), model, grid, payoff, &paths, &settings)?;
    eprintln!("  oracle {} x {} at N_MC {}: {:.0} s", n_test, grid.n_coarse(), settings.n_mc, t.elapsed().as_secs_f64());
    integral_error_price(&net.price, &net.spec, &paths, &oracle)
}

fn hedge_of(net: &TrainedModel) -> Result<HedgeNet> {
    HedgeNet::new(net.hedge.clone().expect("martingale run trains a hedge"), net.spec)
}

fn rel_level_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

fn random_stream(rng: &mut Xoshiro256PlusPlus, points: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((points, d));
    for i in 1..points {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out[[i, j]] = out[[i - 1, j]] + 0.4 * z;
        }
    }
    out
}

/// Levels 1..=3 by nested quadrature along each linear piece: trapezoid for
/// level 2 and composite Simpson for level 3, both exact on these integrands.
fn quadrature_levels(points: &Array2<f64>) -> [Vec<f64>; 3] {
    let (n, d) = points.dim();
    let sub = 8;
    let mut l1 = vec![0.0; d];
    let mut l2 = vec![0.0; d * d];
    let mut l3 = vec![0.0; d * d * d];
    for seg in 0..n - 1 {
        let inc: Vec<f64> = (0..d).map(|j| points[[seg + 1, j]] - points[[seg, j]]).collect();
        let h = 1.0 / sub as f64;
        let s1_at = |u: f64| -> Vec<f64> { (0..d).map(|i| l1[i] + u * inc[i]).collect() };
        let mut s2_nodes = vec![l2.clone()];
        for q in 0..sub {
            let (a, b) = (s1_at(q as f64 * h), s1_at((q + 1) as f64 * h));
            let mut next = s2_nodes[q].clone();
            for i in 0..d {
                for j in 0..d {
                    next[i * d + j] += 0.5 * h * (a[i] + b[i]) * inc[j];
                }
            }
            s2_nodes.push(next);
        }
        for ij in 0..d * d {
            for k in 0..d {
                let mut acc = 0.0;
                for q in (0..sub).step_by(2) {
                    acc += h / 3.0 * (s2_nodes[q][ij] + 4.0 * s2_nodes[q + 1][ij] + s2_nodes[q + 2][ij]);
                }
                l3[ij * d + k] += acc * inc[k];
            }
        }
        l2 = s2_nodes.pop().unwrap();
        for i in 0..d {
            l1[i] += inc[i];
        }
    }
    [l1, l2, l3]
}

fn criterion_1() -> Result<Outcome> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(SEED, &[1]));
    let mut worst_quad: f64 = 0.0;
    let mut worst_chain: f64 = 0.0;
    for _ in 0..100 {
        let points = rng.random_range(2..=64);
        let x = random_stream(&mut rng, points, 2);
        let sig = signature_of_segment(x.view(), 3)?;
        let reference = quadrature_levels(&x);
        for (k, r) in reference.iter().enumerate() {
            worst_quad = worst_quad.max(rel_level_error(sig.level(k + 1), r));
        }

        let n_c = [1usize, 2, 3, 4, 5, 7, 9][rng.random_range(0..7)];
        let ratio = rng.random_range(1..=63 / n_c);
        let grid = TimeGrid::uniform(1.0, n_c * ratio, n_c)?;
        let x = random_stream(&mut rng, n_c * ratio + 1, 2);
        for transform in [Transform::None, Transform::LeadLag, Transform::TimeAugment, Transform::TimeAugmentLeadLag] {
            let chained = stream_of_signatures(x.view(), &grid, 4, transform)?.chained()?;
            let whole = signature_of_segment(transform.apply(x.view(), grid.fine_times())?.view(), 4)?;
            worst_chain = worst_chain.max(relative_error(chained.as_slice(), whole.as_slice()));
        }
    }
    Ok(Outcome {
        pass: worst_quad <= 1e-8 && worst_chain <= 1e-10,
        detail: format!(
            "max level error vs quadrature {worst_quad:.2e} (<= 1e-8), chain consistency {worst_chain:.2e} (<= 1e-10)"
        ),
    })
}

fn finite_difference(params: &[f64], step: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + step;
            let up = loss(&p);
            p[i] = v - step;
            let down = loss(&p);
            p[i] = v;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn with_params(net: &Network, params: &[f64]) -> Network {
    let mut n = net.clone();
    n.params.copy_from_slice(params);
    n
}

fn ffn_gradient_error(seed: u64) -> Result<f64> {
    let model = bs_lookback_model(0.3);
    let grid = TimeGrid::uniform(0.5, 20, 5)?;
    let spec = InputSpec::new(NetType::Ffn, Encoding::coarse_path(), &model, &grid);
    let batch = make_batch(&model, &grid, 6, &spec, &Payoff::Lookback, seed, stream::TRAIN, 0)?;
    let net = Network::init(Architecture::ffn(spec.input_width(), vec![12; 4], 1), seed)?;
    let mut tape = Tape::new();
    let leaves = net.leaves(&mut tape, true);
    let x = tape.constant(batch.inputs.clone());
    let y = net.forward(&mut tape, &leaves, x, batch.steps)?;
    let loss = orthogonal_on_tape(&mut tape, &batch, y)?;
    let grads = tape.backward(loss)?;
    let analytic = net.collect_grads(&tape, &grads, &leaves);
    let numeric = finite_difference(&net.params, 1e-6, |p| loss_orthogonal(&batch, &with_params(&net, p)).unwrap());
    Ok(relative_error(&analytic, &numeric))
}

fn lstm_gradient_error(seed: u64) -> Result<f64> {
    let model = Model::BlackScholes(BlackScholesParams::independent(0.05, 0.3, 1, lognormal())?);
    let grid = TimeGrid::uniform(0.5, 20, 5)?;
    let spec = InputSpec::new(NetType::Lstm, lead_lag4(), &model, &grid);
    let batch = make_batch(&model, &grid, 4, &spec, &Payoff::Lookback, seed, stream::TRAIN, 0)?;
    let price = Network::init(Architecture::lstm(spec.input_width(), 6, 6, 1), seed)?;
    let hedge = Network::init(Architecture::lstm(spec.input_width(), 6, 6, 1), derive_seed(seed, &[1]))?;
    let mut tape = Tape::new();
    let lp = price.leaves(&mut tape, true);
    let lh = hedge.leaves(&mut tape, true);
    let x = tape.constant(batch.inputs.clone());
    let y = price.forward(&mut tape, &lp, x, batch.steps)?;
    let z = hedge.forward(&mut tape, &lh, x, batch.steps)?;
    let loss = martingale_on_tape(&mut tape, &batch, y, z)?;
    let grads = tape.backward(loss)?;
    let mut analytic = price.collect_grads(&tape, &grads, &lp);
    analytic.extend(hedge.collect_grads(&tape, &grads, &lh));
    let np = price.params.len();
    let all: Vec<f64> = price.params.iter().chain(&hedge.params).copied().collect();
    let numeric = finite_difference(&all, 1e-6, |p| {
        loss_martingale(&batch, &with_params(&price, &p[..np]), &with_params(&hedge, &p[np..])).unwrap()
    });
    Ok(relative_error(&analytic, &numeric))
}

fn criterion_2() -> Result<Outcome> {
    let mut ffn: f64 = 0.0;
    let mut lstm: f64 = 0.0;
    for s in 0..20 {
        let seed = derive_seed(SEED, &[2, s]);
        ffn = ffn.max(ffn_gradient_error(seed)?);
        lstm = lstm.max(lstm_gradient_error(seed)?);
    }
    Ok(Outcome {
        pass: ffn <= 1e-5 && lstm <= 1e-4,
        detail: format!("worst relative error over 20 seeds: FFN {ffn:.2e} (<= 1e-5), LSTM {lstm:.2e} (<= 1e-4)"),
    })
}

/// Paths on a grid with `n_c · ratio` fine steps, driven by one shared
/// Brownian motion sampled at `n_c · finest` steps.
fn nested_paths(model: &Model, fine_dw: &Array3<f64>, n_c: usize, ratio: usize, finest: usize) -> Result<PathBatch> {
    let grid = TimeGrid::uniform(0.5, n_c * ratio, n_c)?;
    let b = fine_dw.dim().0;
    let block = finest / ratio;
    let n = n_c * ratio;
    let mut paths = Array3::zeros((b, n + 1, 1));
    let mut brownian = Array3::zeros((b, n, 1));
    for i in 0..b {
        for k in 0..n {
            brownian[[i, k, 0]] = fine_dw.slice(s![i, k * block..(k + 1) * block, 0]).sum();
        }
        let start = PathStart { x0: vec![1.0], aux0: vec![], beta: vec![0.3] };
        let (p, _) = simulate_with_increments(model, &grid, &start, brownian.slice(s![i, .., ..]))?;
        paths.slice_mut(s![i, .., ..]).assign(&p);
    }
    let beta = Array2::from_elem((b, 1), 0.3);
    Ok(PathBatch { grid, paths, aux: Array3::zeros((b, n + 1, 0)), brownian, beta })
}

fn exact_representation_loss(model: &Model, paths: &PathBatch) -> Result<f64> {
    let spec = InputSpec::new(NetType::Ffn, Encoding::coarse_path(), model, &paths.grid);
    let batch: TrainBatch = build_batch(model, paths, &Payoff::BasketForward, &spec)?;
    let b = batch.batch;
    let coarse = paths.grid.coarse_indices();
    let y = Array2::from_shape_fn((batch.steps * b, 1), |(row, _)| paths.paths[[row % b, coarse[row / b], 0]]);
    let z = Array2::ones((batch.steps * b, 1));
    martingale_from_predictions(&batch, &y, &z)
}

fn criterion_3() -> Result<Outcome> {
    let model = Model::BlackScholes(BlackScholesParams::independent(0.0, 0.3, 1, InitialLaw::Fixed { values: vec![1.0] })?);
    let (n_c, finest, b) = (10, 100, 4000);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(SEED, &[3]));
    let dt = 0.5 / (n_c * finest) as f64;
    let fine_dw = Array3::from_shape_simple_fn((b, n_c * finest, 1), || dt.sqrt() * rng.sample::<f64, _>(StandardNormal));
    let mut losses = Vec::new();
    for ratio in [10, 50, 100] {
        losses.push(exact_representation_loss(&model, &nested_paths(&model, &fine_dw, n_c, ratio, finest)?)?);
    }
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);

    let grid = TimeGrid::uniform(0.5, n_c * 100, n_c)?;
    let spec = InputSpec::new(NetType::Ffn, Encoding::coarse_path(), &model, &grid);
    let arch = Architecture::ffn(spec.input_width(), vec![1], 1);
    let mut params = vec![0.0; arch.param_count()];
    *params.last_mut().unwrap() = 1.0;
    let one = HedgeNet::new(Network::from_params(arch, params, 0)?, spec)?;
    let start = History::from_x0(&model, &[1.0])?;
    let rho = cv_correlation(&model, &grid, &Payoff::BasketForward, &one, &start, 10_000, SEED)?;
    Ok(Outcome {
        pass: decreasing && rho >= 0.999,
        detail: format!(
            "loss at ratios 10/50/100: {:.3e} / {:.3e} / {:.3e} (strictly decreasing: {decreasing}), rho {rho:.5} (>= 0.999)",
            losses[0], losses[1], losses[2]
        ),
    })
}

fn black_scholes_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> (f64, f64) {
    let n = Normal::standard();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
    let d2 = d1 - sigma * t.sqrt();
    (s * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d2), n.cdf(d1))
}

fn criterion_4() -> Result<Outcome> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(SEED, &[4]));
    let mut worst_price: f64 = 0.0;
    let mut worst_delta: f64 = 0.0;
    for draw in 0..10 {
        let sigma = rng.random_range(0.1..0.5);
        let r = rng.random_range(0.0..0.06);
        let strike = rng.random_range(0.8..1.2);
        let maturity = rng.random_range(0.25..1.0);
        let s0 = rng.random_range(0.8..1.2);
        let model = Model::BlackScholes(BlackScholesParams::independent(r, sigma, 1, InitialLaw::Fixed { values: vec![s0] })?);
        let grid = TimeGrid::uniform(maturity, 1000, 10)?;
        let history = History::from_x0(&model, &[s0])?;
        let payoff = Payoff::BasketCall { strike };
        let (price, delta) = mc_oracle(&model, &grid, &payoff, &history, 100_000, 1e-3, 0.05, derive_seed(SEED, &[4, draw]))?;
        let (exact, exact_delta) = black_scholes_call(s0, strike, r, sigma, maturity);
        worst_price = worst_price.max((price.estimate - exact).abs() / price.std_error());
        worst_delta = worst_delta.max((delta.values[0] - exact_delta).abs() / delta.std_errors()[0]);
    }
    Ok(Outcome {
        pass: worst_price <= 3.0 && worst_delta <= 3.0,
        detail: format!(
            "worst deviation over 10 draws: price {worst_price:.2} SE, delta {worst_delta:.2} SE (<= 3)"
        ),
    })
}

struct DeskRun {
    model: Model,
    grid: TimeGrid,
    trained: TrainedModel,
    train_secs: f64,
}

fn desk_run() -> &'static Result<DeskRun> {
    static RUN: OnceLock<Result<DeskRun>> = OnceLock::new();
    RUN.get_or_init(|| {
        let model = bs_lookback_model(0.3);
        let grid = lookback_grid();
        let config = train_config(Method::Martingale, iterations(3000));
        let t = Instant::now();
        let trained = fit("5", &model, &grid, &Payoff::Lookback, NetType::Lstm, lead_lag4(), &config, derive_seed(SEED, &[5]))?;
        Ok(DeskRun { model, grid, trained, train_secs: t.elapsed().as_secs_f64() })
    })
}

fn criterion_5() -> Result<Outcome> {
    let run = desk_run().as_ref().map_err(|e| ppde::error::PpdeError::Training(e.to_string()))?;
    let e = oracle_error(&run.model, &run.grid, &Payoff::Lookback, &run.trained, 256, 5)?;
    let start = History::from_x0(&run.model, &[1.0, 1.0])?;
    let rho = cv_correlation(&run.model, &run.grid, &Payoff::Lookback, &hedge_of(&run.trained)?, &start, 10_000, SEED)?;
    Ok(Outcome {
        pass: e <= 1e-2 && rho >= 0.99,
        detail: format!(
            "E_integral {e:.3e} (<= 1e-2), rho {rho:.4} (>= 0.99), {} iterations trained in {:.0} s",
            run.trained.history.len(),
            run.train_secs
        ),
    })
}

fn criterion_6() -> Result<Outcome> {
    let model = bs_lookback_model(1.0);
    let grid = lookback_grid();
    let config = train_config(Method::Orthogonal, iterations(2000));
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in 0..5u64 {
        let seed = derive_seed(SEED, &[6, s]);
        let lstm = fit(&format!("6 lstm seed {s}"), &model, &grid, &Payoff::Lookback, NetType::Lstm, lead_lag4(), &config, seed)?;
        let ffn = fit(&format!("6 ffn seed {s}"), &model, &grid, &Payoff::Lookback, NetType::Ffn, Encoding::coarse_path(), &config, seed)?;
        let el = oracle_error(&model, &grid, &Payoff::Lookback, &lstm, 256, 6)?;
        let ef = oracle_error(&model, &grid, &Payoff::Lookback, &ffn, 256, 6)?;
        eprintln!("  [6] seed {s}: LSTM {el:.3e} FFN {ef:.3e}");
        if el < ef {
            wins += 1;
        }
        pairs.push(format!("{el:.2e}/{ef:.2e}"));
    }
    Ok(Outcome {
        pass: wins >= 4,
        detail: format!("LSTM lead-lag beats FFN coarse path in {wins}/5 seeds (>= 4); E_integral LSTM/FFN: {}", pairs.join(", ")),
    })
}

fn criterion_7() -> Result<Outcome> {
    let run = desk_run().as_ref().map_err(|e| ppde::error::PpdeError::Training(e.to_string()))?;
    let t = Instant::now();
    let payoff = Payoff::Lookback;
    let start = History::from_x0(&run.model, &[1.0, 1.0])?;
    let hedge = hedge_of(&run.trained)?;
    let reference = mc_price(&run.model, &run.grid, &payoff, &start, 10_000_000, 0.05, derive_seed(SEED, &[7, 1_000_000]))?;
    let mut covered = 0;
    let mut mean_std = 0.0;
    for i in 0..200 {
        let est = cv_price(&run.model, &run.grid, &payoff, &hedge, &start, 2000, 0.05, derive_seed(SEED, &[7, i]))?;
        if est.lo <= reference.estimate && reference.estimate <= est.hi {
            covered += 1;
        }
        mean_std += est.std / 200.0;
    }
    Ok(Outcome {
        pass: covered >= 180,
        detail: format!(
            "{covered}/200 intervals cover the reference {:.5} +- {:.1e} (>= 180); mean cv std {mean_std:.3e} vs plain {:.3e}; {:.0} s excluding shared training",
            reference.estimate,
            reference.std_error(),
            reference.std,
            t.elapsed().as_secs_f64()
        ),
    })
}

fn criterion_8() -> Result<Outcome> {
    let params = BlackScholesParams::new(0.05, vec![0.2; 2], &Array2::<f64>::eye(2), lognormal(), Some((0.0, 0.4)))?;
    let model = Model::BlackScholes(params);
    let grid = lookback_grid();
    let config = train_config(Method::Martingale, iterations(4000));
    let trained = fit("8", &model, &grid, &Payoff::Lookback, NetType::Lstm, lead_lag4(), &config, derive_seed(SEED, &[8]))?;
    let mut errors = Vec::new();
    for (i, sigma) in [0.05, 0.2, 0.35].into_iter().enumerate() {
        let pinned = model.with_fixed_beta(&[sigma])?;
        errors.push(oracle_error(&pinned, &grid, &Payoff::Lookback, &trained, 256, 80 + i as u64)?);
    }
    Ok(Outcome {
        pass: errors.iter().all(|e| e.is_finite() && *e <= 3e-2),
        detail: format!(
            "E_integral at sigma 0.05/0.2/0.35: {:.3e} / {:.3e} / {:.3e} (<= 3e-2)",
            errors[0], errors[1], errors[2]
        ),
    })
}

fn criterion_9() -> Result<Outcome> {
    let model = Model::Heston(HestonParams { kappa: 3.0, mu_bar: 0.3, eta: 1.0, rho: 0.6, v0: 1.0, s0: 1.0, r: 0.0 });
    let grid = lookback_grid();
    let spec = AutocallSpec::new(1.02, vec![30, 70], vec![1.1, 1.2], Redemption { slope: 0.9, intercept: 0.0 })?;
    let payoff = Payoff::Autocallable(spec);
    let config = train_config(Method::Martingale, iterations(3000));
    let trained = fit("9", &model, &grid, &payoff, NetType::Lstm, lead_lag4(), &config, derive_seed(SEED, &[9]))?;
    let e = oracle_error(&model, &grid, &payoff, &trained, 256, 9)?;
    let start = History::from_x0(&model, &[1.0])?;
    let rho = cv_correlation(&model, &grid, &payoff, &hedge_of(&trained)?, &start, 10_000, SEED)?;
    Ok(Outcome {
        pass: e <= 5e-2 && rho >= 0.9,
        detail: format!("E_integral {e:.3e} (<= 5e-2), rho {rho:.4} (>= 0.9)"),
    })
}

const DETERMINISM_CONFIG: &str = r#"
seed = 5

[model]
type = "black_scholes"
dim = 2
sigma = 0.3

[grid]
maturity = 0.5
n_fine = 50
n_coarse = 5

[payoff]
type = "lookback"

[network]
net_type = "lstm"
lstm_hidden = 8
head_width = 8

[training]
method = "martingale"
iterations = 20
batch_size = 16
test_batch_size = 32
eval_every = 5

[pricing]
n_mc = 2000

[evaluation]
n_test = 3
oracle_n_mc = 200
n_correlation = 200
"#;

fn criterion_10() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("ppde-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let cfg = dir.join("config.toml");
    fs::write(&cfg, DETERMINISM_CONFIG)?;
    let cfg = cfg.to_str().unwrap().to_string();
    let run = |args: Vec<String>| -> Result<()> {
        let out = Command::new(env!("CARGO_BIN_EXE_ppde")).args(&args).output()?;
        if !out.status.success() {
            return Err(ppde::error::PpdeError::Input(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))));
        }
        Ok(())
    };
    let history = dir.join("history.csv");
    fs::write(&history, "time_index,asset_index,value\n0,0,1.0\n0,1,1.0\n")?;
    for rep in 0..2 {
        let base = dir.join(format!("run{rep}"));
        let at = |sub: &str| base.join(sub).to_str().unwrap().to_string();
        for cmd in ["simulate", "train"] {
            run(vec![cmd.into(), "--config".into(), cfg.clone(), "--out".into(), at(cmd), "--workers".into(), "2".into()])?;
        }
        let hedge = base.join("train/hedge.ckpt").to_str().unwrap().to_string();
        run(vec![
            "price".into(), "--config".into(), cfg.clone(), "--out".into(), at("price"), "--workers".into(), "2".into(),
            "--checkpoint".into(), hedge, "--history".into(), history.to_str().unwrap().into(),
        ])?;
        run(vec![
            "evaluate".into(), "--config".into(), cfg.clone(), "--out".into(), at("evaluate"), "--workers".into(), "2".into(),
            "--checkpoint".into(), at("train"),
        ])?;
    }
    let files = [
        "simulate/paths.csv",
        "simulate/signatures.csv",
        "simulate/metadata.json",
        "train/price.ckpt",
        "train/hedge.ckpt",
        "train/metadata.json",
        "price/estimate.json",
        "evaluate/metrics.csv",
        "evaluate/metadata.json",
    ];
    let mut differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(dir.join("run0").join(f)).ok() != fs::read(dir.join("run1").join(f)).ok())
        .map(|f| f.to_string())
        .collect();
    let strip = |p: PathBuf| -> Result<Vec<String>> {
        Ok(fs::read_to_string(p)?.lines().map(|l| l.rsplit_once(',').map_or(l, |x| x.0).to_string()).collect())
    };
    if strip(dir.join("run0/train/history.csv"))? != strip(dir.join("run1/train/history.csv"))? {
        differing.push("train/history.csv".into());
    }
    fs::remove_dir_all(&dir)?;
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} artifacts of simulate/train/price/evaluate byte-identical across reruns", files.len() + 1)
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    })
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Result<Outcome>,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "signature engine vs nested quadrature", limit_s: 60.0, run: criterion_1 },
        Criterion { id: 2, name: "gradient suite", limit_s: 60.0, run: criterion_2 },
        Criterion { id: 3, name: "exact-representation fixture", limit_s: 120.0, run: criterion_3 },
        Criterion { id: 4, name: "MC pricer calibration", limit_s: 300.0, run: criterion_4 },
        Criterion { id: 5, name: "desk-scale lookback, martingale LSTM", limit_s: 3600.0, run: criterion_5 },
        Criterion { id: 6, name: "LSTM lead-lag vs FFN ordering at sigma 1", limit_s: 7200.0, run: criterion_6 },
        Criterion { id: 7, name: "control-variate interval coverage", limit_s: 1800.0, run: criterion_7 },
        Criterion { id: 8, name: "parametric sigma family", limit_s: 7200.0, run: criterion_8 },
        Criterion { id: 9, name: "Heston autocallable", limit_s: 7200.0, run: criterion_9 },
        Criterion { id: 10, name: "determinism", limit_s: f64::INFINITY, run: criterion_10 },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        eprintln!("criterion {}: {}", c.id, c.name);
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run));
        let secs = t.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_time = secs <= c.limit_s;
        let pass = pass && in_time;
        let limit = if c.limit_s.is_finite() { format!(" (limit {:.0} s)", c.limit_s) } else { String::new() };
        println!("{} [{}] {}: {detail}; {secs:.1} s{limit}", if pass { "PASS" } else { "FAIL" }, c.id, c.name);
        ran += 1;
        if !pass {
            failed.push(c.id.to_string());
        }
    }
    let failing = if failed.is_empty() { String::new() } else { format!(" (failing: {})", failed.join(", ")) };
    println!("acceptance: {}/{ran} criteria pass{failing}", ran - failed.len());
    if !failed.is_empty() && std::env::var("PPDE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

//! Initialization, loss, analytic gradients and the fitting loops.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Times};
use crate::error::{Error, Result};
use crate::fitted::{reconstruct_native, FittedModel, ModelMeta};
use crate::model::{
    check_finite, ArchKind, ArchSpec, DoubleLayerModel, InrModel, MultiOutputModel,
    SingleLayerModel, TwoLayerWeights,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::waveform::{mean_channel_nmse, normalize_time, TimeGrid, WaveformSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullGrid,
    Minibatch {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: BatchMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Record the loss every this many epochs (the last epoch is always kept).
    pub loss_report_stride: usize,
    /// Abort once the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 2000,
            batch: BatchMode::FullGrid,
            optimizer: OptimizerKind::default(),
            seed: 0,
            loss_report_stride: 10,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.loss_report_stride == 0 {
            return Err(Error::invalid("loss_report_stride must be at least 1"));
        }
        if let BatchMode::Minibatch { size: 0 } = self.batch {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            let open = |b: f64| b > 0.0 && b < 1.0;
            if !open(beta1) || !open(beta2) || !(eps > 0.0) {
                return Err(Error::invalid("adam betas must lie in (0, 1) and eps be positive"));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean of the per-channel NMSE values of the returned model.
    pub final_nmse_percent: f64,
    pub channel_nmse_percent: Vec<f64>,
    pub loss_trace: Vec<(usize, f64)>,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub wall_time_s: f64,
    pub seed: u64,
    pub epochs_run: usize,
}

/// Partial derivatives of the loss, held in a model-shaped container.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    inner: InrModel,
}

impl Gradients {
    pub fn named(&self) -> Vec<(&'static str, &[f64])> {
        self.inner.named_params()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    pub fn as_model(&self) -> &InrModel {
        &self.inner
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Draws a model. First-layer weights and biases are uniform on
/// `(-1/fan_in, 1/fan_in)` with `fan_in = 1`; deeper layers use
/// `±sqrt(6/fan_in)/ω0`.
pub fn init_model(arch: &ArchSpec, seed: u64) -> Result<InrModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega0 = arch.omega0;
    let deep = |fan_in: usize| (6.0 / fan_in as f64).sqrt() / omega0;
    Ok(match arch.kind {
        ArchKind::Single { h } => {
            let a1 = uniform(&mut rng, h, 1.0);
            let b1 = uniform(&mut rng, h, 1.0);
            let a2 = uniform(&mut rng, h, deep(h));
            let b2 = uniform(&mut rng, 1, deep(h))[0];
            InrModel::Single(SingleLayerModel::new(omega0, a1, b1, a2, b2)?)
        }
        ArchKind::Double { h1, h2 } | ArchKind::Multi { h1, h2, .. } => {
            let c = arch.n_outputs();
            let w = TwoLayerWeights::new(
                h1,
                h2,
                c,
                uniform(&mut rng, h1, 1.0),
                uniform(&mut rng, h1, 1.0),
                uniform(&mut rng, h1 * h2, deep(h1)),
                uniform(&mut rng, h2, deep(h1)),
                uniform(&mut rng, h2 * c, deep(h2)),
                uniform(&mut rng, c, deep(h2)),
            )?;
            if c == 1 {
                InrModel::Double(DoubleLayerModel::new(omega0, arch.activation, w)?)
            } else {
                let labels = (0..c).map(|k| format!("ch{k}")).collect();
                InrModel::Multi(MultiOutputModel::new(omega0, arch.activation, w, labels)?)
            }
        }
    })
}

fn target_matrix(targets: &[&[f64]], n: usize, expected_channels: usize) -> Result<Array2<f64>> {
    if targets.len() != expected_channels {
        return Err(Error::invalid(format!(
            "model has {expected_channels} outputs but {} target channels were given",
            targets.len()
        )));
    }
    for t in targets {
        if t.len() != n {
            return Err(Error::invalid(format!(
                "target has {} samples but the grid has {n}",
                t.len()
            )));
        }
    }
    Ok(Array2::from_shape_fn((n, targets.len()), |(k, c)| targets[c][k]))
}

/// Mean squared error over the grid, channels weighted equally.
pub fn mse_loss(model: &InrModel, targets: &[&[f64]], grid: &TimeGrid) -> Result<f64> {
    let y = target_matrix(targets, grid.len(), model.n_outputs())?;
    Ok(engine::loss_and_grad(
        model,
        Times::Uniform(grid.times()),
        y.view(),
        None,
        &mut engine::Workspace::default(),
    ))
}

/// Loss and its exact gradient with respect to every weight and bias.
pub fn backward(model: &InrModel, targets: &[&[f64]], grid: &TimeGrid) -> Result<(f64, Gradients)> {
    let y = target_matrix(targets, grid.len(), model.n_outputs())?;
    let mut flat = vec![0.0; model.enumerate_params()];
    let loss = engine::loss_and_grad(
        model,
        Times::Uniform(grid.times()),
        y.view(),
        Some(&mut flat),
        &mut engine::Workspace::default(),
    );
    let mut inner = model.clone();
    inner.set_flat(&flat);
    check_finite(&inner.named_params())?;
    Ok((loss, Gradients { inner }))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Trains `arch` on `target` and returns the lowest-loss iterate.
///
/// Each channel is scaled to unit RMS before training; the scales are kept
/// in the model metadata so reconstructions come out in physical units.
pub fn fit(
    target: &WaveformSet,
    arch: &ArchSpec,
    config: &TrainConfig,
) -> Result<(FittedModel, TrainReport)> {
    arch.validate()?;
    config.validate()?;
    let c = target.n_channels();
    if arch.n_outputs() != c {
        return Err(Error::invalid(format!(
            "{arch} expects {} channel(s) but the capture has {c}",
            arch.n_outputs()
        )));
    }
    let started = Instant::now();
    let n = target.n_samples();
    let grid = normalize_time(n)?;

    let mut scales = Vec::with_capacity(c);
    for ch in target.channels() {
        let s = rms(ch.samples());
        if s == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "channel `{}` has zero energy",
                ch.label()
            )));
        }
        scales.push(s);
    }
    let y = Array2::from_shape_fn((n, c), |(k, ch)| {
        target.channels()[ch].samples()[k] / scales[ch]
    });

    let mut model = init_model(arch, config.seed)?;
    if let InrModel::Multi(m) = &mut model {
        m.labels = target.labels();
    }
    let mut params = model.flatten();
    let mut grad = vec![0.0; params.len()];
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, params.len());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_BA7C);
    let mut order: Vec<usize> = (0..n).collect();

    let times = Times::Uniform(grid.times());
    let mut ws = engine::Workspace::default();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut initial = None;

    let mut observe = |epoch: usize, loss: f64, params: &[f64], trace: &mut Vec<(usize, f64)>| {
        let reference = *initial.get_or_insert(loss);
        if !loss.is_finite() || loss > config.divergence_factor * reference.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                epoch,
                trace: trace.clone(),
            });
        }
        if epoch % config.loss_report_stride == 0 || epoch == config.epochs {
            trace.push((epoch, loss));
        }
        if loss < best.0 {
            best = (loss, epoch, params.to_vec());
        }
        Ok(())
    };

    for epoch in 0..config.epochs {
        match config.batch {
            BatchMode::FullGrid => {
                model.set_flat(&params);
                let loss = engine::loss_and_grad(&model, times, y.view(), Some(&mut grad), &mut ws);
                observe(epoch, loss, &params, &mut trace)?;
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, trace });
                }
                opt.step(&mut params, &grad);
            }
            BatchMode::Minibatch { size } => {
                model.set_flat(&params);
                let loss = engine::loss_and_grad(&model, times, y.view(), None, &mut ws);
                observe(epoch, loss, &params, &mut trace)?;
                order.shuffle(&mut batch_rng);
                for chunk in order.chunks(size) {
                    let t: Vec<f64> = chunk.iter().map(|&k| grid.times()[k]).collect();
                    let yb = y.select(ndarray::Axis(0), chunk);
                    model.set_flat(&params);
                    engine::loss_and_grad(&model, Times::Scattered(&t), yb.view(), Some(&mut grad), &mut ws);
                    if grad.iter().any(|g| !g.is_finite()) {
                        return Err(Error::Diverged { epoch, trace });
                    }
                    opt.step(&mut params, &grad);
                }
            }
        }
    }
    model.set_flat(&params);
    let last = engine::loss_and_grad(&model, times, y.view(), None, &mut ws);
    observe(config.epochs, last, &params, &mut trace)?;

    let (best_loss, best_epoch, best_params) = best;
    model.set_flat(&best_params);
    let meta = ModelMeta {
        sampling: Some(target.spec()),
        n_samples: n,
        labels: target.labels(),
        units: target.channels().iter().map(|c| c.unit()).collect(),
        scales,
    };
    let fitted = FittedModel::new(model, meta)?;
    let recon = reconstruct_native(&fitted)?;
    let (final_nmse, per_channel) = mean_channel_nmse(target, &recon)?;
    let report = TrainReport {
        final_nmse_percent: final_nmse,
        channel_nmse_percent: per_channel,
        loss_trace: trace,
        best_loss,
        best_epoch,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: config.seed,
        epochs_run: config.epochs,
    };
    Ok((fitted, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmseStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl NmseStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self {
            count: values.len(),
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunOutcome {
    Ok(TrainReport),
    Failed { seed: u64, error: String },
}

#[derive(Debug, Clone)]
pub struct MultiRunReport {
    pub runs: Vec<RunOutcome>,
    pub stats: NmseStats,
    pub best: FittedModel,
    pub best_run: usize,
}

/// Repeats [`fit`] with seeds `seed, seed+1, …`. Individual failures are
/// recorded; the call fails only if every run fails.
pub fn fit_multi_run(
    target: &WaveformSet,
    arch: &ArchSpec,
    config: &TrainConfig,
    runs: usize,
) -> Result<MultiRunReport> {
    if runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    let results: Vec<(u64, Result<(FittedModel, TrainReport)>)> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r);
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            (seed, fit(target, arch, &cfg))
        })
        .collect();

    let mut outcomes = Vec::with_capacity(runs);
    let mut best: Option<(usize, FittedModel, f64)> = None;
    let mut first_err = None;
    let mut values = Vec::new();
    for (idx, (seed, res)) in results.into_iter().enumerate() {
        match res {
            Ok((model, report)) => {
                let nmse = report.final_nmse_percent;
                values.push(nmse);
                if best.as_ref().map_or(true, |(_, _, b)| nmse < *b) {
                    best = Some((idx, model, nmse));
                }
                outcomes.push(RunOutcome::Ok(report));
            }
            Err(e) => {
                outcomes.push(RunOutcome::Failed {
                    seed,
                    error: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((best_run, best, _)) => Ok(MultiRunReport {
            runs: outcomes,
            stats: NmseStats::from_values(&values).expect("at least one run succeeded"),
            best,
            best_run,
        }),
        None => Err(first_err.expect("no runs succeeded")),
    }
}

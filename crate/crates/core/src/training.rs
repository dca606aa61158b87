//! Pool-based training with backpropagation through every rollout step,
//! evaluation, and versioned checkpoints.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{CnnModel, CnnTrainConfig};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::{cell_center, init_grid, ChannelLayout, StateGrid, DEFAULT_HIDDEN};
use crate::nca::{rollout, rollout_taped, NcaModel, RolloutConfig, DEFAULT_PROCESSING_WIDTH};
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor3};
use crate::rng::{mix_all, seeded};
use crate::stats::Summary;
use crate::world::{ReadingMode, Sample};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Global L2 norm cap on the batch gradient.
pub const DEFAULT_GRAD_CLIP: f64 = 1.0;

// Stream keys for seed derivation.
const KEY_INIT: u64 = 1;
const KEY_POOL: u64 = 2;
const KEY_STEP: u64 = 3;
const KEY_ROLLOUT: u64 = 4;
const KEY_SPLIT: u64 = 5;

/// Mean squared distance between each agent's global estimate and `center`.
pub fn training_loss(grid: &StateGrid, center: Point2) -> f64 {
    let est = grid.global_estimates();
    est.iter().map(|p| p.distance_sq(center)).sum::<f64>() / est.len() as f64
}

/// Mean Euclidean distance between each agent's global estimate and `center`.
pub fn agent_error(grid: &StateGrid, center: Point2) -> f64 {
    let est = grid.global_estimates();
    est.iter().map(|p| p.distance(center)).sum::<f64>() / est.len() as f64
}

/// Gradient of `scale * training_loss` with respect to the state tensor.
fn loss_gradient(grid: &StateGrid, center: Point2, scale: f64) -> Tensor3 {
    let (c, h, w) = grid.tensor().shape();
    let n = (h * w) as f64;
    let mut g = Tensor3::zeros(c, h, w);
    for row in 0..h {
        for col in 0..w {
            let p = cell_center(row, col) + grid.offset(row, col);
            *g.at_mut(ChannelLayout::EST_X, row, col) = scale * 2.0 * (p.x - center.x) / n;
            *g.at_mut(ChannelLayout::EST_Y, row, col) = scale * 2.0 * (p.y - center.y) / n;
        }
    }
    g
}

/// Shuffles and splits into `(train, test)` with `ceil(n * ratio)` training samples.
pub fn split_dataset(dataset: &[Sample], ratio: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if dataset.len() < 2 {
        return Err(Error::Config("need at least two samples to split".into()));
    }
    let n = dataset.len();
    let n_train = ((n as f64 * ratio).ceil() as usize).clamp(1, n - 1);
    let mut rng = seeded(mix_all(seed, &[KEY_SPLIT]));
    let order = sample_indices(&mut rng, n, n).into_vec();
    let train = order[..n_train].iter().map(|&i| dataset[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| dataset[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Steps without improvement of the moving-average metric before stopping.
    pub patience: usize,
    /// Required improvement, in tiles.
    pub min_delta: f64,
    pub window: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 500,
            min_delta: 1e-4,
            window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pool_size: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub rollout: RolloutConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: ReadingMode,
    pub split_ratio: f64,
    pub hidden_channels: usize,
    pub processing_width: usize,
    /// Rescales the batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pool_size: 64,
            batch_size: 8,
            total_steps: 5000,
            rollout: RolloutConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            mode: ReadingMode::Binary,
            split_ratio: 0.5,
            hidden_channels: DEFAULT_HIDDEN,
            processing_width: DEFAULT_PROCESSING_WIDTH,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            early_stop: Some(EarlyStop::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rollout.validate()?;
        if self.batch_size == 0 || self.batch_size > self.pool_size {
            return Err(Error::Config(format!(
                "batch size {} must be in 1..={}",
                self.batch_size, self.pool_size
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split ratio must be in (0, 1), got {}", self.split_ratio)));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.adam.lr)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("gradient clip must be positive, got {c}")));
            }
        }
        ChannelLayout::new(self.hidden_channels)?;
        Ok(())
    }
}

/// One persisted, evolving state in the training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub sample: usize,
    pub grid: StateGrid,
    pub last_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NcaModel,
    pub curve: Vec<CurvePoint>,
    pub pool: Vec<PoolEntry>,
}

/// Trains a fresh model. See [`train_from`].
pub fn train(train_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let layout = ChannelLayout::new(cfg.hidden_channels)?;
    let model = NcaModel::new(layout, cfg.processing_width, &mut seeded(mix_all(cfg.seed, &[KEY_INIT])))?;
    train_from(model, train_set, cfg)
}

/// Runs the pool training loop from `model`.
///
/// Each step draws a batch from the pool, resets the batch's worst entry to
/// the empty state of a freshly drawn training sample, rolls every entry out
/// while recording activations, and takes one Adam step on the batch-mean
/// loss. Rollouts run in parallel on pre-assigned RNG streams; gradients are
/// summed in batch order, so results do not depend on the thread count.
pub fn train_from(mut model: NcaModel, train_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let layout = model.layout();
    let fresh = |idx: usize| -> Result<StateGrid> { init_grid(&train_set[idx].readings, layout) };

    let mut pool_rng = seeded(mix_all(cfg.seed, &[KEY_POOL]));
    let mut pool = (0..cfg.pool_size)
        .map(|_| {
            let idx = pool_rng.gen_range(0..train_set.len());
            Ok(PoolEntry {
                sample: idx,
                grid: fresh(idx)?,
                last_loss: f64::INFINITY,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let block_lens: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(cfg.adam, &block_lens);
    let mut curve = Vec::with_capacity(cfg.total_steps);
    let mut plateau = PlateauTracker::new(cfg.early_stop);
    let inv_batch = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.total_steps {
        let mut step_rng = seeded(mix_all(cfg.seed, &[KEY_STEP, step as u64]));
        let mut batch = sample_indices(&mut step_rng, cfg.pool_size, cfg.batch_size).into_vec();
        batch.sort_unstable();

        let worst = *batch
            .iter()
            .max_by(|&&a, &&b| pool[a].last_loss.total_cmp(&pool[b].last_loss).then(b.cmp(&a)))
            .expect("nonempty batch");
        let idx = step_rng.gen_range(0..train_set.len());
        pool[worst] = PoolEntry {
            sample: idx,
            grid: fresh(idx)?,
            last_loss: f64::INFINITY,
        };

        let results = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &entry)| {
                let e = &pool[entry];
                let center = train_set[e.sample].true_center;
                let mut rng = seeded(mix_all(cfg.seed, &[KEY_ROLLOUT, step as u64, slot as u64]));
                let (fin, tape) = rollout_taped(&e.grid, &model, &cfg.rollout, &mut rng)?;
                let loss = training_loss(&fin, center);
                let metric = agent_error(&fin, center);
                let mut grads = model.zeros_like();
                tape.backward(&model, &loss_gradient(&fin, center, inv_batch), &mut grads)?;
                Ok((fin, loss, metric, grads))
            })
            .collect::<Result<Vec<_>>>();
        let results = match results {
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    checkpoint: Box::new(Checkpoint::nca(model, cfg.clone(), curve)),
                })
            }
            other => other?,
        };

        let mut total = model.zeros_like();
        let (mut loss_sum, mut metric_sum) = (0.0, 0.0);
        for (_, loss, metric, grads) in &results {
            loss_sum += loss;
            metric_sum += metric;
            total.add_assign(grads);
        }
        let loss = loss_sum * inv_batch;
        let metric = metric_sum * inv_batch;
        if !loss.is_finite() || !total.flatten().iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged {
                step,
                checkpoint: Box::new(Checkpoint::nca(model, cfg.clone(), curve)),
            });
        }
        if let Some(max_norm) = cfg.grad_clip {
            let norm = total.flatten().iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                total.scale(max_norm / norm);
            }
        }
        let grads = total.param_slices();
        adam_step(&mut adam, &mut model.param_blocks_mut(), &grads)?;

        for (&entry, (fin, loss, _, _)) in batch.iter().zip(results) {
            pool[entry].grid = fin;
            pool[entry].last_loss = loss;
        }
        curve.push(CurvePoint { step, loss, metric });
        if plateau.observe(metric) {
            break;
        }
    }
    Ok(TrainOutcome { model, curve, pool })
}

struct PlateauTracker {
    cfg: Option<EarlyStop>,
    recent: std::collections::VecDeque<f64>,
    sum: f64,
    best: f64,
    since_best: usize,
}

impl PlateauTracker {
    fn new(cfg: Option<EarlyStop>) -> Self {
        Self {
            cfg,
            recent: Default::default(),
            sum: 0.0,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, metric: f64) -> bool {
        let Some(cfg) = self.cfg else { return false };
        self.recent.push_back(metric);
        self.sum += metric;
        if self.recent.len() > cfg.window {
            self.sum -= self.recent.pop_front().unwrap_or(0.0);
        }
        if self.recent.len() < cfg.window {
            return false;
        }
        let avg = self.sum / cfg.window as f64;
        if avg < self.best - cfg.min_delta {
            self.best = avg;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= cfg.patience
    }
}

/// Trailing moving average of the training loss ending at `step` (inclusive).
pub fn moving_average_loss(curve: &[CurvePoint], step: usize, window: usize) -> Option<f64> {
    let end = curve.iter().position(|p| p.step == step)? + 1;
    let start = end.saturating_sub(window);
    let slice = &curve[start..end];
    Some(slice.iter().map(|p| p.loss).sum::<f64>() / slice.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Per-sample distance between the consensus estimate and the truth, tiles.
    pub errors: Vec<f64>,
    pub summary: Option<Summary>,
}

impl Evaluation {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let summary = Summary::of(&errors);
        Self { errors, summary }
    }

    pub fn mean(&self) -> Option<f64> {
        self.summary.map(|s| s.mean)
    }
}

/// Seed of the rollout for sample `index` in [`evaluate`].
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    mix_all(seed, &[KEY_ROLLOUT, index as u64])
}

/// Consensus error of one sample: empty state, rollout, mean estimate vs truth.
pub fn evaluate_one(model: &NcaModel, sample: &Sample, rollout_cfg: &RolloutConfig, seed: u64) -> Result<f64> {
    let grid = init_grid(&sample.readings, model.layout())?;
    let (fin, _) = rollout(&grid, model, rollout_cfg, &mut seeded(seed))?;
    Ok(fin.mean_estimate().distance(sample.true_center))
}

pub fn evaluate(model: &NcaModel, dataset: &[Sample], rollout_cfg: &RolloutConfig, seed: u64) -> Result<Evaluation> {
    let errors = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_one(model, s, rollout_cfg, eval_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_errors(errors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "lowercase")]
pub enum CheckpointModel {
    Nca {
        model: NcaModel,
        rollout: RolloutConfig,
        train: TrainConfig,
    },
    Centralized {
        model: CnnModel,
        train: CnnTrainConfig,
    },
}

/// Versioned, self-describing JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(flatten)]
    pub content: CheckpointModel,
    pub history: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn nca(model: NcaModel, train: TrainConfig, history: Vec<CurvePoint>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            content: CheckpointModel::Nca {
                model,
                rollout: train.rollout,
                train,
            },
            history,
        }
    }

    pub fn centralized(model: CnnModel, train: CnnTrainConfig, history: Vec<CurvePoint>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            content: CheckpointModel::Centralized { model, train },
            history,
        }
    }

    pub fn model_kind(&self) -> &'static str {
        match self.content {
            CheckpointModel::Nca { .. } => "nca",
            CheckpointModel::Centralized { .. } => "centralized",
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: found as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
        match &ckpt.content {
            CheckpointModel::Nca { model, rollout, .. } => {
                model.validate()?;
                rollout.validate()?;
            }
            CheckpointModel::Centralized { model, .. } => model.validate()?,
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Training curve CSV: `step,loss,metric`.
pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "metric"])?;
    for p in curve {
        w.write_record([p.step.to_string(), p.loss.to_string(), p.metric.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

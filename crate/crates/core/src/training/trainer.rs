use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, RngState};
use super::loss::total_loss;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{batch_counts, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{forward, predict, ModelConfig, ModelParams};
use crate::tensor::{Graph, Tensor};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Optimization schedule and output locations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds parameter initialization and the batch shuffle.
    pub seed: u64,
    /// Directory receiving `last.ckpt` and `best.ckpt`. Nothing is saved
    /// when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Per-epoch log file.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), epochs: 30, batch_size: 8, seed: 0, checkpoint_dir: None, log_path: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", a.learning_rate)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

impl EpochLog {
    /// `epoch  train_loss  val_dsc  val_miou  val_recall  val_precision`.
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{}", self.epoch, self.train_loss, self.val.tsv())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Checkpoint of the best validation DSC reached in this run, if any
    /// epoch improved on the incoming best.
    pub best: Option<Checkpoint>,
    pub log: Vec<EpochLog>,
}

/// Batches `samples` into `N x 3 x H x W` images and `N x 1 x H x W` masks.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Forward, loss, backward and one Adam update on a single batch. Returns
/// the loss before the update.
pub fn train_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    cfg: &AdamConfig,
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
) -> Result<f64> {
    let model_cfg = params.config().clone();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let x = g.constant(images.clone());
    let out = forward(&mut g, &vars, &model_cfg, x)?;
    let loss = total_loss(&mut g, &out, masks, model_cfg.dense_layers)?;
    let value = g.value(loss.total).item()? as f64;
    if !value.is_finite() {
        let term = loss.non_finite_term(&g).unwrap_or("total");
        return Err(Error::NonFiniteLoss(format!("loss term `{term}` is {value}")));
    }
    let grads = g.backward(loss.total)?;
    params.zero_grads();
    params.accumulate_grads(&vars, &grads)?;
    adam_step(params, adam, cfg)?;
    params.zero_grads();
    Ok(value)
}

/// Scores `params` on `samples`, predicting `batch_size` images at a time.
pub fn evaluate_samples(params: &ModelParams<f32>, samples: &[Sample], batch_size: usize) -> Result<MetricsReport> {
    let mut counts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, masks) = collate(&refs)?;
        let pred = predict(params, &images)?;
        counts.extend(batch_counts(&pred, &masks, DEFAULT_THRESHOLD)?);
    }
    MetricsReport::from_counts(&counts)
}

/// Epoch-level training state over borrowed train and validation sets.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    params: ModelParams<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
    best_val_dsc: f64,
    train: &'a [Sample],
    val: &'a [Sample],
}

impl<'a> Trainer<'a> {
    /// Fresh parameters from `cfg.seed`. Truncates the log file.
    pub fn new(model: &ModelConfig, cfg: TrainConfig, train: &'a [Sample], val: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(model, cfg.seed)?;
        let adam = AdamState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        if let Some(p) = &cfg.log_path {
            File::create(p).map_err(|e| Error::io(p, e))?;
        }
        let t = Self { cfg, params, adam, rng, epoch: 0, best_val_dsc: f64::NEG_INFINITY, train, val };
        t.check_data()?;
        Ok(t)
    }

    /// Continues from `ckpt`. Optimizer settings, batch size and seed must
    /// match the checkpoint; `epochs` and the output locations may differ.
    /// The log is appended to.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig, train: &'a [Sample], val: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        if (cfg.adam, cfg.batch_size, cfg.seed) != (ckpt.optimizer, ckpt.batch_size, ckpt.seed) {
            return Err(Error::Config("training settings differ from the checkpoint".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng.seed);
        rng.set_stream(ckpt.rng.stream);
        rng.set_word_pos(ckpt.rng.word_pos);
        let t = Self {
            cfg,
            params: ckpt.params,
            adam: ckpt.adam,
            rng,
            epoch: ckpt.epoch as usize,
            best_val_dsc: ckpt.best_val_dsc,
            train,
            val,
        };
        t.check_data()?;
        Ok(t)
    }

    fn check_data(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        if self.val.is_empty() {
            return Err(Error::Dataset("validation split is empty".into()));
        }
        let (h, w) = self.params.config().input_size;
        if let Some(s) = self.train.iter().chain(self.val).find(|s| s.size() != (h, w)) {
            return Err(Error::Dataset(format!("{} is {:?}, model expects {h}x{w}", s.id, s.size())));
        }
        Ok(())
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            optimizer: self.cfg.adam,
            batch_size: self.cfg.batch_size,
            seed: self.cfg.seed,
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch as u32,
            best_val_dsc: self.best_val_dsc,
            rng: RngState { seed: self.rng.get_seed(), stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() },
        }
    }

    /// Shuffles, trains on every batch (the last one may be short),
    /// validates, and writes the log line and checkpoints. Returns the log
    /// entry and, when validation DSC improved, the new best checkpoint.
    pub fn run_epoch(&mut self) -> Result<(EpochLog, Option<Checkpoint>)> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &self.train[i]).collect();
            let (images, masks) = collate(&batch)?;
            let loss = train_step(&mut self.params, &mut self.adam, &self.cfg.adam, &images, &masks).map_err(|e| match e {
                Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!("epoch {}, batch {}: {msg}", self.epoch + 1, b + 1)),
                e => e,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        self.epoch += 1;
        let val = evaluate_samples(&self.params, self.val, self.cfg.batch_size)?;
        let log = EpochLog { epoch: self.epoch, train_loss: loss_sum / self.train.len() as f64, val };
        let improved = val.dsc > self.best_val_dsc;
        if improved {
            self.best_val_dsc = val.dsc;
        }
        let ckpt = self.checkpoint();
        if let Some(p) = &self.cfg.log_path {
            let mut f = OpenOptions::new().append(true).create(true).open(p).map_err(|e| Error::io(p, e))?;
            writeln!(f, "{}", log.line()).map_err(|e| Error::io(p, e))?;
        }
        if let Some(dir) = &self.cfg.checkpoint_dir {
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok((log, improved.then_some(ckpt)))
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run_with(mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let mut best = None;
        while self.epoch < self.cfg.epochs {
            let (entry, improved) = self.run_epoch()?;
            on_epoch(&entry);
            log.push(entry);
            if improved.is_some() {
                best = improved;
            }
        }
        Ok(TrainOutcome { last: self.checkpoint(), best, log })
    }

    pub fn run(self) -> Result<TrainOutcome> {
        self.run_with(|_| {})
    }
}

/// Trains a fresh model for `cfg.epochs` epochs.
pub fn train(model: &ModelConfig, cfg: TrainConfig, train: &[Sample], val: &[Sample]) -> Result<TrainOutcome> {
    Trainer::new(model, cfg, train, val)?.run()
}

/// Reads a training log back into its lines.
pub fn read_log(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

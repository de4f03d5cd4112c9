//! Training loop: exhaustive flip/color augmentation with random crops,
//! step-decay learning rate with a floor that terminates the run, Adam or
//! plain SGD, per-epoch checkpoints and evaluation. Everything is
//! deterministic in (seed, config, dataset).

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::kernels::Mode;
use crate::lightfield::{augment, load_scene, stack_sais, AugmentOp, DisparityMap, Sample, Scene, ViewPattern};
use crate::loss::LossWeights;
use crate::metrics::MetricsReport;
use crate::model::{build_model, sidecar_path, Model, ModelConfig, Variant};
use crate::serialize::{self, Entry};
use crate::tensor::{Shape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidConfig(format!(
                "optimizer must be adam or sgd, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub lr_floor: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub grad_clip: f64,
    pub clip_enabled: bool,
    pub max_epochs: usize,
    pub val_count: usize,
    pub stop_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            decay_factor: 0.5,
            decay_period: 10,
            lr_floor: 1e-7,
            patch_size: 64,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            grad_clip: 5.0,
            clip_enabled: true,
            max_epochs: usize::MAX,
            val_count: 0,
            stop_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1, self.lambda2, self.lambda3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_factor must be in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.lr_floor >= self.lr0 || self.lr0 <= 0.0 || self.lr_floor <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lr_floor < lr0, got lr0={} floor={}",
                self.lr0, self.lr_floor
            )));
        }
        if self.decay_period == 0 || self.patch_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "decay_period, patch_size and batch_size must be positive".into(),
            ));
        }
        self.weights()?;
        Ok(())
    }

    /// Parse `key=value` lines; every key must name a TrainConfig field.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("bad config line '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "lr0" => cfg.lr0 = num(key, value)?,
                "decay_factor" => cfg.decay_factor = num(key, value)?,
                "decay_period" => cfg.decay_period = num(key, value)?,
                "lr_floor" => cfg.lr_floor = num(key, value)?,
                "patch_size" => cfg.patch_size = num(key, value)?,
                "batch_size" => cfg.batch_size = num(key, value)?,
                "optimizer" => cfg.optimizer = OptimizerKind::parse(value)?,
                "adam_beta1" => cfg.adam_beta1 = num(key, value)?,
                "adam_beta2" => cfg.adam_beta2 = num(key, value)?,
                "adam_epsilon" => cfg.adam_epsilon = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "lambda1" => cfg.lambda1 = num(key, value)?,
                "lambda2" => cfg.lambda2 = num(key, value)?,
                "lambda3" => cfg.lambda3 = num(key, value)?,
                "grad_clip" => cfg.grad_clip = num(key, value)?,
                "clip_enabled" => {
                    cfg.clip_enabled = value
                        .parse()
                        .map_err(|e| Error::InvalidConfig(format!("bad value for {key}: {e}")))?
                }
                "max_epochs" => cfg.max_epochs = num(key, value)?,
                "val_count" => cfg.val_count = num(key, value)?,
                "stop_loss" => cfg.stop_loss = num(key, value)?,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown config key '{other}'")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "lr0={}\ndecay_factor={}\ndecay_period={}\nlr_floor={}\npatch_size={}\nbatch_size={}\noptimizer={}\nadam_beta1={}\nadam_beta2={}\nadam_epsilon={}\nseed={}\nlambda1={}\nlambda2={}\nlambda3={}\ngrad_clip={}\nclip_enabled={}\nmax_epochs={}\nval_count={}\nstop_loss={}\n",
            self.lr0,
            self.decay_factor,
            self.decay_period,
            self.lr_floor,
            self.patch_size,
            self.batch_size,
            self.optimizer.name(),
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
            self.seed,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.grad_clip,
            self.clip_enabled,
            self.max_epochs,
            self.val_count,
            self.stop_loss,
        )
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value for {key}: {e}")))
}

/// lr(epoch) = lr0 * factor^floor(epoch / period); `None` once the value
/// falls below the floor, which terminates training.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> Option<f64> {
    let steps = (epoch / config.decay_period) as i32;
    let lr = config.lr0 * config.decay_factor.powi(steps);
    if lr < config.lr_floor {
        None
    } else {
        Some(lr)
    }
}

// ---- dataset -------------------------------------------------------------

#[derive(Debug)]
pub struct SceneSample {
    pub name: String,
    pub dir: PathBuf,
    pub sample: Sample,
    pub mask_textureless: Option<Vec<bool>>,
    pub mask_specular: Option<Vec<bool>>,
}

#[derive(Debug)]
pub struct Dataset {
    pub scenes: Vec<SceneSample>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &SceneSample> {
        self.train_indices.iter().map(|&i| &self.scenes[i])
    }

    pub fn val(&self) -> impl Iterator<Item = &SceneSample> {
        self.val_indices.iter().map(|&i| &self.scenes[i])
    }
}

fn scene_to_sample(scene: &Scene, variant: Variant) -> Result<Sample> {
    let pattern = ViewPattern::new(variant.side())?;
    let input = stack_sais(&scene.lightfield, pattern)?;
    let target = scene.gt.clone().ok_or_else(|| {
        Error::InvalidConfig(format!("scene '{}' has no ground truth", scene.name))
    })?;
    if (target.height, target.width) != (scene.lightfield.height(), scene.lightfield.width()) {
        return Err(Error::ShapeMismatch {
            context: format!("scene '{}' ground truth", scene.name),
            expected: format!("{}x{}", scene.lightfield.height(), scene.lightfield.width()),
            actual: format!("{}x{}", target.height, target.width),
        });
    }
    Ok(Sample {
        input,
        target,
        side: variant.side(),
    })
}

/// Load every scene subdirectory (sorted by name) and split the tail
/// `val_count` scenes into the validation set.
pub fn load_dataset(dir: &Path, variant: Variant, grid: (usize, usize), val_count: usize) -> Result<Dataset> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no scene directories under {}",
            dir.display()
        )));
    }
    let mut scenes = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let scene = load_scene(d, grid)?;
        let sample = scene_to_sample(&scene, variant)?;
        scenes.push(SceneSample {
            name: scene.name,
            dir: scene.dir,
            sample,
            mask_textureless: scene.mask_textureless,
            mask_specular: scene.mask_specular,
        });
    }
    if val_count >= scenes.len() {
        return Err(Error::InvalidConfig(format!(
            "val_count {} leaves no training scenes out of {}",
            val_count,
            scenes.len()
        )));
    }
    let split = scenes.len() - val_count;
    Ok(Dataset {
        train_indices: (0..split).collect(),
        val_indices: (split..scenes.len()).collect(),
        scenes,
    })
}

/// Every sample must be at least patch-sized.
pub fn validate_dataset(ds: &Dataset, config: &TrainConfig) -> Result<()> {
    for scene in ds.train() {
        let s = scene.sample.input.shape();
        if s.h < config.patch_size || s.w < config.patch_size {
            return Err(Error::InvalidConfig(format!(
                "scene '{}' is {}x{}, smaller than patch size {}",
                scene.name, s.h, s.w, config.patch_size
            )));
        }
    }
    Ok(())
}

// ---- batches ---------------------------------------------------------------

pub const FLIP_STATES: [Option<AugmentOp>; 4] = [
    None,
    Some(AugmentOp::FlipLr),
    Some(AugmentOp::FlipUd),
    Some(AugmentOp::FlipBoth),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugCombo {
    pub flip: usize,
    pub invert: bool,
}

pub const AUG_COMBOS: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct PlanItem {
    pub scene: usize,
    pub combo: AugCombo,
    pub crop_x: usize,
    pub crop_y: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Enumerate every training sample under all 8 flip/color combinations with
/// a fresh random crop each, shuffle, and group into batches. Deterministic
/// in (seed, epoch).
pub fn make_batches(ds: &Dataset, config: &TrainConfig, epoch: usize) -> Vec<Vec<PlanItem>> {
    let mut rng = epoch_rng(config.seed, epoch);
    let mut items = Vec::with_capacity(ds.train_indices.len() * AUG_COMBOS);
    for &scene in &ds.train_indices {
        let shape = ds.scenes[scene].sample.input.shape();
        for flip in 0..FLIP_STATES.len() {
            for invert in [false, true] {
                let crop_x = rng.gen_range(0..=shape.w - config.patch_size);
                let crop_y = rng.gen_range(0..=shape.h - config.patch_size);
                items.push(PlanItem {
                    scene,
                    combo: AugCombo { flip, invert },
                    crop_x,
                    crop_y,
                });
            }
        }
    }
    items.shuffle(&mut rng);
    items
        .chunks(config.batch_size)
        .map(|c| c.to_vec())
        .collect()
}

pub fn realize_item(ds: &Dataset, item: &PlanItem, patch: usize) -> Result<Sample> {
    let mut sample = ds.scenes[item.scene].sample.clone();
    if let Some(op) = FLIP_STATES[item.combo.flip] {
        sample = augment(&sample, op)?;
    }
    if item.combo.invert {
        sample = augment(&sample, AugmentOp::InvertColor)?;
    }
    augment(
        &sample,
        AugmentOp::Crop {
            x: item.crop_x,
            y: item.crop_y,
            size: patch,
        },
    )
}

/// Concatenate realized samples into (input, target) batch tensors.
pub fn materialize_batch(ds: &Dataset, items: &[PlanItem], patch: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let channels = ds.scenes[items[0].scene].sample.input.shape().c;
    let mut input = Vec::with_capacity(items.len() * channels * patch * patch);
    let mut target = Vec::with_capacity(items.len() * patch * patch);
    for item in items {
        let s = realize_item(ds, item, patch)?;
        input.extend_from_slice(s.input.data());
        target.extend_from_slice(&s.target.values);
    }
    Ok((
        Tensor::from_vec(Shape::new(items.len(), channels, patch, patch), input)?,
        Tensor::from_vec(Shape::new(items.len(), 1, patch, patch), target)?,
    ))
}

// ---- optimizer -------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: usize,
}

impl OptimizerState {
    fn new(sizes: &[usize]) -> Self {
        OptimizerState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

// ---- trainer ---------------------------------------------------------------

/// A model with the combined loss attached to its graph.
pub struct Trainer {
    pub model: Model<f32>,
    target_node: NodeId,
    pub loss_node: NodeId,
    pub opt: OptimizerState,
}

impl Trainer {
    pub fn new(mut model: Model<f32>, weights: &LossWeights) -> Result<Self> {
        weights.validate()?;
        let out = model.output_node();
        let g = model.graph_mut();
        let out_shape = g.out(out).shape();
        let target_node = g.input(Tensor::zeros(out_shape));
        let mae = g.loss_mae(out, target_node)?;
        let lgrad = g.loss_grad(out, target_node)?;
        let lnormal = g.loss_normal(out, target_node)?;
        let loss_node = g.weighted_sum(
            &[mae, lgrad, lnormal],
            &[weights.lambda1, weights.lambda2, weights.lambda3],
        )?;
        let sizes: Vec<usize> = g.param_ids().map(|id| g.param(id).data().len()).collect();
        Ok(Trainer {
            model,
            target_node,
            loss_node,
            opt: OptimizerState::new(&sizes),
        })
    }

    /// One optimization step; returns the combined loss value.
    pub fn step(&mut self, input: Tensor<f32>, target: Tensor<f32>, lr: f64, config: &TrainConfig) -> Result<f64> {
        self.model.set_mode(Mode::Training);
        let input_node = self.model.input_node();
        let loss_node = self.loss_node;
        let g = self.model.graph_mut();
        g.set_input(input_node, input)?;
        g.set_input(self.target_node, target)?;
        g.replay()?;
        let loss = g.out(loss_node).data()[0] as f64;
        if !loss.is_finite() {
            return Ok(loss); // caller records epoch/step context
        }
        let mut grads = g.backward(loss_node)?;

        if config.clip_enabled {
            let mut norm_sq = 0.0f64;
            for t in &grads {
                for &v in t.data() {
                    norm_sq += (v as f64) * (v as f64);
                }
            }
            let norm = norm_sq.sqrt();
            if norm > config.grad_clip {
                let scale = (config.grad_clip / norm) as f32;
                for t in &mut grads {
                    for v in t.data_mut() {
                        *v *= scale;
                    }
                }
            }
        }

        self.opt.t += 1;
        let t = self.opt.t as f64;
        match config.optimizer {
            OptimizerKind::Adam => {
                let (b1, b2) = (config.adam_beta1, config.adam_beta2);
                let bias1 = 1.0 - b1.powf(t);
                let bias2 = 1.0 - b2.powf(t);
                for (idx, id) in g.param_ids().enumerate().collect::<Vec<_>>() {
                    let grad = grads[idx].data();
                    let m = &mut self.opt.m[idx];
                    let v = &mut self.opt.v[idx];
                    let data = g.param_mut(id).data_mut();
                    for i in 0..data.len() {
                        let gi = grad[i] as f64;
                        let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                        let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let m_hat = mi / bias1;
                        let v_hat = vi / bias2;
                        data[i] -= (lr * m_hat / (v_hat.sqrt() + config.adam_epsilon)) as f32;
                    }
                }
            }
            OptimizerKind::Sgd => {
                for (idx, id) in g.param_ids().enumerate().collect::<Vec<_>>() {
                    let grad = grads[idx].data();
                    let data = g.param_mut(id).data_mut();
                    for i in 0..data.len() {
                        data[i] -= (lr * grad[i] as f64) as f32;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Inference over a full stacked scene.
    pub fn predict(&mut self, input: &Tensor<f32>) -> Result<DisparityMap> {
        predict_with(&mut self.model, input)
    }
}

/// Inference-mode forward pass returning the (H, W) disparity map.
pub fn predict_with(model: &mut Model<f32>, input: &Tensor<f32>) -> Result<DisparityMap> {
    let out = model.forward(input, Mode::Inference)?;
    let shape = out.shape();
    DisparityMap::new(shape.h, shape.w, out.into_data())
}

// ---- training loop ---------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mse_x100: Option<f64>,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_mse_x100,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let val = self
            .val_mse_x100
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!(
            "{},{},{:.6},{},{:.3}",
            self.epoch, self.lr, self.train_loss, val, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub final_epoch: usize,
}

pub struct TrainSession {
    pub trainer: Trainer,
    pub config: TrainConfig,
    pub next_epoch: usize,
}

impl TrainSession {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = build_model(model_config)?;
        let trainer = Trainer::new(model, &config.weights()?)?;
        Ok(TrainSession {
            trainer,
            config,
            next_epoch: 0,
        })
    }

    /// Run epochs until the schedule stops, `max_epochs` is reached, or the
    /// mean train loss drops below `stop_loss`. Writes per-epoch checkpoints
    /// and a CSV log when `out_dir` is given, keeping the val-best copy.
    pub fn run(&mut self, ds: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        validate_dataset(ds, &self.config)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut epochs = Vec::new();
        let mut step_losses = Vec::new();
        let mut best: Option<(usize, f64)> = None;

        while self.next_epoch < self.config.max_epochs {
            let epoch = self.next_epoch;
            let Some(lr) = lr_schedule(epoch, &self.config) else {
                break;
            };
            let started = Instant::now();
            let batches = make_batches(ds, &self.config, epoch);
            let mut epoch_loss = 0.0f64;
            for (step, batch) in batches.iter().enumerate() {
                let (input, target) = materialize_batch(ds, batch, self.config.patch_size)?;
                let loss = self.trainer.step(input, target, lr, &self.config)?;
                if !loss.is_finite() {
                    return Err(Error::NanLoss { epoch, step });
                }
                epoch_loss += loss;
                step_losses.push(loss);
            }
            epoch_loss /= batches.len().max(1) as f64;

            let val_mse = if ds.val_indices.is_empty() {
                None
            } else {
                let reports = evaluate(&mut self.trainer.model, ds.val())?;
                MetricsReport::mean_of(&reports).map(|r| r.mse_x100)
            };

            let log = EpochLog {
                epoch,
                lr,
                train_loss: epoch_loss,
                val_mse_x100: val_mse,
                seconds: started.elapsed().as_secs_f64(),
            };

            if let Some(dir) = out_dir {
                let path = dir.join(checkpoint_name(epoch));
                save_checkpoint(&path, &self.trainer, &self.config, epoch + 1)?;
            }
            let score = val_mse.unwrap_or(epoch_loss);
            let improved = best.is_none_or(|(_, s)| score < s);
            if improved {
                best = Some((epoch, score));
                if let Some(dir) = out_dir {
                    let src = dir.join(checkpoint_name(epoch));
                    let dst = dir.join("ckpt_best.bin");
                    std::fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
                    std::fs::copy(sidecar_path(&src), sidecar_path(&dst))
                        .map_err(|e| Error::io(sidecar_path(&dst), e))?;
                }
            }

            epochs.push(log);
            self.next_epoch = epoch + 1;
            if self.config.stop_loss > 0.0 && epoch_loss < self.config.stop_loss {
                break;
            }
        }

        if let Some(dir) = out_dir {
            let mut csv = String::from(LOG_HEADER);
            csv.push('\n');
            for log in &epochs {
                csv.push_str(&log.csv_row());
                csv.push('\n');
            }
            let path = dir.join("log.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }

        Ok(TrainOutcome {
            best_epoch: best.map(|(e, _)| e),
            final_epoch: self.next_epoch,
            epochs,
            step_losses,
        })
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:04}.bin")
}

// ---- checkpoints ------------------------------------------------------------

pub fn save_checkpoint(path: &Path, trainer: &Trainer, config: &TrainConfig, next_epoch: usize) -> Result<()> {
    let mut entries = trainer.model.to_entries("");
    let g = trainer.model.graph();
    for (idx, id) in g.param_ids().enumerate() {
        let name = g.param_name(id);
        entries.push(serialize::vec_entry(
            &format!("optim.m.{name}"),
            &trainer.opt.m[idx],
        ));
        entries.push(serialize::vec_entry(
            &format!("optim.v.{name}"),
            &trainer.opt.v[idx],
        ));
    }
    serialize::write_container(path, &entries)?;

    let mut sidecar = String::new();
    for line in trainer.model.config().to_key_values().lines() {
        sidecar.push_str("model.");
        sidecar.push_str(line);
        sidecar.push('\n');
    }
    for line in config.to_key_values().lines() {
        sidecar.push_str("train.");
        sidecar.push_str(line);
        sidecar.push('\n');
    }
    sidecar.push_str(&format!("next_epoch={next_epoch}\n"));
    sidecar.push_str(&format!("adam_t={}\n", trainer.opt.t));
    let sp = sidecar_path(path);
    std::fs::write(&sp, sidecar).map_err(|e| Error::io(&sp, e))
}

pub struct Checkpoint {
    pub trainer: Trainer,
    pub config: TrainConfig,
    pub next_epoch: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let mut model_lines = String::new();
    let mut train_lines = String::new();
    let mut next_epoch = 0usize;
    let mut adam_t = 0usize;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("model.") {
            model_lines.push_str(rest);
            model_lines.push('\n');
        } else if let Some(rest) = line.strip_prefix("train.") {
            train_lines.push_str(rest);
            train_lines.push('\n');
        } else if let Some(v) = line.strip_prefix("next_epoch=") {
            next_epoch = num("next_epoch", v.trim())?;
        } else if let Some(v) = line.strip_prefix("adam_t=") {
            adam_t = num("adam_t", v.trim())?;
        }
    }
    let model_config = ModelConfig::from_key_values(&model_lines)?;
    let config = TrainConfig::parse(&train_lines)?;
    let mut model = build_model::<f32>(model_config)?;
    let entries = serialize::read_container(path)?;
    model.load_entries(&entries, "")?;
    let mut trainer = Trainer::new(model, &config.weights()?)?;
    let g = trainer.model.graph();
    let find = |name: String| -> Result<&Entry> {
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::BadContainer(format!("missing entry '{name}'")))
    };
    for (idx, id) in g.param_ids().enumerate() {
        let name = g.param_name(id).to_string();
        let len = g.param(id).data().len();
        trainer.opt.m[idx] = serialize::entry_to_vec(find(format!("optim.m.{name}"))?, len)?;
        trainer.opt.v[idx] = serialize::entry_to_vec(find(format!("optim.v.{name}"))?, len)?;
    }
    trainer.opt.t = adam_t;
    Ok(Checkpoint {
        trainer,
        config,
        next_epoch,
    })
}

// ---- evaluation --------------------------------------------------------------

/// Inference on full uncropped scenes; one report per scene.
pub fn evaluate<'a>(
    model: &mut Model<f32>,
    scenes: impl Iterator<Item = &'a SceneSample>,
) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for scene in scenes {
        let started = Instant::now();
        let pred = predict_with(model, &scene.sample.input)?;
        let seconds = started.elapsed().as_secs_f64();
        reports.push(MetricsReport::compute(
            &scene.name,
            &pred,
            &scene.sample.target,
            None,
            seconds,
        )?);
    }
    Ok(reports)
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut csv = String::from(MetricsReport::CSV_HEADER);
    csv.push('\n');
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    if let Some(mean) = MetricsReport::mean_of(reports) {
        csv.push_str(&mean.csv_row());
        csv.push('\n');
    }
    csv
}

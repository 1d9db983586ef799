//! Training loops.
//!
//! Gradients are accumulated over single-instance graphs and averaged per
//! batch. Per-instance gradients are computed in parallel against a frozen
//! snapshot of the parameters and summed in batch order, so a run is
//! reproducible regardless of thread count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::optimizer_by_name;
use crate::autograd::Gradients;
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::model::{build_model, Model, ModelConfig, ParamGroup};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub optimizer: String,
    /// `None` uses the optimizer's default.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Initial word-embedding table, e.g. from pre-trained vectors.
    pub embeddings: Option<Tensor>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            learning_rate: None,
            epochs: 50,
            batch_size: 32,
            clip_norm: Some(10.0),
            embeddings: None,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip norm {c} must be positive")));
            }
        }
        optimizer_by_name(&self.optimizer, self.learning_rate).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,valid_acc";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.valid_acc));
        }
        s
    }
}

/// Scales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Per-instance dropout stream, independent of batch layout and threads.
fn instance_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Mean loss and mean gradient over `batch`. `indices` are dataset
/// positions used to seed dropout.
pub fn batch_gradients(
    model: &Model,
    data: &[Instance],
    indices: &[usize],
    seed: u64,
    epoch: usize,
) -> Result<(f64, Gradients)> {
    let per: Vec<(f64, Gradients)> = indices
        .par_iter()
        .map(|&i| {
            let mut rng = instance_rng(seed, epoch, i);
            model.loss_and_gradients(&data[i], true, Some(&mut rng), None)
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::new();
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        total.accumulate(g);
    }
    let n = indices.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

fn non_empty(name: &str, data: &[Instance]) -> Result<()> {
    if data.is_empty() {
        Err(Error::InvalidArgument(format!("{name} set is empty")))
    } else {
        Ok(())
    }
}

/// Trains every trainable parameter of `model` in place, keeping the
/// parameters from the epoch with the best validation accuracy (earliest on
/// ties). `on_epoch` is called after each epoch.
pub fn fit(
    model: &mut Model,
    train: &[Instance],
    valid: &[Instance],
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainReport> {
    opts.validate()?;
    non_empty("training", train)?;
    non_empty("validation", valid)?;
    let start = Instant::now();
    let mut optimizer = optimizer_by_name(&opts.optimizer, opts.learning_rate)?;
    let seed = model.config.seed;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(u64::MAX);
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, crate::params::ParamStore)> = None;

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(opts.batch_size).enumerate() {
            let diverged = |detail: String| Error::Diverged { epoch, step: step + 1, detail };
            let (loss, mut grads) = batch_gradients(model, train, batch, seed, epoch).map_err(|e| match e {
                Error::NumericDomain { op, detail } => diverged(format!("{op}: {detail}")),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            if let Some(c) = opts.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            optimizer.step(&mut model.params, &grads).map_err(|e| match e {
                Error::NumericDomain { detail, .. } => diverged(detail),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let stats = EpochStats { epoch, train_loss: loss_sum / train.len() as f64, valid_acc: accuracy(model, valid)? };
        on_epoch(&stats);
        if best.as_ref().is_none_or(|(_, acc, _)| stats.valid_acc > *acc) {
            best = Some((epoch, stats.valid_acc, model.params.clone()));
        }
        epochs.push(stats);
    }

    let (best_epoch, best_valid_acc, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainReport { epochs, best_epoch, best_valid_acc, wall_clock_secs: start.elapsed().as_secs_f64() })
}

/// Freshly initialised model, with `opts.embeddings` copied in if given.
fn initial_model(config: &ModelConfig, seed: u64, opts: &TrainOptions) -> Result<Model> {
    let mut model = build_model(config, seed)?;
    if let Some(table) = &opts.embeddings {
        let id = model.embedding_id();
        let want = model.params.get(id).shape().to_vec();
        if table.shape() != want.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "embedding table has shape {:?}, model expects {want:?}",
                table.shape()
            )));
        }
        let mut table = table.clone();
        table.data_mut()[..want[1]].fill(0.0);
        *model.params.get_mut(id) = table;
    }
    Ok(model)
}

/// Result of a training procedure: the final model plus one report per stage.
pub struct TrainOutcome {
    pub model: Model,
    pub stages: Vec<(String, TrainReport)>,
}

pub trait TrainProcedure: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(
        &self,
        config: &ModelConfig,
        train: &[Instance],
        valid: &[Instance],
        opts: &TrainOptions,
        on_epoch: &mut dyn FnMut(&str, &EpochStats),
    ) -> Result<TrainOutcome>;
}

/// All modules trained jointly from one initialisation.
pub struct EndToEnd;

impl TrainProcedure for EndToEnd {
    fn name(&self) -> &'static str {
        "end_to_end"
    }

    fn run(
        &self,
        config: &ModelConfig,
        train: &[Instance],
        valid: &[Instance],
        opts: &TrainOptions,
        on_epoch: &mut dyn FnMut(&str, &EpochStats),
    ) -> Result<TrainOutcome> {
        let mut model = initial_model(config, config.seed, opts)?;
        let report = fit(&mut model, train, valid, opts, &mut |s| on_epoch("end_to_end", s))?;
        Ok(TrainOutcome { model, stages: vec![("end_to_end".into(), report)] })
    }
}

/// Stage 1 trains without elimination (`l_passes = 0`). Stage 2 copies the
/// encoder and interaction weights, freezes them together with the word
/// embeddings, and trains elimination plus a freshly initialised selection
/// module.
pub struct TwoStage;

impl TwoStage {
    fn frozen_in_stage2(group: ParamGroup) -> bool {
        matches!(group, ParamGroup::Encoder | ParamGroup::Interaction)
    }
}

impl TrainProcedure for TwoStage {
    fn name(&self) -> &'static str {
        "two_stage"
    }

    fn run(
        &self,
        config: &ModelConfig,
        train: &[Instance],
        valid: &[Instance],
        opts: &TrainOptions,
        on_epoch: &mut dyn FnMut(&str, &EpochStats),
    ) -> Result<TrainOutcome> {
        if config.l_passes == 0 {
            return Err(Error::Config("l_passes: two_stage training needs at least one elimination pass".into()));
        }
        let stage1_cfg = ModelConfig { l_passes: 0, ..config.clone() };
        let mut stage1 = initial_model(&stage1_cfg, config.seed, opts)?;
        let r1 = fit(&mut stage1, train, valid, opts, &mut |s| on_epoch("stage1", s))?;

        let mut model = build_model(config, config.seed.wrapping_add(1))?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            if Self::frozen_in_stage2(ParamGroup::of(&name)) {
                let src = stage1.params.by_name(&name).expect("stage 1 shares encoder and interaction layout");
                *model.params.get_mut(id) = src.clone();
                model.params.set_trainable(id, false);
            }
        }
        let r2 = fit(&mut model, train, valid, opts, &mut |s| on_epoch("stage2", s))?;

        let emb = model.embedding_id();
        for id in model.params.ids().collect::<Vec<_>>() {
            let t = id != emb || config.finetune_embeddings;
            model.params.set_trainable(id, t);
        }
        Ok(TrainOutcome { model, stages: vec![("stage1".into(), r1), ("stage2".into(), r2)] })
    }
}

static PROCEDURES: &[&dyn TrainProcedure] = &[&EndToEnd, &TwoStage];

pub fn procedure_names() -> Vec<&'static str> {
    PROCEDURES.iter().map(|p| p.name()).collect()
}

pub fn procedure_by_name(name: &str) -> Result<&'static dyn TrainProcedure> {
    PROCEDURES.iter().copied().find(|p| p.name() == name).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown training mode {name:?} (expected one of {:?})", procedure_names()))
    })
}

/// Runs the named procedure.
pub fn train(
    config: &ModelConfig,
    train: &[Instance],
    valid: &[Instance],
    mode: &str,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&str, &EpochStats),
) -> Result<TrainOutcome> {
    procedure_by_name(mode)?.run(config, train, valid, opts, on_epoch)
}

//! Training loop: batch -> embeddings -> exhaustive triplets -> loss -> Adam.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::autonn::checkpoint::AdamSnapshot;
use crate::autonn::{Adam, AdamConfig, BnMode, Checkpoint};
use crate::dataset::{BatchIterator, PairSet};
use crate::exec::Execution;
use crate::geometry::View;
use crate::model::{ModelConfig, SiameseModel};
use crate::objective::{batch_loss_with_grad, LossParams, TripletBatch};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 12;
/// Offset between the model seed and the batch-order seed.
const BATCH_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossParams,
    pub steps: usize,
    pub seed: u64,
    pub augment: bool,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            loss: LossParams::default(),
            steps: 1000,
            seed: 0,
            augment: false,
            checkpoint_every: 0,
        }
    }
}

pub struct TrainOutcome {
    pub model: SiameseModel,
    pub optimizer: Adam,
    /// Mean batch loss per step, step 1 first.
    pub losses: Vec<f64>,
}

/// Where the loop writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn model_manifest(&self) -> PathBuf {
        self.dir.join("model.manifest")
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }

    pub fn timing_log(&self) -> PathBuf {
        self.dir.join("timing.csv")
    }
}

pub fn checkpoint_with_optimizer(model: &SiameseModel, opt: &Adam) -> Checkpoint {
    let mut ckpt = model.to_checkpoint();
    let to32 = |v: &Vec<f64>| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    ckpt.adam = Some(AdamSnapshot {
        step: opt.step,
        config: opt.config,
        m: opt.m.iter().map(to32).collect(),
        v: opt.v.iter().map(to32).collect(),
    });
    ckpt
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Runs `cfg.steps` optimizer steps over `data`.
///
/// The loss log (`step,epoch,loss`) is a pure function of the config and the
/// data; wall-clock timings go to a separate file.
pub fn train(
    cfg: &TrainConfig,
    data: &PairSet,
    outputs: Option<&TrainOutputs>,
    exec: Execution,
) -> Result<TrainOutcome> {
    if cfg.batch_size < 2 {
        return Err(Error::validation("batch size must be at least 2"));
    }
    if data.len() < cfg.batch_size {
        return Err(Error::validation(format!(
            "need at least {} training pairs, got {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut model = SiameseModel::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = Adam::new(cfg.adam);
    let ground_width = data.ground[0].width;
    let mut batches = BatchIterator::new(
        data.len(),
        cfg.batch_size,
        cfg.seed.wrapping_add(BATCH_SEED_OFFSET),
        cfg.augment,
        ground_width,
    );

    let mut logs = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            std::fs::write(o.model_manifest(), cfg.model.manifest(cfg.seed))
                .map_err(|e| Error::io(o.model_manifest(), e))?;
            let mut loss = create(&o.loss_log())?;
            let mut timing = create(&o.timing_log())?;
            writeln!(loss, "step,epoch,loss").map_err(|e| Error::io(o.loss_log(), e))?;
            writeln!(timing, "step,seconds").map_err(|e| Error::io(o.timing_log(), e))?;
            Some((loss, timing))
        }
        None => None,
    };

    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = batches.next().expect("non-empty dataset yields batches");
        let (g_img, s_img) = data.assemble(&batch)?;
        model.zero_grad();
        let (g_emb, g_cache) = model.forward(View::Ground, &g_img, BnMode::Train, exec)?;
        let (s_emb, s_cache) = model.forward(View::Satellite, &s_img, BnMode::Train, exec)?;
        let bl = batch_loss_with_grad(&TripletBatch::new(&g_emb, &s_emb)?, cfg.loss, exec)?;
        if !bl.loss.is_finite() {
            return Err(Error::numeric(format!("loss became {} at step {step}", bl.loss)));
        }
        model.backward(&g_cache, &bl.grad_ground, exec)?;
        model.backward(&s_cache, &bl.grad_satellite, exec)?;
        opt.step(&mut model.params_mut())?;
        losses.push(bl.loss);

        if let (Some((loss_f, timing_f)), Some(o)) = (logs.as_mut(), outputs) {
            writeln!(loss_f, "{step},{},{}", batches.epoch(), bl.loss)
                .map_err(|e| Error::io(o.loss_log(), e))?;
            writeln!(timing_f, "{step},{:.3}", start.elapsed().as_secs_f64())
                .map_err(|e| Error::io(o.timing_log(), e))?;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
                checkpoint_with_optimizer(&model, &opt).save(&o.checkpoint())?;
            }
        }
        if step % 50 == 0 || step == 1 {
            info!(
                "step {step}/{} loss {:.5} ({:.1}s)",
                cfg.steps,
                bl.loss,
                start.elapsed().as_secs_f64()
            );
        }
    }
    if let Some(o) = outputs {
        checkpoint_with_optimizer(&model, &opt).save(&o.checkpoint())?;
    }
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        losses,
    })
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

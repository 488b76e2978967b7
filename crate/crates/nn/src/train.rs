//! The training loop.

use std::path::Path;

use audible_core::losses::ObjectiveOutput;
use audible_core::sampling::draw_clip_start;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{assemble, ClipRef, PreparedVideo};
use crate::error::{NnError, Result};
use crate::graph::{Gradients, Graph, StatUpdate};
use crate::infer::evaluate;
use crate::model::{apply_stat_updates, Network, BN_MOMENTUM};
use crate::optim::Adam;
use crate::params::ParamStore;

/// Losses of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub action: f64,
    pub ce: f64,
    pub focal: f64,
    pub contrastive: f64,
    pub temporal: f64,
}

impl StepLog {
    fn from_output(step: usize, out: &ObjectiveOutput) -> Self {
        Self {
            step,
            total: out.total,
            action: out.action.total,
            ce: out.action.ce,
            focal: out.action.focal,
            contrastive: out.contrastive.total(),
            temporal: out.temporal,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for everything random in step `step`, so a resumed run draws the
/// same batches as an uninterrupted one.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    splitmix(seed ^ splitmix(step as u64))
}

/// Gradients of one batch, before the optimizer sees them.
pub struct BatchGradients {
    pub output: ObjectiveOutput,
    pub grads: Gradients,
    pub stat_updates: Vec<StatUpdate>,
    /// False when the network produced NaN or infinite probabilities; the
    /// loss clamps its inputs and can look finite regardless.
    pub probs_finite: bool,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: Network,
    pub store: ParamStore,
    pub opt: Adam,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub best_f1: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FitSummary {
    pub history: Vec<StepLog>,
    pub best_f1: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (net, store) = Network::new(config.net(), config.rng_seed);
        let opt = Adam::new(&store, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self {
            config,
            net,
            store,
            opt,
            step: 0,
            best_f1: None,
        })
    }

    /// Resumes from a checkpoint; missing optimizer state starts fresh moments.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let net = ckpt.network();
        let c = &ckpt.config;
        let opt = ckpt
            .optimizer
            .unwrap_or_else(|| Adam::new(&ckpt.store, c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps));
        Self {
            config: ckpt.config,
            net,
            store: ckpt.store,
            opt,
            step: ckpt.step,
            best_f1: ckpt.best_f1,
        }
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            store: self.store.clone(),
            optimizer: with_optimizer.then(|| self.opt.clone()),
            best_f1: self.best_f1,
        }
    }

    /// Steps until the iteration or epoch limit, whichever comes first.
    pub fn total_steps(&self, num_videos: usize) -> usize {
        let per_epoch = num_videos.div_ceil(self.config.batch_size).max(1);
        self.config
            .epochs
            .map_or(self.config.iterations, |e| self.config.iterations.min(e * per_epoch))
    }

    /// Clips for `step`: videos drawn uniformly with replacement, one random
    /// contiguous clip from each.
    pub fn sample_clips(&self, videos: &[PreparedVideo], step: usize) -> Vec<ClipRef> {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(self.config.rng_seed, step));
        (0..self.config.batch_size)
            .map(|_| {
                let video = rng.random_range(0..videos.len());
                let (start, real_len) = draw_clip_start(videos[video].num_frames, self.config.clip_len, rng.random());
                ClipRef { video, start, real_len }
            })
            .collect()
    }

    /// Forward and backward pass on `clips` without touching the weights.
    pub fn batch_gradients(&self, videos: &[PreparedVideo], clips: &[ClipRef]) -> Result<BatchGradients> {
        let asm = assemble(videos, clips, self.config.clip_len);
        let mut g = Graph::new(&self.store, true);
        let out = self.net.forward(&mut g, &asm.batch);
        let rows = &asm.real_rows;
        let probs_finite = g.value(out.probs).is_finite();
        let probs = g.select_rows(out.probs, rows);
        let fm = g.select_rows(out.motion_pooled, rows);
        let fnm = g.select_rows(out.non_motion_pooled, rows);
        let maps = g.select_rows(out.maps, rows);
        let report = g.objective(
            probs,
            &asm.targets,
            fm,
            fnm,
            maps,
            &asm.clip_real,
            &self.config.loss_weights(),
        )?;
        let grads = g.backward(report.var);
        let stat_updates = g.take_stat_updates();
        Ok(BatchGradients {
            output: report.output,
            grads,
            stat_updates,
            probs_finite,
        })
    }

    pub fn train_step(&mut self, videos: &[PreparedVideo]) -> Result<StepLog> {
        if videos.is_empty() {
            return Err(NnError::Data("training set is empty".into()));
        }
        let clips = self.sample_clips(videos, self.step);
        let bg = self.batch_gradients(videos, &clips)?;
        let log = StepLog::from_output(self.step, &bg.output);
        if !(log.total.is_finite() && bg.probs_finite) {
            let ids: Vec<String> = clips
                .iter()
                .map(|c| format!("{}@{}", videos[c.video].id, c.start))
                .collect();
            return Err(NnError::NonFinite {
                step: self.step,
                detail: format!("{log:?}, clips {ids:?}"),
            });
        }
        self.opt.update(&mut self.store, &bg.grads);
        apply_stat_updates(&mut self.store, &bg.stat_updates, BN_MOMENTUM);
        self.step += 1;
        Ok(log)
    }

    /// Trains to the configured length. With a checkpoint directory, writes
    /// `last.ckpt` every `checkpoint_every` steps and at the end, and
    /// `best.ckpt` whenever validation F1 improves.
    pub fn fit(
        &mut self,
        videos: &[PreparedVideo],
        val: Option<&[PreparedVideo]>,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<FitSummary> {
        let total = self.total_steps(videos.len());
        let mut summary = FitSummary::default();
        while self.step < total {
            let log = self.train_step(videos)?;
            if log.step % self.config.log_every == 0 || self.step == total {
                log::info!(
                    "step {} total {:.5} ce {:.5} focal {:.5} cont {:.5} temp {:.5}",
                    log.step,
                    log.total,
                    log.ce,
                    log.focal,
                    log.contrastive,
                    log.temporal
                );
            }
            on_step(&log);
            summary.history.push(log);
            if self.step % self.config.checkpoint_every == 0 || self.step == total {
                self.checkpoint_round(val, checkpoint_dir)?;
            }
        }
        summary.best_f1 = self.best_f1;
        Ok(summary)
    }

    fn checkpoint_round(&mut self, val: Option<&[PreparedVideo]>, dir: Option<&Path>) -> Result<()> {
        let mut improved = false;
        if let Some(v) = val.filter(|v| !v.is_empty()) {
            let (report, _) = evaluate(&self.net, &self.store, &self.config, v)?;
            log::info!("step {} validation f1 {:.4} nme {:.4}", self.step, report.f1, report.nme);
            if self.best_f1.is_none_or(|b| report.f1 > b) {
                self.best_f1 = Some(report.f1);
                improved = true;
            }
        }
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir).map_err(|e| NnError::io(dir, e))?;
            let ckpt = self.checkpoint(true);
            ckpt.save(&dir.join("last.ckpt"))?;
            if improved {
                ckpt.save(&dir.join("best.ckpt"))?;
            }
        }
        Ok(())
    }
}

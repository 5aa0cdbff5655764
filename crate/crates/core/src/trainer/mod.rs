//! Two-stage training: the world model on real bootstrap-anchor data, then
//! joint fine-tuning of the world model, actor and critic inside imagined
//! rollouts for the deployment anchors.

pub mod checkpoint;
pub mod config;
pub mod log;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, RngState};
pub use config::{config_hash, ImagineUpdate, TrainConfig};
pub use log::{LogRow, Stage, TrainingLog, LOG_HEADER};

use crate::dssm::{Dssm, GreedyPolicy, ImaginePolicy, ImagineSetup, RolloutOptions};
use crate::env::{make_batches, AnchorLayout, MapRegion, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::eval::mean_error;
use crate::numkit::{adam_step, AdamConfig, AdamState, ParamGroup, ParamStore, Tape};
use crate::scheduler::{actor_critic_losses, discounted_returns, AcConfig, ActorCritic, PolicyState, SchedulingAction};

/// Random streams of one seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_PRETRAIN: u64 = 1;
pub const STREAM_IMAGINE: u64 = 2;
pub const STREAM_VALIDATION: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// World model plus scheduler heads over a single parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub dssm: Dssm,
    pub ac: ActorCritic,
}

impl Model {
    pub fn new(cfg: &TrainConfig, map: &MapRegion) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let dssm = Dssm::new(&mut store, cfg.dssm_config(map), &mut rng)?;
        let mut ac_cfg = AcConfig::new(cfg.anchors, cfg.k, 2 * crate::dssm::Z_DIM + dssm.config.state_dim());
        ac_cfg.gamma = cfg.gamma;
        ac_cfg.entropy_coef = cfg.entropy_coef;
        ac_cfg.entropy_bonus = cfg.entropy_bonus;
        let ac = ActorCritic::new(&mut store, ac_cfg, &mut rng);
        Ok(Self { store, dssm, ac })
    }

    /// Scheduler subset size used from now on (the architecture does not
    /// depend on it).
    pub fn set_k(&mut self, k: usize) {
        self.ac.config.k = k;
    }

    /// Greedy-policy tracking over `layout` (all anchors when `k` equals the
    /// layout size).
    pub fn track_greedy(&self, record: &TrajectoryRecord, layout: &AnchorLayout) -> Result<Vec<[f64; 2]>> {
        let mut policy = GreedyPolicy { ac: &self.ac };
        Ok(self.dssm.track(&self.store, record, layout, &mut policy)?.estimates)
    }

    pub fn track_all(&self, record: &TrajectoryRecord, layout: &AnchorLayout) -> Result<Vec<[f64; 2]>> {
        let n = layout.len();
        let mut all = move |_: usize, _: &PolicyState| Ok(SchedulingAction::all(n));
        Ok(self.dssm.track(&self.store, record, layout, &mut all)?.estimates)
    }
}

/// Mean position error of `track` over records with ground truth.
fn test_mae(
    records: &[TrajectoryRecord],
    mut track: impl FnMut(&TrajectoryRecord) -> Result<Vec<[f64; 2]>>,
) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for r in records {
        let Some(p) = r.positions() else { return Ok(None) };
        est.extend(track(r)?);
        truth.extend(p);
    }
    Ok(Some(mean_error(&est, &truth)?))
}

/// Deterministic hold-out of `ceil(fraction · n)` records (at least one
/// record stays in training).
pub fn split_validation(
    records: &[TrajectoryRecord],
    fraction: f64,
    seed: u64,
) -> (Vec<TrajectoryRecord>, Vec<TrajectoryRecord>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut seeded(seed, STREAM_SPLIT));
    let n_val = ((fraction * records.len() as f64).ceil() as usize).min(records.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| records[i].clone()).collect();
    let mut train_idx = idx[n_val..].to_vec();
    train_idx.sort_unstable();
    (train_idx.iter().map(|&i| records[i].clone()).collect(), val)
}

/// Real-data inputs of the first stage.
#[derive(Debug, Clone, Copy)]
pub struct PretrainData<'a> {
    pub train: &'a [TrajectoryRecord],
    pub val: &'a [TrajectoryRecord],
    /// Records with ground truth for the per-epoch tracking error.
    pub test: &'a [TrajectoryRecord],
    pub layout: &'a AnchorLayout,
}

/// Inputs of the imagination stage.
#[derive(Debug, Clone, Copy)]
pub struct ImagineData<'a> {
    pub map: &'a MapRegion,
    pub bootstrap: &'a AnchorLayout,
    pub deployment: &'a AnchorLayout,
    /// Real deployment-anchor records with ground truth, for the test MAE.
    pub test: &'a [TrajectoryRecord],
}

/// Optimizer and stream state of a run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub stage: Stage,
    /// Epochs completed in `stage`.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub adam: Vec<(String, AdamState)>,
    pub log: TrainingLog,
}

/// Optimizer steps per pretraining epoch: one pass worth of disjoint
/// windows, rounded up to whole batches.
pub fn pretrain_batches_per_epoch(records: &[TrajectoryRecord], cfg: &TrainConfig) -> usize {
    let windows: usize = records.iter().map(|r| r.len() / cfg.seq_len).sum();
    windows.div_ceil(cfg.batch_size).max(1)
}

impl Trainer {
    fn adam_config(cfg: &TrainConfig, lr: f64, total: u64) -> AdamConfig {
        AdamConfig { lr, weight_decay: cfg.weight_decay, total_steps: total.max(1), clip_norm: Some(cfg.clip_norm), ..AdamConfig::default() }
    }

    pub fn start_pretrain(model: Model, cfg: &TrainConfig, train: &[TrajectoryRecord]) -> Self {
        let total = (cfg.dssm_epochs * pretrain_batches_per_epoch(train, cfg)) as u64;
        let ids = model.store.trainable_in(&ParamGroup::DSSM);
        let adam = AdamState::new(&model.store, ids, Self::adam_config(cfg, cfg.lr_dssm, total));
        Self {
            cfg: cfg.clone(),
            model,
            stage: Stage::Pretrain,
            epoch: 0,
            rng: seeded(cfg.seed, STREAM_PRETRAIN),
            adam: vec![("dssm".into(), adam)],
            log: TrainingLog::default(),
        }
    }

    pub fn start_imagine(model: Model, cfg: &TrainConfig, log: TrainingLog) -> Self {
        let total = cfg.imagine_epochs as u64;
        let s = &model.store;
        let adam = vec![
            ("dssm".to_string(), AdamState::new(s, s.trainable_in(cfg.imagine_update.groups()), Self::adam_config(cfg, cfg.lr_dssm, total))),
            ("actor".to_string(), AdamState::new(s, model.ac.trainable_actor(s), Self::adam_config(cfg, cfg.lr_ac, total))),
            ("critic".to_string(), AdamState::new(s, model.ac.trainable_critic(s), Self::adam_config(cfg, cfg.lr_ac, total))),
        ];
        let mut model = model;
        model.set_k(cfg.k);
        Self { cfg: cfg.clone(), model, stage: Stage::Imagine, epoch: 0, rng: seeded(cfg.seed, STREAM_IMAGINE), adam, log }
    }

    fn diverged(&self, batch: usize, source: Error) -> Error {
        Error::Diverged { stage: self.stage.as_str(), epoch: self.epoch + 1, batch, source: Box::new(source) }
    }

    fn filter_loss(&self, records: &[TrajectoryRecord], layout: &AnchorLayout, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut total = 0.0;
        let mut steps = 0;
        let n = layout.len();
        for r in records {
            for start in (0..=r.len().saturating_sub(self.cfg.seq_len)).step_by(self.cfg.seq_len) {
                if r.len() < self.cfg.seq_len {
                    break;
                }
                let w = r.window(start, self.cfg.seq_len);
                let mut tape = Tape::new();
                let mut all = |_: usize, _: &PolicyState| Ok(SchedulingAction::all(n));
                let opts = RolloutOptions { sample: true, record: false };
                let out = self.model.dssm.filter_rollout(&mut tape, &self.model.store, &w, layout, &mut all, opts, rng)?;
                total += tape.scalar(out.loss);
                steps += w.len();
            }
        }
        Ok(if steps == 0 { f64::NAN } else { total / steps as f64 })
    }

    /// One pretraining epoch; returns its log row.
    pub fn pretrain_epoch(&mut self, data: &PretrainData) -> Result<LogRow> {
        if self.stage != Stage::Pretrain {
            return Err(Error::contract("pretrain_epoch outside the pretraining stage"));
        }
        let t0 = Instant::now();
        let cfg = self.cfg.clone();
        let batcher = make_batches(data.train, cfg.batch_size, cfg.seq_len)?;
        let n = data.layout.len();
        let scale = 1.0 / (cfg.batch_size * cfg.seq_len) as f64;
        let mut train_loss = 0.0;
        let mut lr = 0.0;
        let mask = self.optimized_mask();
        let batches = pretrain_batches_per_epoch(data.train, &cfg);
        for b in 0..batches {
            let batch = batcher.next_batch(&mut self.rng);
            let ids = self.adam[0].1.params.clone();
            self.model.store.zero_grad(&ids);
            let mut batch_loss = 0.0;
            for seq in &batch.sequences {
                let mut tape = Tape::new();
                let mut all = |_: usize, _: &PolicyState| Ok(SchedulingAction::all(n));
                let opts = RolloutOptions { sample: true, record: false };
                let out = self
                    .model
                    .dssm
                    .filter_rollout(&mut tape, &self.model.store, seq, data.layout, &mut all, opts, &mut self.rng)
                    .map_err(|e| self.diverged(b + 1, e))?;
                let loss = tape.scale(out.loss, scale);
                batch_loss += tape.scalar(loss);
                tape.backward_for(loss, &mut self.model.store, |id| mask[id.index()]).map_err(|e| self.diverged(b + 1, e))?;
            }
            if !batch_loss.is_finite() {
                return Err(self.diverged(b + 1, Error::NonFinite { op: "pretraining loss", node: 0 }));
            }
            lr = adam_step(&mut self.model.store, &mut self.adam[0].1)?;
            train_loss += batch_loss / batches as f64;
        }
        let mut vrng = seeded(cfg.seed, STREAM_VALIDATION);
        let val_loss = self.filter_loss(data.val, data.layout, &mut vrng)?;
        self.epoch += 1;
        let eval_now = self.epoch % cfg.eval_every == 0 || self.epoch == cfg.dssm_epochs || self.epoch == 1;
        let test_mae = if eval_now { test_mae(data.test, |r| self.model.track_all(r, data.layout))? } else { None };
        let row = LogRow {
            epoch: self.epoch,
            stage: Stage::Pretrain,
            train_loss,
            val_loss,
            test_mae,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        self.log.push(row)?;
        ::log::info!(
            "pretrain epoch {} loss {:.4} val {:.4} mae {:?} lr {:.2e}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.test_mae,
            row.lr
        );
        Ok(row)
    }

    fn imagine_setup<'a>(&self, data: &'a ImagineData, policy: ImaginePolicy) -> ImagineSetup<'a> {
        ImagineSetup {
            map: data.map,
            bootstrap: data.bootstrap,
            deployment: data.deployment,
            steps: self.cfg.seq_len,
            policy,
            reward_set: self.cfg.reward_set,
            init_speed_stddev: self.cfg.init_speed_stddev,
            record: false,
        }
    }

    /// Which parameters some optimizer steps; frozen ones get no gradients.
    fn optimized_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.model.store.len()];
        for id in self.adam.iter().flat_map(|(_, s)| &s.params) {
            mask[id.index()] = true;
        }
        mask
    }

    /// Imagined-rollout loss per step under a fixed stream, without updates.
    pub fn imagine_validation_loss(&self, data: &ImagineData) -> Result<f64> {
        let setup = self.imagine_setup(data, ImaginePolicy::Greedy);
        let mut rng = seeded(self.cfg.seed, STREAM_VALIDATION);
        let mut total = 0.0;
        for _ in 0..self.cfg.val_rollouts {
            let mut tape = Tape::new();
            let out = self.model.dssm.imagine_rollout(&mut tape, &self.model.store, &self.model.ac, &setup, &mut rng)?;
            total += tape.scalar(out.loss);
        }
        Ok(total / (self.cfg.val_rollouts * self.cfg.seq_len) as f64)
    }

    /// One imagination epoch: `B` dreamed rollouts, then one update of each
    /// of the world model, actor and critic.
    pub fn imagine_epoch(&mut self, data: &ImagineData) -> Result<LogRow> {
        if self.stage != Stage::Imagine {
            return Err(Error::contract("imagine_epoch outside the imagination stage"));
        }
        let t0 = Instant::now();
        let cfg = self.cfg.clone();
        let setup = self.imagine_setup(data, ImaginePolicy::Sample);
        self.model.store.zero_all_grads();
        let inv_b = 1.0 / cfg.batch_size as f64;
        let dssm_scale = inv_b / cfg.seq_len as f64;
        let coef = cfg.effective_entropy_coef();
        let mask = self.optimized_mask();
        let mut train_loss = 0.0;
        let mut returns = Vec::with_capacity(cfg.batch_size * cfg.seq_len);
        for b in 0..cfg.batch_size {
            let mut tape = Tape::new();
            let out = self
                .model
                .dssm
                .imagine_rollout(&mut tape, &self.model.store, &self.model.ac, &setup, &mut self.rng)
                .map_err(|e| self.diverged(b + 1, e))?;
            let ac = actor_critic_losses(&mut tape, std::slice::from_ref(&out.buffer), cfg.gamma, coef);
            let dl = tape.scale(out.loss, dssm_scale);
            let al = tape.scale(ac.actor, inv_b);
            let cl = tape.scale(ac.critic, inv_b);
            let total = tape.add_n(&[dl, al, cl]);
            train_loss += tape.scalar(dl);
            tape.backward_for(total, &mut self.model.store, |id| mask[id.index()]).map_err(|e| self.diverged(b + 1, e))?;
            returns.extend(discounted_returns(&out.buffer.rewards(), cfg.gamma));
        }
        if !train_loss.is_finite() {
            return Err(self.diverged(cfg.batch_size, Error::NonFinite { op: "imagination loss", node: 0 }));
        }
        let mut lr = 0.0;
        for (name, state) in &mut self.adam {
            let r = adam_step(&mut self.model.store, state)?;
            if name == "dssm" {
                lr = r;
            }
        }
        self.model.ac.update_return_stats(&mut self.model.store, &returns);
        if !self.model.store.all_finite() {
            return Err(self.diverged(cfg.batch_size, Error::NonFinite { op: "parameter update", node: 0 }));
        }
        self.epoch += 1;
        let val_loss = self.imagine_validation_loss(data)?;
        let eval_now = self.epoch % cfg.eval_every == 0 || self.epoch == cfg.imagine_epochs || self.epoch == 1;
        let test_mae = if eval_now { test_mae(data.test, |r| self.model.track_greedy(r, data.deployment))? } else { None };
        let row = LogRow {
            epoch: self.epoch,
            stage: Stage::Imagine,
            train_loss,
            val_loss,
            test_mae,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        self.log.push(row)?;
        ::log::info!(
            "imagine epoch {} loss {:.4} val {:.4} mae {:?} lr {:.2e}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.test_mae,
            row.lr
        );
        Ok(row)
    }
}

/// Pretrains the world model for `cfg.dssm_epochs` epochs.
pub fn pretrain_dssm(model: Model, data: &PretrainData, cfg: &TrainConfig) -> Result<(Model, TrainingLog)> {
    let mut t = Trainer::start_pretrain(model, cfg, data.train);
    for _ in 0..cfg.dssm_epochs {
        t.pretrain_epoch(data)?;
    }
    Ok((t.model, t.log))
}

/// Runs the imagination stage, writing `imagine_epoch_<e>.ldck` into
/// `checkpoint_dir` every `cfg.checkpoint_every` epochs.
pub fn imagine_train(
    model: Model,
    data: &ImagineData,
    cfg: &TrainConfig,
    log: TrainingLog,
    checkpoint_dir: Option<&Path>,
) -> Result<(Model, TrainingLog)> {
    let mut t = Trainer::start_imagine(model, cfg, log);
    run_imagine(&mut t, data, checkpoint_dir)?;
    Ok((t.model, t.log))
}

/// Continues `t` until its imagination epochs are done.
pub fn run_imagine(t: &mut Trainer, data: &ImagineData, checkpoint_dir: Option<&Path>) -> Result<()> {
    while t.epoch < t.cfg.imagine_epochs {
        t.imagine_epoch(data)?;
        if let Some(dir) = checkpoint_dir {
            if t.epoch % t.cfg.checkpoint_every == 0 {
                Checkpoint::capture(t, data.map).save(&dir.join(format!("imagine_epoch_{}.ldck", t.epoch)))?;
            }
        }
    }
    Ok(())
}

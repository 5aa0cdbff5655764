use sha2::{Digest, Sha256};

use crate::dssm::{DssmConfig, KlGradient, RewardSet};
use crate::env::{AnchorId, MapRegion};
use crate::error::{Error, Result};
use crate::numkit::ParamGroup;

/// World-model parameters refined on imagined data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagineUpdate {
    /// Only the posterior encoder; the generative parts stay as learned
    /// from real readings.
    Encoder,
    /// Every world-model group. Fitting the generator to its own samples
    /// lets the range noise grow and the posterior collapse onto the prior.
    All,
}

impl ImagineUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            ImagineUpdate::Encoder => "encoder",
            ImagineUpdate::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "encoder" => Some(ImagineUpdate::Encoder),
            "all" => Some(ImagineUpdate::All),
            _ => None,
        }
    }

    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            ImagineUpdate::Encoder => &[ParamGroup::Encoder],
            ImagineUpdate::All => &ParamGroup::DSSM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dssm_epochs: usize,
    pub imagine_epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub rnn_layers: usize,
    pub width: usize,
    pub heads: usize,
    pub lr_dssm: f64,
    pub lr_ac: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub gamma: f64,
    pub anchors: usize,
    pub k: usize,
    pub dt: f64,
    pub seed: u64,
    pub bootstrap_ids: Vec<AnchorId>,
    pub deployment_ids: Vec<AnchorId>,
    pub entropy_bonus: bool,
    pub entropy_coef: f64,
    pub kl_gradient: KlGradient,
    pub reward_set: RewardSet,
    pub imagine_update: ImagineUpdate,
    pub residual_scale: f64,
    /// Share of trajectories held out for validation during pretraining.
    pub val_fraction: f64,
    /// Imagined rollouts scored for the per-epoch validation loss.
    pub val_rollouts: usize,
    /// Test MAE is computed every this many epochs (and at the last one).
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub init_speed_stddev: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dssm_epochs: 50,
            imagine_epochs: 300,
            batch_size: 32,
            seq_len: 32,
            hidden: 50,
            rnn_layers: 2,
            width: 64,
            heads: 4,
            lr_dssm: 1e-3,
            lr_ac: 1e-3,
            weight_decay: 1e-3,
            clip_norm: 10.0,
            gamma: 0.99,
            anchors: 5,
            k: 3,
            dt: 0.1,
            seed: 0,
            bootstrap_ids: vec![1, 2, 3],
            deployment_ids: vec![4, 5, 6, 7, 8],
            entropy_bonus: true,
            entropy_coef: 1e-2,
            kl_gradient: KlGradient::Both,
            reward_set: RewardSet::BootstrapAndScheduled,
            imagine_update: ImagineUpdate::Encoder,
            residual_scale: 0.1,
            val_fraction: 0.1,
            val_rollouts: 8,
            eval_every: 10,
            checkpoint_every: 50,
            init_speed_stddev: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("hidden", self.hidden),
            ("rnn_layers", self.rnn_layers),
            ("width", self.width),
            ("heads", self.heads),
            ("anchors", self.anchors),
            ("val_rollouts", self.val_rollouts),
            ("eval_every", self.eval_every),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                e.push(format!("{k} must be positive"));
            }
        }
        for (k, v) in [("lr_dssm", self.lr_dssm), ("lr_ac", self.lr_ac), ("dt", self.dt), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0) || !v.is_finite() {
                e.push(format!("{k} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            e.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            e.push(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if self.k < 3 || self.k > self.anchors {
            e.push(format!("k must satisfy 3 <= k <= anchors ({}), got {}", self.anchors, self.k));
        }
        if self.deployment_ids.len() != self.anchors {
            e.push(format!(
                "anchors = {} but {} deployment ids are listed",
                self.anchors,
                self.deployment_ids.len()
            ));
        }
        if self.bootstrap_ids.len() < 3 {
            e.push("at least 3 bootstrap anchors are required".into());
        }
        if self.bootstrap_ids.iter().any(|id| self.deployment_ids.contains(id)) {
            e.push("bootstrap and deployment anchor sets overlap".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            e.push(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if !(self.entropy_coef >= 0.0) {
            e.push(format!("entropy_coef must be >= 0, got {}", self.entropy_coef));
        }
        if !(self.init_speed_stddev > 0.0) {
            e.push(format!("init_speed_stddev must be positive, got {}", self.init_speed_stddev));
        }
        if self.heads > 0 && self.width % self.heads != 0 {
            e.push(format!("width {} is not divisible by heads {}", self.width, self.heads));
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    pub fn dssm_config(&self, map: &MapRegion) -> DssmConfig {
        DssmConfig {
            hidden: self.hidden,
            rnn_layers: self.rnn_layers,
            width: self.width,
            heads: self.heads,
            residual_scale: self.residual_scale,
            kl_gradient: self.kl_gradient,
            ..DssmConfig::for_map(map, self.dt)
        }
    }

    /// Entropy weight actually applied.
    pub fn effective_entropy_coef(&self) -> f64 {
        if self.entropy_bonus {
            self.entropy_coef
        } else {
            0.0
        }
    }
}

/// Digest of every setting that shapes the parameter tensors or their
/// meaning. Checkpoints refuse to load under a different digest.
pub fn config_hash(cfg: &TrainConfig, map: &MapRegion) -> [u8; 32] {
    let d = cfg.dssm_config(map);
    let text = format!(
        "hidden={};rnn_layers={};width={};heads={};anchors={};residual_scale={};dt={};center={},{};scale={}",
        d.hidden, d.rnn_layers, d.width, d.heads, cfg.anchors, d.residual_scale, d.dt, d.center[0], d.center[1], d.scale
    );
    Sha256::digest(text.as_bytes()).into()
}

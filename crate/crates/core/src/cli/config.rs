//! Experiment configuration: a flat `key = value` text file. Blank lines and
//! lines starting with `#` are ignored; unknown keys are errors. Writing a
//! config and reading it back gives the same config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dssm::{KlGradient, RewardSet};
use crate::ekf::EkfConfig;
use crate::env::{AnchorId, AnchorLayout, MapRegion, MotionParams, NoiseModel, Wall};
use crate::error::{Error, Result};
use crate::eval::Method;
use crate::trainer::{ImagineUpdate, TrainConfig};

pub const SEED_ENV: &str = "LOCDREAMER_SEED";

/// Which anchors the pretraining command learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSet {
    Bootstrap,
    Deployment,
}

impl AnchorSet {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorSet::Bootstrap => "bootstrap",
            AnchorSet::Deployment => "deployment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bootstrap" => Some(AnchorSet::Bootstrap),
            "deployment" => Some(AnchorSet::Deployment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Seed from the file; the command line and environment may supply one
    /// instead.
    pub seed: Option<u64>,
    pub map: MapRegion,
    /// `anchor_id,x,y` file; the built-in residential layout when absent.
    pub anchor_layout: Option<PathBuf>,
    pub noise: NoiseModel,
    pub motion: MotionParams,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub trajectory_len: usize,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Static-point ranging file read by `convert-dataset`.
    pub raw_dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub pretrain_anchors: AnchorSet,
    pub methods: Vec<Method>,
    pub checkpoint_real: Option<PathBuf>,
    pub checkpoint_scheduled: Option<PathBuf>,
    pub checkpoint_all_imagined: Option<PathBuf>,
    pub heatmap_nx: usize,
    pub heatmap_ny: usize,
    pub ekf_sigma_acc: f64,
    pub ekf_sigma_n: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ekf = EkfConfig::new(0.1);
        Self {
            train: TrainConfig::default(),
            seed: None,
            map: MapRegion::residential_floor(),
            anchor_layout: None,
            noise: NoiseModel::default(),
            motion: MotionParams::default(),
            train_trajectories: 40,
            test_trajectories: 10,
            trajectory_len: 64,
            train_data: None,
            test_data: None,
            raw_dataset: None,
            out_dir: None,
            pretrain_anchors: AnchorSet::Bootstrap,
            methods: Method::ALL.to_vec(),
            checkpoint_real: None,
            checkpoint_scheduled: None,
            checkpoint_all_imagined: None,
            heatmap_nx: 9,
            heatmap_ny: 12,
            ekf_sigma_acc: ekf.sigma_acc,
            ekf_sigma_n: ekf.sigma_n,
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, found `{v}`")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn ids(v: &str) -> std::result::Result<Vec<AnchorId>, String> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn walls(v: &str) -> std::result::Result<Vec<Wall>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(';')
        .map(|w| {
            let c: Vec<f64> = w.split_whitespace().map(num).collect::<std::result::Result<_, _>>()?;
            if c.len() != 4 {
                return Err(format!("wall `{}` needs 4 coordinates", w.trim()));
            }
            Wall::new([c[0], c[1]], [c[2], c[3]]).map_err(|e| e.to_string())
        })
        .collect()
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "dssm_epochs" => t.dssm_epochs = num(v)?,
            "imagine_epochs" => t.imagine_epochs = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "seq_len" => t.seq_len = num(v)?,
            "hidden" => t.hidden = num(v)?,
            "rnn_layers" => t.rnn_layers = num(v)?,
            "width" => t.width = num(v)?,
            "heads" => t.heads = num(v)?,
            "lr_dssm" => t.lr_dssm = num(v)?,
            "lr_ac" => t.lr_ac = num(v)?,
            "weight_decay" => t.weight_decay = num(v)?,
            "clip_norm" => t.clip_norm = num(v)?,
            "gamma" => t.gamma = num(v)?,
            "anchors" => t.anchors = num(v)?,
            "k" => t.k = num(v)?,
            "dt" => t.dt = num(v)?,
            "bootstrap_ids" => t.bootstrap_ids = ids(v)?,
            "deployment_ids" => t.deployment_ids = ids(v)?,
            "entropy_bonus" => t.entropy_bonus = flag(v)?,
            "entropy_coef" => t.entropy_coef = num(v)?,
            "kl_gradient" => t.kl_gradient = KlGradient::parse(v).ok_or(format!("unknown kl_gradient `{v}`"))?,
            "reward_set" => t.reward_set = RewardSet::parse(v).ok_or(format!("unknown reward_set `{v}`"))?,
            "imagine_update" => {
                t.imagine_update = ImagineUpdate::parse(v).ok_or(format!("unknown imagine_update `{v}`"))?
            }
            "residual_scale" => t.residual_scale = num(v)?,
            "val_fraction" => t.val_fraction = num(v)?,
            "val_rollouts" => t.val_rollouts = num(v)?,
            "eval_every" => t.eval_every = num(v)?,
            "checkpoint_every" => t.checkpoint_every = num(v)?,
            "init_speed_stddev" => t.init_speed_stddev = num(v)?,
            "seed" => self.seed = if v.is_empty() { None } else { Some(num(v)?) },
            "map_width" => self.map.width = num(v)?,
            "map_height" => self.map.height = num(v)?,
            "walls" => self.map.walls = walls(v)?,
            "anchor_layout" => self.anchor_layout = path(v),
            "los_stddev" => self.noise.los_stddev = num(v)?,
            "nlos_probability_per_wall" => self.noise.nlos_probability_per_wall = num(v)?,
            "nlos_bias_mean" => self.noise.nlos_bias_mean = num(v)?,
            "nlos_bias_stddev" => self.noise.nlos_bias_stddev = num(v)?,
            "speed_min" => self.motion.speed_min = num(v)?,
            "speed_max" => self.motion.speed_max = num(v)?,
            "turn_rate_stddev" => self.motion.turn_rate_stddev = num(v)?,
            "train_trajectories" => self.train_trajectories = num(v)?,
            "test_trajectories" => self.test_trajectories = num(v)?,
            "trajectory_len" => self.trajectory_len = num(v)?,
            "train_data" => self.train_data = path(v),
            "test_data" => self.test_data = path(v),
            "raw_dataset" => self.raw_dataset = path(v),
            "out_dir" => self.out_dir = path(v),
            "pretrain_anchors" => {
                self.pretrain_anchors = AnchorSet::parse(v).ok_or(format!("unknown anchor set `{v}`"))?
            }
            "methods" => {
                self.methods = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|m| Method::parse(m.trim()).ok_or(format!("unknown method `{}`", m.trim())))
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "checkpoint_real" => self.checkpoint_real = path(v),
            "checkpoint_scheduled" => self.checkpoint_scheduled = path(v),
            "checkpoint_all_imagined" => self.checkpoint_all_imagined = path(v),
            "heatmap_nx" => self.heatmap_nx = num(v)?,
            "heatmap_ny" => self.heatmap_ny = num(v)?,
            "ekf_sigma_acc" => self.ekf_sigma_acc = num(v)?,
            "ekf_sigma_n" => self.ekf_sigma_n = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let wall_text = self
            .map
            .walls
            .iter()
            .map(|w| format!("{} {} {} {}", w.a[0], w.a[1], w.b[0], w.b[1]))
            .collect::<Vec<_>>()
            .join("; ");
        vec![
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            ("dssm_epochs", t.dssm_epochs.to_string()),
            ("imagine_epochs", t.imagine_epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seq_len", t.seq_len.to_string()),
            ("hidden", t.hidden.to_string()),
            ("rnn_layers", t.rnn_layers.to_string()),
            ("width", t.width.to_string()),
            ("heads", t.heads.to_string()),
            ("lr_dssm", t.lr_dssm.to_string()),
            ("lr_ac", t.lr_ac.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("gamma", t.gamma.to_string()),
            ("anchors", t.anchors.to_string()),
            ("k", t.k.to_string()),
            ("dt", t.dt.to_string()),
            ("bootstrap_ids", join(&t.bootstrap_ids)),
            ("deployment_ids", join(&t.deployment_ids)),
            ("entropy_bonus", t.entropy_bonus.to_string()),
            ("entropy_coef", t.entropy_coef.to_string()),
            ("kl_gradient", t.kl_gradient.as_str().to_string()),
            ("reward_set", t.reward_set.as_str().to_string()),
            ("imagine_update", t.imagine_update.as_str().to_string()),
            ("residual_scale", t.residual_scale.to_string()),
            ("val_fraction", t.val_fraction.to_string()),
            ("val_rollouts", t.val_rollouts.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("init_speed_stddev", t.init_speed_stddev.to_string()),
            ("map_width", self.map.width.to_string()),
            ("map_height", self.map.height.to_string()),
            ("walls", wall_text),
            ("anchor_layout", show(&self.anchor_layout)),
            ("los_stddev", self.noise.los_stddev.to_string()),
            ("nlos_probability_per_wall", self.noise.nlos_probability_per_wall.to_string()),
            ("nlos_bias_mean", self.noise.nlos_bias_mean.to_string()),
            ("nlos_bias_stddev", self.noise.nlos_bias_stddev.to_string()),
            ("speed_min", self.motion.speed_min.to_string()),
            ("speed_max", self.motion.speed_max.to_string()),
            ("turn_rate_stddev", self.motion.turn_rate_stddev.to_string()),
            ("train_trajectories", self.train_trajectories.to_string()),
            ("test_trajectories", self.test_trajectories.to_string()),
            ("trajectory_len", self.trajectory_len.to_string()),
            ("train_data", show(&self.train_data)),
            ("test_data", show(&self.test_data)),
            ("raw_dataset", show(&self.raw_dataset)),
            ("out_dir", show(&self.out_dir)),
            ("pretrain_anchors", self.pretrain_anchors.as_str().to_string()),
            ("methods", join(&self.methods.iter().map(|m| m.name()).collect::<Vec<_>>())),
            ("checkpoint_real", show(&self.checkpoint_real)),
            ("checkpoint_scheduled", show(&self.checkpoint_scheduled)),
            ("checkpoint_all_imagined", show(&self.checkpoint_all_imagined)),
            ("heatmap_nx", self.heatmap_nx.to_string()),
            ("heatmap_ny", self.heatmap_ny.to_string()),
            ("ekf_sigma_acc", self.ekf_sigma_acc.to_string()),
            ("ekf_sigma_n", self.ekf_sigma_n.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses `text` on top of the defaults, reporting every bad line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let k = k.trim();
            if let Err(e) = cfg.set(k, v.trim()) {
                errors.push(format!("line {}: `{k}` = `{}`: {e}", i + 1, v.trim()));
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Seed precedence: command line, then the file, then the environment.
    pub fn resolve_seed(&mut self, cli: Option<u64>, env: Option<&str>) -> Result<u64> {
        let seed = match (cli, self.seed, env) {
            (Some(s), ..) | (None, Some(s), _) => s,
            (None, None, Some(e)) => e
                .trim()
                .parse()
                .map_err(|err| Error::Config(vec![format!("{SEED_ENV} = `{e}` is not a u64 seed: {err}")]))?,
            (None, None, None) => {
                return Err(Error::Config(vec![format!(
                    "no seed given: pass --seed, set `seed` in the config, or set {SEED_ENV}"
                )]))
            }
        };
        self.seed = Some(seed);
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn layout(&self) -> Result<AnchorLayout> {
        match &self.anchor_layout {
            Some(p) => AnchorLayout::load_csv(p),
            None => Ok(AnchorLayout::residential_default()),
        }
    }

    pub fn ekf(&self) -> EkfConfig {
        EkfConfig { sigma_acc: self.ekf_sigma_acc, sigma_n: self.ekf_sigma_n, dt: self.train.dt }
    }

    /// Checks every setting and referenced input file, listing all problems.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        let mut absorb = |r: Result<()>| match r {
            Err(Error::Config(list)) => e.extend(list),
            Err(other) => e.push(other.to_string()),
            Ok(()) => {}
        };
        absorb(self.train.validate());
        absorb(self.noise.validate());
        absorb(self.ekf().validate());
        absorb(MapRegion::new(self.map.width, self.map.height, Vec::new()).map(|_| ()));
        if !(self.motion.speed_min >= 0.0 && self.motion.speed_max >= self.motion.speed_min) {
            e.push(format!("speeds must satisfy 0 <= speed_min <= speed_max, got {} and {}", self.motion.speed_min, self.motion.speed_max));
        }
        if !(self.motion.turn_rate_stddev >= 0.0) {
            e.push(format!("turn_rate_stddev must be >= 0, got {}", self.motion.turn_rate_stddev));
        }
        for (k, v) in [("trajectory_len", self.trajectory_len), ("heatmap_nx", self.heatmap_nx), ("heatmap_ny", self.heatmap_ny)] {
            if v == 0 {
                e.push(format!("{k} must be positive"));
            }
        }
        for (k, p) in [
            ("anchor_layout", &self.anchor_layout),
            ("train_data", &self.train_data),
            ("test_data", &self.test_data),
            ("raw_dataset", &self.raw_dataset),
            ("checkpoint_real", &self.checkpoint_real),
            ("checkpoint_scheduled", &self.checkpoint_scheduled),
            ("checkpoint_all_imagined", &self.checkpoint_all_imagined),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    e.push(format!("{k}: file `{}` does not exist", p.display()));
                }
            }
        }
        if self.anchor_layout.as_ref().is_none_or(|p| p.is_file()) {
            match self.layout() {
                Ok(l) => {
                    for id in self.train.bootstrap_ids.iter().chain(&self.train.deployment_ids) {
                        if l.get(*id).is_none() {
                            e.push(format!("anchor {id} is not in the anchor layout"));
                        } else if !self.map.contains(l.get(*id).expect("present").position) {
                            e.push(format!("anchor {id} lies outside the map"));
                        }
                    }
                }
                Err(err) => e.push(err.to_string()),
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = ExperimentConfig { seed: Some(7), train_data: Some("a b/train.csv".into()), ..Default::default() };
        c.train.lr_dssm = 1.0 / 3.0;
        c.train.k = 4;
        c.methods = vec![Method::EkfAll, Method::LocDreamerScheduling];
        c.noise.nlos_bias_mean = 0.1 + 0.2;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(ExperimentConfig::parse(&ExperimentConfig::default().to_text()).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_and_bad_keys_are_all_reported() {
        let err = ExperimentConfig::parse("# comment\nhiden = 3\nk = three\nseed = 1\nno equals\n").unwrap_err();
        let Error::Config(list) = err else { panic!("expected config error") };
        assert_eq!(list.len(), 3);
        assert!(list[0].contains("hiden") && list[0].contains("unknown key"));
        assert!(list[1].contains("line 3"));
    }

    #[test]
    fn seed_precedence() {
        let mut c = ExperimentConfig { seed: Some(5), ..Default::default() };
        assert_eq!(c.clone().resolve_seed(Some(9), Some("3")).unwrap(), 9);
        assert_eq!(c.resolve_seed(None, Some("3")).unwrap(), 5);
        assert_eq!(c.train.seed, 5);
        let mut none = ExperimentConfig::default();
        assert_eq!(none.clone().resolve_seed(None, Some("3")).unwrap(), 3);
        assert!(matches!(none.resolve_seed(None, None), Err(Error::Config(_))));
        assert!(ExperimentConfig::default().resolve_seed(None, Some("x")).is_err());
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut c = ExperimentConfig::default();
        c.train.k = 9;
        c.train.gamma = 2.0;
        c.train_data = Some("/nonexistent/train.csv".into());
        let Err(Error::Config(list)) = c.validate() else { panic!("expected config error") };
        assert!(list.iter().any(|m| m.contains("k must")));
        assert!(list.iter().any(|m| m.contains("gamma")));
        assert!(list.iter().any(|m| m.contains("train_data")));
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}

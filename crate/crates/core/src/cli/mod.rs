//! Experiment commands behind the `locdreamer` binary. Each command echoes
//! its resolved configuration into the output directory, then writes its
//! outputs and returns their paths.

pub mod config;
pub mod convert;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{AnchorSet, ExperimentConfig, SEED_ENV};
pub use convert::convert_static_points;

use crate::env::{export_dataset, ingest_dataset, AnchorLayout, IngestConfig, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::eval::{
    export_plot_data, heatmap_mean_gdop, random_mean_gdop, ratio_statistics, run_benchmark, scheduling_heatmap,
    synthetic_data, BenchmarkModels, MetricReport, PlotData, SyntheticSetup, REFERENCE_IMPROVEMENT, REFERENCE_MAE,
    REFERENCE_REAL_FRACTION,
};
use crate::trainer::{
    imagine_train, pretrain_dssm, seeded, split_validation, Checkpoint, ImagineData, Model, PretrainData, Stage,
    TrainingLog,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";

/// Stream for the random subsets of the heatmap comparison.
const STREAM_HEATMAP: u64 = 7;

/// A validated command invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub dry_run: bool,
}

impl Invocation {
    /// Loads and validates the configuration. `--out` wins over `out_dir`;
    /// the seed follows [`ExperimentConfig::resolve_seed`].
    pub fn prepare(
        config: Option<&Path>,
        seed: Option<u64>,
        out: Option<&Path>,
        checkpoint: Option<&Path>,
        dry_run: bool,
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut cfg = match config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let seed = cfg.resolve_seed(seed, env_seed)?;
        if let Some(o) = out {
            cfg.out_dir = Some(o.to_path_buf());
        }
        if let Some(c) = checkpoint {
            cfg.checkpoint_scheduled = Some(c.to_path_buf());
        }
        cfg.validate()?;
        let out = cfg.out_dir.clone().ok_or_else(|| Error::Config(vec!["no output directory: pass --out or set out_dir".into()]))?;
        Ok(Self { checkpoint: cfg.checkpoint_scheduled.clone(), config: cfg, seed, out, dry_run })
    }

    fn begin(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        self.config.save(&self.out.join(RESOLVED_CONFIG))
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config(vec!["this command needs --checkpoint or checkpoint_scheduled".into()]))
    }
}

fn read_records(path: &Option<PathBuf>, key: &str, cfg: &ExperimentConfig) -> Result<Vec<TrajectoryRecord>> {
    let p = path.as_ref().ok_or_else(|| Error::Config(vec![format!("{key} is required for this command")]))?;
    let recs = ingest_dataset(p, &IngestConfig { dt: cfg.train.dt })?;
    if recs.is_empty() {
        return Err(Error::contract(format!("{} holds no trajectories", p.display())));
    }
    Ok(recs)
}

fn restrict(records: &[TrajectoryRecord], layout: &AnchorLayout) -> Vec<TrajectoryRecord> {
    let ids = layout.ids();
    records.iter().map(|r| r.restricted_to(&ids)).collect()
}

fn setup(cfg: &ExperimentConfig) -> Result<SyntheticSetup> {
    Ok(SyntheticSetup {
        map: cfg.map.clone(),
        layout: cfg.layout()?,
        noise: cfg.noise,
        motion: cfg.motion,
        train_trajectories: cfg.train_trajectories,
        test_trajectories: cfg.test_trajectories,
        trajectory_len: cfg.trajectory_len,
        cfg: cfg.train.clone(),
        ekf: cfg.ekf(),
    })
}

/// Writes `train.csv`, `test.csv` and `anchors.csv` for the configured map,
/// anchors and noise.
pub fn cmd_simulate(inv: &Invocation) -> Result<Vec<PathBuf>> {
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let s = setup(&inv.config)?;
    let (train, test) = synthetic_data(&s, inv.seed)?;
    let files = [inv.out.join("train.csv"), inv.out.join("test.csv"), inv.out.join("anchors.csv")];
    export_dataset(&train, &files[0])?;
    export_dataset(&test, &files[1])?;
    s.layout.save_csv(&files[2])?;
    Ok(files.to_vec())
}

/// Trains the world model on real readings; writes `pretrain.ldck` and
/// `pretrain_log.csv`.
pub fn cmd_pretrain(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = &inv.config;
    let records = read_records(&cfg.train_data, "train_data", cfg)?;
    let all = cfg.layout()?;
    let ids = match cfg.pretrain_anchors {
        AnchorSet::Bootstrap => &cfg.train.bootstrap_ids,
        AnchorSet::Deployment => &cfg.train.deployment_ids,
    };
    for id in ids {
        if !records.iter().any(|r| r.steps.iter().any(|s| s.measurements.contains_key(id))) {
            return Err(Error::contract(format!(
                "anchor {id} of the {} set has no readings in the training data",
                cfg.pretrain_anchors.as_str()
            )));
        }
    }
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let layout = all.select(ids)?;
    let (fit, val) = split_validation(&restrict(&records, &layout), cfg.train.val_fraction, inv.seed);
    let test = match &cfg.test_data {
        Some(_) => restrict(&read_records(&cfg.test_data, "test_data", cfg)?, &layout),
        None => Vec::new(),
    };
    let data = PretrainData { train: &fit, val: &val, test: &test, layout: &layout };
    let (model, log) = pretrain_dssm(Model::new(&cfg.train, &cfg.map)?, &data, &cfg.train)?;
    let files = [inv.out.join("pretrain.ldck"), inv.out.join("pretrain_log.csv")];
    Checkpoint::of_model(&model, &cfg.train, &cfg.map, Stage::Pretrain, cfg.train.dssm_epochs, &log).save(&files[0])?;
    log.write_csv(&files[1])?;
    Ok(files.to_vec())
}

/// Imagination training from a pretrained checkpoint; writes
/// `imagine.ldck` and `imagine_log.csv` (periodic checkpoints go to
/// `intermediate/`).
pub fn cmd_imagine_train(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = &inv.config;
    let ckpt = Checkpoint::load(inv.require_checkpoint()?)?;
    let model = ckpt.restore_model(&cfg.train, &cfg.map)?;
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let all = cfg.layout()?;
    let boot = all.select(&cfg.train.bootstrap_ids)?;
    let dep = all.select(&cfg.train.deployment_ids)?;
    let test = match &cfg.test_data {
        Some(_) => restrict(&read_records(&cfg.test_data, "test_data", cfg)?, &dep),
        None => Vec::new(),
    };
    let data = ImagineData { map: &cfg.map, bootstrap: &boot, deployment: &dep, test: &test };
    let inter = inv.out.join("intermediate");
    let periodic = cfg.train.checkpoint_every < cfg.train.imagine_epochs;
    if periodic {
        std::fs::create_dir_all(&inter)?;
    }
    let (model, log) = imagine_train(model, &data, &cfg.train, ckpt.log, periodic.then_some(inter.as_path()))?;
    let files = [inv.out.join("imagine.ldck"), inv.out.join("imagine_log.csv")];
    Checkpoint::of_model(&model, &cfg.train, &cfg.map, Stage::Imagine, cfg.train.imagine_epochs, &log).save(&files[0])?;
    log.write_csv(&files[1])?;
    Ok(files.to_vec())
}

fn load_optional(path: &Option<PathBuf>, inv: &Invocation) -> Result<Option<(Model, TrainingLog)>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            Ok(Some((ck.restore_model(&inv.config.train, &inv.config.map)?, ck.log)))
        }
    }
}

/// Text table of the reports next to the published values, with the ratio
/// statistics when the needed methods are present.
pub fn summary(reports: &[MetricReport], skipped: &[String]) -> String {
    let mut s = String::from("method                     mae     rmse    p50     p90     reference_mae\n");
    for r in reports {
        let reference = REFERENCE_MAE.iter().find(|(m, _)| m.name() == r.method).map(|(_, v)| *v);
        let _ = writeln!(
            s,
            "{:<26} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {}",
            r.method,
            r.mae,
            r.rmse,
            r.p50,
            r.p90,
            reference.map(|v| format!("{v:.2}")).unwrap_or_default()
        );
    }
    for n in skipped {
        let _ = writeln!(s, "note: {n}");
    }
    match ratio_statistics(reports) {
        Some((imp, frac)) => {
            let _ = writeln!(
                s,
                "improvement over ekf-random: {:.1}% (reference {:.0}%)\nshare of real-data accuracy: {:.1}% (reference {:.0}%)",
                100.0 * imp,
                100.0 * REFERENCE_IMPROVEMENT,
                100.0 * frac,
                100.0 * REFERENCE_REAL_FRACTION
            );
        }
        None => s.push_str("ratio statistics need ekf-random, dssm-all-real and locdreamer-scheduling\n"),
    }
    s
}

/// Scores the configured methods on `test_data`; writes `metrics.csv`,
/// `trajectories.csv`, `summary.txt` and, with a scheduling checkpoint,
/// `heatmap.csv` and `learning_curve.csv`.
pub fn cmd_evaluate(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = &inv.config;
    let test = read_records(&cfg.test_data, "test_data", cfg)?;
    let real = load_optional(&cfg.checkpoint_real, inv)?;
    let scheduled = load_optional(&inv.checkpoint, inv)?;
    let all_imagined = load_optional(&cfg.checkpoint_all_imagined, inv)?;
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let dep = cfg.layout()?.select(&cfg.train.deployment_ids)?;
    let test = restrict(&test, &dep);
    let models = BenchmarkModels {
        real: real.as_ref().map(|m| &m.0),
        scheduled: scheduled.as_ref().map(|m| &m.0),
        all_imagined: all_imagined.as_ref().map(|m| &m.0),
    };
    let k = scheduled.as_ref().map_or(cfg.train.k, |m| m.0.ac.config.k);
    let mut out = run_benchmark(&test, &dep, models, k, inv.seed, &cfg.ekf())?;
    let keep = |name: &str| cfg.methods.iter().any(|m| m.name() == name);
    out.reports.retain(|r| keep(&r.method));
    out.tracks.retain(|(m, _)| keep(m.name()));
    let heat = match &scheduled {
        Some((m, _)) => Some(scheduling_heatmap(m, &cfg.map, &dep, cfg.heatmap_nx, cfg.heatmap_ny)?),
        None => None,
    };
    let data = PlotData {
        reports: Some(&out.reports),
        tracks: Some(&out.tracks),
        heatmap: heat.as_ref(),
        learning_curve: scheduled.as_ref().map(|m| &m.1),
    };
    let mut files = export_plot_data(&data, &inv.out)?;
    let text = summary(&out.reports, &out.skipped);
    print!("{text}");
    let p = inv.out.join("summary.txt");
    std::fs::write(&p, text)?;
    files.push(p);
    Ok(files)
}

/// Greedy subsets over the map grid; writes `heatmap.csv` and reports the
/// mean GDOP against random subsets.
pub fn cmd_heatmap(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = &inv.config;
    let ck = Checkpoint::load(inv.require_checkpoint()?)?;
    let model = ck.restore_model(&cfg.train, &cfg.map)?;
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let dep = cfg.layout()?.select(&cfg.train.deployment_ids)?;
    let grid = scheduling_heatmap(&model, &cfg.map, &dep, cfg.heatmap_nx, cfg.heatmap_ny)?;
    let greedy = heatmap_mean_gdop(&grid, &dep)?;
    let random = random_mean_gdop(&grid, &dep, 1000, &mut seeded(inv.seed, STREAM_HEATMAP))?;
    println!("mean gdop: greedy {greedy:.4}, random {random:.4}");
    export_plot_data(&PlotData { heatmap: Some(&grid), ..PlotData::default() }, &inv.out)
}

/// Turns a static-point survey (`raw_dataset`) into `dataset.csv`.
pub fn cmd_convert_dataset(inv: &Invocation) -> Result<Vec<PathBuf>> {
    let cfg = &inv.config;
    let src = cfg.raw_dataset.as_ref().ok_or_else(|| Error::Config(vec!["raw_dataset is required".into()]))?;
    let records = convert_static_points(&std::fs::read_to_string(src)?, src, cfg.trajectory_len, cfg.train.dt)?;
    if records.is_empty() {
        return Err(Error::contract(format!("{} yields no record of {} steps", src.display(), cfg.trajectory_len)));
    }
    if inv.dry_run {
        return Ok(Vec::new());
    }
    inv.begin()?;
    let p = inv.out.join("dataset.csv");
    export_dataset(&records, &p)?;
    Ok(vec![p])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> PathBuf {
        let mut c = ExperimentConfig { seed: Some(4), ..Default::default() };
        c.train.dssm_epochs = 1;
        c.train.imagine_epochs = 1;
        c.train.batch_size = 2;
        c.train.seq_len = 8;
        c.train.hidden = 4;
        c.train.width = 8;
        c.train.heads = 2;
        c.train.val_rollouts = 1;
        c.train_trajectories = 4;
        c.test_trajectories = 2;
        c.trajectory_len = 16;
        c.heatmap_nx = 2;
        c.heatmap_ny = 2;
        let p = dir.join("exp.cfg");
        c.save(&p).unwrap();
        p
    }

    #[test]
    fn dry_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = dir.path().join("out");
        let inv = Invocation::prepare(Some(&cfg), None, Some(&out), None, true, None).unwrap();
        assert!(cmd_simulate(&inv).unwrap().is_empty());
        assert!(!out.exists());
    }

    #[test]
    fn missing_seed_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let err = Invocation::prepare(None, None, Some(&out), None, false, None).unwrap_err();
        assert!(err.to_string().contains("no seed"));
    }

    #[test]
    fn simulate_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = dir.path().join("sim");
        let inv = Invocation::prepare(Some(&cfg), None, Some(&out), None, false, None).unwrap();
        let files = cmd_simulate(&inv).unwrap();
        let text = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 16 * 8);
        assert!(out.join(RESOLVED_CONFIG).is_file());
    }

    #[test]
    fn pretrain_names_missing_bootstrap_anchor() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = dir.path().join("sim");
        let inv = Invocation::prepare(Some(&cfg), None, Some(&out), None, false, None).unwrap();
        let files = cmd_simulate(&inv).unwrap();
        let recs = ingest_dataset(&files[0], &IngestConfig::default()).unwrap();
        let without: Vec<_> = recs.iter().map(|r| r.restricted_to(&[1, 3, 4, 5, 6, 7, 8])).collect();
        let data = dir.path().join("no2.csv");
        export_dataset(&without, &data).unwrap();
        let mut c = ExperimentConfig::load(&cfg).unwrap();
        c.train_data = Some(data);
        c.save(&cfg).unwrap();
        let inv = Invocation::prepare(Some(&cfg), None, Some(&dir.path().join("pre")), None, false, None).unwrap();
        let err = cmd_pretrain(&inv).unwrap_err();
        assert!(err.to_string().contains("anchor 2"), "{err}");
    }
}

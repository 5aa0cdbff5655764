use std::fmt;

use rand_chacha::ChaCha8Rng;

use super::metrics::{compute_metrics, MetricReport, Track};
use crate::ekf::{ekf_run, EkfConfig};
use crate::env::{
    generate_trajectory, simulate_measurements, AnchorLayout, MapRegion, MotionParams, NoiseModel, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::scheduler::{random_subset, PolicyState, SchedulingAction};
use crate::trainer::{
    imagine_train, pretrain_dssm, seeded, split_validation, ImagineData, Model, PretrainData, TrainConfig,
    TrainingLog,
};

/// Stream for the random schedules shared by the random-scheduling methods.
const STREAM_EVAL: u64 = 5;
/// Stream for synthetic data.
const STREAM_DATA: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    EkfRandom,
    EkfAll,
    DssmAllReal,
    LocDreamerRandom,
    LocDreamerAllImagined,
    LocDreamerScheduling,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::EkfRandom,
        Method::EkfAll,
        Method::DssmAllReal,
        Method::LocDreamerRandom,
        Method::LocDreamerAllImagined,
        Method::LocDreamerScheduling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::EkfRandom => "ekf-random",
            Method::EkfAll => "ekf-all",
            Method::DssmAllReal => "dssm-all-real",
            Method::LocDreamerRandom => "locdreamer-random",
            Method::LocDreamerAllImagined => "locdreamer-all-imagined",
            Method::LocDreamerScheduling => "locdreamer-scheduling",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Published tracking MAE (m) of the six methods, for side-by-side display.
pub const REFERENCE_MAE: [(Method, f64); 6] = [
    (Method::EkfRandom, 1.05),
    (Method::EkfAll, 0.92),
    (Method::DssmAllReal, 0.57),
    (Method::LocDreamerRandom, 1.07),
    (Method::LocDreamerAllImagined, 0.85),
    (Method::LocDreamerScheduling, 0.66),
];

/// Reference improvement of scheduling over random EKF, and the share of
/// the real-data model's accuracy retained.
pub const REFERENCE_IMPROVEMENT: f64 = 0.37;
pub const REFERENCE_REAL_FRACTION: f64 = 0.86;

/// `(1 − sched/ekf_random, real/sched)` from a set of reports.
pub fn ratio_statistics(reports: &[MetricReport]) -> Option<(f64, f64)> {
    let mae = |m: Method| reports.iter().find(|r| r.method == m.name()).map(|r| r.mae);
    let (sched, ekf, real) = (mae(Method::LocDreamerScheduling)?, mae(Method::EkfRandom)?, mae(Method::DssmAllReal)?);
    Some((1.0 - sched / ekf, real / sched))
}

/// Trained models available to the benchmark; absent ones are skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkModels<'a> {
    /// World model trained on real readings from the deployment anchors.
    pub real: Option<&'a Model>,
    /// Imagination-trained model with the scheduling subset size.
    pub scheduled: Option<&'a Model>,
    /// Imagination-trained model that always uses every deployment anchor.
    pub all_imagined: Option<&'a Model>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOutput {
    pub reports: Vec<MetricReport>,
    pub tracks: Vec<(Method, Vec<Track>)>,
    /// One line per method that could not run.
    pub skipped: Vec<String>,
}

impl BenchmarkOutput {
    pub fn mae(&self, m: Method) -> Option<f64> {
        self.reports.iter().find(|r| r.method == m.name()).map(|r| r.mae)
    }
}

/// Random K-subsets for every step of every record, shared by both random
/// methods so they see identical schedules.
fn random_schedules(records: &[TrajectoryRecord], a: usize, k: usize, seed: u64) -> Result<Vec<Vec<SchedulingAction>>> {
    let mut rng: ChaCha8Rng = seeded(seed, STREAM_EVAL);
    records.iter().map(|r| (0..r.len()).map(|_| random_subset(a, k, &mut rng)).collect()).collect()
}

fn at(schedule: &[SchedulingAction], t: usize) -> Result<SchedulingAction> {
    schedule
        .get(t.wrapping_sub(1))
        .cloned()
        .ok_or_else(|| Error::contract(format!("no scheduled action for step {t}")))
}

/// Runs `f` on every record, spreading records over the available cores.
fn par_map<T: Send>(records: &[TrajectoryRecord], f: impl Fn(usize, &TrajectoryRecord) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len().max(1));
    if workers <= 1 {
        return records.iter().enumerate().map(|(i, r)| f(i, r)).collect();
    }
    let chunk = records.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(i, r)| f(c * chunk + i, r)).collect::<Result<Vec<T>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Scores every available method on the same records (readings from the
/// deployment anchors, ground truth required). `k` is the scheduled subset
/// size and `seed` fixes the random schedules.
pub fn run_benchmark(
    records: &[TrajectoryRecord],
    deployment: &AnchorLayout,
    models: BenchmarkModels,
    k: usize,
    seed: u64,
    ekf: &EkfConfig,
) -> Result<BenchmarkOutput> {
    if records.is_empty() {
        return Err(Error::contract("benchmark needs at least one record"));
    }
    let truth: Vec<_> = records
        .iter()
        .map(|r| r.positions().ok_or_else(|| Error::contract(format!("record {} has no ground truth", r.id))))
        .collect::<Result<_>>()?;
    let a = deployment.len();
    let schedules = random_schedules(records, a, k, seed)?;
    let mut out = BenchmarkOutput::default();
    for m in Method::ALL {
        let model = match m {
            Method::DssmAllReal => models.real,
            Method::LocDreamerRandom | Method::LocDreamerScheduling => models.scheduled,
            Method::LocDreamerAllImagined => models.all_imagined,
            Method::EkfRandom | Method::EkfAll => None,
        };
        let needs_model = !matches!(m, Method::EkfRandom | Method::EkfAll);
        if needs_model && model.is_none() {
            let notice = format!("{m}: skipped, no checkpoint supplied");
            ::log::warn!("{notice}");
            out.skipped.push(notice);
            continue;
        }
        let estimates = par_map(records, |i, r| match m {
            Method::EkfRandom => Ok(ekf_run(r, deployment, |t| schedules[i][t - 1].clone(), ekf)?.positions),
            Method::EkfAll => Ok(ekf_run(r, deployment, |_| SchedulingAction::all(a), ekf)?.positions),
            Method::DssmAllReal | Method::LocDreamerAllImagined => model.expect("checked").track_all(r, deployment),
            Method::LocDreamerScheduling => model.expect("checked").track_greedy(r, deployment),
            Method::LocDreamerRandom => {
                let md = model.expect("checked");
                let mut src = |t: usize, _: &PolicyState| at(&schedules[i], t);
                Ok(md.dssm.track(&md.store, r, deployment, &mut src)?.estimates)
            }
        })?;
        let tracks: Vec<Track> = records
            .iter()
            .zip(&truth)
            .zip(estimates)
            .map(|((r, t), e)| Track { traj_id: r.id, truth: t.clone(), estimates: e })
            .collect();
        out.reports.push(compute_metrics(m.name(), &tracks)?);
        out.tracks.push((m, tracks));
    }
    Ok(out)
}

/// Deterministic synthetic environment of the benchmark.
#[derive(Debug, Clone)]
pub struct SyntheticSetup {
    pub map: MapRegion,
    /// Bootstrap and deployment anchors together.
    pub layout: AnchorLayout,
    pub noise: NoiseModel,
    pub motion: MotionParams,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub trajectory_len: usize,
    pub cfg: TrainConfig,
    pub ekf: EkfConfig,
}

impl SyntheticSetup {
    pub fn residential(cfg: TrainConfig) -> Self {
        let ekf = EkfConfig::new(cfg.dt);
        Self {
            map: MapRegion::residential_floor(),
            layout: AnchorLayout::residential_default(),
            noise: NoiseModel::default(),
            motion: MotionParams::default(),
            train_trajectories: 40,
            test_trajectories: 10,
            trajectory_len: 64,
            cfg,
            ekf,
        }
    }

    pub fn bootstrap(&self) -> Result<AnchorLayout> {
        self.layout.select(&self.cfg.bootstrap_ids)
    }

    pub fn deployment(&self) -> Result<AnchorLayout> {
        self.layout.select(&self.cfg.deployment_ids)
    }
}

/// `n` simulated records with readings from every anchor of `layout`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_records(
    map: &MapRegion,
    layout: &AnchorLayout,
    noise: &NoiseModel,
    motion: &MotionParams,
    n: usize,
    len: usize,
    dt: f64,
    first_id: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrajectoryRecord>> {
    (0..n)
        .map(|i| {
            let mut r = generate_trajectory(map, motion, len, dt, rng)?;
            r.id = first_id + i as u32;
            simulate_measurements(&mut r, layout, map, noise, rng);
            Ok(r)
        })
        .collect()
}

/// Training and held-out records of one seed.
pub fn synthetic_data(setup: &SyntheticSetup, seed: u64) -> Result<(Vec<TrajectoryRecord>, Vec<TrajectoryRecord>)> {
    let mut rng = seeded(seed, STREAM_DATA);
    let s = setup;
    let train = simulate_records(&s.map, &s.layout, &s.noise, &s.motion, s.train_trajectories, s.trajectory_len, s.cfg.dt, 0, &mut rng)?;
    let test = simulate_records(
        &s.map,
        &s.layout,
        &s.noise,
        &s.motion,
        s.test_trajectories,
        s.trajectory_len,
        s.cfg.dt,
        s.train_trajectories as u32,
        &mut rng,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub real: Model,
    pub scheduled: Model,
    pub all_imagined: Model,
    /// Pretraining then imagination log of the scheduled model.
    pub scheduled_log: TrainingLog,
    pub all_imagined_log: TrainingLog,
    pub real_log: TrainingLog,
}

/// Trains the three learned models of the benchmark from one seed.
pub fn train_models(setup: &SyntheticSetup, train: &[TrajectoryRecord], test: &[TrajectoryRecord], seed: u64) -> Result<TrainedModels> {
    let cfg = TrainConfig { seed, ..setup.cfg.clone() };
    let boot = setup.bootstrap()?;
    let dep = setup.deployment()?;
    let (fit, val) = split_validation(train, cfg.val_fraction, seed);
    let restrict = |rs: &[TrajectoryRecord], l: &AnchorLayout| -> Vec<TrajectoryRecord> {
        rs.iter().map(|r| r.restricted_to(&l.ids())).collect()
    };
    let (fit_r, val_r, test_r) = (restrict(&fit, &boot), restrict(&val, &boot), restrict(test, &boot));
    let (fit_a, val_a, test_a) = (restrict(&fit, &dep), restrict(&val, &dep), restrict(test, &dep));

    let data = PretrainData { train: &fit_r, val: &val_r, test: &test_r, layout: &boot };
    let (pretrained, pre_log) = pretrain_dssm(Model::new(&cfg, &setup.map)?, &data, &cfg)?;

    let real_data = PretrainData { train: &fit_a, val: &val_a, test: &test_a, layout: &dep };
    let (real, real_log) = pretrain_dssm(Model::new(&cfg, &setup.map)?, &real_data, &cfg)?;

    let idata = ImagineData { map: &setup.map, bootstrap: &boot, deployment: &dep, test: &test_a };
    let (scheduled, scheduled_log) = imagine_train(pretrained.clone(), &idata, &cfg, pre_log.clone(), None)?;
    let all_cfg = TrainConfig { k: cfg.anchors, ..cfg };
    let (all_imagined, all_imagined_log) = imagine_train(pretrained, &idata, &all_cfg, pre_log, None)?;
    Ok(TrainedModels { real, scheduled, all_imagined, scheduled_log, all_imagined_log, real_log })
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub output: BenchmarkOutput,
    pub models: TrainedModels,
    pub test: Vec<TrajectoryRecord>,
}

/// Simulates, trains and scores every method for one seed.
pub fn synthetic_benchmark(setup: &SyntheticSetup, seed: u64) -> Result<SeedResult> {
    let (train, test) = synthetic_data(setup, seed)?;
    let models = train_models(setup, &train, &test, seed)?;
    let dep = setup.deployment()?;
    let test_a: Vec<_> = test.iter().map(|r| r.restricted_to(&dep.ids())).collect();
    let bm = BenchmarkModels { real: Some(&models.real), scheduled: Some(&models.scheduled), all_imagined: Some(&models.all_imagined) };
    let output = run_benchmark(&test_a, &dep, bm, setup.cfg.k, seed, &setup.ekf)?;
    Ok(SeedResult { seed, output, models, test: test_a })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SyntheticSetup {
        let cfg = TrainConfig {
            dssm_epochs: 1,
            imagine_epochs: 1,
            batch_size: 2,
            seq_len: 8,
            hidden: 6,
            width: 8,
            heads: 2,
            val_rollouts: 1,
            ..TrainConfig::default()
        };
        SyntheticSetup { train_trajectories: 4, test_trajectories: 2, trajectory_len: 16, ..SyntheticSetup::residential(cfg) }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
    }

    #[test]
    fn reference_ratios() {
        let reports: Vec<MetricReport> = REFERENCE_MAE
            .iter()
            .map(|&(m, mae)| MetricReport { method: m.name().into(), mae, rmse: mae, p50: mae, p90: mae, n_traj: 1, n_steps: 1 })
            .collect();
        let (imp, frac) = ratio_statistics(&reports).unwrap();
        assert!((imp - REFERENCE_IMPROVEMENT).abs() < 0.005);
        assert!((frac - REFERENCE_REAL_FRACTION).abs() < 0.005);
    }

    #[test]
    fn missing_models_are_skipped_with_notice() {
        let s = tiny();
        let (_, test) = synthetic_data(&s, 1).unwrap();
        let dep = s.deployment().unwrap();
        let test: Vec<_> = test.iter().map(|r| r.restricted_to(&dep.ids())).collect();
        let out = run_benchmark(&test, &dep, BenchmarkModels::default(), 3, 1, &s.ekf).unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.skipped.len(), 4);
        assert!(out.skipped[0].contains("dssm-all-real"));
    }

    #[test]
    fn tiny_pipeline_scores_all_methods_deterministically() {
        let s = tiny();
        let a = synthetic_benchmark(&s, 3).unwrap();
        let b = synthetic_benchmark(&s, 3).unwrap();
        assert_eq!(a.output.reports.len(), 6);
        assert_eq!(a.output.reports, b.output.reports);
        for r in &a.output.reports {
            assert_eq!((r.n_traj, r.n_steps), (2, 32));
            assert!(r.mae.is_finite());
        }
    }
}

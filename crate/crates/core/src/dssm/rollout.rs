use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

use super::model::{Dssm, Z_DIM};
use crate::ekf::trilaterate;
use crate::env::{mask_observations, AnchorId, AnchorLayout, MapRegion, Observation, ObservationSet, Point, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::numkit::{DiagonalGaussian, ParamStore, Tape, Var};
use crate::scheduler::{
    greedy_subset, ordered_log_prob_var, random_subset, sample_subset, ActorCritic, BufferStep, PolicyState, RolloutBuffer,
    SchedulingAction,
};

/// Everything recorded at one filtering or imagination step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub prior: DiagonalGaussian,
    pub posterior: DiagonalGaussian,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    /// `(anchor id, μ_d, σ_d)` for every reconstructed anchor.
    pub decoded: Vec<(AnchorId, f64, f64)>,
    pub action: SchedulingAction,
    pub observations: ObservationSet,
    pub recon: f64,
    pub dynamics: f64,
    /// No usable reading: the prior stood in for the posterior.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RolloutOptions {
    /// Draw `z̃` from the posterior (training). When false the posterior
    /// mean is propagated instead (evaluation).
    pub sample: bool,
    /// Keep per-step traces.
    pub record: bool,
}

/// Chooses the anchors of `layout` to read at step `t` (1-based).
pub trait ActionSource {
    fn action(&mut self, t: usize, state: &PolicyState, store: &ParamStore) -> Result<SchedulingAction>;
}

impl<F: FnMut(usize, &PolicyState) -> Result<SchedulingAction>> ActionSource for F {
    fn action(&mut self, t: usize, state: &PolicyState, _store: &ParamStore) -> Result<SchedulingAction> {
        self(t, state)
    }
}

/// Greedy actions from a trained actor.
pub struct GreedyPolicy<'a> {
    pub ac: &'a ActorCritic,
}

impl ActionSource for GreedyPolicy<'_> {
    fn action(&mut self, _t: usize, state: &PolicyState, store: &ParamStore) -> Result<SchedulingAction> {
        greedy_subset(&self.ac.logits(store, state), self.ac.config.k)
    }
}

struct StepOut {
    z: Var,
    h: Var,
    loss: Var,
    estimate: Point,
    trace: Option<StepTrace>,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `Σ_t (−L^recon_t + L^dyn_t)`.
    pub loss: Var,
    pub estimates: Vec<Point>,
    pub steps: Vec<StepTrace>,
    pub flagged: usize,
}

fn noise(rng: &mut (impl Rng + ?Sized), n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl Dssm {
    /// Initial latent state from the first step: trilaterated position over
    /// every reading in `layout`, zero velocity.
    pub fn initial_state(&self, record: &TrajectoryRecord, layout: &AnchorLayout) -> Result<Vec<f64>> {
        let first = record.steps.first().ok_or_else(|| Error::contract("empty trajectory"))?;
        let p = trilaterate(&ObservationSet::all(&first.measurements, layout))?;
        Ok(vec![p[0], p[1], 0.0, 0.0])
    }

    /// One filtering step on `tape`. Returns the next `(z̃, h)` nodes.
    #[allow(clippy::too_many_arguments)]
    fn filter_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        t: usize,
        z_prev: Var,
        h_prev: Var,
        measurements: &std::collections::BTreeMap<AnchorId, f64>,
        layout: &AnchorLayout,
        source: &mut dyn ActionSource,
        opts: RolloutOptions,
        rng: &mut dyn rand::RngCore,
    ) -> Result<StepOut> {
        let h = if t == 1 { h_prev } else { self.sequence_step(tape, store, z_prev, h_prev) };
        let prior = self.prior_transition(tape, store, z_prev, h);
        let prior_v = prior.value(tape);
        let state = self.policy_state(&prior_v, tape.value(h));
        let action = source.action(t, &state, store)?;
        let masked = mask_observations(measurements, layout, &action)?;
        let (posterior, z, loss, recon, dynamics, decoded, flagged) = if masked.set.is_empty() {
            let z = if opts.sample { prior.reparameterize(tape, &noise(rng, Z_DIM)) } else { prior.mean };
            let zero = tape.scalar_leaf(0.0);
            (prior, z, zero, 0.0, 0.0, Vec::new(), true)
        } else {
            let posterior = self.encode_posterior(tape, store, z_prev, h, &masked.set)?;
            let z = if opts.sample { posterior.reparameterize(tape, &noise(rng, Z_DIM)) } else { posterior.mean };
            let targets: Vec<(Point, f64)> = masked.set.pairs.iter().map(|o| (o.anchor, o.distance)).collect();
            let e = self.elbo_step(tape, store, z, h, posterior, prior, &targets);
            let neg = tape.scale(e.recon, -1.0);
            let loss = tape.add(neg, e.dynamics);
            let decoded = masked.set.pairs.iter().zip(&e.decoded).map(|(o, (m, s))| (o.anchor_id, *m, *s)).collect();
            (posterior, z, loss, tape.scalar(e.recon), tape.scalar(e.dynamics), decoded, false)
        };
        let post_mean = tape.value(posterior.mean);
        let estimate = [post_mean[0], post_mean[1]];
        let trace = opts.record.then(|| StepTrace {
            t,
            prior: prior_v,
            posterior: posterior.value(tape),
            z: tape.value(z).to_vec(),
            h: tape.value(h).to_vec(),
            decoded,
            action,
            observations: masked.set,
            recon,
            dynamics,
            flagged,
        });
        Ok(StepOut { z, h, loss, estimate, trace })
    }

    /// Runs the model over a recorded trajectory on one tape (training).
    pub fn filter_rollout(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        record: &TrajectoryRecord,
        layout: &AnchorLayout,
        source: &mut dyn ActionSource,
        opts: RolloutOptions,
        rng: &mut dyn rand::RngCore,
    ) -> Result<FilterOutput> {
        let mut z = tape.leaf(self.initial_state(record, layout)?);
        let mut h = tape.leaf(self.zero_hidden());
        let mut losses = Vec::with_capacity(record.len());
        let mut estimates = Vec::with_capacity(record.len());
        let mut steps = Vec::new();
        let mut flagged = 0;
        for step in &record.steps {
            let out = self.filter_step(tape, store, step.t, z, h, &step.measurements, layout, source, opts, rng)?;
            estimates.push(out.estimate);
            if let Some(tr) = out.trace {
                flagged += usize::from(tr.flagged);
                steps.push(tr);
            }
            losses.push(out.loss);
            z = out.z;
            h = out.h;
        }
        let loss = tape.add_n(&losses);
        Ok(FilterOutput { loss, estimates, steps, flagged })
    }

    /// Inference-only tracking with posterior means propagated. Returns the
    /// position estimates and the total loss.
    pub fn track(
        &self,
        store: &ParamStore,
        record: &TrajectoryRecord,
        layout: &AnchorLayout,
        source: &mut dyn ActionSource,
    ) -> Result<Tracked> {
        let mut tape = Tape::new();
        let mut z = tape.leaf(self.initial_state(record, layout)?);
        let mut h = tape.leaf(self.zero_hidden());
        let mut out = Tracked::default();
        let opts = RolloutOptions { sample: false, record: true };
        // Unused: nothing is sampled when `sample` is off.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for step in &record.steps {
            let s = self.filter_step(&mut tape, store, step.t, z, h, &step.measurements, layout, source, opts, &mut rng)?;
            let tr = s.trace.expect("recorded");
            out.estimates.push(s.estimate);
            out.loss += tape.scalar(s.loss);
            out.flagged += usize::from(tr.flagged);
            out.actions.push(tr.action);
            z = s.z;
            h = s.h;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tracked {
    pub estimates: Vec<Point>,
    pub actions: Vec<SchedulingAction>,
    pub loss: f64,
    pub flagged: usize,
}

/// How the imagination rollout picks anchors of the deployment set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImaginePolicy {
    Sample,
    Greedy,
    Random,
}

/// Which anchors make up the per-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSet {
    /// Bootstrap anchors plus the scheduled ones.
    #[default]
    BootstrapAndScheduled,
    ScheduledOnly,
}

impl RewardSet {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardSet::BootstrapAndScheduled => "bootstrap_and_scheduled",
            RewardSet::ScheduledOnly => "scheduled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bootstrap_and_scheduled" => Some(RewardSet::BootstrapAndScheduled),
            "scheduled" => Some(RewardSet::ScheduledOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImagineSetup<'a> {
    pub map: &'a MapRegion,
    pub bootstrap: &'a AnchorLayout,
    pub deployment: &'a AnchorLayout,
    pub steps: usize,
    pub policy: ImaginePolicy,
    pub reward_set: RewardSet,
    /// Stddev of each initial velocity component.
    pub init_speed_stddev: f64,
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct ImagineOutput {
    /// `Σ_t (−L^recon_t + L^dyn_t)` on imagined targets.
    pub loss: Var,
    pub buffer: RolloutBuffer,
    pub steps: Vec<StepTrace>,
}

impl Dssm {
    /// Dreams one trajectory: a target rolls forward on the learned prior and
    /// the decoder produces its ranges to every anchor; the actor picks which
    /// deployment anchors the filter's encoder sees, and the reward is the
    /// reconstruction log-likelihood of the filter's estimate.
    pub fn imagine_rollout(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ac: &ActorCritic,
        setup: &ImagineSetup,
        rng: &mut impl Rng,
    ) -> Result<ImagineOutput> {
        let dep = setup.deployment;
        if ac.config.anchors != dep.len() {
            return Err(Error::contract(format!(
                "actor scores {} anchors, deployment has {}",
                ac.config.anchors,
                dep.len()
            )));
        }
        let all = setup.bootstrap.union(dep)?;
        let vel = Normal::new(0.0, setup.init_speed_stddev).map_err(|e| Error::contract(e.to_string()))?;
        let z0 = vec![
            rng.random_range(0.0..=setup.map.width),
            rng.random_range(0.0..=setup.map.height),
            vel.sample(rng),
            vel.sample(rng),
        ];
        // The dreamed target follows its own prior chain, so the filter's
        // error can build up when the readings it is shown are poor. Its
        // readings cover every anchor and carry no gradient.
        let mut dtape = Tape::new();
        let mut dream_z = dtape.leaf(z0.clone());
        let mut dream_h = dtape.leaf(self.zero_hidden());
        let mut z_prev = tape.leaf(z0);
        let mut h = tape.leaf(self.zero_hidden());
        let mut losses = Vec::with_capacity(setup.steps);
        let mut buffer = RolloutBuffer::default();
        let mut steps = Vec::new();
        for t in 1..=setup.steps {
            if t > 1 {
                h = self.sequence_step(tape, store, z_prev, h);
            }
            let prior = self.prior_transition(tape, store, z_prev, h);
            let prior_v = prior.value(tape);

            if t > 1 {
                dream_h = self.sequence_step(&mut dtape, store, dream_z, dream_h);
            }
            let dp = self.prior_transition(&mut dtape, store, dream_z, dream_h);
            let zd = dp.reparameterize(&mut dtape, &noise(rng, Z_DIM));
            let dec_state = self.decoder_state(&mut dtape, store, zd, dream_h);
            let mut imagined = Vec::with_capacity(all.len());
            for a in all.anchors() {
                let g = self.decode_with_state(&mut dtape, store, zd, dec_state, a.position);
                let e: f64 = StandardNormal.sample(rng);
                imagined.push((a.id, a.position, (dtape.scalar(g.mean) + dtape.scalar(g.stddev) * e).max(0.0)));
            }
            dream_z = zd;
            let reading = |id: AnchorId| imagined.iter().find(|r| r.0 == id).copied().expect("imagined");

            let state = self.policy_state(&prior_v, tape.value(h));
            let s = tape.leaf(state.0.clone());
            let logits = ac.policy_logits(tape, store, s);
            let lv = tape.value(logits).to_vec();
            let k = ac.config.k;
            let order = match setup.policy {
                ImaginePolicy::Sample => sample_subset(&lv, k, rng)?.order,
                ImaginePolicy::Greedy => greedy_subset(&lv, k)?.indices(),
                ImaginePolicy::Random => random_subset(lv.len(), k, rng)?.indices(),
            };
            let action = SchedulingAction::from_indices(dep.len(), &order);
            let (log_prob, entropy) = ordered_log_prob_var(tape, logits, &order);
            let value = ac.critic_value(tape, store, s);

            let obs = ObservationSet::new(
                action
                    .indices()
                    .iter()
                    .map(|&i| {
                        let (id, p, d) = reading(dep.anchors()[i].id);
                        Observation { anchor_id: id, distance: d, anchor: p }
                    })
                    .collect(),
            );
            let posterior = self.encode_posterior(tape, store, z_prev, h, &obs)?;
            let z = posterior.reparameterize(tape, &noise(rng, Z_DIM));
            let mut recon_ids: Vec<AnchorId> = match setup.reward_set {
                RewardSet::BootstrapAndScheduled => setup.bootstrap.ids(),
                RewardSet::ScheduledOnly => Vec::new(),
            };
            for id in obs.anchor_ids() {
                if !recon_ids.contains(&id) {
                    recon_ids.push(id);
                }
            }
            let targets: Vec<(Point, f64)> = recon_ids.iter().map(|&id| reading(id)).map(|(_, p, d)| (p, d)).collect();
            let e = self.elbo_step(tape, store, z, h, posterior, prior, &targets);
            let neg = tape.scale(e.recon, -1.0);
            losses.push(tape.add(neg, e.dynamics));
            let reward = tape.scalar(e.recon);

            if setup.record {
                steps.push(StepTrace {
                    t,
                    prior: prior_v,
                    posterior: posterior.value(tape),
                    z: tape.value(z).to_vec(),
                    h: tape.value(h).to_vec(),
                    decoded: recon_ids.iter().zip(&e.decoded).map(|(id, (m, s))| (*id, *m, *s)).collect(),
                    action: action.clone(),
                    observations: obs,
                    recon: reward,
                    dynamics: tape.scalar(e.dynamics),
                    flagged: false,
                });
            }
            buffer.steps.push(BufferStep { state, action, log_prob, entropy, value, reward });
            z_prev = z;
        }
        let loss = tape.add_n(&losses);
        Ok(ImagineOutput { loss, buffer, steps })
    }
}

//! Actor-critic anchor scheduling.
//!
//! The policy scores every anchor; a K-subset is drawn by Plackett–Luce
//! sampling, i.e. K sequential categorical draws without replacement from the
//! softmax of the remaining scores. Its log-probability is the sum of the K
//! sequential log-probabilities, which keeps the REINFORCE gradient exact.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::{DiagonalGaussian, Mlp, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Binary anchor selection α over a layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchedulingAction {
    alpha: Vec<bool>,
}

impl SchedulingAction {
    pub fn from_alpha(alpha: Vec<bool>) -> Self {
        Self { alpha }
    }

    pub fn all(n: usize) -> Self {
        Self { alpha: vec![true; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut alpha = vec![false; n];
        for &i in indices {
            alpha[i] = true;
        }
        Self { alpha }
    }

    pub fn alpha(&self) -> &[bool] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Number of active anchors, K.
    pub fn count(&self) -> usize {
        self.alpha.iter().filter(|a| **a).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.alpha.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect()
    }
}

/// Actor/critic input: prior mean and stddev of the latent state followed by
/// the recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState(pub Vec<f64>);

impl PolicyState {
    pub fn new(prior: &DiagonalGaussian, hidden: &[f64]) -> Self {
        let mut v = Vec::with_capacity(prior.dim() * 2 + hidden.len());
        v.extend_from_slice(&prior.mean);
        v.extend_from_slice(&prior.stddev);
        v.extend_from_slice(hidden);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_k(k: usize, a: usize) -> Result<()> {
    if k == 0 || k > a {
        return Err(Error::contract(format!("cannot schedule K = {k} of A = {a} anchors")));
    }
    Ok(())
}

fn log_softmax_over(logits: &[f64], idx: &[usize]) -> Vec<f64> {
    let max = idx.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + idx.iter().map(|&i| (logits[i] - max).exp()).sum::<f64>().ln();
    idx.iter().map(|&i| logits[i] - lse).collect()
}

/// A sampled subset together with the order in which anchors were drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubset {
    pub action: SchedulingAction,
    pub order: Vec<usize>,
    pub log_prob: f64,
}

/// Plackett–Luce draw of `k` distinct anchors.
pub fn sample_subset(logits: &[f64], k: usize, rng: &mut impl Rng) -> Result<SampledSubset> {
    check_k(k, logits.len())?;
    let mut remaining: Vec<usize> = (0..logits.len()).collect();
    let mut order = Vec::with_capacity(k);
    let mut log_prob = 0.0;
    for _ in 0..k {
        let lp = log_softmax_over(logits, &remaining);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (j, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                pick = j;
                break;
            }
        }
        log_prob += lp[pick];
        order.push(remaining.remove(pick));
    }
    Ok(SampledSubset { action: SchedulingAction::from_indices(logits.len(), &order), order, log_prob })
}

/// Log-probability of drawing anchors in `order` (plain values).
pub fn ordered_log_prob(logits: &[f64], order: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..logits.len()).collect();
    let mut total = 0.0;
    for &i in order {
        let lp = log_softmax_over(logits, &remaining);
        let j = remaining.iter().position(|&r| r == i).expect("index drawn twice");
        total += lp[j];
        remaining.remove(j);
    }
    total
}

/// Top-`k` scores; ties go to the lower anchor index.
pub fn greedy_subset(logits: &[f64], k: usize) -> Result<SchedulingAction> {
    check_k(k, logits.len())?;
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    Ok(SchedulingAction::from_indices(logits.len(), &idx[..k]))
}

/// Uniformly random `k`-subset.
pub fn random_subset(a: usize, k: usize, rng: &mut impl Rng) -> Result<SchedulingAction> {
    check_k(k, a)?;
    let idx = rand::seq::index::sample(rng, a, k).into_vec();
    Ok(SchedulingAction::from_indices(a, &idx))
}

/// Differentiable Plackett–Luce log-probability and the summed entropy of
/// the sequential categoricals along `order`.
pub fn ordered_log_prob_var(tape: &mut Tape, logits: Var, order: &[usize]) -> (Var, Var) {
    let n = tape.dim(logits);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut terms = Vec::with_capacity(order.len());
    let mut entropies = Vec::with_capacity(order.len());
    for &i in order {
        let parts: Vec<Var> = remaining.iter().map(|&r| tape.slice(logits, r, 1)).collect();
        let sub = tape.concat(&parts);
        let ls = tape.log_softmax(sub);
        let j = remaining.iter().position(|&r| r == i).expect("index drawn twice");
        terms.push(tape.slice(ls, j, 1));
        let p = tape.exp(ls);
        let plp = tape.dot(p, ls);
        entropies.push(tape.scale(plp, -1.0));
        remaining.remove(j);
    }
    (tape.add_n(&terms), tape.add_n(&entropies))
}

/// `G_t = Σ_{τ≥t} γ^{τ−t} R_τ` by backward recursion.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&gamma), "discount {gamma} outside [0, 1]");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcConfig {
    pub anchors: usize,
    pub k: usize,
    pub state_dim: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub entropy_bonus: bool,
    /// EMA rate of the return statistics used to scale the critic output.
    pub return_stats_rate: f64,
}

impl AcConfig {
    pub fn new(anchors: usize, k: usize, state_dim: usize) -> Self {
        Self {
            anchors,
            k,
            state_dim,
            hidden: 64,
            gamma: 0.99,
            entropy_coef: 1e-2,
            entropy_bonus: true,
            return_stats_rate: 0.1,
        }
    }
}

/// Actor `π(α | s)` and critic `V(s)` heads, 2×64 tanh MLPs.
///
/// The critic output is `center + scale · mlp(s)`, where `(center, scale)`
/// track the mean and spread of observed returns. They are state, not
/// gradient-trained parameters.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub config: AcConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub return_stats: ParamId,
}

impl ActorCritic {
    pub fn new(store: &mut ParamStore, config: AcConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden;
        let actor = Mlp::new(store, "actor", ParamGroup::Actor, &[config.state_dim, h, h, config.anchors], rng);
        let critic = Mlp::new(store, "critic", ParamGroup::Critic, &[config.state_dim, h, h, 1], rng);
        let mut stats = Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).expect("valid shape");
        stats.set_requires_grad(false);
        let return_stats = store.add("critic.return_stats", ParamGroup::Critic, stats);
        Self { config, actor, critic, return_stats }
    }

    pub fn policy_logits(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Var {
        self.actor.forward(tape, store, state)
    }

    pub fn logits(&self, store: &ParamStore, state: &PolicyState) -> Vec<f64> {
        let mut tape = Tape::new();
        let s = tape.leaf(state.0.clone());
        let l = self.policy_logits(&mut tape, store, s);
        tape.value(l).to_vec()
    }

    pub fn critic_value(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Var {
        let raw = self.critic.forward(tape, store, state);
        let st = store.tensor(self.return_stats).values();
        let scaled = tape.scale(raw, st[1]);
        tape.offset(scaled, &[st[0]])
    }

    pub fn value(&self, store: &ParamStore, state: &PolicyState) -> f64 {
        let mut tape = Tape::new();
        let s = tape.leaf(state.0.clone());
        let v = self.critic_value(&mut tape, store, s);
        tape.scalar(v)
    }

    /// Folds a batch of observed returns into the critic's output scaling.
    pub fn update_return_stats(&self, store: &mut ParamStore, returns: &[f64]) {
        if returns.is_empty() {
            return;
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt().max(1.0);
        let rate = self.config.return_stats_rate;
        let st = store.tensor_mut(self.return_stats).values_mut();
        if st[2] == 0.0 {
            st[0] = mean;
            st[1] = std;
        } else {
            st[0] += rate * (mean - st[0]);
            st[1] += rate * (std - st[1]);
        }
        st[2] += 1.0;
    }

    pub fn trainable_actor(&self, store: &ParamStore) -> Vec<ParamId> {
        store.trainable_in(&[ParamGroup::Actor])
    }

    pub fn trainable_critic(&self, store: &ParamStore) -> Vec<ParamId> {
        store.trainable_in(&[ParamGroup::Critic])
    }
}

/// One scheduling decision recorded during a rollout.
#[derive(Debug, Clone)]
pub struct BufferStep {
    pub state: PolicyState,
    pub action: SchedulingAction,
    pub log_prob: Var,
    pub entropy: Var,
    pub value: Var,
    pub reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<BufferStep>,
}

impl RolloutBuffer {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AcLosses {
    pub actor: Var,
    pub critic: Var,
}

/// Actor and critic losses over one or more rollouts (each with its own
/// returns), averaged over all steps:
///
/// - `L_actor  = −mean[log π(α_t|s_t) · sg(G_t − V(s_t))] − c · mean[H_t]`
/// - `L_critic =  mean[(V(s_t) − sg(G_t))²]`
///
/// `entropy_coef = 0` drops the entropy bonus.
pub fn actor_critic_losses(tape: &mut Tape, buffers: &[RolloutBuffer], gamma: f64, entropy_coef: f64) -> AcLosses {
    let mut actor_terms = Vec::new();
    let mut critic_terms = Vec::new();
    let mut entropy_terms = Vec::new();
    for buf in buffers {
        let returns = discounted_returns(&buf.rewards(), gamma);
        for (step, g) in buf.steps.iter().zip(returns) {
            let v = tape.scalar(step.value);
            let adv = g - v;
            actor_terms.push(tape.scale(step.log_prob, -adv));
            let err = tape.offset(step.value, &[-g]);
            critic_terms.push(tape.square(err));
            if entropy_coef != 0.0 {
                entropy_terms.push(step.entropy);
            }
        }
    }
    assert!(!actor_terms.is_empty(), "actor_critic_losses on empty buffers");
    let n = actor_terms.len() as f64;
    let sum = tape.add_n(&actor_terms);
    let mut actor = tape.scale(sum, 1.0 / n);
    if !entropy_terms.is_empty() {
        let es = tape.add_n(&entropy_terms);
        let bonus = tape.scale(es, -entropy_coef / n);
        actor = tape.add(actor, bonus);
    }
    let csum = tape.add_n(&critic_terms);
    let critic = tape.scale(csum, 1.0 / n);
    AcLosses { actor, critic }
}

use rand::Rng;

use crate::env::{MapRegion, ObservationSet, Point};
use crate::error::{Error, Result};
use crate::scheduler::PolicyState;
use crate::numkit::gaussian::{kl_var, log_pdf_var, stddev_head};
use crate::numkit::{DiagonalGaussian, GaussianVar, GruCell, Linear, Mlp, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Dimension of the latent target state `[x, y, vx, vy]`.
pub const Z_DIM: usize = 4;

/// Number of hand-built features per `(distance, anchor)` pair fed to the
/// encoder's pair network.
pub const PAIR_FEATURES: usize = 11;

/// Which sides of the KL term receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlGradient {
    #[default]
    Both,
    /// Prior treated as a constant.
    PosteriorOnly,
    /// Posterior treated as a constant.
    PriorOnly,
}

impl KlGradient {
    pub fn as_str(self) -> &'static str {
        match self {
            KlGradient::Both => "both",
            KlGradient::PosteriorOnly => "posterior",
            KlGradient::PriorOnly => "prior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "both" => Some(KlGradient::Both),
            "posterior" => Some(KlGradient::PosteriorOnly),
            "prior" => Some(KlGradient::PriorOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DssmConfig {
    /// Units per recurrent layer.
    pub hidden: usize,
    pub rnn_layers: usize,
    /// Width of every hidden MLP layer and of the attention pool.
    pub width: usize,
    pub heads: usize,
    /// Output scale of the learned dynamics correction.
    pub residual_scale: f64,
    pub dt: f64,
    /// Position normalization: networks see `(p − center) / scale`.
    pub center: Point,
    pub scale: f64,
    pub kl_gradient: KlGradient,
    /// Standard deviations the three heads start near.
    pub prior_std_init: f64,
    pub posterior_std_init: f64,
    pub range_std_init: f64,
}

impl DssmConfig {
    pub fn for_map(map: &MapRegion, dt: f64) -> Self {
        Self {
            hidden: 50,
            rnn_layers: 2,
            width: 64,
            heads: 4,
            residual_scale: 0.1,
            dt,
            center: map.center(),
            scale: 0.5 * map.width.max(map.height),
            kl_gradient: KlGradient::Both,
            prior_std_init: 0.1,
            posterior_std_init: 0.1,
            range_std_init: 0.3,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.hidden * self.rnn_layers
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden == 0 || self.rnn_layers == 0 || self.width == 0 {
            errs.push("hidden, rnn_layers and width must be positive".to_string());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            errs.push(format!("width {} is not divisible by {} heads", self.width, self.heads));
        }
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.scale > 0.0) {
            errs.push(format!("normalization scale must be positive, got {}", self.scale));
        }
        for (k, v) in [
            ("prior_std_init", self.prior_std_init),
            ("posterior_std_init", self.posterior_std_init),
            ("range_std_init", self.range_std_init),
        ] {
            if !(v > crate::numkit::SIGMA_FLOOR) {
                errs.push(format!("{k} must exceed the stddev floor, got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Inverse of `softplus(x) + floor`, used to start a stddev head at `sigma`.
fn stddev_bias(sigma: f64) -> f64 {
    let s = sigma - crate::numkit::SIGMA_FLOOR;
    s + (-(-s).exp_m1()).ln()
}

/// Recurrent memory, dynamics prior, set encoder and range decoder.
#[derive(Debug, Clone)]
pub struct Dssm {
    pub config: DssmConfig,
    pub rnn: Vec<GruCell>,
    pub prior: Mlp,
    pub pair: Mlp,
    pub seed_query: ParamId,
    pub key: Linear,
    pub value: Linear,
    pub pool_out: Linear,
    pub posterior: Mlp,
    pub dec_state: Linear,
    pub dec_anchor: Linear,
    pub dec_head: Mlp,
}

fn set_bias_tail(store: &mut ParamStore, layer: &Linear, from: usize, value: f64) {
    let b = layer.bias.expect("output layer has a bias");
    for v in &mut store.tensor_mut(b).values_mut()[from..] {
        *v = value;
    }
}

impl Dssm {
    pub fn new(store: &mut ParamStore, config: DssmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (h, w) = (config.hidden, config.width);
        let sd = config.state_dim();
        let mut rnn = Vec::with_capacity(config.rnn_layers);
        for l in 0..config.rnn_layers {
            let inputs = if l == 0 { Z_DIM } else { h };
            rnn.push(GruCell::new(store, &format!("rnn.{l}"), ParamGroup::Sequence, inputs, h, rng));
        }
        let prior = Mlp::new(store, "prior", ParamGroup::Dynamics, &[Z_DIM + sd, w, w, 2 * Z_DIM], rng);
        set_bias_tail(store, prior.output_layer(), Z_DIM, stddev_bias(config.prior_std_init));

        let pair = Mlp::new(store, "encoder.pair", ParamGroup::Encoder, &[PAIR_FEATURES, w, w], rng);
        let seed = Tensor::uniform(vec![w], 1.0 / (w as f64).sqrt(), rng);
        let seed_query = store.add("encoder.seed_query", ParamGroup::Encoder, seed);
        let key = Linear::with_fan_in(store, "encoder.key", ParamGroup::Encoder, w, w, w, false, rng);
        let value = Linear::with_fan_in(store, "encoder.value", ParamGroup::Encoder, w, w, w, false, rng);
        let pool_out = Linear::new(store, "encoder.pool_out", ParamGroup::Encoder, w, w, rng);
        let posterior = Mlp::new(store, "encoder.head", ParamGroup::Encoder, &[w + Z_DIM + sd, w, 2 * Z_DIM], rng);
        set_bias_tail(store, posterior.output_layer(), Z_DIM, stddev_bias(config.posterior_std_init));

        // First decoder layer over [z, h, anchor], split so the state block is
        // computed once per step and shared by every anchor.
        let fan_in = Z_DIM + sd + 2;
        let dec_state = Linear::with_fan_in(store, "decoder.state", ParamGroup::Decoder, Z_DIM + sd, w, fan_in, true, rng);
        let dec_anchor = Linear::with_fan_in(store, "decoder.anchor", ParamGroup::Decoder, 2, w, fan_in, false, rng);
        let dec_head = Mlp::new(store, "decoder.head", ParamGroup::Decoder, &[w, w, 1], rng);
        set_bias_tail(store, dec_head.output_layer(), 0, stddev_bias(config.range_std_init));

        Ok(Self { config, rnn, prior, pair, seed_query, key, value, pool_out, posterior, dec_state, dec_anchor, dec_head })
    }

    pub fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.state_dim()]
    }

    fn norm_point(&self, p: Point) -> [f64; 2] {
        let c = &self.config;
        [(p[0] - c.center[0]) / c.scale, (p[1] - c.center[1]) / c.scale]
    }

    /// Latent state in network units.
    fn norm_z(&self, tape: &mut Tape, z: Var) -> Var {
        let c = &self.config;
        let shifted = tape.offset(z, &[-c.center[0], -c.center[1], 0.0, 0.0]);
        let w = tape.leaf(vec![1.0 / c.scale, 1.0 / c.scale, 1.0, 1.0]);
        tape.mul(shifted, w)
    }

    /// Constant-velocity map `[x + vx·dt, y + vy·dt, vx, vy]`.
    pub fn physics(&self, tape: &mut Tape, z: Var) -> Var {
        let pos = tape.slice(z, 0, 2);
        let vel = tape.slice(z, 2, 2);
        let step = tape.scale(vel, self.config.dt);
        let next = tape.add(pos, step);
        tape.concat(&[next, vel])
    }

    pub fn sequence_step(&self, tape: &mut Tape, store: &ParamStore, z_prev: Var, h_prev: Var) -> Var {
        let n = self.config.hidden;
        let mut x = self.norm_z(tape, z_prev);
        let mut layers = Vec::with_capacity(self.rnn.len());
        for (l, cell) in self.rnn.iter().enumerate() {
            let hl = tape.slice(h_prev, l * n, n);
            x = cell.forward(tape, store, x, hl);
            layers.push(x);
        }
        tape.concat(&layers)
    }

    pub fn prior_transition(&self, tape: &mut Tape, store: &ParamStore, z_prev: Var, h: Var) -> GaussianVar {
        let zn = self.norm_z(tape, z_prev);
        let input = tape.concat(&[zn, h]);
        let out = self.prior.forward(tape, store, input);
        let raw_mean = tape.slice(out, 0, Z_DIM);
        let residual = tape.scale(raw_mean, self.config.residual_scale);
        let phys = self.physics(tape, z_prev);
        let mean = tape.add(phys, residual);
        let raw_std = tape.slice(out, Z_DIM, Z_DIM);
        GaussianVar { mean, stddev: stddev_head(tape, raw_std) }
    }

    /// Features of one pair relative to the physics prediction `pred_pos`:
    /// `[d/s, anchor (normalized), ρ, u, ρ·u, ux², ux·uy, uy²]` where `u` is
    /// the unit vector from the anchor to the prediction and `ρ` is `d`
    /// minus the predicted range.
    fn pair_features(&self, tape: &mut Tape, pred_pos: Var, distance: f64, anchor: Point) -> Var {
        let an = self.norm_point(anchor);
        let fixed = tape.leaf(vec![distance / self.config.scale, an[0], an[1]]);
        let delta = tape.offset(pred_pos, &[-anchor[0], -anchor[1]]);
        let r = tape.norm(delta);
        let r_safe = tape.offset(r, &[1e-6]);
        let one = tape.scalar_leaf(1.0);
        let inv = tape.div(one, r_safe);
        let u = tape.mul_scalar(delta, inv);
        let neg_r = tape.scale(r, -1.0);
        let rho = tape.offset(neg_r, &[distance]);
        let rho_u = tape.mul_scalar(u, rho);
        let ux = tape.slice(u, 0, 1);
        let uy = tape.slice(u, 1, 1);
        let uxx = tape.mul(ux, ux);
        let uxy = tape.mul(ux, uy);
        let uyy = tape.mul(uy, uy);
        tape.concat(&[fixed, rho, u, rho_u, uxx, uxy, uyy])
    }

    /// Set encoder: a shared pair network, attention pooling from a learned
    /// seed query, then a head over `[pooled, z_prev, h]`. The head output
    /// corrects the physics prediction of `z_prev`.
    pub fn encode_posterior(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_prev: Var,
        h: Var,
        obs: &ObservationSet,
    ) -> Result<GaussianVar> {
        if obs.is_empty() {
            return Err(Error::contract("encoder called with an empty observation set"));
        }
        let pred = self.physics(tape, z_prev);
        let pred_pos = tape.slice(pred, 0, 2);
        let mut keys = Vec::with_capacity(obs.len());
        let mut values = Vec::with_capacity(obs.len());
        for o in &obs.pairs {
            let f = self.pair_features(tape, pred_pos, o.distance, o.anchor);
            let e = self.pair.forward(tape, store, f);
            keys.push(self.key.forward(tape, store, e));
            values.push(self.value.forward(tape, store, e));
        }
        let q = tape.param(store, self.seed_query);
        let pooled = tape.attention_pool(q, &keys, &values, self.config.heads);
        let pooled = self.pool_out.forward(tape, store, pooled);
        let zn = self.norm_z(tape, z_prev);
        let input = tape.concat(&[pooled, zn, h]);
        let out = self.posterior.forward(tape, store, input);
        let correction = tape.slice(out, 0, Z_DIM);
        let mean = tape.add(pred, correction);
        let raw_std = tape.slice(out, Z_DIM, Z_DIM);
        Ok(GaussianVar { mean, stddev: stddev_head(tape, raw_std) })
    }

    /// Anchor-independent part of the decoder's first layer.
    pub fn decoder_state(&self, tape: &mut Tape, store: &ParamStore, z: Var, h: Var) -> Var {
        let zn = self.norm_z(tape, z);
        let input = tape.concat(&[zn, h]);
        self.dec_state.forward(tape, store, input)
    }

    /// Range distribution for one anchor: the mean is the exact distance from
    /// the position of `z`, the spread comes from the noise network.
    pub fn decode_with_state(&self, tape: &mut Tape, store: &ParamStore, z: Var, state: Var, anchor: Point) -> GaussianVar {
        let pos = tape.slice(z, 0, 2);
        let delta = tape.offset(pos, &[-anchor[0], -anchor[1]]);
        let mean = tape.norm(delta);
        let an = self.norm_point(anchor);
        let a = tape.leaf(an.to_vec());
        let pa = self.dec_anchor.forward(tape, store, a);
        let pre = tape.add(state, pa);
        let hid = tape.tanh(pre);
        let raw = self.dec_head.forward(tape, store, hid);
        GaussianVar { mean, stddev: stddev_head(tape, raw) }
    }

    pub fn decode_distance(&self, tape: &mut Tape, store: &ParamStore, z: Var, h: Var, anchor: Point) -> GaussianVar {
        let state = self.decoder_state(tape, store, z, h);
        self.decode_with_state(tape, store, z, state, anchor)
    }

    /// `L^recon` over `targets` (anchor position, observed distance) from a
    /// posterior sample `z`, and `L^dyn = KL(posterior || prior)`.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        h: Var,
        posterior: GaussianVar,
        prior: GaussianVar,
        targets: &[(Point, f64)],
    ) -> ElboTerms {
        let state = self.decoder_state(tape, store, z, h);
        let mut decoded = Vec::with_capacity(targets.len());
        let mut terms = Vec::with_capacity(targets.len());
        for &(anchor, d) in targets {
            let g = self.decode_with_state(tape, store, z, state, anchor);
            let x = tape.scalar_leaf(d);
            terms.push(log_pdf_var(tape, x, g));
            decoded.push((tape.scalar(g.mean), tape.scalar(g.stddev)));
        }
        let recon = if terms.is_empty() { tape.scalar_leaf(0.0) } else { tape.add_n(&terms) };
        let dynamics = self.kl(tape, posterior, prior);
        ElboTerms { recon, dynamics, decoded }
    }

    pub fn kl(&self, tape: &mut Tape, posterior: GaussianVar, prior: GaussianVar) -> Var {
        match self.config.kl_gradient {
            KlGradient::Both => kl_var(tape, posterior, prior),
            KlGradient::PosteriorOnly => {
                let p = prior.detach(tape);
                kl_var(tape, posterior, p)
            }
            KlGradient::PriorOnly => {
                let q = posterior.detach(tape);
                kl_var(tape, q, prior)
            }
        }
    }

    /// Scheduler input: the prior with positions in the networks'
    /// normalized frame, then the recurrent state.
    pub fn policy_state(&self, prior: &DiagonalGaussian, h: &[f64]) -> PolicyState {
        let c = &self.config;
        let mut mean = prior.mean.clone();
        let mut stddev = prior.stddev.clone();
        for i in 0..2 {
            mean[i] = (mean[i] - c.center[i]) / c.scale;
            stddev[i] /= c.scale;
        }
        PolicyState::new(&DiagonalGaussian { mean, stddev }, h)
    }

    pub fn params(&self, store: &ParamStore) -> Vec<ParamId> {
        store.trainable_in(&ParamGroup::DSSM)
    }
}

#[derive(Debug, Clone)]
pub struct ElboTerms {
    pub recon: Var,
    pub dynamics: Var,
    /// `(μ_d, σ_d)` per target.
    pub decoded: Vec<(f64, f64)>,
}

//! Dense layers, tanh MLPs and a GRU cell built on the tape.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{ParamGroup, ParamId, ParamStore, Tensor};

/// Affine map `W x + b`, `W` of shape `[out, in]`, both initialised
/// uniform in `±1/sqrt(fan_in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::with_fan_in(store, name, group, inputs, outputs, inputs, true, rng)
    }

    /// Like [`Linear::new`] but with an explicit fan-in for the init bound,
    /// for weight blocks that are one slice of a wider logical layer.
    #[allow(clippy::too_many_arguments)]
    pub fn with_fan_in(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
        fan_in: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), group, Tensor::uniform(vec![outputs, inputs], bound, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::uniform(vec![outputs], bound, rng)));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(w, b, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of linear layers with tanh between them (no activation on the output).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Runs the hidden layers only, returning the last hidden activation.
    pub fn hidden(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers[..self.layers.len() - 1] {
            h = layer.forward(tape, store, h);
            h = tape.tanh(h);
        }
        h
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.output_layer().outputs
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r  = σ(Wxr x + bxr + Whr h + bhr)
/// u  = σ(Wxu x + bxu + Whu h + bhu)
/// n  = tanh(Wxn x + bxn + r ⊙ (Whn h + bhn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), group, inputs, 3 * hidden, rng);
        let recurrent = Linear::new(store, &format!("{name}.recurrent"), group, hidden, 3 * hidden, rng);
        Self { input, recurrent, hidden }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        let n = self.hidden;
        let gx = self.input.forward(tape, store, x);
        let gh = self.recurrent.forward(tape, store, h);
        let (xr, xu, xn) = (tape.slice(gx, 0, n), tape.slice(gx, n, n), tape.slice(gx, 2 * n, n));
        let (hr, hu, hn) = (tape.slice(gh, 0, n), tape.slice(gh, n, n), tape.slice(gh, 2 * n, n));
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let u = tape.add(xu, hu);
        let u = tape.sigmoid(u);
        let rh = tape.mul(r, hn);
        let cand = tape.add(xn, rh);
        let cand = tape.tanh(cand);
        // h' = n + u ⊙ (h − n)
        let diff = tape.sub(h, cand);
        let gated = tape.mul(u, diff);
        tape.add(cand, gated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let l = Linear::new(&mut s, "l", ParamGroup::Actor, 16, 8, &mut rng);
        assert!(s.tensor(l.weight).values().iter().all(|v| v.abs() <= 0.25));
        assert_eq!(s.tensor(l.weight).shape(), &[8, 16]);
    }

    #[test]
    fn gru_with_zero_parameters_keeps_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, "g", ParamGroup::Sequence, 4, 6, &mut rng);
        let ids: Vec<ParamId> = s.ids().collect();
        for id in ids {
            s.tensor_mut(id).values_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, -2.0, 0.5, 3.0]);
        let h = t.leaf(vec![0.0; 6]);
        let h2 = cell.forward(&mut t, &s, x, h);
        assert_eq!(t.value(h2), &[0.0; 6]);
        // With zero parameters r = u = 1/2 and n = 0, so h' = h / 2.
        let h = t.leaf(vec![1.0; 6]);
        let h2 = cell.forward(&mut t, &s, x, h);
        assert_eq!(t.value(h2), &[0.5; 6]);
    }
}

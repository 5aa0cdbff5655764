use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major f64 buffer with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values, requires_grad: true, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: valid shape")
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(shape, values).expect("uniform: valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.values.len()]);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.values.len(), "gradient shape mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    /// Rebuilds an id from a stored index; only meaningful for the store
    /// layout it was taken from.
    pub fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// Which trainable component a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Sequence,
    Dynamics,
    Encoder,
    Decoder,
    Actor,
    Critic,
}

impl ParamGroup {
    pub const DSSM: [ParamGroup; 4] =
        [ParamGroup::Sequence, ParamGroup::Dynamics, ParamGroup::Encoder, ParamGroup::Decoder];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Sequence => "sequence",
            ParamGroup::Dynamics => "dynamics",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Actor => "actor",
            ParamGroup::Critic => "critic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sequence" => ParamGroup::Sequence,
            "dynamics" => ParamGroup::Dynamics,
            "encoder" => ParamGroup::Encoder,
            "decoder" => ParamGroup::Decoder,
            "actor" => ParamGroup::Actor,
            "critic" => ParamGroup::Critic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Named parameter tensors for every learned component.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), group, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.ids().filter(|id| groups.contains(&self.entries[id.0].group)).collect()
    }

    /// Like [`ids_in`](Self::ids_in) but only tensors that take gradients.
    pub fn trainable_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.ids_in(groups).into_iter().filter(|id| self.entries[id.0].tensor.requires_grad()).collect()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let t = &mut self.entries[id.0].tensor;
        if t.requires_grad() {
            t.accumulate_grad(g);
        }
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.entries[id.0].tensor.zero_grad();
        }
    }

    pub fn zero_all_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.values().iter().all(|v| v.is_finite()))
    }

    /// Copies values (not gradients) of the given groups from `other`, which
    /// must have been built with the same layout.
    pub fn copy_groups_from(&mut self, other: &ParamStore, groups: &[ParamGroup]) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::contract("parameter stores have different layouts"));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::contract(format!("parameter `{}` layout differs", dst.name)));
            }
            if groups.contains(&dst.group) {
                dst.tensor.values_mut().copy_from_slice(src.tensor.values());
            }
        }
        Ok(())
    }
}

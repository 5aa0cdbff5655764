//! Diagonal Gaussians, both as plain values and as tape nodes.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Lower bound added to every learned standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::contract(format!(
                "gaussian mean has {} entries, stddev {}",
                mean.len(),
                stddev.len()
            )));
        }
        if stddev.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::contract("gaussian stddev must be strictly positive"));
        }
        Ok(Self { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], stddev: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, noise: &[f64]) -> Vec<f64> {
        assert_eq!(noise.len(), self.dim(), "noise dimension");
        self.mean.iter().zip(&self.stddev).zip(noise).map(|((m, s), e)| m + s * e).collect()
    }
}

/// Closed-form KL(q || p) between diagonal Gaussians.
pub fn gaussian_kl(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::contract(format!("kl between dims {} and {}", q.dim(), p.dim())));
    }
    Ok((0..q.dim())
        .map(|i| {
            let (mq, sq, mp, sp) = (q.mean[i], q.stddev[i], p.mean[i], p.stddev[i]);
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

pub fn gaussian_log_pdf(x: &[f64], g: &DiagonalGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::contract(format!("log_pdf of dim {} under dim {}", x.len(), g.dim())));
    }
    Ok(x.iter()
        .zip(&g.mean)
        .zip(&g.stddev)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -HALF_LN_2PI - s.ln() - 0.5 * z * z
        })
        .sum())
}

pub fn reparameterize(g: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::contract("noise dimension does not match gaussian"));
    }
    Ok(g.sample(noise))
}

/// A diagonal Gaussian whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar {
    pub mean: Var,
    pub stddev: Var,
}

impl GaussianVar {
    pub fn value(&self, tape: &Tape) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: tape.value(self.mean).to_vec(),
            stddev: tape.value(self.stddev).to_vec(),
        }
    }

    pub fn constant(tape: &mut Tape, g: &DiagonalGaussian) -> Self {
        GaussianVar { mean: tape.leaf(g.mean.clone()), stddev: tape.leaf(g.stddev.clone()) }
    }

    /// `mean + stddev ⊙ noise`; the noise is a constant.
    pub fn reparameterize(&self, tape: &mut Tape, noise: &[f64]) -> Var {
        assert_eq!(noise.len(), tape.dim(self.mean), "noise dimension");
        let e = tape.leaf(noise.to_vec());
        let scaled = tape.mul(self.stddev, e);
        tape.add(self.mean, scaled)
    }

    pub fn detach(&self, tape: &mut Tape) -> Self {
        GaussianVar { mean: tape.detach(self.mean), stddev: tape.detach(self.stddev) }
    }
}

/// Raw network outputs to a standard deviation: `softplus(raw) + SIGMA_FLOOR`.
pub fn stddev_head(tape: &mut Tape, raw: Var) -> Var {
    let sp = tape.softplus(raw);
    tape.offset(sp, &[SIGMA_FLOOR])
}

/// Differentiable KL(q || p), summed over dimensions.
pub fn kl_var(tape: &mut Tape, q: GaussianVar, p: GaussianVar) -> Var {
    assert_eq!(tape.dim(q.mean), tape.dim(p.mean), "kl: dimension mismatch");
    let ln_sp = tape.ln(p.stddev);
    let ln_sq = tape.ln(q.stddev);
    let log_ratio = tape.sub(ln_sp, ln_sq);
    let dm = tape.sub(q.mean, p.mean);
    let dm2 = tape.square(dm);
    let sq2 = tape.square(q.stddev);
    let num = tape.add(sq2, dm2);
    let sp2 = tape.square(p.stddev);
    let den = tape.scale(sp2, 2.0);
    let frac = tape.div(num, den);
    let per_dim = tape.add(log_ratio, frac);
    let per_dim = tape.offset(per_dim, &[-0.5]);
    tape.sum(per_dim)
}

/// Differentiable log-density of `x` (a tape node) under `g`.
pub fn log_pdf_var(tape: &mut Tape, x: Var, g: GaussianVar) -> Var {
    assert_eq!(tape.dim(x), tape.dim(g.mean), "log_pdf: dimension mismatch");
    let diff = tape.sub(x, g.mean);
    let z = tape.div(diff, g.stddev);
    let z2 = tape.square(z);
    let half_z2 = tape.scale(z2, -0.5);
    let ln_s = tape.ln(g.stddev);
    let per_dim = tape.sub(half_z2, ln_s);
    let per_dim = tape.offset(per_dim, &[-HALF_LN_2PI]);
    tape.sum(per_dim)
}

//! Small dense numerics: a differentiation tape, Gaussian helpers, layers and
//! the optimizer shared by every learned component.

pub mod gaussian;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gaussian::{gaussian_kl, gaussian_log_pdf, reparameterize, DiagonalGaussian, GaussianVar, SIGMA_FLOOR};
pub use nn::{GruCell, Linear, Mlp};
pub use optim::{adam_step, clip_grad_norm, cosine_lr, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamGroup, ParamId, ParamStore, Tensor};

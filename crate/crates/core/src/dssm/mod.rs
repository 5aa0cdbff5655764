//! The world model: recurrent memory, physics-plus-residual dynamics, a
//! permutation-invariant set encoder and a range decoder whose mean is the
//! exact Euclidean distance.

pub mod model;
pub mod rollout;

pub use model::{Dssm, DssmConfig, ElboTerms, KlGradient, PAIR_FEATURES, Z_DIM};
pub use rollout::{
    ActionSource, FilterOutput, GreedyPolicy, ImagineOutput, ImaginePolicy, ImagineSetup, RewardSet, RolloutOptions,
    StepTrace, Tracked,
};

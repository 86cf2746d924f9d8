//! Training and evaluation stack for a cooperative object-guessing dialogue
//! game on synthetic scenes.
//!
//! A questioner model asks yes/no/not-applicable questions about a scene, an
//! answerer model replies from the hidden target object, and a guesser model
//! picks the target from the dialogue. The questioner is first trained on
//! scripted dialogues, then refined with policy-gradient updates against the
//! frozen answerer and guesser.
//!
//! Everything runs on the reverse-mode tape in [`autodiff`]; all numerics
//! are generic over the scalar type, with `f64` aliases below used by the
//! training pipeline.

pub mod autodiff;
pub mod decode;
pub mod error;
pub mod eval_report;
pub mod mdp;
pub mod models;
pub mod reinforce;
pub mod scalar;
pub mod supervised;
pub mod scenes;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the shipped training pipeline.
pub type Real = f64;

/// Tensor of pipeline reals.
pub type Tensor = autodiff::Tensor<Real>;
/// Tape of pipeline reals.
pub type Tape = autodiff::Tape<Real>;
/// Parameter store of pipeline reals.
pub type ParamStore = autodiff::ParamStore<Real>;
/// Gradient map of pipeline reals.
pub type Gradients = autodiff::Gradients<Real>;

//! Scalar-generic tensors, a reverse-mode tape, parameter storage, and
//! checkpointing — the numerical substrate for every model in this crate.

pub mod checkpoint;
pub mod kernel;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{derive_seed, Gradients, ParamStore};
pub use tape::{lstm_cell, LstmNodes, NodeId, Tape};
pub use tensor::Tensor;

//! A small dense tensor library with tape-based reverse-mode automatic
//! differentiation, Glorot initialisation, the Adam optimizer and a flat
//! binary checkpoint format.
//!
//! Values are row-major `f64`. Every operation recorded on a [`Graph`]
//! validates its input shapes and checks its output for non-finite values,
//! so a NaN surfaces as an error at the op that produced it rather than as
//! a poisoned loss several layers later.
//!
//! ```
//! use depnet_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod checkpoint;
mod error;
mod graph;
mod optim;
mod params;
mod tensor;

pub mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

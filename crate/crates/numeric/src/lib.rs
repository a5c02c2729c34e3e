//! Dense f64 arrays, a tape-based reverse-mode autodiff graph, small neural
//! building blocks, Adam, and an exact linear-assignment solver.

pub mod array;
pub mod assignment;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;

pub use array::Array;
pub use assignment::{solve_assignment, Assignment};
pub use error::{NumericError, Result};
pub use graph::{Gradients, Graph, Var};
pub use nn::{attention, attention_logits, gumbel_softmax_st, mse_loss, Init, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamGrads, ParamId, ParamStore};

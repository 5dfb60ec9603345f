//! Dense tensors, the differentiable op set, and gradient checking.

mod dense;
pub mod gradcheck;
pub mod graph;
pub mod rng;

pub use dense::{Scalar, Tensor};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{gelu_scalar, softmax_rows_eager, Gradients, Graph, Var};
pub use rng::Rng;

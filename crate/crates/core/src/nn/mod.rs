//! Differentiable primitives, parameter storage and the optimizer.

pub mod adam;
pub mod forward;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod params;
pub mod real;

pub use adam::{AdamHyper, AdamState};
pub use forward::{Forward, Mode};
pub use gradcheck::{grad_check, grad_check_fn, GradCheckOptions, GradCheckReport};
pub use graph::{gelu, Gradients, Graph, Var};
pub use params::{Init, Kind, ParamDecl, ParamStore, ParamTensor};
pub use real::Real;

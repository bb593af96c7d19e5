//! A small reverse-mode differentiation engine with just the primitives the
//! relevance-aware transformer needs.
//!
//! A [`Graph`] records every operation of one forward pass on a tape of
//! 2-D nodes; [`Graph::backward`] walks the tape in reverse. Parameters live
//! in a [`ParameterSet`] borrowed by the graph, so a forward pass never copies
//! weights. The engine is generic over [`Real`]: training runs in `f32` and
//! finite-difference checks in `f64`.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod nn;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{Backward, Graph, NodeId};
pub use nn::{gelu_scalar, multi_head_self_attention, AttentionOutput, AttentionParams, LinearParams, NormParams};
pub use params::{Gradients, ParamId, Parameter, ParameterSet};
pub(crate) use params::init;

/// Floating-point element type of the engine.
pub trait Real: num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static {
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Standard layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod engine;
pub mod environments;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernel1d;
pub mod kernel_hd;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};

/// Double-precision instantiations of the generic types.
pub type Body = geometry::ConvexBody<f64>;
pub type Params = engine::AlgoParams<f64>;
pub type Engine = engine::EngineState<f64>;
pub type Trace = trace::RunTrace<f64>;
pub type Record = trace::RoundRecord<f64>;
pub type Grid = grid::GridDensity<f64>;
pub type Report = environments::RegretReport<f64>;
pub type Oracle = Box<dyn environments::LossOracle<f64>>;
pub type Env = environments::EnvSpec<f64>;

//! Dense-array compute core: recorded graphs, reverse-mode differentiation,
//! seeded RNG streams, and Adam.

pub mod adam;
pub mod array;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::{NdArray, Precision, Real};
pub use exec::{backward_graph, forward_graph, BindingSource, GraphExec, Layered};
pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckReport};
pub use graph::{broadcast_shapes, Graph, NodeId, Op};
pub use params::{Init, ParamSet, ParamSpec};
pub use rng::{DrawDistribution, RngState, RngStream};

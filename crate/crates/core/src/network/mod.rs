//! Regression topologies: layer specs, parameters and the recorded forward
//! pass.

mod forward;
mod params;
mod sequence;
mod spec;

pub use forward::{dense_step, forward, ForwardOptions, ForwardRecord, LayerTrace};
pub use params::{
    LayerParams, NetworkParams, TensorRole, DECAY_INIT, LIF_THRESHOLD_INIT, MIN_THRESHOLD,
    SLSTM_THRESHOLD_INIT,
};
pub use sequence::StateSequence;
pub use spec::{Activation, LayerKind, LayerSpec, NetworkSpec, Preset};

//! Encoder-decoder segmentation networks.

mod arch;
pub mod checkpoint;
mod graph;
mod network;
mod spec;

pub use arch::{declared_param_count, layout};
pub use graph::{BnInfo, Init, Layout, NodeId, ParamInfo};
pub use network::{check_network_gradients, Forward, Network, RunningStats};
pub use spec::{Family, NetworkSpec};

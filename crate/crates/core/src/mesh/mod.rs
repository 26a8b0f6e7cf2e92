pub mod band;
pub mod control;
pub mod network;
pub mod payload;

pub use band::{build_band_plan, BandPlan};
pub use control::Control;
pub use network::{step_network, LinkSnapshot, Network, NetworkConfig, NetworkSnapshot, NetworkSummary, NodeConfig, NodeState};
pub use payload::PayloadSource;

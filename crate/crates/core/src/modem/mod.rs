//! Transmit and receive chains.

pub mod channelizer;
pub mod combine;
pub mod detect;
pub mod equalizer;
pub mod estimate;
pub mod metrics;
pub mod montecarlo;
pub mod prbs;
pub mod qam;
pub mod receiver;
pub mod timing;
pub mod tx;

pub use channelizer::{channelize, Channelizer, ChannelizerDesign};
pub use combine::combine_mrc;
pub use detect::{detect_frame, DetectionResult, Detector, DetectorConfig};
pub use equalizer::{equalize_lms, EqualizerConfig, NlmsEqualizer, Reference};
pub use estimate::{estimate_channel, ChannelEstimate};
pub use metrics::{ber_qam16_theory, evm_rms_pct, LinkMetrics};
pub use qam::{demap_qam16_gray, map_qam16_gray, Modulation};
pub use receiver::{BandReceiver, FrameFailure, FrameReport, ReceiverConfig};
pub use tx::{tx_frame, Transmitter, TxConfig};

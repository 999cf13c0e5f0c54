pub mod channel;
pub mod config;
pub mod mac_csma;
pub mod mac_stdma;
pub mod mobility;
pub mod rng;
pub mod time;
pub mod metrics;
pub mod engine;
pub mod sweep;

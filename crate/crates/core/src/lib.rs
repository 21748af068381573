//! Deterministic discrete-event simulator of a MEC-enabled 5G testbed:
//! chart-deployed core network functions, a dual-UPF user plane, gNB link
//! adaptation, iperf-style traffic and an end-to-end monitoring pipeline.

pub mod cli;
pub mod cluster;
pub mod corenet;
pub mod kernel;
pub mod monitoring;
pub mod ran;
pub mod scenario;
pub mod serve;
pub mod testbed;
pub mod traffic;

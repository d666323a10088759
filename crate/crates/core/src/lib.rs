//! MQTT IoT load-generation testbed.
//!
//! An embedded single-node MQTT broker, a publisher fleet that replays a
//! catalog of device messages under batch/sleep pacing, a verifying subscriber
//! that proves end-to-end delivery, and the benchmark runner that ties them
//! together and renders throughput reports.

pub mod bench;
pub mod broker;
pub mod client;
pub mod codec;
pub mod simgen;
pub mod topic;
pub mod verify;

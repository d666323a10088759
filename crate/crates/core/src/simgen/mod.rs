//! Simulated IoT devices: the message catalog, the pacing plan and the
//! publisher fleet that drives load against a broker.

mod catalog;
mod plan;
mod publisher;
mod sequence;

pub use catalog::{
    load_catalog, Catalog, CatalogError, CatalogRecord, DeviceTemplate, CANONICAL_CATALOG_JSON,
};
pub use plan::{build_plan, PacingPlan, PlanError};
pub use publisher::{
    run_publishers, run_sustained, PayloadMode, PublishError, PublishLog, PublisherOptions,
    SustainedPlan, WorkerError, WorkerLog,
};
pub use sequence::{parse_sequence_tag, sequenced_payload, SequenceTag};

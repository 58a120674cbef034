//! Impliance: an appliance that ingests heterogeneous documents, stores them
//! as versioned universal documents, discovers entities and relationships in
//! the background, and answers search, drill-down, aggregation, connection
//! and view queries over a simulated cluster of data, grid and cluster nodes.

pub mod appliance;
pub mod codec;
pub mod config;
pub mod discovery;
pub mod fabric;
pub mod formats;
pub mod index;
pub mod model;
pub mod query;
pub mod ring;
pub mod schema;
pub mod segment;
pub mod stewardship;
pub mod store;
pub mod views;
pub mod workload;

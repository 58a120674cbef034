//! HTTP gateway and client for the appliance.

pub mod api;
pub mod client;
pub mod server;

pub use api::{handle, ApiRequest, ApiResponse, Method};

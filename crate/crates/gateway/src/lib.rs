//! The only component that talks to model APIs.
//!
//! Renders templated requests, extracts labels and confidences with
//! JSONPath, retries transient failures and hides credentials behind
//! [`PredictorHandle`]. Also ships deterministic mock models and a server
//! for them.

pub mod client;
pub mod error;
pub mod jsonpath;
pub mod mock;
pub mod server;
pub mod template;

pub use client::{Gateway, GatewayConfig, PredictorHandle};
pub use error::{GatewayError, Result};
pub use jsonpath::JsonPath;
pub use mock::MockModel;
pub use server::{Faults, MockServer};
pub use template::{extract_predictions, render_request};

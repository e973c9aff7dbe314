//! Representation learning on continuous-time dynamic graphs: an event
//! store with a leak-safe interaction ledger, contextual temporal-neighbour
//! sampling, spatial/temporal proximity encodings, a masked edge-aware
//! transformer encoder, and the training and evaluation harness.

pub mod encoding;
pub mod error;
pub mod event_store;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod proximity;
pub mod sampler;

pub use error::{CoreError, Result};

//! Minimal reverse-mode autodiff engine used by every trainable model in
//! the crate. Small models, explicit graphs, no framework dependency: every
//! gradient here is checked against finite differences in the test suite.

pub mod init;
pub mod lstm;
pub mod optim;
pub mod store;
pub mod tape;

pub use optim::{Adam, Sgd};
pub use store::{Grads, ParamId, ParamStore};
pub use tape::{NodeId, Tape};

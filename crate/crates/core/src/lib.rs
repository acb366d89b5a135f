//! Zero-trust data access broker.
//!
//! Standing database permissions are replaced by temporary [`contract`]s.
//! Each live contract is served through an [`enclave`] that copies its
//! scoped segments from the [`store`], disconnects, and only then opens a
//! [`gateway`] door for queries. Every action lands in the hash-chained
//! [`audit`] ledger, query events feed the [`monitor`], and emergencies go
//! through the quorum-gated [`breakglass`] desk. [`broker`] wires it all
//! together behind an NDJSON protocol.

pub mod audit;
pub mod breakglass;
pub mod broker;
pub mod canonical;
pub mod contract;
pub mod enclave;
pub mod gateway;
pub mod lexer;
pub mod monitor;
pub mod store;
pub mod value;

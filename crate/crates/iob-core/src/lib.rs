//! Decentralized Internet-of-Behaviors data-management stack.
//!
//! The library is organized in three protocol layers over a deterministic
//! discrete-event simulator:
//!
//! * identity — [`group`] and [`zkp`]: a prime-order group abstraction and
//!   a non-interactive proof-of-identity protocol whose challenge/response
//!   pair is secret-shared across certificate-authority nodes, with
//!   timestamped session tokens for cross-cluster re-authentication.
//! * consensus — [`clustering`], [`consensus`] and [`gossip`]: dual-metric
//!   density clustering of edge servers, intra-cluster PBFT, and weighted
//!   gossip relay between cluster leaders.
//! * access control — [`fss`]: distributed point functions plus an
//!   access-control list of verification keys, letting a set of nodes
//!   jointly check a permission without learning which category was asked.
//!
//! [`sim`] provides the seeded event loop and latency/fault models,
//! [`wire`] the binary message formats, and [`harness`] the dataset
//! ingestion, experiment orchestration and CSV metrics emission behind the
//! `iob` command-line tool.

pub mod clustering;
pub mod consensus;
pub mod error;
pub mod fss;
pub mod gossip;
pub mod group;
pub mod harness;
pub mod shamir;
pub mod sim;
pub mod wire;
pub mod zkp;

pub use error::Error;

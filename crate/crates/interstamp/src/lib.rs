//! Interchain timestamping: checkpointing a blockchain onto others so that
//! clients inherit the best safety of the group and forensic support when
//! even that fails.
//!
//! The crate has three layers:
//!
//! * an executable model of checkpointed chains and the client fork-choice
//!   ([`chain`], [`client`], [`sim`], [`forensics`]), driven by scripted
//!   scenarios with adversarial directives;
//! * a quorum-system algebra ([`algebra`], [`boundary`]) for reasoning about
//!   which security properties interchain protocols can and cannot reach,
//!   including an exhaustive search of the attainable boundary;
//! * an economic analyzer ([`mesh`]) that prices timestamping paths through
//!   a mesh of proof-of-stake zones.

pub mod algebra;
pub mod bitset;
pub mod boundary;
pub mod chain;
pub mod cli;
pub mod client;
pub mod forensics;
pub mod mesh;
pub mod scenario;
pub mod sim;

pub use cli::run;

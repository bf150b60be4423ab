//! Carry-the-Tail atomic broadcast.
//!
//! A two-phase chained BFT protocol whose NEW-VIEW messages carry a short
//! vote window, letting the next leader reinstate an uncertified honest
//! block instead of abandoning it. The crate holds the replica state machine
//! ([`replica`]), block validation ([`validate`]), pacemakers
//! ([`pacemaker`]), a deterministic network ([`simnet`]), scripted
//! Byzantine behavior ([`adversary`]) and the run, check and sweep
//! machinery built on them ([`harness`]).
//!
//! ```
//! use carry_core::harness::{run_scenario, ScenarioConfig};
//! use carry_core::types::ProtocolVariant;
//!
//! let out = run_scenario(&ScenarioConfig::honest(1, 4, ProtocolVariant::CarryTheTail, 10)).unwrap();
//! assert!(out.metrics.commits_total > 0);
//! ```

pub mod crypto;
pub mod types;
pub mod validate;
pub mod pacemaker;
pub mod replica;
pub mod adversary;
pub mod simnet;
pub mod harness;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/carry.md")]
    mod carry {}
    #[doc = include_str!("../../../book/src/adversary.md")]
    mod adversary {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/checking.md")]
    mod checking {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

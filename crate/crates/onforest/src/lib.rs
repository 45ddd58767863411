//! Online primal-dual solver for constrained forest problems and their
//! prize-collecting variants.
//!
//! The crate is organized around an event-driven dual-ascent engine
//! ([`engine::Engine`]) that maintains one capped dual solution per level,
//! buys paths when terminals connect through tight edges, and keeps an
//! executable potential-account ledger whose invariants are checked at
//! runtime with exact rational arithmetic. Reference solvers (exhaustive
//! optimum, offline moat growing, online greedy baselines) live in
//! [`bounds`].
//!
//! All state uses ordered collections and exact rationals, so identical
//! inputs produce identical traces.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod accounting;
pub mod bounds;
pub mod demands;
pub mod engine;
pub mod graph;
pub mod pc;

pub use demands::{DemandState, Request};
pub use engine::{Engine, EngineConfig, EngineError, StepReport, TraceLevel, TraceRecord};
pub use graph::{ComponentIndex, Graph, GraphError, Path};
pub use pc::PenaltyRequest;

use num_bigint::BigInt;

/// Exact rational scalar used for every dual quantity.
pub type Rat = num_rational::BigRational;

/// The rational `n`.
pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// The rational `n` from an unsigned integer.
pub fn rat_u(n: u64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact `2^j` for any (possibly negative) integer exponent.
pub fn pow2(j: i32) -> Rat {
    let one = BigInt::from(1u8);
    if j >= 0 {
        Rat::from_integer(one << j as usize)
    } else {
        Rat::new(one.clone(), one << (-j) as usize)
    }
}

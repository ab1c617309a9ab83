//! Bounded-memory learning: finite-state updating mechanisms, their
//! long-run behaviour under each state of the world, and the welfare
//! diagnostics built on top.

// Negated float comparisons below deliberately treat NaN as invalid input.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod automata;
pub mod chain;
pub mod diagnostics;
pub mod error;
pub mod search;
pub mod signals;

pub use automata::{MechanismBlueprint, UpdatingMechanism};
pub use chain::{Problem, StationaryProfile};
pub use error::{Error, Result};
pub use signals::{Lottery, SignalModel};

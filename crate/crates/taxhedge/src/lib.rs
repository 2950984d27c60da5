//! Risk-minimizing investment strategies for multi-state life-insurance
//! payment processes under continuously paid, symmetric taxes and expenses.
//!
//! The market is a Vasicek savings account plus one zero-coupon bond; the
//! insurance contract is a finite-state Markov jump process with
//! piecewise-constant transition intensities. Taxes are a flat fraction
//! `gamma` of investment returns, expenses a state-dependent rate `delta_j`
//! of portfolio value. The crate computes:
//!
//! * closed-form (tax-scaled) bond prices and exact short-rate paths
//!   ([`term_structure`]),
//! * expense-deflated transition probabilities by forward/backward matrix
//!   ODEs and exact jump-path simulation ([`markov`]),
//! * expected expense-modified cash flows and the benefit/tax/expense
//!   payment streams ([`cashflow`]),
//! * state-wise prospective reserves, the risk-minimizing strategy, and the
//!   associated martingale-decomposition integrands ([`hedging`]),
//! * joint scenario simulation with cost/risk diagnostics, the after-tax
//!   market equivalence map, and the two-step consistency check
//!   ([`market`]).

pub mod cashflow;
pub mod error;
pub mod hedging;
pub mod market;
pub mod markov;
pub mod stats;
pub mod term_structure;
pub mod time;

pub use error::{Error, Result};
pub use time::{PiecewiseConstant, TimeGrid};

//! Scoring, expert-relative metrics and transfer sweeps.

pub mod scores;
pub mod transfer;

//! Training loop, evaluation matrix, synthetic scheduler testbed, traces and
//! reports around the `bimab-core` components.

pub mod bandit_sim;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod scheduler;
pub mod trace;
pub mod train;

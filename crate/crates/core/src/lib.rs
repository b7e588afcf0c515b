//! Peer-to-peer energy trading among parked electric vehicles: market
//! clearing, welfare-maximizing allocation, and a multi-agent
//! actor-critic learner for bidding.

pub mod clearing;
pub mod domain;
pub mod env;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod optim;
pub mod rewards;

//! Structural model of timber lease auctions with a dynamic harvesting stage.
//!
//! The crate is `no_std` + `alloc`. File formats, the command-line front end
//! and thread-pool execution live in the companion `stumpage` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bids;
pub mod chebyshev;
pub mod counterfactual;
pub mod dist;
pub mod dp;
pub mod dynamic;
pub mod entry;
pub mod error;
pub mod exec;
pub mod fit;
pub mod model;
pub mod montecarlo;
pub mod optim;
pub mod rng;
pub mod special;
pub mod valuation;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use fit::{BootstrapSummary, Convergence, FitOptions};
pub use model::{
    AuctionConfig, AuctionFormat, BidderType, CuttingState, DynamicParams, PerType, PriceProcess, Quarters, TypeSpec,
};

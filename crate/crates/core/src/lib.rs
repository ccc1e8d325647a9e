//! Two-stage limb pose estimation for infants from single depth images.
//!
//! A detection network marks joints and limb connections as binary maps;
//! a regression network turns depth plus those maps into smooth confidence
//! maps, which are decoded into per-limb joint chains by peak finding and
//! bipartite matching.

pub mod cli;
pub mod decoding;
pub mod depth;
pub mod grid;
pub mod io;
pub mod maskgen;
pub mod metrics;
pub mod nets;
pub mod skeleton;
pub mod synthdata;
pub mod training;

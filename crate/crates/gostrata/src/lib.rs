//! Combinatorics and Dieudonne-module models for Goren-Oort strata of
//! quaternionic Shimura varieties at an unramified prime.

pub mod witt;
pub mod places;
pub mod strata;
pub mod links;
pub mod picard;
pub mod dieudonne;

//! Linear control systems on semidirect products of tori and nilpotent Lie
//! groups: BCH arithmetic, spectral analysis of derivations, trajectory
//! integration and graph approximation of chain control sets.

pub mod acceptance;
pub mod algebra;
pub mod chains;
pub mod config;
pub mod error;
pub mod group;
pub mod lcs;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod spectral;

pub use error::{Error, Result};

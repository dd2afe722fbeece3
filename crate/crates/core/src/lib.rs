//! Detection of electrical devices in volumetric scans by morphological sieve
//! segmentation, histogram classification and per-voxel repack voting.
//!
//! The pipeline has four stages: unpack a volume into channel volumes with a
//! scale-space sieve ([`sieve`]), extract connected segments and their
//! intensity histograms ([`extract`]), predict a class per segment
//! ([`classify`]) and repack predictions into a per-voxel verdict
//! ([`repack`]). [`bagsim`] builds synthetic bags from phantom objects and
//! [`eval`] runs the evaluation protocols.

pub mod bagsim;
pub mod classify;
pub mod error;
pub mod eval;
pub mod extract;
pub mod grid;
pub mod io;
pub mod labels;
pub mod repack;
pub mod sieve;
pub mod zones;

pub use error::{Error, Result};
pub use grid::{Connectivity, Grid, SignedVolume, Volume};
pub use labels::{DeviceClass, LabelEntry, LabelTable, LabelVolume, Task};

/// Library version recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

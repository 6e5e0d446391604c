//! Local scatter models and fixed-point descattering for radiographs of
//! spherically symmetric objects, with mono- and polyenergetic density
//! reconstruction through a three-point inverse Abel transform.
//!
//! The crate is organised the way the data flows:
//!
//! * [`phantom`] builds shell phantoms and their analytic projections.
//! * [`physics`] turns areal density into direct radiographs and provides a
//!   synthetic scatter oracle plus noise injection.
//! * [`scatter_models`] holds the four scatter model classes and their fitting
//!   routines.
//! * [`local_fit`] selects nearest-neighbour training pairs and dispatches
//!   local or global fits.
//! * [`descatter`] runs the fixed-point loop.
//! * [`recon`] inverts transmission to areal density and areal density to a
//!   central density slice, and scores reconstructions.
//! * [`container`], [`config`] and [`experiments`] wire everything into the
//!   reproducible command-line pipeline.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod container;
pub mod descatter;
pub mod error;
pub mod experiments;
pub mod local_fit;
pub mod phantom;
pub mod physics;
pub mod radiograph;
pub mod recon;
pub mod scatter_models;
pub mod stats;

pub use error::{Error, Result};
pub use radiograph::Radiograph;

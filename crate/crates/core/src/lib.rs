//! Two-phase porous-media flow with POD/DEIM model reduction and a deep
//! residual recurrent surrogate, plus a Monte-Carlo harness comparing them.
//!
//! Modules follow the pipeline: [`geo`] builds grids and random permeability
//! fields, [`fom`] runs the full simulator, [`basis`] extracts POD and DEIM
//! bases from snapshots, [`rom`] runs the Galerkin and DEIM reduced models,
//! [`drrnn`] trains and rolls out the recurrent surrogate, and [`uq`] drives
//! ensembles, metrics and persistence.

pub mod basis;
pub mod drrnn;
pub mod error;
pub mod fom;
pub mod geo;
pub mod rom;
pub mod sparse;
pub mod uq;

pub use error::{Error, Result};

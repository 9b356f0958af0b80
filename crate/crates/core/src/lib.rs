//! Diagonal state-space recurrent units (S4D, S6 and block-biased S6) with
//! analytic input and parameter gradients, a small single-layer model and
//! trainer, synthetic tasks, and the sweeps used to study attribution bias and
//! gradient growth.

pub mod discretization;
pub mod error;
pub mod experiments;
pub mod gradients;
pub mod model;
pub mod numerics;
pub mod par;
pub mod tasks;
pub mod units;

pub use error::{Error, Result};
pub use numerics::{ComplexDiag, RngSpec, SlopeFit, C64};
pub use units::{Sequence, Unit, UnitKind};

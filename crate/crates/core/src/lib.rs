//! Structured static output-feedback H-infinity design for
//! parameter-dependent linear systems.

pub mod basis;
pub mod error;
pub mod hinf;
pub mod linalg;
pub mod ratio;
pub mod saddle;
pub mod subgrad;
pub mod sysmodel;

pub use error::{Error, Result};

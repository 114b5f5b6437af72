//! Shape calculus on planar sublevel-set domains `{g < 0}` perturbed as
//! `g + lambda h`: boundary tracing, the boundary velocity field, finite
//! difference state and derivative solves, difference-quotient studies and
//! shape functionals.

pub mod error;
pub mod fdpde;
pub mod geom;
pub mod linsens;
pub mod objectives;
pub mod shapederiv;
pub mod shapefn;
pub mod tracer;
pub mod verify;

pub use error::{Error, Result};

pub mod density;
pub mod divergence;
pub mod error;
pub mod flow;
pub mod grid;
pub mod ode;
pub mod piecewise;
pub mod points;
pub mod polyhedron;
pub mod quadrature;
pub mod schedule;
pub mod synthesis;
pub mod target;
pub mod xlogx;

pub use error::{Error, Result};

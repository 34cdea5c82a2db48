//! Microcanonical Kac walk with hard-sphere collisions and the numerical
//! large-deviation toolkit built on it.

pub mod cloning;
pub mod control;
pub mod density;
pub mod error;
pub mod functionals;
pub mod optimizer;
pub mod path;
pub mod quadrature;
pub mod seed;
pub mod sim;
pub mod velocity;

pub use error::{Error, Result};
pub use velocity::{Dim, Maxwellian, ParticleState, Velocity};

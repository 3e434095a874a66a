//! Weak KAM solutions of mechanical Hamilton–Jacobi equations on flat tori,
//! the semiflow of generalized characteristics, chain recurrence of that
//! semiflow, Aubry sets and minimal configurations of twist maps.

pub mod action;
pub mod aubry;
pub mod conley;
pub mod error;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod superdiff;
pub mod semiflow;
pub mod suite;
pub mod system;
pub mod twist;
pub mod weakkam;

pub use error::{Error, Result};
pub use geometry::{Mat2, TorusGeometry, Vec2};
pub use system::SystemSpec;

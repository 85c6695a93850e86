//! Matrix and scalar Muckenhoupt weights, degenerate Sobolev spaces and
//! mappings of finite distortion, in discrete form.

pub mod balance;
pub mod error;
pub mod families;
pub mod field;
pub mod grid;
pub mod io;
pub mod maximal;
pub mod mfd;
pub mod plap;
pub mod quadrature;
pub mod spd;
pub mod sum;
pub mod weight_char;
pub mod weighted_ops;

pub use error::{Error, Result};
pub use field::{ScalarField, SpdField, VectorField};
pub use grid::{Ball, Cube, Domain, Grid, Region};
pub use spd::Mat;

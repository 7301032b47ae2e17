//! Nonparametric identification of latent densities and regression functions
//! from systems of convolution equations, solved in the Fourier domain.

pub mod ecf;
pub mod error;
pub mod families;
pub mod grid;
pub mod ident;
pub mod io;
pub mod regular;
pub mod sim;
pub mod wellposed;

pub use error::{Error, Result};
pub use grid::{GridFn, GridSpec, C64};

//! Coupled local/nonlocal diffusion on `(-1, 1)`.
//!
//! The heat equation runs on `(-1, 0)` with a reflecting left end; a
//! convolution-kernel diffusion runs on `(0, 1)`. The two exchange mass
//! through a Robin-type condition at `x = 0` that only involves the trace
//! `u(0)`. The coupled system is the gradient flow of a single energy, which
//! gives mass conservation, energy dissipation, a comparison principle and
//! exponential decay to the mean. Under the rescaling `J^eps` the model
//! approaches the Neumann heat equation on the whole interval.
//!
//! Modules, bottom up:
//! - [`kernels`]: kernel families, moments, coupling constants.
//! - [`discretization`]: grid, fields and the generator `L` of `w' = L w`.
//! - [`energy_spectrum`]: discrete energy, spectral gap, energy-control estimates.
//! - [`evolution`]: explicit, implicit and windowed Picard time stepping.
//! - [`analysis`]: decay fits, cosine-series heat reference, eps sweeps, barriers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod discretization;
pub mod energy_spectrum;
pub mod error;
pub mod evolution;
pub mod kernels;

pub use discretization::{GeneratorMatrix, Grid, Mesh, Model, StateField};
pub use error::{Error, Result};
pub use kernels::{CouplingConstants, Kernel, KernelFamily};

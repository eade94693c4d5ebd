//! Numerical laboratory for the vectorial damped wave equation
//! `(∂_t² − Δ + 2a(x)∂_t) u = 0` on flat tori.
//!
//! The crate computes the eigenfrequencies `τ` of the quadratic pencil
//! `(−Δ − τ² + 2iaτ) v = 0` by Fourier–Galerkin discretization, the
//! Lyapunov exponents and uniform exponential bounds of the damping cocycle
//! `∂_t G_t = −a(x_t) G_t` along the geodesic flow, and the statistics that
//! compare the two: strip and band outliers, Weyl counting, and Birkhoff
//! clustering. An anti-Wick quantization toolbox backs the semiclassical
//! propagator checks.

pub mod analysis;
pub mod cocycle;
pub mod damping;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod lyapunov;
pub mod quantize;
pub mod spectrum;

mod linalg;

pub use error::{Error, Result};

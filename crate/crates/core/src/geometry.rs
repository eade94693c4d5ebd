//! Flat model manifolds: the circle `R/2πZ` and the flat torus `(R/2πZ)^d`.
//!
//! The Hamiltonian flow of `p(x, ξ) = |ξ|²` is `ẋ = 2ξ, ξ̇ = 0`, so every
//! trajectory is a straight line travelled at twice the geodesic speed and
//! the flow is available in closed form.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Reduces an angle to `[0, 2π)`.
pub fn reduce_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    FlatTorus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifold {
    pub kind: ManifoldKind,
    pub d: usize,
}

impl Manifold {
    pub fn circle() -> Self {
        Self {
            kind: ManifoldKind::Circle,
            d: 1,
        }
    }

    pub fn torus(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "torus dimension must be at least 1"));
        }
        Ok(Self {
            kind: ManifoldKind::FlatTorus,
            d,
        })
    }

    /// The flat model of dimension `d`: the circle for `d = 1`, a torus otherwise.
    pub fn flat(d: usize) -> Result<Self> {
        if d == 1 {
            Ok(Self::circle())
        } else {
            Self::torus(d)
        }
    }

    pub fn new(kind: ManifoldKind, d: usize) -> Result<Self> {
        match kind {
            ManifoldKind::Circle if d != 1 => {
                Err(invalid("d", format!("a circle has dimension 1, got {d}")))
            }
            ManifoldKind::Circle => Ok(Self::circle()),
            ManifoldKind::FlatTorus => Self::torus(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Riemannian volume `(2π)^d`.
    pub fn volume(&self) -> f64 {
        TWO_PI.powi(self.d as i32)
    }
}

/// A point `(x, ξ)` of the cotangent bundle with angles kept in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    x: Vec<f64>,
    xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        if x.len() != xi.len() || x.is_empty() {
            return Err(invalid(
                "point",
                format!("position has {} components, momentum {}", x.len(), xi.len()),
            ));
        }
        if x.iter().chain(&xi).any(|v| !v.is_finite()) {
            return Err(invalid("point", "coordinates must be finite"));
        }
        Ok(Self {
            x: x.into_iter().map(reduce_angle).collect(),
            xi,
        })
    }

    /// One-dimensional convenience constructor.
    pub fn on_circle(x: f64, xi: f64) -> Self {
        Self::new(vec![x], vec![xi]).expect("finite circle point")
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `p(x, ξ) = |ξ|²`.
    pub fn energy(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum()
    }

    /// Position at time `t` along the flow, without reducing modulo 2π.
    pub(crate) fn unreduced_position(&self, t: f64, out: &mut [f64]) {
        for ((o, x), xi) in out.iter_mut().zip(&self.x).zip(&self.xi) {
            *o = x + 2.0 * xi * t;
        }
    }
}

/// Hamiltonian flow `φ_t` of `p = |ξ|²`.
pub fn flow(point: &PhasePoint, t: f64) -> PhasePoint {
    PhasePoint {
        x: point
            .x
            .iter()
            .zip(&point.xi)
            .map(|(x, xi)| reduce_angle(x + 2.0 * xi * t))
            .collect(),
        xi: point.xi.clone(),
    }
}

/// Per-index random stream so samples can be produced in any order.
pub(crate) fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `m` points of the energy shell `p^{-1}(energy)` from the Liouville
/// measure: `x` uniform on the torus, `ξ` uniform on the sphere of radius
/// `√energy` (on the circle, `ξ = ±√energy` with equal probability).
pub fn sample_shell(manifold: &Manifold, m: usize, energy: f64, seed: u64) -> Result<Vec<PhasePoint>> {
    if m == 0 {
        return Err(invalid("m", "at least one sample is required"));
    }
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(invalid("energy", format!("must be positive, got {energy}")));
    }
    let radius = energy.sqrt();
    let d = manifold.dim();
    let points = (0..m)
        .map(|i| {
            let mut rng = indexed_rng(seed, i as u64);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..TWO_PI)).collect();
            let xi = if d == 1 {
                vec![if rng.random_bool(0.5) { radius } else { -radius }]
            } else {
                loop {
                    let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = g.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        break g.into_iter().map(|v| radius * v / norm).collect();
                    }
                }
            };
            PhasePoint { x, xi }
        })
        .collect();
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLevel {
    /// Liouville mass of the unit shell `p^{-1}(1)`.
    Shell1,
    /// Phase-space volume of `p^{-1}([0, 1])`.
    Ball01,
}

/// Volume of the unit ball in `R^d`.
fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * TWO_PI / d as f64,
    }
}

/// Phase-space volumes entering the Weyl law.
///
/// The unit shell carries the surface measure of the unit sphere in each
/// fibre. For `d = 1` the "sphere" is the two points `ξ = ±1`, each fibre
/// contributing mass 1, so the shell mass on the circle is `2 · 2π`.
pub fn phase_volume(manifold: &Manifold, level: PhaseLevel) -> f64 {
    let d = manifold.dim();
    let ball = unit_ball_volume(d);
    let fibre = match level {
        PhaseLevel::Ball01 => ball,
        PhaseLevel::Shell1 => d as f64 * ball,
    };
    manifold.volume() * fibre
}

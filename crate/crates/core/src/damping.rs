//! Hermitian-matrix-valued damping fields given as trigonometric polynomials
//! `a(x) = Σ_k A_k e^{ik·x}` on a flat torus.
//!
//! Pointwise Hermitianity is equivalent to `A_{-k} = A_k†` for every mode,
//! which is the invariant every constructor enforces.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::geometry::{PhasePoint, TWO_PI};

/// Tolerance on `‖A_{-k} − A_k†‖` accepted when validating coefficients.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Frequency vector in `Z^d`.
pub type Mode = Vec<i32>;

#[derive(Debug, Clone, PartialEq)]
pub struct DampingField {
    n: usize,
    d: usize,
    coeffs: BTreeMap<Mode, DMatrix<c64>>,
}

/// Grid estimates of `a^- = inf min sp a(x)` and `a^+ = sup max sp a(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremalBounds {
    pub a_minus: f64,
    pub a_plus: f64,
}

impl ExtremalBounds {
    /// Damping with a negative eigenvalue somewhere amplifies rather than dampens.
    pub fn is_sign_indefinite(&self) -> bool {
        self.a_minus < 0.0
    }
}

fn negate(k: &[i32]) -> Mode {
    k.iter().map(|v| -v).collect()
}

/// `k ≻ 0` in lexicographic order: the first non-zero component is positive.
fn is_positive(k: &[i32]) -> bool {
    k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

/// All of `[-k_max, k_max]^d` in lexicographic order.
pub(crate) fn mode_box(d: usize, k_max: i32) -> Vec<Mode> {
    let mut out = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-k_max..=k_max).map(move |v| {
                    let mut m = prefix.clone();
                    m.push(v);
                    m
                })
            })
            .collect();
    }
    out
}

/// `sin(z)/z`, stable near zero.
fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

impl DampingField {
    /// Validates a full coefficient table. Every mode's mirror must be present
    /// and equal to its adjoint.
    pub fn new(n: usize, d: usize, coeffs: BTreeMap<Mode, DMatrix<c64>>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("field", "n and d must be positive"));
        }
        for (k, a) in &coeffs {
            if k.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "mode {k:?} has {} components, expected {d}",
                    k.len()
                )));
            }
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "mode {k:?} coefficient is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid("coeffs", format!("mode {k:?} has non-finite entries")));
            }
            let defect = match coeffs.get(&negate(k)) {
                Some(mirror) => (mirror - a.adjoint()).norm(),
                None => a.norm(),
            };
            if defect > HERMITIAN_TOL * (1.0 + a.norm()) {
                return Err(Error::NotHermitian {
                    mode: k.clone(),
                    defect,
                });
            }
        }
        Ok(Self { n, d, coeffs })
    }

    /// Builds a field from `A_0` and the modes `k ≻ 0`; the mirrors are filled
    /// with adjoints. `A_0` is replaced by its Hermitian part.
    pub fn from_half_spectrum(
        d: usize,
        a0: DMatrix<c64>,
        positive: impl IntoIterator<Item = (Mode, DMatrix<c64>)>,
    ) -> Result<Self> {
        let n = a0.nrows();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(vec![0; d], (&a0 + a0.adjoint()) * c64::new(0.5, 0.0));
        for (k, a) in positive {
            if k.len() != d || !is_positive(&k) {
                return Err(invalid("mode", format!("{k:?} is not a positive mode of Z^{d}")));
            }
            coeffs.insert(negate(&k), a.adjoint());
            coeffs.insert(k, a);
        }
        Self::new(n, d, coeffs)
    }

    pub fn zero(n: usize, d: usize) -> Self {
        Self::constant(d, DMatrix::zeros(n, n)).expect("zero field")
    }

    /// Constant field `a(x) = A` for Hermitian `A`.
    pub fn constant(d: usize, a: DMatrix<c64>) -> Result<Self> {
        Self::from_half_spectrum(d, a, [])
    }

    /// `a(x) = c · Id_n`.
    pub fn scalar_identity(n: usize, d: usize, c: f64) -> Self {
        Self::constant(d, DMatrix::from_diagonal_element(n, n, c64::new(c, 0.0))).expect("scalar field")
    }

    /// Scalar field `a(x) = mean + amplitude · cos(x)` on the circle.
    pub fn cosine(mean: f64, amplitude: f64) -> Self {
        let half = DMatrix::from_element(1, 1, c64::new(amplitude / 2.0, 0.0));
        Self::from_half_spectrum(1, DMatrix::from_element(1, 1, c64::new(mean, 0.0)), [(vec![1], half)])
            .expect("cosine field")
    }

    /// Block-diagonal field `diag(a_1, …, a_m)` assembled from scalar-or-matrix blocks.
    pub fn block_diagonal(blocks: &[DampingField]) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| invalid("blocks", "at least one block"))?;
        let d = first.d;
        if blocks.iter().any(|b| b.d != d) {
            return Err(Error::DimensionMismatch("blocks live on different tori".into()));
        }
        let n: usize = blocks.iter().map(|b| b.n).sum();
        let mut coeffs: BTreeMap<Mode, DMatrix<c64>> = BTreeMap::new();
        let mut offset = 0;
        for b in blocks {
            for (k, a) in &b.coeffs {
                let entry = coeffs.entry(k.clone()).or_insert_with(|| DMatrix::zeros(n, n));
                entry.view_mut((offset, offset), (b.n, b.n)).copy_from(a);
            }
            offset += b.n;
        }
        Self::new(n, d, coeffs)
    }

    /// Random trigonometric-polynomial field with Fourier support `|k|_∞ ≤ K`.
    ///
    /// Coefficients for `k ≻ 0` are complex Gaussian matrices scaled by
    /// `amplitude`, `A_0` is a Hermitian Gaussian matrix with the same scale.
    pub fn random(n: usize, d: usize, k_max: usize, amplitude: f64, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("field", "n and d must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussian = |rng: &mut ChaCha8Rng| -> DMatrix<c64> {
            DMatrix::from_fn(n, n, |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c64::new(re, im) * (amplitude / 2f64.sqrt())
            })
        };
        let a0 = gaussian(&mut rng);
        let positive: Vec<_> = mode_box(d, k_max as i32)
            .into_iter()
            .filter(|k| is_positive(k))
            .map(|k| {
                let a = gaussian(&mut rng);
                (k, a)
            })
            .collect();
        Self::from_half_spectrum(d, a0, positive)
    }

    /// Random positive semi-definite field `a = B(x)†B(x) + floor·Id`, where
    /// `B` is a random trigonometric polynomial of degree `K`. The result has
    /// Fourier support `2K`.
    pub fn random_psd(n: usize, d: usize, k_max: usize, amplitude: f64, floor: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = mode_box(d, k_max as i32);
        let b: Vec<(Mode, DMatrix<c64>)> = modes
            .iter()
            .map(|k| {
                let m = DMatrix::from_fn(n, n, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    c64::new(re, im) * (amplitude / 2f64.sqrt())
                });
                (k.clone(), m)
            })
            .collect();
        // A_m = Σ_{k - l = m} B_l† B_k
        let mut coeffs: BTreeMap<Mode, DMatrix<c64>> = BTreeMap::new();
        for (k, bk) in &b {
            for (l, bl) in &b {
                let m: Mode = k.iter().zip(l).map(|(a, b)| a - b).collect();
                let term = bl.adjoint() * bk;
                *coeffs.entry(m).or_insert_with(|| DMatrix::zeros(n, n)) += term;
            }
        }
        let zero = vec![0; d];
        *coeffs.entry(zero).or_insert_with(|| DMatrix::zeros(n, n)) +=
            DMatrix::from_diagonal_element(n, n, c64::new(floor, 0.0));
        // Exact mirror symmetry up to rounding; re-impose it.
        let positive: Vec<_> = coeffs
            .iter()
            .filter(|(k, _)| is_positive(k))
            .map(|(k, a)| {
                let mirror = &coeffs[&negate(k)];
                (k.clone(), (a + mirror.adjoint()) * c64::new(0.5, 0.0))
            })
            .collect();
        let a0 = coeffs[&vec![0; d]].clone();
        Self::from_half_spectrum(d, a0, positive)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Largest `|k|_∞` with a non-zero coefficient.
    pub fn max_freq(&self) -> usize {
        self.coeffs
            .iter()
            .filter(|(_, a)| a.iter().any(|z| *z != c64::new(0.0, 0.0)))
            .map(|(k, _)| k.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn coeffs(&self) -> &BTreeMap<Mode, DMatrix<c64>> {
        &self.coeffs
    }

    pub fn coeff(&self, k: &[i32]) -> Option<&DMatrix<c64>> {
        self.coeffs.get(k)
    }

    /// Spatial mean `A_0 = (2π)^{-d} ∫ a`.
    pub fn mean(&self) -> DMatrix<c64> {
        self.coeffs
            .get(&vec![0; self.d])
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.n, self.n))
    }

    /// Spatial mean of `tr a`.
    pub fn mean_trace(&self) -> f64 {
        self.mean().trace().re
    }

    /// True when every coefficient is real; the Galerkin generator is then real.
    pub fn is_real(&self) -> bool {
        self.coeffs.values().all(|a| a.iter().all(|z| z.im == 0.0))
    }

    /// `a(x)`, returned as its Hermitian part `(H + H†)/2`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<c64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        self.eval_into(x, &mut out);
        out
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut DMatrix<c64>) {
        out.fill(c64::new(0.0, 0.0));
        for (k, a) in &self.coeffs {
            let phase: f64 = k.iter().zip(x).map(|(k, x)| *k as f64 * x).sum();
            let w = c64::from_polar(1.0, phase);
            out.zip_apply(a, |o, v| *o += v * w);
        }
        let n = self.n;
        for i in 0..n {
            out[(i, i)].im = 0.0;
            for j in i + 1..n {
                let s = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = s;
                out[(j, i)] = s.conj();
            }
        }
    }

    /// Exact line integral `∫_0^t a(x_s) ds` along the flow from `start`.
    ///
    /// Mode `k` contributes `A_k e^{ik·x_0} (e^{iωt} − 1)/(iω)` with
    /// `ω = 2 k·ξ_0`, which degenerates to `A_k e^{ik·x_0} t` when `ω = 0`.
    pub fn line_integral(&self, start: &PhasePoint, t: f64) -> DMatrix<c64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (k, a) in &self.coeffs {
            let kx: f64 = k.iter().zip(start.x()).map(|(k, x)| *k as f64 * x).sum();
            let omega: f64 = 2.0 * k.iter().zip(start.xi()).map(|(k, xi)| *k as f64 * xi).sum::<f64>();
            // (e^{iωt} − 1)/(iω) = t e^{iωt/2} sinc(ωt/2)
            let w = c64::from_polar(t * sinc(omega * t / 2.0), kx + omega * t / 2.0);
            out.zip_apply(a, |o, v| *o += v * w);
        }
        out
    }

    /// `∫_0^t tr a(x_s) ds`, real by Hermitianity.
    pub fn trace_integral(&self, start: &PhasePoint, t: f64) -> f64 {
        self.line_integral(start, t).trace().re
    }

    /// Grid estimate of `a^±` using `grid_points` samples per dimension.
    pub fn extremal_bounds(&self, grid_points: usize) -> Result<ExtremalBounds> {
        let needed = 2 * self.max_freq() + 1;
        if grid_points < needed {
            return Err(invalid(
                "grid_points",
                format!("{grid_points} points per dimension cannot resolve frequency {}", self.max_freq()),
            ));
        }
        let step = TWO_PI / grid_points as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut x = vec![0.0; self.d];
        let mut idx = vec![0usize; self.d];
        let mut h = DMatrix::zeros(self.n, self.n);
        loop {
            for (xi, i) in x.iter_mut().zip(&idx) {
                *xi = *i as f64 * step;
            }
            self.eval_into(&x, &mut h);
            let ev = h.clone().symmetric_eigenvalues();
            lo = lo.min(ev.min());
            hi = hi.max(ev.max());
            // odometer over the grid
            let mut c = 0;
            loop {
                if c == self.d {
                    return Ok(ExtremalBounds { a_minus: lo, a_plus: hi });
                }
                idx[c] += 1;
                if idx[c] < grid_points {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
        }
    }

    /// Default grid: `8(K + 1)` points per dimension.
    pub fn default_grid(&self) -> usize {
        8 * (self.max_freq() + 1)
    }

    /// Hex SHA-256 of the canonical JSON document.
    pub fn content_hash(&self) -> String {
        let doc = serde_json::to_vec(&FieldDocument::from(self)).expect("field serializes");
        Sha256::digest(&doc).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// On-disk layout: `{"n", "d", "K", "coeffs": [{"k", "re", "im"}]}` with
/// row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
struct FieldDocument {
    n: usize,
    d: usize,
    #[serde(rename = "K")]
    k_max: usize,
    coeffs: Vec<ModeDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModeDocument {
    k: Mode,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl From<&DampingField> for FieldDocument {
    fn from(f: &DampingField) -> Self {
        let rows = |a: &DMatrix<c64>, part: fn(&c64) -> f64| -> Vec<Vec<f64>> {
            (0..f.n).map(|i| (0..f.n).map(|j| part(&a[(i, j)])).collect()).collect()
        };
        FieldDocument {
            n: f.n,
            d: f.d,
            k_max: f.max_freq(),
            coeffs: f
                .coeffs
                .iter()
                .map(|(k, a)| ModeDocument {
                    k: k.clone(),
                    re: rows(a, |z| z.re),
                    im: rows(a, |z| z.im),
                })
                .collect(),
        }
    }
}

impl TryFrom<FieldDocument> for DampingField {
    type Error = Error;

    fn try_from(doc: FieldDocument) -> Result<Self> {
        let n = doc.n;
        let mut coeffs = BTreeMap::new();
        for m in doc.coeffs {
            let shape_ok = m.re.len() == n
                && m.im.len() == n
                && m.re.iter().chain(&m.im).all(|r| r.len() == n);
            if !shape_ok {
                return Err(Error::DimensionMismatch(format!("mode {:?} is not {n}x{n}", m.k)));
            }
            if m.k.iter().any(|v| v.unsigned_abs() as usize > doc.k_max) {
                return Err(invalid("K", format!("mode {:?} exceeds K = {}", m.k, doc.k_max)));
            }
            let a = DMatrix::from_fn(n, n, |i, j| c64::new(m.re[i][j], m.im[i][j]));
            if coeffs.insert(m.k.clone(), a).is_some() {
                return Err(invalid("coeffs", format!("mode {:?} listed twice", m.k)));
            }
        }
        DampingField::new(n, doc.d, coeffs)
    }
}

impl Serialize for DampingField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FieldDocument::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DampingField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = FieldDocument::deserialize(d)?;
        DampingField::try_from(doc).map_err(serde::de::Error::custom)
    }
}

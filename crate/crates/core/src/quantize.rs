//! Anti-Wick and Weyl quantization of symbols on `R`, discretized on a
//! uniform grid, and the anti-Wick operator of a symbol on the circle in the
//! Fourier basis.
//!
//! Coherent states are `e_{(x,ξ)}(y) = (hπ)^{-1/4} e^{−(y−x)²/2h} e^{iyξ/h}`
//! and `Op^AW(a) = (2πh)^{-1} ∫ a(x, ξ) |e_{(x,ξ)}⟩⟨e_{(x,ξ)}| dx dξ`.
//! Operators act on grid samples; the `L²` inner product is the sample sum
//! times the spacing, which is uniform, so matrices are compared in the
//! Euclidean sense.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::{Mat, Side};
use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64 as c64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::norm_two;

/// Target accuracy of every phase-space quadrature in this module.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Coherent-state Gaussians are truncated at this many `√h`.
const GAUSS_CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "L")]
    pub half_length: f64,
    pub points: usize,
    pub h: f64,
    pub xi_max: f64,
}

impl GridSpec {
    /// Grid on `[−L, L]` with `points` nodes. Requires spacing `≤ √h/4` and
    /// `xi_max ≥ 3`.
    pub fn new(half_length: f64, points: usize, h: f64, xi_max: f64) -> Result<Self> {
        let g = Self {
            half_length,
            points,
            h,
            xi_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_length > 0.0 && self.half_length.is_finite()) {
            return Err(invalid("L", format!("must be positive, got {}", self.half_length)));
        }
        if self.points < 2 {
            return Err(invalid("points", "at least two grid points are required"));
        }
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(invalid("h", format!("must lie in (0, 1], got {}", self.h)));
        }
        if !(self.xi_max >= 3.0 && self.xi_max.is_finite()) {
            return Err(invalid("xi_max", format!("must be at least 3, got {}", self.xi_max)));
        }
        let width = self.h.sqrt();
        if self.spacing() > width / 4.0 {
            return Err(Error::Unresolved {
                width,
                reason: format!("grid spacing {} exceeds √h/4 = {}", self.spacing(), width / 4.0),
            });
        }
        Ok(())
    }

    /// The same box and resolution at another `h`.
    pub fn with_h(&self, h: f64) -> Result<Self> {
        Self::new(self.half_length, self.points, h, self.xi_max)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    /// Phase-space quadrature step `√h/4`.
    pub fn quadrature_step(&self) -> f64 {
        self.h.sqrt() / 4.0
    }
}

/// Midpoint nodes of `[lo, hi]` with step at most `step`; returns the nodes
/// and the step actually used.
fn midpoints(lo: f64, hi: f64, step: f64) -> (Vec<f64>, f64) {
    let count = ((hi - lo) / step).ceil().max(1.0) as usize;
    let d = (hi - lo) / count as f64;
    ((0..count).map(|i| lo + (i as f64 + 0.5) * d).collect(), d)
}

/// `(hπ)^{-1/4} e^{−(y−x0)²/2h} e^{iyξ0/h}` sampled on the grid.
///
/// Warns when less than `1 − 1e−12` of the Gaussian mass lies in the box.
pub fn coherent_state(x0: f64, xi0: f64, grid: &GridSpec) -> Vec<c64> {
    let h = grid.h;
    let l = grid.half_length;
    let sh = h.sqrt();
    let mass = 0.5 * (libm::erf((l - x0) / sh) - libm::erf((-l - x0) / sh));
    if mass < 1.0 - 1e-12 {
        warn!("coherent state at ({x0}, {xi0}) keeps only {mass} of its mass inside [−{l}, {l}]");
    }
    let norm = (h * PI).powf(-0.25);
    grid.nodes()
        .into_iter()
        .map(|y| c64::from_polar(norm * (-(y - x0).powi(2) / (2.0 * h)).exp(), y * xi0 / h))
        .collect()
}

/// `Σ conj(f) g · Δy`.
pub fn inner(f: &[c64], g: &[c64], grid: &GridSpec) -> c64 {
    f.iter().zip(g).map(|(a, b)| a.conj() * b).sum::<c64>() * grid.spacing()
}

/// `(Σ |f|² Δy)^{1/2}`.
pub fn grid_norm(f: &[c64], grid: &GridSpec) -> f64 {
    inner(f, f, grid).re.sqrt()
}

type SymbolFn = dyn Fn(f64, f64, &mut DMatrix<c64>) + Send + Sync;

#[derive(Clone)]
enum SymbolKind {
    /// `c`.
    Constant(f64),
    /// `c + p x + q ξ + r x² + s ξ²`.
    Polynomial { c: f64, x: f64, xi: f64, x2: f64, xi2: f64 },
    /// `A cos(k x)`.
    Cosine { amplitude: f64, k: f64 },
    Custom { f: Arc<SymbolFn>, psd: bool, support: Option<[f64; 4]> },
}

/// A symbol `(x, ξ) ↦ a(x, ξ) ∈ M_n(C)`.
#[derive(Clone)]
pub struct Symbol {
    n: usize,
    kind: SymbolKind,
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            SymbolKind::Constant(c) => write!(f, "Symbol::Constant({c})"),
            SymbolKind::Polynomial { c, x, xi, x2, xi2 } => {
                write!(f, "Symbol::Polynomial({c} + {x}x + {xi}ξ + {x2}x² + {xi2}ξ²)")
            }
            SymbolKind::Cosine { amplitude, k } => write!(f, "Symbol::Cosine({amplitude} cos({k}x))"),
            SymbolKind::Custom { psd, support, .. } => {
                write!(f, "Symbol::Custom(n = {}, psd = {psd}, support = {support:?})", self.n)
            }
        }
    }
}

impl Symbol {
    pub fn constant(c: f64) -> Self {
        Self {
            n: 1,
            kind: SymbolKind::Constant(c),
        }
    }

    pub fn polynomial(c: f64, x: f64, xi: f64, x2: f64, xi2: f64) -> Self {
        Self {
            n: 1,
            kind: SymbolKind::Polynomial { c, x, xi, x2, xi2 },
        }
    }

    /// `x² + ξ²`.
    pub fn harmonic() -> Self {
        Self::polynomial(0.0, 0.0, 0.0, 1.0, 1.0)
    }

    /// `ξ`.
    pub fn momentum() -> Self {
        Self::polynomial(0.0, 0.0, 1.0, 0.0, 0.0)
    }

    pub fn cosine(amplitude: f64, k: f64) -> Self {
        Self {
            n: 1,
            kind: SymbolKind::Cosine { amplitude, k },
        }
    }

    /// A matrix symbol given by `f(x, ξ, out)`. `psd` flags symbols that are
    /// Hermitian positive semi-definite everywhere; `support` is
    /// `[x_min, x_max, ξ_min, ξ_max]` when known.
    pub fn custom(
        n: usize,
        psd: bool,
        support: Option<[f64; 4]>,
        f: impl Fn(f64, f64, &mut DMatrix<c64>) + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "symbol size must be positive"));
        }
        Ok(Self {
            n,
            kind: SymbolKind::Custom {
                f: Arc::new(f),
                psd,
                support,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_psd(&self) -> bool {
        match &self.kind {
            SymbolKind::Constant(c) => *c >= 0.0,
            SymbolKind::Polynomial { c, x, xi, x2, xi2 } => *x == 0.0 && *xi == 0.0 && *c >= 0.0 && *x2 >= 0.0 && *xi2 >= 0.0,
            SymbolKind::Cosine { amplitude, .. } => *amplitude == 0.0,
            SymbolKind::Custom { psd, .. } => *psd,
        }
    }

    pub fn support(&self) -> Option<[f64; 4]> {
        match &self.kind {
            SymbolKind::Custom { support, .. } => *support,
            _ => None,
        }
    }

    /// Writes `a(x, ξ)` into `out`, which must be `n×n`.
    pub fn eval_into(&self, x: f64, xi: f64, out: &mut DMatrix<c64>) {
        let scalar = |out: &mut DMatrix<c64>, v: f64| out[(0, 0)] = c64::new(v, 0.0);
        match &self.kind {
            SymbolKind::Constant(c) => scalar(out, *c),
            SymbolKind::Polynomial { c, x: p, xi: q, x2, xi2 } => {
                scalar(out, c + p * x + q * xi + x2 * x * x + xi2 * xi * xi)
            }
            SymbolKind::Cosine { amplitude, k } => scalar(out, amplitude * (k * x).cos()),
            SymbolKind::Custom { f, .. } => f(x, xi, out),
        }
    }

    pub fn eval(&self, x: f64, xi: f64) -> DMatrix<c64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        self.eval_into(x, xi, &mut out);
        out
    }

    /// `a ∗ ε` with `ε = (hπ)^{-1} e^{−(y²+η²)/h}`, when it has a closed form:
    /// each coordinate gets variance `h/2`, so `x² ↦ x² + h/2` and
    /// `cos(kx) ↦ e^{−k²h/4} cos(kx)`.
    pub fn mollified(&self, h: f64) -> Option<Symbol> {
        match &self.kind {
            SymbolKind::Constant(_) => Some(self.clone()),
            SymbolKind::Polynomial { c, x, xi, x2, xi2 } => {
                Some(Symbol::polynomial(c + (x2 + xi2) * h / 2.0, *x, *xi, *x2, *xi2))
            }
            SymbolKind::Cosine { amplitude, k } => Some(Symbol::cosine(amplitude * (-k * k * h / 4.0).exp(), *k)),
            SymbolKind::Custom { .. } => None,
        }
    }
}

/// Phase-space nodes of the anti-Wick quadrature.
struct PhaseNodes {
    x: Vec<f64>,
    dx: f64,
    xi: Vec<f64>,
    dxi: f64,
}

impl PhaseNodes {
    /// `x` covers the box plus the Gaussian cutoff on each side, so every
    /// grid point sees a complete family of coherent states; `ξ` covers
    /// `[−xi_max, xi_max]`.
    fn new(grid: &GridSpec) -> Self {
        let step = grid.quadrature_step();
        let margin = GAUSS_CUTOFF * grid.h.sqrt();
        let (x, dx) = midpoints(-grid.half_length - margin, grid.half_length + margin, step);
        let (xi, dxi) = midpoints(-grid.xi_max, grid.xi_max, step);
        Self { x, dx, xi, dxi }
    }

    fn region(&self) -> [f64; 4] {
        [
            self.x[0] - self.dx / 2.0,
            self.x[self.x.len() - 1] + self.dx / 2.0,
            self.xi[0] - self.dxi / 2.0,
            self.xi[self.xi.len() - 1] + self.dxi / 2.0,
        ]
    }
}

/// Dense operator on grid samples with `n` components per point, ordered
/// point-major.
#[derive(Debug, Clone)]
pub struct GridOperator {
    grid: GridSpec,
    n: usize,
    matrix: Mat<c64>,
}

impl GridOperator {
    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, f: &[c64]) -> Vec<c64> {
        let m = &self.matrix;
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * f[j]).sum()).collect()
    }

    /// `‖·‖₂` on the whole grid space.
    pub fn norm(&self) -> Result<f64> {
        norm_two(&self.matrix)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_hermitian_eigenvalue(&self) -> Result<f64> {
        let m = &self.matrix;
        let side = m.nrows();
        let herm = Mat::from_fn(side, side, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        let ev = herm
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| Error::EigenSolver { side })?;
        Ok(ev[0])
    }

    pub fn sub(&self, other: &GridOperator) -> GridOperator {
        GridOperator {
            grid: self.grid,
            n: self.n,
            matrix: &self.matrix - &other.matrix,
        }
    }
}

fn check_support(symbol: &Symbol, region: [f64; 4]) -> Result<()> {
    if let Some(s) = symbol.support() {
        if s[0] < region[0] || s[1] > region[1] || s[2] < region[2] || s[3] > region[3] {
            return Err(Error::SupportOutsideRegion { symbol: s, region });
        }
    }
    Ok(())
}

/// `Op^AW(a)` by midpoint quadrature of the rank-one projectors on the
/// phase-space nodes; matrix symbols act entrywise against the scalar
/// projector weights.
pub fn antiwick_build(symbol: &Symbol, grid: &GridSpec) -> Result<GridOperator> {
    grid.validate()?;
    let nodes = PhaseNodes::new(grid);
    check_support(symbol, nodes.region())?;
    let n = symbol.n();
    let h = grid.h;
    let dy = grid.spacing();
    let p = grid.points;
    let reach = (GAUSS_CUTOFF * h.sqrt() / dy).floor() as usize;
    let offsets = 2 * reach + 1;
    // phase[m][q] = e^{i (m − 2·reach) Δy ξ_q / h}, offsets up to twice the reach
    let span = 4 * reach + 1;
    let phase: Vec<Vec<c64>> = (0..span)
        .map(|m| {
            let shift = (m as f64 - (2 * reach) as f64) * dy / h;
            nodes.xi.iter().map(|xi| c64::from_polar(nodes.dxi, shift * xi)).collect()
        })
        .collect();
    let pref = dy / (2.0 * PI * h) / (h * PI).sqrt() * nodes.dx;
    let mut matrix = Mat::<c64>::zeros(p * n, p * n);
    let mut values: Vec<DMatrix<c64>> = vec![DMatrix::zeros(n, n); nodes.xi.len()];
    let mut kernel: Vec<DMatrix<c64>> = vec![DMatrix::zeros(n, n); span];
    let mut g = Vec::with_capacity(offsets);
    for &x in &nodes.x {
        let centre = ((x + grid.half_length) / dy).round() as isize;
        let lo = (centre - reach as isize).max(0) as usize;
        let hi = ((centre + reach as isize) as usize).min(p - 1);
        if (centre + reach as isize) < 0 || lo > hi {
            continue;
        }
        g.clear();
        g.extend((lo..=hi).map(|i| (-(grid.node(i) - x).powi(2) / (2.0 * h)).exp()));
        for (v, &xi) in values.iter_mut().zip(&nodes.xi) {
            symbol.eval_into(x, xi, v);
        }
        let width = hi - lo;
        for m in (2 * reach - width)..=(2 * reach + width) {
            let k = &mut kernel[m];
            k.fill(c64::new(0.0, 0.0));
            for (v, ph) in values.iter().zip(&phase[m]) {
                k.zip_apply(v, |acc, a| *acc += a * ph);
            }
        }
        for (a, i) in (lo..=hi).enumerate() {
            for (b, j) in (lo..=hi).enumerate() {
                let w = pref * g[a] * g[b];
                let k = &kernel[i + 2 * reach - j];
                for r in 0..n {
                    for c in 0..n {
                        matrix[(i * n + r, j * n + c)] += k[(r, c)] * w;
                    }
                }
            }
        }
    }
    Ok(GridOperator { grid: *grid, n, matrix })
}

/// `Op^W(a)` with kernel `(2πh)^{-1} ∫ a((x+y)/2, ξ) e^{i(x−y)ξ/h} dξ`.
///
/// The `ξ` integral runs over the grid's Nyquist band `|ξ| ≤ πh/Δy` with
/// `2·points` midpoint nodes, which makes `Op^W(1)` the identity exactly and
/// turns the sum for each midpoint into one FFT.
pub fn weyl_build(symbol: &Symbol, grid: &GridSpec) -> Result<GridOperator> {
    grid.validate()?;
    let nyquist = PI * grid.h / grid.spacing();
    check_support(
        symbol,
        [
            -grid.half_length,
            grid.half_length,
            -nyquist,
            nyquist,
        ],
    )?;
    let n = symbol.n();
    let p = grid.points;
    let q = 2 * p;
    let (xis, _) = midpoints(-nyquist, nyquist, 2.0 * nyquist / q as f64);
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(q);
    let mut matrix = Mat::<c64>::zeros(p * n, p * n);
    let mut value = DMatrix::zeros(n, n);
    let mut buffers: Vec<Vec<c64>> = vec![vec![c64::new(0.0, 0.0); q]; n * n];
    // the m-th offset picks up e^{iπm(1/Q − 1)} from the half-step node shift
    let shift = |m: i64| c64::from_polar(1.0 / q as f64, PI * m as f64 * (1.0 / q as f64 - 1.0));
    for s in 0..(2 * p - 1) {
        let mid = -grid.half_length + s as f64 * grid.spacing() / 2.0;
        for (k, &xi) in xis.iter().enumerate() {
            symbol.eval_into(mid, xi, &mut value);
            for r in 0..n {
                for c in 0..n {
                    buffers[r * n + c][k] = value[(r, c)];
                }
            }
        }
        for b in buffers.iter_mut() {
            fft.process(b);
        }
        let i_lo = s.saturating_sub(p - 1);
        let i_hi = s.min(p - 1);
        for i in i_lo..=i_hi {
            let j = s - i;
            let m = i as i64 - j as i64;
            let idx = m.rem_euclid(q as i64) as usize;
            let ph = shift(m);
            for r in 0..n {
                for c in 0..n {
                    matrix[(i * n + r, j * n + c)] = buffers[r * n + c][idx] * ph;
                }
            }
        }
    }
    Ok(GridOperator { grid: *grid, n, matrix })
}

/// Orthonormal basis of the span of coherent states on the lattice
/// `|x| ≤ L/2`, `|ξ| ≤ 1` with spacing `√h`, tensored with `C^n`.
///
/// Grid operators are compared on this subspace: the anti-Wick quadrature
/// only covers `|ξ| ≤ xi_max`, and near the box edges the truncated states
/// are not meaningful.
#[derive(Debug, Clone)]
pub struct InteriorBasis {
    basis: Mat<c64>,
    n: usize,
}

impl InteriorBasis {
    pub fn new(grid: &GridSpec, n: usize) -> Result<Self> {
        grid.validate()?;
        let step = grid.h.sqrt();
        let lattice = |half: f64| {
            let k = (half / step).floor() as i64;
            (-k..=k).map(move |i| i as f64 * step)
        };
        let mut columns: Vec<Vec<c64>> = Vec::new();
        for x in lattice(grid.half_length / 2.0) {
            for xi in lattice(1.0) {
                let e = coherent_state(x, xi, grid);
                for c in 0..n {
                    let mut col = vec![c64::new(0.0, 0.0); grid.points * n];
                    for (i, v) in e.iter().enumerate() {
                        col[i * n + c] = *v;
                    }
                    columns.push(col);
                }
            }
        }
        let rows = grid.points * n;
        let v = Mat::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        let svd = v.thin_svd().map_err(|_| Error::Svd {
            rows,
            cols: columns.len(),
        })?;
        let s = svd.S().column_vector();
        let top = s[0].re;
        let keep = (0..s.nrows()).filter(|&i| s[i].re > 1e-8 * top).count();
        Ok(Self {
            basis: svd.U().subcols(0, keep).to_owned(),
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `Q† A Q`.
    pub fn restrict(&self, op: &GridOperator) -> Result<Mat<c64>> {
        if op.n != self.n || op.matrix.nrows() != self.basis.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "operator of side {} against a basis of length {}",
                op.matrix.nrows(),
                self.basis.nrows()
            )));
        }
        Ok(self.basis.adjoint() * &op.matrix * &self.basis)
    }

    pub fn restricted_norm(&self, op: &GridOperator) -> Result<f64> {
        norm_two(&self.restrict(op)?)
    }

    /// `‖(A − I) Q‖₂`: how far `A` is from the identity on the subspace.
    pub fn identity_defect(&self, op: &GridOperator) -> Result<f64> {
        let aq = &op.matrix * &self.basis;
        norm_two(&(&aq - &self.basis))
    }

    pub fn basis(&self) -> &Mat<c64> {
        &self.basis
    }
}

/// `‖Op^AW(a) − Op^W(a ∗ ε)‖₂ / ‖Op^AW(a)‖₂` on the interior subspace.
pub fn mollified_weyl_residual(symbol: &Symbol, grid: &GridSpec) -> Result<f64> {
    let smooth = symbol.mollified(grid.h).ok_or(Error::NoMollification)?;
    let basis = InteriorBasis::new(grid, symbol.n())?;
    let aw = antiwick_build(symbol, grid)?;
    let w = weyl_build(&smooth, grid)?;
    let scale = basis.restricted_norm(&aw)?;
    Ok(basis.restricted_norm(&aw.sub(&w))? / scale)
}

/// `‖Op^AW(a) − Op^W(a)‖₂` on the interior subspace.
pub fn antiwick_weyl_distance(symbol: &Symbol, grid: &GridSpec) -> Result<f64> {
    let basis = InteriorBasis::new(grid, symbol.n())?;
    let aw = antiwick_build(symbol, grid)?;
    let w = weyl_build(symbol, grid)?;
    basis.restricted_norm(&aw.sub(&w))
}

/// `max ‖a‖₂` over the anti-Wick quadrature nodes.
pub fn sup_norm(symbol: &Symbol, grid: &GridSpec) -> Result<f64> {
    grid.validate()?;
    let nodes = PhaseNodes::new(grid);
    let mut v = DMatrix::zeros(symbol.n(), symbol.n());
    let mut best: f64 = 0.0;
    for &x in &nodes.x {
        for &xi in &nodes.xi {
            symbol.eval_into(x, xi, &mut v);
            let s = if symbol.n() == 1 {
                v[(0, 0)].norm()
            } else {
                v.clone().singular_values().max()
            };
            best = best.max(s);
        }
    }
    Ok(best)
}

/// `Op^AW(a)` on `L²(R/2πZ; C^n)` in the Fourier basis `e^{ikx}/√2π`,
/// `|k| ≤ N`, ordered by mode then component.
///
/// Periodized coherent states have the same Fourier coefficients as the
/// states on `R`, which gives
/// `⟨k|Op|l⟩ = (hπ)^{-1/2} ∫ â_{k−l}(ξ) e^{−(hk−ξ)²/2h} e^{−(hl−ξ)²/2h} dξ`
/// with `â_m(ξ)` the `m`-th Fourier coefficient of `a(·, ξ)`. The `ξ`
/// quadrature covers the whole band `|ξ| ≤ hN` plus the Gaussian cutoff.
pub fn periodic_antiwick(
    n: usize,
    h: f64,
    cutoff: usize,
    symbol: impl Fn(f64, f64, &mut DMatrix<c64>),
) -> Result<Mat<c64>> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(invalid("h", format!("must lie in (0, 1], got {h}")));
    }
    let sh = h.sqrt();
    let band = h * cutoff as f64;
    let reach = (GAUSS_CUTOFF / sh).ceil() as i64;
    let mut x_points = 256usize;
    while x_points <= (4 * reach) as usize {
        x_points *= 2;
    }
    let (xis, dxi) = midpoints(-band - GAUSS_CUTOFF * sh, band + GAUSS_CUTOFF * sh, sh / 4.0);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(x_points);
    let side = n * (2 * cutoff + 1);
    let mut op = Mat::<c64>::zeros(side, side);
    let mut value = DMatrix::zeros(n, n);
    let mut coeffs: Vec<Vec<c64>> = vec![vec![c64::new(0.0, 0.0); x_points]; n * n];
    let pref = dxi / (h * PI).sqrt();
    let big = cutoff as i64;
    for &xi in &xis {
        let centre = (xi / h).round() as i64;
        let k_lo = (centre - reach).max(-big);
        let k_hi = (centre + reach).min(big);
        if k_lo > k_hi {
            continue;
        }
        for p in 0..x_points {
            symbol(2.0 * PI * p as f64 / x_points as f64, xi, &mut value);
            for r in 0..n {
                for c in 0..n {
                    coeffs[r * n + c][p] = value[(r, c)] / x_points as f64;
                }
            }
        }
        for b in coeffs.iter_mut() {
            fft.process(b);
        }
        let gamma: Vec<f64> = (k_lo..=k_hi)
            .map(|k| (-(h * k as f64 - xi).powi(2) / (2.0 * h)).exp())
            .collect();
        for (a, k) in (k_lo..=k_hi).enumerate() {
            for (b, l) in (k_lo..=k_hi).enumerate() {
                let w = pref * gamma[a] * gamma[b];
                let idx = (k - l).rem_euclid(x_points as i64) as usize;
                let row = (k + big) as usize * n;
                let col = (l + big) as usize * n;
                for r in 0..n {
                    for c in 0..n {
                        op[(row + r, col + c)] += coeffs[r * n + c][idx] * w;
                    }
                }
            }
        }
    }
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> GridSpec {
        GridSpec::new(8.0, 641, 0.05, 3.0).unwrap()
    }

    fn small_grid(h: f64) -> GridSpec {
        GridSpec::new(4.0, 401, h, 3.0).unwrap()
    }

    fn rayleigh(op: &GridOperator, f: &[c64], g: &GridSpec) -> c64 {
        inner(f, &op.apply(f), g) / inner(f, f, g)
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(8.0, 641, 0.05, 3.0).is_ok());
        assert!(matches!(GridSpec::new(8.0, 101, 0.05, 3.0), Err(Error::Unresolved { .. })));
        assert!(GridSpec::new(8.0, 641, 0.05, 2.0).is_err());
        assert!(GridSpec::new(8.0, 641, 0.0, 3.0).is_err());
        assert!(GridSpec::new(8.0, 641, 1.5, 3.0).is_err());
        assert_eq!(grid().spacing(), 0.025);
    }

    #[test]
    fn coherent_state_examples() {
        let g = grid();
        let e0 = coherent_state(0.0, 0.0, &g);
        assert!(e0.iter().all(|z| z.im == 0.0 && z.re > 0.0));
        assert!((grid_norm(&e0, &g) - 1.0).abs() < 1e-10);
        let e1 = coherent_state(0.0, 0.7, &g);
        for (a, b) in e0.iter().zip(&e1) {
            assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-14);
        }
        for x0 in [0.3, 1.0] {
            let ex = coherent_state(x0, 0.0, &g);
            assert_relative_eq!(inner(&e0, &ex, &g).re, (-x0 * x0 / (4.0 * g.h)).exp(), max_relative = 1e-10);
        }
        // 5√h inside the box
        let edge = 8.0 - 5.0 * g.h.sqrt();
        assert!((grid_norm(&coherent_state(edge, -1.0, &g), &g) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn antiwick_of_one_is_identity_inside() {
        let g = grid();
        let one = antiwick_build(&Symbol::constant(1.0), &g).unwrap();
        let basis = InteriorBasis::new(&g, 1).unwrap();
        let defect = basis.identity_defect(&one).unwrap();
        assert!(defect < QUADRATURE_TOL, "{defect}");
        let three = antiwick_build(&Symbol::constant(3.0), &g).unwrap();
        let side = one.matrix.nrows();
        let diff = (0..side)
            .flat_map(|i| (0..side).map(move |j| (i, j)))
            .map(|(i, j)| (three.matrix[(i, j)] - one.matrix[(i, j)] * 3.0).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_ground_values() {
        let g = grid();
        let e0 = coherent_state(0.0, 0.0, &g);
        let aw = antiwick_build(&Symbol::harmonic(), &g).unwrap();
        let w = weyl_build(&Symbol::harmonic(), &g).unwrap();
        let qa = rayleigh(&aw, &e0, &g).re;
        let qw = rayleigh(&w, &e0, &g).re;
        assert!((qa / (2.0 * g.h) - 1.0).abs() < 0.05, "{qa}");
        assert!((qw / g.h - 1.0).abs() < 0.05, "{qw}");
    }

    #[test]
    fn weyl_identity_and_momentum() {
        let g = grid();
        let w = weyl_build(&Symbol::constant(1.0), &g).unwrap();
        let side = w.matrix.nrows();
        let id_err = (0..side)
            .flat_map(|i| (0..side).map(move |j| (i, j)))
            .map(|(i, j)| (w.matrix[(i, j)] - if i == j { 1.0 } else { 0.0 }).norm())
            .fold(0.0, f64::max);
        assert!(id_err < 1e-12, "{id_err}");
        let p = weyl_build(&Symbol::momentum(), &g).unwrap();
        for xi0 in [-0.8, 0.0, 0.5, 1.2] {
            let e = coherent_state(0.7, xi0, &g);
            let q = rayleigh(&p, &e, &g);
            assert!((q.re - xi0).abs() < 1e-8 && q.im.abs() < 1e-8, "{xi0}: {q}");
        }
    }

    #[test]
    fn mollified_residuals() {
        let g = grid();
        assert!(mollified_weyl_residual(&Symbol::constant(1.0), &g).unwrap() < QUADRATURE_TOL);
        assert!(mollified_weyl_residual(&Symbol::harmonic(), &g).unwrap() < 1e-4);
        assert!(mollified_weyl_residual(&Symbol::cosine(1.0, 1.0), &g).unwrap() < 1e-4);
        let custom = Symbol::custom(1, true, None, |_, _, out| out[(0, 0)] = c64::new(1.0, 0.0)).unwrap();
        assert!(matches!(mollified_weyl_residual(&custom, &g), Err(Error::NoMollification)));
    }

    #[test]
    fn positivity_and_norm_bound() {
        let g = small_grid(0.05);
        let bump = Symbol::custom(1, true, None, |x, xi, out| {
            out[(0, 0)] = c64::new((-x * x).exp() * (1.0 + xi.cos()), 0.0)
        })
        .unwrap();
        let rank_one = Symbol::custom(2, true, None, |x, xi, out| {
            let v = [c64::new(x.cos(), 0.0), c64::from_polar(x.sin(), xi)];
            for r in 0..2 {
                for c in 0..2 {
                    out[(r, c)] = v[r] * v[c].conj();
                }
            }
        })
        .unwrap();
        for s in [bump, rank_one] {
            let op = antiwick_build(&s, &g).unwrap();
            assert!(op.min_hermitian_eigenvalue().unwrap() >= -1e-8);
            assert!(op.norm().unwrap() <= sup_norm(&s, &g).unwrap() + 1e-6);
        }
        let signed = Symbol::cosine(2.0, 1.0);
        let op = antiwick_build(&signed, &g).unwrap();
        assert!(op.norm().unwrap() <= 2.0 + 1e-6);
        assert!(op.min_hermitian_eigenvalue().unwrap() < -1.0);
    }

    #[test]
    fn support_outside_region_is_rejected() {
        let g = small_grid(0.05);
        let wide = Symbol::custom(1, true, Some([-1.0, 1.0, -10.0, 10.0]), |_, _, out| out[(0, 0)] = c64::new(1.0, 0.0))
            .unwrap();
        assert!(matches!(antiwick_build(&wide, &g), Err(Error::SupportOutsideRegion { .. })));
        let narrow = Symbol::custom(1, true, Some([-1.0, 1.0, -1.0, 1.0]), |_, _, out| out[(0, 0)] = c64::new(1.0, 0.0))
            .unwrap();
        assert!(antiwick_build(&narrow, &g).is_ok());
    }

    #[test]
    fn antiwick_weyl_gap_is_first_order() {
        for s in [Symbol::harmonic(), Symbol::cosine(1.0, 1.0)] {
            let coarse = antiwick_weyl_distance(&s, &small_grid(0.05)).unwrap();
            let fine = antiwick_weyl_distance(&s, &small_grid(0.025)).unwrap();
            let ratio = coarse / fine;
            assert!((1.6..=2.6).contains(&ratio), "{s:?}: {ratio}");
        }
    }

    #[test]
    fn periodic_identity_and_multiplication() {
        let h = 0.05;
        let cutoff = 100;
        let one = periodic_antiwick(1, h, cutoff, |_, _, out| out[(0, 0)] = c64::new(1.0, 0.0)).unwrap();
        for k in 0..=2 * cutoff {
            for l in 0..=2 * cutoff {
                let want = if k == l { 1.0 } else { 0.0 };
                assert!((one[(k, l)] - want).norm() < QUADRATURE_TOL, "({k}, {l})");
            }
        }
        // x-only symbol cos x: ⟨k|Op|k±1⟩ = (1/2) e^{−h/4}
        let c = periodic_antiwick(1, h, cutoff, |x, _, out| out[(0, 0)] = c64::new(x.cos(), 0.0)).unwrap();
        let want = 0.5 * (-h / 4.0).exp();
        assert!((c[(cutoff, cutoff + 1)].re - want).abs() < QUADRATURE_TOL);
        assert!((c[(cutoff + 1, cutoff)].re - want).abs() < QUADRATURE_TOL);
        assert!(c[(cutoff, cutoff)].norm() < QUADRATURE_TOL);
    }
}

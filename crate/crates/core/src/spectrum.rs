//! Fourier–Galerkin discretization of `A_a = [[0, Id], [Δ, −2a]]` and the
//! pencil eigenvalues `τ = −iμ`, `μ ∈ sp(A_a)`.
//!
//! Modes range over the square `[−N, N]^d` in lexicographic order. A state is
//! laid out as the `u` block followed by the `v` block, each ordered by mode
//! and then by component. Multiplication by a trigonometric polynomial is
//! exact on this basis up to truncation, so for `a` constant every Fourier
//! mode decouples and the discrete spectrum is exact.

use std::fmt::Write as _;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::damping::{mode_box, DampingField, Mode};
use crate::error::{invalid, Error, Result};
use crate::geometry::Manifold;

/// Largest matrix side assembled by default.
pub const DEFAULT_SIDE_CAP: usize = 6000;

/// Default fraction of the cutoff whose eigenvalues are trusted.
pub const DEFAULT_RELIABILITY: f64 = 0.5;

/// Relative slack on real-part thresholds, so eigenvalues that sit exactly
/// on a threshold (`τ = ±k` when `a = 0`) are not split by rounding.
pub const EDGE_TOL: f64 = 1e-10;

/// Whether `re ≤ bound` up to [`EDGE_TOL`].
pub fn within(re: f64, bound: f64) -> bool {
    re <= bound + EDGE_TOL * bound.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct DiscretizedGenerator {
    cutoff: usize,
    n: usize,
    manifold: Manifold,
    modes: Vec<Mode>,
    matrix: Mat<c64>,
    real: bool,
    field_hash: String,
}

/// Position of `k` in the lexicographic enumeration of `[−N, N]^d`.
pub(crate) fn mode_index(k: &[i32], cutoff: i32) -> Option<usize> {
    let width = (2 * cutoff + 1) as usize;
    k.iter().try_fold(0usize, |acc, &v| {
        (v.abs() <= cutoff).then(|| acc * width + (v + cutoff) as usize)
    })
}

pub fn assemble(field: &DampingField, manifold: &Manifold, cutoff: usize) -> Result<DiscretizedGenerator> {
    assemble_with_cap(field, manifold, cutoff, DEFAULT_SIDE_CAP)
}

pub fn assemble_with_cap(
    field: &DampingField,
    manifold: &Manifold,
    cutoff: usize,
    cap: usize,
) -> Result<DiscretizedGenerator> {
    if manifold.dim() != field.d() {
        return Err(Error::DimensionMismatch(format!(
            "field on a {}-torus, manifold of dimension {}",
            field.d(),
            manifold.dim()
        )));
    }
    let bandwidth = field.max_freq();
    if cutoff < bandwidth {
        return Err(Error::CutoffBelowBandwidth { cutoff, bandwidth });
    }
    let n = field.n();
    let per_block = (2 * cutoff + 1)
        .checked_pow(field.d() as u32)
        .and_then(|m| m.checked_mul(n));
    let side = per_block.and_then(|b| b.checked_mul(2));
    let (Some(block), Some(side)) = (per_block, side) else {
        return Err(Error::ProblemTooLarge { side: usize::MAX, cap });
    };
    if side > cap {
        return Err(Error::ProblemTooLarge { side, cap });
    }

    let modes = mode_box(field.d(), cutoff as i32);
    let mut matrix = Mat::<c64>::zeros(side, side);
    for (row, k) in modes.iter().enumerate() {
        let k2: i32 = k.iter().map(|v| v * v).sum();
        for c in 0..n {
            let r = row * n + c;
            matrix[(r, block + r)] = c64::new(1.0, 0.0);
            matrix[(block + r, r)] = c64::new(-(k2 as f64), 0.0);
        }
        for (m, a) in field.coeffs() {
            let l: Vec<i32> = k.iter().zip(m).map(|(k, m)| k - m).collect();
            let Some(col) = mode_index(&l, cutoff as i32) else { continue };
            for i in 0..n {
                for j in 0..n {
                    matrix[(block + row * n + i, block + col * n + j)] = a[(i, j)] * -2.0;
                }
            }
        }
    }
    Ok(DiscretizedGenerator {
        cutoff,
        n,
        manifold: *manifold,
        modes,
        matrix,
        real: field.is_real(),
        field_hash: field.content_hash(),
    })
}

impl DiscretizedGenerator {
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    /// The lower-right `v ↦ v̇` block, `−2 Mult(a)`.
    pub fn damping_block(&self) -> Mat<c64> {
        let b = self.side() / 2;
        self.matrix.submatrix(b, b, b, b).to_owned()
    }

    /// Eigenvalues `μ` of the matrix. Real-coefficient fields use the real
    /// Schur path, several times faster than the complex one.
    pub fn generator_eigenvalues(&self) -> Result<Vec<c64>> {
        let side = self.side();
        let out = if self.real {
            Mat::<f64>::from_fn(side, side, |i, j| self.matrix[(i, j)].re).eigenvalues()
        } else {
            self.matrix.eigenvalues()
        };
        out.map_err(|_| Error::EigenSolver { side })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    #[serde(rename = "N")]
    pub cutoff: usize,
    pub n: usize,
    pub manifold: Manifold,
    pub reliable_limit: f64,
    pub field_hash: String,
    pub total: usize,
    pub reliable: usize,
}

/// Pencil eigenvalues sorted by real part, then imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    taus: Vec<c64>,
    cutoff: usize,
    reliable_limit: f64,
    n: usize,
    manifold: Manifold,
    field_hash: String,
}

fn sort_taus(taus: &mut [c64]) {
    taus.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

pub fn eigenvalues_tau(gen: &DiscretizedGenerator, reliability: f64) -> Result<SpectrumSet> {
    if !(reliability > 0.0 && reliability <= 1.0) {
        return Err(invalid("reliability", format!("must lie in (0, 1], got {reliability}")));
    }
    let mut taus: Vec<c64> = gen.generator_eigenvalues()?.into_iter().map(|mu| c64::new(mu.im, -mu.re)).collect();
    sort_taus(&mut taus);
    Ok(SpectrumSet {
        taus,
        cutoff: gen.cutoff,
        reliable_limit: reliability * gen.cutoff as f64,
        n: gen.n,
        manifold: gen.manifold,
        field_hash: gen.field_hash.clone(),
    })
}

/// Assembles and solves with the default reliability fraction.
pub fn solve(field: &DampingField, manifold: &Manifold, cutoff: usize) -> Result<SpectrumSet> {
    eigenvalues_tau(&assemble(field, manifold, cutoff)?, DEFAULT_RELIABILITY)
}

impl SpectrumSet {
    /// A set built from precomputed values, e.g. for tests and reloads.
    pub fn from_taus(mut taus: Vec<c64>, cutoff: usize, reliable_limit: f64, n: usize, manifold: Manifold) -> Self {
        sort_taus(&mut taus);
        Self {
            taus,
            cutoff,
            reliable_limit,
            n,
            manifold,
            field_hash: String::new(),
        }
    }

    pub fn all(&self) -> &[c64] {
        &self.taus
    }

    pub fn reliable(&self) -> impl Iterator<Item = c64> + '_ {
        let limit = self.reliable_limit;
        self.taus.iter().copied().filter(move |t| within(t.re.abs(), limit))
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn reliable_limit(&self) -> f64 {
        self.reliable_limit
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn field_hash(&self) -> &str {
        &self.field_hash
    }

    pub fn metadata(&self) -> SpectrumMetadata {
        SpectrumMetadata {
            cutoff: self.cutoff,
            n: self.n,
            manifold: self.manifold,
            reliable_limit: self.reliable_limit,
            field_hash: self.field_hash.clone(),
            total: self.taus.len(),
            reliable: self.reliable().count(),
        }
    }

    /// `re_tau,im_tau` rows of the reliable set, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_tau,im_tau\n");
        for t in self.reliable() {
            writeln!(s, "{:.16e},{:.16e}", t.re, t.im).expect("writing to a String");
        }
        s
    }

    /// Writes `<stem>.csv` and the `<stem>.json` metadata sidecar.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.metadata())? + "\n",
        )?;
        Ok(())
    }

    /// Largest `|τ + conj(τ')|` minimized over `τ'`, for reliable `τ`:
    /// zero when the reliable set is symmetric under `τ ↦ −conj(τ)`.
    pub fn reflection_defect(&self) -> f64 {
        self.reliable()
            .map(|t| nearest_distance(-t.conj(), &self.taus))
            .fold(0.0, f64::max)
    }
}

/// Distance from `z` to the closest element of `set`, which must be sorted by
/// real part.
pub fn nearest_distance(z: c64, set: &[c64]) -> f64 {
    if set.is_empty() {
        return f64::INFINITY;
    }
    let start = set.partition_point(|t| t.re < z.re);
    let mut best = f64::INFINITY;
    for t in set[start..].iter() {
        if t.re - z.re > best {
            break;
        }
        best = best.min((t - z).norm());
    }
    for t in set[..start].iter().rev() {
        if z.re - t.re > best {
            break;
        }
        best = best.min((t - z).norm());
    }
    best
}

/// Greedy bottleneck distance between two multisets of equal size: each
/// element of `a`, in order, is paired with the closest unused element of
/// `b`. Infinite when the sizes differ. Adequate when clusters are much
/// tighter than their separation.
pub fn multiset_distance(a: &[c64], b: &[c64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut pool: Vec<c64> = b.to_vec();
    sort_taus(&mut pool);
    let mut used = vec![false; pool.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let start = pool.partition_point(|t| t.re < z.re);
        let mut best = (f64::INFINITY, usize::MAX);
        let consider = |i: usize, best: &mut (f64, usize)| {
            let d = (pool[i] - z).norm();
            if !used[i] && d < best.0 {
                *best = (d, i);
            }
        };
        for i in start..pool.len() {
            if pool[i].re - z.re > best.0 {
                break;
            }
            consider(i, &mut best);
        }
        for i in (0..start).rev() {
            if z.re - pool[i].re > best.0 {
                break;
            }
            consider(i, &mut best);
        }
        used[best.1] = true;
        worst = worst.max(best.0);
    }
    worst
}

/// Largest distance from a reliable eigenvalue at cutoff `N` to the nearest
/// eigenvalue at cutoff `2N`.
pub fn convergence_check(field: &DampingField, manifold: &Manifold, cutoff: usize) -> Result<f64> {
    convergence_check_with(field, manifold, cutoff, DEFAULT_RELIABILITY)
}

pub fn convergence_check_with(field: &DampingField, manifold: &Manifold, cutoff: usize, reliability: f64) -> Result<f64> {
    let coarse = eigenvalues_tau(&assemble(field, manifold, cutoff)?, reliability)?;
    let fine = eigenvalues_tau(&assemble(field, manifold, 2 * cutoff)?, reliability)?;
    Ok(coarse
        .reliable()
        .map(|t| nearest_distance(t, fine.all()))
        .fold(0.0, f64::max))
}

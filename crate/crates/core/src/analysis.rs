//! Statistics on a computed spectrum: counting function and Weyl law,
//! outliers from the Lyapunov strip and band, and clustering of `Im τ`.

use std::fmt::Write as _;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{phase_volume, Manifold, PhaseLevel};
use crate::spectrum::{within, SpectrumSet};

/// Eigenvalues with `|Re τ|` below this are treated as lying on the imaginary axis.
pub const AXIS_TOL: f64 = 1e-6;

/// Number of reliable `τ` with `Re τ ∈ [0, λ]`.
///
/// Eigenvalues off the imaginary axis come in pairs `τ, −conj(τ)`, so only
/// `Re τ > 0` is counted there. Eigenvalues on the axis are their own mirror
/// and count with weight one half, rounded up; for `a = 0` this counts the
/// double root `τ = 0` once.
pub fn counting(spectrum: &SpectrumSet, lambda: f64) -> Result<usize> {
    if !(lambda >= 0.0) {
        return Err(invalid("lambda", format!("must be non-negative, got {lambda}")));
    }
    if lambda > spectrum.reliable_limit() {
        return Err(Error::BeyondReliableLimit {
            lambda,
            limit: spectrum.reliable_limit(),
        });
    }
    let mut positive = 0;
    let mut axis = 0usize;
    for t in spectrum.reliable() {
        if t.re.abs() <= AXIS_TOL {
            axis += 1;
        } else if t.re > 0.0 && within(t.re, lambda) {
            positive += 1;
        }
    }
    Ok(positive + axis.div_ceil(2))
}

/// `n (λ/2π)^d · vol p^{-1}([0, 1])`.
pub fn weyl_prediction(n: usize, manifold: &Manifold, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let d = manifold.dim() as i32;
    Ok(n as f64 * (lambda / crate::geometry::TWO_PI).powi(d) * phase_volume(manifold, PhaseLevel::Ball01))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylComparison {
    pub lambda: f64,
    pub count: usize,
    pub prediction: f64,
    pub ratio: f64,
}

pub fn weyl_comparison(spectrum: &SpectrumSet, lambda: f64) -> Result<WeylComparison> {
    let count = counting(spectrum, lambda)?;
    let prediction = weyl_prediction(spectrum.n(), &spectrum.manifold(), lambda)?;
    Ok(WeylComparison {
        lambda,
        count,
        prediction,
        ratio: count as f64 / prediction,
    })
}

/// Reliable `τ` with `Re τ ≥ re_min` and `Im τ ∉ [c_minus − margin, c_plus + margin]`.
pub fn strip_outliers(spectrum: &SpectrumSet, c_minus: f64, c_plus: f64, margin: f64, re_min: f64) -> Result<Vec<c64>> {
    if !(margin > 0.0) {
        return Err(invalid("margin", format!("must be positive, got {margin}")));
    }
    let (lo, hi) = (c_minus - margin, c_plus + margin);
    Ok(spectrum
        .reliable()
        .filter(|t| t.re >= re_min && (t.im < lo || t.im > hi))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub total: usize,
    pub outliers_above: usize,
    pub outliers_below: usize,
}

impl BandWindow {
    pub fn outliers(&self) -> usize {
        self.outliers_above + self.outliers_below
    }

    pub fn in_band(&self) -> usize {
        self.total - self.outliers()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub c_minus: Option<f64>,
    pub c_plus: Option<f64>,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub epsilon: f64,
    pub windows: Vec<BandWindow>,
    pub weyl: Option<WeylComparison>,
}

/// Per-window counts of reliable `τ` with `Im τ ∉ ]−Λ^+ − ε, −Λ^- + ε[`.
///
/// Windows `[lo, lo + w)` tile `[0, reliable_limit]`; the last one is closed
/// and may be shorter.
pub fn band_outliers(
    spectrum: &SpectrumSet,
    lambda_minus: f64,
    lambda_plus: f64,
    epsilon: f64,
    window_width: f64,
) -> Result<BandReport> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if !(window_width > 0.0 && window_width.is_finite()) {
        return Err(invalid("window_width", format!("must be positive, got {window_width}")));
    }
    if lambda_minus > lambda_plus {
        return Err(invalid("lambda", format!("Λ^- = {lambda_minus} exceeds Λ^+ = {lambda_plus}")));
    }
    let limit = spectrum.reliable_limit();
    let count = ((limit / window_width).ceil() as usize).max(1);
    let mut windows: Vec<BandWindow> = (0..count)
        .map(|i| BandWindow {
            re_min: i as f64 * window_width,
            re_max: ((i + 1) as f64 * window_width).min(limit),
            total: 0,
            outliers_above: 0,
            outliers_below: 0,
        })
        .collect();
    let above = -lambda_minus + epsilon;
    let below = -lambda_plus - epsilon;
    for t in spectrum.reliable().filter(|t| t.re >= 0.0) {
        let i = ((t.re / window_width) as usize).min(count - 1);
        let w = &mut windows[i];
        w.total += 1;
        if t.im >= above {
            w.outliers_above += 1;
        } else if t.im <= below {
            w.outliers_below += 1;
        }
    }
    Ok(BandReport {
        c_minus: None,
        c_plus: None,
        lambda_minus,
        lambda_plus,
        epsilon,
        windows,
        weyl: None,
    })
}

impl BandReport {
    pub fn with_strip(mut self, c_minus: f64, c_plus: f64) -> Self {
        self.c_minus = Some(c_minus);
        self.c_plus = Some(c_plus);
        self
    }

    pub fn with_weyl(mut self, weyl: WeylComparison) -> Self {
        self.weyl = Some(weyl);
        self
    }

    pub fn outlier_counts(&self) -> Vec<usize> {
        self.windows.iter().map(BandWindow::outliers).collect()
    }

    pub fn total_outliers(&self) -> usize {
        self.windows.iter().map(BandWindow::outliers).sum()
    }

    /// Mean outliers per window over the left and right halves of the windows.
    pub fn half_averages(&self) -> (f64, f64) {
        let counts = self.outlier_counts();
        let mid = counts.len() / 2;
        let mean = |s: &[usize]| {
            if s.is_empty() {
                0.0
            } else {
                s.iter().sum::<usize>() as f64 / s.len() as f64
            }
        };
        (mean(&counts[..mid]), mean(&counts[mid..]))
    }

    /// Fixed-width text table, one row per window.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "band ]{:.6}, {:.6}[  epsilon {}",
            -self.lambda_plus - self.epsilon,
            -self.lambda_minus + self.epsilon,
            self.epsilon
        )
        .unwrap();
        writeln!(s, "{:>10} {:>10} {:>8} {:>8} {:>8}", "re_min", "re_max", "total", "above", "below").unwrap();
        for w in &self.windows {
            writeln!(
                s,
                "{:>10.3} {:>10.3} {:>8} {:>8} {:>8}",
                w.re_min, w.re_max, w.total, w.outliers_above, w.outliers_below
            )
            .unwrap();
        }
        if let Some(w) = &self.weyl {
            writeln!(s, "weyl: lambda {} count {} prediction {:.3} ratio {:.5}", w.lambda, w.count, w.prediction, w.ratio)
                .unwrap();
        }
        s
    }
}

/// Gnuplot-ready `Re τ  Im τ` columns for the reliable set.
pub fn plot_data(spectrum: &SpectrumSet) -> String {
    let mut s = String::from("# re_tau im_tau\n");
    for t in spectrum.reliable() {
        writeln!(s, "{:.16e} {:.16e}", t.re, t.im).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn window_values(spectrum: &SpectrumSet, window: [f64; 2]) -> Result<Vec<c64>> {
    let [lo, hi] = window;
    if !(lo <= hi) {
        return Err(invalid("window", format!("[{lo}, {hi}] is empty")));
    }
    if hi > spectrum.reliable_limit() {
        return Err(Error::BeyondReliableLimit {
            lambda: hi,
            limit: spectrum.reliable_limit(),
        });
    }
    Ok(spectrum.reliable().filter(|t| t.re >= lo && t.re <= hi).collect())
}

/// Histogram of `Im τ` for reliable `τ` with `Re τ ∈ window`, on `bins`
/// equal bins spanning the observed range.
pub fn cluster_histogram(spectrum: &SpectrumSet, window: [f64; 2], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(invalid("bins", "at least one bin is required"));
    }
    let values = window_values(spectrum, window)?;
    if values.is_empty() {
        return Ok(Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        });
    }
    let lo = values.iter().map(|t| t.im).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|t| t.im).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for t in values {
        counts[(((t.im - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// For each exponent `λ_i`, the fraction of window eigenvalues with
/// `|Im τ + λ_i| ≤ ε`. Zero everywhere for an empty window.
pub fn cluster_masses(spectrum: &SpectrumSet, window: [f64; 2], exponents: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let values = window_values(spectrum, window)?;
    if values.is_empty() {
        return Ok(vec![0.0; exponents.len()]);
    }
    Ok(exponents
        .iter()
        .map(|l| values.iter().filter(|t| (t.im + l).abs() <= epsilon).count() as f64 / values.len() as f64)
        .collect())
}

/// Fraction of window eigenvalues within `ε` of some `−λ_i`.
pub fn cluster_fraction(spectrum: &SpectrumSet, window: [f64; 2], exponents: &[f64], epsilon: f64) -> Result<f64> {
    let values = window_values(spectrum, window)?;
    if values.is_empty() {
        return Ok(0.0);
    }
    let near = values
        .iter()
        .filter(|t| exponents.iter().any(|l| (t.im + l).abs() <= epsilon))
        .count();
    Ok(near as f64 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfilePoint {
    pub lambda: f64,
    pub fraction: f64,
}

/// `cluster_fraction` on the windows `[λ, λ + 1]`, skipping those beyond the
/// reliable range. Exploratory: no monotonicity is enforced.
pub fn cluster_profile(
    spectrum: &SpectrumSet,
    lambdas: &[f64],
    exponents: &[f64],
    epsilon: f64,
) -> Result<Vec<ClusterProfilePoint>> {
    lambdas
        .iter()
        .filter(|&&l| l + 1.0 <= spectrum.reliable_limit())
        .map(|&lambda| {
            Ok(ClusterProfilePoint {
                lambda,
                fraction: cluster_fraction(spectrum, [lambda, lambda + 1.0], exponents, epsilon)?,
            })
        })
        .collect()
}

//! Exponential rates of the damping cocycle.
//!
//! * `C_t^±`: uniform bounds over the energy shell,
//!   `C_t^- = −(1/t) sup log‖G_t‖₂` and `C_t^+ = −(1/t) inf log(‖G_t^{-1}‖₂^{-1})`.
//! * `λ_1 ≤ … ≤ λ_n`: Lyapunov exponents at a point, by propagating an
//!   orthonormal frame and re-orthonormalizing with QR.
//! * Exterior-power partial sums `(1/t) log‖Λ^i G_t‖₂`, computed from the
//!   compound cocycle `Λ^i G`, an independent route to the top-`i` sums.
//! * `Λ^- = ess inf λ_1`, `Λ^+ = ess sup λ_n`, estimated by min/max over
//!   Liouville samples of the shell `p^{-1}(1/2)`.
//!
//! With these sign conventions `C_∞^- ≤ −Λ^+ ≤ −Λ^- ≤ C_∞^+`.

use nalgebra::DMatrix;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{apply_left, apply_right, propagate_generator, Generator, ScaledMatrix, Stepper, FieldGenerator};
use crate::damping::DampingField;
use crate::error::{invalid, Error, Result};
use crate::geometry::{sample_shell, Manifold, PhasePoint};

/// Energy level of the shell on which the cocycle statistics are sampled.
pub const SHELL_ENERGY: f64 = 0.5;

/// Finite-horizon slack on the ordering chain, in units of `1/T`.
pub const ORDERING_SLACK: f64 = 3.0;

/// Finite-horizon slack on the sum rule and exterior sums, in units of `1/T`.
pub const SUM_RULE_SLACK: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    pub renorm_every: usize,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            horizon: 200.0,
            dt: 1e-3,
            samples: 64,
            seed: 0,
            renorm_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Spectral,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteTimeBounds {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// `λ_1 ≤ … ≤ λ_n`.
    pub exponents: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub point: PhasePoint,
    /// Same estimate at roughly half the horizon, for convergence checks.
    pub half_horizon: Vec<f64>,
}

impl LyapunovSpectrum {
    /// `λ_1`.
    pub fn smallest(&self) -> f64 {
        self.exponents[0]
    }

    /// `λ_n`.
    pub fn largest(&self) -> f64 {
        *self.exponents.last().expect("non-empty spectrum")
    }

    /// Sum of the `i` largest exponents.
    pub fn top_sum(&self, i: usize) -> f64 {
        self.exponents.iter().rev().take(i).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssentialBounds {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub m: usize,
    pub half_horizon_minus: f64,
    pub half_horizon_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CInfinityEstimate {
    pub c_minus: f64,
    pub c_plus: f64,
    /// Largest change of either bound between successive horizons.
    pub diagnostic: f64,
    pub history: Vec<FiniteTimeBounds>,
    pub warning: Option<String>,
}

fn flat_model(field: &DampingField) -> Result<Manifold> {
    Manifold::flat(field.d())
}

fn validate(horizon: f64, m: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    if m == 0 {
        return Err(invalid("m", "at least one shell sample is required"));
    }
    Ok(())
}

/// Everything one trajectory contributes to the shell statistics.
#[derive(Debug, Clone)]
struct SampleRun {
    log_norm: [f64; 2],
    log_inv_norm: [f64; 2],
    half_log_norm: f64,
    half_log_inv_norm: f64,
    exponents: Vec<f64>,
    half_exponents: Vec<f64>,
    trace_rate: f64,
}

/// Orthonormal frame propagation with periodic QR.
struct QrFrame {
    frame: DMatrix<c64>,
    scratch: DMatrix<c64>,
    log_sums: Vec<f64>,
    half: Option<(f64, Vec<f64>)>,
}

impl QrFrame {
    fn new(n: usize) -> Self {
        Self {
            frame: DMatrix::identity(n, n),
            scratch: DMatrix::zeros(n, n),
            log_sums: vec![0.0; n],
            half: None,
        }
    }

    fn advance(&mut self, p: &DMatrix<c64>) {
        p.mul_to(&self.frame, &mut self.scratch);
        std::mem::swap(&mut self.frame, &mut self.scratch);
    }

    fn reorthonormalize(&mut self, time: f64) -> Result<()> {
        let qr = self.frame.clone().qr();
        let r = qr.r();
        for (i, sum) in self.log_sums.iter_mut().enumerate() {
            let magnitude = r[(i, i)].norm();
            if !(magnitude > 1e-300 && magnitude.is_finite()) {
                return Err(Error::RankLoss { time, magnitude });
            }
            *sum += magnitude.ln();
        }
        self.frame = qr.q();
        Ok(())
    }

    fn exponents(sums: &[f64], time: f64) -> Vec<f64> {
        let mut e: Vec<f64> = sums.iter().map(|s| s / time).collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

fn run_sample(field: &DampingField, point: &PhasePoint, horizon: f64, dt: f64, renorm_every: Option<usize>) -> Result<SampleRun> {
    let n = field.n();
    let mut stepper = Stepper::new(point, horizon, dt, n)?;
    let steps = stepper.steps();
    let half_step = steps / 2;
    let mut g = ScaledMatrix::identity(n);
    let mut h = ScaledMatrix::identity(n);
    let mut scratch = DMatrix::zeros(n, n);
    let mut half_norms = (0.0, 0.0);
    let mut frame = renorm_every.map(|_| QrFrame::new(n));
    let every = renorm_every.unwrap_or(1).max(1);
    let mut failure = None;
    stepper.run(&mut FieldGenerator(field), true, true, |i, t, st| {
        apply_left(&mut g, &st.forward, &mut scratch);
        apply_right(&mut h, &st.inverse, &mut scratch);
        if i + 1 == half_step {
            half_norms = (g.log_norm2(), h.log_norm2());
        }
        if let Some(frame) = frame.as_mut() {
            frame.advance(&st.forward);
            if ((i + 1) % every == 0 || i + 1 == steps) && failure.is_none() {
                if let Err(e) = frame.reorthonormalize(t) {
                    failure = Some(e);
                }
                if frame.half.is_none() && i + 1 >= half_step {
                    frame.half = Some((t, frame.log_sums.clone()));
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let half_time = half_step as f64 * stepper.step_size();
    let (exponents, half_exponents) = match frame {
        Some(f) => {
            let (ht, hs) = f.half.clone().unwrap_or((horizon, f.log_sums.clone()));
            (QrFrame::exponents(&f.log_sums, horizon), QrFrame::exponents(&hs, ht))
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(SampleRun {
        log_norm: [g.log_norm2(), g.log_norm_frobenius()],
        log_inv_norm: [h.log_norm2(), h.log_norm_frobenius()],
        half_log_norm: half_norms.0 / half_time.max(f64::MIN_POSITIVE),
        half_log_inv_norm: half_norms.1 / half_time.max(f64::MIN_POSITIVE),
        exponents,
        half_exponents,
        trace_rate: field.trace_integral(point, horizon) / horizon,
    })
}

fn run_samples(
    field: &DampingField,
    points: &[PhasePoint],
    horizon: f64,
    dt: f64,
    renorm_every: Option<usize>,
) -> Result<Vec<SampleRun>> {
    points
        .par_iter()
        .map(|p| run_sample(field, p, horizon, dt, renorm_every))
        .collect()
}

fn bounds_from_runs(runs: &[SampleRun], horizon: f64, norm: NormKind) -> FiniteTimeBounds {
    let idx = match norm {
        NormKind::Spectral => 0,
        NormKind::Frobenius => 1,
    };
    let max_g = runs.iter().map(|r| r.log_norm[idx]).fold(f64::NEG_INFINITY, f64::max);
    let max_h = runs.iter().map(|r| r.log_inv_norm[idx]).fold(f64::NEG_INFINITY, f64::max);
    FiniteTimeBounds {
        horizon,
        c_minus: -max_g / horizon,
        c_plus: max_h / horizon,
        sample_count: runs.len(),
    }
}

/// `C_T^±` estimated over `m` Liouville samples of `p^{-1}(1/2)`.
pub fn finite_time_bounds(field: &DampingField, horizon: f64, m: usize, dt: f64, seed: u64) -> Result<FiniteTimeBounds> {
    validate(horizon, m)?;
    let points = sample_shell(&flat_model(field)?, m, SHELL_ENERGY, seed)?;
    finite_time_bounds_at(field, &points, horizon, dt, NormKind::Spectral)
}

/// `C_T^±` over an explicit set of starting points, with the chosen matrix norm.
pub fn finite_time_bounds_at(
    field: &DampingField,
    points: &[PhasePoint],
    horizon: f64,
    dt: f64,
    norm: NormKind,
) -> Result<FiniteTimeBounds> {
    validate(horizon, points.len())?;
    let runs = run_samples(field, points, horizon, dt, None)?;
    Ok(bounds_from_runs(&runs, horizon, norm))
}

/// `C_{T_max}^±` together with the largest change between successive
/// horizons of `horizons`.
pub fn extrapolate_c_infinity(
    field: &DampingField,
    horizons: &[f64],
    m: usize,
    dt: f64,
    seed: u64,
) -> Result<CInfinityEstimate> {
    if horizons.len() < 3 {
        return Err(invalid("T_list", "at least three horizons are required"));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("T_list", "horizons must be strictly increasing"));
    }
    let history = horizons
        .iter()
        .map(|&t| finite_time_bounds(field, t, m, dt, seed))
        .collect::<Result<Vec<_>>>()?;
    let diffs: Vec<f64> = history
        .windows(2)
        .map(|w| (w[1].c_minus - w[0].c_minus).abs().max((w[1].c_plus - w[0].c_plus).abs()))
        .collect();
    let diagnostic = diffs.iter().copied().fold(0.0, f64::max);
    let last_diff = *diffs.last().expect("two or more differences");
    let warning = (diagnostic > 10.0 * last_diff).then(|| {
        format!("successive differences up to {diagnostic:.3e} exceed ten times the last one ({last_diff:.3e})")
    });
    let last = history.last().expect("non-empty history");
    Ok(CInfinityEstimate {
        c_minus: last.c_minus,
        c_plus: last.c_plus,
        diagnostic,
        history,
        warning,
    })
}

/// Finite-horizon Lyapunov spectrum at `point` by QR re-orthonormalization
/// every `renorm_every` steps.
pub fn lyapunov_spectrum(
    field: &DampingField,
    point: &PhasePoint,
    horizon: f64,
    dt: f64,
    renorm_every: usize,
) -> Result<LyapunovSpectrum> {
    validate(horizon, 1)?;
    if renorm_every == 0 {
        return Err(invalid("renorm_every", "must be at least one step"));
    }
    let run = run_sample(field, point, horizon, dt, Some(renorm_every))?;
    Ok(LyapunovSpectrum {
        exponents: run.exponents,
        horizon,
        point: point.clone(),
        half_horizon: run.half_exponents,
    })
}

/// Subsets of `{0, …, n−1}` of size `i`, in lexicographic order.
pub(crate) fn subsets(n: usize, i: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..=n - left {
            cur.push(j);
            go(j + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, i, &mut Vec::new(), &mut out);
    out
}

/// Derivation induced by `a` on `Λ^i C^n`: the generator of the compound
/// cocycle `Λ^i G`. In the basis of sorted index sets, the diagonal entry for
/// `S` is `Σ_{s∈S} a_ss`; sets differing in one index, `p ∈ S` replaced by
/// `q ∈ T`, get `(−1)^{pos_S(p) + pos_T(q)} a_pq`.
pub(crate) fn exterior_derivation(a: &DMatrix<c64>, sets: &[Vec<usize>], out: &mut DMatrix<c64>) {
    out.fill(c64::new(0.0, 0.0));
    for (r, s) in sets.iter().enumerate() {
        for (c, t) in sets.iter().enumerate() {
            if r == c {
                out[(r, c)] = s.iter().map(|&j| a[(j, j)]).sum();
                continue;
            }
            let only_s: Vec<usize> = (0..s.len()).filter(|&k| !t.contains(&s[k])).collect();
            if only_s.len() != 1 {
                continue;
            }
            let only_t: Vec<usize> = (0..t.len()).filter(|&k| !s.contains(&t[k])).collect();
            let (ps, pt) = (only_s[0], only_t[0]);
            let sign = if (ps + pt) % 2 == 0 { 1.0 } else { -1.0 };
            out[(r, c)] = a[(s[ps], t[pt])] * sign;
        }
    }
}

struct ExteriorGenerator<'a> {
    field: &'a DampingField,
    sets: Vec<Vec<usize>>,
    a: DMatrix<c64>,
}

impl Generator for ExteriorGenerator<'_> {
    fn dim(&self) -> usize {
        self.sets.len()
    }

    fn eval_into(&mut self, x: &[f64], out: &mut DMatrix<c64>) {
        self.field.eval_into(x, &mut self.a);
        exterior_derivation(&self.a, &self.sets, out);
    }
}

/// `(1/T) log‖Λ^i G_T‖₂`, the sum of the `i` largest finite-time exponents,
/// from the compound cocycle `∂_t Λ^i G = −D_i(a) Λ^i G`.
pub fn exterior_sums(field: &DampingField, point: &PhasePoint, horizon: f64, dt: f64, i: usize) -> Result<f64> {
    validate(horizon, 1)?;
    let n = field.n();
    if i == 0 || i > n {
        return Err(invalid("i", format!("exterior degree must lie in 1..={n}, got {i}")));
    }
    let mut gen = ExteriorGenerator {
        field,
        sets: subsets(n, i),
        a: DMatrix::zeros(n, n),
    };
    let g = propagate_generator(&mut gen, point, horizon, dt)?;
    Ok(g.log_norm2() / horizon)
}

fn essential_from_runs(runs: &[SampleRun], horizon: f64) -> EssentialBounds {
    let fold = |f: fn(&SampleRun) -> f64, min: bool| {
        runs.iter().map(f).fold(if min { f64::INFINITY } else { f64::NEG_INFINITY }, |a, b| {
            if min {
                a.min(b)
            } else {
                a.max(b)
            }
        })
    };
    EssentialBounds {
        lambda_minus: fold(|r| r.exponents[0], true),
        lambda_plus: fold(|r| *r.exponents.last().unwrap(), false),
        horizon,
        m: runs.len(),
        half_horizon_minus: fold(|r| r.half_exponents[0], true),
        half_horizon_plus: fold(|r| *r.half_exponents.last().unwrap(), false),
    }
}

/// `Λ^-` and `Λ^+` as min of `λ_1` and max of `λ_n` over `m ≥ 10` shell samples.
pub fn essential_bounds(field: &DampingField, horizon: f64, m: usize, dt: f64, seed: u64) -> Result<EssentialBounds> {
    validate(horizon, m)?;
    if m < 10 {
        return Err(invalid("m", format!("essential bounds need at least 10 samples, got {m}")));
    }
    let points = sample_shell(&flat_model(field)?, m, SHELL_ENERGY, seed)?;
    let runs = run_samples(field, &points, horizon, dt, Some(LyapunovParams::default().renorm_every))?;
    Ok(essential_from_runs(&runs, horizon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiagnostics {
    pub c_minus_half: f64,
    pub c_plus_half: f64,
    pub lambda_minus_half: f64,
    pub lambda_plus_half: f64,
    /// `max |Σ λ_i + (1/T)∫ tr a|` over samples.
    pub sum_rule_defect: f64,
    pub ordering_slack: f64,
    pub ordering_chain_holds: bool,
    pub a_minus: f64,
    pub a_plus: f64,
    pub sign_indefinite: bool,
    pub dt: f64,
    pub renorm_every: usize,
    pub seed: u64,
}

/// Combined estimate of `C^±` and `Λ^±` on one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub m: usize,
    pub c_minus: f64,
    pub c_plus: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub diagnostics: LyapunovDiagnostics,
}

impl LyapunovReport {
    /// All four rates from a single pass over `params.samples` shell points,
    /// so the ordering chain compares like with like.
    pub fn estimate(field: &DampingField, params: &LyapunovParams) -> Result<Self> {
        validate(params.horizon, params.samples)?;
        if params.renorm_every == 0 {
            return Err(invalid("renorm_every", "must be at least one step"));
        }
        let points = sample_shell(&flat_model(field)?, params.samples, SHELL_ENERGY, params.seed)?;
        let runs = run_samples(field, &points, params.horizon, params.dt, Some(params.renorm_every))?;
        let t = params.horizon;
        let bounds = bounds_from_runs(&runs, t, NormKind::Spectral);
        let ess = essential_from_runs(&runs, t);
        let slack = ORDERING_SLACK / t;
        let sum_rule_defect = runs
            .iter()
            .map(|r| (r.exponents.iter().sum::<f64>() + r.trace_rate).abs())
            .fold(0.0, f64::max);
        let extremal = field.extremal_bounds(field.default_grid())?;
        Ok(Self {
            horizon: t,
            m: params.samples,
            c_minus: bounds.c_minus,
            c_plus: bounds.c_plus,
            lambda_minus: ess.lambda_minus,
            lambda_plus: ess.lambda_plus,
            diagnostics: LyapunovDiagnostics {
                c_minus_half: -runs.iter().map(|r| r.half_log_norm).fold(f64::NEG_INFINITY, f64::max),
                c_plus_half: runs.iter().map(|r| r.half_log_inv_norm).fold(f64::NEG_INFINITY, f64::max),
                lambda_minus_half: ess.half_horizon_minus,
                lambda_plus_half: ess.half_horizon_plus,
                sum_rule_defect,
                ordering_slack: slack,
                ordering_chain_holds: bounds.c_minus <= -ess.lambda_plus + slack
                    && -ess.lambda_plus <= -ess.lambda_minus + slack
                    && -ess.lambda_minus <= bounds.c_plus + slack,
                a_minus: extremal.a_minus,
                a_plus: extremal.a_plus,
                sign_indefinite: extremal.is_sign_indefinite(),
                dt: params.dt,
                renorm_every: params.renorm_every,
                seed: params.seed,
            },
        })
    }
}

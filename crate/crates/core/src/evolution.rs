//! Time-domain evolution of `∂_t(u, v) = A_a(u, v)` on the Fourier–Galerkin
//! space, the energy and its balance law, and a residual check of the
//! factorization of the damped semiclassical propagator on the circle.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64 as c64;

use crate::cocycle::propagate;
use crate::damping::{mode_box, DampingField};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Manifold, PhasePoint, TWO_PI};
use crate::linalg::{expm, norm_two};
use crate::quantize::periodic_antiwick;
use crate::spectrum::{assemble_with_cap, mode_index, DiscretizedGenerator};

/// `dt` must stay below `STABILITY_CONSTANT / N²`.
pub const STABILITY_CONSTANT: f64 = 0.5;

/// Largest side of the dense exponentials in [`factorization_residual`].
pub const FACTORIZATION_SIDE_CAP: usize = 1200;

/// Fourier coefficients of `u` and `∂_t u` at time `t`, laid out by mode
/// then component, modes in `[−N, N]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: Vec<c64>,
    pub v: Vec<c64>,
    pub t: f64,
    cutoff: usize,
    n: usize,
    d: usize,
}

fn block_len(cutoff: usize, n: usize, d: usize) -> usize {
    (2 * cutoff + 1).pow(d as u32) * n
}

impl WaveState {
    pub fn zero(cutoff: usize, n: usize, d: usize) -> Self {
        let len = block_len(cutoff, n, d);
        Self {
            u: vec![c64::new(0.0, 0.0); len],
            v: vec![c64::new(0.0, 0.0); len],
            t: 0.0,
            cutoff,
            n,
            d,
        }
    }

    pub fn from_parts(u: Vec<c64>, v: Vec<c64>, cutoff: usize, n: usize, d: usize) -> Result<Self> {
        let len = block_len(cutoff, n, d);
        if u.len() != len || v.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "state blocks of length {} and {}, expected {len}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("state", "coefficients must be finite"));
        }
        Ok(Self { u, v, t: 0.0, cutoff, n, d })
    }

    /// `u₀ = e^{ik·x} e_c`, `u₁ = 0`.
    pub fn plane_wave(k: &[i32], component: usize, cutoff: usize, n: usize) -> Result<Self> {
        let d = k.len();
        let mut s = Self::zero(cutoff, n, d);
        if component >= n {
            return Err(invalid("component", format!("{component} is out of range for n = {n}")));
        }
        let idx = mode_index(k, cutoff as i32).ok_or_else(|| invalid("k", format!("{k:?} lies beyond the cutoff {cutoff}")))?;
        s.u[idx * n + component] = c64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Coefficient of `e^{ik·x} e_c` in `u`.
    pub fn u_coeff(&self, k: &[i32], component: usize) -> Option<c64> {
        mode_index(k, self.cutoff as i32).map(|i| self.u[i * self.n + component])
    }
}

/// `|k|²` for each entry of a block.
fn squared_frequencies(cutoff: usize, n: usize, d: usize) -> Vec<f64> {
    mode_box(d, cutoff as i32)
        .iter()
        .flat_map(|k| std::iter::repeat_n(k.iter().map(|v| (v * v) as f64).sum::<f64>(), n))
        .collect()
}

/// `E = ½ Σ_k (|v_k|² + |k|²|u_k|²) (2π)^d`.
pub fn energy(state: &WaveState) -> f64 {
    let k2 = squared_frequencies(state.cutoff, state.n, state.d);
    let sum: f64 = state
        .u
        .iter()
        .zip(&state.v)
        .zip(&k2)
        .map(|((u, v), k2)| v.norm_sqr() + k2 * u.norm_sqr())
        .sum();
    0.5 * sum * TWO_PI.powi(state.d as i32)
}

/// States recorded along an evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<WaveState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(energy).collect()
    }

    pub fn last(&self) -> &WaveState {
        self.states.last().expect("a trajectory holds at least the initial state")
    }

    /// `t,energy` rows.
    pub fn energy_csv(&self) -> String {
        let mut out = String::from("t,energy\n");
        for s in &self.states {
            let _ = writeln!(out, "{:.16e},{:.16e}", s.t, energy(s));
        }
        out
    }

    /// Little-endian `f64` records: `t`, then `re, im` of every `u`
    /// coefficient, then of every `v` coefficient.
    pub fn write_binary(&self, mut sink: impl Write) -> Result<()> {
        for s in &self.states {
            sink.write_all(&s.t.to_le_bytes())?;
            for z in s.u.iter().chain(&s.v) {
                sink.write_all(&z.re.to_le_bytes())?;
                sink.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_files(&self, dir: &Path, stem: &str, binary: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}_energy.csv")), self.energy_csv())?;
        if binary {
            let file = std::fs::File::create(dir.join(format!("{stem}_states.bin")))?;
            let mut w = std::io::BufWriter::new(file);
            self.write_binary(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    /// Whether `E` never grows by more than `rel` of its value per record.
    pub fn energy_non_increasing(&self, rel: f64) -> bool {
        self.energies().windows(2).all(|w| w[1] <= w[0] * (1.0 + rel) + f64::MIN_POSITIVE)
    }
}

struct Rhs {
    k2: Vec<f64>,
    /// Row-major `−2 Mult(a)` on one block.
    damping: Vec<c64>,
    len: usize,
}

impl Rhs {
    /// `(u̇, v̇) = (v, −|k|² u + D v)`.
    fn eval(&self, u: &[c64], v: &[c64], du: &mut [c64], dv: &mut [c64]) {
        du.copy_from_slice(v);
        for i in 0..self.len {
            let row = &self.damping[i * self.len..(i + 1) * self.len];
            let dvi: c64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            dv[i] = dvi - u[i] * self.k2[i];
        }
    }
}

/// Integrates with classical RK4 at step `T / ⌈T/dt⌉`, recording the
/// initial state, every `stride`-th step and the final state.
pub fn evolve(gen: &DiscretizedGenerator, state: &WaveState, t: f64, dt: f64, stride: usize) -> Result<Trajectory> {
    let cutoff = gen.cutoff();
    let d = gen.manifold().dim();
    if state.cutoff != cutoff || state.n != gen.n() || state.d != d {
        return Err(Error::DimensionMismatch(format!(
            "state (N = {}, n = {}, d = {}) against a generator (N = {cutoff}, n = {}, d = {d})",
            state.cutoff,
            state.n,
            state.d,
            gen.n()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("T", format!("must be finite and non-negative, got {t}")));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if stride == 0 {
        return Err(invalid("stride", "must be positive"));
    }
    if cutoff > 0 {
        let threshold = STABILITY_CONSTANT / (cutoff * cutoff) as f64;
        if dt >= threshold {
            return Err(Error::UnstableStep { dt, threshold });
        }
    }
    let len = state.u.len();
    let block = gen.damping_block();
    let rhs = Rhs {
        k2: squared_frequencies(cutoff, state.n, d),
        damping: (0..len).flat_map(|i| (0..len).map(move |j| (i, j))).map(|(i, j)| block[(i, j)]).collect(),
        len,
    };
    let steps = (t / dt).ceil() as usize;
    let step = if steps == 0 { 0.0 } else { t / steps as f64 };
    let zero = vec![c64::new(0.0, 0.0); len];
    let (mut ku, mut kv) = ([zero.clone(), zero.clone(), zero.clone(), zero.clone()], [zero.clone(), zero.clone(), zero.clone(), zero.clone()]);
    let (mut tu, mut tv) = (zero.clone(), zero);
    let mut cur = state.clone();
    let t0 = state.t;
    let mut states = vec![cur.clone()];
    for i in 1..=steps {
        rhs.eval(&cur.u, &cur.v, &mut ku[0], &mut kv[0]);
        for stage in 1..4 {
            let c = if stage == 3 { step } else { step / 2.0 };
            for j in 0..len {
                tu[j] = cur.u[j] + ku[stage - 1][j] * c;
                tv[j] = cur.v[j] + kv[stage - 1][j] * c;
            }
            let (a, b) = (&mut ku[stage], &mut kv[stage]);
            rhs.eval(&tu, &tv, a, b);
        }
        for j in 0..len {
            cur.u[j] += (ku[0][j] + (ku[1][j] + ku[2][j]) * 2.0 + ku[3][j]) * (step / 6.0);
            cur.v[j] += (kv[0][j] + (kv[1][j] + kv[2][j]) * 2.0 + kv[3][j]) * (step / 6.0);
        }
        cur.t = t0 + i as f64 * step;
        if i % stride == 0 || i == steps {
            states.push(cur.clone());
        }
    }
    Ok(Trajectory { states })
}

/// `∫ ⟨2a ∂_t u, ∂_t u⟩ = 2 (2π)^d Σ_{k,m} v_k† A_m v_{k−m}` over the
/// truncated box, exact for trigonometric-polynomial `a`.
pub fn dissipation(field: &DampingField, state: &WaveState) -> f64 {
    let n = state.n;
    let cutoff = state.cutoff as i32;
    let mut total = c64::new(0.0, 0.0);
    for (row, k) in mode_box(state.d, cutoff).iter().enumerate() {
        let vk = &state.v[row * n..(row + 1) * n];
        for (m, a) in field.coeffs() {
            let l: Vec<i32> = k.iter().zip(m).map(|(k, m)| k - m).collect();
            let Some(col) = mode_index(&l, cutoff) else { continue };
            let vl = &state.v[col * n..(col + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    total += vk[i].conj() * a[(i, j)] * vl[j];
                }
            }
        }
    }
    2.0 * total.re * TWO_PI.powi(state.d as i32)
}

/// `max |Ė + ∫⟨2a v, v⟩| / (1 + E)` over interior records, with `Ė` from the
/// five-point centred difference.
///
/// Uses the leading run of equally spaced records; at least five are needed.
pub fn energy_balance_residual(field: &DampingField, trajectory: &Trajectory) -> Result<f64> {
    let times = trajectory.times();
    if times.len() < 5 {
        return Err(invalid("trajectory", format!("needs at least 5 records, has {}", times.len())));
    }
    let delta = times[1] - times[0];
    if !(delta > 0.0) {
        return Err(invalid("trajectory", "records must advance in time"));
    }
    let uniform = 1 + times
        .windows(2)
        .take_while(|w| ((w[1] - w[0]) - delta).abs() <= 1e-9 * delta)
        .count();
    if uniform < 5 {
        return Err(invalid("trajectory", "fewer than 5 equally spaced records"));
    }
    let states = &trajectory.states[..uniform];
    let e: Vec<f64> = states.iter().map(energy).collect();
    let mut worst: f64 = 0.0;
    for i in 2..uniform - 2 {
        let de = (e[i - 2] - 8.0 * e[i - 1] + 8.0 * e[i + 1] - e[i + 2]) / (12.0 * delta);
        worst = worst.max((de + dissipation(field, &states[i])).abs() / (1.0 + e[i]));
    }
    Ok(worst)
}

/// Smooth bump in `|ξ|`, equal to 1 on the unit shell and supported in
/// `0.5 < |ξ| < 1.5`.
pub fn shell_cutoff(xi: f64) -> f64 {
    let s = (xi.abs() - 1.0) / 0.5;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// `‖Op^AW(χ) (e^{it𝒫/h} − Op^AW(q_t) e^{ith(−Δ)})‖₂` on the circle with
/// `𝒫 = −h²Δ + 2iha`, `χ` the test symbol and
/// `q_t(x, ξ) = G_{2t}(x + 2tξ, −ξ/2)`.
///
/// `q_t` solves `∂_t q = {ξ², q} − 2aq`, `q_0 = Id`: it is the cocycle read
/// backwards along the flow of `ξ²` at half speed. Both constant-damping
/// baselines are exact with this convention, so the result there is pure
/// quadrature error.
pub fn factorization_residual(
    field: &DampingField,
    t: f64,
    h: f64,
    cutoff: usize,
    test_symbol: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if field.d() != 1 {
        return Err(Error::DimensionMismatch(format!("factorization runs on the circle, field has d = {}", field.d())));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(invalid("h", format!("must lie in (0, 1], got {h}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be finite and non-negative, got {t}")));
    }
    if (cutoff as f64) * h < 4.0 {
        return Err(Error::Unresolved {
            width: h.sqrt(),
            reason: format!("N·h = {} does not reach 4", cutoff as f64 * h),
        });
    }
    let n = field.n();
    let side = n * (2 * cutoff + 1);
    if side > FACTORIZATION_SIDE_CAP {
        return Err(Error::ProblemTooLarge {
            side,
            cap: FACTORIZATION_SIDE_CAP,
        });
    }
    let gen = assemble_with_cap(field, &Manifold::circle(), cutoff, 2 * side)?;
    let damping = gen.damping_block();
    let k = |i: usize| (i / n) as f64 - cutoff as f64;
    let exponent = Mat::from_fn(side, side, |i, j| {
        let diag = if i == j { c64::new(0.0, t * h * k(i) * k(i)) } else { c64::new(0.0, 0.0) };
        diag + damping[(i, j)] * t
    });
    let exact = expm(&exponent)?;

    let q = |x: f64, xi: f64, out: &mut DMatrix<c64>| {
        let start = PhasePoint::on_circle(x + 2.0 * t * xi, -xi / 2.0);
        if t == 0.0 {
            out.fill_with_identity();
        } else if n == 1 {
            out[(0, 0)] = c64::new((-field.trace_integral(&start, 2.0 * t)).exp(), 0.0);
        } else {
            // dt well below any rate a trigonometric a of moderate size exhibits
            let g = propagate(field, &start, 2.0 * t, 1e-2).expect("validated inputs");
            out.copy_from(&g.to_matrix());
        }
    };
    let symbol_op = periodic_antiwick(n, h, cutoff, q)?;
    let test_op = periodic_antiwick(n, h, cutoff, |x, xi, out| {
        out.fill_with_identity();
        *out *= c64::new(test_symbol(x, xi), 0.0);
    })?;
    // Op(q) · e^{ith(−Δ)}: column j picks up e^{ithk_j²}
    let factored = Mat::from_fn(side, side, |i, j| symbol_op[(i, j)] * c64::from_polar(1.0, t * h * k(j) * k(j)));
    let diff = &exact - &factored;
    norm_two(&(&test_op * &diff))
}

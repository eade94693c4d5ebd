//! The damping cocycle `G_t(x_0, ξ_0)`, solution of `∂_t G_t = −a(x_t) G_t`,
//! `G_0 = Id`, along the straight-line flow of a flat torus.
//!
//! Only the `n×n` linear system is integrated: the trajectory is known in
//! closed form and substituted directly into a fixed-step classical RK4
//! scheme. Values are carried as [`ScaledMatrix`] so that trajectories of
//! length `T ≫ 1/|a|` neither underflow nor overflow.

use nalgebra::DMatrix;
use num_complex::Complex64 as c64;

use crate::damping::DampingField;
use crate::error::{invalid, Error, Result};
use crate::geometry::{flow, PhasePoint};

/// Default integration step.
pub const DEFAULT_DT: f64 = 1e-3;

const UNIT_LOW: f64 = 0.5;
const UNIT_HIGH: f64 = 2.0;

/// `e^{log_scale} · unit` with `‖unit‖₂ ∈ [1/2, 2]` after each renormalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix {
    unit: DMatrix<c64>,
    log_scale: f64,
}

pub(crate) fn spectral_norm(m: &DMatrix<c64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone().singular_values().max()
}

impl ScaledMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            unit: DMatrix::identity(n, n),
            log_scale: 0.0,
        }
    }

    pub fn from_matrix(m: DMatrix<c64>) -> Self {
        let mut s = Self { unit: m, log_scale: 0.0 };
        s.normalize();
        s
    }

    pub fn unit(&self) -> &DMatrix<c64> {
        &self.unit
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn dim(&self) -> usize {
        self.unit.nrows()
    }

    /// The represented matrix. Underflows to zero for very negative scales.
    pub fn to_matrix(&self) -> DMatrix<c64> {
        &self.unit * c64::new(self.log_scale.exp(), 0.0)
    }

    /// Rescales so that `‖unit‖₂ = 1`.
    pub fn normalize(&mut self) {
        let s = spectral_norm(&self.unit);
        if s > 0.0 && s.is_finite() {
            self.unit /= c64::new(s, 0.0);
            self.log_scale += s.ln();
        }
    }

    /// Renormalizes when `‖unit‖₂` has left `[1/2, 2]`. Uses the Frobenius
    /// norm `F` as a cheap filter: `F/√r ≤ ‖·‖₂ ≤ F`.
    pub(crate) fn renormalize(&mut self) {
        let fro = self.unit.norm();
        let rootn = (self.unit.nrows().min(self.unit.ncols()) as f64).sqrt();
        if fro > UNIT_HIGH || fro < UNIT_LOW * rootn {
            let s = spectral_norm(&self.unit);
            if !(UNIT_LOW..=UNIT_HIGH).contains(&s) {
                self.normalize();
            }
        }
    }

    /// `log ‖·‖₂`.
    pub fn log_norm2(&self) -> f64 {
        self.log_scale + spectral_norm(&self.unit).ln()
    }

    /// `log ‖·‖_F`.
    pub fn log_norm_frobenius(&self) -> f64 {
        self.log_scale + self.unit.norm().ln()
    }

    /// Logarithms of the singular values in non-increasing order. Values far
    /// below the largest one inherit its absolute rounding error; use an
    /// exterior-power cocycle when those matter.
    pub fn log_singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.unit.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s.into_iter().map(|v| v.ln() + self.log_scale).collect()
    }

    pub fn mul(&self, rhs: &ScaledMatrix) -> ScaledMatrix {
        let mut out = ScaledMatrix {
            unit: &self.unit * &rhs.unit,
            log_scale: self.log_scale + rhs.log_scale,
        };
        out.normalize();
        out
    }

    /// `‖self − other‖₂ / ‖self‖₂`, evaluated without leaving log space.
    pub fn relative_distance(&self, other: &ScaledMatrix) -> f64 {
        let ratio = (other.log_scale - self.log_scale).exp();
        let diff = &self.unit - &other.unit * c64::new(ratio, 0.0);
        spectral_norm(&diff) / spectral_norm(&self.unit)
    }
}

/// Evaluates the generator `A(x)` of `Ġ = −A(x_t) G` at a position.
pub(crate) trait Generator {
    fn dim(&self) -> usize;
    fn eval_into(&mut self, x: &[f64], out: &mut DMatrix<c64>);
}

pub(crate) struct FieldGenerator<'a>(pub &'a DampingField);

impl Generator for FieldGenerator<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn eval_into(&mut self, x: &[f64], out: &mut DMatrix<c64>) {
        self.0.eval_into(x, out)
    }
}

/// Fixed-step RK4 driver along `t ↦ x_0 + 2ξ_0 t`.
///
/// For the linear system `Ġ = −A(t) G` one RK4 step is itself a matrix,
/// `G_{k+1} = P_k G_k`, so every tracked quantity can share the same step.
/// The step used is `T / ceil(T / dt)`, so the horizon is hit exactly.
pub(crate) struct Stepper<'p> {
    start: &'p PhasePoint,
    steps: usize,
    h: f64,
    dim: usize,
    a0: DMatrix<c64>,
    ah: DMatrix<c64>,
    a1: DMatrix<c64>,
    k: DMatrix<c64>,
    acc: DMatrix<c64>,
    tmp: DMatrix<c64>,
    pub forward: DMatrix<c64>,
    pub inverse: DMatrix<c64>,
    pos: Vec<f64>,
}

pub(crate) fn validate_times(t: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("step must be positive and finite, got {dt}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("T", format!("horizon must be finite and non-negative, got {t}")));
    }
    Ok(())
}

impl<'p> Stepper<'p> {
    pub fn new(start: &'p PhasePoint, t: f64, dt: f64, dim: usize) -> Result<Self> {
        validate_times(t, dt)?;
        let steps = (t / dt).ceil() as usize;
        let h = if steps == 0 { 0.0 } else { t / steps as f64 };
        let z = || DMatrix::zeros(dim, dim);
        Ok(Self {
            start,
            steps,
            h,
            dim,
            a0: z(),
            ah: z(),
            a1: z(),
            k: z(),
            acc: z(),
            tmp: z(),
            forward: z(),
            inverse: z(),
            pos: vec![0.0; start.dim()],
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn eval_at(&mut self, gen: &mut impl Generator, t: f64, which: u8) {
        self.start.unreduced_position(t, &mut self.pos);
        let out = match which {
            0 => &mut self.a0,
            1 => &mut self.ah,
            _ => &mut self.a1,
        };
        gen.eval_into(&self.pos, out);
    }

    /// `P = I + h/6 (K1 + 2K2 + 2K3 + K4)` with `K1 = −A0`,
    /// `K2 = −Ah(I + h/2 K1)`, `K3 = −Ah(I + h/2 K2)`, `K4 = −A1(I + h K3)`.
    fn build_forward(&mut self) {
        let h = self.h;
        let id = DMatrix::<c64>::identity(self.dim, self.dim);
        // K1
        self.k.copy_from(&self.a0);
        self.k.neg_mut();
        self.acc.copy_from(&self.k);
        for (scale, a, weight) in [(h / 2.0, 0, 2.0), (h / 2.0, 0, 2.0), (h, 1, 1.0)] {
            self.tmp.copy_from(&id);
            self.tmp.zip_apply(&self.k, |t, k| *t += k * scale);
            let a = if a == 0 { &self.ah } else { &self.a1 };
            a.mul_to(&self.tmp, &mut self.k);
            self.k.neg_mut();
            self.acc.zip_apply(&self.k, |s, k| *s += k * weight);
        }
        self.forward.copy_from(&id);
        self.forward.zip_apply(&self.acc, |p, s| *p += s * (h / 6.0));
    }

    /// RK4 step of `Ḣ = H A(t)`, the equation satisfied by `G_t^{-1}`:
    /// `H_{k+1} = H_k Q` with `L1 = A0`, `L2 = (I + h/2 L1) Ah`,
    /// `L3 = (I + h/2 L2) Ah`, `L4 = (I + h L3) A1`.
    fn build_inverse(&mut self) {
        let h = self.h;
        let id = DMatrix::<c64>::identity(self.dim, self.dim);
        self.k.copy_from(&self.a0);
        self.acc.copy_from(&self.k);
        for (scale, a, weight) in [(h / 2.0, 0, 2.0), (h / 2.0, 0, 2.0), (h, 1, 1.0)] {
            self.tmp.copy_from(&id);
            self.tmp.zip_apply(&self.k, |t, k| *t += k * scale);
            let a = if a == 0 { &self.ah } else { &self.a1 };
            self.tmp.mul_to(a, &mut self.k);
            self.acc.zip_apply(&self.k, |s, k| *s += k * weight);
        }
        self.inverse.copy_from(&id);
        self.inverse.zip_apply(&self.acc, |p, s| *p += s * (h / 6.0));
    }

    /// Runs all steps, calling `visit(step_index, t_end, self)` after the
    /// requested step matrices have been built.
    pub fn run(
        &mut self,
        gen: &mut impl Generator,
        want_forward: bool,
        want_inverse: bool,
        mut visit: impl FnMut(usize, f64, &Self),
    ) {
        if self.steps == 0 {
            return;
        }
        self.eval_at(gen, 0.0, 0);
        for i in 0..self.steps {
            let t0 = i as f64 * self.h;
            let t1 = (i + 1) as f64 * self.h;
            self.eval_at(gen, t0 + self.h / 2.0, 1);
            self.eval_at(gen, t1, 2);
            if want_forward {
                self.build_forward();
            }
            if want_inverse {
                self.build_inverse();
            }
            visit(i, t1, self);
            std::mem::swap(&mut self.a0, &mut self.a1);
        }
    }
}

/// Left-multiplies a scaled matrix in place: `s ← P s`.
pub(crate) fn apply_left(s: &mut ScaledMatrix, p: &DMatrix<c64>, scratch: &mut DMatrix<c64>) {
    p.mul_to(&s.unit, scratch);
    std::mem::swap(&mut s.unit, scratch);
    s.renormalize();
}

/// Right-multiplies a scaled matrix in place: `s ← s Q`.
pub(crate) fn apply_right(s: &mut ScaledMatrix, q: &DMatrix<c64>, scratch: &mut DMatrix<c64>) {
    s.unit.mul_to(q, scratch);
    std::mem::swap(&mut s.unit, scratch);
    s.renormalize();
}

pub(crate) fn propagate_generator(gen: &mut impl Generator, start: &PhasePoint, t: f64, dt: f64) -> Result<ScaledMatrix> {
    let dim = gen.dim();
    let mut stepper = Stepper::new(start, t, dt, dim)?;
    let mut g = ScaledMatrix::identity(dim);
    let mut scratch = DMatrix::zeros(dim, dim);
    stepper.run(gen, true, false, |_, _, st| apply_left(&mut g, &st.forward, &mut scratch));
    Ok(g)
}

fn check_point(field: &DampingField, start: &PhasePoint) -> Result<()> {
    if start.dim() != field.d() {
        return Err(Error::DimensionMismatch(format!(
            "point of dimension {} for a field on a {}-torus",
            start.dim(),
            field.d()
        )));
    }
    Ok(())
}

/// `G_T(start)` by fixed-step RK4 with step at most `dt`.
pub fn propagate(field: &DampingField, start: &PhasePoint, t: f64, dt: f64) -> Result<ScaledMatrix> {
    check_point(field, start)?;
    propagate_generator(&mut FieldGenerator(field), start, t, dt)
}

/// `G_T(start)^{-1}`, integrated directly from `Ḣ = H a(x_t)`, `H_0 = Id`.
///
/// The smallest singular value of `G_T` is `1/‖G_T^{-1}‖₂`; reading it off
/// `G_T` itself loses it to rounding once the singular values spread by more
/// than `1/ε_mach`.
pub fn propagate_inverse(field: &DampingField, start: &PhasePoint, t: f64, dt: f64) -> Result<ScaledMatrix> {
    check_point(field, start)?;
    let n = field.n();
    let mut stepper = Stepper::new(start, t, dt, n)?;
    let mut h = ScaledMatrix::identity(n);
    let mut scratch = DMatrix::zeros(n, n);
    stepper.run(&mut FieldGenerator(field), false, true, |_, _, st| {
        apply_right(&mut h, &st.inverse, &mut scratch)
    });
    Ok(h)
}

/// Relative defect of the cocycle identity `G_{t+s}(ρ) = G_t(φ_s ρ) G_s(ρ)`.
pub fn cocycle_residual(field: &DampingField, start: &PhasePoint, s: f64, t: f64, dt: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(invalid("s, t", "cocycle times must be non-negative"));
    }
    let whole = propagate(field, start, s + t, dt)?;
    let first = propagate(field, start, s, dt)?;
    let second = propagate(field, &flow(start, s), t, dt)?;
    Ok(whole.relative_distance(&second.mul(&first)))
}

/// `log G_T = −∫_0^T a(x_s) ds` for a scalar field, from the exact
/// antiderivative of each Fourier mode.
pub fn log_scalar_closed_form(field: &DampingField, start: &PhasePoint, t: f64) -> Result<f64> {
    if field.n() != 1 {
        return Err(invalid("field", format!("closed form needs n = 1, got n = {}", field.n())));
    }
    check_point(field, start)?;
    Ok(-field.trace_integral(start, t))
}

/// `G_T = exp(−∫_0^T a(x_s) ds)` for a scalar field.
pub fn scalar_closed_form(field: &DampingField, start: &PhasePoint, t: f64) -> Result<f64> {
    log_scalar_closed_form(field, start, t).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TWO_PI;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn zero_damping_gives_identity() {
        let f = DampingField::zero(3, 1);
        let g = propagate(&f, &PhasePoint::on_circle(1.0, 0.3), 7.0, 1e-2).unwrap();
        assert_eq!(g.log_scale(), 0.0);
        assert!((g.unit() - DMatrix::<c64>::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn constant_scalar_is_exponential() {
        let f = DampingField::scalar_identity(1, 1, 0.8);
        let g = propagate(&f, &PhasePoint::on_circle(0.0, 0.5), 10.0, 1e-3).unwrap();
        let value = g.to_matrix()[(0, 0)].re;
        assert_relative_eq!(value, (-8.0f64).exp(), max_relative = 1e-8);
    }

    #[test]
    fn scalar_cosine_matches_closed_form() {
        let f = DampingField::cosine(1.0, 1.0);
        for &x0 in &[0.0, 1.1, 4.0] {
            let p = PhasePoint::on_circle(x0, 1.0 / SQRT2);
            for &t in &[0.5, 3.0, 20.0] {
                let g = propagate(&f, &p, t, 1e-3).unwrap();
                let expected = -t - ((x0 + SQRT2 * t).sin() - x0.sin()) / SQRT2;
                assert_relative_eq!(g.log_norm2(), expected, max_relative = 1e-10);
                assert_relative_eq!(log_scalar_closed_form(&f, &p, t).unwrap(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_full_period() {
        let f = DampingField::cosine(1.0, 1.0);
        let t = SQRT2 * std::f64::consts::PI;
        let v = scalar_closed_form(&f, &PhasePoint::on_circle(0.0, 1.0 / SQRT2), t).unwrap();
        assert_relative_eq!(v, (-t).exp(), max_relative = 1e-13);
        assert_eq!(scalar_closed_form(&DampingField::zero(1, 1), &PhasePoint::on_circle(0.3, 0.7), 5.0).unwrap(), 1.0);
        assert!(scalar_closed_form(&DampingField::zero(2, 1), &PhasePoint::on_circle(0.3, 0.7), 5.0).is_err());
    }

    #[test]
    fn rejects_bad_steps() {
        let f = DampingField::zero(1, 1);
        let p = PhasePoint::on_circle(0.0, 1.0);
        assert!(propagate(&f, &p, 1.0, 0.0).is_err());
        assert!(propagate(&f, &p, 1.0, -1e-3).is_err());
        assert!(propagate(&f, &p, f64::NAN, 1e-3).is_err());
        assert!(propagate(&f, &p, f64::INFINITY, 1e-3).is_err());
    }

    #[test]
    fn long_horizon_does_not_underflow() {
        let f = DampingField::scalar_identity(2, 1, 5.0);
        let g = propagate(&f, &PhasePoint::on_circle(0.0, 0.7), 400.0, 1e-3).unwrap();
        assert_relative_eq!(g.log_norm2(), -2000.0, max_relative = 1e-9);
        let s = spectral_norm(g.unit());
        assert!((UNIT_LOW..=UNIT_HIGH).contains(&s));
    }

    #[test]
    fn inverse_inverts() {
        let f = DampingField::random(3, 1, 2, 0.8, 21).unwrap();
        let p = PhasePoint::on_circle(0.9, -0.7);
        let g = propagate(&f, &p, 2.5, 1e-3).unwrap();
        let h = propagate_inverse(&f, &p, 2.5, 1e-3).unwrap();
        let prod = g.mul(&h);
        let id = ScaledMatrix::identity(3);
        assert!(id.relative_distance(&prod) < 1e-9);
    }

    #[test]
    fn cocycle_identity_trivial_and_constant() {
        let f = DampingField::random(2, 1, 1, 1.0, 2).unwrap();
        let p = PhasePoint::on_circle(0.2, 0.7);
        assert!(cocycle_residual(&f, &p, 0.0, 2.0, 1e-3).unwrap() < 1e-12);
        assert!(cocycle_residual(&f, &p, 2.0, 0.0, 1e-3).unwrap() < 1e-12);
        let c = DampingField::scalar_identity(3, 1, 0.6);
        assert!(cocycle_residual(&c, &p, 1.3, 2.9, 1e-3).unwrap() < 1e-10);
    }

    #[test]
    fn cocycle_identity_random_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for case in 0..50 {
            let f = DampingField::random(2, 1, 2, 0.7, case).unwrap();
            let p = PhasePoint::on_circle(rng.random_range(0.0..TWO_PI), if rng.random_bool(0.5) { 0.7071 } else { -0.7071 });
            let s = rng.random_range(0.0..4.0);
            let t = rng.random_range(0.0..4.0);
            let r = cocycle_residual(&f, &p, s, t, 1e-3).unwrap();
            assert!(r < 1e-6, "case {case}: {r}");
        }
    }

    #[test]
    fn cocycle_residual_against_refined_run() {
        // split points off the step grid, so the residual is integration error
        let f = DampingField::random(2, 1, 2, 1.0, 77).unwrap();
        let p = PhasePoint::on_circle(1.0, 0.7);
        let coarse = cocycle_residual(&f, &p, 3.0137, 2.9, 5e-2).unwrap();
        let fine = cocycle_residual(&f, &p, 3.0137, 2.9, 1e-3).unwrap();
        assert!(fine < 1e-6);
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn jacobi_determinant_identity() {
        for seed in 0..5 {
            let f = DampingField::random(3, 1, 2, 0.6, seed).unwrap();
            let p = PhasePoint::on_circle(0.5 * seed as f64, 0.7);
            let t = 6.0;
            // det G_T = Π det P_k; the determinant of G_T itself is lost to
            // the spread of its singular values
            let mut stepper = Stepper::new(&p, t, 1e-3, 3).unwrap();
            let mut log_det = 0.0;
            stepper.run(&mut FieldGenerator(&f), true, false, |_, _, st| log_det += st.forward.determinant().norm().ln());
            let trace = f.trace_integral(&p, t);
            assert!((log_det + trace).abs() < 1e-9, "seed {seed}: {}", log_det + trace);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let f = DampingField::cosine(1.0, 1.0);
        let p = PhasePoint::on_circle(0.3, 1.0 / SQRT2);
        let t = 5.0;
        let exact = log_scalar_closed_form(&f, &p, t).unwrap();
        let err = |dt: f64| (propagate(&f, &p, t, dt).unwrap().log_norm2() - exact).abs();
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

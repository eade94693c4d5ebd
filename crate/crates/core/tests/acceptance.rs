//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use dampwave::analysis::{band_outliers, counting, strip_outliers, weyl_prediction};
use dampwave::cocycle::{cocycle_residual, log_scalar_closed_form, propagate};
use dampwave::damping::DampingField;
use dampwave::evolution::{energy_balance_residual, evolve, factorization_residual, shell_cutoff, WaveState};
use dampwave::geometry::{sample_shell, Manifold};
use dampwave::lyapunov::{exterior_sums, finite_time_bounds, lyapunov_spectrum, LyapunovParams, LyapunovReport};
use dampwave::quantize::{
    antiwick_build, mollified_weyl_residual, sup_norm, GridSpec, InteriorBasis, Symbol, QUADRATURE_TOL,
};
use dampwave::spectrum::{assemble, solve};
use nalgebra::DMatrix;
use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: dampwave::Error) -> String {
    format!("error: {e}")
}

/// `0.7i ± √(k² − 0.49)` for every `|k| ≤ N`, computed mode by mode.
fn constant_damping_oracle() -> Outcome {
    let c = 0.7;
    let cutoff = 128;
    let start = Instant::now();
    let field = DampingField::scalar_identity(1, 1, c);
    let spec = solve(&field, &Manifold::circle(), cutoff).map_err(err)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut oracle: Vec<c64> = Vec::new();
    for k in -(cutoff as i64)..=cutoff as i64 {
        let disc = c64::new((k * k) as f64 - c * c, 0.0).sqrt();
        oracle.push(c64::new(0.0, c) + disc);
        oracle.push(c64::new(0.0, c) - disc);
    }
    let limit = spec.reliable_limit();
    let mut expected: Vec<c64> = oracle.into_iter().filter(|t| t.re.abs() <= limit).collect();
    let mut got: Vec<c64> = spec.reliable().collect();
    let key = |a: &c64, b: &c64| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
    expected.sort_by(key);
    got.sort_by(key);
    if expected.len() != got.len() {
        return Err(format!("{} reliable eigenvalues, oracle has {}", got.len(), expected.len()));
    }
    let worst = got.iter().zip(&expected).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    check(
        worst < 1e-8 && elapsed < 60.0,
        format!("{} eigenvalues, max deviation {worst:.2e}, {elapsed:.1} s", got.len()),
    )
}

fn scalar_cocycle_closed_form() -> Outcome {
    let field = DampingField::cosine(1.0, 1.0);
    let points = sample_shell(&Manifold::circle(), 20, 0.5, 7).map_err(err)?;
    let mut worst_rel: f64 = 0.0;
    for p in &points {
        let g = propagate(&field, p, 20.0, 1e-3).map_err(err)?;
        let exact = log_scalar_closed_form(&field, p, 20.0).map_err(err)?;
        worst_rel = worst_rel.max((g.log_norm2() - exact).exp_m1().abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shell = sample_shell(&Manifold::circle(), 50, 0.5, 8).map_err(err)?;
    let mut worst_res: f64 = 0.0;
    for p in &shell {
        let s = rng.random_range(0.1..10.0);
        let t = rng.random_range(0.1..10.0);
        worst_res = worst_res.max(cocycle_residual(&field, p, s, t, 1e-3).map_err(err)?);
    }
    check(
        worst_rel < 1e-8 && worst_res < 1e-6,
        format!("closed-form rel error {worst_rel:.2e}, cocycle residual {worst_res:.2e}"),
    )
}

fn lyapunov_machinery() -> Outcome {
    let field = DampingField::block_diagonal(&[DampingField::cosine(1.0, 1.0), DampingField::scalar_identity(1, 1, 2.0)])
        .map_err(err)?;
    let t = 200.0;
    let point = sample_shell(&Manifold::flat(1).map_err(err)?, 1, 0.5, 3).map_err(err)?.remove(0);
    let spec = lyapunov_spectrum(&field, &point, t, 1e-3, 10).map_err(err)?;
    let spectrum_err = (spec.exponents[0] + 2.0).abs().max((spec.exponents[1] + 1.0).abs());
    let mut ext_err: f64 = 0.0;
    for i in 1..=2 {
        ext_err = ext_err.max((exterior_sums(&field, &point, t, 1e-3, i).map_err(err)? - spec.top_sum(i)).abs());
    }
    let sum_rule = (spec.exponents.iter().sum::<f64>() + field.mean_trace()).abs();
    check(
        spectrum_err < 2.0 / t && ext_err < 5.0 / t && sum_rule < 5.0 / t,
        format!(
            "exponents {:?}, spectrum error {spectrum_err:.2e}, exterior gap {ext_err:.2e}, sum rule {sum_rule:.2e}",
            spec.exponents
        ),
    )
}

fn weyl_law() -> Outcome {
    let lambda = 64.0;
    let cutoff = 128;
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [1usize, 2] {
        let blocks = |f: DampingField| DampingField::block_diagonal(&vec![f; n]);
        let fields = [
            ("zero", DampingField::zero(n, 1)),
            ("constant", DampingField::scalar_identity(n, 1, 0.7)),
            ("1+cos", blocks(DampingField::cosine(1.0, 1.0)).map_err(err)?),
        ];
        let prediction = weyl_prediction(n, &Manifold::circle(), lambda).map_err(err)?;
        let exact = 2.0 * n as f64 * lambda;
        ok &= (prediction - exact).abs() <= 1e-12 * exact;
        for (name, field) in fields {
            let spec = solve(&field, &Manifold::circle(), cutoff).map_err(err)?;
            let count = counting(&spec, lambda).map_err(err)?;
            let ratio = count as f64 / prediction;
            ok &= (ratio - 1.0).abs() <= 0.05;
            lines.push(format!("n={n} {name}: {count}/{prediction} = {ratio:.4}"));
        }
    }
    check(ok, lines.join("; "))
}

fn strip_finiteness() -> Outcome {
    let field = DampingField::cosine(1.0, 1.0);
    let t = 200.0;
    let bounds = finite_time_bounds(&field, t, 64, 1e-3, 0).map_err(err)?;
    let margin = 0.05 + 3.0 / t;
    let mut counts = Vec::new();
    for cutoff in [128, 256] {
        let spec = solve(&field, &Manifold::circle(), cutoff).map_err(err)?;
        counts.push(strip_outliers(&spec, bounds.c_minus, bounds.c_plus, margin, 20.0).map_err(err)?.len());
    }
    check(
        counts[0] == counts[1],
        format!(
            "C- = {:.4}, C+ = {:.4}, outliers beyond Re 20: {} at N=128, {} at N=256",
            bounds.c_minus, bounds.c_plus, counts[0], counts[1]
        ),
    )
}

fn band_decay() -> Outcome {
    let params = LyapunovParams::default();
    let field = DampingField::cosine(1.0, 1.0);
    let report = LyapunovReport::estimate(&field, &params).map_err(err)?;
    let spec = solve(&field, &Manifold::circle(), 128).map_err(err)?;
    let bands = band_outliers(&spec, report.lambda_minus, report.lambda_plus, 0.1, 1.0).map_err(err)?;
    let counts = bands.outlier_counts();
    let tail_clean = counts.iter().rev().take(5).all(|&c| c == 0);
    let (left, right) = bands.half_averages();
    let halves_ok = right <= 0.5 * left;

    let c = 0.7;
    let constant = DampingField::scalar_identity(1, 1, c);
    let creport = LyapunovReport::estimate(&constant, &LyapunovParams { samples: 16, ..params }).map_err(err)?;
    let cspec = solve(&constant, &Manifold::circle(), 128).map_err(err)?;
    let cbands = band_outliers(&cspec, creport.lambda_minus, creport.lambda_plus, 0.1, 1.0).map_err(err)?;
    let beyond: usize = cbands.windows.iter().filter(|w| w.re_min >= c).map(|w| w.outliers()).sum();
    check(
        tail_clean && halves_ok && beyond == 0,
        format!(
            "Λ = [{:.4}, {:.4}], {} windows, left/right averages {left:.3}/{right:.3}, tail {:?}, constant-field outliers beyond Re {c}: {beyond}",
            report.lambda_minus,
            report.lambda_plus,
            counts.len(),
            &counts[counts.len() - 5..]
        ),
    )
}

fn ordering_chain() -> Outcome {
    let t = 200.0;
    let slack = 3.0 / t;
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let field = DampingField::random(2, 1, 2, 1.0, 100 + seed).map_err(err)?;
        let params = LyapunovParams {
            horizon: t,
            samples: 24,
            seed,
            ..LyapunovParams::default()
        };
        let r = LyapunovReport::estimate(&field, &params).map_err(err)?;
        let holds = r.c_minus <= -r.lambda_plus + slack && -r.lambda_minus <= r.c_plus + slack;
        ok &= holds;
        lines.push(format!(
            "[{:.3} ≤ {:.3} ≤ {:.3} ≤ {:.3}]",
            r.c_minus, -r.lambda_plus, -r.lambda_minus, r.c_plus
        ));
    }
    check(ok, lines.join(" "))
}

fn smooth_state(cutoff: usize, n: usize) -> WaveState {
    let len = (2 * cutoff + 1) * n;
    let u: Vec<c64> = (0..len)
        .map(|i| {
            let k = (i / n) as f64 - cutoff as f64;
            c64::from_polar((-k.abs() / 2.0).exp(), 0.7 * i as f64)
        })
        .collect();
    let v: Vec<c64> = u.iter().enumerate().map(|(i, z)| z * c64::from_polar(0.5, i as f64)).collect();
    WaveState::from_parts(u, v, cutoff, n, 1).expect("well-formed state")
}

fn energy_identity() -> Outcome {
    let cutoff = 8;
    let field = DampingField::random(2, 1, 2, 0.3, 42).map_err(err)?;
    let gen = assemble(&field, &Manifold::circle(), cutoff).map_err(err)?;
    let state = smooth_state(cutoff, 2);
    let coarse = energy_balance_residual(&field, &evolve(&gen, &state, 10.0, 1e-4, 10).map_err(err)?).map_err(err)?;
    let fine = energy_balance_residual(&field, &evolve(&gen, &state, 10.0, 5e-5, 10).map_err(err)?).map_err(err)?;
    let mut monotone = true;
    for seed in 0..3 {
        let psd = DampingField::random_psd(2, 1, 2, 1.0, 0.0, seed).map_err(err)?;
        let g = assemble(&psd, &Manifold::circle(), cutoff).map_err(err)?;
        monotone &= evolve(&g, &state, 10.0, 1e-3, 1).map_err(err)?.energy_non_increasing(1e-9);
    }
    check(
        coarse < 1e-5 && fine < 1e-6 && monotone,
        format!("residual {coarse:.2e} at dt=1e-4, {fine:.2e} at dt=5e-5, psd energy monotone: {monotone}"),
    )
}

fn psd_symbols() -> Vec<Symbol> {
    let unit = |v: f64| c64::new(v, 0.0);
    vec![
        Symbol::constant(1.0),
        Symbol::custom(1, true, None, move |x, xi, out| out[(0, 0)] = unit((-(x * x + xi * xi)).exp())).unwrap(),
        Symbol::custom(1, true, None, move |x, xi, out| out[(0, 0)] = unit(1.0 + x.cos() * xi.sin())).unwrap(),
        Symbol::custom(2, true, None, move |x, xi, out| {
            out.fill(c64::new(0.0, 0.0));
            out[(0, 0)] = unit(1.0 + x.cos());
            out[(1, 1)] = unit(xi * xi / (1.0 + xi * xi));
        })
        .unwrap(),
        Symbol::custom(2, true, None, |x, xi, out: &mut DMatrix<c64>| {
            let v = [c64::new(x.cos(), 0.0), c64::from_polar(x.sin(), xi)];
            for r in 0..2 {
                for c in 0..2 {
                    out[(r, c)] = v[r] * v[c].conj();
                }
            }
        })
        .unwrap(),
    ]
}

fn quantization_properties() -> Outcome {
    let grid = GridSpec::new(8.0, 641, 0.05, 3.0).map_err(err)?;
    let one = antiwick_build(&Symbol::constant(1.0), &grid).map_err(err)?;
    let identity = InteriorBasis::new(&grid, 1).map_err(err)?.identity_defect(&one).map_err(err)?;
    let mut min_eig = f64::INFINITY;
    let mut norm_excess = f64::NEG_INFINITY;
    let mut bounded = psd_symbols();
    bounded.push(Symbol::cosine(1.0, 1.0));
    for s in &bounded {
        let op = antiwick_build(s, &grid).map_err(err)?;
        if s.is_psd() {
            min_eig = min_eig.min(op.min_hermitian_eigenvalue().map_err(err)?);
        }
        norm_excess = norm_excess.max(op.norm().map_err(err)? - sup_norm(s, &grid).map_err(err)?);
    }
    let mut moll: f64 = 0.0;
    for s in [Symbol::constant(1.0), Symbol::harmonic(), Symbol::cosine(1.0, 1.0)] {
        moll = moll.max(mollified_weyl_residual(&s, &grid).map_err(err)?);
    }
    check(
        identity < 1e-6 && min_eig >= -1e-8 && norm_excess <= 1e-6 && moll < 1e-4,
        format!(
            "identity defect {identity:.2e}, min eigenvalue {min_eig:.2e}, norm excess {norm_excess:.2e}, mollified residual {moll:.2e}"
        ),
    )
}

fn factorization() -> Outcome {
    let hs = [0.08, 0.04, 0.02];
    let cutoff = |h: f64| (5.0 / h).ceil() as usize;
    let chi = |_: f64, xi: f64| shell_cutoff(xi);
    let field = DampingField::cosine(1.0, 1.0);
    let mut residuals = Vec::new();
    let mut baseline: f64 = 0.0;
    for h in hs {
        residuals.push(factorization_residual(&field, 1.0, h, cutoff(h), chi).map_err(err)?);
        for b in [DampingField::zero(1, 1), DampingField::scalar_identity(1, 1, 0.5)] {
            baseline = baseline.max(factorization_residual(&b, 1.0, h, cutoff(h), chi).map_err(err)?);
        }
    }
    let monotone = residuals.windows(2).all(|w| w[1] < w[0]);
    check(
        monotone && baseline < 10.0 * QUADRATURE_TOL,
        format!(
            "residuals {:?} at h = {hs:?}, baseline max {baseline:.2e}",
            residuals.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("constant-damping oracle", constant_damping_oracle),
        ("scalar cocycle closed form", scalar_cocycle_closed_form),
        ("Lyapunov machinery", lyapunov_machinery),
        ("Weyl counting", weyl_law),
        ("strip finiteness", strip_finiteness),
        ("band decay", band_decay),
        ("ordering chain", ordering_chain),
        ("energy identity", energy_identity),
        ("quantization properties", quantization_properties),
        ("propagator factorization", factorization),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

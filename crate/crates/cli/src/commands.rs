//! The experiments. Each writes its artifacts into the output directory and
//! reports whether its built-in checks held.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use dampwave::analysis::{band_outliers, plot_data, strip_outliers, weyl_comparison};
use dampwave::damping::DampingField;
use dampwave::evolution::{energy, energy_balance_residual, evolve, WaveState};
use dampwave::lyapunov::LyapunovReport;
use dampwave::quantize::{
    antiwick_build, mollified_weyl_residual, sup_norm, InteriorBasis, Symbol, QUADRATURE_TOL,
};
use dampwave::spectrum::{assemble, eigenvalues_tau, SpectrumSet};
use nalgebra::DMatrix;
use num_complex::Complex64 as c64;
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Parameters every report carries.
#[derive(Debug, Serialize)]
struct Header<'a> {
    command: &'a str,
    config_hash: &'a str,
    #[serde(rename = "N")]
    cutoff: Option<usize>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    epsilon: Option<f64>,
    field_hash: Option<String>,
}

#[derive(Debug, Serialize)]
struct Report<'a, T: Serialize> {
    #[serde(flatten)]
    header: Header<'a>,
    result: T,
}

pub struct Run<'a> {
    pub config: &'a ExperimentConfig,
    pub hash: &'a str,
    pub out: &'a Path,
}

/// `true` when every check passed.
pub type Verdict = bool;

fn write_json<T: Serialize>(dir: &Path, name: &str, header: Header<'_>, result: T) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let text = serde_json::to_string_pretty(&Report { header, result })? + "\n";
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn spectrum_of(cx: &Run<'_>, field: &DampingField) -> Result<SpectrumSet> {
    let solver = cx.config.solver()?;
    let gen = assemble(field, &cx.config.manifold()?, solver.cutoff)?;
    Ok(eigenvalues_tau(&gen, solver.reliability)?)
}

pub fn lyapunov(cx: &Run<'_>) -> Result<Verdict> {
    let field = cx.config.damping()?;
    let params = cx.config.lyapunov();
    let report = LyapunovReport::estimate(&field, &params)?;
    println!(
        "C- {:.6}  C+ {:.6}  Lambda- {:.6}  Lambda+ {:.6}  (T = {}, m = {})",
        report.c_minus, report.c_plus, report.lambda_minus, report.lambda_plus, report.horizon, report.m
    );
    let holds = report.diagnostics.ordering_chain_holds;
    if report.diagnostics.sign_indefinite {
        println!("note: damping is sign-indefinite (a- = {:.4})", report.diagnostics.a_minus);
    }
    if !holds {
        println!("check failed: ordering chain C- <= -Lambda+ <= -Lambda- <= C+ is violated beyond 3/T");
    }
    let header = Header {
        command: "lyapunov",
        config_hash: cx.hash,
        cutoff: cx.config.solver.map(|s| s.cutoff),
        horizon: Some(params.horizon),
        epsilon: Some(cx.config.analysis.epsilon),
        field_hash: Some(field.content_hash()),
    };
    write_json(cx.out, "lyapunov.json", header, &report)?;
    Ok(holds)
}

#[derive(Serialize)]
struct SpectrumSummary {
    metadata: dampwave::spectrum::SpectrumMetadata,
    reflection_defect: f64,
}

pub fn spectrum(cx: &Run<'_>) -> Result<Verdict> {
    let field = cx.config.damping()?;
    let spec = spectrum_of(cx, &field)?;
    write_text(cx.out, "eigenvalues.csv", &spec.to_csv())?;
    write_text(cx.out, "eigenvalues_plot.dat", &plot_data(&spec))?;
    let meta = spec.metadata();
    println!(
        "{} eigenvalues, {} reliable (|Re tau| <= {})",
        meta.total, meta.reliable, meta.reliable_limit
    );
    let header = Header {
        command: "spectrum",
        config_hash: cx.hash,
        cutoff: Some(spec.cutoff()),
        horizon: None,
        epsilon: None,
        field_hash: Some(field.content_hash()),
    };
    let summary = SpectrumSummary {
        reflection_defect: spec.reflection_defect(),
        metadata: meta,
    };
    write_json(cx.out, "spectrum.json", header, summary)?;
    Ok(true)
}

#[derive(Serialize)]
struct BandsSummary {
    bands: dampwave::analysis::BandReport,
    strip_margin: f64,
    strip_outliers: usize,
    lyapunov: LyapunovReport,
}

pub fn bands(cx: &Run<'_>) -> Result<Verdict> {
    let field = cx.config.damping()?;
    let params = cx.config.lyapunov();
    let spec = spectrum_of(cx, &field)?;
    let lyap = LyapunovReport::estimate(&field, &params)?;
    let a = &cx.config.analysis;
    let lambda = a.lambda.unwrap_or(spec.reliable_limit());
    let report = band_outliers(&spec, lyap.lambda_minus, lyap.lambda_plus, a.epsilon, a.window_width)?
        .with_strip(lyap.c_minus, lyap.c_plus)
        .with_weyl(weyl_comparison(&spec, lambda)?);
    let strip = strip_outliers(&spec, lyap.c_minus, lyap.c_plus, a.epsilon, a.strip_re_min)?.len();
    print!("{}", report.to_table());
    println!("strip outliers with Re tau >= {}: {strip}", a.strip_re_min);
    write_text(cx.out, "bands.txt", &report.to_table())?;
    let header = Header {
        command: "bands",
        config_hash: cx.hash,
        cutoff: Some(spec.cutoff()),
        horizon: Some(params.horizon),
        epsilon: Some(a.epsilon),
        field_hash: Some(field.content_hash()),
    };
    let summary = BandsSummary {
        bands: report,
        strip_margin: a.epsilon,
        strip_outliers: strip,
        lyapunov: lyap,
    };
    write_json(cx.out, "bands.json", header, summary)?;
    Ok(true)
}

pub fn weyl(cx: &Run<'_>) -> Result<Verdict> {
    let field = cx.config.damping()?;
    let spec = spectrum_of(cx, &field)?;
    let lambda = cx.config.analysis.lambda.unwrap_or(spec.reliable_limit());
    let w = weyl_comparison(&spec, lambda)?;
    println!("lambda {}  count {}  prediction {}  ratio {:.6}", w.lambda, w.count, w.prediction, w.ratio);
    let header = Header {
        command: "weyl",
        config_hash: cx.hash,
        cutoff: Some(spec.cutoff()),
        horizon: None,
        epsilon: None,
        field_hash: Some(field.content_hash()),
    };
    write_json(cx.out, "weyl.json", header, w)?;
    Ok(true)
}

/// Smooth deterministic initial data: `|u_k| = e^{−|k|/2}` with scrambled phases.
fn initial_state(cutoff: usize, n: usize, d: usize) -> Result<WaveState> {
    let len = (2 * cutoff + 1).pow(d as u32) * n;
    let width = 2 * cutoff + 1;
    let u: Vec<c64> = (0..len)
        .map(|i| {
            let mut mode = i / n;
            let mut norm1 = 0.0;
            for _ in 0..d {
                norm1 += ((mode % width) as f64 - cutoff as f64).abs();
                mode /= width;
            }
            c64::from_polar((-norm1 / 2.0).exp(), 0.7 * i as f64)
        })
        .collect();
    let v = u.iter().enumerate().map(|(i, z)| z * c64::from_polar(0.5, i as f64)).collect();
    Ok(WaveState::from_parts(u, v, cutoff, n, d)?)
}

#[derive(Serialize)]
struct DecaySummary {
    dt: f64,
    stride: usize,
    records: usize,
    initial_energy: f64,
    final_energy: f64,
    balance_residual: f64,
    psd: bool,
    monotone: bool,
}

pub fn decay(cx: &Run<'_>) -> Result<Verdict> {
    let field = cx.config.damping()?;
    let solver = cx.config.solver()?;
    let manifold = cx.config.manifold()?;
    let ev = cx.config.evolution;
    let gen = assemble(&field, &manifold, solver.cutoff)?;
    let state = initial_state(solver.cutoff, field.n(), manifold.dim())?;
    let traj = evolve(&gen, &state, ev.horizon, ev.dt, ev.stride)?;
    traj.write_files(cx.out, "decay", ev.binary)?;
    let residual = energy_balance_residual(&field, &traj)?;
    let psd = field.extremal_bounds(field.default_grid())?.a_minus >= 0.0;
    let monotone = traj.energy_non_increasing(1e-9);
    let summary = DecaySummary {
        dt: ev.dt,
        stride: ev.stride,
        records: traj.states.len(),
        initial_energy: energy(&traj.states[0]),
        final_energy: energy(traj.last()),
        balance_residual: residual,
        psd,
        monotone,
    };
    println!(
        "energy {:.6e} -> {:.6e}  balance residual {:.3e}  monotone {}",
        summary.initial_energy, summary.final_energy, residual, monotone
    );
    let pass = !psd || monotone;
    if !pass {
        println!("check failed: energy increased under positive semi-definite damping");
    }
    let header = Header {
        command: "decay",
        config_hash: cx.hash,
        cutoff: Some(solver.cutoff),
        horizon: Some(ev.horizon),
        epsilon: None,
        field_hash: Some(field.content_hash()),
    };
    write_json(cx.out, "decay.json", header, summary)?;
    Ok(pass)
}

fn scalar(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Symbol {
    Symbol::custom(1, true, None, move |x, xi, out| out[(0, 0)] = c64::new(f(x, xi), 0.0)).expect("scalar symbol")
}

/// Positive semi-definite test symbols, scalar and 2×2.
fn psd_symbols() -> Vec<(&'static str, Symbol)> {
    vec![
        ("1", Symbol::constant(1.0)),
        ("exp(-x^2-xi^2)", scalar(|x, xi| (-(x * x + xi * xi)).exp())),
        ("1+cos(x)sin(xi)", scalar(|x, xi| 1.0 + x.cos() * xi.sin())),
        (
            "diag(1+cos x, xi^2/(1+xi^2))",
            Symbol::custom(2, true, None, |x, xi, out: &mut DMatrix<c64>| {
                out.fill(c64::new(0.0, 0.0));
                out[(0, 0)] = c64::new(1.0 + x.cos(), 0.0);
                out[(1, 1)] = c64::new(xi * xi / (1.0 + xi * xi), 0.0);
            })
            .expect("2x2 symbol"),
        ),
        (
            "v v^*",
            Symbol::custom(2, true, None, |x, xi, out: &mut DMatrix<c64>| {
                let v = [c64::new(x.cos(), 0.0), c64::from_polar(x.sin(), xi)];
                for r in 0..2 {
                    for c in 0..2 {
                        out[(r, c)] = v[r] * v[c].conj();
                    }
                }
            })
            .expect("2x2 symbol"),
        ),
    ]
}

#[derive(Serialize)]
struct SymbolCheck {
    symbol: String,
    min_eigenvalue: Option<f64>,
    norm: f64,
    sup: f64,
}

#[derive(Serialize)]
struct QuantizeSummary {
    grid: dampwave::quantize::GridSpec,
    identity_defect: f64,
    symbols: Vec<SymbolCheck>,
    mollified_residuals: Vec<(String, f64)>,
    identity_ok: bool,
    positivity_ok: bool,
    norm_bound_ok: bool,
    mollification_ok: bool,
}

pub fn quantize_check(cx: &Run<'_>) -> Result<Verdict> {
    let grid = cx.config.grid()?;
    let one = antiwick_build(&Symbol::constant(1.0), &grid)?;
    let identity_defect = InteriorBasis::new(&grid, 1)?.identity_defect(&one)?;
    let mut symbols = psd_symbols();
    symbols.push(("cos x", Symbol::cosine(1.0, 1.0)));
    let mut checks = Vec::new();
    for (name, s) in &symbols {
        let op = antiwick_build(s, &grid)?;
        checks.push(SymbolCheck {
            symbol: name.to_string(),
            min_eigenvalue: if s.is_psd() { Some(op.min_hermitian_eigenvalue()?) } else { None },
            norm: op.norm()?,
            sup: sup_norm(s, &grid)?,
        });
    }
    let mut mollified = Vec::new();
    for (name, s) in [("1", Symbol::constant(1.0)), ("x^2+xi^2", Symbol::harmonic()), ("cos x", Symbol::cosine(1.0, 1.0))] {
        mollified.push((name.to_string(), mollified_weyl_residual(&s, &grid)?));
    }
    let summary = QuantizeSummary {
        grid,
        identity_defect,
        identity_ok: identity_defect < QUADRATURE_TOL,
        positivity_ok: checks.iter().all(|c| c.min_eigenvalue.is_none_or(|m| m >= -1e-8)),
        norm_bound_ok: checks.iter().all(|c| c.norm <= c.sup + 1e-6),
        mollification_ok: mollified.iter().all(|(_, r)| *r < 1e-4),
        symbols: checks,
        mollified_residuals: mollified,
    };
    let mut table = String::new();
    writeln!(table, "identity defect {:.3e}", summary.identity_defect).unwrap();
    for c in &summary.symbols {
        let min = c.min_eigenvalue.map_or("-".to_string(), |m| format!("{m:.3e}"));
        writeln!(table, "{:<30} min eig {:>11}  norm {:.6}  sup {:.6}", c.symbol, min, c.norm, c.sup).unwrap();
    }
    for (name, r) in &summary.mollified_residuals {
        writeln!(table, "mollified residual {name:<10} {r:.3e}").unwrap();
    }
    print!("{table}");
    let pass = summary.identity_ok && summary.positivity_ok && summary.norm_bound_ok && summary.mollification_ok;
    if !pass {
        println!("check failed: see quantize_check.json");
    }
    let header = Header {
        command: "quantize-check",
        config_hash: cx.hash,
        cutoff: None,
        horizon: None,
        epsilon: None,
        field_hash: None,
    };
    write_json(cx.out, "quantize_check.json", header, summary)?;
    Ok(pass)
}

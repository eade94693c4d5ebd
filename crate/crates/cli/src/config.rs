//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dampwave::damping::DampingField;
use dampwave::geometry::{Manifold, ManifoldKind};
use dampwave::lyapunov::LyapunovParams;
use dampwave::quantize::GridSpec;
use dampwave::spectrum::DEFAULT_RELIABILITY;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_manifold")]
    pub manifold: ManifoldSpec,
    pub damping: Option<DampingSpec>,
    pub solver: Option<SolverSpec>,
    pub lyapunov: Option<LyapunovSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub evolution: EvolutionSpec,
    pub quantize: Option<GridSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub d: usize,
}

fn default_manifold() -> ManifoldSpec {
    ManifoldSpec {
        kind: ManifoldKind::Circle,
        d: 1,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DampingSpec {
    /// A field document as written by `DampingField::to_json`.
    Field(serde_json::Value),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub amplitude: f64,
    pub seed: u64,
    /// Draw a positive semi-definite field with pointwise floor `floor`.
    #[serde(default)]
    pub psd: bool,
    #[serde(default)]
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(rename = "N")]
    pub cutoff: usize,
    #[serde(default = "default_reliability")]
    pub reliability: f64,
}

fn default_reliability() -> f64 {
    DEFAULT_RELIABILITY
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    pub renorm_every: usize,
}

impl From<LyapunovSpec> for LyapunovParams {
    fn from(s: LyapunovSpec) -> Self {
        LyapunovParams {
            horizon: s.horizon,
            dt: s.dt,
            samples: s.samples,
            seed: s.seed,
            renorm_every: s.renorm_every,
        }
    }
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        let p = LyapunovParams::default();
        Self {
            horizon: p.horizon,
            dt: p.dt,
            samples: p.samples,
            seed: p.seed,
            renorm_every: p.renorm_every,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_window")]
    pub window_width: f64,
    /// Counting threshold; defaults to the reliable limit.
    pub lambda: Option<f64>,
    /// Strip outliers are reported for `Re τ ≥ strip_re_min`.
    #[serde(default)]
    pub strip_re_min: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_window() -> f64 {
    1.0
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            window_width: default_window(),
            lambda: None,
            strip_re_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub stride: usize,
    /// Also dump every recorded state in binary.
    #[serde(default)]
    pub binary: bool,
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            dt: 1e-4,
            stride: 10,
            binary: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

/// A parsed configuration together with the hash of its bytes.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        anyhow::anyhow!("{}: field `{field}`: {}", path.display(), e.into_inner())
    })?;
    config.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(Loaded { config, hash })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("field `{name}` must be positive and finite, got {v}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.manifold().context("field `manifold`")?;
        if let Some(s) = &self.solver {
            if s.cutoff == 0 {
                bail!("field `solver.N` must be positive");
            }
            if !(s.reliability > 0.0 && s.reliability <= 1.0) {
                bail!("field `solver.reliability` must lie in (0, 1], got {}", s.reliability);
            }
        }
        if let Some(l) = &self.lyapunov {
            positive("lyapunov.T", l.horizon)?;
            positive("lyapunov.dt", l.dt)?;
            if l.samples == 0 {
                bail!("field `lyapunov.samples` must be positive");
            }
            if l.renorm_every == 0 {
                bail!("field `lyapunov.renorm_every` must be positive");
            }
        }
        positive("analysis.epsilon", self.analysis.epsilon)?;
        positive("analysis.window_width", self.analysis.window_width)?;
        if let Some(l) = self.analysis.lambda {
            positive("analysis.lambda", l)?;
        }
        positive("evolution.T", self.evolution.horizon)?;
        positive("evolution.dt", self.evolution.dt)?;
        if self.evolution.stride == 0 {
            bail!("field `evolution.stride` must be positive");
        }
        if let Some(g) = &self.quantize {
            g.validate().context("field `quantize`")?;
        }
        if let Some(DampingSpec::Generator(g)) = &self.damping {
            if g.n == 0 {
                bail!("field `damping.generator.n` must be positive");
            }
            if !(g.amplitude >= 0.0 && g.amplitude.is_finite()) {
                bail!("field `damping.generator.amplitude` must be non-negative, got {}", g.amplitude);
            }
        }
        Ok(())
    }

    pub fn manifold(&self) -> Result<Manifold> {
        Ok(Manifold::new(self.manifold.kind, self.manifold.d)?)
    }

    pub fn damping(&self) -> Result<DampingField> {
        let spec = self.damping.as_ref().context("missing section `damping`")?;
        let field = match spec {
            DampingSpec::Field(v) => {
                serde_json::from_value::<DampingField>(v.clone()).context("field `damping.field`")?
            }
            DampingSpec::Generator(g) => {
                let d = self.manifold.d;
                let made = if g.psd {
                    DampingField::random_psd(g.n, d, g.k_max, g.amplitude, g.floor, g.seed)
                } else {
                    DampingField::random(g.n, d, g.k_max, g.amplitude, g.seed)
                };
                made.context("field `damping.generator`")?
            }
        };
        if field.d() != self.manifold.d {
            bail!("field `damping`: field is on a {}-torus, manifold has d = {}", field.d(), self.manifold.d);
        }
        Ok(field)
    }

    pub fn solver(&self) -> Result<SolverSpec> {
        self.solver.context("missing section `solver`")
    }

    pub fn lyapunov(&self) -> LyapunovParams {
        self.lyapunov.unwrap_or_default().into()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        match self.quantize {
            Some(g) => Ok(g),
            None => Ok(GridSpec::new(8.0, 641, 0.05, 3.0)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        let mut de = serde_json::Deserializer::from_str(s);
        let c: ExperimentConfig =
            serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                anyhow::anyhow!("{path}: {}", e.into_inner())
            })?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse(r#"{"damping": {"generator": {"n": 2, "K": 1, "amplitude": 0.5, "seed": 4}}}"#).unwrap();
        assert_eq!(c.manifold().unwrap(), Manifold::circle());
        assert_eq!(c.analysis.epsilon, 0.1);
        assert_eq!(c.lyapunov(), LyapunovParams::default());
        assert_eq!(c.damping().unwrap().n(), 2);
        assert!(c.solver().is_err());
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = parse(r#"{"solver": {"N": "many"}}"#).unwrap_err().to_string();
        assert!(e.contains("solver.N"), "{e}");
        let e = parse(r#"{"solver": {"N": 8, "reliability": 2.0}}"#).unwrap_err().to_string();
        assert!(e.contains("solver.reliability"), "{e}");
        let e = parse(r#"{"analysis": {"epsilon": 0.1, "colour": 1}}"#).unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
    }

    #[test]
    fn inline_field_round_trips() {
        let f = DampingField::cosine(1.0, 0.5);
        let c = parse(&format!(r#"{{"damping": {{"field": {}}}}}"#, f.to_json())).unwrap();
        assert_eq!(c.damping().unwrap().content_hash(), f.content_hash());
    }
}

//! JSON run configurations. Unknown fields are rejected and errors carry
//! the path of the offending field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use contflow::density::{BoxDomain, Density, Gaussian, GaussianMixture, UniformBox};
use contflow::divergence::Estimator;
use contflow::points::{Activation, MinNormOptions};
use contflow::synthesis::Objective;
use contflow::target::TailMode;
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;

/// A Gaussian given by its mean and either a full covariance or an isotropic
/// standard deviation (1 when both are omitted).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sd: Option<f64>,
}

impl GaussianSpec {
    pub fn build(&self, field: &str) -> Result<Gaussian, CliError> {
        let d = self.mean.len();
        if d == 0 {
            return Err(CliError::validation(format!("{field}.mean"), "must not be empty"));
        }
        let mean = DVector::from_vec(self.mean.clone());
        let g = match (&self.cov, self.sd) {
            (Some(_), Some(_)) => return Err(CliError::validation(field, "give either cov or sd, not both")),
            (Some(rows), None) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(CliError::validation(format!("{field}.cov"), format!("must be {d}x{d}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Gaussian::new(mean, DMatrix::from_row_slice(d, d, &flat))
            }
            (None, sd) => Gaussian::isotropic(mean, sd.unwrap_or(1.0)),
        };
        g.map_err(|e| CliError::validation(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        sd: Option<f64>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<GaussianSpec>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl DensitySpec {
    pub fn build(&self, field: &str) -> Result<Arc<dyn Density>, CliError> {
        match self {
            DensitySpec::Gaussian { mean, cov, sd } => {
                let g = GaussianSpec { mean: mean.clone(), cov: cov.clone(), sd: *sd }.build(field)?;
                Ok(Arc::new(g))
            }
            DensitySpec::Mixture { weights, components } => {
                let comps = components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.build(&format!("{field}.components[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                let m = GaussianMixture::new(weights.clone(), comps).map_err(|e| CliError::validation(field, e.to_string()))?;
                Ok(Arc::new(m))
            }
            DensitySpec::Uniform { lo, hi } => {
                let u = UniformBox::new(BoxDomain::new(lo.clone(), hi.clone()))
                    .map_err(|e| CliError::validation(field, e.to_string()))?;
                Ok(Arc::new(u))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Quadrature {
        cells: usize,
    },
    MonteCarlo {
        #[serde(default)]
        samples: Option<usize>,
        /// Required; kept optional here so a missing seed gets its own message.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl Default for MethodSpec {
    fn default() -> Self {
        MethodSpec::Quadrature { cells: 256 }
    }
}

impl MethodSpec {
    pub fn build(&self, field: &str) -> Result<Estimator, CliError> {
        match *self {
            MethodSpec::Quadrature { cells } if cells > 0 => Ok(Estimator::quadrature(cells)),
            MethodSpec::Quadrature { .. } => Err(CliError::validation(format!("{field}.cells"), "must be positive")),
            MethodSpec::MonteCarlo { seed: None, .. } => {
                Err(CliError::validation(format!("{field}.seed"), "Monte Carlo estimates need an explicit seed"))
            }
            MethodSpec::MonteCarlo { samples, seed: Some(seed) } => {
                Ok(Estimator::monte_carlo(samples.unwrap_or(1 << 16), seed))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub density: DensitySpec,
    pub sigma_tail: f64,
    /// Tail radius; searched for when omitted.
    #[serde(default)]
    pub radius: Option<f64>,
    pub tail_mode: TailMode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub base: GaussianSpec,
    pub target: TargetConfig,
    pub epsilon: f64,
    pub horizon: f64,
    pub objective: Objective,
    /// Needed in `d >= 2`, where the TV stage is a seeded search.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_attempts: Option<usize>,
    #[serde(default)]
    pub search_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceName {
    Kl,
    ReverseKl,
    Tv,
    HellingerSq,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceConfig {
    pub p: DensitySpec,
    pub q: DensitySpec,
    pub divergences: Vec<DivergenceName>,
    #[serde(default)]
    pub renyi_orders: Vec<f64>,
    #[serde(default)]
    pub method: MethodSpec,
    /// Integration box `[lo, hi]`; derived from the densities when omitted.
    #[serde(default)]
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointsMode {
    Exact,
    MinNorm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsConfig {
    /// CSV files, one point per row, resolved against the config's directory.
    pub source: PathBuf,
    pub target: PathBuf,
    pub horizon: f64,
    pub mode: PointsMode,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub augmented: Option<bool>,
}

impl PointsConfig {
    pub fn min_norm_options(&self) -> MinNormOptions {
        let d = MinNormOptions::default();
        MinNormOptions {
            nodes: self.nodes.unwrap_or(d.nodes),
            augmented: self.augmented.unwrap_or(d.augmented),
            ..d
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XlogxConfig {
    pub p: f64,
    pub q: f64,
    /// Times to check; a sweep around the threshold when omitted.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Run the field backwards (`q >= p`).
    #[serde(default)]
    pub reversed: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEvalConfig {
    /// Schedule JSON file, resolved against the config's directory.
    pub schedule: PathBuf,
    pub initial: GaussianSpec,
    pub points: Vec<Vec<f64>>,
    /// Evaluation time; the schedule's horizon when omitted.
    #[serde(default)]
    pub time: Option<f64>,
    /// Relative tolerance of the ODE cross-check; skipped when omitted.
    #[serde(default)]
    pub ode_tolerance: Option<f64>,
}

/// Parses `KEY=VALUE`; the value is read as JSON and falls back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Reads the config, applies top-level overrides and deserializes it.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[(String, Value)]) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation("config", format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::validation("config", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::validation("config", "top level must be an object"))?;
    for (k, v) in overrides {
        if matches!(obj.get(k), Some(Value::Object(_) | Value::Array(_))) {
            return Err(CliError::validation(k.as_str(), "only scalar fields can be overridden"));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::validation(path, e.into_inner().to_string())
    })
}

/// Resolves `p` against the directory holding the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn check_positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::validation(field, format!("must be positive, got {v}")))
    }
}

pub fn tail_radius(
    density: Arc<dyn Density>,
    cfg: &TargetConfig,
) -> Result<f64, CliError> {
    match cfg.radius {
        Some(r) => {
            check_positive("target.radius", r)?;
            Ok(r)
        }
        None => contflow::target::TargetSpec::find_tail_radius(density, cfg.sigma_tail, cfg.tail_mode, 0.5, 40)
            .ok_or_else(|| CliError::failure("tail_certification", "no radius satisfies the tail hypothesis")),
    }
}

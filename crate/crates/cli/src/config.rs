//! Experiment configuration, loaded from JSON.
//!
//! Distances (`h`, `h_star`, the principal-flow length and step, the
//! Jacobian step, sweep bandwidths) are written either as plain numbers in the
//! config's `units`, as `"inf"`, or with an explicit `"mi"` suffix. All of
//! them must agree with `units`; mixing is rejected at load time.

use std::fs;
use std::path::{Path, PathBuf};

use fbflow::{Bandwidth, CloudProjection, Manifold};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generate::{Scenario, ShapeParams};
use crate::geo::{angle_to_chord, miles_to_angle, GeoFilter, GeoPoint};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unit mismatch: {0}")]
    Units(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Ambient,
    /// Great-circle miles on the Earth; requires the unit sphere.
    Miles,
}

/// A length as written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Distance {
    Value(f64),
    Text(String),
}

/// A parsed [`Distance`], not yet converted.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Length {
    Plain(f64),
    Miles(f64),
    Infinite,
}

impl Distance {
    pub fn infinite() -> Self {
        Distance::Text("inf".into())
    }

    fn parse(&self) -> Result<Length, ConfigError> {
        match self {
            Distance::Value(v) if *v == f64::INFINITY => Ok(Length::Infinite),
            Distance::Value(v) => Ok(Length::Plain(*v)),
            Distance::Text(s) => {
                let t = s.trim().to_ascii_lowercase();
                if t == "inf" || t == "infinity" {
                    return Ok(Length::Infinite);
                }
                let (num, miles) = match t.strip_suffix("miles").or_else(|| t.strip_suffix("mi")) {
                    Some(rest) => (rest.trim(), true),
                    None => (t.as_str(), false),
                };
                let v: f64 = num.parse().map_err(|_| invalid(format!("cannot read distance '{s}'")))?;
                Ok(if miles { Length::Miles(v) } else { Length::Plain(v) })
            }
        }
    }

    /// Converts to ambient (chord) length, `None` meaning infinite.
    pub fn chord(&self, units: Units, what: &str) -> Result<Option<f64>, ConfigError> {
        self.convert(units, what, angle_to_chord)
    }

    /// Converts to length along the manifold (central angle for miles).
    pub fn arc(&self, units: Units, what: &str) -> Result<Option<f64>, ConfigError> {
        self.convert(units, what, |a| a)
    }

    fn convert(&self, units: Units, what: &str, angle: impl Fn(f64) -> f64) -> Result<Option<f64>, ConfigError> {
        let value = match (self.parse()?, units) {
            (Length::Infinite, _) => return Ok(None),
            (Length::Miles(_), Units::Ambient) => {
                return Err(ConfigError::Units(format!("{what} is given in miles but units are ambient")))
            }
            (Length::Plain(v), Units::Ambient) => v,
            (Length::Plain(v) | Length::Miles(v), Units::Miles) => {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("{what} must be positive, got {v}")));
                }
                angle(miles_to_angle(v))
            }
        };
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("{what} must be positive or \"inf\", got {value}")));
        }
        Ok(Some(value))
    }

    pub fn bandwidth(&self, units: Units, what: &str) -> Result<Bandwidth<f64>, ConfigError> {
        Ok(match self.chord(units, what)? {
            Some(h) => Bandwidth::Finite(h),
            None => Bandwidth::Infinite,
        })
    }

    fn finite_arc(&self, units: Units, what: &str) -> Result<f64, ConfigError> {
        self.arc(units, what)?
            .ok_or_else(|| invalid(format!("{what} must be finite")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ManifoldSpec {
    Sphere {
        #[serde(default = "one")]
        radius: f64,
    },
    Cone {
        #[serde(default = "one")]
        height: f64,
        #[serde(default = "one")]
        radius: f64,
    },
    Euclidean {
        dim: usize,
    },
    Affine {
        origin: Vec<f64>,
        spanning: Vec<Vec<f64>>,
    },
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<Manifold<f64>, ConfigError> {
        let bad = |e: fbflow::FlowError| invalid(format!("manifold: {e}"));
        match self {
            ManifoldSpec::Sphere { radius } => Manifold::sphere(*radius).map_err(bad),
            ManifoldSpec::Cone { height, radius } => Manifold::cone(*height, *radius).map_err(bad),
            ManifoldSpec::Euclidean { dim } if *dim >= 1 => Ok(Manifold::euclidean(*dim)),
            ManifoldSpec::Euclidean { .. } => Err(invalid("euclidean dimension must be at least 1")),
            ManifoldSpec::Affine { origin, spanning } => {
                let span: Vec<DVector<f64>> = spanning.iter().map(|v| DVector::from_vec(v.clone())).collect();
                Manifold::affine(DVector::from_vec(origin.clone()), &span).map_err(bad)
            }
        }
    }

    fn is_unit_sphere(&self) -> bool {
        matches!(self, ManifoldSpec::Sphere { radius } if *radius == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub scenario: Scenario,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: ShapeParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvFormat {
    /// `geo` when the header names a latitude column, `raw` otherwise.
    #[default]
    Auto,
    Geo,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    /// Relative paths are taken from the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub format: CsvFormat,
    #[serde(default)]
    pub filter: GeoFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Generator(GeneratorSpec),
    Csv(CsvSpec),
}

/// A point given either in ambient coordinates or as latitude/longitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Ambient(Vec<f64>),
    LatLon { lat: f64, lon: f64 },
}

impl PointSpec {
    pub fn resolve(&self, on_unit_sphere: bool) -> Result<DVector<f64>, ConfigError> {
        match self {
            PointSpec::Ambient(v) => Ok(DVector::from_vec(v.clone())),
            PointSpec::LatLon { lat, lon } => {
                if !on_unit_sphere {
                    return Err(invalid("latitude/longitude points need the unit sphere"));
                }
                GeoPoint::new(*lat, *lon)
                    .map(|g| g.to_unit())
                    .ok_or_else(|| invalid(format!("latitude {lat} / longitude {lon} out of range")))
            }
        }
    }
}

/// `δ` as a single value or a sweep list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl DeltaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            DeltaSpec::One(d) => vec![*d],
            DeltaSpec::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProjectionSpec {
    #[default]
    Nearest,
    LocalMean {
        k: usize,
    },
}

impl From<ProjectionSpec> for CloudProjection {
    fn from(p: ProjectionSpec) -> Self {
        match p {
            ProjectionSpec::Nearest => CloudProjection::Nearest,
            ProjectionSpec::LocalMean { k } => CloudProjection::LocalMean { k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSpec {
    #[serde(default = "default_principal_length")]
    pub length: Distance,
    #[serde(default = "default_principal_step")]
    pub step: Distance,
    /// Bandwidth of the principal flow; `h` when absent.
    #[serde(default)]
    pub h: Option<Distance>,
    /// Starting point; the Fréchet mean of the data when absent.
    #[serde(default)]
    pub start: Option<PointSpec>,
}

impl Default for PrincipalSpec {
    fn default() -> Self {
        PrincipalSpec {
            length: default_principal_length(),
            step: default_principal_step(),
            h: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepHSpec {
    #[serde(default = "default_sweep_values")]
    pub values: Vec<Distance>,
    /// Where `ρ` is evaluated; the Fréchet mean when absent.
    #[serde(default)]
    pub point: Option<PointSpec>,
}

impl Default for SweepHSpec {
    fn default() -> Self {
        SweepHSpec {
            values: default_sweep_values(),
            point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaMapSpec {
    /// Grid nodes per axis.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for LambdaMapSpec {
    fn default() -> Self {
        LambdaMapSpec {
            resolution: default_resolution(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EuclidSpec {
    /// Lattice spacing in field coordinates.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Length budget of lattice paths.
    #[serde(default = "one")]
    pub max_length: f64,
}

impl Default for EuclidSpec {
    fn default() -> Self {
        EuclidSpec {
            spacing: default_spacing(),
            max_length: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required for raw CSV data; implied by generators and geo catalogues.
    #[serde(default)]
    pub manifold: Option<ManifoldSpec>,
    pub data: DataSource,
    /// `[x̄₁, x̄₂]`; generators supply defaults on their curves.
    #[serde(default)]
    pub endpoints: Option<[PointSpec; 2]>,
    #[serde(default)]
    pub units: Units,
    #[serde(default = "Distance::infinite")]
    pub h: Distance,
    #[serde(default = "Distance::infinite")]
    pub h_star: Distance,
    #[serde(default = "default_delta")]
    pub delta: DeltaSpec,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "one")]
    pub relaxation: f64,
    #[serde(default = "default_relative_tol")]
    pub relative_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_iterations")]
    pub newton_max_iterations: usize,
    #[serde(default)]
    pub jacobian_step: Option<Distance>,
    #[serde(default)]
    pub deferred_projection: bool,
    #[serde(default = "yes")]
    pub rescale: bool,
    #[serde(default)]
    pub projection: ProjectionSpec,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub principal: PrincipalSpec,
    #[serde(default)]
    pub sweep_h: SweepHSpec,
    #[serde(default)]
    pub lambda_map: LambdaMapSpec,
    #[serde(default)]
    pub euclid: EuclidSpec,
    /// Directory of the config file, for relative data paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_n() -> usize {
    400
}
fn default_delta() -> DeltaSpec {
    DeltaSpec::One(-0.5)
}
fn default_intervals() -> usize {
    40
}
fn default_stages() -> usize {
    3
}
fn default_relative_tol() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    100
}
fn default_newton_tol() -> f64 {
    1e-8
}
fn default_newton_iterations() -> usize {
    50
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_principal_length() -> Distance {
    Distance::Value(1.0)
}
fn default_principal_step() -> Distance {
    Distance::Value(0.01)
}
fn default_sweep_values() -> Vec<Distance> {
    (1..=10).map(|k| Distance::Value(0.05 * k as f64)).collect()
}
fn default_resolution() -> usize {
    60
}
fn default_spacing() -> f64 {
    0.05
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub h: Option<String>,
    pub h_star: Option<String>,
    pub delta: Option<Vec<f64>>,
    pub intervals: Option<usize>,
    pub stages: Option<usize>,
    pub relaxation: Option<f64>,
    pub output: Option<PathBuf>,
}

fn distance_from_arg(s: &str) -> Distance {
    match s.trim().parse::<f64>() {
        Ok(v) => Distance::Value(v),
        Err(_) => Distance::Text(s.to_string()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: shown, source })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Json {
            path: "<inline>".into(),
            source,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let (Some(seed), DataSource::Generator(g)) = (o.seed, &mut self.data) {
            g.seed = Some(seed);
        }
        if let Some(h) = &o.h {
            self.h = distance_from_arg(h);
        }
        if let Some(h) = &o.h_star {
            self.h_star = distance_from_arg(h);
        }
        if let Some(d) = &o.delta {
            self.delta = DeltaSpec::Many(d.clone());
        }
        if let Some(n) = o.intervals {
            self.intervals = n;
        }
        if let Some(k) = o.stages {
            self.stages = k;
        }
        if let Some(w) = o.relaxation {
            self.relaxation = w;
        }
        if let Some(out) = &o.output {
            self.output = out.clone();
        }
    }

    /// The manifold the data live on.
    pub fn manifold_spec(&self) -> Result<ManifoldSpec, ConfigError> {
        match (&self.manifold, &self.data) {
            (Some(m), DataSource::Generator(g)) => {
                let implied = scenario_manifold(g.scenario);
                if *m != implied {
                    return Err(invalid(format!(
                        "scenario {} lives on {:?}, config says {:?}",
                        g.scenario, implied, m
                    )));
                }
                Ok(m.clone())
            }
            (Some(m), DataSource::Csv(_)) => Ok(m.clone()),
            (None, DataSource::Generator(g)) => Ok(scenario_manifold(g.scenario)),
            (None, DataSource::Csv(c)) if c.format == CsvFormat::Raw => {
                Err(invalid("raw CSV data needs an explicit manifold"))
            }
            (None, DataSource::Csv(_)) => Ok(ManifoldSpec::Sphere { radius: 1.0 }),
        }
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        match &self.data {
            DataSource::Csv(c) if c.path.is_relative() => Some(self.base_dir.join(&c.path)),
            DataSource::Csv(c) => Some(c.path.clone()),
            DataSource::Generator(_) => None,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        if self.output.is_relative() && !self.base_dir.as_os_str().is_empty() {
            self.base_dir.join(&self.output)
        } else {
            self.output.clone()
        }
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.delta.values()
    }

    /// Checks every invariant that does not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.manifold_spec()?;
        spec.build()?;
        if self.units == Units::Miles && !spec.is_unit_sphere() {
            return Err(ConfigError::Units("miles require the unit sphere".into()));
        }
        if let DataSource::Generator(g) = &self.data {
            if g.seed.is_none() {
                return Err(invalid("generator data need a seed"));
            }
            if !(g.sigma.is_finite() && g.sigma >= 0.0) {
                return Err(invalid(format!("noise sigma must be non-negative, got {}", g.sigma)));
            }
            if g.n < 2 {
                return Err(invalid("generator needs at least two points"));
            }
        }
        self.h.bandwidth(self.units, "h")?;
        self.h_star.bandwidth(self.units, "h_star")?;
        if let Some(s) = &self.jacobian_step {
            s.finite_arc(self.units, "jacobian_step")?;
        }
        self.principal.length.finite_arc(self.units, "principal.length")?;
        self.principal.step.finite_arc(self.units, "principal.step")?;
        if let Some(h) = &self.principal.h {
            h.bandwidth(self.units, "principal.h")?;
        }
        if self.sweep_h.values.is_empty() {
            return Err(invalid("sweep_h.values is empty"));
        }
        for v in &self.sweep_h.values {
            v.chord(self.units, "sweep_h value")?
                .ok_or_else(|| invalid("sweep_h values must be finite"))?;
        }
        let deltas = self.deltas();
        if deltas.is_empty() {
            return Err(invalid("delta list is empty"));
        }
        if let Some(d) = deltas.iter().find(|d| !d.is_finite() || **d == 0.0) {
            return Err(invalid(format!("delta must be finite and nonzero, got {d}")));
        }
        if self.intervals < 4 {
            return Err(invalid(format!("mesh needs at least 4 intervals, got {}", self.intervals)));
        }
        if !(2..=4).contains(&self.stages) {
            return Err(invalid(format!("collocation stages must be in 2..=4, got {}", self.stages)));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(invalid(format!("relaxation must be in (0, 1], got {}", self.relaxation)));
        }
        if !(self.relative_tol > 0.0 && self.newton_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.max_outer == 0 || self.newton_max_iterations == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if let ProjectionSpec::LocalMean { k } = self.projection {
            if k == 0 {
                return Err(invalid("local-mean projection needs k >= 1"));
            }
        }
        if self.lambda_map.resolution < 2 {
            return Err(invalid("lambda_map.resolution must be at least 2"));
        }
        if !(self.euclid.spacing > 0.0 && self.euclid.max_length > 0.0) {
            return Err(invalid("euclid spacing and max_length must be positive"));
        }
        let sphere = spec.is_unit_sphere();
        if let Some(ends) = &self.endpoints {
            for p in ends {
                p.resolve(sphere)?;
            }
        }
        for p in [&self.principal.start, &self.sweep_h.point].into_iter().flatten() {
            p.resolve(sphere)?;
        }
        Ok(())
    }
}

pub fn scenario_manifold(s: Scenario) -> ManifoldSpec {
    match s.manifold() {
        Manifold::Sphere { .. } => ManifoldSpec::Sphere { radius: 1.0 },
        Manifold::Cone { .. } => ManifoldSpec::Cone { height: 1.0, radius: 1.0 },
        m => ManifoldSpec::Euclidean { dim: m.ambient_dim() },
    }
}

//! Config files. Each one is checked against its embedded JSON schema, then
//! parsed into typed structs and validated semantically.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use mrc_core::io::SCHEMA_VERSION;
use mrc_core::{
    BoundaryCondition, Direction, ReconstructionConfig, SolverConfig, StarSurface, SurfaceShape, WaveContext,
};

pub mod schemas {
    pub const SOLVE_CONFIG: &str = include_str!("../schemas/solve_config.schema.json");
    pub const SYNTHESIZE_CONFIG: &str = include_str!("../schemas/synthesize_config.schema.json");
    pub const INVERT_CONFIG: &str = include_str!("../schemas/invert_config.schema.json");
    pub const ORACLE_CONFIG: &str = include_str!("../schemas/oracle_config.schema.json");
    pub const FIELDMAP_CONFIG: &str = include_str!("../schemas/fieldmap_config.schema.json");
    pub const SOLUTION: &str = include_str!("../schemas/solution.schema.json");
    pub const ORACLE: &str = include_str!("../schemas/oracle.schema.json");
    pub const NEAR_FIELD: &str = include_str!("../schemas/near_field.schema.json");
    pub const RECONSTRUCTION: &str = include_str!("../schemas/reconstruction.schema.json");
}

/// Checks `instance` against `schema`, listing every violation.
pub fn validate_against(schema: &str, instance: &Value, what: &str) -> Result<()> {
    let schema: Value = serde_json::from_str(schema).expect("embedded schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("embedded schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| {
            let path = e.instance_path().to_string();
            format!("{} (at '{}')", e, if path.is_empty() { "/" } else { &path })
        })
        .collect();
    if !errors.is_empty() {
        bail!("{what} does not match its schema:\n  {}", errors.join("\n  "));
    }
    Ok(())
}

/// Reads a JSON file, validates it against `schema` and deserializes it.
pub fn load<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    validate_against(schema, &value, &path.display().to_string())?;
    serde_json::from_value(value).with_context(|| format!("cannot parse {}", path.display()))
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        bail!("unsupported schema_version {v}, expected {SCHEMA_VERSION}");
    }
    Ok(())
}

fn context(k: f64, alpha: [f64; 2]) -> Result<WaveContext> {
    Ok(WaveContext::new(k, Direction::try_new(alpha[0], alpha[1])?)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub schema_version: u32,
    pub surface: SurfaceShape,
    pub boundary_condition: BoundaryCondition,
    pub k: f64,
    pub alpha: [f64; 2],
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SolveConfig {
    pub fn check(&self) -> Result<(StarSurface, WaveContext)> {
        check_version(self.schema_version)?;
        self.solver.validate()?;
        let surface = StarSurface::new(self.surface.clone())?;
        Ok((surface, context(self.k, self.alpha)?))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Incidence {
    pub k: f64,
    pub alpha: [f64; 2],
}

fn default_quadrature_degree() -> usize {
    30
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub schema_version: u32,
    pub surface: SurfaceShape,
    pub boundary_condition: BoundaryCondition,
    pub measurement_radius: f64,
    #[serde(default = "default_quadrature_degree")]
    pub quadrature_degree: usize,
    pub incidences: Vec<Incidence>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SynthesizeConfig {
    pub fn check(&self) -> Result<(StarSurface, Vec<WaveContext>)> {
        check_version(self.schema_version)?;
        self.solver.validate()?;
        if self.delta.is_nan() || self.delta < 0.0 {
            bail!("delta must be non-negative, got {}", self.delta);
        }
        let surface = StarSurface::new(self.surface.clone())?;
        let contexts = self
            .incidences
            .iter()
            .map(|i| context(i.k, i.alpha))
            .collect::<Result<_>>()?;
        Ok((surface, contexts))
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSpec {
    Fibonacci(usize),
    List(Vec<[f64; 2]>),
}

impl Default for DirectionSpec {
    fn default() -> Self {
        Self::Fibonacci(50)
    }
}

impl DirectionSpec {
    pub fn directions(&self) -> Result<Vec<Direction>> {
        match self {
            Self::Fibonacci(n) => Ok(Direction::fibonacci(*n)),
            Self::List(list) => Ok(list
                .iter()
                .map(|a| Direction::try_new(a[0], a[1]))
                .collect::<Result<_, _>>()?),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub directions: DirectionSpec,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
}

impl InvertConfig {
    pub fn check(&self) -> Result<Vec<Direction>> {
        check_version(self.schema_version)?;
        self.reconstruction.validate()?;
        self.directions.directions()
    }
}

fn both_conditions() -> Vec<BoundaryCondition> {
    vec![BoundaryCondition::Dirichlet, BoundaryCondition::Neumann]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub schema_version: u32,
    pub radius: f64,
    pub k: f64,
    pub alpha: [f64; 2],
    pub l_max: usize,
    #[serde(default = "both_conditions")]
    pub boundary_conditions: Vec<BoundaryCondition>,
}

impl OracleConfig {
    pub fn check(&self) -> Result<WaveContext> {
        check_version(self.schema_version)?;
        context(self.k, self.alpha)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plane {
    pub origin: [f64; 3],
    pub step_u: [f64; 3],
    pub step_v: [f64; 3],
    pub n_u: usize,
    pub n_v: usize,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSpec {
    Plane(Plane),
    List(Vec<[f64; 3]>),
}

impl PointSpec {
    /// Points in row-major order (`v` outer, `u` inner) for a plane.
    pub fn points(&self) -> Vec<[f64; 3]> {
        match self {
            Self::List(list) => list.clone(),
            Self::Plane(p) => {
                let mut out = Vec::with_capacity(p.n_u * p.n_v);
                for j in 0..p.n_v {
                    for i in 0..p.n_u {
                        let (a, b) = (i as f64, j as f64);
                        out.push(std::array::from_fn(|c| p.origin[c] + a * p.step_u[c] + b * p.step_v[c]));
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldmapConfig {
    pub schema_version: u32,
    pub solution: PathBuf,
    pub points: PointSpec,
}

impl FieldmapConfig {
    pub fn check(&self) -> Result<()> {
        check_version(self.schema_version)
    }
}

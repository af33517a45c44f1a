//! JSON file formats. Every float is written with 17 significant digits so
//! a write/read cycle reproduces the exact `f64`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::direct::{BoundaryCondition, CoefficientSet, DirectSolution, WaveContext};
use crate::error::{MrcError, Result};
use crate::geometry::{Direction, SphereQuadrature, SurfaceShape};
use crate::inverse::{NearFieldData, NearFieldEntry, ReconstructedSurface};
use crate::specfun::ModeIndex;

/// Version stamped into every file and expected in every config.
pub const SCHEMA_VERSION: u32 = 1;

/// `serde_json` formatter printing floats as `{:.16e}`.
#[derive(Debug, Clone, Default)]
pub struct RoundTripFormatter {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(writer)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn check_version(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(MrcError::InvalidInput(format!(
            "unsupported schema_version {found} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// `[ell, m, re, im]` rows in flat-index order.
pub fn coefficient_rows(c: &CoefficientSet) -> Vec<(usize, i32, f64, f64)> {
    c.iter().map(|(mode, v)| (mode.ell, mode.m, v.re, v.im)).collect()
}

/// Inverse of [`coefficient_rows`]; rows may come in any order but must
/// cover every mode up to `l_max` exactly once.
pub fn coefficients_from_rows(l_max: usize, rows: &[(usize, i32, f64, f64)]) -> Result<CoefficientSet> {
    let n = ModeIndex::count(l_max);
    let mut values = vec![None; n];
    for &(ell, m, re, im) in rows {
        let mode = ModeIndex::new(ell, m)?;
        let slot = values
            .get_mut(mode.flat())
            .ok_or_else(|| MrcError::InvalidInput(format!("mode ({ell}, {m}) exceeds l_max = {l_max}")))?;
        if slot.replace(Complex64::new(re, im)).is_some() {
            return Err(MrcError::InvalidInput(format!("mode ({ell}, {m}) listed twice")));
        }
    }
    let coeffs = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| {
                let mode = ModeIndex::from_flat(i);
                MrcError::InvalidInput(format!("mode ({}, {}) missing", mode.ell, mode.m))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientSet::new(l_max, coeffs)
}

fn angles(d: &Direction) -> [f64; 2] {
    [d.theta(), d.phi()]
}

fn direction(a: [f64; 2]) -> Result<Direction> {
    Direction::try_new(a[0], a[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsRecord {
    pub condition_estimate: f64,
    pub rank: usize,
    pub quadrature: [usize; 2],
}

/// Direct solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub surface: Option<SurfaceShape>,
    pub boundary_condition: BoundaryCondition,
    pub k: f64,
    /// Incidence `[theta, phi]`.
    pub alpha: [f64; 2],
    pub l_max: usize,
    pub residual: f64,
    pub eps_target: f64,
    pub converged: bool,
    pub history: Vec<(usize, f64)>,
    pub diagnostics: DiagnosticsRecord,
    pub coefficients: Vec<(usize, i32, f64, f64)>,
}

impl SolutionFile {
    pub fn new(sol: &DirectSolution, surface: Option<&SurfaceShape>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            surface: surface.cloned(),
            boundary_condition: sol.boundary_condition,
            k: sol.context.k,
            alpha: angles(&sol.context.alpha),
            l_max: sol.coefficients.l_max(),
            residual: sol.residual,
            eps_target: sol.eps_target,
            converged: sol.converged,
            history: sol.diagnostics.history.clone(),
            diagnostics: DiagnosticsRecord {
                condition_estimate: sol.diagnostics.condition_estimate,
                rank: sol.diagnostics.rank,
                quadrature: [sol.diagnostics.quadrature.0, sol.diagnostics.quadrature.1],
            },
            coefficients: coefficient_rows(&sol.coefficients),
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        check_version(self.schema_version)?;
        coefficients_from_rows(self.l_max, &self.coefficients)
    }

    pub fn context(&self) -> Result<WaveContext> {
        WaveContext::new(self.k, direction(self.alpha)?)
    }
}

/// `[theta, phi, r, residual, spread]`; `None` marks a non-finite value.
pub type DirectionRecord = (f64, f64, f64, Option<f64>, Option<f64>);

/// Exact sphere coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub schema_version: u32,
    pub radius: f64,
    pub boundary_condition: BoundaryCondition,
    pub k: f64,
    pub alpha: [f64; 2],
    pub l_max: usize,
    pub coefficients: Vec<(usize, i32, f64, f64)>,
}

impl OracleFile {
    pub fn new(radius: f64, ctx: &WaveContext, bc: BoundaryCondition, coeffs: &CoefficientSet) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            radius,
            boundary_condition: bc,
            k: ctx.k,
            alpha: angles(&ctx.alpha),
            l_max: coeffs.l_max(),
            coefficients: coefficient_rows(coeffs),
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        check_version(self.schema_version)?;
        coefficients_from_rows(self.l_max, &self.coefficients)
    }
}

/// How a near-field data set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub surface: SurfaceShape,
    pub boundary_condition: BoundaryCondition,
    pub forward_eps_target: f64,
    /// Degree and relative residual of every forward solve, per entry.
    pub forward_degrees: Vec<usize>,
    pub forward_residuals: Vec<f64>,
    pub forward_converged: Vec<bool>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureRecord {
    pub n_theta: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRecord {
    pub k: f64,
    pub alpha: [f64; 2],
    pub delta: f64,
    pub samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearFieldFile {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub header: Option<Provenance>,
    #[serde(rename = "R")]
    pub radius: f64,
    pub quadrature: QuadratureRecord,
    pub entries: Vec<EntryRecord>,
}

impl NearFieldFile {
    pub fn new(data: &NearFieldData, header: Option<Provenance>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            header,
            radius: data.radius(),
            quadrature: QuadratureRecord {
                n_theta: data.quadrature().n_theta(),
                n_phi: data.quadrature().n_phi(),
            },
            entries: data
                .entries()
                .iter()
                .map(|e| EntryRecord {
                    k: e.ctx.k,
                    alpha: angles(&e.ctx.alpha),
                    delta: e.delta,
                    samples: e.samples.iter().map(|v| [v.re, v.im]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_data(&self) -> Result<NearFieldData> {
        check_version(self.schema_version)?;
        let quad = SphereQuadrature::new(self.quadrature.n_theta, self.quadrature.n_phi)?;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                Ok(NearFieldEntry {
                    ctx: WaveContext::new(e.k, direction(e.alpha)?)?,
                    samples: e.samples.iter().map(|s| Complex64::new(s[0], s[1])).collect(),
                    delta: e.delta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        NearFieldData::new(self.radius, quad, entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub degree: usize,
    /// `[ell, m, a]` in the real harmonic basis (`m > 0` cosine, `m < 0` sine).
    pub coefficients: Vec<(usize, i32, f64)>,
}

/// Reconstruction result. Non-finite residuals and spreads (unresolved
/// directions) are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionFile {
    pub schema_version: u32,
    pub l_selected: usize,
    pub converged: bool,
    pub resolved_fraction: f64,
    pub threshold: f64,
    pub bracket: [f64; 2],
    pub history: Vec<(usize, f64)>,
    pub directions: Vec<DirectionRecord>,
    pub resolved: Vec<bool>,
    pub model: Option<ModelRecord>,
}

impl ReconstructionFile {
    pub fn new(rec: &ReconstructedSurface) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            l_selected: rec.l_selected,
            converged: rec.converged,
            resolved_fraction: rec.resolved_fraction,
            threshold: rec.threshold,
            bracket: [rec.bracket.0, rec.bracket.1],
            history: rec.history.clone(),
            directions: rec
                .estimates
                .iter()
                .map(|e| {
                    let d = e.root.dir_out;
                    (
                        d.theta(),
                        d.phi(),
                        e.root.r,
                        finite(e.root.residual),
                        finite(e.root.spread),
                    )
                })
                .collect(),
            resolved: rec.estimates.iter().map(|e| e.resolved).collect(),
            model: rec.model.as_ref().map(|m| ModelRecord {
                degree: m.degree,
                coefficients: m.coefficients.clone(),
            }),
        }
    }

    /// `theta,phi,r` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,phi,r\n");
        for (t, p, r, _, _) in &self.directions {
            out.push_str(&format!("{t:.16e},{p:.16e},{r:.16e}\n"));
        }
        out
    }
}

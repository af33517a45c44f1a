//! Subcommand implementations. Each returns whether its computation reached
//! its target; errors propagate to `main`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use mrc_core::direct::mrc_solve;
use mrc_core::fields::{scattered_field, total_field};
use mrc_core::inverse::{add_noise, stable_reconstruct, synthesize};
use mrc_core::io::{to_json_string, NearFieldFile, OracleFile, Provenance, ReconstructionFile, SolutionFile};
use mrc_core::oracle::sphere_scattering_coeffs;
use mrc_core::{BoundaryCondition, Complex64, Direction, SphereQuadrature, StarSurface, Vector3};

use crate::config::{
    load, schemas, validate_against, FieldmapConfig, InvertConfig, OracleConfig, SolveConfig, SynthesizeConfig,
};

/// Serializes `value`, checks it against its shipped schema and writes it.
fn write_checked<T: Serialize>(value: &T, schema: &str, path: &Path) -> Result<()> {
    let text = to_json_string(value)?;
    let parsed: serde_json::Value = serde_json::from_str(&text)?;
    validate_against(schema, &parsed, &path.display().to_string())?;
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn solve(config: &Path, out: &Path) -> Result<bool> {
    let cfg: SolveConfig = load(config, schemas::SOLVE_CONFIG)?;
    let (surface, ctx) = cfg.check()?;
    let sol = mrc_solve(&surface, &ctx, cfg.boundary_condition, &cfg.solver)?;
    if !sol.converged {
        warn!(
            "residual {:.3e} above target {:.1e} at L = {}",
            sol.residual,
            sol.eps_target,
            sol.coefficients.l_max()
        );
    }
    write_checked(
        &SolutionFile::new(&sol, Some(surface.shape())),
        schemas::SOLUTION,
        &out.join("solution.json"),
    )?;
    Ok(sol.converged)
}

pub fn synthesize_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<bool> {
    let cfg: SynthesizeConfig = load(config, schemas::SYNTHESIZE_CONFIG)?;
    let (surface, contexts) = cfg.check()?;
    let seed = seed.unwrap_or(cfg.seed);
    let quad = SphereQuadrature::with_degree(cfg.quadrature_degree);
    let (clean, solutions) = synthesize(
        &surface,
        cfg.boundary_condition,
        &contexts,
        cfg.measurement_radius,
        quad,
        &cfg.solver,
    )?;
    let data = add_noise(&clean, cfg.delta, seed)?;
    let header = Provenance {
        surface: surface.shape().clone(),
        boundary_condition: cfg.boundary_condition,
        forward_eps_target: cfg.solver.eps_target,
        forward_degrees: solutions.iter().map(|s| s.coefficients.l_max()).collect(),
        forward_residuals: solutions.iter().map(|s| s.residual).collect(),
        forward_converged: solutions.iter().map(|s| s.converged).collect(),
        noise_seed: seed,
    };
    write_checked(
        &NearFieldFile::new(&data, Some(header)),
        schemas::NEAR_FIELD,
        &out.join("nearfield.json"),
    )?;
    Ok(solutions.iter().all(|s| s.converged))
}

pub fn invert(data: &Path, config: &Path, out: &Path) -> Result<bool> {
    let file: NearFieldFile = load(data, schemas::NEAR_FIELD)?;
    let data = file.to_data()?;
    let cfg: InvertConfig = load(config, schemas::INVERT_CONFIG)?;
    let dirs = cfg.check()?;
    let rec = stable_reconstruct(&data, &dirs, &cfg.reconstruction)?;
    if !rec.converged {
        warn!(
            "only {:.1}% of directions resolved at L = {}",
            100.0 * rec.resolved_fraction,
            rec.l_selected
        );
    }
    let record = ReconstructionFile::new(&rec);
    write_checked(&record, schemas::RECONSTRUCTION, &out.join("reconstruction.json"))?;
    write_text(&out.join("reconstruction.csv"), &record.to_csv())?;
    Ok(rec.converged)
}

fn bc_name(bc: BoundaryCondition) -> &'static str {
    match bc {
        BoundaryCondition::Dirichlet => "dirichlet",
        BoundaryCondition::Neumann => "neumann",
    }
}

pub fn oracle(config: &Path, out: &Path) -> Result<bool> {
    let cfg: OracleConfig = load(config, schemas::ORACLE_CONFIG)?;
    let ctx = cfg.check()?;
    for &bc in &cfg.boundary_conditions {
        let coeffs = sphere_scattering_coeffs(cfg.radius, &ctx, cfg.l_max, bc)?;
        let path = out.join(format!("oracle_{}.json", bc_name(bc)));
        write_checked(&OracleFile::new(cfg.radius, &ctx, bc, &coeffs), schemas::ORACLE, &path)?;
    }
    Ok(true)
}

/// Writes `x,y,z,scattered_re,scattered_im,total_re,total_im,inside`.
/// `inside` marks points strictly inside the obstacle, where the expansion
/// has no convergence guarantee; it is empty when the solution carries no
/// surface. Fields at the origin are undefined and written as `NaN`.
pub fn fieldmap(config: &Path, out: &Path) -> Result<bool> {
    let cfg: FieldmapConfig = load(config, schemas::FIELDMAP_CONFIG)?;
    cfg.check()?;
    let sol: SolutionFile = load(&cfg.solution, schemas::SOLUTION)?;
    let coeffs = sol.coefficients()?;
    let ctx = sol.context()?;
    let surface = sol.surface.clone().map(StarSurface::new).transpose()?;
    let mut csv = String::from("x,y,z,scattered_re,scattered_im,total_re,total_im,inside\n");
    for p in cfg.points.points() {
        let x = Vector3::new(p[0], p[1], p[2]);
        let r = x.norm();
        let (v, u) = if r > 0.0 {
            (scattered_field(&coeffs, &ctx, &x)?, total_field(&coeffs, &ctx, &x)?)
        } else {
            let nan = Complex64::new(f64::NAN, f64::NAN);
            (nan, nan)
        };
        let inside = match (&surface, r > 0.0) {
            (Some(s), true) => (r < s.radius(&Direction::from_vector(x)?)).to_string(),
            (Some(_), false) => "true".to_string(),
            (None, _) => String::new(),
        };
        writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{inside}",
            p[0], p[1], p[2], v.re, v.im, u.re, u.im
        )
        .expect("writing to a String cannot fail");
    }
    write_text(&out.join("fieldmap.csv"), &csv)?;
    Ok(true)
}

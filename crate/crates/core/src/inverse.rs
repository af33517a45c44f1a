//! Boundary reconstruction from scattered-field data on a sphere `S_R`.
//!
//! For every data entry `(k, alpha)` the outgoing coefficients are recovered
//! by projection, `c_lm = (v, Y_lm)_{S^2} / h_l(kR)`. Along each observation
//! ray `alpha'` the truncated total field
//!
//! ```text
//! p(r) = e^{ik alpha.alpha' r} + sum_{l <= L} c_lm Y_lm(alpha') h_l(r)
//! ```
//!
//! nearly vanishes at the boundary radius `r = f(alpha')`, and that radius
//! does not depend on `(k, alpha)`. Only real `r` is searched: a root "with
//! small imaginary part" shows up as a deep local minimum of `|p|` on the
//! ray. A direction is accepted when every entry has such a minimum and the
//! minima agree across entries; `L` runs through an ascending schedule and
//! the smallest `L` resolving a quorum of directions is kept.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{mrc_solve, BoundaryCondition, CoefficientSet, DirectSolution, SolverConfig, WaveContext};
use crate::error::{MrcError, Result};
use crate::fields::field_on_sphere;
use crate::geometry::{Direction, RealHarmonic, SphereQuadrature, StarSurface};
use crate::specfun::{hankel_out_array, sph_harm_all, ModeIndex, NormalizedLegendre};

/// Scattered-field samples for one incident wave.
#[derive(Debug, Clone, PartialEq)]
pub struct NearFieldEntry {
    pub ctx: WaveContext,
    pub samples: Vec<Complex64>,
    /// Relative noise level the samples carry (0 for clean data).
    pub delta: f64,
}

/// Scattered field observed on the sphere of radius `radius`, all entries
/// sampled on one quadrature.
#[derive(Debug, Clone)]
pub struct NearFieldData {
    radius: f64,
    quadrature: SphereQuadrature,
    entries: Vec<NearFieldEntry>,
}

impl NearFieldData {
    pub fn new(radius: f64, quadrature: SphereQuadrature, entries: Vec<NearFieldEntry>) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MrcError::InvalidInput(format!(
                "measurement radius must be positive, got {radius}"
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.samples.len() != quadrature.len() {
                return Err(MrcError::InvalidInput(format!(
                    "entry {i} has {} samples, quadrature has {} nodes",
                    e.samples.len(),
                    quadrature.len()
                )));
            }
            if !(e.delta >= 0.0) {
                return Err(MrcError::InvalidInput(format!(
                    "entry {i} has negative noise level {}",
                    e.delta
                )));
            }
        }
        Ok(Self {
            radius,
            quadrature,
            entries,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn quadrature(&self) -> &SphereQuadrature {
        &self.quadrature
    }

    pub fn entries(&self) -> &[NearFieldEntry] {
        &self.entries
    }

    /// Discrete `L2(S_R)` norm of a sample vector on this data's quadrature.
    pub fn sphere_norm(&self, samples: &[Complex64]) -> f64 {
        let r2 = self.radius * self.radius;
        self.quadrature
            .weights()
            .iter()
            .zip(samples)
            .map(|(w, v)| w * r2 * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Forward-solves `surface` for every context and samples the scattered
/// field on the sphere of radius `radius`.
pub fn synthesize(
    surface: &StarSurface,
    bc: BoundaryCondition,
    contexts: &[WaveContext],
    radius: f64,
    quadrature: SphereQuadrature,
    solver: &SolverConfig,
) -> Result<(NearFieldData, Vec<DirectSolution>)> {
    if radius <= surface.max_radius() {
        return Err(MrcError::InvalidInput(format!(
            "measurement radius {radius} must exceed the obstacle bound {}",
            surface.max_radius()
        )));
    }
    let mut entries = Vec::with_capacity(contexts.len());
    let mut solutions = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let sol = mrc_solve(surface, ctx, bc, solver)?;
        if !sol.converged {
            warn!(
                "forward solve for k = {} did not reach {:.1e} (residual {:.2e})",
                ctx.k, solver.eps_target, sol.residual
            );
        }
        let samples = field_on_sphere(&sol.coefficients, ctx, radius, &quadrature)?;
        entries.push(NearFieldEntry {
            ctx: *ctx,
            samples,
            delta: 0.0,
        });
        solutions.push(sol);
    }
    Ok((NearFieldData::new(radius, quadrature, entries)?, solutions))
}

/// Adds complex Gaussian noise to every entry, scaled so that the discrete
/// `L2(S_R)` norm of the perturbation is exactly `delta * ||v||`.
pub fn add_noise(data: &NearFieldData, delta: f64, seed: u64) -> Result<NearFieldData> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(MrcError::InvalidInput(format!(
            "noise level must be non-negative, got {delta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for entry in &mut out.entries {
        entry.delta = delta;
        if delta == 0.0 {
            continue;
        }
        let noise: Vec<Complex64> = (0..entry.samples.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let signal = data.sphere_norm(&entry.samples);
        let raw = data.sphere_norm(&noise);
        if signal == 0.0 || raw == 0.0 {
            continue;
        }
        let scale = delta * signal / raw;
        for (s, n) in entry.samples.iter_mut().zip(&noise) {
            *s += scale * n;
        }
    }
    Ok(out)
}

/// Coefficients recovered from one entry, plus modes that were not
/// recoverable because `|h_l(kR)|` fell below the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub coefficients: CoefficientSet,
    pub dropped: Vec<ModeIndex>,
}

/// Modes whose `|h_l(kR)|` is below this fraction of `|h_0(kR)|` are dropped.
pub const MODE_DROP_FLOOR: f64 = 1e-13;

/// `c_lm = (v, Y_lm)_{S^2} / h_l(kR)` for `l <= l_max`.
pub fn extract_coeffs(data: &NearFieldData, entry: &NearFieldEntry, l_max: usize) -> Result<Extraction> {
    let quad = data.quadrature();
    if quad.degree() < 2 * l_max {
        return Err(MrcError::Aliasing {
            degree: quad.degree(),
            ell: l_max,
            needed: 2 * l_max,
        });
    }
    let h = hankel_out_array(l_max, entry.ctx.k, data.radius())?;
    let floor = MODE_DROP_FLOOR * h[0].norm();
    let projected = quad.project(&entry.samples, l_max);
    let mut dropped = Vec::new();
    let coeffs = projected
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mode = ModeIndex::from_flat(i);
            let hl = h[mode.ell];
            if hl.norm() < floor {
                dropped.push(mode);
                Complex64::default()
            } else {
                p / hl
            }
        })
        .collect();
    if !dropped.is_empty() {
        warn!("dropped {} modes with |h_l(kR)| below the floor", dropped.len());
    }
    Ok(Extraction {
        coefficients: CoefficientSet::new(l_max, coeffs)?,
        dropped,
    })
}

/// `p(r)` along one observation ray, with the angular factors folded in:
/// `p(r) = e^{ik mu r} + sum_l s_l h_l(r)`, `s_l = sum_m c_lm Y_lm(alpha')`.
#[derive(Debug, Clone)]
pub struct RayFunction {
    k: f64,
    mu: f64,
    radial: Vec<Complex64>,
}

impl RayFunction {
    pub fn new(coeffs: &CoefficientSet, ctx: &WaveContext, dir_out: &Direction) -> Self {
        let y = sph_harm_all(coeffs.l_max(), dir_out);
        let mut radial = vec![Complex64::default(); coeffs.l_max() + 1];
        for (i, c) in coeffs.as_slice().iter().enumerate() {
            radial[ModeIndex::from_flat(i).ell] += c * y[i];
        }
        Self {
            k: ctx.k,
            mu: ctx.alpha.unit().dot(&dir_out.unit()),
            radial,
        }
    }

    pub fn eval(&self, r: f64) -> Result<Complex64> {
        let h = hankel_out_array(self.radial.len() - 1, self.k, r)?;
        let scattered: Complex64 = self.radial.iter().zip(&h).map(|(s, h)| s * h).sum();
        Ok(Complex64::from_polar(1.0, self.k * self.mu * r) + scattered)
    }
}

/// Total field of the truncated expansion at `r * dir_out`.
pub fn ray_function(coeffs: &CoefficientSet, ctx: &WaveContext, dir_out: &Direction, r: f64) -> Result<Complex64> {
    RayFunction::new(coeffs, ctx, dir_out).eval(r)
}

/// Root candidate on one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRoot {
    pub dir_out: Direction,
    pub r: f64,
    /// `|p(r)|`
    pub residual: f64,
    /// `|p(r)| / max |p|` over the scan grid; small means the minimum is
    /// close to a true zero.
    pub imag_score: f64,
    /// Relative spread of the root across data entries (0 for one entry).
    pub spread: f64,
}

/// Golden-section search for a minimum of `f` on `[a, b]`, stopping when
/// the bracket shrinks below `rel_tol * |x|`. Returns `(x_min, f_min)`.
pub fn golden_section_minimize(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (b - a).abs() <= rel_tol * (0.5 * (a + b)).abs() {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Scans `|p|` on a uniform grid over `bracket`, refines every interior
/// local minimum by golden-section search and keeps those whose residual is
/// at most `residual_threshold`, sorted by residual.
pub fn find_ray_root(
    coeffs: &CoefficientSet,
    ctx: &WaveContext,
    dir_out: &Direction,
    bracket: (f64, f64),
    grid_n: usize,
    residual_threshold: f64,
) -> Result<Vec<RayRoot>> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(MrcError::InvalidInput(format!("invalid bracket [{lo}, {hi}]")));
    }
    if grid_n < 16 {
        return Err(MrcError::InvalidInput(format!(
            "grid_n must be at least 16, got {grid_n}"
        )));
    }
    let ray = RayFunction::new(coeffs, ctx, dir_out);
    let step = (hi - lo) / (grid_n - 1) as f64;
    let grid: Vec<f64> = (0..grid_n).map(|i| lo + step * i as f64).collect();
    let values = grid
        .iter()
        .map(|&r| ray.eval(r).map(|p| p.norm()))
        .collect::<Result<Vec<f64>>>()?;
    let peak = values.iter().cloned().fold(0.0, f64::max);

    let mut roots = Vec::new();
    for i in 1..grid_n - 1 {
        if values[i] <= values[i - 1] && values[i] < values[i + 1] {
            let (r, residual) = golden_section_minimize(
                |r| ray.eval(r).map(|p| p.norm()).unwrap_or(f64::INFINITY),
                grid[i - 1],
                grid[i + 1],
                1e-10,
            );
            if residual <= residual_threshold {
                roots.push(RayRoot {
                    dir_out: *dir_out,
                    r,
                    residual,
                    imag_score: if peak > 0.0 { residual / peak } else { 0.0 },
                    spread: 0.0,
                });
            }
        }
    }
    roots.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    Ok(roots)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Truncation degrees tried in ascending order.
    pub l_schedule: Vec<usize>,
    /// Radial search interval; defaults to `[0.2 R, 0.9 R]`.
    pub bracket: Option<(f64, f64)>,
    pub grid_n: usize,
    /// Maximum relative spread of the roots across `(k, alpha)` entries.
    pub stability_tol: f64,
    /// Largest `|p|` accepted at a root, before the floor adjustment below.
    pub residual_threshold: f64,
    /// The accepted `|p|` is raised to `floor_factor` times the smallest
    /// residual that a quorum of directions attains at any degree of the
    /// schedule, so noisy or slowly converging data are not held to a level
    /// they cannot reach.
    pub floor_factor: f64,
    /// Fraction of directions that must resolve to stop escalating.
    pub quorum: f64,
    /// Degree of the harmonic model fitted to the resolved radii.
    pub smoothing_degree: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            l_schedule: vec![3, 4, 5, 6, 8, 10],
            bracket: None,
            grid_n: 200,
            stability_tol: 0.05,
            residual_threshold: 1e-3,
            floor_factor: 2.0,
            quorum: 0.95,
            smoothing_degree: 4,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_schedule.is_empty() {
            return Err(MrcError::InvalidInput("l_schedule is empty".into()));
        }
        if self.grid_n < 16 {
            return Err(MrcError::InvalidInput(format!(
                "grid_n must be at least 16, got {}",
                self.grid_n
            )));
        }
        if !(self.stability_tol > 0.0) || !(self.residual_threshold > 0.0) || !(self.floor_factor >= 1.0) {
            return Err(MrcError::InvalidInput(
                "tolerances must be positive and floor_factor at least 1".into(),
            ));
        }
        if !(self.quorum > 0.0 && self.quorum <= 1.0) {
            return Err(MrcError::InvalidInput(format!(
                "quorum must lie in (0, 1], got {}",
                self.quorum
            )));
        }
        if let Some((lo, hi)) = self.bracket {
            if !(lo > 0.0 && hi > lo) {
                return Err(MrcError::InvalidInput(format!("invalid bracket [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn bracket_for(&self, radius: f64) -> (f64, f64) {
        self.bracket.unwrap_or((0.2 * radius, 0.9 * radius))
    }
}

/// Real harmonic expansion `r(alpha') = sum a_lm S_lm(alpha')` in the same
/// real basis as the perturbed-sphere surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicModel {
    pub degree: usize,
    pub coefficients: Vec<(usize, i32, f64)>,
}

impl HarmonicModel {
    pub fn eval(&self, dir: &Direction) -> f64 {
        let table = NormalizedLegendre::new(self.degree, dir.theta());
        self.coefficients
            .iter()
            .map(|&(ell, m, a)| a * RealHarmonic::eval(&table, ell, m, dir.phi()).value)
            .sum()
    }

    /// Least-squares fit of degree `<= max_degree`, lowered until the
    /// system has at least twice as many samples as unknowns.
    pub fn fit(dirs: &[Direction], radii: &[f64], max_degree: usize) -> Option<Self> {
        if dirs.is_empty() {
            return None;
        }
        let mut degree = max_degree;
        while degree > 0 && dirs.len() < 2 * ModeIndex::count(degree) {
            degree -= 1;
        }
        let modes: Vec<ModeIndex> = ModeIndex::iter(degree).collect();
        let a = DMatrix::from_fn(dirs.len(), modes.len(), |i, j| {
            let table = NormalizedLegendre::new(degree, dirs[i].theta());
            RealHarmonic::eval(&table, modes[j].ell, modes[j].m, dirs[i].phi()).value
        });
        let b = DVector::from_column_slice(radii);
        let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
        Some(Self {
            degree,
            coefficients: modes.iter().zip(x.iter()).map(|(m, v)| (m.ell, m.m, *v)).collect(),
        })
    }
}

/// Result for one observation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEstimate {
    pub root: RayRoot,
    pub resolved: bool,
    /// Root per data entry (`None` where an entry had no candidate).
    pub per_entry: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedSurface {
    pub estimates: Vec<DirectionEstimate>,
    pub model: Option<HarmonicModel>,
    /// Degree at which escalation stopped.
    pub l_selected: usize,
    pub resolved_fraction: f64,
    /// Whether the quorum was reached.
    pub converged: bool,
    /// `(L, resolved fraction)` for every degree tried.
    pub history: Vec<(usize, f64)>,
    pub bracket: (f64, f64),
    /// Residual threshold actually applied.
    pub threshold: f64,
}

impl ReconstructedSurface {
    pub fn radii(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.root.r).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Relative spread `(max - min) / median`.
fn relative_spread(radii: &[f64]) -> f64 {
    let mut v = radii.to_vec();
    let mid = median(&mut v);
    (v[v.len() - 1] - v[0]) / mid
}

/// Picks the cross-entry combination of candidates with the smallest spread,
/// anchored on the first entry's candidates.
fn select_stable(dir: &Direction, candidates: &[Vec<RayRoot>], stability_tol: f64) -> DirectionEstimate {
    let n = candidates.len();
    if candidates.iter().any(|c| c.is_empty()) {
        let per_entry = candidates.iter().map(|c| c.first().map(|r| r.r)).collect();
        let fallback = candidates
            .iter()
            .flatten()
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
            .copied()
            .unwrap_or(RayRoot {
                dir_out: *dir,
                r: f64::NAN,
                residual: f64::INFINITY,
                imag_score: f64::INFINITY,
                spread: f64::INFINITY,
            });
        return DirectionEstimate {
            root: RayRoot {
                spread: f64::INFINITY,
                ..fallback
            },
            resolved: false,
            per_entry,
        };
    }
    if n == 1 {
        let best = candidates[0][0];
        return DirectionEstimate {
            root: best,
            resolved: true,
            per_entry: vec![Some(best.r)],
        };
    }

    let mut best: Option<(f64, f64, Vec<RayRoot>)> = None;
    for anchor in &candidates[0] {
        let mut chosen = vec![*anchor];
        for entry in &candidates[1..] {
            let nearest = entry
                .iter()
                .min_by(|a, b| (a.r - anchor.r).abs().total_cmp(&(b.r - anchor.r).abs()))
                .copied()
                .expect("non-empty");
            chosen.push(nearest);
        }
        let radii: Vec<f64> = chosen.iter().map(|c| c.r).collect();
        let spread = relative_spread(&radii);
        let total_residual: f64 = chosen.iter().map(|c| c.residual).sum();
        let better = match &best {
            None => true,
            Some((s, res, _)) => spread < *s || (spread == *s && total_residual < *res),
        };
        if better {
            best = Some((spread, total_residual, chosen));
        }
    }
    let (spread, _, chosen) = best.expect("anchor candidates exist");
    let mut radii: Vec<f64> = chosen.iter().map(|c| c.r).collect();
    let r = median(&mut radii);
    let residual = chosen.iter().map(|c| c.residual).fold(0.0, f64::max);
    let imag_score = chosen.iter().map(|c| c.imag_score).fold(0.0, f64::max);
    DirectionEstimate {
        root: RayRoot {
            dir_out: *dir,
            r,
            residual,
            imag_score,
            spread,
        },
        resolved: spread <= stability_tol,
        per_entry: chosen.iter().map(|c| Some(c.r)).collect(),
    }
}

/// Root candidates at every local minimum, `[direction][entry]`, at one degree.
pub fn candidates_at_degree(
    coefficients: &[CoefficientSet],
    contexts: &[WaveContext],
    dirs: &[Direction],
    l: usize,
    bracket: (f64, f64),
    grid_n: usize,
) -> Result<Vec<Vec<Vec<RayRoot>>>> {
    let truncated: Vec<CoefficientSet> = coefficients.iter().map(|c| c.truncated(l)).collect();
    dirs.par_iter()
        .map(|dir| {
            truncated
                .iter()
                .zip(contexts)
                .map(|(c, ctx)| find_ray_root(c, ctx, dir, bracket, grid_n, f64::INFINITY))
                .collect()
        })
        .collect()
}

/// Residual that a fraction `quorum` of directions attains with the best
/// candidate of every entry.
fn attainable_residual(candidates: &[Vec<Vec<RayRoot>>], quorum: f64) -> f64 {
    let mut per_dir: Vec<f64> = candidates
        .iter()
        .map(|entries| {
            entries
                .iter()
                .map(|c| c.first().map_or(f64::INFINITY, |r| r.residual))
                .fold(0.0, f64::max)
        })
        .collect();
    per_dir.sort_by(|a, b| a.total_cmp(b));
    let idx = ((quorum * per_dir.len() as f64).ceil() as usize).clamp(1, per_dir.len()) - 1;
    per_dir[idx]
}

fn select_all(
    dirs: &[Direction],
    candidates: &[Vec<Vec<RayRoot>>],
    threshold: f64,
    stability_tol: f64,
) -> Vec<DirectionEstimate> {
    dirs.iter()
        .zip(candidates)
        .map(|(dir, entries)| {
            let kept: Vec<Vec<RayRoot>> = entries
                .iter()
                .map(|c| c.iter().filter(|r| r.residual <= threshold).copied().collect())
                .collect();
            select_stable(dir, &kept, stability_tol)
        })
        .collect()
}

/// Full reconstruction over `dirs` with smallest-`L` stopping.
///
/// Every degree of the schedule is scanned first to find the attainable
/// residual level, which fixes the threshold (see
/// [`ReconstructionConfig::floor_factor`]); then the smallest degree at
/// which a quorum of directions is resolved is selected. With a single data
/// entry there is no cross-entry stability check and any candidate passing
/// the threshold is accepted.
pub fn stable_reconstruct(
    data: &NearFieldData,
    dirs: &[Direction],
    config: &ReconstructionConfig,
) -> Result<ReconstructedSurface> {
    config.validate()?;
    if data.entries().is_empty() {
        return Err(MrcError::InvalidInput("near-field data has no entries".into()));
    }
    if dirs.is_empty() {
        return Err(MrcError::InvalidInput("no observation directions".into()));
    }
    let mut schedule = config.l_schedule.clone();
    schedule.sort_unstable();
    schedule.dedup();
    let l_top = *schedule.last().expect("validated non-empty");
    let bracket = config.bracket_for(data.radius());

    let coefficients = data
        .entries()
        .iter()
        .map(|e| extract_coeffs(data, e, l_top).map(|x| x.coefficients))
        .collect::<Result<Vec<_>>>()?;
    let contexts: Vec<WaveContext> = data.entries().iter().map(|e| e.ctx).collect();

    let per_degree = schedule
        .iter()
        .map(|&l| candidates_at_degree(&coefficients, &contexts, dirs, l, bracket, config.grid_n))
        .collect::<Result<Vec<_>>>()?;
    let floor = per_degree
        .iter()
        .map(|c| attainable_residual(c, config.quorum))
        .fold(f64::INFINITY, f64::min);
    let threshold = config.residual_threshold.max(config.floor_factor * floor);
    debug!("attainable residual {floor:.3e}, threshold {threshold:.3e}");

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<DirectionEstimate>)> = None;
    let mut converged = false;
    for (&l, candidates) in schedule.iter().zip(&per_degree) {
        let estimates = select_all(dirs, candidates, threshold, config.stability_tol);
        let fraction = estimates.iter().filter(|e| e.resolved).count() as f64 / dirs.len() as f64;
        debug!("L = {l}: {:.1}% of directions resolved", 100.0 * fraction);
        history.push((l, fraction));
        let reached = fraction >= config.quorum;
        if reached || best.as_ref().is_none_or(|b| fraction > b.1) {
            best = Some((l, fraction, estimates));
        }
        if reached {
            converged = true;
            break;
        }
    }
    let (l_selected, resolved_fraction, mut estimates) = best.expect("schedule is non-empty");
    if !converged {
        warn!(
            "no degree in the schedule resolved {:.0}% of directions; best L = {l_selected} ({:.1}%)",
            100.0 * config.quorum,
            100.0 * resolved_fraction
        );
    }

    let (resolved_dirs, resolved_r): (Vec<Direction>, Vec<f64>) = estimates
        .iter()
        .filter(|e| e.resolved)
        .map(|e| (e.root.dir_out, e.root.r))
        .unzip();
    let model = HarmonicModel::fit(&resolved_dirs, &resolved_r, config.smoothing_degree);
    for e in estimates.iter_mut().filter(|e| !e.resolved) {
        let fill = match &model {
            Some(m) => m.eval(&e.root.dir_out),
            None if e.root.r.is_finite() => e.root.r,
            None => 0.5 * (bracket.0 + bracket.1),
        };
        e.root.r = fill.clamp(bracket.0, bracket.1);
    }
    info!(
        "reconstruction: L = {l_selected}, {:.1}% resolved, converged = {converged}",
        100.0 * resolved_fraction
    );
    Ok(ReconstructedSurface {
        estimates,
        model,
        l_selected,
        resolved_fraction,
        converged,
        history,
        bracket,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sphere_scattering_coeffs;
    use std::f64::consts::PI;

    fn sphere_data(radius: f64, contexts: &[WaveContext], l_max: usize) -> NearFieldData {
        let quad = SphereQuadrature::with_degree(30);
        let entries = contexts
            .iter()
            .map(|ctx| {
                let c = sphere_scattering_coeffs(1.0, ctx, l_max, BoundaryCondition::Dirichlet).unwrap();
                NearFieldEntry {
                    ctx: *ctx,
                    samples: field_on_sphere(&c, ctx, radius, &quad).unwrap(),
                    delta: 0.0,
                }
            })
            .collect();
        NearFieldData::new(radius, quad, entries).unwrap()
    }

    #[test]
    fn extraction_round_trip() {
        let ctx = WaveContext::new(1.0, Direction::new(0.3, 0.2)).unwrap();
        let data = sphere_data(3.0, &[ctx], 10);
        let exact = sphere_scattering_coeffs(1.0, &ctx, 10, BoundaryCondition::Dirichlet).unwrap();
        let got = extract_coeffs(&data, &data.entries()[0], 10).unwrap();
        assert!(got.dropped.is_empty());
        for (a, b) in got.coefficients.as_slice().iter().zip(exact.as_slice()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_samples_extract_to_zero() {
        let quad = SphereQuadrature::with_degree(12);
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let entry = NearFieldEntry {
            ctx,
            samples: vec![Complex64::default(); quad.len()],
            delta: 0.0,
        };
        let data = NearFieldData::new(2.0, quad, vec![entry.clone()]).unwrap();
        let x = extract_coeffs(&data, &entry, 5).unwrap();
        assert!(x.coefficients.as_slice().iter().all(|c| *c == Complex64::default()));
        assert!(matches!(
            extract_coeffs(&data, &entry, 7),
            Err(MrcError::Aliasing { .. })
        ));
    }

    #[test]
    fn noise_norm_is_exact() {
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let data = sphere_data(3.0, &[ctx], 10);
        let clean = &data.entries()[0].samples;
        let a = add_noise(&data, 0.01, 1).unwrap();
        let b = add_noise(&data, 0.01, 2).unwrap();
        for noisy in [&a, &b] {
            let diff: Vec<Complex64> = noisy.entries()[0]
                .samples
                .iter()
                .zip(clean)
                .map(|(x, y)| x - y)
                .collect();
            let ratio = data.sphere_norm(&diff) / data.sphere_norm(clean);
            assert!((ratio - 0.01).abs() < 1e-12 * 0.01);
        }
        assert_ne!(a.entries()[0].samples, b.entries()[0].samples);
        let again = add_noise(&data, 0.01, 1).unwrap();
        assert_eq!(a.entries()[0].samples, again.entries()[0].samples);
        let same = add_noise(&data, 0.0, 9).unwrap();
        assert_eq!(same.entries()[0].samples, *clean);
    }

    #[test]
    fn ray_function_vanishes_on_sphere() {
        let ctx = WaveContext::new(1.0, Direction::new(0.9, 0.4)).unwrap();
        let c = sphere_scattering_coeffs(1.0, &ctx, 25, BoundaryCondition::Dirichlet).unwrap();
        for d in Direction::fibonacci(30) {
            assert!(ray_function(&c, &ctx, &d, 1.0).unwrap().norm() < 1e-8);
        }
        assert!(ray_function(&c, &ctx, &Direction::z(), 0.0).is_err());
        let far = ray_function(&c, &ctx, &Direction::z(), 1e7).unwrap();
        assert!((far.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constructed_monopole_root() {
        let ctx = WaveContext::new(1.3, Direction::new(0.5, 0.5)).unwrap();
        let dir = Direction::new(1.2, 2.0);
        let r0 = 0.77;
        let mu = ctx.alpha.unit().dot(&dir.unit());
        let y00 = 1.0 / (4.0 * PI).sqrt();
        let c00 = -Complex64::from_polar(r0, ctx.k * mu * r0 - ctx.k * r0) / y00;
        let coeffs = CoefficientSet::new(0, vec![c00]).unwrap();
        assert!(ray_function(&coeffs, &ctx, &dir, r0).unwrap().norm() < 1e-14);
        let roots = find_ray_root(&coeffs, &ctx, &dir, (0.3, 1.5), 64, 0.1).unwrap();
        assert!((roots[0].r - r0).abs() < 1e-10, "{}", roots[0].r);
    }

    #[test]
    fn sphere_root() {
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let c = sphere_scattering_coeffs(1.0, &ctx, 20, BoundaryCondition::Dirichlet).unwrap();
        for d in Direction::fibonacci(12) {
            let roots = find_ray_root(&c, &ctx, &d, (0.3, 2.5), 200, 1e-3).unwrap();
            assert!(!roots.is_empty());
            assert!((roots[0].r - 1.0).abs() < 1e-6, "{}", roots[0].r);
        }
    }

    #[test]
    fn zero_coefficients_have_no_root() {
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let roots = find_ray_root(&CoefficientSet::zeros(4), &ctx, &Direction::x(), (0.3, 2.5), 100, 0.5).unwrap();
        assert!(roots.is_empty());
        assert!(find_ray_root(&CoefficientSet::zeros(4), &ctx, &Direction::x(), (0.3, 2.5), 8, 0.5).is_err());
        assert!(find_ray_root(&CoefficientSet::zeros(4), &ctx, &Direction::x(), (2.5, 0.3), 100, 0.5).is_err());
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, fx) = golden_section_minimize(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
        let (x, _) = golden_section_minimize(|x| (x - 2.0).abs(), 1.0, 4.0, 1e-12);
        assert!((x - 2.0).abs() < 1e-11);
    }

    #[test]
    fn single_entry_uses_residual_only() {
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let data = sphere_data(3.0, &[ctx], 12);
        let dirs = Direction::fibonacci(10);
        let cfg = ReconstructionConfig {
            stability_tol: 1e-12,
            residual_threshold: 1e-2,
            ..Default::default()
        };
        let rec = stable_reconstruct(&data, &dirs, &cfg).unwrap();
        assert!(rec.converged);
        for e in &rec.estimates {
            assert!(e.resolved);
            assert_eq!(e.root.spread, 0.0);
            assert!((e.root.r - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn stable_root_is_selected() {
        let contexts = [
            WaveContext::new(1.0, Direction::z()).unwrap(),
            WaveContext::new(1.5, Direction::x()).unwrap(),
        ];
        let data = sphere_data(3.0, &contexts, 20);
        let dirs = Direction::fibonacci(16);
        let cfg = ReconstructionConfig {
            l_schedule: vec![10],
            residual_threshold: 0.5,
            ..Default::default()
        };
        let rec = stable_reconstruct(&data, &dirs, &cfg).unwrap();
        for e in &rec.estimates {
            assert!(e.resolved);
            assert!(e.root.spread < 1e-4, "{}", e.root.spread);
            assert!((e.root.r - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn harmonic_model_recovers_surface() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2), (1, 1, 0.05)]).unwrap();
        let dirs = Direction::fibonacci(80);
        let r: Vec<f64> = dirs.iter().map(|d| s.radius(d)).collect();
        let m = HarmonicModel::fit(&dirs, &r, 4).unwrap();
        for d in Direction::fibonacci(17) {
            assert!((m.eval(&d) - s.radius(&d)).abs() < 1e-10);
        }
    }

    #[test]
    fn data_validation() {
        let quad = SphereQuadrature::with_degree(4);
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let short = NearFieldEntry {
            ctx,
            samples: vec![Complex64::default(); 3],
            delta: 0.0,
        };
        assert!(NearFieldData::new(2.0, quad.clone(), vec![short]).is_err());
        assert!(NearFieldData::new(-1.0, quad, vec![]).is_err());
    }
}

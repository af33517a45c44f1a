//! Direct scattering by boundary-residual minimization.
//!
//! For a truncation degree `L` the scattered field is sought as
//! `v_L = sum_{l <= L} c_lm Y_lm(x/|x|) h_l(|x|)` and the coefficients
//! minimize `|| u0 + v_L ||_{L2(S)}` (soft obstacle) or
//! `|| d(u0 + v_L)/dN ||_{L2(S)}` (hard obstacle). `L` is escalated in unit
//! steps and the smallest `L` whose relative residual meets the target wins.

use faer::Mat;
use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MrcError, Result};
use crate::geometry::{outward_normal, surface_element, Direction, SphereQuadrature, StarSurface};
use crate::specfun::{hankel_out_with_derivative, sph_harm_all, sph_harm_with_gradient, ModeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Soft obstacle, `u = 0` on the boundary.
    Dirichlet,
    /// Hard obstacle, `du/dN = 0` on the boundary.
    Neumann,
}

/// Wavenumber and incidence direction of the plane wave `u0 = e^{ik alpha.x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    pub k: f64,
    pub alpha: Direction,
}

impl WaveContext {
    pub fn new(k: f64, alpha: Direction) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(MrcError::InvalidInput(format!("wavenumber must be positive, got {k}")));
        }
        Ok(Self { k, alpha })
    }

    pub fn incident(&self, x: &nalgebra::Vector3<f64>) -> Complex64 {
        Complex64::from_polar(1.0, self.k * self.alpha.unit().dot(x))
    }
}

/// Expansion coefficients `c_lm` for `l <= L`, flat `(l, m)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    l_max: usize,
    coeffs: Vec<Complex64>,
}

impl CoefficientSet {
    pub fn new(l_max: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != ModeIndex::count(l_max) {
            return Err(MrcError::InvalidInput(format!(
                "degree {l_max} needs {} coefficients, got {}",
                ModeIndex::count(l_max),
                coeffs.len()
            )));
        }
        Ok(Self { l_max, coeffs })
    }

    pub fn zeros(l_max: usize) -> Self {
        Self {
            l_max,
            coeffs: vec![Complex64::default(); ModeIndex::count(l_max)],
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of `mode`; zero beyond the truncation degree.
    pub fn get(&self, mode: ModeIndex) -> Complex64 {
        self.coeffs.get(mode.flat()).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModeIndex, Complex64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (ModeIndex::from_flat(i), *c))
    }

    /// Restriction (or zero padding) to degree `l_max`.
    pub fn truncated(&self, l_max: usize) -> Self {
        let mut coeffs = vec![Complex64::default(); ModeIndex::count(l_max)];
        let n = coeffs.len().min(self.coeffs.len());
        coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        Self { l_max, coeffs }
    }

    /// `sum |c_lm|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

impl std::ops::Add for &CoefficientSet {
    type Output = CoefficientSet;

    fn add(self, rhs: Self) -> CoefficientSet {
        let l_max = self.l_max.max(rhs.l_max);
        let mut out = self.truncated(l_max);
        for (o, c) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *o += c;
        }
        out
    }
}

/// Solver knobs for [`mrc_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target residual relative to the norm of the incident boundary data.
    pub eps_target: f64,
    pub l_start: usize,
    pub l_max: usize,
    /// Quadrature degree per unit of `l_max`.
    pub quad_degree_factor: f64,
    /// Singular values below `svd_cutoff * sigma_max` are discarded.
    pub svd_cutoff: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_target: 1e-6,
            l_start: 0,
            l_max: 20,
            quad_degree_factor: 2.5,
            svd_cutoff: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_target > 0.0) || !self.eps_target.is_finite() {
            return Err(MrcError::InvalidInput(format!(
                "eps_target must be positive, got {}",
                self.eps_target
            )));
        }
        if self.l_start > self.l_max {
            return Err(MrcError::InvalidInput(format!(
                "l_start ({}) exceeds l_max ({})",
                self.l_start, self.l_max
            )));
        }
        if !(self.quad_degree_factor >= 2.0) || !self.quad_degree_factor.is_finite() {
            return Err(MrcError::InvalidInput(format!(
                "quad_degree_factor must be at least 2, got {}",
                self.quad_degree_factor
            )));
        }
        if !(self.svd_cutoff > 0.0 && self.svd_cutoff < 1.0) {
            return Err(MrcError::InvalidInput(format!(
                "svd_cutoff must lie in (0, 1), got {}",
                self.svd_cutoff
            )));
        }
        Ok(())
    }

    /// Quadrature shared by every degree of one escalation run.
    pub fn quadrature(&self) -> SphereQuadrature {
        let degree = ((self.quad_degree_factor * self.l_max as f64).ceil() as usize)
            .max(2 * self.l_max)
            .max(4);
        SphereQuadrature::with_degree(degree)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `sigma_max / sigma_min` over the retained singular values of the
    /// column-normalized system.
    pub condition_estimate: f64,
    pub rank: usize,
    /// `(L, relative residual)` for every degree tried, ascending in `L`.
    pub history: Vec<(usize, f64)>,
    pub quadrature: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectSolution {
    pub coefficients: CoefficientSet,
    /// Boundary residual relative to the incident boundary data, in `L2(S)`.
    pub residual: f64,
    pub boundary_condition: BoundaryCondition,
    pub converged: bool,
    pub eps_target: f64,
    pub context: WaveContext,
    pub diagnostics: Diagnostics,
}

/// Square roots of `quadrature weight * dS/dalpha` at each node; they turn
/// Euclidean norms into discrete `L2(S)` norms.
pub fn boundary_weights(surface: &StarSurface, quad: &SphereQuadrature) -> Result<Vec<f64>> {
    quad.nodes()
        .iter()
        .zip(quad.weights())
        .map(|(d, w)| Ok((w * surface_element(surface, d)?).sqrt()))
        .collect()
}

/// Incident field (Dirichlet) or its normal derivative (Neumann) at the
/// boundary points over the quadrature nodes. Unweighted.
pub fn incident_trace(
    surface: &StarSurface,
    quad: &SphereQuadrature,
    ctx: &WaveContext,
    bc: BoundaryCondition,
) -> Vec<Complex64> {
    quad.nodes()
        .iter()
        .map(|d| {
            let x = surface.point(d);
            let u0 = ctx.incident(&x);
            match bc {
                BoundaryCondition::Dirichlet => u0,
                BoundaryCondition::Neumann => {
                    let n = outward_normal(surface, d);
                    Complex64::new(0.0, ctx.k * ctx.alpha.unit().dot(&n)) * u0
                }
            }
        })
        .collect()
}

/// One row of the unweighted collocation matrix at the boundary point over `dir`.
pub(crate) fn basis_row(
    surface: &StarSurface,
    dir: &Direction,
    k: f64,
    l_max: usize,
    bc: BoundaryCondition,
) -> Result<Vec<Complex64>> {
    let s = surface.sample(dir);
    let r = s.f;
    let (h, dh) = hankel_out_with_derivative(l_max, k, r)?;
    let n = ModeIndex::count(l_max);
    let mut row = Vec::with_capacity(n);
    match bc {
        BoundaryCondition::Dirichlet => {
            let y = sph_harm_all(l_max, dir);
            for (i, yi) in y.iter().enumerate() {
                row.push(yi * h[ModeIndex::from_flat(i).ell]);
            }
        }
        BoundaryCondition::Neumann => {
            let g = sph_harm_with_gradient(l_max, dir);
            let normal = outward_normal(surface, dir);
            let n_r = normal.dot(&dir.unit());
            let n_t = normal.dot(&dir.theta_hat());
            let n_p = normal.dot(&dir.phi_hat());
            for i in 0..n {
                let ell = ModeIndex::from_flat(i).ell;
                let radial = n_r * dh[ell] * g.values[i];
                let tangential = h[ell] / r * (n_t * g.d_theta[i] + n_p * g.d_phi_over_sin[i]);
                row.push(radial + tangential);
            }
        }
    }
    Ok(row)
}

/// Weighted collocation matrix, `n_nodes x (L+1)^2`; column `(l, m)` holds
/// `psi_lm` (or `dpsi_lm/dN`) at the boundary points times
/// `sqrt(weight * dS/dalpha)`.
pub fn assemble_basis_matrix(
    surface: &StarSurface,
    quad: &SphereQuadrature,
    k: f64,
    l_max: usize,
    bc: BoundaryCondition,
) -> Result<DMatrix<Complex64>> {
    if quad.degree() < 2 * l_max {
        return Err(MrcError::Aliasing {
            degree: quad.degree(),
            ell: l_max,
            needed: 2 * l_max,
        });
    }
    let weights = boundary_weights(surface, quad)?;
    let rows: Vec<Vec<Complex64>> = quad
        .nodes()
        .par_iter()
        .zip(weights.par_iter())
        .map(|(d, w)| {
            let mut row = basis_row(surface, d, k, l_max, bc)?;
            row.iter_mut().for_each(|v| *v *= *w);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let n = ModeIndex::count(l_max);
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<Complex64>,
    /// `|| A c + b ||`, recomputed from the original matrix.
    pub residual: f64,
    pub rank: usize,
    pub condition_estimate: f64,
}

/// Column-normalized system `A D^{-1} = Q R` with `Q^H b` precomputed.
///
/// Because the columns are nested by degree, the leading `n` columns of
/// `A` factor as `Q[:, :s] R[:s, :n]` with `s = min(rows, n)`, so one
/// factorization serves every truncation degree.
struct FactoredSystem {
    scales: Vec<f64>,
    r: Mat<Complex64>,
    qhb: Vec<Complex64>,
    /// `|| b - Q Q^H b ||`, the part of `b` outside the full column space.
    tail: f64,
}

impl FactoredSystem {
    fn new(matrix: &DMatrix<Complex64>, rhs: &[Complex64]) -> Self {
        let (rows, cols) = matrix.shape();
        let scales: Vec<f64> = matrix
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 && n.is_finite() {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let scaled = Mat::<Complex64>::from_fn(rows, cols, |i, j| matrix[(i, j)] / scales[j]);
        let qr = scaled.qr();
        let q = qr.compute_thin_Q();
        let s = rows.min(cols);
        let qhb: Vec<Complex64> = (0..s)
            .map(|j| (0..rows).map(|i| q[(i, j)].conj() * rhs[i]).sum())
            .collect();
        let tail = (0..rows)
            .map(|i| {
                let proj: Complex64 = (0..s).map(|j| q[(i, j)] * qhb[j]).sum();
                (rhs[i] - proj).norm_sqr()
            })
            .sum::<f64>()
            .sqrt();
        Self {
            scales,
            r: qr.thin_R().to_owned(),
            qhb,
            tail,
        }
    }

    /// Least-squares residual `min_c || A_n c + b ||` over the leading `n`
    /// columns, without truncation.
    fn prefix_residual(&self, n: usize) -> f64 {
        let s = n.min(self.qhb.len());
        (self.tail * self.tail + self.qhb[s..].iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Truncated-SVD solution over the leading `n` columns, in unscaled
    /// variables, with rank and condition estimate.
    fn solve_prefix(&self, n: usize, cutoff: f64) -> Result<(Vec<Complex64>, usize, f64)> {
        let s = n.min(self.qhb.len());
        let block = self.r.as_ref().get(..s, ..n);
        let svd = block
            .thin_svd()
            .map_err(|e| MrcError::Numerical(format!("SVD did not converge: {e:?}")))?;
        let (u, v, sigma) = (svd.U(), svd.V(), svd.S().column_vector());
        let sigma_max = (0..sigma.nrows()).map(|i| sigma[i].re).fold(0.0, f64::max);
        let mut rank = 0;
        let mut sigma_min_kept = sigma_max;
        let mut solution = vec![Complex64::default(); n];
        for i in 0..sigma.nrows() {
            let si = sigma[i].re;
            if !(sigma_max > 0.0 && si >= cutoff * sigma_max) {
                continue;
            }
            rank += 1;
            sigma_min_kept = sigma_min_kept.min(si);
            let ub: Complex64 = (0..s).map(|p| u[(p, i)].conj() * self.qhb[p]).sum();
            let w = -ub / si;
            for (j, x) in solution.iter_mut().enumerate() {
                *x += v[(j, i)] * w;
            }
        }
        for (x, sc) in solution.iter_mut().zip(&self.scales) {
            *x /= *sc;
        }
        let cond = if rank > 0 { sigma_max / sigma_min_kept } else { 1.0 };
        Ok((solution, rank, cond))
    }
}

fn check_system(matrix: &DMatrix<Complex64>, rhs: &[Complex64], cutoff: f64) -> Result<()> {
    let (rows, cols) = matrix.shape();
    if rows == 0 || cols == 0 {
        return Err(MrcError::EmptySystem);
    }
    if rhs.len() != rows {
        return Err(MrcError::InvalidInput(format!(
            "rhs has {} entries, matrix has {rows} rows",
            rhs.len()
        )));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(MrcError::InvalidInput(format!(
            "svd cutoff must lie in (0, 1), got {cutoff}"
        )));
    }
    Ok(())
}

/// Minimizes `|| A c + b ||` by truncated SVD of the column-normalized
/// matrix; singular values below `cutoff * sigma_max` are dropped, which
/// also selects the minimum-norm solution on rank deficiency. The SVD is
/// taken of the triangular factor of a Householder QR, which has the same
/// singular values and right singular vectors.
pub fn solve_least_squares(
    matrix: &DMatrix<Complex64>,
    rhs: &[Complex64],
    cutoff: f64,
) -> Result<LeastSquaresSolution> {
    check_system(matrix, rhs, cutoff)?;
    let system = FactoredSystem::new(matrix, rhs);
    let (coefficients, rank, condition_estimate) = system.solve_prefix(matrix.ncols(), cutoff)?;
    let residual = residual_norm(matrix, &coefficients, rhs);
    Ok(LeastSquaresSolution {
        coefficients,
        residual,
        rank,
        condition_estimate,
    })
}

fn residual_norm(matrix: &DMatrix<Complex64>, c: &[Complex64], rhs: &[Complex64]) -> f64 {
    let c = DVector::from_column_slice(c);
    let r = matrix * c + DVector::from_column_slice(rhs);
    r.norm()
}

/// Adaptive solve: escalates `L` from `l_start` until the relative boundary
/// residual drops to `eps_target`, returning the smallest such `L`.
///
/// All degrees share one quadrature (built for `l_max`) and one QR of the
/// full system, so the subspaces are nested and the least-squares residual
/// of every degree is read off the factorization; the history is therefore
/// non-increasing. Coefficients are computed by truncated SVD only for the
/// degree that is returned, and its residual is re-evaluated from them.
/// Reaching `l_max` without meeting the target is not an error; the
/// `l_max` solution is returned with `converged = false`.
pub fn mrc_solve(
    surface: &StarSurface,
    ctx: &WaveContext,
    bc: BoundaryCondition,
    config: &SolverConfig,
) -> Result<DirectSolution> {
    config.validate()?;
    let quad = config.quadrature();
    let weights = boundary_weights(surface, &quad)?;
    let rhs: Vec<Complex64> = incident_trace(surface, &quad, ctx, bc)
        .into_iter()
        .zip(&weights)
        .map(|(v, w)| v * *w)
        .collect();
    let rhs_norm = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let full = assemble_basis_matrix(surface, &quad, ctx.k, config.l_max, bc)?;
    debug!(
        "assembled {}x{} system on a ({}, {}) rule",
        full.nrows(),
        full.ncols(),
        quad.n_theta(),
        quad.n_phi()
    );
    let quadrature = (quad.n_theta(), quad.n_phi());
    let finish = |coefficients: CoefficientSet, residual, converged, rank, condition_estimate, history| {
        info!(
            "direct solve: L = {}, residual {residual:.3e}, converged = {converged}",
            coefficients.l_max()
        );
        DirectSolution {
            coefficients,
            residual,
            boundary_condition: bc,
            converged,
            eps_target: config.eps_target,
            context: *ctx,
            diagnostics: Diagnostics {
                condition_estimate,
                rank,
                history,
                quadrature,
            },
        }
    };
    if rhs_norm == 0.0 {
        let l = config.l_start;
        return Ok(finish(CoefficientSet::zeros(l), 0.0, true, 0, 1.0, vec![(l, 0.0)]));
    }

    let system = FactoredSystem::new(&full, &rhs);
    let mut history = Vec::new();
    for l in config.l_start..=config.l_max {
        let cols = ModeIndex::count(l);
        let predicted = system.prefix_residual(cols) / rhs_norm;
        debug!("L = {l}: least-squares residual {predicted:.3e}");
        history.push((l, predicted));
        if predicted > config.eps_target && l < config.l_max {
            continue;
        }
        let (coeffs, rank, cond) = system.solve_prefix(cols, config.svd_cutoff)?;
        let sub = full.columns(0, cols);
        let achieved = (sub * DVector::from_column_slice(&coeffs) + DVector::from_column_slice(&rhs)).norm() / rhs_norm;
        let converged = achieved <= config.eps_target;
        if converged || l == config.l_max {
            return Ok(finish(
                CoefficientSet::new(l, coeffs)?,
                achieved,
                converged,
                rank,
                cond,
                history,
            ));
        }
        // SVD truncation lost what the untruncated residual promised.
        debug!("L = {l}: truncated solution reaches only {achieved:.3e}");
    }
    unreachable!("loop returns at l_max")
}

/// Relative boundary residual of arbitrary coefficients on `quad`.
pub fn boundary_residual(
    surface: &StarSurface,
    quad: &SphereQuadrature,
    ctx: &WaveContext,
    bc: BoundaryCondition,
    coeffs: &CoefficientSet,
) -> Result<f64> {
    let weights = boundary_weights(surface, quad)?;
    let trace = incident_trace(surface, quad, ctx, bc);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((d, w), u0) in quad.nodes().iter().zip(&weights).zip(&trace) {
        let row = basis_row(surface, d, ctx.k, coeffs.l_max(), bc)?;
        let v: Complex64 = row.iter().zip(coeffs.as_slice()).map(|(a, c)| a * c).sum();
        num += (w * (u0 + v)).norm_sqr();
        den += (w * u0).norm_sqr();
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{hankel_out, hankel_out_dr, sph_harm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn incident_trace_examples() {
        let s = StarSurface::sphere(1.0).unwrap();
        let q = SphereQuadrature::with_degree(8);
        let tiny = WaveContext::new(1e-12, Direction::z()).unwrap();
        for v in incident_trace(&s, &q, &tiny, BoundaryCondition::Dirichlet) {
            assert!((v - 1.0).norm() < 1e-11);
        }

        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let x = s.point(&Direction::z());
        assert!((ctx.incident(&x) - Complex64::from_polar(1.0, 1.0)).norm() < 1e-15);

        let eq = Direction::new(PI / 2.0, 0.3);
        let n = outward_normal(&s, &eq);
        let dn = Complex64::new(0.0, ctx.k * ctx.alpha.unit().dot(&n)) * ctx.incident(&s.point(&eq));
        assert!(dn.norm() < 1e-15);
    }

    #[test]
    fn neumann_trace_vanishes_on_equator_nodes() {
        let s = StarSurface::sphere(1.0).unwrap();
        // odd n_theta puts a Gauss node at cos(theta) = 0
        let q = crate::geometry::make_quadrature(5, 8).unwrap();
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let t = incident_trace(&s, &q, &ctx, BoundaryCondition::Neumann);
        for (d, v) in q.nodes().iter().zip(&t) {
            if (d.theta() - PI / 2.0).abs() < 1e-14 {
                assert!(v.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn sphere_columns_are_orthogonal() {
        let a = 1.3;
        let s = StarSurface::sphere(a).unwrap();
        let q = SphereQuadrature::with_degree(16);
        let m = assemble_basis_matrix(&s, &q, 1.1, 6, BoundaryCondition::Dirichlet).unwrap();
        let gram = m.adjoint() * &m;
        let h = crate::specfun::hankel_out_array(6, 1.1, a).unwrap();
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let expect = if i == j {
                    a * a * h[ModeIndex::from_flat(i).ell].norm_sqr()
                } else {
                    0.0
                };
                let scale = (gram[(i, i)].norm() * gram[(j, j)].norm()).sqrt();
                assert!((gram[(i, j)] - expect).norm() <= 1e-10 * scale, "({i},{j})");
            }
        }
    }

    #[test]
    fn single_entry_matches_direct_product() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap();
        let q = SphereQuadrature::with_degree(8);
        let m = assemble_basis_matrix(&s, &q, 1.5, 3, BoundaryCondition::Dirichlet).unwrap();
        let w = boundary_weights(&s, &q).unwrap();
        let p = 17;
        let d = q.nodes()[p];
        let r = s.radius(&d);
        for mode in ModeIndex::iter(3) {
            let expect = w[p] * sph_harm(mode.ell, mode.m, &d).unwrap() * hankel_out(mode.ell as i32, 1.5, r).unwrap();
            assert!((m[(p, mode.flat())] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn neumann_sphere_column_norms() {
        let a = 0.8;
        let s = StarSurface::sphere(a).unwrap();
        let q = SphereQuadrature::with_degree(12);
        let m = assemble_basis_matrix(&s, &q, 2.0, 5, BoundaryCondition::Neumann).unwrap();
        for (j, col) in m.column_iter().enumerate() {
            let ell = ModeIndex::from_flat(j).ell as i32;
            let expect = a * hankel_out_dr(ell, 2.0, a).unwrap().norm();
            assert!((col.norm() - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn aliasing_is_refused() {
        let s = StarSurface::sphere(1.0).unwrap();
        let q = SphereQuadrature::with_degree(9);
        assert!(matches!(
            assemble_basis_matrix(&s, &q, 1.0, 5, BoundaryCondition::Dirichlet),
            Err(MrcError::Aliasing { .. })
        ));
    }

    #[test]
    fn identity_system() {
        let m = DMatrix::<Complex64>::identity(4, 4);
        let b = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0), c(7.0, -1.0)];
        let sol = solve_least_squares(&m, &b, 1e-12).unwrap();
        for (x, y) in sol.coefficients.iter().zip(&b) {
            assert!((x + y).norm() < 1e-15);
        }
        assert!(sol.residual < 1e-15);
        assert_eq!(sol.rank, 4);
    }

    /// Normal equations `A^H A c = -A^H b` solved by Cramer's rule on 2x2.
    #[test]
    fn small_system_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rnd = || c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(3, 2, |_, _| rnd());
        let b: Vec<Complex64> = (0..3).map(|_| rnd()).collect();

        let mut g = [[Complex64::default(); 2]; 2];
        let mut rhs = [Complex64::default(); 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = (0..3).map(|p| a[(p, i)].conj() * a[(p, j)]).sum();
            }
            rhs[i] = -(0..3).map(|p| a[(p, i)].conj() * b[p]).sum::<Complex64>();
        }
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let x0 = (rhs[0] * g[1][1] - g[0][1] * rhs[1]) / det;
        let x1 = (g[0][0] * rhs[1] - rhs[0] * g[1][0]) / det;

        let sol = solve_least_squares(&a, &b, 1e-12).unwrap();
        assert!((sol.coefficients[0] - x0).norm() < 1e-12);
        assert!((sol.coefficients[1] - x1).norm() < 1e-12);
    }

    #[test]
    fn duplicate_columns_give_minimum_norm_solution() {
        let a = DMatrix::from_row_slice(
            3,
            2,
            &[
                c(1.0, 0.0),
                c(1.0, 0.0),
                c(2.0, 0.0),
                c(2.0, 0.0),
                c(0.5, 0.0),
                c(0.5, 0.0),
            ],
        );
        let b = vec![c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.0)];
        let sol = solve_least_squares(&a, &b, 1e-10).unwrap();
        assert_eq!(sol.rank, 1);
        assert!((sol.coefficients[0] - sol.coefficients[1]).norm() < 1e-14);
    }

    #[test]
    fn empty_system_is_an_error() {
        let a = DMatrix::<Complex64>::zeros(0, 3);
        assert!(matches!(
            solve_least_squares(&a, &[], 1e-12),
            Err(MrcError::EmptySystem)
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = SolverConfig {
            eps_target: 0.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            l_start: 30,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loose_target_stops_at_start_degree() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap();
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let cfg = SolverConfig {
            eps_target: 0.9,
            l_start: 2,
            l_max: 8,
            ..Default::default()
        };
        let sol = mrc_solve(&s, &ctx, BoundaryCondition::Dirichlet, &cfg).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.coefficients.l_max(), 2);
        assert_eq!(sol.diagnostics.history.len(), 1);
    }

    #[test]
    fn unconverged_run_is_flagged() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap();
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let cfg = SolverConfig {
            eps_target: 1e-14,
            l_max: 3,
            ..Default::default()
        };
        let sol = mrc_solve(&s, &ctx, BoundaryCondition::Dirichlet, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.coefficients.l_max(), 3);
        assert_eq!(sol.diagnostics.history.len(), 4);
    }

    #[test]
    fn perturbed_sphere_history_is_monotone() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap();
        let ctx = WaveContext::new(1.0, Direction::z()).unwrap();
        let cfg = SolverConfig {
            eps_target: 1e-8,
            l_max: 16,
            ..Default::default()
        };
        let sol = mrc_solve(&s, &ctx, BoundaryCondition::Dirichlet, &cfg).unwrap();
        let h = &sol.diagnostics.history;
        for w in h.windows(2) {
            assert!(w[1].0 == w[0].0 + 1);
            assert!(w[1].1 <= w[0].1);
        }
        assert!(h.last().unwrap().1 < 1e-3 * h[0].1);
    }

    #[test]
    fn reported_residual_matches_independent_evaluation() {
        let s = StarSurface::ellipsoid(1.0, 0.8, 1.2).unwrap();
        let ctx = WaveContext::new(1.2, Direction::new(0.7, 0.4)).unwrap();
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let cfg = SolverConfig {
                eps_target: 1e-4,
                l_max: 12,
                ..Default::default()
            };
            let sol = mrc_solve(&s, &ctx, bc, &cfg).unwrap();
            let q = cfg.quadrature();
            let r = boundary_residual(&s, &q, &ctx, bc, &sol.coefficients).unwrap();
            assert!(
                (r - sol.residual).abs() < 1e-10 + 1e-6 * sol.residual,
                "{bc:?}: {r} vs {}",
                sol.residual
            );
        }
    }

    #[test]
    fn rotation_equivariance() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(2, 1, 0.1), (3, -2, 0.08), (2, 0, 0.05)]).unwrap();
        let ctx = WaveContext::new(1.3, Direction::new(0.6, 0.2)).unwrap();
        let cfg = SolverConfig {
            eps_target: 1e-12,
            l_max: 10,
            ..Default::default()
        };
        let n_phi = cfg.quadrature().n_phi();
        let angle = 2.0 * PI * 3.0 / n_phi as f64;
        let a = mrc_solve(&s, &ctx, BoundaryCondition::Dirichlet, &cfg).unwrap();
        let rotated = s.rotated_z(angle).unwrap();
        let rctx = WaveContext::new(1.3, ctx.alpha.rotated_z(angle)).unwrap();
        let b = mrc_solve(&rotated, &rctx, BoundaryCondition::Dirichlet, &cfg).unwrap();
        for ((la, ra), (lb, rb)) in a.diagnostics.history.iter().zip(&b.diagnostics.history) {
            assert_eq!(la, lb);
            assert!((ra - rb).abs() < 1e-9, "L={la}: {ra} vs {rb}");
        }
    }

    #[test]
    fn coefficient_set_helpers() {
        let mut a = CoefficientSet::zeros(2);
        a.as_mut_slice()[3] = c(1.0, 0.0);
        let b = CoefficientSet::new(1, vec![c(1.0, 0.0); 4]).unwrap();
        let s = &a + &b;
        assert_eq!(s.l_max(), 2);
        assert_eq!(s.get(ModeIndex::new(1, 1).unwrap()), c(2.0, 0.0));
        assert_eq!(s.get(ModeIndex::new(5, 1).unwrap()), Complex64::default());
        assert!(CoefficientSet::new(2, vec![c(0.0, 0.0); 8]).is_err());
        assert_eq!(a.truncated(0).as_slice().len(), 1);
    }
}

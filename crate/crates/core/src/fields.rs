//! Field evaluation from expansion coefficients.
//!
//! The expansion `v(x) = sum c_lm Y_lm(x/|x|) h_l(|x|)` is guaranteed only
//! outside a ball containing the obstacle. Evaluating it closer in (down to
//! and inside the boundary) is allowed, and is exactly what the inverse
//! root search does, but the result there is only an approximation in the
//! sense of the boundary residual, not a convergent series.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::direct::{CoefficientSet, WaveContext};
use crate::error::{domain, Result};
use crate::geometry::{Direction, SphereQuadrature};
use crate::specfun::{hankel_out_array, hankel_out_with_derivative, sph_harm_all, ModeIndex};

fn split(x: &Vector3<f64>) -> Result<(f64, Direction)> {
    let r = x.norm();
    if !(r > 0.0) {
        return Err(domain("field evaluation at the origin"));
    }
    Ok((r, Direction::from_vector(*x)?))
}

/// `sum c_lm Y_lm(dir) h_l(r)`.
pub fn scattered_at(coeffs: &CoefficientSet, k: f64, r: f64, dir: &Direction) -> Result<Complex64> {
    let h = hankel_out_array(coeffs.l_max(), k, r)?;
    let y = sph_harm_all(coeffs.l_max(), dir);
    Ok(coeffs
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, c)| c * y[i] * h[ModeIndex::from_flat(i).ell])
        .sum())
}

pub fn scattered_field(coeffs: &CoefficientSet, ctx: &WaveContext, x: &Vector3<f64>) -> Result<Complex64> {
    let (r, dir) = split(x)?;
    scattered_at(coeffs, ctx.k, r, &dir)
}

pub fn total_field(coeffs: &CoefficientSet, ctx: &WaveContext, x: &Vector3<f64>) -> Result<Complex64> {
    Ok(ctx.incident(x) + scattered_field(coeffs, ctx, x)?)
}

/// `d/dr` of the scattered field along the ray through `x`.
pub fn scattered_radial_derivative(coeffs: &CoefficientSet, ctx: &WaveContext, x: &Vector3<f64>) -> Result<Complex64> {
    let (r, dir) = split(x)?;
    let (_, dh) = hankel_out_with_derivative(coeffs.l_max(), ctx.k, r)?;
    let y = sph_harm_all(coeffs.l_max(), &dir);
    Ok(coeffs
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, c)| c * y[i] * dh[ModeIndex::from_flat(i).ell])
        .sum())
}

/// `d/dr` of the total field along the ray through `x`.
pub fn total_radial_derivative(coeffs: &CoefficientSet, ctx: &WaveContext, x: &Vector3<f64>) -> Result<Complex64> {
    let (_, dir) = split(x)?;
    let du0 = Complex64::new(0.0, ctx.k * ctx.alpha.unit().dot(&dir.unit())) * ctx.incident(x);
    Ok(du0 + scattered_radial_derivative(coeffs, ctx, x)?)
}

/// Scattering amplitude `A(dir_out) = sum c_lm Y_lm(dir_out)`, the
/// coefficient of `e^{ikr}/r` in the far field.
pub fn far_field_amplitude(coeffs: &CoefficientSet, dir_out: &Direction) -> Complex64 {
    let y = sph_harm_all(coeffs.l_max(), dir_out);
    coeffs.as_slice().iter().zip(&y).map(|(c, y)| c * y).sum()
}

/// `integral |A|^2 dalpha'`, which by orthonormality is `sum |c_lm|^2`.
pub fn far_field_energy(coeffs: &CoefficientSet) -> f64 {
    coeffs.norm_sqr()
}

/// Scattered field sampled at `radius * node` for every quadrature node.
pub fn field_on_sphere(
    coeffs: &CoefficientSet,
    ctx: &WaveContext,
    radius: f64,
    quad: &SphereQuadrature,
) -> Result<Vec<Complex64>> {
    let h = hankel_out_array(coeffs.l_max(), ctx.k, radius)?;
    Ok(quad
        .nodes()
        .par_iter()
        .map(|d| {
            let y = sph_harm_all(coeffs.l_max(), d);
            coeffs
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, c)| c * y[i] * h[ModeIndex::from_flat(i).ell])
                .sum()
        })
        .collect())
}

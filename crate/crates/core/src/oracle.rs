//! Separated-variables solution for a sphere centred at the origin.
//!
//! With `u0 = sum b_lm j_l(kr) Y_lm(x/r)` and `b_lm = 4 pi i^l conj(Y_lm(alpha))`,
//! the scattered coefficients in the outgoing basis `h_l` are
//!
//! ```text
//! soft:  A_lm = -b_lm j_l(ka) / h_l(a)
//! hard:  A_lm = -b_lm k j'_l(ka) / h'_l(a)
//! ```
//!
//! where `h_l` is the outgoing function normalized to `e^{ikr}/r` and `'`
//! is `d/dr`. Both follow by substituting into the boundary condition; the
//! tests re-check that substitution pointwise.

use log::warn;
use num_complex::Complex64;

use crate::direct::{BoundaryCondition, CoefficientSet, WaveContext};
use crate::error::{MrcError, Result};
use crate::specfun::{hankel_out_with_derivative, i_pow, sph_harm_all, spherical_bessel_j_with_derivative, ModeIndex};

/// Coefficients of the incident plane wave in regular waves `j_l Y_lm`.
pub fn plane_wave_coeffs(ctx: &WaveContext, l_max: usize) -> CoefficientSet {
    let y = sph_harm_all(l_max, &ctx.alpha);
    let four_pi = 4.0 * std::f64::consts::PI;
    let coeffs = y
        .iter()
        .enumerate()
        .map(|(i, yi)| four_pi * i_pow(ModeIndex::from_flat(i).ell) * yi.conj())
        .collect();
    CoefficientSet::new(l_max, coeffs).expect("length matches by construction")
}

/// `sum b_lm j_l(k|x|) Y_lm(x/|x|)`, the truncated regular-wave sum.
pub fn regular_wave_sum(b: &CoefficientSet, k: f64, x: &nalgebra::Vector3<f64>) -> Result<Complex64> {
    let dir = crate::geometry::Direction::from_vector(*x)?;
    let (j, _) = spherical_bessel_j_with_derivative(b.l_max(), k * x.norm())?;
    let y = sph_harm_all(b.l_max(), &dir);
    Ok(b.as_slice()
        .iter()
        .enumerate()
        .map(|(i, c)| c * y[i] * j[ModeIndex::from_flat(i).ell])
        .sum())
}

/// Exact scattering coefficients of the sphere of radius `a`, degree `<= l_max`.
pub fn sphere_scattering_coeffs(
    a: f64,
    ctx: &WaveContext,
    l_max: usize,
    bc: BoundaryCondition,
) -> Result<CoefficientSet> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(MrcError::InvalidInput(format!(
            "sphere radius must be positive, got {a}"
        )));
    }
    let b = plane_wave_coeffs(ctx, l_max);
    let (j, dj) = spherical_bessel_j_with_derivative(l_max, ctx.k * a)?;
    let (h, dh) = hankel_out_with_derivative(l_max, ctx.k, a)?;
    let ratios: Vec<Complex64> = (0..=l_max)
        .map(|l| {
            let (num, den) = match bc {
                BoundaryCondition::Dirichlet => (Complex64::from(j[l]), h[l]),
                BoundaryCondition::Neumann => (Complex64::from(ctx.k * dj[l]), dh[l]),
            };
            if den.norm() < 1e-300 {
                warn!("sphere oracle: radial denominator vanishes at l = {l}; coefficient set to zero");
                Complex64::default()
            } else {
                -num / den
            }
        })
        .collect();
    let coeffs = b.iter().map(|(mode, bm)| bm * ratios[mode.ell]).collect();
    CoefficientSet::new(l_max, coeffs)
}

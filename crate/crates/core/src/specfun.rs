//! Spherical Bessel functions, outgoing spherical Hankel functions and
//! orthonormal spherical harmonics.
//!
//! The outgoing radial function used throughout the crate is normalized so
//! that `h_l(r) ~ e^{ikr}/r` as `r -> +inf`:
//!
//! ```text
//! h_l(r) = i^{l+1} k h1_l(kr),    h1_l = j_l + i y_l
//! ```
//!
//! The conversion factor `i^{l+1} k` never leaves this module.
//!
//! Spherical harmonics carry the Condon–Shortley phase and are orthonormal
//! with respect to the standard surface measure on the unit sphere.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::Direction;

/// Degree/order pair `(l, m)` with `|m| <= l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub ell: usize,
    pub m: i32,
}

impl ModeIndex {
    pub fn new(ell: usize, m: i32) -> Result<Self> {
        if m.unsigned_abs() as usize > ell {
            return Err(domain(format!("|m| = {} exceeds degree {ell}", m.abs())));
        }
        Ok(Self { ell, m })
    }

    /// Position in the flat `(l, m)` enumeration, `l^2 + l + m`.
    #[inline]
    pub fn flat(self) -> usize {
        ((self.ell * self.ell + self.ell) as i64 + self.m as i64) as usize
    }

    #[inline]
    pub fn from_flat(index: usize) -> Self {
        let ell = (index as f64).sqrt() as usize;
        // guard against rounding in the square root
        let ell = if (ell + 1) * (ell + 1) <= index {
            ell + 1
        } else if ell * ell > index {
            ell - 1
        } else {
            ell
        };
        let m = index as i64 - (ell * ell + ell) as i64;
        Self { ell, m: m as i32 }
    }

    /// Number of modes with degree `<= l_max`.
    #[inline]
    pub fn count(l_max: usize) -> usize {
        (l_max + 1) * (l_max + 1)
    }

    /// All modes up to `l_max` in flat order.
    pub fn iter(l_max: usize) -> impl Iterator<Item = ModeIndex> {
        (0..Self::count(l_max)).map(Self::from_flat)
    }
}

fn check_arg(x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("argument must be positive and finite, got {x}")));
    }
    Ok(())
}

/// `j_l(x)` for `l = 0..=l_max`.
///
/// Orders `l <= x` come from upward recurrence; orders above `x` from the
/// downward ratio recurrence (Miller) seeded well above `l_max` and chained
/// onto the last upward value.
pub fn spherical_bessel_j_array(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_arg(x)?;
    let mut out = vec![0.0; l_max + 1];
    let (s, c) = x.sin_cos();
    out[0] = s / x;

    let upward_top = (x.floor() as usize).min(l_max);
    if upward_top >= 1 {
        out[1] = s / (x * x) - c / x;
        for l in 1..upward_top {
            out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        }
    }
    if upward_top == l_max {
        return Ok(out);
    }

    // ratios r_l = j_l / j_{l-1}, r_l = x / (2l + 1 - x r_{l+1})
    let start = l_max + 20usize.max((1.5 * x).ceil() as usize);
    let mut ratio = 0.0;
    let mut ratios = vec![0.0; l_max + 1];
    for l in (upward_top + 1..=start).rev() {
        ratio = x / ((2 * l + 1) as f64 - x * ratio);
        if l <= l_max {
            ratios[l] = ratio;
        }
    }
    for l in upward_top + 1..=l_max {
        out[l] = ratios[l] * out[l - 1];
    }
    Ok(out)
}

/// `y_l(x)` for `l = 0..=l_max` by upward recurrence (stable: `y_l` is the
/// dominant solution).
pub fn spherical_bessel_y_array(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_arg(x)?;
    let mut out = vec![0.0; l_max + 1];
    let (s, c) = x.sin_cos();
    out[0] = -c / x;
    if l_max >= 1 {
        out[1] = -c / (x * x) - s / x;
    }
    for l in 1..l_max {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    Ok(out)
}

pub fn spherical_bessel_j(ell: i32, x: f64) -> Result<f64> {
    if ell < 0 {
        return Err(domain(format!("negative order {ell}")));
    }
    Ok(spherical_bessel_j_array(ell as usize, x)?[ell as usize])
}

pub fn spherical_bessel_y(ell: i32, x: f64) -> Result<f64> {
    if ell < 0 {
        return Err(domain(format!("negative order {ell}")));
    }
    Ok(spherical_bessel_y_array(ell as usize, x)?[ell as usize])
}

/// Derivatives from `f'_l = f_{l-1} - (l+1)/x f_l`, `f'_0 = -f_1`.
/// `values` must hold orders `0..=l_max + 1`.
fn derivative_from_values(values: &[f64], l_max: usize, x: f64) -> Vec<f64> {
    let mut d = Vec::with_capacity(l_max + 1);
    d.push(-values[1]);
    for l in 1..=l_max {
        d.push(values[l - 1] - (l + 1) as f64 / x * values[l]);
    }
    d
}

/// `(j_l(x), j'_l(x))` for `l = 0..=l_max`.
pub fn spherical_bessel_j_with_derivative(l_max: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut j = spherical_bessel_j_array(l_max + 1, x)?;
    let dj = derivative_from_values(&j, l_max, x);
    j.truncate(l_max + 1);
    Ok((j, dj))
}

/// `(y_l(x), y'_l(x))` for `l = 0..=l_max`.
pub fn spherical_bessel_y_with_derivative(l_max: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut y = spherical_bessel_y_array(l_max + 1, x)?;
    let dy = derivative_from_values(&y, l_max, x);
    y.truncate(l_max + 1);
    Ok((y, dy))
}

/// `i^n`.
#[inline]
pub(crate) fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

fn check_wave(k: f64, r: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(domain(format!("wavenumber must be positive, got {k}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(domain(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

/// Outgoing radial functions `h_l(r)` for `l = 0..=l_max`.
pub fn hankel_out_array(l_max: usize, k: f64, r: f64) -> Result<Vec<Complex64>> {
    check_wave(k, r)?;
    let x = k * r;
    let j = spherical_bessel_j_array(l_max, x)?;
    let y = spherical_bessel_y_array(l_max, x)?;
    Ok((0..=l_max)
        .map(|l| i_pow(l + 1) * k * Complex64::new(j[l], y[l]))
        .collect())
}

/// Outgoing radial functions and their `r`-derivatives, `l = 0..=l_max`.
pub fn hankel_out_with_derivative(l_max: usize, k: f64, r: f64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    check_wave(k, r)?;
    let x = k * r;
    let (j, dj) = spherical_bessel_j_with_derivative(l_max, x)?;
    let (y, dy) = spherical_bessel_y_with_derivative(l_max, x)?;
    let mut h = Vec::with_capacity(l_max + 1);
    let mut dh = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let scale = i_pow(l + 1) * k;
        h.push(scale * Complex64::new(j[l], y[l]));
        dh.push(scale * k * Complex64::new(dj[l], dy[l]));
    }
    Ok((h, dh))
}

/// Outgoing radial function, normalized so that `h_l(r) ~ e^{ikr}/r`.
pub fn hankel_out(ell: i32, k: f64, r: f64) -> Result<Complex64> {
    if ell < 0 {
        return Err(domain(format!("negative order {ell}")));
    }
    Ok(hankel_out_array(ell as usize, k, r)?[ell as usize])
}

/// `d/dr` of [`hankel_out`].
pub fn hankel_out_dr(ell: i32, k: f64, r: f64) -> Result<Complex64> {
    if ell < 0 {
        return Err(domain(format!("negative order {ell}")));
    }
    Ok(hankel_out_with_derivative(ell as usize, k, r)?.1[ell as usize])
}

/// Fully normalized associated Legendre values `P_l^m(cos theta)` for
/// `0 <= m <= l <= l_max`, Condon–Shortley phase included, scaled so that
/// `Y_lm = P_l^m e^{i m phi}` is orthonormal on the unit sphere.
///
/// Also keeps `P_l^m / sin(theta)` for `m >= 1`, obtained from the same
/// recurrence with one fewer power of `sin(theta)` in the seed, so that
/// `m Y_lm / sin(theta)` stays finite at the poles.
#[derive(Debug, Clone)]
pub struct NormalizedLegendre {
    l_max: usize,
    theta: f64,
    p: Vec<f64>,
    p_over_sin: Vec<f64>,
}

#[inline]
fn tri(ell: usize, m: usize) -> usize {
    ell * (ell + 1) / 2 + m
}

impl NormalizedLegendre {
    pub fn new(l_max: usize, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let n = tri(l_max, l_max) + 1;
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];

        // q holds P/sin for m >= 1; its m = 0 column is unused
        let mut p_mm = 1.0 / (4.0 * PI).sqrt();
        let mut q_mm = 0.0;
        for m in 0..=l_max {
            if m >= 1 {
                let f = -((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
                q_mm = if m == 1 { f * p_mm } else { f * s * q_mm };
                p_mm *= f * s;
            }
            p[tri(m, m)] = p_mm;
            q[tri(m, m)] = q_mm;
            if m < l_max {
                let a = ((2 * m + 3) as f64).sqrt() * c;
                p[tri(m + 1, m)] = a * p_mm;
                q[tri(m + 1, m)] = a * q_mm;
            }
            for l in m + 2..=l_max {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                p[tri(l, m)] = a * (c * p[tri(l - 1, m)] - b * p[tri(l - 2, m)]);
                q[tri(l, m)] = a * (c * q[tri(l - 1, m)] - b * q[tri(l - 2, m)]);
            }
        }
        Self {
            l_max,
            theta,
            p,
            p_over_sin: q,
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn p(&self, ell: usize, m: usize) -> f64 {
        self.p[tri(ell, m)]
    }

    /// `m P_l^m / sin(theta)`, finite at the poles.
    #[inline]
    pub fn m_over_sin(&self, ell: usize, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            m as f64 * self.p_over_sin[tri(ell, m)]
        }
    }

    /// `d P_l^m / d theta` from the ladder identity
    /// `2 dP^m = c+ P^{m+1} - c- P^{m-1}`, with `P^{-1} = -P^1`.
    pub fn d_theta(&self, ell: usize, m: usize) -> f64 {
        let (lf, mf) = (ell as f64, m as f64);
        let up = if m < ell {
            ((lf - mf) * (lf + mf + 1.0)).sqrt() * self.p(ell, m + 1)
        } else {
            0.0
        };
        let down = if m == 0 {
            if ell >= 1 {
                -self.p(ell, 1)
            } else {
                0.0
            }
        } else {
            self.p(ell, m - 1)
        };
        let c_down = ((lf + mf) * (lf - mf + 1.0)).sqrt();
        0.5 * (up - c_down * down)
    }
}

#[inline]
fn parity(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `Y_lm(dir)`, orthonormal, Condon–Shortley phase.
pub fn sph_harm(ell: usize, m: i32, dir: &Direction) -> Result<Complex64> {
    let mode = ModeIndex::new(ell, m)?;
    let table = NormalizedLegendre::new(ell, dir.theta());
    let ma = m.unsigned_abs() as usize;
    let sign = if m < 0 { parity(ma) } else { 1.0 };
    Ok(sign * table.p(mode.ell, ma) * Complex64::from_polar(1.0, m as f64 * dir.phi()))
}

/// All `Y_lm(dir)` for `l <= l_max`, flat order.
pub fn sph_harm_all(l_max: usize, dir: &Direction) -> Vec<Complex64> {
    sph_harm_with_gradient(l_max, dir).values
}

/// Spherical harmonics with their tangential derivatives at one direction.
#[derive(Debug, Clone)]
pub struct HarmonicGradients {
    pub values: Vec<Complex64>,
    /// `dY/dtheta`
    pub d_theta: Vec<Complex64>,
    /// `(1/sin theta) dY/dphi`
    pub d_phi_over_sin: Vec<Complex64>,
}

pub fn sph_harm_with_gradient(l_max: usize, dir: &Direction) -> HarmonicGradients {
    let table = NormalizedLegendre::new(l_max, dir.theta());
    let n = ModeIndex::count(l_max);
    let mut values = vec![Complex64::default(); n];
    let mut d_theta = vec![Complex64::default(); n];
    let mut d_phi = vec![Complex64::default(); n];
    let phi = dir.phi();
    for ell in 0..=l_max {
        for ma in 0..=ell {
            let p = table.p(ell, ma);
            let dp = table.d_theta(ell, ma);
            let mq = table.m_over_sin(ell, ma);
            for m in [ma as i32, -(ma as i32)] {
                if ma == 0 && m < 0 {
                    continue;
                }
                let sign = if m < 0 { parity(ma) } else { 1.0 };
                let e = Complex64::from_polar(sign, m as f64 * phi);
                let idx = ModeIndex { ell, m }.flat();
                values[idx] = p * e;
                d_theta[idx] = dp * e;
                // i m Y / sin(theta), with m carrying its sign
                let signed = if m < 0 { -mq } else { mq };
                d_phi[idx] = Complex64::new(0.0, signed) * e;
            }
        }
    }
    HarmonicGradients {
        values,
        d_theta,
        d_phi_over_sin: d_phi,
    }
}

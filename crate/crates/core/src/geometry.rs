//! Star-shaped surfaces `r = f(alpha)`, directions on the unit sphere and
//! tensor-product quadrature over it.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, MrcError, Result};
use crate::specfun::{sph_harm_all, ModeIndex, NormalizedLegendre};

/// Unit vector on the sphere, kept together with its polar angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    theta: f64,
    phi: f64,
    unit: Vector3<f64>,
}

impl Direction {
    /// `theta` is clamped to `[0, pi]`, `phi` wrapped into `[0, 2pi)`.
    pub fn new(theta: f64, phi: f64) -> Self {
        let theta = theta.clamp(0.0, PI);
        let phi = phi.rem_euclid(2.0 * PI);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            theta,
            phi,
            unit: Vector3::new(st * cp, st * sp, ct),
        }
    }

    pub fn try_new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !phi.is_finite() {
            return Err(domain(format!("invalid direction (theta={theta}, phi={phi})")));
        }
        Ok(Self::new(theta, phi))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(domain("cannot take direction of zero vector"));
        }
        let theta = v.x.hypot(v.y).atan2(v.z);
        let phi = v.y.atan2(v.x);
        let mut d = Self::new(theta, phi);
        d.unit = v / n;
        Ok(d)
    }

    pub fn z() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn x() -> Self {
        Self::new(PI / 2.0, 0.0)
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    #[inline]
    pub fn unit(&self) -> Vector3<f64> {
        self.unit
    }

    pub fn theta_hat(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(ct * cp, ct * sp, -st)
    }

    pub fn phi_hat(&self) -> Vector3<f64> {
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(-sp, cp, 0.0)
    }

    /// Rotation by `angle` about the z axis.
    pub fn rotated_z(&self, angle: f64) -> Self {
        Self::new(self.theta, self.phi + angle)
    }

    /// Directions spread over the sphere on a Fibonacci lattice.
    pub fn fibonacci(n: usize) -> Vec<Self> {
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                Self::new(z.acos(), golden * i as f64)
            })
            .collect()
    }
}

/// Parametric families of star-shaped surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurfaceShape {
    Sphere {
        radius: f64,
    },
    /// `f = radius + sum amp * S_lm`, with `S_lm` the real Schmidt
    /// semi-normalized harmonics (`|S_lm| <= 1`; `m > 0` cosine, `m < 0` sine).
    PerturbedSphere {
        radius: f64,
        modes: Vec<(usize, i32, f64)>,
    },
    /// Exact radial map of the axis-aligned ellipsoid.
    Ellipsoid {
        semi_axes: [f64; 3],
    },
}

/// Radius and tangential partials of `f` at one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSample {
    pub f: f64,
    pub d_theta: f64,
    /// `df/dphi`
    pub d_phi: f64,
    /// `(1/sin theta) df/dphi`, continuous through the poles
    pub d_phi_over_sin: f64,
}

/// Star-shaped surface `r = f(alpha)` with analytic partials.
#[derive(Debug, Clone, PartialEq)]
pub struct StarSurface {
    shape: SurfaceShape,
}

impl StarSurface {
    pub fn new(shape: SurfaceShape) -> Result<Self> {
        match &shape {
            SurfaceShape::Sphere { radius } => positive("radius", *radius)?,
            SurfaceShape::PerturbedSphere { radius, modes } => {
                positive("radius", *radius)?;
                for &(ell, m, amp) in modes {
                    ModeIndex::new(ell, m)?;
                    if !amp.is_finite() {
                        return Err(MrcError::InvalidInput(format!(
                            "amplitude for ({ell}, {m}) is not finite"
                        )));
                    }
                }
                let bound = perturbation_bound(modes);
                if bound >= *radius {
                    return Err(MrcError::InvalidInput(format!(
                        "perturbation amplitudes ({bound}) must stay below the radius ({radius}) to keep f positive"
                    )));
                }
            }
            SurfaceShape::Ellipsoid { semi_axes } => {
                for a in semi_axes {
                    positive("semi-axis", *a)?;
                }
            }
        }
        Ok(Self { shape })
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        Self::new(SurfaceShape::Sphere { radius })
    }

    pub fn perturbed_sphere(radius: f64, modes: Vec<(usize, i32, f64)>) -> Result<Self> {
        Self::new(SurfaceShape::PerturbedSphere { radius, modes })
    }

    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(SurfaceShape::Ellipsoid { semi_axes: [a, b, c] })
    }

    pub fn shape(&self) -> &SurfaceShape {
        &self.shape
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.shape, SurfaceShape::Sphere { .. })
    }

    pub fn radius(&self, dir: &Direction) -> f64 {
        self.sample(dir).f
    }

    /// Upper bound on `f` over the sphere.
    pub fn max_radius(&self) -> f64 {
        match &self.shape {
            SurfaceShape::Sphere { radius } => *radius,
            SurfaceShape::PerturbedSphere { radius, modes } => radius + perturbation_bound(modes),
            SurfaceShape::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Lower bound on `f` over the sphere.
    pub fn min_radius(&self) -> f64 {
        match &self.shape {
            SurfaceShape::Sphere { radius } => *radius,
            SurfaceShape::PerturbedSphere { radius, modes } => radius - perturbation_bound(modes),
            SurfaceShape::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    /// Boundary point `f(alpha) alpha`.
    pub fn point(&self, dir: &Direction) -> Vector3<f64> {
        self.radius(dir) * dir.unit()
    }

    pub fn sample(&self, dir: &Direction) -> RadialSample {
        match &self.shape {
            SurfaceShape::Sphere { radius } => RadialSample {
                f: *radius,
                d_theta: 0.0,
                d_phi: 0.0,
                d_phi_over_sin: 0.0,
            },
            SurfaceShape::PerturbedSphere { radius, modes } => {
                let l_max = modes.iter().map(|m| m.0).max().unwrap_or(0);
                let table = NormalizedLegendre::new(l_max, dir.theta());
                let mut out = RadialSample {
                    f: *radius,
                    d_theta: 0.0,
                    d_phi: 0.0,
                    d_phi_over_sin: 0.0,
                };
                let sin_t = dir.theta().sin();
                for &(ell, m, amp) in modes {
                    let h = RealHarmonic::eval(&table, ell, m, dir.phi());
                    out.f += amp * h.value;
                    out.d_theta += amp * h.d_theta;
                    out.d_phi_over_sin += amp * h.d_phi_over_sin;
                    out.d_phi += amp * h.d_phi_over_sin * sin_t;
                }
                out
            }
            SurfaceShape::Ellipsoid { semi_axes } => {
                let inv = semi_axes.map(|a| 1.0 / (a * a));
                let u = dir.unit();
                let t = dir.theta_hat();
                let p = dir.phi_hat();
                let q: f64 = (0..3).map(|i| inv[i] * u[i] * u[i]).sum();
                let dq_t: f64 = (0..3).map(|i| 2.0 * inv[i] * u[i] * t[i]).sum();
                // d(alpha)/dphi = sin(theta) phi_hat
                let dq_p_over_sin: f64 = (0..3).map(|i| 2.0 * inv[i] * u[i] * p[i]).sum();
                let f = q.powf(-0.5);
                let scale = -0.5 * q.powf(-1.5);
                RadialSample {
                    f,
                    d_theta: scale * dq_t,
                    d_phi: scale * dq_p_over_sin * dir.theta().sin(),
                    d_phi_over_sin: scale * dq_p_over_sin,
                }
            }
        }
    }

    /// Same surface rotated by `angle` about the z axis: `f'(theta, phi) = f(theta, phi - angle)`.
    pub fn rotated_z(&self, angle: f64) -> Result<Self> {
        match &self.shape {
            SurfaceShape::Sphere { .. } => Ok(self.clone()),
            SurfaceShape::PerturbedSphere { radius, modes } => {
                let mut out = Vec::with_capacity(2 * modes.len());
                for &(ell, m, amp) in modes {
                    if m == 0 {
                        out.push((ell, 0, amp));
                        continue;
                    }
                    let ma = m.abs();
                    let (s, c) = (ma as f64 * angle).sin_cos();
                    if m > 0 {
                        out.push((ell, ma, amp * c));
                        out.push((ell, -ma, amp * s));
                    } else {
                        out.push((ell, -ma, amp * c));
                        out.push((ell, ma, -amp * s));
                    }
                }
                Self::perturbed_sphere(*radius, out)
            }
            SurfaceShape::Ellipsoid { .. } => Err(MrcError::InvalidInput(
                "rotation of an ellipsoid leaves the axis-aligned family".into(),
            )),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(MrcError::InvalidInput(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `sum over (l, |m|) of sqrt(a_cos^2 + a_sin^2)`: an upper bound on the
/// perturbation magnitude, invariant under rotation about z.
fn perturbation_bound(modes: &[(usize, i32, f64)]) -> f64 {
    let mut amps: BTreeMap<(usize, i32), f64> = BTreeMap::new();
    for &(ell, m, amp) in modes {
        *amps.entry((ell, m)).or_default() += amp;
    }
    let mut total = 0.0;
    for (&(ell, m), &a) in &amps {
        if m == 0 {
            total += a.abs();
        } else if m > 0 {
            total += a.hypot(amps.get(&(ell, -m)).copied().unwrap_or(0.0));
        } else if !amps.contains_key(&(ell, -m)) {
            total += a.abs();
        }
    }
    total
}

/// Real Schmidt semi-normalized harmonic and its tangential derivatives.
#[derive(Debug, Clone, Copy)]
pub struct RealHarmonic {
    pub value: f64,
    pub d_theta: f64,
    pub d_phi_over_sin: f64,
}

impl RealHarmonic {
    pub fn eval(table: &NormalizedLegendre, ell: usize, m: i32, phi: f64) -> Self {
        let ma = m.unsigned_abs() as usize;
        let sign = if ma.is_multiple_of(2) { 1.0 } else { -1.0 };
        let root2 = if ma == 0 { 1.0 } else { 2f64.sqrt() };
        let norm = sign * root2 * (4.0 * PI / (2 * ell + 1) as f64).sqrt();
        let p = norm * table.p(ell, ma);
        let dp = norm * table.d_theta(ell, ma);
        // m P / sin theta
        let mq = norm * table.m_over_sin(ell, ma);
        let (s, c) = (ma as f64 * phi).sin_cos();
        if m >= 0 {
            Self {
                value: p * c,
                d_theta: dp * c,
                d_phi_over_sin: -mq * s,
            }
        } else {
            Self {
                value: p * s,
                d_theta: dp * s,
                d_phi_over_sin: mq * c,
            }
        }
    }
}

/// `w = dS/dalpha = f sqrt(f^2 + f_theta^2 + f_phi^2 / sin^2 theta)`.
pub fn surface_element(surface: &StarSurface, dir: &Direction) -> Result<f64> {
    surface_element_from_partials(&surface.sample(dir), dir.theta())
}

/// Surface element from explicit partials. At a pole the `f_phi / sin` term
/// is taken from its continuous extension, which requires `f_phi = 0` there.
pub fn surface_element_from_partials(s: &RadialSample, theta: f64) -> Result<f64> {
    if theta.sin() == 0.0 && s.d_phi != 0.0 {
        return Err(domain("nonzero df/dphi at a pole: parametrization is not smooth"));
    }
    Ok(s.f * (s.f * s.f + s.d_theta * s.d_theta + s.d_phi_over_sin * s.d_phi_over_sin).sqrt())
}

/// Unit normal pointing into the exterior: normalized gradient of
/// `|x| - f(x/|x|)` at the boundary point over `dir`.
pub fn outward_normal(surface: &StarSurface, dir: &Direction) -> Vector3<f64> {
    let s = surface.sample(dir);
    let g = dir.unit() - (s.d_theta / s.f) * dir.theta_hat() - (s.d_phi_over_sin / s.f) * dir.phi_hat();
    g.normalize()
}

/// Gauss–Legendre nodes in `cos(theta)` tensored with a uniform `phi` grid.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    n_theta: usize,
    n_phi: usize,
    nodes: Vec<Direction>,
    weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

impl SphereQuadrature {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        make_quadrature(n_theta, n_phi)
    }

    /// Smallest tensor rule exact for harmonic degree `degree`.
    pub fn with_degree(degree: usize) -> Self {
        let n_theta = (degree / 2 + 1).max(2);
        let n_phi = (degree + 1).max(4);
        make_quadrature(n_theta, n_phi).expect("sizes satisfy the preconditions")
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    /// Harmonic degree integrated exactly.
    pub fn degree(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Direction] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate_complex(&self, values: &[Complex64]) -> Complex64 {
        self.weights.iter().zip(values).map(|(w, v)| *w * v).sum()
    }

    /// `(v, Y_lm)` over the unit sphere for all `l <= l_max`, flat order.
    pub fn project(&self, values: &[Complex64], l_max: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); ModeIndex::count(l_max)];
        for ((node, w), v) in self.nodes.iter().zip(&self.weights).zip(values) {
            let y = sph_harm_all(l_max, node);
            let wv = *w * v;
            for (acc, yi) in out.iter_mut().zip(&y) {
                *acc += wv * yi.conj();
            }
        }
        out
    }

    /// Surface area of `surface`, `integral of w dalpha`.
    pub fn area(&self, surface: &StarSurface) -> Result<f64> {
        let mut total = 0.0;
        for (node, w) in self.nodes.iter().zip(&self.weights) {
            total += w * surface_element(surface, node)?;
        }
        Ok(total)
    }
}

pub fn make_quadrature(n_theta: usize, n_phi: usize) -> Result<SphereQuadrature> {
    if n_theta < 2 || n_phi < 4 {
        return Err(MrcError::InvalidInput(format!(
            "quadrature needs n_theta >= 2 and n_phi >= 4, got ({n_theta}, {n_phi})"
        )));
    }
    let (x, w) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    // descending cos(theta) so nodes run north to south
    for i in (0..n_theta).rev() {
        let theta = x[i].acos();
        for j in 0..n_phi {
            nodes.push(Direction::new(theta, j as f64 * dphi));
            weights.push(w[i] * dphi);
        }
    }
    Ok(SphereQuadrature {
        n_theta,
        n_phi,
        nodes,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::sph_harm;
    use approx::assert_relative_eq;

    fn perturbed() -> StarSurface {
        StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap()
    }

    #[test]
    fn quadrature_integrates_constants_and_harmonics() {
        let q = make_quadrature(8, 16).unwrap();
        assert_relative_eq!(q.weights().iter().sum::<f64>(), 4.0 * PI, max_relative = 1e-13);
        let y32: Vec<f64> = q
            .nodes()
            .iter()
            .map(|d| sph_harm(3, 2, d).unwrap().norm_sqr())
            .collect();
        assert!((q.integrate(&y32) - 1.0).abs() < 1e-12);
        let cross: Vec<Complex64> = q
            .nodes()
            .iter()
            .map(|d| sph_harm(2, 1, d).unwrap() * sph_harm(3, 1, d).unwrap().conj())
            .collect();
        assert!(q.integrate_complex(&cross).norm() < 1e-12);
    }

    #[test]
    fn gram_matrix_is_identity() {
        let q = SphereQuadrature::with_degree(16);
        let n = ModeIndex::count(8);
        let ys: Vec<Vec<Complex64>> = q.nodes().iter().map(|d| sph_harm_all(8, d)).collect();
        for a in 0..n {
            for b in 0..n {
                let g: Complex64 = ys.iter().zip(q.weights()).map(|(y, w)| *w * y[a] * y[b].conj()).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((g - expect).norm() < 1e-12, "({a}, {b}): {g}");
            }
        }
    }

    #[test]
    fn rejects_small_rules() {
        assert!(make_quadrature(1, 8).is_err());
        assert!(make_quadrature(4, 3).is_err());
    }

    #[test]
    fn sphere_surface_element_and_area() {
        let s = StarSurface::sphere(1.7).unwrap();
        let d = Direction::new(0.4, 5.0);
        assert_relative_eq!(surface_element(&s, &d).unwrap(), 1.7 * 1.7, max_relative = 1e-15);
        let q = SphereQuadrature::with_degree(10);
        assert_relative_eq!(q.area(&s).unwrap(), 4.0 * PI * 1.7 * 1.7, max_relative = 1e-12);
        let unit = StarSurface::sphere(1.0).unwrap();
        assert_relative_eq!(q.area(&unit).unwrap(), 4.0 * PI, max_relative = 1e-12);
    }

    #[test]
    fn perturbed_surface_element_symbolic() {
        // f = 1 + 0.2 P2(cos t), P2 = (3c^2 - 1)/2, f_t = -0.6 c s
        let s = perturbed();
        for &t in &[PI / 2.0, 0.3, 2.0] {
            let (st, ct) = f64::sin_cos(t);
            let f = 1.0 + 0.1 * (3.0 * ct * ct - 1.0);
            let ft = -0.6 * ct * st;
            let w = f * (f * f + ft * ft).sqrt();
            assert_relative_eq!(
                surface_element(&s, &Direction::new(t, 0.8)).unwrap(),
                w,
                max_relative = 1e-14
            );
        }
        // at the equator: f = 0.9, f_t = 0, w = 0.81
        assert_relative_eq!(
            surface_element(&s, &Direction::new(PI / 2.0, 0.0)).unwrap(),
            0.81,
            max_relative = 1e-14
        );
    }

    #[test]
    fn axisymmetric_surface_element_is_phi_invariant() {
        let s = perturbed();
        let e = StarSurface::ellipsoid(1.0, 1.0, 1.6).unwrap();
        for surf in [&s, &e] {
            let base = surface_element(surf, &Direction::new(0.7, 0.0)).unwrap();
            for k in 1..8 {
                let w = surface_element(surf, &Direction::new(0.7, k as f64 * 0.77)).unwrap();
                assert!((w - base).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pole_with_nonzero_phi_derivative_is_rejected() {
        let bad = RadialSample {
            f: 1.0,
            d_theta: 0.0,
            d_phi: 0.3,
            d_phi_over_sin: 0.0,
        };
        assert!(surface_element_from_partials(&bad, 0.0).is_err());
        assert!(surface_element_from_partials(&bad, 0.5).is_ok());
    }

    #[test]
    fn normals() {
        let s = StarSurface::sphere(2.0).unwrap();
        let d = Direction::new(1.2, 3.3);
        assert!((outward_normal(&s, &d) - d.unit()).norm() < 1e-15);

        let p = StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2), (3, 2, 0.1), (2, -1, 0.05)]).unwrap();
        for d in Direction::fibonacci(40) {
            let n = outward_normal(&p, &d);
            assert!((n.norm() - 1.0).abs() < 1e-14);
            assert!(n.dot(&d.unit()) > 0.0);
        }
    }

    /// Finite-difference gradient of `F(x) = |x| - f(x/|x|)`.
    fn fd_normal(surface: &StarSurface, x: Vector3<f64>) -> Vector3<f64> {
        let big_f = |y: Vector3<f64>| y.norm() - surface.radius(&Direction::from_vector(y).unwrap());
        let h = 1e-6;
        let mut g = Vector3::zeros();
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            g[i] = (big_f(x + e) - big_f(x - e)) / (2.0 * h);
        }
        g.normalize()
    }

    #[test]
    fn normal_matches_finite_difference_gradient() {
        let surfaces = [
            StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.2)]).unwrap(),
            StarSurface::perturbed_sphere(1.0, vec![(3, 2, 0.15), (1, -1, 0.1)]).unwrap(),
            StarSurface::ellipsoid(1.0, 0.7, 1.4).unwrap(),
        ];
        for s in &surfaces {
            for d in Direction::fibonacci(25) {
                let n = outward_normal(s, &d);
                let fd = fd_normal(s, s.point(&d));
                let angle = n.cross(&fd).norm().asin();
                assert!(angle < 1e-6, "{:?} angle {angle}", s.shape());
            }
        }
    }

    #[test]
    fn ellipsoid_radial_map() {
        let e = StarSurface::ellipsoid(1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(e.radius(&Direction::x()), 1.0, max_relative = 1e-15);
        assert_relative_eq!(e.radius(&Direction::new(PI / 2.0, PI / 2.0)), 2.0, max_relative = 1e-15);
        assert_relative_eq!(e.radius(&Direction::z()), 3.0, max_relative = 1e-15);
        for d in Direction::fibonacci(20) {
            let p = e.point(&d);
            assert!((p.x * p.x + p.y * p.y / 4.0 + p.z * p.z / 9.0 - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(3, 2, 0.15), (4, -3, 0.1), (2, 0, 0.1)]).unwrap();
        let h = 1e-6;
        for &(t, p) in &[(0.4, 1.0), (1.3, 4.0), (2.5, 2.2)] {
            let smp = s.sample(&Direction::new(t, p));
            let ft = (s.radius(&Direction::new(t + h, p)) - s.radius(&Direction::new(t - h, p))) / (2.0 * h);
            let fp = (s.radius(&Direction::new(t, p + h)) - s.radius(&Direction::new(t, p - h))) / (2.0 * h);
            assert!((ft - smp.d_theta).abs() < 1e-8);
            assert!((fp - smp.d_phi).abs() < 1e-8);
            assert!((fp / t.sin() - smp.d_phi_over_sin).abs() < 1e-8);
        }
    }

    #[test]
    fn positivity_is_enforced() {
        assert!(StarSurface::perturbed_sphere(1.0, vec![(2, 0, 0.6), (3, 1, -0.5)]).is_err());
        assert!(StarSurface::sphere(0.0).is_err());
        assert!(StarSurface::ellipsoid(1.0, -1.0, 1.0).is_err());
        assert!(StarSurface::perturbed_sphere(1.0, vec![(2, 3, 0.1)]).is_err());
    }

    #[test]
    fn z_rotation_shifts_phi() {
        let s = StarSurface::perturbed_sphere(1.0, vec![(3, 2, 0.15), (2, -1, 0.1), (2, 0, 0.1)]).unwrap();
        let r = s.rotated_z(0.9).unwrap();
        for d in Direction::fibonacci(30) {
            assert!((r.radius(&d.rotated_z(0.9)) - s.radius(&d)).abs() < 1e-14);
        }
    }

    #[test]
    fn real_harmonics_are_bounded() {
        for d in Direction::fibonacci(200) {
            let t = NormalizedLegendre::new(6, d.theta());
            for ell in 0..=6usize {
                for m in -(ell as i32)..=(ell as i32) {
                    assert!(RealHarmonic::eval(&t, ell, m, d.phi()).value.abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}

//! Embedded manifolds described by an implicit constraint `F(x) = 0`.
//!
//! Three kinds are supported: a sphere centred at the origin, the upper nappe
//! of a right-circular cone with its apex at the origin, and affine subspaces.
//! Each provides the constraint with its first and second derivatives plus the
//! metric services the flow machinery needs (nearest-point projection, tangent
//! frames, exponential/log maps and parallel transport along minimizing
//! geodesics).
//!
//! The cone is flat, so its geodesics and transport are computed exactly by
//! unrolling it onto the plane.

use nalgebra::{DMatrix, DVector};

use crate::error::{FlowError, Result};
use crate::scalar::{lit, Scalar};

/// Residual tolerance used to decide whether a point lies on a manifold.
pub const MANIFOLD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Manifold<T: Scalar> {
    /// `F(x) = (x·x - r²) / 2`.
    Sphere { radius: T },
    /// `F(x) = (x₁² + x₂² - (R/H)² x₃²) / 2` restricted to `x₃ > 0`.
    Cone { height: T, radius: T },
    /// `F(x) = Nᵀ (x - origin)` with `N` an orthonormal complement of `basis`.
    Affine {
        origin: DVector<T>,
        basis: DMatrix<T>,
        normals: DMatrix<T>,
    },
}

/// Orthonormal basis of the tangent space at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame<T: Scalar> {
    pub base_point: DVector<T>,
    /// `d × m`, orthonormal columns spanning `null(DF(base_point))`.
    pub basis: DMatrix<T>,
}

impl<T: Scalar> TangentFrame<T> {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Tangent coordinates `Uᵀ v`.
    pub fn coordinates(&self, v: &DVector<T>) -> DVector<T> {
        self.basis.tr_mul(v)
    }

    /// Ambient vector `U c`.
    pub fn ambient(&self, coords: &DVector<T>) -> DVector<T> {
        &self.basis * coords
    }

    /// Orthogonal projection `U Uᵀ v` onto the tangent space.
    pub fn project(&self, v: &DVector<T>) -> DVector<T> {
        self.ambient(&self.coordinates(v))
    }
}

fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut a = a % two_pi;
    if a > T::pi() {
        a -= two_pi;
    } else if a <= -T::pi() {
        a += two_pi;
    }
    a
}

/// Gram-Schmidt with pivoting: completes `fixed` (orthonormal columns, may be
/// empty) to an orthonormal basis of `R^d` and returns only the new columns.
fn orthonormal_complement<T: Scalar>(fixed: &[DVector<T>], d: usize) -> Vec<DVector<T>> {
    let mut accepted: Vec<DVector<T>> = fixed.to_vec();
    let mut out = Vec::new();
    let mut candidates: Vec<DVector<T>> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = T::one();
            e
        })
        .collect();
    while accepted.len() < d {
        let residuals: Vec<DVector<T>> = candidates
            .iter()
            .map(|c| {
                let mut r = c.clone();
                // two passes for numerical orthogonality
                for _ in 0..2 {
                    for q in &accepted {
                        let p = q.dot(&r);
                        r -= q * p;
                    }
                }
                r
            })
            .collect();
        let (best, _) = residuals.iter().enumerate().fold((0, -T::one()), |acc, (i, r)| {
            let n = r.norm();
            if n > acc.1 + lit(1e-12) {
                (i, n)
            } else {
                acc
            }
        });
        let r = residuals[best].clone();
        let q = r.normalize();
        accepted.push(q.clone());
        out.push(q);
        candidates.remove(best);
    }
    out
}

impl<T: Scalar> Manifold<T> {
    pub fn unit_sphere() -> Self {
        Manifold::Sphere { radius: T::one() }
    }

    pub fn sphere(radius: T) -> Result<Self> {
        if radius <= T::zero() {
            return Err(FlowError::InvalidInput("sphere radius must be positive".into()));
        }
        Ok(Manifold::Sphere { radius })
    }

    /// Right-circular cone with apex at the origin, axis `e₃`, opening upward.
    pub fn cone(height: T, radius: T) -> Result<Self> {
        if height <= T::zero() || radius <= T::zero() {
            return Err(FlowError::InvalidInput("cone height and radius must be positive".into()));
        }
        Ok(Manifold::Cone { height, radius })
    }

    /// The unit cone `x₁² + x₂² = x₃²` with `H = R = 1`.
    pub fn unit_cone() -> Self {
        Manifold::Cone {
            height: T::one(),
            radius: T::one(),
        }
    }

    /// Affine subspace `origin + span(spanning)`. The spanning vectors are
    /// orthonormalized; they must be linearly independent.
    pub fn affine(origin: DVector<T>, spanning: &[DVector<T>]) -> Result<Self> {
        let d = origin.len();
        let mut basis_cols: Vec<DVector<T>> = Vec::new();
        for v in spanning {
            if v.len() != d {
                return Err(FlowError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            let mut r = v.clone();
            for _ in 0..2 {
                for q in &basis_cols {
                    let p = q.dot(&r);
                    r -= q * p;
                }
            }
            let n = r.norm();
            if n <= lit::<T>(1e-12) * v.norm().max(T::one()) {
                return Err(FlowError::InvalidInput("affine spanning vectors are dependent".into()));
            }
            basis_cols.push(r / n);
        }
        if basis_cols.is_empty() {
            return Err(FlowError::InvalidInput("affine subspace needs at least one direction".into()));
        }
        let normal_cols = orthonormal_complement(&basis_cols, d);
        Ok(Manifold::Affine {
            origin,
            basis: DMatrix::from_columns(&basis_cols),
            normals: if normal_cols.is_empty() {
                DMatrix::zeros(d, 0)
            } else {
                DMatrix::from_columns(&normal_cols)
            },
        })
    }

    /// The whole of `R^d` viewed as a (codimension zero) affine manifold.
    pub fn euclidean(d: usize) -> Self {
        let cols: Vec<DVector<T>> = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = T::one();
                e
            })
            .collect();
        Manifold::affine(DVector::zeros(d), &cols).expect("canonical basis is independent")
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Sphere { .. } | Manifold::Cone { .. } => 3,
            Manifold::Affine { origin, .. } => origin.len(),
        }
    }

    pub fn codim(&self) -> usize {
        match self {
            Manifold::Sphere { .. } | Manifold::Cone { .. } => 1,
            Manifold::Affine { normals, .. } => normals.ncols(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    /// Short tag used in diagnostics and file names.
    pub fn name(&self) -> &'static str {
        match self {
            Manifold::Sphere { .. } => "sphere",
            Manifold::Cone { .. } => "cone",
            Manifold::Affine { .. } => "affine",
        }
    }

    fn cone_slope(height: T, radius: T) -> T {
        radius / height
    }

    fn check_dim(&self, x: &DVector<T>) -> Result<()> {
        let d = self.ambient_dim();
        if x.len() != d {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn constraint(&self, x: &DVector<T>) -> DVector<T> {
        let half: T = lit(0.5);
        match self {
            Manifold::Sphere { radius } => {
                DVector::from_element(1, (x.norm_squared() - *radius * *radius) * half)
            }
            Manifold::Cone { height, radius } => {
                let k = Self::cone_slope(*height, *radius);
                DVector::from_element(1, (x[0] * x[0] + x[1] * x[1] - k * k * x[2] * x[2]) * half)
            }
            Manifold::Affine { origin, normals, .. } => normals.tr_mul(&(x - origin)),
        }
    }

    /// `DF(x)`, a `c × d` matrix.
    pub fn constraint_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        match self {
            Manifold::Sphere { .. } => DMatrix::from_row_slice(1, 3, &[x[0], x[1], x[2]]),
            Manifold::Cone { height, radius } => {
                let k = Self::cone_slope(*height, *radius);
                DMatrix::from_row_slice(1, 3, &[x[0], x[1], -k * k * x[2]])
            }
            Manifold::Affine { normals, .. } => normals.transpose(),
        }
    }

    /// `vᵀ F_γγ(x) v`, one entry per constraint component.
    pub fn constraint_hessian_quad(&self, _x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        match self {
            Manifold::Sphere { .. } => DVector::from_element(1, v.norm_squared()),
            Manifold::Cone { height, radius } => {
                let k = Self::cone_slope(*height, *radius);
                DVector::from_element(1, v[0] * v[0] + v[1] * v[1] - k * k * v[2] * v[2])
            }
            Manifold::Affine { normals, .. } => DVector::zeros(normals.ncols()),
        }
    }

    /// `‖F(x)‖`, plus the nappe condition for the cone.
    pub fn residual(&self, x: &DVector<T>) -> T {
        let r = self.constraint(x).norm();
        match self {
            Manifold::Cone { .. } if x[2] < T::zero() => r + (-x[2]),
            _ => r,
        }
    }

    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        x.len() == self.ambient_dim() && self.residual(x) <= tol
    }

    /// Nearest point on the manifold.
    ///
    /// Closed form for every kind. On the cone the nearest point lies in the
    /// meridian half-plane through `x`, on the generator line there.
    pub fn project(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(x)?;
        match self {
            Manifold::Sphere { radius } => {
                let n = x.norm();
                if n <= T::machine_epsilon() * *radius {
                    return Err(FlowError::DegeneratePoint);
                }
                Ok(x * (*radius / n))
            }
            Manifold::Cone { height, radius } => {
                let k = Self::cone_slope(*height, *radius);
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let scale = x.norm().max(T::one());
                if rho <= T::machine_epsilon() * scale {
                    return Err(FlowError::DegeneratePoint);
                }
                let norm_g = (T::one() + k * k).sqrt();
                // generator direction (k, 1)/‖·‖ in the (rho, z) half-plane
                let s = (rho * k + x[2]) / norm_g;
                if s <= T::machine_epsilon() * scale {
                    return Err(FlowError::DegeneratePoint);
                }
                let z = s / norm_g;
                let r = k * z;
                Ok(DVector::from_vec(vec![x[0] / rho * r, x[1] / rho * r, z]))
            }
            Manifold::Affine { origin, basis, .. } => {
                let c = basis.tr_mul(&(x - origin));
                Ok(origin + basis * c)
            }
        }
    }

    /// Orthonormal basis of `T_x M`.
    pub fn tangent_basis(&self, x: &DVector<T>) -> Result<TangentFrame<T>> {
        self.check_dim(x)?;
        if let Manifold::Affine { basis, .. } = self {
            return Ok(TangentFrame {
                base_point: x.clone(),
                basis: basis.clone(),
            });
        }
        let df = self.constraint_jacobian(x);
        let scale = x.norm().max(T::one());
        let mut normals: Vec<DVector<T>> = Vec::new();
        for row in df.row_iter() {
            let mut r: DVector<T> = row.transpose();
            for q in &normals {
                let p = q.dot(&r);
                r -= q * p;
            }
            let n = r.norm();
            if n <= lit::<T>(1e-10) * scale {
                return Err(FlowError::RankDeficient);
            }
            normals.push(r / n);
        }
        let cols = orthonormal_complement(&normals, self.ambient_dim());
        Ok(TangentFrame {
            base_point: x.clone(),
            basis: DMatrix::from_columns(&cols),
        })
    }

    /// Removes the normal component of `v` at `x`.
    pub fn project_tangent(&self, x: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.tangent_basis(x)?.project(v))
    }

    /// Point reached at time 1 along the geodesic with initial velocity `v`.
    pub fn exp(&self, x: &DVector<T>, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(x)?;
        match self {
            Manifold::Sphere { radius } => {
                let n = v.norm();
                if n == T::zero() {
                    return Ok(x.clone());
                }
                let theta = n / *radius;
                Ok(x * theta.cos() + v * (*radius * theta.sin() / n))
            }
            Manifold::Cone { height, radius } => {
                let dev = ConeDevelopment::new(*height, *radius);
                let (s, phi) = dev.polar(x)?;
                let (wr, wa) = dev.planar_components(phi, v);
                let p = (s, T::zero());
                let q = (s + wr, wa);
                // the straight segment must avoid the apex
                let seg = (wr, wa);
                let len2 = wr * wr + wa * wa;
                if len2 > T::zero() {
                    let tproj = (-(p.0 * seg.0 + p.1 * seg.1) / len2).max(T::zero()).min(T::one());
                    let cx = p.0 + seg.0 * tproj;
                    let cy = p.1 + seg.1 * tproj;
                    if (cx * cx + cy * cy).sqrt() <= lit::<T>(1e-12) * s.max(T::one()) {
                        return Err(FlowError::RankDeficient);
                    }
                }
                Ok(dev.undevelop(q, phi))
            }
            Manifold::Affine { basis, .. } => Ok(x + basis * basis.tr_mul(v)),
        }
    }

    /// Unit-speed geodesic from `x` in direction `v`, evaluated at arc length `t`.
    pub fn geodesic(&self, x: &DVector<T>, v: &DVector<T>, t: T) -> Result<DVector<T>> {
        let n = v.norm();
        if n == T::zero() {
            return Err(FlowError::InvalidInput("geodesic direction is zero".into()));
        }
        self.exp(x, &(v * (t / n)))
    }

    /// Initial velocity of the minimizing geodesic from `x` reaching `y` at time 1.
    pub fn log(&self, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        match self {
            Manifold::Sphere { radius } => {
                let r2 = *radius * *radius;
                let c = (x.dot(y) / r2).max(-T::one()).min(T::one());
                let w = y - x * c;
                let wn = w.norm();
                if c <= lit::<T>(-1.0 + 1e-12) {
                    return Err(FlowError::NonUniqueGeodesic);
                }
                if wn == T::zero() {
                    return Ok(DVector::zeros(3));
                }
                let theta = (wn / *radius).atan2(c);
                Ok(w * (theta * *radius / wn))
            }
            Manifold::Cone { height, radius } => {
                let dev = ConeDevelopment::new(*height, *radius);
                let (sx, phix) = dev.polar(x)?;
                let sy = y.norm();
                if sy == T::zero() {
                    return Ok(dev.radial(phix) * (-sx));
                }
                let phiy = y[1].atan2(y[0]);
                let dphi = wrap_angle(phiy - phix);
                if (dphi.abs() - T::pi()).abs() <= lit(1e-12) {
                    return Err(FlowError::NonUniqueGeodesic);
                }
                let psi = dphi * dev.kappa;
                let wr = sy * psi.cos() - sx;
                let wa = sy * psi.sin();
                Ok(dev.radial(phix) * wr + dev.azimuthal(phix) * wa)
            }
            Manifold::Affine { basis, .. } => Ok(basis * basis.tr_mul(&(y - x))),
        }
    }

    pub fn distance(&self, x: &DVector<T>, y: &DVector<T>) -> Result<T> {
        Ok(self.log(x, y)?.norm())
    }

    /// Parallel transport of the tangent vector `v` at `x` to `y` along the
    /// minimizing geodesic.
    pub fn parallel_transport(&self, v: &DVector<T>, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        match self {
            Manifold::Sphere { radius } => {
                let xh = x / *radius;
                let yh = y / *radius;
                let c = xh.dot(&yh);
                if c <= lit::<T>(-1.0 + 1e-12) {
                    return Err(FlowError::NonUniqueGeodesic);
                }
                let coef = yh.dot(v) / (T::one() + c);
                Ok(v - (xh + yh) * coef)
            }
            Manifold::Cone { height, radius } => {
                let dev = ConeDevelopment::new(*height, *radius);
                let (_, phix) = dev.polar(x)?;
                let (_, phiy) = dev.polar(y)?;
                let dphi = wrap_angle(phiy - phix);
                if (dphi.abs() - T::pi()).abs() <= lit(1e-12) {
                    return Err(FlowError::NonUniqueGeodesic);
                }
                let (wr, wa) = dev.planar_components(phix, v);
                let psi = dphi * dev.kappa;
                let (sn, cs) = psi.sin_cos();
                let r_y = wr * cs + wa * sn;
                let a_y = -wr * sn + wa * cs;
                Ok(dev.radial(phiy) * r_y + dev.azimuthal(phiy) * a_y)
            }
            Manifold::Affine { basis, .. } => Ok(basis * basis.tr_mul(v)),
        }
    }

    /// The same manifold after the ambient dilation `x ↦ factor · x`.
    pub fn scaled(&self, factor: T) -> Self {
        match self {
            Manifold::Sphere { radius } => Manifold::Sphere {
                radius: *radius * factor,
            },
            Manifold::Cone { height, radius } => Manifold::Cone {
                height: *height * factor,
                radius: *radius * factor,
            },
            Manifold::Affine {
                origin,
                basis,
                normals,
            } => Manifold::Affine {
                origin: origin * factor,
                basis: basis.clone(),
                normals: normals.clone(),
            },
        }
    }
}

/// Isometric unrolling of a cone onto the plane.
///
/// A point at distance `s` from the apex and azimuth `φ` maps to polar
/// coordinates `(s, κ (φ - φ_ref))` where `κ = R / √(R² + H²)` is the sine of
/// the half-opening angle.
#[derive(Debug, Clone, Copy)]
pub struct ConeDevelopment<T: Scalar> {
    slope: T,
    kappa: T,
}

impl<T: Scalar> ConeDevelopment<T> {
    pub fn new(height: T, radius: T) -> Self {
        let slope = radius / height;
        let kappa = slope / (T::one() + slope * slope).sqrt();
        Self { slope, kappa }
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// Slant distance from the apex and azimuth of a cone point.
    pub fn polar(&self, x: &DVector<T>) -> Result<(T, T)> {
        let s = x.norm();
        if s <= lit::<T>(1e-12) {
            return Err(FlowError::RankDeficient);
        }
        Ok((s, x[1].atan2(x[0])))
    }

    fn norm_g(&self) -> T {
        (T::one() + self.slope * self.slope).sqrt()
    }

    /// Unit generator direction (pointing away from the apex) at azimuth `φ`.
    pub fn radial(&self, phi: T) -> DVector<T> {
        let g = self.norm_g();
        DVector::from_vec(vec![self.slope * phi.cos() / g, self.slope * phi.sin() / g, T::one() / g])
    }

    pub fn azimuthal(&self, phi: T) -> DVector<T> {
        DVector::from_vec(vec![-phi.sin(), phi.cos(), T::zero()])
    }

    fn planar_components(&self, phi: T, v: &DVector<T>) -> (T, T) {
        (self.radial(phi).dot(v), self.azimuthal(phi).dot(v))
    }

    /// Planar image of `x` in the chart whose zero angle is azimuth `phi_ref`.
    pub fn develop(&self, x: &DVector<T>, phi_ref: T) -> Result<(T, T)> {
        let (s, phi) = self.polar(x)?;
        let psi = wrap_angle(phi - phi_ref) * self.kappa;
        Ok((s * psi.cos(), s * psi.sin()))
    }

    /// Inverse of [`develop`](Self::develop).
    pub fn undevelop(&self, p: (T, T), phi_ref: T) -> DVector<T> {
        let s = (p.0 * p.0 + p.1 * p.1).sqrt();
        let psi = p.1.atan2(p.0);
        let phi = phi_ref + psi / self.kappa;
        let z = s / self.norm_g();
        let r = self.slope * z;
        DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    fn random_sphere_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        let v = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        v.normalize()
    }

    fn random_cone_point(rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z: f64 = rng.random_range(0.1..1.0);
        let phi: f64 = rng.random_range(-3.1..3.1);
        v3(z * phi.cos(), z * phi.sin(), z)
    }

    fn manifolds() -> Vec<Manifold<f64>> {
        vec![
            Manifold::unit_sphere(),
            Manifold::unit_cone(),
            Manifold::cone(2.0, 0.7).unwrap(),
            Manifold::affine(v3(0.0, 0.0, 1.0), &[v3(1.0, 1.0, 0.0), v3(0.0, 1.0, 1.0)]).unwrap(),
        ]
    }

    fn random_point(m: &Manifold<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match m {
            Manifold::Sphere { .. } => random_sphere_point(rng),
            Manifold::Cone { height, radius } => {
                let p = random_cone_point(rng);
                let k = radius / height;
                v3(p[0] * k, p[1] * k, p[2])
            }
            Manifold::Affine { .. } => {
                let x = v3(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                m.project(&x).unwrap()
            }
        }
    }

    fn random_tangent(m: &Manifold<f64>, x: &DVector<f64>, rng: &mut ChaCha8Rng, scale: f64) -> DVector<f64> {
        let v = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        m.project_tangent(x, &v).unwrap() * scale
    }

    #[test]
    fn sphere_projection_examples() {
        let s = Manifold::<f64>::unit_sphere();
        assert_eq!(s.project(&v3(2.0, 0.0, 0.0)).unwrap(), v3(1.0, 0.0, 0.0));
        assert_eq!(s.project(&v3(0.0, 0.0, 0.0)), Err(FlowError::DegeneratePoint));
    }

    #[test]
    fn cone_projection_fixes_cone_points() {
        let c = Manifold::<f64>::unit_cone();
        let p = c.project(&v3(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p, v3(1.0, 0.0, 1.0), epsilon = 1e-15);
        assert_eq!(c.project(&v3(0.0, 0.0, 2.0)), Err(FlowError::DegeneratePoint));
        // below the apex along the lower generator: nearest point is the apex
        assert_eq!(c.project(&v3(-1.0, 0.0, -3.0)), Err(FlowError::DegeneratePoint));
    }

    #[test]
    fn cone_projection_is_stationary() {
        // y - x must be normal to the cone at y
        let c = Manifold::<f64>::cone(1.5, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0));
            let y = match c.project(&x) {
                Ok(y) => y,
                Err(_) => continue,
            };
            assert!(c.residual(&y) <= 1e-12);
            let frame = c.tangent_basis(&y).unwrap();
            assert!(frame.coordinates(&(&x - &y)).norm() <= 1e-12);
            // brute-force check against nearby cone points
            let d0 = (&x - &y).norm();
            for _ in 0..20 {
                let t = frame.ambient(&DVector::from_vec(vec![rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)]));
                let z = c.project(&(&y + t)).unwrap();
                assert!((&x - &z).norm() >= d0 - 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in manifolds() {
            for _ in 0..100 {
                let x = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.05..1.0));
                let p = m.project(&x).unwrap();
                let pp = m.project(&p).unwrap();
                assert!((&p - &pp).norm() <= 1e-12);
                assert!(m.residual(&p) <= 1e-12);
            }
        }
    }

    #[test]
    fn tangent_basis_examples() {
        let s = Manifold::<f64>::unit_sphere();
        let f = s.tangent_basis(&v3(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(f.basis.column(0).into_owned(), v3(1.0, 0.0, 0.0));
        assert_relative_eq!(f.basis.column(1).into_owned(), v3(0.0, 1.0, 0.0));

        let a = Manifold::affine(v3(0.0, 0.0, 0.0), &[v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)]).unwrap();
        let f = a.tangent_basis(&v3(3.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(f.basis, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));

        let c = Manifold::<f64>::unit_cone();
        assert_eq!(c.tangent_basis(&v3(0.0, 0.0, 0.0)), Err(FlowError::RankDeficient));
    }

    #[test]
    fn tangent_frames_are_orthonormal_and_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in manifolds() {
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let f = m.tangent_basis(&x).unwrap();
                let gram = f.basis.tr_mul(&f.basis);
                assert!((gram - DMatrix::identity(f.dim(), f.dim())).norm() <= 1e-10);
                assert!((m.constraint_jacobian(&x) * &f.basis).norm() <= 1e-8);
                assert_eq!(f.dim(), m.intrinsic_dim());
            }
        }
    }

    #[test]
    fn hessian_quad_matches_finite_difference_of_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in manifolds() {
            for _ in 0..50 {
                let x = random_point(&m, &mut rng);
                let v = random_tangent(&m, &x, &mut rng, 1.0) + v3(0.1, -0.2, 0.3);
                let eps = 1e-5;
                let dp = m.constraint_jacobian(&(&x + &v * eps));
                let dm = m.constraint_jacobian(&(&x - &v * eps));
                let fd = (dp - dm) * &v / (2.0 * eps);
                let exact = m.constraint_hessian_quad(&x, &v);
                let scale = exact.norm().max(1.0);
                assert!((fd - exact).norm() / scale <= 1e-6);
            }
        }
    }

    #[test]
    fn geodesic_examples() {
        let s = Manifold::<f64>::unit_sphere();
        let p = s.geodesic(&v3(1.0, 0.0, 0.0), &v3(0.0, 1.0, 0.0), std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(p, v3(0.0, 1.0, 0.0), epsilon = 1e-15);

        let a = Manifold::<f64>::euclidean(3);
        let x = v3(1.0, 2.0, 3.0);
        let v = v3(0.0, 0.6, 0.8);
        assert_relative_eq!(a.geodesic(&x, &v, 2.0).unwrap(), &x + &v * 2.0);
    }

    #[test]
    fn cone_geodesic_along_generator_is_straight() {
        // development oracle: a radial direction stays on the generator line
        let c = Manifold::<f64>::unit_cone();
        let x = v3(0.5, 0.0, 0.5);
        let g = v3(1.0, 0.0, 1.0) / 2f64.sqrt();
        for &t in &[0.1, 0.3, 0.7] {
            let p = c.geodesic(&x, &g, t).unwrap();
            assert_relative_eq!(p, &x + &g * t, epsilon = 1e-14);
        }
        // inward along the generator through the apex
        assert_eq!(c.geodesic(&x, &(-&g), 1.0), Err(FlowError::RankDeficient));
    }

    #[test]
    fn geodesics_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for m in manifolds() {
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let v = random_tangent(&m, &x, &mut rng, 1.0);
                for &t in &[0.05, 0.2, 0.4] {
                    if let Ok(p) = m.geodesic(&x, &v, t) {
                        assert!(m.constraint(&p).norm() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in manifolds() {
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let y = random_point(&m, &mut rng);
                let l = match m.log(&x, &y) {
                    Ok(l) => l,
                    Err(_) => continue,
                };
                let back = m.exp(&x, &l).unwrap();
                assert!((back - &y).norm() <= 1e-9, "{} round trip", m.name());
            }
        }
    }

    #[test]
    fn cone_development_round_trip() {
        let dev = ConeDevelopment::new(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let x = random_cone_point(&mut rng);
            let phi_ref: f64 = rng.random_range(-3.0..3.0);
            let p = dev.develop(&x, phi_ref).unwrap();
            assert!((dev.undevelop(p, phi_ref) - &x).norm() <= 1e-10);
        }
    }

    #[test]
    fn transport_examples() {
        let s = Manifold::<f64>::unit_sphere();
        let r = s
            .parallel_transport(&v3(0.0, 1.0, 0.0), &v3(1.0, 0.0, 0.0), &v3(0.0, 1.0, 0.0))
            .unwrap();
        assert_relative_eq!(r, v3(-1.0, 0.0, 0.0), epsilon = 1e-15);

        let x = v3(0.0, 0.6, 0.8);
        let v = v3(1.0, 0.0, 0.0);
        assert_eq!(s.parallel_transport(&v, &x, &x).unwrap(), v);
        assert_eq!(
            s.parallel_transport(&v, &x, &(-&x)),
            Err(FlowError::NonUniqueGeodesic)
        );

        let a = Manifold::<f64>::euclidean(2);
        let v2 = DVector::from_vec(vec![0.3, -0.4]);
        let p = DVector::from_vec(vec![1.0, 1.0]);
        let q = DVector::from_vec(vec![-2.0, 5.0]);
        assert_eq!(a.parallel_transport(&v2, &p, &q).unwrap(), v2);
    }

    #[test]
    fn transport_is_isometric_tangent_and_preserves_geodesic_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for m in manifolds() {
            let mut checked = 0;
            while checked < 1000 {
                let x = random_point(&m, &mut rng);
                let y = random_point(&m, &mut rng);
                let v = random_tangent(&m, &x, &mut rng, 2.0);
                let (Ok(w), Ok(lxy), Ok(lyx)) = (m.parallel_transport(&v, &x, &y), m.log(&x, &y), m.log(&y, &x)) else {
                    continue;
                };
                checked += 1;
                assert!((w.norm() - v.norm()).abs() <= 1e-9);
                assert!((m.constraint_jacobian(&y) * &w).norm() <= 1e-9);
                // geodesic tangent at y is -log_y(x); angles are preserved
                if lxy.norm() > 1e-6 {
                    let a0 = v.dot(&lxy) / lxy.norm();
                    let a1 = -w.dot(&lyx) / lyx.norm();
                    assert!((a0 - a1).abs() <= 1e-8, "{}: {a0} vs {a1}", m.name());
                }
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let s = Manifold::<f32>::unit_sphere();
        let x = DVector::from_vec(vec![1.0f32, 0.0, 0.0]);
        let y = DVector::from_vec(vec![0.0f32, 1.0, 0.0]);
        let l = s.log(&x, &y).unwrap();
        assert!((l.norm() - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
        let c = Manifold::<f32>::unit_cone();
        let p = c.project(&DVector::from_vec(vec![1.0f32, 0.0, 0.5])).unwrap();
        assert!(c.residual(&p) < 1e-6);
    }
}

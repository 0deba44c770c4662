//! Principal-direction vector fields estimated from a point cloud.
//!
//! At a point `x` the tangent covariance `Σ_h(x)` averages the outer products
//! of the log-mapped neighbours `Uᵀ log_x(x_i)` inside the kernel window. Its
//! leading eigenvector defines the field direction. Away from the data the
//! field is extended by projecting onto the cloud, estimating there and
//! parallel transporting the direction back.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::curve::DiscreteCurve;
use crate::error::{FlowError, Result};
use crate::geometry::{Manifold, TangentFrame};
use crate::scalar::{from_usize, lit, Scalar};

/// Relative spectral gap below which the leading eigenvector is rejected.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Minimum number of data points entering the local fit of the field Jacobian.
const JACOBIAN_NEIGHBOURS: usize = 8;

/// Points on a manifold plus the mask of points allowed to shape the field.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCloud<T: Scalar> {
    points: Vec<DVector<T>>,
    active: Vec<bool>,
}

impl<T: Scalar> DataCloud<T> {
    pub fn new(points: Vec<DVector<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FlowError::EmptyNeighborhood { found: points.len() });
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        let active = vec![true; points.len()];
        Ok(Self { points, active })
    }

    /// Like [`new`](Self::new) but checks every point against the manifold.
    pub fn on_manifold(points: Vec<DVector<T>>, manifold: &Manifold<T>, tol: T) -> Result<Self> {
        for p in &points {
            if !manifold.contains(p, tol) {
                return Err(FlowError::InvalidInput(format!(
                    "data point off the {} (residual {:e})",
                    manifold.name(),
                    manifold.residual(p).to_f64_lossy()
                )));
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[DVector<T>] {
        &self.points
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_points(&self) -> impl Iterator<Item = (usize, &DVector<T>)> {
        self.points.iter().enumerate().filter(move |(i, _)| self.active[*i])
    }

    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.points.len() {
            return Err(FlowError::DimensionMismatch {
                expected: self.points.len(),
                found: mask.len(),
            });
        }
        let found = mask.iter().filter(|&&a| a).count();
        if found < 2 {
            return Err(FlowError::EmptyNeighborhood { found });
        }
        Ok(Self {
            points: self.points.clone(),
            active: mask,
        })
    }

    /// Largest pairwise ambient distance among active points.
    pub fn diameter(&self) -> T {
        let pts: Vec<&DVector<T>> = self.active_points().map(|(_, p)| p).collect();
        let mut best = T::zero();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                best = best.max((pts[i] - pts[j]).norm());
            }
        }
        best
    }

    /// The cloud after the dilation `x ↦ factor · x`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            points: self.points.iter().map(|p| p * factor).collect(),
            active: self.active.clone(),
        }
    }

    /// Index of the active point closest (ambient distance) to `x`.
    pub fn nearest_active(&self, x: &DVector<T>) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (i, p) in self.active_points() {
            let d = (p - x).norm_squared();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Indices of the `k` nearest active points, closest first.
    pub fn k_nearest_active(&self, x: &DVector<T>, k: usize) -> Vec<usize> {
        let mut idx: Vec<(usize, T)> = self.active_points().map(|(i, p)| (i, (p - x).norm_squared())).collect();
        idx.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        idx.into_iter().take(k).map(|(i, _)| i).collect()
    }
}

/// Window width of the indicator kernel `κ_h(x, y) = 1(‖x - y‖ ≤ h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth<T: Scalar> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Bandwidth<T> {
    pub fn finite(h: T) -> Result<Self> {
        if h > T::zero() {
            Ok(Bandwidth::Finite(h))
        } else {
            Err(FlowError::InvalidInput("bandwidth must be positive".into()))
        }
    }

    pub fn contains(&self, distance: T) -> bool {
        match self {
            Bandwidth::Finite(h) => distance <= *h,
            Bandwidth::Infinite => true,
        }
    }

    pub fn value(&self) -> Option<T> {
        match self {
            Bandwidth::Finite(h) => Some(*h),
            Bandwidth::Infinite => None,
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        match self {
            Bandwidth::Finite(h) => Bandwidth::Finite(*h * factor),
            Bandwidth::Infinite => Bandwidth::Infinite,
        }
    }
}

/// Tangent covariance `Σ_h(x)` in the coordinates of `frame`, with the number
/// of points that fell inside the window.
pub fn local_covariance<T: Scalar>(
    x: &DVector<T>,
    cloud: &DataCloud<T>,
    bandwidth: Bandwidth<T>,
    frame: &TangentFrame<T>,
    manifold: &Manifold<T>,
) -> Result<(DMatrix<T>, usize)> {
    let m = frame.dim();
    let mut sigma = DMatrix::zeros(m, m);
    let mut count = 0usize;
    for (_, p) in cloud.active_points() {
        if !bandwidth.contains((p - x).norm()) {
            continue;
        }
        let c = frame.coordinates(&manifold.log(x, p)?);
        sigma += &c * c.transpose();
        count += 1;
    }
    if count < 2 {
        return Err(FlowError::EmptyNeighborhood { found: count });
    }
    Ok((sigma / from_usize::<T>(count), count))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T: Scalar> {
    pub values: Vec<T>,
    /// Unit eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn leading(&self) -> DVector<T> {
        self.vectors.column(0).into_owned()
    }
}

/// Full spectrum of `sigma`, sorted descending, each eigenvector signed so its
/// first non-negligible component is positive.
pub fn spectrum<T: Scalar>(sigma: &DMatrix<T>) -> Spectrum<T> {
    let m = sigma.nrows();
    let sym = (sigma + sigma.transpose()) * lit::<T>(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<DVector<T>> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let tol = lit::<T>(1e-12);
            match v.iter().find(|c| c.abs() > tol) {
                Some(c) if *c < T::zero() => -v,
                _ => v,
            }
        })
        .collect();
    Spectrum {
        values,
        vectors: DMatrix::from_columns(&cols),
    }
}

/// Leading eigenpair of `sigma`; fails when `λ₁ - λ₂ ≤ gap_tol · λ₁`.
pub fn leading_eigenpair<T: Scalar>(sigma: &DMatrix<T>, gap_tol: T) -> Result<Spectrum<T>> {
    let s = spectrum(sigma);
    if s.values.len() >= 2 {
        let (l1, l2) = (s.values[0], s.values[1]);
        if l1 - l2 <= gap_tol * l1.abs() {
            return Err(FlowError::SpectralGapTooSmall {
                lambda1: l1.to_f64_lossy(),
                lambda2: l2.to_f64_lossy(),
            });
        }
    } else if s.values.first().is_none_or(|l| *l <= T::zero()) {
        return Err(FlowError::ZeroLeadingEigenvalue);
    }
    Ok(s)
}

/// Flips `w` to agree with `reference`; an exactly orthogonal `w` is kept.
pub fn orient<T: Scalar>(w: &DVector<T>, reference: &DVector<T>) -> DVector<T> {
    if w.dot(reference) < T::zero() {
        -w
    } else {
        w.clone()
    }
}

/// A (not necessarily normalized) direction field on the ambient space.
pub trait DirectionField<T: Scalar>: Sync {
    fn direction(&self, x: &DVector<T>) -> Result<DVector<T>>;

    /// Jacobian of the field at `x`, oriented along `reference`, on the
    /// length scale `scale`. Central finite differences by default.
    fn jacobian(&self, x: &DVector<T>, reference: &DVector<T>, scale: T) -> Result<DMatrix<T>> {
        field_jacobian(self, x, Some(reference), scale)
    }
}

/// Field given by a closure; used for analytic and synthetic fields.
pub struct FnField<F>(pub F);

impl<T: Scalar, F> DirectionField<T> for FnField<F>
where
    F: Fn(&DVector<T>) -> Result<DVector<T>> + Sync,
{
    fn direction(&self, x: &DVector<T>) -> Result<DVector<T>> {
        (self.0)(x)
    }
}

/// The same vector everywhere.
#[derive(Debug, Clone)]
pub struct ConstantField<T: Scalar>(pub DVector<T>);

impl<T: Scalar> DirectionField<T> for ConstantField<T> {
    fn direction(&self, _x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.0.clone())
    }
}

/// How a curve point is moved into the data before the covariance is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudProjection {
    /// The single nearest active point.
    Nearest,
    /// Mean of the `k` nearest active points, projected onto the manifold.
    LocalMean { k: usize },
}

/// Field sample at a point: direction, spectrum and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSample<T: Scalar> {
    pub base_point: DVector<T>,
    /// Unit leading direction, tangent at `base_point`.
    pub direction: DVector<T>,
    /// `λ₁ ≥ λ₂ ≥ … ≥ λ_m`.
    pub eigenvalues: Vec<T>,
    /// Ambient eigenvectors at `base_point`, `d × m`; column 0 equals `direction`.
    pub eigenvectors: DMatrix<T>,
    pub neighbor_count: usize,
    /// Where the covariance was actually estimated.
    pub projected_point: DVector<T>,
}

impl<T: Scalar> VectorFieldSample<T> {
    /// The same sample with its direction (and leading eigenvector) flipped
    /// to agree with `reference`.
    pub fn oriented(mut self, reference: &DVector<T>) -> Self {
        if self.direction.dot(reference) < T::zero() {
            self.direction = -self.direction;
            let mut c = self.eigenvectors.column_mut(0);
            c.neg_mut();
        }
        self
    }
}

#[derive(Debug, Clone)]
struct LocalEstimate<T: Scalar> {
    eigenvalues: Vec<T>,
    /// Ambient eigenvectors at the estimation point.
    eigenvectors: DMatrix<T>,
    neighbor_count: usize,
}

/// Vector field estimated from a data cloud with the projection modification.
pub struct DataField<T: Scalar> {
    manifold: Manifold<T>,
    cloud: DataCloud<T>,
    bandwidth: Bandwidth<T>,
    projection: CloudProjection,
    gap_tol: T,
    cache: Vec<OnceLock<Result<LocalEstimate<T>>>>,
}

impl<T: Scalar> DataField<T> {
    pub fn new(manifold: Manifold<T>, cloud: DataCloud<T>, bandwidth: Bandwidth<T>) -> Self {
        let n = cloud.len();
        Self {
            manifold,
            cloud,
            bandwidth,
            projection: CloudProjection::Nearest,
            gap_tol: lit(DEFAULT_GAP_TOL),
            cache: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn with_projection(mut self, projection: CloudProjection) -> Self {
        self.projection = projection;
        self
    }

    pub fn with_gap_tol(mut self, gap_tol: T) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn manifold(&self) -> &Manifold<T> {
        &self.manifold
    }

    pub fn cloud(&self) -> &DataCloud<T> {
        &self.cloud
    }

    pub fn bandwidth(&self) -> Bandwidth<T> {
        self.bandwidth
    }

    fn estimate(&self, at: &DVector<T>) -> Result<LocalEstimate<T>> {
        let frame = self.manifold.tangent_basis(at)?;
        let (sigma, count) = local_covariance(at, &self.cloud, self.bandwidth, &frame, &self.manifold)?;
        let spec = leading_eigenpair(&sigma, self.gap_tol)?;
        Ok(LocalEstimate {
            eigenvalues: spec.values,
            eigenvectors: &frame.basis * spec.vectors,
            neighbor_count: count,
        })
    }

    fn estimate_at_point(&self, index: usize) -> Result<LocalEstimate<T>> {
        self.cache[index]
            .get_or_init(|| self.estimate(&self.cloud.points()[index]))
            .clone()
    }

    /// Unoriented field sample at `x` (projected onto the manifold first).
    pub fn sample(&self, x: &DVector<T>) -> Result<VectorFieldSample<T>> {
        let on = self.manifold.project(x)?;
        let (target, est) = match self.projection {
            CloudProjection::Nearest => {
                let i = self
                    .cloud
                    .nearest_active(&on)
                    .ok_or(FlowError::EmptyNeighborhood { found: 0 })?;
                (self.cloud.points()[i].clone(), self.estimate_at_point(i)?)
            }
            CloudProjection::LocalMean { k } => {
                let idx = self.cloud.k_nearest_active(&on, k.max(1));
                if idx.is_empty() {
                    return Err(FlowError::EmptyNeighborhood { found: 0 });
                }
                let mut mean = DVector::zeros(on.len());
                for &i in &idx {
                    mean += &self.cloud.points()[i];
                }
                mean /= from_usize::<T>(idx.len());
                let target = self.manifold.project(&mean)?;
                let est = self.estimate(&target)?;
                (target, est)
            }
        };
        let m = est.eigenvectors.ncols();
        let mut cols = Vec::with_capacity(m);
        for j in 0..m {
            let e = est.eigenvectors.column(j).into_owned();
            let moved = self.manifold.parallel_transport(&e, &target, &on)?;
            let n = moved.norm();
            cols.push(if n > T::zero() { moved / n } else { moved });
        }
        let eigenvectors = DMatrix::from_columns(&cols);
        Ok(VectorFieldSample {
            base_point: on,
            direction: eigenvectors.column(0).into_owned(),
            eigenvalues: est.eigenvalues,
            eigenvectors,
            neighbor_count: est.neighbor_count,
            projected_point: target,
        })
    }
}

impl<T: Scalar> DirectionField<T> for DataField<T> {
    fn direction(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.sample(x)?.direction)
    }

    /// Weighted local linear fit of the data directions around `x`.
    ///
    /// The nearest-point field is piecewise constant, so its difference
    /// quotients jump whenever a probe crosses into another data point's
    /// cell. Instead, every active point `x_j` within `scale` (widened to 1.5
    /// times the distance of the eighth nearest point) contributes its
    /// leading eigenvector, transported to `x` and oriented along
    /// `reference`, with weight `(1 - r²/scale²)²`. The slope of the fit in
    /// tangent coordinates gives `J = U A Uᵀ`, which varies continuously with
    /// `x`. A small ridge term sets the slope to zero in directions the data
    /// do not span.
    fn jacobian(&self, x: &DVector<T>, reference: &DVector<T>, scale: T) -> Result<DMatrix<T>> {
        let on = self.manifold.project(x)?;
        let frame = self.manifold.tangent_basis(&on)?;
        let m = frame.dim();
        // Far from the data the window widens to reach the nearest points;
        // the k-th neighbour distance is continuous in x.
        let knn = self.cloud.k_nearest_active(&on, JACOBIAN_NEIGHBOURS);
        let reach = knn
            .last()
            .map(|&i| (&self.cloud.points()[i] - &on).norm() * lit::<T>(1.5))
            .unwrap_or_else(T::zero);
        let radius = scale.max(reach);
        let r2 = radius * radius;
        let mut ata = DMatrix::zeros(m + 1, m + 1);
        let mut aty = DMatrix::zeros(m + 1, m);
        let mut total = T::zero();
        let mut count = 0usize;
        for (j, p) in self.cloud.active_points() {
            let d2 = (p - &on).norm_squared();
            if d2 >= r2 {
                continue;
            }
            let Ok(est) = self.estimate_at_point(j) else {
                continue;
            };
            let w = (T::one() - d2 / r2).powi(2);
            let e = est.eigenvectors.column(0).into_owned();
            let moved = self.manifold.parallel_transport(&e, p, &on)?;
            let y = frame.coordinates(&orient(&moved, reference));
            let z = frame.coordinates(&self.manifold.log(&on, p)?);
            let mut row = DVector::zeros(m + 1);
            row[0] = T::one();
            row.rows_mut(1, m).copy_from(&z);
            ata += &row * row.transpose() * w;
            aty += &row * y.transpose() * w;
            total += w;
            count += 1;
        }
        if count < m + 1 {
            return Err(FlowError::EmptyNeighborhood { found: count });
        }
        let ridge = lit::<T>(1e-3) * total * r2;
        for l in 1..=m {
            ata[(l, l)] += ridge;
        }
        let coef = ata
            .cholesky()
            .ok_or(FlowError::EmptyNeighborhood { found: count })?
            .solve(&aty);
        let a = coef.rows(1, m).transpose();
        Ok(&frame.basis * a * frame.basis.transpose())
    }
}

/// Field sample at `x`, oriented to agree with `reference`.
pub fn field_at<T: Scalar>(field: &DataField<T>, x: &DVector<T>, reference: &DVector<T>) -> Result<VectorFieldSample<T>> {
    Ok(field.sample(x)?.oriented(reference))
}

/// Central finite-difference Jacobian `∂W/∂x` of an ambient field.
///
/// With `reference` set, the centre and every probe are oriented
/// consistently: the centre against `reference`, the probes against the
/// centre.
pub fn field_jacobian<T: Scalar, F: DirectionField<T> + ?Sized>(
    field: &F,
    x: &DVector<T>,
    reference: Option<&DVector<T>>,
    step: T,
) -> Result<DMatrix<T>> {
    let d = x.len();
    let centre = match reference {
        Some(r) => Some(orient(&field.direction(x)?, r)),
        None => None,
    };
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let mut wp = field.direction(&xp)?;
        let mut wm = field.direction(&xm)?;
        if let Some(c) = &centre {
            wp = orient(&wp, c);
            wm = orient(&wm, c);
        }
        jac.set_column(j, &((wp - wm) / (step + step)));
    }
    Ok(jac)
}

/// Restricts the active set to points within ambient distance `radius` of the
/// polyline through the curve nodes.
pub fn truncate_cloud<T: Scalar>(cloud: &DataCloud<T>, curve: &DiscreteCurve<T>, radius: Bandwidth<T>) -> Result<DataCloud<T>> {
    let mask: Vec<bool> = match radius {
        Bandwidth::Infinite => vec![true; cloud.len()],
        Bandwidth::Finite(r) => cloud
            .points()
            .iter()
            .map(|p| distance_to_polyline(p, &curve.points) <= r)
            .collect(),
    };
    cloud.with_mask(mask)
}

/// Ambient distance from `p` to the polyline through `nodes`.
pub fn distance_to_polyline<T: Scalar>(p: &DVector<T>, nodes: &[DVector<T>]) -> T {
    if nodes.len() == 1 {
        return (p - &nodes[0]).norm();
    }
    nodes
        .windows(2)
        .map(|w| distance_to_segment(p, &w[0], &w[1]))
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

pub fn distance_to_segment<T: Scalar>(p: &DVector<T>, a: &DVector<T>, b: &DVector<T>) -> T {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == T::zero() {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / l2).max(T::zero()).min(T::one());
    (p - (a + ab * t)).norm()
}

/// `λ₁` of the local covariance taken directly at each grid point.
///
/// Failures are reported per point.
pub fn lambda1_landscape<T: Scalar>(
    grid: &[DVector<T>],
    cloud: &DataCloud<T>,
    bandwidth: Bandwidth<T>,
    manifold: &Manifold<T>,
) -> Vec<(DVector<T>, Result<T>)> {
    grid.iter()
        .map(|x| {
            let value = (|| {
                let on = manifold.project(x)?;
                let frame = manifold.tangent_basis(&on)?;
                let (sigma, _) = local_covariance(&on, cloud, bandwidth, &frame, manifold)?;
                Ok(spectrum(&sigma).values[0])
            })();
            (x.clone(), value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    fn plane() -> Manifold<f64> {
        Manifold::euclidean(2)
    }

    fn line_cloud() -> DataCloud<f64> {
        DataCloud::new(vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(2.0, 0.0)]).unwrap()
    }

    fn frame_at(m: &Manifold<f64>, x: &DVector<f64>) -> TangentFrame<f64> {
        m.tangent_basis(x).unwrap()
    }

    #[test]
    fn covariance_examples() {
        let m = plane();
        let cloud = line_cloud();
        let x = v2(1.0, 0.0);
        let (s, n) = local_covariance(&x, &cloud, Bandwidth::Infinite, &frame_at(&m, &x), &m).unwrap();
        assert_eq!(n, 3);
        assert_relative_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);

        let x0 = v2(0.0, 0.0);
        let (s, _) = local_covariance(&x0, &cloud, Bandwidth::Infinite, &frame_at(&m, &x0), &m).unwrap();
        assert_relative_eq!(s, DMatrix::from_row_slice(2, 2, &[5.0 / 3.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);

        let r = local_covariance(&v2(-0.9, 0.0), &cloud, Bandwidth::Finite(1.0), &frame_at(&m, &x0), &m);
        assert_eq!(r, Err(FlowError::EmptyNeighborhood { found: 1 }));
    }

    #[test]
    fn eigenpair_examples() {
        let s = leading_eigenpair(&DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 0.0, 0.0, 0.0]), 1e-6).unwrap();
        assert_relative_eq!(s.values[0], 2.0 / 3.0);
        assert_relative_eq!(s.leading(), v2(1.0, 0.0));

        assert!(matches!(
            leading_eigenpair(&DMatrix::<f64>::identity(2, 2), 1e-6),
            Err(FlowError::SpectralGapTooSmall { .. })
        ));

        let v = v3(1.0, -2.0, 2.0) / 3.0;
        let s = leading_eigenpair(&(&v * v.transpose()), 1e-6).unwrap();
        assert_relative_eq!(s.values[0], 1.0, epsilon = 1e-12);
        assert!(s.values[1].abs() < 1e-12);
        assert!((s.leading().dot(&v).abs() - 1.0).abs() < 1e-12);
        // sign convention: first nonzero component positive
        assert!(s.leading()[0] > 0.0);
    }

    #[test]
    fn orient_examples() {
        let r = v3(1.0, 0.0, 0.0);
        assert_eq!(orient(&v3(-1.0, 0.0, 0.0), &r), v3(1.0, 0.0, 0.0));
        assert_eq!(orient(&v3(1.0, 0.0, 0.0), &r), v3(1.0, 0.0, 0.0));
        assert_eq!(orient(&v3(0.0, 1.0, 0.0), &r), v3(0.0, 1.0, 0.0));
    }

    #[test]
    fn field_at_cloud_point_is_oriented_leading_direction() {
        let m = plane();
        let cloud = DataCloud::new(vec![v2(0.0, 0.0), v2(1.0, 0.1), v2(2.0, 0.0), v2(1.0, -0.1)]).unwrap();
        let f = DataField::new(m.clone(), cloud.clone(), Bandwidth::Infinite);
        let x = v2(1.0, 0.1);
        let s = field_at(&f, &x, &v2(-1.0, 0.0)).unwrap();
        assert_eq!(s.projected_point, x);
        let frame = frame_at(&m, &x);
        let (sigma, _) = local_covariance(&x, &cloud, Bandwidth::Infinite, &frame, &m).unwrap();
        let e1 = orient(&spectrum(&sigma).leading(), &v2(-1.0, 0.0));
        assert_relative_eq!(s.direction, e1, epsilon = 1e-14);
    }

    #[test]
    fn collinear_cloud_gives_axis_field_everywhere() {
        let f = DataField::new(plane(), line_cloud(), Bandwidth::Infinite);
        for x in [v2(0.3, 2.0), v2(-5.0, -1.0), v2(1.7, 0.01)] {
            assert_relative_eq!(field_at(&f, &x, &v2(-1.0, 0.3)).unwrap().direction, v2(-1.0, 0.0));
            assert_relative_eq!(field_at(&f, &x, &v2(1.0, 0.3)).unwrap().direction, v2(1.0, 0.0));
        }
    }

    #[test]
    fn far_point_with_small_window_is_empty() {
        let f = DataField::new(plane(), line_cloud(), Bandwidth::Finite(0.5));
        assert!(matches!(
            f.sample(&v2(10.0, 3.0)),
            Err(FlowError::EmptyNeighborhood { .. })
        ));
    }

    #[test]
    fn sphere_field_is_tangent_and_unit() {
        let m = Manifold::<f64>::unit_sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> = (0..200)
            .map(|_| {
                let t: f64 = rng.random_range(-1.0..1.0);
                let e: f64 = rng.random_range(-0.05..0.05);
                m.project(&v3(t.cos(), t.sin(), e)).unwrap()
            })
            .collect();
        let f = DataField::new(m.clone(), DataCloud::new(pts).unwrap(), Bandwidth::Finite(0.4));
        for _ in 0..50 {
            let t: f64 = rng.random_range(-0.8..0.8);
            let x = m.project(&v3(t.cos(), t.sin(), rng.random_range(-0.2..0.2))).unwrap();
            let s = f.sample(&x).unwrap();
            assert!((s.direction.norm() - 1.0).abs() <= 1e-10);
            assert!((m.constraint_jacobian(&x) * &s.direction).norm() <= 1e-8);
            // roughly along the equator
            assert!(s.direction[2].abs() < 0.3);
        }
    }

    #[test]
    fn jacobian_examples() {
        let x = v3(0.3, -0.2, 0.5);
        let c = ConstantField(v3(0.0, 1.0, 0.0));
        assert!(field_jacobian(&c, &x, None, 1e-4).unwrap().norm() <= 1e-8);

        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 0.2, -2.0]);
        let a2 = a.clone();
        let lin = FnField(move |x: &DVector<f64>| Ok(&a2 * x));
        let j = field_jacobian(&lin, &x, None, 1e-4).unwrap();
        assert!((j - a).norm() <= 1e-9);

        // gradient field of φ = x² y + sin z: its Jacobian is a Hessian
        let grad = FnField(|x: &DVector<f64>| Ok(v3(2.0 * x[0] * x[1], x[0] * x[0], x[2].cos())));
        let j = field_jacobian(&grad, &x, None, 1e-4).unwrap();
        assert!((&j - j.transpose()).norm() <= 1e-7);
    }

    #[test]
    fn truncation_examples() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(v2(i as f64 * 0.1, 0.0));
            pts.push(v2(i as f64 * 0.1, 1.0));
        }
        let cloud = DataCloud::new(pts).unwrap();
        let curve = DiscreteCurve::from_points(vec![v2(0.0, 0.0), v2(0.9, 0.0)]).unwrap();
        assert_eq!(truncate_cloud(&cloud, &curve, Bandwidth::Infinite).unwrap().active_count(), 20);
        let t = truncate_cloud(&cloud, &curve, Bandwidth::Finite(0.5)).unwrap();
        assert_eq!(t.active_count(), 10);
        assert!(t.active_points().all(|(_, p)| p[1] == 0.0));
        let far = DiscreteCurve::from_points(vec![v2(0.0, 0.5), v2(0.9, 0.5)]).unwrap();
        assert!(matches!(
            truncate_cloud(&cloud, &far, Bandwidth::Finite(0.2)),
            Err(FlowError::EmptyNeighborhood { found: 0 })
        ));
    }

    fn gaussian_cloud(n: usize, seed: u64) -> DataCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = Normal::new(0.0, 1.0).unwrap();
        let ny = Normal::new(0.0, 0.4).unwrap();
        DataCloud::new((0..n).map(|_| v2(nx.sample(&mut rng), ny.sample(&mut rng))).collect()).unwrap()
    }

    fn mean(cloud: &DataCloud<f64>) -> DVector<f64> {
        cloud.points().iter().fold(DVector::zeros(2), |a, p| a + p) / cloud.len() as f64
    }

    #[test]
    fn lambda1_landscape_has_trough_at_mean() {
        let m = plane();
        let cloud = gaussian_cloud(300, 8);
        let xbar = mean(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut grid = vec![xbar.clone()];
        grid.extend((0..100).map(|_| v2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))));
        let out = lambda1_landscape(&grid, &cloud, Bandwidth::Infinite, &m);
        let at_mean = *out[0].1.as_ref().unwrap();
        assert!(out.iter().all(|(_, l)| *l.as_ref().unwrap() >= at_mean - 1e-12));
        assert!(lambda1_landscape(&[], &cloud, Bandwidth::Infinite, &m).is_empty());
    }

    #[test]
    fn lambda1_grows_quadratically_off_a_rank_one_cloud() {
        // cloud on the x-axis with variance s²; at (x̄₁, y) the covariance is
        // diag(s², y²) so λ₁ = max(s², y²)
        let m = plane();
        let cloud = DataCloud::new((0..11).map(|i| v2(i as f64 * 0.1 - 0.5, 0.0)).collect()).unwrap();
        let s2 = cloud.points().iter().map(|p| p[0] * p[0]).sum::<f64>() / 11.0;
        let ys = [1.0, 1.5, 2.0];
        let grid: Vec<_> = ys.iter().map(|&y| v2(0.0, y)).collect();
        for ((_, l), y) in lambda1_landscape(&grid, &cloud, Bandwidth::Infinite, &m).iter().zip(ys) {
            assert_relative_eq!(*l.as_ref().unwrap(), (y * y as f64).max(s2), epsilon = 1e-12);
        }
    }

    #[test]
    fn frame_rotation_leaves_lambda1_unchanged() {
        let m = Manifold::<f64>::unit_sphere();
        let pts: Vec<_> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.05;
                m.project(&v3(t.cos(), t.sin(), 0.1 * (3.0 * t).sin())).unwrap()
            })
            .collect();
        let cloud = DataCloud::new(pts).unwrap();
        let x = cloud.points()[20].clone();
        let frame = frame_at(&m, &x);
        let (s0, _) = local_covariance(&x, &cloud, Bandwidth::Finite(0.6), &frame, &m).unwrap();
        let th: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let rotated = TangentFrame {
            base_point: x.clone(),
            basis: &frame.basis * rot,
        };
        let (s1, _) = local_covariance(&x, &cloud, Bandwidth::Finite(0.6), &rotated, &m).unwrap();
        assert!((spectrum(&s0).values[0] - spectrum(&s1).values[0]).abs() <= 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn orient_is_idempotent(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
            let w = v2(a, b);
            let r = v2(c, d);
            let once = orient(&w, &r);
            proptest::prop_assert_eq!(orient(&once, &r), once);
        }
    }
}

//! Euclidean `h = ∞` theory, scale selection and reparameterization algebra.
//!
//! With every data point in the window the tangent covariance at `x` is the
//! plain second moment `1/n Σ (x_i - x)(x_i - x)ᵀ` and the field is its leading
//! eigenvector. The routines here express such a field in the principal basis
//! `v₁ … v_d` centred at the data mean, check the sign and monotonicity
//! conditions that force the optimal curve through the principal axis, and
//! build the comparison curves `γ_s` and `γ₊` together with an exhaustive
//! lattice search that serves as an independent oracle.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::curve::{DiscreteCurve, Mesh};
use crate::error::{FlowError, Result};
use crate::field::{local_covariance, orient, spectrum, Bandwidth, DataCloud, DirectionField};
use crate::geometry::Manifold;
use crate::scalar::{from_usize, lit, Scalar};

/// Largest number of nodes per axis accepted by [`lattice_oracle`].
pub const MAX_LATTICE_AXIS: usize = 15;
/// Largest lattice dimension accepted by [`lattice_oracle`].
pub const MAX_LATTICE_DIM: usize = 3;

/// Second moment of `points` about `x`.
pub fn sigma_infinity<T: Scalar>(points: &[DVector<T>], x: &DVector<T>) -> Result<DMatrix<T>> {
    if points.len() < 2 {
        return Err(FlowError::EmptyNeighborhood { found: points.len() });
    }
    let d = x.len();
    let mut sigma = DMatrix::zeros(d, d);
    for p in points {
        if p.len() != d {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        let c = p - x;
        sigma += &c * c.transpose();
    }
    Ok(sigma / from_usize::<T>(points.len()))
}

type FieldFn<T> = Arc<dyn Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync>;

/// A unit direction field on `R^d` together with an orthonormal basis whose
/// first vector is the field at the origin `x̄`.
#[derive(Clone)]
pub struct EuclideanField<T: Scalar> {
    origin: DVector<T>,
    basis: DMatrix<T>,
    eval: FieldFn<T>,
}

impl<T: Scalar> std::fmt::Debug for EuclideanField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EuclideanField")
            .field("origin", &self.origin)
            .field("basis", &self.basis)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> EuclideanField<T> {
    /// Field from a closure; the basis is `W(x̄)` completed by Gram-Schmidt
    /// against the standard axes. Returned directions are normalized.
    pub fn from_fn<F>(origin: DVector<T>, f: F) -> Result<Self>
    where
        F: Fn(&DVector<T>) -> DVector<T> + Send + Sync + 'static,
    {
        let eval: FieldFn<T> = Arc::new(move |x: &DVector<T>| normalized(f(x)));
        let v1 = eval(&origin)?;
        let basis = complete_basis(&v1);
        Ok(Self { origin, basis, eval })
    }

    /// Field from a closure with an explicit basis. The columns must be
    /// orthonormal and the first must equal the field at `origin`.
    pub fn with_basis<F>(origin: DVector<T>, basis: DMatrix<T>, f: F) -> Result<Self>
    where
        F: Fn(&DVector<T>) -> DVector<T> + Send + Sync + 'static,
    {
        let d = origin.len();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                found: basis.ncols(),
            });
        }
        let tol = lit::<T>(1e-9);
        let gram = basis.transpose() * &basis - DMatrix::identity(d, d);
        if gram.amax() > tol {
            return Err(FlowError::InvalidInput("basis is not orthonormal".into()));
        }
        let eval: FieldFn<T> = Arc::new(move |x: &DVector<T>| normalized(f(x)));
        let w0 = eval(&origin)?;
        if (w0 - basis.column(0)).amax() > tol {
            return Err(FlowError::InvalidInput("first basis vector must equal W(x̄)".into()));
        }
        Ok(Self { origin, basis, eval })
    }

    /// The `h = ∞` field of a cloud: `x̄` is the mean, the basis the principal
    /// axes at `x̄`, and `W(x)` the leading eigenvector of `Σ_∞(x)` oriented
    /// along `v₁`.
    pub fn from_cloud(points: Vec<DVector<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FlowError::EmptyNeighborhood { found: points.len() });
        }
        let d = points[0].len();
        let mut mean = DVector::zeros(d);
        for p in &points {
            mean += p;
        }
        mean /= from_usize::<T>(points.len());
        let s = spectrum(&sigma_infinity(&points, &mean)?);
        if s.values[0] <= T::zero() {
            return Err(FlowError::ZeroLeadingEigenvalue);
        }
        let basis = s.vectors.clone();
        let v1 = basis.column(0).into_owned();
        let points = Arc::new(points);
        let eval: FieldFn<T> = Arc::new(move |x: &DVector<T>| {
            let sigma = sigma_infinity(&points, x)?;
            Ok(orient(&spectrum(&sigma).leading(), &v1))
        });
        Ok(Self {
            origin: mean,
            basis,
            eval,
        })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &DVector<T> {
        &self.origin
    }

    /// Columns `v₁ … v_d`.
    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn v1(&self) -> DVector<T> {
        self.basis.column(0).into_owned()
    }

    /// Coordinates `z = Vᵀ(x - x̄)`.
    pub fn coords(&self, x: &DVector<T>) -> DVector<T> {
        self.basis.transpose() * (x - &self.origin)
    }

    /// Ambient point with coordinates `z`.
    pub fn point(&self, z: &DVector<T>) -> DVector<T> {
        &self.origin + &self.basis * z
    }

    /// `W(x)` in ambient coordinates.
    pub fn eval(&self, x: &DVector<T>) -> Result<DVector<T>> {
        (self.eval)(x)
    }

    /// `VᵀW` at the point with coordinates `z`.
    pub fn eval_coords(&self, z: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.basis.transpose() * self.eval(&self.point(z))?)
    }
}

impl<T: Scalar> DirectionField<T> for EuclideanField<T> {
    fn direction(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.eval(x)
    }
}

fn normalized<T: Scalar>(w: DVector<T>) -> Result<DVector<T>> {
    let n = w.norm();
    if n <= T::zero() || !n.is_finite() {
        return Err(FlowError::InvalidInput("field vanishes or is not finite".into()));
    }
    Ok(w / n)
}

fn complete_basis<T: Scalar>(v1: &DVector<T>) -> DMatrix<T> {
    let d = v1.len();
    let mut cols: Vec<DVector<T>> = vec![v1.clone()];
    for k in 0..d {
        if cols.len() == d {
            break;
        }
        let mut e = DVector::zeros(d);
        e[k] = T::one();
        for c in &cols {
            e -= c * c.dot(&e);
        }
        if e.norm() > lit(1e-8) {
            cols.push(e.normalize());
        }
    }
    DMatrix::from_columns(&cols)
}

/// Discrete alignment `Σ ⟨p_{k+1} - p_k, W(midpoint)⟩` of a polyline.
pub fn discrete_objective<T: Scalar, F: DirectionField<T> + ?Sized>(points: &[DVector<T>], field: &F) -> Result<T> {
    let half = lit::<T>(0.5);
    let mut total = T::zero();
    for w in points.windows(2) {
        let mid = (&w[0] + &w[1]) * half;
        total += (&w[1] - &w[0]).dot(&field.direction(&mid)?);
    }
    Ok(total)
}

fn polyline_length<T: Scalar>(points: &[DVector<T>]) -> T {
    points
        .windows(2)
        .map(|w| (&w[1] - &w[0]).norm())
        .fold(T::zero(), |a, b| a + b)
}

/// Axis-aligned lattice in field coordinates `z`, with the same spacing on
/// every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<T: Scalar> {
    pub lower: DVector<T>,
    pub spacing: T,
    pub counts: Vec<usize>,
}

impl<T: Scalar> Lattice<T> {
    pub fn new(lower: DVector<T>, spacing: T, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != lower.len() {
            return Err(FlowError::DimensionMismatch {
                expected: lower.len(),
                found: counts.len(),
            });
        }
        if spacing <= T::zero() || counts.contains(&0) {
            return Err(FlowError::InvalidInput("lattice needs positive spacing and counts".into()));
        }
        Ok(Self { lower, spacing, counts })
    }

    /// Square lattice `[-a, a]^d` with `count` nodes per axis.
    pub fn centered(dim: usize, half_width: T, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(FlowError::InvalidInput("centered lattice needs two nodes per axis".into()));
        }
        let spacing = half_width * lit(2.0) / from_usize::<T>(count - 1);
        Self::new(DVector::from_element(dim, -half_width), spacing, vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn coords(&self, index: &[usize]) -> DVector<T> {
        DVector::from_fn(self.dim(), |i, _| self.lower[i] + self.spacing * from_usize::<T>(index[i]))
    }

    /// Index of the node at `z`, if `z` lies on the lattice.
    pub fn index_of(&self, z: &DVector<T>) -> Option<Vec<usize>> {
        let tol = lit::<T>(1e-6);
        (0..self.dim())
            .map(|i| {
                let s = (z[i] - self.lower[i]) / self.spacing;
                let r = s.round();
                let k = r.to_f64_lossy();
                ((s - r).abs() <= tol && k >= 0.0 && (k as usize) < self.counts[i]).then_some(k as usize)
            })
            .collect()
    }

    fn flat(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.counts).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            index[i] = flat % self.counts[i];
            flat /= self.counts[i];
        }
        index
    }

    fn all_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.node_count()).map(|k| self.unflat(k))
    }
}

/// Outcome of one clause of the sign/monotonicity assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseCheck<T: Scalar> {
    pub passed: bool,
    /// Number of points (or point pairs) examined.
    pub checked: usize,
    /// Ambient point with the largest violation and its size.
    pub worst: Option<(DVector<T>, T)>,
}

impl<T: Scalar> ClauseCheck<T> {
    fn new() -> Self {
        Self {
            passed: true,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, point: impl FnOnce() -> DVector<T>, violation: T, tol: T) {
        self.checked += 1;
        if violation > tol {
            self.passed = false;
            if self.worst.as_ref().is_none_or(|(_, v)| violation > *v) {
                self.worst = Some((point(), violation));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport<T: Scalar> {
    /// Endpoints on opposite sides: `v₁ᵀx̄₁ < 0 < v₁ᵀx̄₂`.
    pub endpoints: ClauseCheck<T>,
    /// `v₁ᵀW ≥ 0` and `(v_iᵀW)(v_iᵀx)(v₁ᵀx) ≥ 0`.
    pub sign: ClauseCheck<T>,
    /// `|v_iᵀW|` non-decreasing in `|v₁ᵀx|` along `v₁`-columns of the band.
    pub monotone: ClauseCheck<T>,
}

impl<T: Scalar> AssumptionReport<T> {
    pub fn all_passed(&self) -> bool {
        self.endpoints.passed && self.sign.passed && self.monotone.passed
    }
}

/// Checks the three clauses on the nodes of `grid` (field coordinates).
///
/// The monotonicity clause is only examined inside the band
/// `|v₁ᵀx| ≤ max(|v₁ᵀx̄₁|, |v₁ᵀx̄₂|)`, comparing every pair of nodes that share
/// their `V_⊥` coordinates.
pub fn assumption_check<T: Scalar>(
    field: &EuclideanField<T>,
    grid: &Lattice<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
) -> Result<AssumptionReport<T>> {
    let d = field.dim();
    if grid.dim() != d {
        return Err(FlowError::DimensionMismatch {
            expected: d,
            found: grid.dim(),
        });
    }
    let tol = lit::<T>(1e-12);
    let (z1, z2) = (field.coords(x1), field.coords(x2));

    let mut endpoints = ClauseCheck::new();
    endpoints.record(|| x1.clone(), z1[0], T::zero() - tol);
    endpoints.record(|| x2.clone(), -z2[0], T::zero() - tol);

    let nodes: Vec<Vec<usize>> = grid.all_indices().collect();
    let mut w = Vec::with_capacity(nodes.len());
    for idx in &nodes {
        w.push(field.eval_coords(&grid.coords(idx))?);
    }

    let mut sign = ClauseCheck::new();
    for (idx, wz) in nodes.iter().zip(&w) {
        let z = grid.coords(idx);
        let at = || field.point(&z);
        sign.record(at, -wz[0], tol);
        for i in 1..d {
            sign.record(at, -(wz[i] * z[i] * z[0]), tol);
        }
    }

    let band = z1[0].abs().max(z2[0].abs()) + grid.spacing * lit(1e-9);
    let mut monotone = ClauseCheck::new();
    // Group nodes into columns along axis 0: they share indices 1..d.
    let column_len = grid.counts[0];
    let stride = grid.node_count() / column_len;
    for col in 0..stride {
        let members: Vec<usize> = (0..column_len)
            .map(|k| k * stride + col)
            .filter(|&f| grid.coords(&nodes[f])[0].abs() <= band)
            .collect();
        for &a in &members {
            for &b in &members {
                let (za, zb) = (grid.coords(&nodes[a])[0].abs(), grid.coords(&nodes[b])[0].abs());
                if a == b || za > zb {
                    continue;
                }
                for i in 1..d {
                    let excess = w[a][i].abs() - w[b][i].abs();
                    monotone.record(|| field.point(&grid.coords(&nodes[a])), excess, tol);
                }
            }
        }
    }
    Ok(AssumptionReport {
        endpoints,
        sign,
        monotone,
    })
}

/// Exhaustive search for the best field-aligned path on a lattice.
///
/// Paths move one cell at a time along a coordinate axis, and a step is only
/// admissible when it does not oppose the matching component of the field at
/// its midpoint (`γ̇ ⊙ W ≥ 0`). The field is sampled on the half-spacing
/// lattice so every edge midpoint is a sample.
#[derive(Debug, Clone)]
pub struct LatticePathProblem<T: Scalar> {
    lattice: Lattice<T>,
    start: Vec<usize>,
    end: Vec<usize>,
    max_length: T,
    /// `VᵀW` on the refined lattice with `2n - 1` nodes per axis.
    samples: Vec<DVector<T>>,
    refined: Lattice<T>,
    origin: DVector<T>,
    basis: DMatrix<T>,
}

impl<T: Scalar> LatticePathProblem<T> {
    pub fn new(field: &EuclideanField<T>, lattice: Lattice<T>, start: Vec<usize>, end: Vec<usize>) -> Result<Self> {
        let d = lattice.dim();
        if d != field.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: field.dim(),
                found: d,
            });
        }
        if d > MAX_LATTICE_DIM || lattice.counts.iter().any(|&n| n > MAX_LATTICE_AXIS) {
            return Err(FlowError::GridTooLarge {
                nodes: lattice.node_count(),
            });
        }
        for node in [&start, &end] {
            if node.len() != d || node.iter().zip(&lattice.counts).any(|(&i, &n)| i >= n) {
                return Err(FlowError::InvalidInput("start/end outside the lattice".into()));
            }
        }
        let refined = Lattice::new(
            lattice.lower.clone(),
            lattice.spacing * lit(0.5),
            lattice.counts.iter().map(|&n| 2 * n - 1).collect(),
        )?;
        let samples = refined
            .all_indices()
            .map(|idx| field.eval_coords(&refined.coords(&idx)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lattice,
            start,
            end,
            max_length: T::one(),
            samples,
            refined,
            origin: field.origin().clone(),
            basis: field.basis().clone(),
        })
    }

    /// Total path length allowed (default 1).
    pub fn with_max_length(mut self, max_length: T) -> Self {
        self.max_length = max_length;
        self
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    fn max_steps(&self) -> usize {
        let k = (self.max_length / self.lattice.spacing + lit(1e-9)).floor();
        (k.to_f64_lossy().max(0.0) as usize).min(4 * self.lattice.node_count())
    }

    /// Field component along `axis` at the midpoint of the edge leaving `node`
    /// in direction `sign`.
    fn edge_component(&self, node: &[usize], axis: usize, sign: isize) -> T {
        let mut r: Vec<usize> = node.iter().map(|&i| 2 * i).collect();
        r[axis] = (r[axis] as isize + sign) as usize;
        self.samples[self.refined.flat(&r)][axis]
    }
}

/// Optimal lattice path: node indices, ambient points and its discrete value.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath<T: Scalar> {
    pub indices: Vec<Vec<usize>>,
    pub points: Vec<DVector<T>>,
    pub value: T,
    pub length: T,
}

/// Maximizes the midpoint-rule alignment over admissible lattice walks from
/// start to end within the length budget, by dynamic programming over the
/// number of steps. Ties go to the shorter walk.
pub fn lattice_oracle<T: Scalar>(problem: &LatticePathProblem<T>) -> Result<LatticePath<T>> {
    let lat = &problem.lattice;
    let n = lat.node_count();
    let d = lat.dim();
    let steps = problem.max_steps();
    let tol = lit::<T>(1e-12);
    let start = lat.flat(&problem.start);
    let end = lat.flat(&problem.end);

    let mut value: Vec<Vec<Option<T>>> = vec![vec![None; n]; steps + 1];
    let mut pred: Vec<Vec<usize>> = vec![vec![usize::MAX; n]; steps + 1];
    value[0][start] = Some(T::zero());
    for k in 0..steps {
        for a in 0..n {
            let Some(va) = value[k][a] else { continue };
            let idx = lat.unflat(a);
            for axis in 0..d {
                for sign in [-1isize, 1] {
                    let next = idx[axis] as isize + sign;
                    if next < 0 || next >= lat.counts[axis] as isize {
                        continue;
                    }
                    let w = problem.edge_component(&idx, axis, sign);
                    let gain = if sign > 0 { w } else { -w };
                    if gain < -tol {
                        continue;
                    }
                    let mut to = idx.clone();
                    to[axis] = next as usize;
                    let b = lat.flat(&to);
                    let candidate = va + gain * lat.spacing;
                    if value[k + 1][b].is_none_or(|vb| candidate > vb) {
                        value[k + 1][b] = Some(candidate);
                        pred[k + 1][b] = a;
                    }
                }
            }
        }
    }

    let mut best: Option<(usize, T)> = None;
    for (k, row) in value.iter().enumerate() {
        if let Some(v) = row[end] {
            if best.is_none_or(|(_, bv)| v > bv + tol) {
                best = Some((k, v));
            }
        }
    }
    let (k_best, v_best) = best.ok_or_else(|| {
        FlowError::InvalidInput("end node is unreachable by admissible paths within the length budget".into())
    })?;

    let mut flat_path = vec![end];
    let mut cur = end;
    for k in (1..=k_best).rev() {
        cur = pred[k][cur];
        flat_path.push(cur);
    }
    flat_path.reverse();
    let indices: Vec<Vec<usize>> = flat_path.iter().map(|&f| lat.unflat(f)).collect();
    let points = indices
        .iter()
        .map(|idx| &problem.origin + &problem.basis * lat.coords(idx))
        .collect();
    Ok(LatticePath {
        indices,
        points,
        value: v_best,
        length: lat.spacing * from_usize::<T>(k_best),
    })
}

/// The concatenation of the two in-hyperplane optimal legs and the straight
/// segment along the principal axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaS<T: Scalar> {
    pub points: Vec<DVector<T>>,
    /// Indices of `p₁` and `p₂` in `points`.
    pub axis_range: (usize, usize),
    /// Lengths of the first leg, the axis segment and the last leg.
    pub lengths: [T; 3],
    /// Discrete alignment of the whole curve.
    pub objective: T,
}

impl<T: Scalar> GammaS<T> {
    pub fn length(&self) -> T {
        self.lengths[0] + self.lengths[1] + self.lengths[2]
    }
}

/// Builds `γ_s` between `x̄₁` and `x̄₂` with lattice spacing `spacing`.
///
/// Each leg is the lattice optimum inside the hyperplane `v₁ᵀx = v₁ᵀx̄_j`
/// between the endpoint and its foot on the principal axis, so the `V_⊥`
/// coordinates of both endpoints must be multiples of `spacing`.
pub fn gamma_s<T: Scalar>(field: &EuclideanField<T>, x1: &DVector<T>, x2: &DVector<T>, spacing: T) -> Result<GammaS<T>> {
    let (z1, z2) = (field.coords(x1), field.coords(x2));
    if !(z1[0] < T::zero() && z2[0] > T::zero()) {
        return Err(FlowError::InvalidInput(
            "endpoints must lie on opposite sides of the hyperplane through x̄ orthogonal to v₁".into(),
        ));
    }
    let mut foot1 = DVector::zeros(z1.len());
    foot1[0] = z1[0];
    let mut foot2 = DVector::zeros(z2.len());
    foot2[0] = z2[0];

    let leg1 = hyperplane_leg(field, &z1, &foot1, spacing)?;
    let leg2 = hyperplane_leg(field, &foot2, &z2, spacing)?;

    let axis_len = z2[0] - z1[0];
    let pieces = (axis_len / spacing).ceil().to_f64_lossy().max(1.0) as usize;
    let axis: Vec<DVector<T>> = (0..=pieces)
        .map(|k| {
            let s = from_usize::<T>(k) / from_usize::<T>(pieces);
            field.point(&(&foot1 + (&foot2 - &foot1) * s))
        })
        .collect();

    let lengths = [polyline_length(&leg1), polyline_length(&axis), polyline_length(&leg2)];
    let total = lengths[0] + lengths[1] + lengths[2];
    if total > T::one() + lit(1e-12) {
        return Err(FlowError::LengthBudgetExceeded {
            length: total.to_f64_lossy(),
        });
    }
    let mut points = leg1;
    let p1 = points.len() - 1;
    points.extend(axis.into_iter().skip(1));
    let p2 = points.len() - 1;
    points.extend(leg2.into_iter().skip(1));
    let objective = discrete_objective(&points, field)?;
    Ok(GammaS {
        points,
        axis_range: (p1, p2),
        lengths,
        objective,
    })
}

/// Lattice optimum from `za` to `zb` (field coordinates) restricted to their
/// common hyperplane `z₀ = const`.
fn hyperplane_leg<T: Scalar>(
    field: &EuclideanField<T>,
    za: &DVector<T>,
    zb: &DVector<T>,
    spacing: T,
) -> Result<Vec<DVector<T>>> {
    let d = za.len();
    let mut lower = za.clone();
    let mut counts = vec![1usize; d];
    for i in 1..d {
        lower[i] = za[i].min(zb[i]);
        let cells = (za[i] - zb[i]).abs() / spacing;
        if (cells - cells.round()).abs() > lit(1e-6) {
            return Err(FlowError::InvalidInput(format!(
                "endpoint coordinate along v{} is not a multiple of the lattice spacing",
                i + 1
            )));
        }
        counts[i] = cells.round().to_f64_lossy() as usize + 1;
    }
    let lattice = Lattice::new(lower, spacing, counts)?;
    let (Some(start), Some(end)) = (lattice.index_of(za), lattice.index_of(zb)) else {
        return Err(FlowError::InvalidInput("leg endpoints are not lattice nodes".into()));
    };
    if start == end {
        return Ok(vec![field.point(za)]);
    }
    let budget = spacing * from_usize::<T>(lattice.node_count());
    let problem = LatticePathProblem::new(field, lattice, start, end)?.with_max_length(budget);
    let mut path = lattice_oracle(&problem)?.points;
    // Snap the ends so concatenation is exactly continuous.
    let last = path.len() - 1;
    path[0] = field.point(za);
    path[last] = field.point(zb);
    Ok(path)
}

/// First index `k` with `v₁ᵀ(p_k - x̄) ≤ 0 ≤ v₁ᵀ(p_{k+1} - x̄)`.
pub fn crossing_index<T: Scalar>(path: &[DVector<T>], field: &EuclideanField<T>) -> Option<usize> {
    let v1 = field.v1();
    let s: Vec<T> = path.iter().map(|p| (p - field.origin()).dot(&v1)).collect();
    s.windows(2)
        .position(|w| w[0] <= T::zero() && w[1] >= T::zero() && w[1] > w[0])
}

/// Monotone-envelope transform of a path crossing the principal hyperplane
/// between nodes `split` and `split + 1`.
///
/// The `v₁` coordinate is kept. For `i ≥ 2` the coordinate before the
/// crossing becomes the running maximum (when the start is at or below zero)
/// or running minimum (start above zero) clipped at zero; after the crossing
/// the same is done backwards from the end point. The crossing itself is
/// inserted as a node, and where the two rules disagree there the output
/// contains both values joined by a segment inside the hyperplane.
pub fn gamma_plus<T: Scalar>(path: &[DVector<T>], field: &EuclideanField<T>, split: usize) -> Result<Vec<DVector<T>>> {
    if path.len() < 2 {
        return Err(FlowError::InvalidInput("path needs at least two points".into()));
    }
    let z: Vec<DVector<T>> = path.iter().map(|p| field.coords(p)).collect();
    if crossing_index(path, field).is_none() {
        return Err(FlowError::NoCrossing);
    }
    if split + 1 >= z.len() || z[split][0] > T::zero() || z[split + 1][0] < T::zero() {
        return Err(FlowError::InvalidInput(format!(
            "v₁ coordinate does not cross zero between nodes {split} and {}",
            split + 1
        )));
    }

    let (a, b) = (&z[split], &z[split + 1]);
    let s = if b[0] > a[0] { -a[0] / (b[0] - a[0]) } else { T::zero() };
    let mut crossing = a + (b - a) * s;
    crossing[0] = T::zero();

    let mut before: Vec<DVector<T>> = z[..=split].to_vec();
    if s > T::zero() {
        before.push(crossing.clone());
    }
    let mut after: Vec<DVector<T>> = Vec::new();
    if s < T::one() {
        after.push(crossing);
    }
    after.extend_from_slice(&z[split + 1..]);

    let d = z[0].len();
    let first = &z[0];
    let last = &z[z.len() - 1];
    for i in 1..d {
        envelope(&mut before, i, first[i] <= T::zero(), false);
        envelope(&mut after, i, last[i] <= T::zero(), true);
    }

    let mut out: Vec<DVector<T>> = before.iter().map(|c| field.point(c)).collect();
    let tail = after.iter().map(|c| field.point(c));
    let join = out.last().cloned();
    for (k, p) in tail.enumerate() {
        if k == 0 && join.as_ref().is_some_and(|q| *q == p) {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

/// Running max clipped above at 0 (`from_below`) or running min clipped below
/// at 0, accumulated forwards or backwards.
fn envelope<T: Scalar>(z: &mut [DVector<T>], i: usize, from_below: bool, backwards: bool) {
    let n = z.len();
    if n == 0 {
        return;
    }
    let order: Vec<usize> = if backwards { (0..n).rev().collect() } else { (0..n).collect() };
    let mut acc = z[order[0]][i];
    for &k in &order {
        let v = z[k][i];
        acc = if from_below { acc.max(v) } else { acc.min(v) };
        z[k][i] = if from_below { acc.min(T::zero()) } else { acc.max(T::zero()) };
    }
}

/// `ρ = (λ₂ + … + λ_m) / λ₁` for eigenvalues sorted descending.
pub fn rho_measure<T: Scalar>(eigenvalues: &[T]) -> Result<T> {
    let (&l1, rest) = eigenvalues.split_first().ok_or(FlowError::ZeroLeadingEigenvalue)?;
    if l1 <= T::zero() {
        return Err(FlowError::ZeroLeadingEigenvalue);
    }
    Ok(rest.iter().fold(T::zero(), |a, &b| a + b) / l1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HSweepRow<T: Scalar> {
    pub h: T,
    pub neighbor_count: usize,
    /// Descending; empty when the window held fewer than two points.
    pub eigenvalues: Vec<T>,
    /// `None` marks a gap in the sweep.
    pub rho: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HSweep<T: Scalar> {
    pub rows: Vec<HSweepRow<T>>,
    /// Row with the smallest `ρ`.
    pub argmin: Option<usize>,
}

/// `ρ` of the tangent covariance at `x` for each bandwidth in `hs`.
pub fn h_sweep<T: Scalar>(x: &DVector<T>, cloud: &DataCloud<T>, hs: &[T], manifold: &Manifold<T>) -> Result<HSweep<T>> {
    let frame = manifold.tangent_basis(x)?;
    let mut rows = Vec::with_capacity(hs.len());
    for &h in hs {
        let row = match local_covariance(x, cloud, Bandwidth::finite(h)?, &frame, manifold) {
            Ok((sigma, count)) => {
                let values = spectrum(&sigma).values;
                HSweepRow {
                    h,
                    neighbor_count: count,
                    rho: rho_measure(&values).ok(),
                    eigenvalues: values,
                }
            }
            Err(FlowError::EmptyNeighborhood { found }) => HSweepRow {
                h,
                neighbor_count: found,
                eigenvalues: Vec::new(),
                rho: None,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let argmin = rows
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.rho.map(|v| (k, v)))
        .fold(None, |best: Option<(usize, T)>, (k, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k);
    Ok(HSweep { rows, argmin })
}

/// The larger root `α = (1 + √(1 - r²)) / r²` of `r²α² = 2α - 1`.
pub fn reparam_alpha<T: Scalar>(r: T) -> Result<T> {
    if !(r > T::zero() && r <= T::one()) {
        return Err(FlowError::OutOfRange {
            value: r.to_f64_lossy(),
            range: "(0, 1]",
        });
    }
    let r2 = r * r;
    Ok((T::one() + (T::one() - r2).max(T::zero()).sqrt()) / r2)
}

/// Constant-speed reparameterization: the points are kept and the mesh
/// nodes become cumulative chord length over total length.
///
/// Stored velocities depend on the parameterization and are dropped.
pub fn arc_length_reparameterize<T: Scalar>(curve: &DiscreteCurve<T>) -> Result<DiscreteCurve<T>> {
    let pts = &curve.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(T::zero());
    for (k, w) in pts.windows(2).enumerate() {
        let len = (&w[1] - &w[0]).norm();
        if len <= T::zero() {
            return Err(FlowError::ZeroSegment { index: k });
        }
        cumulative.push(cumulative[k] + len);
    }
    let total = cumulative[cumulative.len() - 1];
    let mut nodes: Vec<T> = cumulative.iter().map(|&c| c / total).collect();
    let last = nodes.len() - 1;
    nodes[last] = T::one();
    DiscreteCurve::new(Mesh::new(nodes)?, pts.clone(), None)
}

/// Ellipsoid in the tangent space at a flow node, orthogonal to the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid<T: Scalar> {
    pub center: DVector<T>,
    /// `V = (UUᵀ - γ̇γ̇ᵀ)(e₂ … e_m)`, one column per axis.
    pub axes: DMatrix<T>,
    /// `√(λ_i / λ₁) · h` for `i = 2 … m`.
    pub semi_axes: Vec<T>,
    /// Rank of `V`: `m - 1` unless `γ̇` is orthogonal to `e₁`.
    pub dimension: usize,
    /// A semi-axis is zero or `V` lost rank.
    pub degenerate: bool,
}

/// Confidence ellipsoid at `center`.
///
/// `eigenvectors` holds the ambient eigenvectors `e₁ … e_m` of the tangent
/// covariance as columns, `frame` an orthonormal tangent basis `U` and
/// `velocity` the (unit speed) flow tangent.
pub fn confidence_ellipsoid<T: Scalar>(
    center: &DVector<T>,
    velocity: &DVector<T>,
    eigenvalues: &[T],
    eigenvectors: &DMatrix<T>,
    h: T,
    frame: &DMatrix<T>,
) -> Result<ConfidenceEllipsoid<T>> {
    let m = eigenvalues.len();
    let l1 = *eigenvalues.first().ok_or(FlowError::ZeroLeadingEigenvalue)?;
    if l1 <= T::zero() {
        return Err(FlowError::ZeroLeadingEigenvalue);
    }
    if eigenvectors.ncols() != m || frame.ncols() != m {
        return Err(FlowError::DimensionMismatch {
            expected: m,
            found: eigenvectors.ncols().min(frame.ncols()),
        });
    }
    let projector = frame * frame.transpose() - velocity * velocity.transpose();
    let axes = projector * eigenvectors.columns(1, m - 1);
    let semi_axes: Vec<T> = eigenvalues[1..]
        .iter()
        .map(|&l| (l.max(T::zero()) / l1).sqrt() * h)
        .collect();
    let dimension = if m > 1 { axes.clone().svd(false, false).rank(lit(1e-9)) } else { 0 };
    let degenerate = dimension < m.saturating_sub(1) || semi_axes.iter().any(|&s| s <= T::zero());
    Ok(ConfidenceEllipsoid {
        center: center.clone(),
        axes,
        semi_axes,
        dimension,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    /// `W ∝ (1, c·x₁x₂)`: points at the axis on the left, away on the right.
    fn bowtie(c: f64) -> EuclideanField<f64> {
        EuclideanField::from_fn(v2(0.0, 0.0), move |x: &DVector<f64>| v2(1.0, c * x[0] * x[1])).unwrap()
    }

    #[test]
    fn sigma_infinity_examples() {
        let pts = vec![v2(0.0, 0.0), v2(2.0, 0.0)];
        let s = sigma_infinity(&pts, &v2(1.0, 0.0)).unwrap();
        assert_relative_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);

        let same = vec![v2(0.5, 0.5); 3];
        assert_eq!(sigma_infinity(&same, &v2(0.5, 0.5)).unwrap(), DMatrix::zeros(2, 2));

        let c = v2(3.0, -1.0);
        let pts = vec![v2(0.1, 0.4), v2(-0.3, 0.2), v2(0.9, -0.7)];
        let moved: Vec<_> = pts.iter().map(|p| p + &c).collect();
        let x = v2(0.2, 0.1);
        assert_relative_eq!(
            sigma_infinity(&pts, &x).unwrap(),
            sigma_infinity(&moved, &(&x + &c)).unwrap(),
            epsilon = 1e-12
        );
        assert!(sigma_infinity(&pts[..1], &x).is_err());
    }

    #[test]
    fn cloud_field_uses_principal_axes() {
        let pts: Vec<_> = (0..21)
            .map(|k| {
                let t = k as f64 / 10.0 - 1.0;
                v2(t, 0.1 * (7.0 * t).sin())
            })
            .collect();
        let f = EuclideanField::from_cloud(pts).unwrap();
        assert!(f.v1()[0].abs() > 0.99);
        let w = f.eval(f.origin()).unwrap();
        assert_relative_eq!(w, f.v1(), epsilon = 1e-12);
        let b = f.basis();
        assert_relative_eq!(b.transpose() * b, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn assumption_examples() {
        let grid = Lattice::centered(2, 0.5, 11).unwrap();
        let (x1, x2) = (v2(-0.4, -0.2), v2(0.4, 0.1));

        let constant = EuclideanField::from_fn(v2(0.0, 0.0), |_: &DVector<f64>| v2(1.0, 0.0)).unwrap();
        assert!(assumption_check(&constant, &grid, &x1, &x2).unwrap().all_passed());

        let good = assumption_check(&bowtie(1.0), &grid, &x1, &x2).unwrap();
        assert!(good.sign.passed && good.monotone.passed && good.endpoints.passed);
        assert!(good.sign.checked > 0 && good.monotone.checked > 0);

        let bad = assumption_check(&bowtie(-1.0), &grid, &x1, &x2).unwrap();
        assert!(!bad.sign.passed);
        let (witness, amount) = bad.sign.worst.unwrap();
        assert!(amount > 0.0);
        assert!(witness[0] * witness[1] != 0.0);

        let swapped = assumption_check(&bowtie(1.0), &grid, &x2, &x1).unwrap();
        assert!(!swapped.endpoints.passed);
    }

    #[test]
    fn monotone_clause_detects_decay() {
        // |v₂ᵀW| shrinks with |x₁|: violates the band monotonicity.
        let f = EuclideanField::from_fn(v2(0.0, 0.0), |x: &DVector<f64>| {
            v2(1.0, x[1] * x[0].signum() * (-x[0] * x[0] * 10.0).exp())
        })
        .unwrap();
        let grid = Lattice::centered(2, 0.5, 11).unwrap();
        let r = assumption_check(&f, &grid, &v2(-0.4, 0.0), &v2(0.4, 0.0)).unwrap();
        assert!(r.sign.passed);
        assert!(!r.monotone.passed);
    }

    #[test]
    fn gamma_s_on_axis_is_straight() {
        let g = gamma_s(&bowtie(10.0), &v2(-0.4, 0.0), &v2(0.4, 0.0), 0.05).unwrap();
        assert_eq!(g.lengths[0], 0.0);
        assert_eq!(g.lengths[2], 0.0);
        assert_relative_eq!(g.lengths[1], 0.8, epsilon = 1e-12);
        assert_relative_eq!(g.objective, 0.8, epsilon = 1e-12);
        assert_eq!(g.points[0], v2(-0.4, 0.0));
        assert_eq!(*g.points.last().unwrap(), v2(0.4, 0.0));
    }

    #[test]
    fn gamma_s_staircase() {
        let f = bowtie(10.0);
        let (x1, x2) = (v2(-0.3, -0.2), v2(0.3, 0.0));
        let g = gamma_s(&f, &x1, &x2, 0.05).unwrap();
        assert_relative_eq!(g.lengths[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(g.lengths[1], 0.6, epsilon = 1e-12);
        assert_eq!(g.lengths[2], 0.0);
        assert!(g.length() <= 1.0);
        // The leg runs straight up the hyperplane x₁ = -0.3 to the axis.
        for p in &g.points[..=g.axis_range.0] {
            assert_relative_eq!(p[0], -0.3, epsilon = 1e-12);
        }
        assert_relative_eq!(g.points[g.axis_range.0], v2(-0.3, 0.0), epsilon = 1e-12);
        for p in &g.points[g.axis_range.0..=g.axis_range.1] {
            assert!(p[1].abs() < 1e-12);
        }
        // Oracle: the objective recomputed independently along the corner path.
        let leg = {
            let n = 400;
            (0..n)
                .map(|k| {
                    let y = -0.2 + 0.2 * (k as f64 + 0.5) / n as f64;
                    let w = v2(1.0, 10.0 * -0.3 * y);
                    0.2 / n as f64 * w[1] / w.norm()
                })
                .sum::<f64>()
        };
        // Four-cell midpoint quadrature on the leg.
        assert_relative_eq!(g.objective, leg + 0.6, epsilon = 1e-3);
    }

    #[test]
    fn gamma_s_errors() {
        let f = bowtie(10.0);
        assert!(matches!(
            gamma_s(&f, &v2(0.1, 0.0), &v2(0.3, 0.0), 0.05),
            Err(FlowError::InvalidInput(_))
        ));
        assert!(matches!(
            gamma_s(&f, &v2(-0.6, -0.3), &v2(0.6, 0.0), 0.05),
            Err(FlowError::LengthBudgetExceeded { .. })
        ));
    }

    #[test]
    fn gamma_plus_running_max_example() {
        let f = EuclideanField::from_fn(v2(0.0, 0.0), |_: &DVector<f64>| v2(1.0, 0.0)).unwrap();
        let path = vec![v2(-0.4, -1.0), v2(-0.3, -0.5), v2(-0.2, -0.8), v2(0.0, 0.0), v2(0.5, 0.0)];
        let out = gamma_plus(&path, &f, 3).unwrap();
        let ys: Vec<f64> = out.iter().map(|p| p[1]).collect();
        assert_eq!(&ys[..4], &[-1.0, -0.5, -0.5, 0.0]);
        let xs: Vec<f64> = out.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.4, -0.3, -0.2, 0.0, 0.5]);
    }

    #[test]
    fn gamma_plus_identity_on_monotone_path() {
        let f = bowtie(5.0);
        let path = vec![v2(-0.4, -0.3), v2(-0.2, -0.1), v2(0.0, 0.0), v2(0.2, 0.1), v2(0.4, 0.2)];
        let split = crossing_index(&path, &f).unwrap();
        assert_eq!(gamma_plus(&path, &f, split).unwrap(), path);
    }

    #[test]
    fn gamma_plus_needs_a_crossing() {
        let f = bowtie(5.0);
        let path = vec![v2(0.1, 0.0), v2(0.2, 0.3), v2(0.4, 0.1)];
        assert_eq!(gamma_plus(&path, &f, 0), Err(FlowError::NoCrossing));
    }

    #[test]
    fn gamma_plus_inserts_crossing_node() {
        let f = bowtie(5.0);
        let path = vec![v2(-0.2, -0.1), v2(0.2, 0.3)];
        let out = gamma_plus(&path, &f, 0).unwrap();
        // The left rule clips the crossing to the axis, the right rule keeps
        // the backward running minimum 0.1; both appear, joined in x₁ = 0.
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], path[0]);
        assert_relative_eq!(out[1], v2(0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(out[2], v2(0.0, 0.1), epsilon = 1e-15);
        assert_eq!(out[3], path[1]);
    }

    #[test]
    fn lattice_constant_field_row() {
        let f = EuclideanField::from_fn(v2(0.0, 0.0), |_: &DVector<f64>| v2(1.0, 0.0)).unwrap();
        let lat = Lattice::centered(2, 0.25, 11).unwrap();
        let p = LatticePathProblem::new(&f, lat, vec![0, 4], vec![10, 4]).unwrap();
        let best = lattice_oracle(&p).unwrap();
        assert_relative_eq!(best.value, 0.5, epsilon = 1e-12);
        assert_relative_eq!(best.length, 0.5, epsilon = 1e-12);
        assert!(best.indices.iter().all(|i| i[1] == 4));
    }

    /// Brute-force enumeration of every admissible walk within the budget.
    fn enumerate(p: &LatticePathProblem<f64>) -> f64 {
        fn go(p: &LatticePathProblem<f64>, at: Vec<usize>, left: usize, acc: f64, best: &mut f64) {
            if at == p.end {
                *best = best.max(acc);
            }
            if left == 0 {
                return;
            }
            for axis in 0..at.len() {
                for sign in [-1isize, 1] {
                    let next = at[axis] as isize + sign;
                    if next < 0 || next >= p.lattice.counts[axis] as isize {
                        continue;
                    }
                    let w = p.edge_component(&at, axis, sign);
                    let gain = sign as f64 * w;
                    if gain < -1e-12 {
                        continue;
                    }
                    let mut to = at.clone();
                    to[axis] = next as usize;
                    go(p, to, left - 1, acc + gain * p.lattice.spacing, best);
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        go(p, p.start.clone(), p.max_steps(), 0.0, &mut best);
        best
    }

    #[test]
    fn lattice_two_by_two_matches_enumeration() {
        let f = EuclideanField::from_fn(v2(0.0, 0.0), |x: &DVector<f64>| v2(1.0, x[0])).unwrap();
        let lat = Lattice::new(v2(0.0, 0.0), 0.5, vec![2, 2]).unwrap();
        let p = LatticePathProblem::new(&f, lat, vec![0, 0], vec![1, 1]).unwrap().with_max_length(1.0);
        let best = lattice_oracle(&p).unwrap();
        assert_relative_eq!(best.value, enumerate(&p), epsilon = 1e-14);
        // By hand: going up at x₁ = 0 gains nothing, at x₁ = 0.5 it gains
        // 0.5·0.5/√1.25; both horizontal edges are worth 0.5/√1.0625.
        let up_right = 0.5 * 0.5 / 1.25f64.sqrt();
        let right_low = 0.5 / 1.0625f64.sqrt();
        assert_relative_eq!(best.value, right_low + up_right, epsilon = 1e-14);
        assert_eq!(best.indices, vec![vec![0, 0], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn lattice_dp_matches_enumeration_on_small_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let f = EuclideanField::from_fn(v2(0.0, 0.0), move |x: &DVector<f64>| {
                v2((a * x[1]).cos() + 1.5, (b * x[0]).sin())
            })
            .unwrap();
            let lat = Lattice::new(v2(-0.3, -0.3), 0.2, vec![4, 4]).unwrap();
            let p = LatticePathProblem::new(&f, lat, vec![0, 1], vec![3, 2]).unwrap().with_max_length(1.2);
            let best = lattice_oracle(&p).unwrap();
            assert_relative_eq!(best.value, enumerate(&p), epsilon = 1e-12);
            assert_relative_eq!(best.value, discrete_objective(&best.points, &f).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn lattice_limits() {
        let f = EuclideanField::from_fn(v2(0.0, 0.0), |_: &DVector<f64>| v2(1.0, 0.0)).unwrap();
        let lat = Lattice::centered(2, 1.0, 16).unwrap();
        assert!(matches!(
            LatticePathProblem::new(&f, lat, vec![0, 0], vec![1, 1]),
            Err(FlowError::GridTooLarge { nodes: 256 })
        ));
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho_measure(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rho_measure(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(rho_measure(&[2.0, 1.0, 0.5]).unwrap(), 0.75, epsilon = 1e-15);
        assert_eq!(rho_measure(&[0.0, 0.0]), Err(FlowError::ZeroLeadingEigenvalue));
    }

    #[test]
    fn h_sweep_collinear_and_isotropic() {
        let plane = Manifold::euclidean(2);
        let line = DataCloud::new((0..41).map(|k| v2(k as f64 / 20.0 - 1.0, 0.0)).collect()).unwrap();
        let hs = [0.01, 0.1, 0.3, 0.6];
        let sweep = h_sweep(&v2(0.0, 0.0), &line, &hs, &plane).unwrap();
        assert!(sweep.rows[0].rho.is_none());
        for row in &sweep.rows[1..] {
            assert!(row.rho.unwrap().abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let pts = (0..4000)
            .map(|_| v2(rng.sample(normal), rng.sample(normal)))
            .collect();
        let blob = DataCloud::new(pts).unwrap();
        let sweep = h_sweep(&v2(0.0, 0.0), &blob, &[2.0, 5.0], &plane).unwrap();
        for row in &sweep.rows {
            assert!((row.rho.unwrap() - 1.0).abs() < 0.2, "{row:?}");
        }
    }

    #[test]
    fn reparam_alpha_examples() {
        assert_eq!(reparam_alpha(1.0).unwrap(), 1.0);
        let a = reparam_alpha(0.5).unwrap();
        assert_relative_eq!(a, 4.0 * (1.0 + 0.75f64.sqrt()), epsilon = 1e-12);
        assert!((0.25 * a * a - (2.0 * a - 1.0)).abs() <= 1e-12);
        assert!(reparam_alpha(0.0).is_err());
        assert!(reparam_alpha(1.5).is_err());
    }

    #[test]
    fn arc_length_examples() {
        let line = DiscreteCurve::from_points((0..=10).map(|k| v2(k as f64 / 10.0, 0.0)).collect()).unwrap();
        let re = arc_length_reparameterize(&line).unwrap();
        for (a, b) in re.mesh.nodes().iter().zip(line.mesh.nodes()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }

        let clustered = DiscreteCurve::from_points(
            (0..=10).map(|k| v2((k as f64 / 10.0).powi(2), 0.0)).collect(),
        )
        .unwrap();
        let re = arc_length_reparameterize(&clustered).unwrap();
        // Oracle: the node parameter equals the x coordinate on the unit segment.
        for (t, p) in re.mesh.nodes().iter().zip(&re.points) {
            assert_relative_eq!(*t, p[0], epsilon = 1e-14);
        }
        assert_eq!(re.start(), clustered.start());
        assert_eq!(re.end(), clustered.end());

        let repeated = DiscreteCurve::from_points(vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(1.0, 0.0)]).unwrap();
        assert_eq!(
            arc_length_reparameterize(&repeated),
            Err(FlowError::ZeroSegment { index: 1 })
        );
    }

    #[test]
    fn ellipsoid_examples() {
        let e = DMatrix::identity(2, 2);
        let el = confidence_ellipsoid(&v2(0.0, 0.0), &v2(1.0, 0.0), &[1.0, 0.25], &e, 0.2, &e).unwrap();
        assert_eq!(el.dimension, 1);
        assert!(!el.degenerate);
        assert_relative_eq!(el.semi_axes[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(el.axes.column(0).into_owned(), v2(0.0, 1.0), epsilon = 1e-15);

        let flat = confidence_ellipsoid(&v2(0.0, 0.0), &v2(1.0, 0.0), &[1.0, 0.0], &e, 0.2, &e).unwrap();
        assert!(flat.degenerate);

        // Flow tangent along e₂: the only ellipsoid axis collapses.
        let side = confidence_ellipsoid(&v2(0.0, 0.0), &v2(0.0, 1.0), &[1.0, 0.25], &e, 0.2, &e).unwrap();
        assert_eq!(side.dimension, 0);
        assert!(side.degenerate);

        assert!(confidence_ellipsoid(&v2(0.0, 0.0), &v2(1.0, 0.0), &[0.0, 0.0], &e, 0.2, &e).is_err());
    }

    #[test]
    fn ellipsoid_in_three_dimensions() {
        let e = DMatrix::identity(3, 3);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let el = confidence_ellipsoid(&v, &v, &[1.0, 0.5, 0.25], &e, 0.1, &e).unwrap();
        assert_eq!(el.dimension, 2);
        let tilted = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let el = confidence_ellipsoid(&v, &tilted, &[1.0, 0.5, 0.25], &e, 0.1, &e).unwrap();
        assert_eq!(el.dimension, 1);
    }

    fn random_admissible_path(rng: &mut ChaCha8Rng, x1: &DVector<f64>, x2: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
        let mut xs: Vec<f64> = (0..n - 1).map(|_| rng.random_range(x1[0]..x2[0])).collect();
        xs.sort_by(f64::total_cmp);
        let mut y = x1[1];
        let mut pts = vec![x1.clone()];
        for (k, &x) in xs.iter().enumerate() {
            let remaining = (n - 1 - k) as f64;
            y += (x2[1] - y) / remaining + rng.random_range(-0.06..0.06);
            pts.push(v2(x, y));
        }
        pts.push(x2.clone());
        pts
    }

    #[test]
    fn gamma_plus_never_decreases_objective() {
        let f = bowtie(8.0);
        let (x1, x2) = (v2(-0.3, -0.2), v2(0.3, 0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let path = random_admissible_path(&mut rng, &x1, &x2, 60);
            let split = crossing_index(&path, &f).unwrap();
            let plus = gamma_plus(&path, &f, split).unwrap();
            let before = discrete_objective(&path, &f).unwrap();
            let after = discrete_objective(&plus, &f).unwrap();
            assert!(after >= before - 1e-12, "{after} < {before}");
        }
    }

    proptest! {
        #[test]
        fn objective_bounded_by_length(pts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..30)) {
            let f = bowtie(3.0);
            let path: Vec<_> = pts.iter().map(|&(a, b)| v2(a, b)).collect();
            let l = discrete_objective(&path, &f).unwrap();
            prop_assert!(l <= polyline_length(&path) + 1e-12);
        }

        #[test]
        fn rho_frame_invariant(a in 0.1..3.0f64, b in 0.0..1.0f64, theta in 0.0..6.3f64) {
            let sigma = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, a * b]);
            let r = nalgebra::Rotation2::new(theta);
            let q = DMatrix::from_iterator(2, 2, r.matrix().iter().copied());
            let rotated = &q * &sigma * q.transpose();
            let r0 = rho_measure(&spectrum(&sigma).values).unwrap();
            let r1 = rho_measure(&spectrum(&rotated).values).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-10);
        }

        #[test]
        fn alpha_root(r in 1e-3..=1.0f64) {
            let a = reparam_alpha(r).unwrap();
            prop_assert!((r * r * a * a - (2.0 * a - 1.0)).abs() <= 1e-12 * a.max(1.0) * a.max(1.0));
        }

        #[test]
        fn arc_length_idempotent(ys in proptest::collection::vec(-1.0..1.0f64, 3..20)) {
            let pts: Vec<_> = ys.iter().enumerate().map(|(k, &y)| v2(k as f64 * 0.1 + y * y * 0.01, y)).collect();
            let c = DiscreteCurve::from_points(pts).unwrap();
            let once = arc_length_reparameterize(&c).unwrap();
            let twice = arc_length_reparameterize(&once).unwrap();
            prop_assert!((once.polyline_length() - c.polyline_length()).abs() <= 1e-10);
            for (a, b) in once.mesh.nodes().iter().zip(twice.mesh.nodes()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}

//! Lobatto IIIA collocation for two-point boundary value problems of the form
//!
//! ```text
//! y' = f(t, y),  y = (γ, u) ∈ R^{2d},  γ(0) = a,  γ(1) = b,
//! ```
//!
//! solved globally by damped Newton iteration.

use nalgebra::{DMatrix, DVector};

use crate::curve::{DiscreteCurve, Mesh};
use crate::error::{FlowError, Result};
use crate::scalar::{lit, Scalar};

/// Stage nodes and Runge–Kutta matrix of a collocation method.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationScheme<T: Scalar> {
    nodes: Vec<T>,
    a: DMatrix<T>,
    order: usize,
}

impl<T: Scalar> CollocationScheme<T> {
    /// Lobatto IIIA with `stages ∈ {2, 3, 4}`; order `2 stages - 2`.
    pub fn lobatto(stages: usize) -> Result<Self> {
        let c: Vec<f64> = match stages {
            2 => vec![0.0, 1.0],
            3 => vec![0.0, 0.5, 1.0],
            4 => {
                let r = 5f64.sqrt();
                vec![0.0, (5.0 - r) / 10.0, (5.0 + r) / 10.0, 1.0]
            }
            _ => {
                return Err(FlowError::OutOfRange {
                    value: stages as f64,
                    range: "{2, 3, 4}",
                })
            }
        };
        let a = lagrange_integrals(&c);
        Ok(Self {
            nodes: c.iter().map(|&x| lit(x)).collect(),
            a: a.map(lit),
            order: 2 * stages - 2,
        })
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// `a[j][l] = ∫₀^{c_j} L_l(s) ds` for the Lagrange basis on `c`.
fn lagrange_integrals(c: &[f64]) -> DMatrix<f64> {
    let k = c.len();
    // Coefficients of L_l solve V p = e_l with V the Vandermonde matrix.
    let v = DMatrix::from_fn(k, k, |i, j| c[i].powi(j as i32));
    let inv = v.try_inverse().expect("distinct collocation nodes");
    DMatrix::from_fn(k, k, |j, l| {
        (0..k)
            .map(|p| inv[(p, l)] * c[j].powi(p as i32 + 1) / (p as f64 + 1.0))
            .sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions<T: Scalar> {
    /// Stop once the residual max-norm drops to this value.
    pub tol: T,
    pub max_iterations: usize,
    /// Smallest step fraction tried by the line search.
    pub min_step: T,
    /// Finite-difference step for the right-hand side Jacobian.
    pub fd_step: T,
}

impl<T: Scalar> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-8),
            max_iterations: 50,
            min_step: lit(1.0 / 1024.0),
            fd_step: lit(1e-7),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution<T: Scalar> {
    /// Node positions and velocities; endpoints equal the boundary values bitwise.
    pub curve: DiscreteCurve<T>,
    /// Max-norm of the collocation residual at the returned solution.
    pub residual: T,
    pub iterations: usize,
}

/// Layout of the unknown vector: node states interleaved with the interior
/// stage states of each interval.
struct Layout {
    n: usize,
    stages: usize,
    intervals: usize,
}

impl Layout {
    fn per_interval(&self) -> usize {
        (self.stages - 1) * self.n
    }

    fn len(&self) -> usize {
        self.intervals * self.per_interval() + self.n
    }

    fn node(&self, i: usize) -> usize {
        i * self.per_interval()
    }

    /// Offset of stage `j` (0-based, `0` and `stages - 1` being the nodes) of interval `i`.
    fn stage(&self, i: usize, j: usize) -> usize {
        if j == self.stages - 1 {
            self.node(i + 1)
        } else {
            self.node(i) + j * self.n
        }
    }
}

/// Solves the boundary value problem on the mesh of `guess`.
///
/// `rhs` maps `(t, (γ, u))` to `(γ', u')`. The guess must already satisfy
/// `γ(0) = x1` and `γ(1) = x2`.
pub fn solve_bvp<T, F>(
    rhs: F,
    x1: &DVector<T>,
    x2: &DVector<T>,
    guess: &DiscreteCurve<T>,
    scheme: &CollocationScheme<T>,
    options: &NewtonOptions<T>,
) -> Result<BvpSolution<T>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
{
    let d = x1.len();
    if x2.len() != d || guess.dim() != d {
        return Err(FlowError::DimensionMismatch {
            expected: d,
            found: if x2.len() != d { x2.len() } else { guess.dim() },
        });
    }
    let pin_tol = lit::<T>(1e-10) * (T::one() + x1.norm().max(x2.norm()));
    if (guess.start() - x1).norm() > pin_tol || (guess.end() - x2).norm() > pin_tol {
        return Err(FlowError::BoundaryMismatch);
    }
    let n = 2 * d;
    let k = scheme.stages();
    let mesh = guess.mesh.clone();
    let layout = Layout {
        n,
        stages: k,
        intervals: mesh.intervals(),
    };
    let times = stage_times(&mesh, scheme);
    let eval = |t: T, y: &DVector<T>| -> Result<DVector<T>> {
        rhs(t, y).map_err(|e| FlowError::RhsFailure {
            t: t.to_f64_lossy(),
            source: Box::new(e),
        })
    };

    let mut y = initial_unknowns(guess, &layout, &times, d);
    pin(&mut y, x1, x2, &layout, d);

    let mut f = stage_values(&eval, &y, &layout, &times)?;
    let mut res = residual(&y, &f, &layout, &mesh, scheme, x1, x2, d);
    let mut norm = res.amax();
    let mut iterations = 0;
    while norm > options.tol {
        if iterations == options.max_iterations {
            return Err(FlowError::NewtonDiverged {
                iterations,
                residual: norm.to_f64_lossy(),
            });
        }
        iterations += 1;
        let jac = stage_jacobians(&eval, &y, &f, &layout, &times, options.fd_step)?;
        let system = assemble(&jac, &layout, &mesh, scheme, d);
        let step = system
            .solve(-&res)
            .ok_or(FlowError::NewtonDiverged {
                iterations,
                residual: norm.to_f64_lossy(),
            })?;

        let merit = res.norm();
        let mut lambda = T::one();
        loop {
            let mut trial = &y + &step * lambda;
            pin(&mut trial, x1, x2, &layout, d);
            let attempt = stage_values(&eval, &trial, &layout, &times).map(|ft| {
                let rt = residual(&trial, &ft, &layout, &mesh, scheme, x1, x2, d);
                (ft, rt)
            });
            if let Ok((ft, rt)) = attempt {
                let accept = rt.norm() <= (T::one() - lit::<T>(1e-4) * lambda) * merit;
                if accept || lambda <= options.min_step {
                    if !accept && rt.norm() >= merit {
                        return Err(FlowError::NewtonDiverged {
                            iterations,
                            residual: norm.to_f64_lossy(),
                        });
                    }
                    y = trial;
                    f = ft;
                    res = rt;
                    norm = res.amax();
                    break;
                }
            } else if lambda <= options.min_step {
                // propagate the rhs failure seen at the smallest step
                attempt?;
            }
            lambda *= lit(0.5);
        }
    }

    let mut points = Vec::with_capacity(mesh.nodes().len());
    let mut vels = Vec::with_capacity(mesh.nodes().len());
    for i in 0..=layout.intervals {
        let o = layout.node(i);
        points.push(y.rows(o, d).into_owned());
        vels.push(y.rows(o + d, d).into_owned());
    }
    points[0] = x1.clone();
    *points.last_mut().expect("mesh has nodes") = x2.clone();
    Ok(BvpSolution {
        curve: DiscreteCurve::new(mesh, points, Some(vels))?,
        residual: norm,
        iterations,
    })
}

fn stage_times<T: Scalar>(mesh: &Mesh<T>, scheme: &CollocationScheme<T>) -> Vec<Vec<T>> {
    (0..mesh.intervals())
        .map(|i| {
            let t0 = mesh.nodes()[i];
            let h = mesh.width(i);
            let mut ts: Vec<T> = scheme.nodes().iter().map(|&c| t0 + h * c).collect();
            ts[0] = t0;
            *ts.last_mut().expect("stages") = mesh.nodes()[i + 1];
            ts
        })
        .collect()
}

fn initial_unknowns<T: Scalar>(guess: &DiscreteCurve<T>, layout: &Layout, times: &[Vec<T>], d: usize) -> DVector<T> {
    let vels = guess.velocities_or_estimate();
    let dense = DiscreteCurve {
        mesh: guess.mesh.clone(),
        points: guess.points.clone(),
        velocities: Some(vels.clone()),
    };
    let mut y = DVector::zeros(layout.len());
    for i in 0..=layout.intervals {
        let o = layout.node(i);
        y.rows_mut(o, d).copy_from(&guess.points[i]);
        y.rows_mut(o + d, d).copy_from(&vels[i]);
    }
    for (i, ts) in times.iter().enumerate() {
        for (j, &t) in ts.iter().enumerate().take(layout.stages - 1).skip(1) {
            let (p, v) = dense.hermite_eval(t).expect("stage time inside the mesh");
            let o = layout.stage(i, j);
            y.rows_mut(o, d).copy_from(&p);
            y.rows_mut(o + d, d).copy_from(&v);
        }
    }
    y
}

fn pin<T: Scalar>(y: &mut DVector<T>, x1: &DVector<T>, x2: &DVector<T>, layout: &Layout, d: usize) {
    y.rows_mut(0, d).copy_from(x1);
    y.rows_mut(layout.node(layout.intervals), d).copy_from(x2);
}

/// `f` at every distinct stage, indexed like the unknowns (one slot per node
/// and per interior stage).
fn stage_values<T, F>(eval: &F, y: &DVector<T>, layout: &Layout, times: &[Vec<T>]) -> Result<Vec<DVector<T>>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
{
    let n = layout.n;
    let slots = layout.len() / n;
    let mut out = vec![DVector::zeros(0); slots];
    for (i, ts) in times.iter().enumerate() {
        let first = if i == 0 { 0 } else { 1 };
        for (j, &t) in ts.iter().enumerate().skip(first) {
            let o = layout.stage(i, j);
            out[o / n] = eval(t, &y.rows(o, n).into_owned())?;
        }
    }
    Ok(out)
}

fn stage_jacobians<T, F>(
    eval: &F,
    y: &DVector<T>,
    f: &[DVector<T>],
    layout: &Layout,
    times: &[Vec<T>],
    step: T,
) -> Result<Vec<DMatrix<T>>>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
{
    let n = layout.n;
    let mut out = vec![DMatrix::zeros(0, 0); f.len()];
    for (i, ts) in times.iter().enumerate() {
        let first = if i == 0 { 0 } else { 1 };
        for (j, &t) in ts.iter().enumerate().skip(first) {
            let o = layout.stage(i, j);
            let base = y.rows(o, n).into_owned();
            let mut jac = DMatrix::zeros(n, n);
            for c in 0..n {
                let e = step * (T::one() + base[c].abs());
                let mut yp = base.clone();
                yp[c] += e;
                let fp = eval(t, &yp)?;
                jac.set_column(c, &((fp - &f[o / n]) / e));
            }
            out[o / n] = jac;
        }
    }
    Ok(out)
}

/// Equations: `d` rows pinning `γ(0)`, then per interval and stage
/// `j = 1..k-1` the collocation condition
/// `Y_j - y_{i} - h Σ_l a_{jl} f(Y_l) = 0`, then `d` rows pinning `γ(1)`.
#[allow(clippy::too_many_arguments)]
fn residual<T: Scalar>(
    y: &DVector<T>,
    f: &[DVector<T>],
    layout: &Layout,
    mesh: &Mesh<T>,
    scheme: &CollocationScheme<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
    d: usize,
) -> DVector<T> {
    let n = layout.n;
    let k = layout.stages;
    let mut r = DVector::zeros(layout.len());
    r.rows_mut(0, d).copy_from(&(y.rows(0, d) - x1));
    let a = scheme.matrix();
    for i in 0..layout.intervals {
        let h = mesh.width(i);
        let y0 = y.rows(layout.node(i), n);
        for j in 1..k {
            let oj = layout.stage(i, j);
            let mut row = y.rows(oj, n) - y0;
            for l in 0..k {
                let coef = h * a[(j, l)];
                if coef != T::zero() {
                    row -= &f[layout.stage(i, l) / n] * coef;
                }
            }
            r.rows_mut(d + i * layout.per_interval() + (j - 1) * n, n).copy_from(&row);
        }
    }
    let last = layout.len() - d;
    r.rows_mut(last, d).copy_from(&(y.rows(layout.node(layout.intervals), d) - x2));
    r
}

fn assemble<T: Scalar>(
    jac: &[DMatrix<T>],
    layout: &Layout,
    mesh: &Mesh<T>,
    scheme: &CollocationScheme<T>,
    d: usize,
) -> RowSystem<T> {
    let n = layout.n;
    let k = layout.stages;
    let total = layout.len();
    let mut sys = RowSystem::new(total);
    for c in 0..d {
        sys.set(c, c, T::one());
    }
    let a = scheme.matrix();
    for i in 0..layout.intervals {
        let h = mesh.width(i);
        let n0 = layout.node(i);
        for j in 1..k {
            let row0 = d + i * layout.per_interval() + (j - 1) * n;
            for l in 0..k {
                let col0 = layout.stage(i, l);
                let coef = -h * a[(j, l)];
                let mut block = jac[col0 / n].clone() * coef;
                if l == j {
                    for q in 0..n {
                        block[(q, q)] += T::one();
                    }
                }
                if l == 0 {
                    for q in 0..n {
                        block[(q, q)] -= T::one();
                    }
                }
                debug_assert_eq!(l == 0, col0 == n0);
                for r in 0..n {
                    for c in 0..n {
                        let v = block[(r, c)];
                        if v != T::zero() {
                            sys.add(row0 + r, col0 + c, v);
                        }
                    }
                }
            }
        }
    }
    let last_node = layout.node(layout.intervals);
    for c in 0..d {
        sys.set(total - d + c, last_node + c, T::one());
    }
    sys
}

/// Square sparse system stored as contiguous row segments, solved by
/// Gaussian elimination with partial pivoting. The collocation matrix is
/// banded, so each row segment stays short and elimination is linear in the
/// number of mesh intervals.
struct RowSystem<T: Scalar> {
    rows: Vec<Segment<T>>,
}

#[derive(Clone)]
struct Segment<T: Scalar> {
    lo: usize,
    vals: Vec<T>,
}

impl<T: Scalar> Segment<T> {
    fn hi(&self) -> usize {
        self.lo + self.vals.len()
    }

    fn get(&self, c: usize) -> T {
        if c >= self.lo && c < self.hi() {
            self.vals[c - self.lo]
        } else {
            T::zero()
        }
    }

    fn cover(&mut self, lo: usize, hi: usize) {
        if self.vals.is_empty() {
            self.lo = lo;
            self.vals = vec![T::zero(); hi - lo];
            return;
        }
        if lo < self.lo {
            let mut v = vec![T::zero(); self.lo - lo];
            v.append(&mut self.vals);
            self.vals = v;
            self.lo = lo;
        }
        if hi > self.hi() {
            let extra = hi - self.hi();
            self.vals.extend(std::iter::repeat_n(T::zero(), extra));
        }
    }
}

impl<T: Scalar> RowSystem<T> {
    fn new(n: usize) -> Self {
        Self {
            rows: vec![
                Segment {
                    lo: 0,
                    vals: Vec::new()
                };
                n
            ],
        }
    }

    fn set(&mut self, r: usize, c: usize, v: T) {
        let row = &mut self.rows[r];
        row.cover(c, c + 1);
        row.vals[c - row.lo] = v;
    }

    fn add(&mut self, r: usize, c: usize, v: T) {
        let row = &mut self.rows[r];
        row.cover(c, c + 1);
        row.vals[c - row.lo] += v;
    }

    fn solve(mut self, mut b: DVector<T>) -> Option<DVector<T>> {
        let n = self.rows.len();
        let scale = self
            .rows
            .iter()
            .flat_map(|r| r.vals.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()));
        let tiny = scale * T::machine_epsilon() * lit::<T>(16.0);
        // reach[c]: last row whose original segment starts at or before c.
        // Row swaps only move rows within this reach, so it bounds the rows
        // that can hold a nonzero in column c during elimination.
        let mut reach = vec![0usize; n];
        for (i, row) in self.rows.iter().enumerate() {
            if !row.vals.is_empty() {
                reach[row.lo.min(n - 1)] = reach[row.lo.min(n - 1)].max(i);
            }
        }
        for c in 1..n {
            reach[c] = reach[c].max(reach[c - 1]);
        }
        for k in 0..n {
            let mut piv = k;
            let mut best = self.rows[k].get(k).abs();
            let r = reach[k].max(k) + 1;
            for i in (k + 1)..r {
                let v = self.rows[i].get(k).abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tiny {
                return None;
            }
            self.rows.swap(k, piv);
            b.swap_rows(k, piv);
            let pivot_row = self.rows[k].clone();
            let p = pivot_row.get(k);
            let bk = b[k];
            for i in (k + 1)..r {
                let m = self.rows[i].get(k) / p;
                if m == T::zero() {
                    continue;
                }
                let row = &mut self.rows[i];
                row.cover(k, pivot_row.hi());
                for c in k..pivot_row.hi() {
                    row.vals[c - row.lo] -= m * pivot_row.vals[c - pivot_row.lo];
                }
                // drop the eliminated leading entries so `lo` tracks the band
                let cut = (k + 1).min(row.hi()) - row.lo;
                row.vals.drain(..cut);
                row.lo = k + 1;
                b[i] -= m * bk;
            }
        }
        let mut x = DVector::zeros(n);
        for k in (0..n).rev() {
            let row = &self.rows[k];
            let mut s = b[k];
            for c in (k + 1)..row.hi() {
                s -= row.vals[c - row.lo] * x[c];
            }
            x[k] = s / row.get(k);
        }
        Some(x)
    }
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn convergence_order<T: Scalar>(samples: &[(T, T)]) -> Result<T> {
    if samples.len() < 2 {
        return Err(FlowError::InvalidInput("need at least two meshes".into()));
    }
    if samples.iter().any(|(h, e)| !(*h > T::zero() && *e > T::zero())) {
        return Err(FlowError::InvalidInput(
            "errors at rounding level, no order can be observed".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|(h, e)| (h.to_f64_lossy().ln(), e.to_f64_lossy().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FlowError::InvalidInput("meshes must differ in width".into()));
    }
    Ok(lit(sxy / sxx))
}

/// Solves on uniform meshes with the given interval counts and records the
/// max-node position error against `exact`, returning `(h, error)` pairs and
/// the observed order.
pub fn convergence_study<T, F, E>(
    rhs: F,
    exact: E,
    scheme: &CollocationScheme<T>,
    intervals: &[usize],
) -> Result<(Vec<(T, T)>, T)>
where
    T: Scalar,
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
    E: Fn(T) -> DVector<T>,
{
    let x1 = exact(T::zero());
    let x2 = exact(T::one());
    let mut samples = Vec::with_capacity(intervals.len());
    for &n in intervals {
        let mesh = Mesh::uniform(n)?;
        let pts = mesh
            .nodes()
            .iter()
            .map(|&t| &x1 + (&x2 - &x1) * t)
            .collect();
        let guess = DiscreteCurve::new(mesh, pts, None)?;
        let sol = solve_bvp(&rhs, &x1, &x2, &guess, scheme, &NewtonOptions::default())?;
        let err = sol
            .curve
            .mesh
            .nodes()
            .iter()
            .zip(&sol.curve.points)
            .map(|(&t, p)| (p - exact(t)).amax())
            .fold(T::zero(), |a, b| a.max(b));
        samples.push((sol.curve.mesh.max_width(), err));
    }
    let order = convergence_order(&samples)?;
    Ok((samples, order))
}

//! Fixed boundary flows: curves with pinned endpoints whose tangent follows
//! the principal direction field, computed by alternating frozen-field
//! collocation solves with projection back onto the manifold.
//!
//! Also home to the objective functional, the Fréchet mean, geodesic initial
//! curves and the principal-flow baseline that integrates the field from a
//! single point.

use nalgebra::{DMatrix, DVector};

use crate::bvp::{solve_bvp, CollocationScheme, NewtonOptions};
use crate::curve::{DiscreteCurve, Mesh};
use crate::dae::{constraint_residuals, ELSystem};
use crate::error::{FlowError, Result};
use crate::field::{
    orient, truncate_cloud, Bandwidth, CloudProjection, DataCloud, DataField, DirectionField,
    VectorFieldSample,
};
use crate::geometry::Manifold;
use crate::scalar::{from_usize, lit, Scalar};

/// Intrinsic mean by gradient descent `x ← exp_x(mean_i log_x(x_i))`.
pub fn frechet_mean<T: Scalar>(points: &[DVector<T>], manifold: &Manifold<T>) -> Result<DVector<T>> {
    const MAX_ITER: usize = 1000;
    let first = points
        .first()
        .ok_or(FlowError::EmptyNeighborhood { found: 0 })?;
    let n: T = from_usize(points.len());
    let mut x = first.clone();
    let tol = lit::<T>(1e-10) * (T::one() + first.norm());
    for _ in 0..MAX_ITER {
        let mut step = DVector::zeros(x.len());
        for p in points {
            step += manifold.log(&x, p)?;
        }
        step /= n;
        x = manifold.project(&manifold.exp(&x, &step)?)?;
        if step.norm() <= tol {
            return Ok(x);
        }
    }
    Err(FlowError::NoConvergence { iterations: MAX_ITER })
}

/// Minimizing geodesic from `x1` to `x2` sampled at `intervals + 1` uniform
/// parameter values, with its constant-speed velocities.
pub fn initial_curve<T: Scalar>(
    x1: &DVector<T>,
    x2: &DVector<T>,
    intervals: usize,
    manifold: &Manifold<T>,
) -> Result<DiscreteCurve<T>> {
    if x1 == x2 {
        return Err(FlowError::IdenticalEndpoints);
    }
    let mesh = Mesh::uniform(intervals)?;
    let v = manifold.log(x1, x2)?;
    if v.norm() == T::zero() {
        return Err(FlowError::IdenticalEndpoints);
    }
    let mut points = Vec::with_capacity(intervals + 1);
    let mut vels = Vec::with_capacity(intervals + 1);
    for (i, &t) in mesh.nodes().iter().enumerate() {
        let p = if i == 0 {
            x1.clone()
        } else if i == intervals {
            x2.clone()
        } else {
            manifold.project(&manifold.exp(x1, &(&v * t))?)?
        };
        vels.push(manifold.parallel_transport(&v, x1, &p)?);
        points.push(p);
    }
    DiscreteCurve::new(mesh, points, Some(vels))
}

/// Composite trapezoid rule for `∫ ⟨γ̇, W(γ)⟩ dt` with node velocities and
/// node field values already oriented.
pub fn objective_from_samples<T: Scalar>(curve: &DiscreteCurve<T>, fields: &[DVector<T>]) -> T {
    let vel = curve.velocities_or_estimate();
    let vals: Vec<T> = vel.iter().zip(fields).map(|(u, w)| u.dot(w)).collect();
    let half: T = lit(0.5);
    (0..curve.mesh.intervals())
        .map(|i| curve.mesh.width(i) * (vals[i] + vals[i + 1]) * half)
        .fold(T::zero(), |a, b| a + b)
}

/// `𝓛(W, γ)` with the field oriented along `reference` at every node.
pub fn objective<T: Scalar>(
    curve: &DiscreteCurve<T>,
    field: &dyn DirectionField<T>,
    reference: &DVector<T>,
) -> Result<T> {
    let fields = oriented_fields(curve, field, reference)?;
    Ok(objective_from_samples(curve, &fields))
}

fn oriented_fields<T: Scalar>(
    curve: &DiscreteCurve<T>,
    field: &dyn DirectionField<T>,
    reference: &DVector<T>,
) -> Result<Vec<DVector<T>>> {
    curve
        .points
        .iter()
        .map(|x| {
            let w = field.direction(x)?;
            let n = w.norm();
            Ok(orient(&if n > T::zero() { w / n } else { w }, reference))
        })
        .collect()
}

/// Knobs of the outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions<T: Scalar> {
    pub delta: T,
    /// Mesh intervals `N`.
    pub intervals: usize,
    /// Lobatto stages `k`.
    pub stages: usize,
    /// Finite-difference step for the field Jacobian.
    pub jacobian_step: T,
    pub max_outer: usize,
    /// Convergence threshold on the max node displacement, relative to the
    /// geodesic distance between the endpoints.
    pub relative_tol: T,
    /// Project onto the manifold only once, after the iteration settles.
    pub deferred_projection: bool,
    /// Fraction `ω ∈ (0, 1]` of each collocation update that is applied;
    /// `1` is the plain fixed-point iteration.
    pub relaxation: T,
    pub newton: NewtonOptions<T>,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            delta: lit(-0.5),
            intervals: 40,
            stages: 3,
            jacobian_step: lit(0.05),
            max_outer: 100,
            relative_tol: lit(1e-6),
            deferred_projection: false,
            relaxation: T::one(),
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Converged,
    /// Two curves alternate without settling.
    Oscillating,
    MaxIterations,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T: Scalar> {
    /// `𝓛` of the curve entering the iteration, under its frozen field.
    pub objective: T,
    /// Max node displacement produced by the iteration.
    pub displacement: T,
    /// Max `‖F(γ_i)‖` after the iteration.
    pub position_residual: T,
    /// Max acceleration-level residual at the nodes.
    pub acceleration_residual: T,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult<T: Scalar> {
    pub curve: DiscreteCurve<T>,
    pub initial: DiscreteCurve<T>,
    pub iterations: Vec<IterationRecord<T>>,
    pub status: FlowStatus,
    /// `𝓛` of the final curve.
    pub objective: T,
    /// `𝓛` of the initial geodesic.
    pub initial_objective: T,
    /// `∫‖γ̇‖² dt`, reported but not constrained.
    pub energy: T,
}

impl<T: Scalar> FlowResult<T> {
    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }
}

/// Frozen field of one outer iteration: Jacobians at the nodes, linearly
/// interpolated in `t`.
struct FrozenField<T: Scalar> {
    mesh: Mesh<T>,
    jacobians: Vec<DMatrix<T>>,
}

impl<T: Scalar> FrozenField<T> {
    fn at(&self, t: T) -> Result<DMatrix<T>> {
        let i = self.mesh.locate(t)?;
        let s = (t - self.mesh.nodes()[i]) / self.mesh.width(i);
        Ok(&self.jacobians[i] * (T::one() - s) + &self.jacobians[i + 1] * s)
    }
}

fn freeze<T: Scalar>(
    curve: &DiscreteCurve<T>,
    field: &dyn DirectionField<T>,
    reference: &DVector<T>,
    step: T,
    iteration: usize,
) -> Result<(Vec<DVector<T>>, Vec<DMatrix<T>>)> {
    let mut ws = Vec::with_capacity(curve.len());
    let mut js = Vec::with_capacity(curve.len());
    for (i, x) in curve.points.iter().enumerate() {
        let tag = |e: FlowError| e.at(iteration, i);
        let w = field.direction(x).map_err(tag)?;
        let n = w.norm();
        let w = orient(&if n > T::zero() { w / n } else { w }, reference);
        js.push(field.jacobian(x, &w, step).map_err(tag)?);
        ws.push(w);
    }
    Ok((ws, js))
}

/// `γ + ω (γ_new - γ)` node by node, velocities likewise.
fn relax<T: Scalar>(old: &DiscreteCurve<T>, new: &DiscreteCurve<T>, omega: T) -> Result<DiscreteCurve<T>> {
    let blend = |a: &DVector<T>, b: &DVector<T>| a + (b - a) * omega;
    let points = old.points.iter().zip(&new.points).map(|(a, b)| blend(a, b)).collect();
    let vels = old
        .velocities_or_estimate()
        .iter()
        .zip(new.velocities_or_estimate().iter())
        .map(|(a, b)| blend(a, b))
        .collect();
    let mut out = DiscreteCurve::new(new.mesh.clone(), points, Some(vels))?;
    let last = out.points.len() - 1;
    out.points[0] = new.points[0].clone();
    out.points[last] = new.points[last].clone();
    Ok(out)
}

fn max_displacement<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> T {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm())
        .fold(T::zero(), |m, d| m.max(d))
}

fn project_nodes<T: Scalar>(
    curve: &DiscreteCurve<T>,
    manifold: &Manifold<T>,
    iteration: usize,
) -> Result<DiscreteCurve<T>> {
    let n = curve.len();
    let vel = curve.velocities_or_estimate();
    let mut points = Vec::with_capacity(n);
    let mut vels = Vec::with_capacity(n);
    for (i, (p, u)) in curve.points.iter().zip(&vel).enumerate() {
        let q = if i == 0 || i == n - 1 {
            p.clone()
        } else {
            manifold.project(p).map_err(|e| e.at(iteration, i))?
        };
        vels.push(manifold.project_tangent(&q, u).map_err(|e| e.at(iteration, i))?);
        points.push(q);
    }
    DiscreteCurve::new(curve.mesh.clone(), points, Some(vels))
}

/// Runs the outer iteration for an arbitrary direction field, in the units of
/// the inputs.
pub fn solve_flow<T: Scalar>(
    manifold: &Manifold<T>,
    field: &dyn DirectionField<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
    options: &SolveOptions<T>,
) -> Result<FlowResult<T>> {
    let initial = initial_curve(x1, x2, options.intervals, manifold)?;
    solve_flow_from(manifold, field, x1, x2, initial, options)
}

/// As [`solve_flow`] but starting from a given curve.
pub fn solve_flow_from<T: Scalar>(
    manifold: &Manifold<T>,
    field: &dyn DirectionField<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
    initial: DiscreteCurve<T>,
    options: &SolveOptions<T>,
) -> Result<FlowResult<T>> {
    if x1 == x2 {
        return Err(FlowError::IdenticalEndpoints);
    }
    let system = ELSystem::new(options.delta)?;
    if !(options.relaxation > T::zero() && options.relaxation <= T::one()) {
        return Err(FlowError::OutOfRange {
            value: options.relaxation.to_f64_lossy(),
            range: "(0, 1]",
        });
    }
    let scheme = CollocationScheme::lobatto(options.stages)?;
    let v0 = x2 - x1;
    let tol = options.relative_tol * manifold.distance(x1, x2)?;

    let (w_init, _) = freeze(&initial, field, &v0, options.jacobian_step, 0)?;
    let initial_objective = objective_from_samples(&initial, &w_init);

    let mut curve = initial.clone();
    let mut records = Vec::new();
    let mut history: Vec<Vec<DVector<T>>> = vec![curve.points.clone()];
    let mut status = FlowStatus::MaxIterations;
    for iteration in 1..=options.max_outer {
        let (ws, js) = freeze(&curve, field, &v0, options.jacobian_step, iteration)?;
        let frozen = FrozenField {
            mesh: curve.mesh.clone(),
            jacobians: js,
        };
        let rhs = |t: T, y: &DVector<T>| -> Result<DVector<T>> { system.first_order(manifold, y, &frozen.at(t)?) };
        let sol = solve_bvp(rhs, x1, x2, &curve, &scheme, &options.newton).map_err(|e| e.at(iteration, 0))?;
        let solved = if options.relaxation == T::one() {
            sol.curve
        } else {
            relax(&curve, &sol.curve, options.relaxation)?
        };
        let next = if options.deferred_projection {
            solved
        } else {
            project_nodes(&solved, manifold, iteration)?
        };
        let displacement = max_displacement(&next.points, &curve.points);
        let residuals = constraint_residuals(&next, manifold, &system, &frozen.jacobians)?;
        records.push(IterationRecord {
            objective: objective_from_samples(&curve, &ws),
            displacement,
            position_residual: residuals.iter().map(|r| r.position).fold(T::zero(), |a, b| a.max(b)),
            acceleration_residual: residuals.iter().map(|r| r.acceleration).fold(T::zero(), |a, b| a.max(b)),
            newton_iterations: sol.iterations,
        });
        curve = next;
        if displacement <= tol {
            status = FlowStatus::Converged;
            break;
        }
        if history.len() >= 2 {
            let back2 = &history[history.len() - 2];
            let cycle = max_displacement(&curve.points, back2);
            if cycle <= tol && displacement > tol {
                status = FlowStatus::Oscillating;
                break;
            }
        }
        history.push(curve.points.clone());
        if history.len() > 2 {
            history.remove(0);
        }
    }
    if options.deferred_projection {
        curve = project_nodes(&curve, manifold, records.len())?;
    }
    let (ws, _) = freeze(&curve, field, &v0, options.jacobian_step, records.len() + 1)?;
    let objective = objective_from_samples(&curve, &ws);
    let vel = curve.velocities_or_estimate();
    let energy = (0..curve.mesh.intervals())
        .map(|i| curve.mesh.width(i) * (vel[i].norm_squared() + vel[i + 1].norm_squared()) * lit::<T>(0.5))
        .fold(T::zero(), |a, b| a + b);
    Ok(FlowResult {
        curve,
        initial,
        iterations: records,
        status,
        objective,
        initial_objective,
        energy,
    })
}

/// Full configuration of a data-driven flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig<T: Scalar> {
    /// Kernel bandwidth `h`.
    pub bandwidth: Bandwidth<T>,
    /// Truncation radius `h*` around the initial curve.
    pub truncation: Bandwidth<T>,
    pub projection: CloudProjection,
    /// Length scale of the field Jacobian in input units; by default the
    /// bandwidth, or a twentieth of the data diameter when it is infinite.
    pub jacobian_step: Option<T>,
    /// Rescale data and endpoints to unit diameter before solving.
    pub rescale: bool,
    pub solve: SolveOptions<T>,
}

impl<T: Scalar> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Infinite,
            truncation: Bandwidth::Infinite,
            projection: CloudProjection::Nearest,
            jacobian_step: None,
            rescale: true,
            solve: SolveOptions::default(),
        }
    }
}

/// A data-driven flow together with the field samples at its nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFlowResult<T: Scalar> {
    pub flow: FlowResult<T>,
    /// Field at each node of the final curve, oriented along `x2 - x1`.
    pub samples: Vec<VectorFieldSample<T>>,
    /// Points that survived truncation.
    pub active: Vec<bool>,
    /// Factor applied to the inputs before solving.
    pub scale: T,
}

/// Fixed boundary flow of `cloud` from `x1` to `x2`.
///
/// Inputs are dilated about the origin to unit diameter (bandwidths
/// included), solved, and mapped back; `𝓛` and the energy are reported in
/// input units.
pub fn fixed_boundary_flow<T: Scalar>(
    manifold: &Manifold<T>,
    cloud: &DataCloud<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
    config: &FlowConfig<T>,
) -> Result<DataFlowResult<T>> {
    if x1 == x2 {
        return Err(FlowError::IdenticalEndpoints);
    }
    let tol = lit::<T>(crate::geometry::MANIFOLD_TOL) * (T::one() + x1.norm().max(x2.norm()));
    for x in [x1, x2] {
        if !manifold.contains(x, tol) {
            return Err(FlowError::InvalidInput("endpoint is not on the manifold".into()));
        }
    }
    let scale = if config.rescale {
        let mut diam = cloud.diameter();
        for p in cloud.active_points().map(|(_, p)| p) {
            diam = diam.max((p - x1).norm()).max((p - x2).norm());
        }
        diam = diam.max((x1 - x2).norm());
        if diam > T::zero() {
            T::one() / diam
        } else {
            T::one()
        }
    } else {
        T::one()
    };
    let m = manifold.scaled(scale);
    let c = cloud.scaled(scale);
    let a = x1 * scale;
    let b = x2 * scale;
    let h = config.bandwidth.scaled(scale);
    let step = match (config.jacobian_step, h) {
        (Some(s), _) => s * scale,
        (None, Bandwidth::Finite(hv)) => hv,
        (None, Bandwidth::Infinite) => c.diameter() * lit::<T>(0.05),
    };
    let initial = initial_curve(&a, &b, config.solve.intervals, &m)?;
    let truncated = truncate_cloud(&c, &initial, config.truncation.scaled(scale))?;
    let active = truncated.active_mask().to_vec();
    let field = DataField::new(m.clone(), truncated, h).with_projection(config.projection);
    let mut opts = config.solve.clone();
    opts.jacobian_step = step;
    let flow = solve_flow_from(&m, &field, &a, &b, initial, &opts)?;

    let v0 = &b - &a;
    let samples = flow
        .curve
        .points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let s = field.sample(x).map_err(|e| e.at(flow.iterations.len(), i))?;
            Ok(unscale_sample(s.oriented(&v0), scale))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = T::one() / scale;
    let unscale_curve = |cv: &DiscreteCurve<T>, ends: (&DVector<T>, &DVector<T>)| {
        let mut pts: Vec<DVector<T>> = cv.points.iter().map(|p| p * inv).collect();
        pts[0] = ends.0.clone();
        let last = pts.len() - 1;
        pts[last] = ends.1.clone();
        DiscreteCurve {
            mesh: cv.mesh.clone(),
            points: pts,
            velocities: cv.velocities.as_ref().map(|v| v.iter().map(|u| u * inv).collect()),
        }
    };
    let flow = FlowResult {
        curve: unscale_curve(&flow.curve, (x1, x2)),
        initial: unscale_curve(&flow.initial, (x1, x2)),
        iterations: flow
            .iterations
            .iter()
            .map(|r| IterationRecord {
                objective: r.objective * inv,
                displacement: r.displacement * inv,
                position_residual: r.position_residual,
                acceleration_residual: r.acceleration_residual,
                newton_iterations: r.newton_iterations,
            })
            .collect(),
        status: flow.status,
        objective: flow.objective * inv,
        initial_objective: flow.initial_objective * inv,
        energy: flow.energy * inv * inv,
    };
    Ok(DataFlowResult {
        flow,
        samples,
        active,
        scale,
    })
}

fn unscale_sample<T: Scalar>(s: VectorFieldSample<T>, scale: T) -> VectorFieldSample<T> {
    let inv = T::one() / scale;
    VectorFieldSample {
        base_point: s.base_point * inv,
        direction: s.direction,
        eigenvalues: s.eigenvalues.iter().map(|l| *l * inv * inv).collect(),
        eigenvectors: s.eigenvectors,
        neighbor_count: s.neighbor_count,
        projected_point: s.projected_point * inv,
    }
}

/// One half of a principal flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T: Scalar> {
    pub points: Vec<DVector<T>>,
    pub length: T,
    /// Why integration ended early, if it did.
    pub stopped: Option<FlowError>,
}

impl<T: Scalar> Branch<T> {
    /// The branch as a curve parameterized proportionally to arc length.
    pub fn to_curve(&self) -> Result<DiscreteCurve<T>> {
        if self.points.len() < 2 {
            return Err(FlowError::InvalidInput("branch has fewer than two points".into()));
        }
        let mut s = vec![T::zero()];
        for w in self.points.windows(2) {
            let last = *s.last().expect("nonempty");
            s.push(last + (&w[1] - &w[0]).norm());
        }
        let total = *s.last().expect("nonempty");
        if total == T::zero() {
            return Err(FlowError::ZeroSegment { index: 0 });
        }
        let mut nodes: Vec<T> = s.iter().map(|v| *v / total).collect();
        let n = nodes.len();
        nodes[n - 1] = T::one();
        DiscreteCurve::new(Mesh::new(nodes)?, self.points.clone(), None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalFlow<T: Scalar> {
    /// Branch starting along `+W(start)`.
    pub forward: Branch<T>,
    /// Branch starting along `-W(start)`.
    pub backward: Branch<T>,
}

/// Integrates `γ̇ = ±W(γ)` from `start` with classical RK4 steps of arc
/// length `step`, projecting every step onto the manifold, until each branch
/// has length `length`. The sign of `W` is kept continuous along each branch.
pub fn principal_flow<T: Scalar>(
    manifold: &Manifold<T>,
    field: &dyn DirectionField<T>,
    start: &DVector<T>,
    length: T,
    step: T,
) -> Result<PrincipalFlow<T>> {
    if !(step > T::zero() && length > T::zero()) {
        return Err(FlowError::InvalidInput("step and length must be positive".into()));
    }
    let x0 = manifold.project(start)?;
    let w0 = unit(field.direction(&x0)?)?;
    Ok(PrincipalFlow {
        forward: trace(manifold, field, &x0, w0.clone(), length, step),
        backward: trace(manifold, field, &x0, -w0, length, step),
    })
}

fn unit<T: Scalar>(w: DVector<T>) -> Result<DVector<T>> {
    let n = w.norm();
    if n == T::zero() {
        return Err(FlowError::ZeroLeadingEigenvalue);
    }
    Ok(w / n)
}

fn trace<T: Scalar>(
    manifold: &Manifold<T>,
    field: &dyn DirectionField<T>,
    x0: &DVector<T>,
    w0: DVector<T>,
    length: T,
    step: T,
) -> Branch<T> {
    let mut points = vec![x0.clone()];
    let mut heading = w0;
    let mut travelled = T::zero();
    let mut stopped = None;
    while travelled < length - step * lit::<T>(1e-9) {
        let hstep = step.min(length - travelled);
        let x = points.last().expect("nonempty").clone();
        let eval = |p: &DVector<T>, reference: &DVector<T>| -> Result<DVector<T>> {
            let w = unit(field.direction(p)?)?;
            let w = manifold.project_tangent(p, &w)?;
            Ok(orient(&unit(w)?, reference))
        };
        let result = (|| {
            let k1 = eval(&x, &heading)?;
            let k2 = eval(&(&x + &k1 * (hstep * lit::<T>(0.5))), &k1)?;
            let k3 = eval(&(&x + &k2 * (hstep * lit::<T>(0.5))), &k1)?;
            let k4 = eval(&(&x + &k3 * hstep), &k1)?;
            let dx = (k1.clone() + k2 * lit::<T>(2.0) + k3 * lit::<T>(2.0) + k4) * (hstep / lit::<T>(6.0));
            let next = manifold.project(&(&x + dx))?;
            Ok((next, k1))
        })();
        match result {
            Ok((next, k1)) => {
                travelled += (&next - &x).norm();
                heading = k1;
                points.push(next);
            }
            Err(e) => {
                stopped = Some(e);
                break;
            }
        }
    }
    Branch {
        points,
        length: travelled,
        stopped,
    }
}

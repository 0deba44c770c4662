//! Experiment drivers behind the CLI verbs.
//!
//! Each driver loads the data named by the config, runs one kind of
//! computation and writes its artifacts into the output directory. The
//! returned JSON value is also written as `summary.json`.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fbflow::analysis::{HSweep, Lattice, LatticePath};
use fbflow::field::lambda1_landscape;
use fbflow::{
    assumption_check, constraint_residuals, discrete_objective, fixed_boundary_flow, frechet_mean, gamma_s,
    h_sweep, lattice_oracle, principal_flow, rho_measure, sigma_infinity, Bandwidth, DataCloud,
    DataField, DataFlowResult, DirectionField, ELSystem, EuclideanField, FlowConfig, LatticePathProblem, Manifold,
    SolveOptions,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{CsvFormat, DataSource, ExperimentConfig, ManifoldSpec};
use crate::generate::generate_with;
use crate::geo::{ingest_geo, ingest_raw, GeoPoint};
use crate::output::{fmt_f64, indexed, vector_cells, write_json, write_plot_script, PlotKind, Table};

/// Data and geometry of one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ManifoldSpec,
    pub manifold: Manifold<f64>,
    pub points: Vec<DVector<f64>>,
    pub endpoints: Option<(DVector<f64>, DVector<f64>)>,
    /// Generating curve between the endpoints, for synthetic data.
    pub reference: Option<Vec<DVector<f64>>>,
    /// Data came from a latitude/longitude catalogue.
    pub geo: bool,
}

impl Prepared {
    pub fn cloud(&self) -> Result<DataCloud<f64>> {
        Ok(DataCloud::new(self.points.clone())?)
    }

    fn plot_kind(&self) -> PlotKind {
        if self.geo {
            PlotKind::Geo
        } else if self.manifold.ambient_dim() == 2 {
            PlotKind::Plane
        } else {
            PlotKind::Surface
        }
    }

    fn require_endpoints(&self) -> Result<(&DVector<f64>, &DVector<f64>)> {
        self.endpoints
            .as_ref()
            .map(|(a, b)| (a, b))
            .ok_or_else(|| anyhow!("this command needs endpoints; add \"endpoints\" to the config"))
    }
}

/// Loads or generates the data and resolves the endpoints.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let spec = cfg.manifold_spec()?;
    let manifold = spec.build()?;
    let unit_sphere = matches!(spec, ManifoldSpec::Sphere { radius } if radius == 1.0);
    let (points, mut endpoints, reference, geo) = match &cfg.data {
        DataSource::Generator(g) => {
            let seed = g.seed.ok_or_else(|| anyhow!("generator data need a seed"))?;
            let gen = generate_with(g.scenario, g.n, g.sigma, seed, &g.params)
                .with_context(|| format!("generating {}", g.scenario))?;
            (gen.points, Some(gen.endpoints), Some(gen.reference), false)
        }
        DataSource::Csv(c) => {
            let path = cfg.data_path().expect("csv source has a path");
            let geo = match c.format {
                CsvFormat::Geo => true,
                CsvFormat::Raw => false,
                CsvFormat::Auto => header_names_latitude(&path),
            };
            let points = if geo {
                if !unit_sphere {
                    bail!("latitude/longitude data need the unit sphere");
                }
                ingest_geo(&path, &c.filter)?.iter().map(GeoPoint::to_unit).collect()
            } else {
                let raw = ingest_raw(&path)?;
                if raw[0].len() != manifold.ambient_dim() {
                    bail!(
                        "{} has {} columns, the manifold lives in R^{}",
                        path.display(),
                        raw[0].len(),
                        manifold.ambient_dim()
                    );
                }
                raw.iter()
                    .enumerate()
                    .map(|(i, p)| manifold.project(p).with_context(|| format!("projecting data row {}", i + 1)))
                    .collect::<Result<Vec<_>>>()?
            };
            (points, None, None, geo)
        }
    };
    if points.len() < 2 {
        bail!("at least two data points are required, found {}", points.len());
    }
    if let Some([a, b]) = &cfg.endpoints {
        let a = manifold.project(&a.resolve(unit_sphere)?).context("projecting the first endpoint")?;
        let b = manifold.project(&b.resolve(unit_sphere)?).context("projecting the second endpoint")?;
        endpoints = Some((a, b));
    }
    Ok(Prepared {
        spec,
        manifold,
        points,
        endpoints,
        reference: if cfg.endpoints.is_some() { None } else { reference },
        geo,
    })
}

fn header_names_latitude(path: &Path) -> bool {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| t.lines().next().map(|l| l.to_ascii_lowercase()))
        .is_some_and(|h| h.split(',').any(|c| matches!(c.trim(), "lat" | "latitude")))
}

/// Flow configuration for one value of `δ`.
pub fn flow_config(cfg: &ExperimentConfig, delta: f64) -> Result<FlowConfig<f64>> {
    let mut solve = SolveOptions {
        delta,
        intervals: cfg.intervals,
        stages: cfg.stages,
        max_outer: cfg.max_outer,
        relative_tol: cfg.relative_tol,
        deferred_projection: cfg.deferred_projection,
        relaxation: cfg.relaxation,
        ..SolveOptions::default()
    };
    solve.newton.tol = cfg.newton_tol;
    solve.newton.max_iterations = cfg.newton_max_iterations;
    Ok(FlowConfig {
        bandwidth: cfg.h.bandwidth(cfg.units, "h")?,
        truncation: cfg.h_star.bandwidth(cfg.units, "h_star")?,
        projection: cfg.projection.into(),
        jacobian_step: cfg
            .jacobian_step
            .as_ref()
            .map(|s| s.arc(cfg.units, "jacobian_step"))
            .transpose()?
            .flatten(),
        rescale: cfg.rescale,
        solve,
    })
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<std::path::PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_data(dir: &Path, points: &[DVector<f64>], active: Option<&[bool]>) -> Result<()> {
    let d = points[0].len();
    let mut header = indexed("x", d);
    if active.is_some() {
        header.push("active".into());
    }
    let mut t = Table::new(&header);
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<String> = vector_cells(p).collect();
        if let Some(a) = active {
            row.push(if a[i] { "1" } else { "0" }.into());
        }
        t.push(row);
    }
    t.write(&dir.join("data.csv"))
}

fn curve_table(points: &[DVector<f64>], ts: Option<&[f64]>) -> Table {
    let d = points[0].len();
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", d));
    let mut t = Table::new(&header);
    let n = points.len();
    for (i, p) in points.iter().enumerate() {
        let time = ts.map_or(i as f64 / (n - 1).max(1) as f64, |ts| ts[i]);
        let mut row = vec![fmt_f64(time)];
        row.extend(vector_cells(p));
        t.push(row);
    }
    t
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn delta_suffix(delta: f64) -> String {
    format!("_delta{delta}")
}

/// Per-node table of a converged (or stopped) data flow.
fn flow_table(
    result: &DataFlowResult<f64>,
    prepared: &Prepared,
    cloud: &DataCloud<f64>,
    fc: &FlowConfig<f64>,
) -> Result<Table> {
    let curve = &result.flow.curve;
    let d = curve.dim();
    let mut header = vec!["t".to_string()];
    header.extend(indexed("x", d));
    header.extend(indexed("u", d));
    header.extend(["lambda1", "rho", "neighbors"].map(String::from));
    header.extend(indexed("w", d));
    header.extend(["res_position", "res_velocity", "res_acceleration"].map(String::from));

    // Field Jacobians at the nodes, in input units, for the residual check.
    let active = cloud.with_mask(result.active.clone())?;
    let field = DataField::new(prepared.manifold.clone(), active, fc.bandwidth).with_projection(fc.projection);
    let step = match (fc.jacobian_step, fc.bandwidth) {
        (Some(s), _) => s,
        (None, Bandwidth::Finite(h)) => h,
        (None, Bandwidth::Infinite) => cloud.diameter() * 0.05,
    };
    let reference = curve.end() - curve.start();
    let jacobians: Vec<DMatrix<f64>> = curve
        .points
        .iter()
        .map(|x| {
            field
                .jacobian(x, &reference, step)
                .unwrap_or_else(|_| DMatrix::zeros(d, d))
        })
        .collect();
    let system = ELSystem::new(fc.solve.delta)?;
    let residuals = constraint_residuals(curve, &prepared.manifold, &system, &jacobians)?;
    let velocities = curve.velocities_or_estimate();

    let mut t = Table::new(&header);
    for i in 0..curve.len() {
        let s = &result.samples[i];
        let mut row = vec![fmt_f64(curve.mesh.nodes()[i])];
        row.extend(vector_cells(&curve.points[i]));
        row.extend(vector_cells(&velocities[i]));
        row.push(fmt_f64(s.eigenvalues.first().copied().unwrap_or(f64::NAN)));
        row.push(fmt_f64(rho_measure(&s.eigenvalues).unwrap_or(f64::NAN)));
        row.push(s.neighbor_count.to_string());
        row.extend(vector_cells(&s.direction));
        let r = &residuals[i];
        row.extend([r.position, r.velocity, r.acceleration].map(fmt_f64));
        t.push(row);
    }
    Ok(t)
}

fn iterations_table(result: &DataFlowResult<f64>) -> Table {
    let mut t = Table::new(&[
        "iteration",
        "objective",
        "displacement",
        "position_residual",
        "acceleration_residual",
        "newton_iterations",
    ]);
    for (k, r) in result.flow.iterations.iter().enumerate() {
        t.push(vec![
            (k + 1).to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.displacement),
            fmt_f64(r.position_residual),
            fmt_f64(r.acceleration_residual),
            r.newton_iterations.to_string(),
        ]);
    }
    t
}

fn config_echo(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

/// Runs the fixed boundary flow for every `δ` of the config.
///
/// With more than one `δ` (or `always_suffix`), per-run files carry a
/// `_delta<δ>` suffix. Runs are independent and execute in parallel. Failed
/// runs are reported in the summary and make the call return an error after
/// all artifacts are written.
pub fn run_flow(cfg: &ExperimentConfig, always_suffix: bool) -> Result<Value> {
    let prepared = prepare(cfg)?;
    let (x1, x2) = prepared.require_endpoints()?;
    let cloud = prepared.cloud()?;
    let dir = prepare_dir(cfg)?;
    let deltas = cfg.deltas();
    let suffixed = always_suffix || deltas.len() > 1;

    let outcomes: Vec<(f64, Result<(DataFlowResult<f64>, FlowConfig<f64>)>)> = deltas
        .par_iter()
        .map(|&delta| {
            let out = (|| {
                let fc = flow_config(cfg, delta)?;
                let r = fixed_boundary_flow(&prepared.manifold, &cloud, x1, x2, &fc)
                    .with_context(|| format!("flow with delta = {delta}"))?;
                Ok((r, fc))
            })();
            (delta, out)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut active_mask = None;
    for (delta, outcome) in &outcomes {
        let suffix = if suffixed { delta_suffix(*delta) } else { String::new() };
        match outcome {
            Ok((r, fc)) => {
                flow_table(r, &prepared, &cloud, fc)?.write(&dir.join(format!("flow{suffix}.csv")))?;
                iterations_table(r).write(&dir.join(format!("iterations{suffix}.csv")))?;
                if active_mask.is_none() {
                    active_mask = Some(r.active.clone());
                    curve_table(&r.flow.initial.points, Some(r.flow.initial.mesh.nodes()))
                        .write(&dir.join("initial.csv"))?;
                }
                let mut run = json!({
                    "delta": delta,
                    "file": format!("flow{suffix}.csv"),
                    "status": format!("{:?}", r.flow.status),
                    "converged": r.flow.converged(),
                    "objective": r.flow.objective,
                    "initial_objective": r.flow.initial_objective,
                    "energy": r.flow.energy,
                    "iterations": r.flow.iterations.len(),
                    "active_points": r.active.iter().filter(|a| **a).count(),
                    "scale": r.scale,
                    "max_position_residual": r.flow.iterations.last().map(|i| i.position_residual),
                    "max_acceleration_residual": r.flow.iterations.last().map(|i| i.acceleration_residual),
                });
                if let Some(reference) = &prepared.reference {
                    run["hausdorff_to_reference"] = json!(crate::generate::hausdorff(&r.flow.curve.points, reference));
                }
                runs.push(run);
            }
            Err(e) => {
                failures.push(format!("{e:#}"));
                runs.push(json!({"delta": delta, "error": format!("{e:#}")}));
            }
        }
    }
    write_data(&dir, &prepared.points, active_mask.as_deref())?;
    write_plot_script(&dir, prepared.plot_kind())?;

    let converged = runs.iter().all(|r| r["converged"] == json!(true));
    let mut summary = json!({
        "command": if always_suffix { "sweep-delta" } else { "flow" },
        "converged": converged,
        "endpoints": [vec_json(x1), vec_json(x2)],
        "runs": runs,
        "config": config_echo(cfg),
    });
    if runs.len() == 1 {
        summary["objective"] = runs[0]["objective"].clone();
        summary["status"] = runs[0]["status"].clone();
    }
    write_json(&dir.join("summary.json"), &summary)?;
    if !failures.is_empty() {
        bail!("{} of {} runs failed: {}", failures.len(), deltas.len(), failures.join("; "));
    }
    Ok(summary)
}

/// Principal flow from the Fréchet mean (or `principal.start`).
pub fn run_principal(cfg: &ExperimentConfig) -> Result<Value> {
    let prepared = prepare(cfg)?;
    let cloud = prepared.cloud()?;
    let dir = prepare_dir(cfg)?;
    let unit_sphere = prepared.geo || matches!(prepared.spec, ManifoldSpec::Sphere { radius } if radius == 1.0);
    let start = match &cfg.principal.start {
        Some(p) => prepared.manifold.project(&p.resolve(unit_sphere)?)?,
        None => frechet_mean(&prepared.points, &prepared.manifold).context("Fréchet mean of the data")?,
    };
    let bandwidth = match &cfg.principal.h {
        Some(h) => h.bandwidth(cfg.units, "principal.h")?,
        None => cfg.h.bandwidth(cfg.units, "h")?,
    };
    let length = cfg.principal.length.arc(cfg.units, "principal.length")?.expect("validated");
    let step = cfg.principal.step.arc(cfg.units, "principal.step")?.expect("validated");
    let field = DataField::new(prepared.manifold.clone(), cloud, bandwidth).with_projection(cfg.projection.into());
    let pf = principal_flow(&prepared.manifold, &field, &start, length, step).context("principal flow")?;

    // One continuous polyline: the backward branch reversed, then forward.
    let d = start.len();
    let mut header = vec!["branch".to_string(), "s".to_string()];
    header.extend(indexed("x", d));
    let mut t = Table::new(&header);
    let arc = |pts: &[DVector<f64>]| {
        let mut acc = vec![0.0];
        for w in pts.windows(2) {
            acc.push(acc.last().unwrap() + (&w[1] - &w[0]).norm());
        }
        acc
    };
    let back_s = arc(&pf.backward.points);
    for (p, s) in pf.backward.points.iter().zip(&back_s).skip(1).rev() {
        let mut row = vec!["backward".to_string(), fmt_f64(-s)];
        row.extend(vector_cells(p));
        t.push(row);
    }
    for (p, s) in pf.forward.points.iter().zip(arc(&pf.forward.points)) {
        let mut row = vec!["forward".to_string(), fmt_f64(s)];
        row.extend(vector_cells(p));
        t.push(row);
    }
    t.write(&dir.join("principal.csv"))?;
    write_data(&dir, &prepared.points, None)?;
    write_plot_script(&dir, prepared.plot_kind())?;

    let branch = |b: &fbflow::flow::Branch<f64>| {
        json!({
            "length": b.length,
            "points": b.points.len(),
            "end": vec_json(b.points.last().expect("branch has its start")),
            "stopped": b.stopped.as_ref().map(|e| e.to_string()),
        })
    };
    let summary = json!({
        "command": "principal",
        "start": vec_json(&start),
        "forward": branch(&pf.forward),
        "backward": branch(&pf.backward),
        "config": config_echo(cfg),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `ρ` against the bandwidth at one point.
pub fn run_sweep_h(cfg: &ExperimentConfig) -> Result<Value> {
    let prepared = prepare(cfg)?;
    let cloud = prepared.cloud()?;
    let dir = prepare_dir(cfg)?;
    let unit_sphere = matches!(prepared.spec, ManifoldSpec::Sphere { radius } if radius == 1.0);
    let x = match &cfg.sweep_h.point {
        Some(p) => prepared.manifold.project(&p.resolve(unit_sphere)?)?,
        None => frechet_mean(&prepared.points, &prepared.manifold).context("Fréchet mean of the data")?,
    };
    let hs: Vec<f64> = cfg
        .sweep_h
        .values
        .iter()
        .map(|v| Ok(v.chord(cfg.units, "sweep_h value")?.expect("validated")))
        .collect::<Result<_>>()?;
    let sweep: HSweep<f64> = h_sweep(&x, &cloud, &hs, &prepared.manifold)?;
    let m = prepared.manifold.intrinsic_dim();
    let mut header = vec!["h".to_string(), "h_ambient".to_string(), "neighbors".to_string(), "rho".to_string()];
    header.extend(indexed("lambda", m));
    let mut t = Table::new(&header);
    for (row, given) in sweep.rows.iter().zip(&cfg.sweep_h.values) {
        let given = given.arc(cfg.units, "sweep_h value")?.expect("validated");
        let shown = if cfg.units == crate::config::Units::Miles {
            given * crate::geo::EARTH_RADIUS_MILES
        } else {
            given
        };
        let mut cells = vec![
            fmt_f64(shown),
            fmt_f64(row.h),
            row.neighbor_count.to_string(),
            fmt_f64(row.rho.unwrap_or(f64::NAN)),
        ];
        cells.extend((0..m).map(|i| fmt_f64(row.eigenvalues.get(i).copied().unwrap_or(f64::NAN))));
        t.push(cells);
    }
    t.write(&dir.join("sweep_h.csv"))?;
    let summary = json!({
        "command": "sweep-h",
        "point": vec_json(&x),
        "argmin": sweep.argmin.map(|i| json!({"row": i, "h_ambient": sweep.rows[i].h, "rho": sweep.rows[i].rho})),
        "gaps": sweep.rows.iter().filter(|r| r.rho.is_none()).count(),
        "config": config_echo(cfg),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Grid for the `λ₁` landscape: `(u, v)` labels and ambient points.
fn landscape_grid(prepared: &Prepared, n: usize) -> Result<(Vec<(f64, f64)>, Vec<DVector<f64>>)> {
    let lin = |a: f64, b: f64, k: usize| a + (b - a) * k as f64 / (n - 1) as f64;
    let mut labels = Vec::with_capacity(n * n);
    let mut pts = Vec::with_capacity(n * n);
    match &prepared.manifold {
        Manifold::Sphere { radius } => {
            // longitude x latitude, poles excluded so every node is distinct
            for i in 0..n {
                for j in 0..n {
                    let lon = lin(-180.0, 180.0, i);
                    let lat = lin(-90.0, 90.0, j).clamp(-89.999, 89.999);
                    labels.push((lon, lat));
                    pts.push(GeoPoint::new(lat, lon).expect("in range").to_unit() * *radius);
                }
            }
        }
        Manifold::Cone { height, radius } => {
            let zs = prepared.points.iter().map(|p| p[2]);
            let (zmin, zmax) = zs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
            let pad = 0.1 * (zmax - zmin).max(1e-3);
            let (z0, z1) = ((zmin - pad).max(1e-3 * height), zmax + pad);
            for i in 0..n {
                for j in 0..n {
                    let a = lin(-std::f64::consts::PI, std::f64::consts::PI, i);
                    let z = lin(z0, z1, j);
                    let r = z * radius / height;
                    labels.push((a, z));
                    pts.push(DVector::from_vec(vec![r * a.cos(), r * a.sin(), z]));
                }
            }
        }
        Manifold::Affine { .. } => {
            let mean = frechet_mean(&prepared.points, &prepared.manifold)?;
            let frame = prepared.manifold.tangent_basis(&mean)?;
            if frame.dim() != 2 {
                bail!("lambda-map needs a two-dimensional manifold, got {}", frame.dim());
            }
            let coords: Vec<DVector<f64>> = prepared.points.iter().map(|p| frame.coordinates(&(p - &mean))).collect();
            let lo = |k: usize| coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
            let hi = |k: usize| coords.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
            let pad = |k: usize| 0.1 * (hi(k) - lo(k)).max(1e-9);
            for i in 0..n {
                for j in 0..n {
                    let a = lin(lo(0) - pad(0), hi(0) + pad(0), i);
                    let b = lin(lo(1) - pad(1), hi(1) + pad(1), j);
                    labels.push((a, b));
                    pts.push(&mean + frame.ambient(&DVector::from_vec(vec![a, b])));
                }
            }
        }
    }
    Ok((labels, pts))
}

/// `λ₁` of the local covariance over a grid covering the data.
pub fn run_lambda_map(cfg: &ExperimentConfig) -> Result<Value> {
    let prepared = prepare(cfg)?;
    let cloud = prepared.cloud()?;
    let dir = prepare_dir(cfg)?;
    let h = cfg.h.bandwidth(cfg.units, "h")?;
    let (labels, grid) = landscape_grid(&prepared, cfg.lambda_map.resolution)?;
    let values = lambda1_landscape(&grid, &cloud, h, &prepared.manifold);
    let d = prepared.manifold.ambient_dim();
    let mut header = vec!["u".to_string(), "v".to_string()];
    header.extend(indexed("x", d));
    header.push("lambda1".into());
    let mut t = Table::new(&header);
    let mut failed = 0usize;
    let mut best: Option<(f64, usize)> = None;
    for (k, ((u, v), (x, val))) in labels.iter().zip(&values).enumerate() {
        let l = match val {
            Ok(l) => {
                if best.is_none_or(|(b, _)| *l < b) {
                    best = Some((*l, k));
                }
                *l
            }
            Err(_) => {
                failed += 1;
                f64::NAN
            }
        };
        let mut row = vec![fmt_f64(*u), fmt_f64(*v)];
        row.extend(vector_cells(x));
        row.push(fmt_f64(l));
        t.push(row);
    }
    t.write(&dir.join("lambda_map.csv"))?;
    write_data(&dir, &prepared.points, None)?;
    let summary = json!({
        "command": "lambda-map",
        "nodes": grid.len(),
        "failed_nodes": failed,
        "min_lambda1": best.map(|(l, k)| json!({"value": l, "at": vec_json(&grid[k])})),
        "config": config_echo(cfg),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn snap(z: &DVector<f64>, spacing: f64) -> DVector<f64> {
    z.map(|c| (c / spacing).round() * spacing)
}

/// The `h = ∞` Euclidean analysis: assumption clauses, `γ_s` and the lattice
/// optimum between the (lattice-snapped) endpoints.
pub fn run_analyze_euclid(cfg: &ExperimentConfig) -> Result<Value> {
    let prepared = prepare(cfg)?;
    if !matches!(prepared.manifold, Manifold::Affine { .. }) || prepared.manifold.codim() != 0 {
        bail!("analyze-euclid needs data in a full Euclidean space");
    }
    let d = prepared.manifold.ambient_dim();
    if !(2..=3).contains(&d) {
        bail!("analyze-euclid supports dimensions 2 and 3, got {d}");
    }
    let (x1, x2) = prepared.require_endpoints()?;
    let dir = prepare_dir(cfg)?;
    let spacing = cfg.euclid.spacing;
    let field = EuclideanField::from_cloud(prepared.points.clone())?;

    let z1 = snap(&field.coords(x1), spacing);
    let z2 = snap(&field.coords(x2), spacing);
    let (a, b) = (field.point(&z1), field.point(&z2));
    let lower = DVector::from_fn(d, |i, _| z1[i].min(z2[i]).min(0.0));
    let upper = DVector::from_fn(d, |i, _| z1[i].max(z2[i]).max(0.0));
    let counts: Vec<usize> = (0..d)
        .map(|i| ((upper[i] - lower[i]) / spacing).round() as usize + 1)
        .collect();
    let lattice = Lattice::new(lower.clone(), spacing, counts)?;

    let report = assumption_check(&field, &lattice, &a, &b)?;
    let clause = |c: &fbflow::analysis::ClauseCheck<f64>| {
        json!({
            "passed": c.passed,
            "checked": c.checked,
            "worst": c.worst.as_ref().map(|(p, v)| json!({"at": vec_json(p), "value": v})),
        })
    };
    let index = |z: &DVector<f64>| {
        lattice
            .index_of(z)
            .ok_or_else(|| anyhow!("snapped endpoint is not a lattice node"))
    };
    let problem = LatticePathProblem::new(&field, lattice.clone(), index(&z1)?, index(&z2)?)?
        .with_max_length(cfg.euclid.max_length);
    let oracle: Result<LatticePath<f64>> = lattice_oracle(&problem).map_err(Into::into);
    let gs = gamma_s(&field, &a, &b, spacing);

    let mut summary = json!({
        "command": "analyze-euclid",
        "origin": vec_json(field.origin()),
        "v1": vec_json(&field.v1()),
        "endpoints": [vec_json(&a), vec_json(&b)],
        "endpoints_snapped_by": [(&a - x1).norm(), (&b - x2).norm()],
        "lattice": {"lower": vec_json(&lower), "spacing": spacing, "counts": lattice.counts.clone()},
        "assumption": {
            "endpoints": clause(&report.endpoints),
            "sign": clause(&report.sign),
            "monotone": clause(&report.monotone),
            "all_passed": report.all_passed(),
        },
        "config": config_echo(cfg),
    });
    let sigma = sigma_infinity(&prepared.points, field.origin())?;
    let eig = sigma.symmetric_eigen();
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lambdas.sort_by(|p, q| q.total_cmp(p));
    summary["sigma_eigenvalues"] = json!(lambdas);
    summary["rho"] = rho_measure(&lambdas).map_or(Value::Null, finite_or_null);

    match &oracle {
        Ok(path) => {
            curve_table(&path.points, None).write(&dir.join("oracle.csv"))?;
            summary["oracle"] = json!({"value": path.value, "length": path.length, "nodes": path.points.len()});
        }
        Err(e) => summary["oracle"] = json!({"error": format!("{e:#}")}),
    }
    match &gs {
        Ok(g) => {
            curve_table(&g.points, None).write(&dir.join("gamma_s.csv"))?;
            summary["gamma_s"] = json!({
                "objective": g.objective,
                "length": g.length(),
                "leg_lengths": g.lengths,
                "check_objective": discrete_objective(&g.points, &field as &dyn DirectionField<f64>)?,
            });
        }
        Err(e) => summary["gamma_s"] = json!({"error": e.to_string()}),
    }
    write_data(&dir, &prepared.points, None)?;
    write_plot_script(&dir, PlotKind::Plane)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fbflow_cli::config::{ExperimentConfig, Overrides};
use fbflow_cli::generate::{generate_with, Scenario, ShapeParams};
use fbflow_cli::output::{fmt_f64, indexed, vector_cells, write_json, write_plot_script, write_points, PlotKind, Table};
use fbflow_cli::{emit_geo, run};
use serde_json::json;

/// Fixed boundary flows on manifolds: synthetic experiments and catalogue runs.
#[derive(Debug, Parser)]
#[command(name = "fbflow", version, about)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Fixed boundary flow between the configured endpoints.
    Flow(Experiment),
    /// Principal flow from the Fréchet mean (or `principal.start`).
    Principal(Experiment),
    /// Scale measure rho against the bandwidth at one point.
    SweepH(Experiment),
    /// Fixed boundary flows for every delta of the config, in parallel.
    SweepDelta(Experiment),
    /// Leading eigenvalue of the local covariance over a grid.
    LambdaMap(Experiment),
    /// The infinite-bandwidth Euclidean analysis: assumption clauses,
    /// gamma_s and the lattice optimum.
    AnalyzeEuclid(Experiment),
    /// Write a synthetic point cloud.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct Experiment {
    /// JSON experiment configuration.
    config: PathBuf,
    /// Generator seed (replaces the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// Bandwidth h: a number in the config's units, "inf" or "<miles> mi".
    #[arg(long)]
    h: Option<String>,
    /// Truncation radius h*.
    #[arg(long)]
    h_star: Option<String>,
    /// One or more values of delta, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Option<Vec<f64>>,
    /// Mesh intervals N.
    #[arg(long)]
    intervals: Option<usize>,
    /// Lobatto stages k.
    #[arg(long)]
    stages: Option<usize>,
    /// Relaxation factor of the outer iteration, in (0, 1].
    #[arg(long)]
    relaxation: Option<f64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Experiment {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            h: self.h.clone(),
            h_star: self.h_star.clone(),
            delta: self.delta.clone(),
            intervals: self.intervals,
            stages: self.stages,
            relaxation: self.relaxation,
            // a command-line output path is relative to the working directory
            output: self.output.as_ref().map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone())),
        });
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PointFormat {
    /// Ambient coordinates x1..xd.
    Raw,
    /// Latitude/longitude columns (sphere scenarios only).
    Geo,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Scenario name, e.g. sphere-C or plane-two-branch.
    #[arg(long)]
    scenario: Scenario,
    /// Number of points.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Ambient noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Random seed; required so every cloud can be regenerated.
    #[arg(long)]
    seed: u64,
    /// Shape parameter override, e.g. --param amplitude=0.15 (repeatable).
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long, value_enum, default_value_t = PointFormat::Raw)]
    format: PointFormat,
    /// Output directory.
    #[arg(long, default_value = "out")]
    output: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let params = ShapeParams(args.params.iter().cloned().collect());
    let g = generate_with(args.scenario, args.n, args.sigma, args.seed, &params)?;
    fs::create_dir_all(&args.output).with_context(|| format!("cannot create {}", args.output.display()))?;
    let data = args.output.join("data.csv");
    match args.format {
        PointFormat::Raw => write_points(&data, &g.points)?,
        PointFormat::Geo => {
            if g.manifold.ambient_dim() != 3 || !matches!(g.manifold, fbflow::Manifold::Sphere { .. }) {
                return Err(anyhow!("geo output needs a sphere scenario"));
            }
            let file = fs::File::create(&data).with_context(|| format!("cannot create {}", data.display()))?;
            emit_geo(&g.points, file)?;
        }
    }
    let d = g.manifold.ambient_dim();
    let mut header = vec!["branch".to_string()];
    header.extend(indexed("x", d));
    let mut curves = Table::new(&header);
    for (b, curve) in g.curves.iter().enumerate() {
        for p in curve {
            let mut row = vec![b.to_string()];
            row.extend(vector_cells(p));
            curves.push(row);
        }
    }
    curves.write(&args.output.join("curve.csv"))?;
    let mut labels = Table::new(&["branch"]);
    for l in &g.labels {
        labels.push(vec![l.to_string()]);
    }
    labels.write(&args.output.join("labels.csv"))?;
    write_json(
        &args.output.join("summary.json"),
        &json!({
            "command": "generate",
            "scenario": g.scenario,
            "n": args.n,
            "sigma": args.sigma,
            "seed": args.seed,
            "params": params,
            "endpoints": [
                g.endpoints.0.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>(),
                g.endpoints.1.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>(),
            ],
        }),
    )?;
    let kind = match (args.format, d) {
        (PointFormat::Geo, _) => PlotKind::Geo,
        (_, 2) => PlotKind::Plane,
        _ => PlotKind::Surface,
    };
    write_plot_script(&args.output, kind)
}

fn dispatch(verb: &Verb) -> Result<()> {
    match verb {
        Verb::Flow(e) => run::run_flow(&e.load()?, false).map(drop),
        Verb::SweepDelta(e) => run::run_flow(&e.load()?, true).map(drop),
        Verb::Principal(e) => run::run_principal(&e.load()?).map(drop),
        Verb::SweepH(e) => run::run_sweep_h(&e.load()?).map(drop),
        Verb::LambdaMap(e) => run::run_lambda_map(&e.load()?).map(drop),
        Verb::AnalyzeEuclid(e) => run::run_analyze_euclid(&e.load()?).map(drop),
        Verb::Generate(g) => generate_cmd(g),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

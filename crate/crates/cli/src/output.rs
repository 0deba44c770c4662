//! Artifact writers: CSV tables, JSON summaries and the plot script.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DVector;
use serde::Serialize;

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A table of already formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

/// Column names `prefix1 … prefixd`.
pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

pub fn vector_cells(v: &DVector<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| fmt_f64(*x))
}

/// Writes points as `x1 … xd` rows, with extra leading columns.
pub fn write_points(path: &Path, points: &[DVector<f64>]) -> Result<()> {
    let d = points.first().map_or(0, |p| p.len());
    let mut t = Table::new(&indexed("x", d));
    for p in points {
        t.push(vector_cells(p).collect());
    }
    t.write(path)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// How the plot script draws ambient coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Plane,
    Surface,
    /// Unit-sphere data shown as an equirectangular latitude/longitude map.
    Geo,
}

/// Emits `plot.py`, which draws `data.csv` in black, every `initial*.csv` in
/// blue and every `flow*.csv` / `principal.csv` in red.
pub fn write_plot_script(dir: &Path, kind: PlotKind) -> Result<()> {
    let mode = match kind {
        PlotKind::Plane => "plane",
        PlotKind::Surface => "surface",
        PlotKind::Geo => "geo",
    };
    let script = PLOT_TEMPLATE.replace("@MODE@", mode);
    fs::write(dir.join("plot.py"), script).with_context(|| format!("cannot write plot.py in {}", dir.display()))
}

const PLOT_TEMPLATE: &str = r#"#!/usr/bin/env python3
# Renders the run in this directory: data in black, initial curves in blue,
# flows in red. Usage: python3 plot.py [output.png]
import csv
import glob
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

MODE = "@MODE@"
HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name), newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return []
    if "latitude" in rows[0]:
        out = []
        for r in rows:
            la, lo = math.radians(float(r["latitude"])), math.radians(float(r["longitude"]))
            out.append([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])
        return out
    keys = sorted((k for k in rows[0] if k.startswith("x") and k[1:].isdigit()), key=lambda k: int(k[1:]))
    return [[float(r[k]) for k in keys] for r in rows]


def geo(p):
    n = math.sqrt(sum(c * c for c in p))
    return math.degrees(math.atan2(p[1], p[0])), math.degrees(math.asin(max(-1.0, min(1.0, p[2] / n))))


def draw(ax, pts, **kw):
    if not pts:
        return
    if MODE == "geo":
        xy = [geo(p) for p in pts]
        ax.plot([q[0] for q in xy], [q[1] for q in xy], **kw)
    elif MODE == "surface":
        ax.plot([p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts], **kw)
    else:
        ax.plot([p[0] for p in pts], [p[1] for p in pts], **kw)


def main():
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(111, projection="3d") if MODE == "surface" else fig.add_subplot(111)
    if os.path.exists(os.path.join(HERE, "data.csv")):
        draw(ax, load("data.csv"), linestyle="none", marker=".", markersize=2, color="black")
    for name in sorted(glob.glob(os.path.join(HERE, "initial*.csv"))):
        draw(ax, load(os.path.basename(name)), color="blue", linewidth=1.5)
    for name in sorted(glob.glob(os.path.join(HERE, "flow*.csv"))) + sorted(glob.glob(os.path.join(HERE, "principal.csv"))):
        draw(ax, load(os.path.basename(name)), color="red", linewidth=2)
    if MODE == "geo":
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
    elif MODE == "plane":
        ax.set_aspect("equal")
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "plot.png")
    fig.savefig(out, dpi=150, bbox_inches="tight")


if __name__ == "__main__":
    main()
"#;

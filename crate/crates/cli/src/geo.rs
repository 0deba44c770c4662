//! Geospatial and raw point ingestion.
//!
//! Catalogue rows carry latitude and longitude in degrees and optionally a
//! magnitude and a date. They are mapped onto the unit sphere as
//! `(cos φ cos λ, cos φ sin λ, sin φ)`. Distances quoted in miles become
//! central angles through the mean Earth radius.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::output::fmt_f64;

/// Mean Earth radius in miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.8;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("{path}{}: {message}", line.map(|l| format!(", line {l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<u64>,
        message: String,
    },
    #[error("{path}, line {line}: latitude {lat} / longitude {lon} outside [-90, 90] x [-180, 180]")]
    Range { path: String, line: u64, lat: f64, lon: f64 },
}

impl IngestError {
    fn parse(path: &str, line: Option<u64>, message: impl Into<String>) -> Self {
        IngestError::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

/// One catalogue event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    /// Degrees in `[-90, 90]`.
    pub lat: f64,
    /// Degrees in `(-180, 180]`.
    pub lon: f64,
    pub magnitude: Option<f64>,
    pub date: Option<String>,
}

impl GeoPoint {
    /// Validates the ranges and folds a longitude of `-180` onto `180`.
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        if !(lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
            return None;
        }
        Some(GeoPoint {
            lat,
            lon: if lon == -180.0 { 180.0 } else { lon },
            magnitude: None,
            date: None,
        })
    }

    pub fn to_unit(&self) -> DVector<f64> {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        DVector::from_vec(vec![phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()])
    }

    /// Latitude and longitude of a point of `R³ \ {0}` (normalized first).
    pub fn from_unit(x: &DVector<f64>) -> Self {
        let n = x.norm();
        let lat = (x[2] / n).clamp(-1.0, 1.0).asin().to_degrees();
        let mut lon = x[1].atan2(x[0]).to_degrees();
        if lon <= -180.0 {
            lon += 360.0;
        }
        GeoPoint {
            lat,
            lon,
            magnitude: None,
            date: None,
        }
    }
}

/// Central angle (radians) of a great-circle distance in miles.
pub fn miles_to_angle(miles: f64) -> f64 {
    miles / EARTH_RADIUS_MILES
}

/// Chord length on the unit sphere subtending `angle`.
pub fn angle_to_chord(angle: f64) -> f64 {
    2.0 * (0.5 * angle.min(std::f64::consts::PI)).sin()
}

/// Row filters applied during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoFilter {
    /// Keep events with magnitude at least this (rows without a magnitude are dropped).
    #[serde(default)]
    pub min_magnitude: Option<f64>,
    /// Keep events dated in `[year_from, year_to]` (rows without a date are dropped).
    #[serde(default)]
    pub year_from: Option<i32>,
    #[serde(default)]
    pub year_to: Option<i32>,
}

impl GeoFilter {
    fn keep(&self, p: &GeoPoint) -> bool {
        if let Some(m) = self.min_magnitude {
            if !p.magnitude.is_some_and(|v| v >= m) {
                return false;
            }
        }
        if self.year_from.is_some() || self.year_to.is_some() {
            let Some(year) = p.date.as_deref().and_then(leading_year) else {
                return false;
            };
            if self.year_from.is_some_and(|y| year < y) || self.year_to.is_some_and(|y| year > y) {
                return false;
            }
        }
        true
    }
}

fn leading_year(date: &str) -> Option<i32> {
    let digits: String = date.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.len() == 4 {
        digits.parse().ok()
    } else {
        None
    }
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    let shown = path.display().to_string();
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| IngestError::parse(&shown, None, format!("cannot read file: {e}")))?;
    Ok(s)
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn find_column(header: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    header
        .iter()
        .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

/// Reads a catalogue with a header naming `latitude`/`lat` and
/// `longitude`/`lon` (and optionally `magnitude`/`mag`, `date`/`time`).
pub fn ingest_geo(path: &Path, filter: &GeoFilter) -> Result<Vec<GeoPoint>, IngestError> {
    let shown = path.display().to_string();
    parse_geo(&read_to_string(path)?, &shown, filter)
}

pub fn parse_geo(text: &str, shown: &str, filter: &GeoFilter) -> Result<Vec<GeoPoint>, IngestError> {
    let mut rows = reader(text).into_records();
    let header = match rows.next() {
        Some(r) => r.map_err(|e| IngestError::parse(shown, Some(1), e.to_string()))?,
        None => return Err(IngestError::parse(shown, None, "file is empty")),
    };
    let lat_col = find_column(&header, &["latitude", "lat"])
        .ok_or_else(|| IngestError::parse(shown, Some(1), "header has no latitude column"))?;
    let lon_col = find_column(&header, &["longitude", "lon", "lng"])
        .ok_or_else(|| IngestError::parse(shown, Some(1), "header has no longitude column"))?;
    let mag_col = find_column(&header, &["magnitude", "mag"]);
    let date_col = find_column(&header, &["date", "time", "datetime"]);

    let mut out = Vec::new();
    for rec in rows {
        let rec = rec.map_err(|e| IngestError::parse(shown, e.position().map(|p| p.line()), e.to_string()))?;
        let line = record_line(&rec);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let num = |col: usize, what: &str| -> Result<f64, IngestError> {
            let field = rec
                .get(col)
                .ok_or_else(|| IngestError::parse(shown, Some(line), format!("missing {what}")))?;
            field
                .parse::<f64>()
                .map_err(|_| IngestError::parse(shown, Some(line), format!("{what} '{field}' is not a number")))
        };
        let lat = num(lat_col, "latitude")?;
        let lon = num(lon_col, "longitude")?;
        let mut p = GeoPoint::new(lat, lon).ok_or_else(|| IngestError::Range {
            path: shown.to_string(),
            line,
            lat,
            lon,
        })?;
        if let Some(c) = mag_col {
            if rec.get(c).is_some_and(|f| !f.is_empty()) {
                p.magnitude = Some(num(c, "magnitude")?);
            }
        }
        if let Some(c) = date_col {
            p.date = rec.get(c).filter(|f| !f.is_empty()).map(str::to_string);
        }
        if filter.keep(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Reads raw coordinates `x1, …, xd`, one point per row. A first row that
/// does not parse as numbers is taken as a header.
pub fn ingest_raw(path: &Path) -> Result<Vec<DVector<f64>>, IngestError> {
    let shown = path.display().to_string();
    parse_raw(&read_to_string(path)?, &shown)
}

pub fn parse_raw(text: &str, shown: &str) -> Result<Vec<DVector<f64>>, IngestError> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for (k, rec) in reader(text).into_records().enumerate() {
        let rec = rec.map_err(|e| IngestError::parse(shown, e.position().map(|p| p.line()), e.to_string()))?;
        let line = record_line(&rec);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(IngestError::parse(shown, Some(line), "row is not numeric")),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::parse(shown, Some(line), "non-finite coordinate"));
        }
        if let Some(first) = out.first() {
            if first.len() != values.len() {
                return Err(IngestError::parse(
                    shown,
                    Some(line),
                    format!("expected {} columns, found {}", first.len(), values.len()),
                ));
            }
        }
        out.push(DVector::from_vec(values));
    }
    if out.is_empty() {
        return Err(IngestError::parse(shown, None, "no data rows"));
    }
    Ok(out)
}

/// Writes unit-sphere points as a `latitude,longitude` catalogue.
pub fn emit_geo<W: Write>(points: &[DVector<f64>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["latitude", "longitude"])?;
    for p in points {
        let g = GeoPoint::from_unit(p);
        w.write_record([fmt_f64(g.lat), fmt_f64(g.lon)])?;
    }
    w.flush()?;
    Ok(())
}

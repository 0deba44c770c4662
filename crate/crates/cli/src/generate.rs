//! Synthetic point clouds scattered around known generating curves.
//!
//! Every scenario draws uniform parameter values on its curve, adds isotropic
//! ambient Gaussian noise and projects back onto the manifold. The generating
//! curves are also returned, densely sampled, so experiments can measure how
//! far a flow strays from them.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use fbflow::geometry::ConeDevelopment;
use fbflow::Manifold;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples used for the returned generating curves.
const CURVE_SAMPLES: usize = 2001;

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("unknown scenario '{0}' (known: {known})", known = Scenario::names().join(", "))]
    UnknownScenario(String),
    #[error("noise level must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("at least two points are required, got {0}")]
    TooFewPoints(usize),
    #[error("projection failed: {0}")]
    Projection(#[from] fbflow::FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Scenario {
    SphereC,
    SphereStar6Partial,
    SphereFold2Partial,
    SphereStar6Full,
    ConeBand,
    ConeC,
    ConeS,
    PlaneLine,
    PlaneTwoBranch,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::SphereC,
        Scenario::SphereStar6Partial,
        Scenario::SphereFold2Partial,
        Scenario::SphereStar6Full,
        Scenario::ConeBand,
        Scenario::ConeC,
        Scenario::ConeS,
        Scenario::PlaneLine,
        Scenario::PlaneTwoBranch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SphereC => "sphere-C",
            Scenario::SphereStar6Partial => "sphere-star6-partial",
            Scenario::SphereFold2Partial => "sphere-fold2-partial",
            Scenario::SphereStar6Full => "sphere-star6-full",
            Scenario::ConeBand => "cone-band",
            Scenario::ConeC => "cone-C",
            Scenario::ConeS => "cone-S",
            Scenario::PlaneLine => "plane-line",
            Scenario::PlaneTwoBranch => "plane-two-branch",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|s| s.name()).collect()
    }

    pub fn manifold(self) -> Manifold<f64> {
        match self {
            Scenario::SphereC | Scenario::SphereStar6Partial | Scenario::SphereFold2Partial | Scenario::SphereStar6Full => {
                Manifold::unit_sphere()
            }
            Scenario::ConeBand | Scenario::ConeC | Scenario::ConeS => Manifold::unit_cone(),
            Scenario::PlaneLine | Scenario::PlaneTwoBranch => Manifold::euclidean(2),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.name().to_string()
    }
}

impl TryFrom<String> for Scenario {
    type Error = GenerateError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for Scenario {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GenerateError::UnknownScenario(s.to_string()))
    }
}

/// Shape parameters of the generating curves, overridable by name.
///
/// | key         | meaning                                              | default |
/// |-------------|------------------------------------------------------|---------|
/// | `polar`     | polar angle `φ₀` of sphere curves (rad)              | π/3     |
/// | `amplitude` | fold amplitude `A` in `φ = φ₀ + A cos kθ` (rad)      | 0.2     |
/// | `span`      | half-width of the sphere-C azimuth range (rad)       | 2π/3    |
/// | `height`    | height of the cone band                              | 0.6     |
/// | `center`    | distance of the developed cone curves from the apex | 0.9     |
/// | `radius`    | radius of the developed cone-C arc                   | 0.35    |
/// | `fraction`  | share of points on branch A of plane-two-branch      | 0.9     |
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeParams(pub BTreeMap<String, f64>);

impl ShapeParams {
    fn get(&self, key: &str, default: f64) -> f64 {
        self.0.get(key).copied().unwrap_or(default)
    }
}

/// A generated cloud with its ground truth.
#[derive(Debug, Clone)]
pub struct Generated {
    pub scenario: Scenario,
    pub manifold: Manifold<f64>,
    pub points: Vec<DVector<f64>>,
    /// Index into `curves` of the curve each point was drawn from.
    pub labels: Vec<usize>,
    /// Densely sampled generating curves (one per branch).
    pub curves: Vec<Vec<DVector<f64>>>,
    /// Default flow endpoints on the generating curve.
    pub endpoints: (DVector<f64>, DVector<f64>),
    /// The generating curve between the two endpoints.
    pub reference: Vec<DVector<f64>>,
}

fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

fn sphere_point(polar: f64, azimuth: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        polar.sin() * azimuth.cos(),
        polar.sin() * azimuth.sin(),
        polar.cos(),
    ])
}

/// Curve shape: parameter `u ∈ [0, 1]` on branch `b` to an ambient point.
struct Shape {
    scenario: Scenario,
    params: ShapeParams,
}

impl Shape {
    fn branches(&self) -> usize {
        if self.scenario == Scenario::PlaneTwoBranch {
            2
        } else {
            1
        }
    }

    fn at(&self, branch: usize, u: f64) -> DVector<f64> {
        let p = &self.params;
        let phi0 = p.get("polar", PI / 3.0);
        let amp = p.get("amplitude", 0.2);
        let cone = ConeDevelopment::new(1.0, 1.0);
        let c = p.get("center", 0.9);
        match self.scenario {
            Scenario::SphereC => {
                let span = p.get("span", 2.0 * PI / 3.0);
                sphere_point(phi0, span * (2.0 * u - 1.0))
            }
            Scenario::SphereStar6Partial => {
                let theta = PI / 6.0 * (2.0 * u - 1.0);
                sphere_point(phi0 + amp * (6.0 * theta).cos(), theta)
            }
            Scenario::SphereStar6Full => {
                let theta = 2.0 * PI * u - PI;
                sphere_point(phi0 + amp * (6.0 * theta).cos(), theta)
            }
            Scenario::SphereFold2Partial => {
                let theta = FRAC_PI_2 * (2.0 * u - 1.0);
                sphere_point(phi0 + amp * (2.0 * theta).cos(), theta)
            }
            Scenario::ConeBand => {
                let z = p.get("height", 0.6);
                let phi = 2.0 * PI / 3.0 * (2.0 * u - 1.0);
                DVector::from_vec(vec![z * phi.cos(), z * phi.sin(), z])
            }
            Scenario::ConeC => {
                let r = p.get("radius", 0.35);
                let a = PI / 3.0 + 4.0 * PI / 3.0 * u;
                cone.undevelop((c + r * a.cos(), r * a.sin()), 0.0)
            }
            Scenario::ConeS => {
                let y = 0.8 * u - 0.4;
                let x = c + 0.15 * (2.0 * PI * u).sin();
                cone.undevelop((x, y), 0.0)
            }
            Scenario::PlaneLine => v2(u, 0.0),
            Scenario::PlaneTwoBranch => {
                if branch == 0 {
                    v2(-1.5 + 2.5 * u, 0.0)
                } else {
                    // Quarter circle leaving branch A at x = 0.5, heading back at 120°
                    // to the direction of A and bending clockwise.
                    let a = 7.0 * PI / 6.0 - FRAC_PI_2 * u;
                    let cx = 0.5 + 0.6 * (PI / 6.0).cos();
                    v2(cx + 0.6 * a.cos(), 0.3 + 0.6 * a.sin())
                }
            }
        }
    }

    /// Parameter (and branch) of the default endpoints.
    fn endpoint_params(&self) -> [(usize, f64); 2] {
        match self.scenario {
            // ±70° of azimuth inside the ±120° arc.
            Scenario::SphereC => {
                let span = self.params.get("span", 2.0 * PI / 3.0);
                let u = 0.5 * (1.0 - (7.0 * PI / 18.0) / span);
                [(0, u), (0, 1.0 - u)]
            }
            Scenario::SphereStar6Partial | Scenario::SphereFold2Partial | Scenario::PlaneLine => [(0, 0.0), (0, 1.0)],
            Scenario::SphereStar6Full => [(0, 5.0 / 12.0), (0, 7.0 / 12.0)],
            Scenario::ConeBand => [(0, 0.125), (0, 0.875)],
            // ±70° around the middle of the 240° arc.
            Scenario::ConeC => [(0, 5.0 / 24.0), (0, 19.0 / 24.0)],
            Scenario::ConeS => [(0, 0.0), (0, 1.0)],
            // 40° and 90° along the arc of branch B.
            Scenario::PlaneTwoBranch => [(1, 4.0 / 9.0), (1, 1.0)],
        }
    }

    fn branch_of(&self, r: f64) -> usize {
        if self.scenario == Scenario::PlaneTwoBranch && r >= self.params.get("fraction", 0.9) {
            1
        } else {
            0
        }
    }
}

/// Draws `n` noisy points for `scenario`; deterministic for a given seed.
pub fn generate(scenario: Scenario, n: usize, sigma: f64, seed: u64) -> Result<Generated, GenerateError> {
    generate_with(scenario, n, sigma, seed, &ShapeParams::default())
}

pub fn generate_with(
    scenario: Scenario,
    n: usize,
    sigma: f64,
    seed: u64,
    params: &ShapeParams,
) -> Result<Generated, GenerateError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(GenerateError::BadNoise(sigma));
    }
    if n < 2 {
        return Err(GenerateError::TooFewPoints(n));
    }
    let shape = Shape {
        scenario,
        params: params.clone(),
    };
    let manifold = scenario.manifold();
    let d = manifold.ambient_dim();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let branch = shape.branch_of(rng.random::<f64>());
        let u: f64 = rng.random();
        let mut x = shape.at(branch, u);
        if sigma > 0.0 {
            for k in 0..d {
                x[k] += sigma * normal.sample(&mut rng);
            }
        }
        points.push(manifold.project(&x)?);
        labels.push(branch);
    }

    let curves = (0..shape.branches())
        .map(|b| {
            (0..CURVE_SAMPLES)
                .map(|k| shape.at(b, k as f64 / (CURVE_SAMPLES - 1) as f64))
                .collect()
        })
        .collect();
    let [(b1, u1), (b2, u2)] = shape.endpoint_params();
    let endpoints = (manifold.project(&shape.at(b1, u1))?, manifold.project(&shape.at(b2, u2))?);
    debug_assert_eq!(b1, b2);
    let reference = (0..CURVE_SAMPLES)
        .map(|k| shape.at(b1, u1 + (u2 - u1) * k as f64 / (CURVE_SAMPLES - 1) as f64))
        .collect();
    Ok(Generated {
        scenario,
        manifold,
        points,
        labels,
        curves,
        endpoints,
        reference,
    })
}

/// Largest distance from any of `points` to the polyline `curve`.
pub fn max_distance_to(points: &[DVector<f64>], curve: &[DVector<f64>]) -> f64 {
    points
        .iter()
        .map(|p| fbflow::field::distance_to_polyline(p, curve))
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two polylines (vertices of each
/// against the segments of the other).
pub fn hausdorff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    max_distance_to(a, b).max(max_distance_to(b, a))
}

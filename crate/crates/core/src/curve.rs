//! Meshes on `[0, 1]` and discrete curves living on them.

use nalgebra::DVector;

use crate::error::{FlowError, Result};
use crate::scalar::{from_usize, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T: Scalar> {
    nodes: Vec<T>,
}

impl<T: Scalar> Mesh<T> {
    /// Mesh from explicit nodes; they must increase strictly from 0 to 1.
    pub fn new(nodes: Vec<T>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(FlowError::InvalidInput("mesh needs at least two nodes".into()));
        }
        if nodes[0] != T::zero() || nodes[nodes.len() - 1] != T::one() {
            return Err(FlowError::InvalidInput("mesh must start at 0 and end at 1".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FlowError::InvalidInput("mesh nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `intervals` equal sub-intervals.
    pub fn uniform(intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(FlowError::InvalidInput("mesh needs at least one interval".into()));
        }
        let n: T = from_usize(intervals);
        let mut nodes: Vec<T> = (0..=intervals).map(|i| from_usize::<T>(i) / n).collect();
        nodes[intervals] = T::one();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn width(&self, i: usize) -> T {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_width(&self) -> T {
        (0..self.intervals()).map(|i| self.width(i)).fold(T::zero(), |a, b| a.max(b))
    }

    /// Index `i` of the interval `[t_i, t_{i+1}]` containing `t`.
    pub fn locate(&self, t: T) -> Result<usize> {
        if t < T::zero() || t > T::one() {
            return Err(FlowError::OutOfRange {
                value: t.to_f64_lossy(),
                range: "[0, 1]",
            });
        }
        let i = self.nodes.partition_point(|&s| s <= t);
        Ok(i.saturating_sub(1).min(self.intervals() - 1))
    }
}

/// Points (and optionally velocities) attached to the nodes of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve<T: Scalar> {
    pub mesh: Mesh<T>,
    pub points: Vec<DVector<T>>,
    pub velocities: Option<Vec<DVector<T>>>,
}

impl<T: Scalar> DiscreteCurve<T> {
    pub fn new(mesh: Mesh<T>, points: Vec<DVector<T>>, velocities: Option<Vec<DVector<T>>>) -> Result<Self> {
        let n = mesh.nodes().len();
        if points.len() != n {
            return Err(FlowError::DimensionMismatch {
                expected: n,
                found: points.len(),
            });
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(FlowError::InvalidInput("curve points have mixed dimensions".into()));
        }
        if let Some(v) = &velocities {
            if v.len() != n || v.iter().any(|u| u.len() != d) {
                return Err(FlowError::InvalidInput("velocities do not match the points".into()));
            }
        }
        Ok(Self {
            mesh,
            points,
            velocities,
        })
    }

    /// Polyline through `points` on a uniform mesh, without velocities.
    pub fn from_points(points: Vec<DVector<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FlowError::InvalidInput("curve needs at least two points".into()));
        }
        let mesh = Mesh::uniform(points.len() - 1)?;
        Self::new(mesh, points, None)
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

    pub fn start(&self) -> &DVector<T> {
        &self.points[0]
    }

    pub fn end(&self) -> &DVector<T> {
        &self.points[self.points.len() - 1]
    }

    /// Sum of chord lengths.
    pub fn polyline_length(&self) -> T {
        self.points
            .windows(2)
            .map(|w| (&w[1] - &w[0]).norm())
            .fold(T::zero(), |a, b| a + b)
    }

    /// Node velocities, or second-order finite differences of the nodes when
    /// none are stored.
    pub fn velocities_or_estimate(&self) -> Vec<DVector<T>> {
        if let Some(v) = &self.velocities {
            return v.clone();
        }
        let t = self.mesh.nodes();
        let n = self.points.len();
        (0..n)
            .map(|i| {
                if i == 0 {
                    (&self.points[1] - &self.points[0]) / (t[1] - t[0])
                } else if i == n - 1 {
                    (&self.points[n - 1] - &self.points[n - 2]) / (t[n - 1] - t[n - 2])
                } else {
                    let h0 = t[i] - t[i - 1];
                    let h1 = t[i + 1] - t[i];
                    let d0 = (&self.points[i] - &self.points[i - 1]) / h0;
                    let d1 = (&self.points[i + 1] - &self.points[i]) / h1;
                    (d0 * h1 + d1 * h0) / (h0 + h1)
                }
            })
            .collect()
    }

    /// Cubic Hermite interpolation of position and velocity at `t`.
    pub fn hermite_eval(&self, t: T) -> Result<(DVector<T>, DVector<T>)> {
        let vel = self
            .velocities
            .as_ref()
            .ok_or_else(|| FlowError::InvalidInput("curve has no velocities".into()))?;
        let i = self.mesh.locate(t)?;
        let t0 = self.mesh.nodes()[i];
        let h = self.mesh.width(i);
        let s = (t - t0) / h;
        let (p0, p1) = (&self.points[i], &self.points[i + 1]);
        let (m0, m1) = (&vel[i] * h, &vel[i + 1] * h);
        let two = T::one() + T::one();
        let three = two + T::one();
        let six = three * two;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        let p = p0 * h00 + &m0 * h10 + p1 * h01 + &m1 * h11;
        let d00 = six * s2 - six * s;
        let d10 = three * s2 - (two + two) * s + T::one();
        let d01 = -six * s2 + six * s;
        let d11 = three * s2 - two * s;
        let v = (p0 * d00 + &m0 * d10 + p1 * d01 + &m1 * d11) / h;
        Ok((p, v))
    }

    /// Smallest distance between non-adjacent nodes; a value near zero flags a
    /// self-intersecting curve.
    pub fn min_nonadjacent_separation(&self) -> T {
        let n = self.points.len();
        let mut best: Option<T> = None;
        for i in 0..n {
            for j in (i + 2)..n {
                let d = (&self.points[i] - &self.points[j]).norm();
                best = Some(best.map_or(d, |b: T| b.min(d)));
            }
        }
        best.unwrap_or_else(|| T::max_value().unwrap_or_else(T::one))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle_curve(n: usize) -> DiscreteCurve<f64> {
        let mesh = Mesh::uniform(n).unwrap();
        let pts = mesh.nodes().iter().map(|&t: &f64| DVector::from_vec(vec![t.cos(), t.sin(), 0.0])).collect();
        let vel = mesh.nodes().iter().map(|&t: &f64| DVector::from_vec(vec![-t.sin(), t.cos(), 0.0])).collect();
        DiscreteCurve::new(mesh, pts, Some(vel)).unwrap()
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Mesh::new(vec![0.0, 0.5]).is_err());
        let m = Mesh::<f64>::uniform(4).unwrap();
        let total: f64 = (0..4).map(|i| m.width(i)).sum();
        assert_relative_eq!(total, 1.0);
        assert_eq!(m.locate(1.0).unwrap(), 3);
        assert_eq!(m.locate(0.0).unwrap(), 0);
        assert_eq!(m.locate(0.5).unwrap(), 2);
        assert!(m.locate(1.5).is_err());
    }

    #[test]
    fn hermite_reproduces_nodes() {
        let c = circle_curve(20);
        for (i, &t) in c.mesh.nodes().iter().enumerate() {
            let (p, v) = c.hermite_eval(t).unwrap();
            assert_relative_eq!(p, c.points[i], epsilon = 1e-15);
            assert_relative_eq!(v, c.velocities.as_ref().unwrap()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn hermite_recovers_straight_line() {
        let mesh = Mesh::uniform(5).unwrap();
        let a = DVector::from_vec(vec![1.0, -1.0]);
        let b = DVector::from_vec(vec![3.0, 2.0]);
        let pts = mesh.nodes().iter().map(|&t| &a + (&b - &a) * t).collect();
        let vel = vec![&b - &a; 6];
        let c = DiscreteCurve::new(mesh, pts, Some(vel)).unwrap();
        for &t in &[0.03, 0.31, 0.77] {
            let (p, v) = c.hermite_eval(t).unwrap();
            assert_relative_eq!(p, &a + (&b - &a) * t, epsilon = 1e-14);
            assert_relative_eq!(v, &b - &a, epsilon = 1e-13);
        }
    }

    #[test]
    fn hermite_matches_great_circle() {
        let c = circle_curve(20);
        let (p, _) = c.hermite_eval(0.25).unwrap();
        assert!((p - DVector::from_vec(vec![0.25f64.cos(), 0.25f64.sin(), 0.0])).norm() <= 1e-5);
        assert!(c.hermite_eval(1.1).is_err());
    }

    #[test]
    fn hermite_is_c1_across_nodes() {
        let c = circle_curve(7);
        let t = c.mesh.nodes()[3];
        let (pl, vl) = c.hermite_eval(t - 1e-9).unwrap();
        let (pr, vr) = c.hermite_eval(t + 1e-9).unwrap();
        assert!((pl - pr).norm() < 1e-8);
        assert!((vl - vr).norm() < 1e-6);
    }
}

//! Constrained Euler–Lagrange system of the flow objective and its reduction
//! to an ordinary differential equation.
//!
//! The system reads
//!
//! ```text
//! Q γ̈ + DF(γ)ᵀ z = G(γ, γ̇),     F(γ) = 0,
//! ```
//!
//! with `Q = -2δ I` and `G = (J - Jᵀ) γ̇`, where `J` is the Jacobian of the
//! direction field. Differentiating the constraint twice gives the
//! acceleration-level condition `DF γ̈ + γ̇ᵀ F_γγ γ̇ = 0`, from which the
//! multiplier `z` is eliminated in closed form.

use nalgebra::{DMatrix, DVector};

use crate::curve::DiscreteCurve;
use crate::error::{FlowError, Result};
use crate::geometry::Manifold;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ELSystem<T: Scalar> {
    delta: T,
    baumgarte: (T, T),
}

impl<T: Scalar> ELSystem<T> {
    /// System with speed multiplier `delta` and Baumgarte coefficients (1, 2).
    pub fn new(delta: T) -> Result<Self> {
        if delta == T::zero() || !delta.is_finite() {
            return Err(FlowError::SingularMass);
        }
        Ok(Self {
            delta,
            baumgarte: (T::one(), lit(2.0)),
        })
    }

    /// Replaces the Baumgarte coefficients; both must be positive so that
    /// `a₀ + a₁ z` has a negative root.
    pub fn with_baumgarte(mut self, a0: T, a1: T) -> Result<Self> {
        if !(a0 > T::zero() && a1 > T::zero()) {
            return Err(FlowError::InvalidInput(
                "baumgarte coefficients must be positive".into(),
            ));
        }
        self.baumgarte = (a0, a1);
        Ok(self)
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn baumgarte(&self) -> (T, T) {
        self.baumgarte
    }

    /// The scalar `q` with `Q = q I`.
    pub fn mass(&self) -> T {
        -(self.delta + self.delta)
    }

    /// `z = (DF Q⁻¹ DFᵀ)⁻¹ (DF Q⁻¹ G + uᵀ F_γγ u)`.
    pub fn solve_multiplier(
        &self,
        manifold: &Manifold<T>,
        x: &DVector<T>,
        u: &DVector<T>,
        jacobian: &DMatrix<T>,
    ) -> Result<DVector<T>> {
        let g = coriolis_term(jacobian, u);
        self.multiplier_with(manifold, x, u, &g)
    }

    fn multiplier_with(
        &self,
        manifold: &Manifold<T>,
        x: &DVector<T>,
        u: &DVector<T>,
        g: &DVector<T>,
    ) -> Result<DVector<T>> {
        let df = manifold.constraint_jacobian(x);
        if df.nrows() == 0 {
            return Ok(DVector::zeros(0));
        }
        let qinv = T::one() / self.mass();
        let gram = &df * df.transpose() * qinv;
        let rhs = &df * g * qinv + manifold.constraint_hessian_quad(x, u);
        let scale = df.norm_squared();
        let chol = gram.clone().cholesky();
        let ok = scale > T::zero()
            && gram.diagonal().iter().all(|v| v.abs() > lit::<T>(1e-14) * scale * qinv.abs());
        if !ok {
            return Err(FlowError::RankDeficient);
        }
        match chol {
            Some(c) => Ok(c.solve(&rhs)),
            // Q negative definite (δ > 0): the Gram matrix is negative definite.
            None => (-gram)
                .cholesky()
                .map(|c| -c.solve(&rhs))
                .ok_or(FlowError::RankDeficient),
        }
    }

    /// Underlying ODE right-hand side `γ̈ = Q⁻¹ G̃(γ, u)`.
    pub fn acceleration(
        &self,
        manifold: &Manifold<T>,
        x: &DVector<T>,
        u: &DVector<T>,
        jacobian: &DMatrix<T>,
    ) -> Result<DVector<T>> {
        let g = coriolis_term(jacobian, u);
        let z = self.multiplier_with(manifold, x, u, &g)?;
        let df = manifold.constraint_jacobian(x);
        let gt = if z.is_empty() { g } else { g - df.tr_mul(&z) };
        Ok(gt / self.mass())
    }

    /// Solves the index-one block system
    /// `[[Q, DFᵀ], [DF, 0]] (γ̈, z) = (G, -uᵀ F_γγ u)` directly.
    pub fn solve_block(
        &self,
        manifold: &Manifold<T>,
        x: &DVector<T>,
        u: &DVector<T>,
        jacobian: &DMatrix<T>,
    ) -> Result<(DVector<T>, DVector<T>)> {
        let d = x.len();
        let df = manifold.constraint_jacobian(x);
        let c = df.nrows();
        let mut a = DMatrix::zeros(d + c, d + c);
        a.view_mut((0, 0), (d, d)).fill_diagonal(self.mass());
        a.view_mut((0, d), (d, c)).copy_from(&df.transpose());
        a.view_mut((d, 0), (c, d)).copy_from(&df);
        let mut b = DVector::zeros(d + c);
        b.rows_mut(0, d).copy_from(&coriolis_term(jacobian, u));
        b.rows_mut(d, c).copy_from(&(-manifold.constraint_hessian_quad(x, u)));
        let sol = a.lu().solve(&b).ok_or(FlowError::RankDeficient)?;
        Ok((sol.rows(0, d).into_owned(), sol.rows(d, c).into_owned()))
    }

    /// First-order form `(γ, u) ↦ (u, Q⁻¹ G̃(γ, u))` on the stacked state.
    pub fn first_order(
        &self,
        manifold: &Manifold<T>,
        state: &DVector<T>,
        jacobian: &DMatrix<T>,
    ) -> Result<DVector<T>> {
        let d = manifold.ambient_dim();
        if state.len() != 2 * d {
            return Err(FlowError::DimensionMismatch {
                expected: 2 * d,
                found: state.len(),
            });
        }
        let x = state.rows(0, d).into_owned();
        let u = state.rows(d, d).into_owned();
        let acc = self.acceleration(manifold, &x, &u, jacobian)?;
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&u);
        out.rows_mut(d, d).copy_from(&acc);
        Ok(out)
    }
}

/// `G = (J - Jᵀ) u`.
pub fn coriolis_term<T: Scalar>(jacobian: &DMatrix<T>, u: &DVector<T>) -> DVector<T> {
    jacobian * u - jacobian.tr_mul(u)
}

/// Constraint drift at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResidual<T: Scalar> {
    /// `‖F(γ)‖`
    pub position: T,
    /// `‖DF(γ) u‖`
    pub velocity: T,
    /// `‖DF(γ) γ̈ + uᵀ F_γγ u‖` with `γ̈` from the underlying ODE.
    pub acceleration: T,
    /// `‖a₀ F(γ) + a₁ DF(γ) u‖`
    pub baumgarte: T,
}

/// Per-node residuals of the position, velocity, acceleration and Baumgarte
/// constraints. `jacobians` holds the frozen field Jacobian per node; an empty
/// slice means a constant field.
pub fn constraint_residuals<T: Scalar>(
    curve: &DiscreteCurve<T>,
    manifold: &Manifold<T>,
    system: &ELSystem<T>,
    jacobians: &[DMatrix<T>],
) -> Result<Vec<ConstraintResidual<T>>> {
    let vel = curve
        .velocities
        .as_ref()
        .ok_or_else(|| FlowError::InvalidInput("curve has no velocities".into()))?;
    let d = curve.dim();
    let zero = DMatrix::zeros(d, d);
    let (a0, a1) = system.baumgarte();
    curve
        .points
        .iter()
        .zip(vel)
        .enumerate()
        .map(|(i, (x, u))| {
            let f = manifold.constraint(x);
            let df = manifold.constraint_jacobian(x);
            let dfu = &df * u;
            let jac = jacobians.get(i).unwrap_or(&zero);
            let acc = system.acceleration(manifold, x, u, jac)?;
            let acc_res = &df * acc + manifold.constraint_hessian_quad(x, u);
            Ok(ConstraintResidual {
                position: f.norm(),
                velocity: dfu.norm(),
                acceleration: acc_res.norm(),
                baumgarte: (f * a0 + dfu * a1).norm(),
            })
        })
        .collect()
}

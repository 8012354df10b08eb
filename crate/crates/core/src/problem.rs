//! Primal and dual objectives of L2-regularized ERM.
//!
//! ```text
//! P(w)     = 1/n sum_i l_i(x_i^T w) + lambda g(w)
//! D(alpha) = 1/n sum_i -l_i^*(-alpha_i) - lambda g^*(v(alpha))
//! v(alpha) = X alpha / (lambda n),   w(alpha) = grad g^*(v(alpha))
//! ```
//!
//! with `g = g^* = ||.||^2 / 2`. The duality gap `P(w(alpha)) - D(alpha)` is
//! the certificate reported by the engine.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::Loss;

/// The regularizer `g(w) = ||w||^2 / 2`, which is its own conjugate.
#[derive(Clone, Copy, Debug, Default)]
pub struct SquaredNorm;

impl SquaredNorm {
    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * linalg::norm_sq(w)
    }

    pub fn conjugate(&self, v: &[f64]) -> f64 {
        0.5 * linalg::norm_sq(v)
    }

    pub fn conjugate_grad(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// Dual iterate `alpha` together with the shared vector `v = X alpha / (lambda n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Problem {
    data: Dataset,
    loss: Loss,
    lambda: f64,
    reg: SquaredNorm,
}

impl Problem {
    pub fn new(data: Dataset, loss: Loss, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if data.n() == 0 {
            return Err(Error::InvalidArgument("dataset has no examples".into()));
        }
        loss.validate_labels(data.labels())?;
        Ok(Self {
            data,
            loss,
            lambda,
            reg: SquaredNorm,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn d(&self) -> usize {
        self.data.d()
    }

    pub fn regularizer(&self) -> SquaredNorm {
        self.reg
    }

    /// `v(alpha) = X alpha / (lambda n)`
    pub fn shared_vector(&self, alpha: &[f64]) -> Vec<f64> {
        let mut v = self.data.mul_vec(alpha);
        linalg::scale(1.0 / (self.lambda * self.n() as f64), &mut v);
        v
    }

    /// A consistent state for the given dual vector.
    pub fn state(&self, alpha: Vec<f64>) -> Result<DualState> {
        if alpha.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "alpha has length {}, expected {}",
                alpha.len(),
                self.n()
            )));
        }
        let v = self.shared_vector(&alpha);
        Ok(DualState { alpha, v })
    }

    pub fn zero_state(&self) -> DualState {
        DualState {
            alpha: vec![0.0; self.n()],
            v: vec![0.0; self.d()],
        }
    }

    /// `||v - X alpha / (lambda n)||`
    pub fn consistency_error(&self, state: &DualState) -> f64 {
        let fresh = self.shared_vector(&state.alpha);
        linalg::norm(&linalg::sub(&state.v, &fresh))
    }

    pub fn is_consistent(&self, state: &DualState) -> bool {
        self.consistency_error(state) <= 1e-8 * (1.0 + linalg::norm(&state.v))
    }

    pub fn check_feasible(&self, alpha: &[f64]) -> Result<()> {
        for (i, &a) in alpha.iter().enumerate() {
            if self.loss.dual_term(self.data.label(i), a).is_none() {
                return Err(Error::Domain {
                    loss: self.loss.name(),
                    index: Some(i),
                    value: a,
                });
            }
        }
        Ok(())
    }

    /// `P(w)`
    pub fn primal_value(&self, w: &[f64]) -> f64 {
        let n = self.n() as f64;
        let loss_sum: f64 = self
            .data
            .columns()
            .zip(self.data.labels())
            .map(|(x, &y)| self.loss.value(y, x.dot(w)))
            .sum();
        loss_sum / n + self.lambda * self.reg.value(w)
    }

    /// `R(alpha) = 1/n sum_i l_i^*(-alpha_i)`
    pub fn conjugate_sum(&self, alpha: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for (i, &a) in alpha.iter().enumerate() {
            sum += self
                .loss
                .dual_term(self.data.label(i), a)
                .ok_or(Error::Domain {
                    loss: self.loss.name(),
                    index: Some(i),
                    value: a,
                })?;
        }
        Ok(sum / self.n() as f64)
    }

    /// `f(alpha) = lambda g^*(v(alpha))`, evaluated from a given `v`.
    pub fn smooth_part(&self, v: &[f64]) -> f64 {
        self.lambda * self.reg.conjugate(v)
    }

    /// `grad f(alpha) = X^T grad g^*(v) / n`
    pub fn smooth_part_grad(&self, v: &[f64]) -> Vec<f64> {
        let mut g = self.data.tr_mul_vec(&self.reg.conjugate_grad(v));
        linalg::scale(1.0 / self.n() as f64, &mut g);
        g
    }

    /// `D(alpha)` using the stored `v`. Fails on an infeasible `alpha`.
    pub fn dual_value(&self, state: &DualState) -> Result<f64> {
        Ok(-self.smooth_part(&state.v) - self.conjugate_sum(&state.alpha)?)
    }

    /// `D(alpha)` without the domain error: infeasible iterates give `-inf`.
    pub fn dual_value_unchecked(&self, state: &DualState) -> f64 {
        self.dual_value(state).unwrap_or(f64::NEG_INFINITY)
    }

    /// `D(alpha)` with `v` recomputed from `alpha`.
    pub fn dual_value_at(&self, alpha: &[f64]) -> Result<f64> {
        let v = self.shared_vector(alpha);
        Ok(-self.smooth_part(&v) - self.conjugate_sum(alpha)?)
    }

    /// `w(alpha) = grad g^*(v)`
    pub fn primal_from_dual(&self, state: &DualState) -> Vec<f64> {
        self.reg.conjugate_grad(&state.v)
    }

    /// `P(w(alpha)) - D(alpha)`, recomputing the primal from scratch.
    pub fn duality_gap(&self, state: &DualState) -> Result<f64> {
        let dual = self.dual_value(state)?;
        Ok(self.primal_value(&self.primal_from_dual(state)) - dual)
    }

    /// Primal value, dual value and gap in one pass.
    pub fn objectives(&self, state: &DualState) -> Result<(f64, f64, f64)> {
        let dual = self.dual_value(state)?;
        let primal = self.primal_value(&self.primal_from_dual(state));
        Ok((primal, dual, primal - dual))
    }
}

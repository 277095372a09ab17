use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ControlInput, State};
use crate::error::{Error, Result};

/// Time-indexed stage cost `c_t(x, u)`.
pub trait StageCost: Send + Sync + fmt::Debug {
    fn eval(&self, t: usize, x: &State, u: &ControlInput) -> f64;

    /// `(∂c/∂x, ∂c/∂u)`; central differences unless overridden.
    fn gradient(&self, t: usize, x: &State, u: &ControlInput) -> (DVector<f64>, DVector<f64>) {
        let mut gx = DVector::zeros(x.len());
        let mut gu = DVector::zeros(u.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = self.eval(t, &xp, u);
            xp[i] = x[i] - h;
            let fm = self.eval(t, &xp, u);
            xp[i] = x[i];
            gx[i] = (fp - fm) / (2.0 * h);
        }
        let mut up = u.clone();
        for i in 0..u.len() {
            let h = 1e-6 * u[i].abs().max(1.0);
            up[i] = u[i] + h;
            let fp = self.eval(t, x, &up);
            up[i] = u[i] - h;
            let fm = self.eval(t, x, &up);
            up[i] = u[i];
            gu[i] = (fp - fm) / (2.0 * h);
        }
        (gx, gu)
    }

    /// `(Q_t, R_t)` when `c_t = x'Q_t x + u'R_t u`.
    fn quadratic_weights(&self, _t: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

/// Multiplicative time profile applied to a quadratic cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CostSchedule {
    Constant,
    /// `1 + amplitude * sin(2π t / period)`, amplitude in `[0, 1)`.
    Sinusoid { amplitude: f64, period: f64 },
}

impl CostSchedule {
    pub fn scale(&self, t: usize) -> f64 {
        match *self {
            CostSchedule::Constant => 1.0,
            CostSchedule::Sinusoid { amplitude, period } => {
                1.0 + amplitude * (2.0 * PI * t as f64 / period).sin()
            }
        }
    }

    pub fn min_scale(&self) -> f64 {
        match *self {
            CostSchedule::Constant => 1.0,
            CostSchedule::Sinusoid { amplitude, .. } => 1.0 - amplitude,
        }
    }

    pub fn max_scale(&self) -> f64 {
        match *self {
            CostSchedule::Constant => 1.0,
            CostSchedule::Sinusoid { amplitude, .. } => 1.0 + amplitude,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    schedule: CostSchedule,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() {
                return Err(Error::config(format!("{name} must be square")));
            }
            if !super::is_finite_matrix(m) {
                return Err(Error::config(format!("{name} has non-finite entries")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::config(format!("{name} must be symmetric")));
            }
            if m.nrows() > 0 && crate::linalg::min_eigenvalue(m) < -1e-12 {
                return Err(Error::config(format!("{name} must be positive semidefinite")));
            }
        }
        Ok(Self {
            q,
            r,
            schedule: CostSchedule::Constant,
        })
    }

    pub fn with_schedule(mut self, schedule: CostSchedule) -> Result<Self> {
        if let CostSchedule::Sinusoid { amplitude, period } = schedule {
            if !(0.0..1.0).contains(&amplitude) || !(period > 0.0) {
                return Err(Error::config(
                    "sinusoid cost schedule needs amplitude in [0, 1) and period > 0",
                ));
            }
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn schedule(&self) -> CostSchedule {
        self.schedule
    }

    /// Largest `α̲` with `c_t(x, u) >= α̲ ‖x‖²` for every `t`.
    pub fn lower_alpha(&self) -> f64 {
        self.schedule.min_scale() * crate::linalg::min_eigenvalue(&self.q)
    }

    /// Lipschitz constant of `c_t` on `{‖x‖ <= rx} x {u in box with ‖u‖ <= ru}`.
    pub fn lipschitz_on(&self, rx: f64, ru: f64) -> f64 {
        let s = self.schedule.max_scale();
        2.0 * s * (crate::linalg::max_eigenvalue(&self.q) * rx + crate::linalg::max_eigenvalue(&self.r) * ru)
    }
}

impl StageCost for QuadraticCost {
    fn eval(&self, t: usize, x: &State, u: &ControlInput) -> f64 {
        let s = self.schedule.scale(t);
        s * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }

    fn gradient(&self, t: usize, x: &State, u: &ControlInput) -> (DVector<f64>, DVector<f64>) {
        let s = 2.0 * self.schedule.scale(t);
        (&self.q * x * s, &self.r * u * s)
    }

    fn quadratic_weights(&self, t: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let s = self.schedule.scale(t);
        Some((&self.q * s, &self.r * s))
    }
}

type CostFn = dyn Fn(usize, &State, &ControlInput) -> f64 + Send + Sync;

/// Closure-backed stage cost.
#[derive(Clone)]
pub struct FnCost(Arc<CostFn>);

impl FnCost {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(usize, &State, &ControlInput) -> f64 + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for FnCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnCost(..)")
    }
}

impl StageCost for FnCost {
    fn eval(&self, t: usize, x: &State, u: &ControlInput) -> f64 {
        (self.0)(t, x, u)
    }
}

/// Nonnegative deviation measure `σ(x)`.
#[derive(Clone, Default)]
pub enum Sigma {
    #[default]
    SquaredNorm,
    Custom(Arc<dyn Fn(&State) -> f64 + Send + Sync>),
}

impl Sigma {
    pub fn eval(&self, x: &State) -> f64 {
        match self {
            Sigma::SquaredNorm => x.norm_squared(),
            Sigma::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::SquaredNorm => f.write_str("SquaredNorm"),
            Sigma::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Stage costs over `t = 1..=t_max` plus the constants that bound them.
#[derive(Clone, Debug)]
pub struct CostModel {
    stage: Arc<dyn StageCost>,
    sigma: Sigma,
    alpha_lo: f64,
    alpha_hi: Option<f64>,
    gamma_bar: Option<f64>,
    alpha_c: Option<f64>,
    t_max: usize,
    pad_from: Option<usize>,
}

impl CostModel {
    pub fn new(stage: Arc<dyn StageCost>, sigma: Sigma, alpha_lo: f64, t_max: usize) -> Result<Self> {
        if !(alpha_lo > 0.0 && alpha_lo.is_finite()) {
            return Err(Error::InvalidConstant(format!(
                "alpha_lo must be positive and finite, got {alpha_lo}"
            )));
        }
        if t_max == 0 {
            return Err(Error::config("cost horizon t_max must be at least 1"));
        }
        Ok(Self {
            stage,
            sigma,
            alpha_lo,
            alpha_hi: None,
            gamma_bar: None,
            alpha_c: None,
            t_max,
            pad_from: None,
        })
    }

    /// `x'Qx + u'Ru` with `σ = ‖x‖²` and `α̲ = λ_min(Q)`.
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>, t_max: usize) -> Result<Self> {
        Self::from_quadratic(QuadraticCost::new(q, r)?, t_max)
    }

    pub fn from_quadratic(cost: QuadraticCost, t_max: usize) -> Result<Self> {
        let alpha_lo = cost.lower_alpha();
        if alpha_lo <= 1e-12 {
            return Err(Error::config(
                "Q must be positive definite so that c_t >= alpha_lo * |x|^2 with alpha_lo > 0",
            ));
        }
        Self::new(Arc::new(cost), Sigma::SquaredNorm, alpha_lo, t_max)
    }

    pub fn with_value_bounds(mut self, alpha_hi: f64, gamma_bar: f64) -> Result<Self> {
        if !(alpha_hi >= self.alpha_lo && alpha_hi.is_finite()) {
            return Err(Error::InvalidConstant(format!(
                "alpha_hi = {alpha_hi} must be finite and >= alpha_lo = {}",
                self.alpha_lo
            )));
        }
        if !(gamma_bar > 0.0 && gamma_bar.is_finite()) {
            return Err(Error::InvalidConstant(format!(
                "gamma_bar must be positive and finite, got {gamma_bar}"
            )));
        }
        self.alpha_hi = Some(alpha_hi);
        self.gamma_bar = Some(gamma_bar);
        Ok(self)
    }

    pub fn with_lipschitz(mut self, alpha_c: f64) -> Result<Self> {
        if !(alpha_c >= 0.0 && alpha_c.is_finite()) {
            return Err(Error::InvalidConstant(format!("alpha_c must be >= 0, got {alpha_c}")));
        }
        self.alpha_c = Some(alpha_c);
        Ok(self)
    }

    /// For `t > last`, reuse `c_last`. Lets horizon windows run past the episode end.
    pub fn with_padding(mut self, last: usize) -> Self {
        self.pad_from = Some(last.max(1));
        self
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max.max(1);
        self
    }

    pub fn stage(&self) -> &Arc<dyn StageCost> {
        &self.stage
    }

    pub fn sigma_fn(&self) -> &Sigma {
        &self.sigma
    }

    pub fn sigma(&self, x: &State) -> f64 {
        self.sigma.eval(x)
    }

    pub fn alpha_lo(&self) -> f64 {
        self.alpha_lo
    }

    pub fn alpha_hi(&self) -> Option<f64> {
        self.alpha_hi
    }

    pub fn gamma_bar(&self) -> Option<f64> {
        self.gamma_bar
    }

    pub fn alpha_c(&self) -> Option<f64> {
        self.alpha_c
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    fn effective_t(&self, t: usize) -> usize {
        match self.pad_from {
            Some(last) => t.min(last),
            None => t,
        }
    }

    pub fn eval(&self, t: usize, x: &State, u: &ControlInput) -> Result<f64> {
        if t == 0 || t > self.t_max {
            return Err(Error::TimeOutOfRange { t, max: self.t_max });
        }
        Ok(self.eval_unchecked(t, x, u))
    }

    pub(crate) fn eval_unchecked(&self, t: usize, x: &State, u: &ControlInput) -> f64 {
        self.stage.eval(self.effective_t(t), x, u)
    }

    pub(crate) fn gradient(&self, t: usize, x: &State, u: &ControlInput) -> (DVector<f64>, DVector<f64>) {
        self.stage.gradient(self.effective_t(t), x, u)
    }

    pub(crate) fn quadratic_weights(&self, t: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.stage.quadratic_weights(self.effective_t(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn costs() -> Vec<CostModel> {
        let q2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        vec![
            CostModel::quadratic(q2.clone(), DMatrix::identity(1, 1), 100).unwrap(),
            CostModel::from_quadratic(
                QuadraticCost::new(q2, DMatrix::from_element(1, 1, 0.1))
                    .unwrap()
                    .with_schedule(CostSchedule::Sinusoid {
                        amplitude: 0.5,
                        period: 17.0,
                    })
                    .unwrap(),
                100,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn rejects_bad_weights() {
        let r = DMatrix::identity(1, 1);
        assert!(CostModel::quadratic(DMatrix::zeros(1, 1), r.clone(), 5).is_err());
        assert!(QuadraticCost::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), r.clone()).is_err());
        assert!(QuadraticCost::new(DMatrix::from_element(1, 1, -1.0), r).is_err());
    }

    #[test]
    fn padding_repeats_last_cost() {
        let c = CostModel::from_quadratic(
            QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
                .unwrap()
                .with_schedule(CostSchedule::Sinusoid {
                    amplitude: 0.5,
                    period: 8.0,
                })
                .unwrap(),
            20,
        )
        .unwrap()
        .with_padding(10);
        let x = dvector![1.0];
        let u = dvector![0.0];
        assert_eq!(c.eval(10, &x, &u).unwrap(), c.eval(15, &x, &u).unwrap());
        assert_ne!(c.eval(9, &x, &u).unwrap(), c.eval(10, &x, &u).unwrap());
    }

    #[test]
    fn quadratic_gradient_matches_fd() {
        let c = &costs()[1];
        let x = dvector![0.3, -0.8];
        let u = dvector![1.1];
        let exact = c.stage().gradient(4, &x, &u);
        let fd = FnCost::new({
            let s = c.stage().clone();
            move |t, x, u| s.eval(t, x, u)
        })
        .gradient(4, &x, &u);
        assert_relative_eq!(exact.0, fd.0, epsilon = 1e-6);
        assert_relative_eq!(exact.1, fd.1, epsilon = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn stage_cost_dominates_sigma(
            x in prop::collection::vec(-50.0..50.0f64, 2),
            u in -10.0..10.0f64,
            t in 1usize..=100,
        ) {
            let x = DVector::from_vec(x);
            let u = dvector![u];
            for c in costs() {
                let s = c.sigma(&x);
                prop_assert!(s >= 0.0);
                let v = c.eval(t, &x, &u).unwrap();
                prop_assert!(v >= c.alpha_lo() * s - 1e-9 * s.max(1.0));
            }
        }
    }
}

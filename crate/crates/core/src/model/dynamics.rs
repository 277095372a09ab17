use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{check_len, ControlBox, ControlInput, Disturbance, ParamVector, State};
use crate::error::{Error, Result};

/// Partial derivatives of the transition map at a point.
#[derive(Clone, Debug)]
pub struct Jacobians {
    /// n x n
    pub fx: DMatrix<f64>,
    /// n x m
    pub fu: DMatrix<f64>,
    /// n x n
    pub fw: DMatrix<f64>,
}

/// Transition map `x' = f(x, u, w; θ)`.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn step(&self, x: &State, u: &ControlInput, w: &Disturbance, theta: &ParamVector) -> State;

    fn jacobians(
        &self,
        x: &State,
        u: &ControlInput,
        w: &Disturbance,
        theta: &ParamVector,
    ) -> Jacobians {
        finite_difference_jacobians(self, x, u, w, theta)
    }

    /// `(A, B)` when the map is `Ax + Bu + w` for this θ.
    fn linear_parts(&self, _theta: &ParamVector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Basis for maps of the form `x + f0(x, u) + G(x, u) θ + w`.
    fn param_basis(&self) -> Option<&dyn ParamBasis> {
        None
    }
}

/// Central differences, step scaled to each coordinate.
pub fn finite_difference_jacobians<D: Dynamics + ?Sized>(
    dynamics: &D,
    x: &State,
    u: &ControlInput,
    w: &Disturbance,
    theta: &ParamVector,
) -> Jacobians {
    let n = x.len();
    let column = |which: usize, i: usize| -> DVector<f64> {
        let (mut xp, mut up, mut wp) = (x.clone(), u.clone(), w.clone());
        let (mut xm, mut um, mut wm) = (x.clone(), u.clone(), w.clone());
        let base = match which {
            0 => x[i],
            1 => u[i],
            _ => w[i],
        };
        let h = 1e-6 * base.abs().max(1.0);
        match which {
            0 => {
                xp[i] += h;
                xm[i] -= h;
            }
            1 => {
                up[i] += h;
                um[i] -= h;
            }
            _ => {
                wp[i] += h;
                wm[i] -= h;
            }
        }
        (dynamics.step(&xp, &up, &wp, theta) - dynamics.step(&xm, &um, &wm, theta)) / (2.0 * h)
    };
    let build = |which: usize, cols: usize| {
        let mut m = DMatrix::zeros(n, cols);
        for i in 0..cols {
            m.set_column(i, &column(which, i));
        }
        m
    };
    Jacobians {
        fx: build(0, n),
        fu: build(1, u.len()),
        fw: build(2, w.len()),
    }
}

/// θ for a linear system: column-major `vec(A)` followed by `vec(B)`.
pub fn pack_linear_params(a: &DMatrix<f64>, b: &DMatrix<f64>) -> ParamVector {
    DVector::from_iterator(
        a.len() + b.len(),
        a.iter().copied().chain(b.iter().copied()),
    )
}

pub fn unpack_linear_params(
    theta: &ParamVector,
    n: usize,
    m: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len(theta, n * n + n * m)?;
    let a = DMatrix::from_column_slice(n, n, &theta.as_slice()[..n * n]);
    let b = DMatrix::from_column_slice(n, m, &theta.as_slice()[n * n..]);
    Ok((a, b))
}

/// `x' = Ax + Bu + w`.
#[derive(Clone, Debug)]
pub struct LinearDynamics {
    n: usize,
    m: usize,
}

impl LinearDynamics {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    fn split<'a>(&self, theta: &'a ParamVector) -> (&'a [f64], &'a [f64]) {
        theta.as_slice().split_at(self.n * self.n)
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn param_dim(&self) -> usize {
        self.n * self.n + self.n * self.m
    }

    fn step(&self, x: &State, u: &ControlInput, w: &Disturbance, theta: &ParamVector) -> State {
        let (a, b) = self.split(theta);
        let mut out = w.clone();
        for j in 0..self.n {
            let xj = x[j];
            for i in 0..self.n {
                out[i] += a[j * self.n + i] * xj;
            }
        }
        for j in 0..self.m {
            let uj = u[j];
            for i in 0..self.n {
                out[i] += b[j * self.n + i] * uj;
            }
        }
        out
    }

    fn jacobians(&self, _x: &State, _u: &ControlInput, _w: &Disturbance, theta: &ParamVector) -> Jacobians {
        let (a, b) = self.split(theta);
        Jacobians {
            fx: DMatrix::from_column_slice(self.n, self.n, a),
            fu: DMatrix::from_column_slice(self.n, self.m, b),
            fw: DMatrix::identity(self.n, self.n),
        }
    }

    fn linear_parts(&self, theta: &ParamVector) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (a, b) = self.split(theta);
        Some((
            DMatrix::from_column_slice(self.n, self.n, a),
            DMatrix::from_column_slice(self.n, self.m, b),
        ))
    }
}

/// Known structure of a linear-in-parameters map `x + f0(x, u) + G(x, u) θ + w`.
pub trait ParamBasis: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn drift(&self, x: &State, u: &ControlInput) -> State;

    /// n x p regressor.
    fn regressor(&self, x: &State, u: &ControlInput) -> DMatrix<f64>;

    /// Derivatives of `f0 + G θ` with respect to `x` and `u`, if known analytically.
    fn drift_jacobians(
        &self,
        _x: &State,
        _u: &ControlInput,
        _theta: &ParamVector,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct LinearInParams {
    basis: Arc<dyn ParamBasis>,
}

impl LinearInParams {
    pub fn new(basis: Arc<dyn ParamBasis>) -> Self {
        Self { basis }
    }
}

impl Dynamics for LinearInParams {
    fn state_dim(&self) -> usize {
        self.basis.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.basis.control_dim()
    }

    fn param_dim(&self) -> usize {
        self.basis.param_dim()
    }

    fn step(&self, x: &State, u: &ControlInput, w: &Disturbance, theta: &ParamVector) -> State {
        x + self.basis.drift(x, u) + self.basis.regressor(x, u) * theta + w
    }

    fn jacobians(&self, x: &State, u: &ControlInput, w: &Disturbance, theta: &ParamVector) -> Jacobians {
        match self.basis.drift_jacobians(x, u, theta) {
            Some((dx, du)) => {
                let n = x.len();
                Jacobians {
                    fx: DMatrix::identity(n, n) + dx,
                    fu: du,
                    fw: DMatrix::identity(n, n),
                }
            }
            None => finite_difference_jacobians(self, x, u, w, theta),
        }
    }

    fn param_basis(&self) -> Option<&dyn ParamBasis> {
        Some(self.basis.as_ref())
    }
}

/// Scalar `x' = x + u + θ x³ + w`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CubicDrift;

impl ParamBasis for CubicDrift {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn drift(&self, _x: &State, u: &ControlInput) -> State {
        DVector::from_element(1, u[0])
    }

    fn regressor(&self, x: &State, _u: &ControlInput) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0].powi(3))
    }

    fn drift_jacobians(
        &self,
        x: &State,
        _u: &ControlInput,
        theta: &ParamVector,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((
            DMatrix::from_element(1, 1, 3.0 * theta[0] * x[0] * x[0]),
            DMatrix::from_element(1, 1, 1.0),
        ))
    }
}

/// Euler-discretized damped pendulum with state `(angle, rate)`:
/// `rate' = rate + dt (u + θ₁ sin(angle) + θ₂ rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Pendulum {
    pub dt: f64,
}

impl ParamBasis for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &State, u: &ControlInput) -> State {
        DVector::from_vec(vec![self.dt * x[1], self.dt * u[0]])
    }

    fn regressor(&self, x: &State, _u: &ControlInput) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, self.dt * x[0].sin(), self.dt * x[1]])
    }

    fn drift_jacobians(
        &self,
        x: &State,
        _u: &ControlInput,
        theta: &ParamVector,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let dt = self.dt;
        Some((
            DMatrix::from_row_slice(
                2,
                2,
                &[0.0, dt, dt * theta[0] * x[0].cos(), dt * theta[1]],
            ),
            DMatrix::from_row_slice(2, 1, &[0.0, dt]),
        ))
    }
}

type StepFn = dyn Fn(&State, &ControlInput, &Disturbance, &ParamVector) -> State + Send + Sync;

/// Arbitrary closure-backed map; jacobians by finite differences.
#[derive(Clone)]
pub struct CustomDynamics {
    n: usize,
    m: usize,
    p: usize,
    f: Arc<StepFn>,
}

impl CustomDynamics {
    pub fn new<F>(n: usize, m: usize, p: usize, f: F) -> Self
    where
        F: Fn(&State, &ControlInput, &Disturbance, &ParamVector) -> State + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            p,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for CustomDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDynamics")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl Dynamics for CustomDynamics {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn step(&self, x: &State, u: &ControlInput, w: &Disturbance, theta: &ParamVector) -> State {
        (self.f)(x, u, w, theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Linear,
    LinearInParams,
    CustomNonlinear,
}

/// A transition map together with its true parameter, control set and Lipschitz metadata.
#[derive(Clone, Debug)]
pub struct SystemModel {
    dynamics: Arc<dyn Dynamics>,
    theta: ParamVector,
    theta_bound: f64,
    alpha_f: f64,
    control_box: ControlBox,
    kind: SystemKind,
}

impl SystemModel {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        kind: SystemKind,
        theta: ParamVector,
        control_box: ControlBox,
        alpha_f: f64,
    ) -> Result<Self> {
        check_len(&theta, dynamics.param_dim())?;
        if control_box.dim() != dynamics.control_dim() {
            return Err(Error::LengthMismatch {
                expected: dynamics.control_dim(),
                got: control_box.dim(),
            });
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::config("parameter vector has non-finite entries"));
        }
        if !(alpha_f.is_finite() && alpha_f >= 0.0) {
            return Err(Error::config(format!("alpha_f must be finite and >= 0, got {alpha_f}")));
        }
        let theta_bound = theta.norm();
        Ok(Self {
            dynamics,
            theta,
            theta_bound,
            alpha_f,
            control_box,
            kind,
        })
    }

    /// `x' = Ax + Bu + w`, with `α_f = 1`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, control_box: ControlBox) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::config(format!(
                "A must be n x n and B n x m, got A {}x{}, B {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let theta = pack_linear_params(&a, &b);
        Self::new(
            Arc::new(LinearDynamics::new(n, b.ncols())),
            SystemKind::Linear,
            theta,
            control_box,
            1.0,
        )
    }

    pub fn linear_in_params(
        basis: Arc<dyn ParamBasis>,
        theta: ParamVector,
        control_box: ControlBox,
        alpha_f: f64,
    ) -> Result<Self> {
        Self::new(
            Arc::new(LinearInParams::new(basis)),
            SystemKind::LinearInParams,
            theta,
            control_box,
            alpha_f,
        )
    }

    pub fn custom(
        dynamics: Arc<dyn Dynamics>,
        theta: ParamVector,
        control_box: ControlBox,
        alpha_f: f64,
    ) -> Result<Self> {
        Self::new(dynamics, SystemKind::CustomNonlinear, theta, control_box, alpha_f)
    }

    /// Norm bound `S` on admissible parameters. Must cover the true θ.
    pub fn with_theta_bound(mut self, s: f64) -> Result<Self> {
        if !(s >= self.theta.norm()) {
            return Err(Error::config(format!(
                "theta bound {s} is below |theta| = {}",
                self.theta.norm()
            )));
        }
        self.theta_bound = s;
        Ok(self)
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn p(&self) -> usize {
        self.dynamics.param_dim()
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn theta_bound(&self) -> f64 {
        self.theta_bound
    }

    pub fn alpha_f(&self) -> f64 {
        self.alpha_f
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn step(&self, x: &State, u: &ControlInput, w: &Disturbance) -> Result<State> {
        self.step_with(x, u, w, &self.theta)
    }

    /// Evaluate under an arbitrary parameter, e.g. an estimate.
    pub fn step_with(
        &self,
        x: &State,
        u: &ControlInput,
        w: &Disturbance,
        theta: &ParamVector,
    ) -> Result<State> {
        check_len(x, self.n())?;
        check_len(u, self.m())?;
        check_len(w, self.n())?;
        check_len(theta, self.p())?;
        Ok(self.dynamics.step(x, u, w, theta))
    }

    pub(crate) fn step_unchecked(
        &self,
        x: &State,
        u: &ControlInput,
        w: &Disturbance,
        theta: &ParamVector,
    ) -> State {
        self.dynamics.step(x, u, w, theta)
    }
}

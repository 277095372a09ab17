//! System, cost and trajectory abstractions shared by every solver and controller.
//!
//! Vectors are dense `nalgebra` vectors; dimensions are fixed per scenario and
//! checked at the public boundary. Time indices are 1-based, matching `t = 1..=T`.

mod cost;
mod dynamics;
mod trajectory;

use nalgebra::{DMatrix, DVector};

pub use cost::{CostModel, CostSchedule, FnCost, QuadraticCost, Sigma, StageCost};
pub use dynamics::{
    finite_difference_jacobians, pack_linear_params, unpack_linear_params, CubicDrift,
    CustomDynamics, Dynamics, Jacobians, LinearDynamics, LinearInParams, ParamBasis, Pendulum,
    SystemKind, SystemModel,
};
pub use trajectory::{ControllerKind, Phase, StepRecord, Trajectory};

use crate::error::{Error, Result};

pub type State = DVector<f64>;
pub type ControlInput = DVector<f64>;
pub type Disturbance = DVector<f64>;
pub type ParamVector = DVector<f64>;

/// Per-coordinate box defining the compact control set `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ControlBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(format!(
                    "control box bounds must be finite with lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-bound, bound]^m`.
    pub fn symmetric(m: usize, bound: f64) -> Result<Self> {
        Self::new(DVector::from_element(m, -bound), DVector::from_element(m, bound))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn project(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            let k = i % self.lower.len();
            u[i] = u[i].clamp(self.lower[k], self.upper[k]);
        }
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Whether `u` sits on a face of the box (within `tol`).
    pub fn touches_boundary(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter()
            .enumerate()
            .any(|(i, v)| {
                let k = i % self.lower.len();
                *v <= self.lower[k] + tol || *v >= self.upper[k] - tol
            })
    }
}

/// `f(x, u, w; θ)` under the model's current parameter.
pub fn step(
    model: &SystemModel,
    x: &State,
    u: &ControlInput,
    w: &Disturbance,
) -> Result<State> {
    model.step(x, u, w)
}

/// States `x0, x1, ..., xk` produced by applying `controls` against `disturbances`.
pub fn rollout(
    model: &SystemModel,
    x0: &State,
    controls: &[ControlInput],
    disturbances: &[Disturbance],
) -> Result<Vec<State>> {
    if controls.len() != disturbances.len() {
        return Err(Error::LengthMismatch {
            expected: controls.len(),
            got: disturbances.len(),
        });
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (u, w) in controls.iter().zip(disturbances) {
        let next = model.step(states.last().unwrap(), u, w)?;
        states.push(next);
    }
    Ok(states)
}

/// `c_t(x, u)`.
pub fn evaluate_cost(costs: &CostModel, t: usize, x: &State, u: &ControlInput) -> Result<f64> {
    costs.eval(t, x, u)
}

pub(crate) fn check_len(v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalar(a: f64, b: f64) -> SystemModel {
        SystemModel::linear(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            ControlBox::symmetric(1, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn step_examples() {
        let m = scalar(0.9, 1.0);
        let x = dvector![1.0];
        let s = step(&m, &x, &dvector![0.0], &dvector![0.0]).unwrap();
        assert!((s[0] - 0.9).abs() < 1e-15);
        let s = step(&m, &x, &dvector![-0.9], &dvector![0.0]).unwrap();
        assert!(s[0].abs() < 1e-15);
        let s = step(&m, &x, &dvector![0.0], &dvector![0.5]).unwrap();
        assert!((s[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let m = scalar(0.9, 1.0);
        let err = step(&m, &dvector![1.0, 2.0], &dvector![0.0], &dvector![0.0]);
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rollout_examples() {
        let m = scalar(1.0, 1.0);
        let x0 = dvector![1.0];
        assert_eq!(rollout(&m, &x0, &[], &[]).unwrap(), vec![x0.clone()]);

        let s = rollout(
            &m,
            &x0,
            &[dvector![-1.0], dvector![0.0]],
            &[dvector![0.0], dvector![0.0]],
        )
        .unwrap();
        assert_eq!(s, vec![dvector![1.0], dvector![0.0], dvector![0.0]]);

        let s = rollout(
            &m,
            &dvector![0.0],
            &[dvector![0.0], dvector![0.0]],
            &[dvector![1.0], dvector![-1.0]],
        )
        .unwrap();
        assert_eq!(s, vec![dvector![0.0], dvector![1.0], dvector![0.0]]);
    }

    #[test]
    fn rollout_length_mismatch() {
        let m = scalar(1.0, 1.0);
        let err = rollout(&m, &dvector![0.0], &[dvector![0.0]], &[]);
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn evaluate_cost_examples() {
        let c = CostModel::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 10).unwrap();
        let v = evaluate_cost(&c, 1, &dvector![1.0], &dvector![-0.5]).unwrap();
        assert!((v - 1.25).abs() < 1e-15);
        assert_eq!(evaluate_cost(&c, 1, &dvector![0.0], &dvector![0.0]).unwrap(), 0.0);

        let c = CostModel::quadratic(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::identity(1, 1),
            10,
        )
        .unwrap();
        let v = evaluate_cost(&c, 3, &dvector![1.0], &dvector![1.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
        assert!(matches!(
            evaluate_cost(&c, 11, &dvector![1.0], &dvector![1.0]),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(evaluate_cost(&c, 0, &dvector![1.0], &dvector![1.0]).is_err());
    }

    #[test]
    fn control_box_projection() {
        let b = ControlBox::new(dvector![-1.0, 0.0], dvector![1.0, 2.0]).unwrap();
        let mut u = dvector![3.0, -1.0, 0.5, 5.0];
        b.project(&mut u);
        assert_eq!(u, dvector![1.0, 0.0, 0.5, 2.0]);
        assert!(ControlBox::new(dvector![1.0], dvector![0.0]).is_err());
        assert!(ControlBox::new(dvector![f64::NEG_INFINITY], dvector![0.0]).is_err());
    }
}

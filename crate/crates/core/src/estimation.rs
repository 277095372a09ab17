//! Estimation-phase machinery: probe inputs, datasets, and parameter estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::rank;
use crate::model::{
    pack_linear_params, ControlBox, ControlInput, CostModel, Disturbance, ParamBasis, ParamVector,
    State, SystemKind, SystemModel,
};
use crate::rhc::HorizonProblem;

const RANK_TOL: f64 = 1e-10;

/// One observed transition `x_{k+1} = f(x_k, u_k, w_k; θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x_next: State,
    pub x: State,
    pub u: ControlInput,
    pub w: Disturbance,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub tuples: Vec<Sample>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x_next: State, x: State, u: ControlInput, w: Disturbance) {
        self.tuples.push(Sample { x_next, x, u, w });
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub theta_hat: Vec<f64>,
    /// Estimation-phase length the estimate was built from.
    pub n_samples: usize,
    pub g_of_n: f64,
    /// `‖θ̂ - θ‖`, filled in by the simulator that knows θ.
    pub actual_error: Option<f64>,
}

impl EstimateReport {
    pub fn theta_hat(&self) -> ParamVector {
        DVector::from_column_slice(&self.theta_hat)
    }

    pub fn with_truth(mut self, theta: &ParamVector) -> Self {
        self.actual_error = Some((self.theta_hat() - theta).norm());
        self
    }
}

/// Black-box estimation step run at the end of the estimation phase.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// `phase_len` is the estimation-phase length `N` (the dataset holds `N - 1` tuples).
    fn estimate(&self, data: &Dataset, model: &SystemModel, phase_len: usize) -> Result<EstimateReport>;
}

/// Least squares on `[x; u] -> x' - w` for linear systems.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearLeastSquares;

/// Least squares on the residual `x' - x - f0 - w` against the stacked regressor.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearInParamsLeastSquares;

/// `θ + δ` with `‖δ‖ = c_g / √N`.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticEstimator {
    pub c_g: f64,
    pub seed: u64,
}

impl Estimator for LinearLeastSquares {
    fn name(&self) -> &'static str {
        "least_squares"
    }

    fn estimate(&self, data: &Dataset, model: &SystemModel, phase_len: usize) -> Result<EstimateReport> {
        if model.kind() != SystemKind::Linear {
            return Err(Error::config("linear least squares needs a linear system"));
        }
        let mut report = estimate_linear(data, model.n(), model.m())?;
        report.n_samples = phase_len;
        Ok(report)
    }
}

impl Estimator for LinearInParamsLeastSquares {
    fn name(&self) -> &'static str {
        "least_squares_lip"
    }

    fn estimate(&self, data: &Dataset, model: &SystemModel, phase_len: usize) -> Result<EstimateReport> {
        let basis = model
            .dynamics()
            .param_basis()
            .ok_or_else(|| Error::config("linear-in-parameters least squares needs a parameter basis"))?;
        let mut report = estimate_linear_in_params(data, basis)?;
        report.n_samples = phase_len;
        Ok(report)
    }
}

impl Estimator for SyntheticEstimator {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn estimate(&self, _data: &Dataset, model: &SystemModel, phase_len: usize) -> Result<EstimateReport> {
        synthetic_estimator(model.theta(), phase_len, self.c_g, self.seed)
    }
}

/// Uniform sample over the box, independent per coordinate and per step.
pub fn probe_input(t: usize, control_box: &ControlBox, seed: u64) -> ControlInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    DVector::from_iterator(
        control_box.dim(),
        control_box
            .lower()
            .iter()
            .zip(control_box.upper().iter())
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
    )
}

/// Solve `min ‖Z β - y‖` through the normal equations after checking the rank of `Z`.
fn least_squares(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let needed = z.ncols();
    let r = rank(z, RANK_TOL);
    if r < needed {
        return Err(Error::RankDeficient { rank: r, needed });
    }
    let gram = z.transpose() * z;
    let chol = gram.clone().cholesky().ok_or(Error::RankDeficient { rank: r, needed })?;
    let mut beta = chol.solve(&(z.transpose() * y));
    // One refinement pass recovers most of what squaring the condition number costs.
    let resid = y - z * &beta;
    beta += chol.solve(&(z.transpose() * resid));
    Ok(beta)
}

pub fn estimate_linear(data: &Dataset, n: usize, m: usize) -> Result<EstimateReport> {
    let rows = data.len();
    let mut z = DMatrix::zeros(rows, n + m);
    let mut y = DMatrix::zeros(rows, n);
    for (k, s) in data.tuples.iter().enumerate() {
        crate::model::check_len(&s.x, n)?;
        crate::model::check_len(&s.u, m)?;
        for i in 0..n {
            z[(k, i)] = s.x[i];
            y[(k, i)] = s.x_next[i] - s.w[i];
        }
        for j in 0..m {
            z[(k, n + j)] = s.u[j];
        }
    }
    // β = [A B]'
    let beta = least_squares(&z, &y)?;
    let ab = beta.transpose();
    let a = ab.columns(0, n).into_owned();
    let b = ab.columns(n, m).into_owned();
    Ok(EstimateReport {
        theta_hat: pack_linear_params(&a, &b).as_slice().to_vec(),
        n_samples: rows,
        g_of_n: 0.0,
        actual_error: None,
    })
}

pub fn estimate_linear_in_params(data: &Dataset, basis: &dyn ParamBasis) -> Result<EstimateReport> {
    let n = basis.state_dim();
    let p = basis.param_dim();
    let mut z = DMatrix::zeros(n * data.len(), p);
    let mut y = DMatrix::zeros(n * data.len(), 1);
    for (k, s) in data.tuples.iter().enumerate() {
        crate::model::check_len(&s.x, n)?;
        let g = basis.regressor(&s.x, &s.u);
        let r = &s.x_next - &s.x - basis.drift(&s.x, &s.u) - &s.w;
        z.view_mut((k * n, 0), (n, p)).copy_from(&g);
        y.view_mut((k * n, 0), (n, 1)).copy_from(&r);
    }
    let beta = least_squares(&z, &y)?;
    Ok(EstimateReport {
        theta_hat: beta.column(0).iter().copied().collect(),
        n_samples: data.len(),
        g_of_n: 0.0,
        actual_error: None,
    })
}

pub fn synthetic_estimator(theta_true: &ParamVector, n: usize, c_g: f64, seed: u64) -> Result<EstimateReport> {
    if n == 0 {
        return Err(Error::config("synthetic estimator needs N >= 1"));
    }
    if !(c_g >= 0.0 && c_g.is_finite()) {
        return Err(Error::config(format!("c_g must be finite and >= 0, got {c_g}")));
    }
    let g = c_g / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_hat = if g == 0.0 || theta_true.is_empty() {
        theta_true.clone()
    } else {
        let dir = loop {
            let d = DVector::from_fn(theta_true.len(), |_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = d.norm();
            if norm > 0.0 {
                break d / norm;
            }
        };
        theta_true + dir * g
    };
    Ok(EstimateReport {
        theta_hat: theta_hat.as_slice().to_vec(),
        n_samples: n,
        g_of_n: g,
        actual_error: None,
    }
    .with_truth(theta_true))
}

/// Empirical Lipschitz constants of the horizon value and first control in θ.
///
/// For each sampled state and preview, θ is perturbed by `radius` along random
/// directions and the worst ratio `|ΔV| / ‖Δθ‖`, `‖Δκ‖ / ‖Δθ‖` is kept.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThetaLipschitz {
    pub alpha_v: f64,
    pub alpha_kappa: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn theta_lipschitz(
    model: &SystemModel,
    costs: &CostModel,
    horizon: usize,
    state_radius: f64,
    w_c: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ThetaLipschitz> {
    let n = model.n();
    let p = model.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ThetaLipschitz {
        alpha_v: 0.0,
        alpha_kappa: 0.0,
    };
    let ball = |r: f64, rng: &mut ChaCha8Rng| {
        let g = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm: f64 = g.norm();
        if norm == 0.0 {
            g
        } else {
            g * (r * rng.random::<f64>() / norm)
        }
    };
    for _ in 0..samples {
        let x = ball(state_radius, &mut rng);
        let preview: Vec<Disturbance> = (0..horizon).map(|_| ball(w_c, &mut rng)).collect();
        let base = HorizonProblem::new(model, costs, horizon).solve(1, &x, &preview)?;
        let dir = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let norm: f64 = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let theta = model.theta() + dir * (radius / norm);
        let pert = HorizonProblem::new(model, costs, horizon)
            .with_theta(&theta)
            .solve(1, &x, &preview)?;
        out.alpha_v = out.alpha_v.max((pert.value - base.value).abs() / radius);
        out.alpha_kappa = out
            .alpha_kappa
            .max((&pert.controls[0] - &base.controls[0]).norm() / radius);
    }
    Ok(out)
}

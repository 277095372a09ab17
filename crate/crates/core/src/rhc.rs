//! Finite-horizon cost-to-go with a known disturbance preview.
//!
//! Two backends share one interface: a batched normal-equation solve for linear
//! dynamics with quadratic costs, and projected gradient descent (adjoint
//! gradients, backtracking) for everything else or when the box is active.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostModel, ControlInput, Disturbance, ParamVector, State, SystemModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Exact,
    Converged,
    MaxIterations,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Stop once the projected-gradient step `‖u - P(u - ∇J)‖` is below `tol * (1 + |J|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Skip the closed-form backend even when it applies.
    pub force_iterative: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            force_iterative: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HorizonSolution {
    pub controls: Vec<ControlInput>,
    pub value: f64,
    /// `x̃_t, ..., x̃_{t+M}`.
    pub predicted_states: Vec<State>,
    pub status: SolverStatus,
    pub iterations: usize,
}

/// One horizon-`M` planning problem: model, costs and the parameter used for planning.
#[derive(Clone, Debug)]
pub struct HorizonProblem<'a> {
    model: &'a SystemModel,
    costs: &'a CostModel,
    theta: &'a ParamVector,
    horizon: usize,
    opts: SolverOptions,
}

pub(crate) struct Evaluation {
    pub cost: f64,
    pub grad_u: Vec<DVector<f64>>,
    pub grad_w: Vec<DVector<f64>>,
}

impl<'a> HorizonProblem<'a> {
    pub fn new(model: &'a SystemModel, costs: &'a CostModel, horizon: usize) -> Self {
        Self {
            model,
            costs,
            theta: model.theta(),
            horizon,
            opts: SolverOptions::default(),
        }
    }

    /// Plan with `theta` instead of the model's true parameter.
    pub fn with_theta(mut self, theta: &'a ParamVector) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_options(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn costs(&self) -> &CostModel {
        self.costs
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    pub fn solve(&self, t: usize, x: &State, preview: &[Disturbance]) -> Result<HorizonSolution> {
        self.solve_warm(t, x, preview, None)
    }

    pub fn solve_warm(
        &self,
        t: usize,
        x: &State,
        preview: &[Disturbance],
        warm: Option<&[ControlInput]>,
    ) -> Result<HorizonSolution> {
        self.validate(t, x)?;
        if preview.len() != self.horizon {
            return Err(Error::LengthMismatch {
                expected: self.horizon,
                got: preview.len(),
            });
        }
        for w in preview {
            crate::model::check_len(w, self.model.n())?;
        }
        let (controls, status, iterations) = self.solve_scenarios(t, x, &[preview], &[1.0], warm);
        let predicted_states = self.rollout(x, &controls, preview);
        let value = self.cost(t, x, &controls, preview);
        Ok(HorizonSolution {
            controls,
            value,
            predicted_states,
            status,
            iterations,
        })
    }

    pub fn value(&self, t: usize, x: &State, preview: &[Disturbance]) -> Result<f64> {
        Ok(self.solve(t, x, preview)?.value)
    }

    pub fn kappa(&self, t: usize, x: &State, preview: &[Disturbance]) -> Result<ControlInput> {
        Ok(self.solve(t, x, preview)?.controls.swap_remove(0))
    }

    pub(crate) fn validate(&self, t: usize, x: &State) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon M must be at least 1"));
        }
        crate::model::check_len(x, self.model.n())?;
        crate::model::check_len(self.theta, self.model.p())?;
        let last = t + self.horizon - 1;
        if t == 0 || last > self.costs.t_max() {
            return Err(Error::TimeOutOfRange {
                t: if t == 0 { 0 } else { last },
                max: self.costs.t_max(),
            });
        }
        Ok(())
    }

    pub(crate) fn rollout(&self, x: &State, u: &[ControlInput], w: &[Disturbance]) -> Vec<State> {
        let mut states = Vec::with_capacity(u.len() + 1);
        states.push(x.clone());
        for (uk, wk) in u.iter().zip(w) {
            let next = self
                .model
                .step_unchecked(states.last().unwrap(), uk, wk, self.theta);
            states.push(next);
        }
        states
    }

    /// `Σ_{k<M} c_{t+k}(x̃_k, ũ_k)` along the planning model.
    pub(crate) fn cost(&self, t: usize, x: &State, u: &[ControlInput], w: &[Disturbance]) -> f64 {
        let mut xk = x.clone();
        let mut total = 0.0;
        for (k, (uk, wk)) in u.iter().zip(w).enumerate() {
            total += self.costs.eval_unchecked(t + k, &xk, uk);
            if k + 1 < u.len() {
                xk = self.model.step_unchecked(&xk, uk, wk, self.theta);
            }
        }
        total
    }

    /// Cost plus adjoint gradients with respect to controls and disturbances.
    pub(crate) fn evaluate(
        &self,
        t: usize,
        x: &State,
        u: &[ControlInput],
        w: &[Disturbance],
    ) -> Evaluation {
        let m = u.len();
        let states = self.rollout(x, &u[..m.saturating_sub(1)], &w[..m.saturating_sub(1)]);
        let n = x.len();
        let mut grad_u = vec![DVector::zeros(0); m];
        let mut grad_w = vec![DVector::zeros(n); m];
        let mut lambda = DVector::zeros(n);
        let mut cost = 0.0;
        for k in (0..m).rev() {
            let xk = &states[k];
            cost += self.costs.eval_unchecked(t + k, xk, &u[k]);
            let (cx, cu) = self.costs.gradient(t + k, xk, &u[k]);
            if k + 1 < m {
                let jac = self.model.dynamics().jacobians(xk, &u[k], &w[k], self.theta);
                grad_u[k] = cu + jac.fu.tr_mul(&lambda);
                grad_w[k] = jac.fw.tr_mul(&lambda);
                lambda = cx + jac.fx.tr_mul(&lambda);
            } else {
                grad_u[k] = cu;
                lambda = cx;
            }
        }
        Evaluation {
            cost,
            grad_u,
            grad_w,
        }
    }

    /// Minimize `Σ_i weights[i] · J(u; scenarios[i])` over the control box.
    pub(crate) fn solve_scenarios(
        &self,
        t: usize,
        x: &State,
        scenarios: &[&[Disturbance]],
        weights: &[f64],
        warm: Option<&[ControlInput]>,
    ) -> (Vec<ControlInput>, SolverStatus, usize) {
        if !self.opts.force_iterative {
            if let Some(lq) = self.lq_solver(t) {
                return self.solve_scenarios_with(&lq, t, x, scenarios, weights);
            }
        }
        let start = match warm {
            Some(w) if w.len() == self.horizon => w.to_vec(),
            _ => vec![DVector::zeros(self.model.m()); self.horizon],
        };
        self.projected_gradient(t, x, scenarios, weights, start)
    }

    pub(crate) fn solve_scenarios_with(
        &self,
        lq: &LqSolver,
        t: usize,
        x: &State,
        scenarios: &[&[Disturbance]],
        weights: &[f64],
    ) -> (Vec<ControlInput>, SolverStatus, usize) {
        let mut wbar = DVector::zeros(self.model.n() * self.horizon);
        for (s, lam) in scenarios.iter().zip(weights) {
            for (k, wk) in s.iter().enumerate() {
                let mut seg = wbar.rows_mut(k * wk.len(), wk.len());
                seg += wk * *lam;
            }
        }
        let start = match lq.controls(x, &wbar) {
            Some(u) => {
                let controls = self.split_controls(&u);
                let bx = self.model.control_box();
                if controls.iter().all(|c| bx.contains(c)) {
                    return (controls, SolverStatus::Exact, 0);
                }
                controls
            }
            None => vec![DVector::zeros(self.model.m()); self.horizon],
        };
        self.projected_gradient(t, x, scenarios, weights, start)
    }

    pub(crate) fn lq_solver(&self, t: usize) -> Option<LqSolver> {
        if self.opts.force_iterative {
            return None;
        }
        self.build_lq(t)
    }

    /// Unconstrained quadratic form of the horizon value, for linear models with quadratic costs.
    pub(crate) fn lq_value_form(&self, t: usize) -> Option<DMatrix<f64>> {
        self.build_lq(t).map(|lq| lq.value_form())
    }

    fn build_lq(&self, t: usize) -> Option<LqSolver> {
        let (a, b) = self.model.dynamics().linear_parts(self.theta)?;
        let mut weights = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            weights.push(self.costs.quadratic_weights(t + k)?);
        }
        LqSolver::build(&a, &b, &weights)
    }

    fn split_controls(&self, u: &DVector<f64>) -> Vec<ControlInput> {
        let m = self.model.m();
        (0..self.horizon)
            .map(|k| u.rows(k * m, m).into_owned())
            .collect()
    }

    fn weighted(
        &self,
        t: usize,
        x: &State,
        u: &[ControlInput],
        scenarios: &[&[Disturbance]],
        weights: &[f64],
        with_grad: bool,
    ) -> (f64, Vec<DVector<f64>>) {
        let mut total = 0.0;
        let mut grad: Vec<DVector<f64>> = Vec::new();
        for (s, lam) in scenarios.iter().zip(weights) {
            if *lam == 0.0 {
                continue;
            }
            if with_grad {
                let ev = self.evaluate(t, x, u, s);
                total += lam * ev.cost;
                if grad.is_empty() {
                    grad = ev.grad_u.into_iter().map(|g| g * *lam).collect();
                } else {
                    for (g, e) in grad.iter_mut().zip(ev.grad_u) {
                        *g += e * *lam;
                    }
                }
            } else {
                total += lam * self.cost(t, x, u, s);
            }
        }
        if with_grad && grad.is_empty() {
            grad = vec![DVector::zeros(self.model.m()); u.len()];
        }
        (total, grad)
    }

    fn projected_gradient(
        &self,
        t: usize,
        x: &State,
        scenarios: &[&[Disturbance]],
        weights: &[f64],
        mut u: Vec<ControlInput>,
    ) -> (Vec<ControlInput>, SolverStatus, usize) {
        let bx = self.model.control_box();
        for c in u.iter_mut() {
            bx.project(c);
        }
        let (mut j, mut g) = self.weighted(t, x, &u, scenarios, weights, true);
        let mut step = 1.0;
        for iter in 0..self.opts.max_iter {
            let threshold = self.opts.tol * (1.0 + j.abs());
            let stationarity = u
                .iter()
                .zip(&g)
                .map(|(uk, gk)| {
                    let mut p = uk - gk;
                    bx.project(&mut p);
                    (uk - p).norm_squared()
                })
                .sum::<f64>()
                .sqrt();
            if stationarity <= threshold {
                return (u, SolverStatus::Converged, iter);
            }
            loop {
                let cand: Vec<ControlInput> = u
                    .iter()
                    .zip(&g)
                    .map(|(uk, gk)| {
                        let mut p = uk - gk * step;
                        bx.project(&mut p);
                        p
                    })
                    .collect();
                let jc = self.weighted(t, x, &cand, scenarios, weights, false).0;
                let (mut lin, mut quad) = (0.0, 0.0);
                for ((ck, uk), gk) in cand.iter().zip(&u).zip(&g) {
                    let d = ck - uk;
                    lin += gk.dot(&d);
                    quad += d.norm_squared();
                }
                if quad == 0.0 {
                    // Step too small to move any coordinate: at the precision floor.
                    let status = if stationarity <= threshold.sqrt() {
                        SolverStatus::Converged
                    } else {
                        SolverStatus::MaxIterations
                    };
                    return (u, status, iter);
                }
                if jc.is_finite() && jc <= j + lin + quad / (2.0 * step) + 1e-14 * j.abs() {
                    u = cand;
                    break;
                }
                step *= 0.5;
            }
            let next = self.weighted(t, x, &u, scenarios, weights, true);
            j = next.0;
            g = next.1;
            step *= 1.5;
        }
        (u, SolverStatus::MaxIterations, self.opts.max_iter)
    }
}

/// Stacked affine map `X = Φ x + Γ U + Ψ W` over states `x̃_0..x̃_{M-1}`, with the
/// factored normal equations of the quadratic cost.
pub(crate) struct LqSolver {
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
    /// `Γ' Q̄`
    gq: DMatrix<f64>,
    qbar: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl LqSolver {
    fn build(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &[(DMatrix<f64>, DMatrix<f64>)]) -> Option<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let h = weights.len();
        let mut powers = vec![DMatrix::identity(n, n)];
        for k in 1..h {
            powers.push(a * &powers[k - 1]);
        }
        let mut phi = DMatrix::zeros(n * h, n);
        let mut gamma = DMatrix::zeros(n * h, m * h);
        let mut psi = DMatrix::zeros(n * h, n * h);
        for j in 0..h {
            phi.view_mut((j * n, 0), (n, n)).copy_from(&powers[j]);
            for i in 0..j {
                let p = &powers[j - 1 - i];
                gamma.view_mut((j * n, i * m), (n, m)).copy_from(&(p * b));
                psi.view_mut((j * n, i * n), (n, n)).copy_from(p);
            }
        }
        let mut qbar = DMatrix::zeros(n * h, n * h);
        for (k, (q, _)) in weights.iter().enumerate() {
            qbar.view_mut((k * n, k * n), (n, n)).copy_from(q);
        }
        let mut gq = gamma.transpose();
        for (k, (q, _)) in weights.iter().enumerate() {
            let blk = gq.view((0, k * n), (m * h, n)) * q;
            gq.view_mut((0, k * n), (m * h, n)).copy_from(&blk);
        }
        let mut hess = &gq * &gamma;
        for (k, (_, r)) in weights.iter().enumerate() {
            let mut blk = hess.view_mut((k * m, k * m), (m, m));
            blk += r;
        }
        let chol = hess.cholesky()?;
        Some(Self { phi, psi, gq, qbar, chol })
    }

    /// `P` with unconstrained `V = z' P z` for `z = (x, w_0, ..., w_{M-1})`.
    pub(crate) fn value_form(&self) -> DMatrix<f64> {
        let n = self.phi.ncols();
        let nw = self.psi.ncols();
        let mut l = DMatrix::zeros(self.phi.nrows(), n + nw);
        l.view_mut((0, 0), (self.phi.nrows(), n)).copy_from(&self.phi);
        l.view_mut((0, n), (self.psi.nrows(), nw)).copy_from(&self.psi);
        let core = &self.qbar - self.gq.transpose() * self.chol.solve(&self.gq);
        let p = l.transpose() * core * l;
        (&p + p.transpose()) * 0.5
    }

    /// Unconstrained minimizer for the stacked mean disturbance `wbar`.
    pub(crate) fn controls(&self, x: &DVector<f64>, wbar: &DVector<f64>) -> Option<DVector<f64>> {
        let offset = &self.phi * x + &self.psi * wbar;
        let rhs = -(&self.gq * offset);
        let u = self.chol.solve(&rhs);
        u.iter().all(|v| v.is_finite()).then_some(u)
    }
}

pub fn solve_horizon(
    model: &SystemModel,
    costs: &CostModel,
    t: usize,
    x_t: &State,
    w_preview: &[Disturbance],
    horizon: usize,
    theta_used: &ParamVector,
) -> Result<HorizonSolution> {
    HorizonProblem::new(model, costs, horizon)
        .with_theta(theta_used)
        .solve(t, x_t, w_preview)
}

pub fn value_function(
    model: &SystemModel,
    costs: &CostModel,
    t: usize,
    x_t: &State,
    w_preview: &[Disturbance],
    horizon: usize,
    theta_used: &ParamVector,
) -> Result<f64> {
    Ok(solve_horizon(model, costs, t, x_t, w_preview, horizon, theta_used)?.value)
}

pub fn kappa_m(
    model: &SystemModel,
    costs: &CostModel,
    t: usize,
    x_t: &State,
    w_preview: &[Disturbance],
    horizon: usize,
    theta_used: &ParamVector,
) -> Result<ControlInput> {
    Ok(solve_horizon(model, costs, t, x_t, w_preview, horizon, theta_used)?
        .controls
        .swap_remove(0))
}

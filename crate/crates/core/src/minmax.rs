//! Worst-case cost-to-go without preview: `inf_u sup_{‖w_k‖ <= w_c} J(u, w)`.
//!
//! Solved by scenario exchange. A finite set of disturbance sequences is kept;
//! the finite min-max over that set is solved through its concave dual over
//! simplex weights, and the sequence that maximizes the cost at the current
//! controls is added until the upper and lower bounds meet.
//!
//! The inner maximization is exact for scalar states (vertex enumeration, the
//! cost being convex in `w` for linear-quadratic problems, then local ascent)
//! and a multi-start local ascent otherwise, so the reported value can
//! underestimate the true supremum for `n >= 2` on nonconvex instances.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{clip_to_ball, project_simplex};
use crate::model::{ControlInput, CostModel, Disturbance, State, SystemModel};
use crate::rhc::{HorizonProblem, LqSolver, SolverOptions, SolverStatus};

#[derive(Clone, Copy, Debug)]
pub struct MinMaxOptions {
    /// Relative saddle-gap tolerance.
    pub tol: f64,
    pub max_outer: usize,
    pub max_dual_iter: usize,
    /// Random sphere starts for the inner maximization when vertices are not enumerated.
    pub inner_starts: usize,
    /// Largest vertex count enumerated for scalar states.
    pub vertex_cap: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for MinMaxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_outer: 60,
            max_dual_iter: 2_000,
            inner_starts: 8,
            vertex_cap: 1024,
            seed: 0x5eed,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinMaxSolution {
    pub controls: Vec<ControlInput>,
    pub worst_disturbances: Vec<Disturbance>,
    /// Cost of `controls` against `worst_disturbances`.
    pub value: f64,
    pub status: SolverStatus,
    /// Upper bound minus the best dual lower bound.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct MinMaxProblem<'a> {
    inner: HorizonProblem<'a>,
    w_c: f64,
    opts: MinMaxOptions,
}

impl<'a> MinMaxProblem<'a> {
    pub fn new(model: &'a SystemModel, costs: &'a CostModel, horizon: usize, w_c: f64) -> Self {
        Self {
            inner: HorizonProblem::new(model, costs, horizon),
            w_c,
            opts: MinMaxOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: MinMaxOptions) -> Self {
        self.inner = self.inner.with_options(opts.solver);
        self.opts = opts;
        self
    }

    pub fn w_c(&self) -> f64 {
        self.w_c
    }

    pub fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    pub fn solve(&self, t: usize, x: &State) -> Result<MinMaxSolution> {
        if !(self.w_c >= 0.0 && self.w_c.is_finite()) {
            return Err(Error::config(format!(
                "disturbance bound w_c must be finite and >= 0, got {}",
                self.w_c
            )));
        }
        self.inner.validate(t, x)?;
        let h = self.inner.horizon();
        let n = self.inner.model().n();
        let zeros = vec![DVector::zeros(n); h];
        let nominal = self.inner.solve(t, x, &zeros)?;
        if self.w_c == 0.0 || h == 1 {
            // Nothing the adversary does changes the horizon cost.
            return Ok(MinMaxSolution {
                controls: nominal.controls,
                worst_disturbances: zeros,
                value: nominal.value,
                status: nominal.status,
                gap: 0.0,
                iterations: 0,
            });
        }

        let lq = self.inner.lq_solver(t);
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(t as u64);

        let (w0, _) = self.worst_case(t, x, &nominal.controls, &mut rng);
        let mut scenarios: Vec<Vec<Disturbance>> = vec![w0];
        let mut lambda = vec![1.0];
        let mut best: Option<(Vec<ControlInput>, Vec<Disturbance>, f64)> = None;
        let mut best_lower = f64::NEG_INFINITY;
        let mut warm = nominal.controls;
        let mut budget = self.opts.max_dual_iter;

        for outer in 0..self.opts.max_outer {
            let (u, lower) = self.finite_minmax(t, x, lq.as_ref(), &scenarios, &mut lambda, &warm, budget);
            best_lower = best_lower.max(lower);
            let (w_new, upper) = self.worst_case(t, x, &u, &mut rng);
            if best.as_ref().is_none_or(|b| upper < b.2) {
                best = Some((u.clone(), w_new.clone(), upper));
            }
            let best_upper = best.as_ref().unwrap().2;
            let gap = (best_upper - best_lower).max(0.0);
            if gap <= self.opts.tol * (1.0 + best_upper.abs()) {
                let (controls, worst, value) = best.unwrap();
                return Ok(MinMaxSolution {
                    controls,
                    worst_disturbances: worst,
                    value,
                    status: SolverStatus::Converged,
                    gap,
                    iterations: outer + 1,
                });
            }
            let duplicate = scenarios.iter().any(|s| {
                s.iter()
                    .zip(&w_new)
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
                    <= 1e-20 * (1.0 + self.w_c * self.w_c)
            });
            if duplicate {
                budget = budget.saturating_mul(2);
            } else {
                scenarios.push(w_new);
                lambda.push(0.0);
            }
            warm = u;
        }
        let (controls, worst, value) = best.unwrap();
        Ok(MinMaxSolution {
            controls,
            worst_disturbances: worst,
            value,
            status: SolverStatus::MaxIterations,
            gap: (value - best_lower).max(0.0),
            iterations: self.opts.max_outer,
        })
    }

    fn inner_min(
        &self,
        t: usize,
        x: &State,
        lq: Option<&LqSolver>,
        refs: &[&[Disturbance]],
        lambda: &[f64],
        warm: &[ControlInput],
    ) -> (Vec<ControlInput>, Vec<f64>) {
        let (u, _, _) = match lq {
            Some(lq) => self.inner.solve_scenarios_with(lq, t, x, refs, lambda),
            None => self.inner.solve_scenarios(t, x, refs, lambda, Some(warm)),
        };
        let costs = refs.iter().map(|s| self.inner.cost(t, x, &u, s)).collect();
        (u, costs)
    }

    /// Projected gradient ascent on `g(λ) = min_u Σ λ_i J(u, w_i)` over the simplex.
    /// Returns the minimizer at the final weights and the dual value `g(λ)`.
    #[allow(clippy::too_many_arguments)]
    fn finite_minmax(
        &self,
        t: usize,
        x: &State,
        lq: Option<&LqSolver>,
        scenarios: &[Vec<Disturbance>],
        lambda: &mut Vec<f64>,
        warm: &[ControlInput],
        budget: usize,
    ) -> (Vec<ControlInput>, f64) {
        let refs: Vec<&[Disturbance]> = scenarios.iter().map(|s| s.as_slice()).collect();
        if scenarios.len() == 1 {
            lambda[0] = 1.0;
            let (u, j) = self.inner_min(t, x, lq, &refs, lambda, warm);
            return (u, j[0]);
        }
        // Give the newest scenario some weight so the ascent does not start at a kink.
        let last = lambda.len() - 1;
        if lambda[last] == 0.0 {
            lambda[last] = 0.5;
            project_simplex(lambda);
        }
        let (mut u, mut j) = self.inner_min(t, x, lq, &refs, lambda, warm);
        let dot = |l: &[f64], j: &[f64]| l.iter().zip(j).map(|(a, b)| a * b).sum::<f64>();
        let mut g = dot(lambda, &j);
        let mut step = 1.0 / (1.0 + j.iter().cloned().fold(0.0, f64::max));
        for _ in 0..budget {
            let jmax = j.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if jmax - g <= 0.1 * self.opts.tol * (1.0 + g.abs()) {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand: Vec<f64> = lambda.iter().zip(&j).map(|(l, ji)| l + step * ji).collect();
                project_simplex(&mut cand);
                let d: Vec<f64> = cand.iter().zip(lambda.iter()).map(|(a, b)| a - b).collect();
                let dd: f64 = d.iter().map(|v| v * v).sum();
                if dd == 0.0 {
                    break;
                }
                let (uc, jc) = self.inner_min(t, x, lq, &refs, &cand, &u);
                let gc = dot(&cand, &jc);
                if gc >= g + dot(&d, &j) - dd / (2.0 * step) - 1e-15 * g.abs() {
                    *lambda = cand;
                    u = uc;
                    j = jc;
                    g = gc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step *= 2.0;
        }
        (u, g)
    }

    /// Approximate `sup_w J(u, w)` over the product of balls. The last disturbance
    /// never reaches a costed state and is returned as zero.
    fn worst_case(
        &self,
        t: usize,
        x: &State,
        u: &[ControlInput],
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Disturbance>, f64) {
        let h = self.inner.horizon();
        let n = self.inner.model().n();
        let active = h - 1;
        let wc = self.w_c;
        let mut starts: Vec<Vec<Disturbance>> = Vec::new();

        if n == 1 && active < usize::BITS as usize && (1usize << active) <= self.opts.vertex_cap {
            let mut scored: Vec<(f64, Vec<Disturbance>)> = (0..1usize << active)
                .map(|mask| {
                    let w: Vec<Disturbance> = (0..h)
                        .map(|k| {
                            let v = if k == active {
                                0.0
                            } else if mask >> k & 1 == 1 {
                                wc
                            } else {
                                -wc
                            };
                            DVector::from_element(1, v)
                        })
                        .collect();
                    (self.inner.cost(t, x, u, &w), w)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            starts.extend(scored.into_iter().take(4).map(|s| s.1));
            starts.push(vec![DVector::zeros(1); h]);
        } else {
            let zero = vec![DVector::zeros(n); h];
            let ev = self.inner.evaluate(t, x, u, &zero);
            let aligned: Vec<Disturbance> = ev
                .grad_w
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    if k == active {
                        return DVector::zeros(n);
                    }
                    let norm = g.norm();
                    if norm > 0.0 {
                        g * (wc / norm)
                    } else {
                        let mut e = DVector::zeros(n);
                        e[0] = wc;
                        e
                    }
                })
                .collect();
            let opposite = aligned.iter().map(|w| -w).collect();
            starts.push(aligned);
            starts.push(opposite);
            starts.push(zero);
            for _ in 0..self.opts.inner_starts {
                starts.push(
                    (0..h)
                        .map(|k| {
                            if k == active {
                                return DVector::zeros(n);
                            }
                            let g = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                            let norm: f64 = g.norm();
                            if norm > 0.0 {
                                g * (wc / norm)
                            } else {
                                DVector::zeros(n)
                            }
                        })
                        .collect(),
                );
            }
        }

        let mut best: Option<(Vec<Disturbance>, f64)> = None;
        for s in starts {
            let (w, j) = self.ascend(t, x, u, s);
            if best.as_ref().is_none_or(|b| j > b.1) {
                best = Some((w, j));
            }
        }
        best.unwrap()
    }

    /// Projected gradient ascent in `w` from `w`.
    fn ascend(
        &self,
        t: usize,
        x: &State,
        u: &[ControlInput],
        mut w: Vec<Disturbance>,
    ) -> (Vec<Disturbance>, f64) {
        let active = w.len() - 1;
        let ev = self.inner.evaluate(t, x, u, &w);
        let mut j = ev.cost;
        let mut g = ev.grad_w;
        let mut step = 1.0;
        for _ in 0..500 {
            let mut moved = false;
            for _ in 0..60 {
                let mut cand = w.clone();
                for k in 0..active {
                    cand[k] += &g[k] * step;
                    clip_to_ball(&mut cand[k], self.w_c);
                }
                let (mut lin, mut quad) = (0.0, 0.0);
                for k in 0..active {
                    let d = &cand[k] - &w[k];
                    lin += g[k].dot(&d);
                    quad += d.norm_squared();
                }
                if quad <= 1e-30 * (1.0 + self.w_c * self.w_c) {
                    break;
                }
                let jc = self.inner.cost(t, x, u, &cand);
                if jc.is_finite() && jc >= j + lin - quad / (2.0 * step) {
                    let gain = jc - j;
                    w = cand;
                    moved = gain > 1e-15 * (1.0 + j.abs());
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
            let ev = self.inner.evaluate(t, x, u, &w);
            j = ev.cost;
            g = ev.grad_w;
            step *= 2.0;
        }
        (w, j)
    }
}

/// Worst-case horizon value and controls from `(t, x_t)` against `‖w_k‖ <= w_c`.
pub fn solve_minmax(
    model: &SystemModel,
    costs: &CostModel,
    t: usize,
    x_t: &State,
    horizon: usize,
    w_c: f64,
) -> Result<MinMaxSolution> {
    MinMaxProblem::new(model, costs, horizon, w_c).solve(t, x_t)
}

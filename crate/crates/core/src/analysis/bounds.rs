use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::constants::min_horizon;
use crate::error::{Error, Result};
use crate::linalg;
use crate::minmax::MinMaxProblem;
use crate::model::{CostModel, Disturbance, Sigma, State, SystemKind, SystemModel};
use crate::rhc::HorizonProblem;

/// Sampling region and margins for the value-bound fits.
#[derive(Clone, Copy, Debug)]
pub struct BoundSampling {
    pub samples: usize,
    pub seed: u64,
    /// States are drawn with `‖x‖ <= state_radius`.
    pub state_radius: f64,
    /// Preview disturbances are drawn with `‖w‖ <= w_c`.
    pub w_c: f64,
    /// Relative slack added to `ᾱ` when disturbances are present; leaves room for state/disturbance cross terms.
    pub margin: f64,
}

impl Default for BoundSampling {
    fn default() -> Self {
        Self { samples: 200, seed: 0, state_radius: 2.0, w_c: 1.0, margin: 0.05 }
    }
}

impl BoundSampling {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, ..Self::default() }
    }

    pub fn with_region(mut self, state_radius: f64, w_c: f64) -> Self {
        self.state_radius = state_radius;
        self.w_c = w_c;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("certification needs at least one sample"));
        }
        for (name, v) in [("state_radius", self.state_radius), ("w_c", self.w_c), ("margin", self.margin)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.state_radius == 0.0 && self.w_c == 0.0 {
            return Err(Error::Certification(
                "all samples have x = 0 and w = 0; the bound is undetermined".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    /// Exact quadratic form of the unconstrained linear-quadratic value, checked on samples.
    QuadraticForm,
    Sampled,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValueBounds {
    pub alpha_hi: f64,
    pub gamma_bar: f64,
    pub method: BoundMethod,
    pub horizon: usize,
    pub samples: usize,
    /// Largest `V/σ` seen on disturbance-free samples.
    pub max_state_ratio: f64,
}

struct Sample {
    t: usize,
    x: State,
    preview: Vec<Disturbance>,
    sigma: f64,
    /// `Σ_{k<M-1} ‖w_k‖²`; the last preview entry never affects the value.
    energy: f64,
    value: f64,
}

fn ball_point(rng: &mut ChaCha8Rng, n: usize, radius: f64, uniform_radius: bool) -> DVector<f64> {
    if radius == 0.0 || n == 0 {
        return DVector::zeros(n);
    }
    loop {
        let d = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = d.norm();
        if norm > 1e-12 {
            let u: f64 = rng.random();
            let r = if uniform_radius { 0.05 + 0.95 * u } else { u.powf(1.0 / n as f64) };
            return d * (radius * r / norm);
        }
    }
}

fn latest_start(costs: &CostModel, m: usize) -> Result<usize> {
    if m == 0 || costs.t_max() < m {
        return Err(Error::config(format!(
            "cost horizon t_max = {} is shorter than M = {m}",
            costs.t_max()
        )));
    }
    Ok(costs.t_max() + 1 - m)
}

fn draw_samples(model: &SystemModel, costs: &CostModel, m: usize, opts: &BoundSampling) -> Result<Vec<Sample>> {
    let problem = HorizonProblem::new(model, costs, m);
    let t_last = latest_start(costs, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = model.n();
    let mut out = Vec::with_capacity(opts.samples);
    for i in 0..opts.samples {
        let kind = match (opts.state_radius > 0.0, opts.w_c > 0.0) {
            (true, true) => i % 3,
            (true, false) => 0,
            (false, _) => 1,
        };
        let t = rng.random_range(1..=t_last);
        let x = if kind == 1 { DVector::zeros(n) } else { ball_point(&mut rng, n, opts.state_radius, true) };
        let mut preview: Vec<Disturbance> = (0..m)
            .map(|_| if kind == 0 { DVector::zeros(n) } else { ball_point(&mut rng, n, opts.w_c, false) })
            .collect();
        if let Some(last) = preview.last_mut() {
            last.fill(0.0);
        }
        let value = problem.value(t, &x, &preview)?;
        out.push(Sample {
            t,
            sigma: costs.sigma(&x),
            energy: preview.iter().map(|w| w.norm_squared()).sum(),
            x,
            preview,
            value,
        });
    }
    Ok(out)
}

/// Rejects `V/σ` that keeps growing as the state is scaled up.
fn check_ratio_growth(problem: &HorizonProblem, costs: &CostModel, samples: &[Sample]) -> Result<()> {
    let Some(worst) = samples
        .iter()
        .filter(|s| s.energy == 0.0 && s.sigma > 0.0)
        .max_by(|a, b| (a.value / a.sigma).total_cmp(&(b.value / b.sigma)))
    else {
        return Ok(());
    };
    let mut ratios = vec![worst.value / worst.sigma];
    for scale in [2.0, 4.0] {
        let x = &worst.x * scale;
        let sigma = costs.sigma(&x);
        let v = problem.value(worst.t, &x, &worst.preview).map_err(|e| {
            Error::Certification(format!("value could not be evaluated at a scaled state: {e}"))
        })?;
        ratios.push(v / sigma);
    }
    if ratios.iter().any(|r| !r.is_finite()) || (ratios[2] > 1.25 * ratios[1] && ratios[1] > 1.25 * ratios[0]) {
        return Err(Error::Certification(format!(
            "V/sigma grows with |x| ({:.4e}, {:.4e}, {:.4e} at 1x, 2x, 4x); no finite alpha_hi",
            ratios[0], ratios[1], ratios[2]
        )));
    }
    Ok(())
}

/// Raises `(ᾱ, γ̄)` until every sample satisfies `V <= ᾱσ + γ̄ Σ‖w‖²`.
fn inflate(samples: &[Sample], mut alpha: f64, mut gamma: f64, margin: f64) -> (f64, f64) {
    let has_w = samples.iter().any(|s| s.energy > 0.0);
    let state_max = samples
        .iter()
        .filter(|s| s.energy == 0.0 && s.sigma > 0.0)
        .map(|s| s.value / s.sigma)
        .fold(0.0, f64::max);
    if state_max > alpha {
        alpha = if has_w { state_max * (1.0 + margin) } else { state_max };
    }
    for s in samples.iter().filter(|s| s.energy > 0.0) {
        let need = (s.value - alpha * s.sigma) / s.energy;
        gamma = gamma.max(need);
    }
    (alpha, gamma)
}

fn quadratic_form_bounds(
    problem: &HorizonProblem,
    model: &SystemModel,
    costs: &CostModel,
    m: usize,
    with_w: bool,
    margin: f64,
) -> Result<Option<(f64, f64)>> {
    if model.kind() != SystemKind::Linear || !matches!(costs.sigma_fn(), Sigma::SquaredNorm) {
        return Ok(None);
    }
    let n = model.n();
    let t_last = latest_start(costs, m)?;
    let mut forms = Vec::with_capacity(t_last);
    for t in 1..=t_last {
        match problem.lq_value_form(t) {
            Some(p) => forms.push(p),
            None => return Ok(None),
        }
    }
    let alpha_x = forms
        .iter()
        .map(|p| linalg::max_eigenvalue(&p.view((0, 0), (n, n)).into_owned()))
        .fold(0.0, f64::max);
    if !with_w {
        return Ok(Some((alpha_x, 0.0)));
    }
    let alpha = alpha_x * (1.0 + margin);
    let nw = n * (m - 1);
    let mut gamma: f64 = 0.0;
    for p in &forms {
        let pxx = p.view((0, 0), (n, n)).into_owned();
        let pxw = p.view((0, n), (n, nw)).into_owned();
        let pww = p.view((n, n), (nw, nw)).into_owned();
        let gap = DMatrix::identity(n, n) * alpha - pxx;
        let Some(chol) = gap.cholesky() else {
            return Ok(None);
        };
        let schur = pww + pxw.transpose() * chol.solve(&pxw);
        gamma = gamma.max(linalg::max_eigenvalue(&((&schur + schur.transpose()) * 0.5)));
    }
    Ok(Some((alpha, gamma)))
}

/// Smallest `(ᾱ, γ̄)` found with `V^t_M(x, w) <= ᾱσ(x) + γ̄ Σ_{k<M-1} ‖w_k‖²`.
pub fn certify_value_bounds(
    model: &SystemModel,
    costs: &CostModel,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let b = certify_value_bounds_with(model, costs, horizon, &BoundSampling::new(samples, seed))?;
    Ok((b.alpha_hi, b.gamma_bar))
}

/// Uses the exact quadratic form when the model is linear with quadratic costs, otherwise sampling.
/// Either way the result is checked (and inflated if needed) on the constrained samples.
///
/// `γ̄ = 0` is returned when no disturbance samples were drawn (`w_c = 0`).
pub fn certify_value_bounds_with(
    model: &SystemModel,
    costs: &CostModel,
    horizon: usize,
    opts: &BoundSampling,
) -> Result<ValueBounds> {
    opts.validate()?;
    let problem = HorizonProblem::new(model, costs, horizon);
    let samples = draw_samples(model, costs, horizon, opts)?;
    if samples.iter().all(|s| s.sigma == 0.0 && s.energy == 0.0) {
        return Err(Error::Certification("all samples are at the origin with no disturbance".into()));
    }
    check_ratio_growth(&problem, costs, &samples)?;
    let with_w = samples.iter().any(|s| s.energy > 0.0);
    let (method, a0, g0) = match quadratic_form_bounds(&problem, model, costs, horizon, with_w, opts.margin)? {
        Some((a, g)) => (BoundMethod::QuadraticForm, a, g),
        None => (BoundMethod::Sampled, 0.0, 0.0),
    };
    let (alpha, gamma) = inflate(&samples, a0, g0, opts.margin);
    let max_state_ratio = samples
        .iter()
        .filter(|s| s.energy == 0.0 && s.sigma > 0.0)
        .map(|s| s.value / s.sigma)
        .fold(0.0, f64::max);
    Ok(ValueBounds {
        alpha_hi: alpha.max(costs.alpha_lo()),
        gamma_bar: gamma,
        method,
        horizon,
        samples: samples.len(),
        max_state_ratio,
    })
}

/// `(ᾱ_W, γ̄_W)` with `V^t_{W,M}(x) <= ᾱ_W σ(x) + γ̄_W w_c²` on `‖x‖ <= state_radius`.
pub fn certify_minmax_bounds(
    model: &SystemModel,
    costs: &CostModel,
    horizon: usize,
    w_c: f64,
    opts: &BoundSampling,
) -> Result<ValueBounds> {
    opts.validate()?;
    if !(w_c > 0.0 && w_c.is_finite()) {
        return Err(Error::config(format!("min-max bounds need w_c > 0, got {w_c}")));
    }
    if opts.state_radius <= 0.0 {
        return Err(Error::config("min-max bounds need a positive state radius"));
    }
    let problem = MinMaxProblem::new(model, costs, horizon, w_c);
    let t_last = latest_start(costs, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = model.n();
    let zero = DVector::zeros(n);
    let mut pts: Vec<(usize, State)> = Vec::with_capacity(opts.samples + 1);
    // deterministic radius grid so the sup of V - ᾱσ over the region is not missed
    for i in 0..opts.samples {
        let t = rng.random_range(1..=t_last);
        let mut x = ball_point(&mut rng, n, 1.0, true);
        let norm = x.norm();
        let r = opts.state_radius * (i + 1) as f64 / opts.samples as f64;
        x *= r / norm;
        pts.push((t, x));
    }
    let mut at_zero: f64 = 0.0;
    for t in [1, t_last] {
        at_zero = at_zero.max(problem.solve(t, &zero)?.value);
    }
    let mut vals = Vec::with_capacity(pts.len());
    for (t, x) in &pts {
        vals.push((costs.sigma(x), problem.solve(*t, x)?.value));
    }
    let outer = vals
        .iter()
        .zip(&pts)
        .filter(|(_, (_, x))| x.norm() >= 0.5 * opts.state_radius)
        .filter(|((s, _), _)| *s > 0.0)
        .map(|((s, v), _)| (v - at_zero).max(0.0) / s)
        .fold(0.0, f64::max);
    let alpha = (outer * (1.0 + opts.margin)).max(costs.alpha_lo());
    let w2 = w_c * w_c;
    let gamma = vals
        .iter()
        .map(|(s, v)| (v - alpha * s) / w2)
        .fold(at_zero / w2, f64::max)
        * 1.01;
    let max_state_ratio = vals.iter().filter(|(s, _)| *s > 0.0).map(|(s, v)| v / s).fold(0.0, f64::max);
    Ok(ValueBounds {
        alpha_hi: alpha,
        gamma_bar: gamma,
        method: BoundMethod::Sampled,
        horizon,
        samples: vals.len() + 2,
        max_state_ratio,
    })
}

/// Raises `M` until it clears the threshold implied by the bounds certified at that `M`.
///
/// With `minmax_w_c` set, the min-max bound must clear the threshold too.
pub fn settle_horizon(
    model: &SystemModel,
    costs: &CostModel,
    start: usize,
    opts: &BoundSampling,
    minmax_w_c: Option<f64>,
) -> Result<(usize, ValueBounds, Option<ValueBounds>)> {
    let mut m = start.max(2);
    for _ in 0..32 {
        let preview = certify_value_bounds_with(model, costs, m, opts)?;
        let minmax = match minmax_w_c {
            Some(w) => Some(certify_minmax_bounds(model, costs, m, w, opts)?),
            None => None,
        };
        let hi = minmax.as_ref().map_or(preview.alpha_hi, |b| b.alpha_hi.max(preview.alpha_hi));
        let need = min_horizon(costs.alpha_lo(), hi)?;
        if m >= need {
            return Ok((m, preview, minmax));
        }
        m = need;
    }
    Err(Error::Certification(format!("horizon threshold did not settle (last M = {m})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlBox, CubicDrift, CustomDynamics};
    use crate::rhc::value_function;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn scalar_lq(t_max: usize) -> (SystemModel, CostModel) {
        let model = SystemModel::linear(dmatrix![1.0], dmatrix![1.0], ControlBox::symmetric(1, 1e3).unwrap()).unwrap();
        (model, CostModel::quadratic(dmatrix![1.0], dmatrix![1.0], t_max).unwrap())
    }

    #[test]
    fn scalar_ratio_is_the_riccati_value() {
        let (model, costs) = scalar_lq(50);
        let opts = BoundSampling::new(60, 3).with_region(2.0, 0.0);
        let b = certify_value_bounds_with(&model, &costs, 3, &opts).unwrap();
        // P_3 = 1 + P_2/(1+P_2), P_2 = 1.5
        assert_relative_eq!(b.alpha_hi, 1.6, epsilon = 1e-9);
        assert_relative_eq!(b.max_state_ratio, 1.6, epsilon = 1e-9);
        assert_eq!(b.gamma_bar, 0.0);
        assert_eq!(b.method, BoundMethod::QuadraticForm);
    }

    #[test]
    fn pure_disturbance_samples_give_finite_gamma() {
        let (model, costs) = scalar_lq(50);
        let opts = BoundSampling::new(30, 1).with_region(0.0, 1.0);
        let b = certify_value_bounds_with(&model, &costs, 3, &opts).unwrap();
        assert!(b.gamma_bar.is_finite() && b.gamma_bar > 0.0);
    }

    #[test]
    fn degenerate_sample_set_is_rejected() {
        let (model, costs) = scalar_lq(50);
        let opts = BoundSampling::new(30, 1).with_region(0.0, 0.0);
        assert!(matches!(
            certify_value_bounds_with(&model, &costs, 3, &opts),
            Err(Error::Certification(_))
        ));
    }

    #[test]
    fn bounds_hold_on_fresh_samples() {
        let model = SystemModel::linear(
            dmatrix![1.0, 0.2; 0.0, 0.9],
            dmatrix![0.0; 1.0],
            ControlBox::symmetric(1, 1e3).unwrap(),
        )
        .unwrap();
        let costs = CostModel::quadratic(DMatrix::identity(2, 2), dmatrix![0.5], 40).unwrap();
        let m = 4;
        let b = certify_value_bounds_with(&model, &costs, m, &BoundSampling::new(90, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let x = ball_point(&mut rng, 2, 3.0, false);
            let w: Vec<_> = (0..m).map(|_| ball_point(&mut rng, 2, 2.0, false)).collect();
            let v = value_function(&model, &costs, 1, &x, &w, m, model.theta()).unwrap();
            let e: f64 = w[..m - 1].iter().map(|w| w.norm_squared()).sum();
            assert!(v <= b.alpha_hi * x.norm_squared() + b.gamma_bar * e + 1e-9);
        }
    }

    #[test]
    fn sampled_route_covers_nonlinear_models() {
        // x + u + θx³ with small θ: V/σ stays bounded on the sampled region
        let model = SystemModel::linear_in_params(
            Arc::new(CubicDrift),
            dvector![0.01],
            ControlBox::symmetric(1, 1e3).unwrap(),
            1.0,
        )
        .unwrap();
        let costs = CostModel::quadratic(dmatrix![1.0], dmatrix![1.0], 30).unwrap();
        let b = certify_value_bounds_with(&model, &costs, 3, &BoundSampling::new(45, 2).with_region(1.0, 0.5)).unwrap();
        assert_eq!(b.method, BoundMethod::Sampled);
        assert!(b.alpha_hi >= 1.0 && b.gamma_bar > 0.0);
    }

    #[test]
    fn growing_ratio_is_rejected() {
        // no usable control: u has no effect, so V grows like x⁶ under the cubic drift
        let dynamics = CustomDynamics::new(1, 1, 0, |x, _u, w, _| x + x.map(|v| 0.5 * v * v * v) + w);
        let model =
            SystemModel::custom(Arc::new(dynamics), dvector![], ControlBox::symmetric(1, 1.0).unwrap(), 1.0).unwrap();
        let costs = CostModel::quadratic(dmatrix![1.0], dmatrix![1.0], 30).unwrap();
        let r = certify_value_bounds_with(&model, &costs, 3, &BoundSampling::new(20, 0).with_region(2.0, 0.0));
        assert!(matches!(r, Err(Error::Certification(_))), "{r:?}");
    }

    #[test]
    fn horizon_settles_at_threshold() {
        let (model, costs) = scalar_lq(80);
        let (m, b, _) = settle_horizon(&model, &costs, 2, &BoundSampling::new(60, 0), None).unwrap();
        assert_eq!(m, min_horizon(1.0, b.alpha_hi).unwrap());
    }

    #[test]
    fn minmax_bounds_dominate_samples() {
        let (model, costs) = scalar_lq(30);
        let opts = BoundSampling::new(24, 4).with_region(2.0, 0.5);
        let b = certify_minmax_bounds(&model, &costs, 3, 0.5, &opts).unwrap();
        let p = MinMaxProblem::new(&model, &costs, 3, 0.5);
        for x in [0.0, 0.3, -0.7, 1.1, 1.9] {
            let v = p.solve(1, &dvector![x]).unwrap().value;
            assert!(v <= b.alpha_hi * x * x + b.gamma_bar * 0.25 + 1e-9, "x={x}");
        }
    }
}

//! Bounded disturbance sources with a windowed preview interface.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlInput, CostModel, Disturbance, State, SystemModel};

const GREEDY_DIRECTIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Constant,
    /// `sin(2π t / period + phase)` along the direction.
    Sinusoid {
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Uniform in the ball, drawn independently per step.
    Uniform,
    /// Sign alternates every `interval` steps starting positive at `t = 1`.
    SignFlip { interval: usize },
    Impulse { at: usize },
    /// Picks `w_t` on the sphere maximizing the next stage cost given the current state and control.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    /// Norm bound `w_c`.
    pub w_c: f64,
    /// Emitted magnitude; defaults to `w_c`.
    #[serde(default)]
    pub amplitude: Option<f64>,
    /// Unit direction for the deterministic kinds; defaults to normalized ones.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    /// Disturbance is zero for `t > until`.
    #[serde(default)]
    pub until: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// What the greedy adversary sees before choosing `w_t`.
#[derive(Clone, Copy, Debug)]
pub struct GreedyContext<'a> {
    pub model: &'a SystemModel,
    pub costs: &'a CostModel,
    pub t: usize,
    pub x: &'a State,
    pub u: &'a ControlInput,
}

impl DisturbanceSpec {
    pub fn new(kind: DisturbanceKind, w_c: f64) -> Self {
        Self {
            kind,
            w_c,
            amplitude: None,
            direction: None,
            until: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = Some(amplitude);
        self
    }

    pub fn with_direction(mut self, direction: Vec<f64>) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn with_until(mut self, until: usize) -> Self {
        self.until = Some(until);
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.w_c >= 0.0 && self.w_c.is_finite()) {
            return Err(Error::config(format!("w_c must be finite and >= 0, got {}", self.w_c)));
        }
        if let Some(a) = self.amplitude {
            if !(a >= 0.0 && a <= self.w_c) {
                return Err(Error::config(format!(
                    "disturbance amplitude {a} must lie in [0, w_c = {}]",
                    self.w_c
                )));
            }
        }
        if let Some(d) = &self.direction {
            if d.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: d.len(),
                });
            }
            if !(DVector::from_column_slice(d).norm() > 0.0) {
                return Err(Error::config("disturbance direction must be nonzero"));
            }
        }
        match self.kind {
            DisturbanceKind::Sinusoid { period, .. } if !(period > 0.0) => {
                Err(Error::config("sinusoid period must be positive"))
            }
            DisturbanceKind::SignFlip { interval: 0 } => {
                Err(Error::config("sign-flip interval must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.kind, DisturbanceKind::Greedy)
    }

    fn amplitude(&self) -> f64 {
        self.amplitude.unwrap_or(self.w_c)
    }

    fn direction(&self, n: usize) -> DVector<f64> {
        match &self.direction {
            Some(d) => {
                let v = DVector::from_column_slice(d);
                let norm = v.norm();
                v / norm
            }
            None => DVector::from_element(n, 1.0 / (n as f64).sqrt()),
        }
    }

    fn active(&self, t: usize) -> bool {
        self.until.is_none_or(|u| t <= u)
    }

    /// `w_t` for the non-adaptive kinds.
    pub fn at(&self, t: usize, n: usize) -> Result<Disturbance> {
        if t == 0 {
            return Err(Error::TimeOutOfRange { t, max: usize::MAX });
        }
        if self.is_adaptive() {
            return Err(Error::MissingContext);
        }
        if !self.active(t) {
            return Ok(DVector::zeros(n));
        }
        let amp = self.amplitude();
        let w = match self.kind {
            DisturbanceKind::Zero => DVector::zeros(n),
            DisturbanceKind::Constant => self.direction(n) * amp,
            DisturbanceKind::Sinusoid { period, phase } => {
                self.direction(n) * (amp * (2.0 * PI * t as f64 / period + phase).sin())
            }
            DisturbanceKind::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(t as u64);
                let g = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let norm: f64 = g.norm();
                let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
                if norm > 0.0 {
                    g * (amp * r / norm)
                } else {
                    DVector::zeros(n)
                }
            }
            DisturbanceKind::SignFlip { interval } => {
                let sign = if ((t - 1) / interval).is_multiple_of(2) { 1.0 } else { -1.0 };
                self.direction(n) * (sign * amp)
            }
            DisturbanceKind::Impulse { at } => {
                if t == at {
                    self.direction(n) * amp
                } else {
                    DVector::zeros(n)
                }
            }
            DisturbanceKind::Greedy => unreachable!(),
        };
        Ok(w)
    }

    /// Adaptive choice: the point on the sphere of radius `amplitude` that maximizes
    /// `c_{t+1}(f(x, u, w), 0)`, searched over a fixed set of directions.
    pub fn greedy(&self, ctx: &GreedyContext<'_>) -> Disturbance {
        let n = ctx.model.n();
        if !self.active(ctx.t) {
            return DVector::zeros(n);
        }
        let amp = self.amplitude();
        let zero_u = DVector::zeros(ctx.model.m());
        let t_next = (ctx.t + 1).min(ctx.costs.t_max());
        let score = |w: &DVector<f64>| {
            let next = ctx.model.step_unchecked(ctx.x, ctx.u, w, ctx.model.theta());
            ctx.costs.eval_unchecked(t_next, &next, &zero_u)
        };
        let mut best = DVector::zeros(n);
        let mut best_score = f64::NEG_INFINITY;
        for d in greedy_directions(n, self.seed) {
            let w = d * amp;
            let s = score(&w);
            if s > best_score {
                best_score = s;
                best = w;
            }
        }
        best
    }
}

fn greedy_directions(n: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..GREEDY_DIRECTIONS)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / GREEDY_DIRECTIONS as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut dirs = Vec::with_capacity(GREEDY_DIRECTIONS);
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut e = DVector::zeros(n);
                    e[i] = s;
                    dirs.push(e);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while dirs.len() < GREEDY_DIRECTIONS.max(2 * n) {
                let g = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let norm: f64 = g.norm();
                if norm > 0.0 {
                    dirs.push(g / norm);
                }
            }
            dirs
        }
    }
}

/// `w_t, ..., w_{t+M-1}`. The greedy kind only knows the current step: its window is
/// the greedy `w_t` followed by zeros, and it needs `context`.
pub fn generate_window(
    spec: &DisturbanceSpec,
    t: usize,
    horizon: usize,
    n: usize,
    context: Option<&GreedyContext<'_>>,
) -> Result<Vec<Disturbance>> {
    if spec.is_adaptive() {
        let ctx = context.ok_or(Error::MissingContext)?;
        let mut out = vec![DVector::zeros(n); horizon];
        if let Some(first) = out.first_mut() {
            *first = spec.greedy(ctx);
        }
        return Ok(out);
    }
    (t..t + horizon).map(|k| spec.at(k, n)).collect()
}

/// `Σ ‖w_t‖²`.
pub fn energy(disturbances: &[Disturbance]) -> f64 {
    disturbances.iter().map(|w| w.norm_squared()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlBox;
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;

    fn scalars(w: &[Disturbance]) -> Vec<f64> {
        w.iter().map(|v| v[0]).collect()
    }

    #[test]
    fn window_examples() {
        let z = generate_window(&DisturbanceSpec::new(DisturbanceKind::Zero, 1.0), 1, 3, 1, None).unwrap();
        assert_eq!(scalars(&z), vec![0.0; 3]);
        let c = generate_window(&DisturbanceSpec::new(DisturbanceKind::Constant, 0.5), 7, 3, 1, None).unwrap();
        assert_eq!(scalars(&c), vec![0.5; 3]);
        let s = DisturbanceSpec::new(DisturbanceKind::SignFlip { interval: 2 }, 1.0);
        assert_eq!(scalars(&generate_window(&s, 1, 4, 1, None).unwrap()), vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[dvector![0.0], dvector![0.0], dvector![0.0]]), 0.0);
        assert_eq!(energy(&[dvector![1.0], dvector![-1.0]]), 2.0);
        assert_eq!(energy(&[dvector![1.0, 0.0], dvector![0.0, 2.0]]), 5.0);
    }

    #[test]
    fn impulse_and_until() {
        let s = DisturbanceSpec::new(DisturbanceKind::Impulse { at: 5 }, 2.0).with_amplitude(1.5);
        let w = generate_window(&s, 3, 4, 1, None).unwrap();
        assert_eq!(scalars(&w), vec![0.0, 0.0, 1.5, 0.0]);
        let s = DisturbanceSpec::new(DisturbanceKind::Constant, 1.0).with_until(4);
        assert_eq!(scalars(&generate_window(&s, 3, 4, 1, None).unwrap()), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn greedy_requires_context_and_pushes_state_outward() {
        let s = DisturbanceSpec::new(DisturbanceKind::Greedy, 1.0);
        assert!(matches!(generate_window(&s, 1, 3, 1, None), Err(Error::MissingContext)));
        let model = SystemModel::linear(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            ControlBox::symmetric(1, 1.0).unwrap(),
        )
        .unwrap();
        let costs = CostModel::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 10).unwrap();
        let x = dvector![-0.3];
        let u = dvector![0.0];
        let ctx = GreedyContext {
            model: &model,
            costs: &costs,
            t: 1,
            x: &x,
            u: &u,
        };
        let w = generate_window(&s, 1, 3, 1, Some(&ctx)).unwrap();
        assert_eq!(scalars(&w), vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(DisturbanceSpec::new(DisturbanceKind::Zero, -1.0).validate(1).is_err());
        assert!(DisturbanceSpec::new(DisturbanceKind::Constant, 1.0).with_amplitude(2.0).validate(1).is_err());
        assert!(DisturbanceSpec::new(DisturbanceKind::SignFlip { interval: 0 }, 1.0).validate(1).is_err());
        assert!(DisturbanceSpec::new(DisturbanceKind::Constant, 1.0)
            .with_direction(vec![1.0])
            .validate(2)
            .is_err());
    }

    fn kinds() -> Vec<DisturbanceKind> {
        vec![
            DisturbanceKind::Zero,
            DisturbanceKind::Constant,
            DisturbanceKind::Sinusoid { period: 13.0, phase: 0.3 },
            DisturbanceKind::Uniform,
            DisturbanceKind::SignFlip { interval: 3 },
            DisturbanceKind::Impulse { at: 4 },
        ]
    }

    #[test]
    fn norm_bound_fuzz() {
        for n in [1usize, 2, 3] {
            for kind in kinds() {
                let spec = DisturbanceSpec::new(kind, 0.7).with_seed(11);
                for t in 1..=10_000 {
                    assert!(spec.at(t, n).unwrap().norm() <= 0.7 * (1.0 + 1e-12));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn overlapping_windows_agree(t in 1usize..500, m in 2usize..8, seed in any::<u64>(), k in 0usize..6) {
            let spec = DisturbanceSpec::new(kinds()[k].clone(), 1.0).with_seed(seed);
            let a = generate_window(&spec, t, m, 2, None).unwrap();
            let b = generate_window(&spec, t + 1, m - 1, 2, None).unwrap();
            prop_assert_eq!(&a[1..], &b[..]);
            let c = generate_window(&spec, t, m, 2, None).unwrap();
            prop_assert_eq!(a, c);
        }
    }
}

use serde::Serialize;

use crate::error::{Error, Result};

fn check_alphas(alpha_lo: f64, alpha_hi: f64) -> Result<()> {
    if !(alpha_lo > 0.0 && alpha_lo.is_finite()) {
        return Err(Error::InvalidConstant(format!(
            "alpha_lo must be positive and finite, got {alpha_lo}"
        )));
    }
    if !(alpha_hi >= alpha_lo && alpha_hi.is_finite()) {
        return Err(Error::InvalidConstant(format!(
            "alpha_hi = {alpha_hi} must be finite and >= alpha_lo = {alpha_lo}"
        )));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstant(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn check_a(a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConstant(format!("contraction factor a must lie in (0, 1), got {a}")))
    }
}

fn check_m(m: usize) -> Result<()> {
    if m >= 2 {
        Ok(())
    } else {
        Err(Error::HorizonTooShort { horizon: m, min_horizon: 2 })
    }
}

/// Smallest integer `M` with `M > ᾱ²/α̲² + 1`.
pub fn min_horizon(alpha_lo: f64, alpha_hi: f64) -> Result<usize> {
    check_alphas(alpha_lo, alpha_hi)?;
    let r = alpha_hi * alpha_hi / (alpha_lo * alpha_lo) + 1.0;
    Ok(r.floor() as usize + 1)
}

/// `(Γ_V, Γ^γ_V)` for the one-step value change bound.
pub fn lemma1_constants(alpha_lo: f64, alpha_hi: f64, gamma_bar: f64, m: usize) -> Result<(f64, f64)> {
    check_alphas(alpha_lo, alpha_hi)?;
    check_nonneg("gamma_bar", gamma_bar)?;
    check_m(m)?;
    let m1 = (m - 1) as f64;
    let gv = alpha_hi * alpha_hi / (alpha_lo * m1) - alpha_lo;
    let ggv = gamma_bar * (alpha_hi / (alpha_lo * m1) + 1.0);
    Ok((gv, ggv))
}

/// Supremum of admissible `ε̃`: `α̲ - ᾱ²/((M-1)α̲)`. Nonpositive means the horizon is too short.
pub fn eps_tilde_max(alpha_lo: f64, alpha_hi: f64, m: usize) -> Result<f64> {
    check_alphas(alpha_lo, alpha_hi)?;
    check_m(m)?;
    Ok(alpha_lo - alpha_hi * alpha_hi / ((m - 1) as f64 * alpha_lo))
}

/// `(ε̃, a)`. Without an override `ε̃` is 80% of its supremum and `a = 1 - ε̃/ᾱ`.
pub fn choose_a(alpha_lo: f64, alpha_hi: f64, m: usize, eps_tilde: Option<f64>) -> Result<(f64, f64)> {
    let sup = eps_tilde_max(alpha_lo, alpha_hi, m)?;
    if sup <= 0.0 {
        return Err(Error::HorizonTooShort {
            horizon: m,
            min_horizon: min_horizon(alpha_lo, alpha_hi)?,
        });
    }
    let eps = match eps_tilde {
        None => 0.8 * sup,
        Some(e) if e > 0.0 && e < sup => e,
        Some(e) => {
            return Err(Error::InvalidConstant(format!(
                "eps_tilde = {e} must lie in (0, {sup})"
            )))
        }
    };
    let a = 1.0 - eps / alpha_hi;
    check_a(a)?;
    Ok((eps, a))
}

/// Checks a user-chosen `a` against `1 > a >= 1 - ε̃/ᾱ`.
pub fn validate_a(alpha_hi: f64, eps_tilde: f64, a: f64) -> Result<()> {
    check_a(a)?;
    let lo = 1.0 - eps_tilde / alpha_hi;
    if a + 1e-15 < lo {
        return Err(Error::InvalidConstant(format!("a = {a} is below 1 - eps/alpha_hi = {lo}")));
    }
    Ok(())
}

/// `b = γ̄(α̲/ᾱ + 1)`.
pub fn b_coefficient(alpha_lo: f64, alpha_hi: f64, gamma_bar: f64) -> Result<f64> {
    check_alphas(alpha_lo, alpha_hi)?;
    check_nonneg("gamma_bar", gamma_bar)?;
    Ok(gamma_bar * (alpha_lo / alpha_hi + 1.0))
}

/// Attenuation level achieved by the preview controller: `b((M-1)(1-a)+1)/(1-a)²`.
pub fn gamma_c(alpha_lo: f64, alpha_hi: f64, gamma_bar: f64, m: usize, a: f64) -> Result<f64> {
    check_m(m)?;
    check_a(a)?;
    let b = b_coefficient(alpha_lo, alpha_hi, gamma_bar)?;
    let d = 1.0 - a;
    Ok(b * ((m - 1) as f64 * d + 1.0) / (d * d))
}

/// Attenuation level of the min-max controller: `γ̄_W/(1-a) (α̲/ᾱ_W + 1)`.
pub fn gamma_c_w(alpha_lo: f64, alpha_w: f64, gamma_w: f64, a: f64) -> Result<f64> {
    check_alphas(alpha_lo, alpha_w)?;
    check_nonneg("gamma_bar_w", gamma_w)?;
    check_a(a)?;
    Ok(gamma_w / (1.0 - a) * (alpha_lo / alpha_w + 1.0))
}

/// `(Γ_{W,V}, Γ^γ_{W,V})`; the second multiplies `w_c²`.
pub fn minmax_value_constants(alpha_lo: f64, alpha_w: f64, gamma_w: f64, m: usize) -> Result<(f64, f64)> {
    lemma1_constants(alpha_lo, alpha_w, gamma_w, m)
}

/// Per-step cost envelope `c_{t+H} <= M_λ e^{-λH} σ(x_t) + Σ_j M_{w,j} ‖w_j‖²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma2Coefficients {
    pub m_lambda: f64,
    pub lambda: f64,
    pub t: usize,
    pub h: usize,
    /// `(j, M_{w,j})` for `j = t..=t+H+M-2`.
    pub schedule: Vec<(usize, f64)>,
}

impl Lemma2Coefficients {
    pub fn state_gain(&self) -> f64 {
        self.m_lambda * (-self.lambda * self.h as f64).exp()
    }

    /// Right-hand side given `σ(x_t)` and `‖w_j‖²` for each scheduled `j`.
    pub fn bound<F: Fn(usize) -> f64>(&self, sigma_t: f64, energy: F) -> f64 {
        self.state_gain() * sigma_t + self.schedule.iter().map(|&(j, c)| c * energy(j)).sum::<f64>()
    }
}

pub fn lemma2_coefficients(
    alpha_hi: f64,
    gamma_bar: f64,
    b: f64,
    a: f64,
    m: usize,
    h: usize,
    t: usize,
) -> Result<Lemma2Coefficients> {
    check_a(a)?;
    check_m(m)?;
    if h < m {
        return Err(Error::config(format!("H = {h} must be >= M = {m}")));
    }
    let d = 1.0 - a;
    let head = b * a.powi((h - m) as i32) / d + a.powi(h as i32) * gamma_bar;
    let schedule = (t..=t + h + m - 2)
        .map(|j| {
            let c = if j < t + m {
                head
            } else if j < t + h {
                b / d * a.powi((t + h - j - 1) as i32)
            } else {
                b / d
            };
            (j, c)
        })
        .collect();
    Ok(Lemma2Coefficients { m_lambda: alpha_hi, lambda: -a.ln(), t, h, schedule })
}

/// Inputs for the unknown-parameter constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaInputs {
    pub alpha_v: f64,
    pub alpha_kappa: f64,
    pub alpha_c: f64,
    pub alpha_f: f64,
    /// Bound on `‖θ‖`.
    pub s: f64,
}

/// `α̃_f = max_{0<=k<=M-2} (α_f S)^{k+1}`.
pub fn alpha_f_tilde(alpha_f: f64, s: f64, m: usize) -> f64 {
    let base = alpha_f * s;
    (0..m.saturating_sub(1)).map(|k| base.powi(k as i32 + 1)).fold(0.0, f64::max)
}

/// `(Γ^θ_V, M_θ)` for horizon `M`, lookahead `H` and contraction `(ε̃, a)`.
#[allow(clippy::too_many_arguments)]
pub fn theta_constants(
    inputs: &ThetaInputs,
    m: usize,
    alpha_lo: f64,
    alpha_hi: f64,
    eps_tilde: f64,
    a: f64,
    h: usize,
) -> Result<(f64, f64)> {
    for (name, v) in [
        ("alpha_v", inputs.alpha_v),
        ("alpha_kappa", inputs.alpha_kappa),
        ("alpha_c", inputs.alpha_c),
        ("alpha_f", inputs.alpha_f),
        ("S", inputs.s),
    ] {
        check_nonneg(name, v)?;
    }
    check_alphas(alpha_lo, alpha_hi)?;
    check_m(m)?;
    check_a(a)?;
    let m1 = (m - 1) as f64;
    let coupling = inputs.alpha_c * alpha_f_tilde(inputs.alpha_f, inputs.s, m) * inputs.alpha_kappa * m1;
    let gamma_theta = 2.0 * inputs.alpha_v + coupling * (alpha_hi / (alpha_lo * m1) + 1.0);
    let c = inputs.alpha_v * (2.0 + eps_tilde / alpha_hi) + coupling * ((alpha_lo - eps_tilde) / alpha_hi + 1.0);
    let ah = a.powi(h as i32);
    let m_theta = c * (1.0 - ah) / (1.0 - a) + ah * inputs.alpha_v;
    Ok((gamma_theta, m_theta))
}

/// Diagnostic attenuation level `⌈ᾱ²/α̲²⌉α̲ / (ᾱ(α̲²/ᾱ² ⌈ᾱ²/α̲²⌉ - 1))`.
///
/// Infinite when `ᾱ²/α̲²` is an integer (the bracket vanishes).
pub fn gamma_tilde(alpha_lo: f64, alpha_hi: f64) -> Result<f64> {
    check_alphas(alpha_lo, alpha_hi)?;
    let r = alpha_hi * alpha_hi / (alpha_lo * alpha_lo);
    let k = r.ceil();
    let denom = alpha_hi * (k / r - 1.0);
    Ok(if denom > 0.0 { k * alpha_lo / denom } else { f64::INFINITY })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaConstants {
    pub inputs: ThetaInputs,
    pub alpha_f_tilde: f64,
    pub lookahead: usize,
    pub gamma_theta_v: f64,
    pub m_theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinmaxConstants {
    pub alpha_w: f64,
    pub gamma_bar_w: f64,
    /// `γ̄ M`, the reference value for `γ̄_W` when the preview bound is reused.
    pub gamma_bar_times_m: f64,
    pub min_horizon_w: usize,
    pub eps_tilde_w: f64,
    pub a_w: f64,
    pub gamma_w_v: f64,
    pub gamma_gamma_w_v: f64,
    pub gamma_c_w: f64,
}

/// Every closed-form constant for one `(α̲, ᾱ, γ̄, M)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub gamma_bar: f64,
    pub horizon: usize,
    pub min_horizon: usize,
    pub eps_tilde_max: f64,
    pub eps_tilde: f64,
    pub a: f64,
    pub b: f64,
    pub gamma_v: f64,
    pub gamma_gamma_v: f64,
    pub gamma_c: f64,
    pub m_lambda: f64,
    pub lambda: f64,
    /// `None` when the diagnostic is unbounded.
    pub gamma_tilde: Option<f64>,
    pub theta: Option<ThetaConstants>,
    pub minmax: Option<MinmaxConstants>,
    /// Set when `ᾱ, γ̄` (or the Lipschitz inputs) came from sampling rather than closed form.
    pub empirical: bool,
}

impl ConstantsReport {
    pub fn compute(alpha_lo: f64, alpha_hi: f64, gamma_bar: f64, m: usize, eps_tilde: Option<f64>) -> Result<Self> {
        let mmin = min_horizon(alpha_lo, alpha_hi)?;
        if m < mmin {
            return Err(Error::HorizonTooShort { horizon: m, min_horizon: mmin });
        }
        let (eps, a) = choose_a(alpha_lo, alpha_hi, m, eps_tilde)?;
        Self::with_a(alpha_lo, alpha_hi, gamma_bar, m, eps, a)
    }

    /// Like [`ConstantsReport::compute`] with an explicit `(ε̃, a)`.
    pub fn with_a(alpha_lo: f64, alpha_hi: f64, gamma_bar: f64, m: usize, eps: f64, a: f64) -> Result<Self> {
        let mmin = min_horizon(alpha_lo, alpha_hi)?;
        let sup = eps_tilde_max(alpha_lo, alpha_hi, m)?;
        if !(eps > 0.0 && eps < sup) {
            return Err(Error::InvalidConstant(format!("eps_tilde = {eps} must lie in (0, {sup})")));
        }
        validate_a(alpha_hi, eps, a)?;
        let (gv, ggv) = lemma1_constants(alpha_lo, alpha_hi, gamma_bar, m)?;
        let gt = gamma_tilde(alpha_lo, alpha_hi)?;
        let report = Self {
            alpha_lo,
            alpha_hi,
            gamma_bar,
            horizon: m,
            min_horizon: mmin,
            eps_tilde_max: sup,
            eps_tilde: eps,
            a,
            b: b_coefficient(alpha_lo, alpha_hi, gamma_bar)?,
            gamma_v: gv,
            gamma_gamma_v: ggv,
            gamma_c: gamma_c(alpha_lo, alpha_hi, gamma_bar, m, a)?,
            m_lambda: alpha_hi,
            lambda: -a.ln(),
            gamma_tilde: gt.is_finite().then_some(gt),
            theta: None,
            minmax: None,
            empirical: false,
        };
        report.check_finite()?;
        Ok(report)
    }

    pub fn empirical(mut self, flag: bool) -> Self {
        self.empirical = flag;
        self
    }

    pub fn with_theta(mut self, inputs: ThetaInputs, lookahead: usize) -> Result<Self> {
        let (g, mt) = theta_constants(
            &inputs,
            self.horizon,
            self.alpha_lo,
            self.alpha_hi,
            self.eps_tilde,
            self.a,
            lookahead,
        )?;
        self.theta = Some(ThetaConstants {
            inputs,
            alpha_f_tilde: alpha_f_tilde(inputs.alpha_f, inputs.s, self.horizon),
            lookahead,
            gamma_theta_v: g,
            m_theta: mt,
        });
        self.check_finite()?;
        Ok(self)
    }

    /// Adds the min-max constants; `ε̃` and `a` are re-chosen against `ᾱ_W`.
    pub fn with_minmax(mut self, alpha_w: f64, gamma_bar_w: f64, eps_tilde: Option<f64>) -> Result<Self> {
        let mmin = min_horizon(self.alpha_lo, alpha_w)?;
        if self.horizon < mmin {
            return Err(Error::HorizonTooShort { horizon: self.horizon, min_horizon: mmin });
        }
        let (eps, a) = choose_a(self.alpha_lo, alpha_w, self.horizon, eps_tilde)?;
        let (g, gg) = minmax_value_constants(self.alpha_lo, alpha_w, gamma_bar_w, self.horizon)?;
        self.minmax = Some(MinmaxConstants {
            alpha_w,
            gamma_bar_w,
            gamma_bar_times_m: self.gamma_bar * self.horizon as f64,
            min_horizon_w: mmin,
            eps_tilde_w: eps,
            a_w: a,
            gamma_w_v: g,
            gamma_gamma_w_v: gg,
            gamma_c_w: gamma_c_w(self.alpha_lo, alpha_w, gamma_bar_w, a)?,
        });
        self.check_finite()?;
        Ok(self)
    }

    pub fn envelope_coefficients(&self, h: usize, t: usize) -> Result<Lemma2Coefficients> {
        lemma2_coefficients(self.alpha_hi, self.gamma_bar, self.b, self.a, self.horizon, h, t)
    }

    /// Upper bound on total min-max closed-loop cost over `T` steps.
    pub fn minmax_envelope(&self, steps: usize, w_c: f64, sigma_first: f64) -> Result<f64> {
        let mm = self
            .minmax
            .as_ref()
            .ok_or_else(|| Error::InvalidConstant("min-max constants not computed".into()))?;
        Ok(mm.gamma_c_w * steps as f64 * w_c * w_c + mm.alpha_w / (1.0 - mm.a_w) * sigma_first)
    }

    fn check_finite(&self) -> Result<()> {
        let mut vals = vec![
            self.eps_tilde_max,
            self.eps_tilde,
            self.a,
            self.b,
            self.gamma_v,
            self.gamma_gamma_v,
            self.gamma_c,
            self.m_lambda,
            self.lambda,
        ];
        if let Some(t) = &self.theta {
            vals.extend([t.gamma_theta_v, t.m_theta, t.alpha_f_tilde]);
        }
        if let Some(m) = &self.minmax {
            vals.extend([m.gamma_c_w, m.gamma_w_v, m.gamma_gamma_w_v, m.a_w]);
        }
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConstant("a derived constant is not finite".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn min_horizon_examples() {
        assert_eq!(min_horizon(1.0, 1.0).unwrap(), 3);
        assert_eq!(min_horizon(1.0, 2.0).unwrap(), 6);
        assert_eq!(min_horizon(1.0, 2f64.sqrt()).unwrap(), 4);
        assert!(min_horizon(0.0, 1.0).is_err());
        assert!(min_horizon(-1.0, 1.0).is_err());
    }

    #[test]
    fn value_change_constants() {
        let (g, gg) = lemma1_constants(1.0, 1.0, 1.0, 3).unwrap();
        assert_relative_eq!(g, -0.5);
        assert_relative_eq!(gg, 1.5);
        let (g, gg) = lemma1_constants(1.0, 1.0, 1.0, 2).unwrap();
        assert_relative_eq!(g, 0.0);
        assert_relative_eq!(gg, 2.0);
        let (g, gg) = lemma1_constants(1.0, 2.0, 1.0, 6).unwrap();
        assert_relative_eq!(g, -0.2, epsilon = 1e-12);
        assert_relative_eq!(gg, 1.4, epsilon = 1e-12);
        assert!(lemma1_constants(1.0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn contraction_choice() {
        assert_relative_eq!(eps_tilde_max(1.0, 1.0, 3).unwrap(), 0.5);
        let (eps, a) = choose_a(1.0, 1.0, 3, None).unwrap();
        assert_relative_eq!(eps, 0.4);
        assert_relative_eq!(a, 0.6);
        assert!(matches!(choose_a(1.0, 1.0, 2, None), Err(Error::HorizonTooShort { .. })));
        let (_, a) = choose_a(1.0, 1.0, 3, Some(0.45)).unwrap();
        assert_relative_eq!(a, 0.55);
        assert!(choose_a(1.0, 1.0, 3, Some(0.5)).is_err());
        assert!(choose_a(1.0, 1.0, 3, Some(0.0)).is_err());
    }

    #[test]
    fn attenuation_level_examples() {
        assert_relative_eq!(gamma_c(1.0, 1.0, 1.0, 3, 0.6).unwrap(), 22.5, epsilon = 1e-12);
        assert_relative_eq!(gamma_c(1.0, 1.0, 1.0, 3, 0.5).unwrap(), 16.0, epsilon = 1e-12);
        assert_relative_eq!(gamma_c(1.0, 1.0, 2.0, 3, 0.6).unwrap(), 45.0, epsilon = 1e-12);
        assert!(gamma_c(1.0, 1.0, 1.0, 3, 1.0).is_err());
    }

    #[test]
    fn per_step_schedule_examples() {
        let l = lemma2_coefficients(1.0, 1.0, 2.0, 0.6, 3, 3, 0).unwrap();
        assert_relative_eq!(l.m_lambda, 1.0);
        assert_relative_eq!(l.lambda, 0.510_825_623_765_990_7, epsilon = 1e-12);
        let vals: Vec<f64> = l.schedule.iter().map(|p| p.1).collect();
        let js: Vec<usize> = l.schedule.iter().map(|p| p.0).collect();
        assert_eq!(js, vec![0, 1, 2, 3, 4]);
        for v in &vals[..3] {
            assert_relative_eq!(*v, 5.216, epsilon = 1e-12);
        }
        for v in &vals[3..] {
            assert_relative_eq!(*v, 5.0, epsilon = 1e-12);
        }
        let l = lemma2_coefficients(1.0, 1.0, 2.0, 0.5, 3, 3, 0).unwrap();
        assert_relative_eq!(l.lambda, 2f64.ln());
        // b/(1-a) = 4 at a = 0.5.
        let l = lemma2_coefficients(1.0, 1.0, 2.0, 0.5, 3, 5, 0).unwrap();
        for &(j, v) in &l.schedule {
            if (3..=4).contains(&j) {
                assert_relative_eq!(v, 4.0 * 0.5f64.powi(4 - j as i32), epsilon = 1e-12);
            }
        }
        assert!(lemma2_coefficients(1.0, 1.0, 2.0, 0.5, 3, 2, 0).is_err());
    }

    #[test]
    fn minmax_level_examples() {
        assert_relative_eq!(gamma_c_w(1.0, 1.0, 3.0, 0.6).unwrap(), 15.0, epsilon = 1e-12);
        assert_relative_eq!(gamma_c_w(1.0, 1.0, 3.0, 0.5).unwrap(), 12.0, epsilon = 1e-12);
        assert_eq!(gamma_c_w(1.0, 1.0, 0.0, 0.6).unwrap(), 0.0);
        assert!(gamma_c_w(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn theta_constant_examples() {
        let only_v = ThetaInputs { alpha_v: 1.0, alpha_kappa: 0.0, alpha_c: 0.0, alpha_f: 0.0, s: 0.0 };
        let (g, mt) = theta_constants(&only_v, 3, 1.0, 1.0, 0.4, 0.6, 3).unwrap();
        assert_relative_eq!(g, 2.0);
        // c = 2.4; 2.4 * 0.784 / 0.4 + 0.216
        assert_relative_eq!(mt, 4.92, epsilon = 1e-12);

        let zero = ThetaInputs { alpha_v: 0.0, alpha_kappa: 3.0, alpha_c: 0.0, alpha_f: 2.0, s: 1.0 };
        assert_eq!(theta_constants(&zero, 3, 1.0, 1.0, 0.4, 0.6, 3).unwrap(), (0.0, 0.0));

        let base = ThetaInputs { alpha_v: 0.5, alpha_kappa: 1.0, alpha_c: 2.0, alpha_f: 1.5, s: 1.0 };
        let twice = ThetaInputs { alpha_kappa: 2.0, ..base };
        let (g1, _) = theta_constants(&base, 4, 1.0, 1.2, 0.1, 0.9, 4).unwrap();
        let (g2, _) = theta_constants(&twice, 4, 1.0, 1.2, 0.1, 0.9, 4).unwrap();
        assert_relative_eq!(g2 - 1.0, 2.0 * (g1 - 1.0), epsilon = 1e-12);
        assert_relative_eq!(alpha_f_tilde(1.5, 1.0, 4), 1.5f64.powi(3));
        assert_relative_eq!(alpha_f_tilde(0.5, 1.0, 4), 0.5);
    }

    #[test]
    fn report_fields_and_validation() {
        let r = ConstantsReport::compute(1.0, 1.0, 1.0, 3, None).unwrap();
        assert_eq!(r.min_horizon, 3);
        assert_relative_eq!(r.gamma_c, 22.5, epsilon = 1e-12);
        assert_relative_eq!(r.b, 2.0);
        assert!(r.gamma_tilde.is_none());
        assert!(matches!(
            ConstantsReport::compute(1.0, 2.0, 1.0, 5, None),
            Err(Error::HorizonTooShort { horizon: 5, min_horizon: 6 })
        ));
        let r = r.with_minmax(1.0, 3.0, None).unwrap();
        let mm = r.minmax.as_ref().unwrap();
        assert_relative_eq!(mm.gamma_c_w, 15.0, epsilon = 1e-12);
        assert_relative_eq!(r.minmax_envelope(10, 1.0, 2.0).unwrap(), 150.0 + 5.0, epsilon = 1e-9);
        assert!(ConstantsReport::with_a(1.0, 1.0, 1.0, 3, 0.4, 0.5).is_err());
        assert!(ConstantsReport::with_a(1.0, 1.0, 1.0, 3, 0.4, 0.7).is_ok());
    }

    #[test]
    fn gamma_tilde_diagnostic() {
        // r = 1.44, ceil 2: 2 / (1.2 (2/1.44 - 1))
        let v = gamma_tilde(1.0, 1.2).unwrap();
        assert_relative_eq!(v, 2.0 / (1.2 * (2.0 / 1.44 - 1.0)), epsilon = 1e-12);
        assert!(gamma_tilde(1.0, 1.0).unwrap().is_infinite());
    }

    fn valid_setup() -> impl Strategy<Value = (f64, f64, f64, usize, f64)> {
        (0.1f64..5.0, 1.0f64..3.0, 0.01f64..10.0, 0usize..20, 0.01f64..0.99).prop_map(
            |(lo, ratio, gb, extra, frac)| {
                let hi = lo * ratio;
                let m = min_horizon(lo, hi).unwrap() + extra;
                (lo, hi, gb, m, frac)
            },
        )
    }

    proptest! {
        #[test]
        fn attenuation_never_beats_two_gamma_bar((lo, hi, gb, m, frac) in valid_setup()) {
            let sup = eps_tilde_max(lo, hi, m).unwrap();
            prop_assert!(sup > 0.0);
            let (eps, a_lo) = choose_a(lo, hi, m, Some(frac * sup)).unwrap();
            // any a in [a_lo, 1)
            let a = a_lo + (1.0 - a_lo) * frac * 0.5;
            prop_assert!(validate_a(hi, eps, a).is_ok());
            prop_assert!(gamma_c(lo, hi, gb, m, a).unwrap() >= 2.0 * gb * (1.0 - 1e-12));
        }

        #[test]
        fn value_change_contracts_past_threshold((lo, hi, gb, m, _f) in valid_setup()) {
            let (g, gg) = lemma1_constants(lo, hi, gb, m).unwrap();
            prop_assert!(g < 0.0);
            prop_assert!(gg > 0.0);
        }

        #[test]
        fn middle_band_discounts_older_disturbances(a in 0.05f64..0.95, m in 2usize..6, extra in 0usize..10, t in 0usize..5) {
            let h = m + extra;
            let l = lemma2_coefficients(1.3, 0.7, 1.1, a, m, h, t).unwrap();
            let band: Vec<f64> = l.schedule.iter().filter(|(j, _)| *j >= t + m && *j < t + h).map(|p| p.1).collect();
            // weight shrinks as the disturbance ages, i.e. as j moves away from t+H
            for w in band.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }

        #[test]
        fn exponential_and_power_forms_agree(a in 0.01f64..0.99, h in 2usize..200, hi in 0.1f64..10.0) {
            let l = lemma2_coefficients(hi, 1.0, 1.0, a, 2, h, 0).unwrap();
            let lhs = l.state_gain();
            let rhs = hi * a.powi(h as i32);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-300);
        }
    }
}

//! Diffusion-rate tables for the forward Markov kernel.
//!
//! Steps are indexed `t = 1..=T`; index 0 of the cumulative product is the
//! identity marginal, `ᾱ_0 = 1`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_STEPS: usize = 1000;
pub const DESK_STEPS: usize = 200;
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_BETA_CLIP: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Construction parameters; enough to rebuild a schedule bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleSpec {
    Linear { steps: usize, beta_start: f64, beta_end: f64 },
    Cosine { steps: usize, offset: f64, beta_clip: f64 },
}

impl ScheduleSpec {
    pub fn default_for(kind: ScheduleKind, steps: usize) -> Self {
        match kind {
            ScheduleKind::Linear => {
                ScheduleSpec::Linear { steps, beta_start: LINEAR_BETA_START, beta_end: LINEAR_BETA_END }
            }
            ScheduleKind::Cosine => {
                ScheduleSpec::Cosine { steps, offset: COSINE_OFFSET, beta_clip: COSINE_BETA_CLIP }
            }
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            ScheduleSpec::Linear { .. } => ScheduleKind::Linear,
            ScheduleSpec::Cosine { .. } => ScheduleKind::Cosine,
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            ScheduleSpec::Linear { steps, .. } | ScheduleSpec::Cosine { steps, .. } => steps,
        }
    }

    pub fn build<S: Scalar>(&self) -> Result<BetaSchedule<S>> {
        match *self {
            ScheduleSpec::Linear { steps, beta_start, beta_end } => linear_schedule(steps, beta_start, beta_end),
            ScheduleSpec::Cosine { steps, offset, beta_clip } => cosine_schedule(steps, offset, beta_clip),
        }
    }
}

/// Per-step variances `β_t` with the derived `α_t` and `ᾱ_t` tables.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaSchedule<S> {
    kind: ScheduleKind,
    betas: Vec<S>,
    alphas: Vec<S>,
    // alpha_bars[0] = 1, alpha_bars[t] = ᾱ_t
    alpha_bars: Vec<S>,
}

impl<S: Scalar> BetaSchedule<S> {
    /// Builds the derived tables from `β_1..β_T`.
    pub fn from_betas(kind: ScheduleKind, betas: Vec<S>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::param("a schedule needs at least 2 steps"));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, &b)| !(b > S::zero() && b < S::one())) {
            return Err(Error::param(format!("beta_{} = {b} is outside (0, 1)", i + 1)));
        }
        let alphas: Vec<S> = betas.iter().map(|&b| S::one() - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(S::one());
        for &a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(BetaSchedule { kind, betas, alphas, alpha_bars })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::param(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `β_t`, `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> S {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> S {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bars[t]
    }

    /// `ᾱ_{t−1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> S {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    /// Coefficients of `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
    pub fn closed_form_marginal(&self, t: usize) -> Result<(S, S)> {
        self.check(t)?;
        Ok(self.marginal_unchecked(t))
    }

    pub(crate) fn marginal_unchecked(&self, t: usize) -> (S, S) {
        let ab = self.alpha_bars[t];
        (ab.sqrt(), (S::one() - ab).sqrt())
    }

    /// Posterior variance `β̃_t = β_t·(1−ᾱ_{t−1})/(1−ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> S {
        self.beta(t) * (S::one() - self.alpha_bar_prev(t)) / (S::one() - self.alpha_bar(t))
    }

    /// CSV with header `t,beta,alpha,alpha_bar`, one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha,alpha_bar\n");
        for t in 1..=self.steps() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                t,
                self.beta(t).as_f64(),
                self.alpha(t).as_f64(),
                self.alpha_bar(t).as_f64()
            );
        }
        out
    }
}

/// `β_t = start + (t−1)/(T−1)·(end − start)`.
pub fn linear_schedule<S: Scalar>(steps: usize, beta_start: f64, beta_end: f64) -> Result<BetaSchedule<S>> {
    if steps < 2 {
        return Err(Error::param(format!("linear schedule needs T >= 2, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::param(format!(
            "linear schedule needs 0 < start <= end < 1, got start={beta_start}, end={beta_end}"
        )));
    }
    let span = beta_end - beta_start;
    let last = (steps - 1) as f64;
    let betas = (0..steps).map(|i| S::lit(beta_start + (i as f64 / last) * span)).collect();
    BetaSchedule::from_betas(ScheduleKind::Linear, betas)
}

/// Squared-cosine schedule: `ᾱ_t = f(t)/f(0)` with
/// `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`, `β_t = min(1 − ᾱ_t/ᾱ_{t−1}, clip)`.
pub fn cosine_schedule<S: Scalar>(steps: usize, offset: f64, beta_clip: f64) -> Result<BetaSchedule<S>> {
    if steps < 2 {
        return Err(Error::param(format!("cosine schedule needs T >= 2, got {steps}")));
    }
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::param(format!("cosine offset must be positive, got {offset}")));
    }
    if !(beta_clip > 0.0 && beta_clip < 1.0) {
        return Err(Error::param(format!("beta clip must lie in (0, 1), got {beta_clip}")));
    }
    let f = |t: usize| {
        let c = ((t as f64 / steps as f64 + offset) / (1.0 + offset) * FRAC_PI_2).cos();
        c * c
    };
    let f0 = f(0);
    let betas = (1..=steps)
        .map(|t| {
            let ratio = (f(t) / f0) / (f(t - 1) / f0);
            S::lit((1.0 - ratio).min(beta_clip))
        })
        .collect();
    BetaSchedule::from_betas(ScheduleKind::Cosine, betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_endpoints() {
        let s = linear_schedule::<f64>(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.steps(), 1000);
        // interpolation oracle for the midpoint
        let oracle = 1e-4 + (499.0 / 999.0) * 0.0199;
        assert_relative_eq!(s.beta(500), oracle, max_relative = 1e-14);
        assert!((s.beta(500) - 0.010_040_040_04).abs() < 1e-11);
    }

    #[test]
    fn linear_constant_when_degenerate() {
        let s = linear_schedule::<f64>(10, 0.05, 0.05).unwrap();
        assert!(s.betas().iter().all(|&b| b == 0.05));
    }

    #[test]
    fn linear_rejects_bad_ranges() {
        assert!(linear_schedule::<f64>(1, 1e-4, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 0.0, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 0.03, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn cosine_properties() {
        let s = cosine_schedule::<f64>(1000, 0.008, 0.999).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "not decreasing at {t}");
            assert!(s.beta(t) <= 0.999);
        }
        assert!(s.alpha_bar(1000) < 1e-3);
        assert_eq!(s.beta(1000), 0.999);
    }

    #[test]
    fn cosine_rejects_bad_parameters() {
        assert!(cosine_schedule::<f64>(1, 0.008, 0.999).is_err());
        assert!(cosine_schedule::<f64>(10, 0.0, 0.999).is_err());
        assert!(cosine_schedule::<f64>(10, 0.008, 1.0).is_err());
    }

    #[test]
    fn recurrence_is_exact() {
        for s in [
            linear_schedule::<f64>(1000, 1e-4, 0.02).unwrap(),
            cosine_schedule::<f64>(1000, 0.008, 0.999).unwrap(),
        ] {
            let worst = (1..=1000)
                .map(|t| (s.alpha_bar(t) - s.alpha(t) * s.alpha_bar_prev(t)).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-12);
        }
    }

    #[test]
    fn marginal_cases() {
        let s = BetaSchedule::<f64>::from_betas(ScheduleKind::Linear, vec![0.1; 4]).unwrap();
        let (m, sd) = s.closed_form_marginal(2).unwrap();
        assert_relative_eq!(m, 0.9, max_relative = 1e-15);
        assert_relative_eq!(sd, 0.19f64.sqrt(), max_relative = 1e-15);
        assert_eq!(s.marginal_unchecked(0), (1.0, 0.0));
        assert!(s.closed_form_marginal(0).is_err());
        assert!(s.closed_form_marginal(5).is_err());
        let c = cosine_schedule::<f64>(1000, 0.008, 0.999).unwrap();
        let (m, sd) = c.closed_form_marginal(1000).unwrap();
        assert!(m < 0.03 && sd > 0.999);
    }

    #[test]
    fn posterior_variance_is_bounded_by_beta() {
        for s in [
            linear_schedule::<f64>(200, 1e-4, 0.02).unwrap(),
            cosine_schedule::<f64>(200, 0.008, 0.999).unwrap(),
        ] {
            assert_eq!(s.posterior_variance(1), 0.0);
            for t in 1..=200 {
                assert!(s.posterior_variance(t) <= s.beta(t));
            }
        }
    }

    #[test]
    fn csv_golden() {
        let s = linear_schedule::<f64>(3, 0.1, 0.3).unwrap();
        let expected = "t,beta,alpha,alpha_bar\n\
                        1,0.1,0.9,0.9\n\
                        2,0.2,0.8,0.7200000000000001\n\
                        3,0.3,0.7,0.504\n";
        assert_eq!(s.to_csv(), expected);
    }
}

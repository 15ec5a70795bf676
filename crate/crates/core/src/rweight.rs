//! r-weighted currents for X = f(u) r^γ L, q = f(1−μ)r^{γ−1} and the matching
//! 1-form, with every μ-dependent coefficient carried exactly.

use crate::ad::{smooth_step, Real};
use crate::error::{domain, Result};
use crate::geometry::SchwarzschildChart;
use crate::identity::{current_definition, q_definition, random_jets, Fields, Multiplier, PointJet};
use serde::{Deserialize, Serialize};

/// The u-profile f(u) of the multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FProfile {
    Constant(f64),
    /// amp · e^{rate·u}
    Exponential { amp: f64, rate: f64 },
}

impl FProfile {
    pub fn eval<T: Real>(&self, u: T) -> T {
        match *self {
            FProfile::Constant(c) => T::cst(c),
            FProfile::Exponential { amp, rate } => (u * rate).exp() * amp,
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match *self {
            FProfile::Constant(_) => 0.0,
            FProfile::Exponential { amp, rate } => amp * rate * (rate * u).exp(),
        }
    }
}

/// Increasing cutoff η with η = 0 for r ≤ `r_lo`·M and η = 1 for r ≥ `r_hi`·M.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaProfile {
    pub r_lo: f64,
    pub r_hi: f64,
}

impl Default for EtaProfile {
    fn default() -> Self {
        Self { r_lo: 4.0, r_hi: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RWeightSpec {
    pub gamma: f64,
    pub f_profile: FProfile,
    pub eta_profile: EtaProfile,
    pub k: u8,
    pub p: f64,
}

impl RWeightSpec {
    pub fn new(gamma: f64, p: f64) -> Self {
        Self { gamma, f_profile: FProfile::Constant(1.0), eta_profile: EtaProfile::default(), k: 1, p }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(domain(format!("gamma must lie in (0, 2), got {}", self.gamma)));
        }
        if self.k > 1 {
            return Err(domain("k must be 0 or 1"));
        }
        if !(self.eta_profile.r_lo < self.eta_profile.r_hi) {
            return Err(domain("eta profile must increase"));
        }
        Ok(())
    }
}

/// Multiplier (ηX, ηq, ηm) bound to a chart.
#[derive(Clone, Copy, Debug)]
pub struct RpwMultiplier<'a> {
    pub chart: &'a SchwarzschildChart,
    pub spec: RWeightSpec,
}

impl<'a> RpwMultiplier<'a> {
    pub fn new(chart: &'a SchwarzschildChart, spec: RWeightSpec) -> Self {
        Self { chart, spec }
    }

    pub fn eta<T: Real>(&self, r: T) -> T {
        let m = self.chart.m;
        let e = self.spec.eta_profile;
        smooth_step((r - e.r_lo * m) / ((e.r_hi - e.r_lo) * m))
    }

    fn eta_with_derivative(&self, r: f64) -> (f64, f64) {
        let d = self.eta(crate::ad::HyperDual::var1(r));
        (d.re, d.d1)
    }
}

impl Multiplier for RpwMultiplier<'_> {
    fn fields<T: Real>(&self, u: T, r: T) -> Fields<T> {
        let m = self.chart.m;
        let g = self.spec.gamma;
        let omu = T::cst(1.0) - r.recip() * (2.0 * m);
        let eta = self.eta(r);
        let f = self.spec.f_profile.eval(u);
        // f' for the supported profiles, kept generic in u
        let fp = match self.spec.f_profile {
            FProfile::Constant(_) => T::cst(0.0),
            FProfile::Exponential { rate, .. } => f * rate,
        };
        let rg = r.powf(g);
        let xv = eta * f * rg;
        let q = eta * f * omu * rg / r;
        let mv_up = eta * (f * omu * (0.5 * g * g) * rg / (r * r) - fp * rg / r);
        Fields { xu: T::cst(0.0), xv, q, mu: omu * mv_up * -2.0, mv: T::cst(0.0) }
    }

    // the closed form holds only where η ≡ 1
    fn closed_q(&self, jet: &PointJet) -> Option<f64> {
        (jet.r >= self.spec.eta_profile.r_hi * self.chart.m).then(|| q_closed(self.chart, &self.spec, jet))
    }

    fn closed_r2_current(&self, jet: &PointJet, k: u8, p: f64) -> Option<(f64, f64)> {
        let spec = RWeightSpec { k, p, ..self.spec };
        Some((r2_pu_closed(self.chart, &spec, jet), r2_pv_closed(self.chart, &spec, jet)))
    }
}

/// μ-correction c₀ in the ψ² coefficient of Q (f = const part); c₀ = O(μ).
pub fn c0(gamma: f64, mu: f64) -> f64 {
    let g = gamma;
    let omu = 1.0 - mu;
    0.5 * g * g * omu * (g - g * mu + 2.0 * mu)
        - ((g - 1.0) * g + mu * (g - 1.0) * (3.0 - 2.0 * g) + mu * mu * (g - 2.0).powi(2))
        - 0.25 * g.powi(3) * omu * omu
        - g * (1.0 - 0.5 * g).powi(2)
}

/// Angular coefficient 2 − γ + μ(γ − 3).
pub fn angular_coefficient(gamma: f64, mu: f64) -> f64 {
    2.0 - gamma + mu * (gamma - 3.0)
}

/// Zeroth-order coefficient γ(1 − γ/2)² + c₀.
pub fn zeroth_coefficient(gamma: f64, mu: f64) -> f64 {
    gamma * (1.0 - 0.5 * gamma).powi(2) + c0(gamma, mu)
}

fn q_closed(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> f64 {
    let r = jet.r;
    let g = spec.gamma;
    let mu = chart.mu(r);
    let omu = chart.one_minus_mu(r);
    let f = spec.f_profile.eval(jet.u);
    let fp = spec.f_profile.deriv(jet.u);
    let rg3 = r.powf(g - 3.0);
    let lv = r * jet.psi_v + 0.5 * g * omu * jet.psi;
    let dv_rpsi = r * jet.psi_v + omu * jet.psi;
    0.5 * f * g * rg3 * lv * lv + 0.5 * f * angular_coefficient(g, mu) * r.powf(g - 1.0) * jet.ang * jet.ang
        - 0.5 * fp / omu * r.powf(g - 2.0) * dv_rpsi * dv_rpsi
        + 0.5 * rg3 * f * zeroth_coefficient(g, mu) * jet.psi * jet.psi
}

fn r2_pv_closed(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> f64 {
    let r = jet.r;
    let g = spec.gamma;
    let omu = chart.one_minus_mu(r);
    let mult = RpwMultiplier::new(chart, *spec);
    let (eta, deta) = mult.eta_with_derivative(r);
    let f = spec.f_profile.eval(jet.u);
    let psi = jet.psi;
    let lr = r * jet.psi_v + omu * psi;
    // L(η f (1−μ) r^{γ+1} ψ²), with L r = 1 − μ
    let w = eta * f * omu * r.powf(g + 1.0);
    let dw_dr = f * (deta * omu * r.powf(g + 1.0) + eta * (chart.mu(r) / r * r.powf(g + 1.0) + omu * (g + 1.0) * r.powf(g)));
    let l_term = dw_dr * omu * psi * psi + w * 2.0 * psi * jet.psi_v;
    eta * f * r.powf(g) * lr * lr - 0.5 * l_term
}

fn r2_pu_closed(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> f64 {
    let r = jet.r;
    let g = spec.gamma;
    let mu = chart.mu(r);
    let omu = chart.one_minus_mu(r);
    let mult = RpwMultiplier::new(chart, *spec);
    let (eta, deta) = mult.eta_with_derivative(r);
    let f = spec.f_profile.eval(jet.u);
    let fp = spec.f_profile.deriv(jet.u);
    let psi = jet.psi;
    let rpsi_ang2 = r * r * jet.ang * jet.ang;
    let pot = 2.0 * spec.k as f64 * r * r / (spec.p + 1.0) * psi.abs().powf(spec.p + 1.0);
    let bracket = rpsi_ang2 + pot + (omu * (1.0 - 0.5 * g) * g + mu) * psi * psi;
    // L̄(η f (1−μ) r^{γ+1} ψ²), with L̄ r = −(1 − μ)
    let w = eta * f * omu * r.powf(g + 1.0);
    let dw_dr = f * (deta * omu * r.powf(g + 1.0) + eta * (mu / r * r.powf(g + 1.0) + omu * (g + 1.0) * r.powf(g)));
    let w_u = -dw_dr * omu + eta * fp * omu * r.powf(g + 1.0);
    let lbar_term = w_u * psi * psi + w * 2.0 * psi * jet.psi_u;
    eta * omu * f * r.powf(g) * bracket + 0.5 * lbar_term + deta * f * omu * omu * r.powf(g + 1.0) * psi * psi
}

fn check(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> Result<()> {
    spec.validate()?;
    if !(jet.r > 2.0 * chart.m) {
        return Err(domain(format!("r-weighted currents need r > 2M, got r = {}", jet.r)));
    }
    Ok(())
}

/// Closed-form Q[ψ, X, q, m] (the η ≡ 1 region).
pub fn rweight_q(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> Result<f64> {
    check(chart, spec, jet)?;
    Ok(q_closed(chart, spec, jet))
}

/// Closed-form r²P_v[ψ, ηX, ηq, ηm, k].
pub fn rweight_pv(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> Result<f64> {
    check(chart, spec, jet)?;
    Ok(r2_pv_closed(chart, spec, jet))
}

/// Closed-form r²P_u[ψ, ηX, ηq, ηm, k].
pub fn rweight_pu(chart: &SchwarzschildChart, spec: &RWeightSpec, jet: &PointJet) -> Result<f64> {
    check(chart, spec, jet)?;
    Ok(r2_pu_closed(chart, spec, jet))
}

/// q − div X/(p+1) = ((p−1−γ)(1−μ) − μ) r^{γ−1}/(p+1) for f = 1.
pub fn rweight_potential_coefficient(chart: &SchwarzschildChart, gamma: f64, p: f64, r: f64) -> f64 {
    let omu = chart.one_minus_mu(r);
    ((p - 1.0 - gamma) * omu - chart.mu(r)) * r.powf(gamma - 1.0) / (p + 1.0)
}

/// Smallest R such that both Q coefficients are positive for all r ≥ R (f = 1).
pub fn positivity_radius(chart: &SchwarzschildChart, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(domain(format!("gamma must lie in (0, 2), got {gamma}")));
    }
    let ok = |mu: f64| angular_coefficient(gamma, mu) > 0.0 && zeroth_coefficient(gamma, mu) > 0.0;
    // scan outward in r, i.e. downward in μ, from the horizon
    let n = 100_000;
    let mut last_bad: Option<f64> = None;
    for i in 1..=n {
        let mu = i as f64 / n as f64;
        if !ok(mu) {
            last_bad = Some(mu);
            break;
        }
    }
    let Some(mut hi) = last_bad else {
        return Ok(2.0 * chart.m);
    };
    let mut lo = hi - 1.0 / n as f64;
    if lo <= 0.0 || !ok(lo) {
        return Err(domain(format!("no positivity radius for gamma = {gamma}")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(2.0 * chart.m / lo)
}

/// Worst relative disagreement between the closed-form Q, r²P_u, r²P_v and their
/// definition-based assembly at `n` random jets (Q only where η ≡ 1).
pub fn verify_rpw_formulas(chart: &SchwarzschildChart, spec: &RWeightSpec, n: usize) -> Result<f64> {
    spec.validate()?;
    let m = chart.m;
    let mult = RpwMultiplier::new(chart, *spec);
    let mut worst: f64 = 0.0;
    for j in random_jets(n, 0x9E37_79B9_7F4A_7C15, 2.1 * m, 60.0 * m) {
        let (pu, pv, _) = current_definition(chart, &mult, &j, spec.k, spec.p);
        let r2 = j.r * j.r;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        worst = worst.max(rel(rweight_pu(chart, spec, &j)?, r2 * pu));
        worst = worst.max(rel(rweight_pv(chart, spec, &j)?, r2 * pv));
        if j.r >= spec.eta_profile.r_hi * m {
            worst = worst.max(rel(rweight_q(chart, spec, &j)?, q_definition(chart, &mult, &j)));
        }
    }
    Ok(worst)
}

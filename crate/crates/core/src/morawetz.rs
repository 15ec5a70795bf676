//! The integrated-local-energy multiplier (X, q, m), the nonlinear threshold p₀
//! and positivity of the potential-energy coefficient.

use crate::ad::{smooth_step, HyperDual, Real};
use crate::error::{domain, Result};
use crate::geometry::SchwarzschildChart;
use crate::identity::{div_x_definition, q_form_matrix, random_jets, Fields, Multiplier};
use crate::numerics::{golden_section_max, logspace};
use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Smooth decreasing profile b₀ from 1 at `r_start` to 0 at `r_end` (units of M).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct B0Profile {
    pub r_start: f64,
    pub r_end: f64,
}

impl Default for B0Profile {
    fn default() -> Self {
        Self { r_start: 2.0, r_end: 3.0 }
    }
}

/// Near-horizon 1-form m = m₁(r) dṽ with m₁ = amplitude · (1 − step) supported in r ≤ 3M.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MProfile {
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSpec {
    pub eps: f64,
    pub delta: f64,
    pub delta1: f64,
    #[serde(default)]
    pub b0_profile: B0Profile,
    #[serde(default)]
    pub m_profile: Option<MProfile>,
}

impl Default for MultiplierSpec {
    fn default() -> Self {
        Self { eps: 1e-3, delta: 1e-3, delta1: 1e-4, b0_profile: B0Profile::default(), m_profile: None }
    }
}

impl MultiplierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(domain("eps must be positive"));
        }
        if !(self.delta >= 0.0 && self.delta1 >= 0.0 && self.delta1 <= self.delta) {
            return Err(domain("require delta >= 0 and 0 <= delta1 <= delta"));
        }
        if self.b0_profile.r_end > 3.0 || self.b0_profile.r_start >= self.b0_profile.r_end {
            return Err(domain("b0 must decrease on [r_start, r_end] with r_end <= 3M"));
        }
        Ok(())
    }
}

/// f(x) = x on [−1, ∞), −2 on (−∞, −3], and −2 + 2s³ − s⁴ with s = (x+3)/2 between.
pub fn cutoff_f<T: Real>(x: T) -> T {
    let xr = x.re();
    if xr >= -1.0 {
        x
    } else if xr <= -3.0 {
        T::cst(-2.0)
    } else {
        let s = (x + 3.0) * 0.5;
        let s3 = s * s * s;
        s3 * 2.0 - s3 * s - 2.0
    }
}

/// f'(x).
pub fn cutoff_df<T: Real>(x: T) -> T {
    let xr = x.re();
    if xr >= -1.0 {
        T::cst(1.0)
    } else if xr <= -3.0 {
        T::cst(0.0)
    } else {
        let s = (x + 3.0) * 0.5;
        s * s * (T::cst(3.0) - s * 2.0)
    }
}

/// The Lemma-Ta multiplier bound to a chart.
#[derive(Clone, Copy, Debug)]
pub struct TaMultiplier<'a> {
    pub chart: &'a SchwarzschildChart,
    pub spec: MultiplierSpec,
}

impl<'a> TaMultiplier<'a> {
    pub fn new(chart: &'a SchwarzschildChart, spec: MultiplierSpec) -> Self {
        Self { chart, spec }
    }

    fn arg<T: Real>(&self, r: T) -> T {
        let m = self.chart.m;
        let e = self.spec.eps;
        ((r - 3.0 * m) * (r + 2.0 * m) + ((r - 2.0 * m) / m).ln() * (6.0 * m * m)) * e
    }

    pub fn a<T: Real>(&self, r: T) -> T {
        cutoff_f(self.arg(r)) / (r * r * self.spec.eps)
    }

    pub fn t1<T: Real>(&self, r: T) -> T {
        let m = self.chart.m;
        let omu = T::cst(1.0) - r.recip() * (2.0 * m);
        omu / (r * r) * cutoff_df(self.arg(r)) * (r * 2.0 - m + (r - 2.0 * m).recip() * (6.0 * m * m))
    }

    pub fn b0<T: Real>(&self, r: T) -> T {
        let m = self.chart.m;
        let p = self.spec.b0_profile;
        smooth_step((T::cst(p.r_end * m) - r) / ((p.r_end - p.r_start) * m))
    }

    pub fn q1<T: Real>(&self, r: T) -> T {
        let m = self.chart.m;
        let chi = smooth_step((r - 2.5 * m) / (0.5 * m));
        let d = r - 3.0 * m;
        chi * d * d / (r * r * r * r)
    }

    pub fn q0<T: Real>(&self, r: T) -> T {
        self.t1(r) * 0.5 - self.b0(r) / r * self.spec.delta
    }

    pub fn q<T: Real>(&self, r: T) -> T {
        self.q0(r) + self.q1(r) * self.spec.delta1
    }

    /// m₁(r), the dṽ component of the optional 1-form.
    pub fn m1<T: Real>(&self, r: T) -> T {
        match self.spec.m_profile {
            None => T::cst(0.0),
            Some(mp) => smooth_step((T::cst(3.0 * self.chart.m) - r) / self.chart.m) * mp.amplitude,
        }
    }

    /// div X₁ = t₁ + 2Ma/r².
    pub fn div_x1(&self, r: f64) -> f64 {
        self.t1(r) + 2.0 * self.chart.m * self.a(r) / (r * r)
    }

    /// div X₂ = −(2b₀/r + b₀').
    pub fn div_x2(&self, r: f64) -> f64 {
        let b = self.b0(HyperDual::var1(r));
        -(2.0 * b.re / r + b.d1)
    }

    pub fn div_x(&self, r: f64) -> f64 {
        self.div_x1(r) + self.spec.delta * self.div_x2(r)
    }
}

impl Multiplier for TaMultiplier<'_> {
    fn fields<T: Real>(&self, _u: T, r: T) -> Fields<T> {
        let m = self.chart.m;
        let omu = T::cst(1.0) - r.recip() * (2.0 * m);
        let a = self.a(r);
        let b0 = self.b0(r);
        let xu = -a * 0.5 + b0 / omu * self.spec.delta;
        let xv = a * 0.5;
        let m1 = self.m1(r);
        let (mu, mv) = if self.spec.m_profile.is_some() {
            let dl = self.chart.dlambda_generic(r);
            (m1 * dl * omu, m1 * (T::cst(2.0) - dl * omu))
        } else {
            (T::cst(0.0), T::cst(0.0))
        };
        Fields { xu, xv, q: self.q(r), mu, mv }
    }
}

fn check_exterior(chart: &SchwarzschildChart, r: f64) -> Result<()> {
    if !(r > 2.0 * chart.m) {
        return Err(domain(format!("radius {r} is not in the exterior r > 2M")));
    }
    Ok(())
}

pub fn a_fn(chart: &SchwarzschildChart, spec: &MultiplierSpec, r: f64) -> Result<f64> {
    check_exterior(chart, r)?;
    Ok(TaMultiplier::new(chart, *spec).a(r))
}

pub fn t1_fn(chart: &SchwarzschildChart, spec: &MultiplierSpec, r: f64) -> Result<f64> {
    check_exterior(chart, r)?;
    Ok(TaMultiplier::new(chart, *spec).t1(r))
}

/// The ratio 4Ma/(r²t₁) on r ≥ 3M in its explicit closed form.
pub fn threshold_ratio(m: f64, r: f64) -> f64 {
    let num = 4.0 * m * ((r - 3.0 * m) * (r + 2.0 * m) + 6.0 * m * m * (r / m - 2.0).ln());
    let den = r * ((2.0 * r - m) * (r - 2.0 * m) + 6.0 * m * m);
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub p0: f64,
    pub r_max: f64,
    pub ratio_max: f64,
}

/// p₀ = 1 + sup_{r ≥ 3M} 4Ma/(r²t₁), by a log-grid scan refined with golden section.
pub fn threshold_p0(chart: &SchwarzschildChart, _spec: &MultiplierSpec) -> ThresholdReport {
    let m = chart.m;
    let grid = logspace(3.0 * m, 1e6 * m, 10_000);
    let (imax, _) = grid
        .iter()
        .map(|&r| threshold_ratio(m, r))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let lo = grid[imax.saturating_sub(1)];
    let hi = grid[(imax + 1).min(grid.len() - 1)];
    let (r_max, ratio_max) = golden_section_max(|r| threshold_ratio(m, r), lo, hi, 1e-10 * m);
    ThresholdReport { p0: 1.0 + ratio_max, r_max, ratio_max }
}

/// (p+1)q − div X, the coefficient of |φ|^{p+1}/(p+1) in the divergence of the current.
pub fn potential_coefficient(chart: &SchwarzschildChart, spec: &MultiplierSpec, p: f64, r: f64) -> Result<f64> {
    check_exterior(chart, r)?;
    let mult = TaMultiplier::new(chart, *spec);
    Ok((p + 1.0) * mult.q(r) - mult.div_x(r))
}

/// The Blue–Soffer variant (p−1)t₁/2 · (1 − 2Ma/(r²t₁)), ignoring the δ, δ₁ parts.
pub fn blue_soffer_coefficient(chart: &SchwarzschildChart, spec: &MultiplierSpec, p: f64, r: f64) -> Result<f64> {
    check_exterior(chart, r)?;
    let mult = TaMultiplier::new(chart, *spec);
    let t1 = mult.t1(r);
    Ok(0.5 * (p - 1.0) * t1 * (1.0 - 2.0 * chart.m * mult.a(r) / (r * r * t1)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFormReport {
    pub r: f64,
    /// Largest c with Q − c·W[·,0] positive semidefinite (−∞ if none).
    pub c: f64,
    /// Q in the jet basis (∂_ṽψ, ∂_rψ, |∇̸ψ|, ψ), row-major.
    pub q_matrix: [[f64; 4]; 4],
    /// Diagonal of W[·,0] in the same basis.
    pub w_diag: [f64; 4],
    pub q_min_eigenvalue: f64,
}

/// Largest c with Q − c·diag(w) ⪰ 0, restricting to the range of the diagonal weight.
fn largest_admissible_c(q: &Matrix4<f64>, w: &[f64; 4]) -> f64 {
    let scale = q.abs().max().max(1e-300);
    let live: Vec<usize> = (0..4).filter(|&i| w[i] > 0.0).collect();
    let dead: Vec<usize> = (0..4).filter(|&i| w[i] <= 0.0).collect();
    // on the null space of W the form must already be PSD and decoupled
    for &i in &dead {
        if q[(i, i)] < -1e-12 * scale {
            return f64::NEG_INFINITY;
        }
        for &j in &live {
            if q[(i, j)].abs() > 1e-12 * scale && q[(i, i)] <= 1e-12 * scale {
                return f64::NEG_INFINITY;
            }
        }
    }
    let n = live.len();
    let mut s = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (a, &i) in live.iter().enumerate() {
        for (b, &j) in live.iter().enumerate() {
            s[(a, b)] = q[(i, j)] / (w[i] * w[j]).sqrt();
        }
    }
    let s = 0.5 * (&s + s.transpose());
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Pointwise comparison of Q[ψ, X, q, m] with W[ψ, 0] at r ≥ 3M.
pub fn q_form_report(chart: &SchwarzschildChart, spec: &MultiplierSpec, r: f64) -> Result<QFormReport> {
    let m = chart.m;
    if !(r >= 3.0 * m) {
        return Err(domain(format!("q_form_report needs r >= 3M (m is unspecified below), got {r}")));
    }
    let mult = TaMultiplier::new(chart, *spec);
    // Q in the basis (ψ_u, ψ_v, |∇̸ψ|, ψ)
    let quv = q_form_matrix(chart, &mult, 0.0, r);
    let omu = chart.one_minus_mu(r);
    let (_, dl) = chart.lambda_unchecked(r);
    // (ψ_ṽ, ψ_r) ↦ (ψ_u, ψ_v)
    let mut t = Matrix4::<f64>::zeros();
    t[(0, 0)] = omu * dl;
    t[(0, 1)] = -omu;
    t[(1, 0)] = 2.0 - omu * dl;
    t[(1, 1)] = omu;
    t[(2, 2)] = 1.0;
    t[(3, 3)] = 1.0;
    let q = t.transpose() * quv * t;
    let q = 0.5 * (q + q.transpose());
    let w = (1.0 - 3.0 * m / r).powi(2);
    let w_diag = [w / (r * r), 1.0 / (r * r), w / r, 1.0 / r.powi(4)];
    let q_min = SymmetricEigen::new(q).eigenvalues.min();
    let c = largest_admissible_c(&q, &w_diag);
    let mut q_matrix = [[0.0; 4]; 4];
    for (i, row) in q_matrix.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = q[(i, j)];
        }
    }
    Ok(QFormReport { r, c, q_matrix, w_diag, q_min_eigenvalue: q_min })
}

/// Worst disagreement, relative to the largest magnitude seen, between the closed forms
/// t₁ = (1−μ)r⁻²∂_r(r²a), div X and the potential coefficient and their definition-based
/// assembly at `n` random radii in [2.05M, 50M].
pub fn verify_ta_closed_forms(chart: &SchwarzschildChart, spec: &MultiplierSpec, p: f64, n: usize) -> Result<f64> {
    spec.validate()?;
    let m = chart.m;
    let mult = TaMultiplier::new(chart, *spec);
    let mut err = [0.0f64; 3];
    let mut scale = [0.0f64; 3];
    for j in random_jets(n, 0x2545_F491_4F6C_DD1D, 2.05 * m, 50.0 * m) {
        let r = j.r;
        let d = HyperDual::var1(r);
        let t1_def = chart.one_minus_mu(r) / (r * r) * (d * d * mult.a(d)).d1;
        let div_def = div_x_definition(chart, &mult, j.u, r);
        let pc_def = (p + 1.0) * mult.q(r) - div_def;
        let pairs = [(mult.t1(r), t1_def), (mult.div_x(r), div_def), (potential_coefficient(chart, spec, p, r)?, pc_def)];
        for (k, (a, b)) in pairs.into_iter().enumerate() {
            err[k] = err[k].max((a - b).abs());
            scale[k] = scale[k].max(b.abs());
        }
    }
    Ok((0..3).map(|k| if scale[k] > 0.0 { err[k] / scale[k] } else { err[k] }).fold(0.0, f64::max))
}

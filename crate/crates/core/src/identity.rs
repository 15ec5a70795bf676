//! Definition-based assembly of the current P[ψ, X, q, m, k] and the bulk term
//! Q[ψ, X, q, m] in the double-null chart, and finite-difference checks of the
//! divergence identity built on top of it.
//!
//! Spherically symmetric multipliers are supplied as functions of (u, r); the
//! radius is promoted to a hyper-dual number in (u, v) so every derivative the
//! definitions need is exact.

use crate::ad::{HyperDual, Real};
use crate::error::{domain, numeric, Result};
use crate::geometry::SchwarzschildChart;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

/// Components of a spherically symmetric multiplier: X = Xᵘ∂_u + Xᵛ∂_v, q, and m = m_u du + m_v dv.
#[derive(Clone, Copy, Debug)]
pub struct Fields<T> {
    pub xu: T,
    pub xv: T,
    pub q: T,
    pub mu: T,
    pub mv: T,
}

/// Pointwise field data: position (u, r) and the jet (ψ, ∂_uψ, ∂_vψ, |∇̸ψ|).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointJet {
    pub u: f64,
    pub r: f64,
    pub psi: f64,
    pub psi_u: f64,
    pub psi_v: f64,
    pub ang: f64,
}

pub trait Multiplier {
    fn fields<T: Real>(&self, u: T, r: T) -> Fields<T>;

    /// Closed-form Q, if the multiplier family has one.
    fn closed_q(&self, _jet: &PointJet) -> Option<f64> {
        None
    }

    /// Closed-form (r²P_u, r²P_v), if the multiplier family has one.
    fn closed_r2_current(&self, _jet: &PointJet, _k: u8, _p: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Deterministic pseudo-random jets with r uniform in [r_lo, r_hi] and u ∈ [−2, 2].
pub fn random_jets(n: usize, seed: u64, r_lo: f64, r_hi: f64) -> Vec<PointJet> {
    let mut s = seed | 1;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| {
            let r = r_lo + (r_hi - r_lo) * next();
            let u = 4.0 * next() - 2.0;
            PointJet { u, r, psi: 2.0 * next() - 1.0, psi_u: 2.0 * next() - 1.0, psi_v: 2.0 * next() - 1.0, ang: next() }
        })
        .collect()
}

/// The Killing field ∂_t = ½(∂_u + ∂_v) with q = 0, m = 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct KillingT;

impl Multiplier for KillingT {
    fn fields<T: Real>(&self, _u: T, _r: T) -> Fields<T> {
        let z = T::cst(0.0);
        Fields { xu: T::cst(0.5), xv: T::cst(0.5), q: z, mu: z, mv: z }
    }
}

/// r as a hyper-dual number in (u, v): d1 = ∂_u, d2 = ∂_v, d12 = ∂_u∂_v.
pub fn radius_hd(chart: &SchwarzschildChart, r: f64) -> HyperDual {
    let f = chart.one_minus_mu(r);
    let rr = 2.0 * chart.m / (r * r) * f;
    HyperDual::new(r, -f, f, -rr)
}

struct Geometry {
    r: HyperDual,
    g: HyperDual,
    ginv: f64,
    omu: f64,
}

fn geometry_at(chart: &SchwarzschildChart, r: f64) -> Geometry {
    let rh = radius_hd(chart, r);
    let omu = HyperDual::cst(1.0) - rh.recip() * (2.0 * chart.m);
    let g = omu * -2.0;
    Geometry { r: rh, g, ginv: -0.5 / omu.re, omu: omu.re }
}

fn fields_at<M: Multiplier>(mult: &M, geo: &Geometry, u: f64) -> Fields<HyperDual> {
    mult.fields(HyperDual::var1(u), geo.r)
}

/// ∇^α m_α for a 1-form with components m_u, m_v (also □q when m = dq).
fn codifferential(geo: &Geometry, au: HyperDual, av: HyperDual) -> f64 {
    let r2 = geo.r * geo.r;
    let a = (r2 * av).d1 + (r2 * au).d2;
    -a / (2.0 * geo.omu * geo.r.re * geo.r.re)
}

/// div X from the components.
fn divergence(geo: &Geometry, f: &Fields<HyperDual>) -> f64 {
    let dens = geo.g * -0.5 * geo.r * geo.r;
    let a = (dens * f.xu).d1 + (dens * f.xv).d2;
    a / (geo.omu * geo.r.re * geo.r.re)
}

/// Definition-based Q = T π_X + q ∂ψ·∂ψ + ψ m·∂ψ + ½(∇·m − □q)ψ².
pub fn q_definition<M: Multiplier>(chart: &SchwarzschildChart, mult: &M, jet: &PointJet) -> f64 {
    let geo = geometry_at(chart, jet.r);
    let f = fields_at(mult, &geo, jet.u);
    q_from_fields(&geo, &f, jet)
}

fn q_from_fields(geo: &Geometry, f: &Fields<HyperDual>, jet: &PointJet) -> f64 {
    let (pu, pv, psi) = (jet.psi_u, jet.psi_v, jet.psi);
    let ang2 = jet.ang * jet.ang;
    let g = geo.g.re;
    let gi = geo.ginv;
    let dd = 2.0 * gi * pu * pv + ang2;
    // deformation tensor, lower indices
    let x_g = f.xu.re * geo.g.d1 + f.xv.re * geo.g.d2;
    let pi_uu = g * f.xv.d1;
    let pi_vv = g * f.xu.d2;
    let pi_uv = 0.5 * (x_g + g * f.xu.d1 + g * f.xv.d2);
    let gi2 = gi * gi;
    let t_uv = pu * pv - 0.5 * g * dd;
    let tpi = pu * pu * gi2 * pi_vv + pv * pv * gi2 * pi_uu + 2.0 * t_uv * gi2 * pi_uv;
    let r = geo.r.re;
    let xr = f.xu.re * geo.r.d1 + f.xv.re * geo.r.d2;
    let ang_part = xr / r * (ang2 - dd);
    let q = f.q.re;
    let m_dpsi = gi * (f.mu.re * pv + f.mv.re * pu);
    let qu = HyperDual::new(f.q.d1, 0.0, f.q.d12, 0.0);
    let qv = HyperDual::new(f.q.d2, f.q.d12, 0.0, 0.0);
    let box_q = codifferential(geo, qu, qv);
    let div_m = codifferential(geo, f.mu, f.mv);
    tpi + ang_part + q * dd + psi * m_dpsi + 0.5 * (div_m - box_q) * psi * psi
}

/// Definition-based lower components (P_u, P_v) and the coefficient of ∂_θψ in P_θ.
///
/// P_θ = ψ_θ (Xψ + qψ), so the third entry is Xψ + qψ.
pub fn current_definition<M: Multiplier>(
    chart: &SchwarzschildChart,
    mult: &M,
    jet: &PointJet,
    k: u8,
    p: f64,
) -> (f64, f64, f64) {
    let geo = geometry_at(chart, jet.r);
    let f = fields_at(mult, &geo, jet.u);
    let (pu, pv, psi) = (jet.psi_u, jet.psi_v, jet.psi);
    let g = geo.g.re;
    let dd = 2.0 * geo.ginv * pu * pv + jet.ang * jet.ang;
    let pot = 2.0 * k as f64 / (p + 1.0) * psi.abs().powf(p + 1.0);
    let t_uv = pu * pv - 0.5 * g * (dd + pot);
    let (xu, xv, q) = (f.xu.re, f.xv.re, f.q.re);
    let p_u = pu * pu * xu + t_uv * xv + q * psi * pu - 0.5 * f.q.d1 * psi * psi + 0.5 * f.mu.re * psi * psi;
    let p_v = t_uv * xu + pv * pv * xv + q * psi * pv - 0.5 * f.q.d2 * psi * psi + 0.5 * f.mv.re * psi * psi;
    (p_u, p_v, xu * pu + xv * pv + q * psi)
}

/// div X for a multiplier at (u, r), from its components.
pub fn div_x_definition<M: Multiplier>(chart: &SchwarzschildChart, mult: &M, u: f64, r: f64) -> f64 {
    let geo = geometry_at(chart, r);
    let f = fields_at(mult, &geo, u);
    divergence(&geo, &f)
}

/// Q as a symmetric matrix in the basis (∂_uψ, ∂_vψ, |∇̸ψ|, ψ), by polarization.
pub fn q_form_matrix<M: Multiplier>(chart: &SchwarzschildChart, mult: &M, u: f64, r: f64) -> Matrix4<f64> {
    let geo = geometry_at(chart, r);
    let f = fields_at(mult, &geo, u);
    let eval = |x: [f64; 4]| {
        let jet = PointJet { u, r, psi_u: x[0], psi_v: x[1], ang: x[2], psi: x[3] };
        q_from_fields(&geo, &f, &jet)
    };
    let mut a = Matrix4::zeros();
    let unit = |i: usize| {
        let mut e = [0.0; 4];
        e[i] = 1.0;
        e
    };
    for i in 0..4 {
        a[(i, i)] = eval(unit(i));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if i == 2 || j == 2 {
                // |∇̸ψ| only enters squared, so it decouples
                continue;
            }
            let mut e = unit(i);
            e[j] = 1.0;
            let v = 0.5 * (eval(e) - a[(i, i)] - a[(j, j)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Analytic test field ψ(u, v, θ) = A·G(u)·H(v)·(1 + κ cos θ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestField {
    /// Gaussians in u and v.
    Gaussian { amp: f64, uc: f64, vc: f64, su: f64, sv: f64, kappa: f64 },
    /// A quadratic polynomial in u times a Gaussian bump in v.
    PolyBump { amp: f64, c0: f64, c1: f64, c2: f64, vc: f64, sv: f64, kappa: f64 },
}

impl TestField {
    pub fn gaussian_default() -> Self {
        TestField::Gaussian { amp: 0.8, uc: 1.0, vc: 4.0, su: 2.5, sv: 3.0, kappa: 0.3 }
    }

    fn center(&self) -> (f64, f64, f64, f64) {
        match *self {
            TestField::Gaussian { uc, vc, su, sv, .. } => (uc, vc, su, sv),
            TestField::PolyBump { vc, sv, .. } => (0.0, vc, 2.0, sv),
        }
    }

    /// (value, d/dx, d²/dx²) of the u factor.
    fn gu(&self, u: f64) -> (f64, f64) {
        match *self {
            TestField::Gaussian { uc, su, .. } => gauss(u, uc, su),
            TestField::PolyBump { c0, c1, c2, .. } => (c0 + c1 * u + c2 * u * u, c1 + 2.0 * c2 * u),
        }
    }

    fn hv(&self, v: f64) -> (f64, f64) {
        match *self {
            TestField::Gaussian { vc, sv, .. } => gauss(v, vc, sv),
            TestField::PolyBump { vc, sv, .. } => gauss(v, vc, sv),
        }
    }

    fn amp_kappa(&self) -> (f64, f64) {
        match *self {
            TestField::Gaussian { amp, kappa, .. } => (amp, kappa),
            TestField::PolyBump { amp, kappa, .. } => (amp, kappa),
        }
    }

    /// Returns (ψ, ψ_u, ψ_v, ψ_uv, ψ_θ, Δ_S ψ).
    pub fn eval(&self, u: f64, v: f64, theta: f64) -> [f64; 6] {
        let (a, kappa) = self.amp_kappa();
        let (g, gp) = self.gu(u);
        let (h, hp) = self.hv(v);
        let (s, c) = theta.sin_cos();
        let y = 1.0 + kappa * c;
        [a * g * h * y, a * gp * h * y, a * g * hp * y, a * gp * hp * y, -a * g * h * kappa * s, -2.0 * a * g * h * kappa * c]
    }
}

fn gauss(x: f64, c: f64, s: f64) -> (f64, f64) {
    let z = (x - c) / s;
    let e = (-z * z).exp();
    (e, -2.0 * z / s * e)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub h: f64,
    pub points: usize,
    pub max_abs_rhs: f64,
    /// max |LHS − RHS| / max |RHS| at spacing h.
    pub rel_error: f64,
    /// Same at h/2.
    pub rel_error_half: f64,
    /// log₂ of the error ratio between `order_h` and `order_h`/2.
    pub order: f64,
    /// Smallest doubling of h at which the truncation error clears the roundoff floor.
    pub order_h: f64,
}

/// Halton point set in the unit cube.
fn halton(i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = i;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

struct Sample {
    u: f64,
    v: f64,
    theta: f64,
}

fn sample_points(chart: &SchwarzschildChart, field: &TestField, window: (f64, f64), pad: f64, n: usize) -> Vec<Sample> {
    let (uc, vc, su, sv) = field.center();
    let rs_lo = chart.rstar(window.0) + pad;
    let rs_hi = chart.rstar(window.1) - pad;
    let mut out = Vec::with_capacity(n);
    let mut i = 1;
    while out.len() < n && i < 200 * n {
        let u = uc + su * (4.0 * halton(i, 2) - 2.0);
        let v = vc + sv * (4.0 * halton(i, 3) - 2.0);
        let theta = 0.3 + 2.5 * halton(i, 5);
        i += 1;
        let rs = v - u;
        if rs > rs_lo && rs < rs_hi {
            out.push(Sample { u, v, theta });
        }
    }
    out
}

fn jet_at(chart: &SchwarzschildChart, field: &TestField, u: f64, v: f64, theta: f64) -> Result<(PointJet, [f64; 6])> {
    let r = chart.radius_from_tortoise(v - u)?;
    let d = field.eval(u, v, theta);
    let jet = PointJet { u, r, psi: d[0], psi_u: d[1], psi_v: d[2], ang: d[4] / r };
    Ok((jet, d))
}

/// r²·(P_u, P_v) and P_θ at a point, closed forms used when the multiplier provides them.
fn current_at<M: Multiplier>(
    chart: &SchwarzschildChart,
    mult: &M,
    field: &TestField,
    k: u8,
    p: f64,
    u: f64,
    v: f64,
    theta: f64,
) -> Result<(f64, f64, f64)> {
    let (jet, d) = jet_at(chart, field, u, v, theta)?;
    let (pu, pv, xq) = current_definition(chart, mult, &jet, k, p);
    let r2 = jet.r * jet.r;
    let (a, b) = mult.closed_r2_current(&jet, k, p).unwrap_or((r2 * pu, r2 * pv));
    Ok((a, b, d[4] * xq))
}

fn rhs_at<M: Multiplier>(chart: &SchwarzschildChart, mult: &M, field: &TestField, k: u8, p: f64, s: &Sample) -> Result<f64> {
    let (jet, d) = jet_at(chart, field, s.u, s.v, s.theta)?;
    let r = jet.r;
    let geo = geometry_at(chart, r);
    let f = fields_at(mult, &geo, s.u);
    let box_psi = -d[3] / geo.omu + (d[2] - d[1]) / r + d[5] / (r * r);
    let xpsi = f.xu.re * d[1] + f.xv.re * d[2];
    let q = mult.closed_q(&jet).unwrap_or_else(|| q_from_fields(&geo, &f, &jet));
    let mut out = box_psi * (xpsi + f.q.re * d[0]) + q;
    if k != 0 {
        let psi = d[0];
        let div_x = divergence(&geo, &f);
        let kk = k as f64 / (p + 1.0);
        out -= kk * (div_x * psi.abs().powf(p + 1.0) + (p + 1.0) * psi.abs().powf(p - 1.0) * psi * xpsi);
    }
    Ok(out)
}

fn d4(fm2: f64, fm1: f64, fp1: f64, fp2: f64, h: f64) -> f64 {
    (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h)
}

fn lhs_at<M: Multiplier>(chart: &SchwarzschildChart, mult: &M, field: &TestField, k: u8, p: f64, s: &Sample, h: f64) -> Result<f64> {
    let cur = |u: f64, v: f64, th: f64| current_at(chart, mult, field, k, p, u, v, th);
    let mut pv = [0.0; 4];
    let mut pu = [0.0; 4];
    let mut pt = [0.0; 4];
    for (i, o) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
        pv[i] = cur(s.u + o * h, s.v, s.theta)?.1;
        pu[i] = cur(s.u, s.v + o * h, s.theta)?.0;
        let th = s.theta + o * h;
        pt[i] = th.sin() * cur(s.u, s.v, th)?.2;
    }
    let r = chart.radius_from_tortoise(s.v - s.u)?;
    let omu = chart.one_minus_mu(r);
    let uv = d4(pv[0], pv[1], pv[2], pv[3], h) + d4(pu[0], pu[1], pu[2], pu[3], h);
    let ang = d4(pt[0], pt[1], pt[2], pt[3], h) / (r * r * s.theta.sin());
    Ok(-uv / (2.0 * omu * r * r) + ang)
}

fn fd_error<M: Multiplier>(
    chart: &SchwarzschildChart,
    mult: &M,
    field: &TestField,
    k: u8,
    p: f64,
    pts: &[Sample],
    h: f64,
) -> Result<(f64, f64)> {
    let mut max_err: f64 = 0.0;
    let mut max_rhs: f64 = 0.0;
    for s in pts {
        let l = lhs_at(chart, mult, field, k, p, s, h)?;
        let r = rhs_at(chart, mult, field, k, p, s)?;
        if !(l.is_finite() && r.is_finite()) {
            return Err(numeric(format!("non-finite divergence at u = {}, v = {}", s.u, s.v)));
        }
        max_err = max_err.max((l - r).abs());
        max_rhs = max_rhs.max(r.abs());
    }
    Ok((max_err, max_rhs))
}

/// Compares the finite-difference divergence of P with the closed-form right-hand side.
#[allow(clippy::too_many_arguments)]
pub fn verify_divergence_identity<M: Multiplier>(
    chart: &SchwarzschildChart,
    field: &TestField,
    mult: &M,
    k: u8,
    p: f64,
    h: f64,
    window: (f64, f64),
    npoints: usize,
) -> Result<DivergenceReport> {
    let m = chart.m;
    if window.0 < 2.05 * m - 1e-12 || window.1 > 50.0 * m + 1e-12 || window.0 >= window.1 {
        return Err(domain(format!("evaluation window {window:?} must lie in [2.05M, 50M]")));
    }
    let pad = 4.0 * h;
    let pts = sample_points(chart, field, window, pad, npoints);
    if pts.is_empty() {
        return Err(domain(format!("no sample point with a {pad}-padded stencil fits the window")));
    }
    let (e1, rhs) = fd_error(chart, mult, field, k, p, &pts, h)?;
    let (e2, _) = fd_error(chart, mult, field, k, p, &pts, 0.5 * h)?;
    // the stencil is fourth order, so at small h both errors sit on roundoff and their
    // ratio says nothing; climb until the coarse error is well above the floor
    let (mut order_h, mut ec, mut ef) = (h, e1, e2);
    while ec / rhs < 1e-8 && order_h < 0.2 {
        order_h *= 2.0;
        ef = ec;
        ec = fd_error(chart, mult, field, k, p, &pts, order_h)?.0;
    }
    Ok(DivergenceReport {
        h,
        points: pts.len(),
        max_abs_rhs: rhs,
        rel_error: e1 / rhs,
        rel_error_half: e2 / rhs,
        order: (ec / ef).log2(),
        order_h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedEquationReport {
    pub h: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub rel_error_half: f64,
    pub order: f64,
}

/// Spherically symmetric probe φ(t, r) used by [`verify_reduced_equation`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RadialProbe {
    Constant,
    InverseR,
    Gaussian,
}

impl RadialProbe {
    fn phi(&self, t: f64, r: f64) -> f64 {
        match self {
            RadialProbe::Constant => 1.0,
            RadialProbe::InverseR => 1.0 / r,
            RadialProbe::Gaussian => (-((t - 5.0) / 4.0).powi(2) - ((r - 8.0) / 3.0).powi(2)).exp(),
        }
    }
}

fn reduced_residuals(chart: &SchwarzschildChart, probe: RadialProbe, h: f64) -> Result<(f64, f64)> {
    let m = chart.m;
    let mut max_err: f64 = 0.0;
    let mut max_ref: f64 = 0.0;
    for i in 0..40 {
        let t = 2.0 + 6.0 * halton(i + 1, 2);
        let r = 4.0 * m + 10.0 * m * halton(i + 1, 3);
        let omu = chart.one_minus_mu(r);
        // covariant side in (t, r): −(1−μ)⁻¹φ_tt + r⁻²∂_r(r²(1−μ)∂_rφ)
        let ph = |t: f64, r: f64| probe.phi(t, r);
        let phi_tt = (ph(t + h, r) - 2.0 * ph(t, r) + ph(t - h, r)) / (h * h);
        let flux = |rr: f64| rr * rr * chart.one_minus_mu(rr) * (ph(t, rr + 0.5 * h) - ph(t, rr - 0.5 * h)) / h;
        let lap = (flux(r + 0.5 * h) - flux(r - 0.5 * h)) / (h * r * r);
        let cov = -phi_tt / omu + lap;
        // reduced side in (u, v) acting on ψ = rφ
        let rs = chart.rstar(r);
        let (u, v) = (0.5 * (t - rs), 0.5 * (t + rs));
        let psi = |u: f64, v: f64| -> Result<f64> {
            let rr = chart.radius_from_tortoise(v - u)?;
            Ok(rr * probe.phi(u + v, rr))
        };
        let uv = (psi(u + h, v + h)? - psi(u + h, v - h)? - psi(u - h, v + h)? + psi(u - h, v - h)?) / (4.0 * h * h);
        let v0 = chart.rw_potential_unchecked(r, 0);
        let red = -(uv + v0 * psi(u, v)?) / (omu * r);
        max_err = max_err.max((cov - red).abs());
        max_ref = max_ref.max(cov.abs()).max(red.abs());
    }
    Ok((max_err, max_ref))
}

/// Checks □_gφ = −((1−μ)r)⁻¹(∂_u∂_v + V₀)(rφ) for a spherically symmetric probe.
pub fn verify_reduced_equation(chart: &SchwarzschildChart, probe: RadialProbe, h: f64) -> Result<ReducedEquationReport> {
    let (e1, s1) = reduced_residuals(chart, probe, h)?;
    let (e2, _) = reduced_residuals(chart, probe, 0.5 * h)?;
    let scale = if s1 > 0.0 { s1 } else { 1.0 };
    Ok(ReducedEquationReport { h, abs_error: e1, rel_error: e1 / scale, rel_error_half: e2 / scale, order: (e1 / e2).log2() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morawetz::{MultiplierSpec, TaMultiplier};
    use approx::assert_relative_eq;

    fn chart() -> SchwarzschildChart {
        SchwarzschildChart::new(1.0).unwrap()
    }

    #[test]
    fn radius_hd_matches_finite_differences() {
        let c = chart();
        let (u, v) = (0.7, 3.1);
        let r = c.radius_from_tortoise(v - u).unwrap();
        let hd = radius_hd(&c, r);
        let rr = |u: f64, v: f64| c.radius_from_tortoise(v - u).unwrap();
        let h = 1e-4;
        assert_relative_eq!(hd.d1, (rr(u + h, v) - rr(u - h, v)) / (2.0 * h), max_relative = 1e-7);
        assert_relative_eq!(hd.d2, (rr(u, v + h) - rr(u, v - h)) / (2.0 * h), max_relative = 1e-7);
        let mixed = (rr(u + h, v + h) - rr(u + h, v - h) - rr(u - h, v + h) + rr(u - h, v - h)) / (4.0 * h * h);
        assert_relative_eq!(hd.d12, mixed, max_relative = 1e-5);
    }

    #[test]
    fn killing_field_has_no_bulk() {
        let c = chart();
        for r in [2.1, 3.0, 7.5, 40.0] {
            let jet = PointJet { u: 0.3, r, psi: 0.4, psi_u: -1.1, psi_v: 0.6, ang: 0.2 };
            let q = q_definition(&c, &KillingT, &jet);
            assert!(q.abs() < 1e-14, "Q = {q}");
            assert!(div_x_definition(&c, &KillingT, 0.0, r).abs() < 1e-15);
        }
    }

    #[test]
    fn killing_identity_holds_to_discretization_error() {
        let c = chart();
        let field = TestField::gaussian_default();
        let rep = verify_divergence_identity(&c, &field, &KillingT, 0, 3.0, 1e-2, (2.05, 50.0), 50).unwrap();
        assert!(rep.rel_error < 1e-7, "{rep:?}");
    }

    #[test]
    fn divergence_of_ta_field_matches_closed_form() {
        let c = chart();
        let mult = TaMultiplier::new(&c, MultiplierSpec::default());
        for r in [2.05, 2.3, 2.7, 3.0, 4.0, 12.0, 49.0] {
            assert_relative_eq!(div_x_definition(&c, &mult, 0.0, r), mult.div_x(r), max_relative = 1e-11, epsilon = 1e-14);
        }
    }

    #[test]
    fn polarization_reproduces_q() {
        let c = chart();
        let mult = TaMultiplier::new(&c, MultiplierSpec::default());
        let a = q_form_matrix(&c, &mult, 0.0, 5.0);
        let x = nalgebra::Vector4::new(0.3, -0.7, 0.25, 1.4);
        let jet = PointJet { u: 0.0, r: 5.0, psi_u: x[0], psi_v: x[1], ang: x[2], psi: x[3] };
        assert_relative_eq!((x.transpose() * a * x)[0], q_definition(&c, &mult, &jet), max_relative = 1e-12);
    }

    #[test]
    fn reduced_equation_probes() {
        let c = chart();
        // both sides vanish for φ = 1; the reduced side only up to O(h²)
        let rep = verify_reduced_equation(&c, RadialProbe::Constant, 0.05).unwrap();
        assert!(rep.abs_error < 1e-4, "{rep:?}");
        assert!((rep.order - 2.0).abs() < 0.2, "{rep:?}");
        let rep = verify_reduced_equation(&c, RadialProbe::InverseR, 0.05).unwrap();
        assert!(rep.rel_error < 1e-3, "{rep:?}");
        let rep = verify_reduced_equation(&c, RadialProbe::Gaussian, 0.1).unwrap();
        assert!(rep.order >= 1.8, "{rep:?}");
        assert!(rep.rel_error < 1e-2);
    }

    #[test]
    fn inverse_r_probe_matches_analytic_residual() {
        let c = chart();
        for r in [3.0, 6.0, 11.0] {
            let v0 = c.rw_potential_unchecked(r, 0);
            let red = -v0 / (c.one_minus_mu(r) * r);
            assert_relative_eq!(red, -2.0 / r.powi(4), max_relative = 1e-14);
        }
    }

    #[test]
    fn window_is_checked() {
        let c = chart();
        let f = TestField::gaussian_default();
        assert!(verify_divergence_identity(&c, &f, &KillingT, 0, 3.0, 1e-3, (2.0, 50.0), 10).is_err());
        assert!(verify_divergence_identity(&c, &f, &KillingT, 0, 3.0, 1e-3, (3.0, 60.0), 10).is_err());
    }
}

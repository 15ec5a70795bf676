//! Schwarzschild exterior charts, metric coefficients and the horizon-regular
//! coordinate ṽ = 2v − λ(r).

use crate::ad::{cubic_step, Real};
use crate::error::{domain, numeric, Result};
use crate::numerics::{adaptive_simpson, hermite};
use serde::{Deserialize, Serialize};

/// Relative distance from the horizon below which nothing is evaluated.
pub const HORIZON_MARGIN: f64 = 1e-6;

const LAMBDA_TABLE_NODES: usize = 1025;

/// Parameters of the concrete λ profile.
///
/// On `[2M, 5M/2]` the derivative is `λ' = 1/((1−μ) + s)` where `s` blends from
/// `amplitude` at the horizon to 0 at `5M/2` with a cubic smoothstep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaProfile {
    /// Inner end of the transition interval, in units of M.
    pub r_inner: f64,
    /// Outer end of the transition interval, in units of M; λ = r* beyond it.
    pub r_outer: f64,
    /// Blend amplitude s(2M), so λ'(2M) = 1/amplitude. The default equals 1 − μ(5M/2).
    pub amplitude: f64,
}

impl Default for LambdaProfile {
    fn default() -> Self {
        Self { r_inner: 2.0, r_outer: 2.5, amplitude: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartKind {
    /// (t, r*)
    Static,
    /// (u, v)
    Null,
    /// (ṽ, r)
    Regular,
}

/// A point tagged with the chart its two coordinates belong to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimePoint {
    pub chart: ChartKind,
    pub a: f64,
    pub b: f64,
}

impl SpacetimePoint {
    pub fn static_point(t: f64, rstar: f64) -> Self {
        Self { chart: ChartKind::Static, a: t, b: rstar }
    }
    pub fn null_point(u: f64, v: f64) -> Self {
        Self { chart: ChartKind::Null, a: u, b: v }
    }
    pub fn regular_point(vt: f64, r: f64) -> Self {
        Self { chart: ChartKind::Regular, a: vt, b: r }
    }
}

#[derive(Clone, Debug)]
pub struct SchwarzschildChart {
    pub m: f64,
    /// Excision radius (≥ 2M(1 + margin)).
    pub r0: f64,
    /// Far-region split radius R.
    pub big_r: f64,
    pub profile: LambdaProfile,
    table_r: Vec<f64>,
    table_lambda: Vec<f64>,
    table_dlambda: Vec<f64>,
}

impl SchwarzschildChart {
    /// Chart with default λ profile, r0 at the horizon margin and R = 10M.
    pub fn new(m: f64) -> Result<Self> {
        Self::with_params(m, 2.0 * m * (1.0 + HORIZON_MARGIN), 10.0 * m, LambdaProfile::default())
    }

    pub fn with_params(m: f64, r0: f64, big_r: f64, profile: LambdaProfile) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(domain(format!("mass must be positive and finite, got {m}")));
        }
        if r0 < 2.0 * m * (1.0 + HORIZON_MARGIN) * (1.0 - 1e-15) {
            return Err(domain(format!("excision radius {r0} lies inside the horizon margin")));
        }
        if big_r <= 5.0 * m {
            return Err(domain(format!("split radius R = {big_r} must exceed 5M")));
        }
        if !(profile.r_inner == 2.0 && profile.r_outer > 2.0 && profile.amplitude > 0.0) {
            return Err(domain("lambda profile must start at 2M with positive amplitude"));
        }
        let mut chart = Self {
            m,
            r0,
            big_r,
            profile,
            table_r: Vec::new(),
            table_lambda: Vec::new(),
            table_dlambda: Vec::new(),
        };
        chart.build_lambda_table();
        Ok(chart)
    }

    fn build_lambda_table(&mut self) {
        let m = self.m;
        let (lo, hi) = (self.profile.r_inner * m, self.profile.r_outer * m);
        let n = LAMBDA_TABLE_NODES;
        let rs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let mut lam = vec![0.0; n];
        lam[n - 1] = self.rstar(hi);
        let dl = |r: f64| self.dlambda_exact(r);
        for i in (0..n - 1).rev() {
            lam[i] = lam[i + 1] - adaptive_simpson(&dl, rs[i], rs[i + 1], 1e-12 * m / n as f64);
        }
        self.table_dlambda = rs.iter().map(|&r| self.dlambda_exact(r)).collect();
        self.table_r = rs;
        self.table_lambda = lam;
    }

    /// μ = 2M/r.
    #[inline]
    pub fn mu(&self, r: f64) -> f64 {
        2.0 * self.m / r
    }

    /// 1 − μ computed as (r − 2M)/r.
    #[inline]
    pub fn one_minus_mu(&self, r: f64) -> f64 {
        (r - 2.0 * self.m) / r
    }

    /// Unchecked tortoise coordinate r + 2M ln((r − 2M)/M) − 3M.
    #[inline]
    pub fn rstar(&self, r: f64) -> f64 {
        let m = self.m;
        r + 2.0 * m * ((r - 2.0 * m) / m).ln() - 3.0 * m
    }

    /// Tortoise coordinate with the horizon domain check.
    pub fn tortoise(&self, r: f64) -> Result<f64> {
        if !(r > 2.0 * self.m) {
            return Err(domain(format!("tortoise requires r > 2M, got r = {r}")));
        }
        Ok(self.rstar(r))
    }

    /// Returns x = r − 2M for a given r*, which keeps full relative precision near the horizon.
    pub fn horizon_gap(&self, rstar: f64) -> Result<f64> {
        let m = self.m;
        if !rstar.is_finite() {
            return Err(numeric(format!("non-finite tortoise coordinate {rstar}")));
        }
        // r − 2M = M e^y with g(y) = M e^y + 2M y − M − r* convex and increasing;
        // both seeds satisfy g(y0) > 0 so Newton decreases monotonically to the root.
        let mut y = if rstar > 2.0 * m { (rstar / m).ln() } else { (rstar + m) / (2.0 * m) };
        for _ in 0..200 {
            let e = y.exp();
            let g = m * e + 2.0 * m * y - m - rstar;
            let dy = g / (m * e + 2.0 * m);
            y -= dy;
            if dy.abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                return Ok(m * y.exp());
            }
        }
        Err(numeric(format!("radius inversion did not converge for r* = {rstar}")))
    }

    /// Inverse tortoise map.
    pub fn radius_from_tortoise(&self, rstar: f64) -> Result<f64> {
        Ok(2.0 * self.m + self.horizon_gap(rstar)?)
    }

    fn blend(&self, r: f64) -> f64 {
        let m = self.m;
        let (lo, hi) = (self.profile.r_inner * m, self.profile.r_outer * m);
        let xi = ((hi - r) / (hi - lo)).clamp(0.0, 1.0);
        self.profile.amplitude * xi * xi * (3.0 - 2.0 * xi)
    }

    fn dlambda_exact(&self, r: f64) -> f64 {
        1.0 / (self.one_minus_mu(r) + self.blend(r))
    }

    /// λ'(r) for any scalar type, so derivatives of λ' can be propagated.
    pub fn dlambda_generic<T: Real>(&self, r: T) -> T {
        let m = self.m;
        let (lo, hi) = (self.profile.r_inner * m, self.profile.r_outer * m);
        let s = cubic_step((T::cst(hi) - r) / (hi - lo)) * self.profile.amplitude;
        (T::cst(1.0) - r.recip() * (2.0 * m) + s).recip()
    }

    /// λ(r) and λ'(r) for r ≥ 2M.
    pub fn lambda_eval(&self, r: f64) -> Result<(f64, f64)> {
        if !(r >= 2.0 * self.m) {
            return Err(domain(format!("lambda requires r >= 2M, got r = {r}")));
        }
        Ok(self.lambda_unchecked(r))
    }

    /// λ(r), λ'(r) without the domain check.
    pub fn lambda_unchecked(&self, r: f64) -> (f64, f64) {
        let hi = self.profile.r_outer * self.m;
        if r >= hi {
            return (self.rstar(r), 1.0 / self.one_minus_mu(r));
        }
        let lo = self.table_r[0];
        let n = self.table_r.len();
        let pos = (r - lo) / (hi - lo) * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        let lam = hermite(
            self.table_r[i],
            self.table_r[i + 1],
            self.table_lambda[i],
            self.table_lambda[i + 1],
            self.table_dlambda[i],
            self.table_dlambda[i + 1],
            r,
        );
        (lam, self.dlambda_exact(r))
    }

    /// Coordinate change between the three charts.
    pub fn chart_convert(&self, p: SpacetimePoint, target: ChartKind) -> Result<SpacetimePoint> {
        let (t, rstar) = match p.chart {
            ChartKind::Static => (p.a, p.b),
            ChartKind::Null => (p.a + p.b, p.b - p.a),
            ChartKind::Regular => {
                let r = p.b;
                if !(r > 2.0 * self.m) {
                    return Err(domain(format!("point at r = {r} is not in the exterior")));
                }
                let rs = self.rstar(r);
                let (lam, _) = self.lambda_unchecked(r);
                (p.a + lam - rs, rs)
            }
        };
        Ok(match target {
            ChartKind::Static => SpacetimePoint::static_point(t, rstar),
            ChartKind::Null => SpacetimePoint::null_point(0.5 * (t - rstar), 0.5 * (t + rstar)),
            ChartKind::Regular => {
                let r = self.radius_from_tortoise(rstar)?;
                if r <= 2.0 * self.m {
                    return Err(domain(format!("r* = {rstar} maps onto the horizon in double precision")));
                }
                let (lam, _) = self.lambda_unchecked(r);
                SpacetimePoint::regular_point(t + rstar - lam, r)
            }
        })
    }

    /// Regge–Wheeler potential of the ℓ-th harmonic of ψ = rφ.
    pub fn rw_potential(&self, r: f64, ell: u32) -> Result<f64> {
        if !(r >= 2.0 * self.m) {
            return Err(domain(format!("potential requires r >= 2M, got r = {r}")));
        }
        Ok(self.rw_potential_unchecked(r, ell))
    }

    #[inline]
    pub fn rw_potential_unchecked(&self, r: f64, ell: u32) -> f64 {
        let l = ell as f64;
        self.one_minus_mu(r) * (l * (l + 1.0) / (r * r) + 2.0 * self.m / (r * r * r))
    }

    /// Lower-triangular radial block (g_ṽṽ, g_ṽr, g_rr) of the metric in the (ṽ, r) chart.
    pub fn metric_regular(&self, r: f64) -> (f64, f64, f64) {
        let f = self.one_minus_mu(r);
        let (_, dl) = self.lambda_unchecked(r);
        (-f, 1.0 - f * dl, 2.0 * dl - f * dl * dl)
    }

    /// g⁻¹(dṽ, dṽ); negative exactly when the ṽ level sets are spacelike.
    pub fn dvt_norm(&self, r: f64) -> f64 {
        let f = self.one_minus_mu(r);
        let (_, dl) = self.lambda_unchecked(r);
        -dl * (2.0 - f * dl)
    }

    /// Volume density 2r²(1 − μ) of du dv dω.
    #[inline]
    pub fn null_volume_density(&self, r: f64) -> f64 {
        2.0 * r * r * self.one_minus_mu(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn chart() -> SchwarzschildChart {
        SchwarzschildChart::new(1.0).unwrap()
    }

    #[test]
    fn tortoise_examples() {
        let c = chart();
        assert_eq!(c.tortoise(3.0).unwrap(), 0.0);
        assert_relative_eq!(c.tortoise(4.0).unwrap(), 1.0 + 2.0 * 2f64.ln(), max_relative = 1e-15);
        assert!(c.tortoise(2.0 + 1e-8).unwrap() < -30.0);
        assert!(c.tortoise(2.0).is_err());
        assert!(c.tortoise(1.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let c = chart();
        assert_relative_eq!(c.radius_from_tortoise(0.0).unwrap(), 3.0, max_relative = 1e-15);
        // bisection oracle
        let (mut lo, mut hi) = (2.0 + 1e-9, 2000.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c.rstar(mid) < 1000.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = c.radius_from_tortoise(1000.0).unwrap();
        assert_relative_eq!(r, 0.5 * (lo + hi), max_relative = 1e-13);
        assert_relative_eq!(c.rstar(r), 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn round_trip_on_log_grid() {
        let c = chart();
        for r in crate::numerics::logspace(2.0001, 1e6, 10_000) {
            let back = c.radius_from_tortoise(c.rstar(r)).unwrap();
            assert!(((back - r) / r).abs() <= 1e-12, "r = {r}, back = {back}");
        }
    }

    #[test]
    fn lambda_examples() {
        let c = chart();
        let (l3, d3) = c.lambda_eval(3.0).unwrap();
        assert_eq!(l3, 0.0);
        assert_relative_eq!(d3, 3.0, max_relative = 1e-15);
        let (_, d2) = c.lambda_eval(2.0).unwrap();
        assert_relative_eq!(d2, 5.0, max_relative = 1e-14);
        assert!(c.lambda_eval(1.9).is_err());
    }

    #[test]
    fn lambda_constraints_scan() {
        let c = chart();
        let mut min_gap = f64::INFINITY;
        let mut prev = f64::NEG_INFINITY;
        let n = 20_000;
        for i in 0..=n {
            let r = 2.0 + 98.0 * i as f64 / n as f64;
            let (lam, dl) = c.lambda_eval(r).unwrap();
            assert!(lam > prev);
            prev = lam;
            if r > 2.0 {
                assert!(lam >= c.rstar(r) - 1e-12);
            }
            min_gap = min_gap.min(2.0 - c.one_minus_mu(r) * dl);
        }
        assert!(min_gap >= 1.0 - 1e-14, "min 2 - (1-mu) lambda' = {min_gap}");
    }

    #[test]
    fn lambda_table_matches_direct_quadrature() {
        let c = chart();
        for &r in &[2.0, 2.1234, 2.3, 2.4999] {
            let direct = c.rstar(2.5) - adaptive_simpson(&|x| c.dlambda_exact(x), r, 2.5, 1e-14);
            assert_relative_eq!(c.lambda_unchecked(r).0, direct, epsilon = 1e-11);
        }
    }

    #[test]
    fn chart_conversion_examples() {
        let c = chart();
        let p = c
            .chart_convert(SpacetimePoint::static_point(10.0, 4.0), ChartKind::Null)
            .unwrap();
        assert_eq!((p.a, p.b), (3.0, 7.0));
        let q = c
            .chart_convert(SpacetimePoint::static_point(7.5, c.rstar(6.0)), ChartKind::Regular)
            .unwrap();
        assert_relative_eq!(q.a, 7.5, max_relative = 1e-15);
        assert_relative_eq!(q.b, 6.0, max_relative = 1e-13);
        assert!(c
            .chart_convert(SpacetimePoint::regular_point(0.0, 1.5), ChartKind::Null)
            .is_err());
    }

    #[test]
    fn potential_examples() {
        let c = chart();
        assert_relative_eq!(c.rw_potential(3.0, 0).unwrap(), 2.0 / 81.0, max_relative = 1e-15);
        for l in 0..5 {
            assert_eq!(c.rw_potential(2.0, l).unwrap(), 0.0);
        }
        let tail: Vec<f64> = (10..20).map(|k| c.rw_potential(10f64.powi(k / 2), 1).unwrap()).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(tail[9] < 1e-17);
    }

    #[test]
    fn regular_metric_block_has_unit_determinant() {
        let c = chart();
        for &r in &[2.0 + 1e-6, 2.2, 2.49, 2.5, 3.0, 17.0, 1e4] {
            let (gvv, gvr, grr) = c.metric_regular(r);
            assert_relative_eq!(gvv * grr - gvr * gvr, -1.0, epsilon = 1e-12);
            assert!(c.dvt_norm(r) < 0.0);
        }
    }

    #[test]
    fn volume_element_matches_jacobian() {
        let c = chart();
        let h = 1e-5;
        let to_reg = |u: f64, v: f64| {
            let p = c.chart_convert(SpacetimePoint::null_point(u, v), ChartKind::Regular).unwrap();
            (p.a, p.b)
        };
        for &(u, v) in &[(0.0, -3.0), (1.0, 2.0), (-4.0, 9.0), (2.5, 1.0)] {
            let (a1, r1) = to_reg(u + h, v);
            let (a0, r0) = to_reg(u - h, v);
            let (b1, s1) = to_reg(u, v + h);
            let (b0, s0) = to_reg(u, v - h);
            let jac = ((a1 - a0) * (s1 - s0) - (b1 - b0) * (r1 - r0)) / (4.0 * h * h);
            let r = to_reg(u, v).1;
            assert_relative_eq!(jac.abs() * r * r, c.null_volume_density(r), max_relative = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn tortoise_is_increasing(a in 2.000_001f64..1e5, b in 2.000_001f64..1e5) {
            let c = chart();
            prop_assume!(a < b);
            prop_assert!(c.rstar(a) < c.rstar(b));
        }

        #[test]
        fn chart_triple_round_trip(t in -50.0f64..50.0, rs in -10.0f64..200.0) {
            let c = chart();
            let p = SpacetimePoint::static_point(t, rs);
            let n = c.chart_convert(p, ChartKind::Null).unwrap();
            let g = c.chart_convert(n, ChartKind::Regular).unwrap();
            let back = c.chart_convert(g, ChartKind::Static).unwrap();
            let scale = 1.0 + t.abs() + rs.abs();
            prop_assert!((back.a - t).abs() <= 1e-12 * scale);
            prop_assert!((back.b - rs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn mass_scaling(m in 0.1f64..10.0, x in 2.01f64..50.0) {
            let c1 = chart();
            let cm = SchwarzschildChart::new(m).unwrap();
            prop_assert!((cm.rstar(m * x) - m * c1.rstar(x)).abs() <= 1e-12 * m * (1.0 + c1.rstar(x).abs()));
        }
    }
}

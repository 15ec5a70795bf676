//! Feasibility of the exponent systems behind the global bounds and decay rates.

use crate::error::{domain, Result};
use serde::{Deserialize, Serialize};

/// The positive root of p² − p − 4 = 0.
pub fn critical_p() -> f64 {
    (1.0 + 17f64.sqrt()) / 2.0
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p < 5.0) {
        return Err(domain(format!("p must lie in (1, 5), got {p}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// p ≤ 3: k₀ and γ₀ near (2, p − 1).
    Low,
    /// p > 3: k₀ = (p+1)/(p−1) and s ∈ [p+1, 2(p−1)).
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentCertificate {
    pub p: f64,
    pub branch: Branch,
    pub k0: f64,
    pub gamma0: Option<f64>,
    pub a: Option<f64>,
    pub s: Option<f64>,
    pub theta: f64,
    pub p1_tilde: f64,
    pub q1_tilde: f64,
    pub k: f64,
    pub l: f64,
    /// Named residuals; inequalities as slack (≥ 0), equalities as signed defect.
    pub residuals: Vec<(String, f64)>,
    pub feasible: bool,
    /// Key inequality at (k₀, γ₀) = (2, p − 1) when infeasible.
    pub max_slack: Option<f64>,
}

impl ExponentCertificate {
    /// Re-check every relation from the stored tuple.
    pub fn revalidate(&self) -> bool {
        self.residuals.iter().all(|(name, r)| {
            if name.starts_with("eq:") {
                r.abs() <= 1e-9
            } else {
                *r >= -1e-12
            }
        }) && self.k > 1.0
            && self.k < 2.0
            && (1.0 / self.k + 3.0 / self.l - 2.0).abs() <= 1e-9
    }
}

/// (γ₀−1)(k₀(p−1)−2)/(p+1−k₀(p−1)) − (3−γ₀).
pub fn key_slack(p: f64, k0: f64, gamma0: f64) -> f64 {
    let x = k0 * (p - 1.0);
    (gamma0 - 1.0) * (x - 2.0) / (p + 1.0 - x) - (3.0 - gamma0)
}

fn interpolate(p: f64, k0: f64) -> (f64, f64, f64, f64, f64) {
    let p1t = 2.0 * (p - 1.0);
    let q1t = 6.0 * (p - 1.0) / (p - 2.0);
    let theta = (5.0 - p) / (8.0 / k0 - p + 1.0);
    let inv_k = theta / k0 + (1.0 - theta) * (p - 1.0) / p1t;
    let inv_l = theta / k0 + (1.0 - theta) * (p - 1.0) / q1t;
    (theta, p1t, q1t, 1.0 / inv_k, 1.0 / inv_l)
}

fn low_residuals(p: f64, k0: f64, g0: f64, a: f64, theta: f64, k: f64, l: f64) -> Vec<(String, f64)> {
    let x = k0 * (p - 1.0);
    vec![
        ("eq:a/(p+1)+(k0(p-1)-a)/2-1".into(), a / (p + 1.0) + (x - a) / 2.0 - 1.0),
        ("eq:(4/k0-(p-1)/2)theta-(5-p)/2".into(), (4.0 / k0 - (p - 1.0) / 2.0) * theta - (5.0 - p) / 2.0),
        ("eq:1/k+3/l-2".into(), 1.0 / k + 3.0 / l - 2.0),
        ("k0-1".into(), k0 - 1.0),
        ("2-k0".into(), 2.0 - k0),
        ("gamma0".into(), g0),
        ("p-1-gamma0".into(), p - 1.0 - g0),
        ("a".into(), a),
        ("p+1-a".into(), p + 1.0 - a),
        ("key".into(), key_slack(p, k0, g0)),
        ("theta".into(), theta),
        ("1-theta".into(), 1.0 - theta),
        ("k-1".into(), k - 1.0),
        ("2-k".into(), 2.0 - k),
    ]
}

/// Certificate for |φ|^{p−1} ∈ L^k_ṽ L^l_x with 1 < k < 2, 1/k + 3/l = 2.
pub fn k22_solve(p: f64) -> Result<ExponentCertificate> {
    check_p(p)?;
    if p > 3.0 {
        return Ok(k22_high(p));
    }
    let p0 = (2.0, p - 1.0);
    let q = ((2.0 / (p - 1.0)).max(1.0), 1.0);
    let at = |t: f64| (p0.0 + t * (q.0 - p0.0), p0.1 + t * (q.1 - p0.1));
    let s0 = key_slack(p, p0.0, p0.1);
    if !(s0 > 0.0) {
        let (theta, p1t, q1t, k, l) = interpolate(p, 2.0);
        return Ok(ExponentCertificate {
            p,
            branch: Branch::Low,
            k0: 2.0,
            gamma0: Some(p - 1.0),
            a: Some((2.0 * (p - 1.0) - 2.0) * (p + 1.0) / (p - 1.0)),
            s: None,
            theta,
            p1_tilde: p1t,
            q1_tilde: q1t,
            k,
            l,
            residuals: vec![("key".into(), s0)],
            feasible: false,
            max_slack: Some(s0),
        });
    }
    // the slack decreases along the ray; bisect for its root and step halfway back
    let (mut lo, mut hi) = (0.0, 1.0);
    if key_slack(p, at(1.0).0, at(1.0).1) > 0.0 {
        hi = 1.0;
        lo = 1.0;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (k0, g0) = at(mid);
            if key_slack(p, k0, g0) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (k0, g0) = at(0.5 * lo.max(1e-12).min(hi));
    let a = (k0 * (p - 1.0) - 2.0) * (p + 1.0) / (p - 1.0);
    let (theta, p1t, q1t, k, l) = interpolate(p, k0);
    let residuals = low_residuals(p, k0, g0, a, theta, k, l);
    let mut cert = ExponentCertificate {
        p,
        branch: Branch::Low,
        k0,
        gamma0: Some(g0),
        a: Some(a),
        s: None,
        theta,
        p1_tilde: p1t,
        q1_tilde: q1t,
        k,
        l,
        residuals,
        feasible: false,
        max_slack: None,
    };
    cert.feasible = cert.revalidate();
    Ok(cert)
}

fn k22_high(p: f64) -> ExponentCertificate {
    let k0 = (p + 1.0) / (p - 1.0);
    let s_hi = (2.0 * (p - 1.0)).min((p * p - 1.0) / (5.0 - p));
    let s = 0.5 * (p + 1.0 + s_hi);
    let d = (p - 1.0) / s + 3.0 * (p - 1.0) / (p + 1.0) - (p - 1.0) / 2.0;
    let theta = (5.0 - p) / 2.0 / d;
    let p1t = 2.0 * (p - 1.0);
    let q1t = 6.0 * (p - 1.0) / (p - 2.0);
    let inv_k = theta * (p - 1.0) / s + (1.0 - theta) * (p - 1.0) / p1t;
    let inv_l = theta * (p - 1.0) / (p + 1.0) + (1.0 - theta) * (p - 1.0) / q1t;
    let (k, l) = (1.0 / inv_k, 1.0 / inv_l);
    let residuals = vec![
        ("eq:theta*D-(5-p)/2".into(), theta * d - (5.0 - p) / 2.0),
        ("eq:1/k+3/l-2".into(), inv_k + 3.0 * inv_l - 2.0),
        ("s-(p+1)".into(), s - (p + 1.0)),
        ("2(p-1)-s".into(), 2.0 * (p - 1.0) - s),
        ("theta".into(), theta),
        ("1-theta".into(), 1.0 - theta),
        ("k-1".into(), k - 1.0),
        ("2-k".into(), 2.0 - k),
    ];
    let mut cert = ExponentCertificate {
        p,
        branch: Branch::High,
        k0,
        gamma0: None,
        a: None,
        s: Some(s),
        theta,
        p1_tilde: p1t,
        q1_tilde: q1t,
        k,
        l,
        residuals,
        feasible: false,
        max_slack: None,
    };
    cert.feasible = cert.revalidate();
    cert
}

/// Brute-force search of the p ≤ 3 system on an n × n grid of (k₀, γ₀); returns the
/// feasible point with the largest key slack, or the largest slack seen if none is feasible.
pub fn k22_grid_oracle(p: f64, n: usize) -> (Option<(f64, f64)>, f64) {
    let k_lo = (2.0 / (p - 1.0)).max(1.0);
    let mut best: Option<(f64, f64)> = None;
    let mut best_slack = f64::NEG_INFINITY;
    for i in 1..n {
        let k0 = k_lo + (2.0 - k_lo) * i as f64 / n as f64;
        for j in 1..n {
            let g0 = (p - 1.0) * j as f64 / n as f64;
            let s = key_slack(p, k0, g0);
            let a = (k0 * (p - 1.0) - 2.0) * (p + 1.0) / (p - 1.0);
            let (theta, _, _, k, _) = interpolate(p, k0);
            let ok = s >= 0.0 && a > 0.0 && a < p + 1.0 && theta > 0.0 && theta < 1.0 && k > 1.0 && k < 2.0;
            if s > best_slack {
                best_slack = s;
            }
            if ok && best.map_or(true, |(bk, bg)| s > key_slack(p, bk, bg)) {
                best = Some((k0, g0));
            }
        }
    }
    (best, best_slack)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Z2phiExponents {
    pub q2: f64,
    pub p2: f64,
    pub theta: f64,
    pub n1: f64,
    pub residuals: Vec<(String, f64)>,
}

/// (q₂, θ, n₁) with θ/q₂ + (1−θ)/(k₀(p−1)) = 1/(6(p−2)), 1/p₂ + 3/q₂ = 1/2,
/// 1/n₁ = θ/p₂ + (1−θ)/(k₀(p−1)), θ ∈ (0, 1) and n₁ > p − 2.
pub fn z2phi_exponents(p: f64, k0: f64) -> Result<Z2phiExponents> {
    if !(p > 2.5 && p < 5.0) {
        return Err(domain(format!("need 5/2 < p < 5, got {p}")));
    }
    if !(k0 > 1.0 && k0 < 2.0) {
        return Err(domain(format!("need 1 < k₀ < 2, got {k0}")));
    }
    let q_lo = 6.0f64.max(6.0 * (p - 2.0));
    let x = 1.0 / (k0 * (p - 1.0));
    let target = 1.0 / (6.0 * (p - 2.0));
    let mut last = None;
    let mut eta = 1e-3;
    while eta < 1e3 {
        let q2 = q_lo * (1.0 + eta);
        let theta = (target - x) / (1.0 / q2 - x);
        let p2 = 1.0 / (0.5 - 3.0 / q2);
        let n1 = 1.0 / (theta / p2 + (1.0 - theta) * x);
        let residuals = vec![
            ("eq:theta/q2+(1-theta)/(k0(p-1))-1/(6(p-2))".into(), theta / q2 + (1.0 - theta) * x - target),
            ("eq:1/p2+3/q2-1/2".into(), 1.0 / p2 + 3.0 / q2 - 0.5),
            ("theta".into(), theta),
            ("1-theta".into(), 1.0 - theta),
            ("n1-(p-2)".into(), n1 - (p - 2.0)),
        ];
        let ok = theta > 0.0 && theta < 1.0 && n1 > p - 2.0 && p2 > 0.0;
        let found = Z2phiExponents { q2, p2, theta, n1, residuals };
        if ok {
            return Ok(found);
        }
        last = Some(found);
        eta *= 1.25;
    }
    Err(domain(format!("no feasible q₂ for p = {p}, k₀ = {k0}; last residuals {:?}", last.map(|l| l.residuals))))
}

/// Why (p₁, q₁) fails 1/p₁ + 3/q₁ = 1/2, 6 ≤ q₁ < ∞, or None when admissible.
pub fn admissible_violation(p1: f64, q1: f64) -> Option<String> {
    if !q1.is_finite() {
        return Some(format!("q₁ < ∞ is required, got {q1}"));
    }
    if q1 < 6.0 {
        return Some(format!("6 ≤ q₁ is required, got {q1}"));
    }
    if !(p1 > 0.0) {
        return Some(format!("p₁ must be positive, got {p1}"));
    }
    let d = 1.0 / p1 + 3.0 / q1 - 0.5;
    if d.abs() > 1e-12 {
        return Some(format!("1/p₁ + 3/q₁ = 1/2 fails by {d:e} for ({p1}, {q1})"));
    }
    None
}

pub fn admissible_check(p1: f64, q1: f64) -> bool {
    admissible_violation(p1, q1).is_none()
}

/// Open interval of γ for the r-weighted estimate: (0, min(2, p − 1)).
pub fn gamma_window(p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    Ok((0.0, 2.0f64.min(p - 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R3Epsilon {
    pub p: f64,
    pub s: f64,
    pub gamma0: f64,
    pub epsilon: f64,
}

/// Largest ε such that r^{−a_r}u^{−a_u} ≤ r^{−3−ε}u^{−1−ε} on r ≥ u ≥ 1 (and the matching
/// bound for r ≤ u) for the two regimes of the angular decay estimate.
pub fn r3_epsilon_at(p: f64, s: f64, g0: f64) -> f64 {
    let (a, b) = if p < 3.0 {
        ((p - 1.0 + g0 / s, (p - 1.0) * g0 - g0 / s), (p - 1.0, (p - 1.0) * g0))
    } else {
        ((p - 1.0 + g0 / s, g0 / s), (p - 1.0, 2.0 * g0 / s))
    };
    let far = (a.0 - 3.0).min((a.0 + a.1 - 4.0) / 2.0);
    let near = (b.1 - 1.0).min((b.0 + b.1 - 4.0) / 2.0);
    far.min(near)
}

/// Grid search over admissible (s, γ₀) for the largest ε₁; not claimed optimal.
pub fn r3_epsilon(p: f64, n: usize) -> Result<R3Epsilon> {
    check_p(p)?;
    let mut best: Option<R3Epsilon> = None;
    let g_hi = 2.0f64.min(p - 1.0);
    for i in 1..n {
        for j in 1..n {
            let g0 = 1.0 + (g_hi - 1.0) * j as f64 / n as f64;
            let s = if p < 3.0 {
                let (lo, hi) = (1.0f64.max(1.0 / (p - 1.0)), 2.0 / (p - 1.0));
                lo + (hi - lo) * i as f64 / n as f64
            } else {
                1.0 + (g0 - 1.0) * i as f64 / n as f64
            };
            let valid = if p < 3.0 {
                let q1 = 2.0 * (p - 1.0) * s;
                s > 1.0 && q1 > 2.0 && q1 < 4.0 && g0 > 1.0 && g0 < p - 1.0
            } else {
                1.0 < s && s < g0 && g0 < 2.0 && 2.0 * (p - 1.0) * s > 4.0
            };
            if !valid {
                continue;
            }
            let e = r3_epsilon_at(p, s, g0);
            if best.as_ref().map_or(true, |b| e > b.epsilon) {
                best = Some(R3Epsilon { p, s, gamma0: g0, epsilon: e });
            }
        }
    }
    best.ok_or_else(|| domain(format!("no admissible (s, γ₀) for p = {p}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn critical_root_zeroes_the_key_inequality() {
        let p = critical_p();
        assert!((p * p - p - 4.0).abs() < 1e-14);
        assert!(key_slack(p, 2.0, p - 1.0).abs() < 1e-12);
        assert!(!k22_solve(p).unwrap().feasible);
    }

    #[test]
    fn p3_certificate_revalidates_and_matches_grid() {
        let c = k22_solve(3.0).unwrap();
        assert!(c.feasible, "{c:?}");
        for (name, r) in &c.residuals {
            if name.starts_with("eq:") {
                assert!(r.abs() <= 1e-9, "{name} {r}");
            }
        }
        let (grid, _) = k22_grid_oracle(3.0, 200);
        assert!(grid.is_some());
    }

    #[test]
    fn below_threshold_is_infeasible_with_slack() {
        let c = k22_solve(2.55).unwrap();
        assert!(!c.feasible);
        let s = c.max_slack.unwrap();
        assert!((s - (2.0 * 0.55f64.powi(2) / 0.45 - 1.45)).abs() < 1e-12);
        assert!((s + 0.1056).abs() < 1e-3, "{s}");
        let (grid, best) = k22_grid_oracle(2.55, 200);
        assert!(grid.is_none());
        assert!(best < 0.0);
    }

    #[test]
    fn high_branch_certificate() {
        for p in [3.2, 4.0, 4.9] {
            let c = k22_solve(p).unwrap();
            assert_eq!(c.branch, Branch::High);
            assert!(c.feasible, "{c:?}");
            assert!((c.k0 - (p + 1.0) / (p - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn feasibility_switches_once_on_scan() {
        let flags: Vec<bool> =
            (0..20).map(|i| k22_solve(2.4 + 0.3 * i as f64 / 19.0).unwrap().feasible).collect();
        let first = flags.iter().position(|&f| f).unwrap();
        assert!(flags[first..].iter().all(|&f| f));
        assert!(2.4 + 0.3 * first as f64 / 19.0 > critical_p());
        assert!(2.4 + 0.3 * (first - 1) as f64 / 19.0 < critical_p());
    }

    #[test]
    fn out_of_range_p() {
        assert!(k22_solve(5.0).is_err());
        assert!(k22_solve(1.0).is_err());
        assert!(gamma_window(0.5).is_err());
    }

    #[test]
    fn z2phi_cases() {
        let z = z2phi_exponents(3.0, 2.0 - 1e-6).unwrap();
        assert!(z.n1 > 1.0 && z.theta > 0.0 && z.theta < 1.0, "{z:?}");
        assert!(z.residuals.iter().filter(|(n, _)| n.starts_with("eq:")).all(|(_, r)| r.abs() < 1e-12));
        let k0 = k22_solve(4.0).unwrap().k0;
        let z4 = z2phi_exponents(4.0, k0).unwrap();
        assert!(z4.q2 > 12.0 && z4.q2 < 12.0 * 1.05, "{z4:?}");
        assert!(z4.n1 > 2.0);
    }

    #[test]
    fn admissible_pairs_and_windows() {
        assert!(admissible_check(4.0, 12.0));
        assert!(admissible_check(2.0 * 1.5, 6.0 * 1.5 / 0.5));
        assert!(!admissible_check(8.0, f64::INFINITY));
        assert!(!admissible_check(2.0, 6.0));
        assert!(admissible_violation(2.0, 6.0).unwrap().contains("1/p₁ + 3/q₁"));
        let (lo, hi) = gamma_window(2.8).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 1.8).abs() < 1e-15);
        assert_eq!(gamma_window(4.0).unwrap(), (0.0, 2.0));
    }

    #[test]
    fn r3_epsilon_positive_above_threshold() {
        for p in [2.6, 3.0, 4.0] {
            let r = r3_epsilon(p, 200).unwrap();
            assert!(r.epsilon > 0.0, "{r:?}");
        }
    }

    proptest! {
        #[test]
        fn certificates_revalidate(p in 2.57..4.99f64) {
            let c = k22_solve(p).unwrap();
            prop_assert!(c.feasible);
            prop_assert!(c.revalidate());
            prop_assert!(c.k > 1.0 && c.k < 2.0);
            prop_assert!((1.0 / c.k + 3.0 / c.l - 2.0).abs() < 1e-9);
        }

        #[test]
        fn infeasible_below_root(p in 1.01..2.56f64) {
            let c = k22_solve(p).unwrap();
            prop_assert!(!c.feasible);
            prop_assert!(c.max_slack.unwrap() <= 0.0);
        }

        #[test]
        fn key_slack_is_monotone(p in 2.57..3.0f64, k0 in 1.3..1.99f64, g0 in 0.1..1.5f64) {
            let d = 1e-4;
            prop_assert!(key_slack(p, k0 + d, g0) >= key_slack(p, k0, g0) || g0 < 1.0);
            prop_assert!(key_slack(p, k0, g0 + d) >= key_slack(p, k0, g0));
        }
    }
}

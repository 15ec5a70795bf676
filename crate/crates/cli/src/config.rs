//! Run configuration. Every section has defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use swlab_core::diagnostics::{RecorderPlan, R_CUT};
use swlab_core::evolve::{EvolutionConfig, Pulse};
use swlab_core::geometry::{LambdaProfile, SchwarzschildChart};
use swlab_core::morawetz::MultiplierSpec;
use swlab_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub chart: ChartConfig,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub multiplier: MultiplierSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartConfig {
    pub m: f64,
    /// Far-region split radius, in units of M.
    pub big_r: f64,
    /// Excision radius is 2M(1 + horizon_margin).
    pub horizon_margin: f64,
    pub lambda: LambdaProfile,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { m: 1.0, big_r: 30.0, horizon_margin: 1e-6, lambda: LambdaProfile::default() }
    }
}

/// Lattice and data. Lengths are in units of M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionSection {
    pub p: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub h: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub nonlinear: bool,
    pub ell: u32,
    pub tol: f64,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            p: 3.0,
            amplitude: 1.0,
            center: 20.0,
            width: 5.0,
            h: 0.2,
            u_max: 100.0,
            v_max: 200.0,
            nonlinear: true,
            ell: 0,
            tol: 1e-12,
        }
    }
}

/// What to record. Radii and ṽ/u positions are in units of M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Spacing of the Σ̃_ṽ and Σ_u families; slices that do not fit the lattice are skipped.
    pub slice_step: f64,
    pub radii: Vec<f64>,
    pub gammas: Vec<f64>,
    /// ṽ bin width of the spacetime integrals; 0 disables them.
    pub bulk_bin: f64,
    pub bulk_r_min: f64,
    /// Exponents q₁ of the r-transfer check; q₁ = 2γ is excluded.
    pub betterrl_q1: Vec<f64>,
    pub betterrl_gamma: f64,
    /// Outer radius of the r-transfer check, in units of R.
    pub betterrl_r2: f64,
    pub plots: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            slice_step: 10.0,
            radii: vec![2.2, 3.0, 5.0, 10.0],
            gammas: vec![0.5, 1.5],
            bulk_bin: 10.0,
            bulk_r_min: R_CUT,
            betterrl_q1: vec![2.9, 3.1],
            betterrl_gamma: 1.5,
            betterrl_r2: 4.0,
            plots: true,
        }
    }
}

/// Parameter axes; the runs are the Cartesian product of the axes given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub amplitude: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub ell: Option<Vec<u32>>,
    pub m: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub p: f64,
    pub h: f64,
    pub ell: u32,
    pub m: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn chart(&self) -> Result<SchwarzschildChart> {
        let c = &self.chart;
        if !(c.horizon_margin > 0.0) {
            return Err(Error::Config("horizon_margin must be positive".into()));
        }
        SchwarzschildChart::with_params(c.m, 2.0 * c.m * (1.0 + c.horizon_margin), c.big_r * c.m, c.lambda)
    }

    pub fn evolution(&self) -> EvolutionConfig {
        let e = &self.evolution;
        let m = self.chart.m;
        let pulse = Pulse { amplitude: e.amplitude, center: e.center * m, width: e.width * m };
        let mut cfg = EvolutionConfig::new(e.p, pulse, e.h * m, e.u_max * m, e.v_max * m);
        cfg.nonlinear = e.nonlinear;
        cfg.ell = e.ell;
        cfg.tol = e.tol;
        cfg
    }

    /// Recorder plan with Σ̃ and Σ_u families at multiples of `slice_step` that fit the lattice.
    pub fn plan(&self, chart: &SchwarzschildChart) -> Result<RecorderPlan> {
        let d = &self.diagnostics;
        let cfg = self.evolution();
        let m = chart.m;
        if !(d.slice_step > 0.0) {
            return Err(Error::Config("slice_step must be positive".into()));
        }
        if let Some(q) = d.betterrl_q1.iter().find(|&&q| !(2.0..=4.0).contains(&q) || (q - 2.0 * d.betterrl_gamma).abs() < 1e-12) {
            return Err(Error::Config(format!(
                "betterrl_q1 = {q} must lie in [2, 4] and differ from 2γ = {}",
                2.0 * d.betterrl_gamma
            )));
        }
        // a Σ̃_ṽ slice reaches r_cut at u ≈ (ṽ − r*(r_cut))/2 and leaves through u = u₀ at v = ṽ
        let rs_cut = chart.tortoise(R_CUT * m)?;
        let vt_top = (cfg.v_max - cfg.u0).min(2.0 * cfg.u_max + rs_cut - 2.0 * m);
        let step = d.slice_step * m;
        let count = ((vt_top / step).floor().max(0.0)) as usize;
        let slices_vt: Vec<f64> = (1..=count).map(|k| k as f64 * step).collect();
        let rs_big = chart.tortoise(chart.big_r)?;
        let sigma_u: Vec<f64> = (1..)
            .map(|k| k as f64 * step)
            .take_while(|&u| u <= cfg.u_max && 2.0 * u + rs_big <= vt_top)
            .collect();
        Ok(RecorderPlan {
            slices_vt,
            sigma_u,
            radii: d.radii.iter().map(|r| r * m).collect(),
            columns: vec![],
            gammas: d.gammas.clone(),
            bulk_bin: d.bulk_bin * m,
            bulk_vt0: 0.0,
            bulk_r_min: d.bulk_r_min,
        })
    }

    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let Some(g) = &self.sweep else { return vec![] };
        let e = &self.evolution;
        let axes_given = [g.amplitude.is_some(), g.p.is_some(), g.h.is_some(), g.ell.is_some(), g.m.is_some()];
        if !axes_given.contains(&true) {
            return vec![];
        }
        let or = |a: &Option<Vec<f64>>, d: f64| a.clone().unwrap_or_else(|| vec![d]);
        let mut out = vec![];
        for &m in &or(&g.m, self.chart.m) {
            for &p in &or(&g.p, e.p) {
                for &h in &or(&g.h, e.h) {
                    for &ell in &g.ell.clone().unwrap_or_else(|| vec![e.ell]) {
                        for &amplitude in &or(&g.amplitude, e.amplitude) {
                            out.push(SweepPoint { amplitude, p, h, ell, m });
                        }
                    }
                }
            }
        }
        out
    }

    /// The single-run configuration for one sweep point, written under `dir`.
    pub fn at(&self, pt: &SweepPoint, dir: PathBuf) -> Self {
        let mut c = self.clone();
        c.sweep = None;
        c.output = dir;
        c.chart.m = pt.m;
        c.evolution.amplitude = pt.amplitude;
        c.evolution.p = pt.p;
        c.evolution.h = pt.h;
        c.evolution.ell = pt.ell;
        if pt.ell != 0 {
            c.evolution.nonlinear = false;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_an_empty_document() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.evolution.p, 3.0);
        assert_eq!(c.chart.big_r, 30.0);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[evolution]\namplitud = 2.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref s) if s.contains("amplitud")), "{err}");
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn round_trip_through_toml() {
        let c = RunConfig::from_toml("[evolution]\namplitude = 0.5\n[sweep]\np = [2.0, 3.0]\n").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn sweep_is_a_product() {
        let c = RunConfig::from_toml("[sweep]\namplitude = [0.1, 1.0, 10.0]\np = [2.0, 3.0]\n").unwrap();
        assert_eq!(c.sweep_points().len(), 6);
        let c = RunConfig::from_toml("[sweep]\namplitude = []\np = [2.0, 3.0]\n").unwrap();
        assert!(c.sweep_points().is_empty());
        let c = RunConfig::from_toml("[sweep]\n").unwrap();
        assert!(c.sweep_points().is_empty());
    }

    #[test]
    fn slices_fit_the_lattice() {
        let c = RunConfig::from_toml("[evolution]\nu_max = 100.0\nv_max = 300.0\n").unwrap();
        let chart = c.chart().unwrap();
        let plan = c.plan(&chart).unwrap();
        assert!(plan.slices_vt.iter().all(|&vt| vt <= 200.0));
        assert_eq!(plan.slices_vt.first(), Some(&10.0));
        assert!(!plan.sigma_u.is_empty());
    }

    #[test]
    fn excluded_transfer_exponent_is_a_config_error() {
        let c = RunConfig::from_toml("[diagnostics]\nbetterrl_q1 = [3.0]\n").unwrap();
        let err = c.plan(&c.chart().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Config(ref s) if s.contains("2γ")), "{err}");
    }
}

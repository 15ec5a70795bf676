//! Commands that compute a report without evolving.

use crate::svg::{line_plot, Axes, Series};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use swlab_core::diagnostics::{fit_decay, DecayFit};
use swlab_core::exponents::{gamma_window, k22_solve, r3_epsilon, z2phi_exponents, ExponentCertificate, R3Epsilon, Z2phiExponents};
use swlab_core::geometry::SchwarzschildChart;
use swlab_core::identity::{verify_divergence_identity, DivergenceReport, KillingT, TestField};
use swlab_core::morawetz::{threshold_p0, verify_ta_closed_forms, MultiplierSpec, TaMultiplier};
use swlab_core::rweight::{verify_rpw_formulas, RWeightSpec, RpwMultiplier};
use swlab_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub m: f64,
    pub p0: f64,
    /// Maximizing radius in units of M.
    pub r_max_over_m: f64,
    pub ratio_max: f64,
}

pub fn threshold(m: f64) -> Result<Threshold> {
    let chart = SchwarzschildChart::new(m)?;
    let rep = threshold_p0(&chart, &MultiplierSpec::default());
    Ok(Threshold { m, p0: rep.p0, r_max_over_m: rep.r_max / m, ratio_max: rep.ratio_max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub certificate: ExponentCertificate,
    pub gamma_window: (f64, f64),
    pub z2phi: Option<Z2phiExponents>,
    pub r3: Option<R3Epsilon>,
}

pub fn exponents(p: f64) -> Result<Exponents> {
    let certificate = k22_solve(p)?;
    let gamma_window = gamma_window(p)?;
    let z2phi = certificate.feasible.then(|| z2phi_exponents(p, certificate.k0).ok()).flatten();
    let r3 = r3_epsilon(p, 200).ok();
    Ok(Exponents { certificate, gamma_window, z2phi, r3 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierKind {
    Killing,
    Ta,
    Rpw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Gaussian,
    PolyBump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRequest {
    pub multiplier: MultiplierKind,
    pub field: FieldKind,
    pub m: f64,
    pub p: f64,
    pub k: u8,
    pub gamma: f64,
    pub h: f64,
    pub points: usize,
    pub closed_form_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub request: IdentityRequest,
    pub divergence: DivergenceReport,
    /// Worst relative disagreement of the closed forms with their definitions.
    pub closed_form_error: Option<f64>,
}

pub fn verify_identity(req: &IdentityRequest) -> Result<IdentityReport> {
    let chart = SchwarzschildChart::new(req.m)?;
    let field = match req.field {
        FieldKind::Gaussian => TestField::gaussian_default(),
        FieldKind::PolyBump => TestField::PolyBump { amp: 0.5, c0: 1.0, c1: -0.3, c2: 0.05, vc: 12.0, sv: 4.0, kappa: 0.2 },
    };
    let window = (2.05 * req.m, 50.0 * req.m);
    let (divergence, closed_form_error) = match req.multiplier {
        MultiplierKind::Killing => {
            (verify_divergence_identity(&chart, &field, &KillingT, req.k, req.p, req.h, window, req.points)?, None)
        }
        MultiplierKind::Ta => {
            let spec = MultiplierSpec::default();
            let mult = TaMultiplier::new(&chart, spec);
            let d = verify_divergence_identity(&chart, &field, &mult, req.k, req.p, req.h, window, req.points)?;
            (d, Some(verify_ta_closed_forms(&chart, &spec, req.p, req.closed_form_points)?))
        }
        MultiplierKind::Rpw => {
            let spec = RWeightSpec::new(req.gamma, req.p);
            spec.validate()?;
            let mult = RpwMultiplier::new(&chart, spec);
            let d = verify_divergence_identity(&chart, &field, &mult, req.k, req.p, req.h, window, req.points)?;
            (d, Some(verify_rpw_formulas(&chart, &spec, req.closed_form_points)?))
        }
    };
    Ok(IdentityReport { request: req.clone(), divergence, closed_form_error })
}

/// A fit target inside a run directory.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantity {
    /// |φ| at fixed radius r (units of M) from series.csv, against t.
    Phi(f64),
    /// The r^γ flux from flux.csv, against u.
    Flux(f64),
    /// A named row family of energies.csv, against its parameter.
    Energy(String),
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown quantity {s:?}; use phi@<r>, flux@<gamma> or energy@<name>"));
        let (kind, arg) = s.split_once('@').ok_or_else(bad)?;
        match kind {
            "phi" => arg.parse().map(Quantity::Phi).map_err(|_| bad()),
            "flux" => arg.parse().map(Quantity::Flux).map_err(|_| bad()),
            "energy" if !arg.is_empty() => Ok(Quantity::Energy(arg.to_string())),
            _ => Err(bad()),
        }
    }
}

impl Quantity {
    fn slug(&self) -> String {
        let s = match self {
            Quantity::Phi(r) => format!("phi_r{r}"),
            Quantity::Flux(g) => format!("flux_gamma{g}"),
            Quantity::Energy(n) => format!("energy_{n}"),
        };
        s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let header = r.headers().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?.iter().map(String::from).collect();
    let mut rows = vec![];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Io(std::io::Error::other(format!("malformed number {s:?} in run output"))))
}

/// The (x, y) series of a quantity in a run directory.
pub fn load_series(dir: &Path, q: &Quantity) -> Result<Vec<(f64, f64)>> {
    match q {
        Quantity::Phi(r) => {
            let (_, rows) = read_csv(&dir.join("series.csv"))?;
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|row| parse(&row[0]).is_ok_and(|x| (x - r).abs() < 1e-12))
                .map(|row| Ok((parse(&row[1])?, parse(&row[2])?.abs())))
                .collect::<Result<_>>()?;
            if pts.is_empty() {
                return Err(Error::Domain(format!("no series at r = {r}M in this run")));
            }
            Ok(pts)
        }
        Quantity::Flux(g) => {
            let (header, rows) = read_csv(&dir.join("flux.csv"))?;
            let col = header
                .iter()
                .position(|h| h.strip_prefix("gamma=").and_then(|x| x.parse::<f64>().ok()).is_some_and(|x| (x - g).abs() < 1e-12))
                .ok_or_else(|| Error::Domain(format!("no flux with γ = {g} in this run")))?;
            rows.iter().map(|row| Ok((parse(&row[0])?, parse(&row[col])?))).collect()
        }
        Quantity::Energy(name) => {
            let (_, rows) = read_csv(&dir.join("energies.csv"))?;
            let pts: Vec<(f64, f64)> =
                rows.iter().filter(|row| &row[0] == name).map(|row| Ok((parse(&row[1])?, parse(&row[2])?))).collect::<Result<_>>()?;
            if pts.is_empty() {
                return Err(Error::Domain(format!("no energy rows named {name:?}")));
            }
            Ok(pts)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub fit: DecayFit,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Power-law fit of a recorded quantity; writes fit_<quantity>.csv and .svg into the run directory.
pub fn fit(dir: &Path, q: &Quantity, window: (f64, f64)) -> Result<FitOutput> {
    let pts = load_series(dir, q)?;
    let fit = fit_decay(&pts, window)?;
    let slug = q.slug();
    let csv_path = dir.join(format!("fit_{slug}.csv"));
    let mut w = csv::Writer::from_writer(vec![]);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["quantity", "window_lo", "window_hi", "exponent", "residual", "points", "sub1", "sub2", "sub3"]).map_err(io)?;
    let s = fit.sub_exponents;
    w.write_record([
        slug.clone(),
        format!("{}", window.0),
        format!("{}", window.1),
        format!("{:e}", fit.exponent),
        format!("{:e}", fit.residual),
        fit.points.to_string(),
        format!("{:e}", s[0]),
        format!("{:e}", s[1]),
        format!("{:e}", s[2]),
    ])
    .map_err(io)?;
    fs::write(&csv_path, w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?)?;

    let inside: Vec<(f64, f64)> = pts.iter().copied().filter(|&(x, y)| x >= window.0 && x <= window.1 && y > 0.0).collect();
    // anchor the fitted line at the geometric mean of the window
    let (lx, ly) = inside.iter().fold((0.0, 0.0), |a, &(x, y)| (a.0 + x.ln(), a.1 + y.ln()));
    let n = inside.len().max(1) as f64;
    let (x0, y0) = ((lx / n).exp(), (ly / n).exp());
    let line: Vec<(f64, f64)> = [window.0, window.1].iter().map(|&x| (x, y0 * (x / x0).powf(-fit.exponent))).collect();
    let label = format!("slope −{:.3}", fit.exponent);
    let svg = line_plot(
        &format!("decay fit: {slug}"),
        "x",
        "|y|",
        Axes { log_x: true, log_y: true },
        &[Series { label: "data", points: &pts }, Series { label: &label, points: &line }],
    );
    let svg_path = dir.join(format!("fit_{slug}.svg"));
    fs::write(&svg_path, svg)?;
    Ok(FitOutput { fit, csv: csv_path, svg: svg_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_mass_invariant() {
        let a = threshold(1.0).unwrap();
        assert!(a.p0 > 1.51 && a.p0 < 1.53, "{a:?}");
        for m in [0.5, 2.0] {
            assert!((threshold(m).unwrap().p0 - a.p0).abs() < 1e-10);
        }
    }

    #[test]
    fn quantities_parse() {
        assert_eq!("phi@3".parse::<Quantity>().unwrap(), Quantity::Phi(3.0));
        assert_eq!("flux@1.5".parse::<Quantity>().unwrap(), Quantity::Flux(1.5));
        assert_eq!("energy@E_sigma_u".parse::<Quantity>().unwrap(), Quantity::Energy("E_sigma_u".into()));
        assert!("phi".parse::<Quantity>().is_err());
        assert!("speed@3".parse::<Quantity>().is_err());
        assert_eq!(Quantity::Flux(1.5).slug(), "flux_gamma1_5");
    }

    #[test]
    fn fit_recovers_a_synthetic_power_law() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = String::from("r,t,phi\n");
        for k in 1..=400 {
            let t = 10.0 * k as f64;
            s.push_str(&format!("3,{t:e},{:e}\n", 5.0 * t.powf(-2.5)));
        }
        fs::write(dir.path().join("series.csv"), s).unwrap();
        let out = fit(dir.path(), &Quantity::Phi(3.0), (200.0, 2000.0)).unwrap();
        assert!((out.fit.exponent - 2.5).abs() < 1e-9, "{:?}", out.fit);
        assert!(out.csv.exists() && out.svg.exists());
    }

    #[test]
    fn exponents_report_both_outcomes() {
        assert!(exponents(3.0).unwrap().certificate.feasible);
        let e = exponents(2.55).unwrap();
        assert!(!e.certificate.feasible && e.z2phi.is_none());
    }
}

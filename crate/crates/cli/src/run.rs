//! Single runs, sweeps, convergence studies and manifest replays.

use crate::config::{RunConfig, SweepPoint};
use crate::svg::{line_plot, Axes, Series};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use swlab_core::diagnostics::{
    check_betterrl, energy_flux, killing_flux, trace_ratio_sup, FluxKind, Recorder, Recording,
};
use swlab_core::evolve::{evolve, initial_energy, SliceKind, StoreOptions};
use swlab_core::geometry::{LambdaProfile, SchwarzschildChart};
use swlab_core::morawetz::MultiplierSpec;
use swlab_core::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub initial_energy: f64,
    pub max_abs_psi: f64,
    pub slices: usize,
    pub sigma_u: usize,
    /// Cumulative Morawetz bulk over the whole lattice, divided by the initial energy.
    pub morawetz_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the resolved configuration with the output path cleared.
    pub config_hash: String,
    pub config: RunConfig,
    pub lambda_profile: LambdaProfile,
    pub multiplier: MultiplierSpec,
    pub wall_time_s: f64,
    pub summary: RunSummary,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = PathBuf::new();
    sha256_hex(c.to_toml().as_bytes())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Builds CSV bytes in memory so checksums see exactly what lands on disk.
struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(header).map_err(csv_error)?;
        Ok(Self { w })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        self.w.write_record(fields.into_iter().collect::<Vec<_>>()).map_err(csv_error)
    }

    fn into_bytes(self) -> Result<Vec<u8>> {
        self.w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: vec![] })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }
}

/// Evolves one configuration and writes CSVs, plots and the manifest into `cfg.output`.
pub fn run_evolution(cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let chart = cfg.chart()?;
    let ecfg = cfg.evolution();
    let plan = cfg.plan(&chart)?;
    let e0 = initial_energy(&chart, &ecfg)?;
    let mut rec = Recorder::new(&chart, &ecfg, &plan)?;
    let grid = evolve(&chart, &ecfg, &StoreOptions::default(), &mut rec)?;
    let recording = rec.finish();

    let mut out = Outputs::new(&cfg.output)?;
    let p = ecfg.nonlinear.then_some(ecfg.p);
    let (energies, e_series) = energy_table(cfg, &chart, &recording, e0, p)?;
    out.put("energies.csv", &energies)?;

    let m = chart.m;
    let mut morawetz_ratio = None;
    let mut bulk_pts = vec![];
    if let Some(bulk) = &recording.bulk {
        let mut t = Table::new(&["vt", "morawetz", "le", "photon", "morawetz_over_e0", "touches_boundary"])?;
        for (vt, b) in bulk.cumulative() {
            let ratio = b.morawetz / e0;
            t.row([num(vt / m), num(b.morawetz), num(b.le), num(b.photon), num(ratio), b.touches_boundary.to_string()])?;
            bulk_pts.push((vt / m, ratio));
            morawetz_ratio = Some(ratio);
        }
        out.put("bulk.csv", &t.into_bytes()?)?;
    }

    let flux = &recording.flux;
    if !flux.gammas.is_empty() {
        let mut header = vec!["u".to_string()];
        header.extend(flux.gammas.iter().map(|g| format!("gamma={g}")));
        let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
        for (i, &u) in flux.u.iter().enumerate() {
            t.row(std::iter::once(num(u / m)).chain(flux.values.iter().map(|col| num(col[i]))))?;
        }
        out.put("flux.csv", &t.into_bytes()?)?;
    }

    let mut decay: Vec<(String, Vec<(f64, f64)>)> = vec![];
    if !recording.series.is_empty() {
        let mut t = Table::new(&["r", "t", "phi"])?;
        for (trace, &r) in recording.series.iter().zip(&cfg.diagnostics.radii) {
            let mut pts = vec![];
            for q in &trace.points {
                let (tt, phi) = ((q.u + q.v) / m, q.psi / q.r);
                t.row([format!("{r}"), num(tt), num(phi)])?;
                pts.push((tt, phi.abs()));
            }
            decay.push((format!("r = {r}M"), pts));
        }
        out.put("series.csv", &t.into_bytes()?)?;
    }

    if cfg.diagnostics.plots {
        let ser: Vec<Series> = e_series.iter().map(|(l, p)| Series { label: l, points: p }).collect();
        out.put("energy.svg", line_plot("energy / E0", "slice parameter / M", "E / E0", Axes::default(), &ser).as_bytes())?;
        if !decay.is_empty() {
            let ser: Vec<Series> = decay.iter().map(|(l, p)| Series { label: l, points: p }).collect();
            let axes = Axes { log_x: true, log_y: true };
            out.put("decay.svg", line_plot("|φ| at fixed radius", "t / M", "|φ|", axes, &ser).as_bytes())?;
        }
        if !bulk_pts.is_empty() {
            let ser = [Series { label: "∬W / E0", points: &bulk_pts }];
            out.put("bulk.svg", line_plot("integrated local energy", "ṽ / M", "ratio", Axes::default(), &ser).as_bytes())?;
        }
    }

    let manifest = RunManifest {
        tool: "swlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        lambda_profile: chart.profile,
        multiplier: cfg.multiplier,
        wall_time_s: start.elapsed().as_secs_f64(),
        summary: RunSummary {
            initial_energy: e0,
            max_abs_psi: grid.max_abs,
            slices: recording.slices.len(),
            sigma_u: recording.sigma_u.len(),
            morawetz_ratio,
        },
        files: out.files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
    fs::write(cfg.output.join(MANIFEST), text + "\n")?;
    Ok(manifest)
}

type Plotted = Vec<(String, Vec<(f64, f64)>)>;

fn energy_table(
    cfg: &RunConfig,
    chart: &SchwarzschildChart,
    rec: &Recording,
    e0: f64,
    p: Option<f64>,
) -> Result<(Vec<u8>, Plotted)> {
    let m = chart.m;
    let main = if p.is_some() { "E_p" } else { "E" };
    let mut t = Table::new(&["quantity", "parameter", "value", "error_estimate"])?;
    t.row(["initial_energy".into(), "0".into(), num(e0), String::new()])?;
    let mut tilde = vec![];
    for s in &rec.slices {
        let SliceKind::Regular { vt } = s.kind else { continue };
        let rep = energy_flux(chart, s, FluxKind::TildeSigma, p)?;
        let k = killing_flux(chart, s, p)?;
        t.row(["E_sigma_tilde".into(), format!("{}", vt / m), num(rep.get(main)), opt(rep.error_estimate)])?;
        t.row(["killing_sigma_tilde".into(), format!("{}", vt / m), num(k), String::new()])?;
        tilde.push((vt / m, rep.get(main) / e0));
    }
    let mut sig = vec![];
    let d = &cfg.diagnostics;
    for s in &rec.sigma_u {
        let SliceKind::Composite { u, .. } = s.kind else { continue };
        let rep = energy_flux(chart, s, FluxKind::SigmaU, p)?;
        let k = killing_flux(chart, s, p)?;
        let param = format!("{}", u / m);
        t.row(["E_sigma_u".into(), param.clone(), num(rep.get(main)), opt(rep.error_estimate)])?;
        t.row(["killing_sigma_u".into(), param.clone(), num(k), String::new()])?;
        t.row(["trace_ratio".into(), param.clone(), num(trace_ratio_sup(chart, s)?), String::new()])?;
        let r2 = d.betterrl_r2 * chart.big_r;
        if s.points.last().is_some_and(|q| q.r >= r2) {
            let e_lin = energy_flux(chart, s, FluxKind::SigmaU, None)?.get("E");
            for &q1 in &d.betterrl_q1 {
                let b = check_betterrl(chart, s, e_lin, chart.big_r, r2, q1, d.betterrl_gamma)?;
                t.row([format!("betterrl_ratio_q{q1}"), param.clone(), num(b.ratio), String::new()])?;
            }
        }
        sig.push((u / m, rep.get(main) / e0));
    }
    Ok((t.into_bytes()?, vec![("Σ̃_ṽ".into(), tilde), ("Σ_u".into(), sig)]))
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileCheck {
    pub path: String,
    pub expected: String,
    pub actual: Option<String>,
    pub identical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunReport {
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub config_hash_matches: bool,
    pub identical: bool,
    pub files: Vec<FileCheck>,
}

/// Re-executes a manifest into `out` and compares every CSV checksum.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<RerunReport> {
    let old = load_manifest(manifest_path)?;
    let mut cfg = old.config.clone();
    cfg.output = out.to_path_buf();
    let new = run_evolution(&cfg)?;
    let files: Vec<FileCheck> = old
        .files
        .iter()
        .filter(|f| f.path.ends_with(".csv"))
        .map(|f| {
            let actual = new.files.iter().find(|g| g.path == f.path).map(|g| g.sha256.clone());
            FileCheck { path: f.path.clone(), expected: f.sha256.clone(), identical: actual.as_deref() == Some(&f.sha256), actual }
        })
        .collect();
    Ok(RerunReport {
        manifest: manifest_path.to_path_buf(),
        output: out.to_path_buf(),
        config_hash_matches: new.config_hash == old.config_hash,
        identical: files.iter().all(|f| f.identical),
        files,
    })
}

/// Worker count: the explicit flag, else SWLAB_WORKERS, else the available parallelism.
pub fn worker_count(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("SWLAB_WORKERS").ok().and_then(|s| s.trim().parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Runs `jobs` on at most `workers` threads; results keep the job order.
pub fn parallel_map<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(jobs.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let r = f(job);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every job ran")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub point: SweepPoint,
    pub status: String,
    pub initial_energy: Option<f64>,
    pub max_abs_psi: Option<f64>,
    pub morawetz_ratio: Option<f64>,
}

/// One run per grid point under `cfg.output/run_NNNN`, plus `summary.csv`.
pub fn sweep(cfg: &RunConfig, workers: usize) -> Result<Vec<SweepRow>> {
    let points = cfg.sweep_points();
    let jobs: Vec<(String, RunConfig, SweepPoint)> = points
        .iter()
        .enumerate()
        .map(|(k, pt)| {
            let name = format!("run_{k:04}");
            (name.clone(), cfg.at(pt, cfg.output.join(&name)), *pt)
        })
        .collect();
    let results = parallel_map(&jobs, workers, |(_, c, _)| run_evolution(c));
    let mut rows = vec![];
    let mut t = Table::new(&[
        "run",
        "amplitude",
        "p",
        "h",
        "ell",
        "m",
        "status",
        "initial_energy",
        "max_abs_psi",
        "morawetz_ratio",
    ])?;
    for ((name, _, pt), res) in jobs.iter().zip(results) {
        let row = match res {
            Ok(man) => SweepRow {
                run: name.clone(),
                point: *pt,
                status: "ok".into(),
                initial_energy: Some(man.summary.initial_energy),
                max_abs_psi: Some(man.summary.max_abs_psi),
                morawetz_ratio: man.summary.morawetz_ratio,
            },
            Err(e) => SweepRow {
                run: name.clone(),
                point: *pt,
                status: format!("error: {e}"),
                initial_energy: None,
                max_abs_psi: None,
                morawetz_ratio: None,
            },
        };
        t.row([
            row.run.clone(),
            format!("{}", pt.amplitude),
            format!("{}", pt.p),
            format!("{}", pt.h),
            pt.ell.to_string(),
            format!("{}", pt.m),
            row.status.clone(),
            opt(row.initial_energy),
            opt(row.max_abs_psi),
            opt(row.morawetz_ratio),
        ])?;
        rows.push(row);
    }
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("summary.csv"), t.into_bytes()?)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub h: Vec<f64>,
    /// max |ψ_h − ψ_{h/2}| over the coarse nodes of the checkpoint rows.
    pub differences: Vec<f64>,
    pub ratios: Vec<f64>,
    pub orders: Vec<f64>,
}

/// Halves h `levels − 1` times and compares successive solutions on rows u = u_max/2 and u_max.
pub fn converge(cfg: &RunConfig, levels: usize) -> Result<ConvergeReport> {
    if levels < 3 {
        return Err(Error::Config(format!("a convergence order needs at least 3 levels, got {levels}")));
    }
    let chart = cfg.chart()?;
    let base = cfg.evolution();
    let rows_u = [0.5 * (base.u0 + base.u_max), base.u_max];
    let mut hs = vec![];
    let mut grids = vec![];
    for k in 0..levels {
        let mut e = base.clone();
        e.h = base.h / (1u64 << k) as f64;
        let store = StoreOptions { checkpoint_u: rows_u.to_vec(), full: false };
        hs.push(e.h / chart.m);
        grids.push(evolve(&chart, &e, &store, &mut ())?);
    }
    let mut differences = vec![];
    for k in 0..levels - 1 {
        let (a, b) = (&grids[k], &grids[k + 1]);
        let mut d: f64 = 0.0;
        for &u in &rows_u {
            let (ia, ib) = (a.row_index(u)?, b.row_index(u)?);
            let (ra, rb) = (
                a.row(ia).ok_or_else(|| Error::Numeric("missing checkpoint row".into()))?,
                b.row(ib).ok_or_else(|| Error::Numeric("missing checkpoint row".into()))?,
            );
            for (j, x) in ra.iter().enumerate() {
                d = d.max((x - rb[2 * j]).abs());
            }
        }
        differences.push(d);
    }
    let ratios: Vec<f64> = differences.windows(2).map(|w| w[0] / w[1]).collect();
    let orders = ratios.iter().map(|r| r.log2()).collect();
    let report = ConvergeReport { h: hs, differences, ratios, orders };
    let mut t = Table::new(&["h", "difference_to_next", "ratio", "order"])?;
    for (k, h) in report.h.iter().enumerate() {
        t.row([
            format!("{h}"),
            report.differences.get(k).map(|&x| num(x)).unwrap_or_default(),
            report.ratios.get(k).map(|&x| num(x)).unwrap_or_default(),
            report.orders.get(k).map(|&x| num(x)).unwrap_or_default(),
        ])?;
    }
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("converge.csv"), t.into_bytes()?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::from_toml("[evolution]\nu_max = 40.0\nv_max = 80.0\nh = 0.4\n").unwrap();
        c.output = dir.to_path_buf();
        c
    }

    #[test]
    fn parallel_map_keeps_order() {
        let jobs: Vec<u64> = (0..37).collect();
        assert_eq!(parallel_map(&jobs, 4, |x| x * x), jobs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u64>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn run_writes_every_listed_file() {
        let dir = tempfile::tempdir().unwrap();
        let man = run_evolution(&small(dir.path())).unwrap();
        for f in &man.files {
            let bytes = fs::read(dir.path().join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
        }
        assert!(man.files.iter().any(|f| f.path == "energies.csv"));
        let back = load_manifest(&dir.path().join(MANIFEST)).unwrap();
        assert_eq!(back.config_hash, man.config_hash);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        run_evolution(&small(&dir.path().join("a"))).unwrap();
        let rep = rerun(&dir.path().join("a").join(MANIFEST), &dir.path().join("b")).unwrap();
        assert!(rep.identical && rep.config_hash_matches, "{rep:?}");
        assert!(!rep.files.is_empty());
    }

    #[test]
    fn empty_sweep_has_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml("[sweep]\namplitude = []\n").unwrap();
        c.output = dir.path().to_path_buf();
        assert!(sweep(&c, 2).unwrap().is_empty());
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn hash_ignores_output_path() {
        let a = small(Path::new("x"));
        let b = small(Path::new("y"));
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = a.clone();
        c.evolution.amplitude = 2.0;
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}

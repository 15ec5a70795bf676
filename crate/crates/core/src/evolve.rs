//! Characteristic evolution of the reduced spherically symmetric equation
//! ∂_u∂_vψ = −Vψ − (1−μ) r^{1−p} |ψ|^{p−1}ψ, ψ = rφ, on a uniform (u, v) lattice.
//!
//! Rows of constant u are marched in order; each row is handed to a
//! [`RowObserver`] together with second-order jets (ψ, ∂_uψ, ∂_vψ) as soon as its
//! neighbours exist, so diagnostics never need the whole grid in memory.

use crate::error::{config, numeric, Error, Result};
use crate::geometry::SchwarzschildChart;
use crate::numerics::{gauss_composite, interp_cubic};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Maximum Newton corrections per diamond cell.
pub const MAX_CELL_ITERATIONS: usize = 3;

/// Outgoing-cone pulse A(1 − ξ²)⁴, ξ = (r* − c)/w.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Pulse {
    pub fn value(&self, rstar: f64) -> f64 {
        let xi = (rstar - self.center) / self.width;
        if xi.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - xi * xi;
        self.amplitude * s * s * s * s
    }

    pub fn derivative(&self, rstar: f64) -> f64 {
        let xi = (rstar - self.center) / self.width;
        if xi.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - xi * xi;
        -8.0 * self.amplitude * xi * s * s * s / self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub p: f64,
    pub pulse: Pulse,
    pub h: f64,
    pub u0: f64,
    pub u_max: f64,
    pub v0: f64,
    pub v_max: f64,
    pub nonlinear: bool,
    /// Angular mode of a linear run; must be 0 when the nonlinearity is on.
    pub ell: u32,
    /// Relative tolerance of the per-cell Newton iteration.
    pub tol: f64,
}

impl EvolutionConfig {
    /// Nonlinear ℓ = 0 run on [0, u_max] × [0, v_max].
    pub fn new(p: f64, pulse: Pulse, h: f64, u_max: f64, v_max: f64) -> Self {
        Self { p, pulse, h, u0: 0.0, u_max, v0: 0.0, v_max, nonlinear: true, ell: 0, tol: 1e-12 }
    }

    /// Lattice size (N_u, N_v); the domain edges must be multiples of h.
    pub fn shape(&self) -> Result<(usize, usize)> {
        let count = |a: f64, b: f64, name: &str| -> Result<usize> {
            let x = (b - a) / self.h;
            let n = x.round();
            if !(x.is_finite() && n >= 2.0 && (x - n).abs() <= 1e-9 * n.max(1.0)) {
                return Err(config(format!("{name} range [{a}, {b}] is not at least two multiples of h = {}", self.h)));
            }
            Ok(n as usize)
        };
        Ok((count(self.u0, self.u_max, "u")?, count(self.v0, self.v_max, "v")?))
    }

    pub fn validate(&self, chart: &SchwarzschildChart) -> Result<(usize, usize)> {
        if !(self.p > 1.0 && self.p < 5.0) {
            return Err(config(format!("p must lie in (1, 5), got {}", self.p)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(config(format!("grid spacing must be positive, got {}", self.h)));
        }
        if self.nonlinear && self.ell != 0 {
            return Err(config("the nonlinear evolution is spherically symmetric; set ell = 0"));
        }
        if !(self.tol > 0.0 && self.tol < 1e-3) {
            return Err(config(format!("fixed-point tolerance must lie in (0, 1e-3), got {}", self.tol)));
        }
        let pl = &self.pulse;
        if !(pl.width > 0.0 && pl.amplitude.is_finite() && pl.center.is_finite()) {
            return Err(config("pulse needs a positive width and finite amplitude and center"));
        }
        let shape = self.shape()?;
        let (lo, hi) = (self.u0 + pl.center - pl.width, self.u0 + pl.center + pl.width);
        if !(lo > self.v0 && hi < self.v_max) {
            return Err(config(format!(
                "pulse support v ∈ [{lo}, {hi}] must lie strictly inside ({}, {})",
                self.v0, self.v_max
            )));
        }
        let r_out = chart.radius_from_tortoise(pl.center + pl.width)?;
        if r_out > chart.big_r {
            return Err(config(format!(
                "support overflow: pulse reaches r = {r_out:.4}, beyond R = {}",
                chart.big_r
            )));
        }
        Ok(shape)
    }
}

/// Data on {u = u₀} (indexed by v) and on {v = v₀} (indexed by u).
pub fn initial_data(chart: &SchwarzschildChart, cfg: &EvolutionConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nu, nv) = cfg.validate(chart)?;
    let row: Vec<f64> = (0..=nv).map(|j| cfg.pulse.value(cfg.v0 + j as f64 * cfg.h - cfg.u0)).collect();
    let col = vec![row[0]; nu + 1];
    Ok((row, col))
}

/// E[φ, p] of the data on the initial outgoing cone by Gauss–Legendre quadrature of the
/// analytic pulse, with the H_u density ((Lφ)² r² + φ² + p|φ|^{p+1} r²) and the 4π factor.
pub fn initial_energy(chart: &SchwarzschildChart, cfg: &EvolutionConfig) -> Result<f64> {
    cfg.validate(chart)?;
    let pl = cfg.pulse;
    let p = cfg.p;
    let dens = |rs: f64| {
        let r = chart.radius_from_tortoise(rs).unwrap_or(2.0 * chart.m);
        let f = chart.one_minus_mu(r);
        let psi = pl.value(rs);
        let phi = psi / r;
        let lphi = pl.derivative(rs) / r - psi * f / (r * r);
        (lphi * lphi * r * r + phi * phi + p * phi.abs().powf(p + 1.0) * r * r) * 4.0 * PI
    };
    Ok(gauss_composite(dens, pl.center - pl.width, pl.center + pl.width, 64, 10))
}

/// Per-cell coefficients of the right-hand side −Vψ − nl·|ψ|^{p−1}ψ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    pub h: f64,
    pub potential: f64,
    pub nl: f64,
}

#[inline]
fn signed_power(x: f64, p: f64, p_int: Option<i32>) -> f64 {
    match p_int {
        Some(3) => x * x * x,
        Some(k) => x.abs().powi(k - 1) * x,
        None => x.abs().powf(p - 1.0) * x,
    }
}

#[inline]
fn abs_power(x: f64, e: f64, e_int: Option<i32>) -> f64 {
    match e_int {
        Some(k) => x.abs().powi(k),
        None => x.abs().powf(e),
    }
}

fn integer_power(p: f64) -> Option<i32> {
    (p.fract() == 0.0 && p.abs() < 64.0).then_some(p as i32)
}

/// Diamond update ψ_N = ψ_E + ψ_W − ψ_S + h² F(ψ̄): predictor with ψ̄ = (ψ_E + ψ_W)/2,
/// then Newton corrections with ψ̄ = (ψ_E + ψ_W + ψ_S + ψ_N)/4 until the residual is within tolerance.
pub fn step_diamond(s: f64, w: f64, e: f64, cell: &CellGeometry, p: f64, tol: f64) -> Result<f64> {
    diamond(s, w, e, cell, p, integer_power(p), tol).map_err(|(n, dn)| {
        numeric(format!("fixed point did not converge in {MAX_CELL_ITERATIONS} iterations (ψ_N = {n}, last correction {dn})"))
    })
}

#[inline(always)]
fn diamond(
    s: f64,
    w: f64,
    e: f64,
    cell: &CellGeometry,
    p: f64,
    p_int: Option<i32>,
    tol: f64,
) -> std::result::Result<f64, (f64, f64)> {
    let base = e + w - s;
    if cell.potential == 0.0 && cell.nl == 0.0 {
        return Ok(base);
    }
    let h2 = cell.h * cell.h;
    let rhs = |x: f64| -cell.potential * x - cell.nl * signed_power(x, p, p_int);
    let mut n = base + h2 * rhs(0.5 * (e + w));
    let mut dn = f64::NAN;
    for k in 0..=MAX_CELL_ITERATIONS {
        let c = 0.25 * (e + w + s + n);
        let g = n - base - h2 * rhs(c);
        if g == 0.0 || g.abs() <= tol * (n.abs() + base.abs()) {
            return Ok(n);
        }
        if k == MAX_CELL_ITERATIONS {
            break;
        }
        let slope = cell.potential + cell.nl * p * abs_power(c, p - 1.0, p_int.map(|k| k - 1));
        dn = g / (1.0 + 0.25 * h2 * slope);
        n -= dn;
    }
    Err((n, dn))
}

/// Geometry cached per lattice diagonal d = j − i + N_u (constant r*).
#[derive(Clone, Debug)]
pub struct Diagonals {
    pub nu: usize,
    pub rstar: Vec<f64>,
    pub r: Vec<f64>,
    pub omu: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub potential: Vec<f64>,
    pub nl: Vec<f64>,
    /// ṽ − t = r* − λ(r); zero wherever ṽ = t.
    pub vt_shift: Vec<f64>,
}

impl Diagonals {
    pub fn build(chart: &SchwarzschildChart, cfg: &EvolutionConfig, nu: usize, nv: usize) -> Result<Self> {
        let m = chart.m;
        let n = nu + nv + 1;
        let r_flat = chart.profile.r_outer * m;
        let mut d = Diagonals {
            nu,
            rstar: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            omu: Vec::with_capacity(n),
            dlambda: Vec::with_capacity(n),
            potential: Vec::with_capacity(n),
            nl: Vec::with_capacity(n),
            vt_shift: Vec::with_capacity(n),
        };
        for k in 0..n {
            let rs = cfg.v0 - cfg.u0 + (k as f64 - nu as f64) * cfg.h;
            let x = chart.horizon_gap(rs)?;
            let r = 2.0 * m + x;
            let omu = x / r;
            let (lam, dl) = chart.lambda_unchecked(r);
            let l = cfg.ell as f64;
            d.rstar.push(rs);
            d.r.push(r);
            d.omu.push(omu);
            d.dlambda.push(dl);
            d.potential.push(omu * (l * (l + 1.0) / (r * r) + 2.0 * m / (r * r * r)));
            d.nl.push(if cfg.nonlinear { omu * r.powf(1.0 - cfg.p) } else { 0.0 });
            d.vt_shift.push(if r >= r_flat { 0.0 } else { rs - lam });
        }
        Ok(d)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j + self.nu - i
    }
}

/// One completed row with its jets.
pub struct RowView<'a> {
    pub i: usize,
    pub nu: usize,
    pub u: f64,
    pub v0: f64,
    pub h: f64,
    pub ell: u32,
    pub psi: &'a [f64],
    pub psi_u: &'a [f64],
    pub psi_v: &'a [f64],
    pub diag: &'a Diagonals,
}

impl RowView<'_> {
    pub fn nv(&self) -> usize {
        self.psi.len() - 1
    }

    #[inline]
    pub fn d(&self, j: usize) -> usize {
        j + self.nu - self.i
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        self.v0 + j as f64 * self.h
    }

    #[inline]
    pub fn vt(&self, j: usize) -> f64 {
        self.u + self.v(j) + self.diag.vt_shift[self.d(j)]
    }

    /// ṽ at fractional column x.
    pub fn vt_at(&self, x: f64) -> f64 {
        let y = x + self.nu as f64 - self.i as f64;
        self.u + self.v0 + x * self.h + interp_cubic(&self.diag.vt_shift, y)
    }

    pub fn r_at(&self, x: f64) -> f64 {
        interp_cubic(&self.diag.r, x + self.nu as f64 - self.i as f64)
    }

    /// Point of the row at fractional column x, jets by cubic interpolation.
    pub fn point_at(&self, x: f64) -> TracePoint {
        TracePoint {
            u: self.u,
            v: self.v0 + x * self.h,
            r: self.r_at(x),
            psi: interp_cubic(self.psi, x),
            psi_u: interp_cubic(self.psi_u, x),
            psi_v: interp_cubic(self.psi_v, x),
        }
    }

    pub fn point(&self, j: usize) -> TracePoint {
        TracePoint {
            u: self.u,
            v: self.v(j),
            r: self.diag.r[self.d(j)],
            psi: self.psi[j],
            psi_u: self.psi_u[j],
            psi_v: self.psi_v[j],
        }
    }

    /// Fractional column where the row meets Σ̃_ṽ, or the side it misses on.
    pub fn regular_crossing(&self, vt: f64) -> Crossing {
        let nv = self.nv();
        if vt < self.vt(0) {
            return Crossing::Before;
        }
        if vt > self.vt(nv) {
            return Crossing::After;
        }
        let guess = (vt - self.u - self.v0) / self.h;
        if guess >= 0.0 && guess <= nv as f64 {
            let j0 = guess.floor() as usize;
            let j1 = (j0 + 1).min(nv);
            let lo = j0.saturating_sub(1);
            let hi = (j1 + 1).min(nv);
            if (lo..=hi).all(|j| self.diag.vt_shift[self.d(j)] == 0.0) {
                return Crossing::At(guess);
            }
        }
        // ṽ increases along the row because 2 − (1 − μ)λ' > 0
        let (mut a, mut b) = (0usize, nv);
        while b - a > 1 {
            let mid = (a + b) / 2;
            if self.vt(mid) <= vt {
                a = mid;
            } else {
                b = mid;
            }
        }
        let (mut xa, mut xb) = (a as f64, b as f64);
        for _ in 0..60 {
            let xm = 0.5 * (xa + xb);
            if self.vt_at(xm) <= vt {
                xa = xm;
            } else {
                xb = xm;
            }
        }
        Crossing::At(0.5 * (xa + xb))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Crossing {
    /// Slice lies at v < v₀ on this row.
    Before,
    At(f64),
    /// Slice lies beyond v_max on this row.
    After,
}

pub trait RowObserver {
    fn observe(&mut self, row: &RowView) -> Result<()>;
}

impl RowObserver for () {
    fn observe(&mut self, _row: &RowView) -> Result<()> {
        Ok(())
    }
}

impl<A: RowObserver, B: RowObserver> RowObserver for (A, B) {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        self.0.observe(row)?;
        self.1.observe(row)
    }
}

impl<T: RowObserver + ?Sized> RowObserver for &mut T {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        (**self).observe(row)
    }
}

impl<T: RowObserver> RowObserver for Vec<T> {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        self.iter_mut().try_for_each(|o| o.observe(row))
    }
}

/// What the engine keeps in memory besides the observers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreOptions {
    /// u values whose full rows are kept (snapped to the nearest row).
    pub checkpoint_u: Vec<f64>,
    /// Keep every row (small runs only).
    pub full: bool,
}

#[derive(Clone, Debug)]
pub struct FieldGrid {
    pub config: EvolutionConfig,
    pub nu: usize,
    pub nv: usize,
    pub diag: Diagonals,
    /// Checkpointed rows keyed by row index.
    pub rows: BTreeMap<usize, Vec<f64>>,
    /// Row-major (N_u + 1) × (N_v + 1) values when requested.
    pub full: Option<Vec<f64>>,
    pub max_abs: f64,
}

impl FieldGrid {
    pub fn u(&self, i: usize) -> f64 {
        self.config.u0 + i as f64 * self.config.h
    }

    pub fn v(&self, j: usize) -> f64 {
        self.config.v0 + j as f64 * self.config.h
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        if let Some(f) = &self.full {
            return f.get(i * (self.nv + 1) + j).copied();
        }
        self.rows.get(&i).and_then(|r| r.get(j).copied())
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        if let Some(f) = &self.full {
            let w = self.nv + 1;
            return f.get(i * w..(i + 1) * w);
        }
        self.rows.get(&i).map(|r| r.as_slice())
    }

    /// Row index of an exact lattice value of u.
    pub fn row_index(&self, u: f64) -> Result<usize> {
        lattice_index(u, self.config.u0, self.config.h, self.nu, "u")
    }

    pub fn column_index(&self, v: f64) -> Result<usize> {
        lattice_index(v, self.config.v0, self.config.h, self.nv, "v")
    }
}

fn lattice_index(x: f64, x0: f64, h: f64, n: usize, name: &str) -> Result<usize> {
    let k = (x - x0) / h;
    let kr = k.round();
    if !(kr >= 0.0 && kr <= n as f64) {
        return Err(Error::Domain(format!(
            "{name} = {x} is outside the computed range [{x0}, {}]",
            x0 + n as f64 * h
        )));
    }
    if (k - kr).abs() > 1e-9 * kr.max(1.0) {
        return Err(Error::Domain(format!("{name} = {x} is not a lattice value (spacing {h})")));
    }
    Ok(kr as usize)
}

fn central(prev: &[f64], next: &[f64], h: f64, out: &mut [f64]) {
    let c = 0.5 / h;
    for ((o, a), b) in out.iter_mut().zip(prev).zip(next) {
        *o = c * (b - a);
    }
}

fn one_sided(a: &[f64], b: &[f64], c: &[f64], h: f64, out: &mut [f64]) {
    // second-order derivative at the row `a`, with b, c one and two steps away
    let k = 0.5 / h;
    for (((o, x), y), z) in out.iter_mut().zip(a).zip(b).zip(c) {
        *o = k * (-3.0 * x + 4.0 * y - z);
    }
}

fn along_row(psi: &[f64], h: f64, out: &mut [f64]) {
    let n = psi.len();
    let k = 0.5 / h;
    out[0] = k * (-3.0 * psi[0] + 4.0 * psi[1] - psi[2]);
    for j in 1..n - 1 {
        out[j] = k * (psi[j + 1] - psi[j - 1]);
    }
    out[n - 1] = k * (3.0 * psi[n - 1] - 4.0 * psi[n - 2] + psi[n - 3]);
}

fn emit<O: RowObserver + ?Sized>(
    obs: &mut O,
    cfg: &EvolutionConfig,
    diag: &Diagonals,
    i: usize,
    psi: &[f64],
    psi_u: &[f64],
    psi_v: &mut [f64],
) -> Result<()> {
    along_row(psi, cfg.h, psi_v);
    let view = RowView {
        i,
        nu: diag.nu,
        u: cfg.u0 + i as f64 * cfg.h,
        v0: cfg.v0,
        h: cfg.h,
        ell: cfg.ell,
        psi,
        psi_u,
        psi_v,
        diag,
    };
    obs.observe(&view)
}

/// March the lattice row by row; every row reaches `observer` exactly once, in order.
pub fn evolve<O: RowObserver + ?Sized>(
    chart: &SchwarzschildChart,
    cfg: &EvolutionConfig,
    store: &StoreOptions,
    observer: &mut O,
) -> Result<FieldGrid> {
    let (nu, nv) = cfg.validate(chart)?;
    let diag = Diagonals::build(chart, cfg, nu, nv)?;
    let (row0, col0) = initial_data(chart, cfg)?;
    let w = nv + 1;
    let keep: std::collections::BTreeSet<usize> = store
        .checkpoint_u
        .iter()
        .map(|&u| (((u - cfg.u0) / cfg.h).round().max(0.0) as usize).min(nu))
        .collect();
    let mut full = store.full.then(|| Vec::with_capacity((nu + 1) * w));
    let mut rows = BTreeMap::new();
    let p_int = integer_power(cfg.p);
    let mut max_abs = 0.0f64;

    // ring of three rows: index k % 3 holds row k
    let mut ring = [row0, vec![0.0; w], vec![0.0; w]];
    let mut du = vec![0.0; w];
    let mut dv = vec![0.0; w];
    let mut record = |k: usize, r: &[f64], full: &mut Option<Vec<f64>>| {
        if let Some(f) = full.as_mut() {
            f.extend_from_slice(r);
        }
        if keep.contains(&k) {
            rows.insert(k, r.to_vec());
        }
    };
    record(0, &ring[0], &mut full);
    max_abs = ring[0].iter().fold(max_abs, |a, x| a.max(x.abs()));

    for k in 1..=nu {
        let (prev, next) = {
            let (a, b) = ring.split_at_mut(1);
            let (b, c) = b.split_at_mut(1);
            match k % 3 {
                1 => (&a[0], &mut b[0]),
                2 => (&b[0], &mut c[0]),
                _ => (&c[0], &mut a[0]),
            }
        };
        next[0] = col0[k];
        let i = k - 1;
        for j in 0..nv {
            let d = diag.index(i, j);
            let cell = CellGeometry { h: cfg.h, potential: diag.potential[d], nl: diag.nl[d] };
            match diamond(prev[j], next[j], prev[j + 1], &cell, cfg.p, p_int, cfg.tol) {
                Ok(x) if x.is_finite() => next[j + 1] = x,
                Ok(x) => {
                    return Err(numeric(format!(
                        "non-finite value {x} at cell (u = {}, v = {})",
                        cfg.u0 + k as f64 * cfg.h,
                        cfg.v0 + (j + 1) as f64 * cfg.h
                    )))
                }
                Err((x, dx)) => {
                    return Err(numeric(format!(
                        "fixed point did not converge at cell (u = {}, v = {}): ψ_N = {x}, last correction {dx}",
                        cfg.u0 + k as f64 * cfg.h,
                        cfg.v0 + (j + 1) as f64 * cfg.h
                    )))
                }
            }
        }
        max_abs = next.iter().fold(max_abs, |a, x| a.max(x.abs()));
        record(k, next, &mut full);

        if k >= 2 {
            let r0 = &ring[(k - 2) % 3];
            let r1 = &ring[(k - 1) % 3];
            let r2 = &ring[k % 3];
            if k == 2 {
                one_sided(r0, r1, r2, cfg.h, &mut du);
                emit(observer, cfg, &diag, 0, r0, &du, &mut dv)?;
            }
            central(r0, r2, cfg.h, &mut du);
            emit(observer, cfg, &diag, k - 1, r1, &du, &mut dv)?;
            if k == nu {
                one_sided(r2, r1, r0, -cfg.h, &mut du);
                emit(observer, cfg, &diag, k, r2, &du, &mut dv)?;
            }
        }
    }
    Ok(FieldGrid { config: cfg.clone(), nu, nv, diag, rows, full, max_abs })
}

/// Feed the rows of a fully stored grid to an observer, with the same jets the engine emits.
pub fn replay<O: RowObserver + ?Sized>(grid: &FieldGrid, observer: &mut O) -> Result<()> {
    let f = grid
        .full
        .as_ref()
        .ok_or_else(|| Error::Domain("replay needs a fully stored grid (StoreOptions::full)".into()))?;
    let w = grid.nv + 1;
    let row = |k: usize| &f[k * w..(k + 1) * w];
    let h = grid.config.h;
    let mut du = vec![0.0; w];
    let mut dv = vec![0.0; w];
    for k in 0..=grid.nu {
        if k == 0 {
            one_sided(row(0), row(1), row(2), h, &mut du);
        } else if k == grid.nu {
            one_sided(row(k), row(k - 1), row(k - 2), -h, &mut du);
        } else {
            central(row(k - 1), row(k + 1), h, &mut du);
        }
        emit(observer, &grid.config, &grid.diag, k, row(k), &du, &mut dv)?;
    }
    Ok(())
}

/// Sampled field data at one point of a slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub psi: f64,
    /// L̄ψ = ∂_uψ
    pub psi_u: f64,
    /// Lψ = ∂_vψ
    pub psi_v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SliceKind {
    /// Σ̃_ṽ.
    Regular { vt: f64 },
    /// H_u (all radii on the row unless restricted).
    Outgoing { u: f64 },
    /// H̄_v.
    Ingoing { v: f64 },
    /// Σ_u = (Σ̃_{2u+R*} ∩ {r < R}) ∪ (H_u ∩ {r ≥ R}).
    Composite { u: f64, big_r: f64 },
    /// Time series at fixed r.
    FixedRadius { r: f64 },
}

/// A one-dimensional trace; slices are ordered by increasing r, fixed-radius series by t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceTrace {
    pub kind: SliceKind,
    pub ell: u32,
    pub points: Vec<TracePoint>,
    /// Which jet components are meaningful: (∂_uψ, ∂_vψ).
    pub has_psi_u: bool,
    pub has_psi_v: bool,
}

impl SliceTrace {
    pub fn new(kind: SliceKind, ell: u32) -> Self {
        Self { kind, ell, points: Vec::new(), has_psi_u: true, has_psi_v: true }
    }

    /// CSV with columns coordinate, ψ, Lψ, L̄ψ, r.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("coordinate,psi,L_psi,Lbar_psi,r\n");
        for p in &self.points {
            let c = match self.kind {
                SliceKind::Regular { .. } | SliceKind::Composite { .. } => p.r,
                SliceKind::Outgoing { .. } => p.v,
                SliceKind::Ingoing { .. } => p.u,
                SliceKind::FixedRadius { .. } => p.u + p.v,
            };
            s.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", c, p.psi, p.psi_v, p.psi_u, p.r));
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    vt: f64,
    pt: TracePoint,
}

/// Collects Σ̃_ṽ (optionally only r < r_max) row by row, including the points where
/// the slice leaves the lattice through v = v₀ or v = v_max between two rows.
#[derive(Clone, Debug)]
pub struct RegularCollector {
    pub vt: f64,
    pub r_max: f64,
    trace: SliceTrace,
    prev: Option<(Crossing, Edge, Edge)>,
}

impl RegularCollector {
    pub fn new(vt: f64, ell: u32) -> Self {
        Self::restricted(vt, f64::INFINITY, ell)
    }

    pub fn restricted(vt: f64, r_max: f64, ell: u32) -> Self {
        Self { vt, r_max, trace: SliceTrace::new(SliceKind::Regular { vt }, ell), prev: None }
    }

    fn push(&mut self, pt: TracePoint) {
        if pt.r < self.r_max {
            self.trace.points.push(pt);
        }
    }

    /// The trace ordered by increasing r.
    pub fn finish(mut self) -> SliceTrace {
        self.trace.points.reverse();
        self.trace
    }
}

fn edge_interp(a: &Edge, b: &Edge, vt: f64) -> TracePoint {
    let s = if b.vt != a.vt { ((vt - a.vt) / (b.vt - a.vt)).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |x: f64, y: f64| x + s * (y - x);
    TracePoint {
        u: lerp(a.pt.u, b.pt.u),
        v: lerp(a.pt.v, b.pt.v),
        r: lerp(a.pt.r, b.pt.r),
        psi: lerp(a.pt.psi, b.pt.psi),
        psi_u: lerp(a.pt.psi_u, b.pt.psi_u),
        psi_v: lerp(a.pt.psi_v, b.pt.psi_v),
    }
}

impl RowObserver for RegularCollector {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        let c = row.regular_crossing(self.vt);
        let nv = row.nv();
        let first = Edge { vt: row.vt(0), pt: row.point(0) };
        let last = Edge { vt: row.vt(nv), pt: row.point(nv) };
        if let Some((pc, pf, pl)) = self.prev {
            let inside = matches!(c, Crossing::At(_));
            let was_inside = matches!(pc, Crossing::At(_));
            if inside != was_inside {
                let side = if inside { pc } else { c };
                let pt = match side {
                    Crossing::Before => edge_interp(&pf, &first, self.vt),
                    _ => edge_interp(&pl, &last, self.vt),
                };
                self.push(pt);
            }
        }
        if let Crossing::At(x) = c {
            self.push(row.point_at(x));
        }
        self.prev = Some((c, first, last));
        Ok(())
    }
}

/// Collects H_u at one row, for r ≥ r_min.
#[derive(Clone, Debug)]
pub struct OutgoingCollector {
    pub i: usize,
    pub r_min: f64,
    trace: SliceTrace,
}

impl OutgoingCollector {
    pub fn new(i: usize, u: f64, r_min: f64, ell: u32) -> Self {
        Self { i, r_min, trace: SliceTrace::new(SliceKind::Outgoing { u }, ell) }
    }

    pub fn finish(self) -> SliceTrace {
        self.trace
    }
}

impl RowObserver for OutgoingCollector {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        if row.i != self.i {
            return Ok(());
        }
        // join exactly at r_min so a composite slice has no gap
        let nv = row.nv();
        let first = (0..=nv).find(|&j| row.diag.r[row.d(j)] >= self.r_min);
        if let Some(j0) = first {
            if j0 > 0 && self.r_min.is_finite() && self.r_min > row.diag.r[row.d(0)] {
                let (a, b) = (row.diag.rstar[row.d(j0 - 1)], row.diag.rstar[row.d(j0)]);
                let target = rstar_of(row.diag, self.r_min, a, b, row.d(j0 - 1));
                let x = (j0 - 1) as f64 + (target - a) / (b - a);
                let mut pt = row.point_at(x);
                pt.r = self.r_min;
                self.trace.points.push(pt);
            }
            for j in j0..=nv {
                self.trace.points.push(row.point(j));
            }
        }
        Ok(())
    }
}

fn rstar_of(diag: &Diagonals, r: f64, a: f64, b: f64, d: usize) -> f64 {
    // linear in r between two neighbouring diagonals is accurate to O(h²)
    let (ra, rb) = (diag.r[d], diag.r[d + 1]);
    if rb == ra {
        return a;
    }
    a + (b - a) * (r - ra) / (rb - ra)
}

/// Collects H̄_v at one column.
#[derive(Clone, Debug)]
pub struct IngoingCollector {
    pub j: usize,
    trace: SliceTrace,
}

impl IngoingCollector {
    pub fn new(j: usize, v: f64, ell: u32) -> Self {
        Self { j, trace: SliceTrace::new(SliceKind::Ingoing { v }, ell) }
    }

    pub fn finish(mut self) -> SliceTrace {
        self.trace.points.reverse();
        self.trace
    }
}

impl RowObserver for IngoingCollector {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        if self.j <= row.nv() {
            self.trace.points.push(row.point(self.j));
        }
        Ok(())
    }
}

/// Time series of the jet at fixed r.
#[derive(Clone, Debug)]
pub struct RadiusCollector {
    pub r: f64,
    y: f64,
    trace: SliceTrace,
}

impl RadiusCollector {
    pub fn new(chart: &SchwarzschildChart, cfg: &EvolutionConfig, nu: usize, r: f64) -> Result<Self> {
        let rs = chart.tortoise(r)?;
        let y = (rs - (cfg.v0 - cfg.u0)) / cfg.h + nu as f64;
        Ok(Self { r, y, trace: SliceTrace::new(SliceKind::FixedRadius { r }, cfg.ell) })
    }

    pub fn finish(self) -> SliceTrace {
        self.trace
    }
}

impl RowObserver for RadiusCollector {
    fn observe(&mut self, row: &RowView) -> Result<()> {
        let x = self.y + row.i as f64 - row.nu as f64;
        if x >= 0.0 && x <= row.nv() as f64 {
            let mut pt = row.point_at(x);
            pt.r = self.r;
            self.trace.points.push(pt);
        }
        Ok(())
    }
}

/// Sample a stored grid on a slice. H_u at a stored row returns the lattice values themselves.
pub fn sample(chart: &SchwarzschildChart, grid: &FieldGrid, slice: SliceKind) -> Result<SliceTrace> {
    let cfg = &grid.config;
    let reach = || {
        format!(
            "computed rectangle is u ∈ [{}, {}], v ∈ [{}, {}]",
            cfg.u0, cfg.u_max, cfg.v0, cfg.v_max
        )
    };
    let ell = cfg.ell;
    match slice {
        SliceKind::Outgoing { u } => {
            let i = grid.row_index(u).map_err(|e| Error::Domain(format!("{e}; {}", reach())))?;
            if grid.full.is_some() {
                let mut c = OutgoingCollector::new(i, u, 0.0, ell);
                replay(grid, &mut c)?;
                return Ok(c.finish());
            }
            let row = grid.row(i).ok_or_else(|| {
                Error::Domain(format!(
                    "row u = {u} was not stored; checkpointed u values: {:?}",
                    grid.rows.keys().map(|&k| grid.u(k)).collect::<Vec<_>>()
                ))
            })?;
            let mut dv = vec![0.0; row.len()];
            along_row(row, cfg.h, &mut dv);
            let mut t = SliceTrace::new(slice, ell);
            t.has_psi_u = false;
            t.points = (0..row.len())
                .map(|j| TracePoint {
                    u,
                    v: grid.v(j),
                    r: grid.diag.r[grid.diag.index(i, j)],
                    psi: row[j],
                    psi_u: f64::NAN,
                    psi_v: dv[j],
                })
                .collect();
            Ok(t)
        }
        SliceKind::Ingoing { v } => {
            let j = grid.column_index(v).map_err(|e| Error::Domain(format!("{e}; {}", reach())))?;
            let mut c = IngoingCollector::new(j, v, ell);
            replay(grid, &mut c).map_err(|e| Error::Domain(format!("{e}; {}", reach())))?;
            Ok(c.finish())
        }
        SliceKind::Regular { vt } => {
            let mut c = RegularCollector::new(vt, ell);
            replay(grid, &mut c)?;
            let t = c.finish();
            if t.points.is_empty() {
                return Err(Error::Domain(format!("Σ̃ at ṽ = {vt} misses the lattice; {}", reach())));
            }
            Ok(t)
        }
        SliceKind::Composite { u, big_r } => {
            let i = grid.row_index(u).map_err(|e| Error::Domain(format!("{e}; {}", reach())))?;
            let vt = 2.0 * u + chart.tortoise(big_r)?;
            let mut a = RegularCollector::restricted(vt, big_r, ell);
            let mut b = OutgoingCollector::new(i, u, big_r, ell);
            replay(grid, &mut (&mut a, &mut b))?;
            let mut t = a.finish();
            t.points.extend(b.finish().points);
            t.kind = slice;
            Ok(t)
        }
        SliceKind::FixedRadius { r } => {
            let mut c = RadiusCollector::new(chart, cfg, grid.nu, r)?;
            replay(grid, &mut c)?;
            let t = c.finish();
            if t.points.is_empty() {
                return Err(Error::Domain(format!("radius r = {r} is not reached; {}", reach())));
            }
            Ok(t)
        }
    }
}

//! Frequency-split calculus: the symbol F with its two square-root branches,
//! the smoothed F_s and F_l, cutoffs rho and zeta, the J operators with their
//! integral inverses, the g correction and the G_+- factorization.

use crate::discretization::{theta_fourier, theta_fourier_inverse, Field, Grid, SpectralField};
use crate::error::{LabError, Result};
use crate::geometry::FSpec;
use crate::numerics::{fornberg, gauss_legendre, ramp, C64, I};
use crate::operators::{coeffs_at, OperatorKind, OperatorOptions, SigmaMode};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// square root with nonnegative imaginary part
    Imag,
    /// square root with nonnegative real part
    Real,
}

fn xi_parts(xi: &[f64]) -> (f64, f64) {
    let n = xi.len();
    (xi.iter().map(|x| x * x).sum(), if n == 0 { 0.0 } else { xi[n - 1] })
}

pub fn tau_k(xi2: f64, xin: f64, k: f64) -> C64 {
    C64::new(-(k * xin).powi(2) + (1.0 + k * k) * xi2 - k * k, 2.0 * k * xin)
}

pub fn sqrt_branch(t: C64, b: Branch) -> C64 {
    if t.im == 0.0 {
        return if t.re >= 0.0 { C64::new(t.re.sqrt(), 0.0) } else { C64::new(0.0, (-t.re).sqrt()) };
    }
    let p = t.sqrt();
    match b {
        Branch::Real => {
            if p.re < 0.0 {
                -p
            } else {
                p
            }
        }
        Branch::Imag => {
            if p.im < 0.0 {
                -p
            } else {
                p
            }
        }
    }
}

fn fbar_parts(xi2: f64, xin: f64, k: f64, b: Branch) -> C64 {
    let t = tau_k(xi2, xin, k);
    (C64::new(1.0, k * xin) + sqrt_branch(t, b)) / (1.0 + k * k)
}

/// F(xi): the conjugate of (1 + iK xi_n + sqrt(tau_K)) / (1 + K^2).
pub fn eval_f(xi: &[f64], k: f64, b: Branch) -> C64 {
    let (xi2, xin) = xi_parts(xi);
    fbar_parts(xi2, xin, k, b).conj()
}

/// (1 + K^2) X^2 - 2 (1 + iK xi_n) X + 1 - |xi|^2
pub fn quadratic(x: C64, xi: &[f64], k: f64) -> C64 {
    let (xi2, xin) = xi_parts(xi);
    (1.0 + k * k) * x * x - 2.0 * C64::new(1.0, k * xin) * x + (1.0 - xi2)
}

/// Measured jump of the imaginary-branch F across xi_n = 0 at |xi|^2 = xi2.
pub fn branch_jump(xi2: f64, k: f64) -> f64 {
    let e = 1e-15;
    (fbar_parts(xi2 + e * e, e, k, Branch::Imag) - fbar_parts(xi2 + e * e, -e, k, Branch::Imag)).norm()
}

pub fn branch_jump_formula(xi2: f64, k: f64) -> f64 {
    2.0 * ((1.0 + k * k) * xi2 - k * k).max(0.0).sqrt() / (1.0 + k * k)
}

type SymbolEval = dyn Fn(f64, &[f64], &[f64]) -> C64 + Send + Sync;

/// A multiplier a(r, theta, xi) with metadata.
#[derive(Clone)]
pub struct SymbolFn {
    pub name: String,
    pub order: i32,
    pub theta_dependent: bool,
    pub r_dependent: bool,
    pub delta: Option<f64>,
    pub branch: Option<Branch>,
    f: Arc<SymbolEval>,
}

impl std::fmt::Debug for SymbolFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymbolFn({}, order {})", self.name, self.order)
    }
}

impl SymbolFn {
    pub fn new(name: &str, order: i32, f: impl Fn(f64, &[f64], &[f64]) -> C64 + Send + Sync + 'static) -> SymbolFn {
        SymbolFn { name: name.into(), order, theta_dependent: false, r_dependent: false, delta: None, branch: None, f: Arc::new(f) }
    }

    pub fn xi_only(name: &str, order: i32, f: impl Fn(&[f64]) -> C64 + Send + Sync + 'static) -> SymbolFn {
        SymbolFn::new(name, order, move |_, _, xi| f(xi))
    }

    pub fn eval(&self, xi: &[f64]) -> C64 {
        (self.f)(1.0, &[], xi)
    }

    pub fn eval_at(&self, r: f64, th: &[f64], xi: &[f64]) -> C64 {
        (self.f)(r, th, xi)
    }

    /// Values on the xi lattice of a grid (theta- and r-independent symbols).
    pub fn on_lattice(&self, g: &Grid) -> Vec<C64> {
        (0..g.slab()).map(|m| self.eval(&g.xi(m))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffParams {
    pub k: f64,
    pub r1: f64,
    pub r2: f64,
    pub d1: f64,
    pub d2: f64,
}

impl CutoffParams {
    /// Thresholds hugging K^2/(1+K^2) closely enough for tolerance `delta`.
    pub fn defaults(k: f64, delta: f64) -> CutoffParams {
        if k == 0.0 {
            return CutoffParams { k, r1: 0.2, r2: 0.3, d1: 0.3, d2: 0.4 };
        }
        let k2 = k * k / (1.0 + k * k);
        let g = (0.5 * delta * delta * (1.0 + k * k).powi(2)).min(0.2);
        CutoffParams { k, r1: k2 + 0.5 * g / (1.0 + k * k), r2: k2 + g / (1.0 + k * k), d1: 0.1, d2: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        let k2 = self.k * self.k / (1.0 + self.k * self.k);
        let top = 0.5 + 0.5 * k2;
        let ok = k2 < self.r1 && self.r1 < self.r2 && self.r2 <= top + 1e-15 && 0.0 < self.d1 && self.d1 < self.d2;
        if !ok {
            return Err(LabError::InconsistentThresholds(format!(
                "need {k2:.4} < r1 < r2 <= {top:.4} and 0 < d1 < d2, got {self:?}"
            )));
        }
        if (1.0 + self.k * self.k) * self.r2 - self.k * self.k > self.d2 + 1e-15 {
            return Err(LabError::InconsistentThresholds(format!("(1+K^2) r2 - K^2 exceeds d2 = {}", self.d2)));
        }
        Ok(())
    }

    /// Inner thresholds (r0, d0) for zeta and the F_l blend.
    pub fn inner(&self) -> (f64, f64) {
        let k2 = self.k * self.k / (1.0 + self.k * self.k);
        (0.5 * (k2 + self.r1), 0.5 * self.d1)
    }
}

/// 1 on {|xi|^2 <= ra and |xi_n| <= da}, 0 on {|xi|^2 >= rb or |xi_n| >= db}.
pub fn box_cutoff(xi2: f64, xin: f64, ra: f64, rb: f64, da: f64, db: f64) -> f64 {
    (1.0 - ramp(xi2, ra, rb)) * (1.0 - ramp(xin.abs(), da, db))
}

pub fn make_cutoff(p: &CutoffParams) -> Result<SymbolFn> {
    p.validate()?;
    let p = *p;
    Ok(SymbolFn::xi_only("rho", 0, move |xi| {
        let (xi2, xin) = xi_parts(xi);
        C64::new(box_cutoff(xi2, xin, p.r1, p.r2, p.d1, p.d2), 0.0)
    }))
}

pub fn make_zeta(p: &CutoffParams) -> Result<SymbolFn> {
    p.validate()?;
    let p = *p;
    let (r0, d0) = p.inner();
    Ok(SymbolFn::xi_only("zeta", 0, move |xi| {
        let (xi2, xin) = xi_parts(xi);
        C64::new(1.0 - box_cutoff(xi2, xin, r0, p.r1, d0, p.d1), 0.0)
    }))
}

/// Smoothed imaginary-branch square root: the sign of Im tau is replaced by
/// tanh(Im tau / eta) and the branch point is rounded at scale kappa.
fn sqrt_smooth(t: C64, eta: f64, kappa: f64) -> C64 {
    let m = (t.norm_sqr() + kappa.powi(4)).sqrt();
    let re_part = (0.5 * (m + t.re)).max(0.0).sqrt();
    let im_part = (0.5 * (m - t.re)).max(0.0).sqrt();
    C64::new((t.im / eta).tanh() * re_part, im_part)
}

fn soft_floor(x: f64, c: f64, w: f64) -> f64 {
    0.5 * (x + c + ((x - c).powi(2) + w * w).sqrt())
}

#[derive(Clone, Copy, Debug)]
struct FsData {
    p: CutoffParams,
    eta: f64,
    kappa: f64,
    floor: f64,
    floor_w: f64,
}

fn fs_eval(d: &FsData, xi2: f64, xin: f64) -> C64 {
    let k = d.p.k;
    let kk = 1.0 + k * k;
    let exact_real = fbar_parts(xi2, xin, k, Branch::Real);
    let core = if k == 0.0 {
        fbar_parts(xi2, xin, k, Branch::Imag)
    } else {
        (C64::new(1.0, k * xin) + sqrt_smooth(tau_k(xi2, xin, k), d.eta, d.kappa)) / kk
    };
    let wide = box_cutoff(xi2, xin, d.p.r2, d.p.r2 + 0.5 * (1.0 - d.p.r2), d.p.d2, 2.0 * d.p.d2);
    let v = wide * core + (1.0 - wide) * exact_real;
    C64::new(soft_floor(v.re, d.floor, d.floor_w), v.im).conj()
}

/// Dense sweep of supp rho in the (|xi|^2, xi_n) plane.
fn support_sweep(p: &CutoffParams, steps: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity((steps + 1) * (steps + 3));
    for a in 0..=steps {
        let t = p.r2.sqrt() * a as f64 / steps as f64;
        for b in 0..=steps {
            let xin = -p.d2 + 2.0 * p.d2 * b as f64 / steps as f64;
            if xin * xin <= t * t {
                pts.push((t * t, xin));
            }
        }
        for xin in [1e-12, -1e-12] {
            if xin * xin <= t * t {
                pts.push((t * t, xin));
            }
        }
    }
    pts
}

/// Smoothed F_s (branch Imag) or F_l (branch Real).
pub fn smooth_f(branch: Branch, p: &CutoffParams, delta: f64) -> Result<SymbolFn> {
    p.validate()?;
    if !(delta > 0.0) {
        return Err(LabError::DeltaInfeasible { found: f64::NAN, delta });
    }
    let k = p.k;
    let kk = 1.0 + k * k;
    match branch {
        Branch::Real => {
            let p = *p;
            let (r0, d0) = p.inner();
            let mut s = SymbolFn::xi_only("F_l", 1, move |xi| {
                let (xi2, xin) = xi_parts(xi);
                let z = 1.0 - box_cutoff(xi2, xin, r0, p.r1, d0, p.d1);
                if z == 1.0 {
                    return fbar_parts(xi2, xin, k, Branch::Real).conj();
                }
                let f = if z > 0.0 { fbar_parts(xi2, xin, k, Branch::Real).conj() } else { C64::new(0.0, 0.0) };
                z * f + (1.0 - z) * C64::new(1.0 / kk, 0.0)
            });
            s.delta = Some(delta);
            s.branch = Some(Branch::Real);
            Ok(s)
        }
        Branch::Imag => {
            let mut d = FsData { p: *p, eta: 0.1 * k * p.d1, kappa: delta / 4.0, floor: 0.55 / kk, floor_w: delta / 8.0 };
            let pts = support_sweep(p, 400);
            let mut found = f64::INFINITY;
            for _ in 0..8 {
                found = pts
                    .iter()
                    .map(|(xi2, xin)| (fs_eval(&d, *xi2, *xin) - fbar_parts(*xi2, *xin, k, Branch::Imag).conj()).norm())
                    .fold(0.0, f64::max);
                if found <= delta {
                    let mut s = SymbolFn::xi_only("F_s", 1, move |xi| {
                        let (xi2, xin) = xi_parts(xi);
                        fs_eval(&d, xi2, xin)
                    });
                    s.delta = Some(delta);
                    s.branch = Some(Branch::Imag);
                    return Ok(s);
                }
                d.kappa *= 0.5;
                d.floor_w *= 0.5;
                d.eta *= 0.5;
            }
            Err(LabError::DeltaInfeasible { found, delta })
        }
    }
}

/// Uniform radial nodes on [lo, hi] with precomputed 8th-order difference
/// weights and 8-point Gauss panels per cell.
#[derive(Clone, Debug)]
pub struct RadialNodes {
    pub r: Vec<f64>,
    d1: Vec<(usize, [f64; 9])>,
    gl: Vec<(f64, f64)>,
    interp: Vec<(usize, Vec<[f64; 8]>)>,
}

impl RadialNodes {
    pub fn new(lo: f64, hi: f64, n: usize) -> RadialNodes {
        assert!(n >= 9);
        let dr = (hi - lo) / (n - 1) as f64;
        let r: Vec<f64> = (0..n).map(|i| lo + i as f64 * dr).collect();
        let d1 = (0..n)
            .map(|i| {
                let s = i.saturating_sub(4).min(n - 9);
                let w = fornberg(r[i], &r[s..s + 9], 1);
                let mut a = [0.0; 9];
                a.copy_from_slice(&w[1]);
                (s, a)
            })
            .collect();
        let (xs, ws) = gauss_legendre(8);
        let gl: Vec<(f64, f64)> = xs.iter().zip(&ws).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        let interp = (0..n - 1)
            .map(|i| {
                let s = i.saturating_sub(3).min(n - 8);
                let ws = gl
                    .iter()
                    .map(|(t, _)| {
                        let z = r[i] + t * dr;
                        let w = fornberg(z, &r[s..s + 8], 0);
                        let mut a = [0.0; 8];
                        a.copy_from_slice(&w[0]);
                        a
                    })
                    .collect();
                (s, ws)
            })
            .collect();
        RadialNodes { r, d1, gl, interp }
    }

    /// Shared tables for the radial axis of a grid.
    pub fn from_grid(g: &Grid) -> Arc<RadialNodes> {
        type Cache = Mutex<HashMap<(u64, u64, usize), Arc<RadialNodes>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let key = (g.r_lo.to_bits(), g.r_hi.to_bits(), g.nr);
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(n) = cache.lock().expect("radial cache").get(&key) {
            return n.clone();
        }
        let n = Arc::new(RadialNodes::new(g.r_lo, g.r_hi, g.nr));
        cache.lock().expect("radial cache").insert(key, n.clone());
        n
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dr(&self) -> f64 {
        self.r[1] - self.r[0]
    }

    /// d/dr of nodal samples.
    pub fn deriv(&self, u: &[C64]) -> Vec<C64> {
        self.d1
            .iter()
            .map(|(s, w)| w.iter().enumerate().map(|(k, wk)| u[s + k] * *wk).sum())
            .collect()
    }

    /// Values at the Gauss points of cell i.
    fn cell_values(&self, src: &Source, i: usize) -> [C64; 8] {
        let mut out = [C64::new(0.0, 0.0); 8];
        match src {
            Source::Samples(u) => {
                let (s, ws) = &self.interp[i];
                for (q, w) in ws.iter().enumerate() {
                    out[q] = w.iter().enumerate().map(|(k, wk)| u[s + k] * *wk).sum();
                }
            }
            Source::Func(f) => {
                let dr = self.dr();
                for (q, (t, _)) in self.gl.iter().enumerate() {
                    out[q] = f(self.r[i] + t * dr);
                }
            }
        }
        out
    }

    /// Integral of |u|^2 over [lo, hi] with the Gauss panels.
    pub fn norm_sq(&self, src: &Source) -> f64 {
        let dr = self.dr();
        (0..self.len() - 1)
            .map(|i| {
                let v = self.cell_values(src, i);
                self.gl.iter().zip(v.iter()).map(|((_, w), z)| w * z.norm_sqr()).sum::<f64>() * dr
            })
            .sum()
    }
}

/// Input profile for the integral operators.
pub enum Source<'a> {
    Samples(&'a [C64]),
    Func(&'a (dyn Fn(f64) -> C64 + Sync)),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JKind {
    J,
    JStar,
    JInv,
    JStarInv,
}

/// Per-frequency application of one J operator for symbol value `f`.
pub fn apply_j_1d(kind: JKind, f: C64, h: f64, nodes: &RadialNodes, src: &Source) -> Result<Vec<C64>> {
    let n = nodes.len();
    let dr = nodes.dr();
    match kind {
        JKind::J | JKind::JStar => {
            let u: Vec<C64> = match src {
                Source::Samples(u) => u.to_vec(),
                Source::Func(g) => nodes.r.iter().map(|r| g(*r)).collect(),
            };
            let du = nodes.deriv(&u);
            Ok((0..n)
                .map(|i| {
                    let r = nodes.r[i];
                    if kind == JKind::J {
                        f / r * u[i] + h * du[i]
                    } else {
                        f.conj() / r * u[i] - h * du[i]
                    }
                })
                .collect())
        }
        JKind::JInv => {
            if f.re <= 0.0 {
                return Err(LabError::QuadratureDivergence(f.re));
            }
            let e = f / h;
            let mut out = vec![C64::new(0.0, 0.0); n];
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..n - 1 {
                let (ra, rb) = (nodes.r[i], nodes.r[i + 1]);
                let v = nodes.cell_values(src, i);
                let mut cell = C64::new(0.0, 0.0);
                for (q, (t, w)) in nodes.gl.iter().enumerate() {
                    let tt = ra + t * dr;
                    cell += v[q] * (e * (tt / rb).ln()).exp() * *w;
                }
                acc = acc * (e * (ra / rb).ln()).exp() + cell * dr / h;
                out[i + 1] = acc;
            }
            Ok(out)
        }
        JKind::JStarInv => {
            if f.re <= 0.0 {
                return Err(LabError::QuadratureDivergence(f.re));
            }
            let e = f.conj() / h;
            let mut out = vec![C64::new(0.0, 0.0); n];
            let mut acc = C64::new(0.0, 0.0);
            for i in (0..n - 1).rev() {
                let (ra, rb) = (nodes.r[i], nodes.r[i + 1]);
                let v = nodes.cell_values(src, i);
                let mut cell = C64::new(0.0, 0.0);
                for (q, (t, w)) in nodes.gl.iter().enumerate() {
                    let tt = ra + t * dr;
                    cell += v[q] * (e * (ra / tt).ln()).exp() * *w;
                }
                acc = acc * (e * (ra / rb).ln()).exp() + cell * dr / h;
                out[i] = acc;
            }
            Ok(out)
        }
    }
}

fn per_mode<F>(u: &Field, op: F) -> Result<Field>
where
    F: Fn(usize, &[C64]) -> Result<Vec<C64>> + Sync,
{
    let g = u.grid.clone();
    let s = g.slab();
    let uh = theta_fourier(u);
    let cols: Vec<Result<Vec<C64>>> = (0..s)
        .into_par_iter()
        .map(|m| {
            let col: Vec<C64> = (0..g.nr).map(|i| uh.data[i * s + m]).collect();
            op(m, &col)
        })
        .collect();
    let mut out = SpectralField { grid: g.clone(), data: vec![C64::new(0.0, 0.0); uh.data.len()] };
    for (m, c) in cols.into_iter().enumerate() {
        let c = c?;
        for i in 0..g.nr {
            out.data[i * s + m] = c[i];
        }
    }
    Ok(theta_fourier_inverse(&out))
}

/// Apply J, J*, J^{-1} or J*^{-1} with a theta-independent symbol.
pub fn apply_j(kind: JKind, symbol: &SymbolFn, u: &Field) -> Result<Field> {
    let g = u.grid.clone();
    let nodes = RadialNodes::from_grid(&g);
    let fv = symbol.on_lattice(&g);
    per_mode(u, |m, col| apply_j_1d(kind, fv[m], g.h, &nodes, &Source::Samples(col)))
}

/// Kernel projection coefficient c with g-hat = c r^{-F/h}:
/// c = ((2 Re F - h)/h) int_1^inf u-hat(t) t^{-conj(F)/h} dt.
pub fn g_coefficient(f: C64, h: f64, nodes: &RadialNodes, src: &Source) -> Result<C64> {
    if 2.0 * f.re <= h {
        return Err(LabError::QuadratureDivergence(f.re - 0.5 * h));
    }
    let e = f.conj() / h;
    let dr = nodes.dr();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..nodes.len() - 1 {
        let v = nodes.cell_values(src, i);
        for (q, (t, w)) in nodes.gl.iter().enumerate() {
            let tt = nodes.r[i] + t * dr;
            acc += v[q] * (-e * tt.ln()).exp() * *w * dr;
        }
    }
    Ok(acc * (2.0 * f.re - h) / h)
}

/// Same, integrating a closure up to the point where the weight falls below
/// 1e-16 of its maximum.
pub fn g_coefficient_fn(f: C64, h: f64, u: &(dyn Fn(f64) -> C64 + Sync)) -> Result<C64> {
    if 2.0 * f.re <= h {
        return Err(LabError::QuadratureDivergence(f.re - 0.5 * h));
    }
    let p = f.re / h;
    let r_far = (16.0 * 10f64.ln() / p).exp().min(1e6);
    let (xs, ws) = gauss_legendre(16);
    let e = f.conj() / h;
    let mut acc = C64::new(0.0, 0.0);
    let panels = 400;
    let (la, lb) = (0.0f64, r_far.ln());
    for k in 0..panels {
        let a = la + (lb - la) * k as f64 / panels as f64;
        let b = la + (lb - la) * (k + 1) as f64 / panels as f64;
        for (x, w) in xs.iter().zip(&ws) {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let t = s.exp();
            acc += u(t) * (-e * s).exp() * t * *w * 0.5 * (b - a);
        }
    }
    Ok(acc * (2.0 * f.re - h) / h)
}

/// g together with its analytic continuation beyond the grid.
#[derive(Clone, Debug)]
pub struct GCorrection {
    pub g: Field,
    pub coef: Vec<C64>,
    pub fvals: Vec<C64>,
}

impl GCorrection {
    /// Squared L2 norm of the part of g beyond the outer radius (spectral units).
    pub fn tail_sq(&self) -> f64 {
        let g = &self.g.grid;
        let r = g.r_hi;
        self.coef
            .iter()
            .zip(&self.fvals)
            .map(|(c, f)| {
                let p = 2.0 * f.re / g.h;
                c.norm_sqr() * r.powf(1.0 - p) / (p - 1.0)
            })
            .sum::<f64>()
            * g.cell_xi()
    }

    /// Exact ||g||^2 over [1, inf): sum |c|^2 h / (2 Re F - h).
    pub fn norm_sq(&self) -> f64 {
        let g = &self.g.grid;
        let r0 = g.r_lo;
        self.coef
            .iter()
            .zip(&self.fvals)
            .map(|(c, f)| {
                let p = 2.0 * f.re / g.h;
                c.norm_sqr() * r0.powf(1.0 - p) / (p - 1.0)
            })
            .sum::<f64>()
            * g.cell_xi()
    }
}

pub fn g_correction(u: &Field, symbol: &SymbolFn) -> Result<GCorrection> {
    let g = u.grid.clone();
    if (g.r_lo - 1.0).abs() > 1e-14 {
        return Err(LabError::GridMismatch("g correction needs r_lo = 1".into()));
    }
    let nodes = RadialNodes::from_grid(&g);
    let fv = symbol.on_lattice(&g);
    let uh = theta_fourier(u);
    let s = g.slab();
    let coef: Vec<Result<C64>> = (0..s)
        .into_par_iter()
        .map(|m| {
            let col: Vec<C64> = (0..g.nr).map(|i| uh.data[i * s + m]).collect();
            g_coefficient(fv[m], g.h, &nodes, &Source::Samples(&col))
        })
        .collect();
    let coef: Vec<C64> = coef.into_iter().collect::<Result<_>>()?;
    let mut gh = SpectralField { grid: g.clone(), data: vec![C64::new(0.0, 0.0); uh.data.len()] };
    for i in 0..g.nr {
        let lr = g.r(i).ln();
        for m in 0..s {
            gh.data[i * s + m] = coef[m] * (-fv[m] / g.h * lr).exp();
        }
    }
    Ok(GCorrection { g: theta_fourier_inverse(&gh), coef, fvals: fv })
}

/// Spectral-side L2 norm squared of a field with Gauss panels on the
/// interpolated radial profiles.
pub fn gauss_norm_sq(u: &Field) -> f64 {
    let g = u.grid.clone();
    let nodes = RadialNodes::from_grid(&g);
    let uh = theta_fourier(u);
    let s = g.slab();
    (0..s)
        .map(|m| {
            let col: Vec<C64> = (0..g.nr).map(|i| uh.data[i * s + m]).collect();
            nodes.norm_sq(&Source::Samples(&col))
        })
        .sum::<f64>()
        * g.cell_xi()
}

/// G_+, G_-, G_s and zeta for the flattened operator.
#[derive(Clone, Debug)]
pub struct FactorSymbols {
    pub g_plus: SymbolFn,
    pub g_minus: SymbolFn,
    pub g_s: SymbolFn,
    pub zeta: SymbolFn,
}

/// Local coefficients (alpha, beta, gamma^2, a_j) of the flattened operator.
pub fn sigma_coefficients(opts: &OperatorOptions, r: f64, th: &[f64], h: f64) -> (f64, Vec<f64>, f64, Vec<f64>) {
    let c = coeffs_at(opts, r, th, h).expect("flattened coefficients");
    let s = opts.weight_sign;
    let alpha = -c.r.re * r / (2.0 * s);
    let beta = c.rj.iter().map(|v| -v.re * r / 2.0).collect();
    let gamma2 = c.rr.re - 1.0;
    let a = c.jj.iter().map(|v| v.re * r * r).collect();
    (alpha, beta, gamma2, a)
}

fn discriminant(alpha: f64, beta: &[f64], gamma2: f64, a: &[f64], xi: &[f64]) -> (C64, C64) {
    let bx: f64 = beta.iter().zip(xi).map(|(b, x)| b * x).sum();
    let lsym: f64 = -a.iter().zip(xi).map(|(a, x)| a * x * x).sum::<f64>();
    let p = C64::new(alpha, bx);
    (p, p * p - (1.0 + gamma2) * (alpha * alpha + lsym))
}

pub fn factor_symbols(opts: &OperatorOptions, h: f64, p: &CutoffParams, delta: f64, probe: &Grid) -> Result<FactorSymbols> {
    if opts.kind != OperatorKind::LTildeSigma {
        return Err(LabError::MissingCoefficients("factorization needs the flattened sigma operator".into()));
    }
    let zeta = make_zeta(p)?;
    let fl = smooth_f(Branch::Real, p, delta)?;
    let g_s = {
        let (z, f) = (zeta.clone(), fl.clone());
        SymbolFn::xi_only("G_s", 1, move |xi| (1.0 - z.eval(xi)) * f.eval(xi))
    };
    let theta_dep = match opts.sigma {
        SigmaMode::Model { .. } => !matches!(opts.f, FSpec::Const(_)) && opts.eps.is_finite(),
        SigmaMode::Geometric => true,
    };
    // the square-root cut must stay off supp zeta on the probe grid
    for i in 0..probe.nr {
        let r = probe.r(i);
        for m in 0..probe.slab() {
            let th = probe.theta_point(m);
            let (alpha, beta, gamma2, a) = sigma_coefficients(opts, r, &th, h);
            for q in 0..probe.slab() {
                let xi = probe.xi(q);
                if zeta.eval(&xi).re <= 0.0 {
                    continue;
                }
                let (_, d) = discriminant(alpha, &beta, gamma2, &a, &xi);
                if d.re < 0.0 && d.im.abs() <= 1e-9 * d.norm() {
                    return Err(LabError::BranchCutOnSupport(xi));
                }
            }
            if !theta_dep {
                break;
            }
        }
    }
    let make = |sign: f64, name: &str| {
        let o = opts.clone();
        let (z, gs) = (zeta.clone(), g_s.clone());
        let mut s = SymbolFn::new(name, 1, move |r, th, xi| {
            let (alpha, beta, gamma2, a) = sigma_coefficients(&o, r, th, h);
            let (pp, d) = discriminant(alpha, &beta, gamma2, &a, xi);
            let root = (pp + sign * sqrt_branch(d, Branch::Real)) / (1.0 + gamma2);
            z.eval(xi) * root + gs.eval(xi)
        });
        s.theta_dependent = theta_dep;
        s.r_dependent = true;
        s
    };
    Ok(FactorSymbols { g_plus: make(1.0, "G_+"), g_minus: make(-1.0, "G_-"), g_s, zeta })
}

/// Kohn–Nirenberg quantization T_a applied per radial node.
pub fn apply_multiplier_rt(a: &SymbolFn, u: &Field) -> Field {
    let g = u.grid.clone();
    let s = g.slab();
    let uh = theta_fourier(u);
    let xis: Vec<Vec<f64>> = (0..s).map(|m| g.xi(m)).collect();
    if !a.theta_dependent {
        let th0 = g.theta_point(0);
        let mut out = SpectralField { grid: g.clone(), data: uh.data.clone() };
        for i in 0..g.nr {
            let r = g.r(i);
            for m in 0..s {
                out.data[i * s + m] *= a.eval_at(r, &th0, &xis[m]);
            }
        }
        return theta_fourier_inverse(&out);
    }
    let n = g.dim_n() as f64;
    let thetas: Vec<Vec<f64>> = (0..s).map(|m| g.theta_point(m)).collect();
    let c = (2.0 * std::f64::consts::PI * g.h).powf(-n / 2.0) * g.cell_xi();
    let mut data = vec![C64::new(0.0, 0.0); u.data.len()];
    data.par_chunks_mut(s).enumerate().for_each(|(i, row)| {
        let r = g.r(i);
        for (m, th) in thetas.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (q, xi) in xis.iter().enumerate() {
                let ph: f64 = th.iter().zip(xi).map(|(t, x)| t * x).sum::<f64>() / g.h;
                acc += a.eval_at(r, th, xi) * uh.data[i * s + q] * C64::from_polar(1.0, ph);
            }
            row[m] = acc * c;
        }
    });
    Field { grid: g, data, support: crate::discretization::Support::General }
}

fn h_dr8(u: &Field, nodes: &RadialNodes) -> Field {
    let g = &u.grid;
    let s = g.slab();
    let mut out = u.clone();
    for m in 0..s {
        let col: Vec<C64> = (0..g.nr).map(|i| u.data[i * s + m]).collect();
        let d = nodes.deriv(&col);
        for i in 0..g.nr {
            out.data[i * s + m] = d[i] * g.h;
        }
    }
    out
}

/// (h d_r - T_{G+}/r)(1 + gamma^2)(h d_r - T_{G-}/r) v.
pub fn apply_factored(fs: &FactorSymbols, opts: &OperatorOptions, v: &Field) -> Field {
    let g = v.grid.clone();
    let nodes = RadialNodes::from_grid(&g);
    let s = g.slab();
    let step = |sym: &SymbolFn, w: &Field| {
        let t = apply_multiplier_rt(sym, w);
        let d = h_dr8(w, &nodes);
        d.map(|i, m, z| z - t.data[i * s + m] / g.r(i))
    };
    let inner = step(&fs.g_minus, v);
    let weighted = inner.map(|i, m, z| {
        let th = g.theta_point(m);
        let (_, _, gamma2, _) = sigma_coefficients(opts, g.r(i), &th, g.h);
        z * (1.0 + gamma2)
    });
    step(&fs.g_plus, &weighted)
}

/// The flattened operator with 8th-order radial and spectral angular derivatives.
pub fn apply_sigma_spectral(opts: &OperatorOptions, v: &Field) -> Field {
    let g = v.grid.clone();
    let nodes = RadialNodes::from_grid(&g);
    let s = g.slab();
    let n = g.dim_n();
    let vr = h_dr8(v, &nodes);
    let vrr = h_dr8(&vr, &nodes);
    let dth: Vec<Field> = (0..n).map(|j| crate::discretization::h_dtheta(v, j)).collect();
    let dthth: Vec<Field> = (0..n).map(|j| crate::discretization::h_dtheta(&dth[j], j)).collect();
    let drth: Vec<Field> = (0..n).map(|j| crate::discretization::h_dtheta(&vr, j)).collect();
    let mut out = v.clone();
    for i in 0..g.nr {
        let r = g.r(i);
        for m in 0..s {
            let th = g.theta_point(m);
            let c = coeffs_at(opts, r, &th, g.h).expect("coefficients");
            let k = i * s + m;
            let mut acc = c.rr * vrr.data[k] + c.r * vr.data[k] + c.c0 * v.data[k];
            for j in 0..n {
                acc += c.jj[j] * dthth[j].data[k] + c.j[j] * dth[j].data[k] + c.rj[j] * drth[j].data[k];
            }
            out.data[k] = acc;
        }
    }
    out
}

/// Band-limited test field psi(r) exp(i theta.xi0 / h) on a grid whose
/// lattice contains xi0.
pub fn plane_wave_field(g: Arc<Grid>, xi0: &[f64], radial: impl Fn(f64) -> f64) -> Field {
    let h = g.h;
    let xi0 = xi0.to_vec();
    Field::from_fn(g, move |r, th| {
        let ph: f64 = th.iter().zip(&xi0).map(|(t, x)| t * x).sum::<f64>() / h;
        C64::from_polar(radial(r), ph)
    })
}

/// Compact smooth bump exp(-1/(1-x^2)) with derivative.
pub fn bump(x: f64) -> (f64, f64) {
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let d = 1.0 - x * x;
    let v = (-1.0 / d).exp();
    (v, v * (-2.0 * x / (d * d)))
}

/// Compactly supported profile: sum of modulated bumps.
#[derive(Clone, Debug)]
pub struct Profile {
    pub terms: Vec<(C64, f64, f64, f64)>,
}

impl Profile {
    pub fn random<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> Profile {
        let count = rng.gen_range(1..=3);
        let terms = (0..count)
            .map(|_| {
                let w = rng.gen_range(0.15..0.4) * (hi - lo);
                let c = rng.gen_range(lo + w..hi - w);
                let a = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let k = rng.gen_range(-6.0..6.0);
                (a, c, w, k)
            })
            .collect();
        Profile { terms }
    }

    pub fn value(&self, r: f64) -> C64 {
        self.terms.iter().map(|(a, c, w, k)| a * bump((r - c) / w).0 * C64::from_polar(1.0, k * r)).sum()
    }

    pub fn deriv(&self, r: f64) -> C64 {
        self.terms
            .iter()
            .map(|(a, c, w, k)| {
                let (b, db) = bump((r - c) / w);
                a * C64::from_polar(1.0, k * r) * (db / w + I * k * b)
            })
            .sum()
    }
}

pub mod suite;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::substream;

    #[test]
    fn f_examples() {
        assert!((eval_f(&[0.0, 0.0], 0.0, Branch::Imag) - C64::new(1.0, 0.0)).norm() < 1e-15);
        let xi = [0.5f64.sqrt(), 0.0];
        assert!((eval_f(&xi, 1.0, Branch::Imag) - C64::new(0.5, 0.0)).norm() < 1e-7);
        for b in [Branch::Imag, Branch::Real] {
            assert!((eval_f(&[0.6, 0.8], 0.0, b) - C64::new(2.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn fbar_is_a_root() {
        for k in [0.0, 0.5, 1.0, 2.0] {
            for a in -10..=10 {
                for b in -10..=10 {
                    let xi = [0.13 * a as f64, 0.11 * b as f64];
                    for br in [Branch::Imag, Branch::Real] {
                        let fb = eval_f(&xi, k, br).conj();
                        assert!(quadratic(fb, &xi, k).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn jump_matches_formula() {
        for k in [0.5, 1.0, 1.5] {
            for xi2 in [0.6, 0.9, 1.7] {
                let kk = k * k / (1.0 + k * k);
                if xi2 > kk {
                    assert!((branch_jump(xi2, k) - branch_jump_formula(xi2, k)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn cutoff_examples_and_thresholds() {
        let p = CutoffParams::defaults(1.0, 0.05);
        let rho = make_cutoff(&p).unwrap();
        let a = (p.r1 / 2.0).sqrt();
        assert_eq!(rho.eval(&[a, 0.0]).re, 1.0);
        let b = (2.0 * p.r2).sqrt();
        assert_eq!(rho.eval(&[0.0, b.max(2.0 * p.d2)]).re, 0.0);
        let bad = CutoffParams { r1: 0.1, ..p };
        assert!(matches!(make_cutoff(&bad), Err(LabError::InconsistentThresholds(_))));
    }

    #[test]
    fn smoothed_symbol_bounds() {
        for k in [0.0, 0.5, 1.0] {
            let p = CutoffParams::defaults(k, 0.05);
            let fs = smooth_f(Branch::Imag, &p, 0.05).unwrap();
            let fl = smooth_f(Branch::Real, &p, 0.05).unwrap();
            let rho = make_cutoff(&p).unwrap();
            let lb = 0.5 / (1.0 + k * k);
            for a in -60..=60 {
                for b in -60..=60 {
                    let xi = [0.05 * a as f64, 0.05 * b as f64];
                    let v = fs.eval(&xi);
                    assert!(v.re > lb && v.norm() > lb);
                    let w = fl.eval(&xi);
                    assert!(w.re > lb);
                    if rho.eval(&xi).re < 1.0 {
                        assert_eq!(w, eval_f(&xi, k, Branch::Real));
                    }
                    if rho.eval(&xi).re > 0.0 {
                        assert!((v - eval_f(&xi, k, Branch::Imag)).norm() <= 0.05);
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_delta() {
        let p = CutoffParams { k: 1.0, r1: 0.55, r2: 0.6, d1: 0.2, d2: 0.3 };
        assert!(matches!(smooth_f(Branch::Imag, &p, 0.01), Err(LabError::DeltaInfeasible { .. })));
    }

    #[test]
    fn jinv_closed_form() {
        let nodes = RadialNodes::new(1.0, 3.0, 2048);
        let h = 0.1;
        let a = 1.5;
        let f = |r: f64| C64::new(r.powf(a), 0.0);
        let out = apply_j_1d(JKind::JInv, C64::new(1.0, 0.0), h, &nodes, &Source::Func(&f)).unwrap();
        for (i, r) in nodes.r.iter().enumerate() {
            let exact = (r.powf(a + 1.0) - r.powf(-1.0 / h)) / (1.0 + h * (a + 1.0));
            assert!((out[i].re - exact).abs() < 1e-10 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn jstar_round_trips() {
        let nodes = RadialNodes::new(1.0, 3.0, 2048);
        let mut rng = substream(3, 0);
        let p = Profile::random(&mut rng, 1.05, 2.95);
        let f = C64::new(1.3, -0.4);
        let h = 0.1;
        let u = |r: f64| p.value(r);
        let inv = apply_j_1d(JKind::JStarInv, f, h, &nodes, &Source::Func(&u)).unwrap();
        let back = apply_j_1d(JKind::JStar, f, h, &nodes, &Source::Samples(&inv)).unwrap();
        let js = |r: f64| f.conj() / r * p.value(r) - h * p.deriv(r);
        let back2 = apply_j_1d(JKind::JStarInv, f, h, &nodes, &Source::Func(&js)).unwrap();
        let scale = nodes.r.iter().map(|r| p.value(*r).norm()).fold(0.0, f64::max);
        for (i, r) in nodes.r.iter().enumerate() {
            assert!((back[i] - p.value(*r)).norm() < 1e-8 * scale);
            assert!((back2[i] - p.value(*r)).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn kernel_input_is_fixed_by_g() {
        let h = 0.1;
        let f = C64::new(1.2, 0.0);
        let u = move |r: f64| (-f / h * r.ln()).exp();
        let c = g_coefficient_fn(f, h, &u).unwrap();
        assert!((c - 1.0).norm() < 1e-10);
    }
}

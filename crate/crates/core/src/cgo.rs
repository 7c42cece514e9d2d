//! Complex geometrical optics solutions `e^{(phi+i psi)/h}(a + r) - e^{l/h} b` for the
//! logarithmic weight, with the boundary correction that vanishes on a patch E of the
//! inner face.
//!
//! Everything lives on a spherical chart box in the frame whose first axis is omega.
//! There `psi = t1`, `phi = sign * log r`, and on each half-plane `t2 = eta` the
//! complex variable is `z = r e^{i t1}`, so `phi + i psi = log z` for the plus sign.

use crate::discretization::write_clfield;
use crate::error::{LabError, Result};
use crate::geometry::{to_cartesian, FSpec, StarDomain};
use crate::numerics::{chi, chi_jet, C64, I};
use crate::potentials::WField;
use crate::sph3::{apply_continuum, axis_deriv_weights, calculus, frame_components, Op3, Potentials, MinNormSolver, SolveInfo, SphGrid};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Working box Omega' in the omega-frame with the measurement box Omega inside it.
/// Omega shares the inner face r = c with Omega'.
#[derive(Clone, Debug)]
pub struct CgoGeometry {
    pub grid: Arc<SphGrid>,
    pub omega: [f64; 3],
    /// radius of the inner face carrying E
    pub c: f64,
    /// omega-frame angles of the domain center
    pub center: (f64, f64),
    /// angular half width of Omega
    pub half: f64,
    /// inclusive node ranges of Omega along (r, t1, t2)
    pub inner: [(usize, usize); 3],
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// World unit vector from the chart angles (a, b).
pub fn direction(a: f64, b: f64) -> [f64; 3] {
    let x = to_cartesian(1.0, &[a, b]);
    [x[0], x[1], x[2]]
}

impl CgoGeometry {
    /// Omega' spans r in [c, r_max] and the angular box widened by a quarter;
    /// Omega spans r in [c, c + 0.8 (r_max - c)] and the original angular box.
    pub fn new(dom: &StarDomain, omega: [f64; 3], nr: usize, na: usize) -> Result<CgoGeometry> {
        let c = match dom.f {
            FSpec::Const(c) => c,
            _ => return Err(LabError::Config("CGO construction needs a constant inner radius".into())),
        };
        if dom.dim_n != 2 {
            return Err(LabError::Config("CGO construction is three-dimensional".into()));
        }
        let half = dom.theta_box.iter().map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
        let mid: Vec<f64> = dom.theta_box.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let d = direction(mid[0], mid[1]);
        let w = normalize(omega);
        let cos = (d[0] * w[0] + d[1] * w[1] + d[2] * w[2]).clamp(-1.0, 1.0);
        let t1c = cos.acos();
        let pad = 0.25 * half;
        let hw = half + pad;
        if t1c - hw < 0.05 || t1c + hw > PI - 0.05 {
            return Err(LabError::OmegaInsideProjection);
        }
        let e2 = normalize([d[0] - cos * w[0], d[1] - cos * w[1], d[2] - cos * w[2]]);
        let e3 = [w[1] * e2[2] - w[2] * e2[1], w[2] * e2[0] - w[0] * e2[2], w[0] * e2[1] - w[1] * e2[0]];
        let frame = [[w[0], e2[0], e3[0]], [w[1], e2[1], e3[1]], [w[2], e2[2], e3[2]]];
        let grid = SphGrid::chart_box((c, dom.r_max), nr, (t1c - hw, t1c + hw), na, (-hw, hw), na, 2, frame);
        let dr = grid.axes[0].dx;
        let dt = grid.axes[1].dx;
        let ir = ((0.8 * (dom.r_max - c)) / dr).round() as usize;
        let lo = (pad / dt).round() as usize;
        let hi = na - 1 - lo;
        if ir < 2 || lo < 1 || hi <= lo + 1 {
            return Err(LabError::GridMismatch("CGO grid too coarse to contain the measurement box".into()));
        }
        Ok(CgoGeometry { grid: Arc::new(grid), omega: w, c, center: (t1c, 0.0), half, inner: [(0, ir), (lo, hi), (lo, hi)] })
    }

    pub fn in_omega(&self, i: usize, j: usize, k: usize) -> bool {
        let [a, b, e] = self.inner;
        (a.0..=a.1).contains(&i) && (b.0..=b.1).contains(&j) && (e.0..=e.1).contains(&k)
    }

    /// Volume quadrature weight over Omega (trapezoid on its faces), zero outside.
    pub fn omega_weight(&self, i: usize, j: usize, k: usize) -> f64 {
        if !self.in_omega(i, j, k) {
            return 0.0;
        }
        let half = |m: usize, r: (usize, usize)| if m == r.0 || m == r.1 { 0.5 } else { 1.0 };
        self.grid.vol(i, j) * half(i, self.inner[0]) * half(j, self.inner[1]) * half(k, self.inner[2])
    }

    /// Nodes on the six faces of Omega with surface weights.
    pub fn omega_faces(&self) -> Vec<(usize, f64)> {
        let g = &*self.grid;
        let [ri, ai, bi] = self.inner;
        let [ar, a1, a2] = &g.axes;
        let half = |m: usize, r: (usize, usize)| if m == r.0 || m == r.1 { 0.5 } else { 1.0 };
        let mut out = Vec::new();
        for k in bi.0..=bi.1 {
            for i in ri.0..=ri.1 {
                for j in ai.0..=ai.1 {
                    let (r, t1, _) = g.coords(i, j, k);
                    let mut w = 0.0;
                    if i == ri.0 || i == ri.1 {
                        w += r * r * t1.sin() * a1.dx * a2.dx * half(j, ai) * half(k, bi);
                    }
                    if j == ai.0 || j == ai.1 {
                        w += r * t1.sin() * ar.dx * a2.dx * half(i, ri) * half(k, bi);
                    }
                    if k == bi.0 || k == bi.1 {
                        w += r * ar.dx * a1.dx * half(i, ri) * half(j, ai);
                    }
                    if w > 0.0 {
                        out.push((g.idx(i, j, k), w));
                    }
                }
            }
        }
        out
    }

    /// Boundary cutoff of E on the inner face: 1 on the central half of Omega's face.
    pub fn chi_e(&self, t1: f64, t2: f64) -> f64 {
        chi((t1 - self.center.0) / self.half) * chi((t2 - self.center.1) / self.half)
    }

    /// Inner-face nodes of E (where the cutoff equals one) with surface weights.
    pub fn e_nodes(&self) -> Vec<(usize, f64)> {
        let g = &*self.grid;
        let (_, n1, n2) = g.dims();
        let mut out = Vec::new();
        for k in 0..n2 {
            for j in 0..n1 {
                let (r, t1, t2) = g.coords(0, j, k);
                if self.chi_e(t1, t2) == 1.0 {
                    out.push((g.idx(0, j, k), r * r * t1.sin() * g.axes[1].dx * g.axes[2].dx));
                }
            }
        }
        out
    }

    fn ang_len(&self) -> usize {
        let (_, n1, n2) = self.grid.dims();
        n1 * n2
    }
}

/// Limiting Carleman weight pair `(sign * log r, d_S(theta, omega))` as plane-node values
/// of `rho = phi + i psi`.
#[derive(Clone, Debug)]
pub struct PhasePair {
    pub sign: f64,
    pub omega: [f64; 3],
    pub rho: Vec<C64>,
}

pub fn eikonal_pair(geo: &CgoGeometry, sign: f64) -> PhasePair {
    let g = &*geo.grid;
    let (nr, n1, _) = g.dims();
    let rho = (0..nr * n1)
        .map(|p| {
            let (r, t1, _) = g.coords(p / n1, p % n1, 0);
            C64::new(sign * r.ln(), t1)
        })
        .collect();
    PhasePair { sign, omega: geo.omega, rho }
}

impl PhasePair {
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.sign * x.iter().map(|v| v * v).sum::<f64>().sqrt().ln()
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        ((0..3).map(|a| x[a] * self.omega[a]).sum::<f64>() / n).clamp(-1.0, 1.0).acos()
    }

    /// Max over Omega of r |grad phi . grad psi| and r ||grad phi| - |grad psi||,
    /// with phi and psi sampled from world coordinates and differentiated on the grid.
    pub fn residuals(&self, geo: &CgoGeometry) -> (f64, f64) {
        let g = &*geo.grid;
        let sample = |f: &dyn Fn(&[f64]) -> f64| -> Vec<C64> {
            (0..g.len())
                .map(|n| {
                    let (i, j, k) = g.unidx(n);
                    C64::new(f(&g.point(i, j, k)), 0.0)
                })
                .collect()
        };
        let cp = calculus(g, &sample(&|x| self.phi(x)));
        let cs = calculus(g, &sample(&|x| self.psi(x)));
        let mut dot: f64 = 0.0;
        let mut mag: f64 = 0.0;
        for n in 0..g.len() {
            let (i, j, k) = g.unidx(n);
            if !geo.in_omega(i, j, k) {
                continue;
            }
            let (r, t1, _) = g.coords(i, j, k);
            let gp = [cp.dr[n].re, cp.d1[n].re / r, cp.d2[n].re / (r * t1.sin())];
            let gs = [cs.dr[n].re, cs.d1[n].re / r, cs.d2[n].re / (r * t1.sin())];
            let d: f64 = (0..3).map(|a| gp[a] * gs[a]).sum();
            let np = gp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ns = gs.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot = dot.max(r * d.abs());
            mag = mag.max(r * (np - ns).abs());
        }
        (dot, mag)
    }
}

/// `T f(z) = (1/pi) sum_q w_q f_q / (z - z_q)`, the midpoint rule for the Cauchy transform,
/// evaluated at the nodes themselves. The self cell is symmetric about its node and
/// contributes zero.
pub fn cauchy_transform(z: &[C64], w: &[f64], f: &[C64]) -> Vec<C64> {
    (0..z.len())
        .into_par_iter()
        .map(|p| {
            let mut acc = ZERO;
            for q in 0..z.len() {
                if q != p && w[q] != 0.0 {
                    acc += w[q] * f[q] / (z[p] - z[q]);
                }
            }
            acc / PI
        })
        .collect()
}

/// Amplitude `a = y^{-1/2} e^{Phi_W}`, `y = r sin t1`, solving the transport equation
/// `2 grad rho . grad a + (Delta rho + 2i W . grad rho) a = 0`.
#[derive(Clone, Debug)]
pub struct Amplitude {
    pub sign: f64,
    pub phi_w: Vec<C64>,
    pub a: Vec<C64>,
}

/// Slice points, area weights, and the x/y components of W on the half-plane t2 = const.
fn slice_data(g: &SphGrid, k: usize, w: &WField) -> (Vec<C64>, Vec<f64>, Vec<C64>) {
    let (nr, n1, _) = g.dims();
    let [ar, a1, _] = &g.axes;
    let t2 = g.axes[2].x(k);
    let ex = g.dir_world([1.0, 0.0, 0.0]);
    let ey = g.dir_world([0.0, t2.cos(), t2.sin()]);
    let mut z = Vec::with_capacity(nr * n1);
    let mut wt = Vec::with_capacity(nr * n1);
    let mut f = Vec::with_capacity(nr * n1);
    for i in 0..nr {
        for j in 0..n1 {
            let (r, t1, _) = g.coords(i, j, k);
            let half = |a: &crate::sph3::Axis, m: usize| if a.is_boundary(m) { 0.5 } else { 1.0 };
            z.push(C64::from_polar(r, t1));
            wt.push(r * ar.dx * a1.dx * half(ar, i) * half(a1, j));
            let x = g.point(i, j, k);
            let wv = w.w(&x);
            let wx: f64 = (0..3).map(|a| wv[a] * ex[a]).sum();
            let wy: f64 = (0..3).map(|a| wv[a] * ey[a]).sum();
            f.push(C64::new(wx, wy));
        }
    }
    (z, wt, f)
}

pub fn transport_amplitude(geo: &CgoGeometry, w: &WField, pair: &PhasePair) -> Result<Amplitude> {
    let g = &*geo.grid;
    let (nr, n1, n2) = g.dims();
    let np = nr * n1;
    let t1lo = g.axes[1].x(0);
    let t1hi = g.axes[1].x(n1 - 1);
    if t1lo <= 0.0 || t1hi >= PI {
        return Err(LabError::SliceDegenerate);
    }
    let mut phi_w = vec![ZERO; g.len()];
    if !w.is_zero() {
        let slices: Vec<Vec<C64>> = (0..n2)
            .map(|k| {
                let (z, wt, f) = slice_data(g, k, w);
                if pair.sign > 0.0 {
                    let rhs: Vec<C64> = f.iter().map(|v| -0.5 * I * v).collect();
                    cauchy_transform(&z, &wt, &rhs)
                } else {
                    let rhs: Vec<C64> = f.iter().map(|v| 0.5 * I * v).collect();
                    cauchy_transform(&z, &wt, &rhs).iter().map(|v| v.conj()).collect()
                }
            })
            .collect();
        for (k, s) in slices.into_iter().enumerate() {
            // slice order is (i, j) row-major, matching the plane layout
            phi_w[k * np..(k + 1) * np].copy_from_slice(&s);
        }
    }
    let a = (0..g.len())
        .map(|n| {
            let (i, j, k) = g.unidx(n);
            let (r, t1, _) = g.coords(i, j, k);
            (r * t1.sin()).powf(-0.5) * phi_w[n].exp()
        })
        .collect();
    Ok(Amplitude { sign: pair.sign, phi_w, a })
}

/// Gradient of rho in the orthonormal frame (e_r, e_t1, e_t2), and Delta rho.
fn rho_derivs(sign: f64, r: f64, t1: f64) -> ([C64; 3], C64) {
    let grad = [C64::new(sign / r, 0.0), C64::new(0.0, 1.0 / r), ZERO];
    let lap = C64::new(sign, t1.cos() / t1.sin()) / (r * r);
    (grad, lap)
}

/// `T_rho u = 2 grad rho . grad u + (Delta rho + 2i W . grad rho) u` by grid differences.
fn transport_apply(g: &SphGrid, sign: f64, u: &[C64], wf: Option<&[[f64; 3]]>) -> Vec<C64> {
    let c = calculus(g, u);
    (0..u.len())
        .map(|n| {
            let (i, j, k) = g.unidx(n);
            let (r, t1, _) = g.coords(i, j, k);
            let (gr, lap) = rho_derivs(sign, r, t1);
            let gu = [c.dr[n], c.d1[n] / r, c.d2[n] / (r * t1.sin())];
            let dot = gr[0] * gu[0] + gr[1] * gu[1];
            let wr = wf.map_or(ZERO, |wf| gr[0] * wf[n][0] + gr[1] * wf[n][1]);
            2.0 * dot + (lap + 2.0 * I * wr) * u[n]
        })
        .collect()
}

impl Amplitude {
    /// Max over Omega of |T_rho a| / |a|.
    pub fn transport_residual(&self, geo: &CgoGeometry, w: &WField) -> f64 {
        let g = &*geo.grid;
        let wf = (!w.is_zero()).then(|| frame_components(g, w));
        let t = transport_apply(g, self.sign, &self.a, wf.as_deref());
        let mut m: f64 = 0.0;
        for n in 0..g.len() {
            let (i, j, k) = g.unidx(n);
            if geo.in_omega(i, j, k) {
                m = m.max(t[n].norm() / self.a[n].norm());
            }
        }
        m
    }

    /// Multiply by gamma(z) (plus sign) or conj(gamma(z)) (minus sign) on every slice;
    /// both lie in the kernel of the transport derivative.
    pub fn with_gamma(&self, geo: &CgoGeometry, gamma: impl Fn(C64) -> C64) -> Amplitude {
        let g = &*geo.grid;
        let mut out = self.clone();
        for n in 0..g.len() {
            let (i, j, k) = g.unidx(n);
            let (r, t1, _) = g.coords(i, j, k);
            let v = gamma(C64::from_polar(r, t1));
            let v = if self.sign > 0.0 { v } else { v.conj() };
            out.a[n] *= v;
            out.phi_w[n] += v.ln();
        }
        out
    }
}

/// `max_Omega |(grad phi + i grad psi).(grad(conj Phi1 + Phi2) + i(W2 - W1)) + Delta(phi + i psi)|`
/// for Phi = log a of the minus-sign amplitude (W1) and the plus-sign amplitude (W2).
pub fn phi12_residual(geo: &CgoGeometry, minus: &Amplitude, plus: &Amplitude, w1: &WField, w2: &WField) -> f64 {
    let g = &*geo.grid;
    let sum: Vec<C64> = (0..g.len()).map(|n| minus.a[n].ln().conj() + plus.a[n].ln()).collect();
    let c = calculus(g, &sum);
    let f1 = frame_components(g, w1);
    let f2 = frame_components(g, w2);
    let mut m: f64 = 0.0;
    for n in 0..g.len() {
        let (i, j, k) = g.unidx(n);
        if !geo.in_omega(i, j, k) {
            continue;
        }
        let (r, t1, _) = g.coords(i, j, k);
        let (gr, lap) = rho_derivs(1.0, r, t1);
        let v = [c.dr[n] + I * (f2[n][0] - f1[n][0]), c.d1[n] / r + I * (f2[n][1] - f1[n][1])];
        m = m.max((gr[0] * v[0] + gr[1] * v[1] + lap).norm() * r * r);
    }
    m
}

/// Angular field on the (t1, t2) nodes with its angular derivatives.
#[derive(Clone, Debug)]
pub struct AngJet {
    pub v: Vec<C64>,
    pub d1: Vec<C64>,
    pub d2: Vec<C64>,
    pub d11: Vec<C64>,
    pub d22: Vec<C64>,
}

fn ang_deriv(g: &SphGrid, v: &[C64], axis: usize, order: usize) -> Vec<C64> {
    let (_, n1, n2) = g.dims();
    let a = &g.axes[axis];
    let tables: Vec<Vec<(usize, f64)>> = (0..a.n).map(|i| axis_deriv_weights(a, i, order)).collect();
    (0..n1 * n2)
        .map(|q| {
            let (k, j) = (q / n1, q % n1);
            let pos = if axis == 1 { j } else { k };
            tables[pos].iter().map(|&(m, w)| w * if axis == 1 { v[k * n1 + m] } else { v[m * n1 + j] }).sum()
        })
        .collect()
}

impl AngJet {
    pub fn new(g: &SphGrid, v: Vec<C64>) -> AngJet {
        let d1 = ang_deriv(g, &v, 1, 1);
        let d2 = ang_deriv(g, &v, 2, 1);
        let d11 = ang_deriv(g, &v, 1, 2);
        let d22 = ang_deriv(g, &v, 2, 2);
        AngJet { v, d1, d2, d11, d22 }
    }
}

/// Sphere-metric pairing `f_1 g_1 + f_2 g_2 / sin^2 t1` (bilinear).
fn gpair(f: &AngJet, g: &AngJet, q: usize, sin2: f64) -> C64 {
    f.d1[q] * g.d1[q] + f.d2[q] * g.d2[q] / sin2
}

/// Values and derivatives of a glued series at one node:
/// [v, d_s, d_ss, d_1, d_2, d_11, d_22].
pub type Jet = [C64; 7];

/// Glued series `sum_j c_j(t) chi(b_j s) s^j` evaluated with exact s-derivatives.
fn glue(coef: &[AngJet], cut: &[f64], s: f64, q: usize) -> Jet {
    let mut out = [ZERO; 7];
    for (j, a) in coef.iter().enumerate() {
        let (x, x1, x2) = chi_jet(cut[j] * s);
        if x == 0.0 && x1 == 0.0 && x2 == 0.0 {
            continue;
        }
        let jf = j as f64;
        let p = s.powi(j as i32);
        let p1 = if j >= 1 { jf * s.powi(j as i32 - 1) } else { 0.0 };
        let p2 = if j >= 2 { jf * (jf - 1.0) * s.powi(j as i32 - 2) } else { 0.0 };
        let f = x * p;
        let f1 = cut[j] * x1 * p + x * p1;
        let f2 = cut[j] * cut[j] * x2 * p + 2.0 * cut[j] * x1 * p1 + x * p2;
        out[0] += a.v[q] * f;
        out[1] += a.v[q] * f1;
        out[2] += a.v[q] * f2;
        out[3] += a.d1[q] * f;
        out[4] += a.d2[q] * f;
        out[5] += a.d11[q] * f;
        out[6] += a.d22[q] * f;
    }
    out
}

/// Boundary phase series `l = sum_j a_j(t) chi(b_j s) s^j`, s = r - c.
#[derive(Clone, Debug)]
pub struct EllSeries {
    pub order: usize,
    pub c: f64,
    pub coef: Vec<AngJet>,
    /// cutoff scales b_j
    pub cut: Vec<f64>,
    pub eps0: f64,
}

/// C^k size of an angular coefficient over the nodes selected by `mask`.
fn ck_norm(a: &AngJet, k: usize, mask: &[bool]) -> f64 {
    (0..a.v.len())
        .filter(|q| mask[*q])
        .map(|q| {
            let mut s = a.v[q].norm();
            if k >= 1 {
                s += a.d1[q].norm() + a.d2[q].norm();
            }
            if k >= 2 {
                s += a.d11[q].norm() + a.d22[q].norm();
            }
            s
        })
        .fold(0.0, f64::max)
}

fn omega_ang_mask(geo: &CgoGeometry) -> Vec<bool> {
    let (_, n1, n2) = geo.grid.dims();
    let [_, a, b] = geo.inner;
    (0..n1 * n2).map(|q| (a.0..=a.1).contains(&(q % n1)) && (b.0..=b.1).contains(&(q / n1))).collect()
}

pub fn build_ell(geo: &CgoGeometry, pair: &PhasePair, order: usize) -> Result<EllSeries> {
    let g = &*geo.grid;
    let (_, n1, _) = g.dims();
    let c = geo.c;
    let nq = geo.ang_len();
    let eps0 = 1e-3;
    let sin2: Vec<f64> = (0..nq).map(|q| g.axes[1].x(q % n1).sin().powi(2)).collect();
    let a0 = AngJet::new(g, (0..nq).map(|q| pair.rho[q % n1]).collect());
    // the root of c^2 a1^2 + <grad a0, grad a0> = 0 with decreasing real part
    let a1v: Vec<C64> = (0..nq)
        .map(|q| {
            let g0 = gpair(&a0, &a0, q, sin2[q]);
            let root = (-g0).sqrt() / c;
            if root.re > 0.0 {
                -root
            } else {
                root
            }
        })
        .collect();
    let pivot = a1v.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    if pivot < eps0 {
        return Err(LabError::PivotTooSmall(pivot));
    }
    let mut coef = vec![a0, AngJet::new(g, a1v)];
    let c2 = c * c;
    for m in 1..order {
        let d = |j: usize, coef: &[AngJet], q: usize| -> C64 { (j + 1) as f64 * coef[j + 1].v[q] };
        let next: Vec<C64> = (0..nq)
            .map(|q| {
                let mut rest = ZERO;
                // c^2 sum_{j+k=m} d_j d_k without the two terms holding d_m
                for j in 1..m {
                    rest += c2 * d(j, &coef, q) * d(m - j, &coef, q);
                }
                for j in 0..m {
                    rest += 2.0 * c * d(j, &coef, q) * d(m - 1 - j, &coef, q);
                }
                if m >= 2 {
                    for j in 0..=m - 2 {
                        rest += d(j, &coef, q) * d(m - 2 - j, &coef, q);
                    }
                }
                for j in 0..=m {
                    rest += gpair(&coef[j], &coef[m - j], q, sin2[q]);
                }
                -rest / (2.0 * c2 * (m + 1) as f64 * coef[1].v[q])
            })
            .collect();
        coef.push(AngJet::new(g, next));
    }
    let mask = omega_ang_mask(geo);
    let mut cut = Vec::with_capacity(coef.len());
    let mut b: f64 = 1.0;
    for (k, a) in coef.iter().enumerate() {
        b = b.max(ck_norm(a, k, &mask));
        cut.push(b);
    }
    Ok(EllSeries { order, c, coef, cut, eps0 })
}

impl EllSeries {
    pub fn jet(&self, s: f64, q: usize) -> Jet {
        glue(&self.coef, &self.cut, s, q)
    }

    /// max |c^2 a1^2 + <grad a0, grad a0>| over Omega's angular nodes.
    pub fn order0_defect(&self, geo: &CgoGeometry) -> f64 {
        let (_, n1, _) = geo.grid.dims();
        let mask = omega_ang_mask(geo);
        (0..mask.len())
            .filter(|q| mask[*q])
            .map(|q| {
                let sin2 = geo.grid.axes[1].x(q % n1).sin().powi(2);
                (self.c * self.c * self.coef[1].v[q] * self.coef[1].v[q] + gpair(&self.coef[0], &self.coef[0], q, sin2)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `r^2 grad l . grad l` at (s, q).
    pub fn eikonal_defect(&self, s: f64, q: usize, t1: f64) -> C64 {
        let j = self.jet(s, q);
        let r = self.c + s;
        r * r * j[1] * j[1] + j[3] * j[3] + j[4] * j[4] / t1.sin().powi(2)
    }

    /// Collar samples s_k = s0 2^{-k} inside the zone where every cutoff is one,
    /// the max eikonal defect over Omega's angular nodes at each, and the fitted order.
    pub fn residual_order(&self, geo: &CgoGeometry) -> (Vec<f64>, Vec<f64>, f64) {
        let (_, n1, _) = geo.grid.dims();
        let mask = omega_ang_mask(geo);
        let bmax = self.cut.iter().copied().fold(1.0, f64::max);
        let s0 = 0.4 / bmax;
        let ss: Vec<f64> = (0..4).map(|k| s0 / 2f64.powi(k)).collect();
        let rs: Vec<f64> = ss
            .iter()
            .map(|&s| {
                (0..mask.len())
                    .filter(|q| mask[*q])
                    .map(|q| self.eikonal_defect(s, q, geo.grid.axes[1].x(q % n1)).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        let slope = crate::numerics::loglog_slope(&ss, &rs);
        (ss, rs, slope)
    }
}

/// Collar amplitude `b = chi(b_M s) sum_m beta_m(t) s^m`.
#[derive(Clone, Debug)]
pub struct BField {
    pub beta: Vec<AngJet>,
    /// per-term cutoff scales d_j = max(1, max_{k<=j} |beta_k|^{1/k})
    pub scales: Vec<f64>,
    pub cut: f64,
}

/// Polynomial coefficients (in s, degree `deg`) of W.e_r, W.e_t1, W.e_t2 along each
/// normal line, by interpolation at Chebyshev points on [0, width].
fn w_series(geo: &CgoGeometry, w: &WField, deg: usize, width: f64) -> Vec<[Vec<f64>; 3]> {
    let g = &*geo.grid;
    let (_, n1, n2) = g.dims();
    let npt = deg + 1;
    let sig: Vec<f64> = (0..npt).map(|m| 0.5 * (1.0 - ((2 * m + 1) as f64 * PI / (2 * npt) as f64).cos())).collect();
    let vand = DMatrix::from_fn(npt, npt, |a, b| sig[a].powi(b as i32));
    let lu = vand.lu();
    (0..n1 * n2)
        .into_par_iter()
        .map(|q| {
            let (t1, t2) = (g.axes[1].x(q % n1), g.axes[2].x(q / n1));
            let basis = g.basis(t1, t2);
            let mut vals = [DMatrix::<f64>::zeros(npt, 1), DMatrix::zeros(npt, 1), DMatrix::zeros(npt, 1)];
            for (m, sg) in sig.iter().enumerate() {
                let x = g.point_at(geo.c + sg * width, t1, t2);
                let wv = w.w(&x);
                for a in 0..3 {
                    vals[a][m] = (0..3).map(|d| wv[d] * basis[a][d]).sum();
                }
            }
            let fit = |v: &DMatrix<f64>| -> Vec<f64> {
                let cs = lu.solve(v).expect("Chebyshev Vandermonde is invertible");
                (0..npt).map(|b| cs[b] / width.powi(b as i32)).collect()
            };
            [fit(&vals[0]), fit(&vals[1]), fit(&vals[2])]
        })
        .collect()
}

fn series_mul(a: &[C64], b: &[C64], deg: usize) -> Vec<C64> {
    let mut out = vec![ZERO; deg + 1];
    for (i, x) in a.iter().enumerate().take(deg + 1) {
        for (j, y) in b.iter().enumerate() {
            if i + j > deg {
                break;
            }
            out[i + j] += x * y;
        }
    }
    out
}

/// Solve `2 grad l . grad b + (Delta l + 2i W . grad l) b = 0` as a power series in s with
/// `b|_E = chi_E a|_E`.
pub fn build_b(geo: &CgoGeometry, ell: &EllSeries, w: &WField, amp: &Amplitude, order: usize) -> Result<BField> {
    let g = &*geo.grid;
    let (nr, n1, _) = g.dims();
    let np = nr * n1;
    let nq = geo.ang_len();
    let c = ell.c;
    let m_ell = ell.coef.len() - 1;
    let deg = order;
    let cut = ell.cut[m_ell];
    let ws = if w.is_zero() { None } else { Some(w_series(geo, w, deg, 1.0 / cut)) };
    let pivot = ell.coef[1].v.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    if pivot < ell.eps0 {
        return Err(LabError::PivotTooSmall(pivot));
    }
    let beta0: Vec<C64> = (0..nq)
        .map(|q| {
            let (j, k) = (q % n1, q / n1);
            let (_, t1, t2) = g.coords(0, j, k);
            geo.chi_e(t1, t2) * amp.a[k * np + j]
        })
        .collect();
    // series coefficients per angular node
    let aj = |j: usize| -> Option<&AngJet> { ell.coef.get(j) };
    let per_node: Vec<(Vec<C64>, Vec<C64>)> = (0..nq)
        .map(|q| {
            let t1 = g.axes[1].x(q % n1);
            let (sn, cs) = (t1.sin(), t1.cos());
            let coef = |f: &dyn Fn(&AngJet, usize) -> C64| -> Vec<C64> { (0..=deg).map(|j| aj(j).map_or(ZERO, |a| f(a, j))).collect() };
            let ls: Vec<C64> = (0..=deg).map(|j| aj(j + 1).map_or(ZERO, |a| (j + 1) as f64 * a.v[q])).collect();
            let lss: Vec<C64> = (0..=deg).map(|j| aj(j + 2).map_or(ZERO, |a| ((j + 2) * (j + 1)) as f64 * a.v[q])).collect();
            let l1 = coef(&|a, _| a.d1[q]);
            let l2 = coef(&|a, _| a.d2[q]);
            let lap_s = coef(&|a, _| a.d11[q] + cs / sn * a.d1[q] + a.d22[q] / (sn * sn));
            let sq = vec![C64::new(c * c, 0.0), C64::new(2.0 * c, 0.0), C64::new(1.0, 0.0)];
            let lin = vec![C64::new(c, 0.0), C64::new(1.0, 0.0)];
            let a_ser: Vec<C64> = series_mul(&sq, &ls, deg).iter().map(|v| 2.0 * v).collect();
            let mut c_ser = series_mul(&sq, &lss, deg);
            for (x, y) in c_ser.iter_mut().zip(series_mul(&lin, &ls, deg)) {
                *x += 2.0 * y;
            }
            for (x, y) in c_ser.iter_mut().zip(&lap_s) {
                *x += y;
            }
            if let Some(ws) = &ws {
                let wr: Vec<C64> = ws[q][0].iter().map(|v| C64::new(*v, 0.0)).collect();
                let w1: Vec<C64> = ws[q][1].iter().map(|v| C64::new(*v, 0.0)).collect();
                let w2: Vec<C64> = ws[q][2].iter().map(|v| C64::new(*v / sn, 0.0)).collect();
                let pr = series_mul(&sq, &wr, deg);
                let p1 = series_mul(&lin, &w1, deg);
                let p2 = series_mul(&lin, &w2, deg);
                let t = series_mul(&pr, &ls, deg);
                let t1s = series_mul(&p1, &l1, deg);
                let t2s = series_mul(&p2, &l2, deg);
                for m in 0..=deg {
                    c_ser[m] += 2.0 * I * (t[m] + t1s[m] + t2s[m]);
                }
            }
            (a_ser, c_ser)
        })
        .collect();
    let sin2: Vec<f64> = (0..nq).map(|q| g.axes[1].x(q % n1).sin().powi(2)).collect();
    let mut beta = vec![AngJet::new(g, beta0)];
    for m in 0..deg {
        let next: Vec<C64> = (0..nq)
            .map(|q| {
                let (a_ser, c_ser) = &per_node[q];
                let mut rest = ZERO;
                for j in 1..=m {
                    rest += a_ser[j] * (m - j + 1) as f64 * beta[m - j + 1].v[q];
                }
                for j in 0..=m {
                    if let Some(a) = aj(j) {
                        rest += 2.0 * gpair(a, &beta[m - j], q, sin2[q]);
                    }
                    rest += c_ser[j] * beta[m - j].v[q];
                }
                -rest / (a_ser[0] * (m + 1) as f64)
            })
            .collect();
        beta.push(AngJet::new(g, next));
    }
    let mask = omega_ang_mask(geo);
    let mut scales = Vec::with_capacity(beta.len());
    let mut d: f64 = 1.0;
    for (k, b) in beta.iter().enumerate() {
        if k >= 1 {
            d = d.max(ck_norm(b, 0, &mask).powf(1.0 / k as f64));
        }
        scales.push(d);
    }
    Ok(BField { beta, scales, cut })
}

impl BField {
    pub fn jet(&self, s: f64, q: usize) -> Jet {
        let mut j = glue(&self.beta, &self.scales, s, q);
        let (x, x1, x2) = chi_jet(self.cut * s);
        let (v, vs, vss) = (j[0], j[1], j[2]);
        j[0] = x * v;
        j[1] = self.cut * x1 * v + x * vs;
        j[2] = self.cut * self.cut * x2 * v + 2.0 * self.cut * x1 * vs + x * vss;
        for d in 3..7 {
            j[d] *= x;
        }
        j
    }
}

/// Semi-analytic residual of the collar part in units of e^{l/h}:
/// `-(grad l.grad l) b - h T_l b + h^2 L b`.
fn collar_term(l: &Jet, b: &Jet, r: f64, t1: f64, w: [f64; 3], divw: f64, q: f64, h: f64) -> C64 {
    let (sn, cs) = (t1.sin(), t1.cos());
    let r2 = r * r;
    let gl = [l[1], l[3] / r, l[4] / (r * sn)];
    let gb = [b[1], b[3] / r, b[4] / (r * sn)];
    let ll = gl[0] * gl[0] + gl[1] * gl[1] + gl[2] * gl[2];
    let lb = gl[0] * gb[0] + gl[1] * gb[1] + gl[2] * gb[2];
    let lap = |f: &Jet| f[2] + 2.0 / r * f[1] + (f[5] + cs / sn * f[3] + f[6] / (sn * sn)) / r2;
    let wl = w[0] * gl[0] + w[1] * gl[1] + w[2] * gl[2];
    let wb = w[0] * gb[0] + w[1] * gb[1] + w[2] * gb[2];
    let w2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let t = 2.0 * lb + (lap(l) + 2.0 * I * wl) * b[0];
    let lop = -lap(b) - 2.0 * I * wb - I * divw * b[0] + (w2 + q) * b[0];
    -ll * b[0] - h * t + h * h * lop
}

/// Remainder discretization. In both modes the remainder is the minimal-norm
/// solution of the discrete equation on interior rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemainderMode {
    /// residual from the analytic phases; `h^2 A - h vol T_rho` by centered differences
    SemiAnalytic,
    /// `u` solves the discrete equation exactly; remainder operator `E^{-1} A E`
    DiscreteConsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgoMode {
    Vanish,
    Free,
}

/// h-independent pieces of a CGO family.
#[derive(Clone, Debug)]
pub struct CgoParts {
    pub pair: PhasePair,
    pub amp: Amplitude,
    pub ell: Option<EllSeries>,
    pub b: Option<BField>,
    pub mode: CgoMode,
}

pub fn prepare(geo: &CgoGeometry, pot: &Potentials, sign: f64, mode: CgoMode, order: usize) -> Result<CgoParts> {
    let pair = eikonal_pair(geo, sign);
    let amp = transport_amplitude(geo, &pot.w, &pair)?;
    let (ell, b) = match mode {
        CgoMode::Free => (None, None),
        CgoMode::Vanish => {
            let ell = build_ell(geo, &pair, order)?;
            let b = build_b(geo, &ell, &pot.w, &amp, order)?;
            (Some(ell), Some(b))
        }
    };
    Ok(CgoParts { pair, amp, ell, b, mode })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CgoNorms {
    pub interior_residual: f64,
    pub r_h1: f64,
    pub r_bdry: f64,
    pub ue_norm: f64,
    pub u_norm: f64,
}

#[derive(Clone, Debug)]
pub struct CgoSolution {
    pub h: f64,
    pub sign: f64,
    pub u: Vec<C64>,
    pub r_rem: Vec<C64>,
    /// `-e^{l/h} b` part of u (zero in free mode)
    pub u_collar: Vec<C64>,
    pub norms: CgoNorms,
    pub solve: SolveInfo,
}

/// Node values of `e^{l/h} b` and the semi-analytic collar residual, both scaled by
/// `e^{-rho/h}`.
fn collar_fields(geo: &CgoGeometry, pot: &Potentials, parts: &CgoParts, h: f64, wf: Option<&[[f64; 3]]>) -> (Vec<C64>, Vec<C64>) {
    let g = &*geo.grid;
    let (nr, n1, _) = g.dims();
    let np = nr * n1;
    let (Some(ell), Some(b)) = (&parts.ell, &parts.b) else {
        return (vec![ZERO; g.len()], vec![ZERO; g.len()]);
    };
    let out: Vec<(C64, C64)> = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let (i, j, k) = g.unidx(n);
            let (r, t1, _) = g.coords(i, j, k);
            let s = r - geo.c;
            let q = k * n1 + j;
            let bj = b.jet(s, q);
            if bj.iter().all(|v| *v == ZERO) {
                return (ZERO, ZERO);
            }
            let lj = ell.jet(s, q);
            let ph = ((lj[0] - parts.pair.rho[n % np]) / h).exp();
            let x = g.point(i, j, k);
            let w = wf.map_or([0.0; 3], |wf| wf[n]);
            let divw = if wf.is_some() { pot.w.div(&x) } else { 0.0 };
            (ph * bj[0], ph * collar_term(&lj, &bj, r, t1, w, divw, pot.q.q(&x), h))
        })
        .collect();
    out.into_iter().unzip()
}

/// `vol * (h^2 L_rho)` with first-order terms by centered differences.
fn conjugated_operator(geo: &CgoGeometry, pot: &Potentials, sign: f64, h: f64, wf: Option<&[[f64; 3]]>) -> Result<Op3> {
    let g = &*geo.grid;
    let (nr, n1, n2) = g.dims();
    let np = nr * n1;
    let mut op = Op3::assemble(geo.grid.clone(), pot);
    op.scale(h * h);
    let (dr, dt) = (g.axes[0].dx, g.axes[1].dx);
    for k in 1..n2 - 1 {
        for i in 1..nr - 1 {
            for j in 1..n1 - 1 {
                let p = i * n1 + j;
                let (r, t1, _) = g.coords(i, j, k);
                let vol = g.vol(i, j);
                let (gr, lap) = rho_derivs(sign, r, t1);
                let wr = wf.map_or(ZERO, |wf| {
                    let w = wf[k * np + p];
                    gr[0] * w[0] + gr[1] * w[1]
                });
                let hv = h * vol;
                op.add_entry(k, p, p + n1, C64::new(-hv * sign / (r * dr), 0.0))?;
                op.add_entry(k, p, p - n1, C64::new(hv * sign / (r * dr), 0.0))?;
                op.add_entry(k, p, p + 1, -hv * I / (r * r * dt))?;
                op.add_entry(k, p, p - 1, hv * I / (r * r * dt))?;
                op.add_diag(k, p, -hv * (lap + 2.0 * I * wr));
            }
        }
    }
    Ok(op)
}

pub fn cgo_solution(geo: &CgoGeometry, pot: &Potentials, parts: &CgoParts, h: f64, remainder: RemainderMode) -> Result<CgoSolution> {
    let g = &*geo.grid;
    let (nr, n1, _) = g.dims();
    let np = nr * n1;
    let sign = parts.pair.sign;
    let wf_store = (!pot.w.is_zero()).then(|| frame_components(g, &pot.w));
    let wf = wf_store.as_deref();
    let a = &parts.amp.a;
    let la = apply_continuum(g, a, pot, wf);
    let ta = transport_apply(g, sign, a, wf);
    let aterm: Vec<C64> = (0..g.len()).map(|n| h * h * la[n] - h * ta[n]).collect();
    let (collar, cterm) = collar_fields(geo, pot, parts, h, wf);
    let vanish = parts.mode == CgoMode::Vanish;
    let free_face = |i: usize, _j: usize| !(vanish && i == 0);
    let (r_rem, solve) = match remainder {
        RemainderMode::SemiAnalytic => {
            let op = conjugated_operator(geo, pot, sign, h, wf)?;
            let f: Vec<C64> = (0..g.len())
                .map(|n| {
                    let (i, j, _) = g.unidx(n);
                    -g.vol(i, j) * (aterm[n] - cterm[n])
                })
                .collect();
            MinNormSolver::new(Arc::new(op), free_face)?.solve(&f)?
        }
        RemainderMode::DiscreteConsistent => {
            let mut op = Op3::assemble(geo.grid.clone(), pot);
            let e: Vec<C64> = (0..g.len()).map(|n| (parts.pair.rho[n % np] / h).exp()).collect();
            let ansatz: Vec<C64> = (0..g.len()).map(|n| e[n] * (a[n] - collar[n])).collect();
            let mut y = vec![ZERO; g.len()];
            op.apply(&ansatz, &mut y);
            let f: Vec<C64> = (0..g.len()).map(|n| -y[n] / e[n]).collect();
            op.conjugate(&parts.pair.rho, h);
            MinNormSolver::new(Arc::new(op), free_face)?.solve(&f)?
        }
    };
    let mut u = Vec::with_capacity(g.len());
    let mut u_collar = Vec::with_capacity(g.len());
    for n in 0..g.len() {
        let e = (parts.pair.rho[n % np] / h).exp();
        u_collar.push(-e * collar[n]);
        u.push(e * (a[n] + r_rem[n]) - e * collar[n]);
    }
    let norms = measure(geo, h, &aterm, &r_rem, &u);
    Ok(CgoSolution { h, sign, u, r_rem, u_collar, norms, solve })
}

fn measure(geo: &CgoGeometry, h: f64, aterm: &[C64], r_rem: &[C64], u: &[C64]) -> CgoNorms {
    let g = &*geo.grid;
    let cr = calculus(g, r_rem);
    let mut res2 = 0.0;
    let mut h1 = 0.0;
    let mut u2 = 0.0;
    for n in 0..g.len() {
        let (i, j, k) = g.unidx(n);
        let w = geo.omega_weight(i, j, k);
        if w == 0.0 {
            continue;
        }
        let (r, t1, _) = g.coords(i, j, k);
        let grad2 = cr.dr[n].norm_sqr() + cr.d1[n].norm_sqr() / (r * r) + cr.d2[n].norm_sqr() / (r * t1.sin()).powi(2);
        res2 += w * aterm[n].norm_sqr();
        h1 += w * (r_rem[n].norm_sqr() + h * h * grad2);
        u2 += w * u[n].norm_sqr();
    }
    let bd: f64 = geo.omega_faces().iter().map(|&(n, w)| w * r_rem[n].norm_sqr()).sum();
    let ue: f64 = geo.e_nodes().iter().map(|&(n, w)| w * u[n].norm_sqr()).sum();
    let u_norm = u2.sqrt();
    CgoNorms { interior_residual: res2.sqrt(), r_h1: h1.sqrt(), r_bdry: bd.sqrt(), ue_norm: ue.sqrt() / u_norm, u_norm }
}

/// Write u, a + r and the collar part as `CLFIELD v1` files (r-major node order).
pub fn dump_fields(dir: &Path, geo: &CgoGeometry, sol: &CgoSolution, amp: &Amplitude) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let g = &*geo.grid;
    let (nr, n1, n2) = g.dims();
    let reorder = |v: &[C64]| -> Vec<C64> {
        let mut out = Vec::with_capacity(v.len());
        for i in 0..nr {
            for j in 0..n1 {
                for k in 0..n2 {
                    out.push(v[g.idx(i, j, k)]);
                }
            }
        }
        out
    };
    let ar: Vec<C64> = (0..g.len()).map(|n| amp.a[n] + sol.r_rem[n]).collect();
    let side = g.axes[1].dx * (n1 - 1) as f64;
    let r_max = g.axes[0].x(nr - 1);
    for (name, data) in [("u", &sol.u), ("amplitude", &ar), ("collar", &sol.u_collar)] {
        let path = dir.join(format!("{name}_h{}.clf", sol.h));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_clfield(&mut f, &[nr, n1, n2], sol.h, r_max, side, &reorder(data))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_shell;

    fn geo(nr: usize, na: usize) -> CgoGeometry {
        CgoGeometry::new(&default_shell(), direction(PI / 2.0, 0.0), nr, na).unwrap()
    }

    #[test]
    fn omega_inside_is_rejected() {
        let e = CgoGeometry::new(&default_shell(), direction(PI / 2.0, PI / 2.0), 21, 11).unwrap_err();
        assert!(matches!(e, LabError::OmegaInsideProjection));
    }

    #[test]
    fn phases_solve_the_eikonal_system() {
        let g = geo(41, 21);
        let p = eikonal_pair(&g, 1.0);
        let (d, m) = p.residuals(&g);
        assert!(d < 1e-5 && m < 1e-5, "{d} {m}");
        let q = eikonal_pair(&g, -1.0);
        let (d, m) = q.residuals(&g);
        assert!(d < 1e-5 && m < 1e-5, "{d} {m}");
        // psi is the great-circle distance to omega
        let x = g.grid.point(3, 4, 5);
        let (_, t1, _) = g.grid.coords(3, 4, 5);
        assert!((p.psi(&x) - t1).abs() < 1e-12);
    }

    #[test]
    fn cauchy_transform_inverts_dbar() {
        // g = (1 - |z - z0|^2 / R^2)^3 on a disk, f = dbar g
        let (z0, rad) = (C64::new(1.5, 1.0), 0.45);
        let n = 120;
        let d = 2.0 * rad / n as f64;
        let mut z = Vec::new();
        let mut w = Vec::new();
        let mut f = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let p = z0 + C64::new(-rad + (a as f64 + 0.5) * d, -rad + (b as f64 + 0.5) * d);
                let q = (p - z0).norm_sqr() / (rad * rad);
                z.push(p);
                w.push(d * d);
                // dbar (1 - q)^3 = -3 (1 - q)^2 (z - z0) / R^2
                f.push(if q < 1.0 { -3.0 * (1.0 - q).powi(2) * (p - z0) / (rad * rad) } else { ZERO });
            }
        }
        let t = cauchy_transform(&z, &w, &f);
        let mut err: f64 = 0.0;
        for (p, v) in z.iter().zip(&t) {
            let q = (p - z0).norm_sqr() / (rad * rad);
            let exact = if q < 1.0 { (1.0 - q).powi(3) } else { 0.0 };
            err = err.max((v - exact).norm());
        }
        assert!(err < 2e-2, "{err}");
    }

    #[test]
    fn amplitude_solves_transport() {
        let g = geo(41, 21);
        let w = WField::Vortex { amp: 0.5, center: vec![0.0, 0.0, 1.5], width: 0.4 };
        for sign in [1.0, -1.0] {
            let p = eikonal_pair(&g, sign);
            let free = transport_amplitude(&g, &WField::Zero, &p).unwrap();
            assert!(free.transport_residual(&g, &WField::Zero) < 1e-5);
            let gam = free.with_gamma(&g, |z| (0.3 * z).exp() + z * z);
            assert!(gam.transport_residual(&g, &WField::Zero) < 1e-4);
            let amp = transport_amplitude(&g, &w, &p).unwrap();
            let res = amp.transport_residual(&g, &w);
            assert!(res < 0.1, "sign {sign}: {res}");
            assert!(amp.a.iter().all(|v| v.norm() > 0.0));
        }
    }

    #[test]
    fn ell_series_matches_reflected_logarithm() {
        let g = geo(41, 21);
        let p = eikonal_pair(&g, 1.0);
        let ell = build_ell(&g, &p, 6).unwrap();
        // l = log c + i t1 - log(1 + s/c) term by term
        for j in 1..=6 {
            let want = -(-1f64).powi(j as i32 + 1) / (j as f64 * g.c.powi(j as i32));
            let got = ell.coef[j].v[7 * 21 + 10];
            assert!((got - want).norm() < 1e-9, "{j} {got} {want}");
        }
        assert!(ell.order0_defect(&g) < 1e-9);
        assert!(ell.cut.windows(2).all(|w| w[1] >= w[0]) && ell.cut[0] >= 1.0);
        let (_, _, slope) = ell.residual_order(&g);
        assert!(slope >= 4.0, "{slope}");
    }

    #[test]
    fn b_series_matches_closed_form() {
        let g = geo(41, 41);
        let pot = Potentials::free();
        let parts = prepare(&g, &pot, 1.0, CgoMode::Vanish, 5).unwrap();
        let b = parts.b.as_ref().unwrap();
        // b = chi_E (r sin t1)^{-1/2} where chi_E = 1 and the collar cutoff is one
        let (_, n1, _) = g.grid.dims();
        let (j, k) = (20, 20);
        let q = k * n1 + j;
        let t1 = g.grid.axes[1].x(j);
        let s = 0.05;
        let got = b.jet(s, q)[0];
        let want = ((g.c + s) * t1.sin()).powf(-0.5);
        assert!((got - want).norm() < 1e-6, "{got} {want}");
    }
}

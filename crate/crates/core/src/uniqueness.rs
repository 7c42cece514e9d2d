//! Identity pipeline for partial-data uniqueness: the integral identity between the
//! boundary pairing and the interior terms, their growth in h, slice and plane
//! integrals of the potential differences, Cauchy extension of slice boundary data and
//! the difference detector.

use crate::cgo::{cgo_solution, prepare, Amplitude, CgoGeometry, CgoMode, RemainderMode};
use crate::dnmap::PotentialPair;
use crate::error::{LabError, Result};
use crate::numerics::{gauss_legendre, loglog_slope, substream};
use crate::potentials::{PsiSpec, QField, WField};
use crate::sph3::{Op3, SphGrid, Solver};
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Growth exponents of the five identity terms.
pub const TERM_EXPONENTS: [f64; 5] = [-0.5, -1.0, 0.0, 0.0, 1.0];
pub const EXPONENT_SLACK: f64 = 0.3;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn axpy(a: f64, x: V3, y: V3) -> V3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn unit(v: V3) -> Option<V3> {
    let n = dot(v, v).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    Gauge,
    Curl,
    QBump,
}

impl PairKind {
    pub fn parse(s: &str) -> Option<PairKind> {
        match s {
            "gauge" => Some(PairKind::Gauge),
            "curl" => Some(PairKind::Curl),
            "qbump" => Some(PairKind::QBump),
            _ => None,
        }
    }
}

fn chart_range(g: &SphGrid, a: usize) -> (f64, f64) {
    let ax = &g.axes[a];
    (ax.x(0), ax.x(ax.n - 1))
}

/// World direction of the domain center.
pub fn domain_direction(geo: &CgoGeometry) -> V3 {
    geo.grid.dir_world(SphGrid::frame_point(1.0, geo.center.0, geo.center.1))
}

/// Gauge function vanishing on the whole boundary of the chart box, with vanishing
/// normal derivative everywhere except on the outer face.
pub fn gauge_function(geo: &CgoGeometry, amp: f64) -> PsiSpec {
    let g = &*geo.grid;
    PsiSpec::ChartBump { amp, r_in: geo.c, r_out: chart_range(g, 0).1, frame: g.frame, t1: chart_range(g, 1), t2: chart_range(g, 2) }
}

/// Reference potentials (W1, q1) shared by the canonical pairs.
pub fn base_potentials(geo: &CgoGeometry) -> (WField, QField) {
    let d = domain_direction(geo);
    let c = geo.c;
    let r = 0.5 * (c + chart_range(&geo.grid, 0).1);
    let w = WField::Vortex { amp: 0.5, center: (0..3).map(|a| r * d[a]).collect(), width: 0.4 };
    let q = QField::Bump { amp: 0.3, center: (0..3).map(|a| (r - 0.1) * d[a]).collect(), width: 0.3 };
    (w, q)
}

/// Pair (W, q) and (W + grad psi, q).
pub fn gauge_partner(geo: &CgoGeometry, w: &WField, q: &QField, amp: f64) -> PotentialPair {
    PotentialPair {
        w1: w.clone(),
        w2: WField::Sum(vec![w.clone(), WField::Gradient(gauge_function(geo, amp))]),
        q1: q.clone(),
        q2: q.clone(),
    }
}

pub fn canonical_pair(geo: &CgoGeometry, kind: PairKind) -> PotentialPair {
    let (w1, q1) = base_potentials(geo);
    let d = domain_direction(geo);
    let side = geo.grid.dir_world([0.0, 0.0, 1.0]);
    let r = 0.5 * (geo.c + chart_range(&geo.grid, 0).1);
    match kind {
        PairKind::Gauge => gauge_partner(geo, &w1, &q1, 2.5),
        PairKind::Curl => {
            let center: Vec<f64> = (0..3).map(|a| (r + 0.1) * d[a] + 0.3 * side[a]).collect();
            let extra = WField::Vortex { amp: 1.0, center, width: 0.35 };
            PotentialPair { w1: w1.clone(), w2: WField::Sum(vec![w1, extra]), q1: q1.clone(), q2: q1 }
        }
        PairKind::QBump => {
            let center: Vec<f64> = (0..3).map(|a| r * d[a] + 0.1 * side[a]).collect();
            let extra = QField::Bump { amp: 1.0, center, width: 0.25 };
            PotentialPair { w1: w1.clone(), w2: w1, q1: q1.clone(), q2: QField::Sum(vec![q1, extra]) }
        }
    }
}

/// Terms of the identity at one h. Term one is split into its part on U and on the
/// back face.
#[derive(Clone, Debug)]
pub struct IdentityTerms {
    pub h: f64,
    pub terms: [C64; 5],
    pub t1_u: C64,
    pub t1_back: C64,
    pub residual: f64,
    pub solve_residual: f64,
}

/// Shared h-independent state of the identity computation.
pub struct IdentitySetup {
    pub geo: CgoGeometry,
    pub pair: PotentialPair,
    pub order: usize,
    a1: Arc<Op3>,
    a2: Op3,
    solver: Solver,
    minus: crate::cgo::CgoParts,
    plus: crate::cgo::CgoParts,
    zq: Vec<f64>,
}

impl IdentitySetup {
    pub fn new(geo: &CgoGeometry, pair: &PotentialPair, order: usize) -> Result<IdentitySetup> {
        let g = geo.grid.clone();
        let p1 = pair.first();
        let p2 = pair.second();
        let a1 = Arc::new(Op3::assemble(g.clone(), &p1));
        let a2 = Op3::assemble(g.clone(), &p2);
        let solver = Solver::new(a1.clone())?;
        let minus = prepare(geo, &p1, -1.0, CgoMode::Free, order)?;
        let plus = prepare(geo, &p2, 1.0, CgoMode::Vanish, order)?;
        let zq = (0..g.len())
            .map(|n| {
                let (i, j, k) = g.unidx(n);
                let x = g.point(i, j, k);
                let w1 = pair.w1.w(&x);
                let w2 = pair.w2.w(&x);
                let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
                g.vol(i, j) * (sq(&w2) - sq(&w1) + pair.q2.q(&x) - pair.q1.q(&x))
            })
            .collect();
        Ok(IdentitySetup { geo: geo.clone(), pair: pair.clone(), order, a1, a2, solver, minus, plus, zq })
    }

    pub fn amplitudes(&self) -> (&Amplitude, &Amplitude) {
        (&self.minus.amp, &self.plus.amp)
    }

    /// Boundary pairing of `u1` against the Neumann defect of `w - u2~` and the four
    /// interior terms.
    pub fn terms(&self, h: f64) -> Result<IdentityTerms> {
        let g = &*self.geo.grid;
        let n = g.len();
        let (nr, _, _) = g.dims();
        let u1 = cgo_solution(&self.geo, &self.pair.first(), &self.minus, h, RemainderMode::DiscreteConsistent)?;
        let u2t = cgo_solution(&self.geo, &self.pair.second(), &self.plus, h, RemainderMode::DiscreteConsistent)?;
        let ur = &u2t.u_collar;
        let u2: Vec<C64> = u2t.u.iter().zip(ur).map(|(a, b)| a - b).collect();
        let (w, info) = self.solver.solve_dirichlet(&u2t.u, &vec![ZERO; n])?;
        let v: Vec<C64> = w.iter().zip(&u2t.u).map(|(a, b)| a - b).collect();
        let mut y = vec![ZERO; n];
        self.a1.apply(&v, &mut y);
        let diff = |u: &[C64]| {
            let mut p = vec![ZERO; n];
            let mut q = vec![ZERO; n];
            self.a2.apply(u, &mut p);
            self.a1.apply(u, &mut q);
            p.iter().zip(&q).map(|(a, b)| a - b).collect::<Vec<C64>>()
        };
        let d2 = diff(&u2);
        let dr = diff(ur);
        let mut t = [ZERO; 5];
        let (mut t1_u, mut t1_back) = (ZERO, ZERO);
        for m in 0..n {
            let (i, j, k) = g.unidx(m);
            let c1 = u1.u[m].conj();
            if g.is_boundary(i, j, k) {
                let v = -c1 * y[m];
                if i == nr - 1 {
                    t1_back += v;
                } else {
                    t1_u += v;
                }
            } else {
                let z = self.zq[m];
                t[1] += c1 * (d2[m] - z * u2[m]);
                t[2] += c1 * z * u2[m];
                t[3] += c1 * (dr[m] - z * ur[m]);
                t[4] += c1 * z * ur[m];
            }
        }
        t[0] = t1_u + t1_back;
        let scale = t.iter().map(|v| v.norm()).fold(1e-300, f64::max);
        let residual = (t[0] - t[1] - t[2] - t[3] - t[4]).norm() / scale;
        let solve_residual = u1.solve.residual.max(u2t.solve.residual).max(info.residual);
        Ok(IdentityTerms { h, terms: t, t1_u, t1_back, residual, solve_residual })
    }
}

/// Relative identity residual of a pair at one h.
pub fn greens_identity_check(geo: &CgoGeometry, pair: &PotentialPair, h: f64, order: usize) -> Result<IdentityTerms> {
    IdentitySetup::new(geo, pair, order)?.terms(h)
}

#[derive(Clone, Debug)]
pub struct TermScaling {
    pub rows: Vec<IdentityTerms>,
    /// `None` for terms that vanish across the h list
    pub exponents: [Option<f64>; 5],
    /// largest |term one on U| relative to the largest term; small when the partial
    /// boundary data of the pair agree
    pub hypothesis_defect: f64,
}

impl TermScaling {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn hypothesis_holds(&self) -> bool {
        self.hypothesis_defect < 0.1
    }

    pub fn exponents_ok(&self) -> bool {
        self.exponents.iter().zip(TERM_EXPONENTS).all(|(e, b)| e.map_or(true, |e| e >= b - EXPONENT_SLACK))
    }
}

pub fn term_scalings(geo: &CgoGeometry, pair: &PotentialPair, h_list: &[f64], order: usize) -> Result<TermScaling> {
    if h_list.len() < 3 {
        return Err(LabError::InsufficientHPoints(h_list.len()));
    }
    let setup = IdentitySetup::new(geo, pair, order)?;
    let rows: Vec<IdentityTerms> = h_list.par_iter().map(|&h| setup.terms(h)).collect::<Result<_>>()?;
    Ok(scaling_from_rows(rows))
}

pub fn scaling_from_rows(rows: Vec<IdentityTerms>) -> TermScaling {
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let top = rows.iter().flat_map(|r| r.terms.iter().map(|v| v.norm())).fold(0.0, f64::max);
    let mut exponents = [None; 5];
    for (a, e) in exponents.iter_mut().enumerate() {
        let ys: Vec<f64> = rows.iter().map(|r| r.terms[a].norm()).collect();
        if ys.iter().all(|&y| y > 1e-10 * top) {
            *e = Some(loglog_slope(&hs, &ys));
        }
    }
    let hypothesis_defect = rows.iter().map(|r| r.t1_u.norm() / r.terms.iter().map(|v| v.norm()).fold(1e-300, f64::max)).fold(0.0, f64::max);
    TermScaling { rows, exponents, hypothesis_defect }
}

/// Plane `v0 + span(e_s, e_t)` through the region with the chart z = s + i t.
#[derive(Clone, Copy, Debug)]
pub struct SliceFrame {
    pub omega: V3,
    pub v0: V3,
    pub e_s: V3,
    pub e_t: V3,
}

impl SliceFrame {
    pub fn new(omega: V3, eta: V3, v0: V3) -> Result<SliceFrame> {
        let e_s = unit(omega).ok_or(LabError::SliceDegenerate)?;
        let e_t = unit(axpy(-dot(eta, e_s), e_s, eta)).ok_or(LabError::SliceDegenerate)?;
        Ok(SliceFrame { omega: e_s, v0, e_s, e_t })
    }

    /// Frame through the origin spanned by omega and the domain direction.
    pub fn aligned(geo: &CgoGeometry) -> Result<SliceFrame> {
        SliceFrame::new(geo.omega, domain_direction(geo), [0.0; 3])
    }

    pub fn point(&self, s: f64, t: f64) -> V3 {
        axpy(t, self.e_t, axpy(s, self.e_s, self.v0))
    }
}

/// Membership in the chart box of the grid.
pub fn region_contains(g: &SphGrid, x: &[f64]) -> bool {
    let q = &g.frame;
    let y: Vec<f64> = (0..3).map(|c| (0..3).map(|r| q[r][c] * x[r]).sum()).collect();
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    if r == 0.0 {
        return false;
    }
    let t1 = (y[0] / r).clamp(-1.0, 1.0).acos();
    let t2 = y[2].atan2(y[1]);
    [r, t1, t2].iter().enumerate().all(|(a, &v)| {
        let (lo, hi) = chart_range(g, a);
        v >= lo && v <= hi
    })
}

/// Row-wise quadrature over the part of a plane inside the region.
#[derive(Clone, Copy, Debug)]
pub struct PlaneQuad {
    pub rows: usize,
    pub samples: usize,
    pub gl: usize,
    pub panel: f64,
}

impl Default for PlaneQuad {
    fn default() -> Self {
        PlaneQuad { rows: 240, samples: 480, gl: 8, panel: 0.1 }
    }
}

fn intervals(inside: &dyn Fn(f64) -> bool, a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let edge = |mut lo: f64, mut hi: f64, lo_in: bool| {
        for _ in 0..60 {
            let m = 0.5 * (lo + hi);
            if inside(m) == lo_in {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    };
    let ds = (b - a) / n as f64;
    let mut out = Vec::new();
    let mut prev = inside(a);
    let mut start = a;
    for m in 1..=n {
        let s = a + m as f64 * ds;
        let cur = inside(s);
        if cur != prev {
            let e = edge(s - ds, s, prev);
            if cur {
                start = e;
            } else {
                out.push((start, e));
            }
        }
        prev = cur;
    }
    if prev {
        out.push((start, b));
    }
    out
}

impl PlaneQuad {
    /// Integral of `f(s, t, x)` over the region part of the plane with t in `t_range`.
    pub fn integrate<const K: usize>(&self, g: &SphGrid, frame: &SliceFrame, t_range: (f64, f64), f: &(dyn Fn(f64, f64, V3) -> [f64; K] + Sync)) -> [f64; K] {
        let reach = chart_range(g, 0).1 + dot(frame.v0, frame.v0).sqrt() + 0.05;
        let (t0, t1) = (t_range.0.max(-reach), t_range.1.min(reach));
        let dt = (t1 - t0) / self.rows as f64;
        let (xs, ws) = gauss_legendre(self.gl);
        let rows: Vec<[f64; K]> = (0..self.rows)
            .map(|m| {
                let t = t0 + (m as f64 + 0.5) * dt;
                let inside = |s: f64| region_contains(g, &frame.point(s, t));
                let mut acc = [0.0; K];
                for (a, b) in intervals(&inside, -reach, reach, self.samples) {
                    let np = ((b - a) / self.panel).ceil().max(1.0) as usize;
                    let hp = (b - a) / np as f64;
                    for p in 0..np {
                        let c = a + (p as f64 + 0.5) * hp;
                        for (x, w) in xs.iter().zip(&ws) {
                            let s = c + 0.5 * hp * x;
                            let v = f(s, t, frame.point(s, t));
                            for k in 0..K {
                                acc[k] += 0.5 * hp * w * v[k] * dt;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = [0.0; K];
        for r in rows {
            for k in 0..K {
                out[k] += r[k];
            }
        }
        out
    }
}

fn delta_w(pair: &PotentialPair, x: V3) -> V3 {
    let a = pair.w2.w(&x);
    let b = pair.w1.w(&x);
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Largest relative anti-holomorphic derivative of `g` on sample points of the
/// slice box, by fourth-order differences.
pub fn dbar_residual(g: &dyn Fn(C64) -> C64, reach: f64) -> f64 {
    let d = 1e-3;
    let fd = |z: C64, e: C64| (-g(z + 2.0 * d * e) + 8.0 * g(z + d * e) - 8.0 * g(z - d * e) + g(z - 2.0 * d * e)) / (12.0 * d);
    let mut top: f64 = 1e-300;
    let mut res: f64 = 0.0;
    for a in 0..5 {
        for b in 0..5 {
            let z = C64::new(reach * (a as f64 / 2.0 - 1.0), reach * (0.1 + 0.2 * b as f64));
            let dbar = 0.5 * (fd(z, C64::new(1.0, 0.0)) + C64::i() * fd(z, C64::i()));
            res = res.max(dbar.norm());
            top = top.max(g(z).norm()).max(fd(z, C64::new(1.0, 0.0)).norm());
        }
    }
    res / top
}

pub const DBAR_GATE: f64 = 1e-8;

/// Integral over the half-plane slice t > 0 of `g(z) dW.(e_s + i e_t)` in the chart
/// measure ds dt.
pub fn slice_integral(geo: &CgoGeometry, pair: &PotentialPair, frame: &SliceFrame, g: &(dyn Fn(C64) -> C64 + Sync), quad: &PlaneQuad) -> Result<C64> {
    let grid = &*geo.grid;
    let reach = chart_range(grid, 0).1 + dot(frame.v0, frame.v0).sqrt();
    let r = dbar_residual(g, reach);
    if r > DBAR_GATE {
        return Err(LabError::NotHolomorphic(r));
    }
    let v = quad.integrate(grid, frame, (0.0, f64::INFINITY), &|s, t, x| {
        let dw = delta_w(pair, x);
        let val = g(C64::new(s, t)) * C64::new(dot(dw, frame.e_s), dot(dw, frame.e_t));
        [val.re, val.im]
    });
    Ok(C64::new(v[0], v[1]))
}

/// Plane integrals of dW.e_s, dW.e_t over the full plane and of dq over the half-plane
/// slice t > 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlaneIntegrals {
    pub w_s: f64,
    pub w_t: f64,
    pub q: f64,
}

pub fn plane_integrals(geo: &CgoGeometry, pair: &PotentialPair, frame: &SliceFrame, quad: &PlaneQuad) -> PlaneIntegrals {
    let grid = &*geo.grid;
    let w = quad.integrate(grid, frame, (f64::NEG_INFINITY, f64::INFINITY), &|_, _, x| {
        let dw = delta_w(pair, x);
        [dot(dw, frame.e_s), dot(dw, frame.e_t)]
    });
    let q = quad.integrate(grid, frame, (0.0, f64::INFINITY), &|_, _, x| [pair.q2.q(&x) - pair.q1.q(&x)]);
    PlaneIntegrals { w_s: w[0], w_t: w[1], q: q[0] }
}

/// Frame family: the aligned frame followed by seeded perturbations of omega, of the
/// slice direction and of the origin.
pub fn sample_frames(geo: &CgoGeometry, n: usize, seed: u64) -> Result<Vec<SliceFrame>> {
    let d = domain_direction(geo);
    (0..n)
        .map(|f| {
            if f == 0 {
                return SliceFrame::aligned(geo);
            }
            let mut rng = substream(seed, f as u64);
            let mut u = || rng.gen_range(-1.0..1.0);
            let om = unit([geo.omega[0] + 0.15 * u(), geo.omega[1] + 0.15 * u(), geo.omega[2] + 0.15 * u()]).ok_or(LabError::SliceDegenerate)?;
            let e = unit(axpy(-dot(d, om), om, d)).ok_or(LabError::SliceDegenerate)?;
            let beta = 0.4 * u();
            let eta = axpy(beta.sin(), cross(om, e), axpy(beta.cos(), e, [0.0; 3]));
            let v0 = [0.1 * u() / 3f64.sqrt(), 0.1 * u() / 3f64.sqrt(), 0.1 * u() / 3f64.sqrt()];
            SliceFrame::new(om, eta, v0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Indistinguishable,
    DwDiffer,
    QDiffer,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Indistinguishable => "indistinguishable",
            Verdict::DwDiffer => "dW_differ",
            Verdict::QDiffer => "q_differ",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DetectProtocol {
    pub frames: usize,
    pub seed: u64,
    pub factor: f64,
    /// absolute floor for the q null
    pub q_floor: f64,
    pub quad: PlaneQuad,
}

impl Default for DetectProtocol {
    fn default() -> Self {
        DetectProtocol { frames: 16, seed: 0, factor: 10.0, q_floor: 1e-10, quad: PlaneQuad::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SliceRow {
    pub frame: usize,
    pub slice: SliceFrame,
    pub pair: PlaneIntegrals,
    pub null: PlaneIntegrals,
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub verdict: Verdict,
    pub rows: Vec<SliceRow>,
    pub w_max: f64,
    pub w_null: f64,
    pub q_max: f64,
    pub q_null: f64,
}

/// Compares plane integrals of the pair against those of a gauge pair built on W1,
/// frame by frame.
pub fn detect_difference(geo: &CgoGeometry, pair: &PotentialPair, protocol: &DetectProtocol) -> Result<Detection> {
    let frames = sample_frames(geo, protocol.frames, protocol.seed)?;
    let null_pair = gauge_partner(geo, &pair.w1, &pair.q1, 1.0);
    let rows: Vec<SliceRow> = frames
        .par_iter()
        .enumerate()
        .map(|(f, sl)| SliceRow { frame: f, slice: *sl, pair: plane_integrals(geo, pair, sl, &protocol.quad), null: plane_integrals(geo, &null_pair, sl, &protocol.quad) })
        .collect();
    let wmag = |p: &PlaneIntegrals| p.w_s.abs().max(p.w_t.abs());
    let w_max = rows.iter().map(|r| wmag(&r.pair)).fold(0.0, f64::max);
    let w_null = rows.iter().map(|r| wmag(&r.null)).fold(0.0, f64::max);
    let q_max = rows.iter().map(|r| r.pair.q.abs()).fold(0.0, f64::max);
    let q_null = rows.iter().map(|r| r.null.q.abs()).fold(0.0, f64::max);
    let verdict = if w_max > protocol.factor * w_null {
        Verdict::DwDiffer
    } else if q_max > protocol.factor * q_null.max(protocol.q_floor) {
        Verdict::QDiffer
    } else {
        Verdict::Indistinguishable
    };
    Ok(Detection { verdict, rows, w_max, w_null, q_max, q_null })
}

/// Closed curve as samples with trapezoid line elements.
#[derive(Clone, Debug)]
pub struct Curve {
    pub z: Vec<C64>,
    pub dz: Vec<C64>,
}

impl Curve {
    pub fn circle(center: C64, radius: f64, n: usize) -> Curve {
        let z = (0..n).map(|k| center + C64::from_polar(radius, 2.0 * PI * k as f64 / n as f64)).collect::<Vec<_>>();
        let dz = (0..n).map(|k| C64::from_polar(radius, 2.0 * PI * k as f64 / n as f64) * C64::i() * (2.0 * PI / n as f64)).collect();
        Curve { z, dz }
    }

    /// Closed polyline through the points with centered line elements.
    pub fn from_points(z: Vec<C64>) -> Curve {
        let n = z.len();
        let dz = (0..n).map(|k| 0.5 * (z[(k + 1) % n] - z[(k + n - 1) % n])).collect();
        Curve { z, dz }
    }
}

#[derive(Clone, Debug)]
pub struct CauchyExtension {
    pub curve: Curve,
    pub f: Vec<C64>,
    pub winding: i64,
    pub moments: Vec<C64>,
    pub moments_ok: bool,
}

impl CauchyExtension {
    pub fn eval(&self, z: C64) -> C64 {
        let s: C64 = self.curve.z.iter().zip(&self.curve.dz).zip(&self.f).map(|((zeta, dz), f)| f * dz / (zeta - z)).sum();
        s / (2.0 * PI * C64::i())
    }
}

pub const MOMENT_TOL: f64 = 1e-6;

pub fn cauchy_extension(curve: &Curve, f: &[C64], k_max: usize) -> Result<CauchyExtension> {
    let n = curve.z.len();
    if n < 3 || f.len() != n {
        return Err(LabError::CurveDegenerate(format!("{n} curve samples for {} values", f.len())));
    }
    let len: f64 = curve.dz.iter().map(|d| d.norm()).sum();
    if !(len > 1e-12) {
        return Err(LabError::CurveDegenerate("zero length".into()));
    }
    let mut turn = 0.0;
    for k in 0..n {
        let (a, b) = (f[k], f[(k + 1) % n]);
        if a.norm() == 0.0 || b.norm() == 0.0 {
            return Err(LabError::CurveDegenerate("boundary data vanish on the curve".into()));
        }
        let step = (b / a).arg();
        if step.abs() > 2.0 {
            return Err(LabError::CurveDegenerate("boundary data undersampled".into()));
        }
        turn += step;
    }
    let winding = (turn / (2.0 * PI)).round() as i64;
    let mut moments = Vec::with_capacity(k_max + 1);
    let mut ok = true;
    for k in 0..=k_max {
        let (mut m, mut scale) = (ZERO, 0.0);
        for j in 0..n {
            let zk = curve.z[j].powu(k as u32);
            m += f[j] * zk * curve.dz[j];
            scale += (f[j] * zk).norm() * curve.dz[j].norm();
        }
        ok &= m.norm() <= MOMENT_TOL * scale;
        moments.push(m);
    }
    Ok(CauchyExtension { curve: curve.clone(), f: f.to_vec(), winding, moments, moments_ok: ok })
}

/// Boundary nodes of the chart slice t2 = t2(k) in positive order, as z = r e^{i t1}
/// (the aligned slice frame), with their node indices.
pub fn chart_slice_boundary(g: &SphGrid, k: usize) -> (Curve, Vec<usize>) {
    let (nr, n1, _) = g.dims();
    let mut nodes = Vec::new();
    for j in 0..n1 - 1 {
        nodes.push((nr - 1, j));
    }
    for i in (1..nr).rev() {
        nodes.push((i, n1 - 1));
    }
    for j in (1..n1).rev() {
        nodes.push((0, j));
    }
    for i in 0..nr - 1 {
        nodes.push((i, 0));
    }
    let z = nodes.iter().map(|&(i, j)| C64::from_polar(g.axes[0].x(i), g.axes[1].x(j))).collect();
    (Curve::from_points(z), nodes.iter().map(|&(i, j)| g.idx(i, j, k)).collect())
}

/// `(z - zbar) e^{conj(Phi1) + Phi2}` on the boundary of the central chart slice.
pub fn cgo_slice_data(geo: &CgoGeometry, minus: &Amplitude, plus: &Amplitude) -> (Curve, Vec<C64>) {
    let g = &*geo.grid;
    let (_, _, n2) = g.dims();
    let (curve, idx) = chart_slice_boundary(g, n2 / 2);
    let f = curve.z.iter().zip(&idx).map(|(z, &n)| (z - z.conj()) * (minus.phi_w[n].conj() + plus.phi_w[n]).exp()).collect();
    (curve, f)
}

/// Full uniqueness run: term scalings on the h list, the winding check on the CGO
/// slice data and the detector.
#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub scaling: TermScaling,
    pub winding: i64,
    pub detection: Detection,
}

pub fn run_pipeline(geo: &CgoGeometry, pair: &PotentialPair, h_list: &[f64], order: usize, protocol: &DetectProtocol) -> Result<IdentityReport> {
    if h_list.len() < 3 {
        return Err(LabError::InsufficientHPoints(h_list.len()));
    }
    let setup = IdentitySetup::new(geo, pair, order)?;
    let rows: Vec<IdentityTerms> = h_list.par_iter().map(|&h| setup.terms(h)).collect::<Result<_>>()?;
    let (minus, plus) = setup.amplitudes();
    let (curve, f) = cgo_slice_data(geo, minus, plus);
    let winding = cauchy_extension(&curve, &f, 0)?.winding;
    let detection = detect_difference(geo, pair, protocol)?;
    Ok(IdentityReport { scaling: scaling_from_rows(rows), winding, detection })
}

impl IdentityReport {
    /// Exponent contract; enforced only when the pair's partial boundary data agree.
    pub fn exponents_pass(&self) -> bool {
        !self.scaling.hypothesis_holds() || self.scaling.exponents_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgo::direction;
    use crate::geometry::default_shell;
    use std::f64::consts::FRAC_PI_2;

    fn geo() -> CgoGeometry {
        CgoGeometry::new(&default_shell(), direction(FRAC_PI_2, 0.0), 21, 15).unwrap()
    }

    #[test]
    fn cauchy_extension_reproduces_exponential() {
        let c = Curve::circle(C64::new(0.3, 1.5), 0.5, 128);
        let f: Vec<C64> = c.z.iter().map(|z| z.exp()).collect();
        let e = cauchy_extension(&c, &f, 6).unwrap();
        assert!(e.moments_ok);
        assert_eq!(e.winding, 0);
        for z in [C64::new(0.3, 1.5), C64::new(0.5, 1.3), C64::new(0.1, 1.8)] {
            assert!((e.eval(z) - z.exp()).norm() < 1e-8);
        }
    }

    #[test]
    fn conjugate_has_nonzero_first_moment() {
        let c = Curve::circle(ZERO, 1.0, 64);
        let f: Vec<C64> = c.z.iter().map(|z| z.conj()).collect();
        let e = cauchy_extension(&c, &f, 3).unwrap();
        assert!((e.moments[0] - 2.0 * PI * C64::i()).norm() < 1e-12);
        assert!(!e.moments_ok);
        assert_eq!(e.winding, -1);
    }

    #[test]
    fn degenerate_curves_are_rejected() {
        let c = Curve::from_points(vec![ZERO, C64::new(1.0, 0.0)]);
        assert!(matches!(cauchy_extension(&c, &[ZERO, ZERO], 1), Err(LabError::CurveDegenerate(_))));
        let c = Curve::circle(ZERO, 1.0, 16);
        let f: Vec<C64> = c.z.iter().map(|z| z - 0.0).collect();
        let mut g = f.clone();
        g[3] = ZERO;
        assert!(cauchy_extension(&c, &g, 1).is_err());
        assert_eq!(cauchy_extension(&c, &f, 1).unwrap().winding, 1);
    }

    #[test]
    fn non_holomorphic_weight_is_refused() {
        let g = geo();
        let pair = canonical_pair(&g, PairKind::Curl);
        let fr = SliceFrame::aligned(&g).unwrap();
        let q = PlaneQuad { rows: 20, samples: 60, ..PlaneQuad::default() };
        assert!(matches!(slice_integral(&g, &pair, &fr, &|z: C64| z.conj(), &q), Err(LabError::NotHolomorphic(_))));
        assert!(slice_integral(&g, &pair, &fr, &|z: C64| z * z * z, &q).is_ok());
        assert!(slice_integral(&g, &pair, &fr, &|z: C64| (0.5 * z).exp(), &q).is_ok());
    }

    #[test]
    fn slice_integral_of_gradient_reduces_to_axis_term() {
        // the half-plane integral of g 2 dbar(psi) equals -i times the integral of
        // g psi along the axis t = 0
        let g = geo();
        let psi = gauge_function(&g, 1.0);
        let pair = PotentialPair { w1: WField::Zero, w2: WField::Gradient(psi.clone()), q1: QField::Const(0.0), q2: QField::Const(0.0) };
        let fr = SliceFrame::new(g.omega, domain_direction(&g), [0.0, 0.0, 1.4]).unwrap();
        let q = PlaneQuad { rows: 800, samples: 400, ..PlaneQuad::default() };
        let w = |z: C64| C64::new(1.0, 0.0) + 0.3 * z * z;
        let lhs = slice_integral(&g, &pair, &fr, &w, &q).unwrap();
        let n = 40000;
        let (a, b) = (-2.5, 2.5);
        let ds = (b - a) / n as f64;
        let mut axis = ZERO;
        for m in 0..n {
            let s = a + (m as f64 + 0.5) * ds;
            let x = fr.point(s, 0.0);
            if region_contains(&g.grid, &x) {
                axis += w(C64::new(s, 0.0)) * psi.eval(&x).0 * ds;
            }
        }
        let rhs = -C64::i() * axis;
        assert!(axis.norm() > 1e-3);
        assert!((lhs - rhs).norm() < 1e-3 * axis.norm(), "{lhs} vs {rhs}");
        let full = plane_integrals(&g, &pair, &fr, &q);
        assert!(full.w_s.abs() < 1e-6 && full.w_t.abs() < 1e-4 * axis.norm(), "{full:?}");
    }

    #[test]
    fn equal_potentials_give_vanishing_terms() {
        let g = geo();
        let (w, q) = base_potentials(&g);
        let pair = PotentialPair { w1: w.clone(), w2: w, q1: q.clone(), q2: q };
        let t = greens_identity_check(&g, &pair, 0.2, 4).unwrap();
        for v in t.terms {
            assert!(v.norm() < 1e-7, "{:?}", t.terms);
        }
    }

    #[test]
    fn identity_closes_for_distinct_pair() {
        let g = geo();
        let t = greens_identity_check(&g, &canonical_pair(&g, PairKind::Curl), 0.2, 4).unwrap();
        assert!(t.terms[0].norm() > 1e-6);
        assert!(t.residual < 1e-6, "{t:?}");
    }

    #[test]
    fn too_few_h_values() {
        let g = geo();
        let p = canonical_pair(&g, PairKind::Gauge);
        assert!(matches!(term_scalings(&g, &p, &[0.2, 0.1], 4), Err(LabError::InsufficientHPoints(2))));
    }

    #[test]
    fn cgo_slice_data_has_zero_winding() {
        let g = geo();
        let pair = canonical_pair(&g, PairKind::Curl);
        let s = IdentitySetup::new(&g, &pair, 4).unwrap();
        let (m, p) = s.amplitudes();
        let (c, f) = cgo_slice_data(&g, m, p);
        assert!(c.z.iter().all(|z| z.im > 0.0));
        assert_eq!(cauchy_extension(&c, &f, 2).unwrap().winding, 0);
    }

    #[test]
    fn detector_verdicts_on_canonical_pairs() {
        let g = geo();
        let protocol = DetectProtocol { frames: 4, quad: PlaneQuad { rows: 120, samples: 240, ..PlaneQuad::default() }, ..DetectProtocol::default() };
        let v = |k| detect_difference(&g, &canonical_pair(&g, k), &protocol).unwrap();
        assert_eq!(v(PairKind::Gauge).verdict, Verdict::Indistinguishable);
        assert_eq!(v(PairKind::Curl).verdict, Verdict::DwDiffer);
        assert_eq!(v(PairKind::QBump).verdict, Verdict::QDiffer);
    }

    #[test]
    fn frames_are_orthonormal_and_seeded() {
        let g = geo();
        let a = sample_frames(&g, 6, 3).unwrap();
        let b = sample_frames(&g, 6, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.v0, y.v0);
            assert!(dot(x.e_s, x.e_t).abs() < 1e-14);
            assert!((dot(x.e_t, x.e_t) - 1.0).abs() < 1e-14);
        }
    }
}

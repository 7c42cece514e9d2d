//! Flattened (r, theta) tensor grids, the semiclassical Fourier transform in
//! theta, and the norm engines.

use crate::error::{LabError, Result};
use crate::linalg::solve_tridiagonal;
use crate::numerics::C64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub r_lo: f64,
    pub r_hi: f64,
    pub nr: usize,
    pub nth: Vec<usize>,
    pub theta_lo: Vec<f64>,
    pub side: Vec<f64>,
    pub h: f64,
}

impl Grid {
    /// r in [r_lo, r_hi] (one endpoint must be 1), periodic theta box.
    pub fn new(r_lo: f64, r_hi: f64, nr: usize, theta_lo: Vec<f64>, side: Vec<f64>, nth: Vec<usize>, h: f64) -> Result<Grid> {
        if nr < 3 || !(r_hi > r_lo) || r_lo <= 0.0 {
            return Err(LabError::GridMismatch(format!("bad radial range [{r_lo}, {r_hi}] with {nr} nodes")));
        }
        if (r_lo - 1.0).abs() > 1e-14 && (r_hi - 1.0).abs() > 1e-14 {
            return Err(LabError::GridMismatch("one radial endpoint must be r = 1".into()));
        }
        if theta_lo.len() != nth.len() || side.len() != nth.len() || side.iter().any(|s| !(*s > 0.0)) || !(h > 0.0) {
            return Err(LabError::GridMismatch("inconsistent theta axes".into()));
        }
        Ok(Grid { r_lo, r_hi, nr, nth, theta_lo, side, h })
    }

    /// Flattened shell grid: r in [1, r_max], box of side `side` centered at pi/2.
    pub fn shell(r_max: f64, nr: usize, n: usize, nth: usize, side: f64, h: f64) -> Grid {
        Grid::new(1.0, r_max, nr, vec![PI / 2.0 - side / 2.0; n], vec![side; n], vec![nth; n], h).expect("valid shell grid")
    }

    pub fn with_h(&self, h: f64) -> Grid {
        Grid { h, ..self.clone() }
    }

    pub fn dim_n(&self) -> usize {
        self.nth.len()
    }

    pub fn dr(&self) -> f64 {
        (self.r_hi - self.r_lo) / (self.nr - 1) as f64
    }

    pub fn dtheta(&self, j: usize) -> f64 {
        self.side[j] / self.nth[j] as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        self.r_lo + i as f64 * self.dr()
    }

    pub fn theta(&self, j: usize, k: usize) -> f64 {
        self.theta_lo[j] + k as f64 * self.dtheta(j)
    }

    /// Number of theta points per radial slab.
    pub fn slab(&self) -> usize {
        self.nth.iter().product()
    }

    pub fn len(&self) -> usize {
        self.nr * self.slab()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a slab offset (row-major, last axis fastest).
    pub fn theta_index(&self, mut m: usize) -> Vec<usize> {
        let n = self.dim_n();
        let mut idx = vec![0; n];
        for j in (0..n).rev() {
            idx[j] = m % self.nth[j];
            m /= self.nth[j];
        }
        idx
    }

    pub fn theta_point(&self, m: usize) -> Vec<f64> {
        self.theta_index(m).iter().enumerate().map(|(j, k)| self.theta(j, *k)).collect()
    }

    /// Semiclassical dual variable of a slab offset.
    pub fn xi(&self, m: usize) -> Vec<f64> {
        self.theta_index(m)
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let n = self.nth[j] as i64;
                let kk = if (k as i64) < (n + 1) / 2 { k as i64 } else { k as i64 - n };
                2.0 * PI * self.h * kk as f64 / self.side[j]
            })
            .collect()
    }

    pub fn xi_sq(&self, m: usize) -> f64 {
        self.xi(m).iter().map(|x| x * x).sum()
    }

    pub fn cell_theta(&self) -> f64 {
        (0..self.dim_n()).map(|j| self.dtheta(j)).product()
    }

    pub fn cell_xi(&self) -> f64 {
        (0..self.dim_n()).map(|j| 2.0 * PI * self.h / self.side[j]).product()
    }

    /// Trapezoid weight of radial node i.
    pub fn r_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.nr {
            0.5 * self.dr()
        } else {
            self.dr()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    Compact,
    General,
}

#[derive(Clone, Debug)]
pub struct Field {
    pub grid: Arc<Grid>,
    pub data: Vec<C64>,
    pub support: Support,
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: Arc<Grid>,
    pub data: Vec<C64>,
}

impl Field {
    pub fn zeros(grid: Arc<Grid>) -> Field {
        let n = grid.len();
        Field { grid, data: vec![C64::new(0.0, 0.0); n], support: Support::General }
    }

    pub fn from_fn<F: Fn(f64, &[f64]) -> C64>(grid: Arc<Grid>, f: F) -> Field {
        let s = grid.slab();
        let mut data = Vec::with_capacity(grid.len());
        let thetas: Vec<Vec<f64>> = (0..s).map(|m| grid.theta_point(m)).collect();
        for i in 0..grid.nr {
            let r = grid.r(i);
            for th in &thetas {
                data.push(f(r, th));
            }
        }
        Field { grid, data, support: Support::General }
    }

    pub fn at(&self, i: usize, m: usize) -> C64 {
        self.data[i * self.grid.slab() + m]
    }

    pub fn tagged(mut self, s: Support) -> Result<Field> {
        self.support = s;
        self.validate()?;
        Ok(self)
    }

    /// Finite samples, and compact fields vanish on the outer 10% of the box.
    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|z| !z.is_finite()) {
            return Err(LabError::GridMismatch("non-finite samples".into()));
        }
        if self.support == Support::Compact {
            let g = &self.grid;
            let scale = crate::numerics::max_abs(&self.data).max(1e-300);
            for m in 0..g.slab() {
                let idx = g.theta_index(m);
                let in_pad = idx.iter().enumerate().any(|(j, &k)| {
                    let frac = k as f64 / g.nth[j] as f64;
                    !(0.1..=0.9).contains(&frac)
                });
                if in_pad {
                    for i in 0..g.nr {
                        if self.at(i, m).norm() > 1e-12 * scale {
                            return Err(LabError::GridMismatch("compact field does not vanish in the padding".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn axpy(&self, a: C64, other: &Field) -> Field {
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + a * y).collect();
        Field { grid: self.grid.clone(), data, support: Support::General }
    }

    pub fn scale(&self, a: C64) -> Field {
        Field { grid: self.grid.clone(), data: self.data.iter().map(|x| a * x).collect(), support: self.support }
    }

    pub fn map<F: Fn(usize, usize, C64) -> C64>(&self, f: F) -> Field {
        let s = self.grid.slab();
        let data = self.data.iter().enumerate().map(|(k, z)| f(k / s, k % s, *z)).collect();
        Field { grid: self.grid.clone(), data, support: Support::General }
    }

    /// Discrete L2 inner product (u, v) = sum u conj(v) dr dtheta.
    pub fn inner(&self, v: &Field) -> C64 {
        let g = &self.grid;
        let s = g.slab();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..g.nr {
            let w = g.r_weight(i) * g.cell_theta();
            let mut row = C64::new(0.0, 0.0);
            for m in 0..s {
                row += self.data[i * s + m] * v.data[i * s + m].conj();
            }
            acc += row * w;
        }
        acc
    }
}

fn fft_axes(grid: &Grid, slab: &mut [C64], inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = grid.dim_n();
    let total = grid.slab();
    for j in 0..n {
        let len = grid.nth[j];
        let stride: usize = grid.nth[j + 1..].iter().product();
        let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
        let mut buf = vec![C64::new(0.0, 0.0); len];
        let outer = total / (len * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                for k in 0..len {
                    buf[k] = slab[base + k * stride];
                }
                fft.process(&mut buf);
                for k in 0..len {
                    slab[base + k * stride] = buf[k];
                }
            }
        }
    }
}

fn phase_table(grid: &Grid, sign: f64) -> Vec<C64> {
    (0..grid.slab())
        .map(|m| {
            let xi = grid.xi(m);
            let p: f64 = xi.iter().zip(&grid.theta_lo).map(|(x, t)| x * t).sum::<f64>() / grid.h;
            C64::from_polar(1.0, sign * p)
        })
        .collect()
}

/// u -> u-hat(r, xi) = (2 pi h)^{-n/2} sum exp(-i theta.xi / h) u dtheta^n.
pub fn theta_fourier(u: &Field) -> SpectralField {
    let g = &u.grid;
    let s = g.slab();
    let n = g.dim_n() as i32;
    let c = (2.0 * PI * g.h).powf(-(n as f64) / 2.0) * g.cell_theta();
    let ph = phase_table(g, -1.0);
    let mut planner = FftPlanner::new();
    let mut data = u.data.clone();
    for i in 0..g.nr {
        let slab = &mut data[i * s..(i + 1) * s];
        fft_axes(g, slab, false, &mut planner);
        for m in 0..s {
            slab[m] *= ph[m] * c;
        }
    }
    SpectralField { grid: g.clone(), data }
}

pub fn theta_fourier_inverse(uh: &SpectralField) -> Field {
    let g = &uh.grid;
    let s = g.slab();
    let n = g.dim_n() as i32;
    let c = (2.0 * PI * g.h).powf(-(n as f64) / 2.0) * g.cell_xi();
    let ph = phase_table(g, 1.0);
    let mut planner = FftPlanner::new();
    let mut data = uh.data.clone();
    for i in 0..g.nr {
        let slab = &mut data[i * s..(i + 1) * s];
        for m in 0..s {
            slab[m] *= ph[m] * c;
        }
        fft_axes(g, slab, true, &mut planner);
    }
    Field { grid: g.clone(), data, support: Support::General }
}

impl SpectralField {
    pub fn at(&self, i: usize, m: usize) -> C64 {
        self.data[i * self.grid.slab() + m]
    }

    /// Discrete L2 norm with measure dr dxi.
    pub fn l2(&self) -> f64 {
        let g = &self.grid;
        let s = g.slab();
        let mut acc = 0.0;
        for i in 0..g.nr {
            let row: f64 = self.data[i * s..(i + 1) * s].iter().map(|z| z.norm_sqr()).sum();
            acc += row * g.r_weight(i) * g.cell_xi();
        }
        acc.sqrt()
    }
}

/// Multiply the theta spectrum by `sym(r_index, xi)`.
pub fn apply_multiplier<F: Fn(usize, &[f64]) -> C64>(u: &Field, sym: F) -> Field {
    let mut uh = theta_fourier(u);
    let g = u.grid.clone();
    let s = g.slab();
    let xis: Vec<Vec<f64>> = (0..s).map(|m| g.xi(m)).collect();
    for i in 0..g.nr {
        for m in 0..s {
            uh.data[i * s + m] *= sym(i, &xis[m]);
        }
    }
    theta_fourier_inverse(&uh)
}

/// Semiclassical theta derivative h d/dtheta_j (spectral).
pub fn h_dtheta(u: &Field, j: usize) -> Field {
    apply_multiplier(u, |_, xi| C64::new(0.0, xi[j]))
}

/// Centered h d/dr, one-sided second order at the ends.
pub fn h_dr(u: &Field) -> Field {
    let g = &u.grid;
    let s = g.slab();
    let nr = g.nr;
    let c = g.h / g.dr();
    let mut out = vec![C64::new(0.0, 0.0); u.data.len()];
    for i in 0..nr {
        for m in 0..s {
            let v = |k: usize| u.data[k * s + m];
            out[i * s + m] = if i == 0 {
                (-3.0 * v(0) + 4.0 * v(1) - v(2)) * (0.5 * c)
            } else if i + 1 == nr {
                (3.0 * v(nr - 1) - 4.0 * v(nr - 2) + v(nr - 3)) * (0.5 * c)
            } else {
                (v(i + 1) - v(i - 1)) * (0.5 * c)
            };
        }
    }
    Field { grid: g.clone(), data: out, support: Support::General }
}

/// h^2 d^2/dr^2 with the three-point stencil (one-sided at the ends).
pub fn h2_drr(u: &Field) -> Field {
    let g = &u.grid;
    let s = g.slab();
    let nr = g.nr;
    let c = (g.h / g.dr()).powi(2);
    let mut out = vec![C64::new(0.0, 0.0); u.data.len()];
    for i in 0..nr {
        let (a, b, d) = if i == 0 {
            (0, 1, 2)
        } else if i + 1 == nr {
            (nr - 3, nr - 2, nr - 1)
        } else {
            (i - 1, i, i + 1)
        };
        for m in 0..s {
            out[i * s + m] = (u.data[a * s + m] - 2.0 * u.data[b * s + m] + u.data[d * s + m]) * c;
        }
    }
    Field { grid: g.clone(), data: out, support: Support::General }
}

/// Sub-box of the grid: inclusive radial index range and optional theta index ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub r: (usize, usize),
    pub theta: Option<Vec<(usize, usize)>>,
}

impl Region {
    pub fn full(g: &Grid) -> Region {
        Region { r: (0, g.nr - 1), theta: None }
    }

    fn contains_theta(&self, g: &Grid, m: usize) -> bool {
        match &self.theta {
            None => true,
            Some(b) => g.theta_index(m).iter().zip(b).all(|(k, (a, c))| k >= a && k <= c),
        }
    }

    pub fn contains(&self, g: &Grid, i: usize, m: usize) -> bool {
        i >= self.r.0 && i <= self.r.1 && self.contains_theta(g, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    L2,
    H1,
    H2,
    H1r,
    L2Boundary,
}

impl std::str::FromStr for Space {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Space> {
        match s {
            "L2" => Ok(Space::L2),
            "H1" => Ok(Space::H1),
            "H2" => Ok(Space::H2),
            "H1r" => Ok(Space::H1r),
            "L2_boundary" => Ok(Space::L2Boundary),
            _ => Err(LabError::UnknownSpace(s.to_string())),
        }
    }
}

fn masked_sq(u: &Field, reg: &Region, weight: impl Fn(usize) -> f64) -> f64 {
    let g = &u.grid;
    let s = g.slab();
    let mut acc = 0.0;
    for i in reg.r.0..=reg.r.1 {
        let mut row = 0.0;
        for m in 0..s {
            if reg.contains_theta(g, m) {
                row += u.data[i * s + m].norm_sqr();
            }
        }
        acc += row * g.r_weight(i) * weight(i);
    }
    acc * g.cell_theta()
}

/// Sum over radial faces of |h D+ u|^2 dr dtheta inside the region.
fn forward_dr_sq(u: &Field, reg: &Region, weight: impl Fn(usize) -> f64) -> f64 {
    let g = &u.grid;
    let s = g.slab();
    let c = g.h / g.dr();
    let mut acc = 0.0;
    for i in reg.r.0..reg.r.1 {
        let mut row = 0.0;
        for m in 0..s {
            if reg.contains_theta(g, m) {
                row += ((u.data[(i + 1) * s + m] - u.data[i * s + m]) * c).norm_sqr();
            }
        }
        acc += row * g.dr() * weight(i);
    }
    acc * g.cell_theta()
}

pub fn norm(u: &Field, space: Space, reg: &Region) -> f64 {
    let g = &u.grid;
    let n = g.dim_n();
    match space {
        Space::L2 => masked_sq(u, reg, |_| 1.0).sqrt(),
        Space::H1 => {
            let mut acc = masked_sq(u, reg, |_| 1.0) + forward_dr_sq(u, reg, |_| 1.0);
            for j in 0..n {
                acc += masked_sq(&h_dtheta(u, j), reg, |_| 1.0);
            }
            acc.sqrt()
        }
        Space::H1r => {
            let w = |i: usize| 1.0 / g.r(i).powi(2);
            let wf = |i: usize| 1.0 / (0.5 * (g.r(i) + g.r(i + 1))).powi(0);
            let mut acc = masked_sq(u, reg, w) + forward_dr_sq(u, reg, wf);
            for j in 0..n {
                acc += masked_sq(&h_dtheta(u, j), reg, w);
            }
            acc.sqrt()
        }
        Space::H2 => {
            let mut acc = masked_sq(u, reg, |_| 1.0) + forward_dr_sq(u, reg, |_| 1.0);
            acc += masked_sq(&h2_drr(u), reg, |_| 1.0);
            for j in 0..n {
                let dj = h_dtheta(u, j);
                acc += masked_sq(&dj, reg, |_| 1.0);
                acc += 2.0 * forward_dr_sq(&dj, reg, |_| 1.0);
                for k in 0..n {
                    acc += masked_sq(&h_dtheta(&dj, k), reg, |_| 1.0);
                }
            }
            acc.sqrt()
        }
        Space::L2Boundary => {
            let s = g.slab();
            let mut acc = 0.0;
            for i in [reg.r.0, reg.r.1] {
                for m in 0..s {
                    if reg.contains_theta(g, m) {
                        acc += u.data[i * s + m].norm_sqr() * g.cell_theta();
                    }
                }
            }
            if let Some(b) = &reg.theta {
                for m in 0..s {
                    let idx = g.theta_index(m);
                    if !reg.contains_theta(g, m) {
                        continue;
                    }
                    for (j, (a, c)) in b.iter().enumerate() {
                        if idx[j] == *a || idx[j] == *c {
                            let face = g.cell_theta() / g.dtheta(j);
                            for i in reg.r.0..=reg.r.1 {
                                acc += u.data[i * s + m].norm_sqr() * g.r_weight(i) * face;
                            }
                        }
                    }
                }
            }
            acc.sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualSpace {
    Hm1,
    Hm1r,
}

/// Riesz representative z of u in H^1_0 (or H^1_{0,r}) over radial nodes
/// (i0, i1) exclusive, zero at both ends; periodic in theta.
pub fn riesz(u: &Field, space: DualSpace, i0: usize, i1: usize) -> Result<Field> {
    let g = &u.grid;
    if i1 <= i0 + 1 || i1 >= g.nr {
        return Err(LabError::SingularRiesz(format!("empty radial mask ({i0}, {i1})")));
    }
    let s = g.slab();
    let uh = theta_fourier(u);
    let mut zh = SpectralField { grid: g.clone(), data: vec![C64::new(0.0, 0.0); uh.data.len()] };
    let c = (g.h / g.dr()).powi(2);
    let m_int = i1 - i0 - 1;
    for m in 0..s {
        let xi2 = g.xi_sq(m);
        let lo = vec![C64::new(-c, 0.0); m_int];
        let up = vec![C64::new(-c, 0.0); m_int];
        let di: Vec<C64> = (i0 + 1..i1)
            .map(|i| {
                let w = match space {
                    DualSpace::Hm1 => 1.0 + xi2,
                    DualSpace::Hm1r => (1.0 + xi2) / g.r(i).powi(2),
                };
                C64::new(w + 2.0 * c, 0.0)
            })
            .collect();
        let mut rhs: Vec<C64> = (i0 + 1..i1).map(|i| uh.data[i * s + m]).collect();
        solve_tridiagonal(&lo, &di, &up, &mut rhs).ok_or_else(|| LabError::SingularRiesz(format!("mode {m}")))?;
        for (k, i) in (i0 + 1..i1).enumerate() {
            zh.data[i * s + m] = rhs[k];
        }
    }
    Ok(theta_fourier_inverse(&zh))
}

/// sup over v in H^1_0 of |(u, v)| / ||v||, via the discrete Riesz problem.
pub fn dual_norm(u: &Field, space: DualSpace, i0: usize, i1: usize) -> Result<f64> {
    let z = riesz(u, space, i0, i1)?;
    let g = &u.grid;
    let s = g.slab();
    let mut acc = C64::new(0.0, 0.0);
    for i in i0 + 1..i1 {
        for m in 0..s {
            acc += u.data[i * s + m] * z.data[i * s + m].conj();
        }
    }
    let v = (acc * g.dr() * g.cell_theta()).re;
    if !(v >= -1e-12 * (1.0 + v.abs())) || !v.is_finite() {
        return Err(LabError::SingularRiesz(format!("negative pairing {v}")));
    }
    Ok(v.max(0.0).sqrt())
}

/// Discrete H^1 norm matching the Riesz problem: rectangle weights on interior
/// nodes plus forward radial differences.
pub fn h1_norm_dirichlet(v: &Field, i0: usize, i1: usize) -> f64 {
    let g = &v.grid;
    let s = g.slab();
    let mut acc = 0.0;
    for i in i0 + 1..i1 {
        for m in 0..s {
            acc += v.data[i * s + m].norm_sqr() * g.dr();
        }
    }
    for j in 0..g.dim_n() {
        let d = h_dtheta(v, j);
        for i in i0 + 1..i1 {
            for m in 0..s {
                acc += d.data[i * s + m].norm_sqr() * g.dr();
            }
        }
    }
    let c = g.h / g.dr();
    for i in i0..i1 {
        for m in 0..s {
            acc += ((v.data[(i + 1) * s + m] - v.data[i * s + m]) * c).norm_sqr() * g.dr();
        }
    }
    (acc * g.cell_theta()).sqrt()
}

/// Write a `CLFIELD v1` dump: ASCII header then little-endian (re, im) pairs.
pub fn write_clfield<W: Write>(w: &mut W, dims: &[usize], h: f64, r_max: f64, side: f64, data: &[C64]) -> Result<()> {
    let d: Vec<String> = dims.iter().map(|x| x.to_string()).collect();
    writeln!(w, "CLFIELD v1 {} {} {} {}", d.join(" "), h, r_max, side)?;
    let mut buf = Vec::with_capacity(16 * data.len());
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub struct ClField {
    pub dims: Vec<usize>,
    pub h: f64,
    pub r_max: f64,
    pub side: f64,
    pub data: Vec<C64>,
}

pub fn read_clfield<R: Read>(r: &mut R) -> Result<ClField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| LabError::Io("missing CLFIELD header".into()))?;
    let header = String::from_utf8_lossy(&bytes[..nl]).to_string();
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() < 6 || toks[0] != "CLFIELD" || toks[1] != "v1" {
        return Err(LabError::Io(format!("bad CLFIELD header '{header}'")));
    }
    let parse = |t: &str| t.parse::<f64>().map_err(|_| LabError::Io(format!("bad number '{t}'")));
    let nd = toks.len() - 5;
    let dims: Vec<usize> = toks[2..2 + nd].iter().map(|t| t.parse::<usize>().map_err(|_| LabError::Io(format!("bad dim '{t}'")))).collect::<Result<_>>()?;
    let h = parse(toks[2 + nd])?;
    let r_max = parse(toks[3 + nd])?;
    let side = parse(toks[4 + nd])?;
    let body = &bytes[nl + 1..];
    let count: usize = dims.iter().product();
    if body.len() != 16 * count {
        return Err(LabError::Io(format!("expected {} bytes, found {}", 16 * count, body.len())));
    }
    let data = body
        .chunks_exact(16)
        .map(|c| C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect();
    Ok(ClField { dims, h, r_max, side, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::shell(2.0, 17, 2, 16, 1.0, 0.1))
    }

    #[test]
    fn plane_wave_is_a_delta() {
        let g = grid();
        let m0 = 3 * 16 + 2;
        let xi0 = g.xi(m0);
        let u = Field::from_fn(g.clone(), |_, th| C64::from_polar(1.0, (th[0] * xi0[0] + th[1] * xi0[1]) / g.h));
        let uh = theta_fourier(&u);
        for m in 0..g.slab() {
            let v = uh.at(5, m).norm();
            if m == m0 {
                assert!(v > 1.0);
            } else {
                assert!(v < 1e-10, "leak {v} at {m}");
            }
        }
    }

    #[test]
    fn round_trip_and_plancherel() {
        let g = grid();
        let u = Field::from_fn(g.clone(), |r, th| C64::new((r * th[0]).sin(), th[1].cos() * r));
        let uh = theta_fourier(&u);
        let back = theta_fourier_inverse(&uh);
        let err = u.data.iter().zip(&back.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let a = norm(&u, Space::L2, &Region::full(&g));
        assert!((a - uh.l2()).abs() < 1e-10 * a);
    }

    #[test]
    fn unit_frequency_plane_wave_h1() {
        let g = Arc::new(Grid::shell(2.0, 9, 2, 32, 2.0 * PI * 0.1 * 4.0, 0.1));
        let u = Field::from_fn(g.clone(), |_, th| C64::from_polar(1.0, th[0] / 0.1));
        let reg = Region::full(&g);
        let l2 = norm(&u, Space::L2, &reg);
        let d = norm(&h_dtheta(&u, 0), Space::L2, &reg);
        assert!((d - l2).abs() < 1e-10);
        assert!((norm(&u, Space::H1, &reg) - 2f64.sqrt() * l2).abs() < 1e-10);
    }

    #[test]
    fn unknown_space() {
        assert!(matches!("H3".parse::<Space>(), Err(LabError::UnknownSpace(_))));
    }

    #[test]
    fn clfield_round_trip() {
        let data: Vec<C64> = (0..12).map(|k| C64::new(k as f64, -(k as f64) * 0.5)).collect();
        let mut buf = Vec::new();
        write_clfield(&mut buf, &[3, 2, 2], 0.1, 2.0, 1.0, &data).unwrap();
        let f = read_clfield(&mut buf.as_slice()).unwrap();
        assert_eq!(f.dims, vec![3, 2, 2]);
        assert_eq!(f.data, data);
    }
}

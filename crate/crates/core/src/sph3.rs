//! Physical-space magnetic Schrödinger operator on spherical tensor grids.
//!
//! The operator is assembled from its energy form
//! `sum_f c_f |P_f u|^2 + sum_n vol_n q_n |u_n|^2`, where `P_f` is a covariant
//! face difference carrying the Peierls phase `exp(i int W.dl)` along each grid
//! edge. Gauge transformations therefore act exactly on the discrete system.
//!
//! Nodes are ordered `(k * nr + i) * n1 + j` with `i` radial, `j` the first
//! angle and `k` the second angle. Coefficients that do not depend on the second
//! angle give a Kronecker structure which the solver diagonalizes; otherwise the
//! separable part preconditions GMRES.

use crate::error::{LabError, Result};
use crate::linalg::{gmres, BandCholesky, BandLu};
use crate::numerics::{fornberg, C64, I};
use crate::potentials::{QField, WField};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bc {
    /// End node carries prescribed data.
    Dirichlet,
    /// The grid stops at the node; no face beyond it.
    Natural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
    pub lo: Bc,
    pub hi: Bc,
    pub periodic: bool,
    /// Order of the face difference (2 or 4).
    pub order: usize,
}

impl Axis {
    pub fn dirichlet(a: f64, b: f64, n: usize, order: usize) -> Axis {
        Axis { x0: a, dx: (b - a) / (n - 1) as f64, n, lo: Bc::Dirichlet, hi: Bc::Dirichlet, periodic: false, order }
    }

    pub fn periodic(n: usize, order: usize) -> Axis {
        Axis { x0: 0.0, dx: 2.0 * std::f64::consts::PI / n as f64, n, lo: Bc::Natural, hi: Bc::Natural, periodic: true, order }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        !self.periodic && ((i == 0 && self.lo == Bc::Dirichlet) || (i + 1 == self.n && self.hi == Bc::Dirichlet))
    }

    pub fn n_faces(&self) -> usize {
        if self.periodic {
            self.n
        } else {
            self.n - 1
        }
    }

    fn wrap(&self, i: isize) -> Option<usize> {
        if self.periodic {
            Some(i.rem_euclid(self.n as isize) as usize)
        } else if i >= 0 && (i as usize) < self.n {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Stencil of the face between nodes f and f+1: node indices and weights
    /// (divide by dx for the derivative).
    pub fn face_stencil(&self, f: usize) -> Vec<(usize, f64)> {
        let fi = f as isize;
        if self.order >= 4 {
            if let (Some(a), Some(d)) = (self.wrap(fi - 1), self.wrap(fi + 2)) {
                return vec![
                    (a, 1.0 / 24.0),
                    (f, -27.0 / 24.0),
                    (self.wrap(fi + 1).unwrap(), 27.0 / 24.0),
                    (d, -1.0 / 24.0),
                ];
            }
        }
        vec![(f, -1.0), (self.wrap(fi + 1).unwrap(), 1.0)]
    }

    /// Position of face f.
    pub fn face_x(&self, f: usize) -> f64 {
        self.x0 + (f as f64 + 0.5) * self.dx
    }
}

/// Spherical tensor grid in a rotated frame: `x = Q * r (cos t1, sin t1 cos t2, sin t1 sin t2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphGrid {
    pub axes: [Axis; 3],
    /// Columns are the images of the frame axes.
    pub frame: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl SphGrid {
    /// Ball of radius `radius`: cell-centered r with the Dirichlet node on the sphere,
    /// cell-centered t1 on (0, pi), periodic t2.
    pub fn ball(radius: f64, nr: usize, n1: usize, n2: usize, order: usize) -> SphGrid {
        let dr = radius / (nr as f64 - 0.5);
        let d1 = std::f64::consts::PI / n1 as f64;
        SphGrid {
            axes: [
                Axis { x0: 0.5 * dr, dx: dr, n: nr, lo: Bc::Natural, hi: Bc::Dirichlet, periodic: false, order: 2 },
                Axis { x0: 0.5 * d1, dx: d1, n: n1, lo: Bc::Natural, hi: Bc::Natural, periodic: false, order },
                Axis::periodic(n2, order),
            ],
            frame: IDENTITY,
        }
    }

    /// Chart box `[r0, r1] x [a1, b1] x [a2, b2]` with Dirichlet faces.
    pub fn chart_box(r: (f64, f64), nr: usize, t1: (f64, f64), n1: usize, t2: (f64, f64), n2: usize, order: usize, frame: [[f64; 3]; 3]) -> SphGrid {
        SphGrid { axes: [Axis::dirichlet(r.0, r.1, nr, 2), Axis::dirichlet(t1.0, t1.1, n1, order), Axis::dirichlet(t2.0, t2.1, n2, order)], frame }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.axes[0].n, self.axes[1].n, self.axes[2].n)
    }

    pub fn len(&self) -> usize {
        self.axes[0].n * self.axes[1].n * self.axes[2].n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.axes[0].n * self.axes[1].n
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.axes[0].n + i) * self.axes[1].n + j
    }

    #[inline]
    pub fn unidx(&self, n: usize) -> (usize, usize, usize) {
        let n1 = self.axes[1].n;
        let np = self.plane_len();
        let k = n / np;
        let p = n % np;
        (p / n1, p % n1, k)
    }

    pub fn coords(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        (self.axes[0].x(i), self.axes[1].x(j), self.axes[2].x(k))
    }

    pub fn frame_point(r: f64, t1: f64, t2: f64) -> [f64; 3] {
        [r * t1.cos(), r * t1.sin() * t2.cos(), r * t1.sin() * t2.sin()]
    }

    pub fn to_world(&self, y: [f64; 3]) -> Vec<f64> {
        let q = &self.frame;
        (0..3).map(|a| q[a][0] * y[0] + q[a][1] * y[1] + q[a][2] * y[2]).collect()
    }

    /// World direction of a frame vector.
    pub fn dir_world(&self, y: [f64; 3]) -> [f64; 3] {
        let v = self.to_world(y);
        [v[0], v[1], v[2]]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec<f64> {
        let (r, t1, t2) = self.coords(i, j, k);
        self.to_world(Self::frame_point(r, t1, t2))
    }

    pub fn point_at(&self, r: f64, t1: f64, t2: f64) -> Vec<f64> {
        self.to_world(Self::frame_point(r, t1, t2))
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        self.axes[0].is_boundary(i) || self.axes[1].is_boundary(j) || self.axes[2].is_boundary(k)
    }

    pub fn cell(&self) -> f64 {
        self.axes[0].dx * self.axes[1].dx * self.axes[2].dx
    }

    /// Volume weight of node (i, j).
    pub fn vol(&self, i: usize, j: usize) -> f64 {
        let r = self.axes[0].x(i);
        r * r * self.axes[1].x(j).sin() * self.cell()
    }

    /// Volume weights with half weights on Dirichlet end nodes (trapezoid rule).
    pub fn quad_weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let half = |a: &Axis, m: usize| if a.is_boundary(m) { 0.5 } else { 1.0 };
        self.vol(i, j) * half(&self.axes[0], i) * half(&self.axes[1], j) * half(&self.axes[2], k)
    }

    /// Unit frame vectors e_r, e_t1, e_t2 at a node, in world coordinates.
    pub fn basis(&self, t1: f64, t2: f64) -> [[f64; 3]; 3] {
        let er = [t1.cos(), t1.sin() * t2.cos(), t1.sin() * t2.sin()];
        let e1 = [-t1.sin(), t1.cos() * t2.cos(), t1.cos() * t2.sin()];
        let e2 = [0.0, -t2.sin(), t2.cos()];
        [self.dir_world(er), self.dir_world(e1), self.dir_world(e2)]
    }
}

/// Face of the in-plane stencil set.
#[derive(Clone, Debug)]
struct PlaneFace {
    /// plane node indices along the line
    nodes: Vec<usize>,
    w: Vec<f64>,
    c: f64,
    /// entry positions in the plane pattern for each (l, m) pair
    pos: Vec<usize>,
}

/// Assembled operator with per-plane values on a shared sparsity pattern.
#[derive(Clone, Debug)]
pub struct Op3 {
    pub grid: Arc<SphGrid>,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    diag_pos: Vec<usize>,
    pub planes: Vec<Vec<C64>>,
    /// Weight of the t2 faces per plane node (already divided by dx2^2).
    pub s: Vec<f64>,
    /// Link angles along t2 edges: `links2[p * n2 + k]` for edge (k, k+1).
    links2: Option<Vec<f64>>,
    line_faces: Vec<Vec<(usize, f64)>>,
}

/// Magnetic and electric coefficients of the physical operator.
#[derive(Clone, Debug)]
pub struct Potentials {
    pub w: WField,
    pub q: QField,
}

impl Potentials {
    pub fn free() -> Potentials {
        Potentials { w: WField::Zero, q: QField::Const(0.0) }
    }
}

fn plane_pattern(g: &SphGrid) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<PlaneFace>) {
    let (nr, n1, _) = g.dims();
    let np = nr * n1;
    let mut faces = Vec::new();
    let cell = g.cell();
    for a in 0..2 {
        let ax = &g.axes[a];
        let other = &g.axes[1 - a];
        for o in 0..other.n {
            for f in 0..ax.n_faces() {
                let st = ax.face_stencil(f);
                let nodes: Vec<usize> = st.iter().map(|&(m, _)| if a == 0 { m * n1 + o } else { o * n1 + m }).collect();
                let w: Vec<f64> = st.iter().map(|&(_, w)| w).collect();
                let xf = ax.face_x(f);
                let c = if a == 0 {
                    xf * xf * other.x(o).sin() * cell / (ax.dx * ax.dx)
                } else {
                    xf.sin() * cell / (ax.dx * ax.dx)
                };
                faces.push(PlaneFace { nodes, w, c, pos: Vec::new() });
            }
        }
    }
    let mut rows: Vec<Vec<usize>> = (0..np).map(|p| vec![p]).collect();
    for f in &faces {
        for &l in &f.nodes {
            for &m in &f.nodes {
                rows[l].push(m);
            }
        }
    }
    let mut row_ptr = vec![0];
    let mut col = Vec::new();
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
        col.extend_from_slice(r);
        row_ptr.push(col.len());
    }
    let find = |r: usize, c: usize| -> usize { row_ptr[r] + col[row_ptr[r]..row_ptr[r + 1]].binary_search(&c).unwrap() };
    let diag_pos = (0..np).map(|p| find(p, p)).collect();
    for f in faces.iter_mut() {
        let mut pos = Vec::new();
        for &l in &f.nodes {
            for &m in &f.nodes {
                pos.push(find(l, m));
            }
        }
        f.pos = pos;
    }
    (row_ptr, col, diag_pos, faces)
}

/// Cumulative phases of the stencil nodes relative to the first node, from edge links.
fn stencil_phases(links: &[f64]) -> Vec<f64> {
    let mut ph = vec![0.0];
    let mut acc = 0.0;
    for l in links {
        acc += l;
        ph.push(acc);
    }
    ph
}

impl Op3 {
    /// Energy-form assembly of `(D + W)^2 + q` (rows scaled by the volume weights).
    pub fn assemble(grid: Arc<SphGrid>, pot: &Potentials) -> Op3 {
        let g = &*grid;
        let (nr, n1, n2) = g.dims();
        let np = nr * n1;
        let (row_ptr, col, diag_pos, faces) = plane_pattern(g);
        let nnz = col.len();
        let wz = pot.w.is_zero();
        let planes: Vec<Vec<C64>> = (0..n2)
            .into_par_iter()
            .map(|k| {
                let mut v = vec![ZERO; nnz];
                for f in &faces {
                    let phases = if wz {
                        vec![0.0; f.nodes.len()]
                    } else {
                        let links: Vec<f64> = f
                            .nodes
                            .windows(2)
                            .map(|e| {
                                let (a, b) = (e[0], e[1]);
                                pot.w.line_integral(&g.point(a / n1, a % n1, k), &g.point(b / n1, b % n1, k))
                            })
                            .collect();
                        stencil_phases(&links)
                    };
                    let vals: Vec<C64> = f.w.iter().zip(&phases).map(|(w, ph)| C64::from_polar(*w, *ph)).collect();
                    let mut t = 0;
                    for l in 0..vals.len() {
                        for m in 0..vals.len() {
                            v[f.pos[t]] += f.c * vals[l].conj() * vals[m];
                            t += 1;
                        }
                    }
                }
                for p in 0..np {
                    let (i, j) = (p / n1, p % n1);
                    let qv = pot.q.q(&g.point(i, j, k));
                    v[diag_pos[p]] += g.vol(i, j) * qv;
                }
                v
            })
            .collect();
        let ax2 = &g.axes[2];
        let s: Vec<f64> = (0..np)
            .map(|p| {
                let t1 = g.axes[1].x(p % n1);
                g.cell() / (t1.sin() * ax2.dx * ax2.dx)
            })
            .collect();
        let nf2 = ax2.n_faces();
        let links2 = if wz {
            None
        } else {
            let l: Vec<Vec<f64>> = (0..np)
                .into_par_iter()
                .map(|p| {
                    let (i, j) = (p / n1, p % n1);
                    (0..n2)
                        .map(|k| if k < nf2 { pot.w.line_integral(&g.point(i, j, k), &g.point(i, j, (k + 1) % n2)) } else { 0.0 })
                        .collect()
                })
                .collect();
            Some(l.concat())
        };
        let line_faces = (0..nf2).map(|f| ax2.face_stencil(f)).collect();
        Op3 { grid, row_ptr, col, diag_pos, planes, s, links2, line_faces }
    }

    pub fn nnz_plane(&self) -> usize {
        self.col.len()
    }

    /// Plane-node phases of a t2 face stencil.
    fn line_vals(&self, p: usize, st: &[(usize, f64)]) -> Vec<C64> {
        match &self.links2 {
            None => st.iter().map(|&(_, w)| C64::new(w, 0.0)).collect(),
            Some(l) => {
                let n2 = self.grid.axes[2].n;
                let mut acc = 0.0;
                let mut out = vec![C64::new(st[0].1, 0.0)];
                for e in 0..st.len() - 1 {
                    acc += l[p * n2 + st[e].0];
                    out.push(C64::from_polar(st[e + 1].1, acc));
                }
                out
            }
        }
    }

    /// y = M x over all nodes.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        let np = self.grid.plane_len();
        y.par_chunks_mut(np).enumerate().for_each(|(k, yk)| {
            let v = &self.planes[k];
            let xk = &x[k * np..(k + 1) * np];
            for p in 0..np {
                let mut acc = ZERO;
                for e in self.row_ptr[p]..self.row_ptr[p + 1] {
                    acc += v[e] * xk[self.col[e]];
                }
                yk[p] = acc;
            }
        });
        self.add_lines(x, y);
    }

    /// y = M^H x over all nodes.
    pub fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        let np = self.grid.plane_len();
        y.par_chunks_mut(np).enumerate().for_each(|(k, yk)| {
            let v = &self.planes[k];
            let xk = &x[k * np..(k + 1) * np];
            for c in yk.iter_mut() {
                *c = ZERO;
            }
            for p in 0..np {
                let xp = xk[p];
                if xp == ZERO {
                    continue;
                }
                for e in self.row_ptr[p]..self.row_ptr[p + 1] {
                    yk[self.col[e]] += v[e].conj() * xp;
                }
            }
        });
        self.add_lines(x, y);
    }

    /// The t2 part is Hermitian and shared by `apply` and `apply_adjoint`.
    fn add_lines(&self, x: &[C64], y: &mut [C64]) {
        let np = self.grid.plane_len();
        let n2 = self.grid.axes[2].n;
        let lines: Vec<Vec<C64>> = (0..np)
            .into_par_iter()
            .map(|p| {
                let mut out = vec![ZERO; n2];
                for st in &self.line_faces {
                    let vals = self.line_vals(p, st);
                    let mut d = ZERO;
                    for (v, &(k, _)) in vals.iter().zip(st) {
                        d += v * x[k * np + p];
                    }
                    d *= self.s[p];
                    for (v, &(k, _)) in vals.iter().zip(st) {
                        out[k] += v.conj() * d;
                    }
                }
                out
            })
            .collect();
        for (p, out) in lines.iter().enumerate() {
            for k in 0..n2 {
                y[k * np + p] += out[k];
            }
        }
    }

    /// Conjugate by E = diag(exp(rho_p / h)) with rho depending on the plane node only:
    /// M <- E^{-1} M E. The t2 lines commute with E.
    pub fn conjugate(&mut self, rho: &[C64], h: f64) {
        let np = self.grid.plane_len();
        let scale: Vec<C64> = (0..self.col.len())
            .map(|e| {
                let r = self.row_of(e);
                ((rho[self.col[e]] - rho[r]) / h).exp()
            })
            .collect();
        debug_assert_eq!(rho.len(), np);
        for v in self.planes.iter_mut() {
            for (a, s) in v.iter_mut().zip(&scale) {
                *a *= s;
            }
        }
    }

    fn row_of(&self, e: usize) -> usize {
        match self.row_ptr.binary_search(&e) {
            Ok(mut r) => {
                while self.row_ptr[r + 1] == e {
                    r += 1;
                }
                r
            }
            Err(r) => r - 1,
        }
    }

    /// Multiply the whole operator by `c`.
    pub fn scale(&mut self, c: f64) {
        for v in self.planes.iter_mut() {
            for a in v.iter_mut() {
                *a *= c;
            }
        }
        for s in self.s.iter_mut() {
            *s *= c;
        }
    }

    /// Add `v` to entry (row p, column p') of plane k; the entry must be in the pattern.
    pub fn add_entry(&mut self, k: usize, p: usize, pc: usize, v: C64) -> Result<()> {
        let row = &self.col[self.row_ptr[p]..self.row_ptr[p + 1]];
        let e = row.binary_search(&pc).map_err(|_| LabError::GridMismatch(format!("entry ({p},{pc}) outside the stencil pattern")))?;
        self.planes[k][self.row_ptr[p] + e] += v;
        Ok(())
    }

    pub fn add_diag(&mut self, k: usize, p: usize, v: C64) {
        let d = self.diag_pos[p];
        self.planes[k][d] += v;
    }

    /// True when every plane carries the same values and the t2 links vanish.
    pub fn is_separable(&self) -> bool {
        let ks = interior_indices(&self.grid.axes[2]);
        let first = &self.planes[ks[0]];
        self.links2.as_ref().map_or(true, |l| l.iter().all(|v| *v == 0.0)) && ks.iter().all(|&k| self.planes[k] == *first)
    }
}

fn interior_indices(a: &Axis) -> Vec<usize> {
    (0..a.n).filter(|&i| !a.is_boundary(i)).collect()
}

/// Outcome of a solve.
#[derive(Clone, Debug, Default)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
    pub direct: bool,
}

/// Direct (separable) or preconditioned iterative solver for Dirichlet problems.
pub struct Solver {
    pub op: Arc<Op3>,
    pub exact: bool,
    int_plane: Vec<usize>,
    int_k: Vec<usize>,
    /// eigenvectors of the interior t2 line matrix (columns)
    v: DMatrix<f64>,
    modes: Vec<BandLu>,
    pub min_pivot: f64,
    pub tol: f64,
}

impl Solver {
    pub fn new(op: Arc<Op3>) -> Result<Solver> {
        let g = op.grid.clone();
        let (nr, n1, _) = g.dims();
        let int_plane: Vec<usize> = (0..nr * n1).filter(|&p| !g.axes[0].is_boundary(p / n1) && !g.axes[1].is_boundary(p % n1)).collect();
        let int_k = interior_indices(&g.axes[2]);
        let n2 = g.axes[2].n;
        // link-free line matrix
        let mut k2 = DMatrix::<f64>::zeros(n2, n2);
        for st in &op.line_faces {
            for &(a, wa) in st {
                for &(b, wb) in st {
                    k2[(a, b)] += wa * wb;
                }
            }
        }
        let ki = DMatrix::from_fn(int_k.len(), int_k.len(), |a, b| k2[(int_k[a], int_k[b])]);
        let eig = SymmetricEigen::new(ki);
        let lambda = eig.eigenvalues.clone();
        let v = eig.eigenvectors;
        // averaged plane operator
        let nnz = op.nnz_plane();
        let mut avg = vec![ZERO; nnz];
        for &k in &int_k {
            for (a, b) in avg.iter_mut().zip(&op.planes[k]) {
                *a += b;
            }
        }
        for a in avg.iter_mut() {
            *a /= int_k.len() as f64;
        }
        let mut pos = vec![usize::MAX; nr * n1];
        for (c, &p) in int_plane.iter().enumerate() {
            pos[p] = c;
        }
        let mut bw = 0usize;
        for &p in &int_plane {
            for e in op.row_ptr[p]..op.row_ptr[p + 1] {
                let q = op.col[e];
                if pos[q] != usize::MAX {
                    bw = bw.max((pos[q] as isize - pos[p] as isize).unsigned_abs());
                }
            }
        }
        let m = int_plane.len();
        let modes: Vec<BandLu> = (0..int_k.len())
            .into_par_iter()
            .map(|mi| {
                let mut lu = BandLu::new(m, bw, bw);
                for (c, &p) in int_plane.iter().enumerate() {
                    for e in op.row_ptr[p]..op.row_ptr[p + 1] {
                        let q = op.col[e];
                        if pos[q] != usize::MAX {
                            lu.add(c, pos[q], avg[e]);
                        }
                    }
                    lu.add(c, c, C64::new(lambda[mi] * op.s[p], 0.0));
                }
                lu.factor();
                lu
            })
            .collect();
        let min_pivot = modes.iter().map(|m| m.min_pivot).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-14) {
            return Err(LabError::ZeroEigenvalue(min_pivot));
        }
        let exact = op.is_separable();
        Ok(Solver { op, exact, int_plane, int_k, v, modes, min_pivot, tol: 1e-12 })
    }

    pub fn n_interior(&self) -> usize {
        self.int_plane.len() * self.int_k.len()
    }

    /// Interior unknown ordering: (k index among interior, plane index among interior).
    fn gather(&self, full: &[C64]) -> Vec<C64> {
        let np = self.op.grid.plane_len();
        let mut out = Vec::with_capacity(self.n_interior());
        for &k in &self.int_k {
            for &p in &self.int_plane {
                out.push(full[k * np + p]);
            }
        }
        out
    }

    fn scatter(&self, x: &[C64], full: &mut [C64]) {
        let np = self.op.grid.plane_len();
        let m = self.int_plane.len();
        for (a, &k) in self.int_k.iter().enumerate() {
            for (c, &p) in self.int_plane.iter().enumerate() {
                full[k * np + p] = x[a * m + c];
            }
        }
    }

    /// Separable solve (exact inverse when `exact`).
    fn precond(&self, b: &[C64], x: &mut [C64]) {
        let m = self.int_plane.len();
        let nk = self.int_k.len();
        // transform to t2 modes
        let mut hat = vec![ZERO; m * nk];
        hat.par_chunks_mut(m).enumerate().for_each(|(mi, row)| {
            for a in 0..nk {
                let w = self.v[(a, mi)];
                if w != 0.0 {
                    for c in 0..m {
                        row[c] += w * b[a * m + c];
                    }
                }
            }
        });
        hat.par_chunks_mut(m).enumerate().for_each(|(mi, row)| self.modes[mi].solve(row));
        x.par_chunks_mut(m).enumerate().for_each(|(a, row)| {
            for c in row.iter_mut() {
                *c = ZERO;
            }
            for mi in 0..nk {
                let w = self.v[(a, mi)];
                for c in 0..m {
                    row[c] += w * hat[mi * m + c];
                }
            }
        });
    }

    fn apply_interior(&self, x: &[C64], y: &mut [C64]) {
        let n = self.op.grid.len();
        let mut full = vec![ZERO; n];
        self.scatter(x, &mut full);
        let mut out = vec![ZERO; n];
        self.op.apply(&full, &mut out);
        y.copy_from_slice(&self.gather(&out));
    }

    /// Solve M u = f on interior nodes with u = g on boundary nodes. `g` and `f`
    /// are full-length vectors; boundary entries of `f` and interior entries of `g`
    /// are ignored.
    pub fn solve_dirichlet(&self, g: &[C64], f: &[C64]) -> Result<(Vec<C64>, SolveInfo)> {
        let grid = &self.op.grid;
        let n = grid.len();
        let mut bvals = vec![ZERO; n];
        for (idx, b) in bvals.iter_mut().enumerate() {
            let (i, j, k) = grid.unidx(idx);
            if grid.is_boundary(i, j, k) {
                *b = g[idx];
            }
        }
        let mut mb = vec![ZERO; n];
        self.op.apply(&bvals, &mut mb);
        let rhs: Vec<C64> = self.gather(f).iter().zip(self.gather(&mb)).map(|(a, b)| a - b).collect();
        let mut x = vec![ZERO; rhs.len()];
        let info = self.solve_interior(&rhs, &mut x)?;
        let mut u = bvals;
        self.scatter(&x, &mut u);
        Ok((u, info))
    }

    pub fn solve_interior(&self, rhs: &[C64], x: &mut [C64]) -> Result<SolveInfo> {
        self.precond(rhs, x);
        if self.exact {
            return Ok(SolveInfo { iterations: 0, residual: 0.0, direct: true });
        }
        let out = gmres(|a, b| self.apply_interior(a, b), |a, b| self.precond(a, b), rhs, x, 60, self.tol, 600);
        if !out.converged {
            return Err(LabError::CorrectionSolveFailed(format!("GMRES residual {:.2e} after {} iterations", out.residual, out.iterations)));
        }
        Ok(SolveInfo { iterations: out.iterations, residual: out.residual, direct: false })
    }
}

/// Minimal-norm solutions of `M r = f` on the interior rows, with `r` free on the
/// interior nodes and on the plane-boundary nodes accepted by `free_face`; `r`
/// vanishes on the remaining nodes (always on the t2 end planes). The norm is
/// `sum vol |r|^2`, so `r = D^{-1} B^H w` with `B D^{-1} B^H w = f`.
pub struct MinNormSolver {
    pub op: Arc<Op3>,
    pub exact: bool,
    int_plane: Vec<usize>,
    free_plane: Vec<usize>,
    int_k: Vec<usize>,
    dinv: Vec<f64>,
    v: DMatrix<f64>,
    lambda: Vec<f64>,
    /// free columns of each interior row of the averaged plane operator
    rows: Vec<Vec<(usize, C64)>>,
    bw: usize,
    stored: Vec<BandCholesky>,
    pub tol: f64,
}

const STORE_LIMIT_BYTES: usize = 600 << 20;

impl MinNormSolver {
    pub fn new(op: Arc<Op3>, free_face: impl Fn(usize, usize) -> bool) -> Result<MinNormSolver> {
        let g = op.grid.clone();
        let (nr, n1, n2) = g.dims();
        let boundary = |p: usize| g.axes[0].is_boundary(p / n1) || g.axes[1].is_boundary(p % n1);
        let int_plane: Vec<usize> = (0..nr * n1).filter(|&p| !boundary(p)).collect();
        let free_plane: Vec<usize> = (0..nr * n1).filter(|&p| !boundary(p) || free_face(p / n1, p % n1)).collect();
        let int_k = interior_indices(&g.axes[2]);
        let dinv = free_plane.iter().map(|&p| 1.0 / g.vol(p / n1, p % n1)).collect();
        let mut k2 = DMatrix::<f64>::zeros(n2, n2);
        for st in &op.line_faces {
            for &(a, wa) in st {
                for &(b, wb) in st {
                    k2[(a, b)] += wa * wb;
                }
            }
        }
        let ki = DMatrix::from_fn(int_k.len(), int_k.len(), |a, b| k2[(int_k[a], int_k[b])]);
        let eig = SymmetricEigen::new(ki);
        let lambda = eig.eigenvalues.iter().copied().collect();
        let v = eig.eigenvectors;
        let mut avg = vec![ZERO; op.nnz_plane()];
        for &k in &int_k {
            for (a, b) in avg.iter_mut().zip(&op.planes[k]) {
                *a += b;
            }
        }
        for a in avg.iter_mut() {
            *a /= int_k.len() as f64;
        }
        let mut fpos = vec![usize::MAX; nr * n1];
        for (c, &p) in free_plane.iter().enumerate() {
            fpos[p] = c;
        }
        let rows: Vec<Vec<(usize, C64)>> = int_plane
            .iter()
            .map(|&p| (op.row_ptr[p]..op.row_ptr[p + 1]).filter(|&e| fpos[op.col[e]] != usize::MAX).map(|e| (fpos[op.col[e]], avg[e])).collect())
            .collect();
        // bandwidth of B D^-1 B^H in the interior ordering
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); free_plane.len()];
        for (a, row) in rows.iter().enumerate() {
            for &(c, _) in row {
                cols[c].push(a);
            }
        }
        let bw = cols.iter().map(|l| l.iter().max().unwrap_or(&0) - l.iter().min().unwrap_or(&0)).max().unwrap_or(0);
        let exact = op.is_separable();
        let mut s = MinNormSolver { op, exact, int_plane, free_plane, int_k, dinv, v, lambda, rows, bw, stored: Vec::new(), tol: 1e-10 };
        let bytes = s.int_plane.len() * (bw + 1) * 16 * s.int_k.len();
        if !exact && bytes < STORE_LIMIT_BYTES {
            s.stored = (0..s.int_k.len()).into_par_iter().map(|mi| s.factor_mode(mi)).collect::<Result<Vec<_>>>()?;
        }
        Ok(s)
    }

    fn factor_mode(&self, mi: usize) -> Result<BandCholesky> {
        let m = self.int_plane.len();
        let mut cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); self.free_plane.len()];
        for (a, row) in self.rows.iter().enumerate() {
            let p = self.int_plane[a];
            for &(c, v) in row {
                let extra = if self.free_plane[c] == p { self.lambda[mi] * self.op.s[p] } else { 0.0 };
                cols[c].push((a, v + extra));
            }
        }
        let mut ch = BandCholesky::new(m, self.bw);
        for (c, list) in cols.iter().enumerate() {
            let d = self.dinv[c];
            for &(a, va) in list {
                for &(b, vb) in list {
                    if b <= a {
                        ch.add_lower(a, b, va * vb.conj() * d);
                    }
                }
            }
        }
        let piv = ch.factor().ok_or_else(|| LabError::CorrectionSolveFailed("normal equations not positive definite".into()))?;
        if !(piv > 1e-15) {
            return Err(LabError::ZeroEigenvalue(piv));
        }
        Ok(ch)
    }

    fn n_rows(&self) -> usize {
        self.int_plane.len() * self.int_k.len()
    }

    fn scatter_rows(&self, x: &[C64], full: &mut [C64]) {
        let np = self.op.grid.plane_len();
        let m = self.int_plane.len();
        for (a, &k) in self.int_k.iter().enumerate() {
            for (c, &p) in self.int_plane.iter().enumerate() {
                full[k * np + p] = x[a * m + c];
            }
        }
    }

    fn gather_rows(&self, full: &[C64]) -> Vec<C64> {
        let np = self.op.grid.plane_len();
        self.int_k.iter().flat_map(|&k| self.int_plane.iter().map(move |&p| full[k * np + p])).collect()
    }

    /// r = D^{-1} B^H w on the full grid.
    fn lift(&self, w: &[C64]) -> Vec<C64> {
        let n = self.op.grid.len();
        let np = self.op.grid.plane_len();
        let mut full = vec![ZERO; n];
        self.scatter_rows(w, &mut full);
        let mut y = vec![ZERO; n];
        self.op.apply_adjoint(&full, &mut y);
        let mut r = vec![ZERO; n];
        for &k in &self.int_k {
            for (c, &p) in self.free_plane.iter().enumerate() {
                r[k * np + p] = y[k * np + p] * self.dinv[c];
            }
        }
        r
    }

    fn apply_normal(&self, w: &[C64], out: &mut [C64]) {
        let r = self.lift(w);
        let mut y = vec![ZERO; r.len()];
        self.op.apply(&r, &mut y);
        out.copy_from_slice(&self.gather_rows(&y));
    }

    fn precond(&self, b: &[C64], x: &mut [C64]) -> Result<()> {
        let m = self.int_plane.len();
        let nk = self.int_k.len();
        let mut hat = vec![ZERO; m * nk];
        hat.par_chunks_mut(m).enumerate().for_each(|(mi, row)| {
            for a in 0..nk {
                let w = self.v[(a, mi)];
                if w != 0.0 {
                    for c in 0..m {
                        row[c] += w * b[a * m + c];
                    }
                }
            }
        });
        hat.par_chunks_mut(m).enumerate().try_for_each(|(mi, row)| -> Result<()> {
            match self.stored.get(mi) {
                Some(ch) => ch.solve(row),
                None => self.factor_mode(mi)?.solve(row),
            }
            Ok(())
        })?;
        x.par_chunks_mut(m).enumerate().for_each(|(a, row)| {
            for c in row.iter_mut() {
                *c = ZERO;
            }
            for mi in 0..nk {
                let w = self.v[(a, mi)];
                for c in 0..m {
                    row[c] += w * hat[mi * m + c];
                }
            }
        });
        Ok(())
    }

    /// Minimal-norm `r` (full grid) with `(M r)_n = f_n` at interior nodes.
    pub fn solve(&self, f: &[C64]) -> Result<(Vec<C64>, SolveInfo)> {
        let rhs = self.gather_rows(f);
        let mut w = vec![ZERO; self.n_rows()];
        self.precond(&rhs, &mut w)?;
        let info = if self.exact {
            SolveInfo { iterations: 0, residual: 0.0, direct: true }
        } else {
            let fail = std::sync::Mutex::new(None);
            let out = gmres(
                |a, b| self.apply_normal(a, b),
                |a, b| {
                    if let Err(e) = self.precond(a, b) {
                        *fail.lock().unwrap() = Some(e);
                    }
                },
                &rhs,
                &mut w,
                60,
                self.tol,
                600,
            );
            if let Some(e) = fail.into_inner().unwrap() {
                return Err(e);
            }
            if !out.converged {
                return Err(LabError::CorrectionSolveFailed(format!("GMRES residual {:.2e} after {} iterations", out.residual, out.iterations)));
            }
            SolveInfo { iterations: out.iterations, residual: out.residual, direct: false }
        };
        Ok((self.lift(&w), info))
    }
}

/// Fourth-order derivative weights along an axis (one-sided near Dirichlet/Natural ends).
pub fn axis_deriv_weights(a: &Axis, i: usize, order: usize) -> Vec<(usize, f64)> {
    let n = a.n as isize;
    let ii = i as isize;
    let (lo, hi) = if a.periodic {
        (ii - 2, ii + 2)
    } else {
        let lo = (ii - 2).max(0).min(n - 5);
        (lo, lo + 4)
    };
    let xs: Vec<f64> = (lo..=hi).map(|m| (m - ii) as f64 * a.dx).collect();
    let w = fornberg(0.0, &xs, order);
    (lo..=hi).map(|m| m.rem_euclid(n) as usize).zip(w[order].iter().copied()).collect()
}

/// Derivative of order 1 or 2 of a full-grid field along `axis`.
pub fn deriv(g: &SphGrid, u: &[C64], axis: usize, order: usize) -> Vec<C64> {
    let (nr, n1, _) = g.dims();
    let a = &g.axes[axis];
    let tables: Vec<Vec<(usize, f64)>> = (0..a.n).map(|i| axis_deriv_weights(a, i, order)).collect();
    let mut out = vec![ZERO; u.len()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let (i, j, k) = g.unidx(idx);
        let pos = [i, j, k][axis];
        let mut acc = ZERO;
        for &(m, w) in &tables[pos] {
            let at = match axis {
                0 => (k * nr + m) * n1 + j,
                1 => (k * nr + i) * n1 + m,
                _ => (m * nr + i) * n1 + j,
            };
            acc += w * u[at];
        }
        *o = acc;
    });
    out
}

/// Gradient components (d_r, d_t1, d_t2) and the spherical Laplacian of a smooth field.
pub struct Calculus {
    pub dr: Vec<C64>,
    pub d1: Vec<C64>,
    pub d2: Vec<C64>,
    pub lap: Vec<C64>,
}

pub fn calculus(g: &SphGrid, u: &[C64]) -> Calculus {
    let dr = deriv(g, u, 0, 1);
    let d1 = deriv(g, u, 1, 1);
    let d2 = deriv(g, u, 2, 1);
    let drr = deriv(g, u, 0, 2);
    let d11 = deriv(g, u, 1, 2);
    let d22 = deriv(g, u, 2, 2);
    let lap = (0..u.len())
        .map(|idx| {
            let (i, j, k) = g.unidx(idx);
            let (r, t1, _) = g.coords(i, j, k);
            let s = t1.sin();
            drr[idx] + 2.0 / r * dr[idx] + (d11[idx] + t1.cos() / s * d1[idx] + d22[idx] / (s * s)) / (r * r)
        })
        .collect();
    Calculus { dr, d1, d2, lap }
}

/// Frame components of W at every node: (W.e_r, W.e_t1, W.e_t2).
pub fn frame_components(g: &SphGrid, w: &WField) -> Vec<[f64; 3]> {
    (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = g.unidx(idx);
            let (_, t1, t2) = g.coords(i, j, k);
            let x = g.point(i, j, k);
            let wv = w.w(&x);
            let b = g.basis(t1, t2);
            let dot = |e: &[f64; 3]| e[0] * wv[0] + e[1] * wv[1] + e[2] * wv[2];
            [dot(&b[0]), dot(&b[1]), dot(&b[2])]
        })
        .collect()
}

/// Continuum `L u = -Delta u - 2i W.grad u - i div W u + (|W|^2 + q) u` from pointwise data.
pub fn apply_continuum(g: &SphGrid, u: &[C64], pot: &Potentials, wf: Option<&[[f64; 3]]>) -> Vec<C64> {
    let c = calculus(g, u);
    (0..u.len())
        .map(|idx| {
            let (i, j, k) = g.unidx(idx);
            let (r, t1, _) = g.coords(i, j, k);
            let x = g.point(i, j, k);
            let mut out = -c.lap[idx] + pot.q.q(&x) * u[idx];
            if let Some(wf) = wf {
                let w = wf[idx];
                let grad = [c.dr[idx], c.d1[idx] / r, c.d2[idx] / (r * t1.sin())];
                let wdot = w[0] * grad[0] + w[1] * grad[1] + w[2] * grad[2];
                let w2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
                out += -2.0 * I * wdot - I * pot.w.div(&x) * u[idx] + w2 * u[idx];
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PsiSpec;

    fn small_box() -> Arc<SphGrid> {
        let h = std::f64::consts::FRAC_PI_2;
        Arc::new(SphGrid::chart_box((1.0, 2.0), 14, (h - 0.4, h + 0.4), 12, (h - 0.4, h + 0.4), 10, 4, IDENTITY))
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<C64> {
        use rand::Rng;
        let mut rng = crate::numerics::substream(seed, 0);
        (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
    }

    fn dot(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn operator_is_hermitian_with_real_q() {
        let g = small_box();
        let pot = Potentials { w: WField::Vortex { amp: 0.8, center: vec![0.0, 0.0, 1.5], width: 0.5 }, q: QField::Const(0.3) };
        let op = Op3::assemble(g.clone(), &pot);
        let x = rand_vec(g.len(), 1);
        let y = rand_vec(g.len(), 2);
        let mut ax = vec![ZERO; g.len()];
        let mut ay = vec![ZERO; g.len()];
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        let a = dot(&y, &ax);
        let b = dot(&ay, &x);
        assert!((a - b).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn gauge_acts_exactly() {
        let g = small_box();
        let psi = PsiSpec::Gauss { amp: 0.7, center: vec![0.0, 0.2, 1.4], width: 0.4 };
        let w = WField::Vortex { amp: 0.5, center: vec![0.0, 0.0, 1.5], width: 0.5 };
        let p1 = Potentials { w: w.clone(), q: QField::Const(0.0) };
        let p2 = Potentials { w: WField::Sum(vec![w, WField::Gradient(psi.clone())]), q: QField::Const(0.0) };
        let a1 = Op3::assemble(g.clone(), &p1);
        let a2 = Op3::assemble(g.clone(), &p2);
        let x = rand_vec(g.len(), 3);
        let phase: Vec<C64> = (0..g.len())
            .map(|n| {
                let (i, j, k) = g.unidx(n);
                C64::from_polar(1.0, -psi.eval(&g.point(i, j, k)).0)
            })
            .collect();
        // A2 = D A1 D^H with D = diag(exp(-i Psi))
        let dx: Vec<C64> = x.iter().zip(&phase).map(|(a, p)| a * p.conj()).collect();
        let mut t = vec![ZERO; g.len()];
        a1.apply(&dx, &mut t);
        let lhs: Vec<C64> = t.iter().zip(&phase).map(|(a, p)| a * p).collect();
        let mut rhs = vec![ZERO; g.len()];
        a2.apply(&x, &mut rhs);
        let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn separable_solver_matches_gmres() {
        let g = small_box();
        let op = Arc::new(Op3::assemble(g.clone(), &Potentials { w: WField::Zero, q: QField::Const(0.5) }));
        let s = Solver::new(op.clone()).unwrap();
        assert!(s.exact);
        let gb = rand_vec(g.len(), 4);
        let f = rand_vec(g.len(), 5);
        let (u, _) = s.solve_dirichlet(&gb, &f).unwrap();
        let mut au = vec![ZERO; g.len()];
        op.apply(&u, &mut au);
        for n in 0..g.len() {
            let (i, j, k) = g.unidx(n);
            if g.is_boundary(i, j, k) {
                assert_eq!(u[n], gb[n]);
            } else {
                assert!((au[n] - f[n]).norm() < 1e-9, "{}", (au[n] - f[n]).norm());
            }
        }
        // same problem through the iterative path
        let pot = Potentials { w: WField::Uniform(vec![0.0, 0.3, 0.2]), q: QField::Const(0.5) };
        let op2 = Arc::new(Op3::assemble(g.clone(), &pot));
        let s2 = Solver::new(op2.clone()).unwrap();
        assert!(!s2.exact);
        let (u2, info) = s2.solve_dirichlet(&gb, &f).unwrap();
        assert!(!info.direct);
        op2.apply(&u2, &mut au);
        for n in 0..g.len() {
            let (i, j, k) = g.unidx(n);
            if !g.is_boundary(i, j, k) {
                assert!((au[n] - f[n]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn discrete_laplacian_is_consistent() {
        // u = x1 x2 is harmonic: M u / vol should be small and shrink with the grid
        let mut errs = Vec::new();
        for n in [12usize, 24] {
            let h = std::f64::consts::FRAC_PI_2;
            let g = Arc::new(SphGrid::chart_box((1.0, 2.0), n, (h - 0.4, h + 0.4), n, (h - 0.4, h + 0.4), n, 2, IDENTITY));
            let op = Op3::assemble(g.clone(), &Potentials::free());
            let u: Vec<C64> = (0..g.len())
                .map(|m| {
                    let (i, j, k) = g.unidx(m);
                    let x = g.point(i, j, k);
                    C64::new(x[0] * x[1] + x[2] * x[2] - x[0] * x[0], 0.0)
                })
                .collect();
            let mut au = vec![ZERO; g.len()];
            op.apply(&u, &mut au);
            let mut e: f64 = 0.0;
            for m in 0..g.len() {
                let (i, j, k) = g.unidx(m);
                if !g.is_boundary(i, j, k) {
                    e = e.max(au[m].norm() / g.vol(i, j));
                }
            }
            errs.push(e);
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[1] < 1e-2, "{errs:?}");
    }

    #[test]
    fn conjugation_matches_diagonal_similarity() {
        let g = small_box();
        let mut op = Op3::assemble(g.clone(), &Potentials::free());
        let orig = op.clone();
        let (nr, n1, _) = g.dims();
        let rho: Vec<C64> = (0..nr * n1).map(|p| C64::new(g.axes[0].x(p / n1).ln(), g.axes[1].x(p % n1))).collect();
        let h = 0.3;
        op.conjugate(&rho, h);
        let x = rand_vec(g.len(), 6);
        let np = nr * n1;
        let ex: Vec<C64> = (0..g.len()).map(|n| x[n] * (rho[n % np] / h).exp()).collect();
        let mut t = vec![ZERO; g.len()];
        orig.apply(&ex, &mut t);
        let lhs: Vec<C64> = (0..g.len()).map(|n| t[n] * (-rho[n % np] / h).exp()).collect();
        let mut rhs = vec![ZERO; g.len()];
        op.apply(&x, &mut rhs);
        let scale = crate::numerics::max_abs(&lhs);
        let err = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12 * scale);
    }

    fn conjugated(pot: &Potentials, h: f64) -> Op3 {
        let g = small_box();
        let mut op = Op3::assemble(g.clone(), pot);
        let (nr, n1, _) = g.dims();
        let rho: Vec<C64> = (0..nr * n1).map(|p| C64::new(g.axes[0].x(p / n1).ln(), g.axes[1].x(p % n1))).collect();
        op.conjugate(&rho, h);
        op
    }

    #[test]
    fn adjoint_matches_inner_products() {
        let pot = Potentials { w: WField::Vortex { amp: 0.8, center: vec![0.0, 0.0, 1.5], width: 0.5 }, q: QField::Const(0.3) };
        let op = conjugated(&pot, 0.3);
        let n = op.grid.len();
        let x = rand_vec(n, 7);
        let y = rand_vec(n, 8);
        let mut ax = vec![ZERO; n];
        let mut ahy = vec![ZERO; n];
        op.apply(&x, &mut ax);
        op.apply_adjoint(&y, &mut ahy);
        let a = dot(&y, &ax);
        let b = dot(&ahy, &x);
        assert!((a - b).norm() < 1e-11 * a.norm(), "{a} {b}");
    }

    #[test]
    fn min_norm_solution_meets_rows_and_constraints() {
        for pot in [Potentials::free(), Potentials { w: WField::Vortex { amp: 0.5, center: vec![0.0, 0.0, 1.5], width: 0.5 }, q: QField::Const(0.2) }] {
            let op = Arc::new(conjugated(&pot, 0.2));
            let g = op.grid.clone();
            let n = g.len();
            let solver = MinNormSolver::new(op.clone(), |i, _| i != 0).unwrap();
            let f = rand_vec(n, 9);
            let (r, info) = solver.solve(&f).unwrap();
            assert_eq!(info.direct, pot.w.is_zero());
            let mut y = vec![ZERO; n];
            op.apply(&r, &mut y);
            let scale = crate::numerics::max_abs(&f);
            for idx in 0..n {
                let (i, j, k) = g.unidx(idx);
                if !g.is_boundary(i, j, k) {
                    assert!((y[idx] - f[idx]).norm() < 1e-7 * scale, "row {idx}");
                }
                if i == 0 || g.axes[2].is_boundary(k) {
                    assert_eq!(r[idx], ZERO);
                }
            }
        }
    }
}

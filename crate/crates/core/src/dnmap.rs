//! Forward Dirichlet problems for `(D + W)^2 + q` and discrete Dirichlet-to-Neumann data.

use crate::error::{LabError, Result};
use crate::numerics::{C64, I};
use crate::potentials::{PsiSpec, QField, WField};
use crate::sph3::{Op3, Potentials, SphGrid, Solver, IDENTITY};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Pair of magnetic/electric potentials.
#[derive(Clone, Debug)]
pub struct PotentialPair {
    pub w1: WField,
    pub w2: WField,
    pub q1: QField,
    pub q2: QField,
}

impl PotentialPair {
    pub fn first(&self) -> Potentials {
        Potentials { w: self.w1.clone(), q: self.q1.clone() }
    }

    pub fn second(&self) -> Potentials {
        Potentials { w: self.w2.clone(), q: self.q2.clone() }
    }
}

/// Curl of W as the antisymmetric matrix (dW)_{jk} = d_j W_k - d_k W_j,
/// by fourth-order differences.
pub fn curl(w: &WField, x: &[f64]) -> [[f64; 3]; 3] {
    let e = 1e-3;
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let shifted = |s: f64| {
            let mut y = x.to_vec();
            y[j] += s * e;
            w.w(&y)
        };
        let (p1, m1, p2, m2) = (shifted(1.0), shifted(-1.0), shifted(2.0), shifted(-2.0));
        for k in 0..3 {
            jac[j][k] = (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * e);
        }
    }
    let mut d = [[0.0; 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            d[j][k] = jac[j][k] - jac[k][j];
        }
    }
    d
}

/// `W + grad Psi` after checking that Psi vanishes on the supplied boundary samples.
pub fn gauge_transform(w: &WField, psi: &PsiSpec, boundary: &[Vec<f64>]) -> Result<WField> {
    let worst = boundary.iter().map(|x| psi.eval(x).0.abs()).fold(0.0, f64::max);
    if worst > 1e-10 {
        return Err(LabError::NonvanishingBoundaryPsi(worst));
    }
    Ok(WField::Sum(vec![w.clone(), WField::Gradient(psi.clone())]))
}

/// Circulation of W around a closed polygon.
pub fn circulation(w: &WField, loop_pts: &[Vec<f64>]) -> f64 {
    (0..loop_pts.len()).map(|a| w.line_integral(&loop_pts[a], &loop_pts[(a + 1) % loop_pts.len()])).sum()
}

/// Orthonormal real spherical harmonics on the sphere with pole along the first frame axis.
/// Index order: l = 0..=lmax, m = -l..=l.
pub fn real_sh(lmax: usize, t1: f64, t2: f64) -> Vec<f64> {
    let x = t1.cos();
    let sx = t1.sin().abs();
    // p[l][m] associated Legendre without the Condon-Shortley phase
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    let mut pmm = 1.0;
    for m in 0..=lmax {
        if m > 0 {
            pmm *= (2 * m - 1) as f64 * sx;
        }
        p[m][m] = pmm;
        if m < lmax {
            p[m + 1][m] = x * (2 * m + 1) as f64 * pmm;
        }
        for l in m + 2..=lmax {
            p[l][m] = ((2 * l - 1) as f64 * x * p[l - 1][m] - (l + m - 1) as f64 * p[l - 2][m]) / (l - m) as f64;
        }
    }
    let mut out = Vec::with_capacity((lmax + 1) * (lmax + 1));
    for l in 0..=lmax {
        for mi in -(l as i64)..=(l as i64) {
            let m = mi.unsigned_abs() as usize;
            let mut ratio = 1.0;
            for k in (l - m + 1)..=(l + m) {
                ratio /= k as f64;
            }
            let n = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
            let v = match mi.signum() {
                0 => n * p[l][0],
                1 => 2f64.sqrt() * n * p[l][m] * (m as f64 * t2).cos(),
                _ => 2f64.sqrt() * n * p[l][m] * (m as f64 * t2).sin(),
            };
            out.push(v);
        }
    }
    out
}

pub fn sh_degree(index: usize) -> usize {
    (index as f64).sqrt().floor() as usize
}

/// Which boundary face a node flux is taken on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceId {
    RLo,
    RHi,
    T1Lo,
    T1Hi,
    T2Lo,
    T2Hi,
}

/// Boundary node with its outward normal face and quadrature weight.
#[derive(Clone, Debug)]
pub struct BoundaryNode {
    pub idx: usize,
    pub face: FaceId,
    pub weight: f64,
    pub x: Vec<f64>,
    /// (t1, t2) in the grid frame
    pub angles: (f64, f64),
    pub r: f64,
}

/// Domain of a forward problem.
#[derive(Clone, Debug, PartialEq)]
pub enum DnDomain {
    Ball { radius: f64, n: usize },
    /// Chart box r in [r0, r1], angles in a box around (pi/2, pi/2) in the world frame.
    Shell { r0: f64, r1: f64, half: f64, nr: usize, na: usize },
}

impl DnDomain {
    pub fn grid(&self) -> SphGrid {
        match *self {
            DnDomain::Ball { radius, n } => SphGrid::ball(radius, n, n, n, 4),
            DnDomain::Shell { r0, r1, half, nr, na } => {
                let c = PI / 2.0;
                SphGrid::chart_box((r0, r1), nr, (c - half, c + half), na, (c - half, c + half), na, 2, IDENTITY)
            }
        }
    }
}

/// Factorized forward problem for one potential.
pub struct DnProblem {
    pub domain: DnDomain,
    pub grid: Arc<SphGrid>,
    pub pot: Potentials,
    pub solver: Solver,
    pub boundary: Vec<BoundaryNode>,
}

fn boundary_nodes(g: &SphGrid) -> Vec<BoundaryNode> {
    let (nr, n1, n2) = g.dims();
    let mut out = Vec::new();
    let [ar, a1, a2] = &g.axes;
    for k in 0..n2 {
        for i in 0..nr {
            for j in 0..n1 {
                if !g.is_boundary(i, j, k) {
                    continue;
                }
                let (r, t1, t2) = g.coords(i, j, k);
                let face = if ar.is_boundary(i) {
                    if i == 0 {
                        FaceId::RLo
                    } else {
                        FaceId::RHi
                    }
                } else if a1.is_boundary(j) {
                    if j == 0 {
                        FaceId::T1Lo
                    } else {
                        FaceId::T1Hi
                    }
                } else if k == 0 {
                    FaceId::T2Lo
                } else {
                    FaceId::T2Hi
                };
                // surface element with trapezoid weights along the face
                let half = |a: &crate::sph3::Axis, m: usize| if a.is_boundary(m) { 0.5 } else { 1.0 };
                let weight = match face {
                    FaceId::RLo | FaceId::RHi => r * r * t1.sin() * a1.dx * a2.dx * half(a1, j) * half(a2, k),
                    FaceId::T1Lo | FaceId::T1Hi => r * t1.sin() * ar.dx * a2.dx * half(ar, i) * half(a2, k),
                    FaceId::T2Lo | FaceId::T2Hi => r * ar.dx * a1.dx * half(ar, i) * half(a1, j),
                };
                out.push(BoundaryNode { idx: g.idx(i, j, k), face, weight, x: g.point(i, j, k), angles: (t1, t2), r });
            }
        }
    }
    out
}

impl DnProblem {
    pub fn new(domain: DnDomain, pot: Potentials) -> Result<DnProblem> {
        let grid = Arc::new(domain.grid());
        let op = Arc::new(Op3::assemble(grid.clone(), &pot));
        let solver = Solver::new(op)?;
        let boundary = boundary_nodes(&grid);
        Ok(DnProblem { domain, grid, pot, solver, boundary })
    }

    /// Solve with boundary values `g` (one per boundary node) and zero source.
    pub fn solve_dirichlet(&self, g: &[C64]) -> Result<Vec<C64>> {
        let n = self.grid.len();
        let mut full = vec![ZERO; n];
        for (b, v) in self.boundary.iter().zip(g) {
            full[b.idx] = *v;
        }
        let f = vec![ZERO; n];
        Ok(self.solver.solve_dirichlet(&full, &f)?.0)
    }

    /// Covariant outward flux `(d_nu + i W.nu) u` at each boundary node by one-sided
    /// second-order differences with parallel transport along the normal line.
    pub fn flux(&self, u: &[C64]) -> Vec<C64> {
        let g = &*self.grid;
        self.boundary
            .iter()
            .map(|b| {
                let (i, j, k) = g.unidx(b.idx);
                let (step, axis): (isize, usize) = match b.face {
                    FaceId::RLo => (1, 0),
                    FaceId::RHi => (-1, 0),
                    FaceId::T1Lo => (1, 1),
                    FaceId::T1Hi => (-1, 1),
                    FaceId::T2Lo => (1, 2),
                    FaceId::T2Hi => (-1, 2),
                };
                let at = |m: isize| {
                    let mut c = [i as isize, j as isize, k as isize];
                    c[axis] += m * step;
                    g.idx(c[0] as usize, c[1] as usize, c[2] as usize)
                };
                let (n0, n1, n2) = (at(0), at(1), at(2));
                let pt = |n: usize| {
                    let (a, bb, c) = g.unidx(n);
                    g.point(a, bb, c)
                };
                let l1 = self.pot.w.line_integral(&pt(n1), &pt(n0));
                let l2 = self.pot.w.line_integral(&pt(n2), &pt(n1)) + l1;
                let dx = g.axes[axis].dx;
                let metric = match axis {
                    0 => 1.0,
                    1 => b.r,
                    _ => b.r * b.angles.0.sin(),
                };
                (3.0 * u[n0] - 4.0 * C64::from_polar(1.0, -l1) * u[n1] + C64::from_polar(1.0, -l2) * u[n2]) / (2.0 * dx * metric)
            })
            .collect()
    }

    /// Ball: real spherical harmonics to `lmax`. Shell: face-sine functions, `lmax^2` per face.
    pub fn basis(&self, lmax: usize) -> Vec<Vec<f64>> {
        match self.domain {
            DnDomain::Ball { .. } => {
                let rows: Vec<Vec<f64>> = self.boundary.iter().map(|b| real_sh(lmax, b.angles.0, b.angles.1)).collect();
                let nb = (lmax + 1) * (lmax + 1);
                (0..nb).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
            }
            DnDomain::Shell { .. } => face_sines(&self.grid, &self.boundary, lmax),
        }
    }

    pub fn dn_map(&self, lmax: usize) -> Result<DnMatrix> {
        let basis = self.basis(lmax);
        let fluxes: Vec<Result<Vec<C64>>> = basis
            .par_iter()
            .map(|g| {
                let gc: Vec<C64> = g.iter().map(|v| C64::new(*v, 0.0)).collect();
                Ok(self.flux(&self.solve_dirichlet(&gc)?))
            })
            .collect();
        let fluxes = fluxes.into_iter().collect::<Result<Vec<_>>>()?;
        let w: Vec<f64> = self.boundary.iter().map(|b| b.weight).collect();
        let nb = basis.len();
        let gram = DMatrix::<f64>::from_fn(nb, nb, |a, b| (0..w.len()).map(|t| w[t] * basis[a][t] * basis[b][t]).sum());
        let bmat = DMatrix::<C64>::from_fn(nb, nb, |a, b| (0..w.len()).map(|t| w[t] * basis[a][t] * fluxes[b][t]).sum());
        let gc = gram.map(|v| C64::new(v, 0.0));
        let lam = gc.lu().solve(&bmat).ok_or_else(|| LabError::SingularRiesz("boundary Gram matrix".into()))?;
        let degree = match self.domain {
            DnDomain::Ball { .. } => (0..nb).map(sh_degree).collect(),
            DnDomain::Shell { .. } => vec![0; nb],
        };
        Ok(DnMatrix { lam, degree, lmax, radius: self.radius(), basis_kind: self.basis_kind() })
    }

    fn radius(&self) -> f64 {
        match self.domain {
            DnDomain::Ball { radius, .. } => radius,
            DnDomain::Shell { r1, .. } => r1,
        }
    }

    fn basis_kind(&self) -> &'static str {
        match self.domain {
            DnDomain::Ball { .. } => "real_sh",
            DnDomain::Shell { .. } => "face_sine",
        }
    }

    /// Boolean mask over boundary nodes.
    pub fn mask(&self, spec: &MaskSpec) -> Vec<bool> {
        self.boundary.iter().map(|b| spec.contains(b)).collect()
    }
}

fn face_sines(g: &SphGrid, nodes: &[BoundaryNode], lmax: usize) -> Vec<Vec<f64>> {
    let faces = [FaceId::RLo, FaceId::RHi, FaceId::T1Lo, FaceId::T1Hi, FaceId::T2Lo, FaceId::T2Hi];
    let [ar, a1, a2] = &g.axes;
    let unit = |a: &crate::sph3::Axis, x: f64| (x - a.x0) / (a.dx * (a.n - 1) as f64);
    let mut out = Vec::new();
    for f in faces {
        for p in 1..=lmax {
            for q in 1..=lmax {
                out.push(
                    nodes
                        .iter()
                        .map(|b| {
                            if b.face != f {
                                return 0.0;
                            }
                            let (u, v) = match f {
                                FaceId::RLo | FaceId::RHi => (unit(a1, b.angles.0), unit(a2, b.angles.1)),
                                FaceId::T1Lo | FaceId::T1Hi => (unit(ar, b.r), unit(a2, b.angles.1)),
                                _ => (unit(ar, b.r), unit(a1, b.angles.0)),
                            };
                            (p as f64 * PI * u).sin() * (q as f64 * PI * v).sin()
                        })
                        .collect(),
                );
            }
        }
    }
    out
}

/// DN operator in a boundary basis: `lam = Gram^{-1} <basis, flux>`.
#[derive(Clone, Debug)]
pub struct DnMatrix {
    pub lam: DMatrix<C64>,
    /// spherical-harmonic degree per basis element (ball basis)
    pub degree: Vec<usize>,
    pub lmax: usize,
    pub radius: f64,
    pub basis_kind: &'static str,
}

impl DnMatrix {
    /// Max relative deviation of the diagonal from l/R, normalized by max(l,1)/R,
    /// and the largest off-diagonal entry in the same units.
    pub fn ball_errors(&self) -> (f64, f64) {
        let n = self.lam.nrows();
        let mut diag: f64 = 0.0;
        let mut off: f64 = 0.0;
        for a in 0..n {
            let l = self.degree[a] as f64;
            let scale = l.max(1.0) / self.radius;
            diag = diag.max((self.lam[(a, a)] - C64::new(l / self.radius, 0.0)).norm() / scale);
            for b in 0..n {
                if a != b {
                    off = off.max(self.lam[(a, b)].norm() / scale);
                }
            }
        }
        (diag, off)
    }

    /// Relative max-entry deviation from another DN matrix.
    pub fn deviation(&self, other: &DnMatrix) -> f64 {
        let scale = self.lam.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        (&self.lam - &other.lam).iter().fold(0.0f64, |m, z| m.max(z.norm())) / scale
    }

    /// Relative asymmetry max |lam_ab - lam_ba| / max |lam|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.lam.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let t = self.lam.transpose();
        (&self.lam - &t).iter().fold(0.0f64, |m, z| m.max(z.norm())) / scale
    }

    /// CSV rows `i,j,re,im`.
    pub fn rows(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.lam.nrows();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.lam[(i, j)];
                v.push((i, j, z.re, z.im));
            }
        }
        v
    }
}

/// Boundary region selector.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskSpec {
    All,
    /// Geodesic cap around a world direction with angular radius.
    Cap { dir: [f64; 3], angle: f64 },
    /// One face of a chart box.
    Face(FaceId),
    Union(Vec<MaskSpec>),
    Not(Box<MaskSpec>),
}

impl MaskSpec {
    pub fn contains(&self, b: &BoundaryNode) -> bool {
        match self {
            MaskSpec::All => true,
            MaskSpec::Cap { dir, angle } => {
                let n = (b.x.iter().map(|v| v * v).sum::<f64>()).sqrt();
                let dn = (dir.iter().map(|v| v * v).sum::<f64>()).sqrt();
                let c = (0..3).map(|a| b.x[a] * dir[a]).sum::<f64>() / (n * dn);
                c.clamp(-1.0, 1.0).acos() <= *angle
            }
            MaskSpec::Face(f) => b.face == *f,
            MaskSpec::Union(v) => v.iter().any(|m| m.contains(b)),
            MaskSpec::Not(m) => !m.contains(b),
        }
    }

    /// `all | cap:x,y,z,angle | face:r_lo|r_hi|t1_lo|t1_hi|t2_lo|t2_hi | not:<spec>`,
    /// `;` joins a union.
    pub fn parse(s: &str) -> Result<MaskSpec> {
        let s = s.trim();
        if s.contains(';') {
            return Ok(MaskSpec::Union(s.split(';').map(MaskSpec::parse).collect::<Result<_>>()?));
        }
        if s == "all" {
            return Ok(MaskSpec::All);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(|| LabError::Config(format!("bad mask '{s}'")))?;
        match kind {
            "cap" => {
                let v: Vec<f64> = rest.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| LabError::Config(format!("bad cap '{rest}'")))?;
                if v.len() != 4 {
                    return Err(LabError::Config(format!("bad cap '{rest}'")));
                }
                Ok(MaskSpec::Cap { dir: [v[0], v[1], v[2]], angle: v[3] })
            }
            "face" => Ok(MaskSpec::Face(match rest {
                "r_lo" => FaceId::RLo,
                "r_hi" => FaceId::RHi,
                "t1_lo" => FaceId::T1Lo,
                "t1_hi" => FaceId::T1Hi,
                "t2_lo" => FaceId::T2Lo,
                "t2_hi" => FaceId::T2Hi,
                _ => return Err(LabError::Config(format!("bad face '{rest}'"))),
            })),
            "not" => Ok(MaskSpec::Not(Box::new(MaskSpec::parse(rest)?))),
            _ => Err(LabError::Config(format!("bad mask '{s}'"))),
        }
    }
}

/// Partial data: fluxes on U for inputs supported off E.
#[derive(Clone, Debug)]
pub struct PartialData {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<C64>>,
    pub u_weights: Vec<f64>,
    pub g_weights: Vec<f64>,
}

/// Inputs `basis_j * 1_{not E}`, outputs restricted to U.
pub fn restrict_partial(prob: &DnProblem, lmax: usize, u_mask: &[bool], e_mask: &[bool]) -> Result<PartialData> {
    if !u_mask.iter().any(|m| *m) {
        return Err(LabError::EmptyMask("U".into()));
    }
    if !e_mask.iter().any(|m| *m) {
        return Err(LabError::EmptyMask("E".into()));
    }
    let inputs: Vec<Vec<f64>> = prob
        .basis(lmax)
        .into_iter()
        .map(|g| g.iter().zip(e_mask).map(|(v, e)| if *e { 0.0 } else { *v }).collect::<Vec<f64>>())
        .filter(|g| g.iter().any(|v| *v != 0.0))
        .collect();
    let outputs: Vec<Result<Vec<C64>>> = inputs
        .par_iter()
        .map(|g| {
            let gc: Vec<C64> = g.iter().map(|v| C64::new(*v, 0.0)).collect();
            let f = prob.flux(&prob.solve_dirichlet(&gc)?);
            Ok(f.iter().zip(u_mask).map(|(v, m)| if *m { *v } else { ZERO }).collect())
        })
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let u_weights = prob.boundary.iter().zip(u_mask).map(|(b, m)| if *m { b.weight } else { 0.0 }).collect();
    let g_weights = prob.boundary.iter().map(|b| b.weight).collect();
    Ok(PartialData { inputs, outputs, u_weights, g_weights })
}

/// `max_g ||(L1 - L2) g||_{L2(U)} / ||g||` over the span of the masked inputs.
pub fn partial_distance(a: &PartialData, b: &PartialData) -> Result<f64> {
    if a.inputs.len() != b.inputs.len() || a.outputs.first().map(|v| v.len()) != b.outputs.first().map(|v| v.len()) {
        return Err(LabError::GridMismatch("partial data of different shapes".into()));
    }
    let m = a.inputs.len();
    let nb = a.g_weights.len();
    let gram = DMatrix::<f64>::from_fn(m, m, |i, j| (0..nb).map(|t| a.g_weights[t] * a.inputs[i][t] * a.inputs[j][t]).sum());
    let d: Vec<Vec<C64>> = (0..m).map(|j| a.outputs[j].iter().zip(&b.outputs[j]).map(|(x, y)| x - y).collect()).collect();
    let nmat = DMatrix::<C64>::from_fn(m, m, |i, j| (0..nb).map(|t| a.u_weights[t] * d[i][t].conj() * d[j][t]).sum());
    let eg = SymmetricEigen::new(gram);
    let top = eg.eigenvalues.iter().fold(0.0f64, |x, v| x.max(*v));
    let keep: Vec<usize> = (0..m).filter(|&i| eg.eigenvalues[i] > 1e-10 * top).collect();
    let c = DMatrix::<C64>::from_fn(m, keep.len(), |i, k| C64::new(eg.eigenvectors[(i, keep[k])] / eg.eigenvalues[keep[k]].sqrt(), 0.0));
    let red = c.adjoint() * nmat * &c;
    let red = (&red + red.adjoint()) * C64::new(0.5, 0.0);
    let ev = SymmetricEigen::new(red);
    Ok(ev.eigenvalues.iter().fold(0.0f64, |x, v| x.max(*v)).max(0.0).sqrt())
}

/// Phase factor `exp(i Psi)` relating gauge-equivalent solutions.
pub fn gauge_phase(grid: &SphGrid, psi: &PsiSpec) -> Vec<C64> {
    (0..grid.len())
        .map(|n| {
            let (i, j, k) = grid.unidx(n);
            (I * psi.eval(&grid.point(i, j, k)).0).exp()
        })
        .collect()
}

/// Radial solution of `-u'' - (2/r) u' + c u = 0`, u(R) = 1, regular at 0: sinh(kr)/(kr) scaled.
pub fn radial_q_solution(c: f64, radius: f64, r: f64) -> f64 {
    let k = c.sqrt();
    let f = |s: f64| if s == 0.0 { 1.0 } else { (k * s).sinh() / (k * s) };
    f(r) / f(radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_sh_orthonormal() {
        let lmax = 4;
        let n = 64;
        let nb = (lmax + 1) * (lmax + 1);
        let mut g = vec![vec![0.0; nb]; nb];
        for a in 0..n {
            let t1 = (a as f64 + 0.5) * PI / n as f64;
            for b in 0..2 * n {
                let t2 = b as f64 * PI / n as f64;
                let y = real_sh(lmax, t1, t2);
                let w = t1.sin() * (PI / n as f64) * (PI / n as f64);
                for i in 0..nb {
                    for j in 0..nb {
                        g[i][j] += w * y[i] * y[j];
                    }
                }
            }
        }
        for i in 0..nb {
            for j in 0..nb {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[i][j] - e).abs() < 2e-3, "{i} {j} {}", g[i][j]);
            }
        }
        assert_eq!(sh_degree(0), 0);
        assert_eq!(sh_degree(3), 1);
        assert_eq!(sh_degree(4), 2);
    }

    #[test]
    fn harmonic_extension_on_small_ball() {
        let p = DnProblem::new(DnDomain::Ball { radius: 1.0, n: 20 }, Potentials::free()).unwrap();
        let dn = p.dn_map(3).unwrap();
        let (diag, off) = dn.ball_errors();
        assert!(diag < 0.03 && off < 0.03, "{diag} {off}");
        assert!(dn.asymmetry() < 0.03);
    }

    #[test]
    fn zero_data_gives_zero() {
        let p = DnProblem::new(DnDomain::Ball { radius: 1.0, n: 12 }, Potentials::free()).unwrap();
        let u = p.solve_dirichlet(&vec![ZERO; p.boundary.len()]).unwrap();
        assert!(u.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn curl_of_gradient_vanishes() {
        let psi = PsiSpec::Gauss { amp: 1.0, center: vec![0.1, 0.0, 0.2], width: 0.5 };
        let w = WField::Vortex { amp: 0.7, center: vec![0.0, 0.0, 0.0], width: 0.6 };
        let bdry: Vec<Vec<f64>> = vec![];
        let w2 = gauge_transform(&w, &psi, &bdry).unwrap();
        let x = [0.2, -0.1, 0.3];
        let (a, b) = (curl(&w, &x), curl(&w2, &x));
        for j in 0..3 {
            for k in 0..3 {
                assert!((a[j][k] - b[j][k]).abs() < 1e-10);
                assert!((a[j][k] + a[k][j]).abs() < 1e-12);
            }
        }
        let sq = vec![vec![0.1, 0.1, 0.2], vec![0.3, 0.1, 0.2], vec![0.3, 0.3, 0.2], vec![0.1, 0.3, 0.2]];
        assert!((circulation(&w, &sq) - circulation(&w2, &sq)).abs() < 1e-12);
    }

    #[test]
    fn gauge_requires_vanishing_psi() {
        let psi = PsiSpec::Gauss { amp: 1.0, center: vec![0.0, 0.0, 0.0], width: 0.5 };
        let err = gauge_transform(&WField::Zero, &psi, &[vec![0.1, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, LabError::NonvanishingBoundaryPsi(_)));
    }

    #[test]
    fn masks_parse() {
        assert_eq!(MaskSpec::parse("all").unwrap(), MaskSpec::All);
        assert!(matches!(MaskSpec::parse("cap:-1,0,0,0.5").unwrap(), MaskSpec::Cap { .. }));
        assert!(matches!(MaskSpec::parse("face:r_lo;face:t1_hi").unwrap(), MaskSpec::Union(_)));
        assert!(MaskSpec::parse("cap:1,2").is_err());
    }
}

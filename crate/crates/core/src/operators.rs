//! Conjugated semiclassical operators on (r, theta) tensor grids.
//!
//! Every kind is reduced to the normal form
//! `A_rr h^2 d_r^2 + sum A_jj h^2 d_j^2 + sum A_rj h^2 d_r d_j + A_r h d_r + sum A_j h d_j + A_0`
//! with node coefficients computed once at construction.

use crate::discretization::{norm, Field, Grid, Region, Space};
use crate::error::{LabError, Result};
use crate::geometry::{coordinate_tangent, sphere_inverse_metric, to_cartesian, FSpec};
use crate::numerics::{C64, I};
use crate::potentials::{QField, WField};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// h^2 ((D + W)^2 + q)
    LWq,
    /// h^2 e^{phi/h} (Delta + 2i W.grad + i div W - |W|^2 - q) e^{-phi/h}
    LPhi,
    /// e^{phi^2/2eps} L_phi e^{-phi^2/2eps}
    LPhiEps,
    /// flattened form of L_phi_eps in the chart
    LTildePhiEps,
    /// coordinate form with extended (or model) coefficients
    LTildeSigma,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaMode {
    Geometric,
    /// beta = K e_n, gamma = K, a_j = 1, b_j = 0.
    Model { k: f64 },
}

#[derive(Clone, Debug)]
pub struct OperatorOptions {
    pub kind: OperatorKind,
    pub weight_sign: f64,
    pub eps: f64,
    pub w: WField,
    pub q: QField,
    pub f: FSpec,
    pub sigma: SigmaMode,
}

impl OperatorOptions {
    pub fn new(kind: OperatorKind) -> OperatorOptions {
        OperatorOptions {
            kind,
            weight_sign: 1.0,
            eps: 0.25,
            w: WField::Zero,
            q: QField::Const(0.0),
            f: FSpec::Const(1.0),
            sigma: SigmaMode::Geometric,
        }
    }

    pub fn eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn weight(mut self, s: f64) -> Self {
        self.weight_sign = s;
        self
    }

    pub fn potentials(mut self, w: WField, q: QField) -> Self {
        self.w = w;
        self.q = q;
        self
    }

    pub fn graph(mut self, f: FSpec) -> Self {
        self.f = f;
        self
    }

    pub fn sigma(mut self, s: SigmaMode) -> Self {
        self.sigma = s;
        self
    }
}

/// Coefficients of the normal form at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCoeffs {
    pub rr: C64,
    pub jj: Vec<C64>,
    pub rj: Vec<C64>,
    pub r: C64,
    pub j: Vec<C64>,
    pub c0: C64,
}

impl NodeCoeffs {
    fn zero(n: usize) -> NodeCoeffs {
        let z = C64::new(0.0, 0.0);
        NodeCoeffs { rr: z, jj: vec![z; n], rj: vec![z; n], r: z, j: vec![z; n], c0: z }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub opts: OperatorOptions,
    pub grid: Arc<Grid>,
    pub coeffs: Vec<NodeCoeffs>,
    /// max deviation of the geometric coefficients from the model ones
    pub c_mu: f64,
}

/// Weighted radial exponent data: returns (h Phi', h^2 Phi'') for phi = s log r
/// (plus phi^2 / 2 eps when convexified).
fn weight_derivs(r: f64, h: f64, s: f64, eps: f64) -> (f64, f64) {
    let alpha = if eps.is_finite() { 1.0 + (h / eps) * s * r.ln() } else { 1.0 };
    let hp = s * alpha / r;
    let hpp = if eps.is_finite() { (h * h / eps - h * s * alpha) / (r * r) } else { -h * s * alpha / (r * r) };
    (hp, hpp)
}

pub fn coeffs_at(opts: &OperatorOptions, r: f64, th: &[f64], h: f64) -> Result<NodeCoeffs> {
    let n = th.len();
    let mut c = NodeCoeffs::zero(n);
    let a = sphere_inverse_metric(th);
    let b: Vec<f64> = (0..n).map(|j| if j + 1 < n { a[j] * (n - j - 1) as f64 / th[j].tan() } else { 0.0 }).collect();
    let s = opts.weight_sign;
    let re = |v: f64| C64::new(v, 0.0);
    let magnetic = |c: &mut NodeCoeffs, sign: f64, hphi: f64| {
        let x = to_cartesian(r, th);
        let w = opts.w.w(&x);
        let xr: Vec<f64> = x.iter().map(|v| v / r).collect();
        let wr: f64 = w.iter().zip(&xr).map(|(p, q)| p * q).sum();
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let div = opts.w.div(&x);
        let q = opts.q.q(&x);
        c.r += sign * 2.0 * h * wr * I;
        for j in 0..n {
            let t = coordinate_tangent(1.0, th, j);
            let wt: f64 = w.iter().zip(&t).map(|(p, q)| p * q).sum();
            c.j[j] += sign * 2.0 * h * a[j] * wt / r * I;
        }
        c.c0 += sign * (h * h * div * I - 2.0 * h * wr * hphi * I) - sign * h * h * re(ww + q);
    };
    match opts.kind {
        OperatorKind::LWq => {
            c.rr = re(-1.0);
            c.r = re(-h * n as f64 / r);
            for j in 0..n {
                c.jj[j] = re(-a[j] / (r * r));
                c.j[j] = re(-h * b[j] / (r * r));
            }
            magnetic(&mut c, -1.0, 0.0);
        }
        OperatorKind::LPhi | OperatorKind::LPhiEps => {
            let eps = if opts.kind == OperatorKind::LPhi {
                f64::INFINITY
            } else if opts.eps.is_finite() && opts.eps > 0.0 {
                opts.eps
            } else {
                return Err(LabError::MissingCoefficients("L_phi_eps needs a finite eps > 0".into()));
            };
            let (hp, hpp) = weight_derivs(r, h, s, eps);
            c.rr = re(1.0);
            c.r = re(-(2.0 * hp - h * n as f64 / r));
            c.c0 = re(hp * hp - hpp - h * n as f64 * hp / r);
            for j in 0..n {
                c.jj[j] = re(a[j] / (r * r));
                c.j[j] = re(h * b[j] / (r * r));
            }
            magnetic(&mut c, 1.0, hp);
        }
        OperatorKind::LTildePhiEps | OperatorKind::LTildeSigma => {
            let lf = opts.f.log_f(th);
            let alpha = if opts.eps.is_finite() { 1.0 + (h / opts.eps) * s * (r.ln() + lf) } else { 1.0 };
            let (beta, gamma2, aa, bb) = match (opts.kind, opts.sigma) {
                (OperatorKind::LTildeSigma, SigmaMode::Model { k }) => {
                    let mut beta = vec![0.0; n];
                    beta[n - 1] = k;
                    (beta, k * k, vec![1.0; n], vec![0.0; n])
                }
                _ => {
                    let g = opts.f.grad_log_f(th);
                    let beta: Vec<f64> = (0..n).map(|j| a[j] * g[j]).collect();
                    let gamma2: f64 = (0..n).map(|j| a[j] * g[j] * g[j]).sum();
                    (beta, gamma2, a.clone(), b.clone())
                }
            };
            c.rr = re(1.0 + gamma2);
            c.r = re(-2.0 * s * alpha / r);
            c.c0 = re(alpha * alpha / (r * r));
            for j in 0..n {
                c.rj[j] = re(-2.0 * beta[j] / r);
                c.jj[j] = re(aa[j] / (r * r));
                c.j[j] = re(h * bb[j] / (r * r));
            }
        }
    }
    Ok(c)
}

impl OperatorSpec {
    pub fn new(opts: OperatorOptions, grid: Arc<Grid>) -> Result<OperatorSpec> {
        if !(opts.eps > 0.0) {
            return Err(LabError::MissingCoefficients(format!("eps must be positive, got {}", opts.eps)));
        }
        if opts.weight_sign.abs() != 1.0 {
            return Err(LabError::MissingCoefficients("weight_sign must be +1 or -1".into()));
        }
        let s = grid.slab();
        let mut coeffs = Vec::with_capacity(grid.len());
        let thetas: Vec<Vec<f64>> = (0..s).map(|m| grid.theta_point(m)).collect();
        let mut c_mu: f64 = 0.0;
        for i in 0..grid.nr {
            let r = grid.r(i);
            for th in &thetas {
                coeffs.push(coeffs_at(&opts, r, th, grid.h)?);
                if i == 0 {
                    if let SigmaMode::Model { k } = opts.sigma {
                        let n = th.len();
                        let a = sphere_inverse_metric(th);
                        let g = opts.f.grad_log_f(th);
                        for j in 0..n {
                            c_mu = c_mu.max((a[j] - 1.0).abs());
                            let target = if j + 1 == n { k } else { 0.0 };
                            c_mu = c_mu.max((a[j] * g[j] - target).abs());
                        }
                        let gamma = (0..n).map(|j| a[j] * g[j] * g[j]).sum::<f64>().sqrt();
                        c_mu = c_mu.max((gamma - k).abs());
                    }
                }
            }
        }
        Ok(OperatorSpec { opts, grid, coeffs, c_mu })
    }

    pub fn kind(&self) -> OperatorKind {
        self.opts.kind
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        if *u.grid != *self.grid {
            return Err(LabError::GridMismatch("field and operator grids differ".into()));
        }
        Ok(apply_normal_form(&self.coeffs, u))
    }
}

/// Second-order finite differences of a field: centered in r (one-sided at the
/// ends) and periodic centered in theta.
pub fn apply_normal_form(coeffs: &[NodeCoeffs], u: &Field) -> Field {
    let g = &u.grid;
    let n = g.dim_n();
    let s = g.slab();
    let nr = g.nr;
    let h = g.h;
    let dr = g.dr();
    let strides: Vec<usize> = (0..n).map(|j| g.nth[j + 1..].iter().product()).collect();
    let mut out = vec![C64::new(0.0, 0.0); u.data.len()];
    let at = |i: usize, m: usize| u.data[i * s + m];
    let shift = |m: usize, j: usize, d: i64| -> usize {
        let idx = (m / strides[j]) % g.nth[j];
        let k = (idx as i64 + d).rem_euclid(g.nth[j] as i64) as usize;
        m + k * strides[j] - idx * strides[j]
    };
    let radial = |i: usize, m: usize| -> (C64, C64) {
        if i == 0 {
            ((-3.0 * at(0, m) + 4.0 * at(1, m) - at(2, m)) / (2.0 * dr), (2.0 * at(0, m) - 5.0 * at(1, m) + 4.0 * at(2, m) - at(3, m)) / (dr * dr))
        } else if i + 1 == nr {
            (
                (3.0 * at(nr - 1, m) - 4.0 * at(nr - 2, m) + at(nr - 3, m)) / (2.0 * dr),
                (2.0 * at(nr - 1, m) - 5.0 * at(nr - 2, m) + 4.0 * at(nr - 3, m) - at(nr - 4, m)) / (dr * dr),
            )
        } else {
            ((at(i + 1, m) - at(i - 1, m)) / (2.0 * dr), (at(i + 1, m) - 2.0 * at(i, m) + at(i - 1, m)) / (dr * dr))
        }
    };
    for i in 0..nr {
        for m in 0..s {
            let c = &coeffs[i * s + m];
            let (ur, urr) = radial(i, m);
            let mut v = c.rr * h * h * urr + c.r * h * ur + c.c0 * at(i, m);
            for j in 0..n {
                let dth = g.dtheta(j);
                let (mp, mm) = (shift(m, j, 1), shift(m, j, -1));
                let uj = (at(i, mp) - at(i, mm)) / (2.0 * dth);
                let ujj = (at(i, mp) - 2.0 * at(i, m) + at(i, mm)) / (dth * dth);
                v += c.jj[j] * h * h * ujj + c.j[j] * h * uj;
                if c.rj[j] != C64::new(0.0, 0.0) {
                    let (urp, _) = radial(i, mp);
                    let (urm, _) = radial(i, mm);
                    v += c.rj[j] * h * h * (urp - urm) / (2.0 * dth);
                }
            }
            out[i * s + m] = v;
        }
    }
    Field { grid: g.clone(), data: out, support: crate::discretization::Support::General }
}

/// Applies the operator at a single point to a closure, with centered
/// differences of step `step` (used for cross-grid consistency checks).
pub fn apply_pointwise(opts: &OperatorOptions, u: &dyn Fn(f64, &[f64]) -> C64, r: f64, th: &[f64], h: f64, step: f64) -> Result<C64> {
    let c = coeffs_at(opts, r, th, h)?;
    let n = th.len();
    let e = step;
    let u0 = u(r, th);
    let ur = (u(r + e, th) - u(r - e, th)) / (2.0 * e);
    let urr = (u(r + e, th) - 2.0 * u0 + u(r - e, th)) / (e * e);
    let mut v = c.rr * h * h * urr + c.r * h * ur + c.c0 * u0;
    let mut tp = th.to_vec();
    let mut tm = th.to_vec();
    for j in 0..n {
        tp[j] = th[j] + e;
        tm[j] = th[j] - e;
        let up = u(r, &tp);
        let um = u(r, &tm);
        v += c.jj[j] * h * h * (up - 2.0 * u0 + um) / (e * e) + c.j[j] * h * (up - um) / (2.0 * e);
        let mixed = (u(r + e, &tp) - u(r - e, &tp) - u(r + e, &tm) + u(r - e, &tm)) / (4.0 * e * e);
        v += c.rj[j] * h * h * mixed;
        tp[j] = th[j];
        tm[j] = th[j];
    }
    Ok(v)
}

/// ||e^{phi^2/2eps} L_phi (e^{-phi^2/2eps} u) - L_{phi,eps} u||_{L2} / ||u||_{H2}.
pub fn conjugation_residual(l_phi: &OperatorSpec, l_phi_eps: &OperatorSpec, u: &Field) -> Result<f64> {
    if l_phi.opts.kind != OperatorKind::LPhi || l_phi_eps.opts.kind != OperatorKind::LPhiEps {
        return Err(LabError::MissingCoefficients("expected an (L_phi, L_phi_eps) pair".into()));
    }
    if *l_phi.grid != *l_phi_eps.grid || *u.grid != *l_phi.grid {
        return Err(LabError::GridMismatch("conjugation pair must share the grid".into()));
    }
    let g = &u.grid;
    let reg = Region::full(g);
    let denom = norm(u, Space::H2, &reg);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let eps = l_phi_eps.opts.eps;
    let s = l_phi_eps.opts.weight_sign;
    let weight = |i: usize| {
        let phi = s * g.r(i).ln();
        (phi * phi / (2.0 * eps)).exp()
    };
    let down = u.map(|i, _, z| z / weight(i));
    let lp = l_phi.apply(&down)?;
    let up = lp.map(|i, _, z| z * weight(i));
    let le = l_phi_eps.apply(u)?;
    let diff = up.axpy(C64::new(-1.0, 0.0), &le);
    Ok(norm(&diff, Space::L2, &reg) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(nr: usize, nth: usize, h: f64) -> Arc<Grid> {
        Arc::new(Grid::shell(2.0, nr, 2, nth, 1.0, h))
    }

    fn bump(g: &Arc<Grid>) -> Field {
        Field::from_fn(g.clone(), |r, th| {
            let x = (r - 1.5) / 0.3;
            let y = (th[0] - PI / 2.0) / 0.2;
            let z = (th[1] - PI / 2.0) / 0.2;
            C64::new((-x * x - y * y - z * z).exp(), 0.3 * (-x * x - y * y - z * z).exp() * th[1])
        })
    }

    #[test]
    fn radial_expansion_matches_closed_form() {
        // u = r: L_phi_eps u = -r^{-1}(2 - hn + 2(h/eps) log r) h + r^{-1}(...)
        let h = 0.1;
        let eps = 0.25;
        let n = 2.0;
        let g = grid(41, 8, h);
        let op = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhiEps).eps(eps), g.clone()).unwrap();
        let u = Field::from_fn(g.clone(), |r, _| C64::new(r, 0.0));
        let lu = op.apply(&u).unwrap();
        for i in 0..g.nr {
            let r = g.r(i);
            let l = r.ln();
            let expect = -(2.0 - h * n + 2.0 * (h / eps) * l) * h / r
                + (1.0 + h - h * n + (h * h / (eps * eps)) * (l * l - eps) + (h * h / eps) * l + (2.0 - h * n) * (h / eps) * l) / r;
            assert!((lu.at(i, 5).re - expect).abs() < 1e-8, "{i}: {} vs {expect}", lu.at(i, 5).re);
        }
    }

    #[test]
    fn model_sigma_reduces_to_flat_formula() {
        let h = 0.1;
        let g = grid(33, 16, h);
        let opts = OperatorOptions::new(OperatorKind::LTildeSigma).eps(0.25).sigma(SigmaMode::Model { k: 0.0 });
        let op = OperatorSpec::new(opts, g.clone()).unwrap();
        let u = bump(&g);
        let lu = op.apply(&u).unwrap();
        // independent assembly of h^2 u_rr - (2 alpha / r) h u_r + (alpha^2 + h^2 Lap_theta) u / r^2
        let s = g.slab();
        let dr = g.dr();
        let dt = g.dtheta(0);
        for i in 1..g.nr - 1 {
            let r = g.r(i);
            let alpha = 1.0 + (h / 0.25) * r.ln();
            for m in [0usize, 37, 100, 255] {
                let idx = g.theta_index(m);
                let nb = |a: i64, b: i64| {
                    let k0 = (idx[0] as i64 + a).rem_euclid(16) as usize;
                    let k1 = (idx[1] as i64 + b).rem_euclid(16) as usize;
                    u.at(i, k0 * 16 + k1)
                };
                let urr = (u.at(i + 1, m) - 2.0 * u.at(i, m) + u.at(i - 1, m)) / (dr * dr);
                let ur = (u.at(i + 1, m) - u.at(i - 1, m)) / (2.0 * dr);
                let lap = (nb(1, 0) + nb(-1, 0) + nb(0, 1) + nb(0, -1) - 4.0 * u.at(i, m)) / (dt * dt);
                let expect = h * h * urr - 2.0 * alpha / r * h * ur + (alpha * alpha * u.at(i, m) + h * h * lap) / (r * r);
                assert!((lu.at(i, m) - expect).norm() < 1e-10);
                let _ = s;
            }
        }
    }

    #[test]
    fn free_operator_on_plane_wave() {
        let h = 0.1;
        let g = grid(201, 8, h);
        let xi0 = 2.0 * PI * h * 1.0 / g.side[1];
        let opts = OperatorOptions::new(OperatorKind::LWq);
        let op = OperatorSpec::new(opts.clone(), g.clone()).unwrap();
        let u = Field::from_fn(g.clone(), |r, th| C64::from_polar(((r - 1.5) * 4.0).powi(2).neg_exp(), th[1] * xi0 / h));
        let lu = op.apply(&u).unwrap();
        let i = 100;
        let m = 3 * 8 + 5;
        let th = g.theta_point(m);
        let pw = apply_pointwise(&opts, &|r, t| C64::from_polar(((r - 1.5) * 4.0).powi(2).neg_exp(), t[1] * xi0 / h), g.r(i), &th, h, 1e-3).unwrap();
        // grid theta differences differ from point differences by O(dtheta^2)
        assert!((lu.at(i, m) - pw).norm() < 5e-2 * pw.norm().max(1e-3));
    }

    trait NegExp {
        fn neg_exp(self) -> f64;
    }
    impl NegExp for f64 {
        fn neg_exp(self) -> f64 {
            (-self).exp()
        }
    }

    #[test]
    fn linearity() {
        let g = grid(21, 8, 0.2);
        let opts = OperatorOptions::new(OperatorKind::LPhi).potentials(
            WField::Vortex { amp: 1.0, center: vec![0.0, 0.0, 1.5], width: 0.5 },
            QField::Const(0.7),
        );
        let op = OperatorSpec::new(opts, g.clone()).unwrap();
        let u = bump(&g);
        let v = Field::from_fn(g.clone(), |r, th| C64::new(r * th[0].sin(), th[1]));
        let a = C64::new(0.3, -1.2);
        let lhs = op.apply(&u.axpy(a, &v)).unwrap();
        let rhs = op.apply(&u).unwrap().axpy(a, &op.apply(&v).unwrap());
        let err = lhs.data.iter().zip(&rhs.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn conjugation_residual_is_second_order() {
        let mut res = Vec::new();
        for k in [1usize, 2] {
            let g = grid(20 * k + 1, 16 * k, 0.1);
            let p = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhi), g.clone()).unwrap();
            let e = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhiEps).eps(0.25), g.clone()).unwrap();
            res.push(conjugation_residual(&p, &e, &bump(&g)).unwrap());
        }
        let ratio = res[0] / res[1];
        assert!(ratio > 3.0 && ratio < 5.0, "{res:?}");
    }

    #[test]
    fn huge_eps_reduces_to_l_phi() {
        let g = grid(21, 8, 0.1);
        let p = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhi), g.clone()).unwrap();
        let e = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhiEps).eps(1e12), g.clone()).unwrap();
        let u = bump(&g);
        let a = p.apply(&u).unwrap();
        let b = e.apply(&u).unwrap();
        let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}

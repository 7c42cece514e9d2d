//! Star-shaped domains r >= f(theta) in one spherical chart, boundary
//! classification relative to the origin, and the flattening / inversion maps.

use crate::error::{LabError, Result};
use std::f64::consts::FRAC_PI_2;

/// Parametrization of log f on the chart.
#[derive(Clone, Debug, PartialEq)]
pub enum FSpec {
    Const(f64),
    /// f = exp(K theta_n).
    ExpLinear(f64),
    /// log f = c0 + sum a cos(k.theta) + b sin(k.theta); entries (k, a, b).
    Trig { c0: f64, terms: Vec<(Vec<f64>, f64, f64)> },
}

impl FSpec {
    pub fn log_f(&self, th: &[f64]) -> f64 {
        match self {
            FSpec::Const(c) => c.ln(),
            FSpec::ExpLinear(k) => k * th[th.len() - 1],
            FSpec::Trig { c0, terms } => {
                let mut s = *c0;
                for (k, a, b) in terms {
                    let p: f64 = k.iter().zip(th).map(|(k, t)| k * t).sum();
                    s += a * p.cos() + b * p.sin();
                }
                s
            }
        }
    }

    pub fn f(&self, th: &[f64]) -> f64 {
        match self {
            FSpec::Const(c) => *c,
            _ => self.log_f(th).exp(),
        }
    }

    /// Coordinate partials d log f / d theta_j.
    pub fn grad_log_f(&self, th: &[f64]) -> Vec<f64> {
        let n = th.len();
        match self {
            FSpec::Const(_) => vec![0.0; n],
            FSpec::ExpLinear(k) => {
                let mut g = vec![0.0; n];
                g[n - 1] = *k;
                g
            }
            FSpec::Trig { terms, .. } => {
                let mut g = vec![0.0; n];
                for (k, a, b) in terms {
                    let p: f64 = k.iter().zip(th).map(|(k, t)| k * t).sum();
                    let d = -a * p.sin() + b * p.cos();
                    for j in 0..n {
                        g[j] += d * k[j];
                    }
                }
                g
            }
        }
    }
}

/// Spherical chart x = r * (cos t1, sin t1 cos t2, ...).
pub fn to_cartesian(r: f64, th: &[f64]) -> Vec<f64> {
    let n = th.len();
    let mut x = vec![0.0; n + 1];
    let mut s = r;
    for j in 0..n {
        x[j] = s * th[j].cos();
        s *= th[j].sin();
    }
    x[n] = s;
    x
}

/// Inverse of `to_cartesian` with angles in the principal chart
/// (t_j in (0, pi) for j < n, t_n in (-pi, pi]).
pub fn from_cartesian(x: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() - 1;
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut th = vec![0.0; n];
    for j in 0..n {
        let tail: f64 = x[j + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if j + 1 == n {
            th[j] = x[n].atan2(x[n - 1]);
        } else {
            th[j] = tail.atan2(x[j]);
        }
    }
    (r, th)
}

/// Tangent vector d x / d theta_j at (r, theta).
pub fn coordinate_tangent(r: f64, th: &[f64], j: usize) -> Vec<f64> {
    let n = th.len();
    let mut x = vec![0.0; n + 1];
    let mut s = r;
    for k in 0..n {
        let (c, sn) = (th[k].cos(), th[k].sin());
        if k == j {
            x[k] = -s * sn;
            let mut s2 = s * c;
            for m in k + 1..n {
                x[m] = s2 * th[m].cos();
                s2 *= th[m].sin();
            }
            x[n] = s2;
            return x;
        }
        x[k] = 0.0;
        s *= sn;
    }
    x
}

/// Inverse sphere metric diagonal a_j = 1 / prod_{k<j} sin^2 theta_k.
pub fn sphere_inverse_metric(th: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(th.len());
    let mut p = 1.0;
    for t in th {
        a.push(1.0 / p);
        p *= t.sin().powi(2);
    }
    a
}

#[derive(Clone, Debug)]
pub struct StarDomain {
    pub f: FSpec,
    pub r_max: f64,
    pub theta_box: Vec<(f64, f64)>,
    pub dim_n: usize,
    /// Certificate H with H.x > 0 on all boundary samples.
    pub hyperplane: Vec<f64>,
}

pub fn default_box(n: usize, half: f64) -> Vec<(f64, f64)> {
    (0..n).map(|_| (FRAC_PI_2 - half, FRAC_PI_2 + half)).collect()
}

fn lattice(theta_box: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let n = theta_box.len();
    let total = per_axis.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut th = vec![0.0; n];
        for j in 0..n {
            let k = rem % per_axis;
            rem /= per_axis;
            let (a, b) = theta_box[j];
            th[j] = a + (b - a) * k as f64 / (per_axis - 1) as f64;
        }
        out.push(th);
    }
    out
}

/// Validated star domain.
pub fn make_star_domain(f: FSpec, theta_box: Vec<(f64, f64)>, r_max: f64, dim_n: usize) -> Result<StarDomain> {
    if theta_box.len() != dim_n || dim_n == 0 {
        return Err(LabError::Config(format!("theta_box has {} axes for n = {dim_n}", theta_box.len())));
    }
    for (j, (a, b)) in theta_box.iter().enumerate() {
        if !(a < b) {
            return Err(LabError::Config(format!("empty chart interval on axis {j}")));
        }
        if j + 1 < dim_n && (*a <= 0.0 || *b >= std::f64::consts::PI) {
            return Err(LabError::Config(format!("chart axis {j} touches a coordinate pole")));
        }
    }
    if let FSpec::Const(c) = f {
        if !(c > 0.0) {
            return Err(LabError::NonPositiveF(c));
        }
    }
    let per = if dim_n <= 2 { 41 } else { 9 };
    let pts = lattice(&theta_box, per);
    let fmin = pts.iter().map(|t| f.f(t)).fold(f64::INFINITY, f64::min);
    let fmax = pts.iter().map(|t| f.f(t)).fold(0.0, f64::max);
    if !(fmin >= 1e-6) {
        return Err(LabError::NonPositiveF(fmin));
    }
    if !(r_max > fmax) {
        return Err(LabError::Config(format!("r_max = {r_max} must exceed max f = {fmax}")));
    }
    let mut dom = StarDomain { f, r_max, theta_box, dim_n, hyperplane: vec![] };
    let samples: Vec<Vec<f64>> = boundary_samples(&dom, 17).into_iter().map(|s| s.x).collect();
    dom.hyperplane = separating_hyperplane(&samples).ok_or(LabError::HullContainsOrigin)?;
    Ok(dom)
}

/// Perceptron search for H with H.x > 0 on all points (unit-normalized).
pub fn separating_hyperplane(points: &[Vec<f64>]) -> Option<Vec<f64>> {
    let d = points.first()?.len();
    let unit: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.iter().map(|v| v / n).collect()
        })
        .collect();
    let mut h = vec![0.0; d];
    for p in &unit {
        for k in 0..d {
            h[k] += p[k];
        }
    }
    for _ in 0..20000 {
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if hn == 0.0 {
            h = unit[0].clone();
            continue;
        }
        let (mut worst, mut wi) = (f64::INFINITY, 0);
        for (i, p) in unit.iter().enumerate() {
            let s: f64 = p.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() / hn;
            if s < worst {
                worst = s;
                wi = i;
            }
        }
        if worst > 1e-9 {
            return Some(h.iter().map(|v| v / hn).collect());
        }
        for k in 0..d {
            h[k] += unit[wi][k];
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Inner,
    Outer,
    Side { axis: usize, high: bool },
}

#[derive(Clone, Debug)]
pub struct BoundarySample {
    pub r: f64,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub normal: Vec<f64>,
    pub face: Face,
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

/// Samples of the boundary with analytic outward normals.
pub fn boundary_samples(dom: &StarDomain, per_axis: usize) -> Vec<BoundarySample> {
    let n = dom.dim_n;
    let mut out = Vec::new();
    for th in lattice(&dom.theta_box, per_axis) {
        let f = dom.f.f(&th);
        let x = to_cartesian(f, &th);
        let er: Vec<f64> = x.iter().map(|v| v / f).collect();
        let g = dom.f.grad_log_f(&th);
        let a = sphere_inverse_metric(&th);
        let mut grad = vec![0.0; n + 1];
        for j in 0..n {
            let t = coordinate_tangent(f, &th, j);
            // grad_x f = sum_j g^{jj} d_j f d_j x with g^{jj} = a_j / r^2
            let c = a[j] / (f * f) * g[j] * f;
            for k in 0..=n {
                grad[k] += c * t[k];
            }
        }
        let nu = normalize(er.iter().zip(&grad).map(|(e, gr)| -(e - gr)).collect());
        out.push(BoundarySample { r: f, theta: th.clone(), x, normal: nu, face: Face::Inner });
        let xo = to_cartesian(dom.r_max, &th);
        let nu_o: Vec<f64> = xo.iter().map(|v| v / dom.r_max).collect();
        out.push(BoundarySample { r: dom.r_max, theta: th, x: xo, normal: nu_o, face: Face::Outer });
    }
    for axis in 0..n {
        let sub: Vec<(f64, f64)> = dom.theta_box.clone();
        for high in [false, true] {
            let tj = if high { sub[axis].1 } else { sub[axis].0 };
            for mut th in lattice(&sub, per_axis) {
                if th[axis] != sub[axis].0 {
                    continue;
                }
                th[axis] = tj;
                let f = dom.f.f(&th);
                for k in 1..per_axis - 1 {
                    let r = f + (dom.r_max - f) * k as f64 / (per_axis - 1) as f64;
                    let x = to_cartesian(r, &th);
                    let t = coordinate_tangent(r, &th, axis);
                    let sgn = if high { 1.0 } else { -1.0 };
                    let nu = normalize(t.iter().map(|v| sgn * v).collect());
                    out.push(BoundarySample { r, theta: th.clone(), x, normal: nu, face: Face::Side { axis, high } });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct Margins {
    pub tau_nu: f64,
    pub eps_z: f64,
    pub u_dilation: f64,
}

impl Margins {
    pub fn defaults(dom: &StarDomain) -> Margins {
        let d = boundary_diameter(dom);
        Margins { tau_nu: 1e-8, eps_z: 0.05 * d, u_dilation: 0.05 * d }
    }
}

pub fn boundary_diameter(dom: &StarDomain) -> f64 {
    let s = boundary_samples(dom, 9);
    let mut d: f64 = 0.0;
    for a in &s {
        for b in &s {
            let e = a.x.iter().zip(&b.x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            d = d.max(e);
        }
    }
    d
}

#[derive(Clone, Debug)]
pub struct BoundaryClassification {
    pub samples: Vec<BoundarySample>,
    pub front: Vec<bool>,
    pub back: Vec<bool>,
    pub tangential: Vec<bool>,
    pub u_mask: Vec<bool>,
    pub e_mask: Vec<bool>,
    pub margins: Margins,
}

/// E in chart coordinates: the theta box shrunk by eps_z on every side.
pub fn e_box(dom: &StarDomain, m: &Margins) -> Vec<(f64, f64)> {
    dom.theta_box.iter().map(|(a, b)| (a + m.eps_z, b - m.eps_z)).collect()
}

pub fn classify_boundary(dom: &StarDomain, m: Margins) -> Result<BoundaryClassification> {
    classify_samples(dom, boundary_samples(dom, 25), m)
}

pub fn classify_samples(dom: &StarDomain, samples: Vec<BoundarySample>, m: Margins) -> Result<BoundaryClassification> {
    let eb = e_box(dom, &m);
    let xdn: Vec<f64> = samples.iter().map(|s| s.x.iter().zip(&s.normal).map(|(a, b)| a * b).sum()).collect();
    let front: Vec<bool> = xdn.iter().map(|v| *v <= m.tau_nu).collect();
    let back: Vec<bool> = xdn.iter().map(|v| *v >= -m.tau_nu).collect();
    let tangential: Vec<bool> = front.iter().zip(&back).map(|(a, b)| *a && *b).collect();
    let e_mask: Vec<bool> = samples
        .iter()
        .zip(&xdn)
        .map(|(s, v)| {
            s.face == Face::Inner && -v >= m.eps_z && s.theta.iter().zip(&eb).all(|(t, (a, b))| *t >= a - 1e-12 && *t <= b + 1e-12)
        })
        .collect();
    if !e_mask.iter().any(|b| *b) {
        return Err(LabError::EmptyE);
    }
    let fronts: Vec<&BoundarySample> = samples.iter().zip(&front).filter(|(_, f)| **f).map(|(s, _)| s).collect();
    let u_mask: Vec<bool> = samples
        .iter()
        .zip(&front)
        .map(|(s, f)| {
            *f || fronts.iter().any(|q| {
                let d2: f64 = q.x.iter().zip(&s.x).map(|(a, b)| (a - b).powi(2)).sum();
                d2 <= m.u_dilation * m.u_dilation
            })
        })
        .collect();
    Ok(BoundaryClassification { samples, front, back, tangential, u_mask, e_mask, margins: m })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn in_box(dom: &StarDomain, th: &[f64]) -> bool {
    th.iter().zip(&dom.theta_box).all(|(t, (a, b))| *t >= a - 1e-12 && *t <= b + 1e-12)
}

/// (r, theta) -> (r / f(theta), theta) and its inverse.
pub fn flatten_map(r: f64, th: &[f64], dom: &StarDomain, dir: Direction) -> Result<(f64, Vec<f64>)> {
    if !(r > 0.0) || !in_box(dom, th) {
        return Err(LabError::OutOfChart(format!("r = {r}, theta = {th:?}")));
    }
    let f = dom.f.f(th);
    Ok(match dir {
        Direction::Forward => (r / f, th.to_vec()),
        Direction::Inverse => (r * f, th.to_vec()),
    })
}

pub fn invert_radius(r: f64, th: &[f64]) -> (f64, Vec<f64>) {
    (1.0 / r, th.to_vec())
}

/// Domain with the chart box scaled about its center and the radial extent
/// scaled from the inner graph.
pub fn enlarge(dom: &StarDomain, factor: f64) -> Result<StarDomain> {
    let tb: Vec<(f64, f64)> = dom
        .theta_box
        .iter()
        .map(|(a, b)| {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a) * factor;
            (c - h, c + h)
        })
        .collect();
    let fmin = lattice(&dom.theta_box, 9).iter().map(|t| dom.f.f(t)).fold(f64::INFINITY, f64::min);
    make_star_domain(dom.f.clone(), tb, fmin + (dom.r_max - fmin) * factor, dom.dim_n)
}

/// Default shell segment 1 <= r <= 2 over a box of half-width 0.4 about (pi/2, pi/2).
pub fn default_shell() -> StarDomain {
    make_star_domain(FSpec::Const(1.0), default_box(2, 0.4), 2.0, 2).expect("default shell is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_round_trip() {
        let th = [1.1, 0.7];
        let x = to_cartesian(1.7, &th);
        let (r, t) = from_cartesian(&x);
        assert!((r - 1.7).abs() < 1e-14);
        assert!((t[0] - 1.1).abs() < 1e-14 && (t[1] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn tangent_matches_difference() {
        let th = [1.2, 1.4];
        let e = 1e-6;
        for j in 0..2 {
            let mut tp = th;
            tp[j] += e;
            let mut tm = th;
            tm[j] -= e;
            let a = to_cartesian(1.3, &tp);
            let b = to_cartesian(1.3, &tm);
            let t = coordinate_tangent(1.3, &th, j);
            for k in 0..3 {
                assert!(((a[k] - b[k]) / (2.0 * e) - t[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shell_faces_classify() {
        let d = default_shell();
        let c = classify_boundary(&d, Margins::defaults(&d)).unwrap();
        for (i, s) in c.samples.iter().enumerate() {
            match s.face {
                Face::Inner => assert!(c.front[i] && !c.back[i]),
                Face::Outer => assert!(c.back[i] && !c.front[i]),
                Face::Side { .. } => assert!(c.tangential[i]),
            }
        }
        assert!(c.e_mask.iter().zip(&c.front).all(|(e, f)| !e || *f));
    }

    #[test]
    fn flatten_constant_two() {
        let d = make_star_domain(FSpec::Const(2.0), default_box(2, 0.3), 4.0, 2).unwrap();
        let (r, _) = flatten_map(3.0, &[1.5, 1.6], &d, Direction::Forward).unwrap();
        assert!((r - 1.5).abs() < 1e-15);
        assert!(flatten_map(3.0, &[0.2, 1.6], &d, Direction::Forward).is_err());
    }
}

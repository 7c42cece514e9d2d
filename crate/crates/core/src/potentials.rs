//! Magnetic and electric potential families in Cartesian coordinates.

use crate::error::{LabError, Result};
use std::io::Read;
use std::sync::Arc;

/// Gauge function families for W = grad Psi.
#[derive(Clone, Debug, PartialEq)]
pub enum PsiSpec {
    /// amp * exp(-|x - c|^2 / (2 s^2))
    Gauss { amp: f64, center: Vec<f64>, width: f64 },
    /// amp * (R^2 - |x|^2) * (1 + x1 + x2 x3 / 2): vanishes on the sphere |x| = R.
    BallVanishing { amp: f64, radius: f64 },
    /// amp * (r - r_in)^2 (r_out - r) * exp(-|x/r - d|^2 / (2 s^2)): vanishes on both
    /// spheres with zero normal derivative on the inner one.
    ShellVanishing { amp: f64, r_in: f64, r_out: f64, dir: Vec<f64>, width: f64 },
    /// amp * (r - r_in)^2 (r_out - r) B(t1) B(t2) in the chart angles of `frame`
    /// (world = frame * chart), with B a compactly supported smooth bump on each angle
    /// interval: zero on every face of the chart box, zero normal derivative on all
    /// faces except r = r_out.
    ChartBump { amp: f64, r_in: f64, r_out: f64, frame: [[f64; 3]; 3], t1: (f64, f64), t2: (f64, f64) },
}

impl PsiSpec {
    /// (Psi, grad Psi, Laplacian Psi)
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let d = x.len();
        match self {
            PsiSpec::Gauss { amp, center, width } => {
                let s2 = width * width;
                let dx: Vec<f64> = (0..d).map(|j| x[j] - center.get(j).copied().unwrap_or(0.0)).collect();
                let q: f64 = dx.iter().map(|v| v * v).sum();
                let g = amp * (-q / (2.0 * s2)).exp();
                let grad = dx.iter().map(|v| -g * v / s2).collect();
                let lap = g * (q / (s2 * s2) - d as f64 / s2);
                (g, grad, lap)
            }
            PsiSpec::BallVanishing { amp, radius } => {
                let x2 = |j: usize| if j < d { x[j] } else { 0.0 };
                let rr: f64 = x.iter().map(|v| v * v).sum();
                let a = radius * radius - rr;
                let b = 1.0 + x2(0) + 0.5 * x2(1) * x2(2);
                let mut db = vec![0.0; d];
                db[0] = 1.0;
                if d > 2 {
                    db[1] = 0.5 * x2(2);
                    db[2] = 0.5 * x2(1);
                }
                let grad = (0..d).map(|j| amp * (-2.0 * x[j] * b + a * db[j])).collect();
                let xdb: f64 = (0..d).map(|j| x[j] * db[j]).sum();
                let lap = amp * (-2.0 * d as f64 * b - 4.0 * xdb);
                (amp * a * b, grad, lap)
            }
            PsiSpec::ShellVanishing { amp, r_in, r_out, dir, width } => {
                let (v, g, l) = shell_psi(x, *r_in, *r_out, dir, *width);
                (amp * v, g.iter().map(|t| amp * t).collect(), amp * l)
            }
            PsiSpec::ChartBump { amp, r_in, r_out, frame, t1, t2 } => {
                let (v, g) = chart_bump(x, *r_in, *r_out, frame, *t1, *t2);
                let l = laplace_numeric(&|z: &[f64]| chart_bump(z, *r_in, *r_out, frame, *t1, *t2).0, x);
                (amp * v, g.iter().map(|t| amp * t).collect(), amp * l)
            }
        }
    }
}

/// exp(1 - 1/(1 - x^2)) on (-1, 1) mapped to (lo, hi), with its t-derivative.
fn bump(t: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let x = (2.0 * t - lo - hi) / (hi - lo);
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let d = 1.0 - x * x;
    let b = (1.0 - 1.0 / d).exp();
    (b, b * (-2.0 * x / (d * d)) * 2.0 / (hi - lo))
}

fn chart_bump(x: &[f64], r_in: f64, r_out: f64, frame: &[[f64; 3]; 3], t1r: (f64, f64), t2r: (f64, f64)) -> (f64, Vec<f64>) {
    let y: Vec<f64> = (0..3).map(|c| (0..3).map(|r| frame[r][c] * x[r]).sum()).collect();
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let rho2 = y[1] * y[1] + y[2] * y[2];
    let t1 = (y[0] / r).clamp(-1.0, 1.0).acos();
    let t2 = y[2].atan2(y[1]);
    let (b1, db1) = bump(t1, t1r);
    let (b2, db2) = bump(t2, t2r);
    if b1 == 0.0 || b2 == 0.0 {
        return (0.0, vec![0.0; 3]);
    }
    let rad = (r - r_in).powi(2) * (r_out - r);
    let drad = 2.0 * (r - r_in) * (r_out - r) - (r - r_in).powi(2);
    let sn = rho2.sqrt() / r;
    // chart-space gradients of r, t1, t2
    let gr: Vec<f64> = y.iter().map(|v| v / r).collect();
    let g1: Vec<f64> = (0..3).map(|j| -((if j == 0 { 1.0 } else { 0.0 }) / r - y[0] * y[j] / (r * r * r)) / sn).collect();
    let g2 = [0.0, -y[2] / rho2, y[1] / rho2];
    let gy: Vec<f64> = (0..3).map(|j| drad * b1 * b2 * gr[j] + rad * db1 * b2 * g1[j] + rad * b1 * db2 * g2[j]).collect();
    let gx = (0..3).map(|r| (0..3).map(|c| frame[r][c] * gy[c]).sum()).collect();
    (rad * b1 * b2, gx)
}

fn shell_psi(x: &[f64], r_in: f64, r_out: f64, dir: &[f64], width: f64) -> (f64, Vec<f64>, f64) {
    let d = x.len();
    let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rad = (r - r_in).powi(2) * (r_out - r);
    let drad = 2.0 * (r - r_in) * (r_out - r) - (r - r_in).powi(2);
    let ddrad = 2.0 * (r_out - r) - 4.0 * (r - r_in);
    // angular factor B(y) = exp(-|y - dir|^2 / (2 w^2)), y = x / r, homogeneous of degree 0
    let y: Vec<f64> = x.iter().map(|v| v / r).collect();
    let dy: Vec<f64> = (0..d).map(|j| y[j] - dir.get(j).copied().unwrap_or(0.0)).collect();
    let w2 = width * width;
    let bval = (-dy.iter().map(|v| v * v).sum::<f64>() / (2.0 * w2)).exp();
    // gradient of B in y, projected on the tangent plane and divided by r
    let gy: Vec<f64> = dy.iter().map(|v| -bval * v / w2).collect();
    let ydot: f64 = gy.iter().zip(&y).map(|(a, b)| a * b).sum();
    let gb: Vec<f64> = (0..d).map(|j| (gy[j] - ydot * y[j]) / r).collect();
    let val = rad * bval;
    let grad: Vec<f64> = (0..d).map(|j| drad * y[j] * bval + rad * gb[j]).collect();
    // Laplacian: B'' rad + 2 grad rad . grad B + rad lap B, with grad rad . grad B = 0
    let lap_rad = ddrad + (d as f64 - 1.0) / r * drad;
    let lap_b = laplace_numeric(&|z: &[f64]| {
        let rz: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q: f64 = (0..d).map(|j| (z[j] / rz - dir.get(j).copied().unwrap_or(0.0)).powi(2)).sum();
        (-q / (2.0 * w2)).exp()
    }, x);
    (val, grad, lap_rad * bval + rad * lap_b)
}

fn laplace_numeric(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let e = 1e-4;
    let f0 = f(x);
    let mut acc = 0.0;
    let mut y = x.to_vec();
    for j in 0..x.len() {
        y[j] = x[j] + e;
        let fp = f(&y);
        y[j] = x[j] - e;
        let fm = f(&y);
        y[j] = x[j];
        acc += (fp - 2.0 * f0 + fm) / (e * e);
    }
    acc
}

/// Regular 3D lattice of samples with trilinear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub comps: usize,
    pub data: Vec<f64>,
}

impl Lattice {
    /// `CLVEC v1 nx ny nz x0 y0 z0 dx dy dz` (3 comps) or `CLSCAL v1 ...` (1 comp),
    /// then little-endian f64 values, x fastest.
    pub fn read<R: Read>(r: &mut R) -> Result<Lattice> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| LabError::Io("missing lattice header".into()))?;
        let header = String::from_utf8_lossy(&bytes[..nl]).to_string();
        let t: Vec<&str> = header.split_whitespace().collect();
        let comps = match (t.first().copied(), t.get(1).copied()) {
            (Some("CLVEC"), Some("v1")) => 3,
            (Some("CLSCAL"), Some("v1")) => 1,
            _ => return Err(LabError::Io(format!("bad lattice header '{header}'"))),
        };
        if t.len() != 11 {
            return Err(LabError::Io(format!("bad lattice header '{header}'")));
        }
        let u = |s: &str| s.parse::<usize>().map_err(|_| LabError::Io(format!("bad integer '{s}'")));
        let f = |s: &str| s.parse::<f64>().map_err(|_| LabError::Io(format!("bad number '{s}'")));
        let dims = [u(t[2])?, u(t[3])?, u(t[4])?];
        let origin = [f(t[5])?, f(t[6])?, f(t[7])?];
        let spacing = [f(t[8])?, f(t[9])?, f(t[10])?];
        let count = dims[0] * dims[1] * dims[2] * comps;
        let body = &bytes[nl + 1..];
        if body.len() != 8 * count || dims.iter().any(|d| *d < 2) {
            return Err(LabError::Io("lattice size mismatch".into()));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Lattice { dims, origin, spacing, comps, data })
    }

    pub fn write(&self) -> Vec<u8> {
        let tag = if self.comps == 3 { "CLVEC" } else { "CLSCAL" };
        let mut out = format!(
            "{tag} v1 {} {} {} {} {} {} {} {} {}\n",
            self.dims[0], self.dims[1], self.dims[2], self.origin[0], self.origin[1], self.origin[2], self.spacing[0], self.spacing[1], self.spacing[2]
        )
        .into_bytes();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_fn(dims: [usize; 3], origin: [f64; 3], spacing: [f64; 3], comps: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Lattice {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2] * comps);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = [origin[0] + i as f64 * spacing[0], origin[1] + j as f64 * spacing[1], origin[2] + k as f64 * spacing[2]];
                    data.extend(f(&x).into_iter().take(comps));
                }
            }
        }
        Lattice { dims, origin, spacing, comps, data }
    }

    /// Trilinear interpolation (clamped to the lattice box).
    pub fn sample(&self, x: &[f64]) -> Vec<f64> {
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let xa = if a < x.len() { x[a] } else { 0.0 };
            let s = ((xa - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.dims[a] - 2);
            idx[a] = i;
            frac[a] = s - i as f64;
        }
        let mut out = vec![0.0; self.comps];
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let lin = ((idx[2] + o[2]) * self.dims[1] + idx[1] + o[1]) * self.dims[0] + idx[0] + o[0];
            for k in 0..self.comps {
                out[k] += w * self.data[lin * self.comps + k];
            }
        }
        out
    }
}

/// Real magnetic potential W(x).
#[derive(Clone, Debug)]
pub enum WField {
    Zero,
    Gradient(PsiSpec),
    /// Gaussian vortex in the (x1, x2) plane: amp * exp(-|x - c|^2/(2 s^2)) * (-(x2-c2), x1-c1, 0...).
    Vortex { amp: f64, center: Vec<f64>, width: f64 },
    /// Constant field.
    Uniform(Vec<f64>),
    Samples(Arc<Lattice>),
    Sum(Vec<WField>),
}

impl WField {
    pub fn is_zero(&self) -> bool {
        match self {
            WField::Zero => true,
            WField::Sum(v) => v.iter().all(|w| w.is_zero()),
            _ => false,
        }
    }

    pub fn w(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            WField::Zero => vec![0.0; d],
            WField::Gradient(p) => p.eval(x).1,
            WField::Vortex { amp, center, width } => {
                let c = |j: usize| center.get(j).copied().unwrap_or(0.0);
                let q: f64 = (0..d).map(|j| (x[j] - c(j)).powi(2)).sum();
                let g = amp * (-q / (2.0 * width * width)).exp();
                let mut v = vec![0.0; d];
                v[0] = -g * (x[1] - c(1));
                v[1] = g * (x[0] - c(0));
                v
            }
            WField::Uniform(u) => (0..d).map(|j| u.get(j).copied().unwrap_or(0.0)).collect(),
            WField::Samples(l) => {
                let s = l.sample(x);
                (0..d).map(|j| s.get(j).copied().unwrap_or(0.0)).collect()
            }
            WField::Sum(v) => {
                let mut acc = vec![0.0; d];
                for w in v {
                    for (a, b) in acc.iter_mut().zip(w.w(x)) {
                        *a += b;
                    }
                }
                acc
            }
        }
    }

    pub fn div(&self, x: &[f64]) -> f64 {
        match self {
            WField::Zero | WField::Vortex { .. } | WField::Uniform(_) => 0.0,
            WField::Gradient(p) => p.eval(x).2,
            WField::Samples(_) => {
                let e = 1e-5;
                let mut y = x.to_vec();
                let mut acc = 0.0;
                for j in 0..x.len() {
                    y[j] = x[j] + e;
                    let p = self.w(&y)[j];
                    y[j] = x[j] - e;
                    let m = self.w(&y)[j];
                    y[j] = x[j];
                    acc += (p - m) / (2.0 * e);
                }
                acc
            }
            WField::Sum(v) => v.iter().map(|w| w.div(x)).sum(),
        }
    }

    /// Line integral of W along the straight segment a -> b (8-point Gauss).
    pub fn line_integral(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let (xs, ws) = crate::numerics::gauss_legendre(8);
        let d = a.len();
        let dir: Vec<f64> = (0..d).map(|j| b[j] - a[j]).collect();
        let mut acc = 0.0;
        for (t, w) in xs.iter().zip(&ws) {
            let s = 0.5 * (t + 1.0);
            let p: Vec<f64> = (0..d).map(|j| a[j] + s * dir[j]).collect();
            let v = self.w(&p);
            acc += 0.5 * w * v.iter().zip(&dir).map(|(x, y)| x * y).sum::<f64>();
        }
        acc
    }
}

/// Bounded electric potential q(x).
#[derive(Clone, Debug)]
pub enum QField {
    Const(f64),
    /// amp * exp(-|x - c|^2/(2 s^2))
    Bump { amp: f64, center: Vec<f64>, width: f64 },
    Samples(Arc<Lattice>),
    Sum(Vec<QField>),
}

impl QField {
    pub fn q(&self, x: &[f64]) -> f64 {
        match self {
            QField::Const(c) => *c,
            QField::Bump { amp, center, width } => {
                let q: f64 = x.iter().enumerate().map(|(j, v)| (v - center.get(j).copied().unwrap_or(0.0)).powi(2)).sum();
                amp * (-q / (2.0 * width * width)).exp()
            }
            QField::Samples(l) => l.sample(x)[0],
            QField::Sum(v) => v.iter().map(|p| p.q(x)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, QField::Const(c) if *c == 0.0)
    }
}

fn nums(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad number '{t}'")))).collect()
}

fn read_lattice(path: &str, comps: usize) -> Result<Arc<Lattice>> {
    let mut f = std::fs::File::open(path).map_err(|e| LabError::Io(format!("{path}: {e}")))?;
    let l = Lattice::read(&mut f)?;
    if l.comps != comps {
        return Err(LabError::Config(format!("{path}: expected {comps} components")));
    }
    Ok(Arc::new(l))
}

/// Parse a Psi spec: `gauss:A,c1,c2,c3,s`, `ball:A,R`, `shell:A,r_in,r_out,d1,d2,d3,s`.
pub fn parse_psi(s: &str) -> Result<PsiSpec> {
    let (kind, rest) = s.split_once(':').ok_or_else(|| LabError::Config(format!("bad Psi spec '{s}'")))?;
    let v = nums(rest)?;
    match (kind, v.len()) {
        ("gauss", 5) => Ok(PsiSpec::Gauss { amp: v[0], center: v[1..4].to_vec(), width: v[4] }),
        ("ball", 2) => Ok(PsiSpec::BallVanishing { amp: v[0], radius: v[1] }),
        ("shell", 7) => Ok(PsiSpec::ShellVanishing { amp: v[0], r_in: v[1], r_out: v[2], dir: v[3..6].to_vec(), width: v[6] }),
        _ => Err(LabError::Config(format!("bad Psi spec '{s}'"))),
    }
}

/// `zero | gradient:<psi> | solenoidal:A,c1,c2,c3,s | uniform:w1,w2,w3 | samples:<path>`,
/// with `+` joining several terms.
pub fn parse_w(s: &str) -> Result<WField> {
    let parts: Vec<&str> = s.split('+').map(|p| p.trim()).collect();
    if parts.len() > 1 {
        return Ok(WField::Sum(parts.iter().map(|p| parse_w(p)).collect::<Result<_>>()?));
    }
    let s = parts[0];
    if s == "zero" {
        return Ok(WField::Zero);
    }
    let (kind, rest) = s.split_once(':').ok_or_else(|| LabError::Config(format!("bad W spec '{s}'")))?;
    match kind {
        "gradient" => Ok(WField::Gradient(parse_psi(rest)?)),
        "solenoidal" => {
            let v = nums(rest)?;
            if v.len() != 5 {
                return Err(LabError::Config(format!("bad solenoidal spec '{rest}'")));
            }
            Ok(WField::Vortex { amp: v[0], center: v[1..4].to_vec(), width: v[4] })
        }
        "uniform" => Ok(WField::Uniform(nums(rest)?)),
        "samples" => Ok(WField::Samples(read_lattice(rest, 3)?)),
        _ => Err(LabError::Config(format!("bad W spec '{s}'"))),
    }
}

/// `const:<v> | bump:A,c1,c2,c3,s | samples:<path>`, `+` joins terms.
pub fn parse_q(s: &str) -> Result<QField> {
    let parts: Vec<&str> = s.split('+').map(|p| p.trim()).collect();
    if parts.len() > 1 {
        return Ok(QField::Sum(parts.iter().map(|p| parse_q(p)).collect::<Result<_>>()?));
    }
    let (kind, rest) = parts[0].split_once(':').ok_or_else(|| LabError::Config(format!("bad q spec '{s}'")))?;
    match kind {
        "const" => Ok(QField::Const(rest.trim().parse().map_err(|_| LabError::Config(format!("bad q value '{rest}'")))?)),
        "bump" => {
            let v = nums(rest)?;
            if v.len() != 5 {
                return Err(LabError::Config(format!("bad bump spec '{rest}'")));
            }
            Ok(QField::Bump { amp: v[0], center: v[1..4].to_vec(), width: v[4] })
        }
        "samples" => Ok(QField::Samples(read_lattice(rest, 1)?)),
        _ => Err(LabError::Config(format!("bad q spec '{s}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(p: &PsiSpec, x: &[f64]) -> (Vec<f64>, f64) {
        let e = 1e-4;
        let mut y = x.to_vec();
        let f0 = p.eval(x).0;
        let mut g = vec![0.0; x.len()];
        let mut lap = 0.0;
        for j in 0..x.len() {
            y[j] = x[j] + e;
            let fp = p.eval(&y).0;
            y[j] = x[j] - e;
            let fm = p.eval(&y).0;
            y[j] = x[j];
            g[j] = (fp - fm) / (2.0 * e);
            lap += (fp - 2.0 * f0 + fm) / (e * e);
        }
        (g, lap)
    }

    #[test]
    fn psi_derivatives_match_differences() {
        let x = [0.3, -0.7, 1.1];
        for p in [
            PsiSpec::Gauss { amp: 0.7, center: vec![0.1, 0.2, 0.9], width: 0.6 },
            PsiSpec::BallVanishing { amp: 0.4, radius: 1.5 },
            PsiSpec::ShellVanishing { amp: 2.0, r_in: 1.0, r_out: 2.0, dir: vec![0.0, 0.0, 1.0], width: 0.5 },
            PsiSpec::ChartBump { amp: 3.0, r_in: 1.0, r_out: 2.0, frame: [[0.0, 0.6, 0.8], [1.0, 0.0, 0.0], [0.0, 0.8, -0.6]], t1: (1.3, 2.5), t2: (-0.8, 0.9) },
        ] {
            let (v, g, lap) = p.eval(&x);
            assert!(v != 0.0, "{p:?}");
            let (gn, ln) = fd_grad(&p, &x);
            for j in 0..3 {
                assert!((g[j] - gn[j]).abs() < 1e-6, "{p:?}");
            }
            assert!((lap - ln).abs() < 1e-3 * (1.0 + lap.abs()), "{p:?} {lap} {ln}");
        }
    }

    #[test]
    fn ball_psi_vanishes_on_sphere() {
        let p = PsiSpec::BallVanishing { amp: 1.0, radius: 2.0 };
        let x = [2.0 * 0.6, 2.0 * 0.8, 0.0];
        assert!(p.eval(&x).0.abs() < 1e-14);
    }

    #[test]
    fn vortex_is_divergence_free() {
        let w = WField::Vortex { amp: 1.0, center: vec![0.0, 0.0, 1.5], width: 0.4 };
        let x = [0.2, 0.1, 1.4];
        let e = 1e-5;
        let mut div = 0.0;
        for j in 0..3 {
            let mut p = x;
            let mut m = x;
            p[j] += e;
            m[j] -= e;
            div += (w.w(&p)[j] - w.w(&m)[j]) / (2.0 * e);
        }
        assert!(div.abs() < 1e-8);
    }

    #[test]
    fn lattice_reproduces_linear_fields() {
        let l = Lattice::from_fn([5, 4, 6], [-1.0, -1.0, 0.0], [0.5, 0.7, 0.3], 3, |x| vec![x[0] + 2.0 * x[1], x[2], 1.0]);
        let bytes = l.write();
        let l2 = Lattice::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(l, l2);
        let v = l2.sample(&[0.1, 0.3, 0.77]);
        assert!((v[0] - 0.7).abs() < 1e-12 && (v[1] - 0.77).abs() < 1e-12);
        let w = WField::Samples(Arc::new(l2));
        assert!((w.div(&[0.1, 0.3, 0.77]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_line_integral_is_potential_difference() {
        let p = PsiSpec::Gauss { amp: 1.0, center: vec![0.0, 0.0, 1.0], width: 0.5 };
        let w = WField::Gradient(p.clone());
        let a = [0.1, 0.0, 1.0];
        let b = [0.15, 0.02, 1.03];
        let li = w.line_integral(&a, &b);
        assert!((li - (p.eval(&b).0 - p.eval(&a).0)).abs() < 1e-12);
    }

    #[test]
    fn parsers() {
        assert!(parse_w("zero").unwrap().is_zero());
        assert!(matches!(parse_w("gradient:gauss:1,0,0,1,0.5").unwrap(), WField::Gradient(_)));
        assert!(matches!(parse_w("solenoidal:1,0,0,1,0.5+uniform:0,0,1").unwrap(), WField::Sum(_)));
        assert!(matches!(parse_q("const:0.5").unwrap(), QField::Const(_)));
        assert!(parse_q("nonsense").is_err());
    }
}

//! Dense-band and iterative solvers for complex systems.

use crate::numerics::C64;

/// Solve a tridiagonal system in place (Thomas algorithm, no pivoting).
/// `lower[i]` couples row i to i-1, `upper[i]` couples row i to i+1.
pub fn solve_tridiagonal(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &mut [C64]) -> Option<()> {
    let n = diag.len();
    if n == 0 {
        return Some(());
    }
    let mut c = vec![C64::new(0.0, 0.0); n];
    let mut d0 = diag[0];
    if d0.norm() == 0.0 {
        return None;
    }
    c[0] = upper[0] / d0;
    rhs[0] /= d0;
    for i in 1..n {
        d0 = diag[i] - lower[i] * c[i - 1];
        if d0.norm() == 0.0 || !d0.is_finite() {
            return None;
        }
        if i + 1 < n {
            c[i] = upper[i] / d0;
        }
        let prev = rhs[i - 1];
        rhs[i] = (rhs[i] - lower[i] * prev) / d0;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
    Some(())
}

/// Banded LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    a: Vec<C64>,
    l: Vec<C64>,
    piv: Vec<usize>,
    pub min_pivot: f64,
}

impl BandLu {
    /// Empty n x n band matrix with `kl` sub- and `ku` super-diagonals.
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandLu {
            n,
            kl,
            ku,
            ld,
            a: vec![C64::new(0.0, 0.0); n * ld],
            l: vec![C64::new(0.0, 0.0); n * kl.max(1)],
            piv: vec![0; n],
            min_pivot: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ld + (j + self.kl - i)
    }

    /// Add `v` to entry (i, j); |i - j| must respect the band.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    /// Factor in place; returns the smallest pivot magnitude relative to the largest entry.
    pub fn factor(&mut self) -> f64 {
        let n = self.n;
        let scale = self.a.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
        let mut minp = f64::INFINITY;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].norm();
            for i in k + 1..=last {
                let v = self.a[self.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[k] = p;
            let jmax = (k + self.ku + self.kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.a.swap(a, b);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            minp = minp.min(pivot.norm() / scale);
            if pivot.norm() == 0.0 {
                continue;
            }
            let inv = 1.0 / pivot;
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let m = self.a[ik] * inv;
                self.l[k * self.kl.max(1) + (i - k - 1)] = m;
                self.a[ik] = C64::new(0.0, 0.0);
                if m.norm() == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.idx(k, j);
                    let ij = self.idx(i, j);
                    let t = self.a[kj];
                    self.a[ij] -= m * t;
                }
            }
        }
        self.min_pivot = minp;
        minp
    }

    pub fn solve(&self, b: &mut [C64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            let bk = b[k];
            for i in k + 1..=last {
                b[i] -= self.l[k * self.kl.max(1) + (i - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + self.ku + self.kl).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=jmax {
                s -= self.a[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.a[self.idx(k, k)];
        }
    }
}

/// Banded Cholesky factor of a Hermitian positive definite matrix (lower band stored by rows).
pub struct BandCholesky {
    n: usize,
    bw: usize,
    a: Vec<C64>,
}

impl BandCholesky {
    pub fn new(n: usize, bw: usize) -> Self {
        BandCholesky { n, bw, a: vec![C64::new(0.0, 0.0); n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + self.bw + j - i
    }

    /// Add `v` to entry (i, j) with j <= i; the upper triangle is implied.
    pub fn add_lower(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(j <= i && i - j <= self.bw);
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    /// Factor in place; returns the smallest squared pivot relative to the largest
    /// diagonal entry, or None when the matrix is not positive definite.
    pub fn factor(&mut self) -> Option<f64> {
        let n = self.n;
        let bw = self.bw;
        let dmax = (0..n).map(|i| self.a[self.idx(i, i)].re).fold(0.0f64, f64::max).max(1e-300);
        let mut minp = f64::INFINITY;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let ri = self.idx(i, k0);
                let rj = self.idx(j, k0);
                let len = j - k0;
                let mut s = self.a[self.idx(i, j)];
                for t in 0..len {
                    s -= self.a[ri + t] * self.a[rj + t].conj();
                }
                if j < i {
                    let d = self.a[self.idx(j, j)].re;
                    let k = self.idx(i, j);
                    self.a[k] = s / d;
                } else {
                    if !(s.re > 0.0) {
                        return None;
                    }
                    minp = minp.min(s.re / dmax);
                    let k = self.idx(i, i);
                    self.a[k] = C64::new(s.re.sqrt(), 0.0);
                }
            }
        }
        Some(minp)
    }

    pub fn solve(&self, b: &mut [C64]) {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = b[i];
            for j in j0..i {
                s -= self.a[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.a[self.idx(i, i)].re;
        }
        for i in (0..n).rev() {
            b[i] /= self.a[self.idx(i, i)].re;
            let bi = b[i];
            for j in i.saturating_sub(bw)..i {
                b[j] -= self.a[self.idx(i, j)].conj() * bi;
            }
        }
    }
}

pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn nrm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Right-preconditioned restarted GMRES. `x` holds the initial guess on entry.
pub fn gmres<A, M>(apply: A, precond: M, b: &[C64], x: &mut [C64], restart: usize, tol: f64, max_iter: usize) -> GmresOutcome
where
    A: Fn(&[C64], &mut [C64]),
    M: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = nrm(b).max(1e-300);
    let zero = C64::new(0.0, 0.0);
    let mut total = 0;
    let mut r = vec![zero; n];
    let mut tmp = vec![zero; n];
    loop {
        apply(x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = nrm(&r);
        if beta / bnorm < tol || total >= max_iter {
            return GmresOutcome { iterations: total, residual: beta / bnorm, converged: beta / bnorm < tol };
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut z: Vec<Vec<C64>> = Vec::new();
        let mut hmat = vec![vec![zero; restart]; restart + 1];
        let mut cs = vec![zero; restart];
        let mut sn = vec![zero; restart];
        let mut g = vec![zero; restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..restart {
            let mut zk = vec![zero; n];
            precond(&v[k], &mut zk);
            let mut w = vec![zero; n];
            apply(&zk, &mut w);
            z.push(zk);
            for j in 0..=k {
                let hj = dot(&v[j], &w);
                hmat[j][k] = hj;
                for i in 0..n {
                    w[i] -= hj * v[j][i];
                }
            }
            let hn = nrm(&w);
            hmat[k + 1][k] = C64::new(hn, 0.0);
            for j in 0..k {
                let t = cs[j].conj() * hmat[j][k] + sn[j].conj() * hmat[j + 1][k];
                hmat[j + 1][k] = -sn[j] * hmat[j][k] + cs[j] * hmat[j + 1][k];
                hmat[j][k] = t;
            }
            let a = hmat[k][k];
            let bb = hmat[k + 1][k];
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[k] = C64::new(1.0, 0.0);
                sn[k] = zero;
            } else {
                cs[k] = a / den;
                sn[k] = bb / den;
            }
            hmat[k][k] = cs[k].conj() * a + sn[k].conj() * bb;
            hmat[k + 1][k] = zero;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            total += 1;
            k_used = k + 1;
            let res = g[k + 1].norm() / bnorm;
            if res < tol || total >= max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        let mut y = vec![zero; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hmat[i][j] * y[j];
            }
            y[i] = s / hmat[i][i];
        }
        for j in 0..k_used {
            for i in 0..n {
                x[i] += y[j] * z[j][i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let lo = vec![c(0.0), c(-1.0), c(-1.0)];
        let di = vec![c(2.0), c(2.0), c(2.0)];
        let up = vec![c(-1.0), c(-1.0), c(0.0)];
        let mut b = vec![c(1.0), c(0.0), c(1.0)];
        solve_tridiagonal(&lo, &di, &up, &mut b).unwrap();
        for z in &b {
            assert!((z - c(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn band_cholesky_solves_hermitian_system() {
        let mut m = BandCholesky::new(3, 1);
        m.add_lower(0, 0, c(4.0));
        m.add_lower(1, 0, C64::new(1.0, -1.0));
        m.add_lower(1, 1, c(4.0));
        m.add_lower(2, 1, c(2.0));
        m.add_lower(2, 2, c(5.0));
        assert!(m.factor().is_some());
        let mut b = vec![C64::new(3.0, 1.0), C64::new(5.0, 3.0), C64::new(10.0, 2.0)];
        m.solve(&mut b);
        let x = [c(1.0), C64::new(0.0, 1.0), c(2.0)];
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).norm() < 1e-13, "{u}");
        }
    }

    #[test]
    fn band_lu_needs_pivoting() {
        // [[0,1,0],[1,0,1],[0,1,1]] x = [1,2,2] -> x = [1,1,1]
        let mut m = BandLu::new(3, 1, 1);
        m.add(0, 1, c(1.0));
        m.add(1, 0, c(1.0));
        m.add(1, 2, c(1.0));
        m.add(2, 1, c(1.0));
        m.add(2, 2, c(1.0));
        m.factor();
        let mut b = vec![c(1.0), c(2.0), c(2.0)];
        m.solve(&mut b);
        for z in &b {
            assert!((z - c(1.0)).norm() < 1e-14, "{z}");
        }
    }

    #[test]
    fn gmres_solves_small_nonsymmetric_system() {
        let n = 30;
        let apply = |x: &[C64], y: &mut [C64]| {
            for i in 0..n {
                let mut s = x[i] * C64::new(3.0, 0.5);
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1] * 0.5;
                }
                y[i] = s;
            }
        };
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut x = vec![C64::new(0.0, 0.0); n];
        let out = gmres(apply, |r, z| z.copy_from_slice(r), &b, &mut x, 20, 1e-12, 200);
        assert!(out.converged);
        let mut y = vec![C64::new(0.0, 0.0); n];
        apply(&x, &mut y);
        let err: f64 = y.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}

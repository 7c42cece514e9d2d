//! Small numerical building blocks shared by the modules.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// C^inf transition: 0 for x <= 0, 1 for x >= 1.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Transition from 0 at `a` to 1 at `b`.
pub fn ramp(x: f64, a: f64, b: f64) -> f64 {
    smoothstep((x - a) / (b - a))
}

/// Radial cutoff equal to 1 on |x| <= 1/2 and 0 on |x| >= 1.
pub fn chi(x: f64) -> f64 {
    1.0 - ramp(x.abs(), 0.5, 1.0)
}

/// Derivative of `chi`.
pub fn chi_prime(x: f64) -> f64 {
    chi_jet(x).1
}

/// (S, S', S'') of `smoothstep`.
pub fn smoothstep_jet(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    let y = 1.0 - x;
    let ab = a * b;
    let sum = a + b;
    let g = 1.0 / (x * x) + 1.0 / (y * y);
    let k = 1.0 / (x * x) - 1.0 / (y * y);
    let dg = -2.0 / (x * x * x) + 2.0 / (y * y * y);
    let s1 = ab * g / (sum * sum);
    let s2 = ab / (sum * sum) * (k * g + dg - 2.0 * g * (a / (x * x) - b / (y * y)) / sum);
    (a / sum, s1, s2)
}

/// (chi, chi', chi'') at x.
pub fn chi_jet(x: f64) -> (f64, f64, f64) {
    let sg = if x < 0.0 { -1.0 } else { 1.0 };
    let (s, s1, s2) = smoothstep_jet(2.0 * x.abs() - 1.0);
    (1.0 - s, -2.0 * s1 * sg, -4.0 * s2)
}

/// Finite-difference weights for derivatives 0..=m at `z` from nodes `x`.
/// Returns `w[k][j]`, the weight of node j for the k-th derivative.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Independent random stream for job `job` under a global seed.
pub fn substream(seed: u64, job: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(job);
    rng
}

pub fn l2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_limits_and_symmetry() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(2.0), 1.0);
        for k in 1..10 {
            let x = k as f64 / 10.0;
            assert!((smoothstep(x) + smoothstep(1.0 - x) - 1.0).abs() < 1e-14);
        }
        assert_eq!(chi(0.3), 1.0);
        assert_eq!(chi(1.2), 0.0);
    }

    #[test]
    fn fornberg_centered_second_derivative() {
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
        assert!((w[1][2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.2, 0.4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn chi_jet_matches_differences() {
        let e = 1e-5;
        for x in [0.55, 0.6, 0.7, 0.8, 0.9, 0.97, -0.75] {
            let (c, c1, c2) = chi_jet(x);
            assert_eq!(c, chi(x));
            let d1 = (chi(x + e) - chi(x - e)) / (2.0 * e);
            let d2 = (chi_jet(x + e).1 - chi_jet(x - e).1) / (2.0 * e);
            assert!((c1 - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{x} {c1} {d1}");
            assert!((c2 - d2).abs() < 1e-5 * (1.0 + d2.abs()), "{x} {c2} {d2}");
        }
    }
}

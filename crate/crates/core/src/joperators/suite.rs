//! Checks behind `verify-joperators`: symbol identities, J round trips,
//! the g correction and the G_+- factorization slope.

use super::*;
use crate::discretization::{dual_norm, DualSpace};
use crate::numerics::{loglog_slope, substream};
use crate::operators::OperatorOptions;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub h: f64,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Pass when value <= bound.
    pub fn below(name: &str, h: f64, value: f64, bound: f64) -> CheckRow {
        CheckRow { name: name.into(), h, value, bound, pass: value <= bound }
    }

    pub fn above(name: &str, h: f64, value: f64, bound: f64) -> CheckRow {
        CheckRow { name: name.into(), h, value, bound, pass: value >= bound }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub k: f64,
    pub h: f64,
    pub delta: f64,
    pub cutoff: Option<CutoffParams>,
    pub seed: u64,
}

impl SuiteConfig {
    pub fn params(&self) -> CutoffParams {
        self.cutoff.unwrap_or_else(|| CutoffParams::defaults(self.k, self.delta))
    }
}

fn lattice(step: f64, extent: f64) -> Vec<[f64; 2]> {
    let m = (extent / step).round() as i64;
    let mut out = Vec::new();
    for a in -m..=m {
        for b in -m..=m {
            out.push([a as f64 * step, b as f64 * step]);
        }
    }
    out
}

/// Quadratic residual, smoothing error, exactness of F_l, jump, lower bounds.
pub fn symbol_checks(cfg: &SuiteConfig) -> Result<Vec<CheckRow>> {
    let k = cfg.k;
    let p = cfg.params();
    let rho = make_cutoff(&p)?;
    let fs = smooth_f(Branch::Imag, &p, cfg.delta)?;
    let fl = smooth_f(Branch::Real, &p, cfg.delta)?;
    let pts = lattice(0.01, 3.0);
    let (mut root, mut sm, mut exact, mut near) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut low_s, mut low_l) = (f64::INFINITY, f64::INFINITY);
    for xi in &pts {
        for b in [Branch::Imag, Branch::Real] {
            let f = eval_f(xi, k, b);
            let scale = 1.0 + xi[0].abs() + xi[1].abs();
            root = root.max(quadratic(f.conj(), xi, k).norm() / (scale * scale));
        }
        let r = rho.eval(xi).re;
        let s = fs.eval(xi);
        let l = fl.eval(xi);
        low_s = low_s.min(s.re.min(s.norm()));
        low_l = low_l.min(l.re.min(l.norm()));
        if r > 0.0 {
            sm = sm.max((s - eval_f(xi, k, Branch::Imag)).norm());
            near = near.max(quadratic(s.conj(), xi, k).norm() / cfg.delta);
        }
        if r < 1.0 {
            exact = exact.max((l - eval_f(xi, k, Branch::Real)).norm());
        }
    }
    let lb = 0.5 / (1.0 + k * k);
    let mut rows = vec![
        CheckRow::below("quadratic_root_residual", cfg.h, root, 1e-12),
        CheckRow::below("fs_minus_f_on_supp_rho", cfg.h, sm, cfg.delta),
        CheckRow::below("fl_minus_f_off_rho", cfg.h, exact, 0.0),
        CheckRow::below("fs_near_root", cfg.h, near, 4.0),
        CheckRow::above("fs_lower_bound", cfg.h, low_s, lb),
        CheckRow::above("fl_lower_bound", cfg.h, low_l, lb),
    ];
    if k > 0.0 {
        let kk = k * k / (1.0 + k * k);
        let mut jump = 0.0f64;
        for a in 1..=200 {
            let xi2 = kk + 2.0 * a as f64 / 200.0;
            jump = jump.max((branch_jump(xi2, k) - branch_jump_formula(xi2, k)).abs());
        }
        rows.push(CheckRow::below("branch_jump", cfg.h, jump, 1e-10));
    }
    let mut growth = 0.0f64;
    for xi in pts.iter().filter(|x| x[0].hypot(x[1]) >= 2.0) {
        let s = fs.eval(xi);
        let t = 1.0 + xi[0].hypot(xi[1]);
        growth = growth.max((s.re / t).ln().abs().max((s.norm() / t).ln().abs()));
    }
    rows.push(CheckRow::below("fs_growth_log_ratio", cfg.h, growth, 4f64.ln()));
    Ok(rows)
}

/// Round trips of J, J*, their inverses and the closed-form example.
pub fn roundtrip_checks(cfg: &SuiteConfig) -> Result<Vec<CheckRow>> {
    let p = cfg.params();
    let fs = smooth_f(Branch::Imag, &p, cfg.delta)?;
    let nodes = RadialNodes::new(1.0, 3.0, 2048);
    let h = cfg.h;
    let errs: Vec<Result<[f64; 4]>> = (0..64u64)
        .into_par_iter()
        .map(|job| {
            let mut rng = substream(cfg.seed, job);
            let prof = Profile::random(&mut rng, 1.05, 2.95);
            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let f = fs.eval(&xi);
            let u = |r: f64| prof.value(r);
            let uv: Vec<C64> = nodes.r.iter().map(|r| prof.value(*r)).collect();
            let scale = uv.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            let rel = |v: &[C64]| v.iter().zip(&uv).fold(0.0f64, |m, (a, b)| m.max((a - b).norm())) / scale;
            let si = apply_j_1d(JKind::JStarInv, f, h, &nodes, &Source::Func(&u))?;
            let a = rel(&apply_j_1d(JKind::JStar, f, h, &nodes, &Source::Samples(&si))?);
            let js = |r: f64| f.conj() / r * prof.value(r) - h * prof.deriv(r);
            let b = rel(&apply_j_1d(JKind::JStarInv, f, h, &nodes, &Source::Func(&js))?);
            let ji = apply_j_1d(JKind::JInv, f, h, &nodes, &Source::Func(&u))?;
            let c = rel(&apply_j_1d(JKind::J, f, h, &nodes, &Source::Samples(&ji))?);
            let jf = |r: f64| f / r * prof.value(r) + h * prof.deriv(r);
            let d = rel(&apply_j_1d(JKind::JInv, f, h, &nodes, &Source::Func(&jf))?);
            Ok([a, b, c, d])
        })
        .collect();
    let mut worst = [0.0f64; 4];
    for e in errs {
        let e = e?;
        for i in 0..4 {
            worst[i] = worst[i].max(e[i]);
        }
    }
    let a = 1.5;
    let pw = |r: f64| C64::new(r.powf(a), 0.0);
    let out = apply_j_1d(JKind::JInv, C64::new(1.0, 0.0), h, &nodes, &Source::Func(&pw))?;
    let closed = nodes
        .r
        .iter()
        .zip(&out)
        .map(|(r, v)| {
            let exact = (r.powf(a + 1.0) - r.powf(-1.0 / h)) / (1.0 + h * (a + 1.0));
            (v - exact).norm() / exact.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    Ok(vec![
        CheckRow::below("jstar_jstarinv", h, worst[0], 1e-8),
        CheckRow::below("jstarinv_jstar", h, worst[1], 1e-8),
        CheckRow::below("j_jinv", h, worst[2], 1e-8),
        CheckRow::below("jinv_j", h, worst[3], 1e-8),
        CheckRow::below("jinv_closed_form", h, closed, 1e-10),
    ])
}

/// Seeded compactly supported field on r in [1, 3], support in [1, 2.5].
pub fn g_test_field(g: Arc<Grid>, seed: u64, job: u64) -> Field {
    let mut rng = substream(seed, job);
    let prof = Profile::random(&mut rng, 1.0, 2.5);
    let modes: Vec<(C64, [f64; 2])> = (0..4)
        .map(|_| {
            let a = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let k = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
            (a, k)
        })
        .collect();
    Field::from_fn(g, move |r, th| {
        let ang: C64 = modes.iter().map(|(a, k)| a * C64::from_polar(1.0, std::f64::consts::PI * (k[0] * th[0] + k[1] * th[1]))).sum();
        prof.value(r) * ang
    })
}

pub fn g_grid(h: f64) -> Arc<Grid> {
    Arc::new(Grid::shell(3.0, 1536, 2, 8, 2.0, h))
}

pub struct GFieldStats {
    pub norm_excess: f64,
    pub kernel: f64,
    pub ratio: f64,
}

/// ||g|| - ||u||, the J g residual and ||Ju||_{H^-1_r} / ||u - g|| for one field.
/// The first two are skipped (NaN) unless `full`.
pub fn g_field_stats(u: &Field, fs: &SymbolFn, full: bool) -> Result<GFieldStats> {
    let gc = g_correction(u, fs)?;
    let last = u.grid.nr - 1;
    let (mut norm_excess, mut kernel) = (f64::NAN, f64::NAN);
    if full {
        let un = gauss_norm_sq(u).sqrt();
        let gn = gc.norm_sq().sqrt();
        let jg = apply_j(JKind::J, fs, &gc.g)?;
        let jg_n = gauss_norm_sq(&jg).sqrt();
        let g_h1 = gn.hypot(gauss_norm_sq(&crate::discretization::h_dr(&gc.g)).sqrt());
        norm_excess = gn - un;
        kernel = jg_n / g_h1.max(1e-300);
    }
    let ju = apply_j(JKind::J, fs, u)?;
    let dual = dual_norm(&ju, DualSpace::Hm1r, 0, last)?;
    let diff = u.axpy(C64::new(-1.0, 0.0), &gc.g);
    let dn = (gauss_norm_sq(&diff) + gc.tail_sq()).sqrt();
    Ok(GFieldStats { norm_excess, kernel, ratio: dual / dn })
}

/// Bessel bound, kernel residual and kernel input at one h; band across hs.
pub fn g_checks(cfg: &SuiteConfig, band_hs: &[f64], fields: usize) -> Result<Vec<CheckRow>> {
    let p = cfg.params();
    let fs = smooth_f(Branch::Imag, &p, cfg.delta)?;
    let mut rows = Vec::new();
    let mut bands = Vec::new();
    let mut hs: Vec<f64> = band_hs.to_vec();
    if !hs.contains(&cfg.h) {
        hs.push(cfg.h);
    }
    for &h in &hs {
        let grid = g_grid(h);
        let stats: Vec<Result<GFieldStats>> = (0..fields as u64)
            .into_par_iter()
            .map(|j| g_field_stats(&g_test_field(grid.clone(), cfg.seed, j), &fs, h == cfg.h))
            .collect();
        let mut excess = f64::NEG_INFINITY;
        let mut kernel = 0.0f64;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for s in stats {
            let s = s?;
            excess = excess.max(s.norm_excess);
            kernel = kernel.max(s.kernel);
            lo = lo.min(s.ratio);
            hi = hi.max(s.ratio);
        }
        if h == cfg.h {
            rows.push(CheckRow::below("g_norm_excess", h, excess, 1e-12));
            rows.push(CheckRow::below("g_kernel_residual", h, kernel, 1e-8));
        }
        if band_hs.contains(&h) {
            rows.push(CheckRow { name: "g_band_c2_over_c1".into(), h, value: hi / lo, bound: f64::INFINITY, pass: lo > 0.0 });
            bands.push(hi / lo);
        }
    }
    if !bands.is_empty() {
        let lo = bands.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = bands.iter().cloned().fold(0.0, f64::max);
        rows.push(CheckRow::below("g_band_stability", 0.0, hi / lo, 2.0));
    }
    let h = cfg.h;
    let xi = [0.3, -0.2];
    let f = fs.eval(&xi);
    let u = move |r: f64| (-f / h * r.ln()).exp();
    let c = g_coefficient_fn(f, h, &u)?;
    rows.push(CheckRow::below("g_kernel_input", h, (c - 1.0).norm(), 1e-10));
    Ok(rows)
}

/// Radial profile for the factorization test.
fn factor_radial(r: f64) -> f64 {
    bump((r - 2.0) / 0.8).0
}

/// Residual of the factored operator against the flattened one for one h.
pub fn factorization_residual(k: f64, h: f64, delta: f64) -> Result<f64> {
    let opts = OperatorOptions::new(OperatorKind::LTildeSigma).eps(f64::INFINITY).sigma(SigmaMode::Model { k });
    let xi0 = [1.0f64, 0.6];
    let side = 2.0 * std::f64::consts::PI;
    let kmax = (xi0[0].max(xi0[1]) / h).round() as usize;
    let nth = 2 * kmax + 8;
    let grid = Arc::new(Grid::new(1.0, 3.0, 512, vec![0.0; 2], vec![side; 2], vec![nth; 2], h)?);
    let p = CutoffParams::defaults(k, delta);
    let probe = Grid::shell(3.0, 5, 2, 4, 1.0, h);
    let fsym = factor_symbols(&opts, h, &p, delta, &probe)?;
    let v = plane_wave_field(grid.clone(), &xi0, factor_radial);
    let a = apply_factored(&fsym, &opts, &v);
    let b = apply_sigma_spectral(&opts, &v);
    let diff = a.axpy(C64::new(-1.0, 0.0), &b);
    let vr = crate::discretization::h_dr(&v);
    let mut h1 = gauss_norm_sq(&v) + gauss_norm_sq(&vr);
    for j in 0..2 {
        h1 += gauss_norm_sq(&crate::discretization::h_dtheta(&v, j));
    }
    Ok((gauss_norm_sq(&diff) / h1).sqrt())
}

pub fn factorization_checks(k: f64, hs: &[f64], delta: f64) -> Result<Vec<CheckRow>> {
    let mut res = Vec::new();
    let mut rows = Vec::new();
    for &h in hs {
        let r = factorization_residual(k, h, delta)?;
        rows.push(CheckRow { name: "factorization_residual".into(), h, value: r, bound: f64::INFINITY, pass: r.is_finite() });
        res.push(r);
    }
    rows.push(CheckRow::above("factorization_slope", 0.0, loglog_slope(hs, &res), 0.8));
    Ok(rows)
}

/// Vieta identity of the G_+- roots on a lattice.
pub fn vieta_check(k: f64, h: f64, delta: f64) -> Result<CheckRow> {
    let opts = OperatorOptions::new(OperatorKind::LTildeSigma).eps(f64::INFINITY).sigma(SigmaMode::Model { k });
    let p = CutoffParams::defaults(k, delta);
    let probe = Grid::shell(3.0, 5, 2, 4, 1.0, h);
    let fsym = factor_symbols(&opts, h, &p, delta, &probe)?;
    let th = [std::f64::consts::FRAC_PI_2; 2];
    let mut worst = 0.0f64;
    for r in [1.0, 1.5, 2.5] {
        for xi in lattice(0.05, 2.0) {
            let (alpha, _, gamma2, a) = sigma_coefficients(&opts, r, &th, h);
            let l: f64 = -a.iter().zip(&xi).map(|(a, x)| a * x * x).sum::<f64>();
            let z = fsym.zeta.eval(&xi).re;
            let gs = fsym.g_s.eval(&xi);
            let lhs = (fsym.g_plus.eval_at(r, &th, &xi) - gs) * (fsym.g_minus.eval_at(r, &th, &xi) - gs);
            let rhs = z * z * (alpha * alpha + l) / (1.0 + gamma2);
            worst = worst.max((lhs - rhs).norm() / (1.0 + xi[0] * xi[0] + xi[1] * xi[1]));
        }
    }
    Ok(CheckRow::below("vieta_identity", h, worst, 1e-10))
}

/// Everything `verify-joperators` reports.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRow>> {
    let mut rows = symbol_checks(cfg)?;
    rows.extend(roundtrip_checks(cfg)?);
    rows.extend(g_checks(cfg, &[], 100)?);
    rows.push(vieta_check(cfg.k, cfg.h, cfg.delta)?);
    Ok(rows)
}

//! Empirical harness for the Carleman estimates: seeded compactly supported
//! test functions, ratio lhs/rhs per (h, eps, test), and the boundedness
//! verdict over an h sweep.

use crate::discretization::{apply_multiplier, dual_norm, norm, DualSpace, Field, Grid, Region, Space, Support};
use crate::error::{LabError, Result};
use crate::geometry::{FSpec, StarDomain};
use crate::joperators::SymbolFn;
use crate::numerics::{chi, loglog_slope, substream, C64};
use crate::operators::{OperatorKind, OperatorOptions, OperatorSpec, SigmaMode};
use crate::potentials::{QField, WField};
use rand::Rng;
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimate {
    /// (h/sqrt eps) ||w||_H1 vs ||L_{phi,eps} w||_L2
    Dksu,
    /// (h/sqrt eps) ||w||_H1 vs ||flattened L_{phi,eps} w||_L2
    Flat,
    /// (h/sqrt eps) ||w|| vs ||model-coefficient operator w||_H^-1
    Simple,
    /// (h/sqrt eps) ||w|| vs ||L_{phi,W,q,eps} w||_H^-1
    Spec,
    /// h ||w|| vs ||L_{phi,W,q} w||_H^-1
    Main,
}

impl std::str::FromStr for Estimate {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Estimate> {
        match s {
            "dksu" => Ok(Estimate::Dksu),
            "flat" => Ok(Estimate::Flat),
            "simple" => Ok(Estimate::Simple),
            "spec" => Ok(Estimate::Spec),
            "main" => Ok(Estimate::Main),
            _ => Err(LabError::Config(format!("unknown estimate '{s}'"))),
        }
    }
}

impl Estimate {
    pub fn id(&self) -> &'static str {
        match self {
            Estimate::Dksu => "dksu",
            Estimate::Flat => "flat",
            Estimate::Simple => "simple",
            Estimate::Spec => "spec",
            Estimate::Main => "main",
        }
    }

    pub fn uses_eps(&self) -> bool {
        *self != Estimate::Main
    }

    fn operator(&self, base: &OperatorOptions, eps: f64, f: &FSpec) -> OperatorOptions {
        let o = base.clone().eps(eps);
        match self {
            Estimate::Dksu => OperatorOptions { kind: OperatorKind::LPhiEps, w: WField::Zero, q: QField::Const(0.0), ..o },
            Estimate::Spec => OperatorOptions { kind: OperatorKind::LPhiEps, ..o },
            Estimate::Main => OperatorOptions { kind: OperatorKind::LPhi, ..o.eps(f64::INFINITY) },
            Estimate::Flat => OperatorOptions { kind: OperatorKind::LTildePhiEps, ..o }.graph(f.clone()),
            Estimate::Simple => {
                let k = match f {
                    FSpec::ExpLinear(k) => *k,
                    _ => 0.0,
                };
                OperatorOptions { kind: OperatorKind::LTildeSigma, ..o }.graph(f.clone()).sigma(SigmaMode::Model { k })
            }
        }
    }
}

/// Flattened sweep setting: grid extents, test-function region and weight.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub domain: StarDomain,
    pub weight_sign: f64,
    pub w: WField,
    pub q: QField,
    pub nr: usize,
    pub nth: usize,
    /// chart box side multiplier for the periodic padding
    pub pad: f64,
}

impl SweepSetup {
    pub fn new(domain: StarDomain) -> SweepSetup {
        SweepSetup { domain, weight_sign: 1.0, w: WField::Zero, q: QField::Const(0.0), nr: 48, nth: 48, pad: 1.25 }
    }

    /// Radial extent of the flattened domain; inverted when the weight sign is -1.
    pub fn r_range(&self) -> (f64, f64) {
        let d = &self.domain;
        let mut top = f64::INFINITY;
        let per = 9usize;
        for k in 0..per.pow(d.dim_n as u32) {
            let mut rem = k;
            let th: Vec<f64> = d
                .theta_box
                .iter()
                .map(|(a, b)| {
                    let i = rem % per;
                    rem /= per;
                    a + (b - a) * i as f64 / (per - 1) as f64
                })
                .collect();
            top = top.min(d.r_max / d.f.f(&th));
        }
        if self.weight_sign < 0.0 {
            (1.0 / top, 1.0)
        } else {
            (1.0, top)
        }
    }

    pub fn grid(&self, h: f64) -> Result<Grid> {
        let (lo, hi) = self.r_range();
        let d = &self.domain;
        let side: Vec<f64> = d.theta_box.iter().map(|(a, b)| (b - a) * self.pad).collect();
        let theta_lo: Vec<f64> = d.theta_box.iter().zip(&side).map(|((a, b), s)| 0.5 * (a + b) - 0.5 * s).collect();
        Grid::new(lo, hi, self.nr, theta_lo, side, vec![self.nth; d.dim_n], h)
    }
}

/// Seeded family of modulated bumps compactly supported inside the domain.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily {
    pub count: usize,
    pub seed: u64,
    pub max_freq: f64,
    pub bumps: usize,
    /// fraction of each extent kept free at the boundary
    pub margin: f64,
}

impl TestFunctionFamily {
    pub fn new(count: usize, seed: u64) -> TestFunctionFamily {
        TestFunctionFamily { count, seed, max_freq: 3.0, bumps: 2, margin: 0.1 }
    }

    /// Test function `id` on the grid, normalized to unit L2 norm.
    pub fn generate(&self, setup: &SweepSetup, grid: Arc<Grid>, id: usize) -> Result<Field> {
        let mut rng = substream(self.seed, id as u64);
        let (lo, hi) = setup.r_range();
        let tb = &setup.domain.theta_box;
        let n = tb.len();
        let h = grid.h;
        let mut terms = Vec::new();
        for _ in 0..self.bumps {
            let m = self.margin;
            let wr = rng.gen_range(0.15..0.4) * (hi - lo);
            let span = (hi - lo) * (1.0 - 2.0 * m);
            let wr = wr.min(0.5 * span * 0.999);
            let cr = rng.gen_range(lo + (hi - lo) * m + wr..=hi - (hi - lo) * m - wr);
            let mut cth = Vec::with_capacity(n);
            let mut wth = Vec::with_capacity(n);
            for (a, b) in tb {
                let len = b - a;
                let w = (rng.gen_range(0.2..0.45) * len).min(0.5 * len * (1.0 - 2.0 * m) * 0.999);
                cth.push(rng.gen_range(a + len * m + w..=b - len * m - w));
                wth.push(w);
            }
            let mag = rng.gen_range(0.0..self.max_freq);
            let mut dir: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v *= mag / dn);
            let amp = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            terms.push((amp, cr, wr, cth, wth, dir));
        }
        let u = Field::from_fn(grid.clone(), move |r, th| {
            let mut acc = C64::new(0.0, 0.0);
            for (amp, cr, wr, cth, wth, dir) in &terms {
                let mut env = chi((r - cr) / wr);
                let mut ph = dir[0] * r;
                for j in 0..th.len() {
                    env *= chi((th[j] - cth[j]) / wth[j]);
                    ph += dir[j + 1] * th[j];
                }
                if env != 0.0 {
                    acc += amp * env * C64::from_polar(1.0, ph / h);
                }
            }
            acc
        });
        let nrm = norm(&u, Space::L2, &Region::full(&grid));
        if nrm == 0.0 {
            return Err(LabError::ZeroRHS);
        }
        u.scale(C64::new(1.0 / nrm, 0.0)).tagged(Support::Compact)
    }
}

/// (lhs, rhs, ratio) for one estimate; ZeroRHS when L w vanishes.
pub fn carleman_ratio(est: Estimate, spec: &OperatorSpec, w: &Field, dual: (usize, usize)) -> Result<(f64, f64, f64)> {
    let g = &w.grid;
    let full = Region::full(g);
    let lw = spec.apply(w)?;
    let eps = spec.opts.eps;
    let h = g.h;
    let (lhs, rhs) = match est {
        Estimate::Dksu | Estimate::Flat => (h / eps.sqrt() * norm(w, Space::H1, &full), norm(&lw, Space::L2, &full)),
        Estimate::Simple | Estimate::Spec => (h / eps.sqrt() * norm(w, Space::L2, &full), dual_norm(&lw, DualSpace::Hm1, dual.0, dual.1)?),
        Estimate::Main => (h * norm(w, Space::L2, &full), dual_norm(&lw, DualSpace::Hm1, dual.0, dual.1)?),
    };
    if !(rhs > 1e-300) {
        return Err(LabError::ZeroRHS);
    }
    Ok((lhs, rhs, lhs / rhs))
}

/// w_s and w_l with Fourier multipliers rho and 1 - rho.
pub fn split_frequencies(w: &Field, rho: &SymbolFn) -> (Field, Field) {
    let ws = apply_multiplier(w, |_, xi| rho.eval(xi));
    let wl = apply_multiplier(w, |_, xi| 1.0 - rho.eval(xi));
    (ws, wl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub estimate_id: String,
    pub h: f64,
    pub eps: f64,
    pub test_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// L w vanished; row excluded from the aggregates
    pub zero_rhs: bool,
}

#[derive(Clone, Debug)]
pub struct SweepAggregate {
    pub eps: f64,
    pub hs: Vec<f64>,
    pub max_ratio: Vec<f64>,
    pub slope: f64,
    pub growth: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    pub band: f64,
    pub min_slope: f64,
}

impl SweepReport {
    pub fn pass(&self) -> bool {
        !self.aggregates.is_empty() && self.aggregates.iter().all(|a| a.pass)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "estimate_id,h,eps,test_id,lhs,rhs,ratio")?;
        for r in &self.rows {
            let ratio = if r.zero_rhs { "nan".to_string() } else { format!("{:e}", r.ratio) };
            writeln!(out, "{},{},{},{},{:e},{:e},{}", r.estimate_id, r.h, fmt_eps(r.eps), r.test_id, r.lhs, r.rhs, ratio)?;
        }
        for a in &self.aggregates {
            let maxes: Vec<String> = a.hs.iter().zip(&a.max_ratio).map(|(h, m)| format!("{h}:{m:e}")).collect();
            writeln!(
                out,
                "# eps={} max_ratio={} growth={:e} slope={:.6} verdict={}",
                fmt_eps(a.eps),
                maxes.join(";"),
                a.growth,
                a.slope,
                if a.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn fmt_eps(e: f64) -> String {
    if e.is_finite() {
        format!("{e}")
    } else {
        "inf".into()
    }
}

/// Ratios over h_list x eps_list x family with the boundedness verdict.
pub fn sweep(est: Estimate, setup: &SweepSetup, family: &TestFunctionFamily, h_list: &[f64], eps_list: &[f64]) -> Result<SweepReport> {
    if h_list.len() < 2 || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Config("h list must be strictly decreasing with at least two entries".into()));
    }
    let eps_list: Vec<f64> = if est.uses_eps() { eps_list.to_vec() } else { vec![f64::INFINITY] };
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(LabError::Config("eps list must contain positive values".into()));
    }
    let base = OperatorOptions::new(OperatorKind::LPhi).weight(setup.weight_sign).potentials(setup.w.clone(), setup.q.clone());
    let mut rows = Vec::new();
    for &eps in &eps_list {
        for &h in h_list {
            let grid = Arc::new(setup.grid(h)?);
            let opts = est.operator(&base, eps, &setup.domain.f);
            let spec = OperatorSpec::new(opts, grid.clone())?;
            let dual = (0, grid.nr - 1);
            let res: Vec<Result<SweepRow>> = (0..family.count)
                .into_par_iter()
                .map(|t| {
                    let w = family.generate(setup, grid.clone(), t)?;
                    let row = match carleman_ratio(est, &spec, &w, dual) {
                        Ok((lhs, rhs, ratio)) => SweepRow { estimate_id: est.id().into(), h, eps, test_id: t, lhs, rhs, ratio, zero_rhs: false },
                        Err(LabError::ZeroRHS) => SweepRow { estimate_id: est.id().into(), h, eps, test_id: t, lhs: 0.0, rhs: 0.0, ratio: f64::NAN, zero_rhs: true },
                        Err(e) => return Err(e),
                    };
                    Ok(row)
                })
                .collect();
            for r in res {
                rows.push(r?);
            }
        }
    }
    let band = 3.0;
    let min_slope = -0.15;
    let aggregates = eps_list
        .iter()
        .map(|&eps| {
            let max_ratio: Vec<f64> = h_list
                .iter()
                .map(|&h| {
                    rows.iter()
                        .filter(|r| r.eps == eps && r.h == h && !r.zero_rhs)
                        .map(|r| r.ratio)
                        .fold(0.0, f64::max)
                })
                .collect();
            let slope = loglog_slope(h_list, &max_ratio);
            let growth = max_ratio[max_ratio.len() - 1] / max_ratio[0];
            let pass = growth <= band && slope >= min_slope;
            SweepAggregate { eps, hs: h_list.to_vec(), max_ratio, slope, growth, pass }
        })
        .collect();
    Ok(SweepReport { rows, aggregates, band, min_slope })
}

/// Ratio of (h/sqrt eps)||w_s|| to ||L w_s||_H^-1 + h||w|| for the
/// small-frequency part of w.
pub fn small_frequency_ratio(spec: &OperatorSpec, w: &Field, rho: &SymbolFn) -> Result<f64> {
    let g = &w.grid;
    let full = Region::full(g);
    let (ws, _) = split_frequencies(w, rho);
    let lws = spec.apply(&ws)?;
    let rhs = dual_norm(&lws, DualSpace::Hm1, 0, g.nr - 1)? + g.h * norm(w, Space::L2, &full);
    Ok(g.h / spec.opts.eps.sqrt() * norm(&ws, Space::L2, &full) / rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_shell;
    use crate::joperators::{make_cutoff, CutoffParams};

    #[test]
    fn family_is_compact_and_normalized() {
        let setup = SweepSetup { nr: 24, nth: 24, ..SweepSetup::new(default_shell()) };
        let grid = Arc::new(setup.grid(0.2).unwrap());
        let fam = TestFunctionFamily::new(4, 3);
        for t in 0..4 {
            let w = fam.generate(&setup, grid.clone(), t).unwrap();
            assert!((norm(&w, Space::L2, &Region::full(&grid)) - 1.0).abs() < 1e-12);
            let s = grid.slab();
            for m in 0..s {
                assert_eq!(w.data[m], C64::new(0.0, 0.0));
                assert_eq!(w.data[(grid.nr - 1) * s + m], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn split_reassembles() {
        let setup = SweepSetup { nr: 16, nth: 16, ..SweepSetup::new(default_shell()) };
        let grid = Arc::new(setup.grid(0.1).unwrap());
        let w = TestFunctionFamily::new(1, 5).generate(&setup, grid, 0).unwrap();
        let rho = make_cutoff(&CutoffParams::defaults(0.0, 0.05)).unwrap();
        let (a, b) = split_frequencies(&w, &rho);
        let back = a.axpy(C64::new(1.0, 0.0), &b);
        let err = back.data.iter().zip(&w.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn zero_field_is_flagged() {
        let setup = SweepSetup { nr: 16, nth: 16, ..SweepSetup::new(default_shell()) };
        let grid = Arc::new(setup.grid(0.2).unwrap());
        let spec = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhi), grid.clone()).unwrap();
        let z = Field::zeros(grid.clone());
        assert_eq!(carleman_ratio(Estimate::Main, &spec, &z, (0, grid.nr - 1)), Err(LabError::ZeroRHS));
    }

    #[test]
    fn single_bump_ratio_is_finite() {
        let setup = SweepSetup { nr: 24, nth: 24, ..SweepSetup::new(default_shell()) };
        let grid = Arc::new(setup.grid(0.2).unwrap());
        let w = TestFunctionFamily { bumps: 1, ..TestFunctionFamily::new(1, 9) }.generate(&setup, grid.clone(), 0).unwrap();
        let spec = OperatorSpec::new(OperatorOptions::new(OperatorKind::LPhiEps).eps(0.25), grid.clone()).unwrap();
        let (_, _, ratio) = carleman_ratio(Estimate::Dksu, &spec, &w, (0, grid.nr - 1)).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
}

//! Randomized checks of the module invariants.

use crate::cli::header;
use crate::config::Config;
use crate::discretization::{norm, theta_fourier, theta_fourier_inverse, Field, Grid, Region, Space};
use crate::geometry::{boundary_samples, default_box, default_shell, flatten_map, make_star_domain, Direction, FSpec};
use crate::joperators::{eval_f, quadratic, Branch};
use crate::numerics::C64;
use crate::operators::{OperatorKind, OperatorOptions, OperatorSpec};
use crate::potentials::{QField, WField};
use crate::uniqueness::{cauchy_extension, Curve, SliceFrame};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

fn grid() -> Arc<Grid> {
    Arc::new(Grid::shell(2.0, 13, 2, 16, 1.0, 0.1))
}

/// Smooth field built from a few random modes, vanishing at both radial ends.
fn field(g: &Arc<Grid>, c: &[(f64, f64, f64, f64)]) -> Field {
    Field::from_fn(g.clone(), |r, th| {
        let env = ((r - 1.0) * (2.0 - r)).max(0.0);
        c.iter()
            .map(|&(a, b, k1, k2)| C64::new(a, b) * C64::from_polar(env, k1 * (th[0] - FRAC_PI_2) + k2 * (th[1] - FRAC_PI_2)))
            .sum()
    })
}

fn modes() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -3.0..3.0f64, -3.0..3.0f64), 1..4)
}

fn v3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flatten_round_trip(r in 0.5..3.0f64, a in -0.4..0.4f64, b in -0.4..0.4f64) {
        let dom = default_shell();
        let th = [FRAC_PI_2 + a, FRAC_PI_2 + b];
        let (rf, tf) = flatten_map(r, &th, &dom, Direction::Forward).unwrap();
        let (rb, tb) = flatten_map(rf, &tf, &dom, Direction::Inverse).unwrap();
        prop_assert!((rb - r).abs() < 1e-12);
        prop_assert_eq!(tb, th.to_vec());
    }

    #[test]
    fn accepted_domains_carry_a_certificate(c in 0.6..1.5f64, k in -0.3..0.3f64, half in 0.1..0.6f64) {
        let f = if k.abs() < 0.1 { FSpec::Const(c) } else { FSpec::ExpLinear(k) };
        if let Ok(dom) = make_star_domain(f, default_box(2, half), 4.0, 2) {
            for s in boundary_samples(&dom, 9) {
                let hx: f64 = dom.hyperplane.iter().zip(&s.x).map(|(h, x)| h * x).sum();
                prop_assert!(hx > 0.0);
            }
        }
    }

    #[test]
    fn fourier_round_trip(c in modes()) {
        let u = field(&grid(), &c);
        let back = theta_fourier_inverse(&theta_fourier(&u));
        let err = u.data.iter().zip(&back.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn h1_dominates_l2(c in modes()) {
        let g = grid();
        let u = field(&g, &c);
        let reg = Region::full(&g);
        prop_assert!(norm(&u, Space::H1, &reg) >= norm(&u, Space::L2, &reg));
    }

    #[test]
    fn operator_is_linear(c1 in modes(), c2 in modes(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let g = grid();
        let w = WField::Vortex { amp: 0.5, center: vec![0.0, 0.0, 1.5], width: 0.4 };
        let q = QField::Bump { amp: 1.0, center: vec![0.0, 0.1, 1.4], width: 0.3 };
        let op = OperatorSpec::new(OperatorOptions::new(OperatorKind::LWq).potentials(w, q), g.clone()).unwrap();
        let (u, v) = (field(&g, &c1), field(&g, &c2));
        let (a, b) = (C64::new(a, 0.3), C64::new(-0.2, b));
        let lhs = op.apply(&u.scale(a).axpy(b, &v)).unwrap();
        let rhs = op.apply(&u).unwrap().scale(a).axpy(b, &op.apply(&v).unwrap());
        let err = lhs.data.iter().zip(&rhs.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12 * (1.0 + lhs.data.iter().map(|x| x.norm()).fold(0.0, f64::max)));
    }

    #[test]
    fn f_is_a_root(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, k in 0.0..2.0f64) {
        for b in [Branch::Imag, Branch::Real] {
            let xi = [x1, x2];
            let res = quadratic(eval_f(&xi, k, b).conj(), &xi, k).norm();
            prop_assert!(res < 1e-12 * (1.0 + x1 * x1 + x2 * x2));
        }
    }

    #[test]
    fn winding_counts_enclosed_roots(roots in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..4)) {
        let roots: Vec<C64> = roots.into_iter().map(|(a, b)| C64::new(a, b)).collect();
        prop_assume!(roots.iter().all(|z| (z.norm() - 1.0).abs() > 0.1));
        let curve = Curve::circle(C64::new(0.0, 0.0), 1.0, 512);
        let f: Vec<C64> = curve.z.iter().map(|z| roots.iter().map(|r| z - r).product()).collect();
        let ext = cauchy_extension(&curve, &f, 2).unwrap();
        prop_assert_eq!(ext.winding, roots.iter().filter(|z| z.norm() < 1.0).count() as i64);
    }

    #[test]
    fn slice_frames_are_orthonormal(omega in v3(), eta in v3(), v0 in v3(), s in -2.0..2.0f64, t in -2.0..2.0f64) {
        if let Ok(fr) = SliceFrame::new(omega, eta, v0) {
            let d = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            prop_assert!(d(fr.e_s, fr.e_t).abs() < 1e-12);
            prop_assert!((d(fr.e_s, fr.e_s) - 1.0).abs() < 1e-12 && (d(fr.e_t, fr.e_t) - 1.0).abs() < 1e-12);
            let p = fr.point(s, t);
            let rel = [p[0] - v0[0], p[1] - v0[1], p[2] - v0[2]];
            prop_assert!((d(rel, fr.e_s) - s).abs() < 1e-12 && (d(rel, fr.e_t) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn config_round_trip(entries in prop::collection::btree_map("[a-z]{1,6}", prop::collection::btree_map("[a-z_]{1,8}", "[a-z0-9.,:;-]{0,12}", 0..4), 0..4)) {
        let mut text = String::new();
        for (s, kv) in &entries {
            text.push_str(&format!("[{s}]\n"));
            for (k, v) in kv {
                text.push_str(&format!("{k} = {v}\n"));
            }
        }
        prop_assert_eq!(Config::parse(&text).unwrap().sections, entries);
    }

    #[test]
    fn header_ignores_workers_and_out(seed in any::<u64>(), w in 1usize..16, out in "[a-z]{1,8}") {
        let args = |extra: &[String]| {
            let mut a = vec!["carleman-lab".to_string(), "cgo".into(), "--nr".into(), "41".into()];
            a.extend_from_slice(extra);
            a
        };
        let base = header(seed, &args(&[]));
        prop_assert_eq!(header(seed, &args(&["--workers".into(), w.to_string(), "--out".into(), out.clone()])), base.clone());
        prop_assert_eq!(header(seed, &args(&[format!("--workers={w}"), format!("--out={out}")])), base.clone());
        let tag = format!("seed={seed}");
        prop_assert!(base.contains(&tag));
    }
}

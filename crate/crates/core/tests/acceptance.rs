//! Acceptance criteria 1-9. Each test prints one PASS/FAIL line to stderr (outside
//! the output capture) and asserts the criterion. Criteria run one at a time so the
//! runtimes are not inflated by each other.

use carleman_lab::carleman::{sweep, Estimate, SweepSetup, TestFunctionFamily};
use carleman_lab::cgo::{cgo_solution, direction, prepare, CgoGeometry, CgoMode, RemainderMode};
use carleman_lab::cli::{cgo_verdicts, run};
use carleman_lab::dnmap::{gauge_transform, partial_distance, restrict_partial, DnDomain, DnProblem, MaskSpec};
use carleman_lab::geometry::default_shell;
use carleman_lab::joperators::suite::{factorization_checks, g_checks, roundtrip_checks, symbol_checks, CheckRow, SuiteConfig};
use carleman_lab::potentials::{PsiSpec, QField, WField};
use carleman_lab::sph3::Potentials;
use carleman_lab::uniqueness::{canonical_pair, run_pipeline, DetectProtocol, PairKind, Verdict};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: usize, name: &str, pass: bool, detail: &str, start: Instant, budget_s: f64) {
    let t = start.elapsed().as_secs_f64();
    let ok = pass && t <= budget_s;
    let line = format!("criterion {n} [{name}]: {} {detail} time={t:.1}s budget={budget_s}s\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{}", line.trim());
}

fn failing(rows: &[CheckRow]) -> String {
    let bad: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| format!("{}@h={}:{:.3e}>{:.1e}", r.name, r.h, r.value, r.bound)).collect();
    if bad.is_empty() {
        format!("{} checks", rows.len())
    } else {
        format!("failed: {}", bad.join(" "))
    }
}

fn suite(k: f64, h: f64) -> SuiteConfig {
    SuiteConfig { k, h, delta: 0.05, cutoff: None, seed: 20240611 }
}

#[test]
fn criterion_1_j_calculus() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let rows = roundtrip_checks(&suite(0.0, 0.1)).unwrap();
    let worst = rows.iter().filter(|r| r.name != "jinv_closed_form").map(|r| r.value).fold(0.0, f64::max);
    let closed = rows.iter().find(|r| r.name == "jinv_closed_form").map(|r| r.value).unwrap();
    let pass = worst < 1e-8 && closed < 1e-10;
    verdict(1, "J-calculus exactness", pass, &format!("roundtrip={worst:.2e} closed_form={closed:.2e}"), t, 10.0);
}

#[test]
fn criterion_2_g_suite() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let rows = g_checks(&suite(0.0, 0.1), &[0.2, 0.1, 0.05], 100).unwrap();
    let band = rows.iter().find(|r| r.name == "g_band_stability").map(|r| r.value).unwrap_or(f64::NAN);
    let pass = rows.iter().all(|r| r.pass) && band.is_finite();
    verdict(2, "g-correction suite", pass, &format!("{} band_ratio={band:.3}", failing(&rows)), t, 60.0);
}

#[test]
fn criterion_3_symbols() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let mut rows = symbol_checks(&suite(0.0, 0.1)).unwrap();
    rows.extend(symbol_checks(&suite(1.0, 0.1)).unwrap());
    let has_jump = rows.iter().any(|r| r.name == "branch_jump");
    let pass = has_jump && rows.iter().all(|r| r.pass);
    verdict(3, "symbol correctness", pass, &failing(&rows), t, 10.0);
}

#[test]
fn criterion_4_factorization() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let rows = factorization_checks(0.5, &[0.2, 0.1, 0.05, 0.025], 0.05).unwrap();
    let slope = rows.last().unwrap().value;
    let pass = rows.iter().all(|r| r.pass);
    verdict(4, "factorization slope", pass, &format!("slope={slope:.3} (>= 0.8)"), t, 120.0);
}

#[test]
fn criterion_5_carleman_sweeps() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let hs = [0.4, 0.2, 0.1, 0.05];
    let eps = [0.25];
    let family = TestFunctionFamily::new(32, 5);
    let plain = SweepSetup::new(default_shell());
    let w = WField::Vortex { amp: 0.5, center: vec![0.0, 0.0, 1.5], width: 0.4 };
    let q = QField::Bump { amp: 1.0, center: vec![0.0, 0.1, 1.4], width: 0.3 };
    let perturbed = SweepSetup { w, q, ..plain.clone() };
    let inverted = SweepSetup { weight_sign: -1.0, ..plain.clone() };
    let runs = [
        (Estimate::Dksu, &plain, "plain"),
        (Estimate::Flat, &plain, "plain"),
        (Estimate::Simple, &plain, "plain"),
        (Estimate::Main, &plain, "plain"),
        (Estimate::Spec, &perturbed, "Wq"),
        (Estimate::Main, &perturbed, "Wq"),
        (Estimate::Dksu, &inverted, "sign-1"),
        (Estimate::Main, &inverted, "sign-1"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (est, setup, tag) in runs {
        let rep = sweep(est, setup, &family, &hs, &eps).unwrap();
        for a in &rep.aggregates {
            parts.push(format!("{}/{tag}:growth={:.2},slope={:.3}", est.id(), a.growth, a.slope));
        }
        pass &= rep.pass();
    }
    verdict(5, "Carleman sweeps", pass, &parts.join(" "), t, 900.0);
}

#[test]
fn criterion_6_cgo_scalings() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let geo = CgoGeometry::new(&default_shell(), direction(FRAC_PI_2, 0.0), 101, 51).unwrap();
    let pot = Potentials::free();
    let hs = [0.2, 0.1, 0.05, 0.025];
    let norms = |mode| {
        let parts = prepare(&geo, &pot, 1.0, mode, 6).unwrap();
        let n: Vec<_> = hs.iter().map(|&h| cgo_solution(&geo, &pot, &parts, h, RemainderMode::SemiAnalytic).unwrap().norms).collect();
        (parts, n)
    };
    let (_, free) = norms(CgoMode::Free);
    let (parts, vanish) = norms(CgoMode::Vanish);
    let (mut checks, _) = cgo_verdicts(&hs, &free, false);
    checks.extend(cgo_verdicts(&hs, &vanish, true).0);
    let (_, _, order) = parts.ell.as_ref().unwrap().residual_order(&geo);
    checks.push(("ell_order".into(), order, order >= 4.0));
    let pass = checks.iter().all(|c| c.2);
    let detail: Vec<String> = checks.iter().map(|(n, v, ok)| format!("{n}={v:.3}{}", if *ok { "" } else { "(out of band)" })).collect();
    verdict(6, "CGO scalings", pass, &detail.join(" "), t, 600.0);
}

#[test]
fn criterion_7_dn_map() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let dom = DnDomain::Ball { radius: 1.0, n: 48 };
    let free = DnProblem::new(dom.clone(), Potentials::free()).unwrap();
    let (diag, off) = free.dn_map(8).unwrap().ball_errors();
    let floor = diag.max(off);
    let w1 = WField::Vortex { amp: 1.0, center: vec![0.1, 0.0, 0.0], width: 0.4 };
    let q = QField::Bump { amp: 1.0, center: vec![0.0, 0.1, 0.0], width: 0.3 };
    let p1 = DnProblem::new(dom.clone(), Potentials { w: w1.clone(), q: q.clone() }).unwrap();
    let bd: Vec<Vec<f64>> = p1.boundary.iter().map(|b| b.x.clone()).collect();
    let w2 = gauge_transform(&w1, &PsiSpec::BallVanishing { amp: 0.5, radius: 1.0 }, &bd).unwrap();
    let p2 = DnProblem::new(dom, Potentials { w: w2, q }).unwrap();
    let dev = p1.dn_map(8).unwrap().deviation(&p2.dn_map(8).unwrap());
    let um = p1.mask(&MaskSpec::parse("cap:-1,0,0,1.2").unwrap());
    let em = p1.mask(&MaskSpec::parse("cap:1,0,0,0.5").unwrap());
    let part = partial_distance(&restrict_partial(&p1, 8, &um, &em).unwrap(), &restrict_partial(&p2, 8, &um, &em).unwrap()).unwrap();
    let pass = floor < 0.02 && dev < 10.0 * floor && part < floor;
    verdict(7, "DN map", pass, &format!("ball_error={floor:.3e} gauge_dev={dev:.2e} partial_gauge={part:.2e}"), t, 600.0);
}

#[test]
fn criterion_8_uniqueness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let geo = CgoGeometry::new(&default_shell(), direction(FRAC_PI_2, 0.0), 61, 31).unwrap();
    let protocol = DetectProtocol { frames: 64, seed: 11, ..DetectProtocol::default() };
    let hs = [0.2, 0.1, 0.05];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut nulls = (0.0, 0.0);
    let mut detectors = (0.0, 0.0);
    for (kind, want) in [(PairKind::Gauge, Verdict::Indistinguishable), (PairKind::Curl, Verdict::DwDiffer), (PairKind::QBump, Verdict::QDiffer)] {
        let rep = run_pipeline(&geo, &canonical_pair(&geo, kind), &hs, 6, &protocol).unwrap();
        let sc = &rep.scaling;
        let ex: Vec<String> = sc.exponents.iter().map(|e| e.map_or("-".into(), |v| format!("{v:.2}"))).collect();
        parts.push(format!("{kind:?}:residual={:.1e},exponents=[{}],verdict={}", sc.max_residual(), ex.join(","), rep.detection.verdict.as_str()));
        pass &= sc.max_residual() <= 1e-4 && rep.winding == 0 && rep.detection.verdict == want;
        match kind {
            PairKind::Gauge => {
                pass &= sc.hypothesis_holds() && sc.exponents_ok();
                nulls = (rep.detection.w_null.max(rep.detection.w_max), rep.detection.q_null.max(protocol.q_floor));
            }
            PairKind::Curl => detectors.0 = rep.detection.w_max,
            PairKind::QBump => detectors.1 = rep.detection.q_max,
        }
    }
    pass &= detectors.0 > 10.0 * nulls.0 && detectors.1 > 10.0 * nulls.1;
    parts.push(format!("dW/null={:.1} q/null={:.1e}", detectors.0 / nulls.0, detectors.1 / nulls.1));
    verdict(8, "uniqueness pipeline", pass, &parts.join(" "), t, 1200.0);
}

fn cli_outputs(dir: &std::path::Path, workers: usize) -> Vec<Vec<u8>> {
    let cfg = dir.join("ball.cfg");
    std::fs::write(&cfg, "[dn]\nkind = ball\nn = 16\n").unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let cmds: Vec<Vec<&str>> = vec![
        vec!["verify-joperators", "--K", "0.5", "--h", "0.1", "--seed", "3"],
        vec!["verify-carleman", "--estimate", "dksu", "--n", "16", "--tests", "6", "--h-list", "0.4,0.2", "--seed", "4"],
        vec!["cgo", "--nr", "41", "--na", "21", "--h-list", "0.2,0.1"],
        vec!["dn-map", "--domain", &cfg, "--lmax", "3"],
        vec!["uniqueness", "--pair", "curl", "--nr", "21", "--na", "15", "--frames", "4", "--seed", "9"],
    ];
    cmds.iter()
        .enumerate()
        .map(|(k, c)| {
            let out = dir.join(format!("out{k}_w{workers}.csv"));
            let w = workers.to_string();
            let o = out.to_string_lossy().into_owned();
            let mut argv = vec!["carleman-lab", "--workers", &w];
            argv.extend(c.iter().copied());
            argv.extend(["--out", &o]);
            let code = run(argv);
            assert!(code == 0 || code == 2, "{c:?} exited {code}");
            std::fs::read(&out).unwrap()
        })
        .collect()
}

#[test]
fn criterion_9_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let dir = std::env::temp_dir().join(format!("carleman-lab-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let base = cli_outputs(&dir, 1);
    let mut pass = base.iter().all(|b| !b.is_empty());
    for w in [4, 8, 1] {
        pass &= cli_outputs(&dir, w) == base;
    }
    let _ = std::fs::remove_dir_all(&dir);
    verdict(9, "determinism", pass, &format!("{} commands x workers 1,4,8 and a repeat", base.len()), t, 300.0);
}

//! Acceptance suite: one line per criterion, then a single verdict.
//!
//! Criteria run sequentially inside one test so that wall-clock budgets are
//! not distorted by other tests sharing the CPU.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cmr_phase::descriptor::{compute_descriptor, focus_vol, magnitude_mask, DescriptorConfig};
use cmr_phase::evalqc::pfd;
use cmr_phase::imgvol::PreprocessConfig;
use cmr_phase::phantom::{analytic_field, generate_phantom, shell_mask, PhantomConfig};
use cmr_phase::phases::{extract_phases, Phase, PhaseError, PhaseSet};
use cmr_phase::register::{loss, loss_gradient, ssim, RegistrationConfig, SsimParams, VectorField3D};
use cmr_phase_cli::artifacts::read_phase_set;
use cmr_phase_cli::config::FocusConfig;
use cmr_phase_cli::pipeline;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Core count the wall-clock budgets are stated for.
const LAPTOP_CORES: usize = 4;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Option<Duration>,
}

impl Outcome {
    fn over_budget(&self) -> bool {
        self.budget.is_some_and(|b| self.elapsed > b)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn c1_metric() -> (bool, String) {
    let mut checked = 0usize;
    let mut ok = true;
    for t in 2..=40usize {
        for p in 0..t {
            for q in 0..t {
                let brute = [-1i64, 0, 1]
                    .iter()
                    .map(|k| (p as i64 - q as i64 + k * t as i64).unsigned_abs() as usize)
                    .min()
                    .unwrap();
                ok &= pfd(p, q, t).unwrap() == brute;
                checked += 1;
            }
        }
    }
    (ok, format!("{checked} (p, p^, T) triples, exact"))
}

fn max_pfd(pred: &PhaseSet, gt: &PhaseSet) -> [usize; 5] {
    Phase::ALL.map(|p| pfd(pred.get(p), gt.get(p), gt.t_len).unwrap())
}

fn c2_rule_set() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0;
    let mut failures = Vec::new();
    for i in 0..20u64 {
        let cfg = PhantomConfig {
            seed: i,
            phase_offset: rng.random_range(0..30) as f64,
            amplitude: [0.15, 0.25, 0.35][i as usize % 3],
            ..Default::default()
        };
        let truth = cmr_phase::phantom::ground_truth_phases(&cfg);
        let fields: Vec<VectorField3D> = (0..cfg.full_len()).map(|t| analytic_field(&cfg, t).unwrap()).collect();
        let dims = fields[0].dims();
        let d = compute_descriptor(&fields, &focus_vol(dims), &DescriptorConfig::default()).unwrap();
        match extract_phases(&d.alpha_norm) {
            Ok(ex) => {
                let m = *max_pfd(&ex.phases, &truth).iter().max().unwrap();
                worst = worst.max(m);
                if m > 1 {
                    failures.push(format!("offset {} amp {}: pFD {m}", cfg.phase_offset, cfg.amplitude));
                }
            }
            Err(e) => failures.push(format!("offset {}: {e}", cfg.phase_offset)),
        }
    }
    (failures.is_empty(), format!("20 phantoms, worst pFD {worst} (<= 1) {}", failures.join("; ")))
}

fn smooth_cyclic(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let harmonics: Vec<(f64, f64)> =
        (2..=4).map(|_| (rng.random_range(-0.3..0.3), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    (0..t)
        .map(|i| {
            let w = std::f64::consts::TAU * i as f64 / t as f64;
            let mut v = -(w + phi).sin();
            for (h, (a, p)) in harmonics.iter().enumerate() {
                v += a * ((h + 2) as f64 * w + p).sin();
            }
            v
        })
        .collect()
}

fn rule_name(e: &PhaseError) -> String {
    match e {
        PhaseError::Rule { rule, .. } => rule.to_string(),
        other => format!("{other:?}"),
    }
}

fn c3_shift() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ok, mut extracted, mut cases) = (true, 0, 0);
    for _ in 0..100 {
        let t = rng.random_range(10..=60);
        let a = smooth_cyclic(&mut rng, t);
        let base = extract_phases(&a);
        extracted += base.is_ok() as usize;
        for k in 0..t {
            let rot: Vec<f64> = (0..t).map(|i| a[(i + t - k) % t]).collect();
            let r = extract_phases(&rot);
            cases += 1;
            ok &= match (&base, &r) {
                (Ok(b), Ok(r)) => r.phases == b.phases.shifted(k as i64) && r.ms_tie == b.ms_tie,
                (Err(x), Err(y)) => rule_name(x) == rule_name(y),
                _ => false,
            };
        }
    }
    (ok, format!("100 signals ({extracted} with a full phase set), {cases} rotations"))
}

struct Registered {
    descriptor_fields: Vec<VectorField3D>,
    prep: pipeline::Prepared,
}

fn register_phantom(cfg: &PhantomConfig) -> Registered {
    let (vol, _) = generate_phantom(cfg).unwrap();
    let prep = pipeline::prepare(&vol, &PreprocessConfig::default()).unwrap();
    let pairs = pipeline::register(&prep, &RegistrationConfig::default()).unwrap();
    Registered { descriptor_fields: pairs.into_iter().map(|p| p.field).collect(), prep }
}

fn mean_epe(est: &[VectorField3D], truth: &[VectorField3D], mask: impl Fn(usize) -> Array3<bool>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (t, (e, g)) in est.iter().zip(truth).enumerate() {
        for ((z, y, x), &m) in mask(t).indexed_iter() {
            if m {
                let (a, b) = (e.vector(z, y, x), g.vector(z, y, x));
                sum += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt();
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn c4_registration() -> ((bool, String), Registered) {
    let cfg = PhantomConfig::default();
    let reg = register_phantom(&cfg);
    let truth: Vec<VectorField3D> = (0..cfg.full_len()).map(|t| analytic_field(&cfg, t).unwrap()).collect();
    let mask = magnitude_mask(&reg.descriptor_fields, DescriptorConfig::default().mask_quantile).unwrap();
    let epe = mean_epe(&reg.descriptor_fields, &truth, |_| mask.clone());
    let wall = mean_epe(&reg.descriptor_fields, &truth, |t| shell_mask(&cfg, t, 0.5));
    ((epe < 0.5, format!("mean EPE {epe:.3} vox over the magnitude mask (< 0.5); myocardium {wall:.3} vox")), reg)
}

fn cmrphase(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cmrphase")).args(args).output().expect("spawn")
}

fn c5_end_to_end(root: &Path) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for focus in ["vol", "mse"] {
        let out = root.join(focus);
        let r = cmrphase(&["detect", "--phantom-default", "--focus", focus, "--out", out.to_str().unwrap()]);
        if !r.status.success() {
            ok = false;
            parts.push(format!("{focus}: exit {:?} {}", r.status.code(), String::from_utf8_lossy(&r.stderr).trim()));
            continue;
        }
        let pred = read_phase_set(&out.join("phases.json")).unwrap();
        let gt = read_phase_set(&out.join("truth.json")).unwrap();
        let d = max_pfd(&pred, &gt);
        // ED, MS, ES within one frame; PF, MD within two
        let limits = [1, 1, 1, 2, 2];
        ok &= d.iter().zip(limits).all(|(v, l)| *v <= l);
        parts.push(format!("C_{focus} pFD ed/ms/es/pf/md = {}", d.map(|v| v.to_string()).join("/")));
    }
    (ok, parts.join("; "))
}

fn c6_gradient() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let dims = [6, 6, 6];
        let fixed = Array3::from_shape_fn((6, 6, 6), |_| rng.random_range(0.0..1.0));
        let moving = Array3::from_shape_fn((6, 6, 6), |_| rng.random_range(0.0..1.0));
        // displacements stay clear of the interpolation kinks at integer offsets
        let field = VectorField3D::from_fn(dims, 1.0, |_, _, _| {
            [0; 3].map(|_| {
                let m: f64 = rng.random_range(0.1..0.4);
                if rng.random_bool(0.5) { m } else { -m }
            })
        });
        let cfg = RegistrationConfig {
            ssim_window: [3, 5][i % 2],
            lambda: [0.0, 2e-4, 0.05][i % 3],
            ..Default::default()
        };
        let (_, g) = loss_gradient(fixed.view(), moving.view(), &field, &cfg).unwrap();
        let h = 1e-6;
        let base = field.disp().clone();
        let (mut num, mut den) = (0.0, 0.0);
        for (idx, &a) in g.indexed_iter() {
            let eval = |d: f64| {
                let mut u = base.clone();
                u[idx] += d;
                loss(fixed.view(), moving.view(), &VectorField3D::new(u, 1.0).unwrap(), &cfg).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            num += (a - fd).powi(2);
            den += fd * fd;
        }
        worst = worst.max((num / den).sqrt());
    }
    (worst < 1e-3, format!("10 instances of 6^3, worst relative error {worst:.2e} (< 1e-3)"))
}

/// Direct per-window SSIM with two-pass moments.
fn ssim_oracle(x: &Array2<f64>, y: &Array2<f64>, p: &SsimParams) -> f64 {
    let n = p.window;
    let (h, w) = x.dim();
    let mut acc = 0.0;
    let mut count = 0.0;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let wx = x.slice(ndarray::s![r..r + n, c..c + n]);
            let wy = y.slice(ndarray::s![r..r + n, c..c + n]);
            let k = (n * n) as f64;
            let (mx, my) = (wx.sum() / k, wy.sum() / k);
            let vx = wx.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / k;
            let vy = wy.iter().map(|v| (v - my).powi(2)).sum::<f64>() / k;
            let cxy = wx.iter().zip(wy.iter()).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / k;
            acc += (2.0 * mx * my + p.c1) * (2.0 * cxy + p.c2) / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
            count += 1.0;
        }
    }
    acc / count
}

fn c7_ssim() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut self_err, mut sym_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..2.0));
        let y = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..2.0));
        let p = SsimParams::from_dynamic_range(7, 2.0);
        let xy = ssim(x.view(), y.view(), &p).unwrap();
        self_err = self_err.max((ssim(x.view(), x.view(), &p).unwrap() - 1.0).abs());
        sym_err = sym_err.max((xy - ssim(y.view(), x.view(), &p).unwrap()).abs());
        oracle_err = oracle_err.max((xy - ssim_oracle(&x, &y, &p)).abs());
    }
    (
        self_err <= 1e-6 && sym_err <= 1e-9 && oracle_err <= 1e-6,
        format!("|ssim(x,x)-1| {self_err:.1e}, asymmetry {sym_err:.1e}, oracle gap {oracle_err:.1e}"),
    )
}

fn c8_cutoff(seed0_full: Registered) -> (bool, String) {
    let mut ok = true;
    let mut full_max = f64::NEG_INFINITY;
    let mut trunc_min = f64::INFINITY;
    let mut reused = Some(seed0_full);
    let focus = FocusConfig::default();
    for seed in 0..10u64 {
        for frac in [1.0, 0.8] {
            let cfg = PhantomConfig { seed, truncate_fraction: frac, ..Default::default() };
            let reg = match (seed, frac == 1.0) {
                (0, true) => reused.take().unwrap(),
                _ => register_phantom(&cfg),
            };
            let f = pipeline::resolve_focus(&focus, reg.prep.vol.spatial_shape(), Some(&reg.prep.vol)).unwrap();
            let d = pipeline::describe(&reg.descriptor_fields, &f, &DescriptorConfig::default()).unwrap();
            let v = pipeline::quality(&d.vnorm_raw, reg.prep.original_t(), 5.0).unwrap();
            if frac < 1.0 {
                trunc_min = trunc_min.min(v.robust_score);
                ok &= v.cutoff_flag;
            } else {
                full_max = full_max.max(v.robust_score);
                ok &= !v.cutoff_flag;
            }
        }
    }
    (ok, format!("10 seeds: truncated scores >= {trunc_min:.2}, full-cycle scores <= {full_max:.2} (threshold 5)"))
}

fn c9_determinism(root: &Path) -> (bool, String) {
    let first = root.join("vol");
    let second = root.join("vol_again");
    let r = cmrphase(&["detect", "--phantom-default", "--focus", "vol", "--out", second.to_str().unwrap()]);
    if !r.status.success() || !first.exists() {
        return (false, "detect run failed".into());
    }
    let mut names: Vec<String> = fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".json") || n.ends_with(".svg"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(first.join(n)).ok() != fs::read(second.join(n)).ok())
        .collect();
    (differing.is_empty(), format!("{} payloads compared, differing: {differing:?}", names.len()))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |secs: u64| Some(Duration::from_secs(secs));
    let mut out = Vec::new();
    let mut push = |id, name, budget, ((pass, detail), elapsed): ((bool, String), Duration)| {
        let o = Outcome { id, name, pass, detail, elapsed, budget };
        report(&o);
        out.push(o);
    };

    push(1, "metric oracle", s(1), timed(c1_metric));
    push(2, "rule-set oracle", s(10), timed(c2_rule_set));
    push(3, "shift equivariance", s(5), timed(c3_shift));
    let ((c4, reg), t4) = timed(c4_registration);
    push(4, "registration fidelity", s(300), (c4, t4));
    push(5, "end-to-end detect", s(360), timed(|| c5_end_to_end(root)));
    push(6, "gradient check", s(30), timed(c6_gradient));
    push(7, "ssim correctness", None, timed(c7_ssim));
    push(8, "cut-off qc", s(120), timed(|| c8_cutoff(reg)));
    push(9, "determinism", None, timed(|| c9_determinism(root)));

    let n = cores();
    let timing_binding = n >= LAPTOP_CORES;
    line(&format!(
        "host cores: {n}; wall-clock budgets are {} (stated for >= {LAPTOP_CORES} cores)",
        if timing_binding { "enforced" } else { "reported only" }
    ));
    let failed: Vec<u8> =
        out.iter().filter(|o| !o.pass || (timing_binding && o.over_budget())).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

fn report(o: &Outcome) {
    let time = match o.budget {
        Some(b) => format!(
            "{:.1} s / budget {} s{}",
            o.elapsed.as_secs_f64(),
            b.as_secs(),
            if o.over_budget() { " OVER" } else { "" }
        ),
        None => format!("{:.1} s", o.elapsed.as_secs_f64()),
    };
    let verdict = if !o.pass {
        "FAIL".to_string()
    } else if o.over_budget() {
        format!("FAIL (time; results correct, {} core host)", cores())
    } else {
        "PASS".to_string()
    };
    line(&format!("criterion {} {}: {verdict} | {} | {time}", o.id, o.name, o.detail));
}

/// Writes past the test harness capture so the report is always shown.
fn line(s: &str) {
    let _ = writeln!(std::io::stderr(), "{s}");
}

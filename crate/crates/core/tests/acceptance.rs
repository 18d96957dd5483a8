//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Runs without the libtest harness so the
//! lines always reach the console.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use thinslice::classify::metrics::{balanced_accuracy, mcc_multiclass};
use thinslice::classify::mlp::Mlp;
use thinslice::classify::{train_svm, Control, Kernel, SmoConfig};
use thinslice::functionals::featurize;
use thinslice::pipeline::{run_pipeline, PipelineConfig, RunOutcome};
use thinslice::postproc::{ChannelSeries, Segment};
use thinslice::signals::{compute_ear, fit_head_pose, rotation_from_euler, FaceModel3D};
use thinslice::stats::dist::{f_sf, t_two_tailed};
use thinslice::stats::hypothesis::anova_oneway;
use thinslice::stats::Alpha;
use thinslice::{Dataset, Point2, RiskLevel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ear_suite() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let eye: [Point2; 6] = std::array::from_fn(|_| Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)));
        let base = compute_ear(&eye).unwrap();
        let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s: f64 = rng.random_range(0.1..10.0);
        let (tx, ty): (f64, f64) = (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        let (sn, cs) = theta.sin_cos();
        let moved = eye.map(|p| Point2::new(s * (cs * p.x - sn * p.y) + tx, s * (sn * p.x + cs * p.y) + ty));
        worst = worst.max((compute_ear(&moved).unwrap() - base).abs());
    }
    let closed = [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(3.0, 0.0),
        Point2::new(4.0, 0.0),
        Point2::new(3.0, 0.0),
        Point2::new(1.0, 0.0),
    ];
    let closed_ear = compute_ear(&closed).unwrap();
    let open = [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(3.0, 1.0),
        Point2::new(4.0, 0.0),
        Point2::new(3.0, -1.0),
        Point2::new(1.0, -1.0),
    ];
    let open_ear = compute_ear(&open).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && closed_ear == 0.0 && (open_ear - 0.5).abs() <= 1e-15 && secs < 1.0;
    outcome(
        pass,
        format!("max invariance error {worst:.2e} (tol 1e-9), closed {closed_ear}, example {open_ear} (want 0.5), {secs:.3} s (< 1 s)"),
    )
}

fn pose_round_trip() -> Outcome {
    let t0 = Instant::now();
    let model = FaceModel3D::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lim = 60f64.to_radians();
    let (mut worst, mut worst_det): (f64, f64) = (0.0, 0.0);
    let mut failures = 0;
    for _ in 0..1000 {
        let pitch = rng.random_range(-lim..lim);
        let yaw = rng.random_range(-lim..lim);
        let roll = rng.random_range(-lim..lim);
        let scale = rng.random_range(500.0..5000.0);
        let t = Point2::new(rng.random_range(100.0..500.0), rng.random_range(100.0..400.0));
        let image = model.project(&rotation_from_euler(pitch, yaw, roll), scale, t);
        match fit_head_pose(&image, &model) {
            Ok(p) => {
                worst = worst.max((p.pitch - pitch).abs()).max((p.yaw - yaw).abs()).max((p.roll - roll).abs());
                worst_det = worst_det.max((p.rotation.determinant() - 1.0).abs());
            }
            Err(_) => failures += 1,
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = failures == 0 && worst <= 1e-6 && worst_det <= 1e-12 && secs < 5.0;
    outcome(
        pass,
        format!("max angle error {worst:.2e} rad (tol 1e-6), max |det-1| {worst_det:.2e}, {failures} fit failures, {secs:.3} s (< 5 s)"),
    )
}

/// Brute-force statistics: two-pass moments, extrema by plateau scan.
fn oracle_block(runs: &[Vec<f64>]) -> [f64; 10] {
    let all: Vec<f64> = runs.iter().flatten().copied().collect();
    if all.is_empty() {
        return [0.0; 10];
    }
    let n = all.len() as f64;
    let mut mean = 0.0;
    for x in &all {
        mean += x;
    }
    mean /= n;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let (skew, kurt) = if var < 1e-12 {
        (0.0, 0.0)
    } else {
        (
            all.iter().map(|x| ((x - mean) / sd).powi(3)).sum::<f64>() / n,
            all.iter().map(|x| ((x - mean) / sd).powi(4)).sum::<f64>() / n - 3.0,
        )
    };
    let max = all.iter().cloned().fold(f64::MIN, f64::max);
    let min = all.iter().cloned().fold(f64::MAX, f64::min);
    let (mut peaks, mut valleys) = (0.0, 0.0);
    for r in runs {
        let mut a = 0;
        while a < r.len() {
            let mut b = a;
            while b + 1 < r.len() && r[b + 1] == r[a] {
                b += 1;
            }
            if a > 0 && b + 1 < r.len() {
                if r[a - 1] < r[a] && r[b + 1] < r[a] {
                    peaks += 1.0;
                }
                if r[a - 1] > r[a] && r[b + 1] > r[a] {
                    valleys += 1.0;
                }
            }
            a = b + 1;
        }
    }
    [max, min, max - min, mean, var, sd, skew, kurt, peaks, valleys]
}

fn oracle_channel(values: &[f64], valid: &[bool]) -> Vec<f64> {
    let mut runs: Vec<Vec<f64>> = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    for (v, ok) in values.iter().zip(valid) {
        if *ok {
            cur.push(*v);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    if runs.iter().map(Vec::len).sum::<usize>() < 3 {
        return vec![0.0; 30];
    }
    let diff = |r: &Vec<f64>| -> Vec<f64> { (1..r.len()).map(|i| r[i] - r[i - 1]).collect() };
    let d1: Vec<Vec<f64>> = runs.iter().map(diff).filter(|d| !d.is_empty()).collect();
    let d2: Vec<Vec<f64>> = d1.iter().map(diff).filter(|d| !d.is_empty()).collect();
    let mut out = oracle_block(&runs).to_vec();
    out.extend(oracle_block(&d1));
    out.extend(oracle_block(&d2));
    out
}

fn functional_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let names = ["avg_ear", "eye_pitch", "eye_yaw", "head_distance", "head_pitch", "head_yaw", "head_roll"];
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for s in 0..100 {
        let len = rng.random_range(5..400);
        let channels: Vec<ChannelSeries> = names
            .iter()
            .map(|name| {
                let coarse = rng.random_bool(0.3);
                let values: Vec<f64> = (0..len)
                    .map(|_| {
                        let v: f64 = rng.random_range(-1.0..1.0);
                        if coarse {
                            (v * 4.0).round() / 4.0
                        } else {
                            v
                        }
                    })
                    .collect();
                let drop = [0.0, 0.05, 0.5, 0.97][rng.random_range(0..4)];
                let valid: Vec<bool> = (0..len).map(|_| !rng.random_bool(drop)).collect();
                ChannelSeries::new(*name, values, valid, 10.0)
            })
            .collect();
        let seg = Segment {
            subject_id: format!("S{s}"),
            risk_label: RiskLevel::Low,
            segment_index: s,
            start_s: 0.0,
            end_s: len as f64 / 10.0,
            channels: channels.clone(),
            valid_fraction: 1.0,
        };
        let feats = featurize(&seg);
        let expected: Vec<f64> = channels.iter().flat_map(|c| oracle_channel(&c.values, &c.valid)).collect();
        if feats.values.len() != 210 || expected.len() != 210 {
            return outcome(false, format!("segment {s}: {} values, expected 210", feats.values.len()));
        }
        for (a, b) in feats.values.iter().zip(&expected) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
            compared += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 10.0,
        format!("{compared} values, max error {worst:.2e} (tol 1e-10), {secs:.3} s (< 10 s)"),
    )
}

fn stats_oracle() -> Outcome {
    let groups: [&[f64]; 3] = [&[-3.0, -1.0], &[-1.0, 1.0], &[1.0, 3.0]];
    let a = anova_oneway(&groups).unwrap();
    // F(2, 3) survival has the closed form (1 + 2F/3)^(-3/2)
    let p_closed = (1.0 + 2.0 * 4.0 / 3.0f64).powf(-1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (ours, reference) = if i % 2 == 0 {
            let d1 = rng.random_range(1..12) as f64;
            let d2 = rng.random_range(2..300) as f64;
            let f = rng.random_range(0.01..12.0);
            (f_sf(f, d1, d2), FisherSnedecor::new(d1, d2).unwrap().sf(f))
        } else {
            let df = rng.random_range(1..300) as f64;
            let t: f64 = rng.random_range(-8.0..8.0);
            (t_two_tailed(t, df), 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs()))
        };
        worst = worst.max((ours - reference).abs());
    }
    let bonf = Alpha::bonferroni(0.05, 210).corrected;
    let pass = a.f == 4.0 && (a.p - p_closed).abs() <= 1e-12 && worst <= 1e-8 && bonf == 0.05 / 210.0 && (bonf - 2.3809e-4).abs() < 1e-8;
    outcome(
        pass,
        format!("F = {} (want 4.0), p = {:.10}, 50 p-values max error {worst:.2e} (tol 1e-8), Bonferroni {bonf:.4e}", a.f, a.p),
    )
}

fn binary_mcc(tp: f64, fn_: f64, fp: f64, tn: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c: Vec<usize> = (0..4).map(|_| rng.random_range(0..60)).collect();
        let conf = vec![vec![c[0], c[1]], vec![c[2], c[3]]];
        let expected = binary_mcc(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64);
        worst = worst.max((mcc_multiclass(&conf) - expected).abs());
    }
    let mut ba_mismatch = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..6);
        let conf: Vec<Vec<usize>> = (0..k)
            .map(|i| {
                let mut row: Vec<usize> = (0..k).map(|_| rng.random_range(0..30)).collect();
                row[i] += 1;
                row
            })
            .collect();
        let mut macro_recall = 0.0;
        for (i, row) in conf.iter().enumerate() {
            macro_recall += row[i] as f64 / row.iter().sum::<usize>() as f64;
        }
        macro_recall /= k as f64;
        if balanced_accuracy(&conf).unwrap() != macro_recall {
            ba_mismatch += 1;
        }
    }
    outcome(
        worst <= 1e-12 && ba_mismatch == 0,
        format!("K=2 vs binary MCC max error {worst:.2e} (tol 1e-12), balanced accuracy vs macro recall mismatches {ba_mismatch}/1000"),
    )
}

fn xor_data(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (sx, sy) = ([-1.0, 1.0][i % 2], [-1.0, 1.0][(i / 2) % 2]);
        rows.push(vec![sx + 0.35 * normal(rng), sy + 0.35 * normal(rng)]);
        y.push(usize::from(sx * sy > 0.0));
    }
    Dataset::from_rows(&rows, y, 2)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn learner_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..10 {
        let (d, h, k) = (rng.random_range(1..6), rng.random_range(1..8), rng.random_range(2..4));
        let mut net = Mlp::init(d, h, k, &mut rng);
        for v in net.w.iter_mut() {
            *v += 0.1 * rng.random::<f64>();
        }
        let b = rng.random_range(1..8);
        let x = DMatrix::from_fn(b, d, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let l2 = 1e-3;
        let (_, g) = net.loss_grad(&x, &y, l2);
        let eps = 1e-6;
        for p in 0..net.w.len() {
            let mut a = net.clone();
            a.w[p] += eps;
            let mut m = net.clone();
            m.w[p] -= eps;
            let num = (a.loss_grad(&x, &y, l2).0 - m.loss_grad(&x, &y, l2).0) / (2.0 * eps);
            worst_grad = worst_grad.max((num - g[p]).abs() / num.abs().max(g[p].abs()).max(1e-6));
        }
    }

    let smo = SmoConfig::default();
    let mut worst_kkt: f64 = 0.0;
    let mut unconverged = 0;
    let (mut min_rbf, mut max_lin): (f64, f64) = (1.0, 0.0);
    for seed in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let train = xor_data(&mut r, 200);
        let test = xor_data(&mut r, 200);
        let rbf = train_svm(&train, Kernel::Rbf { gamma: 1.0 }, 10.0, &smo).unwrap();
        let lin = train_svm(&train, Kernel::Linear, 1.0, &smo).unwrap();
        for m in [&rbf, &lin] {
            worst_kkt = worst_kkt.max(m.max_kkt_violation());
            unconverged += usize::from(!m.all_converged());
        }
        min_rbf = min_rbf.min(accuracy(&rbf.predict(&test), &test.y));
        max_lin = max_lin.max(accuracy(&lin.predict(&test), &test.y));
    }
    let pass = worst_grad <= 1e-5 && worst_kkt <= smo.eps && unconverged == 0 && min_rbf >= 0.95 && max_lin <= 0.80;
    outcome(
        pass,
        format!(
            "MLP gradient max rel error {worst_grad:.2e} (tol 1e-5), SVM max KKT residual {worst_kkt:.2e} (tol {:.0e}), {unconverged} unconverged, XOR over 20 seeds: rbf min {min_rbf:.3} (>= 0.95), linear max {max_lin:.3} (<= 0.80)",
            smo.eps
        ),
    )
}

fn demo_config(out: &Path) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let mut cfg = PipelineConfig::load(&path).expect("demo config loads");
    cfg.out_dir = out.to_path_buf();
    cfg.cache_dir = None;
    cfg.run_name = None;
    cfg
}

fn end_to_end(run: &Result<RunOutcome, String>, secs: f64) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let s = &run.summary;
    let subjects: usize = s.cohort.iter().map(|c| c.subjects).sum();
    let (best_all, best_sel) = match (&s.best_all, &s.best_selected) {
        (Some(a), Some(b)) => (a, b),
        _ => return outcome(false, "no best result recorded".into()),
    };
    let gap = (best_sel.avg_accuracy - best_all.avg_accuracy).abs();
    let has = |c: Control| s.controls.iter().any(|r| r.control == Some(c));
    let controls_ok = has(Control::ShuffledLabels)
        && has(Control::ShuffledFeatures)
        && s.controls.iter().all(|r| (0.25..=0.45).contains(&r.avg_accuracy) && r.avg_mcc.abs() < 0.2);
    let control_text: Vec<String> = s
        .controls
        .iter()
        .map(|r| format!("{:?} acc {:.3} mcc {:.3}", r.control.unwrap(), r.avg_accuracy, r.avg_mcc))
        .collect();
    let pass = subjects == 10
        && s.cohort.len() == 3
        && s.total_segments >= 140
        && best_all.avg_accuracy >= 0.95
        && gap <= 0.03
        && !s.selected.is_empty()
        && s.selected.len() <= 21
        && controls_ok
        && secs < 600.0;
    outcome(
        pass,
        format!(
            "{subjects} subjects, {} segments (>= 140), best {} acc {:.3} (>= 0.95), selected {} features (<= 21) best {} acc {:.3} (gap {gap:.3} <= 0.03), controls [{}], {secs:.0} s (< 600 s)",
            s.total_segments,
            best_all.label,
            best_all.avg_accuracy,
            s.selected.len(),
            best_sel.label,
            best_sel.avg_accuracy,
            control_text.join("; ")
        ),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(a: &Result<RunOutcome, String>, b: &Result<RunOutcome, String>) -> Outcome {
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return outcome(false, "a run failed".into()),
    };
    let fa = files_under(&a.run_dir);
    let fb = files_under(&b.run_dir);
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && !fa.is_empty(),
        format!("{} files compared, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn report(name: &str, o: &Outcome, failed: &mut usize) {
    println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        *failed += 1;
    }
}

fn main() {
    let mut failed = 0;
    report("ear", &ear_suite(), &mut failed);
    report("pose_round_trip", &pose_round_trip(), &mut failed);
    report("functional_oracle", &functional_oracle(), &mut failed);
    report("statistics_oracle", &stats_oracle(), &mut failed);
    report("mcc_balanced_accuracy", &metric_identities(), &mut failed);
    report("learner_correctness", &learner_correctness(), &mut failed);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_config(tmp.path());
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let t0 = Instant::now();
    let first = run_pipeline(&cfg, &base).map_err(|e| e.to_string());
    let secs = t0.elapsed().as_secs_f64();
    report("end_to_end_protocol", &end_to_end(&first, secs), &mut failed);
    let second = run_pipeline(&cfg, &base).map_err(|e| e.to_string());
    report("determinism", &determinism(&first, &second), &mut failed);

    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so that the criteria execute in order on one thread and their
//! wall times are meaningful.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lusb_cli::run;
use lusb_core::certify::{gradient_suite, TOLERANCE};
use lusb_core::detect::{eiou_loss, iou, nms, nms_indices, BBox, Detection};
use lusb_core::eval::{compute_metrics, match_detections};
use lusb_core::ndgrad::{ParamStore, Tensor};
use lusb_core::pretrain::{info_nce, momentum_update, KeyQueue};

struct Outcome {
    pass: bool,
    soft: bool,
    detail: String,
}

impl Outcome {
    fn hard(pass: bool, detail: String) -> Self {
        Self { pass, soft: false, detail }
    }
}

// ---------------------------------------------------------------- 1

fn table_rows() -> Outcome {
    // (label, counts, printed precision, recall, accuracy, f1 in percent)
    let rows = [
        ("LUS+EIoU", (32, 3, 3), [91.43, 91.43, 84.21, 91.43]),
        ("ImageNet+smooth-l1", (25, 0, 6), [100.00, 80.65, 80.65, 89.29]),
        ("LUS+smooth-l1", (29, 1, 6), [96.67, 82.86, 80.56, 89.23]),
        ("LUS+IoU", (27, 3, 5), [90.00, 84.38, 77.14, 87.10]),
        ("model-based", (15, 12, 20), [55.56, 42.86, 31.91, 48.39]),
    ];
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (label, (tp, fp, fn_), printed) in rows {
        let m = compute_metrics(tp, fp, fn_).expect("non-zero counts");
        let got = [m.precision, m.recall, m.accuracy, m.f1].map(|v| 100.0 * v);
        for (g, p) in got.iter().zip(printed) {
            let e = (g - p).abs();
            worst = worst.max(e);
            if e > 0.01 {
                failed.push(format!("{label}: {g:.4} vs {p}"));
            }
        }
    }
    Outcome::hard(failed.is_empty(), format!("5 rows, worst deviation {worst:.4} pp{}", failed.iter().map(|f| format!(", {f}")).collect::<String>()))
}

// ---------------------------------------------------------------- 2

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = gradient_suite(100, 0).expect("suite runs");
    let secs = start.elapsed().as_secs_f64();
    let pass = reports.iter().all(|r| r.passes(TOLERANCE, 100)) && secs <= 60.0;
    let parts: Vec<String> = reports.iter().map(|r| format!("{} {}pts {:.1e}", r.name, r.points, r.worst)).collect();
    Outcome::hard(pass, format!("{} in {secs:.1}s", parts.join(", ")))
}

// ---------------------------------------------------------------- 3

fn random_box(rng: &mut impl Rng) -> BBox<f64> {
    let (x, y) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
    BBox::new(x, y, x + rng.gen_range(0.1..40.0), y + rng.gen_range(0.1..40.0)).expect("positive extent")
}

fn eiou_fixtures() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = |x1: f64, y1: f64, x2: f64, y2: f64| BBox::new(x1, y1, x2, y2).expect("valid");
    let same = b(1.0, 2.0, 4.0, 9.0);
    let zero = eiou_loss(&same, &same).expect("valid") == 0.0;
    let fixture: f64 = eiou_loss(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)).expect("valid");
    let fixture_err = (fixture - (6.0 / 7.0 + 1.0 / 9.0)).abs();
    let mut bound_ok = true;
    let mut invariance = 0.0f64;
    for _ in 0..10_000 {
        let (p, g) = (random_box(&mut rng), random_box(&mut rng));
        let l = eiou_loss(&p, &g).expect("valid");
        bound_ok &= l >= 1.0 - iou(&p, &g);
        let (dx, dy) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
        let t = eiou_loss(&p.translate(dx, dy), &g.translate(dx, dy)).expect("valid");
        let (px, py, s) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(0.2..5.0));
        let sc = eiou_loss(&p.scale_about(px, py, s), &g.scale_about(px, py, s)).expect("valid");
        invariance = invariance.max((t - l).abs()).max((sc - l).abs());
    }
    let pass = zero && fixture_err <= 1e-12 && bound_ok && invariance <= 1e-10;
    Outcome::hard(
        pass,
        format!(
            "identical={zero}, fixture err {fixture_err:.1e}, bound on 10000 pairs={bound_ok}, invariance err {invariance:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn contrastive_mechanics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // momentum encoder against the unrolled average
    let (m, steps, n) = (0.999, 1000, 16);
    let k0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let qs: Vec<Vec<f64>> = (0..steps).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut key = ParamStore::new();
    key.push("w", Tensor::vector(k0.clone()).expect("finite"));
    for q in &qs {
        let mut query = ParamStore::new();
        query.push("w", Tensor::vector(q.clone()).expect("finite"));
        momentum_update(&query, &mut key, m).expect("aligned");
    }
    let mut ema_err = 0.0f64;
    for i in 0..n {
        let mut want = m.powi(steps as i32) * k0[i];
        for (t, q) in qs.iter().enumerate() {
            want += (1.0 - m) * m.powi((steps - 1 - t) as i32) * q[i];
        }
        ema_err = ema_err.max((key.tensor(0).values()[i] - want).abs());
    }

    // queue against a plain deque model
    let (cap, dim) = (256, 8);
    let mut queue = KeyQueue::new(cap, dim);
    let mut model: VecDeque<Vec<f64>> = VecDeque::new();
    let mut fifo_ok = true;
    let mut pushes = 0;
    while pushes < 10_000 {
        let batch: Vec<Vec<f64>> = (0..rng.gen_range(0..8))
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        pushes += batch.len();
        queue.enqueue(&batch).expect("unit keys");
        for k in batch {
            model.push_back(k);
            if model.len() > cap {
                model.pop_front();
            }
        }
        fifo_ok &= queue.len() == model.len() && queue.len() <= cap && queue.iter().zip(&model).all(|(a, b)| a == b.as_slice());
    }
    fifo_ok &= queue.is_full();

    let q = [0.6, 0.8];
    let empty: f64 = info_nce(&q, &q, std::iter::empty(), 0.2).expect("valid");
    let two_way = info_nce(&[1.0, 0.0], &[0.0, 1.0], [&[0.0, -1.0][..]], 1.0).expect("valid");
    let ln2_err = (two_way - 2f64.ln()).abs();
    let pass = ema_err <= 1e-6 && fifo_ok && empty.abs() <= 1e-12 && ln2_err <= 1e-12;
    Outcome::hard(
        pass,
        format!("ema err {ema_err:.1e} after {steps} steps, fifo over {pushes} pushes={fifo_ok}, empty-queue {empty:.1e}, ln2 err {ln2_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

/// Brute-force characterization of suppression. With candidates strictly
/// ordered by (score desc, index asc), the kept set is the unique set in
/// which a candidate is kept iff no kept candidate ahead of it overlaps it
/// at `t` or more; the output lists it in that order.
fn is_nms_result(dets: &[Detection<f64>], kept: &[usize], t: f64, thr: f64) -> bool {
    let ahead = |j: usize, i: usize| dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i);
    let mut in_set = vec![false; dets.len()];
    for &k in kept {
        if k >= dets.len() || in_set[k] || dets[k].score < thr {
            return false;
        }
        in_set[k] = true;
    }
    let ordered = kept.windows(2).all(|w| ahead(w[0], w[1]));
    let fixed_point = (0..dets.len()).filter(|&i| dets[i].score >= thr).all(|i| {
        let blocked = (0..dets.len()).any(|j| in_set[j] && ahead(j, i) && iou(&dets[j].bbox, &dets[i].bbox) >= t);
        in_set[i] == !blocked
    });
    ordered && fixed_point
}

fn nms_and_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nms_ok = 0;
    let mut count_ok = 0;
    let instances = 1000;
    for _ in 0..instances {
        let n = rng.gen_range(0..=20);
        let dets: Vec<Detection<f64>> = (0..n)
            .map(|_| {
                let x = rng.gen_range(0.0..40.0);
                let y = rng.gen_range(0.0..20.0);
                let bbox = BBox::new(x, y, x + rng.gen_range(2.0..20.0), y + rng.gen_range(10.0..60.0)).expect("valid");
                // coarse scores force ties
                Detection { bbox, score: (rng.gen_range(0..10) as f64) / 10.0 + 0.05 }
            })
            .collect();
        let t = rng.gen_range(0.2..0.8);
        let thr = rng.gen_range(0.0..0.6);
        let kept = nms_indices(&dets, t, thr);
        let got = nms(&dets, t, thr);
        let consistent = got.iter().zip(&kept).all(|(d, &k)| *d == dets[k]) && got.len() == kept.len();
        nms_ok += (consistent && is_nms_result(&dets, &kept, t, thr)) as usize;

        let gts: Vec<BBox<f64>> = (0..rng.gen_range(0..8))
            .map(|_| {
                if !dets.is_empty() && rng.gen_bool(0.5) {
                    dets.choose(&mut rng).expect("non-empty").bbox.translate(rng.gen_range(-2.0..2.0), 0.0)
                } else {
                    let x = rng.gen_range(0.0..40.0);
                    BBox::new(x, 5.0, x + 6.0, 50.0).expect("valid")
                }
            })
            .collect();
        let m = match_detections(&got, &gts, 0.5);
        let mut dets_seen = vec![false; got.len()];
        let mut gts_seen = vec![false; gts.len()];
        let unique = m.pairs.iter().all(|p| {
            let fresh = !dets_seen[p.det] && !gts_seen[p.gt];
            dets_seen[p.det] = true;
            gts_seen[p.gt] = true;
            fresh
        });
        let ok = m.tp + m.fn_ == gts.len() && m.tp + m.fp == got.len() && m.tp == m.pairs.len() && unique;
        count_ok += ok as usize;
    }
    Outcome::hard(
        nms_ok == instances && count_ok == instances,
        format!("nms satisfies reference on {nms_ok}/{instances}, count identities on {count_ok}/{instances}"),
    )
}

// ---------------------------------------------------------------- 6, 8

fn cli(dir: &Path, args: &[&str]) -> i32 {
    std::env::set_current_dir(dir).expect("enter run directory");
    let mut argv = vec!["lusb".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn metric(report: &str, key: &str) -> Option<f64> {
    report.lines().find_map(|l| l.strip_prefix(&format!("{key}: "))).and_then(|v| v.trim().parse().ok())
}

const E2E: [&str; 6] = ["--count", "500", "--train_frac", "0.8", "--seed", "1"];

/// Full pipeline in `dir`; returns (exit codes ok, seconds, metrics text).
fn end_to_end(dir: &Path, extra: &[&str]) -> (bool, f64, String) {
    let start = Instant::now();
    let mut ok = true;
    for cmd in ["gen", "pretrain", "finetune", "eval"] {
        let mut args = vec![cmd];
        args.extend(E2E);
        args.extend(extra);
        ok &= cli(dir, &args) == 0;
        if !ok {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let metrics = std::fs::read_to_string(dir.join("run/metrics.txt")).unwrap_or_default();
    (ok, secs, metrics)
}

fn synthetic_run(dir: &Path) -> Outcome {
    let (ok, secs, metrics) = end_to_end(dir, &[]);
    let f1 = metric(&metrics, "f1").unwrap_or(f64::NAN);
    let p = metric(&metrics, "precision").unwrap_or(f64::NAN);
    let r = metric(&metrics, "recall").unwrap_or(f64::NAN);
    Outcome::hard(
        ok && f1 >= 80.0 && secs <= 1800.0,
        format!("400 train / 100 eval, P {p:.2}% R {r:.2}% F1 {f1:.2}% (need >= 80.00), {secs:.0}s (limit 1800s)"),
    )
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let mut ok = true;
    if !first.join("run/metrics.txt").exists() {
        ok &= end_to_end(first, &[]).0;
    }
    let (repeat_ok, secs, _) = end_to_end(second, &[]);
    ok &= repeat_ok;
    let files = [
        "run/pretrain.ckpt",
        "run/detector.ckpt",
        "run/metrics.txt",
        "run/pretrain_loss.txt",
        "run/finetune_loss.txt",
        "run/detections.txt",
    ];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(first.join(f)).ok();
        let b = std::fs::read(second.join(f)).ok();
        if a.is_none() || a != b {
            differing.push(f);
        }
    }
    Outcome::hard(
        ok && differing.is_empty(),
        format!("repeat took {secs:.0}s, {} of {} artifacts byte-identical {:?}", files.len() - differing.len(), files.len(), differing),
    )
}

// ---------------------------------------------------------------- 7

const BENEFIT_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pretraining_benefit(root: &Path) -> Outcome {
    let mut pre = Vec::new();
    let mut scratch = Vec::new();
    let mut ok = true;
    for seed in BENEFIT_SEEDS {
        let dir = root.join(format!("seed{seed}"));
        std::fs::create_dir_all(&dir).expect("seed directory");
        let s = seed.to_string();
        let common = [
            "--count", "250", "--train_frac", "0.8", "--seed", &s, "--pretrain.seed", &s, "--detect.seed", &s,
            "--pretrain.epochs", "40", "--detect.epochs", "8",
        ];
        let with = |cmd: &'static str, extra: &[&'static str]| {
            let mut a = vec![cmd];
            a.extend(common);
            a.extend(extra);
            a
        };
        ok &= cli(&dir, &with("gen", &[])) == 0;
        ok &= cli(&dir, &with("pretrain", &[])) == 0;
        ok &= cli(&dir, &with("finetune", &[])) == 0;
        ok &= cli(&dir, &with("eval", &[])) == 0;
        ok &= cli(&dir, &with("finetune", &["--init", "scratch", "--run_dir", "scratch"])) == 0;
        ok &= cli(&dir, &with("eval", &["--run_dir", "scratch"])) == 0;
        let read = |p: &str| metric(&std::fs::read_to_string(dir.join(p)).unwrap_or_default(), "f1").unwrap_or(f64::NAN);
        pre.push(read("run/metrics.txt"));
        scratch.push(read("scratch/metrics.txt"));
    }
    let (mp, ms) = (median(pre.clone()), median(scratch.clone()));
    Outcome {
        pass: ok && mp >= ms,
        soft: true,
        detail: format!("median F1 pretrained {mp:.2}% vs scratch {ms:.2}% (per seed {pre:?} vs {scratch:?})"),
    }
}

fn main() {
    // libtest flags are accepted and ignored; bare arguments select the
    // criteria whose names contain one of them.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, b, c) = (tmp.path().join("e2e"), tmp.path().join("e2e_repeat"), tmp.path().join("benefit"));
    for d in [&a, &b, &c] {
        std::fs::create_dir_all(d).expect("create run directory");
    }
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("1 table arithmetic", Box::new(table_rows)),
        ("2 gradient certification", Box::new(gradients)),
        ("3 eiou fixtures", Box::new(eiou_fixtures)),
        ("4 contrastive mechanics", Box::new(contrastive_mechanics)),
        ("5 nms and matching", Box::new(nms_and_matching)),
        ("6 end-to-end synthetic run", Box::new(|| synthetic_run(&a))),
        ("7 pretraining benefit", Box::new(|| pretraining_benefit(&c))),
        ("8 determinism", Box::new(|| determinism(&a, &b))),
    ];
    let mut hard_failures = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = match (o.pass, o.soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        hard_failures += (!o.pass && !o.soft) as usize;
        println!("criterion {name}: {verdict} [{:.1}s] {}", start.elapsed().as_secs_f64(), o.detail);
    }
    std::env::set_current_dir(std::env::temp_dir()).ok();
    if hard_failures > 0 {
        eprintln!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

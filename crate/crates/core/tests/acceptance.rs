//! Acceptance suite: one pass/fail line per criterion, tolerances pinned
//! below. Run with `cargo test -p advlab --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use advlab::attacks::{bim, fgsm, pgd, AttackConfig};
use advlab::corruptions::{build_corruption_suite, default_specs, CorruptionKind, SEVERITIES};
use advlab::dataio::{load_idx, read_idx_images, read_idx_labels, write_dataset_idx, write_idx_images, write_idx_labels};
use advlab::labelaug::{augment_label, la_loss, LabelAugConfig, OperationId};
use advlab::metrics::{corruption_error_from, mce, read_report, relative_change, severity_errors, write_report, EvaluationReport};
use advlab::model::{cross_entropy_soft, softmax, ClassSpace};
use advlab::rng;
use advlab::toy::{ToyOutcome, ToySetup};
use advlab::training::TrainMode;
use advlab::Error;
use common::{corner_max, gradient_violation, inversions, random_batch, random_graph, random_model};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_ABS_TOL: f64 = 1e-7;
const BUDGET_SLACK: f64 = 1e-12;
const FGSM_ORACLE_TOL: f64 = 1e-10;
const LA_CE_TOL: f64 = 1e-12;
/// Parity tolerance in hundredths of a percent (±0.01).
const PARITY_HUNDREDTHS: i64 = 1;
const TOY_SEEDS: u64 = 5;
const TOY_MIN_AGREEING: usize = 4;
const MAX_INVERSIONS: usize = 1;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 1. Relative changes of the published error rates.
fn metric_parity() -> Outcome {
    let cases = [
        (94.06, 70.32, 25.24),
        (94.06, 32.70, 65.23),
        (20.87, 32.18, 54.19),
        (20.87, 26.70, 27.93),
        (58.06, 71.41, 22.99),
        (58.06, 66.43, 14.42),
        (32.18, 26.70, 17.03),
        (71.41, 66.43, 6.97),
        (70.32, 32.70, 53.50),
        (17.78, 16.76, 5.73),
        (15.24, 14.04, 7.87),
        (15.77, 15.33, 2.79),
    ];
    let mut bad = Vec::new();
    let mut off_by_one = Vec::new();
    for (before, after, claimed) in cases {
        let got = relative_change(before, after).map_err(|e| e.to_string())?.hundredths().abs();
        let want = (claimed * 100.0_f64).round() as i64;
        if (got - want).abs() > PARITY_HUNDREDTHS {
            bad.push(format!("{before}->{after}: {got} vs {want}"));
        } else if got != want {
            off_by_one.push(format!("{claimed} computes as {}.{:02}", got / 100, got % 100));
        }
    }
    let note = if off_by_one.is_empty() { String::new() } else { format!("; within tolerance: {}", off_by_one.join(", ")) };
    check(bad.is_empty(), format!("{} of 12 within ±0.01{note}{}", 12 - bad.len(), if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }))
}

/// 2. Reverse mode against central differences.
fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (g, b, wrt) = random_graph(seed);
        worst = worst.max(gradient_violation(&g, &b, &wrt, GRAD_REL_TOL, GRAD_ABS_TOL));
    }
    check(worst <= 1.0, format!("100 graphs, worst error / tolerance = {worst:.3e}"))
}

fn budget_ok(adv: &advlab::Tensor, x: &advlab::Tensor, eps: f64) -> bool {
    adv.data().iter().zip(x.data()).all(|(a, o)| (a - o).abs() <= eps + BUDGET_SLACK && (0.0..=1.0).contains(a))
}

/// 3. Budget fuzz over all three attacks.
fn budget_fuzz() -> Outcome {
    let mut failures = 0;
    let mut r = rng::substream(2024, 0);
    for i in 0..1000u64 {
        let d = 2 + (rng::unit(&mut r) * 10.0) as usize;
        let k = 2 + (rng::unit(&mut r) * 4.0) as usize;
        let model = random_model(i, d, vec![6], k);
        let (x, y) = random_batch(i, 3, d, k);
        let eps = rng::uniform(&mut r, 1e-4, 0.5);
        let steps = 1 + (rng::unit(&mut r) * 10.0) as usize;
        let adv = match i % 3 {
            0 => fgsm(&model, &x, &y, eps),
            1 => bim(&model, &x, &y, eps, rng::uniform(&mut r, 1e-3, 0.3), steps),
            _ => {
                let cfg = AttackConfig { random_start: rng::unit(&mut r) < 0.5, seed: i, alpha: rng::uniform(&mut r, 1e-3, 0.3), ..AttackConfig::pgd(eps, steps) };
                pgd(&model, &x, &y, &cfg)
            }
        }
        .map_err(|e| e.to_string())?;
        if !budget_ok(&adv.adversarial, &x, eps) {
            failures += 1;
        }
    }
    check(failures == 0, format!("1000 invocations, {failures} outside the ε-ball or [0,1]"))
}

/// 4. FGSM against exhaustive corner enumeration.
fn fgsm_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let d = 2 + (seed as usize % 11);
        let model = random_model(seed, d, vec![], 2);
        let (x, y) = random_batch(seed + 100, 3, d, 2);
        let eps = 0.05 + 0.01 * seed as f64;
        let r = fgsm(&model, &x, &y, eps).map_err(|e| e.to_string())?;
        for i in 0..y.len() {
            worst = worst.max((r.losses[i] - corner_max(&model, x.row(i), y[i], eps)).abs());
        }
    }
    check(worst <= FGSM_ORACLE_TOL, format!("20 binary linear models, d ≤ 12, max |gap| = {worst:.3e}"))
}

/// 5. pgd(1 step, α ≥ ε) == fgsm and bim == deterministic pgd.
fn reduction_identities() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..50 {
        let model = random_model(seed, 7, vec![6], 3);
        let (x, y) = random_batch(seed, 5, 7, 3);
        let eps = 0.01 + 0.004 * seed as f64;
        let f = fgsm(&model, &x, &y, eps).unwrap();
        let one = AttackConfig { alpha: eps * (1.0 + seed as f64 / 10.0), ..AttackConfig::pgd(eps, 1) };
        if pgd(&model, &x, &y, &one).unwrap().adversarial != f.adversarial {
            mismatches += 1;
        }
        let (alpha, steps) = (eps / 4.0, 1 + seed as usize % 9);
        let b = bim(&model, &x, &y, eps, alpha, steps).unwrap();
        if b.adversarial != pgd(&model, &x, &y, &AttackConfig { alpha, ..AttackConfig::pgd(eps, steps) }).unwrap().adversarial {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("50 seeds, {mismatches} bitwise mismatches"))
}

/// 6. Augmented labels sum to one; δ = 0 is plain cross-entropy.
fn labelaug_algebra() -> Outcome {
    let mut r = rng::substream(6, 0);
    let (mut not_one, mut worst_ce) = (0, 0.0_f64);
    for _ in 0..10_000 {
        let k = 2 + (rng::unit(&mut r) * 20.0) as usize;
        let m = 1 + (rng::unit(&mut r) * 5.0) as usize;
        let y = (rng::unit(&mut r) * k as f64) as usize;
        let op = (rng::unit(&mut r) * m as f64) as usize;
        let delta = rng::unit(&mut r) * 0.999;
        let registry = (0..m).map(|i| OperationId { index: i, name: format!("op{i}") }).collect();
        let cfg = LabelAugConfig::new(delta, ClassSpace::new(k, m).unwrap(), registry).unwrap();
        let t = augment_label(y, &cfg.registry()[op].clone(), &cfg).unwrap();
        if t.as_slice().iter().sum::<f64>() != 1.0 {
            not_one += 1;
        }
        let cfg0 = LabelAugConfig::new(0.0, cfg.class_space(), cfg.registry().to_vec()).unwrap();
        let t0 = augment_label(y, &cfg0.registry()[op].clone(), &cfg0).unwrap();
        let logits: Vec<f64> = (0..k + m).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
        let p = softmax(&logits);
        let mut onehot = vec![0.0; k + m];
        onehot[y] = 1.0;
        worst_ce = worst_ce.max((la_loss(&p, &t0).unwrap() - cross_entropy_soft(&p, &onehot).unwrap()).abs());
    }
    check(
        not_one == 0 && worst_ce <= LA_CE_TOL,
        format!("10^4 draws, {not_one} sums ≠ 1, max |L_LA(δ=0) − CE| = {worst_ce:.3e}"),
    )
}

/// 7. Directional ordering of the three regimes on the toy task.
fn toy_reproduction() -> Outcome {
    let setup = ToySetup::default();
    let mut wins = [0usize; 5];
    let mut sums = [[0.0; 3]; 3];
    let mut rows = Vec::new();
    for seed in 0..TOY_SEEDS {
        let [s, a, p]: [ToyOutcome; 3] = setup.run_seed(seed).map_err(|e| e.to_string())?;
        let holds = [
            s.robust_error > a.robust_error,
            a.robust_error > p.robust_error,
            s.clean_error < a.clean_error,
            p.clean_error < a.clean_error,
            p.robust_class_sd <= a.robust_class_sd,
        ];
        for (w, h) in wins.iter_mut().zip(holds) {
            *w += usize::from(h);
        }
        for (acc, o) in sums.iter_mut().zip([s, a, p]) {
            acc[0] += o.clean_error;
            acc[1] += o.robust_error;
            acc[2] += o.robust_class_sd;
        }
        rows.push(format!(
            "    seed {seed}: clean {:.4}/{:.4}/{:.4} robust {:.4}/{:.4}/{:.4} robust-sd {:.4}/{:.4}/{:.4}",
            s.clean_error, a.clean_error, p.clean_error, s.robust_error, a.robust_error, p.robust_error,
            s.robust_class_sd, a.robust_class_sd, p.robust_class_sd
        ));
    }
    let n = TOY_SEEDS as f64;
    let mean = |i: usize, j: usize| sums[i][j] / n;
    let labels = ["robust std>adv", "robust adv>adv+", "clean std<adv", "clean adv+<adv", "robust-sd adv+≤adv"];
    let tally: Vec<String> = labels.iter().zip(wins).map(|(l, w)| format!("{l} {w}/{TOY_SEEDS}")).collect();
    let detail = format!(
        "{}; means (std/adv/adv+): clean {:.4}/{:.4}/{:.4}, robust {:.4}/{:.4}/{:.4}, robust-sd {:.4}/{:.4}/{:.4}\n{}",
        tally.join(", "),
        mean(0, 0), mean(1, 0), mean(2, 0), mean(0, 1), mean(1, 1), mean(2, 1), mean(0, 2), mean(1, 2), mean(2, 2),
        rows.join("\n")
    );
    check(wins.iter().all(|&w| w >= TOY_MIN_AGREEING), detail)
}

/// 8. Corruption means are exact and damage grows with severity.
fn corruption_identities() -> Outcome {
    let mut exact_failures = 0;
    for seed in 0..500 {
        let mut r = rng::substream(seed, 8);
        let mut ce = BTreeMap::new();
        let mut ce_sum = 0.0;
        for c in 0..1 + (rng::unit(&mut r) * 5.0) as usize {
            let grid: BTreeMap<u8, f64> = SEVERITIES.map(|s| (s, rng::unit(&mut r))).collect();
            let mut sum = 0.0;
            for v in grid.values() {
                sum += v;
            }
            let got = corruption_error_from(&grid).unwrap();
            exact_failures += usize::from(got != sum / 5.0);
            ce.insert(format!("c{c}"), got);
            ce_sum += got;
        }
        exact_failures += usize::from(mce(&ce).unwrap() != ce_sum / ce.len() as f64);
    }
    let setup = ToySetup::default();
    let (model, _) = setup.train(TrainMode::Std, 0).map_err(|e| e.to_string())?;
    let test = ToySetup { n_test: 1000, ..setup }.test_set(0).map_err(|e| e.to_string())?;
    let suite = build_corruption_suite(&test, &default_specs(0), 0).map_err(|e| e.to_string())?;
    let mut per_kind = Vec::new();
    let mut worst = 0;
    for kind in CorruptionKind::ALL {
        let inv = inversions(&severity_errors(&model, &suite, kind).map_err(|e| e.to_string())?);
        worst = worst.max(inv);
        per_kind.push(format!("{kind} {inv}"));
    }
    check(
        exact_failures == 0 && worst <= MAX_INVERSIONS,
        format!("500 random grids, {exact_failures} inexact; inversions on toy Std: {}", per_kind.join(", ")),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_advlab")).args(args).env_remove("ADVLAB_OUT").output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// 9. train → eval twice gives byte-identical artifacts.
fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pipeline = |root: &Path| -> Result<(), String> {
        let mut models = Vec::new();
        for mode in ["std", "adv_plus"] {
            let out = root.join(mode);
            run_cli(&["train", "--mode", mode, "--data", "blobs:seed=3", "--seed", "3", "--out", out.to_str().unwrap()])?;
            models.push(out.join("model.ckpt").to_str().unwrap().to_string());
        }
        let eval_out = root.join("eval");
        run_cli(&[
            "eval", "--model", &models[0], &models[1], "--data", "blobs:seed=3,n=200,split=1,tags=quadrant,label_margin=0.05",
            "--corruptions", "--out", eval_out.to_str().unwrap(),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let files = [
        "std/model.ckpt", "std/history.csv", "adv_plus/model.ckpt", "adv_plus/history.csv", "eval/std/report.json",
        "eval/adv_plus/report.json", "eval/std/per_class.csv", "eval/std/corruption_grid.csv", "eval/std/error_ratios.csv",
        "eval/comparison.txt",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() || !a.join(f).is_file())
        .collect();
    check(differing.is_empty(), format!("{} artifacts compared, differing or missing: {differing:?}", files.len()))
}

/// 10. IDX and report round trips; malformed inputs.
fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut problems = Vec::new();

    let mut r = rng::substream(10, 0);
    let pixels: Vec<u8> = (0..5 * 3 * 4).map(|_| (rng::unit(&mut r) * 256.0) as u8).collect();
    let labels: Vec<u8> = (0..5).map(|i| i % 3).collect();
    let (ip, lp) = (d.join("i.idx"), d.join("l.idx"));
    write_idx_images(&ip, 3, 4, &pixels).unwrap();
    write_idx_labels(&lp, &labels).unwrap();
    if read_idx_images(&ip).unwrap() != (5, 3, 4, pixels.clone()) || read_idx_labels(&lp).unwrap() != labels {
        problems.push("raw IDX round trip");
    }
    let ds = load_idx(&ip, &lp).unwrap();
    write_dataset_idx(&ds, &d.join("i2.idx"), &d.join("l2.idx")).unwrap();
    if std::fs::read(&ip).unwrap() != std::fs::read(d.join("i2.idx")).unwrap() {
        problems.push("dataset IDX round trip");
    }

    let mut rep = EvaluationReport::new(0.1 + 0.2, 1.0 / 3.0, 0.123_456_789_012_345_67);
    rep.robust_error = Some(std::f64::consts::FRAC_1_PI);
    let rp = d.join("r.json");
    write_report(&rep, &rp).unwrap();
    if read_report(&rp).ok().as_ref() != Some(&rep) {
        problems.push("report round trip");
    }

    write_idx_labels(&d.join("l3.idx"), &[0, 1]).unwrap();
    if !matches!(load_idx(&ip, &d.join("l3.idx")), Err(Error::IdxCountMismatch { .. })) {
        problems.push("count mismatch error");
    }
    if !matches!(read_idx_images(&lp), Err(Error::IdxMagic { .. })) {
        problems.push("magic error");
    }
    let bytes = std::fs::read(&ip).unwrap();
    std::fs::write(d.join("cut.idx"), &bytes[..bytes.len() - 3]).unwrap();
    if !matches!(read_idx_images(&d.join("cut.idx")), Err(Error::IdxTruncated { .. })) {
        problems.push("truncation error");
    }
    let text = std::fs::read_to_string(&rp).unwrap();
    std::fs::write(&rp, text.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
    if !matches!(read_report(&rp), Err(Error::SchemaMismatch(_))) {
        problems.push("schema mismatch error");
    }
    std::fs::write(&rp, "{\"schema_version\": 1, \"clean_error\": ").unwrap();
    if !matches!(read_report(&rp), Err(Error::Report { .. })) {
        problems.push("malformed report error");
    }
    check(problems.is_empty(), if problems.is_empty() { "IDX, dataset and report round trips exact; 5 malformed inputs rejected with distinct errors".into() } else { format!("failed: {problems:?}") })
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("metric-engine parity", Duration::from_secs(1), metric_parity),
        ("gradient correctness", Duration::from_secs(30), gradient_correctness),
        ("attack budget fuzz", Duration::from_secs(60), budget_fuzz),
        ("FGSM optimality oracle", Duration::from_secs(60), fgsm_oracle),
        ("reduction identities", Duration::from_secs(30), reduction_identities),
        ("label-augmentation algebra", Duration::from_secs(10), labelaug_algebra),
        ("toy directional reproduction", Duration::from_secs(15 * 60), toy_reproduction),
        ("corruption metric identities", Duration::from_secs(5 * 60), corruption_identities),
        ("end-to-end determinism", Duration::from_secs(10 * 60), end_to_end_determinism),
        ("IDX and report round trips", Duration::from_secs(5), round_trips),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(d) => (false, d),
        };
        println!("[{}] {:>2}. {name} ({:.2?}): {detail}", if pass { "PASS" } else { "FAIL" }, i + 1, elapsed);
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

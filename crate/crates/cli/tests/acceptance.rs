//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p noisec-cli --test acceptance`. The desk experiment
//! trains every model from scratch twice, so a full run takes several minutes.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;
#[path = "../../core/tests/common/random_nets.rs"]
mod random_nets;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use noisec::attacks::{badnet_apply, bim, fgsm, pgd, Trigger};
use noisec::baselines::jsd;
use noisec::eval::{auroc, ks_neglogp_1d, ks_statistic, permute_perturbation, EvalReport, Setting};
use noisec::models::{build_classifier, ClassifierSpec};
use noisec::numcore::Tensor;
use noisec::pipeline::{fit_gmm, GmmOptions};
use oracles::{ecdf_scan, pairwise_auroc, random_distribution, scores};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let took = started.elapsed();
    (
        took < limit,
        format!("{:.1}s of {}s", took.as_secs_f64(), limit.as_secs()),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let worst = (0..120)
        .map(random_nets::check_network)
        .fold(0.0f32, f32::max);
    let (fast, time) = within(Duration::from_secs(60), start);
    Outcome::new(
        worst < random_nets::TOLERANCE && fast,
        format!("120 networks, worst relative error {worst:.2e}, {time}"),
    )
}

fn random_image(rng: &mut ChaCha8Rng, shape: [usize; 3], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // a share of saturated pixels exercises the box constraint
            match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(lo..hi),
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn attack_norms() -> Outcome {
    let start = Instant::now();
    let shape = [3, 16, 16];
    let model = build_classifier(ClassifierSpec::new(shape, 4, 32), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for i in 0..1000u64 {
        let x = random_image(&mut rng, shape, 0.0, 1.0);
        let label = rng.gen_range(0..4);
        let eps: f32 = rng.gen_range(0.001..0.3);
        let alpha = eps / 4.0;
        let adv = match i % 3 {
            0 => fgsm(&model, &x, label, eps),
            1 => bim(&model, &x, label, eps, alpha, 5),
            _ => pgd(&model, &x, label, eps, alpha, 5, true, i),
        }
        .unwrap();
        let ok = adv
            .data()
            .iter()
            .zip(x.data())
            .all(|(&a, &v)| (a - v).abs() <= eps && (0.0..=1.0).contains(&a));
        violations += usize::from(!ok);
    }

    // 3x32x32 inputs kept away from the box edges, so no coordinate is clipped
    let wide = [3, 32, 32];
    let model = build_classifier(ClassifierSpec::new(wide, 10, 64), 4).unwrap();
    let mut worst_gap = 0.0f64;
    for _ in 0..5 {
        let data = (0..3072).map(|_| rng.gen_range(0.1f32..0.9)).collect();
        let x = Tensor::new(wide.to_vec(), data).unwrap();
        let adv = fgsm(&model, &x, rng.gen_range(0..10), 0.005).unwrap();
        let l2 = adv
            .data()
            .iter()
            .zip(x.data())
            .map(|(&a, &v)| ((a - v) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_gap = worst_gap.max((l2 - 0.277).abs());
    }
    let (fast, time) = within(Duration::from_secs(120), start);
    Outcome::new(
        violations == 0 && worst_gap <= 1e-3 && fast,
        format!(
            "{violations} of 1000 samples violate the budget or box, FGSM eps 0.005 L2 within {worst_gap:.2e} of 0.277, {time}"
        ),
    )
}

fn backdoor(report: &EvalReport, desk_time: Duration) -> Outcome {
    let shape = [3, 16, 16];
    let trigger = Trigger::yellow_square(shape, 2).unwrap();
    let black = Tensor::zeros(&shape);
    let stamped = badnet_apply(&black, &trigger).unwrap();
    let l2 = stamped
        .data()
        .iter()
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let stamp_ok = l2 == 8f64.sqrt();
    let Some(b) = &report.models.backdoor else {
        return Outcome::new(false, "the desk report has no backdoored model");
    };
    let drop = b.twin_clean_accuracy - b.clean_accuracy;
    Outcome::new(
        stamp_ok && b.triggered_accuracy <= 0.15 && drop <= 0.05 && desk_time.as_secs() < 600,
        format!(
            "stamp L2 {l2:.6}, triggered accuracy {:.3}, clean accuracy {:.3} vs twin {:.3} (drop {:+.3}), desk run {:.0}s",
            b.triggered_accuracy,
            b.clean_accuracy,
            b.twin_clean_accuracy,
            drop,
            desk_time.as_secs_f64()
        ),
    )
}

fn auroc_of(report: &EvalReport, setting: Setting, attack: &str, detector: &str) -> Option<f64> {
    report
        .results
        .iter()
        .find(|r| r.setting == setting && r.attack == attack)?
        .detectors
        .iter()
        .find(|d| d.detector == detector)
        .map(|d| d.auroc)
}

fn matched_norms(report: &EvalReport) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for trial in 0..10_000u64 {
        let n = rng.gen_range(1..800);
        let eta = Tensor::from_vec((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect());
        let perm = permute_perturbation(&eta, trial);
        let mut a: Vec<u32> = eta.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = perm.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        mismatches += usize::from(a != b);
    }
    let l1: Vec<(String, f64)> = report
        .results
        .iter()
        .filter_map(|r| {
            let v = r
                .detectors
                .iter()
                .find(|d| d.detector == "magnet_l1")?
                .auroc;
            Some((format!("{}/{}", r.setting.name(), r.attack), v))
        })
        .collect();
    let off: Vec<&(String, f64)> = l1.iter().filter(|(_, v)| (v - 0.5).abs() > 0.07).collect();
    let range = l1
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    Outcome::new(
        mismatches == 0 && !l1.is_empty() && off.is_empty(),
        format!(
            "{mismatches} multiset mismatches in 10000 trials, MagNet(L1) AUROC in [{:.3}, {:.3}] over {} cells{}",
            range.0,
            range.1,
            l1.len(),
            if off.is_empty() {
                String::new()
            } else {
                format!(", outside 0.50 +- 0.07: {off:?}")
            }
        ),
    )
}

fn detector_ordering(report: &EvalReport, desk_time: Duration) -> Outcome {
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    let cases = [
        (
            Setting::WhiteBox,
            &["fgsm", "bim", "pgd", "uap", "badnet"][..],
            0.90,
            0.15,
        ),
        (Setting::BlackBox, &["fgsm", "bim", "pgd"][..], 0.75, 0.10),
    ];
    for (setting, attacks, floor, margin) in cases {
        for &attack in attacks {
            let get = |d| auroc_of(report, setting, attack, d);
            let (Some(gmm), Some(l1), Some(js)) = (get("gmm"), get("magnet_l1"), get("magnet_jsd"))
            else {
                failures.push(format!("{}/{attack} missing", setting.name()));
                continue;
            };
            let cell = format!(
                "{}/{attack} gmm {gmm:.3} l1 {l1:.3} jsd {js:.3}",
                setting.name()
            );
            if gmm < floor || gmm - l1 < margin || gmm - js < margin {
                failures.push(cell.clone());
            }
            cells.push(cell);
        }
    }
    let fast = desk_time < Duration::from_secs(900);
    let time = format!("{:.0}s of 900s", desk_time.as_secs_f64());
    let detail = if failures.is_empty() {
        format!(
            "{} cells meet floor and margin, desk run {time}",
            cells.len()
        )
    } else {
        format!(
            "{} of {} cells short of floor or margin: {}; desk run {time}",
            failures.len(),
            cells.len(),
            failures.join("; ")
        )
    };
    Outcome::new(failures.is_empty() && fast, detail)
}

fn calibration(report: &EvalReport) -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for row in &report.calibration {
        let n = row.calibration_scores.len();
        let above = row
            .calibration_scores
            .iter()
            .filter(|&&s| s > row.theta)
            .count();
        let fpr = above as f64 / n.max(1) as f64;
        worst = worst.max(fpr);
        if n == 0 || above * 100 > n || fpr != row.calibration_fpr {
            bad.push(format!("{}/{}", row.model, row.detector));
        }
    }
    Outcome::new(
        bad.is_empty() && !report.calibration.is_empty(),
        format!(
            "{} thresholds, worst recounted FPR {:.4}{}",
            report.calibration.len(),
            worst,
            if bad.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", bad.join(", "))
            }
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut auroc_bad = 0;
    for i in 0..1000 {
        let (nb, nm) = (rng.gen_range(1..80), rng.gen_range(1..80));
        let ben = scores(&mut rng, nb, i % 2 == 0);
        let mal = scores(&mut rng, nm, i % 3 == 0);
        auroc_bad += usize::from(auroc(&ben, &mal).unwrap() != pairwise_auroc(&ben, &mal));
    }
    let mut ks_bad = 0;
    for i in 0..1000 {
        let (na, nb) = (rng.gen_range(2..80), rng.gen_range(2..80));
        let a = scores(&mut rng, na, i % 2 == 0);
        let b = scores(&mut rng, nb, i % 2 == 0);
        ks_bad += usize::from(ks_statistic(&a, &b).unwrap() != ecdf_scan(&a, &b));
        ks_bad += usize::from(ks_neglogp_1d(&a, &a).unwrap() != 0.0);
    }
    let mut jsd_bad = 0;
    for _ in 0..10_000 {
        let k = rng.gen_range(2..12);
        let p = random_distribution(&mut rng, k);
        let q = random_distribution(&mut rng, k);
        let d = jsd(&p, &q);
        jsd_bad += usize::from(!(0.0..=std::f64::consts::LN_2).contains(&d));
    }
    Outcome::new(
        auroc_bad == 0 && ks_bad == 0 && jsd_bad == 0,
        format!(
            "AUROC mismatches {auroc_bad}/1000, KS mismatches {ks_bad}/2000, JSD out of bounds {jsd_bad}/10000"
        ),
    )
}

fn em_sanity() -> Outcome {
    let mut decreases = 0;
    let mut floored = 0;
    let mut failed = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dim = rng.gen_range(2..10);
        let clusters = rng.gen_range(1..6);
        let mut data = Vec::new();
        for c in 0..clusters {
            let spread = Normal::new(0.0, rng.gen_range(0.1..2.0)).unwrap();
            let centre: Vec<f64> = (0..dim)
                .map(|_| rng.gen_range(-5.0..5.0) * c as f64)
                .collect();
            for _ in 0..rng.gen_range(30..120) {
                data.push(
                    centre
                        .iter()
                        .map(|m| m + spread.sample(&mut rng))
                        .collect::<Vec<_>>(),
                );
            }
        }
        let opts = GmmOptions {
            seed,
            ..GmmOptions::default()
        };
        let Ok(fit) = fit_gmm(&data, &opts) else {
            failed += 1;
            continue;
        };
        decreases += fit
            .log_likelihood
            .windows(2)
            .filter(|w| w[1] < w[0])
            .count();
        floored += fit
            .model
            .variances
            .iter()
            .flatten()
            .filter(|&&v| v < opts.variance_floor)
            .count();
    }
    Outcome::new(
        decreases == 0 && floored == 0 && failed == 0,
        format!("50 fits: {failed} failed, {decreases} likelihood decreases, {floored} variances below the floor"),
    )
}

fn feature_separation(report: &EvalReport) -> Outcome {
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for r in report
        .results
        .iter()
        .filter(|r| r.setting == Setting::WhiteBox)
    {
        let ratio = r.ks_malicious_mean / r.ks_benign_mean;
        let cell = format!(
            "{} {:.1}/{:.1}={ratio:.2}",
            r.attack, r.ks_malicious_mean, r.ks_benign_mean
        );
        if !(ratio >= 5.0) {
            failures.push(cell.clone());
        }
        cells.push(cell);
    }
    Outcome::new(
        failures.is_empty() && !cells.is_empty(),
        format!(
            "mean -log p malicious/benign: {}{}",
            cells.join(", "),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; below 5: {}", failures.len())
            }
        ),
    )
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let mut differing = Vec::new();
    for name in ["report.json", "report.csv", "roc.csv"] {
        let a = std::fs::read(first.join("report").join(name));
        let b = std::fs::read(second.join("report").join(name));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(name),
        }
    }
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            "report.json, report.csv and roc.csv identical across two runs".to_string()
        } else {
            format!("differing or missing: {}", differing.join(", "))
        },
    )
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

/// Runs `noisec eval` on the desk config into `out`; returns the elapsed time.
fn run_eval(out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_noisec"))
        .arg("eval")
        .arg("--config")
        .arg(desk_config())
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("noisec eval exited with {status}"));
    }
    Ok(start.elapsed())
}

fn load_report(out: &Path) -> Result<EvalReport, String> {
    let text =
        std::fs::read_to_string(out.join("report/report.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let mut outcomes: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient correctness", gradients()),
        (2, "attack norm contracts", attack_norms()),
    ];

    let dir = tempfile::tempdir().expect("temporary directory");
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    let desk = run_eval(&first).and_then(|t| load_report(&first).map(|r| (r, t)));
    match &desk {
        Ok((report, took)) => {
            outcomes.push((3, "backdoor stamp and poisoning", backdoor(report, *took)));
            outcomes.push((4, "matched-norm protocol", matched_norms(report)));
            outcomes.push((5, "detector ordering", detector_ordering(report, *took)));
            outcomes.push((6, "FPR calibration", calibration(report)));
        }
        Err(e) => {
            for (id, name) in [
                (3, "backdoor stamp and poisoning"),
                (4, "matched-norm protocol"),
                (5, "detector ordering"),
                (6, "FPR calibration"),
            ] {
                outcomes.push((
                    id,
                    name,
                    Outcome::new(false, format!("desk run failed: {e}")),
                ));
            }
        }
    }
    outcomes.push((7, "metric oracles", metric_oracles()));
    outcomes.push((8, "EM sanity", em_sanity()));
    match &desk {
        Ok((report, _)) => {
            outcomes.push((9, "feature separation", feature_separation(report)));
        }
        Err(e) => outcomes.push((
            9,
            "feature separation",
            Outcome::new(false, format!("desk run failed: {e}")),
        )),
    }
    let repeat = match run_eval(&second) {
        Ok(_) => determinism(&first, &second),
        Err(e) => Outcome::new(false, format!("second run failed: {e}")),
    };
    outcomes.push((10, "end-to-end determinism", repeat));

    let mut failed = 0;
    for (id, name, o) in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!o.passed);
        println!("{verdict} criterion {id:>2} {name}: {}", o.detail);
    }
    println!(
        "{} of {} criteria passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

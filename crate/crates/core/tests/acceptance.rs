//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dip_edl::config::RunConfig;
use dip_edl::metrics::MetricsReport;
use dip_edl::pipeline::{self, ablation_label, generate_splits, run_ablation};
use dip_edl::verify::{self, CheckResult};
use dip_edl::RandomSeed;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn from_check(r: CheckResult) -> Outcome {
    let detail = r.line();
    outcome(r.passed, detail)
}

fn seed() -> RandomSeed {
    RandomSeed(0)
}

fn row(reports: &[MetricsReport], toggles: (bool, bool, bool)) -> &MetricsReport {
    let label = ablation_label(toggles);
    reports
        .iter()
        .find(|r| r.model == label)
        .expect("every toggle row present")
}

fn exact_identities() -> dip_edl::Result<Outcome> {
    let config = RunConfig::load(None, &["use_nn=false".into(), "classes=10".into()])?;
    let splits = generate_splits(&config)?;
    let reports = run_ablation(&config, None)?;
    let r = row(&reports, (true, true, false));
    let labels = splits.test_id.require_labels("test")?;
    let class0 = labels.iter().filter(|&&y| y == 0).count() as f64 / labels.len() as f64;
    let passed =
        (r.brier_id - 0.9).abs() <= 1e-12 && r.brier_ood.abs() <= 1e-12 && r.accuracy == class0;
    Ok(outcome(
        passed,
        format!(
            "brier_id={:.15} brier_ood={:.3e} accuracy={} class0_frequency={}",
            r.brier_id, r.brier_ood, r.accuracy, class0
        ),
    ))
}

fn ablation_pattern() -> dip_edl::Result<Outcome> {
    let config = RunConfig::load(None, &[])?;
    let k = config.classes as f64;
    let reports = run_ablation(&config, None)?;
    let full = row(&reports, (true, true, true));
    let no_de = [
        (true, false, true),
        (true, false, false),
        (false, false, true),
    ];
    let no_nn = [
        (true, true, false),
        (true, false, false),
        (false, true, false),
    ];
    let no_n = row(&reports, (false, true, true));
    let a = no_de
        .iter()
        .all(|&t| (0.45..=0.55).contains(&row(&reports, t).auroc));
    let b = no_nn
        .iter()
        .all(|&t| (row(&reports, t).accuracy - 1.0 / k).abs() <= 0.03);
    let c = (no_n.auroc - full.auroc).abs() <= 0.01 && no_n.brier_id - full.brier_id >= 0.2;
    let d = full.accuracy >= 0.95 && full.auroc >= 0.95 && full.brier_ood <= 0.05;
    let detail = reports
        .iter()
        .map(|r| {
            format!(
                "[{} acc={:.4} bs_id={:.4} bs_ood={:.4} auroc={:.4}]",
                r.model, r.accuracy, r.brier_id, r.brier_ood, r.auroc
            )
        })
        .collect::<Vec<_>>()
        .join(" ");
    Ok(outcome(
        a && b && c && d,
        format!("a={a} b={b} c={c} d={d} {detail}"),
    ))
}

fn monte_carlo_three_se() -> dip_edl::Result<Outcome> {
    let r = verify::monte_carlo_agreement(seed().derive(3), 20, 1_000_000)?;
    let z = |k| r.get(k).expect("measured");
    let passed = z("worst_kl_z") <= 3.0
        && z("worst_mean_z") <= 3.0
        && z("worst_variance_z") <= 3.0
        && z("min_kl") >= 0.0;
    Ok(outcome(passed, r.line()))
}

fn determinism() -> dip_edl::Result<Outcome> {
    let overrides: Vec<String> = [
        "classes=3",
        "n_train=300",
        "n_test=150",
        "n_ood=100",
        "epochs=15",
        "density=gmm",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let config = RunConfig::load(None, &overrides)?;
    let dirs = [
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    ];
    for d in &dirs {
        pipeline::cmd_train(&config, d.path())?;
        let p = d.path();
        pipeline::cmd_eval(
            &config,
            p,
            &p.join(pipeline::TEST_ID_FILE),
            &p.join(pipeline::TEST_OOD_FILE),
            p,
        )?;
    }
    let mut names: Vec<String> = fs::read_dir(dirs[0].path())
        .expect("listing")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| !same_bytes(&dirs[0].path().join(n), &dirs[1].path().join(n)))
        .collect();
    Ok(outcome(
        differing.is_empty(),
        format!("files={} differing={differing:?}", names.len()),
    ))
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

type Criterion = (
    u32,
    &'static str,
    Option<Duration>,
    fn() -> dip_edl::Result<Outcome>,
);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            1,
            "exact identities with the class factor off",
            Some(Duration::from_secs(5)),
            exact_identities,
        ),
        (
            2,
            "ablation pattern",
            Some(Duration::from_secs(120)),
            ablation_pattern,
        ),
        (
            3,
            "tempered KL equals scaled EDL up to a constant",
            None,
            || {
                Ok(from_check(verify::tempered_equivalence(
                    seed().derive(1),
                    24,
                )?))
            },
        ),
        (4, "pointwise oracle recovery", None, || {
            Ok(from_check(verify::oracle_recovery(
                seed().derive(2),
                100_000,
            )?))
        }),
        (
            5,
            "asymptotic consistency",
            Some(Duration::from_secs(30)),
            || Ok(from_check(verify::asymptotic_consistency()?)),
        ),
        (
            6,
            "Dirichlet numerics within 3 standard errors",
            None,
            monte_carlo_three_se,
        ),
        (7, "gradient integrity", None, || {
            Ok(from_check(verify::gradient_integrity(
                seed().derive(4),
                10,
            )?))
        }),
        (8, "metric oracles", None, || {
            Ok(from_check(verify::metric_oracles(seed().derive(5))?))
        }),
        (9, "determinism of train and eval", None, determinism),
    ];
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let passed = passed && in_time;
        if !passed {
            failures += 1;
        }
        let budget_note = budget
            .map(|b| format!(" budget={}s", b.as_secs()))
            .unwrap_or_default();
        println!(
            "criterion {id} {}: {name} ({:.2}s{budget_note}) {detail}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

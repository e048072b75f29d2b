//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! `MCLPD_SKIP_E2E=1` skips the desk-scale transfer run. The process exits
//! non-zero on any failure only when `MCLPD_ACCEPTANCE_STRICT=1`, so the
//! report is always produced in full.

mod common;

use std::time::{Duration, Instant};

use common::{median, timed, Check};
use mclpd::config::RunConfig;
use mclpd::pipeline::{finetune, pretrain};
use mclpd::synth::{generate, SiteSpec, SynthSpec};

const SEEDS: [u64; 3] = [0, 1, 2];
/// (label fraction, F1 target, fine-tuning epochs). Epochs scale inversely
/// with the label budget so both fractions take about 240 optimizer steps.
const LABEL_FRACTIONS: [(f64, f64, usize); 2] = [(0.05, 0.90, 60), (0.01, 0.80, 240)];

/// Desk-scale settings: three contrastive passes over siteA, then a
/// fine-tune with every unit unfrozen from the first epoch at a flat rate.
pub fn desk_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.pretrain.epochs = 3;
    cfg.finetune.stage_epochs = Some(1);
    cfg.finetune.layer_decay = 1.0;
    cfg
}

/// 2,000 epochs per site. siteA uses 40 subjects per class with 25 epochs
/// each. siteB uses one epoch per subject, so a 1% label budget still spans
/// ten subjects per class.
fn site(name: &str, seed: u64, offset: u32) -> SynthSpec {
    let (subjects, epochs) = if name == "siteA" { (40, 25) } else { (1000, 1) };
    SynthSpec {
        n_subjects_per_class: subjects,
        epochs_per_subject: epochs,
        site: SiteSpec::preset(name).expect("preset"),
        subject_offset: offset,
        seed,
        ..SynthSpec::default()
    }
}

fn end_to_end() -> Vec<Check> {
    let start = Instant::now();
    let mut f1: Vec<Vec<f64>> = vec![Vec::new(); LABEL_FRACTIONS.len()];
    for &seed in &SEEDS {
        let cfg = desk_config(seed);
        // Each site holds about 1.2 GB of samples; keep only one alive at a time.
        let source = generate(&site("siteA", 100 + seed, 0)).expect("siteA");
        let pre = pretrain(&source, &cfg).expect("pretraining");
        drop(source);
        let target = generate(&site("siteB", 200 + seed, 1000)).expect("siteB");
        for (i, &(lf, _, epochs)) in LABEL_FRACTIONS.iter().enumerate() {
            let mut c = cfg.clone();
            c.finetune.label_fraction = lf;
            c.finetune.epochs = epochs;
            let out = finetune(&pre.params, &target, &c).expect("fine-tuning");
            println!(
                "  seed {seed} labels {:>2}%: F1 {:.4} acc {:.4} ({} train epochs, {:.0} s elapsed)",
                lf * 100.0,
                out.test_metrics.f1,
                out.test_metrics.accuracy,
                out.split.train.len(),
                start.elapsed().as_secs_f64()
            );
            f1[i].push(out.test_metrics.f1);
        }
    }
    let took = start.elapsed();
    let mut checks: Vec<Check> = LABEL_FRACTIONS
        .iter()
        .zip(&f1)
        .map(|(&(lf, target, _), scores)| {
            let m = median(scores);
            Check::new(
                format!("transfer siteA -> siteB, {}% labels, median F1 over 3 seeds", lf * 100.0),
                m >= target,
                format!("median {m:.4} (target {target:.2}), seeds {scores:.4?}"),
            )
        })
        .collect();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    checks.push(Check::new(
        "transfer runtime",
        took < Duration::from_secs(15 * 60),
        format!("{:.0} s on {cores} core(s) (budget 900 s on 4 cores)", took.as_secs_f64()),
    ));
    checks
}

fn main() {
    let mut all = Vec::new();
    let mut section = |title: &str, checks: Vec<Check>| {
        println!("[{title}]");
        for c in &checks {
            println!("{}", c.line());
        }
        all.extend(checks);
    };
    section("formulas", timed("formula suite", Duration::from_secs(5), common::formula_suite));
    section("gradients", timed("gradient suite", Duration::from_secs(30), common::gradient_suite));
    section("augmentation", common::augmentation_suite());
    section("sampler", common::sampler_suite());
    section("interpretability", timed("interpretability suite", Duration::from_secs(120), common::interpret_suite));
    section("fine-tuning mechanics", common::mechanics_suite());
    section("io", common::io_suite());
    if std::env::var_os("MCLPD_SKIP_E2E").is_some() {
        println!("[end-to-end]\nSKIP desk-scale transfer (MCLPD_SKIP_E2E set)");
    } else {
        println!("[end-to-end]");
        let checks = end_to_end();
        for c in &checks {
            println!("{}", c.line());
        }
        all.extend(checks);
    }
    let failed = all.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", all.len() - failed);
    if failed > 0 && std::env::var("MCLPD_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

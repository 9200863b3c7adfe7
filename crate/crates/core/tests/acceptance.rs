//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rebalance::dataset::{split, AnnotationLedger, EmbeddingDataset, SplitSpec};
use rebalance::evalreport::{evaluate, DEFAULT_ABLATION_FRACTIONS};
use rebalance::mathcore::{
    ce_gradient, cross_entropy, kl_divergence, linear_forward, total_variation, LinearHead,
    OptimConfig, ProbDist,
};
use rebalance::samplers::{
    ablation_base_size, ablation_subset, balanced_batch_stream, AblationSpec, BalanceMode,
};
use rebalance::selfselect::{
    run_self, select_top_n, Divergence, SelfConfig, SelfVariant, DEFAULT_ES_FRACTIONS,
};
use rebalance::synthlab::{
    generate_synthetic, sample_instance, tvd_gap_direct, tvd_gap_formula, verify_theorem,
    SyntheticSpec,
};
use rebalance::trainer::{cb_last_layer_retrain, dfr, free_lunch, retrain, train_head};

// Criterion 1.
const THEOREM_TRIALS: usize = 1000;
const THEOREM_SEED: u64 = 0;
const THEOREM_TOLERANCE: f64 = 1e-10;
const THEOREM_BUDGET: Duration = Duration::from_secs(1);

// Criterion 2.
const SELECTION_TRIALS: usize = 500;
const SELECTION_MAX_LEN: usize = 12;
const SELECTION_SEED: u64 = 2;
const SELECTION_BUDGET: Duration = Duration::from_secs(10);

// Criterion 3.
const GRADIENT_TRIALS: usize = 100;
const GRADIENT_SEED: u64 = 3;
const GRADIENT_STEP: f64 = 1e-5;
const GRADIENT_TOLERANCE: f64 = 1e-6;

// Criterion 4.
const SAMPLER_MARGINALS: [usize; 2] = [768, 232];
const SAMPLER_DRAWS: usize = 100_000;
const SAMPLER_BATCH: usize = 100;
const SAMPLER_SEED: u64 = 4;
const SAMPLER_TOLERANCE: f64 = 0.005;

// Criterion 5.
const ABLATION_GROUP_SIZES: [usize; 4] = [400, 380, 260, 92];
const ABLATION_WORST: usize = 3;
const ABLATION_FRACTION: f64 = 0.25;
const ABLATION_EXPECTED: [usize; 4] = [92, 92, 161, 23];

// Criterion 6: reference configuration and frozen thresholds.
const REFERENCE_SEED: u64 = 0;
const REFERENCE_CLASS_PRIOR: f64 = 0.75;
const REFERENCE_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];
const REFERENCE_LR: f64 = 0.1;
const REFERENCE_WEIGHT_DECAY: f64 = 0.03;
const REFERENCE_STEPS: usize = 3000;
const REFERENCE_FINETUNE_LR: f64 = 0.01;
const REFERENCE_FINETUNE_STEPS: usize = 250;
const REFERENCE_ES_FRACTION: f64 = 0.1;
const REFERENCE_SELECTION_SIZE: usize = 100;
const REFERENCE_HOLDOUT_FRACTION: f64 = 0.05;
const ERM_GAP_THRESHOLD: f64 = 0.25;
const DFR_GAIN_THRESHOLD: f64 = 0.20;
const UPSAMPLING_FACTOR: f64 = 3.0;
const SYNTHETIC_BUDGET: Duration = Duration::from_secs(60);

// Criterion 7.
const DIVERGENCE_PAIRS: usize = 10_000;
const DIVERGENCE_SEED: u64 = 7;

struct Outcome {
    label: String,
    pass: bool,
    detail: String,
}

fn outcome(label: &str, pass: bool, detail: String) -> Outcome {
    Outcome {
        label: label.to_string(),
        pass,
        detail,
    }
}

fn theorem_identity() -> Vec<Outcome> {
    let start = Instant::now();
    let mut max_dev = 0.0f64;
    let mut min_gap = f64::INFINITY;
    let mut reversed = 0usize;
    let mut failure = None;
    for t in 0..THEOREM_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(THEOREM_SEED);
        rng.set_stream(t as u64);
        let inst = sample_instance(&mut rng);
        if inst.beta_reg > inst.beta_erm {
            reversed += 1;
        }
        match (tvd_gap_formula(&inst), tvd_gap_direct(&inst)) {
            (Ok(f), Ok(d)) => {
                max_dev = max_dev.max((f - d).abs());
                min_gap = min_gap.min(d);
            }
            (Err(e), _) | (_, Err(e)) => failure = Some(e.to_string()),
        }
    }
    let report = verify_theorem(THEOREM_TRIALS, THEOREM_SEED);
    let elapsed = start.elapsed();
    let pass = failure.is_none()
        && report.is_ok()
        && max_dev < THEOREM_TOLERANCE
        && min_gap > 0.0
        && reversed > 0
        && reversed < THEOREM_TRIALS
        && elapsed < THEOREM_BUDGET;
    let detail = match failure {
        Some(e) => format!("instance error: {e}"),
        None => format!(
            "max deviation {max_dev:.3e}, min gap {min_gap:.3e}, {reversed} instances with beta_reg > beta_erm, {elapsed:.2?}"
        ),
    };
    vec![outcome("criterion 1: gap identity", pass, detail)]
}

/// Exhaustive maximizer of the subset cost sum; ties go to the
/// lexicographically smallest sorted index set.
fn brute_force(costs: &[f64], n: usize) -> Vec<usize> {
    let len = costs.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << len) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let set: Vec<usize> = (0..len).filter(|i| mask & (1 << i) != 0).collect();
        let sum: f64 = set.iter().map(|&i| costs[i]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => sum > *s || (sum == *s && set < *b),
        };
        if better {
            best = Some((sum, set));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

fn selection_oracle() -> Vec<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SELECTION_SEED);
    let mut checked = 0usize;
    let mut mismatch = None;
    for trial in 0..SELECTION_TRIALS {
        let len = rng.random_range(1..=SELECTION_MAX_LEN);
        // Integer costs keep every subset sum exact; the narrow range forces ties.
        let range = if trial % 2 == 0 { 4 } else { 1000 };
        let costs: Vec<f64> = (0..len)
            .map(|_| rng.random_range(-range..=range) as f64)
            .collect();
        for n in 0..=len {
            let mut got = select_top_n(&costs, n).expect("valid selection").indices;
            got.sort_unstable();
            let want = brute_force(&costs, n);
            checked += 1;
            if got != want && mismatch.is_none() {
                mismatch = Some(format!(
                    "costs {costs:?}, n {n}: got {got:?}, want {want:?}"
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatch.is_none() && elapsed < SELECTION_BUDGET;
    let detail =
        mismatch.unwrap_or_else(|| format!("{checked} (costs, n) cases agree, {elapsed:.2?}"));
    vec![outcome("criterion 2: selection oracle", pass, detail)]
}

fn loss(head: &LinearHead, x: &[f64], y: usize) -> f64 {
    cross_entropy(&linear_forward(head, x).unwrap(), y).unwrap()
}

fn gradient_check() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(GRADIENT_SEED);
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_TRIALS {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=16);
        let weights: Vec<f64> = (0..k * d)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias: Vec<f64> = (0..k)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y = rng.random_range(0..k);
        let head = LinearHead::from_parts(k, d, weights.clone(), bias.clone()).unwrap();
        let grad = ce_gradient(&head, &x, y).unwrap();
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        let params: Vec<f64> = weights.iter().chain(&bias).copied().collect();
        let numeric: Vec<f64> = (0..params.len())
            .map(|j| {
                let shifted = |delta: f64| {
                    let mut p = params.clone();
                    p[j] += delta;
                    let (w, b) = p.split_at(k * d);
                    let h = LinearHead::from_parts(k, d, w.to_vec(), b.to_vec()).unwrap();
                    loss(&h, &x, y)
                };
                (shifted(GRADIENT_STEP) - shifted(-GRADIENT_STEP)) / (2.0 * GRADIENT_STEP)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    vec![outcome(
        "criterion 3: gradient check",
        worst < GRADIENT_TOLERANCE,
        format!("worst relative error {worst:.3e} over {GRADIENT_TRIALS} instances"),
    )]
}

fn sampler_balance() -> Vec<Outcome> {
    let labels: Vec<u32> = SAMPLER_MARGINALS
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    let features: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    let ds = EmbeddingDataset::new(1, features, labels, None, 2, 0).unwrap();
    let stream =
        balanced_batch_stream(&ds, BalanceMode::ClassSampling, SAMPLER_BATCH, SAMPLER_SEED)
            .unwrap();
    let mut counts = [0usize; 2];
    for i in stream.flatten().take(SAMPLER_DRAWS) {
        counts[ds.class(i)] += 1;
    }
    let freqs = counts.map(|c| c as f64 / SAMPLER_DRAWS as f64);
    let pass = freqs.iter().all(|f| (f - 0.5).abs() <= SAMPLER_TOLERANCE);
    vec![outcome(
        "criterion 4: class-sampling balance",
        pass,
        format!(
            "class frequencies {:.4} / {:.4} over {SAMPLER_DRAWS} draws",
            freqs[0], freqs[1]
        ),
    )]
}

fn grouped_dataset(sizes: &[usize]) -> EmbeddingDataset {
    let mut classes = Vec::new();
    let mut spurious = Vec::new();
    for (g, &n) in sizes.iter().enumerate() {
        classes.extend(std::iter::repeat_n((g / 2) as u32, n));
        spurious.extend(std::iter::repeat_n((g % 2) as u32, n));
    }
    let features = (0..classes.len()).map(|i| i as f64).collect();
    EmbeddingDataset::new(1, features, classes, Some(spurious), 2, 2).unwrap()
}

fn ablation_exactness() -> Vec<Outcome> {
    let ds = grouped_dataset(&ABLATION_GROUP_SIZES);
    let base = ablation_base_size(&ABLATION_GROUP_SIZES, &[ABLATION_WORST]);
    let counts_at = |fraction: f64, seed: u64| {
        let rows = ablation_subset(
            &ds,
            &AblationSpec::new(vec![ABLATION_WORST], fraction, seed),
        )
        .unwrap();
        let mut counts = [0usize; 4];
        for i in rows {
            counts[ds.group(i).unwrap()] += 1;
        }
        counts
    };
    let counts = counts_at(ABLATION_FRACTION, 0);
    let mut totals = BTreeMap::new();
    for seed in 0..5 {
        for &f in std::iter::once(&0.0).chain(DEFAULT_ABLATION_FRACTIONS.iter()) {
            totals.insert(counts_at(f, seed).iter().sum::<usize>(), f);
        }
    }
    let pass = base == 92 && counts == ABLATION_EXPECTED && totals.len() == 1;
    vec![outcome(
        "criterion 5: ablation construction",
        pass,
        format!(
            "base {base}, counts at {ABLATION_FRACTION} {counts:?}, totals across fractions {:?}",
            totals.keys().collect::<Vec<_>>()
        ),
    )]
}

fn reference_config(steps: usize, lr: f64) -> OptimConfig {
    let mut cfg = OptimConfig::default()
        .with_steps(steps)
        .with_lr(lr)
        .with_seed(REFERENCE_SEED);
    cfg.weight_decay = REFERENCE_WEIGHT_DECAY;
    cfg
}

fn synthetic_reproduction() -> Vec<Outcome> {
    let start = Instant::now();
    let spec = SyntheticSpec {
        class_prior: REFERENCE_CLASS_PRIOR,
        seed: REFERENCE_SEED,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let parts = split(
        &ds,
        &SplitSpec::new(REFERENCE_SPLIT.to_vec(), REFERENCE_SEED).unwrap(),
    )
    .unwrap();
    let (train, heldout, test) = (&parts[0], &parts[1], &parts[2]);
    let wga = |h: &LinearHead| evaluate(h, test).unwrap().worst_group_accuracy.unwrap();

    let cfg = reference_config(REFERENCE_STEPS, REFERENCE_LR);
    let erm = train_head(
        train,
        BalanceMode::Unbalanced,
        &cfg,
        None,
        &DEFAULT_ES_FRACTIONS,
    )
    .unwrap();
    let erm_metrics = evaluate(&erm.head, test).unwrap();
    let erm_wga = erm_metrics.worst_group_accuracy.unwrap();
    let erm_avg = erm_metrics.average_accuracy;

    let mut ledger = AnnotationLedger::new(heldout.len());
    let dfr_wga = wga(&dfr(heldout, &cfg, &mut ledger).unwrap());
    let cb_wga = wga(&cb_last_layer_retrain(heldout, &cfg, &mut ledger).unwrap());
    let ub_wga = wga(&retrain(heldout, BalanceMode::Unbalanced, &cfg).unwrap());

    let mut self_ledger = AnnotationLedger::new(heldout.len());
    let selection = run_self(
        &erm,
        heldout,
        &SelfConfig {
            variant: SelfVariant::EsDisagreement {
                es_fraction: REFERENCE_ES_FRACTION,
            },
            n: REFERENCE_SELECTION_SIZE,
            divergence: Divergence::Kl,
            seed: REFERENCE_SEED,
        },
        &reference_config(REFERENCE_FINETUNE_STEPS, REFERENCE_FINETUNE_LR),
        &mut self_ledger,
    )
    .unwrap()
    .selection;
    let fraction = selection.worst_group_fraction.unwrap();
    let base_rate = selection.worst_group_base_rate.unwrap();

    let lunch = free_lunch(train, &cfg, &cfg, REFERENCE_HOLDOUT_FRACTION).unwrap();
    let lunch_erm = wga(&lunch.erm_head);
    let lunch_retrained = wga(&lunch.retrained_head);
    let elapsed = start.elapsed();
    let in_budget = elapsed < SYNTHETIC_BUDGET;

    vec![
        outcome(
            "criterion 6a: ERM worst-group gap",
            erm_wga < erm_avg - ERM_GAP_THRESHOLD,
            format!("ERM WGA {erm_wga:.3}, average {erm_avg:.3}"),
        ),
        outcome(
            "criterion 6b: DFR over ERM",
            dfr_wga >= erm_wga + DFR_GAIN_THRESHOLD,
            format!("DFR WGA {dfr_wga:.3}, ERM WGA {erm_wga:.3}"),
        ),
        outcome(
            "criterion 6c: class-balanced retraining ordering",
            ub_wga < cb_wga && cb_wga < dfr_wga,
            format!("unbalanced {ub_wga:.3} < class-balanced {cb_wga:.3} < DFR {dfr_wga:.3}"),
        ),
        outcome(
            "criterion 6d: SELF upsamples the worst group",
            fraction >= UPSAMPLING_FACTOR * base_rate,
            format!(
                "worst group {:?}: selected share {fraction:.3}, heldout base rate {base_rate:.3}",
                selection.worst_group
            ),
        ),
        outcome(
            "criterion 6e: free-lunch retraining over same-split ERM",
            lunch_retrained > lunch_erm,
            format!("retrained WGA {lunch_retrained:.3}, ERM WGA {lunch_erm:.3}"),
        ),
        outcome(
            "criterion 6 runtime",
            in_budget,
            format!("{elapsed:.2?} at n = {}, d = {}", spec.n, spec.d),
        ),
    ]
}

fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> ProbDist {
    let weights: Vec<f64> = (0..k)
        .map(|_| (2.0 * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    ProbDist::from_weights(&weights).unwrap()
}

fn divergence_properties() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(DIVERGENCE_SEED);
    let mut violation = None;
    for pair in 0..DIVERGENCE_PAIRS {
        let k = rng.random_range(2..=10);
        let p = random_dist(&mut rng, k);
        let q = random_dist(&mut rng, k);
        let kl = kl_divergence(&p, &q).unwrap();
        let tvd = total_variation(&p, &q).unwrap();
        let tvd_rev = total_variation(&q, &p).unwrap();
        let ok =
            kl >= 0.0 && (0.0..=1.0).contains(&tvd) && tvd == tvd_rev && tvd <= (kl / 2.0).sqrt();
        if !ok && violation.is_none() {
            violation = Some(format!(
                "pair {pair}: kl {kl:e}, tvd {tvd:e}, reversed tvd {tvd_rev:e}"
            ));
        }
    }
    let pass = violation.is_none();
    vec![outcome(
        "criterion 7: divergence properties",
        pass,
        violation.unwrap_or_else(|| format!("{DIVERGENCE_PAIRS} pairs satisfy every property")),
    )]
}

fn rebalance(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rebalance"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            files.insert(path.clone(), fs::read(&path).unwrap());
        }
    }
    files
}

fn cli_runs(work: &Path) -> Result<Vec<(String, bool)>, String> {
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let data = work.join("data");
    let train = s(data.join("train.gemb"));
    let heldout = s(data.join("heldout.gemb"));
    let test = s(data.join("test.gemb"));
    rebalance(&[
        "synth",
        "--n",
        "1500",
        "--d",
        "6",
        "--class-prior",
        "0.75",
        "--split",
        "0.6,0.2,0.2",
        "--seed",
        "5",
        "--out",
        &s(data.clone()),
    ])?;
    let head = s(work.join("train").join("head-seed5.ghed"));
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "synth",
            vec![
                "--n".into(),
                "300".into(),
                "--d".into(),
                "4".into(),
                "--csv".into(),
            ],
        ),
        (
            "train",
            vec![
                "--data".into(),
                train.clone(),
                "--test".into(),
                test.clone(),
                "--val".into(),
                heldout.clone(),
                "--steps".into(),
                "200".into(),
            ],
        ),
        (
            "retrain",
            vec![
                "--heldout".into(),
                heldout.clone(),
                "--test".into(),
                test.clone(),
            ],
        ),
        (
            "dfr",
            vec![
                "--heldout".into(),
                heldout.clone(),
                "--test".into(),
                test.clone(),
                "--seeds".into(),
                "1,2,3".into(),
                "--jobs".into(),
                "3".into(),
            ],
        ),
        (
            "self",
            vec![
                "--data".into(),
                train.clone(),
                "--heldout".into(),
                heldout.clone(),
                "--test".into(),
                test.clone(),
                "--n".into(),
                "100".into(),
                "--erm-lr".into(),
                "0.1".into(),
                "--erm-weight-decay".into(),
                "0.03".into(),
                "--lr".into(),
                "0.01".into(),
            ],
        ),
        (
            "free-lunch",
            vec![
                "--data".into(),
                train.clone(),
                "--test".into(),
                test.clone(),
            ],
        ),
        (
            "ablate",
            vec![
                "--data".into(),
                train.clone(),
                "--heldout".into(),
                heldout.clone(),
                "--test".into(),
                test.clone(),
                "--fractions".into(),
                "0.25,1".into(),
            ],
        ),
        (
            "eval",
            vec!["--head".into(), head, "--data".into(), test.clone()],
        ),
        (
            "verify-theorem",
            vec![
                "--trials".into(),
                "200".into(),
                "--seeds".into(),
                "7,8".into(),
            ],
        ),
    ];
    let mut results = Vec::new();
    for (name, extra) in &commands {
        let out = s(work.join(name));
        let mut args: Vec<&str> = vec![name, "--seed", "5", "--out", &out];
        args.extend(extra.iter().map(String::as_str));
        rebalance(&args)?;
        let first = snapshot(Path::new(&out));
        rebalance(&args)?;
        let second = snapshot(Path::new(&out));
        results.push((name.to_string(), !first.is_empty() && first == second));
    }
    Ok(results)
}

fn cli_determinism() -> Vec<Outcome> {
    let work = tempfile::tempdir().unwrap();
    match cli_runs(work.path()) {
        Ok(results) => {
            let pass = results.iter().all(|(_, same)| *same);
            let summary: Vec<String> = results
                .iter()
                .map(|(n, same)| format!("{n} {}", if *same { "identical" } else { "DIFFERENT" }))
                .collect();
            vec![outcome(
                "criterion 8: CLI determinism",
                pass,
                summary.join(", "),
            )]
        }
        Err(e) => vec![outcome(
            "criterion 8: CLI determinism",
            false,
            format!("run failed: {e}"),
        )],
    }
}

fn main() {
    let suites: [fn() -> Vec<Outcome>; 8] = [
        theorem_identity,
        selection_oracle,
        gradient_check,
        sampler_balance,
        ablation_exactness,
        synthetic_reproduction,
        divergence_properties,
        cli_determinism,
    ];
    let mut failed = 0;
    for suite in suites {
        for o in suite() {
            println!(
                "[{}] {}: {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.label,
                o.detail
            );
            failed += usize::from(!o.pass);
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion line(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

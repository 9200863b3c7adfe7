use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::args::*;
use crate::dataset::{
    encode_csv, encode_gemb, load_embeddings, split, AnnotationCounts, AnnotationKind,
    AnnotationLedger, EmbeddingDataset, SplitSpec,
};
use crate::error::{ensure, Error, Result};
use crate::evalreport::{
    emit_report, evaluate, model_select, round_sig6, run_wg_ablation, to_json_string,
    AblationTable, ExperimentReport, GroupMetrics, ReportFormat, SeedResult,
};
use crate::mathcore::{epochs_to_steps, LinearHead, OptimConfig};
use crate::samplers::BalanceMode;
use crate::selfselect::{
    run_self, selection_to_csv, SelfConfig, SelfVariant, DEFAULT_ES_FRACTIONS,
};
use crate::synthlab::{generate_synthetic, verify_theorem, SyntheticSpec, TheoremReport};
use crate::trainer::{
    dfr, encode_head, free_lunch, load_head, retrain, train_head, train_head_with, TrainOptions,
    TrainReport,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Retrain(a) => retrain_cmd(&a),
        Command::Dfr(a) => dfr_cmd(&a),
        Command::SelfFinetune(a) => self_cmd(&a),
        Command::FreeLunch(a) => free_lunch_cmd(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Eval(a) => eval(&a),
        Command::VerifyTheorem(a) => verify(&a),
    }
}

fn optim_config(o: &OptimArgs, seed: u64) -> Result<OptimConfig> {
    let cfg = OptimConfig {
        optimizer: o.optimizer,
        lr0: o.lr,
        schedule: o.schedule,
        weight_decay: o.weight_decay,
        total_steps: o.steps,
        batch_size: o.batch_size,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn erm_config(e: &ErmArgs, rows: usize, seed: u64) -> Result<OptimConfig> {
    let cfg = OptimConfig {
        optimizer: e.erm_optimizer,
        lr0: e.erm_lr,
        schedule: e.erm_schedule,
        weight_decay: e.erm_weight_decay,
        total_steps: e
            .erm_steps
            .unwrap_or_else(|| epochs_to_steps(rows, e.erm_batch_size, e.erm_epochs)),
        batch_size: e.erm_batch_size,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(path: &Path) -> Result<EmbeddingDataset> {
    load_embeddings(path)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn prepare(common: &CommonArgs) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(&common.out)
}

/// Resolved flag values keyed by flag name, values rendered as strings.
fn echo(command: &str, args: &impl Serialize) -> Result<BTreeMap<String, String>> {
    let value = serde_json::to_value(args).map_err(|e| Error::invalid(e.to_string()))?;
    let mut map = BTreeMap::new();
    map.insert("command".to_string(), command.to_string());
    if let Value::Object(fields) = value {
        for (k, v) in fields {
            let rendered = match v {
                Value::Null => continue,
                Value::String(s) => s,
                Value::Array(items) => items
                    .iter()
                    .map(render_scalar)
                    .collect::<Vec<_>>()
                    .join(","),
                other => render_scalar(&other),
            };
            map.insert(k.replace('_', "-"), rendered);
        }
    }
    Ok(map)
}

fn render_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn write_manifest(dir: &Path, config: &BTreeMap<String, String>) -> Result<()> {
    write(dir, "manifest.json", to_json_string(config)?)
}

/// Runs `f` once per seed on a pool of `--jobs` threads; results keep the
/// order of the seed list.
fn per_seed<T: Send>(
    common: &CommonArgs,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<(u64, T)>> {
    let seeds = common.resolved_seeds();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| f(s).map(|t| (s, t)))
            .collect::<Result<Vec<_>>>()
    })
}

fn finish(
    out: &Path,
    method: &str,
    per_seed: Vec<SeedResult>,
    config: BTreeMap<String, String>,
) -> Result<()> {
    write_manifest(out, &config)?;
    let report = ExperimentReport::new(method, per_seed, config)?;
    emit_report(&report, out.join("report.json"), ReportFormat::Json)?;
    emit_report(&report, out.join("report.csv"), ReportFormat::Csv)?;
    let wga = report
        .wga_mean
        .map(|w| format!("{}", round_sig6(w)))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{method}: wga_mean={wga} average_mean={} seeds={}",
        round_sig6(report.average_mean),
        report.seeds.len()
    );
    Ok(())
}

fn seed_result(seed: u64, metrics: GroupMetrics, annotations: AnnotationCounts) -> SeedResult {
    SeedResult {
        seed,
        metrics,
        annotations,
        extras: BTreeMap::new(),
    }
}

fn fraction_tag(f: f64) -> String {
    format!("{}", round_sig6(f))
}

fn single_seed(common: &CommonArgs, what: &str) -> Result<u64> {
    let seeds = common.resolved_seeds();
    ensure!(
        seeds.len() == 1,
        "{what} takes a single seed, got {}",
        seeds.len()
    );
    Ok(seeds[0])
}

fn synth(a: &SynthArgs) -> Result<()> {
    let seed = single_seed(&a.common, "synth")?;
    let out = prepare(&a.common)?;
    let spec = SyntheticSpec {
        n: a.n,
        d: a.d,
        minority_rate: a.minority_rate,
        core_magnitude: a.core_magnitude,
        core_noise: a.core_noise,
        spurious_magnitude: a.spurious_magnitude,
        spurious_noise: a.spurious_noise,
        junk_scale: a.junk_scale,
        class_prior: a.class_prior,
        seed,
    };
    let ds = generate_synthetic(&spec)?;
    let ext = if a.csv { "csv" } else { "gemb" };
    let encode = |d: &EmbeddingDataset| if a.csv { encode_csv(d) } else { encode_gemb(d) };
    match &a.split {
        None => write(out, &format!("synthetic.{ext}"), encode(&ds))?,
        Some(List(fractions)) => {
            ensure!(
                fractions.len() == 2 || fractions.len() == 3,
                "--split takes two or three fractions, got {}",
                fractions.len()
            );
            let parts = split(&ds, &SplitSpec::new(fractions.clone(), seed)?)?;
            for (name, part) in ["train", "heldout", "test"].iter().zip(&parts) {
                write(out, &format!("{name}.{ext}"), encode(part))?;
            }
        }
    }
    write_manifest(out, &echo("synth", a)?)
}

fn train(a: &TrainArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let ds = load(&a.data)?;
    let test = a.test.as_deref().map(load).transpose()?;
    let val = a.val.as_deref().map(load).transpose()?;
    let results = per_seed(&a.common, |seed| {
        let cfg = optim_config(&a.optim, seed)?;
        let report = train_head_with(
            &ds,
            a.balance,
            &cfg,
            &TrainOptions {
                init: None,
                checkpoints: &a.checkpoints.0,
                validation: val.as_ref(),
                eval_every: a.eval_every,
            },
        )?;
        let metrics = evaluate(&report.head, test.as_ref().unwrap_or(&ds))?;
        Ok((report, metrics))
    })?;
    let mut rows = Vec::new();
    for (seed, (report, metrics)) in results {
        write(
            out,
            &format!("head-seed{seed}.ghed"),
            encode_head(&report.head),
        )?;
        for (f, head) in report.checkpoints.iter() {
            write(
                out,
                &format!("checkpoint-seed{seed}-{}.ghed", fraction_tag(f)),
                encode_head(head),
            )?;
        }
        write(out, &format!("loss-seed{seed}.csv"), loss_csv(&report))?;
        if val.is_some() {
            write(
                out,
                &format!("validation-seed{seed}.csv"),
                validation_csv(&report),
            )?;
        }
        let annotations = AnnotationCounts {
            class: ds.len(),
            group: if a.balance.needs_spurious() {
                ds.len()
            } else {
                0
            },
        } + AnnotationCounts {
            class: 0,
            group: val.as_ref().map_or(0, |v| v.len()),
        };
        rows.push(seed_result(seed, metrics, annotations));
    }
    finish(out, "erm", rows, echo("train", a)?)
}

fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, round_sig6(*l));
    }
    s
}

fn validation_csv(report: &TrainReport) -> String {
    let mut s = String::from("step,wga,avg\n");
    for p in &report.validation_trace {
        let wga = p.metrics.worst_group_accuracy.map(round_sig6);
        let _ = writeln!(
            s,
            "{},{},{}",
            p.step,
            wga.map(|w| w.to_string()).unwrap_or_default(),
            round_sig6(p.metrics.average_accuracy)
        );
    }
    s
}

fn retrain_cmd(a: &RetrainArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let heldout = load(&a.heldout)?;
    let test = load(&a.test)?;
    if a.balance.needs_spurious() {
        heldout.require_spurious()?;
    }
    let results = per_seed(&a.common, |seed| {
        let cfg = optim_config(&a.optim, seed)?;
        let head = retrain(&heldout, a.balance, &cfg)?;
        let mut ledger = AnnotationLedger::new(heldout.len());
        ledger.reveal_all(AnnotationKind::Class);
        if a.balance.needs_spurious() {
            ledger.reveal_all(AnnotationKind::Group);
        }
        let metrics = evaluate(&head, &test)?;
        Ok((head, metrics, ledger.counts()))
    })?;
    let mut rows = Vec::new();
    for (seed, (head, metrics, ann)) in results {
        write(out, &format!("head-seed{seed}.ghed"), encode_head(&head))?;
        rows.push(seed_result(seed, metrics, ann));
    }
    finish(
        out,
        &format!("retrain-{}", a.balance.as_str()),
        rows,
        echo("retrain", a)?,
    )
}

fn dfr_cmd(a: &DfrArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let heldout = load(&a.heldout)?;
    let test = load(&a.test)?;
    let results = per_seed(&a.common, |seed| {
        let cfg = optim_config(&a.optim, seed)?;
        let mut ledger = AnnotationLedger::new(heldout.len());
        let head = dfr(&heldout, &cfg, &mut ledger)?;
        let metrics = evaluate(&head, &test)?;
        Ok((head, metrics, ledger.counts()))
    })?;
    let mut rows = Vec::new();
    for (seed, (head, metrics, ann)) in results {
        write(out, &format!("head-seed{seed}.ghed"), encode_head(&head))?;
        rows.push(seed_result(seed, metrics, ann));
    }
    finish(out, "dfr", rows, echo("dfr", a)?)
}

fn train_erm(
    e: &ErmArgs,
    balance: BalanceMode,
    ds: &EmbeddingDataset,
    seed: u64,
    checkpoints: &[f64],
) -> Result<TrainReport> {
    let cfg = erm_config(e, ds.len(), seed)?;
    train_head(ds, balance, &cfg, None, checkpoints)
}

fn variant(a: &SelfArgs) -> Result<SelfVariant> {
    Ok(match a.variant.as_str() {
        "random" => SelfVariant::Random,
        "misclassification" => SelfVariant::Misclassification,
        "es-misclassification" => SelfVariant::EsMisclassification {
            es_fraction: a.es_fraction,
        },
        "dropout-disagreement" => SelfVariant::DropoutDisagreement {
            p: a.dropout_p,
            passes: a.dropout_passes,
        },
        "es-disagreement" => SelfVariant::EsDisagreement {
            es_fraction: a.es_fraction,
        },
        other => return Err(Error::invalid(format!("unknown variant `{other}`"))),
    })
}

fn self_cmd(a: &SelfArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let train = load(&a.erm.data)?;
    let heldout = load(&a.heldout)?;
    let test = load(&a.test)?;
    let val = a.val.as_deref().map(load).transpose()?;
    ensure!(
        a.select_lrs.is_none() || val.is_some(),
        "--select-lrs needs --val for model selection"
    );
    let v = variant(a)?;
    let mut checkpoints = DEFAULT_ES_FRACTIONS.to_vec();
    checkpoints.push(a.es_fraction);
    let lrs = a
        .select_lrs
        .clone()
        .map(|l| l.0)
        .unwrap_or_else(|| vec![a.optim.lr]);

    let results = per_seed(&a.common, |seed| {
        let erm = train_erm(&a.erm, a.erm_balance, &train, seed, &checkpoints)?;
        let erm_metrics = evaluate(&erm.head, &test)?;
        let cfg = SelfConfig {
            variant: v,
            n: a.n,
            divergence: a.divergence,
            seed,
        };
        let mut ledger = AnnotationLedger::new(heldout.len());
        let mut candidates = Vec::with_capacity(lrs.len());
        for &lr in &lrs {
            let finetune = optim_config(&a.optim, seed)?.with_lr(lr);
            candidates.push((run_self(&erm, &heldout, &cfg, &finetune, &mut ledger)?, lr));
        }
        let mut annotations = ledger.counts();
        let chosen = match &val {
            Some(val) => {
                let mut val_ledger = AnnotationLedger::new(val.len());
                let heads: Vec<(LinearHead, f64)> = candidates
                    .iter()
                    .map(|(o, lr)| (o.head.clone(), *lr))
                    .collect();
                let (best, _) = model_select(&heads, val, &mut val_ledger)?;
                annotations = annotations + val_ledger.counts();
                best
            }
            None => 0,
        };
        let (outcome, lr) = candidates.swap_remove(chosen);
        let metrics = evaluate(&outcome.head, &test)?;
        let mut row = seed_result(seed, metrics, annotations);
        let sel = &outcome.selection;
        row.extras.insert(
            "annotations_requested".into(),
            sel.annotations_requested as f64,
        );
        row.extras.insert("finetune_lr".into(), lr);
        row.extras
            .insert("erm_average".into(), erm_metrics.average_accuracy);
        if let Some(w) = erm_metrics.worst_group_accuracy {
            row.extras.insert("erm_wga".into(), w);
        }
        if let (Some(g), Some(f), Some(b)) = (
            sel.worst_group,
            sel.worst_group_fraction,
            sel.worst_group_base_rate,
        ) {
            row.extras.insert("worst_group".into(), g as f64);
            row.extras.insert("worst_group_fraction".into(), f);
            row.extras.insert("worst_group_base_rate".into(), b);
        }
        Ok((row, outcome))
    })?;
    let mut rows = Vec::new();
    for (seed, (row, outcome)) in results {
        write(
            out,
            &format!("head-seed{seed}.ghed"),
            encode_head(&outcome.head),
        )?;
        write(
            out,
            &format!("selection-seed{seed}.csv"),
            selection_to_csv(&outcome.selection, &heldout),
        )?;
        rows.push(row);
    }
    finish(out, &format!("self-{}", v.name()), rows, echo("self", a)?)
}

fn free_lunch_cmd(a: &FreeLunchArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let ds = load(&a.erm.data)?;
    let test = load(&a.test)?;
    let results = per_seed(&a.common, |seed| {
        let erm_rows = SplitSpec::holdout(a.holdout_fraction, seed)?.sizes(ds.len())[0];
        let erm_cfg = erm_config(&a.erm, erm_rows, seed)?;
        let cfg = optim_config(&a.optim, seed)?;
        let fl = free_lunch(&ds, &erm_cfg, &cfg, a.holdout_fraction)?;
        let erm_metrics = evaluate(&fl.erm_head, &test)?;
        let metrics = evaluate(&fl.retrained_head, &test)?;
        let mut row = seed_result(
            seed,
            metrics,
            AnnotationCounts {
                class: ds.len(),
                group: 0,
            },
        );
        row.extras
            .insert("erm_average".into(), erm_metrics.average_accuracy);
        if let Some(w) = erm_metrics.worst_group_accuracy {
            row.extras.insert("erm_wga".into(), w);
        }
        row.extras
            .insert("holdout_rows".into(), fl.holdout_rows.len() as f64);
        Ok((row, fl))
    })?;
    let mut rows = Vec::new();
    for (seed, (row, fl)) in results {
        write(
            out,
            &format!("erm-head-seed{seed}.ghed"),
            encode_head(&fl.erm_head),
        )?;
        write(
            out,
            &format!("head-seed{seed}.ghed"),
            encode_head(&fl.retrained_head),
        )?;
        rows.push(row);
    }
    finish(out, "free-lunch", rows, echo("free-lunch", a)?)
}

#[derive(Serialize)]
struct SeedTable<'a> {
    seed: u64,
    #[serde(flatten)]
    table: &'a AblationTable,
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let train = load(&a.erm.data)?;
    let heldout = load(&a.heldout)?;
    let test = load(&a.test)?;
    let results = per_seed(&a.common, |seed| {
        let erm = train_erm(&a.erm, a.erm_balance, &train, seed, &[])?;
        let cfg = optim_config(&a.optim, seed)?;
        let table = run_wg_ablation(
            &erm,
            &heldout,
            &test,
            &a.fractions.0,
            &cfg,
            a.worst_groups.clone().map(|l| l.0),
        )?;
        let mut row = seed_result(
            seed,
            evaluate(&erm.head, &test)?,
            AnnotationCounts {
                class: heldout.len(),
                group: heldout.len(),
            },
        );
        for r in &table.rows {
            if let Some(w) = r.wga {
                row.extras
                    .insert(format!("wga_at_{}", fraction_tag(r.fraction)), w);
            }
        }
        Ok((row, table))
    })?;
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    for (seed, (row, table)) in &results {
        write(out, &format!("ablation-seed{seed}.csv"), table.to_csv())?;
        tables.push(SeedTable { seed: *seed, table });
        rows.push(row.clone());
    }
    write(out, "ablation.json", to_json_string(&tables)?)?;
    finish(out, "ablation", rows, echo("ablate", a)?)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let seed = single_seed(&a.common, "eval")?;
    let out = prepare(&a.common)?;
    let head = load_head(&a.head)?;
    let ds = load(&a.data)?;
    let metrics = evaluate(&head, &ds)?;
    finish(
        out,
        "eval",
        vec![seed_result(seed, metrics, AnnotationCounts::default())],
        echo("eval", a)?,
    )
}

#[derive(Serialize)]
struct SeededTheoremReport {
    seed: u64,
    #[serde(flatten)]
    report: TheoremReport,
}

fn verify(a: &VerifyArgs) -> Result<()> {
    let out = prepare(&a.common)?;
    let reports = per_seed(&a.common, |seed| verify_theorem(a.trials, seed))?
        .into_iter()
        .map(|(seed, report)| SeededTheoremReport { seed, report })
        .collect::<Vec<_>>();
    let json = to_json_string(&reports)?;
    write(out, "theorem.json", &json)?;
    write_manifest(out, &echo("verify-theorem", a)?)?;
    print!("{json}");
    Ok(())
}

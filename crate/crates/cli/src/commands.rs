use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use apnea_core::cache::SpectrogramCache;
use apnea_core::config::{persist, RunConfig};
use apnea_core::eval::{ablation_csv, ablation_run, derive_metrics, ConfusionMatrix, MetricsReport};
use apnea_core::pipeline::{self, ThresholdChoice, TEST_CACHE, TRAIN_CACHE, WEIGHTS_FILE};
use apnea_core::synth::generate_dataset;
use apnea_core::training::{history_jsonl, train_with_progress};
use apnea_core::{weights, Error};

type Result<T> = std::result::Result<T, Error>;

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(e.to_string()))
}

fn load_cache(cfg: &RunConfig, out: &Path, name: &str) -> Result<SpectrogramCache> {
    SpectrogramCache::load(&cfg.cache_dir(out).join(name))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_dataset(cfg.synth.records, &cfg.synth_config(), cfg.run.seed)?;
    ds.write_to(out)?;
    persist(cfg, out)?;
    println!(
        "wrote {} records ({} train, {} test) and {} events to {}",
        ds.records.len(),
        ds.split.train_record_ids.len(),
        ds.split.test_record_ids.len(),
        ds.annotations.len(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pre = pipeline::preprocess(&cfg.data, &cfg.dsp)?;
    persist(cfg, out)?;
    pre.train.save(&out.join(TRAIN_CACHE))?;
    pre.test.save(&out.join(TEST_CACHE))?;
    let counts = serde_json::json!({
        "train": pre.train.counts(),
        "test": pre.test.counts(),
    });
    write(&out.join("counts.json"), json(&counts)?)?;
    for (name, c) in [("train", pre.train.counts()), ("test", pre.test.counts())] {
        println!("{name}: {} apnea, {} non-apnea chunks", c.apnea, c.non_apnea);
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_cache(cfg, out, TRAIN_CACHE)?;
    persist(cfg, out)?;
    let outcome = train_with_progress(&data, &cfg.train_config(), |log| {
        println!(
            "epoch {:>3}  loss {:.5}  val_pr_auc {:.4}  val_recall {:.4}  lr {:.2e}  {:.1}s",
            log.epoch, log.train_loss, log.val_pr_auc, log.val_recall, log.lr, log.seconds
        );
    })?;
    weights::save(&outcome.model, &out.join(WEIGHTS_FILE))?;
    write(&out.join("history.jsonl"), history_jsonl(&outcome.history))?;
    let s = &outcome.summary;
    let summary = serde_json::json!({
        "best_epoch": s.best_epoch,
        "epochs_run": outcome.history.len(),
        "stopped_early": s.stopped_early,
        "train_counts": s.train_counts,
        "fitted_counts": s.fitted_counts,
        "validation_counts": s.validation_counts,
        "class_weights": s.class_weights,
        "effective_loss": s.effective_loss,
    });
    write(&out.join("train_summary.json"), json(&summary)?)?;
    println!(
        "best epoch {} of {}; weights in {}",
        s.best_epoch,
        outcome.history.len(),
        out.join(WEIGHTS_FILE).display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, out: &Path, weights_path: Option<&Path>) -> Result<()> {
    let weights_path = weights_path.map_or_else(|| out.join(WEIGHTS_FILE), Path::to_path_buf);
    let model = weights::load(&weights_path)?;
    let test = load_cache(cfg, out, TEST_CACHE)?;
    let choice = match cfg.eval.threshold {
        Some(t) => ThresholdChoice::Fixed(t),
        None => ThresholdChoice::Sweep {
            objective: cfg.eval.objective()?,
            fallback: cfg.eval.fallback()?,
        },
    };
    let ev = pipeline::evaluate(&model, &test, choice)?;
    persist(cfg, out)?;
    pipeline::write_evaluation(&ev, out)?;
    let r = &ev.report;
    println!(
        "threshold {} ({})  recall {:.4}  precision {:.4}  accuracy {:.4}  f1 {:.4}  pr_auc {:.4}",
        r.threshold, ev.selection, r.recall, r.precision, r.accuracy, r.f1, r.pr_auc
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let train = load_cache(cfg, out, TRAIN_CACHE)?;
    let test = load_cache(cfg, out, TEST_CACHE)?;
    persist(cfg, out)?;
    let rows = ablation_run(
        &cfg.train_config(),
        &train,
        &test,
        &cfg.eval.runs()?,
        cfg.eval.ablation_threshold,
        |row| {
            println!(
                "{}: recall {:.4}  precision {:.4}  trained on {} apnea / {} non-apnea",
                row.name,
                row.report.recall,
                row.report.precision,
                row.fitted_counts.apnea,
                row.fitted_counts.non_apnea
            )
        },
    )?;
    write(&out.join("ablation.csv"), ablation_csv(&rows))?;
    write(&out.join("ablation.json"), json(&rows)?)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

pub const REPORT_HEADER: &str = "run,threshold,accuracy_pct,precision_pct,recall_pct,f1_pct,pr_auc,tp,fn,fp,tn";

fn report_row(out: &mut String, name: &str, threshold: Option<f64>, cm: &ConfusionMatrix, pr_auc: Option<f64>) -> Result<()> {
    let m = derive_metrics(cm)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let _ = writeln!(
        out,
        "{name},{},{:.2},{:.2},{:.2},{:.2},{},{},{},{},{}",
        opt(threshold),
        100.0 * m.accuracy,
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1,
        opt(pr_auc),
        cm.tp,
        cm.fn_,
        cm.fp,
        cm.tn
    );
    Ok(())
}

fn row_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

fn parse_reference(spec: &str) -> Result<(String, ConfusionMatrix)> {
    let bad = || Error::Config(format!("reference {spec:?} is not NAME=tp,fn,fp,tn"));
    let (name, counts) = spec.split_once('=').ok_or_else(bad)?;
    let v: Vec<u64> = counts
        .split(',')
        .map(|c| c.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match v[..] {
        [tp, fn_, fp, tn] => Ok((name.to_string(), ConfusionMatrix::new(tp, fn_, fp, tn))),
        _ => Err(bad()),
    }
}

pub fn report(
    cfg: &RunConfig,
    out: &Path,
    files: &[PathBuf],
    names: Option<&str>,
    references: &[String],
) -> Result<()> {
    let names: Vec<String> = match names {
        Some(n) => n.split(',').map(str::to_string).collect(),
        None => files.iter().map(|f| row_name(f)).collect(),
    };
    if names.len() != files.len() {
        return Err(Error::Config(format!("{} names for {} metrics files", names.len(), files.len())));
    }
    let refs = references.iter().map(|r| parse_reference(r)).collect::<Result<Vec<_>>>()?;
    let mut table = format!("{REPORT_HEADER}\n");
    for (file, name) in files.iter().zip(&names) {
        let text = fs::read_to_string(file).map_err(|e| Error::Io {
            path: file.clone(),
            source: e,
        })?;
        let r: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: not a metrics report: {e}", file.display())))?;
        report_row(&mut table, name, Some(r.threshold), &r.confusion, Some(r.pr_auc))?;
    }
    for (name, cm) in &refs {
        report_row(&mut table, name, None, cm, None)?;
    }
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    persist(cfg, out)?;
    write(&out.join("comparison.csv"), &table)?;
    print!("{table}");
    Ok(())
}

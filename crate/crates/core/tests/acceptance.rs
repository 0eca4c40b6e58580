//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Run with `cargo test -p apnea-core --test acceptance`. Set
//! `APNEA_ACCEPTANCE_ONLY=1,4` to run a subset.

use std::path::Path;
use std::time::Instant;

use apnea_autograd::{grad_check, BatchNormState, Mode, Padding, Tape, Tensor, Var};
use apnea_core::config::DataConfig;
use apnea_core::dsp::SpectrogramConfig;
use apnea_core::eval::*;
use apnea_core::model::{ResNetConfig, ResNetModel};
use apnea_core::pipeline::{evaluate, preprocess, ThresholdChoice};
use apnea_core::synth::{generate_dataset, SynthConfig};
use apnea_core::training::*;
use apnea_core::weights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pct_close(got: f64, want: f64) -> bool {
    (100.0 * got - want).abs() <= 0.005 + 1e-9
}

fn paper_arithmetic() -> Outcome {
    let m = derive_metrics(&ConfusionMatrix::new(115, 12, 1332, 655)).map_err(|e| e.to_string())?;
    for (name, got, want) in [
        ("recall", m.recall, 90.55),
        ("accuracy", m.accuracy, 36.42),
        ("precision", m.precision, 7.95),
        ("f1", m.f1, 14.61),
    ] {
        check(pct_close(got, want), || format!("{name} {:.4}% vs {want}%", 100.0 * got))?;
    }
    Ok(format!(
        "recall {:.2}% accuracy {:.2}% precision {:.2}% f1 {:.2}%",
        100.0 * m.recall,
        100.0 * m.accuracy,
        100.0 * m.precision,
        100.0 * m.f1
    ))
}

fn training_matrix() -> Outcome {
    let (tn, tp, fn_, per_class) = (7140u64, 4299u64, 3359u64, 7658u64);
    let fp = per_class - tn;
    check(fp == 518, || format!("fp {fp}"))?;
    check(tp + fn_ == per_class, || "positives do not sum to the class size".into())?;
    let m = derive_metrics(&ConfusionMatrix::new(tp, fn_, fp, tn)).map_err(|e| e.to_string())?;
    check(pct_close(m.accuracy, 74.69), || format!("accuracy {}", m.accuracy))?;
    check(pct_close(m.recall, 56.14), || format!("recall {}", m.recall))?;
    check(m.recall < m.accuracy, || "training recall should be the weak metric".into())?;
    Ok(format!("fp {fp}, accuracy {:.2}%, recall {:.2}%", 100.0 * m.accuracy, 100.0 * m.recall))
}

fn architecture() -> Outcome {
    let model = ResNetModel::<f32>::build(&ResNetConfig::default(), 0).map_err(|e| e.to_string())?;
    let trace = model.shape_trace();
    let find = |name: &str| trace.iter().find(|e| e.name == name).map(|e| e.shape.clone());
    let expected = [
        ("stage1", vec![32, 32, 32]),
        ("stage2", vec![16, 16, 64]),
        ("stage3", vec![8, 8, 128]),
        ("stage4", vec![4, 4, 256]),
        ("head.gap", vec![256]),
        ("head.out", vec![1]),
    ];
    for (name, shape) in &expected {
        check(find(name).as_ref() == Some(shape), || format!("{name}: {:?}", find(name)))?;
    }
    let x = Tensor::<f32>::zeros(&[2, 1, 128, 128]);
    let p = model.predict(&x).map_err(|e| e.to_string())?;
    check(p.len() == 2 && p.iter().all(|v| (0.0..=1.0).contains(v)), || format!("output {p:?}"))?;
    Ok("stages 32x32x32, 16x16x64, 8x8x128, 4x4x256; gap 256; sigmoid scalar".into())
}

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> apnea_autograd::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.value(y).shape().to_vec();
    let w = t.constant(random(&shape, &mut rng));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type Case = (&'static str, Box<dyn Fn() -> f64>);

fn rel_error<F>(f: F, point: &Tensor<f64>) -> f64
where
    F: Fn(&mut Tape<f64>, Var) -> apnea_autograd::Result<Var>,
{
    grad_check(f, point, EPS).map(|r| r.max_rel_error).unwrap_or(f64::INFINITY)
}

fn conv_case(seed: u64, stride: usize, padding: Padding, wrt: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = [random(&[2, 2, 5, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)];
    rel_error(
        |t, v| {
            let mut vars = parts.clone().map(|p| t.constant(p));
            vars[wrt] = v;
            let y = t.conv2d(vars[0], vars[1], Some(vars[2]), stride, padding)?;
            project(t, y, seed)
        },
        &parts[wrt],
    )
}

fn bn_case(mode: Mode, wrt: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let parts = [
        random(&[2, 3, 4, 4], &mut rng),
        random(&[3], &mut rng).map(|v| v + 1.5),
        random(&[3], &mut rng),
    ];
    rel_error(
        |t, v| {
            let mut vars = parts.clone().map(|p| t.constant(p));
            vars[wrt] = v;
            let mut state = BatchNormState::new(3);
            state.running_mean = vec![0.1, -0.2, 0.3];
            state.running_var = vec![0.5, 1.5, 2.0];
            let y = t.batchnorm2d(vars[0], vars[1], vars[2], &mut state, mode, 0.1, 1e-5)?;
            project(t, y, 12)
        },
        &parts[wrt],
    )
}

fn dense_case(wrt: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let parts = [random(&[3, 4], &mut rng), random(&[4, 2], &mut rng), random(&[2], &mut rng)];
    rel_error(
        |t, v| {
            let mut vars = parts.clone().map(|p| t.constant(p));
            vars[wrt] = v;
            let y = t.dense(vars[0], vars[1], vars[2])?;
            project(t, y, 8)
        },
        &parts[wrt],
    )
}

fn lift(e: apnea_core::Error) -> apnea_autograd::AutogradError {
    apnea_autograd::AutogradError::InvalidArgument {
        op: "acceptance",
        detail: e.to_string(),
    }
}

fn loss_case(spec: LossSpec) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = random(&[16, 1], &mut rng).map(|v| 3.0 * v);
    let labels: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
    rel_error(
        |t, x| {
            let p = t.sigmoid(x);
            loss_on_tape(t, p, &labels, &spec).map_err(lift)
        },
        &logits,
    )
}

fn tiny_model() -> ResNetModel<f64> {
    let cfg = ResNetConfig {
        stem_filters: 2,
        stage_filters: vec![2, 3],
        stage_blocks: vec![1, 1],
        head_units: 3,
        dropout_rate: 0.0,
        input_shape: [8, 8, 1],
        ..ResNetConfig::default()
    };
    ResNetModel::build(&cfg, 5).unwrap()
}

fn model_loss(model: &ResNetModel<f64>, t: &mut Tape<f64>, input: Var) -> apnea_autograd::Result<(Var, Vec<Var>)> {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = m.forward(t, input, Mode::Eval, &mut rng).map_err(lift)?;
    let loss = loss_on_tape(t, pass.probabilities, &[true, false, true], &LossSpec::bce()).map_err(lift)?;
    Ok((loss, pass.params))
}

fn model_input() -> Tensor<f64> {
    random(&[3, 1, 8, 8], &mut ChaCha8Rng::seed_from_u64(31))
}

/// Whole tiny model, eval mode, gradient w.r.t. the input batch.
fn model_input_case() -> f64 {
    let model = tiny_model();
    rel_error(|t, x| Ok(model_loss(&model, t, x)?.0), &model_input())
}

/// Whole tiny model, gradient w.r.t. the named parameter by central differences.
fn model_param_case(name: &str) -> f64 {
    let model = tiny_model();
    let x = model_input();
    let idx = model.params().iter().position(|p| p.name == name).expect("parameter name");
    let loss_at = |m: &ResNetModel<f64>| -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let input = t.constant(x.clone());
        let (loss, params) = model_loss(m, &mut t, input).unwrap();
        let value = t.value(loss).data()[0];
        t.backward(loss).unwrap();
        (value, t.grad(params[idx]).unwrap().to_vec())
    };
    let (_, analytic) = loss_at(&model);
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        plus.params_mut()[idx].tensor.data_mut()[i] += EPS;
        let mut minus = model.clone();
        minus.params_mut()[idx].tensor.data_mut()[i] -= EPS;
        let n = (loss_at(&plus).0 - loss_at(&minus).0) / (2.0 * EPS);
        worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-8));
    }
    worst
}

fn gradient_suite() -> Vec<Case> {
    vec![
        ("conv input (same, stride 1)", Box::new(|| conv_case(1, 1, Padding::Same, 0))),
        ("conv weight (same, stride 2)", Box::new(|| conv_case(2, 2, Padding::Same, 1))),
        ("conv bias (valid, stride 2)", Box::new(|| conv_case(3, 2, Padding::Valid, 2))),
        ("batchnorm train input", Box::new(|| bn_case(Mode::Train, 0))),
        ("batchnorm train gamma", Box::new(|| bn_case(Mode::Train, 1))),
        ("batchnorm eval input", Box::new(|| bn_case(Mode::Eval, 0))),
        (
            "relu",
            Box::new(|| {
                let x = random(&[4, 6], &mut ChaCha8Rng::seed_from_u64(5)).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
                rel_error(
                    |t, x| {
                        let y = t.relu(x);
                        project(t, y, 5)
                    },
                    &x,
                )
            }),
        ),
        (
            "max pool",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(6);
                let mut vals: Vec<f64> = (0..32).map(|i| i as f64 * 0.05).collect();
                for i in (1..vals.len()).rev() {
                    vals.swap(i, rng.gen_range(0..=i));
                }
                let x = Tensor::from_vec(vec![1, 2, 4, 4], vals).unwrap();
                rel_error(
                    |t, x| {
                        let y = t.max_pool2d(x)?;
                        project(t, y, 6)
                    },
                    &x,
                )
            }),
        ),
        (
            "global average pool",
            Box::new(|| {
                let x = random(&[2, 3, 4, 4], &mut ChaCha8Rng::seed_from_u64(7));
                rel_error(
                    |t, x| {
                        let y = t.global_avg_pool(x)?;
                        project(t, y, 7)
                    },
                    &x,
                )
            }),
        ),
        ("dense input", Box::new(|| dense_case(0))),
        ("dense weight", Box::new(|| dense_case(1))),
        (
            "sigmoid",
            Box::new(|| {
                let x = random(&[10], &mut ChaCha8Rng::seed_from_u64(9)).map(|v| 6.0 * v);
                rel_error(
                    |t, x| {
                        let y = t.sigmoid(x);
                        project(t, y, 9)
                    },
                    &x,
                )
            }),
        ),
        (
            "dropout (fixed mask)",
            Box::new(|| {
                let x = random(&[10], &mut ChaCha8Rng::seed_from_u64(10));
                rel_error(
                    |t, x| {
                        let mut rng = ChaCha8Rng::seed_from_u64(123);
                        let y = t.dropout(x, 0.5, Mode::Train, &mut rng)?;
                        project(t, y, 10)
                    },
                    &x,
                )
            }),
        ),
        (
            "add and mul",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(13);
                let x = random(&[3, 4], &mut rng);
                let c = random(&[3, 4], &mut rng);
                rel_error(
                    |t, x| {
                        let k = t.constant(c.clone());
                        let s = t.add(x, k)?;
                        let y = t.mul(s, x)?;
                        project(t, y, 13)
                    },
                    &x,
                )
            }),
        ),
        ("bce loss", Box::new(|| loss_case(LossSpec::bce()))),
        ("weighted bce loss", Box::new(|| loss_case(LossSpec::weighted_bce(2.5, 0.625)))),
        ("focal loss", Box::new(|| loss_case(LossSpec::focal(0.25, 2.0)))),
        (
            "residual block",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(14);
                let x = random(&[2, 2, 4, 4], &mut rng);
                let w = random(&[2, 2, 3, 3], &mut rng);
                rel_error(
                    |t, w| {
                        let x = t.constant(x.clone());
                        let gamma = t.constant(Tensor::full(&[2], 1.0));
                        let beta = t.constant(Tensor::zeros(&[2]));
                        let mut state = BatchNormState::new(2);
                        let h = t.conv2d(x, w, None, 1, Padding::Same)?;
                        let h = t.batchnorm2d(h, gamma, beta, &mut state, Mode::Train, 0.1, 1e-5)?;
                        let h = t.add(h, x)?;
                        let h = t.relu(h);
                        project(t, h, 14)
                    },
                    &w,
                )
            }),
        ),
        ("model input", Box::new(model_input_case)),
        ("model output weight", Box::new(|| model_param_case("head.out.weight"))),
    ]
}

fn gradients() -> Outcome {
    let suite = gradient_suite();
    check(suite.len() == 20, || format!("suite has {} cases", suite.len()))?;
    let mut worst = (0.0, "");
    let mut failed = Vec::new();
    for (name, case) in &suite {
        let e = case();
        if !(e < TOL) {
            failed.push(format!("{name} ({e:.2e})"));
        }
        if e > worst.0 {
            worst = (e, name);
        }
    }
    check(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    Ok(format!("20 cases, worst {:.2e} ({})", worst.0, worst.1))
}

fn loss_identities() -> Outcome {
    let (mut wb, mut fo) = (0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(1e-4..1.0 - 1e-4)).collect();
        let y: Vec<f64> = (0..64).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect();
        let base = bce_loss(&p, &y).map_err(|e| e.to_string())?;
        wb = wb.max((weighted_bce_loss(&p, &y, 1.0, 1.0).map_err(|e| e.to_string())? - base).abs());
        fo = fo.max((focal_loss(&p, &y, 1.0, 0.0).map_err(|e| e.to_string())? - base).abs());
    }
    check(wb <= 1e-12, || format!("weighted bce differs by {wb:e}"))?;
    check(fo <= 1e-9, || format!("focal differs by {fo:e}"))?;
    Ok(format!("max |wbce-bce| {wb:.1e}, max |focal-bce| {fo:.1e} over 10 seeds x 64"))
}

fn balancing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for case in 0..2000 {
        let n = rng.gen_range(2..300);
        let p = rng.gen_range(0.01..0.99);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        labels[0] = true;
        labels[1] = false;
        let idx = oversample(&labels, &mut rng).map_err(|e| e.to_string())?;
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        check(2 * pos == idx.len(), || format!("case {case}: {pos} of {}", idx.len()))?;
        let mut seen = vec![false; n];
        idx.iter().for_each(|&i| seen[i] = true);
        check(seen.iter().all(|&s| s), || format!("case {case}: an original index is missing"))?;
    }
    let mut pairs: Vec<(usize, usize)> = vec![(1, 26), (1, 1), (85, 263), (7658, 7658), (4299, 15316)];
    pairs.extend((0..20_000).map(|_| (rng.gen_range(1..1_000_000), rng.gen_range(1..1_000_000))));
    for (n_pos, n_neg) in pairs {
        let (wp, wn) = compute_class_weights(n_pos, n_neg).map_err(|e| e.to_string())?;
        check(wp * n_pos as f64 == wn * n_neg as f64, || format!("({n_pos}, {n_neg}): {wp} {wn}"))?;
    }
    Ok("2000 oversampling draws equalized and complete; 20005 weight pairs exact".into())
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let hits: Vec<bool> = scores.iter().zip(labels).filter(|(s, _)| **s >= t).map(|(_, &y)| y).collect();
            let tp = hits.iter().filter(|&&y| y).count() as f64;
            (tp / n_pos, tp / hits.len() as f64)
        })
        .collect();
    let mut prev = (0.0, pts[0].1);
    let mut area = 0.0;
    for p in pts {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    area
}

fn pr_auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.gen_range(1..=12);
        let levels = rng.gen_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[rng.gen_range(0..n)] = true;
        let auc = pr_auc(&pr_curve(&scores, &labels).map_err(|e| e.to_string())?);
        let d = (auc - brute_force_auc(&scores, &labels)).abs();
        check(d <= 1e-9, || format!("case {case}: differs by {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("200 instances, max difference {worst:.1e}"))
}

fn synthetic_screening() -> Outcome {
    let start = Instant::now();
    let err = |e: apnea_core::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig::default();
    generate_dataset(18, &synth, 7).map_err(err)?.write_to(dir.path()).map_err(err)?;
    let data = DataConfig {
        dir: dir.path().to_path_buf(),
        ..DataConfig::default()
    };
    let dsp = SpectrogramConfig::default();
    let prep = preprocess(&data, &dsp).map_err(err)?;
    let again = preprocess(&data, &dsp).map_err(err)?;
    check(prep == again, || "preprocessing is not repeatable".into())?;

    let mut cfg = TrainConfig {
        epochs: 12,
        seed: 7,
        ..TrainConfig::default()
    };
    cfg.model.stage_blocks = vec![1, 1, 1, 1];
    let checksum = |m: &ResNetModel<f32>| -> Result<String, String> {
        let bytes = weights::to_bytes(m).map_err(err)?;
        Ok(format!("{:x}", Sha256::digest(bytes)))
    };
    let first = train(&prep.train, &cfg).map_err(err)?;
    let choice = ThresholdChoice::Sweep {
        objective: Objective::RecallFloor(0.9),
        fallback: Objective::MaxF1,
    };
    let ev = evaluate(&first.model, &prep.test, choice).map_err(err)?;
    let second = train(&prep.train, &cfg).map_err(err)?;
    let (sum1, sum2) = (checksum(&first.model)?, checksum(&second.model)?);
    check(sum1 == sum2, || format!("repeat run weights differ: {sum1} vs {sum2}"))?;
    let ev2 = evaluate(&second.model, &prep.test, choice).map_err(err)?;
    check(ev.report == ev2.report, || "repeat run metrics differ".into())?;

    let rows = ablation_run(
        &cfg,
        &prep.train,
        &prep.test,
        &[AblationRun::Full, AblationRun::NoOversampling],
        0.5,
        |_| {},
    )
    .map_err(err)?;
    let (full, no_os) = (rows[0].report.recall, rows[1].report.recall);
    let r = &ev.report;
    let summary = format!(
        "test recall {:.3} at t={:.3} ({}), pr_auc {:.3}; ablation recall full {full:.3} vs no_oversampling {no_os:.3}; weights sha256 {}; {:.0}s",
        r.recall,
        r.threshold,
        ev.selection,
        r.pr_auc,
        &sum1[..12],
        start.elapsed().as_secs_f64()
    );
    check(r.recall >= 0.95, || format!("recall below 0.95: {summary}"))?;
    check(no_os < full, || format!("no_oversampling not below full: {summary}"))?;
    Ok(summary)
}

fn replication_statement() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    for needle in ["not desk-reproducible", "--reference paper=115,12,1332,655"] {
        check(text.contains(needle), || format!("README lacks {needle:?}"))?;
    }
    Ok("documented in README (replication harness, not CI-gated)".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "paper arithmetic", paper_arithmetic),
        (2, "training matrix consistency", training_matrix),
        (3, "architecture conformance", architecture),
        (4, "gradient correctness", gradients),
        (5, "loss identities", loss_identities),
        (6, "balancing invariants", balancing),
        (7, "pr-auc oracle equivalence", pr_auc_oracle),
        (8, "end-to-end synthetic screening", synthetic_screening),
        (9, "non-reproducibility statement", replication_statement),
    ];
    let only: Option<Vec<u32>> = std::env::var("APNEA_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("AC{id} {name}: PASS ({detail})"),
            Err(detail) => {
                failures += 1;
                println!("AC{id} {name}: FAIL ({detail})");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The training criteria (2, 3, 4, 8) share one budget and one dataset seed,
//! so every model comparison is like for like.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tagm::data::{
    generate, load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, Dataset, GenConfig, Split,
};
use tagm::exec::Execution;
use tagm::gated_unit::{cell_forward, CellParams};
use tagm::gradcheck::{gradient_check, GradCheckConfig};
use tagm::model::{param_count, Model, ModelDims, ModelKind};
use tagm::numerics::{affine, relu, Matrix};
use tagm::salience::{fraction_localized, median, traces};
use tagm::training::{evaluate, train, ModelSpec, TrainConfig, TrainOutcome};

// Criterion 1
const GRADCHECK_SEEDS: u64 = 20;
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
// Criterion 2
const TAGM_MIN_ACC: f64 = 0.90;
const RNN_MAX_ACC: f64 = 0.60;
const HIDDEN: usize = 16;
// Criterion 3
const LOCALIZATION_RATIO: f64 = 2.0;
const LOCALIZED_FRACTION: f64 = 0.80;
// Criterion 5
const CONVEXITY_INSTANCES: usize = 1000;
// Criterion 6
const EXPECTED_PARAMS: usize = 42_251;
const REPORTED_PARAMS: f64 = 47_000.0;
const PARAM_REL_TOLERANCE: f64 = 0.15;
// Criterion 8
const DATA_SIZES: [usize; 4] = [500, 1000, 2000, 3000];

/// Shared training budget for every model in criteria 2, 3, 4 and 8.
const SEED: u64 = 7;
fn budget() -> TrainConfig {
    TrainConfig {
        epochs: 40,
        learning_rate: 2e-3,
        fusion_lr_multiplier: 20.0,
        batch_size: 16,
        patience: 20,
        seed: SEED,
        ..TrainConfig::default()
    }
}

struct Verdict {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: u32, title: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, title, passed, detail }
}

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in ModelKind::ALL {
        let mut cfg = GradCheckConfig::new(kind);
        cfg.tolerance = GRADCHECK_TOLERANCE;
        let report = gradient_check(&cfg, 0..GRADCHECK_SEEDS).expect("gradient check runs");
        let resamples: usize = report.seeds.iter().map(|s| s.resamples).sum();
        parts.push(format!("{kind} max rel {:.2e} ({resamples} redraws)", report.max_rel_error()));
        passed &= report.passed;
    }
    let elapsed = start.elapsed();
    passed &= elapsed < GRADCHECK_BUDGET;
    verdict(
        1,
        "gradient oracle",
        passed,
        format!("{}; {GRADCHECK_SEEDS} seeds each in {:.2}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

struct Trained {
    ds: Dataset,
    tagm: TrainOutcome,
    rnn: TrainOutcome,
    amnn: TrainOutcome,
    seconds: f64,
}

fn spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        kind,
        attn_hidden: HIDDEN,
        cell_hidden: HIDDEN,
    }
}

fn train_default_task() -> Trained {
    let start = Instant::now();
    let ds = generate(&GenConfig {
        seed: SEED,
        ..GenConfig::default()
    })
    .expect("default dataset");
    let cfg = budget();
    let run = |kind| train(&ds, spec(kind), &cfg, Execution::default()).expect("training succeeds");
    let tagm = run(ModelKind::Tagm);
    let rnn = run(ModelKind::Rnn);
    let amnn = run(ModelKind::Amnn);
    Trained {
        seconds: start.elapsed().as_secs_f64(),
        ds,
        tagm,
        rnn,
        amnn,
    }
}

fn test_acc(model: &Model, ds: &Dataset) -> f64 {
    evaluate(model, ds, Split::Test, Execution::default()).expect("evaluation").accuracy
}

fn noise_robustness(t: &Trained) -> Verdict {
    let tagm = test_acc(&t.tagm.model, &t.ds);
    let rnn = test_acc(&t.rnn.model, &t.ds);
    verdict(
        2,
        "noise robustness",
        tagm >= TAGM_MIN_ACC && rnn <= RNN_MAX_ACC,
        format!(
            "TAGM test acc {tagm:.4} (need >= {TAGM_MIN_ACC}), plain RNN {rnn:.4} (need <= {RNN_MAX_ACC}); \
             three models trained in {:.0}s",
            t.seconds
        ),
    )
}

fn salience_localization(t: &Trained) -> Verdict {
    let ts = traces(&t.tagm.model, &t.ds, Split::Test, Execution::default()).expect("traces");
    let frac = fraction_localized(&ts, LOCALIZATION_RATIO).unwrap_or(0.0);
    let mut ratios: Vec<f64> = ts.iter().filter_map(|t| t.ratio).collect();
    let med = median(&mut ratios).unwrap_or(f64::NAN);
    verdict(
        3,
        "salience localization",
        frac >= LOCALIZED_FRACTION,
        format!(
            "{:.1}% of {} test sequences have ratio >= {LOCALIZATION_RATIO} (need {:.0}%); median ratio {med:.3e}",
            100.0 * frac,
            ratios.len(),
            100.0 * LOCALIZED_FRACTION
        ),
    )
}

fn versus_amnn(t: &Trained) -> Verdict {
    let tagm = test_acc(&t.tagm.model, &t.ds);
    let amnn = test_acc(&t.amnn.model, &t.ds);
    let n = t.ds.count(Split::Test) as f64;
    verdict(
        4,
        "TAGM >= AM-NN",
        tagm >= amnn,
        format!(
            "TAGM {tagm:.4} ({} errors) vs AM-NN {amnn:.4} ({} errors) on {n} test sequences",
            ((1.0 - tagm) * n).round(),
            ((1.0 - amnn) * n).round()
        ),
    )
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_cell(d: usize, h: usize, rng: &mut ChaCha8Rng) -> CellParams {
    CellParams {
        w: random_matrix(h, h, rng),
        u: random_matrix(h, d, rng),
        b: (0..h).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

fn gating_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (d, h) = (4, 6);
    let mut failures = Vec::new();

    for _ in 0..CONVEXITY_INSTANCES {
        let t_len = rng.random_range(1..12);
        let p = random_cell(d, h, &mut rng);
        let x = random_matrix(t_len, d, &mut rng);

        // closed gate
        let tr = cell_forward(&x, &vec![0.0; t_len], &p).unwrap();
        if tr.final_state().iter().any(|v| v.to_bits() != 0) {
            failures.push("a = 0 left a nonzero h_T");
        }

        // open gate without recurrence
        let mut p_open = p.clone();
        p_open.w = Matrix::zeros(h, h);
        let tr = cell_forward(&x, &vec![1.0; t_len], &p_open).unwrap();
        for t in 0..t_len {
            let expect = relu(&affine(&p_open.u, x.row(t), &p_open.b).unwrap());
            if tr.state(t + 1).iter().zip(&expect).any(|(a, b)| a.to_bits() != b.to_bits()) {
                failures.push("a = 1, W = 0 differs from relu(U x + b)");
            }
        }

        // convex combination of previous state and candidate
        let a: Vec<f64> = (0..t_len).map(|_| rng.random::<f64>()).collect();
        let tr = cell_forward(&x, &a, &p).unwrap();
        for t in 0..t_len {
            let prev = tr.state(t);
            let cand = tr.candidates.row(t);
            let cur = tr.state(t + 1);
            for j in 0..h {
                let (lo, hi) = (prev[j].min(cand[j]), prev[j].max(cand[j]));
                if !(lo <= cur[j] && cur[j] <= hi) {
                    failures.push("convexity bound violated");
                }
            }
        }

        // zero-attention prefix
        let pad = rng.random_range(1..8);
        let noise = random_matrix(pad, d, &mut rng);
        let mut rows: Vec<Vec<f64>> = noise.row_iter().map(<[f64]>::to_vec).collect();
        rows.extend(x.row_iter().map(<[f64]>::to_vec));
        let padded = Matrix::from_rows(&rows).unwrap();
        let mut a_padded = vec![0.0; pad];
        a_padded.extend(&a);
        let tr_padded = cell_forward(&padded, &a_padded, &p).unwrap();
        if tr_padded
            .final_state()
            .iter()
            .zip(tr.final_state())
            .any(|(u, v)| u.to_bits() != v.to_bits())
        {
            failures.push("zero-attention prefix changed h_T");
        }
    }
    failures.dedup();
    verdict(
        5,
        "gating invariants",
        failures.is_empty(),
        if failures.is_empty() {
            format!("closed gate, open gate, convexity and prefix immunity hold on {CONVEXITY_INSTANCES} instances")
        } else {
            failures.join("; ")
        },
    )
}

fn parameter_count() -> Verdict {
    let n = param_count(&ModelDims::new(13, 128, 64, 10));
    let rel = (n as f64 - REPORTED_PARAMS).abs() / REPORTED_PARAMS;
    verdict(
        6,
        "parameter count",
        n == EXPECTED_PARAMS && rel <= PARAM_REL_TOLERANCE,
        format!("{n} parameters for (13, 128, 64, 10); {:.1}% from the reported 47K", 100.0 * rel),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tagm"))
        .args(args)
        .env("TAGM_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn determinism(dir: &Path) -> Verdict {
    let mut problems = Vec::new();
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let data = path("det.tgmd");
    let gen = run_cli(&[
        "gen-data", "--out", &s(&data), "--seed", "3", "--n-train", "120", "--n-val", "30", "--n-test", "30",
    ]);
    if !gen.status.success() {
        problems.push("gen-data failed".to_string());
    }
    let mut ckpts = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "1"), ("c", "2"), ("d", "4")] {
        let out = path(&format!("det_{run}.tgmc"));
        let o = run_cli(&[
            "train", "--data", &s(&data), "--out", &s(&out), "--epochs", "3", "--dropout", "0.25", "--seed", "11",
            "--jobs", jobs,
        ]);
        if !o.status.success() {
            problems.push(format!("train --jobs {jobs} failed"));
        }
        ckpts.push(std::fs::read(&out).unwrap_or_default());
    }
    if ckpts.iter().any(|c| c.is_empty() || *c != ckpts[0]) {
        problems.push("checkpoints differ across runs or --jobs".to_string());
    }

    let ds = load_dataset(&data).expect("reload");
    let copy = path("det_copy.tgmd");
    save_dataset(&ds, &copy).unwrap();
    if load_dataset(&copy).unwrap() != ds || std::fs::read(&copy).unwrap() != std::fs::read(&data).unwrap() {
        problems.push("dataset round trip not bit-exact".to_string());
    }
    let ck = load_checkpoint(path("det_a.tgmc")).expect("checkpoint loads");
    let ck_copy = path("det_copy.tgmc");
    save_checkpoint(&ck, &ck_copy).unwrap();
    let back: Checkpoint = load_checkpoint(&ck_copy).unwrap();
    if back != ck || std::fs::read(&ck_copy).unwrap() != ckpts[0] {
        problems.push("checkpoint round trip not bit-exact".to_string());
    }

    for kind in ModelKind::ALL {
        let mut cfg = GradCheckConfig::new(kind);
        cfg.corrupt = true;
        if gradient_check(&cfg, 0..GRADCHECK_SEEDS).expect("runs").passed {
            problems.push(format!("corrupted {kind} gradient was not caught"));
        }
    }
    if run_cli(&["gradcheck", "--seeds", "3", "--corrupt"]).status.code() != Some(1) {
        problems.push("gradcheck --corrupt did not exit 1".to_string());
    }

    verdict(
        7,
        "determinism and persistence",
        problems.is_empty(),
        if problems.is_empty() {
            "identical checkpoints for --jobs 1/1/2/4, bit-exact round trips, mutated gradients rejected".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn data_efficiency(t: &Trained, dir: &Path) -> Verdict {
    let cfg = budget();
    let mut rows = vec!["train_size,tagm_test_acc,rnn_test_acc,advantage".to_string()];
    let mut all_nonneg = true;
    for &n in &DATA_SIZES {
        let (tagm, rnn) = if n == t.ds.count(Split::Train) {
            (test_acc(&t.tagm.model, &t.ds), test_acc(&t.rnn.model, &t.ds))
        } else {
            let sub = t.ds.with_train_limit(n);
            let run = |kind| train(&sub, spec(kind), &cfg, Execution::default()).expect("training succeeds");
            (test_acc(&run(ModelKind::Tagm).model, &sub), test_acc(&run(ModelKind::Rnn).model, &sub))
        };
        all_nonneg &= tagm - rnn >= 0.0;
        rows.push(format!("{n},{tagm},{rnn},{}", tagm - rnn));
    }
    let csv = rows.join("\n");
    let out = dir.join("data_efficiency.csv");
    std::fs::write(&out, format!("{csv}\n")).expect("write csv");
    println!("{csv}");
    verdict(
        8,
        "data-efficiency curve",
        all_nonneg,
        format!("TAGM advantage over plain RNN non-negative at every size; table at {}", out.display()),
    )
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("scratch dir");

    let mut verdicts = vec![gradient_oracle()];
    let trained = train_default_task();
    verdicts.push(noise_robustness(&trained));
    verdicts.push(salience_localization(&trained));
    verdicts.push(versus_amnn(&trained));
    verdicts.push(gating_invariants());
    verdicts.push(parameter_count());
    verdicts.push(determinism(&dir));
    verdicts.push(data_efficiency(&trained, &dir));

    println!();
    for v in &verdicts {
        println!(
            "criterion {} [{}] {}: {}",
            v.id,
            v.title,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("\nacceptance: {} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

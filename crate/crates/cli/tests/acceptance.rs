//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits nonzero if a hard criterion fails.
//!
//! Criteria run in order, timed ones first, because the training criteria
//! occupy every core for several minutes.

use std::f64::consts::TAU;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use arclength::autodiff::{grad_check, operator_suite};
use arclength::datagen::{self, analytic_parts, generate, DatasetSplits, ExampleTriple, GenSpec};
use arclength::eval::{self, linear_fit, ChordSum, Metrics};
use arclength::geometry::{
    analytic_length, apply_isometry, discretization_error, polyline_length, sample, AnalyticSine, Isometry, Point2,
};
use arclength::models::{self, Model, ModelKind};
use arclength::training::{self, triple_loss_with_grads, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Criterion {
    name: &'static str,
    /// Wall-clock budget, if the criterion states one.
    budget: Option<Duration>,
    /// A soft criterion is reported but does not fail the run.
    soft: bool,
    run: fn(&mut Shared) -> Verdict,
}

/// Full-size dataset and trained models, built on first use.
#[derive(Default)]
struct Shared {
    data: Option<DatasetSplits>,
    arclengthnet: Option<Model>,
    lstm: Option<Model>,
}

impl Shared {
    fn data(&mut self) -> &DatasetSplits {
        self.data
            .get_or_insert_with(|| generate(&GenSpec::default()).expect("default spec generates"))
    }

    fn model(&mut self, kind: ModelKind) -> Model {
        let cached = match kind {
            ModelKind::ArcLengthNet => &self.arclengthnet,
            ModelKind::LstmNet => &self.lstm,
        };
        if let Some(m) = cached {
            return m.clone();
        }
        let config = TrainConfig::new(kind);
        let start = Instant::now();
        let (model, log) = training::train(self.data(), &config, |r| {
            if r.epoch % 10 == 0 {
                eprintln!(
                    "    [{kind}] epoch {:>3}  train {:.5}  test {:.5}",
                    r.epoch,
                    r.train_loss,
                    r.test_loss.unwrap_or(f64::NAN)
                );
            }
        })
        .expect("training completes");
        let last = log.records.last().expect("at least one epoch");
        println!(
            "    trained {kind}: final train loss {:.5}, test loss {:.5}, {:.0}s",
            last.train_loss,
            last.test_loss.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
        let slot = match kind {
            ModelKind::ArcLengthNet => &mut self.arclengthnet,
            ModelKind::LstmNet => &mut self.lstm,
        };
        slot.insert(model).clone()
    }

    fn holdout_metrics(&mut self, kind: ModelKind) -> (Metrics, Metrics) {
        let model = self.model(kind);
        let holdout = &self.data().holdout;
        let all = eval::evaluate(&model, &eval::per_curve_examples(holdout)).unwrap();
        let s1 = eval::evaluate(&model, &eval::s1_examples(holdout)).unwrap();
        (all, s1)
    }
}

fn oracle_correctness(_: &mut Shared) -> Verdict {
    let c = AnalyticSine::new(1.0, 0.0, Isometry::identity(), (0.0, TAU)).unwrap();
    let exact = analytic_length(&c, (0.0, TAU)).unwrap();
    let chord = polyline_length(&sample(&c, 1_000_001).unwrap());
    let rel = (exact - chord).abs() / exact;
    verdict(
        rel <= 1e-6 && (exact - 7.640396).abs() < 5e-7,
        format!("analytic {exact:.9}, 10^6-segment chord {chord:.9}, relative gap {rel:.2e}"),
    )
}

fn convergence(_: &mut Shared) -> Verdict {
    let spec = GenSpec {
        n_examples: 100,
        holdout_size: 0,
        rng_seed: 2024,
        ..GenSpec::default()
    };
    let data = generate(&spec).unwrap();
    let ns = [25, 50, 100, 200, 400, 800];
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut degenerate = 0;
    for t in data.all() {
        let [curve, ..] = analytic_parts(&spec, t).unwrap();
        let errs: Vec<f64> = ns.iter().map(|&n| discretization_error(&curve, n).unwrap()).collect();
        // A straight segment has no discretization error to converge.
        if errs[0] < 1e-12 {
            degenerate += 1;
            continue;
        }
        for w in errs.windows(2) {
            monotone &= w[1] <= w[0];
            let r = w[0] / w[1];
            worst_lo = worst_lo.min(r);
            worst_hi = worst_hi.max(r);
        }
    }
    verdict(
        monotone && worst_lo >= 3.0 && worst_hi <= 5.0,
        format!(
            "100 curves ({degenerate} degenerate), non-increasing: {monotone}, e(N)/e(2N) in [{worst_lo:.3}, {worst_hi:.3}]"
        ),
    )
}

fn data_axioms(_: &mut Shared) -> Verdict {
    let spec = GenSpec {
        n_examples: 10_000,
        holdout_size: 0,
        rng_seed: 77,
        ..GenSpec::default()
    };
    let data = generate(&spec).unwrap();
    let triples: Vec<&ExampleTriple> = data.all().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let additive = triples
        .iter()
        .filter(|t| t.additivity_residual().abs() <= 1e-9 * (1.0 + t.len1))
        .count();
    let worst_additivity = triples
        .iter()
        .map(|t| t.additivity_residual().abs() / (1.0 + t.len1))
        .fold(0.0, f64::max);

    let mut worst_invariance: f64 = 0.0;
    let mut sub_ok = true;
    let mut non_negative = true;
    for t in &triples {
        let base = polyline_length(&t.s1);
        for _ in 0..20 {
            let iso = Isometry::new(
                rng.gen_range(0.0..TAU),
                Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            );
            let moved = polyline_length(&apply_isometry(&t.s1, &iso));
            worst_invariance = worst_invariance.max((moved - base).abs() / base);
        }
        non_negative &= t.len1 >= 0.0 && t.len2 >= 0.0 && t.len3 >= 0.0;
        sub_ok &= t.len2 <= t.len1 && t.len3 <= t.len1;
        for (curve, _) in t.curves() {
            let n = curve.len();
            let whole = polyline_length(curve);
            for _ in 0..5 {
                let start = rng.gen_range(0..n - 1);
                let end = rng.gen_range(start + 2..=n);
                sub_ok &= polyline_length(&curve.subcurve(start, end).unwrap()) <= whole;
            }
        }
    }
    verdict(
        additive == triples.len() && worst_invariance <= 1e-9 && non_negative && sub_ok,
        format!(
            "additive {additive}/{} (worst {worst_additivity:.1e} relative), isometry spread {worst_invariance:.1e}, \
             labels >= 0: {non_negative}, sub-curves shorter: {sub_ok}",
            triples.len()
        ),
    )
}

fn gradients(_: &mut Shared) -> Verdict {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut lines = Vec::new();
    let mut passed = true;
    for (name, r) in operator_suite(0, EPS, TOL).unwrap() {
        passed &= r.passed;
        if !r.passed {
            lines.push(format!("{name} {:.1e}", r.max_relative_error));
        }
    }
    let worst_op = operator_suite(0, EPS, TOL)
        .unwrap()
        .iter()
        .map(|(_, r)| r.max_relative_error)
        .fold(0.0, f64::max);
    lines.push(format!("operators worst {worst_op:.1e}"));

    let spec = GenSpec {
        n_examples: 1,
        holdout_size: 0,
        rng_seed: 3,
        ..GenSpec::default()
    };
    let triple = generate(&spec).unwrap().train.remove(0);
    for kind in [ModelKind::ArcLengthNet, ModelKind::LstmNet] {
        let config = TrainConfig::new(kind);
        let store = models::init(&config.model, 0).unwrap();
        let r = grad_check(
            &store,
            |s| triple_loss_with_grads(&config.model, s, &triple, config.lambda),
            EPS,
            TOL,
        )
        .unwrap();
        passed &= r.passed;
        lines.push(format!("{kind} loss {:.1e} over {} coords", r.max_relative_error, r.coordinates));
    }
    verdict(passed, lines.join(", "))
}

fn reproduction(shared: &mut Shared) -> Verdict {
    let (all, s1) = shared.holdout_metrics(ModelKind::ArcLengthNet);
    verdict(
        all.mse <= 0.30 && all.rmlr <= 0.06,
        format!(
            "holdout per-curve MSE {:.4} (<= 0.30), RMLR {:.4} (<= 0.06); s1-only MSE {:.4}, RMLR {:.4}",
            all.mse, all.rmlr, s1.mse, s1.rmlr
        ),
    )
}

fn architecture_comparison(shared: &mut Shared) -> Verdict {
    let (arc, arc_s1) = shared.holdout_metrics(ModelKind::ArcLengthNet);
    let (lstm, lstm_s1) = shared.holdout_metrics(ModelKind::LstmNet);
    verdict(
        arc.mse <= lstm.mse,
        format!(
            "holdout MSE ArcLengthNet {:.4} vs LSTM {:.4} (s1-only {:.4} vs {:.4})",
            arc.mse, lstm.mse, arc_s1.mse, lstm_s1.mse
        ),
    )
}

fn monotonicity(shared: &mut Shared) -> Verdict {
    let model = shared.model(ModelKind::ArcLengthNet);
    let examples = eval::per_curve_examples(&shared.data().holdout);
    let curves: Vec<_> = examples.iter().map(|(c, _)| *c).collect();
    let truth: Vec<f64> = examples.iter().map(|(_, l)| *l).collect();
    let pred = eval::predict_all(&model, &curves).unwrap();
    match linear_fit(&truth, &pred) {
        Some((r, slope, intercept)) => verdict(
            r >= 0.99 && (0.9..=1.1).contains(&slope),
            format!("Pearson {r:.5} (>= 0.99), slope {slope:.4} in [0.9, 1.1], intercept {intercept:.4}"),
        ),
        None => verdict(false, "correlation undefined"),
    }
}

fn arclen(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_arclen"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "arclen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn file_hash(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn metric_lines(stdout: &str) -> Vec<String> {
    stdout
        .lines()
        .filter(|l| {
            ["holdout", "chord sum", "additivity", "invariance", "non-negativity", "monotonicity"]
                .iter()
                .any(|p| l.starts_with(p))
        })
        .map(str::to_string)
        .collect()
}

fn determinism(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: &str| -> (String, String, Vec<String>) {
        let p = |name: &str| -> PathBuf { dir.path().join(format!("{tag}-{name}")) };
        let (data, ckpt) = (p("data.bin"), p("model.ckpt"));
        let (data_s, ckpt_s) = (data.to_str().unwrap(), ckpt.to_str().unwrap());
        arclen(&["--threads", threads, "gen", "--out", data_s, "--examples", "400", "--holdout", "120", "--seed", "11"]);
        arclen(&[
            "--threads", threads, "train", "--data", data_s, "--out", ckpt_s, "--epochs", "3", "--quiet",
        ]);
        let stdout = arclen(&["--threads", threads, "eval", "--checkpoint", ckpt_s, "--data", data_s]);
        (file_hash(&data), file_hash(&ckpt), metric_lines(&stdout))
    };
    let a = run("a", "8");
    let b = run("b", "8");
    let c = run("c", "1");
    let same = a == b && a == c && a.2.len() == 7;
    verdict(
        same,
        format!(
            "dataset {}.., checkpoint {}.., {} metric lines; repeat identical: {}, 1 vs 8 threads identical: {}",
            &a.0[..12],
            &a.1[..12],
            a.2.len(),
            a == b,
            a == c
        ),
    )
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn robustness(shared: &mut Shared) -> Verdict {
    let model = shared.model(ModelKind::ArcLengthNet);
    let data = shared.data();
    let dir = tempfile::tempdir().unwrap();
    let (data_path, ckpt, noise, sub) = (
        dir.path().join("data.bin"),
        dir.path().join("model.ckpt"),
        dir.path().join("noise.csv"),
        dir.path().join("subsample.csv"),
    );
    datagen::save(data, &data_path).unwrap();
    models::save_checkpoint(&ckpt, &model, &data.spec.hash()).unwrap();
    arclen(&[
        "robust",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--noise-out",
        noise.to_str().unwrap(),
        "--subsample-out",
        sub.to_str().unwrap(),
    ]);

    let examples = eval::per_curve_examples(&data.holdout);
    let clean = eval::evaluate(&model, &examples).unwrap();
    let chord = eval::evaluate(&ChordSum, &examples).unwrap();
    // noise: sigma, model mse, rmse, rmlr, bias, chord mse, rmse, rmlr, bias, n
    let noise_rows = read_csv(&noise);
    // subsample: factor, points, model mse, rmse, rmlr, n
    let sub_rows = read_csv(&sub);

    let sigmas: Vec<f64> = noise_rows.iter().map(|r| r[0]).collect();
    let factors: Vec<f64> = sub_rows.iter().map(|r| r[0]).collect();
    let shape_ok = sigmas == [0.0, 0.01, 0.05, 0.1] && factors == [1.0, 2.0, 4.0, 8.0];
    let zero = &noise_rows[0];
    let sigma0_ok = zero[1] == clean.mse && zero[3] == clean.rmlr && zero[5] == chord.mse && zero[7] == chord.rmlr;
    let factor1_ok = sub_rows[0][2] == clean.mse && sub_rows[0][4] == clean.rmlr;
    let bias_ok = noise_rows[1..].iter().all(|r| r[8] > 0.0);

    let table: Vec<String> = noise_rows
        .iter()
        .map(|r| format!("s={} model {:.4}/chord {:.4}", r[0], r[3], r[7]))
        .chain(sub_rows.iter().map(|r| format!("f={} model {:.4}", r[0], r[4])))
        .collect();
    verdict(
        shape_ok && sigma0_ok && factor1_ok && bias_ok,
        format!(
            "tables complete: {shape_ok}, sigma=0 exact: {sigma0_ok}, factor=1 exact: {factor1_ok}, \
             chord bias > 0: {bias_ok}; RMLR {}",
            table.join(", ")
        ),
    )
}

fn main() {
    let criteria = [
        Criterion {
            name: "oracle correctness",
            budget: Some(Duration::from_secs(5)),
            soft: false,
            run: oracle_correctness,
        },
        Criterion {
            name: "discretization-error convergence",
            budget: Some(Duration::from_secs(30)),
            soft: false,
            run: convergence,
        },
        Criterion {
            name: "axiom suite on data",
            budget: Some(Duration::from_secs(60)),
            soft: false,
            run: data_axioms,
        },
        Criterion {
            name: "gradient correctness",
            budget: Some(Duration::from_secs(60)),
            soft: false,
            run: gradients,
        },
        Criterion {
            name: "determinism",
            budget: None,
            soft: false,
            run: determinism,
        },
        Criterion {
            name: "holdout accuracy",
            budget: None,
            soft: false,
            run: reproduction,
        },
        Criterion {
            name: "monotonic property",
            budget: None,
            soft: false,
            run: monotonicity,
        },
        Criterion {
            name: "robustness reports",
            budget: None,
            soft: false,
            run: robustness,
        },
        Criterion {
            name: "architecture comparison",
            budget: None,
            soft: true,
            run: architecture_comparison,
        },
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut shared = Shared::default();
    let mut hard_failures = 0;
    println!("acceptance: {} criteria", criteria.len());
    for c in &criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| (c.run)(&mut shared)));
        let elapsed = start.elapsed();
        let Verdict { passed, mut detail } = outcome.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            verdict(false, format!("panicked: {msg}"))
        });
        let mut passed = passed;
        if let Some(budget) = c.budget {
            if elapsed > budget {
                passed = false;
                detail.push_str(&format!("; over the {}s budget", budget.as_secs()));
            }
        }
        let tag = match (passed, c.soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => "FAIL",
        };
        println!("{tag} {} [{:.1}s]: {detail}", c.name, elapsed.as_secs_f64());
        if !passed && !c.soft {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("acceptance: {hard_failures} hard criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all hard criteria passed");
}

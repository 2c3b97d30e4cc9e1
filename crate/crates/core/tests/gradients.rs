use arclength::autodiff::{grad_check, operator_suite, ParamGrads, ParamKind, ParamStore, Tape, Tensor};
use arclength::datagen::{generate, ExampleTriple, GenSpec};
use arclength::models::{self, ModelConfig, ModelKind};
use arclength::training::{batch_loss, triple_loss, triple_loss_with_grads};
use arclength::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        n_points: 24,
        ..ModelConfig::new(kind)
    }
}

fn triples(n: usize, points: usize) -> Vec<ExampleTriple> {
    let spec = GenSpec {
        n_examples: n,
        points_per_curve: points,
        holdout_size: 0,
        rng_seed: 17,
        ..GenSpec::default()
    };
    generate(&spec).unwrap().train
}

#[test]
fn every_operator_passes() {
    for seed in 0..3 {
        for (name, report) in operator_suite(seed, EPS, TOL).unwrap() {
            assert!(report.passed, "{name}: {report:?}");
        }
    }
}

#[test]
fn composed_losses_pass_on_small_models() {
    let data = triples(4, 24);
    for kind in [ModelKind::ArcLengthNet, ModelKind::LstmNet] {
        let config = small_config(kind);
        for seed in 0..2 {
            let store = models::init(&config, seed).unwrap();
            let triple = &data[seed as usize];
            let r = grad_check(&store, |s| triple_loss_with_grads(&config, s, triple, 0.01), EPS, TOL).unwrap();
            assert!(r.passed, "{kind} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn uncentred_input_also_checks() {
    let data = triples(1, 24);
    let config = ModelConfig {
        center_input: false,
        ..small_config(ModelKind::ArcLengthNet)
    };
    let store = models::init(&config, 3).unwrap();
    let r = grad_check(&store, |s| triple_loss_with_grads(&config, s, &data[0], 0.01), EPS, TOL).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn batch_gradient_passes() {
    let data = triples(5, 24);
    let batch: Vec<&ExampleTriple> = data.iter().collect();
    for kind in [ModelKind::ArcLengthNet, ModelKind::LstmNet] {
        let config = small_config(kind);
        let store = models::init(&config, 9).unwrap();
        let r = grad_check(&store, |s| batch_loss(&config, s, &batch, 0.01), EPS, TOL).unwrap();
        assert!(r.passed, "{kind}: {r:?}");
    }
}

#[test]
fn value_only_loss_matches_taped_loss() {
    let data = triples(3, 24);
    for kind in [ModelKind::ArcLengthNet, ModelKind::LstmNet] {
        let config = small_config(kind);
        let store = models::init(&config, 1).unwrap();
        for t in &data {
            let (taped, _) = triple_loss_with_grads(&config, &store, t, 0.01).unwrap();
            let plain = triple_loss(&config, &store, t, 0.01).unwrap();
            assert!((taped - plain).abs() <= 1e-12 * plain.max(1.0));
        }
    }
}

fn store_xy() -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("x", ParamKind::Weight, Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
    s.insert("y", ParamKind::Weight, Tensor::vector(vec![0.3, 0.7, -1.1])).unwrap();
    s
}

fn loss_of(store: &ParamStore, build: impl Fn(&mut Tape) -> Result<arclength::autodiff::Var>) -> (f64, ParamGrads) {
    let mut tape = Tape::new();
    let loss = build(&mut tape).unwrap();
    (tape.value(loss).item(), tape.gradients(loss, store).unwrap())
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let s = store_xy();
    let f = |t: &mut Tape| {
        let x = t.param(&s, "x")?;
        let y = t.param(&s, "y")?;
        let d = t.sub(x, y)?;
        Ok(t.sum_squares(&[d]))
    };
    let g = |t: &mut Tape| {
        let x = t.param(&s, "x")?;
        Ok(t.sum_squares(&[x]))
    };
    let (_, gf) = loss_of(&s, f);
    let (_, gg) = loss_of(&s, g);
    let (_, gsum) = loss_of(&s, |t| {
        let a = f(t)?;
        let b = g(t)?;
        let b3 = t.scale(b, 3.0);
        t.add(a, b3)
    });
    let expect: Vec<f64> = gf.flatten().iter().zip(gg.flatten()).map(|(a, b)| a + 3.0 * b).collect();
    for (a, b) in gsum.flatten().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn reused_parameters_accumulate_and_constants_are_ignored() {
    let s = store_xy();
    // L = |x|^2 + |x|^2 through two separate param nodes: dL/dx = 4x.
    let (_, g) = loss_of(&s, |t| {
        let a = t.param(&s, "x")?;
        let b = t.param(&s, "x")?;
        Ok(t.sum_squares(&[a, b]))
    });
    assert_eq!(g.tensors()[0].data(), &[4.0, -8.0, 2.0]);
    assert_eq!(g.tensors()[1].data(), &[0.0, 0.0, 0.0]);

    // y enters only as a constant copy.
    let (_, g) = loss_of(&s, |t| {
        let x = t.param(&s, "x")?;
        let y = t.constant(s.get("y").unwrap().value.clone());
        t.mse(x, y)
    });
    assert_eq!(g.tensors()[1].data(), &[0.0, 0.0, 0.0]);
    let expect: Vec<f64> = [1.0 - 0.3, -2.0 - 0.7, 0.5 + 1.1].iter().map(|d| 2.0 * d / 3.0).collect();
    for (a, b) in g.tensors()[0].data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn penalty_gradient_skips_biases() {
    let mut s = ParamStore::new();
    s.insert("w", ParamKind::Weight, Tensor::vector(vec![1.0, -3.0])).unwrap();
    s.insert("b", ParamKind::Bias, Tensor::vector(vec![5.0])).unwrap();
    let (v, g) = loss_of(&s, |t| Ok(t.l2_penalty(&s)));
    assert_eq!(v, 10.0);
    assert_eq!(g.tensors()[0].data(), &[2.0, -6.0]);
    assert_eq!(g.tensors()[1].data(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let s = store_xy();
    let mut tape = Tape::new();
    let x = tape.param(&s, "x").unwrap();
    assert!(tape.gradients(x, &s).is_err());
}

#[test]
fn a_wrong_gradient_is_caught() {
    let data = triples(1, 24);
    let config = small_config(ModelKind::ArcLengthNet);
    let store = models::init(&config, 0).unwrap();
    let r = grad_check(
        &store,
        |s| {
            let (v, mut g) = triple_loss_with_grads(&config, s, &data[0], 0.01)?;
            g.scale(1.01);
            Ok((v, g))
        },
        EPS,
        TOL,
    )
    .unwrap();
    assert!(!r.passed);
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamKind, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error. Coordinates with smaller
/// gradients are judged by absolute error, since central differences on a
/// loss of size ~100 carry roundoff near 1e-9.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the gradient returned by `f` against central differences
/// `(f(θ + ε) - f(θ - ε)) / 2ε` on every coordinate of every parameter.
///
/// `f` returns the loss value and its gradient for the given store.
pub fn grad_check<F>(store: &ParamStore, f: F, epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
{
    if !(epsilon > 0.0 && tolerance > 0.0) {
        return Err(Error::invalid("epsilon and tolerance must be positive"));
    }
    let (_, analytic) = f(store)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
        epsilon,
        tolerance,
        passed: true,
    };
    for (pi, grad) in analytic.tensors().iter().enumerate() {
        for k in 0..grad.len() {
            let original = store.params()[pi].value.data()[k];
            probe.params_mut()[pi].value.data_mut()[k] = original + epsilon;
            let (up, _) = f(&probe)?;
            probe.params_mut()[pi].value.data_mut()[k] = original - epsilon;
            let (down, _) = f(&probe)?;
            probe.params_mut()[pi].value.data_mut()[k] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if !err.is_finite() || err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = Some((store.params()[pi].name.clone(), k));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// One small graph per tape operator: parameter shapes and the graph, whose
/// output is reduced to a scalar by an MSE against a fixed random target.
fn operator_cases() -> Vec<(&'static str, Vec<(ParamKind, Vec<usize>)>, Build)> {
    use ParamKind::{Bias, Weight};
    vec![
        ("conv1d", vec![(Weight, vec![2, 7]), (Weight, vec![3, 2, 3]), (Bias, vec![3])], |t, p| {
            t.conv1d(p[0], p[1], p[2])
        }),
        ("affine", vec![(Weight, vec![5]), (Weight, vec![4, 5]), (Bias, vec![4])], |t, p| {
            t.affine(p[0], p[1], p[2])
        }),
        ("relu", vec![(Weight, vec![6])], |t, p| Ok(t.relu(p[0]))),
        ("add", vec![(Weight, vec![4]), (Weight, vec![4])], |t, p| t.add(p[0], p[1])),
        ("sub", vec![(Weight, vec![4]), (Weight, vec![4])], |t, p| t.sub(p[0], p[1])),
        ("scale", vec![(Weight, vec![4])], |t, p| Ok(t.scale(p[0], -1.7))),
        ("flatten", vec![(Weight, vec![2, 3])], |t, p| Ok(t.flatten(p[0]))),
        ("concat", vec![(Weight, vec![2]), (Weight, vec![3]), (Weight, vec![1])], |t, p| {
            t.concat(&[p[0], p[1], p[2]])
        }),
        ("slice", vec![(Weight, vec![6])], |t, p| t.slice(p[0], 2, 3)),
        ("lstm_cell", lstm_shapes(), |t, p| {
            let (h, c) = t.lstm_cell(p[0], p[1], p[2], p[3], p[4], p[5])?;
            t.concat(&[h, c])
        }),
        ("lstm_unrolled", lstm_shapes(), |t, p| {
            let (mut h, mut c) = (p[1], p[2]);
            for _ in 0..4 {
                (h, c) = t.lstm_cell(p[0], h, c, p[3], p[4], p[5])?;
            }
            Ok(h)
        }),
        ("mse", vec![(Weight, vec![4]), (Weight, vec![4])], |t, p| t.mse(p[0], p[1])),
        ("sum_squares", vec![(Weight, vec![3]), (Weight, vec![2, 2])], |t, p| Ok(t.sum_squares(&[p[0], p[1]]))),
    ]
}

fn lstm_shapes() -> Vec<(ParamKind, Vec<usize>)> {
    use ParamKind::{Bias, Weight};
    vec![
        (Weight, vec![2]),
        (Weight, vec![3]),
        (Weight, vec![3]),
        (Weight, vec![12, 2]),
        (Weight, vec![12, 3]),
        (Bias, vec![12]),
    ]
}

/// Values in `±[0.1, 1.1)`, away from the ReLU kink.
fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.1);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Runs [`grad_check`] on every tape operator, plus the L2 penalty.
pub fn operator_suite(seed: u64, epsilon: f64, tolerance: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for (name, shapes, build) in operator_cases() {
        let mut store = ParamStore::new();
        for (i, (kind, shape)) in shapes.iter().enumerate() {
            store.insert(&format!("p{i}"), *kind, random_tensor(shape, &mut rng))?;
        }
        let out_len = {
            let mut tape = Tape::new();
            let vars = bind_all(&mut tape, &store);
            let out = build(&mut tape, &vars)?;
            tape.value(out).len()
        };
        let target = random_tensor(&[out_len], &mut rng);
        let f = |s: &ParamStore| -> Result<(f64, ParamGrads)> {
            let mut tape = Tape::new();
            let vars = bind_all(&mut tape, s);
            let out = build(&mut tape, &vars)?;
            let loss = if out_len == 1 {
                out
            } else {
                let flat = tape.flatten(out);
                let t = tape.constant(target.clone());
                tape.mse(flat, t)?
            };
            Ok((tape.value(loss).item(), tape.gradients(loss, s)?))
        };
        reports.push((name, grad_check(&store, f, epsilon, tolerance)?));
    }

    let mut store = ParamStore::new();
    store.insert("w", ParamKind::Weight, random_tensor(&[3, 2], &mut rng))?;
    store.insert("b", ParamKind::Bias, random_tensor(&[2], &mut rng))?;
    let penalty = |s: &ParamStore| -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new();
        let loss = tape.l2_penalty(s);
        Ok((tape.value(loss).item(), tape.gradients(loss, s)?))
    };
    reports.push(("l2_penalty", grad_check(&store, penalty, epsilon, tolerance)?));
    Ok(reports)
}

fn bind_all(tape: &mut Tape, store: &ParamStore) -> Vec<Var> {
    (0..store.len()).map(|i| tape.param_at(store, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamKind, Tape, Tensor};

    fn square(store: &ParamStore) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new();
        let x = tape.param(store, "theta")?;
        let loss = tape.sum_squares(&[x]);
        Ok((tape.value(loss).item(), tape.gradients(loss, store)?))
    }

    fn theta(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", ParamKind::Weight, Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn quadratic_matches() {
        let r = grad_check(&theta(1.0), square, 1e-5, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.worst_analytic - 2.0).abs() < 1e-12);
        assert!((r.worst_numeric - 2.0).abs() < 1e-8);
    }

    #[test]
    fn corrupted_backward_fails() {
        let doubled = |s: &ParamStore| {
            let (v, g) = square(s)?;
            let mut twice = g.clone();
            twice.add_assign(&g);
            Ok((v, twice))
        };
        let r = grad_check(&theta(1.0), doubled, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert!((r.max_relative_error - 0.5).abs() < 1e-6);
    }
}

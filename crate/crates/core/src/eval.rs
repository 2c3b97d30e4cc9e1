//! Error metrics, axiom checks and robustness studies for length predictors.
//!
//! Every curve of a triple counts as its own `(curve, true length)` example
//! unless a function says otherwise. Predictions are computed in parallel and
//! reduced in input order, so reports do not depend on the thread count.
//!
//! Pass/fail thresholds in this module are harness choices for judging a
//! trained model; they are not properties of the length functional itself.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{ExampleTriple, GenSpec};
use crate::error::{Error, Result};
use crate::geometry::{apply_isometry, polyline_length, sample, AnalyticSine, Isometry, Point2, SampledCurve};
use crate::models::Model;

/// Mean |O(s1) - O(s2) - O(s3)| allowed, relative to the mean of len1.
pub const ADDITIVITY_RELATIVE_TOLERANCE: f64 = 0.05;
/// Max prediction spread across isometries, relative to the curve length.
pub const INVARIANCE_RELATIVE_SPREAD: f64 = 0.05;
pub const MONOTONICITY_MIN_CORRELATION: f64 = 0.99;
pub const MONOTONICITY_SLOPE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MIN_AXIOM_ITEMS: usize = 100;
pub const INVARIANCE_CURVES: usize = 100;
pub const INVARIANCE_ISOMETRIES: usize = 20;

pub trait LengthPredictor: Sync {
    fn predict(&self, curve: &SampledCurve) -> Result<f64>;
}

impl LengthPredictor for Model {
    fn predict(&self, curve: &SampledCurve) -> Result<f64> {
        Model::predict(self, curve)
    }
}

/// The chord-sum estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChordSum;

impl LengthPredictor for ChordSum {
    fn predict(&self, curve: &SampledCurve) -> Result<f64> {
        Ok(polyline_length(curve))
    }
}

impl<F> LengthPredictor for F
where
    F: Fn(&SampledCurve) -> Result<f64> + Sync,
{
    fn predict(&self, curve: &SampledCurve) -> Result<f64> {
        self(curve)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub rmlr: f64,
    pub mean_true_length: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_predictions(predicted: &[f64], truth: &[f64]) -> Result<Metrics> {
        if predicted.len() != truth.len() {
            return Err(Error::invalid("prediction and truth counts differ"));
        }
        if truth.is_empty() {
            return Err(Error::invalid("cannot compute metrics of an empty set"));
        }
        let n = truth.len() as f64;
        let mse = predicted
            .iter()
            .zip(truth)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let mean_true_length = truth.iter().sum::<f64>() / n;
        if !(mean_true_length > 0.0) {
            return Err(Error::invalid("mean true length must be positive"));
        }
        let rmse = mse.sqrt();
        Ok(Metrics {
            mse,
            rmse,
            rmlr: rmse / mean_true_length,
            mean_true_length,
            n: truth.len(),
        })
    }

    /// Mean signed error `E[prediction - truth]`.
    pub fn bias(predicted: &[f64], truth: &[f64]) -> f64 {
        predicted.iter().zip(truth).map(|(p, t)| p - t).sum::<f64>() / truth.len().max(1) as f64
    }
}

/// Every curve of every triple with its label.
pub fn per_curve_examples(triples: &[ExampleTriple]) -> Vec<(&SampledCurve, f64)> {
    triples.iter().flat_map(|t| t.curves()).collect()
}

/// Only the whole curves `s1`.
pub fn s1_examples(triples: &[ExampleTriple]) -> Vec<(&SampledCurve, f64)> {
    triples.iter().map(|t| (&t.s1, t.len1)).collect()
}

pub fn predict_all<P: LengthPredictor + ?Sized>(predictor: &P, curves: &[&SampledCurve]) -> Result<Vec<f64>> {
    curves.par_iter().map(|c| predictor.predict(c)).collect()
}

pub fn evaluate<P: LengthPredictor + ?Sized>(predictor: &P, examples: &[(&SampledCurve, f64)]) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let curves: Vec<&SampledCurve> = examples.iter().map(|(c, _)| *c).collect();
    let truth: Vec<f64> = examples.iter().map(|(_, l)| *l).collect();
    Metrics::from_predictions(&predict_all(predictor, &curves)?, &truth)
}

/// `(true_length, predicted_length)` rows for plotting.
pub fn write_scatter<W: Write>(w: &mut W, truth: &[f64], predicted: &[f64]) -> Result<()> {
    writeln!(w, "true_length,predicted_length")?;
    for (t, p) in truth.iter().zip(predicted) {
        writeln!(w, "{t},{p}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub mean_abs: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                mean_abs: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        Summary {
            n,
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_abs: values.iter().map(|v| v.abs()).sum::<f64>() / nf,
        }
    }
}

/// Pearson correlation and least-squares `(slope, intercept)` of `y` on `x`.
/// `None` when either side has zero variance.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    let slope = sxy / sxx;
    Some((r, slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityCheck {
    /// `O(s1) - O(s2) - O(s3)` over triples.
    pub residual: Summary,
    pub relative_mean_abs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCheck {
    /// Per-curve `max - min` of predictions across isometries.
    pub spread: Summary,
    /// Per-curve spread divided by the true length.
    pub relative_spread: Summary,
    pub isometries_per_curve: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonNegativityCheck {
    pub predictions: usize,
    pub negative_fraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub n: usize,
    pub pearson: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub additivity: AdditivityCheck,
    pub invariance: InvarianceCheck,
    pub non_negativity: NonNegativityCheck,
    pub monotonicity: MonotonicityCheck,
    /// Per-curve `(true, predicted)` pairs behind the monotonicity fit.
    #[serde(skip)]
    pub scatter: Vec<(f64, f64)>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.additivity.passed && self.invariance.passed && self.non_negativity.passed && self.monotonicity.passed
    }

    /// One row per statistic: `axiom,statistic,value,threshold,passed`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
        let a = &self.additivity;
        let i = &self.invariance;
        let n = &self.non_negativity;
        let m = &self.monotonicity;
        let (slo, shi) = MONOTONICITY_SLOPE_RANGE;
        let rows: Vec<(&str, &str, String, String, bool)> = vec![
            ("additivity", "residual_mean", a.residual.mean.to_string(), String::new(), a.passed),
            ("additivity", "residual_std", a.residual.std.to_string(), String::new(), a.passed),
            ("additivity", "residual_max_abs", a.residual.min.abs().max(a.residual.max.abs()).to_string(), String::new(), a.passed),
            ("additivity", "relative_mean_abs", a.relative_mean_abs.to_string(), format!("<= {ADDITIVITY_RELATIVE_TOLERANCE} (harness choice)"), a.passed),
            ("invariance", "spread_mean", i.spread.mean.to_string(), String::new(), i.passed),
            ("invariance", "spread_max", i.spread.max.to_string(), String::new(), i.passed),
            ("invariance", "relative_spread_max", i.relative_spread.max.to_string(), format!("<= {INVARIANCE_RELATIVE_SPREAD} (harness choice)"), i.passed),
            ("non_negativity", "negative_fraction", n.negative_fraction.to_string(), "== 0".into(), n.passed),
            ("monotonicity", "pearson", opt(m.pearson), format!(">= {MONOTONICITY_MIN_CORRELATION} (harness choice)"), m.passed),
            ("monotonicity", "slope", opt(m.slope), format!("in [{slo}, {shi}] (harness choice)"), m.passed),
            ("monotonicity", "intercept", opt(m.intercept), String::new(), m.passed),
        ];
        writeln!(w, "axiom,statistic,value,threshold,passed")?;
        for (axiom, stat, value, threshold, passed) in rows {
            writeln!(w, "{axiom},{stat},{value},{threshold},{passed}")?;
        }
        Ok(())
    }
}

/// Checks additivity, isometry invariance, non-negativity and monotonicity of
/// a predictor on `holdout`.
///
/// Invariance uses the first [`INVARIANCE_CURVES`] `s1` curves: each is moved
/// to have its centroid at the origin, then rotated and translated by
/// [`INVARIANCE_ISOMETRIES`] random isometries drawn from the spec's ranges.
pub fn axiom_suite<P: LengthPredictor + ?Sized>(
    predictor: &P,
    holdout: &[ExampleTriple],
    spec: &GenSpec,
    rng_seed: u64,
) -> Result<AxiomReport> {
    if holdout.len() < MIN_AXIOM_ITEMS {
        return Err(Error::invalid(format!(
            "axiom suite needs at least {MIN_AXIOM_ITEMS} holdout triples, got {}",
            holdout.len()
        )));
    }
    let examples = per_curve_examples(holdout);
    let curves: Vec<&SampledCurve> = examples.iter().map(|(c, _)| *c).collect();
    let truth: Vec<f64> = examples.iter().map(|(_, l)| *l).collect();
    let preds = predict_all(predictor, &curves)?;

    let residuals: Vec<f64> = preds.chunks_exact(3).map(|p| p[0] - p[1] - p[2]).collect();
    let residual = Summary::of(&residuals);
    let mean_len1 = holdout.iter().map(|t| t.len1).sum::<f64>() / holdout.len() as f64;
    let relative_mean_abs = residual.mean_abs / mean_len1;
    let additivity = AdditivityCheck {
        residual,
        relative_mean_abs,
        passed: relative_mean_abs <= ADDITIVITY_RELATIVE_TOLERANCE,
    };

    let negatives = preds.iter().filter(|&&p| p < 0.0).count();
    let non_negativity = NonNegativityCheck {
        predictions: preds.len(),
        negative_fraction: negatives as f64 / preds.len() as f64,
        passed: negatives == 0,
    };

    let fit = linear_fit(&truth, &preds);
    let (slo, shi) = MONOTONICITY_SLOPE_RANGE;
    let monotonicity = MonotonicityCheck {
        n: preds.len(),
        pearson: fit.map(|f| f.0),
        slope: fit.map(|f| f.1),
        intercept: fit.map(|f| f.2),
        passed: fit.is_some_and(|(r, s, _)| r >= MONOTONICITY_MIN_CORRELATION && (slo..=shi).contains(&s)),
    };

    let invariance = invariance_check(predictor, &holdout[..INVARIANCE_CURVES], spec, rng_seed)?;

    Ok(AxiomReport {
        additivity,
        invariance,
        non_negativity,
        monotonicity,
        scatter: truth.into_iter().zip(preds).collect(),
    })
}

fn random_isometry<R: Rng>(spec: &GenSpec, rng: &mut R) -> Isometry {
    let u = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
    let angle = u(rng, spec.rotation_range);
    let tx = u(rng, spec.translation_range);
    let ty = u(rng, spec.translation_range);
    Isometry::new(angle, Point2::new(tx, ty))
}

fn invariance_check<P: LengthPredictor + ?Sized>(
    predictor: &P,
    triples: &[ExampleTriple],
    spec: &GenSpec,
    rng_seed: u64,
) -> Result<InvarianceCheck> {
    let per_curve: Vec<(f64, f64)> = triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let c = t.s1.centroid();
            let centered = apply_isometry(&t.s1, &Isometry::new(0.0, Point2::new(-c.x, -c.y)));
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for _ in 0..INVARIANCE_ISOMETRIES {
                let moved = apply_isometry(&centered, &random_isometry(spec, &mut rng));
                let p = predictor.predict(&moved)?;
                lo = lo.min(p);
                hi = hi.max(p);
            }
            Ok((hi - lo, (hi - lo) / t.len1))
        })
        .collect::<Result<_>>()?;
    let spread: Vec<f64> = per_curve.iter().map(|s| s.0).collect();
    let relative: Vec<f64> = per_curve.iter().map(|s| s.1).collect();
    let relative_spread = Summary::of(&relative);
    Ok(InvarianceCheck {
        spread: Summary::of(&spread),
        passed: relative_spread.max <= INVARIANCE_RELATIVE_SPREAD,
        relative_spread,
        isometries_per_curve: INVARIANCE_ISOMETRIES,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub model: Metrics,
    pub chord: Metrics,
    pub model_mean_bias: f64,
    pub chord_mean_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleRow {
    pub factor: usize,
    pub coarse_points: usize,
    pub model: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub noise: Vec<NoiseRow>,
    pub subsample: Vec<SubsampleRow>,
}

impl RobustnessReport {
    pub fn write_noise_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "sigma,model_mse,model_rmse,model_rmlr,model_bias,chord_mse,chord_rmse,chord_rmlr,chord_bias,n"
        )?;
        for r in &self.noise {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.sigma,
                r.model.mse,
                r.model.rmse,
                r.model.rmlr,
                r.model_mean_bias,
                r.chord.mse,
                r.chord.rmse,
                r.chord.rmlr,
                r.chord_mean_bias,
                r.model.n
            )?;
        }
        Ok(())
    }

    pub fn write_subsample_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "factor,coarse_points,model_mse,model_rmse,model_rmlr,n")?;
        for r in &self.subsample {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.factor, r.coarse_points, r.model.mse, r.model.rmse, r.model.rmlr, r.model.n
            )?;
        }
        Ok(())
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn add_noise<R: Rng>(curve: &SampledCurve, sigma: f64, rng: &mut R) -> Result<SampledCurve> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(curve.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    SampledCurve::new(
        curve
            .points()
            .iter()
            .map(|p| Point2::new(p.x + normal.sample(rng), p.y + normal.sample(rng)))
            .collect(),
    )
}

/// Model and chord-sum metrics on noisy copies of `examples`, one row per sigma.
pub fn noise_robustness<P: LengthPredictor + ?Sized>(
    predictor: &P,
    examples: &[(&SampledCurve, f64)],
    sigmas: &[f64],
    rng_seed: u64,
) -> Result<Vec<NoiseRow>> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples for noise study"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {s}")));
    }
    let truth: Vec<f64> = examples.iter().map(|(_, l)| *l).collect();
    sigmas
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let pairs: Vec<(f64, f64)> = examples
                .par_iter()
                .enumerate()
                .map(|(i, (curve, _))| {
                    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                    rng.set_stream(((si as u64) << 40) | i as u64);
                    let noisy = add_noise(curve, sigma, &mut rng)?;
                    Ok((predictor.predict(&noisy)?, polyline_length(&noisy)))
                })
                .collect::<Result<_>>()?;
            let model: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let chord: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            Ok(NoiseRow {
                sigma,
                model: Metrics::from_predictions(&model, &truth)?,
                chord: Metrics::from_predictions(&chord, &truth)?,
                model_mean_bias: Metrics::bias(&model, &truth),
                chord_mean_bias: Metrics::bias(&chord, &truth),
            })
        })
        .collect()
}

/// Samples `curve` at `n_points / factor` points and linearly interpolates
/// that polyline back to `n_points` points uniformly spaced in the parameter.
pub fn coarse_resample(curve: &AnalyticSine, n_points: usize, factor: usize) -> Result<SampledCurve> {
    if factor == 0 {
        return Err(Error::invalid("subsampling factor must be at least 1"));
    }
    let m = n_points / factor;
    if m < 2 || n_points < 2 {
        return Err(Error::invalid(format!(
            "factor {factor} leaves {m} of {n_points} points; need at least 2"
        )));
    }
    let coarse = sample(curve, m)?;
    let knots = coarse.points();
    let points = (0..n_points)
        .map(|i| {
            let t = (i * (m - 1)) as f64 / (n_points - 1) as f64;
            let j = (t.floor() as usize).min(m - 2);
            let frac = t - j as f64;
            if frac == 0.0 {
                return knots[j];
            }
            let (a, b) = (knots[j], knots[j + 1]);
            Point2::new(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y))
        })
        .collect();
    SampledCurve::new(points)
}

/// Model metrics on curves rebuilt from coarser samples, one row per factor.
pub fn subsample_robustness<P: LengthPredictor + ?Sized>(
    predictor: &P,
    analytic_curves: &[(AnalyticSine, f64)],
    n_points: usize,
    factors: &[usize],
) -> Result<Vec<SubsampleRow>> {
    if analytic_curves.is_empty() {
        return Err(Error::invalid("no curves for subsampling study"));
    }
    let truth: Vec<f64> = analytic_curves.iter().map(|(_, l)| *l).collect();
    factors
        .iter()
        .map(|&factor| {
            let preds: Vec<f64> = analytic_curves
                .par_iter()
                .map(|(c, _)| predictor.predict(&coarse_resample(c, n_points, factor)?))
                .collect::<Result<_>>()?;
            Ok(SubsampleRow {
                factor,
                coarse_points: n_points / factor,
                model: Metrics::from_predictions(&preds, &truth)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn metrics_perfect_and_offset() {
        let truth = [2.0, 4.0, 6.0];
        let m = Metrics::from_predictions(&truth, &truth).unwrap();
        assert_eq!((m.mse, m.rmlr), (0.0, 0.0));
        let off: Vec<f64> = truth.iter().map(|t| t + 1.0).collect();
        let m = Metrics::from_predictions(&off, &truth).unwrap();
        assert_eq!((m.mse, m.rmse), (1.0, 1.0));
        assert!((m.rmlr - 0.25).abs() < 1e-15);
    }

    #[test]
    fn metrics_errors() {
        assert!(Metrics::from_predictions(&[], &[]).is_err());
        assert!(Metrics::from_predictions(&[1.0], &[0.0]).is_err());
        assert!(Metrics::from_predictions(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (r, s, b) = linear_fit(&x, &y).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && (s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        assert!(linear_fit(&x, &[3.0; 4]).is_none());
    }

    #[test]
    fn coarse_resample_factor_one_is_identity() {
        let c = AnalyticSine::new(1.3, 0.2, Isometry::new(0.5, Point2::new(1.0, 2.0)), (0.0, 7.0)).unwrap();
        assert_eq!(coarse_resample(&c, 200, 1).unwrap(), sample(&c, 200).unwrap());
    }

    #[test]
    fn coarse_resample_line_is_exact() {
        let c = AnalyticSine::new(0.0, 0.0, Isometry::new(0.9, Point2::new(-1.0, 2.0)), (0.0, 5.0)).unwrap();
        let exact = sample(&c, 200).unwrap();
        for f in [2, 4, 8] {
            let r = coarse_resample(&c, 200, f).unwrap();
            for (a, b) in r.points().iter().zip(exact.points()) {
                assert!(a.distance(b) < 1e-12);
            }
        }
    }

    #[test]
    fn coarse_resample_rejects_bad_factor() {
        let c = AnalyticSine::new(1.0, 0.0, Isometry::identity(), (0.0, PI)).unwrap();
        assert!(coarse_resample(&c, 200, 0).is_err());
        assert!(coarse_resample(&c, 200, 101).is_err());
    }

    #[test]
    fn noise_zero_is_clean() {
        let c = sample(&AnalyticSine::new(1.0, 0.0, Isometry::identity(), (0.0, PI)).unwrap(), 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_noise(&c, 0.0, &mut rng).unwrap(), c);
        assert!(add_noise(&c, -1.0, &mut rng).is_err());
    }
}

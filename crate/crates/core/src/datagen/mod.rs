//! Synthetic dataset of transformed sine curves with exact length labels.
//!
//! Every example is a triple `(s1, s2, s3)`: a random sine `s1` and the two
//! pieces obtained by cutting it at a random parameter, each resampled to the
//! same number of points. Labels come from quadrature, never from chord sums,
//! so `len1 = len2 + len3` holds up to quadrature tolerance.
//!
//! Each triple draws from its own ChaCha stream keyed by `(seed, index)`, which
//! makes generation order-independent: parallel and serial runs agree bit for
//! bit, and any triple's analytic curve can be recovered later with
//! [`analytic_parts`].

mod format;

use std::f64::consts::PI;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::geometry::{analytic_length, sample, AnalyticSine, Isometry, Point2, SampledCurve};

pub use format::{load, save, DATASET_MAGIC, DATASET_SCHEMA_VERSION};

/// Cuts are drawn from the middle `1 - 2 * CUT_MARGIN` of the interval.
pub const CUT_MARGIN: f64 = 0.1;

const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_examples: usize,
    pub points_per_curve: usize,
    pub holdout_size: usize,
    pub train_fraction: f64,
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub rotation_range: (f64, f64),
    pub translation_range: (f64, f64),
    pub interval_span_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_examples: 20_000,
            points_per_curve: 200,
            holdout_size: 5_000,
            train_fraction: 0.8,
            amplitude_range: (0.5, 2.0),
            phase_range: (0.0, 2.0 * PI),
            rotation_range: (0.0, 2.0 * PI),
            translation_range: (-5.0, 5.0),
            interval_span_range: (PI, 4.0 * PI),
            rng_seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::invalid("n_examples must be positive"));
        }
        if self.points_per_curve < 2 {
            return Err(Error::invalid("points_per_curve must be at least 2"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        for (name, (lo, hi)) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.amplitude_range.0 < 0.0 {
            return Err(Error::invalid("amplitude range must be non-negative"));
        }
        if self.interval_span_range.0 <= 0.0 {
            return Err(Error::invalid("interval span must be positive"));
        }
        Ok(())
    }

    fn ranges(&self) -> [(&'static str, (f64, f64)); 5] {
        [
            ("amplitude", self.amplitude_range),
            ("phase", self.phase_range),
            ("rotation", self.rotation_range),
            ("translation", self.translation_range),
            ("interval span", self.interval_span_range),
        ]
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "examples" | "n_examples" => self.n_examples = parse_value(key, value)?,
            "points" | "points_per_curve" => self.points_per_curve = parse_value(key, value)?,
            "holdout" | "holdout_size" => self.holdout_size = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "seed" | "rng_seed" => self.rng_seed = parse_value(key, value)?,
            "amplitude_min" => self.amplitude_range.0 = parse_value(key, value)?,
            "amplitude_max" => self.amplitude_range.1 = parse_value(key, value)?,
            "phase_min" => self.phase_range.0 = parse_value(key, value)?,
            "phase_max" => self.phase_range.1 = parse_value(key, value)?,
            "rotation_min" => self.rotation_range.0 = parse_value(key, value)?,
            "rotation_max" => self.rotation_range.1 = parse_value(key, value)?,
            "translation_min" => self.translation_range.0 = parse_value(key, value)?,
            "translation_max" => self.translation_range.1 = parse_value(key, value)?,
            "span_min" => self.interval_span_range.0 = parse_value(key, value)?,
            "span_max" => self.interval_span_range.1 = parse_value(key, value)?,
            _ => return Err(Error::invalid(format!("unknown dataset setting {key:?}"))),
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("GenSpec serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn train_count(&self) -> usize {
        ((self.n_examples as f64 * self.train_fraction).round() as usize).min(self.n_examples)
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |(lo, hi): (f64, f64)| format!("[{lo}, {hi}]");
        writeln!(f, "examples = {}", self.n_examples)?;
        writeln!(f, "points = {}", self.points_per_curve)?;
        writeln!(f, "holdout = {}", self.holdout_size)?;
        writeln!(f, "train_fraction = {}", self.train_fraction)?;
        writeln!(f, "seed = {}", self.rng_seed)?;
        writeln!(f, "amplitude = {}", r(self.amplitude_range))?;
        writeln!(f, "phase = {}", r(self.phase_range))?;
        writeln!(f, "rotation = {}", r(self.rotation_range))?;
        writeln!(f, "translation = {}", r(self.translation_range))?;
        write!(f, "span = {}", r(self.interval_span_range))
    }
}

/// Which RNG stream produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleTriple {
    pub s1: SampledCurve,
    pub s2: SampledCurve,
    pub s3: SampledCurve,
    pub len1: f64,
    pub len2: f64,
    pub len3: f64,
    pub cut_param: f64,
    pub origin: Origin,
}

impl ExampleTriple {
    pub fn curves(&self) -> [(&SampledCurve, f64); 3] {
        [(&self.s1, self.len1), (&self.s2, self.len2), (&self.s3, self.len3)]
    }

    pub fn additivity_residual(&self) -> f64 {
        self.len1 - (self.len2 + self.len3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub spec: GenSpec,
    pub train: Vec<ExampleTriple>,
    pub test: Vec<ExampleTriple>,
    pub holdout: Vec<ExampleTriple>,
}

impl DatasetSplits {
    pub fn all(&self) -> impl Iterator<Item = &ExampleTriple> {
        self.train.iter().chain(&self.test).chain(&self.holdout)
    }
}

pub fn triple_rng(origin: Origin) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(origin.seed);
    rng.set_stream(origin.index);
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn random_sine<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> AnalyticSine {
    let amplitude = uniform(rng, spec.amplitude_range);
    let phase = uniform(rng, spec.phase_range);
    let rotation = uniform(rng, spec.rotation_range);
    let tx = uniform(rng, spec.translation_range);
    let ty = uniform(rng, spec.translation_range);
    let span = uniform(rng, spec.interval_span_range);
    AnalyticSine::new(
        amplitude,
        phase,
        Isometry::new(rotation, Point2::new(tx, ty)),
        (0.0, span),
    )
    .expect("validated spec yields a valid sine")
}

pub fn make_triple<R: Rng + ?Sized>(
    curve: &AnalyticSine,
    spec: &GenSpec,
    rng: &mut R,
    origin: Origin,
) -> Result<ExampleTriple> {
    let (lo, hi) = curve.interval();
    let cut = lo + (hi - lo) * (CUT_MARGIN + (1.0 - 2.0 * CUT_MARGIN) * rng.gen::<f64>());
    triple_with_cut(curve, spec.points_per_curve, cut, origin)
}

/// Builds the triple for an explicit cut parameter.
pub fn triple_with_cut(
    curve: &AnalyticSine,
    n_points: usize,
    cut: f64,
    origin: Origin,
) -> Result<ExampleTriple> {
    let (lo, hi) = curve.interval();
    let left = curve.restricted(lo, cut)?;
    let right = curve.restricted(cut, hi)?;
    Ok(ExampleTriple {
        s1: sample(curve, n_points)?,
        s2: sample(&left, n_points)?,
        s3: sample(&right, n_points)?,
        len1: analytic_length(curve, (lo, hi))?,
        len2: analytic_length(curve, (lo, cut))?,
        len3: analytic_length(curve, (cut, hi))?,
        cut_param: cut,
        origin,
    })
}

fn generate_one(spec: &GenSpec, origin: Origin) -> Result<ExampleTriple> {
    let mut rng = triple_rng(origin);
    let curve = random_sine(spec, &mut rng);
    make_triple(&curve, spec, &mut rng, origin)
}

/// Recovers the analytic curves behind a triple: the full sine and its two pieces.
pub fn analytic_parts(spec: &GenSpec, triple: &ExampleTriple) -> Result<[AnalyticSine; 3]> {
    let curve = random_sine(spec, &mut triple_rng(triple.origin));
    let (lo, hi) = curve.interval();
    if !(triple.cut_param > lo && triple.cut_param < hi) {
        return Err(Error::invalid(format!(
            "triple {:?} was not generated by this spec",
            triple.origin
        )));
    }
    Ok([
        curve,
        curve.restricted(lo, triple.cut_param)?,
        curve.restricted(triple.cut_param, hi)?,
    ])
}

/// Generates train/test from `seed` and the holdout from `seed + 1`.
///
/// Runs on the current rayon pool; the result does not depend on its size.
pub fn generate(spec: &GenSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let seed = spec.rng_seed;
    let mut main: Vec<Option<ExampleTriple>> = (0..spec.n_examples as u64)
        .into_par_iter()
        .map(|index| generate_one(spec, Origin { seed, index }).map(Some))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..main.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    order.shuffle(&mut shuffle_rng);

    let n_train = spec.train_count();
    let mut take = |idx: &[usize]| -> Vec<ExampleTriple> {
        idx.iter().map(|&i| main[i].take().expect("each index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);

    let holdout_seed = seed.wrapping_add(1);
    let holdout = (0..spec.holdout_size as u64)
        .into_par_iter()
        .map(|index| {
            generate_one(
                spec,
                Origin {
                    seed: holdout_seed,
                    index,
                },
            )
        })
        .collect::<Result<_>>()?;

    Ok(DatasetSplits {
        spec: spec.clone(),
        train,
        test,
        holdout,
    })
}

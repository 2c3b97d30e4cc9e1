//! Planar curves, isometries and arc length.
//!
//! Two length estimators live here. [`analytic_length`] integrates the speed
//! `|C'(p)|` of a transformed sine by adaptive Simpson quadrature and is the
//! ground truth for every label in the crate. [`polyline_length`] is the chord
//! sum of a sampled curve. Their difference is the discretization error, which
//! is non-negative and shrinks quadratically with the number of samples on
//! smooth curves.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for [`analytic_length`].
pub const QUADRATURE_TOLERANCE: f64 = 1e-9;

const MAX_SIMPSON_DEPTH: u32 = 48;
/// Levels refined unconditionally; the error estimate of a coarse level can
/// vanish by coincidence.
const MIN_SIMPSON_DEPTH: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An ordered list of at least two finite points.
///
/// Serialized as separate coordinate rows, `{"xs": [...], "ys": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoordRows", into = "CoordRows")]
pub struct SampledCurve {
    points: Vec<Point2>,
}

#[derive(Serialize, Deserialize)]
struct CoordRows {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl From<SampledCurve> for CoordRows {
    fn from(c: SampledCurve) -> Self {
        CoordRows {
            xs: c.xs().collect(),
            ys: c.ys().collect(),
        }
    }
}

impl TryFrom<CoordRows> for SampledCurve {
    type Error = Error;

    fn try_from(rows: CoordRows) -> Result<Self> {
        SampledCurve::from_coords(&rows.xs, &rows.ys)
    }
}

impl SampledCurve {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "a sampled curve needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(SampledCurve { points })
    }

    /// Builds a curve from separate coordinate rows.
    pub fn from_coords(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::invalid(format!(
                "coordinate rows differ in length ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        Self::new(xs.iter().zip(ys).map(|(&x, &y)| Point2::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    // A valid curve is never empty; provided for clippy's sake.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.x)
    }

    pub fn ys(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.y)
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    }

    /// Contiguous sub-curve `points[start..end]`.
    pub fn subcurve(&self, start: usize, end: usize) -> Result<SampledCurve> {
        if start >= end || end > self.points.len() || end - start < 2 {
            return Err(Error::invalid(format!(
                "sub-curve range {start}..{end} invalid for {} points",
                self.points.len()
            )));
        }
        Ok(SampledCurve {
            points: self.points[start..end].to_vec(),
        })
    }
}

/// Rotation about the origin followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    pub rotation_angle: f64,
    pub translation: Point2,
}

impl Default for Isometry {
    fn default() -> Self {
        Self::identity()
    }
}

impl Isometry {
    pub const fn identity() -> Self {
        Isometry {
            rotation_angle: 0.0,
            translation: Point2::ORIGIN,
        }
    }

    pub const fn new(rotation_angle: f64, translation: Point2) -> Self {
        Isometry {
            rotation_angle,
            translation,
        }
    }

    /// Row-major `[[cos, -sin], [sin, cos]]`.
    pub fn rotation_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_angle.sin_cos();
        [[c, -s], [s, c]]
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let [[a, b], [c, d]] = self.rotation_matrix();
        Point2::new(
            a * p.x + b * p.y + self.translation.x,
            c * p.x + d * p.y + self.translation.y,
        )
    }
}

/// `C(p) = R (p, a sin(p + phase)) + T` on a closed parameter interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSine {
    amplitude: f64,
    phase: f64,
    isometry: Isometry,
    interval: (f64, f64),
}

impl AnalyticSine {
    /// A negative amplitude is folded into the phase: `(-a, phi) -> (a, phi + pi)`.
    pub fn new(amplitude: f64, phase: f64, isometry: Isometry, interval: (f64, f64)) -> Result<Self> {
        let (lo, hi) = interval;
        let all_finite = [amplitude, phase, isometry.rotation_angle, lo, hi].iter().all(|v| v.is_finite())
            && isometry.translation.is_finite();
        if !all_finite {
            return Err(Error::invalid("sine parameters must be finite"));
        }
        if lo >= hi {
            return Err(Error::invalid(format!("empty parameter interval [{lo}, {hi}]")));
        }
        let (amplitude, phase) = if amplitude < 0.0 {
            (-amplitude, phase + PI)
        } else {
            (amplitude, phase)
        };
        Ok(AnalyticSine {
            amplitude,
            phase,
            isometry,
            interval,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn isometry(&self) -> Isometry {
        self.isometry
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn span(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    /// Same curve on `[lo, hi]`, which must lie inside the current interval.
    pub fn restricted(&self, lo: f64, hi: f64) -> Result<AnalyticSine> {
        self.check_subinterval(lo, hi)?;
        Ok(AnalyticSine {
            interval: (lo, hi),
            ..*self
        })
    }

    pub fn with_isometry(&self, isometry: Isometry) -> AnalyticSine {
        AnalyticSine { isometry, ..*self }
    }

    pub fn point_at(&self, p: f64) -> Point2 {
        self.isometry
            .apply(Point2::new(p, self.amplitude * (p + self.phase).sin()))
    }

    /// `|C'(p)| = sqrt(1 + a^2 cos^2(p + phase))`; rotation does not change it.
    pub fn speed(&self, p: f64) -> f64 {
        let slope = self.amplitude * (p + self.phase).cos();
        (1.0 + slope * slope).sqrt()
    }

    fn check_subinterval(&self, lo: f64, hi: f64) -> Result<()> {
        let (a, b) = self.interval;
        if !(lo.is_finite() && hi.is_finite()) || lo < a || hi > b || lo >= hi {
            return Err(Error::invalid(format!(
                "sub-interval [{lo}, {hi}] not inside [{a}, {b}]"
            )));
        }
        Ok(())
    }
}

/// Uniform parameter grid of `n` points on `[lo, hi]`; both ends are hit exactly.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + step * i as f64 })
}

pub fn sample(curve: &AnalyticSine, n_points: usize) -> Result<SampledCurve> {
    if n_points < 2 {
        return Err(Error::invalid(format!("n_points must be at least 2, got {n_points}")));
    }
    let (lo, hi) = curve.interval;
    SampledCurve::new(uniform_grid(lo, hi, n_points).map(|p| curve.point_at(p)).collect())
}

pub fn polyline_length(curve: &SampledCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| w[1].distance(&w[0]))
        .sum()
}

/// Arc length of `curve` over `[p_lo, p_hi]` by adaptive Simpson quadrature.
pub fn analytic_length(curve: &AnalyticSine, sub_interval: (f64, f64)) -> Result<f64> {
    let (lo, hi) = sub_interval;
    curve.check_subinterval(lo, hi)?;
    if curve.amplitude == 0.0 {
        return Ok(hi - lo);
    }
    // The speed has period pi. Panels of at most a quarter of that keep the
    // first Simpson estimates from aliasing into false convergence.
    let panels = ((hi - lo) / (PI / 4.0)).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let tolerance = QUADRATURE_TOLERANCE / panels as f64;
    Ok((0..panels)
        .map(|k| {
            let a = lo + k as f64 * width;
            let b = if k + 1 == panels { hi } else { a + width };
            adaptive_simpson(|p| curve.speed(p), a, b, tolerance)
        })
        .sum())
}

/// Analytic length over the full interval minus the chord sum of an
/// `n_points` sample.
pub fn discretization_error(curve: &AnalyticSine, n_points: usize) -> Result<f64> {
    let sampled = sample(curve, n_points)?;
    Ok(analytic_length(curve, curve.interval)? - polyline_length(&sampled))
}

pub fn apply_isometry(curve: &SampledCurve, iso: &Isometry) -> SampledCurve {
    SampledCurve {
        points: curve.points.iter().map(|&p| iso.apply(p)).collect(),
    }
}

/// Splits at `index`; the point at `index` ends the left half and starts the right.
pub fn split_at(curve: &SampledCurve, index: usize) -> Result<(SampledCurve, SampledCurve)> {
    let n = curve.len();
    if index < 1 || index + 2 > n {
        return Err(Error::invalid(format!(
            "split index {index} out of range 1..={} for {n} points",
            n.saturating_sub(2)
        )));
    }
    Ok((
        SampledCurve {
            points: curve.points[..=index].to_vec(),
        },
        SampledCurve {
            points: curve.points[index..].to_vec(),
        },
    ))
}

pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tolerance: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tolerance, MAX_SIMPSON_DEPTH)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tolerance: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let refined = MAX_SIMPSON_DEPTH - depth >= MIN_SIMPSON_DEPTH;
    if depth == 0 || (refined && delta.abs() <= 15.0 * tolerance) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tolerance, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tolerance, depth - 1)
}

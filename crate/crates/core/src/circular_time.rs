//! Times on the 24-hour circle.
//!
//! Clock times are regressed through their `(sin, cos)` encoding so that
//! 23:00 and 01:00 sit two hours apart rather than twenty-two. Every error
//! metric in the crate is built on [`circ_error`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DAY_HOURS: f64 = 24.0;
pub const HALF_DAY_HOURS: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircError {
    #[error("cannot decode a phase from the zero vector")]
    ZeroVector,
    #[error("metric requires at least one error value")]
    EmptyInput,
    #[error("circular error {0} lies outside [0, 12]")]
    OutOfRange(f64),
}

/// A time of day in hours, always reduced into `[0, 24)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircTime(f64);

impl CircTime {
    pub fn new(hours: f64) -> Self {
        CircTime(wrap_hours(hours))
    }

    pub fn hours(self) -> f64 {
        self.0
    }

    pub fn encode(self) -> CircPair {
        encode(self)
    }
}

impl From<f64> for CircTime {
    fn from(hours: f64) -> Self {
        CircTime::new(hours)
    }
}

/// `(sin, cos)` encoding of a time. Predicted pairs need not be unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircPair {
    pub t1: f64,
    pub t2: f64,
}

impl CircPair {
    pub fn new(t1: f64, t2: f64) -> Self {
        CircPair { t1, t2 }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.t1, self.t2]
    }

    pub fn decode(self) -> Result<CircTime, CircError> {
        decode(self)
    }
}

/// Reduce an arbitrary hour value into `[0, 24)`.
pub fn wrap_hours(hours: f64) -> f64 {
    let r = hours.rem_euclid(DAY_HOURS);
    // rem_euclid can round up to exactly 24 for tiny negative inputs
    if r >= DAY_HOURS {
        0.0
    } else {
        r
    }
}

/// Map a difference of hours into `(-12, 12]`.
pub fn unwrap_offset(hours: f64) -> f64 {
    let r = wrap_hours(hours);
    if r > HALF_DAY_HOURS {
        r - DAY_HOURS
    } else {
        r
    }
}

pub fn encode(t: CircTime) -> CircPair {
    let angle = PI * t.hours() / HALF_DAY_HOURS;
    CircPair {
        t1: angle.sin(),
        t2: angle.cos(),
    }
}

pub fn decode(p: CircPair) -> Result<CircTime, CircError> {
    if p.t1 == 0.0 && p.t2 == 0.0 {
        return Err(CircError::ZeroVector);
    }
    let angle = p.t1.atan2(p.t2).rem_euclid(2.0 * PI);
    Ok(CircTime::new(HALF_DAY_HOURS / PI * angle))
}

/// Shortest distance between two times around the clock, in `[0, 12]`.
pub fn circ_error(truth: CircTime, pred: CircTime) -> f64 {
    let d = (truth.hours() - pred.hours()).abs();
    d.min(DAY_HOURS - d)
}

/// Median of the errors; even counts average the two middle order statistics.
pub fn mae(errors: &[f64]) -> Result<f64, CircError> {
    if errors.is_empty() {
        return Err(CircError::EmptyInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// One minus the normalized area under the error survival curve on `[0, 12]`.
///
/// The survival integral of a non-negative error bounded by 12 equals its
/// mean, so this is `1 - mean(errors) / 12`.
pub fn auc(errors: &[f64]) -> Result<f64, CircError> {
    if errors.is_empty() {
        return Err(CircError::EmptyInput);
    }
    if let Some(&bad) = errors
        .iter()
        .find(|e| !(0.0..=HALF_DAY_HOURS).contains(*e))
    {
        return Err(CircError::OutOfRange(bad));
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok((1.0 - mean / HALF_DAY_HOURS).clamp(0.0, 1.0))
}

/// Circular mean of a set of times, `None` when the resultant vanishes.
pub fn circular_mean(times: &[CircTime]) -> Option<CircTime> {
    let (s, c) = times.iter().fold((0.0, 0.0), |(s, c), t| {
        let p = t.encode();
        (s + p.t1, c + p.t2)
    });
    if s.hypot(c) < 1e-12 {
        None
    } else {
        decode(CircPair::new(s, c)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_cardinal_points() {
        let p = encode(CircTime::new(0.0));
        assert_abs_diff_eq!(p.t1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.t2, 1.0, epsilon = 1e-15);
        let p = encode(CircTime::new(6.0));
        assert_abs_diff_eq!(p.t1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.t2, 0.0, epsilon = 1e-15);
        let p = encode(CircTime::new(18.0));
        assert_abs_diff_eq!(p.t1, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.t2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn decode_examples() {
        assert_abs_diff_eq!(decode(CircPair::new(1.0, 0.0)).unwrap().hours(), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(decode(CircPair::new(0.0, -1.0)).unwrap().hours(), 12.0, epsilon = 1e-12);
        // atan2(0.5, 0.5) = pi/4 -> 3 h
        assert_abs_diff_eq!(decode(CircPair::new(0.5, 0.5)).unwrap().hours(), 3.0, epsilon = 1e-12);
        assert_eq!(decode(CircPair::new(0.0, 0.0)), Err(CircError::ZeroVector));
    }

    #[test]
    fn construction_wraps() {
        assert_eq!(CircTime::new(25.0).hours(), 1.0);
        assert_eq!(CircTime::new(-1.0).hours(), 23.0);
        assert_eq!(CircTime::new(24.0).hours(), 0.0);
        assert!(CircTime::new(-1e-18).hours() < DAY_HOURS);
    }

    #[test]
    fn circ_error_examples() {
        assert_eq!(circ_error(CircTime::new(23.0), CircTime::new(1.0)), 2.0);
        assert_eq!(circ_error(CircTime::new(5.0), CircTime::new(5.0)), 0.0);
        assert_eq!(circ_error(CircTime::new(0.0), CircTime::new(12.0)), 12.0);
    }

    #[test]
    fn median_examples() {
        assert_eq!(mae(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[]), Err(CircError::EmptyInput));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let pool = [0.25, 1.5, 3.0, 0.0, 11.75, 6.5, 2.25, 9.0, 4.75, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let errs: Vec<f64> = (0..200).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let mut sorted = errs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = (sorted[99] + sorted[100]) / 2.0;
        assert_eq!(mae(&errs).unwrap(), oracle);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0; 5]).unwrap(), 1.0);
        assert_eq!(auc(&[6.0, 6.0, 6.0]).unwrap(), 0.5);
        assert_eq!(auc(&[]), Err(CircError::EmptyInput));
        assert_eq!(auc(&[1.0, 12.5]), Err(CircError::OutOfRange(12.5)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let errs: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..12.0)).collect();
        assert!((auc(&errs).unwrap() - 0.5).abs() <= 0.01);
    }

    // Trapezoidal integration of the empirical survival curve.
    fn auc_by_quadrature(errors: &[f64], steps: usize) -> f64 {
        let n = errors.len() as f64;
        let surv = |u: f64| errors.iter().filter(|&&e| e > u).count() as f64 / n;
        let h = HALF_DAY_HOURS / steps as f64;
        let mut area = 0.5 * (surv(0.0) + surv(HALF_DAY_HOURS));
        for i in 1..steps {
            area += surv(i as f64 * h);
        }
        1.0 - area * h / HALF_DAY_HOURS
    }

    #[test]
    fn auc_matches_quadrature() {
        // grid-aligned errors keep the step function exact between nodes
        let errs = [0.0, 0.5, 1.25, 3.0, 7.75, 12.0, 2.5];
        let q = auc_by_quadrature(&errs, 1_200_000);
        assert!((auc(&errs).unwrap() - q).abs() <= 1e-6, "{} vs {q}", auc(&errs).unwrap());
    }

    #[test]
    fn unwrap_offset_range() {
        assert_eq!(unwrap_offset(13.0), -11.0);
        assert_eq!(unwrap_offset(12.0), 12.0);
        assert_eq!(unwrap_offset(-12.0), 12.0);
        assert_eq!(unwrap_offset(-0.5), -0.5);
    }

    #[test]
    fn circular_mean_wraps_midnight() {
        let m = circular_mean(&[CircTime::new(23.0), CircTime::new(1.0)]).unwrap();
        assert!(circ_error(m, CircTime::new(0.0)) < 1e-12);
        assert!(circular_mean(&[CircTime::new(0.0), CircTime::new(12.0)]).is_none());
    }

    proptest! {
        #[test]
        fn round_trip(t in 0.0f64..24.0) {
            let back = decode(encode(CircTime::new(t))).unwrap();
            prop_assert!(circ_error(back, CircTime::new(t)) <= 1e-9);
        }

        #[test]
        fn encoded_pairs_are_unit(t in -100.0f64..100.0) {
            let p = encode(CircTime::new(t));
            prop_assert!((p.t1 * p.t1 + p.t2 * p.t2 - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn circ_error_symmetric_and_periodic(a in 0.0f64..24.0, b in 0.0f64..24.0, k in -3i32..4) {
            let (ta, tb) = (CircTime::new(a), CircTime::new(b));
            prop_assert_eq!(circ_error(ta, tb), circ_error(tb, ta));
            prop_assert!(circ_error(ta, CircTime::new(a + 24.0 * k as f64)) <= 1e-12);
            prop_assert!(circ_error(ta, tb) <= 12.0);
        }

        #[test]
        fn decode_scale_invariant(t in 0.0f64..24.0, c in 1e-3f64..1e3) {
            let p = encode(CircTime::new(t));
            let scaled = CircPair::new(c * p.t1, c * p.t2);
            let d = circ_error(decode(p).unwrap(), decode(scaled).unwrap());
            prop_assert!(d <= 1e-9);
        }
    }
}

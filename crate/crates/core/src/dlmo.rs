//! DLMO estimation from per-sample ICT predictions.
//!
//! Since `ICT = ZT + DLMO`, each sample yields an offset estimate
//! `(predicted ICT - ZT) mod 24`. The single rule reads it at one anchor
//! sample per person; the weighted rule combines three consecutive samples
//! with weights fitted on validation people.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circular_time::{auc, circ_error, circular_mean, mae, unwrap_offset, CircError, CircTime};
use crate::data::NormalizedCohort;

/// Width of the ZT bins pooled by [`best_zt`], in hours.
pub const ZT_BIN_HOURS: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DlmoError {
    #[error("no validation sample has both a label and a decodable prediction")]
    EmptyValidation,
    #[error("{0} people with usable anchors; at least 3 are required")]
    TooFewPeople(usize),
    #[error("offset design has rank zero")]
    SingularDesign,
    #[error("person {person} lacks samples at anchor {anchor}..={last}")]
    MissingSamples { person: String, anchor: usize, last: usize },
    #[error("person {person} sample {index}: prediction cannot be decoded")]
    Undecodable { person: String, index: usize },
    #[error("{truth} true values against {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error(transparent)]
    Metric(#[from] CircError),
}

/// ICT predictions for one person alongside what is recorded about them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonPrediction {
    pub person_id: String,
    pub zt: Vec<CircTime>,
    /// `None` where the predicted pair was the zero vector.
    pub predicted_ict: Vec<Option<CircTime>>,
    pub dlmo: Option<CircTime>,
}

impl PersonPrediction {
    pub fn true_ict(&self) -> Option<Vec<CircTime>> {
        self.dlmo
            .map(|z| self.zt.iter().map(|t| CircTime::new(t.hours() + z.hours())).collect())
    }

    /// `(predicted ICT - ZT) mod 24` at sample `j`.
    pub fn offset(&self, j: usize) -> Result<CircTime, DlmoError> {
        let pred = self.predicted_ict[j].ok_or_else(|| DlmoError::Undecodable {
            person: self.person_id.clone(),
            index: j,
        })?;
        Ok(CircTime::new(pred.hours() - self.zt[j].hours()))
    }
}

/// Pair cohort records with their predictions, person by person.
pub fn person_predictions(cohort: &NormalizedCohort, preds: &[Vec<Option<CircTime>>]) -> Vec<PersonPrediction> {
    cohort
        .people
        .iter()
        .zip(preds)
        .map(|(p, pr)| PersonPrediction {
            person_id: p.person_id.clone(),
            zt: p.samples.iter().map(|s| s.zt).collect(),
            predicted_ict: pr.clone(),
            dlmo: p.dlmo,
        })
        .collect()
}

fn zt_bin(t: CircTime) -> usize {
    ((t.hours() / ZT_BIN_HOURS).floor() as usize).min((24.0 / ZT_BIN_HOURS) as usize - 1)
}

/// Lower edge of the ZT bin with the smallest mean ICT error, pooled over
/// people; ties go to the earliest bin.
pub fn best_zt(validation: &[PersonPrediction]) -> Result<CircTime, DlmoError> {
    let n_bins = (24.0 / ZT_BIN_HOURS) as usize;
    let mut sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for p in validation {
        let Some(truth) = p.true_ict() else { continue };
        for ((zt, pred), t) in p.zt.iter().zip(&p.predicted_ict).zip(truth) {
            if let Some(pred) = pred {
                let b = zt_bin(*zt);
                sum[b] += circ_error(t, *pred);
                count[b] += 1;
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let m = sum[b] / count[b] as f64;
        if best.is_none_or(|(_, bm)| m < bm) {
            best = Some((b, m));
        }
    }
    best.map(|(b, _)| CircTime::new(b as f64 * ZT_BIN_HOURS))
        .ok_or(DlmoError::EmptyValidation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorIndex {
    /// Zero-based sample index.
    pub index: usize,
    pub best_zt: CircTime,
}

/// The sample whose ZT is circularly closest to `best`, ties to the earlier
/// index. With `window = 3` only indices leaving two later samples qualify.
pub fn anchor(person: &PersonPrediction, best: CircTime, window: usize) -> Result<AnchorIndex, DlmoError> {
    let n = person.zt.len();
    if n < window.max(1) {
        return Err(DlmoError::MissingSamples {
            person: person.person_id.clone(),
            anchor: 0,
            last: window.max(1) - 1,
        });
    }
    let last_start = n - window.max(1);
    let index = (0..=last_start)
        .min_by(|&a, &b| {
            circ_error(person.zt[a], best)
                .total_cmp(&circ_error(person.zt[b], best))
                .then(a.cmp(&b))
        })
        .expect("non-empty range");
    Ok(AnchorIndex { index, best_zt: best })
}

/// `(predicted ICT - ZT) mod 24` at the anchor.
pub fn predict_dlmo_single(person: &PersonPrediction, anchor: &AnchorIndex) -> Result<CircTime, DlmoError> {
    person.offset(anchor.index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmoWeights {
    pub alpha: [f64; 3],
    /// Offsets and targets are unwrapped into `(center - 12, center + 12]`;
    /// `center` is the circular mean of the validation DLMO times.
    pub center: f64,
    /// Present only when fitted with the diagnostic intercept.
    pub intercept: Option<f64>,
}

fn unwrap_around(t: CircTime, center: f64) -> f64 {
    center + unwrap_offset(t.hours() - center)
}

fn offsets3(person: &PersonPrediction, a: &AnchorIndex, center: f64) -> Result<[f64; 3], DlmoError> {
    let last = a.index + 2;
    if last >= person.zt.len() {
        return Err(DlmoError::MissingSamples {
            person: person.person_id.clone(),
            anchor: a.index,
            last,
        });
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = unwrap_around(person.offset(a.index + i)?, center);
    }
    Ok(out)
}

/// Minimal-norm least squares of DLMO on the three anchored offsets.
/// People without a label or without three samples from the anchor are skipped.
pub fn fit_dlmo_weights(
    validation: &[PersonPrediction],
    anchors: &[AnchorIndex],
    with_intercept: bool,
) -> Result<DlmoWeights, DlmoError> {
    let labelled: Vec<(&PersonPrediction, &AnchorIndex)> = validation
        .iter()
        .zip(anchors)
        .filter(|(p, a)| p.dlmo.is_some() && a.index + 2 < p.zt.len())
        .collect();
    let truths: Vec<CircTime> = labelled.iter().filter_map(|(p, _)| p.dlmo).collect();
    let center = circular_mean(&truths).map_or(0.0, |c| c.hours());
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for (p, a) in &labelled {
        match offsets3(p, a, center) {
            Ok(o) => {
                rows.push(o);
                target.push(unwrap_around(p.dlmo.expect("filtered"), center));
            }
            Err(DlmoError::Undecodable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if rows.len() < 3 {
        return Err(DlmoError::TooFewPeople(rows.len()));
    }
    let k = if with_intercept { 4 } else { 3 };
    let design = DMatrix::from_fn(rows.len(), k, |i, j| {
        if with_intercept {
            if j == 0 {
                1.0
            } else {
                rows[i][j - 1]
            }
        } else {
            rows[i][j]
        }
    });
    let y = DVector::from_vec(target);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(DlmoError::SingularDesign);
    }
    let eps = smax * 1e-12 * rows.len().max(k) as f64;
    let sol = svd.solve(&y, eps).map_err(|_| DlmoError::SingularDesign)?;
    let (intercept, a) = if with_intercept {
        (Some(sol[0]), [sol[1], sol[2], sol[3]])
    } else {
        (None, [sol[0], sol[1], sol[2]])
    };
    Ok(DlmoWeights {
        alpha: a,
        center,
        intercept,
    })
}

pub fn predict_dlmo_weighted(person: &PersonPrediction, anchor: &AnchorIndex, w: &DlmoWeights) -> Result<CircTime, DlmoError> {
    let o = offsets3(person, anchor, w.center)?;
    let z = w.intercept.unwrap_or(0.0) + o.iter().zip(&w.alpha).map(|(o, a)| o * a).sum::<f64>();
    Ok(CircTime::new(z))
}

/// Median and AUC of circular DLMO errors.
pub fn dlmo_metrics(truth: &[CircTime], pred: &[CircTime]) -> Result<(f64, f64), DlmoError> {
    if truth.len() != pred.len() {
        return Err(DlmoError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let errs: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| circ_error(*t, *p)).collect();
    Ok((mae(&errs)?, auc(&errs)?))
}

//! Proximal-gradient training of the sparse BiLSTM and its random search.
//!
//! Each epoch takes one full-batch gradient step on the squared loss for
//! every weight, then replaces, for each input variable `k`, the pair
//! `(beta_k, input-weight rows of k)` by the hierarchical proximal map. The
//! step is halved whenever the penalized objective would increase.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilstm::{BiLstmModel, Mat, ModelError, SequenceBatch};
use crate::circular_time::{CircPair, CircTime};
use crate::data::{NormalizedCohort, SplitCohort};
use crate::hierprox::{prox, HierProxProblem};

/// Accepted objective increase per step, relative to `max(1, |objective|)`.
const DESCENT_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training and validation sets must both be non-empty and labelled")]
    EmptySplit,
    #[error("training diverged at epoch {epoch}: objective not reduced after {halvings} step halvings")]
    Diverged { epoch: usize, halvings: usize },
    #[error("every search trial failed")]
    NoSuccessfulTrial,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("audit log: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit log: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub lambda_bar: f64,
    pub step_size: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    pub seed: u64,
    pub zt_augmented: bool,
    /// Keep `theta` at zero, which reduces the model to its linear part.
    pub freeze_theta: bool,
    /// Return the best-validation snapshot rather than the last iterate.
    pub restore_best: bool,
    pub max_halvings: usize,
    /// Stop once the relative objective decrease of an epoch falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-2,
            tau: 1.0,
            lambda_bar: 0.0,
            step_size: 1e-2,
            max_epochs: 500,
            patience: 50,
            hidden_size: 16,
            output_size: 8,
            seed: 0,
            zt_augmented: true,
            freeze_theta: false,
            restore_best: true,
            max_halvings: 20,
            tolerance: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.tau >= 0.0 && self.lambda_bar >= 0.0) {
            return bad("lambda, tau and lambda_bar must be non-negative");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if self.hidden_size == 0 || self.output_size == 0 {
            return bad("hidden_size and output_size must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub objective: f64,
    pub validation_loss: f64,
    pub step_size: f64,
    /// `max_k (max |input weight of k| - tau ||beta_k||)`, clamped below at 0.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: BiLstmModel,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub selected_features: Vec<usize>,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned snapshot; 0 is the initialization.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

impl TrainedModel {
    pub fn deselected_all(&self) -> bool {
        self.selected_features.is_empty()
    }

    /// Encoded-pair predictions, one vector per person.
    pub fn predict_pairs(&self, cohort: &NormalizedCohort) -> Result<Vec<Vec<CircPair>>, ModelError> {
        let batch = SequenceBatch::from_cohort(cohort, self.config.zt_augmented);
        Ok(self
            .model
            .forward(&batch)?
            .into_iter()
            .map(|p| p.row_iter().map(|r| CircPair::new(r[0], r[1])).collect())
            .collect())
    }

    /// Decoded ICT predictions; a zero pair decodes to `None`.
    pub fn predict_ict(&self, cohort: &NormalizedCohort) -> Result<Vec<Vec<Option<CircTime>>>, ModelError> {
        Ok(self
            .predict_pairs(cohort)?
            .into_iter()
            .map(|ps| ps.into_iter().map(|p| p.decode().ok()).collect())
            .collect())
    }
}

/// Gene identifiers followed by the ZT pair columns when augmented.
pub fn feature_names(gene_ids: &[String], zt_augmented: bool) -> Vec<String> {
    let mut names = gene_ids.to_vec();
    if zt_augmented {
        names.push("zt_sin".into());
        names.push("zt_cos".into());
    }
    names
}

pub fn penalty(model: &BiLstmModel, lambda: f64, lambda_bar: f64) -> f64 {
    let group: f64 = (0..model.input_dim()).map(|k| model.beta_row_norm(k)).sum();
    let l1 = if lambda_bar > 0.0 {
        model.forward.w_in.iter().chain(model.backward.w_in.iter()).map(|w| w.abs()).sum()
    } else {
        0.0
    };
    lambda * group + lambda_bar * l1
}

/// Largest amount by which any input weight exceeds `tau ||beta_k||`.
pub fn constraint_violation(model: &BiLstmModel, tau: f64) -> f64 {
    (0..model.input_dim())
        .map(|k| model.max_input_weight(k) - tau * model.beta_row_norm(k))
        .fold(0.0, f64::max)
}

pub fn selected_features(model: &BiLstmModel) -> Vec<usize> {
    (0..model.input_dim()).filter(|&k| model.beta_row_norm(k) > 0.0).collect()
}

fn zero_inputs(model: &mut BiLstmModel) {
    model.forward.w_in.fill(0.0);
    model.backward.w_in.fill(0.0);
    model.beta.fill(0.0);
}

/// Gradient step followed by the row-wise proximal map.
fn prox_step(model: &BiLstmModel, grad: &BiLstmModel, eta: f64, cfg: &TrainConfig) -> BiLstmModel {
    let mut next = model.clone();
    next.axpy(-eta, grad);
    if cfg.freeze_theta {
        next.theta = model.theta.clone();
    }
    for k in 0..next.input_dim() {
        let v = vec![next.beta[(k, 0)], next.beta[(k, 1)]];
        let problem = HierProxProblem::new(v, next.input_rows(k), cfg.lambda * eta, cfg.lambda_bar * eta, cfg.tau);
        let sol = prox(&problem);
        next.beta[(k, 0)] = sol.b[0];
        next.beta[(k, 1)] = sol.b[1];
        next.set_input_rows(k, &sol.w);
    }
    next
}

fn batches(cfg: &TrainConfig, split: &SplitCohort) -> Result<(SequenceBatch, SequenceBatch), TrainError> {
    let train = SequenceBatch::from_cohort(&split.train, cfg.zt_augmented);
    let val = SequenceBatch::from_cohort(&split.validation, cfg.zt_augmented);
    if train.n_labelled() == 0 || val.n_labelled() == 0 {
        return Err(TrainError::EmptySplit);
    }
    Ok((train, val))
}

/// Seeded initialization with the input weights projected onto the feasible
/// set: `beta` starts at zero, so every input row must too.
pub fn initial_model(cfg: &TrainConfig, input_dim: usize) -> BiLstmModel {
    let mut m = BiLstmModel::init(input_dim, cfg.hidden_size, cfg.output_size, cfg.seed);
    zero_inputs(&mut m);
    m
}

pub fn train(cfg: &TrainConfig, split: &SplitCohort) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    let (train_b, val_b) = batches(cfg, split)?;
    let d = train_b.sequences[0].inputs.ncols();
    let mut model = initial_model(cfg, d);

    let (mut loss, mut grad) = model.gradients(&train_b)?;
    let mut objective = loss + penalty(&model, cfg.lambda, cfg.lambda_bar);
    let mut best = model.clone();
    let mut best_val = model.loss(&val_b)?;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut eta = cfg.step_size;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if cfg.freeze_theta {
            grad.theta.fill(0.0);
        }
        let mut halvings = 0;
        let (next, next_loss, next_grad, next_obj) = loop {
            let cand = prox_step(&model, &grad, eta, cfg);
            let (l, g) = cand.gradients(&train_b)?;
            let obj = l + penalty(&cand, cfg.lambda, cfg.lambda_bar);
            if obj.is_finite() && cand.is_finite() && obj <= objective + DESCENT_SLACK * objective.abs().max(1.0) {
                break (cand, l, g, obj);
            }
            if halvings == cfg.max_halvings {
                return Err(TrainError::Diverged { epoch, halvings });
            }
            halvings += 1;
            eta *= 0.5;
        };
        let decrease = objective - next_obj;
        model = next;
        loss = next_loss;
        grad = next_grad;
        objective = next_obj;

        let val = model.loss(&val_b)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            objective,
            validation_loss: val,
            step_size: eta,
            max_violation: constraint_violation(&model, cfg.tau),
        });
        if val < best_val {
            best_val = val;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                break;
            }
        }
        if cfg.tolerance > 0.0 && decrease <= cfg.tolerance * objective.abs().max(1.0) {
            break;
        }
    }

    let (model, best_epoch, best_validation_loss) = if cfg.restore_best {
        (best, best_epoch, best_val)
    } else {
        let last = history.last().map_or(0, |r| r.epoch);
        let v = model.loss(&val_b)?;
        (model, last, v)
    };
    Ok(TrainedModel {
        selected_features: selected_features(&model),
        feature_names: feature_names(&split.train.gene_ids, cfg.zt_augmented),
        model,
        config: cfg.clone(),
        history,
        best_epoch,
        best_validation_loss,
    })
}

/// Deselection threshold for the given configuration.
///
/// Once every input weight is zero the loss no longer depends on the
/// inputs, so training follows the same path for every penalty above the
/// threshold. Along that path the proximal map keeps variable `k` at zero
/// exactly when `lambda >= ||grad beta_k|| + tau * sum (|grad W_k| - lambda_bar)_+`.
/// The maximum of the right side over the path is the smallest such lambda.
/// With the recurrent part at its initialization and `theta = 0` this is the
/// gradient-at-zero bound `max_k ||grad beta_k||`.
pub fn lambda_max(cfg: &TrainConfig, split: &SplitCohort) -> Result<f64, TrainError> {
    cfg.validate()?;
    let (train_b, val_b) = batches(cfg, split)?;
    let d = train_b.sequences[0].inputs.ncols();
    let mut model = initial_model(cfg, d);
    let (mut loss, mut grad) = model.gradients(&train_b)?;
    let mut worst = input_threshold(&grad, cfg);
    let mut best_val = model.loss(&val_b)?;
    let mut since_best = 0;
    let mut eta = cfg.step_size;
    for epoch in 1..=cfg.max_epochs {
        if cfg.freeze_theta {
            grad.theta.fill(0.0);
        }
        let mut halvings = 0;
        let (next, l, g) = loop {
            let mut cand = model.clone();
            cand.axpy(-eta, &grad);
            zero_inputs(&mut cand);
            let (l, g) = cand.gradients(&train_b)?;
            if l.is_finite() && cand.is_finite() && l <= loss + DESCENT_SLACK * loss.abs().max(1.0) {
                break (cand, l, g);
            }
            if halvings == cfg.max_halvings {
                return Err(TrainError::Diverged { epoch, halvings });
            }
            halvings += 1;
            eta *= 0.5;
        };
        let decrease = loss - l;
        model = next;
        loss = l;
        grad = g;
        worst = worst.max(input_threshold(&grad, cfg));
        let val = model.loss(&val_b)?;
        if val < best_val {
            best_val = val;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                break;
            }
        }
        if cfg.tolerance > 0.0 && decrease <= cfg.tolerance * loss.abs().max(1.0) {
            break;
        }
    }
    // margin against rounding in the proximal map's own comparisons
    Ok(worst * (1.0 + 1e-9) + f64::MIN_POSITIVE)
}

fn input_threshold(grad: &BiLstmModel, cfg: &TrainConfig) -> f64 {
    (0..grad.input_dim())
        .map(|k| {
            let w: f64 = grad
                .forward
                .w_in
                .row(k)
                .iter()
                .chain(grad.backward.w_in.row(k).iter())
                .map(|g| (g.abs() - cfg.lambda_bar).max(0.0))
                .sum();
            grad.beta_row_norm(k) + cfg.tau * w
        })
        .fold(0.0, f64::max)
}

/// Mean squared error of encoded pairs per sample (twice the training loss).
pub fn pair_mse(model: &BiLstmModel, cohort: &NormalizedCohort, zt_augmented: bool) -> Result<f64, ModelError> {
    let batch = SequenceBatch::from_cohort(cohort, zt_augmented);
    Ok(2.0 * model.loss(&batch)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lambda: [f64; 2],
    pub tau: [f64; 2],
    pub step_size: [f64; 2],
    pub hidden_sizes: Vec<usize>,
    pub output_sizes: Vec<usize>,
    pub trials: usize,
    /// Fixed settings shared by every trial; sampled fields are overwritten.
    pub base: TrainConfig,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lambda: [1e-4, 1.0],
            tau: [1e-2, 1e2],
            step_size: [1e-4, 1e-1],
            hidden_sizes: vec![8, 16, 32],
            output_sizes: vec![4, 8, 16],
            trials: 50,
            base: TrainConfig::default(),
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    let (lo, hi) = (range[0].ln(), range[1].ln());
    if hi <= lo {
        range[0]
    } else {
        rng.random_range(lo..hi).exp()
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, r) in [("lambda", self.lambda), ("tau", self.tau), ("step_size", self.step_size)] {
            if !(r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} range must satisfy 0 < lo <= hi"
                )));
            }
        }
        if self.hidden_sizes.is_empty() || self.output_sizes.is_empty() {
            return Err(TrainError::InvalidConfig("hidden_sizes and output_sizes must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(TrainError::InvalidConfig("trials must be positive".into()));
        }
        self.base.validate()
    }

    /// Trial configurations, drawn in order from one seeded stream.
    pub fn draw(&self, seed: u64) -> Vec<TrainConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.trials)
            .map(|_| {
                let mut c = self.base.clone();
                c.lambda = log_uniform(&mut rng, self.lambda);
                c.tau = log_uniform(&mut rng, self.tau);
                c.step_size = log_uniform(&mut rng, self.step_size);
                c.hidden_size = self.hidden_sizes[rng.random_range(0..self.hidden_sizes.len())];
                c.output_size = self.output_sizes[rng.random_range(0..self.output_sizes.len())];
                c.seed = rng.random();
                c
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub config: TrainConfig,
    /// `None` when the trial failed.
    pub validation_mse: Option<f64>,
    pub n_selected: usize,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: TrainedModel,
    pub best_trial: usize,
    pub trials: Vec<TrialReport>,
}

/// Random search over `space`; the winner minimizes validation pair MSE,
/// ties going to the lower trial index. Trials run on the current rayon pool.
pub fn random_search(space: &SearchSpace, split: &SplitCohort, seed: u64) -> Result<SearchOutcome, TrainError> {
    space.validate()?;
    let configs = space.draw(seed);
    let results: Vec<Result<(TrainedModel, f64), TrainError>> = configs
        .par_iter()
        .map(|c| {
            let m = train(c, split)?;
            let mse = pair_mse(&m.model, &split.validation, c.zt_augmented)?;
            Ok((m, mse))
        })
        .collect();

    let mut reports = Vec::with_capacity(results.len());
    let mut best: Option<(usize, TrainedModel, f64)> = None;
    for (i, (cfg, res)) in configs.into_iter().zip(results).enumerate() {
        match res {
            Ok((m, mse)) => {
                reports.push(TrialReport {
                    trial: i,
                    config: cfg,
                    validation_mse: Some(mse),
                    n_selected: m.selected_features.len(),
                    epochs: m.history.len(),
                    error: None,
                });
                if mse.is_finite() && best.as_ref().is_none_or(|(_, _, b)| mse < *b) {
                    best = Some((i, m, mse));
                }
            }
            Err(e) => {
                log::info!("search trial {i} failed: {e}");
                reports.push(TrialReport {
                    trial: i,
                    config: cfg,
                    validation_mse: None,
                    n_selected: 0,
                    epochs: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let (best_trial, best, _) = best.ok_or(TrainError::NoSuccessfulTrial)?;
    Ok(SearchOutcome {
        best,
        best_trial,
        trials: reports,
    })
}

/// Append one JSON object per trial.
pub fn write_trial_log<W: Write>(mut out: W, trials: &[TrialReport]) -> Result<(), TrainError> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Stacked linear design of a cohort, for diagnostics and reference solvers.
pub fn stacked_design(cohort: &NormalizedCohort, zt_augmented: bool) -> (Mat, Mat) {
    let batch = SequenceBatch::from_cohort(cohort, zt_augmented);
    let labelled: Vec<_> = batch.sequences.iter().filter(|s| s.targets.is_some()).collect();
    let n: usize = labelled.iter().map(|s| s.inputs.nrows()).sum();
    let d = labelled.first().map_or(0, |s| s.inputs.ncols());
    let mut x = Mat::zeros(n, d);
    let mut y = Mat::zeros(n, 2);
    let mut r = 0;
    for s in labelled {
        let t = s.targets.as_ref().expect("filtered");
        for j in 0..s.inputs.nrows() {
            x.row_mut(r).copy_from(&s.inputs.row(j));
            y.row_mut(r).copy_from(&t.row(j));
            r += 1;
        }
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare_split, synth_cohort, NormalizationScope, SynthSpec};

    fn small_split(seed: u64) -> SplitCohort {
        let spec = SynthSpec {
            n_people: 10,
            samples_per_person: 4,
            n_genes: 12,
            n_rhythmic: 4,
            ..SynthSpec::default()
        };
        let raw = synth_cohort(&spec, seed).unwrap();
        prepare_split(&raw, seed, NormalizationScope::Train).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            hidden_size: 3,
            output_size: 2,
            max_epochs: 60,
            patience: 60,
            step_size: 0.05,
            lambda: 1e-3,
            tau: 2.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(quick().validate().is_ok());
        let c = TrainConfig { patience: 10, max_epochs: 5, ..quick() };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let c = TrainConfig { step_size: 0.0, ..quick() };
        assert!(c.validate().is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"lambda": 0.5}"#).unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.tau, TrainConfig::default().tau);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 0.5}"#).is_err());
    }

    #[test]
    fn training_is_feasible_descending_and_deterministic() {
        let split = small_split(1);
        let a = train(&quick(), &split).unwrap();
        let b = train(&quick(), &split).unwrap();
        assert_eq!(a, b);
        assert!(!a.history.is_empty());
        for w in a.history.windows(2) {
            assert!(w[1].objective <= w[0].objective + DESCENT_SLACK * w[0].objective.abs().max(1.0));
        }
        assert!(a.history.iter().all(|r| r.max_violation <= 1e-10));
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        for k in 0..a.model.input_dim() {
            if !a.selected_features.contains(&k) {
                assert_eq!(a.model.max_input_weight(k), 0.0);
            }
        }
        assert_eq!(a.feature_names.len(), a.model.input_dim());
    }

    #[test]
    fn lambda_max_deselects_everything() {
        let split = small_split(2);
        let cfg = quick();
        let lm = lambda_max(&cfg, &split).unwrap();
        assert!(lm > 0.0);
        let at = train(&TrainConfig { lambda: lm, ..cfg.clone() }, &split).unwrap();
        assert!(at.deselected_all());
        assert_eq!(at.model.forward.w_in.amax(), 0.0);
        let below = train(&TrainConfig { lambda: 0.5 * lm, restore_best: false, ..cfg }, &split).unwrap();
        assert!(!below.deselected_all());
    }

    #[test]
    fn lambda_max_reduces_to_gradient_at_zero() {
        // theta frozen at zero: the network contributes nothing, the path is
        // plain intercept fitting and the bound is the gradient at beta = 0
        // with beta0 fitted.
        let split = small_split(3);
        let cfg = TrainConfig {
            freeze_theta: true,
            tau: 0.0,
            step_size: 0.5,
            max_epochs: 400,
            patience: 400,
            ..quick()
        };
        let lm = lambda_max(&cfg, &split).unwrap();
        let (x, y) = stacked_design(&split.train, cfg.zt_augmented);
        let n = x.nrows() as f64;
        let ybar = y.row_mean();
        let mut worst: f64 = 0.0;
        // along the path the largest value occurs at the start (beta0 = 0) or the
        // end (beta0 = mean); check it is bracketed by both
        let at = |b0: &nalgebra::RowDVector<f64>| {
            let mut r = -y.clone();
            for mut row in r.row_iter_mut() {
                row += b0;
            }
            (x.transpose() * r / n).row_iter().map(|g| g.norm()).fold(0.0, f64::max)
        };
        worst = worst.max(at(&nalgebra::RowDVector::zeros(2))).max(at(&ybar));
        assert!(lm <= worst * (1.0 + 1e-6) + 1e-12);
        assert!(lm >= at(&ybar) * (1.0 - 1e-6));
    }

    #[test]
    fn search_is_deterministic_and_keyed_by_trial() {
        let split = small_split(4);
        let space = SearchSpace {
            trials: 3,
            hidden_sizes: vec![2, 3],
            output_sizes: vec![2],
            base: TrainConfig {
                max_epochs: 20,
                patience: 20,
                ..quick()
            },
            ..SearchSpace::default()
        };
        let a = random_search(&space, &split, 9).unwrap();
        let b = random_search(&space, &split, 9).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.best_trial, b.best_trial);
        assert_eq!(a.best, b.best);
        assert_eq!(a.trials.len(), 3);
        let best_mse = a.trials[a.best_trial].validation_mse.unwrap();
        assert!(a.trials.iter().filter_map(|t| t.validation_mse).all(|m| m >= best_mse));
        let mut buf = Vec::new();
        write_trial_log(&mut buf, &a.trials).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn single_trial_equals_direct_train() {
        let split = small_split(5);
        let space = SearchSpace {
            trials: 1,
            base: TrainConfig {
                max_epochs: 15,
                patience: 15,
                ..quick()
            },
            hidden_sizes: vec![2],
            output_sizes: vec![2],
            ..SearchSpace::default()
        };
        let out = random_search(&space, &split, 11).unwrap();
        let cfg = space.draw(11).remove(0);
        match train(&cfg, &split) {
            Ok(direct) => assert_eq!(out.best, direct),
            Err(_) => unreachable!("search succeeded on the same config"),
        }
    }

    #[test]
    fn draws_respect_ranges() {
        let space = SearchSpace::default();
        for c in space.draw(3) {
            assert!((1e-4..=1.0).contains(&c.lambda));
            assert!((1e-2..=1e2).contains(&c.tau));
            assert!((1e-4..=1e-1).contains(&c.step_size));
            assert!([8, 16, 32].contains(&c.hidden_size));
            assert!([4, 8, 16].contains(&c.output_size));
        }
    }
}

//! Linear comparison methods: a grouped elastic net over the encoded pair
//! (plain, or restricted to a gene panel) and partial least squares.
//!
//! Both regress the `(sin, cos)` encoding of ICT on the stacked per-sample
//! design, optionally extended by the encoded ZT columns.

use std::fs;
use std::path::Path;

use nalgebra::RowDVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilstm::{Mat, SequenceBatch};
use crate::circular_time::CircPair;
use crate::data::{NormalizedCohort, SplitCohort};
use crate::trainer::{feature_names, stacked_design};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("elastic net did not converge in {iterations} iterations (KKT residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("latent component {component} has a zero-variance score")]
    RankDeficient { component: usize },
    #[error("dimension mismatch: model expects {expected} input columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no panel gene is present in the cohort")]
    EmptyPanel,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no labelled training samples")]
    NoLabels,
    #[error("every grid point failed: {0}")]
    AllFailed(String),
    #[error("panel file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Form of the `(1 - alpha)` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RidgeForm {
    /// `(1 - alpha) / 2 * sum_k ||beta_k||^4`
    #[default]
    Quartic,
    /// `(1 - alpha) / 2 * sum_k ||beta_k||^2`
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Target group-KKT residual.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 50_000,
            tolerance: 1e-8,
        }
    }
}

/// Ordered gene identifiers, one per line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenePanel {
    pub genes: Vec<String>,
}

impl GenePanel {
    pub fn parse(text: &str) -> Self {
        let genes = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        GenePanel { genes }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(GenePanel::parse(&text))
    }

    /// Column indices of panel genes present in `gene_ids`, and the absent ones.
    pub fn resolve(&self, gene_ids: &[String]) -> (Vec<usize>, Vec<String>) {
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for g in &self.genes {
            match gene_ids.iter().position(|c| c == g) {
                Some(i) if !found.contains(&i) => found.push(i),
                Some(_) => {}
                None => missing.push(g.clone()),
            }
        }
        found.sort_unstable();
        (found, missing)
    }
}

/// Linear encoded-pair regressor: `pred = x beta + beta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub augmented: bool,
    /// One `[sin, cos]` coefficient pair per feature.
    pub beta: Vec<[f64; 2]>,
    pub beta0: [f64; 2],
}

impl LinearModel {
    fn from_mats(feature_names: Vec<String>, augmented: bool, beta: &Mat, beta0: &RowDVector<f64>) -> Self {
        LinearModel {
            feature_names,
            augmented,
            beta: beta.row_iter().map(|r| [r[0], r[1]]).collect(),
            beta0: [beta0[0], beta0[1]],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.beta.len()
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.beta.len())
            .filter(|&k| self.beta[k] != [0.0, 0.0])
            .collect()
    }

    pub fn predict_pairs(&self, cohort: &NormalizedCohort) -> Result<Vec<Vec<CircPair>>, BaselineError> {
        let batch = SequenceBatch::from_cohort(cohort, self.augmented);
        batch
            .sequences
            .iter()
            .map(|s| {
                let x = &s.inputs;
                if x.ncols() != self.input_dim() {
                    return Err(BaselineError::DimensionMismatch {
                        expected: self.input_dim(),
                        found: x.ncols(),
                    });
                }
                Ok(x
                    .row_iter()
                    .map(|r| {
                        let mut p = self.beta0;
                        for (v, b) in r.iter().zip(&self.beta) {
                            p[0] += v * b[0];
                            p[1] += v * b[1];
                        }
                        CircPair::new(p[0], p[1])
                    })
                    .collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetModel {
    pub linear: LinearModel,
    pub lambda: f64,
    pub alpha: f64,
    pub ridge: RidgeForm,
    /// Panel genes used, when restricted.
    pub panel: Option<Vec<String>>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Centered training design restricted to `cols`.
struct Centered {
    x: Mat,
    y: Mat,
    x_mean: RowDVector<f64>,
    y_mean: RowDVector<f64>,
}

fn centered(x: &Mat, y: &Mat, cols: &[usize]) -> Centered {
    let xs = x.select_columns(cols);
    let x_mean = xs.row_mean();
    let y_mean = y.row_mean();
    let mut xc = xs;
    for mut r in xc.row_iter_mut() {
        r -= &x_mean;
    }
    let mut yc = y.clone();
    for mut r in yc.row_iter_mut() {
        r -= &y_mean;
    }
    Centered {
        x: xc,
        y: yc,
        x_mean,
        y_mean,
    }
}

/// Smooth part of the grouped elastic-net objective on centered data.
struct EnProblem<'a> {
    x: &'a Mat,
    y: &'a Mat,
    lambda: f64,
    alpha: f64,
    ridge: RidgeForm,
}

impl EnProblem<'_> {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn ridge_weight(&self) -> f64 {
        self.lambda * (1.0 - self.alpha)
    }

    fn smooth(&self, b: &Mat) -> f64 {
        let r = self.y - self.x * b;
        let rw = self.ridge_weight();
        let ridge: f64 = b
            .row_iter()
            .map(|row| {
                let s = row.norm_squared();
                match self.ridge {
                    RidgeForm::Quartic => s * s,
                    RidgeForm::Quadratic => s,
                }
            })
            .sum();
        r.norm_squared() / (2.0 * self.n()) + 0.5 * rw * ridge
    }

    fn gradient(&self, b: &Mat) -> Mat {
        let r = self.x * b - self.y;
        let mut g = self.x.transpose() * r / self.n();
        let rw = self.ridge_weight();
        if rw > 0.0 {
            for (mut gk, bk) in g.row_iter_mut().zip(b.row_iter()) {
                let scale = match self.ridge {
                    RidgeForm::Quartic => 2.0 * rw * bk.norm_squared(),
                    RidgeForm::Quadratic => rw,
                };
                gk += bk * scale;
            }
        }
        g
    }

    fn group_penalty(&self, b: &Mat) -> f64 {
        self.lambda * self.alpha * b.row_iter().map(|r| r.norm()).sum::<f64>()
    }

    fn objective(&self, b: &Mat) -> f64 {
        self.smooth(b) + self.group_penalty(b)
    }

    /// Largest group-KKT violation.
    fn kkt(&self, b: &Mat) -> f64 {
        let g = self.gradient(b);
        let la = self.lambda * self.alpha;
        g.row_iter()
            .zip(b.row_iter())
            .map(|(gk, bk)| {
                let nb = bk.norm();
                if nb > 0.0 {
                    (gk + bk * (la / nb)).norm()
                } else {
                    (gk.norm() - la).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

fn group_soft_threshold(m: &mut Mat, thresh: f64) {
    for mut r in m.row_iter_mut() {
        let nr = r.norm();
        if nr <= thresh {
            r.fill(0.0);
        } else {
            r *= 1.0 - thresh / nr;
        }
    }
}

/// Spectral-norm-squared estimate of `x / sqrt(n)` by power iteration.
fn lipschitz_estimate(x: &Mat) -> f64 {
    let n = x.nrows().max(1) as f64;
    let mut v = nalgebra::DVector::from_element(x.ncols(), 1.0);
    let mut est = 0.0;
    for _ in 0..30 {
        let w = x.transpose() * (x * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 1.0;
        }
        est = nw / v.norm();
        v = w / nw;
    }
    (est / n).max(1e-12)
}

/// Accelerated proximal gradient with backtracking and objective restarts.
fn solve_en(p: &EnProblem, warm: Option<&Mat>, opts: &SolverOptions) -> Result<(Mat, usize, f64), BaselineError> {
    let d = p.x.ncols();
    let mut b = warm.cloned().unwrap_or_else(|| Mat::zeros(d, 2));
    if d == 0 {
        return Ok((b, 0, 0.0));
    }
    let mut z = b.clone();
    let mut t: f64 = 1.0;
    let mut lip = lipschitz_estimate(p.x);
    let mut f_b = p.objective(&b);
    let la = p.lambda * p.alpha;
    let mut residual = p.kkt(&b);
    if residual <= opts.tolerance {
        return Ok((b, 0, residual));
    }
    let mut just_restarted = false;
    let mut iterations = opts.max_iter;
    for it in 1..=opts.max_iter {
        if it % 10 == 0 {
            residual = p.kkt(&b);
            if residual <= opts.tolerance {
                return Ok((b, it, residual));
            }
        }
        let fz = p.smooth(&z);
        let gz = p.gradient(&z);
        let cand = loop {
            let mut c = &z - &gz / lip;
            group_soft_threshold(&mut c, la / lip);
            let diff = &c - &z;
            let bound = fz + gz.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if p.smooth(&c) <= bound + 1e-14 * fz.abs().max(1.0) {
                break c;
            }
            lip *= 2.0;
        };
        let f_c = p.objective(&cand);
        if f_c > f_b {
            if just_restarted {
                // no descent even from the last iterate: rounding floor
                iterations = it;
                break;
            }
            just_restarted = true;
            // momentum overshot: restart from the last iterate
            z = b.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &cand + (&cand - &b) * ((t - 1.0) / t_next);
        b = cand;
        t = t_next;
        f_b = f_c;
        just_restarted = false;
    }
    residual = p.kkt(&b);
    if residual <= opts.tolerance {
        return Ok((b, iterations, residual));
    }
    Err(BaselineError::NonConvergence {
        iterations,
        residual,
    })
}

/// Design (and labels) of the training part, with feature names.
fn train_design(split: &SplitCohort, augmented: bool) -> Result<(Mat, Mat, Vec<String>), BaselineError> {
    let (x, y) = stacked_design(&split.train, augmented);
    if x.nrows() == 0 {
        return Err(BaselineError::NoLabels);
    }
    Ok((x, y, feature_names(&split.train.gene_ids, augmented)))
}

/// Columns used by an elastic-net fit: panel genes (or all genes), then ZT.
fn active_columns(split: &SplitCohort, panel: Option<&GenePanel>, augmented: bool) -> Result<Vec<usize>, BaselineError> {
    let g = split.train.n_genes();
    let mut cols = match panel {
        Some(p) => {
            let (found, missing) = p.resolve(&split.train.gene_ids);
            if !missing.is_empty() {
                log::warn!("{} panel genes absent from the cohort: {}", missing.len(), missing.join(", "));
            }
            if found.is_empty() {
                return Err(BaselineError::EmptyPanel);
            }
            found
        }
        None => (0..g).collect(),
    };
    if augmented {
        cols.extend([g, g + 1]);
    }
    Ok(cols)
}

fn check_en_hyper(lambda: f64, alpha: f64) -> Result<(), BaselineError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::InvalidHyper(format!("lambda = {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(BaselineError::InvalidHyper(format!("alpha = {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnSettings {
    pub ridge: RidgeForm,
    pub solver: SolverOptions,
}

impl Default for EnSettings {
    fn default() -> Self {
        EnSettings {
            ridge: RidgeForm::Quartic,
            solver: SolverOptions::default(),
        }
    }
}

/// Training-side state shared by every grid point of one elastic-net family.
struct EnContext {
    c: Centered,
    cols: Vec<usize>,
    names: Vec<String>,
    d: usize,
    panel: Option<Vec<String>>,
    augmented: bool,
}

impl EnContext {
    fn new(split: &SplitCohort, panel: Option<&GenePanel>, augmented: bool) -> Result<Self, BaselineError> {
        let (x, y, names) = train_design(split, augmented)?;
        let cols = active_columns(split, panel, augmented)?;
        Ok(EnContext {
            c: centered(&x, &y, &cols),
            d: x.ncols(),
            names,
            panel: panel.map(|p| {
                let (found, _) = p.resolve(&split.train.gene_ids);
                found.iter().map(|&i| split.train.gene_ids[i].clone()).collect()
            }),
            cols,
            augmented,
        })
    }

    fn problem(&self, lambda: f64, alpha: f64, ridge: RidgeForm) -> EnProblem<'_> {
        EnProblem {
            x: &self.c.x,
            y: &self.c.y,
            lambda,
            alpha,
            ridge,
        }
    }

    /// Smallest `lambda` with every group at zero, for the given `alpha`.
    fn lambda_max(&self, alpha: f64) -> f64 {
        let g = self.c.x.transpose() * &self.c.y / self.c.x.nrows() as f64;
        let m = g.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        if alpha > 0.0 {
            m / alpha
        } else {
            f64::INFINITY
        }
    }

    fn fit(
        &self,
        lambda: f64,
        alpha: f64,
        settings: &EnSettings,
        warm: Option<&Mat>,
    ) -> Result<(ElasticNetModel, Mat), BaselineError> {
        check_en_hyper(lambda, alpha)?;
        let p = self.problem(lambda, alpha, settings.ridge);
        let (b, iterations, kkt_residual) = solve_en(&p, warm, &settings.solver)?;
        let mut full = Mat::zeros(self.d, 2);
        for (i, &c) in self.cols.iter().enumerate() {
            full.row_mut(c).copy_from(&b.row(i));
        }
        let beta0 = &self.c.y_mean - &self.c.x_mean * &b;
        let model = ElasticNetModel {
            linear: LinearModel::from_mats(self.names.clone(), self.augmented, &full, &beta0),
            lambda,
            alpha,
            ridge: settings.ridge,
            panel: self.panel.clone(),
            kkt_residual,
            iterations,
        };
        Ok((model, b))
    }
}

pub fn fit_elastic_net(
    split: &SplitCohort,
    lambda: f64,
    alpha: f64,
    panel: Option<&GenePanel>,
    augmented: bool,
    settings: &EnSettings,
) -> Result<ElasticNetModel, BaselineError> {
    EnContext::new(split, panel, augmented)?
        .fit(lambda, alpha, settings, None)
        .map(|(m, _)| m)
}

/// Deselect-all threshold `max_k ||grad_k at beta = 0|| / alpha`.
pub fn en_lambda_max(split: &SplitCohort, alpha: f64, panel: Option<&GenePanel>, augmented: bool) -> Result<f64, BaselineError> {
    Ok(EnContext::new(split, panel, augmented)?.lambda_max(alpha))
}

/// Intercept-only reference: the training mean of the encoded pairs.
pub fn intercept_only(split: &SplitCohort, augmented: bool) -> Result<LinearModel, BaselineError> {
    let (x, y, names) = train_design(split, augmented)?;
    Ok(LinearModel::from_mats(names, augmented, &Mat::zeros(x.ncols(), 2), &y.row_mean()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnGrid {
    /// Explicit lambdas; when empty, `n_lambda` log-spaced values from each
    /// alpha's lambda_max down `decades` decades.
    pub lambdas: Vec<f64>,
    pub n_lambda: usize,
    pub decades: f64,
    pub alphas: Vec<f64>,
}

impl Default for EnGrid {
    fn default() -> Self {
        EnGrid {
            lambdas: Vec::new(),
            n_lambda: 50,
            decades: 4.0,
            alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// `n` log-spaced values from `hi` down to `hi * 10^-decades`.
pub fn log_path(hi: f64, n: usize, decades: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..n)
            .map(|i| hi * 10f64.powf(-decades * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub validation_mse: Option<f64>,
    pub error: Option<String>,
}

/// Mean squared error of encoded-pair predictions per labelled sample.
pub fn validation_mse(preds: &[Vec<CircPair>], cohort: &NormalizedCohort) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (ps, person) in preds.iter().zip(&cohort.people) {
        let Some(ict) = person.ict() else { continue };
        for (p, t) in ps.iter().zip(ict) {
            let e = t.encode();
            total += (p.t1 - e.t1).powi(2) + (p.t2 - e.t2).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        total / n as f64
    }
}

/// Grid search over `(lambda, alpha)`, selecting by validation MSE.
/// Each alpha walks its lambda path from large to small with warm starts;
/// alphas run in parallel on the current rayon pool.
pub fn hyper_search_en(
    split: &SplitCohort,
    grid: &EnGrid,
    panel: Option<&GenePanel>,
    augmented: bool,
    settings: &EnSettings,
) -> Result<(ElasticNetModel, Vec<GridPoint>), BaselineError> {
    if grid.alphas.is_empty() || (grid.lambdas.is_empty() && grid.n_lambda == 0) {
        return Err(BaselineError::EmptyGrid);
    }
    let ctx = EnContext::new(split, panel, augmented)?;
    let per_alpha: Vec<Vec<(GridPoint, Option<ElasticNetModel>)>> = grid
        .alphas
        .par_iter()
        .map(|&alpha| {
            let mut lambdas = if grid.lambdas.is_empty() {
                let hi = ctx.lambda_max(alpha);
                let hi = if hi.is_finite() && hi > 0.0 { hi } else { 1.0 };
                log_path(hi, grid.n_lambda, grid.decades)
            } else {
                grid.lambdas.clone()
            };
            lambdas.sort_by(|a, b| b.total_cmp(a));
            let mut warm: Option<Mat> = None;
            lambdas
                .into_iter()
                .map(|lambda| match ctx.fit(lambda, alpha, settings, warm.as_ref()) {
                    Ok((m, b)) => {
                        warm = Some(b);
                        let mse = m
                            .linear
                            .predict_pairs(&split.validation)
                            .map(|p| validation_mse(&p, &split.validation))
                            .unwrap_or(f64::NAN);
                        (
                            GridPoint {
                                lambda,
                                alpha,
                                validation_mse: Some(mse),
                                error: None,
                            },
                            Some(m),
                        )
                    }
                    Err(e) => (
                        GridPoint {
                            lambda,
                            alpha,
                            validation_mse: None,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                })
                .collect()
        })
        .collect();

    let mut points = Vec::new();
    let mut best: Option<(f64, ElasticNetModel)> = None;
    let mut last_err = String::new();
    for (pt, m) in per_alpha.into_iter().flatten() {
        if let (Some(mse), Some(m)) = (pt.validation_mse, m) {
            if mse.is_finite() && best.as_ref().is_none_or(|(b, _)| mse < *b) {
                best = Some((mse, m));
            }
        } else if let Some(e) = &pt.error {
            last_err = e.clone();
        }
        points.push(pt);
    }
    best.map(|(_, m)| (m, points)).ok_or(BaselineError::AllFailed(last_err))
}

/// Fitted partial least squares components on a centered design.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsFit {
    /// `D x A` input weights.
    pub weights: Mat,
    /// `D x A` input loadings.
    pub loadings: Mat,
    /// `2 x A` target loadings.
    pub target_loadings: Mat,
    /// `n x A` input scores.
    pub scores: Mat,
    /// `D x 2` regression coefficients.
    pub coef: Mat,
}

/// Two-block NIPALS with deflation.
pub fn nipals(x: &Mat, y: &Mat, n_latent: usize) -> Result<PlsFit, BaselineError> {
    let (n, d) = x.shape();
    let mut xr = x.clone();
    let mut yr = y.clone();
    let mut w_all = Mat::zeros(d, n_latent);
    let mut p_all = Mat::zeros(d, n_latent);
    let mut q_all = Mat::zeros(y.ncols(), n_latent);
    let mut t_all = Mat::zeros(n, n_latent);
    let scale = x.norm_squared().max(f64::MIN_POSITIVE);
    for a in 0..n_latent {
        // start from the target column of largest variance
        let start = (0..yr.ncols())
            .max_by(|&i, &j| yr.column(i).norm_squared().total_cmp(&yr.column(j).norm_squared()))
            .unwrap_or(0);
        let mut u = yr.column(start).into_owned();
        let mut t = nalgebra::DVector::zeros(n);
        let mut w = nalgebra::DVector::zeros(d);
        for _ in 0..10_000 {
            let wn = xr.transpose() * &u;
            let norm = wn.norm();
            if norm == 0.0 {
                return Err(BaselineError::RankDeficient { component: a + 1 });
            }
            let wn = wn / norm;
            let tn = &xr * &wn;
            let tt = tn.norm_squared();
            if tt <= 1e-24 * scale {
                return Err(BaselineError::RankDeficient { component: a + 1 });
            }
            let q = yr.transpose() * &tn / tt;
            u = &yr * &q / q.norm_squared().max(f64::MIN_POSITIVE);
            let delta = (&tn - &t).norm() / tn.norm();
            t = tn;
            w = wn;
            if delta < 1e-13 {
                break;
            }
        }
        let tt = t.norm_squared();
        if tt <= 1e-24 * scale {
            return Err(BaselineError::RankDeficient { component: a + 1 });
        }
        let p = xr.transpose() * &t / tt;
        let q = yr.transpose() * &t / tt;
        xr -= &t * p.transpose();
        yr -= &t * q.transpose();
        w_all.set_column(a, &w);
        p_all.set_column(a, &p);
        q_all.set_column(a, &q);
        t_all.set_column(a, &t);
    }
    let ptw = p_all.transpose() * &w_all;
    let inv = ptw
        .try_inverse()
        .ok_or(BaselineError::RankDeficient { component: n_latent })?;
    let coef = &w_all * inv * q_all.transpose();
    Ok(PlsFit {
        weights: w_all,
        loadings: p_all,
        target_loadings: q_all,
        scores: t_all,
        coef,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsrModel {
    pub linear: LinearModel,
    pub n_latent: usize,
    pub k: usize,
    /// Inputs kept after the top-K restriction, ascending.
    pub selected: Vec<usize>,
}

/// Indices of the `k` rows of largest norm, ties to the lower index, returned ascending.
fn top_k_rows(m: &Mat, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn fit_plsr(split: &SplitCohort, n_latent: usize, k: usize, augmented: bool) -> Result<PlsrModel, BaselineError> {
    let (x, y, names) = train_design(split, augmented)?;
    let (n, d) = x.shape();
    if n_latent == 0 || n_latent > d.min(n) {
        return Err(BaselineError::InvalidHyper(format!(
            "n_latent = {n_latent} must lie in [1, {}]",
            d.min(n)
        )));
    }
    if k == 0 || k > d {
        return Err(BaselineError::InvalidHyper(format!("K = {k} must lie in [1, {d}]")));
    }
    let all: Vec<usize> = (0..d).collect();
    let c = centered(&x, &y, &all);
    let first = nipals(&c.x, &c.y, n_latent)?;
    let selected = if k == d { all } else { top_k_rows(&first.weights, k) };
    let c = centered(&x, &y, &selected);
    let fit = if selected.len() == d {
        first
    } else {
        nipals(&c.x, &c.y, n_latent.min(selected.len()))?
    };
    let mut full = Mat::zeros(d, 2);
    for (i, &col) in selected.iter().enumerate() {
        full.row_mut(col).copy_from(&fit.coef.row(i));
    }
    let beta0 = &c.y_mean - &c.x_mean * &fit.coef;
    Ok(PlsrModel {
        linear: LinearModel::from_mats(names, augmented, &full, &beta0),
        n_latent,
        k,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsGrid {
    pub latent: Vec<usize>,
    pub k: Vec<usize>,
}

impl Default for PlsGrid {
    fn default() -> Self {
        PlsGrid {
            latent: (1..=8).map(|i| 5 * i).collect(),
            k: vec![100, 250, 500, 1000, 2500, 5000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsGridPoint {
    pub n_latent: usize,
    pub k: usize,
    pub validation_mse: Option<f64>,
    pub error: Option<String>,
}

/// Grid search over `(n_latent, K)`; `K` is clamped to the input count and
/// latent sizes above `min(K, n - 1)` are dropped (the smallest is kept,
/// clamped, when none qualify).
pub fn hyper_search_plsr(split: &SplitCohort, grid: &PlsGrid, augmented: bool) -> Result<(PlsrModel, Vec<PlsGridPoint>), BaselineError> {
    if grid.latent.is_empty() || grid.k.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    let (x, _, _) = train_design(split, augmented)?;
    let (n, d) = x.shape();
    let mut ks: Vec<usize> = grid.k.iter().map(|&k| k.clamp(1, d)).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut cells = Vec::new();
    for &k in &ks {
        let cap = k.min(n.saturating_sub(1)).max(1);
        let mut lat: Vec<usize> = grid.latent.iter().copied().filter(|&a| a >= 1 && a <= cap).collect();
        if lat.is_empty() {
            lat.push(grid.latent.iter().copied().min().unwrap_or(1).clamp(1, cap));
        }
        lat.sort_unstable();
        lat.dedup();
        cells.extend(lat.into_iter().map(|a| (a, k)));
    }
    let fits: Vec<_> = cells
        .par_iter()
        .map(|&(a, k)| {
            fit_plsr(split, a, k, augmented).and_then(|m| {
                let p = m.linear.predict_pairs(&split.validation)?;
                Ok((validation_mse(&p, &split.validation), m))
            })
        })
        .collect();
    let mut points = Vec::new();
    let mut best: Option<(f64, PlsrModel)> = None;
    let mut last_err = String::new();
    for (&(a, k), r) in cells.iter().zip(fits) {
        match r {
            Ok((mse, m)) => {
                if mse.is_finite() && best.as_ref().is_none_or(|(b, _)| mse < *b) {
                    best = Some((mse, m));
                }
                points.push(PlsGridPoint {
                    n_latent: a,
                    k,
                    validation_mse: Some(mse),
                    error: None,
                });
            }
            Err(e) => {
                last_err = e.to_string();
                points.push(PlsGridPoint {
                    n_latent: a,
                    k,
                    validation_mse: None,
                    error: Some(last_err.clone()),
                });
            }
        }
    }
    best.map(|(_, m)| (m, points)).ok_or(BaselineError::AllFailed(last_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circular_time::{circ_error, CircTime};
    use crate::data::{prepare_split, synth_cohort, NormalizationScope, PersonRecord, Sample, SynthSpec};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth_split(spec: SynthSpec, seed: u64) -> SplitCohort {
        let raw = synth_cohort(&spec, seed).unwrap();
        prepare_split(&raw, seed, NormalizationScope::Train).unwrap()
    }

    fn small() -> SplitCohort {
        synth_split(
            SynthSpec {
                n_people: 12,
                samples_per_person: 6,
                n_genes: 10,
                n_rhythmic: 4,
                ..SynthSpec::default()
            },
            3,
        )
    }

    fn ols(x: &Mat, y: &Mat) -> (Mat, RowDVector<f64>) {
        let ones = Mat::from_element(x.nrows(), 1, 1.0);
        let xa = Mat::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { ones[(i, 0)] } else { x[(i, j - 1)] });
        let sol = (xa.transpose() * &xa).lu().solve(&(xa.transpose() * y)).unwrap();
        let b0 = RowDVector::from_iterator(2, sol.row(0).iter().copied());
        (sol.rows(1, x.ncols()).into_owned(), b0)
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let split = small();
        let m = fit_elastic_net(&split, 0.0, 0.5, None, false, &EnSettings::default()).unwrap();
        let (x, y) = stacked_design(&split.train, false);
        let (b, b0) = ols(&x, &y);
        for k in 0..x.ncols() {
            assert_abs_diff_eq!(m.linear.beta[k][0], b[(k, 0)], epsilon = 1e-6);
            assert_abs_diff_eq!(m.linear.beta[k][1], b[(k, 1)], epsilon = 1e-6);
        }
        assert_abs_diff_eq!(m.linear.beta0[0], b0[0], epsilon = 1e-6);
    }

    #[test]
    fn kkt_holds_for_both_ridge_forms() {
        let split = small();
        for ridge in [RidgeForm::Quartic, RidgeForm::Quadratic] {
            let settings = EnSettings { ridge, ..EnSettings::default() };
            for (lambda, alpha) in [(0.01, 0.3), (0.05, 1.0), (0.2, 0.1)] {
                let m = fit_elastic_net(&split, lambda, alpha, None, true, &settings).unwrap();
                assert!(m.kkt_residual <= 1e-6, "{ridge:?} {lambda} {alpha}: {}", m.kkt_residual);
            }
        }
    }

    // independent check of the stationarity conditions from the fitted model
    #[test]
    fn kkt_recomputed_from_predictions() {
        let split = small();
        let (lambda, alpha) = (0.03, 0.6);
        let m = fit_elastic_net(&split, lambda, alpha, None, false, &EnSettings::default()).unwrap();
        let (x, y) = stacked_design(&split.train, false);
        let n = x.nrows() as f64;
        for k in 0..x.ncols() {
            let mut g = [0.0; 2];
            for i in 0..x.nrows() {
                for c in 0..2 {
                    let pred: f64 = m.linear.beta0[c] + (0..x.ncols()).map(|j| x[(i, j)] * m.linear.beta[j][c]).sum::<f64>();
                    g[c] += x[(i, k)] * (pred - y[(i, c)]) / n;
                }
            }
            let b = m.linear.beta[k];
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            if nb > 0.0 {
                let quart = 2.0 * lambda * (1.0 - alpha) * nb * nb;
                let r0 = g[0] + quart * b[0] + lambda * alpha * b[0] / nb;
                let r1 = g[1] + quart * b[1] + lambda * alpha * b[1] / nb;
                assert!(r0.hypot(r1) <= 1e-6);
            } else {
                assert!(g[0].hypot(g[1]) <= lambda * alpha + 1e-6);
            }
        }
    }

    #[test]
    fn lambda_max_gives_intercept_model() {
        let split = small();
        let lm = en_lambda_max(&split, 1.0, None, false).unwrap();
        let m = fit_elastic_net(&split, lm, 1.0, None, false, &EnSettings::default()).unwrap();
        assert!(m.linear.selected().is_empty());
        let io = intercept_only(&split, false).unwrap();
        assert_abs_diff_eq!(m.linear.beta0[0], io.beta0[0], epsilon = 1e-12);
        let below = fit_elastic_net(&split, 0.9 * lm, 1.0, None, false, &EnSettings::default()).unwrap();
        assert!(!below.linear.selected().is_empty());
    }

    #[test]
    fn intercept_model_predicts_constant() {
        let split = small();
        let mut io = intercept_only(&split, false).unwrap();
        let e = CircTime::new(9.0).encode();
        io.beta0 = [e.t1, e.t2];
        for ps in io.predict_pairs(&split.test).unwrap() {
            for p in ps {
                assert!(circ_error(p.decode().unwrap(), CircTime::new(9.0)) < 1e-12);
            }
        }
    }

    #[test]
    fn panel_restricts_support() {
        let split = small();
        let one = GenePanel::parse(&format!("# one gene\n{}\nnot_a_gene\n", split.train.gene_ids[2]));
        let m = fit_elastic_net(&split, 1e-3, 0.5, Some(&one), false, &EnSettings::default()).unwrap();
        assert!(m.linear.selected().iter().all(|&k| k == 2));
        assert_eq!(m.panel.as_deref(), Some(&split.train.gene_ids[2..3]));

        let all = GenePanel { genes: split.train.gene_ids.clone() };
        let a = fit_elastic_net(&split, 0.02, 0.5, Some(&all), true, &EnSettings::default()).unwrap();
        let b = fit_elastic_net(&split, 0.02, 0.5, None, true, &EnSettings::default()).unwrap();
        assert_eq!(a.linear, b.linear);

        let none = GenePanel::parse("missing1\nmissing2");
        assert!(matches!(
            fit_elastic_net(&split, 0.02, 0.5, Some(&none), false, &EnSettings::default()),
            Err(BaselineError::EmptyPanel)
        ));
    }

    #[test]
    fn zeroed_zt_columns_reproduce_plain_fit() {
        let split = small();
        let settings = EnSettings::default();
        let plain = EnContext::new(&split, None, false).unwrap();
        let mut aug = EnContext::new(&split, None, true).unwrap();
        let d = plain.d;
        aug.c.x.column_mut(d).fill(0.0);
        aug.c.x.column_mut(d + 1).fill(0.0);
        let (p, _) = plain.fit(0.01, 0.5, &settings, None).unwrap();
        let (a, _) = aug.fit(0.01, 0.5, &settings, None).unwrap();
        assert_eq!(a.linear.beta[d], [0.0, 0.0]);
        assert_eq!(a.linear.beta[d + 1], [0.0, 0.0]);
        assert_eq!(&a.linear.beta[..d], &p.linear.beta[..]);
    }

    #[test]
    fn grid_search_picks_validation_minimum() {
        let split = small();
        let grid = EnGrid {
            n_lambda: 6,
            alphas: vec![0.5, 1.0],
            ..EnGrid::default()
        };
        let (best, points) = hyper_search_en(&split, &grid, None, false, &EnSettings::default()).unwrap();
        assert_eq!(points.len(), 12);
        let min = points.iter().filter_map(|p| p.validation_mse).fold(f64::INFINITY, f64::min);
        let p = best.linear.predict_pairs(&split.validation).unwrap();
        assert_eq!(validation_mse(&p, &split.validation), min);

        let single = EnGrid {
            lambdas: vec![0.05],
            alphas: vec![0.7],
            ..EnGrid::default()
        };
        let (m, _) = hyper_search_en(&split, &single, None, false, &EnSettings::default()).unwrap();
        assert_eq!((m.lambda, m.alpha), (0.05, 0.7));
        assert!(matches!(
            hyper_search_en(&split, &EnGrid { alphas: vec![], ..EnGrid::default() }, None, false, &EnSettings::default()),
            Err(BaselineError::EmptyGrid)
        ));
    }

    #[test]
    fn pure_noise_prefers_heavy_penalty() {
        let split = synth_split(
            SynthSpec {
                n_people: 15,
                samples_per_person: 6,
                n_genes: 30,
                n_rhythmic: 0,
                ..SynthSpec::default()
            },
            8,
        );
        let grid = EnGrid {
            n_lambda: 10,
            alphas: vec![1.0],
            ..EnGrid::default()
        };
        let (best, _) = hyper_search_en(&split, &grid, None, false, &EnSettings::default()).unwrap();
        let lm = en_lambda_max(&split, 1.0, None, false).unwrap();
        assert!(best.lambda >= lm * 1e-1, "{} vs {lm}", best.lambda);
    }

    #[test]
    fn log_path_shape() {
        let p = log_path(2.0, 5, 4.0);
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], 2.0);
        assert_abs_diff_eq!(p[4], 2e-4, epsilon = 1e-15);
    }

    fn random_xy(n: usize, d: usize, seed: u64) -> (Mat, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = centered(&x, &y, &(0..d).collect::<Vec<_>>());
        (c.x, c.y)
    }

    #[test]
    fn first_component_is_dominant_cross_covariance_direction() {
        let (x, y) = random_xy(30, 8, 1);
        let fit = nipals(&x, &y, 1).unwrap();
        let svd = (x.transpose() * &y).svd(true, false);
        let u = svd.u.unwrap();
        let (imax, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let dom = u.column(imax);
        let cos = fit.weights.column(0).dot(&dom).abs();
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn scores_are_orthogonal_and_exact_recovery() {
        let (x, _) = random_xy(25, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Mat::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = &x * &b;
        let fit = nipals(&x, &y, 6).unwrap();
        let g = fit.scores.transpose() * &fit.scores;
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert!(g[(i, j)].abs() <= 1e-8);
                }
            }
        }
        assert!((&x * &fit.coef - &y).amax() <= 1e-8);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let x = Mat::zeros(5, 3);
        let y = Mat::from_element(5, 2, 1.0);
        assert!(matches!(nipals(&x, &y, 1), Err(BaselineError::RankDeficient { component: 1 })));
    }

    #[test]
    fn plsr_top_k() {
        let split = small();
        let d = split.train.n_genes();
        let full = fit_plsr(&split, 3, d, false).unwrap();
        assert_eq!(full.selected, (0..d).collect::<Vec<_>>());
        let part = fit_plsr(&split, 3, 4, false).unwrap();
        assert_eq!(part.selected.len(), 4);
        for k in 0..d {
            if !part.selected.contains(&k) {
                assert_eq!(part.linear.beta[k], [0.0, 0.0]);
            }
        }
        assert!(fit_plsr(&split, 0, 4, false).is_err());
        assert!(fit_plsr(&split, 3, d + 1, false).is_err());
        let (best, pts) = hyper_search_plsr(&split, &PlsGrid { latent: vec![1, 2, 5], k: vec![3, 100] }, true).unwrap();
        assert!(!pts.is_empty());
        assert!(best.n_latent <= best.k);
    }

    #[test]
    fn noiseless_single_gene_is_accurate() {
        // one gene tracking cos(ICT) and one tracking sin(ICT): a linear
        // model on these recovers the encoded pair exactly
        let mut people = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..12 {
            let dlmo = rng.random_range(-3.0..3.0);
            let samples = (0..6)
                .map(|j| {
                    let zt = 4.0 * j as f64 + 1.0;
                    let p = CircTime::new(zt + dlmo).encode();
                    Sample {
                        sample_index: j.to_string(),
                        zt: CircTime::new(zt),
                        expression: vec![p.t2, p.t1],
                    }
                })
                .collect();
            people.push(PersonRecord {
                person_id: format!("p{i:03}"),
                samples,
                dlmo: Some(CircTime::new(dlmo)),
            });
        }
        let raw = crate::data::RawCohort {
            gene_ids: vec!["gc".into(), "gs".into()],
            people,
        };
        let split = prepare_split(&raw, 1, NormalizationScope::Train).unwrap();
        let m = fit_elastic_net(&split, 1e-6, 1.0, None, false, &EnSettings::default()).unwrap();
        let preds = m.linear.predict_pairs(&split.test).unwrap();
        let mut errs = Vec::new();
        for (ps, person) in preds.iter().zip(&split.test.people) {
            for (p, t) in ps.iter().zip(person.ict().unwrap()) {
                errs.push(circ_error(p.decode().unwrap(), t));
            }
        }
        assert!(crate::circular_time::mae(&errs).unwrap() <= 0.5);
    }
}

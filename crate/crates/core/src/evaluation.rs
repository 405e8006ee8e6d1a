//! Split, select, test: the end-to-end comparison protocol.
//!
//! One seeded person-level split per run. Each method picks its
//! hyperparameters on validation, is used as trained (no refit), and is
//! scored on test. DLMO rules are calibrated on validation only.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{
    en_lambda_max, fit_elastic_net, fit_plsr, hyper_search_en, hyper_search_plsr, intercept_only, BaselineError, ElasticNetModel,
    EnGrid, EnSettings, GenePanel, LinearModel, PlsGrid, PlsrModel,
};
use crate::bilstm::ModelError;
use crate::circular_time::{auc, circ_error, mae, CircPair, CircTime, HALF_DAY_HOURS};
use crate::data::{normalize_strict, prepare_split, DataError, GeneStats, NormalizationScope, NormalizedCohort, RawCohort, SplitCohort};
use crate::dlmo::{
    anchor, best_zt, fit_dlmo_weights, person_predictions, predict_dlmo_single, predict_dlmo_weighted, DlmoError, DlmoWeights,
    PersonPrediction,
};
use crate::trainer::{lambda_max, random_search, train, SearchSpace, TrainError, TrainedModel, TrialReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MODEL_FORMAT: &str = "lassornet-model/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dlmo(#[from] DlmoError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    /// True for failures of an optimizer or a degenerate fit, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            EvalError::Train(e) => matches!(e, TrainError::Diverged { .. } | TrainError::NoSuccessfulTrial),
            EvalError::Baseline(e) => matches!(
                e,
                BaselineError::NonConvergence { .. } | BaselineError::RankDeficient { .. } | BaselineError::AllFailed(_)
            ),
            EvalError::Dlmo(e) => matches!(e, DlmoError::SingularDesign),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InterceptOnly,
    Plsr,
    TimeSignature,
    TimeMachine,
    Lassornet,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::InterceptOnly => "Intercept",
            Method::Plsr => "PLSR",
            Method::TimeSignature => "TimeSignature",
            Method::TimeMachine => "TimeMachine",
            Method::Lassornet => "LassoRNet",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Augmented,
}

impl Variant {
    pub fn from_flag(augmented: bool) -> Self {
        if augmented {
            Variant::Augmented
        } else {
            Variant::Plain
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DlmoRule {
    Single,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub augmented: bool,
    /// Fit at the method's deselect-all penalty instead of searching.
    #[serde(default)]
    pub at_lambda_max: bool,
}

impl MethodSpec {
    pub fn new(method: Method, augmented: bool) -> Self {
        MethodSpec {
            method,
            augmented,
            at_lambda_max: false,
        }
    }

    pub fn dlmo_rule(&self) -> DlmoRule {
        if self.method == Method::Lassornet {
            DlmoRule::Weighted
        } else {
            DlmoRule::Single
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnFixed {
    pub lambda: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlsFixed {
    pub n_latent: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub methods: Vec<MethodSpec>,
    pub normalization: NormalizationScope,
    pub elastic_net: EnSettings,
    pub en_grid: EnGrid,
    /// Used by single-fit training instead of the grid.
    pub en_fixed: EnFixed,
    pub plsr_grid: PlsGrid,
    pub plsr_fixed: PlsFixed,
    /// Random-search space; `lassornet.base` doubles as the single-fit config.
    pub lassornet: SearchSpace,
    /// Gene panel file for TimeMachine, relative to the config file.
    pub panel_file: Option<PathBuf>,
    /// Inline panel; filled from `panel_file` on load.
    pub panel_genes: Option<Vec<String>>,
    /// Add an intercept to the weighted DLMO regression (diagnostic).
    pub dlmo_intercept: bool,
    /// Record elapsed seconds per method; makes reports non-reproducible.
    pub record_wall_time: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let mut methods = vec![MethodSpec::new(Method::InterceptOnly, false)];
        for m in [Method::Plsr, Method::TimeSignature, Method::TimeMachine, Method::Lassornet] {
            methods.push(MethodSpec::new(m, false));
            methods.push(MethodSpec::new(m, true));
        }
        ProtocolConfig {
            methods,
            normalization: NormalizationScope::Train,
            elastic_net: EnSettings::default(),
            en_grid: EnGrid::default(),
            en_fixed: EnFixed { lambda: 1e-2, alpha: 0.5 },
            plsr_grid: PlsGrid::default(),
            plsr_fixed: PlsFixed { n_latent: 5, k: 100 },
            lassornet: SearchSpace::default(),
            panel_file: None,
            panel_genes: None,
            dlmo_intercept: false,
            record_wall_time: false,
        }
    }
}

impl ProtocolConfig {
    /// Read a JSON config and resolve its panel file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: ProtocolConfig = serde_json::from_str(&text)?;
        if let Some(rel) = cfg.panel_file.clone() {
            let base = path.parent().unwrap_or(Path::new("."));
            let full = if rel.is_absolute() { rel } else { base.join(rel) };
            cfg.panel_genes = Some(GenePanel::load(&full)?.genes);
        }
        Ok(cfg)
    }

    pub fn panel(&self) -> Option<GenePanel> {
        self.panel_genes.as_ref().map(|g| GenePanel { genes: g.clone() })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

pub fn digest_json(v: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(v).expect("value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A fitted ICT predictor of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Intercept(LinearModel),
    ElasticNet(ElasticNetModel),
    Plsr(PlsrModel),
    Lassornet(TrainedModel),
}

impl FittedModel {
    pub fn predict_pairs(&self, cohort: &NormalizedCohort) -> Result<Vec<Vec<CircPair>>, EvalError> {
        Ok(match self {
            FittedModel::Intercept(m) => m.predict_pairs(cohort)?,
            FittedModel::ElasticNet(m) => m.linear.predict_pairs(cohort)?,
            FittedModel::Plsr(m) => m.linear.predict_pairs(cohort)?,
            FittedModel::Lassornet(m) => m.predict_pairs(cohort)?,
        })
    }

    pub fn predict_ict(&self, cohort: &NormalizedCohort) -> Result<Vec<Vec<Option<CircTime>>>, EvalError> {
        Ok(self
            .predict_pairs(cohort)?
            .into_iter()
            .map(|ps| ps.into_iter().map(|p| p.decode().ok()).collect())
            .collect())
    }

    pub fn n_selected(&self) -> usize {
        match self {
            FittedModel::Intercept(_) => 0,
            FittedModel::ElasticNet(m) => m.linear.selected().len(),
            FittedModel::Plsr(m) => m.selected.len(),
            FittedModel::Lassornet(m) => m.selected_features.len(),
        }
    }

    pub fn hyperparameters(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            FittedModel::Intercept(_) => json!({}),
            FittedModel::ElasticNet(m) => json!({
                "lambda": m.lambda, "alpha": m.alpha, "ridge": m.ridge,
                "panel_size": m.panel.as_ref().map(Vec::len),
            }),
            FittedModel::Plsr(m) => json!({"n_latent": m.n_latent, "k": m.k}),
            FittedModel::Lassornet(m) => json!({
                "lambda": m.config.lambda, "tau": m.config.tau, "lambda_bar": m.config.lambda_bar,
                "step_size": m.config.step_size, "hidden_size": m.config.hidden_size,
                "output_size": m.config.output_size, "best_epoch": m.best_epoch,
            }),
        }
    }
}

/// DLMO rule calibrated on validation predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmoCalibration {
    pub rule: DlmoRule,
    pub best_zt: CircTime,
    pub weights: Option<DlmoWeights>,
}

impl DlmoCalibration {
    pub fn fit(rule: DlmoRule, validation: &[PersonPrediction], with_intercept: bool) -> Result<Self, DlmoError> {
        let bz = best_zt(validation)?;
        let weights = match rule {
            DlmoRule::Single => None,
            DlmoRule::Weighted => {
                let (people, anchors): (Vec<PersonPrediction>, Vec<_>) = validation
                    .iter()
                    .filter_map(|p| anchor(p, bz, 3).ok().map(|a| (p.clone(), a)))
                    .unzip();
                Some(fit_dlmo_weights(&people, &anchors, with_intercept)?)
            }
        };
        Ok(DlmoCalibration {
            rule,
            best_zt: bz,
            weights,
        })
    }

    pub fn window(&self) -> usize {
        match self.rule {
            DlmoRule::Single => 1,
            DlmoRule::Weighted => 3,
        }
    }

    pub fn predict(&self, person: &PersonPrediction) -> Result<CircTime, DlmoError> {
        let a = anchor(person, self.best_zt, self.window())?;
        match &self.weights {
            Some(w) => predict_dlmo_weighted(person, &a, w),
            None => predict_dlmo_single(person, &a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    pub method: Method,
    pub variant: Variant,
    pub hyperparameters: serde_json::Value,
    pub validation_mse: Option<f64>,
    pub n_selected: usize,
    /// No input variable was selected.
    pub deselected_all: bool,
    pub mae_ict: Option<f64>,
    pub auc_ict: Option<f64>,
    /// Test-set circular ICT errors in person/sample order; an undecodable
    /// prediction counts as the maximal 12 h.
    pub ict_errors: Vec<f64>,
    pub n_undecodable: usize,
    pub dlmo_rule: DlmoRule,
    pub mae_dlmo: Option<f64>,
    pub auc_dlmo: Option<f64>,
    pub dlmo_errors: Vec<f64>,
    pub dlmo_error: Option<String>,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

impl FitReport {
    fn empty(spec: &MethodSpec, seed: u64, digest: &str) -> Self {
        FitReport {
            version: VERSION.to_string(),
            seed,
            config_digest: digest.to_string(),
            method: spec.method,
            variant: Variant::from_flag(spec.augmented),
            hyperparameters: serde_json::json!({}),
            validation_mse: None,
            n_selected: 0,
            deselected_all: false,
            mae_ict: None,
            auc_ict: None,
            ict_errors: Vec::new(),
            n_undecodable: 0,
            dlmo_rule: spec.dlmo_rule(),
            mae_dlmo: None,
            auc_dlmo: None,
            dlmo_errors: Vec::new(),
            dlmo_error: None,
            error: None,
            wall_time_s: None,
        }
    }

    /// The stored summaries equal those recomputed from the stored errors.
    pub fn is_consistent(&self) -> bool {
        let check = |errs: &[f64], m: Option<f64>, a: Option<f64>| {
            if errs.is_empty() {
                m.is_none() && a.is_none()
            } else {
                mae(errs).ok() == m && auc(errs).ok() == a
            }
        };
        self.deselected_all == (self.n_selected == 0 && self.error.is_none())
            && check(&self.ict_errors, self.mae_ict, self.auc_ict)
            && check(&self.dlmo_errors, self.mae_dlmo, self.auc_dlmo)
    }
}

/// Output of fitting one method: the model, its DLMO rule, and search logs.
#[derive(Debug, Clone)]
pub struct FittedMethod {
    pub spec: MethodSpec,
    pub model: FittedModel,
    pub validation_mse: f64,
    pub dlmo: Option<DlmoCalibration>,
    pub dlmo_error: Option<String>,
    pub trials: Vec<TrialReport>,
}

/// How hyperparameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Search,
    Fixed,
}

fn pair_mse(preds: &[Vec<CircPair>], cohort: &NormalizedCohort) -> f64 {
    crate::baselines::validation_mse(preds, cohort)
}

/// Fit one method on `split` and calibrate its DLMO rule on validation.
pub fn fit_method(
    split: &SplitCohort,
    spec: &MethodSpec,
    cfg: &ProtocolConfig,
    seed: u64,
    selection: Selection,
) -> Result<FittedMethod, EvalError> {
    let aug = spec.augmented;
    let panel = cfg.panel();
    let mut trials = Vec::new();
    let model = match spec.method {
        Method::InterceptOnly => FittedModel::Intercept(intercept_only(split, false)?),
        Method::TimeSignature | Method::TimeMachine => {
            let panel = if spec.method == Method::TimeMachine {
                Some(panel.as_ref().ok_or_else(|| EvalError::Config("TimeMachine requires a gene panel".into()))?)
            } else {
                None
            };
            let m = if spec.at_lambda_max {
                let lm = en_lambda_max(split, 1.0, panel, aug)?;
                fit_elastic_net(split, lm, 1.0, panel, aug, &cfg.elastic_net)?
            } else {
                match selection {
                    Selection::Search => hyper_search_en(split, &cfg.en_grid, panel, aug, &cfg.elastic_net)?.0,
                    Selection::Fixed => fit_elastic_net(split, cfg.en_fixed.lambda, cfg.en_fixed.alpha, panel, aug, &cfg.elastic_net)?,
                }
            };
            FittedModel::ElasticNet(m)
        }
        Method::Plsr => {
            if spec.at_lambda_max {
                return Err(EvalError::Config("PLSR has no penalty to raise".into()));
            }
            FittedModel::Plsr(match selection {
                Selection::Search => hyper_search_plsr(split, &cfg.plsr_grid, aug)?.0,
                Selection::Fixed => fit_plsr(split, cfg.plsr_fixed.n_latent, cfg.plsr_fixed.k, aug)?,
            })
        }
        Method::Lassornet => {
            let mut space = cfg.lassornet.clone();
            space.base.zt_augmented = aug;
            if spec.at_lambda_max {
                let mut c = space.base.clone();
                c.lambda = lambda_max(&c, split)?;
                FittedModel::Lassornet(train(&c, split)?)
            } else {
                match selection {
                    Selection::Search => {
                        let out = random_search(&space, split, seed)?;
                        trials = out.trials;
                        FittedModel::Lassornet(out.best)
                    }
                    Selection::Fixed => FittedModel::Lassornet(train(&space.base, split)?),
                }
            }
        }
    };
    let val_pairs = model.predict_pairs(&split.validation)?;
    let validation_mse = pair_mse(&val_pairs, &split.validation);
    let val_ict: Vec<Vec<Option<CircTime>>> = val_pairs
        .into_iter()
        .map(|ps| ps.into_iter().map(|p| p.decode().ok()).collect())
        .collect();
    let val_people = person_predictions(&split.validation, &val_ict);
    let (dlmo, dlmo_error) = match DlmoCalibration::fit(spec.dlmo_rule(), &val_people, cfg.dlmo_intercept) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(FittedMethod {
        spec: spec.clone(),
        model,
        validation_mse,
        dlmo,
        dlmo_error,
        trials,
    })
}

/// Score a fitted method on the test people.
pub fn score(fitted: &FittedMethod, test: &NormalizedCohort, seed: u64, digest: &str) -> Result<FitReport, EvalError> {
    let mut r = FitReport::empty(&fitted.spec, seed, digest);
    r.hyperparameters = fitted.model.hyperparameters();
    r.validation_mse = Some(fitted.validation_mse);
    r.n_selected = fitted.model.n_selected();
    r.deselected_all = r.n_selected == 0;

    let preds = fitted.model.predict_ict(test)?;
    for (ps, person) in preds.iter().zip(&test.people) {
        let Some(truth) = person.ict() else { continue };
        for (p, t) in ps.iter().zip(truth) {
            match p {
                Some(p) => r.ict_errors.push(circ_error(t, *p)),
                None => {
                    r.n_undecodable += 1;
                    r.ict_errors.push(HALF_DAY_HOURS);
                }
            }
        }
    }
    if !r.ict_errors.is_empty() {
        r.mae_ict = Some(mae(&r.ict_errors).expect("non-empty"));
        r.auc_ict = Some(auc(&r.ict_errors).expect("bounded errors"));
    }

    match &fitted.dlmo {
        Some(cal) => {
            let people = person_predictions(test, &preds);
            let mut failures = Vec::new();
            for p in &people {
                let Some(z) = p.dlmo else { continue };
                match cal.predict(p) {
                    Ok(est) => r.dlmo_errors.push(circ_error(z, est)),
                    Err(e) => failures.push(e.to_string()),
                }
            }
            if !failures.is_empty() {
                r.dlmo_error = Some(format!("{} test people skipped: {}", failures.len(), failures[0]));
            }
            if !r.dlmo_errors.is_empty() {
                r.mae_dlmo = Some(mae(&r.dlmo_errors).expect("non-empty"));
                r.auc_dlmo = Some(auc(&r.dlmo_errors).expect("bounded errors"));
            }
        }
        None => r.dlmo_error = fitted.dlmo_error.clone(),
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub report: FitReport,
    pub fitted: Option<FittedMethod>,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutput {
    pub split: SplitCohort,
    pub outcomes: Vec<MethodOutcome>,
}

impl ProtocolOutput {
    pub fn reports(&self) -> Vec<FitReport> {
        self.outcomes.iter().map(|o| o.report.clone()).collect()
    }
}

/// Run every configured method on one seeded split. A failing method is
/// recorded in its report and does not stop the others.
pub fn run_protocol(raw: &RawCohort, cfg: &ProtocolConfig, seed: u64) -> Result<ProtocolOutput, EvalError> {
    let split = prepare_split(raw, seed, cfg.normalization)?;
    let outcomes = run_on_split(&split, cfg, seed);
    Ok(ProtocolOutput { split, outcomes })
}

pub fn run_on_split(split: &SplitCohort, cfg: &ProtocolConfig, seed: u64) -> Vec<MethodOutcome> {
    let digest = cfg.digest();
    cfg.methods
        .par_iter()
        .map(|spec| {
            let start = Instant::now();
            let result = fit_method(split, spec, cfg, seed, Selection::Search)
                .and_then(|f| score(&f, &split.test, seed, &digest).map(|r| (r, f)));
            let mut outcome = match result {
                Ok((report, fitted)) => MethodOutcome {
                    report,
                    fitted: Some(fitted),
                },
                Err(e) => {
                    log::warn!("{} ({:?}) failed: {e}", spec.method.label(), Variant::from_flag(spec.augmented));
                    let mut report = FitReport::empty(spec, seed, &digest);
                    report.error = Some(e.to_string());
                    MethodOutcome { report, fitted: None }
                }
            };
            if cfg.record_wall_time {
                outcome.report.wall_time_s = Some(start.elapsed().as_secs_f64());
            }
            outcome
        })
        .collect()
}

pub fn write_reports<W: Write>(mut out: W, reports: &[FitReport]) -> Result<(), EvalError> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(io_err(Path::new("<report>")))?;
    }
    Ok(())
}

pub fn read_reports<R: BufRead>(input: R) -> Result<Vec<FitReport>, EvalError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(io_err(Path::new("<report>")))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(t)?);
    }
    Ok(out)
}

fn fmt_stat(v: &[f64], digits: usize) -> String {
    match v.len() {
        0 => "-".to_string(),
        1 => format!("{:.*}", digits, v[0]),
        n => {
            let m = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            format!("{m:.digits$} ± {sd:.digits$}")
        }
    }
}

/// Text table with one row per (method, variant); several seeds are
/// summarized as mean ± sd. `‡` marks rows where nothing was selected.
pub fn render_table(reports: &[FitReport]) -> String {
    let mut groups: BTreeMap<(Method, Variant), Vec<&FitReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.method, r.variant)).or_default().push(r);
    }
    let header = ["Method", "Variant", "MAE ICT (h)", "AUC ICT", "MAE DLMO (h)", "AUC DLMO", "Selected", "Runs"];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for ((m, v), rs) in &groups {
        let ok: Vec<&&FitReport> = rs.iter().filter(|r| r.error.is_none()).collect();
        let col = |f: fn(&FitReport) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let sel = ok.iter().map(|r| r.n_selected as f64).collect::<Vec<_>>();
        let mark = if !ok.is_empty() && ok.iter().all(|r| r.deselected_all) { " ‡" } else { "" };
        rows.push(vec![
            format!("{}{}", m.label(), mark),
            match v {
                Variant::Plain => "plain".into(),
                Variant::Augmented => "+ZT".into(),
            },
            fmt_stat(&col(|r| r.mae_ict), 2),
            fmt_stat(&col(|r| r.auc_ict), 3),
            fmt_stat(&col(|r| r.mae_dlmo), 2),
            fmt_stat(&col(|r| r.auc_dlmo), 3),
            fmt_stat(&sel, 0),
            if ok.len() == rs.len() {
                rs.len().to_string()
            } else {
                format!("{}/{} ok", ok.len(), rs.len())
            },
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    if groups.values().flatten().any(|r| r.deselected_all) {
        out.push_str("‡ no input variable was selected\n");
    }
    out
}

/// Everything needed to apply a fitted method to a new raw cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    pub method: Method,
    pub augmented: bool,
    pub stats: GeneStats,
    pub model: FittedModel,
    pub dlmo: Option<DlmoCalibration>,
}

impl SavedModel {
    pub fn new(fitted: &FittedMethod, train: &NormalizedCohort, seed: u64, digest: &str) -> Self {
        SavedModel {
            format: MODEL_FORMAT.to_string(),
            version: VERSION.to_string(),
            seed,
            config_digest: digest.to_string(),
            method: fitted.spec.method,
            augmented: fitted.spec.augmented,
            stats: train.stats.clone(),
            model: fitted.model.clone(),
            dlmo: fitted.dlmo.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m: SavedModel = serde_json::from_str(&text)?;
        if m.format != MODEL_FORMAT {
            return Err(EvalError::Config(format!("unsupported model format {}", m.format)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    /// Per-sample ICT (and, where the rule applies, per-person DLMO) predictions.
    pub fn predict(&self, raw: &RawCohort) -> Result<Vec<PredictionRow>, EvalError> {
        let cohort = normalize_strict(raw, &self.stats)?;
        let pairs = self.model.predict_pairs(&cohort)?;
        let ict: Vec<Vec<Option<CircTime>>> = pairs
            .iter()
            .map(|ps| ps.iter().map(|p| p.decode().ok()).collect())
            .collect();
        let people = person_predictions(&cohort, &ict);
        let mut rows = Vec::new();
        for ((person, ps), pp) in cohort.people.iter().zip(&pairs).zip(&people) {
            let dlmo = self.dlmo.as_ref().and_then(|c| c.predict(pp).ok());
            for ((s, p), t) in person.samples.iter().zip(ps).zip(&pp.predicted_ict) {
                rows.push(PredictionRow {
                    person_id: person.person_id.clone(),
                    sample_index: s.sample_index.clone(),
                    zt: s.zt,
                    pair: *p,
                    ict: *t,
                    dlmo,
                });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub person_id: String,
    pub sample_index: String,
    pub zt: CircTime,
    pub pair: CircPair,
    pub ict: Option<CircTime>,
    pub dlmo: Option<CircTime>,
}

pub fn write_predictions<W: Write>(mut out: W, rows: &[PredictionRow], comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "person_id,sample_index,zt,ict_sin,ict_cos,ict,dlmo")?;
    let opt = |t: Option<CircTime>| t.map(|t| format!("{}", t.hours())).unwrap_or_else(|| "NA".into());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.person_id,
            r.sample_index,
            r.zt.hours(),
            r.pair.t1,
            r.pair.t2,
            opt(r.ict),
            opt(r.dlmo)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_cohort, SynthSpec};
    use crate::trainer::TrainConfig;

    fn quick_cfg(methods: Vec<MethodSpec>) -> ProtocolConfig {
        ProtocolConfig {
            methods,
            en_grid: EnGrid {
                n_lambda: 5,
                alphas: vec![0.5, 1.0],
                ..EnGrid::default()
            },
            plsr_grid: PlsGrid {
                latent: vec![2, 5],
                k: vec![10, 100],
            },
            lassornet: SearchSpace {
                trials: 2,
                hidden_sizes: vec![3],
                output_sizes: vec![2],
                step_size: [1e-2, 5e-2],
                base: TrainConfig {
                    max_epochs: 30,
                    patience: 30,
                    ..TrainConfig::default()
                },
                ..SearchSpace::default()
            },
            panel_genes: Some(vec!["gene0000".into(), "gene0001".into(), "gene0003".into(), "absent".into()]),
            ..ProtocolConfig::default()
        }
    }

    fn cohort() -> RawCohort {
        synth_cohort(
            &SynthSpec {
                n_people: 14,
                samples_per_person: 6,
                n_genes: 16,
                n_rhythmic: 6,
                ..SynthSpec::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn every_method_reports_consistently() {
        let cfg = quick_cfg(ProtocolConfig::default().methods);
        let out = run_protocol(&cohort(), &cfg, 3).unwrap();
        assert_eq!(out.outcomes.len(), 9);
        for (o, spec) in out.outcomes.iter().zip(&cfg.methods) {
            let r = &o.report;
            assert_eq!((r.method, r.variant), (spec.method, Variant::from_flag(spec.augmented)));
            assert!(r.error.is_none(), "{:?}: {:?}", r.method, r.error);
            assert!(r.is_consistent());
            let m = r.mae_ict.unwrap();
            assert!((0.0..=12.0).contains(&m));
            assert!((0.0..=1.0).contains(&r.auc_ict.unwrap()));
            assert_eq!(r.config_digest, cfg.digest());
        }
        let intercept = &out.outcomes[0].report;
        assert!(intercept.deselected_all);
    }

    #[test]
    fn intercept_row_is_constant_prediction_error() {
        let cfg = quick_cfg(vec![MethodSpec::new(Method::InterceptOnly, false)]);
        let out = run_protocol(&cohort(), &cfg, 4).unwrap();
        let f = out.outcomes[0].fitted.as_ref().unwrap();
        let FittedModel::Intercept(m) = &f.model else { panic!("intercept expected") };
        let c = CircPair::new(m.beta0[0], m.beta0[1]).decode().unwrap();
        let mut errs = Vec::new();
        for p in &out.split.test.people {
            for t in p.ict().unwrap() {
                errs.push(circ_error(t, c));
            }
        }
        assert_eq!(out.outcomes[0].report.mae_ict, Some(mae(&errs).unwrap()));
    }

    #[test]
    fn test_labels_do_not_influence_fits() {
        let cfg = quick_cfg(ProtocolConfig::default().methods);
        let raw = cohort();
        let split = prepare_split(&raw, 6, cfg.normalization).unwrap();
        let mut tainted = split.clone();
        for p in &mut tainted.test.people {
            p.dlmo = p.dlmo.map(|z| CircTime::new(z.hours() + 7.0));
            for s in &mut p.samples {
                for v in &mut s.expression {
                    *v = -*v;
                }
            }
        }
        let a = run_on_split(&split, &cfg, 6);
        let b = run_on_split(&tainted, &cfg, 6);
        for (x, y) in a.iter().zip(&b) {
            let (fx, fy) = (x.fitted.as_ref().unwrap(), y.fitted.as_ref().unwrap());
            assert_eq!(fx.model, fy.model);
            assert_eq!(fx.dlmo, fy.dlmo);
            assert_eq!(fx.validation_mse, fy.validation_mse);
        }
    }

    #[test]
    fn reports_round_trip_and_are_reproducible() {
        let cfg = quick_cfg(vec![
            MethodSpec::new(Method::TimeSignature, true),
            MethodSpec::new(Method::Lassornet, true),
        ]);
        let raw = cohort();
        let mut a = Vec::new();
        write_reports(&mut a, &run_protocol(&raw, &cfg, 2).unwrap().reports()).unwrap();
        let mut b = Vec::new();
        write_reports(&mut b, &run_protocol(&raw, &cfg, 2).unwrap().reports()).unwrap();
        assert_eq!(a, b);
        let back = read_reports(&a[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.iter().all(FitReport::is_consistent));
        let table = render_table(&back);
        assert!(table.contains("TimeSignature"));
        assert!(table.contains("LassoRNet"));
    }

    #[test]
    fn lambda_max_rows_deselect_everything() {
        let methods = [Method::TimeSignature, Method::TimeMachine, Method::Lassornet]
            .into_iter()
            .map(|m| MethodSpec {
                method: m,
                augmented: true,
                at_lambda_max: true,
            })
            .collect();
        let cfg = quick_cfg(methods);
        let out = run_protocol(&cohort(), &cfg, 8).unwrap();
        for o in &out.outcomes {
            assert!(o.report.error.is_none(), "{:?}", o.report.error);
            assert!(o.report.deselected_all, "{:?}", o.report.method);
        }
        let table = render_table(&out.reports());
        assert!(table.contains('‡'));
    }

    #[test]
    fn missing_panel_is_a_recorded_error() {
        let mut cfg = quick_cfg(vec![MethodSpec::new(Method::TimeMachine, false)]);
        cfg.panel_genes = None;
        let out = run_protocol(&cohort(), &cfg, 1).unwrap();
        assert!(out.outcomes[0].report.error.as_deref().unwrap().contains("panel"));
        assert!(out.outcomes[0].report.is_consistent());
    }

    #[test]
    fn saved_model_predicts_like_the_fit() {
        let cfg = quick_cfg(vec![MethodSpec::new(Method::Lassornet, true)]);
        let raw = cohort();
        let out = run_protocol(&raw, &cfg, 9).unwrap();
        let f = out.outcomes[0].fitted.as_ref().unwrap();
        let saved = SavedModel::new(f, &out.split.train, 9, &cfg.digest());
        let text = serde_json::to_string(&saved).unwrap();
        let back: SavedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, saved);
        let rows = back.predict(&raw).unwrap();
        assert_eq!(rows.len(), raw.n_samples());

        let mut fewer = raw.clone();
        fewer.gene_ids[1] = "renamed".into();
        match back.predict(&fewer) {
            Err(EvalError::Data(DataError::MissingGene(g))) => assert_eq!(g, "gene0001"),
            other => panic!("expected a missing gene, got {other:?}"),
        }
    }

    #[test]
    fn config_json_defaults_and_digest() {
        let cfg: ProtocolConfig = serde_json::from_str(r#"{"methods": [{"method": "plsr", "augmented": true}]}"#).unwrap();
        assert_eq!(cfg.methods.len(), 1);
        assert_eq!(cfg.en_grid, EnGrid::default());
        assert_ne!(cfg.digest(), ProtocolConfig::default().digest());
        assert_eq!(cfg.digest().len(), 64);
        assert!(serde_json::from_str::<ProtocolConfig>(r#"{"metods": []}"#).is_err());
        assert_eq!(Method::parse("time_machine"), Some(Method::TimeMachine));
    }
}

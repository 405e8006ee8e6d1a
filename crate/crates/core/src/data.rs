//! Cohort ingestion, Z-score normalization, person-level splitting and a
//! synthetic cohort generator.
//!
//! A cohort is a list of people, each with an ordered sequence of samples.
//! Every sample carries the recorded ZT and one expression value per gene.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circular_time::CircTime;

pub const LONG_CSV_HEADER: [&str; 6] = ["person_id", "sample_index", "zt", "dlmo", "gene_id", "value"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("person {person} sample {sample} is missing gene {gene}")]
    InconsistentGenes {
        person: String,
        sample: String,
        gene: String,
    },
    #[error("duplicate entry for person {person} sample {sample} gene {gene}")]
    DuplicateSample {
        person: String,
        sample: String,
        gene: String,
    },
    #[error("gene {0} required by the model is absent from the cohort")]
    MissingGene(String),
    #[error("every gene was removed by the normalization filter")]
    AllGenesRemoved,
    #[error("split needs at least 3 people, got {0}")]
    TooFewPeople(usize),
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        DataError::Parse {
            line,
            msg: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_index: String,
    pub zt: CircTime,
    pub expression: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub person_id: String,
    pub samples: Vec<Sample>,
    pub dlmo: Option<CircTime>,
}

impl PersonRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Internal circadian time of each sample, `zt + dlmo`, when DLMO is known.
    pub fn ict(&self) -> Option<Vec<CircTime>> {
        let z = self.dlmo?;
        Some(
            self.samples
                .iter()
                .map(|s| CircTime::new(s.zt.hours() + z.hours()))
                .collect(),
        )
    }
}

/// People and their samples before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCohort {
    pub gene_ids: Vec<String>,
    pub people: Vec<PersonRecord>,
}

impl RawCohort {
    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.people.iter().map(|p| p.samples.len()).sum()
    }

    pub fn subset(&self, people: &[usize]) -> RawCohort {
        RawCohort {
            gene_ids: self.gene_ids.clone(),
            people: people.iter().map(|&i| self.people[i].clone()).collect(),
        }
    }
}

/// Per-gene location and scale used by the Z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneStats {
    pub gene_ids: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl GeneStats {
    pub fn identity(gene_ids: &[String]) -> Self {
        GeneStats {
            gene_ids: gene_ids.to_vec(),
            mean: vec![0.0; gene_ids.len()],
            sd: vec![1.0; gene_ids.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCohort {
    pub gene_ids: Vec<String>,
    pub people: Vec<PersonRecord>,
    /// Statistics of the kept genes, aligned with `gene_ids`.
    pub stats: GeneStats,
    pub removed_genes: Vec<String>,
}

impl NormalizedCohort {
    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_people(&self) -> usize {
        self.people.len()
    }

    pub fn n_samples(&self) -> usize {
        self.people.iter().map(|p| p.samples.len()).sum()
    }

    pub fn subset(&self, people: &[usize]) -> NormalizedCohort {
        NormalizedCohort {
            gene_ids: self.gene_ids.clone(),
            people: people.iter().map(|&i| self.people[i].clone()).collect(),
            stats: self.stats.clone(),
            removed_genes: self.removed_genes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCohort {
    pub train: NormalizedCohort,
    pub validation: NormalizedCohort,
    pub test: NormalizedCohort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Statistics from the training people, applied to validation and test.
    #[default]
    Train,
    /// Statistics over every person and sample of the cohort.
    FullCohort,
}

fn parse_value(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

/// Read a cohort in the long CSV layout. Lines starting with `#` are ignored.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<RawCohort, DataError> {
    read_cohort(File::open(path)?)
}

pub fn read_cohort<R: Read>(reader: R) -> Result<RawCohort, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.len() == 1 && headers[0].is_empty() {
        return Err(DataError::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    let cols: Vec<&str> = headers.iter().collect();
    if cols != LONG_CSV_HEADER {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header {:?}, found {:?}", LONG_CSV_HEADER.join(","), cols.join(",")),
        });
    }

    struct SampleAcc {
        sample_index: String,
        zt: f64,
        values: HashMap<usize, f64>,
    }
    struct PersonAcc {
        person_id: String,
        dlmo: Option<f64>,
        samples: Vec<SampleAcc>,
        by_index: HashMap<String, usize>,
    }

    let mut genes: Vec<String> = Vec::new();
    let mut gene_pos: HashMap<String, usize> = HashMap::new();
    let mut people: Vec<PersonAcc> = Vec::new();
    let mut person_pos: HashMap<String, usize> = HashMap::new();
    let mut n_rows = 0usize;

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |msg: String| DataError::Parse { line, msg };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", rec.len())));
        }
        n_rows += 1;
        let pid = rec[0].to_string();
        let sidx = rec[1].to_string();
        if pid.is_empty() || sidx.is_empty() {
            return Err(bad("empty person_id or sample_index".into()));
        }
        let zt: f64 = rec[2]
            .parse()
            .map_err(|_| bad(format!("invalid zt {:?}", &rec[2])))?;
        if !zt.is_finite() {
            return Err(bad(format!("non-finite zt {:?}", &rec[2])));
        }
        let dlmo = if rec[3].is_empty() {
            None
        } else {
            let z: f64 = rec[3]
                .parse()
                .map_err(|_| bad(format!("invalid dlmo {:?}", &rec[3])))?;
            if !z.is_finite() {
                return Err(bad(format!("non-finite dlmo {:?}", &rec[3])));
            }
            Some(z)
        };
        let gene = rec[4].to_string();
        if gene.is_empty() {
            return Err(bad("empty gene_id".into()));
        }
        let value = parse_value(&rec[5]).ok_or_else(|| bad(format!("invalid value {:?}", &rec[5])))?;

        let g = *gene_pos.entry(gene.clone()).or_insert_with(|| {
            genes.push(gene.clone());
            genes.len() - 1
        });
        let p = *person_pos.entry(pid.clone()).or_insert_with(|| {
            people.push(PersonAcc {
                person_id: pid.clone(),
                dlmo,
                samples: Vec::new(),
                by_index: HashMap::new(),
            });
            people.len() - 1
        });
        let person = &mut people[p];
        if person.dlmo != dlmo {
            return Err(bad(format!("inconsistent dlmo for person {pid}")));
        }
        let s = match person.by_index.get(&sidx) {
            Some(&s) => s,
            None => {
                person.samples.push(SampleAcc {
                    sample_index: sidx.clone(),
                    zt,
                    values: HashMap::new(),
                });
                person.by_index.insert(sidx.clone(), person.samples.len() - 1);
                person.samples.len() - 1
            }
        };
        let sample = &mut person.samples[s];
        if sample.zt != zt {
            return Err(bad(format!("inconsistent zt for person {pid} sample {sidx}")));
        }
        if sample.values.insert(g, value).is_some() {
            return Err(DataError::DuplicateSample {
                person: pid,
                sample: sidx,
                gene,
            });
        }
    }
    if n_rows == 0 {
        return Err(DataError::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }

    let mut out = Vec::with_capacity(people.len());
    for p in people {
        let mut samples = Vec::with_capacity(p.samples.len());
        for s in p.samples {
            let mut expression = Vec::with_capacity(genes.len());
            for (g, gene) in genes.iter().enumerate() {
                match s.values.get(&g) {
                    Some(&v) => expression.push(v),
                    None => {
                        return Err(DataError::InconsistentGenes {
                            person: p.person_id.clone(),
                            sample: s.sample_index.clone(),
                            gene: gene.clone(),
                        })
                    }
                }
            }
            samples.push(Sample {
                sample_index: s.sample_index,
                zt: CircTime::new(s.zt),
                expression,
            });
        }
        out.push(PersonRecord {
            person_id: p.person_id,
            samples,
            dlmo: p.dlmo.map(CircTime::new),
        });
    }
    Ok(RawCohort {
        gene_ids: genes,
        people: out,
    })
}

/// Write a cohort in the long CSV layout, optionally preceded by `#` comment lines.
pub fn write_cohort<W: Write>(writer: W, cohort: &RawCohort, comments: &[String]) -> Result<(), DataError> {
    let mut writer = writer;
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LONG_CSV_HEADER)?;
    for p in &cohort.people {
        let dlmo = p.dlmo.map(|z| z.hours().to_string()).unwrap_or_default();
        for s in &p.samples {
            let zt = s.zt.hours().to_string();
            for (g, v) in cohort.gene_ids.iter().zip(&s.expression) {
                let value = if v.is_nan() { "NA".to_string() } else { v.to_string() };
                w.write_record([p.person_id.as_str(), &s.sample_index, &zt, &dlmo, g, &value])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Leading `#` comment lines of a long CSV file, without the marker.
pub fn read_comments(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(rest) => out.push(rest.trim().to_string()),
            None => break,
        }
    }
    Ok(out)
}

/// Population mean and standard deviation of each gene over every sample.
pub fn compute_stats(cohort: &RawCohort) -> GeneStats {
    let g = cohort.n_genes();
    let n = cohort.n_samples() as f64;
    let mut mean = vec![0.0; g];
    for s in cohort.people.iter().flat_map(|p| &p.samples) {
        for (m, v) in mean.iter_mut().zip(&s.expression) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; g];
    for s in cohort.people.iter().flat_map(|p| &p.samples) {
        for ((acc, v), m) in var.iter_mut().zip(&s.expression).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    GeneStats {
        gene_ids: cohort.gene_ids.clone(),
        mean,
        sd: var.into_iter().map(|v| (v / n).sqrt()).collect(),
    }
}

/// Z-score every gene.
///
/// Without `stats`, statistics come from this cohort and genes with a missing
/// value or zero spread are removed. With `stats`, only the genes they cover
/// are kept, in their order; a missing value in a kept gene is imputed at the
/// reference mean (zero after scaling).
pub fn normalize(cohort: &RawCohort, stats: Option<&GeneStats>) -> Result<NormalizedCohort, DataError> {
    let own;
    let (reference, filter) = match stats {
        Some(s) => (s, false),
        None => {
            own = compute_stats(cohort);
            (&own, true)
        }
    };
    let column: HashMap<&str, usize> = cohort
        .gene_ids
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let has_missing: Vec<bool> = (0..cohort.n_genes())
        .map(|g| {
            cohort
                .people
                .iter()
                .flat_map(|p| &p.samples)
                .any(|s| !s.expression[g].is_finite())
        })
        .collect();

    let mut keep: Vec<(usize, f64, f64)> = Vec::new();
    let mut kept_ids = Vec::new();
    let mut removed = Vec::new();
    for (r, gene) in reference.gene_ids.iter().enumerate() {
        let Some(&col) = column.get(gene.as_str()) else {
            removed.push(gene.clone());
            continue;
        };
        let (m, s) = (reference.mean[r], reference.sd[r]);
        if filter && (has_missing[col] || !(s > 0.0) || !m.is_finite()) {
            removed.push(gene.clone());
            continue;
        }
        if !filter && !(s > 0.0) {
            removed.push(gene.clone());
            continue;
        }
        keep.push((col, m, s));
        kept_ids.push(gene.clone());
    }
    if !filter {
        let known: HashSet<&str> = reference.gene_ids.iter().map(String::as_str).collect();
        removed.extend(cohort.gene_ids.iter().filter(|g| !known.contains(g.as_str())).cloned());
    }
    if !removed.is_empty() {
        log::info!(
            "normalization removed {} gene(s): {}",
            removed.len(),
            removed.iter().take(10).cloned().collect::<Vec<_>>().join(", ")
        );
    }
    if keep.is_empty() {
        return Err(DataError::AllGenesRemoved);
    }

    let mut imputed = 0usize;
    let people = cohort
        .people
        .iter()
        .map(|p| PersonRecord {
            person_id: p.person_id.clone(),
            dlmo: p.dlmo,
            samples: p
                .samples
                .iter()
                .map(|s| Sample {
                    sample_index: s.sample_index.clone(),
                    zt: s.zt,
                    expression: keep
                        .iter()
                        .map(|&(c, m, sd)| {
                            let v = s.expression[c];
                            if v.is_finite() {
                                (v - m) / sd
                            } else {
                                imputed += 1;
                                0.0
                            }
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    if imputed > 0 {
        log::warn!("imputed {imputed} missing expression value(s) at the reference mean");
    }
    Ok(NormalizedCohort {
        stats: GeneStats {
            gene_ids: kept_ids.clone(),
            mean: keep.iter().map(|k| k.1).collect(),
            sd: keep.iter().map(|k| k.2).collect(),
        },
        gene_ids: kept_ids,
        people,
        removed_genes: removed,
    })
}

/// Normalize with fixed reference statistics, requiring every reference gene.
pub fn normalize_strict(cohort: &RawCohort, stats: &GeneStats) -> Result<NormalizedCohort, DataError> {
    let present: HashSet<&str> = cohort.gene_ids.iter().map(String::as_str).collect();
    if let Some(g) = stats.gene_ids.iter().find(|g| !present.contains(g.as_str())) {
        return Err(DataError::MissingGene(g.clone()));
    }
    let out = normalize(cohort, Some(stats))?;
    if out.gene_ids != stats.gene_ids {
        let lost = stats.gene_ids.iter().find(|g| !out.gene_ids.contains(g));
        return Err(DataError::MissingGene(lost.cloned().unwrap_or_default()));
    }
    Ok(out)
}

/// Person counts for the train/validation/test partition of `m` people.
///
/// Each part gets the floor of its share; leftover people go to validation
/// first, then test.
pub fn split_sizes(m: usize) -> (usize, usize, usize) {
    let train = (m as f64 * 0.4).floor() as usize;
    let mut val = (m as f64 * 0.3).floor() as usize;
    let mut test = val;
    let mut rest = m - train - val - test;
    if rest > 0 {
        val += 1;
        rest -= 1;
    }
    test += rest;
    (train, val, test)
}

/// Seeded person-level partition, returned as index lists into `0..m`.
pub fn split_indices(m: usize, seed: u64) -> Result<[Vec<usize>; 3], DataError> {
    if m < 3 {
        return Err(DataError::TooFewPeople(m));
    }
    let (n_train, n_val, _) = split_sizes(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok([train, val, test])
}

pub fn split(cohort: &NormalizedCohort, seed: u64) -> Result<SplitCohort, DataError> {
    let [tr, va, te] = split_indices(cohort.n_people(), seed)?;
    Ok(SplitCohort {
        train: cohort.subset(&tr),
        validation: cohort.subset(&va),
        test: cohort.subset(&te),
    })
}

/// Split a raw cohort and normalize it according to `scope`.
pub fn prepare_split(raw: &RawCohort, seed: u64, scope: NormalizationScope) -> Result<SplitCohort, DataError> {
    match scope {
        NormalizationScope::FullCohort => split(&normalize(raw, None)?, seed),
        NormalizationScope::Train => {
            let [tr, va, te] = split_indices(raw.people.len(), seed)?;
            let train = normalize(&raw.subset(&tr), None)?;
            let validation = normalize(&raw.subset(&va), Some(&train.stats))?;
            let test = normalize(&raw.subset(&te), Some(&train.stats))?;
            Ok(SplitCohort {
                train,
                validation,
                test,
            })
        }
    }
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_people: usize,
    pub samples_per_person: usize,
    pub n_genes: usize,
    /// The first `n_rhythmic` genes oscillate with internal time.
    pub n_rhythmic: usize,
    pub amplitude_range: [f64; 2],
    /// Noise standard deviation added to rhythmic genes.
    pub noise_sd: f64,
    /// Standard deviation of the non-rhythmic genes.
    pub background_sd: f64,
    /// DLMO offsets are drawn uniformly from this range (hours, wrapped mod 24).
    pub dlmo_range: [f64; 2],
    pub interval_hours: f64,
    /// First sample ZT is a whole hour drawn uniformly from this range.
    pub first_zt_range: [f64; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_people: 30,
            samples_per_person: 8,
            n_genes: 200,
            n_rhythmic: 40,
            amplitude_range: [0.8, 1.2],
            noise_sd: 0.3,
            background_sd: 1.0,
            dlmo_range: [-4.0, 4.0],
            interval_hours: 4.0,
            first_zt_range: [0.0, 4.0],
        }
    }
}

impl SynthSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let spec: SynthSpec = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::BadSpec(m.to_string()));
        if self.n_people == 0 || self.samples_per_person == 0 || self.n_genes == 0 {
            return bad("n_people, samples_per_person and n_genes must be positive");
        }
        if self.n_rhythmic > self.n_genes {
            return bad("n_rhythmic exceeds n_genes");
        }
        let [a0, a1] = self.amplitude_range;
        if !(a0.is_finite() && a1.is_finite() && a0 >= 0.0 && a0 <= a1) {
            return bad("amplitude_range must satisfy 0 <= lo <= hi");
        }
        if !(self.noise_sd >= 0.0 && self.background_sd >= 0.0) {
            return bad("noise standard deviations must be non-negative");
        }
        let [d0, d1] = self.dlmo_range;
        if !(d0.is_finite() && d1.is_finite() && d0 <= d1) {
            return bad("dlmo_range must satisfy lo <= hi");
        }
        let [z0, z1] = self.first_zt_range;
        if !(z0.is_finite() && z1.is_finite() && z0 <= z1) {
            return bad("first_zt_range must satisfy lo <= hi");
        }
        if !(self.interval_hours.is_finite() && self.interval_hours > 0.0) {
            return bad("interval_hours must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generate a cohort whose rhythmic genes follow
/// `a_k sin(pi (zt + Z_i) / 12 + phi_k) + noise`; DLMO `Z_i` is recorded.
pub fn synth_cohort(spec: &SynthSpec, seed: u64) -> Result<RawCohort, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| DataError::BadSpec(e.to_string()))?;
    let background = Normal::new(0.0, spec.background_sd).map_err(|e| DataError::BadSpec(e.to_string()))?;

    let amplitude: Vec<f64> = (0..spec.n_rhythmic)
        .map(|_| uniform(&mut rng, spec.amplitude_range))
        .collect();
    let phase: Vec<f64> = (0..spec.n_rhythmic)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let baseline: Vec<f64> = (0..spec.n_genes).map(|_| rng.random_range(4.0..10.0)).collect();

    let gene_ids: Vec<String> = (0..spec.n_genes).map(|k| format!("gene{k:04}")).collect();
    let mut people = Vec::with_capacity(spec.n_people);
    for i in 0..spec.n_people {
        let z = CircTime::new(uniform(&mut rng, spec.dlmo_range));
        let first = uniform(&mut rng, spec.first_zt_range).floor();
        let samples = (0..spec.samples_per_person)
            .map(|j| {
                let zt = first + j as f64 * spec.interval_hours;
                let ict = zt + z.hours();
                let expression = (0..spec.n_genes)
                    .map(|k| {
                        if k < spec.n_rhythmic {
                            let signal = amplitude[k] * (std::f64::consts::PI * ict / 12.0 + phase[k]).sin();
                            baseline[k] + signal + noise.sample(&mut rng)
                        } else {
                            baseline[k] + background.sample(&mut rng)
                        }
                    })
                    .collect();
                Sample {
                    sample_index: j.to_string(),
                    zt: CircTime::new(zt),
                    expression,
                }
            })
            .collect();
        people.push(PersonRecord {
            person_id: format!("p{i:03}"),
            samples,
            dlmo: Some(z),
        });
    }
    Ok(RawCohort { gene_ids, people })
}

//! Clinical cohort assembly: table ingestion, imputation, label encoding,
//! class balancing, modality expansion, and train/val/test splitting.
//!
//! All randomness is drawn from caller-provided seeded generators so cohort
//! construction is reproducible bit-for-bit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Days per year used for survival class boundaries and imputation bands.
pub const DAYS_PER_YEAR: f64 = 365.0;
/// Imputed survival band for the 24% arm: 4-5 years, lower-inclusive.
pub const SURVIVAL_BAND_SHORT: (u32, u32) = (1460, 1825); // [lo, hi)
/// Imputed survival band for the 76% arm: 5-7 years, inclusive.
pub const SURVIVAL_BAND_LONG: (u32, u32) = (1825, 2555); // [lo, hi]
/// Probability of the 4-5 year band when imputing survival.
pub const SURVIVAL_SHORT_PROB: f64 = 0.24;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("clinical table is missing required column '{0}'")]
    MissingColumn(&'static str),
    #[error("duplicate patient id '{0}'")]
    DuplicatePatient(String),
    #[error("row {row}: missing or unrecognized grade '{value}'")]
    MissingGrade { row: usize, value: String },
    #[error("patient {patient}: modality {modality} file not found at {path}")]
    MissingModalityFile {
        patient: String,
        modality: Modality,
        path: String,
    },
    #[error("patient {patient}: no path attached for modality {modality}")]
    MissingModalityPath { patient: String, modality: Modality },
    #[error("age imputation needs at least 2 observed ages, found {0}")]
    TooFewObservedAges(usize),
    #[error("patient {0}: age missing after imputation stage")]
    MissingAge(String),
    #[error("patient {0}: survival missing after imputation stage")]
    MissingSurvival(String),
    #[error("degenerate cohort: all ages equal ({0}), cannot min-max normalize")]
    DegenerateAges(f64),
    #[error("patient {0}: age not normalized; run normalize_age first")]
    AgeNotNormalized(String),
    #[error("class {0:?} has no patients")]
    EmptyClass(Grade),
    #[error("train fraction {0} outside (0, 1)")]
    BadTrainFraction(f64),
    #[error("validation fraction {0} outside [0, 1)")]
    BadValFraction(f64),
    #[error("no samples to split")]
    NoSamples,
    #[error("{label} class {class} has no members in the {partition} partition at the requested sizes")]
    ClassAbsent {
        label: &'static str,
        class: u8,
        partition: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, CohortError>;

/// Tumor grade label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    Lgg,
    Hgg,
}

impl Grade {
    pub fn code(self) -> u8 {
        match self {
            Grade::Lgg => 0,
            Grade::Hgg => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Grade> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LGG" => Some(Grade::Lgg),
            "HGG" => Some(Grade::Hgg),
            _ => None,
        }
    }
}

impl std::fmt::Display for Grade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Grade::Lgg => write!(f, "LGG"),
            Grade::Hgg => write!(f, "HGG"),
        }
    }
}

/// Extent of tumor resection. `Na` means no resection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resection {
    Na,
    Str,
    Gtr,
}

impl Resection {
    /// Ordinal encoding by resection extent: NA = 0, STR = 1, GTR = 2.
    pub fn ordinal(self) -> u8 {
        match self {
            Resection::Na => 0,
            Resection::Str => 1,
            Resection::Gtr => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Resection> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NA" => Some(Resection::Na),
            "STR" => Some(Resection::Str),
            "GTR" => Some(Resection::Gtr),
            _ => None,
        }
    }
}

impl std::fmt::Display for Resection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Resection::Na => write!(f, "NA"),
            Resection::Str => write!(f, "STR"),
            Resection::Gtr => write!(f, "GTR"),
        }
    }
}

/// MRI acquisition sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1ce, Modality::T2, Modality::Flair];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t1" => Some(Modality::T1),
            "t1ce" => Some(Modality::T1ce),
            "t2" => Some(Modality::T2),
            "flair" | "t2-flair" | "t2flair" => Some(Modality::Flair),
            _ => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// One clinical table row plus resolved modality file paths and imputation
/// provenance flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub grade: Grade,
    pub age_years: Option<f64>,
    pub survival_days: Option<f64>,
    pub resection: Option<Resection>,
    pub modality_paths: BTreeMap<Modality, PathBuf>,
    /// Min-max normalized age, set by [`normalize_age`].
    pub age_normalized: Option<f64>,
    pub age_imputed: bool,
    pub survival_imputed: bool,
    pub resection_imputed: bool,
}

impl ClinicalRecord {
    pub fn new(patient_id: impl Into<String>, grade: Grade) -> Self {
        ClinicalRecord {
            patient_id: patient_id.into(),
            grade,
            age_years: None,
            survival_days: None,
            resection: None,
            modality_paths: BTreeMap::new(),
            age_normalized: None,
            age_imputed: false,
            survival_imputed: false,
            resection_imputed: false,
        }
    }
}

/// Encoded targets for the two classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodes {
    /// 0 = LGG, 1 = HGG.
    pub grade_code: u8,
    /// 0 = short (< 1 yr), 1 = mid (1-5 yr), 2 = long (> 5 yr).
    pub survival_class: u8,
}

/// How the resection field enters the tabular vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResectionEncoding {
    /// Single ordinal value: NA = 0, STR = 1, GTR = 2.
    #[default]
    Ordinal,
    /// Three-way one-hot: [NA, STR, GTR].
    OneHot,
}

impl ResectionEncoding {
    pub fn width(self) -> usize {
        match self {
            ResectionEncoding::Ordinal => 1,
            ResectionEncoding::OneHot => 3,
        }
    }

    pub fn encode(self, r: Resection) -> Vec<f64> {
        match self {
            ResectionEncoding::Ordinal => vec![r.ordinal() as f64],
            ResectionEncoding::OneHot => {
                let mut v = vec![0.0; 3];
                v[r.ordinal() as usize] = 1.0;
                v
            }
        }
    }
}

/// The model's unit of input: one modality image of one patient plus the
/// shared tabular features and labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub patient_id: String,
    pub modality: Modality,
    /// Provenance key for the slice stack ("<patient>_<modality>").
    pub slice_stack_ref: String,
    pub volume_path: PathBuf,
    /// [age_normalized, resection...] per the configured encoding.
    pub tabular: Vec<f64>,
    pub labels: LabelCodes,
}

impl Sample {
    pub fn stack_key(patient_id: &str, modality: Modality) -> String {
        format!("{patient_id}_{}", modality.tag())
    }
}

/// Whether splitting assigns individual samples or whole patients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Modalities are treated as independent samples; a patient's images may
    /// land in different partitions. Matches the expansion scheme, at the
    /// cost of patient identity leaking across partitions.
    #[default]
    ImageLevel,
    /// All four samples of a patient land in the same partition.
    PatientLevel,
}

/// A full description of one train/val/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Fraction of samples kept out of the test set.
    pub train_frac: f64,
    /// Fraction of the non-test portion that goes to validation.
    pub val_frac_of_train: f64,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_frac: 0.8,
            val_frac_of_train: 0.2,
            seed: 0,
            grouping: Grouping::ImageLevel,
        }
    }
}

/// Age min-max constants, recorded for inference-time reuse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeNormalization {
    pub min: f64,
    pub max: f64,
}

impl AgeNormalization {
    pub fn apply(&self, age: f64) -> f64 {
        (age - self.min) / (self.max - self.min)
    }
}

/// Read the clinical CSV. Expected header:
/// `patient_id,grade,age,survival_days,resection`.
///
/// Unparseable numeric cells become missing fields rather than failures;
/// a missing or unrecognized grade is an error, as are duplicate ids.
pub fn load_clinical_table(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CohortError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => CohortError::Csv(e),
        })?;

    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(CohortError::MissingColumn(name))
    };
    let id_col = col("patient_id")?;
    let grade_col = col("grade")?;
    let age_col = col("age")?;
    let survival_col = col("survival_days")?;
    let resection_col = col("resection")?;

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let patient_id = get(id_col);
        if !seen.insert(patient_id.clone()) {
            return Err(CohortError::DuplicatePatient(patient_id));
        }
        let grade_raw = get(grade_col);
        let grade = Grade::parse(&grade_raw).ok_or(CohortError::MissingGrade {
            row: row_idx + 2, // 1-based, after header
            value: grade_raw,
        })?;
        let mut rec = ClinicalRecord::new(patient_id, grade);
        rec.age_years = get(age_col).parse::<f64>().ok().filter(|v| v.is_finite());
        rec.survival_days = get(survival_col)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0);
        rec.resection = Resection::parse(&get(resection_col));
        records.push(rec);
    }
    Ok(records)
}

/// Resolve modality file paths under `root` using a filename pattern with
/// `{id}` and `{modality}` placeholders (default BraTS-style layout:
/// `{id}/{id}_{modality}.nii.gz`). Errors when a file is absent.
pub fn attach_modality_paths(
    records: &mut [ClinicalRecord],
    root: impl AsRef<Path>,
    pattern: &str,
) -> Result<()> {
    let root = root.as_ref();
    for rec in records.iter_mut() {
        for m in Modality::ALL {
            let rel = pattern
                .replace("{id}", &rec.patient_id)
                .replace("{modality}", m.tag());
            let path = root.join(rel);
            if !path.is_file() {
                return Err(CohortError::MissingModalityFile {
                    patient: rec.patient_id.clone(),
                    modality: m,
                    path: path.display().to_string(),
                });
            }
            rec.modality_paths.insert(m, path);
        }
    }
    Ok(())
}

/// Default modality filename pattern (BraTS-style folder layout).
pub const DEFAULT_MODALITY_PATTERN: &str = "{id}/{id}_{modality}.nii.gz";

fn age_stats(records: &[ClinicalRecord]) -> Result<(f64, f64)> {
    let observed: Vec<f64> = records.iter().filter_map(|r| r.age_years).collect();
    if observed.len() < 2 {
        return Err(CohortError::TooFewObservedAges(observed.len()));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Replace every missing age with a draw from Uniform[mean - sd, mean + sd]
/// over the observed ages. Observed ages are untouched.
pub fn impute_age<R: Rng>(records: &mut [ClinicalRecord], rng: &mut R) -> Result<()> {
    let (mean, sd) = age_stats(records)?;
    for rec in records.iter_mut() {
        if rec.age_years.is_none() {
            rec.age_years = Some(rng.gen_range(mean - sd..=mean + sd));
            rec.age_imputed = true;
        }
    }
    Ok(())
}

/// Replace every missing survival with an integer day count: with
/// probability 0.24 uniform in [1460, 1825) (4-5 years), otherwise uniform
/// in [1825, 2555] (5-7 years). Observed survivals are untouched.
pub fn impute_survival<R: Rng>(records: &mut [ClinicalRecord], rng: &mut R) {
    for rec in records.iter_mut() {
        if rec.survival_days.is_none() {
            let days = if rng.gen_bool(SURVIVAL_SHORT_PROB) {
                rng.gen_range(SURVIVAL_BAND_SHORT.0..SURVIVAL_BAND_SHORT.1)
            } else {
                rng.gen_range(SURVIVAL_BAND_LONG.0..=SURVIVAL_BAND_LONG.1)
            };
            rec.survival_days = Some(days as f64);
            rec.survival_imputed = true;
        }
    }
}

/// Patients with no recorded resection are assigned NA (no resection).
pub fn impute_resection(records: &mut [ClinicalRecord]) {
    for rec in records.iter_mut() {
        if rec.resection.is_none() {
            rec.resection = Some(Resection::Na);
            rec.resection_imputed = true;
        }
    }
}

/// Encode grade and survival-class targets. Survival boundaries in days:
/// short < 365, mid 365..=1825, long > 1825.
pub fn encode_labels(record: &ClinicalRecord) -> Result<LabelCodes> {
    let days = record
        .survival_days
        .ok_or_else(|| CohortError::MissingSurvival(record.patient_id.clone()))?;
    let survival_class = if days < DAYS_PER_YEAR {
        0
    } else if days <= 5.0 * DAYS_PER_YEAR {
        1
    } else {
        2
    };
    Ok(LabelCodes {
        grade_code: record.grade.code(),
        survival_class,
    })
}

/// Min-max normalize ages in place and return the constants used.
pub fn normalize_age(records: &mut [ClinicalRecord]) -> Result<AgeNormalization> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for rec in records.iter() {
        let age = rec
            .age_years
            .ok_or_else(|| CohortError::MissingAge(rec.patient_id.clone()))?;
        min = min.min(age);
        max = max.max(age);
    }
    if min == max {
        return Err(CohortError::DegenerateAges(min));
    }
    let norm = AgeNormalization { min, max };
    for rec in records.iter_mut() {
        rec.age_normalized = Some(norm.apply(rec.age_years.unwrap()));
    }
    Ok(norm)
}

/// Subsample the majority grade class uniformly at random (without
/// replacement) down to the minority count. Output preserves input order.
pub fn balance_classes<R: Rng>(
    records: &[ClinicalRecord],
    rng: &mut R,
) -> Result<Vec<ClinicalRecord>> {
    let lgg: Vec<usize> = indices_of(records, Grade::Lgg);
    let hgg: Vec<usize> = indices_of(records, Grade::Hgg);
    if lgg.is_empty() {
        return Err(CohortError::EmptyClass(Grade::Lgg));
    }
    if hgg.is_empty() {
        return Err(CohortError::EmptyClass(Grade::Hgg));
    }
    let (majority, target) = if lgg.len() >= hgg.len() {
        (&lgg, hgg.len())
    } else {
        (&hgg, lgg.len())
    };
    let kept: BTreeSet<usize> = if majority.len() == target {
        majority.iter().copied().collect()
    } else {
        let mut pool = majority.clone();
        pool.shuffle(rng);
        pool.into_iter().take(target).collect()
    };
    let minority: BTreeSet<usize> = if lgg.len() >= hgg.len() {
        hgg.iter().copied().collect()
    } else {
        lgg.iter().copied().collect()
    };
    Ok(records
        .iter()
        .enumerate()
        .filter(|(i, _)| kept.contains(i) || minority.contains(i))
        .map(|(_, r)| r.clone())
        .collect())
}

fn indices_of(records: &[ClinicalRecord], grade: Grade) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.grade == grade)
        .map(|(i, _)| i)
        .collect()
}

/// Fan each patient out into one sample per modality (T1, T1ce, T2, FLAIR),
/// sharing tabular features and labels.
pub fn expand_modalities(
    records: &[ClinicalRecord],
    encoding: ResectionEncoding,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(records.len() * 4);
    for rec in records {
        let labels = encode_labels(rec)?;
        let age_norm = rec
            .age_normalized
            .ok_or_else(|| CohortError::AgeNotNormalized(rec.patient_id.clone()))?;
        let resection = rec.resection.unwrap_or(Resection::Na);
        let mut tabular = vec![age_norm];
        tabular.extend(encoding.encode(resection));
        for m in Modality::ALL {
            let path = rec.modality_paths.get(&m).cloned().ok_or_else(|| {
                CohortError::MissingModalityPath {
                    patient: rec.patient_id.clone(),
                    modality: m,
                }
            })?;
            samples.push(Sample {
                patient_id: rec.patient_id.clone(),
                modality: m,
                slice_stack_ref: Sample::stack_key(&rec.patient_id, m),
                volume_path: path,
                tabular: tabular.clone(),
                labels,
            });
        }
    }
    Ok(samples)
}

/// Per-class allocation by largest remainder: sums to `round(total * frac)`
/// and stays within one sample of each class's exact proportion.
fn stratified_counts(class_sizes: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let target = ((total as f64) * frac).round() as usize;
    let mut counts: Vec<usize> = class_sizes
        .iter()
        .map(|&n| ((n as f64) * frac).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = class_sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| (i, (n as f64) * frac - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = target.saturating_sub(counts.iter().sum::<usize>());
    for (i, _) in remainders {
        if short == 0 {
            break;
        }
        if counts[i] < class_sizes[i] {
            counts[i] += 1;
            short -= 1;
        }
    }
    counts
}

/// Split samples into (train, validation, test), stratified by grade.
///
/// The test set receives `1 - train_frac` of the samples; validation takes
/// `val_frac_of_train` of the remainder. Under `PatientLevel` grouping all
/// four samples of a patient stay together.
pub fn make_split(
    samples: &[Sample],
    plan: &SplitPlan,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    if samples.is_empty() {
        return Err(CohortError::NoSamples);
    }
    if !(plan.train_frac > 0.0 && plan.train_frac < 1.0) {
        return Err(CohortError::BadTrainFraction(plan.train_frac));
    }
    if !(0.0..1.0).contains(&plan.val_frac_of_train) {
        return Err(CohortError::BadValFraction(plan.val_frac_of_train));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    // A unit is a sample index set: singletons at image level, whole
    // patients at patient level. Each unit carries one grade class.
    let units: Vec<(u8, Vec<usize>)> = match plan.grouping {
        Grouping::ImageLevel => samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.labels.grade_code, vec![i]))
            .collect(),
        Grouping::PatientLevel => {
            let mut by_patient: BTreeMap<&str, (u8, Vec<usize>)> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                by_patient
                    .entry(s.patient_id.as_str())
                    .or_insert_with(|| (s.labels.grade_code, Vec::new()))
                    .1
                    .push(i);
            }
            by_patient.into_values().collect()
        }
    };

    let classes: Vec<u8> = {
        let mut c: Vec<u8> = units.iter().map(|(g, _)| *g).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut per_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|&g| {
            (0..units.len())
                .filter(|&u| units[u].0 == g)
                .collect::<Vec<_>>()
        })
        .collect();
    for pool in per_class.iter_mut() {
        pool.shuffle(&mut rng);
    }

    let class_sizes: Vec<usize> = per_class.iter().map(|p| p.len()).collect();
    let test_counts = stratified_counts(&class_sizes, 1.0 - plan.train_frac);
    let mut test_units = Vec::new();
    let mut rest: Vec<Vec<usize>> = Vec::new();
    for (pool, &take) in per_class.iter().zip(&test_counts) {
        test_units.extend_from_slice(&pool[..take]);
        rest.push(pool[take..].to_vec());
    }
    let rest_sizes: Vec<usize> = rest.iter().map(|p| p.len()).collect();
    let val_counts = stratified_counts(&rest_sizes, plan.val_frac_of_train);
    let mut val_units = Vec::new();
    let mut train_units = Vec::new();
    for (pool, &take) in rest.iter().zip(&val_counts) {
        val_units.extend_from_slice(&pool[..take]);
        train_units.extend_from_slice(&pool[take..]);
    }

    let expand = |unit_ids: &[usize]| -> Vec<Sample> {
        let mut idx: Vec<usize> = unit_ids
            .iter()
            .flat_map(|&u| units[u].1.iter().copied())
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| samples[i].clone()).collect()
    };
    let train = expand(&train_units);
    let val = expand(&val_units);
    let test = expand(&test_units);

    // Every requested partition must contain every grade class.
    let check = |part: &[Sample], name: &'static str, expected: bool| -> Result<()> {
        if !expected {
            return Ok(());
        }
        for &g in &classes {
            if !part.iter().any(|s| s.labels.grade_code == g) {
                return Err(CohortError::ClassAbsent {
                    label: "grade",
                    class: g,
                    partition: name,
                });
            }
        }
        Ok(())
    };
    check(&train, "train", true)?;
    check(&test, "test", true)?;
    check(&val, "validation", plan.val_frac_of_train > 0.0)?;

    Ok((train, val, test))
}

/// Draw `n_iter` independent splits with seeds `plan.seed + 0..n_iter`.
pub fn monte_carlo_splits(
    samples: &[Sample],
    plan: &SplitPlan,
    n_iter: usize,
) -> Result<Vec<(Vec<Sample>, Vec<Sample>, Vec<Sample>)>> {
    (0..n_iter)
        .map(|i| {
            let iter_plan = SplitPlan {
                seed: plan.seed + i as u64,
                ..*plan
            };
            make_split(samples, &iter_plan)
        })
        .collect()
}

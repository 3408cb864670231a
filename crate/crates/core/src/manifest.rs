//! Dataset manifest: subject records, subgroup binning and stratified splits.
//!
//! The manifest is a UTF-8 CSV with the header
//!
//! ```text
//! subject_id,sex,age,bmi,diagnosis,image_path,mask_path,ed_frame,es_frame,n_slices,n_frames[,split]
//! ```
//!
//! `sex` is `F` or `M`, `diagnosis` is `HF` or `healthy`, `split` is one of
//! `train`, `val`, `test` or empty. Combined real+synthetic manifests carry two
//! more columns, `origin` (`real`/`synthetic`) and `source_job_id`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

use crate::error::ErrorCategory;
use crate::rng::{self, streams};
use rand::seq::SliceRandom;

pub const SCHEMA_VERSION: &str = "1";

pub const REQUIRED_COLUMNS: [&str; 11] = [
    "subject_id",
    "sex",
    "age",
    "bmi",
    "diagnosis",
    "image_path",
    "mask_path",
    "ed_frame",
    "es_frame",
    "n_slices",
    "n_frames",
];
const OPTIONAL_COLUMNS: [&str; 3] = ["split", "origin", "source_job_id"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    InvalidRows(Vec<RowError>),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("fraction `{name}` must lie in (0, 1), got {value}")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
}

impl ManifestError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ManifestError::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Validation,
        }
    }

    /// Row-level errors, empty for file-level failures.
    pub fn row_errors(&self) -> &[RowError] {
        match self {
            ManifestError::InvalidRows(rows) => rows,
            _ => &[],
        }
    }
}

/// A validation failure tied to one data row (1-based, header excluded).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowError {
    #[error("row {row}: cannot parse `{field}` from {value:?}")]
    UnparsableValue {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}: invalid `{field}`: {reason}")]
    InvalidValue {
        row: usize,
        field: &'static str,
        reason: String,
    },
    #[error("row {row}: `{field}` = {index} is out of range for n_frames = {n_frames}")]
    FrameIndexOutOfRange {
        row: usize,
        field: &'static str,
        index: u32,
        n_frames: u32,
    },
    #[error("row {row}: duplicate subject_id `{subject_id}`")]
    DuplicateSubjectId { row: usize, subject_id: String },
}

impl RowError {
    pub fn row(&self) -> usize {
        match self {
            RowError::UnparsableValue { row, .. }
            | RowError::InvalidValue { row, .. }
            | RowError::FrameIndexOutOfRange { row, .. }
            | RowError::DuplicateSubjectId { row, .. } => *row,
        }
    }
}

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $token)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

token_enum!(Sex { Female => "F", Male => "M" });
token_enum!(Diagnosis { HeartFailure => "HF", Healthy => "healthy" });
token_enum!(Split { Train => "train", Val => "val", Test => "test" });
token_enum!(Origin { Real => "real", Synthetic => "synthetic" });
token_enum!(
    /// Age bins `[0,60)`, `[60,70)`, `[70,inf)`.
    AgeBin { Under60 => "Under60", From60To70 => "From60To70", Over70 => "Over70" }
);
token_enum!(
    /// BMI bins `[0,25)`, `[25,30)`, `[30,inf)`.
    BmiBin { Under25 => "Under25", From25To30 => "From25To30", Over30 => "Over30" }
);

impl AgeBin {
    pub fn of(age: u32) -> Self {
        match age {
            0..=59 => AgeBin::Under60,
            60..=69 => AgeBin::From60To70,
            _ => AgeBin::Over70,
        }
    }
}

impl BmiBin {
    pub fn of(bmi: f64) -> Self {
        if bmi < 25.0 {
            BmiBin::Under25
        } else if bmi < 30.0 {
            BmiBin::From25To30
        } else {
            BmiBin::Over30
        }
    }
}

/// One subject of the cohort, or one synthetic image that inherits a donor's
/// attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub sex: Sex,
    pub age: u32,
    pub bmi: f64,
    pub diagnosis: Diagnosis,
    pub image_path: String,
    pub mask_path: String,
    pub ed_frame: u32,
    pub es_frame: u32,
    pub n_slices: u32,
    pub n_frames: u32,
    pub split: Option<Split>,
    pub origin: Origin,
    pub source_job_id: Option<String>,
}

impl SubjectRecord {
    pub fn group(&self) -> SubgroupKey {
        assign_group(self)
    }

    /// Checks the record-level invariants, reporting against `row`.
    pub fn validate(&self, row: usize) -> Vec<RowError> {
        let mut errs = Vec::new();
        if self.subject_id.is_empty() {
            errs.push(RowError::InvalidValue {
                row,
                field: "subject_id",
                reason: "empty".into(),
            });
        }
        if self.age > 120 {
            errs.push(RowError::InvalidValue {
                row,
                field: "age",
                reason: format!("{} outside [0, 120]", self.age),
            });
        }
        if !(self.bmi.is_finite() && self.bmi > 5.0 && self.bmi < 100.0) {
            errs.push(RowError::InvalidValue {
                row,
                field: "bmi",
                reason: format!("{} outside (5, 100)", self.bmi),
            });
        }
        if self.n_slices == 0 {
            errs.push(RowError::InvalidValue {
                row,
                field: "n_slices",
                reason: "must be >= 1".into(),
            });
        }
        if self.n_frames == 0 {
            errs.push(RowError::InvalidValue {
                row,
                field: "n_frames",
                reason: "must be >= 1".into(),
            });
        }
        for (field, index) in [("ed_frame", self.ed_frame), ("es_frame", self.es_frame)] {
            if index >= self.n_frames {
                errs.push(RowError::FrameIndexOutOfRange {
                    row,
                    field,
                    index,
                    n_frames: self.n_frames,
                });
            }
        }
        if self.ed_frame == self.es_frame {
            errs.push(RowError::InvalidValue {
                row,
                field: "es_frame",
                reason: "ED and ES frames coincide".into(),
            });
        }
        errs
    }
}

/// One cell of the sex x age x BMI x diagnosis grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgroupKey {
    pub sex: Sex,
    pub age_bin: AgeBin,
    pub bmi_bin: BmiBin,
    pub diagnosis: Diagnosis,
}

impl SubgroupKey {
    pub const COUNT: usize = 36;

    /// All 36 keys in ascending order.
    pub fn all() -> Vec<SubgroupKey> {
        let mut keys = Vec::with_capacity(Self::COUNT);
        for &sex in Sex::ALL {
            for &age_bin in AgeBin::ALL {
                for &bmi_bin in BmiBin::ALL {
                    for &diagnosis in Diagnosis::ALL {
                        keys.push(SubgroupKey {
                            sex,
                            age_bin,
                            bmi_bin,
                            diagnosis,
                        });
                    }
                }
            }
        }
        keys
    }

    /// Position of the key in [`SubgroupKey::all`].
    pub fn index(&self) -> usize {
        let s = self.sex as usize;
        let a = self.age_bin as usize;
        let b = self.bmi_bin as usize;
        let d = self.diagnosis as usize;
        ((s * 3 + a) * 3 + b) * 2 + d
    }

    /// Stable textual form, e.g. `F/Under60/From25To30/healthy`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.sex, self.age_bin, self.bmi_bin, self.diagnosis
        )
    }

    pub fn attribute_value(&self, attribute: Attribute) -> &'static str {
        match attribute {
            Attribute::Sex => self.sex.token(),
            Attribute::Age => self.age_bin.token(),
            Attribute::Bmi => self.bmi_bin.token(),
            Attribute::Diagnosis => self.diagnosis.token(),
        }
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SubgroupKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 4 {
            return Err(format!("malformed subgroup label `{s}`"));
        }
        Ok(SubgroupKey {
            sex: parts[0].parse()?,
            age_bin: parts[1].parse()?,
            bmi_bin: parts[2].parse()?,
            diagnosis: parts[3].parse()?,
        })
    }
}

/// Sensitive attribute along which subjects are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Sex,
    Age,
    Bmi,
    Diagnosis,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Sex,
        Attribute::Age,
        Attribute::Bmi,
        Attribute::Diagnosis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Sex => "sex",
            Attribute::Age => "age",
            Attribute::Bmi => "bmi",
            Attribute::Diagnosis => "diagnosis",
        }
    }
}

impl FromStr for Attribute {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sex" => Ok(Attribute::Sex),
            "age" => Ok(Attribute::Age),
            "bmi" => Ok(Attribute::Bmi),
            "diagnosis" => Ok(Attribute::Diagnosis),
            other => Err(format!("unknown attribute `{other}`")),
        }
    }
}

/// Maps a record onto its subgroup. Total over valid records.
pub fn assign_group(record: &SubjectRecord) -> SubgroupKey {
    SubgroupKey {
        sex: record.sex,
        age_bin: AgeBin::of(record.age),
        bmi_bin: BmiBin::of(record.bmi),
        diagnosis: record.diagnosis,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SubjectRecord>,
    pub source_path: String,
    pub schema_version: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<SubjectRecord>) -> Self {
        Self {
            records,
            source_path: String::new(),
            schema_version: SCHEMA_VERSION.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.records.iter().find(|r| r.subject_id == subject_id)
    }

    /// Lookup table from subject id to record.
    pub fn index(&self) -> HashMap<&str, &SubjectRecord> {
        self.records
            .iter()
            .map(|r| (r.subject_id.as_str(), r))
            .collect()
    }

    /// Directory that relative image and mask paths are resolved against.
    pub fn base_dir(&self) -> PathBuf {
        Path::new(&self.source_path)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    /// Records of one split. Records without a split count as `Train`.
    pub fn split_records(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            records: self
                .records
                .iter()
                .filter(|r| r.split.unwrap_or(Split::Train) == split)
                .cloned()
                .collect(),
            source_path: self.source_path.clone(),
            schema_version: self.schema_version.clone(),
        }
    }

    pub fn from_reader<R: Read>(reader: R, source_path: &str) -> Result<Self, ManifestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::None)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ManifestError::Csv(e.to_string()))?
            .clone();
        let mut columns: HashMap<&str, usize> = HashMap::new();
        for (i, name) in headers.iter().enumerate() {
            if !REQUIRED_COLUMNS.contains(&name) && !OPTIONAL_COLUMNS.contains(&name) {
                return Err(ManifestError::UnknownColumn(name.to_string()));
            }
            columns.insert(name, i);
        }
        for name in REQUIRED_COLUMNS {
            if !columns.contains_key(name) {
                return Err(ManifestError::MissingColumn(name.to_string()));
            }
        }

        let mut records = Vec::new();
        let mut errors = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| ManifestError::Csv(e.to_string()))?;
            match parse_row(&row, &columns, row_no) {
                Ok(record) => {
                    let mut errs = record.validate(row_no);
                    if !seen.insert(record.subject_id.clone()) {
                        errs.push(RowError::DuplicateSubjectId {
                            row: row_no,
                            subject_id: record.subject_id.clone(),
                        });
                    }
                    if errs.is_empty() {
                        records.push(record);
                    } else {
                        errors.extend(errs);
                    }
                }
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(ManifestError::InvalidRows(errors));
        }
        Ok(DatasetManifest {
            records,
            source_path: source_path.to_string(),
            schema_version: SCHEMA_VERSION.to_string(),
        })
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> csv::Result<()> {
        let with_split = self.records.iter().any(|r| r.split.is_some());
        let with_origin = self
            .records
            .iter()
            .any(|r| r.origin == Origin::Synthetic || r.source_job_id.is_some());
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        if with_split {
            header.push("split");
        }
        if with_origin {
            header.extend(["origin", "source_job_id"]);
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut fields = vec![
                r.subject_id.clone(),
                r.sex.to_string(),
                r.age.to_string(),
                format_bmi(r.bmi),
                r.diagnosis.to_string(),
                r.image_path.clone(),
                r.mask_path.clone(),
                r.ed_frame.to_string(),
                r.es_frame.to_string(),
                r.n_slices.to_string(),
                r.n_frames.to_string(),
            ];
            if with_split {
                fields.push(r.split.map(|s| s.to_string()).unwrap_or_default());
            }
            if with_origin {
                fields.push(r.origin.to_string());
                fields.push(r.source_job_id.clone().unwrap_or_default());
            }
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)
            .expect("writing CSV to memory cannot fail");
        String::from_utf8(buf).expect("manifest fields are UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DatasetManifest::from_reader(std::io::BufReader::new(file), &path.to_string_lossy())
}

/// Formats BMI so that it reparses to the same value and always carries a
/// decimal point.
pub fn format_bmi(bmi: f64) -> String {
    format!("{bmi:?}")
}

/// Accepts `digits` or `digits.digits`, nothing else (no sign, exponent,
/// comma decimal, or special values).
pub fn parse_strict_decimal(s: &str) -> Option<f64> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    s.parse().ok()
}

fn parse_uint(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_row(
    row: &csv::StringRecord,
    columns: &HashMap<&str, usize>,
    row_no: usize,
) -> Result<SubjectRecord, RowError> {
    let get = |name: &str| -> &str { columns.get(name).and_then(|&i| row.get(i)).unwrap_or("") };
    let bad = |field: &'static str| RowError::UnparsableValue {
        row: row_no,
        field,
        value: get(field).to_string(),
    };
    let uint = |field: &'static str| parse_uint(get(field)).ok_or_else(|| bad(field));

    let split = match get("split") {
        "" => None,
        s => Some(s.parse::<Split>().map_err(|_| bad("split"))?),
    };
    let origin = match get("origin") {
        "" => Origin::Real,
        s => s.parse::<Origin>().map_err(|_| bad("origin"))?,
    };
    let source_job_id = match get("source_job_id") {
        "" => None,
        s => Some(s.to_string()),
    };
    Ok(SubjectRecord {
        subject_id: get("subject_id").to_string(),
        sex: get("sex").parse().map_err(|_| bad("sex"))?,
        age: uint("age")?,
        bmi: parse_strict_decimal(get("bmi")).ok_or_else(|| bad("bmi"))?,
        diagnosis: get("diagnosis").parse().map_err(|_| bad("diagnosis"))?,
        image_path: get("image_path").to_string(),
        mask_path: get("mask_path").to_string(),
        ed_frame: uint("ed_frame")?,
        es_frame: uint("es_frame")?,
        n_slices: uint("n_slices")?,
        n_frames: uint("n_frames")?,
        split,
        origin,
        source_job_id,
    })
}

/// Subject to split mapping produced by [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    /// CSV `subject_id,split`, rows sorted by subject id.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("subject_id,split\n");
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for (id, split) in &self.assignments {
            w.write_record([id.as_str(), split.token()])
                .expect("in-memory write");
        }
        let body = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&body).expect("UTF-8"));
        out
    }

    pub fn from_csv_str(text: &str, seed: u64) -> Result<Self, ManifestError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| ManifestError::Csv(e.to_string()))?
            .clone();
        for name in ["subject_id", "split"] {
            if !headers.iter().any(|h| h == name) {
                return Err(ManifestError::MissingColumn(name.into()));
            }
        }
        let mut assignments = BTreeMap::new();
        let mut errors = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| ManifestError::Csv(e.to_string()))?;
            let id = row.get(0).unwrap_or("").to_string();
            match row.get(1).unwrap_or("").parse::<Split>() {
                Ok(s) => {
                    if assignments.insert(id.clone(), s).is_some() {
                        errors.push(RowError::DuplicateSubjectId {
                            row: i + 1,
                            subject_id: id,
                        });
                    }
                }
                Err(_) => errors.push(RowError::UnparsableValue {
                    row: i + 1,
                    field: "split",
                    value: row.get(1).unwrap_or("").to_string(),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(ManifestError::InvalidRows(errors));
        }
        Ok(Self { assignments, seed })
    }

    /// Copy of `manifest` with every record's split set from this assignment.
    pub fn apply(&self, manifest: &DatasetManifest) -> Result<DatasetManifest, ManifestError> {
        let mut out = manifest.clone();
        for r in &mut out.records {
            let split = self
                .assignments
                .get(&r.subject_id)
                .ok_or_else(|| ManifestError::UnknownSubject(r.subject_id.clone()))?;
            r.split = Some(*split);
        }
        Ok(out)
    }
}

/// Stratified train/val/test split.
///
/// Each subgroup is shuffled with its own seeded stream, then cut into
/// test, val and train blocks whose sizes come from largest-remainder
/// rounding of `n * test_frac`, `n * (1 - test_frac) * val_frac_of_train` and
/// the train share. Equal remainders favour train, then val, then test, so a
/// single-member group always lands in train.
pub fn split_dataset(
    manifest: &DatasetManifest,
    seed: u64,
    test_frac: f64,
    val_frac_of_train: f64,
) -> Result<SplitAssignment, ManifestError> {
    for (name, value) in [("test_frac", test_frac), ("val_frac_of_train", val_frac_of_train)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(ManifestError::InvalidFraction { name, value });
        }
    }
    if manifest.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }

    let mut strata: BTreeMap<SubgroupKey, Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        strata.entry(r.group()).or_default().push(&r.subject_id);
    }

    let shares = [
        (1.0 - test_frac) * (1.0 - val_frac_of_train),
        (1.0 - test_frac) * val_frac_of_train,
        test_frac,
    ];
    let mut assignments = BTreeMap::new();
    for (key, mut ids) in strata {
        ids.sort_unstable();
        let mut rng = rng::stream(seed, streams::SPLIT + key.index() as u64);
        ids.shuffle(&mut rng);
        let [n_train, n_val, n_test] = largest_remainder(ids.len(), shares);
        debug_assert_eq!(n_train + n_val + n_test, ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            assignments.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment { assignments, seed })
}

/// Apportions `n` items over `shares` (which sum to 1). Ties go to the
/// lower index.
fn largest_remainder(n: usize, shares: [f64; 3]) -> [usize; 3] {
    let quotas = shares.map(|s| s * n as f64);
    // Snap values within rounding noise of an integer before flooring.
    let snap = |q: f64| if (q - q.round()).abs() < 1e-9 { q.round() } else { q };
    let mut counts = quotas.map(|q| snap(q).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    let rem = |i: usize| {
        let q = snap(quotas[i]);
        ((q - q.floor()) * 1e9).round() as i64
    };
    order.sort_by(|&a, &b| rem(b).cmp(&rem(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

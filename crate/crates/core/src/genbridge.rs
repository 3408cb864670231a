//! Bridge to the external image generator.
//!
//! The generator is reached through a JSONL job manifest and an output
//! directory. This module writes the jobs, ingests what comes back, mixes
//! synthetic records into a real training set, and ships a deterministic mock
//! generator so the whole loop can run without a GPU.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::error::ErrorCategory;
use crate::imageio::{self, ImageIoError};
use crate::manifest::{
    AgeBin, BmiBin, DatasetManifest, Diagnosis, Origin, Sex, Split, SubgroupKey, SubjectRecord,
};
use crate::preprocess::{resize_image, Image2D, LabelMask, ResizeMethod};
use crate::rng::{self, streams};
use crate::stratify::{synthetic_count_for_fraction, DebiasPlan};

/// First line of a job manifest that holds no jobs.
pub const EMPTY_JOBS_HEADER: &str = "# fairaug generation jobs: none";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("job manifest line {line}: {message}")]
    JobManifest { line: usize, message: String },
    #[error("job {job_id}: mask unreadable: {source}")]
    MaskUnreadable {
        job_id: String,
        #[source]
        source: ImageIoError,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("none of the {count} generated images could be ingested")]
    AllOutputsMissing { count: usize },
    #[error("synthetic fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error("need {requested} synthetic records, {available} available (shortfall by group: {shortfall:?})")]
    NotEnoughSynthetic {
        requested: usize,
        available: usize,
        shortfall: BTreeMap<String, usize>,
    },
    #[error("donor mismatch: {0}")]
    DonorMismatch(String),
    #[error("duplicate subject id `{0}` in combined manifest")]
    DuplicateId(String),
}

impl GenError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            GenError::Io { .. }
            | GenError::MaskUnreadable { .. }
            | GenError::Image(_)
            | GenError::AllOutputsMissing { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Validation,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One image request for the generator. Field order is the JSONL column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub donor_subject_id: String,
    pub prompt: String,
    pub mask_path: String,
    pub target_group: SubgroupKey,
    pub seed: u64,
    pub output_path: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PromptOptions {
    /// Append ", no heart failure" to prompts of healthy subjects.
    pub healthy_clause: bool,
}

/// WHO category index: 0 underweight, 1 normal, 2 overweight, 3 obese.
pub fn bmi_category(bmi: f64) -> u8 {
    if bmi < 18.5 {
        0
    } else if bmi < 25.0 {
        1
    } else if bmi < 30.0 {
        2
    } else {
        3
    }
}

pub const BMI_WORDS: [&str; 4] = ["underweight", "normal", "overweight", "obese"];

pub fn bmi_word(bmi: f64) -> &'static str {
    BMI_WORDS[bmi_category(bmi) as usize]
}

/// `"{Sex}, age in {decade}s, {bmi word} BMI[, with heart failure]"`.
pub fn assemble_prompt(record: &SubjectRecord, options: &PromptOptions) -> String {
    let sex = match record.sex {
        Sex::Female => "Female",
        Sex::Male => "Male",
    };
    let decade = record.age / 10 * 10;
    let mut prompt = format!("{sex}, age in {decade}s, {} BMI", bmi_word(record.bmi));
    match record.diagnosis {
        Diagnosis::HeartFailure => prompt.push_str(", with heart failure"),
        Diagnosis::Healthy if options.healthy_clause => prompt.push_str(", no heart failure"),
        Diagnosis::Healthy => {}
    }
    prompt
}

/// BMI category named in a prompt, if any.
pub fn prompt_bmi_category(prompt: &str) -> Option<u8> {
    prompt
        .split(',')
        .map(str::trim)
        .find_map(|part| part.strip_suffix(" BMI"))
        .and_then(|word| BMI_WORDS.iter().position(|w| *w == word))
        .map(|i| i as u8)
}

/// Representative category of a grouping bin.
fn bin_category(bin: BmiBin) -> u8 {
    match bin {
        BmiBin::Under25 => 1,
        BmiBin::From25To30 => 2,
        BmiBin::Over30 => 3,
    }
}

/// One JSON object per line; an empty job list gives a single header line.
pub fn jobs_to_jsonl(jobs: &[GenerationJob]) -> String {
    if jobs.is_empty() {
        return format!("{EMPTY_JOBS_HEADER}\n");
    }
    let mut out = String::new();
    for job in jobs {
        out.push_str(&serde_json::to_string(job).expect("job serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jobs(text: &str) -> Result<Vec<GenerationJob>, GenError> {
    let mut jobs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let job: GenerationJob = serde_json::from_str(line).map_err(|e| GenError::JobManifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ids.insert(job.job_id.clone()) {
            return Err(GenError::JobManifest {
                line: i + 1,
                message: format!("duplicate job_id {}", job.job_id),
            });
        }
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn read_jobs(path: &Path) -> Result<Vec<GenerationJob>, GenError> {
    parse_jobs(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

/// Plan jobs checked against the manifest, ordered by group then job id, with
/// mask paths resolved against the manifest location.
pub fn prepare_jobs(
    plan: &DebiasPlan,
    manifest: &DatasetManifest,
    options: &PromptOptions,
) -> Result<Vec<GenerationJob>, GenError> {
    let index = manifest.index();
    let mut jobs = plan.jobs.clone();
    for job in &mut jobs {
        let donor = index
            .get(job.donor_subject_id.as_str())
            .ok_or_else(|| GenError::DonorMismatch(format!("unknown donor {}", job.donor_subject_id)))?;
        if donor.group() != job.target_group {
            return Err(GenError::DonorMismatch(format!(
                "{}: donor {} is in {}, job targets {}",
                job.job_id,
                donor.subject_id,
                donor.group(),
                job.target_group
            )));
        }
        job.mask_path = manifest.resolve(&donor.mask_path).to_string_lossy().into_owned();
        job.prompt = assemble_prompt(donor, options);
    }
    jobs.sort_by(|a, b| (a.target_group, &a.job_id).cmp(&(b.target_group, &b.job_id)));
    Ok(jobs)
}

/// Writes the plan's jobs as JSONL and returns how many were written.
pub fn emit_generation_jobs(
    plan: &DebiasPlan,
    manifest: &DatasetManifest,
    options: &PromptOptions,
    out_path: &Path,
) -> Result<usize, GenError> {
    let jobs = prepare_jobs(plan, manifest, options)?;
    std::fs::write(out_path, jobs_to_jsonl(&jobs)).map_err(io_err(out_path))?;
    Ok(jobs.len())
}

// Mock generator.

pub const MOCK_BACKGROUND: f64 = 20.0;
pub const MOCK_LV: f64 = 140.0;
pub const MOCK_MYOCARDIUM: f64 = 70.0;
pub const MOCK_RV: f64 = 110.0;
pub const MOCK_RIM_STEP: f64 = 15.0;
pub const MOCK_NOISE_SIGMA: f64 = 5.0;
pub const MOCK_RIM_WIDTH: usize = 2;

/// Myocardial pixels within Chebyshev distance `MOCK_RIM_WIDTH` of a
/// background pixel or the image border: the outer band of the wall.
pub fn rim_band(mask: &LabelMask) -> Vec<bool> {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let r = MOCK_RIM_WIDTH as isize;
    let is_bg = |x: isize, y: isize| {
        x < 0 || y < 0 || x >= w || y >= h || mask.get(x as usize, y as usize) == LabelMask::BACKGROUND
    };
    let mut band = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x as usize, y as usize) != LabelMask::MYOCARDIUM {
                continue;
            }
            band[(y * w + x) as usize] =
                (-r..=r).any(|dy| (-r..=r).any(|dx| is_bg(x + dx, y + dy)));
        }
    }
    band
}

/// Renders the mock image for a mask as 8-bit gray values.
pub fn mock_render(mask: &LabelMask, bmi_category: u8, seed: u64) -> Vec<u8> {
    let band = rim_band(mask);
    let normal = Normal::new(0.0, MOCK_NOISE_SIGMA).expect("valid sigma");
    let mut rng = rng::stream(seed, 0);
    mask.labels()
        .iter()
        .zip(&band)
        .map(|(&label, &rim)| {
            let base = match label {
                LabelMask::LEFT_VENTRICLE => MOCK_LV,
                LabelMask::MYOCARDIUM if rim => MOCK_MYOCARDIUM + MOCK_RIM_STEP * f64::from(bmi_category),
                LabelMask::MYOCARDIUM => MOCK_MYOCARDIUM,
                LabelMask::RIGHT_VENTRICLE => MOCK_RV,
                _ => MOCK_BACKGROUND,
            };
            (base + normal.sample(&mut rng)).clamp(0.0, 255.0).round() as u8
        })
        .collect()
}

/// BMI category a job renders with: the prompt's word, else the target bin.
pub fn job_bmi_category(job: &GenerationJob) -> u8 {
    prompt_bmi_category(&job.prompt).unwrap_or_else(|| bin_category(job.target_group.bmi_bin))
}

fn upscale(gray: Vec<u8>, w: usize, h: usize, side: usize) -> Vec<u8> {
    let img = Image2D::new(w, h, gray.into_iter().map(f64::from).collect()).expect("dimensions");
    resize_image(&img, side, ResizeMethod::Bilinear)
        .expect("positive side")
        .pixels()
        .iter()
        .map(|v| v.clamp(0.0, 255.0).round() as u8)
        .collect()
}

/// Renders one job into `out_dir/output_path` as a 3-channel PNG, optionally
/// upscaled to `size x size`.
pub fn mock_generate(
    job: &GenerationJob,
    out_dir: &Path,
    size: Option<usize>,
) -> Result<PathBuf, GenError> {
    let mask = imageio::read_mask_for_slice(Path::new(&job.mask_path), None).map_err(|source| {
        GenError::MaskUnreadable {
            job_id: job.job_id.clone(),
            source,
        }
    })?;
    let (w, h) = (mask.width(), mask.height());
    let mut gray = mock_render(&mask, job_bmi_category(job), job.seed);
    let (mut ow, mut oh) = (w, h);
    if let Some(side) = size.filter(|&s| s > 0 && (s, s) != (w, h)) {
        gray = upscale(gray, w, h, side);
        (ow, oh) = (side, side);
    }
    let out = out_dir.join(&job.output_path);
    imageio::write_gray_as_rgb(&out, ow, oh, &gray)?;
    Ok(out)
}

/// Renders every job in parallel. Results are in job order.
pub fn mock_generate_all(
    jobs: &[GenerationJob],
    out_dir: &Path,
    size: Option<usize>,
) -> Vec<Result<PathBuf, GenError>> {
    jobs.par_iter().map(|j| mock_generate(j, out_dir, size)).collect()
}

// Ingestion.

/// A generated image that inherits its donor's attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord(pub SubjectRecord);

impl SyntheticRecord {
    pub fn from_job(job: &GenerationJob, donor: &SubjectRecord, image_path: String) -> Self {
        SyntheticRecord(SubjectRecord {
            subject_id: job.job_id.clone(),
            sex: donor.sex,
            age: donor.age,
            bmi: donor.bmi,
            diagnosis: donor.diagnosis,
            image_path,
            mask_path: job.mask_path.clone(),
            ed_frame: 0,
            es_frame: 1,
            n_slices: 1,
            n_frames: 2,
            split: Some(Split::Train),
            origin: Origin::Synthetic,
            source_job_id: Some(job.job_id.clone()),
        })
    }

    pub fn record(&self) -> &SubjectRecord {
        &self.0
    }

    pub fn into_record(self) -> SubjectRecord {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IngestIssueKind {
    Missing,
    Unreadable,
    DimensionMismatch,
    UnknownDonor,
    GroupMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestIssue {
    pub job_id: String,
    pub kind: IngestIssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconciliationReport {
    pub jobs: usize,
    pub ingested: usize,
    pub issues: Vec<IngestIssue>,
}

fn check_output(
    job: &GenerationJob,
    donor: Option<&&SubjectRecord>,
    images_dir: &Path,
    expected_size: Option<usize>,
) -> Result<SyntheticRecord, IngestIssue> {
    let issue = |kind, detail: String| IngestIssue {
        job_id: job.job_id.clone(),
        kind,
        detail,
    };
    let donor = donor.ok_or_else(|| {
        issue(IngestIssueKind::UnknownDonor, format!("donor {} not in manifest", job.donor_subject_id))
    })?;
    if donor.group() != job.target_group {
        return Err(issue(
            IngestIssueKind::GroupMismatch,
            format!("donor is {}, job targets {}", donor.group(), job.target_group),
        ));
    }
    let path = images_dir.join(&job.output_path);
    if !path.is_file() {
        return Err(issue(IngestIssueKind::Missing, path.display().to_string()));
    }
    let image = imageio::read_stacked(&path)
        .map_err(|e| issue(IngestIssueKind::Unreadable, e.to_string()))?;
    let expected = match expected_size {
        Some(s) => (s, s),
        None => imageio::mask_file_for_slice(Path::new(&job.mask_path), None)
            .and_then(|p| imageio::dimensions(&p))
            .map_err(|e| issue(IngestIssueKind::DimensionMismatch, format!("mask: {e}")))?,
    };
    let got = (image.width(), image.height());
    if got != expected {
        return Err(issue(
            IngestIssueKind::DimensionMismatch,
            format!("image is {}x{}, expected {}x{}", got.0, got.1, expected.0, expected.1),
        ));
    }
    Ok(SyntheticRecord::from_job(job, donor, path.to_string_lossy().into_owned()))
}

/// Turns generated images into synthetic records. Jobs whose output is
/// missing, undecodable, mis-sized or whose donor does not fit are listed in
/// the report; only a complete failure is an error.
pub fn ingest_synthetic(
    jobs: &[GenerationJob],
    images_dir: &Path,
    manifest: &DatasetManifest,
    expected_size: Option<usize>,
) -> Result<(Vec<SyntheticRecord>, ReconciliationReport), GenError> {
    let index = manifest.index();
    let results: Vec<Result<SyntheticRecord, IngestIssue>> = jobs
        .par_iter()
        .map(|job| {
            check_output(
                job,
                index.get(job.donor_subject_id.as_str()),
                images_dir,
                expected_size,
            )
        })
        .collect();
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(issue) => issues.push(issue),
        }
    }
    if !jobs.is_empty() && records.is_empty() {
        return Err(GenError::AllOutputsMissing { count: jobs.len() });
    }
    let report = ReconciliationReport {
        jobs: jobs.len(),
        ingested: records.len(),
        issues,
    };
    Ok((records, report))
}

// Mixing.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixAmount {
    /// Synthetic share of the combined set.
    Fraction(f64),
    /// Every synthetic record.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixSummary {
    pub real: usize,
    pub synthetic: usize,
    pub requested_fraction: Option<f64>,
    pub realized_fraction: f64,
    pub synthetic_per_group: BTreeMap<String, usize>,
}

/// Greedy capacity-limited fill: each of the `total` items goes to the group
/// with the smallest current size among those with capacity left, lowest
/// index on ties.
pub fn capacity_fill(counts: &[usize], capacity: &[usize], total: usize) -> Option<Vec<usize>> {
    if capacity.iter().sum::<usize>() < total {
        return None;
    }
    let mut take = vec![0; counts.len()];
    for _ in 0..total {
        let g = (0..counts.len())
            .filter(|&g| take[g] < capacity[g])
            .min_by_key(|&g| (counts[g] + take[g], g))
            .expect("capacity checked");
        take[g] += 1;
    }
    Some(take)
}

/// Combines real training records with synthetic ones.
///
/// With a fraction `f`, `s = round(f R / (1 - f))` synthetic records are
/// taken, allocated greedily to the groups that are smallest in the combined
/// set, and drawn within each group by a seeded shuffle. The output lists the
/// real records unchanged followed by the chosen synthetic records by id.
pub fn mix_datasets(
    real: &DatasetManifest,
    synth: &[SyntheticRecord],
    amount: MixAmount,
    seed: u64,
) -> Result<(DatasetManifest, MixSummary), GenError> {
    let mut by_group: BTreeMap<SubgroupKey, Vec<&SubjectRecord>> = BTreeMap::new();
    for s in synth {
        by_group.entry(s.0.group()).or_default().push(&s.0);
    }
    for members in by_group.values_mut() {
        members.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    }

    let (chosen, requested): (Vec<&SubjectRecord>, Option<f64>) = match amount {
        MixAmount::All => (by_group.values().flatten().copied().collect(), None),
        MixAmount::Fraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(GenError::InvalidFraction(f));
            }
            let s = synthetic_count_for_fraction(real.len(), f);
            let keys = SubgroupKey::all();
            let mut counts = vec![0usize; keys.len()];
            for r in &real.records {
                counts[r.group().index()] += 1;
            }
            let capacity: Vec<usize> = keys
                .iter()
                .map(|k| by_group.get(k).map_or(0, Vec::len))
                .collect();
            let take = capacity_fill(&counts, &capacity, s).ok_or_else(|| {
                // shortfall against the allocation the groups would get with
                // unlimited synthetic supply, restricted to groups in play
                let live: Vec<usize> = (0..keys.len())
                    .filter(|&g| counts[g] > 0 || capacity[g] > 0)
                    .collect();
                let live_counts: Vec<usize> = live.iter().map(|&g| counts[g]).collect();
                let ideal = crate::stratify::water_fill(&live_counts, s);
                let shortfall = live
                    .iter()
                    .zip(ideal)
                    .filter(|(&g, want)| *want > capacity[g])
                    .map(|(&g, want)| (keys[g].label(), want - capacity[g]))
                    .collect();
                GenError::NotEnoughSynthetic {
                    requested: s,
                    available: synth.len(),
                    shortfall,
                }
            })?;
            let mut chosen = Vec::with_capacity(s);
            for (key, members) in &by_group {
                let k = take[key.index()];
                if k == 0 {
                    continue;
                }
                let mut pool = members.clone();
                let mut rng = rng::stream(seed, streams::MIX + key.index() as u64);
                pool.shuffle(&mut rng);
                chosen.extend(pool.into_iter().take(k));
            }
            (chosen, Some(f))
        }
    };

    let mut chosen: Vec<SubjectRecord> = chosen.into_iter().cloned().collect();
    chosen.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut seen: HashSet<&str> = HashSet::new();
    for r in real.records.iter().chain(&chosen) {
        if !seen.insert(&r.subject_id) {
            return Err(GenError::DuplicateId(r.subject_id.clone()));
        }
    }
    let mut per_group = BTreeMap::new();
    for r in &chosen {
        *per_group.entry(r.group().label()).or_insert(0) += 1;
    }
    let total = real.len() + chosen.len();
    let summary = MixSummary {
        real: real.len(),
        synthetic: chosen.len(),
        requested_fraction: requested,
        realized_fraction: if total == 0 { 0.0 } else { chosen.len() as f64 / total as f64 },
        synthetic_per_group: per_group,
    };
    let mut records = real.records.clone();
    records.extend(chosen);
    let combined = DatasetManifest {
        records,
        source_path: real.source_path.clone(),
        schema_version: real.schema_version.clone(),
    };
    Ok((combined, summary))
}

/// Target group of a record expressed as an age/BMI pair, used by tests and
/// fixtures that need a donor inside a given cell.
pub fn representative_values(key: SubgroupKey) -> (u32, f64) {
    let age = match key.age_bin {
        AgeBin::Under60 => 52,
        AgeBin::From60To70 => 64,
        AgeBin::Over70 => 74,
    };
    let bmi = match key.bmi_bin {
        BmiBin::Under25 => 22.5,
        BmiBin::From25To30 => 27.5,
        BmiBin::Over30 => 33.0,
    };
    (age, bmi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::test_support::{record, record_in};
    use crate::phantom::PhantomGeometry;
    use crate::stratify::{build_debias_plan, stratification_report, PlanStrategy};

    #[test]
    fn prompt_fixtures() {
        let opts = PromptOptions::default();
        assert_eq!(
            assemble_prompt(&record("a", Sex::Female, 72, 27.5, Diagnosis::HeartFailure), &opts),
            "Female, age in 70s, overweight BMI, with heart failure"
        );
        assert_eq!(
            assemble_prompt(&record("b", Sex::Female, 64, 31.0, Diagnosis::Healthy), &opts),
            "Female, age in 60s, obese BMI"
        );
        assert_eq!(
            assemble_prompt(&record("c", Sex::Male, 59, 18.5, Diagnosis::Healthy), &opts),
            "Male, age in 50s, normal BMI"
        );
        assert_eq!(
            assemble_prompt(&record("d", Sex::Female, 61, 26.0, Diagnosis::Healthy), &opts),
            "Female, age in 60s, overweight BMI"
        );
        let with = PromptOptions { healthy_clause: true };
        assert_eq!(
            assemble_prompt(&record("e", Sex::Male, 45, 17.0, Diagnosis::Healthy), &with),
            "Male, age in 40s, underweight BMI, no heart failure"
        );
    }

    #[test]
    fn bmi_words_at_boundaries() {
        assert_eq!(bmi_word(18.49), "underweight");
        assert_eq!(bmi_word(18.5), "normal");
        assert_eq!(bmi_word(25.0), "overweight");
        assert_eq!(bmi_word(30.0), "obese");
        for (i, w) in BMI_WORDS.iter().enumerate() {
            assert_eq!(prompt_bmi_category(&format!("Male, age in 40s, {w} BMI")), Some(i as u8));
        }
        assert_eq!(prompt_bmi_category("no bmi here"), None);
    }

    #[test]
    fn jsonl_round_trip_and_empty_header() {
        assert_eq!(parse_jobs(&jobs_to_jsonl(&[])).unwrap(), vec![]);
        let job = GenerationJob {
            job_id: "job-000000".into(),
            donor_subject_id: "s1".into(),
            prompt: "Male, age in 50s, normal BMI".into(),
            mask_path: "m.png".into(),
            target_group: "M/Under60/Under25/healthy".parse().unwrap(),
            seed: 9,
            output_path: "job-000000.png".into(),
        };
        let text = jobs_to_jsonl(std::slice::from_ref(&job));
        assert!(text.starts_with("{\"job_id\":\"job-000000\",\"donor_subject_id\""));
        assert!(text.contains("\"target_group\":{\"sex\":\"M\",\"age_bin\":\"Under60\",\"bmi_bin\":\"Under25\",\"diagnosis\":\"healthy\"}"));
        assert_eq!(parse_jobs(&text).unwrap(), vec![job]);
        assert!(matches!(parse_jobs("{bad"), Err(GenError::JobManifest { line: 1, .. })));
    }

    fn ring_mask() -> LabelMask {
        PhantomGeometry::centred(40).mask(40, 40)
    }

    #[test]
    fn mock_is_deterministic_and_rim_tracks_category() {
        let mask = ring_mask();
        assert_eq!(mock_render(&mask, 2, 5), mock_render(&mask, 2, 5));
        let band = rim_band(&mask);
        assert!(band.iter().any(|&b| b));
        let rim_mean = |cat| {
            let img = mock_render(&mask, cat, 5);
            let v: Vec<f64> = img.iter().zip(&band).filter(|(_, &b)| b).map(|(&p, _)| f64::from(p)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let means: Vec<f64> = (0..4).map(rim_mean).collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
        // same seed, same noise: outside the rim the images agree exactly
        let a = mock_render(&mask, 0, 5);
        let b = mock_render(&mask, 3, 5);
        for ((x, y), rim) in a.iter().zip(&b).zip(&band) {
            if !rim {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn mock_background_only() {
        let mask = LabelMask::new(20, 20, vec![0; 400]).unwrap();
        let img = mock_render(&mask, 3, 1);
        let mean = img.iter().map(|&v| f64::from(v)).sum::<f64>() / 400.0;
        assert!((mean - 20.0).abs() < 1.5, "{mean}");
    }

    fn fixture(dir: &Path) -> DatasetManifest {
        let keys = SubgroupKey::all();
        let mask = ring_mask();
        let mut recs = Vec::new();
        for (g, n) in [(0usize, 3usize), (5, 1), (9, 2)] {
            for i in 0..n {
                let mut r = record_in(&format!("s{g:02}{i}"), keys[g]);
                let m = format!("{}_mask.png", r.subject_id);
                imageio::write_mask(&dir.join(&m), &mask).unwrap();
                r.mask_path = m;
                recs.push(r);
            }
        }
        let mut m = DatasetManifest::new(recs);
        m.source_path = dir.join("manifest.csv").to_string_lossy().into_owned();
        m
    }

    #[test]
    fn emit_generate_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path());
        let plan = build_debias_plan(&stratification_report(&m), &m, PlanStrategy::EqualizeToMax, 42).unwrap();
        assert_eq!(plan.jobs.len(), 3);
        let jobs_path = dir.path().join("jobs.jsonl");
        assert_eq!(emit_generation_jobs(&plan, &m, &PromptOptions::default(), &jobs_path).unwrap(), 3);
        let first = std::fs::read(&jobs_path).unwrap();
        emit_generation_jobs(&plan, &m, &PromptOptions::default(), &jobs_path).unwrap();
        assert_eq!(first, std::fs::read(&jobs_path).unwrap());

        let jobs = read_jobs(&jobs_path).unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir(&out).unwrap();
        for r in mock_generate_all(&jobs, &out, None) {
            r.unwrap();
        }
        let (recs, report) = ingest_synthetic(&jobs, &out, &m, None).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(report.issues.is_empty());
        for (r, j) in recs.iter().zip(&jobs) {
            assert_eq!(r.0.group(), j.target_group);
            assert_eq!(r.0.origin, Origin::Synthetic);
        }

        // break one output
        std::fs::write(out.join(&jobs[1].output_path), b"not a png").unwrap();
        let (recs, report) = ingest_synthetic(&jobs, &out, &m, None).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(report.issues[0].kind, IngestIssueKind::Unreadable);

        // every remaining output has the wrong size for a 64 px target
        assert!(matches!(
            ingest_synthetic(&jobs, &out, &m, Some(64)),
            Err(GenError::AllOutputsMissing { count: 3 })
        ));
        let (_, report) = ingest_synthetic(&jobs[..1], &out, &m, None).unwrap();
        assert!(report.issues.is_empty());
        let mut one = jobs[0].clone();
        one.mask_path = dir.path().join("small.png").to_string_lossy().into_owned();
        imageio::write_mask(Path::new(&one.mask_path), &LabelMask::new(8, 8, vec![0; 64]).unwrap()).unwrap();
        let two = vec![one, jobs[2].clone()];
        let (recs, report) = ingest_synthetic(&two, &out, &m, None).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(report.issues[0].kind, IngestIssueKind::DimensionMismatch);

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_synthetic(&jobs, empty.path(), &m, None),
            Err(GenError::AllOutputsMissing { count: 3 })
        ));
    }

    #[test]
    fn upscaled_output_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path());
        let plan = build_debias_plan(&stratification_report(&m), &m, PlanStrategy::EqualizeToMax, 1).unwrap();
        let jobs = prepare_jobs(&plan, &m, &PromptOptions::default()).unwrap();
        let p = mock_generate(&jobs[0], dir.path(), Some(64)).unwrap();
        assert_eq!(imageio::dimensions(&p).unwrap(), (64, 64));
        let (recs, report) = ingest_synthetic(&jobs[..1], dir.path(), &m, Some(64)).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(report.issues.is_empty());
    }

    fn synth_pool(per_group: &[(usize, usize)]) -> Vec<SyntheticRecord> {
        let keys = SubgroupKey::all();
        let mut out = Vec::new();
        for &(g, n) in per_group {
            for i in 0..n {
                let mut r = record_in(&format!("job-{g:02}{i:04}"), keys[g]);
                r.origin = Origin::Synthetic;
                out.push(SyntheticRecord(r));
            }
        }
        out
    }

    fn real_pool(per_group: &[(usize, usize)]) -> DatasetManifest {
        let keys = SubgroupKey::all();
        let mut recs = Vec::new();
        for &(g, n) in per_group {
            for i in 0..n {
                recs.push(record_in(&format!("r{g:02}{i:04}"), keys[g]));
            }
        }
        DatasetManifest::new(recs)
    }

    #[test]
    fn mixing_arithmetic() {
        let real = real_pool(&[(0, 1), (1, 1)]);
        let synth = synth_pool(&[(0, 3), (1, 3)]);
        let (m, s) = mix_datasets(&real, &synth, MixAmount::Fraction(1.0 / 3.0), 42).unwrap();
        assert_eq!(s.synthetic, 1);
        assert_eq!(m.len(), 3);

        let real = real_pool(&[(0, 300), (1, 200), (2, 100)]);
        let synth = synth_pool(&[(0, 200), (1, 200), (2, 200)]);
        let (m, s) = mix_datasets(&real, &synth, MixAmount::Fraction(0.33), 42).unwrap();
        assert_eq!(s.synthetic, 296);
        assert_eq!(m.len(), 896);
        assert!((s.realized_fraction - 0.33).abs() <= 1.0 / 896.0);
        // greedy fill levels the two smaller groups first
        assert_eq!(s.synthetic_per_group.values().sum::<usize>(), 296);

        let (m0, _) = mix_datasets(&real, &synth, MixAmount::Fraction(0.0), 42).unwrap();
        assert_eq!(m0, real);
        assert!(matches!(
            mix_datasets(&real, &synth, MixAmount::Fraction(1.0), 42),
            Err(GenError::InvalidFraction(_))
        ));
    }

    #[test]
    fn mixing_is_seeded_and_reports_shortfall() {
        let real = real_pool(&[(0, 50), (1, 10)]);
        let synth = synth_pool(&[(1, 30)]);
        let a = mix_datasets(&real, &synth, MixAmount::Fraction(0.2), 7).unwrap();
        let b = mix_datasets(&real, &synth, MixAmount::Fraction(0.2), 7).unwrap();
        assert_eq!(a, b);
        let err = mix_datasets(&real, &synth, MixAmount::Fraction(0.5), 7).unwrap_err();
        match err {
            GenError::NotEnoughSynthetic { requested, available, shortfall } => {
                assert_eq!(requested, 60);
                assert_eq!(available, 30);
                assert!(!shortfall.is_empty());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn capacity_fill_prefers_smallest() {
        assert_eq!(capacity_fill(&[5, 1, 3], &[9, 9, 9], 4).unwrap(), vec![0, 3, 1]);
        assert_eq!(capacity_fill(&[5, 1, 3], &[9, 1, 9], 4).unwrap(), vec![1, 1, 2]);
        assert!(capacity_fill(&[0], &[1], 2).is_none());
    }

    #[test]
    fn representative_values_land_in_cell() {
        for key in SubgroupKey::all() {
            let (age, bmi) = representative_values(key);
            assert_eq!(AgeBin::of(age), key.age_bin);
            assert_eq!(BmiBin::of(bmi), key.bmi_bin);
        }
    }
}

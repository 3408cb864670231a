//! Subgroup population accounting, inverse-frequency sampling weights and the
//! debiasing plan that tops up underrepresented subgroups with synthetic
//! images.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::genbridge::{assemble_prompt, GenerationJob, PromptOptions};
use crate::manifest::{Attribute, DatasetManifest, SubgroupKey, SubjectRecord};
use crate::rng::{self, streams};

#[derive(Debug, Error, PartialEq)]
pub enum StratifyError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("weight cell `{0}` has no members")]
    EmptyCell(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("cannot draw {requested} distinct samples from {available} candidates")]
    SampleLargerThanPopulation { requested: usize, available: usize },
    #[error("group {0} needs synthetic images but has no real donor")]
    NoDonorInGroup(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("stratification report does not match the manifest ({0})")]
    ReportMismatch(String),
}

/// Population counts per subgroup plus per-attribute marginals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratificationReport {
    /// Observed subgroups only.
    pub counts: BTreeMap<SubgroupKey, usize>,
    pub total: usize,
    /// attribute name -> attribute value -> count
    pub marginals: BTreeMap<&'static str, BTreeMap<&'static str, usize>>,
}

impl StratificationReport {
    pub fn count(&self, key: &SubgroupKey) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Counts for all 36 subgroups, absent ones as zero.
    pub fn dense_counts(&self) -> BTreeMap<SubgroupKey, usize> {
        SubgroupKey::all()
            .into_iter()
            .map(|k| (k, self.count(&k)))
            .collect()
    }

    pub fn marginal(&self, attribute: Attribute) -> BTreeMap<&'static str, usize> {
        self.marginals
            .get(attribute.name())
            .cloned()
            .unwrap_or_default()
    }

    /// JSON value; object keys serialize in lexicographic order.
    pub fn to_json(&self, include_absent: bool) -> Value {
        let counts = if include_absent {
            self.dense_counts()
        } else {
            self.counts.clone()
        };
        let counts: BTreeMap<String, usize> =
            counts.into_iter().map(|(k, v)| (k.label(), v)).collect();
        json!({
            "counts": counts,
            "total": self.total,
            "marginals": self.marginals,
            "n_groups_observed": self.counts.len(),
        })
    }
}

pub fn stratification_report(manifest: &DatasetManifest) -> StratificationReport {
    let mut counts = BTreeMap::new();
    let mut marginals: BTreeMap<&'static str, BTreeMap<&'static str, usize>> = BTreeMap::new();
    for r in &manifest.records {
        let key = r.group();
        *counts.entry(key).or_insert(0) += 1;
        for attribute in Attribute::ALL {
            *marginals
                .entry(attribute.name())
                .or_default()
                .entry(key.attribute_value(attribute))
                .or_insert(0) += 1;
        }
    }
    StratificationReport {
        counts,
        total: manifest.len(),
        marginals,
    }
}

/// SW weights by label only; SSW by the full (label, sensitive subgroup) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    #[serde(rename = "SW")]
    Sw,
    #[serde(rename = "SSW")]
    Ssw,
}

impl WeightMode {
    pub fn cell(self, record: &SubjectRecord) -> String {
        match self {
            WeightMode::Sw => record.diagnosis.to_string(),
            WeightMode::Ssw => record.group().label(),
        }
    }
}

impl FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Ok(WeightMode::Sw),
            "ssw" => Ok(WeightMode::Ssw),
            other => Err(format!("unknown weight mode `{other}` (expected sw or ssw)")),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Sw => "SW",
            WeightMode::Ssw => "SSW",
        })
    }
}

/// Per-subject sampling weights in manifest order, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub mode: WeightMode,
    pub weights: Vec<(String, f64)>,
}

impl WeightTable {
    pub fn values(&self) -> Vec<f64> {
        self.weights.iter().map(|(_, w)| *w).collect()
    }

    /// CSV `subject_id,weight`.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject_id", "weight"]).expect("in-memory");
        for (id, weight) in &self.weights {
            w.write_record([id.as_str(), &weight.to_string()])
                .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("UTF-8")
    }

    pub fn from_csv_str(text: &str, mode: WeightMode) -> Result<Self, StratifyError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut weights = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| StratifyError::InvalidWeights(e.to_string()))?;
            let id = row.get(0).unwrap_or("").to_string();
            let w: f64 = row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| StratifyError::InvalidWeights(format!("bad weight for `{id}`")))?;
            weights.push((id, w));
        }
        Ok(Self { mode, weights })
    }
}

/// Inverse-frequency weights: a member of cell `c` gets `(1/|c|) / k` where
/// `k` is the number of non-empty cells, so every cell is drawn with equal
/// probability.
pub fn compute_weights(
    manifest: &DatasetManifest,
    mode: WeightMode,
) -> Result<WeightTable, StratifyError> {
    if manifest.is_empty() {
        return Err(StratifyError::EmptyManifest);
    }
    let cells: Vec<String> = manifest.records.iter().map(|r| mode.cell(r)).collect();
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &cells {
        *sizes.entry(c).or_insert(0) += 1;
    }
    let k = sizes.len() as f64;
    let weights = manifest
        .records
        .iter()
        .zip(&cells)
        .map(|(r, c)| (r.subject_id.clone(), 1.0 / (sizes[c.as_str()] as f64 * k)))
        .collect();
    Ok(WeightTable { mode, weights })
}

/// Like [`compute_weights`] but first checks that each listed cell is
/// populated.
pub fn compute_weights_for_cells(
    manifest: &DatasetManifest,
    mode: WeightMode,
    cells: &[String],
) -> Result<WeightTable, StratifyError> {
    for cell in cells {
        if !manifest.records.iter().any(|r| &mode.cell(r) == cell) {
            return Err(StratifyError::EmptyCell(cell.clone()));
        }
    }
    compute_weights(manifest, mode)
}

/// Draws `n` indices proportionally to `weights`.
///
/// With replacement the draws are i.i.d. Without replacement this is
/// Efraimidis-Spirakis sampling (keys `ln(u)/w`, top `n`), which only ever
/// picks positive-weight items.
pub fn sample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
    with_replacement: bool,
) -> Result<Vec<usize>, StratifyError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(StratifyError::InvalidWeights(
            "weights must be finite and non-negative".into(),
        ));
    }
    if with_replacement {
        let dist = WeightedIndex::new(weights)
            .map_err(|e| StratifyError::InvalidWeights(e.to_string()))?;
        return Ok((0..n).map(|_| dist.sample(rng)).collect());
    }
    let available = weights.iter().filter(|w| **w > 0.0).count();
    if n > available {
        return Err(StratifyError::SampleLargerThanPopulation {
            requested: n,
            available,
        });
    }
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            // u in (0, 1]
            let u: f64 = 1.0 - rng.random::<f64>();
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().take(n).map(|(_, i)| i).collect())
}

/// Seeded weighted draw of subject ids.
pub fn weighted_sample(
    table: &WeightTable,
    n: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<String>, StratifyError> {
    let mut rng = rng::stream(seed, streams::SAMPLER);
    let idx = sample_indices(&table.values(), n, &mut rng, with_replacement)?;
    Ok(idx
        .into_iter()
        .map(|i| table.weights[i].0.clone())
        .collect())
}

/// How many synthetic images a plan asks for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanStrategy {
    /// Fill every observed subgroup up to the largest one.
    EqualizeToMax,
    /// Synthetic share `f` of the combined set: `s = round(f * R / (1 - f))`.
    SyntheticFraction { fraction: f64 },
    /// Synthetic count relative to the real pool: `s = round(ratio * R)`.
    SyntheticAdditive { ratio: f64 },
}

impl PlanStrategy {
    fn validate(&self) -> Result<(), StratifyError> {
        match *self {
            PlanStrategy::EqualizeToMax => Ok(()),
            PlanStrategy::SyntheticFraction { fraction } if (0.0..1.0).contains(&fraction) => {
                Ok(())
            }
            PlanStrategy::SyntheticAdditive { ratio } if ratio.is_finite() && ratio >= 0.0 => {
                Ok(())
            }
            other => Err(StratifyError::InvalidStrategy(format!("{other:?}"))),
        }
    }
}

impl FromStr for PlanStrategy {
    type Err = String;
    /// `equalize`, `fraction:<f>` or `additive:<r>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.parse::<f64>().map_err(|e| format!("{v}: {e}"));
        match s.split_once(':') {
            None if s == "equalize" || s == "equalize-to-max" => Ok(PlanStrategy::EqualizeToMax),
            Some(("fraction", v)) => Ok(PlanStrategy::SyntheticFraction { fraction: parse(v)? }),
            Some(("additive", v)) => Ok(PlanStrategy::SyntheticAdditive { ratio: parse(v)? }),
            _ => Err(format!(
                "unknown strategy `{s}` (expected equalize, fraction:<f> or additive:<r>)"
            )),
        }
    }
}

/// Synthetic image count so that `s / (real + s)` is as close as possible to
/// `fraction`.
pub fn synthetic_count_for_fraction(real: usize, fraction: f64) -> usize {
    (fraction * real as f64 / (1.0 - fraction)).round() as usize
}

/// Distributes `total` extra items over groups with current sizes `counts`,
/// always topping up the currently smallest group (lowest index on ties).
///
/// Computed in closed form: raise every group to the highest level `L` with
/// `sum(max(0, L - c))` not exceeding `total`, then hand the remainder to the
/// first groups sitting at `L`.
pub fn water_fill(counts: &[usize], total: usize) -> Vec<usize> {
    if counts.is_empty() || total == 0 {
        return vec![0; counts.len()];
    }
    let need = |level: usize| -> usize { counts.iter().map(|&c| level.saturating_sub(c)).sum() };
    let mut lo = *counts.iter().min().unwrap();
    let mut hi = counts.iter().max().unwrap() + total;
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if need(mid) <= total {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let level = lo;
    let mut alloc: Vec<usize> = counts.iter().map(|&c| level.saturating_sub(c)).collect();
    let mut rem = total - need(level);
    for (i, &c) in counts.iter().enumerate() {
        if rem == 0 {
            break;
        }
        if c <= level {
            alloc[i] += 1;
            rem -= 1;
        }
    }
    debug_assert_eq!(rem, 0);
    alloc
}

/// Per-group synthetic targets and the concrete generation jobs that meet
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasPlan {
    pub strategy: PlanStrategy,
    pub seed: u64,
    #[serde(with = "keyed")]
    pub target_per_group: BTreeMap<SubgroupKey, usize>,
    #[serde(with = "keyed")]
    pub synthetic_needed: BTreeMap<SubgroupKey, usize>,
    pub jobs: Vec<GenerationJob>,
}

impl DebiasPlan {
    pub fn total_synthetic(&self) -> usize {
        self.synthetic_needed.values().sum()
    }

    /// Pretty JSON with lexicographically ordered object keys.
    pub fn to_json_string(&self) -> String {
        let value = serde_json::to_value(self).expect("plan serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }

    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

mod keyed {
    use super::SubgroupKey;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<SubgroupKey, usize>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let labelled: BTreeMap<String, usize> = map.iter().map(|(k, v)| (k.label(), *v)).collect();
        labelled.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<SubgroupKey, usize>, D::Error> {
        let labelled = BTreeMap::<String, usize>::deserialize(d)?;
        labelled
            .into_iter()
            .map(|(k, v)| Ok((k.parse().map_err(D::Error::custom)?, v)))
            .collect()
    }
}

/// Builds the debiasing plan for the real pool described by `manifest`.
///
/// Donors for each subgroup are that subgroup's own members, shuffled with a
/// per-group seeded stream and then used round-robin so every donor is used
/// once before any is reused. Job seeds are distinct within the plan.
pub fn build_debias_plan(
    report: &StratificationReport,
    manifest: &DatasetManifest,
    strategy: PlanStrategy,
    seed: u64,
) -> Result<DebiasPlan, StratifyError> {
    strategy.validate()?;
    if report.total != manifest.len() {
        return Err(StratifyError::ReportMismatch(format!(
            "report total {} vs manifest size {}",
            report.total,
            manifest.len()
        )));
    }

    let observed: Vec<(SubgroupKey, usize)> = report
        .counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (*k, c))
        .collect();
    let counts: Vec<usize> = observed.iter().map(|(_, c)| *c).collect();
    let extra: Vec<usize> = match strategy {
        PlanStrategy::EqualizeToMax => {
            let max = counts.iter().copied().max().unwrap_or(0);
            counts.iter().map(|&c| max - c).collect()
        }
        PlanStrategy::SyntheticFraction { fraction } => {
            water_fill(&counts, synthetic_count_for_fraction(report.total, fraction))
        }
        PlanStrategy::SyntheticAdditive { ratio } => {
            water_fill(&counts, (ratio * report.total as f64).round() as usize)
        }
    };

    let mut members: BTreeMap<SubgroupKey, Vec<&SubjectRecord>> = BTreeMap::new();
    for r in &manifest.records {
        members.entry(r.group()).or_default().push(r);
    }

    let mut target_per_group = BTreeMap::new();
    let mut synthetic_needed = BTreeMap::new();
    let mut jobs = Vec::new();
    let prompt_options = PromptOptions::default();
    for ((key, count), needed) in observed.iter().zip(extra) {
        target_per_group.insert(*key, count + needed);
        synthetic_needed.insert(*key, needed);
        if needed == 0 {
            continue;
        }
        let mut donors = members.get(key).cloned().unwrap_or_default();
        if donors.len() != *count {
            return Err(if donors.is_empty() {
                StratifyError::NoDonorInGroup(key.label())
            } else {
                StratifyError::ReportMismatch(format!(
                    "group {} has {} members, report says {}",
                    key,
                    donors.len(),
                    count
                ))
            });
        }
        donors.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        let mut rng = rng::stream(seed, streams::DONOR_SHUFFLE + key.index() as u64);
        donors.shuffle(&mut rng);
        for j in 0..needed {
            let donor = donors[j % donors.len()];
            let index = jobs.len();
            let job_id = format!("job-{index:06}");
            jobs.push(GenerationJob {
                output_path: format!("{job_id}.png"),
                job_id,
                donor_subject_id: donor.subject_id.clone(),
                prompt: assemble_prompt(donor, &prompt_options),
                mask_path: donor.mask_path.clone(),
                target_group: *key,
                seed: rng::derived_seed(seed, index as u64),
            });
        }
    }
    Ok(DebiasPlan {
        strategy,
        seed,
        target_per_group,
        synthetic_needed,
        jobs,
    })
}

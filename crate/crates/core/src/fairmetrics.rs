//! Classification and fairness metrics computed from prediction files:
//! AUROC, balanced accuracy, per-group rates, the equal-opportunity gap and
//! percentile-bootstrap confidence intervals.
//!
//! Rates are kept as integer counts until the final division so that values
//! such as a 0.9 vs 0.6 TPR gap come out as the nearest double to 0.3.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::manifest::{Attribute, DatasetManifest, SubgroupKey};
use crate::preprocess::percentile_sorted;
use crate::rng::{self, streams};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const MAX_SKIPPED_FRACTION: f64 = 0.2;

/// Attributes reported per group, in report order.
pub const REPORT_ATTRIBUTES: [Attribute; 3] = [Attribute::Sex, Attribute::Bmi, Attribute::Age];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least one positive and one negative")]
    SingleClass,
    #[error("need at least 2 groups with a defined TPR, have {0}")]
    TooFewGroups(usize),
    #[error("JoinFailure: subject `{0}` is not in the manifest")]
    JoinFailure(String),
    #[error("predictions row {row}: {message}")]
    InvalidPrediction { row: usize, message: String },
    #[error("{skipped} of {total} bootstrap resamples were degenerate")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("no predictions")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub subject_id: String,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    /// Parses `subject_id,score,label`.
    pub fn from_csv_str(text: &str) -> Result<Self, MetricsError> {
        let bad = |row: usize, message: String| MetricsError::InvalidPrediction { row, message };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| bad(0, e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["subject_id", "score", "label"] {
            return Err(bad(0, format!("expected header subject_id,score,label, got {}", cols.join(","))));
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| bad(row, e.to_string()))?;
            let id = rec[0].to_string();
            let score: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| bad(row, format!("score `{}` is not a number", &rec[1])))?;
            if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
                return Err(bad(row, format!("score {score} outside [0, 1]")));
            }
            let label = match rec[2].trim() {
                "0" => false,
                "1" => true,
                other => return Err(bad(row, format!("label `{other}` is not 0 or 1"))),
            };
            if !seen.insert(id.clone()) {
                return Err(bad(row, format!("duplicate subject `{id}`")));
            }
            rows.push(PredictionRow { subject_id: id, score, label });
        }
        Ok(Self { rows })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Attaches each prediction's subgroup; every subject must be known.
    pub fn join(&self, manifest: &DatasetManifest) -> Result<Vec<Joined>, MetricsError> {
        let index = manifest.index();
        self.rows
            .iter()
            .map(|r| {
                let rec = index
                    .get(r.subject_id.as_str())
                    .ok_or_else(|| MetricsError::JoinFailure(r.subject_id.clone()))?;
                Ok(Joined { score: r.score, label: r.label, key: rec.group() })
            })
            .collect()
    }
}

/// A prediction with its subject's subgroup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joined {
    pub score: f64,
    pub label: bool,
    pub key: SubgroupKey,
}

fn class_counts(labels: &[bool]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    (pos, labels.len() as u64 - pos)
}

/// Mann-Whitney AUROC: the share of (positive, negative) pairs ranked
/// correctly, ties counting one half. `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    assert_eq!(scores.len(), labels.len());
    let (npos, nneg) = class_counts(labels);
    if npos == 0 || nneg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U, as an exact integer
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * npos as u128 * nneg as u128) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    /// Positive prediction iff `score >= threshold`.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (l, s >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        c
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.tn as f64 / self.negatives() as f64)
    }

    /// `(TPR + TNR) / 2` as one rational division.
    pub fn bacc(&self) -> Option<f64> {
        let (p, n) = (self.positives() as u128, self.negatives() as u128);
        (p > 0 && n > 0).then(|| {
            (self.tp as u128 * n + self.tn as u128 * p) as f64 / (2 * p * n) as f64
        })
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.positives() + self.negatives();
        (total > 0).then(|| (self.tp + self.tn) as f64 / total as f64)
    }
}

pub fn bacc(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricsError> {
    Confusion::at(scores, labels, threshold).bacc().ok_or(MetricsError::SingleClass)
}

pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricsError> {
    Confusion::at(scores, labels, threshold).accuracy().ok_or(MetricsError::Empty)
}

/// How predictions are grouped for rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Attribute(Attribute),
    FullKey,
}

impl Grouping {
    pub fn label(self, key: &SubgroupKey) -> String {
        match self {
            Grouping::Attribute(a) => key.attribute_value(a).to_string(),
            Grouping::FullKey => key.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRates {
    pub threshold: f64,
    pub groups: BTreeMap<String, Confusion>,
    pub diagnostics: Vec<Diagnostic>,
}

impl GroupRates {
    pub fn tpr(&self, group: &str) -> Option<f64> {
        self.groups.get(group).and_then(Confusion::tpr)
    }
}

pub fn group_rates(predictions: &[Joined], grouping: Grouping, threshold: f64) -> GroupRates {
    let mut groups: BTreeMap<String, Confusion> = BTreeMap::new();
    for p in predictions {
        let c = groups.entry(grouping.label(&p.key)).or_default();
        match (p.label, p.score >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
        }
    }
    let diagnostics = groups
        .iter()
        .filter(|(_, c)| c.positives() == 0)
        .map(|(g, _)| {
            Diagnostic::new(
                "UndefinedTpr",
                format!("group {g} has no positives; TPR undefined and excluded from EOD"),
            )
        })
        .collect();
    GroupRates { threshold, groups, diagnostics }
}

/// Largest minus smallest TPR over groups with positives, computed as one
/// division of exact integer cross products.
pub fn eod_gap(rates: &GroupRates) -> Result<f64, MetricsError> {
    let defined: Vec<(u128, u128)> = rates
        .groups
        .values()
        .filter(|c| c.positives() > 0)
        .map(|c| (c.tp as u128, c.positives() as u128))
        .collect();
    if defined.len() < 2 {
        return Err(MetricsError::TooFewGroups(defined.len()));
    }
    // compare a/b < c/d via a*d < c*b
    let max = *defined.iter().max_by(|x, y| (x.0 * y.1).cmp(&(y.0 * x.1))).unwrap();
    let min = *defined.iter().min_by(|x, y| (x.0 * y.1).cmp(&(y.0 * x.1))).unwrap();
    Ok((max.0 * min.1 - min.0 * max.1) as f64 / (max.1 * min.1) as f64)
}

/// Threshold maximizing Youden's J = TPR + TNR - 1 over the observed scores;
/// the lowest such score wins ties.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let (npos, nneg) = class_counts(labels);
    if npos == 0 || nneg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (i128::MIN, candidates[0]);
    for &t in &candidates {
        let c = Confusion::at(scores, labels, t);
        // J scaled by npos * nneg
        let j = (c.tp as i128) * nneg as i128 + (c.tn as i128) * npos as i128;
        if j > best.0 {
            best = (j, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    pub skipped: usize,
}

/// Percentile bootstrap over items, resampling positives and negatives
/// separately with replacement. Resample `i` draws from its own stream so
/// results do not depend on thread scheduling.
pub fn bootstrap_ci<T, S>(
    items: &[T],
    label: impl Fn(&T) -> bool,
    stat: S,
    n_resamples: usize,
    seed: u64,
    level: f64,
) -> Result<ConfidenceInterval, MetricsError>
where
    T: Sync,
    S: Fn(&[&T]) -> Result<f64, MetricsError> + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pos: Vec<&T> = items.iter().filter(|t| label(t)).collect();
    let neg: Vec<&T> = items.iter().filter(|t| !label(t)).collect();
    let values: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, streams::BOOTSTRAP + i as u64);
            let mut sample: Vec<&T> = Vec::with_capacity(items.len());
            for class in [&pos, &neg] {
                for _ in 0..class.len() {
                    sample.push(class[rng.random_range(0..class.len())]);
                }
            }
            stat(&sample).ok().filter(|v| v.is_finite())
        })
        .collect();
    let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = n_resamples - ok.len();
    if ok.is_empty() || skipped as f64 > MAX_SKIPPED_FRACTION * n_resamples as f64 {
        return Err(MetricsError::TooManySkipped { skipped, total: n_resamples });
    }
    ok.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0 * 100.0;
    Ok(ConfidenceInterval {
        lo: percentile_sorted(&ok, tail),
        hi: percentile_sorted(&ok, 100.0 - tail),
        resamples: n_resamples,
        skipped,
    })
}

// Report.

/// A metric value with its interval, raw and scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub value_x100: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub ci_x100: Option<[f64; 2]>,
    pub skipped_resamples: Option<usize>,
}

impl MetricValue {
    fn new(value: Option<f64>, ci: Option<ConfidenceInterval>) -> Self {
        Self {
            value,
            value_x100: value.map(|v| v * 100.0),
            ci: ci.map(|c| [c.lo, c.hi]),
            ci_x100: ci.map(|c| [c.lo * 100.0, c.hi * 100.0]),
            skipped_resamples: ci.map(|c| c.skipped),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEntry {
    pub group: String,
    pub n: usize,
    pub positives: u64,
    pub negatives: u64,
    pub auroc: MetricValue,
    pub bacc: MetricValue,
    pub tpr: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeEntry {
    pub attribute: String,
    pub groups: Vec<GroupEntry>,
    pub average_auroc: MetricValue,
    pub average_bacc: MetricValue,
    pub eod: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub threshold: f64,
    pub threshold_mode: String,
    pub seed: u64,
    pub resamples: usize,
    pub ci_level: f64,
    pub n: usize,
    pub positives: u64,
    pub negatives: u64,
    pub overall_auroc: MetricValue,
    pub overall_bacc: MetricValue,
    pub attributes: Vec<AttributeEntry>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSettings {
    pub threshold: f64,
    pub threshold_mode: String,
    pub seed: u64,
    pub resamples: usize,
    pub level: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            threshold_mode: "fixed".into(),
            seed: crate::DEFAULT_SEED,
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
        }
    }
}

fn split_sl(items: &[&Joined]) -> (Vec<f64>, Vec<bool>) {
    (items.iter().map(|j| j.score).collect(), items.iter().map(|j| j.label).collect())
}

fn auroc_of(items: &[&Joined]) -> Result<f64, MetricsError> {
    let (s, l) = split_sl(items);
    auroc(&s, &l)
}

fn bacc_of(items: &[&Joined], t: f64) -> Result<f64, MetricsError> {
    let (s, l) = split_sl(items);
    bacc(&s, &l, t)
}

fn tpr_of(items: &[&Joined], t: f64) -> Result<f64, MetricsError> {
    let (s, l) = split_sl(items);
    Confusion::at(&s, &l, t).tpr().ok_or(MetricsError::SingleClass)
}

/// Unweighted mean over the groups of a metric that must be defined in all
/// of them.
fn group_average(
    items: &[&Joined],
    grouping: Grouping,
    metric: &(dyn Fn(&[&Joined]) -> Result<f64, MetricsError> + Sync),
) -> Result<f64, MetricsError> {
    let mut groups: BTreeMap<String, Vec<&Joined>> = BTreeMap::new();
    for j in items {
        groups.entry(grouping.label(&j.key)).or_default().push(j);
    }
    let values = groups.values().map(|g| metric(g)).collect::<Result<Vec<_>, _>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn eod_of(items: &[&Joined], grouping: Grouping, t: f64) -> Result<f64, MetricsError> {
    let owned: Vec<Joined> = items.iter().map(|j| **j).collect();
    eod_gap(&group_rates(&owned, grouping, t))
}

struct Ctx<'a> {
    settings: &'a ReportSettings,
    slot: u64,
    diagnostics: Vec<Diagnostic>,
}

impl Ctx<'_> {
    /// Point value plus bootstrap interval; undefined values and failed
    /// intervals become nulls with a diagnostic.
    fn metric(
        &mut self,
        what: &str,
        items: &[&Joined],
        stat: impl Fn(&[&Joined]) -> Result<f64, MetricsError> + Sync,
    ) -> MetricValue {
        let slot = self.slot;
        self.slot += 1;
        let value = match stat(items) {
            Ok(v) => v,
            Err(e) => {
                self.diagnostics.push(Diagnostic::new("UndefinedMetric", format!("{what}: {e}")));
                return MetricValue::new(None, None);
            }
        };
        let ci = bootstrap_ci(
            items,
            |j| j.label,
            |s: &[&&Joined]| {
                let flat: Vec<&Joined> = s.iter().map(|j| **j).collect();
                stat(&flat)
            },
            self.settings.resamples,
            rng::derived_seed(self.settings.seed, slot),
            self.settings.level,
        );
        match ci {
            Ok(ci) => MetricValue::new(Some(value), Some(ci)),
            Err(e) => {
                self.diagnostics.push(Diagnostic::new("NoInterval", format!("{what}: {e}")));
                MetricValue::new(Some(value), None)
            }
        }
    }
}

/// Overall and per-attribute metrics for a joined prediction set.
pub fn fairness_report(
    predictions: &PredictionSet,
    manifest: &DatasetManifest,
    settings: &ReportSettings,
) -> Result<FairnessReport, MetricsError> {
    if predictions.rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let joined = predictions.join(manifest)?;
    let all: Vec<&Joined> = joined.iter().collect();
    let t = settings.threshold;
    let mut ctx = Ctx { settings, slot: 0, diagnostics: Vec::new() };

    let overall_auroc = ctx.metric("overall AUROC", &all, auroc_of);
    let overall_bacc = ctx.metric("overall BACC", &all, |s| bacc_of(s, t));

    let mut attributes = Vec::new();
    for attribute in REPORT_ATTRIBUTES {
        let grouping = Grouping::Attribute(attribute);
        let mut by_group: BTreeMap<String, Vec<&Joined>> = BTreeMap::new();
        for j in &joined {
            by_group.entry(grouping.label(&j.key)).or_default().push(j);
        }
        let mut groups = Vec::new();
        for (g, items) in &by_group {
            let what = format!("{}={g}", attribute.name());
            let (s, l) = split_sl(items);
            let c = Confusion::at(&s, &l, t);
            groups.push(GroupEntry {
                group: g.clone(),
                n: items.len(),
                positives: c.positives(),
                negatives: c.negatives(),
                auroc: ctx.metric(&format!("{what} AUROC"), items, auroc_of),
                bacc: ctx.metric(&format!("{what} BACC"), items, |s| bacc_of(s, t)),
                tpr: ctx.metric(&format!("{what} TPR"), items, |s| tpr_of(s, t)),
            });
        }
        let rates = group_rates(&joined, grouping, t);
        ctx.diagnostics.extend(rates.diagnostics);
        let name = attribute.name();
        // the average is the plain mean of the reported group values
        let mean_of = |f: fn(&GroupEntry) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = groups.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let avg_auroc_value = mean_of(|g| g.auroc.value);
        let avg_bacc_value = mean_of(|g| g.bacc.value);
        let mut average_auroc = ctx.metric(&format!("{name} average AUROC"), &all, |s| {
            group_average(s, grouping, &auroc_of)
        });
        average_auroc.value = avg_auroc_value;
        average_auroc.value_x100 = avg_auroc_value.map(|v| v * 100.0);
        let mut average_bacc = ctx.metric(&format!("{name} average BACC"), &all, |s| {
            group_average(s, grouping, &|x: &[&Joined]| bacc_of(x, t))
        });
        average_bacc.value = avg_bacc_value;
        average_bacc.value_x100 = avg_bacc_value.map(|v| v * 100.0);
        let eod = ctx.metric(&format!("{name} EOD"), &all, |s| eod_of(s, grouping, t));
        attributes.push(AttributeEntry {
            attribute: name.to_string(),
            groups,
            average_auroc,
            average_bacc,
            eod,
        });
    }

    let (positives, negatives) = class_counts(&predictions.labels());
    Ok(FairnessReport {
        threshold: t,
        threshold_mode: settings.threshold_mode.clone(),
        seed: settings.seed,
        resamples: settings.resamples,
        ci_level: settings.level,
        n: joined.len(),
        positives,
        negatives,
        overall_auroc,
        overall_bacc,
        attributes,
        diagnostics: ctx.diagnostics,
    })
}

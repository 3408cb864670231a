//! Fréchet Radiomics Distance: the Gaussian Fréchet distance between fitted
//! distributions of radiomics feature vectors.
//!
//! Features are z-scored against the pooled real table, each population is
//! summarised by its sample mean and regularized sample covariance, and the
//! squared distance
//!
//! `d2 = |mu_a - mu_b|^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a^1/2 S_b S_a^1/2)^1/2)`
//!
//! is reported (clamped at 0).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::linalg::{self, LinalgError, Matrix};
use crate::manifest::{Attribute, DatasetManifest};
use crate::radiomics::FeatureTable;
use crate::rng::{self, streams};

pub const COVARIANCE_EPSILON: f64 = 1e-6;
pub const INTRA_SPLITS: usize = 5;

#[derive(Debug, Error)]
pub enum FrdError {
    #[error("reference table has {0} rows, need at least 2")]
    ReferenceTooSmall(usize),
    #[error("{0} samples, need at least {1}")]
    TooFewSamples(usize, usize),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("feature columns differ from the reference table")]
    ColumnMismatch,
    #[error("subject `{0}` is not in the manifest")]
    UnknownSubject(String),
    #[error("every feature is constant in the reference table")]
    NoUsableFeatures,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Per-feature z-scoring fitted on a reference table. Constant reference
/// features are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dropped: Vec<String>,
}

impl Standardizer {
    pub fn fit(reference: &FeatureTable) -> Result<Self, FrdError> {
        let n = reference.rows.len();
        if n < 2 {
            return Err(FrdError::ReferenceTooSmall(n));
        }
        let d = reference.names.len();
        let mut keep = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..d {
            let col: Vec<f64> = reference.rows.iter().map(|(_, v)| v[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            // a column whose spread is rounding noise counts as constant
            if sd.is_nan() || sd <= 1e-12 * (1.0 + m.abs()) {
                dropped.push(reference.names[j].clone());
                continue;
            }
            keep.push(j);
            mean.push(m);
            std.push(sd);
        }
        if keep.is_empty() {
            return Err(FrdError::NoUsableFeatures);
        }
        Ok(Self {
            names: reference.names.clone(),
            keep,
            mean,
            std,
            dropped,
        })
    }

    pub fn diagnostic(&self) -> Option<Diagnostic> {
        (!self.dropped.is_empty()).then(|| {
            Diagnostic::new(
                "ConstantFeatureDropped",
                format!("dropped zero-variance features: {}", self.dropped.join(", ")),
            )
        })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        self.keep
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&j, (m, s))| (row[j] - m) / s)
            .collect()
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable, FrdError> {
        if table.names != self.names {
            return Err(FrdError::ColumnMismatch);
        }
        Ok(FeatureTable {
            names: self.keep.iter().map(|&j| self.names[j].clone()).collect(),
            rows: table
                .rows
                .iter()
                .map(|(id, v)| (id.clone(), self.apply_row(v)))
                .collect(),
        })
    }
}

/// Standardizes `table` against `reference`; zero-variance reference
/// features are dropped from both.
pub fn standardize_features(
    table: &FeatureTable,
    reference: &FeatureTable,
) -> Result<(FeatureTable, FeatureTable, Option<Diagnostic>), FrdError> {
    let st = Standardizer::fit(reference)?;
    Ok((st.apply(table)?, st.apply(reference)?, st.diagnostic()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub n: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and `n - 1` covariance plus `COVARIANCE_EPSILON * I`.
pub fn fit_gaussian(rows: &[&[f64]]) -> Result<GaussianSummary, FrdError> {
    let n = rows.len();
    if n < 2 {
        return Err(FrdError::TooFewSamples(n, 2));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(FrdError::DimensionMismatch(d, bad.len()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    for i in 0..d {
        for j in i..d {
            let s: f64 = centred.iter().map(|c| c[i] * c[j]).sum::<f64>() / (n - 1) as f64;
            let s = if i == j { s + COVARIANCE_EPSILON } else { s };
            cov.set(i, j, s);
            cov.set(j, i, s);
        }
    }
    Ok(GaussianSummary {
        mean,
        covariance: cov,
        n,
    })
}

pub fn fit_gaussian_owned(rows: &[Vec<f64>]) -> Result<GaussianSummary, FrdError> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    fit_gaussian(&refs)
}

/// Squared Fréchet distance between two Gaussian summaries.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64, FrdError> {
    if a.dim() != b.dim() {
        return Err(FrdError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let ra = linalg::sqrt_psd(&a.covariance)?;
    let inner = ra.mul(&b.covariance)?.mul(&ra)?.symmetrized();
    let cross = linalg::trace_sqrt_psd(&inner)?;
    let d2 = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrdResult {
    pub group_a: String,
    pub group_b: String,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Intra-group distance: mean over `INTRA_SPLITS` seeded 50/50 splits.
pub fn intra_group_frd(rows: &[Vec<f64>], seed: u64, group_index: u64) -> Result<f64, FrdError> {
    if rows.len() < 4 {
        return Err(FrdError::TooFewSamples(rows.len(), 4));
    }
    let mut total = 0.0;
    for split in 0..INTRA_SPLITS {
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut rng = rng::stream(
            rng::derived_seed(seed, group_index),
            streams::FRD_HALVES + split as u64,
        );
        idx.shuffle(&mut rng);
        let (h1, h2) = idx.split_at(rows.len() / 2);
        let pick = |h: &[usize]| -> Vec<&[f64]> { h.iter().map(|&i| rows[i].as_slice()).collect() };
        total += frechet_distance(&fit_gaussian(&pick(h1))?, &fit_gaussian(&pick(h2))?)?;
    }
    Ok(total / INTRA_SPLITS as f64)
}

/// Symmetric matrix of group-pair FRD entries, upper triangle in label order.
/// Diagonal entries are intra-group values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrdMatrix {
    pub groups: Vec<String>,
    pub entries: Vec<FrdResult>,
}

impl FrdMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| (e.group_a == a && e.group_b == b) || (e.group_a == b && e.group_b == a))
            .map(|e| e.value)
    }
}

/// FRD between every pair of groups (rows already standardized).
///
/// Groups with fewer than 2 rows are left out, and groups with fewer than 4
/// rows get no intra-group entry; both cases are reported as diagnostics.
pub fn frd_matrix(
    groups: &BTreeMap<String, Vec<Vec<f64>>>,
    seed: u64,
) -> Result<(FrdMatrix, Vec<Diagnostic>), FrdError> {
    let mut diagnostics = Vec::new();
    let mut labels: Vec<&String> = Vec::new();
    for (label, rows) in groups {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() < 2 {
            diagnostics.push(Diagnostic::new(
                "GroupSkipped",
                format!("group {label} has {} row(s); at least 2 are needed", rows.len()),
            ));
            continue;
        }
        if rows.len() < 4 {
            diagnostics.push(Diagnostic::new(
                "IntraUndefined",
                format!("group {label} has {} rows; intra-group FRD needs 4", rows.len()),
            ));
        }
        if rows.len() < 2 * dim {
            diagnostics.push(Diagnostic::new(
                "SmallGroup",
                format!("group {label} has {} rows for {dim} features", rows.len()),
            ));
        }
        labels.push(label);
    }
    let fits: Vec<GaussianSummary> = labels
        .par_iter()
        .map(|l| fit_gaussian_owned(&groups[*l]))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..labels.len())
        .flat_map(|i| (i..labels.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j || fits[i].n >= 4)
        .collect();
    let entries = pairs
        .par_iter()
        .map(|&(i, j)| {
            let value = if i == j {
                intra_group_frd(&groups[labels[i]], seed, i as u64)?
            } else {
                frechet_distance(&fits[i], &fits[j])?
            };
            Ok(FrdResult {
                group_a: labels[i].clone(),
                group_b: labels[j].clone(),
                value,
                n_a: fits[i].n,
                n_b: fits[j].n,
            })
        })
        .collect::<Result<Vec<_>, FrdError>>()?;
    Ok((
        FrdMatrix {
            groups: labels.into_iter().cloned().collect(),
            entries,
        },
        diagnostics,
    ))
}

/// Real-versus-synthetic FRD for every group present in both with at least
/// 2 rows on each side.
pub fn frd_real_vs_synth(
    real: &BTreeMap<String, Vec<Vec<f64>>>,
    synth: &BTreeMap<String, Vec<Vec<f64>>>,
) -> Result<(Vec<FrdResult>, Vec<Diagnostic>), FrdError> {
    let mut diagnostics = Vec::new();
    let mut usable = Vec::new();
    for (label, r) in real {
        let Some(s) = synth.get(label) else { continue };
        if r.len() < 2 || s.len() < 2 {
            diagnostics.push(Diagnostic::new(
                "GroupSkipped",
                format!("group {label}: {} real and {} synthetic rows; 2 of each are needed", r.len(), s.len()),
            ));
        } else {
            usable.push((label, r, s));
        }
    }
    let results = usable
        .par_iter()
        .map(|(label, r, s)| {
            let a = fit_gaussian_owned(r)?;
            let b = fit_gaussian_owned(s)?;
            Ok(FrdResult {
                group_a: format!("real:{label}"),
                group_b: format!("synthetic:{label}"),
                value: frechet_distance(&a, &b)?,
                n_a: a.n,
                n_b: b.n,
            })
        })
        .collect::<Result<Vec<_>, FrdError>>()?;
    Ok((results, diagnostics))
}

/// Splits table rows by a manifest attribute (`None` pools everything under
/// `all`).
pub fn group_rows(
    table: &FeatureTable,
    manifest: &DatasetManifest,
    attribute: Option<Attribute>,
) -> Result<BTreeMap<String, Vec<Vec<f64>>>, FrdError> {
    let index = manifest.index();
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (id, values) in &table.rows {
        let rec = index
            .get(id.as_str())
            .ok_or_else(|| FrdError::UnknownSubject(id.clone()))?;
        let label = match attribute {
            Some(a) => rec.group().attribute_value(a).to_string(),
            None => "all".to_string(),
        };
        out.entry(label).or_default().push(values.clone());
    }
    Ok(out)
}

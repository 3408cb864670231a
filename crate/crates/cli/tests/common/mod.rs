#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairaug_core::genbridge::representative_values;
use fairaug_core::manifest::{Origin, Split, SubgroupKey, SubjectRecord};
use fairaug_core::{phantom, rng, DatasetManifest};
use rand::Rng;

pub fn fairaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairaug"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs and insists on exit 0, returning the stdout summary.
pub fn ok(args: &[&str]) -> serde_json::Value {
    let out = fairaug(args);
    assert!(
        out.status.success(),
        "fairaug {args:?} exited {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

pub fn subject(id: &str, key: SubgroupKey, split: Option<Split>) -> SubjectRecord {
    let (age, bmi) = representative_values(key);
    SubjectRecord {
        subject_id: id.to_string(),
        sex: key.sex,
        age,
        bmi,
        diagnosis: key.diagnosis,
        image_path: String::new(),
        mask_path: String::new(),
        ed_frame: 1,
        es_frame: 3,
        n_slices: 3,
        n_frames: 5,
        split,
        origin: Origin::Real,
        source_job_id: None,
    }
}

/// Writes phantom images and masks for every subject plus `manifest.csv`.
pub fn write_cohort(dir: &Path, subjects: Vec<SubjectRecord>, side: usize, seed: u64) -> PathBuf {
    let mut records = subjects;
    for (i, r) in records.iter_mut().enumerate() {
        phantom::write_subject(dir, r, side, seed, i as u64).expect("phantom written");
    }
    let path = dir.join("manifest.csv");
    DatasetManifest::new(records).save(&path).expect("manifest saved");
    path
}

/// Skewed subgroup draws: group `i` has weight proportional to `0.8^i`.
pub fn imbalanced_keys(n: usize, seed: u64) -> Vec<SubgroupKey> {
    let all = SubgroupKey::all();
    let weights: Vec<f64> = (0..all.len()).map(|i| 0.8f64.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng::stream(seed, 99);
    (0..n)
        .map(|_| {
            let mut u = r.random::<f64>() * total;
            for (k, w) in all.iter().zip(&weights) {
                if u < *w {
                    return *k;
                }
                u -= w;
            }
            *all.last().unwrap()
        })
        .collect()
}

pub fn cohort_records(keys: &[SubgroupKey], splits: bool) -> Vec<SubjectRecord> {
    keys.iter()
        .enumerate()
        .map(|(i, k)| {
            let split = splits.then_some(match i % 5 {
                0 => Split::Test,
                1 => Split::Val,
                _ => Split::Train,
            });
            subject(&format!("sub{i:04}"), *k, split)
        })
        .collect()
}

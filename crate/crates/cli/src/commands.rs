use rayon::prelude::*;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairaug_core::fairmetrics::{self, PredictionSet, ReportSettings};
use fairaug_core::fingerprint::fingerprint;
use fairaug_core::frd::{self, Standardizer};
use fairaug_core::genbridge::{self, MixAmount, PromptOptions, SyntheticRecord};
use fairaug_core::manifest::{self, Attribute, DatasetManifest, Origin, Split};
use fairaug_core::preprocess::{
    self, ChannelPolicy, NormalizationMode, PreprocessSettings, ViewEntry,
};
use fairaug_core::radiomics::{self, ExtractionSettings, FeatureChannels, FeatureInput, FeatureTable};
use fairaug_core::stratify::{self, PlanStrategy, WeightMode};
use fairaug_core::DebiasPlan;

use crate::output::{self, file_digest, read_text, write_file, write_json, write_meta, Failure, Log};
use crate::Command;

type Outcome = Result<Value, Failure>;

pub fn run(command: Command, log: &Log) -> Outcome {
    match command {
        Command::Audit {
            manifest,
            out,
            include_absent,
            seed,
        } => audit(&manifest, &out, include_absent, seed.seed, log),
        Command::Split {
            manifest,
            out,
            assignment_out,
            test_frac,
            val_frac,
            seed,
        } => split(&manifest, &out, assignment_out.as_deref(), test_frac, val_frac, seed.seed, log),
        Command::Weights {
            manifest,
            out,
            mode,
            pool,
            sample,
            sample_out,
            no_replacement,
            seed,
        } => weights(
            &manifest,
            &out,
            &mode,
            &pool,
            sample.zip(sample_out),
            !no_replacement,
            seed.seed,
            log,
        ),
        Command::Plan {
            manifest,
            out,
            strategy,
            pool,
            seed,
        } => plan(&manifest, &out, &strategy, &pool, seed.seed, log),
        Command::GenJobs {
            plan,
            manifest,
            out,
            healthy_clause,
            seed,
        } => gen_jobs(&plan, &manifest, &out, healthy_clause, seed.seed, log),
        Command::MockGen { jobs, out, size, seed } => mock_gen(&jobs, &out, size, seed.seed, log),
        Command::Ingest {
            jobs,
            images,
            manifest,
            out,
            size,
            report,
            seed,
        } => ingest(&jobs, &images, &manifest, &out, size, report.as_deref(), seed.seed, log),
        Command::Mix {
            manifest,
            synthetic,
            out,
            fraction,
            all,
            sweep,
            out_dir,
            pool,
            seed,
        } => {
            let mode = match (sweep, fraction, all) {
                (Some(points), _, _) => MixMode::Sweep(points, out_dir.expect("clap requires out_dir")),
                (None, Some(f), false) => MixMode::Single(MixAmount::Fraction(f)),
                (None, None, true) => MixMode::Single(MixAmount::All),
                _ => {
                    return Err(Failure::validation(
                        "mix needs exactly one of --fraction, --all or --sweep",
                    ))
                }
            };
            mix(&manifest, &synthetic, out.as_deref(), mode, &pool, seed.seed, log)
        }
        Command::Preprocess {
            manifest,
            out,
            size,
            train_views,
            channel_policy,
            normalization,
            seed,
        } => {
            let settings = PreprocessSettings {
                size: (size > 0).then_some(size),
                train_views,
                channel_policy: parse_channel_policy(&channel_policy)?,
                normalization: parse_normalization(&normalization)?,
            };
            preprocess_cmd(&manifest, &out, &settings, seed.seed, log)
        }
        Command::Features {
            views,
            out,
            levels,
            include_es,
            all_views,
            normalization,
            seed,
        } => {
            let settings = ExtractionSettings {
                levels,
                normalization: parse_normalization(&normalization)?,
                channels: if include_es {
                    FeatureChannels::EdEs
                } else {
                    FeatureChannels::Ed
                },
            };
            features(&views, &out, &settings, all_views, seed.seed, log)
        }
        Command::Frd {
            features,
            features_synth,
            manifest,
            group_by,
            out,
            seed,
        } => frd_cmd(&features, features_synth.as_deref(), &manifest, &group_by, &out, seed.seed, log),
        Command::Evaluate {
            predictions,
            manifest,
            out,
            threshold,
            youden_from,
            resamples,
            ci_level,
            seed,
        } => evaluate(
            &predictions,
            &manifest,
            &out,
            threshold,
            youden_from.as_deref(),
            resamples,
            ci_level,
            seed.seed,
            log,
        ),
    }
}

fn parse_with<T>(value: &str, flag: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<T, Failure> {
    f(value).map_err(|e| Failure::validation(format!("--{flag}: {e}")))
}

fn parse_channel_policy(s: &str) -> Result<ChannelPolicy, Failure> {
    parse_with(s, "channel-policy", |s| match s {
        "duplicate-ed" => Ok(ChannelPolicy::DuplicateEd),
        "mean-third" => Ok(ChannelPolicy::MeanThird),
        other => Err(format!("unknown policy `{other}` (duplicate-ed or mean-third)")),
    })
}

fn parse_normalization(s: &str) -> Result<NormalizationMode, Failure> {
    parse_with(s, "normalization", |s| {
        if s == "minmax" {
            return Ok(NormalizationMode::MinMax);
        }
        let bounds = s
            .strip_prefix("percentile:")
            .and_then(|b| b.split_once(','))
            .ok_or_else(|| format!("expected minmax or percentile:<lo>,<hi>, got `{s}`"))?;
        let p_lo: f64 = bounds.0.trim().parse().map_err(|e| format!("{e}"))?;
        let p_hi: f64 = bounds.1.trim().parse().map_err(|e| format!("{e}"))?;
        if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo >= p_hi {
            return Err(format!("percentiles must satisfy 0 <= lo < hi <= 100, got {p_lo},{p_hi}"));
        }
        Ok(NormalizationMode::Percentile { p_lo, p_hi })
    })
}

/// `train`, `val`, `test` or `all`.
fn select_pool(m: &DatasetManifest, pool: &str) -> Result<DatasetManifest, Failure> {
    if pool == "all" {
        return Ok(m.clone());
    }
    let split: Split = parse_with(pool, "pool", |s| s.parse())?;
    Ok(m.split_records(split))
}

fn load(path: &Path, log: &Log) -> Result<DatasetManifest, Failure> {
    let m = manifest::load_manifest(path)?;
    log.note(format!("{}: {} records", path.display(), m.len()));
    Ok(m)
}

/// Derived manifests live elsewhere than their sources, so their image and
/// mask paths are written out absolute.
fn anchored(m: &DatasetManifest) -> Result<DatasetManifest, Failure> {
    let abs = |p: &str| -> Result<String, Failure> {
        let resolved = m.resolve(p);
        std::path::absolute(&resolved)
            .map(|a| a.to_string_lossy().into_owned())
            .map_err(|e| Failure::io(&resolved, e))
    };
    let mut out = m.clone();
    for r in &mut out.records {
        r.image_path = abs(&r.image_path)?;
        r.mask_path = abs(&r.mask_path)?;
    }
    Ok(out)
}

fn audit(path: &Path, out: &Path, include_absent: bool, seed: u64, log: &Log) -> Outcome {
    let m = load(path, log)?;
    let report = stratify::stratification_report(&m);
    let fp = fingerprint(
        "audit",
        seed,
        json!({ "manifest_sha256": file_digest(path)?, "include_absent": include_absent }),
    );
    let mut body = report.to_json(include_absent);
    body["fingerprint"] = fp.clone();
    write_json(out, &body)?;
    Ok(json!({
        "command": "audit",
        "seed": seed,
        "total": report.total,
        "n_groups_observed": report.counts.len(),
        "outputs": [out],
        "fingerprint": fp,
    }))
}

fn split(
    path: &Path,
    out: &Path,
    assignment_out: Option<&Path>,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
    log: &Log,
) -> Outcome {
    let m = load(path, log)?;
    let assignment = manifest::split_dataset(&m, seed, test_frac, val_frac)?;
    let split_manifest = anchored(&assignment.apply(&m)?)?;
    let fp = fingerprint(
        "split",
        seed,
        json!({ "manifest_sha256": file_digest(path)?, "test_frac": test_frac, "val_frac": val_frac }),
    );
    write_file(out, split_manifest.to_csv_string())?;
    write_meta(out, &fp)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(a) = assignment_out {
        write_file(a, assignment.to_csv_string())?;
        write_meta(a, &fp)?;
        outputs.push(a.to_path_buf());
    }
    Ok(json!({
        "command": "split",
        "seed": seed,
        "counts": {
            "train": assignment.count(Split::Train),
            "val": assignment.count(Split::Val),
            "test": assignment.count(Split::Test),
        },
        "outputs": outputs,
        "fingerprint": fp,
    }))
}

#[allow(clippy::too_many_arguments)]
fn weights(
    path: &Path,
    out: &Path,
    mode: &str,
    pool: &str,
    sample: Option<(usize, PathBuf)>,
    with_replacement: bool,
    seed: u64,
    log: &Log,
) -> Outcome {
    let mode: WeightMode = parse_with(mode, "mode", |s| s.parse())?;
    let m = select_pool(&load(path, log)?, pool)?;
    let table = stratify::compute_weights(&m, mode)?;
    let fp = fingerprint(
        "weights",
        seed,
        json!({
            "manifest_sha256": file_digest(path)?,
            "mode": mode,
            "pool": pool,
            "sample": sample.as_ref().map(|s| s.0),
            "with_replacement": with_replacement,
        }),
    );
    write_file(out, table.to_csv_string())?;
    write_meta(out, &fp)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some((n, sample_out)) = sample {
        let ids = stratify::weighted_sample(&table, n, seed, with_replacement)?;
        let mut text = String::from("subject_id\n");
        for id in ids {
            text.push_str(&id);
            text.push('\n');
        }
        write_file(&sample_out, text)?;
        write_meta(&sample_out, &fp)?;
        outputs.push(sample_out);
    }
    Ok(json!({
        "command": "weights",
        "seed": seed,
        "mode": mode,
        "subjects": table.weights.len(),
        "outputs": outputs,
        "fingerprint": fp,
    }))
}

fn plan(path: &Path, out: &Path, strategy: &str, pool: &str, seed: u64, log: &Log) -> Outcome {
    let strategy: PlanStrategy = parse_with(strategy, "strategy", |s| s.parse())?;
    let m = select_pool(&load(path, log)?, pool)?;
    let report = stratify::stratification_report(&m);
    let plan = stratify::build_debias_plan(&report, &m, strategy, seed)?;
    let fp = fingerprint(
        "plan",
        seed,
        json!({ "manifest_sha256": file_digest(path)?, "strategy": strategy, "pool": pool }),
    );
    write_file(out, plan.to_json_string())?;
    write_meta(out, &fp)?;
    Ok(json!({
        "command": "plan",
        "seed": seed,
        "strategy": strategy,
        "real": m.len(),
        "synthetic": plan.total_synthetic(),
        "jobs": plan.jobs.len(),
        "outputs": [out],
        "fingerprint": fp,
    }))
}

fn gen_jobs(plan_path: &Path, path: &Path, out: &Path, healthy_clause: bool, seed: u64, log: &Log) -> Outcome {
    let plan = DebiasPlan::from_json_str(&read_text(plan_path)?).map_err(|e| Failure {
        category: fairaug_core::ErrorCategory::Validation,
        code: "Format".into(),
        message: format!("{}: {e}", plan_path.display()),
    })?;
    let m = anchored(&load(path, log)?)?;
    let n = genbridge::emit_generation_jobs(&plan, &m, &PromptOptions { healthy_clause }, out)?;
    let fp = fingerprint(
        "gen-jobs",
        seed,
        json!({
            "plan_sha256": file_digest(plan_path)?,
            "manifest_sha256": file_digest(path)?,
            "healthy_clause": healthy_clause,
        }),
    );
    write_meta(out, &fp)?;
    Ok(json!({
        "command": "gen-jobs",
        "seed": seed,
        "jobs": n,
        "outputs": [out],
        "fingerprint": fp,
    }))
}

fn mock_gen(jobs_path: &Path, out: &Path, size: Option<usize>, seed: u64, log: &Log) -> Outcome {
    let jobs = genbridge::read_jobs(jobs_path)?;
    output::ensure_dir(out)?;
    log.note(format!("rendering {} jobs", jobs.len()));
    let mut written = Vec::with_capacity(jobs.len());
    for r in genbridge::mock_generate_all(&jobs, out, size) {
        written.push(r?);
    }
    let fp = fingerprint(
        "mock-gen",
        seed,
        json!({ "jobs_sha256": file_digest(jobs_path)?, "size": size }),
    );
    let manifest_path = out.join("mock_gen.meta.json");
    write_json(&manifest_path, &json!({ "fingerprint": fp, "images": written.len() }))?;
    Ok(json!({
        "command": "mock-gen",
        "seed": seed,
        "images": written.len(),
        "outputs": [out],
        "fingerprint": fp,
    }))
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    jobs_path: &Path,
    images: &Path,
    path: &Path,
    out: &Path,
    size: Option<usize>,
    report_path: Option<&Path>,
    seed: u64,
    log: &Log,
) -> Outcome {
    let jobs = genbridge::read_jobs(jobs_path)?;
    let m = load(path, log)?;
    let images = std::path::absolute(images).map_err(|e| Failure::io(images, e))?;
    let (records, report) = genbridge::ingest_synthetic(&jobs, &images, &m, size)?;
    for issue in &report.issues {
        log.diagnostic(&fairaug_core::Diagnostic::new(
            format!("{:?}", issue.kind),
            format!("{}: {}", issue.job_id, issue.detail),
        ));
    }
    let fp = fingerprint(
        "ingest",
        seed,
        json!({
            "jobs_sha256": file_digest(jobs_path)?,
            "manifest_sha256": file_digest(path)?,
            "size": size,
        }),
    );
    let synth = DatasetManifest::new(records.into_iter().map(SyntheticRecord::into_record).collect());
    write_file(out, synth.to_csv_string())?;
    write_meta(out, &fp)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(r) = report_path {
        write_json(r, &json!({ "reconciliation": report, "fingerprint": fp }))?;
        outputs.push(r.to_path_buf());
    }
    Ok(json!({
        "command": "ingest",
        "seed": seed,
        "reconciliation": report,
        "outputs": outputs,
        "fingerprint": fp,
    }))
}

enum MixMode {
    Single(MixAmount),
    Sweep(Vec<f64>, PathBuf),
}

fn amount_json(a: MixAmount) -> Value {
    match a {
        MixAmount::Fraction(f) => json!({ "fraction": f }),
        MixAmount::All => json!("all"),
    }
}

fn sweep_file_name(f: f64) -> String {
    format!("mix_f{f}.csv")
}

fn mix(
    path: &Path,
    synth_path: &Path,
    out: Option<&Path>,
    mode: MixMode,
    pool: &str,
    seed: u64,
    log: &Log,
) -> Outcome {
    let real = anchored(&select_pool(&load(path, log)?, pool)?)?;
    let synth_manifest = anchored(&load(synth_path, log)?)?;
    if let Some(r) = synth_manifest.records.iter().find(|r| r.origin != Origin::Synthetic) {
        return Err(Failure::validation(format!(
            "{}: record {} is not synthetic",
            synth_path.display(),
            r.subject_id
        )));
    }
    let synth: Vec<SyntheticRecord> = synth_manifest.records.into_iter().map(SyntheticRecord).collect();
    let inputs = json!({
        "manifest_sha256": file_digest(path)?,
        "synthetic_sha256": file_digest(synth_path)?,
        "pool": pool,
    });
    let points: Vec<(MixAmount, PathBuf)> = match mode {
        MixMode::Single(a) => vec![(a, out.expect("clap requires --out").to_path_buf())],
        MixMode::Sweep(fs, dir) => fs
            .into_iter()
            .map(|f| (MixAmount::Fraction(f), dir.join(sweep_file_name(f))))
            .collect(),
    };
    let mut summaries = Vec::new();
    let mut fps = Vec::new();
    for (amount, target) in &points {
        let (combined, summary) = genbridge::mix_datasets(&real, &synth, *amount, seed)?;
        let mut settings = inputs.clone();
        settings["amount"] = amount_json(*amount);
        let fp = fingerprint("mix", seed, settings);
        write_file(target, combined.to_csv_string())?;
        write_meta(target, &fp)?;
        summaries.push(json!({ "output": target, "summary": summary }));
        fps.push(fp);
    }
    let fingerprint_value = if fps.len() == 1 { fps.remove(0) } else { Value::Array(fps) };
    Ok(json!({
        "command": "mix",
        "seed": seed,
        "points": summaries,
        "fingerprint": fingerprint_value,
    }))
}

pub const VIEW_INDEX_NAME: &str = "views.csv";

fn preprocess_cmd(path: &Path, out: &Path, settings: &PreprocessSettings, seed: u64, log: &Log) -> Outcome {
    let m = load(path, log)?;
    output::ensure_dir(out)?;
    let results: Vec<_> = m
        .records
        .par_iter()
        .map(|r| {
            preprocess::preprocess_record(
                r,
                &m.resolve(&r.image_path),
                &m.resolve(&r.mask_path),
                out,
                settings,
            )
            .map_err(|e| (r.subject_id.clone(), e))
        })
        .collect();
    let mut entries: Vec<ViewEntry> = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        let (e, d) = r.map_err(|(id, e)| {
            let mut f = Failure::from(e);
            f.message = format!("{id}: {}", f.message);
            f
        })?;
        entries.extend(e);
        diagnostics.extend(d);
    }
    log.diagnostics(&diagnostics);
    let fp = fingerprint(
        "preprocess",
        seed,
        json!({ "manifest_sha256": file_digest(path)?, "settings": settings }),
    );
    let index = out.join(VIEW_INDEX_NAME);
    write_file(&index, preprocess::view_index_csv(&entries))?;
    write_meta(&index, &fp)?;
    let per_split = entries.iter().fold(BTreeMap::<String, usize>::new(), |mut acc, e| {
        *acc.entry(if e.split.is_empty() { "none".into() } else { e.split.clone() }).or_default() += 1;
        acc
    });
    Ok(json!({
        "command": "preprocess",
        "seed": seed,
        "records": m.len(),
        "views": entries.len(),
        "views_per_split": per_split,
        "diagnostics": diagnostics,
        "outputs": [out, index],
        "fingerprint": fp,
    }))
}

fn read_view_index(path: &Path) -> Result<Vec<ViewEntry>, Failure> {
    preprocess::view_index_from_csv_str(&read_text(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

/// Central view per subject: offset 0, middle of the slices present.
fn central_views(entries: Vec<ViewEntry>) -> Vec<ViewEntry> {
    let mut by_subject: BTreeMap<String, Vec<ViewEntry>> = BTreeMap::new();
    for e in entries.into_iter().filter(|e| e.temporal_offset == 0) {
        by_subject.entry(e.subject_id.clone()).or_default().push(e);
    }
    by_subject
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|e| e.slice);
            v.swap_remove(v.len() / 2)
        })
        .collect()
}

fn features(
    views_path: &Path,
    out: &Path,
    settings: &ExtractionSettings,
    all_views: bool,
    seed: u64,
    log: &Log,
) -> Outcome {
    let mut entries = read_view_index(views_path)?;
    if !all_views {
        entries = central_views(entries);
    }
    let base = views_path.parent().unwrap_or(Path::new(""));
    let inputs: Vec<FeatureInput> = entries
        .iter()
        .map(|e| FeatureInput {
            subject_id: e.subject_id.clone(),
            image_path: base.join(&e.image_path),
            mask_path: base.join(&e.mask_path),
        })
        .collect();
    log.note(format!("extracting features for {} views", inputs.len()));
    let (table, diagnostics) = radiomics::extract_table(&inputs, settings)?;
    log.diagnostics(&diagnostics);
    let mut settings_json = settings.sidecar_json();
    settings_json["views_sha256"] = json!(file_digest(views_path)?);
    settings_json["all_views"] = json!(all_views);
    let fp = fingerprint("features", seed, settings_json);
    write_file(out, table.to_csv_string())?;
    write_meta(out, &fp)?;
    Ok(json!({
        "command": "features",
        "seed": seed,
        "rows": table.len(),
        "features": table.names.len(),
        "diagnostics": diagnostics,
        "outputs": [out],
        "fingerprint": fp,
    }))
}

fn load_table(path: &Path) -> Result<FeatureTable, Failure> {
    FeatureTable::from_csv_str(&read_text(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

enum FrdGrouping {
    All,
    Attribute(Attribute),
    Subgroup,
}

fn parse_grouping(s: &str) -> Result<FrdGrouping, Failure> {
    match s {
        "all" => Ok(FrdGrouping::All),
        "subgroup" => Ok(FrdGrouping::Subgroup),
        other => parse_with(other, "group-by", |s| s.parse()).map(FrdGrouping::Attribute),
    }
}

fn grouped(
    table: &FeatureTable,
    m: &DatasetManifest,
    grouping: &FrdGrouping,
) -> Result<BTreeMap<String, Vec<Vec<f64>>>, Failure> {
    Ok(match grouping {
        FrdGrouping::All => frd::group_rows(table, m, None)?,
        FrdGrouping::Attribute(a) => frd::group_rows(table, m, Some(*a))?,
        FrdGrouping::Subgroup => {
            let index = m.index();
            let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for (id, values) in &table.rows {
                let rec = index
                    .get(id.as_str())
                    .ok_or_else(|| Failure::from(frd::FrdError::UnknownSubject(id.clone())))?;
                out.entry(rec.group().label()).or_default().push(values.clone());
            }
            out
        }
    })
}

fn frd_cmd(
    real_path: &Path,
    synth_path: Option<&Path>,
    manifests: &[PathBuf],
    group_by: &str,
    out: &Path,
    seed: u64,
    log: &Log,
) -> Outcome {
    let grouping = parse_grouping(group_by)?;
    let mut records = Vec::new();
    let mut manifest_digests = Vec::new();
    for p in manifests {
        records.extend(load(p, log)?.records);
        manifest_digests.push(file_digest(p)?);
    }
    let m = DatasetManifest::new(records);
    let real = load_table(real_path)?;
    let standardizer = Standardizer::fit(&real)?;
    let mut diagnostics: Vec<_> = standardizer.diagnostic().into_iter().collect();
    let real_std = standardizer.apply(&real)?;
    let real_groups = grouped(&real_std, &m, &grouping)?;
    let (matrix, d) = frd::frd_matrix(&real_groups, seed)?;
    diagnostics.extend(d);
    let mut settings = json!({
        "features_sha256": file_digest(real_path)?,
        "manifest_sha256": manifest_digests,
        "group_by": group_by,
    });
    let mut report = json!({
        "group_by": group_by,
        "groups": real_groups.iter().map(|(k, v)| (k.clone(), v.len())).collect::<BTreeMap<_, _>>(),
        "matrix": matrix,
    });
    if let Some(sp) = synth_path {
        settings["features_synth_sha256"] = json!(file_digest(sp)?);
        let synth_std = standardizer.apply(&load_table(sp)?)?;
        let synth_groups = grouped(&synth_std, &m, &grouping)?;
        report["synthetic_groups"] = json!(synth_groups
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect::<BTreeMap<_, _>>());
        let (pairs, d) = frd::frd_real_vs_synth(&real_groups, &synth_groups)?;
        diagnostics.extend(d);
        report["real_vs_synthetic"] = json!(pairs);
    }
    log.diagnostics(&diagnostics);
    let fp = fingerprint("frd", seed, settings);
    report["diagnostics"] = json!(diagnostics);
    report["fingerprint"] = fp.clone();
    write_json(out, &report)?;
    Ok(json!({
        "command": "frd",
        "seed": seed,
        "groups": matrix.groups,
        "outputs": [out],
        "fingerprint": fp,
    }))
}

fn load_predictions(path: &Path) -> Result<PredictionSet, Failure> {
    PredictionSet::from_csv_str(&read_text(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    pred_path: &Path,
    path: &Path,
    out: &Path,
    threshold: f64,
    youden_from: Option<&Path>,
    resamples: usize,
    ci_level: f64,
    seed: u64,
    log: &Log,
) -> Outcome {
    let predictions = load_predictions(pred_path)?;
    let m = load(path, log)?;
    let mut settings = json!({
        "predictions_sha256": file_digest(pred_path)?,
        "manifest_sha256": file_digest(path)?,
        "resamples": resamples,
        "ci_level": ci_level,
    });
    let (threshold, mode) = match youden_from {
        Some(v) => {
            let val = load_predictions(v)?;
            settings["youden_from_sha256"] = json!(file_digest(v)?);
            (fairmetrics::youden_threshold(&val.scores(), &val.labels())?, "youden")
        }
        None => {
            if !threshold.is_finite() {
                return Err(Failure::validation("--threshold must be finite"));
            }
            settings["threshold"] = json!(threshold);
            (threshold, "fixed")
        }
    };
    let report = fairmetrics::fairness_report(
        &predictions,
        &m,
        &ReportSettings {
            threshold,
            threshold_mode: mode.into(),
            seed,
            resamples,
            level: ci_level,
        },
    )?;
    log.diagnostics(&report.diagnostics);
    let fp = fingerprint("evaluate", seed, settings);
    let mut body = serde_json::to_value(&report).expect("report serializes");
    body["fingerprint"] = fp.clone();
    write_json(out, &body)?;
    Ok(json!({
        "command": "evaluate",
        "seed": seed,
        "threshold": threshold,
        "threshold_mode": mode,
        "n": report.n,
        "overall_auroc": report.overall_auroc.value,
        "outputs": [out],
        "fingerprint": fp,
    }))
}

//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use common::*;
use fairaug_core::fairmetrics::{self, Confusion, Grouping, Joined};
use fairaug_core::fingerprint::sha256_hex;
use fairaug_core::frd::{self, GaussianSummary, Standardizer};
use fairaug_core::genbridge::{self, MixAmount, PromptOptions, SyntheticRecord};
use fairaug_core::linalg::{self, Matrix};
use fairaug_core::manifest::{Attribute, Origin, Split};
use fairaug_core::phantom::{self, PhantomGeometry};
use fairaug_core::preprocess::{self, ChannelPolicy, Image2D, Provenance, VolumeDims};
use fairaug_core::radiomics::{self, ExtractionSettings, FeatureTable};
use fairaug_core::stratify::{self, WeightMode};
use fairaug_core::{
    rng, AgeBin, BmiBin, DatasetManifest, DebiasPlan, Diagnosis, Sex, StackedImage, SubgroupKey,
    SubjectRecord,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn c1_subgroups() -> Check {
    let mut r = rng::stream(1, 1);
    let records: Vec<SubjectRecord> = (0..10_000)
        .map(|i| {
            let key = SubgroupKey::all()[0];
            let mut rec = subject(&format!("f{i:05}"), key, None);
            rec.sex = if r.random::<bool>() { Sex::Female } else { Sex::Male };
            rec.age = r.random_range(18..=99);
            rec.bmi = f64::from(r.random_range(150..=500u32)) / 10.0;
            rec.diagnosis = if r.random::<bool>() { Diagnosis::HeartFailure } else { Diagnosis::Healthy };
            rec.image_path = format!("img/{i}");
            rec.mask_path = format!("mask/{i}.png");
            rec
        })
        .collect();
    let csv = DatasetManifest::new(records.clone()).to_csv_string();

    let start = Instant::now();
    let m = DatasetManifest::from_reader(csv.as_bytes(), "fuzz.csv").map_err(|e| e.to_string())?;
    let report = stratify::stratification_report(&m);
    let elapsed = start.elapsed();

    ensure(SubgroupKey::all().len() == 36, || "key space is not 36".into())?;
    let indices: BTreeSet<usize> = SubgroupKey::all().iter().map(|k| k.index()).collect();
    ensure(indices == (0..36).collect(), || "key indices are not a bijection onto 0..36".into())?;
    ensure(report.counts.len() == 36, || format!("{} keys observed", report.counts.len()))?;
    ensure(report.counts.values().sum::<usize>() == 10_000, || "counts do not partition".into())?;
    for rec in &m.records {
        let k = rec.group();
        let age_ok = match k.age_bin {
            AgeBin::Under60 => rec.age < 60,
            AgeBin::From60To70 => (60..70).contains(&rec.age),
            AgeBin::Over70 => rec.age >= 70,
        };
        let bmi_ok = match k.bmi_bin {
            BmiBin::Under25 => rec.bmi < 25.0,
            BmiBin::From25To30 => (25.0..30.0).contains(&rec.bmi),
            BmiBin::Over30 => rec.bmi >= 30.0,
        };
        ensure(age_ok && bmi_ok && k.sex == rec.sex && k.diagnosis == rec.diagnosis, || {
            format!("{} mapped to {}", rec.subject_id, k.label())
        })?;
    }
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("36 keys, 10000 records partitioned, {elapsed:.2?}"))
}

fn c2_ssw_sampling() -> Check {
    let sizes = [900usize, 300, 100, 60, 30, 10];
    let keys = SubgroupKey::all();
    let mut records = Vec::new();
    for (g, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            records.push(subject(&format!("g{g}_{i:03}"), keys[g * 5], Some(Split::Train)));
        }
    }
    let m = DatasetManifest::new(records);
    let group_of: BTreeMap<String, usize> = m
        .records
        .iter()
        .map(|r| {
            let id = &r.subject_id;
            (id.clone(), id[1..id.find('_').unwrap()].parse().unwrap())
        })
        .collect();

    let start = Instant::now();
    let table = stratify::compute_weights(&m, WeightMode::Ssw).map_err(|e| e.to_string())?;
    let draws = 100_000;
    let ids = stratify::weighted_sample(&table, draws, 2024, true).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut expected_mass = vec![0.0; sizes.len()];
    for (id, w) in &table.weights {
        expected_mass[group_of[id]] += w;
    }
    let g = sizes.len() as f64;
    for (i, mass) in expected_mass.iter().enumerate() {
        ensure((mass - 1.0 / g).abs() < 1e-12, || format!("group {i} weight mass {mass}"))?;
    }
    let mut counts = vec![0usize; sizes.len()];
    for id in &ids {
        counts[group_of[id]] += 1;
    }
    let expected = draws as f64 / g;
    let mut chi2 = 0.0;
    let mut worst = 0.0f64;
    for &c in &counts {
        let freq = c as f64 / draws as f64;
        worst = worst.max((freq - 1.0 / g).abs());
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    // 99th percentile of chi-square with 5 degrees of freedom
    let critical = 15.086;
    ensure(worst <= 0.01, || format!("max deviation {worst:.4} > 0.01"))?;
    ensure(chi2 < critical, || format!("chi2 {chi2:.3} >= {critical}"))?;
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("max |freq - 1/6| = {worst:.4}, chi2 = {chi2:.2} < {critical}, {elapsed:.2?}"))
}

fn c3_view_expansion() -> Check {
    let mut r = rng::stream(3, 3);
    let keys = SubgroupKey::all();
    let mut expected = 0usize;
    let mut total = 0usize;
    for i in 0..1000u64 {
        let split = match r.random_range(0..10) {
            0 | 1 => Split::Test,
            2 => Split::Val,
            _ => Split::Train,
        };
        let mut rec = subject(&format!("v{i:04}"), keys[(i % 36) as usize], Some(split));
        rec.n_slices = r.random_range(3..=8);
        rec.n_frames = r.random_range(5..=20);
        rec.ed_frame = r.random_range(1..rec.n_frames - 3);
        rec.es_frame = r.random_range(rec.ed_frame + 1..rec.n_frames - 1);
        let dims = VolumeDims {
            n_slices: rec.n_slices,
            n_frames: rec.n_frames,
            width: 8,
            height: 8,
        };
        let vol = phantom::phantom_volume(&PhantomGeometry::random(8, 3, i), dims, rec.ed_frame, rec.es_frame);
        let views = preprocess::views_for_record(&rec, &vol, ChannelPolicy::DuplicateEd, 9)
            .map_err(|e| format!("{}: {e}", rec.subject_id))?;
        let want = if split == Split::Train { 9 } else { 1 };
        ensure(views.len() == want, || format!("{} ({split}) gave {} views", rec.subject_id, views.len()))?;
        if split != Split::Train {
            let c = rec.n_slices / 2;
            let p = &views[0].provenance;
            ensure(p.slice == c && p.temporal_offset == 0, || format!("{} eval view not central", rec.subject_id))?;
        }
        expected += want;
        total += views.len();
    }
    ensure(total == expected, || format!("{total} views, expected {expected}"))?;
    Ok(format!("1000 records -> {total} views"))
}

fn random_spd(dim: usize, r: &mut impl Rng) -> Matrix {
    let x = Matrix::from_fn(dim, |_, _| r.random_range(-1.0..1.0));
    x.mul(&x.transpose())
        .and_then(|xx| xx.scale(1.0 / dim as f64).add(&Matrix::identity(dim).scale(0.05)))
        .expect("square operands")
}

fn gaussian(mean: Vec<f64>, covariance: Matrix) -> GaussianSummary {
    GaussianSummary { mean, covariance, n: 100 }
}

fn c4_frechet_core() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(4, 4);
    let mut worst_self = 0.0f64;
    let mut worst_sym = 0.0f64;
    for _ in 0..100 {
        let dim = r.random_range(2..=26);
        let a = gaussian((0..dim).map(|_| r.random_range(-2.0..2.0)).collect(), random_spd(dim, &mut r));
        let b = gaussian((0..dim).map(|_| r.random_range(-2.0..2.0)).collect(), random_spd(dim, &mut r));
        let d = |x: &GaussianSummary, y: &GaussianSummary| frd::frechet_distance(x, y).map_err(|e| e.to_string());
        worst_self = worst_self.max(d(&a, &a)?.abs()).max(d(&b, &b)?.abs());
        worst_sym = worst_sym.max((d(&a, &b)? - d(&b, &a)?).abs());
    }
    ensure(worst_self <= 1e-9, || format!("self distance {worst_self:e}"))?;
    ensure(worst_sym <= 1e-9, || format!("asymmetry {worst_sym:e}"))?;

    let mut worst_diag = 0.0f64;
    for _ in 0..50 {
        let dim = r.random_range(1..=26);
        let s1: Vec<f64> = (0..dim).map(|_| r.random_range(0.01..5.0)).collect();
        let s2: Vec<f64> = (0..dim).map(|_| r.random_range(0.01..5.0)).collect();
        let m1: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let m2: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let closed: f64 = (0..dim)
            .map(|i| (m1[i] - m2[i]).powi(2) + s1[i] + s2[i] - 2.0 * (s1[i] * s2[i]).sqrt())
            .sum();
        let got = frd::frechet_distance(
            &gaussian(m1, Matrix::from_diag(&s1)),
            &gaussian(m2, Matrix::from_diag(&s2)),
        )
        .map_err(|e| e.to_string())?;
        worst_diag = worst_diag.max((got - closed).abs());
    }
    ensure(worst_diag <= 1e-8, || format!("diagonal closed form off by {worst_diag:e}"))?;

    let mut worst_sqrt = 0.0f64;
    for _ in 0..20 {
        let s = random_spd(26, &mut r);
        let root = linalg::sqrt_psd(&s).map_err(|e| e.to_string())?;
        let diff = root.mul(&root).and_then(|rr| rr.sub(&s)).map_err(|e| e.to_string())?;
        let rel = diff.frobenius() / (1.0 + s.frobenius());
        worst_sqrt = worst_sqrt.max(rel);
    }
    ensure(worst_sqrt <= 1e-8, || format!("sqrt reconstruction {worst_sqrt:e}"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "self {worst_self:.1e}, sym {worst_sym:.1e}, diag {worst_diag:.1e}, sqrt {worst_sqrt:.1e}, {elapsed:.2?}"
    ))
}

fn brute_two_u(scores: &[f64], labels: &[bool]) -> (u64, u64, u64) {
    let (mut two_u, mut p, mut n) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] {
            p += 1;
        } else {
            n += 1;
        }
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            two_u += if si > sj { 2 } else if si == sj { 1 } else { 0 };
        }
    }
    (two_u, p, n)
}

fn c5_metric_oracles() -> Check {
    let mut r = rng::stream(5, 5);
    for inst in 0..500 {
        let len = r.random_range(2..80);
        let mut labels: Vec<bool> = (0..len).map(|_| r.random()).collect();
        labels[0] = true;
        labels[1] = false;
        labels.shuffle(&mut r);
        let levels = r.random_range(2..20);
        let scores: Vec<f64> = (0..len).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let (two_u, p, n) = brute_two_u(&scores, &labels);
        let want = two_u as f64 / (2 * p * n) as f64;
        let got = fairmetrics::auroc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("instance {inst}: auroc {got} vs brute force {want}"))?;
    }

    // TP 3, FN 1, TN 4, FP 2 at threshold 0.5
    let scores = [0.9, 0.8, 0.5, 0.2, 0.1, 0.3, 0.4, 0.45, 0.7, 0.6];
    let labels = [true, true, true, true, false, false, false, false, false, false];
    let c = Confusion::at(&scores, &labels, 0.5);
    ensure((c.tp, c.fn_, c.tn, c.fp) == (3, 1, 4, 2), || format!("confusion {c:?}"))?;
    ensure(c.tpr() == Some(0.75), || format!("tpr {:?}", c.tpr()))?;
    ensure(c.tnr() == Some(4.0 / 6.0), || format!("tnr {:?}", c.tnr()))?;
    let b = fairmetrics::bacc(&scores, &labels, 0.5).map_err(|e| e.to_string())?;
    ensure(b == 17.0 / 24.0, || format!("bacc {b}"))?;
    let one = Confusion::at(&[0.2, 0.7], &[true, false], 0.5);
    ensure(one.tpr() == Some(0.0) && one.tnr() == Some(0.0), || "all-wrong fixture".into())?;

    let female = SubgroupKey::all()[0];
    let male = SubgroupKey::all()[18];
    ensure(female.sex == Sex::Female && male.sex == Sex::Male, || "fixture keys".into())?;
    let mut joined = Vec::new();
    for i in 0..10 {
        joined.push(Joined { score: if i < 9 { 0.9 } else { 0.1 }, label: true, key: female });
        joined.push(Joined { score: if i < 6 { 0.9 } else { 0.1 }, label: true, key: male });
        joined.push(Joined { score: 0.1, label: false, key: female });
        joined.push(Joined { score: 0.1, label: false, key: male });
    }
    let rates = fairmetrics::group_rates(&joined, Grouping::Attribute(Attribute::Sex), 0.5);
    let eod = fairmetrics::eod_gap(&rates).map_err(|e| e.to_string())?;
    ensure(eod == 0.30, || format!("EOD {eod}"))?;
    Ok("500 AUROC instances exact, confusion fixture exact, EOD = 0.30".into())
}

fn mock_features(side: usize, category: u8, rep: u64, n: usize, settings: &ExtractionSettings) -> Result<Vec<Vec<f64>>, String> {
    (0..n as u64)
        .map(|i| {
            let idx = (u64::from(category) << 40) | (rep << 20) | i;
            let mask = PhantomGeometry::random(side, 6, idx).mask(side, side);
            let gray = genbridge::mock_render(&mask, category, rng::derived_seed(66, idx));
            let img = Image2D::new(side, side, gray.iter().map(|&g| f64::from(g)).collect())
                .map_err(|e| e.to_string())?;
            let stacked = StackedImage::new(
                [img.clone(), img.clone(), img],
                Provenance {
                    subject_id: format!("m{idx}"),
                    slice: 0,
                    ed_frame: 0,
                    es_frame: 1,
                    temporal_offset: 0,
                },
            )
            .map_err(|e| e.to_string())?;
            radiomics::extract_features(&stacked, &mask, settings)
                .map(|(v, _)| v.values)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn c6_frd_trend() -> Check {
    let start = Instant::now();
    let settings = ExtractionSettings::default();
    let (lo, hi) = (1u8, 3u8);
    let outcomes: Vec<Result<(f64, f64, f64), String>> = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let a = mock_features(64, lo, rep, 200, &settings)?;
            let b = mock_features(64, hi, rep, 200, &settings)?;
            let mut pooled = FeatureTable::new(radiomics::canonical_names());
            for (i, row) in a.iter().chain(&b).enumerate() {
                pooled.rows.push((format!("r{i}"), row.clone()));
            }
            let st = Standardizer::fit(&pooled).map_err(|e| e.to_string())?;
            let a: Vec<Vec<f64>> = a.iter().map(|r| st.apply_row(r)).collect();
            let b: Vec<Vec<f64>> = b.iter().map(|r| st.apply_row(r)).collect();
            let intra_a = frd::intra_group_frd(&a, rep, 0).map_err(|e| e.to_string())?;
            let intra_b = frd::intra_group_frd(&b, rep, 1).map_err(|e| e.to_string())?;
            let cross = frd::frechet_distance(
                &frd::fit_gaussian_owned(&a).map_err(|e| e.to_string())?,
                &frd::fit_gaussian_owned(&b).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            Ok((intra_a, intra_b, cross))
        })
        .collect();
    let mut wins = 0;
    let mut sums = (0.0, 0.0);
    for o in outcomes {
        let (ia, ib, cross) = o?;
        if ia < cross && ib < cross {
            wins += 1;
        }
        sums.0 += ia.max(ib);
        sums.1 += cross;
    }
    let elapsed = start.elapsed();
    ensure(wins >= 95, || format!("intra < cross in {wins}/100 repetitions"))?;
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "intra < cross in {wins}/100 (mean max intra {:.2}, mean cross {:.2}), {elapsed:.2?}",
        sums.0 / 100.0,
        sums.1 / 100.0
    ))
}

fn c7_loop_closure() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let keys = imbalanced_keys(500, 7);
    let m = write_cohort(&d.join("cohort"), cohort_records(&keys, false), 16, 7);
    let p = |name: &str| d.join(name);
    ok(&["audit", "--manifest", s(&m), "--out", s(&p("audit.json"))]);
    ok(&["plan", "--manifest", s(&m), "--out", s(&p("plan.json")), "--strategy", "equalize", "--pool", "all"]);
    ok(&["gen-jobs", "--plan", s(&p("plan.json")), "--manifest", s(&m), "--out", s(&p("jobs.jsonl"))]);
    ok(&["mock-gen", "--jobs", s(&p("jobs.jsonl")), "--out", s(&p("gen"))]);
    ok(&["ingest", "--jobs", s(&p("jobs.jsonl")), "--images", s(&p("gen")), "--manifest", s(&m), "--out", s(&p("synth.csv"))]);
    ok(&["mix", "--manifest", s(&m), "--synthetic", s(&p("synth.csv")), "--all", "--pool", "all", "--out", s(&p("combined.csv"))]);
    ok(&["weights", "--manifest", s(&p("combined.csv")), "--mode", "SSW", "--pool", "all", "--out", s(&p("w.csv"))]);

    let plan = DebiasPlan::from_json_str(&std::fs::read_to_string(p("plan.json")).unwrap()).map_err(|e| e.to_string())?;
    let combined = fairaug_core::manifest::load_manifest(&p("combined.csv")).map_err(|e| e.to_string())?;
    let counts = stratify::stratification_report(&combined).counts;
    ensure(counts == plan.target_per_group, || format!("combined counts {counts:?} vs targets {:?}", plan.target_per_group))?;
    let synthetic = combined.records.iter().filter(|r| r.origin == Origin::Synthetic).count();
    ensure(synthetic == plan.total_synthetic() && synthetic > 0, || format!("{synthetic} synthetic records"))?;

    let weights = std::fs::read_to_string(p("w.csv")).unwrap();
    let values: Vec<f64> = weights.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let first = values[0];
    ensure(values.len() == combined.len(), || "weight rows".into())?;
    ensure(values.iter().all(|w| (w - first).abs() <= 1e-12), || "SSW weights not uniform".into())?;
    let groups = counts.len();
    Ok(format!("{} real + {synthetic} synthetic = {} records, {groups} groups of {}", keys.len(), combined.len(), combined.len() / groups))
}

fn c8_mixing() -> Check {
    let s_count = stratify::synthetic_count_for_fraction(600, 0.33);
    ensure(s_count == 296, || format!("s = {s_count}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let keys = SubgroupKey::all();
    let real: Vec<SubjectRecord> = (0..600)
        .map(|i| {
            let mut r = subject(&format!("real{i:03}"), keys[i % 36], Some(Split::Train));
            r.image_path = format!("img/{i}");
            r.mask_path = format!("mask/{i}");
            r
        })
        .collect();
    let synth: Vec<SubjectRecord> = (0..1200)
        .map(|i| {
            let mut r = subject(&format!("syn{i:04}"), keys[i % 36], Some(Split::Train));
            r.image_path = format!("gen/{i}.png");
            r.mask_path = format!("mask/{}", i % 600);
            r.origin = Origin::Synthetic;
            r.source_job_id = Some(format!("syn{i:04}"));
            r
        })
        .collect();
    let (combined, summary) = genbridge::mix_datasets(
        &DatasetManifest::new(real.clone()),
        &synth.iter().cloned().map(SyntheticRecord).collect::<Vec<_>>(),
        MixAmount::Fraction(0.33),
        42,
    )
    .map_err(|e| e.to_string())?;
    ensure(summary.synthetic == 296 && combined.len() == 896, || format!("{summary:?}"))?;
    ensure((summary.realized_fraction - 0.33).abs() <= 1.0 / 896.0, || format!("realized {}", summary.realized_fraction))?;

    let rp = dir.path().join("real.csv");
    let sp = dir.path().join("synth.csv");
    DatasetManifest::new(real).save(&rp).unwrap();
    DatasetManifest::new(synth).save(&sp).unwrap();
    let out_dir = dir.path().join("sweep");
    ok(&["mix", "--manifest", s(&rp), "--synthetic", s(&sp), "--sweep", "0,0.2,0.33,0.5", "--out-dir", s(&out_dir)]);
    let mut realized = Vec::new();
    for f in [0.0, 0.2, 0.33, 0.5] {
        let path = out_dir.join(format!("mix_f{f}.csv"));
        let m = fairaug_core::manifest::load_manifest(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let syn = m.records.iter().filter(|r| r.origin == Origin::Synthetic).count();
        let want = stratify::synthetic_count_for_fraction(600, f);
        ensure(syn == want && m.len() == 600 + want, || format!("f={f}: {syn} synthetic, want {want}"))?;
        let rf = syn as f64 / m.len() as f64;
        ensure((rf - f).abs() <= 1.0 / m.len() as f64, || format!("f={f}: realized {rf}"))?;
        realized.push(format!("{f}->{rf:.4}"));
    }
    Ok(format!("R=600 f=0.33 -> s=296; sweep {}", realized.join(", ")))
}

fn c9_prompts() -> Check {
    let key = |age_bin, diagnosis| SubgroupKey { sex: Sex::Female, age_bin, bmi_bin: BmiBin::From25To30, diagnosis };
    let mut hf = subject("p1", key(AgeBin::Over70, Diagnosis::HeartFailure), None);
    hf.age = 74;
    hf.bmi = 27.3;
    let mut healthy = subject("p2", key(AgeBin::From60To70, Diagnosis::Healthy), None);
    healthy.age = 63;
    healthy.bmi = 26.0;
    let opts = PromptOptions::default();
    let a = genbridge::assemble_prompt(&hf, &opts);
    let b = genbridge::assemble_prompt(&healthy, &opts);
    ensure(a == "Female, age in 70s, overweight BMI, with heart failure", || format!("got `{a}`"))?;
    ensure(b == "Female, age in 60s, overweight BMI", || format!("got `{b}`"))?;
    Ok("both caption strings reproduced".into())
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}

fn run_suite(d: &Path, m: &Path, threads: &str) -> Result<(), String> {
    let p = |name: &str| d.join(name);
    let steps: Vec<Vec<String>> = [
        vec!["split", "--manifest", s(m), "--out", s(&p("split.csv")), "--assignment-out", s(&p("assign.csv"))],
        vec!["audit", "--manifest", s(&p("split.csv")), "--out", s(&p("audit.json")), "--include-absent"],
        vec!["weights", "--manifest", s(&p("split.csv")), "--out", s(&p("w.csv")), "--sample", "200", "--sample-out", s(&p("sample.csv"))],
        vec!["plan", "--manifest", s(&p("split.csv")), "--out", s(&p("plan.json")), "--strategy", "additive:0.5"],
        vec!["gen-jobs", "--plan", s(&p("plan.json")), "--manifest", s(&p("split.csv")), "--out", s(&p("jobs.jsonl"))],
        vec!["mock-gen", "--jobs", s(&p("jobs.jsonl")), "--out", s(&p("gen")), "--size", "32"],
        vec!["ingest", "--jobs", s(&p("jobs.jsonl")), "--images", s(&p("gen")), "--manifest", s(&p("split.csv")), "--out", s(&p("synth.csv")), "--size", "32", "--report", s(&p("ingest.json"))],
        vec!["mix", "--manifest", s(&p("split.csv")), "--synthetic", s(&p("synth.csv")), "--fraction", "0.2", "--out", s(&p("mix.csv"))],
        vec!["mix", "--manifest", s(&p("split.csv")), "--synthetic", s(&p("synth.csv")), "--sweep", "0,0.2", "--out-dir", s(&p("sweep"))],
        vec!["preprocess", "--manifest", s(&p("split.csv")), "--out", s(&p("views")), "--size", "32"],
        vec!["preprocess", "--manifest", s(&p("synth.csv")), "--out", s(&p("synth_views")), "--size", "32"],
        vec!["features", "--views", s(&p("views/views.csv")), "--out", s(&p("feat.csv"))],
        vec!["features", "--views", s(&p("synth_views/views.csv")), "--out", s(&p("feat_synth.csv"))],
        vec!["frd", "--features", s(&p("feat.csv")), "--features-synth", s(&p("feat_synth.csv")), "--manifest", s(&p("split.csv")), s(&p("synth.csv")), "--group-by", "sex", "--out", s(&p("frd.json"))],
        vec!["evaluate", "--predictions", s(&p("pred.csv")), "--manifest", s(&p("split.csv")), "--out", s(&p("eval.json")), "--resamples", "200"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in steps {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_fairaug"))
            .args(&step)
            .env("FAIRAUG_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("{} failed: {}", step[0], String::from_utf8_lossy(&out.stderr))
        })?;
    }
    Ok(())
}

fn c10_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let keys = imbalanced_keys(60, 10);
    let m = write_cohort(&d.join("cohort"), cohort_records(&keys, false), 24, 10);
    let mut pred = String::from("subject_id,score,label\n");
    let mut r = rng::stream(10, 10);
    for (i, k) in keys.iter().enumerate() {
        let hf = k.diagnosis == Diagnosis::HeartFailure;
        let score: f64 = (r.random::<f64>() + if hf { 0.4 } else { 0.0 }).min(1.0);
        pred.push_str(&format!("sub{i:04},{score:.4},{}\n", hf as u8));
    }
    std::fs::write(d.join("pred.csv"), pred).unwrap();

    run_suite(d, &m, "1")?;
    let first = hash_tree(d);
    run_suite(d, &m, "4")?;
    let second = hash_tree(d);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure(first.len() == second.len() && differing.is_empty(), || {
        format!("{} files differ, e.g. {:?}", differing.len(), differing.iter().take(3).collect::<Vec<_>>())
    })?;
    Ok(format!("{} files byte-identical across reruns with 1 and 4 threads", first.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("1 subgroup machinery", c1_subgroups),
        ("2 SSW sampling", c2_ssw_sampling),
        ("3 nine-fold expansion", c3_view_expansion),
        ("4 Frechet numeric core", c4_frechet_core),
        ("5 metric oracles", c5_metric_oracles),
        ("6 FRD trend", c6_frd_trend),
        ("7 loop closure", c7_loop_closure),
        ("8 mixing arithmetic", c8_mixing),
        ("9 prompt fixtures", c9_prompts),
        ("10 determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    for (name, check) in criteria {
        let line = match check() {
            Ok(detail) => format!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed.push(name);
                format!("FAIL criterion {name}: {why}")
            }
        };
        // written past the test harness capture so the lines always show
        writeln!(stdout.lock(), "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

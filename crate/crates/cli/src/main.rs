//! `fairaug`: command-line front end for the fairaug pipeline.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use fairaug_core::DEFAULT_SEED;

#[derive(Debug, Parser)]
#[command(name = "fairaug", version, about = "Subgroup audit, synthetic augmentation and fairness evaluation for cardiac MRI datasets")]
pub struct Cli {
    /// Print progress notes to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Suppress warnings on stderr; errors are still reported.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct SeedArg {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count subjects per subgroup and per attribute.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
        /// List all 36 subgroups, including empty ones.
        #[arg(long)]
        include_absent: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Stratified train/val/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest with the split column filled in.
        #[arg(long)]
        out: PathBuf,
        /// Also write the bare `subject_id,split` assignment.
        #[arg(long)]
        assignment_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        /// Validation share of the non-test part.
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Per-subject sampling weights (SW or SSW).
    Weights {
        #[arg(long)]
        manifest: PathBuf,
        /// Weights CSV `subject_id,weight`.
        #[arg(long)]
        out: PathBuf,
        /// SW (label) or SSW (label and sensitive subgroup).
        #[arg(long, default_value = "SSW")]
        mode: String,
        /// Restrict to one split: train, val, test or all.
        #[arg(long, default_value = "train")]
        pool: String,
        /// Also draw this many subject ids and write them to --sample-out.
        #[arg(long, requires = "sample_out")]
        sample: Option<usize>,
        #[arg(long)]
        sample_out: Option<PathBuf>,
        /// Draw without replacement.
        #[arg(long)]
        no_replacement: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Decide how many synthetic images each subgroup needs.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        /// Plan JSON.
        #[arg(long)]
        out: PathBuf,
        /// equalize, fraction:<f> or additive:<r>.
        #[arg(long, default_value = "equalize")]
        strategy: String,
        /// Real pool the plan is built for: train or all.
        #[arg(long, default_value = "train")]
        pool: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write the generator job manifest (JSONL) for a plan.
    GenJobs {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Append ", no heart failure" to prompts of healthy donors.
        #[arg(long)]
        healthy_clause: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Deterministic stand-in for the image generator.
    MockGen {
        #[arg(long)]
        jobs: PathBuf,
        /// Output directory for generated PNGs.
        #[arg(long)]
        out: PathBuf,
        /// Upscale outputs to this square size.
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Reconcile generated images with their jobs into a synthetic manifest.
    Ingest {
        #[arg(long)]
        jobs: PathBuf,
        /// Directory holding the generated images.
        #[arg(long)]
        images: PathBuf,
        /// Manifest holding the donors.
        #[arg(long)]
        manifest: PathBuf,
        /// Synthetic manifest CSV.
        #[arg(long)]
        out: PathBuf,
        /// Expected square image size.
        #[arg(long)]
        size: Option<usize>,
        /// Reconciliation report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Combine real and synthetic manifests.
    Mix {
        /// Real manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Synthetic manifest from `ingest`.
        #[arg(long)]
        synthetic: PathBuf,
        /// Combined manifest CSV (single-point modes).
        #[arg(long, required_unless_present = "sweep")]
        out: Option<PathBuf>,
        /// Synthetic share of the combined set.
        #[arg(long, conflicts_with_all = ["all", "sweep"])]
        fraction: Option<f64>,
        /// Take every synthetic record.
        #[arg(long, conflicts_with = "sweep")]
        all: bool,
        /// Comma-separated fractions; one manifest per point in --out-dir.
        #[arg(long, value_delimiter = ',', requires = "out_dir")]
        sweep: Option<Vec<f64>>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Real pool: train or all.
        #[arg(long, default_value = "train")]
        pool: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Expand, normalize and resize images into views.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; receives the views and `views.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Square output size; 0 keeps the native size.
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Views per training record: 9 or 1.
        #[arg(long, default_value_t = 9)]
        train_views: usize,
        /// Third channel: duplicate-ed or mean-third.
        #[arg(long, default_value = "duplicate-ed")]
        channel_policy: String,
        /// minmax or percentile:<lo>,<hi>.
        #[arg(long, default_value = "percentile:1,99")]
        normalization: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Radiomic feature table from a view index.
    Features {
        /// `views.csv` written by `preprocess`.
        #[arg(long)]
        views: PathBuf,
        /// Feature CSV.
        #[arg(long)]
        out: PathBuf,
        /// Grey levels for texture features.
        #[arg(long, default_value_t = 32)]
        levels: usize,
        /// Append ES-frame intensity features.
        #[arg(long)]
        include_es: bool,
        /// One row per view instead of the central view per subject.
        #[arg(long)]
        all_views: bool,
        /// minmax or percentile:<lo>,<hi>.
        #[arg(long, default_value = "percentile:1,99")]
        normalization: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fréchet Radiomics Distance between groups.
    Frd {
        /// Real feature table; also the standardization reference.
        #[arg(long)]
        features: PathBuf,
        /// Synthetic feature table; compares real and synthetic per group.
        #[arg(long)]
        features_synth: Option<PathBuf>,
        /// Manifests that cover every subject in the tables.
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
        /// sex, age, bmi, diagnosis or subgroup.
        #[arg(long, default_value = "subgroup")]
        group_by: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Fairness report from classifier predictions.
    Evaluate {
        /// CSV `subject_id,score,label`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5, conflicts_with = "youden_from")]
        threshold: f64,
        /// Choose the threshold by Youden's J on these validation predictions.
        #[arg(long)]
        youden_from: Option<PathBuf>,
        /// Bootstrap resamples for confidence intervals.
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FAIRAUG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("FAIRAUG_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        output::report_failure(&output::Failure::validation(msg));
        return ExitCode::from(1);
    }
    let log = output::Log::new(cli.verbose, cli.quiet);
    match commands::run(cli.command, &log) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            output::report_failure(&failure);
            ExitCode::from(failure.exit_code())
        }
    }
}

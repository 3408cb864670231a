use serde_json::{json, Value};
use std::path::Path;

use fairaug_core::fairmetrics::MetricsError;
use fairaug_core::fingerprint::sha256_hex;
use fairaug_core::{Diagnostic, Error, ErrorCategory};

pub struct Log {
    verbose: u8,
    quiet: bool,
}

impl Log {
    pub fn new(verbose: u8, quiet: bool) -> Self {
        Self { verbose, quiet }
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 && !self.quiet {
            eprintln!("note: {}", msg.as_ref());
        }
    }

    /// Warnings go out as one human line plus one JSON line.
    pub fn diagnostic(&self, d: &Diagnostic) {
        if self.quiet {
            return;
        }
        eprintln!("warning: {d}");
        eprintln!("{}", json!({ "diagnostic": d }));
    }

    pub fn diagnostics<'a>(&self, ds: impl IntoIterator<Item = &'a Diagnostic>) {
        for d in ds {
            self.diagnostic(d);
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub category: ErrorCategory,
    pub code: String,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            category: ErrorCategory::Validation,
            code: "InvalidArgument".into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self {
            category: ErrorCategory::Io,
            code: "Io".into(),
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category {
            ErrorCategory::Validation => 1,
            ErrorCategory::Io => 2,
            ErrorCategory::Internal => 3,
        }
    }
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Metrics(MetricsError::JoinFailure(_)) => "JoinFailure",
        Error::Manifest(_) => "Manifest",
        Error::Stratify(_) => "Stratify",
        Error::Preprocess(_) => "Preprocess",
        Error::Radiomics(_) => "Radiomics",
        Error::Linalg(_) => "Linalg",
        Error::Frd(_) => "Frd",
        Error::Metrics(_) => "Metrics",
        Error::Gen(_) => "Generation",
        Error::ImageIo(_) | Error::Io { .. } => "Io",
        Error::Format { .. } => "Format",
        Error::Internal(_) => "Internal",
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut message = e.to_string();
        if let Error::Manifest(m) = &e {
            for row in m.row_errors().iter().skip(1) {
                message.push_str(&format!("\n  {row}"));
            }
        }
        Self {
            category: e.category(),
            code: error_code(&e).into(),
            message,
        }
    }
}

macro_rules! via_error {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        })*
    };
}

via_error!(
    fairaug_core::manifest::ManifestError,
    fairaug_core::stratify::StratifyError,
    fairaug_core::preprocess::PreprocessError,
    fairaug_core::radiomics::RadiomicsError,
    fairaug_core::frd::FrdError,
    MetricsError,
    fairaug_core::genbridge::GenError,
    fairaug_core::imageio::ImageIoError
);

pub fn report_failure(f: &Failure) {
    let category = match f.category {
        ErrorCategory::Validation => "validation",
        ErrorCategory::Io => "io",
        ErrorCategory::Internal => "internal",
    };
    eprintln!("error: {}", f.message);
    eprintln!(
        "{}",
        json!({ "error": { "category": category, "code": f.code, "message": f.message, "exit_code": f.exit_code() } })
    );
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn file_digest(path: &Path) -> Result<String, Failure> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| Failure::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    write_file(path, serde_json::to_string_pretty(value).expect("JSON value serializes") + "\n")
}

/// Tabular outputs get their fingerprint in `<file>.meta.json`.
pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_meta(path: &Path, fingerprint: &Value) -> Result<(), Failure> {
    write_json(&meta_path(path), &json!({ "fingerprint": fingerprint }))
}

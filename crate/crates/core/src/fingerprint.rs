//! Settings fingerprints: a SHA-256 over canonical JSON of everything that
//! determines an output (tool version, seed, flags).

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Compact JSON with object keys in lexicographic order.
pub fn canonical_json(value: &Value) -> String {
    // serde_json's default map is ordered, so plain serialization is canonical
    serde_json::to_string(value).expect("JSON value serializes")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint block embedded in every report.
pub fn fingerprint(command: &str, seed: u64, settings: Value) -> Value {
    let payload = json!({
        "tool": "fairaug",
        "version": crate::VERSION,
        "command": command,
        "seed": seed,
        "settings": settings,
    });
    let digest = sha256_hex(canonical_json(&payload).as_bytes());
    json!({
        "version": crate::VERSION,
        "command": command,
        "seed": seed,
        "settings": payload["settings"],
        "sha256": digest,
    })
}

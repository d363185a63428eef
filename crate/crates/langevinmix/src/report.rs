//! Machine-readable run reports.
//!
//! Every CLI invocation that computes something emits one
//! [`ExperimentReport`] as JSON. Reports are *reproducible artifacts*: two
//! runs with the same config, seed, and thread-count-independent pipeline
//! produce byte-identical [`ExperimentReport::canonical_bytes`]. Wall-clock
//! timing still matters for the runtime budgets, so it lives in a `meta`
//! block that the canonical serialization excludes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::theory::TheoryConstants;

/// Bumped whenever a field is added, removed, or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// Volatile run facts, excluded from the canonical bytes and the digest:
/// how long the run took, when, and on how many workers — execution
/// circumstances that must never influence a result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub wall_clock_seconds: f64,
    pub finished_at_unix: u64,
    pub threads: usize,
}

/// One named pass/fail gate with the observed value and its threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckLine {
    /// The one-line console rendering: `[PASS] name: detail`.
    pub fn render(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// The result of one experiment pipeline.
///
/// `estimates` holds measured quantities, `bounds` holds the certificate
/// values they are compared against, and `checks` holds the gates; `pass` is
/// the conjunction of all gates. Non-finite floats serialize as JSON `null`
/// (an honest rendering for overflowed linear-scale constants; the log-scale
/// fields next to them stay finite).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    /// SHA-256 of the raw config file bytes.
    pub config_digest: String,
    pub master_seed: u64,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<TheoryConstants>,
    pub estimates: BTreeMap<String, serde_json::Value>,
    pub bounds: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<CheckLine>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<RunMeta>,
}

impl ExperimentReport {
    pub fn new(
        experiment: impl Into<String>,
        config_digest: impl Into<String>,
        master_seed: u64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            config_digest: config_digest.into(),
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            constants: None,
            estimates: BTreeMap::new(),
            bounds: BTreeMap::new(),
            checks: Vec::new(),
            pass: true,
            meta: None,
        }
    }

    pub fn estimate(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.estimates.insert(
            key.into(),
            serde_json::to_value(value).expect("estimate values must serialize"),
        );
    }

    pub fn bound(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.bounds
            .insert(key.into(), serde_json::to_value(value).expect("bound values must serialize"));
    }

    /// Records a gate and folds it into the overall verdict.
    pub fn check(
        &mut self,
        name: impl Into<String>,
        passed: bool,
        observed: f64,
        threshold: f64,
        detail: impl Into<String>,
    ) {
        self.pass &= passed;
        self.checks.push(CheckLine {
            name: name.into(),
            passed,
            observed,
            threshold,
            detail: detail.into(),
        });
    }

    /// Deterministic serialization: the `meta` block is dropped, everything
    /// else is emitted in declaration / BTreeMap order. Two runs of the same
    /// pipeline at the same seed produce identical bytes regardless of
    /// thread count or wall-clock time.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut stripped = self.clone();
        stripped.meta = None;
        let mut bytes =
            serde_json::to_vec_pretty(&stripped).expect("report serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }

    /// SHA-256 hex digest of the canonical bytes.
    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Full serialization including `meta`, for the report file on disk.
    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// SHA-256 hex digest of a config file's raw bytes, pinning the exact input
/// a report was produced from.
pub fn config_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

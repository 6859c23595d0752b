//! File formats: plan and dataset CSVs, JSON documents and the run manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values and equal inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::LabeledSample;
use crate::model::{InvestmentPlan, PlanningInstance};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn format_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Format { what: what.into(), message: e.to_string() }
}

/// Column names of the flattened plan vector, `candidate@year`.
pub fn plan_columns(instance: &PlanningInstance) -> Vec<String> {
    let mut cols = Vec::with_capacity(instance.num_vars());
    for c in instance.candidates() {
        for y in instance.periods() {
            cols.push(format!("{}@{}", c.id, y));
        }
    }
    cols
}

fn parse_f64(what: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| format_err(what, format!("bad number {s:?}: {e}")))
}

fn check_header(what: &str, got: &csv::StringRecord, leading: &[&str], cols: &[String]) -> Result<()> {
    let want: Vec<&str> = leading.iter().copied().chain(cols.iter().map(String::as_str)).collect();
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(format_err(what, format!("header {got:?} does not match instance columns")));
    }
    Ok(())
}

/// `plan_id,<columns>` with one plan per row.
pub fn plans_to_csv(instance: &PlanningInstance, plans: &[InvestmentPlan]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["plan_id".to_string()];
    header.extend(plan_columns(instance));
    w.write_record(&header).map_err(|e| format_err("plans", e))?;
    for (k, p) in plans.iter().enumerate() {
        if p.len() != instance.num_vars() {
            return Err(Error::Dimension { expected: instance.num_vars(), got: p.len() });
        }
        let mut rec = vec![k.to_string()];
        rec.extend(p.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| format_err("plans", e))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err("plans", e))?;
    String::from_utf8(bytes).map_err(|e| format_err("plans", e))
}

pub fn plans_from_csv(instance: &PlanningInstance, text: &str) -> Result<Vec<InvestmentPlan>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    check_header("plans", r.headers().map_err(|e| format_err("plans", e))?, &["plan_id"], &plan_columns(instance))?;
    let mut plans = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err("plans", e))?;
        let x = rec.iter().skip(1).map(|s| parse_f64("plans", s)).collect::<Result<Vec<_>>>()?;
        plans.push(InvestmentPlan::new(x));
    }
    Ok(plans)
}

/// A labeled dataset row: the plan and its expected-cost label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub sample_id: u64,
    pub label: f64,
    pub plan: InvestmentPlan,
}

impl From<&LabeledSample> for LabelRow {
    fn from(s: &LabeledSample) -> Self {
        LabelRow { sample_id: s.sample_id, label: s.label, plan: s.plan.clone() }
    }
}

/// `sample_id,label,<columns>`.
pub fn labels_to_csv(instance: &PlanningInstance, rows: &[LabelRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend(plan_columns(instance));
    w.write_record(&header).map_err(|e| format_err("labels", e))?;
    for row in rows {
        if row.plan.len() != instance.num_vars() {
            return Err(Error::Dimension { expected: instance.num_vars(), got: row.plan.len() });
        }
        let mut rec = vec![row.sample_id.to_string(), row.label.to_string()];
        rec.extend(row.plan.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| format_err("labels", e))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err("labels", e))?;
    String::from_utf8(bytes).map_err(|e| format_err("labels", e))
}

pub fn labels_from_csv(instance: &PlanningInstance, text: &str) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    check_header("labels", r.headers().map_err(|e| format_err("labels", e))?, &["sample_id", "label"], &plan_columns(instance))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err("labels", e))?;
        let sample_id = rec[0].trim().parse::<u64>().map_err(|e| format_err("labels", e))?;
        let label = parse_f64("labels", &rec[1])?;
        let x = rec.iter().skip(2).map(|s| parse_f64("labels", s)).collect::<Result<Vec<_>>>()?;
        out.push(LabelRow { sample_id, label, plan: InvestmentPlan::new(x) });
    }
    Ok(out)
}

/// Per-period labeling statistics, one row per (sample, period). Timings are
/// left out so the file is reproducible.
pub fn label_periods_csv(samples: &[LabeledSample]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sample_id", "year", "scenarios", "horizon", "horizon_counter", "step1_iterations", "mean", "variance", "cv",
        "half_width", "step2", "capped",
    ])
    .map_err(|e| format_err("label periods", e))?;
    for s in samples {
        for p in &s.periods {
            w.write_record([
                s.sample_id.to_string(),
                p.year.to_string(),
                p.scenarios.to_string(),
                p.horizon.to_string(),
                p.horizon_counter.to_string(),
                p.step1_iterations.to_string(),
                p.mean.to_string(),
                p.variance.to_string(),
                p.cv.to_string(),
                p.half_width.to_string(),
                p.step2.to_string(),
                p.capped.to_string(),
            ])
            .map_err(|e| format_err("label periods", e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| format_err("label periods", e))?;
    String::from_utf8(bytes).map_err(|e| format_err("label periods", e))
}

pub fn to_json<T: Serialize>(what: &str, value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| format_err(what, e))
}

pub fn from_json<T: DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| format_err(what, e))
}

pub fn read_json<T: DeserializeOwned>(what: &str, path: &Path) -> Result<T> {
    from_json(what, &fs::read_to_string(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Content depends only on the configuration, not on timing.
    pub reproducible: bool,
}

/// Index of a run directory: configuration, seeds, stage timings and a hash
/// of every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Full configuration with every default filled in.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(config: serde_json::Value) -> Self {
        Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            timings: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    /// Hashes of the reproducible files, keyed by path.
    pub fn reproducible_hashes(&self) -> BTreeMap<&str, &str> {
        self.files.iter().filter(|f| f.reproducible).map(|f| (f.path.as_str(), f.sha256.as_str())).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = read_json("manifest", &dir.join(MANIFEST_FILE))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(format_err("manifest", format!("unsupported format version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), to_json("manifest", self)?)?;
        Ok(())
    }

    /// Paths whose content no longer matches the recorded hash (missing
    /// files included).
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| fs::read(dir.join(&f.path)).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true))
            .map(|f| f.path.clone())
            .collect()
    }
}

/// Writes files into a run directory and records each one in a manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    pub manifest: Manifest,
}

impl ArtifactWriter {
    pub fn create(root: &Path, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter { root: root.to_path_buf(), manifest: Manifest::new(config) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, content: &[u8], reproducible: bool) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        let entry = FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(content),
            bytes: content.len() as u64,
            reproducible,
        };
        match self.manifest.files.iter_mut().find(|f| f.path == rel) {
            Some(f) => *f = entry,
            None => self.manifest.files.push(entry),
        }
        // Keep the manifest current so a failed later stage leaves a usable
        // record of what was produced.
        self.manifest.save(&self.root)?;
        Ok(path)
    }

    pub fn finish(self) -> Result<Manifest> {
        self.manifest.save(&self.root)?;
        Ok(self.manifest)
    }
}

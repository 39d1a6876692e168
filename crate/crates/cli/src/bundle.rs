//! Report assembly and the on-disk run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use jumplab::io::{real_map, real_opt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::runner::Outcome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub constant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(with = "real_opt")]
    pub value: Option<f64>,
    pub passed: bool,
}

/// Contents of `report.json`. Holds nothing time- or host-dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub run: String,
    pub model_hash: String,
    pub config: Value,
    pub results: BTreeMap<String, Value>,
    #[serde(with = "real_map")]
    pub constants: BTreeMap<String, f64>,
    pub headlines: BTreeMap<String, bool>,
    pub thresholds: Vec<ThresholdResult>,
    /// Every threshold holds.
    pub passed: bool,
    pub headlines_passed: bool,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(cfg: &ExperimentConfig, out: &Outcome) -> Result<Self> {
        let mut thresholds = Vec::new();
        for th in &cfg.thresholds {
            let Some(&v) = out.constants.get(&th.constant) else {
                let known: Vec<&str> = out.constants.keys().map(String::as_str).collect();
                bail!("thresholds: no constant named {:?}; available: {}", th.constant, known.join(", "));
            };
            let passed = th.max.is_none_or(|m| v <= m) && th.min.is_none_or(|m| v >= m);
            thresholds.push(ThresholdResult { constant: th.constant.clone(), max: th.max, min: th.min, value: Some(v), passed });
        }
        let mut results = out.results.clone();
        let model_hash = match results.remove("model_hash") {
            Some(Value::String(h)) => h,
            _ => String::new(),
        };
        Ok(Report {
            experiment: cfg.experiment.to_string(),
            run: cfg.run_name()?,
            model_hash,
            config: serde_json::to_value(cfg)?,
            results,
            constants: out.constants.clone(),
            headlines: out.headlines.clone(),
            passed: thresholds.iter().all(|t| t.passed),
            thresholds,
            headlines_passed: out.headlines.values().all(|ok| *ok),
            warnings: out.warnings.clone(),
        })
    }

    /// Process exit status: 1 when an assertion the config asked for fails.
    pub fn status(&self, assert_headlines: bool) -> i32 {
        if !self.passed || (assert_headlines && !self.headlines_passed) {
            1
        } else {
            0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Serialize)]
struct Metadata {
    started_unix: f64,
    finished_unix: f64,
    wall_seconds: f64,
    workers: usize,
    version: &'static str,
}

fn unix(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).unwrap_or(Duration::ZERO).as_secs_f64()
}

fn file_name(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' }).collect()
}

/// Write `config.resolved`, `report.json`, one CSV per table and `metadata.json`
/// into `<output>/<run>`. The directory appears complete or not at all.
pub fn write_bundle(cfg: &ExperimentConfig, report: &Report, out: &Outcome, started: SystemTime) -> Result<PathBuf> {
    let root = &cfg.output;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let target = root.join(&report.run);
    let tmp = root.join(format!(".{}.tmp-{}", report.run, std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let fill = |dir: &Path| -> Result<()> {
        fs::write(dir.join("config.resolved"), cfg.resolved()?)?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
        for (key, table) in &out.tables {
            table.write_csv(&dir.join(format!("{}.csv", file_name(key))))?;
        }
        let finished = SystemTime::now();
        let meta = Metadata {
            started_unix: unix(started),
            finished_unix: unix(finished),
            wall_seconds: finished.duration_since(started).unwrap_or(Duration::ZERO).as_secs_f64(),
            workers: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION"),
        };
        fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    };
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if target.exists() {
        fs::remove_dir_all(&target).with_context(|| format!("replacing {}", target.display()))?;
    }
    fs::rename(&tmp, &target).with_context(|| format!("moving run into {}", target.display()))?;
    Ok(target)
}

/// Run, assemble the report and write the bundle.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Report, PathBuf)> {
    let started = SystemTime::now();
    let out = crate::runner::run(cfg)?;
    let report = Report::new(cfg, &out)?;
    let dir = write_bundle(cfg, &report, &out, started)?;
    Ok((report, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;
    use jumplab::Threshold;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(Experiment::ConditionsSweep);
        cfg.grid.radii = vec![1.0, 2.0];
        cfg.conditions.checks = vec!["vd".into(), "jump".into()];
        cfg
    }

    #[test]
    fn thresholds_decide_status() {
        let mut cfg = small();
        cfg.thresholds = vec![Threshold { constant: "vd.C_V".into(), max: Some(10.0), min: None }];
        let out = crate::runner::run(&cfg).unwrap();
        let r = Report::new(&cfg, &out).unwrap();
        assert!(r.passed);
        assert_eq!(r.status(false), 0);
        cfg.thresholds[0].max = Some(1.0);
        let r = Report::new(&cfg, &out).unwrap();
        assert_eq!(r.status(false), 1);
        cfg.thresholds[0].constant = "vd.nope".into();
        assert!(Report::new(&cfg, &out).is_err());
    }

    #[test]
    fn bundle_replaces_previous_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.output = dir.path().to_path_buf();
        cfg.name = Some("run".into());
        let (r1, p1) = execute(&cfg).unwrap();
        let first = fs::read(p1.join("report.json")).unwrap();
        let (_, p2) = execute(&cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(first, fs::read(p2.join("report.json")).unwrap());
        assert!(p2.join("vd.csv").exists() && p2.join("metadata.json").exists());
        let back: Report = serde_json::from_slice(&first).unwrap();
        assert_eq!(back, r1);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}

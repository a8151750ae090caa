use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oparc::{BeamWeight, RunReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Collects output files and metrics for the run report.
pub struct Run {
    out_dir: PathBuf,
    report: RunReport,
}

impl Run {
    pub fn new(out_dir: &Path, config_bytes: &[u8]) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let report = RunReport {
            command: std::env::args().skip(1).collect(),
            config_hash: Sha256::digest(config_bytes).iter().map(|b| format!("{b:02x}")).collect(),
            ..RunReport::default()
        };
        Ok(Self { out_dir: out_dir.to_path_buf(), report })
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.report.metrics.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn trace(&mut self, value: impl Serialize) -> Result<()> {
        self.report.traces.push(serde_json::to_value(value)?);
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        write_file(&path, contents)?;
        self.report.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn pattern(&mut self, name: &str, pattern: &[(f64, f64)]) -> Result<()> {
        self.write(name, &pattern_csv(pattern))
    }

    pub fn weights(&mut self, name: &str, w: &BeamWeight) -> Result<()> {
        self.write(name, &weight_csv(w))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Writes `report.json`; it lists itself last.
    pub fn finish(mut self) -> Result<()> {
        let path = self.out_dir.join("report.json");
        self.report.outputs.push(path.display().to_string());
        write_file(&path, &(serde_json::to_string_pretty(&self.report)? + "\n"))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn pattern_csv(pattern: &[(f64, f64)]) -> String {
    let mut s = String::from("theta_deg,level_db\n");
    for (t, l) in pattern {
        writeln!(s, "{t:.6},{l:.6}").unwrap();
    }
    s
}

pub fn weight_csv(w: &BeamWeight) -> String {
    let mut s = String::from("index,re,im\n");
    for (i, c) in w.0.iter().enumerate() {
        writeln!(s, "{i},{:e},{:e}", c.re, c.im).unwrap();
    }
    s
}

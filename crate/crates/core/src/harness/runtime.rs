use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

pub const RUNTIME_FILE: &str = "runtime.json";

/// Wall time per pipeline stage, merged across commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeLog {
    pub seconds: BTreeMap<String, f64>,
    pub formatted: BTreeMap<String, String>,
}

fn hms(seconds: f64) -> String {
    let s = seconds.round() as u64;
    format!("{:02}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60)
}

impl RuntimeLog {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUNTIME_FILE);
        if !path.exists() {
            return Ok(RuntimeLog::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(&path).with_path(&path)?)?)
    }

    pub fn record(&mut self, stage: &str, seconds: f64) {
        self.seconds.insert(stage.to_string(), seconds);
        let total: f64 = self.seconds.iter().filter(|(k, _)| *k != "total").map(|(_, v)| v).sum();
        self.seconds.insert("total".into(), total);
        self.formatted = self.seconds.iter().map(|(k, v)| (k.clone(), hms(*v))).collect();
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_path(dir)?;
        let path = dir.join(RUNTIME_FILE);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(&path, json).with_path(&path)
    }

    /// Loads the log in `dir`, records one stage and writes it back.
    pub fn update(dir: &Path, stage: &str, seconds: f64) -> Result<()> {
        let mut log = RuntimeLog::load(dir)?;
        log.record(stage, seconds);
        log.save(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_merge_and_total() {
        let dir = tempfile::tempdir().unwrap();
        RuntimeLog::update(dir.path(), "evolve_c2e", 3000.0).unwrap();
        RuntimeLog::update(dir.path(), "transform", 29.0).unwrap();
        let log = RuntimeLog::load(dir.path()).unwrap();
        assert_eq!(log.seconds["total"], 3029.0);
        assert_eq!(log.formatted["evolve_c2e"], "00:50:00");
        assert_eq!(log.formatted["total"], "00:50:29");
    }
}

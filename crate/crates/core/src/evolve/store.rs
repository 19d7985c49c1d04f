use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvolveConfig, Mutation};
use crate::error::{Error, IoContext, Result};

/// Header written next to a mutation store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: EvolveConfig,
    pub config_hash: String,
    pub model: String,
    pub pool_size: usize,
    pub num_checkpoints: usize,
    pub trainable_parameters: usize,
    pub total_parameters: usize,
    /// Derived seeds per direction tag.
    pub direction_seeds: Vec<(String, u64)>,
}

impl Provenance {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_path(&tmp)?;
    std::fs::rename(&tmp, path).with_path(path)
}

/// Writes one JSON object per mutation, atomically.
pub fn write_mutations(path: &Path, mutations: &[Mutation]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).with_path(&tmp)?);
        for m in mutations {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n").with_path(&tmp)?;
        }
        w.flush().with_path(&tmp)?;
    }
    std::fs::rename(&tmp, path).with_path(path)
}

pub fn read_mutations(path: &Path) -> Result<Vec<Mutation>> {
    let file = File::open(path).with_path(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_path(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::Direction;

    #[test]
    fn mutation_roundtrip_keeps_empty_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let ms = vec![
            Mutation { instance_id: "a".into(), direction: Direction::C2E, epoch: 0, text: String::new() },
            Mutation { instance_id: "b".into(), direction: Direction::E2C, epoch: 3, text: "x \"y\"\n".into() },
        ];
        write_mutations(&path, &ms).unwrap();
        assert_eq!(read_mutations(&path).unwrap(), ms);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(r#"{"instance_id":"a","direction":"C2E","epoch":0,"text":""}"#));
    }

    #[test]
    fn bad_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"instance_id\":\"a\",\"direction\":\"C2E\",\"epoch\":0,\"text\":\"\"}\nnope\n").unwrap();
        match read_mutations(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}

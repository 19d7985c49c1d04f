use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{ClaimEvidencePair, DatasetName, Label};
use crate::error::{Error, IoContext, Result};

#[derive(Deserialize)]
struct PairLine {
    id: String,
    claim: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// A pair-file record whose evidence may still be missing (FEVER
/// NOT_ENOUGH_INFO claims ship without gold evidence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub claim: String,
    pub evidence: Option<String>,
    pub label: Option<Label>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).with_path(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_path(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<RawRecord> {
    let parsed: PairLine = serde_json::from_str(line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })?;
    let label = match parsed.label.as_deref() {
        None => None,
        Some(s) => Some(s.parse::<Label>().map_err(|_| {
            Error::Validation(format!(
                "{}:{line_no}: unknown label '{s}' (expected SUPPORTS, REFUTES or NOT_ENOUGH_INFO)",
                path.display()
            ))
        })?),
    };
    Ok(RawRecord {
        id: parsed.id,
        claim: parsed.claim,
        evidence: parsed.evidence.filter(|e| !e.trim().is_empty()),
        label,
    })
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate id '{id}'")));
        }
    }
    Ok(())
}

/// Reads a pair file where evidence is allowed to be absent.
pub fn load_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    let records = read_lines(path)?
        .into_iter()
        .map(|(n, line)| parse_line(path, n, &line))
        .collect::<Result<Vec<_>>>()?;
    check_unique(records.iter().map(|r| r.id.as_str()))?;
    Ok(records)
}

/// Reads a JSON-lines pair file. Every record must carry non-empty evidence.
pub fn load_pairs(path: &Path) -> Result<Vec<ClaimEvidencePair>> {
    let mut pairs = Vec::new();
    for (n, line) in read_lines(path)? {
        let raw = parse_line(path, n, &line)?;
        let pair = ClaimEvidencePair {
            id: raw.id,
            claim: raw.claim,
            evidence: raw.evidence.unwrap_or_default(),
            label: raw.label,
        };
        pair.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    check_unique(pairs.iter().map(|p| p.id.as_str()))?;
    Ok(pairs)
}

pub fn load_dataset(path: &Path, name: DatasetName) -> Result<Vec<ClaimEvidencePair>> {
    let pairs = load_pairs(path)?;
    let counts = super::label_histogram(&pairs);
    log::info!(
        "{name}: loaded {} pairs from {} (SUPPORTS {}, REFUTES {}, NOT_ENOUGH_INFO {})",
        pairs.len(),
        path.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[ClaimEvidencePair]) -> Result<()> {
    let file = File::create(path).with_path(path)?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n").with_path(path)?;
    }
    w.flush().with_path(path)
}

/// Fills missing evidence for NOT_ENOUGH_INFO records with evidence drawn
/// uniformly (seeded) from the other records' evidence.
pub fn resolve_evidence(records: Vec<RawRecord>, seed: u64) -> Result<Vec<ClaimEvidencePair>> {
    let donors: Vec<(usize, &str)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.evidence.as_deref().map(|e| (i, e)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filled = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let evidence = match &rec.evidence {
            Some(e) => e.clone(),
            None => {
                if rec.label != Some(Label::NotEnoughInfo) {
                    return Err(Error::Validation(format!(
                        "record '{}' has no evidence but is not NOT_ENOUGH_INFO",
                        rec.id
                    )));
                }
                let candidates: Vec<&str> = donors
                    .iter()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, e)| *e)
                    .collect();
                let chosen = candidates.choose(&mut rng).ok_or_else(|| {
                    Error::Validation("no evidence available to pair NOT_ENOUGH_INFO claims".into())
                })?;
                chosen.to_string()
            }
        };
        filled.push(ClaimEvidencePair::new(
            rec.id.clone(),
            rec.claim.clone(),
            evidence,
            rec.label,
        )?);
    }
    Ok(filled)
}

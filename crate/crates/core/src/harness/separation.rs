use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mann_whitney, mean_std};
use crate::corpus::{ClaimEvidencePair, Label};
use crate::error::{Error, IoContext, Result};
use crate::evolve::Direction;
use crate::features::{FeatureMatrix, ScoreKind};

/// Spread of one score column over one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub direction: Direction,
    pub epoch: usize,
    pub kind: ScoreKind,
    pub label: Label,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// NOT_ENOUGH_INFO against another class at the final checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationTest {
    pub direction: Direction,
    pub epoch: usize,
    pub kind: ScoreKind,
    pub other: Label,
    pub nei_mean: Option<f64>,
    pub other_mean: Option<f64>,
    pub u: Option<f64>,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub final_epoch: usize,
    pub stats: Vec<ClassStats>,
    pub tests: Vec<SeparationTest>,
}

impl SeparationReport {
    pub fn test(&self, direction: Direction, kind: ScoreKind, other: Label) -> Option<&SeparationTest> {
        self.tests
            .iter()
            .find(|t| t.direction == direction && t.kind == kind && t.other == other)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_path(dir)?;
        let path = dir.join("separation.json");
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(&path, json).with_path(&path)?;
        super::plot_separation(self, &dir.join("separation.svg"))
    }
}

/// Per-class mean and spread of the mutation scores (`s_em`, `s_cm`) at
/// every checkpoint, plus Mann-Whitney tests of NOT_ENOUGH_INFO against
/// each other class at the final checkpoint.
pub fn class_separation_report(features: &FeatureMatrix, labeled: &[ClaimEvidencePair]) -> Result<SeparationReport> {
    let mut rows: Vec<(Label, &[f64])> = Vec::with_capacity(labeled.len());
    for p in labeled {
        let row = features
            .row_by_id(&p.id)
            .ok_or_else(|| Error::Inconsistent(format!("no feature row for instance '{}'", p.id)))?;
        rows.push((p.require_label()?, row));
    }
    let final_epoch = features
        .columns()
        .iter()
        .map(|c| c.epoch)
        .max()
        .ok_or_else(|| Error::Validation("feature matrix has no columns".into()))?;
    let values = |col: usize, label: Label| -> Vec<f64> {
        rows.iter().filter(|(l, _)| *l == label).map(|(_, r)| r[col]).collect()
    };

    let mut stats = Vec::new();
    let mut tests = Vec::new();
    for (col, c) in features.columns().iter().enumerate() {
        if c.kind == ScoreKind::ClaimEvidence {
            continue;
        }
        for label in Label::ALL {
            let v = values(col, label);
            if v.is_empty() {
                continue;
            }
            let (mean, std, _) = mean_std(&v)?;
            stats.push(ClassStats {
                direction: c.direction,
                epoch: c.epoch,
                kind: c.kind,
                label,
                count: v.len(),
                mean,
                std,
            });
        }
        if c.epoch != final_epoch {
            continue;
        }
        let nei = values(col, Label::NotEnoughInfo);
        for other in [Label::Supports, Label::Refutes] {
            let o = values(col, other);
            let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let mut t = SeparationTest {
                direction: c.direction,
                epoch: c.epoch,
                kind: c.kind,
                other,
                nei_mean: avg(&nei),
                other_mean: avg(&o),
                u: None,
                p_value: None,
                note: None,
            };
            if nei.len() < 2 || o.len() < 2 {
                t.note = Some("fewer than two instances in a class; test skipped".into());
            } else {
                let r = mann_whitney(&nei, &o)?;
                t.u = Some(r.u);
                t.p_value = Some(r.p_value);
            }
            tests.push(t);
        }
    }
    Ok(SeparationReport {
        final_epoch,
        stats,
        tests,
    })
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Column, FeatureMatrix};
use crate::error::{Error, IoContext, Result};

pub const FEATURES_FILE: &str = "features.csv";
pub const SCHEMA_FILE: &str = "features.schema.json";

/// Companion metadata of a feature store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub metric: String,
    pub encoder_id: Option<String>,
    pub evolve_config_hash: String,
    pub rows: usize,
    pub columns: Vec<String>,
}

impl FeatureMatrix {
    /// Writes `features.csv` and `features.schema.json` into `dir`. Values
    /// use the shortest representation that parses back to the same bits.
    pub fn save(&self, dir: &Path, metric: &str, encoder_id: Option<&str>, evolve_config_hash: &str) -> Result<FeatureSchema> {
        std::fs::create_dir_all(dir).with_path(dir)?;
        let path = dir.join(FEATURES_FILE);
        let tmp = path.with_extension("tmp");
        {
            let mut w = csv::Writer::from_path(&tmp)?;
            let mut header = vec!["instance_id".to_string()];
            header.extend(self.columns.iter().map(Column::to_string));
            w.write_record(&header)?;
            for (i, id) in self.instance_ids.iter().enumerate() {
                let mut rec = vec![id.clone()];
                rec.extend(self.row(i).iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
            w.flush().with_path(&tmp)?;
        }
        std::fs::rename(&tmp, &path).with_path(&path)?;
        let schema = FeatureSchema {
            metric: metric.to_string(),
            encoder_id: encoder_id.map(str::to_string),
            evolve_config_hash: evolve_config_hash.to_string(),
            rows: self.n_rows(),
            columns: self.columns.iter().map(Column::to_string).collect(),
        };
        let mut json = serde_json::to_string_pretty(&schema)?;
        json.push('\n');
        let spath = dir.join(SCHEMA_FILE);
        std::fs::write(&spath, json).with_path(&spath)?;
        Ok(schema)
    }

    /// Reads a store written by [`FeatureMatrix::save`].
    pub fn load(dir: &Path) -> Result<(FeatureMatrix, FeatureSchema)> {
        let path = dir.join(FEATURES_FILE);
        if !path.exists() {
            return Err(Error::MissingCache {
                path,
                hint: "maple transform".into(),
            });
        }
        let spath = dir.join(SCHEMA_FILE);
        let schema: FeatureSchema = serde_json::from_str(&std::fs::read_to_string(&spath).with_path(&spath)?)?;
        let mut r = csv::Reader::from_path(&path)?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("instance_id") {
            return Err(Error::Validation(format!("{}: first column must be instance_id", path.display())));
        }
        let columns = header.iter().skip(1).map(str::parse).collect::<Result<Vec<Column>>>()?;
        if columns.iter().map(Column::to_string).ne(schema.columns.iter().cloned()) {
            return Err(Error::Inconsistent(format!("{} header disagrees with its schema", path.display())));
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != columns.len() + 1 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line,
                    message: format!("expected {} fields, got {}", columns.len() + 1, rec.len()),
                });
            }
            ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                values.push(field.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.clone(),
                    line,
                    message: format!("'{field}': {e}"),
                })?);
            }
        }
        if ids.len() != schema.rows {
            return Err(Error::Inconsistent(format!(
                "{} has {} rows, schema says {}",
                path.display(),
                ids.len(),
                schema.rows
            )));
        }
        Ok((FeatureMatrix::new(ids, columns, values)?, schema))
    }
}

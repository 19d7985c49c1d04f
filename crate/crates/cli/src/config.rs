use std::collections::HashMap;
use std::path::{Path, PathBuf};

use maple::corpus::{DEFAULT_SPLIT_SEED, DEFAULT_TEST_PER_CLASS};
use maple::error::{Error, Result};
use maple::harness::ExperimentConfig;
use maple::metrics::MetricName;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where raw data comes from and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines pair file (`id`, `claim`, `evidence`, `label`).
    pub input: Option<PathBuf>,
    /// JSON-lines abstract corpus (`id`, `text`) for retrieved evidence.
    pub abstracts: Option<PathBuf>,
    /// Abstracts concatenated per claim when retrieving.
    pub retrieve_k: usize,
    pub test_per_class: usize,
    pub split_seed: u64,
    /// Keep only this many pairs, class-balanced, before splitting.
    pub subsample: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: None,
            abstracts: None,
            retrieve_k: 3,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            split_seed: DEFAULT_SPLIT_SEED,
            subsample: None,
        }
    }
}

/// The full set of settings a command runs under: the experiment keys at
/// the top level plus `[data]` and `[external]` tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Resolved {
    pub data: DataConfig,
    /// Shell commands for adapter-backed metrics.
    pub external: HashMap<MetricName, String>,
    pub experiment: ExperimentConfig,
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

impl Resolved {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(path, e))?;
        let data = match table.remove("data") {
            Some(v) => v.try_into().map_err(|e| config_err(path, e))?,
            None => DataConfig::default(),
        };
        let external = match table.remove("external") {
            Some(v) => {
                let raw: HashMap<String, String> = v.try_into().map_err(|e| config_err(path, e))?;
                raw.into_iter()
                    .map(|(k, v)| Ok((k.parse::<MetricName>()?, v)))
                    .collect::<Result<_>>()?
            }
            None => HashMap::new(),
        };
        let experiment = toml::Value::Table(table).try_into().map_err(|e| config_err(path, e))?;
        Ok(Resolved {
            data,
            external,
            experiment,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Resolved::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Resolved::from_toml(&text, p)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        let mut table = match toml::Value::try_from(&self.experiment).expect("experiment config serialises") {
            toml::Value::Table(t) => t,
            _ => unreachable!("structs serialise to tables"),
        };
        let mut external: Vec<(&MetricName, &String)> = self.external.iter().collect();
        external.sort_by_key(|(k, _)| k.as_str());
        let external: toml::Table = external
            .into_iter()
            .map(|(k, v)| (k.as_str().to_string(), toml::Value::String(v.clone())))
            .collect();
        table.insert("external".into(), toml::Value::Table(external));
        table.insert("data".into(), toml::Value::try_from(&self.data).expect("data config serialises"));
        toml::to_string(&table).expect("toml table serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.test_per_class == 0 {
            return Err(Error::Config("data.test_per_class must be at least 1".into()));
        }
        if self.data.retrieve_k == 0 {
            return Err(Error::Config("data.retrieve_k must be at least 1".into()));
        }
        self.experiment.validate()
    }

    /// Echoes the resolved settings into the output directory.
    pub fn echo(&self, command: &str) -> Result<PathBuf> {
        let dir = &self.experiment.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(format!("resolved.{command}.toml"));
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.experiment.output_dir.join("data")
    }

    pub fn evolve_dir(&self) -> PathBuf {
        self.experiment.output_dir.join("evolve")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.experiment.output_dir.join("features").join(self.experiment.metric.as_str())
    }

    pub fn results_dir(&self) -> PathBuf {
        self.experiment.output_dir.join("results")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maple::corpus::DatasetName;

    #[test]
    fn defaults_round_trip() {
        let r = Resolved::default();
        let back = Resolved::from_toml(&r.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn file_values_and_sections() {
        let text = r#"
dataset = "FEVER"
shots = [1, 2]

[evolve]
epochs = 3

[data]
input = "fever.jsonl"
test_per_class = 10

[external]
bleurt = "python bleurt.py"
"#;
        let r = Resolved::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(r.experiment.dataset, DatasetName::Fever);
        assert_eq!(r.experiment.shots, vec![1, 2]);
        assert_eq!(r.experiment.evolve.epochs, 3);
        assert_eq!(r.experiment.evolve.batch_size, 16);
        assert_eq!(r.data.test_per_class, 10);
        assert_eq!(r.external[&MetricName::Bleurt], "python bleurt.py");
        let back = Resolved::from_toml(&r.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.hash(), r.hash());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = Resolved::from_toml("epochz = 3", Path::new("x.toml")).unwrap_err();
        assert_eq!(err.kind(), maple::error::ErrorKind::Usage);
        let err = Resolved::from_toml("[external]\ncider = \"x\"", Path::new("x.toml")).unwrap_err();
        assert_eq!(err.kind(), maple::error::ErrorKind::Usage);
    }
}

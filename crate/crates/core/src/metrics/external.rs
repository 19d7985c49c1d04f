//! Adapter for metrics computed by an external program (BLEURT, BARTScore).
//!
//! The command is run through `sh -c`. It receives one JSON object per line
//! on stdin, `{"reference": ..., "candidate": ...}`, and must print one
//! number per line on stdout, in order.

use std::io::Write;
use std::process::{Command, Stdio};

use super::{MetricContext, MetricName, PairMetric};
use crate::error::{Error, Result};

pub struct ExternalMetric {
    name: MetricName,
    command: String,
}

impl ExternalMetric {
    pub fn new(name: MetricName, command: impl Into<String>) -> Self {
        ExternalMetric {
            name,
            command: command.into(),
        }
    }

    /// Environment variable holding the command for `name`.
    pub fn env_var(name: MetricName) -> String {
        format!("MAPLE_{}_CMD", name.as_str().to_ascii_uppercase())
    }

    pub fn from_context(name: MetricName, ctx: &MetricContext) -> Result<Self> {
        let command = ctx
            .external
            .get(&name)
            .cloned()
            .or_else(|| std::env::var(Self::env_var(name)).ok())
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| {
                Error::Config(format!(
                    "metric '{name}' is an external adapter and is disabled; set {} to a scoring command",
                    Self::env_var(name)
                ))
            })?;
        Ok(Self::new(name, command))
    }

    fn run(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        let mut input = Vec::new();
        for (reference, candidate) in pairs {
            serde_json::to_writer(
                &mut input,
                &serde_json::json!({"reference": reference, "candidate": candidate}),
            )?;
            input.push(b'\n');
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(format!("spawning {} command", self.name), e))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child
            .wait_with_output()
            .map_err(|e| Error::io(format!("running {} command", self.name), e))?;
        writer
            .join()
            .expect("writer thread")
            .map_err(|e| Error::io(format!("writing to {} command", self.name), e))?;
        if !output.status.success() {
            return Err(Error::Backend(format!("{} command exited with {}", self.name, output.status)));
        }
        let scores = String::from_utf8_lossy(&output.stdout)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Backend(format!("{} command printed '{l}'", self.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != pairs.len() {
            return Err(Error::Backend(format!(
                "{} command returned {} scores for {} pairs",
                self.name,
                scores.len(),
                pairs.len()
            )));
        }
        Ok(scores)
    }
}

impl PairMetric for ExternalMetric {
    fn name(&self) -> MetricName {
        self.name
    }

    fn score(&self, reference: &str, candidate: &str) -> Result<f64> {
        Ok(self.run(&[(reference, candidate)])?[0])
    }

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Vec<Result<f64>> {
        match self.run(pairs) {
            Ok(scores) => scores.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                pairs.iter().map(|_| Err(Error::Backend(msg.clone()))).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_come_back_in_order() {
        // Candidate length in bytes, via a line-counting shell pipeline.
        let cmd = r#"while IFS= read -r line; do printf '%s\n' "${#line}"; done"#;
        let m = ExternalMetric::new(MetricName::Bleurt, cmd);
        let scores: Vec<f64> = m
            .score_batch(&[("a", "b"), ("aaaa", "bbbb")])
            .into_iter()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(scores.len(), 2);
        assert!(scores[1] > scores[0]);
    }

    #[test]
    fn failing_command_is_backend_error() {
        let m = ExternalMetric::new(MetricName::BartScore, "exit 4");
        assert!(matches!(m.score("a", "b"), Err(Error::Backend(_))));
    }

    #[test]
    fn short_output_is_detected() {
        let m = ExternalMetric::new(MetricName::BartScore, "echo 0.5");
        let out = m.score_batch(&[("a", "b"), ("c", "d")]);
        assert!(out.iter().all(|r| r.is_err()));
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One measured quantity against its threshold. Informational checks are
/// reported but never change the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    /// Property the check exercises, for tracing failures.
    pub anchor: String,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
    pub informational: bool,
}

impl CheckEntry {
    fn new(name: impl Into<String>, anchor: &str, value: f64, tolerance: f64, relation: Relation) -> Self {
        let passed = match relation {
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
        };
        Self {
            name: name.into(),
            anchor: anchor.to_string(),
            value,
            tolerance,
            relation,
            passed,
            informational: false,
        }
    }

    pub fn at_most(name: impl Into<String>, anchor: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, anchor, value, tolerance, Relation::AtMost)
    }

    pub fn at_least(name: impl Into<String>, anchor: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, anchor, value, tolerance, Relation::AtLeast)
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    /// A miss that counts against the exit status.
    pub fn is_failure(&self) -> bool {
        !self.passed && !self.informational
    }

    pub fn line(&self) -> String {
        let status = match (self.passed, self.informational) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "INFO",
        };
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        format!("{status} {}: {:.3e} {rel} {:.1e} [{}]", self.name, self.value, self.tolerance, self.anchor)
    }
}

pub fn count_failures(checks: &[CheckEntry]) -> usize {
    checks.iter().filter(|c| c.is_failure()).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    pub dressing: Option<String>,
    pub passed: bool,
    pub failed_checks: usize,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<CheckEntry>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scenario: config.scenario.name().to_string(),
            seed: config.seed,
            dressing: None,
            passed: true,
            failed_checks: 0,
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn finish(&mut self, elapsed: std::time::Duration) {
        self.failed_checks = count_failures(&self.checks);
        self.passed = self.failed_checks == 0;
        self.wall_clock_seconds = elapsed.as_secs_f64();
    }
}

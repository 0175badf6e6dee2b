//! Machine-readable run summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `value ≤ tolerance`
    AtMost,
    /// `value ≥ tolerance`
    AtLeast,
    /// `value > tolerance`
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Absent when the measurement is not a finite number.
    pub value: Option<f64>,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        comparison: Comparison,
        tolerance: f64,
    ) -> Self {
        let passed = match comparison {
            Comparison::AtMost => value <= tolerance,
            Comparison::AtLeast => value >= tolerance,
            Comparison::Above => value > tolerance,
        };
        Self {
            name: name.into(),
            value: value.is_finite().then_some(value),
            tolerance,
            comparison,
            passed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub id: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Report-only measurements.
    pub metrics: BTreeMap<String, f64>,
    pub errors: Vec<String>,
    pub passed: bool,
}

impl Summary {
    pub fn new(scenario: &str, id: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.into(),
            id: id.into(),
            seed,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
            errors: Vec::new(),
            passed: false,
        }
    }

    pub fn check(&mut self, c: Check) {
        log::info!(
            "{}: {} {:?} {} -> {}",
            c.name,
            c.value.map_or("n/a".to_string(), |v| format!("{v:.6e}")),
            c.comparison,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
        self.checks.push(c);
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.into(), value);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn finish(&mut self) {
        self.passed = self.errors.is_empty() && self.checks.iter().all(|c| c.passed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons() {
        assert!(Check::new("a", 1.0, Comparison::AtMost, 1.0).passed);
        assert!(!Check::new("a", 1.0, Comparison::Above, 1.0).passed);
        assert!(Check::new("a", 2.0, Comparison::AtLeast, 1.0).passed);
        let nan = Check::new("a", f64::NAN, Comparison::AtLeast, 0.4);
        assert!(!nan.passed && nan.value.is_none());
    }

    #[test]
    fn empty_summary_passes_only_without_errors() {
        let mut s = Summary::new("x", "x-0", 0);
        s.finish();
        assert!(s.passed);
        s.errors.push("boom".into());
        s.finish();
        assert!(!s.passed);
    }
}

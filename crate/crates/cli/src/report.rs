//! Pass/fail checks and suite reports.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// `None` when the quantity sits below the noise floor.
    pub measured: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn within(
        name: impl Into<String>,
        measured: f64,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Self {
        let passed = measured.is_finite()
            && lower.is_none_or(|l| measured >= l)
            && upper.is_none_or(|u| measured <= u);
        Check {
            name: name.into(),
            measured: Some(measured),
            lower,
            upper,
            passed,
        }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, upper: f64) -> Self {
        Check::within(name, measured, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, measured: f64, lower: f64) -> Self {
        Check::within(name, measured, Some(lower), None)
    }

    /// Strict positivity.
    pub fn positive(name: impl Into<String>, measured: f64) -> Self {
        let mut c = Check::at_least(name, measured, 0.0);
        c.passed &= measured > 0.0;
        c
    }

    /// Ceiling on an optional measurement; a missing one passes.
    pub fn optional_at_most(name: impl Into<String>, measured: Option<f64>, upper: f64) -> Self {
        match measured {
            Some(v) => Check::at_most(name, v, upper),
            None => Check {
                name: name.into(),
                measured: None,
                lower: None,
                upper: Some(upper),
                passed: true,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: BTreeMap<String, Value>,
}

impl SuiteReport {
    pub fn new(suite: &str, seed: u64) -> Self {
        SuiteReport {
            suite: suite.into(),
            seed,
            passed: true,
            checks: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(
            key.into(),
            serde_json::to_value(value).expect("serializable detail"),
        );
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub severity: Severity,
    /// Where the finding applies, e.g. `joint/hip_pitch_l` or `knot/120`.
    pub location: String,
    pub message: String,
    pub value: f64,
}

/// Findings sorted by location, so reports diff cleanly between runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, severity: Severity, location: impl Into<String>, message: impl Into<String>, value: f64) {
        self.entries.push(ValidationEntry { severity, location: location.into(), message: message.into(), value });
    }

    pub fn violation(&mut self, location: impl Into<String>, message: impl Into<String>, value: f64) {
        self.push(Severity::Violation, location, message, value);
    }

    pub fn info(&mut self, location: impl Into<String>, message: impl Into<String>, value: f64) {
        self.push(Severity::Info, location, message, value);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.entries.extend(other.entries);
    }

    /// Stable sort by location; entries at one location keep insertion order.
    pub fn finish(mut self) -> Self {
        self.entries.sort_by(|a, b| a.location.cmp(&b.location));
        self
    }

    pub fn violations(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries.iter().filter(|e| e.severity == Severity::Violation)
    }

    pub fn has_violations(&self) -> bool {
        self.violations().next().is_some()
    }
}

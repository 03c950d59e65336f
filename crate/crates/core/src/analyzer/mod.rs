//! Per-contract findings: an adapter for an external static analyzer
//! run across the compiler version ladder, a built-in token-pattern
//! detector set for offline operation, and the registry mapping
//! detector names to (impact, confidence).

mod builtin;
mod external;

pub use builtin::analyze_builtin;
pub use external::{
    analyze_multi_version, parse_external_report, CommandTemplate, ExternalAnalyzer, InvokeError,
};

use crate::corpus::{ContractRecord, Severity};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("report parse: {0}")]
    Parse(String),
    #[error("unknown severity name {0:?}")]
    UnknownSeverity(String),
    #[error("unknown detector {0:?}")]
    UnknownDetector(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One detector hit. Confidence is always LOW, MEDIUM, or HIGH.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub detector: String,
    pub impact: Severity,
    pub confidence: Severity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisStatus {
    /// Analysis ran; findings may still be empty (clean contract).
    Ok,
    /// No compiler version produced a successful analysis.
    Null,
}

/// Outcome of analyzing one contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub status: AnalysisStatus,
    /// Ladder versions that analyzed successfully; empty for Null and
    /// for the built-in analyzer (which does not compile anything).
    pub compiler_versions_used: Vec<String>,
    pub findings: Vec<Finding>,
}

impl AnalysisReport {
    pub fn null() -> AnalysisReport {
        AnalysisReport {
            status: AnalysisStatus::Null,
            compiler_versions_used: Vec::new(),
            findings: Vec::new(),
        }
    }

    /// Rebuilds a report from a record's finding lists. Returns `None`
    /// when the record was never analyzed or the analysis was null; the
    /// two cases are indistinguishable on a record.
    pub fn from_record(record: &ContractRecord) -> Option<AnalysisReport> {
        let names = record.vulnerabilities.as_ref()?;
        let impacts = record.impacts.as_ref()?;
        let confidences = record.confidences.as_ref()?;
        if names.len() != impacts.len() || names.len() != confidences.len() {
            return None;
        }
        let findings = names
            .iter()
            .zip(impacts)
            .zip(confidences)
            .map(|((name, &impact), &confidence)| Finding {
                detector: name.clone(),
                impact,
                confidence,
            })
            .collect();
        Some(AnalysisReport {
            status: AnalysisStatus::Ok,
            compiler_versions_used: Vec::new(),
            findings,
        })
    }

    /// Copy this report onto a record: Null means the finding lists stay
    /// null; Ok fills all three lists positionally.
    pub fn apply_to(&self, record: &mut ContractRecord) {
        match self.status {
            AnalysisStatus::Null => {
                record.vulnerabilities = None;
                record.confidences = None;
                record.impacts = None;
            }
            AnalysisStatus::Ok => {
                record.vulnerabilities =
                    Some(self.findings.iter().map(|f| f.detector.clone()).collect());
                record.confidences = Some(self.findings.iter().map(|f| f.confidence).collect());
                record.impacts = Some(self.findings.iter().map(|f| f.impact).collect());
            }
        }
    }
}

/// Detector name -> (impact, confidence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorRegistry {
    entries: BTreeMap<String, (Severity, Severity)>,
}

impl DetectorRegistry {
    /// The five detectors the built-in analyzer implements.
    pub fn builtin() -> DetectorRegistry {
        use Severity::*;
        let entries = [
            ("reentrancy-eth", (High, Medium)),
            ("suicidal", (High, High)),
            ("timestamp", (Low, Medium)),
            ("tx-origin", (Medium, Medium)),
            ("unchecked-send", (Medium, Medium)),
        ];
        DetectorRegistry {
            entries: entries
                .into_iter()
                .map(|(name, pair)| (name.to_string(), pair))
                .collect(),
        }
    }

    /// Load a registry file: a JSON map name -> {impact, confidence}.
    pub fn load(path: &Path) -> Result<DetectorRegistry, AnalyzerError> {
        #[derive(Deserialize)]
        struct Entry {
            impact: String,
            confidence: String,
        }
        let text = std::fs::read_to_string(path)?;
        let raw: BTreeMap<String, Entry> =
            serde_json::from_str(&text).map_err(|e| AnalyzerError::Parse(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (name, entry) in raw {
            let impact = Severity::from_name_ci(&entry.impact)
                .ok_or_else(|| AnalyzerError::UnknownSeverity(entry.impact.clone()))?;
            let confidence = Severity::from_name_ci(&entry.confidence)
                .ok_or_else(|| AnalyzerError::UnknownSeverity(entry.confidence.clone()))?;
            entries.insert(name, (impact, confidence));
        }
        Ok(DetectorRegistry { entries })
    }

    pub fn get(&self, name: &str) -> Option<(Severity, Severity)> {
        self.entries.get(name).copied()
    }

    /// Detector names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Map detector names to positionally aligned (impacts, confidences).
pub fn enrich_findings(
    names: &[String],
    registry: &DetectorRegistry,
) -> Result<(Vec<Severity>, Vec<Severity>), AnalyzerError> {
    let mut impacts = Vec::with_capacity(names.len());
    let mut confidences = Vec::with_capacity(names.len());
    for name in names {
        let (impact, confidence) = registry
            .get(name)
            .ok_or_else(|| AnalyzerError::UnknownDetector(name.clone()))?;
        impacts.push(impact);
        confidences.push(confidence);
    }
    Ok((impacts, confidences))
}

//! External analyzer adapter: JSON report parsing, the subprocess
//! invoker, and the multi-version analysis combinator.

use super::{AnalysisReport, AnalysisStatus, AnalyzerError, Finding};
use crate::corpus::Severity;
use crate::solprep::rewrite_pragma;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use thiserror::Error;

/// Why one (source, version) invocation produced no findings list.
#[derive(Debug, Error)]
pub enum InvokeError {
    #[error("compilation failed")]
    CompileFailed,
    #[error("tool: {0}")]
    Tool(String),
}

/// Parse the external analyzer's JSON output: one finding per entry at
/// `results.detectors[*]`, reading the check/impact/confidence fields.
/// Severity names match case-insensitively; duplicates are preserved.
pub fn parse_external_report(report_text: &str) -> Result<Vec<Finding>, AnalyzerError> {
    let value: serde_json::Value = serde_json::from_str(report_text)
        .map_err(|e| AnalyzerError::Parse(format!("not valid JSON: {e}")))?;
    let detectors = value
        .pointer("/results/detectors")
        .ok_or_else(|| AnalyzerError::Parse("missing results.detectors".into()))?
        .as_array()
        .ok_or_else(|| AnalyzerError::Parse("results.detectors is not an array".into()))?;

    let mut findings = Vec::with_capacity(detectors.len());
    for (i, entry) in detectors.iter().enumerate() {
        let field = |key: &str| -> Result<&str, AnalyzerError> {
            entry
                .get(key)
                .and_then(serde_json::Value::as_str)
                .ok_or_else(|| AnalyzerError::Parse(format!("detectors[{i}] missing {key}")))
        };
        let detector = field("check")?.to_string();
        let severity = |name: &str| -> Result<Severity, AnalyzerError> {
            Severity::from_name_ci(name).ok_or_else(|| AnalyzerError::UnknownSeverity(name.into()))
        };
        let impact = severity(field("impact")?)?;
        let confidence = severity(field("confidence")?)?;
        if !matches!(confidence, Severity::Low | Severity::Medium | Severity::High) {
            return Err(AnalyzerError::Parse(format!(
                "detectors[{i}] confidence must be LOW, MEDIUM, or HIGH, got {}",
                confidence.name()
            )));
        }
        findings.push(Finding {
            detector,
            impact,
            confidence,
        });
    }
    Ok(findings)
}

/// Rewrite the pragma for each ladder version and invoke the analyzer;
/// findings from all successful versions are unioned by detector name
/// (first occurrence kept, order of first appearance). Per-version
/// failures are absorbed; zero successes means status Null.
pub fn analyze_multi_version<F>(source: &str, ladder: &[&str], mut run: F) -> AnalysisReport
where
    F: FnMut(&str, &str) -> Result<Vec<Finding>, InvokeError>,
{
    let mut versions_used = Vec::new();
    let mut findings: Vec<Finding> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for &version in ladder {
        let rewritten = rewrite_pragma(source, version);
        if let Ok(version_findings) = run(&rewritten, version) {
            versions_used.push(version.to_string());
            for finding in version_findings {
                if seen.insert(finding.detector.clone()) {
                    findings.push(finding);
                }
            }
        }
    }
    if versions_used.is_empty() {
        AnalysisReport::null()
    } else {
        AnalysisReport {
            status: AnalysisStatus::Ok,
            compiler_versions_used: versions_used,
            findings,
        }
    }
}

/// Analyzer command line with `{file}` and `{solc_version}`
/// placeholders, e.g. `slither {file} --json -`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate {
    argv: Vec<String>,
}

impl CommandTemplate {
    pub fn new(argv: Vec<String>) -> Result<CommandTemplate, AnalyzerError> {
        if argv.is_empty() {
            return Err(AnalyzerError::Parse("empty analyzer command".into()));
        }
        Ok(CommandTemplate { argv })
    }

    /// Split a configuration string on whitespace. Placeholders must be
    /// whole words or embedded in one argument; no shell quoting.
    pub fn from_command_line(line: &str) -> Result<CommandTemplate, AnalyzerError> {
        CommandTemplate::new(line.split_whitespace().map(str::to_string).collect())
    }

    fn materialize(&self, file: &Path, version: &str) -> Vec<String> {
        self.argv
            .iter()
            .map(|arg| {
                arg.replace("{file}", &file.to_string_lossy())
                    .replace("{solc_version}", version)
            })
            .collect()
    }
}

/// Runs the external analyzer as one subprocess per call: the source is
/// written to a temporary .sol file, placeholders are substituted, and
/// standard output is parsed as a report.
#[derive(Debug, Clone)]
pub struct ExternalAnalyzer {
    template: CommandTemplate,
}

impl ExternalAnalyzer {
    pub fn new(template: CommandTemplate) -> ExternalAnalyzer {
        ExternalAnalyzer { template }
    }

    /// A parseable report wins regardless of exit status (the analyzer
    /// exits nonzero when findings exist). Unparsable output plus a
    /// nonzero exit is a compile failure; unparsable output with a zero
    /// exit is a tool error.
    pub fn run(&self, source: &str, version: &str) -> Result<Vec<Finding>, InvokeError> {
        let mut file = tempfile::Builder::new()
            .prefix("triage-")
            .suffix(".sol")
            .tempfile()
            .map_err(|e| InvokeError::Tool(format!("temp file: {e}")))?;
        file.write_all(source.as_bytes())
            .map_err(|e| InvokeError::Tool(format!("temp file: {e}")))?;
        file.flush()
            .map_err(|e| InvokeError::Tool(format!("temp file: {e}")))?;

        let argv = self.template.materialize(file.path(), version);
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .output()
            .map_err(|e| InvokeError::Tool(format!("spawn {}: {e}", argv[0])))?;

        let stdout = String::from_utf8_lossy(&output.stdout);
        match parse_external_report(&stdout) {
            Ok(findings) => Ok(findings),
            Err(_) if !output.status.success() => Err(InvokeError::CompileFailed),
            Err(e) => Err(InvokeError::Tool(e.to_string())),
        }
    }
}

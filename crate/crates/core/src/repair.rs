//! LLM-backed repair loop with re-analysis after every attempt.
//!
//! Flagged contracts are handed to a chat model with a fixed prompt, the
//! returned source is re-analyzed, and the loop keeps whichever candidate
//! has the least severe findings. Up to [`DEFAULT_MAX_ATTEMPTS`] rounds run
//! per contract; each round prompts with the vulnerabilities still present
//! in the best candidate so far.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analyzer::{AnalysisReport, AnalysisStatus};
use crate::clock::Clock;
use crate::corpus::{ContractRecord, Severity};
use crate::gen::SnippetBank;
use crate::transport::{HttpRequest, Transport, TransportError};

/// Environment variable consulted for the chat API key when the config
/// does not carry one.
pub const LLM_API_KEY_ENV: &str = "LLM_API_KEY";

/// Attempt budget per contract.
pub const DEFAULT_MAX_ATTEMPTS: usize = 5;

/// Role framing sent as the system message.
const PROMPT_SYSTEM: &str = "You are a helpful assistant who will help repair vulnerabilities \
in smart contracts written in Solidity. You are to explain the vulnerabilities and output a \
new smart contract with all vulnerabilities repaired, with an explanation of what you did.";

/// Task body sent as the user message, with the source and vulnerability
/// placeholders still unfilled.
const PROMPT_USER_TEMPLATE: &str = "If you are unable to repair a vulnerability, please \
explain why. Use the following format for your outputs: Vulnerabilities: ... New Smart \
Contract: ... Vulnerabilities unable to repair: ... The smart contract you will repair is \
(sourceCode) The vulnerabilities are (vulnerabilities).";

const SOURCE_PLACEHOLDER: &str = "(sourceCode)";
const VULNS_PLACEHOLDER: &str = "(vulnerabilities)";

/// Markers of the structured response format requested by the prompt.
const CONTRACT_HEADER: &str = "New Smart Contract:";
const UNREPAIRED_HEADER: &str = "Vulnerabilities unable to repair:";

/// A response starting with one of these and carrying no code block is a
/// refusal, not a repair.
const REFUSAL_PREFIXES: [&str; 3] = ["As an AI", "I can't assist", "I cannot assist"];

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("cannot build a repair prompt without vulnerability names")]
    EmptyVulnList,
    #[error("chat endpoint returned HTTP {0}")]
    HttpError(u16),
    #[error("model refused to attempt a repair")]
    RefusalError,
    #[error("chat request timed out")]
    TimeoutError,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed chat response: {0}")]
    BadResponse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Chat endpoint settings. The endpoint speaks the OpenAI-compatible
/// chat-completions wire format.
#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Base URL without the `/v1/chat/completions` suffix.
    pub base_url: String,
    pub model: String,
    /// Key sent as a bearer token; falls back to `LLM_API_KEY` at call
    /// time, and the header is omitted when neither is set.
    pub api_key: Option<String>,
    pub temperature: f64,
    /// Extra tries after a 429 before giving up.
    pub max_retries: u32,
    /// Base delay between 429 retries; doubles per retry.
    pub retry_interval: Duration,
}

impl LlmConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> LlmConfig {
        LlmConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            max_retries: 3,
            retry_interval: Duration::from_secs(1),
        }
    }
}

/// One round of the repair loop, as recorded in the session transcript.
/// A failed request stores the error description as the response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub attempt_no: usize,
    pub prompt_text: String,
    pub response_text: String,
    pub extracted_source: Option<String>,
    pub report_after: Option<AnalysisReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairOutcome {
    /// A candidate with zero findings was reached.
    Clean,
    /// The best candidate has a strictly smaller severity key than the
    /// original, but findings remain.
    Improved,
    /// No candidate beat the original source.
    Unchanged,
    /// No attempt produced an analyzable candidate at all.
    Failed,
}

impl RepairOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairOutcome::Clean => "Clean",
            RepairOutcome::Improved => "Improved",
            RepairOutcome::Unchanged => "Unchanged",
            RepairOutcome::Failed => "Failed",
        }
    }
}

/// Full transcript of repairing one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSession {
    pub original: ContractRecord,
    pub report_before: AnalysisReport,
    pub attempts: Vec<RepairAttempt>,
    pub outcome: RepairOutcome,
    pub best_source: Option<String>,
    pub best_report: Option<AnalysisReport>,
}

/// Finding counts ordered worst-first, compared lexicographically: fewer
/// HIGH findings always beats any number of MEDIUM ones, and so on down.
pub fn severity_key(report: &AnalysisReport) -> [usize; 5] {
    let mut key = [0usize; 5];
    for finding in &report.findings {
        let slot = match finding.impact {
            Severity::High => 0,
            Severity::Medium => 1,
            Severity::Low => 2,
            Severity::Informational => 3,
            Severity::Optimization => 4,
        };
        key[slot] += 1;
    }
    key
}

/// Fills the repair prompt with the source and the names of the
/// vulnerabilities to fix. Severity levels are deliberately not included:
/// they distract the model, and classification labels never belong in a
/// repair request.
pub fn build_prompt(source: &str, vulnerability_names: &[String]) -> Result<String, RepairError> {
    if vulnerability_names.is_empty() {
        return Err(RepairError::EmptyVulnList);
    }
    let user = PROMPT_USER_TEMPLATE
        .replace(SOURCE_PLACEHOLDER, source)
        .replace(VULNS_PLACEHOLDER, &vulnerability_names.join(", "));
    Ok(format!("{PROMPT_SYSTEM} {user}"))
}

/// Splits a built prompt into (system, user) messages. The role framing is
/// a fixed prefix, so anything else is sent entirely as the user message.
fn split_prompt(prompt: &str) -> (&str, &str) {
    match prompt.strip_prefix(PROMPT_SYSTEM) {
        Some(rest) => (PROMPT_SYSTEM, rest.trim_start()),
        None => ("", prompt),
    }
}

fn is_refusal(text: &str) -> bool {
    if text.contains("```") {
        return false;
    }
    let head = text.trim_start();
    REFUSAL_PREFIXES.iter().any(|p| head.starts_with(p))
}

/// Sends one prompt to the chat endpoint and returns the assistant text.
/// Retries 429 responses with doubling delays, up to `max_retries` extra
/// tries; any other non-200 status fails immediately.
pub fn chat_complete(
    config: &LlmConfig,
    transport: &dyn Transport,
    clock: &dyn Clock,
    prompt: &str,
) -> Result<String, RepairError> {
    let (system, user) = split_prompt(prompt);
    let mut messages = Vec::new();
    if !system.is_empty() {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": user}));
    let body = json!({
        "model": config.model,
        "messages": messages,
        "temperature": config.temperature,
    });

    let url = format!(
        "{}/v1/chat/completions",
        config.base_url.trim_end_matches('/')
    );
    let key = config
        .api_key
        .clone()
        .or_else(|| std::env::var(LLM_API_KEY_ENV).ok());

    for attempt in 0..=config.max_retries {
        let mut request = HttpRequest::post(&url, body.to_string())
            .with_header("Content-Type", "application/json");
        if let Some(key) = &key {
            request = request.with_header("Authorization", format!("Bearer {key}"));
        }

        let response = transport.execute(&request).map_err(|e| match e {
            TransportError::Timeout => RepairError::TimeoutError,
            other => RepairError::Transport(other.to_string()),
        })?;

        if response.status == 429 {
            if attempt == config.max_retries {
                return Err(RepairError::HttpError(429));
            }
            clock.sleep(config.retry_interval * 2u32.pow(attempt));
            continue;
        }
        if response.status != 200 {
            return Err(RepairError::HttpError(response.status));
        }

        let parsed: serde_json::Value = serde_json::from_str(&response.body)
            .map_err(|e| RepairError::BadResponse(e.to_string()))?;
        let content = parsed
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                RepairError::BadResponse("response lacks choices[0].message.content".into())
            })?;
        if is_refusal(content) {
            return Err(RepairError::RefusalError);
        }
        return Ok(content.to_string());
    }
    unreachable!("loop either returns or retries within bounds")
}

/// Pulls the repaired source out of a model response: the first fenced
/// code block wins; otherwise the text between the "New Smart Contract:"
/// header and the "Vulnerabilities unable to repair:" header (or the end).
pub fn extract_contract(response: &str) -> Option<String> {
    if let Some(open) = response.find("```") {
        let after_fence = &response[open + 3..];
        if let Some(line_end) = after_fence.find('\n') {
            let block_start = &after_fence[line_end + 1..];
            if let Some(close) = block_start.find("```") {
                let content = block_start[..close].trim();
                if !content.is_empty() {
                    return Some(content.to_string());
                }
            }
        }
    }

    let after = response.find(CONTRACT_HEADER)?;
    let segment = &response[after + CONTRACT_HEADER.len()..];
    let segment = match segment.find(UNREPAIRED_HEADER) {
        Some(end) => &segment[..end],
        None => segment,
    };
    let content = segment.trim();
    if content.is_empty() {
        None
    } else {
        Some(content.to_string())
    }
}

/// Runs the repair loop for one flagged contract.
///
/// The record must already be analyzed with at least one finding; the
/// report is reconstructed from its finding lists. Each attempt prompts
/// with the vulnerabilities remaining in the best candidate so far, and a
/// worse candidate never displaces the working source. Attempt errors are
/// recorded but do not abort the session.
pub fn repair_loop(
    record: &ContractRecord,
    analyzer_fn: &mut dyn FnMut(&str) -> AnalysisReport,
    llm_fn: &mut dyn FnMut(&str) -> Result<String, RepairError>,
    max_attempts: usize,
) -> RepairSession {
    let report_before = AnalysisReport::from_record(record)
        .expect("repair_loop requires an analyzed record");
    assert!(
        !report_before.findings.is_empty(),
        "clean contracts never enter the repair loop"
    );

    let before_key = severity_key(&report_before);
    let mut best_source = record.source.clone();
    let mut best_report = report_before.clone();
    let mut best_key = before_key;
    let mut any_candidate = false;
    let mut reached_clean = false;
    let mut attempts = Vec::new();

    for attempt_no in 1..=max_attempts {
        let names: Vec<String> = best_report
            .findings
            .iter()
            .map(|f| f.detector.clone())
            .collect();
        let prompt = build_prompt(&best_source, &names)
            .expect("working report always has findings inside the loop");

        let (response_text, extracted_source, report_after) = match llm_fn(&prompt) {
            Err(e) => (format!("request failed: {e}"), None, None),
            Ok(text) => {
                let extracted = extract_contract(&text);
                let report = extracted.as_deref().map(&mut *analyzer_fn);
                (text, extracted, report)
            }
        };

        if let (Some(source), Some(report)) = (&extracted_source, &report_after) {
            if report.status == AnalysisStatus::Ok {
                any_candidate = true;
                let key = severity_key(report);
                if key < best_key {
                    best_source = source.clone();
                    best_report = report.clone();
                    best_key = key;
                }
                if report.findings.is_empty() {
                    reached_clean = true;
                }
            }
        }

        attempts.push(RepairAttempt {
            attempt_no,
            prompt_text: prompt,
            response_text,
            extracted_source,
            report_after,
        });

        if reached_clean {
            break;
        }
    }

    let outcome = if reached_clean {
        RepairOutcome::Clean
    } else if !any_candidate {
        RepairOutcome::Failed
    } else if best_key < before_key {
        RepairOutcome::Improved
    } else {
        RepairOutcome::Unchanged
    };

    let (best_source, best_report) = match outcome {
        RepairOutcome::Failed => (None, None),
        _ => (Some(best_source), Some(best_report)),
    };

    RepairSession {
        original: record.clone(),
        report_before,
        attempts,
        outcome,
        best_source,
        best_report,
    }
}

/// Deterministic stand-in for a live model: extracts the source embedded
/// in the prompt, swaps every known vulnerable snippet for its repaired
/// pair, and answers in the response format the prompt requests.
pub fn mock_repairer_with(bank: &SnippetBank, prompt: &str) -> String {
    const SOURCE_LEAD: &str = "The smart contract you will repair is ";
    const VULNS_LEAD: &str = "The vulnerabilities are ";

    let start = prompt
        .find(SOURCE_LEAD)
        .map(|i| i + SOURCE_LEAD.len())
        .unwrap_or(0);
    let end = prompt.rfind(VULNS_LEAD).unwrap_or(prompt.len());
    let source = prompt[start..end.max(start)].trim();
    let names = prompt[end.max(start)..]
        .strip_prefix(VULNS_LEAD)
        .map(|rest| rest.trim().trim_end_matches('.'))
        .unwrap_or("");

    let repaired = bank.repair_source(source);
    format!(
        "Vulnerabilities: {names}\n\
         New Smart Contract:\n```solidity\n{repaired}\n```\n\
         Vulnerabilities unable to repair: none\n"
    )
}

/// [`mock_repairer_with`] over the builtin snippet bank.
pub fn mock_repairer(prompt: &str) -> String {
    mock_repairer_with(&SnippetBank::builtin(), prompt)
}

/// Writes sessions as JSON Lines, one session per line.
pub fn save_sessions(path: &Path, sessions: &[RepairSession]) -> Result<(), RepairError> {
    let mut out = Vec::new();
    for session in sessions {
        serde_json::to_writer(&mut out, session)
            .map_err(|e| RepairError::BadResponse(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_sessions(path: &Path) -> Result<Vec<RepairSession>, RepairError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut sessions = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sessions
            .push(serde_json::from_str(&line).map_err(|e| RepairError::BadResponse(e.to_string()))?);
    }
    Ok(sessions)
}

/// Appends one session to an existing transcript file.
pub fn append_session(path: &Path, session: &RepairSession) -> Result<(), RepairError> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line =
        serde_json::to_string(session).map_err(|e| RepairError::BadResponse(e.to_string()))?;
    writeln!(file, "{line}")?;
    Ok(())
}

//! Contract records and dataset preparation.
//!
//! The canonical on-disk form is JSON Lines, one record per line, with
//! the columns `contract_address`, `contract_source`, `malicious`,
//! `vulnerability`, `confidence`, `impact`. A CSV importer accepts the
//! same column names with list cells encoded as JSON arrays.
//!
//! A record whose `vulnerability` field is null was never successfully
//! analyzed; an empty list means analyzed-and-clean. The two states are
//! distinct throughout the pipeline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("not enough {label} records: need {need}, have {have}")]
    InsufficientLabel {
        label: &'static str,
        need: usize,
        have: usize,
    },
}

/// Finding severity, five ordered levels. The numeric codes 0..4 double
/// as the impact scale used by the feature encoder.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Optimization,
    Informational,
    Low,
    Medium,
    High,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Optimization,
        Severity::Informational,
        Severity::Low,
        Severity::Medium,
        Severity::High,
    ];

    /// Numeric code 0..4, ordered by severity.
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Severity> {
        Severity::ALL.get(code).copied()
    }

    /// Parse a level name case-insensitively ("High", "HIGH", "high").
    pub fn from_name_ci(name: &str) -> Option<Severity> {
        match name.to_ascii_uppercase().as_str() {
            "OPTIMIZATION" => Some(Severity::Optimization),
            "INFORMATIONAL" => Some(Severity::Informational),
            "LOW" => Some(Severity::Low),
            "MEDIUM" => Some(Severity::Medium),
            "HIGH" => Some(Severity::High),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Severity::Optimization => "OPTIMIZATION",
            Severity::Informational => "INFORMATIONAL",
            Severity::Low => "LOW",
            Severity::Medium => "MEDIUM",
            Severity::High => "HIGH",
        }
    }
}

/// One smart contract with its label and analyzer output lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRecord {
    #[serde(rename = "contract_address")]
    pub address: Option<String>,
    #[serde(rename = "contract_source")]
    pub source: String,
    pub malicious: bool,
    #[serde(rename = "vulnerability")]
    pub vulnerabilities: Option<Vec<String>>,
    #[serde(rename = "confidence")]
    pub confidences: Option<Vec<Severity>>,
    #[serde(rename = "impact")]
    pub impacts: Option<Vec<Severity>>,
}

impl ContractRecord {
    /// A fresh un-analyzed record: finding lists null.
    pub fn new(source: String, malicious: bool) -> Self {
        ContractRecord {
            address: None,
            source,
            malicious,
            vulnerabilities: None,
            confidences: None,
            impacts: None,
        }
    }

    /// True when the analyzer produced output for this record (the list
    /// may still be empty, meaning analyzed-and-clean).
    pub fn is_analyzed(&self) -> bool {
        self.vulnerabilities.is_some()
    }

    /// Check record invariants: aligned finding lists and address format.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(vulns) = &self.vulnerabilities {
            let confs = self
                .confidences
                .as_ref()
                .ok_or("vulnerability list present but confidence list is null")?;
            let imps = self
                .impacts
                .as_ref()
                .ok_or("vulnerability list present but impact list is null")?;
            if confs.len() != vulns.len() || imps.len() != vulns.len() {
                return Err(format!(
                    "list length mismatch: {} vulnerabilities, {} confidences, {} impacts",
                    vulns.len(),
                    confs.len(),
                    imps.len()
                ));
            }
        }
        if let Some(addr) = &self.address {
            if !is_hex_address(addr) {
                return Err(format!("malformed address {addr:?}"));
            }
        }
        Ok(())
    }
}

/// `0x` followed by exactly 40 hex digits.
pub fn is_hex_address(s: &str) -> bool {
    s.len() == 42 && s.starts_with("0x") && s[2..].bytes().all(|b| b.is_ascii_hexdigit())
}

/// Load a JSON Lines corpus. Malformed lines report their 1-based line
/// number; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<ContractRecord>, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: ContractRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| CorpusError::Parse {
            line: line_no,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Save records as JSON Lines. `load_corpus(save_corpus(r)) == r`.
pub fn save_corpus(records: &[ContractRecord], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Import a CSV corpus with the canonical column names. List cells are
/// JSON arrays; an empty cell is a null list (analysis failed).
pub fn load_corpus_csv(path: &Path) -> Result<Vec<ContractRecord>, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_to_corpus_err)?;
    let headers = reader.headers().map_err(csv_to_corpus_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let idx_address = col("contract_address");
    let idx_source = col("contract_source").ok_or(CorpusError::Parse {
        line: 1,
        message: "missing contract_source column".into(),
    })?;
    let idx_malicious = col("malicious").ok_or(CorpusError::Parse {
        line: 1,
        message: "missing malicious column".into(),
    })?;
    let idx_vuln = col("vulnerability");
    let idx_conf = col("confidence");
    let idx_impact = col("impact");

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_to_corpus_err)?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: Option<usize>| i.and_then(|i| row.get(i)).unwrap_or("");

        let malicious = match cell(Some(idx_malicious)).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("malicious must be true/false, got {other:?}"),
                })
            }
        };
        let parse_list = |text: &str| -> Result<Option<serde_json::Value>, CorpusError> {
            if text.trim().is_empty() {
                return Ok(None);
            }
            serde_json::from_str(text)
                .map(Some)
                .map_err(|e| CorpusError::Parse {
                    line,
                    message: format!("bad list cell: {e}"),
                })
        };
        fn from_value<T: serde::de::DeserializeOwned>(
            v: Option<serde_json::Value>,
            line: usize,
        ) -> Result<Option<T>, CorpusError> {
            v.map(serde_json::from_value)
                .transpose()
                .map_err(|e| CorpusError::Parse {
                    line,
                    message: format!("bad list cell: {e}"),
                })
        }

        let address = {
            let text = cell(idx_address).trim();
            if text.is_empty() {
                None
            } else {
                Some(text.to_string())
            }
        };
        let record = ContractRecord {
            address,
            source: cell(Some(idx_source)).to_string(),
            malicious,
            vulnerabilities: from_value(parse_list(cell(idx_vuln))?, line)?,
            confidences: from_value(parse_list(cell(idx_conf))?, line)?,
            impacts: from_value(parse_list(cell(idx_impact))?, line)?,
        };
        record
            .validate()
            .map_err(|message| CorpusError::Parse { line, message })?;
        records.push(record);
    }
    Ok(records)
}

fn csv_to_corpus_err(e: csv::Error) -> CorpusError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    CorpusError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Keep only records the analyzer produced output for, preserving order.
pub fn filter_analyzed(records: &[ContractRecord]) -> Vec<ContractRecord> {
    records
        .iter()
        .filter(|r| r.is_analyzed())
        .cloned()
        .collect()
}

/// Round half up on the malicious count; benign takes the remainder.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Sample a label-stratified subset of exactly `target_size` records:
/// `round(target_size * malicious_ratio)` malicious, the rest benign.
/// Seeded uniform sampling without replacement; original relative order
/// is preserved in the output.
pub fn stratified_reduce(
    records: &[ContractRecord],
    target_size: usize,
    malicious_ratio: f64,
    seed: u64,
) -> Result<Vec<ContractRecord>, CorpusError> {
    let need_malicious = round_half_up(target_size as f64 * malicious_ratio);
    let need_benign = target_size - need_malicious;

    let mut malicious_idx: Vec<usize> = Vec::new();
    let mut benign_idx: Vec<usize> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.malicious {
            malicious_idx.push(i);
        } else {
            benign_idx.push(i);
        }
    }
    if malicious_idx.len() < need_malicious {
        return Err(CorpusError::InsufficientLabel {
            label: "malicious",
            need: need_malicious,
            have: malicious_idx.len(),
        });
    }
    if benign_idx.len() < need_benign {
        return Err(CorpusError::InsufficientLabel {
            label: "benign",
            need: need_benign,
            have: benign_idx.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    malicious_idx.shuffle(&mut rng);
    benign_idx.shuffle(&mut rng);

    let mut chosen: Vec<usize> = malicious_idx[..need_malicious]
        .iter()
        .chain(benign_idx[..need_benign].iter())
        .copied()
        .collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn record_with_findings() -> ContractRecord {
        ContractRecord {
            address: Some("0x1234567890abcdef1234567890abcdef12345678".into()),
            source: "pragma solidity >=0.4.26;\ncontract A {}".into(),
            malicious: true,
            vulnerabilities: Some(vec!["tx-origin".into()]),
            confidences: Some(vec![Severity::Medium]),
            impacts: Some(vec![Severity::Medium]),
        }
    }

    #[test]
    fn severity_codes_are_ordered() {
        for (code, level) in Severity::ALL.iter().enumerate() {
            assert_eq!(level.code(), code);
            assert_eq!(Severity::from_code(code), Some(*level));
        }
        assert!(Severity::High > Severity::Low);
        assert_eq!(Severity::from_name_ci("High"), Some(Severity::High));
        assert_eq!(Severity::from_name_ci("informational"), Some(Severity::Informational));
        assert_eq!(Severity::from_name_ci("nope"), None);
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn single_record_round_trips_bit_identically() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        let records = vec![record_with_findings()];
        save_corpus(&records, &path).unwrap();
        let first = std::fs::read(&path).unwrap();

        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, records);
        save_corpus(&loaded, &path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn list_length_mismatch_is_parse_error_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let line = r#"{"contract_address":null,"contract_source":"c","malicious":true,"vulnerability":["a","b"],"confidence":["HIGH","HIGH"],"impact":["HIGH"]}"#;
        std::fs::write(&path, format!("{line}\n")).unwrap();
        match load_corpus(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_address_rejected() {
        let mut r = record_with_findings();
        r.address = Some("0x123".into());
        assert!(r.validate().is_err());
    }

    #[test]
    fn save_empty_writes_zero_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("zero.jsonl");
        save_corpus(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }

    #[test]
    fn filter_analyzed_drops_nulls_preserving_order() {
        let mut records = Vec::new();
        for i in 0..5 {
            let mut r = ContractRecord::new(format!("contract C{i} {{}}"), false);
            if i != 1 && i != 3 {
                r.vulnerabilities = Some(vec![]);
                r.confidences = Some(vec![]);
                r.impacts = Some(vec![]);
            }
            records.push(r);
        }
        let kept = filter_analyzed(&records);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].source, "contract C0 {}");
        assert_eq!(kept[1].source, "contract C2 {}");
        assert_eq!(kept[2].source, "contract C4 {}");

        let all_null: Vec<ContractRecord> =
            (0..3).map(|_| ContractRecord::new("c".into(), false)).collect();
        assert!(filter_analyzed(&all_null).is_empty());
    }

    #[test]
    fn filter_matches_paper_scale_reduction() {
        // 2474 records, 474 unanalyzed -> 2000 analyzed.
        let mut records = Vec::new();
        for i in 0..2474 {
            let mut r = ContractRecord::new(format!("contract C{i} {{}}"), false);
            if i >= 474 {
                r.vulnerabilities = Some(vec![]);
                r.confidences = Some(vec![]);
                r.impacts = Some(vec![]);
            }
            records.push(r);
        }
        assert_eq!(filter_analyzed(&records).len(), 2000);
    }

    fn labeled_corpus(n_malicious: usize, n_benign: usize) -> Vec<ContractRecord> {
        let mut records = Vec::new();
        for i in 0..(n_malicious + n_benign) {
            records.push(ContractRecord::new(format!("c{i}"), i < n_malicious));
        }
        records
    }

    #[test]
    fn stratified_reduce_exact_counts_at_paper_ratio() {
        let records = labeled_corpus(500, 1700);
        let out = stratified_reduce(&records, 2000, 0.2, 9).unwrap();
        assert_eq!(out.len(), 2000);
        assert_eq!(out.iter().filter(|r| r.malicious).count(), 400);
        assert_eq!(out.iter().filter(|r| !r.malicious).count(), 1600);
    }

    #[test]
    fn stratified_reduce_small_case() {
        let records = labeled_corpus(3, 7);
        let out = stratified_reduce(&records, 5, 0.2, 1).unwrap();
        assert_eq!(out.iter().filter(|r| r.malicious).count(), 1);
        assert_eq!(out.iter().filter(|r| !r.malicious).count(), 4);
    }

    #[test]
    fn stratified_reduce_identity_when_target_matches() {
        let records = labeled_corpus(2, 8);
        let out = stratified_reduce(&records, 10, 0.2, 3).unwrap();
        assert_eq!(out, records);
    }

    #[test]
    fn stratified_reduce_deterministic_per_seed() {
        let records = labeled_corpus(50, 150);
        let a = stratified_reduce(&records, 100, 0.2, 11).unwrap();
        let b = stratified_reduce(&records, 100, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let c = stratified_reduce(&records, 100, 0.2, 12).unwrap();
        assert_eq!(c.iter().filter(|r| r.malicious).count(), 20);
        assert_ne!(a, c, "different seeds should select different subsets");
    }

    #[test]
    fn stratified_reduce_insufficient_label() {
        let records = labeled_corpus(1, 9);
        match stratified_reduce(&records, 10, 0.5, 0) {
            Err(CorpusError::InsufficientLabel { label, need, have }) => {
                assert_eq!(label, "malicious");
                assert_eq!(need, 5);
                assert_eq!(have, 1);
            }
            other => panic!("expected InsufficientLabel, got {other:?}"),
        }
    }

    #[test]
    fn csv_import_with_json_list_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("in.csv");
        let csv = "contract_address,contract_source,malicious,vulnerability,confidence,impact\n\
            0x1234567890abcdef1234567890abcdef12345678,\"contract A {}\",True,\"[\"\"tx-origin\"\"]\",\"[\"\"MEDIUM\"\"]\",\"[\"\"MEDIUM\"\"]\"\n\
            ,\"contract B {}\",False,,,\n\
            ,\"contract C {}\",false,[],[],[]\n";
        std::fs::write(&path, csv).unwrap();
        let records = load_corpus_csv(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].vulnerabilities.as_deref(), Some(&["tx-origin".to_string()][..]));
        assert!(records[0].malicious);
        assert!(!records[1].is_analyzed(), "empty cell is a null list");
        assert!(records[2].is_analyzed(), "[] is analyzed-and-clean");
        assert_eq!(records[2].vulnerabilities.as_deref(), Some(&[][..]));
    }

    proptest! {
        // Escaping survives arbitrary source text, including newlines and quotes.
        #[test]
        fn round_trip_any_source(source in ".*", malicious in any::<bool>()) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.jsonl");
            let records = vec![ContractRecord::new(source, malicious)];
            save_corpus(&records, &path).unwrap();
            let loaded = load_corpus(&path).unwrap();
            prop_assert_eq!(loaded, records);
        }

        #[test]
        fn round_trip_record_lists(
            sources in proptest::collection::vec("[ -~\n\"\\\\]{0,40}", 0..5),
            n_findings in 0usize..4,
        ) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.jsonl");
            let records: Vec<ContractRecord> = sources
                .into_iter()
                .enumerate()
                .map(|(i, source)| ContractRecord {
                    address: None,
                    source,
                    malicious: i % 2 == 0,
                    vulnerabilities: Some(vec!["tx-origin".into(); n_findings]),
                    confidences: Some(vec![Severity::Medium; n_findings]),
                    impacts: Some(vec![Severity::High; n_findings]),
                })
                .collect();
            save_corpus(&records, &path).unwrap();
            prop_assert_eq!(load_corpus(&path).unwrap(), records);
        }
    }
}

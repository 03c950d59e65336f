//! Synthetic corpus generation from a bank of vulnerability snippets.
//!
//! A [`SnippetBank`] holds, per detector, a pair of function snippets
//! (vulnerable and repaired) plus a set of benign base contracts that carry
//! an injection marker. Generated contracts are a base with zero or more
//! vulnerable snippets spliced in at the marker, so the analyzer's verdict
//! on a generated contract is known by construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{round_half_up, ContractRecord};
use crate::seeds::derive_seed;

/// Line marker in a base template that is replaced by injected snippets.
pub const INJECTION_MARKER: &str = "// __INJECT__";

/// Placeholder in a base template replaced by a per-contract hex tag.
pub const TAG_MARKER: &str = "__TAG__";

const SNIPPET_EXTENSION: &str = "snippet";
const BASE_EXTENSION: &str = "sol";
const VULNERABLE_HEADER: &str = "== vulnerable ==";
const REPAIRED_HEADER: &str = "== repaired ==";

/// Largest number of snippets injected into one generated contract.
const MAX_VULNS_PER_CONTRACT: usize = 3;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("requested {requested} vulnerabilities but at most {available} are available")]
    TooManyVulns { requested: usize, available: usize },
    #[error("malicious contract must inject at least one vulnerability")]
    NoVulnsRequested,
    #[error("malformed snippet bank: {0}")]
    BadBank(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Vulnerable source fragment together with its fixed counterpart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnippetPair {
    pub vulnerable: String,
    pub repaired: String,
}

/// Per-detector snippet pairs plus benign base templates.
#[derive(Debug, Clone)]
pub struct SnippetBank {
    snippets: BTreeMap<String, SnippetPair>,
    bases: Vec<String>,
}

/// Files compiled into the binary so generation works without any data dir.
const BUILTIN_SNIPPETS: [&str; 5] = [
    include_str!("../assets/snippets/reentrancy-eth.snippet"),
    include_str!("../assets/snippets/suicidal.snippet"),
    include_str!("../assets/snippets/timestamp.snippet"),
    include_str!("../assets/snippets/tx-origin.snippet"),
    include_str!("../assets/snippets/unchecked-send.snippet"),
];

const BUILTIN_BASES: [&str; 2] = [
    include_str!("../assets/snippets/base_ledger.sol"),
    include_str!("../assets/snippets/base_vault.sol"),
];

impl SnippetBank {
    /// Bank shipped with the binary, one pair per builtin detector.
    pub fn builtin() -> SnippetBank {
        let mut snippets = BTreeMap::new();
        for text in BUILTIN_SNIPPETS {
            let (name, pair) = parse_snippet_file(text).expect("builtin snippet is well formed");
            snippets.insert(name, pair);
        }
        let bases: Vec<String> = BUILTIN_BASES.iter().map(|b| b.to_string()).collect();
        for base in &bases {
            validate_base(base).expect("builtin base is well formed");
        }
        SnippetBank { snippets, bases }
    }

    /// Loads a bank from a directory of `.snippet` pair files and `.sol`
    /// base templates. Files are read in name order so the bank contents
    /// do not depend on directory iteration order.
    pub fn load_dir(dir: &Path) -> Result<SnippetBank, GenError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|entry| entry.path())
            .collect();
        paths.sort();

        let mut snippets = BTreeMap::new();
        let mut bases = Vec::new();
        for path in paths {
            let ext = path.extension().and_then(|e| e.to_str());
            match ext {
                Some(SNIPPET_EXTENSION) => {
                    let text = fs::read_to_string(&path)?;
                    let (name, pair) = parse_snippet_file(&text).map_err(|e| {
                        GenError::BadBank(format!("{}: {e}", path.display()))
                    })?;
                    if snippets.insert(name.clone(), pair).is_some() {
                        return Err(GenError::BadBank(format!(
                            "duplicate snippet for detector {name}"
                        )));
                    }
                }
                Some(BASE_EXTENSION) => {
                    let text = fs::read_to_string(&path)?;
                    validate_base(&text).map_err(|e| {
                        GenError::BadBank(format!("{}: {e}", path.display()))
                    })?;
                    bases.push(text);
                }
                _ => {}
            }
        }
        if snippets.is_empty() {
            return Err(GenError::BadBank("no snippet files found".into()));
        }
        if bases.is_empty() {
            return Err(GenError::BadBank("no base templates found".into()));
        }
        Ok(SnippetBank { snippets, bases })
    }

    /// Detector names covered by the bank, in sorted order.
    pub fn detectors(&self) -> Vec<&str> {
        self.snippets.keys().map(String::as_str).collect()
    }

    pub fn pair(&self, detector: &str) -> Option<&SnippetPair> {
        self.snippets.get(detector)
    }

    pub fn bases(&self) -> &[String] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Replaces every vulnerable snippet occurrence with its repaired pair.
    ///
    /// Matching is textual, so this fixes exactly the fragments that
    /// generation injected verbatim. Sources without any known fragment
    /// come back unchanged.
    pub fn repair_source(&self, source: &str) -> String {
        let mut out = source.to_string();
        for pair in self.snippets.values() {
            out = out.replace(&pair.vulnerable, &pair.repaired);
        }
        out
    }
}

/// Parses one snippet file: front matter naming the detector, then the
/// vulnerable and repaired sections.
fn parse_snippet_file(text: &str) -> Result<(String, SnippetPair), GenError> {
    let bad = |msg: &str| GenError::BadBank(msg.to_string());

    let rest = text
        .strip_prefix("---\n")
        .ok_or_else(|| bad("missing front matter opening"))?;
    let (front, body) = rest
        .split_once("\n---\n")
        .ok_or_else(|| bad("missing front matter closing"))?;

    let mut detector = None;
    for line in front.lines() {
        if let Some((key, value)) = line.split_once(':') {
            if key.trim() == "detector" {
                detector = Some(value.trim().to_string());
            }
        }
    }
    let detector = detector.ok_or_else(|| bad("front matter lacks a detector key"))?;
    if detector.is_empty() {
        return Err(bad("detector name is empty"));
    }

    let after_vulnerable = body
        .split_once(VULNERABLE_HEADER)
        .ok_or_else(|| bad("missing vulnerable section"))?
        .1;
    let (vulnerable, repaired) = after_vulnerable
        .split_once(REPAIRED_HEADER)
        .ok_or_else(|| bad("missing repaired section"))?;

    let vulnerable = vulnerable.trim_matches('\n').to_string();
    let repaired = repaired.trim_matches('\n').to_string();
    if vulnerable.is_empty() || repaired.is_empty() {
        return Err(bad("snippet section is empty"));
    }
    if vulnerable == repaired {
        return Err(bad("vulnerable and repaired sections are identical"));
    }
    Ok((detector, SnippetPair { vulnerable, repaired }))
}

fn validate_base(base: &str) -> Result<(), GenError> {
    let markers = base
        .lines()
        .filter(|line| line.trim() == INJECTION_MARKER)
        .count();
    if markers != 1 {
        return Err(GenError::BadBank(format!(
            "base template must contain exactly one injection marker line, found {markers}"
        )));
    }
    if !base.contains(TAG_MARKER) {
        return Err(GenError::BadBank("base template lacks a tag marker".into()));
    }
    Ok(())
}

/// Replaces the marker line with the snippet block, or removes the line
/// entirely when there is nothing to inject.
fn inject(base: &str, block: &str) -> String {
    let mut out = String::with_capacity(base.len() + block.len());
    for line in base.lines() {
        if line.trim() == INJECTION_MARKER {
            if !block.is_empty() {
                out.push_str(block);
                out.push('\n');
            }
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Builds one synthetic contract. The same seed always yields the same
/// record; distinct snippets are chosen without replacement so a malicious
/// contract triggers exactly `n_vulns` distinct detectors.
///
/// The record's vulnerability lists are left unset: labeling findings is
/// the analyzer's job, not the generator's.
pub fn generate_contract(
    bank: &SnippetBank,
    seed: u64,
    malicious: bool,
    n_vulns: usize,
) -> Result<ContractRecord, GenError> {
    let available = if malicious { bank.snippets.len() } else { 0 };
    if n_vulns > available {
        return Err(GenError::TooManyVulns {
            requested: n_vulns,
            available,
        });
    }
    if malicious && n_vulns == 0 {
        return Err(GenError::NoVulnsRequested);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = &bank.bases[rng.gen_range(0..bank.bases.len())];
    let tag: u64 = rng.gen();

    let names: Vec<&String> = bank.snippets.keys().collect();
    let mut chosen = rand::seq::index::sample(&mut rng, names.len().max(1), n_vulns).into_vec();
    chosen.sort_unstable();
    let block = chosen
        .iter()
        .map(|&i| bank.snippets[names[i]].vulnerable.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");

    let mut tag_text = String::new();
    write!(tag_text, "{tag:016x}").expect("writing to a String cannot fail");
    let source = inject(base, &block).replace(TAG_MARKER, &tag_text);
    Ok(ContractRecord::new(source, malicious))
}

/// Generates `n` contracts with `round(n * malicious_ratio)` malicious ones
/// first, each seeded independently from the corpus seed and its index.
/// Malicious contracts carry between one and three distinct vulnerabilities.
pub fn generate_corpus(
    bank: &SnippetBank,
    n: usize,
    malicious_ratio: f64,
    seed: u64,
) -> Result<Vec<ContractRecord>, GenError> {
    assert!(
        (0.0..=1.0).contains(&malicious_ratio),
        "malicious_ratio must lie in [0, 1]"
    );
    let n_malicious = round_half_up(n as f64 * malicious_ratio).min(n);
    let max_vulns = bank.snippets.len().min(MAX_VULNS_PER_CONTRACT);

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let malicious = i < n_malicious;
        let record_seed = derive_seed(seed, i as u64);
        let n_vulns = if malicious {
            1 + (record_seed % max_vulns as u64) as usize
        } else {
            0
        };
        records.push(generate_contract(bank, record_seed, malicious, n_vulns)?);
    }
    Ok(records)
}

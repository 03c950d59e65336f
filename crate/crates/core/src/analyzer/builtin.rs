//! Built-in deterministic detectors, token patterns over
//! comment/string-stripped source. They stand in for the external
//! analyzer when running offline; each emits at most one finding.

use super::{AnalysisReport, AnalysisStatus, DetectorRegistry, Finding};
use crate::solprep::strip_comments_and_strings;

/// Run the five built-in detectors. Pure: identical source gives an
/// identical report, status is always Ok, and every finding carries the
/// registry's (impact, confidence) for its name.
pub fn analyze_builtin(source: &str) -> AnalysisReport {
    let stripped = strip_comments_and_strings(source);
    let bodies = function_bodies(&stripped);

    let checks: [(&str, bool); 5] = [
        ("reentrancy-eth", detect_reentrancy(&bodies)),
        ("suicidal", detect_suicidal(&bodies)),
        ("timestamp", detect_timestamp(&stripped)),
        ("tx-origin", detect_tx_origin(&stripped)),
        ("unchecked-send", detect_unchecked_send(&stripped)),
    ];

    let registry = DetectorRegistry::builtin();
    let findings = checks
        .iter()
        .filter(|(_, hit)| *hit)
        .map(|(name, _)| {
            let (impact, confidence) = registry.get(name).expect("builtin name registered");
            Finding {
                detector: name.to_string(),
                impact,
                confidence,
            }
        })
        .collect();

    AnalysisReport {
        status: AnalysisStatus::Ok,
        compiler_versions_used: Vec::new(),
        findings,
    }
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn boundary_before(bytes: &[u8], i: usize) -> bool {
    i == 0 || !is_ident(bytes[i - 1])
}

fn boundary_after(bytes: &[u8], end: usize) -> bool {
    end >= bytes.len() || !is_ident(bytes[end])
}

/// First position at or after `from` where `tokens` appear in order,
/// separated by optional whitespace only. Returns (start, end).
fn find_token_seq(text: &str, from: usize, tokens: &[&str]) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    'outer: for start in from..bytes.len() {
        let mut pos = start;
        for (t, token) in tokens.iter().enumerate() {
            if t > 0 {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
            }
            if !text[pos..].starts_with(token) {
                continue 'outer;
            }
            pos += token.len();
        }
        return Some((start, pos));
    }
    None
}

/// All occurrences of a token sequence, word-boundary checked at both
/// ends.
fn bounded_occurrences(text: &str, tokens: &[&str]) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some((start, end)) = find_token_seq(text, from, tokens) {
        if boundary_before(bytes, start) && boundary_after(bytes, end) {
            out.push((start, end));
        }
        from = start + 1;
    }
    out
}

/// Bodies of `function ... { ... }` declarations (brace-matched,
/// nested blocks included); bodiless declarations are skipped.
fn function_bodies(stripped: &str) -> Vec<&str> {
    let bytes = stripped.as_bytes();
    let mut bodies = Vec::new();
    let mut from = 0;
    while let Some((kw_start, kw_end)) = find_token_seq(stripped, from, &["function"]) {
        from = kw_end;
        if !boundary_before(bytes, kw_start) || !boundary_after(bytes, kw_end) {
            continue;
        }
        let mut i = kw_end;
        let open = loop {
            if i >= bytes.len() || bytes[i] == b';' {
                break None;
            }
            if bytes[i] == b'{' {
                break Some(i);
            }
            i += 1;
        };
        let Some(open) = open else { continue };
        let mut depth = 1;
        let mut close = bytes.len();
        let mut j = open + 1;
        while j < bytes.len() {
            match bytes[j] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = j;
                        break;
                    }
                }
                _ => {}
            }
            j += 1;
        }
        bodies.push(&stripped[open + 1..close]);
        from = close;
    }
    bodies
}

/// Statement containing `pos`: the slice between the surrounding
/// `;`/`{`/`}` boundaries.
fn statement_around(text: &str, pos: usize) -> &str {
    let bytes = text.as_bytes();
    let start = bytes[..pos]
        .iter()
        .rposition(|b| matches!(b, b';' | b'{' | b'}'))
        .map_or(0, |i| i + 1);
    let end = bytes[pos..]
        .iter()
        .position(|b| matches!(b, b';' | b'{' | b'}'))
        .map_or(bytes.len(), |i| pos + i);
    &text[start..end]
}

fn without_whitespace(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn word_occurs(text: &str, word: &str) -> bool {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(i) = text[from..].find(word) {
        let start = from + i;
        let end = start + word.len();
        if boundary_before(bytes, start) && boundary_after(bytes, end) {
            return true;
        }
        from = start + 1;
    }
    false
}

/// Positions of `=` that start an assignment operator: not `==`, not
/// the right half of a comparison, not the `=>` mapping arrow.
fn assignment_positions(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for i in 0..bytes.len() {
        if bytes[i] != b'=' {
            continue;
        }
        if bytes.get(i + 1) == Some(&b'=') || bytes.get(i + 1) == Some(&b'>') {
            continue;
        }
        if i > 0 && matches!(bytes[i - 1], b'=' | b'!' | b'<' | b'>') {
            continue;
        }
        out.push(i);
    }
    out
}

/// Leftmost identifier of the expression assigned at `eq`, e.g.
/// `balances[msg.sender] +=` gives "balances".
fn lhs_root(text: &str, eq: usize) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut j = eq;
    if j > 0 && matches!(bytes[j - 1], b'+' | b'-' | b'*' | b'/' | b'%' | b'|' | b'&' | b'^') {
        j -= 1;
    }
    while j > 0 && bytes[j - 1].is_ascii_whitespace() {
        j -= 1;
    }
    let mut root: Option<(usize, usize)> = None;
    loop {
        if j == 0 {
            break;
        }
        match bytes[j - 1] {
            b']' => {
                let mut depth = 1;
                j -= 1;
                while j > 0 && depth > 0 {
                    j -= 1;
                    match bytes[j] {
                        b']' => depth += 1,
                        b'[' => depth -= 1,
                        _ => {}
                    }
                }
                if depth > 0 {
                    return None;
                }
            }
            b'.' => j -= 1,
            b if is_ident(b) => {
                let end = j;
                while j > 0 && is_ident(bytes[j - 1]) {
                    j -= 1;
                }
                root = Some((j, end));
            }
            _ => break,
        }
    }
    root.map(|(s, e)| &text[s..e])
}

/// External value call (`.call{value: ...}` or legacy `.call.value(`)
/// followed in the same body by an assignment whose root identifier was
/// already used before the call.
fn detect_reentrancy(bodies: &[&str]) -> bool {
    for body in bodies {
        for pattern in [
            &[".call", "{", "value", ":"][..],
            &[".call", ".", "value", "("][..],
        ] {
            let mut from = 0;
            while let Some((call_start, call_end)) = find_token_seq(body, from, pattern) {
                from = call_start + 1;
                let before = &body[..call_start];
                let after = &body[call_end..];
                for eq in assignment_positions(after) {
                    if let Some(root) = lhs_root(after, eq) {
                        if word_occurs(before, root) {
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}

/// `selfdestruct(` reachable with no `require(msg.sender` guard earlier
/// in the same body.
fn detect_suicidal(bodies: &[&str]) -> bool {
    for body in bodies {
        let bytes = body.as_bytes();
        let mut from = 0;
        while let Some((start, _)) = find_token_seq(body, from, &["selfdestruct", "("]) {
            from = start + 1;
            if !boundary_before(bytes, start) {
                continue;
            }
            let guard = without_whitespace(&body[..start]);
            if !guard.contains("require(msg.sender") {
                return true;
            }
        }
    }
    false
}

/// `block.timestamp` or bare `now` inside a comparison or a require
/// argument.
fn detect_timestamp(stripped: &str) -> bool {
    let mut hits = bounded_occurrences(stripped, &["block", ".", "timestamp"]);
    hits.extend(bounded_occurrences(stripped, &["now"]));
    for (start, _) in hits {
        let stmt = statement_around(stripped, start);
        let compared =
            stmt.contains('<') || stmt.contains('>') || stmt.contains("==") || stmt.contains("!=");
        if compared || without_whitespace(stmt).contains("require(") {
            return true;
        }
    }
    false
}

/// `tx.origin` anywhere in executable code.
fn detect_tx_origin(stripped: &str) -> bool {
    !bounded_occurrences(stripped, &["tx", ".", "origin"]).is_empty()
}

/// `.send(` as a bare statement: not under require/if/assert/while, not
/// on the right of an assignment, not returned.
fn detect_unchecked_send(stripped: &str) -> bool {
    let bytes = stripped.as_bytes();
    let mut from = 0;
    while let Some((start, _)) = find_token_seq(stripped, from, &[".send", "("]) {
        from = start + 1;
        if !boundary_after(bytes, start + ".send".len()) {
            continue;
        }
        let stmt_start = bytes[..start]
            .iter()
            .rposition(|b| matches!(b, b';' | b'{' | b'}'))
            .map_or(0, |i| i + 1);
        let stmt = statement_around(stripped, start);
        let packed = without_whitespace(stmt);
        let guarded = ["require(", "if(", "assert(", "while(", "return"]
            .iter()
            .any(|prefix| packed.starts_with(prefix));
        let assigned = !assignment_positions(&stripped[stmt_start..start]).is_empty();
        if !guarded && !assigned {
            return true;
        }
    }
    false
}

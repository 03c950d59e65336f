//! Solidity source preparation: pragma rewriting and comment/string
//! stripping.
//!
//! Both operations share one single-pass lexer that classifies the
//! source into code, comment, and string-literal spans. Nothing inside
//! a comment or string literal is ever modified, and non-pragma code is
//! copied byte for byte.

use std::ops::Range;

/// Compiler versions tried when analyzing a contract, ascending.
pub const VERSION_LADDER: [&str; 5] = ["0.4.26", "0.5.17", "0.6.12", "0.7.6", "0.8.21"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpanKind {
    Code,
    LineComment,
    BlockComment,
    Str,
}

/// Split source into contiguous spans by lexical class. Escaped quotes
/// stay inside their string; a raw newline ends a string (strings are
/// single-line in Solidity, and resyncing keeps malformed input from
/// poisoning the rest of the file). Unterminated comments and strings
/// run to end of input.
fn classify(source: &str) -> Vec<(SpanKind, Range<usize>)> {
    let bytes = source.as_bytes();
    let mut spans = Vec::new();
    let mut kind = SpanKind::Code;
    let mut start = 0;
    let mut i = 0;
    let mut quote = b'"';

    let close = |spans: &mut Vec<(SpanKind, Range<usize>)>, kind: SpanKind, start: &mut usize, end: usize| {
        if end > *start {
            spans.push((kind, *start..end));
        }
        *start = end;
    };

    while i < bytes.len() {
        match kind {
            SpanKind::Code => {
                if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'/') {
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::LineComment;
                    i += 2;
                } else if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::BlockComment;
                    i += 2;
                } else if bytes[i] == b'"' || bytes[i] == b'\'' {
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::Str;
                    quote = bytes[i];
                    i += 1;
                } else {
                    i += 1;
                }
            }
            SpanKind::LineComment => {
                if bytes[i] == b'\n' {
                    i += 1;
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::Code;
                } else {
                    i += 1;
                }
            }
            SpanKind::BlockComment => {
                if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
                    i += 2;
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::Code;
                } else {
                    i += 1;
                }
            }
            SpanKind::Str => {
                if bytes[i] == b'\\' && i + 1 < bytes.len() {
                    i += 2;
                } else if bytes[i] == quote || bytes[i] == b'\n' {
                    i += 1;
                    close(&mut spans, kind, &mut start, i);
                    kind = SpanKind::Code;
                } else {
                    i += 1;
                }
            }
        }
    }
    close(&mut spans, kind, &mut start, bytes.len());
    spans
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// Replace every `pragma solidity <expr>;` directive in executable code
/// with `pragma solidity >={version};`. Directives inside comments or
/// string literals, `pragma experimental` lines, and all other text are
/// left byte-identical. Source with no directive comes back unchanged.
/// Idempotent for a fixed version.
pub fn rewrite_pragma(source: &str, version: &str) -> String {
    debug_assert!(
        !version.is_empty() && version.bytes().all(|b| b.is_ascii_digit() || b == b'.'),
        "version must be dotted-numeric, got {version:?}"
    );
    let replacement = format!("pragma solidity >={version};");
    let bytes = source.as_bytes();
    let mut out = String::with_capacity(source.len());

    for (kind, range) in classify(source) {
        if kind != SpanKind::Code {
            out.push_str(&source[range]);
            continue;
        }
        let mut i = range.start;
        while i < range.end {
            if let Some(directive_end) = match_pragma_directive(bytes, i, range.end) {
                out.push_str(&replacement);
                i = directive_end;
            } else {
                // Advance past a whole identifier word so "pragmax" is
                // never re-tested mid-word.
                let word_start = i;
                i += 1;
                if is_ident_byte(bytes[word_start]) {
                    while i < range.end && is_ident_byte(bytes[i]) {
                        i += 1;
                    }
                }
                out.push_str(&source[word_start..i]);
            }
        }
    }
    out
}

/// If a `pragma solidity ... ;` directive starts at `i` (word-aligned,
/// fully inside the current code span), return the index just past its
/// semicolon. A directive interrupted by a comment or string is not
/// matched, so those bytes stay untouched.
fn match_pragma_directive(bytes: &[u8], i: usize, span_end: usize) -> Option<usize> {
    if i > 0 && is_ident_byte(bytes[i - 1]) {
        return None;
    }
    let after_kw = eat_keyword(bytes, i, span_end, b"pragma")?;
    let after_ws = eat_whitespace(bytes, after_kw, span_end)?;
    let after_sol = eat_keyword(bytes, after_ws, span_end, b"solidity")?;
    let mut j = after_sol;
    while j < span_end {
        if bytes[j] == b';' {
            return Some(j + 1);
        }
        j += 1;
    }
    None
}

fn eat_keyword(bytes: &[u8], i: usize, end: usize, kw: &[u8]) -> Option<usize> {
    let stop = i.checked_add(kw.len())?;
    if stop > end || &bytes[i..stop] != kw {
        return None;
    }
    if stop < end && is_ident_byte(bytes[stop]) {
        return None;
    }
    Some(stop)
}

fn eat_whitespace(bytes: &[u8], i: usize, end: usize) -> Option<usize> {
    let mut j = i;
    while j < end && bytes[j].is_ascii_whitespace() {
        j += 1;
    }
    (j > i).then_some(j)
}

/// Blank out comments and string literals, preserving newlines and byte
/// offsets, so token-pattern detectors only ever see executable code.
pub fn strip_comments_and_strings(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    for (kind, range) in classify(source) {
        let text = &source[range];
        if kind == SpanKind::Code {
            out.push_str(text);
        } else {
            for b in text.bytes() {
                out.push(if b == b'\n' { '\n' } else { ' ' });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ladder_is_five_ascending_versions() {
        assert_eq!(
            VERSION_LADDER,
            ["0.4.26", "0.5.17", "0.6.12", "0.7.6", "0.8.21"]
        );
        let parse = |v: &str| -> Vec<u32> {
            v.split('.').map(|p| p.parse().unwrap()).collect()
        };
        for pair in VERSION_LADDER.windows(2) {
            assert!(parse(pair[0]) < parse(pair[1]), "{pair:?} out of order");
        }
    }

    #[test]
    fn rewrites_caret_directive() {
        assert_eq!(
            rewrite_pragma("pragma solidity ^0.4.11;\ncontract A{}", "0.4.26"),
            "pragma solidity >=0.4.26;\ncontract A{}"
        );
    }

    #[test]
    fn directive_inside_block_comment_untouched() {
        let src = "/* pragma solidity ^0.5.0; */\ncontract A{}";
        assert_eq!(rewrite_pragma(src, "0.8.21"), src);
    }

    #[test]
    fn directive_inside_line_comment_untouched() {
        let src = "// pragma solidity ^0.5.0;\npragma solidity 0.6.0;\n";
        assert_eq!(
            rewrite_pragma(src, "0.6.12"),
            "// pragma solidity ^0.5.0;\npragma solidity >=0.6.12;\n"
        );
    }

    #[test]
    fn directive_inside_string_untouched() {
        let src = r#"contract A { string s = "pragma solidity ^0.5.0;"; }"#;
        assert_eq!(rewrite_pragma(src, "0.8.21"), src);
        let escaped = r#"contract A { string s = "x\"pragma solidity ^0.5.0;"; }"#;
        assert_eq!(rewrite_pragma(escaped, "0.8.21"), escaped);
    }

    #[test]
    fn idempotent_for_same_version() {
        let src = "pragma solidity >=0.4.0 <0.6.0;\ncontract A{}";
        let once = rewrite_pragma(src, "0.7.6");
        let twice = rewrite_pragma(&once, "0.7.6");
        assert_eq!(once, twice);
    }

    #[test]
    fn all_directives_rewritten() {
        let src = "pragma solidity ^0.4.0;\ncontract A{}\npragma solidity ^0.5.0;\n";
        assert_eq!(
            rewrite_pragma(src, "0.8.21"),
            "pragma solidity >=0.8.21;\ncontract A{}\npragma solidity >=0.8.21;\n"
        );
    }

    #[test]
    fn source_without_pragma_unchanged() {
        let src = "contract A { function f() public {} }";
        assert_eq!(rewrite_pragma(src, "0.8.21"), src);
        assert_eq!(rewrite_pragma("", "0.8.21"), "");
    }

    #[test]
    fn experimental_pragma_untouched() {
        let src = "pragma experimental ABIEncoderV2;\npragma solidity ^0.7.0;\n";
        assert_eq!(
            rewrite_pragma(src, "0.7.6"),
            "pragma experimental ABIEncoderV2;\npragma solidity >=0.7.6;\n"
        );
    }

    #[test]
    fn word_boundaries_respected() {
        let src = "uint mypragma = 1; pragmatic(); pragma soliditys;";
        assert_eq!(rewrite_pragma(src, "0.8.21"), src);
    }

    #[test]
    fn unterminated_directive_untouched() {
        let src = "pragma solidity ^0.4.0";
        assert_eq!(rewrite_pragma(src, "0.8.21"), src);
    }

    #[test]
    fn strip_blanks_comments_and_strings() {
        let src = "a // x\nb /* y\nz */ c \"s\" d";
        let stripped = strip_comments_and_strings(src);
        assert_eq!(stripped, "a     \nb     \n     c     d");
        assert_eq!(stripped.len(), src.len());
    }

    #[test]
    fn strip_keeps_code_verbatim() {
        let src = "contract A { function f() public returns (uint) { return 1; } }";
        assert_eq!(strip_comments_and_strings(src), src);
    }

    // Generator for the placement property: a directive dropped into a
    // code, line-comment, block-comment, or string context. Only the
    // code-context directive may change.
    fn placement() -> impl Strategy<Value = (String, bool)> {
        let expr = prop_oneof![
            Just("^0.4.11".to_string()),
            Just(">=0.4.0 <0.6.0".to_string()),
            Just("0.5.17".to_string()),
            Just(" ~0.6.2 ".to_string()),
        ];
        (expr, 0usize..4, "[a-z ]{0,12}").prop_map(|(expr, ctx, pad)| {
            let directive = format!("pragma solidity {expr};");
            match ctx {
                0 => (format!("{pad}\n{directive}\ncontract A{{}}"), true),
                1 => (format!("// {directive}\ncontract A{{{pad}}}"), false),
                2 => (format!("/* {pad}\n{directive} */ contract A{{}}"), false),
                _ => (
                    format!("contract A{{ string s = \"{directive}\"; //{pad}\n}}"),
                    false,
                ),
            }
        })
    }

    proptest! {
        #[test]
        fn only_code_context_directives_change((src, in_code) in placement()) {
            let out = rewrite_pragma(&src, "0.8.21");
            if in_code {
                prop_assert!(out.contains("pragma solidity >=0.8.21;"));
                prop_assert!(!out.contains('^'));
            } else {
                prop_assert_eq!(&out, &src);
            }
            let again = rewrite_pragma(&out, "0.8.21");
            prop_assert_eq!(again, out);
        }

        // Rewriting never corrupts arbitrary text: output parses back to
        // the same span structure outside directives, and text with no
        // directive is byte-identical.
        #[test]
        fn arbitrary_text_without_directive_unchanged(src in "[ -~\n]{0,80}") {
            prop_assume!(!src.contains("pragma"));
            prop_assert_eq!(rewrite_pragma(&src, "0.8.21"), src.clone());
            prop_assert_eq!(strip_comments_and_strings(&src).len(), src.len());
        }
    }
}

//! Aggregation of repair sessions into histograms, reduction figures, and
//! the run's summary files.
//!
//! All three outputs (`summary.json`, `contracts.csv`, `impact_chart.svg`)
//! are pure functions of their inputs, so a re-run over the same sessions
//! produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::AnalysisReport;
use crate::corpus::Severity;
use crate::forest::Metrics;
use crate::repair::{RepairOutcome, RepairSession};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Finding counts indexed by severity code (0 = OPTIMIZATION .. 4 = HIGH).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImpactHistogram {
    pub counts: [u64; 5],
}

impl ImpactHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, severity: Severity) -> u64 {
        self.counts[severity.code()]
    }

    fn add_report(&mut self, report: &AnalysisReport) {
        for finding in &report.findings {
            self.counts[finding.impact.code()] += 1;
        }
    }
}

/// Counts findings by impact across all reports. Null reports carry no
/// findings and contribute nothing.
pub fn impact_histogram<'a>(
    reports: impl IntoIterator<Item = &'a AnalysisReport>,
) -> ImpactHistogram {
    let mut histogram = ImpactHistogram::default();
    for report in reports {
        histogram.add_report(report);
    }
    histogram
}

/// Fraction of findings eliminated: (before − after) / before. `None` when
/// there was nothing to eliminate; negative when repairs made things worse.
pub fn reduction_percentage(before: &ImpactHistogram, after: &ImpactHistogram) -> Option<f64> {
    let before_total = before.total();
    if before_total == 0 {
        return None;
    }
    let after_total = after.total();
    Some((before_total as f64 - after_total as f64) / before_total as f64)
}

/// A session's end state: the best candidate when one exists, otherwise
/// the contract is unchanged and keeps its original findings.
pub fn session_after_report(session: &RepairSession) -> &AnalysisReport {
    session.best_report.as_ref().unwrap_or(&session.report_before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub clean: usize,
    pub improved: usize,
    pub unchanged: usize,
    pub failed: usize,
}

impl OutcomeCounts {
    pub fn from_sessions(sessions: &[RepairSession]) -> OutcomeCounts {
        let mut counts = OutcomeCounts::default();
        for session in sessions {
            match session.outcome {
                RepairOutcome::Clean => counts.clean += 1,
                RepairOutcome::Improved => counts.improved += 1,
                RepairOutcome::Unchanged => counts.unchanged += 1,
                RepairOutcome::Failed => counts.failed += 1,
            }
        }
        counts
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub before: ImpactHistogram,
    pub after: ImpactHistogram,
    pub total_before: u64,
    pub total_after: u64,
    pub reduction: Option<f64>,
    pub outcomes: OutcomeCounts,
    pub metrics: Option<Metrics>,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONTRACTS_FILE: &str = "contracts.csv";
pub const CHART_FILE: &str = "impact_chart.svg";

/// Builds the summary for a set of sessions without touching the disk.
pub fn summarize(sessions: &[RepairSession], metrics: Option<Metrics>) -> Summary {
    let before = impact_histogram(sessions.iter().map(|s| &s.report_before));
    let after = impact_histogram(sessions.iter().map(session_after_report));
    Summary {
        before,
        after,
        total_before: before.total(),
        total_after: after.total(),
        reduction: reduction_percentage(&before, &after),
        outcomes: OutcomeCounts::from_sessions(sessions),
        metrics,
    }
}

/// Writes `summary.json`, `contracts.csv`, and `impact_chart.svg` under
/// `out_dir` and returns the summary. Deterministic for fixed inputs.
pub fn emit_summary(
    sessions: &[RepairSession],
    metrics: Option<Metrics>,
    out_dir: &Path,
) -> Result<Summary, ReportError> {
    fs::create_dir_all(out_dir)?;
    let summary = summarize(sessions, metrics);

    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out_dir.join(SUMMARY_FILE), json)?;

    write_contracts_csv(sessions, &out_dir.join(CONTRACTS_FILE))?;

    let chart = render_impact_chart(&summary.before, &summary.after);
    fs::write(out_dir.join(CHART_FILE), chart)?;

    Ok(summary)
}

fn write_contracts_csv(sessions: &[RepairSession], path: &Path) -> Result<(), ReportError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "contract_address",
        "malicious",
        "outcome",
        "attempts",
        "findings_before",
        "findings_after",
        "high_before",
        "high_after",
    ])?;
    for session in sessions {
        let before = impact_histogram([&session.report_before]);
        let after = impact_histogram([session_after_report(session)]);
        writer.write_record([
            session.original.address.clone().unwrap_or_default(),
            session.original.malicious.to_string(),
            session.outcome.as_str().to_string(),
            session.attempts.len().to_string(),
            before.total().to_string(),
            after.total().to_string(),
            before.count(Severity::High).to_string(),
            after.count(Severity::High).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Display order for the chart: worst impact first.
const CHART_ORDER: [Severity; 5] = [
    Severity::High,
    Severity::Medium,
    Severity::Low,
    Severity::Informational,
    Severity::Optimization,
];

const BEFORE_COLOR: &str = "#c0504d";
const AFTER_COLOR: &str = "#4f81bd";

/// Renders a grouped bar chart of finding counts by impact level, before
/// and after repair. Pure string assembly with fixed-precision geometry,
/// so the output is byte-stable.
pub fn render_impact_chart(before: &ImpactHistogram, after: &ImpactHistogram) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const PLOT_LEFT: f64 = 70.0;
    const PLOT_RIGHT: f64 = 620.0;
    const PLOT_TOP: f64 = 50.0;
    const PLOT_BOTTOM: f64 = 350.0;
    const BAR_WIDTH: f64 = 36.0;
    const BAR_GAP: f64 = 8.0;

    let max_count = CHART_ORDER
        .iter()
        .map(|&s| before.count(s).max(after.count(s)))
        .max()
        .unwrap_or(0);
    // Scale ceiling: the next multiple of five, never less than five, so
    // gridline labels stay integers.
    let y_max = max_count.max(1).div_ceil(5) * 5;
    let plot_height = PLOT_BOTTOM - PLOT_TOP;
    let group_width = (PLOT_RIGHT - PLOT_LEFT) / CHART_ORDER.len() as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="28" font-size="16" text-anchor="middle">Findings by impact level</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0
    );

    for tick in 0..=5u64 {
        let value = y_max * tick / 5;
        let y = PLOT_BOTTOM - plot_height * tick as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"  <line x1="{PLOT_LEFT}" y1="{y:.2}" x2="{PLOT_RIGHT}" y2="{y:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{value}</text>"#,
            PLOT_LEFT - 8.0,
            y + 4.0
        );
    }

    for (i, &severity) in CHART_ORDER.iter().enumerate() {
        let group_x = PLOT_LEFT + group_width * i as f64;
        let pair_x = group_x + (group_width - 2.0 * BAR_WIDTH - BAR_GAP) / 2.0;
        for (offset, count, color) in [
            (0.0, before.count(severity), BEFORE_COLOR),
            (BAR_WIDTH + BAR_GAP, after.count(severity), AFTER_COLOR),
        ] {
            let height = plot_height * count as f64 / y_max as f64;
            let x = pair_x + offset;
            let y = PLOT_BOTTOM - height;
            let _ = writeln!(
                svg,
                r#"  <rect x="{x:.2}" y="{y:.2}" width="{BAR_WIDTH}" height="{height:.2}" fill="{color}"/>"#
            );
            let _ = writeln!(
                svg,
                r#"  <text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{count}</text>"#,
                x + BAR_WIDTH / 2.0,
                y - 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            group_x + group_width / 2.0,
            PLOT_BOTTOM + 20.0,
            severity.name()
        );
    }

    let _ = writeln!(
        svg,
        r#"  <line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="{PLOT_LEFT}" y="{PLOT_TOP}" width="12" height="12" fill="{BEFORE_COLOR}"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="{:.2}" font-size="12">before repair</text>"#,
        PLOT_LEFT + 18.0,
        PLOT_TOP + 10.0
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="{:.2}" y="{PLOT_TOP}" width="12" height="12" fill="{AFTER_COLOR}"/>"#,
        PLOT_LEFT + 120.0
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="{:.2}" font-size="12">after repair</text>"#,
        PLOT_LEFT + 138.0,
        PLOT_TOP + 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{analyze_builtin, AnalysisStatus, Finding};
    use crate::gen::{generate_contract, SnippetBank};
    use crate::repair::{mock_repairer, repair_loop, RepairError, DEFAULT_MAX_ATTEMPTS};

    fn report_with(impacts: &[Severity]) -> AnalysisReport {
        AnalysisReport {
            status: AnalysisStatus::Ok,
            compiler_versions_used: Vec::new(),
            findings: impacts
                .iter()
                .map(|&impact| Finding {
                    detector: format!("det-{}", impact.name()),
                    impact,
                    confidence: Severity::High,
                })
                .collect(),
        }
    }

    fn mock_sessions(n_malicious: usize) -> Vec<RepairSession> {
        let bank = SnippetBank::builtin();
        (0..n_malicious)
            .map(|i| {
                let n_vulns = 1 + (i % 3);
                let mut record = generate_contract(&bank, i as u64, true, n_vulns).unwrap();
                analyze_builtin(&record.source).apply_to(&mut record);
                let mut analyzer = |src: &str| analyze_builtin(src);
                let mut llm = |prompt: &str| Ok(mock_repairer(prompt));
                repair_loop(&record, &mut analyzer, &mut llm, DEFAULT_MAX_ATTEMPTS)
            })
            .collect()
    }

    #[test]
    fn empty_report_list_gives_all_zeros() {
        let histogram = impact_histogram([]);
        assert_eq!(histogram.counts, [0; 5]);
        assert_eq!(histogram.total(), 0);
    }

    #[test]
    fn histogram_counts_by_severity_code() {
        let a = report_with(&[Severity::High, Severity::Low]);
        let b = report_with(&[Severity::High]);
        let histogram = impact_histogram([&a, &b]);
        assert_eq!(histogram.counts, [0, 0, 1, 0, 2]);
        assert_eq!(histogram.total(), 3);
        assert_eq!(histogram.count(Severity::High), 2);
    }

    #[test]
    fn null_reports_contribute_nothing() {
        let null = AnalysisReport::null();
        let real = report_with(&[Severity::Medium]);
        let histogram = impact_histogram([&null, &real, &null]);
        assert_eq!(histogram.counts, [0, 0, 0, 1, 0]);
    }

    #[test]
    fn histogram_matches_naive_recount() {
        let sessions = mock_sessions(12);
        let histogram = impact_histogram(sessions.iter().map(|s| &s.report_before));

        let mut naive = [0u64; 5];
        for session in &sessions {
            for finding in &session.report_before.findings {
                naive[finding.impact.code()] += 1;
            }
        }
        assert_eq!(histogram.counts, naive);
    }

    #[test]
    fn reduction_matches_reported_figures() {
        let before = ImpactHistogram {
            counts: [0, 0, 0, 0, 40],
        };
        let after = ImpactHistogram {
            counts: [0, 0, 0, 1, 0],
        };
        assert_eq!(reduction_percentage(&before, &after), Some(0.975));

        let before = ImpactHistogram {
            counts: [0, 0, 20, 20, 20],
        };
        let after = ImpactHistogram {
            counts: [0, 0, 0, 2, 0],
        };
        let reduction = reduction_percentage(&before, &after).unwrap();
        assert!((reduction - 0.9667).abs() < 0.0005);
    }

    #[test]
    fn reduction_is_none_when_nothing_to_reduce() {
        let zero = ImpactHistogram::default();
        let after = ImpactHistogram {
            counts: [0, 0, 0, 0, 1],
        };
        assert_eq!(reduction_percentage(&zero, &after), None);
    }

    #[test]
    fn reduction_can_be_negative() {
        let before = ImpactHistogram {
            counts: [0, 0, 0, 0, 2],
        };
        let after = ImpactHistogram {
            counts: [0, 0, 0, 0, 3],
        };
        assert_eq!(reduction_percentage(&before, &after), Some(-0.5));
    }

    #[test]
    fn summary_is_internally_consistent() {
        let sessions = mock_sessions(10);
        let summary = summarize(&sessions, None);

        assert_eq!(summary.total_before, summary.before.total());
        assert_eq!(summary.total_after, summary.after.total());
        assert_eq!(
            summary.reduction,
            reduction_percentage(&summary.before, &summary.after)
        );
        assert_eq!(summary.outcomes.clean, 10);
        assert_eq!(summary.total_after, 0);
        assert_eq!(summary.reduction, Some(1.0));
    }

    #[test]
    fn failed_sessions_keep_their_original_findings() {
        let bank = SnippetBank::builtin();
        let mut record = generate_contract(&bank, 1, true, 2).unwrap();
        analyze_builtin(&record.source).apply_to(&mut record);
        let mut analyzer = |src: &str| analyze_builtin(src);
        let mut llm = |_: &str| Err(RepairError::RefusalError);
        let session = repair_loop(&record, &mut analyzer, &mut llm, 2);

        let summary = summarize(&[session], None);
        assert_eq!(summary.total_before, 2);
        assert_eq!(summary.total_after, 2);
        assert_eq!(summary.reduction, Some(0.0));
        assert_eq!(summary.outcomes.failed, 1);
    }

    #[test]
    fn emit_summary_writes_all_three_files() {
        let sessions = mock_sessions(6);
        let metrics = crate::forest::metrics_from_counts(133, 23, 584, 60);
        let dir = tempfile::tempdir().unwrap();

        let summary = emit_summary(&sessions, Some(metrics), dir.path()).unwrap();
        assert_eq!(summary.outcomes.clean, 6);

        let json = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let loaded: Summary = serde_json::from_str(&json).unwrap();
        assert_eq!(loaded, summary);
        assert_eq!(loaded.metrics.unwrap().accuracy, metrics.accuracy);

        let csv_text = std::fs::read_to_string(dir.path().join(CONTRACTS_FILE)).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "contract_address,malicious,outcome,attempts,findings_before,findings_after,high_before,high_after"
        );
        assert_eq!(lines.count(), 6);

        let svg = std::fs::read_to_string(dir.path().join(CHART_FILE)).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn emit_summary_handles_no_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let summary = emit_summary(&[], None, dir.path()).unwrap();
        assert_eq!(summary.total_before, 0);
        assert_eq!(summary.reduction, None);
        assert!(dir.path().join(SUMMARY_FILE).exists());
        assert!(dir.path().join(CONTRACTS_FILE).exists());
        assert!(dir.path().join(CHART_FILE).exists());
    }

    #[test]
    fn emit_summary_is_deterministic() {
        let sessions = mock_sessions(5);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        emit_summary(&sessions, None, dir_a.path()).unwrap();
        emit_summary(&sessions, None, dir_b.path()).unwrap();

        for file in [SUMMARY_FILE, CONTRACTS_FILE, CHART_FILE] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    /// Regenerates the golden chart. Run explicitly, then review the SVG
    /// by eye before committing it.
    #[test]
    #[ignore = "rewrites the golden fixture"]
    fn record_golden_chart() {
        let before = ImpactHistogram {
            counts: [0, 1, 3, 5, 9],
        };
        let after = ImpactHistogram {
            counts: [0, 0, 1, 1, 0],
        };
        let golden_path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/impact_chart_golden.svg"
        );
        std::fs::write(golden_path, render_impact_chart(&before, &after)).unwrap();
    }

    #[test]
    fn chart_matches_the_golden_file() {
        let before = ImpactHistogram {
            counts: [0, 1, 3, 5, 9],
        };
        let after = ImpactHistogram {
            counts: [0, 0, 1, 1, 0],
        };
        let rendered = render_impact_chart(&before, &after);
        let golden_path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/impact_chart_golden.svg"
        );
        let golden = std::fs::read_to_string(golden_path).unwrap();
        assert_eq!(rendered, golden);
    }

    #[test]
    fn chart_scales_to_its_data() {
        let big = ImpactHistogram {
            counts: [0, 0, 0, 0, 37],
        };
        let svg = render_impact_chart(&big, &ImpactHistogram::default());
        assert!(svg.contains(">40<"), "y axis should round up to 40");
        assert!(svg.contains(">37<"), "bar label should show the count");
    }

    #[test]
    fn csv_address_column_is_empty_for_unfetched_contracts() {
        let sessions = mock_sessions(1);
        assert!(sessions[0].original.address.is_none());
        let dir = tempfile::tempdir().unwrap();
        emit_summary(&sessions, None, dir.path()).unwrap();
        let csv_text = std::fs::read_to_string(dir.path().join(CONTRACTS_FILE)).unwrap();
        let row = csv_text.lines().nth(1).unwrap();
        assert!(row.starts_with(',', ), "row should start with an empty address: {row}");
    }
}

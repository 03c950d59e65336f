//! End-to-end batch pipeline: corpus in, summary out.
//!
//! Stages run in a fixed order (generate or load, analyze, prepare,
//! vectorize, train, evaluate, repair, report) and every stage writes its
//! output under the run directory, so any stage's input can be inspected
//! or re-fed to the matching subcommand. The default configuration is
//! fully offline: built-in analyzer, mock repairer, a transport that
//! refuses every request.

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::analyzer::{
    analyze_builtin, analyze_multi_version, AnalysisReport, CommandTemplate, ExternalAnalyzer,
};
use crate::clock::{Clock, RealClock};
use crate::corpus::{filter_analyzed, load_corpus, save_corpus, stratified_reduce, ContractRecord};
use crate::features::{build_vocabulary, vectorize, FeatureVector};
use crate::forest::{
    evaluate_metrics, predict_batch, save_model, train_forest, Dataset, ForestParams, Metrics,
};
use crate::gen::{generate_corpus, SnippetBank};
use crate::repair::{
    chat_complete, mock_repairer_with, repair_loop, save_sessions, LlmConfig, RepairSession,
};
use crate::report::{emit_summary, Summary};
use crate::seeds::derive_seed;
use crate::solprep::VERSION_LADDER;
use crate::transport::{DenyTransport, Transport};

/// Per-stage seed streams, all derived from the single run seed. Standalone
/// subcommands use the same streams so a stage run by itself reproduces the
/// pipeline's bytes for the same seed.
pub const STAGE_GEN: u64 = 1;
pub const STAGE_REDUCE: u64 = 2;
pub const STAGE_SPLIT: u64 = 3;
pub const STAGE_FOREST: u64 = 4;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const ANALYZED_FILE: &str = "analyzed.jsonl";
pub const PREPARED_FILE: &str = "prepared.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn stage<T, E: std::fmt::Display>(
    name: &'static str,
) -> impl Fn(Result<T, E>) -> Result<T, PipelineError> {
    move |result| {
        result.map_err(|e| PipelineError {
            stage: name,
            message: e.to_string(),
        })
    }
}

/// How contracts are analyzed.
#[derive(Debug, Clone)]
pub enum AnalyzerMode {
    /// The in-process pattern analyzer; no subprocess, no compiler.
    Builtin,
    /// An external tool invoked per contract and ladder version.
    External(CommandTemplate),
}

/// Where repair responses come from.
#[derive(Debug, Clone)]
pub enum LlmMode {
    /// The deterministic snippet-swapping stand-in; no network.
    Mock,
    /// A live OpenAI-compatible chat endpoint.
    Endpoint(LlmConfig),
}

/// Inputs and knobs for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Generate a synthetic corpus of (n, malicious_ratio) instead of
    /// reading `input`.
    pub generate: Option<(usize, f64)>,
    /// Existing corpus to load when not generating.
    pub input: Option<PathBuf>,
    /// Optional stratified reduction applied after analysis:
    /// (target_size, malicious_ratio).
    pub reduce: Option<(usize, f64)>,
    /// Master seed; every randomized stage draws from its own stream
    /// derived from this.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub analyzer: AnalyzerMode,
    pub llm: LlmMode,
    /// Forest shape knobs. The `seed` field is ignored: training always
    /// uses the stream derived from the run seed.
    pub forest: ForestParams,
    pub train_fraction: f64,
    /// Worker threads for analysis, training, and repair; `None` uses the
    /// rayon default. Results are identical for any value.
    pub jobs: Option<usize>,
    /// Repair every contract with findings instead of only those the
    /// classifier flags.
    pub repair_all: bool,
    pub max_attempts: usize,
    /// Snippet bank directory; the builtin bank when unset.
    pub bank_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Hermetic defaults: builtin analyzer, mock repairer, no inputs.
    pub fn offline(out_dir: impl Into<PathBuf>) -> PipelineConfig {
        PipelineConfig {
            generate: None,
            input: None,
            reduce: None,
            seed: 7,
            out_dir: out_dir.into(),
            analyzer: AnalyzerMode::Builtin,
            llm: LlmMode::Mock,
            forest: ForestParams::default(),
            train_fraction: 0.6,
            jobs: None,
            repair_all: false,
            max_attempts: crate::repair::DEFAULT_MAX_ATTEMPTS,
            bank_dir: None,
        }
    }
}

/// What a run produced, beyond the files on disk.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub summary: Summary,
    pub metrics: Metrics,
    /// Records that survived the prepare stage.
    pub n_records: usize,
    /// Records the classifier flagged as malicious.
    pub n_flagged: usize,
    /// Repair sessions actually run.
    pub n_repaired: usize,
}

/// Runs the pipeline with the offline transport: any code path that tries
/// the network fails loudly. Live endpoints go through
/// [`run_pipeline_with`].
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    run_pipeline_with(config, &DenyTransport, &RealClock::new())
}

/// Runs the pipeline with an explicit transport and clock (used for live
/// endpoints and for tests that count network calls).
pub fn run_pipeline_with(
    config: &PipelineConfig,
    transport: &dyn Transport,
    clock: &dyn Clock,
) -> Result<PipelineOutput, PipelineError> {
    if config.generate.is_none() && config.input.is_none() {
        return Err(PipelineError {
            stage: "config",
            message: "either a corpus input or a generate spec is required".into(),
        });
    }
    if !(0.0..1.0).contains(&config.train_fraction) || config.train_fraction == 0.0 {
        return Err(PipelineError {
            stage: "config",
            message: format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                config.train_fraction
            ),
        });
    }

    with_jobs(config.jobs, || run_stages(config, transport, clock))?
}

/// Runs `f` inside a run-local thread pool of the requested size (rayon's
/// default when `None`). A local pool pins the worker count without
/// touching the global pool, so job limits hold even when the caller
/// already uses rayon.
pub fn with_jobs<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError {
            stage: "config",
            message: e.to_string(),
        })?;
    Ok(pool.install(f))
}

fn run_stages(
    config: &PipelineConfig,
    transport: &dyn Transport,
    clock: &dyn Clock,
) -> Result<PipelineOutput, PipelineError> {
    let out = &config.out_dir;
    stage("config")(std::fs::create_dir_all(out))?;

    let bank = match &config.bank_dir {
        Some(dir) => stage("config")(SnippetBank::load_dir(dir))?,
        None => SnippetBank::builtin(),
    };

    // Corpus: generate or load.
    let records: Vec<ContractRecord> = match config.generate {
        Some((n, ratio)) => {
            let generated = stage("generate")(generate_corpus(
                &bank,
                n,
                ratio,
                derive_seed(config.seed, STAGE_GEN),
            ))?;
            stage("generate")(save_corpus(&generated, &out.join(CORPUS_FILE)))?;
            generated
        }
        None => {
            let input = config.input.as_ref().expect("validated above");
            stage("ingest")(load_corpus(input))?
        }
    };

    // Analyze every contract; reports land back on the records.
    let reports = analyze_records(&records, &config.analyzer);
    let mut analyzed = records;
    for (record, report) in analyzed.iter_mut().zip(&reports) {
        report.apply_to(record);
    }
    stage("analyze")(save_corpus(&analyzed, &out.join(ANALYZED_FILE)))?;

    // Prepare: drop unanalyzed records, optionally reduce to a stratified
    // subset.
    let mut prepared = filter_analyzed(&analyzed);
    if let Some((target, ratio)) = config.reduce {
        prepared = stage("prepare")(stratified_reduce(
            &prepared,
            target,
            ratio,
            derive_seed(config.seed, STAGE_REDUCE),
        ))?;
    }
    stage("prepare")(save_corpus(&prepared, &out.join(PREPARED_FILE)))?;

    // Features: vocabulary over the whole prepared corpus, then one
    // vector per record.
    let vocabulary = build_vocabulary(&prepared);
    stage("features")(vocabulary.save(&out.join(VOCAB_FILE)))?;
    let vectors: Vec<FeatureVector> = stage("features")(
        prepared
            .iter()
            .map(|r| vectorize(r, &vocabulary))
            .collect::<Result<Vec<_>, _>>(),
    )?;

    // Split record/vector pairs so both sides stay aligned.
    let paired: Vec<(ContractRecord, FeatureVector)> =
        prepared.into_iter().zip(vectors).collect();
    let (train_pairs, test_pairs) = crate::features::train_test_split(
        paired,
        config.train_fraction,
        derive_seed(config.seed, STAGE_SPLIT),
    );

    // Train.
    let mut params = config.forest.clone();
    params.seed = derive_seed(config.seed, STAGE_FOREST);
    let train_vectors: Vec<FeatureVector> =
        train_pairs.iter().map(|(_, v)| v.clone()).collect();
    let train_data = stage("train")(Dataset::from_features(&train_vectors))?;
    let model = stage("train")(train_forest(&train_data, &params))?;
    stage("train")(save_model(&model, &out.join(MODEL_FILE)))?;

    // Evaluate on the held-out split only.
    let test_rows: Vec<Vec<f64>> = test_pairs.iter().map(|(_, v)| v.dense()).collect();
    let test_truths: Vec<bool> = test_pairs.iter().map(|(r, _)| r.malicious).collect();
    let test_predictions = stage("evaluate")(predict_batch(&model, &test_rows))?;
    let metrics = stage("evaluate")(evaluate_metrics(&test_predictions, &test_truths))?;

    // Classify everything for the deployment verdicts that gate repair.
    let all_pairs: Vec<(ContractRecord, FeatureVector)> =
        train_pairs.into_iter().chain(test_pairs).collect();
    let all_rows: Vec<Vec<f64>> = all_pairs.iter().map(|(_, v)| v.dense()).collect();
    let verdicts = stage("classify")(predict_batch(&model, &all_rows))?;
    let all_records: Vec<&ContractRecord> = all_pairs.iter().map(|(r, _)| r).collect();
    stage("classify")(write_predictions(
        &out.join(PREDICTIONS_FILE),
        &all_records,
        &verdicts,
    ))?;

    // Repair: flagged contracts with at least one finding. A flagged
    // contract with no findings has nothing to hand the model.
    let to_repair: Vec<&ContractRecord> = all_pairs
        .iter()
        .zip(&verdicts)
        .filter(|((record, _), &flagged)| {
            has_findings(record) && (config.repair_all || flagged)
        })
        .map(|((record, _), _)| record)
        .collect();
    let n_flagged = verdicts.iter().filter(|&&v| v).count();

    let sessions = repair_records(
        &to_repair,
        &config.analyzer,
        &config.llm,
        &bank,
        config.max_attempts,
        transport,
        clock,
    );
    stage("repair")(save_sessions(&out.join(SESSIONS_FILE), &sessions))?;

    // Report.
    let summary = stage("report")(emit_summary(&sessions, Some(metrics), out))?;

    Ok(PipelineOutput {
        summary,
        metrics,
        n_records: all_pairs.len(),
        n_flagged,
        n_repaired: sessions.len(),
    })
}

/// Whether a record carries at least one finding to repair.
pub fn has_findings(record: &ContractRecord) -> bool {
    record
        .vulnerabilities
        .as_ref()
        .is_some_and(|v| !v.is_empty())
}

/// Analyzes each record with the configured mode; one report per record,
/// in input order.
pub fn analyze_records(records: &[ContractRecord], mode: &AnalyzerMode) -> Vec<AnalysisReport> {
    match mode {
        AnalyzerMode::Builtin => records
            .par_iter()
            .map(|r| analyze_builtin(&r.source))
            .collect(),
        AnalyzerMode::External(template) => {
            let analyzer = ExternalAnalyzer::new(template.clone());
            records
                .par_iter()
                .map(|r| {
                    analyze_multi_version(&r.source, &VERSION_LADDER, |source, version| {
                        analyzer.run(source, version)
                    })
                })
                .collect()
        }
    }
}

/// Repairs each record (all must carry findings), one session per record,
/// in input order. Sessions for distinct contracts run in parallel; the
/// transport and clock are only touched in endpoint mode.
pub fn repair_records(
    records: &[&ContractRecord],
    analyzer: &AnalyzerMode,
    llm: &LlmMode,
    bank: &SnippetBank,
    max_attempts: usize,
    transport: &dyn Transport,
    clock: &dyn Clock,
) -> Vec<RepairSession> {
    records
        .par_iter()
        .map(|record| {
            let mut analyzer_fn = |source: &str| match analyzer {
                AnalyzerMode::Builtin => analyze_builtin(source),
                AnalyzerMode::External(template) => {
                    let external = ExternalAnalyzer::new(template.clone());
                    analyze_multi_version(source, &VERSION_LADDER, |src, version| {
                        external.run(src, version)
                    })
                }
            };
            let mut llm_fn = |prompt: &str| match llm {
                LlmMode::Mock => Ok(mock_repairer_with(bank, prompt)),
                LlmMode::Endpoint(config) => chat_complete(config, transport, clock, prompt),
            };
            repair_loop(record, &mut analyzer_fn, &mut llm_fn, max_attempts)
        })
        .collect()
}

/// Writes the verdicts CSV: one row per record, in input order.
pub fn write_predictions(
    path: &std::path::Path,
    records: &[&ContractRecord],
    verdicts: &[bool],
) -> Result<(), std::io::Error> {
    let mut text = String::from("index,contract_address,malicious,predicted\n");
    for (i, (record, verdict)) in records.iter().zip(verdicts).enumerate() {
        let address = record.address.as_deref().unwrap_or("");
        text.push_str(&format!(
            "{i},{address},{},{}\n",
            record.malicious, verdict
        ));
    }
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{FakeTransport, HttpResponse};

    fn smoke_config(dir: &std::path::Path) -> PipelineConfig {
        let mut config = PipelineConfig::offline(dir);
        config.generate = Some((60, 0.25));
        config.forest.n_trees = 30;
        config
    }

    #[test]
    fn offline_run_produces_all_stage_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path());
        let output = run_pipeline(&config).unwrap();

        for file in [
            CORPUS_FILE,
            ANALYZED_FILE,
            PREPARED_FILE,
            VOCAB_FILE,
            MODEL_FILE,
            PREDICTIONS_FILE,
            SESSIONS_FILE,
            crate::report::SUMMARY_FILE,
            crate::report::CONTRACTS_FILE,
            crate::report::CHART_FILE,
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        assert_eq!(output.n_records, 60);
        assert!(output.summary.metrics.is_some());
    }

    #[test]
    fn repair_is_gated_on_the_classifier_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path());
        let output = run_pipeline(&config).unwrap();
        assert!(output.n_repaired <= output.n_flagged);

        let sessions = crate::repair::load_sessions(&dir.path().join(SESSIONS_FILE)).unwrap();
        assert_eq!(sessions.len(), output.n_repaired);
        for session in &sessions {
            assert!(!session.report_before.findings.is_empty());
        }
    }

    #[test]
    fn repair_all_covers_every_contract_with_findings() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = smoke_config(dir.path());
        config.repair_all = true;
        let output = run_pipeline(&config).unwrap();
        // Generated corpora give findings to exactly the malicious records.
        assert_eq!(output.n_repaired, 15);
        assert_eq!(output.summary.outcomes.clean, 15);
        assert_eq!(output.summary.reduction, Some(1.0));
    }

    #[test]
    fn mock_mode_never_touches_the_transport() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path());
        let transport = FakeTransport::new(|_, _| {
            Ok(HttpResponse {
                status: 200,
                body: String::new(),
            })
        });
        run_pipeline_with(&config, &transport, &crate::clock::FakeClock::new()).unwrap();
        assert_eq!(transport.calls(), 0, "offline run opened a connection");
    }

    #[test]
    fn runs_are_deterministic_across_job_counts() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();

        let mut config_a = smoke_config(dir_a.path());
        config_a.jobs = Some(1);
        let mut config_b = smoke_config(dir_b.path());
        config_b.jobs = Some(4);

        run_pipeline(&config_a).unwrap();
        run_pipeline(&config_b).unwrap();

        for file in [
            CORPUS_FILE,
            PREDICTIONS_FILE,
            MODEL_FILE,
            crate::report::SUMMARY_FILE,
        ] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between jobs=1 and jobs=4");
        }
    }

    #[test]
    fn existing_corpus_can_be_fed_back_in() {
        let dir_a = tempfile::tempdir().unwrap();
        let config_a = smoke_config(dir_a.path());
        run_pipeline(&config_a).unwrap();

        let dir_b = tempfile::tempdir().unwrap();
        let mut config_b = PipelineConfig::offline(dir_b.path());
        config_b.input = Some(dir_a.path().join(CORPUS_FILE));
        config_b.forest.n_trees = 30;
        let output = run_pipeline(&config_b).unwrap();
        assert_eq!(output.n_records, 60);
    }

    #[test]
    fn config_without_input_or_generate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::offline(dir.path());
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.stage, "config");
    }

    #[test]
    fn stage_errors_carry_the_stage_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = PipelineConfig::offline(dir.path());
        config.input = Some(dir.path().join("missing.jsonl"));
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.stage, "ingest");
        assert!(err.to_string().starts_with("ingest stage failed"));
    }
}

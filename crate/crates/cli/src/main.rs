//! Batch triage for Solidity contracts: classify with a random forest over
//! static-analysis features, then repair flagged contracts through an LLM
//! loop with re-analysis. Defaults are fully offline (built-in analyzer,
//! mock repairer); the network is only touched by `fetch` and by an
//! explicitly configured live endpoint.

mod settings;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use triage_core::analyzer::{analyze_builtin, analyze_multi_version, CommandTemplate};
use triage_core::corpus::{
    filter_analyzed, load_corpus, save_corpus, stratified_reduce, ContractRecord,
};
use triage_core::features::{build_vocabulary, vectorize, Vocabulary};
use triage_core::forest::{
    evaluate_metrics, load_model, metrics_from_counts, predict_batch, save_model, train_forest,
    Dataset, ForestParams,
};
use triage_core::gen::{generate_corpus, SnippetBank};
use triage_core::ingest::{FetchConfig, Fetcher};
use triage_core::pipeline::{self, AnalyzerMode, LlmMode, PipelineConfig};
use triage_core::repair::LlmConfig;
use triage_core::report::emit_summary;
use triage_core::seeds::derive_seed;
use triage_core::solprep::VERSION_LADDER;
use triage_core::transport::ReqwestTransport;

use settings::{pick, pick_opt, Settings};

const DEFAULT_SEED: u64 = 7;
const DEFAULT_OUT: &str = "triage-out";
const DEFAULT_RATIO: f64 = 0.2;
const DEFAULT_TRAIN_FRACTION: f64 = 0.6;
const DEFAULT_ETHERSCAN: &str = "https://api.etherscan.io/api";

#[derive(Parser)]
#[command(
    name = "contract-triage",
    version,
    about = "Classify Solidity contracts as malicious and repair the flagged ones"
)]
struct Cli {
    /// Flat key=value config file; flags given here win over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for stage outputs (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Analyzer: "builtin" or "external:<command with {file} and
    /// {solc_version}>".
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Repair backend: "mock" or "endpoint:<base-url>,<model>".
    #[arg(long, global = true)]
    llm: Option<String>,

    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch verified sources for listed addresses into a corpus file.
    Fetch {
        /// File with one address per line, optionally "address,label"
        /// where label is malicious|benign (default benign).
        #[arg(long, value_name = "FILE")]
        addresses: PathBuf,
        /// Block-explorer API endpoint.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Generate a labeled synthetic corpus from the snippet bank.
    Generate {
        /// Number of contracts.
        #[arg(long)]
        n: Option<usize>,
        /// Fraction labeled malicious.
        #[arg(long)]
        ratio: Option<f64>,
        /// Snippet bank directory (builtin bank when omitted).
        #[arg(long, value_name = "DIR")]
        bank: Option<PathBuf>,
    },
    /// Analyze a corpus (writes analyzed.jsonl) or a single .sol file
    /// (prints the report).
    Analyze {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Drop unanalyzed records and optionally reduce to a stratified
    /// subset.
    Prepare {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Target corpus size after reduction.
        #[arg(long)]
        reduce: Option<usize>,
        /// Malicious fraction of the reduced corpus.
        #[arg(long)]
        reduce_ratio: Option<f64>,
    },
    /// Train a forest on an analyzed corpus (writes model.json and
    /// vocab.txt).
    Train {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        /// Features tried per split (default: sqrt of the feature count).
        #[arg(long)]
        mtry: Option<usize>,
        #[arg(long)]
        min_samples_split: Option<usize>,
    },
    /// Classify a corpus with a trained model (writes predictions.csv).
    Classify {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Model file (default: <out>/model.json).
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Vocabulary file (default: <out>/vocab.txt).
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
    },
    /// Repair every contract with findings; writes sessions.jsonl and
    /// summary files.
    Repair {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long, value_name = "DIR")]
        bank: Option<PathBuf>,
    },
    /// Compute classifier metrics from a predictions file or raw counts.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        tp: Option<u64>,
        #[arg(long)]
        fp: Option<u64>,
        #[arg(long)]
        tn: Option<u64>,
        #[arg(long = "fn")]
        fn_: Option<u64>,
    },
    /// Run every stage: corpus, analyze, prepare, train, evaluate,
    /// repair, report.
    Pipeline {
        /// Generate a synthetic corpus of this size instead of reading
        /// --input.
        #[arg(long)]
        generate: Option<usize>,
        /// Malicious fraction for generation.
        #[arg(long)]
        ratio: Option<f64>,
        /// Existing corpus to read when not generating.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Reduce the analyzed corpus to this size before training.
        #[arg(long)]
        reduce: Option<usize>,
        /// Malicious fraction of the reduced corpus.
        #[arg(long)]
        reduce_ratio: Option<f64>,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        mtry: Option<usize>,
        #[arg(long)]
        min_samples_split: Option<usize>,
        /// Fraction of records used for training.
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Repair every contract with findings, not only flagged ones.
        #[arg(long)]
        repair_all: bool,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long, value_name = "DIR")]
        bank: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {}", render_error(&e));
        std::process::exit(1);
    }
}

/// Join the error chain, skipping layers already embedded in an outer
/// layer's message (core errors render their source themselves).
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for layer in e.chain() {
        let text = layer.to_string();
        if out.is_empty() {
            out = text;
        } else if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let file_settings = Settings::load(cli.config.as_deref())?;
    let globals = Globals::resolve(&cli, &file_settings)?;

    // The pipeline subcommand is exempt: its stages tag themselves.
    let stage_tag = match cli.command {
        Command::Pipeline { .. } => None,
        Command::Fetch { .. } => Some("fetch"),
        Command::Generate { .. } => Some("generate"),
        Command::Analyze { .. } => Some("analyze"),
        Command::Prepare { .. } => Some("prepare"),
        Command::Train { .. } => Some("train"),
        Command::Classify { .. } => Some("classify"),
        Command::Repair { .. } => Some("repair"),
        Command::Evaluate { .. } => Some("evaluate"),
    };

    let result = match cli.command {
        Command::Fetch {
            ref addresses,
            ref endpoint,
        } => cmd_fetch(&globals, &file_settings, addresses, endpoint.clone()),
        Command::Generate { n, ratio, ref bank } => {
            cmd_generate(&globals, &file_settings, n, ratio, bank.clone())
        }
        Command::Analyze { ref input } => cmd_analyze(&globals, input),
        Command::Prepare {
            ref input,
            reduce,
            reduce_ratio,
        } => cmd_prepare(&globals, &file_settings, input, reduce, reduce_ratio),
        Command::Train {
            ref input,
            trees,
            max_depth,
            mtry,
            min_samples_split,
        } => {
            let params = forest_params(
                &file_settings,
                trees,
                max_depth,
                mtry,
                min_samples_split,
                globals.seed,
            )?;
            cmd_train(&globals, input, params)
        }
        Command::Classify {
            ref input,
            ref model,
            ref vocab,
        } => cmd_classify(&globals, input, model.clone(), vocab.clone()),
        Command::Repair {
            ref input,
            max_attempts,
            ref bank,
        } => cmd_repair(&globals, &file_settings, input, max_attempts, bank.clone()),
        Command::Evaluate {
            ref predictions,
            tp,
            fp,
            tn,
            fn_,
        } => cmd_evaluate(predictions.as_deref(), tp, fp, tn, fn_),
        Command::Pipeline {
            generate,
            ratio,
            ref input,
            reduce,
            reduce_ratio,
            trees,
            max_depth,
            mtry,
            min_samples_split,
            train_fraction,
            repair_all,
            max_attempts,
            ref bank,
        } => {
            let forest = forest_params(
                &file_settings,
                trees,
                max_depth,
                mtry,
                min_samples_split,
                globals.seed,
            )?;
            cmd_pipeline(
                &globals,
                &file_settings,
                PipelineArgs {
                    generate,
                    ratio,
                    input: input.clone(),
                    reduce,
                    reduce_ratio,
                    forest,
                    train_fraction,
                    repair_all,
                    max_attempts,
                    bank: bank.clone(),
                },
            )
        }
    };

    match stage_tag {
        Some(name) => result.with_context(|| format!("{name} stage failed")),
        None => result,
    }
}

/// Globals after merging flags with the config file.
struct Globals {
    seed: u64,
    out: PathBuf,
    analyzer: AnalyzerMode,
    llm: LlmMode,
    jobs: Option<usize>,
}

impl Globals {
    fn resolve(cli: &Cli, settings: &Settings) -> Result<Globals> {
        let seed = pick(cli.seed, settings, "seed", DEFAULT_SEED)?;
        let out = pick(cli.out.clone(), settings, "out", PathBuf::from(DEFAULT_OUT))?;
        let mode_text = pick(cli.mode.clone(), settings, "mode", "builtin".to_string())?;
        let llm_text = pick(cli.llm.clone(), settings, "llm", "mock".to_string())?;
        let temperature = pick(None, settings, "temperature", 0.0f64)?;
        Ok(Globals {
            seed,
            out,
            analyzer: parse_analyzer_mode(&mode_text)?,
            llm: parse_llm_mode(&llm_text, temperature)?,
            jobs: pick_opt(cli.jobs, settings, "jobs")?,
        })
    }
}

fn parse_analyzer_mode(text: &str) -> Result<AnalyzerMode> {
    if text == "builtin" {
        return Ok(AnalyzerMode::Builtin);
    }
    if let Some(command_line) = text.strip_prefix("external:") {
        let template = CommandTemplate::from_command_line(command_line)?;
        return Ok(AnalyzerMode::External(template));
    }
    bail!("unknown analyzer mode {text:?}; expected \"builtin\" or \"external:<command>\"");
}

fn parse_llm_mode(text: &str, temperature: f64) -> Result<LlmMode> {
    if text == "mock" {
        return Ok(LlmMode::Mock);
    }
    if let Some(spec) = text.strip_prefix("endpoint:") {
        let (base_url, model) = spec.split_once(',').ok_or_else(|| {
            anyhow!("endpoint spec {spec:?} must be \"endpoint:<base-url>,<model>\"")
        })?;
        let mut config = LlmConfig::new(base_url.trim(), model.trim());
        config.temperature = temperature;
        return Ok(LlmMode::Endpoint(config));
    }
    bail!("unknown llm mode {text:?}; expected \"mock\" or \"endpoint:<base-url>,<model>\"");
}

fn forest_params(
    settings: &Settings,
    trees: Option<usize>,
    max_depth: Option<usize>,
    mtry: Option<usize>,
    min_samples_split: Option<usize>,
    seed: u64,
) -> Result<ForestParams> {
    let mut params = ForestParams::default();
    params.n_trees = pick(trees, settings, "trees", params.n_trees)?;
    params.max_depth = pick_opt(max_depth, settings, "max_depth")?;
    params.mtry = pick_opt(mtry, settings, "mtry")?;
    params.min_samples_split = pick(
        min_samples_split,
        settings,
        "min_samples_split",
        params.min_samples_split,
    )?;
    params.seed = derive_seed(seed, pipeline::STAGE_FOREST);
    Ok(params)
}

fn load_bank(bank_dir: Option<&Path>) -> Result<SnippetBank> {
    match bank_dir {
        Some(dir) => SnippetBank::load_dir(dir).context("loading snippet bank"),
        None => Ok(SnippetBank::builtin()),
    }
}

fn cmd_fetch(
    globals: &Globals,
    settings: &Settings,
    addresses_path: &Path,
    endpoint: Option<String>,
) -> Result<()> {
    let endpoint = pick(endpoint, settings, "endpoint", DEFAULT_ETHERSCAN.to_string())?;
    let text = std::fs::read_to_string(addresses_path)
        .with_context(|| format!("reading address list {}", addresses_path.display()))?;

    let mut addresses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (address, label) = match line.split_once(',') {
            Some((a, l)) => (a.trim().to_string(), parse_label(l.trim(), lineno + 1)?),
            None => (line.to_string(), false),
        };
        addresses.push((address, label));
    }

    std::fs::create_dir_all(&globals.out)?;
    let config = FetchConfig::new(endpoint, "", globals.out.join("cache"));
    let transport = ReqwestTransport::new(Some(Duration::from_secs(30)))?;
    let clock = triage_core::clock::RealClock::new();
    let fetcher = Fetcher::new(config, &transport, &clock);

    let mut records = Vec::new();
    let mut failures = 0usize;
    for (address, malicious) in &addresses {
        match fetcher.fetch_source(address) {
            Ok(source) => records.push(ContractRecord {
                address: Some(address.clone()),
                source,
                malicious: *malicious,
                vulnerabilities: None,
                confidences: None,
                impacts: None,
            }),
            Err(e) => {
                failures += 1;
                eprintln!("warning: {address}: {e}");
            }
        }
    }

    if records.is_empty() && !addresses.is_empty() {
        bail!("fetched none of {} addresses", addresses.len());
    }
    let out_file = globals.out.join(pipeline::CORPUS_FILE);
    save_corpus(&records, &out_file)?;
    println!(
        "fetched {} of {} contracts ({} failed) -> {}",
        records.len(),
        addresses.len(),
        failures,
        out_file.display()
    );
    Ok(())
}

fn parse_label(text: &str, lineno: usize) -> Result<bool> {
    match text {
        "malicious" | "true" | "1" => Ok(true),
        "benign" | "false" | "0" => Ok(false),
        other => bail!("line {lineno}: unknown label {other:?}"),
    }
}

fn cmd_generate(
    globals: &Globals,
    settings: &Settings,
    n: Option<usize>,
    ratio: Option<f64>,
    bank_dir: Option<PathBuf>,
) -> Result<()> {
    let n = pick_opt(n, settings, "n")?.context("generate requires --n")?;
    let ratio = pick(ratio, settings, "ratio", DEFAULT_RATIO)?;
    let bank = load_bank(bank_dir.as_deref())?;

    let records = generate_corpus(&bank, n, ratio, derive_seed(globals.seed, pipeline::STAGE_GEN))?;
    std::fs::create_dir_all(&globals.out)?;
    let out_file = globals.out.join(pipeline::CORPUS_FILE);
    save_corpus(&records, &out_file)?;

    let malicious = records.iter().filter(|r| r.malicious).count();
    println!(
        "generated {} contracts ({} malicious) -> {}",
        records.len(),
        malicious,
        out_file.display()
    );
    Ok(())
}

fn analyze_one(source: &str, mode: &AnalyzerMode) -> triage_core::analyzer::AnalysisReport {
    match mode {
        AnalyzerMode::Builtin => analyze_builtin(source),
        AnalyzerMode::External(template) => {
            let external = triage_core::analyzer::ExternalAnalyzer::new(template.clone());
            analyze_multi_version(source, &VERSION_LADDER, |src, version| {
                external.run(src, version)
            })
        }
    }
}

fn cmd_analyze(globals: &Globals, input: &Path) -> Result<()> {
    if input.extension().is_some_and(|e| e == "sol") {
        let source = std::fs::read_to_string(input)
            .with_context(|| format!("reading {}", input.display()))?;
        let report = analyze_one(&source, &globals.analyzer);
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }

    let records = load_corpus(input)?;
    let analyzed = pipeline::with_jobs(globals.jobs, || {
        let reports = pipeline::analyze_records(&records, &globals.analyzer);
        let mut analyzed = records.clone();
        for (record, report) in analyzed.iter_mut().zip(&reports) {
            report.apply_to(record);
        }
        analyzed
    })?;

    std::fs::create_dir_all(&globals.out)?;
    let out_file = globals.out.join(pipeline::ANALYZED_FILE);
    save_corpus(&analyzed, &out_file)?;
    let with_findings = analyzed.iter().filter(|r| pipeline::has_findings(r)).count();
    println!(
        "analyzed {} contracts ({} with findings) -> {}",
        analyzed.len(),
        with_findings,
        out_file.display()
    );
    Ok(())
}

fn cmd_prepare(
    globals: &Globals,
    settings: &Settings,
    input: &Path,
    reduce: Option<usize>,
    reduce_ratio: Option<f64>,
) -> Result<()> {
    let records = load_corpus(input)?;
    let mut prepared = filter_analyzed(&records);
    let dropped = records.len() - prepared.len();

    let reduce = pick_opt(reduce, settings, "reduce")?;
    if let Some(target) = reduce {
        let ratio = pick(reduce_ratio, settings, "reduce_ratio", DEFAULT_RATIO)?;
        prepared = stratified_reduce(
            &prepared,
            target,
            ratio,
            derive_seed(globals.seed, pipeline::STAGE_REDUCE),
        )?;
    }

    std::fs::create_dir_all(&globals.out)?;
    let out_file = globals.out.join(pipeline::PREPARED_FILE);
    save_corpus(&prepared, &out_file)?;
    println!(
        "prepared {} contracts ({} unanalyzed dropped) -> {}",
        prepared.len(),
        dropped,
        out_file.display()
    );
    Ok(())
}

fn vectorize_all(
    records: &[ContractRecord],
    vocabulary: &Vocabulary,
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| Ok(vectorize(r, vocabulary)?.dense()))
        .collect()
}

fn cmd_train(globals: &Globals, input: &Path, params: ForestParams) -> Result<()> {
    let records = load_corpus(input)?;
    let vocabulary = build_vocabulary(&records);
    let vectors: Vec<triage_core::features::FeatureVector> = records
        .iter()
        .map(|r| vectorize(r, &vocabulary))
        .collect::<Result<_, _>>()?;

    let data = Dataset::from_features(&vectors)?;
    let model = pipeline::with_jobs(globals.jobs, || train_forest(&data, &params))??;

    std::fs::create_dir_all(&globals.out)?;
    let model_file = globals.out.join(pipeline::MODEL_FILE);
    let vocab_file = globals.out.join(pipeline::VOCAB_FILE);
    save_model(&model, &model_file)?;
    vocabulary.save(&vocab_file)?;
    println!(
        "trained {} trees on {} samples x {} features -> {}",
        model.trees.len(),
        data.n_samples(),
        data.n_features(),
        model_file.display()
    );
    Ok(())
}

fn cmd_classify(
    globals: &Globals,
    input: &Path,
    model_path: Option<PathBuf>,
    vocab_path: Option<PathBuf>,
) -> Result<()> {
    let model_path = model_path.unwrap_or_else(|| globals.out.join(pipeline::MODEL_FILE));
    let vocab_path = vocab_path.unwrap_or_else(|| globals.out.join(pipeline::VOCAB_FILE));
    let model = load_model(&model_path)?;
    let vocabulary = Vocabulary::load(&vocab_path)?;
    let records = load_corpus(input)?;

    let rows = vectorize_all(&records, &vocabulary)?;
    let verdicts = pipeline::with_jobs(globals.jobs, || predict_batch(&model, &rows))??;

    std::fs::create_dir_all(&globals.out)?;
    let out_file = globals.out.join(pipeline::PREDICTIONS_FILE);
    let refs: Vec<&ContractRecord> = records.iter().collect();
    pipeline::write_predictions(&out_file, &refs, &verdicts)?;

    let flagged = verdicts.iter().filter(|&&v| v).count();
    println!(
        "classified {} contracts ({} flagged) -> {}",
        records.len(),
        flagged,
        out_file.display()
    );
    Ok(())
}

fn cmd_repair(
    globals: &Globals,
    settings: &Settings,
    input: &Path,
    max_attempts: Option<usize>,
    bank_dir: Option<PathBuf>,
) -> Result<()> {
    let max_attempts = pick(
        max_attempts,
        settings,
        "max_attempts",
        triage_core::repair::DEFAULT_MAX_ATTEMPTS,
    )?;
    let bank = load_bank(bank_dir.as_deref())?;
    let records = load_corpus(input)?;
    let to_repair: Vec<&ContractRecord> = records
        .iter()
        .filter(|r| pipeline::has_findings(r))
        .collect();

    let transport = match &globals.llm {
        LlmMode::Mock => None,
        LlmMode::Endpoint(_) => Some(ReqwestTransport::new(Some(Duration::from_secs(120)))?),
    };
    let clock = triage_core::clock::RealClock::new();

    let sessions = pipeline::with_jobs(globals.jobs, || {
        pipeline::repair_records(
            &to_repair,
            &globals.analyzer,
            &globals.llm,
            &bank,
            max_attempts,
            transport
                .as_ref()
                .map(|t| t as &dyn triage_core::transport::Transport)
                .unwrap_or(&triage_core::transport::DenyTransport),
            &clock,
        )
    })?;

    std::fs::create_dir_all(&globals.out)?;
    triage_core::repair::save_sessions(&globals.out.join(pipeline::SESSIONS_FILE), &sessions)?;
    let summary = emit_summary(&sessions, None, &globals.out)?;
    println!(
        "repaired {} contracts: {} clean, {} improved, {} unchanged, {} failed",
        sessions.len(),
        summary.outcomes.clean,
        summary.outcomes.improved,
        summary.outcomes.unchanged,
        summary.outcomes.failed
    );
    println!(
        "findings {} -> {}{}",
        summary.total_before,
        summary.total_after,
        summary
            .reduction
            .map(|r| format!(" (reduction {:.1}%)", r * 100.0))
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_evaluate(
    predictions: Option<&Path>,
    tp: Option<u64>,
    fp: Option<u64>,
    tn: Option<u64>,
    fn_: Option<u64>,
) -> Result<()> {
    let metrics = if let Some(path) = predictions {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading predictions {}", path.display()))?;
        let mut truths = Vec::new();
        let mut predicted = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                bail!("{}:{}: expected 4 columns", path.display(), lineno + 1);
            }
            truths.push(parse_bool(fields[2], lineno + 1)?);
            predicted.push(parse_bool(fields[3], lineno + 1)?);
        }
        evaluate_metrics(&predicted, &truths)?
    } else {
        match (tp, fp, tn, fn_) {
            (Some(tp), Some(fp), Some(tn), Some(fn_)) => metrics_from_counts(tp, fp, tn, fn_),
            _ => bail!("evaluate requires either --predictions or all of --tp --fp --tn --fn"),
        }
    };
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

struct PipelineArgs {
    generate: Option<usize>,
    ratio: Option<f64>,
    input: Option<PathBuf>,
    reduce: Option<usize>,
    reduce_ratio: Option<f64>,
    forest: ForestParams,
    train_fraction: Option<f64>,
    repair_all: bool,
    max_attempts: Option<usize>,
    bank: Option<PathBuf>,
}

fn cmd_pipeline(globals: &Globals, settings: &Settings, args: PipelineArgs) -> Result<()> {
    let generate_n = pick_opt(args.generate, settings, "n")?;
    let ratio = pick(args.ratio, settings, "ratio", DEFAULT_RATIO)?;
    let reduce = pick_opt(args.reduce, settings, "reduce")?;
    let reduce_ratio = pick(args.reduce_ratio, settings, "reduce_ratio", DEFAULT_RATIO)?;

    let config = PipelineConfig {
        generate: generate_n.map(|n| (n, ratio)),
        input: args.input,
        reduce: reduce.map(|n| (n, reduce_ratio)),
        seed: globals.seed,
        out_dir: globals.out.clone(),
        analyzer: globals.analyzer.clone(),
        llm: globals.llm.clone(),
        forest: args.forest,
        train_fraction: pick(
            args.train_fraction,
            settings,
            "train_fraction",
            DEFAULT_TRAIN_FRACTION,
        )?,
        jobs: globals.jobs,
        repair_all: args.repair_all
            || pick(None, settings, "repair_all", false)?,
        max_attempts: pick(
            args.max_attempts,
            settings,
            "max_attempts",
            triage_core::repair::DEFAULT_MAX_ATTEMPTS,
        )?,
        bank_dir: {
            let from_file: Option<PathBuf> = pick_opt(args.bank, settings, "bank")?;
            from_file
        },
    };

    let output = match &config.llm {
        LlmMode::Mock => pipeline::run_pipeline(&config)?,
        LlmMode::Endpoint(_) => {
            let transport = ReqwestTransport::new(Some(Duration::from_secs(120)))?;
            let clock = triage_core::clock::RealClock::new();
            pipeline::run_pipeline_with(&config, &transport, &clock)?
        }
    };

    println!(
        "records: {}  flagged: {}  repaired: {}",
        output.n_records, output.n_flagged, output.n_repaired
    );
    println!(
        "held-out accuracy: {:.4}  f1: {:.4}  fpr: {:.4}",
        output.metrics.accuracy, output.metrics.f1, output.metrics.false_positive_rate
    );
    println!(
        "findings {} -> {}{}",
        output.summary.total_before,
        output.summary.total_after,
        output
            .summary
            .reduction
            .map(|r| format!(" (reduction {:.1}%)", r * 100.0))
            .unwrap_or_default()
    );
    println!(
        "summary: {}",
        globals
            .out
            .join(triage_core::report::SUMMARY_FILE)
            .display()
    );
    Ok(())
}

fn parse_bool(text: &str, lineno: usize) -> Result<bool> {
    match text {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => bail!("line {lineno}: expected a boolean, got {other:?}"),
    }
}

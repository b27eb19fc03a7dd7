mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use probtab::artifacts::RenderStyle;
use probtab::benchgen::SynthesisConfig;
use probtab::eval::Method;
use probtab::inference::QueryType;
use probtab::querylang::VariantType;
use probtab::retrieval::RetrievalMode;
use rayon::prelude::*;
use serde_json::Value;

use stages::{CliError, EmbedderSpec, EvalOptions, LlmSpec, Result};

/// Bayesian-network question answering over tables: build artifact
/// bundles, generate benchmarks and score methods.
#[derive(Parser, Debug)]
#[command(name = "probtab", version, args_override_self = true)]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file supplying flags: top-level keys for global flags or the
    /// running subcommand, or a section named after the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discretize a delimited table into a codebook and state-id table.
    #[command(args_override_self = true)]
    Ingest {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Table name; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        flags: IngestFlags,
    },
    /// Learn structure and parameters into bayesnet.json.
    #[command(args_override_self = true)]
    Learn {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        flags: LearnFlags,
    },
    /// Generate the premise and insight stores.
    #[command(args_override_self = true)]
    Artifacts {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        flags: ArtifactFlags,
    },
    /// Synthesize benchmark.jsonl with exact ground truth.
    #[command(args_override_self = true)]
    Genbench {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        flags: GenbenchFlags,
    },
    /// Answer one query, e.g. "P(price=high | volume=low)".
    #[command(args_override_self = true)]
    Query {
        #[arg(long)]
        bundle: PathBuf,
        query: String,
    },
    /// Run a method over the benchmark and update the report.
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        flags: EvalFlags,
    },
    /// Aggregate predictions across bundles.
    #[command(args_override_self = true)]
    Report {
        #[arg(long = "bundle", required = true)]
        bundles: Vec<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage for one or more tables.
    #[command(args_override_self = true)]
    Pipeline {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
        /// Root directory; each table gets a bundle named after it.
        #[arg(long)]
        out: PathBuf,
        /// Tables processed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Methods to evaluate after benchmark generation.
        #[arg(long = "method")]
        methods: Vec<Method>,
        #[command(flatten)]
        ingest: IngestFlags,
        #[command(flatten)]
        learn: LearnFlags,
        #[command(flatten)]
        artifacts: ArtifactFlags,
        #[command(flatten)]
        genbench: GenbenchFlags,
        #[command(flatten)]
        eval: EvalFlags,
    },
}

#[derive(Args, Debug, Clone)]
struct IngestFlags {
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// The first row holds data, not column names.
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value_t = 5)]
    max_states: usize,
}

#[derive(Args, Debug, Clone)]
struct LearnFlags {
    #[arg(long, default_value_t = 4)]
    max_parents: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// Laplace smoothing pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args, Debug, Clone)]
struct ArtifactFlags {
    /// Number of insights to keep.
    #[arg(long, default_value_t = 100)]
    insights: usize,
    #[arg(long)]
    per_node_cap: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct GenbenchFlags {
    #[arg(long, default_value_t = 40)]
    causal: usize,
    #[arg(long, default_value_t = 40)]
    evidential: usize,
    #[arg(long, default_value_t = 37)]
    explain_away: usize,
    #[arg(long, default_value_t = 40)]
    mixed: usize,
    #[arg(long, default_value_t = 3)]
    max_evidence: usize,
    /// Mark items as train/test with this test probability.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Model used to paraphrase natural questions.
    #[arg(long)]
    paraphrase: Option<LlmSpec>,
}

#[derive(Args, Debug, Clone)]
struct EvalFlags {
    /// Comma-separated question variants; autobn defaults to natural only.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<VariantType>>,
    /// echo, script:PATH, constant:TEXT or remote.
    #[arg(long, default_value = "remote")]
    llm: LlmSpec,
    #[arg(long, default_value = "bm25")]
    retrieval: RetrievalMode,
    #[arg(long, default_value_t = 40)]
    k_premises: usize,
    #[arg(long, default_value_t = 20)]
    k_insights: usize,
    /// none, hash or remote.
    #[arg(long, default_value = "none")]
    embedder: String,
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    /// Premise rendering searched: numeric or natural.
    #[arg(long, default_value = "natural")]
    style: String,
}

impl GenbenchFlags {
    fn config(&self) -> SynthesisConfig {
        SynthesisConfig {
            counts: BTreeMap::from([
                (QueryType::Causal, self.causal),
                (QueryType::Evidential, self.evidential),
                (QueryType::ExplainAway, self.explain_away),
                (QueryType::MixedRedundant, self.mixed),
            ]),
            seed: 0,
            max_evidence: self.max_evidence,
            test_fraction: self.test_fraction,
        }
    }
}

impl EvalFlags {
    fn options(&self, method: Method) -> Result<EvalOptions> {
        let embedder = match self.embedder.as_str() {
            "none" => EmbedderSpec::None,
            "hash" => EmbedderSpec::Hash(self.embed_dim),
            "remote" => EmbedderSpec::Remote(self.embed_dim),
            other => return Err(CliError::usage("eval", format!("unknown embedder {other:?} (none, hash, remote)"))),
        };
        let style = match self.style.as_str() {
            "numeric" => RenderStyle::Numeric,
            "natural" => RenderStyle::Natural,
            other => return Err(CliError::usage("eval", format!("unknown style {other:?} (numeric, natural)"))),
        };
        Ok(EvalOptions {
            method,
            variants: self.variants.clone(),
            llm: self.llm.clone(),
            retrieval: self.retrieval,
            k_premises: self.k_premises,
            k_insights: self.k_insights,
            embedder,
            style,
        })
    }
}

fn delimiter(c: char, stage: &'static str) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::usage(stage, "--delimiter must be a single ASCII character"))
}

fn paraphraser(spec: &Option<LlmSpec>) -> Result<Option<Box<dyn probtab::llm::LanguageModelClient>>> {
    match spec {
        None => Ok(None),
        Some(LlmSpec::Echo) => Err(CliError::usage("genbench", "echo cannot paraphrase; use script:, constant: or remote")),
        Some(spec) => {
            let cb = probtab::ingest::Codebook::default();
            stages::make_llm("genbench", spec, Method::Autobn, &[], &cb).map(Some)
        }
    }
}

fn table_stages(
    table: &Path,
    dir: &Path,
    seed: u64,
    name: Option<String>,
    cmd: (&IngestFlags, &LearnFlags, &ArtifactFlags, &GenbenchFlags, &EvalFlags, &[Method]),
) -> Result<String> {
    let (ingest, learn, artifacts, genbench, eval, methods) = cmd;
    let name = stages::ingest(
        table,
        dir,
        &stages::IngestOptions {
            delimiter: delimiter(ingest.delimiter, "ingest")?,
            header: !ingest.no_header,
            max_states: ingest.max_states,
            name,
        },
    )?;
    stages::learn(
        dir,
        seed,
        &stages::LearnOptions {
            max_parents: learn.max_parents,
            restarts: learn.restarts,
            alpha: learn.alpha,
        },
    )?;
    stages::artifacts(
        dir,
        &stages::ArtifactOptions {
            insights: artifacts.insights,
            per_node_cap: artifacts.per_node_cap,
        },
    )?;
    let para = paraphraser(&genbench.paraphrase)?;
    stages::genbench(dir, seed, genbench.config(), para.as_deref())?;
    for &m in methods {
        stages::evaluate(dir, seed, &eval.options(m)?)?;
    }
    Ok(name)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest {
            table,
            bundle,
            name,
            flags,
        } => {
            let name = stages::ingest(
                &table,
                &bundle,
                &stages::IngestOptions {
                    delimiter: delimiter(flags.delimiter, "ingest")?,
                    header: !flags.no_header,
                    max_states: flags.max_states,
                    name,
                },
            )?;
            eprintln!("ingested {name} into {}", bundle.display());
        }
        Command::Learn { bundle, flags } => stages::learn(
            &bundle,
            seed,
            &stages::LearnOptions {
                max_parents: flags.max_parents,
                restarts: flags.restarts,
                alpha: flags.alpha,
            },
        )?,
        Command::Artifacts { bundle, flags } => {
            let (p, i) = stages::artifacts(
                &bundle,
                &stages::ArtifactOptions {
                    insights: flags.insights,
                    per_node_cap: flags.per_node_cap,
                },
            )?;
            eprintln!("{p} premises, {i} insights");
        }
        Command::Genbench { bundle, flags } => {
            let para = paraphraser(&flags.paraphrase)?;
            let n = stages::genbench(&bundle, seed, flags.config(), para.as_deref())?;
            eprintln!("{n} items, {} question-answer pairs", 4 * n);
        }
        Command::Query { bundle, query } => println!("{:.4}", stages::query(&bundle, &query)?),
        Command::Eval { bundle, method, flags } => {
            let report = stages::evaluate(&bundle, seed, &flags.options(method)?)?;
            print!("{}", report.to_text());
        }
        Command::Report { bundles, out } => {
            let report = stages::report(&bundles)?;
            if let Some(path) = out {
                probtab::storage::write_atomic(&path, report.to_json().as_bytes())
                    .map_err(|e| CliError::data("report", path.display().to_string(), e))?;
            }
            print!("{}", report.to_text());
        }
        Command::Pipeline {
            tables,
            out,
            jobs,
            methods,
            ingest,
            learn,
            artifacts,
            genbench,
            eval,
        } => {
            if jobs == 0 {
                return Err(CliError::usage("pipeline", "--jobs must be at least 1"));
            }
            let mut seen = BTreeMap::new();
            for t in &tables {
                let stem = t.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                if seen.insert(stem.clone(), t).is_some() {
                    return Err(CliError::usage("pipeline", format!("two tables are named {stem:?}")));
                }
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::usage("pipeline", e))?;
            let flags = (&ingest, &learn, &artifacts, &genbench, &eval, methods.as_slice());
            let results: Vec<Result<String>> = pool.install(|| {
                seen.par_iter()
                    .map(|(stem, table)| table_stages(table, &out.join(stem), seed, Some(stem.clone()), flags))
                    .collect()
            });
            for r in results {
                let name = r?;
                eprintln!("finished {name}");
            }
            if !methods.is_empty() {
                let dirs: Vec<PathBuf> = seen.keys().map(|s| out.join(s)).collect();
                print!("{}", stages::report(&dirs)?.to_text());
            }
        }
    }
    Ok(())
}

fn flag_args(name: &str, value: &Value) -> Vec<String> {
    let flag = format!("--{}", name.replace('_', "-"));
    match value {
        Value::Bool(true) => vec![flag],
        Value::Bool(false) | Value::Null => vec![],
        Value::String(s) => vec![flag, s.clone()],
        Value::Array(items) => items.iter().flat_map(|v| flag_args(name, v)).collect(),
        other => vec![flag, other.to_string()],
    }
}

/// Splices flags from the `--config` file in front of the user's own, so
/// explicit flags win.
fn with_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("config {path}: {e}"))?;
    let Value::Object(config) = serde_json::from_str(&text).map_err(|e| format!("config {path}: {e}"))? else {
        return Err(format!("config {path}: expected a JSON object"));
    };
    let command = Cli::command();
    let sub_pos = args
        .iter()
        .position(|a| command.get_subcommands().any(|s| s.get_name() == a));
    let Some(sub_pos) = sub_pos else {
        return Ok(args);
    };
    let sub = command.find_subcommand(&args[sub_pos]).expect("matched above");
    let has_flag = |name: &str| {
        let wanted = name.replace('_', "-");
        sub.get_arguments().any(|a| a.get_long() == Some(wanted.as_str()))
    };
    let mut injected = Vec::new();
    for (key, value) in &config {
        if key == "config" {
            continue;
        }
        match value {
            Value::Object(section) if key == sub.get_name() => {
                for (k, v) in section {
                    if !has_flag(k) {
                        return Err(format!("config {path}: {} has no flag --{k}", sub.get_name()));
                    }
                    injected.extend(flag_args(k, v));
                }
            }
            Value::Object(_) => {}
            v if has_flag(key) => injected.extend(flag_args(key, v)),
            _ => {}
        }
    }
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}

/// Parses and runs one invocation, returning the process exit code.
fn real_main(args: Vec<String>) -> u8 {
    let args = match with_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(real_main(std::env::args().collect()))
}

#[cfg(test)]
mod tests;

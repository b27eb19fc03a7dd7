//! Pipeline stages shared by the individual subcommands and `pipeline`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use probtab::artifacts::{extract_insights, generate_rendered_premises, RenderStyle};
use probtab::bayesnet::{fit_parameters, learn_structure, LearnConfig};
use probtab::benchgen::{synthesize_items, BenchmarkItem, SynthesisConfig};
use probtab::eval::{
    aggregate, run_autobn, run_premise_method, run_random, table_results, EvalError, EvalRecord, Method,
    PremiseMethodConfig, Report,
};
use probtab::ingest::{discretize, infer_column_kinds, load_table, ColumnKind, KindConfig};
use probtab::llm::{LanguageModelClient, LlmError, RemoteClient, ScriptedMock};
use probtab::querylang::{render_query, VariantType};
use probtab::retrieval::{build_index, Embedder, HashEmbedder, RemoteEmbedder, RetrievalError, RetrievalMode};
use probtab::storage::{load_bundle, save_bundle, Artifact, ArtifactBundle, StorageError};
use serde_json::json;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Transport,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Transport => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub artifact: Option<String>,
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &'static str, kind: Kind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            artifact: None,
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(stage: &'static str, message: impl fmt::Display) -> Self {
        Self::new(stage, Kind::Usage, message)
    }

    pub fn data(stage: &'static str, artifact: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            artifact: Some(artifact.into()),
            ..Self::new(stage, Kind::Data, message)
        }
    }

    fn storage(stage: &'static str, e: StorageError) -> Self {
        let artifact = match &e {
            StorageError::Missing { artifact, .. } | StorageError::Invalid { artifact, .. } => artifact.to_string(),
            _ => "manifest.json".to_string(),
        };
        Self::data(stage, artifact, e)
    }

    fn llm(stage: &'static str, e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => Self::usage(stage, e),
            e => Self::new(stage, Kind::Transport, e),
        }
    }

    fn retrieval(stage: &'static str, e: RetrievalError) -> Self {
        match e {
            RetrievalError::Remote(e) => Self::llm(stage, e),
            e => Self::data(stage, "premises.jsonl", e),
        }
    }

    fn eval(stage: &'static str, e: EvalError) -> Self {
        match e {
            EvalError::Transport(e) => Self::llm(stage, e),
            EvalError::Retrieval(e) => Self::retrieval(stage, e),
            e => Self::data(stage, "benchmark.jsonl", e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.artifact {
            Some(a) => write!(f, "{} stage failed on {a}: {}", self.stage, self.message),
            None => write!(f, "{} stage failed: {}", self.stage, self.message),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Independent seed for each stage, derived from the single global seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    stage
        .bytes()
        .fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn load(dir: &Path, stage: &'static str, need: &[Artifact]) -> Result<ArtifactBundle> {
    load_bundle(dir, need).map_err(|e| CliError::storage(stage, e))
}

fn save(bundle: &ArtifactBundle, dir: &Path, stage: &'static str) -> Result<()> {
    save_bundle(bundle, dir).map(|_| ()).map_err(|e| CliError::storage(stage, e))
}

pub struct IngestOptions {
    pub delimiter: u8,
    pub header: bool,
    pub max_states: usize,
    pub name: Option<String>,
}

pub fn ingest(table: &Path, dir: &Path, opts: &IngestOptions) -> Result<String> {
    const STAGE: &str = "ingest";
    if opts.max_states < 2 {
        return Err(CliError::usage(STAGE, "--max-states must be at least 2"));
    }
    let file = table.display().to_string();
    let mut raw = load_table(table, opts.delimiter, opts.header).map_err(|e| CliError::data(STAGE, &file, e))?;
    if let Some(name) = &opts.name {
        raw.name = name.clone();
    }
    let kinds = infer_column_kinds(&raw, &KindConfig::default());
    for (column, kind) in raw.columns.iter().zip(&kinds) {
        if let ColumnKind::Excluded(reason) = kind {
            log::info!("{}: excluding column {:?} ({reason:?})", raw.name, column.name);
        }
    }
    let (discrete, codebook) = discretize(&raw, &kinds, opts.max_states).map_err(|e| CliError::data(STAGE, &file, e))?;
    let mut bundle = ArtifactBundle::new(raw.name.clone());
    bundle.config.insert(
        STAGE.into(),
        json!({
            "source": table.file_name().map(|n| n.to_string_lossy().into_owned()),
            "delimiter": (opts.delimiter as char).to_string(),
            "header": opts.header,
            "max_states": opts.max_states,
        }),
    );
    bundle.codebook = Some(codebook);
    bundle.discrete = Some(discrete);
    save(&bundle, dir, STAGE)?;
    Ok(raw.name)
}

pub struct LearnOptions {
    pub max_parents: usize,
    pub restarts: usize,
    pub alpha: f64,
}

pub fn learn(dir: &Path, seed: u64, opts: &LearnOptions) -> Result<()> {
    const STAGE: &str = "learn";
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(CliError::usage(STAGE, "--alpha must be a positive number"));
    }
    let bundle = load(dir, STAGE, &[Artifact::Codebook, Artifact::Discrete])?;
    let data = bundle.discrete.as_ref().expect("requested");
    let codebook = bundle.codebook.as_ref().expect("requested");
    let config = LearnConfig {
        max_parents: opts.max_parents,
        restarts: opts.restarts,
        seed: stage_seed(seed, STAGE),
    };
    let dag = learn_structure(data, &config).map_err(|e| CliError::data(STAGE, "discrete.csv", e))?;
    let mut net = fit_parameters(data, &dag, opts.alpha)
        .map_err(|e| CliError::data(STAGE, "discrete.csv", e))?
        .with_codebook_labels(codebook);
    net.meta.seed = Some(config.seed);
    let mut out = ArtifactBundle::new(bundle.table);
    out.config.insert(
        STAGE.into(),
        json!({"max_parents": opts.max_parents, "restarts": opts.restarts, "alpha": opts.alpha, "seed": config.seed}),
    );
    out.net = Some(net);
    save(&out, dir, STAGE)
}

pub struct ArtifactOptions {
    pub insights: usize,
    pub per_node_cap: Option<usize>,
}

pub fn artifacts(dir: &Path, opts: &ArtifactOptions) -> Result<(usize, usize)> {
    const STAGE: &str = "artifacts";
    if opts.insights == 0 || opts.per_node_cap == Some(0) {
        return Err(CliError::usage(STAGE, "--insights and --per-node-cap must be at least 1"));
    }
    let bundle = load(dir, STAGE, &[Artifact::Codebook, Artifact::BayesNet])?;
    let net = bundle.net.as_ref().expect("requested");
    let codebook = bundle.codebook.as_ref().expect("requested");
    let premises = generate_rendered_premises(net, codebook).map_err(|e| CliError::data(STAGE, "codebook.json", e))?;
    let insights = extract_insights(net, &premises, opts.insights, opts.per_node_cap)
        .map_err(|e| CliError::data(STAGE, "bayesnet.json", e))?;
    let counts = (premises.len(), insights.len());
    let mut out = ArtifactBundle::new(bundle.table);
    out.config.insert(
        STAGE.into(),
        json!({"insights": opts.insights, "per_node_cap": opts.per_node_cap}),
    );
    out.premises = Some(premises);
    out.insights = Some(insights);
    save(&out, dir, STAGE)?;
    Ok(counts)
}

pub fn genbench(
    dir: &Path,
    seed: u64,
    mut config: SynthesisConfig,
    paraphrase: Option<&dyn LanguageModelClient>,
) -> Result<usize> {
    const STAGE: &str = "genbench";
    if config.max_evidence == 0 {
        return Err(CliError::usage(STAGE, "--max-evidence must be at least 1"));
    }
    if config.test_fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
        return Err(CliError::usage(STAGE, "--test-fraction must lie in [0, 1]"));
    }
    config.seed = stage_seed(seed, STAGE);
    let bundle = load(dir, STAGE, &[Artifact::Codebook, Artifact::BayesNet])?;
    let net = bundle.net.as_ref().expect("requested");
    let codebook = bundle.codebook.clone().expect("requested");
    let out_items = synthesize_items(net, &codebook, &bundle.table, &config, paraphrase).map_err(|e| match e {
        probtab::benchgen::BenchError::Paraphrase(e) => CliError::llm(STAGE, e),
        e => CliError::data(STAGE, "bayesnet.json", e),
    })?;
    for s in &out_items.shortfall {
        eprintln!(
            "warning: {}: generated {} of {} {} queries; the network cannot support more",
            bundle.table,
            s.produced,
            s.requested,
            s.query_type.as_str()
        );
    }
    let n = out_items.items.len();
    let mut out = ArtifactBundle::new(bundle.table);
    out.config.insert(STAGE.into(), serde_json::to_value(&config).expect("config serializes"));
    out.codebook = Some(codebook);
    out.benchmark = Some(out_items.items);
    save(&out, dir, STAGE)?;
    Ok(n)
}

pub fn query(dir: &Path, text: &str) -> Result<f64> {
    const STAGE: &str = "query";
    let bundle = load(dir, STAGE, &[Artifact::Codebook, Artifact::BayesNet])?;
    let codebook = bundle.codebook.as_ref().expect("requested");
    let q = probtab::querylang::parse_query(text, codebook).map_err(|e| CliError::data(STAGE, "query", e))?;
    probtab::inference::answer_query(bundle.net.as_ref().expect("requested"), &q)
        .map_err(|e| CliError::data(STAGE, "bayesnet.json", e))
}

/// How to obtain a language model, as given on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum LlmSpec {
    /// Replies with the stored answer for the question found in the prompt:
    /// the resolved query for translation, the ground truth otherwise.
    Echo,
    Script(String),
    Constant(String),
    Remote,
}

impl std::str::FromStr for LlmSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "echo" => Ok(Self::Echo),
            "remote" => Ok(Self::Remote),
            _ => {
                if let Some(path) = s.strip_prefix("script:") {
                    Ok(Self::Script(path.to_string()))
                } else if let Some(text) = s.strip_prefix("constant:") {
                    Ok(Self::Constant(text.to_string()))
                } else {
                    Err(format!("unknown model {s:?} (echo, script:PATH, constant:TEXT, remote)"))
                }
            }
        }
    }
}

fn echo_mock(method: Method, items: &[BenchmarkItem], codebook: &probtab::ingest::Codebook) -> ScriptedMock {
    let pairs = items.iter().flat_map(|item| {
        item.variants.iter().map(move |v| {
            let reply = match method {
                Method::Autobn => render_query(&v.resolved, codebook),
                _ => format!("{}", v.ground_truth),
            };
            (v.question.clone(), reply)
        })
    });
    ScriptedMock::keyed(pairs.collect::<Vec<_>>())
}

pub fn make_llm(
    stage: &'static str,
    spec: &LlmSpec,
    method: Method,
    items: &[BenchmarkItem],
    codebook: &probtab::ingest::Codebook,
) -> Result<Box<dyn LanguageModelClient>> {
    Ok(match spec {
        LlmSpec::Echo => Box::new(echo_mock(method, items, codebook)),
        LlmSpec::Constant(text) => Box::new(ScriptedMock::constant(text.clone())),
        LlmSpec::Script(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(stage, format!("{path}: {e}")))?;
            Box::new(ScriptedMock::from_json(&text).map_err(|e| CliError::usage(stage, format!("{path}: {e}")))?)
        }
        LlmSpec::Remote => Box::new(RemoteClient::from_env().map_err(|e| CliError::llm(stage, e))?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbedderSpec {
    None,
    Hash(usize),
    Remote(usize),
}

pub struct EvalOptions {
    pub method: Method,
    pub variants: Option<Vec<VariantType>>,
    pub llm: LlmSpec,
    pub retrieval: RetrievalMode,
    pub k_premises: usize,
    pub k_insights: usize,
    pub embedder: EmbedderSpec,
    pub style: RenderStyle,
}

/// Runs one method over the bundle's benchmark, stores its predictions and
/// refreshes the bundle report from every prediction file present.
pub fn evaluate(dir: &Path, seed: u64, opts: &EvalOptions) -> Result<Report> {
    const STAGE: &str = "eval";
    if opts.k_premises == 0 || opts.k_insights == 0 {
        return Err(CliError::usage(STAGE, "--k-premises and --k-insights must be at least 1"));
    }
    let variants = opts.variants.clone().unwrap_or_else(|| match opts.method {
        Method::Autobn => vec![VariantType::Natural],
        _ => VariantType::ALL.to_vec(),
    });
    let mut need = vec![Artifact::Codebook, Artifact::BayesNet, Artifact::Benchmark];
    match opts.method {
        Method::Premise => need.push(Artifact::Premises),
        Method::PremiseInsights => need.extend([Artifact::Premises, Artifact::Insights]),
        _ => {}
    }
    let bundle = load(dir, STAGE, &need)?;
    let codebook = bundle.codebook.as_ref().expect("requested");
    let net = bundle.net.as_ref().expect("requested");
    let items = bundle.benchmark.as_deref().expect("requested");
    let description = format!(
        "Table {} with columns: {}.",
        bundle.table,
        codebook.names().collect::<Vec<_>>().join(", ")
    );

    let records: Vec<EvalRecord> = match opts.method {
        Method::Random => run_random(items, stage_seed(seed, "eval-random"), &variants),
        Method::Autobn => {
            let llm = make_llm(STAGE, &opts.llm, opts.method, items, codebook)?;
            run_autobn(net, codebook, items, llm.as_ref(), &variants).map_err(|e| CliError::eval(STAGE, e))?
        }
        Method::Premise | Method::PremiseInsights => {
            let embedder: Option<Arc<dyn Embedder>> = match opts.embedder {
                EmbedderSpec::None => None,
                EmbedderSpec::Hash(dim) => Some(Arc::new(
                    HashEmbedder::new(dim).ok_or_else(|| CliError::usage(STAGE, "--embed-dim must be at least 8"))?,
                )),
                EmbedderSpec::Remote(dim) => {
                    Some(Arc::new(RemoteEmbedder::from_env(dim).map_err(|e| CliError::retrieval(STAGE, e))?))
                }
            };
            if opts.retrieval != RetrievalMode::Bm25 && embedder.is_none() {
                return Err(CliError::usage(STAGE, "vector and hybrid retrieval need --embedder"));
            }
            let premises = bundle.premises.as_deref().expect("requested");
            let index = build_index(premises, opts.style, embedder.clone()).map_err(|e| CliError::retrieval(STAGE, e))?;
            let insight_index = match &bundle.insights {
                Some(ins) if opts.method == Method::PremiseInsights => {
                    let ps: Vec<_> = ins.iter().map(|i| i.premise.clone()).collect();
                    Some(build_index(&ps, opts.style, embedder).map_err(|e| CliError::retrieval(STAGE, e))?)
                }
                _ => None,
            };
            let config = PremiseMethodConfig {
                k_premises: opts.k_premises,
                k_insights: opts.k_insights,
                mode: opts.retrieval,
            };
            let llm = make_llm(STAGE, &opts.llm, opts.method, items, codebook)?;
            run_premise_method(
                &index,
                insight_index.as_ref(),
                codebook,
                items,
                llm.as_ref(),
                &config,
                &description,
                &variants,
            )
            .map_err(|e| CliError::eval(STAGE, e))?
        }
    };
    if records.is_empty() {
        return Err(CliError::data(STAGE, "benchmark.jsonl", "no questions match the selected variants"));
    }

    let mut out = ArtifactBundle::new(bundle.table.clone());
    out.config.insert(
        format!("eval.{}", opts.method.as_str()),
        json!({
            "variants": variants.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
            "retrieval": opts.retrieval,
            "k_premises": opts.k_premises,
            "k_insights": opts.k_insights,
            "style": opts.style,
        }),
    );
    out.predictions.insert(opts.method.as_str().to_string(), records);
    save(&out, dir, STAGE)?;

    let all = load(dir, STAGE, &[Artifact::Predictions])?;
    let report = bundle_report(&all)?;
    let mut with_report = ArtifactBundle::new(bundle.table);
    with_report.report = Some(report.clone());
    save(&with_report, dir, STAGE)?;
    Ok(report)
}

fn bundle_results(bundle: &ArtifactBundle) -> Result<Vec<probtab::eval::TableResult>> {
    let mut results = Vec::new();
    for (method, records) in &bundle.predictions {
        results.extend(
            table_results(&bundle.table, method, records)
                .map_err(|e| CliError::data("report", format!("predictions/{method}.jsonl"), e))?,
        );
    }
    Ok(results)
}

fn bundle_report(bundle: &ArtifactBundle) -> Result<Report> {
    Ok(aggregate(&bundle_results(bundle)?))
}

/// Aggregates the prediction files of several bundles.
pub fn report(dirs: &[std::path::PathBuf]) -> Result<Report> {
    let mut results = Vec::new();
    for dir in dirs {
        let bundle = load(dir, "report", &[Artifact::Predictions])?;
        results.extend(bundle_results(&bundle)?);
    }
    if results.is_empty() {
        return Err(CliError::data("report", "predictions", "no prediction files found"));
    }
    Ok(aggregate(&results))
}

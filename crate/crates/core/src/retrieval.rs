//! Lexical (BM25), vector and fused retrieval over a premise store.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::artifacts::{Premise, RenderStyle};
use crate::llm::{http_client, post_json, LlmError, RemoteConfig, EMBED_ENV_PREFIX};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const RRF_K: f64 = 60.0;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty premise store")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{0:?} retrieval needs an embedder")]
    NoEmbedder(RetrievalMode),
    #[error("embedder {name} returned {found} values, expected {expected}")]
    Dimension { name: String, found: usize, expected: usize },
    #[error("embedder returned {found} vectors for {expected} texts")]
    BatchSize { found: usize, expected: usize },
    #[error(transparent)]
    Remote(#[from] LlmError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Bm25,
    Vector,
    Hybrid,
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(Self::Bm25),
            "vector" => Ok(Self::Vector),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown retrieval mode {other:?} (bm25, vector, hybrid)")),
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or(RetrievalError::BatchSize { found: 0, expected: 1 })
    }
}

/// Feature hashing of tokens into signed buckets, L2-normalized.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    name: String,
}

impl HashEmbedder {
    pub const MIN_DIMENSION: usize = 8;

    pub fn new(dim: usize) -> Option<Self> {
        (dim >= Self::MIN_DIMENSION).then(|| Self {
            dim,
            name: format!("hash-{dim}"),
        })
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Embeds through an HTTP endpoint taking `{"texts": [...]}` and answering
/// `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, dim: usize) -> Result<Self, RetrievalError> {
        let http = http_client(&config)?;
        Ok(Self { config, http, dim })
    }

    pub fn from_env(dim: usize) -> Result<Self, RetrievalError> {
        Self::new(RemoteConfig::from_env(EMBED_ENV_PREFIX)?, dim)
    }
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let reply = post_json(&self.http, &self.config, &json!({ "texts": texts, "model": self.config.model }))?;
        let malformed = |reason: &str| LlmError::Malformed {
            endpoint: self.config.endpoint.clone(),
            reason: reason.into(),
        };
        let vectors: Vec<Vec<f64>> =
            serde_json::from_value(reply["vectors"].clone()).map_err(|_| malformed("expected vectors: [[number]]"))?;
        if vectors.len() != texts.len() {
            return Err(RetrievalError::BatchSize {
                found: vectors.len(),
                expected: texts.len(),
            });
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != self.dim) {
            return Err(RetrievalError::Dimension {
                name: self.config.model.clone(),
                found: v.len(),
                expected: self.dim,
            });
        }
        Ok(vectors)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

pub struct PremiseIndex {
    style: RenderStyle,
    ids: Vec<String>,
    by_id: HashMap<String, usize>,
    texts: Vec<String>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freq: BTreeMap<String, usize>,
    avg_len: f64,
    embedder: Option<Arc<dyn Embedder>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

impl std::fmt::Debug for PremiseIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PremiseIndex")
            .field("style", &self.style)
            .field("docs", &self.ids.len())
            .field("avg_len", &self.avg_len)
            .field("embedder", &self.embedder.as_ref().map(|e| e.name().to_string()))
            .finish()
    }
}

/// Indexes the premises' rendering in `style`; embeds every document when an
/// embedder is supplied.
pub fn build_index(
    premises: &[Premise],
    style: RenderStyle,
    embedder: Option<Arc<dyn Embedder>>,
) -> Result<PremiseIndex, RetrievalError> {
    if premises.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let texts: Vec<String> = premises.iter().map(|p| p.text(style).to_string()).collect();
    let mut doc_freq = BTreeMap::new();
    let mut term_freqs = Vec::with_capacity(texts.len());
    let mut doc_lens = Vec::with_capacity(texts.len());
    for text in &texts {
        let tokens = tokenize(text);
        doc_lens.push(tokens.len());
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_default() += 1;
        }
        term_freqs.push(tf);
    }
    let avg_len = doc_lens.iter().sum::<usize>() as f64 / texts.len() as f64;
    let embeddings = match &embedder {
        Some(e) => {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let vectors = e.embed_batch(&refs)?;
            if vectors.len() != refs.len() {
                return Err(RetrievalError::BatchSize {
                    found: vectors.len(),
                    expected: refs.len(),
                });
            }
            Some(vectors)
        }
        None => None,
    };
    Ok(PremiseIndex {
        style,
        ids: premises.iter().map(|p| p.id.clone()).collect(),
        by_id: premises.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect(),
        texts,
        term_freqs,
        doc_lens,
        doc_freq,
        avg_len,
        embedder,
        embeddings,
    })
}

impl PremiseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn style(&self) -> RenderStyle {
        self.style
    }

    pub fn embedder(&self) -> Option<Arc<dyn Embedder>> {
        self.embedder.clone()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.doc_lens[doc]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn id(&self, doc: usize) -> &str {
        &self.ids[doc]
    }

    pub fn text_of(&self, id: &str) -> Option<&str> {
        self.by_id.get(id).map(|&i| self.texts[i].as_str())
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of every document; each distinct query term counts once.
    pub fn bm25_scores(&self, query: &str) -> Vec<f64> {
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        let idfs: Vec<(&String, f64)> = terms.iter().map(|t| (t, self.idf(t))).collect();
        (0..self.len())
            .map(|d| {
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * self.doc_lens[d] as f64 / self.avg_len.max(f64::MIN_POSITIVE));
                idfs.iter()
                    .map(|(t, idf)| match self.term_freqs[d].get(*t) {
                        Some(&tf) => idf * tf as f64 * (BM25_K1 + 1.0) / (tf as f64 + norm),
                        None => 0.0,
                    })
                    .sum()
            })
            .collect()
    }

    fn vector_scores(&self, query: &str) -> Result<Vec<f64>, RetrievalError> {
        let (Some(embedder), Some(matrix)) = (&self.embedder, &self.embeddings) else {
            return Err(RetrievalError::NoEmbedder(RetrievalMode::Vector));
        };
        let q = embedder.embed(query)?;
        Ok(matrix.iter().map(|d| cosine(&q, d)).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn rank(index: &PremiseIndex, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| index.ids[a].cmp(&index.ids[b])));
    order
}

/// Reciprocal-rank fusion: each list contributes `1 / (60 + rank)` with
/// 1-based ranks.
pub fn rrf_scores(n: usize, rankings: &[Vec<usize>]) -> Vec<f64> {
    let mut scores = vec![0.0; n];
    for ranking in rankings {
        for (r, &doc) in ranking.iter().enumerate() {
            scores[doc] += 1.0 / (RRF_K + (r + 1) as f64);
        }
    }
    scores
}

/// Top `min(k, N)` premises for `query`, ties broken by premise id. A query
/// with no tokens yields nothing.
pub fn retrieve(index: &PremiseIndex, query: &str, k: usize, mode: RetrievalMode) -> Result<Vec<Scored>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if mode != RetrievalMode::Bm25 && index.embedder.is_none() {
        return Err(RetrievalError::NoEmbedder(mode));
    }
    if tokenize(query).is_empty() {
        return Ok(Vec::new());
    }
    let scores = match mode {
        RetrievalMode::Bm25 => index.bm25_scores(query),
        RetrievalMode::Vector => index.vector_scores(query)?,
        RetrievalMode::Hybrid => {
            let lexical = rank(index, &index.bm25_scores(query));
            let semantic = rank(index, &index.vector_scores(query)?);
            rrf_scores(index.len(), &[lexical, semantic])
        }
    };
    Ok(rank(index, &scores)
        .into_iter()
        .take(k)
        .map(|d| Scored {
            id: index.ids[d].clone(),
            score: scores[d],
        })
        .collect())
}

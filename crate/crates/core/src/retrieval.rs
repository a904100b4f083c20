//! Document chunking, BM25 and dense ranking, and time/complex-event scoping.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::model::{ComplexEventId, Dataset, Document, DocumentId, EntityId, RelativeDay};
use crate::text::lexical_terms;

pub const DEFAULT_CHUNK_TOKENS: usize = 150;
pub const DEFAULT_OVERLAP_TOKENS: usize = 30;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("overlap_tokens ({overlap}) must be smaller than chunk_tokens ({chunk})")]
    BadChunking { chunk: usize, overlap: usize },
    #[error("embedding failed: {0}")]
    Embedding(#[source] GatewayError),
    #[error("dense retrieval needs a gateway")]
    NoEmbedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: u32,
    pub doc_id: DocumentId,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
    pub text: String,
    pub token_count: usize,
}

/// Splits each body into windows of `chunk_tokens` whitespace tokens, with
/// consecutive windows sharing `overlap_tokens`. Chunk ids are assigned
/// sequentially in input order.
pub fn chunk_documents<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    chunk_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<Chunk>, RetrievalError> {
    if overlap_tokens >= chunk_tokens {
        return Err(RetrievalError::BadChunking {
            chunk: chunk_tokens,
            overlap: overlap_tokens,
        });
    }
    let stride = chunk_tokens - overlap_tokens;
    let mut out = Vec::new();
    for doc in docs {
        let tokens: Vec<&str> = doc.body.split_whitespace().collect();
        let mut start = 0;
        while start < tokens.len() {
            let end = (start + chunk_tokens).min(tokens.len());
            out.push(Chunk {
                chunk_id: out.len() as u32,
                doc_id: doc.doc_id,
                t: doc.t,
                complex_event: doc.complex_event,
                text: tokens[start..end].join(" "),
                token_count: end - start,
            });
            if end == tokens.len() {
                break;
            }
            start += stride;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkRef {
    pub chunk_id: u32,
    pub doc_id: DocumentId,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
}

impl From<&Chunk> for ChunkRef {
    fn from(c: &Chunk) -> Self {
        ChunkRef {
            chunk_id: c.chunk_id,
            doc_id: c.doc_id,
            t: c.t,
            complex_event: c.complex_event,
        }
    }
}

#[derive(Debug, Clone)]
struct IndexedChunk {
    chunk: ChunkRef,
    tf: HashMap<String, u32>,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct LexicalIndex {
    params: Bm25Params,
    df: HashMap<String, usize>,
    chunks: Vec<IndexedChunk>,
    avg_len: f64,
}

impl LexicalIndex {
    pub fn build<'a>(chunks: impl IntoIterator<Item = &'a Chunk>) -> Self {
        Self::with_params(chunks, Bm25Params::default())
    }

    pub fn with_params<'a>(chunks: impl IntoIterator<Item = &'a Chunk>, params: Bm25Params) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut indexed = Vec::new();
        for c in chunks {
            let terms = lexical_terms(&c.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for term in &terms {
                *tf.entry(term.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
            indexed.push(IndexedChunk {
                chunk: c.into(),
                tf,
                len: terms.len(),
            });
        }
        let avg_len = if indexed.is_empty() {
            0.0
        } else {
            indexed.iter().map(|c| c.len as f64).sum::<f64>() / indexed.len() as f64
        };
        LexicalIndex {
            params,
            df,
            chunks: indexed,
            avg_len,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.chunks.len()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn average_length(&self) -> f64 {
        self.avg_len
    }

    pub fn chunk_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.chunks.iter().map(|c| c.len)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.document_frequency(term) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk: ChunkRef,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Okapi BM25 over deduplicated query terms. Zero-score chunks are dropped.
pub fn rank_bm25(index: &LexicalIndex, query: &str, top_k: usize) -> Vec<RankedChunk> {
    let mut terms = lexical_terms(query);
    let mut seen = std::collections::HashSet::new();
    terms.retain(|t| seen.insert(t.clone()));
    terms.retain(|t| index.df.contains_key(t));
    if terms.is_empty() {
        return Vec::new();
    }
    let Bm25Params { k1, b } = index.params;
    let idf: Vec<f64> = terms.iter().map(|t| index.idf(t)).collect();
    let scored = index.chunks.iter().map(|c| {
        let norm = k1 * (1.0 - b + b * c.len as f64 / index.avg_len);
        let score = terms
            .iter()
            .zip(&idf)
            .map(|(term, idf)| {
                let tf = f64::from(c.tf.get(term).copied().unwrap_or(0));
                idf * tf * (k1 + 1.0) / (tf + norm)
            })
            .sum::<f64>();
        (c.chunk, score)
    });
    finish_ranking(scored, top_k)
}

pub trait Embedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

impl Embedder for Gateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.embed_texts(texts)
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

/// Cosine ranking of chunks against the query. Non-positive scores are
/// dropped.
pub fn rank_dense(
    chunks: &[Chunk],
    query: &str,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<Vec<RankedChunk>, RetrievalError> {
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts: Vec<String> = vec![query.to_owned()];
    texts.extend(chunks.iter().map(|c| c.text.clone()));
    let vectors = embedder.embed(&texts).map_err(RetrievalError::Embedding)?;
    Ok(rank_vectors(
        &vectors[0],
        chunks.iter().map(ChunkRef::from).zip(&vectors[1..]),
        top_k,
    ))
}

fn rank_vectors<'a>(
    query: &[f64],
    chunks: impl Iterator<Item = (ChunkRef, &'a Vec<f64>)>,
    top_k: usize,
) -> Vec<RankedChunk> {
    finish_ranking(chunks.map(|(c, v)| (c, cosine(query, v))), top_k)
}

fn finish_ranking(scored: impl Iterator<Item = (ChunkRef, f64)>, top_k: usize) -> Vec<RankedChunk> {
    let mut hits: Vec<(ChunkRef, f64)> = scored.filter(|(_, s)| *s > 0.0).collect();
    sort_hits(&mut hits);
    hits.truncate(top_k);
    hits.into_iter()
        .enumerate()
        .map(|(i, (chunk, score))| RankedChunk {
            chunk,
            score,
            rank: i + 1,
        })
        .collect()
}

fn sort_hits(hits: &mut [(ChunkRef, f64)]) {
    hits.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.0.t.cmp(&a.0.t))
            .then(a.0.chunk_id.cmp(&b.0.chunk_id))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeKind {
    None,
    Global,
    ComplexEvent,
}

impl ScopeKind {
    pub const ALL: [ScopeKind; 3] = [ScopeKind::None, ScopeKind::Global, ScopeKind::ComplexEvent];

    /// Row label used in sweep tables.
    pub fn label(self) -> &'static str {
        match self {
            ScopeKind::None => "without-history",
            ScopeKind::Global => "global",
            ScopeKind::ComplexEvent => "complex-event",
        }
    }
}

impl std::str::FromStr for ScopeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" | "without-history" => Ok(ScopeKind::None),
            "global" => Ok(ScopeKind::Global),
            "complex-event" | "complex_event" => Ok(ScopeKind::ComplexEvent),
            _ => Err(format!("unknown scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScopeRef {
    pub subject: EntityId,
    pub t: RelativeDay,
    pub complex_event: ComplexEventId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub kind: ScopeKind,
    /// Admits items with `t >= reference.t - window_days`.
    pub window_days: Option<u32>,
    pub reference: ScopeRef,
}

impl Scope {
    pub fn admits(&self, t: RelativeDay, ce: ComplexEventId) -> bool {
        if t >= self.reference.t {
            return false;
        }
        if let Some(h) = self.window_days {
            if t < self.reference.t.saturating_sub(h) {
                return false;
            }
        }
        match self.kind {
            ScopeKind::None => false,
            ScopeKind::Global => true,
            ScopeKind::ComplexEvent => ce == self.reference.complex_event,
        }
    }
}

pub fn apply_scope<T>(
    items: impl IntoIterator<Item = (RelativeDay, ComplexEventId, T)>,
    scope: &Scope,
) -> Vec<(RelativeDay, ComplexEventId, T)> {
    items
        .into_iter()
        .filter(|(t, ce, _)| scope.admits(*t, *ce))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Dense => "dense",
        }
    }
}

impl std::str::FromStr for RetrieverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bm25" => Ok(RetrieverKind::Bm25),
            "dense" => Ok(RetrieverKind::Dense),
            _ => Err(format!("unknown retriever {s:?}")),
        }
    }
}

/// Chunked corpus of one dataset with per-window index caching.
///
/// BM25 statistics come from every chunk inside the time window, whatever the
/// scope; scoping only filters the ranked list.
pub struct Retriever {
    kind: RetrieverKind,
    chunks: Vec<Chunk>,
    indexes: Mutex<HashMap<(u32, u32), Arc<LexicalIndex>>>,
    vectors: Mutex<HashMap<u32, Arc<Vec<f64>>>>,
}

impl Retriever {
    pub fn new(
        ds: &Dataset,
        kind: RetrieverKind,
        chunk_tokens: usize,
        overlap_tokens: usize,
    ) -> Result<Self, RetrievalError> {
        let mut docs: Vec<&Document> = ds.documents().collect();
        docs.sort_by_key(|d| (d.t, d.doc_id));
        Ok(Retriever {
            kind,
            chunks: chunk_documents(docs, chunk_tokens, overlap_tokens)?,
            indexes: Mutex::new(HashMap::new()),
            vectors: Mutex::new(HashMap::new()),
        })
    }

    pub fn kind(&self) -> RetrieverKind {
        self.kind
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    fn window(&self, scope: &Scope) -> &[Chunk] {
        let end = scope.reference.t;
        let start = scope
            .window_days
            .map(|h| end.saturating_sub(h))
            .unwrap_or(RelativeDay(0));
        let lo = self.chunks.partition_point(|c| c.t < start);
        let hi = self.chunks.partition_point(|c| c.t < end).max(lo);
        &self.chunks[lo..hi]
    }

    /// Ranks chunks admitted by `scope`; `top_k = None` keeps every hit.
    pub fn retrieve(
        &self,
        query: &str,
        scope: &Scope,
        gateway: Option<&Gateway>,
        top_k: Option<usize>,
    ) -> Result<Vec<RankedChunk>, RetrievalError> {
        if scope.kind == ScopeKind::None {
            return Ok(Vec::new());
        }
        let window = self.window(scope);
        let hits: Vec<RankedChunk> = match self.kind {
            RetrieverKind::Bm25 => {
                let index = self.index_for(scope, window);
                rank_bm25(&index, query, usize::MAX)
            }
            RetrieverKind::Dense => {
                let gw = gateway.ok_or(RetrievalError::NoEmbedder)?;
                let scoped: Vec<&Chunk> = window
                    .iter()
                    .filter(|c| scope.admits(c.t, c.complex_event))
                    .collect();
                let query_vec = gw
                    .embed_texts(&[query.to_owned()])
                    .map_err(RetrievalError::Embedding)?
                    .remove(0);
                let vectors = self.chunk_vectors(&scoped, gw)?;
                rank_vectors(
                    &query_vec,
                    scoped.iter().map(|c| ChunkRef::from(*c)).zip(vectors.iter().map(|v| &**v)),
                    usize::MAX,
                )
            }
        };
        let mut hits: Vec<(ChunkRef, f64)> = hits
            .into_iter()
            .filter(|h| scope.admits(h.chunk.t, h.chunk.complex_event))
            .map(|h| (h.chunk, h.score))
            .collect();
        sort_hits(&mut hits);
        hits.truncate(top_k.unwrap_or(usize::MAX));
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, (chunk, score))| RankedChunk {
                chunk,
                score,
                rank: i + 1,
            })
            .collect())
    }

    fn index_for(&self, scope: &Scope, window: &[Chunk]) -> Arc<LexicalIndex> {
        let key = (scope.reference.t.0, scope.window_days.unwrap_or(u32::MAX));
        let mut cache = self.indexes.lock().expect("index cache poisoned");
        cache
            .entry(key)
            .or_insert_with(|| Arc::new(LexicalIndex::build(window)))
            .clone()
    }

    fn chunk_vectors(
        &self,
        chunks: &[&Chunk],
        gw: &Gateway,
    ) -> Result<Vec<Arc<Vec<f64>>>, RetrievalError> {
        let missing: Vec<&Chunk> = {
            let cache = self.vectors.lock().expect("vector cache poisoned");
            chunks
                .iter()
                .filter(|c| !cache.contains_key(&c.chunk_id))
                .copied()
                .collect()
        };
        if !missing.is_empty() {
            let texts: Vec<String> = missing.iter().map(|c| c.text.clone()).collect();
            let vecs = gw.embed_texts(&texts).map_err(RetrievalError::Embedding)?;
            let mut cache = self.vectors.lock().expect("vector cache poisoned");
            for (c, v) in missing.iter().zip(vecs) {
                cache.insert(c.chunk_id, Arc::new(v));
            }
        }
        let cache = self.vectors.lock().expect("vector cache poisoned");
        Ok(chunks.iter().map(|c| cache[&c.chunk_id].clone()).collect())
    }
}

//! Dense retrieval over code cells: cosine similarity, embedding providers
//! and an exhaustive-scan vector index.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::notebook::CellPair;
use crate::text::tokenize;
use crate::{Error, Result};

/// A finite, non-empty dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVector(i));
        }
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(cosine_with_norms(a.values(), na, b.values(), nb))
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Turns texts into fixed-dimension vectors, order-aligned with the input.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

/// Embeds `texts` and checks the provider kept its declared dimension.
pub fn embed(texts: &[String], provider: &dyn Embedder) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let vectors = provider.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::ProviderUnavailable {
            attempts: 1,
            detail: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
        });
    }
    if let Some(v) = vectors.iter().find(|v| v.dim() != provider.dim()) {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            actual: v.dim(),
        });
    }
    Ok(vectors)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hermetic bag-of-tokens embedding: each token adds one to bucket
/// `fnv1a(token) mod dim`, and the counts are L2-normalized. Texts without
/// tokens map to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be > 0".into()));
        }
        Ok(Self { dim })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text).tokens() {
            values[self.bucket(token)] += 1.0;
        }
        let norm = dot(&values, &values).sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector(values)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

/// Client for an embedding service speaking `POST /embed`.
///
/// Request body `{"texts": [...]}`, response `{"vectors": [[...]], "dim": d}`.
/// Transport failures and non-200 replies are retried with exponential
/// backoff; a reply that breaks the declared dimension is not.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    dim: usize,
    retries: u32,
    backoff: Duration,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub const DEFAULT_RETRIES: u32 = 3;
    pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(500);

    pub fn new(endpoint: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be > 0".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            client,
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dim,
            retries: Self::DEFAULT_RETRIES,
            backoff: Self::DEFAULT_BACKOFF,
            batch_size: 32,
        })
    }

    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn request(&self, texts: &[String]) -> std::result::Result<Vec<EmbeddingVector>, Attempt> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        if body.dim != self.dim {
            return Err(Attempt::Fatal(format!(
                "service dim {} != configured dim {}",
                body.dim, self.dim
            )));
        }
        if body.vectors.len() != texts.len() {
            return Err(Attempt::Fatal(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Attempt::Fatal(format!(
                        "vector of length {} != dim {}",
                        v.len(),
                        self.dim
                    )));
                }
                EmbeddingVector::new(v).map_err(|e| Attempt::Fatal(e.to_string()))
            })
            .collect()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.request(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(Attempt::Fatal(detail)) => {
                    return Err(Error::ProviderUnavailable { attempts, detail })
                }
                Err(Attempt::Retry(detail)) => {
                    if attempts > self.retries {
                        return Err(Error::ProviderUnavailable { attempts, detail });
                    }
                    let delay = self.backoff * 2u32.pow(attempts - 1);
                    log::warn!("embedding request failed ({detail}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
            }
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Hash,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(ProviderKind::Remote),
            "hash" => Ok(ProviderKind::Hash),
            other => Err(format!(
                "unknown provider `{other}` (expected remote or hash)"
            )),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Remote => "remote",
            ProviderKind::Hash => "hash",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderSpec {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub dim: usize,
}

impl EmbeddingProviderSpec {
    pub fn hash(dim: usize) -> Self {
        Self {
            kind: ProviderKind::Hash,
            endpoint: None,
            dim,
        }
    }

    pub fn remote(endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            dim,
        }
    }

    pub fn connect(&self) -> Result<Box<dyn Embedder>> {
        match self.kind {
            ProviderKind::Hash => Ok(Box::new(HashEmbedder::new(self.dim)?)),
            ProviderKind::Remote => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| {
                    Error::InvalidConfig("remote provider needs an endpoint".into())
                })?;
                Ok(Box::new(RemoteEmbedder::new(endpoint, self.dim)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VectorHit<'a> {
    pub pair: &'a CellPair,
    pub similarity: f64,
}

/// Code-cell embeddings keyed by pair, searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub(crate) dim: usize,
    pub(crate) docs: Vec<CellPair>,
    pub(crate) vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
}

impl VectorIndex {
    /// Embeds the code side of every pair. Nothing is returned unless every
    /// embedding succeeds.
    pub fn build(pairs: &[CellPair], provider: &dyn Embedder) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut docs = pairs.to_vec();
        docs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::DuplicateDocId(w[0].pair_id.clone()));
        }
        let codes: Vec<String> = docs.iter().map(|p| p.code.clone()).collect();
        let vectors = embed(&codes, provider)?;
        Self::from_parts(provider.dim(), docs, vectors)
    }

    /// Assembles an index from precomputed vectors, aligned with `docs`.
    pub fn from_parts(
        dim: usize,
        docs: Vec<CellPair>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        if docs.len() != vectors.len() {
            return Err(Error::InvalidConfig(format!(
                "{} pairs but {} vectors",
                docs.len(),
                vectors.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| docs[a].pair_id.cmp(&docs[b].pair_id));
        let docs: Vec<CellPair> = order.iter().map(|&i| docs[i].clone()).collect();
        let vectors: Vec<EmbeddingVector> = order.iter().map(|&i| vectors[i].clone()).collect();
        if let Some(w) = docs.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::DuplicateDocId(w[0].pair_id.clone()));
        }
        let norms = vectors.iter().map(EmbeddingVector::norm).collect();
        Ok(Self {
            dim,
            docs,
            vectors,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Indexed pairs, sorted by pair id.
    pub fn docs(&self) -> &[CellPair] {
        &self.docs
    }

    pub fn vector(&self, pair_id: &str) -> Option<&EmbeddingVector> {
        self.docs
            .binary_search_by(|p| p.pair_id.as_str().cmp(pair_id))
            .ok()
            .map(|i| &self.vectors[i])
    }

    /// Ranks every entry by cosine similarity to `query`, highest first,
    /// ties to the smaller pair id. A zero vector on either side scores 0.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<VectorHit<'_>>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let qn = query.norm();
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (v, &n))| {
                let sim = if qn == 0.0 || n == 0.0 {
                    0.0
                } else {
                    cosine_with_norms(query.values(), qn, v.values(), n)
                };
                (i, sim)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, similarity)| VectorHit {
                pair: &self.docs[i],
                similarity,
            })
            .collect())
    }

    /// Embeds the query markdown with `provider` and ranks code cells.
    pub fn top_k(
        &self,
        query_markdown: &str,
        provider: &dyn Embedder,
        k: usize,
    ) -> Result<Vec<VectorHit<'_>>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let query = embed(&[query_markdown.to_string()], provider)?.remove(0);
        self.search(&query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notebook::AuthorRank;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn pair(id: &str, code: &str) -> CellPair {
        CellPair {
            pair_id: id.into(),
            markdown: format!("md {id}"),
            code: code.into(),
            notebook_id: "nb".into(),
            author_rank: AuthorRank::Master,
            position: 1,
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[1.0, 2.0]), &v(&[2.0, 4.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFiniteVector(1))
        ));
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_embedding_single_token_mass() {
        let e = HashEmbedder::new(8).unwrap();
        let out = e.embed(&["plot plot".to_string()]).unwrap();
        let b = e.bucket("plot");
        assert_eq!(out[0].values()[b], 1.0);
        assert!((out[0].norm() - 1.0).abs() < 1e-15);
        assert_eq!(out[0].values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn hash_embedding_is_deterministic() {
        let e = HashEmbedder::new(64).unwrap();
        let texts = vec![
            "plt.scatter(x, y)".to_string(),
            "plt.scatter(x, y)".to_string(),
        ];
        let out = e.embed(&texts).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(
            out[0],
            HashEmbedder::new(64).unwrap().embed(&texts[..1]).unwrap()[0]
        );
    }

    #[test]
    fn hash_embedding_scatter_chart() {
        // fnv1a("scatter") % 8 = 1 and fnv1a("chart") % 8 = 3 (computed
        // independently); distinct buckets give e1 vs (e1 + e3)/sqrt(2).
        let e = HashEmbedder::new(8).unwrap();
        assert_eq!(e.bucket("scatter"), 1);
        assert_eq!(e.bucket("chart"), 3);
        let out = e
            .embed(&["scatter".to_string(), "scatter chart".to_string()])
            .unwrap();
        let c = cosine(&out[0], &out[1]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn embed_rejects_empty_input() {
        let e = HashEmbedder::new(4).unwrap();
        assert!(matches!(embed(&[], &e), Err(Error::EmptyInput)));
        assert!(HashEmbedder::new(0).is_err());
    }

    #[test]
    fn build_and_query() {
        let e = HashEmbedder::new(32).unwrap();
        let pairs = vec![
            pair("c", "plt.scatter(x, y)"),
            pair("a", "plt.bar(labels, counts)"),
            pair("b", "plt.bar(labels, counts)"),
        ];
        let ix = VectorIndex::build(&pairs, &e).unwrap();
        assert_eq!(ix.len(), 3);
        assert_eq!(ix.vector("a"), ix.vector("b"));

        let hits = ix.top_k("plt.scatter(x, y)", &e, 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].pair.pair_id, "c");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].pair.pair_id, "a");
        assert_eq!(hits[2].pair.pair_id, "b");
        assert_eq!(hits[1].similarity, hits[2].similarity);

        assert_eq!(ix.top_k("bar", &e, 1).unwrap().len(), 1);
    }

    #[test]
    fn zero_vectors_score_zero() {
        let e = HashEmbedder::new(16).unwrap();
        let ix = VectorIndex::build(&[pair("a", "..."), pair("b", "plot")], &e).unwrap();
        let hits = ix.top_k("plot", &e, 5).unwrap();
        assert_eq!(hits[0].pair.pair_id, "b");
        assert_eq!(hits[1].similarity, 0.0);
        let hits = ix.top_k("!!!", &e, 5).unwrap();
        assert!(hits.iter().all(|h| h.similarity == 0.0));
    }

    #[test]
    fn build_errors() {
        let e = HashEmbedder::new(8).unwrap();
        assert!(matches!(
            VectorIndex::build(&[], &e),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            VectorIndex::build(&[pair("a", "x"), pair("a", "y")], &e),
            Err(Error::DuplicateDocId(_))
        ));
        let ix = VectorIndex::build(&[pair("a", "x")], &e).unwrap();
        assert!(matches!(
            ix.search(&v(&[1.0, 2.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    struct Broken;

    impl Embedder for Broken {
        fn dim(&self) -> usize {
            4
        }
        fn embed(&self, _: &[String]) -> Result<Vec<EmbeddingVector>> {
            Err(Error::ProviderUnavailable {
                attempts: 4,
                detail: "connection refused".into(),
            })
        }
    }

    #[test]
    fn provider_failure_builds_nothing() {
        let res = VectorIndex::build(&[pair("a", "x")], &Broken);
        assert!(matches!(
            res,
            Err(Error::ProviderUnavailable { attempts: 4, .. })
        ));
    }

    fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..64).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f64..100.0, d),
                prop::collection::vec(-100.0f64..100.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_properties((a, b) in vec_strategy(), scale in 1e-3f64..1e3) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (va, vb) = (v(&a), v(&b));
            let scaled = v(&b.iter().map(|x| x * scale).collect::<Vec<_>>());
            prop_assert!((cosine(&va, &va).unwrap() - 1.0).abs() < 1e-12);
            let ab = cosine(&va, &vb).unwrap();
            prop_assert_eq!(ab, cosine(&vb, &va).unwrap());
            prop_assert!((ab - cosine(&va, &scaled).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}

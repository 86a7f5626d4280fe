//! Okapi BM25 over the markdown side of cell pairs.
//!
//! Scores follow
//!
//! ```text
//! score(D, Q) = Σ_i IDF(q_i) · f(q_i, D)·(k1 + 1) / (f(q_i, D) + k1·(1 − b + b·|D|/avgdl))
//! IDF(q)      = ln(1 + (N − n(q) + 0.5) / (n(q) + 0.5))
//! ```
//!
//! which is the Lucene/Elasticsearch form. Repeated query tokens contribute
//! once per occurrence.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::notebook::CellPair;
use crate::text::{Preprocess, TokenStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization strength, in `[0, 1]`.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "k1 must be finite and >= 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!(
                "b must lie in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// Occurrence count of a term in one document. `doc` indexes
/// [`Bm25Index::docs`], which is sorted by pair id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub term_freq: u32,
}

/// Smoothed inverse document frequency; never negative.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_freq as f64;
    let big_n = doc_count as f64;
    (1.0 + (big_n - n + 0.5) / (n + 0.5)).ln()
}

#[derive(Debug, Clone, Copy)]
pub struct Hit<'a> {
    pub pair: &'a CellPair,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    pub(crate) params: Bm25Params,
    pub(crate) preprocess: Preprocess,
    pub(crate) docs: Vec<CellPair>,
    pub(crate) doc_len: Vec<u32>,
    pub(crate) postings: BTreeMap<String, Vec<Posting>>,
    pub(crate) avg_field_len: f64,
}

impl Bm25Index {
    /// Indexes the markdown of every pair. The full pair is kept as payload.
    pub fn build(pairs: &[CellPair], params: Bm25Params, preprocess: Preprocess) -> Result<Self> {
        params.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut docs = pairs.to_vec();
        docs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
            return Err(Error::DuplicateDocId(w[0].pair_id.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (doc, pair) in docs.iter().enumerate() {
            let tokens = preprocess.analyze(&pair.markdown);
            doc_len.push(tokens.field_len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in tokens.into_tokens() {
                *counts.entry(token).or_default() += 1;
            }
            for (term, term_freq) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    term_freq,
                });
            }
        }
        Ok(Self::from_parts(
            params, preprocess, docs, doc_len, postings,
        ))
    }

    pub(crate) fn from_parts(
        params: Bm25Params,
        preprocess: Preprocess,
        docs: Vec<CellPair>,
        doc_len: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_field_len = total as f64 / docs.len() as f64;
        Self {
            params,
            preprocess,
            docs,
            doc_len,
            postings,
            avg_field_len,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn preprocess(&self) -> Preprocess {
        self.preprocess
    }

    /// Indexed pairs, sorted by pair id.
    pub fn docs(&self) -> &[CellPair] {
        &self.docs
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_field_len(&self) -> f64 {
        self.avg_field_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn field_len(&self, doc_id: &str) -> Option<usize> {
        self.doc_index(doc_id).map(|i| self.doc_len[i] as usize)
    }

    pub fn pair(&self, doc_id: &str) -> Option<&CellPair> {
        self.doc_index(doc_id).map(|i| &self.docs[i])
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.doc_freq(term))
    }

    fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.docs
            .binary_search_by(|p| p.pair_id.as_str().cmp(doc_id))
            .ok()
    }

    fn length_norm(&self, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let ratio = if self.avg_field_len > 0.0 {
            self.doc_len[doc] as f64 / self.avg_field_len
        } else {
            1.0
        };
        k1 * (1.0 - b + b * ratio)
    }

    fn term_weight(&self, term_freq: u32, norm: f64) -> f64 {
        let tf = term_freq as f64;
        tf * (self.params.k1 + 1.0) / (tf + norm)
    }

    /// Query terms with their multiplicity and IDF, in term order.
    fn query_terms<'q>(&self, query: &'q TokenStream) -> Vec<(&'q str, f64, f64)> {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for token in query.tokens() {
            *counts.entry(token.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(term, count)| (term, count as f64, self.idf(term)))
            .collect()
    }

    /// BM25 score of one document. Documents sharing no term score exactly 0.
    pub fn score(&self, query: &TokenStream, doc_id: &str) -> Result<f64> {
        let doc = self
            .doc_index(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        let norm = self.length_norm(doc);
        let mut score = 0.0;
        for (term, count, idf) in self.query_terms(query) {
            let postings = self.postings(term);
            if let Ok(i) = postings.binary_search_by_key(&(doc as u32), |p| p.doc) {
                score += count * idf * self.term_weight(postings[i].term_freq, norm);
            }
        }
        Ok(score)
    }

    /// Best `k` documents with a positive score, highest first; ties go to
    /// the smaller pair id.
    pub fn top_k(&self, query: &TokenStream, k: usize) -> Vec<Hit<'_>> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, count, idf) in self.query_terms(query) {
            for posting in self.postings(term) {
                let norm = self.length_norm(posting.doc as usize);
                *acc.entry(posting.doc).or_insert(0.0) +=
                    count * idf * self.term_weight(posting.term_freq, norm);
            }
        }
        let mut scored: Vec<(u32, f64)> = acc.into_iter().filter(|(_, s)| *s > 0.0).collect();
        // doc order equals pair-id order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(doc, score)| Hit {
                pair: &self.docs[doc as usize],
                score,
            })
            .collect()
    }

    /// Analyzes `text` with the index's own preprocessing, then ranks.
    pub fn search(&self, text: &str, k: usize) -> Vec<Hit<'_>> {
        self.top_k(&self.preprocess.analyze(text), k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notebook::{pair_id, AuthorRank};
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn pair(id: &str, markdown: &str) -> CellPair {
        CellPair {
            pair_id: id.into(),
            markdown: markdown.into(),
            code: format!("code_{id}"),
            notebook_id: "nb".into(),
            author_rank: AuthorRank::Expert,
            position: 0,
        }
    }

    fn build(docs: &[&str]) -> Bm25Index {
        let pairs: Vec<_> = docs
            .iter()
            .enumerate()
            .map(|(i, m)| pair(&format!("d{i:02}"), m))
            .collect();
        Bm25Index::build(&pairs, Bm25Params::default(), Preprocess::Plain).unwrap()
    }

    #[test]
    fn build_counts() {
        let ix = build(&["scatter plot", "bar chart"]);
        assert_eq!(ix.doc_count(), 2);
        assert_eq!(ix.avg_field_len(), 2.0);
        assert_eq!(ix.terms().count(), 4);
        assert!(ix.terms().all(|t| ix.postings(t).len() == 1));

        let ix = build(&["plot plot plot"]);
        assert_eq!(
            ix.postings("plot"),
            [Posting {
                doc: 0,
                term_freq: 3
            }]
        );
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            Bm25Index::build(&[], Bm25Params::default(), Preprocess::Plain),
            Err(Error::EmptyCorpus)
        ));
        let dup = [pair("x", "a"), pair("x", "b")];
        assert!(matches!(
            Bm25Index::build(&dup, Bm25Params::default(), Preprocess::Plain),
            Err(Error::DuplicateDocId(id)) if id == "x"
        ));
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(-1.0, 0.5).is_err());
    }

    #[test]
    fn idf_closed_form() {
        // hand evaluation of ln(1 + (N - n + 0.5)/(n + 0.5))
        assert!((idf(3, 1) - 0.980_829_253_011_726).abs() < 1e-12);
        assert!((idf(3, 3) - 0.133_531_392_624_522_6).abs() < 1e-12);
        assert!((idf(3, 0) - 8f64.ln()).abs() < 1e-12);
        assert!((idf(3, 0) - 2.079_441_541_679_836).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let ix = build(&["scatter"]);
        let s = ix.score(&tokenize("scatter"), "d00").unwrap();
        // ln(1 + 0.5/1.5) * (1 * 2.2) / (1 + 1.2)
        assert!((s - 0.287_682_072_451_780_9).abs() < 1e-12);
        assert_eq!(ix.score(&tokenize("bar"), "d00").unwrap(), 0.0);
        assert_eq!(ix.score(&tokenize(""), "d00").unwrap(), 0.0);
        assert!(matches!(
            ix.score(&tokenize("scatter"), "nope"),
            Err(Error::UnknownDoc(_))
        ));
    }

    #[test]
    fn repeated_query_terms_count_with_multiplicity() {
        let ix = build(&["scatter plot", "bar chart"]);
        let once = ix.score(&tokenize("scatter"), "d00").unwrap();
        let twice = ix.score(&tokenize("scatter scatter"), "d00").unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn top_k_examples() {
        let ix = build(&["scatter plot", "bar chart"]);
        let hits = ix.top_k(&tokenize("scatter"), 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].pair.markdown, "scatter plot");

        let ix = build(&["same text", "same text", "other"]);
        let hits = ix.top_k(&tokenize("same"), 10);
        let ids: Vec<_> = hits.iter().map(|h| h.pair.pair_id.as_str()).collect();
        assert_eq!(ids, ["d00", "d01"]);
        assert_eq!(hits[0].score, hits[1].score);

        let ix = build(&["scatter plot", "scatter chart"]);
        assert_eq!(ix.top_k(&tokenize("scatter"), 5).len(), 2);
        assert_eq!(ix.top_k(&tokenize("scatter"), 1).len(), 1);
        assert!(ix.top_k(&tokenize("nothing here"), 5).is_empty());
    }

    #[test]
    fn zero_length_field_does_not_divide_by_zero() {
        let ix = build(&["---", "***"]);
        assert_eq!(ix.avg_field_len(), 0.0);
        assert!(ix.top_k(&tokenize("x"), 3).is_empty());
    }

    #[test]
    fn b_zero_ignores_length() {
        let pairs = [pair("a", "plot"), pair("b", "plot with many more words")];
        let ix =
            Bm25Index::build(&pairs, Bm25Params { k1: 1.2, b: 0.0 }, Preprocess::Plain).unwrap();
        let q = tokenize("plot");
        assert_eq!(ix.score(&q, "a").unwrap(), ix.score(&q, "b").unwrap());
    }

    #[test]
    fn term_weight_is_monotone_and_bounded() {
        let ix = build(&["a", "b c"]);
        let norm = ix.length_norm(1);
        let mut prev = 0.0;
        for tf in 1..200 {
            let w = ix.term_weight(tf, norm);
            assert!(w > prev);
            assert!(w < ix.params.k1 + 1.0);
            prev = w;
        }
    }

    #[test]
    fn stem_lemma_index_uses_stems() {
        let pairs = [
            pair("a", "Plotting the plots"),
            pair("b", "children playing"),
        ];
        let ix = Bm25Index::build(&pairs, Bm25Params::default(), Preprocess::StemLemma).unwrap();
        assert_eq!(
            ix.postings("plot"),
            [Posting {
                doc: 0,
                term_freq: 2
            }]
        );
        assert_eq!(ix.doc_freq("child"), 1);
        assert_eq!(ix.search("plot", 5)[0].pair.pair_id, "a");
    }

    proptest! {
        #[test]
        fn scores_nonnegative_and_top_k_consistent(
            docs in prop::collection::vec("[abcdef ]{0,16}", 1..10),
            query in "[abcdefg ]{0,12}",
            k in 1usize..6,
        ) {
            let pairs: Vec<_> = docs.iter().enumerate()
                .map(|(i, m)| pair(&pair_id("nb", i), m)).collect();
            let ix = Bm25Index::build(&pairs, Bm25Params::default(), Preprocess::Plain).unwrap();
            let q = tokenize(&query);
            let hits = ix.top_k(&q, k);
            prop_assert!(hits.len() <= k);
            for w in hits.windows(2) {
                prop_assert!(w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].pair.pair_id < w[1].pair.pair_id));
            }
            for h in &hits {
                prop_assert_eq!(h.score, ix.score(&q, &h.pair.pair_id).unwrap());
            }
            for p in &pairs {
                let s = ix.score(&q, &p.pair_id).unwrap();
                prop_assert!(s >= 0.0);
                let listed = hits.iter().any(|h| h.pair.pair_id == p.pair_id);
                if !listed && hits.len() < k {
                    prop_assert_eq!(s, 0.0);
                }
            }
            prop_assert_eq!(
                hits.iter().map(|h| (&h.pair.pair_id, h.score)).collect::<Vec<_>>(),
                ix.top_k(&q, k).iter().map(|h| (&h.pair.pair_id, h.score)).collect::<Vec<_>>()
            );
        }
    }
}

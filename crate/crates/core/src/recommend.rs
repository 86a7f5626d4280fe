//! Query façade over the BM25 and vector indexes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::notebook::AuthorRank;
use crate::text::Preprocess;
use crate::vector::{Embedder, VectorIndex};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bm25,
    #[serde(rename = "bm25-stemlemma")]
    Bm25StemLemma,
    Vector,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bm25, Method::Bm25StemLemma, Method::Vector];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::Bm25StemLemma => "bm25-stemlemma",
            Method::Vector => "vector",
        }
    }

    /// Text preprocessing for the lexical methods.
    pub fn preprocess(self) -> Option<Preprocess> {
        match self {
            Method::Bm25 => Some(Preprocess::Plain),
            Method::Bm25StemLemma => Some(Preprocess::StemLemma),
            Method::Vector => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bm25" => Ok(Method::Bm25),
            "bm25-stemlemma" => Ok(Method::Bm25StemLemma),
            "vector" => Ok(Method::Vector),
            other => Err(format!(
                "unknown method `{other}` (expected bm25, bm25-stemlemma or vector)"
            )),
        }
    }
}

/// The corpus slice an index covers: one author rank, or everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankGroup {
    GrandMaster,
    Master,
    Expert,
    All,
}

impl RankGroup {
    pub const ALL: [RankGroup; 4] = [
        RankGroup::GrandMaster,
        RankGroup::Master,
        RankGroup::Expert,
        RankGroup::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RankGroup::GrandMaster => "grandmaster",
            RankGroup::Master => "master",
            RankGroup::Expert => "expert",
            RankGroup::All => "all",
        }
    }

    /// Whether pairs by an author of `rank` belong to this group.
    pub fn contains(self, rank: AuthorRank) -> bool {
        match self {
            RankGroup::All => true,
            RankGroup::GrandMaster => rank == AuthorRank::GrandMaster,
            RankGroup::Master => rank == AuthorRank::Master,
            RankGroup::Expert => rank == AuthorRank::Expert,
        }
    }
}

impl fmt::Display for RankGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grandmaster" => Ok(RankGroup::GrandMaster),
            "master" => Ok(RankGroup::Master),
            "expert" => Ok(RankGroup::Expert),
            "all" => Ok(RankGroup::All),
            other => Err(format!(
                "unknown group `{other}` (expected grandmaster, master, expert or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Bm25(Bm25Index),
    Vector(VectorIndex),
}

impl AnyIndex {
    pub fn doc_count(&self) -> usize {
        match self {
            AnyIndex::Bm25(ix) => ix.doc_count(),
            AnyIndex::Vector(ix) => ix.len(),
        }
    }

    pub fn docs(&self) -> &[crate::notebook::CellPair] {
        match self {
            AnyIndex::Bm25(ix) => ix.docs(),
            AnyIndex::Vector(ix) => ix.docs(),
        }
    }
}

/// Indexes keyed by rank group and method.
#[derive(Debug, Default, Clone)]
pub struct IndexSet {
    indexes: BTreeMap<(RankGroup, Method), AnyIndex>,
}

impl IndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an index. A BM25 index must match the method's preprocessing.
    pub fn insert(&mut self, group: RankGroup, method: Method, index: AnyIndex) -> Result<()> {
        let ok = match (&index, method.preprocess()) {
            (AnyIndex::Bm25(ix), Some(pre)) => ix.preprocess() == pre,
            (AnyIndex::Vector(_), None) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "index kind does not match method `{method}`"
            )));
        }
        self.indexes.insert((group, method), index);
        Ok(())
    }

    pub fn get(&self, group: RankGroup, method: Method) -> Result<&AnyIndex> {
        self.indexes
            .get(&(group, method))
            .ok_or_else(|| Error::IndexMissing {
                group: group.to_string(),
                method: method.to_string(),
            })
    }

    pub fn bm25(&self, group: RankGroup, method: Method) -> Result<&Bm25Index> {
        match self.get(group, method)? {
            AnyIndex::Bm25(ix) => Ok(ix),
            AnyIndex::Vector(_) => unreachable!("checked on insert"),
        }
    }

    pub fn vector(&self, group: RankGroup) -> Result<&VectorIndex> {
        match self.get(group, Method::Vector)? {
            AnyIndex::Vector(ix) => Ok(ix),
            AnyIndex::Bm25(_) => unreachable!("checked on insert"),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = (RankGroup, Method)> + '_ {
        self.indexes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRequest {
    pub markdown: String,
    pub method: Method,
    pub k: usize,
    /// `None` searches the whole corpus.
    pub rank_group: Option<RankGroup>,
}

impl QueryRequest {
    pub fn new(markdown: impl Into<String>, method: Method, k: usize) -> Self {
        Self {
            markdown: markdown.into(),
            method,
            k,
            rank_group: None,
        }
    }

    pub fn in_group(mut self, group: RankGroup) -> Self {
        self.rank_group = Some(group);
        self
    }

    pub fn group(&self) -> RankGroup {
        self.rank_group.unwrap_or(RankGroup::All)
    }
}

/// One ranked code cell. Scores are only comparable within one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rank: usize,
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_markdown: Option<String>,
    pub score: f64,
    pub method: Method,
    pub notebook_id: String,
    pub pair_id: String,
}

pub fn recommend(
    req: &QueryRequest,
    indexes: &IndexSet,
    provider: &dyn Embedder,
) -> Result<Vec<Recommendation>> {
    if req.markdown.trim().is_empty() {
        return Err(Error::InvalidQuery("query markdown is blank".into()));
    }
    if req.k == 0 {
        return Err(Error::InvalidQuery("k must be at least 1".into()));
    }
    let group = req.group();
    let recs = match req.method {
        Method::Bm25 | Method::Bm25StemLemma => indexes
            .bm25(group, req.method)?
            .search(&req.markdown, req.k)
            .into_iter()
            .enumerate()
            .map(|(i, hit)| Recommendation {
                rank: i + 1,
                code: hit.pair.code.clone(),
                matched_markdown: Some(hit.pair.markdown.clone()),
                score: hit.score,
                method: req.method,
                notebook_id: hit.pair.notebook_id.clone(),
                pair_id: hit.pair.pair_id.clone(),
            })
            .collect(),
        Method::Vector => indexes
            .vector(group)?
            .top_k(&req.markdown, provider, req.k)?
            .into_iter()
            .enumerate()
            .map(|(i, hit)| Recommendation {
                rank: i + 1,
                code: hit.pair.code.clone(),
                matched_markdown: None,
                score: hit.similarity,
                method: req.method,
                notebook_id: hit.pair.notebook_id.clone(),
                pair_id: hit.pair.pair_id.clone(),
            })
            .collect(),
    };
    Ok(recs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bm25::Bm25Params;
    use crate::notebook::CellPair;
    use crate::vector::HashEmbedder;

    fn pairs() -> Vec<CellPair> {
        [
            (
                "p1",
                "Scatter of height against weight",
                "plt.scatter(h, w)",
            ),
            ("p2", "Monthly revenue bars", "plt.bar(months, revenue)"),
            ("p3", "Distribution of ages", "plt.hist(ages, bins=20)"),
        ]
        .iter()
        .map(|(id, md, code)| CellPair {
            pair_id: id.to_string(),
            markdown: md.to_string(),
            code: code.to_string(),
            notebook_id: format!("nb_{id}"),
            author_rank: AuthorRank::GrandMaster,
            position: 1,
        })
        .collect()
    }

    fn index_set(provider: &HashEmbedder) -> IndexSet {
        let pairs = pairs();
        let mut set = IndexSet::new();
        for method in [Method::Bm25, Method::Bm25StemLemma] {
            let ix = Bm25Index::build(&pairs, Bm25Params::default(), method.preprocess().unwrap())
                .unwrap();
            set.insert(RankGroup::All, method, AnyIndex::Bm25(ix))
                .unwrap();
        }
        let vx = VectorIndex::build(&pairs, provider).unwrap();
        set.insert(RankGroup::All, Method::Vector, AnyIndex::Vector(vx))
            .unwrap();
        set
    }

    #[test]
    fn bm25_returns_paired_code() {
        let e = HashEmbedder::new(64).unwrap();
        let set = index_set(&e);
        let req = QueryRequest::new("Monthly revenue bars", Method::Bm25, 10);
        let recs = recommend(&req, &set, &e).unwrap();
        assert_eq!(recs[0].code, "plt.bar(months, revenue)");
        assert_eq!(
            recs[0].matched_markdown.as_deref(),
            Some("Monthly revenue bars")
        );
        assert_eq!(recs[0].rank, 1);
        assert_eq!(recs[0].notebook_id, "nb_p2");
    }

    #[test]
    fn vector_self_similarity() {
        let e = HashEmbedder::new(64).unwrap();
        let set = index_set(&e);
        let req = QueryRequest::new("plt.hist(ages, bins=20)", Method::Vector, 10);
        let recs = recommend(&req, &set, &e).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].pair_id, "p3");
        assert!((recs[0].score - 1.0).abs() < 1e-12);
        assert!(recs[0].matched_markdown.is_none());
        let ranks: Vec<_> = recs.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, [1, 2, 3]);
        assert!(recs.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn no_overlap_means_no_results() {
        let e = HashEmbedder::new(64).unwrap();
        let set = index_set(&e);
        let req = QueryRequest::new("zebra quantum", Method::Bm25, 10);
        assert!(recommend(&req, &set, &e).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let e = HashEmbedder::new(64).unwrap();
        let set = index_set(&e);
        let req = QueryRequest::new("x", Method::Bm25, 3).in_group(RankGroup::Master);
        assert!(matches!(
            recommend(&req, &set, &e),
            Err(Error::IndexMissing { .. })
        ));
        let req = QueryRequest::new("  \n", Method::Bm25, 3);
        assert!(matches!(
            recommend(&req, &set, &e),
            Err(Error::InvalidQuery(_))
        ));
        let req = QueryRequest::new("x", Method::Bm25, 0);
        assert!(matches!(
            recommend(&req, &set, &e),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn insert_checks_method_kind() {
        let ix = Bm25Index::build(&pairs(), Bm25Params::default(), Preprocess::Plain).unwrap();
        let mut set = IndexSet::new();
        assert!(set
            .insert(
                RankGroup::All,
                Method::Bm25StemLemma,
                AnyIndex::Bm25(ix.clone())
            )
            .is_err());
        assert!(set
            .insert(RankGroup::All, Method::Vector, AnyIndex::Bm25(ix))
            .is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "BM25-StemLemma".parse::<Method>().unwrap(),
            Method::Bm25StemLemma
        );
        assert_eq!("all".parse::<RankGroup>().unwrap(), RankGroup::All);
        assert!("other".parse::<RankGroup>().is_err());
        assert!(RankGroup::All.contains(AuthorRank::Other));
        assert!(!RankGroup::Expert.contains(AuthorRank::Master));
    }
}

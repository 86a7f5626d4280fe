//! Notebook ingestion: nbformat parsing, markdown/code pair extraction,
//! plot filtering and author-rank partitioning.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Kaggle author tier of a notebook's owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthorRank {
    GrandMaster,
    Master,
    Expert,
    Other,
}

impl AuthorRank {
    pub const ALL: [AuthorRank; 4] = [
        AuthorRank::GrandMaster,
        AuthorRank::Master,
        AuthorRank::Expert,
        AuthorRank::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuthorRank::GrandMaster => "grandmaster",
            AuthorRank::Master => "master",
            AuthorRank::Expert => "expert",
            AuthorRank::Other => "other",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for AuthorRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuthorRank {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grandmaster" => Ok(AuthorRank::GrandMaster),
            "master" => Ok(AuthorRank::Master),
            "expert" => Ok(AuthorRank::Expert),
            "other" => Ok(AuthorRank::Other),
            other => Err(format!("unknown author rank `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Markdown,
    Code,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCell {
    pub kind: CellKind,
    /// Source lines joined verbatim.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawNotebook {
    pub notebook_id: String,
    pub author_rank: AuthorRank,
    pub cells: Vec<RawCell>,
}

/// A markdown run together with the code cell that immediately follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPair {
    pub pair_id: String,
    pub markdown: String,
    pub code: String,
    pub notebook_id: String,
    pub author_rank: AuthorRank,
    /// Index of the code cell within its notebook.
    pub position: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Source {
    Text(String),
    Lines(Vec<String>),
}

impl Default for Source {
    fn default() -> Self {
        Source::Text(String::new())
    }
}

#[derive(Deserialize)]
struct NbCell {
    cell_type: String,
    #[serde(default)]
    source: Source,
}

#[derive(Deserialize)]
struct NbFile {
    cells: Vec<NbCell>,
}

/// Parses an nbformat v4 document. Outputs and metadata are ignored.
pub fn parse_notebook(
    bytes: &[u8],
    notebook_id: impl Into<String>,
    rank: AuthorRank,
) -> Result<RawNotebook> {
    let file: NbFile =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedNotebook(e.to_string()))?;
    let cells = file
        .cells
        .into_iter()
        .map(|cell| {
            let kind = match cell.cell_type.as_str() {
                "markdown" => CellKind::Markdown,
                "code" => CellKind::Code,
                _ => CellKind::Other,
            };
            let source = match cell.source {
                Source::Text(s) => s,
                Source::Lines(lines) => lines.concat(),
            };
            RawCell { kind, source }
        })
        .collect();
    Ok(RawNotebook {
        notebook_id: notebook_id.into(),
        author_rank: rank,
        cells,
    })
}

/// Stable identifier of the pair whose code cell sits at `position`.
pub fn pair_id(notebook_id: &str, position: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(notebook_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(position.to_string().as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Pairs every maximal markdown run with the code cell directly after it.
///
/// Runs are joined with a blank line. Code cells without a preceding run,
/// runs that end the notebook, and runs interrupted by a non-code cell yield
/// nothing. Pairs whose markdown or code is blank are dropped.
pub fn extract_pairs(nb: &RawNotebook) -> Vec<CellPair> {
    let mut pairs = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    for (position, cell) in nb.cells.iter().enumerate() {
        match cell.kind {
            CellKind::Markdown => run.push(&cell.source),
            CellKind::Code => {
                if !run.is_empty() {
                    let markdown = run.join("\n\n");
                    if !markdown.trim().is_empty() && !cell.source.trim().is_empty() {
                        pairs.push(CellPair {
                            pair_id: pair_id(&nb.notebook_id, position),
                            markdown,
                            code: cell.source.clone(),
                            notebook_id: nb.notebook_id.clone(),
                            author_rank: nb.author_rank,
                            position,
                        });
                    }
                }
                run.clear();
            }
            CellKind::Other => run.clear(),
        }
    }
    pairs
}

pub const DEFAULT_PLOT_KEYWORDS: [&str; 9] = [
    "matplotlib",
    "plt.",
    "plot",
    "chart",
    "seaborn",
    "hist",
    "scatter",
    "pie",
    "boxplot",
];

pub fn default_plot_keywords() -> Vec<String> {
    DEFAULT_PLOT_KEYWORDS
        .iter()
        .map(|k| k.to_string())
        .collect()
}

/// Keeps pairs whose code or markdown contains any keyword, ignoring case.
pub fn filter_plot_pairs(pairs: Vec<CellPair>, keywords: &[String]) -> Vec<CellPair> {
    let keywords: Vec<String> = keywords
        .iter()
        .map(|k| k.to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    pairs
        .into_iter()
        .filter(|pair| {
            let code = pair.code.to_lowercase();
            let markdown = pair.markdown.to_lowercase();
            keywords
                .iter()
                .any(|k| code.contains(k.as_str()) || markdown.contains(k.as_str()))
        })
        .collect()
}

/// Buckets pairs by author rank. Every rank has a (possibly empty) bucket.
pub fn partition_by_rank(pairs: Vec<CellPair>) -> BTreeMap<AuthorRank, Vec<CellPair>> {
    let mut buckets: BTreeMap<AuthorRank, Vec<CellPair>> =
        AuthorRank::ALL.iter().map(|r| (*r, Vec::new())).collect();
    for pair in pairs {
        buckets.entry(pair.author_rank).or_default().push(pair);
    }
    buckets
}

/// One row of the `path,rank` ingestion manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub rank: AuthorRank,
}

#[derive(Deserialize)]
struct ManifestRow {
    path: String,
    rank: String,
}

pub fn read_ingest_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (line, row) in csv.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedManifest(e.to_string()))?;
        let rank = row
            .rank
            .parse()
            .map_err(|e| Error::MalformedManifest(format!("row {}: {e}", line + 1)))?;
        let path = row.path.replace('\\', "/");
        if !seen.insert(path.clone()) {
            return Err(Error::MalformedManifest(format!("duplicate path `{path}`")));
        }
        entries.push(ManifestEntry { path, rank });
    }
    Ok(entries)
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    /// Sorted by `(notebook_id, position)`.
    pub pairs: Vec<CellPair>,
    pub skipped: Vec<(PathBuf, Error)>,
}

/// Reads, parses and pairs every manifest entry under `root`. Files that
/// cannot be read or parsed are logged and reported in `skipped`.
pub fn ingest(root: &Path, entries: &[ManifestEntry]) -> IngestOutcome {
    let results: Vec<(PathBuf, Result<Vec<CellPair>>)> = entries
        .par_iter()
        .map(|entry| {
            let path = root.join(&entry.path);
            let pairs = std::fs::read(&path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))
                .and_then(|bytes| parse_notebook(&bytes, entry.path.clone(), entry.rank))
                .map(|nb| extract_pairs(&nb));
            (path, pairs)
        })
        .collect();

    let mut outcome = IngestOutcome::default();
    for (path, result) in results {
        match result {
            Ok(pairs) => outcome.pairs.extend(pairs),
            Err(err) => {
                log::warn!("skipping {}: {err}", path.display());
                outcome.skipped.push((path, err));
            }
        }
    }
    outcome
        .pairs
        .sort_by(|a, b| (&a.notebook_id, a.position).cmp(&(&b.notebook_id, b.position)));
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn nb(cells: &[(&str, &str)]) -> RawNotebook {
        let doc = json!({
            "nbformat": 4,
            "cells": cells
                .iter()
                .map(|(t, s)| json!({"cell_type": t, "source": s, "metadata": {}}))
                .collect::<Vec<_>>(),
        });
        parse_notebook(doc.to_string().as_bytes(), "nb", AuthorRank::Expert).unwrap()
    }

    fn pair(md: &str, code: &str, rank: AuthorRank) -> CellPair {
        CellPair {
            pair_id: pair_id(md, 0),
            markdown: md.into(),
            code: code.into(),
            notebook_id: md.into(),
            author_rank: rank,
            position: 0,
        }
    }

    #[test]
    fn parse_preserves_order_and_joins_lines() {
        let doc = br##"{"cells": [
            {"cell_type": "markdown", "source": ["# Title\n", "body"]},
            {"cell_type": "code", "source": "x = 1", "outputs": [{"text": "ignored"}]}
        ]}"##;
        let nb = parse_notebook(doc, "a", AuthorRank::Master).unwrap();
        assert_eq!(nb.cells.len(), 2);
        assert_eq!(nb.cells[0].kind, CellKind::Markdown);
        assert_eq!(nb.cells[0].source, "# Title\nbody");
        assert_eq!(nb.cells[1].kind, CellKind::Code);
        assert_eq!(nb.cells[1].source, "x = 1");
    }

    #[test]
    fn parse_rejects_missing_cells_and_non_json() {
        assert!(matches!(
            parse_notebook(b"{}", "a", AuthorRank::Other),
            Err(Error::MalformedNotebook(_))
        ));
        assert!(matches!(
            parse_notebook(b"not json", "a", AuthorRank::Other),
            Err(Error::MalformedNotebook(_))
        ));
    }

    #[test]
    fn raw_cell_maps_to_other() {
        let nb = nb(&[("markdown", "m"), ("raw", "r"), ("code", "c")]);
        let kinds: Vec<_> = nb.cells.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            vec![CellKind::Markdown, CellKind::Other, CellKind::Code]
        );
        assert!(extract_pairs(&nb).is_empty());
    }

    #[test]
    fn pairs_follow_markdown_runs() {
        let nb = nb(&[
            ("markdown", "md1"),
            ("markdown", "md2"),
            ("code", "code1"),
            ("code", "code2"),
            ("markdown", "md3"),
            ("code", "code3"),
        ]);
        let pairs = extract_pairs(&nb);
        let got: Vec<_> = pairs
            .iter()
            .map(|p| (p.markdown.as_str(), p.code.as_str(), p.position))
            .collect();
        assert_eq!(got, vec![("md1\n\nmd2", "code1", 2), ("md3", "code3", 5)]);
    }

    #[test]
    fn leading_code_and_dangling_markdown_yield_nothing() {
        assert!(extract_pairs(&nb(&[("code", "code1")])).is_empty());
        assert!(extract_pairs(&nb(&[("markdown", "md1")])).is_empty());
    }

    #[test]
    fn blank_sides_are_dropped() {
        assert!(extract_pairs(&nb(&[("markdown", "  \n"), ("code", "x")])).is_empty());
        assert!(extract_pairs(&nb(&[("markdown", "m"), ("code", "\n ")])).is_empty());
    }

    #[test]
    fn pair_ids_are_stable_and_distinct() {
        assert_eq!(pair_id("a.ipynb", 3), pair_id("a.ipynb", 3));
        assert_ne!(pair_id("a.ipynb", 3), pair_id("a.ipynb", 4));
        assert_ne!(pair_id("a.ipynb", 13), pair_id("a.ipynb1", 3));
        assert_eq!(pair_id("x", 0).len(), 16);
    }

    #[test]
    fn plot_filter_matches_code_or_markdown() {
        let kw: Vec<String> = ["plt.", "plot", "chart", "seaborn", "matplotlib"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pairs = vec![
            pair("Show it", "plt.scatter(x, y)", AuthorRank::Expert),
            pair("Load data", "df.head()", AuthorRank::Expert),
            pair("Bar CHART of sales", "draw(sales)", AuthorRank::Expert),
        ];
        let kept = filter_plot_pairs(pairs, &kw);
        let codes: Vec<_> = kept.iter().map(|p| p.code.as_str()).collect();
        assert_eq!(codes, vec!["plt.scatter(x, y)", "draw(sales)"]);
    }

    #[test]
    fn partition_counts() {
        let buckets = partition_by_rank(vec![
            pair("a", "1", AuthorRank::GrandMaster),
            pair("b", "2", AuthorRank::Master),
            pair("c", "3", AuthorRank::GrandMaster),
        ]);
        assert_eq!(buckets[&AuthorRank::GrandMaster].len(), 2);
        assert_eq!(buckets[&AuthorRank::Master].len(), 1);
        assert!(buckets[&AuthorRank::Expert].is_empty());

        let empty = partition_by_rank(Vec::new());
        assert_eq!(empty.len(), 4);
        assert!(empty.values().all(Vec::is_empty));

        let experts = partition_by_rank(vec![
            pair("a", "1", AuthorRank::Expert),
            pair("b", "2", AuthorRank::Expert),
        ]);
        assert_eq!(experts[&AuthorRank::Expert].len(), 2);
        assert_eq!(experts.values().map(Vec::len).sum::<usize>(), 2);
    }

    #[test]
    fn manifest_parsing() {
        let csv = "path,rank\nnb/a.ipynb,GrandMaster\nb.ipynb, expert\n";
        let entries = read_ingest_manifest(csv.as_bytes()).unwrap();
        assert_eq!(
            entries,
            vec![
                ManifestEntry {
                    path: "nb/a.ipynb".into(),
                    rank: AuthorRank::GrandMaster
                },
                ManifestEntry {
                    path: "b.ipynb".into(),
                    rank: AuthorRank::Expert
                },
            ]
        );
        assert!(read_ingest_manifest("path,rank\na,wizard\n".as_bytes()).is_err());
        assert!(read_ingest_manifest("path,rank\na,master\na,expert\n".as_bytes()).is_err());
    }
}

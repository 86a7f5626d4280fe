use std::path::PathBuf;

use cellrec::notebook::{
    default_plot_keywords, extract_pairs, filter_plot_pairs, ingest, parse_notebook,
    partition_by_rank, read_ingest_manifest, AuthorRank, CellPair,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/notebooks")
}

fn golden() -> Vec<CellPair> {
    let text = std::fs::read_to_string(fixtures().join("golden_pairs.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn ingest_fixtures() -> cellrec::notebook::IngestOutcome {
    let manifest = std::fs::File::open(fixtures().join("manifest.csv")).unwrap();
    let entries = read_ingest_manifest(manifest).unwrap();
    ingest(&fixtures(), &entries)
}

#[test]
fn ingest_matches_golden_pairs() {
    let outcome = ingest_fixtures();
    assert_eq!(outcome.pairs, golden());
    // malformed.ipynb has no cells array; missing.ipynb does not exist
    let mut skipped: Vec<_> = outcome
        .skipped
        .iter()
        .map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    skipped.sort();
    assert_eq!(skipped, ["malformed.ipynb", "missing.ipynb"]);
}

#[test]
fn extraction_is_deterministic() {
    let bytes = std::fs::read(fixtures().join("multi_markdown.ipynb")).unwrap();
    let a = extract_pairs(&parse_notebook(&bytes, "x", AuthorRank::Master).unwrap());
    let b = extract_pairs(&parse_notebook(&bytes, "x", AuthorRank::Master).unwrap());
    assert_eq!(a, b);
    assert_eq!(ingest_fixtures().pairs, ingest_fixtures().pairs);
}

#[test]
fn code_cell_follows_its_markdown_run() {
    for name in [
        "multi_markdown.ipynb",
        "leading_code.ipynb",
        "raw_break.ipynb",
    ] {
        let bytes = std::fs::read(fixtures().join(name)).unwrap();
        let nb = parse_notebook(&bytes, name, AuthorRank::Other).unwrap();
        for pair in extract_pairs(&nb) {
            assert!(pair.position >= 1);
            assert_eq!(nb.cells[pair.position].source, pair.code);
            assert_eq!(
                nb.cells[pair.position - 1].kind,
                cellrec::notebook::CellKind::Markdown
            );
        }
    }
}

#[test]
fn plot_filter_and_partition_on_fixtures() {
    let pairs = ingest_fixtures().pairs;
    assert_eq!(pairs.len(), 5);
    let kw = default_plot_keywords();
    let plots = filter_plot_pairs(pairs.clone(), &kw);
    assert_eq!(plots.len(), 4);
    assert!(plots.iter().all(|p| p.markdown != "Load the csv"));
    assert_eq!(filter_plot_pairs(plots.clone(), &kw), plots);

    let buckets = partition_by_rank(plots);
    assert_eq!(buckets[&AuthorRank::GrandMaster].len(), 2);
    assert_eq!(buckets[&AuthorRank::Expert].len(), 2);
    assert_eq!(buckets[&AuthorRank::Master].len(), 0);
    assert_eq!(buckets.values().map(Vec::len).sum::<usize>(), 4);
}

use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellrec::bm25::Bm25Index;
use cellrec::eval::{
    generate_plot_queries, plot_eval, read_review_file, report, sanity_check, write_review_file,
    SanityReport,
};
use cellrec::notebook::{
    filter_plot_pairs, ingest, partition_by_rank, read_ingest_manifest, AuthorRank,
};
use cellrec::recommend::{
    recommend, AnyIndex, IndexSet, Method, QueryRequest, RankGroup, Recommendation,
};
use cellrec::store::{IndexStore, StoreWriter};
use cellrec::vector::{Embedder, HashEmbedder, VectorIndex};
use cellrec::Error;

use crate::config::{Config, Overrides};
use crate::{Cli, Command, EvalArgs, IndexArgs, InspectArgs, QueryArgs, ReportArgs};

pub const SANITY_TEXT: &str = "sanity.txt";
pub const SANITY_JSON: &str = "sanity.json";
pub const REVIEW_FILE: &str = "ploteval_review.jsonl";
pub const PLOTEVAL_TEXT: &str = "ploteval.txt";
pub const PLOTEVAL_JSON: &str = "ploteval.json";

/// Some plot-eval rows could not be computed; the review file was still
/// written.
#[derive(Debug)]
pub struct RowFailures {
    pub exit_code: u8,
    pub detail: String,
}

impl std::fmt::Display for RowFailures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.detail)
    }
}

impl std::error::Error for RowFailures {}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut overrides = Overrides {
        provider: g.provider,
        endpoint: g.endpoint,
        dim: g.dim,
        index_dir: g.index_dir,
        ..Overrides::default()
    };
    if let Command::Index(args) = &cli.command {
        overrides.k1 = args.k1;
        overrides.b = args.b;
    }
    let config = Config::load(g.config.as_deref(), &overrides)?;
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Index(args) => cmd_index(&args, &config, &mut out),
        Command::Query(args) => cmd_query(&args, &config, &mut out),
        Command::Sanity(args) => cmd_sanity(&args, &config, &mut out),
        Command::Ploteval(args) => cmd_ploteval(&args, &config, &mut out),
        Command::Report(args) => cmd_report(&args, &mut out),
        Command::Inspect(args) => cmd_inspect(&args, &config, &mut out),
    }
}

fn cmd_index(args: &IndexArgs, config: &Config, out: &mut impl Write) -> Result<()> {
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.notebooks.join("manifest.csv"));
    let file = fs::File::open(&manifest_path)
        .with_context(|| format!("cannot open notebook manifest {}", manifest_path.display()))?;
    let entries = read_ingest_manifest(file)?;
    let outcome = ingest(&args.notebooks, &entries);
    for (path, err) in &outcome.skipped {
        log::warn!("skipped {}: {err}", path.display());
    }
    let extracted = outcome.pairs.len();
    let plots = filter_plot_pairs(outcome.pairs, &config.plot_keywords);
    if plots.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }

    let spec = config.provider_spec(None)?;
    let provider = spec.connect()?;
    // Everything is built before anything is written, so a provider failure
    // leaves the directory untouched.
    let mut built = Vec::new();
    for group in RankGroup::ALL {
        let pairs: Vec<_> = plots
            .iter()
            .filter(|p| group.contains(p.author_rank))
            .cloned()
            .collect();
        if pairs.is_empty() {
            log::info!("no pairs for group {group}; skipping");
            continue;
        }
        for method in Method::ALL {
            let index = match method.preprocess() {
                Some(pre) => AnyIndex::Bm25(Bm25Index::build(&pairs, config.bm25, pre)?),
                None => AnyIndex::Vector(VectorIndex::build(&pairs, provider.as_ref())?),
            };
            built.push((group, method, index));
        }
    }

    let mut writer = StoreWriter::create(&config.index_dir)?;
    writer.set_embedding(spec);
    for (group, method, index) in &built {
        writer.write(*group, *method, index)?;
    }
    let manifest = writer.finish()?;

    writeln!(
        out,
        "notebooks: {} read, {} skipped",
        entries.len() - outcome.skipped.len(),
        outcome.skipped.len()
    )?;
    writeln!(
        out,
        "pairs: {extracted} extracted, {} plot-related",
        plots.len()
    )?;
    let buckets = partition_by_rank(plots);
    for rank in AuthorRank::ALL {
        writeln!(out, "  {:<12} {}", rank.as_str(), buckets[&rank].len())?;
    }
    writeln!(
        out,
        "wrote {} indexes to {}",
        manifest.entries.len(),
        config.index_dir.display()
    )?;
    Ok(())
}

fn read_query_text(words: &[String]) -> Result<String> {
    if !words.is_empty() && words != ["-"] {
        return Ok(words.join(" "));
    }
    let mut text = String::new();
    io::stdin()
        .read_to_string(&mut text)
        .context("reading query from stdin")?;
    Ok(text)
}

fn cmd_query(args: &QueryArgs, config: &Config, out: &mut impl Write) -> Result<()> {
    let markdown = read_query_text(&args.text)?;
    let store = IndexStore::open(&config.index_dir)?;
    let indexes = store.load_set(&[(args.group, args.method)])?;
    let provider = embedder_for(&[args.method], config, &store)?;
    let k = args.k.unwrap_or(config.default_k);
    let req = QueryRequest::new(markdown, args.method, k).in_group(args.group);
    let recs = recommend(&req, &indexes, provider.as_ref())?;
    if args.json {
        serde_json::to_writer_pretty(&mut *out, &recs)?;
        writeln!(out)?;
    } else {
        print_recommendations(&recs, out)?;
    }
    Ok(())
}

fn print_recommendations(recs: &[Recommendation], out: &mut impl Write) -> io::Result<()> {
    if recs.is_empty() {
        return writeln!(out, "no recommendations");
    }
    for rec in recs {
        writeln!(
            out,
            "#{} {} score={:.6} notebook={} pair={}",
            rec.rank, rec.method, rec.score, rec.notebook_id, rec.pair_id
        )?;
        if let Some(md) = &rec.matched_markdown {
            for line in md.lines() {
                writeln!(out, "  > {line}")?;
            }
        }
        for line in rec.code.lines() {
            writeln!(out, "    {line}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Requested (group, method) pairs; empty selections mean everything in
/// the manifest.
fn selection(
    store: &IndexStore,
    groups: &[RankGroup],
    methods: &[Method],
) -> (Vec<RankGroup>, Vec<Method>) {
    let entries = &store.manifest().entries;
    let mut g: Vec<RankGroup> = if groups.is_empty() {
        entries.iter().map(|r| r.group).collect()
    } else {
        groups.to_vec()
    };
    let mut m: Vec<Method> = if methods.is_empty() {
        entries.iter().map(|r| r.method).collect()
    } else {
        methods.to_vec()
    };
    g.sort();
    g.dedup();
    m.sort();
    m.dedup();
    (g, m)
}

/// The query embedder; lexical-only runs get a stand-in so that they do not
/// depend on provider settings.
fn embedder_for(
    methods: &[Method],
    config: &Config,
    store: &IndexStore,
) -> Result<Box<dyn Embedder>> {
    if methods.contains(&Method::Vector) {
        Ok(config
            .provider_spec(store.manifest().embedding.as_ref())?
            .connect()?)
    } else {
        Ok(Box::new(HashEmbedder::new(1)?))
    }
}

fn out_dir(args: &EvalArgs, config: &Config) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn cmd_sanity(args: &EvalArgs, config: &Config, out: &mut impl Write) -> Result<()> {
    let store = IndexStore::open(&config.index_dir)?;
    let (groups, methods) = selection(&store, &args.group, &args.method);
    let dir = out_dir(args, config)?;
    let provider = embedder_for(&methods, config, &store)?;

    let mut reports: Vec<SanityReport> = Vec::new();
    let mut failure = None;
    'outer: for &group in &groups {
        for &method in &methods {
            let result = (|| -> Result<SanityReport> {
                let indexes = store.load_set(&[(group, method)])?;
                let pairs = indexes.get(group, method)?.docs().to_vec();
                Ok(sanity_check(
                    &pairs,
                    group,
                    method,
                    &indexes,
                    provider.as_ref(),
                )?)
            })();
            match result {
                Ok(r) => reports.push(r),
                Err(e) => {
                    failure = Some(e.context(format!("sanity check for {group}/{method}")));
                    break 'outer;
                }
            }
        }
    }

    // Completed rows are written even when a later one failed.
    let rendered = report(&reports, &[]);
    write_file(&dir.join(SANITY_TEXT), rendered.text.as_bytes())?;
    write_file(&dir.join(SANITY_JSON), &json_bytes(&rendered.json)?)?;
    if args.json {
        out.write_all(&json_bytes(&rendered.json)?)?;
    } else {
        out.write_all(rendered.text.as_bytes())?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_ploteval(args: &EvalArgs, config: &Config, out: &mut impl Write) -> Result<()> {
    let store = IndexStore::open(&config.index_dir)?;
    let (groups, methods) = selection(&store, &args.group, &args.method);
    let dir = out_dir(args, config)?;
    let provider = embedder_for(&methods, config, &store)?;

    // Indexes absent from the manifest show up as row-level errors.
    let mut indexes = IndexSet::new();
    for &group in &groups {
        for &method in &methods {
            if store.manifest().record(group, method).is_some() {
                indexes.insert(group, method, store.load(group, method)?)?;
            }
        }
    }
    let rows = plot_eval(
        &generate_plot_queries(),
        &groups,
        &methods,
        &indexes,
        provider.as_ref(),
    );

    let mut review = Vec::new();
    write_review_file(&rows, &mut review)?;
    write_file(&dir.join(REVIEW_FILE), &review)?;
    let rendered = report(&[], &rows);
    write_file(&dir.join(PLOTEVAL_TEXT), rendered.text.as_bytes())?;
    write_file(&dir.join(PLOTEVAL_JSON), &json_bytes(&rendered.json)?)?;
    if args.json {
        out.write_all(&json_bytes(&rendered.json)?)?;
    } else {
        out.write_all(rendered.text.as_bytes())?;
        writeln!(
            out,
            "{} rows written to {}",
            rows.len(),
            dir.join(REVIEW_FILE).display()
        )?;
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    if let Some(first) = failed.first() {
        let detail = format!(
            "{} of {} rows failed; first: {}",
            failed.len(),
            rows.len(),
            first.error.as_deref().unwrap_or_default()
        );
        // Missing indexes were known up front; anything else came from the provider.
        let missing = failed
            .iter()
            .any(|r| store.manifest().record(r.rank_group, r.method).is_none());
        return Err(RowFailures {
            exit_code: if missing { 2 } else { 3 },
            detail,
        }
        .into());
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs, out: &mut impl Write) -> Result<()> {
    if args.review.is_none() && args.sanity.is_none() {
        bail!(Error::InvalidQuery(
            "report needs --review and/or --sanity".into()
        ));
    }
    let rows = match &args.review {
        Some(path) => {
            let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_review_file(BufReader::new(f))?
        }
        None => Vec::new(),
    };
    let sanity: Vec<SanityReport> = match &args.sanity {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            serde_json::from_value(value["sanity"].clone())
                .with_context(|| format!("{} has no `sanity` array", path.display()))?
        }
        None => Vec::new(),
    };
    let rendered = report(&sanity, &rows);
    if args.json {
        out.write_all(&json_bytes(&rendered.json)?)?;
    } else {
        out.write_all(rendered.text.as_bytes())?;
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs, config: &Config, out: &mut impl Write) -> Result<()> {
    let store = IndexStore::open(&config.index_dir)?;
    let manifest = store.manifest();
    if args.json {
        serde_json::to_writer_pretty(&mut *out, manifest)?;
        writeln!(out)?;
        return Ok(());
    }
    writeln!(out, "index dir: {}", store.dir().display())?;
    writeln!(out, "version:   {}", manifest.version)?;
    if let Some(spec) = &manifest.embedding {
        match &spec.endpoint {
            Some(ep) => writeln!(
                out,
                "embedding: {} dim={} endpoint={ep}",
                spec.kind, spec.dim
            )?,
            None => writeln!(out, "embedding: {} dim={}", spec.kind, spec.dim)?,
        }
    }
    writeln!(
        out,
        "{:<12} {:<15} {:>6} {:>12}  {:<16} file",
        "group", "method", "docs", "built_at", "digest"
    )?;
    for r in &manifest.entries {
        writeln!(
            out,
            "{:<12} {:<15} {:>6} {:>12}  {:<16} {}",
            r.group.as_str(),
            r.method.as_str(),
            r.doc_count,
            r.built_at,
            &r.digest[..16.min(r.digest.len())],
            r.file
        )?;
    }
    Ok(())
}

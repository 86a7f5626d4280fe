//! Evaluation protocols: self-retrieval sanity check and the Matplotlib
//! plot-type query study.
//!
//! Both judge only the first recommendation. The plot study records an
//! automatic relevance proxy (does the top code mention the plot type's
//! function name?) next to a human verdict that the harness never fills in.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::notebook::CellPair;
use crate::recommend::{recommend, IndexSet, Method, QueryRequest, RankGroup};
use crate::vector::{embed, Embedder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub rank_group: RankGroup,
    pub method: Method,
    pub total_items: usize,
    pub total_correct: usize,
    pub percent_correct: f64,
}

impl SanityReport {
    pub fn new(
        rank_group: RankGroup,
        method: Method,
        total_items: usize,
        total_correct: usize,
    ) -> Self {
        assert!(total_correct <= total_items);
        let percent_correct = if total_items == 0 {
            0.0
        } else {
            100.0 * total_correct as f64 / total_items as f64
        };
        Self {
            rank_group,
            method,
            total_items,
            total_correct,
            percent_correct,
        }
    }
}

/// Queries each pair's markdown against the index built from those pairs
/// and counts how often the rank-1 code is byte-identical to the pair's code.
pub fn sanity_check(
    pairs: &[CellPair],
    group: RankGroup,
    method: Method,
    indexes: &IndexSet,
    provider: &dyn Embedder,
) -> Result<SanityReport> {
    let index = indexes.get(group, method)?;
    let known: HashSet<&str> = index.docs().iter().map(|p| p.pair_id.as_str()).collect();
    if let Some(p) = pairs.iter().find(|p| !known.contains(p.pair_id.as_str())) {
        return Err(Error::IndexMismatch(p.pair_id.clone()));
    }

    let correct = match method {
        Method::Bm25 | Method::Bm25StemLemma => {
            let ix = indexes.bm25(group, method)?;
            pairs
                .iter()
                .filter(|p| {
                    ix.search(&p.markdown, 1)
                        .first()
                        .is_some_and(|hit| hit.pair.code == p.code)
                })
                .count()
        }
        Method::Vector => {
            let ix = indexes.vector(group)?;
            if pairs.is_empty() {
                0
            } else {
                let queries: Vec<String> = pairs.iter().map(|p| p.markdown.clone()).collect();
                let vectors = embed(&queries, provider)?;
                let mut correct = 0;
                for (pair, query) in pairs.iter().zip(&vectors) {
                    let hits = ix.search(query, 1)?;
                    if hits.first().is_some_and(|hit| hit.pair.code == pair.code) {
                        correct += 1;
                    }
                }
                correct
            }
        }
    };
    Ok(SanityReport::new(group, method, pairs.len(), correct))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotQuery {
    pub plot_type: String,
    pub sub_type: String,
    pub query_text: String,
    /// Function-name fragment used by the automatic relevance proxy.
    pub canonical_token: String,
}

const PLOT_TYPES: [(&str, &str, &str); 30] = [
    ("Basic", "Scatter", "scatter"),
    ("Basic", "Bar", "bar"),
    ("Basic", "Stem", "stem"),
    ("Basic", "Step", "step"),
    ("Basic", "Fill_between", "fill_between"),
    ("Basic", "Stackplot", "stackplot"),
    ("Plots of Arrays and Fields", "Imshow", "imshow"),
    ("Plots of Arrays and Fields", "Pcolormesh", "pcolormesh"),
    ("Plots of Arrays and Fields", "Contour", "contour"),
    ("Plots of Arrays and Fields", "Contourf", "contourf"),
    ("Plots of Arrays and Fields", "Barbs", "barbs"),
    ("Plots of Arrays and Fields", "Quiver", "quiver"),
    ("Plots of Arrays and Fields", "Streamplot", "streamplot"),
    ("Statistics Plots", "Hist", "hist"),
    ("Statistics Plots", "Boxplot", "boxplot"),
    ("Statistics Plots", "Errorbar", "errorbar"),
    ("Statistics Plots", "Violinplot", "violinplot"),
    ("Statistics Plots", "Eventplot", "eventplot"),
    ("Statistics Plots", "Hist2d", "hist2d"),
    ("Statistics Plots", "Hexbin", "hexbin"),
    ("Statistics Plots", "Pie", "pie"),
    ("Unstructured Coordinates", "Tricontour", "tricontour"),
    ("Unstructured Coordinates", "Tricontourf", "tricontourf"),
    ("Unstructured Coordinates", "Tripcolor", "tripcolor"),
    ("Unstructured Coordinates", "Triplot", "triplot"),
    ("3D", "3D Scatterplot", "scatter"),
    ("3D", "3D Surface", "plot_surface"),
    ("3D", "Triangular 3D Surface", "plot_trisurf"),
    ("3D", "3D Voxel , Volumetric Plot", "voxels"),
    ("3D", "3D Wireframe Plot", "plot_wireframe"),
];

/// The 30 Matplotlib plot-type queries, five families in catalogue order.
///
/// Query text is `plot data using <sub type> visualization`, with the sub
/// type lowercased except for the literal `3D`.
pub fn generate_plot_queries() -> Vec<PlotQuery> {
    PLOT_TYPES
        .iter()
        .map(|(family, sub_type, token)| {
            let phrase = sub_type
                .split(' ')
                .map(|w| {
                    if w == "3D" {
                        w.to_string()
                    } else {
                        w.to_lowercase()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            PlotQuery {
                plot_type: family.to_string(),
                sub_type: sub_type.to_string(),
                query_text: format!("plot data using {phrase} visualization"),
                canonical_token: token.to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanVerdict {
    #[default]
    Unjudged,
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotEvalRow {
    pub plot_query: PlotQuery,
    pub rank_group: RankGroup,
    pub method: Method,
    pub top1_code: String,
    #[serde(default)]
    pub top1_pair_id: Option<String>,
    pub auto_relevant: bool,
    #[serde(default)]
    pub human_verdict: HumanVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn auto_relevant(code: &str, query: &PlotQuery) -> bool {
    !code.is_empty()
        && code
            .to_lowercase()
            .contains(&query.canonical_token.to_lowercase())
}

fn catalogue_position(q: &PlotQuery) -> usize {
    PLOT_TYPES
        .iter()
        .position(|(f, s, _)| *f == q.plot_type && *s == q.sub_type)
        .unwrap_or(usize::MAX)
}

/// Orders rows by plot family and sub type (catalogue order), then rank
/// group, then method.
pub fn sort_rows(rows: &mut [PlotEvalRow]) {
    rows.sort_by(|a, b| {
        (
            catalogue_position(&a.plot_query),
            &a.plot_query.sub_type,
            a.rank_group,
            a.method,
        )
            .cmp(&(
                catalogue_position(&b.plot_query),
                &b.plot_query.sub_type,
                b.rank_group,
                b.method,
            ))
    });
}

/// Runs every query against every (group, method) index and records the
/// first recommendation. Lookup and provider failures become row-level
/// errors.
pub fn plot_eval(
    queries: &[PlotQuery],
    groups: &[RankGroup],
    methods: &[Method],
    indexes: &IndexSet,
    provider: &dyn Embedder,
) -> Vec<PlotEvalRow> {
    let mut rows = Vec::with_capacity(queries.len() * groups.len() * methods.len());
    for query in queries {
        for &group in groups {
            for &method in methods {
                let req = QueryRequest::new(query.query_text.clone(), method, 1).in_group(group);
                let (top1_code, top1_pair_id, error) = match recommend(&req, indexes, provider) {
                    Ok(recs) => match recs.into_iter().next() {
                        Some(rec) => (rec.code, Some(rec.pair_id), None),
                        None => (String::new(), None, None),
                    },
                    Err(err) => (String::new(), None, Some(err.to_string())),
                };
                rows.push(PlotEvalRow {
                    auto_relevant: auto_relevant(&top1_code, query),
                    plot_query: query.clone(),
                    rank_group: group,
                    method,
                    top1_code,
                    top1_pair_id,
                    human_verdict: HumanVerdict::Unjudged,
                    error,
                });
            }
        }
    }
    sort_rows(&mut rows);
    rows
}

/// Writes one JSON object per line.
pub fn write_review_file<W: Write>(rows: &[PlotEvalRow], mut out: W) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("writing review file", e))?;
    }
    Ok(())
}

pub fn read_review_file<R: BufRead>(input: R) -> Result<Vec<PlotEvalRow>> {
    let mut rows = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("reading review file", e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

/// Renders sanity results and the plot grid (sub types × group/method) as
/// text tables and as JSON.
pub fn report(sanity: &[SanityReport], rows: &[PlotEvalRow]) -> Report {
    let mut text = String::new();
    let _ = writeln!(text, "Sanity check (rank-1 exact code match)");
    let _ = writeln!(
        text,
        "{:<12} {:<16} {:>11} {:>13} {:>17}",
        "Rank", "Type", "Total Items", "Total Correct", "Total Correct (%)"
    );
    for r in sanity {
        let _ = writeln!(
            text,
            "{:<12} {:<16} {:>11} {:>13} {:>17.2}",
            r.rank_group.as_str(),
            r.method.as_str(),
            r.total_items,
            r.total_correct,
            r.percent_correct
        );
    }

    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut columns: Vec<(RankGroup, Method)> =
        rows.iter().map(|r| (r.rank_group, r.method)).collect();
    columns.sort();
    columns.dedup();
    let mut queries: Vec<&PlotQuery> = Vec::new();
    for row in &rows {
        if queries.last() != Some(&&row.plot_query) && !queries.contains(&&row.plot_query) {
            queries.push(&row.plot_query);
        }
    }
    let cell = |q: &PlotQuery, col: (RankGroup, Method)| {
        rows.iter()
            .find(|r| &r.plot_query == q && (r.rank_group, r.method) == col)
    };

    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Plot-type study (first recommendation; ✓ = automatic proxy, not a human verdict)"
    );
    let labels: Vec<String> = columns
        .iter()
        .map(|(g, m)| format!("{}/{}", g.as_str(), m.as_str()))
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut header = format!("{:<28}", "Plot Type");
    for label in &labels {
        let _ = write!(header, " {label:^width$}");
    }
    let _ = writeln!(text, "{}", header.trim_end());

    let mut grid = Vec::new();
    for q in &queries {
        let mut line = format!("{:<28}", q.sub_type.to_lowercase());
        let mut cells = Vec::new();
        for &col in &columns {
            let mark = match cell(q, col) {
                Some(r) if r.error.is_some() => "ERR",
                Some(r) if r.auto_relevant => "✓",
                _ => "",
            };
            let _ = write!(line, " {mark:^width$}");
            cells.push(cell(q, col).is_some_and(|r| r.auto_relevant));
        }
        let _ = writeln!(text, "{}", line.trim_end());
        grid.push(json!({ "sub_type": q.sub_type, "plot_type": q.plot_type, "cells": cells }));
    }

    let count = |col: (RankGroup, Method), pred: &dyn Fn(&PlotEvalRow) -> bool| {
        rows.iter()
            .filter(|r| (r.rank_group, r.method) == col && pred(r))
            .count()
    };
    let auto_totals: Vec<usize> = columns
        .iter()
        .map(|&c| count(c, &|r| r.auto_relevant))
        .collect();
    let human_totals: Vec<usize> = columns
        .iter()
        .map(|&c| count(c, &|r| r.human_verdict == HumanVerdict::Correct))
        .collect();
    let unjudged: usize = rows
        .iter()
        .filter(|r| r.human_verdict == HumanVerdict::Unjudged)
        .count();
    if !columns.is_empty() {
        for (label, totals) in [
            ("Total (auto proxy)", &auto_totals),
            ("Total Correct (human)", &human_totals),
        ] {
            let mut line = format!("{label:<28}");
            for t in totals {
                let _ = write!(line, " {:^width$}", t.to_string());
            }
            let _ = writeln!(text, "{line}");
        }
        let _ = writeln!(text, "Unjudged rows: {unjudged}");
    }

    let json = json!({
        "sanity": sanity,
        "plot_eval": {
            "columns": columns
                .iter()
                .map(|(g, m)| json!({ "rank_group": g, "method": m }))
                .collect::<Vec<_>>(),
            "rows": grid,
            "totals_auto": auto_totals,
            "totals_human": human_totals,
            "unjudged": unjudged,
        },
    });
    Report { text, json }
}

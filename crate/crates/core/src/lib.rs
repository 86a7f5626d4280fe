//! Code cell recommendation for Jupyter notebooks.
//!
//! Given a markdown description, `cellrec` recommends existing code cells
//! from an indexed notebook corpus. Two retrieval paths are provided:
//!
//! * lexical: Okapi BM25 over the markdown half of each markdown/code pair,
//!   returning the paired code ([`bm25`]);
//! * dense: cosine similarity between an embedded query and embedded code
//!   cells, through a pluggable embedding provider ([`vector`]).
//!
//! [`notebook`] turns nbformat files into [`notebook::CellPair`]s,
//! [`recommend`] is the query façade over both engines, [`eval`] hosts the
//! self-retrieval and plot-type evaluation protocols, and [`store`] persists
//! indexes in the `CRIX1` container format.

pub mod bm25;
pub mod error;
pub mod eval;
pub mod notebook;
pub mod recommend;
pub mod store;
pub mod text;
pub mod vector;

pub use error::{Error, Result};

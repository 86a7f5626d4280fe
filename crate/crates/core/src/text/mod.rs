//! Tokenization and the optional stemming/lemmatization pass.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub mod porter;

/// Lowercase token sequence of one field.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn field_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }
}

/// Splits on every non-alphanumeric character and lowercases.
///
/// Alphanumeric means Unicode letters and digits. No stopwords are removed.
pub fn tokenize(text: &str) -> TokenStream {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|frag| !frag.is_empty())
        .map(|frag| {
            frag.chars()
                .flat_map(char::to_lowercase)
                .filter(|c| c.is_alphanumeric() && !c.is_uppercase())
                .collect::<String>()
        })
        .filter(|tok| !tok.is_empty())
        .collect();
    TokenStream { tokens }
}

const LEMMA_TABLE: &str = include_str!("../../resources/lemmas.tsv");

/// Parses `form<TAB>lemma` lines. Blank lines and `#` comments are skipped.
pub fn parse_lemma_table(tsv: &str) -> HashMap<String, String> {
    tsv.lines()
        .map(str::trim_end)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .filter_map(|line| {
            let (form, lemma) = line.split_once('\t')?;
            let (form, lemma) = (form.trim(), lemma.trim());
            (!form.is_empty() && !lemma.is_empty()).then(|| (form.to_string(), lemma.to_string()))
        })
        .collect()
}

/// The bundled table of irregular English forms.
pub fn lemma_table() -> &'static HashMap<String, String> {
    static TABLE: OnceLock<HashMap<String, String>> = OnceLock::new();
    TABLE.get_or_init(|| parse_lemma_table(LEMMA_TABLE))
}

pub fn lemmatize(token: &str) -> &str {
    lemma_table()
        .get(token)
        .map(String::as_str)
        .unwrap_or(token)
}

/// Lemmatizes each token against the bundled table, then Porter-stems it.
pub fn stem_and_lemmatize(ts: &TokenStream) -> TokenStream {
    TokenStream {
        tokens: ts
            .tokens
            .iter()
            .map(|t| porter::stem(lemmatize(t)))
            .collect(),
    }
}

/// Text preprocessing applied to both indexed documents and queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    Plain,
    StemLemma,
}

impl Preprocess {
    pub fn analyze(self, text: &str) -> TokenStream {
        let ts = tokenize(text);
        match self {
            Preprocess::Plain => ts,
            Preprocess::StemLemma => stem_and_lemmatize(&ts),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Preprocess::Plain => 0,
            Preprocess::StemLemma => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Preprocess::Plain),
            1 => Some(Preprocess::StemLemma),
            _ => None,
        }
    }
}

impl fmt::Display for Preprocess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preprocess::Plain => "plain",
            Preprocess::StemLemma => "stem-lemma",
        })
    }
}

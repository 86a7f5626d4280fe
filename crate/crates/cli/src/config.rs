//! Settings: built-in defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use cellrec::bm25::Bm25Params;
use cellrec::notebook::default_plot_keywords;
use cellrec::vector::{EmbeddingProviderSpec, ProviderKind};
use cellrec::Error;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "CELLREC_CONFIG";
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_INDEX_DIR: &str = "cellrec-index";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    k1: Option<f64>,
    b: Option<f64>,
    plot_keywords: Option<Vec<String>>,
    provider: Option<String>,
    endpoint: Option<String>,
    dim: Option<usize>,
    index_dir: Option<PathBuf>,
    default_k: Option<usize>,
    out_dir: Option<PathBuf>,
}

/// Flags that may override file settings.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
    pub index_dir: Option<PathBuf>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub bm25: Bm25Params,
    pub plot_keywords: Vec<String>,
    /// Unset provider fields fall back to what the index was built with.
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
    pub index_dir: PathBuf,
    pub default_k: usize,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::default(),
            plot_keywords: default_plot_keywords(),
            provider: None,
            endpoint: None,
            dim: None,
            index_dir: PathBuf::from(DEFAULT_INDEX_DIR),
            default_k: DEFAULT_K,
            out_dir: PathBuf::from("."),
        }
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

impl Config {
    /// Reads `explicit`, or the file named by `CELLREC_CONFIG`, or nothing.
    pub fn load(explicit: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let file = match path {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
                Self::parse_file(&text)
                    .with_context(|| format!("in config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        Self::resolve(file, overrides)
    }

    #[cfg(test)]
    pub fn from_toml(text: &str, overrides: &Overrides) -> anyhow::Result<Self> {
        Self::resolve(Self::parse_file(text)?, overrides)
    }

    fn parse_file(text: &str) -> anyhow::Result<FileConfig> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    fn resolve(file: FileConfig, o: &Overrides) -> anyhow::Result<Self> {
        let d = Config::default();
        let k1 = o.k1.or(file.k1).unwrap_or(d.bm25.k1);
        let b = o.b.or(file.b).unwrap_or(d.bm25.b);
        let bm25 = Bm25Params::new(k1, b)?;

        let provider = match (o.provider, file.provider) {
            (Some(kind), _) => Some(kind),
            (None, Some(name)) => Some(name.parse().map_err(invalid)?),
            (None, None) => None,
        };
        let dim = o.dim.or(file.dim);
        if dim == Some(0) {
            return Err(invalid("dim must be > 0"));
        }
        let default_k = file.default_k.unwrap_or(d.default_k);
        if default_k == 0 {
            return Err(invalid("default_k must be > 0"));
        }
        let plot_keywords = file.plot_keywords.unwrap_or(d.plot_keywords);
        if plot_keywords.iter().all(|k| k.trim().is_empty()) {
            return Err(invalid("plot_keywords must contain a non-blank keyword"));
        }
        Ok(Self {
            bm25,
            plot_keywords,
            provider,
            endpoint: o.endpoint.clone().or(file.endpoint),
            dim,
            index_dir: o
                .index_dir
                .clone()
                .or(file.index_dir)
                .unwrap_or(d.index_dir),
            default_k,
            out_dir: file.out_dir.unwrap_or(d.out_dir),
        })
    }

    /// The embedding provider to use. Settings left unset are taken from
    /// `built_with` (the provider recorded when the index was built), then
    /// from the defaults: hashing with 256 dimensions.
    pub fn provider_spec(
        &self,
        built_with: Option<&EmbeddingProviderSpec>,
    ) -> anyhow::Result<EmbeddingProviderSpec> {
        let kind = self
            .provider
            .or(built_with.map(|s| s.kind))
            .unwrap_or(ProviderKind::Hash);
        let same_kind = built_with.filter(|s| s.kind == kind);
        let dim = self.dim.or(same_kind.map(|s| s.dim)).unwrap_or(DEFAULT_DIM);
        match kind {
            ProviderKind::Hash => Ok(EmbeddingProviderSpec::hash(dim)),
            ProviderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or_else(|| same_kind.and_then(|s| s.endpoint.clone()))
                    .ok_or_else(|| invalid("provider `remote` requires an endpoint"))?;
                Ok(EmbeddingProviderSpec::remote(endpoint, dim))
            }
        }
    }
}

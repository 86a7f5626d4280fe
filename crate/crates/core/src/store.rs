//! Index persistence.
//!
//! Each index is one `CRIX1` file:
//!
//! ```text
//! "CRIX1"  magic
//! u8       section tag: 'B' (BM25) or 'V' (vector)
//! ...      section body, little-endian, strings as u32 length + UTF-8
//! ```
//!
//! BM25 body: `k1:f64 b:f64 preprocess:u8 n:u32 {pair doc_len:u32}×n
//! terms:u32 {term postings:u32 {doc:u32 tf:u32}×postings}×terms`.
//! Vector body: `dim:u32 n:u32 {pair f64×dim}×n`.
//! A pair is `pair_id notebook_id rank:u8 position:u64 markdown code`.
//!
//! A directory of indexes is described by `manifest.json`, which records a
//! SHA-256 digest per file; digests are verified on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::{Bm25Index, Bm25Params, Posting};
use crate::notebook::{AuthorRank, CellPair};
use crate::recommend::{AnyIndex, IndexSet, Method, RankGroup};
use crate::text::Preprocess;
use crate::vector::{EmbeddingProviderSpec, EmbeddingVector, VectorIndex};
use crate::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CRIX1";
pub const SECTION_BM25: u8 = b'B';
pub const SECTION_VECTOR: u8 = b'V';
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: &str = "1";
const LOCK_FILE: &str = ".lock";

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value exceeds u32 container field");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn pair(&mut self, p: &CellPair) {
        self.str(&p.pair_id);
        self.str(&p.notebook_id);
        self.u8(p.author_rank.code());
        self.u64(p.position as u64);
        self.str(&p.markdown);
        self.str(&p.code);
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

type DecodeResult<T> = std::result::Result<T, String>;

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> DecodeResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> DecodeResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> DecodeResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> DecodeResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> DecodeResult<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn str(&mut self) -> DecodeResult<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| format!("invalid UTF-8 before byte {}", self.pos))
    }

    fn pair(&mut self) -> DecodeResult<CellPair> {
        let pair_id = self.str()?;
        let notebook_id = self.str()?;
        let rank = self.u8()?;
        let author_rank =
            AuthorRank::from_code(rank).ok_or_else(|| format!("bad author rank code {rank}"))?;
        let position = self.u64()? as usize;
        Ok(CellPair {
            pair_id,
            markdown: self.str()?,
            code: self.str()?,
            notebook_id,
            author_rank,
            position,
        })
    }

    fn finish(&self) -> DecodeResult<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.buf.len() - self.pos))
        }
    }
}

fn header(section: u8) -> Encoder {
    let mut enc = Encoder::default();
    enc.0.extend_from_slice(MAGIC);
    enc.u8(section);
    enc
}

pub fn encode_bm25(ix: &Bm25Index) -> Vec<u8> {
    let mut enc = header(SECTION_BM25);
    enc.f64(ix.params.k1);
    enc.f64(ix.params.b);
    enc.u8(ix.preprocess.code());
    enc.u32(ix.docs.len());
    for (pair, &len) in ix.docs.iter().zip(&ix.doc_len) {
        enc.pair(pair);
        enc.u32(len as usize);
    }
    enc.u32(ix.postings.len());
    for (term, postings) in &ix.postings {
        enc.str(term);
        enc.u32(postings.len());
        for p in postings {
            enc.u32(p.doc as usize);
            enc.u32(p.term_freq as usize);
        }
    }
    enc.0
}

pub fn encode_vector(ix: &VectorIndex) -> Vec<u8> {
    let mut enc = header(SECTION_VECTOR);
    enc.u32(ix.dim);
    enc.u32(ix.docs.len());
    for (pair, v) in ix.docs.iter().zip(&ix.vectors) {
        enc.pair(pair);
        for &x in v.values() {
            enc.f64(x);
        }
    }
    enc.0
}

pub fn encode(index: &AnyIndex) -> Vec<u8> {
    match index {
        AnyIndex::Bm25(ix) => encode_bm25(ix),
        AnyIndex::Vector(ix) => encode_vector(ix),
    }
}

fn check_sorted_unique(docs: &[CellPair]) -> DecodeResult<()> {
    match docs.windows(2).find(|w| w[0].pair_id >= w[1].pair_id) {
        Some(w) => Err(format!("pair ids out of order at `{}`", w[1].pair_id)),
        None => Ok(()),
    }
}

fn decode_bm25(dec: &mut Decoder<'_>) -> DecodeResult<Bm25Index> {
    let params = Bm25Params {
        k1: dec.f64()?,
        b: dec.f64()?,
    };
    params.validate().map_err(|e| e.to_string())?;
    let pre = dec.u8()?;
    let preprocess =
        Preprocess::from_code(pre).ok_or_else(|| format!("bad preprocess code {pre}"))?;
    let n = dec.u32()? as usize;
    if n == 0 {
        return Err("empty document table".into());
    }
    let mut docs = Vec::with_capacity(n.min(1 << 20));
    let mut doc_len = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        docs.push(dec.pair()?);
        doc_len.push(dec.u32()?);
    }
    check_sorted_unique(&docs)?;
    let terms = dec.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..terms {
        let term = dec.str()?;
        let count = dec.u32()? as usize;
        let mut list: Vec<Posting> = Vec::with_capacity(count.min(n));
        for _ in 0..count {
            let doc = dec.u32()?;
            let term_freq = dec.u32()?;
            if doc as usize >= n || term_freq == 0 {
                return Err(format!("bad posting for `{term}`"));
            }
            if list.last().is_some_and(|p| p.doc >= doc) {
                return Err(format!("postings for `{term}` out of order"));
            }
            list.push(Posting { doc, term_freq });
        }
        if list.is_empty() || postings.insert(term.clone(), list).is_some() {
            return Err(format!("bad posting list for `{term}`"));
        }
    }
    Ok(Bm25Index::from_parts(
        params, preprocess, docs, doc_len, postings,
    ))
}

fn decode_vector(dec: &mut Decoder<'_>) -> DecodeResult<VectorIndex> {
    let dim = dec.u32()? as usize;
    let n = dec.u32()? as usize;
    if dim == 0 || n == 0 {
        return Err("empty vector index".into());
    }
    let mut docs = Vec::with_capacity(n.min(1 << 20));
    let mut vectors = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        docs.push(dec.pair()?);
        let values = (0..dim)
            .map(|_| dec.f64())
            .collect::<DecodeResult<Vec<_>>>()?;
        vectors.push(EmbeddingVector::new(values).map_err(|e| e.to_string())?);
    }
    check_sorted_unique(&docs)?;
    VectorIndex::from_parts(dim, docs, vectors).map_err(|e| e.to_string())
}

/// Decodes a `CRIX1` file of either section kind.
pub fn decode(bytes: &[u8]) -> std::result::Result<AnyIndex, String> {
    let mut dec = Decoder { buf: bytes, pos: 0 };
    if dec.take(MAGIC.len())? != MAGIC {
        return Err("bad magic".into());
    }
    let index = match dec.u8()? {
        SECTION_BM25 => AnyIndex::Bm25(decode_bm25(&mut dec)?),
        SECTION_VECTOR => AnyIndex::Vector(decode_vector(&mut dec)?),
        tag => return Err(format!("unknown section tag {tag:#04x}")),
    };
    dec.finish()?;
    Ok(index)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub group: RankGroup,
    pub method: Method,
    pub file: String,
    pub doc_count: usize,
    /// Unix seconds.
    pub built_at: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: String,
    /// Provider the vector indexes were embedded with; queries must match it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingProviderSpec>,
    pub entries: Vec<ManifestRecord>,
}

impl IndexManifest {
    pub fn record(&self, group: RankGroup, method: Method) -> Option<&ManifestRecord> {
        self.entries
            .iter()
            .find(|r| r.group == group && r.method == method)
    }
}

pub fn index_file_name(group: RankGroup, method: Method) -> String {
    format!("{}.{}.crix", group.as_str(), method.as_str())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Current unix time, or `SOURCE_DATE_EPOCH` when set, so that repeated
/// builds can produce identical manifests.
fn build_timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Exclusive writer over an index directory, holding its lock file.
pub struct StoreWriter {
    dir: PathBuf,
    embedding: Option<EmbeddingProviderSpec>,
    entries: Vec<ManifestRecord>,
    finished: bool,
}

impl StoreWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let lock = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Locked(dir));
            }
            Err(e) => return Err(Error::io(format!("creating {}", lock.display()), e)),
        }
        Ok(Self {
            dir,
            embedding: None,
            entries: Vec::new(),
            finished: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_embedding(&mut self, spec: EmbeddingProviderSpec) {
        self.embedding = Some(spec);
    }

    /// Stages and renames the index file into place.
    pub fn write(
        &mut self,
        group: RankGroup,
        method: Method,
        index: &AnyIndex,
    ) -> Result<&ManifestRecord> {
        let bytes = encode(index);
        let file = index_file_name(group, method);
        write_atomic(&self.dir.join(&file), &bytes)?;
        let built_at = build_timestamp();
        self.entries
            .retain(|r| !(r.group == group && r.method == method));
        self.entries.push(ManifestRecord {
            group,
            method,
            file,
            doc_count: index.doc_count(),
            built_at,
            digest: sha256_hex(&bytes),
        });
        Ok(self.entries.last().unwrap())
    }

    /// Writes the manifest; indexes written earlier become visible only now.
    pub fn finish(mut self) -> Result<IndexManifest> {
        self.entries.sort_by_key(|r| (r.group, r.method));
        let manifest = IndexManifest {
            version: MANIFEST_VERSION.to_string(),
            embedding: self.embedding.take(),
            entries: std::mem::take(&mut self.entries),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        write_atomic(&self.dir.join(MANIFEST_FILE), &json)?;
        self.finished = true;
        Ok(manifest)
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if !self.finished {
            log::warn!(
                "index directory {} left without a new manifest",
                self.dir.display()
            );
        }
        let _ = fs::remove_file(self.dir.join(LOCK_FILE));
    }
}

/// Read access to an index directory.
#[derive(Debug, Clone)]
pub struct IndexStore {
    dir: PathBuf,
    manifest: IndexManifest,
}

impl IndexStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join(MANIFEST_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::StoreNotFound(path));
            }
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        };
        let manifest: IndexManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::CorruptIndex {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::CorruptIndex {
                path,
                reason: format!("unsupported manifest version `{}`", manifest.version),
            });
        }
        Ok(Self { dir, manifest })
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load(&self, group: RankGroup, method: Method) -> Result<AnyIndex> {
        let record = self
            .manifest
            .record(group, method)
            .ok_or_else(|| Error::IndexMissing {
                group: group.to_string(),
                method: method.to_string(),
            })?;
        let path = self.dir.join(&record.file);
        let corrupt = |reason: String| Error::CorruptIndex {
            path: path.clone(),
            reason,
        };
        let bytes = fs::read(&path).map_err(|e| corrupt(e.to_string()))?;
        let digest = sha256_hex(&bytes);
        if digest != record.digest {
            return Err(corrupt(format!(
                "digest {digest} does not match manifest {}",
                record.digest
            )));
        }
        let index = decode(&bytes).map_err(corrupt)?;
        let kind_ok = matches!((&index, method), (AnyIndex::Vector(_), Method::Vector))
            || matches!(&index, AnyIndex::Bm25(ix) if Some(ix.preprocess()) == method.preprocess());
        if !kind_ok {
            return Err(corrupt(format!("file does not hold a `{method}` index")));
        }
        Ok(index)
    }

    /// Loads the listed (group, method) indexes into one set.
    pub fn load_set(&self, keys: &[(RankGroup, Method)]) -> Result<IndexSet> {
        let mut set = IndexSet::new();
        for &(group, method) in keys {
            set.insert(group, method, self.load(group, method)?)?;
        }
        Ok(set)
    }
}

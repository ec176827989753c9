//! Paired residual-stream activation storage.
//!
//! A shard is a binary file holding the base-model and reasoning-model
//! activations for `n_tokens` aligned tokens, plus a JSON-lines sidecar with
//! one [`TokenMetadata`] record per token. A [`DatasetManifest`] lists shards
//! with SHA-256 checksums and the hook layer they were captured at.
//!
//! # Shard layout
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XCAS"
//! 4       4     format_version   u32 LE (= 1)
//! 8       4     d_model          u32 LE
//! 12      8     n_tokens         u64 LE
//! 20      1     dtype_code       u8 (1 = f32 LE)
//! 21      3     reserved, zero
//! 24      4·n·d base block       row-major, token-major
//! ...     4·n·d reasoning block  row-major, token-major
//! ```
//!
//! Values are stored unnormalized.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_input, Error, Result};
use crate::numerics::{RngState, Tensor2D};

pub const SHARD_MAGIC: [u8; 4] = *b"XCAS";
pub const SHARD_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 1;
pub const SHARD_HEADER_LEN: u64 = 24;
pub const MANIFEST_VERSION: u32 = 1;

/// Which model's activations a block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Base,
    Reasoning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub format_version: u32,
    pub d_model: u32,
    pub n_tokens: u64,
    pub dtype_code: u8,
}

impl ShardHeader {
    pub fn new(d_model: u32, n_tokens: u64) -> Self {
        Self {
            format_version: SHARD_VERSION,
            d_model,
            n_tokens,
            dtype_code: DTYPE_F32_LE,
        }
    }

    fn block_bytes(&self) -> u64 {
        self.n_tokens * self.d_model as u64 * 4
    }

    /// Total file size implied by the header.
    pub fn file_len(&self) -> u64 {
        SHARD_HEADER_LEN + 2 * self.block_bytes()
    }

    fn to_bytes(self) -> [u8; SHARD_HEADER_LEN as usize] {
        let mut b = [0u8; SHARD_HEADER_LEN as usize];
        b[0..4].copy_from_slice(&SHARD_MAGIC);
        b[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        b[8..12].copy_from_slice(&self.d_model.to_le_bytes());
        b[12..20].copy_from_slice(&self.n_tokens.to_le_bytes());
        b[20] = self.dtype_code;
        b
    }

    fn parse(path: &Path, b: &[u8]) -> Result<Self> {
        if b[0..4] != SHARD_MAGIC {
            return Err(Error::format(path, format!("bad magic {:?}", &b[0..4])));
        }
        let header = Self {
            format_version: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            d_model: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            n_tokens: u64::from_le_bytes(b[12..20].try_into().unwrap()),
            dtype_code: b[20],
        };
        if header.format_version != SHARD_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported version {}", header.format_version),
            ));
        }
        if header.dtype_code != DTYPE_F32_LE {
            return Err(Error::format(
                path,
                format!("unsupported dtype code {}", header.dtype_code),
            ));
        }
        if header.d_model == 0 {
            return Err(Error::format(path, "d_model must be positive"));
        }
        Ok(header)
    }
}

/// Per-token metadata, one sidecar line each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMetadata {
    pub sequence_id: u64,
    pub position: u32,
    pub token_id: u32,
    pub token_text: String,
}

/// One aligned token: base and reasoning activations plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardRecord {
    pub base: Vec<f32>,
    pub reasoning: Vec<f32>,
    pub meta: TokenMetadata,
}

/// Location and checksums of a written shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: PathBuf,
    pub sidecar: PathBuf,
    pub n_tokens: u64,
    pub d_model: u32,
    pub sha256: String,
    pub sidecar_sha256: String,
}

/// Sidecar path for a shard: `foo.xcas` → `foo.meta.jsonl`.
pub fn sidecar_path(shard: &Path) -> PathBuf {
    shard.with_extension("meta.jsonl")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes a shard and its sidecar.
pub fn write_shard(path: &Path, d_model: usize, records: &[ShardRecord]) -> Result<ShardInfo> {
    ensure_input!(d_model > 0, "d_model must be positive");
    let mut seen = HashSet::new();
    for (j, r) in records.iter().enumerate() {
        ensure_input!(
            r.base.len() == d_model && r.reasoning.len() == d_model,
            "record {j}: activation dims ({}, {}) differ from d_model {d_model}",
            r.base.len(),
            r.reasoning.len()
        );
        ensure_input!(
            seen.insert((r.meta.sequence_id, r.meta.position)),
            "record {j}: duplicate (sequence {}, position {})",
            r.meta.sequence_id,
            r.meta.position
        );
    }
    let header = ShardHeader::new(d_model as u32, records.len() as u64);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&header.to_bytes()).map_err(io)?;
    for r in records {
        for v in &r.base {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    for r in records {
        for v in &r.reasoning {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    drop(w);

    let sidecar = sidecar_path(path);
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(&r.meta)?);
        text.push('\n');
    }
    fs::write(&sidecar, &text).map_err(|e| Error::io(&sidecar, e))?;

    Ok(ShardInfo {
        sha256: sha256_file(path)?,
        sidecar_sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
        file: path.to_path_buf(),
        sidecar,
        n_tokens: header.n_tokens,
        d_model: header.d_model,
    })
}

/// Streaming reader over one shard file. The header and file length are
/// validated on open; rows and blocks are read on demand.
pub struct ShardReader {
    path: PathBuf,
    file: BufReader<File>,
    header: ShardHeader,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if actual < SHARD_HEADER_LEN {
            return Err(Error::Corruption {
                path: path.to_path_buf(),
                expected: SHARD_HEADER_LEN,
                actual,
            });
        }
        let mut buf = [0u8; SHARD_HEADER_LEN as usize];
        file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let header = ShardHeader::parse(path, &buf)?;
        if actual != header.file_len() {
            return Err(Error::Corruption {
                path: path.to_path_buf(),
                expected: header.file_len(),
                actual,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            file: BufReader::new(file),
            header,
        })
    }

    pub fn header(&self) -> ShardHeader {
        self.header
    }

    fn offset(&self, stream: Stream, row: u64) -> u64 {
        let block = match stream {
            Stream::Base => 0,
            Stream::Reasoning => self.header.block_bytes(),
        };
        SHARD_HEADER_LEN + block + row * self.header.d_model as u64 * 4
    }

    /// Reads `count` consecutive rows of one stream starting at `start`.
    pub fn read_rows(&mut self, stream: Stream, start: u64, count: u64) -> Result<Vec<f32>> {
        ensure_input!(
            start + count <= self.header.n_tokens,
            "rows {start}..{} out of range for {} tokens",
            start + count,
            self.header.n_tokens
        );
        let offset = self.offset(stream, start);
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut bytes = vec![0u8; (count * self.header.d_model as u64 * 4) as usize];
        self.file
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_block(&mut self, stream: Stream) -> Result<Vec<f32>> {
        self.read_rows(stream, 0, self.header.n_tokens)
    }
}

/// A fully loaded shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    pub header: ShardHeader,
    pub base: Vec<f32>,
    pub reasoning: Vec<f32>,
    pub sidecar: PathBuf,
}

impl ActivationShard {
    pub fn d_model(&self) -> usize {
        self.header.d_model as usize
    }

    pub fn n_tokens(&self) -> usize {
        self.header.n_tokens as usize
    }

    pub fn row(&self, stream: Stream, j: usize) -> &[f32] {
        let d = self.d_model();
        let block = match stream {
            Stream::Base => &self.base,
            Stream::Reasoning => &self.reasoning,
        };
        &block[j * d..(j + 1) * d]
    }
}

pub fn read_shard(path: &Path) -> Result<ActivationShard> {
    let mut reader = ShardReader::open(path)?;
    Ok(ActivationShard {
        header: reader.header(),
        base: reader.read_block(Stream::Base)?,
        reasoning: reader.read_block(Stream::Reasoning)?,
        sidecar: sidecar_path(path),
    })
}

pub fn read_sidecar(path: &Path) -> Result<Vec<TokenMetadata>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: TokenMetadata = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(meta);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestShard {
    /// Shard path relative to the manifest's directory.
    pub file: PathBuf,
    pub sidecar: PathBuf,
    pub n_tokens: u64,
    pub sha256: String,
    pub sidecar_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub hook_layer: usize,
    pub d_model: usize,
    pub base_model: String,
    pub reasoning_model: String,
    pub total_tokens: u64,
    pub shards: Vec<ManifestShard>,
    /// Directory the shard paths are relative to; set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest over existing shards under `root`, computing checksums.
    pub fn build(
        root: &Path,
        shard_files: &[PathBuf],
        hook_layer: usize,
        base_model: &str,
        reasoning_model: &str,
    ) -> Result<Self> {
        if shard_files.is_empty() {
            return Err(Error::InvalidInput("no shards given".into()));
        }
        let mut shards = Vec::with_capacity(shard_files.len());
        let mut d_model = None;
        for rel in shard_files {
            let abs = root.join(rel);
            let header = ShardReader::open(&abs)?.header();
            match d_model {
                None => d_model = Some(header.d_model as usize),
                Some(d) if d != header.d_model as usize => {
                    return Err(Error::Validation(format!(
                        "{} has d_model {} but earlier shards have {d}",
                        rel.display(),
                        header.d_model
                    )))
                }
                _ => {}
            }
            let side_abs = sidecar_path(&abs);
            let meta = read_sidecar(&side_abs)?;
            if meta.len() as u64 != header.n_tokens {
                return Err(Error::Validation(format!(
                    "{}: sidecar has {} records, shard has {} tokens",
                    rel.display(),
                    meta.len(),
                    header.n_tokens
                )));
            }
            shards.push(ManifestShard {
                file: rel.clone(),
                sidecar: sidecar_path(rel),
                n_tokens: header.n_tokens,
                sha256: sha256_file(&abs)?,
                sidecar_sha256: sha256_file(&side_abs)?,
            });
        }
        Ok(Self {
            format_version: MANIFEST_VERSION,
            hook_layer,
            d_model: d_model.unwrap_or(0),
            base_model: base_model.to_string(),
            reasoning_model: reasoning_model.to_string(),
            total_tokens: shards.iter().map(|s| s.n_tokens).sum(),
            shards,
            root: root.to_path_buf(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", m.format_version),
            ));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn shard_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.shards[i].file)
    }

    pub fn sidecar_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.shards[i].sidecar)
    }

    /// Checks every checksum, header and the token total.
    pub fn verify(&self) -> Result<()> {
        let mut total = 0;
        for (i, s) in self.shards.iter().enumerate() {
            let path = self.shard_path(i);
            let header = ShardReader::open(&path)?.header();
            if header.d_model as usize != self.d_model || header.n_tokens != s.n_tokens {
                return Err(Error::Validation(format!(
                    "{}: header (d_model {}, n_tokens {}) disagrees with manifest (d_model {}, n_tokens {})",
                    s.file.display(),
                    header.d_model,
                    header.n_tokens,
                    self.d_model,
                    s.n_tokens
                )));
            }
            let sum = sha256_file(&path)?;
            if sum != s.sha256 {
                return Err(Error::Validation(format!(
                    "{}: checksum mismatch",
                    s.file.display()
                )));
            }
            let side = sha256_file(&self.sidecar_path(i))?;
            if side != s.sidecar_sha256 {
                return Err(Error::Validation(format!(
                    "{}: sidecar checksum mismatch",
                    s.sidecar.display()
                )));
            }
            total += s.n_tokens;
        }
        if total != self.total_tokens {
            return Err(Error::Validation(format!(
                "manifest total_tokens {} but shards sum to {total}",
                self.total_tokens
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// In-memory dataset and batching
// ---------------------------------------------------------------------------

/// All tokens of a manifest in memory, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub d_model: usize,
    pub base: Vec<f32>,
    pub reasoning: Vec<f32>,
    pub metadata: Vec<TokenMetadata>,
}

impl ActivationDataset {
    pub fn from_records(d_model: usize, records: &[ShardRecord]) -> Result<Self> {
        let mut ds = Self {
            d_model,
            base: Vec::with_capacity(records.len() * d_model),
            reasoning: Vec::with_capacity(records.len() * d_model),
            metadata: Vec::with_capacity(records.len()),
        };
        for (j, r) in records.iter().enumerate() {
            ensure_input!(
                r.base.len() == d_model && r.reasoning.len() == d_model,
                "record {j} has the wrong dimension"
            );
            ds.base.extend_from_slice(&r.base);
            ds.reasoning.extend_from_slice(&r.reasoning);
            ds.metadata.push(r.meta.clone());
        }
        Ok(ds)
    }

    /// Loads and verifies every shard of a manifest.
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.verify()?;
        let mut ds = Self {
            d_model: manifest.d_model,
            base: Vec::new(),
            reasoning: Vec::new(),
            metadata: Vec::new(),
        };
        for i in 0..manifest.shards.len() {
            let shard = read_shard(&manifest.shard_path(i))?;
            let meta = read_sidecar(&manifest.sidecar_path(i))?;
            if meta.len() != shard.n_tokens() {
                return Err(Error::Validation(format!(
                    "shard {i}: {} metadata records for {} tokens",
                    meta.len(),
                    shard.n_tokens()
                )));
            }
            ds.base.extend_from_slice(&shard.base);
            ds.reasoning.extend_from_slice(&shard.reasoning);
            ds.metadata.extend(meta);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.metadata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metadata.is_empty()
    }

    pub fn row(&self, stream: Stream, j: usize) -> &[f32] {
        let block = match stream {
            Stream::Base => &self.base,
            Stream::Reasoning => &self.reasoning,
        };
        &block[j * self.d_model..(j + 1) * self.d_model]
    }

    pub fn row_f64(&self, stream: Stream, j: usize) -> Vec<f64> {
        self.row(stream, j).iter().map(|&v| v as f64).collect()
    }

    /// Gathers the given token indices into a paired batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.d_model;
        let mut base = Tensor2D::zeros(indices.len(), d);
        let mut reasoning = Tensor2D::zeros(indices.len(), d);
        for (r, &j) in indices.iter().enumerate() {
            for (dst, &src) in base.row_mut(r).iter_mut().zip(self.row(Stream::Base, j)) {
                *dst = src as f64;
            }
            for (dst, &src) in reasoning
                .row_mut(r)
                .iter_mut()
                .zip(self.row(Stream::Reasoning, j))
            {
                *dst = src as f64;
            }
        }
        Batch {
            indices: indices.to_vec(),
            base,
            reasoning,
        }
    }

    /// One epoch of batches: manifest order without an rng, a seeded
    /// permutation with one.
    pub fn batches(&self, batch_size: usize, rng: Option<&mut RngState>) -> Result<BatchIter<'_>> {
        ensure_input!(batch_size > 0, "batch size must be positive");
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = rng {
            rng.shuffle(&mut order);
        }
        Ok(BatchIter {
            dataset: self,
            order,
            batch_size,
            cursor: 0,
        })
    }
}

/// Paired activations for a set of token indices, in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub base: Tensor2D,
    pub reasoning: Tensor2D,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub struct BatchIter<'a> {
    dataset: &'a ActivationDataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}

/// Loads a manifest and returns one epoch of batches over it.
pub fn iterate_batches(
    manifest: &DatasetManifest,
    batch_size: usize,
    rng: Option<&mut RngState>,
) -> Result<Vec<Batch>> {
    let ds = ActivationDataset::load(manifest)?;
    Ok(ds.batches(batch_size, rng)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, d: usize, seed: u64) -> Vec<ShardRecord> {
        let mut rng = RngState::new(seed);
        (0..n)
            .map(|j| ShardRecord {
                base: (0..d).map(|_| rng.normal() as f32).collect(),
                reasoning: (0..d).map(|_| rng.normal() as f32).collect(),
                meta: TokenMetadata {
                    sequence_id: (j / 5) as u64,
                    position: (j % 5) as u32,
                    token_id: j as u32,
                    token_text: format!("t{j}"),
                },
            })
            .collect()
    }

    #[test]
    fn empty_shard_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.xcas");
        let info = write_shard(&p, 4, &[]).unwrap();
        assert_eq!(info.n_tokens, 0);
        let shard = read_shard(&p).unwrap();
        assert_eq!(shard.header.n_tokens, 0);
        assert!(shard.base.is_empty() && shard.reasoning.is_empty());
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xcas");
        write_shard(&p, 4, &records(3, 4, 1)).unwrap();
        let len = fs::metadata(&p).unwrap().len();
        assert_eq!(len, SHARD_HEADER_LEN + 2 * 3 * 4 * 4);
    }

    #[test]
    fn write_read_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xcas");
        let recs = records(7, 3, 2);
        write_shard(&p, 3, &recs).unwrap();
        let shard = read_shard(&p).unwrap();
        for (j, r) in recs.iter().enumerate() {
            let got_b: Vec<u32> = shard.row(Stream::Base, j).iter().map(|v| v.to_bits()).collect();
            let want_b: Vec<u32> = r.base.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got_b, want_b);
            assert_eq!(shard.row(Stream::Reasoning, j), &r.reasoning[..]);
        }
        let meta = read_sidecar(&shard.sidecar).unwrap();
        assert_eq!(meta, recs.iter().map(|r| r.meta.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = records(2, 3, 3);
        recs[1].reasoning.push(0.0);
        let err = write_shard(&dir.path().join("x.xcas"), 3, &recs).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn corrupted_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xcas");
        write_shard(&p, 2, &records(2, 2, 4)).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'Y';
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_shard(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_version_and_dtype_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xcas");
        write_shard(&p, 2, &records(2, 2, 4)).unwrap();
        let good = fs::read(&p).unwrap();
        let mut v = good.clone();
        v[4] = 9;
        fs::write(&p, &v).unwrap();
        assert!(matches!(read_shard(&p), Err(Error::Format { .. })));
        let mut d = good;
        d[20] = 2;
        fs::write(&p, &d).unwrap();
        assert!(matches!(read_shard(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_block_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xcas");
        write_shard(&p, 4, &records(3, 4, 5)).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match read_shard(&p) {
            Err(Error::Corruption {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 24 + 96);
                assert_eq!(actual, 24 + 96 - 10);
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    fn dataset_with_manifest(dir: &Path, n: usize) -> DatasetManifest {
        let recs = records(n, 3, 9);
        let (a, b) = recs.split_at(n / 2);
        write_shard(&dir.join("a.xcas"), 3, a).unwrap();
        write_shard(&dir.join("b.xcas"), 3, b).unwrap();
        let m = DatasetManifest::build(
            dir,
            &[PathBuf::from("a.xcas"), PathBuf::from("b.xcas")],
            2,
            "base",
            "reasoning",
        )
        .unwrap();
        m.save(&dir.join("manifest.json")).unwrap();
        DatasetManifest::load(&dir.join("manifest.json")).unwrap()
    }

    #[test]
    fn batches_partition_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset_with_manifest(dir.path(), 10);
        let batches = iterate_batches(&m, 4, None).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let order: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_batches_are_a_reproducible_permutation() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset_with_manifest(dir.path(), 23);
        let a = iterate_batches(&m, 5, Some(&mut RngState::new(3))).unwrap();
        let b = iterate_batches(&m, 5, Some(&mut RngState::new(3))).unwrap();
        assert_eq!(a, b);
        let mut seen = vec![0usize; 23];
        for batch in &a {
            for &j in &batch.indices {
                seen[j] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset_with_manifest(dir.path(), 6);
        m.verify().unwrap();
        let p = dir.path().join("b.xcas");
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(m.verify(), Err(Error::Validation(_))));
        assert!(ActivationDataset::load(&m).is_err());
    }

    #[test]
    fn manifest_rejects_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        write_shard(&dir.path().join("a.xcas"), 3, &records(2, 3, 1)).unwrap();
        write_shard(&dir.path().join("b.xcas"), 4, &records(2, 4, 1)).unwrap();
        let err = DatasetManifest::build(
            dir.path(),
            &[PathBuf::from("a.xcas"), PathBuf::from("b.xcas")],
            0,
            "b",
            "r",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}

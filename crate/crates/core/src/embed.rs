//! Per-review contextual token embeddings.
//!
//! Sequences come either from an on-disk store (written by an external
//! encoder export) or from [`pseudo_embed`], a deterministic stand-in used in
//! tests and hermetic runs.
//!
//! Store layout, a directory holding:
//! - `embeddings.bin`: little-endian blob, magic `APRE`, u32 version, then per
//!   review: u32 id length, id bytes, u32 row count, u32 width, u32 word count,
//!   the word-to-first-row alignment (u32 each) and rows × width f32 values.
//! - `index.jsonl`: `{"review_id", "byte_offset"}` per review.
//! - `checksums.jsonl`: `{"review_id", "row_l2_norms"}` per review.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ReviewRecord;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"APRE";
pub const VERSION: u32 = 1;
pub const DEFAULT_DIM: usize = 256;
/// Longest subtoken sequence kept per review, markers excluded.
pub const DEFAULT_MAX_SUBTOKENS: usize = 256;

pub const BLOB_FILE: &str = "embeddings.bin";
pub const INDEX_FILE: &str = "index.jsonl";
pub const CHECKSUM_FILE: &str = "checksums.jsonl";

/// Rows 0 and `rows - 1` hold the start and end markers; subtokens sit in between.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    pub review_id: String,
    pub rows: usize,
    pub dim: usize,
    /// Row-major, `rows * dim` entries.
    pub values: Vec<f32>,
}

impl TokenEmbeddingSequence {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subtoken_count(&self) -> usize {
        self.rows - 2
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.dim == 0 {
            return Err(Error::Store(format!(
                "review `{}`: need at least 2 rows and width ≥ 1, got {}×{}",
                self.review_id, self.rows, self.dim
            )));
        }
        if self.values.len() != self.rows * self.dim {
            return Err(Error::Store(format!("review `{}`: value count mismatch", self.review_id)));
        }
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of review `{}`", self.review_id)));
        }
        Ok(())
    }
}

/// First subtoken row of every whitespace word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentMap {
    pub first_rows: Vec<u32>,
}

impl AlignmentMap {
    pub fn identity(words: usize) -> Self {
        AlignmentMap {
            first_rows: (1..=words as u32).collect(),
        }
    }

    pub fn word_count(&self) -> usize {
        self.first_rows.len()
    }

    /// Checks strictly increasing indices within `1..=subtokens`.
    pub fn validate(&self, subtokens: usize) -> Result<()> {
        let mut prev = 0u32;
        for &r in &self.first_rows {
            if r <= prev || r as usize > subtokens {
                return Err(Error::Store(format!(
                    "alignment index {r} breaks strict increase or range 1..={subtokens}"
                )));
            }
            prev = r;
        }
        Ok(())
    }
}

pub fn first_piece(alignment: &AlignmentMap, word_position: usize) -> Result<usize> {
    alignment
        .first_rows
        .get(word_position)
        .map(|&r| r as usize)
        .ok_or_else(|| {
            Error::Invalid(format!(
                "word position {word_position} out of range for {} words",
                alignment.word_count()
            ))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedReview {
    pub sequence: TokenEmbeddingSequence,
    pub alignment: AlignmentMap,
}

impl EmbeddedReview {
    pub fn validate(&self) -> Result<()> {
        self.sequence.validate()?;
        self.alignment.validate(self.sequence.subtoken_count())
    }

    /// Binary record as stored in the blob.
    pub fn encode(&self) -> Vec<u8> {
        let s = &self.sequence;
        let mut out = Vec::with_capacity(16 + s.review_id.len() + 4 * (self.alignment.word_count() + s.values.len()));
        out.extend_from_slice(&(s.review_id.len() as u32).to_le_bytes());
        out.extend_from_slice(s.review_id.as_bytes());
        out.extend_from_slice(&(s.rows as u32).to_le_bytes());
        out.extend_from_slice(&(s.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.alignment.word_count() as u32).to_le_bytes());
        for r in &self.alignment.first_rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
        for v in &s.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Store(format!("record truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes one record starting at `offset`; returns it with the offset just past it.
fn decode_record(blob: &[u8], offset: usize) -> Result<(EmbeddedReview, usize)> {
    let mut c = Cursor { buf: blob, pos: offset };
    let id_len = c.u32()? as usize;
    let review_id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|_| Error::Store(format!("review id at byte {offset} is not UTF-8")))?
        .to_owned();
    let rows = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let words = c.u32()? as usize;
    let first_rows = c
        .take(words.checked_mul(4).ok_or_else(|| Error::Store("word count overflow".into()))?)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let n = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Store("row count overflow".into()))?;
    let values = c
        .take(n)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let review = EmbeddedReview {
        sequence: TokenEmbeddingSequence {
            review_id,
            rows,
            dim,
            values,
        },
        alignment: AlignmentMap { first_rows },
    };
    review.validate()?;
    Ok((review, c.pos))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    review_id: String,
    byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksumEntry {
    pub review_id: String,
    pub row_l2_norms: Vec<f64>,
}

/// Read-only store held in memory; lookups by review id are hash-map based.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dir: PathBuf,
    blob: Vec<u8>,
    order: Vec<String>,
    offsets: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let blob_path = dir.join(BLOB_FILE);
        let index_path = dir.join(INDEX_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;

        if blob.len() < 8 || &blob[..4] != MAGIC {
            return Err(Error::Store(format!("{}: bad magic", blob_path.display())));
        }
        let version = u32::from_le_bytes(blob[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Store(format!("{}: unsupported version {version}", blob_path.display())));
        }

        let mut order = Vec::new();
        let mut offsets = HashMap::new();
        for (i, line) in index.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: IndexEntry =
                serde_json::from_str(line).map_err(|e| Error::parse(&index_path, i + 1, e.to_string()))?;
            let offset = usize::try_from(entry.byte_offset)
                .ok()
                .filter(|&o| o >= 8 && o < blob.len())
                .ok_or_else(|| {
                    Error::Store(format!(
                        "offset {} for `{}` outside blob of {} bytes",
                        entry.byte_offset,
                        entry.review_id,
                        blob.len()
                    ))
                })?;
            let (rec, _) = decode_record(&blob, offset)?;
            if rec.sequence.review_id != entry.review_id {
                return Err(Error::Store(format!(
                    "index names `{}` but record at {offset} is `{}`",
                    entry.review_id, rec.sequence.review_id
                )));
            }
            if offsets.insert(entry.review_id.clone(), offset).is_some() {
                return Err(Error::Store(format!("review `{}` indexed twice", entry.review_id)));
            }
            order.push(entry.review_id);
        }
        Ok(EmbeddingStore {
            dir: dir.to_owned(),
            blob,
            order,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Review ids in index order.
    pub fn review_ids(&self) -> &[String] {
        &self.order
    }

    pub fn contains(&self, review_id: &str) -> bool {
        self.offsets.contains_key(review_id)
    }

    pub fn get(&self, review_id: &str) -> Result<EmbeddedReview> {
        let &offset = self
            .offsets
            .get(review_id)
            .ok_or_else(|| Error::MissingReviews(vec![review_id.to_owned()]))?;
        decode_record(&self.blob, offset).map(|(r, _)| r)
    }

    /// Compares stored row norms with the checksum sidecar.
    pub fn verify_checksums(&self, tolerance: f64) -> Result<usize> {
        let path = self.dir.join(CHECKSUM_FILE);
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut checked = 0;
        for (i, line) in content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: ChecksumEntry =
                serde_json::from_str(line).map_err(|e| Error::parse(&path, i + 1, e.to_string()))?;
            let norms = self.get(&entry.review_id)?.sequence.row_norms();
            if norms.len() != entry.row_l2_norms.len() {
                return Err(Error::Store(format!(
                    "`{}`: {} rows stored, {} norms in sidecar",
                    entry.review_id,
                    norms.len(),
                    entry.row_l2_norms.len()
                )));
            }
            for (row, (a, b)) in norms.iter().zip(&entry.row_l2_norms).enumerate() {
                if (a - b).abs() > tolerance {
                    return Err(Error::Store(format!(
                        "`{}` row {row}: norm {a} differs from sidecar {b}",
                        entry.review_id
                    )));
                }
            }
            checked += 1;
        }
        Ok(checked)
    }
}

/// Writes blob, index and checksum sidecar into `dir` (created if missing).
pub fn write_store<'a>(dir: impl AsRef<Path>, reviews: impl IntoIterator<Item = &'a EmbeddedReview>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&VERSION.to_le_bytes());
    let mut index = String::new();
    let mut sums = String::new();
    let mut seen = std::collections::HashSet::new();
    for r in reviews {
        r.validate()?;
        let id = &r.sequence.review_id;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateReview(id.clone()));
        }
        let entry = IndexEntry {
            review_id: id.clone(),
            byte_offset: blob.len() as u64,
        };
        index.push_str(&serde_json::to_string(&entry)?);
        index.push('\n');
        let sum = ChecksumEntry {
            review_id: id.clone(),
            row_l2_norms: r.sequence.row_norms(),
        };
        sums.push_str(&serde_json::to_string(&sum)?);
        sums.push('\n');
        blob.extend_from_slice(&r.encode());
    }
    for (name, bytes) in [(BLOB_FILE, blob.as_slice()), (INDEX_FILE, index.as_bytes()), (CHECKSUM_FILE, sums.as_bytes())] {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn keyed_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn uniform_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Deterministic stand-in for an encoder: one row per whitespace word.
///
/// A word's row mixes a word-keyed part (weight 0.75) with a (word, position)
/// keyed part (weight 0.25), so the same word looks alike wherever it occurs
/// while every row still depends on its position. Entries stay in [-1, 1].
pub fn pseudo_embed(review_id: &str, text: &str, dim: usize, seed: u64) -> Result<EmbeddedReview> {
    if dim == 0 {
        return Err(Error::Invalid("embedding width must be at least 1".into()));
    }
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut values = Vec::with_capacity((words.len() + 2) * dim);
    let mut push = |row: Vec<f64>| values.extend(row.into_iter().map(|x| x as f32));
    push(uniform_row(&mut keyed_rng(seed, &[b"marker", b"[CLS]"]), dim));
    for (pos, w) in words.iter().enumerate() {
        let shared = uniform_row(&mut keyed_rng(seed, &[b"word", w.as_bytes()]), dim);
        let local = uniform_row(&mut keyed_rng(seed, &[b"word", w.as_bytes(), &(pos as u64).to_le_bytes()]), dim);
        push(shared.iter().zip(&local).map(|(a, b)| 0.75 * a + 0.25 * b).collect());
    }
    push(uniform_row(&mut keyed_rng(seed, &[b"marker", b"[SEP]"]), dim));
    Ok(EmbeddedReview {
        sequence: TokenEmbeddingSequence {
            review_id: review_id.to_owned(),
            rows: words.len() + 2,
            dim,
            values,
        },
        alignment: AlignmentMap::identity(words.len()),
    })
}

/// Cuts a review to its first `max_subtokens` subtoken rows, keeping the end
/// marker and only the words whose first piece survives. Returns whether anything was cut.
pub fn truncate(review: &mut EmbeddedReview, max_subtokens: usize) -> bool {
    let seq = &mut review.sequence;
    if seq.subtoken_count() <= max_subtokens {
        return false;
    }
    let end = seq.values.split_off((seq.rows - 1) * seq.dim);
    seq.values.truncate((max_subtokens + 1) * seq.dim);
    seq.values.extend(end);
    seq.rows = max_subtokens + 2;
    review.alignment.first_rows.retain(|&r| r as usize <= max_subtokens);
    log::warn!(
        "review `{}` truncated to {max_subtokens} subtokens",
        seq.review_id
    );
    true
}

/// Where the trainer gets review embeddings from.
pub trait EmbeddingSource: Sync {
    fn embed(&self, review: &ReviewRecord) -> Result<EmbeddedReview>;
    fn dim(&self) -> Option<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub max_subtokens: usize,
}

impl EmbeddingSource for PseudoEmbedder {
    fn embed(&self, review: &ReviewRecord) -> Result<EmbeddedReview> {
        let mut e = pseudo_embed(&review.review_id, &review.text, self.dim, self.seed)?;
        truncate(&mut e, self.max_subtokens);
        Ok(e)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

impl EmbeddingSource for EmbeddingStore {
    fn embed(&self, review: &ReviewRecord) -> Result<EmbeddedReview> {
        let r = self.get(&review.review_id)?;
        if r.alignment.word_count() != review.word_count() {
            return Err(Error::Store(format!(
                "review `{}`: alignment covers {} words, text has {}",
                review.review_id,
                r.alignment.word_count(),
                review.word_count()
            )));
        }
        Ok(r)
    }

    fn dim(&self) -> Option<usize> {
        let first = self.order.first()?;
        self.get(first).ok().map(|r| r.sequence.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, rows: usize, dim: usize, alignment: Vec<u32>) -> EmbeddedReview {
        EmbeddedReview {
            sequence: TokenEmbeddingSequence {
                review_id: id.into(),
                rows,
                dim,
                values: (0..rows * dim).map(|i| i as f32 * 0.5 - 1.0).collect(),
            },
            alignment: AlignmentMap { first_rows: alignment },
        }
    }

    #[test]
    fn single_review_store() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample("r1", 5, 4, vec![1, 2, 3]);
        write_store(dir.path(), [&r]).unwrap();
        let store = EmbeddingStore::open(dir.path()).unwrap();
        let back = store.get("r1").unwrap();
        assert_eq!(back.sequence.rows, 5);
        assert_eq!(back, r);
        assert_eq!(store.verify_checksums(1e-9).unwrap(), 1);
        assert!(matches!(store.get("nope"), Err(Error::MissingReviews(_))));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), [&sample("r1", 5, 4, vec![1, 2, 3])]).unwrap();
        let blob = dir.path().join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        assert!(EmbeddingStore::open(dir.path()).is_err());
    }

    #[test]
    fn bad_magic_version_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), [&sample("r1", 3, 2, vec![1])]).unwrap();
        let blob = dir.path().join(BLOB_FILE);
        let good = fs::read(&blob).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&blob, &bad).unwrap();
        assert!(EmbeddingStore::open(dir.path()).is_err());

        let mut bad = good.clone();
        bad[4] = 2;
        fs::write(&blob, &bad).unwrap();
        assert!(EmbeddingStore::open(dir.path()).is_err());

        fs::write(&blob, &good).unwrap();
        fs::write(dir.path().join(INDEX_FILE), "{\"review_id\":\"r1\",\"byte_offset\":9999}\n").unwrap();
        assert!(EmbeddingStore::open(dir.path()).is_err());
    }

    #[test]
    fn first_piece_lookup() {
        let split = AlignmentMap {
            first_rows: vec![1, 2, 3, 4, 5, 6, 7, 10],
        };
        assert_eq!(first_piece(&split, 6).unwrap(), 7);
        assert_eq!(first_piece(&AlignmentMap::identity(3), 1).unwrap(), 2);
        assert!(first_piece(&split, 8).is_err());
    }

    #[test]
    fn alignment_must_increase() {
        assert!(AlignmentMap { first_rows: vec![1, 1] }.validate(3).is_err());
        assert!(AlignmentMap { first_rows: vec![1, 4] }.validate(3).is_err());
        assert!(AlignmentMap { first_rows: vec![0] }.validate(3).is_err());
        assert!(AlignmentMap { first_rows: vec![1, 3] }.validate(3).is_ok());
    }

    #[test]
    fn pseudo_embed_examples() {
        let a = pseudo_embed("r", "Great sound here", 8, 7).unwrap();
        let b = pseudo_embed("r", "Great sound here", 8, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sequence.rows, 5);
        assert_eq!(a.alignment, AlignmentMap::identity(3));

        let empty = pseudo_embed("r", "   ", 8, 7).unwrap();
        assert_eq!((empty.sequence.rows, empty.sequence.dim), (2, 8));

        let c = pseudo_embed("r", "great noise here", 8, 7).unwrap();
        let differing: Vec<usize> = (0..5).filter(|&i| a.sequence.row(i) != c.sequence.row(i)).collect();
        assert_eq!(differing, vec![2]);

        let d = pseudo_embed("r", "Great sound here", 8, 8).unwrap();
        assert_ne!(a, d);
        assert!(pseudo_embed("r", "x", 0, 1).is_err());
    }

    #[test]
    fn truncation_keeps_markers_and_surviving_words() {
        let full = pseudo_embed("r", "a b c d e", 3, 2).unwrap();
        let mut cut = full.clone();
        assert!(truncate(&mut cut, 3));
        assert_eq!(cut.sequence.rows, 5);
        assert_eq!(cut.alignment, AlignmentMap::identity(3));
        assert_eq!(cut.sequence.row(0), full.sequence.row(0));
        assert_eq!(cut.sequence.row(3), full.sequence.row(3));
        assert_eq!(cut.sequence.row(4), full.sequence.row(6));
        cut.alignment.validate(cut.sequence.subtoken_count()).unwrap();
        assert!(!truncate(&mut cut, 3));

        let mut split = full.clone();
        split.alignment = AlignmentMap { first_rows: vec![1, 3, 5] };
        truncate(&mut split, 3);
        assert_eq!(split.alignment.first_rows, vec![1, 3]);
    }

    #[test]
    fn pseudo_embed_entries_centered() {
        let text: String = (0..200).map(|i| format!("w{} ", i % 37)).collect();
        let e = pseudo_embed("r", &text, 50, 3).unwrap();
        let sample = &e.sequence.values[..10_000];
        assert!(sample.iter().all(|x| (-1.0..=1.0).contains(x)));
        let mean = sample.iter().map(|&x| f64::from(x)).sum::<f64>() / sample.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    proptest! {
        #[test]
        fn store_round_trip_is_byte_identical(
            texts in prop::collection::vec("[a-z ]{0,30}", 1..5),
            dim in 1usize..6,
            seed in any::<u64>(),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let reviews: Vec<_> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| pseudo_embed(&format!("r{i}"), t, dim, seed).unwrap())
                .collect();
            write_store(dir.path().join("a"), &reviews).unwrap();
            let store = EmbeddingStore::open(dir.path().join("a")).unwrap();
            let back: Vec<_> = store.review_ids().iter().map(|id| store.get(id).unwrap()).collect();
            write_store(dir.path().join("b"), &back).unwrap();
            for f in [BLOB_FILE, INDEX_FILE, CHECKSUM_FILE] {
                prop_assert_eq!(
                    fs::read(dir.path().join("a").join(f)).unwrap(),
                    fs::read(dir.path().join("b").join(f)).unwrap()
                );
            }
            for r in &back {
                prop_assert!(r.sequence.values.iter().all(|x| (-1.0..=1.0).contains(x)));
                r.alignment.validate(r.sequence.subtoken_count()).unwrap();
            }
        }
    }
}

//! Review corpora: JSONL ingestion, sparsity filtering, seeded splits and
//! summary statistics. Dependency parses live in [`conllu`].

pub mod conllu;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conllu::{load_conllu, parse_conllu, write_conllu, ParsedReview, ParsedSentence, TokenNode, Upos};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRecord {
    pub review_id: String,
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub text: String,
}

impl ReviewRecord {
    /// Number of whitespace-separated words in the review text.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.review_id.is_empty() {
            return Err("empty review_id".into());
        }
        if !self.rating.is_finite() || !(MIN_RATING..=MAX_RATING).contains(&self.rating) {
            return Err(format!(
                "rating {} outside [{MIN_RATING}, {MAX_RATING}] for review `{}`",
                self.rating, self.review_id
            ));
        }
        if self.text.trim().is_empty() {
            return Err(format!("empty text for review `{}`", self.review_id));
        }
        Ok(())
    }
}

/// R^u and R^t: the review ids written by each user and received by each item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusIndex {
    pub by_user: BTreeMap<String, BTreeSet<String>>,
    pub by_item: BTreeMap<String, BTreeSet<String>>,
}

impl CorpusIndex {
    fn build(records: &[ReviewRecord]) -> Self {
        let mut index = CorpusIndex::default();
        for r in records {
            index
                .by_user
                .entry(r.user_id.clone())
                .or_default()
                .insert(r.review_id.clone());
            index
                .by_item
                .entry(r.item_id.clone())
                .or_default()
                .insert(r.review_id.clone());
        }
        index
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<ReviewRecord>,
    index: CorpusIndex,
    positions: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from records, rejecting duplicates and invalid ratings/texts.
    pub fn from_records(records: Vec<ReviewRecord>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(Error::Invalid)?;
            if positions.insert(r.review_id.clone(), i).is_some() {
                return Err(Error::DuplicateReview(r.review_id.clone()));
            }
        }
        let index = CorpusIndex::build(&records);
        Ok(Corpus {
            records,
            index,
            positions,
        })
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, review_id: &str) -> Option<&ReviewRecord> {
        self.positions.get(review_id).map(|&i| &self.records[i])
    }

    /// Position of a review in file order; later lines count as more recent.
    pub fn position(&self, review_id: &str) -> Option<usize> {
        self.positions.get(review_id).copied()
    }

    pub fn review_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.review_id.as_str())
    }

    /// Keeps the records whose ids are in `keep`, preserving file order.
    pub fn subset(&self, keep: &HashSet<&str>) -> Corpus {
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(r.review_id.as_str()))
            .cloned()
            .collect();
        Corpus::from_records(records).expect("subset of a valid corpus is valid")
    }

    pub fn mean_rating(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.rating).sum::<f64>() / self.records.len() as f64
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReviewRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, lineno, format!("malformed record: {e}")))?;
        record
            .validate()
            .map_err(|m| Error::parse(path, lineno, m))?;
        if !seen.insert(record.review_id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate review_id `{}`", record.review_id),
            ));
        }
        records.push(record);
    }
    Corpus::from_records(records)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in corpus.records() {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Drops short reviews and sparse users/items until both constraints hold at once.
///
/// Removing a user can push an item below `min_reviews` and vice versa, so the
/// passes repeat until nothing changes.
pub fn filter_corpus(corpus: &Corpus, min_reviews: usize, min_words: usize) -> Corpus {
    let mut records: Vec<ReviewRecord> = corpus
        .records()
        .iter()
        .filter(|r| r.word_count() >= min_words)
        .cloned()
        .collect();
    loop {
        let mut per_user: HashMap<&str, usize> = HashMap::new();
        let mut per_item: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            *per_user.entry(&r.user_id).or_default() += 1;
            *per_item.entry(&r.item_id).or_default() += 1;
        }
        let before = records.len();
        let kept: Vec<ReviewRecord> = records
            .iter()
            .filter(|r| per_user[r.user_id.as_str()] >= min_reviews && per_item[r.item_id.as_str()] >= min_reviews)
            .cloned()
            .collect();
        let done = kept.len() == before;
        records = kept;
        if done {
            break;
        }
    }
    Corpus::from_records(records).expect("filtered corpus stays valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded 8:1:1 partition of review ids: ⌊0.8n⌋ / ⌊0.1n⌋ / remainder.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<Split> {
    let n = corpus.len();
    if n < 10 {
        return Err(Error::Invalid(format!(
            "corpus of {n} reviews cannot form non-empty 8:1:1 splits (need at least 10)"
        )));
    }
    let mut ids: Vec<String> = corpus.review_ids().map(str::to_owned).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(Split {
        train: ids,
        validation,
        test,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub reviews: usize,
    pub users: usize,
    pub items: usize,
    pub total_words: usize,
    pub reviews_per_user: f64,
    pub reviews_per_item: f64,
    pub words_per_review: f64,
    /// reviews / (users * items).
    pub density_reviews_over_users_times_items: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    if corpus.is_empty() {
        return StatsReport::default();
    }
    let reviews = corpus.len();
    let users = corpus.index().by_user.len();
    let items = corpus.index().by_item.len();
    let total_words: usize = corpus.records().iter().map(ReviewRecord::word_count).sum();
    StatsReport {
        reviews,
        users,
        items,
        total_words,
        reviews_per_user: reviews as f64 / users as f64,
        reviews_per_item: reviews as f64 / items as f64,
        words_per_review: total_words as f64 / reviews as f64,
        density_reviews_over_users_times_items: reviews as f64 / (users as f64 * items as f64),
    }
}

//! Sentiment term set induction.
//!
//! Three sources are fused into one vocabulary: PMI polarity against seed
//! words over sliding context windows, an externally produced term list, and
//! an opinion lexicon.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParsedReview, Upos};
use crate::error::{Error, Result};

/// Value returned by [`pmi`] when two words never share a window.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Window membership counts over intra-sentence sliding windows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceCounts {
    pub window_size: usize,
    pub total_windows: u64,
    pub single: HashMap<String, u64>,
    /// Keyed by the lexicographically ordered pair of distinct words.
    pub joint: HashMap<(String, String), u64>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl CooccurrenceCounts {
    pub fn new(window_size: usize) -> Self {
        CooccurrenceCounts {
            window_size,
            ..Default::default()
        }
    }

    /// Counts the windows of one sentence (already lowercased words).
    pub fn add_sentence(&mut self, words: &[String]) {
        if words.is_empty() {
            return;
        }
        let w = self.window_size.min(words.len());
        for window in words.windows(w) {
            let members: BTreeSet<&str> = window.iter().map(String::as_str).collect();
            self.total_windows += 1;
            for m in &members {
                *self.single.entry((*m).to_owned()).or_default() += 1;
            }
            let members: Vec<&str> = members.into_iter().collect();
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    *self.joint.entry(pair_key(a, b)).or_default() += 1;
                }
            }
        }
    }

    /// Adds another shard's counts. Addition is commutative, so shard order is irrelevant.
    pub fn merge(&mut self, other: &CooccurrenceCounts) {
        assert_eq!(self.window_size, other.window_size, "merging counts with different windows");
        self.total_windows += other.total_windows;
        for (w, c) in &other.single {
            *self.single.entry(w.clone()).or_default() += c;
        }
        for (k, c) in &other.joint {
            *self.joint.entry(k.clone()).or_default() += c;
        }
    }

    pub fn single_count(&self, w: &str) -> u64 {
        self.single.get(w).copied().unwrap_or(0)
    }

    pub fn joint_count(&self, w1: &str, w2: &str) -> u64 {
        if w1 == w2 {
            return self.single_count(w1);
        }
        self.joint.get(&pair_key(w1, w2)).copied().unwrap_or(0)
    }
}

fn sentence_words(review: &ParsedReview) -> impl Iterator<Item = Vec<String>> + '_ {
    review
        .sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.form.to_lowercase()).collect())
}

pub fn count_contexts<'a>(
    reviews: impl IntoIterator<Item = &'a ParsedReview>,
    window_size: usize,
) -> Result<CooccurrenceCounts> {
    if window_size < 2 {
        return Err(Error::Invalid(format!("window size {window_size} < 2")));
    }
    let mut counts = CooccurrenceCounts::new(window_size);
    for review in reviews {
        for words in sentence_words(review) {
            counts.add_sentence(&words);
        }
    }
    Ok(counts)
}

/// Counts shards on scoped threads and merges them; equal to [`count_contexts`].
pub fn count_contexts_parallel(
    reviews: &[&ParsedReview],
    window_size: usize,
    shards: usize,
) -> Result<CooccurrenceCounts> {
    if window_size < 2 {
        return Err(Error::Invalid(format!("window size {window_size} < 2")));
    }
    let shards = shards.max(1);
    let chunk = reviews.len().div_ceil(shards).max(1);
    let parts: Vec<Result<CooccurrenceCounts>> = std::thread::scope(|scope| {
        let handles: Vec<_> = reviews
            .chunks(chunk)
            .map(|part| scope.spawn(move || count_contexts(part.iter().copied(), window_size)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("counting thread panicked")).collect()
    });
    let mut total = CooccurrenceCounts::new(window_size);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmiOptions {
    /// Add-one smoothing of joint and marginal window counts.
    pub smoothing: bool,
}

/// Natural-log PMI from window counts; [`NEG_INF`] when the words never co-occur.
pub fn pmi(counts: &CooccurrenceCounts, w1: &str, w2: &str) -> Result<f64> {
    pmi_with(counts, w1, w2, PmiOptions::default())
}

pub fn pmi_with(counts: &CooccurrenceCounts, w1: &str, w2: &str, opts: PmiOptions) -> Result<f64> {
    let s1 = counts.single_count(w1);
    if s1 == 0 {
        return Err(Error::UnseenWord(w1.to_owned()));
    }
    let s2 = counts.single_count(w2);
    if s2 == 0 {
        return Err(Error::UnseenWord(w2.to_owned()));
    }
    let joint = counts.joint_count(w1, w2);
    let total = counts.total_windows;
    if opts.smoothing {
        let num = (joint + 1) as f64 * (total + 1) as f64;
        let den = (s1 + 1) as f64 * (s2 + 1) as f64;
        return Ok((num / den).ln());
    }
    if joint == 0 {
        return Ok(NEG_INF);
    }
    Ok(((joint as f64 * total as f64) / (s1 as f64 * s2 as f64)).ln())
}

/// Positive and negative seed words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl SeedSet {
    pub fn new(
        positive: impl IntoIterator<Item = impl Into<String>>,
        negative: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        let positive: BTreeSet<String> = positive.into_iter().map(Into::into).collect();
        let negative: BTreeSet<String> = negative.into_iter().map(Into::into).collect();
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::Invalid("seed sets must both be non-empty".into()));
        }
        if let Some(w) = positive.intersection(&negative).next() {
            return Err(Error::Invalid(format!("seed `{w}` is both positive and negative")));
        }
        Ok(SeedSet { positive, negative })
    }

    /// Reads the two-section `[positive]` / `[negative]` seed file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        let mut section: Option<bool> = None;
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[positive]" => section = Some(true),
                "[negative]" => section = Some(false),
                word => match section {
                    Some(true) => positive.push(word.to_lowercase()),
                    Some(false) => negative.push(word.to_lowercase()),
                    None => return Err(Error::parse(path, i + 1, "seed word before any section header")),
                },
            }
        }
        SeedSet::new(positive, negative)
    }
}

/// Sum of PMI to positive seeds minus sum of PMI to negative seeds.
///
/// Seeds absent from the counts are skipped; a [`NEG_INF`] PMI adds nothing.
pub fn polarity(counts: &CooccurrenceCounts, word: &str, seeds: &SeedSet) -> Result<f64> {
    polarity_with(counts, word, seeds, PmiOptions::default())
}

pub fn polarity_with(counts: &CooccurrenceCounts, word: &str, seeds: &SeedSet, opts: PmiOptions) -> Result<f64> {
    if counts.single_count(word) == 0 {
        return Err(Error::UnseenWord(word.to_owned()));
    }
    let side = |set: &BTreeSet<String>| -> Result<f64> {
        let mut sum = 0.0;
        for s in set {
            if counts.single_count(s) == 0 {
                warn!("seed `{s}` not observed in corpus; skipped");
                continue;
            }
            let v = pmi_with(counts, word, s, opts)?;
            if v.is_finite() {
                sum += v;
            }
        }
        Ok(sum)
    };
    Ok(side(&seeds.positive)? - side(&seeds.negative)?)
}

/// Lowercased lemmas of adjectives adjacent to a NOUN, ADV or VERB in the same sentence.
pub fn candidate_terms<'a>(reviews: impl IntoIterator<Item = &'a ParsedReview>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let slot = |u: Upos| matches!(u, Upos::Noun | Upos::Adv | Upos::Verb);
    for review in reviews {
        for s in &review.sentences {
            for (i, t) in s.tokens.iter().enumerate() {
                if t.upos != Upos::Adj {
                    continue;
                }
                let prev = i.checked_sub(1).map(|j| s.tokens[j].upos);
                let next = s.tokens.get(i + 1).map(|n| n.upos);
                if prev.is_some_and(slot) || next.is_some_and(slot) {
                    out.insert(t.lemma.to_lowercase());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Pmi,
    Nn,
    Lex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermInfo {
    pub sources: BTreeSet<Source>,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentimentTermSet {
    terms: BTreeMap<String, TermInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermLine {
    word: String,
    polarity: Polarity,
    sources: Vec<Source>,
}

impl SentimentTermSet {
    pub fn single_source(source: Source, entries: impl IntoIterator<Item = (String, Polarity)>) -> Self {
        let terms = entries
            .into_iter()
            .map(|(w, polarity)| {
                (
                    w,
                    TermInfo {
                        sources: BTreeSet::from([source]),
                        polarity,
                    },
                )
            })
            .collect();
        SentimentTermSet { terms }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.terms.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&TermInfo> {
        self.terms.get(word)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TermInfo)> {
        self.terms.iter()
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.terms.keys().map(String::as_str).collect()
    }

    /// Number of terms for every non-empty combination of sources, keyed by
    /// the sorted source list.
    pub fn venn_regions(&self) -> BTreeMap<Vec<Source>, usize> {
        let mut regions = BTreeMap::new();
        for info in self.terms.values() {
            *regions
                .entry(info.sources.iter().copied().collect::<Vec<_>>())
                .or_default() += 1;
        }
        regions
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (word, info) in &self.terms {
            let line = TermLine {
                word: word.clone(),
                polarity: info.polarity,
                sources: info.sources.iter().copied().collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("term line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut terms = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: TermLine =
                serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if t.sources.is_empty() {
                return Err(Error::parse(path, i + 1, "term without sources"));
            }
            terms.insert(
                t.word,
                TermInfo {
                    sources: t.sources.into_iter().collect(),
                    polarity: t.polarity,
                },
            );
        }
        Ok(SentimentTermSet { terms })
    }
}

/// Up to `q` strongest positive and `q` strongest negative words; zero polarity is dropped.
pub fn top_q_terms(polarities: &BTreeMap<String, f64>, q: usize) -> SentimentTermSet {
    let mut pos: Vec<(&String, f64)> = polarities.iter().filter(|(_, &p)| p > 0.0).map(|(w, &p)| (w, p)).collect();
    let mut neg: Vec<(&String, f64)> = polarities.iter().filter(|(_, &p)| p < 0.0).map(|(w, &p)| (w, p)).collect();
    pos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    neg.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let entries = pos
        .into_iter()
        .take(q)
        .map(|(w, _)| (w.clone(), Polarity::Pos))
        .chain(neg.into_iter().take(q).map(|(w, _)| (w.clone(), Polarity::Neg)));
    SentimentTermSet::single_source(Source::Pmi, entries)
}

/// Candidate polarities followed by the top-q cut: the PMI-sourced term set.
pub fn pmi_terms(
    counts: &CooccurrenceCounts,
    candidates: &BTreeSet<String>,
    seeds: &SeedSet,
    q: usize,
    opts: PmiOptions,
) -> SentimentTermSet {
    let mut polarities = BTreeMap::new();
    for w in candidates {
        match polarity_with(counts, w, seeds, opts) {
            Ok(p) => {
                polarities.insert(w.clone(), p);
            }
            Err(e) => warn!("skipping candidate `{w}`: {e}"),
        }
    }
    top_q_terms(&polarities, q)
}

fn read_lossy(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn lexicon_words(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_lossy(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_lowercase)
        .collect())
}

/// Reads an opinion lexicon split into positive and negative word files.
///
/// Lines starting with `;` are comments. A word listed in both files gets
/// [`Polarity::Unknown`].
pub fn load_lexicon(pos_path: impl AsRef<Path>, neg_path: impl AsRef<Path>) -> Result<SentimentTermSet> {
    let pos = lexicon_words(pos_path.as_ref())?;
    let neg = lexicon_words(neg_path.as_ref())?;
    let mut entries = Vec::with_capacity(pos.len() + neg.len());
    for w in pos.union(&neg) {
        let polarity = match (pos.contains(w), neg.contains(w)) {
            (true, true) => {
                warn!("lexicon word `{w}` is listed as both positive and negative");
                Polarity::Unknown
            }
            (true, false) => Polarity::Pos,
            _ => Polarity::Neg,
        };
        entries.push((w.clone(), polarity));
    }
    Ok(SentimentTermSet::single_source(Source::Lex, entries))
}

/// One term per line, taken verbatim (multiword entries included).
pub fn load_nn_terms(path: impl AsRef<Path>) -> Result<SentimentTermSet> {
    let content = read_lossy(path.as_ref())?;
    let entries = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| (l.to_owned(), Polarity::Unknown));
    Ok(SentimentTermSet::single_source(Source::Nn, entries))
}

/// Union of term sets; sources are OR-ed and conflicting polarities become unknown.
pub fn fuse(sets: &[&SentimentTermSet]) -> SentimentTermSet {
    let mut terms: BTreeMap<String, TermInfo> = BTreeMap::new();
    let mut conflicted: BTreeSet<String> = BTreeSet::new();
    for set in sets {
        for (w, info) in &set.terms {
            let entry = terms.entry(w.clone()).or_insert_with(|| TermInfo {
                sources: BTreeSet::new(),
                polarity: Polarity::Unknown,
            });
            entry.sources.extend(info.sources.iter().copied());
            if conflicted.contains(w) || info.polarity == Polarity::Unknown {
                continue;
            }
            match entry.polarity {
                Polarity::Unknown => entry.polarity = info.polarity,
                p if p != info.polarity => {
                    warn!("conflicting polarities for `{w}`; marked unknown");
                    entry.polarity = Polarity::Unknown;
                    conflicted.insert(w.clone());
                }
                _ => {}
            }
        }
    }
    SentimentTermSet { terms }
}

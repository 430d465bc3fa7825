//! Aspect-sentiment pair mining from dependency parses.
//!
//! Candidates come from two dependency patterns: an adjective attached to a
//! noun by `amod`, and a predicate with both an `nsubj` and an `acomp` child.
//! Synonym aspects are merged, then candidates are kept only when the
//! adjective is a known sentiment term and the aspect is frequent enough.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ParsedReview, ParsedSentence, TokenNode, Upos};
use crate::error::{Error, Result};
use crate::sentiterm::SentimentTermSet;
use crate::stats::spearman;

/// Aspect standing for the reviewed item itself.
pub const ITEM_TOKEN: &str = "ItemTok";

pub const DEFAULT_ITEM_PRONOUNS: [&str; 6] = ["it", "they", "this", "these", "that", "those"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    Amod,
    NsubjAcomp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ASPairCandidate {
    pub review_id: String,
    pub sentence_index: usize,
    /// 1-based token indices of the aspect phrase; empty for [`ITEM_TOKEN`].
    pub aspect_tokens: Vec<usize>,
    pub aspect_lemma: String,
    pub sentiment_token: usize,
    pub sentiment_lemma: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub item_pronouns: Vec<String>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            item_pronouns: DEFAULT_ITEM_PRONOUNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn transitive_conj<'a>(s: &'a ParsedSentence, root: &'a TokenNode, keep: impl Fn(&TokenNode) -> bool) -> Vec<&'a TokenNode> {
    let mut out = vec![root];
    let mut stack = vec![root.index];
    while let Some(head) = stack.pop() {
        for c in s.children_with(head, "conj") {
            if keep(c) && !out.iter().any(|t| t.index == c.index) {
                out.push(c);
                stack.push(c.index);
            }
        }
    }
    out
}

/// Noun prefixed by its `compound` dependents in surface order.
fn compound_phrase(s: &ParsedSentence, noun: &TokenNode) -> (Vec<usize>, String) {
    let mut idx: Vec<usize> = s.children_with(noun.index, "compound").map(|t| t.index).collect();
    idx.push(noun.index);
    idx.sort_unstable();
    let lemma = idx
        .iter()
        .map(|&i| s.token(i).expect("child index valid").lemma.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ");
    (idx, lemma)
}

fn is_adj(t: &TokenNode) -> bool {
    t.upos == Upos::Adj
}

fn is_noun(t: &TokenNode) -> bool {
    t.upos.is_nominal()
}

/// Candidates of one review in canonical (sentence, sentiment, aspect) order.
pub fn extract_candidates(review: &ParsedReview, opts: &ExtractOptions) -> Vec<ASPairCandidate> {
    let mut out = Vec::new();
    for (si, s) in review.sentences.iter().enumerate() {
        out.extend(extract_sentence(&review.review_id, si, s, opts));
    }
    out
}

fn extract_sentence(review_id: &str, si: usize, s: &ParsedSentence, opts: &ExtractOptions) -> Vec<ASPairCandidate> {
    let mut found: BTreeMap<(usize, Vec<usize>, String), Rule> = BTreeMap::new();
    let mut emit = |aspect: (Vec<usize>, String), adj: &TokenNode, rule: Rule| {
        found.entry((adj.index, aspect.0, aspect.1)).or_insert(rule);
    };

    for a in s.tokens.iter().filter(|t| t.deprel == "amod" && is_adj(t)) {
        let Some(noun) = s.token(a.head).filter(|n| is_noun(n)) else {
            continue;
        };
        for adj in transitive_conj(s, a, is_adj) {
            for n in transitive_conj(s, noun, is_noun) {
                emit(compound_phrase(s, n), adj, Rule::Amod);
            }
        }
    }

    let subject_of = |pred: &TokenNode| s.children_with(pred.index, "nsubj").next();
    for pred in &s.tokens {
        let mut adjs: Vec<&TokenNode> = s
            .children_with(pred.index, "acomp")
            .filter(|t| is_adj(t))
            .collect();
        // Copula-headed clause: the adjective itself carries nsubj and cop.
        if is_adj(pred) && s.children_with(pred.index, "cop").any(|c| c.lemma.eq_ignore_ascii_case("be")) {
            adjs.push(pred);
        }
        if adjs.is_empty() {
            continue;
        }
        let subj = subject_of(pred).or_else(|| {
            (pred.deprel == "conj")
                .then(|| s.token(pred.head))
                .flatten()
                .and_then(subject_of)
        });
        let Some(subj) = subj else {
            continue;
        };
        let aspects: Vec<(Vec<usize>, String)> = if is_noun(subj) {
            transitive_conj(s, subj, is_noun)
                .into_iter()
                .map(|n| compound_phrase(s, n))
                .collect()
        } else if subj.upos == Upos::Pron
            && opts.item_pronouns.iter().any(|p| p.eq_ignore_ascii_case(&subj.form))
        {
            vec![(Vec::new(), ITEM_TOKEN.to_owned())]
        } else {
            continue;
        };
        for a in adjs {
            for adj in transitive_conj(s, a, is_adj) {
                for aspect in &aspects {
                    emit(aspect.clone(), adj, Rule::NsubjAcomp);
                }
            }
        }
    }

    found
        .into_iter()
        .map(|((sent_tok, aspect_tokens, aspect_lemma), rule)| ASPairCandidate {
            review_id: review_id.to_owned(),
            sentence_index: si,
            aspect_tokens,
            aspect_lemma,
            sentiment_token: sent_tok,
            sentiment_lemma: s.token(sent_tok).expect("emitted index valid").lemma.to_lowercase(),
            rule,
        })
        .collect()
}

/// Groups of synonymous aspect lemmas, one group per synset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynsetTable {
    pub groups: Vec<BTreeSet<String>>,
}

impl SynsetTable {
    pub fn new(groups: Vec<BTreeSet<String>>) -> Result<Self> {
        if groups.iter().any(BTreeSet::is_empty) {
            return Err(Error::Invalid("synset group without members".into()));
        }
        Ok(SynsetTable { groups })
    }

    /// One group per line, tab-separated lemmas. Blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let groups = content
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split('\t')
                    .map(|w| w.trim().to_lowercase())
                    .filter(|w| !w.is_empty())
                    .collect::<BTreeSet<_>>()
            })
            .collect();
        SynsetTable::new(groups)
    }

    /// Lemma → representative of its synonym class.
    ///
    /// Classes are the transitive closure of sharing a group. The
    /// representative belongs to the most groups; ties go to the
    /// lexicographically smallest lemma.
    pub fn canonical_map(&self) -> HashMap<String, String> {
        let mut membership: BTreeMap<&str, usize> = BTreeMap::new();
        for g in &self.groups {
            for w in g {
                *membership.entry(w.as_str()).or_default() += 1;
            }
        }
        let ids: HashMap<&str, usize> = membership.keys().enumerate().map(|(i, w)| (*w, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for g in &self.groups {
            let mut it = g.iter().map(|w| ids[w.as_str()]);
            if let Some(first) = it.next() {
                for other in it {
                    let (a, b) = (find(&mut parent, first), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut best: HashMap<usize, (&str, usize)> = HashMap::new();
        for (&w, &count) in &membership {
            let root = find(&mut parent, ids[w]);
            let entry = best.entry(root).or_insert((w, count));
            // BTreeMap iteration is lexicographic, so only a strictly larger count replaces.
            if count > entry.1 {
                *entry = (w, count);
            }
        }
        membership
            .keys()
            .map(|&w| {
                let root = find(&mut parent, ids[w]);
                (w.to_owned(), best[&root].0.to_owned())
            })
            .collect()
    }
}

/// Rewrites aspect lemmas to their synonym-class representatives. [`ITEM_TOKEN`] is never merged.
pub fn merge_synonym_aspects(candidates: &[ASPairCandidate], synsets: &SynsetTable) -> Vec<ASPairCandidate> {
    let map = synsets.canonical_map();
    candidates
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if c.aspect_lemma != ITEM_TOKEN {
                if let Some(rep) = map.get(&c.aspect_lemma) {
                    c.aspect_lemma = rep.clone();
                }
            }
            c
        })
        .collect()
}

/// Surviving aspects, numbered 1..=k by descending candidate frequency.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectVocabulary {
    /// (lemma, frequency) in id order; id = position + 1.
    pub aspects: Vec<(String, u64)>,
}

impl AspectVocabulary {
    pub fn len(&self) -> usize {
        self.aspects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aspects.is_empty()
    }

    pub fn id_of(&self, lemma: &str) -> Option<usize> {
        self.aspects.iter().position(|(a, _)| a == lemma).map(|i| i + 1)
    }

    pub fn lemma(&self, id: usize) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.aspects.get(i)).map(|(a, _)| a.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ASPair {
    pub review_id: String,
    pub sentence_index: usize,
    pub aspect: String,
    pub aspect_id: usize,
    pub sentiment: String,
    pub rule: Rule,
    pub aspect_tokens: Vec<usize>,
    pub sentiment_token: usize,
    /// Whitespace-word position of the sentiment word in the review text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_position: Option<usize>,
}

/// Keeps candidates whose sentiment is in `st` and whose aspect occurs more than `c` times.
///
/// Frequencies count all (merged) candidates, before the sentiment filter.
pub fn filter_pairs(candidates: &[ASPairCandidate], st: &SentimentTermSet, c: u64) -> (Vec<ASPair>, AspectVocabulary) {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for cand in candidates {
        *freq.entry(cand.aspect_lemma.as_str()).or_default() += 1;
    }
    let kept: Vec<&ASPairCandidate> = candidates
        .iter()
        .filter(|cand| st.contains(&cand.sentiment_lemma) && freq[cand.aspect_lemma.as_str()] > c)
        .collect();
    let mut aspects: Vec<(String, u64)> = kept
        .iter()
        .map(|cand| cand.aspect_lemma.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|a| (a.to_owned(), freq[a]))
        .collect();
    aspects.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let vocab = AspectVocabulary { aspects };
    let ids: HashMap<&str, usize> = vocab
        .aspects
        .iter()
        .enumerate()
        .map(|(i, (a, _))| (a.as_str(), i + 1))
        .collect();
    let pairs = kept
        .into_iter()
        .map(|cand| ASPair {
            review_id: cand.review_id.clone(),
            sentence_index: cand.sentence_index,
            aspect: cand.aspect_lemma.clone(),
            aspect_id: ids[cand.aspect_lemma.as_str()],
            sentiment: cand.sentiment_lemma.clone(),
            rule: cand.rule,
            aspect_tokens: cand.aspect_tokens.clone(),
            sentiment_token: cand.sentiment_token,
            word_position: None,
        })
        .collect();
    (pairs, vocab)
}

/// Maps every parse token to the whitespace word of the review text that contains it.
///
/// Tokens are located left to right by their surface form; a token whose form
/// cannot be found maps to `None`.
pub fn token_word_positions(text: &str, review: &ParsedReview) -> Vec<Vec<Option<usize>>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    let mut cursor = 0usize;
    review
        .sentences
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| {
                    let found = text[cursor..].find(t.form.as_str())?;
                    let offset = cursor + found;
                    cursor = offset + t.form.len();
                    spans.iter().position(|&(a, b)| a <= offset && offset < b)
                })
                .collect()
        })
        .collect()
}

/// Fills `word_position` from the review texts; pairs that cannot be anchored are dropped.
pub fn resolve_word_positions(
    pairs: Vec<ASPair>,
    parses: &BTreeMap<String, ParsedReview>,
    corpus: &Corpus,
) -> Vec<ASPair> {
    let mut cache: HashMap<String, Vec<Vec<Option<usize>>>> = HashMap::new();
    pairs
        .into_iter()
        .filter_map(|mut p| {
            let positions = match cache.get(&p.review_id) {
                Some(v) => v,
                None => {
                    let text = corpus.get(&p.review_id).map(|r| r.text.as_str());
                    let parse = parses.get(&p.review_id);
                    let v = match (text, parse) {
                        (Some(t), Some(parse)) => token_word_positions(t, parse),
                        _ => Vec::new(),
                    };
                    cache.entry(p.review_id.clone()).or_insert(v)
                }
            };
            let pos = positions
                .get(p.sentence_index)
                .and_then(|s| s.get(p.sentiment_token - 1))
                .copied()
                .flatten();
            match pos {
                Some(w) => {
                    p.word_position = Some(w);
                    Some(p)
                }
                None => {
                    warn!(
                        "dropping pair ({}, {}) in review {}: sentiment token not found in text",
                        p.aspect, p.sentiment, p.review_id
                    );
                    None
                }
            }
        })
        .collect()
}

/// Renumbers aspect ids 1..k after pairs were dropped, keeping the vocabulary order.
pub fn compact_aspect_ids(pairs: &mut [ASPair], vocabulary: &AspectVocabulary) -> AspectVocabulary {
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for p in pairs.iter() {
        *counts.entry(p.aspect_id).or_default() += 1;
    }
    let mut remap = HashMap::new();
    let mut aspects = Vec::new();
    for (i, (lemma, _)) in vocabulary.aspects.iter().enumerate() {
        if let Some(&n) = counts.get(&(i + 1)) {
            aspects.push((lemma.clone(), n));
            remap.insert(i + 1, aspects.len());
        }
    }
    for p in pairs.iter_mut() {
        p.aspect_id = remap[&p.aspect_id];
    }
    AspectVocabulary { aspects }
}

pub fn write_pairs_jsonl(pairs: &[ASPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn load_pairs_jsonl(path: impl AsRef<Path>) -> Result<Vec<ASPair>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Reconstructs the vocabulary (id order) from a pair list.
pub fn vocabulary_from_pairs(pairs: &[ASPair]) -> Result<AspectVocabulary> {
    let mut by_id: BTreeMap<usize, (String, u64)> = BTreeMap::new();
    for p in pairs {
        let e = by_id.entry(p.aspect_id).or_insert_with(|| (p.aspect.clone(), 0));
        if e.0 != p.aspect {
            return Err(Error::Invalid(format!(
                "aspect id {} used for both `{}` and `{}`",
                p.aspect_id, e.0, p.aspect
            )));
        }
        e.1 += 1;
    }
    if by_id.keys().copied().ne(1..=by_id.len()) {
        return Err(Error::Invalid("aspect ids are not contiguous from 1".into()));
    }
    Ok(AspectVocabulary {
        aspects: by_id.into_values().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZipfRow {
    pub rank: usize,
    pub frequency: u64,
    pub aspect: String,
    pub sentiment: String,
}

/// Rank/frequency table over distinct (aspect, sentiment) pairs.
pub fn zipf_report(pairs: &[ASPair]) -> Result<Vec<ZipfRow>> {
    let mut freq: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for p in pairs {
        *freq.entry((p.aspect.as_str(), p.sentiment.as_str())).or_default() += 1;
    }
    if freq.len() < 2 {
        return Err(Error::Invalid(format!(
            "zipf report needs at least 2 distinct pairs, found {}",
            freq.len()
        )));
    }
    let mut rows: Vec<((&str, &str), u64)> = freq.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, ((a, s), f))| ZipfRow {
            rank: i + 1,
            frequency: f,
            aspect: a.to_owned(),
            sentiment: s.to_owned(),
        })
        .collect())
}

/// Spearman correlation between log rank and log frequency of a Zipf table.
pub fn zipf_spearman(rows: &[ZipfRow]) -> f64 {
    let x: Vec<f64> = rows.iter().map(|r| (r.rank as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| (r.frequency as f64).ln()).collect();
    spearman(&x, &y)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AsPairStats {
    pub pairs_per_review: f64,
    pub aspects_per_user: f64,
    pub aspects_per_item: f64,
    pub num_aspects: usize,
    pub num_sentiments: usize,
}

pub fn aspair_stats(pairs: &[ASPair], corpus: &Corpus) -> AsPairStats {
    if pairs.is_empty() || corpus.is_empty() {
        return AsPairStats::default();
    }
    let in_corpus: Vec<&ASPair> = pairs.iter().filter(|p| corpus.get(&p.review_id).is_some()).collect();
    let mut per_review: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for p in &in_corpus {
        per_review.entry(p.review_id.as_str()).or_default().insert(p.aspect.as_str());
    }
    let mean_distinct = |groups: &BTreeMap<String, BTreeSet<String>>| -> f64 {
        let total: usize = groups
            .values()
            .map(|reviews| {
                reviews
                    .iter()
                    .filter_map(|r| per_review.get(r.as_str()))
                    .flatten()
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .sum();
        total as f64 / groups.len() as f64
    };
    AsPairStats {
        pairs_per_review: in_corpus.len() as f64 / corpus.len() as f64,
        aspects_per_user: mean_distinct(&corpus.index().by_user),
        aspects_per_item: mean_distinct(&corpus.index().by_item),
        num_aspects: in_corpus.iter().map(|p| p.aspect.as_str()).collect::<BTreeSet<_>>().len(),
        num_sentiments: in_corpus.iter().map(|p| p.sentiment.as_str()).collect::<BTreeSet<_>>().len(),
    }
}

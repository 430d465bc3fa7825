//! Synthetic corpus with known user attention and item properties.
//!
//! Each user attends to a few aspects with positive weights and each item has
//! a sign per aspect. A rating is `3 + b_u + b_t + Σ_a w_ua·s_ta + noise`,
//! clipped to the rating range. Every review states, for each aspect its
//! author attends to, a sentiment word whose polarity is the item's sign.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aspair::{filter_pairs, ASPair, ASPairCandidate, AspectVocabulary, Rule};
use crate::corpus::{Corpus, ReviewRecord, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};
use crate::sentiterm::{Polarity, SentimentTermSet, Source};

const ASPECT_WORDS: &[&str] = &[
    "battery", "screen", "price", "sound", "design", "service", "camera", "keyboard", "speaker", "cable",
];
const POSITIVE_WORDS: &[&str] = &["great", "excellent", "amazing", "superb", "wonderful"];
const NEGATIVE_WORDS: &[&str] = &["awful", "terrible", "poor", "horrible", "disappointing"];
const FILLER_WORDS: &[&str] = &["i", "bought", "one", "last", "week", "honestly", "overall", "so", "well", "then"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub aspects: usize,
    pub reviews_per_user: usize,
    /// Inclusive range of how many aspects a user attends to.
    pub attended_min: usize,
    pub attended_max: usize,
    /// Range of a single attention weight.
    pub weight_low: f64,
    pub weight_high: f64,
    pub bias_sd: f64,
    pub noise_sd: f64,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 300,
            items: 200,
            aspects: 6,
            reviews_per_user: 12,
            attended_min: 2,
            attended_max: 3,
            weight_low: 0.4,
            weight_high: 0.8,
            bias_sd: 0.3,
            noise_sd: 0.3,
            filler_words: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    pub pairs: Vec<ASPair>,
    pub aspects: AspectVocabulary,
    pub lexicon: SentimentTermSet,
    /// Per user, attention weight by aspect lemma (zero when not attended).
    pub attention: HashMap<String, HashMap<String, f64>>,
    /// Per item, property sign (±1) by aspect lemma.
    pub properties: HashMap<String, HashMap<String, f64>>,
}

impl PlantedCorpus {
    /// `w_ua·s_ta` for an attended aspect, `None` otherwise.
    pub fn planted_effect(&self, user: &str, item: &str, aspect: &str) -> Option<f64> {
        let w = *self.attention.get(user)?.get(aspect)?;
        if w <= 0.0 {
            return None;
        }
        Some(w * self.properties.get(item)?.get(aspect)?)
    }
}

pub fn generate(cfg: &PlantedConfig) -> Result<PlantedCorpus> {
    if cfg.aspects == 0 || cfg.aspects > ASPECT_WORDS.len() {
        return Err(Error::Invalid(format!("aspect count must be in 1..={}", ASPECT_WORDS.len())));
    }
    if cfg.attended_min == 0 || cfg.attended_min > cfg.attended_max || cfg.attended_max > cfg.aspects {
        return Err(Error::Invalid("need 1 ≤ attended_min ≤ attended_max ≤ aspects".into()));
    }
    if cfg.reviews_per_user > cfg.items || cfg.users == 0 {
        return Err(Error::Invalid("need at least one user and reviews_per_user ≤ items".into()));
    }
    if !(cfg.weight_low > 0.0 && cfg.weight_low <= cfg.weight_high) {
        return Err(Error::Invalid("need 0 < weight_low ≤ weight_high".into()));
    }
    let gauss = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Invalid(e.to_string()));
    let (bias, noise) = (gauss(cfg.bias_sd)?, gauss(cfg.noise_sd)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let aspects = &ASPECT_WORDS[..cfg.aspects];

    let users: Vec<String> = (0..cfg.users).map(|i| format!("u{i:04}")).collect();
    let items: Vec<String> = (0..cfg.items).map(|i| format!("t{i:04}")).collect();
    let mut attention = HashMap::new();
    let mut user_bias = HashMap::new();
    for u in &users {
        let m = rng.gen_range(cfg.attended_min..=cfg.attended_max);
        let chosen: Vec<&str> = aspects.choose_multiple(&mut rng, m).copied().collect();
        let weights: HashMap<String, f64> = aspects
            .iter()
            .map(|a| {
                let w = if chosen.contains(a) { rng.gen_range(cfg.weight_low..=cfg.weight_high) } else { 0.0 };
                (a.to_string(), w)
            })
            .collect();
        attention.insert(u.clone(), weights);
        user_bias.insert(u.clone(), bias.sample(&mut rng));
    }
    let mut properties = HashMap::new();
    let mut item_bias = HashMap::new();
    for t in &items {
        let signs = aspects
            .iter()
            .map(|a| (a.to_string(), if rng.gen_bool(0.5) { 1.0 } else { -1.0 }))
            .collect::<HashMap<_, _>>();
        properties.insert(t.clone(), signs);
        item_bias.insert(t.clone(), bias.sample(&mut rng));
    }

    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(cfg.users * cfg.reviews_per_user);
    for u in 0..cfg.users {
        for t in rand::seq::index::sample(&mut rng, cfg.items, cfg.reviews_per_user) {
            edges.push((u, t));
        }
    }
    edges.shuffle(&mut rng);

    let mut records = Vec::with_capacity(edges.len());
    let mut candidates = Vec::new();
    for (n, &(ui, ti)) in edges.iter().enumerate() {
        let (u, t) = (&users[ui], &items[ti]);
        let review_id = format!("r{n:05}");
        let mut words: Vec<&str> = (0..cfg.filler_words)
            .map(|_| *FILLER_WORDS.choose(&mut rng).expect("non-empty"))
            .collect();
        let mut attended: Vec<&str> = aspects.iter().copied().filter(|a| attention[u][*a] > 0.0).collect();
        attended.shuffle(&mut rng);
        let mut interaction = 0.0;
        for (j, a) in attended.iter().enumerate() {
            let sign = properties[t][*a];
            interaction += attention[u][*a] * sign;
            let pool = if sign > 0.0 { POSITIVE_WORDS } else { NEGATIVE_WORDS };
            let adj = *pool.choose(&mut rng).expect("non-empty");
            if j > 0 {
                words.push("and");
            }
            words.extend(["the", a, "is"]);
            let aspect_at = words.len() - 2;
            words.push(adj);
            candidates.push(ASPairCandidate {
                review_id: review_id.clone(),
                sentence_index: 0,
                aspect_tokens: vec![aspect_at + 1],
                aspect_lemma: a.to_string(),
                sentiment_token: words.len(),
                sentiment_lemma: adj.to_string(),
                rule: Rule::NsubjAcomp,
            });
        }
        let rating = 3.0 + user_bias[u] + item_bias[t] + interaction + noise.sample(&mut rng);
        records.push(ReviewRecord {
            review_id,
            user_id: u.clone(),
            item_id: t.clone(),
            rating: rating.clamp(MIN_RATING, MAX_RATING),
            text: words.join(" "),
        });
    }

    let lexicon = SentimentTermSet::single_source(
        Source::Lex,
        POSITIVE_WORDS
            .iter()
            .map(|w| (w.to_string(), Polarity::Pos))
            .chain(NEGATIVE_WORDS.iter().map(|w| (w.to_string(), Polarity::Neg))),
    );
    let (mut pairs, vocabulary) = filter_pairs(&candidates, &lexicon, 0);
    for p in &mut pairs {
        // One sentence, whitespace tokens: token i is word i - 1.
        p.word_position = Some(p.sentiment_token - 1);
    }
    Ok(PlantedCorpus {
        corpus: Corpus::from_records(records)?,
        pairs,
        aspects: vocabulary,
        lexicon,
        attention,
        properties,
    })
}

use crate::aspair::ASPair;
use crate::diffmath::Tensor;
use crate::embed::{first_piece, EmbeddedReview};
use crate::error::{Error, Result};

/// Model-ready view of one review: its token embeddings and the rows that
/// carry sentiment words, tagged by aspect.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewFeatures {
    /// Stable key used to share work between pairs that include the same review.
    pub key: usize,
    pub review_id: String,
    /// `[rows, embed_dim]`, start and end markers included.
    pub tokens: Tensor,
    /// (0-based aspect index, embedding row) per sentiment word.
    pub sentiment_rows: Vec<(usize, usize)>,
}

impl ReviewFeatures {
    /// Resolves each pair's sentiment word to the first subtoken row of that word.
    pub fn new(key: usize, embedded: &EmbeddedReview, pairs: &[&ASPair], num_aspects: usize) -> Result<Self> {
        let seq = &embedded.sequence;
        let mut sentiment_rows = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.review_id != seq.review_id {
                return Err(Error::Invalid(format!(
                    "pair of review `{}` attached to `{}`",
                    p.review_id, seq.review_id
                )));
            }
            if p.aspect_id == 0 || p.aspect_id > num_aspects {
                return Err(Error::Invalid(format!(
                    "aspect id {} outside 1..={num_aspects} in review `{}`",
                    p.aspect_id, p.review_id
                )));
            }
            let pos = p.word_position.ok_or_else(|| {
                Error::Invalid(format!(
                    "pair ({}, {}) in review `{}` has no word position",
                    p.aspect, p.sentiment, p.review_id
                ))
            })?;
            sentiment_rows.push((p.aspect_id - 1, first_piece(&embedded.alignment, pos)?));
        }
        sentiment_rows.sort_unstable();
        let tokens = Tensor::matrix(seq.rows, seq.dim, seq.values.iter().map(|&x| f64::from(x)).collect())?;
        Ok(ReviewFeatures {
            key,
            review_id: seq.review_id.clone(),
            tokens,
            sentiment_rows,
        })
    }

    pub fn mentions(&self, aspect: usize) -> bool {
        self.sentiment_rows.iter().any(|&(a, _)| a == aspect)
    }

    /// `[num_aspects, rows]` matrix counting sentiment words per (aspect, row).
    pub(crate) fn count_matrix(&self, num_aspects: usize) -> Tensor {
        let rows = self.tokens.rows();
        let mut m = Tensor::zeros(&[num_aspects, rows]);
        for &(a, r) in &self.sentiment_rows {
            m.data_mut()[a * rows + r] += 1.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aspair::Rule;
    use crate::embed::pseudo_embed;

    fn pair(aspect_id: usize, pos: Option<usize>) -> ASPair {
        ASPair {
            review_id: "r".into(),
            sentence_index: 0,
            aspect: format!("a{aspect_id}"),
            aspect_id,
            sentiment: "s".into(),
            rule: Rule::Amod,
            aspect_tokens: vec![1],
            sentiment_token: 1,
            word_position: pos,
        }
    }

    #[test]
    fn rows_follow_alignment() {
        let e = pseudo_embed("r", "great sound and great bass", 4, 1).unwrap();
        let p1 = pair(2, Some(0));
        let p2 = pair(1, Some(3));
        let f = ReviewFeatures::new(0, &e, &[&p1, &p2], 2).unwrap();
        assert_eq!(f.sentiment_rows, vec![(0, 4), (1, 1)]);
        let c = f.count_matrix(2);
        assert_eq!(c.at(0, 4), 1.0);
        assert_eq!(c.at(1, 1), 1.0);
        assert!(f.mentions(1) && f.mentions(0));
    }

    #[test]
    fn rejects_bad_pairs() {
        let e = pseudo_embed("r", "great sound", 4, 1).unwrap();
        assert!(ReviewFeatures::new(0, &e, &[&pair(3, Some(0))], 2).is_err());
        assert!(ReviewFeatures::new(0, &e, &[&pair(1, None)], 2).is_err());
        assert!(ReviewFeatures::new(0, &e, &[&pair(1, Some(5))], 2).is_err());
    }
}

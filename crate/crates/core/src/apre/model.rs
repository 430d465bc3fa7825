use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Activation, ModelConfig, Variant, LEAKY_SLOPE};
use super::features::ReviewFeatures;
use crate::diffmath::{checkpoint, AdamState, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Everything besides the weights that a checkpoint needs to rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub variant: Variant,
    /// Aspect lemmas in id order (id = position + 1).
    pub aspects: Vec<String>,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub global_mean: f64,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ExplicitIds {
    user_aspects: ParamId,
    item_aspects: ParamId,
    attention: ParamId,
    head: Mlp,
    gamma: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ImplicitIds {
    conv_w: ParamId,
    conv_b: ParamId,
    attention: ParamId,
    head: Mlp,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    adapt_w: ParamId,
    adapt_b: ParamId,
    user_bias: ParamId,
    item_bias: ParamId,
    explicit: Option<ExplicitIds>,
    implicit: Option<ImplicitIds>,
}

/// Two-channel rating estimator: biases, an implicit review channel and an
/// aspect-wise explicit channel.
#[derive(Debug, Clone)]
pub struct Apre {
    pub meta: ModelMeta,
    pub params: ParamStore,
    ids: Ids,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

/// Parameter names and shapes for a configuration, in registration order.
fn layout(meta: &ModelMeta) -> Vec<(String, Vec<usize>, bool, bool)> {
    let c = &meta.config;
    let k = meta.aspects.len();
    let (df, da, dim) = (c.feature_dim, c.aspect_dim, c.implicit_dim());
    // (name, shape, regularized, is_bias)
    let mut out = vec![
        ("adapt.weight".to_owned(), vec![c.embed_dim, df], true, false),
        ("adapt.bias".to_owned(), vec![df], true, true),
        ("user_bias".to_owned(), vec![meta.users.len()], false, true),
        ("item_bias".to_owned(), vec![meta.items.len()], false, true),
    ];
    let mlp = |prefix: &str, input: usize, hidden: usize| {
        vec![
            (format!("{prefix}.mlp.0.weight"), vec![input, hidden], true, false),
            (format!("{prefix}.mlp.0.bias"), vec![hidden], true, true),
            (format!("{prefix}.mlp.1.weight"), vec![hidden, 1], true, false),
            (format!("{prefix}.mlp.1.bias"), vec![1], true, true),
        ]
    };
    if meta.variant.has_explicit() {
        out.push(("explicit.user_aspects".into(), vec![k, da], true, false));
        out.push(("explicit.item_aspects".into(), vec![k, da], true, false));
        out.push(("explicit.attention".into(), vec![df + da], true, false));
        out.extend(mlp("explicit", 2 * df, c.explicit_hidden));
        out.push(("explicit.gamma".into(), vec![k], true, false));
    }
    if meta.variant.has_implicit() {
        out.push(("implicit.conv.weight".into(), vec![c.conv_channels, df, c.kernel_size], true, false));
        out.push(("implicit.conv.bias".into(), vec![c.conv_channels], true, true));
        out.push(("implicit.attention".into(), vec![dim], true, false));
        out.extend(mlp("implicit", 2 * dim, c.implicit_hidden));
    }
    out
}

impl Apre {
    /// Fresh model. Weights start uniform in ±`init_scale`, layer biases at zero,
    /// and each entity bias at its mean rating minus half the global mean so that
    /// `b_u + b_t` starts at the usual additive baseline.
    pub fn new(
        config: ModelConfig,
        variant: Variant,
        aspects: Vec<String>,
        users: Vec<(String, f64)>,
        items: Vec<(String, f64)>,
        global_mean: f64,
        seed: u64,
    ) -> Result<Self> {
        let meta = ModelMeta {
            config,
            variant,
            aspects,
            users: users.iter().map(|(u, _)| u.clone()).collect(),
            items: items.iter().map(|(t, _)| t.clone()).collect(),
            global_mean,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let s = meta.config.init_scale;
        for (name, shape, regularized, is_bias) in layout(&meta) {
            let value = match name.as_str() {
                "user_bias" => Tensor::vector(users.iter().map(|(_, m)| m - global_mean / 2.0).collect()),
                "item_bias" => Tensor::vector(items.iter().map(|(_, m)| m - global_mean / 2.0).collect()),
                _ if is_bias => Tensor::zeros(&shape),
                _ => Tensor::uniform(&shape, -s, s, &mut rng),
            };
            params.add(&name, value, regularized)?;
        }
        Apre::from_parts(meta, params)
    }

    /// Rebuilds a model from metadata and a parameter store, checking names and shapes.
    pub fn from_parts(meta: ModelMeta, params: ParamStore) -> Result<Self> {
        meta.config.validate()?;
        if meta.variant.has_explicit() && meta.aspects.is_empty() {
            return Err(Error::Invalid("the explicit channel needs at least one aspect".into()));
        }
        if !meta.global_mean.is_finite() {
            return Err(Error::NonFinite("global mean rating".into()));
        }
        let expected = layout(&meta);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this configuration, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _, _) in &expected {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let mlp = |prefix: &str| Mlp {
            w1: id(&format!("{prefix}.mlp.0.weight")),
            b1: id(&format!("{prefix}.mlp.0.bias")),
            w2: id(&format!("{prefix}.mlp.1.weight")),
            b2: id(&format!("{prefix}.mlp.1.bias")),
        };
        let ids = Ids {
            adapt_w: id("adapt.weight"),
            adapt_b: id("adapt.bias"),
            user_bias: id("user_bias"),
            item_bias: id("item_bias"),
            explicit: meta.variant.has_explicit().then(|| ExplicitIds {
                user_aspects: id("explicit.user_aspects"),
                item_aspects: id("explicit.item_aspects"),
                attention: id("explicit.attention"),
                head: mlp("explicit"),
                gamma: id("explicit.gamma"),
            }),
            implicit: meta.variant.has_implicit().then(|| ImplicitIds {
                conv_w: id("implicit.conv.weight"),
                conv_b: id("implicit.conv.bias"),
                attention: id("implicit.attention"),
                head: mlp("implicit"),
            }),
        };
        let index = |xs: &[String]| -> Result<HashMap<String, usize>> {
            let mut m = HashMap::with_capacity(xs.len());
            for (i, x) in xs.iter().enumerate() {
                if m.insert(x.clone(), i).is_some() {
                    return Err(Error::Invalid(format!("entity `{x}` listed twice")));
                }
            }
            Ok(m)
        };
        Ok(Apre {
            user_index: index(&meta.users)?,
            item_index: index(&meta.items)?,
            meta,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn variant(&self) -> Variant {
        self.meta.variant
    }

    pub fn num_aspects(&self) -> usize {
        self.meta.aspects.len()
    }

    /// Aspect lemmas; index `a` holds aspect id `a + 1`.
    pub fn aspects(&self) -> &[String] {
        &self.meta.aspects
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }

    /// Names of parameters that exist only because of the explicit channel.
    pub fn explicit_param_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .map(|p| p.name.as_str())
            .filter(|n| n.starts_with("explicit."))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>, optimizer: Option<&AdamState>) -> Result<()> {
        let meta = serde_json::to_string(&self.meta)?;
        checkpoint::save(path, &self.params, &meta, optimizer)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<AdamState>)> {
        let c = checkpoint::load(path)?;
        let meta: ModelMeta =
            serde_json::from_str(&c.metadata).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        Ok((Apre::from_parts(meta, c.params)?, c.optimizer))
    }

    /// Inference for one (user, item) pair; the score is clamped, its addends are not.
    pub fn predict(
        &self,
        user_id: &str,
        item_id: &str,
        user_reviews: &[&ReviewFeatures],
        item_reviews: &[&ReviewFeatures],
    ) -> Result<Prediction> {
        let user = self.user_index(user_id);
        let item = self.item_index(item_id);
        let mut fw = Forward::new(self, false, 0);
        let out = fw.pair(user, item, user_reviews, item_reviews)?;
        let g = &fw.graph;
        let scalar = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        let vecs = |vs: &Option<Vec<Var>>| -> Vec<Vec<f64>> {
            vs.as_ref()
                .map(|vs| vs.iter().map(|v| g.value(*v).data().to_vec()).collect())
                .unwrap_or_default()
        };
        let pre_clamp = g.value(out.score).item();
        let (lo, hi) = self.meta.config.clamp;
        Ok(Prediction {
            s_hat: pre_clamp.clamp(lo, hi),
            pre_clamp,
            bias_term: g.value(out.bias).item(),
            implicit_term: scalar(out.implicit),
            explicit_term: scalar(out.explicit),
            contributions: out.contributions.map(|v| g.value(v).data().to_vec()).unwrap_or_default(),
            user_attention: vecs(&out.user.alphas),
            item_attention: vecs(&out.item.alphas),
            user_aspects: vecs(&out.user.aspects),
            item_aspects: vecs(&out.item.aspects),
            user_review_weights: out.user.beta.map(|v| g.value(v).data().to_vec()).unwrap_or_default(),
            item_review_weights: out.item.beta.map(|v| g.value(v).data().to_vec()).unwrap_or_default(),
            cold_user: user.is_none(),
            cold_item: item.is_none(),
            user_reviews: user_reviews.len(),
            item_reviews: item_reviews.len(),
        })
    }
}

/// Plain-value result of [`Apre::predict`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub s_hat: f64,
    pub pre_clamp: f64,
    pub bias_term: f64,
    pub implicit_term: f64,
    pub explicit_term: f64,
    /// Per-aspect addends of the explicit term.
    pub contributions: Vec<f64>,
    /// Review weights per aspect, user side.
    pub user_attention: Vec<Vec<f64>>,
    pub item_attention: Vec<Vec<f64>>,
    /// Aggregated aspect representation per aspect, user side.
    pub user_aspects: Vec<Vec<f64>>,
    pub item_aspects: Vec<Vec<f64>>,
    pub user_review_weights: Vec<f64>,
    pub item_review_weights: Vec<f64>,
    pub cold_user: bool,
    pub cold_item: bool,
    pub user_reviews: usize,
    pub item_reviews: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ReviewVars {
    pub adapted: Var,
    /// `[k, feature_dim]`: summed sentiment rows per aspect.
    pub explicit: Option<Var>,
    /// Multi-granularity review vector.
    pub implicit: Option<Var>,
}

#[derive(Debug, Clone, Default)]
pub struct SideVars {
    /// Aggregated representation per aspect.
    pub aspects: Option<Vec<Var>>,
    /// Review weights per aspect; absent when the side has no reviews.
    pub alphas: Option<Vec<Var>>,
    pub implicit: Option<Var>,
    pub beta: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct PairVars {
    pub bias: Var,
    pub implicit: Option<Var>,
    /// `γ ⊙ F_ex(...)`, one entry per aspect.
    pub contributions: Option<Var>,
    pub explicit: Option<Var>,
    /// Unclamped score.
    pub score: Var,
    pub user: SideVars,
    pub item: SideVars,
}

/// One forward pass over a graph; review work is shared across pairs by feature key.
pub struct Forward<'m> {
    pub model: &'m Apre,
    pub graph: Graph,
    train: bool,
    rng: ChaCha8Rng,
    cache: HashMap<usize, ReviewVars>,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m Apre, train: bool, seed: u64) -> Self {
        Forward {
            model,
            graph: Graph::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: HashMap::new(),
        }
    }

    fn p(&mut self, id: ParamId) -> Var {
        self.graph.param(&self.model.params, id)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let rate = self.model.meta.config.dropout;
        self.graph.dropout(x, rate, self.train, &mut self.rng)
    }

    fn mlp(&mut self, x: Var, ids: Mlp) -> Result<Var> {
        let (w1, b1, w2, b2) = (self.p(ids.w1), self.p(ids.b1), self.p(ids.w2), self.p(ids.b2));
        let x = self.dropout(x)?;
        let h = self.graph.linear(x, w1, b1)?;
        let h = self.graph.relu(h)?;
        let h = self.dropout(h)?;
        self.graph.linear(h, w2, b2)
    }

    /// Token features after the adaptation layer.
    pub fn adapt(&mut self, tokens: Var) -> Result<Var> {
        let w = self.p(self.model.ids.adapt_w);
        let b = self.p(self.model.ids.adapt_b);
        let h = self.graph.linear(tokens, w, b)?;
        let h = match self.model.meta.config.activation {
            Activation::Identity => h,
            Activation::Tanh => self.graph.tanh(h)?,
            Activation::LeakyRelu => self.graph.leaky_relu(h, LEAKY_SLOPE)?,
        };
        self.dropout(h)
    }

    /// `[k, feature_dim]`, row `a` summing the adapted rows of the sentiment words of aspect `a`.
    pub fn explicit_review(&mut self, adapted: Var, f: &ReviewFeatures) -> Result<Var> {
        let k = self.model.num_aspects();
        let df = self.model.meta.config.feature_dim;
        if f.sentiment_rows.is_empty() {
            return self.graph.constant(Tensor::zeros(&[k, df]));
        }
        let counts = self.graph.constant(f.count_matrix(k))?;
        self.graph.matmul(counts, adapted)
    }

    /// `[first row; max(relu(conv)); max; mean]` over the token rows (markers excluded from pooling).
    pub fn implicit_review(&mut self, adapted: Var) -> Result<Var> {
        let rows = self.graph.value(adapted).rows();
        if rows < 3 {
            return Err(Error::Invalid(format!(
                "implicit channel needs at least one token besides the markers, got {rows} rows"
            )));
        }
        let ids = self.model.ids.implicit.expect("implicit channel present");
        let (cw, cb) = (self.p(ids.conv_w), self.p(ids.conv_b));
        let first = self.graph.row(adapted, 0)?;
        let tokens = self.graph.slice_rows(adapted, 1, rows - 1)?;
        let conv = self.graph.conv1d(tokens, cw, cb)?;
        let conv = self.graph.relu(conv)?;
        let conv = self.graph.max_rows(conv)?;
        let max = self.graph.max_rows(tokens)?;
        let mean = self.graph.mean_rows(tokens)?;
        self.graph.concat(&[first, conv, max, mean])
    }

    pub fn review(&mut self, f: &ReviewFeatures) -> Result<ReviewVars> {
        if let Some(v) = self.cache.get(&f.key) {
            return Ok(*v);
        }
        let d_e = self.model.meta.config.embed_dim;
        if f.tokens.cols() != d_e {
            return Err(Error::shape(
                "adapt",
                format!("review `{}` has width {}, model expects {d_e}", f.review_id, f.tokens.cols()),
            ));
        }
        let tokens = self.graph.constant(f.tokens.clone())?;
        let adapted = self.adapt(tokens)?;
        let explicit = match self.model.ids.explicit {
            Some(_) => Some(self.explicit_review(adapted, f)?),
            None => None,
        };
        let implicit = match self.model.ids.implicit {
            Some(_) => Some(self.implicit_review(adapted)?),
            None => None,
        };
        let v = ReviewVars {
            adapted,
            explicit,
            implicit,
        };
        self.cache.insert(f.key, v);
        Ok(v)
    }

    /// Per-aspect attention over reviews: weights and the weighted representation.
    ///
    /// `reps` are `[k, feature_dim]` review matrices, `aspect_table` the side's `[k, aspect_dim]` queries.
    pub fn explicit_aggregate(&mut self, reps: &[Var], aspect_table: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let k = self.model.num_aspects();
        let c = &self.model.meta.config;
        let (df, da) = (c.feature_dim, c.aspect_dim);
        let n = reps.len();
        if n == 0 {
            return Err(Error::Invalid("attention over an empty review set".into()));
        }
        let ids = self.model.ids.explicit.expect("explicit channel present");
        let w = self.p(ids.attention);
        let w = self.graph.reshape(w, vec![df + da, 1])?;
        let w_review = self.graph.slice_rows(w, 0, df)?;
        let w_aspect = self.graph.slice_rows(w, df, df + da)?;
        let aspect_scores = self.graph.matmul(aspect_table, w_aspect)?;
        let stacked = self.graph.stack(reps)?;
        let flat = self.graph.reshape(stacked, vec![n * k, df])?;
        let mut weights = Vec::with_capacity(k);
        let mut aggregated = Vec::with_capacity(k);
        for a in 0..k {
            let idx: Vec<usize> = (0..n).map(|r| r * k + a).collect();
            let h = self.graph.select_rows(flat, &idx)?;
            let s = self.graph.matmul(h, w_review)?;
            let sa = self.graph.select_rows(aspect_scores, &vec![a; n])?;
            let s = self.graph.add(s, sa)?;
            let s = self.graph.reshape(s, vec![n])?;
            let s = self.graph.tanh(s)?;
            let alpha = self.graph.softmax(s)?;
            aggregated.push(self.graph.weighted_sum(alpha, h)?);
            weights.push(alpha);
        }
        Ok((weights, aggregated))
    }

    /// Attention over implicit review vectors: weights and the weighted vector.
    pub fn implicit_aggregate(&mut self, vs: &[Var]) -> Result<(Var, Var)> {
        if vs.is_empty() {
            return Err(Error::Invalid("attention over an empty review set".into()));
        }
        let ids = self.model.ids.implicit.expect("implicit channel present");
        let w = self.p(ids.attention);
        let stacked = self.graph.stack(vs)?;
        let s = self.graph.matmul(stacked, w)?;
        let s = self.graph.tanh(s)?;
        let beta = self.graph.softmax(s)?;
        let v = self.graph.weighted_sum(beta, stacked)?;
        Ok((beta, v))
    }

    fn side(&mut self, reviews: &[&ReviewFeatures], user_side: bool) -> Result<SideVars> {
        let vars = reviews.iter().map(|f| self.review(f)).collect::<Result<Vec<_>>>()?;
        let c = &self.model.meta.config;
        let (k, df, dim) = (self.model.num_aspects(), c.feature_dim, c.implicit_dim());
        let mut out = SideVars::default();
        if let Some(ids) = self.model.ids.explicit {
            if vars.is_empty() {
                let z = self.graph.constant(Tensor::zeros(&[df]))?;
                out.aspects = Some(vec![z; k]);
            } else {
                let table = self.p(if user_side { ids.user_aspects } else { ids.item_aspects });
                let reps: Vec<Var> = vars.iter().map(|v| v.explicit.expect("explicit present")).collect();
                let (alphas, aspects) = self.explicit_aggregate(&reps, table)?;
                out.alphas = Some(alphas);
                out.aspects = Some(aspects);
            }
        }
        if self.model.ids.implicit.is_some() {
            if vars.is_empty() {
                out.implicit = Some(self.graph.constant(Tensor::zeros(&[dim]))?);
            } else {
                let vs: Vec<Var> = vars.iter().map(|v| v.implicit.expect("implicit present")).collect();
                let (beta, v) = self.implicit_aggregate(&vs)?;
                out.beta = Some(beta);
                out.implicit = Some(v);
            }
        }
        Ok(out)
    }

    fn entity_bias(&mut self, table: ParamId, index: Option<usize>) -> Result<Var> {
        match index {
            Some(i) => {
                let t = self.p(table);
                self.graph.element(t, i)
            }
            None => self.graph.scalar(self.model.meta.global_mean / 2.0),
        }
    }

    /// Unclamped score for one pair and all its intermediate terms.
    ///
    /// A missing entity index means cold start: its bias falls back to half the
    /// global mean, so a pair with both sides unknown starts from the global mean.
    pub fn pair(
        &mut self,
        user: Option<usize>,
        item: Option<usize>,
        user_reviews: &[&ReviewFeatures],
        item_reviews: &[&ReviewFeatures],
    ) -> Result<PairVars> {
        let ids = self.model.ids;
        let bu = self.entity_bias(ids.user_bias, user)?;
        let bt = self.entity_bias(ids.item_bias, item)?;
        let bias = self.graph.add(bu, bt)?;
        let us = self.side(user_reviews, true)?;
        let is = self.side(item_reviews, false)?;
        let mut score = bias;

        let mut implicit = None;
        if let (Some(head), Some(vu), Some(vt)) = (ids.implicit.map(|i| i.head), us.implicit, is.implicit) {
            let x = self.graph.concat(&[vu, vt])?;
            let y = self.mlp(x, head)?;
            let y = self.graph.sum(y)?;
            score = self.graph.add(score, y)?;
            implicit = Some(y);
        }

        let (mut contributions, mut explicit) = (None, None);
        if let (Some(ex), Some(gu), Some(gt)) = (ids.explicit, &us.aspects, &is.aspects) {
            let rows = gu
                .iter()
                .zip(gt)
                .map(|(u, t)| self.graph.concat(&[*u, *t]))
                .collect::<Result<Vec<_>>>()?;
            let x = self.graph.stack(&rows)?;
            let y = self.mlp(x, ex.head)?;
            let y = self.graph.reshape(y, vec![rows.len()])?;
            let gamma = self.p(ex.gamma);
            let contrib = self.graph.mul(gamma, y)?;
            let total = self.graph.sum(contrib)?;
            score = self.graph.add(score, total)?;
            contributions = Some(contrib);
            explicit = Some(total);
        }

        Ok(PairVars {
            bias,
            implicit,
            contributions,
            explicit,
            score,
            user: us,
            item: is,
        })
    }

    /// `λ Σ‖θ‖²` over the regularized parameters, as a graph scalar.
    pub fn penalty(&mut self, lambda: f64) -> Result<Var> {
        let ids: Vec<ParamId> = self
            .model
            .params
            .ids()
            .filter(|&id| self.model.params.get(id).regularized)
            .collect();
        let mut terms = Vec::with_capacity(ids.len());
        for id in ids {
            let p = self.p(id);
            let sq = self.graph.square(p)?;
            terms.push(self.graph.sum(sq)?);
        }
        let stacked = self.graph.stack(&terms)?;
        let total = self.graph.sum(stacked)?;
        self.graph.scale(total, lambda)
    }
}

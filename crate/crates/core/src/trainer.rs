//! Training loop, evaluation, the bias-only baseline and hyperparameter sweeps.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apre::{Activation, Apre, Forward, ModelConfig, ReviewFeatures, Variant};
use crate::aspair::{ASPair, AspectVocabulary};
use crate::corpus::{Corpus, Split, MAX_RATING, MIN_RATING};
use crate::diffmath::{lr_schedule, AdamState, Tensor};
use crate::embed::EmbeddingSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set by the caller; run configs carry the seed at top level.
    #[serde(skip)]
    pub seed: u64,
    pub patience: usize,
    pub lambda: f64,
    pub variant: Variant,
    /// Cap on R^u and R^t, keeping the most recent reviews.
    pub max_reviews_per_side: usize,
    /// Record real epoch durations; off by default so logs are reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.001,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            patience: 5,
            lambda: 1e-4,
            variant: Variant::Full,
            max_reviews_per_side: 20,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr >= 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate {} must be finite and ≥ 0", self.initial_lr)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_reviews_per_side == 0 {
            return Err(Error::Invalid("batch_size, patience and max_reviews_per_side must be ≥ 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid(format!("L2 weight {} must be ≥ 0", self.lambda)));
        }
        Ok(())
    }
}

/// Corpus, split and per-review model inputs, joined and checked once.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub corpus: Corpus,
    pub aspects: AspectVocabulary,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    features: HashMap<usize, ReviewFeatures>,
    user_history: HashMap<String, Vec<usize>>,
    item_history: HashMap<String, Vec<usize>>,
}

impl TrainingData {
    /// Joins a split with pairs and embeddings. Only training reviews are
    /// model inputs, so only they need embeddings.
    pub fn build(
        corpus: Corpus,
        split: &Split,
        pairs: &[ASPair],
        aspects: AspectVocabulary,
        embeddings: &dyn EmbeddingSource,
    ) -> Result<Self> {
        let positions = |ids: &[String]| -> Result<Vec<usize>> {
            let mut missing = Vec::new();
            let pos: Vec<usize> = ids
                .iter()
                .filter_map(|id| {
                    let p = corpus.position(id);
                    if p.is_none() {
                        missing.push(id.clone());
                    }
                    p
                })
                .collect();
            if missing.is_empty() {
                Ok(pos)
            } else {
                Err(Error::MissingReviews(missing))
            }
        };
        let mut train = positions(&split.train)?;
        let validation = positions(&split.validation)?;
        let test = positions(&split.test)?;
        train.sort_unstable();

        let mut by_review: HashMap<&str, Vec<&ASPair>> = HashMap::new();
        for p in pairs {
            by_review.entry(p.review_id.as_str()).or_default().push(p);
        }
        let mut features = HashMap::with_capacity(train.len());
        let mut missing = Vec::new();
        for &pos in &train {
            let rec = &corpus.records()[pos];
            match embeddings.embed(rec) {
                Ok(e) => {
                    let mut ps = by_review.get(rec.review_id.as_str()).cloned().unwrap_or_default();
                    let words = e.alignment.word_count();
                    let before = ps.len();
                    ps.retain(|p| p.word_position.map_or(true, |w| w < words));
                    if ps.len() < before {
                        log::warn!(
                            "review `{}`: {} pairs past the embedded words dropped",
                            rec.review_id,
                            before - ps.len()
                        );
                    }
                    features.insert(pos, ReviewFeatures::new(pos, &e, &ps, aspects.len())?);
                }
                Err(Error::MissingReviews(ids)) => missing.extend(ids),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingReviews(missing));
        }

        let mut user_history: HashMap<String, Vec<usize>> = HashMap::new();
        let mut item_history: HashMap<String, Vec<usize>> = HashMap::new();
        for &pos in &train {
            let r = &corpus.records()[pos];
            user_history.entry(r.user_id.clone()).or_default().push(pos);
            item_history.entry(r.item_id.clone()).or_default().push(pos);
        }
        Ok(TrainingData {
            corpus,
            aspects,
            train,
            validation,
            test,
            features,
            user_history,
            item_history,
        })
    }

    pub fn features(&self, pos: usize) -> Option<&ReviewFeatures> {
        self.features.get(&pos)
    }

    /// Up to `cap` most recent training reviews of an entity, optionally leaving one out.
    pub fn history(&self, user_side: bool, entity: &str, exclude: Option<usize>, cap: usize) -> Vec<&ReviewFeatures> {
        let table = if user_side { &self.user_history } else { &self.item_history };
        let Some(list) = table.get(entity) else {
            return Vec::new();
        };
        let mut out: Vec<&ReviewFeatures> = list
            .iter()
            .rev()
            .filter(|&&p| Some(p) != exclude)
            .take(cap)
            .map(|p| &self.features[p])
            .collect();
        out.reverse();
        out
    }

    /// (user, mean rating), (item, mean rating) over the training split, sorted by id, and the global mean.
    pub fn entity_means(&self) -> (Vec<(String, f64)>, Vec<(String, f64)>, f64) {
        let recs = self.corpus.records();
        let mean_of = |h: &HashMap<String, Vec<usize>>| -> Vec<(String, f64)> {
            let mut v: Vec<(String, f64)> = h
                .iter()
                .map(|(id, ps)| (id.clone(), ps.iter().map(|&p| recs[p].rating).sum::<f64>() / ps.len() as f64))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let global = self.train.iter().map(|&p| recs[p].rating).sum::<f64>() / self.train.len().max(1) as f64;
        (mean_of(&self.user_history), mean_of(&self.item_history), global)
    }

    fn target(&self, pos: usize) -> (&str, &str, f64) {
        let r = &self.corpus.records()[pos];
        (&r.user_id, &r.item_id, r.rating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mse,lr,seconds\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_mse, e.lr, e.seconds).expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model from the epoch with the lowest validation MSE.
    pub model: Apre,
    pub log: MetricsLog,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub optimizer: AdamState,
}

/// Builds a fresh model sized for the data.
pub fn init_model(data: &TrainingData, model: &ModelConfig, train: &TrainConfig) -> Result<Apre> {
    let (users, items, global) = data.entity_means();
    let aspects = data.aspects.aspects.iter().map(|(a, _)| a.clone()).collect();
    Apre::new(model.clone(), train.variant, aspects, users, items, global, train.seed)
}

/// Sum of squared errors of one batch plus the L2 term; gradients land in the model's store.
fn train_batch(model: &mut Apre, data: &TrainingData, batch: &[usize], cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let mut fw = Forward::new(model, true, seed);
    let mut errs = Vec::with_capacity(batch.len());
    for &pos in batch {
        let (u, t, s) = data.target(pos);
        let ur = data.history(true, u, Some(pos), cfg.max_reviews_per_side);
        let ir = data.history(false, t, Some(pos), cfg.max_reviews_per_side);
        let out = fw.pair(model.user_index(u), model.item_index(t), &ur, &ir)?;
        let target = fw.graph.scalar(s)?;
        let d = fw.graph.sub(out.score, target)?;
        errs.push(fw.graph.square(d)?);
    }
    let stacked = fw.graph.stack(&errs)?;
    let sse = fw.graph.sum(stacked)?;
    let penalty = fw.penalty(cfg.lambda)?;
    let loss = fw.graph.add(sse, penalty)?;
    let sse_value = fw.graph.value(sse).item();
    let graph = fw.graph;
    let grads = graph.backward(loss)?;
    graph.accumulate(&grads, &mut model.params)?;
    Ok(sse_value)
}

pub fn train(data: &TrainingData, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = init_model(data, model_cfg, cfg)?;
    train_model(model, data, cfg)
}

/// Adam with step decay and early stopping on validation MSE.
pub fn train_model(mut model: Apre, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = data.train.clone();
    let mut log = MetricsLog::default();
    let mut best: Option<(Apre, usize, f64)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(cfg.initial_lr, epoch);
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seed = rng.gen();
            sse += train_batch(&mut model, data, batch, cfg, seed)?;
            adam.step(&mut model.params, lr)?;
        }
        let val_mse = if data.validation.is_empty() {
            sse / order.len() as f64
        } else {
            evaluate(&model, data, &data.validation, cfg.max_reviews_per_side)?.mse
        };
        let seconds = if cfg.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 };
        let m = EpochMetrics {
            epoch,
            train_loss: sse / order.len() as f64,
            val_mse,
            lr,
            seconds,
        };
        info!("epoch {epoch}: train {:.5} val {:.5} lr {lr:.6}", m.train_loss, m.val_mse);
        log.epochs.push(m);
        if best.as_ref().map_or(true, |b| val_mse < b.2) {
            best = Some((model.clone(), epoch, val_mse));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (model, best_epoch, best_val_mse) = match best {
        Some(b) => b,
        None => {
            let mse = evaluate(&model, data, &data.validation, cfg.max_reviews_per_side).map_or(f64::NAN, |r| r.mse);
            (model, 0, mse)
        }
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_mse,
        optimizer: adam,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub item_id: String,
    pub s_hat: f64,
    pub cold_start_flags: ColdStartFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColdStartFlags {
    pub user: bool,
    pub item: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub count: usize,
    /// MSE over pairs with an unseen user or item, if any.
    pub cold_mse: Option<f64>,
    pub cold_count: usize,
}

/// Clamped predictions for review positions, using training histories as R^u and R^t.
pub fn predict_positions(model: &Apre, data: &TrainingData, positions: &[usize], cap: usize) -> Result<Vec<PredictionRow>> {
    let mut out = Vec::with_capacity(positions.len());
    let (lo, hi) = model.config().clamp;
    for chunk in positions.chunks(64) {
        let mut fw = Forward::new(model, false, 0);
        for &pos in chunk {
            let (u, t, _) = data.target(pos);
            let ur = data.history(true, u, None, cap);
            let ir = data.history(false, t, None, cap);
            let (ui, ti) = (model.user_index(u), model.item_index(t));
            let o = fw.pair(ui, ti, &ur, &ir)?;
            out.push(PredictionRow {
                user_id: u.to_owned(),
                item_id: t.to_owned(),
                s_hat: fw.graph.value(o.score).item().clamp(lo, hi),
                cold_start_flags: ColdStartFlags {
                    user: ui.is_none(),
                    item: ti.is_none(),
                },
            });
        }
    }
    Ok(out)
}

/// Mean squared error of clamped predictions; cold-start pairs are included and also reported alone.
pub fn evaluate(model: &Apre, data: &TrainingData, positions: &[usize], cap: usize) -> Result<EvalReport> {
    if positions.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let preds = predict_positions(model, data, positions, cap)?;
    let targets: Vec<f64> = positions.iter().map(|&p| data.target(p).2).collect();
    Ok(mse_report(&preds, &targets))
}

fn mse_report(preds: &[PredictionRow], targets: &[f64]) -> EvalReport {
    let (mut sse, mut cold_sse, mut cold) = (0.0, 0.0, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        let e = (p.s_hat - t) * (p.s_hat - t);
        sse += e;
        if p.cold_start_flags.user || p.cold_start_flags.item {
            cold_sse += e;
            cold += 1;
        }
    }
    EvalReport {
        mse: sse / preds.len() as f64,
        count: preds.len(),
        cold_mse: (cold > 0).then(|| cold_sse / cold as f64),
        cold_count: cold,
    }
}

/// `μ + b_u + b_t` fitted by least squares with alternating exact updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasBaseline {
    pub global: f64,
    pub users: HashMap<String, f64>,
    pub items: HashMap<String, f64>,
}

impl BiasBaseline {
    pub fn fit(data: &TrainingData, max_sweeps: usize, tol: f64) -> Self {
        let recs = data.corpus.records();
        let rows: Vec<(&str, &str, f64)> = data.train.iter().map(|&p| data.target(p)).collect();
        let n = rows.len().max(1) as f64;
        let global = rows.iter().map(|r| r.2).sum::<f64>() / n;
        let mut users: HashMap<String, f64> = HashMap::new();
        let mut items: HashMap<String, f64> = HashMap::new();
        for &p in &data.train {
            users.insert(recs[p].user_id.clone(), 0.0);
            items.insert(recs[p].item_id.clone(), 0.0);
        }
        for _ in 0..max_sweeps {
            let mut change = 0.0f64;
            for (update_users, table_len) in [(true, users.len()), (false, items.len())] {
                let mut sums: HashMap<&str, (f64, usize)> = HashMap::with_capacity(table_len);
                for &(u, t, s) in &rows {
                    let (key, other) = if update_users { (u, items[t]) } else { (t, users[u]) };
                    let e = sums.entry(key).or_default();
                    e.0 += s - global - other;
                    e.1 += 1;
                }
                let table = if update_users { &mut users } else { &mut items };
                for (k, (sum, c)) in sums {
                    let v = sum / c as f64;
                    let slot = table.get_mut(k).expect("entity present");
                    change = change.max((v - *slot).abs());
                    *slot = v;
                }
            }
            if change < tol {
                break;
            }
        }
        BiasBaseline { global, users, items }
    }

    pub fn predict(&self, user: &str, item: &str) -> f64 {
        let s = self.global + self.users.get(user).unwrap_or(&0.0) + self.items.get(item).unwrap_or(&0.0);
        s.clamp(MIN_RATING, MAX_RATING)
    }

    pub fn mse(&self, data: &TrainingData, positions: &[usize]) -> Result<f64> {
        if positions.is_empty() {
            return Err(Error::Invalid("cannot evaluate an empty split".into()));
        }
        let sse: f64 = positions
            .iter()
            .map(|&p| {
                let (u, t, s) = data.target(p);
                let e = self.predict(u, t) - s;
                e * e
            })
            .sum();
        Ok(sse / positions.len() as f64)
    }
}

/// Values to try per hyperparameter; an empty list keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub initial_lr: Vec<f64>,
    pub dropout: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Sets feature, aspect and channel widths together.
    pub hidden_dim: Vec<usize>,
    pub kernel_size: Vec<usize>,
    pub activation: Vec<Activation>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    pub initial_lr: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub hidden_dim: usize,
    pub kernel_size: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: SweepSetting,
    pub best_val_mse: f64,
    pub epochs_to_best: f64,
    /// Σ‖θ‖² of the regularized parameters of the returned model, averaged over repeats.
    pub final_sq_norm: f64,
}

impl SweepGrid {
    pub fn settings(&self, model: &ModelConfig, train: &TrainConfig) -> Vec<SweepSetting> {
        fn or<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for lr in or(&self.initial_lr, train.initial_lr) {
            for dropout in or(&self.dropout, model.dropout) {
                for lambda in or(&self.lambda, train.lambda) {
                    for hidden_dim in or(&self.hidden_dim, model.feature_dim) {
                        for kernel_size in or(&self.kernel_size, model.kernel_size) {
                            for activation in or(&self.activation, model.activation) {
                                out.push(SweepSetting {
                                    initial_lr: lr,
                                    dropout,
                                    lambda,
                                    hidden_dim,
                                    kernel_size,
                                    activation,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One training run per grid cell and repeat; repeats use consecutive seeds.
pub fn sweep(data: &TrainingData, model: &ModelConfig, train_cfg: &TrainConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let repeats = grid.repeats.max(1);
    let mut rows = Vec::new();
    for s in grid.settings(model, train_cfg) {
        let mcfg = ModelConfig {
            dropout: s.dropout,
            feature_dim: s.hidden_dim,
            aspect_dim: s.hidden_dim,
            conv_channels: s.hidden_dim,
            kernel_size: s.kernel_size,
            activation: s.activation,
            ..model.clone()
        };
        let (mut mse, mut epochs, mut norm) = (0.0, 0.0, 0.0);
        for r in 0..repeats {
            let tcfg = TrainConfig {
                initial_lr: s.initial_lr,
                lambda: s.lambda,
                seed: train_cfg.seed + r as u64,
                ..train_cfg.clone()
            };
            let out = train(data, &mcfg, &tcfg)?;
            mse += out.best_val_mse;
            epochs += (out.best_epoch + 1) as f64;
            norm += out.model.params.regularized_sq_norm();
        }
        let k = repeats as f64;
        rows.push(SweepRow {
            setting: s,
            best_val_mse: mse / k,
            epochs_to_best: epochs / k,
            final_sq_norm: norm / k,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("initial_lr,dropout,lambda,hidden_dim,kernel_size,activation,best_val_mse,epochs_to_best,final_sq_norm\n");
    for r in rows {
        let s = &r.setting;
        let act = serde_json::to_value(s.activation).expect("activation serializes");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.initial_lr,
            s.dropout,
            s.lambda,
            s.hidden_dim,
            s.kernel_size,
            act.as_str().unwrap_or_default(),
            r.best_val_mse,
            r.epochs_to_best,
            r.final_sq_norm
        )
        .expect("string write");
    }
    out
}

/// Ids of reviews in `positions` that have no model inputs.
pub fn missing_features(data: &TrainingData, positions: &[usize]) -> Vec<String> {
    let have: HashSet<usize> = data.features.keys().copied().collect();
    positions
        .iter()
        .filter(|p| !have.contains(p))
        .map(|&p| data.corpus.records()[p].review_id.clone())
        .collect()
}

/// Frozen copy of a parameter's values, for comparisons in tests and reports.
pub fn param_snapshot(model: &Apre) -> Vec<Tensor> {
    model.params.iter().map(|p| p.value.clone()).collect()
}

//! Shared helpers for integration tests: independent oracles and small fixtures.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use aspre_core::apre::{Apre, Forward, ModelConfig, ReviewFeatures, Variant};
use aspre_core::diffmath::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(name: &str) -> PathBuf {
    manifest_dir().join("tests").join("fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    manifest_dir().join("tests").join("golden").join(name)
}

pub fn sample_dir() -> PathBuf {
    manifest_dir().join("..").join("..").join("data").join("sample")
}

/// Compares `actual` with a stored file, or rewrites the file when `ASPRE_BLESS` is set.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden(name);
    if std::env::var_os("ASPRE_BLESS").is_some() {
        fs::write(&path, actual).map_err(|e| format!("writing {}: {e}", path.display()))?;
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{} differs from the produced output:\n{actual}", path.display()))
    }
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Lowercased FORM column of every sentence, read straight from CoNLL-U text.
pub fn raw_sentences(conllu: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in conllu.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        cur.push(cols[1].to_lowercase());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Brute-force window enumerator: every query rescans every window.
pub struct WindowOracle {
    windows: Vec<Vec<String>>,
}

impl WindowOracle {
    pub fn new(sentences: &[Vec<String>], size: usize) -> Self {
        let mut windows = Vec::new();
        for s in sentences {
            if s.is_empty() {
                continue;
            }
            if s.len() <= size {
                windows.push(s.clone());
                continue;
            }
            for start in 0..=s.len() - size {
                windows.push(s[start..start + size].to_vec());
            }
        }
        WindowOracle { windows }
    }

    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.windows.iter().flatten().cloned().collect()
    }

    fn count(&self, words: &[&str]) -> usize {
        self.windows
            .iter()
            .filter(|w| words.iter().all(|x| w.iter().any(|y| y == x)))
            .count()
    }

    pub fn pmi(&self, a: &str, b: &str) -> Option<f64> {
        let (ca, cb) = (self.count(&[a]), self.count(&[b]));
        if ca == 0 || cb == 0 {
            return None;
        }
        let both = self.count(&[a, b]);
        if both == 0 {
            return Some(f64::NEG_INFINITY);
        }
        let n = self.windows.len() as f64;
        Some((both as f64 / n).ln() - (ca as f64 / n).ln() - (cb as f64 / n).ln())
    }

    pub fn polarity(&self, word: &str, positive: &[String], negative: &[String]) -> Option<f64> {
        if self.count(&[word]) == 0 {
            return None;
        }
        let side = |seeds: &[String]| -> f64 {
            seeds
                .iter()
                .filter_map(|s| self.pmi(word, s))
                .filter(|v| v.is_finite())
                .sum()
        };
        Some(side(positive) - side(negative))
    }
}

/// Seed file sections, parsed without the library.
pub fn raw_seeds(text: &str) -> (Vec<String>, Vec<String>) {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let mut into_pos = true;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match line {
            "[positive]" => into_pos = true,
            "[negative]" => into_pos = false,
            w if into_pos => pos.push(w.to_lowercase()),
            w => neg.push(w.to_lowercase()),
        }
    }
    (pos, neg)
}

pub fn tiny_config(embed_dim: usize, feature_dim: usize) -> ModelConfig {
    ModelConfig {
        embed_dim,
        feature_dim,
        aspect_dim: 3,
        conv_channels: 2,
        kernel_size: 2,
        dropout: 0.0,
        implicit_hidden: 5,
        explicit_hidden: 5,
        ..ModelConfig::default()
    }
}

pub fn random_model(k: usize, feature_dim: usize, seed: u64) -> Apre {
    let embed_dim = 5;
    let mut m = Apre::new(
        tiny_config(embed_dim, feature_dim),
        Variant::Full,
        (0..k).map(|a| format!("aspect{a}")).collect(),
        vec![("u0".into(), 3.5), ("u1".into(), 4.0)],
        vec![("t0".into(), 2.5), ("t1".into(), 3.0)],
        3.2,
        seed,
    )
    .unwrap();
    // Non-zero layer biases so every parameter carries gradient signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in m.params.iter_mut() {
        for x in p.value.data_mut() {
            if *x == 0.0 {
                *x = rng.gen_range(-0.3..0.3);
            }
        }
    }
    m
}

/// Random review with 4..=8 embedding rows and 1..=3 sentiment rows over `k` aspects.
pub fn random_review(key: usize, k: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> ReviewFeatures {
    let rows = rng.gen_range(4..=8);
    let mentions = rng.gen_range(1..=3);
    let mut sentiment_rows: Vec<(usize, usize)> = (0..mentions)
        .map(|_| (rng.gen_range(0..k), rng.gen_range(1..rows - 1)))
        .collect();
    sentiment_rows.sort_unstable();
    ReviewFeatures {
        key,
        review_id: format!("r{key}"),
        tokens: Tensor::uniform(&[rows, embed_dim], -1.0, 1.0, rng),
        sentiment_rows,
    }
}

fn training_loss<'m>(
    model: &'m Apre,
    ur: &[&ReviewFeatures],
    ir: &[&ReviewFeatures],
    lambda: f64,
) -> (Forward<'m>, aspre_core::diffmath::Var) {
    let mut fw = Forward::new(model, false, 0);
    let out = fw.pair(Some(1), Some(0), ur, ir).unwrap();
    let target = fw.graph.scalar(4.2).unwrap();
    let diff = fw.graph.sub(out.score, target).unwrap();
    let sq = fw.graph.square(diff).unwrap();
    let pen = fw.penalty(lambda).unwrap();
    let loss = fw.graph.add(sq, pen).unwrap();
    (fw, loss)
}

/// Worst relative error between backward parameter gradients of one pair's
/// regularized squared error and central finite differences over every parameter entry.
pub fn full_forward_gradient_error(model: &mut Apre, ur: &[&ReviewFeatures], ir: &[&ReviewFeatures], step: f64) -> f64 {
    let lambda = 0.01;
    let ids: Vec<_> = model.params.ids().collect();
    let analytic: Vec<Tensor> = {
        let (fw, loss) = training_loss(model, ur, ir, lambda);
        let grads = fw.graph.backward(loss).unwrap();
        ids.iter()
            .map(|&id| {
                let shape = model.params.get(id).value.shape().to_vec();
                fw.graph
                    .param_var(id)
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(&shape))
            })
            .collect()
    };
    let eval = |m: &Apre| {
        let (fw, loss) = training_loss(m, ur, ir, lambda);
        fw.graph.value(loss).item()
    };
    let mut worst = 0.0f64;
    for (n, &id) in ids.iter().enumerate() {
        for i in 0..model.params.get(id).value.len() {
            let orig = model.params.get(id).value.data()[i];
            model.params.get_mut(id).value.data_mut()[i] = orig + step;
            let up = eval(model);
            model.params.get_mut(id).value.data_mut()[i] = orig - step;
            let down = eval(model);
            model.params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[n].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

//! Acceptance gate: one PASS/FAIL line per headline criterion, nonzero exit on any failure.
//!
//! Runs without the libtest harness so the lines always reach the console.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::{Duration, Instant};

use aspre_core::apre::{Apre, Forward, ModelConfig, ReviewFeatures, Variant};
use aspre_core::aspair::{extract_candidates, ExtractOptions};
use aspre_core::corpus::{load_conllu, split_corpus};
use aspre_core::diffmath::gradcheck::{max_gradient_error, DEFAULT_STEP};
use aspre_core::diffmath::{Graph, Tensor, Var};
use aspre_core::embed::{PseudoEmbedder, DEFAULT_MAX_SUBTOKENS};
use aspre_core::interpret::explain;
use aspre_core::sentiterm::{count_contexts, pmi, polarity, SeedSet};
use aspre_core::synth::{generate, PlantedConfig, PlantedCorpus};
use aspre_core::trainer::{evaluate, train, BiasBaseline, TrainConfig, TrainOutcome, TrainingData};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Gate {
    failed: usize,
}

impl Gate {
    fn run(&mut self, name: &str, limit: Duration, check: impl FnOnce() -> Outcome) {
        self.run_with(name, limit, Duration::ZERO, check);
    }

    /// Like [`Gate::run`], with `prior` time spent on shared setup charged to this criterion.
    fn run_with(&mut self, name: &str, limit: Duration, prior: Duration, check: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = check();
        let elapsed = prior + started.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit:.0?} budget")),
            Err(d) => (false, d),
        };
        if !ok {
            self.failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dependency_rules() -> Outcome {
    let reviews = load_conllu(support::fixture("dependency_rules.conllu")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<&str, BTreeSet<(String, String)>> = [
        ("amod_conj", vec![("sound", "amazing"), ("quality", "amazing")]),
        ("compound_acomp", vec![("sound quality", "superior"), ("comfort", "excellent")]),
    ]
    .into_iter()
    .map(|(id, pairs)| (id, pairs.into_iter().map(|(a, s)| (a.to_owned(), s.to_owned())).collect()))
    .collect();
    for (id, want) in &expected {
        let review = reviews.get(*id).ok_or_else(|| format!("fixture lacks review {id}"))?;
        let got: BTreeSet<(String, String)> = extract_candidates(review, &ExtractOptions::default())
            .into_iter()
            .map(|c| (c.aspect_lemma, c.sentiment_lemma))
            .collect();
        ensure(&got == want, || format!("{id}: expected {want:?}, got {got:?}"))?;
    }
    Ok("both sentences yield exactly the expected pairs".into())
}

fn pmi_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let path = support::fixture("fifty_sentences.conllu");
    let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let sentences = support::raw_sentences(&text);
    ensure(sentences.len() == 50, || format!("fixture has {} sentences", sentences.len()))?;
    let oracle = support::WindowOracle::new(&sentences, 5);

    let reviews = load_conllu(&path).map_err(|e| e.to_string())?;
    let counts = count_contexts(reviews.values(), 5).map_err(|e| e.to_string())?;
    let seed_path = support::fixture("seeds.txt");
    let seeds = SeedSet::load(&seed_path).map_err(|e| e.to_string())?;
    let (pos, neg) = support::raw_seeds(&fs::read_to_string(&seed_path).map_err(|e| e.to_string())?);

    let vocab: Vec<String> = oracle.vocabulary().into_iter().collect();
    let same = |a: f64, b: f64| (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= TOL;
    let mut compared = 0usize;
    for a in &vocab {
        for b in &vocab {
            let want = oracle.pmi(a, b).expect("vocabulary word");
            let got = pmi(&counts, a, b).map_err(|e| e.to_string())?;
            ensure(same(got, want), || format!("pmi({a}, {b}) = {got}, oracle {want}"))?;
            compared += 1;
        }
    }
    let mut frozen = BTreeMap::new();
    for w in &vocab {
        let want = oracle.polarity(w, &pos, &neg).expect("vocabulary word");
        let got = polarity(&counts, w, &seeds).map_err(|e| e.to_string())?;
        ensure(same(got, want), || format!("polarity({w}) = {got}, oracle {want}"))?;
        frozen.insert(w.clone(), want);
    }
    let stored: BTreeMap<String, f64> = {
        let rendered = serde_json::to_string_pretty(&frozen).map_err(|e| e.to_string())?;
        support::check_golden("fixture_polarities.json", &(rendered + "\n"))?;
        serde_json::from_str(&fs::read_to_string(support::golden("fixture_polarities.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
    };
    for (w, v) in &stored {
        ensure(same(frozen[w], *v), || format!("frozen polarity of {w} drifted"))?;
    }
    Ok(format!("{compared} pmi values and {} polarities within {TOL:e}", vocab.len()))
}

/// Reduces an op's output to a scalar through fixed random weights.
fn project(g: &mut Graph, out: Var, seed: u64) -> aspre_core::Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))?;
    let m = g.mul(out, w)?;
    g.sum(m)
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> aspre_core::Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn case(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl Fn(&mut Graph, &[Var]) -> aspre_core::Result<Var> + 'static,
    ) -> (&'static str, Vec<Vec<usize>>, OpFn) {
        (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
    }
    vec![
        case("matmul", &[&[3, 5], &[5, 4]], |g, v| g.matmul(v[0], v[1])),
        case("vecmat", &[&[5], &[5, 3]], |g, v| g.matmul(v[0], v[1])),
        case("linear", &[&[3, 5], &[5, 2], &[2]], |g, v| g.linear(v[0], v[1], v[2])),
        case("add_bias", &[&[3, 5], &[5]], |g, v| g.add_bias(v[0], v[1])),
        case("add", &[&[3, 5], &[3, 5]], |g, v| g.add(v[0], v[1])),
        case("sub", &[&[3, 5], &[3, 5]], |g, v| g.sub(v[0], v[1])),
        case("mul", &[&[3, 5], &[3, 5]], |g, v| g.mul(v[0], v[1])),
        case("scale", &[&[3, 5]], |g, v| g.scale(v[0], -1.7)),
        case("square", &[&[3, 5]], |g, v| g.square(v[0])),
        case("tanh", &[&[3, 5]], |g, v| g.tanh(v[0])),
        case("relu", &[&[3, 5]], |g, v| g.relu(v[0])),
        case("leaky_relu", &[&[3, 5]], |g, v| g.leaky_relu(v[0], 0.01)),
        case("concat", &[&[5], &[3]], |g, v| g.concat(&[v[0], v[1], v[0]])),
        case("stack", &[&[5], &[5]], |g, v| g.stack(&[v[0], v[1], v[0]])),
        case("select_rows", &[&[3, 5]], |g, v| g.select_rows(v[0], &[2, 0, 2])),
        case("row", &[&[3, 5]], |g, v| g.row(v[0], 1)),
        case("slice_rows", &[&[3, 5]], |g, v| g.slice_rows(v[0], 1, 3)),
        case("element", &[&[5]], |g, v| g.element(v[0], 3)),
        case("reshape", &[&[3, 5]], |g, v| g.reshape(v[0], vec![5, 3])),
        case("sum", &[&[3, 5]], |g, v| g.sum(v[0])),
        case("sum_rows", &[&[3, 5]], |g, v| g.sum_rows(v[0])),
        case("mean_rows", &[&[3, 5]], |g, v| g.mean_rows(v[0])),
        case("max_rows", &[&[3, 5]], |g, v| g.max_rows(v[0])),
        case("weighted_sum", &[&[3], &[3, 5]], |g, v| g.weighted_sum(v[0], v[1])),
        case("softmax", &[&[5]], |g, v| g.softmax(v[0])),
        case("inner", &[&[5], &[5]], |g, v| g.inner(v[0], v[1])),
        case("conv1d", &[&[6, 3], &[4, 3, 3], &[4]], |g, v| g.conv1d(v[0], v[1], v[2])),
        case("dropout", &[&[3, 5]], |g, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            g.dropout(v[0], 0.3, true, &mut rng)
        }),
    ]
}

fn gradient_suite() -> Outcome {
    const TOL: f64 = 1e-4;
    const TRIALS: u64 = 10;
    let cases = op_cases();
    let mut worst = 0.0f64;
    for (name, shapes, f) in &cases {
        for trial in 0..TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng)).collect();
            let err = max_gradient_error(&inputs, DEFAULT_STEP, |g, v| {
                let out = f(g, v)?;
                project(g, out, 90 + trial)
            })
            .map_err(|e| format!("{name}: {e}"))?;
            ensure(err < TOL, || format!("{name} trial {trial}: relative error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    for trial in 0..TRIALS {
        let mut model = support::random_model(2, 4, 40 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(60 + trial);
        let reviews: Vec<ReviewFeatures> = (0..4).map(|k| support::random_review(k, 2, 5, &mut rng)).collect();
        let (ur, ir): (Vec<&ReviewFeatures>, Vec<&ReviewFeatures>) = (vec![&reviews[0], &reviews[1]], vec![&reviews[2], &reviews[3]]);
        let err = support::full_forward_gradient_error(&mut model, &ur, &ir, DEFAULT_STEP);
        ensure(err < TOL, || format!("full forward trial {trial}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!(
        "{} ops and the full forward, {TRIALS} trials each, worst relative error {worst:.2e} < {TOL:e}",
        cases.len()
    ))
}

fn attention_invariants() -> Outcome {
    const TOL: f64 = 1e-12;
    const CASES: u64 = 100;
    let mut singles = 0;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + case);
        let k = rng.gen_range(1..=4);
        let model = support::random_model(k, rng.gen_range(2..=5), case);
        let (nu, ni) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let reviews: Vec<ReviewFeatures> = (0..nu + ni).map(|key| support::random_review(key, k, 5, &mut rng)).collect();
        let ur: Vec<&ReviewFeatures> = reviews[..nu].iter().collect();
        let ir: Vec<&ReviewFeatures> = reviews[nu..].iter().collect();
        let p = model.predict("u0", "t1", &ur, &ir).map_err(|e| e.to_string())?;
        for (side, alphas, beta, n) in [
            ("user", &p.user_attention, &p.user_review_weights, nu),
            ("item", &p.item_attention, &p.item_review_weights, ni),
        ] {
            ensure(alphas.len() == k, || format!("case {case}: {side} has {} aspect weight rows", alphas.len()))?;
            for a in alphas.iter().chain(std::iter::once(beta)) {
                let total: f64 = a.iter().sum();
                ensure(a.len() == n && (total - 1.0).abs() <= TOL, || {
                    format!("case {case}: {side} weights {a:?} sum to {total}")
                })?;
                if n == 1 {
                    ensure((a[0] - 1.0).abs() <= TOL, || format!("case {case}: single {side} review weight {}", a[0]))?;
                    singles += 1;
                }
            }
        }
        let (mut ur2, mut ir2) = (ur.clone(), ir.clone());
        ur2.shuffle(&mut rng);
        ir2.shuffle(&mut rng);
        let q = model.predict("u0", "t1", &ur2, &ir2).map_err(|e| e.to_string())?;
        ensure((p.pre_clamp - q.pre_clamp).abs() <= TOL, || {
            format!("case {case}: permuted reviews moved the score by {:e}", (p.pre_clamp - q.pre_clamp).abs())
        })?;
    }
    Ok(format!("{CASES} cases ({singles} single-review weight vectors), all within {TOL:e}"))
}

struct Planted {
    corpus: PlantedCorpus,
    data: TrainingData,
    baseline: f64,
    runs: Vec<(Variant, TrainOutcome, f64, Duration)>,
}

fn planted_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        feature_dim: 16,
        aspect_dim: 16,
        conv_channels: 16,
        kernel_size: 3,
        implicit_hidden: 32,
        explicit_hidden: 32,
        ..ModelConfig::default()
    }
}

fn planted_runs() -> aspre_core::Result<Planted> {
    let corpus = generate(&PlantedConfig::default())?;
    let split = split_corpus(&corpus.corpus, 1)?;
    let embedder = PseudoEmbedder { dim: 32, seed: 5, max_subtokens: DEFAULT_MAX_SUBTOKENS };
    let data = TrainingData::build(corpus.corpus.clone(), &split, &corpus.pairs, corpus.aspects.clone(), &embedder)?;
    let baseline = BiasBaseline::fit(&data, 200, 1e-10).mse(&data, &data.test)?;
    let mut runs = Vec::new();
    for variant in Variant::ALL {
        let started = Instant::now();
        let cfg = TrainConfig {
            epochs: 20,
            initial_lr: 0.003,
            variant,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&data, &planted_model(), &cfg)?;
        let test = evaluate(&out.model, &data, &data.test, cfg.max_reviews_per_side)?.mse;
        runs.push((variant, out, test, started.elapsed()));
    }
    Ok(Planted {
        corpus,
        data,
        baseline,
        runs,
    })
}

fn run_of(p: &Planted, v: Variant) -> (&Apre, f64) {
    let (_, out, mse, _) = p.runs.iter().find(|r| r.0 == v).expect("variant trained");
    (&out.model, *mse)
}

fn planted_learning(p: &Planted) -> Outcome {
    let (model, full) = run_of(p, Variant::Full);
    let gain = 1.0 - full / p.baseline;
    ensure(gain >= 0.20, || {
        format!("test MSE {full:.4} is only {:.1}% below bias-only {:.4}", gain * 100.0, p.baseline)
    })?;
    let (mut agree, mut total) = (0usize, 0usize);
    let cap = TrainConfig::default().max_reviews_per_side;
    for &pos in &p.data.test {
        let rec = &p.data.corpus.records()[pos];
        let ur = p.data.history(true, &rec.user_id, None, cap);
        let ir = p.data.history(false, &rec.item_id, None, cap);
        let pred = model.predict(&rec.user_id, &rec.item_id, &ur, &ir).map_err(|e| e.to_string())?;
        for aspect in model.aspects() {
            let Some(effect) = p.corpus.planted_effect(&rec.user_id, &rec.item_id, aspect) else {
                continue;
            };
            let id = p.corpus.aspects.id_of(aspect).ok_or_else(|| format!("aspect {aspect} has no id"))?;
            total += 1;
            if effect.signum() == pred.contributions[id - 1].signum() {
                agree += 1;
            }
        }
    }
    let rate = agree as f64 / total.max(1) as f64;
    ensure(rate >= 0.80, || {
        format!("contribution signs agree on {agree}/{total} = {:.1}% of attended triples", rate * 100.0)
    })?;
    let secs = p.runs.iter().find(|r| r.0 == Variant::Full).map_or(0.0, |r| r.3.as_secs_f64());
    Ok(format!(
        "test MSE {full:.4} vs bias-only {:.4} ({:.1}% lower); signs agree on {agree}/{total} = {:.1}%; trained in {secs:.0}s",
        p.baseline,
        gain * 100.0,
        rate * 100.0
    ))
}

fn ablation(p: &Planted) -> Outcome {
    let (_, full) = run_of(p, Variant::Full);
    let (_, no_ex) = run_of(p, Variant::WithoutExplicit);
    let (_, no_im) = run_of(p, Variant::WithoutImplicit);
    let detail = format!(
        "FULL {full:.4}, w/o explicit {no_ex:.4}, w/o implicit {no_im:.4}, bias-only {:.4}",
        p.baseline
    );
    ensure(full <= no_ex.min(no_im) + 0.005, || format!("{detail}: FULL is not within 0.005 of the best"))?;
    ensure(no_ex < p.baseline && no_im < p.baseline, || format!("{detail}: a single channel fails to beat bias-only"))?;
    Ok(detail)
}

fn decomposition(p: &Planted) -> Outcome {
    const TOL: f64 = 1e-8;
    let (model, _) = run_of(p, Variant::Full);
    let recs = p.data.corpus.records();
    let users: Vec<&str> = recs.iter().map(|r| r.user_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<&str> = recs.iter().map(|r| r.item_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = users[rng.gen_range(0..users.len())];
        let t = items[rng.gen_range(0..items.len())];
        let ur = p.data.history(true, u, None, 20);
        let ir = p.data.history(false, t, None, 20);
        let report = explain(model, u, t, &ur, &ir, &p.corpus.pairs).map_err(|e| e.to_string())?;
        ensure(report.aspects.len() == model.num_aspects(), || format!("({u}, {t}): report lists {} aspects", report.aspects.len()))?;
        let sum = report.bias_term + report.implicit_term + report.aspects.iter().map(|a| a.contribution).sum::<f64>();
        // Second route: the forward graph's own score node.
        let mut fw = Forward::new(model, false, 0);
        let out = fw
            .pair(model.user_index(u), model.item_index(t), &ur, &ir)
            .map_err(|e| e.to_string())?;
        let score = fw.graph.value(out.score).item();
        let gap = (sum - report.pre_clamp).abs().max((sum - score).abs());
        ensure(gap <= TOL, || format!("({u}, {t}): addends miss the pre-clamp score by {gap:e}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("100 pairs, worst gap {worst:.1e} <= {TOL:e}"))
}

fn zipf_sample() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    support::copy_dir(&support::sample_dir(), dir.path());
    let config = dir.path().join("run.json");
    for command in ["extract-terms", "extract-pairs", "zipf"] {
        let code = aspre_core::cli::run(["aspre", command, "--config", config.to_str().unwrap()], None);
        ensure(code == 0, || format!("`{command}` exited with {code}"))?;
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/zipf.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let rho = report["spearman_log_rank_log_frequency"]
        .as_f64()
        .ok_or("zipf.json lacks the correlation")?;
    ensure(rho <= -0.9, || format!("Spearman {rho:.4} > -0.9"))?;
    Ok(format!("Spearman of log rank vs log frequency {rho:.4} <= -0.9 over {} pairs", report["distinct_pairs"]))
}

fn determinism() -> Outcome {
    let corpus = generate(&PlantedConfig {
        users: 40,
        items: 30,
        aspects: 4,
        reviews_per_user: 6,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let split = split_corpus(&corpus.corpus, 2).map_err(|e| e.to_string())?;
    let data = TrainingData::build(corpus.corpus, &split, &corpus.pairs, corpus.aspects, &PseudoEmbedder { dim: 8, seed: 1, max_subtokens: DEFAULT_MAX_SUBTOKENS })
        .map_err(|e| e.to_string())?;
    let model = ModelConfig {
        embed_dim: 8,
        feature_dim: 4,
        aspect_dim: 4,
        conv_channels: 3,
        kernel_size: 2,
        implicit_hidden: 8,
        explicit_hidden: 8,
        dropout: 0.2,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        seed: 17,
        ..TrainConfig::default()
    };
    let a = train(&data, &model, &cfg).map_err(|e| e.to_string())?.log.to_csv();
    let b = train(&data, &model, &cfg).map_err(|e| e.to_string())?.log.to_csv();
    ensure(a.as_bytes() == b.as_bytes(), || format!("metrics differ:\n{a}\nvs\n{b}"))?;
    ensure(a.lines().count() == cfg.epochs + 1, || format!("unexpected metrics:\n{a}"))?;
    Ok(format!("two seeded runs wrote identical {}-byte metrics", a.len()))
}

fn main() {
    let mut gate = Gate { failed: 0 };
    let minute = Duration::from_secs(60);
    gate.run("dependency rule fixtures", Duration::from_secs(1), dependency_rules);
    gate.run("pmi against brute-force windows", Duration::from_secs(5), pmi_oracle);
    gate.run("finite-difference gradients", minute, gradient_suite);
    gate.run("attention invariants", minute, attention_invariants);

    let planted_budget = Duration::from_secs(15 * 60);
    match planted_runs() {
        Ok(p) => {
            let full_time = p.runs.iter().find(|r| r.0 == Variant::Full).map_or(Duration::ZERO, |r| r.3);
            let all_time = p.runs.iter().map(|r| r.3).sum();
            gate.run_with("planted structure learning", planted_budget, full_time, || planted_learning(&p));
            gate.run_with("ablation trend", 3 * planted_budget, all_time, || ablation(&p));
            gate.run("decomposition exactness", minute, || decomposition(&p));
        }
        Err(e) => {
            for name in ["planted structure learning", "ablation trend", "decomposition exactness"] {
                gate.run(name, Duration::MAX, || Err(format!("planted training failed: {e}")));
            }
        }
    }
    gate.run("zipf trend on the sample corpus", minute, zipf_sample);
    gate.run("seeded training determinism", minute, determinism);

    if gate.failed > 0 {
        println!("{} acceptance criteria failed", gate.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

//! Trains every variant on the planted corpus and prints test MSE against the bias baseline.
//!
//! `cargo run --release --example planted -- [epochs] [lr]`

use std::time::Instant;

use aspre_core::apre::{ModelConfig, Variant};
use aspre_core::corpus::split_corpus;
use aspre_core::embed::{PseudoEmbedder, DEFAULT_MAX_SUBTOKENS};
use aspre_core::synth::{generate, PlantedConfig};
use aspre_core::trainer::{evaluate, train, BiasBaseline, TrainConfig, TrainingData};

fn main() -> aspre_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.003);
    let planted = generate(&PlantedConfig::default())?;
    let split = split_corpus(&planted.corpus, 1)?;
    let embedder = PseudoEmbedder { dim: 32, seed: 5, max_subtokens: DEFAULT_MAX_SUBTOKENS };
    let data = TrainingData::build(planted.corpus.clone(), &split, &planted.pairs, planted.aspects.clone(), &embedder)?;
    let baseline = BiasBaseline::fit(&data, 200, 1e-10).mse(&data, &data.test)?;
    println!("bias-only test MSE {baseline:.4}");
    let model = ModelConfig {
        embed_dim: 32,
        feature_dim: 16,
        aspect_dim: 16,
        conv_channels: 16,
        kernel_size: 3,
        implicit_hidden: 32,
        explicit_hidden: 32,
        ..ModelConfig::default()
    };
    for variant in Variant::ALL {
        let started = Instant::now();
        let cfg = TrainConfig { epochs, initial_lr: lr, variant, seed: 3, ..TrainConfig::default() };
        let out = train(&data, &model, &cfg)?;
        let test = evaluate(&out.model, &data, &data.test, cfg.max_reviews_per_side)?;
        println!(
            "{variant}: test MSE {:.4} (best epoch {}, {:.1}s)",
            test.mse,
            out.best_epoch,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

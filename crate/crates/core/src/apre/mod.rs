//! The rating model: adapted token features feed an explicit per-aspect
//! channel and an implicit whole-review channel, each aggregated over a
//! user's (or item's) reviews by attention, then combined with entity biases.

mod config;
mod features;
mod model;

pub use config::{Activation, ModelConfig, Variant, LEAKY_SLOPE};
pub use features::ReviewFeatures;
pub use model::{Apre, Forward, ModelMeta, PairVars, Prediction, ReviewVars, SideVars};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(d: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: d,
            feature_dim: d,
            aspect_dim: 3,
            conv_channels: 2,
            kernel_size: 2,
            dropout: 0.0,
            implicit_hidden: 5,
            explicit_hidden: 5,
            ..ModelConfig::default()
        }
    }

    fn model(variant: Variant, d: usize, k: usize, seed: u64) -> Apre {
        Apre::new(
            small_config(d),
            variant,
            (0..k).map(|a| format!("a{a}")).collect(),
            vec![("u0".into(), 4.0), ("u1".into(), 2.0)],
            vec![("t0".into(), 3.0)],
            3.0,
            seed,
        )
        .unwrap()
    }

    fn features(key: usize, rows: usize, d: usize, pairs: Vec<(usize, usize)>, rng: &mut ChaCha8Rng) -> ReviewFeatures {
        ReviewFeatures {
            key,
            review_id: format!("r{key}"),
            tokens: Tensor::uniform(&[rows, d], -1.0, 1.0, rng),
            sentiment_rows: pairs,
        }
    }

    fn zero_networks(m: &mut Apre) {
        for p in m.params.iter_mut() {
            if p.name != "user_bias" && p.name != "item_bias" {
                p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn set(m: &mut Apre, name: &str, data: Vec<f64>) {
        let id = m.params.id(name).unwrap();
        let p = m.params.get_mut(id);
        p.value = Tensor::new(p.value.shape().to_vec(), data).unwrap();
    }

    #[test]
    fn adapt_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = model(Variant::Full, 3, 1, 0);
        let h0 = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);

        zero_networks(&mut m);
        let mut fw = Forward::new(&m, false, 0);
        let x = fw.graph.constant(h0.clone()).unwrap();
        let h1 = fw.adapt(x).unwrap();
        assert!(fw.graph.value(h1).data().iter().all(|&v| v == 0.0));

        set(&mut m, "adapt.weight", vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut fw = Forward::new(&m, false, 0);
        let x = fw.graph.constant(h0.clone()).unwrap();
        let h1 = fw.adapt(x).unwrap();
        assert_eq!(fw.graph.value(h1), &h0);
    }

    #[test]
    fn adapt_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = model(Variant::Full, 4, 1, 3);
        let h0 = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let w = &m.params.by_name("adapt.weight").unwrap().value;
        let b = &m.params.by_name("adapt.bias").unwrap().value;
        let mut fw = Forward::new(&m, false, 0);
        let x = fw.graph.constant(h0.clone()).unwrap();
        let h1 = fw.adapt(x).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut s = b.data()[j];
                for l in 0..4 {
                    s += h0.at(i, l) * w.at(l, j);
                }
                assert!((fw.graph.value(h1).at(i, j) - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn explicit_review_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = model(Variant::Full, 3, 2, 0);
        let mut fw = Forward::new(&m, false, 0);

        let f = features(0, 5, 3, vec![(0, 2)], &mut rng);
        let h1 = fw.graph.constant(f.tokens.clone()).unwrap();
        let rep = fw.explicit_review(h1, &f).unwrap();
        let rep = fw.graph.value(rep).clone();
        assert_eq!(rep.row(0), f.tokens.row(2));
        assert!(rep.row(1).iter().all(|&x| x == 0.0));

        let twice = ReviewFeatures {
            sentiment_rows: vec![(0, 2), (0, 2)],
            ..f.clone()
        };
        let rep2 = fw.explicit_review(h1, &twice).unwrap();
        for (a, b) in fw.graph.value(rep2).row(0).iter().zip(rep.row(0)) {
            assert_eq!(*a, 2.0 * b);
        }

        let none = ReviewFeatures {
            sentiment_rows: vec![],
            ..f
        };
        let rep3 = fw.explicit_review(h1, &none).unwrap();
        assert!(fw.graph.value(rep3).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn aggregation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(Variant::Full, 3, 2, 0);
        let mut fw = Forward::new(&m, false, 0);
        let table = fw.graph.constant(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng)).unwrap();
        let h = fw.graph.constant(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng)).unwrap();

        let (alphas, gs) = fw.explicit_aggregate(&[h], table).unwrap();
        assert_eq!(fw.graph.value(alphas[0]).data(), &[1.0]);
        assert_eq!(fw.graph.value(gs[1]).data(), fw.graph.value(h).row(1));

        let (alphas, _) = fw.explicit_aggregate(&[h, h], table).unwrap();
        assert_eq!(fw.graph.value(alphas[0]).data(), &[0.5, 0.5]);
        assert!(fw.explicit_aggregate(&[], table).is_err());

        let v = fw.graph.constant(Tensor::uniform(&[11], -1.0, 1.0, &mut rng)).unwrap();
        let (beta, _) = fw.implicit_aggregate(&[v]).unwrap();
        assert_eq!(fw.graph.value(beta).data(), &[1.0]);
        let (beta, _) = fw.implicit_aggregate(&[v, v, v]).unwrap();
        for &b in fw.graph.value(beta).data() {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_review_examples() {
        let m = model(Variant::Full, 3, 1, 0);
        let mut fw = Forward::new(&m, false, 0);
        let zeros = fw.graph.constant(Tensor::zeros(&[4, 3])).unwrap();
        let v = fw.implicit_review(zeros).unwrap();
        assert_eq!(fw.graph.value(v).len(), m.config().implicit_dim());
        assert!(fw.graph.value(v).data().iter().all(|&x| x == 0.0));

        let one = fw
            .graph
            .constant(Tensor::matrix(3, 3, vec![9.0, 9.0, 9.0, 0.5, -1.0, 2.0, 7.0, 7.0, 7.0]).unwrap())
            .unwrap();
        let v = fw.implicit_review(one).unwrap();
        let d = fw.graph.value(v).data();
        assert_eq!(&d[..3], &[9.0, 9.0, 9.0]);
        assert_eq!(&d[5..8], &[0.5, -1.0, 2.0]);
        assert_eq!(&d[8..11], &[0.5, -1.0, 2.0]);

        let short = fw.graph.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(fw.implicit_review(short).is_err());
    }

    #[test]
    fn bias_only_predictions_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = model(Variant::Full, 3, 2, 0);
        zero_networks(&mut m);
        set(&mut m, "user_bias", vec![2.0, 4.0]);
        set(&mut m, "item_bias", vec![1.5]);
        let f = features(0, 4, 3, vec![(1, 1)], &mut rng);
        let p = m.predict("u0", "t0", &[&f], &[&f]).unwrap();
        assert_eq!(p.s_hat, 3.5);
        set(&mut m, "item_bias", vec![3.0]);
        let p = m.predict("u1", "t0", &[&f], &[&f]).unwrap();
        assert_eq!((p.s_hat, p.pre_clamp), (5.0, 7.0));
    }

    #[test]
    fn cold_start_uses_half_global_mean_per_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = model(Variant::Full, 3, 2, 0);
        zero_networks(&mut m);
        let f = features(0, 4, 3, vec![], &mut rng);
        let p = m.predict("nobody", "nothing", &[&f], &[]).unwrap();
        assert!(p.cold_user && p.cold_item);
        assert_eq!(p.bias_term, 3.0);
        assert_eq!(p.item_reviews, 0);
    }

    #[test]
    fn without_explicit_zeroed_implicit_is_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = model(Variant::WithoutExplicit, 3, 2, 1);
        for name in ["implicit.mlp.1.weight", "implicit.mlp.1.bias"] {
            let n = m.params.by_name(name).unwrap().value.len();
            set(&mut m, name, vec![0.0; n]);
        }
        let f = features(0, 4, 3, vec![(0, 1)], &mut rng);
        let p = m.predict("u0", "t0", &[&f], &[&f]).unwrap();
        assert_eq!(p.pre_clamp, p.bias_term);
        assert!(p.contributions.is_empty());
    }

    #[test]
    fn variant_parameter_census() {
        let full = model(Variant::Full, 3, 2, 0);
        let no_ex = model(Variant::WithoutExplicit, 3, 2, 0);
        let no_im = model(Variant::WithoutImplicit, 3, 2, 0);
        let names = |m: &Apre| m.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
        let mut union = names(&no_ex);
        union.extend(full.explicit_param_names().into_iter().map(String::from));
        union.sort();
        let mut all = names(&full);
        all.sort();
        assert_eq!(union, all);
        let explicit_scalars: usize = full
            .params
            .iter()
            .filter(|p| p.name.starts_with("explicit."))
            .map(|p| p.value.len())
            .sum();
        assert_eq!(full.params.num_scalars(), no_ex.params.num_scalars() + explicit_scalars);
        assert!(no_im.params.iter().all(|p| !p.name.starts_with("implicit.")));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(Variant::Full, 3, 2, 9);
        let path = dir.path().join("m.bin");
        m.save(&path, None).unwrap();
        let (back, opt) = Apre::load(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.params, m.params);
    }

    #[test]
    fn dropout_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = ModelConfig {
            dropout: 0.5,
            ..small_config(3)
        };
        let m = Apre::new(cfg, Variant::Full, vec!["a".into()], vec![("u".into(), 3.0)], vec![("t".into(), 3.0)], 3.0, 0)
            .unwrap();
        let f = features(0, 6, 3, vec![(0, 2)], &mut rng);
        let score = |seed: u64, train: bool| {
            let mut fw = Forward::new(&m, train, seed);
            let out = fw.pair(Some(0), Some(0), &[&f], &[&f]).unwrap();
            fw.graph.value(out.score).item()
        };
        assert_eq!(score(1, true), score(1, true));
        assert_eq!(score(1, false), score(2, false));
        let trained: Vec<f64> = (0..8).map(|s| score(s, true)).collect();
        assert!(trained.iter().any(|&x| x != trained[0]));
    }
}

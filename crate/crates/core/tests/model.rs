use bathcls::model::{ModelConfig, ModelError, ModelGraph, NodeKind, Variant, WeightSnapshot, MAGIC};
use bathcls::nn::{ActivationKind, Conv2d, Dense, Layer, Mode, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameter count walked from the config alone.
fn expected_params(c: &ModelConfig) -> usize {
    let k2 = c.kernel_size * c.kernel_size;
    let conv = |cin: usize, cout: usize| k2 * cin * cout + cout;
    let mut total = 0;
    let mut cin = c.input_channels;
    for &f in &c.feb_filters {
        total += conv(cin, f);
        cin = f;
    }
    let mut size = c.input_size;
    let w = c.feb_filters[3];
    let mut stack = match c.variant {
        Variant::Decusr => {
            total += conv(c.input_channels, w) + conv(w + w, w);
            if c.use_maxpool {
                size /= 2;
            }
            w
        }
        Variant::DecusrL => {
            total += 4 * w;
            size /= 2;
            w
        }
    };
    for _ in 0..c.rb_count {
        let mut cin = stack;
        for _ in 0..c.rb_depth {
            total += conv(cin, c.rb_filters);
            cin = c.rb_filters;
        }
        if c.use_batchnorm {
            total += 4 * c.rb_filters;
        }
        stack += c.rb_filters;
        if c.use_maxpool {
            size /= 2;
        }
    }
    total += stack + 1;
    total + size * size + 1
}

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        input_size: 32,
        ..ModelConfig::default()
    }
}

fn rand_batch(n: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![n, size, size, 3],
        (0..n * size * size * 3).map(|_| rng.gen::<f32>()).collect(),
    )
    .unwrap()
}

#[test]
fn closed_form_layer_counts() {
    let conv = Conv2d::<f32>::new("c", 3, 3, 8, None, 0).unwrap();
    let n: usize = conv.params().iter().map(|p| p.value.len()).sum();
    assert_eq!(n, 224);
    let dense = Dense::<f32>::new("d", 256, 1, None, 0).unwrap();
    let n: usize = dense.params().iter().map(|p| p.value.len()).sum();
    assert_eq!(n, 257);
}

#[test]
fn param_count_matches_config_walk() {
    for variant in Variant::ALL {
        for pool in [false, true] {
            for bn in [false, true] {
                let c = ModelConfig {
                    use_maxpool: pool,
                    use_batchnorm: bn,
                    ..small(variant)
                };
                let g = ModelGraph::<f32>::build(&c, 0).unwrap();
                assert_eq!(g.count_params(), expected_params(&c), "{variant:?} pool={pool} bn={bn}");
            }
        }
    }
}

#[test]
fn decusr_l_pool_and_norm_nodes() {
    let c = ModelConfig {
        use_maxpool: true,
        use_batchnorm: false,
        ..small(Variant::DecusrL)
    };
    let g = ModelGraph::<f32>::build(&c, 0).unwrap();
    assert_eq!(g.count_kind(NodeKind::MaxPool), c.rb_count + 1);
    assert_eq!(g.count_kind(NodeKind::BatchNorm), 1);
    assert_eq!(g.count_kind(NodeKind::Upsample), 0);
}

#[test]
fn decusr_without_options_has_no_pool_or_norm() {
    let c = ModelConfig {
        use_maxpool: false,
        use_batchnorm: false,
        ..small(Variant::Decusr)
    };
    let g = ModelGraph::<f32>::build(&c, 0).unwrap();
    assert_eq!(g.count_kind(NodeKind::MaxPool), 0);
    assert_eq!(g.count_kind(NodeKind::BatchNorm), 0);
    assert_eq!(g.count_kind(NodeKind::Upsample), 2);
}

#[test]
fn rb_count_zero_is_rejected() {
    let c = ModelConfig {
        rb_count: 0,
        ..ModelConfig::default()
    };
    assert!(matches!(
        ModelGraph::<f32>::build(&c, 0),
        Err(ModelError::InvalidConfig(_))
    ));
}

#[test]
fn lightweight_variant_is_smaller() {
    for pool in [false, true] {
        for bn in [false, true] {
            let base = ModelConfig {
                use_maxpool: pool,
                use_batchnorm: bn,
                ..small(Variant::Decusr)
            };
            let d = ModelGraph::<f32>::build(&base, 0).unwrap();
            let l = ModelGraph::<f32>::build(
                &ModelConfig {
                    variant: Variant::DecusrL,
                    ..base.clone()
                },
                0,
            )
            .unwrap();
            assert!(l.nodes().len() < d.nodes().len());
            assert!(l.count_params() < d.count_params());
        }
    }
}

#[test]
fn default_forward_across_input_sizes() {
    for size in [128, 256, 512, 1024] {
        let c = ModelConfig {
            input_size: size,
            ..ModelConfig::default()
        };
        let mut g = ModelGraph::<f32>::build(&c, 3).unwrap();
        let n = if size >= 512 { 1 } else { 2 };
        let out = g.predict(&rand_batch(n, size, size as u64)).unwrap();
        assert_eq!(out.shape(), &[n, 1]);
        assert!(
            out.data().iter().all(|&p| p > 0.0 && p < 1.0),
            "{size}: {:?}",
            out.data()
        );
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let mut g = ModelGraph::<f32>::build(&small(Variant::DecusrL), 0).unwrap();
    assert!(matches!(
        g.predict(&rand_batch(1, 16, 0)),
        Err(ModelError::InputShape { .. })
    ));
}

#[test]
fn inference_is_repeatable() {
    let mut g = ModelGraph::<f32>::build(&small(Variant::Decusr), 5).unwrap();
    let x = rand_batch(3, 32, 1);
    let a = g.predict(&x).unwrap();
    let b = g.predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn only_train_mode_moves_running_stats() {
    let c = ModelConfig {
        use_batchnorm: true,
        ..small(Variant::Decusr)
    };
    let mut g = ModelGraph::<f32>::build(&c, 0).unwrap();
    let stats = |g: &ModelGraph<f32>| -> Vec<f32> {
        g.params()
            .iter()
            .filter(|p| p.name.contains("moving"))
            .flat_map(|p| p.value.data().to_vec())
            .collect()
    };
    let x = rand_batch(2, 32, 2);
    let before = stats(&g);
    g.forward(&x, Mode::Inference).unwrap();
    assert_eq!(stats(&g), before);
    g.forward(&x, Mode::Train).unwrap();
    assert_ne!(stats(&g), before);
}

#[test]
fn weights_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bwt");
    let c = small(Variant::DecusrL);
    let g = ModelGraph::<f32>::build(&c, 11).unwrap();
    g.snapshot().save(&path).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], MAGIC);

    let mut h = ModelGraph::<f32>::build(&c, 12).unwrap();
    h.load_snapshot(&WeightSnapshot::load(&path).unwrap()).unwrap();
    assert_eq!(h.snapshot(), g.snapshot());
    let x = rand_batch(2, 32, 3);
    let mut g = g;
    assert_eq!(g.predict(&x).unwrap().data(), h.predict(&x).unwrap().data());
}

#[test]
fn weights_from_another_config_are_refused() {
    let g = ModelGraph::<f32>::build(&small(Variant::DecusrL), 0).unwrap();
    let other = ModelConfig {
        activation: ActivationKind::Tanh,
        ..small(Variant::DecusrL)
    };
    let mut h = ModelGraph::<f32>::build(&other, 0).unwrap();
    assert!(matches!(
        h.load_snapshot(&g.snapshot()),
        Err(ModelError::Fingerprint { .. })
    ));
}

#[test]
fn bad_magic_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bwt");
    std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
    assert!(matches!(WeightSnapshot::load(&path), Err(ModelError::Format(_))));
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (
        prop::sample::select(Variant::ALL.to_vec()),
        prop::collection::vec(1usize..5, 4),
        1usize..4,
        1usize..4,
        1usize..3,
        prop::sample::select(vec![1usize, 3, 5]),
        any::<bool>(),
        any::<bool>(),
        prop::sample::select(vec![16usize, 33, 40]),
    )
        .prop_map(
            |(variant, feb, rb_count, rb_filters, rb_depth, k, pool, bn, size)| ModelConfig {
                variant,
                feb_filters: feb,
                rb_count,
                rb_filters,
                rb_depth,
                kernel_size: k,
                activation: ActivationKind::Elu,
                use_maxpool: pool,
                use_batchnorm: bn,
                input_size: size,
                input_channels: 3,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn concat_inputs_share_spatial_shape(c in arb_config()) {
        let g = ModelGraph::<f32>::build(&c, 0).unwrap();
        prop_assert_eq!(g.count_params(), expected_params(&c));
        for node in g.nodes().iter().filter(|n| n.kind() == NodeKind::Concat) {
            let shapes: Vec<&[usize]> = node.inputs.iter().map(|&i| g.nodes()[i].shape.as_slice()).collect();
            for s in &shapes {
                prop_assert_eq!(&s[..3], &shapes[0][..3], "{}", node.name);
            }
            let width: usize = shapes.iter().map(|s| s[3]).sum();
            prop_assert_eq!(node.shape[3], width);
        }
    }

    #[test]
    fn batchnorm_toggle_adds_four_per_channel(c in arb_config()) {
        let on = ModelConfig { use_batchnorm: true, ..c.clone() };
        let off = ModelConfig { use_batchnorm: false, ..c };
        let diff = ModelGraph::<f32>::build(&on, 0).unwrap().count_params()
            - ModelGraph::<f32>::build(&off, 0).unwrap().count_params();
        prop_assert_eq!(diff, 4 * on.rb_filters * on.rb_count);
    }

    #[test]
    fn maxpool_toggle_only_touches_the_dense_layer(c in arb_config()) {
        let on = ModelGraph::<f32>::build(&ModelConfig { use_maxpool: true, ..c.clone() }, 0).unwrap();
        let off = ModelGraph::<f32>::build(&ModelConfig { use_maxpool: false, ..c }, 0).unwrap();
        let sizes = |g: &ModelGraph<f32>| -> Vec<(String, usize)> {
            g.params().iter().map(|p| (p.name.clone(), p.value.len())).collect()
        };
        let (a, b) = (sizes(&on), sizes(&off));
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.0, &y.0);
            if !x.0.starts_with("dense") {
                prop_assert_eq!(x.1, y.1, "{}", x.0);
            }
        }
    }
}

mod common;

use proptest::prelude::*;

use tgcnn::kernels::{
    conv_launch, dense_launch, reduce_launch, reduce_tree, relu_launch, softmax_launch, Activation,
    ConvPoolConfig, ReduceOp,
};
use tgcnn::model::{load_model, save_model};
use tgcnn::oracle;
use tgcnn::pipeline::{argmax, forward, forward_oracle};
use tgcnn::Grid2D;

fn conv_case() -> impl Strategy<Value = (ConvPoolConfig, usize)> {
    (1usize..=16, 1usize..=16, any::<u64>(), 1usize..=6).prop_flat_map(|(iy, ix, seed, workers)| {
        (1..=iy, 1..=ix).prop_map(move |(fy, fx)| {
            let mut r = common::rng(seed);
            let cfg = ConvPoolConfig {
                image: common::random_grid(&mut r, iy, ix),
                filter: common::random_grid(&mut r, fy, fx),
                bias: 0.0,
                pool: false,
            };
            (cfg, workers)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_matches_oracle_bit_exactly((cfg, workers) in conv_case()) {
        let out = conv_launch(&cfg).unwrap().run(workers).unwrap();
        let expected = oracle::conv_ref(&cfg.image, &cfg.filter).unwrap();
        prop_assert_eq!(out, expected);
    }

    #[test]
    fn corner_delta_filter_copies_window((cfg, workers) in conv_case()) {
        let (fy, fx) = (cfg.filter.ydim(), cfg.filter.xdim());
        let mut delta = vec![0.0; fy * fx];
        delta[fy * fx - 1] = 1.0;
        let cfg = ConvPoolConfig { filter: Grid2D::from_reals(fy, fx, &delta).unwrap(), ..cfg };
        let out = conv_launch(&cfg).unwrap().run(workers).unwrap();
        for y in 0..out.ydim() {
            for x in 0..out.xdim() {
                prop_assert_eq!(out.get(y, x).real, cfg.image.get(y, x).real);
            }
        }
    }

    #[test]
    fn pooled_outputs_match_oracle_and_stay_in_range(
        half_y in 1usize..=6, half_x in 1usize..=6, fy in 1usize..=4, fx in 1usize..=4,
        seed in any::<u64>(), bias in -0.5f32..0.5, workers in 1usize..=4,
    ) {
        let mut r = common::rng(seed);
        let (cy, cx) = (2 * half_y, 2 * half_x);
        let cfg = ConvPoolConfig {
            image: common::random_grid(&mut r, cy + fy - 1, cx + fx - 1),
            filter: common::random_grid(&mut r, fy, fx),
            bias,
            pool: true,
        };
        let out = conv_launch(&cfg).unwrap().run(workers).unwrap();
        let conv = oracle::conv_ref(&cfg.image, &cfg.filter).unwrap();
        prop_assert_eq!(&out, &oracle::pool_ref(&conv, bias).unwrap());
        prop_assert!(out.reals().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn dense_matches_oracle(outputs in 1usize..24, inputs in 1usize..40, seed in any::<u64>(), act in 0usize..3) {
        let mut r = common::rng(seed);
        let cfg = common::random_affine(&mut r, outputs, inputs);
        let activation = [Activation::Tanh, Activation::Relu, Activation::None][act];
        let out = dense_launch(&cfg, activation).unwrap().run(3).unwrap().reals();
        let expected = oracle::dense_act_ref(&cfg.weights, &cfg.input, &cfg.bias, activation).unwrap();
        prop_assert_eq!(out, expected);
    }

    #[test]
    fn relu_matches_oracle(values in proptest::collection::vec(-10.0f32..10.0, 1..50)) {
        let out = relu_launch(&values).unwrap().run(4).unwrap().reals();
        prop_assert_eq!(out, oracle::relu_ref(&values));
    }

    #[test]
    fn tree_reduction_matches_linear_scan(values in proptest::collection::vec(0.0f32..1.0, 1..=64)) {
        prop_assert_eq!(
            reduce_tree(&values, ReduceOp::Max, 4).unwrap(),
            oracle::reduce_ref(&values, ReduceOp::Max)
        );
        let tree = reduce_tree(&values, ReduceOp::Sum, 4).unwrap();
        let linear = oracle::reduce_ref(&values, ReduceOp::Sum);
        prop_assert!((tree - linear).abs() <= 1e-6 * linear.abs(), "{} vs {}", tree, linear);
    }

    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-8.0f32..8.0, 1..40), workers in 1usize..6) {
        let probs = softmax_launch(&common::logits_config(&logits)).unwrap().run(workers).unwrap().reals();
        let total: f64 = probs.iter().map(|&p| f64::from(p)).sum();
        prop_assert!((total - 1.0).abs() <= 1e-6, "sum {}", total);
        prop_assert!(probs.iter().all(|&p| p > 0.0 && p <= 1.0));
        let top = argmax(&probs).unwrap().label;
        let max_logit = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        prop_assert_eq!(logits[top], max_logit);
        let reference = oracle::softmax_of(&logits);
        for (a, b) in probs.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn every_kernel_is_race_free(n in 1usize..40, m in 1usize..12, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let affine = common::random_affine(&mut r, n, m);
        let values = common::random_values(&mut r, n, -1.0, 1.0);
        let launches = [
            dense_launch(&affine, Activation::Tanh).unwrap(),
            softmax_launch(&affine).unwrap(),
            relu_launch(&values).unwrap(),
            reduce_launch(&values, ReduceOp::Max).unwrap(),
            reduce_launch(&values, ReduceOp::Sum).unwrap(),
        ];
        for launch in &launches {
            prop_assert!(launch.check_races().unwrap().is_empty(), "{}", launch.program.name());
        }
    }

    #[test]
    fn worker_count_never_changes_kernel_output(n in 1usize..40, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let launch = softmax_launch(&common::random_affine(&mut r, n, 7)).unwrap();
        let baseline = launch.run_all(1).unwrap();
        for workers in [2, 3, 8, 64] {
            prop_assert_eq!(&launch.run_all(workers).unwrap(), &baseline);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_round_trips_through_json(seed in any::<u64>()) {
        let model = common::random_model(seed);
        let text = save_model(&model);
        let back = load_model(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(save_model(&back), text);
    }

    #[test]
    fn forward_agrees_with_oracle(seed in any::<u64>()) {
        let model = common::random_model(seed);
        let mut r = common::rng(seed);
        let image = common::random_image(&mut r, model.input.height, model.input.width);
        let (probs, trace) = forward(&model, &image, 3).unwrap();
        let reference = forward_oracle(&model, &image).unwrap();
        prop_assert_eq!(trace.layers.len(), model.layers.len());
        for (a, b) in probs.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
        let total: f64 = probs.iter().map(|&p| f64::from(p)).sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
    }
}

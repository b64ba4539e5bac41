use depnet_tensor::{Adam, AdamConfig, Graph, ParamGrads, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn softmax_rows_sum_to_one() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..9));
        let data = (0..r * c).map(|_| rng.random_range(-20.0..20.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(r, c, data).unwrap());
        for axis in [0, 1] {
            let s = g.softmax(x, axis).unwrap();
            let sums = g.sum_axis(s, axis).unwrap();
            for v in g.value(sums).data() {
                assert!((v - 1.0).abs() <= 1e-12, "seed {seed} axis {axis}: {v}");
            }
            assert!(g.value(s).data().iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn conv_pool_shape_law() {
    for len in 1..=64usize {
        for window in 1..=len.min(5) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[len, 2], 0.1));
            let w = g.constant(Tensor::full(&[window, 2, 3], 0.1));
            let c = g.conv1d(x, w).unwrap();
            let conv_len = len - window + 1;
            assert_eq!(g.value(c).shape(), &[conv_len, 3]);
            for pool in 1..=4 {
                let p = g.maxpool1d(c, pool);
                if conv_len / pool == 0 {
                    assert!(p.is_err());
                } else {
                    assert_eq!(g.value(p.unwrap()).shape(), &[conv_len / pool, 3]);
                }
            }
        }
        // window longer than the input is rejected
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[len, 1], 0.1));
        let w = g.constant(Tensor::full(&[len + 1, 1, 1], 0.1));
        assert!(g.conv1d(x, w).is_err());
    }
}

fn train_ten_steps(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add(
        "w",
        Tensor::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
    );
    let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let target = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..10 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.param(&store, w);
        let logits = g.matmul(xv, wv).unwrap();
        let p = g.softmax(logits, 1).unwrap();
        let loss = g.cross_entropy(p, &target).unwrap();
        let grads = g.backward(loss).unwrap();
        let pg: ParamGrads = g.param_grads(&grads);
        adam.step(&mut store, &pg).unwrap();
    }
    store.get(w).data().to_vec()
}

#[test]
fn adam_training_is_bitwise_deterministic() {
    let a = train_ten_steps(5);
    let b = train_ten_steps(5);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn mean_gradient_is_one_over_n(n in 1usize..50, fill in -5.0f64..5.0) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[n], fill).with_grad());
        let m = g.mean(x).unwrap();
        let grads = g.backward(m).unwrap();
        for v in grads.get(x).unwrap().data() {
            prop_assert!((v - 1.0 / n as f64).abs() < 1e-15);
        }
    }
}

use depnet_tensor::gradcheck::{check, DEFAULT_STEP};
use depnet_tensor::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-scale..scale);
    }
    t
}

/// Positive values bounded away from zero, for ops with a kink at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.random_range(0.05..1.5);
        *v = if rng.random_bool(0.5) { mag } else { -mag };
    }
    t
}

/// Reduces an arbitrary output to a scalar with fixed random weights so every
/// output entry contributes a distinct gradient.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = g.constant(rand_tensor(&mut rng, &shape, 1.0));
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn run(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let report = check(&inputs, DEFAULT_STEP, |g, v| {
            let out = f(g, v)?;
            project(g, out, seed)
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(
            report.max_rel_error <= TOL,
            "{name} seed {seed}: rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
    println!("{name}: max relative error {worst:.3e}");
}

#[test]
fn matmul() {
    run(
        "matmul",
        |r| vec![rand_tensor(r, &[3, 4], 1.0), rand_tensor(r, &[4, 5], 1.0)],
        |g, v| g.matmul(v[0], v[1]),
    );
}

#[test]
fn add_and_broadcast_add() {
    run(
        "add",
        |r| vec![rand_tensor(r, &[3, 4], 1.0), rand_tensor(r, &[3, 4], 1.0)],
        |g, v| g.add(v[0], v[1]),
    );
    run(
        "add_broadcast",
        |r| vec![rand_tensor(r, &[3, 4], 1.0), rand_tensor(r, &[1, 4], 1.0)],
        |g, v| g.add(v[0], v[1]),
    );
    run(
        "sub_broadcast",
        |r| vec![rand_tensor(r, &[3, 4], 1.0), rand_tensor(r, &[1, 4], 1.0)],
        |g, v| g.sub(v[0], v[1]),
    );
}

#[test]
fn mul_and_affine() {
    run(
        "mul",
        |r| vec![rand_tensor(r, &[2, 5], 1.0), rand_tensor(r, &[2, 5], 1.0)],
        |g, v| g.mul(v[0], v[1]),
    );
    run(
        "affine",
        |r| vec![rand_tensor(r, &[2, 3], 1.0)],
        |g, v| g.affine(v[0], -1.5, 1.0),
    );
}

#[test]
fn concat() {
    run(
        "concat_rows",
        |r| vec![rand_tensor(r, &[2, 3], 1.0), rand_tensor(r, &[1, 3], 1.0)],
        |g, v| g.concat(&[v[0], v[1]], 0),
    );
    run(
        "concat_cols",
        |r| vec![rand_tensor(r, &[2, 3], 1.0), rand_tensor(r, &[2, 2], 1.0)],
        |g, v| g.concat(&[v[0], v[1], v[0]], 1),
    );
}

#[test]
fn reductions() {
    run("mean", |r| vec![rand_tensor(r, &[3, 3], 1.0)], |g, v| g.mean(v[0]));
    run("sum", |r| vec![rand_tensor(r, &[3, 3], 1.0)], |g, v| g.sum(v[0]));
    run("sum_axis0", |r| vec![rand_tensor(r, &[4, 3], 1.0)], |g, v| g.sum_axis(v[0], 0));
    run("sum_axis1", |r| vec![rand_tensor(r, &[4, 3], 1.0)], |g, v| g.sum_axis(v[0], 1));
}

#[test]
fn activations() {
    run("tanh", |r| vec![rand_tensor(r, &[3, 4], 2.0)], |g, v| g.tanh(v[0]));
    run("sigmoid", |r| vec![rand_tensor(r, &[3, 4], 3.0)], |g, v| g.sigmoid(v[0]));
    run("relu", |r| vec![away_from_zero(r, &[3, 4])], |g, v| g.relu(v[0]));
}

#[test]
fn softmax_both_axes() {
    run("softmax_axis1", |r| vec![rand_tensor(r, &[3, 4], 2.0)], |g, v| g.softmax(v[0], 1));
    run("softmax_axis0", |r| vec![rand_tensor(r, &[5, 2], 2.0)], |g, v| g.softmax(v[0], 0));
}

#[test]
fn conv1d() {
    run(
        "conv1d",
        |r| vec![rand_tensor(r, &[10, 3], 1.0), rand_tensor(r, &[3, 3, 4], 1.0)],
        |g, v| g.conv1d(v[0], v[1]),
    );
}

#[test]
fn maxpool1d() {
    run("maxpool1d", |r| vec![rand_tensor(r, &[9, 3], 1.0)], |g, v| g.maxpool1d(v[0], 4));
    run(
        "adaptive_maxpool",
        |r| vec![rand_tensor(r, &[2, 11], 1.0)],
        |g, v| g.adaptive_maxpool_cols(v[0], 4),
    );
}

#[test]
fn embedding_lookup() {
    run(
        "embedding_lookup",
        |r| vec![rand_tensor(r, &[6, 4], 1.0)],
        |g, v| g.embedding_lookup(v[0], &[0, 3, 3, 5, 1]),
    );
}

#[test]
fn cross_entropy() {
    run(
        "cross_entropy",
        |r| vec![rand_tensor(r, &[2, 3], 2.0)],
        |g, v| {
            let p = g.softmax(v[0], 1)?;
            let target = Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
            g.cross_entropy(p, &target)
        },
    );
}

#[test]
fn rows_and_reshape() {
    run("rows", |r| vec![rand_tensor(r, &[5, 3], 1.0)], |g, v| g.rows(v[0], 1, 3));
    run("reshape", |r| vec![rand_tensor(r, &[2, 6], 1.0)], |g, v| g.reshape(v[0], &[3, 4]));
}

#[test]
fn three_layer_composite() {
    run(
        "composite",
        |r| {
            vec![
                rand_tensor(r, &[4, 5], 1.0),
                rand_tensor(r, &[5, 6], 0.8),
                rand_tensor(r, &[1, 6], 0.5),
                rand_tensor(r, &[6, 3], 0.8),
                rand_tensor(r, &[3, 2], 0.8),
            ]
        },
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add(h, v[2])?;
            let h = g.tanh(h)?;
            let h = g.matmul(h, v[3])?;
            let h = g.sigmoid(h)?;
            let h = g.matmul(h, v[4])?;
            g.softmax(h, 1)
        },
    );
}

#[test]
fn quadratic_closed_form() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::row(vec![1.0, 2.0]).unwrap().with_grad());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
}

//! Clustering and topic recovery against exact or planted answers.

use std::collections::HashSet;

use depnet::summarize::{kmeans, squared_distance};
use depnet::synth::planted_corpus;
use depnet::topicmodel::{fit, LdaConfig};
use proptest::prelude::*;

fn sse(points: &[Vec<f64>], groups: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(groups).filter(|(_, &g)| g == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for p in &members {
            for (m, x) in mean.iter_mut().zip(p.iter()) {
                *m += x / members.len() as f64;
            }
        }
        total += members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>();
    }
    total
}

/// Optimal inertia over every assignment of points to `k` labels.
fn brute_force(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut groups = vec![0; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(sse(points, &groups, k));
        let mut i = 0;
        while i < n {
            groups[i] += 1;
            if groups[i] < k {
                break;
            }
            groups[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn blobs(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=7, any::<u64>()).prop_map(move |(per, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for c in 0..k {
            let center = [20.0 * c as f64, -15.0 * c as f64];
            for _ in 0..per.min(8 / k).max(1) {
                pts.push(center.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect());
            }
        }
        pts
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn separated_blobs_reach_the_optimum(points in blobs(2), seed in any::<u64>()) {
        let km = kmeans(&points, 2, seed, 100).unwrap();
        let opt = brute_force(&points, 2);
        prop_assert!(km.inertia <= opt * 1.05 + 1e-9, "{} vs {}", km.inertia, opt);
    }

    #[test]
    fn three_blobs_reach_the_optimum(points in blobs(3), seed in any::<u64>()) {
        let km = kmeans(&points, 3, seed, 100).unwrap();
        let opt = brute_force(&points, 3);
        prop_assert!(km.inertia <= opt * 1.05 + 1e-9, "{} vs {}", km.inertia, opt);
    }

    #[test]
    fn lloyd_invariants(points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..12), seed in any::<u64>()) {
        let k = 3.min(points.len());
        let km = kmeans(&points, k, seed, 100).unwrap();
        prop_assert!(km.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert!((sse(&points, &km.assignments, k) - km.inertia).abs() < 1e-9);
        for (p, &a) in points.iter().zip(&km.assignments) {
            let own = squared_distance(p, &km.centroids[a]);
            prop_assert!(km.centroids.iter().all(|c| own <= squared_distance(p, c) + 1e-9));
        }
        prop_assert_eq!(km.assignments, kmeans(&points, k, seed, 100).unwrap().assignments);
    }
}

#[test]
fn lda_recovers_planted_topics() {
    let corpus = planted_corpus(5, 10, 100, 40, 3);
    let model = fit(
        &corpus.docs,
        LdaConfig {
            topics: 5,
            seed: 3,
            ..LdaConfig::default()
        },
    )
    .unwrap();
    let planted: Vec<HashSet<&String>> = corpus.topics.iter().map(|t| t.iter().collect()).collect();
    let mut hit = HashSet::new();
    for k in 0..5 {
        let top = model.top_words(k, 5).unwrap();
        let j = planted.iter().position(|p| top.iter().all(|w| p.contains(w)));
        assert!(j.is_some_and(|j| hit.insert(j)), "topic {k}: {top:?}");
    }
}

#[test]
fn lda_is_seeded() {
    let corpus = planted_corpus(3, 6, 30, 15, 1);
    let cfg = LdaConfig {
        topics: 3,
        iters: 50,
        seed: 9,
        ..LdaConfig::default()
    };
    let a = fit(&corpus.docs, cfg).unwrap();
    assert_eq!(a, fit(&corpus.docs, cfg).unwrap());
    assert_ne!(a.phi, fit(&corpus.docs, LdaConfig { seed: 10, ..cfg }).unwrap().phi);
    for row in a.phi.iter().chain(&a.theta) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

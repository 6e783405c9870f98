use std::sync::OnceLock;

use gesa_core::recsys::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Vectors = Vec<(String, Vec<f64>)>;

fn gaussian_vectors(n: usize, d: usize, seed: u64) -> Vectors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (format!("v{i:05}"), (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect()
}

fn benchmark_vectors() -> &'static Vectors {
    static CELL: OnceLock<Vectors> = OnceLock::new();
    CELL.get_or_init(|| gaussian_vectors(10_000, 64, 42))
}

fn benchmark() -> (&'static Vectors, &'static IvfPqIndex) {
    static CELL: OnceLock<IvfPqIndex> = OnceLock::new();
    let vectors = benchmark_vectors();
    let index = CELL.get_or_init(|| build_ivfpq(vectors, &IvfPqConfig { nlist: Some(64), m: 8, kmeans_iters: 20, seed: 7 }).unwrap());
    (vectors, index)
}

fn queries(n: usize) -> Vec<Vec<f64>> {
    gaussian_vectors(n, 64, 4242).into_iter().map(|(_, v)| v).collect()
}

#[test]
fn every_id_in_exactly_one_list() {
    let (vectors, index) = benchmark();
    let mut count = vec![0; vectors.len()];
    for &i in index.lists.iter().flatten() {
        count[i as usize] += 1;
    }
    assert!(count.iter().all(|&c| c == 1));
    assert_eq!(index.lists.len(), 64);
}

#[test]
fn single_list_and_determinism() {
    let vectors = gaussian_vectors(300, 16, 1);
    let cfg = IvfPqConfig { nlist: Some(1), m: 4, kmeans_iters: 5, seed: 3 };
    let a = build_ivfpq(&vectors, &cfg).unwrap();
    assert_eq!(a.lists.len(), 1);
    assert_eq!(a.lists[0].len(), 300);
    let b = build_ivfpq(&vectors, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(build_ivfpq(&vectors, &IvfPqConfig { m: 5, ..cfg.clone() }).is_err());
    assert!(build_ivfpq(&vectors[..3], &IvfPqConfig { nlist: Some(4), ..cfg }).is_err());
}

#[test]
fn self_match_ranks_first() {
    let (vectors, index) = benchmark();
    for i in [0, 17, 9_999] {
        let r = ann_query(index, &vectors[i].1, 5, index.nlist, true).unwrap();
        assert_eq!(r.hits[0].id, vectors[i].0);
        assert_eq!(r.hits[0].distance, 0.0);
    }
}

#[test]
fn full_scan_matches_brute_force() {
    let vectors = gaussian_vectors(400, 16, 9);
    let index = build_ivfpq(&vectors, &IvfPqConfig { nlist: Some(8), m: 4, kmeans_iters: 5, seed: 1 }).unwrap();
    for q in queries(5) {
        let q = &q[..16];
        let ann = ann_query(&index, q, 400, 8, true).unwrap();
        assert!(!ann.truncated);
        assert_eq!(ann.hits, exact_knn(&vectors, q, 400));
        let over = ann_query(&index, q, 500, 8, true).unwrap();
        assert!(over.truncated);
        assert_eq!(over.hits.len(), 400);
    }
    assert!(ann_query(&index, &[0.0; 16], 1, 9, false).is_err());
    assert!(ann_query(&index, &[0.0; 16], 0, 1, false).is_err());
}

/// With 8-byte codes the best `4k` PQ hits often miss true neighbours of
/// isotropic Gaussian data, so exactness is checked with 2-dimensional
/// subspaces, where the codes are fine enough.
#[test]
fn full_probe_rerank_agrees_with_exact_scan() {
    let vectors = benchmark_vectors();
    let index = build_ivfpq(vectors, &IvfPqConfig { nlist: Some(64), m: 32, kmeans_iters: 20, seed: 7 }).unwrap();
    let index = &index;
    for q in queries(100) {
        let ann = ann_query(index, &q, 10, index.nlist, true).unwrap();
        assert_eq!(ann.hits, exact_knn(vectors, &q, 10));
    }
}

fn mean_recall(nprobe: usize, rerank: bool) -> f64 {
    let (vectors, index) = benchmark();
    let qs = queries(100);
    qs.iter()
        .map(|q| {
            let ann = ann_query(index, q, 10, nprobe, rerank).unwrap();
            recall_at(&ann.hits, &exact_knn(vectors, q, 10))
        })
        .sum::<f64>()
        / qs.len() as f64
}

#[test]
fn recall_grows_with_nprobe() {
    for (rerank, pinned) in [(false, PINNED_PQ), (true, PINNED_RERANK)] {
        let recalls: Vec<f64> = [1, 4, 16, 64].iter().map(|&p| mean_recall(p, rerank)).collect();
        println!("rerank {rerank}: recall@10 for nprobe 1, 4, 16, 64: {recalls:?}");
        assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
        for (r, p) in recalls.iter().zip(pinned) {
            assert!((r - p).abs() < 1e-9, "{recalls:?}");
        }
    }
}

const PINNED_PQ: [f64; 4] = [0.071, 0.149, 0.223, 0.268];
const PINNED_RERANK: [f64; 4] = [0.087, 0.228, 0.439, 0.542];

#[test]
fn binary_round_trip_and_corruption() {
    let vectors = gaussian_vectors(300, 16, 2);
    let index = build_ivfpq(&vectors, &IvfPqConfig { nlist: Some(4), m: 4, kmeans_iters: 3, seed: 5 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.bin");
    index.save(&path).unwrap();
    let back = IvfPqIndex::load(&path).unwrap();
    assert_eq!(back, index);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"GESAIVF1");
    let expected_len = 8 + 4 * 3 + 8 * 2 + 8 * (4 * 16 + 4 * 256 * 4) + 8 * 4 + 4 * 300 + 300 * (4 + 6 + 4 + 8 * 16);
    assert_eq!(bytes.len(), expected_len);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(IvfPqIndex::read_from(&mut bad.as_slice()).is_err());
    assert!(IvfPqIndex::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(IvfPqIndex::read_from(&mut extra.as_slice()).is_err());
}

fn rank_one(n: usize, m: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<Rating>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ratings = Vec::new();
    for i in 0..n {
        for j in 0..m {
            ratings.push(Rating { candidate: format!("c{i}"), role: format!("r{j}"), value: a[i] * b[j] });
        }
    }
    (a, b, ratings)
}

fn rmse(model: &FactorModel, ratings: &[Rating]) -> f64 {
    let se: f64 = ratings.iter().map(|r| (model.predict(&r.candidate, &r.role).unwrap() - r.value).powi(2)).sum();
    (se / ratings.len() as f64).sqrt()
}

#[test]
fn rank_one_matrix_is_recovered() {
    let (_, _, ratings) = rank_one(200, 150, 3);
    for k in [1, 4, 32] {
        let model = train_mf(&ratings, &MfConfig { k, ..Default::default() }).unwrap();
        let err = rmse(&model, &ratings);
        assert!(err <= 1e-3, "k = {k}: rmse {err}");
        assert_eq!(model.u.dim(), (200, k));
        assert_eq!(model.v.dim(), (150, k));
    }
}

#[test]
fn binary_rank_one_scores_hits_high() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a: Vec<bool> = (0..60).map(|_| rng.random_bool(0.5)).collect();
    let b: Vec<bool> = (0..30).map(|_| rng.random_bool(0.5)).collect();
    let mut ratings = Vec::new();
    for i in 0..60 {
        for j in 0..30 {
            let hit = a[i] && b[j];
            ratings.push(Rating { candidate: format!("c{i}"), role: format!("r{j}"), value: if hit { LOGIT_TARGET } else { -LOGIT_TARGET } });
        }
    }
    let model = train_mf(&ratings, &MfConfig::default()).unwrap();
    for i in 0..60 {
        for j in 0..30 {
            let s = cf_score(&model, &format!("c{i}"), &format!("r{j}")).unwrap();
            if a[i] && b[j] {
                assert!(s > 0.9, "{i} {j}: {s}");
            } else {
                assert!(s < 0.1);
            }
        }
    }
    assert!(cf_score(&model, "c999", "r0").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn als_loss_never_increases(seed in 0u64..1000, k in 1usize..6, density in 0.2..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ratings = Vec::new();
        for i in 0..15 {
            for j in 0..10 {
                if rng.random_bool(density) {
                    ratings.push(Rating { candidate: format!("c{i}"), role: format!("r{j}"), value: rng.random_range(-3.0..3.0) });
                }
            }
        }
        prop_assume!(!ratings.is_empty());
        let cfg = MfConfig { k, sweeps: 8, seed, ..Default::default() };
        let model = train_mf(&ratings, &cfg).unwrap();
        for w in model.loss_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        let again = train_mf(&ratings, &cfg).unwrap();
        prop_assert_eq!(model.u, again.u);
        prop_assert!(model.v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn hybrid_stays_within_component_range(
        c in 0.0..=1.0f64, f in 0.0..=1.0f64, g in 0.0..=1.0f64, a in 0usize..=20, b in 0usize..=20,
    ) {
        prop_assume!(a + b <= 20);
        let w = FusionWeights::new(a as f64 / 20.0, b as f64 / 20.0, (20 - a - b) as f64 / 20.0).unwrap();
        let s = hybrid_score(&ComponentScores { content: c, collaborative: f, graph: g }, &w).unwrap();
        let lo = c.min(f).min(g);
        let hi = c.max(f).max(g);
        prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
    }
}

#[test]
fn fusion_recovers_the_informative_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let history: Vec<(ComponentScores, bool)> = (0..200)
        .map(|i| {
            let y = i % 3 == 0;
            let content = if y { rng.random_range(0.6..1.0) } else { rng.random_range(0.0..0.4) };
            (ComponentScores { content, collaborative: rng.random(), graph: rng.random() }, y)
        })
        .collect();
    let w = fit_fusion_weights(&history, 5, 0.05, 3).unwrap();
    assert_eq!(w, FusionWeights::new(1.0, 0.0, 0.0).unwrap());
    assert_eq!(fit_fusion_weights(&history, 5, 0.05, 3).unwrap(), w);

    let collaborative_only: Vec<(ComponentScores, bool)> = history
        .iter()
        .map(|(s, y)| (ComponentScores { content: 0.5, collaborative: s.content, graph: s.graph }, *y))
        .collect();
    // A constant content score leaves every ranking with β > 0 unchanged, so
    // the tie-break keeps as much α as possible.
    let w = fit_fusion_weights(&collaborative_only, 5, 0.05, 3).unwrap();
    assert!((w.alpha - 0.95).abs() < 1e-9 && (w.beta - 0.05).abs() < 1e-9 && w.gamma == 0.0, "{w:?}");
}

#[test]
fn factor_shapes_follow_ids() {
    let ratings = vec![
        Rating { candidate: "a".into(), role: "x".into(), value: 1.0 },
        Rating { candidate: "b".into(), role: "x".into(), value: -1.0 },
    ];
    let model = train_mf(&ratings, &MfConfig { k: 3, ..Default::default() }).unwrap();
    assert_eq!(model.candidate_ids, ["a", "b"]);
    assert_eq!(model.v.dim(), (1, 3));
    assert!(train_mf(&[], &MfConfig::default()).is_err());
    let zero = Array2::<f64>::zeros((1, 1));
    assert_eq!(zero.sum(), 0.0);
}

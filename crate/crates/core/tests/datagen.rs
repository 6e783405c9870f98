use gesa_core::datagen::*;
use gesa_core::model::{validate_dataset, Dataset};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gap(spec: &GenSpec) -> f64 {
    let ds = generate_dataset(spec).unwrap();
    let (category, label) = designated_subgroup(spec).unwrap();
    let rates = cluster_rates(&ds, &cluster_skill_ids(spec), &category);
    let inside = rates[&label];
    let outside: Vec<f64> = rates.iter().filter(|(l, _)| **l != label).map(|(_, r)| *r).collect();
    assert_eq!(outside.len(), 1);
    inside - outside[0]
}

fn five_k(bias: f64, seed: u64) -> GenSpec {
    GenSpec { bias_strength: bias, seed, ..GenSpec::with_counts([5000, 40, 40, 10, 10, 4]) }
}

#[test]
fn bias_strength_sets_the_rate_gap() {
    for seed in [1, 2] {
        let g = gap(&five_k(0.4, seed));
        println!("bias 0.4 seed {seed}: gap {g:.4}");
        assert!((g - 0.4).abs() <= 0.05, "{g}");
    }
}

#[test]
fn zero_bias_means_no_gap() {
    for seed in [1, 2] {
        let g = gap(&five_k(0.0, seed));
        println!("bias 0 seed {seed}: gap {g:.4}");
        assert!(g.abs() <= 0.03, "{g}");
    }
}

#[test]
fn ground_truth_follows_the_planting_rule() {
    let spec = GenSpec { seed: 4, ..GenSpec::with_counts([400, 30, 25, 4, 4, 3]) };
    let ds = generate_dataset(&spec).unwrap();
    let mut planted = 0;
    for c in &ds.candidates {
        for r in &ds.roles {
            let listed = ds.ground_truth.iter().any(|m| m.candidate_id == c.id && m.role_id == r.id);
            assert_eq!(listed, is_planted_match(c, r), "{} {}", c.id, r.id);
            planted += usize::from(listed);
        }
    }
    assert!(planted > 0);
}

fn shuffled_json(ds: &Dataset, seed: u64) -> String {
    let mut copy = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    copy.candidates.shuffle(&mut rng);
    copy.roles.shuffle(&mut rng);
    copy.skills.shuffle(&mut rng);
    copy.interactions.shuffle(&mut rng);
    copy.ground_truth.shuffle(&mut rng);
    serde_json::to_string(&copy).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_datasets_validate_and_round_trip(
        seed in 0u64..10_000,
        candidates in 1usize..80,
        roles in 1usize..12,
        bias in 0.0..=1.0f64,
        proxy in 0.0..=1.0f64,
    ) {
        let spec = GenSpec {
            seed,
            bias_strength: bias,
            proxy_strength: proxy,
            preference_length: roles.min(3),
            ..GenSpec::with_counts([candidates, roles, 20, 3, 3, 2])
        };
        let ds = generate_dataset(&spec).unwrap();
        prop_assert!(validate_dataset(&ds).is_empty());
        let canonical = ds.to_canonical_json();
        let back = Dataset::from_json_str(&shuffled_json(&ds, seed)).unwrap();
        prop_assert_eq!(back.to_canonical_json(), canonical.clone());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.gesa.json");
        back.write(&path).unwrap();
        prop_assert_eq!(std::fs::read_to_string(&path).unwrap(), canonical);
        prop_assert_eq!(Dataset::read(&path).unwrap(), ds);
    }
}

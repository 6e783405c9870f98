use gesa_core::datagen::generate_dataset;
use gesa_core::debias::*;
use gesa_core::embed::HashEmbedder;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(1, |a| a.parse().unwrap());
    let ds = generate_dataset(&benchmark_spec(seed)).unwrap();
    let mask = holdout_mask(ds.candidates.len(), BENCHMARK_HOLDOUT, seed);
    let provider = HashEmbedder::new(BENCHMARK_EMBED_DIM).unwrap();
    let data = prepare_data(&ds, &provider, BENCHMARK_CATEGORY, &mask).unwrap();
    for lambda in [0.0, 0.5] {
        let cfg = DebiasConfig { lambda, seed, ..Default::default() };
        let (model, _) = train_adversarial(&data, &cfg).unwrap();
        let e = evaluate_encoder(&model, &data, &ds, BENCHMARK_CATEGORY, &mask, seed).unwrap();
        println!("lambda {lambda}: leakage {:.3} auc {:.3} fairness {:.3}", e.leakage, e.allocation_auc, e.fairness.composite);
    }
}

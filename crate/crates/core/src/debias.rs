//! Adversarial debiasing with a gradient-reversal layer, a leakage probe and
//! group fairness metrics.
//!
//! An encoder maps input embeddings to representations `z`. Three heads are
//! trained jointly from one objective
//!
//! ```text
//! total = allocation − λ·adversarial + β·reconstruction
//! ```
//!
//! where the allocation loss is the cross-entropy of `sigmoid(z_c · z_r)`
//! against pair labels, the adversary predicts the sensitive attribute from
//! `z`, and the decoder reconstructs the input embedding. The adversary
//! minimizes its own cross-entropy; the encoder receives its gradient through
//! a reversal layer scaled by `−λ`.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::GenSpec;
use crate::embed::EmbeddingProvider;
use crate::error::{GesaError, Result};
use crate::hetgraph::{candidate_text, role_text};
use crate::model::Dataset;
use crate::nn::{sigmoid, softmax_rows, softplus, Adam, TwoLayer, TwoLayerGrad};

/// Identity in the forward pass.
pub fn reverse_forward(x: &Array2<f64>) -> Array2<f64> {
    x.clone()
}

/// Backward pass of the reversal layer: `−λ · gradient`.
pub fn reverse_scale(gradient: &Array2<f64>, lambda: f64) -> Array2<f64> {
    gradient * -lambda
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    pub lambda: f64,
    pub beta: f64,
    pub encoder_hidden: usize,
    pub representation_dim: usize,
    pub adversary_hidden: usize,
    pub decoder_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Adversary updates per epoch. The first uses the joint gradient; the
    /// rest refit the adversary to the updated representations.
    pub adversary_steps: usize,
    pub seed: u64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            beta: 0.1,
            encoder_hidden: 32,
            representation_dim: 16,
            adversary_hidden: 32,
            decoder_hidden: 32,
            epochs: 500,
            learning_rate: 0.01,
            adversary_steps: 10,
            seed: 0,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GesaError::InvalidArgument("lambda and beta must be non-negative".into()));
        }
        if self.adversary_steps == 0 {
            return Err(GesaError::InvalidArgument("adversary_steps must be at least 1".into()));
        }
        if self.encoder_hidden == 0 || self.representation_dim == 0 || self.adversary_hidden == 0 || self.decoder_hidden == 0 {
            return Err(GesaError::InvalidArgument("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub allocation: f64,
    pub adversarial: f64,
    pub reconstruction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebiasedEncoder {
    pub encoder: TwoLayer,
    pub adversary: TwoLayer,
    pub decoder: TwoLayer,
}

impl DebiasedEncoder {
    pub fn init(input_dim: usize, classes: usize, config: &DebiasConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = TwoLayer::new(&mut rng, input_dim, config.encoder_hidden, config.representation_dim);
        let adversary = TwoLayer::new(&mut rng, config.representation_dim, config.adversary_hidden, classes);
        let decoder = TwoLayer::new(&mut rng, config.representation_dim, config.decoder_hidden, input_dim);
        Self { encoder, adversary, decoder }
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.encoder.input_dim() {
            return Err(GesaError::DimensionMismatch { expected: self.encoder.input_dim(), actual: x.ncols() });
        }
        Ok(self.encoder.forward(x).out)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.adversary.is_finite() && self.decoder.is_finite()
    }
}

/// Labelled candidate-role pair (`candidate` and `role` index the rows of
/// the candidate and role matrices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub candidate: usize,
    pub role: usize,
    pub label: bool,
}

/// Training data: candidate and role input embeddings, labelled pairs and
/// one sensitive class index per candidate.
#[derive(Clone, Debug)]
pub struct DebiasData {
    pub candidates: Array2<f64>,
    pub roles: Array2<f64>,
    pub pairs: Vec<LabeledPair>,
    pub sensitive: Vec<usize>,
}

impl DebiasData {
    pub fn check(&self) -> Result<usize> {
        let n = self.candidates.nrows();
        if n == 0 || self.roles.nrows() == 0 {
            return Err(GesaError::Empty("candidates or roles".into()));
        }
        if self.roles.ncols() != self.candidates.ncols() {
            return Err(GesaError::DimensionMismatch { expected: self.candidates.ncols(), actual: self.roles.ncols() });
        }
        if self.sensitive.len() != n {
            return Err(GesaError::DimensionMismatch { expected: n, actual: self.sensitive.len() });
        }
        if self.pairs.iter().any(|p| p.candidate >= n || p.role >= self.roles.nrows()) {
            return Err(GesaError::InvalidArgument("pair index out of range".into()));
        }
        let positives = self.pairs.iter().filter(|p| p.label).count();
        if positives == 0 || positives == self.pairs.len() {
            return Err(GesaError::InvalidArgument("pair labels must contain both classes".into()));
        }
        let classes = self.sensitive.iter().copied().max().unwrap() + 1;
        let distinct = self.sensitive.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(GesaError::InvalidArgument("sensitive labels must contain two classes".into()));
        }
        if self.candidates.iter().chain(self.roles.iter()).any(|v| !v.is_finite()) {
            return Err(GesaError::InvalidArgument("non-finite input embedding".into()));
        }
        Ok(classes)
    }
}

#[derive(Clone, Debug)]
pub struct DebiasGradients {
    pub encoder: TwoLayerGrad,
    pub adversary: TwoLayerGrad,
    pub decoder: TwoLayerGrad,
}

/// Mean cross-entropy of softmax `logits` against class indices, and its
/// gradient with respect to the logits.
fn softmax_cross_entropy(logits: &Array2<f64>, classes: &[usize]) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    let n = classes.len() as f64;
    let mut loss = 0.0;
    for (i, &c) in classes.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
        loss += lse - row[c];
        probs[[i, c]] -= 1.0;
    }
    (loss / n, probs / n)
}

/// Loss terms and gradients of the joint objective.
pub struct DebiasObjective<'d> {
    data: &'d DebiasData,
    lambda: f64,
    beta: f64,
}

impl<'d> DebiasObjective<'d> {
    pub fn new(data: &'d DebiasData, lambda: f64, beta: f64) -> Self {
        Self { data, lambda, beta }
    }

    pub fn losses(&self, model: &DebiasedEncoder) -> LossBreakdown {
        self.evaluate(model, false).0
    }

    pub fn losses_and_gradients(&self, model: &DebiasedEncoder) -> (LossBreakdown, DebiasGradients) {
        let (l, g) = self.evaluate(model, true);
        (l, g.unwrap())
    }

    fn evaluate(&self, model: &DebiasedEncoder, grads: bool) -> (LossBreakdown, Option<DebiasGradients>) {
        let d = self.data;
        let enc_c = model.encoder.forward(&d.candidates);
        let enc_r = model.encoder.forward(&d.roles);
        let (zc, zr) = (&enc_c.out, &enc_r.out);

        let mut d_zc = Array2::<f64>::zeros(zc.raw_dim());
        let mut d_zr = Array2::<f64>::zeros(zr.raw_dim());
        let np = d.pairs.len() as f64;
        let mut allocation = 0.0;
        for p in &d.pairs {
            let s = zc.row(p.candidate).dot(&zr.row(p.role));
            allocation += if p.label { softplus(-s) } else { softplus(s) };
            if grads {
                let g = (sigmoid(s) - if p.label { 1.0 } else { 0.0 }) / np;
                d_zc.row_mut(p.candidate).scaled_add(g, &zr.row(p.role));
                d_zr.row_mut(p.role).scaled_add(g, &zc.row(p.candidate));
            }
        }
        allocation /= np;

        let adv_in = reverse_forward(zc);
        let adv = model.adversary.forward(&adv_in);
        let (adversarial, d_logits) = softmax_cross_entropy(&adv.out, &d.sensitive);

        let dec = model.decoder.forward(zc);
        let diff = &dec.out - &d.candidates;
        let count = diff.len() as f64;
        let reconstruction = diff.mapv(|v| v * v).sum() / count;

        let breakdown = LossBreakdown {
            total: allocation - self.lambda * adversarial + self.beta * reconstruction,
            allocation,
            adversarial,
            reconstruction,
        };
        if !grads {
            return (breakdown, None);
        }

        let (adv_grad, d_adv_in) = model.adversary.backward(&adv_in, &adv, &d_logits);
        d_zc += &reverse_scale(&d_adv_in, self.lambda);

        let d_xhat = diff * (2.0 * self.beta / count);
        let (dec_grad, d_z_rec) = model.decoder.backward(zc, &dec, &d_xhat);
        d_zc += &d_z_rec;

        let (mut enc_grad, _) = model.encoder.backward(&d.candidates, &enc_c, &d_zc);
        let (enc_grad_r, _) = model.encoder.backward(&d.roles, &enc_r, &d_zr);
        enc_grad.add(&enc_grad_r);
        (breakdown, Some(DebiasGradients { encoder: enc_grad, adversary: adv_grad, decoder: dec_grad }))
    }
}

/// Joint full-batch training with Adam. Returns the encoder and the loss
/// breakdown recorded before each epoch's update.
pub fn train_adversarial(data: &DebiasData, config: &DebiasConfig) -> Result<(DebiasedEncoder, Vec<LossBreakdown>)> {
    config.validate()?;
    let classes = data.check()?;
    let mut model = DebiasedEncoder::init(data.candidates.ncols(), classes, config);
    let objective = DebiasObjective::new(data, config.lambda, config.beta);
    let mut adam = Adam::new(config.learning_rate);
    let mut adversary_adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (losses, g) = objective.losses_and_gradients(&model);
        if ![losses.total, losses.allocation, losses.adversarial, losses.reconstruction].iter().all(|v| v.is_finite()) {
            return Err(GesaError::Diverged { epoch });
        }
        history.push(losses);
        let grads: Vec<&[f64]> = g.encoder.slices().into_iter().chain(g.decoder.slices()).collect();
        let [e0, e1, e2, e3] = model.encoder.slices_mut();
        let [d0, d1, d2, d3] = model.decoder.slices_mut();
        adam.step(&mut [e0, e1, e2, e3, d0, d1, d2, d3], &grads);

        let mut adversary_grad = g.adversary;
        let z = if config.adversary_steps > 1 { Some(model.encoder.forward(&data.candidates).out) } else { None };
        for step in 0..config.adversary_steps {
            if step > 0 {
                let z = z.as_ref().unwrap();
                let pass = model.adversary.forward(z);
                let (_, d_logits) = softmax_cross_entropy(&pass.out, &data.sensitive);
                adversary_grad = model.adversary.backward(z, &pass, &d_logits).0;
            }
            adversary_adam.step(&mut model.adversary.slices_mut(), &adversary_grad.slices());
        }
    }
    if !model.is_finite() {
        return Err(GesaError::Diverged { epoch: config.epochs });
    }
    Ok((model, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 16, epochs: 300, learning_rate: 0.01, train_fraction: 0.8 }
    }
}

/// Held-out accuracy of a freshly trained single-hidden-layer classifier
/// predicting the sensitive class from representations.
pub fn leakage_probe(z: &Array2<f64>, sensitive: &[usize], seed: u64) -> Result<f64> {
    leakage_probe_with(z, sensitive, seed, &ProbeConfig::default())
}

pub fn leakage_probe_with(z: &Array2<f64>, sensitive: &[usize], seed: u64, config: &ProbeConfig) -> Result<f64> {
    let n = z.nrows();
    if sensitive.len() != n {
        return Err(GesaError::DimensionMismatch { expected: n, actual: sensitive.len() });
    }
    if sensitive.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(GesaError::InvalidArgument("sensitive labels must contain two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let cut = ((n as f64) * config.train_fraction).round() as usize;
    let cut = cut.clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(cut);

    let train_x = z.select(Axis(0), train_idx);
    let mean = train_x.mean_axis(Axis(0)).unwrap();
    let std = train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let standardize = |x: Array2<f64>| (x - &mean) / &std;
    let train_x = standardize(train_x);
    let test_x = standardize(z.select(Axis(0), test_idx));
    let train_y: Vec<usize> = train_idx.iter().map(|&i| sensitive[i]).collect();
    let classes = sensitive.iter().copied().max().unwrap() + 1;

    let mut net = TwoLayer::new(&mut rng, z.ncols(), config.hidden, classes);
    let mut adam = Adam::new(config.learning_rate);
    for _ in 0..config.epochs {
        let pass = net.forward(&train_x);
        let (_, d_logits) = softmax_cross_entropy(&pass.out, &train_y);
        let (g, _) = net.backward(&train_x, &pass, &d_logits);
        let grads = g.slices();
        adam.step(&mut net.slices_mut(), &grads);
    }
    let logits = net.forward(&test_x).out;
    let correct = test_idx
        .iter()
        .enumerate()
        .filter(|(k, &i)| argmax(logits.row(*k).to_owned()) == sensitive[i])
        .count();
    Ok(correct as f64 / test_idx.len() as f64)
}

fn argmax(row: Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn max_pairwise_gap(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn group_indices<'a>(groups: &[&'a str]) -> BTreeMap<&'a str, Vec<usize>> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        out.entry(*g).or_default().push(i);
    }
    out
}

fn check_groups(n: usize, groups: &[&str]) -> Result<()> {
    if groups.len() != n {
        return Err(GesaError::DimensionMismatch { expected: n, actual: groups.len() });
    }
    if group_indices(groups).len() < 2 {
        return Err(GesaError::InvalidArgument("need at least two groups".into()));
    }
    Ok(())
}

/// Largest gap in selection rate between any two groups.
pub fn demographic_parity_difference(selected: &[bool], groups: &[&str]) -> Result<f64> {
    check_groups(selected.len(), groups)?;
    let rates: Vec<f64> = group_indices(groups)
        .values()
        .map(|idx| idx.iter().filter(|&&i| selected[i]).count() as f64 / idx.len() as f64)
        .collect();
    Ok(max_pairwise_gap(&rates))
}

/// Largest gap in true-positive rate (selected among qualified) between any
/// two groups.
pub fn equalized_opportunity_difference(selected: &[bool], qualified: &[bool], groups: &[&str]) -> Result<f64> {
    check_groups(selected.len(), groups)?;
    if qualified.len() != selected.len() {
        return Err(GesaError::DimensionMismatch { expected: selected.len(), actual: qualified.len() });
    }
    let mut rates = Vec::new();
    for (g, idx) in group_indices(groups) {
        let q: Vec<usize> = idx.into_iter().filter(|&i| qualified[i]).collect();
        if q.is_empty() {
            return Err(GesaError::Empty(format!("group `{g}` has no qualified members")));
        }
        rates.push(q.iter().filter(|&&i| selected[i]).count() as f64 / q.len() as f64);
    }
    Ok(max_pairwise_gap(&rates))
}

/// Expected calibration error over equal-width bins; empty bins are skipped.
pub fn expected_calibration_error(scores: &[f64], outcomes: &[bool], bins: usize) -> f64 {
    let mut sum_s = vec![0.0; bins];
    let mut sum_o = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&s, &o) in scores.iter().zip(outcomes) {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        sum_s[b] += s;
        sum_o[b] += if o { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    let n = scores.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (count[b] as f64 / n) * (sum_s[b] / count[b] as f64 - sum_o[b] / count[b] as f64).abs())
        .sum()
}

/// Largest gap in per-group expected calibration error.
pub fn calibration_error(scores: &[f64], outcomes: &[bool], groups: &[&str], bins: usize) -> Result<f64> {
    check_groups(scores.len(), groups)?;
    if bins == 0 {
        return Err(GesaError::InvalidArgument("bins must be positive".into()));
    }
    if outcomes.len() != scores.len() {
        return Err(GesaError::DimensionMismatch { expected: scores.len(), actual: outcomes.len() });
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(GesaError::InvalidArgument(format!("score {s} outside [0, 1]")));
    }
    let eces: Vec<f64> = group_indices(groups)
        .values()
        .map(|idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let o: Vec<bool> = idx.iter().map(|&i| outcomes[i]).collect();
            expected_calibration_error(&s, &o, bins)
        })
        .collect();
    Ok(max_pairwise_gap(&eces))
}

/// `1 − mean(components)`, clamped to `[0, 1]`.
pub fn composite_fairness_score(demographic_parity: f64, equalized_opportunity: f64, calibration: f64) -> f64 {
    (1.0 - (demographic_parity + equalized_opportunity + calibration) / 3.0).clamp(0.0, 1.0)
}

/// Largest score gap between two candidates whose embeddings lie within
/// `epsilon` (Euclidean) of each other. Diagnostic only.
pub fn individual_fairness(embeddings: &Array2<f64>, scores: &[f64], epsilon: f64) -> f64 {
    let n = embeddings.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = (&embeddings.row(i) - &embeddings.row(j)).mapv(|v| v * v).sum().sqrt();
            if d < epsilon {
                worst = worst.max((scores[i] - scores[j]).abs());
            }
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryFairness {
    pub category: String,
    pub demographic_parity: f64,
    pub equalized_opportunity: f64,
    pub calibration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub categories: Vec<CategoryFairness>,
    /// Built from the worst value of each component across categories.
    pub composite: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub individual_fairness: Option<f64>,
}

/// Per-candidate inputs to a fairness report.
#[derive(Clone, Debug)]
pub struct FairnessInputs<'a> {
    pub selected: &'a [bool],
    pub qualified: &'a [bool],
    pub scores: &'a [f64],
    /// Category name → one label per candidate.
    pub groups: &'a BTreeMap<String, Vec<String>>,
}

/// Computes every metric per category. Groups without qualified members are
/// left out of the equalized-opportunity comparison; a category with fewer
/// than two comparable groups reports 0 for that metric.
pub fn fairness_report(inputs: &FairnessInputs, bins: usize) -> Result<FairnessReport> {
    let n = inputs.selected.len();
    if inputs.qualified.len() != n || inputs.scores.len() != n {
        return Err(GesaError::DimensionMismatch { expected: n, actual: inputs.scores.len().min(inputs.qualified.len()) });
    }
    let mut categories = Vec::new();
    for (category, labels) in inputs.groups {
        let groups: Vec<&str> = labels.iter().map(String::as_str).collect();
        if groups.len() != n {
            return Err(GesaError::DimensionMismatch { expected: n, actual: groups.len() });
        }
        if group_indices(&groups).len() < 2 {
            categories.push(CategoryFairness {
                category: category.clone(),
                demographic_parity: 0.0,
                equalized_opportunity: 0.0,
                calibration: 0.0,
            });
            continue;
        }
        let dp = demographic_parity_difference(inputs.selected, &groups)?;
        let comparable: Vec<usize> = (0..n).filter(|&i| inputs.qualified[i]).collect();
        let eo = {
            let sel: Vec<bool> = comparable.iter().map(|&i| inputs.selected[i]).collect();
            let g: Vec<&str> = comparable.iter().map(|&i| groups[i]).collect();
            if group_indices(&g).len() < 2 {
                0.0
            } else {
                equalized_opportunity_difference(&sel, &vec![true; sel.len()], &g)?
            }
        };
        let cal = calibration_error(inputs.scores, inputs.qualified, &groups, bins)?;
        categories.push(CategoryFairness {
            category: category.clone(),
            demographic_parity: dp,
            equalized_opportunity: eo,
            calibration: cal,
        });
    }
    let worst = |f: fn(&CategoryFairness) -> f64| categories.iter().map(f).fold(0.0, f64::max);
    let composite = composite_fairness_score(
        worst(|c| c.demographic_parity),
        worst(|c| c.equalized_opportunity),
        worst(|c| c.calibration),
    );
    Ok(FairnessReport { categories, composite, individual_fairness: None })
}

/// Settings of the seeded debiasing benchmark: a 1000-candidate dataset
/// with bias strength 0.4, a strong text proxy of gender and historical
/// outcomes biased against the non-designated subgroup.
pub fn benchmark_spec(seed: u64) -> GenSpec {
    GenSpec {
        candidates: 1000,
        roles: 40,
        skills: 40,
        bias_strength: 0.4,
        proxy_strength: 0.9,
        outcome_bias: 0.8,
        interactions_per_candidate: 6,
        seed,
        ..Default::default()
    }
}

pub const BENCHMARK_CATEGORY: &str = "gender";
pub const BENCHMARK_HOLDOUT: f64 = 0.3;
pub const BENCHMARK_EMBED_DIM: usize = 64;

/// Seeded candidate holdout: `true` marks an evaluation candidate.
pub fn holdout_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64) * fraction).round() as usize;
    let mut mask = vec![false; n];
    for &i in &order[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

/// Training data built from a dataset: text embeddings of candidates and
/// roles, historical interactions of non-held-out candidates as labelled
/// pairs, and the class index of each candidate's label in `category`
/// (unlabelled candidates get the last index).
pub fn prepare_data(ds: &Dataset, provider: &dyn EmbeddingProvider, category: &str, heldout: &[bool]) -> Result<DebiasData> {
    if heldout.len() != ds.candidates.len() {
        return Err(GesaError::DimensionMismatch { expected: ds.candidates.len(), actual: heldout.len() });
    }
    let vocab = ds
        .demographic_categories
        .get(category)
        .ok_or_else(|| GesaError::UnknownId { kind: "demographic category", id: category.to_string() })?;
    let dim = provider.dimension();
    let embed = |id: &str, text: String| provider.embed_entity(id, &text).map(|v| v.into_inner());
    let mut candidates = Array2::zeros((ds.candidates.len(), dim));
    for (i, c) in ds.candidates.iter().enumerate() {
        candidates.row_mut(i).assign(&Array1::from(embed(&c.id, candidate_text(ds, c))?));
    }
    let mut roles = Array2::zeros((ds.roles.len(), dim));
    for (j, r) in ds.roles.iter().enumerate() {
        roles.row_mut(j).assign(&Array1::from(embed(&r.id, role_text(ds, r))?));
    }
    let cidx: HashMap<&str, usize> = ds.candidates.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let ridx: HashMap<&str, usize> = ds.roles.iter().enumerate().map(|(j, r)| (r.id.as_str(), j)).collect();
    let pairs = ds
        .interactions
        .iter()
        .filter(|it| !heldout[cidx[it.candidate_id.as_str()]])
        .map(|it| LabeledPair { candidate: cidx[it.candidate_id.as_str()], role: ridx[it.role_id.as_str()], label: it.outcome == 1 })
        .collect();
    let sensitive = ds
        .candidates
        .iter()
        .map(|c| {
            c.demographics
                .label(category)
                .and_then(|l| vocab.iter().position(|v| v == l))
                .unwrap_or(vocab.len())
        })
        .collect();
    Ok(DebiasData { candidates, roles, pairs, sensitive })
}

/// Held-out quality and fairness of an encoder on a dataset with ground
/// truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasEvaluation {
    pub leakage: f64,
    pub allocation_auc: f64,
    pub fairness: FairnessReport,
}

/// Scores every pair of a held-out candidate with `sigmoid(z_c · z_r)` and
/// measures AUC against the ground truth. Fairness is measured on a greedy
/// allocation of the held-out candidates: pairs are taken in descending score
/// order while the candidate is free and the role has capacity. A candidate
/// is qualified when it has any ground-truth match, and its calibration score
/// is its best pair score. Leakage is probed on all candidates.
pub fn evaluate_encoder(
    model: &DebiasedEncoder,
    data: &DebiasData,
    ds: &Dataset,
    category: &str,
    heldout: &[bool],
    probe_seed: u64,
) -> Result<DebiasEvaluation> {
    let zc = model.encode(&data.candidates)?;
    let zr = model.encode(&data.roles)?;
    let leakage = leakage_probe(&zc, &data.sensitive, probe_seed)?;
    let truth: std::collections::HashSet<(&str, &str)> =
        ds.ground_truth.iter().map(|m| (m.candidate_id.as_str(), m.role_id.as_str())).collect();
    let members: Vec<usize> = (0..ds.candidates.len()).filter(|&i| heldout[i]).collect();
    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &i in &members {
        for (j, r) in ds.roles.iter().enumerate() {
            let s = sigmoid(zc.row(i).dot(&zr.row(j)));
            pairs.push((s, i, j));
            scores.push(s);
            labels.push(truth.contains(&(ds.candidates[i].id.as_str(), r.id.as_str())));
        }
    }
    let allocation_auc = crate::nn::auc(&scores, &labels)
        .ok_or_else(|| GesaError::InvalidArgument("held-out pairs need both outcomes".into()))?;

    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut remaining: Vec<u32> = ds.roles.iter().map(|r| r.capacity).collect();
    let mut selected = vec![false; ds.candidates.len()];
    for &(_, i, j) in &pairs {
        if !selected[i] && remaining[j] > 0 {
            selected[i] = true;
            remaining[j] -= 1;
        }
    }
    let mut best = vec![0.0f64; ds.candidates.len()];
    let mut qualified = vec![false; ds.candidates.len()];
    for &(s, i, _) in &pairs {
        best[i] = best[i].max(s);
    }
    let with_match: std::collections::HashSet<&str> = truth.iter().map(|(c, _)| *c).collect();
    for &i in &members {
        qualified[i] = with_match.contains(ds.candidates[i].id.as_str());
    }
    let pick = |v: &[bool]| members.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let sel = pick(&selected);
    let qual = pick(&qualified);
    let best: Vec<f64> = members.iter().map(|&i| best[i]).collect();
    let group: Vec<String> = members
        .iter()
        .map(|&i| ds.candidates[i].demographics.label(category).unwrap_or("unlabelled").to_string())
        .collect();
    let groups = BTreeMap::from([(category.to_string(), group)]);
    let fairness =
        fairness_report(&FairnessInputs { selected: &sel, qualified: &qual, scores: &best, groups: &groups }, 10)?;
    Ok(DebiasEvaluation { leakage, allocation_auc, fairness })
}

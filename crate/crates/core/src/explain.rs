//! Shapley attributions of allocation scores and the explanation bundle
//! built from them.
//!
//! The explained score of a candidate-role pair is the pair's term of the
//! weighted selection score:
//!
//! ```text
//! w_merit · (α·semantic + β·graph + γ·skill) + w_div · diversity_marginal + w_pref · preference
//! ```

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};
use crate::model::{AllocationPlan, Dataset};
use crate::objectives::{diversity, preference_score, DiversitySpec, MeritWeights};
use crate::scoring::ScoreTables;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    pub max_exact_features: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self { max_exact_features: 12, samples: 2048, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub baseline: f64,
    pub attributions: Vec<f64>,
    pub feature_names: Vec<String>,
    /// `baseline + Σ attributions`.
    pub score: f64,
    pub exact: bool,
}

fn masked(instance: &[f64], reference: &[f64], mask: u64) -> Vec<f64> {
    (0..instance.len()).map(|i| if mask >> i & 1 == 1 { instance[i] } else { reference[i] }).collect()
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GesaError::InvalidArgument("score function returned a non-finite value".into()))
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley values of `score_fn` at `instance`. Features outside a coalition
/// take the background mean. Up to `max_exact_features` every coalition is
/// enumerated; beyond that coalitions are sampled from the Shapley kernel and
/// fitted by least squares with the efficiency constraint imposed.
pub fn kernel_shap<F>(
    score_fn: F,
    instance: &[f64],
    background: &[Vec<f64>],
    feature_names: &[String],
    config: &ShapConfig,
) -> Result<ShapExplanation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let f = instance.len();
    if f == 0 {
        return Err(GesaError::InvalidArgument("no features".into()));
    }
    if background.is_empty() {
        return Err(GesaError::Empty("background set".into()));
    }
    if let Some(b) = background.iter().find(|b| b.len() != f) {
        return Err(GesaError::DimensionMismatch { expected: f, actual: b.len() });
    }
    if feature_names.len() != f {
        return Err(GesaError::DimensionMismatch { expected: f, actual: feature_names.len() });
    }
    let mut mean = vec![0.0; f];
    for b in background {
        for (m, v) in mean.iter_mut().zip(b) {
            *m += v / background.len() as f64;
        }
    }
    let baseline = finite(score_fn(&mean))?;
    let full = finite(score_fn(instance))?;

    let (attributions, exact) = if f <= config.max_exact_features.min(62) {
        let values: Vec<f64> = (0..1u64 << f)
            .into_par_iter()
            .map(|mask| score_fn(&masked(instance, &mean, mask)))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GesaError::InvalidArgument("score function returned a non-finite value".into()));
        }
        // |S|!(F−|S|−1)!/F! = 1 / (F · C(F−1, |S|))
        let weight: Vec<f64> = (0..f).map(|s| 1.0 / (f as f64 * binomial(f - 1, s))).collect();
        let phi = (0..f)
            .map(|i| {
                let bit = 1u64 << i;
                (0..1u64 << f)
                    .filter(|m| m & bit == 0)
                    .map(|m| weight[m.count_ones() as usize] * (values[(m | bit) as usize] - values[m as usize]))
                    .sum()
            })
            .collect();
        (phi, true)
    } else {
        (sampled_shap(&score_fn, instance, &mean, baseline, full, config)?, false)
    };
    let score = baseline + attributions.iter().sum::<f64>();
    Ok(ShapExplanation { baseline, attributions, feature_names: feature_names.to_vec(), score, exact })
}

fn sampled_shap<F>(score_fn: &F, instance: &[f64], mean: &[f64], baseline: f64, full: f64, config: &ShapConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let f = instance.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Coalition sizes drawn proportional to the total kernel weight of each size.
    let size_weight: Vec<f64> = (1..f).map(|s| (f - 1) as f64 / (s * (f - s)) as f64).collect();
    let total: f64 = size_weight.iter().sum();
    let coalitions: Vec<Vec<bool>> = (0..config.samples.max(f))
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut size = f - 1;
            for (k, w) in size_weight.iter().enumerate() {
                if u < *w {
                    size = k + 1;
                    break;
                }
                u -= w;
            }
            let mut z = vec![false; f];
            for i in sample(&mut rng, f, size) {
                z[i] = true;
            }
            z
        })
        .collect();
    let values: Vec<f64> = coalitions
        .par_iter()
        .map(|z| {
            let x: Vec<f64> = (0..f).map(|i| if z[i] { instance[i] } else { mean[i] }).collect();
            score_fn(&x)
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GesaError::InvalidArgument("score function returned a non-finite value".into()));
    }
    // Eliminate the last feature through Σφ = full − baseline.
    let delta = full - baseline;
    let rows = coalitions.len();
    let a = DMatrix::from_fn(rows, f - 1, |r, i| {
        f64::from(u8::from(coalitions[r][i])) - f64::from(u8::from(coalitions[r][f - 1]))
    });
    let y = DVector::from_fn(rows, |r, _| values[r] - baseline - f64::from(u8::from(coalitions[r][f - 1])) * delta);
    let normal = a.transpose() * &a + DMatrix::identity(f - 1, f - 1) * 1e-10;
    let rhs = a.transpose() * y;
    let head = normal
        .cholesky()
        .ok_or_else(|| GesaError::InvalidArgument("sampled coalitions do not determine the attributions".into()))?
        .solve(&rhs);
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(phi)
}

pub const FEATURE_GROUPS: [&str; 5] =
    ["semantic similarity", "graph similarity", "skill coverage", "diversity marginal contribution", "preference rank"];

/// Everything needed to score a pair inside a plan.
#[derive(Clone, Copy)]
pub struct ExplainContext<'a> {
    pub dataset: &'a Dataset,
    pub tables: &'a ScoreTables,
    pub merit_weights: &'a MeritWeights,
    /// Weights of merit, diversity and preference in the selection score.
    pub objective_weights: [f64; 3],
    pub diversity: &'a DiversitySpec,
    pub plan: &'a AllocationPlan,
    pub shap: &'a ShapConfig,
}

impl ExplainContext<'_> {
    fn check(&self) -> Result<()> {
        self.merit_weights.validate()?;
        if self.merit_weights.beta > 0.0 && self.tables.graph.is_none() {
            return Err(GesaError::InvalidArgument("graph scores are missing for this context".into()));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let w = self.merit_weights;
        let [wm, wd, wp] = self.objective_weights;
        wm * (w.alpha * x[0] + w.beta * x[1] + w.gamma * x[2]) + wd * x[3] + wp * x[4]
    }

    fn diversity_or_zero(&self, plan: &AllocationPlan) -> Result<f64> {
        if plan.assignments.is_empty() {
            return Ok(0.0);
        }
        diversity(plan, self.dataset, self.diversity)
    }

    /// Change in plan diversity from placing the candidate in the role,
    /// relative to the plan without the candidate.
    pub fn diversity_marginal(&self, candidate: &str, role: &str) -> Result<f64> {
        let mut without = self.plan.clone();
        without.assignments.remove(candidate);
        let mut with = without.clone();
        with.assignments.insert(candidate.to_string(), role.to_string());
        Ok(self.diversity_or_zero(&with)? - self.diversity_or_zero(&without)?)
    }

    /// The five feature-group values of a pair.
    pub fn features(&self, candidate: &str, role: &str) -> Result<Vec<f64>> {
        let (i, j) = self.tables.index(candidate, role)?;
        let sims = self.tables.sims(i, j);
        let c = &self.dataset.candidates[i];
        Ok(vec![sims.semantic, sims.graph, sims.skill, self.diversity_marginal(candidate, role)?, preference_score(c, role)])
    }

    /// Feature vectors of every candidate for the role, in dataset order.
    pub fn pool_features(&self, role: &str) -> Result<Vec<Vec<f64>>> {
        self.dataset.candidates.par_iter().map(|c| self.features(&c.id, role)).collect()
    }
}

fn explain_with_background(ctx: &ExplainContext, x: &[f64], background: &[Vec<f64>]) -> Result<ShapExplanation> {
    let names: Vec<String> = FEATURE_GROUPS.iter().map(|s| s.to_string()).collect();
    kernel_shap(|v| ctx.score(v), x, background, &names, ctx.shap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub alternate: String,
    pub feature: String,
    /// `φ_selected − φ_alternate`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edit {
    AddSkill { skill_id: String },
    RankRoleFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub target_rank: usize,
    pub initial_rank: usize,
    pub edits: Vec<Edit>,
    /// Rank after the edits, or the initial rank when none were needed.
    pub final_rank: usize,
    pub achievable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub candidate_id: String,
    pub role_id: String,
    pub executive_summary: String,
    pub top_contributors: Vec<Contribution>,
    pub detailed: Vec<Contribution>,
    pub comparative: Vec<ComparisonRow>,
    pub counterfactual: Counterfactual,
    pub shap: ShapExplanation,
}

fn by_magnitude(phi: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    order
}

fn summary(score: f64, shap: &ShapExplanation, top: &[Contribution]) -> String {
    let parts: Vec<String> = top.iter().map(|c| format!("{} ({:+.4})", c.feature, c.phi)).collect();
    format!("score {:.4} against a pool baseline of {:.4}; top contributors: {}", score, shap.baseline, parts.join(", "))
}

/// Explains one pair within the context's plan. Alternates for the
/// comparative section are the other candidates the plan places in the role
/// or, when there are none, the three best-scoring other candidates for it.
pub fn explain_allocation(candidate: &str, role: &str, ctx: &ExplainContext) -> Result<ExplanationBundle> {
    ctx.check()?;
    let x = ctx.features(candidate, role)?;
    let background = ctx.pool_features(role)?;
    let shap = explain_with_background(ctx, &x, &background)?;

    let detailed: Vec<Contribution> = (0..x.len())
        .map(|i| Contribution { feature: FEATURE_GROUPS[i].to_string(), value: x[i], phi: shap.attributions[i] })
        .collect();
    let top: Vec<Contribution> = by_magnitude(&shap.attributions).into_iter().take(3).map(|i| detailed[i].clone()).collect();

    let mut alternates: Vec<String> = ctx
        .plan
        .assignments
        .iter()
        .filter(|(c, r)| r.as_str() == role && c.as_str() != candidate)
        .map(|(c, _)| c.clone())
        .take(3)
        .collect();
    if alternates.is_empty() {
        let mut ranked: Vec<(f64, &str)> = ctx
            .dataset
            .candidates
            .iter()
            .zip(&background)
            .filter(|(c, _)| c.id != candidate)
            .map(|(c, f)| (ctx.score(f), c.id.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        alternates = ranked.into_iter().take(3).map(|(_, id)| id.to_string()).collect();
    }
    let comparative = if alternates.is_empty() {
        Vec::new()
    } else {
        comparative_explanation(candidate, &alternates, role, ctx)?
    };
    let counterfactual = counterfactual(candidate, role, 1, ctx)?;
    Ok(ExplanationBundle {
        candidate_id: candidate.to_string(),
        role_id: role.to_string(),
        executive_summary: summary(ctx.score(&x), &shap, &top),
        top_contributors: top,
        detailed,
        comparative,
        counterfactual,
        shap,
    })
}

/// Per-alternate, per-feature `Δφ`, sorted by `|Δφ|` within each alternate.
pub fn comparative_explanation(
    selected: &str,
    alternates: &[String],
    role: &str,
    ctx: &ExplainContext,
) -> Result<Vec<ComparisonRow>> {
    if alternates.is_empty() {
        return Err(GesaError::Empty("alternate list".into()));
    }
    ctx.check()?;
    let background = ctx.pool_features(role)?;
    let mine = explain_with_background(ctx, &ctx.features(selected, role)?, &background)?;
    let mut rows = Vec::new();
    for alt in alternates {
        let theirs = explain_with_background(ctx, &ctx.features(alt, role)?, &background)?;
        let delta: Vec<f64> = mine.attributions.iter().zip(&theirs.attributions).map(|(a, b)| a - b).collect();
        for i in by_magnitude(&delta) {
            rows.push(ComparisonRow { alternate: alt.clone(), feature: FEATURE_GROUPS[i].to_string(), delta: delta[i] });
        }
    }
    Ok(rows)
}

pub const MAX_EDITS: usize = 5;

/// 1-based rank of `score` among the pool, ties broken by ascending id.
fn rank_of(score: f64, id: &str, pool: &[(f64, &str)]) -> usize {
    1 + pool.iter().filter(|(s, other)| *other != id && (*s > score || (*s == score && *other < id))).count()
}

/// Greedy search for the shortest sequence of edits (adding one missing
/// required skill, or ranking the role first) that lifts the candidate into
/// the top `k` for the role. Each step takes the edit with the largest score
/// gain. Semantic and graph similarity are held fixed. Returns an empty,
/// non-achievable result when five edits do not suffice.
pub fn counterfactual(candidate: &str, role: &str, k: usize, ctx: &ExplainContext) -> Result<Counterfactual> {
    if k == 0 {
        return Err(GesaError::InvalidArgument("target rank must be at least 1".into()));
    }
    ctx.check()?;
    let background = ctx.pool_features(role)?;
    let pool: Vec<(f64, &str)> =
        ctx.dataset.candidates.iter().zip(&background).map(|(c, f)| (ctx.score(f), c.id.as_str())).collect();
    let (i, _) = ctx.tables.index(candidate, role)?;
    let r = ctx.dataset.role(role).ok_or_else(|| GesaError::UnknownId { kind: "role", id: role.to_string() })?;
    let c = &ctx.dataset.candidates[i];

    let mut x = background[i].clone();
    let initial_rank = rank_of(ctx.score(&x), candidate, &pool);
    let mut result = Counterfactual { target_rank: k, initial_rank, edits: Vec::new(), final_rank: initial_rank, achievable: true };
    if initial_rank <= k {
        return Ok(result);
    }
    let mut held: Vec<String> = c.skill_ids.clone();
    let mut ranked_first = c.preferences.first().map(String::as_str) == Some(role);
    let coverage = |held: &[String]| {
        r.required_skill_ids.iter().filter(|s| held.contains(s)).count() as f64 / r.required_skill_ids.len() as f64
    };
    while result.edits.len() < MAX_EDITS {
        let mut options: Vec<(Edit, Vec<f64>)> = Vec::new();
        for s in r.required_skill_ids.iter().filter(|s| !held.contains(s)) {
            let mut y = x.clone();
            let mut h = held.clone();
            h.push(s.clone());
            y[2] = coverage(&h);
            options.push((Edit::AddSkill { skill_id: s.clone() }, y));
        }
        if !ranked_first {
            let mut y = x.clone();
            y[4] = 1.0;
            options.push((Edit::RankRoleFirst, y));
        }
        let best = options
            .into_iter()
            .enumerate()
            .max_by(|(ia, (_, a)), (ib, (_, b))| ctx.score(a).total_cmp(&ctx.score(b)).then(ib.cmp(ia)));
        let Some((_, (edit, y))) = best else { break };
        match &edit {
            Edit::AddSkill { skill_id } => held.push(skill_id.clone()),
            Edit::RankRoleFirst => ranked_first = true,
        }
        x = y;
        result.edits.push(edit);
        result.final_rank = rank_of(ctx.score(&x), candidate, &pool);
        if result.final_rank <= k {
            return Ok(result);
        }
    }
    result.edits.clear();
    result.final_rank = initial_rank;
    result.achievable = false;
    Ok(result)
}

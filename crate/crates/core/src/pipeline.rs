//! End-to-end steps shared by the command line and the HTTP service.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::debias::{fairness_report, prepare_data, train_adversarial, DebiasConfig, FairnessInputs, FairnessReport};
use crate::embed::{EmbeddingStore, EmbeddingVector, HashEmbedder, StoreProvider};
use crate::error::{GesaError, Result};
use crate::hetgraph::{build_graph, train_link_prediction, GnnConfig, DEFAULT_SKILL_SIM_THRESHOLD};
use crate::model::{AllocationPlan, Constraint, ConstraintSet, Dataset, ObjectiveVector};
use crate::objectives::{DiversitySpec, MeritWeights, Problem};
use crate::optimizer::{run_nsga2, select_solution, OptimizerConfig, ParetoFront, SelectionPolicy};
use crate::scoring::{build_problem, ScoreTables};

pub const DEFAULT_EMBED_DIM: usize = 64;
/// Roles kept per candidate in a plan document.
pub const TOP_ROLES: usize = 5;
pub const CALIBRATION_BINS: usize = 10;

/// Everything `allocate` needs besides the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationConfig {
    pub embedding_dim: usize,
    /// `None` uses the default weights when graph embeddings are present and
    /// drops the graph term otherwise.
    pub merit: Option<MeritWeights>,
    /// `None` weighs every declared category equally.
    pub diversity: Option<DiversitySpec>,
    /// Rules added to the per-role capacities.
    pub constraints: Vec<Constraint>,
    pub optimizer: OptimizerConfig,
    /// `None` selects with the optimizer's objective weights.
    pub selection: Option<SelectionPolicy>,
    /// Embedding files, relative to the configuration file.
    pub semantic_embeddings: Option<String>,
    pub graph_embeddings: Option<String>,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            embedding_dim: DEFAULT_EMBED_DIM,
            merit: None,
            diversity: None,
            constraints: Vec::new(),
            optimizer: OptimizerConfig::default(),
            selection: None,
            semantic_embeddings: None,
            graph_embeddings: None,
        }
    }
}

impl AllocationConfig {
    pub fn merit_weights(&self, has_graph: bool) -> Result<MeritWeights> {
        match self.merit {
            Some(w) => {
                w.validate()?;
                Ok(w)
            }
            None if has_graph => Ok(MeritWeights::default()),
            None => {
                let d = MeritWeights::default();
                let s = d.alpha + d.gamma;
                MeritWeights::new(d.alpha / s, 0.0, d.gamma / s)
            }
        }
    }

    pub fn diversity_spec(&self, ds: &Dataset) -> Result<DiversitySpec> {
        match &self.diversity {
            Some(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
            None => DiversitySpec::uniform(ds),
        }
    }

    pub fn selection_policy(&self) -> SelectionPolicy {
        self.selection
            .clone()
            .unwrap_or_else(|| SelectionPolicy { weights: self.optimizer.objective_weights, mandatory: Vec::new() })
    }

    pub fn constraint_set(&self, ds: &Dataset) -> ConstraintSet {
        ConstraintSet::for_dataset(ds).extend(self.constraints.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(GesaError::InvalidArgument("embedding dimension must be positive".into()));
        }
        if let Some(w) = &self.merit {
            w.validate()?;
        }
        if let Some(d) = &self.diversity {
            d.validate()?;
        }
        self.optimizer.validate()
    }
}

/// Score tables from the hash embedder, optionally overridden per entity by
/// `semantic` vectors, with graph similarity from `graph` when given.
pub fn score_tables(
    ds: &Dataset,
    dim: usize,
    semantic: Option<&EmbeddingStore>,
    graph: Option<&EmbeddingStore>,
) -> Result<ScoreTables> {
    let hash = HashEmbedder::new(dim)?;
    match semantic {
        Some(store) => ScoreTables::compute(ds, &StoreProvider::new(store.clone(), hash)?, graph),
        None => ScoreTables::compute(ds, &hash, graph),
    }
}

pub fn build(ds: &Dataset, config: &AllocationConfig, tables: &ScoreTables) -> Result<Problem> {
    config.validate()?;
    let weights = config.merit_weights(tables.graph.is_some())?;
    build_problem(ds, tables, &weights, &config.diversity_spec(ds)?, &config.constraint_set(ds))
}

#[derive(Clone, Debug)]
pub struct Allocation {
    pub front: ParetoFront,
    pub selected: AllocationPlan,
    /// Selection weights with the front's diversity escalation applied.
    pub weights: [f64; 3],
}

/// Runs the optimizer and picks one plan by the configured policy.
pub fn allocate(ds: &Dataset, config: &AllocationConfig, tables: &ScoreTables) -> Result<Allocation> {
    let problem = build(ds, config, tables)?;
    let front = run_nsga2(&problem, &config.optimizer)?;
    let policy = config.selection_policy();
    let selected = select_solution(&front, &policy, ds)?.plan.clone();
    let weights = front.effective_weights(policy.weights);
    Ok(Allocation { front, selected, weights })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRole {
    pub role_id: String,
    pub merit: f64,
}

/// The [`TOP_ROLES`] highest-merit roles of every candidate, ties by role id.
pub fn top_roles(tables: &ScoreTables, merit: &MeritWeights) -> Result<BTreeMap<String, Vec<RankedRole>>> {
    let table = tables.merit_table(merit)?;
    let m = tables.role_count();
    Ok(tables
        .candidate_ids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row: Vec<usize> = (0..m).collect();
            row.sort_by(|&a, &b| table[i * m + b].total_cmp(&table[i * m + a]).then(a.cmp(&b)));
            let ranked = row
                .into_iter()
                .take(TOP_ROLES)
                .map(|j| RankedRole { role_id: tables.role_ids[j].clone(), merit: table[i * m + j] })
                .collect();
            (c.clone(), ranked)
        })
        .collect())
}

/// A selected plan with what is needed to re-score and explain it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub plan: AllocationPlan,
    pub objective_weights: [f64; 3],
    pub merit: MeritWeights,
    pub diversity: DiversitySpec,
    pub embedding_dim: usize,
    /// Embedding files relative to the plan document.
    pub semantic_embeddings: Option<String>,
    pub graph_embeddings: Option<String>,
    pub top_roles: BTreeMap<String, Vec<RankedRole>>,
}

impl PlanDocument {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("plan serializes");
        text.push('\n');
        text
    }
}

/// Fairness of a plan: selection is assignment, qualification is having a
/// planted match, and the calibration score is the best merit.
pub fn plan_fairness(ds: &Dataset, plan: &AllocationPlan, best_merit: &BTreeMap<String, f64>) -> Result<FairnessReport> {
    let qualified_ids: HashSet<&str> = ds.ground_truth.iter().map(|m| m.candidate_id.as_str()).collect();
    let selected: Vec<bool> = ds.candidates.iter().map(|c| plan.assignments.contains_key(&c.id)).collect();
    let qualified: Vec<bool> = ds.candidates.iter().map(|c| qualified_ids.contains(c.id.as_str())).collect();
    let scores: Vec<f64> = ds.candidates.iter().map(|c| best_merit.get(&c.id).copied().unwrap_or(0.0)).collect();
    let groups: BTreeMap<String, Vec<String>> = ds
        .demographic_categories
        .keys()
        .map(|k| {
            let labels = ds.candidates.iter().map(|c| c.demographics.label(k).unwrap_or("unlabelled").to_string()).collect();
            (k.clone(), labels)
        })
        .collect();
    fairness_report(&FairnessInputs { selected: &selected, qualified: &qualified, scores: &scores, groups: &groups }, CALIBRATION_BINS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    /// Share of candidates with a planted match that have one among their
    /// `k` highest-merit roles.
    pub top_k_accuracy: f64,
    pub candidates_with_matches: usize,
    /// Share of assignments that are planted matches.
    pub assignment_precision: f64,
    pub assigned: usize,
    pub objectives: ObjectiveVector,
    pub fairness: FairnessReport,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

pub fn evaluate_plan(ds: &Dataset, doc: &PlanDocument, k: usize) -> Result<EvalReport> {
    if k == 0 || k > TOP_ROLES {
        return Err(GesaError::InvalidArgument(format!("k must lie in 1..={TOP_ROLES}")));
    }
    let mut truth: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for m in &ds.ground_truth {
        truth.entry(m.candidate_id.as_str()).or_default().insert(m.role_id.as_str());
    }
    let mut hits = 0;
    for (c, roles) in &truth {
        let ranked = doc.top_roles.get(*c).ok_or_else(|| GesaError::UnknownId { kind: "candidate", id: c.to_string() })?;
        if ranked.iter().take(k).any(|r| roles.contains(r.role_id.as_str())) {
            hits += 1;
        }
    }
    let correct = doc
        .plan
        .assignments
        .iter()
        .filter(|(c, r)| truth.get(c.as_str()).is_some_and(|set| set.contains(r.as_str())))
        .count();
    let best: BTreeMap<String, f64> =
        doc.top_roles.iter().map(|(c, r)| (c.clone(), r.first().map_or(0.0, |x| x.merit))).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        k,
        top_k_accuracy: ratio(hits, truth.len()),
        candidates_with_matches: truth.len(),
        assignment_precision: ratio(correct, doc.plan.assignments.len()),
        assigned: doc.plan.assignments.len(),
        objectives: doc.plan.objective_values,
        fairness: plan_fairness(ds, &doc.plan, &best)?,
    })
}

/// Trains link-prediction graph embeddings over hash-embedded node features.
pub fn train_graph(ds: &Dataset, dim: usize, config: &GnnConfig) -> Result<(EmbeddingStore, String)> {
    let graph = build_graph(ds, &HashEmbedder::new(dim)?, DEFAULT_SKILL_SIM_THRESHOLD)?;
    let trained = train_link_prediction(&graph, config)?;
    Ok((trained.embedding_store(&graph)?, trained.loss_csv()))
}

/// The sensitive category used when none is named: `gender` if declared,
/// else the first category.
pub fn default_category(ds: &Dataset) -> Result<String> {
    if ds.demographic_categories.contains_key("gender") {
        return Ok("gender".into());
    }
    ds.demographic_categories.keys().next().cloned().ok_or_else(|| GesaError::Empty("demographic categories".into()))
}

/// Trains the adversarial encoder on every interaction and returns encoded
/// candidate and role vectors keyed by id.
pub fn debias_embeddings(
    ds: &Dataset,
    input: &EmbeddingStore,
    category: &str,
    config: &DebiasConfig,
) -> Result<EmbeddingStore> {
    let dim = input.dimension().ok_or_else(|| GesaError::Empty("embeddings".into()))?;
    let provider = StoreProvider::new(input.clone(), HashEmbedder::new(dim)?)?;
    let data = prepare_data(ds, &provider, category, &vec![false; ds.candidates.len()])?;
    let (model, _) = train_adversarial(&data, config)?;
    let mut out = EmbeddingStore::new();
    let mut put = |ids: Vec<&String>, rows: Array2<f64>| -> Result<()> {
        for (id, row) in ids.into_iter().zip(rows.rows()) {
            out.insert(id.clone(), EmbeddingVector::new(row.to_vec())?)?;
        }
        Ok(())
    };
    put(ds.candidates.iter().map(|c| &c.id).collect(), model.encode(&data.candidates)?)?;
    put(ds.roles.iter().map(|r| &r.id).collect(), model.encode(&data.roles)?)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GenSpec};

    #[test]
    fn allocate_and_evaluate_small_instance() {
        let ds = generate_dataset(&GenSpec { seed: 3, ..Default::default() }).unwrap();
        let config = AllocationConfig {
            optimizer: OptimizerConfig { population_size: 20, max_generations: 10, ..Default::default() },
            ..Default::default()
        };
        let tables = score_tables(&ds, 32, None, None).unwrap();
        let merit = config.merit_weights(false).unwrap();
        assert_eq!(merit.beta, 0.0);
        let alloc = allocate(&ds, &config, &tables).unwrap();
        assert!(!alloc.selected.assignments.is_empty());
        let doc = PlanDocument {
            plan: alloc.selected.clone(),
            objective_weights: alloc.weights,
            merit,
            diversity: config.diversity_spec(&ds).unwrap(),
            embedding_dim: 32,
            semantic_embeddings: None,
            graph_embeddings: None,
            top_roles: top_roles(&tables, &merit).unwrap(),
        };
        let report = evaluate_plan(&ds, &doc, 3).unwrap();
        assert!((0.0..=1.0).contains(&report.top_k_accuracy));
        assert_eq!(report.assigned, alloc.selected.assignments.len());
        assert!(evaluate_plan(&ds, &doc, 0).is_err());
        let with_graph = AllocationConfig::default().merit_weights(true).unwrap();
        assert_eq!(with_graph, MeritWeights::default());
    }
}

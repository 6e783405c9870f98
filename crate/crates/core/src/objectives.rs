//! Merit, entropy diversity and preference objectives plus constraint
//! violations, in a sparse form over [`AllocationPlan`]s and a dense form
//! ([`Problem`]) used by the optimizer.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};
use crate::model::{
    AllocationPlan, Candidate, Constraint, ConstraintSet, ConstraintViolation, Dataset, ObjectiveVector, Role,
};

const SIMPLEX_TOL: f64 = 1e-9;

pub fn check_simplex(what: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(GesaError::InvalidArgument(format!("{what} must be non-negative")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(GesaError::InvalidArgument(format!("{what} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Weights of the semantic, graph and skill terms of merit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeritWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl MeritWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex("merit weights", &[self.alpha, self.beta, self.gamma])
    }
}

impl Default for MeritWeights {
    fn default() -> Self {
        Self { alpha: 0.4, beta: 0.3, gamma: 0.3 }
    }
}

/// Per-pair similarity inputs to merit, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSims {
    pub semantic: f64,
    pub graph: f64,
    pub skill: f64,
}

/// Fraction of the role's required skills the candidate holds.
pub fn skill_match_score(candidate: &Candidate, role: &Role) -> Result<f64> {
    if role.required_skill_ids.is_empty() {
        return Err(GesaError::InvalidArgument(format!("role `{}` has no required skills", role.id)));
    }
    let held = role.required_skill_ids.iter().filter(|s| candidate.skill_ids.contains(s)).count();
    Ok(held as f64 / role.required_skill_ids.len() as f64)
}

pub fn merit(weights: &MeritWeights, sims: &PairSims) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [("semantic", sims.semantic), ("graph", sims.graph), ("skill", sims.skill)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(GesaError::InvalidArgument(format!("{name} similarity {v} outside [0, 1]")));
        }
    }
    Ok(weights.alpha * sims.semantic + weights.beta * sims.graph + weights.gamma * sims.skill)
}

/// Shannon entropy (natural log) of a distribution given as proportions.
pub fn entropy(proportions: &[f64]) -> f64 {
    -proportions.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Entropy of the empirical distribution given by label counts.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts.iter().filter(|&&c| c > 0).map(|&c| (c as f64 / t) * (c as f64 / t).ln()).sum::<f64>()
}

/// Entropy of `category` labels over the selected candidates. A candidate
/// without a label for the category counts as its own subcategory.
pub fn group_entropy(selected: &[&Candidate], category: &str) -> Result<f64> {
    if selected.is_empty() {
        return Err(GesaError::Empty("selection".into()));
    }
    let mut counts: BTreeMap<Option<&str>, usize> = BTreeMap::new();
    for c in selected {
        *counts.entry(c.demographics.label(category)).or_default() += 1;
    }
    Ok(entropy_of_counts(&counts.into_values().collect::<Vec<_>>()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub category: String,
    pub weight: f64,
    /// Subcategory set; empty means the dataset's vocabulary.
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversitySpec {
    pub categories: Vec<CategoryWeight>,
}

impl DiversitySpec {
    pub fn new(categories: Vec<CategoryWeight>) -> Result<Self> {
        let spec = Self { categories };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal weight on every declared category of the dataset.
    pub fn uniform(ds: &Dataset) -> Result<Self> {
        let n = ds.demographic_categories.len();
        if n == 0 {
            return Err(GesaError::Empty("demographic categories".into()));
        }
        Self::new(
            ds.demographic_categories
                .keys()
                .map(|k| CategoryWeight { category: k.clone(), weight: 1.0 / n as f64, labels: vec![] })
                .collect(),
        )
    }

    pub fn single(category: impl Into<String>) -> Self {
        Self { categories: vec![CategoryWeight { category: category.into(), weight: 1.0, labels: vec![] }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(GesaError::Empty("diversity categories".into()));
        }
        let w: Vec<f64> = self.categories.iter().map(|c| c.weight).collect();
        check_simplex("diversity weights", &w)
    }

    fn check_against(&self, ds: &Dataset) -> Result<()> {
        self.validate()?;
        for c in &self.categories {
            let vocab = ds
                .demographic_categories
                .get(&c.category)
                .ok_or_else(|| GesaError::UnknownId { kind: "category", id: c.category.clone() })?;
            if let Some(l) = c.labels.iter().find(|l| !vocab.contains(l)) {
                return Err(GesaError::UnknownId { kind: "group", id: format!("{}={l}", c.category) });
            }
        }
        Ok(())
    }
}

fn assigned<'a>(plan: &AllocationPlan, ds: &'a Dataset) -> Result<Vec<(&'a Candidate, &'a Role)>> {
    plan.assignments
        .iter()
        .map(|(c, r)| {
            let cand = ds.candidate(c).ok_or_else(|| GesaError::UnknownId { kind: "candidate", id: c.clone() })?;
            let role = ds.role(r).ok_or_else(|| GesaError::UnknownId { kind: "role", id: r.clone() })?;
            Ok((cand, role))
        })
        .collect()
}

/// `Σ_g w_g · H_g` over the assigned candidates.
pub fn diversity(plan: &AllocationPlan, ds: &Dataset, spec: &DiversitySpec) -> Result<f64> {
    spec.validate()?;
    let pairs = assigned(plan, ds)?;
    if pairs.is_empty() {
        return Err(GesaError::Empty("plan has no assignments".into()));
    }
    let selected: Vec<&Candidate> = pairs.iter().map(|(c, _)| *c).collect();
    spec.categories
        .iter()
        .map(|g| Ok(g.weight * group_entropy(&selected, &g.category)?))
        .sum()
}

/// Linear rank score: 1 for the first choice down to 0 for the last; 0 when
/// the role is not on the list.
pub fn preference_score(candidate: &Candidate, role_id: &str) -> f64 {
    let len = candidate.preferences.len();
    match candidate.preferences.iter().position(|r| r == role_id) {
        None => 0.0,
        Some(_) if len == 1 => 1.0,
        Some(i) => 1.0 - i as f64 / (len - 1) as f64,
    }
}

/// Mean preference score over assigned candidates (0 for an empty plan).
pub fn preference_satisfaction(plan: &AllocationPlan, ds: &Dataset) -> Result<f64> {
    let pairs = assigned(plan, ds)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(pairs.iter().map(|(c, r)| preference_score(c, &r.id)).sum::<f64>() / pairs.len() as f64)
}

fn group_members(ds: &Dataset, category: &str, label: &str) -> Result<Vec<bool>> {
    let known = ds.demographic_categories.get(category).is_some_and(|v| v.iter().any(|l| l == label));
    if !known {
        return Err(GesaError::UnknownId { kind: "group", id: format!("{category}={label}") });
    }
    Ok(ds.candidates.iter().map(|c| c.demographics.label(category) == Some(label)).collect())
}

/// Violation magnitudes of every broken constraint, in constraint order.
pub fn evaluate_constraints(
    plan: &AllocationPlan,
    ds: &Dataset,
    constraints: &ConstraintSet,
) -> Result<Vec<ConstraintViolation>> {
    let pairs = assigned(plan, ds)?;
    let mut load: HashMap<&str, u32> = HashMap::new();
    for (_, r) in &pairs {
        *load.entry(r.id.as_str()).or_default() += 1;
    }
    let mut out = Vec::new();
    for c in &constraints.constraints {
        let magnitude = match c {
            Constraint::Capacity { role_id, capacity } => {
                if ds.role(role_id).is_none() {
                    return Err(GesaError::UnknownId { kind: "role", id: role_id.clone() });
                }
                f64::from(load.get(role_id.as_str()).copied().unwrap_or(0).saturating_sub(*capacity))
            }
            Constraint::RepresentationFloor { category, label, floor } => {
                group_members(ds, category, label)?;
                let n = pairs.iter().filter(|(c, _)| c.demographics.label(category) == Some(label)).count();
                (f64::from(*floor) - n as f64).max(0.0)
            }
            Constraint::Quota { category, label, target } => {
                group_members(ds, category, label)?;
                let n = pairs.iter().filter(|(c, _)| c.demographics.label(category) == Some(label)).count();
                (n as f64 - f64::from(*target)).abs()
            }
        };
        if magnitude > 0.0 {
            out.push(ConstraintViolation { constraint_id: c.id(), magnitude });
        }
    }
    Ok(out)
}

/// Dense plan encoding: candidate index → role index, `None` = unassigned.
pub type Genome = Vec<Option<u32>>;

#[derive(Clone, Debug)]
enum DenseRule {
    Capacity { role: usize, capacity: u32 },
    Floor { members: Vec<bool>, floor: u32 },
    Quota { members: Vec<bool>, target: u32 },
}

#[derive(Clone, Debug)]
struct DenseCategory {
    weight: f64,
    /// Label index per candidate; unlabeled candidates share the last slot.
    labels: Vec<u32>,
    slots: usize,
}

/// Objective values of one plan and its summed violation magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub objectives: ObjectiveVector,
    pub total_violation: f64,
    /// Set for an empty plan, whose objectives are all zero.
    pub degenerate: bool,
}

/// Everything needed to score a genome: merit and preference tables over
/// all candidate-role pairs, diversity categories and constraint rules.
/// Candidates and roles are indexed in dataset (sorted id) order.
#[derive(Clone, Debug)]
pub struct Problem {
    candidate_ids: Vec<String>,
    role_ids: Vec<String>,
    candidate_index: HashMap<String, usize>,
    role_index: HashMap<String, usize>,
    capacities: Vec<u32>,
    merit: Vec<f64>,
    preference: Vec<f64>,
    categories: Vec<DenseCategory>,
    rules: Vec<(String, DenseRule)>,
}

impl Problem {
    /// `merit` is row-major `candidates × roles`.
    pub fn new(ds: &Dataset, merit: Vec<f64>, spec: &DiversitySpec, constraints: &ConstraintSet) -> Result<Self> {
        let (n, m) = (ds.candidates.len(), ds.roles.len());
        if n == 0 || m == 0 {
            return Err(GesaError::Empty("candidates or roles".into()));
        }
        if merit.len() != n * m {
            return Err(GesaError::DimensionMismatch { expected: n * m, actual: merit.len() });
        }
        if merit.iter().any(|v| !v.is_finite()) {
            return Err(GesaError::InvalidArgument("merit table has non-finite entries".into()));
        }
        spec.check_against(ds)?;
        constraints.check(ds)?;

        let candidate_ids: Vec<String> = ds.candidates.iter().map(|c| c.id.clone()).collect();
        let role_ids: Vec<String> = ds.roles.iter().map(|r| r.id.clone()).collect();
        let candidate_index = candidate_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let role_index: HashMap<String, usize> = role_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

        let mut preference = vec![0.0; n * m];
        for (i, c) in ds.candidates.iter().enumerate() {
            for r in &c.preferences {
                if let Some(&j) = role_index.get(r) {
                    preference[i * m + j] = preference_score(c, r);
                }
            }
        }

        let categories = spec
            .categories
            .iter()
            .map(|g| {
                let vocab = &ds.demographic_categories[&g.category];
                let labels = ds
                    .candidates
                    .iter()
                    .map(|c| {
                        c.demographics
                            .label(&g.category)
                            .and_then(|l| vocab.iter().position(|v| v == l))
                            .unwrap_or(vocab.len()) as u32
                    })
                    .collect();
                DenseCategory { weight: g.weight, labels, slots: vocab.len() + 1 }
            })
            .collect();

        let mut capacities = vec![u32::MAX; m];
        let mut rules = Vec::with_capacity(constraints.constraints.len());
        for c in &constraints.constraints {
            let rule = match c {
                Constraint::Capacity { role_id, capacity } => {
                    let role = role_index[role_id];
                    capacities[role] = capacities[role].min(*capacity);
                    DenseRule::Capacity { role, capacity: *capacity }
                }
                Constraint::RepresentationFloor { category, label, floor } => {
                    DenseRule::Floor { members: group_members(ds, category, label)?, floor: *floor }
                }
                Constraint::Quota { category, label, target } => {
                    DenseRule::Quota { members: group_members(ds, category, label)?, target: *target }
                }
            };
            rules.push((c.id(), rule));
        }
        let problem = Self { candidate_ids, role_ids, candidate_index, role_index, capacities, merit, preference, categories, rules };
        problem.check_feasible()?;
        Ok(problem)
    }

    /// Rejects group rules that no plan can meet.
    fn check_feasible(&self) -> Result<()> {
        let total: u64 = self.capacities.iter().map(|&c| u64::from(c)).sum();
        for (id, rule) in &self.rules {
            let (members, need) = match rule {
                DenseRule::Capacity { .. } => continue,
                DenseRule::Floor { members, floor } => (members, *floor),
                DenseRule::Quota { members, target } => (members, *target),
            };
            let population = members.iter().filter(|&&b| b).count() as u64;
            if u64::from(need) > population {
                return Err(GesaError::Infeasible(format!("{id} needs {need} but only {population} candidates qualify")));
            }
            if u64::from(need) > total {
                return Err(GesaError::Infeasible(format!("{id} needs {need} but total capacity is {total}")));
            }
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn role_count(&self) -> usize {
        self.role_ids.len()
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn role_ids(&self) -> &[String] {
        &self.role_ids
    }

    /// Effective capacity per role (the tightest capacity rule).
    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn merit_at(&self, candidate: usize, role: usize) -> f64 {
        self.merit[candidate * self.role_ids.len() + role]
    }

    pub fn preference_at(&self, candidate: usize, role: usize) -> f64 {
        self.preference[candidate * self.role_ids.len() + role]
    }

    /// `(weight, slot count, label slot per candidate)` for each diversity
    /// category.
    pub fn diversity_categories(&self) -> Vec<(f64, usize, &[u32])> {
        self.categories.iter().map(|c| (c.weight, c.slots, c.labels.as_slice())).collect()
    }

    pub fn candidate_index(&self, id: &str) -> Option<usize> {
        self.candidate_index.get(id).copied()
    }

    pub fn role_index(&self, id: &str) -> Option<usize> {
        self.role_index.get(id).copied()
    }

    pub fn evaluate(&self, genome: &[Option<u32>]) -> Evaluation {
        let m = self.role_ids.len();
        let mut count = 0usize;
        let (mut merit, mut pref) = (0.0, 0.0);
        for (i, g) in genome.iter().enumerate() {
            if let Some(j) = *g {
                count += 1;
                merit += self.merit[i * m + j as usize];
                pref += self.preference[i * m + j as usize];
            }
        }
        let total_violation = self.violation_list(genome).iter().map(|v| v.magnitude).sum();
        if count == 0 {
            return Evaluation { objectives: ObjectiveVector::default(), total_violation, degenerate: true };
        }
        let mut diversity = 0.0;
        for cat in &self.categories {
            let mut counts = vec![0usize; cat.slots];
            for (i, g) in genome.iter().enumerate() {
                if g.is_some() {
                    counts[cat.labels[i] as usize] += 1;
                }
            }
            diversity += cat.weight * entropy_of_counts(&counts);
        }
        let n = count as f64;
        Evaluation {
            objectives: ObjectiveVector::new(merit / n, diversity, pref / n),
            total_violation,
            degenerate: false,
        }
    }

    /// Broken rules in constraint order.
    pub fn violation_list(&self, genome: &[Option<u32>]) -> Vec<ConstraintViolation> {
        let mut load = vec![0u32; self.role_ids.len()];
        for j in genome.iter().flatten() {
            load[*j as usize] += 1;
        }
        let group_count = |members: &[bool]| {
            genome.iter().zip(members).filter(|(g, &b)| b && g.is_some()).count() as f64
        };
        let mut out = Vec::new();
        for (id, rule) in &self.rules {
            let magnitude = match rule {
                DenseRule::Capacity { role, capacity } => f64::from(load[*role].saturating_sub(*capacity)),
                DenseRule::Floor { members, floor } => (f64::from(*floor) - group_count(members)).max(0.0),
                DenseRule::Quota { members, target } => (group_count(members) - f64::from(*target)).abs(),
            };
            if magnitude > 0.0 {
                out.push(ConstraintViolation { constraint_id: id.clone(), magnitude });
            }
        }
        out
    }

    pub fn encode(&self, plan: &AllocationPlan) -> Result<Genome> {
        let mut genome = vec![None; self.candidate_ids.len()];
        for (c, r) in &plan.assignments {
            let i = self.candidate_index(c).ok_or_else(|| GesaError::UnknownId { kind: "candidate", id: c.clone() })?;
            let j = self.role_index(r).ok_or_else(|| GesaError::UnknownId { kind: "role", id: r.clone() })?;
            genome[i] = Some(j as u32);
        }
        Ok(genome)
    }

    /// Materializes a genome as a plan carrying its objectives and violations.
    pub fn decode(&self, genome: &[Option<u32>]) -> AllocationPlan {
        let assignments = genome
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|j| (self.candidate_ids[i].clone(), self.role_ids[j as usize].clone())))
            .collect();
        let eval = self.evaluate(genome);
        let violations = self.violation_list(genome);
        let infeasible = violations.iter().any(|v| v.constraint_id.starts_with("capacity:"));
        AllocationPlan { assignments, objective_values: eval.objectives, violations, infeasible }
    }
}

/// Objective vector of a plan under a problem; an empty plan evaluates to
/// zeros with `degenerate` set.
pub fn evaluate_objectives(plan: &AllocationPlan, problem: &Problem) -> Result<Evaluation> {
    Ok(problem.evaluate(&problem.encode(plan)?))
}

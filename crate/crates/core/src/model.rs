//! Domain types, dataset validation and the canonical `.gesa.json` format.
//!
//! A [`Dataset`] is an immutable value once loaded. Its canonical form sorts
//! every entity class by id (and reference lists inside entities where order
//! carries no meaning), so `write(read(x))` is byte-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};

/// Category name → subcategory label, e.g. `gender → f`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemographicProfile {
    pub group_memberships: BTreeMap<String, String>,
}

impl DemographicProfile {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            group_memberships: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn label(&self, category: &str) -> Option<&str> {
        self.group_memberships.get(category).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub skill_ids: Vec<String>,
    pub org_id: String,
    pub location_id: String,
    pub domain_id: String,
    pub free_text: String,
    /// Ranked role ids, most preferred first.
    #[serde(default)]
    pub preferences: Vec<String>,
    #[serde(default)]
    pub demographics: DemographicProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub id: String,
    pub required_skill_ids: Vec<String>,
    pub org_id: String,
    pub location_id: String,
    pub domain_id: String,
    pub free_text: String,
    pub capacity: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Organizations, locations and domains only carry a display name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub candidate_id: String,
    pub role_id: String,
    pub outcome: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Match {
    pub candidate_id: String,
    pub role_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub candidates: Vec<Candidate>,
    pub roles: Vec<Role>,
    pub skills: Vec<Skill>,
    pub organizations: Vec<Entity>,
    pub locations: Vec<Entity>,
    pub domains: Vec<Entity>,
    /// Open vocabularies: category name → allowed labels.
    #[serde(default)]
    pub demographic_categories: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub ground_truth: Vec<Match>,
}

/// One broken invariant found by [`validate_dataset`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.reason)
    }
}

impl Dataset {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut ds: Dataset = serde_json::from_str(text)?;
        ds.canonicalize();
        Ok(ds)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            GesaError::Format(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json_str(&text)
    }

    /// Sorts entity classes by id and set-like reference lists, leaving
    /// ranked lists (preferences) untouched.
    pub fn canonicalize(&mut self) {
        self.candidates.sort_by(|a, b| a.id.cmp(&b.id));
        for c in &mut self.candidates {
            c.skill_ids.sort();
        }
        self.roles.sort_by(|a, b| a.id.cmp(&b.id));
        for r in &mut self.roles {
            r.required_skill_ids.sort();
        }
        self.skills.sort_by(|a, b| a.id.cmp(&b.id));
        self.organizations.sort_by(|a, b| a.id.cmp(&b.id));
        self.locations.sort_by(|a, b| a.id.cmp(&b.id));
        self.domains.sort_by(|a, b| a.id.cmp(&b.id));
        for labels in self.demographic_categories.values_mut() {
            labels.sort();
        }
        self.interactions.sort();
        self.ground_truth.sort();
    }

    pub fn to_canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.canonicalize();
        let mut text = serde_json::to_string_pretty(&copy).expect("dataset serializes");
        text.push('\n');
        text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_canonical_json())?;
        Ok(())
    }

    pub fn candidate(&self, id: &str) -> Option<&Candidate> {
        self.candidates
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.candidates[i])
            .or_else(|| self.candidates.iter().find(|c| c.id == id))
    }

    pub fn role(&self, id: &str) -> Option<&Role> {
        self.roles
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.roles[i])
            .or_else(|| self.roles.iter().find(|r| r.id == id))
    }

    pub fn skill(&self, id: &str) -> Option<&Skill> {
        self.skills.iter().find(|s| s.id == id)
    }

    pub fn total_capacity(&self) -> u64 {
        self.roles.iter().map(|r| u64::from(r.capacity)).sum()
    }
}

fn check_ids<'a>(
    class: &str,
    ids: impl Iterator<Item = &'a str>,
    out: &mut Vec<Violation>,
) -> HashSet<&'a str> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.trim().is_empty() {
            out.push(Violation {
                entity: format!("{class} <empty>"),
                reason: "id is empty".into(),
            });
            continue;
        }
        if !seen.insert(id) {
            out.push(Violation {
                entity: format!("{class} {id}"),
                reason: format!("duplicate {class} id `{id}`"),
            });
        }
    }
    seen
}

/// Enumerates every broken dataset invariant. An empty report means the
/// dataset is valid. Pure and idempotent.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let candidates = check_ids("candidate", ds.candidates.iter().map(|c| c.id.as_str()), &mut out);
    let roles = check_ids("role", ds.roles.iter().map(|r| r.id.as_str()), &mut out);
    let skills = check_ids("skill", ds.skills.iter().map(|s| s.id.as_str()), &mut out);
    let orgs = check_ids("organization", ds.organizations.iter().map(|e| e.id.as_str()), &mut out);
    let locations = check_ids("location", ds.locations.iter().map(|e| e.id.as_str()), &mut out);
    let domains = check_ids("domain", ds.domains.iter().map(|e| e.id.as_str()), &mut out);

    for (category, labels) in &ds.demographic_categories {
        let unique: BTreeSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            out.push(Violation {
                entity: format!("demographic category {category}"),
                reason: "vocabulary lists a label twice".into(),
            });
        }
    }

    let mut refs = |entity: String, kind: &str, id: &str, known: &HashSet<&str>| {
        if !known.contains(id) {
            out.push(Violation {
                entity,
                reason: format!("references nonexistent {kind} `{id}`"),
            });
        }
    };

    for c in &ds.candidates {
        let who = format!("candidate {}", c.id);
        for s in &c.skill_ids {
            refs(who.clone(), "skill", s, &skills);
        }
        refs(who.clone(), "organization", &c.org_id, &orgs);
        refs(who.clone(), "location", &c.location_id, &locations);
        refs(who.clone(), "domain", &c.domain_id, &domains);
        for r in &c.preferences {
            refs(who.clone(), "role", r, &roles);
        }
    }
    for r in &ds.roles {
        let who = format!("role {}", r.id);
        for s in &r.required_skill_ids {
            refs(who.clone(), "skill", s, &skills);
        }
        refs(who.clone(), "organization", &r.org_id, &orgs);
        refs(who.clone(), "location", &r.location_id, &locations);
        refs(who.clone(), "domain", &r.domain_id, &domains);
    }
    for (i, it) in ds.interactions.iter().enumerate() {
        let who = format!("interaction #{i}");
        refs(who.clone(), "candidate", &it.candidate_id, &candidates);
        refs(who, "role", &it.role_id, &roles);
    }
    for (i, m) in ds.ground_truth.iter().enumerate() {
        let who = format!("ground_truth #{i}");
        refs(who.clone(), "candidate", &m.candidate_id, &candidates);
        refs(who, "role", &m.role_id, &roles);
    }

    for c in &ds.candidates {
        let mut seen = HashSet::new();
        for r in &c.preferences {
            if !seen.insert(r.as_str()) {
                out.push(Violation {
                    entity: format!("candidate {}", c.id),
                    reason: format!("preference list repeats role `{r}`"),
                });
            }
        }
        for (category, label) in &c.demographics.group_memberships {
            match ds.demographic_categories.get(category) {
                None => out.push(Violation {
                    entity: format!("candidate {}", c.id),
                    reason: format!("undeclared demographic category `{category}`"),
                }),
                Some(vocab) if !vocab.contains(label) => out.push(Violation {
                    entity: format!("candidate {}", c.id),
                    reason: format!("label `{label}` not in vocabulary of `{category}`"),
                }),
                Some(_) => {}
            }
        }
    }
    for r in &ds.roles {
        if r.capacity < 1 {
            out.push(Violation {
                entity: format!("role {}", r.id),
                reason: "capacity must be at least 1".into(),
            });
        }
        if r.required_skill_ids.is_empty() {
            out.push(Violation {
                entity: format!("role {}", r.id),
                reason: "no required skills".into(),
            });
        }
    }
    for (i, it) in ds.interactions.iter().enumerate() {
        if it.outcome > 1 {
            out.push(Violation {
                entity: format!("interaction #{i}"),
                reason: format!("outcome {} is not 0 or 1", it.outcome),
            });
        }
    }
    out
}

/// Objective values, all maximized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub merit: f64,
    pub diversity: f64,
    pub preference: f64,
}

impl ObjectiveVector {
    pub fn new(merit: f64, diversity: f64, preference: f64) -> Self {
        Self { merit, diversity, preference }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.merit, self.diversity, self.preference]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    pub fn weighted_sum(&self, weights: [f64; 3]) -> f64 {
        self.to_array().iter().zip(weights).map(|(v, w)| v * w).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub constraint_id: String,
    pub magnitude: f64,
}

/// A (partial) assignment of candidates to roles. Candidates missing from
/// `assignments` are unassigned.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub assignments: BTreeMap<String, String>,
    pub objective_values: ObjectiveVector,
    #[serde(default)]
    pub violations: Vec<ConstraintViolation>,
    /// Set when the plan breaks a hard constraint (e.g. a capacity).
    #[serde(default)]
    pub infeasible: bool,
}

impl AllocationPlan {
    pub fn total_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).sum()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            GesaError::Format(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("plan serializes");
        text.push('\n');
        text
    }
}

/// Inequality rules (`Capacity`, `RepresentationFloor`) and equality rules
/// (`Quota`) over an allocation plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Capacity { role_id: String, capacity: u32 },
    RepresentationFloor { category: String, label: String, floor: u32 },
    Quota { category: String, label: String, target: u32 },
}

impl Constraint {
    pub fn id(&self) -> String {
        match self {
            Constraint::Capacity { role_id, .. } => format!("capacity:{role_id}"),
            Constraint::RepresentationFloor { category, label, .. } => {
                format!("floor:{category}={label}")
            }
            Constraint::Quota { category, label, .. } => format!("quota:{category}={label}"),
        }
    }

    pub fn is_equality(&self) -> bool {
        matches!(self, Constraint::Quota { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    /// One capacity rule per role, nothing else.
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self {
            constraints: ds
                .roles
                .iter()
                .map(|r| Constraint::Capacity {
                    role_id: r.id.clone(),
                    capacity: r.capacity,
                })
                .collect(),
        }
    }

    pub fn with(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn extend(mut self, extra: impl IntoIterator<Item = Constraint>) -> Self {
        self.constraints.extend(extra);
        self
    }

    /// `m`: number of inequality constraints.
    pub fn inequality_count(&self) -> usize {
        self.constraints.iter().filter(|c| !c.is_equality()).count()
    }

    /// `p`: number of equality constraints.
    pub fn equality_count(&self) -> usize {
        self.constraints.iter().filter(|c| c.is_equality()).count()
    }

    /// Checks the set against a dataset: every role has a capacity rule, every
    /// reference resolves and quota targets fit in the total selection size.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        let mut capped = HashSet::new();
        for c in &self.constraints {
            match c {
                Constraint::Capacity { role_id, .. } => {
                    if ds.role(role_id).is_none() {
                        return Err(GesaError::UnknownId { kind: "role", id: role_id.clone() });
                    }
                    capped.insert(role_id.as_str());
                }
                Constraint::RepresentationFloor { category, label, .. }
                | Constraint::Quota { category, label, .. } => {
                    let known = ds
                        .demographic_categories
                        .get(category)
                        .is_some_and(|v| v.contains(label));
                    if !known {
                        return Err(GesaError::UnknownId {
                            kind: "group",
                            id: format!("{category}={label}"),
                        });
                    }
                    if let Constraint::Quota { target, .. } = c {
                        if u64::from(*target) > ds.total_capacity() {
                            return Err(GesaError::InvalidArgument(format!(
                                "quota {} exceeds total capacity {}",
                                c.id(),
                                ds.total_capacity()
                            )));
                        }
                    }
                }
            }
        }
        if let Some(r) = ds.roles.iter().find(|r| !capped.contains(r.id.as_str())) {
            return Err(GesaError::InvalidArgument(format!(
                "role `{}` has no capacity constraint",
                r.id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn minimal() -> Dataset {
        let mut ds = Dataset {
            candidates: vec![Candidate {
                id: "c1".into(),
                skill_ids: vec!["s1".into()],
                org_id: "o1".into(),
                location_id: "l1".into(),
                domain_id: "d1".into(),
                free_text: "rust developer".into(),
                preferences: vec!["r1".into()],
                demographics: DemographicProfile::new([("gender", "f")]),
            }],
            roles: vec![Role {
                id: "r1".into(),
                required_skill_ids: vec!["s1".into()],
                org_id: "o1".into(),
                location_id: "l1".into(),
                domain_id: "d1".into(),
                free_text: "compiler engineer".into(),
                capacity: 1,
            }],
            skills: vec![Skill { id: "s1".into(), name: "rust".into(), text: None }],
            organizations: vec![Entity { id: "o1".into(), name: "acme".into() }],
            locations: vec![Entity { id: "l1".into(), name: "lisbon".into() }],
            domains: vec![Entity { id: "d1".into(), name: "systems".into() }],
            ..Default::default()
        };
        ds.demographic_categories
            .insert("gender".into(), vec!["f".into(), "m".into()]);
        ds
    }
}

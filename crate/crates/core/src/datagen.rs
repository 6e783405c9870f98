//! Seeded synthetic datasets with planted matches and injected bias.
//!
//! Roles draw required skills from the general pool. Part of the candidate
//! pool is built from a role template (most of the role's skills and its
//! domain), so planted matches exist at any scale. Ground truth is then every
//! pair with skill coverage ≥ 0.75 and matching domains.
//!
//! A designated skill cluster is held by `(1 + b) / 2` of the designated
//! subgroup and `(1 − b) / 2` of everyone else, where `b` is the bias
//! strength. Cluster skills are never required by roles.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};
use crate::model::{Candidate, Dataset, DemographicProfile, Entity, Interaction, Match, Role, Skill};

pub const COVERAGE_THRESHOLD: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    /// `(label, marginal probability)`; probabilities sum to 1.
    pub labels: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub candidates: usize,
    pub roles: usize,
    pub skills: usize,
    pub organizations: usize,
    pub locations: usize,
    pub domains: usize,
    /// Inclusive range.
    pub skills_per_candidate: (usize, usize),
    pub skills_per_role: (usize, usize),
    pub capacity: (u32, u32),
    pub categories: Vec<CategorySpec>,
    /// The first label of this category is the designated subgroup. Defaults
    /// to the first category.
    pub biased_category: Option<String>,
    pub bias_strength: f64,
    pub cluster_size: usize,
    /// Share of candidates built from a role template.
    pub template_fraction: f64,
    /// Probability that a candidate's free text names their subgroup.
    pub proxy_strength: f64,
    /// Probability that a historical positive outcome of a candidate outside
    /// the designated subgroup is recorded as 0.
    pub outcome_bias: f64,
    pub interactions_per_candidate: usize,
    pub preference_length: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            candidates: 100,
            roles: 10,
            skills: 30,
            organizations: 5,
            locations: 5,
            domains: 3,
            skills_per_candidate: (3, 6),
            skills_per_role: (2, 4),
            capacity: (1, 3),
            categories: vec![
                CategorySpec { name: "gender".into(), labels: vec![("female".into(), 0.5), ("male".into(), 0.5)] },
                CategorySpec {
                    name: "region".into(),
                    labels: vec![("north".into(), 0.4), ("south".into(), 0.3), ("east".into(), 0.3)],
                },
            ],
            biased_category: None,
            bias_strength: 0.0,
            cluster_size: 3,
            template_fraction: 0.5,
            proxy_strength: 0.0,
            outcome_bias: 0.0,
            interactions_per_candidate: 4,
            preference_length: 3,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn with_counts(counts: [usize; 6]) -> Self {
        let [candidates, roles, skills, organizations, locations, domains] = counts;
        Self { candidates, roles, skills, organizations, locations, domains, ..Default::default() }
    }

    fn biased(&self) -> Option<&CategorySpec> {
        match &self.biased_category {
            Some(name) => self.categories.iter().find(|c| &c.name == name),
            None => self.categories.first(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.candidates, self.roles, self.skills, self.organizations, self.locations, self.domains];
        if counts.contains(&0) {
            return Err(GesaError::InvalidArgument("every entity count must be at least 1".into()));
        }
        for (name, p) in [
            ("bias_strength", self.bias_strength),
            ("template_fraction", self.template_fraction),
            ("proxy_strength", self.proxy_strength),
            ("outcome_bias", self.outcome_bias),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GesaError::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        for c in &self.categories {
            if c.labels.is_empty() {
                return Err(GesaError::InvalidArgument(format!("category `{}` has no labels", c.name)));
            }
            let sum: f64 = c.labels.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 || c.labels.iter().any(|(_, p)| *p < 0.0) {
                return Err(GesaError::InvalidArgument(format!("probabilities of `{}` must sum to 1", c.name)));
            }
        }
        if let Some(name) = &self.biased_category {
            if self.biased().is_none() {
                return Err(GesaError::InvalidArgument(format!("unknown biased category `{name}`")));
            }
        }
        let (lo, hi) = self.skills_per_role;
        let (clo, chi) = self.skills_per_candidate;
        let (cap_lo, cap_hi) = self.capacity;
        if lo == 0 || lo > hi || clo > chi || cap_lo == 0 || cap_lo > cap_hi {
            return Err(GesaError::InvalidArgument("ranges must be non-empty with positive minimums".into()));
        }
        let cluster = self.cluster_size();
        if hi > self.skills - cluster || chi > self.skills {
            return Err(GesaError::InvalidArgument("more skills per entity than skills exist".into()));
        }
        if self.preference_length > self.roles {
            return Err(GesaError::InvalidArgument("preference list longer than the role count".into()));
        }
        Ok(())
    }

    /// Cluster size actually used: at most `skills − 1`, so roles keep a
    /// non-empty pool.
    pub fn cluster_size(&self) -> usize {
        self.cluster_size.min(self.skills.saturating_sub(1))
    }
}

pub fn skill_id(i: usize) -> String {
    format!("s{i:04}")
}

/// Ids of the designated skill cluster.
pub fn cluster_skill_ids(spec: &GenSpec) -> Vec<String> {
    (0..spec.cluster_size()).map(skill_id).collect()
}

/// The designated subgroup as `(category, label)`.
pub fn designated_subgroup(spec: &GenSpec) -> Option<(String, String)> {
    spec.biased().map(|c| (c.name.clone(), c.labels[0].0.clone()))
}

fn coverage(required: &[String], held: &BTreeSet<&str>) -> f64 {
    let hit = required.iter().filter(|s| held.contains(s.as_str())).count();
    hit as f64 / required.len() as f64
}

/// The planting rule.
pub fn is_planted_match(candidate: &Candidate, role: &Role) -> bool {
    if candidate.domain_id != role.domain_id || role.required_skill_ids.is_empty() {
        return false;
    }
    let held: BTreeSet<&str> = candidate.skill_ids.iter().map(String::as_str).collect();
    coverage(&role.required_skill_ids, &held) >= COVERAGE_THRESHOLD
}

fn sample_label<R: Rng>(rng: &mut R, labels: &[(String, f64)]) -> String {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (label, p) in labels {
        acc += p;
        if u < acc {
            return label.clone();
        }
    }
    labels.last().unwrap().0.clone()
}

const DOMAIN_WORDS: [&str; 8] = ["finance", "health", "energy", "logistics", "education", "retail", "media", "public"];

pub fn generate_dataset(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cluster = spec.cluster_size();

    let skills: Vec<Skill> =
        (0..spec.skills).map(|i| Skill { id: skill_id(i), name: format!("skill{i}"), text: None }).collect();
    let entity = |prefix: &str, word: &str, i: usize| Entity { id: format!("{prefix}{i:03}"), name: format!("{word}{i}") };
    let organizations: Vec<Entity> = (0..spec.organizations).map(|i| entity("o", "org", i)).collect();
    let locations: Vec<Entity> = (0..spec.locations).map(|i| entity("l", "city", i)).collect();
    let domains: Vec<Entity> = (0..spec.domains)
        .map(|i| Entity { id: format!("d{i:03}"), name: DOMAIN_WORDS[i % DOMAIN_WORDS.len()].to_string() })
        .collect();
    let general: Vec<usize> = (cluster..spec.skills).collect();

    let mut roles = Vec::with_capacity(spec.roles);
    for j in 0..spec.roles {
        let k = rng.random_range(spec.skills_per_role.0..=spec.skills_per_role.1);
        let mut req: Vec<String> = general.choose_multiple(&mut rng, k).map(|&s| skill_id(s)).collect();
        req.sort();
        let domain = rng.random_range(0..spec.domains);
        let role = Role {
            id: format!("r{j:04}"),
            free_text: format!("{} role", domains[domain].name),
            required_skill_ids: req,
            org_id: organizations[rng.random_range(0..spec.organizations)].id.clone(),
            location_id: locations[rng.random_range(0..spec.locations)].id.clone(),
            domain_id: domains[domain].id.clone(),
            capacity: rng.random_range(spec.capacity.0..=spec.capacity.1),
        };
        roles.push(role);
    }

    let designated = designated_subgroup(spec);
    let mut candidates = Vec::with_capacity(spec.candidates);
    for i in 0..spec.candidates {
        let mut profile = Vec::new();
        for c in &spec.categories {
            profile.push((c.name.clone(), sample_label(&mut rng, &c.labels)));
        }
        let in_designated = designated
            .as_ref()
            .is_some_and(|(cat, label)| profile.iter().any(|(c, l)| c == cat && l == label));

        let target = rng.random_range(spec.skills_per_candidate.0..=spec.skills_per_candidate.1);
        let mut held: BTreeSet<usize> = BTreeSet::new();
        let mut domain = rng.random_range(0..spec.domains);
        if rng.random_bool(spec.template_fraction) {
            let role = &roles[rng.random_range(0..spec.roles)];
            let req: Vec<usize> = role.required_skill_ids.iter().map(|s| s[1..].parse().unwrap()).collect();
            let keep = ((req.len() as f64) * COVERAGE_THRESHOLD).ceil() as usize;
            let keep = rng.random_range(keep..=req.len());
            held.extend(req.choose_multiple(&mut rng, keep).copied());
            domain = domains.iter().position(|d| d.id == role.domain_id).unwrap();
        }
        let cluster_rate = if in_designated { (1.0 + spec.bias_strength) / 2.0 } else { (1.0 - spec.bias_strength) / 2.0 };
        if cluster > 0 && rng.random_bool(cluster_rate) {
            held.insert(rng.random_range(0..cluster));
        }
        let mut pool: Vec<usize> = general.iter().copied().filter(|s| !held.contains(s)).collect();
        pool.shuffle(&mut rng);
        while held.len() < target {
            match pool.pop() {
                Some(s) => {
                    held.insert(s);
                }
                None => break,
            }
        }

        let mut text = format!("{} professional", domains[domain].name);
        if spec.proxy_strength > 0.0 && rng.random_bool(spec.proxy_strength) {
            if let Some((cat, _)) = &designated {
                let label = &profile.iter().find(|(c, _)| c == cat).unwrap().1;
                text.push_str(&format!(" {label} {label}network"));
            }
        }
        candidates.push(Candidate {
            id: format!("c{i:05}"),
            skill_ids: held.iter().map(|&s| skill_id(s)).collect(),
            org_id: organizations[rng.random_range(0..spec.organizations)].id.clone(),
            location_id: locations[rng.random_range(0..spec.locations)].id.clone(),
            domain_id: domains[domain].id.clone(),
            free_text: text,
            preferences: Vec::new(),
            demographics: DemographicProfile::new(profile),
        });
    }

    let mut ground_truth = Vec::new();
    let mut matches_of: Vec<Vec<usize>> = vec![Vec::new(); candidates.len()];
    for (i, c) in candidates.iter().enumerate() {
        for (j, r) in roles.iter().enumerate() {
            if is_planted_match(c, r) {
                ground_truth.push(Match { candidate_id: c.id.clone(), role_id: r.id.clone() });
                matches_of[i].push(j);
            }
        }
    }

    let mut interactions = Vec::new();
    for (i, c) in candidates.iter_mut().enumerate() {
        let mut prefs: Vec<usize> = matches_of[i].clone();
        prefs.shuffle(&mut rng);
        let mut others: Vec<usize> = (0..spec.roles).filter(|j| !matches_of[i].contains(j)).collect();
        others.shuffle(&mut rng);
        let ranked: Vec<usize> = prefs.iter().chain(others.iter()).copied().collect();
        c.preferences = ranked.iter().take(spec.preference_length).map(|&j| roles[j].id.clone()).collect();

        let in_designated = designated.as_ref().is_none_or(|(cat, label)| c.demographics.label(cat) == Some(label));
        let n_pos = (spec.interactions_per_candidate / 2).min(prefs.len());
        let chosen: Vec<usize> = prefs.iter().take(n_pos).chain(others.iter()).take(spec.interactions_per_candidate).copied().collect();
        for j in chosen {
            let mut outcome = matches_of[i].contains(&j);
            if outcome && !in_designated && spec.outcome_bias > 0.0 && rng.random_bool(spec.outcome_bias) {
                outcome = false;
            }
            interactions.push(Interaction { candidate_id: c.id.clone(), role_id: roles[j].id.clone(), outcome: u8::from(outcome) });
        }
    }

    let demographic_categories: BTreeMap<String, Vec<String>> = spec
        .categories
        .iter()
        .map(|c| (c.name.clone(), c.labels.iter().map(|(l, _)| l.clone()).collect()))
        .collect();
    let mut ds = Dataset {
        candidates,
        roles,
        skills,
        organizations,
        locations,
        domains,
        demographic_categories,
        interactions,
        ground_truth,
    };
    ds.canonicalize();
    Ok(ds)
}

/// Share of each subgroup of `category` holding at least one cluster skill.
pub fn cluster_rates(ds: &Dataset, cluster: &[String], category: &str) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for c in &ds.candidates {
        let Some(label) = c.demographics.label(category) else { continue };
        let e = counts.entry(label.to_string()).or_default();
        e.1 += 1;
        if c.skill_ids.iter().any(|s| cluster.contains(s)) {
            e.0 += 1;
        }
    }
    counts.into_iter().map(|(k, (hit, n))| (k, hit as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_dataset;

    #[test]
    fn counts_match_spec() {
        let ds = generate_dataset(&GenSpec::with_counts([100, 10, 30, 5, 5, 3])).unwrap();
        assert_eq!(
            [ds.candidates.len(), ds.roles.len(), ds.skills.len(), ds.organizations.len(), ds.locations.len(), ds.domains.len()],
            [100, 10, 30, 5, 5, 3]
        );
        assert!(validate_dataset(&ds).is_empty());
        assert!(!ds.ground_truth.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GenSpec { seed: 9, bias_strength: 0.3, proxy_strength: 0.5, outcome_bias: 0.2, ..Default::default() };
        let a = generate_dataset(&spec).unwrap().to_canonical_json();
        let b = generate_dataset(&spec).unwrap().to_canonical_json();
        assert_eq!(a, b);
        let c = generate_dataset(&GenSpec { seed: 10, ..spec }).unwrap().to_canonical_json();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_dataset(&GenSpec { roles: 0, ..Default::default() }).is_err());
        assert!(generate_dataset(&GenSpec { bias_strength: 1.5, ..Default::default() }).is_err());
        assert!(generate_dataset(&GenSpec { skills: 4, skills_per_role: (2, 4), ..Default::default() }).is_err());
        let mut bad = GenSpec::default();
        bad.categories[0].labels[0].1 = 0.9;
        assert!(generate_dataset(&bad).is_err());
    }
}

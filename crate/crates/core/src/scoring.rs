//! Per-pair similarity tables and the merit matrix fed to the optimizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingProvider, EmbeddingStore};
use crate::error::{GesaError, Result};
use crate::hetgraph::{candidate_text, graph_similarity, role_text};
use crate::model::{ConstraintSet, Dataset};
use crate::objectives::{merit, skill_match_score, DiversitySpec, MeritWeights, PairSims, Problem};

/// Row-major `candidates × roles` tables of the three similarity terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTables {
    pub candidate_ids: Vec<String>,
    pub role_ids: Vec<String>,
    pub semantic: Vec<f64>,
    /// `None` when no graph embeddings were supplied.
    pub graph: Option<Vec<f64>>,
    pub skill: Vec<f64>,
}

impl ScoreTables {
    /// Semantic similarity is `max(0, cos)` of the provider's text embeddings;
    /// graph similarity comes from `graph_embeddings` when given.
    pub fn compute(ds: &Dataset, provider: &dyn EmbeddingProvider, graph_embeddings: Option<&EmbeddingStore>) -> Result<Self> {
        let cand: Vec<Vec<f64>> = ds
            .candidates
            .par_iter()
            .map(|c| provider.embed_entity(&c.id, &candidate_text(ds, c)).map(|v| v.into_inner()))
            .collect::<Result<_>>()?;
        let roles: Vec<Vec<f64>> = ds
            .roles
            .par_iter()
            .map(|r| provider.embed_entity(&r.id, &role_text(ds, r)).map(|v| v.into_inner()))
            .collect::<Result<_>>()?;

        let rows: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = ds
            .candidates
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut sem = Vec::with_capacity(ds.roles.len());
                let mut skill = Vec::with_capacity(ds.roles.len());
                let mut graph = graph_embeddings.map(|_| Vec::with_capacity(ds.roles.len()));
                for (j, r) in ds.roles.iter().enumerate() {
                    sem.push(cosine(&cand[i], &roles[j]).unwrap_or(0.0).max(0.0));
                    skill.push(skill_match_score(c, r)?);
                    if let (Some(store), Some(g)) = (graph_embeddings, graph.as_mut()) {
                        g.push(graph_similarity(store, &c.id, &r.id)?);
                    }
                }
                Ok((sem, skill, graph))
            })
            .collect::<Result<_>>()?;

        let mut semantic = Vec::with_capacity(ds.candidates.len() * ds.roles.len());
        let mut skill = Vec::with_capacity(semantic.capacity());
        let mut graph = graph_embeddings.map(|_| Vec::with_capacity(semantic.capacity()));
        for (s, k, g) in rows {
            semantic.extend(s);
            skill.extend(k);
            if let (Some(all), Some(g)) = (graph.as_mut(), g) {
                all.extend(g);
            }
        }
        Ok(Self {
            candidate_ids: ds.candidates.iter().map(|c| c.id.clone()).collect(),
            role_ids: ds.roles.iter().map(|r| r.id.clone()).collect(),
            semantic,
            graph,
            skill,
        })
    }

    pub fn role_count(&self) -> usize {
        self.role_ids.len()
    }

    pub fn index(&self, candidate: &str, role: &str) -> Result<(usize, usize)> {
        let i = self
            .candidate_ids
            .iter()
            .position(|c| c == candidate)
            .ok_or_else(|| GesaError::UnknownId { kind: "candidate", id: candidate.to_string() })?;
        let j = self
            .role_ids
            .iter()
            .position(|r| r == role)
            .ok_or_else(|| GesaError::UnknownId { kind: "role", id: role.to_string() })?;
        Ok((i, j))
    }

    pub fn sims(&self, i: usize, j: usize) -> PairSims {
        let k = i * self.role_count() + j;
        PairSims {
            semantic: self.semantic[k],
            graph: self.graph.as_ref().map_or(0.0, |g| g[k]),
            skill: self.skill[k],
        }
    }

    /// Merit for every pair. A positive graph weight needs graph embeddings.
    pub fn merit_table(&self, weights: &MeritWeights) -> Result<Vec<f64>> {
        weights.validate()?;
        if weights.beta > 0.0 && self.graph.is_none() {
            return Err(GesaError::InvalidArgument("graph weight is positive but no graph embeddings were given".into()));
        }
        let m = self.role_count();
        (0..self.semantic.len()).map(|k| merit(weights, &self.sims(k / m, k % m))).collect()
    }
}

/// Tables plus merit weights, and the optimizer problem built from them.
pub fn build_problem(
    ds: &Dataset,
    tables: &ScoreTables,
    weights: &MeritWeights,
    spec: &DiversitySpec,
    constraints: &ConstraintSet,
) -> Result<Problem> {
    if tables.candidate_ids.len() != ds.candidates.len() || tables.role_ids.len() != ds.roles.len() {
        return Err(GesaError::DimensionMismatch {
            expected: ds.candidates.len() * ds.roles.len(),
            actual: tables.semantic.len(),
        });
    }
    Problem::new(ds, tables.merit_table(weights)?, spec, constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::model::fixtures;

    #[test]
    fn tables_have_expected_shape_and_range() {
        let ds = fixtures::minimal();
        let t = ScoreTables::compute(&ds, &HashEmbedder::new(32).unwrap(), None).unwrap();
        assert_eq!(t.semantic.len(), ds.candidates.len() * ds.roles.len());
        assert!(t.semantic.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(t.skill[0], 1.0);
        let w = MeritWeights::default();
        assert!(t.merit_table(&w).is_err());
        let w = MeritWeights::new(0.5, 0.0, 0.5).unwrap();
        let m = t.merit_table(&w).unwrap();
        assert!((m[0] - (0.5 * t.semantic[0] + 0.5)).abs() < 1e-12);
    }
}

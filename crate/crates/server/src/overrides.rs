use gesa_core::model::{AllocationPlan, Dataset};
use gesa_core::objectives::Problem;
use gesa_core::{GesaError, Result};
use serde::{Deserialize, Serialize};

/// A human change to one assignment. `to_role = None` unassigns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub seq: u64,
    pub job_id: String,
    pub candidate_id: String,
    pub from_role: Option<String>,
    pub to_role: Option<String>,
    pub justification: String,
    pub actor: String,
    pub reason: String,
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct OverrideRequest {
    pub candidate_id: String,
    #[serde(default)]
    pub to_role: Option<String>,
    #[serde(default)]
    pub justification: String,
    #[serde(default)]
    pub actor: String,
    #[serde(default)]
    pub reason: Option<String>,
}

/// Why an override was refused.
#[derive(Debug)]
pub enum Rejection {
    UnknownEntity(GesaError),
    Invalid(String),
}

/// Checks a request against the current plan.
pub fn check_override(ds: &Dataset, plan: &AllocationPlan, req: &OverrideRequest) -> std::result::Result<(), Rejection> {
    if req.justification.trim().is_empty() {
        return Err(Rejection::Invalid("justification must not be empty".into()));
    }
    if ds.candidate(&req.candidate_id).is_none() {
        return Err(Rejection::UnknownEntity(GesaError::UnknownId { kind: "candidate", id: req.candidate_id.clone() }));
    }
    if let Some(to) = &req.to_role {
        let role = ds
            .role(to)
            .ok_or_else(|| Rejection::UnknownEntity(GesaError::UnknownId { kind: "role", id: to.clone() }))?;
        let load = plan.assignments.iter().filter(|(c, r)| *r == to && **c != req.candidate_id).count();
        if load as u32 >= role.capacity {
            return Err(Rejection::Invalid(format!("role `{to}` is already at its capacity of {}", role.capacity)));
        }
    }
    Ok(())
}

/// Applies one override and re-scores the plan.
pub fn apply_override(problem: &Problem, plan: &AllocationPlan, record: &OverrideRecord) -> Result<AllocationPlan> {
    let mut next = plan.clone();
    match &record.to_role {
        Some(r) => {
            next.assignments.insert(record.candidate_id.clone(), r.clone());
        }
        None => {
            next.assignments.remove(&record.candidate_id);
        }
    }
    Ok(problem.decode(&problem.encode(&next)?))
}

/// Replays a log over the plan it started from.
pub fn replay(problem: &Problem, base: &AllocationPlan, log: &[OverrideRecord]) -> Result<AllocationPlan> {
    let mut plan = problem.decode(&problem.encode(base)?);
    for record in log {
        plan = apply_override(problem, &plan, record)?;
    }
    Ok(plan)
}

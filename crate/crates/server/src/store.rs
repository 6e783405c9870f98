//! On-disk state: one directory per dataset, one per job below it.
//!
//! ```text
//! <root>/feedback.json
//! <root>/datasets/<id>/dataset.gesa.json
//! <root>/datasets/<id>/jobs/<job>/job.json
//!                                 front.json, trace.csv
//!                                 selected.json, plan.json
//!                                 overrides.jsonl
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use gesa_core::debias::FairnessReport;
use gesa_core::model::{validate_dataset, AllocationPlan, Dataset};
use gesa_core::objectives::{DiversitySpec, MeritWeights, Problem};
use gesa_core::optimizer::{run_nsga2, select_solution, ParetoFront, SelectionPolicy};
use gesa_core::pipeline::{build, plan_fairness, score_tables, top_roles, AllocationConfig};
use gesa_core::scoring::ScoreTables;
use gesa_core::GesaError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feedback::FeedbackState;
use crate::overrides::{apply_override, replay, OverrideRecord};

/// Failures of service operations, grouped by how a client should react.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl From<GesaError> for ServiceError {
    fn from(e: GesaError) -> Self {
        let text = e.to_string();
        match e {
            GesaError::UnknownId { .. } | GesaError::ColdStart { .. } => Self::NotFound(text),
            GesaError::Format(_)
            | GesaError::InvalidDataset(_)
            | GesaError::InvalidArgument(_)
            | GesaError::DimensionMismatch { .. } => Self::BadRequest(text),
            GesaError::Io(_) => Self::Internal(text),
            _ => Self::Unprocessable(text),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_active(self) -> bool {
        matches!(self, JobStatus::Queued | JobStatus::Running)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationJob {
    pub job_id: String,
    pub dataset_id: String,
    pub config: AllocationConfig,
    pub status: JobStatus,
    /// Front document name, present once the job is done.
    pub result: Option<String>,
    pub error: Option<String>,
    pub created_ms: u64,
    pub finished_ms: Option<u64>,
}

/// Everything derived from a finished job that requests need.
pub struct JobArtifacts {
    pub dataset: Arc<Dataset>,
    pub tables: ScoreTables,
    pub problem: Problem,
    pub merit: MeritWeights,
    pub diversity: DiversitySpec,
    pub front: ParetoFront,
    pub best_merit: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct PlanState {
    pub base: AllocationPlan,
    pub current: AllocationPlan,
    pub log: Vec<OverrideRecord>,
}

struct JobEntry {
    record: AllocationJob,
    artifacts: Option<Arc<JobArtifacts>>,
    plan: Option<PlanState>,
}

pub struct Store {
    root: PathBuf,
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    jobs: RwLock<BTreeMap<String, JobEntry>>,
    feedback: Mutex<FeedbackState>,
    next_job: Mutex<u64>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Content address of a dataset's canonical form.
pub fn dataset_id(ds: &Dataset) -> String {
    let digest = Sha256::digest(ds.to_canonical_json().as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("ds-{hex}")
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    /// Opens `root`, loading every dataset, job and the feedback state found
    /// there.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("datasets"))?;
        let feedback = match root.join("feedback.json") {
            p if p.exists() => read_json(&p)?,
            _ => FeedbackState::default(),
        };
        let store = Self {
            root,
            datasets: RwLock::new(BTreeMap::new()),
            jobs: RwLock::new(BTreeMap::new()),
            feedback: Mutex::new(feedback),
            next_job: Mutex::new(1),
        };
        store.load()?;
        Ok(store)
    }

    fn load(&self) -> Result<()> {
        let mut names: Vec<PathBuf> = fs::read_dir(self.root.join("datasets"))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        names.sort();
        let mut max_job = 0;
        for dir in names {
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            let file = dir.join("dataset.gesa.json");
            if !file.exists() {
                continue;
            }
            self.datasets.write().unwrap().insert(id.clone(), Arc::new(Dataset::read(&file)?));
            let jobs = dir.join("jobs");
            if !jobs.exists() {
                continue;
            }
            for entry in fs::read_dir(jobs)? {
                let path = entry?.path();
                let mut record: AllocationJob = read_json(&path.join("job.json"))?;
                if record.status.is_active() {
                    record.status = JobStatus::Failed;
                    record.error = Some("interrupted by a restart".into());
                }
                if let Some(n) = record.job_id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                    max_job = max_job.max(n);
                }
                let plan = if record.status == JobStatus::Done {
                    let base: AllocationPlan = read_json(&path.join("selected.json"))?;
                    let current: AllocationPlan = read_json(&path.join("plan.json"))?;
                    let log = fs::read_to_string(path.join("overrides.jsonl"))?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(serde_json::from_str)
                        .collect::<std::result::Result<Vec<OverrideRecord>, _>>()?;
                    Some(PlanState { base, current, log })
                } else {
                    None
                };
                self.jobs.write().unwrap().insert(record.job_id.clone(), JobEntry { record, artifacts: None, plan });
            }
        }
        *self.next_job.lock().unwrap() = max_job + 1;
        Ok(())
    }

    fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    fn job_dir(&self, record: &AllocationJob) -> PathBuf {
        self.dataset_dir(&record.dataset_id).join("jobs").join(&record.job_id)
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<Dataset>> {
        self.datasets
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown dataset `{id}`")))
    }

    /// Stores a dataset under `id`. Replacing one that jobs refer to is
    /// refused.
    pub fn put_dataset(&self, id: &str, mut ds: Dataset) -> Result<Arc<Dataset>> {
        if !valid_id(id) {
            return Err(ServiceError::BadRequest(format!("`{id}` is not a valid dataset id")));
        }
        ds.canonicalize();
        let violations = validate_dataset(&ds);
        if !violations.is_empty() {
            let first: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
            return Err(ServiceError::BadRequest(format!(
                "dataset failed validation with {} violation(s): {}",
                violations.len(),
                first.join("; ")
            )));
        }
        let mut datasets = self.datasets.write().unwrap();
        if let Some(existing) = datasets.get(id) {
            if **existing == ds {
                return Ok(existing.clone());
            }
            if self.jobs.read().unwrap().values().any(|j| j.record.dataset_id == id) {
                return Err(ServiceError::Conflict(format!("dataset `{id}` has allocation jobs and cannot be replaced")));
            }
        }
        let dir = self.dataset_dir(id);
        fs::create_dir_all(&dir)?;
        ds.write(dir.join("dataset.gesa.json"))?;
        let ds = Arc::new(ds);
        datasets.insert(id.to_string(), ds.clone());
        Ok(ds)
    }

    pub fn feedback(&self) -> FeedbackState {
        self.feedback.lock().unwrap().clone()
    }

    pub fn set_feedback(&self, state: FeedbackState) -> Result<()> {
        let mut guard = self.feedback.lock().unwrap();
        write_json(&self.root.join("feedback.json"), &state)?;
        *guard = state;
        Ok(())
    }

    fn count_override(&self, reason: &str) -> Result<()> {
        let mut state = self.feedback();
        *state.override_counts.entry(reason.to_string()).or_default() += 1;
        self.set_feedback(state)
    }

    /// Queues a job. At most one job per dataset may be queued or running.
    pub fn create_job(&self, dataset_id: &str, config: AllocationConfig) -> Result<AllocationJob> {
        self.dataset(dataset_id)?;
        config.validate()?;
        if config.semantic_embeddings.is_some() || config.graph_embeddings.is_some() {
            return Err(ServiceError::BadRequest("embedding files are not accepted by the service".into()));
        }
        let mut jobs = self.jobs.write().unwrap();
        if jobs.values().any(|j| j.record.dataset_id == dataset_id && j.record.status.is_active()) {
            return Err(ServiceError::Conflict(format!("dataset `{dataset_id}` already has an active job")));
        }
        let mut next = self.next_job.lock().unwrap();
        let record = AllocationJob {
            job_id: format!("job-{:06}", *next),
            dataset_id: dataset_id.to_string(),
            config,
            status: JobStatus::Queued,
            result: None,
            error: None,
            created_ms: now_ms(),
            finished_ms: None,
        };
        *next += 1;
        let dir = self.job_dir(&record);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("job.json"), &record)?;
        jobs.insert(record.job_id.clone(), JobEntry { record: record.clone(), artifacts: None, plan: None });
        Ok(record)
    }

    fn set_status(&self, job_id: &str, status: JobStatus, error: Option<String>) -> Result<AllocationJob> {
        let mut jobs = self.jobs.write().unwrap();
        let entry = jobs.get_mut(job_id).ok_or_else(|| ServiceError::NotFound(format!("unknown job `{job_id}`")))?;
        entry.record.status = status;
        entry.record.error = error;
        if !status.is_active() {
            entry.record.finished_ms = Some(now_ms());
        }
        if status == JobStatus::Done {
            entry.record.result = Some("front.json".into());
        }
        write_json(&self.job_dir(&entry.record).join("job.json"), &entry.record)?;
        Ok(entry.record.clone())
    }

    pub fn job(&self, job_id: &str) -> Result<AllocationJob> {
        self.jobs
            .read()
            .unwrap()
            .get(job_id)
            .map(|j| j.record.clone())
            .ok_or_else(|| ServiceError::NotFound(format!("unknown job `{job_id}`")))
    }

    /// Runs a queued job to completion. Blocking.
    pub fn run_job(&self, job_id: &str) {
        let outcome = self.set_status(job_id, JobStatus::Running, None).and_then(|record| self.execute(&record));
        let result = match outcome {
            Ok(()) => self.set_status(job_id, JobStatus::Done, None),
            Err(e) => {
                log::warn!("job {job_id} failed: {e}");
                self.set_status(job_id, JobStatus::Failed, Some(e.to_string()))
            }
        };
        if let Err(e) = result {
            log::error!("job {job_id}: could not record status: {e}");
        }
    }

    fn derive(&self, record: &AllocationJob, front: Option<ParetoFront>) -> Result<JobArtifacts> {
        let dataset = self.dataset(&record.dataset_id)?;
        let config = &record.config;
        let tables = score_tables(&dataset, config.embedding_dim, None, None)?;
        let problem = build(&dataset, config, &tables)?;
        let front = match front {
            Some(f) => f,
            None => read_json(&self.job_dir(record).join("front.json"))?,
        };
        let merit = config.merit_weights(false)?;
        let best_merit =
            top_roles(&tables, &merit)?.into_iter().map(|(c, r)| (c, r.first().map_or(0.0, |x| x.merit))).collect();
        let diversity = config.diversity_spec(&dataset)?;
        Ok(JobArtifacts { dataset, tables, problem, merit, diversity, front, best_merit })
    }

    fn execute(&self, record: &AllocationJob) -> Result<()> {
        let dataset = self.dataset(&record.dataset_id)?;
        let tables = score_tables(&dataset, record.config.embedding_dim, None, None)?;
        let problem = build(&dataset, &record.config, &tables)?;
        let front = run_nsga2(&problem, &record.config.optimizer)?;
        let dir = self.job_dir(record);
        fs::write(dir.join("front.json"), front.to_json())?;
        fs::write(dir.join("trace.csv"), front.trace_csv())?;
        let artifacts = Arc::new(self.derive(record, Some(front))?);
        let policy = record.config.selection.clone().unwrap_or_else(|| SelectionPolicy {
            weights: self.feedback().weights,
            mandatory: Vec::new(),
        });
        let selected = select_solution(&artifacts.front, &policy, &dataset)?.plan.clone();
        write_json(&dir.join("selected.json"), &selected)?;
        write_json(&dir.join("plan.json"), &selected)?;
        fs::write(dir.join("overrides.jsonl"), "")?;
        let mut jobs = self.jobs.write().unwrap();
        let entry = jobs.get_mut(&record.job_id).expect("job exists while running");
        entry.artifacts = Some(artifacts);
        entry.plan = Some(PlanState { base: selected.clone(), current: selected, log: Vec::new() });
        Ok(())
    }

    fn done(&self, job_id: &str) -> Result<AllocationJob> {
        let record = self.job(job_id)?;
        if record.status != JobStatus::Done {
            return Err(ServiceError::Conflict(format!("job `{job_id}` is {:?}", record.status).to_lowercase()));
        }
        Ok(record)
    }

    /// Artifacts of a finished job, rebuilt from disk when not cached.
    pub fn artifacts(&self, job_id: &str) -> Result<Arc<JobArtifacts>> {
        let record = self.done(job_id)?;
        if let Some(a) = self.jobs.read().unwrap().get(job_id).and_then(|j| j.artifacts.clone()) {
            return Ok(a);
        }
        let built = Arc::new(self.derive(&record, None)?);
        let mut jobs = self.jobs.write().unwrap();
        let entry = jobs.get_mut(job_id).expect("job exists");
        Ok(entry.artifacts.get_or_insert(built).clone())
    }

    pub fn plan_state(&self, job_id: &str) -> Result<PlanState> {
        self.done(job_id)?;
        self.jobs
            .read()
            .unwrap()
            .get(job_id)
            .and_then(|j| j.plan.clone())
            .ok_or_else(|| ServiceError::Internal(format!("job `{job_id}` has no plan")))
    }

    /// Picks a plan from the front. It becomes the working plan unless
    /// overrides were already recorded; returns the plan and whether it was
    /// applied.
    pub fn select(&self, job_id: &str, policy: &SelectionPolicy) -> Result<(AllocationPlan, bool)> {
        let artifacts = self.artifacts(job_id)?;
        let plan = select_solution(&artifacts.front, policy, &artifacts.dataset)?.plan.clone();
        let record = self.job(job_id)?;
        let mut jobs = self.jobs.write().unwrap();
        let entry = jobs.get_mut(job_id).expect("job exists");
        let state = entry.plan.as_mut().expect("done jobs have a plan");
        if !state.log.is_empty() {
            return Ok((plan, false));
        }
        let dir = self.job_dir(&record);
        write_json(&dir.join("selected.json"), &plan)?;
        write_json(&dir.join("plan.json"), &plan)?;
        state.base = plan.clone();
        state.current = plan.clone();
        Ok((plan, true))
    }

    /// Appends an already checked override and updates the working plan.
    pub fn record_override(&self, job_id: &str, mut record: OverrideRecord) -> Result<(OverrideRecord, AllocationPlan)> {
        let artifacts = self.artifacts(job_id)?;
        let job = self.job(job_id)?;
        let mut jobs = self.jobs.write().unwrap();
        let entry = jobs.get_mut(job_id).expect("job exists");
        let state = entry.plan.as_mut().expect("done jobs have a plan");
        record.seq = state.log.len() as u64 + 1;
        record.from_role = state.current.assignments.get(&record.candidate_id).cloned();
        let next = apply_override(&artifacts.problem, &state.current, &record)?;
        let dir = self.job_dir(&job);
        let mut log = OpenOptions::new().create(true).append(true).open(dir.join("overrides.jsonl"))?;
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        write_json(&dir.join("plan.json"), &next)?;
        state.current = next.clone();
        state.log.push(record.clone());
        drop(jobs);
        self.count_override(&record.reason)?;
        Ok((record, next))
    }

    pub fn fairness(&self, job_id: &str) -> Result<FairnessReport> {
        let artifacts = self.artifacts(job_id)?;
        let state = self.plan_state(job_id)?;
        Ok(plan_fairness(&artifacts.dataset, &state.current, &artifacts.best_merit)?)
    }

    /// Replays the override log over the base plan.
    pub fn replayed(&self, job_id: &str) -> Result<AllocationPlan> {
        let artifacts = self.artifacts(job_id)?;
        let state = self.plan_state(job_id)?;
        Ok(replay(&artifacts.problem, &state.base, &state.log)?)
    }
}

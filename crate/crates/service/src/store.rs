//! Session store: ingested series, saved pipelines, delineation jobs and their
//! results, all under one directory that also hosts the pipeline cache.
//!
//! Layout:
//! ```text
//! <root>/cache/                         content-addressed pipeline cache
//! <root>/sessions/<sid>/series/*.dcm    uploaded files, as received
//! <root>/sessions/<sid>/pipelines/<name>.json
//! <root>/sessions/<sid>/delineations/<id>.json
//! <root>/jobs/<jid>.json                job table, one file per job
//! ```
//! Session ids are derived from the volume digest, so re-uploading a series
//! lands in the same session and a restarted service finds everything again.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use femseg_core::dicom::{assemble_series, parse_dicom_file, read_series_dir, CtVolume, DicomError};
use femseg_core::evaluation::Source;
use femseg_core::femur::{Delineation, FemurParams};
use femseg_core::pipeline::{Cache, PipelineError, PipelineSpec, DEFAULT_BUDGET};

use crate::error::ErrorBody;

pub struct Session {
    pub id: String,
    pub volume: Arc<CtVolume>,
    dir: PathBuf,
    pipelines: RwLock<BTreeMap<String, PipelineSpec>>,
    /// Held by the running delineation job; later jobs wait their turn.
    pub delineation_slot: tokio::sync::Mutex<()>,
}

impl Session {
    pub fn pipeline(&self, name: &str) -> Option<PipelineSpec> {
        self.pipelines.read().unwrap().get(name).cloned()
    }

    pub fn pipeline_names(&self) -> Vec<String> {
        self.pipelines.read().unwrap().keys().cloned().collect()
    }

    fn delineation_path(&self, id: &str) -> PathBuf {
        self.dir.join("delineations").join(format!("{id}.json"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub v: u32,
    pub id: String,
    pub session: String,
    pub state: JobState,
    pub params: FemurParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// A stored delineation. `source` never leaves the server through the blinded
/// comparison endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDelineation {
    pub v: u32,
    pub id: String,
    pub session: String,
    pub source: Source,
    pub delineations: Vec<Delineation>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Dicom(#[from] DicomError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("bad name {0:?}: use letters, digits, '-', '_' or '.'")]
    BadName(String),
    #[error("job {0} cannot move from {1:?} to {2:?}")]
    BadTransition(String, JobState, JobState),
    #[error("delineation is for volume {found}, session holds {expected}")]
    WrongVolume { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

/// Atomic replace: readers see the old or the new file, never a torn one.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub struct Store {
    root: PathBuf,
    pub cache: Arc<Cache>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: RwLock<HashMap<String, Job>>,
}

impl Store {
    pub fn open(root: &Path) -> io::Result<Self> {
        Self::open_with_budget(root, DEFAULT_BUDGET)
    }

    pub fn open_with_budget(root: &Path, cache_budget: u64) -> io::Result<Self> {
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("jobs"))?;
        let cache = Cache::open(&root.join("cache"), cache_budget)?;
        Ok(Self {
            root: root.to_path_buf(),
            cache: Arc::new(cache),
            sessions: RwLock::new(HashMap::new()),
            jobs: RwLock::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Parses and assembles `files`, then stores them. Returns the session and
    /// whether it is new.
    pub fn ingest(&self, files: Vec<(String, Vec<u8>)>) -> Result<(Arc<Session>, bool), StoreError> {
        let parsed = files
            .iter()
            .map(|(_, bytes)| parse_dicom_file(bytes))
            .collect::<Result<Vec<_>, _>>()?;
        let volume = assemble_series(parsed)?;
        let id = volume.digest()[..16].to_string();
        if let Some(s) = self.session(&id) {
            return Ok((s, false));
        }
        let dir = self.root.join("sessions").join(&id);
        let staging = self.root.join("sessions").join(format!(".{id}-{}", uuid::Uuid::new_v4().simple()));
        fs::create_dir_all(staging.join("series"))?;
        fs::create_dir_all(staging.join("pipelines"))?;
        fs::create_dir_all(staging.join("delineations"))?;
        for (i, (_, bytes)) in files.iter().enumerate() {
            fs::write(staging.join("series").join(format!("slice_{i:04}.dcm")), bytes)?;
        }
        if fs::rename(&staging, &dir).is_err() {
            // a concurrent upload of the same series won the race
            fs::remove_dir_all(&staging)?;
        }
        let session = Arc::new(Session {
            id: id.clone(),
            volume: Arc::new(volume),
            dir,
            pipelines: RwLock::new(BTreeMap::new()),
            delineation_slot: tokio::sync::Mutex::new(()),
        });
        let mut map = self.sessions.write().unwrap();
        let entry = map.entry(id).or_insert_with(|| session.clone());
        Ok((entry.clone(), true))
    }

    /// In-memory session, or one reloaded from disk.
    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        if let Some(s) = self.sessions.read().unwrap().get(id) {
            return Some(s.clone());
        }
        if !valid_name(id) {
            return None;
        }
        let dir = self.root.join("sessions").join(id);
        let volume = read_series_dir(&dir.join("series")).ok()?;
        let mut pipelines = BTreeMap::new();
        if let Ok(entries) = fs::read_dir(dir.join("pipelines")) {
            for e in entries.flatten() {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "json") {
                    if let Some(spec) = fs::read_to_string(&p)
                        .ok()
                        .and_then(|t| femseg_core::pipeline::parse_pipeline_spec(&t).ok())
                    {
                        pipelines.insert(spec.name.clone(), spec);
                    }
                }
            }
        }
        let session = Arc::new(Session {
            id: id.to_string(),
            volume: Arc::new(volume),
            dir,
            pipelines: RwLock::new(pipelines),
            delineation_slot: tokio::sync::Mutex::new(()),
        });
        let mut map = self.sessions.write().unwrap();
        Some(map.entry(id.to_string()).or_insert(session).clone())
    }

    pub fn save_pipeline(&self, session: &Session, spec: PipelineSpec) -> Result<String, StoreError> {
        if !valid_name(&spec.name) {
            return Err(StoreError::BadName(spec.name));
        }
        spec.validate()?;
        let path = session.dir.join("pipelines").join(format!("{}.json", spec.name));
        write_atomic(&path, serde_json::to_string_pretty(&spec).expect("spec serializes").as_bytes())?;
        let name = spec.name.clone();
        session.pipelines.write().unwrap().insert(name.clone(), spec);
        Ok(name)
    }

    pub fn new_job(&self, session: &Session, params: FemurParams) -> Result<Job, StoreError> {
        let job = Job {
            v: 1,
            id: uuid::Uuid::new_v4().simple().to_string(),
            session: session.id.clone(),
            state: JobState::Queued,
            params,
            error: None,
        };
        self.persist_job(&job)?;
        self.jobs.write().unwrap().insert(job.id.clone(), job.clone());
        Ok(job)
    }

    fn persist_job(&self, job: &Job) -> io::Result<()> {
        let path = self.root.join("jobs").join(format!("{}.json", job.id));
        write_atomic(&path, serde_json::to_string_pretty(job).expect("job serializes").as_bytes())
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        if let Some(j) = self.jobs.read().unwrap().get(id) {
            return Some(j.clone());
        }
        if !valid_name(id) {
            return None;
        }
        let text = fs::read_to_string(self.root.join("jobs").join(format!("{id}.json"))).ok()?;
        let mut job: Job = serde_json::from_str(&text).ok()?;
        if job.state < JobState::Done {
            // the process that owned it is gone
            job.state = JobState::Failed;
            job.error = Some(ErrorBody {
                v: 1,
                code: "Interrupted".into(),
                message: "the service stopped before the job finished".into(),
                detail: serde_json::Value::Null,
            });
        }
        self.jobs.write().unwrap().insert(id.to_string(), job.clone());
        Some(job)
    }

    /// Moves a job forward; states only advance queued → running → done | failed.
    pub fn transition(&self, id: &str, to: JobState, error: Option<ErrorBody>) -> Result<Job, StoreError> {
        let mut jobs = self.jobs.write().unwrap();
        let job = jobs.get_mut(id).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, id.to_string()))?;
        let ok = matches!(
            (job.state, to),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done)
                | (JobState::Queued | JobState::Running, JobState::Failed)
        );
        if !ok {
            return Err(StoreError::BadTransition(id.to_string(), job.state, to));
        }
        let mut next = job.clone();
        next.state = to;
        next.error = error;
        self.persist_job(&next)?;
        *job = next.clone();
        Ok(next)
    }

    pub fn save_delineation(
        &self,
        session: &Session,
        id: &str,
        source: Source,
        delineations: Vec<Delineation>,
    ) -> Result<StoredDelineation, StoreError> {
        if !valid_name(id) {
            return Err(StoreError::BadName(id.to_string()));
        }
        let expected = session.volume.digest();
        if let Some(d) = delineations.iter().find(|d| d.volume_digest != expected) {
            return Err(StoreError::WrongVolume {
                expected,
                found: d.volume_digest.clone(),
            });
        }
        let stored = StoredDelineation {
            v: 1,
            id: id.to_string(),
            session: session.id.clone(),
            source,
            delineations,
        };
        let text = serde_json::to_string_pretty(&stored).expect("delineation serializes");
        write_atomic(&session.delineation_path(id), text.as_bytes())?;
        Ok(stored)
    }

    pub fn delineation(&self, session: &Session, id: &str) -> Option<StoredDelineation> {
        if !valid_name(id) {
            return None;
        }
        let text = fs::read_to_string(session.delineation_path(id)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert!(valid_name("bone-v2.1"));
        assert!(!valid_name("../x"));
        assert!(!valid_name(".hidden"));
        assert!(!valid_name(""));
        assert!(!valid_name("a/b"));
    }

    #[test]
    fn job_states_only_advance() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_with_budget(dir.path(), 1 << 20).unwrap();
        let spec = femseg_core::phantom::PhantomSpec {
            width: 32,
            height: 32,
            slices: 2,
            ..Default::default()
        };
        let tmp = tempfile::tempdir().unwrap();
        spec.write_dir(tmp.path()).unwrap();
        let files = fs::read_dir(tmp.path())
            .unwrap()
            .flatten()
            .filter(|e| e.path().extension().is_some_and(|x| x == "dcm"))
            .map(|e| (String::new(), fs::read(e.path()).unwrap()))
            .collect();
        let (session, created) = store.ingest(files).unwrap();
        assert!(created);
        let job = store.new_job(&session, FemurParams::default()).unwrap();
        assert!(store.transition(&job.id, JobState::Done, None).is_err());
        store.transition(&job.id, JobState::Running, None).unwrap();
        store.transition(&job.id, JobState::Done, None).unwrap();
        assert!(store.transition(&job.id, JobState::Running, None).is_err());

        // a second store over the same directory sees the finished job
        let again = Store::open_with_budget(dir.path(), 1 << 20).unwrap();
        assert_eq!(again.job(&job.id).unwrap().state, JobState::Done);
        assert!(again.session(&session.id).is_some());
    }
}

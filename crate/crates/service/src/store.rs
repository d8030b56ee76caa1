//! In-memory catalog of instances and jobs with optional write-through
//! persistence.
//!
//! Layout under the data directory: `instances/<id>.json` (instance
//! documents), `jobs/<id>.json` (job records) and `solutions/<id>.json`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use phasefd::io::{self, IoError};
use phasefd::Instance;

use crate::job::{Job, JobRecord, JobStatus};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Dir { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Default)]
pub struct Catalog {
    instances: RwLock<HashMap<String, Arc<Instance>>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    data_dir: Option<PathBuf>,
}

const DIRS: [&str; 3] = ["instances", "jobs", "solutions"];

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog::default()
    }

    /// Opens (or creates) a persistent catalog, reloading instances and jobs.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        for sub in DIRS {
            let path = dir.join(sub);
            fs::create_dir_all(&path).map_err(|source| StoreError::Dir {
                path: path.display().to_string(),
                source,
            })?;
        }
        let catalog = Catalog {
            data_dir: Some(dir.to_path_buf()),
            ..Catalog::default()
        };
        for (id, path) in json_files(&dir.join("instances"))? {
            let instance = io::read_instance(&path)?;
            catalog.write_instances().insert(id, Arc::new(instance));
        }
        for (_, path) in json_files(&dir.join("jobs"))? {
            let record: JobRecord = io::read_json(&path)?;
            let solution_path = dir.join("solutions").join(format!("{}.json", record.job_id));
            let solution = if record.status == JobStatus::Done && solution_path.exists() {
                Some(io::read_solution(&solution_path)?)
            } else {
                None
            };
            let job = Arc::new(Job::restore(record, solution)?);
            catalog.persist_job(&job)?;
            catalog.write_jobs().insert(job.id.clone(), job);
        }
        Ok(catalog)
    }

    fn write_instances(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, Arc<Instance>>> {
        self.instances.write().unwrap_or_else(|p| p.into_inner())
    }

    fn write_jobs(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, Arc<Job>>> {
        self.jobs.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn add_instance(&self, id: String, instance: Instance) -> Result<(), StoreError> {
        if let Some(dir) = &self.data_dir {
            io::write_instance(&dir.join("instances").join(format!("{id}.json")), &instance)?;
        }
        self.write_instances().insert(id, Arc::new(instance));
        Ok(())
    }

    pub fn instance(&self, id: &str) -> Option<Arc<Instance>> {
        self.instances.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn add_job(&self, job: Arc<Job>) -> Result<(), StoreError> {
        self.persist_job(&job)?;
        self.write_jobs().insert(job.id.clone(), job);
        Ok(())
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    /// Writes the job record and, once done, its solution.
    pub fn persist_job(&self, job: &Job) -> Result<(), StoreError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        if let Some(solution) = job.solution() {
            io::write_solution(&dir.join("solutions").join(format!("{}.json", job.id)), &solution)?;
        }
        io::write_json(&dir.join("jobs").join(format!("{}.json", job.id)), &job.record_for_disk())?;
        Ok(())
    }
}

fn json_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, StoreError> {
    let entries = fs::read_dir(dir).map_err(|source| StoreError::Dir {
        path: dir.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

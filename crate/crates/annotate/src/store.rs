//! Task store. All mutations go through one `&mut Store`, which callers
//! guard with a single lock; every mutation is appended to the log before
//! it is applied.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use forge_core::annotation::{AnnotationRecord, AnnotationTask, Decision, LabeledSample, TaskStatus};
use forge_core::eval::{cohen_kappa, EvalError};
use forge_core::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::SCHEMA;

/// Suffix of task ids created for duplicate assignments.
pub const DUP_SUFFIX: &str = "#dup";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task_id} is not assigned to {annotator_id}")]
    NotAssigned { task_id: String, annotator_id: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("no completed duplicate groups")]
    NoDuplicates,
    #[error("store log {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub dup_rate: f64,
    pub seed: u64,
    /// Log file; `None` keeps the store in memory.
    pub path: Option<PathBuf>,
    /// Write a compacted snapshot every this many events (0 disables).
    pub snapshot_every: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { dup_rate: 0.0, seed: 0, path: None, snapshot_every: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Import { task: AnnotationTask },
    Assign { task_id: String, annotator_id: String, duplicate_of: Option<String> },
    Submit { record: AnnotationRecord, hash: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogLine {
    schema: String,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskState {
    task: AnnotationTask,
    assigned_to: Option<String>,
    /// Original task id for duplicates.
    duplicate_of: Option<String>,
    /// Whether a duplicate of this task has been handed out.
    duplicated: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    tasks: BTreeMap<String, TaskState>,
    pending: VecDeque<String>,
    annotators: BTreeSet<String>,
    /// Currently assigned, unsubmitted task of each annotator.
    open: BTreeMap<String, String>,
    /// Submitted records in completion order.
    records: Vec<AnnotationRecord>,
    hashes: BTreeSet<String>,
    /// Completed originals not yet duplicated, in completion order.
    completed_originals: VecDeque<String>,
    assignments: u64,
    duplicate_assignments: u64,
    events: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    schema: String,
    state: State,
}

pub struct Store {
    config: StoreConfig,
    state: State,
    log: Option<File>,
}

/// Hex SHA-256 of the record's JSON form.
pub fn record_hash(record: &AnnotationRecord) -> String {
    let json = serde_json::to_string(record).expect("record serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn snapshot_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".snapshot");
    PathBuf::from(p)
}

impl Store {
    pub fn in_memory(dup_rate: f64, seed: u64) -> Self {
        Self { config: StoreConfig { dup_rate, seed, path: None, snapshot_every: 0 }, state: State::default(), log: None }
    }

    /// Open or create the store, restoring from the snapshot and replaying
    /// the log tail.
    pub fn open(config: StoreConfig) -> Result<Self, StoreError> {
        let Some(path) = config.path.clone() else {
            return Ok(Self { config, state: State::default(), log: None });
        };
        let corrupt = |reason: String| StoreError::Corrupt { path: path.display().to_string(), reason };
        let mut state = State::default();
        let snap = snapshot_path(&path);
        if snap.exists() {
            let s: Snapshot = serde_json::from_str(&fs::read_to_string(&snap)?).map_err(|e| corrupt(e.to_string()))?;
            if s.schema != SCHEMA {
                return Err(corrupt(format!("snapshot schema {}", s.schema)));
            }
            state = s.state;
        }
        let mut store = Self { config, state: State::default(), log: None };
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let mut lines = Vec::new();
            for line in reader.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    lines.push(line);
                }
            }
            if lines.len() < state.events {
                // Snapshot is ahead of the log; trust the log.
                state = State::default();
            }
            store.state = state;
            for (i, line) in lines.iter().enumerate().skip(store.state.events) {
                let parsed: LogLine = serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
                if parsed.schema != SCHEMA {
                    return Err(corrupt(format!("line {}: schema {}", i + 1, parsed.schema)));
                }
                store.apply(parsed.event);
            }
        }
        store.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        Ok(store)
    }

    pub fn dup_rate(&self) -> f64 {
        self.config.dup_rate
    }

    fn persist(&mut self, event: Event) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            let line = serde_json::to_string(&LogLine { schema: SCHEMA.to_string(), event: event.clone() }).expect("event serializes");
            log.write_all(line.as_bytes())?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.apply(event);
        if self.config.snapshot_every > 0 && self.state.events % self.config.snapshot_every == 0 {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Write the compacted state next to the log (atomic rename).
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let Some(path) = &self.config.path else {
            return Ok(());
        };
        let snap = snapshot_path(path);
        let tmp = snap.with_extension("tmp");
        let body = serde_json::to_string(&Snapshot { schema: SCHEMA.to_string(), state: self.state.clone() }).expect("state serializes");
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &snap)?;
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        let st = &mut self.state;
        st.events += 1;
        match event {
            Event::Import { task } => {
                st.pending.push_back(task.task_id.clone());
                st.tasks.insert(task.task_id.clone(), TaskState { task, assigned_to: None, duplicate_of: None, duplicated: false });
            }
            Event::Assign { task_id, annotator_id, duplicate_of } => {
                st.annotators.insert(annotator_id.clone());
                st.open.insert(annotator_id.clone(), task_id.clone());
                st.assignments += 1;
                match duplicate_of {
                    Some(original) => {
                        st.duplicate_assignments += 1;
                        let orig = st.tasks.get_mut(&original).expect("original exists");
                        orig.duplicated = true;
                        if let Some(pos) = st.completed_originals.iter().position(|t| t == &original) {
                            st.completed_originals.remove(pos);
                        }
                        orig.task.duplicate_group = Some(original.clone());
                        let mut task = orig.task.clone();
                        task.task_id = task_id.clone();
                        task.status = TaskStatus::Assigned;
                        st.tasks.insert(
                            task_id,
                            TaskState { task, assigned_to: Some(annotator_id), duplicate_of: Some(original), duplicated: false },
                        );
                    }
                    None => {
                        if st.pending.front() == Some(&task_id) {
                            st.pending.pop_front();
                        } else {
                            st.pending.retain(|t| t != &task_id);
                        }
                        let t = st.tasks.get_mut(&task_id).expect("task exists");
                        t.assigned_to = Some(annotator_id);
                        t.task.status = TaskStatus::Assigned;
                    }
                }
            }
            Event::Submit { record, hash } => {
                let t = st.tasks.get_mut(&record.task_id).expect("task exists");
                t.task.status = TaskStatus::Done;
                if t.duplicate_of.is_none() {
                    st.completed_originals.push_back(record.task_id.clone());
                }
                st.open.remove(&record.annotator_id);
                st.hashes.insert(hash);
                st.records.push(record);
            }
        }
    }

    /// Add tasks; task ids already present are skipped. Returns the number added.
    pub fn import(&mut self, tasks: Vec<AnnotationTask>) -> Result<usize, StoreError> {
        for t in &tasks {
            t.validate().map_err(|e| StoreError::Validation(format!("task {}: {e}", t.task_id)))?;
            if t.task_id.ends_with(DUP_SUFFIX) {
                return Err(StoreError::Validation(format!("task id {} uses the reserved suffix {DUP_SUFFIX}", t.task_id)));
            }
        }
        let mut added = 0;
        for mut task in tasks {
            if self.state.tasks.contains_key(&task.task_id) {
                continue;
            }
            task.status = TaskStatus::Pending;
            task.duplicate_group = None;
            self.persist(Event::Import { task })?;
            added += 1;
        }
        Ok(added)
    }

    fn open_task_of(&self, annotator_id: &str) -> Option<&AnnotationTask> {
        self.state.open.get(annotator_id).map(|id| &self.state.tasks[id].task)
    }

    /// Hand out the annotator's open task, a duplicate (with probability
    /// `dup_rate`), or the next pending task.
    pub fn next_task(&mut self, annotator_id: &str) -> Result<Option<AnnotationTask>, StoreError> {
        if annotator_id.trim().is_empty() {
            return Err(StoreError::Validation("empty annotator id".into()));
        }
        if let Some(t) = self.open_task_of(annotator_id) {
            return Ok(Some(t.clone()));
        }
        let draw_seed = derive_seed(self.config.seed, &format!("assign/{}", self.state.assignments));
        let wants_dup = ChaCha8Rng::seed_from_u64(draw_seed).gen::<f64>() < self.config.dup_rate;
        if wants_dup {
            let eligible = self
                .state
                .completed_originals
                .iter()
                .find(|id| self.state.tasks[*id].assigned_to.as_deref() != Some(annotator_id));
            if let Some(original) = eligible.cloned() {
                let task_id = format!("{original}{DUP_SUFFIX}");
                self.persist(Event::Assign { task_id: task_id.clone(), annotator_id: annotator_id.to_string(), duplicate_of: Some(original) })?;
                return Ok(Some(self.state.tasks[&task_id].task.clone()));
            }
        }
        let Some(task_id) = self.state.pending.front().cloned() else {
            return Ok(None);
        };
        self.persist(Event::Assign { task_id: task_id.clone(), annotator_id: annotator_id.to_string(), duplicate_of: None })?;
        Ok(Some(self.state.tasks[&task_id].task.clone()))
    }

    pub fn submit(&mut self, mut record: AnnotationRecord) -> Result<String, StoreError> {
        let probe_hash = record_hash(&record);
        if self.state.hashes.contains(&probe_hash) {
            return Err(StoreError::Conflict(format!("record for task {} was already submitted", record.task_id)));
        }
        let t = self.state.tasks.get(&record.task_id).ok_or_else(|| StoreError::UnknownTask(record.task_id.clone()))?;
        if t.task.status == TaskStatus::Done {
            return Err(StoreError::Conflict(format!("task {} is already done", record.task_id)));
        }
        if t.assigned_to.as_deref() != Some(record.annotator_id.as_str()) {
            return Err(StoreError::NotAssigned { task_id: record.task_id.clone(), annotator_id: record.annotator_id.clone() });
        }
        let group = t.duplicate_of.clone();
        if record.duplicate_group.is_some() && record.duplicate_group != group {
            return Err(StoreError::Validation(format!("duplicate group {:?} does not match the task", record.duplicate_group)));
        }
        record.validate(&t.task.note_text).map_err(StoreError::Validation)?;
        record.duplicate_group = group;
        let hash = record_hash(&record);
        self.persist(Event::Submit { record, hash: hash.clone() })?;
        self.state.hashes.insert(probe_hash);
        Ok(hash)
    }

    pub fn assignments(&self) -> (u64, u64) {
        (self.state.assignments, self.state.duplicate_assignments)
    }

    pub fn task_count(&self) -> usize {
        self.state.tasks.len()
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.state.records
    }

    pub fn task(&self, task_id: &str) -> Option<&AnnotationTask> {
        self.state.tasks.get(task_id).map(|t| &t.task)
    }

    /// Median seconds per submitted record.
    pub fn median_elapsed(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.state.records.iter().map(|r| r.elapsed).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
    }

    fn labeled(&self, record: &AnnotationRecord) -> LabeledSample {
        let task = &self.state.tasks[&record.task_id].task;
        LabeledSample {
            sample_id: task.sample_id.clone(),
            task_id: record.task_id.clone(),
            annotator_id: record.annotator_id.clone(),
            decision: record.decision,
            note_text: task.note_text.clone(),
            character_span: record.character_span,
            character: record.character_surface(&task.note_text),
        }
    }

    /// Group id of a record: the original task id.
    fn group_of(&self, record: &AnnotationRecord) -> String {
        self.state.tasks[&record.task_id].duplicate_of.clone().unwrap_or_else(|| record.task_id.clone())
    }

    /// Labels per original task, first completed record winning.
    pub fn export(&self) -> Export {
        let mut first: BTreeMap<String, usize> = BTreeMap::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.state.records.iter().enumerate() {
            let g = self.group_of(r);
            first.entry(g.clone()).or_insert(i);
            groups.entry(g).or_default().push(i);
        }
        let mut winners: Vec<usize> = first.values().copied().collect();
        winners.sort_unstable();
        let mut export = Export { schema: SCHEMA.to_string(), ..Default::default() };
        for i in winners {
            let s = self.labeled(&self.state.records[i]);
            match s.decision {
                Decision::DescribesCharacter => export.positives.push(s),
                Decision::NotDescribes => export.negatives.push(s),
            }
        }
        for (group, idx) in groups {
            let labels: Vec<LabeledSample> = idx.iter().map(|&i| self.labeled(&self.state.records[i])).collect();
            let disagree = labels.windows(2).any(|w| w[0].decision != w[1].decision || w[0].character != w[1].character);
            if disagree {
                export.conflicts.push(LabelConflict { duplicate_group: group, labels });
            }
        }
        export
    }

    /// Decision agreement over duplicate groups with both labels in.
    pub fn agreement(&self) -> Result<AgreementReport, StoreError> {
        let mut by_group: BTreeMap<String, Vec<Decision>> = BTreeMap::new();
        for r in &self.state.records {
            if let Some(g) = self.state.tasks[&r.task_id].task.duplicate_group.clone() {
                by_group.entry(g).or_default().push(r.decision);
            }
        }
        let pairs: Vec<(Decision, Decision)> =
            by_group.values().filter(|d| d.len() >= 2).map(|d| (d[0], d[1])).collect();
        let k = cohen_kappa::<f64, _>(&pairs).map_err(|e| match e {
            EvalError::NoPairs => StoreError::NoDuplicates,
            other => StoreError::Conflict(other.to_string()),
        })?;
        Ok(AgreementReport {
            schema: SCHEMA.to_string(),
            pairs: pairs.len(),
            agreement: 100.0 * k.observed,
            kappa: k.kappa,
            chance: k.chance,
            median_elapsed: self.median_elapsed(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConflict {
    pub duplicate_group: String,
    pub labels: Vec<LabeledSample>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub schema: String,
    /// Positive labels, input to the instance builder.
    pub positives: Vec<LabeledSample>,
    /// Negative labels, the negative pool of the note classifier.
    pub negatives: Vec<LabeledSample>,
    pub conflicts: Vec<LabelConflict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub schema: String,
    pub pairs: usize,
    /// Percent of duplicate pairs with identical decisions.
    pub agreement: f64,
    pub kappa: f64,
    pub chance: f64,
    pub median_elapsed: Option<f64>,
}

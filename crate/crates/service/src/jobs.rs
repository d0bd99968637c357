use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::watch;
use wordart_core::pipeline::{JobState, PipelineEvent, RunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StateChange,
    Iteration,
    Frame,
    Candidate,
    Terminal,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::StateChange => "state_change",
            EventKind::Iteration => "iteration",
            EventKind::Frame => "frame",
            EventKind::Candidate => "candidate",
            EventKind::Terminal => "terminal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub job_id: String,
    /// 0-based, gap-free per job.
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

/// Content-addressed PNG store behind `/api/blobs/{digest}`.
#[derive(Default)]
pub struct BlobStore {
    blobs: RwLock<HashMap<String, Arc<Vec<u8>>>>,
}

impl BlobStore {
    /// Stores `bytes` and returns the blob URL.
    pub fn put(&self, bytes: Vec<u8>) -> String {
        let digest = hex::encode(Sha256::digest(&bytes));
        let url = blob_url(&digest);
        self.blobs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(digest)
            .or_insert_with(|| Arc::new(bytes));
        url
    }

    pub fn get(&self, digest: &str) -> Option<Arc<Vec<u8>>> {
        self.blobs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .cloned()
    }
}

pub fn blob_url(digest: &str) -> String {
    format!("/api/blobs/{digest}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub character: String,
    pub attempt: usize,
    pub score: Option<f64>,
    pub qualified: bool,
    /// Part of the final top-K.
    pub selected: bool,
    pub images: CandidateImages,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateImages {
    pub semantic: Option<String>,
    pub stylized: Option<String>,
    pub textured: Option<String>,
    pub svg: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub parent: Option<String>,
    pub state: JobState,
    /// 1-based attempt in progress or last finished.
    pub attempt: usize,
    pub restart_count: usize,
    pub events: u64,
    pub error: Option<String>,
    pub infrastructure_error: bool,
    pub selected: Vec<String>,
    pub accepted: Option<String>,
    pub run_dir: Option<String>,
}

struct Inner {
    status: JobStatus,
    events: Vec<JobEvent>,
    live: Vec<CandidateView>,
    record: Option<RunRecord>,
}

/// One submitted job: status snapshot, append-only event log and, once
/// finished, the run record. The pipeline thread is the only writer.
pub struct JobEntry {
    pub id: String,
    inner: Mutex<Inner>,
    version: watch::Sender<u64>,
}

pub enum Next {
    Event(JobEvent),
    Closed,
    Wait,
}

impl JobEntry {
    pub fn new(id: String, parent: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(Inner {
                status: JobStatus {
                    id: id.clone(),
                    parent,
                    state: JobState::Parsing,
                    attempt: 1,
                    restart_count: 0,
                    events: 0,
                    error: None,
                    infrastructure_error: false,
                    selected: Vec::new(),
                    accepted: None,
                    run_dir: None,
                },
                events: Vec::new(),
                live: Vec::new(),
                record: None,
            }),
            version: watch::channel(0).0,
            id,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> JobStatus {
        self.lock().status.clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    /// Event at `cursor`, or whether the log is finished.
    pub fn next(&self, cursor: u64) -> Next {
        let inner = self.lock();
        match inner.events.get(cursor as usize) {
            Some(e) => Next::Event(e.clone()),
            None if inner.events.last().is_some_and(|e| e.kind == EventKind::Terminal) => Next::Closed,
            None => Next::Wait,
        }
    }

    pub fn events_from(&self, from: u64) -> Vec<JobEvent> {
        self.lock().events.iter().skip(from as usize).cloned().collect()
    }

    fn push(&self, inner: &mut Inner, kind: EventKind, payload: serde_json::Value) {
        let sequence = inner.events.len() as u64;
        inner.events.push(JobEvent {
            job_id: self.id.clone(),
            sequence,
            kind,
            payload,
        });
        inner.status.events = sequence + 1;
        self.version.send_replace(sequence + 1);
    }

    /// Translates a pipeline event. Terminal events are held back until
    /// [`JobEntry::finish`] has published the record.
    pub fn observe(&self, e: &PipelineEvent, blobs: &BlobStore) {
        let mut inner = self.lock();
        match e {
            PipelineEvent::StateChange { state, attempt } => {
                inner.status.state = *state;
                inner.status.attempt = *attempt;
                inner.status.restart_count = attempt - 1;
                self.push(
                    &mut inner,
                    EventKind::StateChange,
                    serde_json::json!({"state": state, "attempt": attempt}),
                );
            }
            PipelineEvent::Iteration {
                attempt,
                candidate,
                iteration,
                loss,
            } => self.push(
                &mut inner,
                EventKind::Iteration,
                serde_json::json!({"attempt": attempt, "candidate": candidate, "iteration": iteration, "loss": loss}),
            ),
            PipelineEvent::Frame {
                attempt,
                candidate,
                iteration,
                png,
            } => {
                let url = blobs.put(png.clone());
                self.push(
                    &mut inner,
                    EventKind::Frame,
                    serde_json::json!({"attempt": attempt, "candidate": candidate, "iteration": iteration, "image": url}),
                );
            }
            PipelineEvent::Candidate {
                attempt,
                candidate,
                character,
                score,
                qualified,
                png,
            } => {
                let url = blobs.put(png.clone());
                inner.live.push(CandidateView {
                    id: candidate.clone(),
                    character: character.clone(),
                    attempt: *attempt,
                    score: score.is_finite().then_some(*score),
                    qualified: *qualified,
                    selected: false,
                    images: CandidateImages {
                        textured: Some(url.clone()),
                        ..CandidateImages::default()
                    },
                });
                self.push(
                    &mut inner,
                    EventKind::Candidate,
                    serde_json::json!({
                        "attempt": attempt,
                        "candidate": candidate,
                        "character": character,
                        "score": score,
                        "qualified": qualified,
                        "image": url,
                    }),
                );
            }
            PipelineEvent::Terminal { .. } => {}
        }
    }

    /// Publishes the finished record (images go to the blob store), then
    /// appends the terminal event.
    pub fn finish(&self, mut record: RunRecord, run_dir: Option<String>, blobs: &BlobStore) {
        let mut inner = self.lock();
        if let Some(accepted) = inner.status.accepted.clone() {
            record.accepted = Some(accepted);
        }
        for c in record.attempts.iter().flat_map(|a| &a.candidates) {
            for img in [c.i_sem.to_png().ok(), c.i_sty.to_png().ok(), c.i_tex.to_png().ok()]
                .into_iter()
                .flatten()
            {
                blobs.put(img);
            }
            blobs.put(c.svg.clone().into_bytes());
        }
        let st = &mut inner.status;
        st.state = record.job.state;
        st.restart_count = record.job.restart_count;
        st.attempt = record.attempts.len().max(1);
        st.error = record.error.clone();
        st.infrastructure_error = record.infrastructure_error;
        st.selected = record.selected.clone();
        st.run_dir = run_dir;
        let payload = serde_json::json!({
            "state": record.job.state,
            "restart_count": record.job.restart_count,
            "attempts": record.attempts.len(),
            "error": record.error,
            "selected": record.selected,
        });
        inner.record = Some(record);
        self.push(&mut inner, EventKind::Terminal, payload);
    }

    /// Terminal failure before the pipeline could start.
    pub fn fail(&self, error: String, infrastructure: bool) {
        let mut inner = self.lock();
        inner.status.state = JobState::Failed;
        inner.status.error = Some(error.clone());
        inner.status.infrastructure_error = infrastructure;
        self.push(
            &mut inner,
            EventKind::Terminal,
            serde_json::json!({"state": JobState::Failed, "restart_count": 0, "attempts": 0, "error": error, "selected": []}),
        );
    }

    pub fn record(&self) -> Option<RunRecord> {
        self.lock().record.clone()
    }

    /// Ranked final-attempt candidates once finished, otherwise the ones
    /// scored so far, best first.
    pub fn candidates(&self) -> Vec<CandidateView> {
        let inner = self.lock();
        let Some(record) = &inner.record else {
            let mut live = inner.live.clone();
            live.sort_by(|a, b| {
                let (sa, sb) = (
                    a.score.unwrap_or(f64::NEG_INFINITY),
                    b.score.unwrap_or(f64::NEG_INFINITY),
                );
                sb.total_cmp(&sa).then_with(|| a.id.cmp(&b.id))
            });
            return live;
        };
        let attempt = record.attempts.len();
        record
            .ranked()
            .into_iter()
            .map(|c| {
                let url = |png: Option<Vec<u8>>| png.map(|b| blob_url(&hex::encode(Sha256::digest(&b))));
                CandidateView {
                    id: c.id.clone(),
                    character: c.character.clone(),
                    attempt,
                    score: c.score.is_finite().then_some(c.score),
                    qualified: c.qualified,
                    selected: record.selected.contains(&c.id),
                    images: CandidateImages {
                        semantic: url(c.i_sem.to_png().ok()),
                        stylized: url(c.i_sty.to_png().ok()),
                        textured: url(c.i_tex.to_png().ok()),
                        svg: url(Some(c.svg.clone().into_bytes())),
                    },
                }
            })
            .collect()
    }

    pub fn knows_candidate(&self, id: &str) -> bool {
        let inner = self.lock();
        inner.live.iter().any(|c| c.id == id) || inner.record.as_ref().is_some_and(|r| r.candidate(id).is_some())
    }

    /// Marks `id` as accepted; returns the updated record when finished.
    pub fn accept(&self, id: &str) -> Option<RunRecord> {
        let mut inner = self.lock();
        inner.status.accepted = Some(id.to_string());
        let record = inner.record.as_mut()?;
        record.accepted = Some(id.to_string());
        Some(record.clone())
    }
}

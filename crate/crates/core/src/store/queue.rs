use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use tracing::{debug, warn};

use crate::insight::{TaxonomyPath, Track};

use super::commit::{apply_commit, Commit, CommitPayload, CommitReceipt, Rejection};
use super::snapshot::LibrarySnapshot;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueueError {
    #[error("commit queue is closed")]
    QueueClosed,
    #[error("commit rejected: {0}")]
    Rejected(#[from] Rejection),
}

/// Resolves to the version at which a commit was applied, or why it was not.
#[derive(Debug)]
pub struct Ticket {
    rx: Receiver<Result<CommitReceipt, Rejection>>,
}

impl Ticket {
    pub fn wait(self) -> Result<CommitReceipt, QueueError> {
        match self.rx.recv() {
            Ok(result) => result.map_err(QueueError::from),
            Err(_) => Err(QueueError::QueueClosed),
        }
    }
}

/// Commits are applied strictly in arrival order; a batch arrives as one
/// contiguous run.
struct Envelope {
    commits: Vec<(Commit, Sender<Result<CommitReceipt, Rejection>>)>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AppliedCommit {
    pub receipt: CommitReceipt,
    pub commit: Commit,
}

struct Shared {
    current: RwLock<Arc<LibrarySnapshot>>,
    log: Mutex<Vec<AppliedCommit>>,
}

/// The single mutation path into the library. Any number of workers may
/// enqueue; one writer thread applies commits and publishes a fresh
/// immutable snapshot after each one.
pub struct CommitQueue {
    sender: Mutex<Option<Sender<Envelope>>>,
    shared: Arc<Shared>,
    writer: Mutex<Option<JoinHandle<()>>>,
}

impl CommitQueue {
    pub fn start(initial: LibrarySnapshot) -> Self {
        let shared = Arc::new(Shared {
            current: RwLock::new(Arc::new(initial)),
            log: Mutex::new(Vec::new()),
        });
        let (tx, rx) = mpsc::channel::<Envelope>();
        let writer_shared = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("commit-writer".into())
            .spawn(move || {
                for envelope in rx {
                    for (commit, reply) in envelope.commits {
                        let base = writer_shared.current.read().unwrap().clone();
                        let result = apply_commit(&base, &commit);
                        match &result {
                            Ok((next, receipt)) => {
                                debug!(version = receipt.version, kind = ?commit.kind(), "commit applied");
                                *writer_shared.current.write().unwrap() = Arc::new(next.clone());
                                writer_shared.log.lock().unwrap().push(AppliedCommit {
                                    receipt: *receipt,
                                    commit: commit.clone(),
                                });
                            }
                            Err(reason) => {
                                debug!(%reason, kind = ?commit.kind(), "commit rejected");
                            }
                        }
                        let _ = reply.send(result.map(|(_, r)| r));
                    }
                }
            })
            .expect("spawn commit writer");
        Self {
            sender: Mutex::new(Some(tx)),
            shared,
            writer: Mutex::new(Some(handle)),
        }
    }

    pub fn enqueue(&self, commit: Commit) -> Result<Ticket, QueueError> {
        Ok(self.enqueue_batch(vec![commit])?.pop().expect("one ticket"))
    }

    /// Enqueues several commits as one contiguous run.
    pub fn enqueue_batch(&self, commits: Vec<Commit>) -> Result<Vec<Ticket>, QueueError> {
        let guard = self.sender.lock().unwrap();
        let sender = guard.as_ref().ok_or(QueueError::QueueClosed)?;
        let mut tickets = Vec::with_capacity(commits.len());
        let mut wrapped = Vec::with_capacity(commits.len());
        for commit in commits {
            let (tx, rx) = mpsc::channel();
            wrapped.push((commit, tx));
            tickets.push(Ticket { rx });
        }
        sender
            .send(Envelope { commits: wrapped })
            .map_err(|_| QueueError::QueueClosed)?;
        Ok(tickets)
    }

    /// Enqueue and wait.
    pub fn submit(&self, commit: Commit) -> Result<CommitReceipt, QueueError> {
        self.enqueue(commit)?.wait()
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Arc<LibrarySnapshot> {
        self.shared.current.read().unwrap().clone()
    }

    pub fn applied(&self) -> Vec<AppliedCommit> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn applied_count(&self) -> usize {
        self.shared.log.lock().unwrap().len()
    }

    pub fn is_closed(&self) -> bool {
        self.sender.lock().unwrap().is_none()
    }

    /// Drains pending commits, stops the writer and returns the final snapshot.
    pub fn close(&self) -> Arc<LibrarySnapshot> {
        drop(self.sender.lock().unwrap().take());
        if let Some(handle) = self.writer.lock().unwrap().take() {
            if handle.join().is_err() {
                warn!("commit writer panicked");
            }
        }
        self.snapshot()
    }
}

impl Drop for CommitQueue {
    fn drop(&mut self) {
        self.close();
    }
}

/// Conditions proposed for labels that may not exist yet.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct LabelConditions {
    pub level1: String,
    pub level2: String,
}

/// Returns the canonical path for (track, level1, level2), creating missing
/// labels through `AddLabel` commits enqueued as one batch.
pub fn ensure_label(
    queue: &CommitQueue,
    track: Track,
    level1: &str,
    level2: &str,
    conditions: &LabelConditions,
    origin: &super::commit::CommitOrigin,
) -> Result<TaxonomyPath, QueueError> {
    let requested = TaxonomyPath::new(track, level1.trim(), level2.trim());
    let snapshot = queue.snapshot();
    if let Some(path) = snapshot.taxonomy.resolve(&requested) {
        return Ok(path);
    }
    let mut commits = Vec::new();
    if snapshot.taxonomy.level1(track, level1).is_none() {
        commits.push(Commit::new(
            CommitPayload::AddLabel {
                track,
                level1: level1.trim().to_string(),
                level2: None,
                condition: conditions.level1.clone(),
            },
            origin.clone(),
        ));
    }
    commits.push(Commit::new(
        CommitPayload::AddLabel {
            track,
            level1: level1.trim().to_string(),
            level2: Some(level2.trim().to_string()),
            condition: conditions.level2.clone(),
        },
        origin.clone(),
    ));
    for ticket in queue.enqueue_batch(commits)? {
        match ticket.wait() {
            Ok(_) | Err(QueueError::Rejected(Rejection::LabelExists(_))) => {}
            Err(e) => return Err(e),
        }
    }
    queue
        .snapshot()
        .taxonomy
        .resolve(&requested)
        .ok_or(QueueError::Rejected(Rejection::UnresolvedTaxonomyPath))
}

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::*;

pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredTask {
    pub task_id: String,
    pub payload: TaskPayload,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// All tasks of a batch in one line, so a batch is never half-written.
    BatchCreated {
        key: String,
        kind: TaskKind,
        digest: String,
        tasks: Vec<StoredTask>,
        timestamp: i64,
    },
    Verdict {
        verdict: AnnotationVerdict,
    },
    BatchClosed {
        key: String,
        timestamp: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TaskEntry {
    task_id: String,
    batch: String,
    payload: TaskPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BatchEntry {
    kind: TaskKind,
    digest: String,
    tasks: Vec<usize>,
    closed: bool,
}

/// In-memory state rebuilt from the event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Index {
    tasks: Vec<TaskEntry>,
    by_id: HashMap<String, usize>,
    batches: BTreeMap<String, BatchEntry>,
    verdicts: Vec<AnnotationVerdict>,
    /// (task position, annotator) -> position of the current verdict
    latest: BTreeMap<(usize, String), usize>,
    events: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReceipt {
    pub key: String,
    pub kind: TaskKind,
    pub task_ids: Vec<String>,
    /// False when the same batch had already been created.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictReceipt {
    pub task_id: String,
    pub annotator_id: String,
    /// True when this annotator had answered the task before.
    pub replaced: bool,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchInfo {
    pub key: String,
    pub kind: TaskKind,
    pub task_ids: Vec<String>,
    pub closed: bool,
    /// Tasks with at least one verdict.
    pub answered: usize,
}

pub fn task_id(seq: usize) -> String {
    format!("t{seq:08}")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content digest of a batch; also its default key.
pub fn batch_digest(kind: TaskKind, items: &[TaskPayload]) -> String {
    let mut h = Sha256::new();
    h.update(kind.to_string().as_bytes());
    for item in items {
        h.update(b"\n");
        h.update(serde_json::to_vec(item).expect("payload serializes"));
    }
    hex(&h.finalize())
}

fn now() -> i64 {
    chrono::Utc::now().timestamp()
}

impl Index {
    fn apply(&mut self, event: &Event) -> std::result::Result<(), String> {
        match event {
            Event::BatchCreated {
                key, kind, digest, tasks, ..
            } => {
                if self.batches.contains_key(key) {
                    return Err(format!("batch `{key}` created twice"));
                }
                let mut positions = Vec::with_capacity(tasks.len());
                for t in tasks {
                    if self.by_id.contains_key(&t.task_id) {
                        return Err(format!("task `{}` created twice", t.task_id));
                    }
                    if t.payload.kind() != *kind {
                        return Err(format!("task `{}` has the wrong kind", t.task_id));
                    }
                    let pos = self.tasks.len();
                    self.by_id.insert(t.task_id.clone(), pos);
                    self.tasks.push(TaskEntry {
                        task_id: t.task_id.clone(),
                        batch: key.clone(),
                        payload: t.payload.clone(),
                    });
                    positions.push(pos);
                }
                self.batches.insert(
                    key.clone(),
                    BatchEntry {
                        kind: *kind,
                        digest: digest.clone(),
                        tasks: positions,
                        closed: false,
                    },
                );
            }
            Event::Verdict { verdict } => {
                let pos = *self
                    .by_id
                    .get(&verdict.task_id)
                    .ok_or_else(|| format!("verdict for unknown task `{}`", verdict.task_id))?;
                if verdict.answer.kind() != self.tasks[pos].payload.kind() {
                    return Err(format!("verdict kind mismatch on `{}`", verdict.task_id));
                }
                self.latest
                    .insert((pos, verdict.annotator_id.clone()), self.verdicts.len());
                self.verdicts.push(verdict.clone());
            }
            Event::BatchClosed { key, .. } => {
                self.batches
                    .get_mut(key)
                    .ok_or_else(|| format!("close of unknown batch `{key}`"))?
                    .closed = true;
            }
        }
        self.events += 1;
        Ok(())
    }

    fn task_view(&self, pos: usize) -> AnnotationTask {
        let t = &self.tasks[pos];
        let closed = self.batches[&t.batch].closed;
        AnnotationTask {
            task_id: t.task_id.clone(),
            kind: t.payload.kind(),
            batch: t.batch.clone(),
            payload: t.payload.clone(),
            status: if closed { TaskStatus::Done } else { TaskStatus::Open },
        }
    }

    fn answered_by(&self, pos: usize, annotator: &str) -> bool {
        self.latest.contains_key(&(pos, annotator.to_string()))
    }

    /// Current verdicts (one per task and annotator), in task then annotator order.
    fn current(&self) -> impl Iterator<Item = (usize, &AnnotationVerdict)> {
        self.latest.iter().map(|((pos, _), v)| (*pos, &self.verdicts[*v]))
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Every verdict ever received, including replaced ones.
    pub fn verdict_count(&self) -> usize {
        self.verdicts.len()
    }

    pub fn event_count(&self) -> usize {
        self.events
    }

    pub fn task(&self, task_id: &str) -> Option<AnnotationTask> {
        self.by_id.get(task_id).map(|p| self.task_view(*p))
    }

    /// Lowest-numbered task of `kind` in an open batch that `annotator` has not answered.
    pub fn next_task(&self, kind: TaskKind, annotator: &str) -> Option<AnnotationTask> {
        (0..self.tasks.len())
            .find(|&p| {
                let t = &self.tasks[p];
                t.payload.kind() == kind && !self.batches[&t.batch].closed && !self.answered_by(p, annotator)
            })
            .map(|p| self.task_view(p))
    }

    pub fn batch(&self, key: &str) -> Option<BatchInfo> {
        self.batches.get(key).map(|b| BatchInfo {
            key: key.to_string(),
            kind: b.kind,
            task_ids: b.tasks.iter().map(|p| self.tasks[*p].task_id.clone()).collect(),
            closed: b.closed,
            answered: b
                .tasks
                .iter()
                .filter(|p| self.latest.range((**p, String::new())..).next().is_some_and(|((q, _), _)| q == *p))
                .count(),
        })
    }

    pub fn batches(&self) -> Vec<BatchInfo> {
        self.batches.keys().filter_map(|k| self.batch(k)).collect()
    }

    /// Percentages per rating. Adequacy and fluency honour both filters;
    /// image need is filtered by subset only and pooled across languages.
    pub fn aggregate_quality(&self, subset: Option<Subset>, language: Option<&str>) -> Result<QualityReport> {
        let mut adequacy = Vec::new();
        let mut fluency = Vec::new();
        let mut image_need = Vec::new();
        for (pos, v) in self.current() {
            let (TaskPayload::Quality { subset: s, language: l, .. }, Answer::Quality {
                adequacy: a,
                fluency: f,
                image_need: n,
            }) = (&self.tasks[pos].payload, v.answer)
            else {
                continue;
            };
            if subset.is_some_and(|want| want != *s) {
                continue;
            }
            image_need.push(n);
            if language.is_some_and(|want| want != l) {
                continue;
            }
            adequacy.push(a);
            fluency.push(f);
        }
        if adequacy.is_empty() {
            return Err(AnnotateError::EmptyFilter);
        }
        Ok(QualityReport {
            subset,
            language: language.map(str::to_string),
            adequacy: AttributeBreakdown::from_values(&Scale::ALL, adequacy),
            fluency: AttributeBreakdown::from_values(&Scale::ALL, fluency),
            image_need: AttributeBreakdown::from_values(&ImageNeed::ALL, image_need),
        })
    }

    /// Mean of the current ratings over a fully answered naturalness batch.
    pub fn aggregate_naturalness(&self, batch: &str) -> Result<NaturalnessReport> {
        let b = self
            .batches
            .get(batch)
            .ok_or_else(|| AnnotateError::UnknownBatch(batch.to_string()))?;
        if b.kind != TaskKind::Naturalness {
            return Err(AnnotateError::WrongKind { batch: batch.into() });
        }
        let mut ratings = Vec::new();
        let mut unanswered = Vec::new();
        for &pos in &b.tasks {
            let before = ratings.len();
            for ((_, _), v) in self.latest.range((pos, String::new())..).take_while(|((p, _), _)| *p == pos) {
                if let Answer::Naturalness { rating } = self.verdicts[*v].answer {
                    ratings.push(rating);
                }
            }
            if ratings.len() == before {
                unanswered.push(self.tasks[pos].task_id.clone());
            }
        }
        if !unanswered.is_empty() {
            return Err(AnnotateError::Incomplete {
                batch: batch.into(),
                unanswered,
            });
        }
        Ok(NaturalnessReport {
            batch: batch.into(),
            tasks: b.tasks.len(),
            mean: crate::noiser::mean_rating(&ratings),
            ratings,
        })
    }
}

/// The event log plus its index. Mutations append and fsync before they
/// touch the index, so the index never runs ahead of the disk.
#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: File,
    index: Index,
}

impl Store {
    /// Opens (or creates) the store in `dir` and replays its log. A torn
    /// final line from an interrupted write is cut off.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut index = Index::default();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let end = bytes[offset..].iter().position(|b| *b == b'\n').map(|i| offset + i);
            let line = &bytes[offset..end.unwrap_or(bytes.len())];
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<Event>(s).map_err(|e| e.to_string()));
            match (parsed, end) {
                (Ok(event), _) => {
                    index
                        .apply(&event)
                        .map_err(|message| AnnotateError::CorruptLog { line: line_no, message })?;
                    if end.is_none() {
                        // complete record that lost only its newline
                        file.write_all(b"\n")?;
                        file.sync_data()?;
                    }
                }
                (Err(_), None) => {
                    file.set_len(offset as u64)?;
                    file.sync_data()?;
                    break;
                }
                (Err(message), Some(_)) => return Err(AnnotateError::CorruptLog { line: line_no, message }),
            }
            offset = end.map_or(bytes.len(), |e| e + 1);
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { path, file, index })
    }

    pub fn log_path(&self) -> &Path {
        &self.path
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    fn append(&mut self, event: Event) -> Result<()> {
        let mut line = serde_json::to_vec(&event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.index
            .apply(&event)
            .map_err(|message| AnnotateError::CorruptLog { line: self.index.events + 1, message })
    }

    /// Creates a batch; resubmitting the same items under the same key
    /// returns the original task ids.
    pub fn create_batch(&mut self, kind: TaskKind, items: Vec<TaskPayload>, key: Option<String>) -> Result<BatchReceipt> {
        if items.is_empty() {
            return Err(AnnotateError::EmptyBatch);
        }
        if let Some(index) = items.iter().position(|i| i.kind() != kind) {
            return Err(AnnotateError::BadItem {
                index,
                kind,
                message: format!("payload is a {} item", items[index].kind()),
            });
        }
        let digest = batch_digest(kind, &items);
        let key = key.unwrap_or_else(|| format!("b-{}", &digest[..16]));
        if let Some(existing) = self.index.batches.get(&key) {
            if existing.digest != digest || existing.kind != kind {
                return Err(AnnotateError::BatchConflict(key));
            }
            let info = self.index.batch(&key).expect("batch exists");
            return Ok(BatchReceipt {
                key,
                kind,
                task_ids: info.task_ids,
                created: false,
            });
        }
        let first = self.index.tasks.len() + 1;
        let tasks: Vec<StoredTask> = items
            .into_iter()
            .enumerate()
            .map(|(i, payload)| StoredTask {
                task_id: task_id(first + i),
                payload,
            })
            .collect();
        let task_ids = tasks.iter().map(|t| t.task_id.clone()).collect();
        self.append(Event::BatchCreated {
            key: key.clone(),
            kind,
            digest,
            tasks,
            timestamp: now(),
        })?;
        Ok(BatchReceipt {
            key,
            kind,
            task_ids,
            created: true,
        })
    }

    /// Like [`create_batch`](Self::create_batch) with items still in JSON form.
    pub fn create_batch_json(
        &mut self,
        kind: TaskKind,
        items: Vec<serde_json::Value>,
        key: Option<String>,
    ) -> Result<BatchReceipt> {
        let payloads = items
            .into_iter()
            .enumerate()
            .map(|(index, v)| parse_item(kind, v).map_err(|message| AnnotateError::BadItem { index, kind, message }))
            .collect::<Result<Vec<_>>>()?;
        self.create_batch(kind, payloads, key)
    }

    pub fn submit_verdict(&mut self, req: VerdictRequest) -> Result<VerdictReceipt> {
        let pos = *self
            .index
            .by_id
            .get(&req.task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(req.task_id.clone()))?;
        let answer = req.answer(self.index.tasks[pos].payload.kind())?;
        let replaced = self.index.answered_by(pos, &req.annotator_id);
        let timestamp = req.timestamp.unwrap_or_else(now);
        self.append(Event::Verdict {
            verdict: AnnotationVerdict {
                task_id: req.task_id.clone(),
                annotator_id: req.annotator_id.clone(),
                answer,
                timestamp,
            },
        })?;
        Ok(VerdictReceipt {
            task_id: req.task_id,
            annotator_id: req.annotator_id,
            replaced,
            timestamp,
        })
    }

    /// Stops handing out the batch's tasks. Closing twice is a no-op.
    pub fn close_batch(&mut self, key: &str) -> Result<BatchInfo> {
        let closed = self
            .index
            .batches
            .get(key)
            .ok_or_else(|| AnnotateError::UnknownBatch(key.to_string()))?
            .closed;
        if !closed {
            self.append(Event::BatchClosed {
                key: key.to_string(),
                timestamp: now(),
            })?;
        }
        Ok(self.index.batch(key).expect("batch exists"))
    }
}

fn parse_item(kind: TaskKind, v: serde_json::Value) -> std::result::Result<TaskPayload, String> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct N {
        original: String,
        corrupted: String,
        #[serde(default)]
        record_id: Option<u64>,
    }
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Q {
        source: String,
        target: String,
        image: String,
        subset: Subset,
        language: String,
        #[serde(default)]
        record_id: Option<u64>,
    }
    match kind {
        TaskKind::Naturalness => {
            let n: N = serde_json::from_value(v).map_err(|e| e.to_string())?;
            Ok(TaskPayload::Naturalness {
                original: n.original,
                corrupted: n.corrupted,
                record_id: n.record_id,
            })
        }
        TaskKind::Quality => {
            let q: Q = serde_json::from_value(v).map_err(|e| e.to_string())?;
            if q.language.trim().is_empty() {
                return Err("empty language".into());
            }
            Ok(TaskPayload::Quality {
                source: q.source,
                target: q.target,
                image: q.image,
                subset: q.subset,
                language: q.language,
                record_id: q.record_id,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat(n: usize) -> Vec<TaskPayload> {
        (0..n)
            .map(|i| TaskPayload::naturalness(format!("the cat {i}"), format!("ct {i}")))
            .collect()
    }

    fn open() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn batch_of_twenty() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(20), None).unwrap();
        assert_eq!(r.task_ids.len(), 20);
        assert_eq!(r.task_ids[0], "t00000001");
        assert!(r.created);
        for id in &r.task_ids {
            assert_eq!(s.index().task(id).unwrap().status, TaskStatus::Open);
        }
        assert!(matches!(
            s.create_batch(TaskKind::Naturalness, vec![], None),
            Err(AnnotateError::EmptyBatch)
        ));
    }

    #[test]
    fn resubmission_is_idempotent() {
        let (d, mut s) = open();
        let a = s.create_batch(TaskKind::Naturalness, nat(3), Some("k".into())).unwrap();
        let log = fs::read(d.path().join(LOG_FILE)).unwrap();
        let b = s.create_batch(TaskKind::Naturalness, nat(3), Some("k".into())).unwrap();
        assert_eq!(a.task_ids, b.task_ids);
        assert!(!b.created);
        assert_eq!(fs::read(d.path().join(LOG_FILE)).unwrap(), log);
        assert_eq!(s.index().task_count(), 3);
        assert!(matches!(
            s.create_batch(TaskKind::Naturalness, nat(4), Some("k".into())),
            Err(AnnotateError::BatchConflict(_))
        ));
        // default keys come from content
        let c = s.create_batch(TaskKind::Naturalness, nat(2), None).unwrap();
        let e = s.create_batch(TaskKind::Naturalness, nat(2), None).unwrap();
        assert_eq!(c, BatchReceipt { created: true, ..e.clone() });
    }

    #[test]
    fn next_task_order_and_exhaustion() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(3), None).unwrap();
        let t = s.index().next_task(TaskKind::Naturalness, "ann").unwrap();
        assert_eq!(t.task_id, r.task_ids[0]);
        s.submit_verdict(VerdictRequest::naturalness(&t.task_id, "ann", 4)).unwrap();
        assert_eq!(s.index().next_task(TaskKind::Naturalness, "ann").unwrap().task_id, r.task_ids[1]);
        for id in &r.task_ids[1..] {
            s.submit_verdict(VerdictRequest::naturalness(id, "ann", 4)).unwrap();
        }
        assert!(s.index().next_task(TaskKind::Naturalness, "ann").is_none());
        assert!(s.index().next_task(TaskKind::Quality, "other").is_none());
    }

    #[test]
    fn two_annotators_interleave() {
        let (_d, mut s) = open();
        s.create_batch(TaskKind::Naturalness, nat(3), None).unwrap();
        let mut seen: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for _ in 0..3 {
            for who in ["a", "b"] {
                let t = s.index().next_task(TaskKind::Naturalness, who).unwrap();
                s.submit_verdict(VerdictRequest::naturalness(&t.task_id, who, 5)).unwrap();
                seen.entry(who).or_default().push(t.task_id);
            }
        }
        assert_eq!(seen["a"], seen["b"]);
        assert_eq!(seen["a"], vec!["t00000001", "t00000002", "t00000003"]);
        assert!(s.index().next_task(TaskKind::Naturalness, "a").is_none());
    }

    #[test]
    fn verdict_validation() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(1), None).unwrap();
        let id = &r.task_ids[0];
        assert!(s.submit_verdict(VerdictRequest::naturalness(id, "a", 5)).is_ok());
        for bad in [0, 6, -1] {
            assert!(matches!(
                s.submit_verdict(VerdictRequest::naturalness(id, "a", bad)),
                Err(AnnotateError::InvalidVerdict(_))
            ));
        }
        assert!(matches!(
            s.submit_verdict(VerdictRequest::naturalness("t99", "a", 3)),
            Err(AnnotateError::UnknownTask(_))
        ));
        let mixed = VerdictRequest::quality(id, "a", Scale::Good, Scale::Good, ImageNeed::No);
        assert!(s.submit_verdict(mixed).is_err());
        assert!(s.submit_verdict(VerdictRequest::naturalness(id, " ", 3)).is_err());
    }

    #[test]
    fn last_write_wins() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(1), Some("b".into())).unwrap();
        let first = s.submit_verdict(VerdictRequest::naturalness(&r.task_ids[0], "a", 2)).unwrap();
        let second = s.submit_verdict(VerdictRequest::naturalness(&r.task_ids[0], "a", 4)).unwrap();
        assert!(!first.replaced && second.replaced);
        let rep = s.index().aggregate_naturalness("b").unwrap();
        assert_eq!(rep.mean, 4.0);
        assert_eq!(s.index().verdict_count(), 2);
    }

    #[test]
    fn naturalness_boundary_and_incomplete() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(2), Some("b".into())).unwrap();
        s.submit_verdict(VerdictRequest::naturalness(&r.task_ids[0], "a", 4)).unwrap();
        match s.index().aggregate_naturalness("b") {
            Err(AnnotateError::Incomplete { unanswered, .. }) => assert_eq!(unanswered, vec![r.task_ids[1].clone()]),
            other => panic!("{other:?}"),
        }
        s.submit_verdict(VerdictRequest::naturalness(&r.task_ids[1], "a", 5)).unwrap();
        let rep = s.index().aggregate_naturalness("b").unwrap();
        assert_eq!((rep.mean, rep.ratings.clone()), (4.5, vec![4, 5]));
        assert!(matches!(s.index().aggregate_naturalness("nope"), Err(AnnotateError::UnknownBatch(_))));
    }

    #[test]
    fn close_hides_tasks() {
        let (_d, mut s) = open();
        let r = s.create_batch(TaskKind::Naturalness, nat(2), Some("b".into())).unwrap();
        let info = s.close_batch("b").unwrap();
        assert!(info.closed);
        assert!(s.index().next_task(TaskKind::Naturalness, "a").is_none());
        assert_eq!(s.index().task(&r.task_ids[0]).unwrap().status, TaskStatus::Done);
        let events = s.index().event_count();
        s.close_batch("b").unwrap();
        assert_eq!(s.index().event_count(), events);
    }

    #[test]
    fn quality_filters() {
        let (_d, mut s) = open();
        let items = vec![
            TaskPayload::quality("s", "t", "1.jpg", Subset::Test, "hi"),
            TaskPayload::quality("s", "t", "2.jpg", Subset::Test, "bn"),
            TaskPayload::quality("s", "t", "3.jpg", Subset::Challenge, "hi"),
        ];
        let r = s.create_batch(TaskKind::Quality, items, None).unwrap();
        let needs = [ImageNeed::Yes, ImageNeed::No, ImageNeed::Maybe];
        for (id, need) in r.task_ids.iter().zip(needs) {
            s.submit_verdict(VerdictRequest::quality(id, "a", Scale::Good, Scale::Medium, need))
                .unwrap();
        }
        let rep = s.index().aggregate_quality(Some(Subset::Test), Some("hi")).unwrap();
        assert_eq!(rep.adequacy.total, 1);
        assert_eq!(rep.adequacy.percent[&Scale::Good], 100.0);
        assert_eq!(rep.fluency.percent[&Scale::Medium], 100.0);
        // image need pools both test languages
        assert_eq!(rep.image_need.total, 2);
        assert_eq!(rep.image_need.percent[&ImageNeed::Yes], 50.0);
        assert_eq!(s.index().aggregate_quality(None, None).unwrap().adequacy.total, 3);
        assert!(matches!(
            s.index().aggregate_quality(Some(Subset::Challenge), Some("bn")),
            Err(AnnotateError::EmptyFilter)
        ));
    }

    #[test]
    fn replay_after_torn_write() {
        let dir = tempfile::tempdir().unwrap();
        let snapshot = {
            let mut s = Store::open(dir.path()).unwrap();
            let r = s.create_batch(TaskKind::Naturalness, nat(3), Some("b".into())).unwrap();
            for (i, id) in r.task_ids.iter().enumerate() {
                s.submit_verdict(VerdictRequest::naturalness(id, "a", 3 + i as i64)).unwrap();
            }
            s.index().clone()
        };
        let path = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"event":"verdict","verdict":{"task_id":"t000"#).unwrap();
        drop(f);
        let mut s = Store::open(dir.path()).unwrap();
        assert_eq!(s.index(), &snapshot);
        assert_eq!(s.index().aggregate_naturalness("b").unwrap().mean, 4.0);
        // the log stays appendable
        s.submit_verdict(VerdictRequest::naturalness("t00000001", "z", 5)).unwrap();
        drop(s);
        assert_eq!(Store::open(dir.path()).unwrap().index().verdict_count(), 4);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOG_FILE), "not json\n{}\n").unwrap();
        assert!(matches!(Store::open(dir.path()), Err(AnnotateError::CorruptLog { line: 1, .. })));
    }

    #[test]
    fn json_items_are_checked_against_kind() {
        let (_d, mut s) = open();
        let good = serde_json::json!({"original": "a b", "corrupted": "b"});
        let bad = serde_json::json!({"source": "a", "target": "b"});
        assert!(s.create_batch_json(TaskKind::Naturalness, vec![good.clone()], None).is_ok());
        assert!(matches!(
            s.create_batch_json(TaskKind::Naturalness, vec![good, bad], None),
            Err(AnnotateError::BadItem { index: 1, .. })
        ));
    }
}

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use regabstract_core::corpus::{AttributeKind, CorpusBundle, LabelSpace};
use regabstract_core::rationale::Rationale;

use crate::error::{ServiceError, ServiceResult};
use crate::events::{EventBody, EventLog, EventRecord, InferencePayload, VerdictKind, VerdictPayload};
use crate::inference::{Extraction, LabelProb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Corrected,
}

impl std::str::FromStr for ItemStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(ItemStatus::Pending),
            "accepted" => Ok(ItemStatus::Accepted),
            "corrected" => Ok(ItemStatus::Corrected),
            _ => Err(format!("unknown status '{s}' (expected pending, accepted or corrected)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationItem {
    pub extraction_id: String,
    pub patient_id: String,
    pub attribute: AttributeKind,
    pub predicted: String,
    pub top5: Vec<LabelProb>,
    pub rationale: Option<Rationale>,
    pub source: String,
    pub status: ItemStatus,
    pub corrected_label: Option<String>,
    pub reviewer_id: Option<String>,
    pub reviewed_at: Option<String>,
}

impl CurationItem {
    fn from_extraction(x: Extraction) -> Self {
        Self {
            extraction_id: x.extraction_id,
            patient_id: x.patient_id,
            attribute: x.attribute,
            predicted: x.predicted,
            top5: x.top5,
            rationale: x.rationale,
            source: x.source,
            status: ItemStatus::Pending,
            corrected_label: None,
            reviewer_id: None,
            reviewed_at: None,
        }
    }

    /// The label a reviewed item exports: the correction when corrected,
    /// otherwise the prediction.
    pub fn final_label(&self) -> &str {
        self.corrected_label.as_deref().unwrap_or(&self.predicted)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct VerdictRequest {
    pub event_id: String,
    pub verdict: VerdictKind,
    #[serde(default)]
    pub corrected_label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub accepted: usize,
    pub corrected: usize,
}

impl StatusCounts {
    fn add(&mut self, s: ItemStatus) {
        match s {
            ItemStatus::Pending => self.pending += 1,
            ItemStatus::Accepted => self.accepted += 1,
            ItemStatus::Corrected => self.corrected += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewerStats {
    /// Verdict events, including re-reviews.
    pub verdicts: usize,
    pub first_at: Option<String>,
    pub last_at: Option<String>,
    /// Verdicts per hour between the first and last verdict; `None` until two
    /// verdicts are at least a second apart.
    pub per_hour: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub corrected: usize,
    /// corrected / (accepted + corrected), 0 before any review.
    pub correction_rate: f64,
    pub by_attribute: BTreeMap<AttributeKind, StatusCounts>,
    pub reviewers: BTreeMap<String, ReviewerStats>,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub patient_id: String,
    pub attribute: AttributeKind,
    pub label: String,
    pub status: ItemStatus,
    pub predicted: String,
    pub reviewer_id: Option<String>,
    pub reviewed_at: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueueFilter {
    pub attribute: Option<AttributeKind>,
    pub status: Option<ItemStatus>,
}

/// Materialized view over the extractions and the verdict log.
#[derive(Debug, Default)]
struct View {
    items: BTreeMap<(String, AttributeKind), CurationItem>,
    by_id: HashMap<String, (String, AttributeKind)>,
    /// Response recorded for every applied verdict event.
    responses: HashMap<String, CurationItem>,
    reviewer_times: BTreeMap<String, Vec<String>>,
    events: usize,
}

impl View {
    fn new(extractions: Vec<Extraction>) -> Self {
        let mut v = View::default();
        for x in extractions {
            let key = (x.patient_id.clone(), x.attribute);
            v.by_id.insert(x.extraction_id.clone(), key.clone());
            v.items.insert(key, CurationItem::from_extraction(x));
        }
        v
    }

    fn item(&self, extraction_id: &str) -> Option<&CurationItem> {
        self.by_id.get(extraction_id).and_then(|k| self.items.get(k))
    }

    fn apply(&mut self, event: &EventRecord) {
        self.events += 1;
        let EventBody::Verdict(v) = &event.body else {
            return;
        };
        let Some(key) = self.by_id.get(&v.extraction_id).cloned() else {
            log::warn!("event {} refers to unknown extraction {}; skipped", event.event_id, v.extraction_id);
            return;
        };
        let item = self.items.get_mut(&key).expect("indexed");
        match v.verdict {
            VerdictKind::Accept => {
                item.status = ItemStatus::Accepted;
                item.corrected_label = None;
            }
            VerdictKind::Correct => {
                item.status = ItemStatus::Corrected;
                item.corrected_label = v.corrected_label.clone();
            }
        }
        item.reviewer_id = Some(v.reviewer_id.clone());
        item.reviewed_at = Some(event.timestamp.clone());
        self.responses.insert(event.event_id.clone(), item.clone());
        self.reviewer_times.entry(v.reviewer_id.clone()).or_default().push(event.timestamp.clone());
    }

    fn replace_predictions(&mut self, extractions: Vec<Extraction>) {
        for x in extractions {
            let key = (x.patient_id.clone(), x.attribute);
            match self.items.get_mut(&key) {
                Some(item) => {
                    item.predicted = x.predicted;
                    item.top5 = x.top5;
                    item.rationale = x.rationale;
                    item.source = x.source;
                }
                None => {
                    self.by_id.insert(x.extraction_id.clone(), key.clone());
                    self.items.insert(key, CurationItem::from_extraction(x));
                }
            }
        }
    }
}

fn per_hour(first: &str, last: &str, n: usize) -> Option<f64> {
    let a = chrono::DateTime::parse_from_rfc3339(first).ok()?;
    let b = chrono::DateTime::parse_from_rfc3339(last).ok()?;
    let secs = (b - a).num_milliseconds() as f64 / 1000.0;
    (n >= 2 && secs >= 1.0).then(|| (n - 1) as f64 * 3600.0 / secs)
}

/// Shared service state: corpus, label spaces, materialized view and the log
/// appender. Writers are serialized through the appender lock.
pub struct Store {
    corpus: CorpusBundle,
    view: RwLock<View>,
    log: Mutex<EventLog>,
}

impl Store {
    /// Builds the view from `extractions` and replays the log at `log_path`.
    pub fn open(corpus: CorpusBundle, extractions: Vec<Extraction>, log_path: &Path) -> ServiceResult<Self> {
        let (log, events) = EventLog::open(log_path)?;
        let mut view = View::new(extractions);
        for e in &events {
            view.apply(e);
        }
        log::info!("replayed {} events from {}", events.len(), log_path.display());
        Ok(Self {
            corpus,
            view: RwLock::new(view),
            log: Mutex::new(log),
        })
    }

    pub fn corpus(&self) -> &CorpusBundle {
        &self.corpus
    }

    pub fn label_space(&self, attribute: AttributeKind) -> &LabelSpace {
        self.corpus.label_space(attribute)
    }

    pub fn item(&self, extraction_id: &str) -> Option<CurationItem> {
        self.view.read().expect("view lock").item(extraction_id).cloned()
    }

    /// Matching items in (patient, attribute) order and the total match count.
    pub fn queue(&self, filter: &QueueFilter, page: usize, page_size: usize) -> (Vec<CurationItem>, usize) {
        let view = self.view.read().expect("view lock");
        let matching = view.items.values().filter(|i| {
            filter.attribute.is_none_or(|a| i.attribute == a) && filter.status.is_none_or(|s| i.status == s)
        });
        let all: Vec<&CurationItem> = matching.collect();
        let skip = page.saturating_sub(1).saturating_mul(page_size);
        let items = all.iter().skip(skip).take(page_size).map(|&i| i.clone()).collect();
        (items, all.len())
    }

    pub fn patient_items(&self, patient_id: &str) -> Vec<CurationItem> {
        let view = self.view.read().expect("view lock");
        view.items
            .range((patient_id.to_string(), AttributeKind::ALL[0])..)
            .take_while(|((p, _), _)| p == patient_id)
            .map(|(_, i)| i.clone())
            .collect()
    }

    /// Records a verdict. A repeated `event_id` returns the response recorded
    /// the first time and appends nothing.
    pub fn verdict(&self, extraction_id: &str, reviewer_id: &str, req: VerdictRequest) -> ServiceResult<CurationItem> {
        let mut log = self.log.lock().expect("log lock");
        if log.contains(&req.event_id) {
            let view = self.view.read().expect("view lock");
            return view
                .responses
                .get(&req.event_id)
                .cloned()
                .ok_or_else(|| ServiceError::Invalid(format!("event id {} was used for a different kind of event", req.event_id)));
        }
        let current = self.item(extraction_id).ok_or_else(|| ServiceError::UnknownExtraction(extraction_id.to_string()))?;
        if req.event_id.trim().is_empty() {
            return Err(ServiceError::Invalid("event_id must be non-empty".into()));
        }
        match (req.verdict, &req.corrected_label) {
            (VerdictKind::Accept, Some(_)) => {
                return Err(ServiceError::Invalid("corrected_label is only allowed with verdict=correct".into()));
            }
            (VerdictKind::Correct, None) => {
                return Err(ServiceError::Invalid("verdict=correct requires corrected_label".into()));
            }
            (VerdictKind::Correct, Some(label)) => {
                if self.label_space(current.attribute).index_of(label).is_none() {
                    return Err(ServiceError::Invalid(format!("'{label}' is not a {} class", current.attribute)));
                }
            }
            (VerdictKind::Accept, None) => {}
        }
        let record = EventRecord {
            event_id: req.event_id.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            body: EventBody::Verdict(VerdictPayload {
                extraction_id: extraction_id.to_string(),
                verdict: req.verdict,
                corrected_label: req.corrected_label,
                reviewer_id: reviewer_id.to_string(),
            }),
        };
        log.append(&record)?;
        let mut view = self.view.write().expect("view lock");
        view.apply(&record);
        Ok(view.responses[&record.event_id].clone())
    }

    /// Swaps in new predictions, keeping verdicts, and logs the swap.
    pub fn install_predictions(&self, extractions: Vec<Extraction>, sources: Vec<(String, String)>) -> ServiceResult<()> {
        let mut log = self.log.lock().expect("log lock");
        let record = EventRecord {
            event_id: format!("inference-{}", chrono::Utc::now().timestamp_nanos_opt().unwrap_or_default()),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            body: EventBody::Inference(InferencePayload {
                sources,
                n_items: extractions.len(),
            }),
        };
        log.append(&record)?;
        let mut view = self.view.write().expect("view lock");
        view.replace_predictions(extractions);
        view.apply(&record);
        Ok(())
    }

    pub fn event_count(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }

    pub fn stats(&self) -> Stats {
        let view = self.view.read().expect("view lock");
        let mut s = Stats {
            total: view.items.len(),
            events: view.events,
            ..Stats::default()
        };
        let mut overall = StatusCounts::default();
        for item in view.items.values() {
            overall.add(item.status);
            s.by_attribute.entry(item.attribute).or_default().add(item.status);
        }
        s.pending = overall.pending;
        s.accepted = overall.accepted;
        s.corrected = overall.corrected;
        let reviewed = s.accepted + s.corrected;
        s.correction_rate = if reviewed == 0 { 0.0 } else { s.corrected as f64 / reviewed as f64 };
        for (r, times) in &view.reviewer_times {
            let (first, last) = (times.first().cloned(), times.last().cloned());
            let rate = match (&first, &last) {
                (Some(a), Some(b)) => per_hour(a, b, times.len()),
                _ => None,
            };
            s.reviewers.insert(
                r.clone(),
                ReviewerStats {
                    verdicts: times.len(),
                    first_at: first,
                    last_at: last,
                    per_hour: rate,
                },
            );
        }
        s
    }

    /// One row per reviewed item, in (patient, attribute) order.
    pub fn export(&self) -> Vec<ExportRow> {
        let view = self.view.read().expect("view lock");
        view.items
            .values()
            .filter(|i| i.status != ItemStatus::Pending)
            .map(|i| ExportRow {
                patient_id: i.patient_id.clone(),
                attribute: i.attribute,
                label: i.final_label().to_string(),
                status: i.status,
                predicted: i.predicted.clone(),
                reviewer_id: i.reviewer_id.clone(),
                reviewed_at: i.reviewed_at.clone(),
            })
            .collect()
    }
}

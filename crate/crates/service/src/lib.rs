//! Assisted-curation backend: precomputed extractions with rationales, an
//! append-only verdict log and the HTTP API over both.

mod api;
mod error;
mod events;
mod inference;
mod store;

pub use api::{router, serve, ServiceConfig, DEFAULT_PAGE_SIZE, REVIEWER_HEADER, TOTAL_COUNT_HEADER};
pub use error::{ServiceError, ServiceResult};
pub use events::{read_events, EventBody, EventLog, EventRecord, InferencePayload, VerdictKind, VerdictPayload};
pub use inference::{extract_all, extraction_id, load_predictors, Extraction, LabelProb, Predictor, Predictors, RATIONALE_K};
pub use store::{CurationItem, ExportRow, ItemStatus, QueueFilter, ReviewerStats, Stats, StatusCounts, Store, VerdictRequest};

//! Metric prompts, score parsing, scorer backends and batch scoring.

mod backend;
mod batch;
mod cosine;
mod parse;
mod prompt;

pub use backend::{
    fnv1a64, mock_raw, mock_score, truncate_tokens, HealthResponse, HttpBackend, MockBackend, ScoreBackend,
    ScoreRequestBody, ScoreResponseBody, WireRequest, WireResult, MOCK_MODEL,
};
pub use batch::{
    reconcile_score_file, score_batch, BatchOptions, BatchSummary, FailurePolicy, Quarantined, RecordSink, RetryPolicy,
    ScorerEndpoint,
};
pub use cosine::{
    cosine_score, cosine_similarity, EmbeddingRow, EmbeddingTable, COSINE_PROVENANCE, TABLE_MAGIC, TABLE_VERSION,
};
pub use parse::parse_score;
pub use prompt::{
    assemble_prompt, PromptMode, PromptTemplate, TeacherPath, COT_SUFFIX, DENSE_CAPTION_PROMPT, RATIONALIZATION_SUFFIX,
};

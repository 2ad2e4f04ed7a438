//! Procedural task graphs mined from step-annotated task videos.
//!
//! The pipeline: load or synthesize a [`corpus::Corpus`], mine a
//! [`graph::ProcGraph`] of step transitions, replay recognizer output into an
//! [`online::OnlinePath`], and query the graph for task, next-step and plan
//! predictions. Around that core sit dataset synthesizers (dialog turns,
//! mistake samples), a mock recognizer, retrieval utilities and the
//! evaluation harness.

pub mod corpus;
pub mod dialog;
pub mod eval;
pub mod graph;
pub mod mistakes;
pub mod online;
pub mod predict;
pub mod recognizer;
pub mod retrieval;
pub mod seed;
pub mod textmap;

pub use corpus::{
    compute_stats, generate_synthetic_corpus, load_corpus, ActionClip, BranchingModel, Corpus,
    CorpusError, CorpusStats, GeneratorSpec, Split, VideoAnnotation,
};
pub use dialog::{DialogError, DialogKind, DialogSample};
pub use eval::{run_benchmark, EvalConfig, EvalError, EvalReport, TaskKind};
pub use graph::{build_graph, merge_deltas, GraphDelta, GraphError, GraphSource, ProcGraph};
pub use mistakes::{MistakeError, MistakeKind, MistakeSample};
pub use online::{OnlineError, OnlinePath, RecognizerEvent};
pub use predict::{Plan, PlanStrategy, PredictError, TaskScore};
pub use recognizer::{ConfusionScope, MockRecognizer, Recognizer, RecognizerConfig};
pub use retrieval::{EmbeddingRecord, EmbeddingStore, FeatureTensor, RetrievalError};
pub use textmap::{map_to_label, normalize, LabelVocabulary, MapError, MapResult};

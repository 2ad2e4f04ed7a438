//! Benchmark protocol: stream each test video through a recognizer into an
//! online path, query the predictors at every clip boundary and score them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, VideoAnnotation};
use crate::graph::ProcGraph;
use crate::mistakes::{
    build_order_dataset, detect_action_error, detect_order_error, synth_action_error, GroundTruth,
    MistakeSample, DEFAULT_CLEAN_FRACTION, DEFAULT_MAX_ATTEMPTS,
};
use crate::online::OnlinePath;
use crate::predict::{
    predict_next_action, predict_plan, recognize_task, PlanStrategy, DEFAULT_ALPHA,
};
use crate::recognizer::{MockRecognizer, Recognizer, RecognizerConfig, RecognizerError};
use crate::textmap::{map_to_label, LabelVocabulary, DEFAULT_MAP_THRESHOLD};

pub const DEFAULT_HORIZON: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("no task kinds selected")]
    NoTasks,
    #[error(transparent)]
    Recognizer(#[from] RecognizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "TR")]
    Tr,
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "PP")]
    Pp,
    #[serde(rename = "PPplus")]
    PpPlus,
    #[serde(rename = "action_error")]
    ActionError,
    #[serde(rename = "order_error")]
    OrderError,
}

impl TaskKind {
    pub const PREDICTION: [TaskKind; 5] = [Self::Tr, Self::Ar, Self::Ap, Self::Pp, Self::PpPlus];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tr => "TR",
            Self::Ar => "AR",
            Self::Ap => "AP",
            Self::Pp => "PP",
            Self::PpPlus => "PPplus",
            Self::ActionError => "action_error",
            Self::OrderError => "order_error",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tr" => Ok(Self::Tr),
            "ar" => Ok(Self::Ar),
            "ap" => Ok(Self::Ap),
            "pp" => Ok(Self::Pp),
            "pp+" | "ppplus" => Ok(Self::PpPlus),
            "action" | "action_error" => Ok(Self::ActionError),
            "order" | "order_error" => Ok(Self::OrderError),
            other => Err(format!("unknown task kind {other:?}")),
        }
    }
}

/// Prediction or gold value; the variant follows the task kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Label(String),
    Labels(Vec<String>),
    Index(usize),
    Flag(bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub task_kind: TaskKind,
    /// Absent when the predictor failed on this item.
    pub prediction: Option<Answer>,
    pub gold: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// True when `pred` maps onto `vocab` and lands on `gold`.
pub fn score_classification(
    pred: &str,
    gold: &str,
    vocab: &LabelVocabulary,
    threshold: f64,
) -> bool {
    map_to_label(pred, vocab, threshold).is_ok_and(|m| m.label == gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub exact_prefix: bool,
    pub per_position: f64,
}

/// Compares the first `min(horizon, |gold|)` positions.
pub fn score_plan<A: AsRef<str>, B: AsRef<str>>(
    pred: &[A],
    gold: &[B],
    horizon: usize,
) -> PlanScore {
    let l = horizon.min(gold.len());
    if l == 0 {
        return PlanScore {
            exact_prefix: false,
            per_position: 0.0,
        };
    }
    let hits = (0..l)
        .filter(|&i| pred.get(i).is_some_and(|p| p.as_ref() == gold[i].as_ref()))
        .count();
    PlanScore {
        exact_prefix: hits == l,
        per_position: hits as f64 / l as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tasks: BTreeSet<TaskKind>,
    pub alpha: f64,
    pub horizon: usize,
    pub strategy: PlanStrategy,
    pub map_threshold: f64,
    pub recognizer: RecognizerConfig,
    /// Seed for synthesizing mistake samples.
    pub mistake_seed: u64,
    pub clean_fraction: f64,
    pub max_attempts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tasks: TaskKind::PREDICTION.into_iter().collect(),
            alpha: DEFAULT_ALPHA,
            horizon: DEFAULT_HORIZON,
            strategy: PlanStrategy::Greedy,
            map_threshold: DEFAULT_MAP_THRESHOLD,
            recognizer: RecognizerConfig::default(),
            mistake_seed: 0,
            clean_fraction: DEFAULT_CLEAN_FRACTION,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub item_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    /// For PP and PP+ this is the exact-prefix rate.
    pub accuracy: f64,
    pub n_items: usize,
    pub n_correct: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_prefix: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_position: Option<f64>,
    /// Items whose predictor errored; they count as incorrect.
    pub failures: Vec<Failure>,
    /// Videos for which no sample could be synthesized; not items.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub n_videos: usize,
    pub kinds: BTreeMap<TaskKind, KindReport>,
}

impl EvalReport {
    pub fn accuracy(&self, kind: TaskKind) -> Option<f64> {
        self.kinds.get(&kind).map(|k| k.accuracy)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub report: EvalReport,
    pub items: Vec<EvalItem>,
}

/// Evaluates `test` against `g` with a mock recognizer whose vocabulary is
/// the test annotations. Deterministic for a fixed config.
pub fn run_benchmark(
    test: &Corpus,
    g: &ProcGraph,
    config: &EvalConfig,
) -> Result<BenchmarkOutput, EvalError> {
    let recognizer = MockRecognizer::from_corpus(config.recognizer, test)?;
    run_benchmark_with(test, g, config, &recognizer)
}

pub fn run_benchmark_with<R: Recognizer>(
    test: &Corpus,
    g: &ProcGraph,
    config: &EvalConfig,
    recognizer: &R,
) -> Result<BenchmarkOutput, EvalError> {
    if config.horizon == 0 {
        return Err(EvalError::ZeroHorizon);
    }
    if config.tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    let per_video: Vec<Vec<EvalItem>> = test
        .videos()
        .par_iter()
        .map(|v| eval_video(v, g, config, recognizer))
        .collect();
    let mut items: Vec<EvalItem> = per_video.into_iter().flatten().collect();
    let mut skipped: BTreeMap<TaskKind, Vec<Failure>> = BTreeMap::new();

    if config.tasks.contains(&TaskKind::ActionError) {
        let results: Vec<_> = test
            .videos()
            .par_iter()
            .map(|v| (v, synth_action_error(v, g, config.mistake_seed)))
            .collect();
        for (v, r) in results {
            match r {
                Ok(s) => items.push(mistake_item(&s, g, TaskKind::ActionError)),
                Err(e) => skipped
                    .entry(TaskKind::ActionError)
                    .or_default()
                    .push(Failure {
                        item_id: v.video_id.clone(),
                        message: e.to_string(),
                    }),
            }
        }
    }
    if config.tasks.contains(&TaskKind::OrderError) {
        let batch = build_order_dataset(
            test,
            test,
            config.clean_fraction,
            config.mistake_seed,
            config.max_attempts,
        );
        items.extend(
            batch
                .samples
                .iter()
                .map(|s| mistake_item(s, g, TaskKind::OrderError)),
        );
        skipped
            .entry(TaskKind::OrderError)
            .or_default()
            .extend(batch.failures.iter().map(|e| Failure {
                item_id: String::new(),
                message: e.to_string(),
            }));
    }

    let report = aggregate(test.len(), config, &items, skipped);
    Ok(BenchmarkOutput { report, items })
}

fn mistake_item(s: &MistakeSample, g: &ProcGraph, kind: TaskKind) -> EvalItem {
    let (prediction, gold) = match s.ground_truth {
        GroundTruth::Index(t) => (
            Answer::Index(detect_action_error(&s.sequence, g).unwrap_or(0)),
            Answer::Index(t),
        ),
        GroundTruth::Shuffled(shuffled) => (
            Answer::Flag(!detect_order_error(&s.sequence, g, None)),
            Answer::Flag(shuffled),
        ),
    };
    EvalItem {
        item_id: s.video_id.clone(),
        task_kind: kind,
        prediction: Some(prediction),
        gold,
        error: None,
    }
}

fn item(id: String, kind: TaskKind, gold: Answer, pred: Result<Answer, String>) -> EvalItem {
    let (prediction, error) = match pred {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e)),
    };
    EvalItem {
        item_id: id,
        task_kind: kind,
        prediction,
        gold,
        error,
    }
}

fn eval_video<R: Recognizer>(
    video: &VideoAnnotation,
    g: &ProcGraph,
    config: &EvalConfig,
    recognizer: &R,
) -> Vec<EvalItem> {
    let labels = video.label_sequence();
    let n = labels.len();
    let events = recognizer.recognize_video(video);
    let mut path = OnlinePath::new();
    // prefix_len[t]: nodes on the path after clips 0..t
    let mut prefix_len = Vec::with_capacity(n + 1);
    prefix_len.push(0);
    let mut ar = Vec::with_capacity(n);
    for e in &events {
        let r = path.advance(e, g, config.map_threshold);
        ar.push(match r {
            Ok(crate::online::Advance::Appended(m)) => Ok(m.label),
            Ok(crate::online::Advance::Unmapped { best_score }) => Err(format!(
                "unmapped {:?} (best score {best_score})",
                e.raw_text
            )),
            Err(err) => Err(err.to_string()),
        });
        prefix_len.push(path.len());
    }
    let prefix = |t: usize| OnlinePath::from_nodes(path.nodes()[..prefix_len[t]].iter().cloned());
    let id = |t: usize| format!("{}#{t}", video.video_id);
    let mut items = Vec::new();
    let tasks = &config.tasks;

    if tasks.contains(&TaskKind::Tr) {
        let pred = recognize_task(&path, g, config.alpha)
            .map_err(|e| e.to_string())
            .and_then(|s| {
                s.first()
                    .map(|b| Answer::Label(b.task.clone()))
                    .ok_or_else(|| "graph has no tasks".into())
            });
        items.push(item(
            video.video_id.clone(),
            TaskKind::Tr,
            Answer::Label(video.task.clone()),
            pred,
        ));
    }
    if tasks.contains(&TaskKind::Ar) {
        for (t, r) in ar.into_iter().enumerate() {
            items.push(item(
                id(t),
                TaskKind::Ar,
                Answer::Label(labels[t].clone()),
                r.map(Answer::Label),
            ));
        }
    }
    if tasks.contains(&TaskKind::Ap) {
        for (t, gold) in labels.iter().enumerate().skip(1) {
            let pred = predict_next_action(&prefix(t), g, None, config.alpha)
                .map(Answer::Label)
                .map_err(|e| e.to_string());
            items.push(item(id(t), TaskKind::Ap, Answer::Label(gold.clone()), pred));
        }
    }
    for (kind, task) in [
        (TaskKind::Pp, None),
        (TaskKind::PpPlus, Some(video.task.as_str())),
    ] {
        if !tasks.contains(&kind) {
            continue;
        }
        // at least two steps left to plan
        for t in 1..n.saturating_sub(1) {
            let pred = predict_plan(
                &prefix(t),
                g,
                task,
                config.horizon,
                config.alpha,
                config.strategy,
            )
            .map(|p| Answer::Labels(p.actions))
            .map_err(|e| e.to_string());
            items.push(item(
                id(t),
                kind,
                Answer::Labels(labels[t..].to_vec()),
                pred,
            ));
        }
    }
    items
}

fn aggregate(
    n_videos: usize,
    config: &EvalConfig,
    items: &[EvalItem],
    mut skipped: BTreeMap<TaskKind, Vec<Failure>>,
) -> EvalReport {
    let mut kinds = BTreeMap::new();
    for &kind in &config.tasks {
        let mut n = 0;
        let mut correct = 0;
        let mut per_position = 0.0;
        let mut failures = Vec::new();
        for it in items.iter().filter(|i| i.task_kind == kind) {
            n += 1;
            let Some(pred) = &it.prediction else {
                failures.push(Failure {
                    item_id: it.item_id.clone(),
                    message: it.error.clone().unwrap_or_default(),
                });
                continue;
            };
            match (pred, &it.gold) {
                (Answer::Labels(p), Answer::Labels(g)) => {
                    let s = score_plan(p, g, config.horizon);
                    correct += usize::from(s.exact_prefix);
                    per_position += s.per_position;
                }
                (p, g) => correct += usize::from(p == g),
            }
        }
        let rate = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        let is_plan = matches!(kind, TaskKind::Pp | TaskKind::PpPlus);
        kinds.insert(
            kind,
            KindReport {
                accuracy: rate(correct as f64),
                n_items: n,
                n_correct: correct,
                exact_prefix: is_plan.then(|| rate(correct as f64)),
                per_position: is_plan.then(|| rate(per_position)),
                failures,
                skipped: skipped.remove(&kind).unwrap_or_default(),
            },
        );
    }
    EvalReport {
        config: config.clone(),
        n_videos,
        kinds,
    }
}

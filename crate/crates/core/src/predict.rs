//! Graph-conditioned predictors over an [`OnlinePath`].
//!
//! These are deterministic, graph-only baselines: task recognition by path
//! likelihood, next-action argmax, and plan search (greedy or beam). All
//! ties resolve lexicographically so outputs are reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, ProcGraph};
use crate::online::OnlinePath;

/// Laplace smoothing used when none is configured.
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("path is empty")]
    EmptyPath,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: String,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<String>,
    /// The last planned action is one where procedures usually end.
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStrategy {
    Greedy,
    Beam(usize),
}

impl PlanStrategy {
    /// Width 1 (or 0) means greedy.
    pub fn from_width(width: usize) -> Self {
        if width <= 1 {
            Self::Greedy
        } else {
            Self::Beam(width)
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), PredictError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(GraphError::InvalidAlpha(alpha).into())
    }
}

fn ratio_ln(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn last_node<'p>(path: &'p OnlinePath, g: &ProcGraph) -> Result<&'p str, PredictError> {
    let last = path.last().ok_or(PredictError::EmptyPath)?;
    if !g.contains(last) {
        return Err(GraphError::UnknownNode(last.to_string()).into());
    }
    Ok(last)
}

/// Scores every task by the smoothed likelihood of the path under that
/// task's start and transition counts, best first.
///
/// Each factor is `(count + alpha) / (row_total + alpha * |nodes|)`, so with
/// `alpha > 0` every score is finite even for labels the task never used.
pub fn recognize_task(
    path: &OnlinePath,
    g: &ProcGraph,
    alpha: f64,
) -> Result<Vec<TaskScore>, PredictError> {
    check_alpha(alpha)?;
    let nodes = path.nodes();
    if nodes.is_empty() {
        return Err(PredictError::EmptyPath);
    }
    if let Some(bad) = nodes.iter().find(|n| !g.contains(n)) {
        return Err(GraphError::UnknownNode(bad.clone()).into());
    }
    let smooth_mass = alpha * g.nodes().len() as f64;
    let mut scores: Vec<TaskScore> = g
        .tasks()
        .map(|task| {
            let t = Some(task);
            let starts: u64 = g.first_counts().get(task).map_or(0, |c| c.values().sum());
            let mut ll = ratio_ln(
                g.first_count(&nodes[0], t) as f64 + alpha,
                starts as f64 + smooth_mass,
            );
            for w in nodes.windows(2) {
                let row: u64 = g.successors(&w[0], t).iter().map(|(_, c)| c).sum();
                ll += ratio_ln(
                    g.edge_count(&w[0], &w[1], t) as f64 + alpha,
                    row as f64 + smooth_mass,
                );
            }
            TaskScore {
                task: task.to_string(),
                log_likelihood: ll,
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.log_likelihood
            .total_cmp(&a.log_likelihood)
            .then_with(|| a.task.cmp(&b.task))
    });
    Ok(scores)
}

/// Most likely successor of the path's last node.
pub fn predict_next_action(
    path: &OnlinePath,
    g: &ProcGraph,
    task: Option<&str>,
    alpha: f64,
) -> Result<String, PredictError> {
    let last = last_node(path, g)?;
    next_from(g, last, task, alpha)
}

fn next_from(
    g: &ProcGraph,
    v: &str,
    task: Option<&str>,
    alpha: f64,
) -> Result<String, PredictError> {
    let dist = g.out_distribution(v, task, alpha)?;
    // BTreeMap iterates lexicographically; strict `>` keeps the first max
    let mut best: Option<(&String, f64)> = None;
    for (label, p) in &dist {
        if best.is_none_or(|(_, bp)| *p > bp) {
            best = Some((label, *p));
        }
    }
    best.map(|(l, _)| l.clone())
        .ok_or_else(|| GraphError::NoSuccessors(v.to_string()).into())
}

/// Predicts up to `horizon` remaining actions. Passing `task` restricts the
/// plan to that task's labels and counts.
///
/// After the first step, a plan stops early at a node that
/// [`ProcGraph::is_terminal`] reports as a usual end point.
pub fn predict_plan(
    path: &OnlinePath,
    g: &ProcGraph,
    task: Option<&str>,
    horizon: usize,
    alpha: f64,
    strategy: PlanStrategy,
) -> Result<Plan, PredictError> {
    check_alpha(alpha)?;
    let last = last_node(path, g)?;
    if horizon == 0 {
        return Ok(Plan {
            actions: Vec::new(),
            terminated: false,
        });
    }
    let actions = match strategy {
        PlanStrategy::Greedy => greedy(g, last, task, horizon, alpha)?,
        PlanStrategy::Beam(width) => beam(g, last, task, horizon, alpha, width.max(1))?,
    };
    let terminated = actions.last().is_some_and(|a| g.is_terminal(a, task));
    Ok(Plan {
        actions,
        terminated,
    })
}

fn greedy(
    g: &ProcGraph,
    start: &str,
    task: Option<&str>,
    horizon: usize,
    alpha: f64,
) -> Result<Vec<String>, PredictError> {
    let mut actions: Vec<String> = Vec::with_capacity(horizon);
    let mut cur = start.to_string();
    for step in 0..horizon {
        if step > 0 && g.is_terminal(&cur, task) {
            break;
        }
        match next_from(g, &cur, task, alpha) {
            Ok(next) => {
                actions.push(next.clone());
                cur = next;
            }
            Err(PredictError::Graph(GraphError::NoSuccessors(_))) if step > 0 => break,
            Err(e) => return Err(e),
        }
    }
    Ok(actions)
}

#[derive(Debug, Clone)]
struct Hypothesis {
    actions: Vec<String>,
    score: f64,
    done: bool,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.actions.cmp(&b.actions))
}

/// Width-limited search maximizing the summed log transition probability.
/// Finished hypotheses stay in the beam and compete with active ones.
fn beam(
    g: &ProcGraph,
    start: &str,
    task: Option<&str>,
    horizon: usize,
    alpha: f64,
    width: usize,
) -> Result<Vec<String>, PredictError> {
    let expand =
        |h: &Hypothesis, from: &str, out: &mut Vec<Hypothesis>| -> Result<(), GraphError> {
            let dist = g.out_distribution(from, task, alpha)?;
            for (label, p) in dist {
                let mut actions = h.actions.clone();
                actions.push(label);
                let done = actions.len() >= horizon || g.is_terminal(actions.last().unwrap(), task);
                out.push(Hypothesis {
                    actions,
                    score: h.score + p.ln(),
                    done,
                });
            }
            Ok(())
        };

    let root = Hypothesis {
        actions: Vec::new(),
        score: 0.0,
        done: false,
    };
    let mut frontier = Vec::new();
    expand(&root, start, &mut frontier)?;
    frontier.sort_by(rank);
    frontier.truncate(width);

    while frontier.iter().any(|h| !h.done) {
        let mut pool = Vec::with_capacity(frontier.len() * 4);
        for mut h in frontier {
            if h.done {
                pool.push(h);
                continue;
            }
            let from = h
                .actions
                .last()
                .cloned()
                .expect("expanded hypotheses are non-empty");
            match expand(&h, &from, &mut pool) {
                Ok(()) => {}
                Err(GraphError::NoSuccessors(_)) => {
                    h.done = true;
                    pool.push(h);
                }
                Err(e) => return Err(e.into()),
            }
        }
        pool.sort_by(rank);
        pool.truncate(width);
        frontier = pool;
    }
    Ok(frontier
        .into_iter()
        .next()
        .map(|h| h.actions)
        .unwrap_or_default())
}

/// Orders recognizer candidates by how likely each is to follow the path's
/// last node; with an empty path the order is lexicographic.
pub fn rerank_with_context(
    candidates: &[String],
    path: &OnlinePath,
    g: &ProcGraph,
    alpha: f64,
) -> Result<Vec<String>, PredictError> {
    if let Some(bad) = candidates.iter().find(|c| !g.contains(c)) {
        return Err(GraphError::UnknownNode(bad.clone()).into());
    }
    let dist = match path.last() {
        None => Default::default(),
        Some(last) => match g.out_distribution(last, None, alpha) {
            Ok(d) => d,
            Err(GraphError::NoSuccessors(_)) => Default::default(),
            Err(e) => return Err(e.into()),
        },
    };
    let prob = |c: &String| dist.get(c).copied().unwrap_or(0.0);
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| prob(b).total_cmp(&prob(a)).then_with(|| a.cmp(b)));
    ranked.dedup();
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Split, VideoAnnotation};
    use crate::graph::build_graph;

    fn graph(videos: &[(&str, &[&str])]) -> ProcGraph {
        let videos = videos
            .iter()
            .enumerate()
            .map(|(i, (t, l))| VideoAnnotation::from_labels(&format!("v{i}"), t, l))
            .collect();
        build_graph(&Corpus::new(videos, Split::Train).unwrap()).unwrap()
    }

    fn path(nodes: &[&str]) -> OnlinePath {
        OnlinePath::from_nodes(nodes.iter().copied())
    }

    fn branching() -> ProcGraph {
        let mut v: Vec<(&str, &[&str])> = vec![("t", &["a", "b", "c"]); 3];
        v.push(("t", &["a", "b", "d"]));
        graph(&v)
    }

    #[test]
    fn next_action_argmax() {
        let g = branching();
        assert_eq!(
            predict_next_action(&path(&["a", "b"]), &g, None, 1.0).unwrap(),
            "c"
        );
        assert_eq!(
            predict_next_action(&path(&["a"]), &g, None, 0.0).unwrap(),
            "b"
        );
    }

    #[test]
    fn next_action_tie_is_lexicographic() {
        let g = graph(&[
            ("t", &["b", "d"]),
            ("t", &["b", "d"]),
            ("t", &["b", "c"]),
            ("t", &["b", "c"]),
        ]);
        assert_eq!(
            predict_next_action(&path(&["b"]), &g, None, 0.0).unwrap(),
            "c"
        );
    }

    #[test]
    fn next_action_errors() {
        let g = graph(&[("t", &["a", "b"])]);
        assert!(matches!(
            predict_next_action(&OnlinePath::new(), &g, None, 1.0),
            Err(PredictError::EmptyPath)
        ));
        assert!(matches!(
            predict_next_action(&path(&["b"]), &g, Some("t"), 0.0),
            Err(PredictError::Graph(GraphError::NoSuccessors(_)))
        ));
        assert!(matches!(
            predict_next_action(&path(&["q"]), &g, None, 1.0),
            Err(PredictError::Graph(GraphError::UnknownNode(_)))
        ));
    }

    #[test]
    fn chain_plan_terminates() {
        let g = graph(&[("t", &["a", "b", "c"] as &[&str]); 4]);
        let plan = predict_plan(&path(&["a"]), &g, None, 3, 1.0, PlanStrategy::Greedy).unwrap();
        assert_eq!(plan.actions, ["b", "c"]);
        assert!(plan.terminated);
        let beam = predict_plan(&path(&["a"]), &g, None, 3, 1.0, PlanStrategy::Beam(4)).unwrap();
        assert_eq!(beam, plan);
    }

    #[test]
    fn horizon_one_matches_next_action() {
        let g = branching();
        for p in [path(&["a"]), path(&["a", "b"])] {
            let plan = predict_plan(&p, &g, None, 1, 1.0, PlanStrategy::Greedy).unwrap();
            assert_eq!(
                plan.actions,
                [predict_next_action(&p, &g, None, 1.0).unwrap()]
            );
        }
        let empty = predict_plan(&path(&["a"]), &g, None, 0, 1.0, PlanStrategy::Greedy).unwrap();
        assert!(empty.actions.is_empty());
    }

    #[test]
    fn plan_with_task_stays_in_task() {
        let g = graph(&[
            ("x", &["a", "b", "c"]),
            ("y", &["a", "d", "e"]),
            ("y", &["a", "d", "e"]),
        ]);
        let free = predict_plan(&path(&["a"]), &g, None, 3, 1.0, PlanStrategy::Greedy).unwrap();
        assert_eq!(free.actions, ["d", "e"]);
        let known =
            predict_plan(&path(&["a"]), &g, Some("x"), 3, 1.0, PlanStrategy::Greedy).unwrap();
        assert_eq!(known.actions, ["b", "c"]);
        let labels = g.task_labels("x").unwrap();
        assert!(known.actions.iter().all(|a| labels.contains(a)));
    }

    #[test]
    fn task_recognition_disjoint_vocabularies() {
        let g = graph(&[("alpha", &["a", "b", "c"]), ("beta", &["x", "y", "z"])]);
        let r = recognize_task(&path(&["x", "y"]), &g, 1.0).unwrap();
        assert_eq!(r[0].task, "beta");
        assert!(r.iter().all(|s| s.log_likelihood.is_finite()));
        let r = recognize_task(&path(&["a"]), &g, 0.0).unwrap();
        assert_eq!(r[0].task, "alpha");
        assert_eq!(r[1].log_likelihood, f64::NEG_INFINITY);
    }

    #[test]
    fn task_recognition_single_task() {
        let g = graph(&[("only", &["a", "b"]), ("only", &["c"])]);
        for p in [path(&["a"]), path(&["c", "a", "b"]), path(&["b", "b"])] {
            assert_eq!(recognize_task(&p, &g, 1.0).unwrap()[0].task, "only");
        }
        assert!(matches!(
            recognize_task(&OnlinePath::new(), &g, 1.0),
            Err(PredictError::EmptyPath)
        ));
    }

    #[test]
    fn task_recognition_value() {
        // start: (1+1)/(1+4); a->b: (1+1)/(1+4)
        let g = graph(&[("t", &["a", "b"]), ("u", &["c", "d"])]);
        let r = recognize_task(&path(&["a", "b"]), &g, 1.0).unwrap();
        assert_eq!(r[0].task, "t");
        assert!((r[0].log_likelihood - 2.0 * (2.0f64 / 5.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn rerank_examples() {
        let g = branching();
        let cands = vec!["d".to_string(), "c".to_string()];
        assert_eq!(
            rerank_with_context(&cands, &path(&["b"]), &g, 1.0).unwrap(),
            ["c", "d"]
        );
        assert_eq!(
            rerank_with_context(&cands, &OnlinePath::new(), &g, 1.0).unwrap(),
            ["c", "d"]
        );
        let one = vec!["a".to_string()];
        assert_eq!(
            rerank_with_context(&one, &path(&["b"]), &g, 1.0).unwrap(),
            ["a"]
        );
        assert!(rerank_with_context(&["q".to_string()], &path(&["b"]), &g, 1.0).is_err());
    }

    #[test]
    fn beam_prefers_higher_joint_probability() {
        // greedy takes a->b (4/7) then splits evenly; beam finds a->c->g (3/7)
        let mut v: Vec<(&str, &[&str])> = Vec::new();
        v.extend([("t", &["a", "b", "e"] as &[&str]); 2]);
        v.extend([("t", &["a", "b", "f"] as &[&str]); 2]);
        v.extend([("t", &["a", "c", "g"] as &[&str]); 3]);
        let g = graph(&v);
        let greedy = predict_plan(&path(&["a"]), &g, None, 2, 0.0, PlanStrategy::Greedy).unwrap();
        assert_eq!(greedy.actions, ["b", "e"]);
        let beam = predict_plan(&path(&["a"]), &g, None, 2, 0.0, PlanStrategy::Beam(8)).unwrap();
        assert_eq!(beam.actions, ["c", "g"]);
        assert!(beam.terminated);
    }
}

//! Seeded synthetic corpora sampled from per-task first-order Markov chains.
//!
//! The procedural graph records exactly first-order transitions, so a corpus
//! drawn from known chains gives closed-form targets for the predictors
//! (see [`bayes_optimal_next_accuracy`]).

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionClip, Corpus, CorpusError, Split, VideoAnnotation};
use crate::seed::rng_for;
use crate::textmap::normalize;

const WEIGHT_EPS: f64 = 1e-9;

/// One task's step process: start distribution, row-stochastic transitions
/// and per-state stopping probabilities. A row that sums to zero marks a
/// state with no successors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub task: String,
    pub states: Vec<String>,
    pub start: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
}

impl MarkovChain {
    /// `states[0] -> states[1] -> ... -> states[n-1]`, always starting at the
    /// first state and stopping at the last.
    pub fn deterministic(task: &str, states: &[&str]) -> Self {
        let n = states.len();
        let mut transitions = vec![vec![0.0; n]; n];
        for (i, row) in transitions.iter_mut().enumerate().take(n.saturating_sub(1)) {
            row[i + 1] = 1.0;
        }
        let mut start = vec![0.0; n];
        let mut terminal = vec![0.0; n];
        if n > 0 {
            start[0] = 1.0;
            terminal[n - 1] = 1.0;
        }
        Self {
            task: task.to_string(),
            states: states.iter().map(|s| s.to_string()).collect(),
            start,
            transitions,
            terminal,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn has_successors(&self, s: usize) -> bool {
        self.transitions[s].iter().sum::<f64>() > WEIGHT_EPS
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Spec(format!("chain {:?}: {m}", self.task)));
        let n = self.states.len();
        if n == 0 {
            return bad("empty state vocabulary".into());
        }
        if self.states.iter().any(|s| normalize(s).is_empty()) {
            return bad("state label empty after normalization".into());
        }
        if self.start.len() != n || self.terminal.len() != n || self.transitions.len() != n {
            return bad("parameter dimensions do not match state count".into());
        }
        let is_prob = |p: &f64| p.is_finite() && (0.0..=1.0).contains(p);
        if !self.start.iter().all(is_prob) || (self.start.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("start distribution must sum to 1".into());
        }
        if !self.terminal.iter().all(is_prob) {
            return bad("terminal probabilities must lie in [0, 1]".into());
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != n || !row.iter().all(is_prob) {
                return bad(format!("transition row {i} malformed"));
            }
            let sum: f64 = row.iter().sum();
            if sum > WEIGHT_EPS && (sum - 1.0).abs() > 1e-6 {
                return bad(format!("transition row {i} sums to {sum}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingModel {
    /// Every task is a fixed walk through all of its actions in order.
    DeterministicChain,
    /// Each state gets `out_degree` random successors (never itself) with
    /// random weights; walks stop at each state with `terminal_prob` once the
    /// minimum length is reached.
    Random {
        out_degree: usize,
        terminal_prob: f64,
    },
    /// Caller-supplied chains, one per task.
    Explicit(Vec<MarkovChain>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_tasks: usize,
    pub actions_per_task: usize,
    pub n_videos: usize,
    /// Inclusive walk length bounds.
    pub length_range: (usize, usize),
    pub branching_model: BranchingModel,
    /// When true, every task draws labels from one shared `step k` vocabulary.
    #[serde(default)]
    pub shared_vocabulary: bool,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_prefix() -> String {
    "syn".to_string()
}

impl GeneratorSpec {
    pub fn new(
        n_tasks: usize,
        actions_per_task: usize,
        n_videos: usize,
        branching_model: BranchingModel,
        seed: u64,
    ) -> Self {
        Self {
            n_tasks,
            actions_per_task,
            n_videos,
            length_range: (1, actions_per_task.max(1)),
            branching_model,
            shared_vocabulary: false,
            seed,
            id_prefix: default_prefix(),
        }
    }

    pub fn with_length_range(mut self, min: usize, max: usize) -> Self {
        self.length_range = (min, max);
        self
    }

    pub fn with_shared_vocabulary(mut self, shared: bool) -> Self {
        self.shared_vocabulary = shared;
        self
    }

    pub fn with_id_prefix(mut self, prefix: &str) -> Self {
        self.id_prefix = prefix.to_string();
        self
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let (lo, hi) = self.length_range;
        if lo == 0 || hi < lo {
            return Err(CorpusError::Spec(format!(
                "length range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        if self.n_videos == 0 {
            return Err(CorpusError::Spec("n_videos must be positive".into()));
        }
        match &self.branching_model {
            BranchingModel::Explicit(chains) => {
                if chains.is_empty() {
                    return Err(CorpusError::Spec("no chains supplied".into()));
                }
                chains.iter().try_for_each(MarkovChain::validate)
            }
            BranchingModel::Random { terminal_prob, .. }
                if !(0.0..=1.0).contains(terminal_prob) =>
            {
                Err(CorpusError::Spec("terminal_prob outside [0, 1]".into()))
            }
            _ if self.n_tasks == 0 || self.actions_per_task == 0 => Err(CorpusError::Spec(
                "n_tasks and actions_per_task must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    fn state_labels(&self, task: usize) -> Vec<String> {
        (0..self.actions_per_task)
            .map(|j| {
                if self.shared_vocabulary {
                    format!("step {j}")
                } else {
                    format!("task {task} step {j}")
                }
            })
            .collect()
    }

    fn build_chains(&self) -> Vec<MarkovChain> {
        match &self.branching_model {
            BranchingModel::Explicit(chains) => chains
                .iter()
                .map(|c| MarkovChain {
                    task: normalize(&c.task),
                    states: c.states.iter().map(|s| normalize(s)).collect(),
                    ..c.clone()
                })
                .collect(),
            BranchingModel::DeterministicChain => (0..self.n_tasks)
                .map(|t| {
                    let labels = self.state_labels(t);
                    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                    MarkovChain::deterministic(&format!("task {t}"), &refs)
                })
                .collect(),
            BranchingModel::Random {
                out_degree,
                terminal_prob,
            } => (0..self.n_tasks)
                .map(|t| self.random_chain(t, *out_degree, *terminal_prob))
                .collect(),
        }
    }

    fn random_chain(&self, task: usize, out_degree: usize, terminal_prob: f64) -> MarkovChain {
        let mut rng = rng_for(self.seed, &[b"chain", &(task as u64).to_le_bytes()]);
        let n = self.actions_per_task;
        let degree = out_degree.min(n - 1);
        let start = normalized_weights((0..n).map(|_| rng.gen_range(0.05..1.0)).collect());
        let transitions = (0..n)
            .map(|s| {
                let mut row = vec![0.0; n];
                // pick among the n-1 other states, then shift past `s`
                for k in sample(&mut rng, n - 1, degree).into_vec() {
                    let j = if k >= s { k + 1 } else { k };
                    row[j] = rng.gen_range(0.05..1.0);
                }
                normalized_weights(row)
            })
            .collect();
        MarkovChain {
            task: format!("task {task}"),
            states: self.state_labels(task),
            start,
            transitions,
            terminal: vec![terminal_prob; n],
        }
    }
}

fn normalized_weights(mut w: Vec<f64>) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|x| *x /= sum);
    }
    w
}

/// A generated corpus together with the chains that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub chains: Vec<MarkovChain>,
    pub spec: GeneratorSpec,
}

struct Sampler<'a> {
    chain: &'a MarkovChain,
    start: WeightedIndex<f64>,
    rows: Vec<Option<WeightedIndex<f64>>>,
}

impl<'a> Sampler<'a> {
    fn new(chain: &'a MarkovChain) -> Self {
        let start = WeightedIndex::new(&chain.start).expect("validated start distribution");
        let rows = chain
            .transitions
            .iter()
            .map(|r| WeightedIndex::new(r).ok())
            .collect();
        Self { chain, start, rows }
    }

    fn walk<R: Rng>(&self, rng: &mut R, (min_len, max_len): (usize, usize)) -> Vec<usize> {
        let mut s = self.start.sample(rng);
        let mut walk = vec![s];
        while walk.len() < max_len {
            let Some(row) = self.rows[s]
                .as_ref()
                .filter(|_| self.chain.has_successors(s))
            else {
                break;
            };
            if walk.len() >= min_len && rng.gen::<f64>() < self.chain.terminal[s] {
                break;
            }
            s = row.sample(rng);
            walk.push(s);
        }
        walk
    }
}

/// Samples `spec.n_videos` walks. Video `i` belongs to task `i mod n_tasks`
/// and draws from its own RNG stream, so output is a pure function of the
/// spec.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let chains = spec.build_chains();
    let samplers: Vec<Sampler<'_>> = chains.iter().map(Sampler::new).collect();
    let width = spec.n_videos.to_string().len().max(5);
    let videos = (0..spec.n_videos)
        .map(|i| {
            let sampler = &samplers[i % samplers.len()];
            let mut rng = rng_for(spec.seed, &[b"video", &(i as u64).to_le_bytes()]);
            let walk = sampler.walk(&mut rng, spec.length_range);
            let mut t = 0.0;
            let clips = walk
                .into_iter()
                .map(|s| {
                    let dur = rng.gen_range(2..=6) as f64;
                    let clip = ActionClip::new(&sampler.chain.states[s], t, t + dur);
                    t += dur + rng.gen_range(0..=1) as f64;
                    clip
                })
                .collect();
            VideoAnnotation {
                video_id: format!("{}{:0width$}", spec.id_prefix, i),
                task: sampler.chain.task.clone(),
                clips,
            }
        })
        .collect();
    Ok(SyntheticCorpus {
        corpus: Corpus::new(videos, Split::Train)?,
        chains,
        spec: spec.clone(),
    })
}

/// Expected number of transitions leaving each state in one walk, for the
/// walk process used by [`generate_synthetic_corpus`].
pub fn expected_transitions(chain: &MarkovChain, (min_len, max_len): (usize, usize)) -> Vec<f64> {
    let n = chain.len();
    let mut out = vec![0.0; n];
    let mut dist = chain.start.clone();
    for len in 1..max_len {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if dist[s] == 0.0 || !chain.has_successors(s) {
                continue;
            }
            let cont = if len >= min_len {
                1.0 - chain.terminal[s]
            } else {
                1.0
            };
            let mass = dist[s] * cont;
            out[s] += mass;
            for (j, p) in chain.transitions[s].iter().enumerate() {
                next[j] += mass * p;
            }
        }
        dist = next;
    }
    out
}

/// Best achievable next-action accuracy for a predictor that sees only the
/// current label, over the transition mix produced by the generator.
///
/// Tasks are weighted by their share of videos; when vocabularies are shared
/// the successor distributions of a label are mixed across tasks first.
pub fn bayes_optimal_next_accuracy(synth: &SyntheticCorpus) -> f64 {
    let n_tasks = synth.chains.len();
    let mut mass: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for (t, chain) in synth.chains.iter().enumerate() {
        let videos = (0..synth.spec.n_videos)
            .filter(|i| i % n_tasks == t)
            .count() as f64;
        let visits = expected_transitions(chain, synth.spec.length_range);
        for (s, v) in visits.iter().enumerate() {
            for (j, p) in chain.transitions[s].iter().enumerate() {
                *mass
                    .entry(chain.states[s].as_str())
                    .or_default()
                    .entry(chain.states[j].as_str())
                    .or_default() += videos * v * p;
            }
        }
    }
    let total: f64 = mass.values().flat_map(|m| m.values()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let best: f64 = mass
        .values()
        .map(|m| m.values().cloned().fold(0.0, f64::max))
        .sum();
    best / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_stats, write_corpus};

    fn two_way_chain() -> MarkovChain {
        MarkovChain {
            task: "t".into(),
            states: vec!["a".into(), "b".into(), "c".into()],
            start: vec![1.0, 0.0, 0.0],
            transitions: vec![
                vec![0.0, 0.7, 0.3],
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            terminal: vec![0.0, 1.0, 1.0],
        }
    }

    #[test]
    fn deterministic_chain_gives_identical_videos() {
        let chain = MarkovChain::deterministic("t", &["a", "b", "c"]);
        let spec = GeneratorSpec::new(1, 3, 5, BranchingModel::Explicit(vec![chain]), 7)
            .with_length_range(1, 10);
        let synth = generate_synthetic_corpus(&spec).unwrap();
        assert_eq!(synth.corpus.len(), 5);
        for v in synth.corpus.videos() {
            assert_eq!(v.label_sequence(), ["a", "b", "c"]);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GeneratorSpec::new(
            3,
            5,
            40,
            BranchingModel::Random {
                out_degree: 2,
                terminal_prob: 0.3,
            },
            11,
        )
        .with_length_range(2, 8);
        let bytes = |s: &GeneratorSpec| {
            let mut out = Vec::new();
            write_corpus(&generate_synthetic_corpus(s).unwrap().corpus, &mut out).unwrap();
            out
        };
        assert_eq!(bytes(&spec), bytes(&spec));
        let mut other = spec.clone();
        other.seed = 12;
        assert_ne!(bytes(&spec), bytes(&other));
    }

    #[test]
    fn empirical_transition_frequency() {
        // oracle: count a->x transitions directly in the generated corpus
        let spec = GeneratorSpec::new(
            1,
            3,
            10_000,
            BranchingModel::Explicit(vec![two_way_chain()]),
            5,
        )
        .with_length_range(1, 5);
        let synth = generate_synthetic_corpus(&spec).unwrap();
        let (mut to_b, mut to_c) = (0usize, 0usize);
        for v in synth.corpus.videos() {
            let labels = v.label_sequence();
            for w in labels.windows(2) {
                match (w[0].as_str(), w[1].as_str()) {
                    ("a", "b") => to_b += 1,
                    ("a", "c") => to_c += 1,
                    _ => {}
                }
            }
        }
        let n = (to_b + to_c) as f64;
        assert!((to_b as f64 / n - 0.7).abs() < 0.02);
        assert!((to_c as f64 / n - 0.3).abs() < 0.02);
    }

    #[test]
    fn spec_errors() {
        let base = GeneratorSpec::new(1, 3, 5, BranchingModel::DeterministicChain, 1);
        assert!(generate_synthetic_corpus(&base.clone().with_length_range(0, 3)).is_err());
        assert!(generate_synthetic_corpus(&GeneratorSpec {
            actions_per_task: 0,
            ..base.clone()
        })
        .is_err());
        assert!(generate_synthetic_corpus(&GeneratorSpec {
            n_videos: 0,
            ..base.clone()
        })
        .is_err());
        let empty = MarkovChain::deterministic("t", &[]);
        assert!(generate_synthetic_corpus(&GeneratorSpec {
            branching_model: BranchingModel::Explicit(vec![empty]),
            ..base
        })
        .is_err());
    }

    #[test]
    fn stats_match_spec_for_deterministic_chains() {
        let spec = GeneratorSpec::new(4, 6, 40, BranchingModel::DeterministicChain, 2)
            .with_length_range(1, 6);
        let stats = compute_stats(&generate_synthetic_corpus(&spec).unwrap().corpus);
        assert_eq!(stats.n_videos, 40);
        assert_eq!(stats.n_tasks_unique, 4);
        assert_eq!(stats.n_actions_unique, 24);
        assert_eq!(stats.n_clips, 240);
    }

    #[test]
    fn random_chains_respect_out_degree() {
        let spec = GeneratorSpec::new(
            2,
            6,
            10,
            BranchingModel::Random {
                out_degree: 2,
                terminal_prob: 0.2,
            },
            3,
        );
        let synth = generate_synthetic_corpus(&spec).unwrap();
        for c in &synth.chains {
            for (s, row) in c.transitions.iter().enumerate() {
                assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 2);
                assert_eq!(row[s], 0.0);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expected_transitions_of_fixed_chain() {
        let chain = MarkovChain::deterministic("t", &["a", "b", "c"]);
        assert_eq!(expected_transitions(&chain, (1, 10)), vec![1.0, 1.0, 0.0]);
        assert_eq!(expected_transitions(&chain, (1, 2)), vec![1.0, 0.0, 0.0]);
        let two = two_way_chain();
        let e = expected_transitions(&two, (1, 5));
        assert_eq!(e, vec![1.0, 0.0, 0.0]);
        let synth = generate_synthetic_corpus(
            &GeneratorSpec::new(1, 3, 10, BranchingModel::Explicit(vec![two]), 1)
                .with_length_range(1, 5),
        )
        .unwrap();
        assert!((bayes_optimal_next_accuracy(&synth) - 0.7).abs() < 1e-12);
    }
}

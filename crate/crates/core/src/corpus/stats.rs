use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Corpus;

/// Dataset-level counts. Unique counts are over normalized labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_videos: usize,
    pub n_tasks_unique: usize,
    pub n_actions_unique: usize,
    pub n_clips: usize,
    pub per_task_videos: BTreeMap<String, usize>,
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut per_task_videos = BTreeMap::new();
    let mut actions = BTreeSet::new();
    let mut n_clips = 0;
    for v in corpus.videos() {
        *per_task_videos.entry(v.task.clone()).or_insert(0) += 1;
        n_clips += v.clips.len();
        actions.extend(v.labels());
    }
    CorpusStats {
        n_videos: corpus.len(),
        n_tasks_unique: per_task_videos.len(),
        n_actions_unique: actions.len(),
        n_clips,
        per_task_videos,
    }
}

impl CorpusStats {
    /// Machine-readable `key=value` lines.
    pub fn to_lines(&self) -> String {
        let mut s = format!(
            "n_videos={}\nn_tasks_unique={}\nn_actions_unique={}\nn_clips={}\n",
            self.n_videos, self.n_tasks_unique, self.n_actions_unique, self.n_clips
        );
        for (task, n) in &self.per_task_videos {
            s.push_str(&format!("task.{task}={n}\n"));
        }
        s
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>10}", "#Videos", self.n_videos)?;
        writeln!(f, "{:<20} {:>10}", "#Tasks (unique)", self.n_tasks_unique)?;
        writeln!(
            f,
            "{:<20} {:>10}",
            "#Actions (unique)", self.n_actions_unique
        )?;
        writeln!(f, "{:<20} {:>10}", "#Clips", self.n_clips)?;
        if !self.per_task_videos.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<40} {:>10}", "Task", "#Videos")?;
            for (task, n) in &self.per_task_videos {
                writeln!(f, "{task:<40} {n:>10}")?;
            }
        }
        Ok(())
    }
}

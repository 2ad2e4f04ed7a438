use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use procgraph::corpus::{
    bayes_optimal_next_accuracy, compute_stats, generate_synthetic_corpus, load_corpus,
    save_corpus, train_test_split, BranchingModel, Corpus, GeneratorSpec, MarkovChain, Split,
};
use procgraph::dialog::{self, gen_dialog_corpus};
use procgraph::eval::{run_benchmark, EvalConfig, EvalReport};
use procgraph::graph::{
    build_graph, build_graph_from_retrieved, load_graph, save_graph, GraphSource, ProcGraph,
};
use procgraph::mistakes::{
    self, build_action_dataset, build_order_dataset, detect_samples, detection_accuracy,
    GroundTruth,
};
use procgraph::online::{parse_stream, Advance, OnlinePath, RecognizerEvent};
use procgraph::predict::{predict_next_action, predict_plan, recognize_task, PlanStrategy};
use procgraph::recognizer::{MockRecognizer, Recognizer, RecognizerConfig};
use procgraph::retrieval::{
    embed_corpus_clips, embed_corpus_videos, load_embeddings, load_queries, run_queries,
    EmbeddingStore, HashingEmbedder, Query,
};
use procgraph::textmap::normalize;
use serde::Serialize;

use crate::error::CliError;
use crate::{Branching, Command, Format, Granularity, MistakeArg, PredictOp, RecognizerArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats {
            annotations,
            format,
        } => stats(&annotations.annotations, format),
        Command::BuildGraph {
            annotations,
            out,
            source,
            ids,
        } => build(&annotations.annotations, &out, source, ids.as_deref()),
        Command::ExportDot { graph, task, out } => {
            export_dot(&graph.graph, task.as_deref(), out.as_deref())
        }
        Command::Simulate {
            graph,
            stream,
            annotations,
            recognizer,
            map_threshold,
            format,
            out,
        } => simulate(
            &graph.graph,
            stream.as_deref(),
            annotations.as_deref(),
            &recognizer,
            map_threshold,
            format,
            out.as_deref(),
        ),
        Command::Predict {
            graph,
            path,
            op,
            task,
            horizon,
            beam,
            alpha,
            map_threshold,
            format,
        } => {
            let g = load_graph(&graph.graph)?;
            let path = read_path(&path, Some(&g), map_threshold)?;
            predict(&g, &path, op, task.as_deref(), horizon, beam, alpha, format)
        }
        Command::GenDialog {
            annotations,
            graph,
            kind,
            seed,
            negatives_per_clip,
            question,
            out,
        } => {
            let corpus = load_corpus(&annotations.annotations, Split::Train)?;
            let g = load_graph(&graph.graph)?;
            let batch = gen_dialog_corpus(&corpus, &g, kind, &question, negatives_per_clip, seed);
            for e in &batch.errors {
                eprintln!("warning: {e}");
            }
            if !batch.skipped.is_empty() {
                eprintln!(
                    "warning: {} clips had no negative candidates",
                    batch.skipped.len()
                );
            }
            let mut w = create(out.as_deref())?;
            dialog::write_samples(&batch.samples, &mut w)?;
            w.flush()?;
            summary(
                out.is_some(),
                &format!(
                    "samples={} videos_failed={} seed={seed}",
                    batch.samples.len(),
                    batch.errors.len()
                ),
            );
            Ok(())
        }
        Command::GenMistakes {
            annotations,
            graph,
            kind,
            seed,
            clean_fraction,
            max_attempts,
            reference,
            out,
        } => {
            if !(0.0..=1.0).contains(&clean_fraction) {
                return Err(CliError::Invalid(format!(
                    "--clean-fraction {clean_fraction} outside [0, 1]"
                )));
            }
            let corpus = load_corpus(&annotations.annotations, Split::Test)?;
            let g = load_graph(&graph.graph)?;
            let batch = match kind {
                MistakeArg::Action => build_action_dataset(&corpus, &g, seed),
                MistakeArg::Order => {
                    let reference = match reference {
                        Some(p) => load_corpus(p, Split::Train)?,
                        None => corpus.clone(),
                    };
                    build_order_dataset(&corpus, &reference, clean_fraction, seed, max_attempts)
                }
            };
            for e in &batch.failures {
                eprintln!("warning: {e}");
            }
            let mut w = create(out.as_deref())?;
            mistakes::write_samples(&batch.samples, &mut w)?;
            w.flush()?;
            summary(
                out.is_some(),
                &format!(
                    "samples={} skipped={} seed={seed}",
                    batch.samples.len(),
                    batch.failures.len()
                ),
            );
            Ok(())
        }
        Command::Detect {
            graph,
            samples,
            kind,
            use_task,
            out,
            format,
        } => detect(
            &graph.graph,
            &samples,
            kind,
            use_task,
            out.as_deref(),
            format,
        ),
        Command::Evaluate {
            graph,
            annotations,
            tasks,
            recognizer,
            alpha,
            horizon,
            beam,
            map_threshold,
            clean_fraction,
            out,
            items_out,
            format,
        } => {
            let g = load_graph(&graph.graph)?;
            let test = load_corpus(&annotations.annotations, Split::Test)?;
            check_alpha(alpha)?;
            let config = EvalConfig {
                tasks: tasks.into_iter().collect(),
                alpha,
                horizon,
                strategy: PlanStrategy::from_width(beam),
                map_threshold,
                recognizer: recognizer_config(&recognizer),
                mistake_seed: recognizer.seed,
                clean_fraction,
                ..Default::default()
            };
            let result = run_benchmark(&test, &g, &config)?;
            if let Some(p) = &items_out {
                let mut w = create(Some(p))?;
                write_jsonl(&result.items, &mut w)?;
                w.flush()?;
            }
            let mut w = create(out.as_deref())?;
            w.write_all(result.report.to_json().as_bytes())?;
            w.flush()?;
            if out.is_some() {
                print!("{}", report_table(&result.report, format));
            }
            Ok(())
        }
        Command::Retrieve {
            embeddings,
            annotations,
            granularity,
            queries,
            k,
            embed_dim,
            out,
            format,
        } => retrieve(
            embeddings.as_deref(),
            annotations.as_deref(),
            granularity,
            queries.as_deref(),
            k,
            embed_dim,
            out.as_deref(),
            format,
        ),
        Command::GenSynthetic {
            spec,
            tasks,
            actions,
            videos,
            min_len,
            max_len,
            branching,
            out_degree,
            terminal_prob,
            shared_vocab,
            seed,
            test_fraction,
            out,
            test_out,
            chains_out,
        } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?
                }
                None => {
                    let model = match branching {
                        Branching::Chain => BranchingModel::DeterministicChain,
                        Branching::Random => BranchingModel::Random {
                            out_degree,
                            terminal_prob,
                        },
                    };
                    GeneratorSpec::new(tasks, actions, videos, model, seed)
                        .with_length_range(min_len.unwrap_or(1), max_len.unwrap_or(actions))
                        .with_shared_vocabulary(shared_vocab)
                }
            };
            gen_synthetic(
                &spec,
                test_fraction,
                &out,
                test_out.as_deref(),
                chains_out.as_deref(),
            )
        }
        Command::VerbalizePath {
            path,
            graph,
            map_threshold,
        } => {
            let g = graph.as_deref().map(load_graph).transpose()?;
            let p = read_path(&path, g.as_ref(), map_threshold)?;
            println!("{}", p.verbalize());
            Ok(())
        }
    }
}

fn create(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Run summaries go to stdout unless stdout already carries the data.
fn summary(data_in_file: bool, line: &str) {
    if data_in_file {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "--alpha must be finite and >= 0, got {alpha}"
        )))
    }
}

fn recognizer_config(a: &RecognizerArgs) -> RecognizerConfig {
    RecognizerConfig {
        noise_rate: a.noise,
        paraphrase_rate: a.paraphrase,
        confusion_scope: a.confusion_scope,
        seed: a.seed,
    }
}

fn stats(path: &Path, format: Format) -> Result<()> {
    let s = compute_stats(&load_corpus(path, Split::Train)?);
    match format {
        Format::Table => print!("{s}"),
        Format::Lines => print!("{}", s.to_lines()),
    }
    Ok(())
}

fn build(annotations: &Path, out: &Path, source: GraphSource, ids: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(annotations, Split::Train)?;
    let g = match ids {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::io(p, e))?;
            let ids: Vec<String> = BufReader::new(f)
                .lines()
                .collect::<io::Result<Vec<_>>>()
                .map_err(|e| CliError::io(p, e))?
                .into_iter()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            let unknown: Vec<&String> = ids.iter().filter(|id| corpus.get(id).is_none()).collect();
            if !unknown.is_empty() {
                return Err(CliError::Invalid(format!("unknown video ids: {unknown:?}")));
            }
            build_graph_from_retrieved(&corpus, ids.iter().map(String::as_str))?.with_source(source)
        }
        None => build_graph(&corpus)?.with_source(source),
    };
    save_graph(&g, out)?;
    println!(
        "nodes={} edges={} transitions={} tasks={}",
        g.nodes().len(),
        g.n_edges(),
        g.total_transitions(),
        g.tasks().count()
    );
    Ok(())
}

fn export_dot(graph: &Path, task: Option<&str>, out: Option<&Path>) -> Result<()> {
    let g = load_graph(graph)?;
    let g = match task {
        Some(t) => g.subgraph_for_task(&normalize(t))?,
        None => g,
    };
    let mut w = create(out)?;
    w.write_all(g.to_dot().as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads recognizer events (JSON lines) or plain step lines.
fn read_events(path: &Path) -> Result<Vec<RecognizerEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.iter().all(|l| l.trim_start().starts_with('{')) {
        return parse_stream(text.as_bytes()).map_err(Into::into);
    }
    if lines.iter().any(|l| l.trim_start().starts_with('{')) {
        return Err(CliError::Invalid(format!(
            "{}: mixes JSON events and plain steps",
            path.display()
        )));
    }
    Ok(lines
        .iter()
        .enumerate()
        .map(|(i, l)| RecognizerEvent {
            clip_index: i,
            raw_text: l.to_string(),
            timestamp_s: 0.0,
        })
        .collect())
}

fn read_path(path: &Path, g: Option<&ProcGraph>, threshold: f64) -> Result<OnlinePath> {
    let events = read_events(path)?;
    let Some(g) = g else {
        return Ok(OnlinePath::from_nodes(
            events.iter().map(|e| normalize(&e.raw_text)),
        ));
    };
    let mut p = OnlinePath::new();
    for (i, e) in events.iter().enumerate() {
        // stream files may skip clip indices; re-index in arrival order
        let e = RecognizerEvent {
            clip_index: i,
            ..e.clone()
        };
        if let Advance::Unmapped { best_score } = p.advance(&e, g, threshold)? {
            eprintln!(
                "warning: event {} {:?} matches no step (best score {best_score:.3})",
                i, e.raw_text
            );
        }
    }
    Ok(p)
}

#[derive(Serialize)]
struct StepRecord<'a> {
    video_id: Option<&'a str>,
    clip_index: usize,
    raw_text: &'a str,
    mapped: Option<String>,
    score: Option<f64>,
    novel_edge: bool,
    path: String,
}

fn simulate(
    graph: &Path,
    stream: Option<&Path>,
    annotations: Option<&Path>,
    rec: &RecognizerArgs,
    threshold: f64,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let g = load_graph(graph)?;
    let runs: Vec<(Option<String>, Vec<RecognizerEvent>)> = match (stream, annotations) {
        (Some(s), _) => vec![(None, read_events(s)?)],
        (None, Some(a)) => {
            let corpus = load_corpus(a, Split::Test)?;
            let r = MockRecognizer::from_corpus(recognizer_config(rec), &corpus)?;
            corpus
                .videos()
                .iter()
                .map(|v| (Some(v.video_id.clone()), r.recognize_video(v)))
                .collect()
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let mut w = create(out)?;
    for (video_id, events) in &runs {
        let mut p = OnlinePath::new();
        if format == Format::Table {
            if let Some(v) = video_id {
                writeln!(w, "== {v}")?;
            }
        }
        for (i, e) in events.iter().enumerate() {
            let e = RecognizerEvent {
                clip_index: i,
                ..e.clone()
            };
            let (mapped, score) = match p.advance(&e, &g, threshold)? {
                Advance::Appended(m) => (Some(m.label), Some(m.score)),
                Advance::Unmapped { .. } => (None, None),
            };
            let novel_edge =
                mapped.is_some() && p.novelty_flags(&g).last().copied().unwrap_or(false);
            let rec = StepRecord {
                video_id: video_id.as_deref(),
                clip_index: i,
                raw_text: &e.raw_text,
                mapped,
                score,
                novel_edge,
                path: p.verbalize(),
            };
            match format {
                Format::Lines => {
                    serde_json::to_writer(&mut w, &rec).map_err(|e| CliError::Io(e.to_string()))?;
                    writeln!(w)?;
                }
                Format::Table => writeln!(
                    w,
                    "{:>4}  {:<28} {:<28} {}{}",
                    rec.clip_index,
                    rec.raw_text,
                    rec.mapped.as_deref().unwrap_or("(unmapped)"),
                    if rec.novel_edge { "[novel] " } else { "" },
                    rec.path
                )?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict(
    g: &ProcGraph,
    path: &OnlinePath,
    op: PredictOp,
    task: Option<&str>,
    horizon: usize,
    beam: usize,
    alpha: f64,
    format: Format,
) -> Result<()> {
    check_alpha(alpha)?;
    let task = task.map(normalize);
    if let Some(t) = &task {
        if !g.has_task(t) {
            return Err(CliError::Invalid(format!("unknown task {t:?}")));
        }
    }
    let task = task.as_deref();
    let mut out = String::new();
    match op {
        PredictOp::Tr => {
            for (i, s) in recognize_task(path, g, alpha)?.iter().enumerate() {
                out += &match format {
                    Format::Lines => format!(
                        "rank={} task={} log_likelihood={}\n",
                        i + 1,
                        s.task,
                        s.log_likelihood
                    ),
                    Format::Table => {
                        format!("{:>4}  {:<32} {:>12.4}\n", i + 1, s.task, s.log_likelihood)
                    }
                };
            }
        }
        PredictOp::Ap => {
            let next = predict_next_action(path, g, task, alpha)?;
            out = match format {
                Format::Lines => format!("next={next}\n"),
                Format::Table => format!("next step: {next}\n"),
            };
        }
        PredictOp::Pp | PredictOp::PpPlus => {
            if op == PredictOp::PpPlus && task.is_none() {
                return Err(CliError::Invalid("pp+ needs --task".into()));
            }
            let plan = predict_plan(
                path,
                g,
                task,
                horizon,
                alpha,
                PlanStrategy::from_width(beam),
            )?;
            for (i, a) in plan.actions.iter().enumerate() {
                out += &match format {
                    Format::Lines => format!("step={} action={a}\n", i + 1),
                    Format::Table => format!("{:>4}  {a}\n", i + 1),
                };
            }
            out += &match format {
                Format::Lines => format!("terminated={}\n", plan.terminated),
                Format::Table if plan.terminated => {
                    "      (procedure usually ends here)\n".to_string()
                }
                Format::Table => String::new(),
            };
        }
    }
    print!("{out}");
    Ok(())
}

fn detect(
    graph: &Path,
    samples: &Path,
    kind: Option<MistakeArg>,
    use_task: bool,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let g = load_graph(graph)?;
    let f = File::open(samples).map_err(|e| CliError::io(samples, e))?;
    let samples = mistakes::parse_samples(BufReader::new(f))
        .map_err(|(line, msg)| CliError::Invalid(format!("line {line}: {msg}")))?;
    if let Some(kind) = kind {
        let expected = |gt: &GroundTruth| match kind {
            MistakeArg::Action => matches!(gt, GroundTruth::Index(_)),
            MistakeArg::Order => matches!(gt, GroundTruth::Shuffled(_)),
        };
        if let Some(s) = samples.iter().find(|s| !expected(&s.ground_truth)) {
            return Err(CliError::Invalid(format!(
                "sample {:?} is not a {kind:?} sample",
                s.video_id
            )));
        }
    }
    let detections = detect_samples(&samples, &g, use_task);
    let mut w = create(out)?;
    write_jsonl(&detections, &mut w)?;
    w.flush()?;
    let acc = detection_accuracy(&detections);
    let line = match format {
        Format::Lines => format!("n={} accuracy={acc}", detections.len()),
        Format::Table => format!(
            "{:<10} {:>8}\n{:<10} {:>8.4}",
            "n",
            detections.len(),
            "accuracy",
            acc
        ),
    };
    summary(out.is_some(), &line);
    Ok(())
}

fn report_table(r: &EvalReport, format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Table => {
            s += &format!(
                "{:<14} {:>8} {:>10} {:>13} {:>9}\n",
                "kind", "n_items", "accuracy", "per_position", "failures"
            );
            for (k, v) in &r.kinds {
                let pp = v
                    .per_position
                    .map_or("-".to_string(), |x| format!("{x:.4}"));
                s += &format!(
                    "{:<14} {:>8} {:>10.4} {:>13} {:>9}\n",
                    k.name(),
                    v.n_items,
                    v.accuracy,
                    pp,
                    v.failures.len()
                );
            }
        }
        Format::Lines => {
            for (k, v) in &r.kinds {
                s += &format!("{k}.accuracy={}\n{k}.n_items={}\n", v.accuracy, v.n_items);
                if let Some(pp) = v.per_position {
                    s += &format!("{k}.per_position={pp}\n");
                }
            }
            s += &format!("seed={}\n", r.config.recognizer.seed);
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn retrieve(
    embeddings: Option<&Path>,
    annotations: Option<&Path>,
    granularity: Granularity,
    queries: Option<&Path>,
    k: usize,
    embed_dim: usize,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    if embed_dim == 0 {
        return Err(CliError::Invalid("--embed-dim must be positive".into()));
    }
    let embedder = HashingEmbedder::new(embed_dim);
    let store = match (embeddings, annotations) {
        (Some(p), _) => load_embeddings(p)?,
        (None, Some(a)) => {
            let corpus = load_corpus(a, Split::Train)?;
            let records = match granularity {
                Granularity::Video => embed_corpus_videos(&corpus, &embedder)?,
                Granularity::Clip => embed_corpus_clips(&corpus, &embedder),
            };
            EmbeddingStore::new(records)?
        }
        (None, None) => unreachable!("clap requires one store"),
    };
    let queries = match queries {
        Some(q) => load_queries(q)?,
        None => task_queries(&store)?,
    };
    let (results, s) = run_queries(&queries, &store, k, &embedder)?;
    let mut w = create(out)?;
    write_jsonl(&results, &mut w)?;
    w.flush()?;
    let line = match format {
        Format::Lines => format!(
            "k={} queries={} scored={} precision={} recall={} f1={}",
            s.k, s.n_queries, s.n_scored, s.mean.precision, s.mean.recall, s.mean.f1
        ),
        Format::Table => format!(
            "{:>4} {:>8} {:>10} {:>8} {:>8}\n{:>4} {:>8} {:>10.4} {:>8.4} {:>8.4}",
            "k",
            "queries",
            "precision",
            "recall",
            "f1",
            s.k,
            s.n_scored,
            s.mean.precision,
            s.mean.recall,
            s.mean.f1
        ),
    };
    summary(out.is_some(), &line);
    Ok(())
}

/// One text query per task, named after the task.
fn task_queries(store: &EmbeddingStore) -> Result<Vec<Query>> {
    let tasks: BTreeSet<&str> = store
        .records()
        .iter()
        .filter_map(|r| r.task.as_deref())
        .collect();
    if tasks.is_empty() {
        return Err(CliError::Invalid(
            "no --queries given and the store carries no tasks".into(),
        ));
    }
    Ok(tasks
        .into_iter()
        .map(|t| Query {
            id: t.to_string(),
            text: Some(t.to_string()),
            vector: None,
            task: Some(t.to_string()),
        })
        .collect())
}

#[derive(Serialize)]
struct ChainsFile<'a> {
    spec: &'a GeneratorSpec,
    chains: &'a [MarkovChain],
    bayes_optimal_next_accuracy: f64,
}

fn gen_synthetic(
    spec: &GeneratorSpec,
    test_fraction: f64,
    out: &Path,
    test_out: Option<&Path>,
    chains_out: Option<&Path>,
) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(CliError::Invalid(format!(
            "--test-fraction {test_fraction} outside [0, 1)"
        )));
    }
    if test_fraction > 0.0 && test_out.is_none() {
        return Err(CliError::Invalid("--test-fraction needs --test-out".into()));
    }
    let synth = generate_synthetic_corpus(spec)?;
    let (train, test): (Corpus, Option<Corpus>) = if test_fraction > 0.0 {
        let (tr, te) = train_test_split(&synth.corpus, test_fraction, spec.seed);
        (tr, Some(te))
    } else {
        (synth.corpus.clone(), None)
    };
    save_corpus(&train, out)?;
    if let (Some(te), Some(p)) = (&test, test_out) {
        save_corpus(te, p)?;
    }
    if let Some(p) = chains_out {
        let file = ChainsFile {
            spec,
            chains: &synth.chains,
            bayes_optimal_next_accuracy: bayes_optimal_next_accuracy(&synth),
        };
        let mut w = create(Some(p))?;
        serde_json::to_writer_pretty(&mut w, &file).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    println!(
        "train={} test={} seed={}",
        train.len(),
        test.as_ref().map_or(0, Corpus::len),
        spec.seed
    );
    Ok(())
}

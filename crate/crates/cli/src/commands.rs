use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use labelflow_core::batching::{partition, BatchPlan, HeuristicEstimator, TokenEstimator, REPLY_TOKENS_PER_ITEM};
use labelflow_core::client::mock::MockBackend;
use labelflow_core::client::{cost_of_tokens, format_usd, ChatBackend, Labeler, RunLedger};
use labelflow_core::evaluation::{symmetric_difference, Predictor, PublishedAccuracy, ReportBuilder};
use labelflow_core::ingest::{load_dataset, load_labels, write_atomic, write_label_pairs, write_labels, Dataset};
use labelflow_core::prompting::{load_header, PromptHeader};
use labelflow_core::{majority_vote, Category, Label, LabelMap, LabelSource, SourceKind};
use rust_decimal::Decimal;

use crate::config::{CategoryFiles, RunConfig};
use crate::{BackendKind, Cli, Command, PlanArgs};

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or input files (exit 2).
    Usage(anyhow::Error),
    /// Finished, but some items are unlabeled (exit 3).
    Partial(String),
    /// Anything else (exit 1).
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Label {
            backend,
            plan,
            parallelism,
            ledger,
        } => {
            let mut cfg = load_config(cli.config.as_deref(), cli.seed, &plan)?;
            if let Some(p) = parallelism {
                cfg.backend.parallelism = p;
            }
            cfg.validate().map_err(usage)?;
            label(&cfg, backend, plan.category.as_deref(), ledger)
        }
        Command::Evaluate {
            pred,
            gold,
            crowd,
            report,
            category,
            matrix_dir,
            ledger,
            reference_llm,
            reference_crowd,
        } => {
            let pricing = match cli.config.as_deref() {
                Some(p) => RunConfig::load(p).map_err(usage)?.pricing,
                None => Default::default(),
            };
            evaluate(EvaluateArgs {
                pred,
                gold,
                crowd,
                report,
                category,
                matrix_dir,
                ledger,
                references: [(Predictor::Llm, reference_llm), (Predictor::Crowd, reference_crowd)],
                pricing,
            })
        }
        Command::Vote { files, out } => vote(&files, &out),
        Command::Estimate { plan } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed, &plan)?;
            cfg.validate().map_err(usage)?;
            estimate(&cfg, plan.category.as_deref())
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, plan: &PlanArgs) -> Result<RunConfig, Failure> {
    let path = path.ok_or_else(|| usage(anyhow!("--config is required for this command")))?;
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    if let Some(s) = seed {
        cfg.mock.seed = s;
    }
    if let Some(r) = plan.runs {
        cfg.runs = r;
    }
    if let Some(m) = plan.max_items {
        cfg.batching.max_items = Some(m);
    }
    Ok(cfg)
}

struct Job<'a> {
    category: Category,
    files: &'a CategoryFiles,
    dataset: Dataset,
    header: PromptHeader,
    plan: BatchPlan,
}

/// Loads and partitions every selected category before any request is made.
fn prepare<'a>(cfg: &'a RunConfig, only: Option<&str>) -> Result<Vec<Job<'a>>, Failure> {
    let est: HeuristicEstimator = cfg.estimator().map_err(usage)?;
    let mut jobs = Vec::new();
    for (category, files) in cfg.selected(only).map_err(usage)? {
        let dataset = load_dataset(&files.input, &cfg.schema, category)
            .with_context(|| format!("cannot load {}", files.input.display()))
            .map_err(usage)?;
        let header = load_header(&files.header, category)
            .with_context(|| format!("cannot load header {}", files.header.display()))
            .map_err(usage)?;
        let header_tokens = est.estimate(&header.render()).tokens();
        let plan = partition(
            dataset.items(),
            header_tokens,
            cfg.batching.budget,
            cfg.batching.max_items,
            &est,
        )
        .with_context(|| format!("cannot batch {}", category.key()))
        .map_err(usage)?;
        jobs.push(Job {
            category,
            files,
            dataset,
            header,
            plan,
        });
    }
    Ok(jobs)
}

fn make_backend(cfg: &RunConfig, kind: BackendKind) -> Result<Box<dyn ChatBackend>, Failure> {
    match kind {
        BackendKind::Mock => {
            let policy: HashMap<String, Label> = match &cfg.mock.policy_file {
                Some(p) => load_labels(p)
                    .with_context(|| format!("cannot load mock policy {}", p.display()))
                    .map_err(usage)?
                    .into_iter()
                    .collect(),
                None => HashMap::new(),
            };
            Ok(Box::new(MockBackend::new(cfg.mock.clone(), policy)))
        }
        #[cfg(feature = "http")]
        BackendKind::Http => {
            let b = labelflow_core::client::http::HttpBackend::from_config(&cfg.backend).map_err(usage)?;
            Ok(Box::new(b))
        }
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(usage(anyhow!("this build has no HTTP backend (feature `http` disabled)"))),
    }
}

fn write_lines(path: &Path, lines: &[String]) -> std::io::Result<()> {
    write_atomic(path, |w| {
        for l in lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

fn ledger_summary(l: &RunLedger, cfg: &RunConfig) -> String {
    format!(
        "{} requests ({} retries, {} rejected, {} transport errors), {} prompt + {} completion tokens, cost {}, wall time {:.1} s",
        l.exchanges.len(),
        l.retries(),
        l.rejected(),
        l.transport_errors(),
        l.total_prompt_tokens,
        l.total_completion_tokens,
        format_usd(cost_of_tokens(l.total_prompt_tokens, l.total_completion_tokens, cfg.pricing)),
        l.wall_time_s
    )
}

fn label(cfg: &RunConfig, kind: BackendKind, only: Option<&str>, ledger_path: Option<PathBuf>) -> CmdResult {
    let jobs = prepare(cfg, only)?;
    let backend = make_backend(cfg, kind)?;
    let labeler = Labeler::new(backend.as_ref(), &cfg.backend).map_err(usage)?;
    if let Some(m) = cfg.batching.max_items {
        if (m * REPLY_TOKENS_PER_ITEM) as u64 > cfg.backend.max_reply_tokens as u64 {
            log::warn!(
                "max_items {m} may need up to {} reply tokens, above max_reply_tokens {}",
                m * REPLY_TOKENS_PER_ITEM,
                cfg.backend.max_reply_tokens
            );
        }
    }
    let slot = LabelSource::consensus(SourceKind::Llm);
    let mut ledgers: BTreeMap<&str, RunLedger> = BTreeMap::new();
    let mut total = RunLedger::default();
    let mut unlabeled = 0usize;
    for mut job in jobs {
        let key = job.category.key();
        let out = labeler
            .label_dataset(&job.dataset, &job.header, &job.plan, cfg.runs)
            .map_err(runtime)?;
        for (id, l) in &out.labels {
            job.dataset.set_label(id, slot, *l);
        }
        write_labels(&job.dataset.labeled_subset(slot), slot, &job.files.output)
            .with_context(|| format!("cannot write {}", job.files.output.display()))
            .map_err(runtime)?;
        let sidecar = job.files.sidecar();
        if out.unlabeled.is_empty() {
            if sidecar.is_file() {
                std::fs::remove_file(&sidecar).map_err(runtime)?;
            }
        } else {
            write_lines(&sidecar, &out.unlabeled)
                .with_context(|| format!("cannot write {}", sidecar.display()))
                .map_err(runtime)?;
        }
        for f in &out.failures {
            log::warn!("{key}: {f}");
        }
        println!(
            "{key}: {} items in {} batches x {} runs, {} labeled, {} unlabeled -> {}",
            job.dataset.len(),
            job.plan.len(),
            cfg.runs,
            out.labels.len(),
            out.unlabeled.len(),
            job.files.output.display()
        );
        if !out.unlabeled.is_empty() {
            println!("{key}: unlabeled ids listed in {}", sidecar.display());
        }
        println!("{key}: {}", ledger_summary(&out.ledger, cfg));
        unlabeled += out.unlabeled.len();
        total.merge(out.ledger.clone());
        ledgers.insert(key, out.ledger);
    }
    if ledgers.len() > 1 {
        println!("total: {}", ledger_summary(&total, cfg));
    }
    if let Some(p) = ledger_path.or_else(|| cfg.ledger.clone()) {
        write_atomic(&p, |w| {
            serde_json::to_writer_pretty(&mut *w, &ledgers).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
        .with_context(|| format!("cannot write ledger {}", p.display()))
        .map_err(runtime)?;
    }
    if unlabeled > 0 {
        return Err(Failure::Partial(format!("{unlabeled} item(s) left unlabeled")));
    }
    Ok(())
}

struct EvaluateArgs {
    pred: PathBuf,
    gold: PathBuf,
    crowd: Option<PathBuf>,
    report: PathBuf,
    category: String,
    matrix_dir: Option<PathBuf>,
    ledger: Option<PathBuf>,
    references: [(Predictor, Option<Decimal>); 2],
    pricing: labelflow_core::client::Pricing,
}

fn read_labels_file(p: &Path) -> Result<LabelMap, Failure> {
    load_labels(p)
        .with_context(|| format!("cannot load {}", p.display()))
        .map_err(usage)
}

/// Reads a ledger written by `label`: one ledger per category key.
fn read_ledger(p: &Path, category: &str) -> Result<RunLedger, Failure> {
    let text = std::fs::read_to_string(p)
        .with_context(|| format!("cannot read ledger {}", p.display()))
        .map_err(usage)?;
    let map: BTreeMap<String, RunLedger> = serde_json::from_str(&text)
        .with_context(|| format!("invalid ledger {}", p.display()))
        .map_err(usage)?;
    if let Some(l) = map.get(category) {
        return Ok(l.clone());
    }
    let mut total = RunLedger::default();
    for l in map.into_values() {
        total.merge(l);
    }
    Ok(total)
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let pred = read_labels_file(&a.pred)?;
    let gold = read_labels_file(&a.gold)?;
    let crowd = a.crowd.as_deref().map(read_labels_file).transpose()?;
    let mut b = ReportBuilder::new();
    b.add_category(&a.category, &pred, &gold, crowd.as_ref())
        .with_context(|| format!("{} vs {}", a.pred.display(), a.gold.display()))
        .map_err(usage)?;
    if let Some(p) = &a.ledger {
        b.ledger(&read_ledger(p, &a.category)?, a.pricing);
    }
    for (predictor, percent) in a.references {
        if let Some(percent) = percent {
            b.published(PublishedAccuracy {
                category: None,
                predictor,
                percent,
            });
        }
    }
    let report = b.build().map_err(usage)?;
    report
        .write_json(&a.report)
        .with_context(|| format!("cannot write {}", a.report.display()))
        .map_err(runtime)?;
    if let Some(dir) = &a.matrix_dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        let mut dumps = vec![("llm", &report.total.llm.confusion)];
        if let Some(c) = &report.total.crowd {
            dumps.push(("crowd", &c.confusion));
        }
        for (name, m) in dumps {
            let path = dir.join(format!("{}_{name}.csv", a.category));
            write_atomic(&path, |w| m.write_csv(w))
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(runtime)?;
        }
    }
    let t = &report.total;
    println!("items: {}", t.n_items);
    println!("llm accuracy: {}% ({}/{})", t.llm.accuracy_percent, t.llm.correct, t.n_items);
    if let Some(c) = &t.crowd {
        println!("crowd accuracy: {}% ({}/{})", c.accuracy_percent, c.correct, t.n_items);
    }
    if a.ledger.is_some() {
        println!("cost: {}, wall time {:.1} s", report.cost_display, report.wall_time_s);
    }
    for d in report.discrepancies() {
        eprintln!("warning: {}", d.note);
    }
    println!("report -> {}", a.report.display());
    Ok(())
}

fn vote(files: &[PathBuf], out: &Path) -> CmdResult {
    if files.len().is_multiple_of(2) {
        return Err(usage(anyhow!("vote needs an odd number of label files, got {}", files.len())));
    }
    let maps = files.iter().map(|f| read_labels_file(f)).collect::<Result<Vec<_>, _>>()?;
    let first = &maps[0];
    for (f, m) in files.iter().zip(&maps).skip(1) {
        let diff = symmetric_difference(first, m);
        if !diff.is_empty() {
            let shown: Vec<&str> = diff.iter().take(10).map(String::as_str).collect();
            return Err(usage(anyhow!(
                "{} and {} disagree on {} id(s): {}{}",
                files[0].display(),
                f.display(),
                diff.len(),
                shown.join(", "),
                if diff.len() > 10 { ", ..." } else { "" }
            )));
        }
    }
    let voted: Vec<(&str, Label)> = first
        .keys()
        .map(|id| {
            let votes: Vec<Label> = maps.iter().map(|m| m[id.as_str()]).collect();
            Ok((id.as_str(), majority_vote(&votes)?))
        })
        .collect::<Result<_, labelflow_core::label::VoteError>>()
        .map_err(runtime)?;
    write_atomic(out, |w| write_label_pairs(w, voted.iter().copied()))
        .with_context(|| format!("cannot write {}", out.display()))
        .map_err(runtime)?;
    println!("voted {} ids from {} files -> {}", voted.len(), files.len(), out.display());
    Ok(())
}

fn estimate(cfg: &RunConfig, only: Option<&str>) -> CmdResult {
    let jobs = prepare(cfg, only)?;
    let (mut batches, mut items, mut prompt, mut reply) = (0usize, 0usize, 0u64, 0u64);
    for job in &jobs {
        let p = job.plan.estimated_prompt_tokens() as u64;
        let r = job.plan.reply_token_bound() as u64;
        println!(
            "{}: {} batches, {} items, {p} prompt tokens, reply bound {r} tokens",
            job.category.key(),
            job.plan.len(),
            job.plan.item_count()
        );
        batches += job.plan.len();
        items += job.plan.item_count();
        prompt += p;
        reply += r;
    }
    let runs = cfg.runs as u64;
    let attempts = u64::from(cfg.backend.max_attempts);
    let low = cost_of_tokens(prompt * runs, reply * runs, cfg.pricing);
    let high = cost_of_tokens(prompt * runs * attempts, reply * runs * attempts, cfg.pricing);
    println!("total: {batches} batches, {items} items, {prompt} prompt tokens, reply bound {reply} tokens per run");
    println!(
        "runs: {runs}; over all runs {} prompt tokens, reply bound {} tokens",
        prompt * runs,
        reply * runs
    );
    println!(
        "projected cost: {} to {} (up to {attempts} attempts per batch)",
        format_usd(low),
        format_usd(high)
    );
    Ok(())
}

use crate::config::Config;
use crate::review;
use crate::service;
use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use lipogate::agents::{Agents, BackendConfig};
use lipogate::app::{HumanVerdict, Store, TicketStatus};
use lipogate::dataset::{self, synth, LipidRecord, SplitManifest, RESCALE_METHOD};
use lipogate::evalkit::{compute_metrics, EvalPair, MetricsReport, SUMMARY_HEADER};
use lipogate::orchestrator::{screen_library, QueuePort, ScreeningResult, ScreeningSettings};
use lipogate::surrogate::{self, Checkpoint};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "lipogate", version, about = "Safety-gated lipid screening")]
pub struct Cli {
    /// TOML config; every key is optional (see config/lipogate.toml).
    #[arg(long, global = true, env = "LIPOGATE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset, its split manifest and optionally
    /// a screening library.
    GenerateData(GenerateArgs),
    /// Train the surrogate predictor and write the best checkpoint.
    Train(TrainArgs),
    /// Compute metrics for a checkpoint on the eval split, or for a file of
    /// prediction pairs.
    Eval(EvalArgs),
    /// Screen a library through the verification loop and rank it.
    Screen(ScreenArgs),
    /// Serve runs, escalations and the verdict endpoint over HTTP.
    Serve(ServeArgs),
    /// Resolve escalation tickets from the terminal.
    Review(ReviewArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Split manifest; defaults to `<data>.split.json` when that exists.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Training-side size when no manifest is used.
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset output (JSON lines). The manifest goes to `<out>.split.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub non_toxic: Option<usize>,
    #[arg(long)]
    pub toxic: Option<usize>,
    #[arg(long)]
    pub studies: Option<usize>,
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Also write a screening library here.
    #[arg(long)]
    pub library_out: Option<PathBuf>,
    #[arg(long)]
    pub library_size: Option<usize>,
    #[arg(long)]
    pub library_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Checkpoint output; written only after training succeeds.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, e.g. `256,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Per-epoch statistics as JSON lines.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction pairs (JSON lines of `{id, true_tox, pred_tox, true_eff, pred_eff}`).
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    /// Library (JSON lines of `{id, smiles}`).
    #[arg(long)]
    pub library: PathBuf,
    /// Surrogate predictor checkpoint (rule verifier).
    #[arg(long, conflicts_with = "fixture")]
    pub checkpoint: Option<PathBuf>,
    /// Scripted fixture for both agents.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_loops: Option<u32>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Record the run and its tickets in this store.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// JSON report output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub reviewer: Option<String>,
    /// Print pending tickets and exit.
    #[arg(long)]
    pub list: bool,
    /// Resolve one ticket without prompting; needs --toxic or --efficiency.
    #[arg(long)]
    pub ticket: Option<String>,
    #[arg(long, requires = "ticket", conflicts_with = "efficiency")]
    pub toxic: bool,
    #[arg(long, requires = "ticket", value_parser = clap::value_parser!(u8).range(1..=10))]
    pub efficiency: Option<u8>,
    #[arg(long, default_value = "")]
    pub note: String,
}

/// Report file written by `screen`. Only `result` is covered by `digest`.
#[derive(Debug, Serialize)]
pub struct ScreenReport<'a> {
    pub generated_at: chrono::DateTime<chrono::Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<&'a str>,
    pub digest: String,
    pub result: &'a ScreeningResult,
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".split.json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_data(path: &Path) -> Result<Vec<LipidRecord>> {
    let records = dataset::load_records(path).with_context(|| format!("loading {}", path.display()))?;
    dataset::ensure_finalized(&records)?;
    Ok(records)
}

/// Resolves (train, eval) records from a manifest or a fresh split.
fn resolve_split(cfg: &Config, data: &Path, records: &[LipidRecord], a: &SplitArgs) -> Result<(Vec<LipidRecord>, Vec<LipidRecord>)> {
    let sidecar = manifest_path(data);
    let manifest = match (&a.split, a.train_n.is_some() || a.split_seed.is_some()) {
        (Some(p), _) => Some(p.clone()),
        (None, false) if sidecar.exists() => Some(sidecar),
        _ => None,
    };
    let split = match manifest {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let m: SplitManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            ensure!(
                m.split.manifest_digest == dataset::records_digest(records),
                "split manifest {} was made for different data",
                p.display()
            );
            m.split
        }
        None => dataset::split(
            records,
            a.split_seed.unwrap_or(cfg.split.seed),
            a.train_n.unwrap_or(cfg.split.train_n),
        )?,
    };
    let (train, eval) = split.materialize(records);
    Ok((train.into_iter().cloned().collect(), eval.into_iter().cloned().collect()))
}

fn generate(cfg: &Config, a: GenerateArgs) -> Result<()> {
    let sc = synth::SynthConfig {
        seed: a.seed.unwrap_or(cfg.synth.seed),
        non_toxic: a.non_toxic.unwrap_or(cfg.synth.non_toxic),
        toxic: a.toxic.unwrap_or(cfg.synth.toxic),
        studies: a.studies.unwrap_or(cfg.synth.studies),
    };
    let mut records = synth::generate(&sc);
    let report = dataset::rescale_scores(&mut records)?;
    let train_n = a.train_n.unwrap_or(cfg.split.train_n);
    let split = dataset::split(&records, a.split_seed.unwrap_or(cfg.split.seed), train_n)?;
    dataset::write_records(&a.out, &records)?;
    let manifest = SplitManifest {
        rescale_method: RESCALE_METHOD.to_string(),
        train_n,
        split,
    };
    write_json(&manifest_path(&a.out), &manifest)?;
    println!(
        "wrote {} records ({} toxic) to {}; split {}/{}",
        records.len(),
        records.iter().filter(|r| r.toxic).count(),
        a.out.display(),
        manifest.split.train.len(),
        manifest.split.eval.len()
    );
    log::debug!("rescale: {report:?}");
    if let Some(path) = a.library_out {
        let lib = synth::generate_library(
            a.library_seed.unwrap_or(cfg.library.seed),
            a.library_size.unwrap_or(cfg.library.size),
        );
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for e in &lib {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        println!("wrote {} library entries to {}", lib.len(), path.display());
    }
    Ok(())
}

/// Holds `val_fraction` of the training side back for checkpoint selection.
pub fn carve_validation(train: &[LipidRecord], val_fraction: f64, seed: u64) -> Result<(Vec<LipidRecord>, Vec<LipidRecord>)> {
    ensure!((0.0..1.0).contains(&val_fraction), "val_fraction {val_fraction} outside [0, 1)");
    let val_n = ((train.len() as f64) * val_fraction).round() as usize;
    if val_n == 0 || val_n >= train.len() {
        return Ok((train.to_vec(), train.to_vec()));
    }
    let s = dataset::split(train, seed.wrapping_add(1), train.len() - val_n)?;
    let (t, v) = s.materialize(train);
    Ok((t.into_iter().cloned().collect(), v.into_iter().cloned().collect()))
}

fn train(cfg: &Config, a: TrainArgs) -> Result<()> {
    let records = load_data(&a.data)?;
    let (train_all, _) = resolve_split(cfg, &a.data, &records, &a.split)?;
    let mut tc = cfg.train.clone();
    tc.lr = a.lr.unwrap_or(tc.lr);
    tc.alpha = a.alpha.unwrap_or(tc.alpha);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.seed = a.seed.unwrap_or(tc.seed);
    if let Some(h) = a.hidden {
        tc.hidden = h;
    }
    let (tr, val) = carve_validation(&train_all, cfg.split.val_fraction, cfg.split.seed)?;
    let out = surrogate::train(&tr, &val, &tc)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    if let Some(p) = &a.history {
        let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
        for e in &out.history {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    out.best.save(&a.out)?;
    println!(
        "best epoch {} of {}: val efficiency acc {:.4}, val toxic acc {:.4} ({} train / {} val); checkpoint {}",
        out.best.epoch,
        tc.epochs,
        out.best.val_efficiency_accuracy,
        out.best.val_toxic_accuracy,
        tr.len(),
        val.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn eval(cfg: &Config, a: EvalArgs) -> Result<()> {
    let report: MetricsReport = match (&a.pairs, &a.checkpoint, &a.data) {
        (Some(p), _, _) => compute_metrics(&parse_pairs(p)?)?,
        (None, Some(c), Some(d)) => {
            let ckpt = Checkpoint::load(c).with_context(|| format!("loading {}", c.display()))?;
            let records = load_data(d)?;
            let (_, eval) = resolve_split(cfg, d, &records, &a.split)?;
            surrogate::evaluate(&ckpt.params, &eval, &ckpt.fingerprint)?
        }
        _ => bail!("eval needs --pairs, or --checkpoint with --data"),
    };
    println!("{SUMMARY_HEADER}");
    println!("{}", report.summary_row());
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn screen(cfg: &Config, a: ScreenArgs) -> Result<()> {
    let mut oc = cfg.orchestrator.clone();
    oc.tau = a.tau.unwrap_or(oc.tau);
    oc.max_loops = a.max_loops.unwrap_or(oc.max_loops);
    oc.top_fraction = a.top_fraction.unwrap_or(oc.top_fraction);
    oc.parallelism = a.parallelism.unwrap_or(oc.parallelism);
    if let Some(c) = &a.checkpoint {
        oc.predictor = BackendConfig::Surrogate {
            checkpoint: Some(c.clone()),
        };
        oc.verifier = BackendConfig::Surrogate { checkpoint: None };
    }
    if let Some(f) = &a.fixture {
        oc.predictor = BackendConfig::Scripted { fixture: f.clone() };
        oc.verifier = oc.predictor.clone();
    }
    oc.validate()?;
    let library = dataset::load_library(&a.library).with_context(|| format!("loading {}", a.library.display()))?;
    let agents = Agents::from_config(&oc.predictor, &oc.verifier)?;

    let (result, run_id) = match &a.store {
        Some(dir) => {
            let store = Store::open(dir)?;
            let settings = ScreeningSettings {
                tau: oc.tau,
                max_loops: oc.max_loops,
                top_fraction: oc.top_fraction,
            };
            let run_id = store.begin_run(settings, library.len())?;
            let result = screen_library(&library, &oc, &agents, &store.port(Some(&run_id)))?;
            store.finish_run(&run_id, &result)?;
            (result, Some(run_id))
        }
        None => (screen_library(&library, &oc, &agents, &QueuePort::new())?, None),
    };
    let digest = result.digest();
    if let Some(r) = &run_id {
        println!("run {r}");
    }
    print!("{}", result.summary_table());
    println!("\ndigest {digest}");
    if !result.pending_tickets.is_empty() {
        println!(
            "{} candidate(s) await review: {}",
            result.pending_tickets.len(),
            result.pending_tickets.join(", ")
        );
    }
    if let Some(p) = &a.out {
        write_json(
            p,
            &ScreenReport {
                generated_at: chrono::Utc::now(),
                run_id: run_id.as_deref(),
                digest,
                result: &result,
            },
        )?;
    }
    Ok(())
}

fn serve(cfg: &Config, a: ServeArgs) -> Result<()> {
    let dir = a.store.unwrap_or_else(|| cfg.serve.store.clone());
    let addr = a.addr.unwrap_or_else(|| cfg.serve.addr.clone());
    let token = std::env::var(&cfg.serve.token_env).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        log::warn!("{} is not set; verdicts are accepted without a token", cfg.serve.token_env);
    }
    let store = Arc::new(Store::open(&dir)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(&addr, store, token))
}

fn review_cmd(cfg: &Config, a: ReviewArgs) -> Result<()> {
    let dir = a.store.unwrap_or_else(|| cfg.serve.store.clone());
    let store = Store::open(&dir)?;
    if a.list {
        let pending = store.list_escalations(Some(TicketStatus::Pending));
        if pending.is_empty() {
            println!("no pending tickets");
        }
        for t in pending {
            println!("{}", review::format_ticket(&t));
        }
        return Ok(());
    }
    let reviewer = a.reviewer.context("--reviewer is required to submit verdicts")?;
    if let Some(id) = a.ticket {
        let mut v = match (a.toxic, a.efficiency) {
            (true, _) => HumanVerdict::toxic(&reviewer),
            (false, Some(e)) => HumanVerdict::non_toxic(e, &reviewer),
            (false, None) => bail!("--ticket needs --toxic or --efficiency"),
        };
        v.note = a.note;
        let out = store.submit_verdict(&id, v)?;
        println!("{}: {:?}", out.ticket.ticket_id, out.state.status);
        return Ok(());
    }
    let n = review::review_pending(&store, &reviewer, &mut std::io::stdin().lock(), &mut std::io::stdout())?;
    println!("{n} verdict(s) applied");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenerateData(a) => generate(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Screen(a) => screen(&cfg, a),
        Command::Serve(a) => serve(&cfg, a),
        Command::Review(a) => review_cmd(&cfg, a),
    }
}

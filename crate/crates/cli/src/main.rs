use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agfsync_cli::config::{BackendMode, MockJudge};
use agfsync_cli::manifest::{FILTER, SKIPS, STATS};
use agfsync_cli::report::{build_report, render_text, write_report};
use agfsync_cli::*;
use agfsync_core::backend::BackendKind;
use agfsync_core::dpo::{grad_check, random_batch, DpoConfig, LinearPredictor};
use agfsync_core::eval::{threshold_table, DEFAULT_THRESHOLDS};
use agfsync_core::hashing::substream_seed;
use agfsync_core::jsonl::{read_jsonl, write_json};
use agfsync_core::preference::FilterReport;
use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "agfsync", version, about = "Build preference data for text-to-image alignment from AI feedback")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML or JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory of <category_slug>.json exemplar files
    #[arg(long, global = true)]
    exemplar_dir: Option<PathBuf>,
    /// Worker threads (default: logical cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// After a partial run, recompute only the failed items
    #[arg(long, global = true)]
    resume: bool,
    /// Rerun stages even when they are up to date
    #[arg(long, global = true)]
    force: bool,
    /// Use the in-process mock backends
    #[arg(long, global = true)]
    mock: bool,
    /// Judge behaviour of the mock backends
    #[arg(long, global = true, value_parser = ["parity", "position-invariant"])]
    mock_judge: Option<String>,
    /// Base URL for every backend without its own URL
    #[arg(long = "backend.url", global = true, value_name = "URL")]
    backend_url: Option<String>,
    #[arg(long = "backend.llm.url", global = true, value_name = "URL")]
    llm_url: Option<String>,
    #[arg(long = "backend.t2i.url", global = true, value_name = "URL")]
    t2i_url: Option<String>,
    #[arg(long = "backend.vqa.url", global = true, value_name = "URL")]
    vqa_url: Option<String>,
    #[arg(long = "backend.embed.url", global = true, value_name = "URL")]
    embed_url: Option<String>,
    #[arg(long = "backend.aesthetic.url", global = true, value_name = "URL")]
    aesthetic_url: Option<String>,
    #[arg(long = "backend.judge.url", global = true, value_name = "URL")]
    judge_url: Option<String>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order (or a single one) and write the report
    Run {
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Caption generation
    Prompts {
        #[command(subcommand)]
        action: GenAction,
    },
    /// Verification questions
    Qa {
        #[command(subcommand)]
        action: GenAction,
    },
    /// Candidate images
    Images {
        #[command(subcommand)]
        action: GenAction,
    },
    /// Candidate scoring
    Score {
        #[command(subcommand)]
        action: ScoreAction,
    },
    /// Preference pairs
    Pairs {
        #[command(subcommand)]
        action: PairsAction,
    },
    /// DPO batch export and gradient verification
    Dpo {
        #[command(subcommand)]
        action: DpoAction,
    },
    /// Evaluation
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Dataset statistics
    Stats,
    /// Write report.json and report.txt
    Report,
    /// Print the effective configuration as TOML
    Config,
}

#[derive(Subcommand)]
enum GenAction {
    Gen,
}

#[derive(Subcommand)]
enum ScoreAction {
    Run,
}

#[derive(Subcommand)]
enum PairsAction {
    /// Select winner and loser per prompt
    Build,
    /// Threshold filter retention
    Filter {
        #[arg(long)]
        vqa: Option<f64>,
        #[arg(long)]
        aes: Option<f64>,
    },
}

#[derive(Subcommand)]
enum DpoAction {
    /// Write the DPO batch file
    Export,
    /// Compare the analytic loss gradient with central differences on a
    /// random linear predictor
    GradCheck {
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        items: usize,
        /// Loss constant for the check (default: the configured value)
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = agfsync_core::dpo::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum EvalAction {
    /// Win/draw/lose table of two score files
    Winrate {
        /// JSONL of {"prompt_id", "score"} for system A
        #[arg(long)]
        a: PathBuf,
        /// JSONL of {"prompt_id", "score"} for system B
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Also write the table as JSON
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Judge every preference pair
    Judge,
}

#[derive(Deserialize)]
struct ScoreLine {
    prompt_id: String,
    score: f64,
}

fn load_config(g: &Global) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.exemplar_dir.is_some() {
        cfg.exemplar_dir = g.exemplar_dir.clone();
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    if g.mock {
        cfg.backends.mode = BackendMode::Mock;
    }
    match g.mock_judge.as_deref() {
        Some("parity") => cfg.backends.mock_judge = MockJudge::Parity,
        Some("position-invariant") => cfg.backends.mock_judge = MockJudge::PositionInvariant,
        _ => {}
    }
    if g.backend_url.is_some() {
        cfg.backends.url = g.backend_url.clone();
    }
    let per_kind = [
        (BackendKind::Llm, &g.llm_url),
        (BackendKind::T2i, &g.t2i_url),
        (BackendKind::Vqa, &g.vqa_url),
        (BackendKind::Embed, &g.embed_url),
        (BackendKind::Aesthetic, &g.aesthetic_url),
        (BackendKind::Judge, &g.judge_url),
    ];
    for (kind, url) in per_kind {
        if url.is_some() {
            cfg.backends.endpoint_mut(kind).url = url.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run stages, print one line each, and map the outcome to an exit code.
fn run(pipeline: &Pipeline, stages: &[Stage], opts: RunOptions) -> Result<i32, PipelineError> {
    let runs = run_stages(pipeline, stages, opts)?;
    let mut code = EXIT_OK;
    for r in &runs {
        let m = &r.manifest;
        let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let state = if r.cached { "cached".to_string() } else { m.status.to_string() };
        println!("{:<8} {:<9} {}", m.stage.name(), state, counts.join(" "));
        for item in &m.retry {
            println!("  retry {}: {}", item.item, item.error);
        }
        code = m.status.exit_code();
    }
    Ok(code)
}

fn stage_verb(g: &Global, stage: Stage) -> Result<i32, PipelineError> {
    let pipeline = Pipeline::new(load_config(g)?)?;
    run(&pipeline, &[stage], RunOptions { force: g.force, resume: g.resume })
}

fn grad_check_cmd(
    cfg: &PipelineConfig,
    dim: usize,
    items: usize,
    beta: Option<f64>,
    step: f64,
    tolerance: f64,
) -> anyhow::Result<i32> {
    if dim < 1 || items < 1 {
        bail!("dim and items must be positive");
    }
    let beta = beta.unwrap_or(cfg.dpo.beta);
    let sched = cfg.schedule.build()?;
    let theta = LinearPredictor::random(dim, substream_seed(cfg.seed, &["grad-check", "theta"]));
    let reference = LinearPredictor::random(dim, substream_seed(cfg.seed, &["grad-check", "ref"]));
    let batch = random_batch(dim, dim, items, substream_seed(cfg.seed, &["grad-check", "batch"]), &sched);
    let report = grad_check(&theta, &reference, &batch, &sched, &DpoConfig { beta }, step)?;
    let ok = report.max_rel_error < tolerance;
    println!(
        "grad-check d={dim} items={items} beta={beta} params={} max_rel_error={:.3e} {}",
        report.analytic.len(),
        report.max_rel_error,
        if ok { "ok" } else { "FAILED" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_ERROR })
}

fn winrate_cmd(a: &Path, b: &Path, thresholds: Option<Vec<f64>>, report: Option<&Path>) -> anyhow::Result<i32> {
    let a: Vec<ScoreLine> = read_jsonl(a).with_context(|| format!("reading {}", a.display()))?;
    let b: Vec<ScoreLine> = read_jsonl(b).with_context(|| format!("reading {}", b.display()))?;
    let b_by_id: HashMap<&str, f64> = b.iter().map(|l| (l.prompt_id.as_str(), l.score)).collect();
    if a.len() != b.len() {
        bail!("files cover different prompts ({} vs {} lines)", a.len(), b.len());
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for line in &a {
        let y = b_by_id.get(line.prompt_id.as_str()).ok_or_else(|| anyhow!("{} missing from B", line.prompt_id))?;
        xs.push(line.score);
        ys.push(*y);
    }
    let thresholds = thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    let table = threshold_table(&xs, &ys, &thresholds)?;
    println!("{:>10} {:>8} {:>8} {:>8}", "threshold", "win", "draw", "lose");
    for row in &table {
        println!("{:>10} {:>8.4} {:>8.4} {:>8.4}", row.threshold, row.win, row.draw, row.lose);
    }
    if let Some(path) = report {
        write_json(path, &serde_json::json!({ "n": xs.len(), "rows": table }))?;
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let g = &cli.global;
    let opts = RunOptions { force: g.force, resume: g.resume };
    let code = match cli.command {
        Command::Run { stage } => {
            let pipeline = Pipeline::new(load_config(g)?)?;
            let stages = match stage {
                Some(s) => vec![s],
                None => Stage::ALL.to_vec(),
            };
            let code = run(&pipeline, &stages, opts)?;
            write_report(pipeline.out())?;
            code
        }
        Command::Prompts { action: GenAction::Gen } => stage_verb(g, Stage::Prompts)?,
        Command::Qa { action: GenAction::Gen } => stage_verb(g, Stage::Qa)?,
        Command::Images { action: GenAction::Gen } => stage_verb(g, Stage::Images)?,
        Command::Score { action: ScoreAction::Run } => stage_verb(g, Stage::Scores)?,
        Command::Pairs { action: PairsAction::Build } => stage_verb(g, Stage::Pairs)?,
        Command::Pairs { action: PairsAction::Filter { vqa, aes } } => {
            let mut cfg = load_config(g)?;
            if let Some(v) = vqa {
                cfg.thresholds.vqa = v;
            }
            if let Some(a) = aes {
                cfg.thresholds.aes = a;
            }
            let pipeline = Pipeline::new(cfg)?;
            let code = run(&pipeline, &[Stage::Pairs], opts)?;
            if code == EXIT_OK {
                let path = pipeline.out().join(FILTER);
                let f: FilterReport = serde_json::from_slice(&std::fs::read(&path)?)?;
                println!(
                    "retained {} of {} prompts ({:.4}) at vqa > {}, aes > {}; skips in {}",
                    f.retained,
                    f.prompts_in,
                    f.efficiency,
                    f.vqa_threshold,
                    f.aes_threshold,
                    pipeline.out().join(SKIPS).display()
                );
            }
            code
        }
        Command::Dpo { action: DpoAction::Export } => stage_verb(g, Stage::Export)?,
        Command::Dpo { action: DpoAction::GradCheck { dim, items, beta, step, tolerance } } => {
            grad_check_cmd(&load_config(g)?, dim, items, beta, step, tolerance)?
        }
        Command::Eval { action: EvalAction::Winrate { a, b, thresholds, report } } => {
            winrate_cmd(&a, &b, thresholds, report.as_deref())?
        },
        Command::Eval { action: EvalAction::Judge } => stage_verb(g, Stage::Eval)?,
        Command::Stats => {
            let cfg = load_config(g)?;
            let report = build_report(&cfg.out)?;
            write_json(&cfg.out.join(STATS), &report.stats)?;
            print!("{}", render_text(&report));
            EXIT_OK
        }
        Command::Report => {
            let cfg = load_config(g)?;
            let report = write_report(&cfg.out)?;
            print!("{}", render_text(&report));
            EXIT_OK
        }
        Command::Config => {
            print!("{}", toml::to_string_pretty(&load_config(g)?)?);
            EXIT_OK
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if let Some(p) = e.downcast_ref::<PipelineError>() {
                p.exit_code()
            } else if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_CONFIG
            } else {
                EXIT_ERROR
            };
            ExitCode::from(code as u8)
        }
    }
}

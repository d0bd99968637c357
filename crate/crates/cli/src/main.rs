//! `wordart`: design runs, ranker evaluation, frame re-rendering, dataset
//! generation and the studio server.
//!
//! Exit codes: 0 when the job is Done (or the command succeeded), 2 when
//! the job Failed, 3 on infrastructure errors (unreachable services,
//! unreadable inputs, I/O), 64 on invalid usage.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use wordart_core::glyph::{Font, DEFAULT_MIN_POINTS};
use wordart_core::llm::BackendKind;
use wordart_core::pipeline::{
    persist_run, reference_image, render_frames, run_pipeline, DesignJob, JobConfig, JobInput, JobState, PipelineEvent,
    ProviderKind, ServicesConfig, ThresholdPolicy,
};
use wordart_core::ranker::{
    degrade, evaluate_topx, format_reports, load_dataset, random_baseline, CandidateVariant, HeuristicScorer, Scorer,
    TopXReport,
};
use wordart_core::raster::RasterImage;
use wordart_core::semtypo::mix_seed;

use config::{InputSettings, RunSettings};

const EXIT_FAILED: u8 = 2;
const EXIT_INFRA: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "wordart", version, about = "Artistic typography from a word and a concept")]
struct Cli {
    /// Log filter, e.g. `info` or `wordart_core=debug`.
    #[arg(long, global = true, env = "WORDART_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Replay,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    font: Option<PathBuf>,
    /// Characters to design.
    #[arg(long)]
    text: Option<String>,
    /// Free-form request, parsed by the LLM backend when no concept is given.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    concept: Option<String>,
    #[arg(long)]
    domain: Option<String>,
    /// Qualified candidates required per character.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    /// Replay fixture file (JSON list of {prompt, response}).
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, env = "WORDART_LLM_ENDPOINT")]
    llm_endpoint: Option<String>,
    #[arg(long, env = "WORDART_LLM_MODEL")]
    llm_model: Option<String>,
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderArg,
    #[arg(long, env = "WORDART_PROVIDER_URL")]
    provider_url: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// TOML (or `.json`) settings; its values override flags.
    #[arg(long, env = "WORDART_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long)]
    seeds_per_attempt: Option<usize>,
    #[arg(long)]
    max_restarts: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Qualification threshold: a number, `inf`, `-inf`, or `corpus`.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one design job and persist it under `--out`.
    Run(Box<RunArgs>),
    /// Top-X precision / recall / success of the heuristic scorer against
    /// the random baseline on a labelled dataset.
    EvalRanker {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        top: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-render every trajectory snapshot of a persisted job directory.
    RenderFrames {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Write a labelled mock corpus in the layout `eval-ranker` reads.
    MakeDataset {
        #[arg(long)]
        font: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_char: usize,
        #[arg(long, default_value_t = 128)]
        canvas: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API and studio page.
    Serve {
        #[arg(long)]
        font: PathBuf,
        #[arg(long, env = "WORDART_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "WORDART_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Only the `job` and `services` tables are read.
        #[arg(long, env = "WORDART_CONFIG")]
        config: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Run(args) => run(*args),
        Command::EvalRanker {
            dataset,
            top,
            iterations,
            seed,
            json,
        } => eval_ranker(&dataset, &top, iterations, seed, json.as_deref()),
        Command::RenderFrames { run, stride } => {
            let written = render_frames(&run, stride)?;
            println!("rendered {} frame(s) under {}", written.len(), run.display());
            Ok(Outcome::Ok)
        }
        Command::MakeDataset {
            font,
            text,
            out,
            per_char,
            canvas,
            seed,
        } => make_dataset(&font, &text, &out, per_char, canvas, seed),
        Command::Serve {
            font,
            host,
            port,
            runs_dir,
            static_dir,
            config,
        } => serve(&font, &host, port, runs_dir, static_dir, config.as_deref()),
    }
}

fn parse_threshold(s: &str) -> anyhow::Result<ThresholdPolicy> {
    Ok(match s {
        "corpus" => ThresholdPolicy::default(),
        "inf" | "+inf" => ThresholdPolicy::Fixed { value: f64::INFINITY },
        "-inf" => ThresholdPolicy::Fixed {
            value: f64::NEG_INFINITY,
        },
        v => ThresholdPolicy::Fixed {
            value: v.parse().with_context(|| format!("threshold {v:?}"))?,
        },
    })
}

fn flag_settings(a: &RunArgs) -> anyhow::Result<RunSettings> {
    let mut job = JobConfig {
        k: a.k,
        seed: a.seed,
        ..JobConfig::default()
    };
    if let Some(n) = a.iterations {
        job.optimization.iterations = n;
    }
    if let Some(px) = a.canvas {
        job.optimization.canvas_px = px;
        job.optimization.crop_px = job.optimization.crop_px.min(px * 3 / 4).max(1);
    }
    if let Some(n) = a.seeds_per_attempt {
        job.seeds_per_attempt = n;
    }
    if let Some(n) = a.max_restarts {
        job.max_restarts = n;
    }
    if let Some(n) = a.workers {
        job.workers = n;
    }
    if let Some(t) = &a.threshold {
        job.threshold = parse_threshold(t)?;
    }
    let mut services = ServicesConfig::default();
    services.llm.kind = match a.backend {
        BackendArg::Mock => BackendKind::Mock,
        BackendArg::Replay => BackendKind::Replay,
        BackendArg::Http => BackendKind::Http,
    };
    services.llm.fixture = a.fixture.clone();
    services.llm.endpoint = a.llm_endpoint.clone();
    if let Some(m) = &a.llm_model {
        services.llm.model = m.clone();
    }
    services.provider = match a.provider {
        ProviderArg::Mock => ProviderKind::Mock,
        ProviderArg::Http => ProviderKind::Http,
    };
    if let Some(url) = &a.provider_url {
        services.http_provider.base_url = url.clone();
    }
    Ok(RunSettings {
        font: a.font.clone(),
        out: a.out.clone(),
        input: InputSettings {
            text: a.text.clone(),
            prompt: a.prompt.clone(),
            concept: a.concept.clone(),
            domain: a.domain.clone(),
        },
        job,
        services,
    })
}

fn run(args: RunArgs) -> anyhow::Result<Outcome> {
    let s = config::resolve(&flag_settings(&args)?, args.config.as_deref())?;
    let font_path = s.font.clone().ok_or_else(|| anyhow!("--font is required"))?;
    let font = std::fs::read(&font_path).with_context(|| format!("reading font {}", font_path.display()))?;
    let input = JobInput {
        prompt: s.input.prompt.clone(),
        characters: s
            .input
            .text
            .as_deref()
            .unwrap_or_default()
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        concept: s.input.concept.clone(),
        domain: s.input.domain.clone(),
    };
    let services = s.services.build()?;
    let id = DesignJob::derived_id(&input, &s.job);
    let quiet = args.quiet;
    let observer = move |e: &PipelineEvent| {
        if quiet {
            return;
        }
        match e {
            PipelineEvent::StateChange { state, attempt } => eprintln!("attempt {attempt}: {state:?}"),
            PipelineEvent::Candidate {
                candidate,
                score,
                qualified,
                ..
            } => eprintln!(
                "  {candidate} score {score:.4}{}",
                if *qualified { " qualified" } else { "" }
            ),
            _ => {}
        }
    };
    let record = run_pipeline(DesignJob::new(id, input, s.job.clone()), &font, &services, &observer);
    let dir = persist_run(&record, &s.out)?;
    println!(
        "job {} {:?} after {} attempt(s)",
        record.job.id,
        record.job.state,
        record.attempts.len()
    );
    for c in &record.selected {
        println!("selected {c}");
    }
    println!("run directory {}", dir.display());
    if let (Some(e), false) = (&record.error, record.infrastructure_error) {
        eprintln!("error: {e}");
    }
    match record.job.state {
        JobState::Done => Ok(Outcome::Ok),
        _ if record.infrastructure_error => bail!(record.error.unwrap_or_else(|| "infrastructure error".into())),
        _ => Ok(Outcome::Failed),
    }
}

fn load_image(path: &Path) -> anyhow::Result<RasterImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    RasterImage::from_png(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn eval_ranker(
    dataset: &Path,
    top: &[usize],
    iterations: usize,
    seed: u64,
    json: Option<&Path>,
) -> anyhow::Result<Outcome> {
    if top.is_empty() || top.contains(&0) {
        bail!("--top needs positive values");
    }
    let ds = load_dataset(dataset)?;
    let scorer = HeuristicScorer::default();
    let mut scores = HashMap::new();
    for set in &ds.characters {
        let reference = set
            .reference
            .as_deref()
            .ok_or_else(|| anyhow!("character {:?} has no reference.png", set.character))?;
        let reference = load_image(reference)?;
        for c in &set.candidates {
            let path = c
                .image
                .as_deref()
                .ok_or_else(|| anyhow!("candidate {} has no image", c.id))?;
            scores.insert(c.id.clone(), scorer.score(&load_image(path)?, &reference)?);
        }
    }
    let mut ranking = evaluate_topx(&ds, &scores, top)?;
    ranking.method = Scorer::id(&scorer);
    let random = random_baseline(&ds, top, iterations, seed);
    println!(
        "{} characters, {} candidates, {} positive",
        ds.characters.len(),
        ds.candidate_count(),
        ds.positive_count()
    );
    print!("{}", format_reports(&[&random, &ranking]));
    if let Some(path) = json {
        let reports: [&TopXReport; 2] = [&random, &ranking];
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Outcome::Ok)
}

fn make_dataset(
    font: &Path,
    text: &str,
    out: &Path,
    per_char: usize,
    canvas: u32,
    seed: u64,
) -> anyhow::Result<Outcome> {
    let bytes = std::fs::read(font).with_context(|| format!("reading font {}", font.display()))?;
    let font = Font::parse(&bytes)?;
    let mut sets = Vec::new();
    for (i, ch) in text.chars().filter(|c| !c.is_whitespace()).enumerate() {
        let reference = reference_image(&font, ch, canvas, DEFAULT_MIN_POINTS)?;
        let cands = (0..per_char)
            .map(|j| {
                let v = CandidateVariant::ALL[j % CandidateVariant::ALL.len()];
                let img = degrade(&reference, v, mix_seed(mix_seed(seed, i as u64), j as u64));
                (format!("k{j:03}"), img, v.is_faithful())
            })
            .collect();
        sets.push((format!("u{:04x}", ch as u32), reference, cands));
    }
    let ds = wordart_core::ranker::write_dataset(out, &sets)?;
    println!(
        "wrote {} characters, {} candidates ({} positive) to {}",
        ds.characters.len(),
        ds.candidate_count(),
        ds.positive_count(),
        out.display()
    );
    Ok(Outcome::Ok)
}

fn serve(
    font: &Path,
    host: &str,
    port: u16,
    runs_dir: Option<PathBuf>,
    static_dir: Option<PathBuf>,
    config: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let bytes = std::fs::read(font).with_context(|| format!("reading font {}", font.display()))?;
    let (mut job_defaults, mut services) = (JobConfig::default(), ServicesConfig::default());
    if let Some(path) = config {
        let v = config::read_file(path)?;
        if let Some(j) = v.get("job") {
            let mut base = serde_json::to_value(&job_defaults)?;
            config::merge(&mut base, j.clone());
            job_defaults = serde_json::from_value(base)?;
        }
        if let Some(sv) = v.get("services") {
            let mut base = serde_json::to_value(&services)?;
            config::merge(&mut base, sv.clone());
            services = serde_json::from_value(base)?;
        }
    }
    let cfg = wordart_service::ServerConfig {
        font: Arc::new(bytes),
        services,
        runs_dir,
        static_dir,
        job_defaults,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(wordart_service::serve(&format!("{host}:{port}"), cfg))?;
    Ok(Outcome::Ok)
}

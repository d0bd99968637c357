use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use wordart_core::llm::{ChatBackend, ChatRequest, LlmError};
use wordart_core::pipeline::{
    load_manifest, persist_run, render_frames, DesignJob, JobConfig, JobInput, JobState, NoopObserver, PipelineEvent,
    RunRecord, ScriptedScorer, Services, ThresholdPolicy,
};
use wordart_core::providers::{ProviderError, RenderProvider, RenderedImage, StylizeRequest, TextureRequest};
use wordart_core::semtypo::OptimizationConfig;

const FONT: &[u8] = include_bytes!("../testdata/WordartTestSans.ttf");

fn fast_config() -> JobConfig {
    JobConfig {
        seeds_per_attempt: 2,
        threshold: ThresholdPolicy::CorpusPercentile {
            quantile: 0.5,
            corpus_size: 10,
        },
        optimization: OptimizationConfig {
            iterations: 12,
            canvas_px: 64,
            crop_count: 2,
            crop_px: 48,
            frame_stride: 5,
            ..OptimizationConfig::default()
        },
        ..JobConfig::default()
    }
}

fn input() -> JobInput {
    JobInput {
        characters: vec!["S".into()],
        concept: Some("cat".into()),
        domain: Some("jewelry".into()),
        ..JobInput::default()
    }
}

fn run_scripted(script: Vec<f64>, max_restarts: usize) -> RunRecord {
    let cfg = JobConfig {
        max_restarts,
        threshold: ThresholdPolicy::Fixed { value: 0.5 },
        ..fast_config()
    };
    let services = Services {
        scorer: Box::new(ScriptedScorer { per_attempt: script }),
        ..Services::mock()
    };
    wordart_core::pipeline::run_pipeline(DesignJob::new("scripted", input(), cfg), FONT, &services, &NoopObserver)
}

fn summary(r: &RunRecord) -> (usize, JobState, usize) {
    (r.attempts.len(), r.job.state, r.job.restart_count)
}

#[test]
fn scripted_scenarios() {
    assert_eq!(summary(&run_scripted(vec![1.0], 2)), (1, JobState::Done, 0));
    assert_eq!(summary(&run_scripted(vec![0.0], 2)), (3, JobState::Failed, 2));
    let r = run_scripted(vec![0.0, 1.0], 2);
    assert_eq!(summary(&r), (2, JobState::Done, 1));
    assert_eq!(r.selected.len(), 1);
    assert!(r.selected[0].starts_with("a2-"));
    assert_eq!(
        r.job.history,
        [
            JobState::Parsing,
            JobState::Concretizing,
            JobState::Semantic,
            JobState::Stylizing,
            JobState::Texturing,
            JobState::Ranking,
            JobState::Semantic,
            JobState::Stylizing,
            JobState::Texturing,
            JobState::Ranking,
            JobState::Done
        ]
    );
}

#[test]
fn threshold_extremes() {
    let run = |value: f64, max_restarts| {
        let cfg = JobConfig {
            max_restarts,
            threshold: ThresholdPolicy::Fixed { value },
            ..fast_config()
        };
        wordart_core::pipeline::run_pipeline(
            DesignJob::new("t", input(), cfg),
            FONT,
            &Services::mock(),
            &NoopObserver,
        )
    };
    let done = run(f64::NEG_INFINITY, 2);
    assert_eq!(summary(&done), (1, JobState::Done, 0));
    let failed = run(f64::INFINITY, 2);
    assert_eq!(summary(&failed), (3, JobState::Failed, 2));
    assert!(failed.attempts.iter().all(|a| a.qualified_for("S") == 0));
    assert!(failed.error.is_some() && !failed.infrastructure_error);
}

#[test]
fn restarts_use_fresh_seeds() {
    let r = run_scripted(vec![0.0], 1);
    let seeds = |i: usize| r.attempts[i].candidates.iter().map(|c| c.seed).collect::<Vec<_>>();
    assert_ne!(seeds(0), seeds(1));
    assert_ne!(
        r.attempts[0].candidates[0].final_params,
        r.attempts[1].candidates[0].final_params
    );
}

fn digest(r: &RunRecord) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(r).unwrap()))
}

#[test]
fn mock_runs_reproduce_per_seed() {
    let run = |seed, workers| {
        let cfg = JobConfig {
            seed,
            workers,
            ..fast_config()
        };
        wordart_core::pipeline::run_pipeline(
            DesignJob::new("r", input(), cfg),
            FONT,
            &Services::mock(),
            &NoopObserver,
        )
    };
    let a = run(7, 1);
    assert_eq!(a.job.state, JobState::Done);
    let b = run(7, 2);
    assert_eq!(
        digest(&a),
        digest(&{
            let mut b = b;
            b.job.config.workers = 1;
            b
        })
    );
    assert_ne!(digest(&a), digest(&run(8, 1)));
}

#[test]
fn events_cover_every_stage() {
    let log = Mutex::new(Vec::new());
    let observer = |e: &PipelineEvent| log.lock().unwrap().push(e.clone());
    let r = wordart_core::pipeline::run_pipeline(
        DesignJob::new("e", input(), fast_config()),
        FONT,
        &Services::mock(),
        &observer,
    );
    let log = log.into_inner().unwrap();
    let iterations = log
        .iter()
        .filter(|e| matches!(e, PipelineEvent::Iteration { .. }))
        .count();
    let frames = log.iter().filter(|e| matches!(e, PipelineEvent::Frame { .. })).count();
    let cands = log
        .iter()
        .filter(|e| matches!(e, PipelineEvent::Candidate { .. }))
        .count();
    assert_eq!(iterations, 2 * 12 * r.attempts.len());
    assert_eq!(frames, 2 * 3 * r.attempts.len());
    assert_eq!(cands, 2 * r.attempts.len());
    assert!(matches!(log.last(), Some(PipelineEvent::Terminal { .. })));
}

struct DownProvider;

impl RenderProvider for DownProvider {
    fn id(&self) -> String {
        "down".into()
    }
    fn stylize(&self, _req: &StylizeRequest) -> Result<RenderedImage, ProviderError> {
        Err(ProviderError::Unavailable("connection refused".into()))
    }
    fn texture(&self, _req: &TextureRequest) -> Result<RenderedImage, ProviderError> {
        Err(ProviderError::Unavailable("connection refused".into()))
    }
}

#[test]
fn provider_outage_fails_fast() {
    let services = Services {
        provider: Box::new(DownProvider),
        ..Services::mock()
    };
    let r = wordart_core::pipeline::run_pipeline(
        DesignJob::new("d", input(), fast_config()),
        FONT,
        &services,
        &NoopObserver,
    );
    assert_eq!(summary(&r), (1, JobState::Failed, 0));
    assert!(r.infrastructure_error);
    assert!(r.error.as_deref().unwrap().contains("connection refused"));
}

struct CountingBackend(AtomicUsize);

impl ChatBackend for CountingBackend {
    fn id(&self) -> String {
        "counting".into()
    }
    fn complete(&self, _req: &ChatRequest) -> Result<String, LlmError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok("no json here".into())
    }
}

#[test]
fn malformed_llm_fails_the_job_without_infrastructure_flag() {
    let services = Services {
        llm: Box::new(CountingBackend(AtomicUsize::new(0))),
        ..Services::mock()
    };
    let r = wordart_core::pipeline::run_pipeline(
        DesignJob::new("m", input(), fast_config()),
        FONT,
        &services,
        &NoopObserver,
    );
    assert_eq!(r.job.state, JobState::Failed);
    assert!(!r.infrastructure_error);
    assert!(r.attempts.is_empty());
}

#[test]
fn prompt_only_input_is_parsed() {
    let job = DesignJob::new(
        "p",
        JobInput {
            prompt: Some("Design \"S\" with the concept of a cat in jewelry design".into()),
            ..JobInput::default()
        },
        fast_config(),
    );
    let r = wordart_core::pipeline::run_pipeline(job, FONT, &Services::mock(), &NoopObserver);
    let req = r.job.request.as_ref().unwrap();
    assert_eq!(req.characters, ["S"]);
    assert_eq!(req.concept, "cat");
    assert_eq!(req.domain, "jewelry");
}

/// Relative path -> (sha256, bytes) for every file under `dir` except the
/// manifest.
fn walk(dir: &Path) -> BTreeMap<String, (String, u64)> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let rel = e.path().strip_prefix(dir).unwrap().to_str().unwrap().replace('\\', "/");
            (rel != "manifest.json").then(|| {
                let bytes = std::fs::read(e.path()).unwrap();
                (rel, (hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
            })
        })
        .collect()
}

fn inventory(dir: &Path) -> BTreeMap<String, (String, u64)> {
    load_manifest(dir)
        .unwrap()
        .files
        .into_iter()
        .map(|f| (f.path, (f.sha256, f.bytes)))
        .collect()
}

#[test]
fn persisted_layout_matches_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_scripted(vec![0.0, 1.0], 2);
    let dir = persist_run(&r, tmp.path()).unwrap();
    assert_eq!(dir, tmp.path().join("scripted"));
    assert_eq!(walk(&dir), inventory(&dir));
    let m = load_manifest(&dir).unwrap();
    assert_eq!((m.attempts, m.state, m.restart_count), (2, JobState::Done, 1));
    for stage in ["semantic", "stylize", "texture", "ranking"] {
        assert!(dir.join("attempt_2").join(stage).is_dir(), "{stage}");
    }
    let first = std::fs::read(dir.join("manifest.json")).unwrap();
    persist_run(&r, tmp.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.join("manifest.json")).unwrap());

    let written = render_frames(&dir, 4).unwrap();
    assert_eq!(written.len(), 2 * 2 * (3 + 1));
    assert_eq!(walk(&dir), inventory(&dir));
}

#[test]
fn empty_record_persists_zero_attempts() {
    let tmp = tempfile::tempdir().unwrap();
    let r = RunRecord {
        job: DesignJob::new("empty", JobInput::default(), JobConfig::default()),
        characters: Vec::new(),
        attempts: Vec::new(),
        selected: Vec::new(),
        accepted: None,
        error: None,
        infrastructure_error: false,
    };
    let dir = persist_run(&r, tmp.path()).unwrap();
    let m = load_manifest(&dir).unwrap();
    assert_eq!(m.attempts, 0);
    assert_eq!(walk(&dir), inventory(&dir));
}

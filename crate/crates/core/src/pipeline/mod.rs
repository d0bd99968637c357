//! End-to-end design runs: parsing, concretization, per-seed semantic
//! optimization, stylization, texturing and ranking, restarted until
//! enough candidates qualify.

mod persist;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::glyph::{
    normalize_outline, parameterize, rebalance_control_points, to_svg_document, Font, GlyphError, GlyphOutline,
    ParamLayout, Point2, DEFAULT_MIN_POINTS,
};
use crate::llm::{
    build_backend, parse_user_input, query_concretization, BackendConfig, ChatBackend, ConcretizationResult,
    DesignRequest, LlmError, PromptKind,
};
use crate::providers::{
    Condition, HttpProvider, HttpProviderConfig, MockProvider, ProviderError, RenderProvider, RenderedImage,
    StylizeRequest, TextureRequest,
};
use crate::ranker::{
    mock_corpus_scores, percentile, select_top_x, Candidate, HeuristicScorer, RankError, ScoreWeights, Scorer,
};
use crate::raster::{rasterize, RasterConfig, RasterError, RasterImage};
use crate::semtypo::{
    mix_seed, optimize_with, select_region, GuidanceProvider, IdentityEncoder, NoiseSchedule, OptimizationConfig,
    RegionConfig, RegionSelection, SdsGuidance, SemError, TargetDenoiser, TargetGuidance, Trajectory,
};
use crate::shapes;

pub use persist::{load_manifest, persist_run, render_frames, FileEntry, Manifest, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Semantic(#[from] SemError),
    #[error(transparent)]
    Glyph(#[from] GlyphError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("io: {0}")]
    Io(String),
}

impl PipelineError {
    /// Unreachable services and storage failures, as opposed to the job
    /// itself failing.
    pub fn is_infrastructure(&self) -> bool {
        match self {
            PipelineError::Llm(e) => matches!(e, LlmError::BackendUnavailable(_) | LlmError::FixtureMissing(_)),
            PipelineError::Provider(e) => matches!(e, ProviderError::Unavailable(_) | ProviderError::Rejected { .. }),
            PipelineError::Io(_) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Parsing,
    Concretizing,
    Semantic,
    Stylizing,
    Texturing,
    Ranking,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Whether `self -> next` is a legal step.
    pub fn can_move_to(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (Parsing, Concretizing)
                | (Concretizing, Semantic)
                | (Semantic, Stylizing)
                | (Stylizing, Texturing)
                | (Texturing, Ranking)
                | (Ranking, Semantic)
                | (Ranking, Done)
        ) || (next == Failed && !self.is_terminal())
    }
}

/// Silhouettes usable as optimization targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    Star,
    Heart,
    Bar,
    Circle,
}

impl TargetShape {
    pub const ALL: [TargetShape; 4] = [
        TargetShape::Star,
        TargetShape::Heart,
        TargetShape::Bar,
        TargetShape::Circle,
    ];

    /// Outline sized for a `canvas` px square canvas.
    pub fn outline(self, canvas: u32) -> GlyphOutline {
        let s = canvas as f64 / 256.0;
        let c = Point2::new(128.0 * s, 128.0 * s);
        match self {
            TargetShape::Star => shapes::star(c, 110.0 * s, 50.0 * s, 5),
            TargetShape::Heart => shapes::heart(c, 200.0 * s),
            TargetShape::Bar => shapes::bar(c, 220.0 * s, 70.0 * s),
            TargetShape::Circle => shapes::circle(c, 90.0 * s, 8),
        }
    }

    /// Deterministic pick from a prompt.
    pub fn for_prompt(prompt: &str) -> Self {
        let d = Sha256::digest(prompt.as_bytes());
        Self::ALL[d[0] as usize % Self::ALL.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuidanceSpec {
    /// Score distillation against a mock denoiser whose clean image is the
    /// silhouette hashed from the stylization prompt.
    MockSds { n_samples: usize },
    /// Pixel MSE against a fixed silhouette.
    Target { shape: TargetShape },
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        GuidanceSpec::MockSds { n_samples: 1 }
    }
}

/// How the qualification threshold is fixed at job setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed {
        #[serde(with = "extended_f64")]
        value: f64,
    },
    /// Quantile of heuristic scores over a mock corpus built from each
    /// character's reference render.
    CorpusPercentile { quantile: f64, corpus_size: usize },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::CorpusPercentile {
            quantile: 0.6,
            corpus_size: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    /// Qualified candidates needed per character.
    pub k: usize,
    pub max_restarts: usize,
    pub seeds_per_attempt: usize,
    pub seed: u64,
    pub min_points: usize,
    pub region: RegionConfig,
    pub optimization: OptimizationConfig,
    pub guidance: GuidanceSpec,
    pub threshold: ThresholdPolicy,
    pub stylize_strength: f64,
    pub condition: Condition,
    /// Concurrent per-seed branches within an attempt.
    pub workers: usize,
    pub llm_max_retries: u32,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            k: 1,
            max_restarts: 2,
            seeds_per_attempt: 4,
            seed: 0,
            min_points: DEFAULT_MIN_POINTS,
            region: RegionConfig::default(),
            optimization: OptimizationConfig::default(),
            guidance: GuidanceSpec::default(),
            threshold: ThresholdPolicy::default(),
            stylize_strength: 0.75,
            condition: Condition::Canny,
            workers: 1,
            llm_max_retries: 2,
        }
    }
}

impl JobConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidJob("k must be at least 1".into()));
        }
        if self.seeds_per_attempt == 0 {
            return Err(PipelineError::InvalidJob("seeds_per_attempt must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stylize_strength) {
            return Err(PipelineError::InvalidJob("stylize_strength outside [0, 1]".into()));
        }
        if let ThresholdPolicy::CorpusPercentile { quantile, corpus_size } = self.threshold {
            if !(0.0..=1.0).contains(&quantile) || corpus_size == 0 {
                return Err(PipelineError::InvalidJob(
                    "corpus threshold needs a quantile in [0, 1]".into(),
                ));
            }
        }
        self.optimization.validate()?;
        Ok(())
    }
}

/// What the user asked for. Explicit `concept` skips the input-parsing
/// prompt; `characters` are used when the prompt names none.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobInput {
    pub prompt: Option<String>,
    pub characters: Vec<String>,
    pub concept: Option<String>,
    pub domain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignJob {
    pub id: String,
    pub input: JobInput,
    pub request: Option<DesignRequest>,
    pub config: JobConfig,
    pub state: JobState,
    pub restart_count: usize,
    pub history: Vec<JobState>,
}

impl DesignJob {
    pub fn new(id: impl Into<String>, input: JobInput, config: JobConfig) -> Self {
        Self {
            id: id.into(),
            input,
            request: None,
            config,
            state: JobState::Parsing,
            restart_count: 0,
            history: vec![JobState::Parsing],
        }
    }

    /// Id derived from the input and config, stable across runs.
    pub fn derived_id(input: &JobInput, config: &JobConfig) -> String {
        let text = serde_json::to_string(&(input, config)).expect("job serializes");
        format!("job-{}", &hex::encode(Sha256::digest(text.as_bytes()))[..12])
    }

    fn transition(&mut self, next: JobState, observer: &dyn Observer) {
        debug_assert!(self.state.can_move_to(next), "{:?} -> {next:?}", self.state);
        self.state = next;
        self.history.push(next);
        observer.event(&PipelineEvent::StateChange {
            state: next,
            attempt: self.restart_count + 1,
        });
    }
}

/// Context handed to candidate scorers.
#[derive(Clone, Debug)]
pub struct ScoreContext<'a> {
    /// 1-based.
    pub attempt: usize,
    pub character: &'a str,
    pub seed_index: usize,
}

pub trait CandidateScorer: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, ctx: &ScoreContext, candidate: &RasterImage, reference: &RasterImage) -> Result<f64, RankError>;
}

impl<T: Scorer> CandidateScorer for T {
    fn id(&self) -> String {
        Scorer::id(self)
    }

    fn score(&self, _ctx: &ScoreContext, candidate: &RasterImage, reference: &RasterImage) -> Result<f64, RankError> {
        Scorer::score(self, candidate, reference)
    }
}

/// Gives every candidate of attempt `n` the score `per_attempt[n - 1]`;
/// the last entry repeats.
#[derive(Clone, Debug)]
pub struct ScriptedScorer {
    pub per_attempt: Vec<f64>,
}

impl CandidateScorer for ScriptedScorer {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn score(&self, ctx: &ScoreContext, _candidate: &RasterImage, _reference: &RasterImage) -> Result<f64, RankError> {
        self.per_attempt
            .get(ctx.attempt - 1)
            .or(self.per_attempt.last())
            .copied()
            .ok_or_else(|| RankError::Scorer("empty script".into()))
    }
}

/// Progress notifications. Must tolerate calls from worker threads.
#[derive(Clone, Debug, PartialEq)]
pub enum PipelineEvent {
    StateChange {
        state: JobState,
        attempt: usize,
    },
    Iteration {
        attempt: usize,
        candidate: String,
        iteration: usize,
        loss: f64,
    },
    Frame {
        attempt: usize,
        candidate: String,
        iteration: usize,
        png: Vec<u8>,
    },
    Candidate {
        attempt: usize,
        candidate: String,
        character: String,
        score: f64,
        qualified: bool,
        png: Vec<u8>,
    },
    Terminal {
        state: JobState,
        restart_count: usize,
        error: Option<String>,
    },
}

pub trait Observer: Send + Sync {
    fn event(&self, e: &PipelineEvent);
}

impl<F: Fn(&PipelineEvent) + Send + Sync> Observer for F {
    fn event(&self, e: &PipelineEvent) {
        self(e)
    }
}

pub struct NoopObserver;

impl Observer for NoopObserver {
    fn event(&self, _e: &PipelineEvent) {}
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

/// Serializable description of [`Services`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServicesConfig {
    pub llm: BackendConfig,
    pub provider: ProviderKind,
    pub http_provider: HttpProviderConfig,
    pub scorer: ScoreWeights,
}

impl ServicesConfig {
    pub fn build(&self) -> Result<Services, PipelineError> {
        Ok(Services {
            llm: build_backend(&self.llm)?,
            provider: match self.provider {
                ProviderKind::Mock => Box::new(MockProvider),
                ProviderKind::Http => Box::new(HttpProvider::new(&self.http_provider)?),
            },
            scorer: Box::new(HeuristicScorer {
                weights: self.scorer.clone(),
            }),
        })
    }
}

/// Everything a run talks to.
pub struct Services {
    pub llm: Box<dyn ChatBackend>,
    pub provider: Box<dyn RenderProvider>,
    pub scorer: Box<dyn CandidateScorer>,
}

impl Services {
    /// Mock backend, mock provider and the heuristic scorer.
    pub fn mock() -> Self {
        Self {
            llm: Box::new(crate::llm::MockBackend),
            provider: Box::new(MockProvider),
            scorer: Box::new(HeuristicScorer::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concretizations {
    pub stylization: ConcretizationResult,
    pub texture: ConcretizationResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// `a{attempt}-c{character index}-s{seed index}`.
    pub id: String,
    pub character: String,
    pub seed: u64,
    pub region: RegionSelection,
    pub layout: ParamLayout,
    pub initial_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub svg: String,
    pub trajectory: Trajectory,
    pub i_sem: RasterImage,
    pub i_sty: RenderedImage,
    pub i_tex: RenderedImage,
    #[serde(with = "extended_f64")]
    pub score: f64,
    pub qualified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    /// 1-based.
    pub index: usize,
    pub seed: u64,
    /// `None` when the attempt failed before concretization returned.
    pub concretizations: Option<Concretizations>,
    pub candidates: Vec<CandidateRecord>,
}

impl AttemptRecord {
    pub fn qualified_for(&self, character: &str) -> usize {
        self.candidates
            .iter()
            .filter(|c| c.character == character && c.qualified)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterSetup {
    pub character: String,
    pub reference: RasterImage,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub job: DesignJob,
    pub characters: Vec<CharacterSetup>,
    pub attempts: Vec<AttemptRecord>,
    /// Top-K per character from the final attempt when Done.
    pub selected: Vec<String>,
    /// Candidate the user accepted, if any.
    pub accepted: Option<String>,
    pub error: Option<String>,
    pub infrastructure_error: bool,
}

impl RunRecord {
    pub fn candidate(&self, id: &str) -> Option<&CandidateRecord> {
        self.attempts.iter().flat_map(|a| &a.candidates).find(|c| c.id == id)
    }

    /// Final-attempt candidates, best first.
    pub fn ranked(&self) -> Vec<&CandidateRecord> {
        let Some(last) = self.attempts.last() else {
            return Vec::new();
        };
        let cands: Vec<Candidate> = last
            .candidates
            .iter()
            .map(|c| Candidate {
                id: c.id.clone(),
                character: c.character.clone(),
                score: c.score,
                label: None,
            })
            .collect();
        select_top_x(&cands, cands.len())
            .iter()
            .filter_map(|c| self.candidate(&c.id))
            .collect()
    }
}

/// JSON has no infinities; they are written as the strings `"inf"` and
/// `"-inf"` (and NaN as `"nan"`).
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => v.serialize(s),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

fn guidance_for(spec: &GuidanceSpec, prompt: &str, canvas: u32) -> Result<Box<dyn GuidanceProvider>, PipelineError> {
    let cfg = RasterConfig::square(canvas, 1.0);
    Ok(match spec {
        GuidanceSpec::Target { shape } => Box::new(TargetGuidance {
            target: rasterize(&parameterize(&shape.outline(canvas)), &cfg)?,
        }),
        GuidanceSpec::MockSds { n_samples } => {
            let target = rasterize(&parameterize(&TargetShape::for_prompt(prompt).outline(canvas)), &cfg)?;
            Box::new(SdsGuidance {
                denoiser: Arc::new(TargetDenoiser {
                    target,
                    encoder: Arc::new(IdentityEncoder),
                }),
                encoder: Arc::new(IdentityEncoder),
                prompt_key: prompt.to_string(),
                schedule: NoiseSchedule::default(),
                n_samples: (*n_samples).max(1),
            })
        }
    })
}

struct Branch {
    character_index: usize,
    seed_index: usize,
    seed: u64,
}

struct SemanticOut {
    region: RegionSelection,
    layout: ParamLayout,
    initial: Vec<f64>,
    fin: Vec<f64>,
    svg: String,
    trajectory: Trajectory,
    i_sem: RasterImage,
}

struct Prepared {
    outline: GlyphOutline,
    setup: CharacterSetup,
}

/// Glyph for `c` fitted to a `canvas` px square and rebalanced to at
/// least `min_points` control points.
pub fn canvas_outline(font: &Font, c: char, canvas: u32, min_points: usize) -> Result<GlyphOutline, PipelineError> {
    let outline = normalize_outline(&font.glyph(c)?, canvas)?;
    Ok(rebalance_control_points(&outline, min_points))
}

/// The clean render candidates are scored against.
pub fn reference_image(font: &Font, c: char, canvas: u32, min_points: usize) -> Result<RasterImage, PipelineError> {
    let outline = canvas_outline(font, c, canvas, min_points)?;
    Ok(rasterize(&parameterize(&outline), &RasterConfig::square(canvas, 1.0))?)
}

fn prepare_character(font: &Font, ch: &str, cfg: &JobConfig) -> Result<Prepared, PipelineError> {
    let mut chars = ch.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(PipelineError::InvalidJob(format!("{ch:?} is not a single character")));
    };
    let canvas = cfg.optimization.canvas_px;
    let outline = canvas_outline(font, c, canvas, cfg.min_points)?;
    let reference = rasterize(&parameterize(&outline), &RasterConfig::square(canvas, 1.0))?;
    let threshold = match cfg.threshold {
        ThresholdPolicy::Fixed { value } => value,
        ThresholdPolicy::CorpusPercentile { quantile, corpus_size } => {
            let scores = mock_corpus_scores(&reference, &HeuristicScorer::default(), corpus_size, cfg.seed)?;
            percentile(&scores, quantile).unwrap_or(f64::NEG_INFINITY)
        }
    };
    Ok(Prepared {
        outline,
        setup: CharacterSetup {
            character: ch.to_string(),
            reference,
            threshold,
        },
    })
}

fn run_parallel<T: Send, F: Fn(&Branch) -> Result<T, PipelineError> + Sync>(
    branches: &[Branch],
    workers: usize,
    f: F,
) -> Result<Vec<T>, PipelineError> {
    use rayon::prelude::*;
    if workers <= 1 {
        return branches.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Io(format!("worker pool: {e}")))?;
    pool.install(|| branches.par_iter().map(&f).collect())
}

/// Runs `job` to a terminal state. Partial artifacts are kept in the
/// record when the job fails.
pub fn run_pipeline(job: DesignJob, font_bytes: &[u8], services: &Services, observer: &dyn Observer) -> RunRecord {
    let mut record = RunRecord {
        job,
        characters: Vec::new(),
        attempts: Vec::new(),
        selected: Vec::new(),
        accepted: None,
        error: None,
        infrastructure_error: false,
    };
    let result = drive(&mut record, font_bytes, services, observer);
    if let Err(e) = result {
        tracing::info!(job = %record.job.id, error = %e, "job failed");
        record.infrastructure_error = e.is_infrastructure();
        record.error = Some(error_chain(&e));
        if !record.job.state.is_terminal() {
            record.job.transition(JobState::Failed, observer);
        }
    }
    observer.event(&PipelineEvent::Terminal {
        state: record.job.state,
        restart_count: record.job.restart_count,
        error: record.error.clone(),
    });
    record
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut src = e.source();
    while let Some(inner) = src {
        s.push_str(": ");
        s.push_str(&inner.to_string());
        src = inner.source();
    }
    s
}

fn parse_request(job: &DesignJob, services: &Services) -> Result<DesignRequest, PipelineError> {
    let input = &job.input;
    match (&input.concept, &input.prompt) {
        (Some(concept), _) if !concept.trim().is_empty() => {
            if input.characters.is_empty() {
                return Err(PipelineError::InvalidJob("no characters given".into()));
            }
            Ok(DesignRequest {
                raw_text: input.prompt.clone().unwrap_or_default(),
                characters: input.characters.clone(),
                concept: concept.trim().to_string(),
                domain: input.domain.clone().unwrap_or_default().trim().to_string(),
            })
        }
        (_, Some(prompt)) => {
            let mut req = parse_user_input(
                services.llm.as_ref(),
                prompt,
                &input.characters,
                job.config.llm_max_retries,
            )?;
            if let Some(d) = input.domain.as_ref().filter(|d| !d.trim().is_empty()) {
                req.domain = d.trim().to_string();
            }
            Ok(req)
        }
        _ => Err(PipelineError::InvalidJob("a prompt or a concept is required".into())),
    }
}

fn concretize(req: &DesignRequest, services: &Services, retries: u32) -> Result<Concretizations, PipelineError> {
    let texture_subject = if req.domain.is_empty() {
        &req.concept
    } else {
        &req.domain
    };
    Ok(Concretizations {
        stylization: query_concretization(services.llm.as_ref(), PromptKind::Stylization, &req.concept, retries)?,
        texture: query_concretization(services.llm.as_ref(), PromptKind::Texture, texture_subject, retries)?,
    })
}

fn drive(
    record: &mut RunRecord,
    font_bytes: &[u8],
    services: &Services,
    observer: &dyn Observer,
) -> Result<(), PipelineError> {
    record.job.config.validate()?;
    let request = parse_request(&record.job, services)?;
    record.job.request = Some(request.clone());
    record.job.transition(JobState::Concretizing, observer);
    let cfg = record.job.config.clone();
    let mut concretizations = concretize(&request, services, cfg.llm_max_retries)?;
    let font = Font::parse(font_bytes)?;
    let prepared: Vec<Prepared> = request
        .characters
        .iter()
        .map(|c| prepare_character(&font, c, &cfg))
        .collect::<Result<_, _>>()?;
    record.characters = prepared.iter().map(|p| p.setup.clone()).collect();
    loop {
        let attempt = record.job.restart_count + 1;
        let attempt_seed = mix_seed(cfg.seed, attempt as u64);
        record.attempts.push(AttemptRecord {
            index: attempt,
            seed: attempt_seed,
            concretizations: None,
            candidates: Vec::new(),
        });
        if attempt > 1 {
            concretizations = concretize(&request, services, cfg.llm_max_retries)?;
        }
        record.attempts.last_mut().expect("just pushed").concretizations = Some(concretizations.clone());
        record.job.transition(JobState::Semantic, observer);
        let branches: Vec<Branch> = (0..prepared.len())
            .flat_map(|c| {
                (0..cfg.seeds_per_attempt).map(move |s| Branch {
                    character_index: c,
                    seed_index: s,
                    seed: mix_seed(attempt_seed, (c * cfg.seeds_per_attempt + s) as u64),
                })
            })
            .collect();
        let cid = |b: &Branch| format!("a{attempt}-c{}-s{}", b.character_index, b.seed_index);
        let sty_prompt = concretizations.stylization.provider_prompt();
        let tex_prompt = concretizations.texture.provider_prompt();
        let semantic = run_parallel(&branches, cfg.workers, |b| {
            semantic_stage(
                &prepared[b.character_index].outline,
                b.seed,
                &cid(b),
                attempt,
                &sty_prompt,
                &cfg,
                observer,
            )
        })?;
        record.job.transition(JobState::Stylizing, observer);
        let styled = run_parallel(&branches, cfg.workers, |b| {
            let k = branch_index(&branches, b);
            Ok(services.provider.stylize(&StylizeRequest {
                image: semantic[k].i_sem.clone(),
                prompt: sty_prompt.clone(),
                strength: cfg.stylize_strength,
                seed: b.seed,
            })?)
        })?;
        record.job.transition(JobState::Texturing, observer);
        let textured = run_parallel(&branches, cfg.workers, |b| {
            let k = branch_index(&branches, b);
            Ok(services.provider.texture(&TextureRequest {
                image: styled[k].luma(),
                prompt: tex_prompt.clone(),
                condition: cfg.condition,
                original_font_image: Some(prepared[b.character_index].setup.reference.clone()),
                seed: b.seed,
            })?)
        })?;
        record.job.transition(JobState::Ranking, observer);
        let mut candidates = Vec::with_capacity(branches.len());
        for ((b, sem), (sty, tex)) in branches.iter().zip(semantic).zip(styled.into_iter().zip(textured)) {
            let setup = &prepared[b.character_index].setup;
            let ctx = ScoreContext {
                attempt,
                character: &setup.character,
                seed_index: b.seed_index,
            };
            let score = services.scorer.score(&ctx, &tex.luma(), &setup.reference)?;
            let qualified = score >= setup.threshold;
            let id = cid(b);
            observer.event(&PipelineEvent::Candidate {
                attempt,
                candidate: id.clone(),
                character: setup.character.clone(),
                score,
                qualified,
                png: tex.to_png()?,
            });
            candidates.push(CandidateRecord {
                id,
                character: setup.character.clone(),
                seed: b.seed,
                region: sem.region,
                layout: sem.layout,
                initial_params: sem.initial,
                final_params: sem.fin,
                svg: sem.svg,
                trajectory: sem.trajectory,
                i_sem: sem.i_sem,
                i_sty: sty,
                i_tex: tex,
                score,
                qualified,
            });
        }
        let rec = record.attempts.last_mut().expect("pushed at attempt start");
        rec.candidates = candidates;
        let rec = &*rec;
        let enough = record
            .characters
            .iter()
            .all(|c| rec.qualified_for(&c.character) >= cfg.k);
        if enough {
            record.selected = select_final(record, cfg.k);
            record.job.transition(JobState::Done, observer);
            return Ok(());
        }
        if record.job.restart_count >= cfg.max_restarts {
            record.error = Some(format!(
                "fewer than {} qualified candidates after {} attempt(s)",
                cfg.k,
                record.attempts.len()
            ));
            record.job.transition(JobState::Failed, observer);
            return Ok(());
        }
        record.job.restart_count += 1;
        tracing::info!(job = %record.job.id, attempt = attempt + 1, "restarting");
    }
}

fn branch_index(branches: &[Branch], b: &Branch) -> usize {
    branches
        .iter()
        .position(|x| std::ptr::eq(x, b))
        .expect("branch belongs to the slice")
}

fn select_final(record: &RunRecord, k: usize) -> Vec<String> {
    let last = record.attempts.last().expect("an attempt was recorded");
    let mut out = Vec::new();
    for setup in &record.characters {
        let cands: Vec<Candidate> = last
            .candidates
            .iter()
            .filter(|c| c.character == setup.character && c.qualified)
            .map(|c| Candidate {
                id: c.id.clone(),
                character: c.character.clone(),
                score: c.score,
                label: None,
            })
            .collect();
        out.extend(select_top_x(&cands, k).into_iter().map(|c| c.id));
    }
    out
}

fn semantic_stage(
    outline: &GlyphOutline,
    seed: u64,
    candidate: &str,
    attempt: usize,
    prompt: &str,
    cfg: &JobConfig,
    observer: &dyn Observer,
) -> Result<SemanticOut, PipelineError> {
    let (split, region) = select_region(outline, seed, &cfg.region)?;
    let params = parameterize(&split);
    let guidance = guidance_for(&cfg.guidance, prompt, cfg.optimization.canvas_px)?;
    let opt = OptimizationConfig {
        seed,
        ..cfg.optimization.clone()
    };
    let mut report = |e: &crate::semtypo::TrajectoryEntry| {
        observer.event(&PipelineEvent::Iteration {
            attempt,
            candidate: candidate.to_string(),
            iteration: e.iteration,
            loss: e.loss,
        });
        if let Some(frame) = &e.frame {
            if let Ok(png) = frame.to_png() {
                observer.event(&PipelineEvent::Frame {
                    attempt,
                    candidate: candidate.to_string(),
                    iteration: e.iteration,
                    png,
                });
            }
        }
    };
    let (fin, trajectory) = optimize_with(&params, &region, guidance.as_ref(), &opt, &mut report)?;
    let i_sem = rasterize(&fin, &opt.raster(opt.sigma.end))?;
    let svg = to_svg_document(&fin.reconstruct()?, opt.canvas_px, opt.canvas_px);
    Ok(SemanticOut {
        region,
        layout: params.layout.clone(),
        initial: params.values,
        fin: fin.values,
        svg,
        trajectory,
        i_sem,
    })
}

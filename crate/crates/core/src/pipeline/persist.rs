use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DesignJob, JobState, PipelineError, RunRecord};
use crate::glyph::ParamLayout;
use crate::raster::render;
use crate::semtypo::{RegionSelection, Trajectory};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the job directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub job_id: String,
    pub state: JobState,
    pub restart_count: usize,
    pub attempts: usize,
    pub selected: Vec<String>,
    pub accepted: Option<String>,
    pub error: Option<String>,
    pub infrastructure_error: bool,
    /// Every file in the job directory except the manifest, sorted by path.
    pub files: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct JobFile {
    job: DesignJob,
    characters: Vec<CharacterFile>,
}

#[derive(Serialize, Deserialize)]
struct CharacterFile {
    character: String,
    #[serde(with = "super::extended_f64")]
    threshold: f64,
    reference: String,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    layout: ParamLayout,
    region: RegionSelection,
    initial: Vec<f64>,
    #[serde(rename = "final")]
    fin: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    character: String,
    seed: u64,
    #[serde(with = "super::extended_f64")]
    score: f64,
    qualified: bool,
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

struct Writer {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Io(format!("{rel}: {e}")))?;
        self.put(rel, text.as_bytes())
    }
}

/// Writes `record` under `root/{job_id}`, replacing any previous contents,
/// and returns the job directory.
pub fn persist_run(record: &RunRecord, root: &Path) -> Result<PathBuf, PipelineError> {
    let dir = root.join(&record.job.id);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let mut w = Writer {
        root: dir.clone(),
        files: Vec::new(),
    };
    let mut characters = Vec::new();
    for (i, c) in record.characters.iter().enumerate() {
        let rel = format!("characters/c{i}/reference.png");
        w.put(&rel, &c.reference.to_png()?)?;
        characters.push(CharacterFile {
            character: c.character.clone(),
            threshold: c.threshold,
            reference: rel,
        });
    }
    w.json(
        "job.json",
        &JobFile {
            job: record.job.clone(),
            characters,
        },
    )?;
    for a in &record.attempts {
        let base = format!("attempt_{}", a.index);
        if let Some(c) = &a.concretizations {
            w.json(&format!("{base}/concretizations.json"), c)?;
        }
        let mut scores = Vec::new();
        for c in &a.candidates {
            let sem = format!("{base}/semantic/{}", c.id);
            w.put(&format!("{sem}/glyph.svg"), c.svg.as_bytes())?;
            w.put(&format!("{sem}/i_sem.png"), &c.i_sem.to_png()?)?;
            w.json(
                &format!("{sem}/params.json"),
                &ParamsFile {
                    layout: c.layout.clone(),
                    region: c.region.clone(),
                    initial: c.initial_params.clone(),
                    fin: c.final_params.clone(),
                },
            )?;
            w.json(&format!("{sem}/trajectory.json"), &c.trajectory)?;
            w.put(&format!("{sem}/loss.jsonl"), c.trajectory.to_jsonl().as_bytes())?;
            for (it, frame) in c.trajectory.frames() {
                w.put(&format!("{sem}/frames/{it:05}.png"), &frame.to_png()?)?;
            }
            w.put(&format!("{base}/stylize/{}.png", c.id), &c.i_sty.to_png()?)?;
            w.json(&format!("{base}/stylize/{}.json", c.id), &c.i_sty.provenance)?;
            w.put(&format!("{base}/texture/{}.png", c.id), &c.i_tex.to_png()?)?;
            w.json(&format!("{base}/texture/{}.json", c.id), &c.i_tex.provenance)?;
            scores.push(ScoreRow {
                id: c.id.clone(),
                character: c.character.clone(),
                seed: c.seed,
                score: c.score,
                qualified: c.qualified,
            });
        }
        w.json(&format!("{base}/ranking/scores.json"), &scores)?;
    }
    let mut manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        job_id: record.job.id.clone(),
        state: record.job.state,
        restart_count: record.job.restart_count,
        attempts: record.attempts.len(),
        selected: record.selected.clone(),
        accepted: record.accepted.clone(),
        error: record.error.clone(),
        infrastructure_error: record.infrastructure_error,
        files: w.files,
    };
    manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
    write_manifest(&dir, &manifest)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), PipelineError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(m).map_err(|e| io(&path, e))?;
    std::fs::write(&path, text).map_err(|e| io(&path, e))
}

pub fn load_manifest(job_dir: &Path) -> Result<Manifest, PipelineError> {
    let path = job_dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| io(&path, e))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(io(&path, format!("unsupported schema version {}", m.schema_version)));
    }
    Ok(m)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| io(path, e))
}

/// Re-renders every `stride`-th trajectory entry of every candidate in a
/// persisted job directory into `semantic/{id}/rendered/`, then refreshes
/// the manifest inventory. Returns the written paths.
pub fn render_frames(job_dir: &Path, stride: usize) -> Result<Vec<PathBuf>, PipelineError> {
    let mut manifest = load_manifest(job_dir)?;
    let job: JobFile = read_json(&job_dir.join("job.json"))?;
    let opt = &job.job.config.optimization;
    let stride = stride.max(1);
    let mut cands: Vec<String> = manifest
        .files
        .iter()
        .filter_map(|f| f.path.strip_suffix("/trajectory.json").map(str::to_string))
        .collect();
    cands.sort();
    let mut w = Writer {
        root: job_dir.to_path_buf(),
        files: Vec::new(),
    };
    for sem in cands {
        let params: ParamsFile = read_json(&job_dir.join(format!("{sem}/params.json")))?;
        let traj: Trajectory = read_json(&job_dir.join(format!("{sem}/trajectory.json")))?;
        let n = traj.entries.len();
        for e in traj.entries.iter().filter(|e| e.iteration % stride == 0) {
            let cfg = opt.raster(opt.sigma.at(e.iteration, n.max(opt.iterations)));
            let img = render(&e.params, &params.layout, &cfg)?.into_image();
            w.put(&format!("{sem}/rendered/{:05}.png", e.iteration), &img.to_png()?)?;
        }
        let last = opt.raster(opt.sigma.end);
        let img = render(&params.fin, &params.layout, &last)?.into_image();
        w.put(&format!("{sem}/rendered/final.png"), &img.to_png()?)?;
    }
    let written: Vec<PathBuf> = w.files.iter().map(|f| job_dir.join(&f.path)).collect();
    manifest.files.retain(|f| !w.files.iter().any(|n| n.path == f.path));
    manifest.files.extend(w.files);
    manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
    write_manifest(job_dir, &manifest)?;
    Ok(written)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RankError, Scorer};
use crate::providers::{MockProvider, RenderProvider, StylizeRequest};
use crate::raster::RasterImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    /// Unique across the dataset.
    pub id: String,
    pub label: bool,
    pub image: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterSet {
    pub character: String,
    pub candidates: Vec<LabeledCandidate>,
    /// Clean glyph render the heuristic scorer compares against.
    pub reference: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    pub characters: Vec<CharacterSet>,
}

impl EvalDataset {
    pub fn positive_count(&self) -> usize {
        self.characters
            .iter()
            .flat_map(|c| &c.candidates)
            .filter(|c| c.label)
            .count()
    }

    pub fn candidate_count(&self) -> usize {
        self.characters.iter().map(|c| c.candidates.len()).sum()
    }

    pub fn validate(&self) -> Result<(), RankError> {
        if self.characters.is_empty() {
            return Err(RankError::InvalidDataset("no characters".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.characters {
            if c.candidates.is_empty() {
                return Err(RankError::InvalidDataset(format!(
                    "character {:?} has no candidates",
                    c.character
                )));
            }
            for k in &c.candidates {
                if !seen.insert(&k.id) {
                    return Err(RankError::InvalidDataset(format!("duplicate candidate id {:?}", k.id)));
                }
            }
        }
        Ok(())
    }
}

/// `n_chars` characters with `n_cands` candidates each, `n_pos` of them
/// positive at seeded positions. Ids are `c{i}/k{j}`.
pub fn synthetic_dataset(n_chars: usize, n_cands: usize, n_pos: usize, seed: u64) -> EvalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EvalDataset {
        characters: (0..n_chars)
            .map(|i| {
                let mut labels: Vec<bool> = (0..n_cands).map(|j| j < n_pos).collect();
                labels.shuffle(&mut rng);
                CharacterSet {
                    character: format!("c{i:03}"),
                    candidates: labels
                        .into_iter()
                        .enumerate()
                        .map(|(j, label)| LabeledCandidate {
                            id: format!("c{i:03}/k{j:03}"),
                            label,
                            image: None,
                        })
                        .collect(),
                    reference: None,
                }
            })
            .collect(),
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> RankError {
    RankError::Io(format!("{}: {e}", path.display()))
}

/// Reads a directory of per-character folders, each holding candidate
/// PNGs, `labels.json` (`{candidate_id: 0|1}`) and optionally
/// `reference.png`. Candidate ids become `{folder}/{candidate_id}`.
pub fn load_dataset(root: &Path) -> Result<EvalDataset, RankError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut characters = Vec::new();
    for dir in dirs {
        let folder = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let labels_path = dir.join("labels.json");
        let text = std::fs::read_to_string(&labels_path).map_err(|e| io(&labels_path, e))?;
        let labels: BTreeMap<String, u8> = serde_json::from_str(&text)
            .map_err(|e| RankError::InvalidDataset(format!("{}: {e}", labels_path.display())))?;
        let mut candidates = Vec::new();
        for (stem, label) in labels {
            if label > 1 {
                return Err(RankError::InvalidDataset(format!(
                    "{}: label {label} for {stem}",
                    labels_path.display()
                )));
            }
            let png = dir.join(format!("{stem}.png"));
            if !png.is_file() {
                return Err(RankError::InvalidDataset(format!("missing image {}", png.display())));
            }
            candidates.push(LabeledCandidate {
                id: format!("{folder}/{stem}"),
                label: label == 1,
                image: Some(png),
            });
        }
        let reference = Some(dir.join("reference.png")).filter(|p| p.is_file());
        characters.push(CharacterSet {
            character: folder,
            candidates,
            reference,
        });
    }
    let ds = EvalDataset { characters };
    ds.validate()?;
    Ok(ds)
}

/// Writes `(character, reference, [(stem, image, label)])` sets in the
/// layout [`load_dataset`] reads.
pub fn write_dataset(
    root: &Path,
    sets: &[(String, RasterImage, Vec<(String, RasterImage, bool)>)],
) -> Result<EvalDataset, RankError> {
    for (character, reference, cands) in sets {
        let dir = root.join(character);
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let png = |img: &RasterImage| img.to_png().map_err(|e| RankError::Io(e.to_string()));
        let path = dir.join("reference.png");
        std::fs::write(&path, png(reference)?).map_err(|e| io(&path, e))?;
        let mut labels = BTreeMap::new();
        for (stem, img, label) in cands {
            let path = dir.join(format!("{stem}.png"));
            std::fs::write(&path, png(img)?).map_err(|e| io(&path, e))?;
            labels.insert(stem.clone(), *label as u8);
        }
        let path = dir.join("labels.json");
        let text = serde_json::to_string_pretty(&labels).expect("map of ints serializes");
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    }
    load_dataset(root)
}

/// Ways a mock-corpus candidate is derived from the reference glyph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateVariant {
    Faithful,
    Blank,
    Blob,
    Shifted,
    Speckle,
}

impl CandidateVariant {
    pub const ALL: [CandidateVariant; 5] = [
        CandidateVariant::Faithful,
        CandidateVariant::Blank,
        CandidateVariant::Blob,
        CandidateVariant::Shifted,
        CandidateVariant::Speckle,
    ];

    pub fn is_faithful(self) -> bool {
        self == CandidateVariant::Faithful
    }
}

/// Applies `variant` to the reference, then runs the mock stylizer and
/// returns the luma of its output.
pub fn degrade(reference: &RasterImage, variant: CandidateVariant, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (reference.width, reference.height);
    let base = match variant {
        CandidateVariant::Faithful => reference.clone(),
        CandidateVariant::Blank => RasterImage::new(w, h),
        CandidateVariant::Blob => {
            let (cx, cy) = (
                w as f64 * rng.random_range(0.3..0.7),
                h as f64 * rng.random_range(0.3..0.7),
            );
            let r = w.min(h) as f64 * rng.random_range(0.3..0.45);
            let mut img = RasterImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    img.set(x, y, if d <= r { 1.0 } else { 0.0 });
                }
            }
            img
        }
        CandidateVariant::Shifted => {
            let dx = (w as f64 * rng.random_range(0.25..0.4)) as i64 * if rng.random::<bool>() { 1 } else { -1 };
            let dy = (h as f64 * rng.random_range(0.25..0.4)) as i64 * if rng.random::<bool>() { 1 } else { -1 };
            let mut img = RasterImage::new(w, h);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sx, sy) = (x - dx, y - dy);
                    if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        img.set(x as u32, y as u32, reference.get(sx as u32, sy as u32));
                    }
                }
            }
            img
        }
        CandidateVariant::Speckle => {
            let mut img = reference.clone();
            for v in img.pixels.iter_mut() {
                if rng.random::<f64>() < 0.35 {
                    *v = 1.0 - *v;
                }
            }
            img
        }
    };
    MockProvider
        .stylize(&StylizeRequest {
            image: base,
            prompt: "mock corpus".into(),
            strength: 0.5,
            seed,
        })
        .map(|r| r.luma())
        .unwrap_or_else(|_| RasterImage::new(w, h))
}

/// Scores of `n` mock-corpus candidates cycling through every variant.
pub fn mock_corpus_scores(
    reference: &RasterImage,
    scorer: &dyn Scorer,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, RankError> {
    (0..n)
        .map(|i| {
            let v = CandidateVariant::ALL[i % CandidateVariant::ALL.len()];
            scorer.score(
                &degrade(reference, v, crate::semtypo::mix_seed(seed, i as u64)),
                reference,
            )
        })
        .collect()
}

/// Linear-interpolated quantile, `q` in [0, 1]. `None` for no values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_has_requested_positives() {
        let ds = synthetic_dataset(7, 6, 2, 4);
        ds.validate().unwrap();
        assert_eq!(ds.positive_count(), 14);
        assert!(ds
            .characters
            .iter()
            .all(|c| c.candidates.iter().filter(|k| k.label).count() == 2));
        assert_eq!(ds, synthetic_dataset(7, 6, 2, 4));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(percentile(&[0.0, 10.0], 0.6), Some(6.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let r = RasterImage::filled(4, 4, 1.0);
        let sets = vec![(
            "A".to_string(),
            r.clone(),
            vec![
                ("k0".to_string(), r.clone(), true),
                ("k1".to_string(), RasterImage::new(4, 4), false),
            ],
        )];
        let ds = write_dataset(dir.path(), &sets).unwrap();
        assert_eq!(ds.candidate_count(), 2);
        assert_eq!(ds.characters[0].candidates[0].id, "A/k0");
        assert!(ds.characters[0].reference.is_some());
    }
}

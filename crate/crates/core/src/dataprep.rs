//! Dataset manifest construction, subject-disjoint split verification, and
//! the offline augmentation recipe for training crops.
//!
//! Manifest CSV columns: `stem,path,label,subject,split`. The directory
//! convention for [`build_manifest`] is `<root>/<split>/<label>/<image>`
//! with split in {train, val, test} and label in {stone, normal}. When a
//! stem contains an underscore, the prefix before the first underscore is
//! taken as the subject id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Stone,
    Normal,
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stone" => Ok(Label::Stone),
            "normal" => Ok(Label::Normal),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Stone => "stone",
            Label::Normal => "normal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub stem: String,
    pub path: PathBuf,
    pub label: Label,
    pub subject: Option<String>,
    pub split: Split,
}

/// Ordered dataset listing with unique stems.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Builds a manifest from rows, sorting by stem and rejecting
    /// duplicate stems and subject leakage across splits.
    pub fn from_rows(mut rows: Vec<ManifestRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.stem.cmp(&b.stem));
        for pair in rows.windows(2) {
            if pair[0].stem == pair[1].stem {
                return Err(Error::DuplicateStem(pair[0].stem.clone()));
            }
        }
        let m = Self { rows };
        m.check_subject_disjoint()?;
        Ok(m)
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn filter_split(&self, split: Split) -> Vec<ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// No subject may appear in two splits.
    pub fn check_subject_disjoint(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(subject) = &r.subject {
                seen.entry(subject).or_default().insert(r.split);
            }
        }
        for (subject, splits) in seen {
            if splits.len() > 1 {
                return Err(Error::SubjectLeak {
                    subject: subject.to_string(),
                    splits: splits.iter().map(|s| s.to_string()).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        w.write_record(["stem", "path", "label", "subject", "split"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.stem.as_str(),
                &r.path.display().to_string(),
                &r.label.to_string(),
                r.subject.as_deref().unwrap_or(""),
                &r.split.to_string(),
            ])
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Config(e.to_string()))?;
            if record.len() < 5 {
                return Err(Error::Config(format!(
                    "{}: expected 5 columns, got {}",
                    path.display(),
                    record.len()
                )));
            }
            let subject = record[3].trim();
            rows.push(ManifestRow {
                stem: record[0].to_string(),
                path: PathBuf::from(&record[1]),
                label: record[2].parse()?,
                subject: if subject.is_empty() {
                    None
                } else {
                    Some(subject.to_string())
                },
                split: record[4].parse()?,
            });
        }
        Manifest::from_rows(rows)
    }
}

/// Extracts the subject id from a stem: the prefix before the first
/// underscore, when present.
pub fn subject_from_stem(stem: &str) -> Option<String> {
    stem.split_once('_').map(|(prefix, _)| prefix.to_string())
}

/// Scans `<root>/<split>/<label>/` for PNG/JPEG files and builds a
/// deterministic manifest, verifying stem uniqueness and subject
/// disjointness.
pub fn build_manifest(root: &Path) -> Result<Manifest> {
    let mut rows = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for label in [Label::Stone, Label::Normal] {
            let dir = root.join(split.to_string()).join(label.to_string());
            if !dir.is_dir() {
                continue;
            }
            let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let path = entry.path();
                let ext = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase());
                if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                    continue;
                }
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Config(format!("bad file name {}", path.display())))?
                    .to_string();
                rows.push(ManifestRow {
                    subject: subject_from_stem(&stem),
                    stem,
                    path,
                    label,
                    split,
                });
            }
        }
    }
    Manifest::from_rows(rows)
}

/// Offline augmentation recipe: flip every target-class image, rotate a
/// seeded-random fraction of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub seed: u64,
    pub rotate_fraction: f32,
    pub rotate_range_deg: f32,
    pub flip: bool,
    pub target_class: Label,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rotate_fraction: 0.5,
            rotate_range_deg: 25.0,
            flip: true,
            target_class: Label::Stone,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rotate_fraction) {
            return Err(Error::Config(format!(
                "rotate_fraction must be in [0,1], got {}",
                self.rotate_fraction
            )));
        }
        if self.rotate_range_deg < 0.0 {
            return Err(Error::Config("rotate_range_deg must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-file failure collected by [`augment`]; the batch always completes.
#[derive(Debug)]
pub struct FileError {
    pub stem: String,
    pub error: Error,
}

/// Result of an augmentation run: the output manifest plus any per-file
/// errors.
#[derive(Debug)]
pub struct AugmentOutcome {
    pub manifest: Manifest,
    pub errors: Vec<FileError>,
}

/// Runs the augmentation recipe over `rows` into `out_dir`, writing PNG.
///
/// Every input is written to the output directory; target-class images in
/// the seeded rotation subset are rotated in place (the copy is rotated,
/// no extra file is spawned). When `flip` is on, each target-class image
/// additionally gets a horizontally flipped copy of the original named
/// `<stem>_flip.png`. Non-target images pass through untouched. The output
/// set is a pure function of (seed, config, inputs).
pub fn augment(rows: &[ManifestRow], cfg: &AugmentConfig, out_dir: &Path) -> Result<AugmentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut sorted: Vec<&ManifestRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.stem.cmp(&b.stem));

    // seeded selection: shuffle target indices, take the rounded fraction,
    // then draw angles in stem order so the draw sequence is reproducible
    let target_idx: Vec<usize> = sorted
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == cfg.target_class)
        .map(|(i, _)| i)
        .collect();
    let k = (target_idx.len() as f64 * cfg.rotate_fraction as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffled = target_idx.clone();
    shuffled.shuffle(&mut rng);
    let selected: BTreeSet<usize> = shuffled.into_iter().take(k).collect();
    let angles: BTreeMap<usize, f32> = selected
        .iter()
        .map(|&i| {
            let angle = if cfg.rotate_range_deg == 0.0 {
                0.0
            } else {
                rng.random_range(-cfg.rotate_range_deg..=cfg.rotate_range_deg)
            };
            (i, angle)
        })
        .collect();

    let mut out_rows = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in sorted.iter().enumerate() {
        let img = match imaging::load_image(&row.path) {
            Ok(img) => img,
            Err(error) => {
                errors.push(FileError {
                    stem: row.stem.clone(),
                    error,
                });
                continue;
            }
        };
        let main = match angles.get(&i) {
            Some(&angle) => imaging::rotate_about_center(&img, angle),
            None => img.clone(),
        };
        let main_path = out_dir.join(format!("{}.png", row.stem));
        if let Err(error) = imaging::save_png(&main, &main_path) {
            errors.push(FileError {
                stem: row.stem.clone(),
                error,
            });
            continue;
        }
        out_rows.push(ManifestRow {
            stem: row.stem.clone(),
            path: main_path,
            label: row.label,
            subject: row.subject.clone(),
            split: row.split,
        });

        if cfg.flip && row.label == cfg.target_class {
            let flip_stem = format!("{}_flip", row.stem);
            let flip_path = out_dir.join(format!("{flip_stem}.png"));
            let flipped = imaging::flip_horizontal(&img);
            if let Err(error) = imaging::save_png(&flipped, &flip_path) {
                errors.push(FileError {
                    stem: flip_stem,
                    error,
                });
                continue;
            }
            out_rows.push(ManifestRow {
                stem: flip_stem,
                path: flip_path,
                label: row.label,
                subject: row.subject.clone(),
                split: row.split,
            });
        }
    }
    Ok(AugmentOutcome {
        manifest: Manifest::from_rows(out_rows)?,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ImageBuffer;

    fn write_img(dir: &Path, name: &str, rgb: [u8; 3]) {
        imaging::save_png(&ImageBuffer::filled(16, 12, rgb), &dir.join(name)).unwrap();
    }

    #[test]
    fn build_manifest_scans_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        for (split, label, name) in [
            ("train", "stone", "s001_a.png"),
            ("train", "normal", "s002_a.png"),
            ("test", "stone", "s003_a.png"),
        ] {
            let dir = root.join(split).join(label);
            std::fs::create_dir_all(&dir).unwrap();
            write_img(&dir, name, [5, 5, 5]);
        }
        let m = build_manifest(root).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.rows()[0].stem, "s001_a");
        assert_eq!(m.rows()[0].subject.as_deref(), Some("s001"));
        let counts = m.split_counts();
        assert_eq!(counts[&Split::Train], 2);
        assert_eq!(counts[&Split::Test], 1);
    }

    #[test]
    fn empty_root_gives_empty_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(build_manifest(tmp.path()).unwrap().is_empty());
    }

    #[test]
    fn subject_leak_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        for (split, name) in [("train", "s001_a.png"), ("test", "s001_b.png")] {
            let dir = root.join(split).join("stone");
            std::fs::create_dir_all(&dir).unwrap();
            write_img(&dir, name, [5, 5, 5]);
        }
        assert!(matches!(
            build_manifest(root),
            Err(Error::SubjectLeak { subject, .. }) if subject == "s001"
        ));
    }

    #[test]
    fn duplicate_stem_detected() {
        let row = |stem: &str| ManifestRow {
            stem: stem.into(),
            path: PathBuf::from(format!("{stem}.png")),
            label: Label::Stone,
            subject: None,
            split: Split::Train,
        };
        assert!(matches!(
            Manifest::from_rows(vec![row("a"), row("a")]),
            Err(Error::DuplicateStem(s)) if s == "a"
        ));
    }

    #[test]
    fn manifest_csv_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let m = Manifest::from_rows(vec![
            ManifestRow {
                stem: "x_1".into(),
                path: PathBuf::from("/data/x_1.png"),
                label: Label::Stone,
                subject: Some("x".into()),
                split: Split::Train,
            },
            ManifestRow {
                stem: "y_1".into(),
                path: PathBuf::from("/data/y_1.png"),
                label: Label::Normal,
                subject: Some("y".into()),
                split: Split::Test,
            },
        ])
        .unwrap();
        let path = tmp.path().join("m.csv");
        m.write_csv(&path).unwrap();
        assert_eq!(Manifest::read_csv(&path).unwrap(), m);
    }

    fn make_crops(dir: &Path, stone: usize, normal: usize) -> Vec<ManifestRow> {
        let mut rows = Vec::new();
        for i in 0..stone + normal {
            let label = if i < stone { Label::Stone } else { Label::Normal };
            let stem = format!("crop{i:04}");
            let path = dir.join(format!("{stem}.png"));
            imaging::save_png(
                &ImageBuffer::filled(10, 8, [(i % 256) as u8, 40, 200]),
                &path,
            )
            .unwrap();
            rows.push(ManifestRow {
                stem,
                path,
                label,
                subject: None,
                split: Split::Train,
            });
        }
        rows
    }

    #[test]
    fn flip_only_count_matches() {
        let tmp = tempfile::tempdir().unwrap();
        let rows = make_crops(tmp.path(), 137, 63);
        let cfg = AugmentConfig {
            rotate_fraction: 0.0,
            ..Default::default()
        };
        let out = tmp.path().join("out");
        let result = augment(&rows, &cfg, &out).unwrap();
        assert!(result.errors.is_empty());
        assert_eq!(result.manifest.len(), 337);
    }

    #[test]
    fn identity_config_copies_input() {
        let tmp = tempfile::tempdir().unwrap();
        let rows = make_crops(tmp.path(), 3, 2);
        let cfg = AugmentConfig {
            rotate_fraction: 0.0,
            flip: false,
            ..Default::default()
        };
        let out = tmp.path().join("out");
        let result = augment(&rows, &cfg, &out).unwrap();
        assert_eq!(result.manifest.len(), 5);
        for (orig, new) in rows.iter().zip(result.manifest.rows()) {
            assert_eq!(orig.stem, new.stem);
            assert_eq!(
                std::fs::read(&orig.path).unwrap(),
                std::fs::read(&new.path).unwrap()
            );
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let rows = make_crops(tmp.path(), 9, 4);
        let cfg = AugmentConfig {
            seed: 7,
            ..Default::default()
        };
        let out_a = tmp.path().join("a");
        let out_b = tmp.path().join("b");
        let a = augment(&rows, &cfg, &out_a).unwrap();
        let b = augment(&rows, &cfg, &out_b).unwrap();
        assert_eq!(a.manifest.len(), b.manifest.len());
        for (ra, rb) in a.manifest.rows().iter().zip(b.manifest.rows()) {
            assert_eq!(ra.stem, rb.stem);
            assert_eq!(
                std::fs::read(&ra.path).unwrap(),
                std::fs::read(&rb.path).unwrap()
            );
        }
    }

    #[test]
    fn unreadable_file_error_collected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rows = make_crops(tmp.path(), 2, 0);
        rows.push(ManifestRow {
            stem: "missing".into(),
            path: tmp.path().join("missing.png"),
            label: Label::Stone,
            subject: None,
            split: Split::Train,
        });
        let out = tmp.path().join("out");
        let result = augment(&rows, &AugmentConfig::default(), &out).unwrap();
        assert_eq!(result.errors.len(), 1);
        assert_eq!(result.errors[0].stem, "missing");
        // the readable files still made it through
        assert!(result.manifest.len() >= 2);
    }
}

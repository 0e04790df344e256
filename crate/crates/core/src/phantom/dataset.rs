//! Phantom datasets and their directory layout.
//!
//! A dataset directory holds:
//!
//! * `images/NNNNN.pgm`, one binary PGM per phantom;
//! * `annotations.txt`, ground truth in the native annotation format with
//!   paths relative to the dataset directory;
//! * `split.txt`, one `train <path>` or `eval <path>` line per image.
//!
//! Every file carries a `config <hash>` comment line.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::phantom::annotations::{read_annotations, write_annotations, Annotated, Record};
use crate::phantom::generate::{generate_phantom, LabeledImage, PhantomParams};
use crate::phantom::image::{read_pgm, write_pgm};
use crate::phantom::PhantomError;

/// Dataset-level generator settings; per-image counts are drawn uniformly
/// from the inclusive ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub count: usize,
    pub train_frac: f64,
    pub width: usize,
    pub height: usize,
    pub pleural_row_frac: f64,
    pub blines: (usize, usize),
    pub bline_width_px: (usize, usize),
    pub bline_intensity: (f64, f64),
    pub alines: (usize, usize),
    pub confusers: (usize, usize),
    pub min_gap: usize,
    pub speckle_sigma: f64,
    pub decay: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let p = PhantomParams::default();
        Self {
            count: 500,
            train_frac: 0.7,
            width: p.width,
            height: p.height,
            pleural_row_frac: p.pleural_row_frac,
            blines: (0, 4),
            bline_width_px: p.bline_width_px,
            bline_intensity: p.bline_intensity,
            alines: (0, 3),
            confusers: (0, 2),
            min_gap: p.min_gap,
            speckle_sigma: p.speckle_sigma,
            decay: p.decay,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Params(m));
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac {} outside (0, 1)", self.train_frac));
        }
        for (name, (lo, hi)) in [("blines", self.blines), ("alines", self.alines), ("confusers", self.confusers)] {
            if lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) empty"));
            }
        }
        // the most crowded image must be valid and placeable
        let worst = PhantomParams {
            n_blines: self.blines.1,
            n_alines: self.alines.1,
            n_confusers: self.confusers.1,
            bline_width_px: (self.bline_width_px.1, self.bline_width_px.1),
            ..self.params(0, 0, 0, 0)
        };
        worst.validate()?;
        let n = worst.n_blines + worst.n_confusers;
        let needed = n * worst.bline_width_px.1 + n.saturating_sub(1) * self.min_gap + 4;
        if needed > self.width {
            return Err(PhantomError::Placement { needed, available: self.width });
        }
        Ok(())
    }

    fn params(&self, n_blines: usize, n_alines: usize, n_confusers: usize, seed: u64) -> PhantomParams {
        PhantomParams {
            width: self.width,
            height: self.height,
            pleural_row_frac: self.pleural_row_frac,
            n_blines,
            bline_width_px: self.bline_width_px,
            bline_intensity: self.bline_intensity,
            n_alines,
            n_confusers,
            min_gap: self.min_gap,
            speckle_sigma: self.speckle_sigma,
            decay: self.decay,
            seed,
        }
    }

    /// Parameters of the first `count` phantoms under `seed`.
    pub fn draw_params(&self, seed: u64) -> Vec<PhantomParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        (0..self.count)
            .map(|_| {
                let nb = rng.gen_range(self.blines.0..=self.blines.1);
                let na = rng.gen_range(self.alines.0..=self.alines.1);
                let nc = rng.gen_range(self.confusers.0..=self.confusers.1);
                let s = rng.gen::<u64>();
                self.params(nb, na, nc, s)
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<LabeledImage>, PhantomError> {
        self.validate()?;
        self.draw_params(seed).iter().map(generate_phantom).collect()
    }
}

/// Deterministic shuffled split into `round(train_frac * n)` training items
/// and the rest.
pub fn split_dataset<R: Clone>(records: &[R], train_frac: f64, seed: u64) -> Result<(Vec<R>, Vec<R>), PhantomError> {
    if records.len() < 2 {
        return Err(PhantomError::Split(format!("need at least 2 records, got {}", records.len())));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(PhantomError::Split(format!("train_frac {train_frac} outside (0, 1)")));
    }
    let n_train = (train_frac * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    order.shuffle(&mut rng);
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// A phantom dataset loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub eval: Vec<LabeledImage>,
}

pub fn image_path(index: usize) -> String {
    format!("images/{index:05}.pgm")
}

fn io_err(path: &Path, e: std::io::Error) -> PhantomError {
    PhantomError::Io(format!("{}: {e}", path.display()))
}

/// Writes `images` with a `train_frac` split into `dir`. `source_id` of each
/// image is replaced by its relative path.
pub fn write_dataset(
    dir: &Path,
    images: &[LabeledImage],
    train_frac: f64,
    seed: u64,
    config_hash: &str,
) -> Result<Vec<PathBuf>, PhantomError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;
    let comment = format!("config {config_hash}");
    let mut written = Vec::with_capacity(images.len() + 2);
    let mut records = Vec::with_capacity(images.len());
    for (i, l) in images.iter().enumerate() {
        let rel = image_path(i);
        let path = dir.join(&rel);
        fs::write(&path, write_pgm(&l.image, Some(&comment))).map_err(|e| io_err(&path, e))?;
        written.push(path);
        records.push(Record { path: rel, boxes: l.boxes.iter().copied().map(Annotated::truth).collect() });
    }
    let ann = dir.join("annotations.txt");
    fs::write(&ann, write_annotations(&records, &[comment.clone()])?).map_err(|e| io_err(&ann, e))?;
    written.push(ann);

    let paths: Vec<String> = records.iter().map(|r| r.path.clone()).collect();
    let (train, eval) = split_dataset(&paths, train_frac, seed)?;
    let mut manifest = format!("# {comment}\n");
    let mut train_sorted = train;
    train_sorted.sort();
    let mut eval_sorted = eval;
    eval_sorted.sort();
    for p in &train_sorted {
        manifest.push_str(&format!("train {p}\n"));
    }
    for p in &eval_sorted {
        manifest.push_str(&format!("eval {p}\n"));
    }
    let split = dir.join("split.txt");
    fs::write(&split, manifest).map_err(|e| io_err(&split, e))?;
    written.push(split);
    Ok(written)
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, PhantomError> {
    let ann = dir.join("annotations.txt");
    let text = fs::read_to_string(&ann).map_err(|e| io_err(&ann, e))?;
    let records = read_annotations(&text, None)?;
    let split = dir.join("split.txt");
    let manifest = fs::read_to_string(&split).map_err(|e| io_err(&split, e))?;
    let mut out = Dataset { train: Vec::new(), eval: Vec::new() };
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (side, rel) = line.split_once(' ').ok_or_else(|| PhantomError::Split(format!("line {}: {line:?}", i + 1)))?;
        let rec = records
            .iter()
            .find(|r| r.path == rel)
            .ok_or_else(|| PhantomError::Split(format!("{rel} has no annotation record")))?;
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let image = read_pgm(&bytes)?;
        for a in &rec.boxes {
            if !a.bbox.within(image.width() as f64, image.height() as f64) {
                return Err(PhantomError::Annotation { line: 0, message: format!("{rel}: box outside image") });
            }
        }
        let l = LabeledImage { image, boxes: rec.boxes.iter().map(|a| a.bbox).collect(), source_id: rel.to_string() };
        match side {
            "train" => out.train.push(l),
            "eval" => out.eval.push(l),
            other => return Err(PhantomError::Split(format!("unknown split {other:?}"))),
        }
    }
    Ok(out)
}

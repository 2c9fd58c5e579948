//! Dataset manifests and patch extraction. Patches feed the embedding
//! network either from uniformly random centers or centered on SIFT
//! keypoints; triplet sampling pairs them into anchor/positive/negative
//! slots over writer labels. Every sampler is a pure function of
//! (inputs, seed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarize::BinarizerSpec;
use crate::imaging::{io, resize, GrayImage, ResizeFactor};
use crate::sift::{build_dog_pyramid, detect_keypoints, Keypoint, ScaleSpaceParams};
use crate::text_aoi::{select_aoi, AoiParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub writer_id: String,
    pub split: Split,
}

/// A validated dataset listing with a writer index.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    by_writer: BTreeMap<String, Vec<usize>>,
    single_train_writers: Vec<String>,
}

impl Manifest {
    /// Build from rows, validating path uniqueness. Writers with exactly
    /// one train image are flagged (triplet positives must then reuse the
    /// anchor image) but load fine.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Manifest> {
        if entries.is_empty() {
            return Err(Error::Manifest("manifest has no rows".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut by_writer: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.image_path.clone()) {
                return Err(Error::Manifest(format!(
                    "duplicate image path {}",
                    e.image_path.display()
                )));
            }
            by_writer.entry(e.writer_id.clone()).or_default().push(i);
        }
        let single_train_writers = by_writer
            .iter()
            .filter(|(_, idxs)| {
                idxs.iter()
                    .filter(|&&i| entries[i].split == Split::Train)
                    .count()
                    == 1
            })
            .map(|(w, _)| w.clone())
            .collect();
        Ok(Manifest {
            entries,
            by_writer,
            single_train_writers,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Writers present in a split, sorted.
    pub fn writers_in(&self, split: Split) -> Vec<&str> {
        self.by_writer
            .iter()
            .filter(|(_, idxs)| idxs.iter().any(|&i| self.entries[i].split == split))
            .map(|(w, _)| w.as_str())
            .collect()
    }

    /// A writer's entries within a split, in manifest order.
    pub fn entries_for(&self, writer: &str, split: Split) -> Vec<&ManifestEntry> {
        self.by_writer
            .get(writer)
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| &self.entries[i])
                    .filter(|e| e.split == split)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Writers whose train split holds exactly one image.
    pub fn single_train_writers(&self) -> &[String] {
        &self.single_train_writers
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    image_path: String,
    writer_id: String,
    split: String,
}

/// Read a manifest CSV (header `image_path,writer_id,split`); relative
/// image paths are resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => Error::format(path, e.to_string()),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for row in reader.deserialize::<RawRow>() {
        let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let split = match row.split.as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => {
                return Err(Error::Manifest(format!(
                    "{}: unknown split '{other}' for {}",
                    path.display(),
                    row.image_path
                )))
            }
        };
        let image_path = if Path::new(&row.image_path).is_absolute() {
            PathBuf::from(&row.image_path)
        } else {
            base.join(&row.image_path)
        };
        entries.push(ManifestEntry {
            image_path,
            writer_id: row.writer_id,
            split,
        });
    }
    Manifest::from_entries(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Random,
    Sift,
}

/// A square cutout of a source image.
#[derive(Debug, Clone)]
pub struct Patch {
    pub pixels: GrayImage,
    pub source_path: PathBuf,
    /// Patch center in the coordinates of the image it was cut from.
    pub center: (f64, f64),
    pub anchor_kind: AnchorKind,
}

fn check_patch_size(img: &GrayImage, side: usize) -> Result<()> {
    if side == 0 {
        return Err(Error::InvalidParam("patch side must be >= 1".into()));
    }
    if img.width() < side || img.height() < side {
        return Err(Error::InvalidParam(format!(
            "image {}x{} smaller than patch side {side}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn cut(img: &GrayImage, source: &Path, x0: usize, y0: usize, side: usize, kind: AnchorKind) -> Result<Patch> {
    Ok(Patch {
        pixels: img.crop(x0, y0, side, side)?,
        source_path: source.to_path_buf(),
        center: (x0 as f64 + side as f64 / 2.0, y0 as f64 + side as f64 / 2.0),
        anchor_kind: AnchorKind::Random,
    }
    .with_kind(kind))
}

impl Patch {
    fn with_kind(mut self, kind: AnchorKind) -> Patch {
        self.anchor_kind = kind;
        self
    }
}

/// `count` patches of the given side with top-left corners uniform over
/// all valid positions; patches may overlap.
pub fn random_patches(
    img: &GrayImage,
    source: &Path,
    side: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    check_patch_size(img, side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_x = img.width() - side;
    let max_y = img.height() - side;
    (0..count)
        .map(|_| {
            let x0 = rng.gen_range(0..=max_x);
            let y0 = rng.gen_range(0..=max_y);
            cut(img, source, x0, y0, side, AnchorKind::Random)
        })
        .collect()
}

/// `count` patches centered on keypoints. Keypoints whose patch would
/// leave the image are excluded; the rest are drawn without replacement
/// until exhausted, then with replacement. No border-valid keypoint at
/// all is an error (callers typically fall back to [`random_patches`]).
pub fn sift_anchored_patches(
    img: &GrayImage,
    source: &Path,
    keypoints: &[Keypoint],
    side: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    check_patch_size(img, side)?;
    let half = side / 2;
    let valid: Vec<(usize, usize)> = keypoints
        .iter()
        .filter_map(|kp| {
            let cx = kp.x.round() as i64;
            let cy = kp.y.round() as i64;
            let x0 = cx - half as i64;
            let y0 = cy - half as i64;
            if x0 >= 0
                && y0 >= 0
                && x0 + side as i64 <= img.width() as i64
                && y0 + side as i64 <= img.height() as i64
            {
                Some((x0 as usize, y0 as usize))
            } else {
                None
            }
        })
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidAnchors);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(count);
    while picks.len() < count {
        let remaining = count - picks.len();
        if remaining >= valid.len() {
            // Whole pass without replacement, shuffled.
            let idx = rand::seq::index::sample(&mut rng, valid.len(), valid.len());
            picks.extend(idx.iter());
        } else {
            let idx = rand::seq::index::sample(&mut rng, valid.len(), remaining);
            picks.extend(idx.iter());
        }
    }
    picks
        .into_iter()
        .map(|i| {
            let (x0, y0) = valid[i];
            cut(img, source, x0, y0, side, AnchorKind::Sift)
        })
        .collect()
}

/// Per-patch standardization to zero mean and unit (population) variance;
/// a constant patch maps to all zeros.
pub fn standardize(patch: &GrayImage) -> Vec<f64> {
    let n = patch.pixels().len() as f64;
    let mean = patch.pixels().iter().sum::<f64>() / n;
    let var = patch.pixels().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; patch.pixels().len()];
    }
    patch.pixels().iter().map(|v| (v - mean) / std).collect()
}

/// Anything that can produce one patch for a manifest entry.
pub trait PatchSource {
    fn patch(&mut self, entry: &ManifestEntry, rng: &mut ChaCha8Rng) -> Result<Patch>;
}

impl<F> PatchSource for F
where
    F: FnMut(&ManifestEntry, &mut ChaCha8Rng) -> Result<Patch>,
{
    fn patch(&mut self, entry: &ManifestEntry, rng: &mut ChaCha8Rng) -> Result<Patch> {
        self(entry, rng)
    }
}

/// Anchor/positive/negative patch slots with their writer labels.
#[derive(Debug)]
pub struct TripletBatch {
    pub anchors: Vec<Patch>,
    pub positives: Vec<Patch>,
    pub negatives: Vec<Patch>,
    pub anchor_writers: Vec<String>,
    pub negative_writers: Vec<String>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Sample a batch of triplets from the train split: anchor writer uniform
/// over train writers, positive from a different image of the same writer
/// when one exists, negative writer uniform over the others.
pub fn sample_triplets(
    manifest: &Manifest,
    source: &mut dyn PatchSource,
    batch: usize,
    seed: u64,
) -> Result<TripletBatch> {
    sample_triplets_in(manifest, source, Split::Train, batch, seed)
}

/// [`sample_triplets`] over an arbitrary split (validation loss uses the
/// val split with a fixed seed).
pub fn sample_triplets_in(
    manifest: &Manifest,
    source: &mut dyn PatchSource,
    split: Split,
    batch: usize,
    seed: u64,
) -> Result<TripletBatch> {
    let writers: Vec<&str> = manifest.writers_in(split);
    if writers.len() < 2 {
        return Err(Error::Manifest(format!(
            "triplet sampling needs at least 2 {split} writers, found {}",
            writers.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TripletBatch {
        anchors: Vec::with_capacity(batch),
        positives: Vec::with_capacity(batch),
        negatives: Vec::with_capacity(batch),
        anchor_writers: Vec::with_capacity(batch),
        negative_writers: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let aw = writers[rng.gen_range(0..writers.len())];
        let a_entries = manifest.entries_for(aw, split);
        let a_idx = rng.gen_range(0..a_entries.len());
        let p_idx = if a_entries.len() > 1 {
            // Uniform over the other images.
            let mut i = rng.gen_range(0..a_entries.len() - 1);
            if i >= a_idx {
                i += 1;
            }
            i
        } else {
            a_idx
        };
        let nw = {
            let mut i = rng.gen_range(0..writers.len() - 1);
            if writers[i] == aw {
                i = writers.len() - 1;
            }
            writers[i]
        };
        let n_entries = manifest.entries_for(nw, split);
        let n_idx = rng.gen_range(0..n_entries.len());

        debug_assert_ne!(aw, nw);
        out.anchors.push(source.patch(a_entries[a_idx], &mut rng)?);
        out.positives.push(source.patch(a_entries[p_idx], &mut rng)?);
        out.negatives.push(source.patch(n_entries[n_idx], &mut rng)?);
        out.anchor_writers.push(aw.to_string());
        out.negative_writers.push(nw.to_string());
    }
    Ok(out)
}

/// Document preprocessing + patch extraction, shared by training and
/// inference: load, optional resize, optional text-AOI crop, then random
/// or keypoint-anchored patches.
#[derive(Debug, Clone)]
pub struct DocumentPatcher {
    pub side: usize,
    pub per_doc: usize,
    pub anchor: AnchorKind,
    pub resize: Option<ResizeFactor>,
    /// Binarizer + selection parameters for the text-AOI crop; None keeps
    /// the whole page.
    pub aoi: Option<(BinarizerSpec, AoiParams)>,
    pub sift_params: ScaleSpaceParams,
    /// Fall back to random patches when keypoint anchoring finds no valid
    /// anchors (or the AOI crop finds no text).
    pub fallback_to_random: bool,
}

impl Default for DocumentPatcher {
    fn default() -> Self {
        DocumentPatcher {
            side: 64,
            per_doc: 64,
            anchor: AnchorKind::Random,
            resize: None,
            aoi: None,
            sift_params: ScaleSpaceParams::default(),
            fallback_to_random: true,
        }
    }
}

/// A document after preprocessing, with keypoints when anchoring needs
/// them.
#[derive(Debug, Clone)]
pub struct PreparedDoc {
    pub image: GrayImage,
    pub keypoints: Vec<Keypoint>,
}

impl DocumentPatcher {
    /// Resize, crop to the text AOI, and (for keypoint anchoring) detect
    /// keypoints. An AOI crop smaller than the patch side — or a page
    /// with no text regions, when falling back is allowed — degrades to
    /// the whole (resized) page.
    pub fn prepare(&self, img: &GrayImage, source: &Path) -> Result<PreparedDoc> {
        let mut image = match self.resize {
            Some(factor) => resize(img, factor),
            None => img.clone(),
        };
        if let Some((binarizer, params)) = &self.aoi {
            match select_aoi(&image, &source.to_string_lossy(), binarizer, params) {
                Ok(crops) => {
                    let crop = &crops[0];
                    if crop.image.width() >= self.side && crop.image.height() >= self.side {
                        image = crop.image.clone();
                    }
                }
                Err(Error::NoTextRegions) if self.fallback_to_random => {}
                Err(e) => return Err(e),
            }
        }
        let keypoints = if self.anchor == AnchorKind::Sift {
            match build_dog_pyramid(&image, &self.sift_params) {
                Ok(pyr) => detect_keypoints(&pyr, &self.sift_params),
                // Image too small for a pyramid: no anchors, fallback
                // logic below decides.
                Err(_) => Vec::new(),
            }
        } else {
            Vec::new()
        };
        Ok(PreparedDoc { image, keypoints })
    }

    /// Extract this patcher's configured number of patches from a
    /// prepared document.
    pub fn patches_from_prepared(
        &self,
        doc: &PreparedDoc,
        source: &Path,
        seed: u64,
    ) -> Result<Vec<Patch>> {
        match self.anchor {
            AnchorKind::Random => {
                random_patches(&doc.image, source, self.side, self.per_doc, seed)
            }
            AnchorKind::Sift => {
                match sift_anchored_patches(
                    &doc.image,
                    source,
                    &doc.keypoints,
                    self.side,
                    self.per_doc,
                    seed,
                ) {
                    Err(Error::NoValidAnchors) if self.fallback_to_random => {
                        random_patches(&doc.image, source, self.side, self.per_doc, seed)
                    }
                    other => other,
                }
            }
        }
    }

    /// Load a document from disk and extract patches.
    pub fn patches_for_file(&self, path: &Path, seed: u64) -> Result<Vec<Patch>> {
        let img = io::load_gray(path)?;
        let doc = self.prepare(&img, path)?;
        self.patches_from_prepared(&doc, path, seed)
    }
}

/// A [`PatchSource`] that loads and prepares each manifest image once,
/// then serves random single patches from the cached documents.
pub struct ManifestPatchSource {
    patcher: DocumentPatcher,
    cache: BTreeMap<PathBuf, PreparedDoc>,
}

impl ManifestPatchSource {
    pub fn new(patcher: DocumentPatcher) -> Self {
        ManifestPatchSource {
            patcher,
            cache: BTreeMap::new(),
        }
    }
}

impl PatchSource for ManifestPatchSource {
    fn patch(&mut self, entry: &ManifestEntry, rng: &mut ChaCha8Rng) -> Result<Patch> {
        if !self.cache.contains_key(&entry.image_path) {
            let img = io::load_gray(&entry.image_path)?;
            let doc = self.patcher.prepare(&img, &entry.image_path)?;
            self.cache.insert(entry.image_path.clone(), doc);
        }
        let doc = &self.cache[&entry.image_path];
        let one = DocumentPatcher {
            per_doc: 1,
            ..self.patcher.clone()
        };
        // Single-patch draws take their seed from the batch RNG stream.
        let seed = rng.gen::<u64>();
        let mut patches = one.patches_from_prepared(doc, &entry.image_path, seed)?;
        Ok(patches.remove(0))
    }
}

//! Synthetic handwriting generator. Each "writer" is a parametric stroke
//! style plus a private alphabet of stroke motifs; documents are rendered
//! as line-text pages with optional blotch/texture noise. Everything is
//! seeded and deterministic, so datasets regenerate bit-for-bit and
//! writer identity is carried purely by style.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{io, GrayImage};
use crate::text_aoi::ComponentBox;
use crate::{Error, Result};

/// Style parameter bounds (documented contract):
/// slant in [-0.25, 0.25] rad, stroke_width in [1.2, 2.8] px,
/// letter_spacing in [2, 6] px, curvature in [0.3, 1.0],
/// baseline_wobble in [0, 1.5] px.
pub const SLANT_RANGE: (f64, f64) = (-0.25, 0.25);
pub const STROKE_WIDTH_RANGE: (f64, f64) = (1.2, 2.8);
pub const LETTER_SPACING_RANGE: (f64, f64) = (2.0, 6.0);
pub const CURVATURE_RANGE: (f64, f64) = (0.3, 1.0);
pub const WOBBLE_RANGE: (f64, f64) = (0.0, 1.5);

const GLYPHS_PER_WRITER: usize = 12;
const GLYPH_W: f64 = 14.0;
const GLYPH_H: f64 = 24.0;
const LINE_GAP: f64 = 10.0;
const BG_LEVEL: f64 = 0.88;

/// One quadratic curve in glyph-box coordinates ([0,1] x [0,1]).
#[derive(Debug, Clone, PartialEq)]
struct Stroke {
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
}

impl Stroke {
    fn at(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Glyph {
    strokes: Vec<Stroke>,
}

/// A writer's rendering parameters and private stroke-motif alphabet,
/// both derived deterministically from the writer seed.
#[derive(Debug, Clone, PartialEq)]
pub struct WriterStyle {
    pub slant: f64,
    pub stroke_width: f64,
    pub letter_spacing: f64,
    pub curvature: f64,
    pub baseline_wobble: f64,
    glyphs: Vec<Glyph>,
}

fn gen_range(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    rng.gen_range(r.0..r.1)
}

/// Deterministic style for a writer seed. Distinct seeds yield distinct
/// parameter tuples with overwhelming probability (continuous draws).
pub fn gen_style(writer_seed: u64) -> WriterStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(writer_seed);
    let slant = gen_range(&mut rng, SLANT_RANGE);
    let stroke_width = gen_range(&mut rng, STROKE_WIDTH_RANGE);
    let letter_spacing = gen_range(&mut rng, LETTER_SPACING_RANGE);
    let curvature = gen_range(&mut rng, CURVATURE_RANGE);
    let baseline_wobble = gen_range(&mut rng, WOBBLE_RANGE);

    let mut glyphs = Vec::with_capacity(GLYPHS_PER_WRITER);
    for _ in 0..GLYPHS_PER_WRITER {
        let n_strokes = rng.gen_range(2..=4);
        let mut strokes = Vec::with_capacity(n_strokes);
        for _ in 0..n_strokes {
            let p0 = (rng.gen::<f64>(), rng.gen::<f64>());
            let p2 = (rng.gen::<f64>(), rng.gen::<f64>());
            // Control point offset from the chord midpoint, scaled by the
            // style's curvature.
            let mid = ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0);
            let off = (rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let p1 = (mid.0 + curvature * off.0, mid.1 + curvature * off.1);
            strokes.push(Stroke { p0, p1, p2 });
        }
        glyphs.push(normalize_glyph(Glyph { strokes }));
    }
    WriterStyle {
        slant,
        stroke_width,
        letter_spacing,
        curvature,
        baseline_wobble,
        glyphs,
    }
}

/// Rescale a glyph so its sampled extent fills [0.1, 0.9] of the box in
/// both axes; keeps line coverage (and hence inter-line gaps) predictable.
fn normalize_glyph(glyph: Glyph) -> Glyph {
    let mut min = (f64::MAX, f64::MAX);
    let mut max = (f64::MIN, f64::MIN);
    for s in &glyph.strokes {
        for i in 0..=16 {
            let p = s.at(i as f64 / 16.0);
            min.0 = min.0.min(p.0);
            min.1 = min.1.min(p.1);
            max.0 = max.0.max(p.0);
            max.1 = max.1.max(p.1);
        }
    }
    let scale = |v: f64, lo: f64, hi: f64| {
        if hi - lo < 1e-9 {
            0.5
        } else {
            0.1 + 0.8 * (v - lo) / (hi - lo)
        }
    };
    let map = |p: (f64, f64)| (scale(p.0, min.0, max.0), scale(p.1, min.1, max.1));
    Glyph {
        strokes: glyph
            .strokes
            .into_iter()
            .map(|s| Stroke {
                p0: map(s.p0),
                p1: map(s.p1),
                p2: map(s.p2),
            })
            .collect(),
    }
}

/// Inclusive ground-truth bounds of the rendered text block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl TruthBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

/// Fraction of the truth box covered by a selected component box.
pub fn coverage_fraction(aoi: &ComponentBox, truth: &TruthBox) -> f64 {
    let x0 = aoi.x0.max(truth.x0);
    let y0 = aoi.y0.max(truth.y0);
    let x1 = aoi.x1.min(truth.x1);
    let y1 = aoi.y1.min(truth.y1);
    if x1 < x0 || y1 < y0 {
        return 0.0;
    }
    ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64 / truth.area() as f64
}

/// A rendered page plus the ground-truth bounds of its text ink.
#[derive(Debug, Clone)]
pub struct RenderedPage {
    pub image: GrayImage,
    pub text_box: TruthBox,
}

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    // Running bounds of stamped text ink.
    bounds: Option<(usize, usize, usize, usize)>,
}

impl Canvas {
    /// Stamp an anti-aliased disc of the given radius; ink darkens only.
    /// `track` extends the text bounds (noise blotches don't track).
    fn stamp(&mut self, cx: f64, cy: f64, radius: f64, ink: f64, track: bool) {
        let r = radius.ceil() as i64 + 1;
        let (icx, icy) = (cx.round() as i64, cy.round() as i64);
        for y in icy - r..=icy + r {
            for x in icx - r..=icx + r {
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let alpha = (radius + 0.5 - d).clamp(0.0, 1.0);
                if alpha == 0.0 {
                    continue;
                }
                let idx = y as usize * self.width + x as usize;
                let blended = self.pixels[idx] * (1.0 - alpha) + ink * alpha;
                self.pixels[idx] = self.pixels[idx].min(blended);
                if track && alpha > 0.3 {
                    let (x, y) = (x as usize, y as usize);
                    self.bounds = Some(match self.bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
    }
}

/// Render one document page. `page` is (width, height); `noise` in [0, 1]
/// adds background texture, dark blotches, and specks. Deterministic in
/// (style, content_seed, page, noise).
pub fn render_document(
    style: &WriterStyle,
    content_seed: u64,
    page: (usize, usize),
    noise: f64,
) -> Result<RenderedPage> {
    let (w, h) = page;
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidParam(format!(
            "noise level must be in [0,1], got {noise}"
        )));
    }
    let margin_x = (w as f64 / 12.0).max(10.0);
    let margin_y = (h as f64 / 12.0).max(10.0);
    let line_advance = GLYPH_H + LINE_GAP;
    let advance = GLYPH_W + style.letter_spacing;
    let text_w = w as f64 - 2.0 * margin_x;
    let text_h = h as f64 - 2.0 * margin_y;
    if text_h < 3.0 * line_advance || text_w < 4.0 * advance {
        return Err(Error::InvalidParam(format!(
            "page {w}x{h} too small for 3 text lines of 4 glyphs"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(content_seed);
    let mut canvas = Canvas {
        width: w,
        height: h,
        pixels: vec![BG_LEVEL; w * h],
        bounds: None,
    };

    // Background texture comes first so text ink wins where they overlap.
    if noise > 0.0 {
        for p in canvas.pixels.iter_mut() {
            *p += rng.gen_range(-0.06..0.06) * noise;
        }
    }

    let n_lines = ((text_h - GLYPH_H) / line_advance).floor() as usize + 1;
    for line in 0..n_lines {
        let baseline = margin_y + line as f64 * line_advance;
        let mut x = margin_x;
        let mut word_left = rng.gen_range(2..=5usize);
        while x + GLYPH_W <= w as f64 - margin_x {
            let glyph = &style.glyphs[rng.gen_range(0..style.glyphs.len())];
            let wobble = style.baseline_wobble * rng.gen_range(-1.0..1.0);
            let ink = rng.gen_range(0.06..0.18);
            for stroke in &glyph.strokes {
                // Enough steps that consecutive stamps overlap.
                let steps = (2.5 * (GLYPH_W + GLYPH_H)) as usize;
                for i in 0..=steps {
                    let (gx, gy) = stroke.at(i as f64 / steps as f64);
                    let ly = gy * GLYPH_H;
                    // Shear around the glyph's vertical center.
                    let lx = gx * GLYPH_W + style.slant * (GLYPH_H / 2.0 - ly);
                    canvas.stamp(
                        x + lx,
                        baseline + ly + wobble,
                        style.stroke_width / 2.0,
                        0.04 + ink,
                        true,
                    );
                }
            }
            x += advance;
            word_left -= 1;
            if word_left == 0 {
                x += rng.gen_range(4.0..10.0);
                word_left = rng.gen_range(2..=5);
            }
        }
    }

    // Degradations: dark blotches and isolated specks.
    if noise > 0.0 {
        let blotches = (noise * 8.0).round() as usize;
        for _ in 0..blotches {
            let bx = rng.gen_range(0.0..w as f64);
            let by = rng.gen_range(0.0..h as f64);
            let br = rng.gen_range(3.0..10.0);
            let level = rng.gen_range(0.3..0.6);
            canvas.stamp(bx, by, br, level, false);
        }
        let specks = (noise * 200.0).round() as usize;
        for _ in 0..specks {
            let sx = rng.gen_range(0..w);
            let sy = rng.gen_range(0..h);
            let v = if rng.gen_bool(0.5) { 0.2 } else { 1.0 };
            canvas.pixels[sy * w + sx] = v;
        }
    }

    for p in canvas.pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    let bounds = canvas.bounds.expect("layout guarantees at least one glyph");
    Ok(RenderedPage {
        image: GrayImage::new(w, h, canvas.pixels)?,
        text_box: TruthBox {
            x0: bounds.0,
            y0: bounds.1,
            x1: bounds.2,
            y1: bounds.3,
        },
    })
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    pub n_writers: usize,
    pub docs_per_writer: usize,
    pub page_width: usize,
    pub page_height: usize,
    pub noise: f64,
    pub seed: u64,
    /// true: split by writer (train and test writers disjoint, the
    /// zero-shot protocol); false: split each writer's documents.
    pub zero_shot: bool,
    pub train_fraction: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_writers: 20,
            docs_per_writer: 6,
            page_width: 360,
            page_height: 480,
            noise: 0.2,
            seed: 7,
            zero_shot: true,
            train_fraction: 0.5,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_writers < 2 {
            return Err(Error::InvalidParam("need at least 2 writers".into()));
        }
        if self.docs_per_writer < 1 {
            return Err(Error::InvalidParam("need at least 1 document per writer".into()));
        }
        if !self.zero_shot && self.docs_per_writer < 2 {
            return Err(Error::InvalidParam(
                "document-level splits need at least 2 documents per writer".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidParam(format!(
                "noise level must be in [0,1], got {}",
                self.noise
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// What [`gen_dataset`] wrote.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    pub image_count: usize,
}

/// splitmix64; decorrelates derived seeds from the master seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed: decorrelated per (tag, index) stream off one
/// master seed. Shared by dataset generation and the training loop.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    mix(mix(master ^ tag.wrapping_mul(0xA24BAED4963EE407)) ^ index)
}

/// Render `n_writers x docs_per_writer` pages into `out_dir` along with
/// `manifest.csv` (columns image_path,writer_id,split; paths relative to
/// the manifest) and `truth_boxes.json` (file name -> text bounds).
/// Regeneration with identical parameters is byte-identical.
pub fn gen_dataset(params: &DatasetParams, out_dir: &Path) -> Result<GeneratedDataset> {
    params.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_train = ((params.n_writers as f64 * params.train_fraction).round() as usize)
        .clamp(1, params.n_writers - 1);
    let doc_train = if params.zero_shot {
        0 // unused
    } else {
        ((params.docs_per_writer as f64 * params.train_fraction).round() as usize)
            .clamp(1, params.docs_per_writer - 1)
    };

    let mut manifest = String::from("image_path,writer_id,split\n");
    let mut truth = BTreeMap::new();
    let mut count = 0usize;
    for writer in 0..params.n_writers {
        let style = gen_style(derive_seed(params.seed, 1, writer as u64));
        let writer_id = format!("w{writer:03}");
        for doc in 0..params.docs_per_writer {
            let content_seed = derive_seed(
                params.seed,
                2,
                (writer * params.docs_per_writer + doc) as u64,
            );
            let page = render_document(
                &style,
                content_seed,
                (params.page_width, params.page_height),
                params.noise,
            )?;
            let name = format!("{writer_id}_d{doc:02}.png");
            io::save_gray_png(&page.image, &out_dir.join(&name))?;
            let split = if params.zero_shot {
                if writer < n_train {
                    "train"
                } else {
                    "test"
                }
            } else if doc < doc_train {
                "train"
            } else {
                "test"
            };
            manifest.push_str(&format!("{name},{writer_id},{split}\n"));
            truth.insert(name, page.text_box);
            count += 1;
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let truth_path = out_dir.join("truth_boxes.json");
    let mut f = std::fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    serde_json::to_writer_pretty(&mut f, &truth)
        .map_err(|e| Error::format(&truth_path, e.to_string()))?;
    f.write_all(b"\n").map_err(|e| Error::io(&truth_path, e))?;
    Ok(GeneratedDataset {
        manifest_path,
        truth_path,
        image_count: count,
    })
}

/// Load a `truth_boxes.json` written by [`gen_dataset`].
pub fn load_truth_boxes(path: &Path) -> Result<BTreeMap<String, TruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarize::BinarizerSpec;
    use crate::text_aoi::{select_aoi, AoiParams};

    #[test]
    fn same_seed_same_style() {
        assert_eq!(gen_style(42), gen_style(42));
        assert_ne!(gen_style(42), gen_style(43));
    }

    #[test]
    fn hundred_seeds_mostly_distinct() {
        let mut tuples = std::collections::BTreeSet::new();
        for seed in 0..100u64 {
            let s = gen_style(seed);
            tuples.insert([
                s.slant.to_bits(),
                s.stroke_width.to_bits(),
                s.letter_spacing.to_bits(),
                s.curvature.to_bits(),
                s.baseline_wobble.to_bits(),
            ]);
        }
        assert!(tuples.len() >= 99, "only {} distinct styles", tuples.len());
    }

    #[test]
    fn style_parameters_in_bounds() {
        for seed in 0..50u64 {
            let s = gen_style(seed);
            assert!(s.slant >= SLANT_RANGE.0 && s.slant <= SLANT_RANGE.1);
            assert!(s.stroke_width >= STROKE_WIDTH_RANGE.0 && s.stroke_width <= STROKE_WIDTH_RANGE.1);
            assert!(
                s.letter_spacing >= LETTER_SPACING_RANGE.0
                    && s.letter_spacing <= LETTER_SPACING_RANGE.1
            );
            assert!(s.curvature >= CURVATURE_RANGE.0 && s.curvature <= CURVATURE_RANGE.1);
            assert!(s.baseline_wobble >= WOBBLE_RANGE.0 && s.baseline_wobble <= WOBBLE_RANGE.1);
            assert_eq!(s.glyphs.len(), GLYPHS_PER_WRITER);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let style = gen_style(5);
        let a = render_document(&style, 11, (240, 320), 0.0).unwrap();
        let b = render_document(&style, 11, (240, 320), 0.0).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.text_box, b.text_box);
        let c = render_document(&style, 11, (240, 320), 0.5).unwrap();
        let d = render_document(&style, 11, (240, 320), 0.5).unwrap();
        assert_eq!(c.image, d.image);
        // Noise actually changes the page.
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn ink_fraction_in_documented_band() {
        use crate::binarize::otsu;
        for seed in [3u64, 17, 91] {
            let style = gen_style(seed);
            let page = render_document(&style, seed ^ 0xBEEF, (360, 480), 0.0).unwrap();
            let mask = otsu(&page.image).unwrap();
            let frac = mask.ink_count() as f64 / (360.0 * 480.0);
            assert!(
                (0.02..=0.25).contains(&frac),
                "seed {seed}: ink fraction {frac}"
            );
        }
    }

    #[test]
    fn page_too_small_errors() {
        let style = gen_style(1);
        assert!(render_document(&style, 1, (240, 80), 0.0).is_err());
        assert!(render_document(&style, 1, (60, 320), 0.0).is_err());
    }

    #[test]
    fn aoi_covers_rendered_text() {
        let params = AoiParams {
            dilation: (25, 25),
            top_k: 1,
        };
        for seed in [2u64, 8, 21] {
            let style = gen_style(seed);
            let page = render_document(&style, seed.wrapping_mul(31), (360, 480), 0.0).unwrap();
            let crops =
                select_aoi(&page.image, "p.png", &BinarizerSpec::Otsu, &params).unwrap();
            let cov = coverage_fraction(&crops[0].source_box, &page.text_box);
            assert!(cov >= 0.9, "seed {seed}: coverage {cov}");
        }
    }

    #[test]
    fn truth_box_is_tight_around_ink() {
        use crate::binarize::otsu;
        let style = gen_style(9);
        let page = render_document(&style, 4, (300, 400), 0.0).unwrap();
        let mask = otsu(&page.image).unwrap();
        // Every ink pixel lies inside the reported truth box (the box may
        // be a touch wider than the mask because of anti-aliased tails).
        for y in 0..400 {
            for x in 0..300 {
                if mask.get(x, y) {
                    assert!(
                        x >= page.text_box.x0
                            && x <= page.text_box.x1
                            && y >= page.text_box.y0
                            && y <= page.text_box.y1,
                        "ink at ({x},{y}) outside {:?}",
                        page.text_box
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_counts_and_zero_shot_split() {
        let dir = tempfile::tempdir().unwrap();
        let params = DatasetParams {
            n_writers: 4,
            docs_per_writer: 3,
            page_width: 240,
            page_height: 320,
            noise: 0.1,
            seed: 13,
            zero_shot: true,
            train_fraction: 0.5,
        };
        let out = gen_dataset(&params, dir.path()).unwrap();
        assert_eq!(out.image_count, 12);

        let manifest = std::fs::read_to_string(&out.manifest_path).unwrap();
        let rows: Vec<&str> = manifest.lines().skip(1).collect();
        assert_eq!(rows.len(), 12);
        let mut train_writers = std::collections::BTreeSet::new();
        let mut test_writers = std::collections::BTreeSet::new();
        for row in &rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 3);
            assert!(dir.path().join(cols[0]).exists(), "missing {}", cols[0]);
            match cols[2] {
                "train" => train_writers.insert(cols[1].to_string()),
                "test" => test_writers.insert(cols[1].to_string()),
                other => panic!("bad split {other}"),
            };
        }
        assert_eq!(train_writers.len(), 2);
        assert_eq!(test_writers.len(), 2);
        assert!(train_writers.is_disjoint(&test_writers));

        let truth = load_truth_boxes(&out.truth_path).unwrap();
        assert_eq!(truth.len(), 12);
    }

    #[test]
    fn document_split_keeps_writers_on_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let params = DatasetParams {
            n_writers: 3,
            docs_per_writer: 4,
            page_width: 240,
            page_height: 320,
            noise: 0.0,
            seed: 2,
            zero_shot: false,
            train_fraction: 0.5,
        };
        gen_dataset(&params, dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        for writer in ["w000", "w001", "w002"] {
            let train = manifest
                .lines()
                .filter(|l| l.contains(writer) && l.ends_with("train"))
                .count();
            let test = manifest
                .lines()
                .filter(|l| l.contains(writer) && l.ends_with("test"))
                .count();
            assert_eq!(train, 2, "{writer}");
            assert_eq!(test, 2, "{writer}");
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let params = DatasetParams {
            n_writers: 2,
            docs_per_writer: 2,
            page_width: 240,
            page_height: 320,
            noise: 0.3,
            seed: 77,
            zero_shot: true,
            train_fraction: 0.5,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = gen_dataset(&params, dir_a.path()).unwrap();
        let b = gen_dataset(&params, dir_b.path()).unwrap();
        assert_eq!(
            std::fs::read(&a.manifest_path).unwrap(),
            std::fs::read(&b.manifest_path).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.truth_path).unwrap(),
            std::fs::read(&b.truth_path).unwrap()
        );
        assert_eq!(
            std::fs::read(dir_a.path().join("w000_d00.png")).unwrap(),
            std::fs::read(dir_b.path().join("w000_d00.png")).unwrap()
        );
    }

    #[test]
    fn dataset_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = DatasetParams {
            n_writers: 1,
            ..DatasetParams::default()
        };
        assert!(gen_dataset(&p, dir.path()).is_err());
        p.n_writers = 4;
        p.noise = 1.5;
        assert!(gen_dataset(&p, dir.path()).is_err());
        p.noise = 0.2;
        p.zero_shot = false;
        p.docs_per_writer = 1;
        assert!(gen_dataset(&p, dir.path()).is_err());
    }

    #[test]
    fn different_writers_render_differently() {
        let a = render_document(&gen_style(1), 5, (240, 320), 0.0).unwrap();
        let b = render_document(&gen_style(2), 5, (240, 320), 0.0).unwrap();
        assert_ne!(a.image, b.image);
    }
}

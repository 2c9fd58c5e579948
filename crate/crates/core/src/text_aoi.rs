//! Text area-of-interest selection: dilate the ink mask so nearby strokes
//! and lines fuse, label the connected components, rank their bounding
//! boxes by area, and crop the original image to the winners.

use serde::{Deserialize, Serialize};

use crate::binarize::BinarizerSpec;
use crate::imaging::{dilate, BinaryMask, GrayImage};
use crate::{Error, Result};

/// One connected component of a (dilated) ink mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentBox {
    pub label: usize,
    /// Inclusive pixel bounds.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub pixel_count: usize,
    pub bbox_area: usize,
}

impl ComponentBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Parameters of the selection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AoiParams {
    /// Dilation element size as (height, width) in pixels.
    pub dilation: (usize, usize),
    /// Number of top-ranked boxes to keep.
    pub top_k: usize,
}

impl Default for AoiParams {
    fn default() -> Self {
        AoiParams {
            dilation: (25, 25),
            top_k: 1,
        }
    }
}

impl AoiParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidParam("aoi top_k must be >= 1".into()));
        }
        if self.dilation.0 < 1 || self.dilation.1 < 1 {
            return Err(Error::InvalidParam(format!(
                "aoi dilation must be >= (1,1), got {:?}",
                self.dilation
            )));
        }
        Ok(())
    }
}

/// A crop of the source image together with where it came from.
#[derive(Debug, Clone)]
pub struct AoiCrop {
    pub image: GrayImage,
    pub source_box: ComponentBox,
    pub source_path: String,
}

/// Label the 8-connected ink components of `mask`. Returns the label
/// raster (0 = background, components numbered from 1 in row-major
/// first-encounter order) and one [`ComponentBox`] per component.
pub fn connected_components(mask: &BinaryMask) -> (Vec<usize>, Vec<ComponentBox>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0usize; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = boxes.len() + 1;
        let (sx, sy) = (start % w, start / w);
        let mut bx = ComponentBox {
            label,
            x0: sx,
            y0: sy,
            x1: sx,
            y1: sy,
            pixel_count: 0,
            bbox_area: 0,
        };
        labels[start] = label;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            bx.pixel_count += 1;
            bx.x0 = bx.x0.min(x);
            bx.x1 = bx.x1.max(x);
            bx.y0 = bx.y0.min(y);
            bx.y1 = bx.y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if mask.bits()[nidx] && labels[nidx] == 0 {
                        labels[nidx] = label;
                        stack.push(nidx);
                    }
                }
            }
        }
        bx.bbox_area = bx.width() * bx.height();
        boxes.push(bx);
    }
    (labels, boxes)
}

/// Sort boxes by bounding-box area descending; ties broken by pixel count
/// descending, then by (y0, x0) ascending. Returns the first
/// `min(top_k, len)` boxes.
pub fn rank_boxes(mut boxes: Vec<ComponentBox>, top_k: usize) -> Vec<ComponentBox> {
    boxes.sort_by(|a, b| {
        b.bbox_area
            .cmp(&a.bbox_area)
            .then(b.pixel_count.cmp(&a.pixel_count))
            .then(a.y0.cmp(&b.y0))
            .then(a.x0.cmp(&b.x0))
    });
    boxes.truncate(top_k);
    boxes
}

/// Binarize, dilate, label, rank, crop: the crop(s) of `img` under the
/// top-ranked dilated-component boxes. `source` is the image's path (or
/// other identifier); its file stem feeds external-mask lookup and the
/// path is recorded on each crop.
pub fn select_aoi(
    img: &GrayImage,
    source: &str,
    binarizer: &BinarizerSpec,
    params: &AoiParams,
) -> Result<Vec<AoiCrop>> {
    params.validate()?;
    if img.width() < 32 || img.height() < 32 {
        return Err(Error::InvalidParam(format!(
            "image {}x{} too small for text region selection (min dim 32)",
            img.width(),
            img.height()
        )));
    }
    let stem = std::path::Path::new(source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| source.to_string());
    let mask = binarizer.run(img, &stem)?;
    if mask.ink_count() == 0 {
        return Err(Error::NoTextRegions);
    }
    let dilated = dilate(&mask, params.dilation)?;
    let (_, boxes) = connected_components(&dilated);
    let ranked = rank_boxes(boxes, params.top_k);
    ranked
        .into_iter()
        .map(|b| {
            let image = img.crop(b.x0, b.y0, b.width(), b.height())?;
            Ok(AoiCrop {
                image,
                source_box: b,
                source_path: source.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from_rows(rows: &[&[u8]]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        BinaryMask::new(w, h, bits).unwrap()
    }

    /// Recursive flood fill, the slow reference labeling.
    fn flood_oracle(mask: &BinaryMask) -> Vec<usize> {
        fn fill(mask: &BinaryMask, labels: &mut [usize], x: usize, y: usize, label: usize) {
            let (w, h) = (mask.width(), mask.height());
            labels[y * w + x] = label;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && labels[ny * w + nx] == 0 {
                        fill(mask, labels, nx, ny, label);
                    }
                }
            }
        }
        let (w, h) = (mask.width(), mask.height());
        let mut labels = vec![0usize; w * h];
        let mut next = 1;
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) && labels[y * w + x] == 0 {
                    fill(mask, &mut labels, x, y, next);
                    next += 1;
                }
            }
        }
        labels
    }

    /// Canonicalize labels to first-encounter order so partitions compare
    /// independent of numbering.
    fn canonical(labels: &[usize]) -> Vec<usize> {
        let mut remap = std::collections::HashMap::new();
        labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    let next = remap.len() + 1;
                    *remap.entry(l).or_insert(next)
                }
            })
            .collect()
    }

    #[test]
    fn cca_two_components() {
        let mask = mask_from_rows(&[&[1, 1, 0], &[0, 0, 0], &[0, 1, 1]]);
        let (labels, boxes) = connected_components(&mask);
        assert_eq!(boxes.len(), 2);
        assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (0, 0, 1, 0));
        assert_eq!((boxes[1].x0, boxes[1].y0, boxes[1].x1, boxes[1].y1), (1, 2, 2, 2));
        assert_eq!(boxes[0].pixel_count, 2);
        assert_eq!(boxes[0].bbox_area, 2);
        assert_eq!(canonical(&labels), canonical(&flood_oracle(&mask)));
    }

    #[test]
    fn cca_all_ink_is_one_component() {
        let mask = BinaryMask::new(5, 4, vec![true; 20]).unwrap();
        let (_, boxes) = connected_components(&mask);
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (0, 0, 4, 3));
        assert_eq!(boxes[0].pixel_count, 20);
    }

    #[test]
    fn cca_diagonal_joins() {
        let mask = mask_from_rows(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]);
        let (_, boxes) = connected_components(&mask);
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].pixel_count, 3);
    }

    #[test]
    fn cca_empty_mask_is_empty_list() {
        let mask = BinaryMask::ink_free(4, 4).unwrap();
        let (labels, boxes) = connected_components(&mask);
        assert!(boxes.is_empty());
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn cca_matches_flood_fill_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let density = rng.gen_range(0.1..0.9);
            let bits: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
            let mask = BinaryMask::new(32, 32, bits).unwrap();
            let (labels, boxes) = connected_components(&mask);
            let oracle = flood_oracle(&mask);
            assert_eq!(canonical(&labels), canonical(&oracle));
            assert_eq!(boxes.len(), *oracle.iter().max().unwrap_or(&0));
            // Per-component pixel counts agree with the raster.
            for b in &boxes {
                let n = labels.iter().filter(|&&l| l == b.label).count();
                assert_eq!(n, b.pixel_count);
            }
        }
    }

    fn boxed(label: usize, x0: usize, y0: usize, w: usize, h: usize, pc: usize) -> ComponentBox {
        ComponentBox {
            label,
            x0,
            y0,
            x1: x0 + w - 1,
            y1: y0 + h - 1,
            pixel_count: pc,
            bbox_area: w * h,
        }
    }

    #[test]
    fn rank_prefers_area_then_pixels_then_position() {
        let boxes = vec![
            boxed(1, 0, 0, 3, 4, 10), // area 12
            boxed(2, 9, 9, 8, 5, 20), // area 40, fewer pixels
            boxed(3, 5, 5, 8, 5, 30), // area 40, more pixels
        ];
        let ranked = rank_boxes(boxes, 2);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].label, 3);
        assert_eq!(ranked[1].label, 2);
    }

    #[test]
    fn rank_ties_fall_back_to_position() {
        let boxes = vec![
            boxed(1, 7, 3, 4, 4, 9),
            boxed(2, 2, 3, 4, 4, 9), // same y0, smaller x0
            boxed(3, 2, 1, 4, 4, 9), // smaller y0 wins overall
        ];
        let ranked = rank_boxes(boxes, 3);
        assert_eq!(ranked[0].label, 3);
        assert_eq!(ranked[1].label, 2);
        assert_eq!(ranked[2].label, 1);
    }

    #[test]
    fn rank_edge_cases() {
        assert!(rank_boxes(Vec::new(), 3).is_empty());
        let boxes = vec![boxed(1, 0, 0, 2, 2, 4), boxed(2, 5, 5, 3, 3, 9)];
        let ranked = rank_boxes(boxes, 10);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].label, 2);
    }

    /// White page with five dark text lines and one stray dot far below.
    fn page_with_lines_and_dot() -> GrayImage {
        let mut pixels = vec![0.95; 220 * 220];
        for line in 0..5 {
            let y_top = 40 + line * 20;
            for y in y_top..y_top + 4 {
                for x in 30..170 {
                    pixels[y * 220 + x] = 0.05;
                }
            }
        }
        pixels[200 * 220 + 200] = 0.05; // stray dot
        GrayImage::new(220, 220, pixels).unwrap()
    }

    #[test]
    fn select_aoi_takes_text_block_not_dot() {
        let img = page_with_lines_and_dot();
        let params = AoiParams {
            dilation: (25, 25),
            top_k: 1,
        };
        let crops = select_aoi(&img, "page.png", &BinarizerSpec::Otsu, &params).unwrap();
        assert_eq!(crops.len(), 1);
        let b = &crops[0].source_box;
        // Covers the whole text block...
        assert!(b.x0 <= 30 && b.x1 >= 169 && b.y0 <= 40 && b.y1 >= 123, "{b:?}");
        // ...but not the stray dot.
        assert!(!b.contains(200, 200), "{b:?}");
        assert_eq!(crops[0].image.width(), b.width());
        assert_eq!(crops[0].image.height(), b.height());
        assert_eq!(crops[0].source_path, "page.png");
    }

    #[test]
    fn select_aoi_two_blocks_and_tie_break() {
        // Two equal 40x20 blocks, vertical gap 60 > dilation 25.
        let mut pixels = vec![0.95; 150 * 200];
        for (x0, y0) in [(20usize, 20usize), (20, 100)] {
            for y in y0..y0 + 20 {
                for x in x0..x0 + 40 {
                    pixels[y * 150 + x] = 0.05;
                }
            }
        }
        let img = GrayImage::new(150, 200, pixels).unwrap();
        let both = select_aoi(
            &img,
            "two.png",
            &BinarizerSpec::Otsu,
            &AoiParams {
                dilation: (25, 25),
                top_k: 2,
            },
        )
        .unwrap();
        assert_eq!(both.len(), 2);
        let single = select_aoi(
            &img,
            "two.png",
            &BinarizerSpec::Otsu,
            &AoiParams {
                dilation: (25, 25),
                top_k: 1,
            },
        )
        .unwrap();
        // Equal area and pixel count: smaller y0 wins.
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].source_box.y0, both.iter().map(|c| c.source_box.y0).min().unwrap());
        assert!(single[0].source_box.contains(25, 25));
    }

    #[test]
    fn select_aoi_blank_page_errors() {
        let img = GrayImage::constant(64, 64, 0.9).unwrap();
        let err = select_aoi(
            &img,
            "blank.png",
            &BinarizerSpec::Otsu,
            &AoiParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoTextRegions));
        assert_eq!(err.to_string(), "no text regions found");
    }

    #[test]
    fn select_aoi_rejects_tiny_images() {
        let img = GrayImage::constant(31, 64, 0.2).unwrap();
        assert!(select_aoi(&img, "t.png", &BinarizerSpec::Otsu, &AoiParams::default()).is_err());
    }

    #[test]
    fn dilation_never_splits_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let bits: Vec<bool> = (0..40 * 40).map(|_| rng.gen_bool(0.08)).collect();
            let mask = BinaryMask::new(40, 40, bits).unwrap();
            let mut prev = usize::MAX;
            for d in [1usize, 3, 7, 13] {
                let dilated = dilate(&mask, (d, d)).unwrap();
                let (_, boxes) = connected_components(&dilated);
                assert!(boxes.len() <= prev, "d={d} grew the component count");
                prev = boxes.len();
            }
        }
    }

    #[test]
    fn crops_stay_in_bounds_and_touch_ink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            // Sparse random dark dots on a light page.
            let mut pixels = vec![0.9; 64 * 64];
            for _ in 0..rng.gen_range(3..30) {
                let x = rng.gen_range(0..64);
                let y = rng.gen_range(0..64);
                pixels[y * 64 + x] = 0.1;
            }
            let img = GrayImage::new(64, 64, pixels).unwrap();
            let params = AoiParams {
                dilation: (rng.gen_range(1..9), rng.gen_range(1..9)),
                top_k: 3,
            };
            let crops = select_aoi(&img, "r.png", &BinarizerSpec::Otsu, &params).unwrap();
            assert!(!crops.is_empty());
            let mask = BinarizerSpec::Otsu.run(&img, "r").unwrap();
            for crop in crops {
                let b = &crop.source_box;
                assert!(b.x1 < img.width() && b.y1 < img.height());
                let mut ink_inside = false;
                for y in b.y0..=b.y1 {
                    for x in b.x0..=b.x1 {
                        ink_inside |= mask.get(x, y);
                    }
                }
                assert!(ink_inside, "crop {b:?} has no undilated ink");
            }
        }
    }
}

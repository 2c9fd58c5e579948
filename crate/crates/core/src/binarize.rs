//! Text-mask binarization: global Otsu, local Sauvola, and import of
//! externally produced masks, plus F-measure scoring of a mask against a
//! reference.
//!
//! Ink is dark everywhere internally: a mask bit is set where the pixel is
//! *below* threshold. `import_mask` adapts external files that use the
//! opposite convention.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::{io, BinaryMask, GrayImage};
use crate::{Error, Result};

/// Sauvola's dynamic range constant for intensities in `[0, 1]`
/// (the canonical 128 on a 0..255 scale).
const SAUVOLA_R: f64 = 0.5;

const HIST_BINS: usize = 256;

/// Which binarizer to run, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BinarizerSpec {
    Otsu,
    Sauvola { window: usize, k: f64 },
    /// Look up a precomputed mask file next to the image. `{stem}` in the
    /// template is replaced by the image's file stem; `ink_white` describes
    /// the file's convention (see [`import_mask`]).
    External {
        path_template: String,
        ink_white: bool,
    },
}

impl BinarizerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BinarizerSpec::Otsu => Ok(()),
            BinarizerSpec::Sauvola { window, k } => {
                if *window < 3 || *window % 2 == 0 {
                    return Err(Error::InvalidParam(format!(
                        "sauvola window must be odd and >= 3, got {window}"
                    )));
                }
                if !(*k > 0.0 && *k < 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "sauvola k must be in (0, 1), got {k}"
                    )));
                }
                Ok(())
            }
            BinarizerSpec::External { path_template, .. } => {
                if path_template.is_empty() {
                    return Err(Error::InvalidParam("empty external mask path template".into()));
                }
                Ok(())
            }
        }
    }

    /// Run the configured binarizer on `img`. `stem` feeds the `{stem}`
    /// placeholder of the external-mask template and is ignored otherwise.
    pub fn run(&self, img: &GrayImage, stem: &str) -> Result<BinaryMask> {
        self.validate()?;
        match self {
            BinarizerSpec::Otsu => otsu(img),
            BinarizerSpec::Sauvola { window, k } => sauvola(img, *window, *k),
            BinarizerSpec::External {
                path_template,
                ink_white,
            } => {
                let path = path_template.replace("{stem}", stem);
                import_mask(
                    Path::new(&path),
                    (img.width(), img.height()),
                    *ink_white,
                )
            }
        }
    }
}

fn histogram_bin(v: f64) -> usize {
    ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Global Otsu threshold over a 256-bin histogram; ink = pixel below
/// threshold. A single-valued image yields an all-background mask.
pub fn otsu(img: &GrayImage) -> Result<BinaryMask> {
    let mut hist = [0usize; HIST_BINS];
    for &v in img.pixels() {
        hist[histogram_bin(v)] += 1;
    }
    let total = img.pixels().len() as f64;
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| b as f64 * c as f64)
        .sum();

    // Pick the split (bins <= k vs > k) maximizing between-class variance;
    // smallest k wins ties for determinism.
    let mut best_k = None;
    let mut best_var = 0.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (k, &c) in hist.iter().enumerate().take(HIST_BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = Some(k);
        }
    }

    let bits = match best_k {
        None => vec![false; img.pixels().len()],
        Some(k) => {
            let threshold = (k + 1) as f64 / HIST_BINS as f64;
            img.pixels().iter().map(|&v| v < threshold).collect()
        }
    };
    BinaryMask::new(img.width(), img.height(), bits)
}

/// Sauvola local threshold `t = mu * (1 + k * (sigma / R - 1))` with the
/// window mean and standard deviation computed from integral images; the
/// window is clipped at the borders. Ink = pixel below its local threshold.
pub fn sauvola(img: &GrayImage, window: usize, k: f64) -> Result<BinaryMask> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParam(format!(
            "sauvola window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if window > w || window > h {
        return Err(Error::InvalidParam(format!(
            "sauvola window {window} larger than image {w}x{h}"
        )));
    }

    // Integral images of values and squares, (w+1) x (h+1).
    let mut sum = vec![0.0f64; (w + 1) * (h + 1)];
    let mut sq = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        let mut row_sq = 0.0;
        for x in 0..w {
            let v = img.get(x, y);
            row_sum += v;
            row_sq += v * v;
            sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row_sum;
            sq[(y + 1) * (w + 1) + x + 1] = sq[y * (w + 1) + x + 1] + row_sq;
        }
    }
    let rect = |ii: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| -> f64 {
        // Inclusive pixel rect, exclusive integral indices.
        ii[(y1 + 1) * (w + 1) + x1 + 1] + ii[y0 * (w + 1) + x0]
            - ii[y0 * (w + 1) + x1 + 1]
            - ii[(y1 + 1) * (w + 1) + x0]
    };

    let r = (window - 1) / 2;
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
            let mean = rect(&sum, x0, y0, x1, y1) / area;
            let var = (rect(&sq, x0, y0, x1, y1) / area - mean * mean).max(0.0);
            let threshold = mean * (1.0 + k * (var.sqrt() / SAUVOLA_R - 1.0));
            bits.push(img.get(x, y) < threshold);
        }
    }
    BinaryMask::new(w, h, bits)
}

/// Load a mask file, checking its dimensions against the expected `(w, h)`.
/// `ink_white = true` reads nonzero samples as ink; `false` reads zero
/// samples as ink.
pub fn import_mask(path: &Path, expected_dims: (usize, usize), ink_white: bool) -> Result<BinaryMask> {
    let mask = io::load_mask(path, ink_white)?;
    if (mask.width(), mask.height()) != expected_dims {
        return Err(Error::DimMismatch {
            what: format!("mask {}", path.display()),
            expected_w: expected_dims.0,
            expected_h: expected_dims.1,
            actual_w: mask.width(),
            actual_h: mask.height(),
        });
    }
    Ok(mask)
}

/// F-measure (2PR / (P + R)) of a predicted ink mask against a reference.
/// Both masks empty scores 1.0; exactly one empty scores 0.0.
pub fn f_measure(mask: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if (mask.width(), mask.height()) != (truth.width(), truth.height()) {
        return Err(Error::DimMismatch {
            what: "f_measure".into(),
            expected_w: truth.width(),
            expected_h: truth.height(),
            actual_w: mask.width(),
            actual_h: mask.height(),
        });
    }
    let mut tp = 0usize;
    let mut pred = 0usize;
    let mut actual = 0usize;
    for (m, t) in mask.bits().iter().zip(truth.bits()) {
        pred += *m as usize;
        actual += *t as usize;
        tp += (*m && *t) as usize;
    }
    if pred == 0 && actual == 0 {
        return Ok(1.0);
    }
    if pred == 0 || actual == 0 || tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / pred as f64;
    let recall = tp as f64 / actual as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

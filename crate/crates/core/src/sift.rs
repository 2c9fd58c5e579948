//! From-scratch SIFT: Gaussian scale space, difference-of-Gaussians
//! pyramid, 26-neighbor extrema detection with contrast and edge
//! filtering, orientation assignment, and normalized 128-d descriptors
//! (Lowe, IJCV 2004). Keypoints double as patch anchors for the learned
//! embedding, so detection stays deterministic: no sub-pixel
//! interpolation, stable orderings, pure functions.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::{gaussian_blur, GrayImage};
use crate::{Error, Result};

const ORI_BINS: usize = 36;
/// Descriptor geometry: 16x16 samples, 4x4 spatial cells, 8 angle bins.
const DESC_WIDTH: usize = 16;
const DESC_CELLS: usize = 4;
const DESC_ANGLE_BINS: usize = 8;
pub const DESC_LEN: usize = DESC_CELLS * DESC_CELLS * DESC_ANGLE_BINS;
/// Clamp applied to normalized descriptor entries before renormalizing.
const DESC_CLAMP: f64 = 0.2;
/// Minimum border margin (in plane pixels) for descriptor extraction.
const DESC_MARGIN: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleSpaceParams {
    pub octaves: usize,
    /// Scales per octave; the blur ratio between successive planes is
    /// k = 2^(1/s).
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    pub contrast_thresh: f64,
    /// Maximum allowed principal-curvature ratio r; candidates whose
    /// Hessian satisfies tr^2/det >= (r+1)^2/r are discarded as edges.
    pub edge_ratio_thresh: f64,
}

impl Default for ScaleSpaceParams {
    fn default() -> Self {
        ScaleSpaceParams {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_thresh: 0.03,
            edge_ratio_thresh: 10.0,
        }
    }
}

impl ScaleSpaceParams {
    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 {
            return Err(Error::InvalidParam("octaves must be >= 1".into()));
        }
        if self.scales_per_octave < 1 {
            return Err(Error::InvalidParam("scales_per_octave must be >= 1".into()));
        }
        if !(self.base_sigma > 0.0 && self.base_sigma.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "base_sigma must be positive, got {}",
                self.base_sigma
            )));
        }
        if !(self.contrast_thresh > 0.0) || !(self.edge_ratio_thresh > 0.0) {
            return Err(Error::InvalidParam(
                "contrast and edge thresholds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        2f64.powf(1.0 / self.scales_per_octave as f64)
    }
}

/// A signed raster; difference-of-Gaussian planes take values outside the
/// `[0, 1]` range of [`GrayImage`].
#[derive(Debug, Clone)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }
}

struct Octave {
    gaussians: Vec<GrayImage>,
    dogs: Vec<Plane>,
}

/// Gaussian planes and their successive differences, one set per octave.
/// Each octave holds s+3 blurred images and s+2 difference planes; octave
/// o is decimated by 2^o relative to the input.
pub struct DogPyramid {
    octaves: Vec<Octave>,
    base_sigma: f64,
    k: f64,
}

impl DogPyramid {
    pub fn octave_count(&self) -> usize {
        self.octaves.len()
    }

    pub fn gaussians(&self, octave: usize) -> &[GrayImage] {
        &self.octaves[octave].gaussians
    }

    pub fn dogs(&self, octave: usize) -> &[Plane] {
        &self.octaves[octave].dogs
    }

    /// Original-image pixels per plane pixel at this octave.
    pub fn pixel_scale(&self, octave: usize) -> f64 {
        (1u64 << octave) as f64
    }

    /// Absolute blur of Gaussian plane `level` in octave `octave`,
    /// measured in original-image pixels.
    pub fn sigma(&self, octave: usize, level: usize) -> f64 {
        self.base_sigma * self.k.powi(level as i32) * self.pixel_scale(octave)
    }
}

/// Build the scale space. The first plane of the first octave is the
/// input blurred to `base_sigma`; later planes add incremental blurs so
/// plane i carries blur `base_sigma * k^i`; each next octave decimates
/// the plane with doubled blur. Octaves stop early once decimation would
/// drop below 16 px on a side.
pub fn build_dog_pyramid(img: &GrayImage, params: &ScaleSpaceParams) -> Result<DogPyramid> {
    params.validate()?;
    if img.width() < 16 || img.height() < 16 {
        return Err(Error::InvalidParam(format!(
            "image {}x{} too small for a scale space (min dim 16)",
            img.width(),
            img.height()
        )));
    }
    let s = params.scales_per_octave;
    let k = params.k();
    let planes = s + 3;

    let mut octaves = Vec::new();
    let mut base = gaussian_blur(img, params.base_sigma)?;
    for _ in 0..params.octaves {
        let mut gaussians = Vec::with_capacity(planes);
        gaussians.push(base.clone());
        for i in 1..planes {
            // Blur increment from k^(i-1) to k^i (in octave-relative units).
            let prev = params.base_sigma * k.powi(i as i32 - 1);
            let next = params.base_sigma * k.powi(i as i32);
            let inc = (next * next - prev * prev).sqrt();
            let blurred = gaussian_blur(&gaussians[i - 1], inc)?;
            gaussians.push(blurred);
        }
        let dogs = gaussians
            .windows(2)
            .map(|pair| Plane {
                width: pair[0].width(),
                height: pair[0].height(),
                data: pair[1]
                    .pixels()
                    .iter()
                    .zip(pair[0].pixels())
                    .map(|(hi, lo)| hi - lo)
                    .collect(),
            })
            .collect();

        // Seed the next octave with the plane at doubled blur (index s),
        // decimated by 2; its octave-relative blur is base_sigma again.
        let seed = &gaussians[s];
        let next_base = if seed.width() / 2 >= 16 && seed.height() / 2 >= 16 {
            Some(seed.downsample_half()?)
        } else {
            None
        };
        octaves.push(Octave { gaussians, dogs });
        match next_base {
            Some(b) => base = b,
            None => break,
        }
    }
    Ok(DogPyramid {
        octaves,
        base_sigma: params.base_sigma,
        k,
    })
}

/// Scale-space location at original-image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Blur of the lower Gaussian plane of the difference the extremum
    /// was found in, in original-image pixels.
    pub sigma: f64,
    /// Dominant gradient direction in [0, 2pi); zero until assigned by
    /// descriptor extraction.
    pub orientation: f64,
    /// Difference-of-Gaussians value at the extremum.
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: [f64; DESC_LEN],
}

impl Descriptor {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Candidate with its pyramid address, kept internal so public keypoints
/// stay in original-image coordinates.
struct RawExtremum {
    octave: usize,
    plane: usize,
    x: usize,
    y: usize,
    value: f64,
}

fn scan_extrema(pyr: &DogPyramid, params: &ScaleSpaceParams) -> Vec<RawExtremum> {
    let mut found = Vec::new();
    for (o, oct) in pyr.octaves.iter().enumerate() {
        let dogs = &oct.dogs;
        for d in 1..dogs.len().saturating_sub(1) {
            let (w, h) = (dogs[d].width, dogs[d].height);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = dogs[d].get(x, y);
                    if v.abs() < params.contrast_thresh {
                        continue;
                    }
                    if !is_extremum(&dogs[d - 1], &dogs[d], &dogs[d + 1], x, y, v) {
                        continue;
                    }
                    if is_edge_like(&dogs[d], x, y, params.edge_ratio_thresh) {
                        continue;
                    }
                    found.push(RawExtremum {
                        octave: o,
                        plane: d,
                        x,
                        y,
                        value: v,
                    });
                }
            }
        }
    }
    found
}

/// Strictly greater (or strictly smaller) than all 26 neighbors in the
/// 3x3x3 cube spanning the adjacent difference planes.
fn is_extremum(below: &Plane, mid: &Plane, above: &Plane, x: usize, y: usize, v: f64) -> bool {
    let mut gt = true;
    let mut lt = true;
    for plane in [below, mid, above] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if std::ptr::eq(plane, mid) && nx == x && ny == y {
                    continue;
                }
                let n = plane.get(nx, ny);
                gt &= v > n;
                lt &= v < n;
                if !gt && !lt {
                    return false;
                }
            }
        }
    }
    gt || lt
}

/// Edge rejection on the 2x2 spatial Hessian: keep only candidates whose
/// principal-curvature ratio stays below `r`, i.e. tr^2 * r < det * (r+1)^2
/// with positive determinant.
fn is_edge_like(plane: &Plane, x: usize, y: usize, r: f64) -> bool {
    let v = plane.get(x, y);
    let dxx = plane.get(x + 1, y) + plane.get(x - 1, y) - 2.0 * v;
    let dyy = plane.get(x, y + 1) + plane.get(x, y - 1) - 2.0 * v;
    let dxy = (plane.get(x + 1, y + 1) - plane.get(x - 1, y + 1) - plane.get(x + 1, y - 1)
        + plane.get(x - 1, y - 1))
        / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det <= 0.0 || tr * tr * r >= det * (r + 1.0) * (r + 1.0)
}

fn raw_to_keypoint(pyr: &DogPyramid, raw: &RawExtremum) -> Keypoint {
    let scale = pyr.pixel_scale(raw.octave);
    Keypoint {
        x: raw.x as f64 * scale,
        y: raw.y as f64 * scale,
        sigma: pyr.sigma(raw.octave, raw.plane),
        orientation: 0.0,
        response: raw.value,
    }
}

/// All filtered scale-space extrema in scan order (octave, plane, row,
/// column), coordinates mapped to original-image pixels. Orientations are
/// zero; they are assigned during descriptor extraction.
pub fn detect_keypoints(pyr: &DogPyramid, params: &ScaleSpaceParams) -> Vec<Keypoint> {
    scan_extrema(pyr, params)
        .iter()
        .map(|raw| raw_to_keypoint(pyr, raw))
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = a % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a
}

/// Gradient of a Gaussian plane by central differences, edge-replicated.
fn gradient_at(img: &GrayImage, x: i64, y: i64) -> (f64, f64) {
    let dx = (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) / 2.0;
    let dy = (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) / 2.0;
    (dx, dy)
}

/// Dominant gradient direction around (x, y) from a magnitude-weighted,
/// Gaussian-windowed 36-bin histogram. Returns the center angle of the
/// strongest bin (smallest bin wins ties), or None when every gradient in
/// the window vanishes.
fn dominant_orientation(img: &GrayImage, x: f64, y: f64, sigma_rel: f64) -> Option<f64> {
    let win_sigma = 1.5 * sigma_rel;
    let radius = (3.0 * win_sigma).ceil() as i64;
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let mut hist = [0.0f64; ORI_BINS];
    for oy in -radius..=radius {
        for ox in -radius..=radius {
            let (gx, gy) = gradient_at(img, cx + ox, cy + oy);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let w = (-((ox * ox + oy * oy) as f64) / (2.0 * win_sigma * win_sigma)).exp();
            let angle = wrap_angle(gy.atan2(gx));
            let bin = ((angle / std::f64::consts::TAU * ORI_BINS as f64) as usize).min(ORI_BINS - 1);
            hist[bin] += w * mag;
        }
    }
    let (mut best, mut best_val) = (0, 0.0);
    for (i, &v) in hist.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    if best_val == 0.0 {
        return None;
    }
    Some((best as f64 + 0.5) * std::f64::consts::TAU / ORI_BINS as f64)
}

/// Normalize to unit length, clamp entries at [`DESC_CLAMP`], renormalize.
/// A zero vector stays zero.
fn normalize_clamp_renorm(values: &mut [f64; DESC_LEN]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v = (*v / norm).min(DESC_CLAMP);
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in values.iter_mut() {
        *v /= norm;
    }
}

/// Orientation and descriptor for one keypoint, computed on the Gaussian
/// plane `img_l` matching the keypoint's scale. `pixel_scale` converts
/// original-image coordinates to plane coordinates (2^octave). Returns
/// None when the keypoint sits closer than 8 plane pixels to a border.
///
/// The descriptor samples a fixed 16x16-pixel grid at the plane's
/// resolution, rotated to the dominant orientation, and accumulates
/// magnitude-weighted relative gradient angles into 4x4x8 bins with
/// trilinear interpolation, then normalizes, clamps at 0.2 and
/// renormalizes. A window with no gradient yields the all-zero
/// descriptor and orientation 0.
pub fn compute_descriptor(
    img_l: &GrayImage,
    kp: &Keypoint,
    pixel_scale: f64,
) -> Option<(f64, Descriptor)> {
    let x = kp.x / pixel_scale;
    let y = kp.y / pixel_scale;
    let sigma_rel = kp.sigma / pixel_scale;
    let (w, h) = (img_l.width() as f64, img_l.height() as f64);
    let margin = x.min(y).min(w - 1.0 - x).min(h - 1.0 - y);
    if margin < DESC_MARGIN {
        return None;
    }

    let mut values = [0.0f64; DESC_LEN];
    let orientation = match dominant_orientation(img_l, x, y, sigma_rel) {
        None => {
            return Some((0.0, Descriptor { values }));
        }
        Some(o) => o,
    };

    let (cos_o, sin_o) = (orientation.cos(), orientation.sin());
    let half = DESC_WIDTH as f64 / 2.0; // 8.0
    let cell = DESC_WIDTH as f64 / DESC_CELLS as f64; // 4.0
    for j in 0..DESC_WIDTH {
        for i in 0..DESC_WIDTH {
            let u = i as f64 - (half - 0.5);
            let v = j as f64 - (half - 0.5);
            let sx = x + cos_o * u - sin_o * v;
            let sy = y + sin_o * u + cos_o * v;
            let gx = (img_l.sample_bilinear(sx + 1.0, sy) - img_l.sample_bilinear(sx - 1.0, sy))
                / 2.0;
            let gy = (img_l.sample_bilinear(sx, sy + 1.0) - img_l.sample_bilinear(sx, sy - 1.0))
                / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-(u * u + v * v) / (2.0 * half * half)).exp();
            let rel = wrap_angle(gy.atan2(gx) - orientation);

            // Trilinear spread over (row cell, column cell, angle bin).
            let rf = v / cell + (DESC_CELLS as f64 / 2.0 - 0.5);
            let cf = u / cell + (DESC_CELLS as f64 / 2.0 - 0.5);
            let af = rel / std::f64::consts::TAU * DESC_ANGLE_BINS as f64;
            let (r0, c0, a0) = (rf.floor(), cf.floor(), af.floor());
            let (dr, dc, da) = (rf - r0, cf - c0, af - a0);
            for (ri, rw) in [(r0, 1.0 - dr), (r0 + 1.0, dr)] {
                if ri < 0.0 || ri >= DESC_CELLS as f64 {
                    continue;
                }
                for (ci, cw) in [(c0, 1.0 - dc), (c0 + 1.0, dc)] {
                    if ci < 0.0 || ci >= DESC_CELLS as f64 {
                        continue;
                    }
                    for (ai, aw) in [(a0, 1.0 - da), (a0 + 1.0, da)] {
                        let bin = (ri as usize * DESC_CELLS + ci as usize) * DESC_ANGLE_BINS
                            + (ai as usize % DESC_ANGLE_BINS);
                        values[bin] += mag * weight * rw * cw * aw;
                    }
                }
            }
        }
    }
    normalize_clamp_renorm(&mut values);
    Some((orientation, Descriptor { values }))
}

/// Full detection: pyramid, extrema, filters, orientations, descriptors.
/// Keypoints too close to a border for a descriptor are dropped. Output
/// is sorted by |response| descending (ties by sigma, y, x ascending).
pub fn detect(img: &GrayImage, params: &ScaleSpaceParams) -> Result<Vec<(Keypoint, Descriptor)>> {
    let pyr = build_dog_pyramid(img, params)?;
    let mut out = Vec::new();
    for raw in scan_extrema(&pyr, params) {
        let mut kp = raw_to_keypoint(&pyr, &raw);
        let plane = &pyr.octaves[raw.octave].gaussians[raw.plane];
        let scale = pyr.pixel_scale(raw.octave);
        if let Some((orientation, desc)) = compute_descriptor(plane, &kp, scale) {
            kp.orientation = orientation;
            out.push((kp, desc));
        }
    }
    out.sort_by(|a, b| {
        b.0.response
            .abs()
            .partial_cmp(&a.0.response.abs())
            .unwrap()
            .then(a.0.sigma.partial_cmp(&b.0.sigma).unwrap())
            .then(a.0.y.partial_cmp(&b.0.y).unwrap())
            .then(a.0.x.partial_cmp(&b.0.x).unwrap())
    });
    Ok(out)
}

/// Write keypoints and descriptors as CSV: header
/// `x,y,sigma,orientation,response,d0..d127`, one row per keypoint.
pub fn export_keypoints_csv(path: &Path, items: &[(Keypoint, Descriptor)]) -> Result<()> {
    let mut out = Vec::new();
    let header: Vec<String> = ["x", "y", "sigma", "orientation", "response"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..DESC_LEN).map(|i| format!("d{i}")))
        .collect();
    writeln!(out, "{}", header.join(",")).expect("vec write");
    for (kp, desc) in items {
        let mut row = vec![
            kp.x.to_string(),
            kp.y.to_string(),
            kp.sigma.to_string(),
            kp.orientation.to_string(),
            kp.response.to_string(),
        ];
        row.extend(desc.values.iter().map(|v| v.to_string()));
        writeln!(out, "{}", row.join(",")).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

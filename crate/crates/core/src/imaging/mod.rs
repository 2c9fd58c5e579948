//! Core raster types and pixel-level kernels.
//!
//! Luminance is kept as `f64` in `[0, 1]` rather than 8-bit so downstream
//! difference-of-Gaussians and descriptor math work on unquantized values;
//! images are converted once on load.
//!
//! Border policies: convolution replicates edge pixels, dilation clips the
//! structuring element at the image boundary.

pub mod io;

use crate::{Error, Result};

/// Grayscale raster, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Build from row-major pixels. Rejects empty rasters, wrong pixel counts
    /// and values outside `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParam(
                "luminance values must be finite and in [0,1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    /// Sample with edge replication for out-of-bounds coordinates.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.pixels[cy * self.width + cx]
    }

    /// Bilinear sample at a real-valued position, edge-replicated.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.get_clamped(x0, y0);
        let v10 = self.get_clamped(x0 + 1, y0);
        let v01 = self.get_clamped(x0, y0 + 1);
        let v11 = self.get_clamped(x0 + 1, y0 + 1);
        let top = v00 + fx * (v10 - v00);
        let bot = v01 + fx * (v11 - v01);
        top + fy * (bot - top)
    }

    /// Crop the rectangle with top-left `(x0, y0)` and the given size.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidParam(format!(
                "crop {}x{}+{}+{} exceeds image {}x{}",
                width, height, x0, y0, self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Decimate by 2 (every second pixel, no filtering).
    pub fn downsample_half(&self) -> Result<GrayImage> {
        let w = self.width / 2;
        let h = self.height / 2;
        if w == 0 || h == 0 {
            return Err(Error::EmptyImage);
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                pixels.push(self.get(x * 2, y * 2));
            }
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }
}

/// Interleaved RGB raster with channels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParam(format!(
                "channel count {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParam(
                "channel values must be finite and in [0,1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Row-major boolean mask, `true` = ink/foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if bits.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "bit count {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn ink_free(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.bits[y * self.width + x] = v;
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Positive scale multiplier for `resize`. Pipeline configs only downscale
/// (`r <= 1`) but the type itself allows any positive factor so a resize can
/// be inverted in tests.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ResizeFactor(f64);

impl ResizeFactor {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "resize factor must be finite and > 0, got {r}"
            )));
        }
        Ok(Self(r))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ResizeFactor {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        ResizeFactor::new(v)
    }
}

impl From<ResizeFactor> for f64 {
    fn from(r: ResizeFactor) -> f64 {
        r.0
    }
}

/// Rec. 601 luma conversion, clamped to `[0, 1]`.
pub fn to_gray(rgb: &RgbImage) -> Result<GrayImage> {
    let mut pixels = Vec::with_capacity(rgb.width * rgb.height);
    for px in rgb.data.chunks_exact(3) {
        let y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        pixels.push(y.clamp(0.0, 1.0));
    }
    Ok(GrayImage {
        width: rgb.width,
        height: rgb.height,
        pixels,
    })
}

/// Bilinear resize. Output dimensions are `max(1, round(dim * r))`; samples
/// are taken at half-pixel centers with edge replication.
pub fn resize(img: &GrayImage, factor: ResizeFactor) -> GrayImage {
    let r = factor.get();
    let out_w = ((img.width as f64 * r).round() as usize).max(1);
    let out_h = ((img.height as f64 * r).round() as usize).max(1);
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let src_y = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let src_x = (ox as f64 + 0.5) * sx - 0.5;
            pixels.push(img.sample_bilinear(src_x, src_y).clamp(0.0, 1.0));
        }
    }
    GrayImage {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(3 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "blur sigma must be finite and > 0, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);

    // Horizontal pass.
    let mut tmp = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * img.get_clamped(x + i as i64 - radius, y);
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    // Vertical pass.
    let tmp_img = GrayImage {
        width: img.width,
        height: img.height,
        pixels: tmp,
    };
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp_img.get_clamped(x, y + i as i64 - radius);
            }
            out[(y * w + x) as usize] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    })
}

/// Offsets covered by a 1-D structuring element of the given size.
/// Even sizes anchor at `floor(size / 2)`.
fn element_span(size: usize) -> (i64, i64) {
    let left = (size / 2) as i64;
    let right = size as i64 - 1 - left;
    (left, right)
}

/// Morphological dilation with a `(height, width)` rectangular structuring
/// element, clipped at the borders. An output bit is set iff any set bit of
/// the input lies inside the element centered on it.
pub fn dilate(mask: &BinaryMask, d: (usize, usize)) -> Result<BinaryMask> {
    let (dh, dw) = d;
    if dh < 1 || dw < 1 {
        return Err(Error::InvalidParam(format!(
            "dilation factor components must be >= 1, got ({dh}, {dw})"
        )));
    }
    let (w, h) = (mask.width, mask.height);

    // The rectangle factorizes into a horizontal and a vertical 1-D pass;
    // each pass keeps a sliding count of set bits in the window.
    let (left, right) = element_span(dw);
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        let mut count = 0usize;
        for x in 0..=(right.min(w as i64 - 1)) {
            if row[x as usize] {
                count += 1;
            }
        }
        for x in 0..w as i64 {
            horiz[y * w + x as usize] = count > 0;
            let leaving = x - left;
            if (0..w as i64).contains(&leaving) && row[leaving as usize] {
                count -= 1;
            }
            let entering = x + right + 1;
            if (0..w as i64).contains(&entering) && row[entering as usize] {
                count += 1;
            }
        }
    }

    let (top, bottom) = element_span(dh);
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut count = 0usize;
        for y in 0..=(bottom.min(h as i64 - 1)) {
            if horiz[y as usize * w + x] {
                count += 1;
            }
        }
        for y in 0..h as i64 {
            out[y as usize * w + x] = count > 0;
            let leaving = y - top;
            if (0..h as i64).contains(&leaving) && horiz[leaving as usize * w + x] {
                count -= 1;
            }
            let entering = y + bottom + 1;
            if (0..h as i64).contains(&entering) && horiz[entering as usize * w + x] {
                count += 1;
            }
        }
    }
    Ok(BinaryMask {
        width: w,
        height: h,
        bits: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        let pixels = (0..w * h).map(|_| rng.gen::<f64>()).collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
        let bits = (0..w * h).map(|_| rng.gen::<f64>() < density).collect();
        BinaryMask::new(w, h, bits).unwrap()
    }

    /// Brute-force dilation: double loop over the structuring element.
    fn dilate_oracle(mask: &BinaryMask, d: (usize, usize)) -> BinaryMask {
        let (top, bottom) = element_span(d.0);
        let (left, right) = element_span(d.1);
        let mut out = BinaryMask::ink_free(mask.width(), mask.height()).unwrap();
        for y in 0..mask.height() as i64 {
            for x in 0..mask.width() as i64 {
                let mut any = false;
                for dy in -top..=bottom {
                    for dx in -left..=right {
                        let (qx, qy) = (x + dx, y + dy);
                        if qx >= 0
                            && qy >= 0
                            && (qx as usize) < mask.width()
                            && (qy as usize) < mask.height()
                            && mask.get(qx as usize, qy as usize)
                        {
                            any = true;
                        }
                    }
                }
                out.set(x as usize, y as usize, any);
            }
        }
        out
    }

    #[test]
    fn to_gray_constant_channels() {
        let rgb = RgbImage::new(2, 2, vec![0.4; 12]).unwrap();
        let gray = to_gray(&rgb).unwrap();
        for &v in gray.pixels() {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn to_gray_pure_red() {
        let rgb = RgbImage::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let gray = to_gray(&rgb).unwrap();
        assert!((gray.get(0, 0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn to_gray_empty_is_error() {
        assert!(matches!(RgbImage::new(0, 0, vec![]), Err(Error::EmptyImage)));
        assert!(matches!(GrayImage::new(0, 5, vec![]), Err(Error::EmptyImage)));
    }

    #[test]
    fn resize_dimension_arithmetic() {
        let img = GrayImage::constant(100, 200, 0.5).unwrap();
        let out = resize(&img, ResizeFactor::new(0.5).unwrap());
        assert_eq!((out.width(), out.height()), (50, 100));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::constant(37, 21, 0.73).unwrap();
        for r in [0.25, 0.5, 0.8, 1.0, 1.7] {
            let out = resize(&img, ResizeFactor::new(r).unwrap());
            for &v in out.pixels() {
                assert!((v - 0.73).abs() < 1e-12, "r={r}");
            }
        }
    }

    #[test]
    fn resize_2x2_to_1x1_averages_center() {
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize(&img, ResizeFactor::new(0.5).unwrap());
        assert_eq!((out.width(), out.height()), (1, 1));
        // Bilinear sample at the patch center averages the four pixels.
        assert!((out.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn resize_rejects_bad_factor() {
        assert!(ResizeFactor::new(f64::NAN).is_err());
        assert!(ResizeFactor::new(0.0).is_err());
        assert!(ResizeFactor::new(-1.0).is_err());
    }

    #[test]
    fn resize_round_trip_preserves_dims() {
        let img = GrayImage::constant(64, 48, 0.2).unwrap();
        for r in [0.5, 0.25] {
            let down = resize(&img, ResizeFactor::new(r).unwrap());
            let up = resize(&down, ResizeFactor::new(1.0 / r).unwrap());
            assert_eq!((up.width(), up.height()), (img.width(), img.height()));
        }
    }

    #[test]
    fn blur_constant_is_identity() {
        let img = GrayImage::constant(20, 20, 0.31).unwrap();
        let out = gaussian_blur(&img, 2.0).unwrap();
        for &v in out.pixels() {
            assert!((v - 0.31).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_impulse_matches_sampled_gaussian() {
        // Unit impulse far from any border: the response is the separable
        // product of normalized 1-D kernels, which is exactly the sampled,
        // normalized 2-D Gaussian on the truncation grid.
        let sigma = 1.5;
        let n = 31usize;
        let c = (n / 2) as i64;
        let mut pixels = vec![0.0; n * n];
        pixels[(c as usize) * n + c as usize] = 1.0;
        let img = GrayImage::new(n, n, pixels).unwrap();
        let out = gaussian_blur(&img, sigma).unwrap();

        let radius = (3.0 * sigma).ceil() as i64;
        let k1: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = k1.iter().sum();
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let expected = if (x - c).abs() <= radius && (y - c).abs() <= radius {
                    k1[(x - c + radius) as usize] * k1[(y - c + radius) as usize] / (sum * sum)
                } else {
                    0.0
                };
                assert!(
                    (out.get(x as usize, y as usize) - expected).abs() < 1e-12,
                    "at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn blur_semigroup_property() {
        // blur(blur(., s), s) ~ blur(., s*sqrt(2)) away from the replicated
        // border band, where the two boundary conditions differ.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = 1.6f64;
        let margin = (3.0 * sigma * 2f64.sqrt()).ceil() as usize + 1;
        for _ in 0..3 {
            let img = random_image(&mut rng, 64, 64);
            let twice = gaussian_blur(&gaussian_blur(&img, sigma).unwrap(), sigma).unwrap();
            let once = gaussian_blur(&img, sigma * 2f64.sqrt()).unwrap();
            let mut max_diff = 0.0f64;
            for y in margin..64 - margin {
                for x in margin..64 - margin {
                    max_diff = max_diff.max((twice.get(x, y) - once.get(x, y)).abs());
                }
            }
            assert!(max_diff <= 1e-3, "max interior diff {max_diff}");
        }
    }

    #[test]
    fn blur_preserves_mean_of_constant_border_image() {
        // With a constant band at least one kernel radius wide, replication
        // introduces no distortion and the normalized kernel preserves the
        // global mean exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 1.8f64;
        let radius = (3.0 * sigma).ceil() as usize;
        let n = 64usize;
        let mut pixels = vec![0.5; n * n];
        for y in radius..n - radius {
            for x in radius..n - radius {
                pixels[y * n + x] = rng.gen::<f64>();
            }
        }
        let img = GrayImage::new(n, n, pixels).unwrap();
        let out = gaussian_blur(&img, sigma).unwrap();
        assert!((img.mean() - out.mean()).abs() < 1e-6);
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let img = GrayImage::constant(8, 8, 0.5).unwrap();
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn dilate_single_pixel_3x3() {
        let mut mask = BinaryMask::ink_free(7, 7).unwrap();
        mask.set(3, 3, true);
        let out = dilate(&mask, (3, 3)).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let expected = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(out.get(x, y), expected, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn dilate_identity_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = random_mask(&mut rng, 17, 9, 0.3);
        assert_eq!(dilate(&mask, (1, 1)).unwrap(), mask);
    }

    #[test]
    fn dilate_bridges_gap() {
        // Two set pixels spanning 4 columns are bridged into one 8-wide run
        // by a (1, 5) element.
        let mut mask = BinaryMask::ink_free(16, 3).unwrap();
        mask.set(5, 1, true);
        mask.set(8, 1, true);
        let out = dilate(&mask, (1, 5)).unwrap();
        let oracle = dilate_oracle(&mask, (1, 5));
        assert_eq!(out, oracle);
        let run: Vec<usize> = (0..16).filter(|&x| out.get(x, 1)).collect();
        assert_eq!(run, (3..=10).collect::<Vec<_>>());
        assert_eq!(run.len(), 8);
        assert!((0..16).all(|x| !out.get(x, 0) && !out.get(x, 2)));
    }

    #[test]
    fn dilate_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..40 {
            let w = rng.gen_range(1..24);
            let h = rng.gen_range(1..24);
            let mask = random_mask(&mut rng, w, h, 0.2);
            let d = (rng.gen_range(1..8), rng.gen_range(1..8));
            assert_eq!(dilate(&mask, d).unwrap(), dilate_oracle(&mask, d), "d={d:?}");
        }
    }

    #[test]
    fn dilate_is_extensive_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mask = random_mask(&mut rng, 20, 20, 0.1);
            let small = dilate(&mask, (3, 2)).unwrap();
            let large = dilate(&mask, (5, 4)).unwrap();
            for i in 0..mask.bits().len() {
                assert!(!mask.bits()[i] || small.bits()[i], "extensive");
                assert!(!small.bits()[i] || large.bits()[i], "monotone in d");
            }
        }
    }

    #[test]
    fn dilate_idempotent_only_for_unit_element() {
        let mut mask = BinaryMask::ink_free(12, 12).unwrap();
        mask.set(6, 6, true);
        let once = dilate(&mask, (3, 3)).unwrap();
        let twice = dilate(&once, (3, 3)).unwrap();
        assert_ne!(once, twice);
        let id_once = dilate(&mask, (1, 1)).unwrap();
        let id_twice = dilate(&id_once, (1, 1)).unwrap();
        assert_eq!(id_once, id_twice);
    }

    #[test]
    fn dilate_rejects_zero_component() {
        let mask = BinaryMask::ink_free(4, 4).unwrap();
        assert!(dilate(&mask, (0, 3)).is_err());
        assert!(dilate(&mask, (3, 0)).is_err());
    }
}

//! Image container, boundary handling and patch distances.
//!
//! Pixel coordinates are `(x, y)` pairs with `x` the column and `y` the row.
//! Windows and patches are read in row-major ("lexicographic") order.
//! Out-of-range reads are resolved by mirror reflection that does not repeat
//! the edge pixel, so index `-1` maps to `1` and index `n` maps to `n - 2`.

use crate::error::{invalid, Error, Result};

/// Real-valued grayscale image, stored row-major.
///
/// Values are nominally in `[0, 255]` but are never clamped; quantization
/// only happens when an image is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "empty image ({width}x{height})"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(pos) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value at pixel {pos}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Wraps already-validated data produced by an internal kernel.
    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Reads a pixel at a possibly out-of-range coordinate, mirroring it
    /// back into the image.
    #[inline]
    pub fn get_reflected(&self, x: isize, y: isize) -> f64 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` to every pixel. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Sub-image of size `w x h` whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside a {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        Ok(Self::from_raw(w, h, pixels))
    }

    /// Removes `border` pixels from each of the four sides.
    pub fn crop_border(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(invalid(format!(
                "border {border} leaves nothing of a {}x{} image",
                self.width, self.height
            )));
        }
        self.crop(
            border,
            border,
            self.width - 2 * border,
            self.height - 2 * border,
        )
    }

    pub(crate) fn check_same_size(&self, other: &GrayImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            });
        }
        Ok(())
    }
}

/// Mirror index `idx` into `0..n` without repeating the edge sample.
///
/// Offsets larger than the image fold back and forth, so any integer maps to
/// a valid index.
#[inline]
pub fn reflect(idx: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    if (0..n).contains(&idx) {
        return idx as usize;
    }
    let period = 2 * (n - 1);
    let m = idx.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

/// Pads `img` by `r` pixels on every side with mirror reflection.
///
/// Every axis longer than one pixel must be longer than `r`; a single-pixel
/// axis simply repeats its only value.
pub fn mirror_pad(img: &GrayImage, r: usize) -> Result<GrayImage> {
    let too_large = |n: usize| n > 1 && r >= n;
    if too_large(img.width) || too_large(img.height) {
        return Err(Error::PadTooLarge {
            radius: r,
            width: img.width,
            height: img.height,
        });
    }
    let padded = Padded::new(img.pixels(), img.width, img.height, r);
    Ok(GrayImage::from_raw(
        padded.stride,
        img.height + 2 * r,
        padded.data,
    ))
}

/// The `d x d` patch centered at `(x, y)`, in row-major order.
pub fn patch(img: &GrayImage, (x, y): (usize, usize), d: usize) -> Result<Vec<f64>> {
    if d.is_multiple_of(2) {
        return Err(invalid(format!("patch diameter must be odd, got {d}")));
    }
    let r = (d / 2) as isize;
    let (x, y) = (x as isize, y as isize);
    let mut out = Vec::with_capacity(d * d);
    for dy in -r..=r {
        for dx in -r..=r {
            out.push(img.get_reflected(x + dx, y + dy));
        }
    }
    Ok(out)
}

/// Per-offset weights of a `d x d` patch comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchKernel {
    diameter: usize,
    weights: Vec<f64>,
    exclude_center: bool,
}

impl PatchKernel {
    pub fn from_weights(diameter: usize, weights: Vec<f64>, exclude_center: bool) -> Result<Self> {
        if diameter < 3 || diameter.is_multiple_of(2) {
            return Err(invalid(format!(
                "patch diameter must be odd and at least 3, got {diameter}"
            )));
        }
        if weights.len() != diameter * diameter {
            return Err(invalid(format!(
                "kernel of diameter {diameter} needs {} weights, got {}",
                diameter * diameter,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("kernel weights must be finite and nonnegative"));
        }
        let kernel = Self {
            diameter,
            weights,
            exclude_center,
        };
        if kernel.effective_weights().iter().all(|&w| w == 0.0) {
            return Err(invalid("kernel needs at least one positive weight"));
        }
        Ok(kernel)
    }

    /// Equal weight on every offset.
    pub fn uniform(diameter: usize) -> Result<Self> {
        Self::from_weights(diameter, vec![1.0; diameter * diameter], false)
    }

    /// Weights `exp(-|k - i|^2 / (2 sigma^2))` in the Euclidean offset norm.
    pub fn gaussian(diameter: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let r = (diameter / 2) as isize;
        let mut weights = Vec::with_capacity(diameter * diameter);
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f64;
                weights.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        Self::from_weights(diameter, weights, false)
    }

    pub fn with_center_excluded(self, exclude_center: bool) -> Result<Self> {
        Self::from_weights(self.diameter, self.weights, exclude_center)
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn radius(&self) -> usize {
        self.diameter / 2
    }

    pub fn excludes_center(&self) -> bool {
        self.exclude_center
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights as used in distances: the center is zeroed when excluded.
    pub fn effective_weights(&self) -> Vec<f64> {
        let mut w = self.weights.clone();
        if self.exclude_center {
            w[self.weights.len() / 2] = 0.0;
        }
        w
    }
}

/// Normalized weighted squared distance between the patches at `i` and `j`.
///
/// Returns `sum_k a(k) |v(k) - v(T(k))|^2 / sum_k a(k)` where `T` translates
/// the patch at `i` onto the patch at `j`.
pub fn patch_distance2(
    img: &GrayImage,
    (ix, iy): (usize, usize),
    (jx, jy): (usize, usize),
    kernel: &PatchKernel,
) -> f64 {
    let r = kernel.radius() as isize;
    let weights = kernel.effective_weights();
    let (ix, iy, jx, jy) = (ix as isize, iy as isize, jx as isize, jy as isize);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut w = weights.iter();
    for dy in -r..=r {
        for dx in -r..=r {
            let a = *w.next().unwrap();
            if a == 0.0 {
                continue;
            }
            let diff = img.get_reflected(ix + dx, iy + dy) - img.get_reflected(jx + dx, jy + dy);
            num += a * diff * diff;
            den += a;
        }
    }
    num / den
}

/// Mirror-padded copy of a row-major buffer, used by the filter kernels to
/// read whole windows without per-sample bounds handling.
#[derive(Debug, Clone)]
pub(crate) struct Padded {
    pub data: Vec<f64>,
    pub stride: usize,
    pub radius: usize,
}

impl Padded {
    pub fn new(values: &[f64], width: usize, height: usize, radius: usize) -> Self {
        let stride = width + 2 * radius;
        let rows = height + 2 * radius;
        let mut data = Vec::with_capacity(stride * rows);
        for py in 0..rows {
            let y = reflect(py as isize - radius as isize, height);
            let row = &values[y * width..(y + 1) * width];
            for px in 0..stride {
                data.push(row[reflect(px as isize - radius as isize, width)]);
            }
        }
        Self {
            data,
            stride,
            radius,
        }
    }

    /// Flat index of interior pixel `(x, y)`.
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y + self.radius) * self.stride + x + self.radius
    }

    /// Flat offsets of a `(2r+1) x (2r+1)` window, row-major.
    pub fn window_offsets(&self, r: usize) -> Vec<isize> {
        let r = r as isize;
        let stride = self.stride as isize;
        (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| dy * stride + dx))
            .collect()
    }
}

/// Chebyshev distances of a `(2r+1) x (2r+1)` window, row-major.
pub(crate) fn window_chebyshev(r: usize) -> Vec<usize> {
    let r = r as isize;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| dx.unsigned_abs().max(dy.unsigned_abs())))
        .collect()
}

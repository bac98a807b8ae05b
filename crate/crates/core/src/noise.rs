//! Seed-reproducible noise synthesis.
//!
//! Each pixel draws from its own position in a ChaCha keystream keyed by the
//! seed, so a pixel's noise depends only on `(seed, pixel index)` and never on
//! evaluation order or thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::GrayImage;

/// Keystream words reserved for each pixel.
const WORDS_PER_PIXEL: u128 = 16;

const GAUSSIAN_STREAM: u64 = 1;
const IMPULSE_STREAM: u64 = 2;

/// SplitMix64 finalizer, used to derive independent seeds from one seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random source positioned at the block reserved for pixel `index`.
pub(crate) fn pixel_rng(base: &ChaCha8Rng, index: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_word_pos(index as u128 * WORDS_PER_PIXEL);
    rng
}

fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn per_pixel(
    img: &GrayImage,
    rng: ChaCha8Rng,
    f: impl Fn(f64, &mut ChaCha8Rng) -> f64 + Sync,
) -> GrayImage {
    let out: Vec<f64> = img
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(k, &v)| f(v, &mut pixel_rng(&rng, k)))
        .collect();
    GrayImage::from_raw(img.width(), img.height(), out)
}

/// Adds i.i.d. `N(0, sigma^2)` noise. The result is not clamped.
pub fn add_gaussian(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    Ok(per_pixel(
        img,
        keyed_rng(seed, GAUSSIAN_STREAM),
        |v, rng| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        },
    ))
}

/// Replaces each pixel, with probability `p`, by a value uniform on `[lo, hi]`.
pub fn add_impulse(img: &GrayImage, p: f64, lo: f64, hi: f64, seed: u64) -> Result<GrayImage> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!(
            "impulse probability must be in [0, 1), got {p}"
        )));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(invalid(format!(
            "impulse range needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    if p == 0.0 {
        return Ok(img.clone());
    }
    Ok(per_pixel(img, keyed_rng(seed, IMPULSE_STREAM), |v, rng| {
        if rng.random::<f64>() < p {
            rng.random_range(lo..=hi)
        } else {
            v
        }
    }))
}

/// Gaussian noise followed by impulse noise on `[0, 255]`.
///
/// The two stages use `derive_seed(seed, 1)` and `derive_seed(seed, 2)`.
pub fn add_mixed(img: &GrayImage, sigma: f64, p: f64, seed: u64) -> Result<GrayImage> {
    let noisy = add_gaussian(img, sigma, derive_seed(seed, 1))?;
    add_impulse(&noisy, p, 0.0, 255.0, derive_seed(seed, 2))
}

/// Noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Impulse,
    Mixed,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Impulse => "impulse",
            NoiseKind::Mixed => "mixed",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "impulse" => Ok(NoiseKind::Impulse),
            "mixed" => Ok(NoiseKind::Mixed),
            other => Err(invalid(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// A complete, reproducible noise configuration.
///
/// Serializes as a single line of `key=value` pairs, e.g.
/// `kind=mixed sigma=10 p=0.2 lo=0 hi=255 seed=7`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self::new(NoiseKind::Gaussian, sigma, 0.0, seed)
    }

    pub fn impulse(p: f64, seed: u64) -> Self {
        Self::new(NoiseKind::Impulse, 0.0, p, seed)
    }

    pub fn mixed(sigma: f64, p: f64, seed: u64) -> Self {
        Self::new(NoiseKind::Mixed, sigma, p, seed)
    }

    pub fn new(kind: NoiseKind, sigma: f64, p: f64, seed: u64) -> Self {
        Self {
            kind,
            sigma,
            p,
            lo: 0.0,
            hi: 255.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(invalid(format!("p must be in [0, 1), got {}", self.p)));
        }
        if !(self.lo < self.hi) {
            return Err(invalid(format!(
                "impulse range needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Gaussian level that actually applies (zero for impulse noise).
    pub fn effective_sigma(&self) -> f64 {
        match self.kind {
            NoiseKind::Impulse => 0.0,
            _ => self.sigma,
        }
    }

    /// Impulse probability that actually applies (zero for Gaussian noise).
    pub fn effective_p(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => 0.0,
            _ => self.p,
        }
    }

    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        self.validate()?;
        match self.kind {
            NoiseKind::Gaussian => add_gaussian(img, self.sigma, self.seed),
            NoiseKind::Impulse => add_impulse(img, self.p, self.lo, self.hi, self.seed),
            NoiseKind::Mixed => {
                let noisy = add_gaussian(img, self.sigma, derive_seed(self.seed, 1))?;
                add_impulse(&noisy, self.p, self.lo, self.hi, derive_seed(self.seed, 2))
            }
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} sigma={} p={} lo={} hi={} seed={}",
            self.kind, self.sigma, self.p, self.lo, self.hi, self.seed
        )
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = NoiseSpec::new(NoiseKind::Gaussian, 0.0, 0.0, 0);
        let mut saw_kind = false;
        for pair in s.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value, got '{pair}'")))?;
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("bad number for {key}: '{value}'")))
            };
            match key {
                "kind" => {
                    spec.kind = value.parse()?;
                    saw_kind = true;
                }
                "sigma" => spec.sigma = num()?,
                "p" => spec.p = num()?,
                "lo" => spec.lo = num()?,
                "hi" => spec.hi = num()?,
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| invalid(format!("bad seed '{value}'")))?
                }
                other => return Err(invalid(format!("unknown noise key '{other}'"))),
            }
        }
        if !saw_kind {
            return Err(invalid("noise spec needs kind=..."));
        }
        spec.validate()?;
        Ok(spec)
    }
}

//! Non-local means.
//!
//! Each output pixel is a weighted mean over a `D x D` search window, with
//! weights `exp(-||v(N_i) - v(N_j)||_a^2 / (2 sigma_r^2))` given by the
//! normalized patch distance of [`crate::patch_distance2`].
//!
//! Two options cover the center-excluded estimator `v0`: the distance can
//! skip the center pixel of both patches, and candidates can be restricted to
//! those whose plain (unnormalized, full-window) squared patch distance is at
//! most `T^2`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::{GrayImage, Padded, PatchKernel};

/// Weight given to the center pixel `j = i` of the search window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfWeight {
    /// The weight the formula gives it, i.e. 1 (zero distance).
    Computed,
    /// The largest weight among the other participating pixels.
    MaxOfOthers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlmParams {
    pub kernel: PatchKernel,
    /// Search window diameter `D` (odd).
    pub search: usize,
    pub sigma_r: f64,
    /// Compare patches without their center pixel (`N_i^0`).
    pub exclude_center_norm: bool,
    pub self_weight: SelfWeight,
    /// Keep only candidates with plain squared patch distance `<= T^2`.
    pub similarity_threshold: Option<f64>,
}

impl NlmParams {
    /// Plain NL-means with a uniform `d x d` kernel.
    pub fn new(d: usize, search: usize, sigma_r: f64) -> Result<Self> {
        let params = Self {
            kernel: PatchKernel::uniform(d)?,
            search,
            sigma_r,
            exclude_center_norm: false,
            self_weight: SelfWeight::MaxOfOthers,
            similarity_threshold: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// The center-excluded estimator `v0`: the distance skips the center
    /// pixel and `i` keeps its computed weight.
    pub fn center_excluded(d: usize, search: usize, sigma_r: f64) -> Result<Self> {
        let params = Self {
            exclude_center_norm: true,
            self_weight: SelfWeight::Computed,
            ..Self::new(d, search, sigma_r)?
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.search.is_multiple_of(2) {
            return Err(invalid(format!(
                "search diameter must be odd, got {}",
                self.search
            )));
        }
        if !(self.sigma_r > 0.0) {
            return Err(invalid(format!(
                "sigma_r must be positive, got {}",
                self.sigma_r
            )));
        }
        if let Some(t) = self.similarity_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid(format!(
                    "similarity threshold must be >= 0, got {t}"
                )));
            }
        }
        if self.exclude_center_norm {
            self.kernel.clone().with_center_excluded(true)?;
        }
        Ok(())
    }

    pub(crate) fn distance_weights(&self) -> Vec<f64> {
        let mut w = self.kernel.effective_weights();
        if self.exclude_center_norm {
            let c = w.len() / 2;
            w[c] = 0.0;
        }
        w
    }
}

impl fmt::Display for NlmParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let uniform = self.kernel.weights().windows(2).all(|w| w[0] == w[1]);
        writeln!(f, "method          nlm")?;
        writeln!(
            f,
            "patch d         {}{}",
            self.kernel.diameter(),
            if uniform { "" } else { " (weighted)" }
        )?;
        writeln!(f, "search D        {}", self.search)?;
        writeln!(f, "sigma_r         {}", self.sigma_r)?;
        writeln!(f, "center in norm  {}", !self.exclude_center_norm)?;
        let self_weight = match self.self_weight {
            SelfWeight::Computed => "computed",
            SelfWeight::MaxOfOthers => "max of others",
        };
        write!(f, "self weight     {self_weight}")?;
        if let Some(t) = self.similarity_threshold {
            write!(f, "\nthreshold T     {t}")?;
        }
        Ok(())
    }
}

/// Denoises `img` with non-local means.
///
/// When a similarity threshold leaves no candidate besides `i` itself, the
/// whole search window is used instead.
pub fn nlm_denoise(img: &GrayImage, params: &NlmParams) -> Result<GrayImage> {
    params.validate()?;
    let (width, height) = (img.width(), img.height());
    let pr = params.kernel.radius();
    let sr = params.search / 2;
    let pad = Padded::new(img.pixels(), width, height, pr + sr);
    let v = &pad.data;

    let weights = params.distance_weights();
    let patch: Vec<(isize, f64)> = pad
        .window_offsets(pr)
        .into_iter()
        .zip(&weights)
        .filter(|(_, &a)| a > 0.0)
        .map(|(o, &a)| (o, a))
        .collect();
    let weight_sum: f64 = patch.iter().map(|(_, a)| a).sum();
    let full_patch = pad.window_offsets(pr);
    let search: Vec<isize> = pad
        .window_offsets(sr)
        .into_iter()
        .filter(|&o| o != 0)
        .collect();
    let threshold2 = params.similarity_threshold.map(|t| t * t);
    let h2 = 2.0 * params.sigma_r * params.sigma_r;

    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        // (weight, value, passes threshold)
        let mut cand: Vec<(f64, f64, bool)> = Vec::with_capacity(search.len());
        for (x, dst) in row.iter_mut().enumerate() {
            let ci = pad.index(x, y);
            cand.clear();
            for &so in &search {
                let cj = (ci as isize + so) as usize;
                let mut num = 0.0;
                for &(ko, a) in &patch {
                    let d = v[(ci as isize + ko) as usize] - v[(cj as isize + ko) as usize];
                    num += a * d * d;
                }
                let passes = match threshold2 {
                    None => true,
                    Some(t2) => plain_distance2(v, ci, cj, &full_patch) <= t2,
                };
                cand.push(((-(num / weight_sum) / h2).exp(), v[cj], passes));
            }
            let use_all = threshold2.is_none() || !cand.iter().any(|c| c.2);
            let participating = || cand.iter().filter(move |c| use_all || c.2);
            let mut self_w = match params.self_weight {
                SelfWeight::Computed => 1.0,
                SelfWeight::MaxOfOthers => participating()
                    .map(|c| c.0)
                    .fold(None, |m: Option<f64>, w| Some(m.map_or(w, |m| m.max(w))))
                    .unwrap_or(1.0),
            };
            if self_w == 0.0 {
                self_w = 1.0;
            }
            let mut num = self_w * v[ci];
            let mut den = self_w;
            for &(w, val, _) in participating() {
                num += w * val;
                den += w;
            }
            *dst = num / den;
        }
    });
    Ok(GrayImage::from_raw(width, height, out))
}

#[inline]
fn plain_distance2(v: &[f64], ci: usize, cj: usize, offsets: &[isize]) -> f64 {
    offsets
        .iter()
        .map(|&o| {
            let d = v[(ci as isize + o) as usize] - v[(cj as isize + o) as usize];
            d * d
        })
        .sum()
}

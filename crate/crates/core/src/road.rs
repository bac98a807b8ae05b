//! ROAD (rank of ordered absolute differences) impulse statistic.
//!
//! `ROAD(i)` sums the `m` smallest absolute differences between `v(i)` and
//! its neighbors in a `(2 radius + 1)^2` window. Impulse-corrupted pixels
//! differ from most of their neighbors and get large values; pixels in
//! smooth or edge regions have at least `m` close neighbors and get small
//! ones. The impulse factors map ROAD values to `(0, 1]` with a Gaussian
//! decay.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::{GrayImage, Padded};
use crate::util::gauss;

/// Window radius and rank count of the ROAD statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoadConfig {
    radius: usize,
    m: usize,
}

impl RoadConfig {
    pub fn new(radius: usize, m: usize) -> Result<Self> {
        if !(radius == 1 || radius == 2) {
            return Err(invalid(format!("ROAD radius must be 1 or 2, got {radius}")));
        }
        let neighbors = (2 * radius + 1) * (2 * radius + 1) - 1;
        if m == 0 || m > neighbors {
            return Err(invalid(format!(
                "ROAD rank count must be in 1..={neighbors}, got {m}"
            )));
        }
        Ok(Self { radius, m })
    }

    /// 3x3 window, four smallest differences.
    pub const fn small() -> Self {
        Self { radius: 1, m: 4 }
    }

    /// 5x5 window, twelve smallest differences.
    pub const fn large() -> Self {
        Self { radius: 2, m: 12 }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self::small()
    }
}

/// Per-pixel ROAD values.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl RoadMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Impulse factor of every pixel.
    pub fn impulse_factors(&self, sigma_i: f64) -> Result<Vec<f64>> {
        check_sigma("sigma_I", sigma_i)?;
        Ok(self.values.iter().map(|&r| gauss(r, sigma_i)).collect())
    }

    /// Linearly rescaled to `[0, 255]` for viewing; an all-zero map stays 0.
    pub fn to_image(&self) -> GrayImage {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        GrayImage::from_raw(
            self.width,
            self.height,
            self.values.iter().map(|v| v * scale).collect(),
        )
    }

    /// Exact values as `x,y,road` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "road"])?;
        for y in 0..self.height {
            for x in 0..self.width {
                w.write_record(&[x.to_string(), y.to_string(), self.get(x, y).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes the ROAD statistic of every pixel, mirroring at the borders.
pub fn road(img: &GrayImage, cfg: RoadConfig) -> RoadMap {
    let (width, height) = (img.width(), img.height());
    let padded = Padded::new(img.pixels(), width, height, cfg.radius);
    let offsets: Vec<isize> = padded
        .window_offsets(cfg.radius)
        .into_iter()
        .filter(|&o| o != 0)
        .collect();
    let m = cfg.m;
    let mut values = vec![0.0; width * height];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            let mut diffs = vec![0.0; offsets.len()];
            for (x, out) in row.iter_mut().enumerate() {
                let c = padded.index(x, y);
                let center = padded.data[c];
                for (d, &o) in diffs.iter_mut().zip(&offsets) {
                    *d = (center - padded.data[(c as isize + o) as usize]).abs();
                }
                *out = sum_smallest(&mut diffs, m);
            }
        });
    RoadMap {
        width,
        height,
        values,
    }
}

/// Sum of the `m` smallest entries, accumulated in ascending order.
fn sum_smallest(values: &mut [f64], m: usize) -> f64 {
    if m < values.len() {
        values.select_nth_unstable_by(m - 1, f64::total_cmp);
    }
    let head = &mut values[..m];
    head.sort_unstable_by(f64::total_cmp);
    head.iter().sum()
}

fn check_sigma(name: &str, sigma: f64) -> Result<()> {
    if sigma > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {sigma}")))
    }
}

/// `w_I = exp(-ROAD^2 / (2 sigma_I^2))`.
pub fn impulse_factor(road_value: f64, sigma_i: f64) -> Result<f64> {
    check_sigma("sigma_I", sigma_i)?;
    Ok(gauss(road_value, sigma_i))
}

/// `J_I = exp(-((ROAD_i + ROAD_j) / 2)^2 / (2 sigma_J^2))`.
pub fn joint_impulse_factor(road_i: f64, road_j: f64, sigma_j: f64) -> Result<f64> {
    check_sigma("sigma_J", sigma_j)?;
    Ok(gauss(0.5 * (road_i + road_j), sigma_j))
}

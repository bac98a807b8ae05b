//! Degree of similarity (DS) of an image.
//!
//! Two patches of a clean image that are identical differ, after adding
//! Gaussian noise of level `sigma`, by a vector whose squared norm over
//! `2 sigma^2` follows a chi-square law with `d^2` degrees of freedom. The
//! threshold `T_alpha` is the distance exceeded with probability `alpha`
//! under that law, and `DS_i` is the fraction of patches in the search window
//! of `i` within `T_alpha` of the patch at `i`.

use std::io::Write;

use rayon::prelude::*;
use statrs::function::gamma::gamma_ur;

use crate::error::{invalid, Result};
use crate::image::{GrayImage, Padded};

const QUANTILE_TOL: f64 = 1e-8;

/// Upper `alpha` quantile of the chi-square law with `k` degrees of freedom,
/// by bisection on the regularized upper incomplete gamma function.
pub fn chi2_upper_quantile(alpha: f64, k: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid(format!(
            "degrees of freedom must be positive, got {k}"
        )));
    }
    let survival = |q: f64| gamma_ur(0.5 * k, 0.5 * q);
    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while survival(hi) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    // survival is decreasing: survival(lo) >= alpha >= survival(hi)
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Similarity threshold `T_alpha = sqrt(2 sigma^2 Q)`, where `Q` is the
/// upper `alpha` quantile of chi-square with `d^2` degrees of freedom.
pub fn t_alpha(alpha: f64, sigma: f64, d: usize) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_odd("patch", d)?;
    let q = chi2_upper_quantile(alpha, (d * d) as f64)?;
    Ok((2.0 * sigma * sigma * q).sqrt())
}

fn check_odd(name: &str, n: usize) -> Result<()> {
    if n % 2 == 1 {
        Ok(())
    } else {
        Err(invalid(format!("{name} diameter must be odd, got {n}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsReport {
    pub alpha: f64,
    pub sigma: f64,
    pub d: usize,
    pub search: usize,
    pub t_alpha: f64,
    pub width: usize,
    pub height: usize,
    /// `DS_i`, row-major.
    pub per_pixel: Vec<f64>,
    /// Mean of `per_pixel`.
    pub global: f64,
}

impl DsReport {
    /// `DS_i` scaled to `[0, 255]`.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.per_pixel.iter().map(|v| v * 255.0).collect(),
        )
    }

    /// Rows of `x,y,ds`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "ds"])?;
        for (idx, v) in self.per_pixel.iter().enumerate() {
            let (x, y) = (idx % self.width, idx / self.width);
            w.write_record(&[x.to_string(), y.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes `DS_i` for every pixel with the plain (unnormalized) Euclidean
/// patch distance over the full `d x d` window.
pub fn ds_map(
    img: &GrayImage,
    sigma: f64,
    alpha: f64,
    d: usize,
    search: usize,
) -> Result<DsReport> {
    check_odd("search", search)?;
    let t = t_alpha(alpha, sigma, d)?;
    let t2 = t * t;
    let (width, height) = (img.width(), img.height());
    let (pr, sr) = (d / 2, search / 2);
    let pv = Padded::new(img.pixels(), width, height, pr + sr);
    let patch = pv.window_offsets(pr);
    let window = pv.window_offsets(sr);
    let v = &pv.data;
    let total = (search * search) as f64;

    let mut per_pixel = vec![0.0; width * height];
    per_pixel
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, dst) in row.iter_mut().enumerate() {
                let ci = pv.index(x, y) as isize;
                let mut count = 0usize;
                for &so in &window {
                    let cj = ci + so;
                    let mut dist = 0.0;
                    let mut within = true;
                    for &ko in &patch {
                        let diff = v[(ci + ko) as usize] - v[(cj + ko) as usize];
                        dist += diff * diff;
                        if dist > t2 {
                            within = false;
                            break;
                        }
                    }
                    count += within as usize;
                }
                *dst = count as f64 / total;
            }
        });
    let global = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
    Ok(DsReport {
        alpha,
        sigma,
        d,
        search,
        t_alpha: t,
        width,
        height,
        per_pixel,
        global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::add_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution};

    #[test]
    fn threshold_matches_tabulated_value() {
        let t = t_alpha(0.1, 20.0, 9).unwrap();
        assert!((t - 279.54).abs() < 0.01, "{t}");
    }

    #[test]
    fn known_quantiles() {
        // chi-square with 2 dof is exponential with mean 2: Q = -2 ln(alpha)
        for alpha in [0.01, 0.1, 0.5, 0.9] {
            let q = chi2_upper_quantile(alpha, 2.0).unwrap();
            assert!((q + 2.0 * f64::ln(alpha)).abs() < 1e-7, "{alpha}: {q}");
        }
        // 1 dof, alpha = 0.05 -> 1.959964^2
        let q = chi2_upper_quantile(0.05, 1.0).unwrap();
        assert!((q - 3.841_458_820_694_124).abs() < 1e-7, "{q}");
    }

    #[test]
    fn threshold_scaling_and_limits() {
        let a = t_alpha(0.2, 7.0, 5).unwrap();
        let b = t_alpha(0.2, 14.0, 5).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9 * b);
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-12] {
            let t = t_alpha(alpha, 10.0, 3).unwrap();
            assert!(t < prev);
            prev = t;
        }
        assert!(prev < 0.1 * t_alpha(0.5, 10.0, 3).unwrap());
        assert!(t_alpha(0.0, 10.0, 3).is_err());
        assert!(t_alpha(1.0, 10.0, 3).is_err());
        assert!(t_alpha(0.1, 0.0, 3).is_err());
        assert!(t_alpha(0.1, 10.0, 4).is_err());
    }

    #[test]
    fn tail_probability_monte_carlo() {
        let (alpha, sigma) = (0.1, 20.0);
        let t = t_alpha(alpha, sigma, 9).unwrap();
        let cut = t * t / (2.0 * sigma * sigma);
        let dist = ChiSquared::new(81.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| dist.sample(&mut rng) > cut).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - alpha).abs() < 0.01, "{frac}");
    }

    #[test]
    fn constant_image_is_fully_similar() {
        let img = GrayImage::filled(10, 10, 77.0).unwrap();
        let r = ds_map(&img, 10.0, 0.1, 3, 5).unwrap();
        assert_eq!(r.global, 1.0);
        assert!(r.per_pixel.iter().all(|&v| v == 1.0));
    }

    /// Direct count with reflected reads.
    fn ds_oracle(img: &GrayImage, t: f64, d: usize, search: usize) -> Vec<f64> {
        let (pr, sr) = ((d / 2) as isize, (search / 2) as isize);
        let mut out = Vec::new();
        for y in 0..img.height() as isize {
            for x in 0..img.width() as isize {
                let mut count = 0;
                for sy in -sr..=sr {
                    for sx in -sr..=sr {
                        let mut s = 0.0;
                        for ky in -pr..=pr {
                            for kx in -pr..=pr {
                                let a = img.get_reflected(x + kx, y + ky);
                                let b = img.get_reflected(x + sx + kx, y + sy + ky);
                                s += (a - b) * (a - b);
                            }
                        }
                        if s.sqrt() <= t {
                            count += 1;
                        }
                    }
                }
                out.push(count as f64 / (search * search) as f64);
            }
        }
        out
    }

    #[test]
    fn matches_direct_count_and_bounds() {
        let clean = GrayImage::from_fn(12, 9, |x, y| ((x * 7 + y * 3) % 5) as f64 * 20.0).unwrap();
        let img = add_gaussian(&clean, 10.0, 4).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [0.05, 0.1, 0.2] {
            let r = ds_map(&img, 10.0, alpha, 3, 5).unwrap();
            let oracle = ds_oracle(&img, r.t_alpha, 3, 5);
            for (a, b) in r.per_pixel.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
                assert!(*a >= 1.0 / 25.0 && *a <= 1.0);
            }
            let mean = r.per_pixel.iter().sum::<f64>() / r.per_pixel.len() as f64;
            assert!((r.global - mean).abs() < 1e-15);
            assert!(r.global <= prev);
            prev = r.global;
        }
    }

    #[test]
    fn csv_and_preview() {
        let img = GrayImage::filled(3, 2, 1.0).unwrap();
        let r = ds_map(&img, 5.0, 0.1, 3, 3).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,ds\n0,0,1\n"));
        assert_eq!(text.lines().count(), 7);
        assert_eq!(r.to_image().get(2, 1), 255.0);
    }
}

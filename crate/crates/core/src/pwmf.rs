//! Patch-based weighted means filter (PWMF).
//!
//! PWMF is NL-means made robust to impulse noise. Patch similarity is
//! measured by an impulse-masked norm in which every offset `k` of the patch
//! at `i` is compared with its translate `T(k)` in the patch at `j`, and the
//! comparison is weighted by
//!
//! ```text
//! w_SM(i,k) * F(k, T(k)),    F(k, T(k)) = w_I(k) * w_I(T(k))
//! ```
//!
//! so pairs touching an impulse-like pixel barely contribute. The center
//! offset is left out (the sum runs over `N_i^0`). The filter weight is
//!
//! ```text
//! w(i,j) = w_S(i,j) * w_I(j) * w_M(i,j),   w_M = exp(-||.||_M^2 / (2 sigma_M^2))
//! ```
//!
//! Either spatial factor can be dropped by setting its scale to infinity.
//! With `sigma_I = sigma_S = sigma_SM = inf` the filter is exactly the
//! center-excluded NL-means estimator.
//!
//! ROAD is computed once on the input and shared by all pixels.

use std::fmt;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::{reflect, window_chebyshev, GrayImage, Padded};
use crate::noise::NoiseKind;
use crate::road::{road, RoadConfig, RoadMap};
use crate::util::{gauss, weighted_median};

/// Below this the masked norm is undefined and reported as `+inf`.
const MIN_NORM_MASS: f64 = 1e-12;
/// Denominators below this trigger the weighted-median fallback.
const MIN_WEIGHT_MASS: f64 = 1e-12;

/// Search window sizes tabulated at `sigma = 0, 10, 20, 30`.
const SEARCH_TABLE: [(f64, f64); 4] = [(0.0, 7.0), (10.0, 7.0), (20.0, 11.0), (30.0, 15.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct PwmfParams {
    /// Patch diameter `d` (odd).
    pub patch: usize,
    /// Search window diameter `D` (odd).
    pub search: usize,
    pub sigma_i: f64,
    pub sigma_m: f64,
    /// Spatial scale of `w_S`; infinite drops the factor.
    pub sigma_s: f64,
    /// Spatial scale of `w_SM` inside the patch norm; infinite drops it.
    pub sigma_sm: f64,
    pub road: RoadConfig,
}

impl PwmfParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 3 || self.patch.is_multiple_of(2) {
            return Err(invalid(format!(
                "patch diameter must be odd and >= 3, got {}",
                self.patch
            )));
        }
        if self.search.is_multiple_of(2) {
            return Err(invalid(format!(
                "search diameter must be odd, got {}",
                self.search
            )));
        }
        for (name, s) in [
            ("sigma_I", self.sigma_i),
            ("sigma_M", self.sigma_m),
            ("sigma_S", self.sigma_s),
            ("sigma_SM", self.sigma_sm),
        ] {
            if !(s > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {s}")));
            }
        }
        if self.sigma_m.is_infinite() {
            return Err(invalid("sigma_M must be finite"));
        }
        Ok(())
    }
}

impl fmt::Display for PwmfParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scale = |s: f64| {
            if s.is_infinite() {
                "inf (factor omitted)".to_string()
            } else {
                s.to_string()
            }
        };
        let side = 2 * self.road.radius() + 1;
        writeln!(f, "method          pwmf")?;
        writeln!(f, "patch d         {}", self.patch)?;
        writeln!(f, "search D        {}", self.search)?;
        writeln!(f, "sigma_I         {}", scale(self.sigma_i))?;
        writeln!(f, "sigma_M         {}", self.sigma_m)?;
        writeln!(f, "sigma_S         {}", scale(self.sigma_s))?;
        writeln!(f, "sigma_SM        {}", scale(self.sigma_sm))?;
        write!(f, "road            {side}x{side}, m={}", self.road.m())
    }
}

/// Search window size for Gaussian level `sigma`: the tabulated sizes,
/// linearly interpolated (extrapolated past 30) and rounded to the nearest
/// odd integer, ties upward.
pub fn search_size(sigma: f64) -> usize {
    let t = &SEARCH_TABLE;
    let seg = t
        .windows(2)
        .find(|w| sigma <= w[1].0)
        .unwrap_or(&t[t.len() - 2..]);
    let (s0, d0) = seg[0];
    let (s1, d1) = seg[1];
    let d = (d0 + (sigma - s0) * (d1 - d0) / (s1 - s0)).max(1.0);
    (2.0 * ((d - 1.0) / 2.0 + 0.5).floor() + 1.0) as usize
}

fn road_for(p: f64) -> RoadConfig {
    if p < 0.35 {
        RoadConfig::small()
    } else {
        RoadConfig::large()
    }
}

fn impulse_sigma_i(p: f64) -> f64 {
    if p <= 0.3 {
        50.0
    } else if p >= 0.4 {
        160.0
    } else {
        50.0 + (p - 0.3) / 0.1 * 110.0
    }
}

/// Parameter schedule for a known noise level.
///
/// - impulse: `sigma_M = 3 + 20p`, `sigma_S = 0.6 + p`, no `w_SM`,
///   `sigma_I` 50 up to `p = 0.3` and 160 from `p = 0.4`;
/// - mixed: `sigma_I = 50 + 5 sigma / 3`, `sigma_M = 3 + 0.4 sigma + 20p`,
///   `sigma_SM = 2`, no `w_S`;
/// - gaussian: the mixed schedule at `p = 0` with `w_I` disabled, which is
///   NL-means with the masked norm.
///
/// ROAD uses 3x3 windows with `m = 4` below `p = 0.35` and 5x5 with
/// `m = 12` above. The patch is always 9x9; `D` follows [`search_size`].
/// Mixed noise beyond `p = 0.3` is an extrapolation of the schedule.
pub fn auto_params(sigma: f64, p: f64, kind: NoiseKind) -> Result<PwmfParams> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("p must be in [0, 1), got {p}")));
    }
    let search = search_size(sigma);
    let params = match kind {
        NoiseKind::Impulse => {
            if sigma != 0.0 {
                return Err(invalid(format!(
                    "impulse noise needs sigma = 0, got {sigma}"
                )));
            }
            PwmfParams {
                patch: 9,
                search,
                sigma_i: impulse_sigma_i(p),
                sigma_m: 3.0 + 20.0 * p,
                sigma_s: 0.6 + p,
                sigma_sm: f64::INFINITY,
                road: road_for(p),
            }
        }
        NoiseKind::Mixed | NoiseKind::Gaussian => {
            if kind == NoiseKind::Gaussian && p != 0.0 {
                return Err(invalid(format!("gaussian noise needs p = 0, got {p}")));
            }
            PwmfParams {
                patch: 9,
                search,
                sigma_i: if kind == NoiseKind::Gaussian {
                    f64::INFINITY
                } else {
                    50.0 + 5.0 * sigma / 3.0
                },
                sigma_m: 3.0 + 0.4 * sigma + 20.0 * p,
                sigma_s: f64::INFINITY,
                sigma_sm: 2.0,
                road: road_for(p),
            }
        }
    };
    Ok(params)
}

/// Impulse-masked squared patch norm `||v(N_i) - v(N_j)||_M^2`.
///
/// `roads` must be the ROAD map of `img` under `params.road`. Returns
/// `f64::INFINITY` when every comparison is masked out.
pub fn pwmf_norm2(
    img: &GrayImage,
    roads: &RoadMap,
    (ix, iy): (usize, usize),
    (jx, jy): (usize, usize),
    params: &PwmfParams,
) -> f64 {
    let r = (params.patch / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let wi = |x: isize, y: isize| gauss(roads.get(reflect(x, w), reflect(y, h)), params.sigma_i);
    let (ix, iy, jx, jy) = (ix as isize, iy as isize, jx as isize, jy as isize);
    let mut num = 0.0;
    let mut den = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx == 0 && dy == 0 {
                continue;
            }
            let cheb = dx.abs().max(dy.abs()) as f64;
            let a = gauss(cheb, params.sigma_sm) * wi(ix + dx, iy + dy) * wi(jx + dx, jy + dy);
            let d = img.get_reflected(ix + dx, iy + dy) - img.get_reflected(jx + dx, jy + dy);
            num += a * d * d;
            den += a;
        }
    }
    if den < MIN_NORM_MASS {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Denoises `img` with PWMF.
///
/// The center `j = i` takes part with its computed weight `w_I(i)`. If the
/// total weight vanishes the pixel gets the `w_I`-weighted median of its
/// search window.
pub fn pwmf_denoise(img: &GrayImage, params: &PwmfParams) -> Result<GrayImage> {
    params.validate()?;
    let (width, height) = (img.width(), img.height());
    let roads = road(img, params.road);
    let wi_values = roads.impulse_factors(params.sigma_i)?;

    let pr = params.patch / 2;
    let sr = params.search / 2;
    let pv = Padded::new(img.pixels(), width, height, pr + sr);
    let pw = Padded::new(&wi_values, width, height, pr + sr);
    let (v, wi) = (&pv.data, &pw.data);

    // Patch offsets over N_i^0 with their w_SM factor.
    let patch: Vec<(isize, f64)> = pv
        .window_offsets(pr)
        .into_iter()
        .zip(window_chebyshev(pr))
        .filter(|&(o, _)| o != 0)
        .map(|(o, c)| (o, gauss(c as f64, params.sigma_sm)))
        .collect();
    // Search offsets with their w_S factor.
    let search: Vec<(isize, f64)> = pv
        .window_offsets(sr)
        .into_iter()
        .zip(window_chebyshev(sr))
        .map(|(o, c)| (o, gauss(c as f64, params.sigma_s)))
        .collect();
    let h2 = 2.0 * params.sigma_m * params.sigma_m;

    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            let ci = pv.index(x, y);
            let mut num = 0.0;
            let mut den = 0.0;
            for &(so, ws) in &search {
                let cj = (ci as isize + so) as usize;
                let prior = ws * wi[cj];
                if prior == 0.0 {
                    continue;
                }
                let mut pn = 0.0;
                let mut pd = 0.0;
                for &(ko, wsm) in &patch {
                    let k = (ci as isize + ko) as usize;
                    let t = (cj as isize + ko) as usize;
                    let a = wsm * wi[k] * wi[t];
                    let d = v[k] - v[t];
                    pn += a * d * d;
                    pd += a;
                }
                // A fully masked norm is infinite and gives zero weight.
                let wm = if pd < MIN_NORM_MASS {
                    0.0
                } else {
                    (-(pn / pd) / h2).exp()
                };
                let w = prior * wm;
                num += w * v[cj];
                den += w;
            }
            *dst = if den >= MIN_WEIGHT_MASS {
                num / den
            } else {
                let (vals, ws): (Vec<f64>, Vec<f64>) = search
                    .iter()
                    .map(|&(so, _)| {
                        let cj = (ci as isize + so) as usize;
                        (v[cj], wi[cj])
                    })
                    .unzip();
                weighted_median(&vals, &ws)
            };
        }
    });
    Ok(GrayImage::from_raw(width, height, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::impulse_factor;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let s = crate::noise::derive_seed(seed, (y * w + x) as u64);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 255.0
        })
        .unwrap()
    }

    fn small_params() -> PwmfParams {
        PwmfParams {
            patch: 3,
            search: 5,
            sigma_i: 200.0,
            sigma_m: 30.0,
            sigma_s: 2.0,
            sigma_sm: 1.0,
            road: RoadConfig::small(),
        }
    }

    #[test]
    fn auto_params_impulse() {
        let p = auto_params(0.0, 0.2, NoiseKind::Impulse).unwrap();
        assert!((p.sigma_m - 7.0).abs() < 1e-12);
        assert!((p.sigma_s - 0.8).abs() < 1e-12);
        assert_eq!(p.sigma_i, 50.0);
        assert_eq!((p.patch, p.search), (9, 7));
        assert_eq!(p.road, RoadConfig::small());
        assert!(p.sigma_sm.is_infinite());

        let hi = auto_params(0.0, 0.5, NoiseKind::Impulse).unwrap();
        assert_eq!(hi.sigma_i, 160.0);
        assert_eq!(hi.road, RoadConfig::large());
        let mid = auto_params(0.0, 0.35, NoiseKind::Impulse).unwrap();
        assert!((mid.sigma_i - 105.0).abs() < 1e-9);
        assert_eq!(mid.road, RoadConfig::large());
        assert_eq!(
            auto_params(0.0, 0.34, NoiseKind::Impulse).unwrap().road,
            RoadConfig::small()
        );
    }

    #[test]
    fn auto_params_mixed_and_gaussian() {
        let p = auto_params(20.0, 0.3, NoiseKind::Mixed).unwrap();
        assert!((p.sigma_i - (50.0 + 100.0 / 3.0)).abs() < 1e-12);
        assert!((p.sigma_m - 17.0).abs() < 1e-12);
        assert_eq!(p.sigma_sm, 2.0);
        assert!(p.sigma_s.is_infinite());
        assert_eq!(p.search, 11);

        let g = auto_params(15.0, 0.0, NoiseKind::Gaussian).unwrap();
        assert_eq!(g.search, 9);
        assert!(g.sigma_i.is_infinite());

        assert!(auto_params(10.0, 0.2, NoiseKind::Impulse).is_err());
        assert!(auto_params(10.0, 0.2, NoiseKind::Gaussian).is_err());
        assert!(auto_params(10.0, 1.0, NoiseKind::Mixed).is_err());
    }

    #[test]
    fn search_size_interpolation() {
        assert_eq!(search_size(0.0), 7);
        assert_eq!(search_size(10.0), 7);
        assert_eq!(search_size(20.0), 11);
        assert_eq!(search_size(30.0), 15);
        assert_eq!(search_size(15.0), 9);
        assert_eq!(search_size(5.0), 7);
        // 8.0 + ... : 12.5 -> D = 8 exactly, tie goes up
        assert_eq!(search_size(12.5), 9);
        assert_eq!(search_size(17.0), 9);
        assert_eq!(search_size(40.0), 19);
    }

    #[test]
    fn norm_examples() {
        let img = GrayImage::filled(6, 6, 50.0).unwrap();
        let roads = road(&img, RoadConfig::small());
        let p = small_params();
        assert_eq!(pwmf_norm2(&img, &roads, (2, 2), (3, 3), &p), 0.0);

        // Every factor masked: all ROAD values are large next to sigma_I.
        let noisy = GrayImage::from_fn(6, 6, |x, y| ((x * 7 + y * 13) % 36) as f64 * 7.0).unwrap();
        let roads = road(&noisy, RoadConfig::small());
        let tight = PwmfParams {
            sigma_i: 0.01,
            ..p.clone()
        };
        assert!(roads.values().iter().all(|&r| r >= 4.0));
        assert!(pwmf_norm2(&noisy, &roads, (2, 2), (3, 2), &tight).is_infinite());
    }

    #[test]
    fn norm_masks_impulse_offset() {
        // Two flat halves, so every ROAD value is 0 except at the impulse.
        let img = GrayImage::from_fn(8, 5, |x, y| match (x, y) {
            (2, 1) => 255.0,
            (x, _) if x < 4 => 10.0,
            _ => 30.0,
        })
        .unwrap();
        let roads = road(&img, RoadConfig::small());
        assert_eq!(roads.get(2, 2), 0.0);
        let p = PwmfParams {
            sigma_sm: f64::INFINITY,
            sigma_i: 40.0,
            ..small_params()
        };
        // The patch at (2, 2) sees the impulse at offset (0, -1); the other
        // seven offsets each contribute (10 - 30)^2.
        let norm = pwmf_norm2(&img, &roads, (2, 2), (5, 2), &p);
        assert!((norm - 400.0).abs() < 1e-9, "{norm}");
        let unmasked = PwmfParams {
            sigma_i: f64::INFINITY,
            ..p
        };
        let plain = (7.0 * 400.0 + 225.0f64.powi(2)) / 8.0;
        assert!((pwmf_norm2(&img, &roads, (2, 2), (5, 2), &unmasked) - plain).abs() < 1e-9);
    }

    /// Direct evaluation through the scalar norm.
    fn oracle(img: &GrayImage, p: &PwmfParams) -> Vec<f64> {
        let roads = road(img, p.road);
        let (w, h) = (img.width(), img.height());
        let r = (p.search / 2) as isize;
        let mut out = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (jx, jy) = (reflect(x + dx, w), reflect(y + dy, h));
                        let cheb = dx.abs().max(dy.abs()) as f64;
                        let ws = gauss(cheb, p.sigma_s);
                        let wij = impulse_factor(roads.get(jx, jy), p.sigma_i).unwrap();
                        let norm = norm_at(img, &roads, (x, y), (x + dx, y + dy), p);
                        let wm = (-norm / (2.0 * p.sigma_m * p.sigma_m)).exp();
                        let wt = ws * wij * wm;
                        num += wt * img.get(jx, jy);
                        den += wt;
                    }
                }
                out.push(num / den);
            }
        }
        out
    }

    /// The masked norm for possibly out-of-range centers.
    fn norm_at(
        img: &GrayImage,
        roads: &RoadMap,
        i: (isize, isize),
        j: (isize, isize),
        p: &PwmfParams,
    ) -> f64 {
        let (w, h) = (img.width(), img.height());
        let r = (p.patch / 2) as isize;
        let (mut num, mut den) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let k = (i.0 + dx, i.1 + dy);
                let t = (j.0 + dx, j.1 + dy);
                let wk =
                    impulse_factor(roads.get(reflect(k.0, w), reflect(k.1, h)), p.sigma_i).unwrap();
                let wt =
                    impulse_factor(roads.get(reflect(t.0, w), reflect(t.1, h)), p.sigma_i).unwrap();
                let a = gauss(dx.abs().max(dy.abs()) as f64, p.sigma_sm) * wk * wt;
                let d = img.get_reflected(k.0, k.1) - img.get_reflected(t.0, t.1);
                num += a * d * d;
                den += a;
            }
        }
        if den < 1e-12 {
            f64::INFINITY
        } else {
            num / den
        }
    }

    #[test]
    fn matches_brute_force() {
        let img = random_image(8, 8, 17);
        for p in [
            small_params(),
            PwmfParams {
                sigma_s: f64::INFINITY,
                sigma_sm: 2.0,
                sigma_i: 120.0,
                ..small_params()
            },
            PwmfParams {
                patch: 5,
                search: 3,
                road: RoadConfig::large(),
                sigma_i: 900.0,
                ..small_params()
            },
        ] {
            let out = pwmf_denoise(&img, &p).unwrap();
            for (a, b) in out.pixels().iter().zip(oracle(&img, &p)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn scalar_norm_agrees_with_oracle_inside() {
        let img = random_image(10, 10, 2);
        let p = small_params();
        let roads = road(&img, p.road);
        let a = pwmf_norm2(&img, &roads, (3, 4), (5, 6), &p);
        let b = norm_at(&img, &roads, (3, 4), (5, 6), &p);
        assert_eq!(a, b);
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = GrayImage::filled(12, 12, 90.0).unwrap();
        let p = auto_params(0.0, 0.2, NoiseKind::Impulse).unwrap();
        let out = pwmf_denoise(&img, &p).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 90.0).abs() < 1e-12));
    }

    #[test]
    fn restores_isolated_impulse() {
        let img = GrayImage::from_fn(16, 16, |x, y| if (x, y) == (8, 8) { 255.0 } else { 128.0 })
            .unwrap();
        let p = auto_params(0.0, 0.2, NoiseKind::Impulse).unwrap();
        let out = pwmf_denoise(&img, &p).unwrap();
        assert!((out.get(8, 8) - 128.0).abs() < 2.0, "{}", out.get(8, 8));
    }

    #[test]
    fn reduces_to_center_excluded_nlm() {
        use crate::nlm::{nlm_denoise, NlmParams};
        let img = random_image(12, 10, 5);
        let p = PwmfParams {
            patch: 5,
            search: 7,
            sigma_i: f64::INFINITY,
            sigma_m: 35.0,
            sigma_s: f64::INFINITY,
            sigma_sm: f64::INFINITY,
            road: RoadConfig::small(),
        };
        let a = pwmf_denoise(&img, &p).unwrap();
        let b = nlm_denoise(&img, &NlmParams::center_excluded(5, 7, 35.0).unwrap()).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn rejects_bad_params() {
        let img = GrayImage::filled(8, 8, 0.0).unwrap();
        for p in [
            PwmfParams {
                patch: 4,
                ..small_params()
            },
            PwmfParams {
                search: 6,
                ..small_params()
            },
            PwmfParams {
                sigma_m: 0.0,
                ..small_params()
            },
            PwmfParams {
                sigma_i: -1.0,
                ..small_params()
            },
        ] {
            assert!(pwmf_denoise(&img, &p).is_err());
        }
    }
}

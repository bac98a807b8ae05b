//! Trilateral filter.
//!
//! A bilateral filter whose range factor is switched off for impulse-like
//! pixels. The weight of `j` in the mean for `i` is
//!
//! ```text
//! w(i,j) = w_S(i,j) * w_R(i,j)^J(i,j) * w_I(j)^(1 - J(i,j))
//! ```
//!
//! with `J` the joint impulse factor of the pair. When both pixels look clean
//! (`J ~ 1`) the filter is bilateral; when either looks like an impulse
//! (`J ~ 0`) the weight is driven by how impulse-like `j` is.

use std::fmt;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::image::{window_chebyshev, GrayImage, Padded};
use crate::road::{road, RoadConfig};
use crate::util::weighted_median;

/// Denominators below this trigger the weighted-median fallback.
const MIN_WEIGHT_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrifParams {
    /// Search window diameter (odd).
    pub search: usize,
    pub sigma_i: f64,
    pub sigma_j: f64,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub road: RoadConfig,
    pub iterations: usize,
    /// Per-pass spatial scale. When non-empty it overrides `sigma_s` and
    /// `iterations`: pass `k` uses `sigma_s_schedule[k]`.
    pub sigma_s_schedule: Vec<f64>,
}

impl Default for TrifParams {
    fn default() -> Self {
        Self {
            search: 5,
            sigma_i: 40.0,
            sigma_j: 50.0,
            sigma_s: 0.5,
            sigma_r: 40.0,
            road: RoadConfig::small(),
            iterations: 1,
            sigma_s_schedule: Vec::new(),
        }
    }
}

impl TrifParams {
    /// The benchmark protocol for a noise level.
    ///
    /// Impulse noise (`sigma == 0`): one pass for `p` around 0.2, two for
    /// 0.3 to 0.4, four for 0.5. Mixed noise: two passes whose spatial scales
    /// depend on `sigma` (`0.3, 1` near 10; `0.3, 15` near 20; `15, 15` near
    /// 30). The range scale is 40 for impulse noise and `3 sigma` for mixed.
    pub fn protocol(sigma: f64, p: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) || !(0.0..1.0).contains(&p) {
            return Err(invalid(format!("bad noise level sigma={sigma} p={p}")));
        }
        let base = Self::default();
        if sigma == 0.0 {
            let iterations = if p < 0.25 {
                1
            } else if p < 0.45 {
                2
            } else {
                4
            };
            return Ok(Self { iterations, ..base });
        }
        let schedule = if sigma < 15.0 {
            vec![0.3, 1.0]
        } else if sigma < 25.0 {
            vec![0.3, 15.0]
        } else {
            vec![15.0, 15.0]
        };
        Ok(Self {
            sigma_r: 3.0 * sigma,
            iterations: schedule.len(),
            sigma_s_schedule: schedule,
            ..base
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.search.is_multiple_of(2) {
            return Err(invalid(format!(
                "search diameter must be odd, got {}",
                self.search
            )));
        }
        for (name, s) in [
            ("sigma_I", self.sigma_i),
            ("sigma_J", self.sigma_j),
            ("sigma_S", self.sigma_s),
            ("sigma_R", self.sigma_r),
        ] {
            if !(s > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {s}")));
            }
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.sigma_s_schedule.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("sigma_S schedule entries must be positive"));
        }
        Ok(())
    }

    /// Spatial scale of every pass, in order.
    pub fn passes(&self) -> Vec<f64> {
        if self.sigma_s_schedule.is_empty() {
            vec![self.sigma_s; self.iterations]
        } else {
            self.sigma_s_schedule.clone()
        }
    }
}

impl fmt::Display for TrifParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method          trif")?;
        writeln!(f, "search D        {}", self.search)?;
        writeln!(f, "sigma_I         {}", self.sigma_i)?;
        writeln!(f, "sigma_J         {}", self.sigma_j)?;
        writeln!(f, "sigma_R         {}", self.sigma_r)?;
        writeln!(
            f,
            "road            {}x{}, m={}",
            2 * self.road.radius() + 1,
            2 * self.road.radius() + 1,
            self.road.m()
        )?;
        let passes: Vec<String> = self.passes().iter().map(|s| s.to_string()).collect();
        write!(f, "sigma_S passes  {}", passes.join(", "))
    }
}

/// Log of the pair weight, given `|i - j|`, `v(i) - v(j)` and both ROAD values.
#[inline]
fn log_pair_weight(
    p: &TrifParams,
    sigma_s: f64,
    cheb: f64,
    dv: f64,
    road_i: f64,
    road_j: f64,
) -> f64 {
    let mean = 0.5 * (road_i + road_j);
    let joint = (-(mean * mean) / (2.0 * p.sigma_j * p.sigma_j)).exp();
    let log_ws = -(cheb * cheb) / (2.0 * sigma_s * sigma_s);
    let log_wr = -(dv * dv) / (2.0 * p.sigma_r * p.sigma_r);
    let log_wi = -(road_j * road_j) / (2.0 * p.sigma_i * p.sigma_i);
    log_ws + joint * log_wr + (1.0 - joint) * log_wi
}

/// One pass of the trilateral filter at spatial scale `params.sigma_s`.
pub fn trif_denoise(img: &GrayImage, params: &TrifParams) -> Result<GrayImage> {
    params.validate()?;
    Ok(trif_pass(img, params, params.sigma_s))
}

/// Runs all passes of `params`, feeding each output into the next pass.
/// ROAD is recomputed from each pass's input.
pub fn trif_iterate(img: &GrayImage, params: &TrifParams) -> Result<GrayImage> {
    params.validate()?;
    let mut current = img.clone();
    for sigma_s in params.passes() {
        current = trif_pass(&current, params, sigma_s);
    }
    Ok(current)
}

fn trif_pass(img: &GrayImage, params: &TrifParams, sigma_s: f64) -> GrayImage {
    let (width, height) = (img.width(), img.height());
    let sr = params.search / 2;
    let roads = road(img, params.road);
    let pv = Padded::new(img.pixels(), width, height, sr);
    let pr = Padded::new(roads.values(), width, height, sr);
    let offsets = pv.window_offsets(sr);
    let cheb: Vec<f64> = window_chebyshev(sr).into_iter().map(|c| c as f64).collect();

    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let mut vals = vec![0.0; offsets.len()];
        let mut wis = vec![0.0; offsets.len()];
        for (x, dst) in row.iter_mut().enumerate() {
            let ci = pv.index(x, y);
            let (vi, ri) = (pv.data[ci], pr.data[ci]);
            let mut num = 0.0;
            let mut den = 0.0;
            for (&o, &c) in offsets.iter().zip(&cheb) {
                let cj = (ci as isize + o) as usize;
                let (vj, rj) = (pv.data[cj], pr.data[cj]);
                let w = log_pair_weight(params, sigma_s, c, vi - vj, ri, rj).exp();
                num += w * vj;
                den += w;
            }
            *dst = if den >= MIN_WEIGHT_MASS {
                num / den
            } else {
                for (k, &o) in offsets.iter().enumerate() {
                    let cj = (ci as isize + o) as usize;
                    vals[k] = pv.data[cj];
                    let r = pr.data[cj];
                    wis[k] = (-(r * r) / (2.0 * params.sigma_i * params.sigma_i)).exp();
                }
                weighted_median(&vals, &wis)
            };
        }
    });
    GrayImage::from_raw(width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::{impulse_factor, joint_impulse_factor};

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let s = crate::noise::derive_seed(seed, (y * w + x) as u64);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 255.0
        })
        .unwrap()
    }

    /// Direct evaluation of the weight product with reflected reads and a
    /// full-sort ROAD.
    fn oracle(img: &GrayImage, p: &TrifParams) -> Vec<f64> {
        let road_at = |x: isize, y: isize| {
            let rr = p.road.radius() as isize;
            let c = img.get_reflected(x, y);
            let mut d = Vec::new();
            for dy in -rr..=rr {
                for dx in -rr..=rr {
                    if dx != 0 || dy != 0 {
                        d.push((c - img.get_reflected(x + dx, y + dy)).abs());
                    }
                }
            }
            d.sort_by(f64::total_cmp);
            d[..p.road.m()].iter().sum::<f64>()
        };
        let (w, h) = (img.width() as isize, img.height() as isize);
        let r = (p.search / 2) as isize;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let vi = img.get(x as usize, y as usize);
                let ri = road_at(x, y);
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (jx, jy) = (
                            crate::image::reflect(x + dx, w as usize),
                            crate::image::reflect(y + dy, h as usize),
                        );
                        let vj = img.get(jx, jy);
                        let rj = road_at(jx as isize, jy as isize);
                        let cheb = dx.abs().max(dy.abs()) as f64;
                        let ws = (-(cheb * cheb) / (2.0 * p.sigma_s * p.sigma_s)).exp();
                        let wr = (-((vi - vj) * (vi - vj)) / (2.0 * p.sigma_r * p.sigma_r)).exp();
                        let wi = impulse_factor(rj, p.sigma_i).unwrap();
                        let jj = joint_impulse_factor(ri, rj, p.sigma_j).unwrap();
                        let wt = ws * wr.powf(jj) * wi.powf(1.0 - jj);
                        num += wt * vj;
                        den += wt;
                    }
                }
                out.push(num / den);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force() {
        let img = random_image(8, 8, 21);
        for p in [
            TrifParams::default(),
            TrifParams {
                sigma_s: 2.0,
                sigma_r: 80.0,
                sigma_i: 400.0,
                sigma_j: 300.0,
                search: 5,
                ..Default::default()
            },
            TrifParams {
                road: RoadConfig::large(),
                sigma_s: 1.0,
                sigma_i: 600.0,
                sigma_j: 800.0,
                search: 3,
                ..Default::default()
            },
        ] {
            let out = trif_denoise(&img, &p).unwrap();
            for (a, b) in out.pixels().iter().zip(oracle(&img, &p)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = GrayImage::filled(10, 10, 77.0).unwrap();
        let p = TrifParams {
            iterations: 3,
            ..Default::default()
        };
        let out = trif_iterate(&img, &p).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 77.0).abs() < 1e-12));
    }

    #[test]
    fn removes_isolated_impulse() {
        let img =
            GrayImage::from_fn(11, 11, |x, y| if (x, y) == (5, 5) { 255.0 } else { 0.0 }).unwrap();
        let out = trif_denoise(&img, &TrifParams::default()).unwrap();
        assert!(out.get(5, 5).abs() < 1.0, "{}", out.get(5, 5));
    }

    #[test]
    fn single_iteration_equals_one_pass() {
        let img = random_image(12, 9, 4);
        let p = TrifParams::default();
        assert_eq!(
            trif_iterate(&img, &p).unwrap(),
            trif_denoise(&img, &p).unwrap()
        );
        let twice = trif_denoise(&trif_denoise(&img, &p).unwrap(), &p).unwrap();
        let p2 = TrifParams {
            iterations: 2,
            ..p.clone()
        };
        assert_eq!(trif_iterate(&img, &p2).unwrap(), twice);
    }

    #[test]
    fn schedule_sets_each_pass() {
        let img = random_image(10, 10, 6);
        let p = TrifParams {
            sigma_s_schedule: vec![0.3, 15.0],
            ..Default::default()
        };
        let first = trif_denoise(
            &img,
            &TrifParams {
                sigma_s: 0.3,
                ..p.clone()
            },
        )
        .unwrap();
        let second = trif_denoise(
            &first,
            &TrifParams {
                sigma_s: 15.0,
                ..p.clone()
            },
        )
        .unwrap();
        assert_eq!(trif_iterate(&img, &p).unwrap(), second);
    }

    #[test]
    fn convex_combination_bound() {
        let img = random_image(16, 12, 9);
        let out = trif_denoise(
            &img,
            &TrifParams {
                sigma_s: 3.0,
                ..Default::default()
            },
        )
        .unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let v = img.get_reflected(x as isize + dx, y as isize + dy);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                let o = out.get(x, y);
                assert!(o >= lo - 1e-9 && o <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn pair_weight_properties() {
        let p = TrifParams::default();
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let rj = k as f64 * 20.0;
            let w = log_pair_weight(&p, 0.5, 1.0, 0.0, 30.0, rj).exp();
            assert!(w > 0.0 || rj > 0.0);
            assert!(w <= 1.0);
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn degenerate_mass_falls_back_to_weighted_median() {
        // A tiny spatial scale kills every weight except the center's, whose
        // own impulse factor is ~0 on an isolated impulse.
        let img =
            GrayImage::from_fn(7, 7, |x, y| if (x, y) == (3, 3) { 255.0 } else { 10.0 }).unwrap();
        let p = TrifParams {
            sigma_s: 0.05,
            sigma_i: 5.0,
            sigma_j: 5.0,
            ..Default::default()
        };
        let out = trif_denoise(&img, &p).unwrap();
        assert_eq!(out.get(3, 3), 10.0);
    }

    #[test]
    fn protocol_schedules() {
        assert_eq!(TrifParams::protocol(0.0, 0.2).unwrap().passes().len(), 1);
        assert_eq!(TrifParams::protocol(0.0, 0.3).unwrap().passes().len(), 2);
        assert_eq!(TrifParams::protocol(0.0, 0.4).unwrap().passes().len(), 2);
        assert_eq!(TrifParams::protocol(0.0, 0.5).unwrap().passes().len(), 4);
        assert_eq!(
            TrifParams::protocol(10.0, 0.2).unwrap().passes(),
            vec![0.3, 1.0]
        );
        assert_eq!(
            TrifParams::protocol(20.0, 0.3).unwrap().passes(),
            vec![0.3, 15.0]
        );
        assert_eq!(
            TrifParams::protocol(30.0, 0.2).unwrap().passes(),
            vec![15.0, 15.0]
        );
        assert_eq!(TrifParams::protocol(20.0, 0.2).unwrap().sigma_r, 60.0);
        assert!(TrifParams::protocol(-1.0, 0.2).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        assert!(trif_denoise(
            &img,
            &TrifParams {
                search: 4,
                ..Default::default()
            }
        )
        .is_err());
        assert!(trif_denoise(
            &img,
            &TrifParams {
                sigma_r: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(trif_iterate(
            &img,
            &TrifParams {
                iterations: 0,
                ..Default::default()
            }
        )
        .is_err());
    }
}

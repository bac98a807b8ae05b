//! Monte-Carlo checks of the convergence behavior of random weighted means.
//!
//! The pairs `(a_k, v_k)` are built from an i.i.d. Gaussian base sequence
//! `z_t = u + sigma g_t` by sliding a window of `l + 1` samples: `v_k` is the
//! window center and `a_k` compares the rest of the window with a fixed
//! reference vector. Items more than `l` apart share no samples, so the pairs
//! are stationary and exactly `l`-dependent, mirroring the overlapping
//! patches of NL-means. Because `a_k` does not involve `v_k`, the weighted
//! mean `sum a_k v_k / sum a_k` converges to `u`, and its error should decay
//! like `n^(-1/2)` with Gaussian fluctuations.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::image::{GrayImage, Padded};
use crate::nlm::NlmParams;
use crate::noise::{add_gaussian, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightModel {
    /// `a_k = 1`.
    Constant,
    /// `a_k = exp(-|x - w_k|^2 / (l sigma_r^2 * 2))`, where `w_k` is the
    /// window without its center and `x` a fixed reference drawn once per
    /// run. With `l = 0` the weights are constant.
    PatchExponential { sigma_r: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    /// Strictly increasing sample sizes.
    pub n_values: Vec<usize>,
    /// Dependence range.
    pub l: usize,
    pub trials: usize,
    pub sigma: f64,
    /// True mean.
    pub u: f64,
    pub weight_model: WeightModel,
    pub seed: u64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values[0] == 0 {
            return Err(invalid("n values must be non-empty and positive"));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n values must be strictly increasing"));
        }
        if self.trials < 100 {
            return Err(invalid(format!(
                "need at least 100 trials, got {}",
                self.trials
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.u.is_finite() {
            return Err(invalid("sigma must be finite and >= 0, u finite"));
        }
        if let WeightModel::PatchExponential { sigma_r } = self.weight_model {
            if !(sigma_r > 0.0) {
                return Err(invalid(format!("sigma_r must be positive, got {sigma_r}")));
            }
        }
        Ok(())
    }

    fn reference(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX));
        (0..self.l)
            .map(|_| self.u + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Signed errors of one trial at every `n`; `None` where all weights
    /// vanished.
    fn trial(&self, reference: &[f64], trial: usize) -> Vec<Option<f64>> {
        let n_max = *self.n_values.last().unwrap();
        let l = self.l;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, trial as u64));
        let z: Vec<f64> = (0..n_max + l)
            .map(|_| self.u + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let c = l / 2;
        let scale = match self.weight_model {
            WeightModel::PatchExponential { sigma_r } if l > 0 => {
                Some(2.0 * sigma_r * sigma_r * l as f64)
            }
            _ => None,
        };
        let mut out = Vec::with_capacity(self.n_values.len());
        let (mut num, mut den) = (0.0, 0.0);
        let mut next = self.n_values.iter().peekable();
        for k in 0..n_max {
            let window = &z[k..k + l + 1];
            let a = match scale {
                None => 1.0,
                Some(s) => {
                    let d2: f64 = window
                        .iter()
                        .enumerate()
                        .filter(|&(t, _)| t != c)
                        .zip(reference)
                        .map(|((_, w), x)| (w - x) * (w - x))
                        .sum();
                    (-d2 / s).exp()
                }
            };
            num += a * window[c];
            den += a;
            if next.peek() == Some(&&(k + 1)) {
                next.next();
                out.push((den > 0.0).then(|| num / den - self.u));
            }
        }
        out
    }

    /// Signed errors indexed `[n][trial]`, keeping only trials that are
    /// non-degenerate at every `n`, plus the count of discarded trials.
    fn errors(&self) -> (Vec<Vec<f64>>, usize) {
        let reference = self.reference();
        let trials: Vec<Vec<Option<f64>>> = (0..self.trials)
            .into_par_iter()
            .map(|t| self.trial(&reference, t))
            .collect();
        let mut by_n = vec![Vec::with_capacity(self.trials); self.n_values.len()];
        let mut degenerate = 0;
        for t in trials {
            if t.iter().any(Option::is_none) {
                degenerate += 1;
                continue;
            }
            for (slot, e) in by_n.iter_mut().zip(t) {
                slot.push(e.unwrap());
            }
        }
        (by_n, degenerate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Sample sizes (or replication counts).
    pub n_values: Vec<usize>,
    /// Mean absolute error at each size.
    pub mean_errors: Vec<f64>,
    /// Standard error of each mean.
    pub std_errors: Vec<f64>,
    /// Least-squares slope of `ln(mean error)` against `ln(n)`; `None` when
    /// some mean error is zero.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    /// Kolmogorov-Smirnov distance of the standardized signed errors at the
    /// largest size from the standard normal; `None` when degenerate.
    pub ks: Option<f64>,
    /// Trials discarded because every weight vanished.
    pub degenerate: usize,
}

impl RateReport {
    fn from_errors(n_values: Vec<usize>, errors: &[Vec<f64>], degenerate: usize) -> Self {
        let (mean_errors, std_errors): (Vec<f64>, Vec<f64>) =
            errors.iter().map(|e| abs_mean_se(e)).unzip();
        let (slope, slope_se) = match fit_loglog(&n_values, &mean_errors) {
            Some((s, se)) => (Some(s), se),
            None => (None, None),
        };
        let ks = errors.last().and_then(|e| ks_normal(e));
        Self {
            n_values,
            mean_errors,
            std_errors,
            slope,
            slope_se,
            ks,
            degenerate,
        }
    }

    /// `n,mean_error,std_error` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mean_error", "std_error"])?;
        for ((n, e), s) in self
            .n_values
            .iter()
            .zip(&self.mean_errors)
            .zip(&self.std_errors)
        {
            w.write_record(&[n.to_string(), e.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        format!(
            "slope={} slope_se={} ks={} degenerate={}",
            opt(self.slope),
            opt(self.slope_se),
            opt(self.ks),
            self.degenerate
        )
    }
}

fn abs_mean_se(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    if errors.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    if errors.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = errors.iter().map(|e| (e.abs() - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` on `ln x` and its standard error (the
/// latter needs three points).
fn fit_loglog(x: &[usize], y: &[f64]) -> Option<(f64, Option<f64>)> {
    if x.len() < 2 || y.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|&v| (v as f64).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let se = (lx.len() > 2).then(|| {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
            .sum();
        (rss / (k - 2.0) / sxx).sqrt()
    });
    Some((slope, se))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// KS distance between `values / rms(values)` and the standard normal.
fn ks_normal(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    if !(rms > 0.0) {
        return None;
    }
    let mut z: Vec<f64> = values.iter().map(|v| v / rms).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let d = z.iter().enumerate().fold(0.0f64, |acc, (i, &v)| {
        let f = normal_cdf(v);
        acc.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    });
    Some(d)
}

/// Error-decay experiment over `spec.n_values`.
pub fn simulate_rate(spec: &SequenceSpec) -> Result<RateReport> {
    spec.validate()?;
    let (errors, degenerate) = spec.errors();
    Ok(RateReport::from_errors(
        spec.n_values.clone(),
        &errors,
        degenerate,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub n: usize,
    /// KS distance of the standardized `sqrt(n) * error` from the standard
    /// normal; `None` when every error is zero.
    pub ks: Option<f64>,
    /// Empirical variance of `sqrt(n) * error` at `n`.
    pub variance: f64,
    /// The same at `n / 2`.
    pub variance_half: f64,
    /// `variance / variance_half`; `None` when degenerate.
    pub variance_ratio: Option<f64>,
    pub degenerate: usize,
}

/// Normality check at the largest `n` of `spec`, with the variance of the
/// scaled error compared against `n / 2`.
pub fn clt_check(spec: &SequenceSpec) -> Result<CltReport> {
    spec.validate()?;
    let n = *spec.n_values.last().unwrap();
    if n < 2 {
        return Err(invalid("CLT check needs n >= 2"));
    }
    let half = n / 2;
    let run = SequenceSpec {
        n_values: vec![half, n],
        ..spec.clone()
    };
    let (errors, degenerate) = run.errors();
    let scaled_var = |e: &[f64], m: usize| {
        e.iter().map(|v| v * v).sum::<f64>() / e.len().max(1) as f64 * m as f64
    };
    let variance = scaled_var(&errors[1], n);
    let variance_half = scaled_var(&errors[0], half);
    Ok(CltReport {
        n,
        ks: ks_normal(&errors[1]),
        variance,
        variance_half,
        variance_ratio: (variance_half > 0.0).then(|| variance / variance_half),
        degenerate,
    })
}

/// Denoising error against the number of exact repetitions of a texture.
///
/// For each `r` in `replication` the image is `r` copies of `tile` side by
/// side. Pixel `i` of the first copy is estimated by the center-excluded
/// weighted mean over `I_i`, the pixels whose clean patch equals that of `i`
/// (so `|I_i|` grows with `r`). Weights use `params`' kernel and `sigma_r`;
/// its search window is not used. The report's sizes are the replication
/// counts and its errors are mean `|v0(i) - u(i)|` over the first copy,
/// averaged over `trials` noise realizations.
pub fn nlm_rate_experiment(
    tile: &GrayImage,
    replication: &[usize],
    sigma: f64,
    params: &NlmParams,
    seed: u64,
    trials: usize,
) -> Result<RateReport> {
    params.validate()?;
    if replication.is_empty() || replication[0] == 0 || replication.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(invalid(
            "replication counts must be positive and strictly increasing",
        ));
    }
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let (tw, th) = (tile.width(), tile.height());
    let pr = params.kernel.radius();
    let mut weights = params.kernel.effective_weights();
    let c = weights.len() / 2;
    weights[c] = 0.0;
    let h2 = 2.0 * params.sigma_r * params.sigma_r;

    let mut errors = Vec::with_capacity(replication.len());
    for &r in replication {
        let clean = GrayImage::from_fn(tw * r, th, |x, y| tile.get(x % tw, y))?;
        let (w, h) = (clean.width(), clean.height());
        let cp = Padded::new(clean.pixels(), w, h, pr);
        let offsets = cp.window_offsets(pr);
        let patch_of = |pad: &Padded, x: usize, y: usize| -> Vec<f64> {
            let ci = pad.index(x, y) as isize;
            offsets
                .iter()
                .map(|&o| pad.data[(ci + o) as usize])
                .collect()
        };

        let mut groups: HashMap<Vec<u64>, Vec<(usize, usize)>> = HashMap::new();
        for y in 0..h {
            for x in 0..w {
                let key = patch_of(&cp, x, y).iter().map(|v| v.to_bits()).collect();
                groups.entry(key).or_default().push((x, y));
            }
        }
        let targets: Vec<(usize, usize, &Vec<(usize, usize)>)> = (0..th)
            .flat_map(|y| (0..tw).map(move |x| (x, y)))
            .map(|(x, y)| {
                let key: Vec<u64> = patch_of(&cp, x, y).iter().map(|v| v.to_bits()).collect();
                (x, y, &groups[&key])
            })
            .collect();

        let per_trial: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let noisy = add_gaussian(&clean, sigma, derive_seed(seed, t as u64))?;
                let np = Padded::new(noisy.pixels(), w, h, pr);
                let mut total = 0.0;
                for &(x, y, members) in &targets {
                    let pi = patch_of(&np, x, y);
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(jx, jy) in members {
                        let pj = patch_of(&np, jx, jy);
                        let mut d = 0.0;
                        let mut a = 0.0;
                        for ((p, q), wk) in pi.iter().zip(&pj).zip(&weights) {
                            d += wk * (p - q) * (p - q);
                            a += wk;
                        }
                        let wt = (-(d / a) / h2).exp();
                        num += wt * noisy.get(jx, jy);
                        den += wt;
                    }
                    total += (num / den - clean.get(x, y)).abs();
                }
                Ok(total / targets.len() as f64)
            })
            .collect::<Result<_>>()?;
        errors.push(per_trial);
    }
    // Report the spread across trials of the per-trial mean errors.
    let mean_errors: Vec<f64> = errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let std_errors: Vec<f64> = errors
        .iter()
        .zip(&mean_errors)
        .map(|(e, m)| {
            if e.len() < 2 {
                return 0.0;
            }
            let var = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
            (var / e.len() as f64).sqrt()
        })
        .collect();
    let (slope, slope_se) = match fit_loglog(replication, &mean_errors) {
        Some((s, se)) => (Some(s), se),
        None => (None, None),
    };
    Ok(RateReport {
        n_values: replication.to_vec(),
        mean_errors,
        std_errors,
        slope,
        slope_se,
        ks: None,
        degenerate: 0,
    })
}

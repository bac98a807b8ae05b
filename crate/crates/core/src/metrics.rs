//! PSNR and the benchmark harness.
//!
//! A benchmark manifest lists one case per line as whitespace-separated
//! `key=value` pairs, for example
//!
//! ```text
//! image=lena.pgm method=pwmf kind=mixed sigma=10 p=0.2 seed=0
//! image=peppers.pgm method=trif kind=impulse p=0.3 sigma_r=40
//! ```
//!
//! Noise keys are those of [`NoiseSpec`]. `crop` removes a border before
//! PSNR is measured; it defaults to 1 for images whose file name contains
//! `peppers` and 0 otherwise. Remaining keys override the automatic filter
//! parameters: `d`, `D`, `sigma_r` for nlm; `D`, `sigma_i`, `sigma_j`,
//! `sigma_s`, `sigma_r`, `iterations` for trif; `d`, `D`, `sigma_i`,
//! `sigma_m`, `sigma_s`, `sigma_sm`, `road` (as `radius,m`) for pwmf. Blank
//! lines and lines starting with `#` are skipped.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::GrayImage;
use crate::nlm::{nlm_denoise, NlmParams};
use crate::noise::NoiseSpec;
use crate::pgm::read_pgm;
use crate::pwmf::{auto_params, pwmf_denoise, search_size, PwmfParams};
use crate::road::RoadConfig;
use crate::trif::{trif_iterate, TrifParams};

/// Header of the benchmark CSV.
pub const BENCH_HEADER: [&str; 7] = [
    "image", "method", "sigma", "p", "seed", "psnr_db", "seconds",
];

/// `10 log10(255^2 |I| / SSE)`; `f64::INFINITY` for identical images.
pub fn psnr(restored: &GrayImage, original: &GrayImage) -> Result<f64> {
    restored.check_same_size(original)?;
    let sse: f64 = restored
        .pixels()
        .iter()
        .zip(original.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 * restored.len() as f64 / sse).log10())
}

/// PSNR over the interior left after removing `border` pixels on each side.
pub fn psnr_cropped(restored: &GrayImage, original: &GrayImage, border: usize) -> Result<f64> {
    restored.check_same_size(original)?;
    if border == 0 {
        return psnr(restored, original);
    }
    psnr(
        &restored.crop_border(border)?,
        &original.crop_border(border)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nlm,
    Trif,
    Pwmf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nlm => "nlm",
            Method::Trif => "trif",
            Method::Pwmf => "pwmf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlm" => Ok(Method::Nlm),
            "trif" => Ok(Method::Trif),
            "pwmf" => Ok(Method::Pwmf),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// A fully specified filter.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodParams {
    Nlm(NlmParams),
    Trif(TrifParams),
    Pwmf(PwmfParams),
}

impl MethodParams {
    /// Default parameters of `method` for the given noise.
    ///
    /// NL-means uses 7x7 patches, the PWMF search window rule and
    /// `sigma_r = max(sigma, 5)`.
    pub fn auto(method: Method, noise: &NoiseSpec) -> Result<Self> {
        let (sigma, p) = (noise.effective_sigma(), noise.effective_p());
        Ok(match method {
            Method::Nlm => Self::Nlm(NlmParams::new(7, search_size(sigma), sigma.max(5.0))?),
            Method::Trif => Self::Trif(TrifParams::protocol(sigma, p)?),
            Method::Pwmf => Self::Pwmf(auto_params(sigma, p, noise.kind)?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Self::Nlm(_) => Method::Nlm,
            Self::Trif(_) => Method::Trif,
            Self::Pwmf(_) => Method::Pwmf,
        }
    }

    pub fn denoise(&self, img: &GrayImage) -> Result<GrayImage> {
        match self {
            Self::Nlm(p) => nlm_denoise(img, p),
            Self::Trif(p) => trif_iterate(img, p),
            Self::Pwmf(p) => pwmf_denoise(img, p),
        }
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad number for {key}: '{value}'")))
        };
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| invalid(format!("bad integer for {key}: '{value}'")))
        };
        match (&mut *self, key) {
            (Self::Nlm(p), "d") => p.kernel = crate::image::PatchKernel::uniform(int()?)?,
            (Self::Nlm(p), "D") => p.search = int()?,
            (Self::Nlm(p), "sigma_r") => p.sigma_r = num()?,
            (Self::Trif(p), "D") => p.search = int()?,
            (Self::Trif(p), "sigma_i") => p.sigma_i = num()?,
            (Self::Trif(p), "sigma_j") => p.sigma_j = num()?,
            (Self::Trif(p), "sigma_s") => {
                p.sigma_s = num()?;
                p.sigma_s_schedule.clear();
            }
            (Self::Trif(p), "sigma_r") => p.sigma_r = num()?,
            (Self::Trif(p), "iterations") => {
                p.iterations = int()?;
                p.sigma_s_schedule.clear();
            }
            (Self::Pwmf(p), "d") => p.patch = int()?,
            (Self::Pwmf(p), "D") => p.search = int()?,
            (Self::Pwmf(p), "sigma_i") => p.sigma_i = num()?,
            (Self::Pwmf(p), "sigma_m") => p.sigma_m = num()?,
            (Self::Pwmf(p), "sigma_s") => p.sigma_s = num()?,
            (Self::Pwmf(p), "sigma_sm") => p.sigma_sm = num()?,
            (Self::Pwmf(p), "road") => p.road = parse_road(value)?,
            (this, _) => {
                return Err(invalid(format!(
                    "unknown {} parameter '{key}'",
                    this.method()
                )));
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Nlm(p) => p.validate(),
            Self::Trif(p) => p.validate(),
            Self::Pwmf(p) => p.validate(),
        }
    }
}

/// Parses `radius,m`.
pub fn parse_road(s: &str) -> Result<RoadConfig> {
    let (r, m) = s
        .split_once(',')
        .ok_or_else(|| invalid(format!("road must be 'radius,m', got '{s}'")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("bad road setting '{s}'")))
    };
    RoadConfig::new(parse(r)?, parse(m)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub image: PathBuf,
    /// Noise to synthesize; its seed is the case seed.
    pub noise: NoiseSpec,
    pub params: MethodParams,
    /// Border removed before measuring PSNR.
    pub crop: usize,
}

impl BenchCase {
    /// Case with automatic parameters and the default crop for `image`.
    pub fn auto(image: impl Into<PathBuf>, noise: NoiseSpec, method: Method) -> Result<Self> {
        let image = image.into();
        Ok(Self {
            crop: default_crop(&image),
            params: MethodParams::auto(method, &noise)?,
            image,
            noise,
        })
    }
}

/// One pixel for Peppers, none otherwise.
pub fn default_crop(image: &Path) -> usize {
    let name = image
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    usize::from(name.contains("peppers"))
}

/// Parses a manifest; relative image paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<BenchCase>> {
    let mut cases = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let case = parse_case(line, base)
            .map_err(|e| invalid(format!("manifest line {}: {e}", lineno + 1)))?;
        cases.push(case);
    }
    Ok(cases)
}

fn parse_case(line: &str, base: &Path) -> Result<BenchCase> {
    let mut noise_keys = Vec::new();
    let mut overrides = Vec::new();
    let (mut image, mut method, mut crop) = (None, None, None);
    for pair in line.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected key=value, got '{pair}'")))?;
        match key {
            "image" => image = Some(base.join(value)),
            "method" => method = Some(value.parse::<Method>()?),
            "crop" => {
                crop = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| invalid(format!("bad crop '{value}'")))?,
                )
            }
            "kind" | "sigma" | "p" | "lo" | "hi" | "seed" => noise_keys.push(pair),
            _ => overrides.push((key, value)),
        }
    }
    let image = image.ok_or_else(|| invalid("missing image="))?;
    let method = method.ok_or_else(|| invalid("missing method="))?;
    let noise: NoiseSpec = noise_keys.join(" ").parse()?;
    let mut case = BenchCase::auto(image, noise, method)?;
    for (key, value) in overrides {
        case.params.set(key, value)?;
    }
    if let Some(c) = crop {
        case.crop = c;
    }
    Ok(case)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub image: String,
    pub method: Method,
    pub sigma: f64,
    pub p: f64,
    pub seed: u64,
    /// PSNR and wall-clock seconds, or the reason the case failed.
    pub outcome: std::result::Result<(f64, f64), String>,
}

impl BenchRow {
    pub fn psnr(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.0)
    }
}

/// Runs one case: noise, denoise, PSNR on the cropped domain.
pub fn run_case(case: &BenchCase) -> Result<(f64, f64)> {
    let original = read_pgm(&case.image)?;
    if 2 * case.crop >= original.width().min(original.height()) {
        return Err(invalid(format!("crop {} too large for image", case.crop)));
    }
    let noisy = case.noise.apply(&original)?;
    let start = Instant::now();
    let restored = case.params.denoise(&noisy)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok((psnr_cropped(&restored, &original, case.crop)?, seconds))
}

/// Runs all cases in parallel; rows keep the input order and a failing case
/// yields an error row instead of stopping the run.
pub fn bench_run(cases: &[BenchCase]) -> Vec<BenchRow> {
    cases
        .par_iter()
        .map(|case| BenchRow {
            image: case.image.display().to_string(),
            method: case.params.method(),
            sigma: case.noise.effective_sigma(),
            p: case.noise.effective_p(),
            seed: case.noise.seed,
            outcome: run_case(case).map_err(|e| e.to_string()),
        })
        .collect()
}

/// Writes rows under [`BENCH_HEADER`]. Failed cases get `error` as PSNR and
/// an empty time.
pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for row in rows {
        let (psnr, secs) = match &row.outcome {
            Ok((db, s)) => (format_db(*db), format!("{s:.3}")),
            Err(_) => ("error".to_string(), String::new()),
        };
        w.write_record(&[
            row.image.clone(),
            row.method.to_string(),
            row.sigma.to_string(),
            row.p.to_string(),
            row.seed.to_string(),
            psnr,
            secs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// PSNR as text: `inf` for identical images, else four decimals.
pub fn format_db(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

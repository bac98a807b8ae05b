//! Grayscale image restoration with patch-based weighted means.
//!
//! The crate bundles everything needed to reproduce and study the
//! patch-based weighted means filter (PWMF) for images corrupted by random
//! impulse noise, additive Gaussian noise, or a mixture of both:
//!
//! - [`image`]: the [`GrayImage`] carrier, mirror padding, patches and the
//!   weighted patch distance.
//! - [`noise`]: seed-reproducible Gaussian, impulse and mixed noise.
//! - [`road`]: the ROAD impulse statistic and the impulse factors built on it.
//! - [`nlm`], [`trif`], [`pwmf`]: NL-means, the trilateral filter and PWMF.
//! - [`similarity`]: the chi-square similarity threshold and the degree of
//!   similarity of an image.
//! - [`lab`]: Monte-Carlo experiments on the convergence rate of random
//!   weighted means.
//! - [`metrics`]: PSNR and the benchmark harness.
//!
//! Every kernel is a pure function of its inputs. Per-pixel work is spread
//! over the ambient rayon pool, and results do not depend on the number of
//! threads.

pub mod error;
pub mod image;
pub mod lab;
pub mod metrics;
pub mod nlm;
pub mod noise;
pub mod pgm;
pub mod pwmf;
pub mod road;
pub mod similarity;
pub mod trif;

mod util;

pub use crate::error::{Error, Result};
pub use crate::image::{mirror_pad, patch, patch_distance2, GrayImage, PatchKernel};
pub use crate::lab::{
    clt_check, nlm_rate_experiment, simulate_rate, CltReport, RateReport, SequenceSpec, WeightModel,
};
pub use crate::metrics::{
    bench_run, psnr, psnr_cropped, BenchCase, BenchRow, Method, MethodParams,
};
pub use crate::nlm::{nlm_denoise, NlmParams, SelfWeight};
pub use crate::noise::{add_gaussian, add_impulse, add_mixed, NoiseKind, NoiseSpec};
pub use crate::pgm::{read_pgm, write_pgm};
pub use crate::pwmf::{auto_params, pwmf_denoise, pwmf_norm2, PwmfParams};
pub use crate::road::{impulse_factor, joint_impulse_factor, road, RoadConfig, RoadMap};
pub use crate::similarity::{ds_map, t_alpha, DsReport};
pub use crate::trif::{trif_denoise, trif_iterate, TrifParams};

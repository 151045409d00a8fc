//! Patch-based grayscale denoising.
//!
//! The noisy image is cut into overlapping mean-subtracted patches, the patch
//! matrix is coded with either boosted coding or the alternating baseline,
//! nonzero coefficients are refit without regularization, and the patches
//! are averaged back into an image.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, solve_spd, Matrix};
use crate::oracles::OracleKind;
use crate::regularizer::RegParams;
use crate::solvers::{alternating_optimization, boosted_coding, CodingResult, SolverOptions};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_PATCH_SIZE: usize = 8;
pub const DEFAULT_STRIDE: usize = 4;
/// Coefficients at or below this magnitude are outside the refit support.
pub const DEFAULT_REFIT_TAU: f64 = 1e-8;
const REFIT_JITTER: f64 = 1e-10;

/// Grayscale image, row-major, nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::dims(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// `(row, col)` top-left corners in row-major order.
    pub origins: Vec<(usize, usize)>,
    pub means: Vec<f64>,
    /// `(width, height)`.
    pub image_dims: (usize, usize),
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// `0, s, 2s, …` plus a final origin flush with the edge.
fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if *out.last().unwrap() + patch < len {
        out.push(len - patch);
    }
    out
}

/// Cuts `img` into overlapping `patch_size × patch_size` patches. Each patch
/// becomes a mean-subtracted, row-major column of the returned matrix.
pub fn extract_patches(
    img: &Image,
    patch_size: usize,
    stride: usize,
) -> Result<(Matrix, PatchGrid)> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if patch_size > img.width.min(img.height) {
        return Err(Error::invalid(format!(
            "patch size {patch_size} exceeds the {}x{} image",
            img.width, img.height
        )));
    }
    let rows = axis_origins(img.height, patch_size, stride);
    let cols = axis_origins(img.width, patch_size, stride);
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();

    let patches: Vec<(Vec<f64>, f64)> = origins
        .par_iter()
        .map(|&(r0, c0)| {
            let mut v = Vec::with_capacity(patch_size * patch_size);
            for r in r0..r0 + patch_size {
                v.extend_from_slice(
                    &img.pixels[r * img.width + c0..r * img.width + c0 + patch_size],
                );
            }
            // Shifted by the first pixel so constant patches give an exact mean.
            let mean = v[0] + v.iter().map(|p| p - v[0]).sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|p| *p -= mean);
            (v, mean)
        })
        .collect();
    let (columns, means): (Vec<Vec<f64>>, Vec<f64>) = patches.into_iter().unzip();
    let x = Matrix::from_columns(patch_size * patch_size, &columns)?;
    let grid = PatchGrid {
        patch_size,
        stride,
        origins,
        means,
        image_dims: (img.width, img.height),
    };
    Ok((x, grid))
}

/// Replaces each column of `W` by the unregularized least-squares fit of the
/// matching column of `X` on the basis columns where `|W| > tau`. A column
/// whose refit would fit worse keeps its original coefficients.
pub fn refit_support(b: &Matrix, w: &Matrix, x: &Matrix, tau: f64) -> Result<Matrix> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("refit threshold must be positive"));
    }
    if b.rows() != x.rows() || b.cols() != w.rows() || w.cols() != x.cols() {
        return Err(Error::dims(format!(
            "B {:?}, W {:?} and X {:?} do not conform",
            b.shape(),
            w.shape(),
            x.shape()
        )));
    }
    let k = b.cols();
    let columns: Vec<Vec<f64>> = (0..x.cols())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let wj = w.column(j);
            let support: Vec<usize> = (0..k).filter(|&i| wj[i].abs() > tau).collect();
            let xj = x.column(j);
            let mut refit = vec![0.0; k];
            if !support.is_empty() {
                let bs = b.select_columns(&support);
                let coef = solve_spd(
                    &bs.t_matmul(&bs)?,
                    &Matrix::column_vector(&bs.t_mul_vec(&xj))?,
                    REFIT_JITTER,
                )?;
                for (s, &i) in support.iter().enumerate() {
                    refit[i] = coef[(s, 0)];
                }
            }
            let residual = |c: &[f64]| {
                let r: Vec<f64> = b.mul_vec(c).iter().zip(&xj).map(|(p, q)| p - q).collect();
                norm2(&r)
            };
            if residual(&refit) <= residual(&wj) {
                Ok(refit)
            } else {
                Ok(wj)
            }
        })
        .collect::<Result<_>>()?;
    Matrix::from_columns(k, &columns)
}

/// Places `BW` plus the patch means back on the image and averages overlaps.
pub fn reconstruct(b: &Matrix, w: &Matrix, grid: &PatchGrid) -> Result<Image> {
    let p = grid.patch_size;
    if b.rows() != p * p
        || b.cols() != w.rows()
        || w.cols() != grid.len()
        || grid.means.len() != grid.len()
    {
        return Err(Error::dims(format!(
            "B {:?} and W {:?} do not match a grid of {} patches of size {p}",
            b.shape(),
            w.shape(),
            grid.len()
        )));
    }
    let coded = b.matmul(w)?;
    let (width, height) = grid.image_dims;
    let mut sums = vec![0.0; width * height];
    let mut counts = vec![0u32; width * height];
    for (j, &(r0, c0)) in grid.origins.iter().enumerate() {
        let mean = grid.means[j];
        for dr in 0..p {
            for dc in 0..p {
                let idx = (r0 + dr) * width + c0 + dc;
                sums[idx] += coded[(dr * p + dc, j)] + mean;
                counts[idx] += 1;
            }
        }
    }
    let pixels = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Image::new(width, height, pixels)
}

/// The `W = 0` denoiser: overlap-average of the per-patch means.
pub fn patch_average(grid: &PatchGrid) -> Result<Image> {
    let p2 = grid.patch_size * grid.patch_size;
    reconstruct(&Matrix::zeros(p2, 0), &Matrix::zeros(0, grid.len()), grid)
}

/// `20·log₁₀(1/RMSE)` for peak value 1, capped at [`PSNR_CAP`].
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    if !reference.same_dims(test) {
        return Err(Error::dims(format!(
            "cannot compare {}x{} with {}x{}",
            reference.width, reference.height, test.width, test.height
        )));
    }
    let mse = reference
        .pixels
        .iter()
        .zip(&test.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Adds unclamped i.i.d. Gaussian noise of standard deviation `sigma`.
pub fn add_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels
        .iter()
        .map(|p| p + normal.sample(&mut rng))
        .collect();
    Image::new(img.width, img.height, pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingMethod {
    Boosted,
    Alternating,
}

impl FromStr for CodingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boosted" => Ok(CodingMethod::Boosted),
            "alternating" => Ok(CodingMethod::Alternating),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected boosted or alternating)"
            ))),
        }
    }
}

impl fmt::Display for CodingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodingMethod::Boosted => "boosted",
            CodingMethod::Alternating => "alternating",
        })
    }
}

/// Pipeline settings other than the coding hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSettings {
    pub method: CodingMethod,
    /// Used by the boosted method only.
    pub oracle: OracleKind,
    pub patch_size: usize,
    pub stride: usize,
    pub refit_tau: f64,
}

impl Default for DenoiseSettings {
    fn default() -> Self {
        DenoiseSettings {
            method: CodingMethod::Boosted,
            oracle: OracleKind::Heuristic,
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            refit_tau: DEFAULT_REFIT_TAU,
        }
    }
}

/// Summary of one denoising run. PSNR fields are present only when a clean
/// reference was supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_noisy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_patch_avg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_denoised: Option<f64>,
    pub basis_size: usize,
    pub method: CodingMethod,
    pub oracle: OracleKind,
    pub params: RegParams,
    pub options: SolverOptions,
    pub patch_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub stopped_early: bool,
    /// Seconds spent in the pipeline.
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    pub image: Image,
    pub report: DenoiseReport,
    pub coding: CodingResult,
}

/// Full pipeline: extract, code, refit, reconstruct, and score against
/// `clean` when given.
pub fn denoise_image(
    noisy: &Image,
    clean: Option<&Image>,
    settings: &DenoiseSettings,
    params: &RegParams,
    opts: &SolverOptions,
) -> Result<DenoiseOutput> {
    let start = Instant::now();
    if let Some(c) = clean {
        if !c.same_dims(noisy) {
            return Err(Error::dims(
                "clean reference and noisy image differ in size",
            ));
        }
    }
    let (x, grid) = extract_patches(noisy, settings.patch_size, settings.stride)?;
    let coding = match settings.method {
        CodingMethod::Boosted => boosted_coding(&x, params, settings.oracle, opts)?,
        CodingMethod::Alternating => {
            alternating_optimization(&x, opts.max_basis, params.lambda, opts)?
        }
    };
    let w = refit_support(&coding.basis, &coding.weights, &x, settings.refit_tau)?;
    let image = reconstruct(&coding.basis, &w, &grid)?;

    let (psnr_noisy, psnr_patch_avg, psnr_denoised) = match clean {
        Some(c) => (
            Some(psnr(c, noisy)?),
            Some(psnr(c, &patch_average(&grid)?)?),
            Some(psnr(c, &image)?),
        ),
        None => (None, None, None),
    };
    let report = DenoiseReport {
        psnr_noisy,
        psnr_patch_avg,
        psnr_denoised,
        basis_size: coding.basis_size(),
        method: settings.method,
        oracle: settings.oracle,
        params: *params,
        options: opts.clone(),
        patch_size: settings.patch_size,
        stride: settings.stride,
        seed: opts.seed,
        stopped_early: coding.stopped_early,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(DenoiseOutput {
        image,
        report,
        coding,
    })
}

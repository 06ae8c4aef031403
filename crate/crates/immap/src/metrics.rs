//! Reference reconstructions (zero-filled adjoint, Tikhonov CG-SENSE) and
//! image-quality metrics (NRMSE, PSNR, SSIM) on magnitude images.

use num_complex::Complex64;
use serde::Serialize;

use crate::cg::{cg_solve, CgSettings};
use crate::data::{ComplexImage, MultiCoilKSpace};
use crate::error::{ImmapError, Result};
use crate::ops::{EncodingOp, LinearOp};
use crate::solver::NoiseModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Zero-filled adjoint reconstruction A^H y.
pub fn zero_filled_recon(y: &MultiCoilKSpace, encoding: &EncodingOp) -> Result<ComplexImage> {
    encoding.apply_adjoint_kspace(y)
}

/// (A^H Sigma_y^{-1} A + lambda I) in the image domain.
struct SenseNormalOp<'a> {
    encoding: &'a EncodingOp,
    inv_var: Vec<f64>,
    lambda: f64,
}

impl LinearOp for SenseNormalOp<'_> {
    fn domain_dim(&self) -> usize {
        self.encoding.domain_dim()
    }

    fn range_dim(&self) -> usize {
        self.encoding.domain_dim()
    }

    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let ax = self.encoding.forward(x);
        let weighted: Vec<Complex64> = ax
            .iter()
            .zip(&self.inv_var)
            .map(|(a, &w)| a * w)
            .collect();
        let mut out = self.encoding.adjoint(&weighted);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += self.lambda * xi;
        }
        out
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.forward(y)
    }
}

/// Tikhonov-regularized CG-SENSE: solves
/// (A^H Sigma_y^{-1} A + lambda I) x = A^H Sigma_y^{-1} y.
///
/// Returns the best iterate even when CG does not reach tolerance; the
/// second element reports whether it converged.
pub fn cg_sense(
    y: &MultiCoilKSpace,
    encoding: &EncodingOp,
    noise: &NoiseModel,
    lambda: f64,
) -> Result<(ComplexImage, bool)> {
    let settings = CgSettings {
        tol: 1e-6,
        max_iter: 500,
        jacobi: false,
    };
    cg_sense_with(y, encoding, noise, lambda, &settings)
}

/// [`cg_sense`] with explicit CG settings.
pub fn cg_sense_with(
    y: &MultiCoilKSpace,
    encoding: &EncodingOp,
    noise: &NoiseModel,
    lambda: f64,
    settings: &CgSettings,
) -> Result<(ComplexImage, bool)> {
    if lambda < 0.0 {
        return Err(ImmapError::Domain(format!("cg_sense: lambda must be >= 0, got {lambda}")));
    }
    if noise.variances.len() != y.len() {
        return Err(ImmapError::Dimension(format!(
            "cg_sense: noise length {} vs {} measurements",
            noise.variances.len(),
            y.len()
        )));
    }
    let inv_var: Vec<f64> = noise.variances.iter().map(|&v| 1.0 / v).collect();
    let op = SenseNormalOp {
        encoding,
        inv_var: inv_var.clone(),
        lambda,
    };
    let weighted: Vec<Complex64> = y
        .as_slice()
        .iter()
        .zip(&inv_var)
        .map(|(a, &w)| a * w)
        .collect();
    let rhs = encoding.adjoint(&weighted);
    let (x, report) = cg_solve(&op, &rhs, settings, None, None)?;
    let img = ComplexImage::from_vec(encoding.maps.height, encoding.maps.width, x)?;
    Ok((img, report.converged))
}

fn check_shapes(r: &ComplexImage, e: &ComplexImage) -> Result<()> {
    if r.height() != e.height() || r.width() != e.width() {
        return Err(ImmapError::Dimension(format!(
            "metrics: {}x{} vs {}x{}",
            r.height(),
            r.width(),
            e.height(),
            e.width()
        )));
    }
    Ok(())
}

fn magnitudes(img: &ComplexImage) -> Vec<f64> {
    img.as_slice().iter().map(|z| z.norm()).collect()
}

/// || |est| - |ref| ||_2 / || |ref| ||_2.
pub fn nrmse(reference: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let r = magnitudes(reference);
    let e = magnitudes(estimate);
    let denom: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(ImmapError::Domain("nrmse: reference is identically zero".into()));
    }
    let num: f64 = r
        .iter()
        .zip(&e)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Complex NRMSE with global unit-modulus phase alignment of the estimate.
pub fn nrmse_complex_aligned(reference: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let denom = reference.norm2();
    if denom == 0.0 {
        return Err(ImmapError::Domain("nrmse: reference is identically zero".into()));
    }
    let inner: Complex64 = estimate
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(e, r)| e.conj() * r)
        .sum();
    let phase = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let num: f64 = estimate
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(e, r)| (e * phase - r).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// 20 log10(max|ref| / rmse) on magnitude images.
pub fn psnr(reference: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let r = magnitudes(reference);
    let e = magnitudes(estimate);
    let peak = r.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(ImmapError::Domain("psnr: reference is identically zero".into()));
    }
    let mse: f64 = r
        .iter()
        .zip(&e)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / r.len() as f64;
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in -half..=half {
        for j in -half..=half {
            let d2 = (i * i + j * j) as f64;
            w.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// SSIM on magnitude images normalized by max|ref|: 11x11 Gaussian window of
/// standard deviation 1.5, K1 = 0.01, K2 = 0.03, mean over the valid map.
pub fn ssim(reference: &ComplexImage, estimate: &ComplexImage) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(ImmapError::Dimension(format!(
            "ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let r_raw = magnitudes(reference);
    let e_raw = magnitudes(estimate);
    let peak = r_raw.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(ImmapError::Domain("ssim: reference is identically zero".into()));
    }
    let a: Vec<f64> = r_raw.iter().map(|x| x / peak).collect();
    let b: Vec<f64> = e_raw.iter().map(|x| x / peak).collect();
    let win = gaussian_window();
    let c1 = (SSIM_K1).powi(2); // L = 1 after normalization
    let c2 = (SSIM_K2).powi(2);
    let half = SSIM_WINDOW / 2;
    let mut acc = 0.0;
    let mut count = 0usize;
    for ci in half..h - half {
        for cj in half..w - half {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            let mut wi = 0usize;
            for di in 0..SSIM_WINDOW {
                let row = (ci + di - half) * w;
                for dj in 0..SSIM_WINDOW {
                    let idx = row + cj + dj - half;
                    let wgt = win[wi];
                    wi += 1;
                    let (x, y) = (a[idx], b[idx]);
                    mu_a += wgt * x;
                    mu_b += wgt * y;
                    aa += wgt * x * x;
                    bb += wgt * y * y;
                    ab += wgt * x * y;
                }
            }
            let va = aa - mu_a * mu_a;
            let vb = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

pub fn metric_report(reference: &ComplexImage, estimate: &ComplexImage) -> Result<MetricReport> {
    Ok(MetricReport {
        nrmse: nrmse(reference, estimate)?,
        psnr: psnr(reference, estimate)?,
        ssim: ssim(reference, estimate)?,
    })
}

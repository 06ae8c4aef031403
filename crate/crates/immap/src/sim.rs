//! Desk-scale acquisition simulation: Shepp-Logan phantom, synthetic coil
//! sensitivities, Cartesian line masks, noisy k-space simulation, wavelet/MAD
//! noise-covariance estimation, and whitening.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::{draw_complex_gaussian, ComplexImage, MultiCoilKSpace, SeededRng};
use crate::denoise::haar_dwt2;
use crate::error::{ImmapError, Result};
use crate::ops::{EncodingOp, SamplingMask, SensitivityMaps};
use crate::solver::NoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskScheme {
    Uniform,
    RandomLines,
}

impl std::fmt::Display for MaskScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskScheme::Uniform => write!(f, "uniform"),
            MaskScheme::RandomLines => write!(f, "random-lines"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub size: usize,
    pub coils: usize,
    pub accel: f64,
    pub acs_lines: usize,
    pub scheme: MaskScheme,
    /// Noise level sigma in image-intensity units (unitary DFT keeps it
    /// consistent between domains).
    pub noise_sigma: f64,
    pub seed: u64,
    pub phase: bool,
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(ImmapError::Config(format!("size must be >= 32: {}", self.size)));
        }
        if self.coils == 0 {
            return Err(ImmapError::Config("coils must be >= 1".into()));
        }
        if self.accel < 1.0 {
            return Err(ImmapError::Config(format!("accel must be >= 1: {}", self.accel)));
        }
        if self.noise_sigma < 0.0 {
            return Err(ImmapError::Config(format!(
                "noise sigma must be >= 0: {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

// (intensity, semi-axis a, semi-axis b, x0, y0, angle degrees)
const SHEPP_LOGAN_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Pixel-center coordinates in (-1, 1): col j -> x, row i -> y (y up).
pub fn phantom_coords(n: usize, i: usize, j: usize) -> (f64, f64) {
    let x = (2.0 * j as f64 + 1.0 - n as f64) / n as f64;
    let y = -(2.0 * i as f64 + 1.0 - n as f64) / n as f64;
    (x, y)
}

/// Analytic phantom intensity at a point: sum of the intensities of all
/// ellipses containing it.
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    for &(a_int, a, b, x0, y0, deg) in &SHEPP_LOGAN_ELLIPSES {
        let phi = deg.to_radians();
        let (dx, dy) = (x - x0, y - y0);
        let xr = phi.cos() * dx + phi.sin() * dy;
        let yr = -phi.sin() * dx + phi.cos() * dy;
        if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
            v += a_int;
        }
    }
    v
}

/// Modified Shepp-Logan phantom, intensities in [0, 1]. With `phase` set,
/// modulated by a smooth low-order polynomial phase.
pub fn shepp_logan(size: usize, phase: bool) -> Result<ComplexImage> {
    if size < 32 {
        return Err(ImmapError::Domain(format!(
            "shepp_logan: size must be >= 32, got {size}"
        )));
    }
    let mut img = ComplexImage::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = phantom_coords(size, i, j);
            let v = shepp_logan_value(x, y);
            let z = if phase {
                let theta = 0.5 * std::f64::consts::PI * (0.3 * x + 0.2 * y + 0.4 * x * y);
                Complex64::from_polar(v, theta)
            } else {
                Complex64::new(v, 0.0)
            };
            img.data[(i, j)] = z;
        }
    }
    Ok(img)
}

/// C smooth complex coil profiles: Gaussian bumps centered on a ring around
/// the FOV with low-order polynomial phase, sum-of-squares normalized.
pub fn synth_sensitivities(
    height: usize,
    width: usize,
    coils: usize,
    seed: u64,
) -> Result<SensitivityMaps> {
    if coils == 0 {
        return Err(ImmapError::Domain("synth_sensitivities: coils must be >= 1".into()));
    }
    let mut rng = SeededRng::new(SeededRng::derive_seed(seed, 0x5e75));
    let ring_r = 0.9;
    let bump_w = 0.5;
    // per-coil phase polynomial coefficients, small and smooth
    let phase_coef: Vec<(f64, f64, f64)> = (0..coils)
        .map(|_| {
            (
                0.4 * rng.standard_normal(),
                0.4 * rng.standard_normal(),
                0.2 * rng.standard_normal(),
            )
        })
        .collect();
    let n = height * width;
    let mut data = Array2::zeros((coils, n));
    for c in 0..coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / coils as f64;
        let (cx, cy) = (ring_r * angle.cos(), ring_r * angle.sin());
        let (pa, pb, pc) = phase_coef[c];
        for i in 0..height {
            for j in 0..width {
                let x = (2.0 * j as f64 + 1.0 - width as f64) / width as f64;
                let y = -(2.0 * i as f64 + 1.0 - height as f64) / height as f64;
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-r2 / (2.0 * bump_w * bump_w)).exp();
                let theta = pa * x + pb * y + pc * x * y;
                data[(c, i * width + j)] = Complex64::from_polar(mag, theta);
            }
        }
    }
    // sum-of-squares normalization per pixel
    for p in 0..n {
        let sos: f64 = (0..coils).map(|c| data[(c, p)].norm_sqr()).sum();
        let scale = 1.0 / sos.sqrt();
        for c in 0..coils {
            data[(c, p)] *= scale;
        }
    }
    SensitivityMaps::new(data, height, width)
}

/// Cartesian line mask: keeps whole k-space rows. Total kept rows =
/// round(height / R) including a fully sampled center ACS block.
pub fn cartesian_mask(
    height: usize,
    width: usize,
    r: f64,
    acs_lines: usize,
    scheme: MaskScheme,
    seed: u64,
) -> Result<SamplingMask> {
    if r < 1.0 {
        return Err(ImmapError::Config(format!("cartesian_mask: R must be >= 1, got {r}")));
    }
    let kept_total = (height as f64 / r).round() as usize;
    if kept_total == 0 {
        return Err(ImmapError::Config(format!(
            "cartesian_mask: budget of {kept_total} lines from {height}/{r}"
        )));
    }
    if acs_lines > kept_total {
        return Err(ImmapError::Config(format!(
            "cartesian_mask: ACS block of {acs_lines} exceeds line budget {kept_total}"
        )));
    }
    let acs_start = height / 2 - acs_lines / 2;
    let acs: Vec<usize> = (acs_start..acs_start + acs_lines).collect();
    let candidates: Vec<usize> = (0..height).filter(|i| !acs.contains(i)).collect();
    let extra = kept_total - acs_lines;
    let mut chosen: Vec<usize> = acs;
    match scheme {
        MaskScheme::Uniform => {
            for k in 0..extra {
                let idx = k * candidates.len() / extra.max(1);
                chosen.push(candidates[idx]);
            }
        }
        MaskScheme::RandomLines => {
            let mut rng = SeededRng::new(SeededRng::derive_seed(seed, 0x3a5c));
            let mut pool = candidates;
            for _ in 0..extra {
                let pick = rng.gen_range_usize(0, pool.len());
                chosen.push(pool.swap_remove(pick));
            }
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    if chosen.len() != kept_total {
        return Err(ImmapError::Config(format!(
            "cartesian_mask: selected {} lines, expected {kept_total}",
            chosen.len()
        )));
    }
    let mut keep = Array2::from_elem((height, width), false);
    for &row in &chosen {
        for j in 0..width {
            keep[(row, j)] = true;
        }
    }
    SamplingMask::new(keep)
}

/// y = A x + complex Gaussian noise of per-sample variance sigma^2.
pub fn simulate_acquisition(
    x: &ComplexImage,
    encoding: &EncodingOp,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<MultiCoilKSpace> {
    if sigma < 0.0 {
        return Err(ImmapError::Domain(format!(
            "simulate_acquisition: sigma must be >= 0, got {sigma}"
        )));
    }
    let mut y = encoding.apply_image(x)?;
    if sigma > 0.0 {
        let noise = draw_complex_gaussian(y.len(), sigma * sigma, rng)?;
        for (v, n) in y.data.iter_mut().zip(noise) {
            *v += n;
        }
    }
    Ok(y)
}

/// Per-coil noise estimate plus degeneracy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    /// Complex noise level per coil: sqrt of E|nu|^2.
    pub per_coil_sigma: Vec<f64>,
    /// Set when any coil produced a (near-)zero estimate.
    pub degenerate: bool,
}

impl NoiseEstimate {
    /// Diagonal Sigma_y replicating each coil's variance over its samples.
    pub fn to_noise_model(&self, n_samples: usize) -> Result<NoiseModel> {
        let mut v = Vec::with_capacity(self.per_coil_sigma.len() * n_samples);
        for &s in &self.per_coil_sigma {
            v.extend(std::iter::repeat_n(s * s, n_samples));
        }
        NoiseModel::new(v)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// MAD-based noise level of one real coefficient set (Gaussian consistency
/// factor 0.6745).
fn mad_sigma(coeffs: &mut [f64]) -> f64 {
    median(coeffs) / 0.6745
}

/// Noise level of one coil image from the MAD of its finest-scale diagonal
/// Haar detail coefficients, real and imaginary parts estimated separately
/// and pooled to the complex noise level.
pub fn estimate_coil_noise_sigma(img: &ComplexImage) -> Result<f64> {
    if !img.height().is_multiple_of(2) || !img.width().is_multiple_of(2) {
        return Err(ImmapError::Dimension(format!(
            "estimate_coil_noise_sigma: {}x{} must be even",
            img.height(),
            img.width()
        )));
    }
    let coef = haar_dwt2(img, 1)?;
    let (h2, w2) = (img.height() / 2, img.width() / 2);
    // diagonal (HH) band: bottom-right quadrant
    let mut re: Vec<f64> = Vec::with_capacity(h2 * w2);
    let mut im: Vec<f64> = Vec::with_capacity(h2 * w2);
    for i in h2..img.height() {
        for j in w2..img.width() {
            re.push(coef.data[(i, j)].re.abs());
            im.push(coef.data[(i, j)].im.abs());
        }
    }
    let s_re = mad_sigma(&mut re);
    let s_im = mad_sigma(&mut im);
    Ok((s_re * s_re + s_im * s_im).sqrt())
}

/// Wavelet/MAD noise-covariance estimation over multicoil images.
pub fn estimate_noise_cov(coil_images: &[ComplexImage]) -> Result<NoiseEstimate> {
    if coil_images.is_empty() {
        return Err(ImmapError::Dimension("estimate_noise_cov: no coil images".into()));
    }
    let per_coil_sigma: Vec<f64> = coil_images
        .iter()
        .map(estimate_coil_noise_sigma)
        .collect::<Result<_>>()?;
    let degenerate = per_coil_sigma.iter().any(|&s| s <= 0.0);
    Ok(NoiseEstimate {
        per_coil_sigma,
        degenerate,
    })
}

/// y' = Sigma_y^{-1/2} y per sample; the returned noise model has unit
/// diagonal. Solving with (y', I, Sigma_y^{-1/2} A) is algebraically
/// equivalent to solving with (y, Sigma_y, A).
pub fn whiten(y: &MultiCoilKSpace, noise: &NoiseModel) -> Result<(MultiCoilKSpace, NoiseModel)> {
    if noise.variances.len() != y.len() {
        return Err(ImmapError::Dimension(format!(
            "whiten: noise length {} vs {} measurements",
            noise.variances.len(),
            y.len()
        )));
    }
    if noise.variances.iter().any(|&v| v <= 0.0) {
        return Err(ImmapError::Model("whiten: zero variance".into()));
    }
    let mut out = y.clone();
    for (v, &var) in out.data.iter_mut().zip(&noise.variances) {
        *v /= var.sqrt();
    }
    let unit = NoiseModel::uniform(1.0, y.len())?;
    Ok((out, unit))
}

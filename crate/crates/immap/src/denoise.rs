//! The implicit prior: denoisers f(z; sigma) with exact vector-Jacobian
//! products J^H v, plus a finite-difference VJP oracle.
//!
//! All Jacobians are taken in real coordinates (C^N ~ R^{2N}); "J^H v" means
//! the transposed real Jacobian applied to v. The wavelet and GMM denoisers
//! are not holomorphic, so the real-coordinate convention is the one under
//! which the pullback is well-defined.

use ndarray::Array2;
use num_complex::Complex64;

use crate::data::ComplexImage;
use crate::error::{ImmapError, Result};

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// f(z; sigma). Every implemented prior satisfies denoise(z, 0) = z.
    fn denoise(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage>;

    /// J^H v at the point z, noise level sigma. Linear in v.
    fn vjp(&self, z: &ComplexImage, sigma: f64, v: &ComplexImage) -> Result<ComplexImage>;
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(ImmapError::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

fn check_same_shape(a: &ComplexImage, b: &ComplexImage, what: &str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(ImmapError::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Isotropic Gaussian prior: the analytic test prior for which Tweedie's
// identity is exact.
// ---------------------------------------------------------------------------

/// Prior x ~ CN(mean, c I). The MMSE denoiser is the linear shrinkage
/// f(z) = mean + (c/(c+sigma^2))(z - mean) and its Jacobian is scalar.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    pub mean: ComplexImage,
    pub variance: f64,
}

impl GaussianDenoiser {
    pub fn new(mean: ComplexImage, variance: f64) -> Result<Self> {
        if variance <= 0.0 {
            return Err(ImmapError::Domain(format!(
                "gaussian prior variance must be > 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn zero_mean(height: usize, width: usize, variance: f64) -> Result<Self> {
        Self::new(ComplexImage::zeros(height, width), variance)
    }

    pub fn shrinkage(&self, sigma: f64) -> f64 {
        self.variance / (self.variance + sigma * sigma)
    }

    /// Analytic score of p_sigma = CN(mean, (c+sigma^2) I), for oracle use.
    pub fn score(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        check_same_shape(z, &self.mean, "gaussian score")?;
        let denom = self.variance + sigma * sigma;
        let mut out = ComplexImage::zeros(z.height(), z.width());
        for ((o, zi), mi) in out
            .as_slice_mut()
            .iter_mut()
            .zip(z.as_slice())
            .zip(self.mean.as_slice())
        {
            *o = -(zi - mi) / denom;
        }
        Ok(out)
    }
}

impl Denoiser for GaussianDenoiser {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn denoise(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        check_same_shape(z, &self.mean, "gaussian denoise")?;
        let s = self.shrinkage(sigma);
        let mut out = ComplexImage::zeros(z.height(), z.width());
        for ((o, zi), mi) in out
            .as_slice_mut()
            .iter_mut()
            .zip(z.as_slice())
            .zip(self.mean.as_slice())
        {
            *o = mi + s * (zi - mi);
        }
        Ok(out)
    }

    fn vjp(&self, z: &ComplexImage, sigma: f64, v: &ComplexImage) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        check_same_shape(z, v, "gaussian vjp")?;
        let s = self.shrinkage(sigma);
        let mut out = v.clone();
        for o in out.as_slice_mut() {
            *o *= s;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Orthonormal multi-level 2D Haar transform.
// ---------------------------------------------------------------------------

fn check_divisible(height: usize, width: usize, levels: usize) -> Result<()> {
    let d = 1usize << levels;
    if levels == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
        return Err(ImmapError::Dimension(format!(
            "haar_dwt2: {height}x{width} not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn haar_step_rows(a: &mut Array2<Complex64>, h: usize, w: usize) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); w];
    for i in 0..h {
        for k in 0..w / 2 {
            let x = a[(i, 2 * k)];
            let y = a[(i, 2 * k + 1)];
            buf[k] = (x + y) * inv_sqrt2;
            buf[w / 2 + k] = (x - y) * inv_sqrt2;
        }
        for (j, &v) in buf.iter().enumerate() {
            a[(i, j)] = v;
        }
    }
}

fn haar_step_cols(a: &mut Array2<Complex64>, h: usize, w: usize) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for k in 0..h / 2 {
            let x = a[(2 * k, j)];
            let y = a[(2 * k + 1, j)];
            buf[k] = (x + y) * inv_sqrt2;
            buf[h / 2 + k] = (x - y) * inv_sqrt2;
        }
        for (i, &v) in buf.iter().enumerate() {
            a[(i, j)] = v;
        }
    }
}

fn haar_unstep_rows(a: &mut Array2<Complex64>, h: usize, w: usize) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); w];
    for i in 0..h {
        for k in 0..w / 2 {
            let s = a[(i, k)];
            let d = a[(i, w / 2 + k)];
            buf[2 * k] = (s + d) * inv_sqrt2;
            buf[2 * k + 1] = (s - d) * inv_sqrt2;
        }
        for (j, &v) in buf.iter().enumerate() {
            a[(i, j)] = v;
        }
    }
}

fn haar_unstep_cols(a: &mut Array2<Complex64>, h: usize, w: usize) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for k in 0..h / 2 {
            let s = a[(k, j)];
            let d = a[(h / 2 + k, j)];
            buf[2 * k] = (s + d) * inv_sqrt2;
            buf[2 * k + 1] = (s - d) * inv_sqrt2;
        }
        for (i, &v) in buf.iter().enumerate() {
            a[(i, j)] = v;
        }
    }
}

/// Orthonormal multi-level 2D Haar transform, pyramidal layout: each level
/// transforms the current top-left approximation block in place.
pub fn haar_dwt2(img: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    check_divisible(img.height(), img.width(), levels)?;
    let mut a = img.data.clone();
    let (mut h, mut w) = (img.height(), img.width());
    for _ in 0..levels {
        haar_step_rows(&mut a, h, w);
        haar_step_cols(&mut a, h, w);
        h /= 2;
        w /= 2;
    }
    Ok(ComplexImage::new(a))
}

/// Inverse of [`haar_dwt2`].
pub fn haar_idwt2(coeffs: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    check_divisible(coeffs.height(), coeffs.width(), levels)?;
    let mut a = coeffs.data.clone();
    let (full_h, full_w) = (coeffs.height(), coeffs.width());
    for l in (0..levels).rev() {
        let h = full_h >> l;
        let w = full_w >> l;
        haar_unstep_cols(&mut a, h, w);
        haar_unstep_rows(&mut a, h, w);
    }
    Ok(ComplexImage::new(a))
}

// ---------------------------------------------------------------------------
// Wavelet soft-threshold denoiser.
// ---------------------------------------------------------------------------

fn soft(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// f(z) = W^H S_tau(W z) with orthonormal multi-level Haar W and the
/// noise-adaptive threshold tau = lambda * sigma applied independently to the
/// real and imaginary parts of every coefficient, approximation band
/// included. The k-sigma rule keeps the removal per application at the noise
/// scale itself, which is what the surrounding coarse-to-fine loop assumes of
/// its denoiser; leaving any band untouched would let the loop's injected
/// noise random-walk there unchecked.
#[derive(Debug, Clone)]
pub struct WaveletDenoiser {
    pub lambda: f64,
    pub levels: usize,
}

impl WaveletDenoiser {
    pub fn new(lambda: f64, levels: usize) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(ImmapError::Domain(format!(
                "wavelet threshold rate lambda must be > 0, got {lambda}"
            )));
        }
        if levels == 0 {
            return Err(ImmapError::Domain("wavelet levels must be >= 1".into()));
        }
        Ok(Self { lambda, levels })
    }
}

impl Denoiser for WaveletDenoiser {
    fn name(&self) -> &str {
        "wavelet"
    }

    fn denoise(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        let tau = self.lambda * sigma;
        let mut c = haar_dwt2(z, self.levels)?;
        let (h, w) = (c.height(), c.width());
        for i in 0..h {
            for j in 0..w {
                let v = c.data[(i, j)];
                c.data[(i, j)] = Complex64::new(soft(v.re, tau), soft(v.im, tau));
            }
        }
        haar_idwt2(&c, self.levels)
    }

    fn vjp(&self, z: &ComplexImage, sigma: f64, v: &ComplexImage) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        check_same_shape(z, v, "wavelet vjp")?;
        let tau = self.lambda * sigma;
        let cz = haar_dwt2(z, self.levels)?;
        let mut cv = haar_dwt2(v, self.levels)?;
        let (h, w) = (cz.height(), cz.width());
        for i in 0..h {
            for j in 0..w {
                let ref_c = cz.data[(i, j)];
                let val = cv.data[(i, j)];
                // subgradient at |coef| = tau takes the 0 branch
                let re = if ref_c.re.abs() > tau { val.re } else { 0.0 };
                let im = if ref_c.im.abs() > tau { val.im } else { 0.0 };
                cv.data[(i, j)] = Complex64::new(re, im);
            }
        }
        haar_idwt2(&cv, self.levels)
    }
}

// ---------------------------------------------------------------------------
// Toy Gaussian-mixture prior with closed-form posterior mean and Jacobian.
// Real-coordinate formulation: z in C^d is treated as [re..., im...] in R^{2d}.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    pub weights: Vec<f64>,
    /// Component means in stacked real coordinates, each of length 2d.
    pub means: Vec<Vec<f64>>,
    /// Isotropic component variances (per real coordinate).
    pub variances: Vec<f64>,
    /// Complex dimension d.
    pub dim: usize,
}

impl GmmDenoiser {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(ImmapError::Domain(
                "gmm: weights, means, variances must be equal-length and nonempty".into(),
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(ImmapError::Domain("gmm: weights must be positive".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ImmapError::Domain(format!(
                "gmm: weights must sum to 1, got {sum}"
            )));
        }
        if variances.iter().any(|&c| c <= 0.0) {
            return Err(ImmapError::Domain("gmm: variances must be positive".into()));
        }
        let len = means[0].len();
        if len == 0 || !len.is_multiple_of(2) || means.iter().any(|m| m.len() != len) {
            return Err(ImmapError::Domain(
                "gmm: means must share a positive even real dimension".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim: len / 2,
        })
    }

    fn to_real(&self, z: &ComplexImage) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(ImmapError::Dimension(format!(
                "gmm: image has {} pixels, prior dimension is {}",
                z.len(),
                self.dim
            )));
        }
        let s = z.as_slice();
        let mut out = Vec::with_capacity(2 * self.dim);
        out.extend(s.iter().map(|c| c.re));
        out.extend(s.iter().map(|c| c.im));
        Ok(out)
    }

    fn unflatten(&self, v: &[f64], height: usize, width: usize) -> ComplexImage {
        let d = self.dim;
        let data: Vec<Complex64> = (0..d).map(|i| Complex64::new(v[i], v[d + i])).collect();
        ComplexImage::from_vec(height, width, data).expect("dim checked")
    }

    /// Posterior responsibilities r_k(z) (log-sum-exp normalized) and the
    /// per-component shrinkages s_k = c_k/(c_k + sigma^2).
    fn responsibilities(&self, zr: &[f64], sigma: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.weights.len();
        let mut logp = vec![0.0; k];
        let mut shrink = vec![0.0; k];
        for ki in 0..k {
            let var = self.variances[ki] + sigma * sigma;
            shrink[ki] = self.variances[ki] / var;
            let sq: f64 = zr
                .iter()
                .zip(&self.means[ki])
                .map(|(z, m)| (z - m) * (z - m))
                .sum();
            logp[ki] = self.weights[ki].ln()
                - 0.5 * sq / var
                - 0.5 * (zr.len() as f64) * (2.0 * std::f64::consts::PI * var).ln();
        }
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logp.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= sum;
        }
        (resp, shrink)
    }
}

impl Denoiser for GmmDenoiser {
    fn name(&self) -> &str {
        "gmm"
    }

    fn denoise(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        let zr = self.to_real(z)?;
        let (resp, shrink) = self.responsibilities(&zr, sigma);
        let n = zr.len();
        let mut out = vec![0.0; n];
        for (ki, (&r, &s)) in resp.iter().zip(&shrink).enumerate() {
            for i in 0..n {
                let m = self.means[ki][i] + s * (zr[i] - self.means[ki][i]);
                out[i] += r * m;
            }
        }
        Ok(self.unflatten(&out, z.height(), z.width()))
    }

    fn vjp(&self, z: &ComplexImage, sigma: f64, v: &ComplexImage) -> Result<ComplexImage> {
        check_sigma(sigma)?;
        check_same_shape(z, v, "gmm vjp")?;
        let zr = self.to_real(z)?;
        let vr = self.to_real(v)?;
        let (resp, shrink) = self.responsibilities(&zr, sigma);
        let n = zr.len();
        let k = self.weights.len();

        // g_k = grad log N_k = -(z - mu_k)/(c_k + sigma^2); gbar = sum r_k g_k
        let mut g = vec![vec![0.0; n]; k];
        let mut gbar = vec![0.0; n];
        for ki in 0..k {
            let var = self.variances[ki] + sigma * sigma;
            for i in 0..n {
                g[ki][i] = -(zr[i] - self.means[ki][i]) / var;
                gbar[i] += resp[ki] * g[ki][i];
            }
        }

        // J = sum_k r_k s_k I + sum_k m_k (grad r_k)^T with
        // grad r_k = r_k (g_k - gbar). The Jacobian is symmetric, but we
        // apply the transpose explicitly:
        // J^T v = (sum_k r_k s_k) v + sum_k (m_k . v) grad r_k
        let smean: f64 = resp.iter().zip(&shrink).map(|(r, s)| r * s).sum();
        let mut out: Vec<f64> = vr.iter().map(|&x| smean * x).collect();
        for ki in 0..k {
            let mut mk_dot_v = 0.0;
            for i in 0..n {
                let m = self.means[ki][i] + shrink[ki] * (zr[i] - self.means[ki][i]);
                mk_dot_v += m * vr[i];
            }
            for i in 0..n {
                let grad_r = resp[ki] * (g[ki][i] - gbar[i]);
                out[i] += mk_dot_v * grad_r;
            }
        }
        Ok(self.unflatten(&out, z.height(), z.width()))
    }
}

// ---------------------------------------------------------------------------
// Finite-difference VJP oracle. O(N) denoiser evaluations: test use only.
// ---------------------------------------------------------------------------

fn real_inner(a: &ComplexImage, b: &ComplexImage) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// Approximate J^H v by probing every real coordinate with central
/// differences: (J^H v)_u = <v, (f(z+eps u) - f(z-eps u))/(2 eps)>_real.
pub fn finite_diff_vjp(
    denoiser: &dyn Denoiser,
    z: &ComplexImage,
    sigma: f64,
    v: &ComplexImage,
    eps: f64,
) -> Result<ComplexImage> {
    if eps <= 0.0 {
        return Err(ImmapError::Domain(format!("finite_diff_vjp: eps must be > 0, got {eps}")));
    }
    check_same_shape(z, v, "finite_diff_vjp")?;
    let n = z.len();
    let (h, w) = (z.height(), z.width());
    let mut out = ComplexImage::zeros(h, w);
    for p in 0..n {
        for part in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            if part == 0 {
                zp.as_slice_mut()[p].re += eps;
                zm.as_slice_mut()[p].re -= eps;
            } else {
                zp.as_slice_mut()[p].im += eps;
                zm.as_slice_mut()[p].im -= eps;
            }
            let fp = denoiser.denoise(&zp, sigma)?;
            let fm = denoiser.denoise(&zm, sigma)?;
            let mut diff = ComplexImage::zeros(h, w);
            for ((d, a), b) in diff
                .as_slice_mut()
                .iter_mut()
                .zip(fp.as_slice())
                .zip(fm.as_slice())
            {
                *d = (a - b) / (2.0 * eps);
            }
            let val = real_inner(v, &diff);
            if part == 0 {
                out.as_slice_mut()[p].re = val;
            } else {
                out.as_slice_mut()[p].im = val;
            }
        }
    }
    Ok(out)
}

/// Single random directional probe of VJP adjoint consistency:
/// returns (<v, Df(z)[u]>_real, <J^H v, u>_real) where Df(z)[u] is the
/// central finite difference along u.
pub fn directional_probe(
    denoiser: &dyn Denoiser,
    z: &ComplexImage,
    sigma: f64,
    u: &ComplexImage,
    v: &ComplexImage,
    eps: f64,
) -> Result<(f64, f64)> {
    let (h, w) = (z.height(), z.width());
    let mut zp = z.clone();
    let mut zm = z.clone();
    for ((p, m), ui) in zp
        .as_slice_mut()
        .iter_mut()
        .zip(zm.as_slice_mut())
        .zip(u.as_slice())
    {
        *p += eps * ui;
        *m -= eps * ui;
    }
    let fp = denoiser.denoise(&zp, sigma)?;
    let fm = denoiser.denoise(&zm, sigma)?;
    let mut diff = ComplexImage::zeros(h, w);
    for ((d, a), b) in diff
        .as_slice_mut()
        .iter_mut()
        .zip(fp.as_slice())
        .zip(fm.as_slice())
    {
        *d = (a - b) / (2.0 * eps);
    }
    let lhs = real_inner(v, &diff);
    let jhv = denoiser.vjp(z, sigma, v)?;
    let rhs = real_inner(&jhv, u);
    Ok((lhs, rhs))
}

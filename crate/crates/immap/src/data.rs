//! Complex array containers, Hermitian inner products, and seeded
//! complex-Gaussian noise generation.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ImmapError, Result};

/// Dense complex image of shape `height x width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub data: Array2<Complex64>,
}

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Self {
        Self { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn from_vec(height: usize, width: usize, v: Vec<Complex64>) -> Result<Self> {
        let data = Array2::from_shape_vec((height, width), v)
            .map_err(|e| ImmapError::Dimension(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// Number of complex pixels.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.data.as_slice().expect("contiguous image")
    }

    pub fn as_slice_mut(&mut self) -> &mut [Complex64] {
        self.data.as_slice_mut().expect("contiguous image")
    }

    pub fn norm2(&self) -> f64 {
        self.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Multicoil k-space data: `coils x n_samples`, where the sample axis is
/// ordered by ascending flat k-space index of the kept locations.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    pub data: Array2<Complex64>,
}

impl MultiCoilKSpace {
    pub fn new(data: Array2<Complex64>) -> Self {
        Self { data }
    }

    pub fn zeros(coils: usize, n_samples: usize) -> Self {
        Self {
            data: Array2::zeros((coils, n_samples)),
        }
    }

    pub fn coils(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Total measurement count, coils * n_samples.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.data.as_slice().expect("contiguous k-space")
    }

    pub fn from_flat(coils: usize, n_samples: usize, v: Vec<Complex64>) -> Result<Self> {
        let data = Array2::from_shape_vec((coils, n_samples), v)
            .map_err(|e| ImmapError::Dimension(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn to_flat(&self) -> Vec<Complex64> {
        self.as_slice().to_vec()
    }
}

/// Deterministic RNG. ChaCha8: counter-based, identical streams across
/// platforms for the same seed. All stochastic operations take the generator
/// explicitly; parallel workloads split by deriving child seeds.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// SplitMix64 mix of (seed, tag), for deterministic child seeds that do
    /// not depend on draw order.
    pub fn derive_seed(seed: u64, tag: u64) -> u64 {
        let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn gen_range_usize(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..hi)
    }
}

/// Sum of conj(a_i) * b_i.
pub fn hermitian_inner(a: &[Complex64], b: &[Complex64]) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(ImmapError::Dimension(format!(
            "hermitian_inner: lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.conj() * y).sum())
}

pub fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// i.i.d. circular complex Gaussian entries with E|v_i|^2 = variance
/// (real and imaginary parts each carry variance/2).
pub fn draw_complex_gaussian(
    n: usize,
    variance: f64,
    rng: &mut SeededRng,
) -> Result<Vec<Complex64>> {
    if variance < 0.0 {
        return Err(ImmapError::Domain(format!(
            "draw_complex_gaussian: negative variance {variance}"
        )));
    }
    let s = (variance / 2.0).sqrt();
    Ok((0..n)
        .map(|_| {
            let re = s * rng.standard_normal();
            let im = s * rng.standard_normal();
            Complex64::new(re, im)
        })
        .collect())
}

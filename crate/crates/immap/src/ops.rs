//! Linear operators of the MRI forward model: centered unitary 2D DFT,
//! coil-sensitivity weighting, sampling-mask row selection, and their
//! compositions (the encoding operator A and the likelihood system Sigma_t).

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::data::{hermitian_inner, norm2, ComplexImage, MultiCoilKSpace, SeededRng};
use crate::error::{ImmapError, Result};
use crate::solver::NoiseModel;

/// Coil-sensitivity maps, `coils x height x width` flattened per coil.
/// Sum-of-squares normalized: sum_c |s_c(p)|^2 = 1 at every pixel.
#[derive(Debug, Clone)]
pub struct SensitivityMaps {
    /// One row per coil, each of length height*width.
    pub data: Array2<Complex64>,
    pub height: usize,
    pub width: usize,
}

impl SensitivityMaps {
    pub fn new(data: Array2<Complex64>, height: usize, width: usize) -> Result<Self> {
        if data.ncols() != height * width {
            return Err(ImmapError::Dimension(format!(
                "sensitivity maps: {} pixels per coil, expected {}",
                data.ncols(),
                height * width
            )));
        }
        Ok(Self { data, height, width })
    }

    pub fn coils(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Max deviation of sum_c |s_c(p)|^2 from 1 over all pixels.
    pub fn sos_deviation(&self) -> f64 {
        (0..self.pixels())
            .map(|p| {
                let sos: f64 = self.data.column(p).iter().map(|s| s.norm_sqr()).sum();
                (sos - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Row-selection sampling mask over an `height x width` k-space grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub keep: Array2<bool>,
    /// Flat indices (row-major) of kept locations, ascending.
    pub omega: Vec<usize>,
}

impl SamplingMask {
    pub fn new(keep: Array2<bool>) -> Result<Self> {
        let omega: Vec<usize> = keep
            .as_slice()
            .expect("contiguous mask")
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        if omega.is_empty() {
            return Err(ImmapError::Domain("sampling mask keeps no samples".into()));
        }
        Ok(Self { keep, omega })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(Array2::from_elem((height, width), true)).expect("nonempty")
    }

    pub fn height(&self) -> usize {
        self.keep.nrows()
    }

    pub fn width(&self) -> usize {
        self.keep.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.omega.len()
    }

    /// Achieved acceleration R = N / N_s.
    pub fn acceleration(&self) -> f64 {
        self.keep.len() as f64 / self.omega.len() as f64
    }
}

/// Cached plans for the centered unitary 2D DFT of one image shape.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

fn shift_axis(a: &mut Array2<Complex64>, axis: usize, offset: usize) {
    // out[(i + offset) % n] = in[i] along `axis`
    let n = a.shape()[axis];
    if offset.is_multiple_of(n) {
        return;
    }
    let src = a.clone();
    for i in 0..n {
        let j = (i + offset) % n;
        a.index_axis_mut(Axis(axis), j)
            .assign(&src.index_axis(Axis(axis), i));
    }
}

/// fftshift: index 0 moves to floor(n/2) on both axes.
pub fn fftshift2(a: &mut Array2<Complex64>) {
    let (h, w) = (a.nrows(), a.ncols());
    shift_axis(a, 0, h / 2);
    shift_axis(a, 1, w / 2);
}

/// Inverse of fftshift2.
pub fn ifftshift2(a: &mut Array2<Complex64>) {
    let (h, w) = (a.nrows(), a.ncols());
    shift_axis(a, 0, h - h / 2);
    shift_axis(a, 1, w - w / 2);
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft(width, FftDirection::Forward),
            row_inv: planner.plan_fft(width, FftDirection::Inverse),
            col_fwd: planner.plan_fft(height, FftDirection::Forward),
            col_inv: planner.plan_fft(height, FftDirection::Inverse),
        }
    }

    fn fft2_inplace(&self, a: &mut Array2<Complex64>, forward: bool) {
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        for mut r in a.rows_mut() {
            row.process(r.as_slice_mut().expect("contiguous row"));
        }
        let mut t = a.t().as_standard_layout().into_owned();
        for mut r in t.rows_mut() {
            col.process(r.as_slice_mut().expect("contiguous row"));
        }
        a.assign(&t.t());
    }

    /// Centered unitary 2D DFT: fftshift(FFT(ifftshift(x))) / sqrt(N).
    pub fn fft2c(&self, img: &ComplexImage) -> ComplexImage {
        let mut a = img.data.clone();
        ifftshift2(&mut a);
        self.fft2_inplace(&mut a, true);
        fftshift2(&mut a);
        let scale = 1.0 / (a.len() as f64).sqrt();
        a.mapv_inplace(|z| z * scale);
        ComplexImage::new(a)
    }

    /// Centered unitary inverse 2D DFT.
    pub fn ifft2c(&self, ksp: &ComplexImage) -> ComplexImage {
        let mut a = ksp.data.clone();
        ifftshift2(&mut a);
        self.fft2_inplace(&mut a, false);
        fftshift2(&mut a);
        // rustfft's inverse is unnormalized: divide by N, then undo the
        // unitary 1/sqrt(N) of the forward.
        let scale = 1.0 / (a.len() as f64).sqrt();
        a.mapv_inplace(|z| z * scale);
        ComplexImage::new(a)
    }
}

/// Convenience one-shot centered unitary DFT.
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    Fft2::new(img.height(), img.width()).fft2c(img)
}

pub fn ifft2c(ksp: &ComplexImage) -> ComplexImage {
    Fft2::new(ksp.height(), ksp.width()).ifft2c(ksp)
}

/// Uniform contract for A, A A^H, Sigma_t and friends, in flat complex
/// vectors. The adjoint must satisfy <forward(x), y> = <x, adjoint(y)>.
pub trait LinearOp {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn forward(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;
}

/// The multicoil encoding operator A: image (N) -> measurements (C * N_s).
/// Per coil c: select Omega rows of fft2c(s_c . x).
#[derive(Debug, Clone)]
pub struct EncodingOp {
    pub maps: SensitivityMaps,
    pub mask: SamplingMask,
    fft: Fft2,
}

impl EncodingOp {
    pub fn new(maps: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        if maps.height != mask.height() || maps.width != mask.width() {
            return Err(ImmapError::Dimension(format!(
                "encoding operator: maps {}x{} vs mask {}x{}",
                maps.height,
                maps.width,
                mask.height(),
                mask.width()
            )));
        }
        let fft = Fft2::new(maps.height, maps.width);
        Ok(Self { maps, mask, fft })
    }

    pub fn coils(&self) -> usize {
        self.maps.coils()
    }

    pub fn pixels(&self) -> usize {
        self.maps.pixels()
    }

    pub fn n_samples(&self) -> usize {
        self.mask.n_samples()
    }

    pub fn apply_image(&self, x: &ComplexImage) -> Result<MultiCoilKSpace> {
        if x.height() != self.maps.height || x.width() != self.maps.width {
            return Err(ImmapError::Dimension(format!(
                "encoding forward: image {}x{} vs operator {}x{}",
                x.height(),
                x.width(),
                self.maps.height,
                self.maps.width
            )));
        }
        let (h, w) = (self.maps.height, self.maps.width);
        let mut out = MultiCoilKSpace::zeros(self.coils(), self.n_samples());
        for c in 0..self.coils() {
            let mut weighted = ComplexImage::zeros(h, w);
            {
                let wv = weighted.as_slice_mut();
                let xs = x.as_slice();
                for (p, v) in wv.iter_mut().enumerate() {
                    *v = self.maps.data[(c, p)] * xs[p];
                }
            }
            let k = self.fft.fft2c(&weighted);
            let ks = k.as_slice();
            for (j, &idx) in self.mask.omega.iter().enumerate() {
                out.data[(c, j)] = ks[idx];
            }
        }
        Ok(out)
    }

    /// A^H y = sum_c conj(s_c) . ifft2c(zero-fill(y_c)).
    pub fn apply_adjoint_kspace(&self, y: &MultiCoilKSpace) -> Result<ComplexImage> {
        if y.coils() != self.coils() || y.n_samples() != self.n_samples() {
            return Err(ImmapError::Dimension(format!(
                "encoding adjoint: kspace {}x{} vs operator {}x{}",
                y.coils(),
                y.n_samples(),
                self.coils(),
                self.n_samples()
            )));
        }
        let (h, w) = (self.maps.height, self.maps.width);
        let mut acc = ComplexImage::zeros(h, w);
        for c in 0..self.coils() {
            let mut filled = ComplexImage::zeros(h, w);
            {
                let fs = filled.as_slice_mut();
                for (j, &idx) in self.mask.omega.iter().enumerate() {
                    fs[idx] = y.data[(c, j)];
                }
            }
            let img = self.fft.ifft2c(&filled);
            let is = img.as_slice();
            let av = acc.as_slice_mut();
            for (p, v) in av.iter_mut().enumerate() {
                *v += self.maps.data[(c, p)].conj() * is[p];
            }
        }
        Ok(acc)
    }
}

impl LinearOp for EncodingOp {
    fn domain_dim(&self) -> usize {
        self.pixels()
    }

    fn range_dim(&self) -> usize {
        self.coils() * self.n_samples()
    }

    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let img = ComplexImage::from_vec(self.maps.height, self.maps.width, x.to_vec())
            .expect("domain dim");
        self.apply_image(&img).expect("dims checked").to_flat()
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let ksp = MultiCoilKSpace::from_flat(self.coils(), self.n_samples(), y.to_vec())
            .expect("range dim");
        self.apply_adjoint_kspace(&ksp)
            .expect("dims checked")
            .as_slice()
            .to_vec()
    }
}

/// The likelihood system operator Sigma_t = Sigma_y + (sigma_t^2/(1+sigma_t^2)) A A^H,
/// acting on measurement-domain vectors. Hermitian positive definite whenever
/// Sigma_y has strictly positive diagonal.
#[derive(Debug)]
pub struct SigmaTOp<'a> {
    pub encoding: &'a EncodingOp,
    pub noise: &'a NoiseModel,
    pub laplace_factor: f64,
}

impl<'a> SigmaTOp<'a> {
    pub fn new(encoding: &'a EncodingOp, noise: &'a NoiseModel, sigma_t: f64) -> Result<Self> {
        if sigma_t < 0.0 {
            return Err(ImmapError::Domain(format!("sigma_t < 0: {sigma_t}")));
        }
        let m = encoding.coils() * encoding.n_samples();
        if noise.variances.len() != m {
            return Err(ImmapError::Dimension(format!(
                "noise model length {} vs measurement dim {}",
                noise.variances.len(),
                m
            )));
        }
        if noise.variances.iter().any(|&v| v <= 0.0) {
            return Err(ImmapError::Model(
                "noise covariance diagonal must be strictly positive".into(),
            ));
        }
        let s2 = sigma_t * sigma_t;
        Ok(Self {
            encoding,
            noise,
            laplace_factor: s2 / (1.0 + s2),
        })
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = v
            .iter()
            .zip(&self.noise.variances)
            .map(|(x, &s)| x * s)
            .collect();
        if self.laplace_factor > 0.0 {
            let ah = self.encoding.adjoint(v);
            let aah = self.encoding.forward(&ah);
            for (o, a) in out.iter_mut().zip(aah) {
                *o += self.laplace_factor * a;
            }
        }
        out
    }
}

impl LinearOp for SigmaTOp<'_> {
    fn domain_dim(&self) -> usize {
        self.encoding.range_dim()
    }

    fn range_dim(&self) -> usize {
        self.encoding.range_dim()
    }

    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply(x)
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        // Hermitian
        self.apply(y)
    }
}

/// Relative adjoint discrepancy |<Ax, y> - <x, A^H y>| / (|Ax||y| + |x||A^H y|)
/// for seeded random probes.
pub fn adjoint_check(op: &dyn LinearOp, rng: &mut SeededRng) -> f64 {
    let x = crate::data::draw_complex_gaussian(op.domain_dim(), 1.0, rng).expect("var >= 0");
    let y = crate::data::draw_complex_gaussian(op.range_dim(), 1.0, rng).expect("var >= 0");
    let ax = op.forward(&x);
    let ahy = op.adjoint(&y);
    let lhs = hermitian_inner(&ax, &y).expect("range dims");
    let rhs = hermitian_inner(&x, &ahy).expect("domain dims");
    let scale = norm2(&ax) * norm2(&y) + norm2(&x) * norm2(&ahy);
    if scale == 0.0 {
        return 0.0;
    }
    (lhs - rhs).norm() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::draw_complex_gaussian;
    use crate::sim::{cartesian_mask, synth_sensitivities, MaskScheme};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = SeededRng::new(seed);
        ComplexImage::from_vec(h, w, draw_complex_gaussian(h * w, 1.0, &mut rng).unwrap())
            .unwrap()
    }

    #[test]
    fn fft2c_constant_image() {
        for n in [8usize, 9] {
            let img = ComplexImage::new(Array2::from_elem((n, n), c(1.0, 0.0)));
            let k = fft2c(&img);
            let center = (n / 2, n / 2);
            for i in 0..n {
                for j in 0..n {
                    let v = k.data[(i, j)];
                    if (i, j) == center {
                        assert!((v - c(n as f64, 0.0)).norm() < 1e-10, "n={n} center={v}");
                    } else {
                        assert!(v.norm() < 1e-10, "n={n} ({i},{j})={v}");
                    }
                }
            }
        }
    }

    #[test]
    fn fft2c_parseval_and_roundtrip() {
        for &(h, w) in &[(16, 16), (15, 22), (64, 64)] {
            let img = random_image(h, w, 3);
            let k = fft2c(&img);
            let rel = (k.norm2() - img.norm2()).abs() / img.norm2();
            assert!(rel < 1e-12, "parseval {h}x{w}: {rel}");
            let back = ifft2c(&k);
            let err: f64 = back
                .as_slice()
                .iter()
                .zip(img.as_slice())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / img.norm2();
            assert!(err < 1e-12, "roundtrip {h}x{w}: {err}");
        }
    }

    fn test_encoding(h: usize, w: usize, coils: usize, r: f64, seed: u64) -> EncodingOp {
        let maps = synth_sensitivities(h, w, coils, seed).unwrap();
        let mask = cartesian_mask(h, w, r, 4.max(h / 16), MaskScheme::Uniform, seed).unwrap();
        EncodingOp::new(maps, mask).unwrap()
    }

    #[test]
    fn encoding_identity_case() {
        // C=1, s = 1, full mask: A == fft2c and A^H A = I.
        let h = 16;
        let maps = SensitivityMaps::new(Array2::from_elem((1, h * h), c(1.0, 0.0)), h, h).unwrap();
        let mask = SamplingMask::full(h, h);
        let op = EncodingOp::new(maps, mask).unwrap();
        let x = random_image(h, h, 5);
        let y = op.apply_image(&x).unwrap();
        let k = fft2c(&x);
        for (a, b) in y.as_slice().iter().zip(k.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = op.apply_adjoint_kspace(&y).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn encoding_zero_maps_to_zero() {
        let op = test_encoding(16, 16, 4, 2.0, 1);
        let y = op.apply_image(&ComplexImage::zeros(16, 16)).unwrap();
        assert!(y.as_slice().iter().all(|z| z.norm() == 0.0));
        let x = op
            .apply_adjoint_kspace(&MultiCoilKSpace::zeros(4, op.n_samples()))
            .unwrap();
        assert!(x.as_slice().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn encoding_adjoint_identity() {
        for (i, &r) in [1.0, 2.0, 4.0, 8.0].iter().enumerate() {
            let op = test_encoding(32, 32, 4, r, i as u64);
            let mut rng = SeededRng::new(100 + i as u64);
            for _ in 0..5 {
                let d = adjoint_check(&op, &mut rng);
                assert!(d < 1e-10, "R={r}: discrepancy {d}");
            }
        }
    }

    #[test]
    fn encoding_dimension_mismatch() {
        let op = test_encoding(16, 16, 2, 2.0, 1);
        assert!(op.apply_image(&ComplexImage::zeros(8, 8)).is_err());
        assert!(op
            .apply_adjoint_kspace(&MultiCoilKSpace::zeros(3, op.n_samples()))
            .is_err());
    }

    #[test]
    fn encoding_linearity() {
        let op = test_encoding(16, 16, 3, 2.0, 9);
        let x1 = random_image(16, 16, 20);
        let x2 = random_image(16, 16, 21);
        let (alpha, beta) = (c(0.3, -1.2), c(-0.7, 0.4));
        let mut comb = ComplexImage::zeros(16, 16);
        for ((o, a), b) in comb
            .as_slice_mut()
            .iter_mut()
            .zip(x1.as_slice())
            .zip(x2.as_slice())
        {
            *o = alpha * a + beta * b;
        }
        let lhs = op.apply_image(&comb).unwrap();
        let y1 = op.apply_image(&x1).unwrap();
        let y2 = op.apply_image(&x2).unwrap();
        let scale = lhs.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for ((l, a), b) in lhs.as_slice().iter().zip(y1.as_slice()).zip(y2.as_slice()) {
            assert!((l - (alpha * a + beta * b)).norm() < 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn sigma_t_zero_is_noise_diag() {
        let op = test_encoding(16, 16, 2, 2.0, 3);
        let noise = NoiseModel::uniform(0.25, op.range_dim()).unwrap();
        let st = SigmaTOp::new(&op, &noise, 0.0).unwrap();
        let mut rng = SeededRng::new(4);
        let v = draw_complex_gaussian(op.range_dim(), 1.0, &mut rng).unwrap();
        let got = st.apply(&v);
        for (g, x) in got.iter().zip(&v) {
            assert!((g - x * 0.25).norm() < 1e-14);
        }
    }

    #[test]
    fn sigma_t_unit_factor() {
        // sigma_t = 1 -> factor 1/2.
        let op = test_encoding(16, 16, 2, 2.0, 3);
        let noise = NoiseModel::uniform(0.1, op.range_dim()).unwrap();
        let st = SigmaTOp::new(&op, &noise, 1.0).unwrap();
        assert!((st.laplace_factor - 0.5).abs() < 1e-15);
        let mut rng = SeededRng::new(8);
        let v = draw_complex_gaussian(op.range_dim(), 1.0, &mut rng).unwrap();
        let got = st.apply(&v);
        let aah = op.forward(&op.adjoint(&v));
        for ((g, x), a) in got.iter().zip(&v).zip(&aah) {
            assert!((g - (x * 0.1 + 0.5 * a)).norm() < 1e-12);
        }
    }

    #[test]
    fn sigma_t_matches_dense_small() {
        // N=16 (4x4), C=2: dense Sigma_y + c AA^H applied to v.
        let maps = synth_sensitivities(4, 4, 2, 7).unwrap();
        let mask = cartesian_mask(4, 4, 2.0, 2, MaskScheme::Uniform, 7).unwrap();
        let op = EncodingOp::new(maps, mask).unwrap();
        let m = op.range_dim();
        let noise = NoiseModel::uniform(0.3, m).unwrap();
        let sigma_t = 0.7;
        let st = SigmaTOp::new(&op, &noise, sigma_t).unwrap();
        // dense A from canonical basis vectors
        let n = op.domain_dim();
        let mut a_cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![c(0.0, 0.0); n];
            e[j] = c(1.0, 0.0);
            a_cols.push(op.forward(&e));
        }
        let mut rng = SeededRng::new(17);
        let v = draw_complex_gaussian(m, 1.0, &mut rng).unwrap();
        // dense AA^H v: first A^H v = conj-transpose dot
        let mut ahv = vec![c(0.0, 0.0); n];
        for (j, col) in a_cols.iter().enumerate() {
            ahv[j] = col.iter().zip(&v).map(|(aij, vi)| aij.conj() * vi).sum();
        }
        let mut aahv = vec![c(0.0, 0.0); m];
        for (j, col) in a_cols.iter().enumerate() {
            for (i, aij) in col.iter().enumerate() {
                aahv[i] += aij * ahv[j];
            }
        }
        let factor = sigma_t * sigma_t / (1.0 + sigma_t * sigma_t);
        let got = st.apply(&v);
        let scale = norm2(&got);
        for ((g, x), a) in got.iter().zip(&v).zip(&aahv) {
            assert!((g - (x * 0.3 + factor * a)).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn sigma_t_hermitian_positive_definite() {
        let op = test_encoding(16, 16, 4, 4.0, 11);
        let noise = NoiseModel::uniform(0.01, op.range_dim()).unwrap();
        let st = SigmaTOp::new(&op, &noise, 0.5).unwrap();
        let mut rng = SeededRng::new(30);
        let u = draw_complex_gaussian(op.range_dim(), 1.0, &mut rng).unwrap();
        let v = draw_complex_gaussian(op.range_dim(), 1.0, &mut rng).unwrap();
        let su = st.apply(&u);
        let sv = st.apply(&v);
        let lhs = hermitian_inner(&su, &v).unwrap();
        let rhs = hermitian_inner(&sv, &u).unwrap();
        assert!((lhs - rhs.conj()).norm() < 1e-10 * (norm2(&su) * norm2(&v)));
        let quad = hermitian_inner(&v, &sv).unwrap();
        assert!(quad.re > 0.0);
        assert!(quad.im.abs() < 1e-10 * quad.re);
    }

    #[test]
    fn sigma_t_rejects_nonpositive_noise() {
        let op = test_encoding(8, 8, 1, 1.0, 2);
        let noise = NoiseModel {
            variances: vec![0.0; op.range_dim()],
        };
        assert!(matches!(
            SigmaTOp::new(&op, &noise, 0.5),
            Err(ImmapError::Model(_))
        ));
    }

    struct IdentityOp(usize);
    impl LinearOp for IdentityOp {
        fn domain_dim(&self) -> usize {
            self.0
        }
        fn range_dim(&self) -> usize {
            self.0
        }
        fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
            x.to_vec()
        }
        fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
            y.to_vec()
        }
    }

    /// Encoding with the sensitivity conjugate dropped in the adjoint.
    struct BrokenAdjoint(EncodingOp);
    impl LinearOp for BrokenAdjoint {
        fn domain_dim(&self) -> usize {
            self.0.domain_dim()
        }
        fn range_dim(&self) -> usize {
            self.0.range_dim()
        }
        fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
            self.0.forward(x)
        }
        fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
            let enc = &self.0;
            let ksp = MultiCoilKSpace::from_flat(enc.coils(), enc.n_samples(), y.to_vec())
                .unwrap();
            let (h, w) = (enc.maps.height, enc.maps.width);
            let mut acc = ComplexImage::zeros(h, w);
            for c in 0..enc.coils() {
                let mut filled = ComplexImage::zeros(h, w);
                for (j, &idx) in enc.mask.omega.iter().enumerate() {
                    filled.as_slice_mut()[idx] = ksp.data[(c, j)];
                }
                let img = enc.fft.ifft2c(&filled);
                for (p, v) in acc.as_slice_mut().iter_mut().enumerate() {
                    // missing conj
                    *v += enc.maps.data[(c, p)] * img.as_slice()[p];
                }
            }
            acc.as_slice().to_vec()
        }
    }

    #[test]
    fn adjoint_check_identity_and_mutation() {
        let mut rng = SeededRng::new(55);
        assert!(adjoint_check(&IdentityOp(64), &mut rng) < 1e-14);
        let op = test_encoding(16, 16, 4, 2.0, 6);
        assert!(adjoint_check(&op, &mut rng) < 1e-10);
        let broken = BrokenAdjoint(test_encoding(16, 16, 4, 2.0, 6));
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            worst = worst.max(adjoint_check(&broken, &mut rng));
        }
        assert!(worst > 1e-3, "mutated adjoint not detected: {worst}");
    }
}

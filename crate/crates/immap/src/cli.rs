//! Command implementations behind the `immap` binary: simulate, recon, eval,
//! sweep, export-png. File formats and the exit-code contract live here so
//! integration tests can drive commands without spawning processes.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{NormalizationMode, RunConfig};
use crate::container::{ArrayData, Imrd};
use crate::data::{ComplexImage, MultiCoilKSpace, SeededRng};
use crate::error::{ImmapError, Result};
use crate::metrics::{cg_sense, metric_report, nrmse, psnr, ssim, zero_filled_recon};
use crate::ops::{EncodingOp, SamplingMask, SensitivityMaps};
use crate::sim::{
    cartesian_mask, shepp_logan, simulate_acquisition, synth_sensitivities, AcquisitionSpec,
};
use crate::solver::{immap_reconstruct, prior_sample, NoiseModel};

/// Exit-code contract: 0 success, 1 usage/config, 2 I/O, 3 numerical.
pub fn exit_code_for(err: &ImmapError) -> i32 {
    match err {
        ImmapError::Io(_) | ImmapError::Container(_) => 2,
        ImmapError::Numerical(_) => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMethod {
    Immap,
    Sense,
    Zerofill,
    PriorSample,
}

impl std::str::FromStr for ReconMethod {
    type Err = ImmapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "immap" => Ok(Self::Immap),
            "sense" => Ok(Self::Sense),
            "zerofill" => Ok(Self::Zerofill),
            "prior-sample" => Ok(Self::PriorSample),
            other => Err(ImmapError::Config(format!(
                "unknown method '{other}' (expected immap | sense | zerofill | prior-sample)"
            ))),
        }
    }
}

impl std::fmt::Display for ReconMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Immap => "immap",
            Self::Sense => "sense",
            Self::Zerofill => "zerofill",
            Self::PriorSample => "prior-sample",
        };
        write!(f, "{s}")
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(spec: &AcquisitionSpec, out_path: &Path) -> Result<()> {
    spec.validate()?;
    let container = build_simulation(spec)?;
    container.write_to(out_path)
}

/// Simulate one acquisition into an in-memory container.
pub fn build_simulation(spec: &AcquisitionSpec) -> Result<Imrd> {
    spec.validate()?;
    let n = spec.size;
    let x = shepp_logan(n, spec.phase)?;
    let maps = synth_sensitivities(n, n, spec.coils, SeededRng::derive_seed(spec.seed, 1))?;
    let mask = cartesian_mask(
        n,
        n,
        spec.accel,
        spec.acs_lines,
        spec.scheme,
        SeededRng::derive_seed(spec.seed, 2),
    )?;
    let achieved_r = mask.acceleration();
    let enc = EncodingOp::new(maps, mask)?;
    let mut rng = SeededRng::new(SeededRng::derive_seed(spec.seed, 3));
    let y = simulate_acquisition(&x, &enc, spec.noise_sigma, &mut rng)?;
    // noiseless cells still need a positive likelihood variance
    let var = (spec.noise_sigma * spec.noise_sigma).max(1e-12);
    let sigma_y = vec![var; y.len()];

    let mut c = Imrd::new();
    c.meta.insert("size".into(), json!(n));
    c.meta.insert("coils".into(), json!(spec.coils));
    c.meta.insert("R".into(), json!(achieved_r));
    c.meta.insert("requested_accel".into(), json!(spec.accel));
    c.meta.insert("sigma".into(), json!(spec.noise_sigma));
    c.meta
        .insert("mask_scheme".into(), json!(spec.scheme.to_string()));
    c.meta.insert("acs_lines".into(), json!(spec.acs_lines));
    c.meta.insert("seed".into(), json!(spec.seed));
    c.meta.insert("phase".into(), json!(spec.phase));
    c.push(
        "ground_truth",
        ArrayData::from_complex(vec![n, n], x.as_slice())?,
    );
    c.push(
        "maps",
        ArrayData::from_complex(
            vec![spec.coils, n, n],
            enc.maps.data.as_slice().expect("contiguous maps"),
        )?,
    );
    c.push(
        "mask",
        ArrayData::from_bool(
            vec![n, n],
            enc.mask.keep.as_slice().expect("contiguous mask"),
        )?,
    );
    c.push(
        "kspace",
        ArrayData::from_complex(vec![spec.coils, enc.n_samples()], y.as_slice())?,
    );
    c.push("sigma_y", ArrayData::from_f64(vec![y.len()], &sigma_y)?);
    Ok(c)
}

// ---------------------------------------------------------------------------
// problem loading and normalization
// ---------------------------------------------------------------------------

pub struct Problem {
    pub encoding: EncodingOp,
    pub kspace: MultiCoilKSpace,
    pub noise: NoiseModel,
    pub ground_truth: Option<ComplexImage>,
}

pub fn load_problem(c: &Imrd) -> Result<Problem> {
    let maps_arr = c.require("maps")?;
    let shape = maps_arr.shape().to_vec();
    if shape.len() != 3 {
        return Err(ImmapError::Container(format!(
            "maps must be 3-dimensional, got {shape:?}"
        )));
    }
    let (coils, h, w) = (shape[0], shape[1], shape[2]);
    let maps = SensitivityMaps::new(
        ndarray::Array2::from_shape_vec((coils, h * w), maps_arr.to_complex()?)
            .map_err(|e| ImmapError::Container(e.to_string()))?,
        h,
        w,
    )?;
    let mask_arr = c.require("mask")?;
    let keep = ndarray::Array2::from_shape_vec((h, w), mask_arr.to_bool()?)
        .map_err(|e| ImmapError::Container(e.to_string()))?;
    let mask = SamplingMask::new(keep)?;
    let encoding = EncodingOp::new(maps, mask)?;
    let k_arr = c.require("kspace")?;
    let kspace = MultiCoilKSpace::from_flat(coils, encoding.n_samples(), k_arr.to_complex()?)?;
    let noise = NoiseModel::new(c.require("sigma_y")?.to_f64()?)?;
    let ground_truth = match c.get("ground_truth") {
        Some(a) => Some(ComplexImage::from_vec(h, w, a.to_complex()?)?),
        None => None,
    };
    Ok(Problem {
        encoding,
        kspace,
        noise,
        ground_truth,
    })
}

fn percentile99(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.99 * values.len() as f64).ceil() as usize).saturating_sub(1);
    values[idx.min(values.len() - 1)]
}

/// Scale k-space so the zero-filled image has 99th-percentile magnitude 1.
/// Returns the applied scale (outputs are divided by it afterwards).
pub fn normalize_problem(p: &mut Problem, mode: NormalizationMode) -> Result<f64> {
    let scale = match mode {
        NormalizationMode::None => 1.0,
        NormalizationMode::Percentile99 => {
            let zf = zero_filled_recon(&p.kspace, &p.encoding)?;
            let mut mags: Vec<f64> = zf.as_slice().iter().map(|z| z.norm()).collect();
            let p99 = percentile99(&mut mags);
            if p99 <= 0.0 {
                return Err(ImmapError::Numerical(
                    "normalization: zero-filled image is identically zero".into(),
                ));
            }
            1.0 / p99
        }
    };
    if scale != 1.0 {
        for v in p.kspace.data.iter_mut() {
            *v *= scale;
        }
        for v in &mut p.noise.variances {
            *v *= scale * scale;
        }
    }
    Ok(scale)
}

// ---------------------------------------------------------------------------
// recon
// ---------------------------------------------------------------------------

pub struct ReconOutcome {
    pub container: Imrd,
    pub trace_csv: Option<String>,
}

pub fn run_recon(
    method: ReconMethod,
    cfg: &RunConfig,
    input: &Imrd,
    sense_lambda: f64,
) -> Result<ReconOutcome> {
    let mut p = load_problem(input)?;
    let (h, w) = (p.encoding.maps.height, p.encoding.maps.width);
    let scale = normalize_problem(&mut p, cfg.data.normalization)?;

    let mut trace_csv = None;
    let mut meta_extra = serde_json::Map::new();
    let mut recon = match method {
        ReconMethod::Zerofill => zero_filled_recon(&p.kspace, &p.encoding)?,
        ReconMethod::Sense => {
            let (img, converged) = cg_sense(&p.kspace, &p.encoding, &p.noise, sense_lambda)?;
            if !converged {
                eprintln!("warning: cg-sense did not reach tolerance; returning best iterate");
            }
            meta_extra.insert("sense_lambda".into(), json!(sense_lambda));
            meta_extra.insert("sense_converged".into(), json!(converged));
            img
        }
        ReconMethod::Immap => {
            let denoiser = cfg.prior.build(h, w)?;
            let (img, trace) =
                immap_reconstruct(&p.kspace, &p.encoding, &p.noise, denoiser.as_ref(), &cfg.solver)?;
            if trace.cg_warnings > 0 {
                eprintln!(
                    "warning: {} of {} iterations had non-converged CG solves",
                    trace.cg_warnings,
                    trace.iterations()
                );
            }
            meta_extra.insert("iterations".into(), json!(trace.iterations()));
            meta_extra.insert("solver_converged".into(), json!(trace.converged));
            meta_extra.insert("cg_warnings".into(), json!(trace.cg_warnings));
            trace_csv = Some(trace.to_csv());
            img
        }
        ReconMethod::PriorSample => {
            let denoiser = cfg.prior.build(h, w)?;
            let (img, trace) = prior_sample(denoiser.as_ref(), &cfg.solver, h, w)?;
            meta_extra.insert("iterations".into(), json!(trace.iterations()));
            meta_extra.insert("solver_converged".into(), json!(trace.converged));
            trace_csv = Some(trace.to_csv());
            img
        }
    };

    // undo normalization so outputs are in the input's intensity units
    if scale != 1.0 && method != ReconMethod::PriorSample {
        for v in recon.as_slice_mut() {
            *v /= scale;
        }
    }

    let mut out = Imrd::new();
    for (k, v) in &input.meta {
        out.meta.insert(k.clone(), v.clone());
    }
    out.meta.insert("method".into(), json!(method.to_string()));
    out.meta
        .insert("resolved_config".into(), cfg.resolved_json());
    out.meta
        .insert("normalization_scale".into(), json!(scale));
    for (k, v) in meta_extra {
        out.meta.insert(k, v);
    }
    out.push("recon", ArrayData::from_complex(vec![h, w], recon.as_slice())?);
    Ok(ReconOutcome {
        container: out,
        trace_csv,
    })
}

pub fn cmd_recon(
    method: ReconMethod,
    cfg: &RunConfig,
    in_path: &Path,
    out_path: &Path,
    trace_path: Option<&Path>,
    sense_lambda: f64,
) -> Result<()> {
    let input = Imrd::read_from(in_path)?;
    let outcome = run_recon(method, cfg, &input, sense_lambda)?;
    outcome.container.write_to(out_path)?;
    if let Some(csv) = outcome.trace_csv {
        let tp: PathBuf = match trace_path {
            Some(p) => p.to_path_buf(),
            None => out_path.with_extension("trace.csv"),
        };
        std::fs::write(tp, csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn load_field(path: &Path, field: &str) -> Result<ComplexImage> {
    let c = Imrd::read_from(path)?;
    let arr = c.require(field)?;
    let shape = arr.shape().to_vec();
    if shape.len() != 2 {
        return Err(ImmapError::Container(format!(
            "field '{field}' must be 2-dimensional, got {shape:?}"
        )));
    }
    ComplexImage::from_vec(shape[0], shape[1], arr.to_complex()?)
}

pub fn eval_report(
    reference: &ComplexImage,
    estimate: &ComplexImage,
    metrics: &[String],
) -> Result<serde_json::Value> {
    let mut out = serde_json::Map::new();
    for m in metrics {
        match m.as_str() {
            "nrmse" => {
                out.insert("nrmse".into(), json!(nrmse(reference, estimate)?));
            }
            "psnr" => {
                out.insert("psnr".into(), json!(psnr(reference, estimate)?));
            }
            "ssim" => {
                let s = ssim(reference, estimate)?;
                out.insert("ssim".into(), json!(s));
                out.insert("ssim_x100".into(), json!(100.0 * s));
            }
            other => {
                return Err(ImmapError::Config(format!(
                    "unknown metric '{other}' (expected nrmse | psnr | ssim)"
                )))
            }
        }
    }
    Ok(serde_json::Value::Object(out))
}

pub fn cmd_eval(
    ref_path: &Path,
    ref_field: &str,
    est_path: &Path,
    est_field: &str,
    metrics: &[String],
    out_path: Option<&Path>,
) -> Result<serde_json::Value> {
    let reference = load_field(ref_path, ref_field)?;
    let estimate = load_field(est_path, est_field)?;
    if reference.height() != estimate.height() || reference.width() != estimate.width() {
        return Err(ImmapError::Config(format!(
            "shape mismatch: {}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            estimate.height(),
            estimate.width()
        )));
    }
    let report = eval_report(&reference, &estimate, metrics)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match out_path {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub accels: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<ReconMethod>,
    pub size: usize,
    pub coils: usize,
    pub acs_lines: usize,
    pub scheme: crate::sim::MaskScheme,
    pub phase: bool,
    pub seed: u64,
    pub workers: usize,
    pub sense_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub accel: f64,
    pub sigma: f64,
    pub method: ReconMethod,
    pub status: String,
    pub nrmse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iterations: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn run_sweep_cell(
    spec: &SweepSpec,
    cfg: &RunConfig,
    accel: f64,
    sigma: f64,
    method: ReconMethod,
    cell_seed: u64,
    out_dir: Option<&Path>,
    cell_name: &str,
) -> Result<SweepCell> {
    let acq = AcquisitionSpec {
        size: spec.size,
        coils: spec.coils,
        accel,
        acs_lines: spec.acs_lines,
        scheme: spec.scheme,
        noise_sigma: sigma,
        seed: cell_seed,
        phase: spec.phase,
    };
    let sim = build_simulation(&acq)?;
    let mut cell_cfg = cfg.clone();
    cell_cfg.solver.seed = SeededRng::derive_seed(cell_seed, 0xc0de);
    let outcome = run_recon(method, &cell_cfg, &sim, spec.sense_lambda)?;
    let truth = {
        let arr = sim.require("ground_truth")?;
        ComplexImage::from_vec(spec.size, spec.size, arr.to_complex()?)?
    };
    let est = {
        let arr = outcome.container.require("recon")?;
        ComplexImage::from_vec(spec.size, spec.size, arr.to_complex()?)?
    };
    let report = metric_report(&truth, &est)?;
    if let Some(dir) = out_dir {
        sim.write_to(&dir.join(format!("{cell_name}.sim.imrd")))?;
        outcome
            .container
            .write_to(&dir.join(format!("{cell_name}.recon.imrd")))?;
        if let Some(csv) = &outcome.trace_csv {
            std::fs::write(dir.join(format!("{cell_name}.trace.csv")), csv)?;
        }
    }
    let iterations = outcome
        .container
        .meta
        .get("iterations")
        .and_then(serde_json::Value::as_u64)
        .map(|v| v as usize);
    Ok(SweepCell {
        accel,
        sigma,
        method,
        status: "ok".into(),
        nrmse: Some(report.nrmse),
        psnr: Some(report.psnr),
        ssim: Some(report.ssim),
        iterations,
    })
}

/// Run the full grid. Cells execute in parallel up to `workers`; seeds derive
/// from cell coordinates, so results are independent of scheduling.
pub fn run_sweep(spec: &SweepSpec, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Vec<SweepCell>> {
    if spec.accels.is_empty() || spec.sigmas.is_empty() || spec.methods.is_empty() {
        return Err(ImmapError::Config("sweep grid is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut cells = Vec::new();
    for (ri, &accel) in spec.accels.iter().enumerate() {
        for (si, &sigma) in spec.sigmas.iter().enumerate() {
            for (mi, &method) in spec.methods.iter().enumerate() {
                let tag = ((ri as u64) << 32) | ((si as u64) << 16) | mi as u64;
                let cell_seed = SeededRng::derive_seed(spec.seed, tag);
                let name = format!(
                    "r{}_s{}_{}",
                    accel,
                    sigma,
                    method
                );
                cells.push((accel, sigma, method, cell_seed, name));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| ImmapError::Config(format!("thread pool: {e}")))?;
    let results: Vec<SweepCell> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|(accel, sigma, method, cell_seed, name)| {
                match run_sweep_cell(spec, cfg, *accel, *sigma, *method, *cell_seed, out_dir, name)
                {
                    Ok(cell) => cell,
                    Err(e) => SweepCell {
                        accel: *accel,
                        sigma: *sigma,
                        method: *method,
                        status: format!("error: {e}"),
                        nrmse: None,
                        psnr: None,
                        ssim: None,
                        iterations: None,
                    },
                }
            })
            .collect()
    });
    Ok(results)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("R,sigma,method,status,nrmse,psnr,ssim,iterations\n");
    for c in cells {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.accel,
            c.sigma,
            c.method,
            c.status,
            fmt_opt(c.nrmse),
            fmt_opt(c.psnr),
            fmt_opt(c.ssim),
            c.iterations.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    s
}

pub fn cmd_sweep(spec: &SweepSpec, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let cells = run_sweep(spec, cfg, Some(out_dir))?;
    std::fs::write(out_dir.join("sweep.csv"), sweep_csv(&cells))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// export-png
// ---------------------------------------------------------------------------

pub fn cmd_export_png(
    in_path: &Path,
    field: &str,
    window: Option<(f64, f64)>,
    diff_with: Option<(&Path, &str)>,
    out_path: &Path,
) -> Result<()> {
    let img = load_field(in_path, field)?;
    let mags: Vec<f64> = match diff_with {
        None => img.as_slice().iter().map(|z| z.norm()).collect(),
        Some((rp, rf)) => {
            // error map |est - ref|, windowed like any other magnitude image
            let reference = load_field(rp, rf)?;
            if reference.height() != img.height() || reference.width() != img.width() {
                return Err(ImmapError::Config("diff reference shape mismatch".into()));
            }
            img.as_slice()
                .iter()
                .zip(reference.as_slice())
                .map(|(a, b)| (a - b).norm())
                .collect()
        }
    };
    let (lo, hi) = match window {
        Some((lo, hi)) => {
            if hi <= lo {
                return Err(ImmapError::Config(format!("window [{lo}, {hi}] is empty")));
            }
            (lo, hi)
        }
        None => (0.0, mags.iter().cloned().fold(0.0, f64::max).max(1e-300)),
    };
    let mut buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::new(img.width() as u32, img.height() as u32);
    for (p, &m) in buf.pixels_mut().zip(&mags) {
        let t = ((m - lo) / (hi - lo)).clamp(0.0, 1.0);
        *p = image::Luma([(t * 65535.0).round() as u16]);
    }
    buf.save_with_format(out_path, image::ImageFormat::Png)
        .map_err(|e| ImmapError::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

//! TOML run configuration: solver hyperparameters, prior selection, and data
//! normalization. Unknown keys are rejected; defaults are materialized so the
//! resolved config echoed into outputs contains every value actually used.

use serde::{Deserialize, Serialize};

use crate::data::ComplexImage;
use crate::denoise::{Denoiser, GaussianDenoiser, GmmDenoiser, WaveletDenoiser};
use crate::error::{ImmapError, Result};
use crate::solver::ImmapConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "name", rename_all = "kebab-case")]
pub enum PriorConfig {
    Gaussian {
        /// Constant complex mean (real part; imaginary part is zero).
        #[serde(default)]
        mean: f64,
        variance: f64,
    },
    Wavelet {
        lambda: f64,
        levels: usize,
    },
    Gmm {
        weights: Vec<f64>,
        /// Stacked real coordinates [re..., im...] per component.
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        // threshold-to-noise ratio; the loop re-thresholds every iteration,
        // so the effective shrinkage is much stronger than a one-shot
        // k-sigma rule at the same value
        Self::Wavelet {
            lambda: 0.5,
            levels: 3,
        }
    }
}

impl PriorConfig {
    pub fn build(&self, height: usize, width: usize) -> Result<Box<dyn Denoiser>> {
        match self {
            Self::Gaussian { mean, variance } => {
                let mut m = ComplexImage::zeros(height, width);
                for v in m.as_slice_mut() {
                    v.re = *mean;
                }
                Ok(Box::new(GaussianDenoiser::new(m, *variance)?))
            }
            Self::Wavelet { lambda, levels } => {
                let d = 1usize << *levels;
                if *levels == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
                    return Err(ImmapError::Config(format!(
                        "wavelet prior: {height}x{width} not divisible by 2^{levels}"
                    )));
                }
                Ok(Box::new(WaveletDenoiser::new(*lambda, *levels)?))
            }
            Self::Gmm {
                weights,
                means,
                variances,
            } => {
                let gmm = GmmDenoiser::new(weights.clone(), means.clone(), variances.clone())?;
                if gmm.dim != height * width {
                    return Err(ImmapError::Config(format!(
                        "gmm prior dimension {} vs image {}x{}",
                        gmm.dim, height, width
                    )));
                }
                Ok(Box::new(gmm))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[derive(Default)]
pub enum NormalizationMode {
    /// Scale k-space so the zero-filled image has 99th-percentile magnitude 1.
    #[default]
    Percentile99,
    None,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub normalization: NormalizationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub solver: ImmapConfig,
    pub prior: PriorConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| ImmapError::Config(format!("config: {e}")))?;
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    /// Resolved config with every default materialized, for exact replays.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

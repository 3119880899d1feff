//! Frozen VGG19-style feature extractor for the edge and semantic
//! reconstruction terms.
//!
//! Pretrained weights come from a safetensors archive using torchvision's
//! `features.{index}.weight|bias` names. For offline use, a reduced-width
//! network with fixed random weights has the same topology.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, PadMode, max_pool2};

/// Convolutions per stage and stage widths of VGG19.
pub const VGG19_STAGES: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Activation after convolution `conv` of stage `stage` (both 1-based),
/// written `relu{stage}_{conv}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tap {
    pub stage: usize,
    pub conv: usize,
}

impl Tap {
    pub const LOW: Tap = Tap { stage: 1, conv: 2 };
    pub const HIGH: Tap = Tap { stage: 4, conv: 2 };

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("feature tap `{s}` is not of the form reluS_K"));
        let (stage, conv) = s.strip_prefix("relu").and_then(|r| r.split_once('_')).ok_or_else(bad)?;
        let tap = Tap {
            stage: stage.parse().map_err(|_| bad())?,
            conv: conv.parse().map_err(|_| bad())?,
        };
        match VGG19_STAGES.get(tap.stage.wrapping_sub(1)) {
            Some(&(n, _)) if (1..=n).contains(&tap.conv) => Ok(tap),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "relu{}_{}", self.stage, self.conv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Pretrained VGG19 safetensors archive; `None` selects the reduced
    /// random network.
    pub weights: Option<std::path::PathBuf>,
    pub low_tap: String,
    pub high_tap: String,
    /// Width divisor of the reduced network.
    pub reduced_divisor: usize,
    pub reduced_seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            weights: None,
            low_tap: Tap::LOW.to_string(),
            high_tap: Tap::HIGH.to_string(),
            reduced_divisor: 8,
            reduced_seed: 19,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    /// Convolutions up to and including the high tap, by stage.
    stages: Vec<Vec<Conv2d>>,
    low: Tap,
    high: Tap,
    scale: Tensor,
    shift: Tensor,
}

/// Torchvision `features` index of each convolution, by stage.
fn torchvision_indices() -> Vec<Vec<usize>> {
    let mut idx = 0;
    VGG19_STAGES
        .iter()
        .map(|&(n, _)| {
            let stage: Vec<usize> = (0..n).map(|k| idx + 2 * k).collect();
            idx += 2 * n + 1;
            stage
        })
        .collect()
}

impl PerceptualExtractor {
    pub fn from_config(cfg: &ExtractorConfig, dtype: DType, device: &Device) -> Result<Self> {
        let low = Tap::parse(&cfg.low_tap)?;
        let high = Tap::parse(&cfg.high_tap)?;
        match &cfg.weights {
            Some(path) => Self::vgg19(path, low, high, dtype, device),
            None => Self::reduced(cfg.reduced_divisor, cfg.reduced_seed, low, high, dtype, device),
        }
    }

    fn with_convs(stages: Vec<Vec<Conv2d>>, low: Tap, high: Tap, dtype: DType, device: &Device) -> Result<Self> {
        if low >= high {
            return Err(Error::Config(format!("low tap {low} must come before high tap {high}")));
        }
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 0.5 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| (0.5 - m) / s).collect();
        Ok(Self {
            stages,
            low,
            high,
            scale: Tensor::from_vec(scale, (1, 3, 1, 1), device)?.to_dtype(dtype)?,
            shift: Tensor::from_vec(shift, (1, 3, 1, 1), device)?.to_dtype(dtype)?,
        })
    }

    /// Load pretrained VGG19 convolutions from a safetensors archive.
    pub fn vgg19(path: &Path, low: Tap, high: Tap, dtype: DType, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors: HashMap<String, Tensor> = candle_core::safetensors::load_buffer(&bytes, device)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let fetch = |name: String| -> Result<Tensor> {
            tensors
                .get(&name)
                .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?
                .to_dtype(dtype)
                .map_err(Error::from)
        };
        let mut stages = Vec::new();
        let mut in_ch = 3;
        for (s, indices) in torchvision_indices().into_iter().enumerate().take(high.stage) {
            let mut convs = Vec::new();
            for idx in indices {
                let w = fetch(format!("features.{idx}.weight"))?;
                let b = fetch(format!("features.{idx}.bias"))?;
                let conv = Conv2d::from_tensors(w, b, 1, PadMode::Zero)?;
                let want = (in_ch, VGG19_STAGES[s].1);
                if (conv.in_channels(), conv.out_channels()) != want {
                    return Err(Error::format(
                        path,
                        format!("features.{idx} maps {} -> {} channels, expected {want:?}", conv.in_channels(), conv.out_channels()),
                    ));
                }
                in_ch = want.1;
                convs.push(conv);
            }
            stages.push(convs);
        }
        Self::with_convs(stages, low, high, dtype, device)
    }

    /// VGG19 topology with widths divided by `divisor` and fixed He-normal
    /// random weights.
    pub fn reduced(divisor: usize, seed: u64, low: Tap, high: Tap, dtype: DType, device: &Device) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::Config("reduced_divisor must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut in_ch = 3;
        for &(n, width) in VGG19_STAGES.iter().take(high.stage) {
            let out_ch = (width / divisor).max(1);
            let mut convs = Vec::new();
            for _ in 0..n {
                let std = (2.0 / (9 * in_ch) as f64).sqrt();
                let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let w: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| dist.sample(&mut rng)).collect();
                let w = Tensor::from_vec(w, (out_ch, in_ch, 3, 3), device)?.to_dtype(dtype)?;
                let b = Tensor::zeros(out_ch, dtype, device)?;
                convs.push(Conv2d::from_tensors(w, b, 1, PadMode::Zero)?);
                in_ch = out_ch;
            }
            stages.push(convs);
        }
        Self::with_convs(stages, low, high, dtype, device)
    }

    pub fn taps(&self) -> (Tap, Tap) {
        (self.low, self.high)
    }

    /// Map [-1, 1] slabs to the extractor's expected input statistics.
    fn remap(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?)
    }

    /// `(low-tap, high-tap)` activations of `x`.
    pub fn features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = self.remap(x)?;
        let mut low = None;
        for (s, convs) in self.stages.iter().enumerate() {
            if s > 0 {
                h = max_pool2(&h)?;
            }
            for (k, conv) in convs.iter().enumerate() {
                h = conv.forward(&h)?.relu()?;
                let here = Tap { stage: s + 1, conv: k + 1 };
                if here == self.low {
                    low = Some(h.clone());
                }
                if here == self.high {
                    let low = low.ok_or_else(|| Error::Config("low tap was never reached".into()))?;
                    return Ok((low, h));
                }
            }
        }
        Err(Error::Config(format!("high tap {} is past the loaded layers", self.high)))
    }
}

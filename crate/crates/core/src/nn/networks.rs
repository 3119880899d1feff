//! Content/artifact encoders, the two-branch decoder and the PatchGAN
//! discriminator.

use candle_core::{DType, Tensor};

use super::layers::{BlockSpec, Conv2d, InstanceNorm, Layer, PadMode, ResBlock, avg_pool2, check_input, leaky_relu, upsample2};
use super::model::NetworkConfig;
use super::params::Init;
use crate::error::{Error, Result};

/// Residual blocks with instance normalization; blocks before the last
/// halve the grid and double the width.
#[derive(Debug, Clone)]
pub struct ContentEncoder {
    blocks: Vec<ResBlock>,
    dtype: DType,
}

impl ContentEncoder {
    pub fn new(init: &mut Init, cfg: &NetworkConfig, dtype: DType) -> Result<Self> {
        let n = cfg.content_blocks;
        let mut blocks = Vec::with_capacity(n);
        let mut in_ch = 3;
        for i in 0..n {
            let out_ch = cfg.base_filters << i.min(n - 2);
            blocks.push(ResBlock::new(
                &mut init.pp(format!("block{}", i + 1)),
                BlockSpec {
                    in_channels: in_ch,
                    out_channels: out_ch,
                    kernel: 4,
                    stride: if i + 1 < n { 2 } else { 1 },
                    pad: PadMode::Reflect,
                    norm: true,
                    slope: cfg.leaky_slope,
                    eps: cfg.instance_norm_eps,
                },
            )?);
            in_ch = out_ch;
        }
        Ok(Self { blocks, dtype })
    }

    /// Feature pyramid: one map per block; the last is the content code.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        check_input(x, self.dtype, 1 << (self.blocks.len() - 1))?;
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Normalized pre-activation of the first block.
    pub fn first_block_normalized(&self, x: &Tensor) -> Result<Tensor> {
        self.blocks[0].pre_activation(x)
    }

    pub fn describe(&self) -> Vec<Vec<Layer>> {
        self.blocks.iter().map(ResBlock::describe).collect()
    }
}

/// 2x2 average pool then residual blocks without normalization.
#[derive(Debug, Clone)]
pub struct ArtifactEncoder {
    blocks: Vec<ResBlock>,
    dtype: DType,
}

impl ArtifactEncoder {
    pub fn new(init: &mut Init, cfg: &NetworkConfig, dtype: DType) -> Result<Self> {
        let n = cfg.artifact_blocks;
        let mut blocks = Vec::with_capacity(n);
        let mut in_ch = 3;
        for i in 0..n {
            let out_ch = cfg.base_filters << i;
            blocks.push(ResBlock::new(
                &mut init.pp(format!("block{}", i + 1)),
                BlockSpec {
                    in_channels: in_ch,
                    out_channels: out_ch,
                    kernel: 4,
                    stride: if i + 1 < n { 2 } else { 1 },
                    pad: PadMode::Reflect,
                    norm: false,
                    slope: cfg.leaky_slope,
                    eps: cfg.instance_norm_eps,
                },
            )?);
            in_ch = out_ch;
        }
        Ok(Self { blocks, dtype })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.dtype, 1 << self.blocks.len())?;
        let mut h = avg_pool2(x)?;
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }

    pub fn describe(&self) -> Vec<Layer> {
        let mut layers = vec![Layer::AvgPool { size: 2 }];
        for b in &self.blocks {
            layers.extend(b.describe());
        }
        layers
    }
}

#[derive(Debug, Clone)]
struct Branch {
    blocks: Vec<ResBlock>,
}

impl Branch {
    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        for b in &self.blocks {
            h = b.forward(&upsample2(&h)?)?;
        }
        Ok(h)
    }

    fn describe(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        for b in &self.blocks {
            layers.push(Layer::Upsample { factor: 2 });
            layers.extend(b.describe());
        }
        layers
    }
}

/// Content and artifact branches each upsample their code back to a
/// 3-channel image; the two are concatenated and fused by a residual block
/// and a 1x1 convolution with tanh output.
#[derive(Debug, Clone)]
pub struct Decoder {
    content: Branch,
    artifact: Branch,
    fuse: ResBlock,
    out: Conv2d,
    code_channels: usize,
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &NetworkConfig) -> Result<Self> {
        let levels = cfg.content_blocks - 1;
        let code_channels = cfg.code_channels();
        let spec = |in_channels, out_channels| BlockSpec {
            in_channels,
            out_channels,
            kernel: cfg.decoder_kernel,
            stride: 1,
            pad: PadMode::Reflect,
            norm: false,
            slope: cfg.leaky_slope,
            eps: cfg.instance_norm_eps,
        };
        let mut branch = |name: &str| -> Result<Branch> {
            let mut blocks = Vec::with_capacity(levels);
            let mut ch = code_channels;
            for j in 1..=levels {
                let out = if j == levels { 3 } else { code_channels >> j };
                blocks.push(ResBlock::new(&mut init.pp(name).pp(format!("block{j}")), spec(ch, out))?);
                ch = out;
            }
            Ok(Branch { blocks })
        };
        let content = branch("content")?;
        let artifact = branch("artifact")?;
        let fuse = ResBlock::new(&mut init.pp("fuse"), spec(6, cfg.base_filters))?;
        let out = Conv2d::new(&mut init.pp("out"), cfg.base_filters, 3, 1, 1, PadMode::Reflect)?;
        Ok(Self {
            content,
            artifact,
            fuse,
            out,
            code_channels,
        })
    }

    pub fn forward(&self, content: &Tensor, artifact: &Tensor) -> Result<Tensor> {
        if content.dims() != artifact.dims() {
            return Err(Error::Shape(format!(
                "content code {:?} and artifact code {:?} are not aligned",
                content.dims(),
                artifact.dims()
            )));
        }
        if content.dim(1)? != self.code_channels {
            return Err(Error::Shape(format!(
                "decoder expects {}-channel codes, got {}",
                self.code_channels,
                content.dim(1)?
            )));
        }
        let c = self.content.forward(content)?;
        let a = self.artifact.forward(artifact)?;
        let fused = self.fuse.forward(&Tensor::cat(&[&c, &a], 1)?)?;
        Ok(self.out.forward(&fused)?.tanh()?)
    }

    pub fn describe(&self) -> Vec<Layer> {
        let mut layers = self.content.describe();
        layers.extend(self.artifact.describe());
        layers.push(Layer::Concat);
        layers.extend(self.fuse.describe());
        layers.push(self.out.describe());
        layers.push(Layer::Tanh);
        layers
    }
}

/// PatchGAN: stride-2 4x4 convolutions with leaky ReLU (instance norm
/// after all but the first), then a 3x3 projection to one score channel.
#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    norms: Vec<Option<InstanceNorm>>,
    head: Conv2d,
    slope: f64,
    dtype: DType,
}

impl Discriminator {
    pub fn new(init: &mut Init, cfg: &NetworkConfig, dtype: DType) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_ch = 3;
        for (i, &f) in cfg.discriminator_filters.iter().enumerate() {
            let mut layer = init.pp(format!("layer{}", i + 1));
            convs.push(Conv2d::new(&mut layer.pp("conv"), in_ch, f, 4, 2, PadMode::Zero)?);
            norms.push(if i > 0 {
                Some(InstanceNorm::new(&mut layer.pp("norm"), f, cfg.instance_norm_eps)?)
            } else {
                None
            });
            in_ch = f;
        }
        let head = Conv2d::new(&mut init.pp("head"), in_ch, 1, 3, 1, PadMode::Zero)?;
        Ok(Self {
            convs,
            norms,
            head,
            slope: cfg.leaky_slope,
            dtype,
        })
    }

    /// Score map, shape (batch, 1, rows / 2^k, cols / 2^k).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.dtype, 1 << self.convs.len())?;
        let mut h = x.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(&h)?;
            if let Some(n) = norm {
                h = n.forward(&h)?;
            }
            h = leaky_relu(&h, self.slope)?;
        }
        self.head.forward(&h)
    }

    /// Copy whose parameters receive no gradients.
    pub fn frozen(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv2d::frozen).collect(),
            norms: self.norms.iter().map(|n| n.as_ref().map(InstanceNorm::frozen)).collect(),
            head: self.head.frozen(),
            ..self.clone()
        }
    }

    pub fn describe(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            layers.push(conv.describe());
            if let Some(n) = norm {
                layers.push(n.describe());
            }
            layers.push(Layer::LeakyRelu { slope: self.slope });
        }
        layers.push(self.head.describe());
        layers
    }
}

//! Building blocks: padded convolution, instance normalization, leaky ReLU,
//! residual blocks, pooling and nearest-neighbour upsampling. All tensors are
//! laid out (batch, channels, rows, cols).

use candle_core::{DType, Tensor};
use serde::Serialize;

use super::im2col::{Im2Col, Patches};
use super::params::Init;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Reflect,
    Zero,
}

/// One node of a network's layer graph, for structural inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Layer {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: PadMode,
    },
    InstanceNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    AvgPool {
        size: usize,
    },
    Upsample {
        factor: usize,
    },
    /// Residual addition; `projected` when the skip path is a 1x1 conv.
    Skip {
        projected: bool,
    },
    Concat,
    Tanh,
}

impl Layer {
    pub fn is_normalization(&self) -> bool {
        matches!(self, Layer::InstanceNorm { .. })
    }
}

/// Leading/trailing padding giving `ceil(size / stride)` outputs.
pub fn same_padding(size: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(size);
    (total / 2, total - total / 2)
}

/// Source index for position `i` (may be negative or past the end) under
/// mirror reflection without edge repeat.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn reflect_axis(x: &Tensor, dim: usize, before: usize, after: usize) -> Result<Tensor> {
    if before == 0 && after == 0 {
        return Ok(x.clone());
    }
    let n = x.dim(dim)?;
    let idx: Vec<u32> = (-(before as isize)..(n + after) as isize)
        .map(|i| reflect_index(i, n) as u32)
        .collect();
    let len = idx.len();
    let idx = Tensor::from_vec(idx, len, x.device())?;
    Ok(x.index_select(&idx, dim)?)
}

/// Pad rows and cols: `(top, bottom, left, right)`.
pub fn pad2d(x: &Tensor, pad: (usize, usize, usize, usize), mode: PadMode) -> Result<Tensor> {
    let (top, bottom, left, right) = pad;
    match mode {
        PadMode::Reflect => reflect_axis(&reflect_axis(x, 2, top, bottom)?, 3, left, right),
        PadMode::Zero => Ok(x.pad_with_zeros(2, top, bottom)?.pad_with_zeros(3, left, right)?),
    }
}

/// Source offsets into a flattened `h x w` map for every kernel tap
/// (outer) and output position (inner); `None` reads zero padding.
fn patch_indices(h: usize, w: usize, kernel: usize, stride: usize, pad: PadMode) -> (Vec<Option<usize>>, usize, usize) {
    let (top, _) = same_padding(h, kernel, stride);
    let (left, _) = same_padding(w, kernel, stride);
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut idx = Vec::with_capacity(kernel * kernel * ho * wo);
    for ki in 0..kernel {
        for kj in 0..kernel {
            for oi in 0..ho {
                let r = (oi * stride + ki) as isize - top as isize;
                for oj in 0..wo {
                    let q = (oj * stride + kj) as isize - left as isize;
                    let inside = (0..h as isize).contains(&r) && (0..w as isize).contains(&q);
                    idx.push(match pad {
                        PadMode::Reflect => Some(reflect_index(r, h) * w + reflect_index(q, w)),
                        PadMode::Zero if inside => Some(r as usize * w + q as usize),
                        PadMode::Zero => None,
                    });
                }
            }
        }
    }
    (idx, ho, wo)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: PadMode,
}

impl Conv2d {
    pub fn new(
        init: &mut Init,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: PadMode,
    ) -> Result<Self> {
        Ok(Self {
            weight: init.normal("weight", &[out_channels, in_channels, kernel, kernel])?,
            bias: init.constant("bias", &[out_channels], 0.0)?,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        })
    }

    /// Wrap fixed tensors (e.g. pretrained weights); shapes are validated.
    pub fn from_tensors(weight: Tensor, bias: Tensor, stride: usize, pad: PadMode) -> Result<Self> {
        let (out_channels, in_channels, kh, kw) = weight.dims4()?;
        if kh != kw || bias.dims() != [out_channels] {
            return Err(Error::Shape(format!(
                "conv weight {:?} / bias {:?} are inconsistent",
                weight.dims(),
                bias.dims()
            )));
        }
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel: kh,
            stride,
            pad,
        })
    }

    /// Same-padded convolution as patch extraction (padding folded in)
    /// followed by a matrix product.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let (idx, ho, wo) = patch_indices(h, w, self.kernel, self.stride, self.pad);
        let k2 = self.kernel * self.kernel;
        let patches = Patches::new(n, c, h * w, k2, ho * wo, idx);
        let cols = x.contiguous()?.apply_op1(Im2Col(patches))?;
        let y = self.weight.reshape((self.out_channels, c * k2))?.matmul(&cols)?;
        let y = if n == 1 {
            y.reshape((1, self.out_channels, ho, wo))?
        } else {
            y.reshape((self.out_channels, n, ho, wo))?.transpose(0, 1)?.contiguous()?
        };
        Ok(y.broadcast_add(&self.bias.reshape((1, self.out_channels, 1, 1))?)?)
    }

    /// Same layer with parameters cut off from gradient tracking.
    pub fn frozen(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            ..self.clone()
        }
    }

    pub fn describe(&self) -> Layer {
        Layer::Conv {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    gamma: Tensor,
    beta: Tensor,
    channels: usize,
    eps: f64,
}

impl InstanceNorm {
    pub fn new(init: &mut Init, channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[channels], 1.0)?,
            beta: init.constant("beta", &[channels], 0.0)?,
            channels,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let flat = x.reshape((n, c, h * w))?;
        let centered = flat.broadcast_sub(&flat.mean_keepdim(2)?)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape((n, c, h, w))?;
        let shape = (1, self.channels, 1, 1);
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }

    pub fn frozen(&self) -> Self {
        Self {
            gamma: self.gamma.detach(),
            beta: self.beta.detach(),
            ..self.clone()
        }
    }

    pub fn describe(&self) -> Layer {
        Layer::InstanceNorm { channels: self.channels }
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    Ok(x.avg_pool2d(2)?)
}

/// 2x2 max pool with floor semantics on odd sizes. Built from a reshape and
/// two max reductions so the gradient routes to the winning element.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    if h2 == 0 || w2 == 0 {
        return Err(Error::Shape(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    let x = x.narrow(2, 0, 2 * h2)?.narrow(3, 0, 2 * w2)?.contiguous()?;
    Ok(x.reshape((n, c, h2, 2, w2, 2))?.max(5)?.max(3)?)
}

/// Nearest-neighbour x2 upsampling by broadcasting, so gradients sum over
/// each 2x2 block.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// `conv -> [instance norm] -> leaky ReLU`, plus a skip path that is the
/// identity or, when the shape changes, a strided 1x1 convolution.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv: Conv2d,
    norm: Option<InstanceNorm>,
    skip: Option<Conv2d>,
    slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: PadMode,
    pub norm: bool,
    pub slope: f64,
    pub eps: f64,
}

impl ResBlock {
    pub fn new(init: &mut Init, spec: BlockSpec) -> Result<Self> {
        let conv = Conv2d::new(
            &mut init.pp("conv"),
            spec.in_channels,
            spec.out_channels,
            spec.kernel,
            spec.stride,
            spec.pad,
        )?;
        let norm = if spec.norm {
            Some(InstanceNorm::new(&mut init.pp("norm"), spec.out_channels, spec.eps)?)
        } else {
            None
        };
        let skip = if spec.in_channels != spec.out_channels || spec.stride != 1 {
            Some(Conv2d::new(
                &mut init.pp("skip"),
                spec.in_channels,
                spec.out_channels,
                1,
                spec.stride,
                spec.pad,
            )?)
        } else {
            None
        };
        Ok(Self {
            conv,
            norm,
            skip,
            slope: spec.slope,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.pre_activation(x)?;
        let y = leaky_relu(&y, self.slope)?;
        let shortcut = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok((y + shortcut)?)
    }

    /// Output of the convolution and (when present) the normalization,
    /// before the activation.
    pub fn pre_activation(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        match &self.norm {
            Some(n) => n.forward(&y),
            None => Ok(y),
        }
    }

    pub fn describe(&self) -> Vec<Layer> {
        let mut layers = vec![self.conv.describe()];
        if let Some(n) = &self.norm {
            layers.push(n.describe());
        }
        layers.push(Layer::LeakyRelu { slope: self.slope });
        if let Some(p) = &self.skip {
            layers.push(p.describe());
        }
        layers.push(Layer::Skip {
            projected: self.skip.is_some(),
        });
        layers
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

/// Element dtype check shared by the network entry points.
pub(crate) fn check_input(x: &Tensor, dtype: DType, divisor: usize) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 slice channels, got {c}")));
    }
    if h % divisor != 0 || w % divisor != 0 {
        return Err(Error::Shape(format!("spatial dims {h}x{w} must be divisible by {divisor}")));
    }
    if x.dtype() != dtype {
        return Err(Error::InvalidArgument(format!(
            "input dtype {:?} differs from parameter dtype {dtype:?}",
            x.dtype()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::seeded;
    use candle_core::{Device, Var};

    fn ramp(shape: (usize, usize, usize, usize)) -> Tensor {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let data: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.4).collect();
        Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn same_padding_cases() {
        assert_eq!(same_padding(64, 4, 2), (1, 1));
        assert_eq!(same_padding(64, 4, 1), (1, 2));
        assert_eq!(same_padding(64, 3, 1), (1, 1));
        assert_eq!(same_padding(64, 1, 2), (0, 0));
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn reflect_pad_values() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0], (1, 1, 1, 3), &Device::Cpu).unwrap();
        let y = pad2d(&x, (0, 0, 2, 1), PadMode::Reflect).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), [3.0, 2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn gathered_conv_matches_library_conv() {
        let (mut store, mut rng) = seeded(4, DType::F64, &Device::Cpu);
        let mut init = Init::new(&mut store, &mut rng, 0.3);
        let x = ramp((2, 3, 9, 12));
        for (i, (k, stride, pad)) in [(4, 1, PadMode::Reflect), (4, 2, PadMode::Zero), (3, 1, PadMode::Zero), (1, 2, PadMode::Zero), (4, 2, PadMode::Reflect)]
            .into_iter()
            .enumerate()
        {
            let conv = Conv2d::new(&mut init.pp(i), 3, 5, k, stride, pad).unwrap();
            let (top, bottom) = same_padding(9, k, stride);
            let (left, right) = same_padding(12, k, stride);
            let want = pad2d(&x, (top, bottom, left, right), pad)
                .unwrap()
                .conv2d(&conv.weight, 0, stride, 1, 1)
                .unwrap()
                .broadcast_add(&conv.bias.reshape((1, 5, 1, 1)).unwrap())
                .unwrap();
            let got = conv.forward(&x).unwrap();
            assert_eq!(got.dims(), want.dims());
            let d = (got - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(d < 1e-12, "{k} {stride} {pad:?}: {d}");
        }
    }

    #[test]
    fn conv_keeps_or_halves_grid() {
        let (mut store, mut rng) = seeded(1, DType::F64, &Device::Cpu);
        let mut init = Init::new(&mut store, &mut rng, 0.1);
        let x = ramp((2, 3, 8, 12));
        for (stride, pad, want) in [(1, PadMode::Reflect, (8, 12)), (2, PadMode::Zero, (4, 6))] {
            let conv = Conv2d::new(&mut init.pp(stride), 3, 5, 4, stride, pad).unwrap();
            let (n, c, h, w) = conv.forward(&x).unwrap().dims4().unwrap();
            assert_eq!((n, c, (h, w)), (2, 5, want));
        }
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let (mut store, mut rng) = seeded(1, DType::F64, &Device::Cpu);
        let norm = InstanceNorm::new(&mut Init::new(&mut store, &mut rng, 0.02), 2, 1e-9).unwrap();
        let y = norm.forward(&(ramp((3, 2, 5, 4)) * 7.0).unwrap()).unwrap();
        let flat = y.reshape((6, 20)).unwrap();
        let mean: Vec<f64> = flat.mean(1).unwrap().to_vec1().unwrap();
        let var: Vec<f64> = flat.sqr().unwrap().mean(1).unwrap().to_vec1().unwrap();
        for (m, v) in mean.iter().zip(&var) {
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6, "{m} {v}");
        }
    }

    #[test]
    fn max_pool_gradient_hits_the_maximum() {
        let x = Var::from_tensor(&Tensor::new(&[[[[1.0f64, 4.0, 0.5], [2.0, 3.0, 9.0], [7.0, 0.0, 1.0]]]], &Device::Cpu).unwrap()).unwrap();
        let y = max_pool2(x.as_tensor()).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![4.0]);
        let g = y.sum_all().unwrap().backward().unwrap();
        let g: Vec<f64> = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(g, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_repeats_blocks() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let y: Vec<f64> = upsample2(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(
            y,
            [1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn leaky_relu_slopes() {
        let x = Tensor::from_vec(vec![-2.0f64, 0.0, 3.0], 3, &Device::Cpu).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).unwrap().to_vec1::<f64>().unwrap(), [-0.4, 0.0, 3.0]);
    }

    #[test]
    fn block_projects_only_when_shape_changes() {
        let (mut store, mut rng) = seeded(1, DType::F64, &Device::Cpu);
        let mut init = Init::new(&mut store, &mut rng, 0.02);
        let spec = BlockSpec {
            in_channels: 4,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            pad: PadMode::Reflect,
            norm: false,
            slope: 0.2,
            eps: 1e-9,
        };
        let same = ResBlock::new(&mut init.pp("a"), spec).unwrap();
        assert!(same.describe().contains(&Layer::Skip { projected: false }));
        let wider = ResBlock::new(&mut init.pp("b"), BlockSpec { out_channels: 8, ..spec }).unwrap();
        assert!(wider.describe().contains(&Layer::Skip { projected: true }));
    }
}

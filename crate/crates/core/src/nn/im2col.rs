//! Patch extraction for convolution as a differentiable custom op.
//!
//! `(n, c, h, w)` maps to a `(c * k * k, n * L)` column matrix, `L` being
//! the number of output positions. Padding is folded into a precomputed
//! source table, so reflect and zero padding cost nothing extra.

use std::ops::AddAssign;
use std::sync::Arc;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

/// Marks a tap that reads zero padding.
const OUTSIDE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub(crate) struct Patches {
    pub n: usize,
    pub c: usize,
    pub hw: usize,
    /// Kernel taps (`k * k`).
    pub taps: usize,
    /// Output positions.
    pub positions: usize,
    /// `taps * positions` source offsets into one `h * w` plane.
    pub source: Arc<Vec<u32>>,
}

impl Patches {
    pub fn new(n: usize, c: usize, hw: usize, taps: usize, positions: usize, source: Vec<Option<usize>>) -> Self {
        let source = source.into_iter().map(|s| s.map_or(OUTSIDE, |v| v as u32)).collect();
        Self {
            n,
            c,
            hw,
            taps,
            positions,
            source: Arc::new(source),
        }
    }

    fn gather<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let (l, k) = (self.positions, self.taps);
        let row = self.n * l;
        let mut out = vec![T::default(); self.c * k * row];
        for ci in 0..self.c {
            for tap in 0..k {
                let src = &self.source[tap * l..(tap + 1) * l];
                let dst_row = &mut out[(ci * k + tap) * row..(ci * k + tap + 1) * row];
                for b in 0..self.n {
                    let plane = &x[(b * self.c + ci) * self.hw..(b * self.c + ci + 1) * self.hw];
                    for (d, &s) in dst_row[b * l..(b + 1) * l].iter_mut().zip(src) {
                        if s != OUTSIDE {
                            *d = plane[s as usize];
                        }
                    }
                }
            }
        }
        out
    }

    fn scatter<T: Copy + Default + AddAssign>(&self, cols: &[T]) -> Vec<T> {
        let (l, k) = (self.positions, self.taps);
        let row = self.n * l;
        let mut out = vec![T::default(); self.n * self.c * self.hw];
        for ci in 0..self.c {
            for tap in 0..k {
                let src = &self.source[tap * l..(tap + 1) * l];
                let g_row = &cols[(ci * k + tap) * row..(ci * k + tap + 1) * row];
                for b in 0..self.n {
                    let plane = &mut out[(b * self.c + ci) * self.hw..(b * self.c + ci + 1) * self.hw];
                    for (&g, &s) in g_row[b * l..(b + 1) * l].iter().zip(src) {
                        if s != OUTSIDE {
                            plane[s as usize] += g;
                        }
                    }
                }
            }
        }
        out
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("patch op needs a contiguous input"),
    }
}

/// Forward gather.
pub(crate) struct Im2Col(pub Patches);

/// Adjoint of [`Im2Col`]: scatter-add columns back onto the input grid.
struct Col2Im(Patches);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let p = &self.0;
        let shape = Shape::from((p.c * p.taps, p.n * p.positions));
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(p.gather(contiguous(x, layout)?)),
            CpuStorage::F64(x) => CpuStorage::F64(p.gather(contiguous(x, layout)?)),
            other => candle_core::bail!("im2col does not support {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad_res.contiguous()?.apply_op1(Col2Im(self.0.clone()))?;
        Ok(Some(g.reshape(arg.shape())?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let p = &self.0;
        let shape = Shape::from((p.n, p.c, p.hw));
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(p.scatter(contiguous(x, layout)?)),
            CpuStorage::F64(x) => CpuStorage::F64(p.scatter(contiguous(x, layout)?)),
            other => candle_core::bail!("col2im does not support {:?}", other.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1(Im2Col(self.0.clone()))?))
    }
}

//! Conversions between (rows, cols, channels) slab arrays and
//! (batch, channels, rows, cols) tensors.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};

pub fn slabs_to_tensor(slabs: &[ArrayView3<f32>], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = slabs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no slabs to batch".into()))?
        .dim();
    let mut data = Vec::with_capacity(slabs.len() * first.0 * first.1 * first.2);
    for s in slabs {
        if s.dim() != first {
            return Err(Error::Shape(format!("slab {:?} in a batch of {first:?}", s.dim())));
        }
        data.extend(s.view().permuted_axes([2, 0, 1]).iter().copied());
    }
    let (rows, cols, ch) = first;
    Ok(Tensor::from_vec(data, (slabs.len(), ch, rows, cols), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_slabs(t: &Tensor) -> Result<Vec<Array3<f32>>> {
    let (n, ch, rows, cols) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let per = ch * rows * cols;
    (0..n)
        .map(|i| {
            let chw = Array3::from_shape_vec((ch, rows, cols), flat[i * per..(i + 1) * per].to_vec())
                .map_err(|e| Error::Shape(e.to_string()))?;
            Ok(chw.permuted_axes([1, 2, 0]).as_standard_layout().into_owned())
        })
        .collect()
}

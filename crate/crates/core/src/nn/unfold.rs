//! im2col for dense 2-D convolution.
//!
//! `candle_core`'s conv2d backward derives the transposed-conv output padding
//! from the height only, so input gradients come out with the wrong width
//! when height and width differ in parity. Convolving as unfold + matmul
//! sidesteps that and keeps the gradient path explicit.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn input_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels, self.in_h, self.in_w))
    }

    fn cols_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels * self.k * self.k, self.out_h * self.out_w))
    }

    /// Calls `f(input_offset, cols_offset)` for every in-bounds tap.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let rows = self.channels * self.k * self.k;
        let cols = self.out_h * self.out_w;
        for b in 0..self.batch {
            for c in 0..self.channels {
                let in_base = (b * self.channels + c) * self.in_h * self.in_w;
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let row = (c * self.k + ky) * self.k + kx;
                        let col_base = (b * rows + row) * cols;
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.in_h as isize {
                                continue;
                            }
                            for ox in 0..self.out_w {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.in_w as isize {
                                    continue;
                                }
                                f(in_base + iy as usize * self.in_w + ix as usize, col_base + oy * self.out_w + ox);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("unfold requires a contiguous input"),
    }
}

fn unfold<T: WithDType>(g: &Geometry, input: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.cols_shape().elem_count()];
    g.for_each(|i, o| out[o] = input[i]);
    out
}

fn fold<T: WithDType>(g: &Geometry, cols: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.input_shape().elem_count()];
    g.for_each(|i, o| out[i] += cols[o]);
    out
}

struct Unfold(Geometry);
struct Fold(Geometry);

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(unfold(&self.0, contiguous(v, l)?)),
            CpuStorage::F64(v) => CpuStorage::F64(unfold(&self.0, contiguous(v, l)?)),
            _ => candle_core::bail!("unfold supports f32/f64 only"),
        };
        Ok((out, self.0.cols_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Fold(self.0))?))
    }
}

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(fold(&self.0, contiguous(v, l)?)),
            CpuStorage::F64(v) => CpuStorage::F64(fold(&self.0, contiguous(v, l)?)),
            _ => candle_core::bail!("fold supports f32/f64 only"),
        };
        Ok((out, self.0.input_shape()))
    }
}

/// Dense convolution of `(B, Cin, H, W)` with a `(Cout, Cin, k, k)` kernel.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (batch, channels, in_h, in_w) = input.dims4()?;
    let (out_ch, w_in, k, k2) = weight.dims4()?;
    if w_in != channels || k != k2 || stride == 0 || in_h + 2 * pad < k || in_w + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv kernel {:?} with stride {stride}, padding {pad} does not fit input {:?}",
            weight.dims(),
            input.dims()
        )));
    }
    let geom = Geometry {
        batch,
        channels,
        in_h,
        in_w,
        k,
        stride,
        pad,
        out_h: (in_h + 2 * pad - k) / stride + 1,
        out_w: (in_w + 2 * pad - k) / stride + 1,
    };
    let cols = input.contiguous()?.apply_op1(Unfold(geom))?;
    let w = weight.reshape((out_ch, channels * k * k))?;
    Ok(w
        .broadcast_matmul(&cols)?
        .reshape((batch, out_ch, geom.out_h, geom.out_w))?)
}

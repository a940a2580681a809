//! Depthwise 2-D convolution as a custom op with an explicit backward pass.
//!
//! `candle` lowers grouped convolutions to one convolution per group, which is
//! slow for channel counts in the hundreds. Here each channel is convolved
//! with its own `kh x kw` kernel in a single pass.

use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    in_h: usize,
    in_w: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn input_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels, self.in_h, self.in_w))
    }

    fn output_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels, self.out_h, self.out_w))
    }

    fn kernel_shape(&self) -> Shape {
        Shape::from((self.channels, 1, self.k_h, self.k_w))
    }

    /// Calls `f(input_offset, kernel_offset, output_offset)` for every tap
    /// that lands inside the (unpadded) input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        let k_plane = self.k_h * self.k_w;
        for b in 0..self.batch {
            for c in 0..self.channels {
                let in_base = (b * self.channels + c) * in_plane;
                let out_base = (b * self.channels + c) * out_plane;
                let k_base = c * k_plane;
                for oy in 0..self.out_h {
                    for ky in 0..self.k_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let in_row = in_base + iy as usize * self.in_w;
                        let out_row = out_base + oy * self.out_w;
                        for kx in 0..self.k_w {
                            let k_off = k_base + ky * self.k_w + kx;
                            for ox in 0..self.out_w {
                                let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                                if ix < 0 || ix >= self.in_w as isize {
                                    continue;
                                }
                                f(in_row + ix as usize, k_off, out_row + ox);
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
        None => candle_core::bail!("depthwise conv requires contiguous inputs"),
    }
}

macro_rules! dispatch {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, $f:ident, $geom:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                let out = $f($geom, contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F32(out)
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                let out = $f($geom, contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F64(out)
            }
            _ => candle_core::bail!("depthwise conv supports matching f32/f64 inputs only"),
        }
    };
}

fn forward<T: WithDType>(g: &Geometry, input: &[T], kernel: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.output_shape().elem_count()];
    g.for_each_tap(|i, k, o| out[o] += input[i] * kernel[k]);
    out
}

fn grad_input<T: WithDType>(g: &Geometry, grad_out: &[T], kernel: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.input_shape().elem_count()];
    g.for_each_tap(|i, k, o| out[i] += grad_out[o] * kernel[k]);
    out
}

fn grad_kernel<T: WithDType>(g: &Geometry, input: &[T], grad_out: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.kernel_shape().elem_count()];
    g.for_each_tap(|i, k, o| out[k] += grad_out[o] * input[i]);
    out
}

struct DepthwiseForward(Geometry);
struct DepthwiseGradInput(Geometry);
struct DepthwiseGradKernel(Geometry);

impl CustomOp2 for DepthwiseForward {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = dispatch!(s1, l1, s2, l2, forward, &self.0);
        Ok((out, self.0.output_shape()))
    }

    fn bwd(
        &self,
        input: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad_res = grad_res.contiguous()?;
        let gi = grad_res.apply_op2_no_bwd(&kernel.contiguous()?, &DepthwiseGradInput(self.0))?;
        let gk = input
            .contiguous()?
            .apply_op2_no_bwd(&grad_res, &DepthwiseGradKernel(self.0))?;
        Ok((Some(gi), Some(gk)))
    }
}

impl CustomOp2 for DepthwiseGradInput {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-grad-input"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = dispatch!(s1, l1, s2, l2, grad_input, &self.0);
        Ok((out, self.0.input_shape()))
    }
}

impl CustomOp2 for DepthwiseGradKernel {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-grad-kernel"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = dispatch!(s1, l1, s2, l2, grad_kernel, &self.0);
        Ok((out, self.0.kernel_shape()))
    }
}

/// Depthwise convolution of `(B, C, H, W)` input with a `(C, 1, kh, kw)` kernel.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: (usize, usize),
) -> Result<Tensor> {
    let (batch, channels, in_h, in_w) = input.dims4()?;
    let (kc, one, k_h, k_w) = kernel.dims4()?;
    if kc != channels || one != 1 {
        return Err(crate::Error::Shape(format!(
            "depthwise kernel {:?} does not match input {:?}",
            kernel.dims(),
            input.dims()
        )));
    }
    let (pad_h, pad_w) = padding;
    if in_h + 2 * pad_h < k_h || in_w + 2 * pad_w < k_w || stride == 0 {
        return Err(crate::Error::Shape(format!(
            "depthwise kernel {k_h}x{k_w} does not fit input {in_h}x{in_w} with padding {padding:?}"
        )));
    }
    let geom = Geometry {
        batch,
        channels,
        in_h,
        in_w,
        k_h,
        k_w,
        stride,
        pad_h,
        pad_w,
        out_h: (in_h + 2 * pad_h - k_h) / stride + 1,
        out_w: (in_w + 2 * pad_w - k_w) / stride + 1,
    };
    Ok(input
        .contiguous()?
        .apply_op2(&kernel.contiguous()?, DepthwiseForward(geom))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn matches_grouped_conv2d() {
        for (stride, pad, h, w, k) in [(1, 1, 7, 9, 3), (2, 1, 8, 11, 3), (1, 0, 4, 6, 4), (2, 0, 5, 5, 5)] {
            let x = rand_tensor(&[2, 3, h, w], 1);
            let k = rand_tensor(&[3, 1, k, k], 2);
            let ours = depthwise_conv2d(&x, &k, stride, (pad, pad)).unwrap();
            let reference = x.conv2d(&k, pad, stride, 1, 3).unwrap();
            let diff = (ours - reference)
                .unwrap()
                .abs()
                .unwrap()
                .flatten_all()
                .unwrap()
                .max(0)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(diff < 1e-12, "stride {stride} pad {pad}: {diff}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x0 = rand_tensor(&[2, 3, 6, 7], 3);
        let k0 = rand_tensor(&[3, 1, 3, 3], 4);
        let weights = rand_tensor(&[2, 3, 3, 4], 5);
        let objective = |x: &Tensor, k: &Tensor| -> f64 {
            depthwise_conv2d(x, k, 2, (1, 1))
                .unwrap()
                .mul(&weights)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_scalar()
                .unwrap()
        };
        let xv = Var::from_tensor(&x0).unwrap();
        let kv = Var::from_tensor(&k0).unwrap();
        let loss = depthwise_conv2d(xv.as_tensor(), kv.as_tensor(), 2, (1, 1))
            .unwrap()
            .mul(&weights)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = loss.backward().unwrap();
        let gx: Vec<f64> = grads.get(&xv).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let gk: Vec<f64> = grads.get(&kv).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let h = 1e-6;
        let bump = |t: &Tensor, i: usize, d: f64| {
            let mut v: Vec<f64> = t.flatten_all().unwrap().to_vec1().unwrap();
            v[i] += d;
            Tensor::from_vec(v, t.dims(), &Device::Cpu).unwrap()
        };
        for i in (0..x0.elem_count()).step_by(7) {
            let fd = (objective(&bump(&x0, i, h), &k0) - objective(&bump(&x0, i, -h), &k0)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7, "input {i}: {fd} vs {}", gx[i]);
        }
        for i in 0..k0.elem_count() {
            let fd = (objective(&x0, &bump(&k0, i, h)) - objective(&x0, &bump(&k0, i, -h))) / (2.0 * h);
            assert!((fd - gk[i]).abs() < 1e-7, "kernel {i}: {fd} vs {}", gk[i]);
        }
    }

    #[test]
    fn f32_supported() {
        let x = rand_tensor(&[1, 2, 5, 5], 6).to_dtype(DType::F32).unwrap();
        let k = rand_tensor(&[2, 1, 3, 3], 7).to_dtype(DType::F32).unwrap();
        let y = depthwise_conv2d(&x, &k, 1, (1, 1)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 5, 5]);
        assert_eq!(y.dtype(), DType::F32);
    }
}

use candle_core::{DType, Tensor, Var, D};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Dense 2-D convolution without bias.
pub struct Conv2d {
    weight: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::FanIn(in_ch * kernel * kernel),
        )?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        super::unfold::conv2d(x, &self.weight, self.stride, self.padding)
    }
}

/// 1x1 convolution expressed as a channel matmul.
pub struct Pointwise {
    weight: Tensor,
}

impl Pointwise {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[out_ch, in_ch], Init::FanIn(in_ch))?;
        Ok(Self { weight })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let out = self.weight.dim(0)?;
        let y = self
            .weight
            .broadcast_matmul(&x.reshape((b, c, h * w))?)?
            .reshape((b, out, h, w))?;
        Ok(y)
    }
}

/// Batch normalization over the channel axis of `(B, C, H, W)` maps.
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.gamma"), &[channels], Init::Const(1.0))?,
            beta: store.param(&format!("{name}.beta"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// In training mode normalizes with batch statistics and updates the
    /// running estimates; otherwise uses the running estimates.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = (self.running_mean.as_tensor().affine(1.0 - m, 0.0)?
                + mean.detach().flatten_all()?.affine(m, 0.0)?)?;
            let new_var = (self.running_var.as_tensor().affine(1.0 - m, 0.0)?
                + var.detach().flatten_all()?.affine(m * unbiased, 0.0)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            )
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape)?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

/// Per-channel parametric ReLU.
pub struct PRelu {
    slope: Tensor,
}

impl PRelu {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            slope: store.param(&format!("{name}.slope"), &[channels], Init::Const(0.25))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        let pos = x.relu()?;
        let neg = (x - &pos)?;
        Ok((pos + neg.broadcast_mul(&self.slope.reshape((1, c, 1, 1))?)?)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    let pos = x.relu()?;
    let neg = (x - &pos)?;
    Ok((pos + neg.affine(slope, 0.0)?)?)
}

/// Normalizes `(B, C, T)` over `C` at every `(b, t)` and applies a per-channel
/// affine map.
pub fn layer_norm_channels(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.dim(1)?;
    let mean = x.mean_keepdim(1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed
        .broadcast_mul(&gain.reshape((1, c, 1))?)?
        .broadcast_add(&bias.reshape((1, c, 1))?)?)
}

/// Stride-1 1-D convolution of `(B, C_in, T)` with a `(C_out, C_in, K)` kernel
/// and symmetric zero padding `(K - 1) / 2`; output length equals `T` for odd `K`.
pub fn conv1d_same(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, c_in, t) = x.dims3()?;
    let (c_out, wc, k) = weight.dims3()?;
    if wc != c_in || k % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv1d kernel {:?} incompatible with input {:?}",
            weight.dims(),
            x.dims()
        )));
    }
    let pad = (k - 1) / 2;
    let padded = x.pad_with_zeros(2, pad, pad)?;
    let taps: Vec<Tensor> = (0..k)
        .map(|i| padded.narrow(2, i, t))
        .collect::<candle_core::Result<_>>()?;
    // (B, K*C_in, T) against (C_out, K*C_in)
    let stacked = Tensor::cat(&taps, 1)?;
    let w = weight.permute((0, 2, 1))?.reshape((c_out, k * c_in))?;
    let mut y = w.broadcast_matmul(&stacked)?;
    if let Some(bias) = bias {
        y = y.broadcast_add(&bias.reshape((1, c_out, 1))?)?;
    }
    debug_assert_eq!(y.dims(), &[b, c_out, t]);
    Ok(y)
}

/// Mean negative log-likelihood of integer `targets` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (_, classes) = logits.dims2()?;
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_probs = shifted.broadcast_sub(&lse)?;
    let targets = targets.to_dtype(DType::U32)?;
    if let Some(bad) = targets
        .to_vec1::<u32>()?
        .into_iter()
        .find(|t| *t as usize >= classes)
    {
        return Err(Error::InvalidInput(format!(
            "target class {bad} out of range for {classes} classes"
        )));
    }
    let picked = log_probs.gather(&targets.unsqueeze(1)?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn conv1d_same_matches_candle_conv1d() {
        let x = t(&(0..2 * 3 * 7).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(), &[2, 3, 7]);
        let w = t(&(0..4 * 3 * 3).map(|i| (i as f64 * 0.11).cos()).collect::<Vec<_>>(), &[4, 3, 3]);
        let bias = t(&[0.1, -0.2, 0.3, 0.0], &[4]);
        let ours = conv1d_same(&x, &w, Some(&bias)).unwrap();
        let reference = x
            .conv1d(&w, 1, 1, 1, 1)
            .unwrap()
            .broadcast_add(&bias.reshape((1, 4, 1)).unwrap())
            .unwrap();
        let d: f64 = (ours - reference)
            .unwrap()
            .abs()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn layer_norm_of_zero_is_bias() {
        let x = Tensor::zeros((1, 4, 3), DType::F64, &Device::Cpu).unwrap();
        let g = t(&[1.0; 4], &[4]);
        let b = t(&[0.0; 4], &[4]);
        let y = layer_norm_channels(&x, &g, &b, 1e-5).unwrap();
        assert!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn leaky_relu_values() {
        let y = leaky_relu(&t(&[-2.0, 0.0, 3.0], &[3]), 0.01).unwrap();
        assert_eq!(y.to_vec1::<f64>().unwrap(), vec![-0.02, 0.0, 3.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let logits = Tensor::zeros((2, 41), DType::F64, &Device::Cpu).unwrap();
        let targets = Tensor::new(&[3u32, 40], &Device::Cpu).unwrap();
        let l: f64 = cross_entropy(&logits, &targets).unwrap().to_scalar().unwrap();
        assert!((l - 41f64.ln()).abs() < 1e-12);
        let bad = Tensor::new(&[41u32, 0], &Device::Cpu).unwrap();
        assert!(cross_entropy(&logits, &bad).is_err());
    }

    #[test]
    fn pointwise_matches_conv2d() {
        let mut store = ParamStore::new(DType::F64, 3);
        let pw = Pointwise::new(&mut store, "pw", 3, 5).unwrap();
        let x = t(&(0..2 * 3 * 4 * 2).map(|i| i as f64 * 0.01).collect::<Vec<_>>(), &[2, 3, 4, 2]);
        let ours = pw.forward(&x).unwrap();
        let w = store.get("pw.weight").unwrap().as_tensor().reshape((5, 3, 1, 1)).unwrap();
        let reference = x.conv2d(&w, 0, 1, 1, 1).unwrap();
        let d: f64 = (ours - reference).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn batch_norm_train_normalizes_and_tracks_stats() {
        let mut store = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm::new(&mut store, "bn", 2).unwrap();
        let x = t(&[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0], &[2, 2, 2, 1]);
        let y = bn.forward(&x, true).unwrap();
        let mean = y.mean_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        let rm = store.get("bn.running_mean").unwrap().as_tensor().to_vec1::<f64>().unwrap();
        // channel 0 holds {1, 2, 10, 20}
        assert!((rm[0] - 0.1 * 8.25).abs() < 1e-12);
        let eval = bn.forward(&x, false).unwrap();
        assert_eq!(eval.dims(), x.dims());
    }
}

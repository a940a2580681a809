use candle_core::{DType, Tensor, D};

use super::margin::{HeadConfig, HeadKind, COS_CLAMP};
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};

/// Class weights plus either a bias (CEE) or the margin geometry (ArcFace).
pub struct ClassifierHead {
    cfg: HeadConfig,
    classes: usize,
    weight: Tensor,
    bias: Option<Tensor>,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: HeadConfig,
        classes: usize,
        dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if classes == 0 {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let weight = store.param(&format!("{prefix}.weight"), &[classes, dim], Init::FanIn(dim))?;
        let bias = match cfg.kind {
            HeadKind::Cee => Some(store.param(&format!("{prefix}.bias"), &[classes], Init::FanIn(dim))?),
            HeadKind::ArcFace => None,
        };
        Ok(Self {
            cfg,
            classes,
            weight,
            bias,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(B, D)` embeddings to `(B, C)` logits. With `targets` (training),
    /// ArcFace applies the margin to each row's true class; without, it
    /// returns the margin-free scaled cosines. CEE ignores `targets`.
    pub fn logits(&self, embeddings: &Tensor, targets: Option<&Tensor>) -> Result<Tensor> {
        match self.cfg.kind {
            HeadKind::Cee => {
                let y = embeddings.matmul(&self.weight.t()?)?;
                match &self.bias {
                    Some(b) => Ok(y.broadcast_add(&b.unsqueeze(0)?)?),
                    None => Ok(y),
                }
            }
            HeadKind::ArcFace => self.arcface(embeddings, targets),
        }
    }

    /// Cosine similarity between each embedding and each class weight.
    pub fn cosines(&self, embeddings: &Tensor) -> Result<Tensor> {
        let norms = embeddings.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
        let min_norm = norms
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if !(min_norm > 0.0) {
            return Err(Error::InvalidInput(
                "zero-norm embedding cannot be normalized for ArcFace".into(),
            ));
        }
        let e = embeddings.broadcast_div(&norms)?;
        let w_norm = self.weight.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
        let w = self.weight.broadcast_div(&w_norm)?;
        Ok(e.matmul(&w.t()?)?.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)?)
    }

    fn arcface(&self, embeddings: &Tensor, targets: Option<&Tensor>) -> Result<Tensor> {
        let (m, s) = (self.cfg.margin, self.cfg.scale);
        let cos = self.cosines(embeddings)?;
        let Some(targets) = targets else {
            return Ok(cos.affine(s, 0.0)?);
        };
        let (batch, classes) = cos.dims2()?;
        let targets = targets.to_dtype(DType::U32)?;
        let idx = targets.to_vec1::<u32>()?;
        if idx.len() != batch || idx.iter().any(|t| *t as usize >= classes) {
            return Err(Error::InvalidInput(format!(
                "targets {idx:?} do not match a batch of {batch} over {classes} classes"
            )));
        }
        let mut onehot = vec![0f64; batch * classes];
        for (row, t) in idx.iter().enumerate() {
            onehot[row * classes + *t as usize] = 1.0;
        }
        let onehot = Tensor::from_vec(onehot, (batch, classes), cos.device())?.to_dtype(cos.dtype())?;
        let cos_y = cos.gather(&targets.unsqueeze(1)?, 1)?;
        let sin_y = (cos_y.sqr()?.neg()? + 1.0)?.sqrt()?;
        let with_margin = (cos_y.affine(m.cos(), 0.0)? - sin_y.affine(m.sin(), 0.0)?)?;
        let fallback = cos_y.affine(1.0, -m * m.sin())?;
        let threshold = (std::f64::consts::PI - m).cos();
        let target = cos_y
            .gt(threshold)?
            .where_cond(&with_margin, &fallback)?;
        let delta = target.sub(&cos_y)?;
        let logits = cos.add(&onehot.broadcast_mul(&delta)?)?;
        Ok(logits.affine(s, 0.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{arcface_target_logit, classification_loss, softmax};
    use crate::nn::{cross_entropy, TensorData};
    use candle_core::Device;
    use std::collections::BTreeMap;

    fn head_with(kind: HeadKind, m: f64, s: f64, weight: Vec<f64>, classes: usize, dim: usize) -> (ParamStore, ClassifierHead) {
        let mut store = ParamStore::new(DType::F64, 0);
        let head = ClassifierHead::new(
            &mut store,
            "head",
            HeadConfig { kind, margin: m, scale: s },
            classes,
            dim,
        )
        .unwrap();
        let mut data: BTreeMap<String, TensorData> = store.export().unwrap();
        data.insert("head.weight".into(), TensorData { shape: vec![classes, dim], values: weight });
        if let Some(b) = data.get_mut("head.bias") {
            b.values = vec![0.0; classes];
        }
        store.import(&data).unwrap();
        (store, head)
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, v.len()), &Device::Cpu).unwrap()
    }

    #[test]
    fn aligned_target_logit_is_s_cos_m() {
        // the cosine clamp keeps theta >= acos(1 - 1e-7) ~ 4.5e-4 rad
        let want = 30.0 * ((1.0f64 - 1e-7).acos() + 0.7).cos();
        assert!((arcface_target_logit(1.0, 0.7, 30.0) - want).abs() < 1e-9);
        assert!((want - 30.0 * 0.7f64.cos()).abs() < 1e-2);
        assert!((30.0 * 0.7f64.cos() - 22.945).abs() < 1e-3);
        let (_, head) = head_with(HeadKind::ArcFace, 0.7, 30.0, vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let targets = Tensor::new(&[0u32], &Device::Cpu).unwrap();
        let l = head.logits(&row(&[2.0, 0.0]), Some(&targets)).unwrap().to_vec2::<f64>().unwrap();
        assert!((l[0][0] - want).abs() < 1e-9, "{}", l[0][0]);
        assert!(l[0][1].abs() < 1e-5);
    }

    #[test]
    fn zero_margin_unit_scale_is_normalized_softmax_ce() {
        let w = vec![0.3, -1.2, 0.5, 0.8, 0.1, 0.4, -0.7, 0.2, 0.9];
        let (_, head) = head_with(HeadKind::ArcFace, 0.0, 1.0, w.clone(), 3, 3);
        let e = [0.2, -0.4, 1.1];
        let targets = Tensor::new(&[2u32], &Device::Cpu).unwrap();
        let logits = head.logits(&row(&e), Some(&targets)).unwrap();
        let loss: f64 = cross_entropy(&logits, &targets).unwrap().to_scalar().unwrap();
        // reference: cosine logits computed by hand
        let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos: Vec<f64> = w
            .chunks(3)
            .map(|wr| {
                let wn = wr.iter().map(|v| v * v).sum::<f64>().sqrt();
                wr.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / (wn * en)
            })
            .collect();
        let want = classification_loss(&cos, 2).unwrap();
        assert!((loss - want).abs() < 1e-6, "{loss} vs {want}");
    }

    #[test]
    fn inference_logits_ignore_margin() {
        let (_, head) = head_with(HeadKind::ArcFace, 0.7, 30.0, vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let l = head.logits(&row(&[3.0, 4.0]), None).unwrap().to_vec2::<f64>().unwrap();
        assert!((l[0][0] - 18.0).abs() < 1e-9 && (l[0][1] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn zero_embedding_is_an_error_for_arcface() {
        let (_, head) = head_with(HeadKind::ArcFace, 0.7, 30.0, vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(head.logits(&row(&[0.0, 0.0]), None).is_err());
    }

    #[test]
    fn cee_zero_embedding_gives_uniform_softmax() {
        let (_, head) = head_with(HeadKind::Cee, 0.0, 1.0, vec![0.5; 8], 4, 2);
        let l = head.logits(&row(&[0.0, 0.0]), None).unwrap().to_vec2::<f64>().unwrap();
        assert!(l[0].iter().all(|v| *v == 0.0));
        assert!(softmax(&l[0]).iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn tensor_loss_gradient_is_softmax_minus_onehot() {
        let logits = [0.3, -1.1, 2.2, 0.4];
        let target = 1;
        let p = softmax(&logits);
        let var = candle_core::Var::from_tensor(&row(&logits)).unwrap();
        let targets = Tensor::new(&[target as u32], &Device::Cpu).unwrap();
        let grads = cross_entropy(var.as_tensor(), &targets).unwrap().backward().unwrap();
        let g = grads.get(&var).unwrap().to_vec2::<f64>().unwrap();
        for j in 0..logits.len() {
            let analytic = p[j] - if j == target { 1.0 } else { 0.0 };
            assert!((g[0][j] - analytic).abs() < 1e-12);
        }
    }
}

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, TensorData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, serializable for resumable checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, TensorData>,
    pub v: BTreeMap<String, TensorData>,
}

/// Bias-corrected Adam without weight decay.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) || !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {cfg:?}")));
        }
        Ok(Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every parameter that
    /// received a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, var) in store.trainable() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m = match self.m.get(name) {
                Some(m) => ((m * b1)? + (g * (1.0 - b1))?)?,
                None => (g * (1.0 - b1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let denom = ((&v / c2)?.sqrt()? + self.cfg.eps)?;
            let update = ((&m / c1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn export(&self) -> Result<AdamState> {
        let dump = |map: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, TensorData>> {
            map.iter()
                .map(|(k, t)| Ok((k.clone(), TensorData::from_tensor(t)?)))
                .collect()
        };
        Ok(AdamState {
            step: self.step,
            m: dump(&self.m)?,
            v: dump(&self.v)?,
        })
    }

    /// Restores moments for parameters of `store`; shapes must match.
    pub fn import(&mut self, store: &ParamStore, state: &AdamState) -> Result<()> {
        let load = |map: &BTreeMap<String, TensorData>| -> Result<BTreeMap<String, Tensor>> {
            map.iter()
                .map(|(k, d)| {
                    let var = store
                        .get(k)
                        .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown tensor '{k}'")))?;
                    if var.dims() != d.shape.as_slice() {
                        return Err(Error::Checkpoint(format!(
                            "optimizer state '{k}': expected shape {:?}, found {:?}",
                            var.dims(),
                            d.shape
                        )));
                    }
                    let t = Tensor::from_vec(d.values.clone(), d.shape.as_slice(), store.device())?
                        .to_dtype(store.dtype())?;
                    Ok((k.clone(), t))
                })
                .collect()
        };
        let m = load(&state.m)?;
        let v = load(&state.v)?;
        self.step = state.step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &ParamStore, grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut total = 0.0;
    for (_, var) in store.trainable() {
        if let Some(g) = grads.get(var.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, var) in store.trainable() {
            if let Some(g) = grads.remove(var.as_tensor()) {
                grads.insert(var.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::DType;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // with bias correction, step 1 is lr * g / (|g| + eps) ~ lr * sign(g)
        let mut store = ParamStore::new(DType::F64, 0);
        let w = store.param("w", &[3], Init::Const(1.0)).unwrap();
        let target = Tensor::new(&[3.0f64, -2.0, 1.0], store.device()).unwrap();
        let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&store, &grads, 0.1).unwrap();
        let after: Vec<f64> = store.get("w").unwrap().as_tensor().to_vec1().unwrap();
        let want = [1.1, 0.9, 1.0];
        for (a, b) in after.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{after:?}");
        }
    }

    #[test]
    fn matches_hand_rolled_reference() {
        let mut store = ParamStore::new(DType::F64, 0);
        let w = store.param("w", &[1], Init::Const(0.5)).unwrap();
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let loss = w.powf(3.0).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            adam.step(&store, &grads, 0.01).unwrap();
            let g = 3.0 * x * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            let got: Vec<f64> = w.to_vec1().unwrap();
            assert!((got[0] - x).abs() < 1e-12, "step {t}: {} vs {x}", got[0]);
        }
    }

    #[test]
    fn state_round_trips() {
        let mut store = ParamStore::new(DType::F32, 0);
        let w = store.param("w", &[2, 2], Init::FanIn(2)).unwrap();
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        let grads = w.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        adam.step(&store, &grads, 1e-3).unwrap();
        let state = adam.export().unwrap();
        let mut other = Adam::new(AdamConfig::default()).unwrap();
        other.import(&store, &state).unwrap();
        assert_eq!(other.export().unwrap(), state);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut store = ParamStore::new(DType::F64, 0);
        let w = store.param("w", &[2], Init::Const(0.0)).unwrap();
        let target = Tensor::new(&[3.0f64, 4.0], store.device()).unwrap();
        let loss = w.mul(&target).unwrap().sum_all().unwrap();
        let mut grads = loss.backward().unwrap();
        let before = clip_grad_norm(&store, &mut grads, 1.0).unwrap();
        assert!((before - 5.0).abs() < 1e-12);
        let g: Vec<f64> = grads.get(&w).unwrap().to_vec1().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}

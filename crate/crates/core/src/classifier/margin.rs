use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Affine logits trained with plain cross-entropy.
    Cee,
    /// Additive angular margin logits.
    ArcFace,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Cee => "CEE",
            HeadKind::ArcFace => "ArcFace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Angular margin in radians (ArcFace only).
    pub margin: f64,
    /// Logit scale (ArcFace only).
    pub scale: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::ArcFace,
            margin: 0.7,
            scale: 30.0,
        }
    }
}

impl HeadConfig {
    pub fn cee() -> Self {
        Self {
            kind: HeadKind::Cee,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == HeadKind::ArcFace && !(self.margin >= 0.0 && self.scale > 0.0) {
            return Err(Error::Config(format!(
                "ArcFace needs margin >= 0 and scale > 0, got m={} s={}",
                self.margin, self.scale
            )));
        }
        Ok(())
    }
}

pub(crate) const COS_CLAMP: f64 = 1e-7;

/// Training logit of the true class: `s * cos(theta + m)` while
/// `theta + m <= pi`, otherwise `s * (cos theta - m * sin m)`.
pub fn arcface_target_logit(cos_theta: f64, margin: f64, scale: f64) -> f64 {
    let c = cos_theta.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
    let threshold = (std::f64::consts::PI - margin).cos();
    if c > threshold {
        let s = (1.0 - c * c).sqrt();
        scale * (c * margin.cos() - s * margin.sin())
    } else {
        scale * (c - margin * margin.sin())
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `-ln softmax(logits)[target]`.
pub fn classification_loss(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "class {target} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    Ok(-log_softmax(logits)[target])
}

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{depthwise_conv2d, BatchNorm, Conv2d, Init, ParamStore, Pointwise, PRelu};

/// One stage of inverted-residual bottlenecks: `repeats` blocks with
/// expansion factor `expansion`, the first of which has stride `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckSpec {
    pub expansion: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
}

impl BottleneckSpec {
    pub const fn new(expansion: usize, channels: usize, repeats: usize, stride: usize) -> Self {
        Self {
            expansion,
            channels,
            repeats,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfnConfig {
    pub stem_channels: usize,
    pub bottlenecks: Vec<BottleneckSpec>,
    pub expand_channels: usize,
    pub embedding_dim: usize,
}

impl Default for MfnConfig {
    fn default() -> Self {
        Self::mobilefacenet()
    }
}

impl MfnConfig {
    /// The original MobileFaceNet schedule with a 128-d embedding.
    pub fn mobilefacenet() -> Self {
        Self {
            stem_channels: 64,
            bottlenecks: vec![
                BottleneckSpec::new(2, 64, 5, 2),
                BottleneckSpec::new(4, 128, 1, 2),
                BottleneckSpec::new(2, 128, 6, 1),
                BottleneckSpec::new(4, 128, 1, 2),
                BottleneckSpec::new(2, 128, 2, 1),
            ],
            expand_channels: 512,
            embedding_dim: 128,
        }
    }

    /// A narrow, shallow variant for quick experiments on small inputs.
    pub fn tiny() -> Self {
        Self {
            stem_channels: 16,
            bottlenecks: vec![
                BottleneckSpec::new(2, 24, 1, 2),
                BottleneckSpec::new(2, 32, 1, 2),
                BottleneckSpec::new(2, 32, 1, 1),
            ],
            expand_channels: 64,
            embedding_dim: 32,
        }
    }

    /// Spatial size of the final feature map for an `(h, w)` input.
    pub fn final_map(&self, h: usize, w: usize) -> (usize, usize) {
        let down = |n: usize| (n - 1) / 2 + 1;
        let (mut h, mut w) = (down(h), down(w));
        for b in &self.bottlenecks {
            if b.stride == 2 {
                h = down(h);
                w = down(w);
            }
        }
        (h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.expand_channels == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("MobileFaceNet widths must be positive".into()));
        }
        for b in &self.bottlenecks {
            if b.expansion == 0 || b.channels == 0 || b.repeats == 0 || !(1..=2).contains(&b.stride) {
                return Err(Error::Config(format!("invalid bottleneck stage {b:?}")));
            }
        }
        Ok(())
    }
}

struct Depthwise {
    weight: Tensor,
    stride: usize,
    padding: (usize, usize),
}

impl Depthwise {
    fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[channels, 1, kernel.0, kernel.1],
            Init::FanIn(kernel.0 * kernel.1),
        )?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depthwise_conv2d(x, &self.weight, self.stride, self.padding)
    }
}

enum ConvKind {
    Dense(Conv2d),
    Depthwise(Depthwise),
    Pointwise(Pointwise),
}

/// Convolution, batch norm, and (unless linear) PReLU.
struct ConvUnit {
    conv: ConvKind,
    bn: BatchNorm,
    act: Option<PRelu>,
}

impl ConvUnit {
    fn new(
        store: &mut ParamStore,
        name: &str,
        conv: impl FnOnce(&mut ParamStore) -> Result<ConvKind>,
        out_ch: usize,
        linear: bool,
    ) -> Result<Self> {
        let conv = conv(store)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), out_ch)?;
        let act = if linear {
            None
        } else {
            Some(PRelu::new(store, &format!("{name}.prelu"), out_ch)?)
        };
        Ok(Self { conv, bn, act })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = match &self.conv {
            ConvKind::Dense(c) => c.forward(x)?,
            ConvKind::Depthwise(c) => c.forward(x)?,
            ConvKind::Pointwise(c) => c.forward(x)?,
        };
        let y = self.bn.forward(&y, train)?;
        match &self.act {
            Some(a) => a.forward(&y),
            None => Ok(y),
        }
    }
}

struct Bottleneck {
    expand: ConvUnit,
    depthwise: ConvUnit,
    project: ConvUnit,
    residual: bool,
}

impl Bottleneck {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, expansion: usize, stride: usize) -> Result<Self> {
        let hidden = in_ch * expansion;
        let expand = ConvUnit::new(
            store,
            &format!("{name}.expand"),
            |s| Ok(ConvKind::Pointwise(Pointwise::new(s, &format!("{name}.expand"), in_ch, hidden)?)),
            hidden,
            false,
        )?;
        let depthwise = ConvUnit::new(
            store,
            &format!("{name}.dw"),
            |s| Ok(ConvKind::Depthwise(Depthwise::new(s, &format!("{name}.dw"), hidden, (3, 3), stride, (1, 1))?)),
            hidden,
            false,
        )?;
        let project = ConvUnit::new(
            store,
            &format!("{name}.project"),
            |s| Ok(ConvKind::Pointwise(Pointwise::new(s, &format!("{name}.project"), hidden, out_ch)?)),
            out_ch,
            true,
        )?;
        Ok(Self {
            expand,
            depthwise,
            project,
            residual: stride == 1 && in_ch == out_ch,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.expand.forward(x, train)?;
        let y = self.depthwise.forward(&y, train)?;
        let y = self.project.forward(&y, train)?;
        if self.residual {
            Ok((y + x)?)
        } else {
            Ok(y)
        }
    }
}

/// MobileFaceNet over `(channels, rows, frames)` feature maps.
///
/// The global depthwise convolution is sized to the final map produced by the
/// configured input, so any `(rows, frames)` reduces to a single embedding.
pub struct MobileFaceNet {
    input: (usize, usize, usize),
    embedding_dim: usize,
    stem: ConvUnit,
    stem_dw: ConvUnit,
    blocks: Vec<Bottleneck>,
    expand: ConvUnit,
    gdc: ConvUnit,
    project: ConvUnit,
}

impl MobileFaceNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &MfnConfig,
        input: (usize, usize, usize),
    ) -> Result<Self> {
        cfg.validate()?;
        let (in_ch, rows, frames) = input;
        if !(1..=2).contains(&in_ch) || rows == 0 || frames == 0 {
            return Err(Error::Config(format!("unsupported MobileFaceNet input {input:?}")));
        }
        let stem_ch = cfg.stem_channels;
        let name = |s: &str| format!("{prefix}.{s}");
        let stem = ConvUnit::new(
            store,
            &name("stem"),
            |s| Ok(ConvKind::Dense(Conv2d::new(s, &name("stem"), in_ch, stem_ch, 3, 2, 1)?)),
            stem_ch,
            false,
        )?;
        let stem_dw = ConvUnit::new(
            store,
            &name("stem_dw"),
            |s| Ok(ConvKind::Depthwise(Depthwise::new(s, &name("stem_dw"), stem_ch, (3, 3), 1, (1, 1))?)),
            stem_ch,
            false,
        )?;
        let mut blocks = Vec::new();
        let mut ch = stem_ch;
        for (si, stage) in cfg.bottlenecks.iter().enumerate() {
            for r in 0..stage.repeats {
                let stride = if r == 0 { stage.stride } else { 1 };
                blocks.push(Bottleneck::new(
                    store,
                    &name(&format!("stage{si}.{r}")),
                    ch,
                    stage.channels,
                    stage.expansion,
                    stride,
                )?);
                ch = stage.channels;
            }
        }
        let expand = ConvUnit::new(
            store,
            &name("expand"),
            |s| Ok(ConvKind::Pointwise(Pointwise::new(s, &name("expand"), ch, cfg.expand_channels)?)),
            cfg.expand_channels,
            false,
        )?;
        let (fh, fw) = cfg.final_map(rows, frames);
        let gdc = ConvUnit::new(
            store,
            &name("gdc"),
            |s| Ok(ConvKind::Depthwise(Depthwise::new(s, &name("gdc"), cfg.expand_channels, (fh, fw), 1, (0, 0))?)),
            cfg.expand_channels,
            true,
        )?;
        let project = ConvUnit::new(
            store,
            &name("embed"),
            |s| Ok(ConvKind::Pointwise(Pointwise::new(s, &name("embed"), cfg.expand_channels, cfg.embedding_dim)?)),
            cfg.embedding_dim,
            true,
        )?;
        Ok(Self {
            input,
            embedding_dim: cfg.embedding_dim,
            stem,
            stem_dw,
            blocks,
            expand,
            gdc,
            project,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// `(B, C, M, N)` features to `(B, D)` embeddings.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if (c, h, w) != self.input {
            return Err(Error::Shape(format!(
                "classifier expects input {:?}, got {:?}",
                self.input,
                (c, h, w)
            )));
        }
        let mut y = self.stem.forward(x, train)?;
        y = self.stem_dw.forward(&y, train)?;
        for block in &self.blocks {
            y = block.forward(&y, train)?;
        }
        y = self.expand.forward(&y, train)?;
        y = self.gdc.forward(&y, train)?;
        y = self.project.forward(&y, train)?;
        Ok(y.reshape((b, self.embedding_dim))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn default_schedule_reduces_128x313_to_8x20() {
        assert_eq!(MfnConfig::mobilefacenet().final_map(128, 313), (8, 20));
        assert_eq!(MfnConfig::mobilefacenet().final_map(513, 313), (33, 20));
    }

    #[test]
    fn tiny_model_embeds_and_checks_channels() {
        let mut store = ParamStore::new(DType::F32, 0);
        let net = MobileFaceNet::new(&mut store, "mfn", &MfnConfig::tiny(), (1, 16, 20)).unwrap();
        let x = Tensor::ones((3, 1, 16, 20), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.forward(&x, false).unwrap().dims(), &[3, 32]);
        let wrong = Tensor::ones((3, 2, 16, 20), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(net.forward(&wrong, false), Err(Error::Shape(_))));
    }
}

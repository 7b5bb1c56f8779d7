use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{NwdConfig, NwdMode};
use crate::msfa::DEFAULT_BRANCH_KERNELS;
use crate::tensor::UpsampleMode;

/// Block at the deepest (stride 8) stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeepBlock {
    /// `3×3` convolution + ReLU.
    PlainConv,
    Msfa,
}

/// How stride-8 features are brought to stride 4 in the neck.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsampler {
    /// Bare interpolation (bilinear by default).
    Plain,
    Eucb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoxLossKind {
    /// `1 - IoU`.
    Iou,
    Nwd(NwdConfig),
}

impl BoxLossKind {
    pub fn label(&self) -> &'static str {
        match self {
            BoxLossKind::Iou => "iou",
            BoxLossKind::Nwd(c) => match c.mode {
                NwdMode::CanonicalExp => "nwd-canonical-exp",
                NwdMode::LinearClamp => "nwd-linear-clamp",
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub box_w: f64,
    pub obj_w: f64,
    pub cls_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            box_w: 1.0,
            obj_w: 1.0,
            cls_w: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Post-processing and scoring knobs for evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Cells scoring below this are not decoded at all.
    pub conf_floor: f64,
    /// Operating point for precision / recall.
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            conf_floor: 0.001,
            score_threshold: 0.25,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Square input side in pixels; must be a multiple of 8.
    pub input_size: usize,
    pub num_classes: usize,
    /// Output channels of the three stride-2 stem convolutions.
    pub stem_widths: [usize; 3],
    /// Channels after the neck fusion; also the EUCB output width.
    pub neck_width: usize,
    pub deep_block: DeepBlock,
    pub upsampler: Upsampler,
    pub box_loss: BoxLossKind,
    pub msfa_kernels: Vec<usize>,
    pub plain_upsample_mode: UpsampleMode,
    pub eucb_upsample_mode: UpsampleMode,
    pub loss_weights: LossWeights,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub eval: EvalConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            num_classes: 6,
            stem_widths: [8, 16, 32],
            neck_width: 32,
            deep_block: DeepBlock::PlainConv,
            upsampler: Upsampler::Plain,
            box_loss: BoxLossKind::Iou,
            msfa_kernels: DEFAULT_BRANCH_KERNELS.to_vec(),
            plain_upsample_mode: UpsampleMode::Bilinear,
            eucb_upsample_mode: UpsampleMode::Nearest,
            loss_weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            epochs: 30,
            batch_size: 8,
            patience: 18,
            seed: 42,
            eval: EvalConfig::default(),
        }
    }
}

impl DetectorConfig {
    /// Stride of the single detection head.
    pub const HEAD_STRIDE: usize = 4;

    pub fn head_grid(&self) -> usize {
        self.input_size / Self::HEAD_STRIDE
    }

    /// Channels of the head output: objectness, 4 box terms, class logits.
    pub fn head_channels(&self) -> usize {
        5 + self.num_classes
    }

    pub fn nwd_default(&self) -> NwdConfig {
        NwdConfig::for_input_side(self.input_size, NwdMode::CanonicalExp)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_size,
            self.num_classes,
            self.neck_width,
            self.epochs,
            self.batch_size,
        ]
        .iter()
        .chain(self.stem_widths.iter())
        .all(|&v| v > 0);
        if !positive {
            return Err(Error::Config("sizes, widths, epochs and batch size must be positive".into()));
        }
        if self.input_size % 8 != 0 {
            return Err(Error::Config(alloc::format!(
                "input size {} is not a multiple of 8",
                self.input_size
            )));
        }
        if self.deep_block == DeepBlock::Msfa && self.msfa_kernels.is_empty() {
            return Err(Error::Config("MSFA needs at least one branch".into()));
        }
        if let BoxLossKind::Nwd(c) = self.box_loss {
            c.validated()?;
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

//! Run configuration: one TOML file with a section per module. Every key is
//! optional, unknown keys are errors, and the effective configuration is
//! echoed into each output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sme_core::detector::{
    AdamConfig, BoxLossKind, DeepBlock, DetectorConfig, EvalConfig, LossWeights, Upsampler,
};
use sme_core::geometry::{NwdConfig, NwdMode, DEFAULT_C_NORM, REFERENCE_INPUT_SIDE};
use sme_core::msfa::DEFAULT_BRANCH_KERNELS;
use sme_core::synth::{ClassSpec, Primitive, SynthConfig, CLASS_NAMES, DEFAULT_AREA_FRACTIONS};
use sme_core::tensor::UpsampleMode;

use crate::error::{at, Error, Result};

pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
    pub sensitivity: SensitivitySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Drives data generation, initialization and batch order.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub image_size: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub classes: Vec<String>,
    /// Target bounding-box area over image area, one per class.
    pub area_fractions: Vec<f64>,
    pub trace_pitch: usize,
    pub trace_width: usize,
    pub pad_spacing: usize,
    pub min_defects: usize,
    pub max_defects: usize,
    pub area_jitter: f64,
    pub max_retries: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            image_size: s.image_size,
            train_images: s.train_images,
            val_images: s.val_images,
            test_images: s.test_images,
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            area_fractions: DEFAULT_AREA_FRACTIONS.to_vec(),
            trace_pitch: s.trace_pitch,
            trace_width: s.trace_width,
            pad_spacing: s.pad_spacing,
            min_defects: s.min_defects,
            max_defects: s.max_defects,
            area_jitter: s.area_jitter,
            max_retries: s.max_retries,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockName {
    PlainConv,
    Msfa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsamplerName {
    Plain,
    Eucb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxLossName {
    Iou,
    Nwd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NwdModeName {
    CanonicalExp,
    LinearClamp,
}

impl From<ModeName> for UpsampleMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Nearest => UpsampleMode::Nearest,
            ModeName::Bilinear => UpsampleMode::Bilinear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub stem_widths: [usize; 3],
    pub neck_width: usize,
    pub deep_block: BlockName,
    pub upsampler: UpsamplerName,
    pub msfa_kernels: Vec<usize>,
    pub plain_upsample: ModeName,
    pub eucb_upsample: ModeName,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            stem_widths: [8, 16, 32],
            neck_width: 32,
            deep_block: BlockName::PlainConv,
            upsampler: UpsamplerName::Plain,
            msfa_kernels: DEFAULT_BRANCH_KERNELS.to_vec(),
            plain_upsample: ModeName::Bilinear,
            eucb_upsample: ModeName::Nearest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub box_loss: BoxLossName,
    pub nwd_mode: NwdModeName,
    /// NWD constant in pixels; defaults to 12.8 scaled by `image_size / 256`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_norm: Option<f64>,
    pub box_weight: f64,
    pub obj_weight: f64,
    pub cls_weight: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            box_loss: BoxLossName::Iou,
            nwd_mode: NwdModeName::CanonicalExp,
            c_norm: None,
            box_weight: w.box_w,
            obj_weight: w.obj_w,
            cls_weight: w.cls_w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            lr: d.optimizer.lr,
            beta1: d.optimizer.beta1,
            beta2: d.optimizer.beta2,
            eps: d.optimizer.eps,
            epochs: d.epochs,
            batch_size: d.batch_size,
            patience: d.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub conf_floor: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            conf_floor: e.conf_floor,
            score_threshold: e.score_threshold,
            nms_iou: e.nms_iou,
            max_detections: e.max_detections,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub instances: usize,
    pub step: f64,
    pub richardson: bool,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let g = sme_core::gradcheck::GradCheckConfig::default();
        Self {
            instances: sme_core::gradcheck::suite::DEFAULT_INSTANCES,
            step: g.step,
            richardson: g.richardson,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    pub sizes: Vec<f64>,
    /// Offsets run over `0, 1, …, max_offset` pixels.
    pub max_offset: u32,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            sizes: vec![6.0, 12.0, 24.0, 36.0],
            max_offset: 12,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(at(path))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Writes the effective configuration as `config.toml` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_toml()).map_err(at(path))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes.len() != d.area_fractions.len() {
            return Err(Error::Config(format!(
                "{} classes but {} area fractions",
                d.classes.len(),
                d.area_fractions.len()
            )));
        }
        for name in &d.classes {
            if Primitive::for_class(name).is_none() {
                return Err(Error::Config(format!(
                    "unknown class {name:?}; expected one of {CLASS_NAMES:?}"
                )));
            }
        }
        self.synth_config().validate()?;
        self.detector_config().validate()?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.data;
        SynthConfig {
            image_size: d.image_size,
            train_images: d.train_images,
            val_images: d.val_images,
            test_images: d.test_images,
            classes: d
                .classes
                .iter()
                .zip(&d.area_fractions)
                .map(|(name, &area_fraction)| ClassSpec {
                    name: name.clone(),
                    primitive: Primitive::for_class(name).unwrap_or(Primitive::StrayBlob),
                    area_fraction,
                })
                .collect(),
            trace_pitch: d.trace_pitch,
            trace_width: d.trace_width,
            pad_spacing: d.pad_spacing,
            min_defects: d.min_defects,
            max_defects: d.max_defects,
            area_jitter: d.area_jitter,
            max_retries: d.max_retries,
            seed: self.run.seed,
        }
    }

    pub fn nwd_config(&self) -> NwdConfig {
        NwdConfig {
            c_norm: self
                .loss
                .c_norm
                .unwrap_or(DEFAULT_C_NORM * self.data.image_size as f64 / REFERENCE_INPUT_SIDE),
            mode: match self.loss.nwd_mode {
                NwdModeName::CanonicalExp => NwdMode::CanonicalExp,
                NwdModeName::LinearClamp => NwdMode::LinearClamp,
            },
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let (m, l, t, e) = (&self.model, &self.loss, &self.train, &self.eval);
        DetectorConfig {
            input_size: self.data.image_size,
            num_classes: self.data.classes.len(),
            stem_widths: m.stem_widths,
            neck_width: m.neck_width,
            deep_block: match m.deep_block {
                BlockName::PlainConv => DeepBlock::PlainConv,
                BlockName::Msfa => DeepBlock::Msfa,
            },
            upsampler: match m.upsampler {
                UpsamplerName::Plain => Upsampler::Plain,
                UpsamplerName::Eucb => Upsampler::Eucb,
            },
            box_loss: match l.box_loss {
                BoxLossName::Iou => BoxLossKind::Iou,
                BoxLossName::Nwd => BoxLossKind::Nwd(self.nwd_config()),
            },
            msfa_kernels: m.msfa_kernels.clone(),
            plain_upsample_mode: m.plain_upsample.into(),
            eucb_upsample_mode: m.eucb_upsample.into(),
            loss_weights: LossWeights {
                box_w: l.box_weight,
                obj_w: l.obj_weight,
                cls_w: l.cls_weight,
            },
            optimizer: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            seed: self.run.seed,
            eval: EvalConfig {
                conf_floor: e.conf_floor,
                score_threshold: e.score_threshold,
                nms_iou: e.nms_iou,
                max_detections: e.max_detections,
            },
        }
    }

    pub fn gradcheck_config(&self) -> sme_core::gradcheck::GradCheckConfig {
        sme_core::gradcheck::GradCheckConfig {
            step: self.gradcheck.step,
            richardson: self.gradcheck.richardson,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.detector_config(), DetectorConfig::default());
        assert_eq!(cfg.synth_config(), SynthConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        assert!(RunConfig::parse("[trian]\nepochs = 3\n").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[run]\nseed = 7\n[model]\ndeep_block = \"msfa\"\nupsampler = \"eucb\"\n\
             [loss]\nbox_loss = \"nwd\"\nnwd_mode = \"linear-clamp\"\nc_norm = 20.0\n",
        )
        .unwrap();
        let d = cfg.detector_config();
        assert_eq!(d.seed, 7);
        assert_eq!(d.deep_block, DeepBlock::Msfa);
        assert_eq!(d.upsampler, Upsampler::Eucb);
        assert_eq!(
            d.box_loss,
            BoxLossKind::Nwd(NwdConfig {
                c_norm: 20.0,
                mode: NwdMode::LinearClamp
            })
        );
        assert_eq!(cfg.synth_config().seed, 7);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.epochs = 3;
        cfg.loss.c_norm = Some(6.4);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_fail_fast() {
        assert!(RunConfig::parse("[data]\nclasses = [\"short\"]\n").is_err());
        assert!(RunConfig::parse("[data]\nclasses = [\"bogus\"]\narea_fractions = [0.001]\n").is_err());
        assert!(RunConfig::parse("[data]\nimage_size = 100\n").is_err());
        assert!(RunConfig::parse("[train]\nlr = -1.0\n").is_err());
    }
}

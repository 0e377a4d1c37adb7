//! Formulations, loss weights and training configuration.
//!
//! Defaults are the published hyperparameters. A JSON config file may
//! override any subset of fields; missing keys keep the formulation defaults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, VclabError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    #[serde(rename = "cyclegan")]
    CycleGan,
    #[serde(rename = "c-stargan")]
    CStarGan,
    #[serde(rename = "w-stargan")]
    WStarGan,
    #[serde(rename = "a-stargan1")]
    AStarGan1,
    #[serde(rename = "a-stargan2")]
    AStarGan2,
}

impl Formulation {
    pub const ALL: [Formulation; 5] = [
        Formulation::CycleGan,
        Formulation::CStarGan,
        Formulation::WStarGan,
        Formulation::AStarGan1,
        Formulation::AStarGan2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::CycleGan => "cyclegan",
            Formulation::CStarGan => "c-stargan",
            Formulation::WStarGan => "w-stargan",
            Formulation::AStarGan1 => "a-stargan1",
            Formulation::AStarGan2 => "a-stargan2",
        }
    }

    pub fn is_augmented(self) -> bool {
        matches!(self, Formulation::AStarGan1 | Formulation::AStarGan2)
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = VclabError;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| VclabError::Config(format!("unknown formulation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cls: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_gp: f64,
    pub rho: f64,
}

impl LossWeights {
    pub fn for_formulation(f: Formulation) -> Self {
        let (adv, cls, gp) = match f {
            Formulation::WStarGan => (10.0, 10.0, 10.0),
            _ => (1.0, 1.0, 0.0),
        };
        LossWeights { lambda_adv: adv, lambda_cls: cls, lambda_cyc: 1.0, lambda_id: 1.0, lambda_gp: gp, rho: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_adv, self.lambda_cls, self.lambda_cyc, self.lambda_id, self.lambda_gp];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(VclabError::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return Err(VclabError::Config(format!("rho must be >= 1, got {}", self.rho)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Tiny,
}

impl FromStr for Preset {
    type Err = VclabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(VclabError::Config(format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = VclabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(VclabError::Config(format!("unknown precision `{s}` (expected f32 or f64)"))),
        }
    }
}

/// Channel widths of every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub generator: GeneratorKind,
    /// Encoder widths of the generator; the decoder mirrors them.
    pub generator_widths: [usize; 3],
    pub discriminator_width: usize,
    /// Intermediate width M of the domain classifier C.
    pub classifier_width: usize,
    /// Intermediate width M of the augmented classifier A.
    pub augmented_width: usize,
    /// Trunk widths of the W-StarGAN two-head network.
    pub multitask_widths: [usize; 4],
    pub dropout: f64,
}

impl NetConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let full = NetConfig {
            generator: GeneratorKind::OneD,
            generator_widths: [64, 128, 256],
            discriminator_width: 32,
            classifier_width: 16,
            augmented_width: 64,
            multitask_widths: [64, 128, 128, 256],
            dropout: 0.2,
        };
        match preset {
            Preset::Full => full,
            Preset::Tiny => NetConfig {
                generator_widths: full.generator_widths.map(|w| w / 4),
                discriminator_width: full.discriminator_width / 4,
                classifier_width: full.classifier_width / 4,
                augmented_width: full.augmented_width / 4,
                multitask_widths: full.multitask_widths.map(|w| w / 4),
                ..full
            },
        }
    }

    /// Default encoder widths for a 2D generator.
    pub fn generator_2d_widths(preset: Preset) -> [usize; 3] {
        match preset {
            Preset::Full => [32, 64, 128],
            Preset::Tiny => [8, 16, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub formulation: Formulation,
    pub preset: Preset,
    pub weights: LossWeights,
    pub alpha_g: f64,
    pub alpha_dc: f64,
    pub beta1_g: f64,
    pub beta1_dc: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Frames per training segment (a multiple of 4).
    pub segment_frames: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub precision: Precision,
    /// Use `-log D(G(x))` instead of `log(1 - D(G(x)))` for the generator.
    pub non_saturating: bool,
    /// Source and target domain (0-based) for the pairwise CycleGAN.
    pub domain_pair: Option<(usize, usize)>,
    pub nets: NetConfig,
}

impl TrainConfig {
    pub fn defaults(formulation: Formulation, preset: Preset) -> Self {
        let alpha_dc = match formulation {
            Formulation::CycleGan | Formulation::WStarGan => 5e-6,
            _ => 2e-6,
        };
        let iterations = match formulation {
            Formulation::CStarGan => 700_000,
            _ => 350_000,
        };
        let mut cfg = TrainConfig {
            formulation,
            preset,
            weights: LossWeights::for_formulation(formulation),
            alpha_g: 5e-4,
            alpha_dc,
            beta1_g: 0.9,
            beta1_dc: 0.5,
            beta2: 0.999,
            iterations,
            batch_size: 16,
            segment_frames: 32,
            seed: 0,
            checkpoint_interval: 0,
            precision: Precision::F64,
            non_saturating: true,
            domain_pair: None,
            nets: NetConfig::for_preset(preset),
        };
        if preset == Preset::Tiny {
            // Small networks on toy corpora: a few thousand steps, and the
            // discriminator/classifier must keep up with the generator.
            cfg.iterations = 2000;
            cfg.alpha_g = 1e-3;
            cfg.alpha_dc = 1e-3;
        }
        cfg
    }

    /// Defaults for `formulation`/`preset` overlaid with the keys present in
    /// `json` (an object whose field names mirror this struct).
    pub fn from_json(formulation: Formulation, preset: Preset, json: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(json)?;
        let Value::Object(map) = &overrides else {
            return Err(VclabError::Config("config file must hold a JSON object".into()));
        };
        let preset = match map.get("preset") {
            Some(p) => serde_json::from_value(p.clone())?,
            None => preset,
        };
        let formulation = match map.get("formulation") {
            Some(f) => serde_json::from_value(f.clone())?,
            None => formulation,
        };
        let mut base = serde_json::to_value(TrainConfig::defaults(formulation, preset))?;
        merge(&mut base, &overrides);
        let cfg: TrainConfig = serde_json::from_value(base).map_err(|e| VclabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.alpha_g > 0.0 && self.alpha_dc > 0.0) {
            return Err(VclabError::Config("learning rates must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(VclabError::Config("batch size must be at least 2 (batch normalization)".into()));
        }
        if self.segment_frames == 0 || !self.segment_frames.is_multiple_of(4) {
            return Err(VclabError::Config(format!("segment_frames {} is not a positive multiple of 4", self.segment_frames)));
        }
        if !(0.0..1.0).contains(&self.nets.dropout) {
            return Err(VclabError::Config("dropout must lie in [0, 1)".into()));
        }
        if self.formulation == Formulation::CycleGan && self.domain_pair.is_none() {
            return Err(VclabError::Config("cyclegan needs a source/target domain pair".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::LossKind;
use crate::schedules::{ScheduleKind, ScheduleSpec, DEFAULT_STEPS};

/// The two canonical training configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// L1 loss with the linear schedule.
    S1,
    /// L2 loss with the cosine schedule.
    S2,
}

impl Preset {
    pub fn loss(self) -> LossKind {
        match self {
            Preset::S1 => LossKind::L1,
            Preset::S2 => LossKind::L2,
        }
    }

    pub fn schedule(self) -> ScheduleKind {
        match self {
            Preset::S1 => ScheduleKind::Linear,
            Preset::S2 => ScheduleKind::Cosine,
        }
    }
}

/// Reverse-process noise level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    /// `σ_t² = β̃_t = β_t·(1−ᾱ_{t−1})/(1−ᾱ_t)`.
    Posterior,
    /// `σ_t² = β_t`.
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub loss: LossKind,
    pub schedule: ScheduleSpec,
    /// `(width, height)` in pixels.
    pub resolution: (usize, usize),
    pub seed: u64,
    pub variance: VarianceKind,
}

/// Resolutions small enough for CPU-only runs, besides the 64×48–320×240 range.
pub const DESK_RESOLUTIONS: [(usize, usize); 2] = [(16, 12), (32, 24)];

impl DiffusionConfig {
    pub fn preset(preset: Preset, steps: usize, resolution: (usize, usize), seed: u64) -> Result<Self> {
        Self::new(preset.loss(), ScheduleSpec::default_for(preset.schedule(), steps), resolution, seed)
    }

    pub fn new(loss: LossKind, schedule: ScheduleSpec, resolution: (usize, usize), seed: u64) -> Result<Self> {
        let cfg = DiffusionConfig { loss, schedule, resolution, seed, variance: VarianceKind::Posterior };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution;
        let in_range = (64..=320).contains(&w) && (48..=240).contains(&h);
        if !in_range && !DESK_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::param(format!(
                "resolution {w}x{h} outside 64x48..=320x240 and not a desk size (16x12, 32x24)"
            )));
        }
        if w % 4 != 0 || h % 4 != 0 {
            return Err(Error::param(format!("resolution {w}x{h} must be divisible by 4")));
        }
        if self.schedule.steps() < 2 {
            return Err(Error::param("diffusion needs at least 2 steps"));
        }
        Ok(())
    }

    /// The canonical preset this configuration matches, if any.
    pub fn canonical(&self) -> Option<Preset> {
        match (self.loss, self.schedule.kind()) {
            (LossKind::L1, ScheduleKind::Linear) => Some(Preset::S1),
            (LossKind::L2, ScheduleKind::Cosine) => Some(Preset::S2),
            _ => None,
        }
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::preset(Preset::S1, DEFAULT_STEPS, (64, 48), 0).expect("default preset is valid")
    }
}

/// Reference recipe at full scale: 150 epochs, lr 1e-4 decayed ×0.1 after
/// epochs 100 and 125.
pub const FULL_SCALE_EPOCHS: usize = 150;
pub const FULL_SCALE_LR: f64 = 1e-4;
pub const FULL_SCALE_MILESTONES: [usize; 2] = [100, 125];

//! Run configuration: every knob of a training run in one serializable value.

use crate::branches::{
    AudioBranchConfig, VisualBranchConfig, PAPER_AUDIO_D_MODEL, PAPER_AUDIO_HEADS,
    PAPER_AUDIO_LAYERS, PAPER_VISUAL_STAGE_BLOCKS, PAPER_VISUAL_STAGE_CHANNELS,
};
use crate::ceoa::ContrastiveConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, LossWeights, PAPER_FUSION_HEADS, PAPER_FUSION_HEAD_DIM};
use crate::harness::optimizer::AdamWConfig;
use crate::synthdata::SceneSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    #[default]
    Both,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Audio => write!(f, "audio"),
            Modality::Visual => write!(f, "visual"),
            Modality::Both => write!(f, "both"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    #[default]
    Macro,
    Micro,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub audio: AudioBranchConfig,
    pub visual: VisualBranchConfig,
    pub contrastive: ContrastiveConfig,
    pub fusion: FusionConfig,
    pub data: SceneSpec,
    pub n_samples: usize,
    pub data_seed: u64,
    /// Shared width of both classifier-head embeddings.
    pub embed_dim: usize,
    /// λ1..λ5 weighting the event, object, e2o, o2e, and scene losses.
    pub lambdas: [f64; 5],
    /// When false the scene head sees the raw concatenated branch vectors.
    pub sf_enabled: bool,
    pub modality: Modality,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub accuracy: AccuracyMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Small configuration sized so a full run finishes in minutes on one core.
    pub fn desk() -> Self {
        RunConfig {
            audio: AudioBranchConfig::default(),
            visual: VisualBranchConfig::default(),
            contrastive: ContrastiveConfig::default(),
            fusion: FusionConfig::default(),
            data: SceneSpec::default(),
            n_samples: 400,
            data_seed: 7,
            embed_dim: 32,
            lambdas: [1.0; 5],
            sf_enabled: true,
            modality: Modality::Both,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 60,
            seed: 0,
            optimizer: AdamWConfig::default(),
            accuracy: AccuracyMode::Macro,
        }
    }

    /// Full-scale hyperparameters, kept as a named preset for reference runs.
    pub fn paper() -> Self {
        let mut cfg = RunConfig::desk();
        cfg.audio.n_layers = PAPER_AUDIO_LAYERS;
        cfg.audio.n_heads = PAPER_AUDIO_HEADS;
        cfg.audio.d_model = PAPER_AUDIO_D_MODEL;
        cfg.visual.stage_blocks = PAPER_VISUAL_STAGE_BLOCKS.to_vec();
        cfg.visual.stage_channels = PAPER_VISUAL_STAGE_CHANNELS.to_vec();
        cfg.fusion.n_heads = PAPER_FUSION_HEADS;
        cfg.fusion.head_dim = PAPER_FUSION_HEAD_DIM;
        cfg.learning_rate = 5e-6;
        cfg.epochs = 100;
        cfg.batch_size = 16;
        cfg
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::new(self.lambdas)
    }

    /// True when either contrastive loss carries weight.
    pub fn ceoa_active(&self) -> bool {
        self.lambdas[2] > 0.0 || self.lambdas[3] > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.visual.validate()?;
        self.fusion.validate()?;
        self.data.validate()?;
        self.weights().validate()?;
        if self.ceoa_active() {
            self.contrastive.validate(self.audio.c_e, self.visual.c_o)?;
        }
        if self.data.c_e != self.audio.c_e {
            return Err(Error::Config(format!(
                "data c_e {} != audio branch c_e {}",
                self.data.c_e, self.audio.c_e
            )));
        }
        if self.data.c_o != self.visual.c_o {
            return Err(Error::Config(format!(
                "data c_o {} != visual branch c_o {}",
                self.data.c_o, self.visual.c_o
            )));
        }
        if self.data.c_s != self.fusion.c_s {
            return Err(Error::Config(format!(
                "data c_s {} != fusion c_s {}",
                self.data.c_s, self.fusion.c_s
            )));
        }
        if self.data.grid_t % self.audio.patch_rows != 0
            || self.data.grid_f % self.audio.patch_cols != 0
        {
            return Err(Error::Config(format!(
                "audio grid {}x{} not divisible by patch {}x{}",
                self.data.grid_t, self.data.grid_f, self.audio.patch_rows, self.audio.patch_cols
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.n_samples < self.data.c_s {
            return Err(Error::Config(format!(
                "n_samples {} < c_s {}",
                self.n_samples, self.data.c_s
            )));
        }
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Loads a config file; unknown keys are errors.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let file = std::fs::File::open(path)?;
        let cfg: RunConfig = serde_json::from_reader(std::io::BufReader::new(file))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

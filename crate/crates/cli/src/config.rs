use std::path::Path;

use anyhow::{Context, Result};
use lvquant::nets::{Family, NetworkSpec};
use lvquant::phantom::PhantomSpec;
use lvquant::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_ECHO: &str = "run_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    /// Family default.
    #[default]
    Auto,
    On,
    Off,
}

impl Toggle {
    pub fn resolve(self, default: bool) -> bool {
        match self {
            Toggle::Auto => default,
            Toggle::On => true,
            Toggle::Off => false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Tissue classifier on ROI crops.
    #[default]
    Seg,
    /// Low-resolution locator on whole slices.
    Roi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSection {
    pub n: usize,
    pub spec: PhantomSpec,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self { n: 30, spec: PhantomSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    pub arch: Family,
    pub residual_output: Toggle,
    pub residual_input: Toggle,
    pub levels: usize,
    pub base_features: usize,
    pub shrink: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        Self { arch: Family::UnetBnRl, residual_output: Toggle::Auto, residual_input: Toggle::Auto, levels: 3, base_features: 8, shrink: 1 }
    }
}

impl NetSection {
    pub fn spec(&self, input: usize) -> NetworkSpec {
        let default = NetworkSpec::full_size(self.arch);
        NetworkSpec::miniature(self.arch, self.levels, self.base_features, input)
            .with_shrink(self.shrink)
            .with_residual_output(self.residual_output.resolve(default.residual_output))
            .with_residual_input(self.residual_input.resolve(default.residual_input))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub role: Role,
    pub k: usize,
    pub fold: usize,
    /// Cardiac phases contributing training slices.
    pub phases: Vec<usize>,
    /// Side of the square ROI crop fed to the tissue classifier.
    pub crop: usize,
    /// Downsampling factor of the ROI locator input.
    pub roi_factor: usize,
    pub params: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { role: Role::Seg, k: 5, fold: 0, phases: vec![0, 5, 10, 15], crop: 64, roi_factor: 2, params: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seeds generation, weight initialization, fold assignment, batch order
    /// and augmentation.
    pub seed: u64,
    pub phantom: PhantomSection,
    pub net: NetSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_ECHO), toml::to_string(self)?)?;
        Ok(())
    }
}

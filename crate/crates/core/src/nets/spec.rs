use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    UnetBnRl,
    UInception,
    UXception,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::UnetBnRl, Family::UInception, Family::UXception];

    pub fn name(self) -> &'static str {
        match self {
            Family::UnetBnRl => "unet_bn_rl",
            Family::UInception => "u_inception",
            Family::UXception => "u_xception",
        }
    }

    /// Highest level count with a defined kernel-size schedule.
    pub fn max_levels(self) -> usize {
        match self {
            Family::UnetBnRl => usize::MAX,
            Family::UInception | Family::UXception => 5,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "unet" | "unet_bn_rl" | "u_net" => Ok(Family::UnetBnRl),
            "uinception" | "u_inception" => Ok(Family::UInception),
            "uxception" | "u_xception" => Ok(Family::UXception),
            other => Err(Error::InvalidSpec(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Declarative description of one network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    pub residual_output: bool,
    pub residual_input: bool,
    pub levels: usize,
    pub base_features: usize,
    pub in_channels: usize,
    pub out_classes: usize,
    /// Size of the images given to `forward`, before shrinking.
    pub input_size: (usize, usize),
    pub shrink_factor: usize,
}

impl NetworkSpec {
    /// Full-size configuration: 5 levels from 64 features, 3 classes.
    /// uXception defaults to residual input and output learning.
    pub fn full_size(family: Family) -> Self {
        let residual = family == Family::UXception;
        Self {
            family,
            residual_output: residual,
            residual_input: residual,
            levels: 5,
            base_features: 64,
            in_channels: 1,
            out_classes: 3,
            input_size: (128, 128),
            shrink_factor: 1,
        }
    }

    pub fn miniature(family: Family, levels: usize, base_features: usize, size: usize) -> Self {
        Self { levels, base_features, input_size: (size, size), ..Self::full_size(family) }
    }

    pub fn with_shrink(mut self, shrink: usize) -> Self {
        self.shrink_factor = shrink;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.out_classes = classes;
        self
    }

    pub fn with_residual_output(mut self, on: bool) -> Self {
        self.residual_output = on;
        self
    }

    pub fn with_residual_input(mut self, on: bool) -> Self {
        self.residual_input = on;
        self
    }

    /// Spatial size seen by the first convolution.
    pub fn net_size(&self) -> (usize, usize) {
        let s = self.shrink_factor.max(1);
        (self.input_size.0 / s, self.input_size.1 / s)
    }

    /// Feature count at level `k` (1-based).
    pub fn features(&self, k: usize) -> usize {
        self.base_features << (k - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.levels > self.family.max_levels() {
            return bad(format!("{} supports at most {} levels, got {}", self.family, self.family.max_levels(), self.levels));
        }
        if self.base_features < 2 || self.base_features % 2 != 0 {
            return bad(format!("base_features must be even and positive, got {}", self.base_features));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.out_classes < 2 {
            return bad(format!("out_classes must be at least 2, got {}", self.out_classes));
        }
        if self.shrink_factor == 0 {
            return bad("shrink_factor must be positive".into());
        }
        let (h, w) = self.input_size;
        if h % self.shrink_factor != 0 || w % self.shrink_factor != 0 {
            return bad(format!("input size {h}x{w} not divisible by shrink factor {}", self.shrink_factor));
        }
        let (nh, nw) = self.net_size();
        let div = 1usize << (self.levels - 1);
        if nh == 0 || nw == 0 || nh % div != 0 || nw % div != 0 {
            return bad(format!("network input {nh}x{nw} must be a positive multiple of {div} for {} levels", self.levels));
        }
        Ok(())
    }
}

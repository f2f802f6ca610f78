//! Run configuration shared by the command-line tools, read from TOML.

use serde::{Deserialize, Serialize};

use crate::fusion::{FragmentConfig, IntegrateMode, KeyframeThresholds};
use crate::optimize::OptimConfig;
use crate::superpixel::SegmentParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub voxel_size: f64,
    /// Voxels per side of a fragment region.
    pub fragment_dims: usize,
    pub truncation: f64,
    pub max_depth: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.04,
            fragment_dims: 96,
            truncation: 0.3,
            max_depth: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentsConfig {
    pub views_per_fragment: usize,
    pub target_distance: f64,
    pub integrate: IntegrateMode,
    /// Views taken from each side of a fragment boundary.
    pub boundary_views: usize,
}

impl Default for FragmentsConfig {
    fn default() -> Self {
        Self {
            views_per_fragment: 9,
            target_distance: 2.0,
            integrate: IntegrateMode::Replace,
            boundary_views: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpiConfig {
    pub num_planes: usize,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for MpiConfig {
    fn default() -> Self {
        Self {
            num_planes: 32,
            min_depth: 0.3,
            max_depth: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub keyframes: KeyframeThresholds,
    pub fragments: FragmentsConfig,
    pub segmentation: SegmentParams,
    pub mpi: MpiConfig,
    pub optimize: OptimConfig,
}

/// A configuration problem, naming the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {msg}")]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError {
            field: field.into(),
            msg: format!("must be a positive number, got {v}"),
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError {
            field: "config".into(),
            msg: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("grid.voxel_size", self.grid.voxel_size)?;
        positive("grid.truncation", self.grid.truncation)?;
        if !(self.grid.max_depth >= 0.0) {
            return Err(ConfigError {
                field: "grid.max_depth".into(),
                msg: format!("must be non-negative, got {}", self.grid.max_depth),
            });
        }
        if self.grid.fragment_dims < 2 {
            return Err(ConfigError {
                field: "grid.fragment_dims".into(),
                msg: "must be at least 2".into(),
            });
        }
        positive("keyframes.rotation_deg", self.keyframes.rotation_deg)?;
        positive("keyframes.translation", self.keyframes.translation)?;
        if self.fragments.views_per_fragment < 2 {
            return Err(ConfigError {
                field: "fragments.views_per_fragment".into(),
                msg: "must be at least 2".into(),
            });
        }
        positive("fragments.target_distance", self.fragments.target_distance)?;
        positive("segmentation.k", self.segmentation.k)?;
        positive("segmentation.sigma", self.segmentation.sigma)?;
        if self.mpi.num_planes == 0 {
            return Err(ConfigError {
                field: "mpi.num_planes".into(),
                msg: "must be at least 1".into(),
            });
        }
        positive("mpi.min_depth", self.mpi.min_depth)?;
        if !(self.mpi.max_depth > self.mpi.min_depth) {
            return Err(ConfigError {
                field: "mpi.max_depth".into(),
                msg: "must exceed mpi.min_depth".into(),
            });
        }
        self.optimize.validate().map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split_whitespace()
                .find(|w| w.starts_with("lambda_") || w.ends_with("learning_rate") || *w == "momentum")
                .map_or("optimize".to_string(), |w| format!("optimize.{}", w.trim_end_matches(':')));
            ConfigError { field, msg }
        })
    }

    pub fn fragment_config(&self) -> FragmentConfig {
        FragmentConfig {
            views_per_fragment: self.fragments.views_per_fragment,
            dims: [self.grid.fragment_dims; 3],
            voxel_size: self.grid.voxel_size,
            truncation: self.grid.truncation,
            target_distance: self.fragments.target_distance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let part = RunConfig::from_toml("[grid]\nvoxel_size = 0.02\nfragment_dims = 32\ntruncation = 0.1\nmax_depth = 2.0\n").unwrap();
        assert_eq!(part.grid.voxel_size, 0.02);
        assert_eq!(part.optimize, OptimConfig::default());
        assert!(RunConfig::from_toml("[grid]\nvoxel = 1\n").is_err());
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::default();
        c.grid.voxel_size = -1.0;
        assert_eq!(c.validate().unwrap_err().field, "grid.voxel_size");
        let mut c = RunConfig::default();
        c.optimize.weights.lambda_nerf = f64::NAN;
        assert_eq!(c.validate().unwrap_err().field, "optimize.lambda_nerf");
        let mut c = RunConfig::default();
        c.optimize.learning_rate = 0.0;
        assert_eq!(c.validate().unwrap_err().field, "optimize.learning_rate");
        assert!(RunConfig::default().validate().is_ok());
    }
}

//! Physical constants and the measurement-setup configuration document.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_layout, DoIGrid, SensorLayout};
use crate::io::Hasher;

/// Nominal free-space speed of light; gives a 0.125 m wavelength at 2.4 GHz.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Converts a natural-log amplitude ratio to dB power: 20·log10(e).
pub const C0: f64 = 8.685_889_638_065_037;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub frequency_hz: f64,
}

impl PhysicsConfig {
    pub fn new(frequency_hz: f64) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        Ok(Self { frequency_hz })
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { frequency_hz: 2.4e9 }
    }
}

/// Geometry and physics of one imaging setup, as stored in JSON config files.
///
/// The DoI and the node square are both centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupConfig {
    pub frequency_hz: f64,
    pub doi_size_m: f64,
    pub forward_grid: usize,
    pub inverse_grid: usize,
    pub node_count: usize,
    pub ring_side_m: f64,
}

impl Default for SetupConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 2.4e9,
            doi_size_m: 1.5,
            forward_grid: 400,
            inverse_grid: 50,
            node_count: 40,
            ring_side_m: 3.0,
        }
    }
}

impl SetupConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        PhysicsConfig::new(self.frequency_hz)?;
        if !(self.doi_size_m.is_finite() && self.doi_size_m > 0.0) {
            return Err(Error::InvalidConfig("doi_size_m must be positive".into()));
        }
        if self.forward_grid == 0 || self.inverse_grid == 0 {
            return Err(Error::InvalidConfig("grid sizes must be nonzero".into()));
        }
        if self.node_count < 3 {
            return Err(Error::InvalidConfig("node_count must be at least 3".into()));
        }
        if !(self.ring_side_m > self.doi_size_m) {
            return Err(Error::InvalidConfig(
                "ring_side_m must exceed doi_size_m".into(),
            ));
        }
        Ok(())
    }

    pub fn physics(&self) -> PhysicsConfig {
        PhysicsConfig {
            frequency_hz: self.frequency_hz,
        }
    }

    pub fn forward_grid(&self) -> Result<DoIGrid> {
        DoIGrid::square(self.doi_size_m, self.forward_grid)
    }

    pub fn inverse_grid(&self) -> Result<DoIGrid> {
        DoIGrid::square(self.doi_size_m, self.inverse_grid)
    }

    pub fn layout(&self) -> Result<SensorLayout> {
        make_layout(self.node_count, self.ring_side_m, &self.inverse_grid()?)
    }

    /// Digest over every field; used in manifests and cache keys.
    pub fn hash(&self) -> String {
        Hasher::new()
            .f64(self.frequency_hz)
            .f64(self.doi_size_m)
            .u64(self.forward_grid as u64)
            .u64(self.inverse_grid as u64)
            .u64(self.node_count as u64)
            .f64(self.ring_side_m)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let cfg = PhysicsConfig::default();
        assert!((cfg.wavelength() - 0.125).abs() < 1e-15);
        let rel = (cfg.wavenumber() * cfg.wavelength() - 2.0 * PI).abs() / (2.0 * PI);
        assert!(rel < 1e-12);
        assert!(C0 > 8.6858 && C0 < 8.6860);
        assert!((C0 - 20.0 * std::f64::consts::E.log10()).abs() < 1e-14);
    }

    #[test]
    fn config_json_keys() {
        let json = r#"{"frequency_hz": 2.4e9, "doi_size_m": 1.5, "forward_grid": 128,
                       "inverse_grid": 50, "node_count": 40, "ring_side_m": 3.0}"#;
        let cfg: SetupConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.forward_grid, 128);
        assert_eq!(cfg.layout().unwrap().link_count(), 780);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SetupConfig::default();
        cfg.ring_side_m = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SetupConfig::default();
        cfg.frequency_hz = -1.0;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<SetupConfig>(r#"{"frequency_hz": 1.0}"#).is_err());
    }
}

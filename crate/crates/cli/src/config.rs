use std::fs;
use std::path::{Path, PathBuf};

use cmr_phase::descriptor::{DescriptorConfig, FocusStrategy};
use cmr_phase::evalqc::DEFAULT_CUTOFF_THRESHOLD;
use cmr_phase::imgvol::PreprocessConfig;
use cmr_phase::register::RegistrationConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Length of the temporal-repetition compatibility mode.
pub const REPEAT_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusConfig {
    pub strategy: FocusStrategy,
    /// Threshold quantile of the temporal-MSE focus.
    pub mse_quantile: f64,
    /// Binary LV mask on the analysis grid (raw+json, shape `[Z, Y, X]`).
    pub lv_mask: Option<PathBuf>,
    /// RV insertion points `(z, y, x)` on the analysis grid.
    pub rvip_ant: Option<[f64; 3]>,
    pub rvip_inf: Option<[f64; 3]>,
}

impl Default for FocusConfig {
    fn default() -> Self {
        Self {
            strategy: FocusStrategy::Mse,
            mse_quantile: 0.7,
            lv_mask: None,
            rvip_ant: None,
            rvip_inf: None,
        }
    }
}

impl FocusConfig {
    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            FocusStrategy::Lv if self.lv_mask.is_none() => {
                Err(CliError::usage("focus `lv` needs an LV mask (--lv-mask FILE)"))
            }
            FocusStrategy::Sept if self.rvip_ant.is_none() || self.rvip_inf.is_none() => Err(CliError::usage(
                "focus `sept` needs both RV insertion points (--rvip-ant Z,Y,X --rvip-inf Z,Y,X)",
            )),
            _ => Ok(()),
        }
    }
}

/// Every tunable of a run. Loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub registration: RegistrationConfig,
    pub descriptor: DescriptorConfig,
    pub focus: FocusConfig,
    pub cutoff_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            registration: RegistrationConfig::default(),
            descriptor: DescriptorConfig::default(),
            focus: FocusConfig::default(),
            cutoff_threshold: DEFAULT_CUTOFF_THRESHOLD,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read `{}`: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config `{}`: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.focus.validate()?;
        let d = &self.descriptor;
        if !(d.mask_quantile > 0.0 && d.mask_quantile < 1.0) {
            return Err(CliError::usage(format!("mask quantile must lie in (0, 1), got {}", d.mask_quantile)));
        }
        if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
            return Err(CliError::usage(format!("sigma must be >= 0, got {}", d.sigma)));
        }
        if !self.cutoff_threshold.is_finite() {
            return Err(CliError::usage("cut-off threshold must be finite"));
        }
        Ok(())
    }
}

/// Parses `z,y,x`.
pub fn parse_coord(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected Z,Y,X, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates() {
        assert_eq!(parse_coord("1, 2.5,3").unwrap(), [1.0, 2.5, 3.0]);
        assert!(parse_coord("1,2").is_err());
        assert!(parse_coord("a,b,c").is_err());
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"registration": {"lambda": 0.5}, "focus": {"strategy": "vol"}}"#).unwrap();
        assert_eq!(c.registration.lambda, 0.5);
        assert_eq!(c.registration.iters_per_level, RegistrationConfig::default().iters_per_level);
        assert_eq!(c.focus.strategy, FocusStrategy::Vol);
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn landmark_requirements() {
        let mut c = RunConfig::default();
        c.focus.strategy = FocusStrategy::Sept;
        assert_eq!(c.validate().unwrap_err().kind, crate::error::Kind::Usage);
        c.focus.rvip_ant = Some([1.0, 2.0, 3.0]);
        c.focus.rvip_inf = Some([1.0, 4.0, 3.0]);
        assert!(c.validate().is_ok());
        c.focus.strategy = FocusStrategy::Lv;
        assert!(c.validate().is_err());
    }
}

//! Named parameter presets.

use serde::{Deserialize, Serialize};

use crate::bounds::ExponentProfile;
use crate::error::{Error, Result};
use crate::instance::{derive_params, InstanceParams, Prior};

pub const SMALL: (u64, u64, u64, u64) = (64, 8, 16, 64);
pub const LARGE: (u64, u64, u64, u64) = (64, 8, 16, 512);
pub const TINY: (u64, u64, u64, u64) = (4, 2, 3, 23);

/// `(w, k, h, P)` for an instance preset.
pub fn instance_tuple(name: &str) -> Result<(u64, u64, u64, u64)> {
    match name {
        "small" => Ok(SMALL),
        "large" => Ok(LARGE),
        "tiny" => Ok(TINY),
        other => Err(Error::param(
            "profile",
            format!("unknown instance profile `{other}` (expected tiny|small|large)"),
        )),
    }
}

pub fn instance(name: &str) -> Result<InstanceParams> {
    let (w, k, h, p) = instance_tuple(name)?;
    derive_params(w, k, h, p, Prior::Uniform)
}

pub fn small() -> InstanceParams {
    instance("small").expect("preset is valid")
}

pub fn large() -> InstanceParams {
    instance("large").expect("preset is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremPreset {
    pub alpha: f64,
    pub profile: ExponentProfile,
}

/// `gamma_w = 2/3 - 4a`, `gamma_k = 1/3 - 2a`, `gamma_h = 1/3 - a`.
pub fn theorem(alpha: f64) -> Result<TheoremPreset> {
    Ok(TheoremPreset { alpha, profile: ExponentProfile::corollary(alpha)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(small().t, 458_752);
        assert_eq!(large().t, 3_670_016);
        assert_eq!(small().t, 2 * 64 * 64 * (3 * 16 + 8));
        assert!(theorem(1.0 / 36.0).is_ok());
        assert!(theorem(0.12).is_err());
        assert!(instance("huge").is_err());
    }
}

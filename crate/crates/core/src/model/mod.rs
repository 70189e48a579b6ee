//! The joint super-resolution / inverse-tone-mapping network.
//!
//! Structure: a global-priors extraction module (two pooling branches that
//! compress the input image into a short vector), a stack of residual
//! modulation blocks that inject that vector plus a per-block spatial map
//! into the feature stream, a pixel-shuffle upsampler, and a bicubic skip
//! connection so the zero-weight network is exactly the bicubic baseline.

mod blocks;
mod net;
mod params;

pub mod gradsuite;

pub use blocks::*;
pub use net::*;
pub use params::*;

use crate::error::{Error, Result};
use crate::image_ops::FilterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modulation {
    /// Guided modulation: per-channel affine from the priors vector plus a
    /// per-block spatial map, fused by broadcast addition.
    Gsmb,
    /// Spatial feature transform: full gamma/beta maps from a condition
    /// head on the input image. Ignores the priors vector.
    Sft,
    /// Global feature modulation: per-channel affine from the priors
    /// vector only.
    Gfm,
}

impl std::str::FromStr for Modulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GSMB" => Ok(Modulation::Gsmb),
            "SFT" => Ok(Modulation::Sft),
            "GFM" => Ok(Modulation::Gfm),
            other => Err(Error::arg(
                "modulation",
                format!("unknown kind {other:?}, expected GSMB|SFT|GFM"),
            )),
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modulation::Gsmb => "gsmb",
            Modulation::Sft => "sft",
            Modulation::Gfm => "gfm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMask {
    Both,
    CcpOnly,
    SspOnly,
}

impl BranchMask {
    pub fn ccp_active(self) -> bool {
        self != BranchMask::SspOnly
    }
    pub fn ssp_active(self) -> bool {
        self != BranchMask::CcpOnly
    }
}

impl std::fmt::Display for BranchMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BranchMask::Both => "both",
            BranchMask::CcpOnly => "ccp_only",
            BranchMask::SspOnly => "ssp_only",
        })
    }
}

impl std::str::FromStr for BranchMask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "both" => Ok(BranchMask::Both),
            "ccp_only" => Ok(BranchMask::CcpOnly),
            "ssp_only" => Ok(BranchMask::SspOnly),
            other => Err(Error::arg(
                "branch_mask",
                format!("unknown mask {other:?}, expected both|ccp_only|ssp_only"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModelConfig {
    pub scale: usize,
    pub n_jmrm: usize,
    pub channels: usize,
    pub n_cccb: usize,
    pub n_sscb: usize,
    pub prior_dim_c: usize,
    pub prior_dim_s: usize,
    pub modulation: Modulation,
    pub ccp_guided_filter: bool,
    pub branch_mask: BranchMask,
    pub gf_radius: usize,
    pub gf_eps: f64,
    // fixed-width internals, exposed so small test configs exist
    pub cccb_width: usize,
    pub sscb_width: usize,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    pub drop_block_size: usize,
    pub drop_block_keep: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub in_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            n_jmrm: 5,
            channels: 64,
            n_cccb: 5,
            n_sscb: 3,
            prior_dim_c: 6,
            prior_dim_s: 6,
            modulation: Modulation::Gsmb,
            ccp_guided_filter: true,
            branch_mask: BranchMask::Both,
            gf_radius: 5,
            gf_eps: 0.01,
            cccb_width: 32,
            sscb_width: 32,
            leaky_slope: 0.1,
            dropout_p: 0.5,
            drop_block_size: 3,
            drop_block_keep: 0.9,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            in_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::arg("ModelConfig", format!("scale must be 2 or 4, got {}", self.scale)));
        }
        for (name, v) in [
            ("n_jmrm", self.n_jmrm),
            ("channels", self.channels),
            ("n_cccb", self.n_cccb),
            ("n_sscb", self.n_sscb),
            ("prior_dim_c", self.prior_dim_c),
            ("prior_dim_s", self.prior_dim_s),
            ("cccb_width", self.cccb_width),
            ("sscb_width", self.sscb_width),
        ] {
            if v == 0 {
                return Err(Error::arg("ModelConfig", format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::arg("ModelConfig", "dropout_p must be in [0, 1)"));
        }
        if !(0.0 < self.drop_block_keep && self.drop_block_keep <= 1.0) {
            return Err(Error::arg("ModelConfig", "drop_block_keep must be in (0, 1]"));
        }
        if self.drop_block_size % 2 == 0 || self.drop_block_size == 0 {
            return Err(Error::arg("ModelConfig", "drop_block_size must be odd"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || self.leaky_slope == 0.0 {
            return Err(Error::arg("ModelConfig", "leaky_slope must be in (0, 1)"));
        }
        if self.bn_eps <= 0.0 || self.in_eps <= 0.0 || self.gf_eps <= 0.0 {
            return Err(Error::arg("ModelConfig", "eps values must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::arg("ModelConfig", "bn_momentum must be in [0, 1]"));
        }
        self.filter_config().validate()?;
        Ok(())
    }

    pub fn prior_dim(&self) -> usize {
        self.prior_dim_c + self.prior_dim_s
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            radius: self.gf_radius,
            eps: self.gf_eps,
        }
    }

    /// Minimum input side length the priors branches can pool down.
    pub fn min_input_side(&self) -> usize {
        let mut need: usize = 1;
        if self.branch_mask.ccp_active() {
            need = need.max(1 << self.n_cccb);
        }
        if self.branch_mask.ssp_active() {
            need = need.max(1 << self.n_sscb);
        }
        need
    }

    /// Apply one `key=value` setting from a config file.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "scale" => self.scale = value.parse().map_err(|_| bad(key))?,
            "n_jmrm" => self.n_jmrm = value.parse().map_err(|_| bad(key))?,
            "channels" => self.channels = value.parse().map_err(|_| bad(key))?,
            "n_cccb" => self.n_cccb = value.parse().map_err(|_| bad(key))?,
            "n_sscb" => self.n_sscb = value.parse().map_err(|_| bad(key))?,
            "prior_dim_c" => self.prior_dim_c = value.parse().map_err(|_| bad(key))?,
            "prior_dim_s" => self.prior_dim_s = value.parse().map_err(|_| bad(key))?,
            "modulation" => self.modulation = value.parse()?,
            "ccp_guided_filter" => {
                self.ccp_guided_filter = value.parse().map_err(|_| bad(key))?
            }
            "branch_mask" => self.branch_mask = value.parse()?,
            "gf_radius" => self.gf_radius = value.parse().map_err(|_| bad(key))?,
            "gf_eps" => self.gf_eps = value.parse().map_err(|_| bad(key))?,
            "cccb_width" => self.cccb_width = value.parse().map_err(|_| bad(key))?,
            "sscb_width" => self.sscb_width = value.parse().map_err(|_| bad(key))?,
            "leaky_slope" => self.leaky_slope = value.parse().map_err(|_| bad(key))?,
            "dropout_p" => self.dropout_p = value.parse().map_err(|_| bad(key))?,
            "drop_block_size" => self.drop_block_size = value.parse().map_err(|_| bad(key))?,
            "drop_block_keep" => self.drop_block_keep = value.parse().map_err(|_| bad(key))?,
            "bn_momentum" => self.bn_momentum = value.parse().map_err(|_| bad(key))?,
            "bn_eps" => self.bn_eps = value.parse().map_err(|_| bad(key))?,
            "in_eps" => self.in_eps = value.parse().map_err(|_| bad(key))?,
            other => return Err(Error::Config(format!("unknown model config key {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.prior_dim(), 12);
        assert_eq!(cfg.min_input_side(), 32);
    }

    #[test]
    fn kv_roundtrip_and_rejects() {
        let mut cfg = ModelConfig::default();
        cfg.apply_kv("scale", "2").unwrap();
        cfg.apply_kv("modulation", "gfm").unwrap();
        cfg.apply_kv("branch_mask", "ccp_only").unwrap();
        assert_eq!(cfg.scale, 2);
        assert_eq!(cfg.modulation, Modulation::Gfm);
        assert!(cfg.apply_kv("scale", "seven").is_err());
        assert!(cfg.apply_kv("nonsense", "1").is_err());
        cfg.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_scale() {
        let cfg = ModelConfig {
            scale: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn masked_branch_relaxes_min_side() {
        let cfg = ModelConfig {
            branch_mask: BranchMask::SspOnly,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.min_input_side(), 8);
    }
}

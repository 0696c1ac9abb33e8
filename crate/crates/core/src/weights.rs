//! Per-sample loss weights derived from rank agreement and relation stability.
//!
//! `w^ρ = 1 − ln(1 + βρ)` boosts images whose predicted relation disagrees
//! with the annotation; `w^S = (υ + ηS)^γ` boosts images whose relations are
//! reliable. Both are plain numbers: the optimizer never differentiates them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImageId;
use crate::registry::Registry;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::upsilon")]
    pub upsilon: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// `S_x` assigned to images with a single foreground class.
    #[serde(default = "defaults::single_class_stability")]
    pub single_class_stability: f64,
}

mod defaults {
    pub fn beta() -> f64 {
        0.5
    }
    pub fn upsilon() -> f64 {
        0.95
    }
    pub fn eta() -> f64 {
        0.1
    }
    pub fn gamma() -> f64 {
        1.1
    }
    pub fn single_class_stability() -> f64 {
        1.0
    }
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            beta: defaults::beta(),
            upsilon: defaults::upsilon(),
            eta: defaults::eta(),
            gamma: defaults::gamma(),
            single_class_stability: defaults::single_class_stability(),
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        // υ + ηS is affine in S, so positivity at both ends covers [0, 1]
        if !(self.upsilon > 0.0 && self.upsilon + self.eta > 0.0) {
            return Err(Error::Config(format!(
                "upsilon + eta * S must be positive on [0, 1] (upsilon = {}, eta = {})",
                self.upsilon, self.eta
            )));
        }
        if !self.gamma.is_finite() || !self.eta.is_finite() || !self.upsilon.is_finite() {
            return Err(Error::Config("weight parameters must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.single_class_stability) {
            return Err(Error::Config(format!(
                "single_class_stability must lie in [0, 1], got {}",
                self.single_class_stability
            )));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "beta must lie strictly inside (0, 1), got {beta}"
        )))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::domain(format!("correlation {rho} outside [-1, 1]")))
    }
}

pub fn rho_weight(rho: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_rho(rho)?;
    Ok(1.0 - (beta * rho).ln_1p())
}

/// `∂w^ρ/∂ρ = −β/(1 + βρ)`.
pub fn rho_weight_gradient(rho: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_rho(rho)?;
    Ok(-beta / (1.0 + beta * rho))
}

pub fn stability_weight(s: f64, cfg: &WeightConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&s), "stability {s} outside [0, 1]");
    (cfg.upsilon + cfg.eta * s).powf(cfg.gamma)
}

/// Weights of one training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub image_id: ImageId,
    /// Correlation used for weighting; 0 when it was undefined.
    pub rho: f64,
    pub rho_defined: bool,
    pub w_rho: f64,
    /// Stability used for weighting; the configured convention for
    /// single-class images.
    pub s_x: f64,
    pub s_defined: bool,
    pub w_s: f64,
    pub combined: f64,
}

/// `(1/N) Σ w^ρ_i · w^S_i · L_i`.
pub fn batch_weighted_loss(losses: &[f64], records: &[WeightRecord]) -> Result<f64> {
    if losses.len() != records.len() {
        return Err(Error::domain(format!(
            "{} losses but {} weight records",
            losses.len(),
            records.len()
        )));
    }
    if losses.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let total: f64 = losses
        .iter()
        .zip(records)
        .map(|(l, r)| r.w_rho * r.w_s * l)
        .sum();
    Ok(total / losses.len() as f64)
}

/// How a training image's rank agreement and stability become weights.
pub trait SampleWeighting: Send + Sync {
    fn rho_factor(&self, rho: f64, cfg: &WeightConfig) -> Result<f64>;
    fn stability_factor(&self, s: f64, cfg: &WeightConfig) -> f64;

    /// Builds the full record, mapping an undefined ρ to 0 and an undefined
    /// `S_x` to `cfg.single_class_stability`.
    fn record(
        &self,
        image_id: ImageId,
        rho: Option<f64>,
        s_x: Option<f64>,
        cfg: &WeightConfig,
    ) -> Result<WeightRecord> {
        let r = rho.unwrap_or(0.0);
        let s = s_x.unwrap_or(cfg.single_class_stability);
        let w_rho = self.rho_factor(r, cfg)?;
        let w_s = self.stability_factor(s, cfg);
        Ok(WeightRecord {
            image_id,
            rho: r,
            rho_defined: rho.is_some(),
            w_rho,
            s_x: s,
            s_defined: s_x.is_some(),
            w_s,
            combined: w_rho * w_s,
        })
    }
}

/// Both factors, as in the full method.
pub struct Kgat;
/// Every weight is 1.
pub struct Plain;
/// Rank-agreement factor only.
pub struct RhoOnly;
/// Stability factor only.
pub struct StabilityOnly;

impl SampleWeighting for Kgat {
    fn rho_factor(&self, rho: f64, cfg: &WeightConfig) -> Result<f64> {
        rho_weight(rho, cfg.beta)
    }
    fn stability_factor(&self, s: f64, cfg: &WeightConfig) -> f64 {
        stability_weight(s, cfg)
    }
}

impl SampleWeighting for Plain {
    fn rho_factor(&self, _rho: f64, _cfg: &WeightConfig) -> Result<f64> {
        Ok(1.0)
    }
    fn stability_factor(&self, _s: f64, _cfg: &WeightConfig) -> f64 {
        1.0
    }
}

impl SampleWeighting for RhoOnly {
    fn rho_factor(&self, rho: f64, cfg: &WeightConfig) -> Result<f64> {
        rho_weight(rho, cfg.beta)
    }
    fn stability_factor(&self, _s: f64, _cfg: &WeightConfig) -> f64 {
        1.0
    }
}

impl SampleWeighting for StabilityOnly {
    fn rho_factor(&self, _rho: f64, _cfg: &WeightConfig) -> Result<f64> {
        Ok(1.0)
    }
    fn stability_factor(&self, s: f64, cfg: &WeightConfig) -> f64 {
        stability_weight(s, cfg)
    }
}

/// All built-in weighting schemes by name.
pub fn weighting_schemes() -> Registry<dyn SampleWeighting> {
    let mut reg: Registry<dyn SampleWeighting> = Registry::new("weighting scheme");
    reg.register("kgat", Box::new(Kgat))
        .register("plain", Box::new(Plain))
        .register("rho-only", Box::new(RhoOnly))
        .register("stability-only", Box::new(StabilityOnly));
    reg
}

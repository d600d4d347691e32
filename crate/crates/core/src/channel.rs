//! Single-bounce reflection RSS model and the log-distance LoS power model.
//!
//! With the line-of-sight amplitude `d^(-eta/2)` and a reflected amplitude
//! `-gamma (d + delta)^(-eta/2)`, the received power in dB relative to the
//! LoS power depends only on the excess path length `delta` of the reflection
//! point. The relative reflected amplitude is
//! `g = gamma / (1 + delta/d)^(eta/2)`, and the RSS deviation oscillates with
//! period one wavelength in `delta` between `20 log10(1 - g)` and
//! `20 log10(1 + g)`.

use std::f64::consts::{LN_10, PI};

use crate::error::{Error, Result};
use crate::geometry::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionParams {
    /// Reflected-to-incident amplitude ratio.
    pub gamma: f64,
    /// Path-loss exponent.
    pub eta: f64,
    /// Transmitter-receiver distance in meters.
    pub link_length: f64,
    pub frequency_hz: f64,
}

impl ReflectionParams {
    pub fn new(gamma: f64, eta: f64, link_length: f64, frequency_hz: f64) -> Result<Self> {
        let p = ReflectionParams {
            gamma,
            eta,
            link_length,
            frequency_hz,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::domain(format!(
                "reflection coefficient must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::domain(format!("path-loss exponent must be positive, got {}", self.eta)));
        }
        if !(self.link_length > 0.0) {
            return Err(Error::domain(format!("link length must be positive, got {}", self.link_length)));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::domain(format!("carrier frequency must be positive, got {}", self.frequency_hz)));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    /// Relative amplitude of the reflected component, `gamma / (1 + delta/d)^(eta/2)`.
    fn relative_amplitude(&self, excess: f64) -> f64 {
        self.gamma / (1.0 + excess / self.link_length).powf(self.eta / 2.0)
    }
}

fn check_excess(excess: f64) -> Result<()> {
    if excess >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("excess path length must be nonnegative, got {excess}")))
    }
}

/// RSS deviation in dB caused by a single reflection with excess path length
/// `excess` (meters).
pub fn zeta(excess: f64, params: &ReflectionParams) -> Result<f64> {
    check_excess(excess)?;
    params.validate()?;
    let gamma = params.gamma;
    let spread = (1.0 + excess / params.link_length).powf(params.eta);
    let phase = 2.0 * PI * excess * params.frequency_hz / SPEED_OF_LIGHT;
    let power_term = 10.0 * (1.0 + gamma * gamma / spread).log10();
    let phase_term = 10.0
        * (1.0 - 2.0 * gamma * spread.sqrt() / (gamma * gamma + spread) * phase.cos()).log10();
    Ok(power_term + phase_term)
}

/// Upper and lower envelopes `(zeta_u, zeta_l)` of [`zeta`] in dB.
pub fn envelope_pair(excess: f64, params: &ReflectionParams) -> Result<(f64, f64)> {
    check_excess(excess)?;
    params.validate()?;
    let g = params.relative_amplitude(excess);
    if 1.0 - g <= 0.0 {
        return Err(Error::domain("lower envelope argument is not positive"));
    }
    Ok((20.0 * (1.0 + g).log10(), 20.0 * (1.0 - g).log10()))
}

/// Two-term expansion of the envelopes around `excess = 0`, valid for
/// `excess << link_length`.
///
/// Both envelopes use the slope factor `(eta/2) * gamma / (gamma + 1)`. That is
/// the exact first-order coefficient for the upper envelope; for the lower
/// envelope the exact factor would be `gamma / (1 - gamma)`, so the lower
/// expansion drifts faster with `excess / link_length`.
pub fn envelope_linearized(excess: f64, params: &ReflectionParams) -> Result<(f64, f64)> {
    check_excess(excess)?;
    params.validate()?;
    let gamma = params.gamma;
    let slope = params.eta / 2.0 * gamma / (gamma + 1.0) * excess / params.link_length;
    let k = 20.0 / LN_10;
    let upper = k * ((1.0 + gamma).ln() - slope);
    let lower = k * ((1.0 - gamma).ln() + slope);
    Ok((upper, lower))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossParams {
    /// Transmit power in dBm.
    pub ps_dbm: f64,
    /// Loss at the reference distance in dB.
    pub p1_db: f64,
    /// Reference distance in meters.
    pub d1_m: f64,
    pub eta: f64,
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d1_m > 0.0) {
            return Err(Error::domain(format!("reference distance must be positive, got {}", self.d1_m)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::domain(format!("path-loss exponent must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Line-of-sight received power predicted by the log-distance model, in dB.
pub fn los_power(params: &PathLossParams, distance: f64) -> Result<f64> {
    params.validate()?;
    if !(distance > 0.0) {
        return Err(Error::domain(format!("distance must be positive, got {distance}")));
    }
    Ok(params.ps_dbm - params.p1_db - 10.0 * params.eta * (distance / params.d1_m).log10())
}

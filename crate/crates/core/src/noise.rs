//! Power-measurement noise of a radio that averages `K` complex baseband
//! samples.
//!
//! Each sample's noise power `|n_k|^2` is exponential with mean `2 sigma^2`, so
//! the averaged noise power `S_K` is gamma distributed with shape `K` and scale
//! `2 sigma^2 / K`. The logarithmic noise term added to an RSS reading with
//! noise-free power `P_c` is `10 log10(1 + S_K / P_c)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default sample count of an IEEE 802.15.4 power measurement.
pub const DEFAULT_SAMPLES: u32 = 512;

/// Berry-Esseen bound constant for sums of unit-shape gamma variates.
pub const BERRY_ESSEEN_EXPONENTIAL: f64 = 0.8103291;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-quadrature noise variance in linear power units (mW).
    pub sigma2: f64,
    /// Samples averaged per power measurement.
    pub samples: u32,
    /// RSS quantization step in dB; zero disables quantization.
    pub quantization_step: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64, samples: u32, quantization_step: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::domain(format!("noise variance must be positive, got {sigma2}")));
        }
        if samples == 0 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        if !(quantization_step >= 0.0) {
            return Err(Error::domain("quantization step must be nonnegative"));
        }
        Ok(NoiseModel {
            sigma2,
            samples,
            quantization_step,
        })
    }

    /// Noise model whose LoS signal of linear power `los_power_mw` has the
    /// given signal-to-noise ratio.
    pub fn from_snr(los_power_mw: f64, snr_db: f64, samples: u32, quantization_step: f64) -> Result<Self> {
        NoiseModel::new(los_power_mw / 10f64.powf(snr_db / 10.0), samples, quantization_step)
    }

    /// Distribution of the averaged noise power.
    pub fn power_sum_distribution(&self) -> Gamma<f64> {
        let k = f64::from(self.samples);
        Gamma::new(k, 2.0 * self.sigma2 / k).expect("validated model has positive shape and scale")
    }

    pub fn power_sum_mean(&self) -> f64 {
        2.0 * self.sigma2
    }

    pub fn power_sum_variance(&self) -> f64 {
        4.0 * self.sigma2 * self.sigma2 / f64::from(self.samples)
    }
}

/// `r`-th raw moment of a gamma variate with the given shape and scale.
pub fn gamma_raw_moment(shape: f64, scale: f64, r: u32) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) {
        return Err(Error::domain(format!(
            "gamma moments need positive shape and scale, got ({shape}, {scale})"
        )));
    }
    let r_f = f64::from(r);
    Ok(scale.powf(r_f) * (ln_gamma(shape + r_f) - ln_gamma(shape)).exp())
}

/// Berry-Esseen right-hand side for a sum of i.i.d. variates with central
/// moments `mu2` and `mu3`.
pub fn berry_esseen_from_moments(mu2: f64, mu3: f64, samples: u32) -> f64 {
    let s = mu2 * mu2.sqrt();
    0.33554 * (mu3 + 0.415 * s) / (s * f64::from(samples).sqrt())
}

/// Upper bound on the CDF distance between the standardized `S_K` and a
/// standard normal.
pub fn berry_esseen_bound(samples: u32) -> f64 {
    BERRY_ESSEEN_EXPONENTIAL / f64::from(samples.max(1)).sqrt()
}

/// Draw one averaged noise power `S_K`.
pub fn sample_power_sum<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> f64 {
    model.power_sum_distribution().sample(rng)
}

/// Mean of the logarithmic noise term as `K` grows without bound.
///
/// `snr_los` is the linear LoS signal-to-noise ratio `P_0 / sigma^2` and
/// `zeta_db` the reflection-induced RSS deviation.
pub fn asymptotic_noise_mean(snr_los: f64, zeta_db: f64) -> Result<f64> {
    if !(snr_los > 0.0) {
        return Err(Error::domain(format!("LoS SNR must be positive, got {snr_los}")));
    }
    Ok(10.0 * (1.0 + 2.0 / snr_los * 10f64.powf(-zeta_db / 10.0)).log10())
}

/// Logarithmic noise term for a given averaged noise power.
pub fn noise_db_from_power_sum(power_sum: f64, signal_power: f64) -> f64 {
    10.0 * (1.0 + power_sum / signal_power).log10()
}

/// One draw of the logarithmic noise term on a signal of linear power
/// `signal_power`.
pub fn measurement_noise_db<R: Rng + ?Sized>(model: &NoiseModel, signal_power: f64, rng: &mut R) -> Result<f64> {
    if !(signal_power > 0.0) {
        return Err(Error::domain(format!("signal power must be positive, got {signal_power}")));
    }
    Ok(noise_db_from_power_sum(sample_power_sum(model, rng), signal_power))
}

/// Round to the nearest multiple of `step`, ties away from zero.
pub fn quantize(value: f64, step: f64) -> f64 {
    if step > 0.0 {
        (value / step).round() * step
    } else {
        value
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn raw_moments() {
        assert_close!(gamma_raw_moment(1.0, 2.0 * 0.3, 1).unwrap(), 0.6, 1e-12);
        assert_close!(gamma_raw_moment(1.0, 1.0, 2).unwrap(), 2.0, 1e-12);
        assert_close!(gamma_raw_moment(3.5, 0.7, 0).unwrap(), 1.0, 1e-12);
        assert!(gamma_raw_moment(0.0, 1.0, 1).is_err());
        assert!(gamma_raw_moment(1.0, -1.0, 1).is_err());
    }

    #[test]
    fn bound_constant_follows_from_exponential_moments() {
        // central moments of |n_k|^2 from its raw moments
        let theta = 2.0 * 0.8;
        let m1 = gamma_raw_moment(1.0, theta, 1).unwrap();
        let m2 = gamma_raw_moment(1.0, theta, 2).unwrap();
        let m3 = gamma_raw_moment(1.0, theta, 3).unwrap();
        let mu2 = m2 - m1 * m1;
        let mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        assert_close!(berry_esseen_from_moments(mu2, mu3, 1), BERRY_ESSEEN_EXPONENTIAL, 1e-6);
    }

    #[test]
    fn bound_values() {
        assert_eq!(berry_esseen_bound(1), 0.8103291);
        assert_close!(berry_esseen_bound(512), 0.8103291 / 512f64.sqrt(), 1e-15);
        assert_close!(berry_esseen_bound(512), 0.035812, 1e-6);
        assert_close!(berry_esseen_bound(4 * 37), berry_esseen_bound(37) / 2.0, 1e-15);
    }

    #[test]
    fn asymptotic_mean_examples() {
        assert_close!(asymptotic_noise_mean(1e15, 0.0).unwrap(), 0.0, 1e-12);
        assert_close!(asymptotic_noise_mean(100.0, 0.0).unwrap(), 10.0 * 1.02f64.log10(), 1e-12);
        assert_close!(asymptotic_noise_mean(100.0, 0.0).unwrap(), 0.0860, 1e-4);
        assert_close!(asymptotic_noise_mean(100.0, -10.0).unwrap(), 0.792, 1e-3);
        assert!(asymptotic_noise_mean(0.0, 0.0).is_err());
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let model = NoiseModel::new(0.5, 64, 0.0).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16).map(|_| sample_power_sum(&model, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn exponential_case_mean() {
        let model = NoiseModel::new(0.25, 1, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_power_sum(&model, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean / 0.5 - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn large_k_variance() {
        let model = NoiseModel::new(1.0, 512, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_power_sum(&model, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / model.power_sum_variance() - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn noise_term_properties() {
        assert!(noise_db_from_power_sum(0.0, 1.0) == 0.0);
        assert!(noise_db_from_power_sum(0.2, 1.0) < noise_db_from_power_sum(0.3, 1.0));
        let model = NoiseModel::new(1e-12, 512, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = measurement_noise_db(&model, 1.0, &mut rng).unwrap();
        assert!((0.0..1e-9).contains(&n));
        assert!(measurement_noise_db(&model, 0.0, &mut rng).is_err());
    }

    #[test]
    fn quantization_rounds_half_away() {
        assert_eq!(quantize(-57.5, 1.0), -58.0);
        assert_eq!(quantize(2.5, 1.0), 3.0);
        assert_eq!(quantize(-0.49, 1.0), -0.0);
        assert_eq!(quantize(1.26, 0.5), 1.5);
        assert_eq!(quantize(1.26, 0.0), 1.26);
    }
}

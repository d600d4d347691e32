//! Link-level presence detectors.
//!
//! A link decides that a reflecting object is present when the magnitude of
//! its baseline-removed RSS exceeds the lower-envelope magnitude at the
//! maximum excess path length. The threshold depends on the pair's length but
//! not on the carrier frequency, so all channels of a pair share it.

use crate::channel::{envelope_pair, ReflectionParams};
use crate::error::{Error, Result};
use crate::geometry::Deployment;

/// Maximum excess path length of a link's effective region, in meters.
pub const DEFAULT_MAX_EXCESS: f64 = 0.15625;

/// Any valid carrier works here: the envelopes do not depend on it.
const NOMINAL_FREQUENCY: f64 = 2.4425e9;

/// Detection threshold `|zeta_l(max_excess)|` in dB for a link of the given
/// length.
pub fn compute_threshold(link_length: f64, gamma: f64, eta: f64, max_excess: f64) -> Result<f64> {
    if !(max_excess > 0.0) {
        return Err(Error::domain(format!("maximum excess path length must be positive, got {max_excess}")));
    }
    let params = ReflectionParams::new(gamma, eta, link_length, NOMINAL_FREQUENCY)?;
    let (upper, lower) = envelope_pair(max_excess, &params)?;
    debug_assert!(lower.abs() >= upper.abs());
    Ok(lower.abs())
}

/// `true` (presence) iff `|z| > threshold`. Equality decides absence.
#[inline]
pub fn decide(z: f64, threshold: f64) -> bool {
    z.abs() > threshold
}

/// `true` iff strictly more than half of the decisions are `true`.
pub fn majority_vote(decisions: &[bool]) -> Result<bool> {
    if decisions.is_empty() {
        return Err(Error::Empty("channel decisions"));
    }
    let ones = decisions.iter().filter(|&&d| d).count();
    Ok(2 * ones > decisions.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub max_excess: f64,
    /// One threshold per pair, in dB.
    pub thresholds: Vec<f64>,
}

impl DetectorConfig {
    pub fn for_deployment(deployment: &Deployment, gamma: f64, eta: f64, max_excess: f64) -> Result<Self> {
        let thresholds = (0..deployment.pair_count())
            .map(|p| compute_threshold(deployment.pair_length(p), gamma, eta, max_excess))
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectorConfig {
            max_excess,
            thresholds,
        })
    }

    pub fn threshold(&self, pair: usize) -> f64 {
        self.thresholds[pair]
    }
}

/// Pack decisions one bit each, first decision in the least significant bit
/// of the first byte.
pub fn pack_bits(decisions: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; decisions.len().div_ceil(8)];
    for (i, _) in decisions.iter().enumerate().filter(|(_, &d)| d) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if bytes.len() != count.div_ceil(8) {
        return Err(Error::Dimension {
            what: "packed detector bytes",
            expected: count.div_ceil(8),
            actual: bytes.len(),
        });
    }
    Ok((0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::envelope_pair;
    use proptest::prelude::*;

    #[test]
    fn threshold_example() {
        let z = compute_threshold(1.0, 0.5, 2.0, 0.15625).unwrap();
        assert_close!(z, -20.0 * (1.0 - 0.5 / 1.15625f64).log10(), 1e-12);
        assert_close!(z, 4.92, 5e-3);
    }

    #[test]
    fn threshold_rises_with_length() {
        // a fixed excess is relatively shorter on a longer link, so the
        // reflected path loses less and the lower envelope deepens
        let mut prev = 0.0;
        for i in 1..=100 {
            let z = compute_threshold(0.2 * i as f64, 0.5, 2.0, 0.15625).unwrap();
            assert!(z > prev);
            prev = z;
        }
        assert!(prev < -20.0 * 0.5f64.log10());
    }

    #[test]
    fn threshold_vanishes_without_reflection() {
        assert!(compute_threshold(3.0, 1e-9, 2.0, 0.15625).unwrap() < 1e-7);
        assert!(compute_threshold(3.0, 0.5, 2.0, 0.0).is_err());
    }

    #[test]
    fn threshold_is_frequency_independent() {
        let at = |f: f64| {
            let p = ReflectionParams::new(0.35, 2.0, 4.2, f).unwrap();
            envelope_pair(0.15625, &p).unwrap().1.abs()
        };
        let z = compute_threshold(4.2, 0.35, 2.0, 0.15625).unwrap();
        for f in [2.405e9, 2.44e9, 2.48e9, 5.8e9] {
            assert_eq!(at(f), z);
        }
    }

    #[test]
    fn decision_rule() {
        assert!(!decide(0.0, 4.92));
        assert!(decide(-5.0, 4.92));
        assert!(decide(5.0, 4.92));
        assert!(!decide(4.92, 4.92));
        assert!(!decide(-4.92, 4.92));
    }

    #[test]
    fn majority() {
        assert!(majority_vote(&[true, true, false]).unwrap());
        assert!(!majority_vote(&[true, false, false]).unwrap());
        assert!(!majority_vote(&[true, true, false, false]).unwrap());
        assert!(majority_vote(&[true]).unwrap());
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn bit_packing_layout() {
        let bits = [true, false, false, false, false, false, false, false, false, true];
        let packed = pack_bits(&bits);
        assert_eq!(packed, vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(unpack_bits(&packed, bits.len()).unwrap(), bits);
        assert!(unpack_bits(&packed, 17).is_err());
    }

    proptest! {
        #[test]
        fn threshold_equals_larger_envelope_magnitude(
            d in 0.3..15.0f64, gamma in 0.01..0.95f64, eta in 1.5..4.5f64, dt in 0.01..2.0f64,
        ) {
            let p = ReflectionParams::new(gamma, eta, d, 2.44e9).unwrap();
            let (u, l) = envelope_pair(dt, &p).unwrap();
            prop_assert_eq!(compute_threshold(d, gamma, eta, dt).unwrap(), u.abs().max(l.abs()));
        }

        #[test]
        fn decision_monotone_in_magnitude(z in -20.0..20.0f64, extra in 0.0..10.0f64, t in 0.0..10.0f64) {
            if decide(z, t) {
                prop_assert!(decide(z.abs() + extra, t));
                prop_assert!(decide(-(z.abs() + extra), t));
            }
        }

        #[test]
        fn packing_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            prop_assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()).unwrap(), bits);
        }
    }
}

//! Distance-error statistics: moments, maximum-likelihood fits and
//! Kolmogorov-Smirnov goodness of fit.

pub mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma as GammaSampler, LogNormal as LogNormalSampler};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma, LogNormal};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};

pub use report::{emit_report, histogram, histogram_csv, reference, HistogramBin, Reference, Report, ReportInputs, REFERENCES};

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Biased `g1` skewness; `None` when the variance is zero.
    pub skewness: Option<f64>,
}

impl ErrorStats {
    pub fn skewness(&self) -> Result<f64> {
        self.skewness
            .ok_or_else(|| Error::Numerical("skewness is undefined for zero variance".into()))
    }
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::Empty("distance errors"));
    }
    if let Some(bad) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::domain(format!("distance errors must be finite and nonnegative, got {bad}")));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for e in errors {
        let d = e - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let variance = if errors.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let (m2, m3) = (m2 / n, m3 / n);
    let skewness = (m2 > 1e-300 * mean.abs().max(1.0)).then(|| m3 / m2.powf(1.5));
    Ok(ErrorStats {
        count: errors.len(),
        mean,
        variance,
        skewness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Rayleigh,
    Gamma,
    Lognormal,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Rayleigh, Family::Gamma, Family::Lognormal];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rayleigh => "rayleigh",
            Family::Gamma => "gamma",
            Family::Lognormal => "lognormal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitted {
    Rayleigh { sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    Lognormal { mu: f64, sigma: f64 },
}

impl Fitted {
    pub fn family(&self) -> Family {
        match self {
            Fitted::Rayleigh { .. } => Family::Rayleigh,
            Fitted::Gamma { .. } => Family::Gamma,
            Fitted::Lognormal { .. } => Family::Lognormal,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Fitted::Rayleigh { sigma } => vec![("sigma", sigma)],
            Fitted::Gamma { shape, scale } => vec![("shape", shape), ("scale", scale)],
            Fitted::Lognormal { mu, sigma } => vec![("mu", mu), ("sigma", sigma)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Fitted::Rayleigh { sigma } => sigma > 0.0 && sigma.is_finite(),
            Fitted::Gamma { shape, scale } => shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite(),
            Fitted::Lognormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid distribution parameters {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Fitted::Rayleigh { sigma } => -(-x * x / (2.0 * sigma * sigma)).exp_m1(),
            Fitted::Gamma { shape, scale } => Gamma::new(shape, 1.0 / scale).expect("validated").cdf(x),
            Fitted::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Fitted::Rayleigh { sigma } => {
                let s2 = sigma * sigma;
                x / s2 * (-x * x / (2.0 * s2)).exp()
            }
            Fitted::Gamma { shape, scale } => Gamma::new(shape, 1.0 / scale).expect("validated").pdf(x),
            Fitted::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").pdf(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Fitted::Rayleigh { sigma } => {
                let e: f64 = Exp1.sample(rng);
                sigma * (2.0 * e).sqrt()
            }
            Fitted::Gamma { shape, scale } => GammaSampler::new(shape, scale).expect("validated").sample(rng),
            Fitted::Lognormal { mu, sigma } => LogNormalSampler::new(mu, sigma).expect("validated").sample(rng),
        }
    }
}

/// Trigamma by upward recurrence to `x >= 10` and the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

const GAMMA_TOLERANCE: f64 = 1e-10;
const GAMMA_MAX_ITER: usize = 100;

/// Maximum-likelihood fit.
pub fn fit_distribution(data: &[f64], family: Family) -> Result<Fitted> {
    if data.is_empty() {
        return Err(Error::Empty("fit data"));
    }
    if let Some(bad) = data.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::domain(format!("fit data must be positive, got {bad}")));
    }
    let n = data.len() as f64;
    let fitted = match family {
        Family::Rayleigh => Fitted::Rayleigh {
            sigma: (data.iter().map(|x| x * x).sum::<f64>() / (2.0 * n)).sqrt(),
        },
        Family::Lognormal => {
            let mu = data.iter().map(|x| x.ln()).sum::<f64>() / n;
            let var = data.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
            Fitted::Lognormal { mu, sigma: var.sqrt() }
        }
        Family::Gamma => {
            let mean = data.iter().sum::<f64>() / n;
            let s = mean.ln() - data.iter().map(|x| x.ln()).sum::<f64>() / n;
            if !(s > 0.0) {
                return Err(Error::Numerical("gamma fit needs non-constant data".into()));
            }
            // closed-form starting point, then Newton on ln k - psi(k) = s
            let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
            let mut converged = false;
            for _ in 0..GAMMA_MAX_ITER {
                let f = k.ln() - digamma(k) - s;
                let df = 1.0 / k - trigamma(k);
                let next = (k - f / df).max(k / 10.0);
                let done = (next - k).abs() <= GAMMA_TOLERANCE * k;
                k = next;
                if done {
                    converged = true;
                    break;
                }
            }
            if !converged || !k.is_finite() {
                return Err(Error::Numerical(format!(
                    "gamma shape iteration did not converge in {GAMMA_MAX_ITER} steps"
                )));
            }
            Fitted::Gamma {
                shape: k,
                scale: mean / k,
            }
        }
    };
    fitted.validate()?;
    Ok(fitted)
}

/// Sup-distance between the empirical CDF of `data` and `cdf`.
pub fn ks_statistic(data: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// p-value of a KS statistic for `n` samples, with the usual finite-sample
/// correction of the argument.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * statistic)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// `true` rejects the hypothesized distribution.
    pub reject: bool,
}

pub fn ks_test(data: &[f64], fitted: &Fitted, significance: f64) -> Result<KsResult> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::domain(format!("significance must lie in (0, 1), got {significance}")));
    }
    fitted.validate()?;
    let statistic = ks_statistic(data, |x| fitted.cdf(x))?;
    let p_value = ks_p_value(statistic, data.len());
    Ok(KsResult {
        statistic,
        p_value,
        reject: p_value < significance,
    })
}

/// KS test whose p-value accounts for fitting the parameters on the same
/// sample: the statistic is compared with `replicates` statistics of samples
/// drawn from the fit and refitted.
pub fn ks_test_bootstrap(
    data: &[f64],
    fitted: &Fitted,
    significance: f64,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<KsResult> {
    let observed = ks_test(data, fitted, significance)?;
    if replicates == 0 {
        return Err(Error::domain("bootstrap needs at least one replicate"));
    }
    let n = data.len();
    let family = fitted.family();
    let stats = map_indexed(exec, replicates, |b| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let sample: Vec<f64> = (0..n).map(|_| fitted.sample(&mut rng)).collect();
        let refit = fit_distribution(&sample, family)?;
        ks_statistic(&sample, |x| refit.cdf(x))
    });
    let mut exceed = 0usize;
    for s in stats {
        if s? >= observed.statistic {
            exceed += 1;
        }
    }
    let p_value = (exceed + 1) as f64 / (replicates + 1) as f64;
    Ok(KsResult {
        statistic: observed.statistic,
        p_value,
        reject: p_value < significance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub fitted: Fitted,
    pub ks: KsResult,
}

/// Fit every family and test each fit against the data.
pub fn fit_all(data: &[f64], significance: f64) -> Result<Vec<FitResult>> {
    Family::ALL
        .iter()
        .map(|&f| {
            let fitted = fit_distribution(data, f)?;
            Ok(FitResult {
                fitted,
                ks: ks_test(data, &fitted, significance)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn draws(f: Fitted, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| f.sample(&mut rng)).collect()
    }

    #[test]
    fn stats_examples() {
        let s = error_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.variance), (2.0, 1.0));
        assert_close!(s.skewness().unwrap(), 0.0, 1e-15);
        let c = error_stats(&[0.4; 5]).unwrap();
        assert_close!(c.mean, 0.4, 1e-15);
        assert_eq!(c.variance, 0.0);
        assert!(c.skewness().is_err());
        assert!(error_stats(&[]).is_err());
        assert!(error_stats(&[-1.0]).is_err());
    }

    #[test]
    fn skewness_oracle() {
        // g1 from raw power sums
        let x = [0.1, 0.5, 0.2, 2.0, 0.3, 0.9];
        let n = x.len() as f64;
        let s1: f64 = x.iter().sum();
        let s2: f64 = x.iter().map(|v| v * v).sum();
        let s3: f64 = x.iter().map(|v| v * v * v).sum();
        let m = s1 / n;
        let m2 = s2 / n - m * m;
        let m3 = s3 / n - 3.0 * m * s2 / n + 2.0 * m.powi(3);
        assert_close!(error_stats(&x).unwrap().skewness().unwrap(), m3 / m2.powf(1.5), 1e-12);
    }

    #[test]
    fn rayleigh_skewness_matches_closed_form() {
        let pi = std::f64::consts::PI;
        let closed = 2.0 * pi.sqrt() * (pi - 3.0) / (4.0 - pi).powf(1.5);
        assert_close!(closed, 0.6311, 1e-4);
        let s = error_stats(&draws(Fitted::Rayleigh { sigma: 1.0 }, 1_000_000, 1)).unwrap();
        assert!((s.skewness().unwrap() - closed).abs() < 0.02);
    }

    #[test]
    fn fits_recover_parameters() {
        let r = fit_distribution(&draws(Fitted::Rayleigh { sigma: 0.2 }, 10_000, 2), Family::Rayleigh).unwrap();
        assert!(matches!(r, Fitted::Rayleigh { sigma } if (sigma - 0.2).abs() < 0.01));
        let l = fit_distribution(&draws(Fitted::Lognormal { mu: 0.0, sigma: 1.0 }, 10_000, 3), Family::Lognormal).unwrap();
        assert!(matches!(l, Fitted::Lognormal { mu, sigma } if mu.abs() < 0.03 && (sigma - 1.0).abs() < 0.03));
        let g = fit_distribution(&draws(Fitted::Gamma { shape: 1.0, scale: 0.7 }, 10_000, 4), Family::Gamma).unwrap();
        assert!(matches!(g, Fitted::Gamma { shape, .. } if (shape - 1.0).abs() < 0.05), "{g:?}");
        assert!(fit_distribution(&[1.0, 0.0], Family::Gamma).is_err());
        assert!(fit_distribution(&[], Family::Rayleigh).is_err());
        assert!(matches!(fit_distribution(&[0.5, 0.5], Family::Gamma), Err(Error::Numerical(_))));
    }

    #[test]
    fn fits_tighten_with_sample_size() {
        let truths = [
            Fitted::Rayleigh { sigma: 0.3 },
            Fitted::Gamma { shape: 2.5, scale: 0.1 },
            Fitted::Lognormal { mu: -1.0, sigma: 0.6 },
        ];
        for truth in truths {
            for (n, tol) in [(1_000, 0.15), (10_000, 0.05), (100_000, 0.015)] {
                let fit = fit_distribution(&draws(truth, n, n as u64), truth.family()).unwrap();
                for ((_, a), (_, b)) in fit.params().iter().zip(truth.params()) {
                    assert!((a - b).abs() <= tol * b.abs().max(1.0), "{truth:?} n={n}: {fit:?}");
                }
            }
        }
    }

    #[test]
    fn gamma_newton_solves_shape_equation() {
        let data = draws(Fitted::Gamma { shape: 0.4, scale: 2.0 }, 5_000, 5);
        let Fitted::Gamma { shape, .. } = fit_distribution(&data, Family::Gamma).unwrap() else {
            unreachable!()
        };
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let s = mean.ln() - data.iter().map(|x| x.ln()).sum::<f64>() / n;
        assert!((shape.ln() - digamma(shape) - s).abs() < 1e-9);
    }

    #[test]
    fn trigamma_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert_close!(trigamma(1.0), pi2 / 6.0, 1e-12);
        assert_close!(trigamma(0.5), pi2 / 2.0, 1e-11);
        // trigamma is the derivative of digamma
        for x in [0.3, 1.7, 4.0, 25.0] {
            let h = 1e-5;
            assert_close!(trigamma(x), (digamma(x + h) - digamma(x - h)) / (2.0 * h), 1e-6 * trigamma(x).max(1.0));
        }
    }

    #[test]
    fn ks_statistic_matches_grid_sup() {
        let data = draws(Fitted::Rayleigh { sigma: 1.0 }, 200, 6);
        let fit = Fitted::Rayleigh { sigma: 1.1 };
        let d = ks_statistic(&data, |x| fit.cdf(x)).unwrap();
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        let max = sorted[sorted.len() - 1] * 1.1;
        let mut brute: f64 = 0.0;
        for i in 0..=100_000 {
            let x = max * i as f64 / 100_000.0;
            let below = sorted.partition_point(|&v| v <= x) as f64 / 200.0;
            let strictly = sorted.partition_point(|&v| v < x) as f64 / 200.0;
            brute = brute.max((below - fit.cdf(x)).abs()).max((strictly - fit.cdf(x)).abs());
        }
        // the grid misses the exact jump points by less than the CDF moves
        // between grid nodes
        assert!((d - brute).abs() < 1e-4, "{d} {brute}");
        assert!(brute <= d + 1e-12);
        // exact sup attained at the sample points
        let at_points = sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
            acc.max(((i + 1) as f64 / 200.0 - fit.cdf(x)).abs()).max((fit.cdf(x) - i as f64 / 200.0).abs())
        });
        assert!((d - at_points).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_values() {
        assert_close!(kolmogorov_survival(1.3581), 0.05, 1e-4);
        assert_close!(kolmogorov_survival(1.2238), 0.10, 1e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(5.0) < 1e-20);
    }

    #[test]
    fn ks_calibration_known_parameters() {
        let truth = Fitted::Gamma { shape: 2.0, scale: 0.15 };
        let accepted = (0..100)
            .filter(|&s| !ks_test(&draws(truth, 1_000, 100 + s), &truth, 0.05).unwrap().reject)
            .count();
        assert!(accepted >= 94, "{accepted}");
    }

    #[test]
    fn ks_rejects_uniform_as_rayleigh() {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..1_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let fit = fit_distribution(&data, Family::Rayleigh).unwrap();
        assert!(ks_test(&data, &fit, 0.05).unwrap().reject);
    }

    #[test]
    fn bootstrap_is_deterministic_and_parallel_safe() {
        let data = draws(Fitted::Rayleigh { sigma: 0.3 }, 300, 9);
        let fit = fit_distribution(&data, Family::Rayleigh).unwrap();
        let a = ks_test_bootstrap(&data, &fit, 0.05, 200, 1, Execution::Sequential).unwrap();
        let b = ks_test_bootstrap(&data, &fit, 0.05, 200, 1, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(!a.reject);
        assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    }

    proptest! {
        #[test]
        fn p_value_in_unit_interval(d in 0.0..1.0f64, n in 1usize..100_000) {
            let p = ks_p_value(d, n);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn variance_nonnegative(v in proptest::collection::vec(0.0..10.0f64, 1..50)) {
            prop_assert!(error_stats(&v).unwrap().variance >= 0.0);
        }
    }
}

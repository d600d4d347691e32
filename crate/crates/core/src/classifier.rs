//! Fade-level link classification and log-distance calibration.
//!
//! A link whose vacant-room RSS sits far below the log-distance prediction is
//! in a deep fade; its reflections are not predictable, so it is excluded from
//! reconstruction. The log-distance parameters themselves can be estimated
//! from the vacant-room baselines: with a shared exponent and one reference
//! loss per channel the model is linear in the unknowns.

use std::collections::BTreeMap;

use crate::channel::{los_power, PathLossParams};
use crate::detector::majority_vote;
use crate::error::{Error, Result};
use crate::geometry::Deployment;
use crate::kv::{parse_f64, KvDocument, KvWriter};

pub const DEFAULT_FADE_THRESHOLD: f64 = -20.0;

/// Deviation of a LoS power estimate from the model prediction, in dB.
pub fn fade_level(los_estimate: f64, predicted: f64) -> f64 {
    los_estimate - predicted
}

/// `true` if the link is usable, `false` if it is blacklisted
/// (`fade <= threshold`).
pub fn blacklist(fade: f64, threshold: f64) -> bool {
    fade > threshold
}

/// Pair-level flag from per-channel flags: the pair is blacklisted only when
/// strictly more than half of its channels are.
pub fn channel_majority_blacklist(usable: &[bool]) -> Result<bool> {
    if usable.is_empty() {
        return Err(Error::Empty("channel blacklist flags"));
    }
    let blacklisted: Vec<bool> = usable.iter().map(|&u| !u).collect();
    Ok(!majority_vote(&blacklisted)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub channel_index: usize,
    pub distance: f64,
    /// Estimated LoS power in dB.
    pub los_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub ps_dbm: f64,
    pub d1_m: f64,
    pub channel_count: usize,
    pub samples: Vec<CalibrationSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathLossFit {
    pub eta: f64,
    /// Reference loss per channel index.
    pub p1_db: Vec<f64>,
    pub residual_norm: f64,
}

impl PathLossFit {
    pub fn params(&self, ps_dbm: f64, d1_m: f64, channel_index: usize) -> PathLossParams {
        PathLossParams {
            ps_dbm,
            p1_db: self.p1_db[channel_index],
            d1_m,
            eta: self.eta,
        }
    }
}

/// Least-squares fit of `los = ps - p1[channel] - 10 eta log10(d / d1)` with a
/// shared exponent.
///
/// Writing `x = 10 log10(d / d1)` and `y = ps - los`, the model is
/// `y = p1[c] + eta x`: parallel lines with per-channel intercepts. The slope
/// is the pooled within-channel regression slope and each intercept follows
/// from the channel means.
pub fn fit_path_loss(cal: &CalibrationSet) -> Result<PathLossFit> {
    if cal.samples.is_empty() {
        return Err(Error::Empty("calibration samples"));
    }
    if !(cal.d1_m > 0.0) {
        return Err(Error::domain("reference distance must be positive"));
    }
    let c = cal.channel_count;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); c];
    for s in &cal.samples {
        if s.channel_index >= c {
            return Err(Error::domain(format!("channel index {} out of range", s.channel_index)));
        }
        if !(s.distance > 0.0 && s.los_db.is_finite()) {
            return Err(Error::domain("calibration samples need positive distances and finite powers"));
        }
        let e = &mut sums[s.channel_index];
        e.0 += 1;
        e.1 += 10.0 * (s.distance / cal.d1_m).log10();
        e.2 += cal.ps_dbm - s.los_db;
    }
    if let Some(missing) = sums.iter().position(|e| e.0 == 0) {
        return Err(Error::domain(format!("no calibration samples for channel index {missing}")));
    }
    let means: Vec<(f64, f64)> = sums
        .iter()
        .map(|&(n, sx, sy)| (sx / n as f64, sy / n as f64))
        .collect();

    let (mut sxy, mut sxx) = (0.0, 0.0);
    for s in &cal.samples {
        let (mx, my) = means[s.channel_index];
        let x = 10.0 * (s.distance / cal.d1_m).log10() - mx;
        sxy += x * (cal.ps_dbm - s.los_db - my);
        sxx += x * x;
    }
    let scale: f64 = means.iter().map(|m| m.0 * m.0).sum::<f64>().max(1.0);
    if sxx <= 1e-12 * scale {
        return Err(Error::RankDeficient(
            "all calibration distances are equal, the path-loss exponent is not identifiable".into(),
        ));
    }
    let eta = sxy / sxx;
    let p1_db: Vec<f64> = means.iter().map(|&(mx, my)| my - eta * mx).collect();
    let residual_norm = cal
        .samples
        .iter()
        .map(|s| {
            let pred = cal.ps_dbm - p1_db[s.channel_index] - eta * 10.0 * (s.distance / cal.d1_m).log10();
            (s.los_db - pred).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Ok(PathLossFit {
        eta,
        p1_db,
        residual_norm,
    })
}

/// How a link's LoS power is estimated from its vacant-room readings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BaselineMethod {
    #[default]
    Mean,
    /// Most populated histogram bin of the given width; for coarsely
    /// quantized RSS.
    HistogramMode { bin_width: f64 },
}

pub fn estimate_baseline(values: &[f64], method: BaselineMethod) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("baseline readings"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    match method {
        BaselineMethod::Mean => Ok(mean),
        BaselineMethod::HistogramMode { bin_width } => {
            if !(bin_width > 0.0) {
                return Err(Error::domain("histogram bin width must be positive"));
            }
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for v in values {
                *counts.entry((v / bin_width).round() as i64).or_default() += 1;
            }
            let best = counts.values().copied().max().unwrap_or(0);
            // ties go to the bin nearest the mean, then the lower bin
            let bin = counts
                .iter()
                .filter(|(_, &n)| n == best)
                .map(|(&b, _)| b)
                .min_by(|a, b| {
                    let da = (*a as f64 * bin_width - mean).abs();
                    let db = (*b as f64 * bin_width - mean).abs();
                    da.total_cmp(&db).then(a.cmp(b))
                })
                .expect("nonempty histogram");
            Ok(bin as f64 * bin_width)
        }
    }
}

/// Where the log-distance parameters come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PathLossSource {
    /// Least-squares estimate from the calibration baselines.
    Fitted,
    /// Known exponent and a reference loss shared by all channels.
    Fixed { eta: f64, p1_db: f64 },
}

/// Everything the per-frame pipeline needs from the vacant-room period.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub ps_dbm: f64,
    pub d1_m: f64,
    pub eta: f64,
    /// Reference loss per channel index.
    pub p1_db: Vec<f64>,
    pub channel_ids: Vec<u8>,
    pub fade_threshold: f64,
    /// LoS power estimate per link id.
    pub baselines: Vec<f64>,
    /// Fade level per link id.
    pub fades: Vec<f64>,
    pub link_usable: Vec<bool>,
    /// Classifier output per pair.
    pub pair_usable: Vec<bool>,
}

impl Calibration {
    /// Classify every link.
    ///
    /// `baselines` are the LoS estimates subtracted from later readings;
    /// `fade_inputs` are the powers compared against the model (usually the
    /// same values, or a single vacant-room reading per link).
    pub fn build(
        deployment: &Deployment,
        baselines: Vec<f64>,
        fade_inputs: &[f64],
        ps_dbm: f64,
        d1_m: f64,
        source: &PathLossSource,
        fade_threshold: f64,
    ) -> Result<Self> {
        let l = deployment.link_count();
        for (what, len) in [("baselines", baselines.len()), ("fade inputs", fade_inputs.len())] {
            if len != l {
                return Err(Error::Dimension {
                    what: if what == "baselines" { "calibration baselines" } else { "calibration fade inputs" },
                    expected: l,
                    actual: len,
                });
            }
        }
        if !(fade_threshold < 0.0) {
            return Err(Error::domain(format!("fade threshold must be negative, got {fade_threshold}")));
        }
        let c = deployment.channel_count();
        let (eta, p1_db) = match source {
            PathLossSource::Fixed { eta, p1_db } => (*eta, vec![*p1_db; c]),
            PathLossSource::Fitted => {
                let samples = (0..l)
                    .map(|id| {
                        let link = deployment.link(id).expect("dense link ids");
                        CalibrationSample {
                            channel_index: link.channel_index,
                            distance: deployment.pair_length(link.pair),
                            los_db: baselines[id],
                        }
                    })
                    .collect();
                let fit = fit_path_loss(&CalibrationSet {
                    ps_dbm,
                    d1_m,
                    channel_count: c,
                    samples,
                })?;
                (fit.eta, fit.p1_db)
            }
        };
        let mut fades = Vec::with_capacity(l);
        for (id, &input) in fade_inputs.iter().enumerate() {
            let link = deployment.link(id).expect("dense link ids");
            let params = PathLossParams {
                ps_dbm,
                p1_db: p1_db[link.channel_index],
                d1_m,
                eta,
            };
            let predicted = los_power(&params, deployment.pair_length(link.pair))?;
            fades.push(fade_level(input, predicted));
        }
        let link_usable: Vec<bool> = fades.iter().map(|&f| blacklist(f, fade_threshold)).collect();
        let pair_usable = link_usable
            .chunks(c)
            .map(channel_majority_blacklist)
            .collect::<Result<Vec<_>>>()?;
        Ok(Calibration {
            ps_dbm,
            d1_m,
            eta,
            p1_db,
            channel_ids: deployment.channels().iter().map(|ch| ch.id).collect(),
            fade_threshold,
            baselines,
            fades,
            link_usable,
            pair_usable,
        })
    }

    pub fn to_kv_string(&self) -> String {
        let c = self.channel_ids.len();
        let mut w = KvWriter::new();
        w.comment("rti calibration");
        w.comment("link keys are <pair>.<channel id>");
        w.section("model")
            .entry("eta", self.eta)
            .entry("ps_dbm", self.ps_dbm)
            .entry("d1_m", self.d1_m)
            .entry("fade_threshold_db", self.fade_threshold)
            .entry("pairs", self.pair_usable.len());
        for (i, id) in self.channel_ids.iter().enumerate() {
            w.entry(&format!("p1_db.{id}"), self.p1_db[i]);
        }
        let link_key = |id: usize| format!("{}.{}", id / c, self.channel_ids[id % c]);
        w.section("baseline");
        for (id, v) in self.baselines.iter().enumerate() {
            w.entry(&link_key(id), v);
        }
        w.section("fade");
        for (id, v) in self.fades.iter().enumerate() {
            w.entry(&link_key(id), v);
        }
        w.section("usable");
        for (id, &v) in self.link_usable.iter().enumerate() {
            w.entry(&link_key(id), u8::from(v));
        }
        w.section("pair_usable");
        for (p, &v) in self.pair_usable.iter().enumerate() {
            w.entry(&p.to_string(), u8::from(v));
        }
        w.finish()
    }

    /// Parse a calibration file and check it against the deployment.
    pub fn from_kv_str(text: &str, origin: &str, deployment: &Deployment) -> Result<Self> {
        let doc = KvDocument::parse(text, origin)?;
        let schema = |msg: String| Error::Schema(format!("{origin}: {msg}"));
        let num = |key: &str| -> Result<f64> {
            doc.parse_f64(key)?
                .ok_or_else(|| schema(format!("missing `{key}`")))
        };
        let pairs = num("model.pairs")? as usize;
        if pairs != deployment.pair_count() {
            return Err(schema(format!(
                "calibration covers {pairs} pairs, deployment has {}",
                deployment.pair_count()
            )));
        }
        let channel_ids: Vec<u8> = deployment.channels().iter().map(|c| c.id).collect();
        let p1_db = channel_ids
            .iter()
            .map(|id| num(&format!("model.p1_db.{id}")))
            .collect::<Result<Vec<_>>>()?;
        let c = channel_ids.len();
        let l = deployment.link_count();
        let link_values = |section: &str| -> Result<Vec<f64>> {
            let mut out = vec![f64::NAN; l];
            for (key, value) in doc.with_prefix(section) {
                let (pair, ch) = key
                    .split_once('.')
                    .ok_or_else(|| schema(format!("bad link key `{section}.{key}`")))?;
                let pair: usize = pair
                    .parse()
                    .map_err(|_| schema(format!("bad pair in `{section}.{key}`")))?;
                let ch: u8 = ch
                    .parse()
                    .map_err(|_| schema(format!("bad channel in `{section}.{key}`")))?;
                let ci = deployment
                    .channel_index(ch)
                    .ok_or_else(|| schema(format!("unknown channel {ch} in `{section}.{key}`")))?;
                if pair >= deployment.pair_count() {
                    return Err(schema(format!("unknown pair {pair} in `{section}.{key}`")));
                }
                out[pair * c + ci] = parse_f64(key, value)?;
            }
            if let Some(id) = out.iter().position(|v| v.is_nan()) {
                return Err(schema(format!(
                    "missing `{section}.{}.{}`",
                    id / c,
                    channel_ids[id % c]
                )));
            }
            Ok(out)
        };
        let baselines = link_values("baseline")?;
        let fades = link_values("fade")?;
        let link_usable = link_values("usable")?.into_iter().map(|v| v != 0.0).collect();
        let pair_usable = (0..pairs)
            .map(|p| {
                let key = format!("pair_usable.{p}");
                num(&key).map(|v| v != 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Calibration {
            ps_dbm: num("model.ps_dbm")?,
            d1_m: num("model.d1_m")?,
            eta: num("model.eta")?,
            p1_db,
            channel_ids,
            fade_threshold: num("model.fade_threshold_db")?,
            baselines,
            fades,
            link_usable,
            pair_usable,
        })
    }
}

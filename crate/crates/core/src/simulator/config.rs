//! Scenario configuration: parsing, defaults, validation and overrides.
//!
//! Files use the sectioned `key = value` format of [`crate::kv`]. Every key
//! is listed in [`KNOWN_KEYS`] or matches one of the indexed families in
//! [`INDEXED_KEYS`]; anything else is rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::classifier::{BaselineMethod, PathLossSource, DEFAULT_FADE_THRESHOLD};
use crate::detector::DEFAULT_MAX_EXCESS;
use crate::error::{Error, Result};
use crate::geometry::{ieee802154_frequency, Channel, Deployment, Grid, Point};
use crate::kv::{parse_f64, parse_f64_list, KvDocument, KvWriter};
use crate::localization::DEFAULT_PROBABILITY_SCALE;
use crate::noise::DEFAULT_SAMPLES;
use crate::reconstruction::ScaleMode;

/// Scalar keys, and whether each takes a number.
pub const KNOWN_KEYS: &[(&str, bool)] = &[
    ("scenario.name", false),
    ("scenario.seed", true),
    ("scenario.frame_interval_s", true),
    ("scenario.calibration_s", true),
    ("deployment.layout", false),
    ("deployment.width_m", true),
    ("deployment.height_m", true),
    ("deployment.nodes", true),
    ("deployment.node_margin_m", true),
    ("deployment.channels", false),
    ("deployment.links", false),
    ("grid.pixel_m", true),
    ("channel.gamma", true),
    ("channel.eta", true),
    ("channel.p_s_dbm", true),
    ("channel.p1_db", true),
    ("channel.d1_m", true),
    ("noise.snr_db", true),
    ("noise.sigma2_mw", true),
    ("noise.samples", true),
    ("noise.quantization_db", true),
    ("noise.heavy_tail_db", true),
    ("object.model", false),
    ("object.radius_m", true),
    ("object.crossing_attenuation_db", true),
    ("trajectory.kind", false),
    ("trajectory.speed_mps", true),
    ("trajectory.duration_s", true),
    ("trajectory.margin_m", true),
    ("trajectory.laps", true),
    ("trajectory.closed", false),
    ("trajectory.dwell_s", true),
    ("detector.delta_t_m", true),
    ("detector.smoothing", true),
    ("classifier.fade_threshold_db", true),
    ("classifier.fit", false),
    ("classifier.baseline", false),
    ("classifier.fade_source", false),
    ("estimator.a", true),
    ("estimator.scale", false),
    ("estimator.regions", true),
    ("output.snapshot_every", true),
    ("output.report_experiment", false),
];

/// Key families with a free suffix: `deployment.node.<i>`,
/// `deployment.channel_freq.<id>`, `trajectory.waypoint.<i>`,
/// `deep_fade.<pair>` and `deep_fade.<pair>.<channel id>`.
pub const INDEXED_KEYS: &[&str] = &["deployment.node", "deployment.channel_freq", "trajectory.waypoint", "deep_fade"];

/// Full name of a key given either its full name or, when unambiguous, the
/// part after the section.
pub fn resolve_key(key: &str) -> Result<String> {
    if KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
        return Ok(key.to_string());
    }
    if INDEXED_KEYS
        .iter()
        .any(|p| key.strip_prefix(p).is_some_and(|rest| rest.len() > 1 && rest.starts_with('.')))
    {
        return Ok(key.to_string());
    }
    let matches: Vec<&str> = KNOWN_KEYS
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| k.split_once('.').is_some_and(|(_, short)| short == key))
        .collect();
    match matches.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(Error::config(key, "unknown key")),
        many => Err(Error::config(key, format!("ambiguous key, use one of {}", many.join(", ")))),
    }
}

/// `true` if the key takes a single number.
pub fn is_numeric_key(key: &str) -> bool {
    KNOWN_KEYS.iter().any(|(k, numeric)| *k == key && *numeric)
        || key.starts_with("deep_fade.")
        || key.starts_with("deployment.channel_freq.")
}

/// Apply `key=value` overrides to a document.
pub fn apply_overrides(doc: &mut KvDocument, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "override must look like key=value"))?;
        let key = resolve_key(key.trim())?;
        doc.set(&key, value.trim());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectModel {
    Point,
    Circle { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    /// No object at all.
    Vacant { duration_s: f64 },
    /// Straight runs at constant speed, turning at random at the boundary of
    /// the area shrunk by `margin`.
    RandomWalk { speed: f64, duration_s: f64, margin: f64 },
    /// Constant-speed traversal of a polyline, repeated `laps` times.
    Waypoints {
        points: Vec<Point>,
        speed: f64,
        laps: u32,
        closed: bool,
    },
    /// Stand still at each point for `dwell_s`.
    Standstill { points: Vec<Point>, dwell_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// LoS signal-to-noise ratio of every link, in dB.
    SnrDb(f64),
    /// Fixed per-quadrature variance in mW.
    Sigma2(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub level: NoiseLevel,
    pub samples: u32,
    pub quantization_db: f64,
    /// Scale of an extra Laplace-distributed dB term; zero disables it.
    pub heavy_tail_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadeSource {
    /// Compare the calibration-window estimate against the model.
    Window,
    /// Compare the last single vacant reading against the model.
    SingleFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub frame_interval_s: f64,
    pub calibration_s: f64,
    pub area: (f64, f64),
    pub deployment: Deployment,
    pub grid: Grid,
    pub gamma: f64,
    pub eta: f64,
    pub ps_dbm: f64,
    pub p1_db: f64,
    pub d1_m: f64,
    pub noise: NoiseConfig,
    pub object: ObjectModel,
    pub crossing_attenuation_db: f64,
    pub trajectory: TrajectorySpec,
    /// Offset in dB per link id.
    pub deep_fades: BTreeMap<usize, f64>,
    pub max_excess: f64,
    pub smoothing: usize,
    pub fade_threshold: f64,
    pub path_loss: PathLossSource,
    pub baseline: BaselineMethod,
    pub fade_source: FadeSource,
    pub probability_scale: f64,
    pub scale: ScaleMode,
    pub regions: usize,
    pub snapshot_every: usize,
    pub report_experiment: Option<usize>,
}

struct Reader<'a> {
    doc: &'a KvDocument,
    used: std::collections::BTreeSet<String>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let v = self.doc.get(key);
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn text(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    fn num(&mut self, key: &str, default: f64, valid: impl Fn(f64) -> bool, expect: &str) -> Result<f64> {
        let v = match self.raw(key) {
            Some(s) => parse_f64(key, s)?,
            None => default,
        };
        if valid(v) {
            Ok(v)
        } else {
            Err(Error::config(key, format!("{expect}, got {v}")))
        }
    }

    fn opt_num(&mut self, key: &str) -> Result<Option<f64>> {
        self.raw(key).map(|s| parse_f64(key, s)).transpose()
    }

    fn count(&mut self, key: &str, default: u64, min: u64) -> Result<u64> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| Error::config(key, format!("expected a nonnegative integer, got `{s}`")))?,
            None => default,
        };
        if v < min {
            return Err(Error::config(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    fn choice<T: Copy>(&mut self, key: &str, default: &str, options: &[(&str, T)]) -> Result<T> {
        let v = self.text(key, default);
        options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(key, format!("expected one of {}, got `{v}`", names.join(", ")))
        })
    }

    fn point(&mut self, key: &str) -> Result<Option<Point>> {
        self.raw(key)
            .map(|s| match parse_f64_list(key, s)?.as_slice() {
                [x, y] => Ok(Point::new(*x, *y)),
                _ => Err(Error::config(key, format!("expected `x, y`, got `{s}`"))),
            })
            .transpose()
    }

    /// Points under `prefix.0`, `prefix.1`, ... without gaps.
    fn indexed_points(&mut self, prefix: &str) -> Result<Vec<Point>> {
        let count = self.doc.with_prefix(prefix).count();
        (0..count)
            .map(|i| {
                let key = format!("{prefix}.{i}");
                self.point(&key)?
                    .ok_or_else(|| Error::config(key, "missing; indices must run 0, 1, 2, ... without gaps"))
            })
            .collect()
    }
}

/// `n` nodes evenly spaced around the rectangle `[-m, w + m] x [-m, h + m]`,
/// starting half a spacing from the lower-left corner and running
/// counter-clockwise.
pub fn perimeter_nodes(n: usize, width: f64, height: f64, margin: f64) -> Vec<Point> {
    let (w, h) = (width + 2.0 * margin, height + 2.0 * margin);
    let per = 2.0 * (w + h);
    (0..n)
        .map(|i| {
            let s = per * (i as f64 + 0.5) / n as f64;
            let p = if s < w {
                Point::new(s, 0.0)
            } else if s < w + h {
                Point::new(w, s - w)
            } else if s < 2.0 * w + h {
                Point::new(2.0 * w + h - s, h)
            } else {
                Point::new(0.0, per - s)
            };
            p - Point::new(margin, margin)
        })
        .collect()
}

fn positive(v: f64) -> bool {
    v > 0.0
}

impl ScenarioConfig {
    pub fn from_doc(doc: &KvDocument) -> Result<Self> {
        let mut r = Reader {
            doc,
            used: Default::default(),
        };

        let name = r.text("scenario.name", "scenario");
        let seed = r.count("scenario.seed", 1, 0)?;
        let frame_interval_s = r.num("scenario.frame_interval_s", 0.005, positive, "must be positive")?;
        let calibration_s = r.num("scenario.calibration_s", 5.0, positive, "must be positive")?;

        let width = r.num("deployment.width_m", 7.0, positive, "must be positive")?;
        let height = r.num("deployment.height_m", 6.0, positive, "must be positive")?;
        let layout = r.choice("deployment.layout", "perimeter", &[("perimeter", true), ("explicit", false)])?;
        let nodes = if layout {
            let n = r.count("deployment.nodes", 16, 2)? as usize;
            let margin = r.num("deployment.node_margin_m", 0.0, |v| v >= 0.0, "must be nonnegative")?;
            perimeter_nodes(n, width, height, margin)
        } else {
            let nodes = r.indexed_points("deployment.node")?;
            if nodes.len() < 2 {
                return Err(Error::config("deployment.node", "explicit layout needs at least two nodes"));
            }
            nodes
        };
        let channel_ids = r.text("deployment.channels", "11, 18, 26");
        let mut channels = Vec::new();
        for item in channel_ids.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id: u8 = item
                .parse()
                .map_err(|_| Error::config("deployment.channels", format!("bad channel id `{item}`")))?;
            let freq_key = format!("deployment.channel_freq.{id}");
            let frequency_hz = match r.opt_num(&freq_key)? {
                Some(f) if f > 0.0 => f,
                Some(f) => return Err(Error::config(freq_key, format!("must be positive, got {f}"))),
                None => ieee802154_frequency(id).ok_or_else(|| {
                    Error::config(
                        "deployment.channels",
                        format!("channel {id} is not an IEEE 802.15.4 2.4 GHz channel; set {freq_key}"),
                    )
                })?,
            };
            channels.push(Channel { id, frequency_hz });
        }
        if channels.is_empty() {
            return Err(Error::config("deployment.channels", "at least one channel is required"));
        }
        let directed = r.choice("deployment.links", "directed", &[("directed", true), ("undirected", false)])?;
        let deployment = Deployment::fully_connected(nodes, channels, directed)
            .map_err(|e| Error::config("deployment", e.to_string()))?;

        let pixel = r.num("grid.pixel_m", 0.0625, positive, "must be positive")?;
        let grid = Grid::covering(Point::new(0.0, 0.0), width, height, pixel)?;

        let gamma = r.num("channel.gamma", 0.5, |v| (0.0..1.0).contains(&v), "must lie in [0, 1)")?;
        let eta = r.num("channel.eta", 2.0, positive, "must be positive")?;
        let ps_dbm = r.num("channel.p_s_dbm", 0.0, f64::is_finite, "must be finite")?;
        let p1_db = r.num("channel.p1_db", 40.0, f64::is_finite, "must be finite")?;
        let d1_m = r.num("channel.d1_m", 1.0, positive, "must be positive")?;

        let level = match (r.opt_num("noise.snr_db")?, r.opt_num("noise.sigma2_mw")?) {
            (Some(_), Some(_)) => {
                return Err(Error::config("noise.sigma2_mw", "set either noise.snr_db or noise.sigma2_mw, not both"))
            }
            (_, Some(s)) if !(s > 0.0) => return Err(Error::config("noise.sigma2_mw", format!("must be positive, got {s}"))),
            (_, Some(s)) => NoiseLevel::Sigma2(s),
            (Some(snr), None) => NoiseLevel::SnrDb(snr),
            (None, None) => NoiseLevel::SnrDb(25.0),
        };
        let samples = r.count("noise.samples", u64::from(DEFAULT_SAMPLES), 1)?;
        let samples = u32::try_from(samples).map_err(|_| Error::config("noise.samples", "too large"))?;
        let quantization_db = r.num("noise.quantization_db", 1.0, |v| v >= 0.0, "must be nonnegative")?;
        let heavy_tail_db = r.num("noise.heavy_tail_db", 0.0, |v| v >= 0.0, "must be nonnegative")?;

        let object = match r.choice("object.model", "circle", &[("circle", true), ("point", false)])? {
            true => ObjectModel::Circle {
                radius: r.num("object.radius_m", 0.1575, positive, "must be positive")?,
            },
            false => ObjectModel::Point,
        };
        let crossing_attenuation_db =
            r.num("object.crossing_attenuation_db", 0.0, |v| v >= 0.0, "must be nonnegative")?;
        if crossing_attenuation_db > 0.0 && object == ObjectModel::Point {
            return Err(Error::config(
                "object.crossing_attenuation_db",
                "a point object never blocks a link; use the circle model",
            ));
        }

        #[derive(Clone, Copy)]
        enum Kind {
            Vacant,
            Walk,
            Waypoints,
            Standstill,
        }
        let kind = r.choice(
            "trajectory.kind",
            "random_walk",
            &[
                ("vacant", Kind::Vacant),
                ("random_walk", Kind::Walk),
                ("waypoints", Kind::Waypoints),
                ("standstill", Kind::Standstill),
            ],
        )?;
        let trajectory = match kind {
            Kind::Vacant => TrajectorySpec::Vacant {
                duration_s: r.num("trajectory.duration_s", 10.0, |v| v >= 0.0, "must be nonnegative")?,
            },
            Kind::Walk => TrajectorySpec::RandomWalk {
                speed: r.num("trajectory.speed_mps", 0.5, positive, "must be positive")?,
                duration_s: r.num("trajectory.duration_s", 60.0, positive, "must be positive")?,
                margin: r.num("trajectory.margin_m", 0.5, |v| v >= 0.0, "must be nonnegative")?,
            },
            Kind::Waypoints => {
                let points = r.indexed_points("trajectory.waypoint")?;
                if points.len() < 2 {
                    return Err(Error::config("trajectory.waypoint", "need at least two waypoints"));
                }
                TrajectorySpec::Waypoints {
                    points,
                    speed: r.num("trajectory.speed_mps", 0.5, positive, "must be positive")?,
                    laps: r.count("trajectory.laps", 1, 1)? as u32,
                    closed: r.choice("trajectory.closed", "true", &[("true", true), ("false", false)])?,
                }
            }
            Kind::Standstill => {
                let points = r.indexed_points("trajectory.waypoint")?;
                if points.is_empty() {
                    return Err(Error::config("trajectory.waypoint", "need at least one stand-still point"));
                }
                TrajectorySpec::Standstill {
                    points,
                    dwell_s: r.num("trajectory.dwell_s", 10.0, positive, "must be positive")?,
                }
            }
        };
        if let TrajectorySpec::Waypoints { points, .. } | TrajectorySpec::Standstill { points, .. } = &trajectory {
            for (i, p) in points.iter().enumerate() {
                if !(0.0..=width).contains(&p.x) || !(0.0..=height).contains(&p.y) {
                    return Err(Error::config(
                        format!("trajectory.waypoint.{i}"),
                        format!("{p} lies outside the {width} x {height} m area"),
                    ));
                }
            }
        }
        if let TrajectorySpec::RandomWalk { margin, .. } = trajectory {
            if 2.0 * margin >= width.min(height) {
                return Err(Error::config("trajectory.margin_m", "leaves no room to walk"));
            }
        }

        let c = deployment.channel_count();
        let mut deep_fades = BTreeMap::new();
        let fade_keys: Vec<(String, String)> = doc
            .with_prefix("deep_fade")
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (suffix, value) in fade_keys {
            let key = format!("deep_fade.{suffix}");
            r.used.insert(key.clone());
            let offset = parse_f64(&key, &value)?;
            let (pair, channel) = match suffix.split_once('.') {
                Some((p, ch)) => (p, Some(ch)),
                None => (suffix.as_str(), None),
            };
            let pair: usize = pair
                .parse()
                .ok()
                .filter(|&p| p < deployment.pair_count())
                .ok_or_else(|| Error::config(key.as_str(), "unknown pair"))?;
            let channels: Vec<usize> = match channel {
                None => (0..c).collect(),
                Some(ch) => vec![ch
                    .parse::<u8>()
                    .ok()
                    .and_then(|id| deployment.channel_index(id))
                    .ok_or_else(|| Error::config(key.as_str(), "unknown channel"))?],
            };
            for ci in channels {
                *deep_fades.entry(deployment.link_id(pair, ci)).or_insert(0.0) += offset;
            }
        }

        let max_excess = r.num("detector.delta_t_m", DEFAULT_MAX_EXCESS, positive, "must be positive")?;
        let smoothing = r.count("detector.smoothing", 1, 1)? as usize;

        let fade_threshold = r.num(
            "classifier.fade_threshold_db",
            DEFAULT_FADE_THRESHOLD,
            |v| v < 0.0,
            "must be negative",
        )?;
        let path_loss = match r.choice("classifier.fit", "fixed", &[("fixed", false), ("least_squares", true)])? {
            true => PathLossSource::Fitted,
            false => PathLossSource::Fixed { eta, p1_db },
        };
        let baseline = r.choice(
            "classifier.baseline",
            "mean",
            &[
                ("mean", BaselineMethod::Mean),
                (
                    "mode",
                    BaselineMethod::HistogramMode {
                        bin_width: if quantization_db > 0.0 { quantization_db } else { 0.5 },
                    },
                ),
            ],
        )?;
        let fade_source = r.choice(
            "classifier.fade_source",
            "window",
            &[("window", FadeSource::Window), ("single_frame", FadeSource::SingleFrame)],
        )?;

        let probability_scale = r.num(
            "estimator.a",
            DEFAULT_PROBABILITY_SCALE,
            |v| v > 0.0 && v < 1.0,
            "must lie in (0, 1)",
        )?;
        let scale = r.choice("estimator.scale", "count", &[("count", ScaleMode::Count), ("area", ScaleMode::Area)])?;
        let regions = r.count("estimator.regions", 1, 1)? as usize;
        if regions > grid.pixel_count() {
            return Err(Error::config("estimator.regions", "more regions than pixels"));
        }

        let snapshot_every = r.count("output.snapshot_every", 0, 0)? as usize;
        let report_experiment = match r.raw("output.report_experiment") {
            None | Some("none") => None,
            Some(s) => Some(
                s.strip_prefix("exp")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| (1..=4).contains(n))
                    .ok_or_else(|| Error::config("output.report_experiment", format!("expected exp1 .. exp4 or none, got `{s}`")))?,
            ),
        };

        if let Some(unknown) = doc.keys().find(|k| !r.used.contains(*k)) {
            return Err(match resolve_key(unknown) {
                Ok(_) => Error::config(unknown, "not used by this configuration (check the layout, model and kind keys)"),
                Err(e) => e,
            });
        }

        let config = ScenarioConfig {
            name,
            seed,
            frame_interval_s,
            calibration_s,
            area: (width, height),
            deployment,
            grid,
            gamma,
            eta,
            ps_dbm,
            p1_db,
            d1_m,
            noise: NoiseConfig {
                level,
                samples,
                quantization_db,
                heavy_tail_db,
            },
            object,
            crossing_attenuation_db,
            trajectory,
            deep_fades,
            max_excess,
            smoothing,
            fade_threshold,
            path_loss,
            baseline,
            fade_source,
            probability_scale,
            scale,
            regions,
            snapshot_every,
            report_experiment,
        };
        if config.calibration_frames() < config.cycle_frames() {
            return Err(Error::config(
                "scenario.calibration_s",
                format!(
                    "calibration must cover at least one full cycle of {} frames ({} s)",
                    config.cycle_frames(),
                    config.cycle_frames() as f64 * frame_interval_s
                ),
            ));
        }
        Ok(config)
    }

    /// Read, override and validate a config file.
    pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc = KvDocument::parse(&text, &path.display().to_string())?;
        apply_overrides(&mut doc, overrides)?;
        if let Some(seed) = seed {
            doc.set("scenario.seed", seed.to_string());
        }
        ScenarioConfig::from_doc(&doc)
    }

    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc = KvDocument::parse(text, "<config>")?;
        apply_overrides(&mut doc, overrides)?;
        ScenarioConfig::from_doc(&doc)
    }

    /// Frames per schedule cycle: every node transmits once on every channel.
    pub fn cycle_frames(&self) -> usize {
        self.deployment.nodes().len() * self.deployment.channel_count()
    }

    pub fn calibration_frames(&self) -> usize {
        (self.calibration_s / self.frame_interval_s).round() as usize
    }

    /// Transmitter and channel index of a frame.
    pub fn schedule(&self, frame: usize) -> (usize, usize) {
        let m = self.deployment.nodes().len();
        (frame % m, (frame / m) % self.deployment.channel_count())
    }

    /// The model parameters the detectors use.
    pub fn summary(&self) -> String {
        let mut w = KvWriter::new();
        w.entry("name", &self.name)
            .entry("seed", self.seed)
            .entry("nodes", self.deployment.nodes().len())
            .entry("pairs", self.deployment.pair_count())
            .entry(
                "channels",
                self.deployment
                    .channels()
                    .iter()
                    .map(|c| c.id.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            )
            .entry("area_m", format!("{} x {}", self.area.0, self.area.1))
            .entry("pixel_m", self.grid.pixel_size)
            .entry("gamma", self.gamma)
            .entry("eta", self.eta)
            .entry("fade_threshold_db", self.fade_threshold)
            .entry("delta_t_m", self.max_excess)
            .entry("a", self.probability_scale)
            .entry("frame_interval_s", self.frame_interval_s);
        w.finish()
    }
}

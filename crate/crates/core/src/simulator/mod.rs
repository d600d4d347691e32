//! Synthetic scenarios: deployments, trajectories, RSS synthesis and the
//! end-to-end run.
//!
//! Schedule: frame `k` is one broadcast slot in which node `k mod M`
//! transmits on channel index `(k / M) mod C` and every pair with that
//! transmitter records one reading. A cycle of `C M` frames therefore covers
//! every link exactly once. The first frames of a run form the vacant
//! calibration period; the object enters afterwards.
//!
//! Randomness: one ChaCha8 generator per purpose, all seeded from the scenario
//! seed. Stream 0 drives the trajectory and stream `1 + link` the noise of
//! that link.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::channel::{los_power, zeta, PathLossParams, ReflectionParams};
use crate::classifier::{estimate_baseline, BaselineMethod, Calibration};
use crate::error::{Error, Result};
use crate::geometry::{excess_path_length, Deployment, Point};
use crate::noise::{db_to_linear, measurement_noise_db, quantize, NoiseModel};
use crate::par::Execution;

pub use config::{FadeSource, NoiseLevel, ObjectModel, ScenarioConfig, TrajectorySpec};
pub use pipeline::{FrameEstimate, Pipeline};
pub use trajectory::Trajectory;

/// Point of the object that produces the single specular reflection.
///
/// For a circle this is the boundary point minimizing the total path
/// `|q - tx| + |q - rx|`; when the link segment cuts the circle it is the
/// entry point nearest the transmitter (zero excess).
pub fn reflection_point(object: Point, model: ObjectModel, tx: Point, rx: Point) -> Result<Point> {
    let r = match model {
        ObjectModel::Point => return Ok(object),
        ObjectModel::Circle { radius } => radius,
    };
    if tx.distance(object) <= r || rx.distance(object) <= r {
        return Err(Error::domain(format!("a node lies inside the object at {object}")));
    }
    let d = rx - tx;
    let f = tx - object;
    let (a, b, c) = (d.dot(d), 2.0 * f.dot(d), f.dot(f) - r * r);
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let t = (-b - disc.sqrt()) / (2.0 * a);
        if (0.0..=1.0).contains(&t) {
            return Ok(tx + d * t);
        }
    }
    let at = |theta: f64| object + Point::new(theta.cos(), theta.sin()) * r;
    let total = |theta: f64| {
        let q = at(theta);
        q.distance(tx) + q.distance(rx)
    };
    let slope = |theta: f64| {
        let q = at(theta);
        let grad = (q - tx) * (1.0 / q.distance(tx)) + (q - rx) * (1.0 / q.distance(rx));
        grad.dot(Point::new(-theta.sin(), theta.cos()))
    };
    // coarse search first; a finer one only if the bracket is not clean
    for samples in [48usize, 720] {
        let step = std::f64::consts::TAU / samples as f64;
        let best = (0..samples)
            .min_by(|&i, &j| total(i as f64 * step).total_cmp(&total(j as f64 * step)))
            .expect("nonempty sample set");
        let (mut lo, mut hi) = ((best as f64 - 1.0) * step, (best as f64 + 1.0) * step);
        if !(slope(lo) <= 0.0 && slope(hi) >= 0.0) {
            if samples == 720 {
                return Ok(at(best as f64 * step));
            }
            continue;
        }
        while (hi - lo) * r > 1e-11 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(at(0.5 * (lo + hi)));
    }
    unreachable!("the fine search always returns")
}

/// One RSS reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub pair: usize,
    pub channel_index: usize,
    pub rss_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub time_s: f64,
    pub truth: Option<Point>,
    pub readings: Vec<Reading>,
}

/// Noise-free and noisy RSS for every link of a scenario.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    deployment: Deployment,
    /// LoS power per link including any injected fade, dB.
    los_db: Vec<f64>,
    noise: Vec<NoiseModel>,
    rngs: Vec<ChaCha8Rng>,
    gamma: f64,
    eta: f64,
    object: ObjectModel,
    crossing_attenuation_db: f64,
    quantization_db: f64,
    heavy_tail_db: f64,
    /// Pairs per transmitting node.
    outgoing: Vec<Vec<usize>>,
}

impl Synthesizer {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let dep = &config.deployment;
        let c = dep.channel_count();
        let mut los_db = Vec::with_capacity(dep.link_count());
        let mut noise = Vec::with_capacity(dep.link_count());
        for id in 0..dep.link_count() {
            let link = dep.link(id).expect("dense link ids");
            let params = PathLossParams {
                ps_dbm: config.ps_dbm,
                p1_db: config.p1_db,
                d1_m: config.d1_m,
                eta: config.eta,
            };
            let p0 = los_power(&params, dep.pair_length(link.pair))? + config.deep_fades.get(&id).copied().unwrap_or(0.0);
            let model = match config.noise.level {
                NoiseLevel::SnrDb(snr) => {
                    NoiseModel::from_snr(db_to_linear(p0), snr, config.noise.samples, config.noise.quantization_db)?
                }
                NoiseLevel::Sigma2(s) => NoiseModel::new(s, config.noise.samples, config.noise.quantization_db)?,
            };
            los_db.push(p0);
            noise.push(model);
        }
        let rngs = (0..dep.link_count())
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(1 + id as u64);
                rng
            })
            .collect();
        let mut outgoing = vec![Vec::new(); dep.nodes().len()];
        for (p, pair) in dep.pairs().iter().enumerate() {
            outgoing[pair.tx].push(p);
        }
        debug_assert_eq!(los_db.len(), dep.pair_count() * c);
        Ok(Synthesizer {
            deployment: dep.clone(),
            los_db,
            noise,
            rngs,
            gamma: config.gamma,
            eta: config.eta,
            object: config.object,
            crossing_attenuation_db: config.crossing_attenuation_db,
            quantization_db: config.noise.quantization_db,
            heavy_tail_db: config.noise.heavy_tail_db,
            outgoing,
        })
    }

    pub fn los_db(&self, link: usize) -> f64 {
        self.los_db[link]
    }

    /// Noise-free received power of a link in dB.
    pub fn clean_power(&self, link: usize, object: Option<Point>) -> Result<f64> {
        let l = self.deployment.link(link).ok_or_else(|| Error::domain(format!("unknown link {link}")))?;
        let mut p = self.los_db[link];
        if let Some(obj) = object {
            let (tx, rx) = self.deployment.endpoints(l.pair);
            let q = reflection_point(obj, self.object, tx, rx)?;
            let params = ReflectionParams::new(
                self.gamma,
                self.eta,
                self.deployment.pair_length(l.pair),
                self.deployment.channels()[l.channel_index].frequency_hz,
            )?;
            p += zeta(excess_path_length(q, tx, rx), &params)?;
            if let ObjectModel::Circle { radius } = self.object {
                if self.crossing_attenuation_db > 0.0 && segment_distance(obj, tx, rx) <= radius {
                    p -= self.crossing_attenuation_db;
                }
            }
        }
        Ok(p)
    }

    /// Noisy, quantized reading of one link.
    pub fn reading(&mut self, link: usize, object: Option<Point>) -> Result<f64> {
        let clean = self.clean_power(link, object)?;
        let rng = &mut self.rngs[link];
        let mut rss = clean + measurement_noise_db(&self.noise[link], db_to_linear(clean), rng)?;
        if self.heavy_tail_db > 0.0 {
            let a: f64 = Exp1.sample(rng);
            let b: f64 = Exp1.sample(rng);
            rss += self.heavy_tail_db * (a - b);
        }
        Ok(quantize(rss, self.quantization_db))
    }

    /// All readings of a broadcast slot.
    pub fn frame(&mut self, config: &ScenarioConfig, id: usize, truth: Option<Point>) -> Result<Frame> {
        let (tx, ci) = config.schedule(id);
        let c = self.deployment.channel_count();
        let pairs = self.outgoing[tx].clone();
        let readings = pairs
            .into_iter()
            .map(|pair| {
                Ok(Reading {
                    pair,
                    channel_index: ci,
                    rss_db: self.reading(pair * c + ci, truth)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Frame {
            id,
            time_s: id as f64 * config.frame_interval_s,
            truth,
            readings,
        })
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Per-link LoS estimates from vacant frames, plus the last reading of each
/// link.
pub fn estimate_los_baseline(
    deployment: &Deployment,
    frames: &[Frame],
    method: BaselineMethod,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = deployment.channel_count();
    let mut per_link: Vec<Vec<f64>> = vec![Vec::new(); deployment.link_count()];
    for f in frames {
        for r in &f.readings {
            per_link[r.pair * c + r.channel_index].push(r.rss_db);
        }
    }
    let missing: Vec<String> = per_link
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_empty())
        .map(|(id, _)| format!("{}@{}", id / c, deployment.channels()[id % c].id))
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
        return Err(Error::Schema(format!(
            "no calibration readings for {} link(s) (pair@channel): {shown}{}",
            missing.len(),
            if missing.len() > 10 { ", ..." } else { "" }
        )));
    }
    let baselines = per_link
        .iter()
        .map(|v| estimate_baseline(v, method))
        .collect::<Result<Vec<_>>>()?;
    let last = per_link.iter().map(|v| *v.last().expect("checked nonempty")).collect();
    Ok((baselines, last))
}

/// Calibrate from the vacant frames of a run.
pub fn calibrate(config: &ScenarioConfig, frames: &[Frame]) -> Result<Calibration> {
    let (baselines, last) = estimate_los_baseline(&config.deployment, frames, config.baseline)?;
    let fade_inputs = match config.fade_source {
        FadeSource::Window => baselines.clone(),
        FadeSource::SingleFrame => last,
    };
    Calibration::build(
        &config.deployment,
        baselines,
        &fade_inputs,
        config.ps_dbm,
        config.d1_m,
        &config.path_loss,
        config.fade_threshold,
    )
}

/// Everything a simulated run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<Frame>,
    pub calibration: Calibration,
    pub estimates: Vec<FrameEstimate>,
    pub bitstream: Vec<u8>,
    /// PGM snapshots of the occupancy field, by frame id.
    pub snapshots: Vec<(usize, Vec<u8>)>,
}

/// Generate all frames of a scenario: vacant calibration frames, then the
/// object phase.
pub fn generate_frames(config: &ScenarioConfig) -> Result<Vec<Frame>> {
    let mut traj_rng = ChaCha8Rng::seed_from_u64(config.seed);
    traj_rng.set_stream(0);
    let trajectory = Trajectory::build(&config.trajectory, config.area, &mut traj_rng)?;
    let mut synth = Synthesizer::new(config)?;
    let n_cal = config.calibration_frames();
    let n_obj = (trajectory.duration() / config.frame_interval_s).floor() as usize + 1;
    (0..n_cal + n_obj)
        .map(|id| {
            let truth = if id < n_cal {
                None
            } else {
                trajectory.position((id - n_cal) as f64 * config.frame_interval_s)
            };
            synth.frame(config, id, truth)
        })
        .collect()
}

/// Simulate, calibrate and localize.
pub fn run_scenario(config: &ScenarioConfig, exec: Execution) -> Result<RunOutput> {
    let frames = generate_frames(config)?;
    let n_cal = config.calibration_frames();
    let calibration = calibrate(config, &frames[..n_cal])?;
    let mut pipeline = Pipeline::new(config, &calibration, exec)?;
    let processed = pipeline.process(config, &frames[n_cal..])?;
    Ok(RunOutput {
        frames,
        calibration,
        estimates: processed.estimates,
        bitstream: processed.bitstream,
        snapshots: processed.snapshots,
    })
}

//! Per-frame processing shared by simulation and replay: baseline removal,
//! detection, channel fusion, back-projection and localization.

use std::collections::VecDeque;

use crate::classifier::Calibration;
use crate::detector::{decide, majority_vote, pack_bits, DetectorConfig};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};
use crate::localization::{localize, PositionEstimate};
use crate::par::{map_indexed, Execution};
use crate::reconstruction::{build_scale, occupancy_field, IndicatorMatrix, OccupancyField, OpCounter, RegionPartition, WeightMatrix};

use super::{Frame, ScenarioConfig};

/// Magic bytes opening a detector bitstream file.
pub const BITSTREAM_MAGIC: &[u8; 4] = b"RTIB";

/// Frames whose estimates are computed together.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEstimate {
    pub frame: usize,
    pub time_s: f64,
    pub truth: Option<Point>,
    pub estimate: Option<PositionEstimate>,
    /// Usable pairs whose fused decision is "present".
    pub detecting: usize,
    pub ops: OpCounter,
}

impl FrameEstimate {
    pub fn error(&self) -> Option<f64> {
        match (self.estimate, self.truth) {
            (Some(e), Some(t)) => Some(e.position.distance(t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Processed {
    pub estimates: Vec<FrameEstimate>,
    /// Header, then one packed record of all link decisions per cycle.
    pub bitstream: Vec<u8>,
    pub snapshots: Vec<(usize, Vec<u8>)>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    grid: Grid,
    channel_count: usize,
    detector: DetectorConfig,
    baselines: Vec<f64>,
    pair_usable: Vec<bool>,
    weights: WeightMatrix,
    partition: Option<RegionPartition>,
    probability_scale: f64,
    smoothing: usize,
    history: Vec<VecDeque<f64>>,
    link_state: Vec<bool>,
    exec: Execution,
}

impl Pipeline {
    pub fn new(config: &ScenarioConfig, calibration: &Calibration, exec: Execution) -> Result<Self> {
        let dep = &config.deployment;
        for (what, expected, actual) in [
            ("calibration baselines", dep.link_count(), calibration.baselines.len()),
            ("calibration pair flags", dep.pair_count(), calibration.pair_usable.len()),
        ] {
            if expected != actual {
                return Err(Error::Dimension { what, expected, actual });
            }
        }
        let detector = DetectorConfig::for_deployment(dep, config.gamma, config.eta, config.max_excess)?;
        let indicator = IndicatorMatrix::build(&config.grid, dep, config.max_excess, exec)?;
        let weights = build_scale(&indicator, config.scale)?;
        let partition = if config.regions > 1 {
            Some(RegionPartition::blocks(&config.grid, &weights, config.regions)?)
        } else {
            None
        };
        Ok(Pipeline {
            grid: config.grid,
            channel_count: dep.channel_count(),
            detector,
            baselines: calibration.baselines.clone(),
            pair_usable: calibration.pair_usable.clone(),
            weights,
            partition,
            probability_scale: config.probability_scale,
            smoothing: config.smoothing,
            history: vec![VecDeque::with_capacity(config.smoothing); dep.link_count()],
            link_state: vec![false; dep.link_count()],
            exec,
        })
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn detector(&self) -> &DetectorConfig {
        &self.detector
    }

    /// Update the decisions of every link read in this frame.
    pub fn observe(&mut self, frame: &Frame) -> Result<()> {
        for r in &frame.readings {
            if r.pair >= self.pair_usable.len() || r.channel_index >= self.channel_count {
                return Err(Error::Schema(format!(
                    "frame {} has a reading for unknown pair {} / channel index {}",
                    frame.id, r.pair, r.channel_index
                )));
            }
            let link = r.pair * self.channel_count + r.channel_index;
            let value = if self.smoothing > 1 {
                let h = &mut self.history[link];
                if h.len() == self.smoothing {
                    h.pop_front();
                }
                h.push_back(r.rss_db);
                h.iter().sum::<f64>() / h.len() as f64
            } else {
                r.rss_db
            };
            self.link_state[link] = decide(value - self.baselines[link], self.detector.threshold(r.pair));
        }
        Ok(())
    }

    /// Latest decision per link.
    pub fn link_decisions(&self) -> &[bool] {
        &self.link_state
    }

    /// Channel-majority decision per pair.
    pub fn pair_decisions(&self) -> Vec<bool> {
        self.link_state
            .chunks(self.channel_count)
            .map(|ch| majority_vote(ch).expect("at least one channel"))
            .collect()
    }

    pub fn field(&self, detections: &[bool]) -> Result<(OccupancyField, OpCounter)> {
        match &self.partition {
            None => occupancy_field(&self.weights, &self.pair_usable, detections),
            Some(part) => {
                let (field, counters) = part.evaluate(&self.pair_usable, detections, self.exec)?;
                let mut total = OpCounter::default();
                for c in counters {
                    total += c;
                }
                Ok((field, total))
            }
        }
    }

    fn estimate(&self, frame: &Frame, detections: &[bool]) -> Result<FrameEstimate> {
        let (field, ops) = self.field(detections)?;
        let estimate = match localize(field.values(), &self.grid, self.probability_scale) {
            Ok(e) => Some(e),
            Err(Error::NoOccupancy) => None,
            Err(e) => return Err(e),
        };
        Ok(FrameEstimate {
            frame: frame.id,
            time_s: frame.time_s,
            truth: frame.truth,
            estimate,
            detecting: detections.iter().zip(&self.pair_usable).filter(|(d, u)| **d && **u).count(),
            ops,
        })
    }

    /// Run detection over the frames in order and estimate after each one.
    pub fn process(&mut self, config: &ScenarioConfig, frames: &[Frame]) -> Result<Processed> {
        let cycle = config.cycle_frames();
        let mut out = Processed::default();
        out.bitstream.extend_from_slice(BITSTREAM_MAGIC);
        out.bitstream.extend_from_slice(&(self.link_state.len() as u32).to_le_bytes());
        for (chunk_index, chunk) in frames.chunks(CHUNK).enumerate() {
            let mut detections = Vec::with_capacity(chunk.len());
            for frame in chunk {
                self.observe(frame)?;
                detections.push(self.pair_decisions());
                if (frame.id + 1) % cycle == 0 {
                    out.bitstream.extend(pack_bits(&self.link_state));
                }
            }
            let this = &*self;
            let estimates = map_indexed(self.exec, chunk.len(), |i| this.estimate(&chunk[i], &detections[i]));
            for e in estimates {
                out.estimates.push(e?);
            }
            if config.snapshot_every > 0 {
                for (i, frame) in chunk.iter().enumerate() {
                    if (chunk_index * CHUNK + i).is_multiple_of(config.snapshot_every) {
                        let (field, _) = self.field(&detections[i])?;
                        out.snapshots.push((frame.id, field.to_pgm(&self.grid)?));
                    }
                }
            }
        }
        Ok(out)
    }
}

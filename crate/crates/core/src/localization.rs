//! Position estimate from an occupancy field: keep the pixels within a factor
//! `a` of the peak and take their weighted centroid.

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};

/// Default fraction of the peak a pixel must reach to be kept.
pub const DEFAULT_PROBABILITY_SCALE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Point,
    /// Field maximum.
    pub peak: f64,
    /// Number of retained pixels.
    pub support: usize,
    /// The retained pixels form more than one 4-connected component.
    pub disconnected: bool,
}

/// Zero every value below `a` times the maximum.
pub fn threshold_field(values: &[f64], a: f64) -> Result<Vec<f64>> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::domain(format!("probability scale must lie in (0, 1), got {a}")));
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::NoOccupancy);
    }
    let cut = a * peak;
    Ok(values.iter().map(|&v| if v >= cut { v } else { 0.0 }).collect())
}

/// Weighted centroid of a masked field.
pub fn estimate_position(masked: &[f64], grid: &Grid) -> Result<PositionEstimate> {
    if masked.len() != grid.pixel_count() {
        return Err(Error::Dimension {
            what: "masked field pixels",
            expected: grid.pixel_count(),
            actual: masked.len(),
        });
    }
    let (mut total, mut sx, mut sy, mut peak, mut support) = (0.0, 0.0, 0.0, 0.0f64, 0);
    for (n, &v) in masked.iter().enumerate() {
        if v > 0.0 {
            let c = grid.center(n);
            total += v;
            sx += v * c.x;
            sy += v * c.y;
            peak = peak.max(v);
            support += 1;
        }
    }
    if support == 0 {
        return Err(Error::NoOccupancy);
    }
    Ok(PositionEstimate {
        position: Point::new(sx / total, sy / total),
        peak,
        support,
        disconnected: component_count(masked, grid) > 1,
    })
}

/// Threshold and estimate in one step.
pub fn localize(values: &[f64], grid: &Grid, a: f64) -> Result<PositionEstimate> {
    estimate_position(&threshold_field(values, a)?, grid)
}

pub fn distance_error(estimate: Point, truth: Point) -> f64 {
    estimate.distance(truth)
}

fn component_count(masked: &[f64], grid: &Grid) -> usize {
    let mut seen = vec![false; masked.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..masked.len() {
        if masked[start] <= 0.0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(n) = stack.pop() {
            let (r, c) = grid.row_col(n);
            let neighbours = [
                (r > 0).then(|| n - grid.cols),
                (r + 1 < grid.rows).then(|| n + grid.cols),
                (c > 0).then(|| n - 1),
                (c + 1 < grid.cols).then(|| n + 1),
            ];
            for m in neighbours.into_iter().flatten() {
                if masked[m] > 0.0 && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
    }
    count
}

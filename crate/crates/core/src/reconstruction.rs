//! Back-projection of link detections onto a pixel grid.
//!
//! Each pair owns the pixels inside its effective ellipse (excess path length
//! at most `max_excess`). Pixel weights are chosen so every covered pixel's
//! weights sum to one; the occupancy field of a frame is then the sum of the
//! weight columns of all detecting, usable pairs, which needs additions only.
//!
//! Accumulation order is fixed (ascending pair, then ascending pixel) so that
//! partitioned and unpartitioned evaluation agree bit for bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{ellipse_area, excess_path_length, Deployment, Grid};
use crate::par::{map_indexed, Execution};

/// Pixels inside each pair's effective ellipse, ascending per column.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    pixel_count: usize,
    max_excess: f64,
    link_lengths: Vec<f64>,
    columns: Vec<Vec<u32>>,
}

impl IndicatorMatrix {
    /// Only pixels within half the ellipse's major axis of the link midpoint
    /// are tested; no pixel outside that disc can be inside the ellipse.
    pub fn build(grid: &Grid, deployment: &Deployment, max_excess: f64, exec: Execution) -> Result<Self> {
        if !(max_excess > 0.0) {
            return Err(Error::domain(format!("maximum excess path length must be positive, got {max_excess}")));
        }
        if grid.pixel_count() > u32::MAX as usize {
            return Err(Error::domain("grid too large"));
        }
        let columns = map_indexed(exec, deployment.pair_count(), |p| {
            let (tx, rx) = deployment.endpoints(p);
            let mid = (tx + rx) * 0.5;
            let reach = 0.5 * (deployment.pair_length(p) + max_excess);
            let span = |lo: f64, origin: f64, count: usize| {
                let first = ((lo - origin) / grid.pixel_size - 1.0).floor().max(0.0) as usize;
                let last = ((lo + 2.0 * reach - origin) / grid.pixel_size + 1.0).ceil().max(0.0) as usize;
                (first.min(count), last.min(count))
            };
            let (r0, r1) = span(mid.y - reach, grid.origin.y, grid.rows);
            let (c0, c1) = span(mid.x - reach, grid.origin.x, grid.cols);
            let mut col = Vec::new();
            for r in r0..r1 {
                for c in c0..c1 {
                    let n = grid.index(r, c);
                    if excess_path_length(grid.center(n), tx, rx) <= max_excess {
                        col.push(n as u32);
                    }
                }
            }
            col
        });
        Ok(IndicatorMatrix {
            pixel_count: grid.pixel_count(),
            max_excess,
            link_lengths: (0..deployment.pair_count()).map(|p| deployment.pair_length(p)).collect(),
            columns,
        })
    }

    /// Reference construction that tests every pixel against every pair.
    pub fn build_exhaustive(grid: &Grid, deployment: &Deployment, max_excess: f64) -> Result<Self> {
        if !(max_excess > 0.0) {
            return Err(Error::domain(format!("maximum excess path length must be positive, got {max_excess}")));
        }
        let columns = (0..deployment.pair_count())
            .map(|p| {
                let (tx, rx) = deployment.endpoints(p);
                (0..grid.pixel_count())
                    .filter(|&n| excess_path_length(grid.center(n), tx, rx) <= max_excess)
                    .map(|n| n as u32)
                    .collect()
            })
            .collect();
        Ok(IndicatorMatrix {
            pixel_count: grid.pixel_count(),
            max_excess,
            link_lengths: (0..deployment.pair_count()).map(|p| deployment.pair_length(p)).collect(),
            columns,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn max_excess(&self) -> f64 {
        self.max_excess
    }

    pub fn column(&self, pair: usize) -> &[u32] {
        &self.columns[pair]
    }

    pub fn contains(&self, pixel: usize, pair: usize) -> bool {
        self.columns[pair].binary_search(&(pixel as u32)).is_ok()
    }

    pub fn nonzeros(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Per-pair scale `1 / (pixels in column)`; needs only the indicator.
    #[default]
    Count,
    /// Per-pair scale `1 / ellipse area`.
    Area,
}

impl std::str::FromStr for ScaleMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "count" => Ok(ScaleMode::Count),
            "area" => Ok(ScaleMode::Area),
            _ => Err(format!("expected `count` or `area`, got `{s}`")),
        }
    }
}

/// Sparse weights, stored per pair as ascending `(pixel, weight)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pixel_count: usize,
    columns: Vec<Vec<(u32, f64)>>,
}

pub fn build_scale(indicator: &IndicatorMatrix, mode: ScaleMode) -> Result<WeightMatrix> {
    let scales = indicator
        .columns
        .iter()
        .zip(&indicator.link_lengths)
        .map(|(col, &d)| match mode {
            ScaleMode::Count if col.is_empty() => Ok(0.0),
            ScaleMode::Count => Ok(1.0 / col.len() as f64),
            ScaleMode::Area => ellipse_area(d, indicator.max_excess).map(|a| 1.0 / a),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut row_sums = vec![0.0; indicator.pixel_count];
    for (col, &s) in indicator.columns.iter().zip(&scales) {
        for &n in col {
            row_sums[n as usize] += s;
        }
    }
    let columns = indicator
        .columns
        .iter()
        .zip(&scales)
        .map(|(col, &s)| col.iter().map(|&n| (n, s / row_sums[n as usize])).collect())
        .collect();
    Ok(WeightMatrix {
        pixel_count: indicator.pixel_count,
        columns,
    })
}

impl WeightMatrix {
    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, pair: usize) -> &[(u32, f64)] {
        &self.columns[pair]
    }

    /// Sum of each pixel's weights.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.pixel_count];
        for col in &self.columns {
            for &(n, w) in col {
                sums[n as usize] += w;
            }
        }
        sums
    }
}

/// Floating-point operations performed by a field evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounter {
    pub additions: u64,
    pub multiplications: u64,
}

impl std::ops::AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.additions += rhs.additions;
        self.multiplications += rhs.multiplications;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyField {
    values: Vec<f64>,
}

impl OccupancyField {
    pub fn zeros(pixel_count: usize) -> Self {
        OccupancyField {
            values: vec![0.0; pixel_count],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        OccupancyField { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with header `row,col,value`, row-major.
    pub fn to_csv(&self, grid: &Grid) -> Result<String> {
        self.check_grid(grid)?;
        let mut out = String::from("row,col,value\n");
        for (n, v) in self.values.iter().enumerate() {
            let (r, c) = grid.row_col(n);
            let _ = writeln!(out, "{r},{c},{v}");
        }
        Ok(out)
    }

    /// Binary 8-bit PGM, grid row 0 first, value `round(255 x)`.
    pub fn to_pgm(&self, grid: &Grid) -> Result<Vec<u8>> {
        self.check_grid(grid)?;
        let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
        out.extend(self.values.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        Ok(out)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.pixel_count() != self.values.len() {
            return Err(Error::Dimension {
                what: "occupancy field pixels",
                expected: grid.pixel_count(),
                actual: self.values.len(),
            });
        }
        Ok(())
    }
}

fn check_masks(pairs: usize, usable: &[bool], detections: &[bool]) -> Result<()> {
    for (what, len) in [("usable flags", usable.len()), ("detections", detections.len())] {
        if len != pairs {
            return Err(Error::Dimension {
                what,
                expected: pairs,
                actual: len,
            });
        }
    }
    Ok(())
}

/// Sum the weight columns of every pair that is usable and detecting.
pub fn occupancy_field(w: &WeightMatrix, usable: &[bool], detections: &[bool]) -> Result<(OccupancyField, OpCounter)> {
    check_masks(w.column_count(), usable, detections)?;
    let mut values = vec![0.0; w.pixel_count];
    let mut ops = OpCounter::default();
    for (p, col) in w.columns.iter().enumerate() {
        if !(usable[p] && detections[p]) {
            continue;
        }
        for &(n, weight) in col {
            values[n as usize] += weight;
        }
        ops.additions += col.len() as u64;
    }
    Ok((OccupancyField { values }, ops))
}

/// Pixel rectangle `[row0, row0 + rows) x [col0, col0 + cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.rows).contains(&row) && (self.col0..self.col0 + self.cols).contains(&col)
    }
}

/// Split the grid into `count` blocks: the factorization `a x b` with `a`
/// closest to the square root, rows split into `a` bands and columns into `b`.
pub fn block_rects(grid: &Grid, count: usize) -> Result<Vec<Rect>> {
    if count == 0 {
        return Err(Error::domain("region count must be at least 1"));
    }
    let a = (1..=count).filter(|&a| count.is_multiple_of(a) && a * a <= count).max().unwrap_or(1);
    let b = count / a;
    let (band_rows, band_cols) = if grid.rows >= grid.cols { (b, a) } else { (a, b) };
    if band_rows > grid.rows || band_cols > grid.cols {
        return Err(Error::domain(format!(
            "cannot split a {}x{} grid into {count} regions",
            grid.rows, grid.cols
        )));
    }
    let cuts = |total: usize, parts: usize| -> Vec<(usize, usize)> {
        (0..parts).map(|i| (i * total / parts, (i + 1) * total / parts - i * total / parts)).collect()
    };
    let mut rects = Vec::with_capacity(count);
    for (row0, rows) in cuts(grid.rows, band_rows) {
        for &(col0, cols) in &cuts(grid.cols, band_cols) {
            rects.push(Rect { row0, col0, rows, cols });
        }
    }
    Ok(rects)
}

#[derive(Debug, Clone)]
struct Region {
    rect: Rect,
    /// Pairs intersecting the region with their in-region entries.
    columns: Vec<(usize, Vec<(u32, f64)>)>,
}

/// Weight matrix split into disjoint rectangular regions that are evaluated
/// independently.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    pixel_count: usize,
    pair_count: usize,
    grid_cols: usize,
    regions: Vec<Region>,
}

impl RegionPartition {
    pub fn new(grid: &Grid, w: &WeightMatrix, rects: Vec<Rect>) -> Result<Self> {
        if w.pixel_count() != grid.pixel_count() {
            return Err(Error::Dimension {
                what: "weight matrix pixels",
                expected: grid.pixel_count(),
                actual: w.pixel_count(),
            });
        }
        if rects.is_empty() {
            return Err(Error::domain("at least one region is required"));
        }
        let mut owner = vec![usize::MAX; grid.pixel_count()];
        for (i, rect) in rects.iter().enumerate() {
            if rect.rows == 0 || rect.cols == 0 || rect.row0 + rect.rows > grid.rows || rect.col0 + rect.cols > grid.cols {
                return Err(Error::domain(format!("region {i} is empty or outside the grid")));
            }
            for r in rect.row0..rect.row0 + rect.rows {
                for c in rect.col0..rect.col0 + rect.cols {
                    let n = grid.index(r, c);
                    if owner[n] != usize::MAX {
                        return Err(Error::domain(format!("regions {} and {i} overlap at pixel ({r}, {c})", owner[n])));
                    }
                    owner[n] = i;
                }
            }
        }
        if let Some(n) = owner.iter().position(|&o| o == usize::MAX) {
            let (r, c) = grid.row_col(n);
            return Err(Error::domain(format!("regions do not cover pixel ({r}, {c})")));
        }
        let regions = rects
            .into_iter()
            .map(|rect| {
                let columns = w
                    .columns
                    .iter()
                    .enumerate()
                    .filter_map(|(p, col)| {
                        let part: Vec<(u32, f64)> = col
                            .iter()
                            .copied()
                            .filter(|&(n, _)| {
                                let (r, c) = grid.row_col(n as usize);
                                rect.contains(r, c)
                            })
                            .collect();
                        (!part.is_empty()).then_some((p, part))
                    })
                    .collect();
                Region { rect, columns }
            })
            .collect();
        Ok(RegionPartition {
            pixel_count: grid.pixel_count(),
            pair_count: w.column_count(),
            grid_cols: grid.cols,
            regions,
        })
    }

    pub fn blocks(grid: &Grid, w: &WeightMatrix, count: usize) -> Result<Self> {
        RegionPartition::new(grid, w, block_rects(grid, count)?)
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn rects(&self) -> impl Iterator<Item = Rect> + '_ {
        self.regions.iter().map(|r| r.rect)
    }

    /// Number of pairs whose effective ellipse reaches into each region.
    pub fn pairs_per_region(&self) -> Vec<usize> {
        self.regions.iter().map(|r| r.columns.len()).collect()
    }

    /// Evaluate every region and scatter into one field; also returns the
    /// per-region operation counts.
    pub fn evaluate(
        &self,
        usable: &[bool],
        detections: &[bool],
        exec: Execution,
    ) -> Result<(OccupancyField, Vec<OpCounter>)> {
        check_masks(self.pair_count, usable, detections)?;
        let parts = map_indexed(exec, self.regions.len(), |i| {
            let region = &self.regions[i];
            let rect = region.rect;
            let mut local = vec![0.0; rect.rows * rect.cols];
            let mut ops = OpCounter::default();
            for (p, col) in &region.columns {
                if !(usable[*p] && detections[*p]) {
                    continue;
                }
                for &(n, weight) in col {
                    let n = n as usize;
                    let (r, c) = (n / self.grid_cols, n % self.grid_cols);
                    local[(r - rect.row0) * rect.cols + (c - rect.col0)] += weight;
                }
                ops.additions += col.len() as u64;
            }
            (local, ops)
        });
        let mut values = vec![0.0; self.pixel_count];
        let mut counters = Vec::with_capacity(parts.len());
        for (region, (local, ops)) in self.regions.iter().zip(parts) {
            let rect = region.rect;
            for r in 0..rect.rows {
                let start = (rect.row0 + r) * self.grid_cols + rect.col0;
                values[start..start + rect.cols].copy_from_slice(&local[r * rect.cols..(r + 1) * rect.cols]);
            }
            counters.push(ops);
        }
        Ok((OccupancyField { values }, counters))
    }
}

//! Planar geometry: node deployments, the pixel grid and excess path lengths.
//!
//! A *pair* is an ordered transmitter/receiver couple. A *link* is a pair on
//! one channel, i.e. the `(tx, rx, channel)` triple. Link ids are dense and
//! laid out pair-major: `link = pair * channel_count + channel_index`.
//! Detection fusion, blacklisting and reconstruction operate on pairs, since
//! links of the same pair share their geometry.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Free-space propagation speed in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Extra distance travelled by a ray bouncing at `p` compared with the direct
/// path between `tx` and `rx`. Constant on every ellipse with foci `tx`, `rx`.
pub fn excess_path_length(p: Point, tx: Point, rx: Point) -> f64 {
    let excess = p.distance(rx) + p.distance(tx) - rx.distance(tx);
    // rounding can leave a tiny negative on the segment itself
    excess.max(0.0)
}

/// Area of the ellipse with foci `link_length` apart whose points have excess
/// path length `excess`.
pub fn ellipse_area(link_length: f64, excess: f64) -> Result<f64> {
    if !(link_length > 0.0) {
        return Err(Error::domain(format!(
            "ellipse area needs a positive link length, got {link_length}"
        )));
    }
    if !(excess >= 0.0) {
        return Err(Error::domain(format!(
            "ellipse area needs a nonnegative excess path length, got {excess}"
        )));
    }
    let d = link_length;
    Ok(PI / 4.0 * (d + excess) * (2.0 * d * excess + excess * excess).sqrt())
}

/// Time derivative of the excess path length for an object at `p` moving with
/// velocity `v`.
pub fn excess_path_rate(p: Point, v: Point, tx: Point, rx: Point) -> Result<f64> {
    let to_rx = p - rx;
    let to_tx = p - tx;
    let (nr, nt) = (to_rx.norm(), to_tx.norm());
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::domain(
            "excess path rate is undefined at a node position",
        ));
    }
    let gradient = to_rx * (1.0 / nr) + to_tx * (1.0 / nt);
    Ok(gradient.dot(v))
}

/// Carrier frequency of an IEEE 802.15.4 channel in the 2.4 GHz band.
pub fn ieee802154_frequency(channel: u8) -> Option<f64> {
    (11..=26)
        .contains(&channel)
        .then(|| (2405.0 + 5.0 * f64::from(channel - 11)) * 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub id: u8,
    pub frequency_hz: f64,
}

impl Channel {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub tx: usize,
    pub rx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: usize,
    pub pair: usize,
    pub channel_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    nodes: Vec<Point>,
    pairs: Vec<Pair>,
    channels: Vec<Channel>,
}

impl Deployment {
    pub fn new(nodes: Vec<Point>, pairs: Vec<Pair>, channels: Vec<Channel>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::domain("a deployment needs at least two nodes"));
        }
        for (i, a) in nodes.iter().enumerate() {
            if !(a.x.is_finite() && a.y.is_finite()) {
                return Err(Error::domain(format!("node {i} has a non-finite position")));
            }
            if let Some(j) = nodes[..i].iter().position(|b| b == a) {
                return Err(Error::domain(format!("nodes {j} and {i} share position {a}")));
            }
        }
        if pairs.is_empty() {
            return Err(Error::Empty("deployment pairs"));
        }
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if p.tx >= nodes.len() || p.rx >= nodes.len() {
                return Err(Error::domain(format!(
                    "pair {}->{} references a node outside 0..{}",
                    p.tx,
                    p.rx,
                    nodes.len()
                )));
            }
            if p.tx == p.rx {
                return Err(Error::domain(format!("pair {}->{} is a self loop", p.tx, p.rx)));
            }
            if !seen.insert(*p) {
                return Err(Error::domain(format!("pair {}->{} listed twice", p.tx, p.rx)));
            }
        }
        if channels.is_empty() {
            return Err(Error::Empty("deployment channels"));
        }
        let mut ids = BTreeSet::new();
        for c in &channels {
            if !(c.frequency_hz > 0.0) {
                return Err(Error::domain(format!("channel {} has no positive frequency", c.id)));
            }
            if !ids.insert(c.id) {
                return Err(Error::domain(format!("channel {} listed twice", c.id)));
            }
        }
        Ok(Deployment {
            nodes,
            pairs,
            channels,
        })
    }

    /// Every ordered (or, with `directed = false`, every unordered) node pair.
    pub fn fully_connected(nodes: Vec<Point>, channels: Vec<Channel>, directed: bool) -> Result<Self> {
        let m = nodes.len();
        let mut pairs = Vec::with_capacity(m * m);
        for tx in 0..m {
            for rx in 0..m {
                if tx != rx && (directed || tx < rx) {
                    pairs.push(Pair { tx, rx });
                }
            }
        }
        Deployment::new(nodes, pairs, channels)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn link_count(&self) -> usize {
        self.pairs.len() * self.channels.len()
    }

    pub fn link(&self, id: usize) -> Option<Link> {
        (id < self.link_count()).then(|| Link {
            id,
            pair: id / self.channels.len(),
            channel_index: id % self.channels.len(),
        })
    }

    pub fn link_id(&self, pair: usize, channel_index: usize) -> usize {
        pair * self.channels.len() + channel_index
    }

    pub fn channel_index(&self, id: u8) -> Option<usize> {
        self.channels.iter().position(|c| c.id == id)
    }

    pub fn pair_index(&self, tx: usize, rx: usize) -> Option<usize> {
        self.pairs.iter().position(|p| p.tx == tx && p.rx == rx)
    }

    pub fn endpoints(&self, pair: usize) -> (Point, Point) {
        let p = self.pairs[pair];
        (self.nodes[p.tx], self.nodes[p.rx])
    }

    pub fn pair_length(&self, pair: usize) -> f64 {
        let (tx, rx) = self.endpoints(pair);
        tx.distance(rx)
    }
}

/// Square-pixel grid, row-major, with `row` along +y and `col` along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: Point,
    pub pixel_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn new(origin: Point, pixel_size: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(pixel_size > 0.0) {
            return Err(Error::domain(format!("pixel size must be positive, got {pixel_size}")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::domain("grid needs at least one row and one column"));
        }
        Ok(Grid {
            origin,
            pixel_size,
            rows,
            cols,
        })
    }

    /// Smallest grid anchored at `origin` that covers a `width` x `height` area.
    pub fn covering(origin: Point, width: f64, height: f64, pixel_size: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::domain("covered area must have positive extent"));
        }
        let cols = (width / pixel_size - 1e-9).ceil().max(1.0) as usize;
        let rows = (height / pixel_size - 1e-9).ceil().max(1.0) as usize;
        Grid::new(origin, pixel_size, rows, cols)
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row_col(&self, n: usize) -> (usize, usize) {
        (n / self.cols, n % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn center(&self, n: usize) -> Point {
        let (row, col) = self.row_col(n);
        let d = self.pixel_size;
        Point::new(
            self.origin.x + (col as f64 + 0.5) * d,
            self.origin.y + (row as f64 + 0.5) * d,
        )
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.pixel_size
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.pixel_size
    }
}

/// Excess path length of every pixel center with respect to one pair.
pub fn pixel_excess_lengths(grid: &Grid, deployment: &Deployment, pair: usize) -> Vec<f64> {
    let (tx, rx) = deployment.endpoints(pair);
    (0..grid.pixel_count())
        .map(|n| excess_path_length(grid.center(n), tx, rx))
        .collect()
}

//! Object trajectories, sampled by time.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;

use super::config::TrajectorySpec;

#[derive(Debug, Clone, PartialEq)]
enum Motion {
    Vacant,
    /// Constant-speed polyline with cumulative arc length per vertex.
    Path { points: Vec<Point>, arc: Vec<f64>, speed: f64 },
    Dwell { points: Vec<Point>, dwell_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    motion: Motion,
    duration_s: f64,
}

impl Trajectory {
    /// `area` is the monitored rectangle `[0, w] x [0, h]`.
    pub fn build<R: Rng + ?Sized>(spec: &TrajectorySpec, area: (f64, f64), rng: &mut R) -> Result<Self> {
        match spec {
            TrajectorySpec::Vacant { duration_s } => Ok(Trajectory {
                motion: Motion::Vacant,
                duration_s: *duration_s,
            }),
            TrajectorySpec::RandomWalk { speed, duration_s, margin } => {
                let lo = Point::new(*margin, *margin);
                let hi = Point::new(area.0 - margin, area.1 - margin);
                let points = bounce_walk(lo, hi, speed * duration_s, rng)?;
                Ok(Trajectory::path(points, *speed, *duration_s))
            }
            TrajectorySpec::Waypoints {
                points,
                speed,
                laps,
                closed,
            } => {
                let mut lap = points.clone();
                if *closed {
                    lap.push(points[0]);
                }
                let mut all = vec![points[0]];
                for i in 0..*laps {
                    // an open path runs back and forth
                    if !*closed && i % 2 == 1 {
                        all.extend(lap.iter().rev().skip(1));
                    } else {
                        all.extend(lap.iter().skip(1));
                    }
                }
                let length: f64 = all.windows(2).map(|w| w[0].distance(w[1])).sum();
                Ok(Trajectory::path(all, *speed, length / speed))
            }
            TrajectorySpec::Standstill { points, dwell_s } => Ok(Trajectory {
                motion: Motion::Dwell {
                    points: points.clone(),
                    dwell_s: *dwell_s,
                },
                duration_s: dwell_s * points.len() as f64,
            }),
        }
    }

    fn path(points: Vec<Point>, speed: f64, duration_s: f64) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut s = 0.0;
        arc.push(0.0);
        for w in points.windows(2) {
            s += w[0].distance(w[1]);
            arc.push(s);
        }
        Trajectory {
            motion: Motion::Path { points, arc, speed },
            duration_s,
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration_s
    }

    /// Object position `t` seconds after the object phase starts, or `None`
    /// when no object is present.
    pub fn position(&self, t: f64) -> Option<Point> {
        if !(0.0..=self.duration_s).contains(&t) {
            return None;
        }
        match &self.motion {
            Motion::Vacant => None,
            Motion::Path { points, arc, speed } => {
                let s = (speed * t).min(*arc.last().expect("nonempty path"));
                let i = arc.partition_point(|&a| a <= s).clamp(1, points.len() - 1);
                let seg = arc[i] - arc[i - 1];
                if seg == 0.0 {
                    return Some(points[i]);
                }
                let f = (s - arc[i - 1]) / seg;
                Some(points[i - 1] + (points[i] - points[i - 1]) * f)
            }
            Motion::Dwell { points, dwell_s } => {
                let i = ((t / dwell_s) as usize).min(points.len() - 1);
                Some(points[i])
            }
        }
    }

    /// Vertices of the underlying polyline, if any.
    pub fn vertices(&self) -> &[Point] {
        match &self.motion {
            Motion::Path { points, .. } | Motion::Dwell { points, .. } => points,
            Motion::Vacant => &[],
        }
    }
}

/// Straight runs inside `[lo, hi]`: from a uniform start, head in a uniform
/// direction until the boundary, then pick a new heading that points inward.
fn bounce_walk<R: Rng + ?Sized>(lo: Point, hi: Point, length: f64, rng: &mut R) -> Result<Vec<Point>> {
    if !(hi.x > lo.x && hi.y > lo.y) {
        return Err(Error::domain("random-walk region is empty"));
    }
    let mut p = Point::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
    let mut points = vec![p];
    let mut travelled = 0.0;
    let mut heading = rng.random_range(0.0..TAU);
    while travelled < length {
        let dir = Point::new(heading.cos(), heading.sin());
        let reach = |pos: f64, d: f64, lo: f64, hi: f64| {
            if d > 1e-12 {
                (hi - pos) / d
            } else if d < -1e-12 {
                (lo - pos) / d
            } else {
                f64::INFINITY
            }
        };
        let run = reach(p.x, dir.x, lo.x, hi.x).min(reach(p.y, dir.y, lo.y, hi.y)).max(0.0);
        let next = p + dir * run;
        // clamp rounding so the walk never leaves the region
        let next = Point::new(next.x.clamp(lo.x, hi.x), next.y.clamp(lo.y, hi.y));
        travelled += p.distance(next);
        points.push(next);
        p = next;
        // new heading within 80 degrees of the inward normal(s)
        let inward = Point::new(
            if p.x <= lo.x + 1e-9 { 1.0 } else if p.x >= hi.x - 1e-9 { -1.0 } else { 0.0 },
            if p.y <= lo.y + 1e-9 { 1.0 } else if p.y >= hi.y - 1e-9 { -1.0 } else { 0.0 },
        );
        let base = inward.y.atan2(inward.x);
        heading = base + rng.random_range(-1.396..1.396);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn waypoint_speed_and_polyline() {
        let spec = TrajectorySpec::Waypoints {
            points: vec![Point::new(1.0, 1.0), Point::new(4.0, 1.0), Point::new(4.0, 5.0)],
            speed: 0.5,
            laps: 2,
            closed: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Trajectory::build(&spec, (6.0, 6.0), &mut rng).unwrap();
        assert_close!(t.duration(), 2.0 * 12.0 / 0.5, 1e-12);
        assert_eq!(t.position(0.0), Some(Point::new(1.0, 1.0)));
        let p = t.position(2.0).unwrap();
        assert_close!(p.x, 2.0, 1e-12);
        let p = t.position(10.0).unwrap();
        assert_close!(p.x, 4.0, 1e-12);
        assert_close!(p.y, 3.0, 1e-12);
        assert_eq!(t.position(48.0), Some(Point::new(1.0, 1.0)));
        assert_eq!(t.position(48.1), None);
        // distance covered between samples matches the speed
        let dt = 0.005;
        for k in 0..500 {
            let a = t.position(k as f64 * dt).unwrap();
            let b = t.position((k + 1) as f64 * dt).unwrap();
            assert!(a.distance(b) <= 0.5 * dt * (1.0 + 1e-9));
        }
    }

    #[test]
    fn open_waypoints_go_back_and_forth() {
        let spec = TrajectorySpec::Waypoints {
            points: vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0)],
            speed: 1.0,
            laps: 3,
            closed: false,
        };
        let t = Trajectory::build(&spec, (3.0, 3.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_close!(t.duration(), 6.0, 1e-12);
        assert_eq!(t.position(4.0), Some(Point::new(0.0, 0.0)));
        assert_eq!(t.position(6.0), Some(Point::new(2.0, 0.0)));
    }

    #[test]
    fn random_walk_stays_inside_and_moves_at_speed() {
        let spec = TrajectorySpec::RandomWalk {
            speed: 0.4,
            duration_s: 120.0,
            margin: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = Trajectory::build(&spec, (7.0, 6.0), &mut rng).unwrap();
        let dt = 0.005;
        let mut prev = t.position(0.0).unwrap();
        let (mut min, mut max) = (prev, prev);
        for k in 1..=(120.0 / dt) as usize {
            let p = t.position(k as f64 * dt).unwrap();
            assert!(p.x >= 0.5 - 1e-9 && p.x <= 6.5 + 1e-9 && p.y >= 0.5 - 1e-9 && p.y <= 5.5 + 1e-9);
            assert!(prev.distance(p) <= 0.4 * dt * (1.0 + 1e-9));
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
            prev = p;
        }
        // the walk explores most of the region
        assert!(max.x - min.x > 4.0 && max.y - min.y > 3.0);
        let again = Trajectory::build(&spec, (7.0, 6.0), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn position_lies_on_segment() {
        let spec = TrajectorySpec::RandomWalk {
            speed: 1.0,
            duration_s: 30.0,
            margin: 0.2,
        };
        let t = Trajectory::build(&spec, (4.0, 3.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let v = t.vertices();
        for k in 0..300 {
            let p = t.position(k as f64 * 0.1).unwrap();
            let on = v.windows(2).any(|w| {
                let excess = p.distance(w[0]) + p.distance(w[1]) - w[0].distance(w[1]);
                excess < 1e-9
            });
            assert!(on);
        }
    }

    #[test]
    fn standstill_and_vacant() {
        let spec = TrajectorySpec::Standstill {
            points: vec![Point::new(1.0, 1.0), Point::new(2.0, 2.0)],
            dwell_s: 5.0,
        };
        let t = Trajectory::build(&spec, (3.0, 3.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.position(4.9), Some(Point::new(1.0, 1.0)));
        assert_eq!(t.position(5.0), Some(Point::new(2.0, 2.0)));
        assert_eq!(t.position(10.0), Some(Point::new(2.0, 2.0)));
        let vacant = Trajectory::build(&TrajectorySpec::Vacant { duration_s: 3.0 }, (3.0, 3.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(vacant.position(1.0), None);
    }
}

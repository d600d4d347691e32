//! File formats: frame stream CSV, per-frame estimates CSV, and staged
//! output directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Deployment, Point};

use super::pipeline::FrameEstimate;
use super::{Frame, Reading};

pub const FRAME_HEADER: &str = "frame,time_s,link,channel,rss_db,true_x,true_y";
pub const ESTIMATE_HEADER: &str = "frame_id,time_s,true_x,true_y,est_x,est_y,error_m,support_pixels,detecting_links";

/// One row per reading; `link` is the pair id and `channel` the channel id.
/// Absent objects leave the truth columns empty.
pub fn frames_to_csv(frames: &[Frame], deployment: &Deployment) -> String {
    let mut out = String::with_capacity(frames.len() * 40 * 8);
    out.push_str(FRAME_HEADER);
    out.push('\n');
    for f in frames {
        let truth = match f.truth {
            Some(p) => format!("{},{}", p.x, p.y),
            None => ",".to_string(),
        };
        for r in &f.readings {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{},{truth}",
                f.id,
                f.time_s,
                r.pair,
                deployment.channels()[r.channel_index].id,
                r.rss_db
            );
        }
    }
    out
}

pub fn frames_from_csv(text: &str, origin: &str, deployment: &Deployment) -> Result<Vec<Frame>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FRAME_HEADER => {}
        _ => return Err(Error::Schema(format!("{origin}: expected header `{FRAME_HEADER}`"))),
    }
    let mut frames: Vec<Frame> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 7 {
            return Err(err(line_no, format!("expected 7 columns, got {}", cols.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            cols[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad {name} `{}`", cols[k])))
        };
        let id: usize = cols[0].parse().map_err(|_| err(line_no, format!("bad frame id `{}`", cols[0])))?;
        let time_s = num(1, "time")?;
        let pair: usize = cols[2].parse().map_err(|_| err(line_no, format!("bad link id `{}`", cols[2])))?;
        if pair >= deployment.pair_count() {
            return Err(Error::Schema(format!(
                "{origin}:{line_no}: unknown link id {pair} (deployment has {} links)",
                deployment.pair_count()
            )));
        }
        let channel_index = cols[3]
            .parse::<u8>()
            .ok()
            .and_then(|c| deployment.channel_index(c))
            .ok_or_else(|| Error::Schema(format!("{origin}:{line_no}: unknown channel `{}`", cols[3])))?;
        let rss_db = num(4, "rss")?;
        let truth = match (cols[5], cols[6]) {
            ("", "") => None,
            _ => Some(Point::new(num(5, "true_x")?, num(6, "true_y")?)),
        };
        let reading = Reading {
            pair,
            channel_index,
            rss_db,
        };
        match frames.last_mut() {
            Some(f) if f.id == id => {
                if f.time_s != time_s || f.truth != truth {
                    return Err(err(line_no, format!("frame {id} has inconsistent time or truth")));
                }
                f.readings.push(reading);
            }
            Some(f) if f.id > id => {
                return Err(err(line_no, format!("frame {id} follows frame {}; frames must be ordered", f.id)));
            }
            _ => frames.push(Frame {
                id,
                time_s,
                truth,
                readings: vec![reading],
            }),
        }
    }
    Ok(frames)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"))
}

pub fn estimates_to_csv(estimates: &[FrameEstimate]) -> String {
    let mut out = String::with_capacity(estimates.len() * 80);
    out.push_str(ESTIMATE_HEADER);
    out.push('\n');
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{},{},{},{},{}",
            e.frame,
            e.time_s,
            fmt_opt(e.truth.map(|p| p.x)),
            fmt_opt(e.truth.map(|p| p.y)),
            fmt_opt(e.estimate.map(|p| p.position.x)),
            fmt_opt(e.estimate.map(|p| p.position.y)),
            fmt_opt(e.error()),
            e.estimate.map_or(0, |p| p.support),
            e.detecting
        );
    }
    out
}

/// Summary of an estimates file: distance errors of the frames that have
/// both a truth and an estimate, plus frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub errors: Vec<f64>,
    pub frames: usize,
    pub frames_with_object: usize,
    pub frames_with_estimate: usize,
}

pub fn estimates_from_csv(text: &str, origin: &str) -> Result<EstimateSummary> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ESTIMATE_HEADER => {}
        _ => return Err(Error::Schema(format!("{origin}: expected header `{ESTIMATE_HEADER}`"))),
    }
    let mut s = EstimateSummary {
        errors: Vec::new(),
        frames: 0,
        frames_with_object: 0,
        frames_with_estimate: 0,
    };
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("expected 9 columns, got {}", cols.len()),
            });
        }
        s.frames += 1;
        if cols[2] != "none" {
            s.frames_with_object += 1;
        }
        if cols[4] != "none" {
            s.frames_with_estimate += 1;
        }
        if cols[6] != "none" {
            let e: f64 = cols[6].parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("bad error_m `{}`", cols[6]),
            })?;
            s.errors.push(e);
        }
    }
    Ok(s)
}

/// Files to be written together: either all of them land in the output
/// directory or none do.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        OutputSet::default()
    }

    pub fn add(&mut self, relative: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((relative.into(), bytes.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn get(&self, relative: &str) -> Option<&[u8]> {
        self.files.iter().find(|(p, _)| p == Path::new(relative)).map(|(_, b)| b.as_slice())
    }

    /// Write into a staging directory next to `out`, then move the files in.
    pub fn commit(&self, out: &Path) -> Result<()> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        let result = self.stage(&staging).and_then(|()| self.move_into(&staging, out));
        let _ = fs::remove_dir_all(&staging);
        result
    }

    fn stage(&self, staging: &Path) -> Result<()> {
        if let Some(parent) = staging.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        for (rel, bytes) in &self.files {
            let path = staging.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn move_into(&self, staging: &Path, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (rel, _) in &self.files {
            let to = out.join(rel);
            if let Some(dir) = to.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(staging.join(rel), &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    }
}

//! Text and CSV reports of a run, plus histogram data for plotting.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::reconstruction::OpCounter;

use super::{ErrorStats, FitResult, Fitted};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Freedman-Diaconis bins spanning `[min, max]`. A zero interquartile range
/// falls back to a single bin.
pub fn histogram(data: &[f64]) -> Result<Vec<HistogramBin>> {
    if data.is_empty() {
        return Err(Error::Empty("histogram data"));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < n {
            sorted[i] + f * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    let width = 2.0 * (quantile(0.75) - quantile(0.25)) / (n as f64).cbrt();
    let bins = if width > 0.0 && hi > lo {
        (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { lo + bins as f64 * width } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for x in sorted {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    Ok(out)
}

pub fn histogram_csv(bins: &[HistogramBin], fitted: &Fitted) -> String {
    let mut out = String::from("bin_left,bin_right,count,fitted_density_at_center\n");
    for b in bins {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{},{:.6}",
            b.left,
            b.right,
            b.count,
            fitted.pdf(0.5 * (b.left + b.right))
        );
    }
    out
}

/// Mean localization errors of one reference experiment: the reference mean
/// and the means reported for other methods on the same setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub experiment: usize,
    pub mean_m: f64,
    pub others: &'static [(&'static str, f64)],
}

pub const REFERENCES: [Reference; 4] = [
    Reference {
        experiment: 1,
        mean_m: 0.3085,
        others: &[("network-shadowing", 0.2909)],
    },
    Reference {
        experiment: 2,
        mean_m: 0.2368,
        others: &[("fade-level", 0.17), ("channel-diversity", 0.25)],
    },
    Reference {
        experiment: 3,
        mean_m: 0.3096,
        others: &[("fade-level", 0.23), ("channel-diversity", 0.24)],
    },
    Reference {
        experiment: 4,
        mean_m: 0.4146,
        others: &[("fade-level", 0.30), ("channel-diversity", 0.72)],
    },
];

pub fn reference(experiment: usize) -> Option<&'static Reference> {
    REFERENCES.iter().find(|r| r.experiment == experiment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs<'a> {
    /// `key = value` lines describing the configuration.
    pub config_summary: &'a str,
    pub frames: usize,
    pub frames_with_object: usize,
    pub frames_with_estimate: usize,
    pub stats: Option<ErrorStats>,
    pub fits: &'a [FitResult],
    pub significance: f64,
    /// Summed over all estimation frames, when known.
    pub ops: Option<OpCounter>,
    pub comparisons: &'a [Reference],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    /// `(file name, contents)` of each CSV table.
    pub tables: Vec<(String, String)>,
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"))
}

fn params(f: &Fitted) -> String {
    f.params()
        .iter()
        .map(|(k, v)| format!("{k}={v:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn emit_report(input: &ReportInputs) -> Report {
    let mut t = String::new();
    let mut tables = Vec::new();
    t.push_str("[configuration]\n");
    t.push_str(input.config_summary);
    if !input.config_summary.ends_with('\n') {
        t.push('\n');
    }

    let _ = writeln!(t, "\n[frames]");
    let _ = writeln!(t, "estimation frames      {}", input.frames);
    let _ = writeln!(t, "with object            {}", input.frames_with_object);
    let _ = writeln!(t, "with estimate          {}", input.frames_with_estimate);

    let s = input.stats;
    let _ = writeln!(t, "\n[distance error statistics]");
    let _ = writeln!(t, "count                  {}", s.map_or(0, |s| s.count));
    let _ = writeln!(t, "mean (m)               {}", opt(s.map(|s| s.mean), 4));
    let _ = writeln!(t, "variance (m^2)         {}", opt(s.map(|s| s.variance), 4));
    let _ = writeln!(t, "skewness               {}", opt(s.and_then(|s| s.skewness), 4));
    let mut csv = String::from("count,mean_m,variance_m2,skewness\n");
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        s.map_or(0, |s| s.count),
        opt(s.map(|s| s.mean), 6),
        opt(s.map(|s| s.variance), 6),
        opt(s.and_then(|s| s.skewness), 6)
    );
    tables.push(("error_stats.csv".to_string(), csv));

    if !input.fits.is_empty() {
        let _ = writeln!(t, "\n[goodness of fit, significance {}]", input.significance);
        let _ = writeln!(t, "{:<12}{:<36}{:>10}{:>10}{:>4}", "family", "parameters", "ks", "p-value", "h");
        let mut csv = String::from("family,parameters,ks_statistic,p_value,h\n");
        for f in input.fits {
            let name = f.fitted.family().name();
            let _ = writeln!(
                t,
                "{:<12}{:<36}{:>10.4}{:>10.4}{:>4}",
                name,
                params(&f.fitted),
                f.ks.statistic,
                f.ks.p_value,
                u8::from(f.ks.reject)
            );
            let _ = writeln!(
                csv,
                "{name},{},{:.6},{:.6},{}",
                params(&f.fitted),
                f.ks.statistic,
                f.ks.p_value,
                u8::from(f.ks.reject)
            );
        }
        tables.push(("fits.csv".to_string(), csv));
    }

    if let Some(ops) = input.ops {
        let per_frame = |v: u64| {
            if input.frames == 0 {
                0.0
            } else {
                v as f64 / input.frames as f64
            }
        };
        let _ = writeln!(t, "\n[reconstruction operations]");
        let _ = writeln!(t, "additions              {} ({:.1} per frame)", ops.additions, per_frame(ops.additions));
        let _ = writeln!(
            t,
            "multiplications        {} ({:.1} per frame)",
            ops.multiplications,
            per_frame(ops.multiplications)
        );
        tables.push((
            "operations.csv".to_string(),
            format!(
                "frames,additions,multiplications\n{},{},{}\n",
                input.frames, ops.additions, ops.multiplications
            ),
        ));
    }

    if !input.comparisons.is_empty() {
        let _ = writeln!(t, "\n[mean error comparison]");
        let _ = writeln!(t, "{:<12}{:>12}{:>14}  other methods", "experiment", "this run", "reference");
        let mut csv = String::from("experiment,this_run_m,reference_m,method,method_m\n");
        let mean = opt(s.map(|s| s.mean), 4);
        for r in input.comparisons {
            let others = r
                .others
                .iter()
                .map(|(m, v)| format!("{m} {v:.4}"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(t, "{:<12}{:>12}{:>14.4}  {others}", r.experiment, mean, r.mean_m);
            for (m, v) in r.others {
                let _ = writeln!(csv, "{},{},{:.4},{m},{v:.4}", r.experiment, opt(s.map(|s| s.mean), 6), r.mean_m);
            }
        }
        tables.push(("comparison.csv".to_string(), csv));
    }
    Report { text: t, tables }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{error_stats, fit_all, DEFAULT_SIGNIFICANCE};

    fn sample() -> Vec<f64> {
        (1..=200).map(|i| 0.05 + ((i * 37) % 101) as f64 / 250.0).collect()
    }

    #[test]
    fn histogram_counts_everything() {
        let data = sample();
        let bins = histogram(&data).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), data.len());
        for w in bins.windows(2) {
            assert_eq!(w[0].right, w[1].left);
        }
        let max = data.iter().cloned().fold(f64::MIN, f64::max);
        assert_close!(bins.last().unwrap().right, max, 1e-12);
        // Freedman-Diaconis on 200 points spread over 0.4 m
        assert!(bins.len() > 3 && bins.len() < 20, "{}", bins.len());
        let single = histogram(&[0.3; 4]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].count, 4);
        assert!(histogram(&[]).is_err());
    }

    #[test]
    fn histogram_csv_layout() {
        let bins = [HistogramBin { left: 0.0, right: 1.0, count: 3 }];
        let csv = histogram_csv(&bins, &Fitted::Rayleigh { sigma: 1.0 });
        assert_eq!(csv, "bin_left,bin_right,count,fitted_density_at_center\n0.000000,1.000000,3,0.441248\n");
    }

    fn inputs<'a>(fits: &'a [FitResult], comparisons: &'a [Reference]) -> ReportInputs<'a> {
        ReportInputs {
            config_summary: "gamma = 0.35\n",
            frames: 200,
            frames_with_object: 200,
            frames_with_estimate: 200,
            stats: Some(error_stats(&sample()).unwrap()),
            fits,
            significance: DEFAULT_SIGNIFICANCE,
            ops: Some(OpCounter { additions: 4000, multiplications: 0 }),
            comparisons,
        }
    }

    #[test]
    fn report_sections() {
        let fits = fit_all(&sample(), DEFAULT_SIGNIFICANCE).unwrap();
        let plain = emit_report(&inputs(&fits, &[]));
        assert!(plain.text.contains("gamma = 0.35"));
        assert!(plain.text.contains("[distance error statistics]"));
        assert!(plain.text.contains("multiplications        0"));
        assert!(!plain.text.contains("comparison"));
        assert!(plain.tables.iter().all(|(n, _)| n != "comparison.csv"));
        let fits_csv = &plain.tables.iter().find(|(n, _)| n == "fits.csv").unwrap().1;
        assert_eq!(fits_csv.lines().count(), 4);

        let refs = [*reference(2).unwrap()];
        let cmp = emit_report(&inputs(&fits, &refs));
        assert!(cmp.text.contains("[mean error comparison]"));
        assert!(cmp.text.contains("fade-level 0.1700, channel-diversity 0.2500"));
        assert_eq!(cmp, emit_report(&inputs(&fits, &refs)));
    }

    #[test]
    fn report_without_errors() {
        let mut i = inputs(&[], &[]);
        i.stats = None;
        i.ops = None;
        let r = emit_report(&i);
        assert!(r.text.contains("mean (m)               n/a"));
        assert!(!r.text.contains("operations"));
    }

    #[test]
    fn reference_table() {
        assert_eq!(REFERENCES.iter().map(|r| r.mean_m).collect::<Vec<_>>(), [0.3085, 0.2368, 0.3096, 0.4146]);
        assert_eq!(reference(1).unwrap().others, &[("network-shadowing", 0.2909)]);
        assert!(reference(5).is_none());
    }
}

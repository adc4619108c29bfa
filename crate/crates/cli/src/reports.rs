//! Charts rebuilt from the CSV reports that experiments leave behind.

use std::path::{Path, PathBuf};

use auxstep::experiment::BASELINE_CSV;
use auxstep::plot::{Chart, LineStyle, Point, Reference, Series};
use auxstep::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct SweepLine {
    task: String,
    alpha: f64,
    mean_absrel: f64,
    stderr: f64,
}

#[derive(Debug, Deserialize)]
struct EfficiencyLine {
    fraction: f64,
    method: String,
    mean_absrel: f64,
    stderr: f64,
}

#[derive(Debug, Deserialize)]
struct BaselineLine {
    mean_absrel: f64,
    stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Sweep,
    Efficiency,
}

fn read<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let bad = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    reader.deserialize().collect::<std::result::Result<Vec<R>, _>>().map_err(bad)
}

fn kind_of(path: &Path) -> Result<Kind> {
    let bad = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    let headers = reader.headers().map_err(bad)?;
    match headers.get(0) {
        Some("task") => Ok(Kind::Sweep),
        Some("fraction") => Ok(Kind::Efficiency),
        _ => Err(Error::Config(format!(
            "{}: not a sweep or data-efficiency report",
            path.display()
        ))),
    }
}

/// Appends `line` to the series called `label`, creating it on first use.
fn push(series: &mut Vec<Series>, label: String, point: Point, style: LineStyle) {
    match series.iter_mut().find(|s| s.label == label) {
        Some(s) => s.points.push(point),
        None => series.push(Series {
            label,
            points: vec![point],
            style,
        }),
    }
}

/// One chart over every report. Sweep reports give one series per task
/// (labelled with the file when several are given) and pick up a sibling
/// `baseline.csv` as the reference line; data-efficiency reports give one
/// series per method on a log axis.
pub fn chart(paths: &[PathBuf]) -> Result<Chart> {
    let Some(first) = paths.first() else {
        return Err(Error::Config("no reports given".into()));
    };
    let kind = kind_of(first)?;
    let mut series = Vec::new();
    let mut reference = None;
    for path in paths {
        if kind_of(path)? != kind {
            return Err(Error::Config("cannot mix sweep and data-efficiency reports".into()));
        }
        let tag = |label: &str| {
            if paths.len() > 1 {
                format!("{label} ({})", path.display())
            } else {
                label.to_string()
            }
        };
        match kind {
            Kind::Sweep => {
                for l in read::<SweepLine>(path)? {
                    let p = Point {
                        x: l.alpha,
                        y: l.mean_absrel,
                        err: l.stderr,
                    };
                    push(&mut series, tag(&l.task), p, LineStyle::Solid);
                }
                let base = path.with_file_name(BASELINE_CSV);
                if reference.is_none() && base.exists() {
                    if let Some(b) = read::<BaselineLine>(&base)?.first() {
                        reference = Some(Reference {
                            label: "baseline".into(),
                            y: b.mean_absrel,
                            err: b.stderr,
                        });
                    }
                }
            }
            Kind::Efficiency => {
                for l in read::<EfficiencyLine>(path)? {
                    let style = if l.method == "baseline" { LineStyle::Dashed } else { LineStyle::Solid };
                    let p = Point {
                        x: l.fraction,
                        y: l.mean_absrel,
                        err: l.stderr,
                    };
                    push(&mut series, tag(&l.method), p, style);
                }
            }
        }
    }
    if series.is_empty() {
        return Err(Error::Config("the reports contain no rows".into()));
    }
    let (title, x_label, log_x) = match kind {
        Kind::Sweep => ("AbsRel vs alpha", "alpha", false),
        Kind::Efficiency => ("AbsRel vs fraction of depth data", "fraction of depth training data", true),
    };
    Ok(Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "AbsRel".into(),
        log_x,
        series,
        reference,
    })
}

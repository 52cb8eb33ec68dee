//! Plain-text trajectory files.
//!
//! ```text
//! fwplan-trajectory 1
//! segments 2
//! segment <degree> <t0> <tf>
//! <x> <y> <z>        (degree + 1 control points, ENU metres)
//! ...
//! ```
//!
//! Lines starting with `#` are comments. Numbers are written with 17
//! significant digits so a file round-trips bit for bit.

use std::io::{self, Write};
use std::path::Path;

use fwplan_core::bernstein::{BernsteinSegment, PiecewiseTrajectory};
use fwplan_core::Vector3;

use crate::error::{in_file, read_file, FileError, FormatError};

pub const TRAJECTORY_VERSION: u32 = 1;
const MAGIC: &str = "fwplan-trajectory";

pub fn write_trajectory<W: Write>(mut w: W, traj: &PiecewiseTrajectory) -> io::Result<()> {
    writeln!(w, "# piecewise Bernstein trajectory; times in s, control points in ENU m")?;
    writeln!(w, "{MAGIC} {TRAJECTORY_VERSION}")?;
    writeln!(w, "segments {}", traj.segment_count())?;
    for seg in traj.segments() {
        writeln!(w, "segment {} {:.16e} {:.16e}", seg.degree(), seg.t0(), seg.tf())?;
        for p in seg.control_points() {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}

pub fn format_trajectory(traj: &PiecewiseTrajectory) -> String {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, traj).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("trajectory text is ASCII")
}

fn numbers(line: usize, text: &str, count: usize) -> Result<Vec<f64>, FormatError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| FormatError::line(line, format!("`{t}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if values.len() != count {
        return Err(FormatError::line(line, format!("expected {count} numbers, found {}", values.len())));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(FormatError::line(line, format!("non-finite value {bad}")));
    }
    Ok(values)
}

pub fn parse_trajectory(text: &str) -> Result<PiecewiseTrajectory, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| FormatError::line(0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| FormatError::line(ln, format!("expected `{MAGIC} <version>`")))?;
    if version != TRAJECTORY_VERSION {
        return Err(FormatError::Version { found: version, expected: TRAJECTORY_VERSION });
    }
    let (ln, count) = next("segment count")?;
    let count: usize = count
        .strip_prefix("segments")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| FormatError::line(ln, "expected `segments <count>`"))?;

    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, head) = next("segment header")?;
        let rest = head
            .strip_prefix("segment ")
            .ok_or_else(|| FormatError::line(ln, "expected `segment <degree> <t0> <tf>`"))?;
        let mut parts = rest.split_whitespace();
        let degree: usize = parts
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| FormatError::line(ln, "bad segment degree"))?;
        let times = numbers(ln, &parts.collect::<Vec<_>>().join(" "), 2)?;
        let mut points = Vec::with_capacity(degree + 1);
        for _ in 0..=degree {
            let (ln, p) = next("control point")?;
            let v = numbers(ln, p, 3)?;
            points.push(Vector3::new(v[0], v[1], v[2]));
        }
        let seg = BernsteinSegment::new(points, times[0], times[1])
            .map_err(|e| FormatError::line(ln, e.to_string()))?;
        segments.push(seg);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(FormatError::line(ln, "trailing content after the last segment"));
    }
    PiecewiseTrajectory::new(segments).map_err(|e| FormatError::line(0, e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<PiecewiseTrajectory, FileError> {
    let text = read_file(path)?;
    in_file(path, parse_trajectory(&text))
}

//! Point files: one direction per row, comma separated.
//!
//! Rows hold Cartesian coordinates (`d >= 3` columns, normalized on read) or,
//! in spherical mode, `theta,phi` with `theta` the colatitude in radians. The
//! first row may be a header if none of its fields is a number. Blank lines
//! and lines starting with `#` are skipped.

use std::io::Read;

use spherekde::estimator::Sample;
use spherekde::geometry::{normalize, UnitVector};

use crate::CliError;

fn parse_error(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("line {line}: {msg}"))
}

pub fn read_sample<R: Read>(input: R, spherical: bool) -> Result<Sample, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut points: Vec<UnitVector> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if first && parsed.iter().all(Result::is_err) {
            first = false;
            continue;
        }
        first = false;
        let mut row = Vec::with_capacity(parsed.len());
        for (field, value) in record.iter().zip(parsed) {
            match value {
                Ok(v) if v.is_finite() => row.push(v),
                _ => return Err(parse_error(line, format!("'{field}' is not a finite number"))),
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_error(line, format!("expected {w} columns, found {}", row.len())))
            }
            _ => {}
        }
        let point = if spherical {
            if row.len() != 2 {
                return Err(parse_error(line, "spherical rows need exactly two columns (theta, phi)"));
            }
            if !(0.0..=std::f64::consts::PI).contains(&row[0]) {
                return Err(parse_error(line, format!("colatitude {} is outside [0, pi]", row[0])));
            }
            UnitVector::from_spherical(row[0], row[1])
        } else {
            if row.len() < 3 {
                return Err(parse_error(line, format!("need at least 3 coordinates, found {}", row.len())));
            }
            normalize(&row).map_err(|e| parse_error(line, e))?
        };
        points.push(point);
    }
    if points.is_empty() {
        return Err(CliError::Parse("input contains no data rows".into()));
    }
    Ok(Sample::new(points)?)
}

//! Plain-text formats: point, curve, envelope, profile and trajectory CSV
//! files, and the JSON fit report.
//!
//! Reals are written with 17 significant digits (`%.17g` style), which
//! round-trips every `f64` exactly and makes outputs byte-comparable.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cftp::{DominatingTrajectory, EventKind};
use crate::geometry::{GeometryError, Point, PointPattern, Window};
use crate::inference::{FitResult, ProfileCell};
use crate::stats::{EnvelopeBand, SummaryCurve};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Formats `x` like C's `%.17g`.
pub fn fmt_g17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip_zeros(format!("{x:.decimals$}"))
    } else {
        let m = strip_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), IoError> {
    let found = reader.headers()?.clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(IoError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn parse_field(record: &csv::StringRecord, i: usize) -> Result<f64, IoError> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(i).ok_or_else(|| IoError::Parse {
        line,
        message: format!("missing column {}", i + 1),
    })?;
    raw.trim().parse().map_err(|_| IoError::Parse {
        line,
        message: format!("`{raw}` is not a number"),
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

/// Reads an `x,y` file into a pattern on `window`. Every point must lie in the window.
pub fn read_points<R: Read>(input: R, window: Window) -> Result<PointPattern, IoError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["x", "y"])?;
    let mut pts = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let p = Point::new(parse_field(&record, 0)?, parse_field(&record, 1)?);
        if !window.contains(p) {
            let line = record.position().map_or(0, |p| p.line());
            return Err(IoError::Parse {
                line,
                message: format!("point ({}, {}) lies outside the window", p.x, p.y),
            });
        }
        pts.push(p);
    }
    Ok(PointPattern::new(window, pts)?)
}

/// Reads `x,y` rows without a window, e.g. to find a bounding box.
pub fn read_raw_points<R: Read>(input: R) -> Result<Vec<Point>, IoError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["x", "y"])?;
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok(Point::new(parse_field(&r, 0)?, parse_field(&r, 1)?))
        })
        .collect()
}

pub fn write_points<W: Write>(out: W, pattern: &PointPattern) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y"])?;
    for p in pattern.points() {
        w.write_record([fmt_g17(p.x), fmt_g17(p.y)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve<W: Write>(out: W, curve: &SummaryCurve) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "value"])?;
    for (r, v) in curve.r.iter().zip(&curve.values) {
        w.write_record([fmt_g17(*r), fmt_g17(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `r,value` file back into its two columns.
pub fn read_curve<R: Read>(input: R) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["r", "value"])?;
    let mut r = Vec::new();
    let mut v = Vec::new();
    for record in rdr.records() {
        let record = record?;
        r.push(parse_field(&record, 0)?);
        v.push(parse_field(&record, 1)?);
    }
    Ok((r, v))
}

pub fn write_envelope<W: Write>(out: W, band: &EnvelopeBand) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "lo", "mean", "hi", "data"])?;
    for k in 0..band.r.len() {
        w.write_record([band.r[k], band.lo[k], band.mean[k], band.hi[k], band.data[k]].map(fmt_g17))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of an envelope file: `[r, lo, mean, hi, data]`.
pub fn read_envelope<R: Read>(input: R) -> Result<Vec<[f64; 5]>, IoError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["r", "lo", "mean", "hi", "data"])?;
    rdr.records()
        .map(|r| {
            let r = r?;
            let mut row = [0.0; 5];
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = parse_field(&r, i)?;
            }
            Ok(row)
        })
        .collect()
}

/// Failed cells are written with an empty `logPL`.
pub fn write_profile<W: Write>(out: W, table: &[ProfileCell]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r1", "r2", "logPL"])?;
    for cell in table {
        w.write_record([
            fmt_g17(cell.r1),
            fmt_g17(cell.r2),
            cell.log_pl.map(fmt_g17).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fit report with the field names used on disk. Radii and `γ`s of absent
/// terms are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log10_lambda: f64,
    pub log10_gamma1: Option<f64>,
    pub log10_gamma2: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    #[serde(rename = "logPL")]
    pub log_pl: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `(log10 λ, log10 γ₁, log10 γ₂)`; `null` where undefined.
    pub std_errors: Vec<Option<f64>>,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        Self {
            log10_lambda: f.log10_lambda,
            log10_gamma1: f.log10_gammas.first().copied(),
            log10_gamma2: f.log10_gammas.get(1).copied(),
            r1: f.radii.first().copied(),
            r2: f.radii.get(1).copied(),
            log_pl: f.log_pl,
            converged: f.converged,
            iterations: f.iterations,
            std_errors: f.std_errors.iter().map(|s| s.is_finite().then_some(*s)).collect(),
        }
    }
}

pub fn write_fit_report<W: Write>(mut out: W, fit: &FitResult) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut out, &FitReport::from(fit))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Dumps a trajectory as `time,kind,point_id,x,y,mark`. The state at the
/// horizon comes first as `initial` rows at time `-T`; deaths leave the
/// location and mark empty.
pub fn write_trajectory<W: Write>(out: W, traj: &DominatingTrajectory) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "kind", "point_id", "x", "y", "mark"])?;
    let start = fmt_g17(-traj.horizon());
    for &id in traj.oldest_ids() {
        let rec = traj.record(id);
        w.write_record([
            start.clone(),
            "initial".into(),
            id.to_string(),
            fmt_g17(rec.location.x),
            fmt_g17(rec.location.y),
            fmt_g17(rec.mark),
        ])?;
    }
    for e in traj.events() {
        let row = match e.kind {
            EventKind::Birth { location, mark } => [
                fmt_g17(e.time),
                "birth".into(),
                e.point_id.to_string(),
                fmt_g17(location.x),
                fmt_g17(location.y),
                fmt_g17(mark),
            ],
            EventKind::Death => [
                fmt_g17(e.time),
                "death".into(),
                e.point_id.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;
    use crate::rng::SeedPath;
    use crate::stats::{Correction, Statistic};

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(2.0), "2");
        assert_eq!(fmt_g17(-1234.5), "-1234.5");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(0.0), "0");
        for x in [std::f64::consts::PI, 1.0 / 3.0, 6.02e23, -2.5e-300, 0.000123456789] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn points_round_trip() {
        let w = Window::unit_square(Boundary::Clip);
        let mut rng = SeedPath::new(3).rng();
        let p = PointPattern::new(w, (0..25).map(|_| w.sample_uniform(&mut rng)).collect()).unwrap();
        let mut buf = Vec::new();
        write_points(&mut buf, &p).unwrap();
        let back = read_points(buf.as_slice(), w).unwrap();
        assert_eq!(back.points(), p.points());
    }

    #[test]
    fn point_reader_errors() {
        let w = Window::unit_square(Boundary::Clip);
        assert!(matches!(
            read_points("a,b\n1,2\n".as_bytes(), w),
            Err(IoError::Header { .. })
        ));
        assert!(matches!(
            read_points("x,y\n0.5,zz\n".as_bytes(), w),
            Err(IoError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_points("x,y\n1.5,0.5\n".as_bytes(), w),
            Err(IoError::Parse { .. })
        ));
        let ok = read_points("x,y\n# comment\n 0.25 , 0.75\n".as_bytes(), w).unwrap();
        assert_eq!(ok.points(), &[Point::new(0.25, 0.75)]);
    }

    #[test]
    fn curve_and_envelope_headers() {
        let curve = SummaryCurve {
            statistic: Statistic::K,
            correction: Correction::Torus,
            r: vec![0.1, 0.2],
            values: vec![0.0, 0.5],
        };
        let mut buf = Vec::new();
        write_curve(&mut buf, &curve).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "r,value\n0.10000000000000001,0\n0.20000000000000001,0.5\n"
        );
        assert_eq!(
            read_curve(buf.as_slice()).unwrap(),
            (curve.r.clone(), curve.values.clone())
        );

        let band = EnvelopeBand {
            statistic: Statistic::L,
            correction: Correction::Ripley,
            r: vec![0.25],
            lo: vec![0.5],
            mean: vec![0.75],
            hi: vec![1.0],
            data: vec![2.0],
            n_sim: 2,
        };
        let mut buf = Vec::new();
        write_envelope(&mut buf, &band).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "r,lo,mean,hi,data\n0.25,0.5,0.75,1,2\n"
        );
        assert_eq!(
            read_envelope(buf.as_slice()).unwrap(),
            vec![[0.25, 0.5, 0.75, 1.0, 2.0]]
        );
    }

    #[test]
    fn fit_report_keys() {
        let fit = FitResult {
            log10_lambda: 2.0,
            log10_gammas: vec![0.5, -0.25],
            radii: vec![0.07, 0.013],
            log_pl: -12.5,
            converged: true,
            iterations: 7,
            std_errors: vec![0.1, 0.2, f64::NAN],
            constrained: false,
            in_parameter_space: true,
            theta: vec![],
        };
        let mut buf = Vec::new();
        write_fit_report(&mut buf, &fit).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let keys: std::collections::BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let expected = [
            "log10_lambda",
            "log10_gamma1",
            "log10_gamma2",
            "r1",
            "r2",
            "logPL",
            "converged",
            "iterations",
            "std_errors",
        ];
        assert_eq!(keys, expected.into_iter().collect());
        assert_eq!(v["std_errors"][2], serde_json::Value::Null);
        assert_eq!(v["logPL"], -12.5);
    }

    #[test]
    fn profile_rows() {
        let table = vec![
            ProfileCell {
                r1: 0.05,
                r2: 0.01,
                log_pl: Some(-3.0),
            },
            ProfileCell {
                r1: 0.05,
                r2: 0.02,
                log_pl: None,
            },
        ];
        let mut buf = Vec::new();
        write_profile(&mut buf, &table).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "r1,r2,logPL\n0.050000000000000003,0.01,-3\n0.050000000000000003,0.02,\n"
        );
    }
}

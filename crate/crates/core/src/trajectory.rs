//! Time-indexed records of a run and their CSV form.
//!
//! Column contract: `time_min, od_true, od_meas, setpoint, pump_rate, temp_c`.
//! `od_true` and `setpoint` are left empty when unknown (hardware data, open loop).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NOMINAL_TEMP_C, U_MAX};

pub const CSV_HEADER: [&str; 6] = [
    "time_min",
    "od_true",
    "od_meas",
    "setpoint",
    "pump_rate",
    "temp_c",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x_true: Option<f64>,
    pub y_meas: f64,
    pub setpoint: Option<f64>,
    pub u: f64,
    pub temp_c: f64,
}

impl Sample {
    pub fn measured(t: f64, y_meas: f64, u: f64) -> Self {
        Self {
            t,
            x_true: None,
            y_meas,
            setpoint: None,
            u,
            temp_c: NOMINAL_TEMP_C,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let mut traj = Self::new();
        for s in samples {
            traj.push(s)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, s: Sample) -> Result<()> {
        if !s.t.is_finite() || !s.y_meas.is_finite() {
            return Err(Error::NonFinite(format!("sample at t = {}", s.t)));
        }
        if let Some(last) = self.samples.last() {
            if s.t <= last.t {
                return Err(Error::InvalidParameter(format!(
                    "sample times must increase strictly: {} after {}",
                    s.t, last.t
                )));
            }
        }
        if !(0.0..=U_MAX).contains(&s.u) {
            return Err(Error::InvalidParameter(format!(
                "pump rate {} at t = {} outside [0, {U_MAX}]",
                s.u, s.t
            )));
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.y_meas)
    }

    pub fn inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.u)
    }

    /// Duration from the first to the last sample.
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Samples whose time lies in `[from, to)`.
    pub fn window(&self, from: f64, to: f64) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.t >= from && s.t < to)
    }

    /// Whether both trajectories share the same time grid.
    pub fn same_grid(&self, other: &Trajectory) -> bool {
        self.len() == other.len() && self.times().zip(other.times()).all(|(a, b)| a == b)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.samples {
            out.write_record([
                s.t.to_string(),
                opt(s.x_true),
                s.y_meas.to_string(),
                opt(s.setpoint),
                s.u.to_string(),
                s.temp_c.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    /// Read a trajectory from CSV.
    ///
    /// `time_min`, `pump_rate` and an OD column (`od`, or `od_meas`) are
    /// required; the other contract columns are optional.
    pub fn read_csv<R: Read>(r: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().all(|h| h.is_empty()) {
            // an empty file is an empty record, not a malformed one
            return Ok(Trajectory::new());
        }
        let col = |name: &str| headers.iter().position(|h| h == name);
        let time = col("time_min").ok_or_else(|| Error::MissingColumn("time_min".into()))?;
        let od = col("od")
            .or_else(|| col("od_meas"))
            .ok_or_else(|| Error::MissingColumn("od".into()))?;
        let pump = col("pump_rate").ok_or_else(|| Error::MissingColumn("pump_rate".into()))?;
        let od_true = col("od_true");
        let setpoint = col("setpoint");
        let temp = col("temp_c");

        let mut traj = Trajectory::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let parse_err = |msg: String| Error::Parse {
                path: source.to_string(),
                line,
                msg,
            };
            let field = |idx: usize, name: &str| -> Result<Option<f64>> {
                match rec.get(idx) {
                    None | Some("") => Ok(None),
                    Some(v) => v
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| parse_err(format!("column `{name}`: `{v}` is not a number"))),
                }
            };
            let required = |idx: usize, name: &str| -> Result<f64> {
                field(idx, name)?.ok_or_else(|| parse_err(format!("column `{name}` is empty")))
            };
            let sample = Sample {
                t: required(time, "time_min")?,
                y_meas: required(od, "od")?,
                u: required(pump, "pump_rate")?,
                x_true: od_true.map(|i| field(i, "od_true")).transpose()?.flatten(),
                setpoint: setpoint
                    .map(|i| field(i, "setpoint"))
                    .transpose()?
                    .flatten(),
                temp_c: temp
                    .map(|i| field(i, "temp_c"))
                    .transpose()?
                    .flatten()
                    .unwrap_or(NOMINAL_TEMP_C),
            };
            traj.push(sample).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(traj)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, y: f64, u: f64) -> Sample {
        Sample {
            x_true: Some(y + 0.001),
            setpoint: Some(0.5),
            ..Sample::measured(t, y, u)
        }
    }

    #[test]
    fn rejects_non_increasing_time() {
        let mut tr = Trajectory::new();
        tr.push(sample(0.0, 0.4, 0.0)).unwrap();
        assert!(tr.push(sample(0.0, 0.4, 0.0)).is_err());
        assert!(tr.push(sample(-1.0, 0.4, 0.0)).is_err());
    }

    #[test]
    fn rejects_out_of_range_input() {
        let mut tr = Trajectory::new();
        assert!(tr.push(sample(0.0, 0.4, 0.021)).is_err());
        assert!(tr.push(sample(0.0, 0.4, -1e-9)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tr = Trajectory::from_samples(vec![
            sample(0.0, 0.81, 0.02),
            Sample::measured(1.0, 0.123456789012345, 0.0),
            sample(2.0, 0.75, 0.00125),
        ])
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_min,od_true,od_meas,setpoint,pump_rate,temp_c\n"));
        let back = Trajectory::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn missing_column_is_named() {
        let data = "time_min,od\n0,0.4\n";
        let err = Trajectory::read_csv(data.as_bytes(), "d.csv").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "pump_rate"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let data = "time_min,od,pump_rate\n0,0.4,0\n1,abc,0\n";
        match Trajectory::read_csv(data.as_bytes(), "d.csv").unwrap_err() {
            Error::Parse { line, path, msg } => {
                assert_eq!(line, 3);
                assert_eq!(path, "d.csv");
                assert!(msg.contains("od"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

//! Closed-loop experiments and tracking metrics.
//!
//! A schedule is a list of piecewise-constant `(setpoint, temperature)`
//! segments. Runs sample once per minute: measure, ask the controller, hold
//! the returned pump rate for one minute. Metrics use the left-endpoint rule
//! on that grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controllers::{check_setpoint, Controller};
use crate::error::{Error, Result};
use crate::model::{measure, step_zoh, GrowthParams, SimState, NOMINAL_TEMP_C};
use crate::trajectory::{Sample, Trajectory};

pub const CONTROL_INTERVAL_MIN: f64 = 1.0;
pub const SUBSTEP_MIN: f64 = 0.1;
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub label: String,
    /// Whole minutes.
    pub duration: f64,
    pub setpoint: f64,
    pub temp_c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSchedule {
    pub name: String,
    pub segments: Vec<Segment>,
    pub initial_od: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentSchedule {
    /// Setpoints 0.8, 0.65 and 0.5, 30 minutes each, at 37 °C.
    pub fn staircase() -> Self {
        let segments = [0.8, 0.65, 0.5]
            .iter()
            .map(|&sp| Segment {
                label: format!("reference {sp}"),
                duration: 30.0,
                setpoint: sp,
                temp_c: NOMINAL_TEMP_C,
            })
            .collect();
        Self {
            name: "staircase".into(),
            segments,
            initial_od: 0.9,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }

    /// Setpoint 0.5 held while the temperature drops from 37 °C to 30 °C at minute 30.
    pub fn tempstep() -> Self {
        let segments = [NOMINAL_TEMP_C, 30.0]
            .iter()
            .map(|&temp| Segment {
                label: format!("temperature {temp}"),
                duration: 30.0,
                setpoint: 0.5,
                temp_c: temp,
            })
            .collect();
        Self {
            name: "tempstep".into(),
            segments,
            initial_od: 0.8,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "staircase" => Some(Self::staircase()),
            "tempstep" => Some(Self::tempstep()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidParameter("schedule has no segments".into()));
        }
        for s in &self.segments {
            check_setpoint(s.setpoint)?;
            if !(s.duration > 0.0) || s.duration.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "segment `{}` must last a positive whole number of minutes",
                    s.label
                )));
            }
        }
        if !(self.initial_od >= 0.0 && self.initial_od.is_finite()) {
            return Err(Error::InvalidParameter("initial OD must be >= 0".into()));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// `(label, start, end)` of every segment, in minutes from run start.
    pub fn windows(&self) -> Vec<(String, f64, f64)> {
        let mut start = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let w = (s.label.clone(), start, start + s.duration);
                start += s.duration;
                w
            })
            .collect()
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration;
            if t < end {
                return s;
            }
        }
        self.segments.last().expect("validated non-empty")
    }
}

/// Run one closed-loop experiment.
///
/// The trajectory holds one sample per minute, including a final sample at
/// the end of the schedule. Temperature and setpoint switch at segment boundaries.
pub fn run_experiment<C: Controller + ?Sized>(
    schedule: &ExperimentSchedule,
    controller: &mut C,
    params: &GrowthParams,
    seed: u64,
) -> Result<Trajectory> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = schedule.total_duration().round() as usize;
    let mut state = SimState::new(schedule.initial_od);
    let mut traj = Trajectory::new();

    for k in 0..=steps {
        let t = k as f64 * CONTROL_INTERVAL_MIN;
        let seg = schedule.segment_at(t);
        state.temp_c = seg.temp_c;
        let y = measure(&state, params, &mut rng);
        let u = controller
            .step(y, seg.setpoint)
            .map_err(|e| e.context(format!("{} at t = {t} min", controller.name())))?
            .u();
        traj.push(Sample {
            t,
            x_true: Some(state.x),
            y_meas: y,
            setpoint: Some(seg.setpoint),
            u,
            temp_c: seg.temp_c,
        })?;
        if k < steps {
            state = step_zoh(
                state,
                u,
                CONTROL_INTERVAL_MIN,
                SUBSTEP_MIN,
                params,
                &mut rng,
            )?;
        }
    }
    Ok(traj)
}

fn errors(traj: &Trajectory) -> Result<Vec<(f64, f64, f64)>> {
    // (t_k, t_{k+1}, |e_k|) for every sample that opens an interval
    let s = traj.samples();
    s.windows(2)
        .map(|w| {
            let sp = w[0].setpoint.ok_or_else(|| {
                Error::InvalidParameter(format!("sample at t = {} has no setpoint", w[0].t))
            })?;
            Ok((w[0].t, w[1].t, (sp - w[0].y_meas).abs()))
        })
        .collect()
}

/// Time-averaged squared error over `[from, to)`.
pub fn ise_window(traj: &Trajectory, from: f64, to: f64) -> Result<f64> {
    let span = to - from;
    if !(span > 0.0) {
        return Ok(0.0);
    }
    let total: f64 = errors(traj)?
        .into_iter()
        .filter(|(t, _, _)| *t >= from && *t < to)
        .map(|(t0, t1, e)| e * e * (t1 - t0))
        .sum();
    Ok(total / span)
}

/// Time-averaged, time-weighted absolute error over `[from, to)`.
///
/// Time is measured from the start of the run. The error is held over each
/// sampling interval and the weight `t` integrated exactly across it.
pub fn itae_window(traj: &Trajectory, from: f64, to: f64) -> Result<f64> {
    let span = to - from;
    let Some(t_start) = traj.samples().first().map(|s| s.t) else {
        return Ok(0.0);
    };
    if !(span > 0.0) {
        return Ok(0.0);
    }
    let total: f64 = errors(traj)?
        .into_iter()
        .filter(|(t, _, _)| *t >= from && *t < to)
        .map(|(t0, t1, e)| {
            let (a, b) = (t0 - t_start, t1 - t_start);
            e * 0.5 * (b * b - a * a)
        })
        .sum();
    Ok(total / span)
}

pub fn ise(traj: &Trajectory) -> Result<f64> {
    match (traj.samples().first(), traj.samples().last()) {
        (Some(a), Some(b)) => ise_window(traj, a.t, b.t),
        _ => Ok(0.0),
    }
}

pub fn itae(traj: &Trajectory) -> Result<f64> {
    match (traj.samples().first(), traj.samples().last()) {
        (Some(a), Some(b)) => itae_window(traj, a.t, b.t),
        _ => Ok(0.0),
    }
}

/// Time after `from` from which `|y - setpoint| < band_frac * setpoint`
/// holds for every sample in `[from, to)`; `None` if the band is never kept.
pub fn settling_time(traj: &Trajectory, from: f64, to: f64, band_frac: f64) -> Option<f64> {
    let window: Vec<&Sample> = traj.window(from, to).collect();
    let mut settled_at = None;
    for s in &window {
        let sp = s.setpoint?;
        if (s.y_meas - sp).abs() < band_frac * sp {
            settled_at.get_or_insert(s.t);
        } else {
            settled_at = None;
        }
    }
    settled_at.map(|t| t - from)
}

/// Mean absolute tracking error over `[from, to)`.
pub fn mean_abs_error(traj: &Trajectory, from: f64, to: f64) -> Result<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for s in traj.window(from, to) {
        let sp = s.setpoint.ok_or_else(|| {
            Error::InvalidParameter(format!("sample at t = {} has no setpoint", s.t))
        })?;
        sum += (s.y_meas - sp).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidParameter(format!(
            "no samples in [{from}, {to})"
        )));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateStats {
    pub t: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_sd: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_sd: Vec<f64>,
}

/// Pointwise mean and population standard deviation across replicates.
pub fn replicate_stats(trajs: &[Trajectory]) -> Result<ReplicateStats> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no replicates".into()))?;
    if let Some(bad) = trajs.iter().position(|t| !t.same_grid(first)) {
        return Err(Error::GridMismatch(format!(
            "replicate {bad} does not share the grid of replicate 0"
        )));
    }
    let n = trajs.len() as f64;
    let moments = |get: &dyn Fn(&Sample) -> f64, k: usize| {
        let mean = trajs.iter().map(|t| get(&t.samples()[k])).sum::<f64>() / n;
        let var = trajs
            .iter()
            .map(|t| (get(&t.samples()[k]) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    };
    let mut out = ReplicateStats {
        t: first.times().collect(),
        y_mean: Vec::new(),
        y_sd: Vec::new(),
        u_mean: Vec::new(),
        u_sd: Vec::new(),
    };
    for k in 0..first.len() {
        let (m, s) = moments(&|s| s.y_meas, k);
        out.y_mean.push(m);
        out.y_sd.push(s);
        let (m, s) = moments(&|s| s.u, k);
        out.u_mean.push(m);
        out.u_sd.push(s);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ise,
    Itae,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ise => "ISE",
            Metric::Itae => "ITAE",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub controller: String,
    /// Segment label, or `whole run`.
    pub segment: String,
    pub metric: Metric,
    pub per_replicate: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    /// Per-segment and whole-run ISE/ITAE over replicate runs of one schedule.
    pub fn from_runs(
        controller: &str,
        schedule: &ExperimentSchedule,
        runs: &[Trajectory],
    ) -> Result<Self> {
        let mut windows = schedule.windows();
        windows.push(("whole run".into(), 0.0, schedule.total_duration()));
        let mut rows = Vec::new();
        for (label, from, to) in windows {
            for metric in [Metric::Ise, Metric::Itae] {
                let per_replicate = runs
                    .iter()
                    .map(|r| match metric {
                        Metric::Ise => ise_window(r, from, to),
                        Metric::Itae => itae_window(r, from, to),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (mean, sd) = mean_sd(&per_replicate);
                rows.push(MetricRow {
                    controller: controller.to_string(),
                    segment: label.clone(),
                    metric,
                    per_replicate,
                    mean,
                    sd,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, controller: &str, segment: &str, metric: Metric) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.controller == controller && r.segment == segment && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("controller,segment,metric,mean,sd\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.controller,
                r.segment,
                r.metric.as_str(),
                r.mean,
                r.sd
            ));
        }
        s
    }
}

/// Run every replicate of a schedule with a fresh controller each time.
pub fn run_replicates<F, C>(
    schedule: &ExperimentSchedule,
    make_controller: F,
    params: &GrowthParams,
) -> Result<Vec<Trajectory>>
where
    F: Fn() -> Result<C> + Sync,
    C: Controller,
{
    schedule
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut c = make_controller()?;
            run_experiment(schedule, &mut c, params, seed)
                .map_err(|e| e.context(format!("{} seed {seed}", schedule.name)))
        })
        .collect()
}

pub type ControllerFactory<'a> = Box<dyn Fn() -> Result<Box<dyn Controller + Send>> + Sync + 'a>;

/// Table of mean metrics: one column per controller, one row per
/// (condition, metric), conditions being the segments of each schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub controllers: Vec<String>,
    /// (condition, metric, mean per controller)
    pub rows: Vec<(String, Metric, Vec<f64>)>,
    pub reports: Vec<MetricReport>,
}

pub fn compare(
    controllers: &[(String, ControllerFactory<'_>)],
    schedules: &[ExperimentSchedule],
    params: &GrowthParams,
) -> Result<ComparisonTable> {
    let mut reports = Vec::new();
    let mut rows: Vec<(String, Metric, Vec<f64>)> = Vec::new();
    for schedule in schedules {
        for (label, _, _) in schedule.windows() {
            for metric in [Metric::Ise, Metric::Itae] {
                rows.push((label.clone(), metric, Vec::new()));
            }
        }
    }
    for (name, factory) in controllers {
        let mut merged = MetricReport { rows: Vec::new() };
        for schedule in schedules {
            let runs = run_replicates(schedule, factory, params)
                .map_err(|e| e.context(format!("cell {name} / {}", schedule.name)))?;
            merged
                .rows
                .extend(MetricReport::from_runs(name, schedule, &runs)?.rows);
        }
        for (cond, metric, values) in rows.iter_mut() {
            let row = merged.get(name, cond, *metric).expect("segment row exists");
            values.push(row.mean);
        }
        reports.push(merged);
    }
    Ok(ComparisonTable {
        controllers: controllers.iter().map(|c| c.0.clone()).collect(),
        rows,
        reports,
    })
}

impl ComparisonTable {
    pub fn value(&self, condition: &str, metric: Metric, controller: &str) -> Option<f64> {
        let col = self.controllers.iter().position(|c| c == controller)?;
        self.rows
            .iter()
            .find(|(c, m, _)| c == condition && *m == metric)
            .map(|(_, _, v)| v[col])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("condition,metric,{}\n", self.controllers.join(","));
        for (cond, metric, values) in &self.rows {
            let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{cond},{},{}\n", metric.as_str(), vals.join(",")));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<8}", "");
        for c in &self.controllers {
            s.push_str(&format!("{c:>12}"));
        }
        s.push('\n');
        let mut last = "";
        for (cond, metric, values) in &self.rows {
            if cond != last {
                s.push_str(&format!("[{cond}]\n"));
                last = cond;
            }
            s.push_str(&format!("{:<8}", metric.as_str()));
            for v in values {
                s.push_str(&format!("{v:>12.5}"));
            }
            s.push('\n');
        }
        s
    }
}

//! Plain-text run configuration.
//!
//! Sections in brackets hold `key = value` lines; `#` starts a comment.
//! Unknown sections and keys are rejected, and every value is range-checked at
//! load time.
//!
//! ```text
//! [growth]
//! mu = 0.0231     # 1/min
//! tau = 0.3
//! temp_factors = 30:0.9, 37:1
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::bench::ExperimentSchedule;
use crate::controllers::{MpcConfig, PiGains, PsoConfig};
use crate::dqn::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{GrowthParams, TempResponse};

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSettings {
    pub horizon_steps: usize,
    pub penalty: f64,
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub seed: u64,
}

impl Default for MpcSettings {
    fn default() -> Self {
        let pso = PsoConfig::new(Vec::new());
        Self {
            horizon_steps: 5,
            penalty: crate::controllers::DEFAULT_PENALTY,
            swarm_size: pso.swarm_size,
            iterations: pso.iterations,
            inertia: pso.inertia,
            cognitive: pso.cognitive,
            social: pso.social,
            u_lo: -0.005,
            u_hi: 0.025,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub seeds: Vec<u64>,
    pub staircase_initial_od: f64,
    pub tempstep_initial_od: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            seeds: crate::bench::DEFAULT_SEEDS.to_vec(),
            staircase_initial_od: ExperimentSchedule::staircase().initial_od,
            tempstep_initial_od: ExperimentSchedule::tempstep().initial_od,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub growth: GrowthParams,
    pub dqn: TrainConfig,
    pub pi: PiGains,
    pub pi_dt: f64,
    pub mpc: MpcSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            growth: GrowthParams::default(),
            dqn: TrainConfig::default(),
            pi: PiGains::default(),
            pi_dt: 1.0,
            mpc: MpcSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(path: &str, l: &Line) -> Result<T> {
    l.value.parse().map_err(|_| {
        parse_err(
            path,
            l.no,
            format!("`{}`: cannot parse `{}`", l.key, l.value),
        )
    })
}

fn boolean(path: &str, l: &Line) -> Result<bool> {
    match l.value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(parse_err(
            path,
            l.no,
            format!("`{}`: expected true/false, got `{v}`", l.key),
        )),
    }
}

fn temp_factors(path: &str, l: &Line) -> Result<TempResponse> {
    let anchors = l
        .value
        .split(',')
        .map(|pair| {
            let (t, f) = pair.split_once(':').ok_or_else(|| {
                parse_err(
                    path,
                    l.no,
                    format!("temp_factors entry `{pair}` is not temp:factor"),
                )
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, l.no, format!("temp_factors: bad number `{s}`")))
            };
            Ok((parse(t)?, parse(f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    TempResponse::new(anchors).map_err(|e| parse_err(path, l.no, e.to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut growth = (
            cfg.growth.mu(),
            cfg.growth.tau(),
            cfg.growth.alpha(),
            cfg.growth.process_noise_sd(),
            cfg.growth.meas_noise_sd(),
            cfg.growth.temp_response().clone(),
        );
        let mut section = String::new();
        let mut seen = HashSet::new();
        let mut growth_line = 0;

        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !["growth", "dqn", "pi", "mpc", "bench"].contains(&name) {
                    return Err(parse_err(source, no, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                parse_err(
                    source,
                    no,
                    format!("expected `key = value`, got `{content}`"),
                )
            })?;
            let l = Line {
                no,
                key: key.trim(),
                value: value.trim(),
            };
            if section.is_empty() {
                return Err(parse_err(
                    source,
                    no,
                    format!("`{}` appears before any section", l.key),
                ));
            }
            if !seen.insert(format!("{section}.{}", l.key)) {
                return Err(parse_err(
                    source,
                    no,
                    format!("duplicate key `{}` in [{section}]", l.key),
                ));
            }
            let unknown = || {
                parse_err(
                    source,
                    no,
                    format!("unknown key `{}` in [{section}]", l.key),
                )
            };
            match section.as_str() {
                "growth" => {
                    growth_line = growth_line.max(no);
                    match l.key {
                        "mu" => growth.0 = num(source, &l)?,
                        "tau" => growth.1 = num(source, &l)?,
                        "alpha" => growth.2 = num(source, &l)?,
                        "process_noise_sd" => growth.3 = num(source, &l)?,
                        "meas_noise_sd" => growth.4 = num(source, &l)?,
                        "temp_factors" => growth.5 = temp_factors(source, &l)?,
                        _ => return Err(unknown()),
                    }
                }
                "dqn" => {
                    let d = &mut cfg.dqn;
                    match l.key {
                        "episodes" => d.episodes = num(source, &l)?,
                        "steps_per_episode" => d.steps_per_episode = num(source, &l)?,
                        "dt" => d.dt = num(source, &l)?,
                        "substep" => d.substep = num(source, &l)?,
                        "gamma" => d.gamma = num(source, &l)?,
                        "lr" => d.lr = num(source, &l)?,
                        "epsilon_start" => d.epsilon_start = num(source, &l)?,
                        "epsilon_end" => d.epsilon_end = num(source, &l)?,
                        "epsilon_decay_episodes" => d.epsilon_decay_episodes = num(source, &l)?,
                        "buffer_capacity" => d.buffer_capacity = num(source, &l)?,
                        "batch_size" => d.batch_size = num(source, &l)?,
                        "updates_per_step" => d.updates_per_step = num(source, &l)?,
                        "target_sync" => d.target_sync = num(source, &l)?,
                        "reward_scale" => d.reward_scale = num(source, &l)?,
                        "noisy" => d.noisy = boolean(source, &l)?,
                        "seed" => d.seed = num(source, &l)?,
                        _ => return Err(unknown()),
                    }
                }
                "pi" => match l.key {
                    "kp" => cfg.pi.kp = num(source, &l)?,
                    "ki1" => cfg.pi.ki1 = num(source, &l)?,
                    "ki2" => cfg.pi.ki2 = num(source, &l)?,
                    "dt" => cfg.pi_dt = num(source, &l)?,
                    _ => return Err(unknown()),
                },
                "mpc" => {
                    let m = &mut cfg.mpc;
                    match l.key {
                        "horizon_steps" => m.horizon_steps = num(source, &l)?,
                        "penalty" => m.penalty = num(source, &l)?,
                        "swarm_size" => m.swarm_size = num(source, &l)?,
                        "iterations" => m.iterations = num(source, &l)?,
                        "inertia" => m.inertia = num(source, &l)?,
                        "cognitive" => m.cognitive = num(source, &l)?,
                        "social" => m.social = num(source, &l)?,
                        "u_lo" => m.u_lo = num(source, &l)?,
                        "u_hi" => m.u_hi = num(source, &l)?,
                        "seed" => m.seed = num(source, &l)?,
                        _ => return Err(unknown()),
                    }
                }
                "bench" => {
                    let b = &mut cfg.bench;
                    match l.key {
                        "seeds" => {
                            b.seeds = l
                                .value
                                .split(',')
                                .map(|s| {
                                    s.trim().parse().map_err(|_| {
                                        parse_err(
                                            source,
                                            no,
                                            format!("seeds: bad seed `{}`", s.trim()),
                                        )
                                    })
                                })
                                .collect::<Result<_>>()?
                        }
                        "staircase_initial_od" => b.staircase_initial_od = num(source, &l)?,
                        "tempstep_initial_od" => b.tempstep_initial_od = num(source, &l)?,
                        _ => return Err(unknown()),
                    }
                }
                _ => unreachable!("section validated above"),
            }
        }

        cfg.growth =
            GrowthParams::from_parts(growth.0, growth.1, growth.2, growth.3, growth.4, growth.5)
                .map_err(|e| parse_err(source, growth_line, e.to_string()))?;
        cfg.validate()
            .map_err(|e| parse_err(source, 0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dqn.validate()?;
        for (name, v) in [
            ("kp", self.pi.kp),
            ("ki1", self.pi.ki1),
            ("ki2", self.pi.ki2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("pi.{name} must be >= 0")));
            }
        }
        if !(self.pi_dt > 0.0) {
            return Err(Error::InvalidParameter("pi.dt must be > 0".into()));
        }
        self.mpc_config().validate()?;
        if self.bench.seeds.is_empty() {
            return Err(Error::InvalidParameter("bench.seeds is empty".into()));
        }
        self.staircase().validate()?;
        self.tempstep().validate()?;
        for t in [30.0, 37.0] {
            self.growth.temp_response().factor(t)?;
        }
        Ok(())
    }

    pub fn mpc_config(&self) -> MpcConfig {
        let m = &self.mpc;
        let mut cfg = MpcConfig::new(self.growth.clone());
        cfg.horizon_steps = m.horizon_steps;
        cfg.penalty = m.penalty;
        cfg.pso = PsoConfig {
            swarm_size: m.swarm_size,
            iterations: m.iterations,
            inertia: m.inertia,
            cognitive: m.cognitive,
            social: m.social,
            bounds: vec![(m.u_lo, m.u_hi); m.horizon_steps],
            seed: m.seed,
        };
        cfg
    }

    pub fn staircase(&self) -> ExperimentSchedule {
        ExperimentSchedule {
            initial_od: self.bench.staircase_initial_od,
            seeds: self.bench.seeds.clone(),
            ..ExperimentSchedule::staircase()
        }
    }

    pub fn tempstep(&self) -> ExperimentSchedule {
        ExperimentSchedule {
            initial_od: self.bench.tempstep_initial_od,
            seeds: self.bench.seeds.clone(),
            ..ExperimentSchedule::tempstep()
        }
    }

    pub fn schedule(&self, name: &str) -> Option<ExperimentSchedule> {
        match name {
            "staircase" => Some(self.staircase()),
            "tempstep" => Some(self.tempstep()),
            _ => None,
        }
    }

    /// Growth section only, in the same key = value form.
    pub fn growth_text(p: &GrowthParams) -> String {
        let factors: Vec<String> = p
            .temp_response()
            .anchors()
            .iter()
            .map(|(t, f)| format!("{t}:{f}"))
            .collect();
        format!(
            "[growth]\n\
             mu = {}  # growth rate, 1/min\n\
             tau = {}  # dilution scale, dimensionless\n\
             alpha = {}  # output gain\n\
             process_noise_sd = {}  # multiplicative state noise per substep\n\
             meas_noise_sd = {}  # additive OD noise\n\
             temp_factors = {}  # degC:growth factor\n",
            p.mu(),
            p.tau(),
            p.alpha(),
            p.process_noise_sd(),
            p.meas_noise_sd(),
            factors.join(", ")
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = Self::growth_text(&self.growth);
        let d = &self.dqn;
        write!(
            s,
            "\n[dqn]\n\
             episodes = {}\n\
             steps_per_episode = {}\n\
             dt = {}  # min\n\
             substep = {}  # min\n\
             gamma = {}\n\
             lr = {}\n\
             epsilon_start = {}\n\
             epsilon_end = {}\n\
             epsilon_decay_episodes = {}\n\
             buffer_capacity = {}\n\
             batch_size = {}\n\
             updates_per_step = {}\n\
             target_sync = {}  # gradient steps\n\
             reward_scale = {}\n\
             noisy = {}\n\
             seed = {}\n",
            d.episodes,
            d.steps_per_episode,
            d.dt,
            d.substep,
            d.gamma,
            d.lr,
            d.epsilon_start,
            d.epsilon_end,
            d.epsilon_decay_episodes,
            d.buffer_capacity,
            d.batch_size,
            d.updates_per_step,
            d.target_sync,
            d.reward_scale,
            d.noisy,
            d.seed
        )
        .unwrap();
        write!(
            s,
            "\n[pi]\nkp = {}  # per OD\nki1 = {}  # per OD per min\nki2 = {}  # per OD per min\ndt = {}  # min\n",
            self.pi.kp, self.pi.ki1, self.pi.ki2, self.pi_dt
        )
        .unwrap();
        let m = &self.mpc;
        write!(
            s,
            "\n[mpc]\n\
             horizon_steps = {}  # 1-min steps\n\
             penalty = {}\n\
             swarm_size = {}\n\
             iterations = {}\n\
             inertia = {}\n\
             cognitive = {}\n\
             social = {}\n\
             u_lo = {}  # PSO search box per step\n\
             u_hi = {}\n\
             seed = {}\n",
            m.horizon_steps,
            m.penalty,
            m.swarm_size,
            m.iterations,
            m.inertia,
            m.cognitive,
            m.social,
            m.u_lo,
            m.u_hi,
            m.seed
        )
        .unwrap();
        let seeds: Vec<String> = self.bench.seeds.iter().map(|s| s.to_string()).collect();
        write!(
            s,
            "\n[bench]\nseeds = {}\nstaircase_initial_od = {}\ntempstep_initial_od = {}\n",
            seeds.join(", "),
            self.bench.staircase_initial_od,
            self.bench.tempstep_initial_od
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::parse("[growth]\nmu = 0.02 # 1/min\n\n[pi]\nkp=0.1\n", "mem").unwrap();
        assert_eq!(cfg.growth.mu(), 0.02);
        assert_eq!(cfg.pi.kp, 0.1);
        assert_eq!(cfg.dqn, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let err = RunConfig::parse("[growth]\nmu = 0.02\nrho = 1\n", "c.conf").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(RunConfig::parse("[plant]\nmu = 1\n", "c").is_err());
        assert!(RunConfig::parse("mu = 1\n", "c").is_err());
        assert!(RunConfig::parse("[pi]\nkp = 1\nkp = 2\n", "c").is_err());
    }

    #[test]
    fn bounds_are_validated() {
        assert!(RunConfig::parse("[growth]\nmu = -1\n", "c").is_err());
        assert!(RunConfig::parse("[growth]\nmu = 0.05\ntau = 1\n", "c").is_err());
        assert!(RunConfig::parse("[dqn]\ngamma = 1.5\n", "c").is_err());
        assert!(RunConfig::parse("[mpc]\ninertia = 1.2\n", "c").is_err());
        assert!(RunConfig::parse("[bench]\nseeds = 1, x\n", "c").is_err());
        assert!(RunConfig::parse("[growth]\ntemp_factors = 30:0.9\n", "c").is_err());
    }

    #[test]
    fn temperature_map_parses() {
        let cfg =
            RunConfig::parse("[growth]\ntemp_factors = 30:0.9, 34:0.95, 37:1\n", "c").unwrap();
        assert!((cfg.growth.temp_response().factor(35.5).unwrap() - 0.975).abs() < 1e-12);
    }
}

//! Configuration, seeded Monte Carlo experiment runners and result emission.
//!
//! Three experiments are provided: the AO/SCA convergence traces, sweeps of
//! the average sum rate and sensing SINR over one scenario parameter, and the
//! Monte Carlo validation of the detection probability. Every trial draws from
//! its own child stream of the experiment seed, so results do not depend on the
//! number of worker threads.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::beamforming::{
    mrc_instantaneous, optimize_combiners, sensing_instantaneous, sensing_statistical, zf_instantaneous, BeamformingError,
};
use crate::estimation::{
    derived_covariances, sensing_residual, ChannelRealization, DerivedCovariances, Hypothesis, RealizationSampler,
    ResidualModel, SymbolBlock,
};
use crate::metrics::{
    average_detection_probability, detection_statistic, detection_threshold, ergodic_sensing_sinr,
    instantaneous_sensing_sinr, instantaneous_sum_rate, residual_moments, uatf_sum_rate,
};
use crate::numerics::{NumericsError, SeededRng};
use crate::power_alloc::{
    optimize_power, qos_violation, statistical_sensing_combiner, AoOptions, PowerAllocation, PowerError,
    FEASIBILITY_TOL,
};
use crate::scenario::{
    build_statistics, dbm_to_watts, dft_pilots, place_users, watts_to_dbm, ChannelStatistics, GeometrySpec,
    PathLossParams, PenaltyRule, ScenarioError, SystemConfig,
};

/// CSV header shared by every experiment.
pub const CSV_HEADER: &str = "sweep_value,baseline,metric,value,stderr,n_dropped";

/// Stream index used for the frozen placement under `fix_placement`.
const FIXED_PLACEMENT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Beamforming(#[from] BeamformingError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, HarnessError> {
    Err(HarnessError::InvalidSpec(msg.into()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
pub enum SweepVariable {
    /// Per-user power budget in dBm.
    P,
    /// Total power in dBm, split evenly across users.
    #[serde(rename = "P_tot")]
    PTot,
    K,
    #[serde(rename = "N_b")]
    NB,
    /// Target distance from the cluster center in metres, along the line
    /// between the cluster center and the BS.
    #[serde(rename = "d_t2u")]
    DT2U,
    #[serde(rename = "T_p")]
    TP,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::P => "P",
            Self::PTot => "P_tot",
            Self::K => "K",
            Self::NB => "N_b",
            Self::DT2U => "d_t2u",
            Self::TP => "T_p",
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            Self::P => "P (dBm)",
            Self::PTot => "P_tot (dBm)",
            Self::K => "K",
            Self::NB => "N_b",
            Self::DT2U => "d_t2u (m)",
            Self::TP => "T_p",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Self::K | Self::NB | Self::TP)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Baseline {
    /// Optimized powers with the SCA-optimized combiners.
    Orb,
    /// Optimized powers with zero-forcing combiners.
    Zf,
    /// Optimized powers with MRC combiners.
    Mrc,
    /// Fixed equal powers, ergodic lower bound.
    Fpa,
    /// Optimized powers, ergodic lower bound.
    Opa,
    /// Optimized powers and combiners without the sensing constraint.
    CommOnly,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [Self::Orb, Self::Zf, Self::Mrc, Self::Fpa, Self::Opa, Self::CommOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Orb => "ORB",
            Self::Zf => "ZF",
            Self::Mrc => "MRC",
            Self::Fpa => "FPA",
            Self::Opa => "OPA",
            Self::CommOnly => "COMM_ONLY",
        }
    }

    fn uses_optimized_powers(self) -> bool {
        matches!(self, Self::Orb | Self::Zf | Self::Mrc | Self::Opa)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    AvgSumRate,
    SensingSinr,
    PDetectTheory,
    PDetectEmpirical,
    PFalseAlarmEmpirical,
    Iterations,
    AoObjective,
    ScaObjective,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Self::AvgSumRate,
        Self::SensingSinr,
        Self::PDetectTheory,
        Self::PDetectEmpirical,
        Self::PFalseAlarmEmpirical,
        Self::Iterations,
        Self::AoObjective,
        Self::ScaObjective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AvgSumRate => "avg_sum_rate",
            Self::SensingSinr => "sensing_sinr",
            Self::PDetectTheory => "p_detect_theory",
            Self::PDetectEmpirical => "p_detect_empirical",
            Self::PFalseAlarmEmpirical => "p_false_alarm_empirical",
            Self::Iterations => "iterations",
            Self::AoObjective => "ao_objective",
            Self::ScaObjective => "sca_objective",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    fn axis_label(self) -> &'static str {
        match self {
            Self::AvgSumRate => "average sum rate (bps/Hz)",
            Self::SensingSinr => "sensing SINR",
            Self::PDetectTheory => "P_D (theory)",
            Self::PDetectEmpirical => "P_D (empirical)",
            Self::PFalseAlarmEmpirical => "P_FA (empirical)",
            Self::Iterations => "iterations",
            Self::AoObjective => "ergodic sum-rate bound (bps/Hz)",
            Self::ScaObjective => "instantaneous sum rate (bps/Hz)",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualModelName {
    BlockFading,
    #[default]
    Independent,
}

impl From<ResidualModelName> for ResidualModel {
    fn from(m: ResidualModelName) -> Self {
        match m {
            ResidualModelName::BlockFading => ResidualModel::BlockFading,
            ResidualModelName::Independent => ResidualModel::Independent,
        }
    }
}

/// Rate threshold given once for all users or per user.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RateThreshold {
    Common(f64),
    PerUser(Vec<f64>),
}

/// The `[system]` section, in the units a user types.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub users: usize,
    pub antennas: usize,
    pub block_len: usize,
    /// `K + 1` when absent.
    pub pilot_len: Option<usize>,
    pub power_dbm: f64,
    pub noise_dbm: f64,
    pub p_fa: f64,
    pub pd_threshold: f64,
    pub rate_threshold: RateThreshold,
    pub tolerance: f64,
    pub xi0: f64,
    pub delta0: f64,
    pub eta: f64,
    pub regularization: f64,
    pub penalty_rule: PenaltyRule,
    pub sensing_constraint: bool,
}

impl Default for SystemSection {
    fn default() -> Self {
        let d = SystemConfig::defaults(4);
        Self {
            users: d.users,
            antennas: d.antennas,
            block_len: d.block_len,
            pilot_len: None,
            power_dbm: watts_to_dbm(d.power),
            noise_dbm: watts_to_dbm(d.noise),
            p_fa: d.p_fa,
            pd_threshold: d.pd_threshold,
            rate_threshold: RateThreshold::Common(1.0),
            tolerance: d.tolerance,
            xi0: d.xi0,
            delta0: d.delta0,
            eta: d.eta,
            regularization: d.regularization,
            penalty_rule: d.penalty_rule,
            sensing_constraint: d.sensing_constraint,
        }
    }
}

/// Everything that defines one scenario family.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub system: SystemSection,
    pub geometry: GeometrySpec,
    pub pathloss: PathLossParams,
}

impl Scenario {
    pub fn system_config(&self) -> Result<SystemConfig, HarnessError> {
        let s = &self.system;
        let rate_threshold = match &s.rate_threshold {
            RateThreshold::Common(r) => vec![*r; s.users],
            RateThreshold::PerUser(v) => v.clone(),
        };
        let cfg = SystemConfig {
            users: s.users,
            antennas: s.antennas,
            block_len: s.block_len,
            pilot_len: s.pilot_len.unwrap_or(s.users + 1),
            power: dbm_to_watts(s.power_dbm),
            noise: dbm_to_watts(s.noise_dbm),
            p_fa: s.p_fa,
            pd_threshold: s.pd_threshold,
            rate_threshold,
            tolerance: s.tolerance,
            xi0: s.xi0,
            delta0: s.delta0,
            eta: s.eta,
            regularization: s.regularization,
            penalty_rule: s.penalty_rule,
            sensing_constraint: s.sensing_constraint,
        };
        cfg.validate()?;
        self.geometry.validate()?;
        self.pathloss.validate()?;
        Ok(cfg)
    }

    /// Copy of the scenario with one parameter set to `value`.
    pub fn with_sweep(&self, var: SweepVariable, value: f64) -> Result<Scenario, HarnessError> {
        let mut out = self.clone();
        let count = || -> Result<usize, HarnessError> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                invalid(format!("{var} must be a positive integer, got {value}"))
            }
        };
        match var {
            SweepVariable::P => out.system.power_dbm = value,
            SweepVariable::PTot => {
                out.system.power_dbm = watts_to_dbm(dbm_to_watts(value) / self.system.users as f64);
            }
            SweepVariable::K => {
                let k = count()?;
                if let RateThreshold::PerUser(_) = self.system.rate_threshold {
                    return invalid("sweeping K needs a common rate_threshold");
                }
                out.system.users = k;
                if self.system.pilot_len.is_some_and(|t| t < k) {
                    out.system.pilot_len = None;
                }
            }
            SweepVariable::NB => out.system.antennas = count()?,
            SweepVariable::DT2U => {
                let c = self.geometry.cluster_center;
                let dist = c[0].hypot(c[1]);
                if !(value >= 0.0 && value < dist) {
                    return invalid(format!("d_t2u must lie in [0, {dist}), got {value}"));
                }
                out.geometry.target_distance = dist - value;
                out.geometry.target_angle_deg = c[1].atan2(c[0]).to_degrees();
            }
            SweepVariable::TP => out.system.pilot_len = Some(count()?),
        }
        Ok(out)
    }
}

/// Definition of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub baselines: Vec<Baseline>,
    pub outputs: Option<PathBuf>,
    /// Antenna counts traced by the convergence experiment.
    pub antennas: Vec<usize>,
    pub residual_model: ResidualModel,
    pub max_outer: usize,
    /// Keep one user placement for every trial.
    pub fix_placement: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid("experiment name must be a non-empty file stem");
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return invalid("sweep values must be finite");
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("sweep values must be strictly increasing");
        }
        if self.sweep.is_integer() && self.values.iter().any(|v| v.fract() != 0.0) {
            return invalid(format!("{} takes integer values", self.sweep));
        }
        if self.antennas.contains(&0) {
            return invalid("antenna counts must be positive");
        }
        if self.max_outer == 0 {
            return invalid("max_outer must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    name: String,
    sweep: SweepVariable,
    values: Vec<f64>,
    trials: usize,
    seed: u64,
    baselines: Vec<Baseline>,
    outputs: Option<PathBuf>,
    antennas: Vec<usize>,
    residual_model: ResidualModelName,
    max_outer: usize,
    fix_placement: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            sweep: SweepVariable::P,
            values: Vec::new(),
            trials: 100,
            seed: 0,
            baselines: vec![Baseline::Orb, Baseline::Zf, Baseline::Mrc],
            outputs: None,
            antennas: vec![4, 6, 8],
            residual_model: ResidualModelName::Independent,
            max_outer: AoOptions::default().max_outer,
            fix_placement: false,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    system: SystemSection,
    geometry: GeometrySpec,
    pathloss: PathLossParams,
    experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: Scenario,
    pub experiment: ExperimentSpec,
}

pub fn parse_config(text: &str) -> Result<Config, HarnessError> {
    let raw: RawConfig = toml::from_str(text)?;
    let e = raw.experiment;
    let mut baselines = e.baselines;
    baselines.sort();
    baselines.dedup();
    let cfg = Config {
        scenario: Scenario {
            system: raw.system,
            geometry: raw.geometry,
            pathloss: raw.pathloss,
        },
        experiment: ExperimentSpec {
            name: e.name,
            sweep: e.sweep,
            values: e.values,
            trials: e.trials,
            seed: e.seed,
            baselines,
            outputs: e.outputs,
            antennas: e.antennas,
            residual_model: e.residual_model.into(),
            max_outer: e.max_outer,
            fix_placement: e.fix_placement,
        },
    };
    cfg.scenario.system_config()?;
    cfg.experiment.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

/// One aggregated CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub baseline: String,
    pub metric: Metric,
    pub value: f64,
    pub stderr: f64,
    pub n_dropped: usize,
}

/// Mean and standard error of the mean (zero for fewer than two samples).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn aggregate(sweep_value: f64, baseline: &str, metric: Metric, samples: &[f64], trials: usize) -> ResultRow {
    let (value, stderr) = mean_stderr(samples);
    ResultRow {
        sweep_value,
        baseline: baseline.to_string(),
        metric,
        value,
        stderr,
        n_dropped: trials - samples.len(),
    }
}

/// Caps the global worker pool. Later calls have no effect.
pub fn init_thread_pool(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Worker cap from `ISAC_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, HarnessError> {
    match std::env::var("ISAC_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => invalid(format!("ISAC_THREADS must be a positive integer, got {s:?}")),
        },
        Err(_) => Ok(None),
    }
}

fn map_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials as u64).map(f).collect()
    }
}

fn placement_rng(root: &SeededRng, trial_rng: &SeededRng, fixed: bool) -> SeededRng {
    if fixed {
        root.child(FIXED_PLACEMENT_STREAM)
    } else {
        trial_rng.child(0)
    }
}

fn draw_statistics(
    scn: &Scenario,
    cfg: &SystemConfig,
    rng: &mut SeededRng,
) -> Result<ChannelStatistics, HarnessError> {
    let g = &scn.geometry;
    let geom = g.with_users(place_users(g.cluster_center, g.cluster_radius, cfg.users, rng));
    Ok(build_statistics(&geom, &scn.pathloss, cfg)?)
}

fn draw_realization(
    p: &PowerAllocation,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
    rng: &mut SeededRng,
) -> Result<(DerivedCovariances, ChannelRealization), HarnessError> {
    let dc = derived_covariances(&p.pilot, stats, cfg)?;
    let pilots = dft_pilots(cfg.users, cfg.pilot_len)?;
    let sampler = RealizationSampler::new(&p.pilot, stats, &pilots, cfg)?;
    Ok((dc, sampler.draw(rng)))
}

/// Algorithm traces on one placement for each antenna count.
///
/// Rows carry the iteration index as `sweep_value` (0 is the starting point)
/// and `N_b=<n>` as baseline. A run that ends infeasible keeps its trace with
/// `n_dropped = 1`.
pub fn run_power_convergence(config: &Config) -> Result<Vec<ResultRow>, HarnessError> {
    let spec = &config.experiment;
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut rows = Vec::new();
    for &nb in &spec.antennas {
        let scn = config.scenario.with_sweep(SweepVariable::NB, nb as f64)?;
        let cfg = scn.system_config()?;
        let stats = draw_statistics(&scn, &cfg, &mut root.child(0))?;
        let init = PowerAllocation::initial(&cfg);
        let opts = AoOptions {
            max_outer: spec.max_outer,
        };
        let (allocation, objectives, dropped) = match optimize_power(&cfg, &stats, &init, &opts) {
            Ok(out) => {
                let mut objs = vec![out.initial_objective];
                objs.extend(out.trace.iter().map(|r| r.objective));
                (out.allocation, objs, 0)
            }
            Err(PowerError::Infeasible { best, trace, .. }) => {
                let mut objs = vec![crate::power_alloc::sum_rate_bound(&init, &stats, &cfg)?];
                objs.extend(trace);
                (best, objs, 1)
            }
            Err(e) => return Err(e.into()),
        };
        let label = format!("N_b={nb}");
        let row = |i: usize, metric, value| ResultRow {
            sweep_value: i as f64,
            baseline: label.clone(),
            metric,
            value,
            stderr: 0.0,
            n_dropped: dropped,
        };
        rows.extend(objectives.iter().enumerate().map(|(i, v)| row(i, Metric::AoObjective, *v)));
        let (dc, real) = draw_realization(&allocation, &stats, &cfg, &mut root.child(1))?;
        let sca = optimize_combiners(&allocation, &real, &dc, &cfg)?;
        rows.extend(sca.trace.iter().enumerate().map(|(i, v)| row(i, Metric::ScaObjective, *v)));
    }
    Ok(rows)
}

/// Per-trial outcome of one baseline.
#[derive(Debug, Clone, Copy)]
struct Sample {
    sum_rate: f64,
    sensing_sinr: f64,
    iterations: Option<f64>,
}

type TrialOutcome = Vec<Option<Sample>>;

fn ergodic_sample(
    p: &PowerAllocation,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
    iterations: Option<f64>,
) -> Result<Sample, HarnessError> {
    let dc = derived_covariances(&p.pilot, stats, cfg)?;
    let u_s = sensing_statistical(p, &dc, cfg)?;
    Ok(Sample {
        sum_rate: uatf_sum_rate(p, &dc, stats, cfg).sum,
        sensing_sinr: ergodic_sensing_sinr(p, &dc, &u_s, cfg),
        iterations,
    })
}

fn instantaneous_sample(
    baseline: Baseline,
    p: &PowerAllocation,
    dc: &DerivedCovariances,
    real: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<Sample, HarnessError> {
    let (comm, sense, iterations) = match baseline {
        Baseline::Zf => (zf_instantaneous(real)?, sensing_instantaneous(p, real, dc, cfg)?, None),
        Baseline::Mrc => (mrc_instantaneous(real)?, sensing_instantaneous(p, real, dc, cfg)?, None),
        _ => {
            let out = optimize_combiners(p, real, dc, cfg)?;
            let iters = (out.trace.len() - 1) as f64;
            (out.beamformers.comm, out.beamformers.sense, Some(iters))
        }
    };
    Ok(Sample {
        sum_rate: instantaneous_sum_rate(p, real, dc, &comm, cfg).sum,
        sensing_sinr: instantaneous_sensing_sinr(p, real, dc, &sense, cfg),
        iterations,
    })
}

fn sweep_trial(
    scn: &Scenario,
    cfg: &SystemConfig,
    spec: &ExperimentSpec,
    root: &SeededRng,
    trial: u64,
) -> TrialOutcome {
    let trial_rng = root.child(trial);
    let stats = match draw_statistics(scn, cfg, &mut placement_rng(root, &trial_rng, spec.fix_placement)) {
        Ok(s) => s,
        Err(_) => return vec![None; spec.baselines.len()],
    };
    let opts = AoOptions {
        max_outer: spec.max_outer,
    };
    let init = PowerAllocation::initial(cfg);
    let opa = if spec.baselines.iter().any(|b| b.uses_optimized_powers()) {
        optimize_power(cfg, &stats, &init, &opts).ok()
    } else {
        None
    };
    let opa_real = opa
        .as_ref()
        .and_then(|o| draw_realization(&o.allocation, &stats, cfg, &mut trial_rng.child(1)).ok());
    spec.baselines
        .iter()
        .map(|&b| -> Option<Sample> {
            match b {
                Baseline::Fpa => {
                    let dc = derived_covariances(&init.pilot, &stats, cfg).ok()?;
                    let u_s = sensing_statistical(&init, &dc, cfg).ok()?;
                    let violation = qos_violation(&init, &stats, cfg, &u_s).ok()?;
                    (violation <= FEASIBILITY_TOL).then_some(())?;
                    ergodic_sample(&init, &stats, cfg, None).ok()
                }
                Baseline::Opa => {
                    let o = opa.as_ref()?;
                    ergodic_sample(&o.allocation, &stats, cfg, Some(o.iterations() as f64)).ok()
                }
                Baseline::Orb | Baseline::Zf | Baseline::Mrc => {
                    let o = opa.as_ref()?;
                    let (dc, real) = opa_real.as_ref()?;
                    instantaneous_sample(b, &o.allocation, dc, real, cfg).ok()
                }
                Baseline::CommOnly => {
                    let mut c = cfg.clone();
                    c.sensing_constraint = false;
                    let o = optimize_power(&c, &stats, &init, &opts).ok()?;
                    let (dc, real) = draw_realization(&o.allocation, &stats, &c, &mut trial_rng.child(1)).ok()?;
                    instantaneous_sample(b, &o.allocation, &dc, &real, &c).ok()
                }
            }
        })
        .collect()
}

/// Average sum rate and sensing SINR per sweep value and baseline.
///
/// Trial `t` uses stream `t` of the experiment seed at every sweep value, so
/// neighbouring points share placements and fading. A trial whose optimizer
/// or combiner fails is counted in `n_dropped` for that baseline.
pub fn run_rate_sweep(config: &Config) -> Result<Vec<ResultRow>, HarnessError> {
    let spec = &config.experiment;
    spec.validate()?;
    if spec.values.is_empty() {
        return invalid("a sweep needs at least one value");
    }
    if spec.baselines.is_empty() {
        return invalid("a sweep needs at least one baseline");
    }
    let root = SeededRng::new(spec.seed);
    let mut rows = Vec::new();
    for &x in &spec.values {
        let scn = config.scenario.with_sweep(spec.sweep, x)?;
        let cfg = scn.system_config()?;
        let outcomes = map_trials(spec.trials, |t| sweep_trial(&scn, &cfg, spec, &root, t));
        for (i, b) in spec.baselines.iter().enumerate() {
            let samples: Vec<Sample> = outcomes.iter().filter_map(|o| o[i]).collect();
            let rate: Vec<f64> = samples.iter().map(|s| s.sum_rate).collect();
            let sinr: Vec<f64> = samples.iter().map(|s| s.sensing_sinr).collect();
            rows.push(aggregate(x, b.as_str(), Metric::AvgSumRate, &rate, spec.trials));
            rows.push(aggregate(x, b.as_str(), Metric::SensingSinr, &sinr, spec.trials));
            if matches!(b, Baseline::Orb | Baseline::Opa | Baseline::CommOnly) {
                let iters: Vec<f64> = samples.iter().filter_map(|s| s.iterations).collect();
                rows.push(aggregate(x, b.as_str(), Metric::Iterations, &iters, spec.trials));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
struct DetectionSample {
    theory: f64,
    sinr: f64,
    detected: bool,
    false_alarm: bool,
}

fn detection_trial(
    scn: &Scenario,
    cfg: &SystemConfig,
    spec: &ExperimentSpec,
    root: &SeededRng,
    trial: u64,
) -> Result<DetectionSample, HarnessError> {
    let trial_rng = root.child(trial);
    let stats = draw_statistics(scn, cfg, &mut placement_rng(root, &trial_rng, spec.fix_placement))?;
    let p = PowerAllocation::uniform(cfg.users, cfg.power, cfg.power);
    let mut rng = trial_rng.child(1);
    let (dc, real) = draw_realization(&p, &stats, cfg, &mut rng)?;
    let u_s = statistical_sensing_combiner(&p, &stats, cfg)?;
    let report = average_detection_probability(&p, &dc, &u_s, cfg);
    let pilots = dft_pilots(cfg.users, cfg.pilot_len)?;
    let symbols = SymbolBlock::draw(&pilots, cfg.block_len, &mut rng);
    let (mu, var) = residual_moments(&real, &dc, &p, &symbols.x, cfg.pilot_len, &u_s, cfg.noise);
    let residual = |h, rng: &mut SeededRng| {
        sensing_residual(&real, &dc, &p, &symbols, &u_s, h, spec.residual_model, cfg.noise, rng)
    };
    let y1 = residual(Hypothesis::TargetPresent, &mut rng);
    let y0 = residual(Hypothesis::TargetAbsent, &mut rng);
    let (psi1, rho) = detection_statistic(&y1, &mu, &var);
    let (psi0, _) = detection_statistic(&y0, &mu, &var);
    let kappa = detection_threshold(rho, cfg.p_fa);
    Ok(DetectionSample {
        theory: report.p_detect,
        sinr: report.sinr,
        detected: psi1 > kappa,
        false_alarm: psi0 > kappa,
    })
}

/// Theoretical average detection probability against the Neyman-Pearson
/// detector applied to simulated residuals, with equal pilot and data powers
/// `P_tot/K` under the statistical EVD sensing combiner.
pub fn run_detection_validation(config: &Config) -> Result<Vec<ResultRow>, HarnessError> {
    let spec = &config.experiment;
    spec.validate()?;
    if spec.values.is_empty() {
        return invalid("a sweep needs at least one value");
    }
    let root = SeededRng::new(spec.seed);
    let label = Baseline::Fpa.as_str();
    let mut rows = Vec::new();
    for &x in &spec.values {
        let scn = config.scenario.with_sweep(spec.sweep, x)?;
        let cfg = scn.system_config()?;
        let samples: Vec<DetectionSample> = map_trials(spec.trials, |t| detection_trial(&scn, &cfg, spec, &root, t))
            .into_iter()
            .filter_map(Result::ok)
            .collect();
        let col = |f: &dyn Fn(&DetectionSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
        let indicator = |b: bool| if b { 1.0 } else { 0.0 };
        rows.push(aggregate(x, label, Metric::PDetectTheory, &col(&|s| s.theory), spec.trials));
        rows.push(aggregate(x, label, Metric::PDetectEmpirical, &col(&|s| indicator(s.detected)), spec.trials));
        rows.push(aggregate(
            x,
            label,
            Metric::PFalseAlarmEmpirical,
            &col(&|s| indicator(s.false_alarm)),
            spec.trials,
        ));
        rows.push(aggregate(x, label, Metric::SensingSinr, &col(&|s| s.sinr), spec.trials));
    }
    Ok(rows)
}

fn row_order(a: &ResultRow, b: &ResultRow) -> Ordering {
    a.sweep_value
        .total_cmp(&b.sweep_value)
        .then_with(|| a.baseline.cmp(&b.baseline))
        .then_with(|| a.metric.cmp(&b.metric))
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(row_order);
}

pub fn format_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sweep_value, r.baseline, r.metric, r.value, r.stderr, r.n_dropped
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, HarnessError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(HarnessError::Csv {
                line: 1,
                reason: "unexpected header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let err = |reason: &str| HarnessError::Csv {
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(err("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            Ok(ResultRow {
                sweep_value: num(f[0])?,
                baseline: f[1].to_string(),
                metric: Metric::parse(f[2]).ok_or_else(|| err("unknown metric"))?,
                value: num(f[3])?,
                stderr: num(f[4])?,
                n_dropped: f[5].parse().map_err(|_| err("bad count"))?,
            })
        })
        .collect()
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, format_csv(rows)).map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let d = 0.5 * lo.abs().max(1.0);
        return (lo - d, hi + d);
    }
    (lo, hi)
}

/// Line plot of one metric, one polyline per baseline.
pub fn render_svg(rows: &[ResultRow], metric: Metric, x_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 80.0;
    const R: f64 = 150.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let pts: Vec<&ResultRow> = rows.iter().filter(|r| r.metric == metric && r.value.is_finite()).collect();
    let (x0, x1) = padded_range(pts.iter().map(|r| r.sweep_value));
    let (y0, y1) = padded_range(pts.iter().map(|r| r.value));
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut baselines: Vec<&str> = pts.iter().map(|r| r.baseline.as_str()).collect();
    baselines.sort();
    baselines.dedup();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#,
            sx(xv),
            H - B + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#,
            L - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        L + 0.5 * (W - L - R),
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        T + 0.5 * (H - T - B),
        escape(metric.axis_label())
    );
    for (i, b) in baselines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut line: Vec<&&ResultRow> = pts.iter().filter(|r| r.baseline == *b).collect();
        line.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value));
        let coords: Vec<String> = line
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.sweep_value), sy(r.value)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = T + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - R + 10.0,
            W - R + 30.0,
            W - R + 36.0,
            ly + 4.0,
            escape(b)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<name>.csv` and one `<name>_<metric>.svg` per metric present.
pub fn emit_outputs(
    rows: &[ResultRow],
    spec: &ExperimentSpec,
    out_dir: &Path,
    x_label: &str,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let csv = out_dir.join(format!("{}.csv", spec.name));
    write_csv(&sorted, &csv)?;
    let mut written = vec![csv];
    for metric in Metric::ALL {
        if sorted.iter().any(|r| r.metric == metric) {
            let path = out_dir.join(format!("{}_{}.svg", spec.name, metric));
            std::fs::write(&path, render_svg(&sorted, metric, x_label)).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Label of the x axis for sweep and detection outputs.
pub fn sweep_axis_label(spec: &ExperimentSpec) -> &'static str {
    spec.sweep.axis_label()
}

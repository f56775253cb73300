//! Browser bindings over `isac-core` for the static demo page in `www/`.

use isac_core::estimation::derived_covariances;
use isac_core::metrics::average_detection_probability;
use isac_core::numerics::{ComplexVector, SeededRng};
use isac_core::power_alloc::{
    optimize_power, statistical_sensing_combiner, sum_rate_bound, AoOptions, PowerAllocation, PowerError,
};
use isac_core::scenario::{
    build_statistics, dbm_to_watts, steering_vector, ChannelStatistics, Geometry, GeometrySpec, PathLossParams,
    SystemConfig,
};
use wasm_bindgen::prelude::*;

struct Setup {
    cfg: SystemConfig,
    geom: Geometry,
    stats: ChannelStatistics,
}

fn setup(users: usize, antennas: usize, power_dbm: f64, target_distance: f64, seed: u64) -> Result<Setup, JsError> {
    let mut cfg = SystemConfig::defaults(users);
    cfg.antennas = antennas;
    cfg.power = dbm_to_watts(power_dbm);
    cfg.validate()?;
    let spec = GeometrySpec {
        target_distance,
        ..GeometrySpec::default()
    };
    spec.validate()?;
    let mut rng = SeededRng::new(seed).child(0);
    let geom = spec.realize(users, &mut rng);
    let stats = build_statistics(&geom, &PathLossParams::default(), &cfg)?;
    Ok(Setup { cfg, geom, stats })
}

/// Average detection probability under equal power split, one value per
/// total-power point. Returns `[p_tot_dbm_0, pd_0, p_tot_dbm_1, pd_1, ...]`.
#[wasm_bindgen]
pub fn detection_curve(
    users: usize,
    antennas: usize,
    target_distance: f64,
    seed: u64,
    p_min_dbm: f64,
    p_max_dbm: f64,
    steps: usize,
) -> Result<Vec<f64>, JsError> {
    let steps = steps.max(2);
    let mut out = Vec::with_capacity(2 * steps);
    for i in 0..steps {
        let p_tot_dbm = p_min_dbm + (p_max_dbm - p_min_dbm) * i as f64 / (steps - 1) as f64;
        let per_user = p_tot_dbm - 10.0 * (users as f64).log10();
        let s = setup(users, antennas, per_user, target_distance, seed)?;
        let p = PowerAllocation::uniform(users, s.cfg.power, s.cfg.power);
        let u_s = statistical_sensing_combiner(&p, &s.stats, &s.cfg)?;
        let dc = derived_covariances(&p.pilot, &s.stats, &s.cfg)?;
        let report = average_detection_probability(&p, &dc, &u_s, &s.cfg);
        out.push(p_tot_dbm);
        out.push(report.p_detect);
    }
    Ok(out)
}

/// Normalized gain `|uᴴa(θ)|²` of the statistical sensing combiner over
/// `points` angles in [−90°, 90°]. Returns `[theta_deg_0, gain_0, ...]`.
#[wasm_bindgen]
pub fn beampattern(
    users: usize,
    antennas: usize,
    power_dbm: f64,
    target_distance: f64,
    seed: u64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    let s = setup(users, antennas, power_dbm, target_distance, seed)?;
    let p = PowerAllocation::initial(&s.cfg);
    let u_s = statistical_sensing_combiner(&p, &s.stats, &s.cfg)?;
    let points = points.max(2);
    let mut out = Vec::with_capacity(2 * points);
    for i in 0..points {
        let deg = -90.0 + 180.0 * i as f64 / (points - 1) as f64;
        let a = steering_vector(deg.to_radians(), antennas, s.geom.d_over_lambda);
        out.push(deg);
        out.push(gain(&u_s, &a) / antennas as f64);
    }
    Ok(out)
}

fn gain(u: &ComplexVector, a: &ComplexVector) -> f64 {
    u.dotc(a).norm_sqr()
}

/// Target direction seen from the array, in degrees.
#[wasm_bindgen]
pub fn target_angle_deg(users: usize, target_distance: f64, seed: u64) -> Result<f64, JsError> {
    let s = setup(users, 6, 10.0, target_distance, seed)?;
    Ok(s.geom.theta_t.to_degrees())
}

/// Outcome of one alternating-optimization run.
#[wasm_bindgen]
pub struct AoRun {
    objectives: Vec<f64>,
    pilot: Vec<f64>,
    data: Vec<f64>,
    feasible: bool,
}

#[wasm_bindgen]
impl AoRun {
    /// Sum-rate bound at the start point followed by one value per iteration.
    #[wasm_bindgen(getter)]
    pub fn objectives(&self) -> Vec<f64> {
        self.objectives.clone()
    }

    /// Pilot powers in mW.
    #[wasm_bindgen(getter)]
    pub fn pilot(&self) -> Vec<f64> {
        self.pilot.clone()
    }

    /// Data powers in mW.
    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn feasible(&self) -> bool {
        self.feasible
    }
}

#[wasm_bindgen]
pub fn run_power_allocation(
    users: usize,
    antennas: usize,
    power_dbm: f64,
    target_distance: f64,
    seed: u64,
    max_outer: usize,
) -> Result<AoRun, JsError> {
    let s = setup(users, antennas, power_dbm, target_distance, seed)?;
    let init = PowerAllocation::initial(&s.cfg);
    let start = sum_rate_bound(&init, &s.stats, &s.cfg)?;
    let mw = |v: &[f64]| v.iter().map(|x| x * 1e3).collect::<Vec<_>>();
    match optimize_power(&s.cfg, &s.stats, &init, &AoOptions { max_outer }) {
        Ok(outcome) => Ok(AoRun {
            objectives: std::iter::once(start)
                .chain(outcome.trace.iter().map(|r| r.objective))
                .collect(),
            pilot: mw(&outcome.allocation.pilot),
            data: mw(&outcome.allocation.data),
            feasible: true,
        }),
        Err(PowerError::Infeasible { best, trace, .. }) => Ok(AoRun {
            objectives: std::iter::once(start).chain(trace).collect(),
            pilot: mw(&best.pilot),
            data: mw(&best.data),
            feasible: false,
        }),
        Err(e) => Err(e.into()),
    }
}

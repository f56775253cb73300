//! System parameters, geometry, path loss and channel second-order statistics.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{CMatrix, ComplexVector, HermitianMatrix, NumericsError, SeededRng, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pilot length {pilot_len} is shorter than the number of users {users}")]
    PilotShortage { users: usize, pilot_len: usize },
    #[error("geometry has {found} users, configuration expects {expected}")]
    UserCountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// How the penalty parameter evolves between multiplier updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    /// `ξ ← ξ/η`: the quadratic penalty weight `1/ξ` grows.
    #[default]
    Tighten,
    /// `ξ ← ηξ`: the penalty weight decays.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub users: usize,
    pub antennas: usize,
    pub block_len: usize,
    pub pilot_len: usize,
    /// Per-user power budget in watts.
    pub power: f64,
    /// Noise power per symbol in watts.
    pub noise: f64,
    pub p_fa: f64,
    pub pd_threshold: f64,
    /// Per-user rate threshold in bps/Hz; zero disables the constraint.
    pub rate_threshold: Vec<f64>,
    pub tolerance: f64,
    pub xi0: f64,
    pub delta0: f64,
    pub eta: f64,
    /// Norm regularizer ℘ of the combiner subproblem.
    pub regularization: f64,
    pub penalty_rule: PenaltyRule,
    /// When false the sensing QoS constraint is dropped.
    pub sensing_constraint: bool,
}

impl SystemConfig {
    pub fn defaults(users: usize) -> Self {
        Self {
            users,
            antennas: 6,
            block_len: 100,
            pilot_len: users + 1,
            power: dbm_to_watts(10.0),
            noise: dbm_to_watts(-70.0),
            p_fa: 1e-5,
            pd_threshold: 0.99,
            rate_threshold: vec![1.0; users],
            tolerance: 1e-3,
            xi0: 1.0,
            delta0: 1.0,
            eta: 1.5,
            regularization: 1e-2,
            penalty_rule: PenaltyRule::Tighten,
            sensing_constraint: true,
        }
    }

    pub fn data_len(&self) -> usize {
        self.block_len - self.pilot_len
    }

    /// Energy budget `P·T` per user per block.
    pub fn energy_budget(&self) -> f64 {
        self.power * self.block_len as f64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidConfig(m.to_string()));
        if self.users == 0 {
            return bad("users must be at least 1");
        }
        if self.antennas == 0 {
            return bad("antennas must be at least 1");
        }
        if self.pilot_len == 0 || self.pilot_len >= self.block_len {
            return bad("pilot length must satisfy 0 < T_p < T");
        }
        if self.pilot_len < self.users {
            return Err(ScenarioError::PilotShortage {
                users: self.users,
                pilot_len: self.pilot_len,
            });
        }
        if !(self.power > 0.0) || !(self.noise >= 0.0) {
            return bad("power must be positive and noise nonnegative");
        }
        if !(0.0 < self.p_fa && self.p_fa < self.pd_threshold && self.pd_threshold < 1.0) {
            return bad("require 0 < P_FA < P_D,th < 1");
        }
        if self.rate_threshold.len() != self.users || self.rate_threshold.iter().any(|r| !(*r >= 0.0)) {
            return bad("rate thresholds must be K nonnegative values");
        }
        if !(self.tolerance > 0.0 && self.xi0 > 0.0 && self.delta0 > 0.0 && self.eta > 1.0) {
            return bad("tolerance, xi, delta must be positive and eta > 1");
        }
        if !(self.regularization >= 0.0) {
            return bad("regularization must be nonnegative");
        }
        Ok(())
    }

    /// Sensing SINR threshold, or `None` when the sensing constraint is off.
    pub fn sensing_threshold(&self) -> Result<Option<f64>, NumericsError> {
        if !self.sensing_constraint {
            return Ok(None);
        }
        crate::metrics::sinr_threshold_from_pd(self.pd_threshold, self.p_fa, self.block_len).map(Some)
    }
}

/// Spatial structure of the direct user channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelCorrelation {
    #[default]
    Uncorrelated,
    /// `[R]_{mn} = L·ρ^{|m−n|}`.
    Exponential { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossParams {
    pub alpha_u2b: f64,
    pub alpha_u2t: f64,
    pub alpha_t2b: f64,
    pub alpha_rcs: f64,
    pub d0: f64,
    pub sigma_g2: f64,
    pub correlation: ChannelCorrelation,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            alpha_u2b: 3.6,
            alpha_u2t: 2.2,
            alpha_t2b: 2.2,
            alpha_rcs: 0.8,
            d0: 1.0,
            sigma_g2: 1.0,
            correlation: ChannelCorrelation::Uncorrelated,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok = self.alpha_u2b >= 2.0
            && self.alpha_u2t >= 2.0
            && self.alpha_t2b >= 2.0
            && self.alpha_rcs > 0.0
            && self.alpha_rcs <= 1.0
            && self.d0 > 0.0
            && self.sigma_g2 >= 0.0;
        let corr_ok = match self.correlation {
            ChannelCorrelation::Uncorrelated => true,
            ChannelCorrelation::Exponential { rho } => (0.0..1.0).contains(&rho),
        };
        if ok && corr_ok {
            Ok(())
        } else {
            Err(ScenarioError::InvalidConfig("path-loss parameters out of range".into()))
        }
    }

    /// `(max(d, d0)/d0)^−α`; distances below the reference are clamped.
    pub fn power_law(&self, d: f64, alpha: f64) -> f64 {
        (d.max(self.d0) / self.d0).powf(-alpha)
    }
}

pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_pos: Point,
    pub target_pos: Point,
    pub user_pos: Vec<Point>,
    pub cluster_center: Point,
    pub cluster_radius: f64,
    pub d_over_lambda: f64,
    /// Target azimuth seen from the array, measured from the x-axis.
    pub theta_t: f64,
}

impl Geometry {
    pub fn new(
        bs_pos: Point,
        target_pos: Point,
        user_pos: Vec<Point>,
        cluster_center: Point,
        cluster_radius: f64,
        d_over_lambda: f64,
    ) -> Self {
        let theta_t = (target_pos[1] - bs_pos[1]).atan2(target_pos[0] - bs_pos[0]);
        Self {
            bs_pos,
            target_pos,
            user_pos,
            cluster_center,
            cluster_radius,
            d_over_lambda,
            theta_t,
        }
    }

    pub fn d_u2b(&self, k: usize) -> f64 {
        distance(self.user_pos[k], self.bs_pos)
    }

    pub fn d_u2t(&self, k: usize) -> f64 {
        distance(self.user_pos[k], self.target_pos)
    }

    pub fn d_t2b(&self) -> f64 {
        distance(self.target_pos, self.bs_pos)
    }
}

/// Recipe for random geometries: the BS at the origin, the target on a ray at
/// `target_angle` and users uniform in a disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub cluster_center: Point,
    pub cluster_radius: f64,
    pub target_distance: f64,
    /// Degrees from the x-axis.
    pub target_angle_deg: f64,
    pub d_over_lambda: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            cluster_center: [100.0, 0.0],
            cluster_radius: 100.0,
            target_distance: 50.0,
            target_angle_deg: 45.0,
            d_over_lambda: 0.5,
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.cluster_radius >= 0.0 && self.target_distance > 0.0 && self.d_over_lambda > 0.0 {
            Ok(())
        } else {
            Err(ScenarioError::InvalidConfig("geometry parameters out of range".into()))
        }
    }

    pub fn target_pos(&self) -> Point {
        let th = self.target_angle_deg.to_radians();
        [self.target_distance * th.cos(), self.target_distance * th.sin()]
    }

    pub fn with_users(&self, users: Vec<Point>) -> Geometry {
        Geometry::new(
            [0.0, 0.0],
            self.target_pos(),
            users,
            self.cluster_center,
            self.cluster_radius,
            self.d_over_lambda,
        )
    }

    pub fn realize(&self, users: usize, rng: &mut SeededRng) -> Geometry {
        self.with_users(place_users(self.cluster_center, self.cluster_radius, users, rng))
    }
}

/// Uniform linear array response, entry n = exp(−j2π·n·(d/λ)·sin θ).
pub fn steering_vector(theta: f64, antennas: usize, d_over_lambda: f64) -> ComplexVector {
    let s = theta.sin();
    ComplexVector::from_fn(antennas, |n, _| {
        Complex64::from_polar(1.0, -2.0 * PI * n as f64 * d_over_lambda * s)
    })
}

/// `K` area-uniform points in the disk of the given radius.
pub fn place_users(center: Point, radius: f64, users: usize, rng: &mut SeededRng) -> Vec<Point> {
    (0..users)
        .map(|_| {
            let r = radius * rng.uniform().sqrt();
            let phi = 2.0 * PI * rng.uniform();
            [center[0] + r * phi.cos(), center[1] + r * phi.sin()]
        })
        .collect()
}

/// Columns of the `T_p`-point DFT matrix scaled to unit-modulus entries.
pub fn dft_pilots(users: usize, pilot_len: usize) -> Result<Vec<ComplexVector>, ScenarioError> {
    if pilot_len < users {
        return Err(ScenarioError::PilotShortage { users, pilot_len });
    }
    Ok((0..users)
        .map(|k| {
            ComplexVector::from_fn(pilot_len, |t, _| {
                Complex64::from_polar(1.0, -2.0 * PI * (t * k % pilot_len) as f64 / pilot_len as f64)
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    pub r_h: Vec<HermitianMatrix>,
    pub r_g: Vec<HermitianMatrix>,
    pub r: Vec<HermitianMatrix>,
}

impl ChannelStatistics {
    pub fn new(r_h: Vec<HermitianMatrix>, r_g: Vec<HermitianMatrix>) -> Self {
        let r = r_h.iter().zip(&r_g).map(|(a, b)| a + b).collect();
        Self { r_h, r_g, r }
    }

    pub fn users(&self) -> usize {
        self.r.len()
    }

    pub fn antennas(&self) -> usize {
        self.r.first().map_or(0, HermitianMatrix::dim)
    }
}

/// Large-scale gains `(L_h,k, L_g,k)` for user k.
pub fn path_gains(geom: &Geometry, pl: &PathLossParams, k: usize) -> (f64, f64) {
    let l_h = pl.power_law(geom.d_u2b(k), pl.alpha_u2b);
    let l_g = pl.power_law(geom.d_u2t(k), pl.alpha_u2t) * pl.power_law(geom.d_t2b(), pl.alpha_t2b);
    (l_h, l_g)
}

pub fn build_statistics(
    geom: &Geometry,
    pl: &PathLossParams,
    cfg: &SystemConfig,
) -> Result<ChannelStatistics, ScenarioError> {
    if geom.user_pos.len() != cfg.users {
        return Err(ScenarioError::UserCountMismatch {
            expected: cfg.users,
            found: geom.user_pos.len(),
        });
    }
    let n = cfg.antennas;
    let a = steering_vector(geom.theta_t, n, geom.d_over_lambda);
    let aa = HermitianMatrix::outer(&a);
    let shape = match pl.correlation {
        ChannelCorrelation::Uncorrelated => HermitianMatrix::identity(n),
        ChannelCorrelation::Exponential { rho } => HermitianMatrix::symmetrize(CMatrix::from_fn(n, n, |i, j| {
            C64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)
        })),
    };
    let mut r_h = Vec::with_capacity(cfg.users);
    let mut r_g = Vec::with_capacity(cfg.users);
    for k in 0..cfg.users {
        let (l_h, l_g) = path_gains(geom, pl, k);
        r_h.push(shape.scaled(l_h));
        r_g.push(aa.scaled(pl.alpha_rcs * l_g * pl.sigma_g2));
    }
    Ok(ChannelStatistics::new(r_h, r_g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SystemConfig::defaults(4);
        cfg.validate().unwrap();
        assert_eq!(cfg.pilot_len, 5);
        assert!((cfg.power - 0.01).abs() < 1e-15);
        assert!((cfg.noise - 1e-10).abs() < 1e-22);
        let th = cfg.sensing_threshold().unwrap().unwrap();
        assert!((th - 0.2172).abs() < 1e-3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SystemConfig::defaults(4);
        cfg.pilot_len = 3;
        assert!(matches!(cfg.validate(), Err(ScenarioError::PilotShortage { .. })));
        let mut cfg = SystemConfig::defaults(2);
        cfg.pd_threshold = 1e-6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn steering_examples() {
        let a = steering_vector(0.0, 5, 0.5);
        assert!(a.iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let a = steering_vector(PI / 6.0, 2, 0.5);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - C64::new(0.0, -1.0)).norm() < 1e-12);
        let mut rng = SeededRng::new(1);
        for _ in 0..100 {
            let th = (rng.uniform() - 0.5) * 2.0 * PI;
            let a = steering_vector(th, 7, 0.5);
            assert!((a.norm_squared() - 7.0).abs() < 1e-12);
            let b = steering_vector(-th, 7, 0.5);
            assert!((b - a.map(|z| z.conj())).norm() < 1e-12);
        }
    }

    #[test]
    fn pilots_are_orthogonal() {
        assert_eq!(dft_pilots(1, 1).unwrap()[0][0], C64::new(1.0, 0.0));
        let p = dft_pilots(4, 5).unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let g: C64 = p[i].iter().zip(p[k].iter()).map(|(a, b)| a * b.conj()).sum();
                let expect = if i == k { 5.0 } else { 0.0 };
                assert!((g - C64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
        assert!(matches!(dft_pilots(4, 3), Err(ScenarioError::PilotShortage { .. })));
    }

    #[test]
    fn user_placement() {
        let mut rng = SeededRng::new(2);
        let c = [100.0, -20.0];
        let pts = place_users(c, 100.0, 100_000, &mut rng);
        assert!(pts.iter().all(|p| distance(*p, c) <= 100.0));
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        assert!((mx - c[0]).abs() < 1.0 && (my - c[1]).abs() < 1.0);
        let pts = place_users(c, 0.0, 5, &mut rng);
        assert!(pts.iter().all(|p| *p == c));
    }

    #[test]
    fn statistics_structure() {
        let cfg = SystemConfig::defaults(2);
        let pl = PathLossParams::default();
        let spec = GeometrySpec::default();
        let geom = spec.with_users(vec![[1.0, 0.0], [120.0, 30.0]]);
        assert!((geom.theta_t - PI / 4.0).abs() < 1e-12);
        let st = build_statistics(&geom, &pl, &cfg).unwrap();
        assert!((&st.r_h[0] - &HermitianMatrix::identity(6)).frobenius() < 1e-15);

        let d_u2t = ((120.0 - 50.0 / 2f64.sqrt()).powi(2) + (30.0 - 50.0 / 2f64.sqrt()).powi(2)).sqrt();
        let l_g = d_u2t.powf(-2.2) * 50f64.powf(-2.2);
        let (_, lg) = path_gains(&geom, &pl, 1);
        assert!((lg - l_g).abs() < 1e-12 * l_g);
        // R_g = 0.8 L_g a aᴴ has trace 0.8 L_g N_b
        assert!((st.r_g[1].trace() - 0.8 * l_g * 6.0).abs() < 1e-12 * l_g);
        for k in 0..2 {
            let ev = st.r_g[k].eigenvalues();
            assert!(ev[4].abs() < 1e-10 * ev[5]);
            assert!((&(&st.r[k] - &st.r_h[k]) - &st.r_g[k]).frobenius() <= 1e-15 * st.r[k].frobenius());
        }
    }

    #[test]
    fn exponential_correlation_hook() {
        let mut cfg = SystemConfig::defaults(1);
        cfg.antennas = 3;
        let pl = PathLossParams {
            correlation: ChannelCorrelation::Exponential { rho: 0.5 },
            ..PathLossParams::default()
        };
        let geom = GeometrySpec::default().with_users(vec![[1.0, 0.0]]);
        let st = build_statistics(&geom, &pl, &cfg).unwrap();
        assert!((st.r_h[0].matrix()[(0, 2)].re - 0.25).abs() < 1e-15);
        assert!(st.r_h[0].is_psd());
    }
}

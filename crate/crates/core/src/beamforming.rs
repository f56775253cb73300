//! Receive combiners for communication and sensing.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::cvx::{solve_unit_ball_qcqp, ConcaveQuadratic, CvxError, UnitBallQcqp};
use crate::estimation::{ChannelRealization, DerivedCovariances};
use crate::metrics::{instantaneous_sensing_matrix, instantaneous_sinr, interference_plus_noise, rate_from_sinr, sensing_matrices};
use crate::numerics::{dominant_generalized_eigvec, phase_normalize, CMatrix, ComplexVector, HermitianMatrix, NumericsError, C64};
use crate::power_alloc::PowerAllocation;
use crate::scenario::SystemConfig;

/// Condition number above which zero-forcing is refused.
pub const ZF_CONDITION_LIMIT: f64 = 1e12;
const MAX_SCA: usize = 50;
const QCQP_TOL: f64 = 1e-10;
const START_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamformingError {
    #[error("estimated channel matrix is rank deficient (condition {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("user {user} has a zero channel estimate")]
    DegenerateChannel { user: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("combiner subproblem failed: {0}")]
    Solver(CvxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerStage {
    Mrc,
    ZeroForcing,
    Optimized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub comm: Vec<ComplexVector>,
    pub sense: ComplexVector,
    pub stage: CombinerStage,
}

fn unit(v: &ComplexVector) -> ComplexVector {
    let n = v.norm();
    if n > 0.0 {
        v / C64::new(n, 0.0)
    } else {
        v.clone()
    }
}

/// Statistical MRC normalizers `E{‖ẑ_k‖²} = tr(R_est,k)`.
pub fn mrc_statistical(dc: &DerivedCovariances) -> Result<Vec<f64>, BeamformingError> {
    dc.r_est
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let t = r.trace();
            if t > 0.0 {
                Ok(t)
            } else {
                Err(BeamformingError::DegenerateChannel { user: k })
            }
        })
        .collect()
}

/// MRC on the channel estimates, `u_k = ẑ_k/‖ẑ_k‖`.
pub fn mrc_instantaneous(real: &ChannelRealization) -> Result<Vec<ComplexVector>, BeamformingError> {
    real.z_hat
        .iter()
        .enumerate()
        .map(|(k, z)| {
            if z.norm() > 0.0 {
                Ok(unit(z))
            } else {
                Err(BeamformingError::DegenerateChannel { user: k })
            }
        })
        .collect()
}

/// Zero-forcing columns `Ẑ(ẐᴴẐ)⁻¹`, each normalized to unit length.
pub fn zf_instantaneous(real: &ChannelRealization) -> Result<Vec<ComplexVector>, BeamformingError> {
    let z = CMatrix::from_columns(&real.z_hat);
    let gram = z.adjoint() * &z;
    let sv = gram.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= ZF_CONDITION_LIMIT) {
        return Err(BeamformingError::RankDeficient { condition });
    }
    let inv = gram
        .try_inverse()
        .ok_or(BeamformingError::RankDeficient { condition })?;
    let w = z * inv;
    Ok(w.column_iter().map(|c| unit(&c.into_owned())).collect())
}

/// Dominant generalized eigenvector of `(Ω1, Ω2 + Tσ²I)`, unit norm.
pub fn sensing_evd(
    omega1: &HermitianMatrix,
    omega2: &HermitianMatrix,
    block_len: usize,
    noise: f64,
) -> Result<ComplexVector, NumericsError> {
    let b = omega2.add_scaled_identity(block_len as f64 * noise);
    let mut u = unit(&dominant_generalized_eigvec(omega1, &b)?);
    phase_normalize(&mut u);
    Ok(u)
}

/// Statistical sensing combiner from the ergodic covariances.
pub fn sensing_statistical(p: &PowerAllocation, dc: &DerivedCovariances, cfg: &SystemConfig) -> Result<ComplexVector, NumericsError> {
    let (o1, o2) = sensing_matrices(p, dc, cfg);
    sensing_evd(&o1, &o2, cfg.block_len, cfg.noise)
}

/// Sensing combiner from the estimated echo channels of one realization.
pub fn sensing_instantaneous(
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> Result<ComplexVector, NumericsError> {
    let o1 = instantaneous_sensing_matrix(p, real, cfg);
    let (_, o2) = sensing_matrices(p, dc, cfg);
    sensing_evd(&o1, &o2, cfg.block_len, cfg.noise)
}

/// Concave quadratic lower bound of user k's rate, tight at the expansion point.
#[derive(Debug, Clone)]
pub struct Minorant {
    pub quadratic: ConcaveQuadratic,
}

impl Minorant {
    pub fn eval(&self, u: &ComplexVector) -> f64 {
        self.quadratic.eval(u)
    }
}

pub fn user_rate(
    k: usize,
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    u: &ComplexVector,
    cfg: &SystemConfig,
) -> f64 {
    rate_from_sinr(instantaneous_sinr(k, p, real, dc, u, cfg), cfg)
}

pub fn sca_minorant(
    k: usize,
    u_prev: &ComplexVector,
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> Minorant {
    let c = cfg.data_len() as f64 / (cfg.block_len as f64 * LN_2);
    let n = u_prev.len();
    let zk = &real.z_hat[k];
    let x = zk.dotc(u_prev);
    let s = p.data[k] * x.norm_sqr();
    let y = interference_plus_noise(k, p, real, dc, u_prev, cfg);
    let gamma = s / y;
    let a = s / (y * (s + y));
    let mut total = CMatrix::identity(n, n) * C64::new(cfg.noise, 0.0);
    for m in 0..real.users() {
        total += &real.z_hat[m] * real.z_hat[m].adjoint() * C64::new(p.data[m], 0.0);
        total += dc.r_err[m].matrix() * C64::new(p.data[m], 0.0);
    }
    Minorant {
        quadratic: ConcaveQuadratic {
            c: c * (gamma.ln_1p() - gamma),
            b: zk * (x * (c * p.data[k] / y)),
            a: HermitianMatrix::symmetrize(total * C64::new(c * a, 0.0)),
        },
    }
}

/// Result of the combiner optimization for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerOutcome {
    pub beamformers: BeamformerSet,
    pub rates: Vec<f64>,
    /// Sum rate after each sweep over users; entry 0 is the warm start.
    pub trace: Vec<f64>,
    /// Users whose rate target was lowered to the warm-start rate.
    pub softened: Vec<bool>,
}

impl CombinerOutcome {
    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

fn warm_start(real: &ChannelRealization) -> Result<Vec<ComplexVector>, BeamformingError> {
    zf_instantaneous(real).or_else(|_| mrc_instantaneous(real))
}

/// One SCA step for user k. Returns the new combiner and whether the rate
/// target had to be softened.
fn sca_step(
    k: usize,
    u_prev: &ComplexVector,
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> Result<(ComplexVector, bool), BeamformingError> {
    let u0 = unit(u_prev);
    let current = user_rate(k, p, real, dc, &u0, cfg);
    let minorant = sca_minorant(k, &u0, p, real, dc, cfg);
    let target = cfg.rate_threshold[k];
    let softened = target > 0.0 && current < target;
    // Strictly inside the ball so the barrier can start from the warm point.
    let start = &u0 * C64::new(1.0 - 1e-6, 0.0);
    let at_start = minorant.eval(&start);
    let level = target.min(at_start - START_SLACK * at_start.abs().max(1.0));
    let constraint = (target > 0.0).then(|| (minorant.quadratic.clone(), level));
    let mut objective = minorant.quadratic.clone();
    objective.a = objective.a.add_scaled_identity(cfg.regularization);
    let sol = solve_unit_ball_qcqp(&UnitBallQcqp { objective, constraint }, &start, QCQP_TOL)
        .map_err(BeamformingError::Solver)?;
    let next = user_rate(k, p, real, dc, &sol.u, cfg);
    if next >= current {
        Ok((sol.u, softened))
    } else {
        Ok((u_prev.clone(), softened))
    }
}

/// Per-realization combiner design: SCA on each user's rate with the EVD
/// sensing combiner.
pub fn optimize_combiners(
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> Result<CombinerOutcome, BeamformingError> {
    let k_users = real.users();
    let mut comm = warm_start(real)?;
    let sense = sensing_instantaneous(p, real, dc, cfg)?;
    let rates_of = |comm: &[ComplexVector]| -> Vec<f64> {
        (0..k_users).map(|k| user_rate(k, p, real, dc, &comm[k], cfg)).collect()
    };
    let mut rates = rates_of(&comm);
    let mut trace = vec![rates.iter().sum::<f64>()];
    let mut softened = vec![false; k_users];
    for _ in 0..MAX_SCA {
        for k in 0..k_users {
            let (u, soft) = sca_step(k, &comm[k], p, real, dc, cfg)?;
            comm[k] = u;
            softened[k] |= soft;
        }
        rates = rates_of(&comm);
        let sum: f64 = rates.iter().sum();
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(sum);
        if (sum - prev).abs() <= cfg.tolerance {
            break;
        }
    }
    Ok(CombinerOutcome {
        beamformers: BeamformerSet {
            comm,
            sense,
            stage: CombinerStage::Optimized,
        },
        rates,
        trace,
        softened,
    })
}

/// Linear MMSE direction `(Σ_m P_m ẑ_mẑ_mᴴ + Σ_i P_i R_err,i + σ²I)⁻¹ ẑ_k`,
/// the unconstrained maximizer of user k's instantaneous SINR.
pub fn mmse_instantaneous(
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> Result<Vec<ComplexVector>, NumericsError> {
    let n = real.antennas();
    let mut total = CMatrix::identity(n, n) * C64::new(cfg.noise, 0.0);
    for m in 0..real.users() {
        total += &real.z_hat[m] * real.z_hat[m].adjoint() * C64::new(p.data[m], 0.0);
        total += dc.r_err[m].matrix() * C64::new(p.data[m], 0.0);
    }
    let rhs = CMatrix::from_columns(&real.z_hat);
    let w = crate::numerics::hpd_solve(&total, &rhs)?;
    Ok(w.column_iter().map(|c| unit(&c.into_owned())).collect())
}

//! Pilot and data power allocation under statistical CSI.
//!
//! Pilot powers follow projected gradient ascent on an augmented Lagrangian
//! whose inequality constraints are converted to equalities with slacks
//! (penalty dual decomposition). Data powers are updated by maximizing a
//! concave minorant of the sum rate subject to linearized QoS constraints.
//! The two blocks alternate until the ergodic sum-rate bound settles.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cvx::{most_feasible_point, solve_linconstrained_concave, CvxError, LinConstrainedConcaveProblem, SmoothValue};
use crate::estimation::derived_covariances;
use crate::metrics::{sensing_matrices, uatf_sum_rate};
use crate::numerics::{hpd_solve, trace_product_raw, CMatrix, ComplexVector, HermitianMatrix, NumericsError, C64};
use crate::scenario::{ChannelStatistics, PenaltyRule, SystemConfig};

/// Allowed overshoot of the per-user energy budget.
pub const BUDGET_SLACK: f64 = 1e-9;
/// Lower bound on pilot power, relative to the power budget.
pub const PILOT_FLOOR: f64 = 1e-6;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
const MAX_INNER: usize = 100;
const MAX_PDD: usize = 40;
const XI_FLOOR: f64 = 1e-8;
const SOLVER_TOL: f64 = 1e-9;
/// Relative slack accepted on the QoS constraints at convergence.
pub const FEASIBILITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("QoS constraints cannot be met (worst relative violation {max_violation:e})")]
    Infeasible {
        best: PowerAllocation,
        trace: Vec<f64>,
        max_violation: f64,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("subproblem solver failed: {0}")]
    Solver(CvxError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub pilot: Vec<f64>,
    pub data: Vec<f64>,
}

impl PowerAllocation {
    pub fn uniform(users: usize, pilot: f64, data: f64) -> Self {
        Self {
            pilot: vec![pilot; users],
            data: vec![data; users],
        }
    }

    /// Full equal power, `min(P, PT/(T_p + T_d))` in both phases.
    pub fn initial(cfg: &SystemConfig) -> Self {
        let p = cfg.power.min(cfg.energy_budget() / (cfg.pilot_len + cfg.data_len()) as f64);
        Self::uniform(cfg.users, p, p)
    }

    pub fn users(&self) -> usize {
        self.pilot.len()
    }

    /// Largest `T_p p_p,k + T_d p_d,k − PT` over users.
    pub fn budget_excess(&self, cfg: &SystemConfig) -> f64 {
        let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
        self.pilot
            .iter()
            .zip(&self.data)
            .map(|(p, d)| t_p * p + t_d * d - cfg.energy_budget())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn within_budget(&self, cfg: &SystemConfig) -> bool {
        self.budget_excess(cfg) <= BUDGET_SLACK && self.pilot.iter().chain(&self.data).all(|p| *p >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PddState {
    /// Multipliers `ω_1..ω_K, ω_s`.
    pub omega: Vec<f64>,
    /// Slacks `τ_1..τ_K, τ_s`.
    pub tau: Vec<f64>,
    pub xi: f64,
    pub delta: f64,
}

impl PddState {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            omega: vec![0.0; cfg.users + 1],
            tau: vec![0.0; cfg.users + 1],
            xi: cfg.xi0,
            delta: cfg.delta0,
        }
    }
}

/// Everything the pilot and data steps need besides the iterate itself.
#[derive(Debug, Clone)]
pub struct PowerContext<'a> {
    pub cfg: &'a SystemConfig,
    pub stats: &'a ChannelStatistics,
    /// Sensing SINR threshold; `None` drops the sensing constraint.
    pub gamma_s_th: Option<f64>,
    /// Statistical sensing combiner used in the sensing constraint.
    pub u_s: ComplexVector,
}

impl<'a> PowerContext<'a> {
    pub fn new(cfg: &'a SystemConfig, stats: &'a ChannelStatistics, u_s: ComplexVector) -> Result<Self, NumericsError> {
        Ok(Self {
            cfg,
            stats,
            gamma_s_th: cfg.sensing_threshold()?,
            u_s,
        })
    }

    fn users(&self) -> usize {
        self.cfg.users
    }

    fn rate_th(&self, k: usize) -> Option<f64> {
        let r = self.cfg.rate_threshold[k];
        (r > 0.0).then_some(r)
    }

    fn sensing_th(&self) -> Option<f64> {
        self.gamma_s_th.filter(|g| *g > 0.0)
    }

    fn rate_scale(&self) -> f64 {
        self.cfg.data_len() as f64 / (self.cfg.block_len as f64 * LN_2)
    }

    pub fn pilot_upper(&self, p_d: &[f64]) -> Vec<f64> {
        let (t_p, t_d) = (self.cfg.pilot_len as f64, self.cfg.data_len() as f64);
        p_d.iter()
            .map(|d| ((self.cfg.energy_budget() - t_d * d) / t_p).max(self.pilot_floor()))
            .collect()
    }

    pub fn data_upper(&self, p_p: &[f64]) -> Vec<f64> {
        let (t_p, t_d) = (self.cfg.pilot_len as f64, self.cfg.data_len() as f64);
        p_p.iter().map(|p| ((self.cfg.energy_budget() - t_p * p) / t_d).max(0.0)).collect()
    }

    pub fn pilot_floor(&self) -> f64 {
        PILOT_FLOOR * self.cfg.power
    }
}

/// Per-user quantities at a pilot power, with derivatives in that power.
#[derive(Debug, Clone, Copy, Default)]
struct UserTerms {
    rate: f64,
    d_rate: f64,
    /// `u_sᴴ R_ĝ,k u_s`
    g_q: f64,
    d_g_q: f64,
    /// `u_sᴴ R_err,k u_s`
    e_q: f64,
    d_e_q: f64,
}

fn quad_re(m: &CMatrix, u: &ComplexVector) -> f64 {
    u.dotc(&(m * u)).re
}

fn mat_trace(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

fn user_terms(ctx: &PowerContext<'_>, k: usize, p_pk: f64, p_d: &[f64], with_grad: bool) -> Result<UserTerms, NumericsError> {
    let cfg = ctx.cfg;
    let st = ctx.stats;
    let t_p = cfg.pilot_len as f64;
    let noise = cfg.noise;
    let (r, r_g) = (st.r[k].matrix(), st.r_g[k].matrix());
    let u = &ctx.u_s;
    if p_pk <= 0.0 {
        return Ok(UserTerms {
            e_q: quad_re(r, u),
            ..UserTerms::default()
        });
    }
    let c = st.r[k].scaled(p_pk * t_p).add_scaled_identity(noise).into_inner();
    let m = hpd_solve(&c, r)?;
    let mg = hpd_solve(&c, r_g)?;
    let pt = C64::new(p_pk * t_p, 0.0);
    let r_est = r * &m * pt;
    let tr = mat_trace(&r_est);
    let mut t_d = noise * tr;
    for i in 0..st.users() {
        t_d += p_d[i] * trace_product_raw(st.r[i].matrix(), &r_est);
    }
    let s = p_d[k] * tr * tr;
    let t_n = s + t_d;
    let scale = ctx.rate_scale();
    let rate = if tr > 0.0 && t_d > 0.0 { scale * (t_n / t_d).ln() } else { 0.0 };
    let g_q = quad_re(&(r_g * &mg), u) * p_pk * t_p;
    let e_q = quad_re(&m, u) * noise;
    let mut out = UserTerms {
        rate,
        g_q,
        e_q,
        ..UserTerms::default()
    };
    if with_grad {
        let mm = &m * &m;
        let d_est = r * &m * C64::new(t_p, 0.0) - r * &mm * C64::new(p_pk * t_p * t_p, 0.0);
        let d_tr = mat_trace(&d_est);
        let mut d_td = noise * d_tr;
        for i in 0..st.users() {
            d_td += p_d[i] * trace_product_raw(st.r[i].matrix(), &d_est);
        }
        let d_tn = 2.0 * p_d[k] * tr * d_tr + d_td;
        out.d_rate = if tr > 0.0 && t_d > 0.0 {
            scale * (d_tn / t_n - d_td / t_d)
        } else {
            0.0
        };
        let d_g = r_g * &mg * C64::new(t_p, 0.0) - r_g * (&m * &mg) * C64::new(p_pk * t_p * t_p, 0.0);
        out.d_g_q = quad_re(&d_g, u);
        out.d_e_q = -noise * t_p * quad_re(&mm, u);
    }
    Ok(out)
}

/// Rates, sensing SINR and their pilot-power derivatives at one iterate.
#[derive(Debug, Clone)]
struct Evaluation {
    rates: Vec<f64>,
    d_rates: Vec<f64>,
    sinr_s: f64,
    d_sinr_s: Vec<f64>,
}

fn evaluate(ctx: &PowerContext<'_>, p_p: &[f64], p_d: &[f64], with_grad: bool) -> Result<Evaluation, NumericsError> {
    let k_users = ctx.users();
    let (t_p, t_d) = (ctx.cfg.pilot_len as f64, ctx.cfg.data_len() as f64);
    let terms = (0..k_users)
        .map(|k| user_terms(ctx, k, p_p[k], p_d, with_grad))
        .collect::<Result<Vec<_>, _>>()?;
    let energy: Vec<f64> = (0..k_users).map(|k| t_p * p_p[k] + t_d * p_d[k]).collect();
    let num: f64 = (0..k_users).map(|k| energy[k] * terms[k].g_q).sum();
    let den: f64 = (0..k_users).map(|k| energy[k] * terms[k].e_q).sum::<f64>()
        + ctx.cfg.block_len as f64 * ctx.cfg.noise * ctx.u_s.norm_squared();
    let sinr_s = if num > 0.0 { num / den } else { 0.0 };
    let d_sinr_s = if with_grad && den > 0.0 {
        (0..k_users)
            .map(|l| {
                let dn = t_p * terms[l].g_q + energy[l] * terms[l].d_g_q;
                let dd = t_p * terms[l].e_q + energy[l] * terms[l].d_e_q;
                (dn * den - num * dd) / (den * den)
            })
            .collect()
    } else {
        vec![0.0; k_users]
    };
    Ok(Evaluation {
        rates: terms.iter().map(|t| t.rate).collect(),
        d_rates: terms.iter().map(|t| t.d_rate).collect(),
        sinr_s,
        d_sinr_s,
    })
}

/// Constraint residuals `f_1..f_K` and `f_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub users: Vec<f64>,
    pub sensing: f64,
}

impl Residuals {
    pub fn max_abs(&self) -> f64 {
        self.users.iter().chain(std::iter::once(&self.sensing)).fold(0.0_f64, |m, f| m.max(f.abs()))
    }
}

fn residuals_from(ctx: &PowerContext<'_>, ev: &Evaluation, state: &PddState) -> Residuals {
    let k_users = ctx.users();
    let users = (0..k_users)
        .map(|k| match ctx.rate_th(k) {
            Some(r) => 1.0 - ev.rates[k] / r + state.tau[k],
            None => 0.0,
        })
        .collect();
    let sensing = match ctx.sensing_th() {
        Some(g) => 1.0 - ev.sinr_s / g + state.tau[k_users],
        None => 0.0,
    };
    Residuals { users, sensing }
}

pub fn constraint_residuals(
    ctx: &PowerContext<'_>,
    p_p: &[f64],
    p_d: &[f64],
    state: &PddState,
) -> Result<Residuals, NumericsError> {
    Ok(residuals_from(ctx, &evaluate(ctx, p_p, p_d, false)?, state))
}

fn lagrangian_from(ev: &Evaluation, f: &Residuals, state: &PddState) -> f64 {
    let k_users = f.users.len();
    let mut l: f64 = ev.rates.iter().sum();
    for k in 0..k_users {
        l -= state.omega[k] * f.users[k];
    }
    l -= state.omega[k_users] * f.sensing;
    let sq: f64 = f.users.iter().map(|x| x * x).sum::<f64>() + f.sensing * f.sensing;
    l - sq / (2.0 * state.xi)
}

pub fn lagrangian_value(ctx: &PowerContext<'_>, p_p: &[f64], p_d: &[f64], state: &PddState) -> Result<f64, NumericsError> {
    let ev = evaluate(ctx, p_p, p_d, false)?;
    let f = residuals_from(ctx, &ev, state);
    Ok(lagrangian_from(&ev, &f, state))
}

fn gradient_from(ctx: &PowerContext<'_>, ev: &Evaluation, f: &Residuals, state: &PddState) -> Vec<f64> {
    let k_users = ctx.users();
    let sense_weight = match ctx.sensing_th() {
        Some(g) => (state.omega[k_users] + f.sensing / state.xi) / g,
        None => 0.0,
    };
    (0..k_users)
        .map(|l| {
            let rate_weight = match ctx.rate_th(l) {
                Some(r) => 1.0 + state.omega[l] / r + f.users[l] / (state.xi * r),
                None => 1.0,
            };
            rate_weight * ev.d_rates[l] + sense_weight * ev.d_sinr_s[l]
        })
        .collect()
}

/// Analytic gradient of the augmented Lagrangian with respect to pilot powers.
pub fn lagrangian_gradient(
    ctx: &PowerContext<'_>,
    p_p: &[f64],
    p_d: &[f64],
    state: &PddState,
) -> Result<Vec<f64>, NumericsError> {
    let ev = evaluate(ctx, p_p, p_d, true)?;
    let f = residuals_from(ctx, &ev, state);
    Ok(gradient_from(ctx, &ev, &f, state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentStep {
    pub pilot: Vec<f64>,
    pub step: f64,
    pub backtracks: usize,
    /// True when no step satisfying the Armijo condition was found.
    pub stalled: bool,
}

fn project(x: &[f64], lo: f64, hi: &[f64]) -> Vec<f64> {
    x.iter().zip(hi).map(|(v, h)| v.clamp(lo, *h)).collect()
}

/// One projected gradient step with Armijo backtracking.
pub fn pilot_ascent_step(
    ctx: &PowerContext<'_>,
    p_p: &[f64],
    p_d: &[f64],
    state: &PddState,
) -> Result<AscentStep, NumericsError> {
    let ev = evaluate(ctx, p_p, p_d, true)?;
    let f = residuals_from(ctx, &ev, state);
    let l0 = lagrangian_from(&ev, &f, state);
    let grad = gradient_from(ctx, &ev, &f, state);
    let hi = ctx.pilot_upper(p_d);
    let lo = ctx.pilot_floor();
    let mut delta = ctx.cfg.delta0;
    for b in 0..=MAX_BACKTRACKS {
        let trial: Vec<f64> = p_p.iter().zip(&grad).map(|(p, g)| p + delta * g).collect();
        let cand = project(&trial, lo, &hi);
        let ascent: f64 = grad.iter().zip(cand.iter().zip(p_p)).map(|(g, (c, p))| g * (c - p)).sum();
        if ascent <= 0.0 {
            return Ok(AscentStep {
                pilot: p_p.to_vec(),
                step: 0.0,
                backtracks: b,
                stalled: false,
            });
        }
        if lagrangian_value(ctx, &cand, p_d, state)? >= l0 + ARMIJO_C * ascent {
            return Ok(AscentStep {
                pilot: cand,
                step: delta,
                backtracks: b,
                stalled: false,
            });
        }
        delta *= 0.5;
    }
    Ok(AscentStep {
        pilot: p_p.to_vec(),
        step: 0.0,
        backtracks: MAX_BACKTRACKS,
        stalled: true,
    })
}

fn update_slacks(ctx: &PowerContext<'_>, ev: &Evaluation, state: &mut PddState) {
    let k_users = ctx.users();
    for k in 0..k_users {
        state.tau[k] = match ctx.rate_th(k) {
            Some(r) => (ev.rates[k] / r - 1.0 - state.omega[k] * state.xi).max(0.0),
            None => 0.0,
        };
    }
    state.tau[k_users] = match ctx.sensing_th() {
        Some(g) => (ev.sinr_s / g - 1.0 - state.omega[k_users] * state.xi).max(0.0),
        None => 0.0,
    };
}

/// Slack, multiplier and penalty updates.
pub fn pdd_updates(ctx: &PowerContext<'_>, p_p: &[f64], p_d: &[f64], state: &PddState) -> Result<PddState, NumericsError> {
    let ev = evaluate(ctx, p_p, p_d, false)?;
    let mut next = state.clone();
    update_slacks(ctx, &ev, &mut next);
    let f = residuals_from(ctx, &ev, &next);
    let k_users = ctx.users();
    for k in 0..k_users {
        next.omega[k] += f.users[k] / next.xi;
    }
    next.omega[k_users] += f.sensing / next.xi;
    next.xi = match ctx.cfg.penalty_rule {
        PenaltyRule::Tighten => (next.xi / ctx.cfg.eta).max(XI_FLOOR),
        PenaltyRule::Literal => next.xi * ctx.cfg.eta,
    };
    Ok(next)
}

/// Coefficients of the data-power subproblem at a fixed pilot power.
#[derive(Debug, Clone)]
pub struct DataPowerModel {
    /// `tr(R_est,k)`
    pub phi: Vec<f64>,
    /// `ς_ki = tr(R_i R_est,k)/tr(R_est,k)`
    pub varsigma: DMatrix<f64>,
    pub noise: f64,
    pub scale: f64,
}

impl DataPowerModel {
    pub fn new(ctx: &PowerContext<'_>, p_p: &[f64]) -> Result<Self, NumericsError> {
        let dc = derived_covariances(p_p, ctx.stats, ctx.cfg)?;
        let k_users = ctx.users();
        let phi: Vec<f64> = dc.r_est.iter().map(HermitianMatrix::trace).collect();
        let varsigma = DMatrix::from_fn(k_users, k_users, |k, i| {
            if phi[k] > 0.0 {
                trace_product_raw(ctx.stats.r[i].matrix(), dc.r_est[k].matrix()) / phi[k]
            } else {
                0.0
            }
        });
        Ok(Self {
            phi,
            varsigma,
            noise: ctx.cfg.noise,
            scale: ctx.rate_scale(),
        })
    }

    fn interference(&self, k: usize, p: &[f64]) -> f64 {
        self.noise + (0..p.len()).map(|i| self.varsigma[(k, i)] * p[i]).sum::<f64>()
    }

    /// Ergodic sum-rate bound as a function of data power.
    pub fn sum_rate(&self, p: &[f64]) -> f64 {
        (0..p.len())
            .map(|k| {
                let d = self.interference(k, p);
                self.scale * ((d + self.phi[k] * p[k]) / d).ln()
            })
            .sum()
    }

    /// Concave minorant of [`Self::sum_rate`] tight at `p0`.
    pub fn minorant(&self, p: &[f64], p0: &[f64]) -> f64 {
        (0..p.len())
            .map(|k| {
                let d0 = self.interference(k, p0);
                let d = self.interference(k, p);
                self.scale * ((d + self.phi[k] * p[k]).ln() - d0.ln() - (d - d0) / d0)
            })
            .sum()
    }
}

/// Builds the linear constraints `A y ≤ b` of the data-power subproblem in the
/// scaled variable `y = p_d/P`.
fn data_constraints(ctx: &PowerContext<'_>, model: &DataPowerModel, p_p: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>), NumericsError> {
    let cfg = ctx.cfg;
    let k_users = ctx.users();
    let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
    let pw = cfg.power;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..k_users {
        let mut a = vec![0.0; k_users];
        a[k] = t_d * pw;
        rows.push((a, cfg.energy_budget() - t_p * p_p[k]));
    }
    for k in 0..k_users {
        let Some(r) = ctx.rate_th(k) else { continue };
        let theta = 2f64.powf(r * cfg.block_len as f64 / cfg.data_len() as f64) - 1.0;
        let a: Vec<f64> = (0..k_users)
            .map(|i| {
                let own = if i == k { model.phi[k] } else { 0.0 };
                pw * (theta * model.varsigma[(k, i)] - own)
            })
            .collect();
        rows.push((a, -theta * model.noise));
    }
    if let Some(g) = ctx.sensing_th() {
        let dc = derived_covariances(p_p, ctx.stats, cfg)?;
        let u = &ctx.u_s;
        let s: Vec<f64> = (0..k_users)
            .map(|k| dc.r_g_hat[k].quad_form(u) - g * dc.r_err[k].quad_form(u))
            .collect();
        let a: Vec<f64> = s.iter().map(|sk| -t_d * pw * sk).collect();
        let b = t_p * (0..k_users).map(|k| p_p[k] * s[k]).sum::<f64>()
            - g * cfg.block_len as f64 * cfg.noise * u.norm_squared();
        rows.push((a, b));
    }
    let m = rows.len();
    let mut a_mat = DMatrix::zeros(m, k_users);
    let mut b_vec = DVector::zeros(m);
    for (i, (a, b)) in rows.into_iter().enumerate() {
        let norm = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        for j in 0..k_users {
            a_mat[(i, j)] = a[j] / norm;
        }
        b_vec[i] = b / norm;
    }
    Ok((a_mat, b_vec))
}

/// One SCA step on data power at fixed pilot power.
pub fn data_power_sca(ctx: &PowerContext<'_>, p_p: &[f64], p_d_prev: &[f64]) -> Result<Vec<f64>, PowerError> {
    let model = DataPowerModel::new(ctx, p_p)?;
    let (a, b) = data_constraints(ctx, &model, p_p)?;
    let pw = ctx.cfg.power;
    let p0 = p_d_prev.to_vec();
    let k_users = ctx.users();
    let d0: Vec<f64> = (0..k_users).map(|k| model.interference(k, &p0)).collect();
    let objective = |y: &DVector<f64>| {
        let p: Vec<f64> = y.iter().map(|v| v * pw).collect();
        let mut value = 0.0;
        let mut gradient = DVector::zeros(k_users);
        let mut hessian = DMatrix::zeros(k_users, k_users);
        for k in 0..k_users {
            let d = model.interference(k, &p);
            let s = d + model.phi[k] * p[k];
            value += model.scale * (s.ln() - d0[k].ln() - (d - d0[k]) / d0[k]);
            let coef: Vec<f64> = (0..k_users)
                .map(|i| pw * (model.varsigma[(k, i)] + if i == k { model.phi[k] } else { 0.0 }))
                .collect();
            for i in 0..k_users {
                gradient[i] += model.scale * (coef[i] / s - pw * model.varsigma[(k, i)] / d0[k]);
                for j in 0..k_users {
                    hessian[(i, j)] -= model.scale * coef[i] * coef[j] / (s * s);
                }
            }
        }
        SmoothValue {
            value,
            gradient,
            hessian,
        }
    };
    let prob = LinConstrainedConcaveProblem {
        objective: Box::new(objective),
        a,
        b,
    };
    let y0 = DVector::from_iterator(k_users, p0.iter().map(|p| p / pw));
    match solve_linconstrained_concave(&prob, &y0, SOLVER_TOL) {
        Ok(sol) => {
            let hi = ctx.data_upper(p_p);
            let p: Vec<f64> = sol.x.iter().zip(&hi).map(|(y, h)| (y * pw).clamp(0.0, *h)).collect();
            // Keep the incumbent if the solver returned a worse minorant value.
            if model.minorant(&p, &p0) + 1e-12 < model.minorant(&p0, &p0) && feasible_data(ctx, &model, p_p, &p0)? {
                Ok(p0)
            } else {
                Ok(p)
            }
        }
        Err(CvxError::Infeasible { margin }) => Err(PowerError::Infeasible {
            best: PowerAllocation {
                pilot: p_p.to_vec(),
                data: p0,
            },
            trace: Vec::new(),
            max_violation: -margin,
        }),
        Err(e) => Err(PowerError::Solver(e)),
    }
}

/// Data power maximizing the smallest normalized margin of the subproblem
/// constraints, used while the QoS constraints cannot yet be met.
fn restore_data_power(ctx: &PowerContext<'_>, p_p: &[f64], p_d_prev: &[f64]) -> Result<Vec<f64>, PowerError> {
    let model = DataPowerModel::new(ctx, p_p)?;
    let (a, b) = data_constraints(ctx, &model, p_p)?;
    let k_users = ctx.users();
    let prob = LinConstrainedConcaveProblem {
        objective: Box::new(move |_: &DVector<f64>| SmoothValue {
            value: 0.0,
            gradient: DVector::zeros(k_users),
            hessian: DMatrix::zeros(k_users, k_users),
        }),
        a,
        b,
    };
    let pw = ctx.cfg.power;
    let y0 = DVector::from_iterator(k_users, p_d_prev.iter().map(|p| p / pw));
    let (y, _) = most_feasible_point(&prob, &y0).map_err(PowerError::Solver)?;
    let hi = ctx.data_upper(p_p);
    let restored: Vec<f64> = y.iter().zip(&hi).map(|(v, h)| (v * pw).clamp(0.0, *h)).collect();
    let kept: Vec<f64> = p_d_prev.iter().zip(&hi).map(|(v, h)| v.clamp(0.0, *h)).collect();
    let violation = |p_d: &[f64]| {
        let p = PowerAllocation {
            pilot: p_p.to_vec(),
            data: p_d.to_vec(),
        };
        qos_violation(&p, ctx.stats, ctx.cfg, &ctx.u_s)
    };
    if violation(&restored)? <= violation(&kept)? {
        Ok(restored)
    } else {
        Ok(kept)
    }
}

fn feasible_data(ctx: &PowerContext<'_>, model: &DataPowerModel, p_p: &[f64], p_d: &[f64]) -> Result<bool, NumericsError> {
    let (a, b) = data_constraints(ctx, model, p_p)?;
    let y = DVector::from_iterator(p_d.len(), p_d.iter().map(|p| p / ctx.cfg.power));
    Ok((&a * &y - &b).iter().all(|v| *v <= 1e-12) && p_d.iter().all(|p| *p >= 0.0))
}

/// Statistical sensing combiner for the given powers.
pub fn statistical_sensing_combiner(
    p: &PowerAllocation,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
) -> Result<ComplexVector, NumericsError> {
    let dc = derived_covariances(&p.pilot, stats, cfg)?;
    let (o1, o2) = sensing_matrices(p, &dc, cfg);
    crate::beamforming::sensing_evd(&o1, &o2, cfg.block_len, cfg.noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_residual: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerOutcome {
    pub allocation: PowerAllocation,
    /// Sum-rate bound at the starting point.
    pub initial_objective: f64,
    /// One record per outer iteration.
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub sensing_combiner: ComplexVector,
}

impl PowerOutcome {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// QoS status of an allocation: worst relative violation of the rate and
/// sensing constraints (nonpositive when all hold).
pub fn qos_violation(
    p: &PowerAllocation,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
    u_s: &ComplexVector,
) -> Result<f64, NumericsError> {
    let ctx = PowerContext::new(cfg, stats, u_s.clone())?;
    let ev = evaluate(&ctx, &p.pilot, &p.data, false)?;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..cfg.users {
        if let Some(r) = ctx.rate_th(k) {
            worst = worst.max(1.0 - ev.rates[k] / r);
        }
    }
    if let Some(g) = ctx.sensing_th() {
        worst = worst.max(1.0 - ev.sinr_s / g);
    }
    Ok(worst)
}

/// Ergodic sum-rate bound of an allocation.
pub fn sum_rate_bound(p: &PowerAllocation, stats: &ChannelStatistics, cfg: &SystemConfig) -> Result<f64, NumericsError> {
    let dc = derived_covariances(&p.pilot, stats, cfg)?;
    Ok(uatf_sum_rate(p, &dc, stats, cfg).sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoOptions {
    pub max_outer: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self { max_outer: 200 }
    }
}

/// Inner PDD loop on pilot powers at fixed data powers.
fn pdd_pilot(ctx: &PowerContext<'_>, p_p: &mut Vec<f64>, p_d: &[f64], state: &mut PddState) -> Result<f64, NumericsError> {
    let eps = ctx.cfg.tolerance;
    let move_tol = eps * ctx.cfg.power;
    let mut max_res = 0.0;
    let ev = evaluate(ctx, p_p, p_d, false)?;
    update_slacks(ctx, &ev, state);
    for _ in 0..MAX_PDD {
        let start = p_p.clone();
        for _ in 0..MAX_INNER {
            let step = pilot_ascent_step(ctx, p_p, p_d, state)?;
            let moved = step.pilot.iter().zip(p_p.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            *p_p = step.pilot;
            state.delta = step.step;
            let ev = evaluate(ctx, p_p, p_d, false)?;
            update_slacks(ctx, &ev, state);
            if moved <= move_tol || step.stalled {
                break;
            }
        }
        *state = pdd_updates(ctx, p_p, p_d, state)?;
        max_res = constraint_residuals(ctx, p_p, p_d, state)?.max_abs();
        let drift = start.iter().zip(p_p.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if max_res <= eps || (drift <= move_tol && state.xi <= XI_FLOOR) {
            break;
        }
    }
    Ok(max_res)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Alternating pilot/data power optimization.
pub fn optimize_power(
    cfg: &SystemConfig,
    stats: &ChannelStatistics,
    init: &PowerAllocation,
    opts: &AoOptions,
) -> Result<PowerOutcome, PowerError> {
    let eps = cfg.tolerance;
    let floor = PILOT_FLOOR * cfg.power;
    let mut current = PowerAllocation {
        pilot: init.pilot.iter().map(|p| p.max(floor)).collect(),
        data: init.data.clone(),
    };
    let initial_objective = sum_rate_bound(&current, stats, cfg)?;
    let mut state = PddState::new(cfg);
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut u_s = statistical_sensing_combiner(&current, stats, cfg)?;
    let mut prev_objective = initial_objective;
    let mut prev_feasible = false;
    for iteration in 1..=opts.max_outer {
        u_s = statistical_sensing_combiner(&current, stats, cfg)?;
        let ctx = PowerContext::new(cfg, stats, u_s.clone())?;
        let mut p_p = current.pilot.clone();
        let max_residual = pdd_pilot(&ctx, &mut p_p, &current.data, &mut state)?;
        let mut candidate = match data_power_sca(&ctx, &p_p, &current.data) {
            Ok(p_d) => PowerAllocation { pilot: p_p, data: p_d },
            Err(PowerError::Infeasible { .. }) if prev_feasible => {
                // Keep the pilot iterate of the last feasible point.
                let p_d = data_power_sca(&ctx, &current.pilot, &current.data)?;
                PowerAllocation {
                    pilot: current.pilot.clone(),
                    data: p_d,
                }
            }
            Err(PowerError::Infeasible { .. }) => {
                let p_d = restore_data_power(&ctx, &p_p, &current.data)?;
                PowerAllocation { pilot: p_p, data: p_d }
            }
            Err(e) => return Err(e),
        };
        let mut objective = sum_rate_bound(&candidate, stats, cfg)?;
        if prev_feasible && objective < prev_objective {
            // Monotone safeguard: fall back to a data-only step from the
            // previous feasible iterate.
            let p_d = data_power_sca(&ctx, &current.pilot, &current.data)?;
            candidate = PowerAllocation {
                pilot: current.pilot.clone(),
                data: p_d,
            };
            objective = sum_rate_bound(&candidate, stats, cfg)?;
            if objective < prev_objective {
                candidate = current.clone();
                objective = prev_objective;
            }
        }
        let feasible = qos_violation(&candidate, stats, cfg, &u_s)? <= FEASIBILITY_TOL;
        let previous = std::mem::replace(&mut current, candidate);
        trace.push(IterationRecord {
            iteration,
            objective,
            max_residual,
            xi: state.xi,
        });
        let change = (objective - prev_objective).abs();
        let moved = max_abs_diff(&current.pilot, &previous.pilot).max(max_abs_diff(&current.data, &previous.data));
        let settled = iteration > 1 && prev_feasible && feasible && change <= eps;
        let stuck = iteration > 1 && !feasible && moved <= eps * cfg.power;
        prev_objective = objective;
        prev_feasible = feasible;
        if settled {
            converged = true;
            break;
        }
        if stuck {
            break;
        }
    }
    let violation = qos_violation(&current, stats, cfg, &u_s)?;
    if violation > FEASIBILITY_TOL {
        return Err(PowerError::Infeasible {
            best: current,
            trace: trace.iter().map(|r| r.objective).collect(),
            max_violation: violation,
        });
    }
    Ok(PowerOutcome {
        allocation: current,
        initial_objective,
        trace,
        converged,
        sensing_combiner: u_s,
    })
}

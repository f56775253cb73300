//! Pilot reception, MMSE channel estimation and the sensing residual after
//! interference cancellation.

use crate::numerics::{
    hpd_solve, CMatrix, ComplexVector, GaussianSampler, HermitianMatrix, NumericsError, SeededRng, C64,
};
use crate::power_alloc::PowerAllocation;
use crate::scenario::{ChannelStatistics, SystemConfig};

/// One coherence block of true channels and their estimates.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<ComplexVector>,
    pub g: Vec<ComplexVector>,
    pub h_hat: Vec<ComplexVector>,
    pub g_hat: Vec<ComplexVector>,
    pub eps_h: Vec<ComplexVector>,
    pub eps_g: Vec<ComplexVector>,
    pub z_hat: Vec<ComplexVector>,
}

impl ChannelRealization {
    /// Assembles a realization from true channels and estimates; errors are
    /// the exact differences.
    pub fn from_estimates(
        h: Vec<ComplexVector>,
        g: Vec<ComplexVector>,
        h_hat: Vec<ComplexVector>,
        g_hat: Vec<ComplexVector>,
    ) -> Self {
        let eps_h = h.iter().zip(&h_hat).map(|(a, b)| a - b).collect();
        let eps_g = g.iter().zip(&g_hat).map(|(a, b)| a - b).collect();
        let z_hat = h_hat.iter().zip(&g_hat).map(|(a, b)| a + b).collect();
        Self {
            h,
            g,
            h_hat,
            g_hat,
            eps_h,
            eps_g,
            z_hat,
        }
    }

    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.first().map_or(0, |v| v.len())
    }

    /// Combined estimation error `e_k`.
    pub fn error(&self, k: usize) -> ComplexVector {
        &self.eps_h[k] + &self.eps_g[k]
    }
}

#[derive(Debug, Clone)]
pub struct DerivedCovariances {
    /// `P_p T_p R C⁻¹ R`, the covariance of `ẑ_k`.
    pub r_est: Vec<HermitianMatrix>,
    /// `R − R_est = σ² R C⁻¹`, the covariance of `e_k`.
    pub r_err: Vec<HermitianMatrix>,
    pub r_h_hat: Vec<HermitianMatrix>,
    pub r_g_hat: Vec<HermitianMatrix>,
    /// `R_h − R_ĥ`.
    pub r_eps_h: Vec<HermitianMatrix>,
    /// `R_g − R_ĝ`.
    pub r_eps_g: Vec<HermitianMatrix>,
}

impl DerivedCovariances {
    pub fn users(&self) -> usize {
        self.r_est.len()
    }
}

fn pilot_cov(p: f64, t_p: f64, r: &HermitianMatrix, noise: f64) -> CMatrix {
    r.scaled(p * t_p).add_scaled_identity(noise).into_inner()
}

fn check_estimable(p: f64, noise: f64) -> Result<(), NumericsError> {
    if p <= 0.0 && noise <= 0.0 {
        return Err(NumericsError::Singular {
            condition: f64::INFINITY,
        });
    }
    Ok(())
}

pub fn derived_covariances(
    p_p: &[f64],
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
) -> Result<DerivedCovariances, NumericsError> {
    let n = stats.antennas();
    let t_p = cfg.pilot_len as f64;
    let k_users = stats.users();
    let mut out = DerivedCovariances {
        r_est: Vec::with_capacity(k_users),
        r_err: Vec::with_capacity(k_users),
        r_h_hat: Vec::with_capacity(k_users),
        r_g_hat: Vec::with_capacity(k_users),
        r_eps_h: Vec::with_capacity(k_users),
        r_eps_g: Vec::with_capacity(k_users),
    };
    for k in 0..k_users {
        let p = p_p[k];
        let (r_h, r_g, r) = (&stats.r_h[k], &stats.r_g[k], &stats.r[k]);
        if p <= 0.0 {
            out.r_est.push(HermitianMatrix::zeros(n));
            out.r_err.push(r.clone());
            out.r_h_hat.push(HermitianMatrix::zeros(n));
            out.r_g_hat.push(HermitianMatrix::zeros(n));
            out.r_eps_h.push(r_h.clone());
            out.r_eps_g.push(r_g.clone());
            continue;
        }
        check_estimable(p, cfg.noise)?;
        let c = pilot_cov(p, t_p, r, cfg.noise);
        let x_h = hpd_solve(&c, r_h.matrix())?;
        let x_g = hpd_solve(&c, r_g.matrix())?;
        let s = C64::new(p * t_p, 0.0);
        let r_h_hat = HermitianMatrix::symmetrize(r_h.matrix() * &x_h * s);
        let r_g_hat = HermitianMatrix::symmetrize(r_g.matrix() * &x_g * s);
        let x = &x_h + &x_g;
        let r_est = HermitianMatrix::symmetrize(r.matrix() * &x * s);
        let r_err = if cfg.noise > 0.0 {
            HermitianMatrix::symmetrize(x * C64::new(cfg.noise, 0.0))
        } else {
            r - &r_est
        };
        out.r_eps_h.push(r_h - &r_h_hat);
        out.r_eps_g.push(r_g - &r_g_hat);
        out.r_h_hat.push(r_h_hat);
        out.r_g_hat.push(r_g_hat);
        out.r_est.push(r_est);
        out.r_err.push(r_err);
    }
    Ok(out)
}

/// Linear MMSE filters `√P R_h C⁻¹` and `√P R_g C⁻¹` for every user.
#[derive(Debug, Clone)]
pub struct EstimationFilters {
    w_h: Vec<CMatrix>,
    w_g: Vec<CMatrix>,
}

impl EstimationFilters {
    pub fn new(p_p: &[f64], stats: &ChannelStatistics, cfg: &SystemConfig) -> Result<Self, NumericsError> {
        let n = stats.antennas();
        let t_p = cfg.pilot_len as f64;
        let mut w_h = Vec::with_capacity(stats.users());
        let mut w_g = Vec::with_capacity(stats.users());
        for (k, &p) in p_p.iter().enumerate().take(stats.users()) {
            if p <= 0.0 {
                w_h.push(CMatrix::zeros(n, n));
                w_g.push(CMatrix::zeros(n, n));
                continue;
            }
            check_estimable(p, cfg.noise)?;
            let c = pilot_cov(p, t_p, &stats.r[k], cfg.noise);
            let s = C64::new(p.sqrt(), 0.0);
            // C⁻¹R_h is the adjoint of R_h C⁻¹ because both factors are Hermitian.
            w_h.push(hpd_solve(&c, stats.r_h[k].matrix())?.adjoint() * s);
            w_g.push(hpd_solve(&c, stats.r_g[k].matrix())?.adjoint() * s);
        }
        Ok(Self { w_h, w_g })
    }

    pub fn estimate(&self, k: usize, y_pk: &ComplexVector) -> (ComplexVector, ComplexVector) {
        (&self.w_h[k] * y_pk, &self.w_g[k] * y_pk)
    }
}

pub fn mmse_estimate(
    k: usize,
    y_pk: &ComplexVector,
    p_p: &[f64],
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
) -> Result<(ComplexVector, ComplexVector), NumericsError> {
    let mut single = vec![0.0; stats.users()];
    single[k] = p_p[k];
    Ok(EstimationFilters::new(&single, stats, cfg)?.estimate(k, y_pk))
}

#[derive(Debug, Clone)]
pub struct PilotObservation {
    /// Received block `Y_p` (N_b × T_p).
    pub block: CMatrix,
    /// Matched-filter outputs `y_p,k = Y_p x*_p,k`.
    pub matched: Vec<ComplexVector>,
}

pub fn simulate_pilot_rx(
    h: &[ComplexVector],
    g: &[ComplexVector],
    p_p: &[f64],
    pilots: &[ComplexVector],
    noise: f64,
    rng: &mut SeededRng,
) -> PilotObservation {
    let n = h[0].len();
    let t_p = pilots[0].len();
    let noise_std = noise.sqrt();
    let mut block = CMatrix::from_fn(n, t_p, |_, _| rng.complex_normal() * noise_std);
    for k in 0..h.len() {
        let z = (&h[k] + &g[k]) * C64::new(p_p[k].sqrt(), 0.0);
        block += &z * pilots[k].transpose();
    }
    let matched = pilots.iter().map(|x| &block * x.map(|c| c.conj())).collect();
    PilotObservation { block, matched }
}

/// Draws channel realizations and their estimates for a fixed pilot power.
#[derive(Debug, Clone)]
pub struct RealizationSampler {
    h: Vec<GaussianSampler>,
    g: Vec<GaussianSampler>,
    filters: EstimationFilters,
    pilots: Vec<ComplexVector>,
    p_p: Vec<f64>,
    noise: f64,
}

impl RealizationSampler {
    pub fn new(
        p_p: &[f64],
        stats: &ChannelStatistics,
        pilots: &[ComplexVector],
        cfg: &SystemConfig,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            h: stats.r_h.iter().map(GaussianSampler::new).collect::<Result<_, _>>()?,
            g: stats.r_g.iter().map(GaussianSampler::new).collect::<Result<_, _>>()?,
            filters: EstimationFilters::new(p_p, stats, cfg)?,
            pilots: pilots.to_vec(),
            p_p: p_p.to_vec(),
            noise: cfg.noise,
        })
    }

    pub fn draw(&self, rng: &mut SeededRng) -> ChannelRealization {
        let h: Vec<_> = self.h.iter().map(|s| s.sample(rng)).collect();
        let g: Vec<_> = self.g.iter().map(|s| s.sample(rng)).collect();
        let obs = simulate_pilot_rx(&h, &g, &self.p_p, &self.pilots, self.noise, rng);
        let (h_hat, g_hat) = (0..h.len()).map(|k| self.filters.estimate(k, &obs.matched[k])).unzip();
        ChannelRealization::from_estimates(h, g, h_hat, g_hat)
    }
}

/// Transmitted symbols of one block, users × T. The first `T_p` columns hold
/// the per-symbol pilot vectors (row k is user k's pilot sequence).
#[derive(Debug, Clone)]
pub struct SymbolBlock {
    pub x: CMatrix,
    pub pilot_len: usize,
}

impl SymbolBlock {
    pub fn draw(pilots: &[ComplexVector], block_len: usize, rng: &mut SeededRng) -> Self {
        let t_p = pilots[0].len();
        let x = CMatrix::from_fn(pilots.len(), block_len, |k, t| {
            if t < t_p {
                pilots[k][t]
            } else {
                rng.complex_normal()
            }
        });
        Self { x, pilot_len: t_p }
    }

    pub fn block_len(&self) -> usize {
        self.x.ncols()
    }

    /// Transmit power of user k at symbol t.
    pub fn power(&self, powers: &PowerAllocation, k: usize, t: usize) -> f64 {
        if t < self.pilot_len {
            powers.pilot[k]
        } else {
            powers.data[k]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    TargetAbsent,
    TargetPresent,
}

/// How the estimation error enters the residual across the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualModel {
    /// `e_k` is drawn once per block, as the channel is.
    BlockFading,
    /// Each symbol sees an independent error draw `CN(0, R_err,k)`, which makes
    /// the residual samples independent given the estimates.
    #[default]
    Independent,
}

/// Sensing residual `y_t^sen = u_sᴴ(Ĝ + Φ)Δ x_t + u_sᴴ n_t` for every symbol.
#[allow(clippy::too_many_arguments)]
pub fn sensing_residual(
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    powers: &PowerAllocation,
    symbols: &SymbolBlock,
    u_s: &ComplexVector,
    hypothesis: Hypothesis,
    model: ResidualModel,
    noise: f64,
    rng: &mut SeededRng,
) -> Vec<C64> {
    let k_users = real.users();
    let target = match hypothesis {
        Hypothesis::TargetPresent => 1.0,
        Hypothesis::TargetAbsent => 0.0,
    };
    let b: Vec<C64> = real.g_hat.iter().map(|g| u_s.dotc(g) * target).collect();
    let fixed_err: Vec<C64> = (0..k_users).map(|k| u_s.dotc(&real.error(k))).collect();
    let err_std: Vec<f64> = dc.r_err.iter().map(|r| r.quad_form(u_s).max(0.0).sqrt()).collect();
    let noise_std = (noise * u_s.norm_squared()).sqrt();
    (0..symbols.block_len())
        .map(|t| {
            let mut y = C64::new(0.0, 0.0);
            for k in 0..k_users {
                let amp = symbols.power(powers, k, t).sqrt();
                let c = match model {
                    ResidualModel::BlockFading => fixed_err[k],
                    ResidualModel::Independent => rng.complex_normal() * err_std[k],
                };
                y += (b[k] + c) * symbols.x[(k, t)] * amp;
            }
            y + rng.complex_normal() * noise_std
        })
        .collect()
}

//! Communication and sensing performance measures.

use std::f64::consts::LN_2;

use crate::estimation::{ChannelRealization, DerivedCovariances};
use crate::numerics::{q_function, q_inverse, trace_product, ComplexVector, HermitianMatrix, NumericsError, C64};
use crate::power_alloc::PowerAllocation;
use crate::scenario::{ChannelStatistics, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    ErgodicLowerBound,
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user: Vec<f64>,
    pub sum: f64,
    pub kind: RateKind,
}

impl RateReport {
    fn from_sinrs(sinrs: &[f64], cfg: &SystemConfig, kind: RateKind) -> Self {
        let per_user: Vec<f64> = sinrs.iter().map(|&g| rate_from_sinr(g, cfg)).collect();
        let sum = per_user.iter().sum();
        Self { per_user, sum, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingReport {
    pub sinr: f64,
    pub rho: f64,
    pub p_detect: f64,
}

impl SensingReport {
    pub fn new(sinr: f64, rho: f64, p_fa: f64) -> Self {
        Self {
            sinr,
            rho,
            p_detect: detection_probability(rho, p_fa),
        }
    }
}

/// `(T_d/T)·log2(1 + γ)`.
pub fn rate_from_sinr(sinr: f64, cfg: &SystemConfig) -> f64 {
    cfg.data_len() as f64 / cfg.block_len as f64 * sinr.max(0.0).ln_1p() / LN_2
}

/// Closed-form ergodic SINR of user k with the statistical MRC combiner.
pub fn uatf_sinr(
    k: usize,
    p: &PowerAllocation,
    dc: &DerivedCovariances,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
) -> f64 {
    let tr = dc.r_est[k].trace();
    if tr <= 0.0 {
        return 0.0;
    }
    let interference: f64 = (0..stats.users())
        .map(|i| p.data[i] * trace_product(&stats.r[i], &dc.r_est[k]).expect("matching dimensions"))
        .sum();
    p.data[k] * tr / (interference / tr + cfg.noise)
}

pub fn uatf_sum_rate(
    p: &PowerAllocation,
    dc: &DerivedCovariances,
    stats: &ChannelStatistics,
    cfg: &SystemConfig,
) -> RateReport {
    let sinrs: Vec<f64> = (0..stats.users()).map(|k| uatf_sinr(k, p, dc, stats, cfg)).collect();
    RateReport::from_sinrs(&sinrs, cfg, RateKind::ErgodicLowerBound)
}

/// `(Ω1, Ω2)`: energy-weighted sums of `R_ĝ,k` and `R_err,k`.
pub fn sensing_matrices(
    p: &PowerAllocation,
    dc: &DerivedCovariances,
    cfg: &SystemConfig,
) -> (HermitianMatrix, HermitianMatrix) {
    let n = dc.r_est[0].dim();
    let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
    let mut o1 = HermitianMatrix::zeros(n);
    let mut o2 = HermitianMatrix::zeros(n);
    for k in 0..dc.users() {
        let e = t_p * p.pilot[k] + t_d * p.data[k];
        o1 = &o1 + &dc.r_g_hat[k].scaled(e);
        o2 = &o2 + &dc.r_err[k].scaled(e);
    }
    (o1, o2)
}

/// Instantaneous counterpart of Ω1 built from the estimated echo channels.
pub fn instantaneous_sensing_matrix(p: &PowerAllocation, real: &ChannelRealization, cfg: &SystemConfig) -> HermitianMatrix {
    let n = real.antennas();
    let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
    let mut o1 = HermitianMatrix::zeros(n);
    for k in 0..real.users() {
        let e = t_p * p.pilot[k] + t_d * p.data[k];
        o1 = &o1 + &HermitianMatrix::outer(&real.g_hat[k]).scaled(e);
    }
    o1
}

fn quotient(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn ergodic_sensing_sinr(p: &PowerAllocation, dc: &DerivedCovariances, u_s: &ComplexVector, cfg: &SystemConfig) -> f64 {
    let (o1, o2) = sensing_matrices(p, dc, cfg);
    quotient(
        o1.quad_form(u_s),
        o2.quad_form(u_s) + cfg.block_len as f64 * cfg.noise * u_s.norm_squared(),
    )
}

pub fn instantaneous_sensing_sinr(
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    u_s: &ComplexVector,
    cfg: &SystemConfig,
) -> f64 {
    let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
    let mut num = 0.0;
    let mut den = cfg.block_len as f64 * cfg.noise * u_s.norm_squared();
    for k in 0..real.users() {
        let e = t_p * p.pilot[k] + t_d * p.data[k];
        num += e * u_s.dotc(&real.g_hat[k]).norm_sqr();
        den += e * dc.r_err[k].quad_form(u_s);
    }
    quotient(num, den)
}

/// Neyman–Pearson detection probability for deflection `rho`.
pub fn detection_probability(rho: f64, p_fa: f64) -> f64 {
    let q = q_inverse(p_fa).unwrap_or(f64::NAN);
    q_function(q - (2.0 * rho.max(0.0)).sqrt())
}

/// Sensing SINR that guarantees `P_D,th` when the deflection is `T·γ_s`.
pub fn sinr_threshold_from_pd(pd_threshold: f64, p_fa: f64, block_len: usize) -> Result<f64, NumericsError> {
    if pd_threshold <= p_fa {
        return Err(NumericsError::OutOfDomain(pd_threshold));
    }
    let gap = q_inverse(p_fa)? - q_inverse(pd_threshold)?;
    Ok(0.5 * gap * gap / block_len as f64)
}

/// Interference-plus-noise seen by combiner `u` for user k, excluding the
/// user's own estimated signal.
pub fn interference_plus_noise(
    k: usize,
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    u: &ComplexVector,
    cfg: &SystemConfig,
) -> f64 {
    let mut y = cfg.noise * u.norm_squared();
    for m in 0..real.users() {
        if m != k {
            y += p.data[m] * u.dotc(&real.z_hat[m]).norm_sqr();
        }
        y += p.data[m] * dc.r_err[m].quad_form(u);
    }
    y
}

pub fn instantaneous_sinr(
    k: usize,
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    u_k: &ComplexVector,
    cfg: &SystemConfig,
) -> f64 {
    let s = p.data[k] * u_k.dotc(&real.z_hat[k]).norm_sqr();
    quotient(s, interference_plus_noise(k, p, real, dc, u_k, cfg))
}

pub fn instantaneous_sum_rate(
    p: &PowerAllocation,
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    combiners: &[ComplexVector],
    cfg: &SystemConfig,
) -> RateReport {
    let sinrs: Vec<f64> = combiners
        .iter()
        .enumerate()
        .map(|(k, u)| instantaneous_sinr(k, p, real, dc, u, cfg))
        .collect();
    RateReport::from_sinrs(&sinrs, cfg, RateKind::Instantaneous)
}

/// Per-symbol mean and variance of the sensing residual under the target
/// hypothesis, conditioned on the estimates and the transmitted symbols.
pub fn residual_moments(
    real: &ChannelRealization,
    dc: &DerivedCovariances,
    p: &PowerAllocation,
    x: &nalgebra::DMatrix<C64>,
    pilot_len: usize,
    u_s: &ComplexVector,
    noise: f64,
) -> (Vec<C64>, Vec<f64>) {
    let k_users = real.users();
    let b: Vec<C64> = real.g_hat.iter().map(|g| u_s.dotc(g)).collect();
    let e: Vec<f64> = dc.r_err.iter().map(|r| r.quad_form(u_s)).collect();
    let w = noise * u_s.norm_squared();
    let mut mu = Vec::with_capacity(x.ncols());
    let mut var = Vec::with_capacity(x.ncols());
    for t in 0..x.ncols() {
        let pilot = t < pilot_len;
        let mut m = C64::new(0.0, 0.0);
        let mut v = w;
        for k in 0..k_users {
            let pw = if pilot { p.pilot[k] } else { p.data[k] };
            m += b[k] * x[(k, t)] * pw.sqrt();
            v += pw * e[k] * x[(k, t)].norm_sqr();
        }
        mu.push(m);
        var.push(v);
    }
    (mu, var)
}

/// Matched-filter statistic `ψ = Re{yᴴ R_eff⁻¹ μ}` and deflection `ρ = μᴴ R_eff⁻¹ μ`.
pub fn detection_statistic(y: &[C64], mu: &[C64], var: &[f64]) -> (f64, f64) {
    let mut psi = 0.0;
    let mut rho = 0.0;
    for ((yt, mt), vt) in y.iter().zip(mu).zip(var) {
        psi += (yt.conj() * mt).re / vt;
        rho += mt.norm_sqr() / vt;
    }
    (psi, rho)
}

/// Threshold `κ` giving false-alarm probability `p_fa` at deflection `rho`.
pub fn detection_threshold(rho: f64, p_fa: f64) -> f64 {
    (rho / 2.0).sqrt() * q_inverse(p_fa).unwrap_or(f64::NAN)
}

/// Deflection `tr(R_μ R_eff⁻¹)` averaged over the channel estimates and data.
pub fn average_deflection(p: &PowerAllocation, dc: &DerivedCovariances, u_s: &ComplexVector, cfg: &SystemConfig) -> f64 {
    let (t_p, t_d) = (cfg.pilot_len as f64, cfg.data_len() as f64);
    let w = cfg.noise * u_s.norm_squared();
    let mut mu_p = 0.0;
    let mut mu_d = 0.0;
    let mut v_p = w;
    let mut v_d = w;
    for k in 0..dc.users() {
        let g = dc.r_g_hat[k].quad_form(u_s);
        let e = dc.r_err[k].quad_form(u_s);
        mu_p += p.pilot[k] * g;
        mu_d += p.data[k] * g;
        v_p += p.pilot[k] * e;
        v_d += p.data[k] * e;
    }
    t_p * quotient(mu_p, v_p) + t_d * quotient(mu_d, v_d)
}

pub fn average_detection_probability(
    p: &PowerAllocation,
    dc: &DerivedCovariances,
    u_s: &ComplexVector,
    cfg: &SystemConfig,
) -> SensingReport {
    SensingReport::new(ergodic_sensing_sinr(p, dc, u_s, cfg), average_deflection(p, dc, u_s, cfg), cfg.p_fa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::derived_covariances;
    use crate::numerics::{CMatrix, SeededRng};

    fn scalar_setup() -> (SystemConfig, ChannelStatistics) {
        let mut cfg = SystemConfig::defaults(1);
        cfg.antennas = 1;
        cfg.pilot_len = 1;
        cfg.noise = 1.0;
        let stats = ChannelStatistics::new(
            vec![HermitianMatrix::from_real_diagonal(&[1.0])],
            vec![HermitianMatrix::from_real_diagonal(&[0.0])],
        );
        (cfg, stats)
    }

    #[test]
    fn scalar_uatf() {
        let (cfg, stats) = scalar_setup();
        let p = PowerAllocation::uniform(1, 1.0, 1.0);
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        assert!((uatf_sinr(0, &p, &dc, &stats, &cfg) - 0.25).abs() < 1e-15);
        let p0 = PowerAllocation::uniform(1, 1.0, 0.0);
        assert_eq!(uatf_sinr(0, &p0, &dc, &stats, &cfg), 0.0);
        let r = uatf_sum_rate(&p0, &dc, &stats, &cfg);
        assert_eq!(r.sum, 0.0);
    }

    #[test]
    fn rate_prefactor() {
        let mut cfg = SystemConfig::defaults(4);
        assert!((rate_from_sinr(1.0, &cfg) - 0.95).abs() < 1e-15);
        cfg.pilot_len = 99;
        assert!((rate_from_sinr(1.0, &cfg) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn detection_probability_values() {
        assert!((detection_probability(0.0, 1e-5) - 1e-5).abs() < 1e-15);
        assert!(detection_probability(200.0, 1e-5) > 1.0 - 1e-12);
        assert!((detection_probability(21.72, 1e-5) - 0.99).abs() < 1e-3);
        let th = sinr_threshold_from_pd(0.99, 1e-5, 100).unwrap();
        assert!((th - 0.2172).abs() < 1e-4);
        assert!((detection_probability(100.0 * th, 1e-5) - 0.99).abs() < 1e-10);
        assert!(sinr_threshold_from_pd(1e-5 + 1e-12, 1e-5, 100).unwrap() < 1e-9);
        assert!(sinr_threshold_from_pd(1e-6, 1e-5, 100).is_err());
    }

    #[test]
    fn ergodic_sensing_diagonal_case() {
        // Ω1 = diag(2, 0), Ω2 = 0, Tσ² = 1 realised through a single user with
        // unit total energy.
        let mut cfg = SystemConfig::defaults(1);
        cfg.antennas = 2;
        cfg.block_len = 2;
        cfg.pilot_len = 1;
        cfg.noise = 0.5;
        let zero = HermitianMatrix::zeros(2);
        let dc = DerivedCovariances {
            r_est: vec![zero.clone()],
            r_err: vec![zero.clone()],
            r_h_hat: vec![zero.clone()],
            r_g_hat: vec![HermitianMatrix::from_real_diagonal(&[1.0, 0.0])],
            r_eps_h: vec![zero.clone()],
            r_eps_g: vec![zero],
        };
        let p = PowerAllocation::uniform(1, 1.0, 1.0);
        let e1 = ComplexVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!((ergodic_sensing_sinr(&p, &dc, &e1, &cfg) - 2.0).abs() < 1e-15);
        let scaled = &e1 * C64::new(-0.3, 2.0);
        assert!((ergodic_sensing_sinr(&p, &dc, &scaled, &cfg) - 2.0).abs() < 1e-14);
        let p0 = PowerAllocation::uniform(1, 0.0, 0.0);
        assert_eq!(ergodic_sensing_sinr(&p0, &dc, &e1, &cfg), 0.0);
    }

    fn random_instance(seed: u64) -> (SystemConfig, ChannelRealization, DerivedCovariances, PowerAllocation) {
        let mut rng = SeededRng::new(seed);
        let mut cfg = SystemConfig::defaults(3);
        cfg.antennas = 4;
        cfg.noise = 0.7;
        let mut r_h = Vec::new();
        let mut r_g = Vec::new();
        for _ in 0..3 {
            let x = CMatrix::from_fn(4, 4, |_, _| rng.complex_normal());
            r_h.push(HermitianMatrix::symmetrize(&x * x.adjoint()));
            r_g.push(HermitianMatrix::outer(&rng.complex_normal_vector(4)));
        }
        let stats = ChannelStatistics::new(r_h, r_g);
        let p = PowerAllocation {
            pilot: vec![0.3, 1.0, 2.0],
            data: vec![1.2, 0.4, 0.8],
        };
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let h: Vec<_> = (0..3).map(|_| rng.complex_normal_vector(4)).collect();
        let g: Vec<_> = (0..3).map(|_| rng.complex_normal_vector(4)).collect();
        let hh: Vec<_> = (0..3).map(|_| rng.complex_normal_vector(4)).collect();
        let gg: Vec<_> = (0..3).map(|_| rng.complex_normal_vector(4)).collect();
        (cfg, ChannelRealization::from_estimates(h, g, hh, gg), dc, p)
    }

    #[test]
    fn instantaneous_sinr_cases() {
        let mut cfg = SystemConfig::defaults(1);
        cfg.antennas = 3;
        cfg.noise = 1.0;
        let mut rng = SeededRng::new(11);
        let z = rng.complex_normal_vector(3);
        let real = ChannelRealization::from_estimates(vec![z.clone()], vec![ComplexVector::zeros(3)], vec![z.clone()], vec![
            ComplexVector::zeros(3),
        ]);
        let zero = HermitianMatrix::zeros(3);
        let dc = DerivedCovariances {
            r_est: vec![zero.clone()],
            r_err: vec![zero.clone()],
            r_h_hat: vec![zero.clone()],
            r_g_hat: vec![zero.clone()],
            r_eps_h: vec![zero.clone()],
            r_eps_g: vec![zero],
        };
        let p = PowerAllocation::uniform(1, 1.0, 2.0);
        let u = &z / C64::new(z.norm(), 0.0);
        let g = instantaneous_sinr(0, &p, &real, &dc, &u, &cfg);
        assert!((g - 2.0 * z.norm_squared()).abs() < 1e-12 * g);

        let (cfg, real, dc, p) = random_instance(12);
        let u = rng.complex_normal_vector(4);
        for k in 0..3 {
            let g = instantaneous_sinr(k, &p, &real, &dc, &u, &cfg);
            let g2 = instantaneous_sinr(k, &p, &real, &dc, &(&u * C64::new(0.0, -3.5)), &cfg);
            assert!((g - g2).abs() < 1e-12 * g);
            // term-by-term recomputation
            let num = p.data[k] * u.dotc(&real.z_hat[k]).norm_sqr();
            let mut den = u.norm_squared() * cfg.noise;
            for m in 0..3 {
                if m != k {
                    den += p.data[m] * u.dotc(&real.z_hat[m]).norm_sqr();
                }
                den += p.data[m] * (u.adjoint() * dc.r_err[m].matrix() * &u)[(0, 0)].re;
            }
            assert!((g - num / den).abs() < 1e-12 * g);
        }
    }

    #[test]
    fn instantaneous_sensing_cases() {
        let (cfg, real, dc, p) = random_instance(13);
        let mut rng = SeededRng::new(14);
        let u = rng.complex_normal_vector(4);
        let g = instantaneous_sensing_sinr(&p, &real, &dc, &u, &cfg);
        let g2 = instantaneous_sensing_sinr(&p, &real, &dc, &(&u * C64::new(1.5, 1.5)), &cfg);
        assert!((g - g2).abs() < 1e-12 * g);
        let p0 = PowerAllocation::uniform(3, 0.0, 0.0);
        assert_eq!(instantaneous_sensing_sinr(&p0, &real, &dc, &u, &cfg), 0.0);
        let o1 = instantaneous_sensing_matrix(&p, &real, &cfg);
        let (_, o2) = sensing_matrices(&p, &dc, &cfg);
        let direct = o1.quad_form(&u) / (o2.quad_form(&u) + 100.0 * cfg.noise * u.norm_squared());
        assert!((g - direct).abs() < 1e-12 * g);
    }

    #[test]
    fn detection_statistic_and_threshold() {
        let mu = [C64::new(1.0, 0.0), C64::new(0.0, 2.0)];
        let var = [1.0, 4.0];
        let (psi, rho) = detection_statistic(&mu, &mu, &var);
        assert!((psi - 2.0).abs() < 1e-15 && (rho - 2.0).abs() < 1e-15);
        let kappa = detection_threshold(rho, 1e-5);
        // P(ψ > κ | H0) with ψ ~ N(0, ρ/2)
        let pfa = q_function(kappa / (rho / 2.0).sqrt());
        assert!((pfa - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn null_statistic_has_calibrated_variance() {
        use crate::estimation::{sensing_residual, Hypothesis, RealizationSampler, ResidualModel, SymbolBlock};
        use crate::scenario::{build_statistics, dft_pilots, GeometrySpec, PathLossParams};
        let mut cfg = SystemConfig::defaults(3);
        cfg.pilot_len = 4;
        let mut rng = SeededRng::new(21);
        let geom = GeometrySpec::default().realize(3, &mut rng);
        let stats = build_statistics(&geom, &PathLossParams::default(), &cfg).unwrap();
        let p = PowerAllocation::uniform(3, cfg.power, cfg.power);
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let pilots = dft_pilots(3, cfg.pilot_len).unwrap();
        let real = RealizationSampler::new(&p.pilot, &stats, &pilots, &cfg).unwrap().draw(&mut rng);
        let u_s = crate::beamforming::sensing_statistical(&p, &dc, &cfg).unwrap();
        let trials = 20_000;
        let mut second = 0.0;
        for _ in 0..trials {
            let symbols = SymbolBlock::draw(&pilots, cfg.block_len, &mut rng);
            let (mu, var) = residual_moments(&real, &dc, &p, &symbols.x, cfg.pilot_len, &u_s, cfg.noise);
            let y = sensing_residual(
                &real,
                &dc,
                &p,
                &symbols,
                &u_s,
                Hypothesis::TargetAbsent,
                ResidualModel::Independent,
                cfg.noise,
                &mut rng,
            );
            let (psi, rho) = detection_statistic(&y, &mu, &var);
            second += psi * psi / (rho / 2.0);
        }
        // ψ/√(ρ/2) is standard normal under H0; the sample second moment has sd √(2/n).
        let m = second / trials as f64;
        assert!((m - 1.0).abs() < 4.0 * (2.0 / trials as f64).sqrt(), "second moment {m}");
    }
}

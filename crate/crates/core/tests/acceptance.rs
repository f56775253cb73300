//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line and
//! then asserts, so a failing criterion shows its measured values.

use std::path::PathBuf;
use std::time::Instant;

use isac_core::beamforming::{
    mrc_instantaneous, optimize_combiners, sca_minorant, sensing_statistical, user_rate, zf_instantaneous,
};
use isac_core::cvx::{solve_unit_ball_qcqp, UnitBallQcqp};
use isac_core::estimation::{derived_covariances, ChannelRealization, RealizationSampler};
use isac_core::harness::{
    format_csv, load_config, run_detection_validation, run_power_convergence, run_rate_sweep, Config, Metric,
    ResultRow,
};
use isac_core::metrics::{ergodic_sensing_sinr, instantaneous_sum_rate, uatf_sinr};
use isac_core::numerics::{CMatrix, ComplexVector, HermitianMatrix, SeededRng, C64};
use isac_core::power_alloc::{
    data_power_sca, lagrangian_gradient, lagrangian_value, optimize_power, qos_violation,
    statistical_sensing_combiner, sum_rate_bound, AoOptions, DataPowerModel, PddState, PowerAllocation,
    PowerContext, PowerError, FEASIBILITY_TOL,
};
use isac_core::scenario::{
    build_statistics, dbm_to_watts, dft_pilots, ChannelStatistics, GeometrySpec, PathLossParams, SystemConfig,
};

fn verdict(n: u32, what: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} {}: {what} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {what} ({detail})");
}

fn config(name: &str) -> Config {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    load_config(&path).expect("shipped config parses")
}

fn scenario(users: usize, antennas: usize, power_dbm: f64, seed: u64) -> (SystemConfig, ChannelStatistics) {
    let mut cfg = SystemConfig::defaults(users);
    cfg.antennas = antennas;
    cfg.power = dbm_to_watts(power_dbm);
    let geom = GeometrySpec::default().realize(users, &mut SeededRng::new(seed).child(0));
    let stats = build_statistics(&geom, &PathLossParams::default(), &cfg).unwrap();
    (cfg, stats)
}

fn random_psd(n: usize, rank: usize, scale: f64, rng: &mut SeededRng) -> HermitianMatrix {
    let b = CMatrix::from_fn(n, rank, |_, _| rng.complex_normal());
    HermitianMatrix::symmetrize(&b * b.adjoint() * C64::new(scale / rank as f64, 0.0))
}

fn random_unit(n: usize, rng: &mut SeededRng) -> ComplexVector {
    let v = rng.complex_normal_vector(n);
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Uniform point in the complex unit ball of dimension n.
fn random_in_ball(n: usize, rng: &mut SeededRng) -> ComplexVector {
    let r = rng.uniform().powf(1.0 / (2 * n) as f64);
    random_unit(n, rng) * C64::new(r, 0.0)
}

#[test]
fn criterion_01_gradient_exactness() {
    let start = Instant::now();
    let (users, antennas) = (4, 6);
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0_f64;
    let mut points = 0;
    for s in 0..20u64 {
        let (cfg, stats) = scenario(users, antennas, 10.0, s);
        for _ in 0..5 {
            // Random point inside the per-user energy budget.
            let split: Vec<f64> = (0..users).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
            let t = cfg.block_len as f64;
            let p = PowerAllocation {
                pilot: split.iter().map(|a| a * cfg.power * t / cfg.pilot_len as f64).collect(),
                data: split.iter().map(|a| (1.0 - a) * cfg.power * t / cfg.data_len() as f64).collect(),
            };
            assert!(p.within_budget(&cfg));
            let u_s = statistical_sensing_combiner(&p, &stats, &cfg).unwrap();
            let ctx = PowerContext::new(&cfg, &stats, u_s).unwrap();
            let mut state = PddState::new(&cfg);
            state.omega.iter_mut().for_each(|w| *w = 2.0 * rng.uniform());
            state.tau.iter_mut().for_each(|t| *t = 0.5 * rng.uniform());
            state.xi = 0.1 + rng.uniform();
            let g = lagrangian_gradient(&ctx, &p.pilot, &p.data, &state).unwrap();
            let fd: Vec<f64> = (0..users)
                .map(|l| {
                    let h = 1e-5 * p.pilot[l];
                    let mut up = p.pilot.clone();
                    let mut dn = p.pilot.clone();
                    up[l] += h;
                    dn[l] -= h;
                    (lagrangian_value(&ctx, &up, &p.data, &state).unwrap()
                        - lagrangian_value(&ctx, &dn, &p.data, &state).unwrap())
                        / (2.0 * h)
                })
                .collect();
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
            points += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "analytic gradient matches central differences",
        points >= 100 && worst <= 1e-5 && secs < 10.0,
        &format!("{points} points, worst relative error {worst:.2e}, {secs:.1} s"),
    );
}

#[test]
fn criterion_02_closed_form_rate_bound() {
    let start = Instant::now();
    let mut rng = SeededRng::new(202);
    let draws = 1_000_000;
    let mut worst = 0.0_f64;
    for s in 0..10 {
        let users = 1 + s % 3;
        let antennas = 1 + (s * 7 + 3) % 4;
        let mut cfg = SystemConfig::defaults(users);
        cfg.antennas = antennas;
        cfg.noise = 1.0;
        let r_h = (0..users).map(|_| random_psd(antennas, antennas, 1.0 + rng.uniform(), &mut rng)).collect();
        let r_g = (0..users).map(|_| random_psd(antennas, 1, 0.5 * rng.uniform(), &mut rng)).collect();
        let stats = ChannelStatistics::new(r_h, r_g);
        let p = PowerAllocation {
            pilot: (0..users).map(|_| 0.2 + rng.uniform()).collect(),
            data: (0..users).map(|_| 0.2 + rng.uniform()).collect(),
        };
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let pilots = dft_pilots(users, cfg.pilot_len).unwrap();
        let sampler = RealizationSampler::new(&p.pilot, &stats, &pilots, &cfg).unwrap();
        // Accumulators for E[uᴴz_k], E|uᴴz_i|² and E‖u‖² with u = ẑ_k.
        let mut mean = vec![C64::new(0.0, 0.0); users];
        let mut second = vec![vec![0.0; users]; users];
        let mut norm = vec![0.0; users];
        let mut draw_rng = rng.child(s as u64);
        for _ in 0..draws {
            let real: ChannelRealization = sampler.draw(&mut draw_rng);
            for k in 0..users {
                let u = &real.z_hat[k];
                for i in 0..users {
                    let z = &real.h[i] + &real.g[i];
                    let ip = u.dotc(&z);
                    second[k][i] += ip.norm_sqr();
                    if i == k {
                        mean[k] += ip;
                    }
                }
                norm[k] += u.norm_squared();
            }
        }
        let n = draws as f64;
        for k in 0..users {
            let m = mean[k] / n;
            let signal = p.data[k] * m.norm_sqr();
            let total: f64 = (0..users).map(|i| p.data[i] * second[k][i] / n).sum();
            let mc = signal / (total - signal + cfg.noise * norm[k] / n);
            let closed = uatf_sinr(k, &p, &dc, &stats, &cfg);
            worst = worst.max((closed - mc).abs() / mc);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "closed-form SINR bound matches Monte Carlo",
        worst <= 0.02 && secs < 120.0,
        &format!("10 scenarios x 1e6 draws, worst relative gap {worst:.2e}, {secs:.1} s"),
    );
}

fn value_of<'a>(rows: &'a [ResultRow], x: f64, baseline: &str, metric: Metric) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.sweep_value == x && r.baseline == baseline && r.metric == metric)
        .expect("row present")
}

#[test]
fn criterion_03_detection_probability() {
    let start = Instant::now();
    let cfg = config("fig9_detection.toml");
    assert_eq!(cfg.experiment.trials, 100_000);
    let rows = run_detection_validation(&cfg).unwrap();
    let p_fa = cfg.scenario.system.p_fa;
    let mut worst_gap = 0.0_f64;
    let mut checked = 0;
    let mut fa_ok = true;
    let mut details = Vec::new();
    for &x in &cfg.experiment.values {
        let theory = value_of(&rows, x, "FPA", Metric::PDetectTheory).value;
        let emp = value_of(&rows, x, "FPA", Metric::PDetectEmpirical);
        let fa = value_of(&rows, x, "FPA", Metric::PFalseAlarmEmpirical);
        let n = (cfg.experiment.trials - fa.n_dropped) as f64;
        let band = 3.0 * (p_fa * (1.0 - p_fa) / n).sqrt();
        fa_ok &= (fa.value - p_fa).abs() <= band;
        if (0.05..=0.99).contains(&emp.value) {
            worst_gap = worst_gap.max((theory - emp.value).abs());
            checked += 1;
        }
        details.push(format!("{x}: {theory:.3}/{:.3}/{:.1e}", emp.value, fa.value));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "theoretical detection probability matches the simulated detector",
        checked > 0 && worst_gap <= 0.02 && fa_ok && secs < 600.0,
        &format!(
            "{checked} points in range, worst gap {worst_gap:.3}, false alarm within 3 sigma: {fa_ok}, {secs:.0} s; \
             P_tot theory/empirical/false-alarm: {}",
            details.join(", ")
        ),
    );
}

fn convergence_inputs(nb: usize) -> (SystemConfig, ChannelStatistics, Config) {
    let config = config("fig3_convergence.toml");
    let scn = config
        .scenario
        .with_sweep(isac_core::harness::SweepVariable::NB, nb as f64)
        .unwrap();
    let cfg = scn.system_config().unwrap();
    let g = &scn.geometry;
    let geom = g.realize(cfg.users, &mut SeededRng::new(config.experiment.seed).child(0));
    let stats = build_statistics(&geom, &scn.pathloss, &cfg).unwrap();
    (cfg, stats, config)
}

#[test]
fn criterion_04_ao_convergence() {
    let mut pass = true;
    let mut details = Vec::new();
    for nb in [4, 6, 8] {
        let (cfg, stats, config) = convergence_inputs(nb);
        let opts = AoOptions {
            max_outer: config.experiment.max_outer,
        };
        match optimize_power(&cfg, &stats, &PowerAllocation::initial(&cfg), &opts) {
            Ok(out) => {
                let objs: Vec<f64> = out.trace.iter().map(|r| r.objective).collect();
                let monotone = objs.windows(2).all(|w| w[1] >= w[0] - 1e-6);
                let last_step = objs.windows(2).last().map_or(0.0, |w| (w[1] - w[0]).abs());
                let ok = monotone && out.converged && objs.len() <= 200 && last_step <= cfg.tolerance;
                pass &= ok;
                details.push(format!(
                    "N_b={nb}: {} iterations, monotone {monotone}, converged {}",
                    objs.len(),
                    out.converged
                ));
            }
            Err(PowerError::Infeasible {
                max_violation, trace, ..
            }) => {
                pass = false;
                let monotone = trace.windows(2).all(|w| w[1] >= w[0] - 1e-6);
                details.push(format!(
                    "N_b={nb}: QoS infeasible, violation {max_violation:.3}, {} iterations, monotone {monotone}",
                    trace.len()
                ));
            }
            Err(e) => panic!("N_b={nb}: {e}"),
        }
    }
    verdict(4, "AO trace non-decreasing and converged", pass, &details.join("; "));
}

#[test]
fn criterion_05_sca_convergence() {
    let mut pass = true;
    let mut details = Vec::new();
    for nb in [4, 6, 8] {
        let (cfg, stats, config) = convergence_inputs(nb);
        let opts = AoOptions {
            max_outer: config.experiment.max_outer,
        };
        let p = match optimize_power(&cfg, &stats, &PowerAllocation::initial(&cfg), &opts) {
            Ok(out) => out.allocation,
            Err(PowerError::Infeasible { best, .. }) => best,
            Err(e) => panic!("{e}"),
        };
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let pilots = dft_pilots(cfg.users, cfg.pilot_len).unwrap();
        let sampler = RealizationSampler::new(&p.pilot, &stats, &pilots, &cfg).unwrap();
        let real = sampler.draw(&mut SeededRng::new(config.experiment.seed).child(1));
        let out = optimize_combiners(&p, &real, &dc, &cfg).unwrap();
        let monotone = out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-6);
        let iters = out.trace.len() - 1;
        let last_step = out.trace.windows(2).last().map_or(0.0, |w| (w[1] - w[0]).abs());
        pass &= monotone && iters <= 100 && last_step <= cfg.tolerance;
        details.push(format!("N_b={nb}: {iters} iterations, monotone {monotone}"));
    }
    verdict(5, "SCA trace non-decreasing and converged", pass, &details.join("; "));
}

/// Optimized powers, or equal powers when the QoS constraints cannot be met.
fn powers_for(cfg: &SystemConfig, stats: &ChannelStatistics) -> (PowerAllocation, bool) {
    let init = PowerAllocation::initial(cfg);
    match optimize_power(cfg, stats, &init, &AoOptions::default()) {
        Ok(out) => (out.allocation, true),
        Err(PowerError::Infeasible { .. }) => (init, false),
        Err(e) => panic!("{e}"),
    }
}

struct CombinerRates {
    orb: f64,
    zf: Option<f64>,
    mrc: f64,
}

fn combiner_rates(cfg: &SystemConfig, stats: &ChannelStatistics, p: &PowerAllocation, seed: u64) -> CombinerRates {
    let dc = derived_covariances(&p.pilot, stats, cfg).unwrap();
    let pilots = dft_pilots(cfg.users, cfg.pilot_len).unwrap();
    let sampler = RealizationSampler::new(&p.pilot, stats, &pilots, cfg).unwrap();
    let real = sampler.draw(&mut SeededRng::new(seed).child(1));
    let rate = |u: &[ComplexVector]| instantaneous_sum_rate(p, &real, &dc, u, cfg).sum;
    let orb = optimize_combiners(p, &real, &dc, cfg).unwrap();
    CombinerRates {
        orb: rate(&orb.beamformers.comm),
        zf: zf_instantaneous(&real).ok().map(|u| rate(&u)),
        mrc: rate(&mrc_instantaneous(&real).unwrap()),
    }
}

#[test]
fn criterion_06_baseline_ordering() {
    let scenarios = 100u64;
    let mut wins = 0;
    let mut optimized = 0;
    for s in 0..scenarios {
        let (cfg, stats) = scenario(4, 8, 10.0, 6000 + s);
        let (p, feasible) = powers_for(&cfg, &stats);
        optimized += usize::from(feasible);
        let r = combiner_rates(&cfg, &stats, &p, 6000 + s);
        let zf = r.zf.unwrap_or(f64::NEG_INFINITY);
        if r.orb >= zf - 1e-6 && r.orb >= r.mrc {
            wins += 1;
        }
    }
    let (mut orb_sum, mut zf_sum, mut n, mut optimized_full) = (0.0, 0.0, 0, 0);
    for s in 0..20u64 {
        let (cfg, stats) = scenario(8, 8, 10.0, 6600 + s);
        let (p, feasible) = powers_for(&cfg, &stats);
        optimized_full += usize::from(feasible);
        let r = combiner_rates(&cfg, &stats, &p, 6600 + s);
        orb_sum += r.orb;
        zf_sum += r.zf.unwrap_or(0.0);
        n += 1;
    }
    let (orb_mean, zf_mean) = (orb_sum / n as f64, zf_sum / n as f64);
    let share = wins as f64 / scenarios as f64;
    verdict(
        6,
        "ORB dominates ZF and MRC",
        share >= 0.9 && orb_mean > zf_mean,
        &format!(
            "K=4: ORB best in {wins}/{scenarios} ({optimized} with optimized powers); \
             K=N_b=8: mean ORB {orb_mean:.3} vs ZF {zf_mean:.3} ({optimized_full}/{n} with optimized powers)"
        ),
    );
}

#[test]
fn criterion_07_opa_dominates_fpa() {
    let mut feasible = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (nb, power_dbm) in [(8, 10.0), (8, 20.0), (10, 20.0)] {
        for s in 0..12u64 {
            let (cfg, stats) = scenario(4, nb, power_dbm, 7000 + s);
            let init = PowerAllocation::initial(&cfg);
            let u_s = statistical_sensing_combiner(&init, &stats, &cfg).unwrap();
            if qos_violation(&init, &stats, &cfg, &u_s).unwrap() > FEASIBILITY_TOL {
                continue;
            }
            feasible += 1;
            let fpa = sum_rate_bound(&init, &stats, &cfg).unwrap();
            let opa = match optimize_power(&cfg, &stats, &init, &AoOptions::default()) {
                Ok(out) => out.objective(),
                Err(_) => f64::NEG_INFINITY,
            };
            worst = worst.min(opa - fpa);
            if opa < fpa - 1e-9 {
                violations += 1;
            }
        }
    }
    verdict(
        7,
        "optimized powers never lose to equal powers",
        feasible > 0 && violations == 0,
        &format!("{feasible} FPA-feasible scenarios, {violations} violations, smallest gain {worst:.3e}"),
    );
}

#[test]
fn criterion_08_evd_optimality() {
    let mut rng = SeededRng::new(808);
    let mut violations = 0;
    for s in 0..20u64 {
        let users = 2 + (s as usize) % 3;
        let (cfg, stats) = scenario(users, 4 + (s as usize) % 5, 10.0, 8000 + s);
        let p = PowerAllocation {
            pilot: (0..users).map(|_| cfg.power * (0.1 + 1.5 * rng.uniform())).collect(),
            data: (0..users).map(|_| cfg.power * (0.1 + rng.uniform())).collect(),
        };
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let u = sensing_statistical(&p, &dc, &cfg).unwrap();
        let best = ergodic_sensing_sinr(&p, &dc, &u, &cfg);
        for _ in 0..10_000 {
            let v = random_unit(cfg.antennas, &mut rng);
            if ergodic_sensing_sinr(&p, &dc, &v, &cfg) > best * (1.0 + 1e-9) {
                violations += 1;
            }
        }
    }
    verdict(
        8,
        "EVD sensing combiner beats random unit vectors",
        violations == 0,
        &format!("20 scenarios x 1e4 vectors, {violations} violations"),
    );
}

fn moving_average(xs: &[f64]) -> Vec<f64> {
    xs.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect()
}

#[test]
fn criterion_09_pilot_tradeoff() {
    let config = config("fig8_pilot_length.toml");
    let rows = run_rate_sweep(&config).unwrap();
    let series = |metric| -> Vec<f64> {
        config
            .experiment
            .values
            .iter()
            .map(|&x| value_of(&rows, x, "ORB", metric).value)
            .collect()
    };
    let sinr = moving_average(&series(Metric::SensingSinr));
    let rate = moving_average(&series(Metric::AvgSumRate));
    let sinr_ok = sinr.windows(2).all(|w| w[1] >= w[0]);
    let rate_ok = rate.windows(2).all(|w| w[1] <= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let dropped: Vec<String> = config
        .experiment
        .values
        .iter()
        .map(|&x| value_of(&rows, x, "ORB", Metric::AvgSumRate).n_dropped.to_string())
        .collect();
    verdict(
        9,
        "sensing SINR rises and sum rate falls with pilot length",
        sinr_ok && rate_ok,
        &format!(
            "SINR MA3 [{}]; rate MA3 [{}]; dropped of {} per T_p [{}]",
            fmt(&sinr),
            fmt(&rate),
            config.experiment.trials,
            dropped.join(" ")
        ),
    );
}

/// Grid search of the data-power subproblem with an independent constraint check.
fn grid_oracle(ctx: &PowerContext<'_>, p_p: &[f64], model: &DataPowerModel) -> f64 {
    let cfg = ctx.cfg;
    let users = cfg.users;
    let dc = derived_covariances(p_p, ctx.stats, cfg).unwrap();
    let hi = ctx.data_upper(p_p);
    let gamma_s = cfg.sensing_threshold().unwrap().unwrap_or(0.0);
    let feasible = |p_d: &[f64]| {
        let p = PowerAllocation {
            pilot: p_p.to_vec(),
            data: p_d.to_vec(),
        };
        let rates_ok = (0..users).all(|k| {
            let r = cfg.data_len() as f64 / cfg.block_len as f64 * (1.0 + uatf_sinr(k, &p, &dc, ctx.stats, cfg)).log2();
            r >= cfg.rate_threshold[k]
        });
        rates_ok && ergodic_sensing_sinr(&p, &dc, &ctx.u_s, cfg) >= gamma_s
    };
    let search = |lo: &[f64], step: &[f64], n: usize| -> (f64, Vec<f64>) {
        let mut best = (f64::NEG_INFINITY, vec![0.0; users]);
        let total = n.pow(users as u32);
        let mut p = vec![0.0; users];
        for idx in 0..total {
            let mut rem = idx;
            for k in 0..users {
                p[k] = (lo[k] + step[k] * (rem % n) as f64).clamp(0.0, hi[k]);
                rem /= n;
            }
            if feasible(&p) {
                let v = model.sum_rate(&p);
                if v > best.0 {
                    best = (v, p.clone());
                }
            }
        }
        best
    };
    let n = if users == 2 { 201 } else { 41 };
    let step: Vec<f64> = hi.iter().map(|h| h / (n - 1) as f64).collect();
    let mut best = search(&vec![0.0; users], &step, n);
    let mut step = step;
    for _ in 0..6 {
        step.iter_mut().for_each(|s| *s *= 4.0 / (n - 1) as f64);
        let lo: Vec<f64> = best.1.iter().zip(&step).map(|(b, s)| b - s * (n / 2) as f64).collect();
        let refined = search(&lo, &step, n);
        if refined.0 > best.0 {
            best = refined;
        }
    }
    best.0
}

fn p5_solution(ctx: &PowerContext<'_>, p_p: &[f64], start: &[f64], model: &DataPowerModel) -> f64 {
    let mut p = start.to_vec();
    for _ in 0..200 {
        let next = data_power_sca(ctx, p_p, &p).unwrap();
        let done = (model.sum_rate(&next) - model.sum_rate(&p)).abs() <= 1e-12;
        p = next;
        if done {
            break;
        }
    }
    model.sum_rate(&p)
}

/// Sampling plus coordinate-free random-search polish on the unit-ball QCQP.
fn qcqp_oracle(prob: &UnitBallQcqp, rng: &mut SeededRng) -> f64 {
    let n = prob.objective.dim();
    let ok = |u: &ComplexVector| {
        u.norm() <= 1.0 && prob.constraint.as_ref().is_none_or(|(q, r)| q.eval(u) >= *r)
    };
    let mut best_u = ComplexVector::zeros(n);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..200_000 {
        let u = random_in_ball(n, rng);
        if ok(&u) {
            let v = prob.objective.eval(&u);
            if v > best {
                best = v;
                best_u = u;
            }
        }
    }
    let mut radius = 0.1;
    while radius > 1e-10 {
        let mut improved = false;
        for _ in 0..200 {
            let cand = &best_u + rng.complex_normal_vector(n) * C64::new(radius, 0.0);
            if ok(&cand) {
                let v = prob.objective.eval(&cand);
                if v > best {
                    best = v;
                    best_u = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    best
}

#[test]
fn criterion_10_subproblem_oracles() {
    let mut worst_p5 = 0.0_f64;
    let mut p5_cases = 0;
    for (users, seed) in [(2, 1000), (2, 1001), (3, 1002), (3, 1003)] {
        let (cfg, stats) = scenario(users, 8, 20.0, seed);
        let init = PowerAllocation::initial(&cfg);
        let u_s = statistical_sensing_combiner(&init, &stats, &cfg).unwrap();
        let ctx = PowerContext::new(&cfg, &stats, u_s).unwrap();
        let model = DataPowerModel::new(&ctx, &init.pilot).unwrap();
        let sca = p5_solution(&ctx, &init.pilot, &init.data, &model);
        let grid = grid_oracle(&ctx, &init.pilot, &model);
        assert!(grid.is_finite(), "grid found no feasible point for K={users}");
        worst_p5 = worst_p5.max((sca - grid).abs() / grid.abs());
        p5_cases += 1;
    }

    let mut rng = SeededRng::new(1010);
    let mut worst_p8 = 0.0_f64;
    for seed in 0..4u64 {
        let (cfg, stats) = scenario(3, 3, 10.0, 1100 + seed);
        let p = PowerAllocation::initial(&cfg);
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let pilots = dft_pilots(cfg.users, cfg.pilot_len).unwrap();
        let real = RealizationSampler::new(&p.pilot, &stats, &pilots, &cfg)
            .unwrap()
            .draw(&mut rng);
        let u_prev = mrc_instantaneous(&real).unwrap();
        for k in 0..cfg.users {
            let minorant = sca_minorant(k, &u_prev[k], &p, &real, &dc, &cfg);
            let mut objective = minorant.quadratic.clone();
            objective.a = objective.a.add_scaled_identity(cfg.regularization);
            let level = 0.5 * minorant.eval(&u_prev[k]);
            let prob = UnitBallQcqp {
                objective,
                constraint: Some((minorant.quadratic.clone(), level)),
            };
            let start = &u_prev[k] * C64::new(1.0 - 1e-6, 0.0);
            let sol = solve_unit_ball_qcqp(&prob, &start, 1e-10).unwrap();
            let oracle = qcqp_oracle(&prob, &mut rng);
            worst_p8 = worst_p8.max((sol.value - oracle).abs() / oracle.abs());
        }
    }
    verdict(
        10,
        "subproblem solvers match brute-force oracles",
        worst_p5 <= 1e-3 && worst_p8 <= 1e-4,
        &format!("data power: {p5_cases} cases, worst {worst_p5:.2e}; combiner: 12 cases, worst {worst_p8:.2e}"),
    );
}

#[test]
fn criterion_11_minorant_properties() {
    let mut rng = SeededRng::new(1111);
    let (mut gap, mut violations, mut instances) = (0.0_f64, 0, 0);
    for seed in 0..10u64 {
        let (cfg, stats) = scenario(3, 4, 10.0, 1200 + seed);
        let p = PowerAllocation {
            pilot: (0..3).map(|_| cfg.power * (0.2 + rng.uniform())).collect(),
            data: (0..3).map(|_| cfg.power * (0.2 + rng.uniform())).collect(),
        };
        let dc = derived_covariances(&p.pilot, &stats, &cfg).unwrap();
        let pilots = dft_pilots(cfg.users, cfg.pilot_len).unwrap();
        let real = RealizationSampler::new(&p.pilot, &stats, &pilots, &cfg)
            .unwrap()
            .draw(&mut rng);
        for k in 0..cfg.users {
            let u0 = random_unit(cfg.antennas, &mut rng);
            let m = sca_minorant(k, &u0, &p, &real, &dc, &cfg);
            gap = gap.max((m.eval(&u0) - user_rate(k, &p, &real, &dc, &u0, &cfg)).abs());
            for _ in 0..100 {
                let u = random_in_ball(cfg.antennas, &mut rng);
                if m.eval(&u) > user_rate(k, &p, &real, &dc, &u, &cfg) + 1e-9 {
                    violations += 1;
                }
            }
            instances += 1;
        }

        let u_s = statistical_sensing_combiner(&p, &stats, &cfg).unwrap();
        let ctx = PowerContext::new(&cfg, &stats, u_s).unwrap();
        let model = DataPowerModel::new(&ctx, &p.pilot).unwrap();
        let hi = ctx.data_upper(&p.pilot);
        gap = gap.max((model.minorant(&p.data, &p.data) - model.sum_rate(&p.data)).abs());
        for _ in 0..100 {
            let q: Vec<f64> = hi.iter().map(|h| h * rng.uniform()).collect();
            if model.minorant(&q, &p.data) > model.sum_rate(&q) + 1e-9 {
                violations += 1;
            }
        }
        instances += 1;
    }
    verdict(
        11,
        "minorants are tight and dominated",
        gap <= 1e-9 && violations == 0,
        &format!("{instances} instances, tightness gap {gap:.2e}, {violations} violations"),
    );
}

#[test]
fn criterion_12_determinism() {
    let mut sweep = config("fig4_power.toml");
    sweep.experiment.trials = 3;
    sweep.experiment.values = vec![10.0, 20.0];
    let mut detect = config("fig9_detection.toml");
    detect.experiment.trials = 200;
    detect.experiment.values = vec![0.0, 10.0];
    let converge = config("fig3_convergence.toml");
    let runs: [(&str, &dyn Fn() -> Vec<ResultRow>); 3] = [
        ("sweep", &|| run_rate_sweep(&sweep).unwrap()),
        ("detect", &|| run_detection_validation(&detect).unwrap()),
        ("converge", &|| run_power_convergence(&converge).unwrap()),
    ];
    let mut identical = Vec::new();
    for (name, run) in runs {
        let same = format_csv(&run()) == format_csv(&run());
        identical.push(format!("{name}: {same}"));
    }
    verdict(
        12,
        "identical seeds give byte-identical CSV",
        identical.iter().all(|s| s.ends_with("true")),
        &identical.join(", "),
    );
}

//! Invariant and oracle-equivalence checks runnable from the CLI.
//!
//! Every check compares a production kernel against a reference from
//! [`crate::oracles`] or against an identity that must hold exactly. The
//! kernels under test are passed in through [`Kernels`] so that a deliberately
//! broken kernel can be shown to fail the check that names it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmOptions};
use crate::ev_solver::{self, EvInstance, Optimizer, SolveOptions, Variant};
use crate::feeder::{self, D2Value, FeederSolution};
use crate::mat::Mat;
use crate::model::{self, CumulativeBounds, EvProfile, FeederSeries, LocationMap, Scenario};
use crate::oracles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    fn pick(self, quick: usize, full: usize) -> usize {
        match self {
            Level::Quick => quick,
            Level::Full => full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Kernels under test.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub is_feasible: fn(&CumulativeBounds) -> bool,
    pub lipschitz: fn(usize, Variant, f64) -> f64,
    pub solve_s2: fn(&[f64], &[f64], f64) -> FeederSolution,
    pub solve_d2: fn(&[f64], &[f64]) -> D2Value,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels {
            is_feasible: model::is_feasible,
            lipschitz: ev_solver::lipschitz_constant,
            solve_s2: feeder::solve_s2,
            solve_d2: feeder::solve_d2,
        }
    }
}

pub const CHECK_NAMES: [&str; 10] = [
    "feasibility_oracle",
    "projection_identity",
    "lipschitz_formula",
    "s1_vs_oracle",
    "s1_certified_accuracy",
    "s2_exactness",
    "d2_exactness",
    "sharing_reduction",
    "masking_neutrality",
    "weak_duality",
];

pub fn run(level: Level) -> Vec<CheckResult> {
    run_with(level, &Kernels::default())
}

pub fn run_with(level: Level, k: &Kernels) -> Vec<CheckResult> {
    let checks: [(&str, &dyn Fn() -> Result<String, String>); 10] = [
        ("feasibility_oracle", &|| {
            feasibility_oracle(level.pick(1000, 10_000), k)
        }),
        ("projection_identity", &|| projection_identity(level.pick(200, 1000))),
        ("lipschitz_formula", &|| lipschitz_formula(k)),
        ("s1_vs_oracle", &|| s1_vs_oracle(level.pick(50, 500))),
        ("s1_certified_accuracy", &|| {
            s1_certified_accuracy(level.pick(1024, 8192))
        }),
        ("s2_exactness", &|| s2_exactness(level.pick(1000, 10_000), k)),
        ("d2_exactness", &|| d2_exactness(level.pick(1000, 10_000), k)),
        ("sharing_reduction", &|| sharing_reduction(level.pick(5, 20))),
        ("masking_neutrality", &|| masking_neutrality(level.pick(100, 1000))),
        ("weak_duality", &|| weak_duality(level.pick(3, 10))),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let t0 = Instant::now();
            let out = f();
            let seconds = t0.elapsed().as_secs_f64();
            let (passed, detail) = match out {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            log::info!(
                "selftest {name}: {} ({seconds:.2}s) {detail}",
                if passed { "ok" } else { "FAILED" }
            );
            CheckResult {
                name: name.to_string(),
                passed,
                detail,
                seconds,
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn feasibility_oracle(n: usize, k: &Kernels) -> Result<String, String> {
    let instances = oracles::labeled_feasibility_instances(0x5e1f, n);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (j, li) in instances.iter().enumerate() {
        let got = (k.is_feasible)(&li.bounds);
        ensure(got == li.feasible, || {
            format!(
                "instance {j} ({:?}): is_feasible = {got}, label = {}",
                li.family, li.feasible
            )
        })?;
        let t_len = li.bounds.horizon();
        let target: Vec<f64> = (0..t_len).map(|_| rng.random_range(-5.0..15.0)).collect();
        match model::project_feasible(&target, &li.bounds) {
            Ok(p) => ensure(li.feasible && model::satisfies(&p, &li.bounds, 1e-9), || {
                format!("instance {j}: projection returned a profile that violates bounds or label")
            })?,
            Err(_) => ensure(!li.feasible, || {
                format!("instance {j}: projection failed on a feasible instance")
            })?,
        }
    }
    Ok(format!("{n} labeled instances"))
}

fn projection_identity(n: usize) -> Result<String, String> {
    let instances = oracles::labeled_feasibility_instances(0x1de, 3 * n);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut done = 0;
    for li in instances.iter().filter(|li| li.feasible).take(n) {
        let t_len = li.bounds.horizon();
        let target: Vec<f64> = (0..t_len).map(|_| rng.random_range(-5.0..15.0)).collect();
        let p = model::project_feasible(&target, &li.bounds).map_err(|_| "projection failed".to_string())?;
        let again = model::project_feasible(&p, &li.bounds).map_err(|_| "projection failed".to_string())?;
        ensure(again == p, || format!("not idempotent on {target:?}"))?;
        done += 1;
    }
    ensure(done > 0, || "no feasible instances".into())?;
    Ok(format!("{done} targets"))
}

fn lipschitz_formula(k: &Kernels) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for t in [1usize, 2, 7, 24, 168] {
        // L = 2‖H‖²/q with q = 1 for a unit-curvature D1 instance
        let formula = (k.lipschitz)(t, Variant::D1, 1.0) / 2.0;
        let power = oracles::power_iteration_hht(t, 100_000);
        let rel = (formula - power).abs() / power;
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || {
            format!("T={t}: formula {formula}, power iteration {power}")
        })?;
    }
    let t = 168.0;
    let asym = (k.lipschitz)(168, Variant::D1, 1.0) / 2.0 / (0.405 * t * t);
    ensure((asym - 1.0).abs() <= 0.01, || {
        format!("T=168: ‖H‖²/(0.405 T²) = {asym}")
    })?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn small_s1_instances(n: usize, seed: u64) -> Vec<(CumulativeBounds, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    oracles::labeled_feasibility_instances(seed, 8 * n)
        .into_iter()
        .filter(|li| li.feasible && li.bounds.horizon() <= 8)
        .take(n)
        .map(|li| {
            let a = (0..li.bounds.horizon())
                .map(|_| rng.random_range(-10.0..20.0))
                .collect();
            (li.bounds, a)
        })
        .collect()
}

fn s1_vs_oracle(n: usize) -> Result<String, String> {
    let data = small_s1_instances(n, 3);
    let instances: Vec<EvInstance> = data.iter().map(|(b, a)| EvInstance::s1(a.clone(), 1e-3, b)).collect();
    let opts = SolveOptions {
        tol: 1e-12,
        max_iter: 20_000,
        mask_period: 5,
        ..Default::default()
    };
    let out = ev_solver::solve_batch(&instances, None, &opts).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (j, (inst, r)) in instances.iter().zip(&out.results).enumerate() {
        let o = oracles::oracle_s1(inst, 1e-12).map_err(|e| format!("instance {j}: {e}"))?;
        let d = r.p.iter().zip(&o.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        ensure(d <= 1e-3, || format!("instance {j}: ‖Δp‖∞ = {d:.3e} kW"))?;
    }
    Ok(format!("{} instances, max ‖Δp‖∞ {worst:.2e} kW", data.len()))
}

fn s1_certified_accuracy(n: usize) -> Result<String, String> {
    let data = oracles::sampled_s1_instances(n, 168, 60.0, 11).map_err(|e| e.to_string())?;
    let instances: Vec<EvInstance> = data.iter().map(|(b, a)| EvInstance::s1(a.clone(), 1e-3, b)).collect();
    let opts = SolveOptions {
        tol: 1e-2,
        max_iter: 200,
        ..Default::default()
    };
    let out = ev_solver::solve_batch(&instances, None, &opts).map_err(|e| e.to_string())?;
    let frac = |it: usize| out.results.iter().filter(|r| r.converged && r.iterations <= it).count() as f64 / n as f64;
    let (f100, f200) = (frac(100), frac(200));
    for (j, r) in out.results.iter().enumerate() {
        ensure(r.psi <= r.phi + 1e-9 * r.phi.abs().max(1.0), || {
            format!("instance {j}: dual value {} above primal {}", r.psi, r.phi)
        })?;
    }
    ensure(f100 >= 0.95 && f200 >= 0.98, || {
        format!(
            "gap <= 1%: {:.1}% by 100 iterations, {:.1}% by 200",
            100.0 * f100,
            100.0 * f200
        )
    })?;
    Ok(format!(
        "{:.1}% within 100, {:.1}% within 200",
        100.0 * f100,
        100.0 * f200
    ))
}

fn s2_exactness(n: usize, k: &Kernels) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_kkt: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for j in 0..n {
        let (target, cap, rho) = oracles::random_feeder_instance(&mut rng, 168);
        let sol = (k.solve_s2)(&target, &cap, rho);
        let kkt = feeder::s2_kkt_residual(&sol, &target, &cap, rho);
        let v_ref = oracles::oracle_s2(&target, &cap, rho, 1e-10);
        let dv = (sol.v - v_ref).abs();
        worst_kkt = worst_kkt.max(kkt);
        worst_v = worst_v.max(dv);
        ensure(kkt <= 1e-10 && dv <= 1e-7, || {
            format!("instance {j}: KKT residual {kkt:.2e}, |Δv| {dv:.2e}")
        })?;
    }
    Ok(format!("{n} feeders, KKT {worst_kkt:.1e}, |Δv| {worst_v:.1e}"))
}

fn d2_exactness(n: usize, k: &Kernels) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for j in 0..n {
        let (price, cap) = oracles::random_price_instance(&mut rng, j);
        let got = (k.solve_d2)(&price, &cap);
        let expected = oracles::d2_three_case(&price, &cap);
        let same = match (got, expected) {
            (D2Value::NegInfinity, D2Value::NegInfinity) => true,
            (D2Value::Finite(a), D2Value::Finite(b)) => (a - b).abs() <= 1e-12 * b.abs().max(1.0),
            _ => false,
        };
        ensure(same, || format!("instance {j}: {got:?}, characterization {expected:?}"))?;
        if let D2Value::Finite(val) = got {
            for _ in 0..8 {
                let l: Vec<f64> = cap.iter().map(|c| c + rng.random_range(-2.0..2.0)).collect();
                let lag = oracles::grid_lagrangian(&l, &price, &cap);
                ensure(lag >= val - 1e-9 * val.abs().max(1.0), || {
                    format!("instance {j}: sampled point {lag} beats {val}")
                })?;
            }
        }
    }
    Ok(format!("{n} price vectors"))
}

/// Micro scenario with `n` EVs, up to two feeders and four slots.
pub fn micro_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let n = rng.random_range(1..=4usize);
    let sf = rng.random_range(1..=2usize);
    let t_len = rng.random_range(1..=4usize);
    let mut location = LocationMap::new(n, t_len);
    let mut profiles = Vec::with_capacity(n);
    for i in 0..n {
        let mut p_max = vec![0.0; t_len];
        let mut demand = vec![0.0; t_len];
        for t in 0..t_len {
            if rng.random_bool(0.8) {
                location.set(i, t, Some(rng.random_range(0..sf)));
                p_max[t] = 10.0;
            } else {
                demand[t] = rng.random_range(0.0..4.0);
            }
        }
        let need: f64 = demand.iter().sum();
        let e_init = need + rng.random_range(0.0..5.0);
        let connected = p_max.iter().filter(|&&x| x > 0.0).count() as f64;
        let reachable = e_init - need + 10.0 * connected;
        let mut e_min = vec![0.0; t_len];
        e_min[t_len - 1] = rng.random_range(0.0..=e_init.min(10.0).min(reachable));
        profiles.push(EvProfile {
            id: format!("m{i}"),
            battery_kwh: 60.0,
            e_init,
            p_min: vec![0.0; t_len],
            p_max,
            e_min,
            e_max: vec![60.0; t_len],
            demand,
        });
    }
    let mut capacity = Mat::zeros(sf, t_len);
    for x in capacity.as_mut_slice() {
        *x = rng.random_range(0.0..0.012);
    }
    Scenario {
        profiles,
        location,
        feeders: FeederSeries {
            ids: (0..sf).map(|s| format!("f{s}")).collect(),
            capacity,
        },
        unit_scale: 1e-3,
    }
}

/// Options for micro-scenario comparisons. The inner solver is projected
/// gradient, which is nonexpansive, so two loops whose inputs differ by
/// rounding get answers that differ by rounding.
pub fn micro_options() -> AdmmOptions {
    let mut opts = AdmmOptions {
        rho: 100.0,
        ..Default::default()
    };
    opts.s1.optimizer = Optimizer::Pga;
    opts.s1.tol = 1e-10;
    opts.s1.max_iter = 200_000;
    opts
}

fn sharing_reduction(n: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = micro_options();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let sc = micro_scenario(&mut rng);
        let dense = oracles::dense_admm_small(&sc, &opts, 50).map_err(|e| e.to_string())?;
        let mut state = admm::init_state(&sc, &opts).map_err(|e| e.to_string())?;
        for (k, d) in dense.iter().enumerate() {
            admm::step(&mut state, &sc, &opts).map_err(|e| e.to_string())?;
            let diff = state
                .p
                .max_abs_diff(&d.p)
                .max(state.l.max_abs_diff(&d.l))
                .max(state.hat_l.max_abs_diff(&d.hat_l));
            let spread = d.mu.iter().map(|m| m.max_abs_diff(&d.mu[0])).fold(0.0, f64::max);
            worst = worst.max(diff);
            ensure(
                diff <= 1e-9 && spread <= 1e-9 && state.mu.max_abs_diff(&d.mu[0]) <= 1e-9,
                || {
                    format!(
                        "micro scenario {j}, iteration {}: deviation {diff:.2e}, dual spread {spread:.2e}",
                        k + 1
                    )
                },
            )?;
        }
    }
    Ok(format!(
        "{n} micro scenarios x 50 iterations, max deviation {worst:.1e}"
    ))
}

fn masking_neutrality(n: usize) -> Result<String, String> {
    let data = oracles::sampled_s1_instances(n, 168, 0.0, 13).map_err(|e| e.to_string())?;
    let instances: Vec<EvInstance> = data.iter().map(|(b, a)| EvInstance::s1(a.clone(), 1e-3, b)).collect();
    let on = SolveOptions {
        tol: 1e-3,
        max_iter: 300,
        ..Default::default()
    };
    let off = SolveOptions {
        masking: false,
        ..on.clone()
    };
    let a = ev_solver::solve_batch(&instances, None, &on).map_err(|e| e.to_string())?;
    let b = ev_solver::solve_batch(&instances, None, &off).map_err(|e| e.to_string())?;
    for (j, (x, y)) in a.results.iter().zip(&b.results).enumerate() {
        let d = x.p.iter().zip(&y.p).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        ensure(d <= 1e-9 && x.iterations == y.iterations, || {
            format!("instance {j}: masked and unmasked differ by {d:.2e}")
        })?;
    }
    let early = a.results.iter().any(|r| r.iterations < on.max_iter);
    ensure(!early || a.work < b.work, || {
        format!("work {} with masking, {} without", a.work, b.work)
    })?;
    Ok(format!("work {} vs {}", a.work, b.work))
}

fn weak_duality(n: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut count = 0;
    for j in 0..n {
        let sc = micro_scenario(&mut rng);
        let opts = AdmmOptions {
            max_iter: 30,
            certificate_period: 1,
            gap_tol: 0.0,
            residual_stop: false,
            ..micro_options()
        };
        let out = admm::run(&sc, &opts).map_err(|e| e.to_string())?;
        for rec in &out.state.trace {
            if let Some(q) = rec.dual_bound {
                count += 1;
                ensure(q <= rec.objective + 1e-8 * rec.objective.abs().max(1.0), || {
                    format!(
                        "micro scenario {j}, iteration {}: dual {q} above primal {}",
                        rec.iter, rec.objective
                    )
                })?;
            }
        }
    }
    Ok(format!("{count} certificates"))
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_scenarios_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let sc = micro_scenario(&mut rng);
            sc.validate().unwrap();
            assert!(sc.bounds().unwrap().iter().all(model::is_feasible));
        }
    }

    #[test]
    fn tampered_lipschitz_is_named() {
        fn off(t: usize, v: Variant, reg: f64) -> f64 {
            1.01 * ev_solver::lipschitz_constant(t, v, reg)
        }
        let k = Kernels {
            lipschitz: off,
            ..Kernels::default()
        };
        assert!(lipschitz_formula(&k).is_err());
        assert!(lipschitz_formula(&Kernels::default()).is_ok());
    }

    #[test]
    fn tampered_feasibility_is_named() {
        let k = Kernels {
            is_feasible: model::check_necessary,
            ..Kernels::default()
        };
        let err = feasibility_oracle(300, &k).unwrap_err();
        assert!(err.contains("HiddenConflict"), "{err}");
    }

    #[test]
    fn tampered_d2_is_named() {
        fn lax(price: &[f64], cap: &[f64]) -> D2Value {
            D2Value::Finite(-price.iter().zip(cap).map(|(l, c)| l * c).sum::<f64>())
        }
        let k = Kernels {
            solve_d2: lax,
            ..Kernels::default()
        };
        assert!(d2_exactness(200, &k).is_err());
    }
}

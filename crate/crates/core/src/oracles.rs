//! Reference solvers for tests and self-checks. None of these are on the
//! production path, and all of them favour obviousness over speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::admm::AdmmOptions;
use crate::error::{Error, Result};
use crate::ev_solver::{self, DualIterate, EvInstance};
use crate::feeder;
use crate::mat::Mat;
use crate::model::{self, CumulativeBounds, Scenario};

/// Certified per-EV optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleS1 {
    pub p: Vec<f64>,
    pub phi: f64,
    pub gap: f64,
    pub iterations: u64,
}

pub const ORACLE_S1_MAX_ITER: u64 = 10_000_000;

/// Projected gradient ascent with step `1/L` until the certified relative gap
/// is at most `tol`.
pub fn oracle_s1(inst: &EvInstance, tol: f64) -> Result<OracleS1> {
    if !(tol > 0.0) {
        return Err(Error::Oracle("tolerance must be positive".into()));
    }
    if !inst.bounds.is_nonempty() {
        return Err(Error::Oracle("instance is infeasible".into()));
    }
    let t_len = inst.horizon();
    let b = inst.bounds;
    let eta = 1.0 / ev_solver::lipschitz_constant(t_len, inst.variant, inst.reg);
    let mut u = DualIterate::zeros(t_len);
    let mut k: u64 = 0;
    loop {
        let p = ev_solver::closed_form_primal(&u, inst);
        if k % 25 == 0 || k == ORACLE_S1_MAX_ITER {
            let pf = model::project_feasible(&p, b).map_err(|_| Error::Oracle("projection failed".into()))?;
            let gap = ev_solver::duality_gap(&pf, &u, inst)?;
            if gap <= tol {
                return Ok(OracleS1 {
                    phi: inst.objective(&pf),
                    p: pf,
                    gap,
                    iterations: k,
                });
            }
            if k == ORACLE_S1_MAX_ITER {
                return Err(Error::Oracle(format!(
                    "no certificate after {k} iterations (gap {gap:e})"
                )));
            }
        }
        let mut s = 0.0;
        for t in 0..t_len {
            s += p[t];
            u.u_lo[t] = (u.u_lo[t] + eta * (b.s_min[t] - s)).max(0.0);
            u.u_hi[t] = (u.u_hi[t] + eta * (s - b.s_max[t])).max(0.0);
        }
        k += 1;
    }
}

/// `f(a) − f(b)` for `f(v) = v + ϱ/2 Σ([δ−v]⁺)²`, without cancellation
/// between the two large sums.
fn s2_diff(a: f64, b: f64, delta: &[f64], rho: f64) -> f64 {
    let mut acc = 0.0;
    for d in delta {
        let (ea, eb) = (d - a, d - b);
        acc += match (ea > 0.0, eb > 0.0) {
            (true, true) => (b - a) * (2.0 * d - a - b),
            (true, false) => ea * ea,
            (false, true) => -eb * eb,
            (false, false) => 0.0,
        };
    }
    (a - b) + 0.5 * rho * acc
}

/// Golden-section search for the consensus step's violation level, run
/// until the bracket is narrower than `tol`.
pub fn oracle_s2(target: &[f64], cap: &[f64], rho: f64, tol: f64) -> f64 {
    let delta: Vec<f64> = target.iter().zip(cap).map(|(d, c)| d - c).collect();
    let mut hi = delta.iter().cloned().fold(0.0, f64::max);
    let mut lo = 0.0;
    if hi == 0.0 {
        return 0.0;
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..10_000 {
        if hi - lo <= tol {
            break;
        }
        if s2_diff(x1, x2, &delta, rho) < 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the minimiser may sit on the boundary v = 0
    if s2_diff(0.0, mid, &delta, rho) <= 0.0 {
        0.0
    } else {
        mid
    }
}

/// `λ_max(H Hᵀ)` by power iteration on the explicit T×T matrix.
pub fn power_iteration_hht(horizon: usize, iters: usize) -> f64 {
    let n = horizon;
    // (H Hᵀ)_{ij} = min(i, j) + 1
    let mut x = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| (i.min(j) + 1) as f64 * x[j]).sum())
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next = y.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|v| v * v).sum::<f64>();
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= 1e-15 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Feasibility by enumerating integer cumulative-energy paths. Valid because
/// the constraint matrix is totally unimodular: with integer data the set is
/// nonempty exactly when it has an integer point. `None` when the data are
/// not integral or the search would be too large.
pub fn lattice_feasible(b: &CumulativeBounds) -> Option<bool> {
    let t_len = b.horizon();
    let all = [&b.p_min, &b.p_max, &b.s_min, &b.s_max];
    if t_len > 6 || all.iter().any(|v| v.iter().any(|x| x.fract() != 0.0 || x.abs() > 1e6)) {
        return None;
    }
    fn walk(b: &CumulativeBounds, t: usize, s: i64, budget: &mut u64) -> Option<bool> {
        if t == b.horizon() {
            return Some(true);
        }
        for step in (b.p_min[t] as i64)..=(b.p_max[t] as i64) {
            *budget = budget.checked_sub(1)?;
            let next = s + step;
            if (next as f64) < b.s_min[t] || (next as f64) > b.s_max[t] {
                continue;
            }
            if walk(b, t + 1, next, budget)? {
                return Some(true);
            }
        }
        Some(false)
    }
    let mut budget = 5_000_000u64;
    walk(b, 0, 0, &mut budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceFamily {
    /// Built around an explicit feasible profile.
    Witness,
    /// Some window needs more energy than the charger can deliver.
    Deficit,
    /// Passes the elementwise chain but a later minimum conflicts with an
    /// earlier maximum.
    HiddenConflict,
}

#[derive(Debug, Clone)]
pub struct LabeledInstance {
    pub bounds: CumulativeBounds,
    pub feasible: bool,
    pub family: InstanceFamily,
}

/// Feasibility instances with labels known by construction, `T ∈ 1..=12`.
pub fn labeled_feasibility_instances(seed: u64, count: usize) -> Vec<LabeledInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| match k % 3 {
            0 => witness_instance(&mut rng),
            1 => deficit_instance(&mut rng),
            _ => hidden_conflict_instance(&mut rng),
        })
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng, t_len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(t_len);
    let mut hi = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let away = rng.random_bool(0.2);
        let l = if away || rng.random_bool(0.7) {
            0.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let h = if away { 0.0 } else { l + rng.random_range(0.0..10.0) };
        lo.push(l);
        hi.push(h);
    }
    (lo, hi)
}

fn witness_instance(rng: &mut ChaCha8Rng) -> LabeledInstance {
    let t_len = rng.random_range(1..=12);
    let (p_min, p_max) = random_box(rng, t_len);
    let p: Vec<f64> = (0..t_len)
        .map(|t| {
            let r: f64 = rng.random();
            match rng.random_range(0..4) {
                0 => p_min[t],
                1 => p_max[t],
                _ => p_min[t] + r * (p_max[t] - p_min[t]),
            }
        })
        .collect();
    let s = model::prefix_sum(&p);
    let mut s_min = Vec::with_capacity(t_len);
    let mut s_max = Vec::with_capacity(t_len);
    for st in s {
        let tight = rng.random_bool(0.3);
        s_min.push(if tight { st } else { st - rng.random_range(0.0..20.0) });
        s_max.push(if rng.random_bool(0.3) {
            st
        } else {
            st + rng.random_range(0.0..20.0)
        });
    }
    LabeledInstance {
        bounds: CumulativeBounds::from_cumulative(p_min, p_max, s_min, s_max).expect("lengths agree"),
        feasible: true,
        family: InstanceFamily::Witness,
    }
}

fn deficit_instance(rng: &mut ChaCha8Rng) -> LabeledInstance {
    let t_len = rng.random_range(1..=12);
    let (p_min, p_max) = random_box(rng, t_len);
    let c_max = model::prefix_sum(&p_max);
    let mut s_min: Vec<f64> = (0..t_len).map(|_| -rng.random_range(0.0..50.0)).collect();
    let mut s_max: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.0..50.0) + 100.0).collect();
    // window (t1, t2]: S_t2 − S_t1 <= Σ p_max over the window, but we ask for more
    let t2 = rng.random_range(0..t_len);
    let margin = rng.random_range(1e-6..5.0);
    if t2 > 0 && rng.random_bool(0.6) {
        let t1 = rng.random_range(0..t2);
        let base = rng.random_range(-5.0..5.0);
        s_max[t1] = base;
        s_min[t2] = base + (c_max[t2] - c_max[t1]) + margin;
        for t in 0..t_len {
            s_min[t] = s_min[t].min(s_max[t]);
        }
        s_min[t2] = base + (c_max[t2] - c_max[t1]) + margin;
        s_max[t2] = s_max[t2].max(s_min[t2]);
    } else {
        s_min[t2] = c_max[t2] + margin;
        s_max[t2] = s_min[t2] + rng.random_range(0.0..5.0);
    }
    LabeledInstance {
        bounds: CumulativeBounds::from_cumulative(p_min, p_max, s_min, s_max).expect("lengths agree"),
        feasible: false,
        family: InstanceFamily::Deficit,
    }
}

fn hidden_conflict_instance(rng: &mut ChaCha8Rng) -> LabeledInstance {
    // scaled, padded copy of: p in [0,a]^3, S_max(1) = 0, S_min(3) = 3a
    let a = rng.random_range(0.5..10.0);
    let pad_before = rng.random_range(0..=4);
    let pad_after = rng.random_range(0..=5);
    let t_len = pad_before + 3 + pad_after;
    let mut p_min = vec![0.0; t_len];
    let mut p_max = vec![0.0; t_len];
    let mut s_min = vec![f64::NEG_INFINITY; t_len];
    let mut s_max = vec![f64::INFINITY; t_len];
    for t in 0..pad_before {
        p_max[t] = rng.random_range(0.0..3.0);
        p_min[t] = 0.0;
    }
    let c_before: f64 = p_max[..pad_before].iter().sum();
    for t in pad_before..pad_before + 3 {
        p_max[t] = a;
    }
    // with the prefix charged fully the pattern needs S(first) <= c_before and S(third) >= c_before + 3a
    s_max[pad_before] = c_before;
    s_max[pad_before + 1] = c_before + 0.5 * a;
    s_min[pad_before + 2] = c_before + 3.0 * a;
    s_max[pad_before + 2] = c_before + 3.0 * a + rng.random_range(0.0..2.0);
    for t in pad_before + 3..t_len {
        p_max[t] = rng.random_range(0.0..5.0);
        p_min[t] = 0.0;
    }
    // finite, loose bounds elsewhere
    let total: f64 = p_max.iter().sum();
    for t in 0..t_len {
        if s_min[t] == f64::NEG_INFINITY {
            s_min[t] = -1.0 - total;
        }
        if s_max[t] == f64::INFINITY {
            s_max[t] = 1.0 + 2.0 * total;
        }
    }
    LabeledInstance {
        bounds: CumulativeBounds::from_cumulative(p_min, p_max, s_min, s_max).expect("lengths agree"),
        feasible: false,
        family: InstanceFamily::HiddenConflict,
    }
}

/// Benchmark S1 instances: bounds of generated EVs whose horizon demand
/// exceeds `min_demand_kwh`, with anchors `P̲ + ξ(P̄ − P̲)`, `ξ ~ U(−1, 2)`.
pub fn sampled_s1_instances(
    count: usize,
    horizon: usize,
    min_demand_kwh: f64,
    seed: u64,
) -> Result<Vec<(CumulativeBounds, Vec<f64>)>> {
    let cfg = crate::scenario::GenConfig {
        n_evs: (3 * count).max(16),
        horizon,
        seed,
        ..Default::default()
    };
    let sc = crate::scenario::generate_scenario(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut out = Vec::with_capacity(count);
    for prof in &sc.profiles {
        if out.len() == count {
            break;
        }
        if prof.demand.iter().sum::<f64>() <= min_demand_kwh {
            continue;
        }
        let b = model::derive_bounds(prof)?;
        let anchor = (0..horizon)
            .map(|t| {
                let xi: f64 = rng.random_range(-1.0..2.0);
                b.p_min[t] + xi * (b.p_max[t] - b.p_min[t])
            })
            .collect();
        out.push((b, anchor));
    }
    if out.len() < count {
        return Err(Error::Oracle(format!(
            "only {} of {count} generated EVs need more than {min_demand_kwh} kWh",
            out.len()
        )));
    }
    Ok(out)
}

/// Random consensus-step instance `(target, capacity, ϱ)` with horizon `t_len`.
/// About one in eight has tied overloads.
pub fn random_feeder_instance(rng: &mut ChaCha8Rng, t_len: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let cap: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.0..2.0)).collect();
    let ties = rng.random_bool(0.125);
    let shared: f64 = rng.random_range(0.0..1.0);
    let target = cap
        .iter()
        .map(|c| {
            let off = if ties && rng.random_bool(0.5) {
                shared
            } else {
                rng.random_range(-1.0..1.5)
            };
            c + off
        })
        .collect();
    let rho = 10f64.powf(rng.random_range(-2.0..2.0));
    (target, cap, rho)
}

/// Price vectors for the grid dual, cycling through: interior, sum just
/// below one, sum exactly one, sum just above one, a negative entry, zero.
pub fn random_price_instance(rng: &mut ChaCha8Rng, case: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t_len = rng.random_range(1..=168usize);
    if case % 6 == 2 {
        t_len = 1 << rng.random_range(0..=7u32);
    }
    let cap: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.0..3.0)).collect();
    let raw: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum::<f64>().max(1e-300);
    let scaled = |target: f64| -> Vec<f64> { raw.iter().map(|x| x * target / total).collect() };
    let price = match case % 6 {
        0 => scaled(rng.random_range(0.0..1.0)),
        1 => scaled(1.0 - 1e-9),
        2 => vec![1.0 / t_len as f64; t_len],
        3 => scaled(1.0 + 1e-9),
        4 => {
            let mut p = scaled(rng.random_range(0.0..1.0));
            let k = rng.random_range(0..t_len);
            p[k] = -rng.random_range(1e-12..0.1);
            p
        }
        _ => vec![0.0; t_len],
    };
    (price, cap)
}

/// Grid dual value from its case split, with compensated sums.
pub fn d2_three_case(price: &[f64], cap: &[f64]) -> feeder::D2Value {
    fn kahan(xs: impl Iterator<Item = f64>) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    }
    if price.iter().any(|x| *x < 0.0) || kahan(price.iter().copied()) > 1.0 {
        return feeder::D2Value::NegInfinity;
    }
    feeder::D2Value::Finite(-kahan(price.iter().zip(cap).map(|(l, c)| l * c)))
}

/// `max(0, max_t(l_t − C_t)) − ⟨λ, l⟩`, whose infimum over `l` is the grid dual.
pub fn grid_lagrangian(load: &[f64], price: &[f64], cap: &[f64]) -> f64 {
    let v = load.iter().zip(cap).map(|(l, c)| l - c).fold(0.0, f64::max);
    v - load.iter().zip(price).map(|(l, p)| l * p).sum::<f64>()
}

/// One iterate of the unreduced ADMM.
#[derive(Debug, Clone)]
pub struct DenseIterate {
    pub p: Mat,
    /// `I z̄`, comparable with the reduced loop's `l`.
    pub l: Mat,
    /// `Σ_i x_i`.
    pub hat_l: Mat,
    /// Per-EV scaled duals.
    pub mu: Vec<Mat>,
    /// Per-EV grid-side copies `z_i`.
    pub z: Vec<Mat>,
    /// `max_i ‖z_i − (z̄ + d_i − d̄)‖∞`, the sharing identity residual.
    pub sharing_residual: f64,
}

/// `x_i = s A_i p` as a full S×T matrix.
fn materialize(scenario: &Scenario, i: usize, p: &[f64]) -> Mat {
    let mut x = Mat::zeros(scenario.n_feeders(), scenario.horizon());
    for (t, cell) in scenario.location.row(i).iter().enumerate() {
        if let Some(s) = cell {
            x.set(*s as usize, t, scenario.unit_scale * p[t]);
        }
    }
    x
}

/// Unreduced sharing ADMM with explicit per-EV copies `z_i` and duals `μ_i`,
/// for scenarios with at most 4 EVs, 2 feeders and 4 slots. Uses the same
/// per-EV solver settings as the reduced loop.
pub fn dense_admm_small(scenario: &Scenario, opts: &AdmmOptions, iters: usize) -> Result<Vec<DenseIterate>> {
    let (n, sf, t_len) = (scenario.n_evs(), scenario.n_feeders(), scenario.horizon());
    if n > 4 || sf > 2 || t_len > 4 || n == 0 {
        return Err(Error::Oracle(format!(
            "dense ADMM needs 1 <= I <= 4, S <= 2, T <= 4; got I={n}, S={sf}, T={t_len}"
        )));
    }
    scenario.validate()?;
    let bounds = scenario.bounds()?;
    let s = scenario.unit_scale;
    let n_f = n as f64;
    let kappa_rho = opts.kappa_rho;

    let mut p = Mat::zeros(n, t_len);
    for (i, b) in bounds.iter().enumerate() {
        let row = model::project_feasible(&vec![0.0; t_len], b).map_err(|_| Error::InfeasibleInstance { index: i })?;
        p.row_mut(i).copy_from_slice(&row);
    }
    let mut x: Vec<Mat> = (0..n).map(|i| materialize(scenario, i, p.row(i))).collect();
    let mut z = x.clone();
    let mut mu = vec![Mat::zeros(sf, t_len); n];
    let mut warm = vec![DualIterate::zeros(t_len); n];
    let s1 = opts.s1.clone();
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        // x-update: min J_i + ρ/2 ‖s A_i p − (z_i − μ_i)‖²
        let instances: Vec<EvInstance> = (0..n)
            .map(|i| {
                let anchor = (0..t_len)
                    .map(|t| match scenario.location.get(i, t) {
                        Some(f) => (z[i].get(f, t) - mu[i].get(f, t)) / s,
                        None => 0.0,
                    })
                    .collect();
                EvInstance::s1(anchor, kappa_rho, &bounds[i])
            })
            .collect();
        let warm_arg = opts.warm_start.then_some(warm.as_slice());
        let res = ev_solver::solve_batch(&instances, warm_arg, &s1)?;
        for (i, r) in res.results.into_iter().enumerate() {
            p.row_mut(i).copy_from_slice(&r.p);
            warm[i] = r.dual;
            x[i] = materialize(scenario, i, p.row(i));
        }

        // z-update on the sum: d_i = x_i + μ_i
        let d: Vec<Mat> = (0..n)
            .map(|i| {
                let mut di = x[i].clone();
                for (a, b) in di.as_mut_slice().iter_mut().zip(mu[i].as_slice()) {
                    *a += b;
                }
                di
            })
            .collect();
        let mut d_bar = Mat::zeros(sf, t_len);
        for di in &d {
            for (a, b) in d_bar.as_mut_slice().iter_mut().zip(di.as_slice()) {
                *a += b / n_f;
            }
        }
        let mut z_bar = Mat::zeros(sf, t_len);
        for f in 0..sf {
            let target: Vec<f64> = d_bar.row(f).iter().map(|v| v * n_f).collect();
            let sol = feeder::solve_s2(&target, scenario.feeders.capacity.row(f), opts.rho / n_f);
            for t in 0..t_len {
                z_bar.set(f, t, sol.load[t] / n_f);
            }
        }
        let mut sharing_residual: f64 = 0.0;
        for i in 0..n {
            let mut zi = Mat::zeros(sf, t_len);
            for k in 0..zi.as_slice().len() {
                zi.as_mut_slice()[k] = d[i].as_slice()[k] + z_bar.as_slice()[k] - d_bar.as_slice()[k];
            }
            // the same copy from the definition of the z-step: z_i = d_i − (d̄ − z̄)
            for k in 0..zi.as_slice().len() {
                let alt = d[i].as_slice()[k] - (d_bar.as_slice()[k] - z_bar.as_slice()[k]);
                sharing_residual = sharing_residual.max((alt - zi.as_slice()[k]).abs());
            }
            z[i] = zi;
        }
        // dual update
        for i in 0..n {
            for k in 0..mu[i].as_slice().len() {
                mu[i].as_mut_slice()[k] += x[i].as_slice()[k] - z[i].as_slice()[k];
            }
        }
        let mut hat_l = Mat::zeros(sf, t_len);
        let mut l = Mat::zeros(sf, t_len);
        for i in 0..n {
            for k in 0..hat_l.as_slice().len() {
                hat_l.as_mut_slice()[k] += x[i].as_slice()[k];
                l.as_mut_slice()[k] += z[i].as_slice()[k];
            }
        }
        out.push(DenseIterate {
            p: p.clone(),
            l,
            hat_l,
            mu: mu.clone(),
            z: z.clone(),
            sharing_residual,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ev_solver::Variant;

    #[test]
    fn oracle_s1_examples() {
        let b = CumulativeBounds::from_cumulative(vec![0.0; 3], vec![2.0; 3], vec![0.0; 3], vec![4.0; 3]).unwrap();
        let inst = EvInstance::s1(vec![0.0; 3], 1e-3, &b);
        let r = oracle_s1(&inst, 1e-6).unwrap();
        assert_eq!((r.p.clone(), r.phi, r.iterations), (vec![0.0; 3], 0.0, 0));

        let b = CumulativeBounds::from_cumulative(vec![0.0], vec![3.0], vec![0.0], vec![3.0]).unwrap();
        let inst = EvInstance::s1(vec![4.0], 1.0, &b);
        let r = oracle_s1(&inst, 1e-9).unwrap();
        assert!((r.p[0] - 2.0).abs() < 1e-9);
        assert!((r.phi - 4.0).abs() < 1e-9);
        assert_eq!(inst.variant, Variant::S1);
    }

    #[test]
    fn oracle_s2_examples() {
        assert_eq!(oracle_s2(&[0.5, 0.1], &[1.0, 1.0], 1.0, 1e-12), 0.0);
        assert!((oracle_s2(&[3.0, 2.0], &[1.0, 1.0], 1.0, 1e-12) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn power_iteration_small() {
        assert!((power_iteration_hht(1, 100) - 1.0).abs() < 1e-15);
        // T=2: HHᵀ = [[1,1],[1,2]], λ_max = (3+√5)/2
        assert!((power_iteration_hht(2, 1000) - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn families_are_labelled_correctly() {
        for inst in labeled_feasibility_instances(3, 300) {
            let b = &inst.bounds;
            match inst.family {
                InstanceFamily::Witness => assert!(b.is_nonempty()),
                InstanceFamily::Deficit => assert!(!b.is_nonempty()),
                InstanceFamily::HiddenConflict => {
                    assert!(model::check_necessary(b));
                    assert!(!model::is_feasible(b));
                }
            }
        }
    }

    #[test]
    fn lattice_agrees_on_integer_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..2000 {
            let t_len = rng.random_range(1..=4);
            let p_min: Vec<f64> = (0..t_len).map(|_| rng.random_range(0..2) as f64).collect();
            let p_max: Vec<f64> = p_min.iter().map(|l| l + rng.random_range(0..4) as f64).collect();
            let s_min: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2..8) as f64).collect();
            let s_max: Vec<f64> = s_min.iter().map(|l| l + rng.random_range(-1..6) as f64).collect();
            let b = CumulativeBounds::from_cumulative(p_min, p_max, s_min, s_max).unwrap();
            let lat = lattice_feasible(&b).unwrap();
            assert_eq!(lat, b.is_nonempty(), "{b:?}");
            checked += 1;
        }
        assert_eq!(checked, 2000);
    }
}

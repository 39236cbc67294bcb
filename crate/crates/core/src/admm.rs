//! Sharing-form ADMM for the coordinated charging problem.
//!
//! Each EV contributes `x_i = s·A_i p_i` (MW, `s` = unit scale) to the
//! feeder loads, and the grid side chooses a consensus load `l`. After the
//! sharing reduction the loop only carries the averaged quantities:
//!
//! ```text
//!   S1  p_i ← argmin_{X_i} J_i(p) + ρ/2 ‖s A_i p − b_i‖²,
//!         b_i = s A_i p_i − (l̂ − l)/I − μ
//!   S2  l_s ← argmin g_s(l) + ρ/(2I) ‖l − (l̂_s + I μ_s)‖²   (per feeder)
//!   S3  μ  ← μ + (l̂ − l)/I
//! ```
//!
//! with `l̂ = Σ_i s A_i p_i` and price `λ = ρ μ`. Dividing S1 by `ρ s²` gives
//! the per-EV form with `κ_ρ = κ / (ρ s²)` and anchor `b̃ = b_i / s` gathered
//! at the EV's location.
//!
//! At sampled iterations the price is turned into a lower bound
//! `Q(λ) = Σ_i min D1_i + Σ_s D2_s` that certifies the current schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ev_solver::{self, DualIterate, EvInstance, SolveOptions};
use crate::feeder::{self, D2Value};
use crate::mat::Mat;
use crate::model::{self, CumulativeBounds, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmOptions {
    /// Penalty `ρ`.
    pub rho: f64,
    /// EV regulariser relative to the penalty, `κ / (ρ s²)`.
    pub kappa_rho: f64,
    pub max_iter: usize,
    /// Stop once the relative certificate gap is at most this.
    pub gap_tol: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Also stop when the residual criterion is met.
    pub residual_stop: bool,
    pub certificate_period: usize,
    pub s1: SolveOptions,
    /// Solver settings for the price response used by certificates.
    pub d1: SolveOptions,
    /// Reuse each EV's multipliers across iterations.
    pub warm_start: bool,
    /// Project prices onto `{λ >= 0, Σ_t λ <= 1}` per feeder before bounding.
    pub project_prices: bool,
    /// Recorded with the run. The loop itself draws no random numbers.
    pub seed: u64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 100.0,
            kappa_rho: 1e-3,
            max_iter: 350,
            gap_tol: 1e-3,
            eps_abs: 1e-7,
            eps_rel: 1e-5,
            residual_stop: true,
            certificate_period: 10,
            s1: SolveOptions {
                max_iter: 200,
                ..SolveOptions::default()
            },
            d1: SolveOptions {
                tol: 1e-7,
                max_iter: 300,
                ..SolveOptions::default()
            },
            warm_start: true,
            project_prices: true,
            seed: 0,
        }
    }
}

impl AdmmOptions {
    /// EV cost weight `κ` implied by `κ_ρ`, `ρ` and the unit scale.
    pub fn kappa(&self, unit_scale: f64) -> f64 {
        self.kappa_rho * self.rho * unit_scale * unit_scale
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config {
                param: "rho",
                msg: "must be positive".into(),
            });
        }
        if !(self.kappa_rho > 0.0) || !self.kappa_rho.is_finite() {
            return Err(Error::Config {
                param: "kappa_rho",
                msg: "must be positive".into(),
            });
        }
        if self.certificate_period == 0 {
            return Err(Error::Config {
                param: "certificate_period",
                msg: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Grid cost of the aggregate of the current (feasible) schedules.
    pub grid_cost: f64,
    pub ev_cost: f64,
    pub objective: f64,
    pub dual_bound: Option<f64>,
    pub rel_gap: Option<f64>,
    /// Gap of the current schedule against the largest bound seen so far.
    pub best_rel_gap: Option<f64>,
    /// Grid cost of the loads induced by each EV's price response.
    pub decentralized_grid_cost: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Instance-iterations spent in S1 this iteration.
    pub s1_work: u64,
    pub s1_unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// I×T kW.
    pub p: Mat,
    /// S×T MW consensus load.
    pub l: Mat,
    /// S×T scaled consensus dual.
    pub mu: Mat,
    /// S×T MW aggregate of `p`.
    pub hat_l: Mat,
    pub iter: usize,
    pub warm_duals: Vec<DualIterate>,
    pub trace: Vec<TraceRecord>,
    /// `N[s][t]`, EVs present at each feeder and slot.
    pub occupancy: Mat,
    #[serde(skip)]
    bounds: Vec<CumulativeBounds>,
}

impl AdmmState {
    pub fn bounds(&self) -> &[CumulativeBounds] {
        &self.bounds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `J(p)`.
    pub primal: f64,
    pub ev_cost: f64,
    pub grid_cost: f64,
    /// `Q(λ)`; `None` when some grid term is unbounded.
    pub dual: Option<f64>,
    pub rel_gap: Option<f64>,
    /// Price actually used for the bound.
    pub lambda: Mat,
    /// Whether `lambda` differs from `ρ μ`.
    pub projected: bool,
    /// Bound at the raw price `ρ μ` (unavailable whenever it had to be projected).
    pub raw_dual: Option<f64>,
    pub decentralized_grid_cost: f64,
    /// EVs whose price response met its gap tolerance.
    pub d1_converged: usize,
    /// Largest bound over all certificates of the run, and the gap of
    /// `primal` against it. Outside a run these equal `dual` and `rel_gap`.
    pub best_dual: Option<f64>,
    pub best_rel_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub primal_norm: f64,
    pub dual_norm: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GapTolerance,
    Residuals,
    MaxIter,
    Empty,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: AdmmState,
    pub certificate: Certificate,
    pub termination: Termination,
    pub residuals: Option<ResidualReport>,
}

/// Per-EV price response and its induced loads.
#[derive(Debug, Clone)]
pub struct DecentralizedResponse {
    pub profiles: Mat,
    pub load: Mat,
    pub grid_cost: f64,
    /// Best dual value of each EV's response problem (a lower bound on its optimum).
    pub psi: Vec<f64>,
    pub converged: usize,
    pub work: u64,
}

/// Minimal-effort feasible start with zero duals.
pub fn init_state(scenario: &Scenario, opts: &AdmmOptions) -> Result<AdmmState> {
    scenario.validate()?;
    opts.validate()?;
    let bounds = scenario.bounds()?;
    let t_len = scenario.horizon();
    let mut p = Mat::zeros(scenario.n_evs(), t_len);
    let zero = vec![0.0; t_len];
    for (i, b) in bounds.iter().enumerate() {
        model::project_feasible_into(&zero, b, p.row_mut(i)).map_err(|_| Error::InfeasibleInstance { index: i })?;
    }
    let hat_l = scenario.aggregate(&p);
    Ok(AdmmState {
        l: hat_l.clone(),
        mu: Mat::zeros(scenario.n_feeders(), t_len),
        hat_l,
        p,
        iter: 0,
        warm_duals: vec![DualIterate::zeros(t_len); scenario.n_evs()],
        trace: Vec::new(),
        occupancy: scenario.location.occupancy(scenario.n_feeders()),
        bounds,
    })
}

fn ensure_bounds(state: &mut AdmmState, scenario: &Scenario) -> Result<()> {
    if state.bounds.len() != scenario.n_evs() {
        state.bounds = scenario.bounds()?;
    }
    Ok(())
}

/// Result of one iteration besides the state update.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub residuals: ResidualReport,
    pub s1_work: u64,
    pub s1_unconverged: usize,
}

/// One S1/S2/S3 sweep. Does not append to the trace.
pub fn step(state: &mut AdmmState, scenario: &Scenario, opts: &AdmmOptions) -> Result<StepInfo> {
    ensure_bounds(state, scenario)?;
    let n = scenario.n_evs();
    let s_scale = scenario.unit_scale;
    let t_len = scenario.horizon();
    if n == 0 {
        state.iter += 1;
        return Ok(StepInfo {
            residuals: ResidualReport {
                primal_norm: 0.0,
                dual_norm: 0.0,
                eps_primal: 0.0,
                eps_dual: 0.0,
                satisfied: true,
            },
            s1_work: 0,
            s1_unconverged: 0,
        });
    }
    let inv_i = 1.0 / n as f64;

    // corr = (l̂ − l)/I + μ, in MW
    let mut corr = state.mu.clone();
    for ((c, h), l) in corr
        .as_mut_slice()
        .iter_mut()
        .zip(state.hat_l.as_slice())
        .zip(state.l.as_slice())
    {
        *c += (h - l) * inv_i;
    }

    let kappa_rho = opts.kappa_rho;
    let instances: Vec<EvInstance> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut anchor = vec![0.0; t_len];
            model::gather(&corr, scenario.location.row(i), 1.0 / s_scale, &mut anchor);
            let p = state.p.row(i);
            for (t, (a, cell)) in anchor.iter_mut().zip(scenario.location.row(i)).enumerate() {
                *a = if cell.is_some() { p[t] - *a } else { 0.0 };
            }
            EvInstance::s1(anchor, kappa_rho, &state.bounds[i])
        })
        .collect();
    let warm = opts.warm_start.then_some(state.warm_duals.as_slice());
    let out = ev_solver::solve_batch(&instances, warm, &opts.s1)?;
    drop(instances);

    let p_old = std::mem::replace(&mut state.p, Mat::zeros(n, t_len));
    let mut unconverged = 0;
    for (i, r) in out.results.into_iter().enumerate() {
        state.p.row_mut(i).copy_from_slice(&r.p);
        unconverged += usize::from(!r.converged);
        state.warm_duals[i] = r.dual;
    }
    let hat_l_old = std::mem::replace(&mut state.hat_l, scenario.aggregate(&state.p));

    // S2 per feeder
    let varrho = opts.rho * inv_i;
    let i_f = n as f64;
    let loads: Vec<Vec<f64>> = (0..scenario.n_feeders())
        .into_par_iter()
        .map(|s| {
            let target: Vec<f64> = state
                .hat_l
                .row(s)
                .iter()
                .zip(state.mu.row(s))
                .map(|(h, m)| h + i_f * m)
                .collect();
            feeder::solve_s2(&target, scenario.feeders.capacity.row(s), varrho).load
        })
        .collect();
    let l_old = std::mem::replace(&mut state.l, Mat::from_rows(&loads, t_len));

    // S3
    for ((m, h), l) in state
        .mu
        .as_mut_slice()
        .iter_mut()
        .zip(state.hat_l.as_slice())
        .zip(state.l.as_slice())
    {
        *m += (h - l) * inv_i;
    }
    state.iter += 1;

    let residuals = residual_report(
        scenario,
        opts,
        &state.occupancy,
        (&state.p, &p_old),
        (&state.hat_l, &hat_l_old),
        (&state.l, &l_old),
        &state.mu,
    );
    Ok(StepInfo {
        residuals,
        s1_work: out.work,
        s1_unconverged: unconverged,
    })
}

/// Residual report between two consecutive states.
pub fn residuals(state: &AdmmState, prev: &AdmmState, scenario: &Scenario, opts: &AdmmOptions) -> ResidualReport {
    residual_report(
        scenario,
        opts,
        &state.occupancy,
        (&state.p, &prev.p),
        (&state.hat_l, &prev.hat_l),
        (&state.l, &prev.l),
        &state.mu,
    )
}

/// `‖M ⊙ √N‖_F`.
pub fn weighted_norm(m: &Mat, occupancy: &Mat) -> f64 {
    m.as_slice()
        .iter()
        .zip(occupancy.as_slice())
        .map(|(x, n)| x * x * n)
        .sum::<f64>()
        .sqrt()
}

fn residual_report(
    scenario: &Scenario,
    opts: &AdmmOptions,
    occupancy: &Mat,
    (p, p_old): (&Mat, &Mat),
    (hat_l, hat_l_old): (&Mat, &Mat),
    (l, l_old): (&Mat, &Mat),
    mu: &Mat,
) -> ResidualReport {
    let n = scenario.n_evs();
    let t_len = scenario.horizon();
    let s = scenario.unit_scale;
    let inv_i = 1.0 / n.max(1) as f64;
    let rows = hat_l.rows();

    // p̄ − z̄ = (l̂ − l)/I and its change between iterations
    let mut gap = Mat::zeros(rows, t_len);
    let mut dgap = Mat::zeros(rows, t_len);
    for k in 0..gap.as_slice().len() {
        let g = (hat_l.as_slice()[k] - l.as_slice()[k]) * inv_i;
        let g_old = (hat_l_old.as_slice()[k] - l_old.as_slice()[k]) * inv_i;
        gap.as_mut_slice()[k] = g;
        dgap.as_mut_slice()[k] = g - g_old;
    }
    let primal_norm = weighted_norm(&gap, occupancy);

    // per-EV terms are summed sequentially so the result does not depend on
    // how rayon splits the range
    let terms: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d = 0.0;
            let mut x = 0.0;
            let mut z = 0.0;
            for (t, cell) in scenario.location.row(i).iter().enumerate() {
                let Some(f) = cell else { continue };
                let f = *f as usize;
                let xi = s * p.get(i, t);
                let dx = xi - s * p_old.get(i, t);
                let sig = opts.rho * (dx - dgap.get(f, t));
                let zi = xi - gap.get(f, t);
                d += sig * sig;
                x += xi * xi;
                z += zi * zi;
            }
            (d, x, z)
        })
        .collect();
    let (dual_sq, x_sq, z_sq) = terms
        .iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let dual_norm = dual_sq.sqrt();
    let root = ((n * t_len) as f64).sqrt();
    let eps_primal = root * opts.eps_abs + opts.eps_rel * x_sq.sqrt().max(z_sq.sqrt());
    let eps_dual = root * opts.eps_abs + opts.eps_rel * opts.rho * weighted_norm(mu, occupancy);
    ResidualReport {
        primal_norm,
        dual_norm,
        eps_primal,
        eps_dual,
        satisfied: primal_norm <= eps_primal && dual_norm <= eps_dual,
    }
}

/// Projects each feeder's price onto `{λ >= 0, Σλ <= 1}` by clamping and
/// rescaling. Returns whether anything changed.
pub fn project_prices(lambda: &mut Mat) -> bool {
    let mut changed = false;
    for s in 0..lambda.rows() {
        let row = lambda.row_mut(s);
        for x in row.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
                changed = true;
            }
        }
        let sum: f64 = row.iter().sum();
        if sum > 1.0 {
            let f = 1.0 / sum;
            for x in row.iter_mut() {
                *x *= f;
            }
            // rounding can leave the sum a hair above 1
            while row.iter().sum::<f64>() > 1.0 {
                for x in row.iter_mut() {
                    *x *= 1.0 - f64::EPSILON;
                }
            }
            changed = true;
        }
    }
    changed
}

/// Each EV's best response to `lambda` (S×T), solved in one batch.
///
/// The response problem `min κ/2‖p‖² + ⟨s A_iᵀλ, p⟩` is divided by `ρ s²`
/// before solving, so its objective lives on the same scale as the primal
/// step and relative gap tolerances mean the same thing. Reported dual values
/// are scaled back.
pub fn decentralized_response(
    lambda: &Mat,
    scenario: &Scenario,
    bounds: &[CumulativeBounds],
    opts: &AdmmOptions,
    warm: Option<&[DualIterate]>,
) -> Result<DecentralizedResponse> {
    if lambda.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("price has non-finite entries".into()));
    }
    let n = scenario.n_evs();
    let t_len = scenario.horizon();
    let s = scenario.unit_scale;
    let unit = opts.rho * s * s;
    let instances: Vec<EvInstance> = (0..n)
        .map(|i| {
            let mut c = vec![0.0; t_len];
            model::gather(lambda, scenario.location.row(i), s / unit, &mut c);
            EvInstance::d1(c, opts.kappa_rho, &bounds[i])
        })
        .collect();
    let out = ev_solver::solve_batch(&instances, warm, &opts.d1)?;
    let mut profiles = Mat::zeros(n, t_len);
    let mut psi = Vec::with_capacity(n);
    let mut converged = 0;
    for (i, r) in out.results.iter().enumerate() {
        profiles.row_mut(i).copy_from_slice(&r.p);
        psi.push(unit * r.best_psi);
        converged += usize::from(r.converged);
    }
    let load = scenario.aggregate(&profiles);
    let grid_cost = model::grid_cost(&load, &scenario.feeders.capacity);
    Ok(DecentralizedResponse {
        profiles,
        load,
        grid_cost,
        psi,
        converged,
        work: out.work,
    })
}

/// Primal value of the current schedule and a dual bound at `λ = ρ μ`.
pub fn certificate(state: &AdmmState, scenario: &Scenario, opts: &AdmmOptions) -> Result<Certificate> {
    let bounds: std::borrow::Cow<[CumulativeBounds]> = if state.bounds.len() == scenario.n_evs() {
        std::borrow::Cow::Borrowed(&state.bounds)
    } else {
        std::borrow::Cow::Owned(scenario.bounds()?)
    };
    let kappa = opts.kappa(scenario.unit_scale);
    let ev_cost: f64 = (0..state.p.rows()).map(|i| model::ev_cost(state.p.row(i), kappa)).sum();
    let grid_cost = model::grid_cost(&state.hat_l, &scenario.feeders.capacity);
    let primal = ev_cost + grid_cost;

    let mut lambda = state.mu.clone();
    for x in lambda.as_mut_slice() {
        *x *= opts.rho;
    }
    let projected = opts.project_prices && project_prices(&mut lambda);

    let warm = opts.warm_start.then_some(state.warm_duals.as_slice());
    let resp = decentralized_response(&lambda, scenario, &bounds, opts, warm)?;

    let mut d2_total = Some(0.0);
    for s in 0..scenario.n_feeders() {
        match feeder::solve_d2(lambda.row(s), scenario.feeders.capacity.row(s)) {
            D2Value::Finite(x) => d2_total = d2_total.map(|acc| acc + x),
            D2Value::NegInfinity => d2_total = None,
        }
    }
    let dual = d2_total.map(|d2| resp.psi.iter().sum::<f64>() + d2);
    let rel_gap = dual.map(|q| relative_gap(primal, q));
    Ok(Certificate {
        primal,
        ev_cost,
        grid_cost,
        dual,
        rel_gap,
        lambda,
        projected,
        raw_dual: if projected { None } else { dual },
        decentralized_grid_cost: resp.grid_cost,
        d1_converged: resp.converged,
        best_dual: dual,
        best_rel_gap: rel_gap,
    })
}

fn relative_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual) / 1f64.max(primal.abs()).max(dual.abs())
}

impl Certificate {
    /// Folds an earlier bound into `best_dual` and `best_rel_gap`. Every
    /// `Q(λ)` bounds the optimum from below, so the largest one is kept.
    fn absorb(&mut self, best: Option<f64>) {
        let best = match (self.dual, best) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.best_dual = best;
        self.best_rel_gap = best.map(|q| relative_gap(self.primal, q));
    }
}

/// Iterates until the certificate gap, the residual criterion or the
/// iteration cap stops the loop.
pub fn run(scenario: &Scenario, opts: &AdmmOptions) -> Result<RunOutcome> {
    run_with(scenario, opts, |_| {})
}

/// [`run`] with a callback after every trace record.
pub fn run_with(scenario: &Scenario, opts: &AdmmOptions, mut observe: impl FnMut(&TraceRecord)) -> Result<RunOutcome> {
    let mut state = init_state(scenario, opts)?;
    if scenario.n_evs() == 0 {
        let certificate = certificate(&state, scenario, opts)?;
        return Ok(RunOutcome {
            state,
            certificate,
            termination: Termination::Empty,
            residuals: None,
        });
    }
    let mut last_cert: Option<(usize, Certificate)> = None;
    let mut best_dual = None;
    let mut last_res = None;
    let mut termination = Termination::MaxIter;
    for k in 1..=opts.max_iter {
        let info = step(&mut state, scenario, opts)?;
        last_res = Some(info.residuals);
        let cert = if k == 1 || k % opts.certificate_period == 0 || k == opts.max_iter {
            let mut c = certificate(&state, scenario, opts)?;
            c.absorb(best_dual);
            best_dual = c.best_dual;
            Some(c)
        } else {
            None
        };
        let kappa = opts.kappa(scenario.unit_scale);
        let ev_cost: f64 = (0..state.p.rows()).map(|i| model::ev_cost(state.p.row(i), kappa)).sum();
        let grid_cost = model::grid_cost(&state.hat_l, &scenario.feeders.capacity);
        let rec = TraceRecord {
            iter: k,
            grid_cost,
            ev_cost,
            objective: grid_cost + ev_cost,
            dual_bound: cert.as_ref().and_then(|c| c.dual),
            rel_gap: cert.as_ref().and_then(|c| c.rel_gap),
            best_rel_gap: cert.as_ref().and_then(|c| c.best_rel_gap),
            decentralized_grid_cost: cert.as_ref().map(|c| c.decentralized_grid_cost),
            primal_residual: info.residuals.primal_norm,
            dual_residual: info.residuals.dual_norm,
            s1_work: info.s1_work,
            s1_unconverged: info.s1_unconverged,
        };
        log::debug!(
            "iter {k}: grid {:.6} gap {:?} best {:?} r_p {:.3e} r_d {:.3e} s1 work {}",
            rec.grid_cost,
            rec.rel_gap,
            rec.best_rel_gap,
            rec.primal_residual,
            rec.dual_residual,
            rec.s1_work
        );
        observe(&rec);
        state.trace.push(rec);
        if let Some(c) = cert {
            let done = c.best_rel_gap.is_some_and(|g| g <= opts.gap_tol);
            last_cert = Some((k, c));
            if done {
                termination = Termination::GapTolerance;
                break;
            }
        }
        if opts.residual_stop && info.residuals.satisfied {
            termination = Termination::Residuals;
            break;
        }
    }
    let certificate = match last_cert {
        Some((k, c)) if k == state.iter => c,
        _ => {
            let mut c = certificate(&state, scenario, opts)?;
            c.absorb(best_dual);
            if let Some(rec) = state.trace.last_mut() {
                rec.dual_bound = c.dual;
                rec.rel_gap = c.rel_gap;
                rec.best_rel_gap = c.best_rel_gap;
                rec.decentralized_grid_cost = Some(c.decentralized_grid_cost);
            }
            c
        }
    };
    Ok(RunOutcome {
        state,
        certificate,
        termination,
        residuals: last_res,
    })
}

//! Batched per-EV solver.
//!
//! Both per-EV problems share the form
//!
//! ```text
//!   min  Φ(p)   s.t.  p_min <= p <= p_max,  s_min <= H p <= s_max
//! ```
//!
//! with `Φ(p) = ½‖p − b̃‖² + κ_ρ/2 ‖p‖²` for the ADMM primal step (S1) and
//! `Φ(p) = κ/2 ‖p‖² + ⟨c, p⟩` for the price response (D1). The cumulative
//! band is dualised; for fixed multipliers the inner minimisation over the
//! box is a clip, so the dual function and its gradient cost O(T). The dual
//! is maximised with projected Adam (default) or projected gradient ascent,
//! and every evaluation checkpoint turns the inner minimiser into a feasible
//! point with the greedy projection, giving a duality gap certificate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, CumulativeBounds, FEAS_TOL};

/// `ε` of the projected-gradient map.
pub const PROJ_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S1,
    D1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Pga,
}

/// One per-EV subproblem.
#[derive(Debug, Clone)]
pub struct EvInstance<'a> {
    pub variant: Variant,
    /// `b̃` for S1, the gathered price `c` for D1.
    pub anchor: Vec<f64>,
    /// `κ_ρ` for S1, `κ` for D1.
    pub reg: f64,
    pub bounds: &'a CumulativeBounds,
}

impl<'a> EvInstance<'a> {
    pub fn s1(anchor: Vec<f64>, kappa_rho: f64, bounds: &'a CumulativeBounds) -> Self {
        EvInstance {
            variant: Variant::S1,
            anchor,
            reg: kappa_rho,
            bounds,
        }
    }

    pub fn d1(price: Vec<f64>, kappa: f64, bounds: &'a CumulativeBounds) -> Self {
        EvInstance {
            variant: Variant::D1,
            anchor: price,
            reg: kappa,
            bounds,
        }
    }

    pub fn horizon(&self) -> usize {
        self.bounds.horizon()
    }

    /// Curvature of `Φ`.
    #[inline]
    fn q(&self) -> f64 {
        match self.variant {
            Variant::S1 => 1.0 + self.reg,
            Variant::D1 => self.reg,
        }
    }

    /// Linear coefficient `a` in `Φ = q/2‖p‖² − ⟨a,p⟩ + const`.
    #[inline]
    fn lin(&self, t: usize) -> f64 {
        match self.variant {
            Variant::S1 => self.anchor[t],
            Variant::D1 => -self.anchor[t],
        }
    }

    /// `Φ(p)`.
    pub fn objective(&self, p: &[f64]) -> f64 {
        match self.variant {
            Variant::S1 => {
                let mut dev = 0.0;
                let mut sq = 0.0;
                for (x, b) in p.iter().zip(&self.anchor) {
                    dev += (x - b) * (x - b);
                    sq += x * x;
                }
                0.5 * dev + 0.5 * self.reg * sq
            }
            Variant::D1 => {
                let mut sq = 0.0;
                let mut lin = 0.0;
                for (x, c) in p.iter().zip(&self.anchor) {
                    sq += x * x;
                    lin += c * x;
                }
                0.5 * self.reg * sq + lin
            }
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.anchor.len() != self.horizon() {
            return Err(Error::Dimension {
                what: "instance anchor",
                expected: self.horizon(),
                got: self.anchor.len(),
            });
        }
        if !(self.reg > 0.0) || !self.reg.is_finite() {
            return Err(Error::Invalid(format!(
                "instance {index}: regularisation must be positive, got {}",
                self.reg
            )));
        }
        if self.anchor.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("instance {index}: non-finite anchor")));
        }
        if !self.bounds.is_nonempty() {
            return Err(Error::InfeasibleInstance { index });
        }
        Ok(())
    }
}

/// Dual iterate `u = [u_lo; u_hi]` plus Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl DualIterate {
    pub fn zeros(horizon: usize) -> Self {
        DualIterate {
            u_lo: vec![0.0; horizon],
            u_hi: vec![0.0; horizon],
            adam_m: vec![0.0; 2 * horizon],
            adam_v: vec![0.0; 2 * horizon],
            step_count: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.u_lo.len()
    }

    fn flat(&self) -> Vec<f64> {
        let mut u = self.u_lo.clone();
        u.extend_from_slice(&self.u_hi);
        u
    }

    fn from_flat(u: &[f64], m: &[f64], v: &[f64], step_count: u64) -> Self {
        let t = u.len() / 2;
        DualIterate {
            u_lo: u[..t].to_vec(),
            u_hi: u[t..].to_vec(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            step_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            eta: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub optimizer: Optimizer,
    /// Step size. `None` means `1/L_ψ` for PGA; for Adam it means 1 on S1
    /// and `κ` on D1, whose multipliers live on a scale `κ` times smaller.
    pub eta: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Relative duality gap at which an instance is frozen.
    pub tol: f64,
    pub max_iter: usize,
    /// Gap checks happen every `mask_period` iterations.
    pub mask_period: usize,
    /// Drop converged instances from the active batch.
    pub masking: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            optimizer: Optimizer::Adam,
            eta: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            tol: 1e-3,
            max_iter: 1000,
            mask_period: 20,
            masking: true,
        }
    }
}

/// Outcome for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemResult {
    /// Lowest-objective feasible schedule found at a gap check.
    pub p: Vec<f64>,
    /// Relative duality gap of `p` against `best_psi`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Φ(p)`.
    pub phi: f64,
    /// Dual value at the last gap check.
    pub psi: f64,
    /// Largest dual value seen along the run.
    pub best_psi: f64,
    pub dual: DualIterate,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub results: Vec<SubproblemResult>,
    /// Instance-iterations actually computed.
    pub work: u64,
}

/// `λ_max(H Hᵀ)` for the T×T lower-triangular ones matrix.
pub fn h_norm_sq(horizon: usize) -> f64 {
    let s = (std::f64::consts::PI / (4.0 * horizon as f64 + 2.0)).sin();
    1.0 / (4.0 * s * s)
}

/// Smoothness constant of the dual function.
pub fn lipschitz_constant(horizon: usize, variant: Variant, reg: f64) -> f64 {
    let q = match variant {
        Variant::S1 => 1.0 + reg,
        Variant::D1 => reg,
    };
    2.0 * h_norm_sq(horizon) / q
}

#[inline]
fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Inner minimiser for stored multipliers `u = [lo; hi]`.
fn primal_into(inst: &EvInstance, u: &[f64], p: &mut [f64]) {
    let t_len = p.len();
    let q = inst.q();
    let b = inst.bounds;
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        acc += u[t] - u[t_len + t];
        p[t] = clip((inst.lin(t) + acc) / q, b.p_min[t], b.p_max[t]);
    }
}

/// Dual value; also fills `p` with the inner minimiser and `g` with the gradient.
fn value_grad_into(inst: &EvInstance, u: &[f64], p: &mut [f64], g: &mut [f64]) -> f64 {
    primal_into(inst, u, p);
    let t_len = p.len();
    let b = inst.bounds;
    let psi = inst.objective(p);
    let mut pen = 0.0;
    let mut s = 0.0;
    for t in 0..t_len {
        s += p[t];
        let lo = b.s_min[t] - s;
        let hi = s - b.s_max[t];
        g[t] = lo;
        g[t_len + t] = hi;
        if u[t] != 0.0 {
            pen += u[t] * lo;
        }
        if u[t_len + t] != 0.0 {
            pen += u[t_len + t] * hi;
        }
    }
    psi + pen
}

/// `p†(u)`.
pub fn closed_form_primal(u: &DualIterate, inst: &EvInstance) -> Vec<f64> {
    let mut p = vec![0.0; inst.horizon()];
    primal_into(inst, &u.flat(), &mut p);
    p
}

/// `(ψ(u), ∇ψ(u))`.
pub fn dual_value_grad(u: &DualIterate, inst: &EvInstance) -> (f64, Vec<f64>) {
    let t = inst.horizon();
    let mut p = vec![0.0; t];
    let mut g = vec![0.0; 2 * t];
    let psi = value_grad_into(inst, &u.flat(), &mut p, &mut g);
    (psi, g)
}

#[inline]
fn relative_gap(phi: f64, psi: f64) -> f64 {
    (phi - psi) / phi.abs().max(psi.abs()).max(1.0)
}

/// Relative gap between a feasible point and a dual iterate.
pub fn duality_gap(p_feas: &[f64], u: &DualIterate, inst: &EvInstance) -> Result<f64> {
    if !model::satisfies(p_feas, inst.bounds, 1e-7) {
        return Err(Error::Invalid("duality_gap: point is not feasible".into()));
    }
    if u.u_lo.iter().chain(&u.u_hi).any(|x| *x < 0.0) {
        return Err(Error::Invalid("duality_gap: negative multiplier".into()));
    }
    let (psi, _) = dual_value_grad(u, inst);
    Ok(relative_gap(inst.objective(p_feas), psi))
}

/// `(1/ε)([u + εg]⁺ − u)` in the equivalent branch form.
pub fn projected_gradient(u: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = g.to_vec();
    project_grad_in_place(u, &mut out);
    out
}

#[inline]
fn project_grad_in_place(u: &[f64], g: &mut [f64]) {
    for (gj, uj) in g.iter_mut().zip(u) {
        if *uj + PROJ_EPS * *gj < 0.0 {
            *gj = -*uj / PROJ_EPS;
        }
    }
}

#[inline]
fn adam_step(u: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], step: u64, h: &AdamHyper) {
    let k = (step + 1) as i32;
    let c1 = 1.0 - h.beta1.powi(k);
    let c2 = 1.0 - h.beta2.powi(k);
    for j in 0..u.len() {
        m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
        v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
        let mh = m[j] / c1;
        let vh = v[j] / c2;
        u[j] = (u[j] + h.eta * mh / (vh.sqrt() + h.eps)).max(0.0);
    }
}

/// One projected-Adam step on a dual iterate.
pub fn adam_update(state: &mut DualIterate, g_proj: &[f64], hyper: &AdamHyper) {
    let mut u = state.flat();
    adam_step(
        &mut u,
        &mut state.adam_m,
        &mut state.adam_v,
        g_proj,
        state.step_count,
        hyper,
    );
    let t = state.horizon();
    state.u_lo.copy_from_slice(&u[..t]);
    state.u_hi.copy_from_slice(&u[t..]);
    state.step_count += 1;
}

struct Scratch {
    p: Vec<f64>,
    g: Vec<f64>,
    pf: Vec<f64>,
}

impl Scratch {
    fn new(t: usize) -> Self {
        Scratch {
            p: vec![0.0; t],
            g: vec![0.0; 2 * t],
            pf: vec![0.0; t],
        }
    }
}

struct Checkpoint {
    p: Vec<f64>,
    phi: f64,
    psi: f64,
}

/// Solves every instance, optionally warm-starting from given multipliers.
///
/// Warm starts reuse the multipliers only; Adam moments restart from zero.
/// Instances may have different horizons.
pub fn solve_batch(
    instances: &[EvInstance],
    warm: Option<&[DualIterate]>,
    opts: &SolveOptions,
) -> Result<BatchOutcome> {
    if let Some(w) = warm {
        if w.len() != instances.len() {
            return Err(Error::Dimension {
                what: "warm starts",
                expected: instances.len(),
                got: w.len(),
            });
        }
    }
    if opts.mask_period == 0 {
        return Err(Error::Invalid("mask_period must be at least 1".into()));
    }
    for (i, inst) in instances.iter().enumerate() {
        inst.check(i)?;
        if let Some(w) = warm {
            if w[i].horizon() != inst.horizon() {
                return Err(Error::Dimension {
                    what: "warm start horizon",
                    expected: inst.horizon(),
                    got: w[i].horizon(),
                });
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        groups.entry(inst.horizon()).or_default().push(i);
    }
    let mut results: Vec<Option<SubproblemResult>> = vec![None; instances.len()];
    let mut work = 0;
    for (t, members) in groups {
        work += solve_group(instances, warm, opts, t, &members, &mut results);
    }
    Ok(BatchOutcome {
        results: results.into_iter().map(|r| r.expect("every instance frozen")).collect(),
        work,
    })
}

fn solve_group(
    instances: &[EvInstance],
    warm: Option<&[DualIterate]>,
    opts: &SolveOptions,
    t_len: usize,
    members: &[usize],
    results: &mut [Option<SubproblemResult>],
) -> u64 {
    let w = 2 * t_len;
    let mut rows: Vec<usize> = members.to_vec();
    let mut u = vec![0.0; rows.len() * w];
    if let Some(ws) = warm {
        for (r, &i) in rows.iter().enumerate() {
            u[r * w..r * w + t_len].copy_from_slice(&ws[i].u_lo);
            u[r * w + t_len..(r + 1) * w].copy_from_slice(&ws[i].u_hi);
        }
    }
    let mut m = vec![0.0; rows.len() * w];
    let mut v = vec![0.0; rows.len() * w];
    let mut best = vec![f64::NEG_INFINITY; rows.len()];
    // lowest-objective feasible point seen at a checkpoint
    let mut keep_phi = vec![f64::INFINITY; rows.len()];
    let mut keep_p = vec![0.0; rows.len() * t_len];
    let hyper = AdamHyper {
        eta: 0.0,
        beta1: opts.beta1,
        beta2: opts.beta2,
        eps: opts.eps,
    };
    let mut work = 0u64;
    let mut open = rows.len();
    const MIN_LEN: usize = 8;

    for k in 0..=opts.max_iter {
        if k % opts.mask_period == 0 || k == opts.max_iter {
            let checks: Vec<Option<Checkpoint>> = u
                .par_chunks(w)
                .zip(rows.par_iter())
                .with_min_len(MIN_LEN)
                .map_init(
                    || Scratch::new(t_len),
                    |sc, (ur, &i)| {
                        if results[i].is_some() {
                            return None;
                        }
                        let inst = &instances[i];
                        let psi = value_grad_into(inst, ur, &mut sc.p, &mut sc.g);
                        model::project_feasible_into(&sc.p, inst.bounds, &mut sc.pf)
                            .expect("instance checked nonempty");
                        let phi = inst.objective(&sc.pf);
                        Some(Checkpoint {
                            p: sc.pf.clone(),
                            phi,
                            psi,
                        })
                    },
                )
                .collect();
            for (r, c) in checks.into_iter().enumerate() {
                let Some(c) = c else { continue };
                best[r] = best[r].max(c.psi);
                if c.phi < keep_phi[r] {
                    keep_phi[r] = c.phi;
                    keep_p[r * t_len..(r + 1) * t_len].copy_from_slice(&c.p);
                }
                let gap = relative_gap(keep_phi[r], best[r]);
                if gap <= opts.tol || k == opts.max_iter {
                    let p = keep_p[r * t_len..(r + 1) * t_len].to_vec();
                    debug_assert!(model::max_violation(&p, instances[rows[r]].bounds) <= 1e-6 + FEAS_TOL);
                    results[rows[r]] = Some(SubproblemResult {
                        converged: gap <= opts.tol,
                        p,
                        gap,
                        iterations: k,
                        phi: keep_phi[r],
                        psi: c.psi,
                        best_psi: best[r],
                        dual: DualIterate::from_flat(
                            &u[r * w..(r + 1) * w],
                            &m[r * w..(r + 1) * w],
                            &v[r * w..(r + 1) * w],
                            k as u64,
                        ),
                    });
                    open -= 1;
                }
            }
            if opts.masking {
                compact(
                    &mut rows,
                    &mut [(&mut u, w), (&mut m, w), (&mut v, w), (&mut keep_p, t_len)],
                    &mut [&mut best, &mut keep_phi],
                    results,
                );
            }
            if open == 0 {
                break;
            }
        }
        if k == opts.max_iter {
            break;
        }

        work += rows.len() as u64;
        let step = k as u64;
        u.par_chunks_mut(w)
            .zip(m.par_chunks_mut(w))
            .zip(v.par_chunks_mut(w))
            .zip(best.par_iter_mut())
            .zip(rows.par_iter())
            .with_min_len(MIN_LEN)
            .for_each_init(
                || Scratch::new(t_len),
                |sc, ((((ur, mr), vr), br), &i)| {
                    let inst = &instances[i];
                    let psi = value_grad_into(inst, ur, &mut sc.p, &mut sc.g);
                    if psi > *br {
                        *br = psi;
                    }
                    match opts.optimizer {
                        Optimizer::Adam => {
                            project_grad_in_place(ur, &mut sc.g);
                            let h = AdamHyper {
                                eta: opts.eta.unwrap_or(match inst.variant {
                                    Variant::S1 => 1.0,
                                    Variant::D1 => inst.reg,
                                }),
                                ..hyper
                            };
                            adam_step(ur, mr, vr, &sc.g, step, &h);
                        }
                        Optimizer::Pga => {
                            let eta = opts
                                .eta
                                .unwrap_or_else(|| 1.0 / lipschitz_constant(t_len, inst.variant, inst.reg));
                            for (uj, gj) in ur.iter_mut().zip(&sc.g) {
                                *uj = (*uj + eta * gj).max(0.0);
                            }
                        }
                    }
                },
            );
    }
    work
}

fn compact(
    rows: &mut Vec<usize>,
    blocks: &mut [(&mut Vec<f64>, usize)],
    scalars: &mut [&mut Vec<f64>],
    results: &[Option<SubproblemResult>],
) {
    let mut dst = 0;
    for src in 0..rows.len() {
        if results[rows[src]].is_some() {
            continue;
        }
        if dst != src {
            rows[dst] = rows[src];
            for (data, w) in blocks.iter_mut() {
                data.copy_within(src * *w..(src + 1) * *w, dst * *w);
            }
            for x in scalars.iter_mut() {
                x[dst] = x[src];
            }
        }
        dst += 1;
    }
    rows.truncate(dst);
    for (data, w) in blocks.iter_mut() {
        data.truncate(dst * *w);
    }
    for x in scalars.iter_mut() {
        x.truncate(dst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(p_min: &[f64], p_max: &[f64], s_min: &[f64], s_max: &[f64]) -> CumulativeBounds {
        CumulativeBounds::from_cumulative(p_min.to_vec(), p_max.to_vec(), s_min.to_vec(), s_max.to_vec()).unwrap()
    }

    fn dual(lo: &[f64], hi: &[f64]) -> DualIterate {
        let mut d = DualIterate::zeros(lo.len());
        d.u_lo = lo.to_vec();
        d.u_hi = hi.to_vec();
        d
    }

    #[test]
    fn closed_form_examples() {
        let b = bounds(&[0.0], &[3.0], &[0.0], &[3.0]);
        let inst = EvInstance::s1(vec![4.0], 1.0, &b);
        assert_eq!(closed_form_primal(&dual(&[1.0], &[0.0]), &inst), vec![2.5]);
        // a 1-D oracle: minimiser of (p-4)²/2 + p²/2 - p is 2.5
        let f = |p: f64| 0.5 * (p - 4.0) * (p - 4.0) + 0.5 * p * p - p;
        assert!(f(2.5) < f(2.49) && f(2.5) < f(2.51));

        let b = bounds(&[0.0; 2], &[5.0; 2], &[0.0; 2], &[10.0; 2]);
        let inst = EvInstance::s1(vec![1.0, 2.0], 1e-12, &b);
        let p = closed_form_primal(&DualIterate::zeros(2), &inst);
        assert!((p[0] - 1.0).abs() < 1e-11 && (p[1] - 2.0).abs() < 1e-11);

        let b = bounds(&[0.5; 2], &[5.0; 2], &[1.0; 2], &[10.0; 2]);
        let inst = EvInstance::d1(vec![1e3, 1e3], 1e-3, &b);
        assert_eq!(closed_form_primal(&DualIterate::zeros(2), &inst), vec![0.5, 0.5]);
    }

    #[test]
    fn gradient_vanishes_at_dual_optimum_of_active_cap() {
        // S1, T=1, target 4 but S_max = 2: optimum p = 2 with u_hi = 4 - 2(1+κ) ... κ = 1 → u_hi = 0
        // use κ = 0.5: stationarity 1.5 p - 4 + u_hi = 0 at p = 2 → u_hi = 1
        let b = bounds(&[0.0], &[3.0], &[0.0], &[2.0]);
        let inst = EvInstance::s1(vec![4.0], 0.5, &b);
        let u = dual(&[0.0], &[1.0]);
        let (psi, g) = dual_value_grad(&u, &inst);
        assert!(g[1].abs() < 1e-12);
        let gap = duality_gap(&[2.0], &u, &inst).unwrap();
        assert!(gap.abs() <= 1e-10, "{gap}");
        assert!((psi - inst.objective(&[2.0])).abs() < 1e-12);
    }

    #[test]
    fn gap_examples() {
        let b = bounds(&[0.0; 3], &[2.0; 3], &[0.0; 3], &[4.0; 3]);
        let inst = EvInstance::s1(vec![0.0; 3], 1e-3, &b);
        let z = DualIterate::zeros(3);
        assert_eq!(duality_gap(&[0.0; 3], &z, &inst).unwrap(), 0.0);
        assert!(duality_gap(&[1.0, 0.0, 0.0], &z, &inst).unwrap() > 0.0);
        assert!(duality_gap(&[3.0, 0.0, 0.0], &z, &inst).is_err());
    }

    #[test]
    fn projected_gradient_examples() {
        assert_eq!(projected_gradient(&[1.0, 2.0], &[-3.0, 4.0]), vec![-3.0, 4.0]);
        assert_eq!(projected_gradient(&[0.0], &[-5.0]), vec![0.0]);
        assert_eq!(projected_gradient(&[0.0], &[5.0]), vec![5.0]);
    }

    #[test]
    fn adam_examples() {
        let h = AdamHyper::default();
        let mut d = dual(&[0.3], &[0.7]);
        adam_update(&mut d, &[0.0, 0.0], &h);
        assert_eq!(d.u_lo, vec![0.3]);
        assert_eq!(d.u_hi, vec![0.7]);
        assert_eq!(d.adam_m, vec![0.0, 0.0]);

        let mut d = DualIterate::zeros(1);
        adam_update(&mut d, &[1.0, 0.0], &h);
        assert!((d.u_lo[0] - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(d.step_count, 1);

        let mut d = dual(&[0.1], &[0.0]);
        adam_update(&mut d, &[-1e6, -1.0], &h);
        assert!(d.u_lo[0] >= 0.0 && d.u_hi[0] >= 0.0);
    }

    #[test]
    fn lipschitz_small_horizon() {
        assert!((h_norm_sq(1) - 1.0).abs() < 1e-14);
        assert!((lipschitz_constant(1, Variant::S1, 0.5) - 2.0 / 1.5).abs() < 1e-14);
        assert!((lipschitz_constant(1, Variant::D1, 0.5) - 4.0).abs() < 1e-14);
        let t = 168.0;
        assert!((h_norm_sq(168) / (0.405 * t * t) - 1.0).abs() < 0.01);
    }

    #[test]
    fn origin_optimal_instance_converges_immediately() {
        let b = bounds(&[0.0; 4], &[2.0; 4], &[0.0; 4], &[4.0; 4]);
        let inst = EvInstance::s1(vec![0.0; 4], 1e-3, &b);
        let out = solve_batch(&[inst], None, &SolveOptions::default()).unwrap();
        let r = &out.results[0];
        assert!(r.converged && r.iterations == 0 && r.gap.abs() <= 1e-10);
        assert_eq!(out.work, 0);
    }

    #[test]
    fn warm_start_and_mixed_horizons() {
        let b1 = bounds(&[0.0], &[3.0], &[0.0], &[2.0]);
        let b2 = bounds(&[0.0; 3], &[2.0; 3], &[0.0, 1.0, 4.0], &[2.0, 3.0, 5.0]);
        let insts = vec![
            EvInstance::s1(vec![4.0], 0.5, &b1),
            EvInstance::s1(vec![0.0, 0.0, 0.0], 1e-3, &b2),
        ];
        let opts = SolveOptions {
            tol: 1e-8,
            mask_period: 5,
            ..SolveOptions::default()
        };
        let cold = solve_batch(&insts, None, &opts).unwrap();
        for r in &cold.results {
            assert!(r.converged, "{r:?}");
            assert!(r.psi <= r.phi + 1e-10);
        }
        let duals: Vec<DualIterate> = cold.results.iter().map(|r| r.dual.clone()).collect();
        let warm = solve_batch(&insts, Some(&duals), &opts).unwrap();
        assert!(warm.work <= cold.work);
        for r in &warm.results {
            assert!(r.converged);
        }
    }

    #[test]
    fn infeasible_instance_is_rejected() {
        let b = bounds(&[0.0], &[1.0], &[2.0], &[3.0]);
        let inst = EvInstance::s1(vec![0.0], 1e-3, &b);
        assert!(matches!(
            solve_batch(&[inst], None, &SolveOptions::default()),
            Err(Error::InfeasibleInstance { index: 0 })
        ));
    }
}

//! Per-feeder solvers: the ADMM consensus step and the grid dual value.
//!
//! The consensus step for feeder `s` is
//!
//! ```text
//!   min_{v >= 0, l}  v + ϱ/2 ‖l − D‖²   s.t.  l − C <= v
//! ```
//!
//! whose minimiser follows from a single descending sort of `δ = D − C`.

use serde::{Deserialize, Serialize};

/// KKT point of the consensus step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSolution {
    /// Peak violation.
    pub v: f64,
    pub load: Vec<f64>,
    /// Multiplier of `v >= 0`.
    pub xi0: f64,
    /// Multipliers of `l_t − C_t <= v`.
    pub xi: Vec<f64>,
}

/// Optimal value of the grid dual term, with an explicit `−∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D2Value {
    Finite(f64),
    NegInfinity,
}

impl D2Value {
    pub fn finite(self) -> Option<f64> {
        match self {
            D2Value::Finite(x) => Some(x),
            D2Value::NegInfinity => None,
        }
    }
}

/// `v + ϱ/2 Σ ([δ_t − v]⁺)²`, the consensus objective after eliminating `l`.
pub fn s2_objective(v: f64, delta: &[f64], rho: f64) -> f64 {
    v + 0.5 * rho * delta.iter().map(|d| (d - v).max(0.0).powi(2)).sum::<f64>()
}

pub fn solve_s2(target: &[f64], cap: &[f64], rho: f64) -> FeederSolution {
    assert_eq!(target.len(), cap.len(), "solve_s2: length mismatch");
    assert!(rho > 0.0, "solve_s2: rho must be positive");
    let t_len = target.len();
    let delta: Vec<f64> = target.iter().zip(cap).map(|(d, c)| d - c).collect();
    let mut sorted = delta.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.push(0.0);

    let mut cum = Vec::with_capacity(t_len);
    let mut acc = 0.0;
    for d in &sorted[..t_len] {
        acc += d.max(0.0);
        cum.push(acc);
    }

    let v = if rho * acc <= 1.0 {
        0.0
    } else {
        let inv = 1.0 / rho;
        let hit = (0..t_len).find_map(|k| {
            let v = (cum[k] - inv) / (k as f64 + 1.0);
            (sorted[k + 1] < v && v <= sorted[k]).then_some(v)
        });
        hit.unwrap_or_else(|| fallback_root(&sorted, &cum, rho))
    };

    let load = target.iter().zip(cap).map(|(d, c)| (c + v).min(*d)).collect();
    let xi: Vec<f64> = delta.iter().map(|d| rho * (d - v).max(0.0)).collect();
    let xi0 = if v > 0.0 {
        0.0
    } else {
        (1.0 - xi.iter().sum::<f64>()).max(0.0)
    };
    FeederSolution { v, load, xi0, xi }
}

/// Interval search that tolerates rounding at the interval ends: clamps each
/// candidate into its interval and keeps the one with the smallest
/// stationarity residual.
fn fallback_root(sorted: &[f64], cum: &[f64], rho: f64) -> f64 {
    let t_len = cum.len();
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..t_len {
        let hi = sorted[k];
        let lo = sorted[k + 1].max(0.0);
        if hi < lo {
            continue;
        }
        let v = ((cum[k] - 1.0 / rho) / (k as f64 + 1.0)).clamp(lo, hi);
        let res = (1.0 - rho * sorted[..t_len].iter().map(|d| (d - v).max(0.0)).sum::<f64>()).abs();
        if res < best.0 {
            best = (res, v);
        }
    }
    best.1
}

/// Largest violation among the KKT conditions of the consensus step.
pub fn s2_kkt_residual(sol: &FeederSolution, target: &[f64], cap: &[f64], rho: f64) -> f64 {
    let mut r: f64 = 0.0;
    r = r.max(-sol.v).max(-sol.xi0);
    r = r.max((sol.xi0 * sol.v).abs());
    r = r.max((1.0 - sol.xi0 - sol.xi.iter().sum::<f64>()).abs());
    for t in 0..target.len() {
        let slack = sol.load[t] - cap[t] - sol.v;
        r = r
            .max(slack)
            .max(-sol.xi[t])
            .max((sol.xi[t] * slack).abs())
            .max((rho * (sol.load[t] - target[t]) + sol.xi[t]).abs());
    }
    r
}

/// Optimal value of the grid dual term: `−⟨λ, C⟩` when `λ >= 0` and
/// `Σλ <= 1`, otherwise unbounded below. Comparisons are exact.
pub fn solve_d2(price: &[f64], cap: &[f64]) -> D2Value {
    assert_eq!(price.len(), cap.len(), "solve_d2: length mismatch");
    let sum: f64 = price.iter().sum();
    if sum > 1.0 || price.iter().any(|x| *x < 0.0) {
        return D2Value::NegInfinity;
    }
    D2Value::Finite(-price.iter().zip(cap).map(|(l, c)| l * c).sum::<f64>())
}

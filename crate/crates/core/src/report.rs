//! Run reports, schedule files and run comparisons.
//!
//! Reports contain no timestamps or host data other than the worker count,
//! so identical runs serialise to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmOptions, Certificate, RunOutcome, Termination, TraceRecord};
use crate::error::{io, Result};
use crate::mat::Mat;
use crate::model::{self, Scenario};
use crate::scenario::metrics::{metrics, MetricsReport, VIOLATION_THRESHOLD_MW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Solve,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub n_evs: usize,
    pub n_feeders: usize,
    pub horizon: usize,
    pub unit_scale: f64,
    pub dropped_evs: Vec<String>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
}

impl ScenarioSummary {
    pub fn new(scenario: &Scenario, dropped: Vec<String>, config_sha256: Option<String>, seed: Option<u64>) -> Self {
        ScenarioSummary {
            n_evs: scenario.n_evs(),
            n_feeders: scenario.n_feeders(),
            horizon: scenario.horizon(),
            unit_scale: scenario.unit_scale,
            dropped_evs: dropped,
            config_sha256,
            seed,
        }
    }
}

/// Certificate without the price matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub primal: f64,
    pub dual: Option<f64>,
    pub rel_gap: Option<f64>,
    pub projected: bool,
    pub raw_dual: Option<f64>,
    pub d1_converged: usize,
    pub best_dual: Option<f64>,
    pub best_rel_gap: Option<f64>,
}

impl From<&Certificate> for CertificateSummary {
    fn from(c: &Certificate) -> Self {
        CertificateSummary {
            primal: c.primal,
            dual: c.dual,
            rel_gap: c.rel_gap,
            projected: c.projected,
            raw_dual: c.raw_dual,
            d1_converged: c.d1_converged,
            best_dual: c.best_dual,
            best_rel_gap: c.best_rel_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: RunKind,
    pub scenario: ScenarioSummary,
    pub threads: usize,
    pub options: Option<AdmmOptions>,
    pub termination: Option<Termination>,
    pub iterations: usize,
    pub gap_tol_met: Option<bool>,
    pub objective: f64,
    pub grid_cost: f64,
    pub ev_cost: f64,
    pub certificate: Option<CertificateSummary>,
    pub decentralized_grid_cost: Option<f64>,
    pub metrics: MetricsReport,
    pub trace: Vec<TraceRecord>,
}

impl RunReport {
    pub fn from_solve(
        scenario: &Scenario,
        summary: ScenarioSummary,
        opts: &AdmmOptions,
        out: &RunOutcome,
        threads: usize,
    ) -> Self {
        let c = &out.certificate;
        RunReport {
            kind: RunKind::Solve,
            scenario: summary,
            threads,
            options: Some(opts.clone()),
            termination: Some(out.termination),
            iterations: out.state.iter,
            gap_tol_met: Some(c.best_rel_gap.is_some_and(|g| g <= opts.gap_tol)),
            objective: c.primal,
            grid_cost: c.grid_cost,
            ev_cost: c.ev_cost,
            certificate: Some(c.into()),
            decentralized_grid_cost: Some(c.decentralized_grid_cost),
            metrics: metrics(&out.state.hat_l, &scenario.feeders.capacity, VIOLATION_THRESHOLD_MW),
            trace: out.state.trace.clone(),
        }
    }

    /// Report for a fixed schedule (no optimisation). `kappa` weighs the EV cost.
    pub fn from_schedule(
        scenario: &Scenario,
        summary: ScenarioSummary,
        profiles: &Mat,
        kappa: f64,
        threads: usize,
    ) -> Self {
        let load = scenario.aggregate(profiles);
        let ev_cost: f64 = (0..profiles.rows())
            .map(|i| model::ev_cost(profiles.row(i), kappa))
            .sum();
        let grid_cost = model::grid_cost(&load, &scenario.feeders.capacity);
        RunReport {
            kind: RunKind::Baseline,
            scenario: summary,
            threads,
            options: None,
            termination: None,
            iterations: 0,
            gap_tol_met: None,
            objective: grid_cost + ev_cost,
            grid_cost,
            ev_cost,
            certificate: None,
            decentralized_grid_cost: None,
            metrics: metrics(&load, &scenario.feeders.capacity, VIOLATION_THRESHOLD_MW),
            trace: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `ev_id,slot,kw` rows.
pub fn write_schedule(path: &Path, scenario: &Scenario, profiles: &Mat) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["ev_id", "slot", "kw"])?;
    for (i, prof) in scenario.profiles.iter().enumerate() {
        for (t, x) in profiles.row(i).iter().enumerate() {
            w.write_record([prof.id.clone(), t.to_string(), format!("{x}")])?;
        }
    }
    w.flush().map_err(|e| io(path, e))
}

/// Plot-ready trace: one row per iteration, empty cells for unsampled values.
pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record([
        "iter",
        "grid_cost",
        "ev_cost",
        "objective",
        "dual_bound",
        "rel_gap",
        "best_rel_gap",
        "decentralized_grid_cost",
        "primal_residual",
        "dual_residual",
        "s1_work",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            format!("{}", r.grid_cost),
            format!("{}", r.ev_cost),
            format!("{}", r.objective),
            opt(r.dual_bound),
            opt(r.rel_gap),
            opt(r.best_rel_gap),
            opt(r.decentralized_grid_cost),
            format!("{}", r.primal_residual),
            format!("{}", r.dual_residual),
            r.s1_work.to_string(),
        ])?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Ratio `a / b`: 1 when both are zero, `None` when only `b` is.
pub fn ratio(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        (a == 0.0).then_some(1.0)
    } else {
        Some(a / b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub name: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a / b`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a_kind: RunKind,
    pub b_kind: RunKind,
    pub metrics: Vec<MetricComparison>,
}

pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    let same = a.scenario.n_evs == b.scenario.n_evs
        && a.scenario.n_feeders == b.scenario.n_feeders
        && a.scenario.horizon == b.scenario.horizon;
    if !same {
        return Err(crate::error::Error::Invalid(format!(
            "reports describe different scenarios ({}x{}x{} vs {}x{}x{})",
            a.scenario.n_evs,
            a.scenario.n_feeders,
            a.scenario.horizon,
            b.scenario.n_evs,
            b.scenario.n_feeders,
            b.scenario.horizon
        )));
    }
    let row = |name: &str, x: Option<f64>, y: Option<f64>| MetricComparison {
        name: name.to_string(),
        a: x,
        b: y,
        ratio: match (x, y) {
            (Some(x), Some(y)) => ratio(x, y),
            _ => None,
        },
    };
    let (ma, mb) = (&a.metrics, &b.metrics);
    Ok(Comparison {
        a_kind: a.kind,
        b_kind: b.kind,
        metrics: vec![
            row(
                "total_max_violation",
                Some(ma.total_max_violation),
                Some(mb.total_max_violation),
            ),
            row(
                "feeders_over_threshold",
                Some(ma.feeders_over_threshold as f64),
                Some(mb.feeders_over_threshold as f64),
            ),
            row("pvr_load", ma.pvr_load, mb.pvr_load),
            row("pvr_overload", ma.pvr_overload, mb.pvr_overload),
            row("objective", Some(a.objective), Some(b.objective)),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_cases() {
        assert_eq!(ratio(0.0, 0.0), Some(1.0));
        assert_eq!(ratio(1.0, 0.0), None);
        assert_eq!(ratio(1.0, 4.0), Some(0.25));
    }
}

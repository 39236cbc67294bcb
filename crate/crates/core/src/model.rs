//! Domain model: EV profiles, the cumulative-energy form of the mobility-aware
//! feasible set, the O(T) feasibility oracle and greedy projection, and the
//! grid/EV objectives.
//!
//! A charging profile `p` (kW per hourly slot, so kW and kWh/slot coincide) is
//! feasible when
//!
//! ```text
//!   p_min <= p <= p_max          (power box)
//!   s_min <= H p <= s_max        (H = running-sum operator)
//! ```
//!
//! where `s_min`/`s_max` come from the energy bounds, the initial energy and
//! the cumulative trip consumption. Emptiness is decided by comparing the
//! backward envelopes `b_min`/`b_max`; a point of the set close to any target
//! is produced by clipping the running sum into those envelopes slot by slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Absolute tolerance (kWh) for feasibility assertions.
pub const FEAS_TOL: f64 = 1e-9;

/// Returned when a feasible set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infeasible;

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("feasible set is empty")
    }
}

impl std::error::Error for Infeasible {}

/// Per-EV data defining its feasible charging set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvProfile {
    pub id: String,
    /// Battery capacity; used for state-of-charge fractions.
    pub battery_kwh: f64,
    /// Energy at the start of the horizon.
    pub e_init: f64,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    /// Energy bounds after each slot.
    pub e_min: Vec<f64>,
    pub e_max: Vec<f64>,
    /// Trip consumption in each slot.
    pub demand: Vec<f64>,
}

impl EvProfile {
    pub fn horizon(&self) -> usize {
        self.p_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.p_min.len();
        if t == 0 {
            return Err(Error::Invalid(format!("EV {}: empty horizon", self.id)));
        }
        for (what, v) in [
            ("p_max", &self.p_max),
            ("e_min", &self.e_min),
            ("e_max", &self.e_max),
            ("demand", &self.demand),
        ] {
            if v.len() != t {
                return Err(Error::Dimension {
                    what,
                    expected: t,
                    got: v.len(),
                });
            }
        }
        let all = [&self.p_min, &self.p_max, &self.e_min, &self.e_max, &self.demand];
        if !self.e_init.is_finite() || all.iter().any(|v| v.iter().any(|x| x.is_nan())) {
            return Err(Error::Invalid(format!("EV {}: non-numeric value", self.id)));
        }
        if let Some(slot) = (0..t).find(|&k| self.p_min[k] > self.p_max[k]) {
            return Err(Error::Invalid(format!("EV {}: p_min > p_max in slot {slot}", self.id)));
        }
        if let Some(slot) = (0..t).find(|&k| self.demand[k] < 0.0) {
            return Err(Error::Invalid(format!(
                "EV {}: negative demand in slot {slot}",
                self.id
            )));
        }
        if self.e_init < 0.0 {
            return Err(Error::Invalid(format!("EV {}: negative e_init", self.id)));
        }
        Ok(())
    }
}

/// Cumulative form of an EV's feasible set.
///
/// `s_min`/`s_max` are already intersected with the cumulative power range
/// `[c_min, c_max]`; this leaves the set unchanged (the power box implies it)
/// and makes the necessary-condition chain meaningful for sets whose raw
/// energy window is wider than what the charger could ever deliver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeBounds {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub s_min: Vec<f64>,
    pub s_max: Vec<f64>,
    pub c_min: Vec<f64>,
    pub c_max: Vec<f64>,
    pub b_min: Vec<f64>,
    pub b_max: Vec<f64>,
}

impl CumulativeBounds {
    /// Builds bounds from a power box and raw cumulative-energy bounds.
    pub fn from_cumulative(p_min: Vec<f64>, p_max: Vec<f64>, s_min_raw: Vec<f64>, s_max_raw: Vec<f64>) -> Result<Self> {
        let t = p_min.len();
        for (what, v) in [("p_max", &p_max), ("s_min", &s_min_raw), ("s_max", &s_max_raw)] {
            if v.len() != t {
                return Err(Error::Dimension {
                    what,
                    expected: t,
                    got: v.len(),
                });
            }
        }
        let c_min = prefix_sum(&p_min);
        let c_max = prefix_sum(&p_max);
        let s_min: Vec<f64> = s_min_raw.iter().zip(&c_min).map(|(s, c)| s.max(*c)).collect();
        let s_max: Vec<f64> = s_max_raw.iter().zip(&c_max).map(|(s, c)| s.min(*c)).collect();

        let mut b_min = vec![0.0; t];
        let mut b_max = vec![0.0; t];
        let mut g_min = f64::NEG_INFINITY;
        let mut g_max = f64::INFINITY;
        for k in (0..t).rev() {
            g_min = g_min.max(s_min[k] - c_max[k]);
            g_max = g_max.min(s_max[k] - c_min[k]);
            b_min[k] = c_max[k] + g_min;
            b_max[k] = c_min[k] + g_max;
        }
        Ok(CumulativeBounds {
            p_min,
            p_max,
            s_min,
            s_max,
            c_min,
            c_max,
            b_min,
            b_max,
        })
    }

    pub fn horizon(&self) -> usize {
        self.p_min.len()
    }

    /// Necessary and sufficient emptiness test.
    pub fn is_nonempty(&self) -> bool {
        check_necessary(self) && is_feasible(self)
    }
}

/// Converts an EV profile to cumulative form in O(T).
pub fn derive_bounds(profile: &EvProfile) -> Result<CumulativeBounds> {
    profile.validate()?;
    let mut cum_demand = 0.0;
    let mut s_min = Vec::with_capacity(profile.horizon());
    let mut s_max = Vec::with_capacity(profile.horizon());
    for k in 0..profile.horizon() {
        cum_demand += profile.demand[k];
        s_min.push(profile.e_min[k] - profile.e_init + cum_demand);
        s_max.push(profile.e_max[k] - profile.e_init + cum_demand);
    }
    CumulativeBounds::from_cumulative(profile.p_min.clone(), profile.p_max.clone(), s_min, s_max)
}

/// The elementwise chain `p_min <= p_max`, `c_min <= s_min <= s_max <= c_max`.
pub fn check_necessary(b: &CumulativeBounds) -> bool {
    (0..b.horizon()).all(|k| {
        b.p_min[k] <= b.p_max[k]
            && b.c_min[k] <= b.s_min[k] + FEAS_TOL
            && b.s_min[k] <= b.s_max[k] + FEAS_TOL
            && b.s_max[k] <= b.c_max[k] + FEAS_TOL
    })
}

/// `b_min <= b_max` elementwise. Only meaningful once [`check_necessary`] holds.
pub fn is_feasible(b: &CumulativeBounds) -> bool {
    b.b_min.iter().zip(&b.b_max).all(|(lo, hi)| *lo <= *hi + FEAS_TOL)
}

/// Largest constraint violation of `p` (0 when feasible).
pub fn max_violation(p: &[f64], b: &CumulativeBounds) -> f64 {
    let mut worst: f64 = 0.0;
    let mut s = 0.0;
    for k in 0..b.horizon() {
        s += p[k];
        worst = worst
            .max(b.p_min[k] - p[k])
            .max(p[k] - b.p_max[k])
            .max(b.s_min[k] - s)
            .max(s - b.s_max[k]);
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

pub fn satisfies(p: &[f64], b: &CumulativeBounds, tol: f64) -> bool {
    p.len() == b.horizon() && max_violation(p, b) <= tol
}

/// Greedy projection: a feasible profile close to `target`.
///
/// Targets that are already feasible are returned unchanged, which also makes
/// the map idempotent.
pub fn project_feasible(target: &[f64], b: &CumulativeBounds) -> Result<Vec<f64>, Infeasible> {
    let mut out = vec![0.0; b.horizon()];
    project_feasible_into(target, b, &mut out)?;
    Ok(out)
}

pub fn project_feasible_into(target: &[f64], b: &CumulativeBounds, out: &mut [f64]) -> Result<(), Infeasible> {
    debug_assert_eq!(target.len(), b.horizon());
    if !b.is_nonempty() {
        return Err(Infeasible);
    }
    if satisfies(target, b, FEAS_TOL) {
        out.copy_from_slice(target);
        return Ok(());
    }
    greedy_fill(b, out, |k, _| target[k]);
    Ok(())
}

/// Runs the slot-by-slot clip with a target supplied online.
///
/// `target_at(t, s_prev)` receives the cumulative energy charged before slot
/// `t`. The caller must have established that the set is nonempty.
pub(crate) fn greedy_fill(b: &CumulativeBounds, out: &mut [f64], mut target_at: impl FnMut(usize, f64) -> f64) {
    let mut s = 0.0;
    for k in 0..b.horizon() {
        let mut x = target_at(k, s);
        if x.is_nan() {
            x = 0.0;
        }
        let lo = b.b_min[k].max(s + b.p_min[k]);
        let hi = b.b_max[k].min(s + b.p_max[k]);
        let cand = s + x;
        if lo <= cand && cand <= hi {
            // inactive clip: keep the target bit-for-bit
            out[k] = x;
            s = cand;
        } else {
            let next = if cand < lo { lo } else { hi };
            out[k] = next - s;
            s = next;
        }
    }
}

/// EV disutility `kappa/2 * ||p||^2`.
pub fn ev_cost(p: &[f64], kappa: f64) -> f64 {
    0.5 * kappa * p.iter().map(|x| x * x).sum::<f64>()
}

/// Peak overload `max_t [load_t - cap_t]^+`.
pub fn feeder_violation(load: &[f64], cap: &[f64]) -> f64 {
    load.iter().zip(cap).map(|(l, c)| l - c).fold(0.0, f64::max)
}

/// Sum of feeder violations.
pub fn grid_cost(loads: &Mat, caps: &Mat) -> f64 {
    assert_eq!((loads.rows(), loads.cols()), (caps.rows(), caps.cols()));
    (0..loads.rows())
        .map(|s| feeder_violation(loads.row(s), caps.row(s)))
        .sum()
}

/// `Γ`: feeder index of each EV in each slot, `None` while away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMap {
    n_evs: usize,
    horizon: usize,
    cells: Vec<Option<u32>>,
}

impl LocationMap {
    pub fn new(n_evs: usize, horizon: usize) -> Self {
        LocationMap {
            n_evs,
            horizon,
            cells: vec![None; n_evs * horizon],
        }
    }

    pub fn from_rows(rows: &[Vec<Option<usize>>], horizon: usize) -> Result<Self> {
        let mut map = LocationMap::new(rows.len(), horizon);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != horizon {
                return Err(Error::Dimension {
                    what: "location row",
                    expected: horizon,
                    got: r.len(),
                });
            }
            for (t, cell) in r.iter().enumerate() {
                map.set(i, t, *cell);
            }
        }
        Ok(map)
    }

    pub fn n_evs(&self) -> usize {
        self.n_evs
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> Option<usize> {
        self.cells[i * self.horizon + t].map(|s| s as usize)
    }

    pub fn set(&mut self, i: usize, t: usize, feeder: Option<usize>) {
        self.cells[i * self.horizon + t] = feeder.map(|s| s as u32);
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Option<u32>] {
        &self.cells[i * self.horizon..(i + 1) * self.horizon]
    }

    /// `N[s][t]`: number of EVs located at feeder `s` in slot `t`.
    pub fn occupancy(&self, n_feeders: usize) -> Mat {
        let mut n = Mat::zeros(n_feeders, self.horizon);
        for i in 0..self.n_evs {
            for (t, cell) in self.row(i).iter().enumerate() {
                if let Some(s) = cell {
                    n.add(*s as usize, t, 1.0);
                }
            }
        }
        n
    }

    /// Copy with EVs reordered: row `i` of the result is row `order[i]` here.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(order.len() * self.horizon);
        for &i in order {
            cells.extend_from_slice(self.row(i));
        }
        LocationMap {
            n_evs: order.len(),
            horizon: self.horizon,
            cells,
        }
    }
}

/// Hosting capacity per feeder and slot, in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSeries {
    pub ids: Vec<String>,
    pub capacity: Mat,
}

impl FeederSeries {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub profiles: Vec<EvProfile>,
    pub location: LocationMap,
    pub feeders: FeederSeries,
    /// Factor converting summed EV power (kW) into grid units (MW).
    pub unit_scale: f64,
}

impl Scenario {
    pub fn n_evs(&self) -> usize {
        self.profiles.len()
    }

    pub fn n_feeders(&self) -> usize {
        self.feeders.len()
    }

    pub fn horizon(&self) -> usize {
        self.feeders.capacity.cols()
    }

    /// Structural checks. Does not test feasibility of the EVs.
    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let s = self.n_feeders();
        if self.feeders.capacity.rows() != s {
            return Err(Error::Dimension {
                what: "capacity rows",
                expected: s,
                got: self.feeders.capacity.rows(),
            });
        }
        if self.location.n_evs() != self.n_evs() {
            return Err(Error::Dimension {
                what: "location rows",
                expected: self.n_evs(),
                got: self.location.n_evs(),
            });
        }
        if self.location.horizon() != t {
            return Err(Error::Dimension {
                what: "location horizon",
                expected: t,
                got: self.location.horizon(),
            });
        }
        if !(self.unit_scale > 0.0) {
            return Err(Error::Invalid("unit_scale must be positive".into()));
        }
        if let Some(x) = self
            .feeders
            .capacity
            .as_slice()
            .iter()
            .find(|x| !(**x >= 0.0) || !x.is_finite())
        {
            return Err(Error::Invalid(format!(
                "capacity entry {x} is not a finite nonnegative value"
            )));
        }
        for (i, prof) in self.profiles.iter().enumerate() {
            prof.validate()?;
            if prof.horizon() != t {
                return Err(Error::Dimension {
                    what: "profile horizon",
                    expected: t,
                    got: prof.horizon(),
                });
            }
            for (k, cell) in self.location.row(i).iter().enumerate() {
                match cell {
                    Some(f) if *f as usize >= s => {
                        return Err(Error::Invalid(format!(
                            "EV {} slot {k}: feeder index {f} out of range",
                            prof.id
                        )))
                    }
                    None if prof.p_max[k] != 0.0 || prof.p_min[k] != 0.0 => {
                        return Err(Error::Invalid(format!(
                            "EV {} slot {k}: away from the network but power bounds are not zero",
                            prof.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<Vec<CumulativeBounds>> {
        self.profiles.iter().map(derive_bounds).collect()
    }

    /// Removes EVs whose feasible set is empty and returns their ids.
    pub fn drop_infeasible(&mut self) -> Result<Vec<String>> {
        let mut keep = Vec::with_capacity(self.n_evs());
        let mut dropped = Vec::new();
        for (i, prof) in self.profiles.iter().enumerate() {
            if derive_bounds(prof)?.is_nonempty() {
                keep.push(i);
            } else {
                log::warn!("dropping EV {}: mobility constraints cannot be met", prof.id);
                dropped.push(prof.id.clone());
            }
        }
        if !dropped.is_empty() {
            self.location = self.location.select(&keep);
            self.profiles = keep.iter().map(|&i| self.profiles[i].clone()).collect();
        }
        Ok(dropped)
    }

    /// `unit_scale * sum_i A_i p_i` for an I×T profile matrix.
    pub fn aggregate(&self, profiles: &Mat) -> Mat {
        aggregate_load(profiles, &self.location, self.n_feeders(), self.unit_scale)
    }
}

/// Scatters EV power onto feeders. Per cell, EVs are summed in ascending
/// index order so the result is reproducible bit-for-bit.
pub fn aggregate_load(profiles: &Mat, location: &LocationMap, n_feeders: usize, unit_scale: f64) -> Mat {
    let t_len = location.horizon();
    assert_eq!(profiles.rows(), location.n_evs());
    assert_eq!(profiles.cols(), t_len);
    let mut load = Mat::zeros(n_feeders, t_len);
    for i in 0..profiles.rows() {
        let p = profiles.row(i);
        for (t, cell) in location.row(i).iter().enumerate() {
            if let Some(s) = cell {
                load.add(*s as usize, t, p[t]);
            }
        }
    }
    for x in load.as_mut_slice() {
        *x *= unit_scale;
    }
    load
}

/// `scale * A_i^T m`: reads the feeder entry the EV sits at in each slot.
pub fn gather(m: &Mat, loc_row: &[Option<u32>], scale: f64, out: &mut [f64]) {
    for (t, (o, cell)) in out.iter_mut().zip(loc_row).enumerate() {
        *o = match cell {
            Some(s) => scale * m.get(*s as usize, t),
            None => 0.0,
        };
    }
}

pub fn prefix_sum(x: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

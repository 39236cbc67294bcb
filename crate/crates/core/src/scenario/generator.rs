//! Seeded synthetic scenarios.
//!
//! Each EV gets a home feeder (residential pool) and, if it commutes, a work
//! feeder (commercial pool). Weekdays bring a commute and maybe an errand;
//! late-shift commuters work every day, and those whose shift crosses
//! midnight start the horizon at work. Weekend days may bring a long trip
//! that leaves the region, during which the EV is away from every feeder.
//! Trip energy is spread evenly over the trip's slots. After sampling, a charge-as-fast-as-possible witness is
//! simulated; if it runs the battery below zero or misses the terminal level
//! the EV's trip energy is scaled down and the check repeated.
//!
//! Randomness: feeders draw from stream 0 of a ChaCha8 generator keyed by the
//! seed, EV `i` from stream `i + 1`, so EVs can be generated in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{derive_bounds, EvProfile, FeederSeries, LocationMap, Scenario};

/// Generator parameters. Energies in kWh, powers in kW, hours as slot counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_evs: usize,
    pub n_feeders: usize,
    pub horizon: usize,
    pub charger_kw: f64,
    pub battery_kwh_min: f64,
    pub battery_kwh_max: f64,
    /// Initial state of charge range, as fractions of the battery.
    pub init_soc_min: f64,
    pub init_soc_max: f64,
    /// Fraction of EVs commuting on weekdays.
    pub commuter_share: f64,
    /// Fraction of commuters on a late shift.
    pub shift_share: f64,
    /// Late-shift departure hour range.
    pub shift_depart_min: usize,
    pub shift_depart_max: usize,
    /// Mean and coefficient of variation of one commute leg.
    pub commute_kwh_mean: f64,
    pub commute_kwh_cv: f64,
    pub work_hours_min: usize,
    pub work_hours_max: usize,
    /// Daily probability of an errand (two one-slot legs and a short stay).
    pub errand_prob: f64,
    pub errand_kwh_mean: f64,
    pub errand_stay_max: usize,
    /// Probability of a long out-of-region trip on each weekend day.
    pub long_trip_prob: f64,
    pub long_trip_kwh_min: f64,
    pub long_trip_kwh_max: f64,
    pub long_trip_slots_min: usize,
    pub long_trip_slots_max: usize,
    /// Fraction of feeders serving homes; the rest serve workplaces.
    pub residential_share: f64,
    /// Hosting capacity per EV at the feeder's peak occupancy (kW).
    pub capacity_kw_per_ev: f64,
    /// Capacity multiplier outside the night window.
    pub day_factor: f64,
    /// Night window `[night_start, night_end)` in hours of the day, wrapping midnight.
    pub night_start: usize,
    pub night_end: usize,
    /// Log-scale spread of the per-feeder capacity multiplier.
    pub heterogeneity_sigma: f64,
    /// kW to MW for grid quantities.
    pub unit_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_evs: 1000,
            n_feeders: 20,
            horizon: 168,
            charger_kw: 10.0,
            battery_kwh_min: 50.0,
            battery_kwh_max: 80.0,
            init_soc_min: 0.3,
            init_soc_max: 0.9,
            commuter_share: 0.8,
            shift_share: 0.15,
            shift_depart_min: 12,
            shift_depart_max: 23,
            commute_kwh_mean: 6.0,
            commute_kwh_cv: 0.4,
            work_hours_min: 7,
            work_hours_max: 10,
            errand_prob: 0.4,
            errand_kwh_mean: 2.5,
            errand_stay_max: 3,
            long_trip_prob: 0.25,
            long_trip_kwh_min: 15.0,
            long_trip_kwh_max: 40.0,
            long_trip_slots_min: 3,
            long_trip_slots_max: 8,
            residential_share: 0.6,
            capacity_kw_per_ev: 0.35,
            day_factor: 0.6,
            night_start: 22,
            night_end: 7,
            heterogeneity_sigma: 0.25,
            unit_scale: 1e-3,
            seed: 42,
        }
    }
}

/// Samples of a lognormal leg are capped at this multiple of the mean.
const LEG_CAP: f64 = 3.0;

fn cfg_err(param: &'static str, msg: impl Into<String>) -> Error {
    Error::Config { param, msg: msg.into() }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (param, v) in [
            ("n_evs", self.n_evs),
            ("n_feeders", self.n_feeders),
            ("horizon", self.horizon),
            ("work_hours_min", self.work_hours_min),
            ("errand_stay_max", self.errand_stay_max),
            ("long_trip_slots_min", self.long_trip_slots_min),
        ] {
            if v == 0 {
                return Err(cfg_err(param, "must be at least 1"));
            }
        }
        let positive = [
            ("charger_kw", self.charger_kw),
            ("battery_kwh_min", self.battery_kwh_min),
            ("commute_kwh_mean", self.commute_kwh_mean),
            ("errand_kwh_mean", self.errand_kwh_mean),
            ("capacity_kw_per_ev", self.capacity_kw_per_ev),
            ("unit_scale", self.unit_scale),
        ];
        for (param, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(cfg_err(param, format!("must be positive and finite, got {v}")));
            }
        }
        let nonneg = [
            ("commute_kwh_cv", self.commute_kwh_cv),
            ("long_trip_kwh_min", self.long_trip_kwh_min),
            ("heterogeneity_sigma", self.heterogeneity_sigma),
            ("day_factor", self.day_factor),
        ];
        for (param, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(cfg_err(param, format!("must be nonnegative and finite, got {v}")));
            }
        }
        let fractions = [
            ("init_soc_min", self.init_soc_min),
            ("init_soc_max", self.init_soc_max),
            ("commuter_share", self.commuter_share),
            ("shift_share", self.shift_share),
            ("errand_prob", self.errand_prob),
            ("long_trip_prob", self.long_trip_prob),
            ("residential_share", self.residential_share),
        ];
        for (param, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg_err(param, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.battery_kwh_max < self.battery_kwh_min {
            return Err(cfg_err("battery_kwh_max", "must be at least battery_kwh_min"));
        }
        if self.init_soc_max < self.init_soc_min {
            return Err(cfg_err("init_soc_max", "must be at least init_soc_min"));
        }
        if self.work_hours_max < self.work_hours_min {
            return Err(cfg_err("work_hours_max", "must be at least work_hours_min"));
        }
        if self.long_trip_slots_max < self.long_trip_slots_min {
            return Err(cfg_err("long_trip_slots_max", "must be at least long_trip_slots_min"));
        }
        if self.long_trip_kwh_max < self.long_trip_kwh_min {
            return Err(cfg_err("long_trip_kwh_max", "must be at least long_trip_kwh_min"));
        }
        if self.shift_depart_max >= 24 || self.shift_depart_min > self.shift_depart_max {
            return Err(cfg_err(
                "shift_depart_max",
                "shift departures must satisfy min <= max < 24",
            ));
        }
        if self.night_start >= 24 || self.night_end >= 24 {
            return Err(cfg_err("night_start", "night window hours must be below 24"));
        }
        // every trip must fit in the smallest battery
        let b = self.battery_kwh_min;
        if self.long_trip_kwh_max > b {
            return Err(cfg_err(
                "long_trip_kwh_max",
                format!(
                    "a long trip ({}) exceeds the smallest battery ({b})",
                    self.long_trip_kwh_max
                ),
            ));
        }
        if 2.0 * LEG_CAP * self.commute_kwh_mean > b {
            return Err(cfg_err(
                "commute_kwh_mean",
                format!(
                    "a round commute can need {} kWh, more than the smallest battery ({b})",
                    2.0 * LEG_CAP * self.commute_kwh_mean
                ),
            ));
        }
        if 2.0 * LEG_CAP * self.errand_kwh_mean > b {
            return Err(cfg_err("errand_kwh_mean", "an errand can exceed the smallest battery"));
        }
        Ok(())
    }

    fn is_night(&self, hour: usize) -> bool {
        if self.night_start <= self.night_end {
            (self.night_start..self.night_end).contains(&hour)
        } else {
            hour >= self.night_start || hour < self.night_end
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Pools {
    residential: Vec<usize>,
    commercial: Vec<usize>,
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize]) -> usize {
    pool[rng.random_range(0..pool.len())]
}

/// Marks `slots` as one trip of `kwh` spread evenly. Returns false (and
/// changes nothing) if a slot is outside the horizon or not at home.
fn place_trip(loc: &mut [Option<usize>], demand: &mut [f64], home: usize, start: usize, len: usize, kwh: f64) -> bool {
    if start + len > loc.len() || loc[start..start + len].iter().any(|c| *c != Some(home)) {
        return false;
    }
    for t in start..start + len {
        loc[t] = None;
        demand[t] = kwh / len as f64;
    }
    true
}

/// Marks a stay at `feeder` over `[start, start+len)` if all slots are at home.
fn place_stay(loc: &mut [Option<usize>], home: usize, start: usize, len: usize, feeder: usize) -> bool {
    if start + len > loc.len() || loc[start..start + len].iter().any(|c| *c != Some(home)) {
        return false;
    }
    for c in &mut loc[start..start + len] {
        *c = Some(feeder);
    }
    true
}

/// Out-then-back outing: leg, stay, leg. All-or-nothing.
#[allow(clippy::too_many_arguments)]
fn place_outing(
    loc: &mut [Option<usize>],
    demand: &mut [f64],
    home: usize,
    start: usize,
    stay: usize,
    feeder: usize,
    leg_out: f64,
    leg_back: f64,
) -> bool {
    let total = stay + 2;
    if start + total > loc.len() || loc[start..start + total].iter().any(|c| *c != Some(home)) {
        return false;
    }
    place_trip(loc, demand, home, start, 1, leg_out);
    place_stay(loc, home, start + 1, stay, feeder);
    place_trip(loc, demand, home, start + 1 + stay, 1, leg_back);
    true
}

struct EvDraw {
    profile: EvProfile,
    location: Vec<Option<usize>>,
}

fn generate_ev(cfg: &GenConfig, pools: &Pools, i: usize) -> Result<EvDraw> {
    let mut rng = rng_for(cfg.seed, i as u64 + 1);
    let t_len = cfg.horizon;
    let battery = rng.random_range(cfg.battery_kwh_min..=cfg.battery_kwh_max);
    let e_init = battery * rng.random_range(cfg.init_soc_min..=cfg.init_soc_max);
    let home = pick(&mut rng, &pools.residential);
    let work = pick(&mut rng, &pools.commercial);
    let commuter = rng.random_bool(cfg.commuter_share);
    let shift = commuter && rng.random_bool(cfg.shift_share);

    let leg = |rng: &mut ChaCha8Rng, mean: f64| -> f64 {
        if cfg.commute_kwh_cv == 0.0 {
            return mean;
        }
        let d = LogNormal::from_mean_cv(mean, cfg.commute_kwh_cv).expect("validated parameters");
        d.sample(rng).min(LEG_CAP * mean)
    };

    let mut loc = vec![Some(home); t_len];
    let mut demand = vec![0.0; t_len];
    let days = t_len.div_ceil(24);
    if shift {
        // a shift that began the evening before the horizon
        let dep = rng.random_range(cfg.shift_depart_min..=cfg.shift_depart_max);
        let hours = rng.random_range(cfg.work_hours_min..=cfg.work_hours_max);
        let back = leg(&mut rng, cfg.commute_kwh_mean);
        let end = (dep + 1 + hours).saturating_sub(24);
        if end >= 1 && end < t_len {
            place_stay(&mut loc, home, 0, end, work);
            place_trip(&mut loc, &mut demand, home, end, 1, back);
        }
    }
    for d in 0..days {
        let base = 24 * d;
        let weekday = d % 7 < 5;
        // late shifts run seven days a week
        if commuter && (weekday || shift) {
            let dep = if shift {
                rng.random_range(cfg.shift_depart_min..=cfg.shift_depart_max)
            } else {
                rng.random_range(6..=8)
            };
            let hours = rng.random_range(cfg.work_hours_min..=cfg.work_hours_max);
            let (a, b) = (leg(&mut rng, cfg.commute_kwh_mean), leg(&mut rng, cfg.commute_kwh_mean));
            place_outing(&mut loc, &mut demand, home, base + dep, hours, work, a, b);
        }
        if !weekday && rng.random_bool(cfg.long_trip_prob) {
            let start = base + rng.random_range(8..=11);
            let len = rng.random_range(cfg.long_trip_slots_min..=cfg.long_trip_slots_max);
            let kwh = rng.random_range(cfg.long_trip_kwh_min..=cfg.long_trip_kwh_max);
            place_trip(&mut loc, &mut demand, home, start, len, kwh);
        }
        if rng.random_bool(cfg.errand_prob) {
            let hour = if shift {
                rng.random_range(9..=11)
            } else {
                rng.random_range(17..=20)
            };
            let stay = rng.random_range(1..=cfg.errand_stay_max);
            let feeder = rng.random_range(0..cfg.n_feeders);
            let (a, b) = (leg(&mut rng, cfg.errand_kwh_mean), leg(&mut rng, cfg.errand_kwh_mean));
            place_outing(&mut loc, &mut demand, home, base + hour, stay, feeder, a, b);
        }
    }

    // witness: charge at full power whenever parked
    let p_max: Vec<f64> = loc
        .iter()
        .map(|c| if c.is_some() { cfg.charger_kw } else { 0.0 })
        .collect();
    let mut scale = 1.0;
    for _ in 0..40 {
        if witness_ok(&p_max, &demand, scale, battery, e_init) {
            break;
        }
        scale *= 0.8;
    }
    if !witness_ok(&p_max, &demand, scale, battery, e_init) {
        scale = 0.0;
    }
    if scale < 1.0 {
        log::debug!("EV {i}: trip energy scaled by {scale:.3} to keep the week feasible");
        for x in &mut demand {
            *x *= scale;
        }
    }
    let mut e_min = vec![0.0; t_len];
    e_min[t_len - 1] = e_init;
    let profile = EvProfile {
        id: format!("EV{i:05}"),
        battery_kwh: battery,
        e_init,
        p_min: vec![0.0; t_len],
        p_max,
        e_min,
        e_max: vec![battery; t_len],
        demand,
    };
    if !derive_bounds(&profile)?.is_nonempty() {
        return Err(Error::Oracle(format!("generated EV {i} failed its own witness")));
    }
    Ok(EvDraw { profile, location: loc })
}

fn witness_ok(p_max: &[f64], demand: &[f64], scale: f64, battery: f64, e_init: f64) -> bool {
    let mut e = e_init;
    for (p, d) in p_max.iter().zip(demand) {
        e = (e + p).min(battery) - scale * d;
        if e < 0.0 {
            return false;
        }
    }
    e >= e_init
}

/// Builds a scenario from `cfg`. Identical configs give identical scenarios.
pub fn generate_scenario(cfg: &GenConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    let n_res = ((cfg.residential_share * cfg.n_feeders as f64).round() as usize).clamp(1, cfg.n_feeders);
    let mut ids: Vec<usize> = (0..cfg.n_feeders).collect();
    // random split into residential and commercial feeders
    for k in (1..ids.len()).rev() {
        let j = rng.random_range(0..=k);
        ids.swap(k, j);
    }
    let mut residential = ids[..n_res].to_vec();
    let mut commercial = ids[n_res..].to_vec();
    residential.sort_unstable();
    commercial.sort_unstable();
    if commercial.is_empty() {
        commercial = residential.clone();
    }
    let hetero: Vec<f64> = if cfg.heterogeneity_sigma > 0.0 {
        let d = LogNormal::new(0.0, cfg.heterogeneity_sigma).expect("validated sigma");
        (0..cfg.n_feeders).map(|_| d.sample(&mut rng)).collect()
    } else {
        vec![1.0; cfg.n_feeders]
    };
    let pools = Pools {
        residential,
        commercial,
    };

    let draws: Vec<EvDraw> = (0..cfg.n_evs)
        .into_par_iter()
        .map(|i| generate_ev(cfg, &pools, i))
        .collect::<Result<_>>()?;
    let mut location = LocationMap::new(cfg.n_evs, cfg.horizon);
    let mut profiles = Vec::with_capacity(cfg.n_evs);
    for (i, d) in draws.into_iter().enumerate() {
        for (t, c) in d.location.iter().enumerate() {
            location.set(i, t, *c);
        }
        profiles.push(d.profile);
    }

    let occ = location.occupancy(cfg.n_feeders);
    let mut capacity = Mat::zeros(cfg.n_feeders, cfg.horizon);
    for s in 0..cfg.n_feeders {
        let peak = occ.row(s).iter().cloned().fold(0.0, f64::max).max(1.0);
        for t in 0..cfg.horizon {
            let shape = if cfg.is_night(t % 24) { 1.0 } else { cfg.day_factor };
            capacity.set(s, t, cfg.unit_scale * cfg.capacity_kw_per_ev * peak * shape * hetero[s]);
        }
    }
    let scenario = Scenario {
        profiles,
        location,
        feeders: FeederSeries {
            ids: (0..cfg.n_feeders).map(|s| format!("F{s:03}")).collect(),
            capacity,
        },
        unit_scale: cfg.unit_scale,
    };
    scenario.validate()?;
    Ok(scenario)
}

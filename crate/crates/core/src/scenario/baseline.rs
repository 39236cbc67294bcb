//! The unmanaged ASAP+ rule.
//!
//! On every arrival at a feeder (including being parked at slot 0) the EV
//! checks its state of charge. Below half the battery it charges at full
//! power until the battery is full or it leaves; otherwise it charges only
//! what the remaining week requires, i.e. the lower cumulative envelope.
//! Both targets pass through the greedy clip, so the result is always
//! mobility-feasible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{self, derive_bounds, EvProfile, Scenario};

/// State of charge below which an arrival triggers full-power charging.
pub const FULL_CHARGE_SOC: f64 = 0.5;

/// Schedule for one EV given its location row.
pub fn asap_plus_ev(profile: &EvProfile, loc_row: &[Option<u32>]) -> Result<Vec<f64>> {
    let b = derive_bounds(profile)?;
    if !b.is_nonempty() {
        return Err(Error::Invalid(format!("EV {} has an empty feasible set", profile.id)));
    }
    let mut cum_demand = Vec::with_capacity(profile.horizon());
    let mut acc = 0.0;
    for d in &profile.demand {
        cum_demand.push(acc);
        acc += d;
    }
    let mut out = vec![0.0; profile.horizon()];
    let mut full = false;
    model::greedy_fill(&b, &mut out, |t, s_prev| {
        // energy before slot t
        let e = profile.e_init + s_prev - cum_demand[t];
        let here = loc_row[t];
        let arrived = here.is_some() && (t == 0 || loc_row[t - 1] != here);
        if here.is_none() {
            full = false;
        } else if arrived {
            full = e < FULL_CHARGE_SOC * profile.battery_kwh;
        }
        if full {
            profile.p_max[t].min(profile.battery_kwh - e).max(0.0)
        } else {
            0.0
        }
    });
    Ok(out)
}

/// ASAP+ schedules for every EV, I×T kW.
pub fn asap_plus(scenario: &Scenario) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = (0..scenario.n_evs())
        .into_par_iter()
        .map(|i| asap_plus_ev(&scenario.profiles[i], scenario.location.row(i)))
        .collect::<Result<_>>()?;
    Ok(Mat::from_rows(&rows, scenario.horizon()))
}

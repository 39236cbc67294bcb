//! Scenario files.
//!
//! A scenario directory holds `evs.csv`, `trajectory.csv` (one row per EV and
//! slot; feeder id or `AWAY`), `feeders.csv` (one row per feeder and slot)
//! and optionally `manifest.json`, which carries the unit scale.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io, Error, Result};
use crate::mat::Mat;
use crate::model::{EvProfile, FeederSeries, LocationMap, Scenario};
use crate::scenario::GenConfig;

pub const EVS_FILE: &str = "evs.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const FEEDERS_FILE: &str = "feeders.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AWAY: &str = "AWAY";

const EVS_HEADER: [&str; 3] = ["ev_id", "battery_kwh", "e_init_kwh"];
const TRAJ_HEADER: [&str; 8] = [
    "ev_id",
    "slot",
    "feeder_id",
    "demand_kwh",
    "p_min_kw",
    "p_max_kw",
    "e_min_kwh",
    "e_max_kwh",
];
const FEEDERS_HEADER: [&str; 3] = ["feeder_id", "slot", "capacity_mw"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<GenConfig>,
    /// SHA-256 of the canonical JSON encoding of `config`.
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub unit_scale: f64,
    pub n_evs: usize,
    pub n_feeders: usize,
    pub horizon: usize,
}

impl Manifest {
    pub fn for_generated(cfg: &GenConfig, scenario: &Scenario) -> Result<Self> {
        Ok(Manifest {
            config_sha256: Some(config_hash(cfg)?),
            config: Some(cfg.clone()),
            seed: Some(cfg.seed),
            unit_scale: scenario.unit_scale,
            n_evs: scenario.n_evs(),
            n_feeders: scenario.n_feeders(),
            horizon: scenario.horizon(),
        })
    }
}

pub fn config_hash(cfg: &GenConfig) -> Result<String> {
    json_sha256(cfg)
}

/// SHA-256 (hex) of the compact JSON encoding of `value`.
pub fn json_sha256<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes the three CSV files and, if given, the manifest.
pub fn save_scenario(dir: &Path, scenario: &Scenario, manifest: Option<&Manifest>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut w = writer(&dir.join(EVS_FILE))?;
    w.write_record(EVS_HEADER)?;
    for p in &scenario.profiles {
        w.write_record([p.id.clone(), num(p.battery_kwh), num(p.e_init)])?;
    }
    w.flush().map_err(|e| io(&dir.join(EVS_FILE), e))?;

    let mut w = writer(&dir.join(TRAJECTORY_FILE))?;
    w.write_record(TRAJ_HEADER)?;
    for (i, p) in scenario.profiles.iter().enumerate() {
        for t in 0..p.horizon() {
            let feeder = match scenario.location.get(i, t) {
                Some(s) => scenario.feeders.ids[s].clone(),
                None => AWAY.to_string(),
            };
            w.write_record([
                p.id.clone(),
                t.to_string(),
                feeder,
                num(p.demand[t]),
                num(p.p_min[t]),
                num(p.p_max[t]),
                num(p.e_min[t]),
                num(p.e_max[t]),
            ])?;
        }
    }
    w.flush().map_err(|e| io(&dir.join(TRAJECTORY_FILE), e))?;

    let mut w = writer(&dir.join(FEEDERS_FILE))?;
    w.write_record(FEEDERS_HEADER)?;
    for (s, id) in scenario.feeders.ids.iter().enumerate() {
        for t in 0..scenario.horizon() {
            w.write_record([id.clone(), t.to_string(), num(scenario.feeders.capacity.get(s, t))])?;
        }
    }
    w.flush().map_err(|e| io(&dir.join(FEEDERS_FILE), e))?;

    let manifest = match manifest {
        Some(m) => m.clone(),
        None => Manifest {
            config: None,
            config_sha256: None,
            seed: None,
            unit_scale: scenario.unit_scale,
            n_evs: scenario.n_evs(),
            n_feeders: scenario.n_feeders(),
            horizon: scenario.horizon(),
        },
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(())
}

struct Table {
    file: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let f = fs::File::open(path).map_err(|e| io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let file_name = path.display().to_string();
    let got = r.headers()?.clone();
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != header {
        return Err(Error::Schema {
            file: file_name,
            line: 1,
            msg: format!("expected header {header:?}, found {got:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Schema {
            file: file_name.clone(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(Table {
        file: path.to_path_buf(),
        rows,
    })
}

impl Table {
    fn err(&self, line: u64, msg: impl Into<String>) -> Error {
        Error::Schema {
            file: self.file.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn f64_at(&self, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
        let raw = rec.get(col).unwrap_or("").trim();
        raw.parse::<f64>()
            .ok()
            .filter(|x| !x.is_nan())
            .ok_or_else(|| self.err(line, format!("column {name}: '{raw}' is not a number")))
    }

    fn usize_at(&self, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<usize> {
        let raw = rec.get(col).unwrap_or("").trim();
        raw.parse::<usize>()
            .map_err(|_| self.err(line, format!("column {name}: '{raw}' is not a slot index")))
    }
}

/// Result of loading a scenario directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub manifest: Option<Manifest>,
    /// Ids of EVs dropped because their feasible set is empty.
    pub dropped: Vec<String>,
}

/// Reads and validates a scenario directory. EVs whose constraints cannot be
/// met are dropped with a warning.
pub fn load_scenario(dir: &Path) -> Result<Loaded> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Option<Manifest> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| io(&manifest_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let unit_scale = manifest.as_ref().map_or(1e-3, |m| m.unit_scale);

    // feeders
    let ft = read_table(&dir.join(FEEDERS_FILE), &FEEDERS_HEADER)?;
    let mut feeder_ids: Vec<String> = Vec::new();
    let mut feeder_index: HashMap<String, usize> = HashMap::new();
    let mut cap_cells: Vec<Vec<Option<f64>>> = Vec::new();
    for (line, rec) in &ft.rows {
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() || id == AWAY {
            return Err(ft.err(*line, format!("invalid feeder id '{id}'")));
        }
        let slot = ft.usize_at(*line, rec, 1, "slot")?;
        let cap = ft.f64_at(*line, rec, 2, "capacity_mw")?;
        let s = *feeder_index.entry(id.clone()).or_insert_with(|| {
            feeder_ids.push(id.clone());
            cap_cells.push(Vec::new());
            feeder_ids.len() - 1
        });
        let cells = &mut cap_cells[s];
        if cells.len() <= slot {
            cells.resize(slot + 1, None);
        }
        if cells[slot].replace(cap).is_some() {
            return Err(ft.err(*line, format!("duplicate row for feeder {id} slot {slot}")));
        }
    }
    let horizon = cap_cells.iter().map(Vec::len).max().unwrap_or(0);
    let mut capacity = Mat::zeros(feeder_ids.len(), horizon);
    for (s, cells) in cap_cells.iter().enumerate() {
        for t in 0..horizon {
            match cells.get(t).copied().flatten() {
                Some(c) => capacity.set(s, t, c),
                None => return Err(ft.err(0, format!("feeder {} has no row for slot {t}", feeder_ids[s]))),
            }
        }
    }

    // EVs
    let et = read_table(&dir.join(EVS_FILE), &EVS_HEADER)?;
    let mut profiles: Vec<EvProfile> = Vec::new();
    let mut ev_index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in &et.rows {
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(et.err(*line, "empty ev_id"));
        }
        if ev_index.insert(id.clone(), profiles.len()).is_some() {
            return Err(et.err(*line, format!("duplicate ev_id {id}")));
        }
        profiles.push(EvProfile {
            id,
            battery_kwh: et.f64_at(*line, rec, 1, "battery_kwh")?,
            e_init: et.f64_at(*line, rec, 2, "e_init_kwh")?,
            p_min: vec![f64::NAN; horizon],
            p_max: vec![f64::NAN; horizon],
            e_min: vec![f64::NAN; horizon],
            e_max: vec![f64::NAN; horizon],
            demand: vec![f64::NAN; horizon],
        });
    }

    // trajectories
    let tt = read_table(&dir.join(TRAJECTORY_FILE), &TRAJ_HEADER)?;
    let mut loc_rows: Vec<Vec<Option<usize>>> = vec![vec![None; horizon]; profiles.len()];
    let mut seen = vec![vec![false; horizon]; profiles.len()];
    for (line, rec) in &tt.rows {
        let id = rec.get(0).unwrap_or("").trim();
        let i = *ev_index
            .get(id)
            .ok_or_else(|| tt.err(*line, format!("ev_id {id} not listed in {EVS_FILE}")))?;
        let t = tt.usize_at(*line, rec, 1, "slot")?;
        if t >= horizon {
            return Err(tt.err(*line, format!("slot {t} beyond the feeder horizon {horizon}")));
        }
        if std::mem::replace(&mut seen[i][t], true) {
            return Err(tt.err(*line, format!("duplicate row for EV {id} slot {t}")));
        }
        let feeder = rec.get(2).unwrap_or("").trim();
        loc_rows[i][t] = if feeder == AWAY {
            None
        } else {
            Some(
                *feeder_index
                    .get(feeder)
                    .ok_or_else(|| tt.err(*line, format!("unknown feeder_id {feeder}")))?,
            )
        };
        let p = &mut profiles[i];
        p.demand[t] = tt.f64_at(*line, rec, 3, "demand_kwh")?;
        p.p_min[t] = tt.f64_at(*line, rec, 4, "p_min_kw")?;
        p.p_max[t] = tt.f64_at(*line, rec, 5, "p_max_kw")?;
        p.e_min[t] = tt.f64_at(*line, rec, 6, "e_min_kwh")?;
        p.e_max[t] = tt.f64_at(*line, rec, 7, "e_max_kwh")?;
        if feeder == AWAY && (p.p_min[t] != 0.0 || p.p_max[t] != 0.0) {
            return Err(tt.err(
                *line,
                format!("EV {id} is AWAY in slot {t} but its power bounds are not zero"),
            ));
        }
    }
    for (i, row) in seen.iter().enumerate() {
        if let Some(t) = row.iter().position(|s| !s) {
            return Err(tt.err(0, format!("EV {} has no row for slot {t}", profiles[i].id)));
        }
    }

    let mut scenario = Scenario {
        profiles,
        location: LocationMap::from_rows(&loc_rows, horizon)?,
        feeders: FeederSeries {
            ids: feeder_ids,
            capacity,
        },
        unit_scale,
    };
    scenario.validate()?;
    let dropped = scenario.drop_infeasible()?;
    Ok(Loaded {
        scenario,
        manifest,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;

    #[test]
    fn round_trip() {
        let cfg = GenConfig {
            n_evs: 12,
            n_feeders: 3,
            horizon: 48,
            ..GenConfig::default()
        };
        let sc = generate_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::for_generated(&cfg, &sc).unwrap();
        save_scenario(dir.path(), &sc, Some(&m)).unwrap();
        let loaded = load_scenario(dir.path()).unwrap();
        assert!(loaded.dropped.is_empty());
        assert_eq!(loaded.scenario, sc);
        assert_eq!(loaded.manifest.unwrap(), m);
    }

    #[test]
    fn away_with_power_is_rejected() {
        let cfg = GenConfig {
            n_evs: 2,
            n_feeders: 1,
            horizon: 24,
            ..GenConfig::default()
        };
        let mut sc = generate_scenario(&cfg).unwrap();
        sc.location.set(0, 3, None);
        let dir = tempfile::tempdir().unwrap();
        save_scenario(dir.path(), &sc, None).unwrap();
        let err = load_scenario(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
        assert!(err.to_string().contains("AWAY"));
    }

    #[test]
    fn infeasible_ev_is_dropped() {
        let cfg = GenConfig {
            n_evs: 3,
            n_feeders: 1,
            horizon: 24,
            ..GenConfig::default()
        };
        let mut sc = generate_scenario(&cfg).unwrap();
        // demand more energy at the end than the battery can ever hold
        sc.profiles[1].e_min[23] = sc.profiles[1].battery_kwh + 1.0;
        let dir = tempfile::tempdir().unwrap();
        save_scenario(dir.path(), &sc, None).unwrap();
        let loaded = load_scenario(dir.path()).unwrap();
        assert_eq!(loaded.dropped, vec![sc.profiles[1].id.clone()]);
        assert_eq!(loaded.scenario.n_evs(), 2);
        assert_eq!(loaded.scenario.location.row(1), sc.location.row(2));
    }

    #[test]
    fn bad_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(FEEDERS_FILE),
            "feeder_id,slot,capacity_mw\nF0,0,1.0\nF0,1,abc\n",
        )
        .unwrap();
        fs::write(dir.path().join(EVS_FILE), "ev_id,battery_kwh,e_init_kwh\n").unwrap();
        fs::write(dir.path().join(TRAJECTORY_FILE), TRAJ_HEADER.join(",") + "\n").unwrap();
        match load_scenario(dir.path()) {
            Err(Error::Schema { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("capacity_mw"));
            }
            other => panic!("{other:?}"),
        }
    }
}

//! Synthetic scenarios, scenario files, the ASAP+ baseline and metrics.

pub mod baseline;
pub mod generator;
pub mod io;
pub mod metrics;

pub use baseline::{asap_plus, asap_plus_ev};
pub use generator::{generate_scenario, GenConfig};
pub use io::{json_sha256, load_scenario, save_scenario, Loaded, Manifest};
pub use metrics::{metrics, peak_valley_ratio, MetricsReport, VIOLATION_THRESHOLD_MW};

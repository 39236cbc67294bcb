//! TOML run configuration.
//!
//! ```toml
//! [generator]
//! n_evs = 200
//!
//! [admm]
//! rho = 100.0
//! [admm.s1]
//! max_iter = 200
//! ```
//!
//! Tables are merged key by key over the built-in defaults, so a partial
//! `[admm.s1]` table keeps the ADMM-specific defaults for the keys it omits.

use std::path::Path;

use anyhow::Context;
use evcoord_core::{AdmmOptions, GenConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    generator: Option<toml::Table>,
    admm: Option<toml::Table>,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    pub generator: GenConfig,
    pub admm: AdmmOptions,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> anyhow::Result<toml::Table> {
    match toml::Value::try_from(v)? {
        toml::Value::Table(t) => Ok(t),
        _ => anyhow::bail!("defaults do not serialise to a table"),
    }
}

fn overlay<T: Serialize + DeserializeOwned>(
    defaults: &T,
    table: Option<toml::Table>,
    section: &str,
) -> anyhow::Result<T> {
    let mut base = to_table(defaults)?;
    if let Some(table) = table {
        merge(&mut base, table);
    }
    toml::Value::Table(base)
        .try_into()
        .with_context(|| format!("in section [{section}]"))
}

pub fn parse(text: &str) -> anyhow::Result<Config> {
    let raw: RawConfig = toml::from_str(text)?;
    Ok(Config {
        generator: overlay(&GenConfig::default(), raw.generator, "generator")?,
        admm: overlay(&AdmmOptions::default(), raw.admm, "admm")?,
    })
}

pub fn load(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Io)?;
    parse(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::Validation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let c = parse("").unwrap();
        assert_eq!(c.admm, AdmmOptions::default());
        assert_eq!(c.generator, GenConfig::default());
    }

    #[test]
    fn partial_nested_table_keeps_defaults() {
        let c = parse("[admm]\nrho = 5.0\n[admm.s1]\ntol = 1e-4\n").unwrap();
        assert_eq!(c.admm.rho, 5.0);
        assert_eq!(c.admm.s1.tol, 1e-4);
        assert_eq!(c.admm.s1.max_iter, AdmmOptions::default().s1.max_iter);
        assert_eq!(c.admm.d1, AdmmOptions::default().d1);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[generator]\nn_evz = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("n_evz"), "{err:#}");
        assert!(parse("[solver]\n").is_err());
    }

    #[test]
    fn eta_can_be_set() {
        let c = parse("[admm.d1]\neta = 0.5\n").unwrap();
        assert_eq!(c.admm.d1.eta, Some(0.5));
        assert_eq!(c.admm.s1.eta, None);
    }
}

//! Reset-pool CST fits and their on-disk cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::geometry::{fit_cst, naca, read_dat, CstParams, ParamBounds};

/// Bumped whenever the fitting procedure changes what it produces.
pub const POOL_CACHE_VERSION: u32 = 1;

/// Environment variable that overrides the bundled airfoil directory.
pub const DATA_DIR_VAR: &str = "AIRFOIL_DRL_DATA";

/// Directory of the `.dat` files shipped with the crate.
pub fn bundled_data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("airfoils"),
    }
}

pub fn default_pool_names() -> Vec<String> {
    naca::RESET_POOL.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub name: String,
    pub params: CstParams,
    pub residual: f64,
}

/// Named starting shapes, in the order they were requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResetPool {
    pub entries: Vec<PoolEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    bounds: ParamBounds,
    entries: BTreeMap<String, CacheRow>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    params: Vec<f64>,
    residual: f64,
}

impl ResetPool {
    pub fn from_params(entries: impl IntoIterator<Item = (String, CstParams)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(name, params)| PoolEntry { name, params, residual: 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Fit every named airfoil from `<dir>/<name>.dat`.
    pub fn fit_from_dir(dir: &Path, names: &[String], bounds: &ParamBounds) -> Result<Self, EnvError> {
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let path = dir.join(format!("{name}.dat"));
            let coords = read_dat(&path).map_err(|e| EnvError::Pool(format!("{name}: {e}")))?;
            let fit = fit_cst(&coords.points, bounds).map_err(|e| EnvError::Pool(format!("{name}: {e}")))?;
            entries.push(PoolEntry {
                name: name.clone(),
                params: fit.params,
                residual: fit.residual,
            });
        }
        Ok(Self { entries })
    }

    /// Load fits from `cache`, refitting from `dir` (and rewriting the
    /// cache) when the file is missing, stale, or lacks a requested name.
    pub fn load_cached(
        cache: &Path,
        dir: &Path,
        names: &[String],
        bounds: &ParamBounds,
    ) -> Result<Self, EnvError> {
        if let Some(pool) = read_cache(cache, names, bounds) {
            return Ok(pool);
        }
        log::info!("rebuilding reset-pool cache at {}", cache.display());
        let pool = Self::fit_from_dir(dir, names, bounds)?;
        pool.write_cache(cache, bounds)?;
        Ok(pool)
    }

    pub fn write_cache(&self, cache: &Path, bounds: &ParamBounds) -> Result<(), EnvError> {
        let file = CacheFile {
            version: POOL_CACHE_VERSION,
            bounds: *bounds,
            entries: self
                .entries
                .iter()
                .map(|e| {
                    (
                        e.name.clone(),
                        CacheRow {
                            params: e.params.to_array().to_vec(),
                            residual: e.residual,
                        },
                    )
                })
                .collect(),
        };
        if let Some(parent) = cache.parent() {
            fs::create_dir_all(parent).map_err(|e| EnvError::Pool(e.to_string()))?;
        }
        let text = serde_json::to_string_pretty(&file).map_err(|e| EnvError::Pool(e.to_string()))?;
        fs::write(cache, text).map_err(|e| EnvError::Pool(format!("{}: {e}", cache.display())))
    }
}

fn read_cache(cache: &Path, names: &[String], bounds: &ParamBounds) -> Option<ResetPool> {
    let text = fs::read_to_string(cache).ok()?;
    let file: CacheFile = serde_json::from_str(&text).ok()?;
    if file.version != POOL_CACHE_VERSION || file.bounds != *bounds {
        return None;
    }
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let row = file.entries.get(name)?;
        entries.push(PoolEntry {
            name: name.clone(),
            params: CstParams::from_slice(&row.params).ok()?,
            residual: row.residual,
        });
    }
    Some(ResetPool { entries })
}

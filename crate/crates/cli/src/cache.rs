//! On-disk cache for fitted forests and permutation nulls, keyed by a hash of
//! the data and every setting that affects the result.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use sha2::{Digest, Sha256};
use survgroup::dataset::SurvivalDataset;
use survgroup::learner::LearnerConfig;
use survgroup::rsf::{self, Forest, ForestConfig, SurvivalMatrix};
use survgroup::validator::NullModel;

pub const CACHE_ENV: &str = "SURVGROUP_CACHE_DIR";
const FORMAT: &str = "v1";

#[derive(Debug, Clone)]
pub struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    /// `$SURVGROUP_CACHE_DIR`, else `$XDG_CACHE_HOME/survgroup`, else
    /// `$HOME/.cache/survgroup`. Caching is off when none is set.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var_os(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        let dir = var(CACHE_ENV)
            .or_else(|| var("XDG_CACHE_HOME").map(|d| d.join("survgroup")))
            .or_else(|| var("HOME").map(|d| d.join(".cache").join("survgroup")));
        Self { dir }
    }

    #[cfg(test)]
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    fn path(&self, kind: &str, parts: &[&str]) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(FORMAT);
        for part in parts {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        Some(dir.join(format!("{kind}-{}", hex::encode(h.finalize()))))
    }

    /// Survival matrix from a cached forest, fitting and storing one on a miss.
    /// The flag reports a cache hit.
    pub fn forest_matrix(
        &self,
        data: &SurvivalDataset,
        config: &ForestConfig,
    ) -> anyhow::Result<(SurvivalMatrix, bool)> {
        let config_json = serde_json::to_string(config)?;
        let path = self.path("forest", &[&data.content_hash(), &config_json]);
        if let Some(p) = &path {
            match load_forest(p) {
                Ok(Some(forest)) => {
                    info!("using cached forest {}", p.display());
                    return Ok((rsf::predict_matrix(&forest, data)?, true));
                }
                Ok(None) => debug!("no cached forest at {}", p.display()),
                Err(e) => warn!("ignoring unreadable cache entry {}: {e}", p.display()),
            }
        }
        info!("fitting {} trees on {} subjects", config.n_trees, data.n());
        let forest = rsf::fit_forest(data, config)?;
        if let Some(p) = &path {
            if let Err(e) = store(p, |w| Ok(forest.write_to(w)?)) {
                warn!("could not write cache entry {}: {e}", p.display());
            }
        }
        Ok((rsf::predict_matrix(&forest, data)?, false))
    }

    /// Null model from the cache, or built by `build` and stored.
    pub fn null_model(
        &self,
        data: &SurvivalDataset,
        forest: &ForestConfig,
        learner: &LearnerConfig,
        runs: usize,
        m: usize,
        build: impl FnOnce() -> anyhow::Result<NullModel>,
    ) -> anyhow::Result<(NullModel, bool)> {
        let parts = [
            data.content_hash(),
            serde_json::to_string(forest)?,
            serde_json::to_string(learner)?,
            runs.to_string(),
            m.to_string(),
        ];
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        let path = self.path("null", &refs);
        if let Some(p) = &path {
            if p.exists() {
                match File::open(p).map_err(anyhow::Error::from).and_then(|f| {
                    Ok(serde_json::from_reader::<_, NullModel>(BufReader::new(f))?)
                }) {
                    Ok(null) => {
                        info!("using cached null model {}", p.display());
                        return Ok((null, true));
                    }
                    Err(e) => warn!("ignoring unreadable cache entry {}: {e}", p.display()),
                }
            }
        }
        let null = build()?;
        if let Some(p) = &path {
            if let Err(e) = store(p, |w| Ok(serde_json::to_writer(w, &null)?)) {
                warn!("could not write cache entry {}: {e}", p.display());
            }
        }
        Ok((null, false))
    }
}

fn load_forest(path: &Path) -> anyhow::Result<Option<Forest>> {
    if !path.exists() {
        return Ok(None);
    }
    let f = File::open(path)?;
    Ok(Some(Forest::read_from(BufReader::new(f))?))
}

/// Write through a temporary file and rename so readers never see a
/// partial entry.
fn store(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = path.parent().expect("cache entries live in a directory");
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut w = BufWriter::new(File::create(&tmp)?);
    write(&mut w)?;
    w.flush()?;
    drop(w);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rolereward_core::grouping::GroupModel;
use rolereward_core::normalizer::NormalizerState;
use rolereward_core::pipeline::ScoringConfig;

use crate::config::{ConfigError, ServiceConfig};

/// Shared service state.
///
/// The group model is swapped as a whole `Arc`, so scorers keep the model
/// they started with. Statistics have a single writer: every mutation takes
/// the write lock, and `stats_version` counts applied mutations so health
/// checks can read it without touching the lock.
pub struct AppState {
    pub config: ServiceConfig,
    pub scoring: ScoringConfig,
    model: RwLock<Option<Arc<GroupModel>>>,
    stats: RwLock<NormalizerState>,
    stats_version: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            scoring: config.scoring(),
            stats: RwLock::new(config.fresh_normalizer()),
            model: RwLock::new(None),
            stats_version: AtomicU64::new(0),
            config,
        }
    }

    /// Builds the state and loads the boot-time model and snapshot named
    /// in the config.
    pub fn boot(config: ServiceConfig) -> Result<Self, ConfigError> {
        let state = AppState::new(config);
        if let Some(path) = &state.config.groups_model {
            let model: GroupModel = serde_json::from_str(&read(path)?)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            model
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            state.install_model(model);
        }
        if let Some(path) = &state.config.stats_path {
            let restored = NormalizerState::from_json(&read(path)?)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            state.replace_stats(restored);
        }
        Ok(state)
    }

    pub fn model(&self) -> Option<Arc<GroupModel>> {
        self.model.read().expect("model lock poisoned").clone()
    }

    pub fn install_model(&self, model: GroupModel) {
        *self.model.write().expect("model lock poisoned") = Some(Arc::new(model));
    }

    pub fn stats_version(&self) -> u64 {
        self.stats_version.load(Ordering::Acquire)
    }

    /// A consistent copy of the statistics and the version it reflects.
    pub fn stats_snapshot(&self) -> (NormalizerState, u64) {
        let guard = self.stats.read().expect("stats lock poisoned");
        (guard.clone(), self.stats_version())
    }

    /// Runs `f` as the single writer. `f` returns how many updates it
    /// applied; the version advances by that much.
    pub fn with_stats_mut<T>(&self, f: impl FnOnce(&mut NormalizerState) -> (T, u64)) -> (T, u64) {
        let mut guard = self.stats.write().expect("stats lock poisoned");
        let (out, applied) = f(&mut guard);
        let version = self.stats_version.fetch_add(applied, Ordering::AcqRel) + applied;
        (out, version)
    }

    pub fn replace_stats(&self, next: NormalizerState) -> u64 {
        self.with_stats_mut(|s| {
            *s = next;
            ((), 1)
        })
        .1
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

//! Run configuration read from a TOML file.
//!
//! Every field has a default, so an empty file (or no file) describes the
//! Qatar analysis with the bundled data. `schema_version` must match
//! [`SCHEMA_VERSION`].

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, ObservedSeries, RawCaseRecord};
use crate::dynamics::{
    DynamicsError, Integrator, InterventionSchedule, ParameterVector, StateVector, DEFAULT_STEP,
};
use crate::fit::{default_start, FitOptions};
use crate::model::{ModelContext, ModelError, PriorSpec};
use crate::sampler::SamplerConfig;

/// Version stamped into config files and every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("config schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<DynamicsError> for ConfigError {
    fn from(e: DynamicsError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub change_days: Vec<u32>,
    pub impulse_day: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let q = InterventionSchedule::qatar();
        Self {
            change_days: q.change_days().to_vec(),
            impulse_day: q.impulse_day(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Case CSV; relative paths are resolved against the config file's
    /// directory. Omitted means the bundled Qatar series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    /// Last training day (inclusive); later rows are held out.
    pub train_end: NaiveDate,
    /// Prediction horizon in days after day 0.
    pub horizon: usize,
    pub output_dir: PathBuf,
    /// RK4 step in days.
    pub integrator_step: f64,
    pub schedule: ScheduleConfig,
    pub init: StateVector,
    pub priors: PriorSpec,
    pub sampler: SamplerConfig,
    pub fit: FitOptions,
    /// Initialization point for the mode search; omitted means the built-in
    /// default for the schedule's number of interventions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<ParameterVector>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data_path: None,
            train_end: data::default_train_end(),
            horizon: 200,
            output_dir: PathBuf::from("out"),
            integrator_step: DEFAULT_STEP,
            schedule: ScheduleConfig::default(),
            init: StateVector::qatar_initial(),
            priors: PriorSpec::default(),
            sampler: SamplerConfig::default(),
            fit: FitOptions::default(),
            start: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version {
                found: config.schema_version,
            });
        }
        Ok(config)
    }

    /// Loads `path` and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &config.data_path {
            if p.is_relative() {
                config.data_path = Some(base.join(p));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> Result<InterventionSchedule, ConfigError> {
        Ok(InterventionSchedule::new(
            self.schedule.change_days.clone(),
            self.schedule.impulse_day,
        )?)
    }

    pub fn integrator(&self) -> Result<Integrator, ConfigError> {
        Ok(Integrator::with_step(self.integrator_step)?)
    }

    pub fn start_point(&self) -> Result<ParameterVector, ConfigError> {
        let k = self.schedule.change_days.len();
        let start = self.start.clone().unwrap_or_else(|| default_start(k));
        if start.alpha.len() != k + 1 {
            return Err(ConfigError::Invalid(format!(
                "start has {} alpha values, schedule needs {}",
                start.alpha.len(),
                k + 1
            )));
        }
        Ok(start)
    }

    /// Checks everything that does not need the data file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.schedule()?;
        self.integrator()?;
        self.priors.validate()?;
        self.start_point()?;
        let init = self.init;
        if !init.is_finite() || !init.is_nonnegative() {
            return Err(ConfigError::Invalid("initial state must be finite and non-negative".into()));
        }
        if !self.sampler.proposal_scales.is_empty() {
            self.sampler
                .validate(ParameterVector::dim_for(self.schedule.change_days.len()))
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.fit.n_starts == 0 {
            return Err(ConfigError::Invalid("fit.n_starts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<RawCaseRecord>, DataError> {
        match &self.data_path {
            Some(p) => data::parse_csv(p),
            None => Ok(data::qatar_records()),
        }
    }

    pub fn observed(&self) -> Result<ObservedSeries, DataError> {
        data::derive_series(&self.records()?, self.train_end)
    }

    pub fn context(&self, obs: ObservedSeries) -> Result<ModelContext, ConfigError> {
        Ok(ModelContext::new(self.schedule()?, self.init, obs, self.priors.clone())?
            .with_integrator(self.integrator()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let mut c = c;
        c.start = Some(ParameterVector::qatar_reference());
        c.data_path = Some("cases.csv".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_other_versions_and_unknown_keys() {
        assert!(matches!(
            RunConfig::from_toml("schema_version = 2"),
            Err(ConfigError::Version { found: 2 })
        ));
        assert!(matches!(RunConfig::from_toml("horizn = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.schedule.change_days = vec![10, 5];
        assert!(c.validate().is_err());
        let c = RunConfig {
            start: Some(ParameterVector {
                alpha: vec![1e-7],
                ..ParameterVector::qatar_reference()
            }),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            integrator_step: 0.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_sections_fill_in() {
        let c = RunConfig::from_toml("[sampler]\nseed = 7\n[schedule]\nchange_days = [5]\nimpulse_day = 3\n")
            .unwrap();
        assert_eq!(c.sampler.seed, 7);
        assert_eq!(c.sampler.n_samples, 5000);
        assert_eq!(c.start_point().unwrap().alpha.len(), 2);
    }
}

//! Pipeline configuration: one declarative JSON document drives every
//! stage, so sweep scripts can generate variants mechanically.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use climort::data::AgeBucketScheme;
use climort::dlnm::DlnmConfig;
use climort::forecast::ForecastConfig;
use climort::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Everything a run needs. Unknown keys are rejected so typos surface as
/// errors instead of silently falling back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed for every random stream of the run.
    pub seed: u64,
    /// Directory all artifacts are written into.
    pub out_dir: PathBuf,
    /// Per-station daily temperatures; defaults to `<out>/data/stations.csv`
    /// as written by `synthgen`.
    pub stations_file: Option<PathBuf>,
    /// Daily death counts; defaults to `<out>/data/deaths.csv`.
    pub deaths_file: Option<PathBuf>,
    /// Annual deaths and exposures; defaults to `<out>/data/annual.csv`.
    pub annual_file: Option<PathBuf>,
    /// Climate scenario files. Empty means every `*.csv` under
    /// `scenarios_dir`, which itself defaults to `<out>/data/scenarios`.
    pub scenario_files: Vec<PathBuf>,
    pub scenarios_dir: Option<PathBuf>,
    /// Whole calendar years of the daily calibration window.
    pub calibration_first_year: i32,
    pub calibration_last_year: i32,
    /// First age of each age bucket, starting at 0, and the open upper age.
    pub bucket_lower_bounds: Vec<u16>,
    pub max_age: u16,
    /// Reference years for the heatwave exceedance thresholds.
    pub heatwave_reference: (i32, i32),
    pub dlnm: DlnmConfig,
    pub forecast: ForecastConfig,
    /// Parameters of the `synthgen` subcommand.
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1789,
            out_dir: PathBuf::from("out"),
            stations_file: None,
            deaths_file: None,
            annual_file: None,
            scenario_files: Vec::new(),
            scenarios_dir: None,
            calibration_first_year: 1980,
            calibration_last_year: 2019,
            bucket_lower_bounds: vec![0, 65, 75, 85],
            max_age: 105,
            heatwave_reference: (1981, 2010),
            dlnm: DlnmConfig::default(),
            forecast: ForecastConfig {
                n_sims: 1000,
                ..ForecastConfig::default()
            },
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn scheme(&self) -> Result<AgeBucketScheme, Failure> {
        AgeBucketScheme::new(self.bucket_lower_bounds.clone(), self.max_age)
            .map_err(|e| Failure::input(anyhow::anyhow!(e).context("invalid age bucket scheme")))
    }
}

/// A loaded configuration with overrides applied, its content hash, and the
/// directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: PipelineConfig,
    /// SHA-256 of the canonical JSON form; artifacts carry it so stale
    /// mixtures of outputs are detected.
    pub hash: String,
    base: PathBuf,
}

impl Resolved {
    pub fn load(
        config_path: Option<&Path>,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self, Failure> {
        let (mut config, base) = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))
                    .map_err(Failure::input)?;
                let config: PipelineConfig = serde_json::from_str(&text)
                    .with_context(|| format!("cannot parse config file {}", path.display()))
                    .map_err(Failure::input)?;
                let base = path
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."));
                (config, base)
            }
            None => (PipelineConfig::default(), PathBuf::from(".")),
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(out) = out {
            config.out_dir = out.to_path_buf();
        }
        if config.forecast.n_sims == 0 {
            return Err(Failure::input(anyhow::anyhow!(
                "forecast.n_sims must be at least 1"
            )));
        }
        if config.calibration_first_year > config.calibration_last_year {
            return Err(Failure::input(anyhow::anyhow!(
                "calibration window {}..{} is empty",
                config.calibration_first_year,
                config.calibration_last_year
            )));
        }
        let hash = config_hash(&config)?;
        Ok(Self { config, hash, base })
    }

    /// Resolves a configured path against the config file's directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out(&self) -> PathBuf {
        self.path(&self.config.out_dir)
    }

    fn data_default(&self, name: &str) -> PathBuf {
        self.out().join("data").join(name)
    }

    pub fn stations_path(&self) -> PathBuf {
        match &self.config.stations_file {
            Some(p) => self.path(p),
            None => self.data_default("stations.csv"),
        }
    }

    pub fn deaths_path(&self) -> PathBuf {
        match &self.config.deaths_file {
            Some(p) => self.path(p),
            None => self.data_default("deaths.csv"),
        }
    }

    pub fn annual_path(&self) -> PathBuf {
        match &self.config.annual_file {
            Some(p) => self.path(p),
            None => self.data_default("annual.csv"),
        }
    }

    /// The scenario files of the run, sorted by name for reproducibility.
    pub fn scenario_paths(&self) -> Result<Vec<PathBuf>, Failure> {
        if !self.config.scenario_files.is_empty() {
            return Ok(self
                .config
                .scenario_files
                .iter()
                .map(|p| self.path(p))
                .collect());
        }
        let dir = match &self.config.scenarios_dir {
            Some(d) => self.path(d),
            None => self.data_default("scenarios"),
        };
        let entries = std::fs::read_dir(&dir)
            .with_context(|| format!("cannot list scenario directory {}", dir.display()))
            .map_err(Failure::input)?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Failure::input(anyhow::anyhow!(
                "no scenario files found under {}",
                dir.display()
            )));
        }
        Ok(paths)
    }
}

/// SHA-256 over the canonical JSON serialization (struct field order, paths
/// as written), hex encoded.
pub fn config_hash(config: &PipelineConfig) -> Result<String, Failure> {
    let canonical = serde_json::to_string(config)
        .context("cannot serialize configuration")
        .map_err(Failure::input)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

//! Run configuration: one TOML file, every key overridable from the command
//! line with `--set section.key=value`.

use std::fs;
use std::path::{Path, PathBuf};

use satsynth::bench::{AdapterRole, Aggregation};
use satsynth::dataset::Split;
use satsynth::image::sha256_hex;
use satsynth::ingest::SourceTag;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed. Required by `build-dataset`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub serve: ServeSection,
    #[serde(default)]
    pub workers: WorkersSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_root: PathBuf,
    pub checkpoints: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_root: "data".into(), checkpoints: "checkpoints".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `micro`, `toy` or `full`.
    pub preset: String,
    /// Diffusion steps T.
    pub steps: usize,
    /// Location classes, in class-id order.
    pub cities: Vec<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "micro".into(),
            steps: 1000,
            cities: ["brussels", "lisbon", "nairobi", "osaka", "lima", "warsaw", "hanoi", "tunis"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    /// Offline synthetic tiles.
    Procedural,
    /// Mapbox Static API (`MAPBOX_TOKEN`).
    Mapbox,
    /// Google Static Maps (`GOOGLE_MAPS_KEY`).
    Google,
    /// Use only tiles already in the store.
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub provider: ProviderChoice,
    /// Tiles fetched per (city, source) when missing from the store.
    pub tiles_per_city: usize,
    /// Seed of the tile coordinates, kept apart from the run seed so the
    /// tile set stays fixed across runs.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { provider: ProviderChoice::Procedural, tiles_per_city: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Satellite image conditioned on basemap and city.
    Image,
    /// Basemap conditioned on city and manipulation class.
    Basemap,
    /// Post-disaster style conditioned on the pre-disaster image.
    Disaster,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Image => "image",
            ModelKind::Basemap => "basemap",
            ModelKind::Disaster => "disaster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub kind: ModelKind,
    pub source: SourceTag,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub flips: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Image,
            source: SourceTag::procedural(16),
            iterations: 1000,
            batch_size: 4,
            learning_rate: 2e-3,
            checkpoint_every: 100,
            log_every: 10,
            flips: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub split: Split,
    pub n: usize,
    pub p_pristine: f64,
    pub cfg_scale: f64,
    pub overwrite: bool,
    pub train_cities: Vec<String>,
    pub test_cities: Vec<String>,
    pub train_sources: Vec<SourceTag>,
    pub test_sources: Vec<SourceTag>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            split: Split::Train,
            n: 100,
            p_pristine: satsynth::dataset::DEFAULT_P_PRISTINE,
            cfg_scale: 1.0,
            overwrite: false,
            train_cities: ["brussels", "lisbon", "nairobi", "osaka", "lima", "warsaw"].map(String::from).to_vec(),
            test_cities: ["hanoi", "tunis"].map(String::from).to_vec(),
            train_sources: vec![SourceTag::procedural(16)],
            test_sources: vec![SourceTag::procedural(16)],
        }
    }
}

impl DatasetSection {
    pub fn cities(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_cities,
            Split::Test => &self.test_cities,
        }
    }

    pub fn sources(&self, split: Split) -> &[SourceTag] {
        match split {
            Split::Train => &self.train_sources,
            Split::Test => &self.test_sources,
        }
    }
}

/// One detector or localizer: either a built-in reference adapter or an
/// external command speaking the line protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub name: String,
    /// `oracle`, `anti-oracle`, `random` or `residual`.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub command: Option<Vec<String>>,
    /// Detectors only.
    #[serde(default)]
    pub role: Option<AdapterRole>,
    /// Original decision threshold (detectors) or fixed binarization
    /// threshold (localizers).
    #[serde(default = "half")]
    pub threshold: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub split: Split,
    pub aggregation: Aggregation,
    pub calibrate_three_way: bool,
    /// Report path; defaults to `<data_root>/dataset/<split>/report.json`.
    pub report: Option<PathBuf>,
    pub detectors: Vec<AdapterSpec>,
    pub localizers: Vec<AdapterSpec>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            aggregation: Aggregation::PerImage,
            calibrate_three_way: true,
            report: None,
            detectors: Vec::new(),
            localizers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub addr: String,
    pub source: SourceTag,
    pub edit_margin: usize,
    pub cfg_scale: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            source: SourceTag::procedural(16),
            edit_margin: satsynth::pipelines::DEFAULT_EDIT_MARGIN,
            cfg_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkersSection {
    /// Compute threads; 0 keeps the default (one per core).
    pub threads: usize,
    /// Concurrent jobs in the service.
    pub service: usize,
}

impl Default for WorkersSection {
    fn default() -> Self {
        Self { threads: 0, service: 2 }
    }
}

/// Parses `key=value` where the value is a TOML literal, or a bare string
/// when it does not parse as one.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("override '{s}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override '{s}' has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Loads `path` (or the defaults), applies `overrides` in order and
    /// parses strictly.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            CliError::Config(format!("{}{e}", path.map(|p| format!("{}: ", p.display())).unwrap_or_default()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.model.cities.is_empty() {
            return bad("model.cities is empty".into());
        }
        if self.model.steps == 0 {
            return bad("model.steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dataset.p_pristine) {
            return bad(format!("dataset.p_pristine {} outside [0, 1]", self.dataset.p_pristine));
        }
        if self.train.batch_size == 0 || self.train.checkpoint_every == 0 {
            return bad("train.batch_size and train.checkpoint_every must be positive".into());
        }
        if !(self.train.learning_rate > 0.0) {
            return bad("train.learning_rate must be positive".into());
        }
        if self.workers.service == 0 {
            return bad("workers.service must be at least 1".into());
        }
        for a in self.evaluate.detectors.iter().chain(&self.evaluate.localizers) {
            if a.builtin.is_some() == a.command.is_some() {
                return bad(format!("adapter '{}' needs exactly one of builtin or command", a.name));
            }
            if a.command.as_ref().is_some_and(|c| c.is_empty()) {
                return bad(format!("adapter '{}' has an empty command", a.name));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config(format!("{command} needs a seed (set `seed` or pass --seed)")))
    }

    /// Digest of the effective configuration.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn checkpoint_path(&self, kind: ModelKind, source: SourceTag) -> PathBuf {
        match kind {
            ModelKind::Disaster => self.paths.checkpoints.join("disaster.ckpt"),
            k => self.paths.checkpoints.join(format!("{}-{source}.ckpt", k.name())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, sets: &[&str]) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, text).unwrap();
        let o: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
        RunConfig::load(Some(&p), &o)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load("sead = 3\n", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[train]\niters = 3\n", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("", &["train.iters=3"]), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_win_over_the_file() {
        let c = load("seed = 1\n[train]\niterations = 5\nsource = \"PROC18\"\n", &["seed=9", "train.iterations=7"]).unwrap();
        assert_eq!((c.seed, c.train.iterations), (Some(9), 7));
        assert_eq!(c.train.source, SourceTag::procedural(18));
        let c = load("", &["paths.data_root=/tmp/x", "dataset.split=test"]).unwrap();
        assert_eq!(c.paths.data_root, PathBuf::from("/tmp/x"));
        assert_eq!(c.dataset.split, Split::Test);
    }

    #[test]
    fn digest_tracks_effective_values() {
        let a = load("seed = 1\n", &[]).unwrap();
        let b = load("", &["seed=1"]).unwrap();
        let c = load("", &["seed=2"]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn adapters_need_one_backend() {
        let both = "[[evaluate.detectors]]\nname = \"x\"\nbuiltin = \"oracle\"\ncommand = [\"true\"]\n";
        assert!(matches!(load(both, &[]), Err(CliError::Config(_))));
        let ok = "[[evaluate.detectors]]\nname = \"x\"\nbuiltin = \"oracle\"\nrole = \"both\"\n";
        assert_eq!(load(ok, &[]).unwrap().evaluate.detectors[0].role, Some(AdapterRole::Both));
    }
}

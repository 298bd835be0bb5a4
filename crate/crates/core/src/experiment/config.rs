//! Flat TOML experiment configuration. Every key is optional; a `preset`
//! key picks the starting point and the remaining keys override it.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::clustering::{ClusterMethod, KMeansConfig};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Optimizer, TrainConfig};
use crate::protocol::{Period, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FedAvg,
    FedAvgWs,
    FedCode,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedavg" => Some(Method::FedAvg),
            "fedavg_ws" => Some(Method::FedAvgWs),
            "fedcode" => Some(Method::FedCode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedAvgWs => "fedavg_ws",
            Method::FedCode => "fedcode",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Blobs {
        samples_per_class: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub method: Method,
    pub seed: u64,
    pub num_clients: usize,
    pub rounds: u32,
    pub r_cb: u32,
    pub participation: f64,
    pub f1: f64,
    pub f2: f64,
    /// Explicit calibration periods; override `f1`/`f2` when set.
    pub period1: Option<u32>,
    pub period2: Option<u32>,
    pub beta: f64,
    pub model: ModelSpec,
    pub dataset: DatasetSource,
    pub kmeans: KMeansConfig,
    pub train: TrainConfig,
    pub wordlength: u32,
    pub accounting_only: bool,
    /// Parameter count used by accounting-only runs instead of the model's.
    pub accounting_params: Option<u64>,
    pub threads: usize,
    pub out_dir: PathBuf,
}

pub const DEFAULT_PRESET: &str = "blobs-small";

pub const PRESETS: &[&str] = &[
    "blobs-small",
    "blobs-noniid",
    "resnet20-accounting",
    "resnet20-rho1-iid",
    "resnet20-rho1-noniid",
    "resnet20-rho0.1-iid",
    "resnet20-rho0.1-noniid",
    "mobilenet-rho1-iid",
    "mobilenet-rho1-noniid",
    "mobilenet-rho0.1-iid",
    "mobilenet-rho0.1-noniid",
    "yamnet-rho1",
    "yamnet-rho0.1",
];

/// Parameter count matching the transmitted volumes reported for ResNet-20.
pub const RESNET20_PARAMS: u64 = 262_805;
pub const MOBILENET_PARAMS: u64 = 2_230_000;
pub const YAMNET_PARAMS: u64 = 3_210_000;

pub const CONFIG_HELP: &str = "\
CONFIG KEYS (flat TOML; all optional; unknown keys are rejected)
  preset                 starting point (default blobs-small); one of:
                         blobs-small blobs-noniid resnet20-accounting resnet20-rho{1,0.1}-{iid,noniid}
                         mobilenet-rho{1,0.1}-{iid,noniid} yamnet-rho{1,0.1}
  method                 fedavg | fedavg_ws | fedcode            (fedcode)
  seed                   master seed                              (0)
  num_clients            N                                        (10)
  rounds                 R                                        (40)
  r_cb                   rounds of weight exchange before codebook-only rounds (2)
  participation          rho in (0, 1]                            (1.0)
  f1, f2                 downlink / uplink calibration frequency in [0, 1] (0.33, 0.5)
  period1, period2       calibration period in rounds, overrides f1 / f2
  beta                   Dirichlet concentration, > 0             (10.0)
  clusters               K                                        (64)
  kmeans_method          exact | lloyd                            (exact)
  kmeans_max_iterations  Lloyd iteration cap                      (25)
  kmeans_tolerance       Lloyd relative center movement stop      (1e-6)
  local_epochs           E                                        (4)
  batch_size                                                      (32)
  learning_rate                                                   (0.01)
  optimizer              adam | sgd                               (adam)
  adam_beta1, adam_beta2, adam_epsilon                            (0.9, 0.999, 1e-8)
  input_dim, hidden_dims, num_classes   MLP shape                 (8, [32], 4)
  samples_per_class, spread             synthetic blobs           (200, 0.25)
  dataset_csv            CSV file, label in last column; replaces the blobs
  wordlength             bits per uncompressed value              (32)
  accounting_only        skip training, count bits only           (false)
  accounting_params      parameter count for accounting-only runs
  threads                client-update workers, 0 = all cores     (0)
  out_dir                output directory                         (out)";

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(DEFAULT_PRESET).expect("default preset exists")
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = ExperimentConfig {
            preset: name.to_string(),
            method: Method::FedCode,
            seed: 0,
            num_clients: 10,
            rounds: 40,
            r_cb: 2,
            participation: 1.0,
            f1: 0.33,
            f2: 0.5,
            period1: None,
            period2: None,
            beta: 10.0,
            model: ModelSpec::default(),
            dataset: DatasetSource::Blobs {
                samples_per_class: 200,
                spread: 0.25,
            },
            kmeans: KMeansConfig::with_k(64),
            train: TrainConfig {
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
            wordlength: 32,
            accounting_only: false,
            accounting_params: None,
            threads: 0,
            out_dir: PathBuf::from("out"),
        };

        let large_model =
            |c: &mut ExperimentConfig, params: u64, rounds: u32, rho: f64, beta: f64| {
                c.accounting_only = true;
                c.accounting_params = Some(params);
                c.rounds = rounds;
                c.participation = rho;
                c.beta = beta;
                c.train.learning_rate = 0.001;
            };
        match name {
            "blobs-small" => {}
            "blobs-noniid" => c.beta = 0.1,
            "resnet20-accounting" => {
                large_model(&mut c, RESNET20_PARAMS, 100, 1.0, 10.0);
                c.f1 = 0.2;
            }
            "resnet20-rho1-iid"
            | "resnet20-rho1-noniid"
            | "resnet20-rho0.1-iid"
            | "resnet20-rho0.1-noniid" => {
                let iid = name.ends_with("-iid");
                let rho = if name.contains("rho1-") { 1.0 } else { 0.1 };
                let rounds = match (rho == 1.0, iid) {
                    (true, true) => 60,
                    (true, false) => 100,
                    (false, true) => 600,
                    (false, false) => 1000,
                };
                large_model(
                    &mut c,
                    RESNET20_PARAMS,
                    rounds,
                    rho,
                    if iid { 10.0 } else { 0.1 },
                );
                c.f1 = 0.2;
            }
            "mobilenet-rho1-iid"
            | "mobilenet-rho1-noniid"
            | "mobilenet-rho0.1-iid"
            | "mobilenet-rho0.1-noniid" => {
                let iid = name.ends_with("-iid");
                let rho = if name.contains("rho1-") { 1.0 } else { 0.1 };
                let rounds = match (rho == 1.0, iid) {
                    (true, true) => 100,
                    (true, false) => 200,
                    (false, true) => 1000,
                    (false, false) => 2000,
                };
                large_model(
                    &mut c,
                    MOBILENET_PARAMS,
                    rounds,
                    rho,
                    if iid { 10.0 } else { 0.1 },
                );
                c.r_cb = 4;
                c.kmeans.k = if iid { 64 } else { 128 };
            }
            "yamnet-rho1" | "yamnet-rho0.1" => {
                let rho = if name == "yamnet-rho1" { 1.0 } else { 0.1 };
                let rounds = if rho == 1.0 { 100 } else { 1000 };
                large_model(&mut c, YAMNET_PARAMS, rounds, rho, 10.0);
                c.r_cb = 4;
            }
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
                ))
            }
        }
        Ok(c)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            Error::config(parse_error_key(&e), e.message().to_string())
        })?;
        let preset = match table.get("preset") {
            Some(v) => str_value("preset", v)?,
            None => DEFAULT_PRESET.to_string(),
        };
        let mut cfg = ExperimentConfig::preset(&preset)?;
        for (key, value) in &table {
            cfg.apply_key(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_key(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "preset" => {}
            "method" => {
                let s = str_value(key, v)?;
                self.method = Method::parse(&s).ok_or_else(|| {
                    Error::config(
                        key,
                        format!("`{s}` is not one of fedavg, fedavg_ws, fedcode"),
                    )
                })?;
            }
            "seed" => self.seed = uint(key, v)?,
            "num_clients" => self.num_clients = uint(key, v)? as usize,
            "rounds" => self.rounds = uint_u32(key, v)?,
            "r_cb" => self.r_cb = uint_u32(key, v)?,
            "participation" => self.participation = float(key, v)?,
            "f1" => self.f1 = float(key, v)?,
            "f2" => self.f2 = float(key, v)?,
            "period1" => self.period1 = Some(uint_u32(key, v)?),
            "period2" => self.period2 = Some(uint_u32(key, v)?),
            "beta" => self.beta = float(key, v)?,
            "clusters" => self.kmeans.k = uint(key, v)? as usize,
            "kmeans_method" => {
                self.kmeans.method = match str_value(key, v)?.as_str() {
                    "exact" => ClusterMethod::Exact,
                    "lloyd" => ClusterMethod::Lloyd,
                    s => return Err(Error::config(key, format!("`{s}` is not exact or lloyd"))),
                }
            }
            "kmeans_max_iterations" => self.kmeans.max_iterations = uint(key, v)? as usize,
            "kmeans_tolerance" => self.kmeans.rel_tolerance = float(key, v)?,
            "local_epochs" => self.train.local_epochs = uint(key, v)? as usize,
            "batch_size" => self.train.batch_size = uint(key, v)? as usize,
            "learning_rate" => self.train.learning_rate = float(key, v)?,
            "optimizer" => {
                self.train.optimizer = match str_value(key, v)?.as_str() {
                    "adam" => Optimizer::Adam,
                    "sgd" => Optimizer::Sgd,
                    s => return Err(Error::config(key, format!("`{s}` is not adam or sgd"))),
                }
            }
            "adam_beta1" => self.train.adam_beta1 = float(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = float(key, v)?,
            "adam_epsilon" => self.train.adam_epsilon = float(key, v)?,
            "input_dim" => self.model.input_dim = uint(key, v)? as usize,
            "num_classes" => self.model.num_classes = uint(key, v)? as usize,
            "hidden_dims" => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::config(key, "expected an array of integers"))?;
                self.model.hidden_dims = arr
                    .iter()
                    .map(|x| uint(key, x).map(|n| n as usize))
                    .collect::<Result<_>>()?;
            }
            "samples_per_class" | "spread" => {
                let DatasetSource::Blobs {
                    samples_per_class,
                    spread,
                } = &mut self.dataset
                else {
                    return Err(Error::config(
                        key,
                        "only applies to synthetic blobs, not dataset_csv",
                    ));
                };
                if key == "spread" {
                    *spread = float(key, v)?;
                } else {
                    *samples_per_class = uint(key, v)? as usize;
                }
            }
            "dataset_csv" => {
                self.dataset = DatasetSource::Csv {
                    path: PathBuf::from(str_value(key, v)?),
                }
            }
            "wordlength" => self.wordlength = uint_u32(key, v)?,
            "accounting_only" => {
                self.accounting_only = v
                    .as_bool()
                    .ok_or_else(|| Error::config(key, "expected true or false"))?
            }
            "accounting_params" => self.accounting_params = Some(uint(key, v)?),
            "threads" => self.threads = uint(key, v)? as usize,
            "out_dir" => self.out_dir = PathBuf::from(str_value(key, v)?),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Range checks; each failure names its key.
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("participation", "must lie in (0, 1]"));
        }
        for (key, f) in [("f1", self.f1), ("f2", self.f2)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(key, format!("{f} is outside [0, 1]")));
            }
        }
        for (key, p) in [("period1", self.period1), ("period2", self.period2)] {
            if p == Some(0) {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be positive"));
        }
        if !(1..=64).contains(&self.wordlength) {
            return Err(Error::config("wordlength", "must lie in 1..=64"));
        }
        if self.accounting_params == Some(0) {
            return Err(Error::config("accounting_params", "must be positive"));
        }
        if let DatasetSource::Blobs {
            samples_per_class,
            spread,
        } = self.dataset
        {
            if samples_per_class < 2 {
                return Err(Error::config("samples_per_class", "must be at least 2"));
            }
            if !(spread > 0.0 && spread.is_finite()) {
                return Err(Error::config("spread", "must be positive"));
            }
        }
        self.model.validate()?;
        self.kmeans.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Schedule implied by the method: weight-clustered FedAvg calibrates
    /// every round in both directions.
    pub fn schedule(&self) -> Result<Schedule> {
        if self.method == Method::FedAvgWs {
            return Ok(Schedule::every_round());
        }
        let pick = |key: &str, period: Option<u32>, f: f64| match period {
            Some(p) => Ok(Period::Every(p)),
            None => Period::from_frequency(key, f),
        };
        Schedule::from_periods(
            pick("f1", self.period1, self.f1)?,
            pick("f2", self.period2, self.f2)?,
            self.r_cb,
        )
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

fn parse_error_key(e: &toml::de::Error) -> String {
    e.message()
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

fn str_value(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::config(key, "expected a string"))
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    let i = v
        .as_integer()
        .ok_or_else(|| Error::config(key, "expected an integer"))?;
    u64::try_from(i).map_err(|_| Error::config(key, format!("{i} is negative")))
}

fn uint_u32(key: &str, v: &Value) -> Result<u32> {
    let i = uint(key, v)?;
    u32::try_from(i).map_err(|_| Error::config(key, format!("{i} is too large")))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, "expected a number")),
    }
}

use std::path::Path;

use crate::accounting::{
    dtr_empirical, full_weights_bits, index_bits, megabytes, ByteLedger, Direction, DtrReport,
};
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::partition::{
    dirichlet_partition, load_csv_dataset, synth_blobs, train_test_split, PartitionConfig,
    TrainTestSplit,
};
use crate::protocol::{
    run_fedavg, run_fedavg_ws, run_fedcode, sample_clients, Federation, MessageKind,
    SimulationConfig, SimulationOutput,
};

use super::config::{DatasetSource, ExperimentConfig, Method};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const ROUNDS_CSV_HEADER: [&str; 7] = [
    "round",
    "test_accuracy",
    "down_bits",
    "up_bits",
    "cumulative_bits",
    "down_bpp",
    "up_bpp",
];
pub const SUMMARY_CSV_HEADER: [&str; 14] = [
    "schema_version",
    "method",
    "rounds",
    "param_count",
    "final_accuracy",
    "best_accuracy",
    "delta_acc",
    "down_dtr",
    "up_dtr",
    "total_dtr",
    "fedavg_bits",
    "transmitted_bits",
    "fedavg_mb",
    "transmitted_mb",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: u32,
    /// `None` in accounting-only runs.
    pub test_accuracy: Option<f64>,
    pub down_bits: u64,
    pub up_bits: u64,
    pub cumulative_bits: u64,
    pub down_bpp: f64,
    pub up_bpp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    /// Best accuracy minus that of a same-seed FedAvg run, when requested.
    pub delta_acc: Option<f64>,
    pub dtr: DtrReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub param_count: u64,
    pub rows: Vec<RoundRow>,
    pub summary: RunSummary,
    pub ledger: ByteLedger,
}

/// Data, partition, model and initial weights for a configuration.
pub fn build_federation(config: &ExperimentConfig) -> Result<Federation> {
    let split = match &config.dataset {
        DatasetSource::Blobs {
            samples_per_class,
            spread,
        } => synth_blobs(
            *samples_per_class,
            config.model.num_classes,
            config.model.input_dim,
            *spread,
            config.seed,
        )?,
        DatasetSource::Csv { path } => {
            let data = load_csv_dataset(path, Some(config.model.num_classes))?;
            if data.input_dim() != config.model.input_dim {
                return Err(Error::config(
                    "input_dim",
                    format!(
                        "{} has {} feature columns",
                        path.display(),
                        data.input_dim()
                    ),
                ));
            }
            train_test_split(&data, 0.2, config.seed)?
        }
    };
    let TrainTestSplit { train, test } = split;
    let partition = dirichlet_partition(
        train.labels(),
        &PartitionConfig {
            num_clients: config.num_clients,
            beta: config.beta,
            seed: config.seed,
        },
    )?;
    let clients = partition.client_datasets(&train)?;
    let model = Mlp::new(config.model.clone())?;
    let initial = model.init_params(config.seed);
    Ok(Federation {
        model,
        clients,
        test,
        initial,
    })
}

pub fn simulation_config(config: &ExperimentConfig) -> Result<SimulationConfig> {
    Ok(SimulationConfig {
        rounds: config.rounds,
        participation: config.participation,
        schedule: config.schedule()?,
        kmeans: config.kmeans.clone(),
        train: config.train.clone(),
        seed: config.seed,
        threads: config.threads,
        wordlength: config.wordlength,
    })
}

/// Runs the configured method, or only its accounting when
/// `accounting_only` is set.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    if config.accounting_only {
        let p = accounting_param_count(config);
        let ledger = accounting_ledger(config)?;
        return report_from(config.method, p, ledger, None, None);
    }
    let fed = build_federation(config)?;
    let out = simulate(&fed, config, config.method)?;
    let acc: Vec<f64> = out.records.iter().map(|r| r.test_accuracy).collect();
    report_from(
        config.method,
        out.param_count as u64,
        out.ledger,
        Some(acc),
        None,
    )
}

/// Like [`run`], also running FedAvg on the same federation to fill
/// `delta_acc`.
pub fn run_with_reference(config: &ExperimentConfig) -> Result<RunReport> {
    if config.accounting_only {
        return Err(Error::config(
            "accounting_only",
            "an accuracy difference needs a training run",
        ));
    }
    config.validate()?;
    let fed = build_federation(config)?;
    let out = simulate(&fed, config, config.method)?;
    let reference = simulate(&fed, config, Method::FedAvg)?;
    let best = |o: &SimulationOutput| {
        o.records
            .iter()
            .map(|r| r.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let delta = best(&out) - best(&reference);
    let acc: Vec<f64> = out.records.iter().map(|r| r.test_accuracy).collect();
    report_from(
        config.method,
        out.param_count as u64,
        out.ledger,
        Some(acc),
        Some(delta),
    )
}

pub fn simulate(
    fed: &Federation,
    config: &ExperimentConfig,
    method: Method,
) -> Result<SimulationOutput> {
    let sim = simulation_config(config)?;
    match method {
        Method::FedAvg => run_fedavg(fed, &sim),
        Method::FedAvgWs => run_fedavg_ws(fed, &sim),
        Method::FedCode => run_fedcode(fed, &sim),
    }
}

/// DTR of the configured schedule without any model arithmetic.
pub fn accounting_only(config: &ExperimentConfig) -> Result<DtrReport> {
    config.validate()?;
    let ledger = accounting_ledger(config)?;
    let (down, up) = ledger.fedavg_baseline(accounting_param_count(config));
    dtr_empirical(&ledger, down, up)
}

fn accounting_param_count(config: &ExperimentConfig) -> u64 {
    config
        .accounting_params
        .unwrap_or_else(|| config.model.param_count() as u64)
}

/// The ledger a run would produce, assuming every codebook carries
/// min(K, P) centers.
pub fn accounting_ledger(config: &ExperimentConfig) -> Result<ByteLedger> {
    let p = accounting_param_count(config);
    let w = config.wordlength;
    let k = (config.kmeans.k as u64).min(p);
    let full = full_weights_bits(p, w);
    let codebook = k * w as u64;
    let with_weights = codebook + p * index_bits(k) as u64;
    let schedule = config.schedule()?;
    let size = |kind: MessageKind| match kind {
        MessageKind::CodebookOnly => codebook,
        MessageKind::CodebookPlusWeights => with_weights,
    };

    let mut ledger = ByteLedger::new(w);
    for round in 1..=config.rounds {
        let participants =
            sample_clients(config.num_clients, config.participation, config.seed, round);
        let (down, up) = match config.method {
            Method::FedAvg => (full, full),
            Method::FedAvgWs => (with_weights, with_weights),
            Method::FedCode => (
                size(schedule.downlink_kind(round)),
                size(schedule.uplink_kind(round)),
            ),
        };
        for &id in &participants {
            ledger.record(round, Direction::Down, id, down)?;
        }
        for &id in &participants {
            ledger.record(round, Direction::Up, id, up)?;
        }
    }
    Ok(ledger)
}

fn report_from(
    method: Method,
    param_count: u64,
    ledger: ByteLedger,
    accuracies: Option<Vec<f64>>,
    delta_acc: Option<f64>,
) -> Result<RunReport> {
    let (base_down, base_up) = ledger.fedavg_baseline(param_count);
    let dtr = dtr_empirical(&ledger, base_down, base_up)?;
    let p = param_count as f64;
    let mut cumulative = 0;
    let rows: Vec<RoundRow> = ledger
        .per_round()
        .into_iter()
        .enumerate()
        .map(|(i, (round, t))| {
            cumulative += t.down_bits + t.up_bits;
            let bpp = |bits: u64, msgs: u64| {
                if msgs == 0 {
                    0.0
                } else {
                    bits as f64 / (msgs as f64 * p)
                }
            };
            RoundRow {
                round,
                test_accuracy: accuracies.as_ref().map(|a| a[i]),
                down_bits: t.down_bits,
                up_bits: t.up_bits,
                cumulative_bits: cumulative,
                down_bpp: bpp(t.down_bits, t.down_msgs),
                up_bpp: bpp(t.up_bits, t.up_msgs),
            }
        })
        .collect();
    let final_accuracy = rows.last().and_then(|r| r.test_accuracy);
    let best_accuracy = accuracies
        .as_ref()
        .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(RunReport {
        method,
        param_count,
        rows,
        summary: RunSummary {
            final_accuracy,
            best_accuracy,
            delta_acc,
            dtr,
        },
        ledger,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl RoundRow {
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            fmt_opt(self.test_accuracy),
            self.down_bits.to_string(),
            self.up_bits.to_string(),
            self.cumulative_bits.to_string(),
            format!("{:.6}", self.down_bpp),
            format!("{:.6}", self.up_bpp),
        ]
    }
}

impl RunReport {
    /// Final row of `rounds.csv`: totals over the run.
    pub fn totals_fields(&self) -> Vec<String> {
        let d = &self.summary.dtr;
        let msgs = |dir| self.ledger.message_count(dir) as f64 * self.param_count as f64;
        vec![
            "total".to_string(),
            fmt_opt(self.summary.final_accuracy),
            d.fedcode_down_bits.to_string(),
            d.fedcode_up_bits.to_string(),
            d.fedcode_bits.to_string(),
            format!("{:.6}", d.fedcode_down_bits as f64 / msgs(Direction::Down)),
            format!("{:.6}", d.fedcode_up_bits as f64 / msgs(Direction::Up)),
        ]
    }

    pub fn summary_fields(&self) -> Vec<String> {
        let s = &self.summary;
        vec![
            CSV_SCHEMA_VERSION.to_string(),
            self.method.name().to_string(),
            self.rows.len().to_string(),
            self.param_count.to_string(),
            fmt_opt(s.final_accuracy),
            fmt_opt(s.best_accuracy),
            fmt_opt(s.delta_acc),
            format!("{:.6}", s.dtr.down_dtr),
            format!("{:.6}", s.dtr.up_dtr),
            format!("{:.6}", s.dtr.total_dtr),
            s.dtr.fedavg_bits.to_string(),
            s.dtr.fedcode_bits.to_string(),
            format!("{:.6}", megabytes(s.dtr.fedavg_bits)),
            format!("{:.6}", megabytes(s.dtr.fedcode_bits)),
        ]
    }

    /// Writes `rounds.csv` and `summary.csv` into `dir`, creating it.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("rounds.csv"))?;
        w.write_record(ROUNDS_CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.csv_fields())?;
        }
        w.write_record(self.totals_fields())?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(SUMMARY_CSV_HEADER)?;
        w.write_record(self.summary_fields())?;
        w.flush()?;
        Ok(())
    }
}

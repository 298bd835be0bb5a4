//! Grid sweeps over a handful of configuration axes.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::protocol::in_pool;

use super::config::ExperimentConfig;
use super::run::{run, RunReport, ROUNDS_CSV_HEADER, SUMMARY_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    K,
    F1,
    F2,
    E,
    Beta,
    Rho,
}

impl Axis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "K" | "k" | "clusters" => Axis::K,
            "F1" | "f1" => Axis::F1,
            "F2" | "f2" => Axis::F2,
            "E" | "e" | "local_epochs" => Axis::E,
            "beta" => Axis::Beta,
            "rho" | "participation" => Axis::Rho,
            other => {
                return Err(Error::config(
                    "axis",
                    format!("unknown axis `{other}`; use K, F1, F2, E, beta or rho"),
                ))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "K",
            Axis::F1 => "F1",
            Axis::F2 => "F2",
            Axis::E => "E",
            Axis::Beta => "beta",
            Axis::Rho => "rho",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Axis::K | Axis::E)
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            Axis::K => cfg.kmeans.k = v as usize,
            Axis::F1 => {
                cfg.f1 = v;
                cfg.period1 = None;
            }
            Axis::F2 => {
                cfg.f2 = v;
                cfg.period2 = None;
            }
            Axis::E => cfg.train.local_epochs = v as usize,
            Axis::Beta => cfg.beta = v,
            Axis::Rho => cfg.participation = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// Parses `NAME=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, list) = spec
            .split_once('=')
            .ok_or_else(|| Error::config("axis", format!("`{spec}` is not NAME=v1,v2,...")))?;
        let axis = Axis::parse(name.trim())?;
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::config(axis.name(), format!("`{s}` is not a number")))?;
                if axis.is_integer() && (v.fract() != 0.0 || v < 0.0) {
                    return Err(Error::config(
                        axis.name(),
                        format!("`{s}` is not a whole number"),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::config(axis.name(), "axis has no values"));
        }
        Ok(SweepAxis { axis, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    /// One value per axis, in axis order.
    pub values: Vec<f64>,
    pub report: RunReport,
}

/// Cartesian product of the axes, first axis outermost.
pub fn grid(axes: &[SweepAxis]) -> Result<Vec<Vec<f64>>> {
    if axes.is_empty() {
        return Err(Error::Argument("a sweep needs at least one axis".into()));
    }
    for (i, a) in axes.iter().enumerate() {
        if a.values.is_empty() {
            return Err(Error::Argument(format!(
                "axis {} has no values",
                a.axis.name()
            )));
        }
        if axes[..i].iter().any(|b| b.axis == a.axis) {
            return Err(Error::Argument(format!(
                "axis {} given twice",
                a.axis.name()
            )));
        }
    }
    let mut cells = vec![Vec::new()];
    for a in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                a.values.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

/// Runs every grid cell. Cells run in parallel on `base.threads` workers;
/// results keep grid order.
pub fn sweep(base: &ExperimentConfig, axes: &[SweepAxis]) -> Result<Vec<SweepCell>> {
    let cells = grid(axes)?;
    let configs = cells
        .iter()
        .map(|values| {
            let mut cfg = base.clone();
            cfg.threads = 0;
            for (a, &v) in axes.iter().zip(values) {
                a.axis.apply(&mut cfg, v);
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = in_pool(base.threads, || {
        configs.par_iter().map(run).collect::<Result<Vec<_>>>()
    })??;
    Ok(cells
        .into_iter()
        .zip(reports)
        .map(|(values, report)| SweepCell { values, report })
        .collect())
}

/// Writes `sweep_rounds.csv` and `sweep_summary.csv`, axis columns first.
pub fn write_sweep_csv(axes: &[SweepAxis], cells: &[SweepCell], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let axis_names: Vec<&str> = axes.iter().map(|a| a.axis.name()).collect();
    let axis_fields =
        |cell: &SweepCell| -> Vec<String> { cell.values.iter().map(|v| v.to_string()).collect() };

    let mut w = csv::Writer::from_path(dir.join("sweep_rounds.csv"))?;
    w.write_record(axis_names.iter().copied().chain(ROUNDS_CSV_HEADER))?;
    for cell in cells {
        for row in &cell.report.rows {
            w.write_record(axis_fields(cell).into_iter().chain(row.csv_fields()))?;
        }
        w.write_record(
            axis_fields(cell)
                .into_iter()
                .chain(cell.report.totals_fields()),
        )?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("sweep_summary.csv"))?;
    w.write_record(axis_names.iter().copied().chain(SUMMARY_CSV_HEADER))?;
    for cell in cells {
        w.write_record(
            axis_fields(cell)
                .into_iter()
                .chain(cell.report.summary_fields()),
        )?;
    }
    w.flush()?;
    Ok(())
}

//! Synthetic data, CSV import, and Dirichlet label-skew partitioning of a
//! dataset across clients.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::LabeledDataset;
use crate::seed;

/// Share of a client's samples a class must reach to count towards C_p.
pub const CONCENTRATION_THRESHOLD: f64 = 0.01;

/// Per-client sample indices into one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Disjoint, in range, every client non-empty.
    pub fn validate(&self, num_samples: usize) -> Result<()> {
        let mut seen = vec![false; num_samples];
        for (c, rows) in self.assignments.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::Argument(format!("client {c} has no samples")));
            }
            for &r in rows {
                if r >= num_samples {
                    return Err(Error::Argument(format!(
                        "client {c} holds row {r} out of range"
                    )));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::Argument(format!("row {r} assigned twice")));
                }
            }
        }
        Ok(())
    }

    pub fn client_datasets(&self, data: &LabeledDataset) -> Result<Vec<LabeledDataset>> {
        self.validate(data.len())?;
        self.assignments
            .iter()
            .map(|rows| data.subset(rows))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub beta: f64,
    pub seed: u64,
}

/// A draw from Dir(β, …, β) of the given dimension. Gamma variates are
/// combined in log space so tiny β never underflows to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(beta: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!(
            "Dirichlet concentration must be positive, got {beta}"
        )));
    }
    if dim == 0 {
        return Err(Error::Argument(
            "Dirichlet dimension must be at least 1".into(),
        ));
    }
    if dim == 1 {
        return Ok(vec![1.0]);
    }
    // Gamma(β) = Gamma(β + 1) · U^(1/β) for β < 1.
    let (shape, boost) = if beta < 1.0 {
        (beta + 1.0, true)
    } else {
        (beta, false)
    };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mut l = g.max(f64::MIN_POSITIVE).ln();
            if boost {
                let u: f64 = 1.0 - rng.random::<f64>();
                l += u.ln() / beta;
            }
            l
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Integer counts summing to `total`, proportional to `shares`, by the
/// largest-remainder method. Ties go to the lower index.
pub fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits every class across clients in Dir(β) proportions.
pub fn dirichlet_partition(labels: &[usize], cfg: &PartitionConfig) -> Result<Partition> {
    let n = cfg.num_clients;
    if n == 0 {
        return Err(Error::config("num_clients", "must be at least 1"));
    }
    if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
        return Err(Error::config("beta", "must be a positive number"));
    }
    if labels.len() < n {
        return Err(Error::Argument(format!(
            "{} samples cannot cover {n} clients",
            labels.len()
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let mut rng = seed::rng_from(cfg.seed, &[seed::TAG_PARTITION]);
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n];

    for &class in &classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let shares = sample_dirichlet(cfg.beta, n, &mut rng)?;
        let counts = apportion(&shares, rows.len());
        let mut start = 0;
        for (client, count) in counts.into_iter().enumerate() {
            assignments[client].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }

    while let Some(empty) = assignments.iter().position(|a| a.is_empty()) {
        let donor = (0..n)
            .max_by(|&a, &b| {
                assignments[a]
                    .len()
                    .cmp(&assignments[b].len())
                    .then(b.cmp(&a))
            })
            .expect("at least one client");
        let moved = assignments[donor]
            .pop()
            .expect("donor holds at least two samples");
        assignments[empty].push(moved);
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition { assignments })
}

/// Mean over clients of the fraction of classes holding at least 1% of that
/// client's samples.
pub fn class_concentration(partition: &Partition, labels: &[usize]) -> f64 {
    let classes: Vec<usize> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() || partition.assignments.is_empty() {
        return 0.0;
    }
    let slot = |label: usize| {
        classes
            .binary_search(&label)
            .expect("label from the same list")
    };
    let per_client: f64 = partition
        .assignments
        .iter()
        .map(|rows| {
            let mut counts = vec![0usize; classes.len()];
            rows.iter().for_each(|&r| counts[slot(labels[r])] += 1);
            let floor = CONCENTRATION_THRESHOLD * rows.len() as f64;
            let present = counts
                .iter()
                .filter(|&&c| c > 0 && c as f64 >= floor)
                .count();
            present as f64 / classes.len() as f64
        })
        .sum();
    per_client / partition.assignments.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Gaussian blobs, one per class, with class means drawn on the unit sphere.
/// Each class is split 80/20 into train and test.
pub fn synth_blobs(
    n_per_class: usize,
    num_classes: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<TrainTestSplit> {
    if n_per_class < 2 {
        return Err(Error::config(
            "samples_per_class",
            "need at least 2 for a train/test split",
        ));
    }
    if num_classes == 0 || input_dim == 0 {
        return Err(Error::Argument(
            "blobs need at least one class and one dimension".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config("spread", "must be positive"));
    }
    let mut rng = seed::rng_from(seed, &[seed::TAG_DATA]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let n_train = ((n_per_class as f64 * 0.8).round() as usize).clamp(1, n_per_class - 1);
    let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (vec![], vec![], vec![], vec![]);
    for (class, mean) in means.iter().enumerate() {
        for i in 0..n_per_class {
            let (xs, ys) = if i < n_train {
                (&mut tr_x, &mut tr_y)
            } else {
                (&mut te_x, &mut te_y)
            };
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                xs.push(m + spread * z);
            }
            ys.push(class);
        }
    }
    Ok(TrainTestSplit {
        train: LabeledDataset::new(tr_x, tr_y, input_dim)?,
        test: LabeledDataset::new(te_x, te_y, input_dim)?,
    })
}

/// Stratified split holding out `test_fraction` of every class.
pub fn train_test_split(
    data: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<TrainTestSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument("test fraction must lie in (0, 1)".into()));
    }
    let mut rng = seed::rng_from(seed, &[seed::TAG_DATA, 1]);
    let classes: BTreeSet<usize> = data.labels().iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in classes {
        let mut rows: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels()[i] == class)
            .collect();
        rows.shuffle(&mut rng);
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        let n_test = n_test.min(rows.len() - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    if test.is_empty() {
        return Err(Error::Dataset(
            "dataset too small to hold out a test set".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrainTestSplit {
        train: data.subset(&train)?,
        test: data.subset(&test)?,
    })
}

/// Reads one sample per row, numeric features, integer label in the last
/// column. A non-numeric first row is taken as a header.
pub fn load_csv_dataset(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset(format!("line {}: {e}", line + 1)))?;
        let parsed: Option<Vec<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(values) = parsed else {
            if line == 0 {
                continue;
            }
            return Err(Error::Dataset(format!(
                "line {}: non-numeric field",
                line + 1
            )));
        };
        if values.len() < 2 {
            return Err(Error::Dataset(format!(
                "line {}: need at least one feature and a label",
                line + 1
            )));
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Dataset(format!(
                "line {}: expected {} columns, found {}",
                line + 1,
                width.unwrap_or_default(),
                values.len()
            )));
        }
        let (label, row) = values.split_last().expect("non-empty");
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "line {}: non-finite feature",
                line + 1
            )));
        }
        if *label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Dataset(format!(
                "line {}: label {label} is not a non-negative integer",
                line + 1
            )));
        }
        let label = *label as usize;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Dataset(format!(
                    "line {}: label {label} out of range for {c} classes",
                    line + 1
                )));
            }
        }
        features.extend_from_slice(row);
        labels.push(label);
    }
    let dim = width
        .map(|w| w - 1)
        .ok_or_else(|| Error::Dataset(format!("{}: no samples", path.display())))?;
    LabeledDataset::new(features, labels, dim)
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Every tolerance is pinned below.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedcode::accounting::codec::{decode, encode, HEADER_BYTES};
use fedcode::accounting::{fedavg_volume, index_bits, megabytes, message_bits};
use fedcode::clustering::{compress, decompress, kmeans_fit, snap, Codebook, KMeansConfig};
use fedcode::experiment::{
    self, accounting_only, build_federation, simulation_config, sweep, write_sweep_csv,
    ExperimentConfig, Method, SweepAxis, RESNET20_PARAMS,
};
use fedcode::model::{FlatParams, LabeledDataset, Mlp, ModelSpec};
use fedcode::partition::{class_concentration, dirichlet_partition, PartitionConfig};
use fedcode::protocol::{run_fedavg_ws, run_fedcode, Period, Schedule, TransferMsg};

const GRID_REL_TOL: f64 = 0.02;
const FEDAVG_MB_REL_TOL: f64 = 0.001;
const WS_DTR_REL_TOL: f64 = 0.01;
const IID_ACC_GAP: f64 = 0.03;
const MIN_ACCURACY: f64 = 0.90;
const NONIID_ACC_GAP: f64 = 0.05;
const KMEANS_ABS_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const CP_IID_MIN: f64 = 0.9;
const CP_NONIID_MAX: f64 = 0.35;
const ACCOUNTING_BUDGET: Duration = Duration::from_secs(1);
const TRAINING_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn check_close(label: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if rel_err(got, want) <= tol {
        Ok(())
    } else {
        Err(format!(
            "{label}: got {got:.4}, want {want} ± {:.1}%",
            tol * 100.0
        ))
    }
}

fn resnet_accounting(f1: f64, f2: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset("resnet20-accounting").expect("preset");
    c.f1 = f1;
    c.f2 = f2;
    c
}

fn resnet_dtr_grid() -> Outcome {
    // (F1, F2, total DTR, transmitted MB)
    let rows = [
        (1.0, 1.0, 5.3, 394.21),
        (0.5, 0.5, 10.4, 201.08),
        (0.33, 0.33, 15.2, 138.01),
        (0.2, 0.5, 14.6, 143.92),
        (0.1, 0.1, 44.3, 47.35),
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (f1, f2, dtr, mb) in rows {
        let report = accounting_only(&resnet_accounting(f1, f2)).map_err(|e| e.to_string())?;
        let got_mb = megabytes(report.fedcode_bits);
        check_close(
            &format!("({f1},{f2}) DTR"),
            report.total_dtr,
            dtr,
            GRID_REL_TOL,
        )?;
        check_close(&format!("({f1},{f2}) MB"), got_mb, mb, GRID_REL_TOL)?;
        worst = worst
            .max(rel_err(report.total_dtr, dtr))
            .max(rel_err(got_mb, mb));
    }
    let elapsed = start.elapsed();
    if elapsed >= ACCOUNTING_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "5 rows, worst deviation {:.2}%, {elapsed:?}",
        worst * 100.0
    ))
}

fn directional_dtr() -> Outcome {
    let r = accounting_only(&resnet_accounting(0.2, 0.5)).map_err(|e| e.to_string())?;
    check_close("down", r.down_dtr, 24.2, GRID_REL_TOL)?;
    check_close("up", r.up_dtr, 10.4, GRID_REL_TOL)?;
    Ok(format!("down {:.2}, up {:.2}", r.down_dtr, r.up_dtr))
}

fn fedavg_volume_identity() -> Outcome {
    let mut c = resnet_accounting(1.0, 1.0);
    c.method = Method::FedAvg;
    let ledger = experiment::accounting_ledger(&c).map_err(|e| e.to_string())?;
    let expected = fedavg_volume(100, RESNET20_PARAMS, 32, 10);
    if ledger.total_bits() != expected {
        return Err(format!(
            "ledger {} bits, formula {expected}",
            ledger.total_bits()
        ));
    }
    let mb = megabytes(expected);
    check_close("MB", mb, 2102.4, FEDAVG_MB_REL_TOL)?;
    Ok(format!("{expected} bits = {mb:.2} MB"))
}

fn small_training_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.rounds = 8;
    c.num_clients = 4;
    c.dataset = experiment::DatasetSource::Blobs {
        samples_per_class: 40,
        spread: 0.3,
    };
    c.kmeans.k = 16;
    c.train.local_epochs = 2;
    c
}

fn fedavg_ws_equivalence() -> Outcome {
    let mut c = small_training_config();
    c.f1 = 1.0;
    c.f2 = 1.0;
    c.r_cb = 0;
    let fed = build_federation(&c).map_err(|e| e.to_string())?;
    let sim = simulation_config(&c).map_err(|e| e.to_string())?;
    if sim.schedule != Schedule::from_periods(Period::Every(1), Period::Every(1), 0).unwrap() {
        return Err("unexpected schedule".into());
    }
    let code = run_fedcode(&fed, &sim).map_err(|e| e.to_string())?;
    let ws = run_fedavg_ws(&fed, &sim).map_err(|e| e.to_string())?;
    if code.records != ws.records {
        return Err("accuracy trajectories differ".into());
    }
    if code.ledger != ws.ledger {
        return Err("ledgers differ".into());
    }
    let same_bits = code
        .final_params
        .as_slice()
        .iter()
        .zip(ws.final_params.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_bits {
        return Err("final parameters differ".into());
    }

    let mut worst: f64 = 0.0;
    for p in [100_000u64, RESNET20_PARAMS, 1_000_000] {
        for k in [16u64, 64, 128] {
            let mut a = resnet_accounting(1.0, 1.0);
            a.r_cb = 0;
            a.accounting_params = Some(p);
            a.kmeans.k = k as usize;
            let r = accounting_only(&a).map_err(|e| e.to_string())?;
            let ideal = 32.0 / index_bits(k) as f64;
            check_close(&format!("P={p} K={k}"), r.total_dtr, ideal, WS_DTR_REL_TOL)?;
            worst = worst.max(rel_err(r.total_dtr, ideal));
        }
    }
    Ok(format!(
        "{} rounds identical; steady-state DTR worst deviation {:.2}%",
        code.records.len(),
        worst * 100.0
    ))
}

/// Final accuracies of FedCode and same-seed FedAvg on the blobs task.
fn paired_accuracy(beta: f64) -> Result<(f64, f64, Duration), String> {
    let c = ExperimentConfig {
        beta,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let fed = build_federation(&c).map_err(|e| e.to_string())?;
    let code = experiment::simulate(&fed, &c, Method::FedCode).map_err(|e| e.to_string())?;
    let avg = experiment::simulate(&fed, &c, Method::FedAvg).map_err(|e| e.to_string())?;
    let last = |o: &fedcode::protocol::SimulationOutput| o.records.last().unwrap().test_accuracy;
    Ok((last(&code), last(&avg), start.elapsed()))
}

fn convergence_iid() -> Outcome {
    let c = ExperimentConfig::default();
    let shape = (
        c.model.input_dim,
        c.model.hidden_dims.clone(),
        c.model.num_classes,
    );
    if shape != (8, vec![32], 4) || (c.num_clients, c.rounds, c.kmeans.k, c.r_cb) != (10, 40, 64, 2)
    {
        return Err("default preset drifted from the required setup".into());
    }
    if c.train.local_epochs != 4 || (c.f1, c.f2) != (0.33, 0.5) {
        return Err("default preset drifted from the required setup".into());
    }
    let (code, avg, took) = paired_accuracy(c.beta)?;
    let msg = format!("fedcode {code:.4}, fedavg {avg:.4}, {took:.1?}");
    if (code - avg).abs() > IID_ACC_GAP || code < MIN_ACCURACY || avg < MIN_ACCURACY {
        return Err(msg);
    }
    if took >= TRAINING_BUDGET {
        return Err(format!("too slow: {msg}"));
    }
    Ok(msg)
}

fn convergence_noniid() -> Outcome {
    let (code, avg, took) = paired_accuracy(0.1)?;
    let msg = format!("fedcode {code:.4}, fedavg {avg:.4}, {took:.1?}");
    if (code - avg).abs() > NONIID_ACC_GAP {
        return Err(msg);
    }
    Ok(msg)
}

/// Minimum inertia over every split of the sorted values into at most `k`
/// contiguous groups.
fn brute_force_inertia(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let cost = |a: usize, b: usize| {
        let m = v[a..b].iter().sum::<f64>() / (b - a) as f64;
        v[a..b].iter().map(|x| (x - m) * (x - m)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    // Each of the n-1 gaps is either a cut or not.
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize + 1 > k {
            continue;
        }
        let mut start = 0;
        let mut total = 0.0;
        for gap in 0..n - 1 {
            if mask & (1 << gap) != 0 {
                total += cost(start, gap + 1);
                start = gap + 1;
            }
        }
        total += cost(start, n);
        best = best.min(total);
    }
    best
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let p = rng.random_range(1..=12);
        let k = rng.random_range(1..=3);
        let values: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.2) {
                    rng.random_range(0..3) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let fit = kmeans_fit(
            &FlatParams::new(values.clone()).unwrap(),
            &KMeansConfig::with_k(k),
        )
        .map_err(|e| e.to_string())?;
        let oracle = brute_force_inertia(&values, k);
        let gap = (fit.inertia - oracle).abs();
        if gap > KMEANS_ABS_TOL {
            return Err(format!(
                "case {case}: inertia {} vs optimum {oracle}",
                fit.inertia
            ));
        }
        worst = worst.max(gap);
    }
    Ok(format!("200 instances, worst gap {worst:.1e}"))
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    for k in [1usize, 2, 16, 64, 128, 1000] {
        for _ in 0..5 {
            let p = rng.random_range(1..=3000);
            let params =
                FlatParams::new((0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let centers: Vec<f64> = (0..k)
                .map(|_| rng.random_range(-2.0f32..2.0) as f64)
                .collect();
            let cb = Codebook::from_unsorted(centers).map_err(|e| e.to_string())?;
            let cw = compress(&params, &cb);
            let snapped = snap(&params, &cb);
            if decompress(&cw, &cb).map_err(|e| e.to_string())? != snapped {
                return Err(format!(
                    "K={k}: decompress after compress differs from snap"
                ));
            }
            if snap(&snapped, &cb) != snapped {
                return Err(format!("K={k}: snap is not idempotent"));
            }
            for msg in [
                TransferMsg::with_weights(cb.clone(), cw.clone()).map_err(|e| e.to_string())?,
                TransferMsg::CodebookOnly {
                    codebook: cb.clone(),
                },
            ] {
                let bytes = encode(&msg, p, 32).map_err(|e| e.to_string())?;
                let decoded = decode(&bytes).map_err(|e| e.to_string())?;
                if decoded.msg != msg || decoded.param_count != p as u64 {
                    return Err(format!("K={k}: decoded message differs"));
                }
                let payload = message_bits(&msg, p as u64, 32);
                let on_wire = (bytes.len() - HEADER_BYTES) as u64 * 8;
                if on_wire != payload.div_ceil(8) * 8 {
                    return Err(format!(
                        "K={k}: {on_wire} payload bits on the wire, accounted {payload}"
                    ));
                }
                cases += 1;
            }
        }
    }
    Ok(format!(
        "{cases} messages round-tripped, sizes match the accounting"
    ))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let input = rng.random_range(1..=4);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2))
            .map(|_| rng.random_range(1..=5))
            .collect();
        let classes = rng.random_range(2..=4);
        let model = Mlp::new(ModelSpec::new(input, hidden, classes).unwrap()).unwrap();
        let params = model.init_params(case);
        let n = rng.random_range(1..=6);
        let batch = LabeledDataset::new(
            (0..n * input)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect(),
            (0..n).map(|_| rng.random_range(0..classes)).collect(),
            input,
        )
        .unwrap();
        let (_, grad) = model
            .loss_and_grad(&params, &batch)
            .map_err(|e| e.to_string())?;
        let base = params.as_slice().to_vec();
        for i in 0..base.len() {
            let shifted = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                model.loss(&FlatParams::new(v).unwrap(), &batch).unwrap()
            };
            let fd = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            let a = grad.as_slice()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel >= GRAD_REL_TOL {
                return Err(format!(
                    "case {case}, param {i}: analytic {a}, numeric {fd}"
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("50 models, worst relative error {worst:.1e}"))
}

fn partition_statistics() -> Outcome {
    let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat_n(c, 300)).collect();
    let mut means = Vec::new();
    for beta in [10.0, 0.1] {
        let mut total = 0.0;
        for seed in 0..20 {
            let part = dirichlet_partition(
                &labels,
                &PartitionConfig {
                    num_clients: 10,
                    beta,
                    seed,
                },
            )
            .map_err(|e| e.to_string())?;
            part.validate(labels.len()).map_err(|e| e.to_string())?;
            let mut per_class = [0usize; 10];
            part.assignments
                .iter()
                .flatten()
                .for_each(|&r| per_class[labels[r]] += 1);
            if per_class != [300; 10] {
                return Err(format!(
                    "beta {beta} seed {seed}: class counts {per_class:?}"
                ));
            }
            total += class_concentration(&part, &labels);
        }
        means.push(total / 20.0);
    }
    let msg = format!(
        "C_p {:.3} at beta=10, {:.3} at beta=0.1",
        means[0], means[1]
    );
    if means[0] >= CP_IID_MIN && means[1] <= CP_NONIID_MAX {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn read_outputs(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names
        .iter()
        .map(|n| std::fs::read(dir.join(n)).unwrap())
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, threads) in [1usize, 4, 4].into_iter().enumerate() {
        let mut c = small_training_config();
        c.threads = threads;
        let dir = tmp.path().join(format!("run{i}"));
        experiment::run(&c)
            .and_then(|r| r.write_csv(&dir))
            .map_err(|e| e.to_string())?;
        outputs.push(read_outputs(&dir, &["rounds.csv", "summary.csv"]));
    }
    if outputs.iter().any(|o| *o != outputs[0]) {
        return Err("run CSVs differ".into());
    }

    let axes = [
        SweepAxis::parse("K=4,16").unwrap(),
        SweepAxis::parse("F2=0.5,1").unwrap(),
    ];
    let mut sweeps = Vec::new();
    for (i, threads) in [1usize, 3].into_iter().enumerate() {
        let mut c = small_training_config();
        c.rounds = 4;
        c.threads = threads;
        let dir = tmp.path().join(format!("sweep{i}"));
        let cells = sweep(&c, &axes).map_err(|e| e.to_string())?;
        write_sweep_csv(&axes, &cells, &dir).map_err(|e| e.to_string())?;
        sweeps.push(read_outputs(
            &dir,
            &["sweep_rounds.csv", "sweep_summary.csv"],
        ));
    }
    if sweeps[0] != sweeps[1] {
        return Err("sweep CSVs differ".into());
    }
    Ok("runs on 1/4/4 threads and sweeps on 1/3 threads byte-identical".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("ResNet-20 DTR grid and volume", resnet_dtr_grid),
        ("directional DTR", directional_dtr),
        ("FedAvg volume identity", fedavg_volume_identity),
        ("FedAvg_ws equivalence", fedavg_ws_equivalence),
        ("IID convergence", convergence_iid),
        ("non-IID convergence", convergence_noniid),
        ("clustering oracle", clustering_oracle),
        ("codec round trip", codec_round_trip),
        ("gradient check", gradient_check),
        ("partition statistics", partition_statistics),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

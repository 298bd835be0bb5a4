//! Bit accounting: message sizes, the per-round transmission ledger, data
//! transmission reduction (DTR) and bits-per-parameter.

pub mod codec;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::protocol::TransferMsg;

pub const DEFAULT_WORDLENGTH: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Down,
    Up,
}

/// Bits per index for a codebook of `k` centers; a single center still costs one bit.
pub fn index_bits(k: u64) -> u32 {
    if k <= 2 {
        1
    } else {
        64 - (k - 1).leading_zeros()
    }
}

/// Payload size: K·w for a codebook, plus P·⌈log₂K⌉ when indices are attached.
pub fn message_bits(msg: &TransferMsg, param_count: u64, wordlength: u32) -> u64 {
    let k = msg.codebook().len() as u64;
    let codebook = k * wordlength as u64;
    match msg {
        TransferMsg::CodebookOnly { .. } => codebook,
        TransferMsg::CodebookPlusWeights { .. } => codebook + param_count * index_bits(k) as u64,
    }
}

/// Size of an uncompressed weight vector.
pub fn full_weights_bits(param_count: u64, wordlength: u32) -> u64 {
    param_count * wordlength as u64
}

/// Total FedAvg traffic: 2·R·N·P·w.
pub fn fedavg_volume(rounds: u64, param_count: u64, wordlength: u32, active_clients: u64) -> u64 {
    2 * rounds * active_clients * param_count * wordlength as u64
}

/// Bits to megabytes, 1 MB = 10⁶ bytes.
pub fn megabytes(bits: u64) -> f64 {
    bits as f64 / 8.0 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub round: u32,
    pub direction: Direction,
    pub client_id: usize,
    pub bits: u64,
}

/// Append-only record of every message sent during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteLedger {
    entries: Vec<LedgerEntry>,
    wordlength: u32,
}

impl ByteLedger {
    pub fn new(wordlength: u32) -> Self {
        ByteLedger {
            entries: Vec::new(),
            wordlength,
        }
    }

    pub fn wordlength(&self) -> u32 {
        self.wordlength
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(
        &mut self,
        round: u32,
        direction: Direction,
        client_id: usize,
        bits: u64,
    ) -> Result<()> {
        if bits == 0 {
            return Err(Error::Argument(
                "ledger entries must carry at least one bit".into(),
            ));
        }
        if let Some(last) = self.entries.last() {
            if round < last.round {
                return Err(Error::Argument(format!(
                    "ledger round {round} appended after round {}",
                    last.round
                )));
            }
        }
        self.entries.push(LedgerEntry {
            round,
            direction,
            client_id,
            bits,
        });
        Ok(())
    }

    pub fn record_msg(
        &mut self,
        round: u32,
        direction: Direction,
        client_id: usize,
        msg: &TransferMsg,
        param_count: u64,
    ) -> Result<u64> {
        let bits = message_bits(msg, param_count, self.wordlength);
        self.record(round, direction, client_id, bits)?;
        Ok(bits)
    }

    pub fn total(&self, direction: Direction) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.direction == direction)
            .map(|e| e.bits)
            .sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.entries.iter().map(|e| e.bits).sum()
    }

    /// Number of messages sent in one direction.
    pub fn message_count(&self, direction: Direction) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.direction == direction)
            .count() as u64
    }

    /// Per round: (down bits, down messages, up bits, up messages).
    pub fn per_round(&self) -> BTreeMap<u32, RoundTotals> {
        let mut out: BTreeMap<u32, RoundTotals> = BTreeMap::new();
        for e in &self.entries {
            let t = out.entry(e.round).or_default();
            match e.direction {
                Direction::Down => {
                    t.down_bits += e.bits;
                    t.down_msgs += 1;
                }
                Direction::Up => {
                    t.up_bits += e.bits;
                    t.up_msgs += 1;
                }
            }
        }
        out
    }

    /// What plain FedAvg would have sent for the same messages: P·w each.
    pub fn fedavg_baseline(&self, param_count: u64) -> (u64, u64) {
        let each = full_weights_bits(param_count, self.wordlength);
        (
            self.message_count(Direction::Down) * each,
            self.message_count(Direction::Up) * each,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundTotals {
    pub down_bits: u64,
    pub down_msgs: u64,
    pub up_bits: u64,
    pub up_msgs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtrReport {
    pub down_dtr: f64,
    pub up_dtr: f64,
    pub total_dtr: f64,
    /// Baseline bits, both directions.
    pub fedavg_bits: u64,
    /// Measured bits, both directions.
    pub fedcode_bits: u64,
    pub fedavg_down_bits: u64,
    pub fedavg_up_bits: u64,
    pub fedcode_down_bits: u64,
    pub fedcode_up_bits: u64,
}

pub fn dtr_empirical(
    ledger: &ByteLedger,
    baseline_bits_down: u64,
    baseline_bits_up: u64,
) -> Result<DtrReport> {
    if ledger.is_empty() {
        return Err(Error::Argument("empty ledger".into()));
    }
    let down = ledger.total(Direction::Down);
    let up = ledger.total(Direction::Up);
    if down == 0 || up == 0 {
        return Err(Error::Argument(
            "ledger has no traffic in one direction".into(),
        ));
    }
    let fedavg = baseline_bits_down + baseline_bits_up;
    let fedcode = down + up;
    Ok(DtrReport {
        down_dtr: baseline_bits_down as f64 / down as f64,
        up_dtr: baseline_bits_up as f64 / up as f64,
        total_dtr: fedavg as f64 / fedcode as f64,
        fedavg_bits: fedavg,
        fedcode_bits: fedcode,
        fedavg_down_bits: baseline_bits_down,
        fedavg_up_bits: baseline_bits_up,
        fedcode_down_bits: down,
        fedcode_up_bits: up,
    })
}

/// Steady-state reduction 2·P·w / (2·K·w + (F1+F2)·P·⌈log₂K⌉), ignoring
/// bootstrap rounds.
pub fn dtr_theoretical(param_count: u64, k: u64, f1: f64, f2: f64, wordlength: u32) -> f64 {
    let p = param_count as f64;
    let w = wordlength as f64;
    let per_round = 2.0 * k as f64 * w + (f1 + f2) * p * index_bits(k) as f64;
    2.0 * p * w / per_round
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BppPoint {
    pub round: u32,
    pub down_bpp: f64,
    pub up_bpp: f64,
    /// Cumulative mean over rounds of the two directions' average.
    pub running_average: f64,
}

/// Bits per parameter per round and direction, normalised by the number of
/// clients served in that round.
pub fn bpp_series(ledger: &ByteLedger, param_count: u64) -> Vec<BppPoint> {
    let p = param_count as f64;
    let mut sum = 0.0;
    ledger
        .per_round()
        .into_iter()
        .enumerate()
        .map(|(i, (round, t))| {
            let down_bpp = ratio(t.down_bits, t.down_msgs as f64 * p);
            let up_bpp = ratio(t.up_bits, t.up_msgs as f64 * p);
            sum += (down_bpp + up_bpp) / 2.0;
            BppPoint {
                round,
                down_bpp,
                up_bpp,
                running_average: sum / (i + 1) as f64,
            }
        })
        .collect()
}

fn ratio(bits: u64, denom: f64) -> f64 {
    if denom == 0.0 {
        0.0
    } else {
        bits as f64 / denom
    }
}

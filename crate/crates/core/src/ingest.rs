//! Transaction logs to a sender x receiver x slot tensor of summed amounts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// 2015-08-07T00:00:00Z
pub const DEFAULT_WINDOW_START: i64 = 1_438_905_600;
/// 2016-03-02T00:00:00Z
pub const DEFAULT_WINDOW_END: i64 = 1_456_876_800;
/// Four days: 52 slots over the default window.
pub const DEFAULT_SLOT_SECS: i64 = 4 * 86_400;

pub const TRANSACTIONS_HEADER: &str = "tx_id,sender,receiver,amount,timestamp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub tx_id: String,
    pub sender: String,
    pub receiver: String,
    pub amount: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub slot_duration_secs: i64,
    pub activity_quantile: f64,
    pub window_start: i64,
    pub window_end: i64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            slot_duration_secs: DEFAULT_SLOT_SECS,
            activity_quantile: 0.01,
            window_start: DEFAULT_WINDOW_START,
            window_end: DEFAULT_WINDOW_END,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slot_duration_secs <= 0 {
            return Err(Error::Config("slot_duration_secs must be positive".into()));
        }
        if self.window_start >= self.window_end {
            return Err(Error::Config("window_start must precede window_end".into()));
        }
        if !(self.activity_quantile > 0.0 && self.activity_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "activity_quantile must be in (0, 1], got {}",
                self.activity_quantile
            )));
        }
        Ok(())
    }

    pub fn num_slots(&self) -> usize {
        let span = self.window_end - self.window_start;
        ((span + self.slot_duration_secs - 1) / self.slot_duration_secs) as usize
    }

    /// Slot of `timestamp`, or `None` outside `[window_start, window_end)`.
    pub fn slot_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.window_start || timestamp >= self.window_end {
            return None;
        }
        Some(((timestamp - self.window_start) / self.slot_duration_secs) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTransactions {
    pub records: Vec<TransactionRecord>,
    /// Rows dropped for a negative amount.
    pub rejected: usize,
}

#[derive(Deserialize)]
struct RawRow {
    tx_id: String,
    sender: String,
    receiver: String,
    amount: String,
    timestamp: String,
}

/// Reads `tx_id,sender,receiver,amount,timestamp` CSV.
///
/// Malformed rows are errors carrying their line number; rows with a negative
/// amount are skipped and counted.
pub fn parse_transactions(source: impl Read) -> Result<ParsedTransactions> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = TRANSACTIONS_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {TRANSACTIONS_HEADER:?}"),
        });
    }

    let mut records = Vec::new();
    let mut rejected = 0;
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let row: RawRow = row.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse { line, message };
        let amount: f64 = row
            .amount
            .parse()
            .map_err(|_| bad(format!("bad amount {:?}", row.amount)))?;
        let timestamp: i64 = row
            .timestamp
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", row.timestamp)))?;
        if !amount.is_finite() {
            return Err(bad(format!("non-finite amount {amount}")));
        }
        if row.sender.is_empty() || row.receiver.is_empty() {
            return Err(bad("empty sender or receiver".into()));
        }
        if amount < 0.0 {
            rejected += 1;
            continue;
        }
        records.push(TransactionRecord {
            tx_id: row.tx_id,
            sender: row.sender,
            receiver: row.receiver,
            amount,
            timestamp,
        });
    }
    Ok(ParsedTransactions { records, rejected })
}

/// Writes records in the format read by [`parse_transactions`].
pub fn transactions_csv(records: &[TransactionRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64 + 64);
    out.push_str(TRANSACTIONS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.tx_id, r.sender, r.receiver, r.amount, r.timestamp);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityStats {
    pub tx_count: usize,
    pub mean_amount: f64,
    pub distinct_senders: usize,
    pub distinct_receivers: usize,
    pub mean_tx_per_sender: f64,
    pub mean_tx_per_receiver: f64,
    pub single_payment_senders: usize,
    pub single_payment_receivers: usize,
}

fn count_by<'a>(ids: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut counts = HashMap::new();
    for id in ids {
        *counts.entry(id).or_insert(0) += 1;
    }
    counts
}

pub fn activity_stats(records: &[TransactionRecord]) -> ActivityStats {
    if records.is_empty() {
        return ActivityStats::default();
    }
    let senders = count_by(records.iter().map(|r| r.sender.as_str()));
    let receivers = count_by(records.iter().map(|r| r.receiver.as_str()));
    let n = records.len();
    ActivityStats {
        tx_count: n,
        mean_amount: records.iter().map(|r| r.amount).sum::<f64>() / n as f64,
        distinct_senders: senders.len(),
        distinct_receivers: receivers.len(),
        mean_tx_per_sender: n as f64 / senders.len() as f64,
        mean_tx_per_receiver: n as f64 / receivers.len() as f64,
        single_payment_senders: senders.values().filter(|c| **c == 1).count(),
        single_payment_receivers: receivers.values().filter(|c| **c == 1).count(),
    }
}

/// Dense indices for the retained accounts of each axis, most active first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountIndex {
    pub senders: Vec<String>,
    pub sender_counts: Vec<usize>,
    pub receivers: Vec<String>,
    pub receiver_counts: Vec<usize>,
    #[serde(skip)]
    sender_pos: HashMap<String, usize>,
    #[serde(skip)]
    receiver_pos: HashMap<String, usize>,
}

impl AccountIndex {
    fn from_ranked(senders: Vec<(String, usize)>, receivers: Vec<(String, usize)>) -> Self {
        let sender_pos = senders.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let receiver_pos = receivers.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let (senders, sender_counts) = senders.into_iter().unzip();
        let (receivers, receiver_counts) = receivers.into_iter().unzip();
        Self {
            senders,
            sender_counts,
            receivers,
            receiver_counts,
            sender_pos,
            receiver_pos,
        }
    }

    /// Every account that appears in `records`.
    pub fn from_records(records: &[TransactionRecord]) -> Self {
        let (senders, receivers) = ranked_axes(records);
        Self::from_ranked(senders, receivers)
    }

    pub fn sender(&self, id: &str) -> Option<usize> {
        self.sender_pos.get(id).copied()
    }

    pub fn receiver(&self, id: &str) -> Option<usize> {
        self.receiver_pos.get(id).copied()
    }
}

/// Accounts sorted by descending count, ties by ascending id.
fn rank_counts(counts: HashMap<&str, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_owned(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

type Ranked = Vec<(String, usize)>;

fn ranked_axes(records: &[TransactionRecord]) -> (Ranked, Ranked) {
    (
        rank_counts(count_by(records.iter().map(|r| r.sender.as_str()))),
        rank_counts(count_by(records.iter().map(|r| r.receiver.as_str()))),
    )
}

/// `ceil(quantile * population)`, ignoring float noise in the product.
fn keep_count(quantile: f64, population: usize) -> usize {
    let raw = quantile * population as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(population)
}

/// Keeps the most active `activity_quantile` fraction of senders (by outgoing
/// count) and of receivers (by incoming count), and the records whose two
/// endpoints both survive.
pub fn filter_top_active(
    records: &[TransactionRecord],
    cfg: &IngestConfig,
) -> Result<(Vec<TransactionRecord>, AccountIndex)> {
    cfg.validate()?;
    let (mut senders, mut receivers) = ranked_axes(records);
    senders.truncate(keep_count(cfg.activity_quantile, senders.len()));
    receivers.truncate(keep_count(cfg.activity_quantile, receivers.len()));
    let index = AccountIndex::from_ranked(senders, receivers);
    let kept: Vec<TransactionRecord> = records
        .iter()
        .filter(|r| index.sender(&r.sender).is_some() && index.receiver(&r.receiver).is_some())
        .cloned()
        .collect();
    Ok((kept, index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltTensor {
    pub tensor: Tensor3,
    /// Records outside the configured time window.
    pub out_of_window: usize,
}

/// Sums amounts into `(sender, receiver, slot)` cells.
pub fn build_tensor(
    records: &[TransactionRecord],
    index: &AccountIndex,
    cfg: &IngestConfig,
) -> Result<BuiltTensor> {
    cfg.validate()?;
    if index.senders.is_empty() || index.receivers.is_empty() {
        return Err(Error::InvalidInput("account index is empty".into()));
    }
    let dims = [index.senders.len(), index.receivers.len(), cfg.num_slots()];
    let mut data = vec![0.0; dims.iter().product()];
    let mut out_of_window = 0;
    for r in records {
        let (Some(i), Some(j)) = (index.sender(&r.sender), index.receiver(&r.receiver)) else {
            return Err(Error::InvalidInput(format!(
                "transaction {} has an endpoint outside the account index",
                r.tx_id
            )));
        };
        let Some(k) = cfg.slot_of(r.timestamp) else {
            out_of_window += 1;
            continue;
        };
        data[i + dims[0] * (j + dims[1] * k)] += r.amount;
    }
    Ok(BuiltTensor {
        tensor: Tensor3::new(dims, data)?,
        out_of_window,
    })
}

/// Parses `YYYY-MM-DD` (midnight UTC) or integer epoch seconds.
fn parse_date(s: &str) -> Option<i64> {
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp())
}

pub fn format_date(timestamp: i64) -> String {
    chrono::DateTime::from_timestamp(timestamp, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| timestamp.to_string())
}

/// Reads `date,rate` CSV into time-sorted `(timestamp, rate)` observations.
pub fn parse_rates(source: impl Read) -> Result<Vec<(i64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut obs = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected date,rate, got {} fields", row.len()),
            });
        }
        let ts = parse_date(&row[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad date {:?}", &row[0]),
        })?;
        let rate: f64 = row[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad rate {:?}", &row[1]),
        })?;
        if !rate.is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite rate".into(),
            });
        }
        obs.push((ts, rate));
    }
    if obs.is_empty() {
        return Err(Error::InvalidInput("rate file has no observations".into()));
    }
    obs.sort_by_key(|(ts, _)| *ts);
    Ok(obs)
}

/// One rate per slot: the last observation before the slot ends. Slots that
/// precede every observation take the first one.
pub fn resample_rates(observations: &[(i64, f64)], cfg: &IngestConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let first = observations
        .first()
        .ok_or_else(|| Error::InvalidInput("no rate observations".into()))?;
    let by_time: BTreeMap<i64, f64> = observations.iter().copied().collect();
    Ok((0..cfg.num_slots())
        .map(|k| {
            let end = cfg.window_start + (k as i64 + 1) * cfg.slot_duration_secs;
            by_time.range(..end).next_back().map_or(first.1, |(_, v)| *v)
        })
        .collect())
}

/// `date,rate` CSV with one row per slot start.
pub fn rates_csv(rates: &[f64], cfg: &IngestConfig) -> String {
    let mut out = String::from("date,rate\n");
    for (k, r) in rates.iter().enumerate() {
        let ts = cfg.window_start + k as i64 * cfg.slot_duration_secs;
        let _ = writeln!(out, "{},{r}", format_date(ts));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, r: &str, amount: f64, ts: i64) -> TransactionRecord {
        TransactionRecord {
            tx_id: format!("{s}-{r}-{ts}"),
            sender: s.into(),
            receiver: r.into(),
            amount,
            timestamp: ts,
        }
    }

    fn cfg() -> IngestConfig {
        IngestConfig {
            activity_quantile: 1.0,
            ..IngestConfig::default()
        }
    }

    #[test]
    fn default_window_has_52_slots() {
        assert_eq!(IngestConfig::default().num_slots(), 52);
    }

    #[test]
    fn parse_examples() {
        let empty = parse_transactions(format!("{TRANSACTIONS_HEADER}\n").as_bytes()).unwrap();
        assert!(empty.records.is_empty());

        let text = format!("{TRANSACTIONS_HEADER}\na,s1,r1,1.5,10\nb,s2,r1,2,20\nc,s1,r2,0,30\n");
        let p = parse_transactions(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 3);
        assert_eq!(p.records[1].tx_id, "b");
        assert_eq!(p.records[2].timestamp, 30);

        let text = format!("{TRANSACTIONS_HEADER}\na,s1,r1,-1,10\nb,s2,r1,2,20\n");
        let p = parse_transactions(text.as_bytes()).unwrap();
        assert_eq!(p.rejected, 1);
        assert_eq!(p.records.len(), 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = format!("{TRANSACTIONS_HEADER}\na,s1,r1,1,10\nb,s2,r1,abc,20\n");
        match parse_transactions(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let text = format!("{TRANSACTIONS_HEADER}\na,s1,r1,1\n");
        assert!(matches!(
            parse_transactions(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_transactions("id,a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_writer_round_trips() {
        let records = vec![rec("s1", "r1", 0.1, 5), rec("s2", "r9", 76.25, 99)];
        let back = parse_transactions(transactions_csv(&records).as_bytes()).unwrap();
        assert_eq!(back.records, records);
    }

    #[test]
    fn stats_examples() {
        let s = activity_stats(&[rec("s1", "r1", 10.0, 0), rec("s2", "r1", 20.0, 0)]);
        assert_eq!(s.mean_amount, 15.0);

        let s = activity_stats(&[rec("s1", "r1", 1.0, 0), rec("s1", "r2", 1.0, 0), rec("s2", "r1", 1.0, 0)]);
        assert_eq!(s.mean_tx_per_sender, 1.5);
        assert_eq!(s.mean_tx_per_receiver, 1.5);
        assert_eq!(s.single_payment_senders, 1);
        assert_eq!(s.single_payment_receivers, 1);

        assert_eq!(activity_stats(&[]), ActivityStats::default());
    }

    #[test]
    fn quantile_one_keeps_everything() {
        let records = vec![rec("s1", "r1", 1.0, 0), rec("s2", "r2", 1.0, 0)];
        let (kept, index) = filter_top_active(&records, &cfg()).unwrap();
        assert_eq!(kept, records);
        assert_eq!(index.senders.len(), 2);
    }

    #[test]
    fn one_percent_of_200_senders_is_two() {
        let mut records = Vec::new();
        for s in 0..200 {
            for _ in 0..=s {
                records.push(rec(&format!("s{s:03}"), "r", 1.0, 0));
            }
        }
        let c = IngestConfig {
            activity_quantile: 0.01,
            ..cfg()
        };
        let (_, index) = filter_top_active(&records, &c).unwrap();
        assert_eq!(index.senders, vec!["s199", "s198"]);
    }

    #[test]
    fn ties_at_the_cut_go_to_the_smaller_id() {
        let records = vec![
            rec("zeta", "r", 1.0, 0),
            rec("zeta", "r", 1.0, 0),
            rec("beta", "r", 1.0, 0),
            rec("alpha", "r", 1.0, 0),
            rec("top", "r", 1.0, 0),
            rec("top", "r", 1.0, 0),
            rec("top", "r", 1.0, 0),
        ];
        // 4 senders, keep ceil(0.75 * 4) = 3: top, zeta, then alpha beats beta.
        let c = IngestConfig {
            activity_quantile: 0.75,
            ..cfg()
        };
        let (kept, index) = filter_top_active(&records, &c).unwrap();
        assert_eq!(index.senders, vec!["top", "zeta", "alpha"]);
        assert_eq!(kept.len(), 6);
    }

    #[test]
    fn build_examples() {
        let c = cfg();
        let t0 = c.window_start;
        let one = vec![rec("s", "r", 5.0, t0)];
        let b = build_tensor(&one, &AccountIndex::from_records(&one), &c).unwrap();
        assert_eq!(b.tensor.dims(), [1, 1, 52]);
        assert_eq!(b.tensor.get(0, 0, 0), 5.0);
        assert_eq!(b.tensor.sum(), 5.0);

        let two = vec![rec("s", "r", 2.0, t0 + 5), rec("s", "r", 3.0, t0 + 7)];
        let b = build_tensor(&two, &AccountIndex::from_records(&two), &c).unwrap();
        assert_eq!(b.tensor.get(0, 0, 0), 5.0);
    }

    #[test]
    fn slot_boundary_belongs_to_next_slot() {
        let c = cfg();
        let edge = c.window_start + c.slot_duration_secs;
        let records = vec![rec("s", "r", 1.0, edge - 1), rec("s", "r", 2.0, edge)];
        let b = build_tensor(&records, &AccountIndex::from_records(&records), &c).unwrap();
        assert_eq!(b.tensor.get(0, 0, 0), 1.0);
        assert_eq!(b.tensor.get(0, 0, 1), 2.0);
    }

    #[test]
    fn out_of_window_records_are_counted() {
        let c = cfg();
        let records = vec![
            rec("s", "r", 1.0, c.window_start - 1),
            rec("s", "r", 1.0, c.window_end),
            rec("s", "r", 4.0, c.window_end - 1),
        ];
        let b = build_tensor(&records, &AccountIndex::from_records(&records), &c).unwrap();
        assert_eq!(b.out_of_window, 2);
        assert_eq!(b.tensor.get(0, 0, 51), 4.0);
    }

    #[test]
    fn unknown_endpoint_is_rejected() {
        let records = vec![rec("s", "r", 1.0, DEFAULT_WINDOW_START)];
        let index = AccountIndex::from_records(&[rec("x", "r", 1.0, 0)]);
        assert!(build_tensor(&records, &index, &cfg()).is_err());
    }

    #[test]
    fn rates_resample_with_carry_forward() {
        let c = cfg();
        let obs = parse_rates("date,rate\n2015-08-08,-0.1\n2015-08-20,-0.2\n".as_bytes()).unwrap();
        let r = resample_rates(&obs, &c).unwrap();
        assert_eq!(r.len(), 52);
        assert_eq!(r[0], -0.1); // 2015-08-07 .. 2015-08-11
        assert_eq!(r[2], -0.1); // .. 2015-08-19
        assert_eq!(r[3], -0.2); // .. 2015-08-23
        assert_eq!(r[51], -0.2);
    }

    #[test]
    fn rates_csv_round_trips_through_resampling() {
        let c = cfg();
        let rates: Vec<f64> = (0..52).map(|k| -0.001 + k as f64 * 1e-5).collect();
        let obs = parse_rates(rates_csv(&rates, &c).as_bytes()).unwrap();
        assert_eq!(resample_rates(&obs, &c).unwrap(), rates);
    }

    #[test]
    fn rates_parse_errors() {
        assert!(parse_rates("date,rate\n".as_bytes()).is_err());
        assert!(matches!(
            parse_rates("date,rate\n2015-13-01,0.1\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}

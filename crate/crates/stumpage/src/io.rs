//! CSV readers and writers for the data files.
//!
//! Every reader requires a header row. Errors carry the file and the 1-based
//! line of the offending record, the header being line 1.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stumpage_core::dynamic::CuttingObservation;
use stumpage_core::entry::EntryObservation;
use stumpage_core::valuation::BidObservation;
use stumpage_core::{AuctionFormat, BidderType};

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct PriceRow {
    period: i64,
    price_index: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryRow {
    auction_id: String,
    format: String,
    n: u32,
    #[serde(rename = "N_l")]
    n_logger: u32,
    #[serde(rename = "N_s")]
    n_sawmill: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct BidRow {
    auction_id: String,
    n: u32,
    winner_type: String,
    tau: f64,
    v0_l: f64,
    v0_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CuttingRow {
    auction_id: String,
    #[serde(rename = "type")]
    bidder_type: String,
    #[serde(rename = "T")]
    periods: u32,
    u0: f64,
    t: u32,
    price_idx: usize,
    q: f64,
}

/// Reads `path` into typed rows, each paired with its line number.
fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row =
            record.deserialize(Some(&headers)).map_err(|e| CliError::record(path, line, deserialize_message(&e)))?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(1, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => CliError::io(path, std::io::Error::other(e.to_string())),
        _ => CliError::record(path, line, e.to_string()),
    }
}

fn deserialize_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(f) => format!("field {}: {}", f + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    }
}

/// Price-index series `(period, price_index)`, in period order.
pub fn read_price_series(path: &Path) -> Result<Vec<f64>> {
    let rows: Vec<(u64, PriceRow)> = read_rows(path)?;
    let mut last = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if last.is_some_and(|p| r.period <= p) {
            return Err(CliError::record(path, line, "periods must be strictly increasing"));
        }
        if !r.price_index.is_finite() {
            return Err(CliError::record(path, line, "price index must be finite"));
        }
        last = Some(r.period);
        out.push(r.price_index);
    }
    if out.len() < 2 {
        return Err(CliError::record(path, 1, "a price series needs at least two periods"));
    }
    Ok(out)
}

fn parse_type(path: &Path, line: u64, s: &str) -> Result<BidderType> {
    BidderType::parse(s).ok_or_else(|| CliError::record(path, line, format!("unknown bidder type `{s}`")))
}

/// Entry records `(auction_id, format, n, N_l, N_s)`.
pub fn read_entry(path: &Path) -> Result<Vec<EntryObservation>> {
    let rows: Vec<(u64, EntryRow)> = read_rows(path)?;
    rows.into_iter()
        .map(|(line, r)| {
            let format = AuctionFormat::parse(&r.format)
                .ok_or_else(|| CliError::record(path, line, format!("unknown auction format `{}`", r.format)))?;
            let obs = EntryObservation {
                auction_id: r.auction_id,
                format,
                n: r.n,
                n_logger: r.n_logger,
                n_sawmill: r.n_sawmill,
            };
            obs.validate().map_err(|e| CliError::record(path, line, e.to_string()))?;
            if obs.n_logger + obs.n_sawmill == 0 {
                return Err(CliError::record(path, line, "an auction needs potential bidders"));
            }
            Ok(obs)
        })
        .collect()
}

/// Transaction records `(auction_id, n, winner_type, tau, v0_l, v0_s)`.
pub fn read_bids(path: &Path) -> Result<Vec<BidObservation>> {
    let rows: Vec<(u64, BidRow)> = read_rows(path)?;
    rows.into_iter()
        .map(|(line, r)| {
            let obs = BidObservation {
                winner_type: parse_type(path, line, &r.winner_type)?,
                auction_id: r.auction_id,
                n: r.n,
                tau: r.tau,
                v0_l: r.v0_l,
                v0_s: r.v0_s,
            };
            obs.validate().map_err(|e| CliError::record(path, line, e.to_string()))?;
            Ok(obs)
        })
        .collect()
}

/// Cutting records `(auction_id, type, T, u0, t, price_idx, q)`, one row per
/// period. Rows of one auction form a spell; spells keep the order of their
/// first row.
pub fn read_cutting(path: &Path) -> Result<Vec<CuttingObservation>> {
    struct Spell {
        line: u64,
        bidder_type: BidderType,
        periods: u32,
        u0: f64,
        records: Vec<(u32, usize, f64)>,
    }
    let rows: Vec<(u64, CuttingRow)> = read_rows(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut spells: HashMap<String, Spell> = HashMap::new();
    for (line, r) in rows {
        let t = parse_type(path, line, &r.bidder_type)?;
        if !(r.q.is_finite() && r.u0 > 0.0) {
            return Err(CliError::record(path, line, "q must be finite and u0 positive"));
        }
        match spells.get_mut(&r.auction_id) {
            Some(s) => {
                if s.bidder_type != t || s.periods != r.periods || s.u0 != r.u0 {
                    return Err(CliError::record(
                        path,
                        line,
                        format!("auction {} changes type, T or u0 from line {}", r.auction_id, s.line),
                    ));
                }
                s.records.push((r.t, r.price_idx, r.q));
            }
            None => {
                order.push(r.auction_id.clone());
                spells.insert(
                    r.auction_id,
                    Spell {
                        line,
                        bidder_type: t,
                        periods: r.periods,
                        u0: r.u0,
                        records: vec![(r.t, r.price_idx, r.q)],
                    },
                );
            }
        }
    }
    order
        .iter()
        .map(|id| {
            let s = &spells[id];
            if s.records.len() > s.periods as usize {
                return Err(CliError::record(path, s.line, format!("auction {id} has more periods than T")));
            }
            CuttingObservation::from_records(id, s.bidder_type, s.periods, s.u0, &s.records)
                .map_err(|e| CliError::record(path, s.line, e.to_string()))
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e.into())
}

/// Serializes `rows` with their field names as the header.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(write_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a header and raw string records.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(write_err(path))?;
    for r in rows {
        w.write_record(r).map_err(write_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_entry(path: &Path, obs: &[EntryObservation]) -> Result<()> {
    let rows: Vec<EntryRow> = obs
        .iter()
        .map(|o| EntryRow {
            auction_id: o.auction_id.clone(),
            format: o.format.label().into(),
            n: o.n,
            n_logger: o.n_logger,
            n_sawmill: o.n_sawmill,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn write_bids(path: &Path, obs: &[BidObservation]) -> Result<()> {
    let rows: Vec<BidRow> = obs
        .iter()
        .map(|o| BidRow {
            auction_id: o.auction_id.clone(),
            n: o.n,
            winner_type: o.winner_type.label().into(),
            tau: o.tau,
            v0_l: o.v0_l,
            v0_s: o.v0_s,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn write_cutting(path: &Path, obs: &[CuttingObservation]) -> Result<()> {
    let rows: Vec<CuttingRow> = obs
        .iter()
        .flat_map(|o| {
            o.choices.iter().map(move |c| CuttingRow {
                auction_id: o.auction_id.clone(),
                bidder_type: o.bidder_type.label().into(),
                periods: o.periods,
                u0: o.u0,
                t: c.t,
                price_idx: c.price_idx,
                q: c.action.fraction(),
            })
        })
        .collect();
    write_rows(path, &rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn line_of(e: CliError) -> u64 {
        match e {
            CliError::Record { line, .. } => line,
            other => panic!("expected a record error, got {other}"),
        }
    }

    #[test]
    fn entry_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "e.csv", "auction_id,format,n,N_l,N_s\na,oral,2,5,5\nb,oral,x,5,5\n");
        assert_eq!(line_of(read_entry(&p).unwrap_err()), 3);
        let p = file(&dir, "e2.csv", "auction_id,format,n,N_l,N_s\na,oral,2,5,5\nb,dutch,1,5,5\n");
        assert_eq!(line_of(read_entry(&p).unwrap_err()), 3);
        let p = file(&dir, "e3.csv", "auction_id,format,n,N_l,N_s\na,oral,0,5,5\n");
        assert_eq!(line_of(read_entry(&p).unwrap_err()), 2);
        let p = file(&dir, "e4.csv", "auction_id,format,n,N_l,N_s\na,oral,1,5\n");
        assert_eq!(line_of(read_entry(&p).unwrap_err()), 2);
    }

    #[test]
    fn bids_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let obs = vec![BidObservation {
            auction_id: "a1".into(),
            n: 3,
            winner_type: BidderType::Sawmill,
            tau: 0.1 + 0.2,
            v0_l: 1.0 / 3.0,
            v0_s: 2.5e-9,
        }];
        let p = dir.path().join("b.csv");
        write_bids(&p, &obs).unwrap();
        assert_eq!(read_bids(&p).unwrap(), obs);
        let bad = file(&dir, "b2.csv", "auction_id,n,winner_type,tau,v0_l,v0_s\na,2,logger,-1,1,1\n");
        assert_eq!(line_of(read_bids(&bad).unwrap_err()), 2);
    }

    #[test]
    fn cutting_rows_group_into_spells() {
        let dir = tempfile::tempdir().unwrap();
        let text = "auction_id,type,T,u0,t,price_idx,q\n\
                    g2,logger,3,1,1,0,0.5\n\
                    g1,sawmill,2,2,2,1,0.5\n\
                    g1,sawmill,2,2,1,0,0.5\n\
                    g2,logger,3,1,2,1,0.25\n";
        let obs = read_cutting(&file(&dir, "c.csv", text)).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].auction_id, "g2");
        assert!(obs[0].censored && !obs[1].censored);
        assert_eq!(obs[1].choices[0].t, 1);
        let p = dir.path().join("c2.csv");
        write_cutting(&p, &obs).unwrap();
        assert_eq!(read_cutting(&p).unwrap(), obs);

        let gap = "auction_id,type,T,u0,t,price_idx,q\ng1,logger,3,1,1,0,0\ng1,logger,3,1,3,0,1\n";
        assert_eq!(line_of(read_cutting(&file(&dir, "c3.csv", gap)).unwrap_err()), 2);
        let mixed = "auction_id,type,T,u0,t,price_idx,q\ng1,logger,3,1,1,0,0\ng1,sawmill,3,1,2,0,1\n";
        assert_eq!(line_of(read_cutting(&file(&dir, "c4.csv", mixed)).unwrap_err()), 3);
    }

    #[test]
    fn price_series_needs_increasing_periods() {
        let dir = tempfile::tempdir().unwrap();
        let ok = read_price_series(&file(&dir, "p.csv", "period,price_index\n1,3.5\n2,4\n")).unwrap();
        assert_eq!(ok, vec![3.5, 4.0]);
        let bad = file(&dir, "p2.csv", "period,price_index\n1,3.5\n1,4\n");
        assert_eq!(line_of(read_price_series(&bad).unwrap_err()), 3);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = read_entry(Path::new("/nonexistent/entry.csv")).unwrap_err();
        assert_eq!(e.report().kind, "io");
    }
}

//! CSV and JSON writers. CSV output uses a header row, `.` decimals and LF
//! line endings.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::online::RoundTranscript;
use crate::sim::RunRecord;

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

#[derive(Serialize)]
struct TranscriptRow {
    i: usize,
    cost: f64,
    allocation: f64,
    payment: f64,
    ignored: bool,
    purchased: bool,
    y: f64,
    paid: f64,
    above_cap: bool,
}

/// One row per round.
pub fn write_transcript_csv<W: Write>(transcripts: &[RoundTranscript], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for t in transcripts {
        w.serialize(TranscriptRow {
            i: t.round,
            cost: t.cost,
            allocation: t.probability,
            payment: t.payment,
            ignored: t.ignored,
            purchased: t.purchased,
            y: t.y,
            paid: t.paid,
            above_cap: t.above_cap,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One row per Monte Carlo run.
pub fn write_runs_csv<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in runs {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic column writer for rule tables (`solve` output).
pub fn write_columns_csv<W: Write>(headers: &[&str], columns: &[&[f64]], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(headers)?;
    let rows = columns.iter().map(|c| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c.get(i).map_or(String::new(), |v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_csv_has_header_and_lf() {
        let runs = [RunRecord {
            run: 0,
            estimate: 0.5,
            spend: 1.25,
            lower: None,
            upper: None,
            covered: None,
            ignored: 0,
            declined_above_cap: 0,
        }];
        let mut buf = Vec::new();
        write_runs_csv(&runs, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "run,estimate,spend,lower,upper,covered,ignored,declined_above_cap\n0,0.5,1.25,,,,0,0\n");
    }

    #[test]
    fn columns_csv() {
        let mut buf = Vec::new();
        write_columns_csv(&["cost", "a"], &[&[1.0, 2.0], &[1.0, 0.5]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cost,a\n1,1\n2,0.5\n");
    }
}

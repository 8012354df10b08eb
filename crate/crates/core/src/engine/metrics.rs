//! Metrics CSV: one header line, then one row per measured round.

use std::io::{BufRead, Write};

use super::RoundMetrics;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "round,elapsed_ms,primal,dual,gap,bytes_per_machine,local_iters_total";

fn format_row(m: &RoundMetrics) -> String {
    format!(
        "{},{:.3},{},{},{},{},{}",
        m.round, m.elapsed_ms, m.primal, m.dual, m.gap, m.bytes_per_machine, m.local_iters_total
    )
}

/// Append-only writer; every row is flushed as soon as it is written.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, row: &RoundMetrics) -> Result<()> {
        writeln!(self.out, "{}", format_row(row))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[RoundMetrics]) -> Result<()> {
    let mut w = MetricsWriter::new(out)?;
    for r in rows {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<RoundMetrics>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(Error::EmptyInput)??;
    if header.trim() != METRICS_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let bad = |name: &str| Error::Parse {
            line: lineno,
            msg: format!("bad {name} field"),
        };
        rows.push(RoundMetrics {
            round: fields[0].parse().map_err(|_| bad("round"))?,
            elapsed_ms: fields[1].parse().map_err(|_| bad("elapsed_ms"))?,
            primal: fields[2].parse().map_err(|_| bad("primal"))?,
            dual: fields[3].parse().map_err(|_| bad("dual"))?,
            gap: fields[4].parse().map_err(|_| bad("gap"))?,
            bytes_per_machine: fields[5].parse().map_err(|_| bad("bytes_per_machine"))?,
            local_iters_total: fields[6].parse().map_err(|_| bad("local_iters_total"))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            RoundMetrics {
                round: 0,
                elapsed_ms: 0.0,
                primal: 0.5,
                dual: -0.0,
                gap: 0.5,
                bytes_per_machine: 0,
                local_iters_total: 0,
            },
            RoundMetrics {
                round: 3,
                elapsed_ms: 12.25,
                primal: 0.1234567890123456,
                dual: 1.0 / 3.0,
                gap: 1e-17,
                bytes_per_machine: 420,
                local_iters_total: 99,
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        let back = read_metrics_csv(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_metrics_csv("a,b\n".as_bytes()).is_err());
        assert!(read_metrics_csv("".as_bytes()).is_err());
    }
}

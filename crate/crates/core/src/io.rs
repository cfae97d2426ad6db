//! CSV plumbing shared by the data types.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const SCHEMA_LINE: &str = "# hemiray v1";

/// Writes a versioned CSV table. Floats use the shortest round-trip representation.
pub fn write_table<W: Write>(mut out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid("row width does not match header"));
        }
        w.write_record(r.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV table whose header must equal `header`. Lines starting with `#` are skipped.
pub fn read_table<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let got: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::invalid(format!(
            "unexpected CSV header {got:?}, want {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("not a number: '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::invalid("ragged CSV row"));
        }
        rows.push(row);
    }
    Ok(rows)
}

//! Matrix files: a `d=<cols>` header line, then one comma-separated row per token
//! written with 17 significant digits so values round-trip exactly.

use std::io::{Read, Write};

use conystrom_core::Matrix;

use crate::error::{CliError, CliResult};

pub fn write_matrix<W: Write>(out: W, m: &Matrix) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record([format!("d={}", m.cols())])?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> CliResult<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| CliError::Parse("empty matrix file".into()))?
        .map_err(|e| CliError::Parse(e.to_string()))?;
    let d: usize = header
        .get(0)
        .and_then(|h| h.strip_prefix("d="))
        .and_then(|v| v.parse().ok())
        .filter(|&d| d > 0 && header.len() == 1)
        .ok_or_else(|| CliError::Parse("first line must be `d=<cols>`".into()))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        if rec.len() != d {
            return Err(CliError::Parse(format!("row {} has {} columns, expected {d}", i + 1, rec.len())));
        }
        for field in rec.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| CliError::Parse(format!("row {}: `{field}` is not a number", i + 1)))?;
            data.push(x);
        }
        rows += 1;
    }
    Matrix::new(rows, d, data).map_err(|e| CliError::Parse(e.to_string()))
}

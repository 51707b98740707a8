//! `cost` and `landmarks` commands.

use std::io::Write;

use conystrom_core::cost::{Variant, VariantCost};
use conystrom_core::landmarks::{kmeans_landmarks, subsample_tokens};
use conystrom_core::Matrix;

use crate::error::{CliError, CliResult};
use crate::matrix_csv::write_matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub variant: Variant,
    pub flops: u64,
    /// Landmark-keeping path of continual-landmark variants.
    pub flops_non_updated: Option<u64>,
    pub flops_amortized: f64,
    /// Amortized FLOPs of the whole stack.
    pub flops_stacked: f64,
    /// Stacked Att FLOPs over this variant's.
    pub rel_flops: f64,
    pub valley: u64,
    pub peak: u64,
}

pub fn cost_rows(variants: &[Variant], n: u64, d: u64, m: u64, layers: u64) -> CliResult<Vec<CostRow>> {
    let make = |v: Variant| {
        let m = if v.is_nystrom() { m } else { 0 };
        VariantCost::new(v, n, d, m).map_err(|e| CliError::Usage(format!("{v}: {e}")))
    };
    let att = make(Variant::Att)?.stacked_flops(layers).map_err(|e| CliError::Usage(e.to_string()))?;
    variants
        .iter()
        .map(|&v| {
            let c = make(v)?;
            let mem = c.memory()?;
            let stacked = c.stacked_flops(layers)?;
            Ok(CostRow {
                variant: v,
                flops: c.flops()?,
                flops_non_updated: c.flops_non_updated().ok(),
                flops_amortized: c.flops_amortized()?,
                flops_stacked: stacked,
                rel_flops: att / stacked,
                valley: mem.valley,
                peak: mem.peak,
            })
        })
        .collect()
}

const COST_HEADER: [&str; 8] = [
    "variant",
    "flops",
    "flops_non_updated",
    "flops_amortized",
    "flops_stacked",
    "rel_flops",
    "valley",
    "peak",
];

fn cells(r: &CostRow) -> [String; 8] {
    [
        r.variant.to_string(),
        r.flops.to_string(),
        r.flops_non_updated.map(|f| f.to_string()).unwrap_or_else(|| "-".into()),
        format!("{:.1}", r.flops_amortized),
        format!("{:.1}", r.flops_stacked),
        format!("{:.2}", r.rel_flops),
        r.valley.to_string(),
        r.peak.to_string(),
    ]
}

/// Right-aligned plain-text table.
pub fn print_cost_table<W: Write>(rows: &[CostRow], mut out: W) -> CliResult<()> {
    let body: Vec<[String; 8]> = rows.iter().map(cells).collect();
    let mut widths = COST_HEADER.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(&COST_HEADER.map(String::from)))?;
    for row in &body {
        writeln!(out, "{}", line(row))?;
    }
    Ok(())
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COST_HEADER)?;
    for r in rows {
        w.write_record(cells(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Subsamples `tokens` to `cap` rows and clusters them into `m` landmarks.
pub fn landmarks<W: Write>(tokens: &Matrix, m: usize, seed: u64, cap: usize, max_iters: usize, out: W) -> CliResult<Matrix> {
    if m == 0 || m > tokens.rows() {
        return Err(CliError::Usage(format!("--m must satisfy 1 <= m <= {} input rows", tokens.rows())));
    }
    if cap < m {
        return Err(CliError::Usage("--cap must be at least --m".into()));
    }
    let sample = subsample_tokens(tokens, cap, seed);
    let centers = kmeans_landmarks(&sample, m, seed, max_iters)?;
    write_matrix(out, &centers)?;
    Ok(centers)
}

//! Run-log CSV files: `N,D,E,M,log2B,strategy,loss`.
//!
//! Channel-wise rows may leave `log2B` blank; it is filled with the
//! channel-wise equivalent. Tensor-wise rows need [`TensorEquivParams`] to
//! fill a blank `log2B`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lawmodels::{self, RunRecord, StrategyTag, TensorEquivParams};

pub const HEADER: [&str; 7] = ["N", "D", "E", "M", "log2B", "strategy", "loss"];

pub fn parse_runlog(src: &str, tensor: Option<&TensorEquivParams>) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(src.as_bytes());
    let mut out = Vec::new();
    let mut saw_header = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, 1, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if !saw_header {
            if line != 1 {
                return Err(Error::parse(1, 1, format!("header must be `{}`", HEADER.join(","))));
            }
            for (i, want) in HEADER.iter().enumerate() {
                if row.get(i) != Some(*want) {
                    return Err(Error::parse(
                        line,
                        i + 1,
                        format!("header must be `{}`", HEADER.join(",")),
                    ));
                }
            }
            if row.len() != HEADER.len() {
                return Err(Error::parse(line, HEADER.len() + 1, "unexpected extra header column"));
            }
            saw_header = true;
            continue;
        }
        if row.len() != HEADER.len() {
            return Err(Error::parse(
                line,
                row.len().min(HEADER.len()) + 1,
                format!("expected {} fields, found {}", HEADER.len(), row.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(line, i + 1, format!("bad {} value {:?}", HEADER[i], &row[i])))
        };
        let strategy: StrategyTag = row[5]
            .parse()
            .map_err(|e: Error| Error::parse(line, 6, e.to_string()))?;
        let (n, d) = (num(0)?, num(1)?);
        let log2b = if row[4].is_empty() {
            match strategy {
                StrategyTag::Channel => lawmodels::channel_equiv_log2b(),
                StrategyTag::Tensor => match tensor {
                    Some(p) => lawmodels::tensor_equiv_log2b(n, d, p),
                    None => {
                        return Err(Error::parse(
                            line,
                            5,
                            "blank log2B on a tensor row needs tensor-equivalence parameters",
                        ))
                    }
                },
                StrategyTag::Block => return Err(Error::parse(line, 5, "block rows need log2B")),
            }
        } else {
            num(4)?
        };
        let record = RunRecord {
            n,
            d,
            e: num(2)?,
            m: num(3)?,
            log2b,
            strategy,
            loss: num(6)?,
        };
        record
            .validate()
            .map_err(|e| Error::parse(line, 1, e.to_string()))?;
        out.push(record);
    }
    if !saw_header {
        return Err(Error::parse(1, 1, format!("missing header `{}`", HEADER.join(","))));
    }
    Ok(out)
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n, r.d, r.e, r.m, r.log2b, r.strategy, r.loss
        ));
    }
    out
}

pub fn read_runlog(path: &Path, tensor: Option<&TensorEquivParams>) -> Result<Vec<RunRecord>> {
    parse_runlog(&fs::read_to_string(path)?, tensor)
}

pub fn write_runlog(path: &Path, records: &[RunRecord]) -> Result<()> {
    fs::write(path, to_csv(records))?;
    Ok(())
}

//! The metrics file format: a fixed five-column CSV whose floats carry 17
//! significant digits, so parsing a file back reproduces every value bit
//! for bit.

use std::fmt::Write as _;

use byrd::engine::MetricsRow;
use byrd::Error;

pub const HEADER: &str = "k,loss,accuracy,dist_to_opt_sq,grad_norm";

fn push_float(out: &mut String, v: f64) {
    // 1 + 16 significant digits: enough for exact f64 round-tripping
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

fn push_opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        push_float(out, v);
    }
}

pub fn metrics_to_string(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(HEADER.len() + 1 + rows.len() * 96);
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},", r.k).expect("writing to a String cannot fail");
        push_float(&mut out, r.loss);
        out.push(',');
        push_opt(&mut out, r.accuracy);
        out.push(',');
        push_opt(&mut out, r.dist_to_opt_sq);
        out.push(',');
        push_float(&mut out, r.grad_norm);
        out.push('\n');
    }
    out
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T, Error> {
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name} value `{field}`"),
    })
}

fn parse_opt(field: &str, name: &str, line: usize) -> Result<Option<f64>, Error> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field, name, line).map(Some)
    }
}

/// Strict parse of [`metrics_to_string`]'s output (header required, exactly
/// five columns, empty optional cells). Errors carry 1-based line numbers.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, Error> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == HEADER => {}
        Some((_, first)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{HEADER}`, found `{first}`"),
            })
        }
        None => return Err(Error::Parse { line: 1, message: "empty metrics file".into() }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        rows.push(MetricsRow {
            k: parse_field(fields[0], "k", lineno)?,
            loss: parse_field(fields[1], "loss", lineno)?,
            accuracy: parse_opt(fields[2], "accuracy", lineno)?,
            dist_to_opt_sq: parse_opt(fields[3], "dist_to_opt_sq", lineno)?,
            grad_norm: parse_field(fields[4], "grad_norm", lineno)?,
        });
    }
    Ok(rows)
}

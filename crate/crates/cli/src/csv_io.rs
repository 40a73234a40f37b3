//! Attribution matrices as CSV: `#key=value` metadata lines, a header of
//! `position:token` labels, then one row per target position.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use latim_core::aggregation::AttributionMatrix;
use ndarray::Array2;

use crate::error::{CliError, CliResult};

pub const CORNER: &str = "target\\source";

/// Ten significant digits, exact `0` for zeros (including `-0`).
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.9e}")
    }
}

fn label(pos: usize, token: usize) -> String {
    format!("{pos}:{token}")
}

pub fn write_matrix(path: &Path, c: &AttributionMatrix, tokens: &[usize], meta: &[(&str, String)]) -> CliResult<()> {
    let n = c.len();
    if tokens.len() != n {
        return Err(CliError::Data(format!("{} tokens for a {n}x{n} matrix", tokens.len())));
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = vec![
        ("method", c.method.name().to_string()),
        ("layer", c.layer.to_string()),
    ];
    header.extend(meta.iter().map(|(k, v)| (*k, v.clone())));
    if !c.degenerate_rows.is_empty() {
        let rows: Vec<String> = c.degenerate_rows.iter().map(|r| r.to_string()).collect();
        header.push(("degenerate_rows", rows.join(";")));
    }
    for (k, v) in header {
        writeln!(out, "#{k}={v}").map_err(|e| CliError::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut record = vec![CORNER.to_string()];
    record.extend(tokens.iter().enumerate().map(|(j, &t)| label(j, t)));
    w.write_record(&record)?;
    for (i, row) in c.scores.outer_iter().enumerate() {
        record.clear();
        record.push(label(i, tokens[i]));
        record.extend(row.iter().map(|&v| format_value(v)));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMatrix {
    pub meta: BTreeMap<String, String>,
    pub tokens: Vec<usize>,
    pub scores: Array2<f64>,
}

fn parse_label(s: &str) -> CliResult<usize> {
    s.split_once(':')
        .and_then(|(_, t)| t.trim().parse().ok())
        .ok_or_else(|| CliError::Data(format!("bad position label `{s}`")))
}

pub fn read_matrix(path: &Path) -> CliResult<ParsedMatrix> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line[1..].split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let tokens = header.iter().skip(1).map(parse_label).collect::<CliResult<Vec<_>>>()?;
    let n = tokens.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(CliError::Data(format!("{}: row {rows} has {} cells, expected {}", path.display(), rec.len(), n + 1)));
        }
        for cell in rec.iter().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad number `{cell}`", path.display())))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(CliError::Data(format!("{}: {rows} rows for {n} columns", path.display())));
    }
    let scores = Array2::from_shape_vec((n, n), values).expect("row count checked");
    Ok(ParsedMatrix { meta, tokens, scores })
}

/// Plain CSV table with optional metadata lines.
pub fn write_table(path: &Path, meta: &[(&str, String)], header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (k, v) in meta {
        writeln!(out, "#{k}={v}").map_err(|e| CliError::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use latim_core::aggregation::{LayerTag, Method};

    #[test]
    fn zero_is_exact_and_values_round_trip() {
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(-0.0), "0");
        for v in [1.0, -3.25e-7, 0.1234567890123, 98765.4321] {
            let back: f64 = format_value(v).parse().unwrap();
            assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let scores = ndarray::array![[1.0, 0.0, 0.0], [0.25, 0.75, 0.0], [1.0 / 3.0, 0.0, 2.0 / 3.0]];
        let mut c = AttributionMatrix::new(scores.clone(), Method::Alti, LayerTag::Layer(2));
        c.degenerate_rows = vec![1];
        write_matrix(&path, &c, &[4, 0, 9], &[("strategy", "silu".into())]).unwrap();
        let parsed = read_matrix(&path).unwrap();
        assert_eq!(parsed.tokens, vec![4, 0, 9]);
        assert_eq!(parsed.meta["method"], "alti");
        assert_eq!(parsed.meta["layer"], "2");
        assert_eq!(parsed.meta["degenerate_rows"], "1");
        assert_eq!(parsed.meta["strategy"], "silu");
        for (a, b) in parsed.scores.iter().zip(scores.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(5).unwrap().starts_with("0:4,1.000000000e0,0,0"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,0:1,1:2\n0:1,1\n1:2,1,1\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}

//! Delimited matrix ingestion.

use std::fs;
use std::path::Path;

use pcrank::fixtures::exam_scores;
use pcrank::ObservedMatrix;

use crate::CliError;

/// Name that selects the bundled examination-score matrix.
pub const EXAM_FIXTURE: &str = "builtin:exam";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Auto,
    Char(char),
    Whitespace,
}

impl std::str::FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Char(',')),
            "tab" | "\t" | "\\t" => Ok(Delimiter::Char('\t')),
            "space" | "whitespace" | " " => Ok(Delimiter::Whitespace),
            "semicolon" | ";" => Ok(Delimiter::Char(';')),
            other => Err(format!("unknown delimiter '{other}' (use auto, comma, tab, space or semicolon)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub delimiter: Delimiter,
    pub header: bool,
    pub center: bool,
}

pub struct Loaded {
    pub matrix: ObservedMatrix,
    pub source: String,
}

fn detect(line: &str) -> Delimiter {
    if line.contains('\t') {
        Delimiter::Char('\t')
    } else if line.contains(',') {
        Delimiter::Char(',')
    } else {
        Delimiter::Whitespace
    }
}

fn split(line: &str, d: Delimiter) -> Vec<&str> {
    match d {
        Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
        _ => line.split_whitespace().collect(),
    }
}

/// Parses delimited numeric text; `#` starts a comment line.
pub fn parse_matrix(text: &str, opts: &ReadOptions) -> Result<Vec<Vec<f64>>, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    if opts.header {
        lines.next();
    }
    let mut delim = opts.delimiter;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if delim == Delimiter::Auto {
            delim = detect(line);
        }
        let fields = split(line.trim_end_matches('\r'), delim);
        let row = fields
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Ingest(format!(
                        "line {}, column {}: '{}' is not a finite number",
                        lineno + 1,
                        j + 1,
                        f
                    ))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Ingest(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Ingest("no data rows".into()));
    }
    Ok(rows)
}

fn center_columns(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let p = rows[0].len();
    for j in 0..p {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        for r in rows.iter_mut() {
            r[j] -= mean;
        }
    }
}

pub fn load(path: &str, opts: &ReadOptions) -> Result<Loaded, CliError> {
    let mut rows = if path == EXAM_FIXTURE {
        let m = exam_scores().map_err(CliError::from)?;
        m.matrix().row_iter().map(|r| r.iter().copied().collect()).collect()
    } else {
        let text = fs::read_to_string(Path::new(path))
            .map_err(|e| CliError::Ingest(format!("cannot read {path}: {e}")))?;
        parse_matrix(&text, opts)?
    };
    if opts.center {
        center_columns(&mut rows);
    }
    let matrix = ObservedMatrix::from_rows(&rows).map_err(|e| CliError::Ingest(e.to_string()))?;
    Ok(Loaded {
        matrix,
        source: path.to_string(),
    })
}

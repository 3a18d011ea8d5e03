//! `TORMAT1` text matrix files.
//!
//! ```text
//! TORMAT1
//! N 2
//! ORDER interleaved
//! # seed 7
//! 0.0000000000000000e0+0.0000000000000000e0j 5.0000000000000000e-1+0.0000000000000000e0j
//! 5.0000000000000000e-1+0.0000000000000000e0j 0.0000000000000000e0+0.0000000000000000e0j
//! ```
//!
//! Entries are `re{sign}imj` with 17 significant digits, which round-trips
//! every binary64 exactly. Lines starting with `#` may appear anywhere after
//! the first line; the writer places them after the `ORDER` line.

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::gbsgen::{reorder, ModeOrdering};
use crate::linalg::ComplexMatrix;

pub const MAGIC: &str = "TORMAT1";

/// Hermiticity tolerance applied when loading.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("missing `{MAGIC}` header")]
    MissingMagic,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("expected {expected} matrix rows, found {found}")]
    RowCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
    #[error("matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Parsed file contents, in the ordering stated by the file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub matrix: ComplexMatrix,
    pub ordering: ModeOrdering,
    pub comments: Vec<String>,
}

/// One complex entry in file syntax.
pub fn format_entry(z: Complex64) -> String {
    format!("{:.16e}{:+.16e}j", z.re, z.im)
}

pub fn parse_entry(tok: &str) -> Option<Complex64> {
    let body = tok.strip_suffix('j')?;
    let bytes = body.as_bytes();
    // The sign separating the parts is the last `+`/`-` not at the start and
    // not directly after an exponent marker.
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re: f64 = body[..split].parse().ok()?;
    let im: f64 = body[split..].parse().ok()?;
    Some(Complex64::new(re, im))
}

pub fn format(matrix: &ComplexMatrix, ordering: ModeOrdering, comments: &[String]) -> String {
    let n = matrix.n();
    let mut out = String::with_capacity(64 + n * n * 48);
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "N {n}");
    let _ = writeln!(out, "ORDER {ordering}");
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format_entry(matrix.get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse(text: &str) -> Result<MatrixFile, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(ParseError::MissingMagic),
    }
    let mut comments = Vec::new();
    let mut content = lines.filter(|(_, l)| {
        if let Some(c) = l.strip_prefix('#') {
            comments.push(c.trim().to_string());
            false
        } else {
            !l.is_empty()
        }
    });
    let syntax = |line: usize, msg: &str| ParseError::Syntax {
        line,
        msg: msg.to_string(),
    };

    let (ln, l) = content
        .next()
        .ok_or_else(|| syntax(2, "missing `N` line"))?;
    let n: usize = l
        .strip_prefix("N ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| syntax(ln, "expected `N <n>`"))?;
    let (ln, l) = content
        .next()
        .ok_or_else(|| syntax(ln + 1, "missing `ORDER` line"))?;
    let ordering: ModeOrdering = l
        .strip_prefix("ORDER ")
        .ok_or_else(|| syntax(ln, "expected `ORDER interleaved|block`"))?
        .trim()
        .parse()
        .map_err(|e: crate::gbsgen::OrderingError| syntax(ln, &e.to_string()))?;

    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (ln, l) in content {
        if rows == n {
            return Err(syntax(ln, "unexpected trailing content"));
        }
        let before = data.len();
        for tok in l.split_whitespace() {
            data.push(parse_entry(tok).ok_or_else(|| syntax(ln, &format!("bad entry `{tok}`")))?);
        }
        if data.len() - before != n {
            return Err(syntax(ln, &format!("expected {n} entries")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(ParseError::RowCount {
            expected: n,
            found: rows,
        });
    }
    Ok(MatrixFile {
        matrix: ComplexMatrix::from_row_major(n, data),
        ordering,
        comments,
    })
}

/// Checks a sampling-matrix candidate: even size, finite, Hermitian.
pub fn validate(m: &ComplexMatrix) -> Result<(), ValidationError> {
    if !m.n().is_multiple_of(2) {
        return Err(ValidationError::OddDimension(m.n()));
    }
    for i in 0..m.n() {
        for j in 0..m.n() {
            let z = m.get(i, j);
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(ValidationError::NonFinite(i, j));
            }
        }
    }
    let defect = m.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(ValidationError::NotHermitian(defect));
    }
    Ok(())
}

/// Parses, validates and converts to interleaved ordering.
pub fn load(text: &str) -> Result<ComplexMatrix, LoadError> {
    let file = parse(text)?;
    validate(&file.matrix)?;
    Ok(
        reorder(&file.matrix, file.ordering, ModeOrdering::Interleaved)
            .expect("validated dimension is even"),
    )
}

//! Matrix Market coordinate-format reader.

use std::path::Path;

use super::csr::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read matrix file {}: {e}", path.display())))?;
    parse_matrix_market(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_matrix_market(text: &str) -> Result<CsrMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::config("empty matrix file"))?;
    let words: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(Error::config("line 1: expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    if words[2] != "coordinate" {
        return Err(Error::config(format!("line 1: unsupported format '{}'", words[2])));
    }
    let field = match words[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        f => return Err(Error::config(format!("line 1: unsupported field '{f}'"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        s => return Err(Error::config(format!("line 1: unsupported symmetry '{s}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut stored = 0usize;
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let lineno = ln + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some((rows, cols, _)) = size else {
            if toks.len() != 3 {
                return Err(Error::config(format!("line {lineno}: expected 'rows cols nnz'")));
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| Error::config(format!("line {lineno}: bad size '{t}'")))
            };
            size = Some((parse(toks[0])?, parse(toks[1])?, parse(toks[2])?));
            triplets.reserve(size.map_or(0, |s| s.2));
            continue;
        };
        let want = if field == Field::Pattern { 2 } else { 3 };
        if toks.len() != want {
            return Err(Error::config(format!("line {lineno}: expected {want} fields")));
        }
        let idx = |t: &str, max: usize| -> Result<usize> {
            match t.parse::<usize>() {
                Ok(i) if i >= 1 && i <= max => Ok(i - 1),
                _ => Err(Error::config(format!("line {lineno}: index '{t}' outside 1..={max}"))),
            }
        };
        let i = idx(toks[0], rows)?;
        let j = idx(toks[1], cols)?;
        let v = match field {
            Field::Pattern => 1.0,
            Field::Integer => toks[2]
                .parse::<i64>()
                .map_err(|_| Error::config(format!("line {lineno}: bad integer '{}'", toks[2])))?
                as f64,
            Field::Real => toks[2]
                .parse::<f64>()
                .map_err(|_| Error::config(format!("line {lineno}: bad value '{}'", toks[2])))?,
        };
        triplets.push((i, j, v));
        stored += 1;
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => triplets.push((j, i, v)),
                Symmetry::SkewSymmetric => triplets.push((j, i, -v)),
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| Error::config("missing size line"))?;
    if stored != nnz {
        return Err(Error::config(format!("size line declares {nnz} entries, found {stored}")));
    }
    CsrMatrix::from_triplets(rows, cols, &triplets)
}

/// Writes a matrix in general real coordinate format.
pub fn write_matrix_market(a: &CsrMatrix) -> String {
    let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
    s.push_str(&format!("{} {} {}\n", a.n_rows(), a.n_cols(), a.nnz()));
    for i in 0..a.n_rows() {
        for (c, v) in a.row(i) {
            s.push_str(&format!("{} {} {:e}\n", i + 1, c + 1, v));
        }
    }
    s
}

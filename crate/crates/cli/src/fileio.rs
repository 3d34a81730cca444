//! Plain-text file formats for matrix sets, Gram matrices, sparse codes, and
//! learning traces.
//!
//! All formats are line-oriented, whitespace-separated decimal text with a
//! `magic version` first line. Every floating-point number is written with
//! Rust's shortest-round-trip formatting, so `write -> read -> write`
//! reproduces the original bytes exactly and `read` recovers the original
//! bits. Text keeps fixtures diffable and debuggable; a binary format is
//! deliberately out of scope.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use stein_sparse::coding::SparseCode;
use stein_sparse::kernel::GramMatrix;
use stein_sparse::spd::SpdMatrix;
use stein_sparse::{Error, LabeledSpdSet, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const SET_MAGIC: &str = "spdset";
pub const GRAM_MAGIC: &str = "gram";
pub const CODES_MAGIC: &str = "codes";
pub const TRACE_MAGIC: &str = "trace";

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Line cursor over a text file; skips nothing, counts lines for messages.
struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines(),
            line_no: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.inner
            .next()
            .ok_or_else(|| bad(format!("unexpected end of file at line {}", self.line_no)))
    }

    fn peek_done(&mut self) -> bool {
        self.inner.clone().next().is_none()
    }

    /// Consumes a `key value...` line, returning the value fields.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            Some(k) => Err(bad(format!(
                "line {}: expected `{key}`, found `{k}`",
                self.line_no
            ))),
            None => Err(bad(format!("line {}: expected `{key}`", self.line_no))),
        }
    }
}

fn parse_one<T: std::str::FromStr>(fields: &[&str], what: &str) -> Result<T> {
    if fields.len() != 1 {
        return Err(bad(format!(
            "{what}: expected one value, found {}",
            fields.len()
        )));
    }
    fields[0]
        .parse()
        .map_err(|_| bad(format!("{what}: cannot parse `{}`", fields[0])))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| bad(format!("{what}: cannot parse `{s}` as a number")))
}

fn check_magic(lines: &mut Lines, magic: &str) -> Result<()> {
    let fields = lines.keyed(magic)?;
    let version: u32 = parse_one(&fields, "format version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported {magic} format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

// ---------------------------------------------------------------------------
// Matrix sets

/// A parsed (or to-be-written) set file: `count` square matrices of side
/// `dim`, stored row-major with all `dim * dim` entries, plus optional
/// per-matrix labels and an optional kernel width (dictionary files carry
/// one so coding commands need no repeated flag).
///
/// This raw form does not check positive definiteness, so the same format
/// can hold tangent (merely symmetric) data; [`MatrixSetFile::into_spd_set`]
/// is the validating step every consumer of SPD data goes through.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSetFile {
    pub dim: usize,
    pub matrices: Vec<DMatrix<f64>>,
    pub labels: Option<Vec<usize>>,
    pub sigma: Option<f64>,
}

impl MatrixSetFile {
    pub fn from_spd_set(set: &LabeledSpdSet, sigma: Option<f64>) -> Self {
        MatrixSetFile {
            dim: set.dim().unwrap_or(0),
            matrices: set.points().iter().map(|p| p.matrix().clone()).collect(),
            labels: set.labels().map(|l| l.to_vec()),
            sigma,
        }
    }

    /// Validates every matrix as SPD (this is where `spdset` earns its name)
    /// and assembles the labeled set.
    pub fn into_spd_set(self) -> Result<LabeledSpdSet> {
        let points = self
            .matrices
            .into_iter()
            .enumerate()
            .map(|(index, m)| {
                SpdMatrix::new(m).map_err(|e| Error::Sample {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSpdSet::new(points, self.labels)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SET_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "count {}", self.matrices.len());
        if let Some(sigma) = self.sigma {
            let _ = writeln!(out, "sigma {sigma}");
        }
        if let Some(labels) = &self.labels {
            out.push_str("labels");
            for l in labels {
                let _ = write!(out, " {l}");
            }
            out.push('\n');
        }
        for m in &self.matrices {
            let mut vals = Vec::with_capacity(self.dim * self.dim);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    vals.push(m[(i, j)]);
                }
            }
            push_row(&mut out, vals);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        check_magic(&mut lines, SET_MAGIC)?;
        let dim: usize = parse_one(&lines.keyed("dim")?, "dim")?;
        let count: usize = parse_one(&lines.keyed("count")?, "count")?;
        if dim == 0 && count > 0 {
            return Err(bad("dim 0 is only valid for an empty set"));
        }
        let mut sigma = None;
        let mut labels = None;
        let mut pending: Option<&str> = None;
        // Optional header lines (sigma, labels) sit between the fixed header
        // and the payload; payload rows start with a number, never a keyword.
        while pending.is_none() && !lines.peek_done() {
            let line = lines.next()?;
            if let Some(rest) = line.strip_prefix("sigma ") {
                if sigma.is_some() || labels.is_some() {
                    return Err(bad("sigma line duplicated or out of order"));
                }
                sigma = Some(parse_f64(rest.trim(), "sigma")?);
            } else if let Some(rest) = line.strip_prefix("labels") {
                if labels.is_some() {
                    return Err(bad("duplicate labels line"));
                }
                let parsed: Vec<usize> = rest
                    .split_whitespace()
                    .map(|f| parse_one(&[f], "label"))
                    .collect::<Result<_>>()?;
                if parsed.len() != count {
                    return Err(bad(format!(
                        "labels: expected {count} entries, found {}",
                        parsed.len()
                    )));
                }
                labels = Some(parsed);
            } else {
                pending = Some(line);
            }
        }
        let mut matrices = Vec::with_capacity(count);
        for index in 0..count {
            let line = match pending.take() {
                Some(l) => l,
                None => lines.next()?,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != dim * dim {
                return Err(bad(format!(
                    "matrix {index}: expected {} entries, found {}",
                    dim * dim,
                    fields.len()
                )));
            }
            let entries = fields
                .iter()
                .map(|f| parse_f64(f, &format!("matrix {index}")))
                .collect::<Result<Vec<_>>>()?;
            matrices.push(DMatrix::from_row_slice(dim, dim, &entries));
        }
        if pending.is_some() || !lines.peek_done() {
            return Err(bad(format!("trailing content after {count} matrices")));
        }
        Ok(MatrixSetFile {
            dim,
            matrices,
            labels,
            sigma,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read_file(path.as_ref())?)
    }
}

/// Reads a set file and validates every matrix as SPD — the path all
/// commands take for their inputs.
pub fn read_spd_set(path: impl AsRef<Path>) -> Result<LabeledSpdSet> {
    MatrixSetFile::read(path)?.into_spd_set()
}

/// Writes a labeled set (optionally recording the kernel width used with
/// it, which dictionary files do).
pub fn write_spd_set(
    path: impl AsRef<Path>,
    set: &LabeledSpdSet,
    sigma: Option<f64>,
) -> Result<()> {
    MatrixSetFile::from_spd_set(set, sigma).write(path)
}

// ---------------------------------------------------------------------------
// Gram matrices

pub fn gram_to_text(gram: &GramMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{GRAM_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "dim {}", gram.nrows());
    if let Some(mineig) = gram.min_eigenvalue() {
        let _ = writeln!(out, "mineig {mineig}");
    }
    let entries = gram.entries();
    for i in 0..entries.nrows() {
        push_row(&mut out, entries.row(i).iter().cloned());
    }
    out
}

pub fn gram_from_text(text: &str) -> Result<GramMatrix> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, GRAM_MAGIC)?;
    let dim: usize = parse_one(&lines.keyed("dim")?, "dim")?;
    let mut mineig = None;
    let mut pending: Option<&str> = None;
    if dim > 0 {
        let line = lines.next()?;
        if let Some(rest) = line.strip_prefix("mineig ") {
            mineig = Some(parse_f64(rest.trim(), "mineig")?);
        } else {
            pending = Some(line);
        }
    }
    let mut entries = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let line = match pending.take() {
            Some(l) => l,
            None => lines.next()?,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim {
            return Err(bad(format!(
                "row {i}: expected {dim} entries, found {}",
                fields.len()
            )));
        }
        for (j, f) in fields.iter().enumerate() {
            entries[(i, j)] = parse_f64(f, &format!("row {i}"))?;
        }
    }
    if !lines.peek_done() {
        return Err(bad(format!("trailing content after {dim} rows")));
    }
    Ok(GramMatrix::from_parts(entries, mineig))
}

pub fn write_gram(path: impl AsRef<Path>, gram: &GramMatrix) -> Result<()> {
    write_file(path.as_ref(), &gram_to_text(gram))
}

pub fn read_gram(path: impl AsRef<Path>) -> Result<GramMatrix> {
    gram_from_text(&read_file(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Sparse codes

/// One row per solved code: `lambda objective kkt sweeps c_1 ... c_N`.
/// The per-row penalty matters because the automatic penalty is derived per
/// query; the optimality residual column makes solver quality auditable
/// straight from the file.
pub fn codes_to_text(codes: &[SparseCode], n_atoms: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CODES_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "atoms {n_atoms}");
    let _ = writeln!(out, "count {}", codes.len());
    for code in codes {
        let _ = write!(
            out,
            "{} {} {} {}",
            code.lambda, code.objective, code.kkt_residual, code.sweeps
        );
        for c in &code.coefficients {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
    }
    out
}

pub fn codes_from_text(text: &str) -> Result<(Vec<SparseCode>, usize)> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, CODES_MAGIC)?;
    let n_atoms: usize = parse_one(&lines.keyed("atoms")?, "atoms")?;
    let count: usize = parse_one(&lines.keyed("count")?, "count")?;
    let mut codes = Vec::with_capacity(count);
    for index in 0..count {
        let line = lines.next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 + n_atoms {
            return Err(bad(format!(
                "code {index}: expected {} fields, found {}",
                4 + n_atoms,
                fields.len()
            )));
        }
        let what = format!("code {index}");
        codes.push(SparseCode {
            lambda: parse_f64(fields[0], &what)?,
            objective: parse_f64(fields[1], &what)?,
            kkt_residual: parse_f64(fields[2], &what)?,
            sweeps: parse_one(&[fields[3]], &what)?,
            coefficients: fields[4..]
                .iter()
                .map(|f| parse_f64(f, &what))
                .collect::<Result<_>>()?,
        });
    }
    if !lines.peek_done() {
        return Err(bad(format!("trailing content after {count} codes")));
    }
    Ok((codes, n_atoms))
}

pub fn write_codes(path: impl AsRef<Path>, codes: &[SparseCode], n_atoms: usize) -> Result<()> {
    write_file(path.as_ref(), &codes_to_text(codes, n_atoms))
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<(Vec<SparseCode>, usize)> {
    codes_from_text(&read_file(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Learning traces

/// Plot-ready two-column series: `iteration energy` per line, preceded by
/// the stop reason (`completed` for a full run, `stalled` for an early
/// stop on a flat objective).
pub fn trace_to_text(energies: &[f64], reason: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "count {}", energies.len());
    let _ = writeln!(out, "reason {reason}");
    for (i, e) in energies.iter().enumerate() {
        let _ = writeln!(out, "{i} {e}");
    }
    out
}

pub fn trace_from_text(text: &str) -> Result<(Vec<f64>, String)> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, TRACE_MAGIC)?;
    let count: usize = parse_one(&lines.keyed("count")?, "count")?;
    let reason = parse_one::<String>(&lines.keyed("reason")?, "reason")?;
    let mut energies = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(bad(format!("trace row {i}: expected 2 columns")));
        }
        let index: usize = parse_one(&[fields[0]], "trace iteration")?;
        if index != i {
            return Err(bad(format!("trace row {i}: index column reads {index}")));
        }
        energies.push(parse_f64(fields[1], "trace energy")?);
    }
    if !lines.peek_done() {
        return Err(bad(format!("trailing content after {count} trace rows")));
    }
    Ok((energies, reason))
}

pub fn write_trace(path: impl AsRef<Path>, energies: &[f64], reason: &str) -> Result<()> {
    write_file(path.as_ref(), &trace_to_text(energies, reason))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<(Vec<f64>, String)> {
    trace_from_text(&read_file(path.as_ref())?)
}

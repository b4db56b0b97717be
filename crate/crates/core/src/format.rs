//! Plain-text problem files.
//!
//! ```text
//! # comments and blank lines are ignored
//! problem 2 3
//! A
//! 1 0 1
//! 0 1 1
//! b
//! 1 2
//! objective composite nonneg
//! Q
//! 2 0 0
//! 0 2 0
//! 0 0 2
//! q
//! 0 0 -1
//! constant 0
//! ```
//!
//! The objective line is `objective prox KIND` or `objective composite KIND`, where
//! KIND is `zero`, `l1`, `elastic_net TAU`, `ridge TAU` or `nonneg`. Composite
//! objectives are followed by the `Q`, `q` and `constant` blocks.
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse_problem(&write_problem(p)) == p` exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{LinearConstraint, Objective, ProblemSpec, Quadratic};
use crate::prox::SeparableProx;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next meaningful line, as (1-based line number, tokens).
    fn next(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            self.last = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = content.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok((i + 1, toks));
            }
        }
        Err(parse_err(self.last + 1, "unexpected end of file"))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<usize> {
        let (line, toks) = self.next()?;
        if toks.len() != 1 || toks[0] != kw {
            return Err(parse_err(line, format!("expected '{kw}', found '{}'", toks.join(" "))));
        }
        Ok(line)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let (line, toks) = self.next()?;
        if toks.len() != count {
            return Err(parse_err(line, format!("expected {count} numbers, found {}", toks.len())));
        }
        toks.iter().map(|t| float(line, t)).collect()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn float(line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| parse_err(line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("'{tok}' is not finite")));
    }
    Ok(v)
}

fn count(line: usize, tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| parse_err(line, format!("'{tok}' is not a dimension")))
}

fn matrix(lines: &mut Lines, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend(lines.floats(cols)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn prox_kind(line: usize, toks: &[&str]) -> Result<SeparableProx> {
    let with_tau = |name: &str| -> Result<f64> {
        match toks {
            [_, t] => {
                let tau = float(line, t)?;
                if tau < 0.0 {
                    return Err(parse_err(line, format!("{name} parameter must be nonnegative")));
                }
                Ok(tau)
            }
            _ => Err(parse_err(line, format!("{name} takes exactly one parameter"))),
        }
    };
    let no_arg = |kind: SeparableProx| -> Result<SeparableProx> {
        if toks.len() == 1 {
            Ok(kind)
        } else {
            Err(parse_err(line, format!("'{}' takes no parameter", toks[0])))
        }
    };
    match toks.first().copied() {
        Some("zero") => no_arg(SeparableProx::Zero),
        Some("l1") => no_arg(SeparableProx::L1),
        Some("nonneg") => no_arg(SeparableProx::NonnegIndicator),
        Some("elastic_net") => Ok(SeparableProx::ElasticNet { tau: with_tau("elastic_net")? }),
        Some("ridge") => Ok(SeparableProx::Ridge { tau: with_tau("ridge")? }),
        Some(other) => Err(parse_err(line, format!("unknown prox kind '{other}'"))),
        None => Err(parse_err(line, "missing prox kind")),
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let mut lines = Lines::new(text);
    let (line, toks) = lines.next()?;
    let (m, n) = match toks.as_slice() {
        ["problem", m, n] => (count(line, m)?, count(line, n)?),
        _ => return Err(parse_err(line, "expected 'problem M N'")),
    };
    if m == 0 || n == 0 {
        return Err(parse_err(line, "dimensions must be positive"));
    }
    lines.expect_keyword("A")?;
    let a = matrix(&mut lines, m, n)?;
    lines.expect_keyword("b")?;
    let b = DVector::from_vec(lines.floats(m)?);
    let constraint = LinearConstraint::new(a, b).map_err(|e| parse_err(line, e.to_string()))?;

    let (line, toks) = lines.next()?;
    let objective = match toks.as_slice() {
        ["objective", "prox", rest @ ..] => Objective::Prox(prox_kind(line, rest)?),
        ["objective", "composite", rest @ ..] => {
            let nonsmooth = prox_kind(line, rest)?;
            let q_line = lines.expect_keyword("Q")?;
            let q_mat = matrix(&mut lines, n, n)?;
            lines.expect_keyword("q")?;
            let q_vec = DVector::from_vec(lines.floats(n)?);
            let (c_line, toks) = lines.next()?;
            let constant = match toks.as_slice() {
                ["constant", c] => float(c_line, c)?,
                _ => return Err(parse_err(c_line, "expected 'constant C'")),
            };
            let smooth = Quadratic::new(q_mat, q_vec, constant).map_err(|e| parse_err(q_line, e.to_string()))?;
            Objective::Composite { nonsmooth, smooth }
        }
        _ => return Err(parse_err(line, "expected 'objective prox KIND' or 'objective composite KIND'")),
    };
    if let Ok((extra, _)) = lines.next() {
        return Err(parse_err(extra, "trailing content after problem"));
    }
    ProblemSpec::new(constraint, objective).map_err(|e| parse_err(line, e.to_string()))
}

pub fn read_problem(path: &Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_problem(&text)
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn kind_text(kind: &SeparableProx) -> String {
    match kind {
        SeparableProx::Zero => "zero".into(),
        SeparableProx::L1 => "l1".into(),
        SeparableProx::NonnegIndicator => "nonneg".into(),
        SeparableProx::ElasticNet { tau } => format!("elastic_net {tau:?}"),
        SeparableProx::Ridge { tau } => format!("ridge {tau:?}"),
    }
}

pub fn write_problem(p: &ProblemSpec) -> String {
    let c = p.constraint();
    let mut out = String::new();
    let _ = writeln!(out, "problem {} {}", c.rows(), c.cols());
    out.push_str("A\n");
    for row in c.a().row_iter() {
        push_row(&mut out, row.iter().copied());
    }
    out.push_str("b\n");
    push_row(&mut out, c.b().iter().copied());
    match p.objective() {
        Objective::Prox(kind) => {
            let _ = writeln!(out, "objective prox {}", kind_text(kind));
        }
        Objective::Composite { nonsmooth, smooth } => {
            let _ = writeln!(out, "objective composite {}", kind_text(nonsmooth));
            out.push_str("Q\n");
            for row in smooth.q_mat().row_iter() {
                push_row(&mut out, row.iter().copied());
            }
            out.push_str("q\n");
            push_row(&mut out, smooth.q_vec().iter().copied());
            let _ = writeln!(out, "constant {:?}", smooth.constant());
        }
    }
    out
}

/// One value per line, round-trip precision.
pub fn write_vector(v: &DVector<f64>) -> String {
    let mut out = String::new();
    for x in v.iter() {
        let _ = writeln!(out, "{x:?}");
    }
    out
}

pub fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if !t.is_empty() {
            values.push(float(i + 1, t)?);
        }
    }
    Ok(DVector::from_vec(values))
}

//! Plain-text interchange format for QPs (coordinate lists, one entry per line).

use std::fmt::Write as _;
use std::path::Path;

use super::csc::CscMatrix;
use super::QpProblem;
use crate::error::{Error, Result};

const HEADER: &str = "%%gpmpc-qp coordinate real";

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:e}")
    }
}

fn write_matrix(out: &mut String, name: &str, m: &CscMatrix) {
    let _ = writeln!(out, "{name} {} {} {}", m.nrows, m.ncols, m.nnz());
    for (r, c, v) in m.iter() {
        let _ = writeln!(out, "{r} {c} {}", fmt_f(v));
    }
}

fn write_vec(out: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(out, "{name} {}", v.len());
    for x in v {
        let _ = writeln!(out, "{}", fmt_f(*x));
    }
}

/// Serializes a problem; indices are zero-based.
pub fn dump_string(p: &QpProblem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    write_matrix(&mut s, "P", &p.p);
    write_vec(&mut s, "q", &p.q);
    write_matrix(&mut s, "A", &p.a);
    write_vec(&mut s, "l", &p.l);
    write_vec(&mut s, "u", &p.u);
    s
}

pub fn write_dump(p: &QpProblem, path: &Path) -> Result<()> {
    std::fs::write(path, dump_string(p))?;
    Ok(())
}

fn parse_f(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Document(format!("bad number {s:?}"))),
    }
}

struct Lines<'a>(std::iter::Peekable<std::str::Lines<'a>>);

impl Lines<'_> {
    fn next(&mut self) -> Result<Vec<&str>> {
        self.0.next().map(|l| l.split_whitespace().collect()).ok_or_else(|| Error::Document("unexpected end of QP dump".into()))
    }

    fn header(&mut self, name: &str, fields: usize) -> Result<Vec<usize>> {
        let h = self.next()?;
        if h.first() != Some(&name) || h.len() != fields + 1 {
            return Err(Error::Document(format!("expected section {name}")));
        }
        h[1..].iter().map(|v| v.parse().map_err(|_| Error::Document(format!("bad size in {name}")))).collect()
    }

    fn matrix(&mut self, name: &str) -> Result<CscMatrix> {
        let h = self.header(name, 3)?;
        let mut t = Vec::with_capacity(h[2]);
        for _ in 0..h[2] {
            let l = self.next()?;
            if l.len() != 3 {
                return Err(Error::Document(format!("bad entry in {name}")));
            }
            let r = l[0].parse().map_err(|_| Error::Document("bad row index".into()))?;
            let c = l[1].parse().map_err(|_| Error::Document("bad column index".into()))?;
            if r >= h[0] || c >= h[1] {
                return Err(Error::Document(format!("entry out of range in {name}")));
            }
            t.push((r, c, parse_f(l[2])?));
        }
        Ok(CscMatrix::from_triplets(h[0], h[1], &t))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        let h = self.header(name, 1)?;
        (0..h[0]).map(|_| parse_f(self.next()?.first().copied().unwrap_or(""))).collect()
    }
}

pub fn parse_dump(text: &str) -> Result<QpProblem> {
    let mut lines = Lines(text.lines().peekable());
    if lines.0.next() != Some(HEADER) {
        return Err(Error::Document("missing QP dump header".into()));
    }
    let p = lines.matrix("P")?;
    let q = lines.vector("q")?;
    let a = lines.matrix("A")?;
    let l = lines.vector("l")?;
    let u = lines.vector("u")?;
    Ok(QpProblem { p, q, a, l, u })
}

pub fn read_dump(path: &Path) -> Result<QpProblem> {
    parse_dump(&std::fs::read_to_string(path)?)
}

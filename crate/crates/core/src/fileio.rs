//! Plain-text instance files.
//!
//! ```text
//! cop <m> <n> <d> <e> <delta>
//! var <idx> <domain values...>
//! ctr <idx> <scope...>
//! tup <v1> ... <vm> <weight>
//! ```
//!
//! Tuples are written in sorted order so identical instances serialize to
//! identical bytes. Weights use shortest-float formatting, which prints exact
//! integers whenever delta is integral.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::instance::{ConstraintFunction, CopInstance, Value};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

pub fn save_instance(instance: &CopInstance, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "cop {} {} {} {} {}",
        instance.arity(),
        instance.num_variables(),
        instance.max_domain_size(),
        instance.num_constraints(),
        instance.delta()
    )?;
    for (i, dom) in instance.domains().iter().enumerate() {
        write!(w, "var {i}")?;
        for v in dom {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    for (j, ctr) in instance.constraints().iter().enumerate() {
        write!(w, "ctr {j}")?;
        for v in ctr.scope() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
        for (tuple, weight) in ctr.sorted_rows() {
            write!(w, "tup")?;
            for v in tuple {
                write!(w, " {v}")?;
            }
            writeln!(w, " {weight}")?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Lines<R> {
    reader: R,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<(usize, Vec<String>)>, FormatError> {
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.reader.read_line(&mut buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let fields: Vec<String> = buf.split_whitespace().map(str::to_owned).collect();
            if !fields.is_empty() {
                return Ok(Some((self.line, fields)));
            }
        }
    }

    fn expect(&mut self, what: &str) -> Result<(usize, Vec<String>), FormatError> {
        self.next()?
            .ok_or_else(|| parse_err(self.line + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn field<T: std::str::FromStr>(fields: &[String], idx: usize, line: usize) -> Result<T, FormatError> {
    fields
        .get(idx)
        .ok_or_else(|| parse_err(line, format!("missing field {idx}")))?
        .parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse field {idx} ({:?})", fields[idx])))
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<CopInstance, FormatError> {
    let mut lines = Lines { reader: BufReader::new(File::open(path)?), line: 0 };

    let (hl, header) = lines.expect("header")?;
    if header[0] != "cop" || header.len() != 6 {
        return Err(parse_err(hl, "header must be `cop <m> <n> <d> <e> <delta>`"));
    }
    let arity: usize = field(&header, 1, hl)?;
    let n: usize = field(&header, 2, hl)?;
    let d: usize = field(&header, 3, hl)?;
    let e: usize = field(&header, 4, hl)?;
    let delta: f64 = field(&header, 5, hl)?;

    let mut domains: Vec<Vec<Value>> = Vec::with_capacity(n);
    for i in 0..n {
        let (l, fields) = lines.expect("`var` line")?;
        if fields[0] != "var" {
            return Err(parse_err(l, format!("expected `var`, found {:?}", fields[0])));
        }
        let idx: usize = field(&fields, 1, l)?;
        if idx != i {
            return Err(parse_err(l, format!("variable {i} expected, found {idx}")));
        }
        if fields.len() < 3 {
            return Err(parse_err(l, "empty domain"));
        }
        let dom = (2..fields.len())
            .map(|k| field::<Value>(&fields, k, l))
            .collect::<Result<Vec<_>, _>>()?;
        domains.push(dom);
    }

    let mut constraints: Vec<ConstraintFunction> = Vec::with_capacity(e);
    let mut pending: Option<(usize, Vec<usize>, Vec<(Vec<Value>, f64)>, usize)> = None;
    loop {
        let entry = lines.next()?;
        match entry {
            Some((l, fields)) if fields[0] == "ctr" => {
                if let Some((cl, scope, rows, _)) = pending.take() {
                    constraints.push(
                        ConstraintFunction::new(scope, rows)
                            .map_err(|err| parse_err(cl, err.to_string()))?,
                    );
                }
                let idx: usize = field(&fields, 1, l)?;
                if idx != constraints.len() {
                    return Err(parse_err(l, format!("constraint {} expected, found {idx}", constraints.len())));
                }
                let scope = (2..fields.len())
                    .map(|k| field::<usize>(&fields, k, l))
                    .collect::<Result<Vec<_>, _>>()?;
                if scope.is_empty() {
                    return Err(parse_err(l, "empty scope"));
                }
                pending = Some((l, scope, Vec::new(), l));
            }
            Some((l, fields)) if fields[0] == "tup" => {
                let Some((_, scope, rows, _)) = pending.as_mut() else {
                    return Err(parse_err(l, "`tup` before any `ctr`"));
                };
                if fields.len() != scope.len() + 2 {
                    return Err(parse_err(
                        l,
                        format!("expected {} values and a weight", scope.len()),
                    ));
                }
                let tuple = (1..=scope.len())
                    .map(|k| field::<Value>(&fields, k, l))
                    .collect::<Result<Vec<_>, _>>()?;
                let weight: f64 = field(&fields, scope.len() + 1, l)?;
                rows.push((tuple, weight));
            }
            Some((l, fields)) => {
                return Err(parse_err(l, format!("unexpected record {:?}", fields[0])));
            }
            None => break,
        }
    }
    if let Some((cl, scope, rows, _)) = pending.take() {
        constraints.push(
            ConstraintFunction::new(scope, rows).map_err(|err| parse_err(cl, err.to_string()))?,
        );
    }
    if constraints.len() != e {
        return Err(parse_err(
            lines.line,
            format!("header promised {e} constraints, file has {}", constraints.len()),
        ));
    }

    let instance = CopInstance::new(domains, constraints, arity, delta)
        .map_err(|err| parse_err(lines.line, err.to_string()))?;
    if instance.max_domain_size() != d {
        return Err(parse_err(
            lines.line,
            format!("header domain size {d} does not match {}", instance.max_domain_size()),
        ));
    }
    Ok(instance)
}

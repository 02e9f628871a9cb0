//! Whitespace-separated coordinate files: a header line `d`, a line with the
//! extents `n_1 ... n_d`, then one `i_1 ... i_d value` record per entry with
//! 1-based indices. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use trcomp::{MultiIndex, Shape, SparseSample};

use crate::error::{CliError, Result};

fn coo_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Coo {
        line,
        msg: msg.into(),
    }
}

pub fn parse_coo(path: &Path) -> Result<SparseSample> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_coo_str(&text)
}

pub fn parse_coo_str(text: &str) -> Result<SparseSample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, head) = lines.next().ok_or_else(|| coo_err(1, "missing order line"))?;
    let d: usize = head
        .parse()
        .map_err(|_| coo_err(ln, format!("expected the tensor order, got '{head}'")))?;
    if d == 0 {
        return Err(coo_err(ln, "tensor order must be positive"));
    }
    let (ln, ext) = lines
        .next()
        .ok_or_else(|| coo_err(ln + 1, "missing extents line"))?;
    let dims = ext
        .split_whitespace()
        .map(|t| t.parse::<usize>().ok().filter(|&n| n > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| coo_err(ln, format!("bad extents '{ext}'")))?;
    if dims.len() != d {
        return Err(coo_err(
            ln,
            format!("expected {d} extents, got {}", dims.len()),
        ));
    }
    let shape = Shape::new(dims.clone()).map_err(|e| coo_err(ln, e.to_string()))?;

    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for (ln, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != d + 1 {
            return Err(coo_err(
                ln,
                format!("expected {} fields, got {}", d + 1, toks.len()),
            ));
        }
        let mut coords = Vec::with_capacity(d);
        for (k, t) in toks[..d].iter().enumerate() {
            let i: usize = t
                .parse()
                .map_err(|_| coo_err(ln, format!("bad index '{t}'")))?;
            if i == 0 || i > dims[k] {
                return Err(coo_err(
                    ln,
                    format!("index {i} out of range 1..={} in mode {}", dims[k], k + 1),
                ));
            }
            coords.push(i);
        }
        let v: f64 = toks[d]
            .parse()
            .map_err(|_| coo_err(ln, format!("bad value '{}'", toks[d])))?;
        if !v.is_finite() {
            return Err(coo_err(ln, format!("non-finite value '{}'", toks[d])));
        }
        if let Some(&first) = seen.get(&coords) {
            return Err(CliError::DuplicateEntry {
                index: coords,
                first,
                second: ln,
            });
        }
        seen.insert(coords.clone(), ln);
        idx.push(MultiIndex::new(coords));
        vals.push(v);
    }
    Ok(SparseSample::new(shape, &idx, vals)?)
}

pub fn format_coo(data: &SparseSample) -> String {
    let shape = data.shape();
    let mut out = String::new();
    let _ = writeln!(out, "{}", shape.order());
    let dims: Vec<String> = shape.dims().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "{}", dims.join(" "));
    for s in 0..data.len() {
        for i in data.multi_index(s).coords() {
            let _ = write!(out, "{i} ");
        }
        let _ = writeln!(out, "{}", data.values()[s]);
    }
    out
}

pub fn write_coo(path: &Path, data: &SparseSample) -> Result<()> {
    fs::write(path, format_coo(data)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let s = parse_coo_str("3\n2 2 2\n1 1 1 5.0\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.values(), &[5.0]);
    }

    #[test]
    fn comments_and_blank_lines() {
        let s = parse_coo_str("# ratings\n3\n\n3 4 1\n# first\n3 4 1 -1.5\n1 1 1 2\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.multi_index(0).coords(), &[1, 1, 1]);
    }

    #[test]
    fn duplicate_names_both_lines() {
        let e = parse_coo_str("3\n2 2 1\n1 2 1 1.0\n2 2 1 1.0\n1 2 1 3.0\n").unwrap_err();
        match e {
            CliError::DuplicateEntry { first, second, .. } => assert_eq!((first, second), (3, 5)),
            other => panic!("{other}"),
        }
        assert!(e_text("3\n2 2 1\n1 2 1 1.0\n1 2 1 3.0\n").contains("line 4"));
    }

    fn e_text(s: &str) -> String {
        parse_coo_str(s).unwrap_err().to_string()
    }

    #[test]
    fn malformed_inputs_report_lines() {
        assert!(e_text("").contains("line 1"));
        assert!(e_text("x\n").contains("line 1"));
        assert!(e_text("3\n2 2\n").contains("line 2"));
        assert!(e_text("3\n2 2 1\n3 1 1 1.0\n").contains("line 3"));
        assert!(e_text("3\n2 2 1\n0 1 1 1.0\n").contains("line 3"));
        assert!(e_text("3\n2 2 1\n1 1\n").contains("line 3"));
        assert!(e_text("3\n2 2 1\n1 1 1 abc\n").contains("line 3"));
        assert!(e_text("3\n2 2 1\n1 1 1 NaN\n").contains("line 3"));
        assert!(e_text("3\n2 0 1\n").contains("line 2"));
        assert!(e_text("2\n2 2\n").contains("line 2"));
    }
}

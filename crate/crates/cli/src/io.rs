//! Text formats: complex matrices, eigenvalue lists and CSV tables.

use std::fmt::Write as _;

use gmusic::nalgebra::DMatrix;
use gmusic::C64;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn parse_error(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

/// Parse `<re>(+|-)<im>i`.
pub fn parse_complex(entry: &str) -> Option<C64> {
    let body = entry.trim().strip_suffix('i')?;
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re = body[..split].parse().ok()?;
    let im = body[split..].parse().ok()?;
    Some(C64::new(re, im))
}

pub fn format_complex(z: C64) -> String {
    format!("{:.16e}{:+.16e}i", z.re, z.im)
}

/// Matrix file: a `# complex M N` header, then `M` lines of `N`
/// comma-separated entries.
pub fn parse_matrix(text: &str) -> Result<DMatrix<C64>, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_error(1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match fields.as_slice() {
        ["#", "complex", m, n] => match (m.parse::<usize>(), n.parse::<usize>()) {
            (Ok(m), Ok(n)) if m > 0 && n > 0 => (m, n),
            _ => return Err(parse_error(hline, "dimensions must be positive integers")),
        },
        _ => return Err(parse_error(hline, "expected header `# complex M N`")),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line, content) in lines {
        if content.starts_with('#') {
            continue;
        }
        seen += 1;
        if seen > rows {
            return Err(parse_error(line, format!("more than {rows} rows")));
        }
        let entries: Vec<&str> = content.split(',').collect();
        if entries.len() != cols {
            return Err(parse_error(
                line,
                format!("expected {cols} entries, found {}", entries.len()),
            ));
        }
        for e in entries {
            let z = parse_complex(e)
                .ok_or_else(|| parse_error(line, format!("malformed complex entry `{}`", e.trim())))?;
            data.push(z);
        }
    }
    if seen != rows {
        return Err(parse_error(
            text.lines().count().max(1),
            format!("expected {rows} rows, found {seen}"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_matrix(m: &DMatrix<C64>) -> String {
    let mut out = format!("# complex {} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let entries: Vec<String> = row.iter().map(|&z| format_complex(z)).collect();
        out.push_str(&entries.join(","));
        out.push('\n');
    }
    out
}

/// One real value per line; blank lines and `#` comments are skipped.
pub fn parse_eigenvalues(text: &str) -> Result<Vec<f64>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let v: f64 = content
            .parse()
            .map_err(|_| parse_error(i + 1, format!("not a number: `{content}`")))?;
        if !v.is_finite() {
            return Err(parse_error(i + 1, format!("not finite: `{content}`")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(parse_error(1, "no eigenvalues"));
    }
    Ok(out)
}

/// A CSV table of floats printed with 17 significant digits.
pub fn float_table(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

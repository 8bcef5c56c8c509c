//! Instance input (one-line CSV or ASCII PGM) and PGM output.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use projexp_core::Instance;

/// Reads an instance from `path`. Files starting with the `P2` magic are
/// parsed as ASCII PGM and normalized by `maxval`; anything else must be a
/// single line of comma-separated reals.
pub fn read_instance(path: &Path, background: f64) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instance(&text, background).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_instance(text: &str, background: f64) -> Result<Instance> {
    if text.trim_start().starts_with("P2") {
        let (rows, cols, values) = parse_pgm(text)?;
        Ok(Instance::new(values, background, Some((rows, cols)))?)
    } else {
        Ok(Instance::new(parse_csv_line(text)?, background, None)?)
    }
}

fn parse_csv_line(text: &str) -> Result<Vec<f64>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 1 {
        bail!("expected exactly one non-empty CSV line, found {}", lines.len());
    }
    lines[0]
        .split(',')
        .enumerate()
        .map(|(j, v)| v.trim().parse::<f64>().with_context(|| format!("field {j}: {v:?} is not a number")))
        .collect()
}

/// Returns `(rows, cols, values in [0, 1])`.
pub fn parse_pgm(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        bail!("not an ASCII PGM (missing P2 magic)");
    }
    let mut header = |name: &str| -> Result<usize> {
        let tok = tokens.next().with_context(|| format!("missing {name}"))?;
        tok.parse::<usize>().with_context(|| format!("{name} {tok:?} is not an integer"))
    };
    let cols = header("width")?;
    let rows = header("height")?;
    let maxval = header("maxval")?;
    if rows == 0 || cols == 0 || maxval == 0 {
        bail!("PGM dimensions and maxval must be positive");
    }
    let values = tokens
        .map(|t| {
            let v: usize = t.parse().with_context(|| format!("pixel {t:?} is not an integer"))?;
            if v > maxval {
                bail!("pixel value {v} exceeds maxval {maxval}");
            }
            Ok(v as f64 / maxval as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != rows * cols {
        bail!("expected {} pixels, found {}", rows * cols, values.len());
    }
    Ok((rows, cols, values))
}

/// Serializes 8-bit pixels as a P2 PGM with maxval 255, one image row per line.
pub fn format_pgm(rows: usize, cols: usize, pixels: &[u8]) -> String {
    assert_eq!(pixels.len(), rows * cols, "pixel buffer does not match {rows}x{cols}");
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for row in pixels.chunks(cols) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

//! Power-curve tables and grayscale coefficient maps.
//!
//! Signed maps (mean, single posterior draw) send `[-c, c]` linearly to
//! `[0, 255]` with `c` the largest absolute value shown, so zero lands on
//! 127. Variance maps send `[0, v_max]` to `[0, 255]`. Pixel values are
//! floored.

use std::str::FromStr;

use anyhow::{bail, Result};

use crate::artifact::ExplanationArtifact;
use crate::instance_io::format_pgm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Mean,
    Variance,
    Sample(usize),
}

impl FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(MapKind::Mean),
            "variance" => Ok(MapKind::Variance),
            _ => s
                .strip_prefix("sample:")
                .and_then(|l| l.parse().ok())
                .map(MapKind::Sample)
                .ok_or_else(|| format!("expected mean, variance or sample:<l>, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPoint {
    Selected,
    LambdaIndex(usize),
}

impl FromStr for GridPoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "selected" {
            return Ok(GridPoint::Selected);
        }
        s.strip_prefix("lambda-index:")
            .and_then(|k| k.parse().ok())
            .map(GridPoint::LambdaIndex)
            .ok_or_else(|| format!("expected selected or lambda-index:<k>, got {s:?}"))
    }
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `1e-5 ≤ |x| < 1e9`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One `lambda<TAB>mean_complexity<TAB>relative_power` row per grid point.
pub fn power_curve_tsv(artifact: &ExplanationArtifact) -> String {
    let mut out = String::new();
    for p in &artifact.curve.points {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            format_sig9(p.lambda),
            format_sig9(p.mean_complexity),
            format_sig9(p.relative_power)
        ));
    }
    out
}

fn resolve_index(artifact: &ExplanationArtifact, at: GridPoint) -> Result<usize> {
    let k = match at {
        GridPoint::Selected => match artifact.curve.selected_index {
            Some(k) => k,
            None => bail!("artifact has no selected grid point"),
        },
        GridPoint::LambdaIndex(k) => k,
    };
    if k >= artifact.num_lambdas() {
        bail!("lambda index {k} out of range (grid has {} points)", artifact.num_lambdas());
    }
    Ok(k)
}

pub fn signed_pixels(values: &[f64]) -> Vec<u8> {
    let c = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if c == 0.0 {
        return vec![127; values.len()];
    }
    values.iter().map(|&v| ((v + c) / (2.0 * c) * 255.0).floor().clamp(0.0, 255.0) as u8).collect()
}

pub fn variance_pixels(values: &[f64]) -> Vec<u8> {
    let vmax = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if vmax == 0.0 {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| (v / vmax * 255.0).floor().clamp(0.0, 255.0) as u8).collect()
}

/// The coefficient map `what` at grid point `at`, as a P2 PGM.
pub fn render_map(artifact: &ExplanationArtifact, what: MapKind, at: GridPoint) -> Result<String> {
    let Some((rows, cols)) = artifact.instance.shape else {
        bail!("artifact has no image shape; rendering needs a PGM instance");
    };
    let k = resolve_index(artifact, at)?;
    let pixels = match what {
        MapKind::Mean => signed_pixels(&artifact.mean_coefficients[k]),
        MapKind::Variance => variance_pixels(&artifact.var_coefficients[k]),
        MapKind::Sample(l) => {
            let Some(maps) = &artifact.per_sample_coefficients else {
                bail!("artifact has no per-sample maps (re-run explain with --full)");
            };
            if l >= maps.len() {
                bail!("sample index {l} out of range ({} posterior samples)", maps.len());
            }
            signed_pixels(&maps[l][k])
        }
    };
    Ok(format_pgm(rows, cols, &pixels))
}

/// Grayscale rendering of the instance itself (values assumed in `[0, 1]`).
pub fn render_instance(features: &[f64], rows: usize, cols: usize) -> String {
    let pixels: Vec<u8> = features.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    format_pgm(rows, cols, &pixels)
}

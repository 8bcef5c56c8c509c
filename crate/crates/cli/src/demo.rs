//! Synthetic two-class digit demo.
//!
//! Images are 8×8 binary "3" and "8" glyphs with every pixel flipped
//! independently with probability [`FLIP_PROB`]. Class 1 is the eight. A
//! Laplace-approximated Bayesian logistic regression is fit on the training
//! split, then one correctly and one incorrectly classified test image are
//! explained with the Bernoulli projection over binary pixel presence.
//!
//! Generator, per image (seeded ChaCha8 stream `derive_seed(seed, "demo-data")`):
//! draw the label `u < 0.5 → 3, else 8` from a uniform `u`, then one uniform
//! per pixel in row-major order, flipping the template pixel when below
//! `FLIP_PROB`. The first [`NUM_TRAIN`] images form the training split, the
//! next [`NUM_TEST`] the test split.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use projexp_core::models::{fit_bayes_logistic, BuiltinModel, BuiltinSource};
use projexp_core::rng::{derive_seed, rng_from_seed};
use projexp_core::Instance;
use rand::Rng;
use serde::Serialize;

use crate::explain::{explain, ExplainOptions};
use crate::render::{power_curve_tsv, render_instance, render_map, GridPoint, MapKind};

pub const SIDE: usize = 8;
pub const FLIP_PROB: f64 = 0.15;
pub const NUM_TRAIN: usize = 300;
pub const NUM_TEST: usize = 200;
pub const PRIOR_PRECISION: f64 = 1.0;
/// Per-sample maps rendered for each explained instance.
pub const NUM_SAMPLE_MAPS: usize = 8;

const THREE: [&str; SIDE] = [
    "..####..", //
    ".....#..", //
    ".....#..", //
    "..####..", //
    ".....#..", //
    ".....#..", //
    "..####..", //
    "........",
];

const EIGHT: [&str; SIDE] = [
    "..####..", //
    "..#..#..", //
    "..#..#..", //
    "..####..", //
    "..#..#..", //
    "..#..#..", //
    "..####..", //
    "........",
];

pub fn template(label: u8) -> Vec<f64> {
    let rows = if label == 1 { &EIGHT } else { &THREE };
    rows.iter().flat_map(|r| r.bytes().map(|b| f64::from(u8::from(b == b'#')))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

pub fn generate(seed: u64, count: usize) -> Dataset {
    let mut rng = rng_from_seed(derive_seed(seed, "demo-data"));
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = u8::from(rng.random::<f64>() >= 0.5);
        let image = template(label)
            .into_iter()
            .map(|v| if rng.random::<f64>() < FLIP_PROB { 1.0 - v } else { v })
            .collect();
        images.push(image);
        labels.push(label);
    }
    Dataset { images, labels }
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub seed: u64,
    pub num_posterior_samples: usize,
    pub explain: ExplainOptions,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            num_posterior_samples: 50,
            explain: ExplainOptions { full: true, ..ExplainOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainedCase {
    pub name: String,
    pub test_index: usize,
    pub label: u8,
    pub map_probability: f64,
    pub selected_index: usize,
    pub selected_power: f64,
    pub selected_complexity: f64,
    pub densest_power: f64,
    pub target_attained: bool,
    pub active_pixels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub num_train: usize,
    pub num_test: usize,
    pub test_accuracy: f64,
    pub cases: Vec<ExplainedCase>,
    /// Present when the test split has no misclassified image at this seed.
    pub note: Option<String>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Runs the demo and writes everything under `out_dir`.
pub fn run_demo(out_dir: &Path, opts: &DemoOptions) -> Result<DemoSummary> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let data = generate(opts.seed, NUM_TRAIN + NUM_TEST);
    let (train_x, test_x) = data.images.split_at(NUM_TRAIN);
    let (train_y, test_y) = data.labels.split_at(NUM_TRAIN);
    let y: Vec<f64> = train_y.iter().map(|&v| f64::from(v)).collect();
    let posterior = fit_bayes_logistic(train_x, &y, PRIOR_PRECISION)?;
    let model = BuiltinModel::Logistic(posterior.clone());
    write(&out_dir.join("model.json"), &(serde_json::to_string(&model.to_spec())? + "\n"))?;

    let predicted: Vec<u8> = test_x.iter().map(|x| u8::from(posterior.map_probability(x) >= 0.5)).collect();
    let correct = predicted.iter().zip(test_y).filter(|(p, y)| p == y).count();
    let test_accuracy = correct as f64 / NUM_TEST as f64;

    let first_correct = (0..NUM_TEST).find(|&i| predicted[i] == test_y[i] && test_y[i] == 1);
    let first_wrong = (0..NUM_TEST).find(|&i| predicted[i] != test_y[i]);

    let mut cases = Vec::new();
    let mut note = None;
    let mut targets: Vec<(&str, usize)> = Vec::new();
    if let Some(i) = first_correct {
        targets.push(("correct", i));
    }
    match first_wrong {
        Some(i) => targets.push(("misclassified", i)),
        None => note = Some(format!("no misclassified test image at seed {}", opts.seed)),
    }

    let posterior_seed = derive_seed(opts.seed, "posterior");
    for (name, i) in targets {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir)?;
        let instance = Instance::new(test_x[i].clone(), 0.0, Some((SIDE, SIDE)))?;
        write(&dir.join("instance.pgm"), &render_instance(instance.features(), SIDE, SIDE))?;

        let mut source =
            BuiltinSource { model: model.clone(), num_samples: opts.num_posterior_samples, seed: posterior_seed };
        let explain_opts = ExplainOptions { seed: opts.seed, full: true, ..opts.explain.clone() };
        let result = explain(&instance, &mut source, "builtin:model.json", Some(posterior_seed), &explain_opts)?;
        let artifact = &result.artifact;
        artifact.save(&dir.join("artifact.json"))?;
        write(&dir.join("power_curve.tsv"), &power_curve_tsv(artifact))?;
        write(&dir.join("mean.pgm"), &render_map(artifact, MapKind::Mean, GridPoint::Selected)?)?;
        write(&dir.join("variance.pgm"), &render_map(artifact, MapKind::Variance, GridPoint::Selected)?)?;
        for l in 0..NUM_SAMPLE_MAPS.min(opts.num_posterior_samples) {
            write(
                &dir.join(format!("sample_{l}.pgm")),
                &render_map(artifact, MapKind::Sample(l), GridPoint::Selected)?,
            )?;
        }

        let sel = artifact.curve.selected_index.expect("selection is always recorded");
        let points = &artifact.curve.points;
        cases.push(ExplainedCase {
            name: name.to_string(),
            test_index: i,
            label: test_y[i],
            map_probability: posterior.map_probability(&test_x[i]),
            selected_index: sel,
            selected_power: points[sel].relative_power,
            selected_complexity: points[sel].mean_complexity,
            densest_power: points.last().expect("non-empty grid").relative_power,
            target_attained: result.attained,
            active_pixels: artifact.instance.active_positions.len(),
        });
    }

    let summary = DemoSummary { seed: opts.seed, num_train: NUM_TRAIN, num_test: NUM_TEST, test_accuracy, cases, note };
    write(&out_dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}

/// Every file the demo writes, relative to its output directory, sorted.
pub fn list_outputs(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![out_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(out_dir)?.to_path_buf());
            }
        }
    }
    files.sort();
    Ok(files)
}

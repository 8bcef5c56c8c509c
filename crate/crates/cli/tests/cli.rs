use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use projexp_cli::artifact::ExplanationArtifact;
use projexp_cli::render::{power_curve_tsv, render_map, GridPoint, MapKind};
use projexp_core::models::{fit_bayes_linear, BuiltinModel};

const PROJEXP: &str = env!("CARGO_BIN_EXE_projexp");
const ECHO: &str = env!("CARGO_BIN_EXE_projexp-echo-adapter");

fn projexp(args: &[&str]) -> Output {
    Command::new(PROJEXP).args(args).output().expect("run projexp")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 2×3 PGM instance and a Bayesian linear model over its six pixels.
fn linear_fixture(dir: &Path) -> (String, String) {
    let x: Vec<Vec<f64>> = (0..40)
        .map(|i| (0..6).map(|j| f64::from(((i * 7 + j * 3) % 5) as u8) / 4.0).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[3] + 0.5 * r[5] + 0.01 * r[1]).collect();
    let model = BuiltinModel::Linear(fit_bayes_linear(&x, &y, 1.0, 2.0, 1.0).unwrap());
    let model_path = dir.join("linear.json");
    fs::write(&model_path, serde_json::to_string(&model.to_spec()).unwrap()).unwrap();
    let instance_path = dir.join("instance.pgm");
    fs::write(&instance_path, "P2\n3 2\n4\n4 2 3\n1 0 4\n").unwrap();
    (instance_path.to_str().unwrap().to_string(), format!("builtin:{}", model_path.display()))
}

fn explain_linear(dir: &Path, extra: &[&str]) -> (Output, String) {
    let (instance, model) = linear_fixture(dir);
    let out_path = dir.join("artifact.json").to_str().unwrap().to_string();
    let mut args = vec![
        "explain",
        "--instance",
        &instance,
        "--model",
        &model,
        "--representation",
        "identity",
        "--num-perturbations",
        "300",
        "--num-posterior-samples",
        "8",
        "--lambda-min-ratio",
        "1e-6",
        "--out",
        &out_path,
    ];
    args.extend_from_slice(extra);
    (projexp(&args), out_path)
}

#[test]
fn self_projection_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (out, artifact_path) = explain_linear(dir.path(), &["--target-power", "0.99", "--full"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let artifact = ExplanationArtifact::load(Path::new(&artifact_path)).unwrap();
    assert_eq!(artifact.instance.shape, Some((2, 3)));
    assert_eq!(artifact.instance.active_positions, vec![0, 1, 2, 3, 5]);

    let tsv = projexp(&["power-curve", "--artifact", &artifact_path]);
    assert!(tsv.status.success());
    let text = String::from_utf8(tsv.stdout).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.len() == 3));
    assert!(rows.last().unwrap()[2] >= 1.0 - 1e-6);
    for w in rows.windows(2) {
        assert!(w[1][0] < w[0][0]);
        assert!(w[1][2] >= w[0][2] - 1e-6);
    }
    assert_eq!(text, power_curve_tsv(&artifact));
}

#[test]
fn unreachable_target_exits_2_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let (out, artifact_path) = explain_linear(dir.path(), &["--target-power", "1.0", "--num-lambdas", "5", "--lambda-min-ratio", "0.5"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let artifact = ExplanationArtifact::load(Path::new(&artifact_path)).unwrap();
    assert_eq!(artifact.curve.target_attained, Some(false));
    assert_eq!(artifact.curve.selected_index, Some(4));
}

#[test]
fn constant_model_reports_undefined_power() {
    let dir = tempfile::tempdir().unwrap();
    let instance = dir.path().join("x.csv");
    fs::write(&instance, "1,0.5,0,2\n").unwrap();
    let model = format!("adapter-cmd:{ECHO} --family bernoulli --p 0.5 --num-posterior-samples 1");
    let out_path = dir.path().join("a.json");
    let out = projexp(&["explain", "--instance", instance.to_str().unwrap(), "--model", &model, "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("do not vary"), "{}", stderr(&out));
    assert!(!out_path.exists());
}

#[test]
fn render_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (out, artifact_path) = explain_linear(dir.path(), &["--target-power", "0.9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let artifact = ExplanationArtifact::load(Path::new(&artifact_path)).unwrap();
    let pgm = dir.path().join("mean.pgm");
    let r = projexp(&["render", "--artifact", &artifact_path, "--what", "mean", "--at", "lambda-index:30", "--out", pgm.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let expected = render_map(&artifact, MapKind::Mean, GridPoint::LambdaIndex(30)).unwrap();
    assert_eq!(fs::read_to_string(&pgm).unwrap(), expected);
    assert!(expected.starts_with("P2\n3 2\n255\n"));
    // Position 4 is background and never carries weight.
    let pixels: Vec<u8> = expected.lines().skip(3).flat_map(|l| l.split(' ').map(|v| v.parse::<u8>().unwrap())).collect();
    assert_eq!(pixels[4], 127);

    let fail = |args: &[&str], needle: &str| {
        let r = projexp(args);
        assert_eq!(r.status.code(), Some(1));
        assert!(stderr(&r).contains(needle), "{}", stderr(&r));
    };
    let out = dir.path().join("x.pgm");
    let out = out.to_str().unwrap();
    fail(&["render", "--artifact", &artifact_path, "--what", "sample:0", "--out", out], "--full");
    fail(&["render", "--artifact", &artifact_path, "--at", "lambda-index:50", "--out", out], "out of range");

    let csv = dir.path().join("x.csv");
    fs::write(&csv, "1,0,1,1,0,1\n").unwrap();
    let (_, model) = linear_fixture(dir.path());
    let no_shape = dir.path().join("flat.json");
    let r = projexp(&["explain", "--instance", csv.to_str().unwrap(), "--model", &model, "--num-posterior-samples", "4", "--num-perturbations", "100", "--out", no_shape.to_str().unwrap()]);
    assert!(matches!(r.status.code(), Some(0) | Some(2)), "{}", stderr(&r));
    fail(&["render", "--artifact", no_shape.to_str().unwrap(), "--out", out], "no image shape");
}

#[test]
fn variance_of_single_draw_renders_black() {
    let dir = tempfile::tempdir().unwrap();
    let (out, artifact_path) = explain_linear(dir.path(), &["--num-posterior-samples", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let artifact = ExplanationArtifact::load(Path::new(&artifact_path)).unwrap();
    let pgm = render_map(&artifact, MapKind::Variance, GridPoint::Selected).unwrap();
    assert_eq!(pgm, "P2\n3 2\n255\n0 0 0\n0 0 0\n");
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let r = projexp(&["explain", "--instance", "/nonexistent.csv", "--model", "builtin:/nonexistent.json", "--out", "/tmp/x"]);
    assert_eq!(r.status.code(), Some(1));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,abc\n").unwrap();
    let (_, model) = linear_fixture(dir.path());
    let r = projexp(&["explain", "--instance", bad.to_str().unwrap(), "--model", &model, "--out", "/tmp/x"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("not a number"), "{}", stderr(&r));
}

#[test]
fn tcp_adapter_matches_in_process_model() {
    use std::io::{BufRead, BufReader};
    use std::process::Stdio;

    use projexp_core::models::{AdapterSession, DEFAULT_TIMEOUT};
    use projexp_core::rng::derive_seed;

    let dir = tempfile::tempdir().unwrap();
    let (_, model_arg) = linear_fixture(dir.path());
    let model_path = model_arg.strip_prefix("builtin:").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_projexp-loopback-adapter"))
        .args(["--model", model_path, "--num-posterior-samples", "3", "--seed", "5", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut addr = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut addr).unwrap();
    let mut session = AdapterSession::connect_tcp(addr.trim(), DEFAULT_TIMEOUT).unwrap();
    let inputs = vec![vec![1.0, 0.0, 0.5, 0.25, 0.0, 1.0], vec![0.0; 6]];
    let remote = session.predict(&inputs).unwrap();
    session.shutdown().unwrap();
    child.wait().unwrap();

    let text = fs::read_to_string(model_path).unwrap();
    let model = serde_json::from_str::<projexp_core::models::ModelSpec>(&text).unwrap().build().unwrap();
    assert_eq!(remote, model.predict(&inputs, 3, derive_seed(5, "posterior")).unwrap());
}

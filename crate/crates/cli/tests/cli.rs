mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{matrix, network, rel, rng, WEIGHTINGS};
use crkbs::{io, ActivationSpec, Dataset, DeepNetwork, HiddenLayer, LayerSpec, WeightingSpec};
use ndarray::array;

fn crkbs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crkbs"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn predictions(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .flat_map(|line| line.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

fn write_data(dir: &Path, name: &str, data: &Dataset) {
    fs::write(dir.join(name), io::dataset_to_csv(data)).unwrap();
}

fn relu(weighting: WeightingSpec) -> LayerSpec {
    LayerSpec::new(ActivationSpec::Relu, weighting)
}

#[test]
fn embed_single_neuron_reports_outer_weight() {
    let dir = tempfile::tempdir().unwrap();
    let net = DeepNetwork::new(
        vec![HiddenLayer::new(array![[0.6, -0.8]], array![0.0], relu(WeightingSpec::Unit))],
        array![[-2.5]],
    )
    .unwrap();
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    let out = crkbs(dir.path(), &["embed", "net.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let norm: f64 = stdout(&out).trim().parse().unwrap();
    assert!((norm - 2.5).abs() < 1e-12);
}

#[test]
fn malformed_network_is_a_schema_error_with_pointer() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("net.json"),
        r#"{"widths": [1, 1], "output_dim": 1, "layers": [{"W": [["x"]], "b": [0], "activation": "relu", "weighting": "unit"}], "final_W": [[1]]}"#,
    )
    .unwrap();
    let out = crkbs(dir.path(), &["embed", "net.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/layers/0/W"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), "x_1,y_1\n0.5,1.0\n").unwrap();
    fs::write(dir.path().join("config.json"), r#"{"depth": 1, "lamda": 0.1}"#).unwrap();
    let out = crkbs(dir.path(), &["fit", "data.csv", "config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn embedded_measure_evaluates_like_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut gen = rng(11);
    let net = network(&mut gen, &[2, 5, 4], 2, LayerSpec::new(ActivationSpec::Tanh, WEIGHTINGS[1]), true);
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    write_data(dir.path(), "data.csv", &Dataset::new(matrix(&mut gen, 30, 2, 2.0), None).unwrap());

    assert!(crkbs(dir.path(), &["embed", "net.json", "--out", "m.json"]).status.success());
    assert!(crkbs(dir.path(), &["eval", "net.json", "data.csv", "--out", "a.csv"]).status.success());
    assert!(crkbs(dir.path(), &["eval", "m.json", "data.csv", "--out", "b.csv"]).status.success());
    let (a, b) = (predictions(&dir.path().join("a.csv")), predictions(&dir.path().join("b.csv")));
    assert_eq!(a.len(), 60);
    for (x, y) in a.iter().zip(&b) {
        assert!(rel(*x, *y) <= 1e-10);
    }
}

#[test]
fn extract_width_is_bounded_by_sample_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut gen = rng(12);
    let net = network(&mut gen, &[3, 20, 20], 1, relu(WeightingSpec::Unit), true);
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    write_data(dir.path(), "data.csv", &Dataset::new(matrix(&mut gen, 5, 3, 1.0), None).unwrap());

    assert!(crkbs(dir.path(), &["embed", "net.json", "--out", "m.json"]).status.success());
    let out = crkbs(dir.path(), &["extract", "m.json", "data.csv", "--out", "small.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out).lines().find(|l| l.starts_with("widths:")).unwrap().to_owned();
    let widths: Vec<usize> = line["widths:".len()..].split_whitespace().map(|w| w.parse().unwrap()).collect();
    assert_eq!(widths[0], 3);
    assert!(widths[1..].iter().all(|&w| w <= 5), "{line}");
    assert!(dir.path().join("small.metrics.json").exists());
}

#[test]
fn fit_on_zero_targets_has_zero_objective() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), "x_1,y_1\n-1.0,0.0\n0.5,0.0\n2.0,0.0\n").unwrap();
    fs::write(dir.path().join("config.json"), r#"{"depth": 2, "pool_sizes": [8, 8]}"#).unwrap();
    let out = crkbs(dir.path(), &["fit", "data.csv", "config.json", "--out", "z"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("objective: 0\n"), "{}", stdout(&out));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("z.metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["support_size"], 0);
}

#[test]
fn fit_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), "x_1,y_1\n-1.0,0.3\n0.5,-0.2\n2.0,1.0\n0.1,0.0\n").unwrap();
    fs::write(dir.path().join("config.json"), r#"{"depth": 2, "lambda": 0.01, "pool_sizes": [8, 8]}"#).unwrap();
    for (seed, out) in [("1", "a"), ("1", "b"), ("2", "c")] {
        let run = crkbs(dir.path(), &["fit", "data.csv", "config.json", "--seed", seed, "--out", out]);
        assert!(run.status.success(), "{}", stderr(&run));
    }
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.measure.json"), read("b.measure.json"));
    assert_eq!(read("a.metrics.json"), read("b.metrics.json"));
    assert_ne!(read("a.measure.json"), read("c.measure.json"));
}

#[test]
fn path_norm_of_toy_network() {
    let dir = tempfile::tempdir().unwrap();
    let net = DeepNetwork::new(
        vec![HiddenLayer::new(array![[1.0, 2.0], [0.0, 1.0], [1.0, 1.0]], array![0.0, 0.0, 0.0], relu(WeightingSpec::Unit))],
        array![[1.0, 1.0, 1.0]],
    )
    .unwrap();
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    let out = crkbs(dir.path(), &["analyze", "net.json", "--path-norm"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "path_norm: 6\n");
}

#[test]
fn analyze_without_a_mode_or_data_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let net = DeepNetwork::new(
        vec![HiddenLayer::new(array![[1.0]], array![0.0], relu(WeightingSpec::Unit))],
        array![[1.0]],
    )
    .unwrap();
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    assert_eq!(crkbs(dir.path(), &["analyze", "net.json", "--complexity"]).status.code(), Some(2));
    assert_eq!(crkbs(dir.path(), &["analyze", "net.json"]).status.code(), Some(2));
    assert_eq!(crkbs(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(crkbs(dir.path(), &["embed", "missing.json"]).status.code(), Some(2));
}

#[test]
fn single_point_complexity_is_the_pool_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let net = DeepNetwork::new(
        vec![HiddenLayer::new(array![[1.0]], array![0.0], relu(WeightingSpec::Unit))],
        array![[1.0]],
    )
    .unwrap();
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    fs::write(dir.path().join("one.csv"), "x_1\n0.7\n").unwrap();
    let out = crkbs(
        dir.path(),
        &["analyze", "net.json", "--data", "one.csv", "--complexity", "--draws", "50", "--pool-size", "16", "--out", "c"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("(se 0.0)"), "{}", stdout(&out));

    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c.metrics.json")).unwrap()).unwrap();
    let value = metrics["complexity"][0]["value"].as_f64().unwrap();
    let draws = fs::read_to_string(dir.path().join("c.draws.csv")).unwrap();
    let sups: Vec<f64> = draws.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(sups.len(), 50);
    assert!(sups.iter().all(|&s| s == value));
}

#[test]
fn bias_free_measure_matches_original() {
    let dir = tempfile::tempdir().unwrap();
    let mut gen = rng(13);
    let net = network(&mut gen, &[2, 4, 3], 1, relu(WeightingSpec::Unit), true);
    io::write_network(dir.path().join("net.json"), &net).unwrap();
    write_data(dir.path(), "data.csv", &Dataset::new(matrix(&mut gen, 25, 2, 2.0), None).unwrap());

    let out = crkbs(dir.path(), &["analyze", "net.json", "--eliminate-bias", "--out", "e"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("sup_ratio: "));
    assert!(crkbs(dir.path(), &["eval", "net.json", "data.csv", "--out", "a.csv"]).status.success());
    assert!(crkbs(dir.path(), &["eval", "e.bias_free.json", "data.csv", "--out", "b.csv"]).status.success());
    let (a, b) = (predictions(&dir.path().join("a.csv")), predictions(&dir.path().join("b.csv")));
    for (x, y) in a.iter().zip(&b) {
        assert!(rel(*x, *y) <= 1e-10);
    }
}

#[test]
fn dead_pool_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), "x_1,y_1\n0.0,1.0\n").unwrap();
    fs::write(dir.path().join("config.json"), r#"{"depth": 1, "pool_sizes": [0]}"#).unwrap();
    let out = crkbs(dir.path(), &["fit", "data.csv", "config.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("dead candidate pool"));
}

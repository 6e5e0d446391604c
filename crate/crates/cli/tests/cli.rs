use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use descatter_core::container::Container;
use descatter_core::scatter_models::load_model;
use descatter_core::Radiograph;

const SMALL: &[&str] = &["--grid", "33", "--train", "6", "--test", "2", "--iterations", "4"];

fn descatter(out: &Path, args: &[&str]) -> Output {
    let output = Command::new(env!("CARGO_BIN_EXE_descatter"))
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(args)
        .env("DESCATTER_THREADS", "2")
        .output()
        .expect("binary runs");
    output
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = descatter(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn csv_body(path: &Path) -> (String, Vec<String>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    (comment, lines.map(str::to_string).collect())
}

#[test]
fn generate_writes_exact_totals_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["generate"]);
    ok(&b, &["generate"]);
    let c = Container::open(&a.join("dataset")).unwrap();
    assert_eq!(c.names().filter(|n| n.starts_with("total_")).count(), 8);
    for i in 0..8 {
        let d = c.array(&format!("direct_{i:04}")).unwrap();
        let s = c.array(&format!("scatter_{i:04}")).unwrap();
        let t = c.array(&format!("total_{i:04}")).unwrap();
        for ((d, s), t) in d.iter().zip(&s).zip(&t) {
            assert_eq!(*d as f32 + *s as f32, *t as f32);
        }
    }
    let mut names: Vec<_> = fs::read_dir(a.join("dataset")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        assert_eq!(fs::read(a.join("dataset").join(&name)).unwrap(), fs::read(b.join("dataset").join(&name)).unwrap());
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"grid_size": 29, "iterations": 7, "nn_mask": true, "mode": {"kind": "global"}}"#).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_descatter"))
        .args(["--config", cfg.to_str().unwrap(), "--grid", "37", "--nn-mask", "off", "--neighbors", "2"])
        .args(["--train", "4", "--test", "1", "--out", out.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["grid_size"], 37);
    assert_eq!(resolved["iterations"], 7);
    assert_eq!(resolved["nn_mask"], false);
    assert_eq!(resolved["mode"], serde_json::json!({"kind": "local", "g": 2}));
}

#[test]
fn exit_codes_separate_config_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(descatter(&out, &["--grid", "34", "generate"]).status.code(), Some(1));
    assert_eq!(descatter(&out, &["--spectrum", "mono:-2", "generate"]).status.code(), Some(1));
    assert_eq!(descatter(&out, &["--config", "/nonexistent/run.json", "eval"]).status.code(), Some(1));

    let input = dir.path().join("zeros");
    let zeros = Radiograph::constant(33, 0.0, 0.3, 5.0).unwrap();
    let mut c = Container::create(&input, 33, zeros.pixel_pitch(), 5.0, serde_json::json!({})).unwrap();
    c.put_radiograph("t", &zeros).unwrap();
    c.commit().unwrap();
    let o = descatter(&out, &["descatter", "--input", input.to_str().unwrap(), "--entry", "t"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_rows_and_rerun_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["eval", "--classes", "single_field,convolutional"];
    ok(&a, &args);
    ok(&b, &args);
    for f in ["eval_made.csv", "eval_summary.csv", "eval_traces.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (comment, rows) = csv_body(&a.join("eval_summary.csv"));
    assert!(comment.starts_with("# config_hash=") && comment.len() == "# config_hash=".len() + 64);
    assert_eq!(rows[0], "method,mode,G,min,q1,median,q3,max");
    let keys: Vec<String> = rows[1..].iter().map(|r| r.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(
        keys,
        [
            "w/ scatter,reference,",
            "w/out scatter,reference,",
            "single_field,local,3",
            "single_field,global,",
            "convolutional,local,3",
            "convolutional,global,"
        ]
    );
    let (_, made) = csv_body(&a.join("eval_made.csv"));
    assert_eq!(made.len(), 1 + 6 * 2);
}

#[test]
fn sweep_reports_requested_neighbour_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["sweep-neighbors", "--counts", "1,4,2"]);
    let (_, rows) = csv_body(&dir.path().join("sweep_summary.csv"));
    let gs: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(gs, ["1", "4", "2", ""]);
}

#[test]
fn noise_starts_with_noiseless_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["noise", "--sigmas", "0.01,0.02"]);
    let (_, rows) = csv_body(&dir.path().join("noise.csv"));
    assert_eq!(rows[0], "sigma,rmse,neighbor_hash,neighbors_unchanged");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0.0,"));
    let (_, fit) = csv_body(&dir.path().join("noise_fit.csv"));
    assert_eq!(fit[0], "slope,intercept,r_squared");
}

#[test]
fn fit_then_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--model", "parametric", "fit"]);
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model/fit.json")).unwrap()).unwrap();
    assert_eq!(info["neighbors"].as_array().unwrap().len(), 3);
    assert!(load_model(&dir.path().join("model/model.json")).is_ok());

    ok(dir.path(), &["generate"]);
    let stdout = ok(
        dir.path(),
        &[
            "reconstruct",
            "--input",
            dir.path().join("dataset").to_str().unwrap(),
            "--entry",
            "direct_0006",
            "--phantom",
            "6",
        ],
    );
    let made: f64 = stdout.lines().find_map(|l| l.strip_prefix("MADE ")).unwrap().trim().parse().unwrap();
    assert!(made < 0.05, "{made}");
    let slice = Container::open(&dir.path().join("reconstruct")).unwrap().array("slice").unwrap();
    assert_eq!(slice.dim(), (33, 33));
}

#[test]
fn oracle_fit_table_has_one_column_per_method() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["oracle-fit", "--classes", "single_field,convolutional"]);
    let (_, rows) = csv_body(&dir.path().join("oracle_fit_table.csv"));
    assert_eq!(rows[0], "dataset,w/ scatter,w/out scatter,single_field,convolutional");
    assert!(rows[1].starts_with("mono,"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn scatter_scale_ratio_grows_with_scale() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["scatter-scale", "--scales", "1,1.5,2"]);
    let (_, rows) = csv_body(&dir.path().join("scatter_scale.csv"));
    let dataset_rows: Vec<Vec<&str>> =
        rows[1..].iter().map(|r| r.split(',').collect::<Vec<_>>()).filter(|r| r[2] == "dataset").collect();
    let ratios: Vec<f64> = dataset_rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(ratios.len(), 3);
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
}

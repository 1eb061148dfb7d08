use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn airspot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airspot"))
        .args(args)
        .arg("--threads")
        .arg("1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

/// Generates the small preset into `dir` and returns its run configuration.
fn synth(dir: &Path, seed: u64) -> PathBuf {
    let o = airspot(&["synth", "--preset", "small", "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("run.cfg")
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|it| it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn detect_then_eval_on_a_synthetic_campaign() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 4);
    let out = tmp.path().join("det");
    let out_param = format!("out_dir={}", out.display());
    let o = airspot(&["detect", "--config", cfg.to_str().unwrap(), "--param", &out_param]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("hotspots="));

    let gj: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("hotspots.geojson")).unwrap()).unwrap();
    assert_eq!(gj["type"], "FeatureCollection");
    for name in ["grid_stats.csv", "spikes.csv"] {
        let mut r = csv::Reader::from_path(out.join(name)).unwrap();
        let width = r.headers().unwrap().len();
        assert!(r.records().map(|rec| rec.unwrap()).all(|rec| rec.len() == width), "{name}");
    }

    let o = airspot(&["eval", "--config", cfg.to_str().unwrap(), "--param", &out_param]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,EA,RI,THR,n_hotspots");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["SDO", "TNAS", "ours"]);
    for l in &lines[1..] {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[1..].iter().all(|c| c.parse::<f64>().is_ok()), "{l}");
    }
}

#[test]
fn missing_input_is_an_io_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 1);
    let out = tmp.path().join("nothing");
    let o = airspot(&[
        "detect",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        &format!("input={}", tmp.path().join("absent.csv").display()),
        "--param",
        &format!("out_dir={}", out.display()),
    ]);
    assert_eq!(code(&o), 3);
    assert!(files_in(&out).is_empty());
}

#[test]
fn over_filtered_detection_is_empty_under_strict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 2);
    let out = tmp.path().join("strict");
    let out_param = format!("out_dir={}", out.display());
    let base = ["detect", "--config", cfg.to_str().unwrap(), "--param", &out_param, "--param", "min_S_g=10000"];
    let o = airspot(&[&base[..], &["--strict"]].concat());
    assert_eq!(code(&o), 4);
    // The empty result is still written out.
    assert_eq!(files_in(&out), ["grid_stats.csv", "hotspots.geojson", "spikes.csv"]);
    assert_eq!(code(&airspot(&base)), 0);
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 3);
    let o = airspot(&["detect", "--config", cfg.to_str().unwrap(), "--param", "no_such_key=1"]);
    assert_eq!(code(&o), 2);
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "min_S_g = ten\n").unwrap();
    assert_eq!(code(&airspot(&["detect", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn shift_of_a_table_against_itself_is_not_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 5);
    let cfg_s = cfg.to_str().unwrap();
    let feats_dir = tmp.path().join("f");
    let o = airspot(&["features", "--config", cfg_s, "--param", &format!("out_dir={}", feats_dir.display())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let feats = feats_dir.join("features.csv");
    let feats = feats.to_str().unwrap();
    let o = airspot(&[
        "--json",
        "shift",
        "--config",
        cfg_s,
        "--source",
        feats,
        "--target",
        feats,
        "--param",
        "shift.permutations=200",
        "--param",
        &format!("out_dir={}", tmp.path().join("s").display()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["reject"], false);
    assert!(tmp.path().join("s/shift.json").exists());
}

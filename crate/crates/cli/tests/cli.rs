use std::io::Write;
use std::process::{Command, Output, Stdio};

fn rllcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rllcap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn capacity_sweep_emits_one_row_per_size() {
    let o = rllcap(&["capacity", "--constraint", "1,inf", "--size", "2..8"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    for col in ["m", "capacity_bits", "lower_bound", "upper_bound", "iterations", "residual", "seconds"] {
        assert!(headers.iter().any(|h| h == col), "missing column {col}");
    }
    let idx = headers.iter().position(|h| h == "capacity_bits").unwrap();
    let caps: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[idx].parse().unwrap())
        .collect();
    assert_eq!(caps.len(), 7);
    assert!((caps[0] - 7f64.log2() / 4.0).abs() < 1e-12);
    assert!(caps.windows(2).all(|w| w[1] < w[0]), "{caps:?}");
}

#[test]
fn json_output_is_an_array() {
    let o = rllcap(&["count", "--size", "3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["count"], "63");
}

#[test]
fn count_methods_agree() {
    let brute = rllcap(&["count", "--size", "4x5", "--method", "brute", "--format", "json"]);
    let transfer = rllcap(&["count", "--size", "4x5", "--method", "transfer", "--format", "json"]);
    let a: serde_json::Value = serde_json::from_str(&stdout(&brute)).unwrap();
    let b: serde_json::Value = serde_json::from_str(&stdout(&transfer)).unwrap();
    assert_eq!(a[0]["count"], b[0]["count"]);
}

#[test]
fn bad_flags_exit_with_config_error() {
    for args in [
        vec!["capacity", "--size", "4", "--damping", "1.5"],
        vec!["capacity", "--size", "4", "--constraint", "x,y"],
        vec!["capacity", "--size", "four"],
        vec!["capacity"],
        vec!["inforate", "--size", "6"],
        vec!["count", "--size", "4", "--method", "magic"],
        vec!["capacity", "--size", "4", "--bogus"],
    ] {
        let o = rllcap(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn strict_turns_non_convergence_into_exit_4() {
    let args = ["capacity", "--size", "6", "--max-iter", "3"];
    assert_eq!(rllcap(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(rllcap(&strict).status.code(), Some(4));
}

#[test]
fn validate_reads_standard_input() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_rllcap"))
        .args(["validate", "--constraint", "1,inf", "--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"010\n000\n101\n\n110\n000\n000\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let verdicts: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(verdicts, ["true", "false"]);
}

#[test]
fn samples_are_admissible_grids() {
    let dir = std::env::temp_dir().join(format!("rllcap-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("samples.txt");
    let o = rllcap(&[
        "sample", "--size", "5", "--samples", "20", "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let check = rllcap(&["validate", "--input", out.to_str().unwrap()]);
    let text = stdout(&check);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.contains(",true,")), "{text}");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn regions_census_is_valid_json() {
    let o = rllcap(&["regions", "--constraint", "1,inf,2,4", "--size", "8"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["valid"], true);
    assert_eq!(v[0]["basic_region"], serde_json::json!([2, 5]));
}

#[test]
fn inforate_runs_a_small_sweep() {
    let o = rllcap(&[
        "inforate", "--size", "6", "--snr", "0,10", "--samples", "5", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    for col in ["snr_db", "rate_bits", "std_error", "h_y", "h_ygx", "L", "seconds"] {
        assert!(header.split(',').any(|h| h == col), "missing column {col}");
    }
    assert_eq!(text.lines().count(), 3);
}

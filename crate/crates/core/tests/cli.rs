use std::process::Command;

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stablemaps")).args(args).output().unwrap()
}

#[test]
fn verify_exits_zero() {
    let out = cli(&["verify", "--alpha", "1.5", "--n", "1000", "--samples", "100", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 with violations"));
}

#[test]
fn twopoint_prints_small_residual() {
    let out = cli(&["twopoint", "--alpha", "1.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let residual: f64 = text.split("residual=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(residual.abs() <= 1e-6, "{text}");
}

#[test]
fn unknown_flag_exits_two() {
    assert_eq!(cli(&["verify", "--colour", "red"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_values_are_usage_errors() {
    let out = cli(&["verify", "--alpha", "2.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn jsonl_output_is_reproducible() {
    let dir = std::env::temp_dir();
    let paths: Vec<_> = (0..2).map(|i| dir.join(format!("stablemaps-cli-{}-{i}.jsonl", std::process::id()))).collect();
    for p in &paths {
        let out = cli(&["estimate", "--experiment", "distances", "--n", "500", "--samples", "20", "--seed", "3", "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
    }
    let (a, b) = (std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 20);
    for p in &paths {
        let _ = std::fs::remove_file(p);
    }
}

#[test]
fn render_writes_svg() {
    let out = cli(&["render", "--n", "200", "--path", "z"]);
    assert!(out.status.success());
    let svg = String::from_utf8(out.stdout).unwrap();
    assert!(svg.contains("<svg") && svg.contains("<circle") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn sample_emits_csv() {
    let out = cli(&["sample", "--n", "50", "--samples", "3", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("experiment,n,sample,"));
}

use std::path::Path;
use std::process::{Command, Output};

fn trapnode(args: &[&str], cwd: &Path, env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trapnode"));
    cmd.args(args)
        .current_dir(cwd)
        .env_remove("TRAPNODE_PLATFORM_PATH");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn pgm(path: &Path, w: usize, h: usize) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h).map(|i| (i * 7 % 251) as u8));
    std::fs::write(path, bytes).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapnode(&["detect", "--image", "nope.pgm"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.pgm"));
}

#[test]
fn malformed_image_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.pgm"), b"P2\n2 2\n255\n1 2 3 4\n").unwrap();
    let o = trapnode(&["detect", "--image", "bad.pgm"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn image_smaller_than_window_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    pgm(&dir.path().join("tiny.pgm"), 12, 12);
    let o = trapnode(&["detect", "--image", "tiny.pgm"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn scratch_budget_below_one_tile_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    pgm(&dir.path().join("a.pgm"), 64, 64);
    let o = trapnode(
        &["detect", "--image", "a.pgm", "--budget", "1700"],
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn l1_budget_too_small_for_any_tile_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapnode(&["cnn", "--l1", "64"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unknown_platform_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapnode(&["cnn", "--platform", "gap10"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn platform_search_path_is_consulted_before_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let plat = dir.path().join("plat");
    std::fs::create_dir(&plat).unwrap();
    let gap9 = trapnode_hwmodel::platform::builtin_platform_text("gap9").unwrap();
    // same model under a new name, with half the clock
    let slow = gap9
        .replace("name = \"gap9\"", "name = \"slow9\"")
        .replace("240_000_000", "120_000_000");
    assert_ne!(slow, gap9);
    std::fs::write(plat.join("slow9.toml"), slow).unwrap();

    let run = |name: &str, env: &[(&str, &Path)]| {
        let o = trapnode(
            &[
                "cnn",
                "--platform",
                name,
                "--summary",
                "s.json",
                "--out",
                "l.csv",
            ],
            dir.path(),
            env,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
        v["summary"]["wall_time_ms"].as_f64().unwrap()
    };
    let fast = run("gap9", &[]);
    let slow = run("slow9", &[("TRAPNODE_PLATFORM_PATH", &plat)]);
    assert!((slow / fast - 2.0).abs() < 1e-9, "{slow} vs {fast}");

    let o = trapnode(&["cnn", "--platform", "slow9"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn report_header_names_tool_and_input_digest() {
    let dir = tempfile::tempdir().unwrap();
    let o = trapnode(
        &["synth", "scene", "--seed", "3", "--image", "s.pgm"],
        dir.path(),
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = trapnode(
        &["detect", "--image", "s.pgm", "--out", "d.csv"],
        dir.path(),
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(text.starts_with("# trapnode "));
    assert!(text
        .lines()
        .any(|l| l.starts_with("# input ") && l.contains("sha256=")));
    assert!(text.lines().any(|l| l == "image_id,x,y,w,h,level,score"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coarsefine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["synth", "--seed", "7", "--out", s(out), "--count", "4", "--size", "96x128"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn eval_of_identical_maps_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    run(&["synth", "--seed", "3", "--out", s(dir.path()), "--size", "32x32"]);
    let gt = dir.path().join("depth_0000.png");
    let o = run(&["eval", "--pred", s(&gt), "--gt", s(&gt)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for line in ["rmse_mm=0", "mae_mm=0", "delta1=1", "delta2=1", "delta3=1", "evaluated_pixels=1024"] {
        assert!(text.lines().any(|l| l == line), "missing {line} in\n{text}");
    }
}

#[test]
fn fresh_infer_returns_the_coarse_map_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(&["synth", "--seed", "1", "--out", s(p), "--size", "64x64"]);
    let sparse = p.join("sparse.png");
    let o = run(&["sample", "--gt", s(&p.join("depth_0000.png")), "--points", "300", "--out", s(&sparse)]);
    assert!(o.status.success());
    let out = p.join("infer");
    let o = run(&["infer", "--image", s(&p.join("image_0000.png")), "--sparse", s(&sparse), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("coarse.png")).unwrap(), fs::read(out.join("output.png")).unwrap());

    let npy = fs::read(out.join("residual.npy")).unwrap();
    assert_eq!(&npy[..6], b"\x93NUMPY");
    let header_len = u16::from_le_bytes([npy[8], npy[9]]) as usize;
    assert_eq!((10 + header_len) % 64, 0);
    let body = &npy[10 + header_len..];
    assert_eq!(body.len(), 64 * 64 * 8);
    assert!(body.chunks(8).all(|c| f64::from_le_bytes(c.try_into().unwrap()) == 0.0));

    // the interpolate command produces the same coarse map
    let coarse = p.join("coarse.png");
    assert!(run(&["interpolate", "--sparse", s(&sparse), "--out", s(&coarse)]).status.success());
    assert_eq!(fs::read(coarse).unwrap(), fs::read(out.join("coarse.png")).unwrap());
}

#[test]
fn train_then_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(&["synth", "--seed", "2", "--out", s(p), "--count", "2", "--size", "32x32"]);
    let cfg = p.join("run.cfg");
    fs::write(&cfg, "# tiny run\nepochs=50\nlr=1e-3\npoints=100\nstem_channels=4\nblocks=4:3:2,8:3:2\ndecoder=4,4\n").unwrap();
    let weights = p.join("w.bin");
    // flag beats config file
    let o = run(&["train", "--data", s(p), "--out", s(&weights), "--config", s(&cfg), "--epochs", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = String::from_utf8(o.stdout).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 3);

    let sparse = p.join("sparse.png");
    run(&["sample", "--gt", s(&p.join("depth_0000.png")), "--points", "100", "--out", s(&sparse)]);
    let out = p.join("infer");
    let o = run(&[
        "infer", "--image", s(&p.join("image_0000.png")), "--sparse", s(&sparse),
        "--weights", s(&weights), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["eval", "--pred", s(&out.join("output.png")), "--gt", s(&p.join("depth_0000.png"))]);
    assert!(o.status.success());
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--pred"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--out", "x", "--size", "12"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let o = run(&["eval", "--pred", s(&missing), "--gt", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("nope.png"), "diagnostic should name the input: {err}");
    assert_eq!(err.trim().lines().count(), 1);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "mystery=1\n").unwrap();
    let o = run(&["infer", "--image", "a.png", "--sparse", "b.png", "--out", s(dir.path()), "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn colorize_writes_an_rgb_png() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(&["synth", "--out", s(p), "--size", "16x16"]);
    let out = p.join("c.png");
    let o = run(&["colorize", "--depth", s(&p.join("depth_0000.png")), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(fs::metadata(out).unwrap().len() > 0);
}

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;

use pscatter::cli::{RunManifest, RunStatus};
use pscatter::filterbank::{random_init, FilterBank};
use pscatter::imageio::read_image;
use pscatter::scattering::{channel_count, ScatteringOutput};

fn pscatter(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pscatter"))
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "0")
        .args(args)
        .output()
        .expect("run pscatter");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = pscatter(dir, args);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn load(path: &Path) -> FilterBank {
    FilterBank::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_pgm(path: &Path, n: usize, px: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    bytes.extend((0..n * n).map(|i| px(i / n, i % n)));
    fs::write(path, bytes).unwrap();
}

#[test]
fn init_tight_frame_table_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["init", "--j", "2", "--l", "8", "--init", "tight-frame"]);
    assert_eq!(stdout.lines().count(), 17);
    let bank = load(&dir.path().join("bank.json"));
    let p = bank.morlet_params();
    assert_eq!(p.len(), 16);
    for (i, q) in p.iter().enumerate() {
        let j = (i / 8) as i32;
        assert_eq!(q.sigma, 0.8 * 2f64.powi(j));
        assert_eq!(q.xi, 3.0 * PI / 4.0 / 2f64.powi(j));
        assert_eq!(q.gamma, 0.5);
        assert_eq!(q.theta, (i % 8) as f64 * PI / 8.0);
    }
    let m = RunManifest::read(&dir.path().join("bank.json.manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Ok);
    assert_eq!(m.outputs, vec![Path::new("bank.json").to_path_buf()]);
}

#[test]
fn init_random_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.json", "b.json"] {
        ok(d, &["init", "--init", "random", "--seed", "7", "--j", "2", "--l", "4", "--out", out]);
    }
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    let bank = load(&d.join("a.json"));
    assert_eq!(bank.morlet_params(), random_init(2, 4, 7));
    for q in bank.morlet_params() {
        assert!((1.0..=5.0).contains(&q.sigma));
        assert!((0.5..1.0).contains(&q.xi));
        assert!((0.5..1.5).contains(&q.gamma));
        assert!((0.0..2.0 * PI).contains(&q.theta));
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), "# bank\nj = 1\nl = 2\nn = 16\nout = cfg.json\n").unwrap();
    ok(d, &["init", "--config", "c.cfg", "--l", "3"]);
    let spec = *load(&d.join("cfg.json")).spec();
    assert_eq!((spec.j, spec.l, spec.n), (1, 3, 16));

    fs::write(d.join("bad.cfg"), "j = 2\nwhat = 1\n").unwrap();
    let (code, _, err) = pscatter(d, &["init", "--config", "bad.cfg"]);
    assert_eq!(code, 2);
    assert!(err.contains("bad.cfg:2") && err.contains("what"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(pscatter(d, &["init", "--j", "6", "--n", "16"]).0, 2);
    assert_eq!(pscatter(d, &["init", "--bogus"]).0, 2);
    assert_eq!(pscatter(d, &["init", "--init", "sideways"]).0, 2);
    assert_eq!(pscatter(d, &["--help"]).0, 0);

    let (code, _, _) = pscatter(d, &["distance", "--a", "missing.json", "--b", "missing.json", "--out", "x.json"]);
    assert_eq!(code, 3);
    let m = RunManifest::read(&d.join("x.json.manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Error);
    assert_eq!(m.error.unwrap().exit_code, 3);

    ok(d, &["init", "--j", "1", "--l", "2", "--n", "16"]);
    ok(d, &["init", "--j", "1", "--l", "3", "--n", "16", "--out", "other.json"]);
    assert_eq!(pscatter(d, &["distance", "--a", "bank.json", "--b", "other.json"]).0, 3);
    write_pgm(&d.join("big.pgm"), 32, |_, _| 0);
    assert_eq!(pscatter(d, &["transform", "--bank", "bank.json", "--input", "big.pgm", "--out", "t.bin"]).0, 3);
    assert_eq!(
        pscatter(d, &["stability", "--bank", "bank.json", "--kind", "twist"]).0,
        2
    );
    let (code, _, err) = pscatter(
        d,
        &[
            "train", "--j", "1", "--l", "2", "--n", "16", "--per-class", "4", "--test-per-class", "0",
            "--epochs", "3", "--max-lr-head", "1e300", "--max-lr-scattering", "0",
        ],
    );
    assert_eq!(code, 4, "{err}");
}

#[test]
fn show_filters_images_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init", "--j", "2", "--l", "8", "--n", "32"]);
    // zero the carrier frequency of the first filter
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("bank.json")).unwrap()).unwrap();
    doc["params"][0]["xi"] = 0.0.into();
    fs::write(d.join("flat.json"), doc.to_string()).unwrap();
    ok(d, &["show-filters", "--bank", "flat.json", "--out-dir", "f", "--format", "pgm"]);
    ok(d, &["show-filters", "--bank", "bank.json", "--out-dir", "g", "--format", "png"]);

    let img = read_image(&d.join("f/filter_000_real.pgm")).unwrap();
    assert_eq!((img.width, img.height), (32, 32));
    assert!(img.planes[0].iter().all(|&v| v == 128.0 / 255.0));

    let csv = fs::read_to_string(d.join("g/params.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(csv.starts_with("filter,scale,orientation,sigma,theta,xi,gamma\n"));

    let bank = load(&d.join("bank.json"));
    for (i, p) in bank.morlet_params().iter().enumerate() {
        let img = read_image(&d.join(format!("g/filter_{i:03}_fourier.png"))).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        let px = &img.planes[0];
        let best = (0..px.len()).max_by(|&a, &b| px[a].total_cmp(&px[b])).unwrap();
        let (r, c) = ((best / 32) as f64, (best % 32) as f64);
        let scale = 32.0 / (2.0 * PI);
        let (er, ec) = (16.0 + p.xi * p.theta.cos() * scale, 16.0 + p.xi * p.theta.sin() * scale);
        assert!(
            (r - er).abs() <= 1.0 && (c - ec).abs() <= 1.0,
            "filter {i}: peak ({r}, {c}) vs ({er:.2}, {ec:.2})"
        );
    }
}

#[test]
fn transform_sidecar_and_constant_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init", "--j", "2", "--l", "8", "--n", "32"]);
    write_pgm(&d.join("const.pgm"), 32, |_, _| 90);
    write_pgm(&d.join("ramp.pgm"), 32, |r, c| (r * 5 + c * 3) as u8);
    ok(d, &["transform", "--bank", "bank.json", "--input", "const.pgm", "ramp.pgm", "--out", "t.bin"]);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t.bin.json")).unwrap()).unwrap();
    assert_eq!(side["shape"], serde_json::json!([2, 81, 8, 8]));
    assert_eq!(side["path_table"].as_array().unwrap().len(), channel_count(2, 8));

    let out = ScatteringOutput::import(&d.join("t.bin")).unwrap();
    let higher = out.order_range(1).start..out.channels;
    let worst = higher
        .flat_map(|k| out.channel(0, k).to_vec())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-8, "constant image gives {worst}");
    let zeroth = out.channel(0, 0);
    assert!(zeroth.iter().all(|v| (v - 90.0 / 255.0).abs() < 1e-9));

    let first = fs::read(d.join("t.bin")).unwrap();
    ok(d, &["transform", "--bank", "bank.json", "--input", "const.pgm", "ramp.pgm", "--out", "t.bin"]);
    assert_eq!(first, fs::read(d.join("t.bin")).unwrap());
}

#[test]
fn distance_and_fixed_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init", "--j", "2", "--l", "4", "--n", "16"]);
    let stdout = ok(d, &["distance", "--a", "bank.json", "--b", "bank.json"]);
    assert!(stdout.starts_with("distance 0\n"), "{stdout}");

    let common = [
        "train", "--bank", "bank.json", "--classes", "2", "--per-class", "4", "--test-per-class", "2",
        "--epochs", "3",
    ];
    let mut fixed = common.to_vec();
    fixed.extend(["--fixed", "--out-dir", "fixed"]);
    ok(d, &fixed);
    let before = fs::read(d.join("bank.json")).unwrap();
    assert_eq!(before, fs::read(d.join("fixed/bank.json")).unwrap());
    assert_eq!(before, fs::read(d.join("fixed/bank_init.json")).unwrap());

    let mut learn = common.to_vec();
    learn.extend(["--out-dir", "learn"]);
    ok(d, &learn);
    let csv = ok(d, &["distance", "--runlog", "learn/runlog.jsonl", "--reference", "bank.json"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,distance");
    assert_eq!(rows[1], "0,0");
    assert_eq!(rows.len(), 5);
    let m = RunManifest::read(&d.join("learn/manifest.json")).unwrap();
    assert_eq!(m.config["train"]["filterbank"]["L"], 4);
    assert_eq!(m.outputs.len(), 4);
}

#[test]
fn stability_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["init", "--j", "2", "--l", "4", "--n", "32"]);
    ok(d, &["stability", "--bank", "bank.json", "--steps", "4", "--out", "s.csv"]);
    let csv = fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6 * 4);
    assert_eq!(rows[0], "rotation,0,0");
    assert_eq!(rows[4], "scale,1,0");
}

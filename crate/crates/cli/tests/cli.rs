use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use adis_core::io::{load_cube, load_measurement, save_cube, Provenance};
use adis_core::{HsiCube, WavelengthGrid};
use serde_json::Value;

fn adis(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adis"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn adis")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = adis(dir, args);
    assert!(
        out.status.success(),
        "adis {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn design_mask_order_table() {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let text = ok(
        dir.path(),
        &["design-mask", "--a", "5", "--b", "5", "--d", "10", "--json"],
    );
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let v: Value = serde_json::from_str(&text).unwrap();
    let amp: Vec<f64> = v["orders"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["amplitude"].as_f64().unwrap())
        .collect();
    assert_eq!(amp.len(), 6);
    assert_eq!(amp[0], 1.0);
    assert!((amp[1] - 0.405285).abs() < 1e-6);
    assert_eq!((amp[2], amp[4]), (0.0, 0.0));
    assert!((amp[3] - 4.0 / (9.0 * std::f64::consts::PI.powi(2))).abs() < 1e-12);
    assert!((v["first_zero_ratio_at_2"].as_f64().unwrap() - amp[1]).abs() < 1e-12);

    let flat = ok(
        dir.path(),
        &["design-mask", "--lambda-min", "550", "--lambda-max", "550", "--json"],
    );
    let v: Value = serde_json::from_str(&flat).unwrap();
    assert_eq!(v["dispersion_m"].as_f64(), Some(0.0));

    let table = ok(dir.path(), &["design-mask"]);
    assert!(table.contains("0.405285"));
    assert!(table.contains("I'/I0 at d/b = 2: 0.405285"));
}

#[test]
fn zero_cube_gives_zero_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let grid = WavelengthGrid::uniform(450e-9, 650e-9, 4).unwrap();
    save_cube(&HsiCube::zeros(grid, 24, 20), &dir.path().join("z.f32")).unwrap();
    ok(
        dir.path(),
        &["simulate", "--bands", "4", "--cube", "z.f32", "--out", "y.f32"],
    );
    let m = load_measurement(&dir.path().join("y.f32")).unwrap();
    assert_eq!((m.height(), m.width()), (24, 20));
    assert!(m.data().iter().all(|v| *v == 0.0));
}

#[test]
fn simulate_meets_budget_on_one_thread() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth", "--bands", "8", "--height", "64", "--width", "64", "--out", "c.f32",
        ],
    );
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_adis"))
        .current_dir(dir.path())
        .env("ADIS_THREADS", "1")
        .args([
            "simulate", "--bands", "8", "--mosaic", "3x3", "--cube", "c.f32", "--out", "y.f32",
        ])
        .output()
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(out.status.success());
    assert!(secs < 5.0, "{secs} s");
}

#[test]
fn provenance_replays_and_tracks_optics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--bands", "4", "--height", "16", "--width", "16", "--out", "c.f32",
        ],
    );
    ok(
        d,
        &[
            "simulate",
            "--bands",
            "4",
            "--mosaic",
            "bayer",
            "--noise-sigma",
            "0.01",
            "--seed",
            "3",
            "--cube",
            "c.f32",
            "--out",
            "a.f32",
        ],
    );
    let prov: Provenance = serde_json::from_value(read_json(&d.join("a.f32.provenance.json"))).unwrap();
    assert_eq!(prov.command, "simulate");
    assert_eq!(prov.inputs.len(), 1);
    assert!(prov.psf_sha256.is_some());

    // re-run from the recorded configuration alone
    std::fs::write(d.join("replay.json"), serde_json::to_string(&prov.config).unwrap()).unwrap();
    ok(
        d,
        &[
            "simulate",
            "--config",
            "replay.json",
            "--cube",
            "c.f32",
            "--out",
            "b.f32",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("a.f32")).unwrap(),
        std::fs::read(d.join("b.f32")).unwrap()
    );
    let again: Provenance = serde_json::from_value(read_json(&d.join("b.f32.provenance.json"))).unwrap();
    assert_eq!(again.config_sha256, prov.config_sha256);
    assert_eq!(again.psf_sha256, prov.psf_sha256);

    let mut cfg = prov.config.clone();
    cfg["optics"]["n_slits"] = Value::from(12);
    std::fs::write(d.join("changed.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(
        d,
        &[
            "simulate",
            "--config",
            "changed.json",
            "--cube",
            "c.f32",
            "--out",
            "c2.f32",
        ],
    );
    let changed: Provenance = serde_json::from_value(read_json(&d.join("c2.f32.provenance.json"))).unwrap();
    assert_ne!(changed.config_sha256, prov.config_sha256);
    assert_ne!(changed.psf_sha256, prov.psf_sha256);
}

#[test]
fn fista_reconstruction_reports_gain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--bands", "8", "--mosaic", "3x3", "--seed", "1"];
    let run = |extra: &[&str]| {
        let mut a: Vec<&str> = extra.to_vec();
        a.extend(common);
        ok(d, &a)
    };
    run(&["synth", "--height", "32", "--width", "32", "--out", "t.f32"]);
    run(&["simulate", "--cube", "t.f32", "--out", "y.f32"]);
    run(&[
        "reconstruct",
        "--measurement",
        "y.f32",
        "--truth",
        "t.f32",
        "--out",
        "r.f32",
        "--preview",
        "r.png",
    ]);
    let m = read_json(&d.join("r.f32.metrics.json"));
    assert!(m["psnr_gain_db"].as_f64().unwrap() >= 5.0, "{m}");
    assert_eq!(m["iterations"].as_u64(), Some(200));
    let trace = std::fs::read_to_string(d.join("r.f32.trace.csv")).unwrap();
    let obj: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(obj.len(), 201);
    assert!(obj.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let cube = load_cube(&d.join("r.f32")).unwrap();
    assert_eq!((cube.bands(), cube.height(), cube.width()), (8, 32, 32));
    assert!(d.join("r.png").exists() && d.join("r.f32.provenance.json").exists());

    let e = ok(d, &["eval", "--truth", "t.f32", "--test", "r.f32", "--out", "e.json"]);
    assert!(e.contains("PSNR"));
    let q = read_json(&d.join("e.json"));
    // the cube file stores f32, the metrics were taken before the write
    assert!((q["psnr_db"].as_f64().unwrap() - m["quality"]["psnr_db"].as_f64().unwrap()).abs() < 1e-4);
}

#[test]
fn csst_identity_checkpoint_returns_the_adjoint_start() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--bands", "4", "--mosaic", "bayer"];
    let run = |extra: &[&str]| {
        let mut a: Vec<&str> = extra.to_vec();
        a.extend(common);
        ok(d, &a)
    };
    run(&["synth", "--height", "16", "--width", "16", "--out", "t.f32"]);
    run(&["simulate", "--cube", "t.f32", "--out", "y.f32"]);
    run(&[
        "train-toy",
        "--init",
        "identity",
        "--steps",
        "0",
        "--size",
        "16",
        "--out",
        "ident",
    ]);
    run(&[
        "reconstruct",
        "--method",
        "csst",
        "--checkpoint",
        "ident",
        "--measurement",
        "y.f32",
        "--out",
        "c.f32",
    ]);
    run(&[
        "reconstruct",
        "--method",
        "adjoint",
        "--measurement",
        "y.f32",
        "--out",
        "a.f32",
    ]);
    let (c, a) = (
        load_cube(&d.join("c.f32")).unwrap(),
        load_cube(&d.join("a.f32")).unwrap(),
    );
    let diff = c
        .data()
        .iter()
        .zip(a.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn train_toy_writes_checkpoint_and_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "train-toy",
            "--bands",
            "4",
            "--size",
            "16",
            "--steps",
            "30",
            "--out",
            "m",
        ],
    );
    for f in ["m.json", "m.bin", "m.loss.csv", "m.provenance.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let loss: Vec<f64> = std::fs::read_to_string(d.join("m.loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(loss.len(), 30);
    assert!(loss[29] < loss[0]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--bands", "4", "--height", "8", "--width", "8", "--out", "c.f32",
        ],
    );
    ok(d, &["simulate", "--bands", "4", "--cube", "c.f32", "--out", "y.f32"]);

    let missing = adis(
        d,
        &[
            "reconstruct",
            "--bands",
            "4",
            "--method",
            "csst",
            "--measurement",
            "y.f32",
            "--out",
            "r.f32",
        ],
    );
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train-toy"));
    let absent = adis(
        d,
        &[
            "reconstruct",
            "--bands",
            "4",
            "--method",
            "csst",
            "--checkpoint",
            "nope",
            "--measurement",
            "y.f32",
            "--out",
            "r.f32",
        ],
    );
    assert_eq!(code(&absent), 3);
    assert!(String::from_utf8_lossy(&absent.stderr).contains("nope.json"));

    std::fs::write(d.join("bad.json"), r#"{"sead": 1}"#).unwrap();
    assert_eq!(code(&adis(d, &["synth", "--config", "bad.json", "--out", "q.f32"])), 2);
    assert_eq!(code(&adis(d, &["design-mask", "--a", "12", "--d", "10"])), 2);
    assert_eq!(
        code(&adis(
            d,
            &["simulate", "--bands", "5", "--cube", "c.f32", "--out", "z.f32"]
        )),
        3
    );
    assert_eq!(
        code(&adis(
            d,
            &["simulate", "--bands", "4", "--cube", "missing.f32", "--out", "z.f32"]
        )),
        3
    );

    let mut bytes = std::fs::read(d.join("c.f32")).unwrap();
    bytes[5] ^= 1;
    std::fs::write(d.join("c.f32"), bytes).unwrap();
    assert_eq!(
        code(&adis(
            d,
            &["simulate", "--bands", "4", "--cube", "c.f32", "--out", "z.f32"]
        )),
        3
    );

    assert_eq!(
        code(&adis(d, &["gradcheck", "--target", "primitives", "--step", "0.5"])),
        2
    );
    std::fs::write(
        d.join("diverge.json"),
        r#"{"grid": {"min_nm": 450, "max_nm": 650, "bands": 4}, "train": {"optimizer": "sgd", "lr": 1e200, "clip_norm": 0}}"#,
    )
    .unwrap();
    let diverged = adis(
        d,
        &[
            "train-toy",
            "--config",
            "diverge.json",
            "--size",
            "8",
            "--steps",
            "3",
            "--out",
            "dv",
        ],
    );
    assert_eq!(code(&diverged), 4);
    assert_eq!(code(&adis(d, &["gradcheck", "--target", "ssab"])), 0);

    let threads = Command::new(env!("CARGO_BIN_EXE_adis"))
        .current_dir(d)
        .env("ADIS_THREADS", "zero")
        .args(["design-mask"])
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

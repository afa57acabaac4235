use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alphaveil::blend::mse_loss;
use alphaveil::blend::AlphaLayer;
use alphaveil::imgio::{encode_attack_png, encode_gray_png, gray_to_rgb, load_raster, PixelGrid};

fn alphaveil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alphaveil"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gray(dir: &Path, name: &str, w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> PathBuf {
    let p = dir.join(name);
    encode_gray_png(&PixelGrid::from_fn(w, h, f).unwrap(), &p).unwrap();
    p
}

fn textured_bg(x: usize, y: usize) -> f64 {
    ((x * 37 + y * 11) % 64) as f64 / 63.0
}

#[test]
fn craft_white_target_hides_everything() {
    let dir = tempfile::tempdir().unwrap();
    let t = gray(dir.path(), "white.png", 20, 20, |_, _| 1.0);
    let b = gray(dir.path(), "bg.png", 20, 20, textured_bg);
    let out = dir.path().join("a.png");
    let o = alphaveil(&[
        "craft",
        "--target",
        s(&t),
        "--background",
        s(&b),
        "--out",
        s(&out),
        "--size",
        "20x20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let steps: Vec<_> = stdout.lines().filter(|l| l.starts_with("step=")).collect();
    assert_eq!(steps.len(), 11, "{stdout}");
    assert!(steps[0].starts_with("step=0 loss="));
    assert!(steps[10].starts_with("step=1000 loss="));
    let fidelity: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("human_fidelity_mse="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(fidelity <= 1e-5);
    assert!(stdout.contains("success=true"));
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let t = gray(dir.path(), "t.png", 4, 4, |_, _| 0.9);
    let o = alphaveil(&["craft", "--target", s(&t), "--out", "x.png"]);
    assert_eq!(code(&o), 64);
    assert!(!o.stderr.is_empty());

    let o = alphaveil(&[
        "craft",
        "--target",
        s(&t),
        "--background",
        s(&t),
        "--out",
        "x.png",
        "--size",
        "4by4",
    ]);
    assert_eq!(code(&o), 64);

    let o = alphaveil(&[
        "flatten",
        "--in",
        s(&t),
        "--viewer",
        "neon",
        "--out",
        "y.png",
    ]);
    assert_eq!(code(&o), 64);

    let o = alphaveil(&["bogus"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn missing_input_exits_74() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let o = alphaveil(&["inspect", "--in", s(&missing)]);
    assert_eq!(code(&o), 74);
}

#[test]
fn poison_single_and_random_modes() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets");
    std::fs::create_dir(&targets).unwrap();
    for i in 0..3 {
        gray(&targets, &format!("t{i}.png"), 12, 12, move |x, y| {
            0.6 + ((x + y + i) % 8) as f64 / 20.0
        });
    }
    let b1 = gray(dir.path(), "b1.png", 12, 12, textured_bg);
    let b2 = gray(dir.path(), "b2.png", 12, 12, |x, _| x as f64 / 11.0);
    let out = dir.path().join("out");

    let o = alphaveil(&[
        "poison",
        "--targets",
        s(&targets),
        "--backgrounds",
        s(&b1),
        "--mode",
        "single",
        "--out",
        s(&out),
        "--size",
        "12x12",
        "--timestamp",
        "1700000000",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("processed=3\n"), "{stdout}");
    assert!(stdout.contains("skipped=0\n"));
    for i in 0..3 {
        assert!(out.join(format!("t{i}_blended.png")).is_file());
    }
    let manifest = std::fs::read(out.join("poison_manifest.txt")).unwrap();

    let o = alphaveil(&[
        "poison",
        "--targets",
        s(&targets),
        "--backgrounds",
        s(&b1),
        "--mode",
        "single",
        "--out",
        s(&out),
        "--size",
        "12x12",
        "--timestamp",
        "1700000000",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(out.join("poison_manifest.txt")).unwrap(),
        manifest
    );

    let o = alphaveil(&[
        "poison",
        "--targets",
        s(&targets),
        "--backgrounds",
        s(&b1),
        "--mode",
        "random",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 64);

    let rnd = dir.path().join("rnd");
    let o = alphaveil(&[
        "poison",
        "--targets",
        s(&targets),
        "--backgrounds",
        s(&b1),
        s(&b2),
        "--mode",
        "random",
        "--out",
        s(&rnd),
        "--size",
        "12x12",
        "--seed",
        "5",
        "--tag",
        "_x",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rnd.join("t0_x.png").is_file());
}

#[test]
fn flatten_views() {
    let dir = tempfile::tempdir().unwrap();
    let hidden = PixelGrid::from_fn(6, 6, |x, y| (x * 6 + y) as f64 / 70.0).unwrap();
    let opaque = dir.path().join("opaque.png");
    encode_attack_png(&gray_to_rgb(&hidden), &AlphaLayer::ones(6, 6), &opaque).unwrap();

    let (drop, dark) = (dir.path().join("drop.png"), dir.path().join("dark.png"));
    assert_eq!(
        code(&alphaveil(&[
            "flatten",
            "--in",
            s(&opaque),
            "--viewer",
            "drop",
            "--out",
            s(&drop)
        ])),
        0
    );
    assert_eq!(
        code(&alphaveil(&[
            "flatten",
            "--in",
            s(&opaque),
            "--viewer",
            "dark",
            "--out",
            s(&dark)
        ])),
        0
    );
    assert_eq!(std::fs::read(&drop).unwrap(), std::fs::read(&dark).unwrap());

    let half = dir.path().join("half.png");
    encode_attack_png(
        &gray_to_rgb(&PixelGrid::filled(2, 2, 0.4).unwrap()),
        &AlphaLayer::filled(2, 2, 0.5).unwrap(),
        &half,
    )
    .unwrap();
    let mid = dir.path().join("mid.png");
    assert_eq!(
        code(&alphaveil(&[
            "flatten",
            "--in",
            s(&half),
            "--viewer",
            "b=0.5",
            "--out",
            s(&mid)
        ])),
        0
    );
    let got = load_raster(&mid).unwrap().0.luminance();
    // 102/255 * 128/255 + (1 - 128/255) * 0.5, stored as 8 bits
    let expect = PixelGrid::filled(2, 2, 102.0 / 255.0 * 128.0 / 255.0 + (127.0 / 255.0) * 0.5)
        .unwrap()
        .quantized();
    assert!(mse_loss(&got, &expect).unwrap() == 0.0);
}

#[test]
fn report_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bg = gray(dir.path(), "bg.png", 10, 10, textured_bg);
    // Target equal to the stored hidden layer: nothing is hidden.
    let scaled = PixelGrid::from_fn(10, 10, |x, y| 0.5 * textured_bg(x, y))
        .unwrap()
        .quantized();
    let tp = dir.path().join("t.png");
    encode_gray_png(&scaled, &tp).unwrap();
    let attack = dir.path().join("a.png");
    let o = alphaveil(&[
        "craft",
        "--target",
        s(&tp),
        "--background",
        s(&bg),
        "--out",
        s(&attack),
        "--size",
        "10x10",
    ]);
    assert_eq!(code(&o), 0);
    let o = alphaveil(&[
        "report",
        "--attack",
        s(&attack),
        "--target",
        s(&tp),
        "--background",
        s(&bg),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("success=false"));

    let small = gray(dir.path(), "small.png", 8, 8, |_, _| 0.9);
    let o = alphaveil(&[
        "report",
        "--attack",
        s(&attack),
        "--target",
        s(&small),
        "--background",
        s(&bg),
    ]);
    assert_eq!(code(&o), 64);

    let o = alphaveil(&[
        "report",
        "--attack",
        s(&tp),
        "--target",
        s(&tp),
        "--background",
        s(&bg),
    ]);
    assert_eq!(
        code(&o),
        74,
        "gray PNG without alpha is not an attack image"
    );
}

#[test]
fn inspect_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let plain = gray(dir.path(), "plain.png", 8, 8, textured_bg);
    let o = alphaveil(&["inspect", "--in", s(&plain)]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("has_alpha=false\n"));
    assert!(stdout.contains("verdict=CLEAN\n"));

    let t = gray(dir.path(), "t.png", 16, 16, |x, y| {
        0.55 + ((x * y) % 9) as f64 / 20.0
    });
    let b = gray(dir.path(), "b.png", 16, 16, textured_bg);
    let attack = dir.path().join("a.png");
    assert_eq!(
        code(&alphaveil(&[
            "craft",
            "--target",
            s(&t),
            "--background",
            s(&b),
            "--out",
            s(&attack),
            "--size",
            "16x16"
        ])),
        0
    );
    let o = alphaveil(&["inspect", "--in", s(&attack)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("verdict=ATTACK_LIKELY"));
    // Thresholds too high for either score: nothing flagged.
    let o = alphaveil(&[
        "inspect",
        "--in",
        s(&attack),
        "--v-alpha",
        "10",
        "--v-div",
        "10",
    ]);
    assert_eq!(code(&o), 0);
}

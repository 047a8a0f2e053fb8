use std::path::Path;
use std::process::{Command, Output};

use spgat::train::{decode_ppm, parse_report};

const TINY: &str = "\
patch = 3
epochs = 2
lr = 0.01
batch_size = 4
sessions = 1
train_per_class = 3
rates = 1,2
branch_channels = 2
bottleneck_mids = 2,2
expansion = 1
synth_classes = 3
synth_bands = 8
synth_height = 10
synth_width = 10
";

fn spgat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spgat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(spgat(&[]).status.code(), Some(2));
    assert_eq!(spgat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(spgat(&["--bogus", "train"]).status.code(), Some(2));
    assert_eq!(spgat(&["eval"]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_three_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    for (text, field) in [
        ("epochs = many\n", "epochs"),
        ("lr = -1\n", "lr"),
        ("colour = red\n", "colour"),
        ("rates = 1,0\n", "rates"),
    ] {
        std::fs::write(&cfg, text).unwrap();
        let out = spgat(&["--config", path(&cfg), "--out", path(dir.path()), "train"]);
        assert_eq!(out.status.code(), Some(3), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "{text}: {err}");
    }
}

#[test]
fn missing_data_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("files.cfg");
    std::fs::write(
        &cfg,
        "cube_header = nope.hdr\ncube_data = nope.raw\nlabels = nope.lbl\n",
    )
    .unwrap();
    let out = spgat(&["--config", path(&cfg), "--out", path(dir.path()), "train"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = spgat(&["--config", path(&cfg), "--out", path(out), "synth"]);
        assert!(o.status.success());
    }
    for f in ["cube.hdr", "cube.raw", "labels.raw"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    spgat(&[
        "--config",
        path(&cfg),
        "--out",
        path(&c),
        "--seed",
        "99",
        "synth",
    ]);
    assert_ne!(
        std::fs::read(a.join("cube.raw")).unwrap(),
        std::fs::read(c.join("cube.raw")).unwrap()
    );
}

#[test]
fn synth_train_eval_map_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let run = dir.path().join("run");
    let synth_cfg = dir.path().join("synth.cfg");
    std::fs::write(&synth_cfg, TINY).unwrap();
    let o = spgat(&[
        "--config",
        path(&synth_cfg),
        "--out",
        path(&scene),
        "synth",
        "--interleave",
        "bip",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // Train from the written files rather than the generator.
    let files_cfg = dir.path().join("files.cfg");
    let body: String = TINY
        .lines()
        .filter(|l| !l.starts_with("synth_"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(
        &files_cfg,
        format!(
            "{body}cube_header = {}\ncube_data = {}\nlabels = {}\n",
            path(&scene.join("cube.hdr")),
            path(&scene.join("cube.raw")),
            path(&scene.join("labels.raw")),
        ),
    )
    .unwrap();
    let base = ["--config", path(&files_cfg), "--out", path(&run)];

    let o = spgat(&[&base[..], &["train"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.txt", "split.csv", "loss.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    let model = run.join("model.txt");
    let split = run.join("split.csv");
    let o = spgat(
        &[
            &base[..],
            &["eval", "--model", path(&model), "--split", path(&split)],
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.txt")).unwrap();
    let pairs = parse_report(&metrics);
    let oa: f64 = pairs
        .iter()
        .find(|(k, _)| k == "oa")
        .unwrap()
        .1
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&oa));
    let confusion = std::fs::read_to_string(run.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().next(), Some("truth\\pred,1,2,3"));
    assert_eq!(confusion.lines().count(), 4);

    let o = spgat(&[&base[..], &["predict-map", "--model", path(&model)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, w, pixels) = decode_ppm(&std::fs::read(run.join("map.ppm")).unwrap()).unwrap();
    assert_eq!((h, w, pixels.len()), (10, 10, 100));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = spgat(&["--out", path(dir.path()), "gradcheck"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("PASS spgat end-to-end")));
    assert!(!stdout.contains("FAIL"));
}

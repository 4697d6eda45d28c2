use std::path::Path;
use std::process::{Command, Output};

use pless::io::{self, Tensor, TensorData};
use pless::spreading::LabelMap;
use pless::synth::{generate_phantom, PhantomConfig};

fn pless(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pless"))
        .args(args)
        .env_remove("PLESS_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_phantom(dir: &Path) -> pless::synth::Phantom {
    let phantom = generate_phantom(&PhantomConfig {
        seed: 11,
        size: 40,
        slices: 2,
        map_accuracy: 0.85,
    })
    .unwrap();
    phantom.write(dir).unwrap();
    phantom
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(pless(&["--help"]).status.code(), Some(0));
    assert_eq!(pless(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_arguments_exit_three() {
    assert_eq!(pless(&[]).status.code(), Some(3));
    assert_eq!(pless(&["nonsense"]).status.code(), Some(3));
    assert_eq!(
        pless(&["enhance", "--epoch", "minus-one"]).status.code(),
        Some(3)
    );
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pless(&[
        "partition",
        "--image",
        s(&dir.path().join("absent.plt")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.plt"));
}

#[test]
fn malformed_tensor_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.plt");
    std::fs::write(&bad, b"NOPE\x02\x01\x00").unwrap();
    let out = pless(&[
        "partition",
        "--image",
        s(&bad),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn invalid_variant_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom(dir.path());
    let out = pless(&[
        "spread",
        "--image",
        s(&dir.path().join("image.plt")),
        "--scribbles",
        s(&dir.path().join("scribbles.plt")),
        "--variant",
        "enh+everything",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn constant_image_partitions_into_one_layer() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("flat.plt");
    io::write_tensor(
        &image,
        &Tensor::new(vec![6, 5], TensorData::F32(vec![7.0; 30])).unwrap(),
    )
    .unwrap();
    let out_dir = dir.path().join("layers");
    let out = pless(&[
        "partition",
        "--image",
        s(&image),
        "--out",
        s(&out_dir),
        "--check",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("hierarchy.json")).unwrap())
            .unwrap();
    assert_eq!(summary["region_counts"], serde_json::json!([1]));
    let layer =
        io::regions_from_tensor(&io::read_tensor(out_dir.join("layer_0.plt")).unwrap()).unwrap();
    assert_eq!(layer.ids(), &[0; 30]);
    assert!(!out_dir.join("layer_1.plt").exists());
}

#[test]
fn partition_rejects_volumes() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom(dir.path());
    let out = pless(&[
        "partition",
        "--image",
        s(&dir.path().join("image.plt")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn spread_writes_both_stages() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let out_dir = dir.path().join("spread");
    let out = pless(&[
        "spread",
        "--image",
        s(&dir.path().join("image.plt")),
        "--scribbles",
        s(&dir.path().join("scribbles.plt")),
        "--variant",
        "enh+bg+prop",
        "--out",
        s(&out_dir),
        "--jobs",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s_w = io::labelmaps_from_tensor(&io::read_tensor(out_dir.join("s_w.plt")).unwrap(), 4, 255)
        .unwrap();
    let s_enh =
        io::labelmaps_from_tensor(&io::read_tensor(out_dir.join("s_enh.plt")).unwrap(), 4, 255)
            .unwrap();
    assert_eq!(s_w.len(), 2);
    for z in 0..2 {
        assert!(s_enh[z].is_fully_labeled());
        assert!(s_w[z].labeled_count() >= phantom.scribbles[z].labeled_count());
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["variant"], "enh+bg+prop");
}

#[test]
fn spread_accepts_pgm_scribbles() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let image = dir.path().join("slice.plt");
    let raw: Vec<f32> = phantom.raw_images[0].iter().map(|&v| v as f32).collect();
    io::write_tensor(
        &image,
        &Tensor::new(vec![40, 40], TensorData::F32(raw)).unwrap(),
    )
    .unwrap();
    let pgm = dir.path().join("scribbles.pgm");
    io::write_pgm(&pgm, &phantom.scribbles[0]).unwrap();
    let out = pless(&[
        "spread",
        "--image",
        s(&image),
        "--scribbles",
        s(&pgm),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_labels(path: &Path, maps: &[LabelMap]) {
    io::write_tensor(path, &io::labelmaps_to_tensor(maps).unwrap()).unwrap();
}

#[test]
fn enhance_after_cutoff_returns_pseudo_label_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let ppl_path = dir.path().join("ppl.plt");
    let ppl: Vec<LabelMap> = phantom.student.iter().map(|p| p.argmax_labels()).collect();
    write_labels(&ppl_path, &ppl);
    let out_path = dir.path().join("p_enh.plt");
    let run = |epoch: &str| {
        pless(&[
            "enhance",
            "--s-enh",
            s(&dir.path().join("gt.plt")),
            "--ppl",
            s(&ppl_path),
            "--tau",
            "0.25",
            "--e-max",
            "10",
            "--epoch",
            epoch,
            "--out",
            s(&out_path),
        ])
    };
    // 3 > 0.25 * 10
    assert_eq!(run("3").status.code(), Some(0));
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        std::fs::read(&ppl_path).unwrap()
    );
    // while active, a fully labeled s_enh replaces everything
    assert_eq!(run("2").status.code(), Some(0));
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        std::fs::read(dir.path().join("gt.plt")).unwrap()
    );
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let ppl_path = dir.path().join("ppl.plt");
    let ppl: Vec<LabelMap> = phantom.teacher.iter().map(|p| p.argmax_labels()).collect();
    write_labels(&ppl_path, &ppl);
    let cfg = dir.path().join("cfg.json");
    let out_path = dir.path().join("out.plt");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "ppl": ppl_path,
            "output": out_path,
            "tau": 1.0,
            "e_max": 10,
        })
        .to_string(),
    )
    .unwrap();
    let gt = dir.path().join("gt.plt");
    let active = |extra: &[&str]| {
        let mut args = vec![
            "--config",
            s(&cfg),
            "enhance",
            "--s-enh",
            s(&gt),
            "--epoch",
            "5",
        ];
        args.extend_from_slice(extra);
        let out = pless(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["active"].as_bool().unwrap()
    };
    assert!(active(&[]));
    assert!(!active(&["--tau", "0.25"]));
}

#[test]
fn invalid_config_values_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tau": 1.5}"#).unwrap();
    let out = pless(&["--config", s(&cfg), "pipeline", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(
        pless(&["--config", s(&cfg), "pipeline"]).status.code(),
        Some(3)
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        pless(&["--config", s(&missing), "pipeline"]).status.code(),
        Some(2)
    );
}

#[test]
fn loss_and_metrics_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let gt = dir.path().join("gt.plt");
    let out = pless(&[
        "loss",
        "--ps",
        s(&dir.path().join("ps.plt")),
        "--pt",
        s(&dir.path().join("pt.plt")),
        "--labels",
        s(&gt),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total = v["pseudo_label_loss"].as_f64().unwrap();
    assert!(total > 0.0 && total < 1.0);
    assert_eq!(v["per_slice"].as_array().unwrap().len(), 2);

    let pred = dir.path().join("pred.plt");
    let student: Vec<LabelMap> = phantom.student.iter().map(|p| p.argmax_labels()).collect();
    write_labels(&pred, &student);
    let report_path = dir.path().join("m.json");
    let meta = dir.path().join("meta.json");
    let out = pless(&[
        "metrics",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--meta",
        s(&meta),
        "--out",
        s(&report_path),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let names: Vec<&str> = v["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["class"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["RV", "MYO", "LV"]);
    let dsc = v["avg"]["dsc"].as_f64().unwrap();
    assert!(dsc > 0.0 && dsc < 1.0);

    let out = pless(&[
        "metrics",
        "--pred",
        s(&gt),
        "--gt",
        s(&gt),
        "--meta",
        s(&meta),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["avg"]["dsc"], 1.0);
    assert_eq!(v["avg"]["hd95_mm"], 0.0);
}

#[test]
fn synth_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = pless(&[
        "synth",
        "--seed",
        "2",
        "--size",
        "32",
        "--slices",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for f in [
        "image.plt",
        "gt.plt",
        "scribbles.plt",
        "ps.plt",
        "pt.plt",
        "meta.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let out = pless(&["synth", "--size", "8", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pipeline_runs_on_files_from_config() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom(dir.path());
    let cfg = dir.path().join("cfg.json");
    let d = dir.path();
    std::fs::write(
        &cfg,
        serde_json::json!({
            "image": d.join("image.plt"),
            "scribbles": d.join("scribbles.plt"),
            "ps": d.join("ps.plt"),
            "pt": d.join("pt.plt"),
            "gt": d.join("gt.plt"),
            "meta": d.join("meta.json"),
            "e_max": 8,
            "variant": "enh",
        })
        .to_string(),
    )
    .unwrap();
    let out = pless(&["--config", s(&cfg), "pipeline"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["slices"], 2);
    assert_eq!(v["schedule"].as_array().unwrap().len(), 9);
    assert_eq!(v["schedule_consistent"], true);
    assert_eq!(v["enhancement"]["variant"], "enh");
    assert!(v["evaluation"]["accuracy"]["enhanced"].as_f64().is_some());
}

#[test]
fn log_level_comes_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_pless"))
        .args(["pipeline", "--seed", "0"])
        .env("PLESS_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("waterfall layer"));
    let quiet = pless(&["pipeline", "--seed", "0"]);
    assert!(!String::from_utf8_lossy(&quiet.stderr).contains("waterfall layer"));
    assert_eq!(out.stdout, quiet.stdout);
}

#[test]
fn empty_scribbles_stay_unlabeled_and_enhance_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = write_phantom(dir.path());
    let empty: Vec<LabelMap> = (0..2)
        .map(|_| LabelMap::unlabeled(40, 40, 4, 255).unwrap())
        .collect();
    let scribbles = dir.path().join("empty.plt");
    write_labels(&scribbles, &empty);
    let out_dir = dir.path().join("spread");
    let out = pless(&[
        "spread",
        "--image",
        s(&dir.path().join("image.plt")),
        "--scribbles",
        s(&scribbles),
        "--variant",
        "enh",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s_enh = out_dir.join("s_enh.plt");
    assert_eq!(
        std::fs::read(&s_enh).unwrap(),
        std::fs::read(&scribbles).unwrap()
    );

    let ppl_path = dir.path().join("ppl.plt");
    let ppl: Vec<LabelMap> = phantom.student.iter().map(|p| p.argmax_labels()).collect();
    write_labels(&ppl_path, &ppl);
    let out_path = dir.path().join("p_enh.plt");
    let out = pless(&[
        "enhance",
        "--s-enh",
        s(&s_enh),
        "--ppl",
        s(&ppl_path),
        "--epoch",
        "0",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        std::fs::read(&ppl_path).unwrap()
    );
}

#[test]
fn unlabeled_pseudo_label_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom(dir.path());
    let out = pless(&[
        "enhance",
        "--s-enh",
        s(&dir.path().join("gt.plt")),
        "--ppl",
        s(&dir.path().join("scribbles.plt")),
        "--out",
        s(&dir.path().join("p_enh.plt")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unlabeled"));
}

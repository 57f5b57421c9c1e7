use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wirepipe::imagecore::io::{read_mask, write_image, write_mask, BitDepth};
use wirepipe::imagecore::{ImageBuf, MaskBuf};
use wirepipe::model::{encode_checkpoint, TinyConvSegmenter};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wirepipe"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn wirepipe")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn synth(dir: &Path, count: usize, size: usize, seed: u64) -> PathBuf {
    let out = dir.join("data");
    ok(
        dir,
        &[
            "gen-synth",
            "--count",
            &count.to_string(),
            "--size",
            &size.to_string(),
            "--out-dir",
            "data",
            "--seed",
            &seed.to_string(),
        ],
    );
    out
}

fn sidecar(path: &Path) -> Value {
    let text = fs::read_to_string(format!("{}.run.json", path.display())).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn segment_writes_mask_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 1, 192, 1);
    ok(
        d,
        &[
            "segment",
            "--image",
            "data/images/scene_00000.png",
            "--model",
            "oracle:data/masks/scene_00000.png",
            "--out-mask",
            "out/mask.png",
            "--out-prob",
            "out/prob.pfm",
            "--patch",
            "64",
        ],
    );
    let gt = read_mask(d.join("data/masks/scene_00000.png")).unwrap();
    assert_eq!(read_mask(d.join("out/mask.png")).unwrap(), gt);
    assert!(d.join("out/prob.pfm").is_file());
    let m = sidecar(&d.join("out/mask.png"));
    assert_eq!(m["command"], "segment");
    assert_eq!(m["config"]["p_infer"], 64);
    assert!(m["version"].as_str().unwrap().starts_with('v'));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 1, 128, 2);
    let base = ["--model", "oracle:data/masks/scene_00000.png", "--out-mask", "m.png"];
    let mut missing = vec!["segment", "--image", "nope.png"];
    missing.extend(base);
    let out = run(d, &missing);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.png"));

    let mut bad_alpha = vec!["segment", "--image", "data/images/scene_00000.png", "--alpha", "1.5"];
    bad_alpha.extend(base);
    assert_eq!(code(d, &bad_alpha), 2);
    assert!(!d.join("m.png").exists());

    let overlap = [
        "remove",
        "--image",
        "data/images/scene_00000.png",
        "--model",
        "oracle:data/masks/scene_00000.png",
        "--out",
        "r.png",
        "--tile",
        "64",
        "--overlap",
        "64",
    ];
    assert_eq!(code(d, &overlap), 2);
    assert!(!d.join("r.png").exists());
    assert_eq!(code(d, &["segment", "--bogus"]), 2);
    assert_eq!(
        code(
            d,
            &[
                "eval-seg",
                "--pred-dir",
                "data/masks",
                "--gt-dir",
                "data/masks",
                "--report",
                "r.txt"
            ]
        ),
        2
    );
}

#[test]
fn remove_with_empty_mask_copies_input_bytes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let img = ImageBuf::from_fn(150, 170, 3, |y, x, c| ((y * 7 + x * 3 + c * 50) % 256) as f32 / 255.0).unwrap();
    write_image(d.join("in.png"), &img, BitDepth::Sixteen).unwrap();
    write_mask(d.join("empty.png"), &MaskBuf::zeros(150, 170).unwrap()).unwrap();
    let out = ok(
        d,
        &[
            "remove",
            "--image",
            "in.png",
            "--model",
            "oracle:empty.png",
            "--out",
            "out.png",
            "--patch",
            "64",
        ],
    );
    assert!(out.contains("0/"), "{out}");
    assert_eq!(
        fs::read(d.join("out.png")).unwrap(),
        fs::read(d.join("in.png")).unwrap()
    );
    assert_eq!(sidecar(&d.join("out.png"))["stats"]["tiles_processed"], 0);
}

#[test]
fn remove_reports_psnr_against_clean_plate() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 1, 256, 3);
    let out = ok(
        d,
        &[
            "remove",
            "--image",
            "data/images/scene_00000.png",
            "--model",
            "oracle:data/masks/scene_00000.png",
            "--clean",
            "data/clean/scene_00000.png",
            "--out",
            "clean_out.png",
            "--out-mask",
            "removed_mask.png",
            "--tile",
            "128",
            "--overlap",
            "16",
            "--patch",
            "128",
        ],
    );
    assert!(out.contains("psnr vs clean"));
    let stats = &sidecar(&d.join("clean_out.png"))["stats"];
    let before = stats["psnr_input"].as_f64().unwrap();
    let after = stats["psnr_output"].as_f64().unwrap();
    assert!(after > before + 5.0, "{before} -> {after}");
    assert!(d.join("removed_mask.png").is_file());
}

fn hash_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks", "clean"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out.push(("manifest.jsonl".into(), fs::read(dir.join("manifest.jsonl")).unwrap()));
    out
}

#[test]
fn gen_synth_is_seed_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let ha = hash_tree(&synth(a.path(), 4, 96, 11));
    let hb = hash_tree(&synth(b.path(), 4, 96, 11));
    let hc = hash_tree(&synth(c.path(), 4, 96, 12));
    assert_eq!(ha.len(), 13);
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
    let manifest = fs::read_to_string(a.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert_eq!(sidecar(&a.path().join("data/manifest.jsonl"))["seed"], 11);
}

#[test]
fn zero_iteration_training_saves_the_initialisation() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 2, 96, 4);
    ok(
        d,
        &[
            "train-tiny",
            "--data",
            "data/manifest.jsonl",
            "--iters",
            "0",
            "--seed",
            "9",
            "--patch",
            "32",
            "--out",
            "init.ckpt",
        ],
    );
    assert_eq!(
        fs::read(d.join("init.ckpt")).unwrap(),
        encode_checkpoint(&TinyConvSegmenter::new(9))
    );
}

#[test]
fn training_is_reproducible_and_flags_beat_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 3, 96, 5);
    fs::write(
        d.join("train.json"),
        r#"{"steps": 2, "patch": 32, "lr": 0.5, "seed": 1}"#,
    )
    .unwrap();
    let args = |out: &'static str| {
        [
            "train-tiny",
            "--data",
            "data/manifest.jsonl",
            "--config",
            "train.json",
            "--lr",
            "0.01",
            "--batch",
            "2",
            "--out",
            out,
        ]
    };
    ok(d, &args("a.ckpt"));
    ok(d, &args("b.ckpt"));
    assert_eq!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("b.ckpt")).unwrap());
    assert_ne!(
        fs::read(d.join("a.ckpt")).unwrap(),
        encode_checkpoint(&TinyConvSegmenter::new(1))
    );
    let cfg = &sidecar(&d.join("a.ckpt"))["config"];
    assert_eq!(cfg["steps"], 2);
    assert_eq!(cfg["patch"], 32);
    assert_eq!(cfg["lr"], 0.01);
    assert_eq!(cfg["momentum"], 0.9);
}

#[test]
fn pipeline_config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 1, 128, 6);
    fs::write(d.join("pipe.json"), r#"{"alpha": 0.5, "p_infer": 64}"#).unwrap();
    let seg = |alpha: Option<&str>, out: &str| {
        let mut a = vec![
            "segment",
            "--image",
            "data/images/scene_00000.png",
            "--model",
            "oracle:data/masks/scene_00000.png",
            "--config",
            "pipe.json",
            "--out-mask",
        ];
        a.push(out);
        if let Some(v) = alpha {
            a.extend(["--alpha", v]);
        }
        ok(d, &a);
        sidecar(&d.join(out))["config"].clone()
    };
    let from_file = seg(None, "a.png");
    assert_eq!(from_file["alpha"], 0.5);
    assert_eq!(from_file["p_infer"], 64);
    assert_eq!(from_file["onion_d"], 7);
    assert_eq!(seg(Some("0"), "b.png")["alpha"], 0.0);
    fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "segment",
                "--image",
                "data/images/scene_00000.png",
                "--model",
                "oracle:data/masks/scene_00000.png",
                "--config",
                "bad.json",
                "--out-mask",
                "c.png"
            ]
        ),
        2
    );
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 2, 128, 7);
    ok(
        d,
        &[
            "train-tiny",
            "--data",
            "data/manifest.jsonl",
            "--iters",
            "2",
            "--patch",
            "32",
            "--out",
            "m.ckpt",
        ],
    );
    let seg = |threads: &str, out: &str| {
        ok(
            d,
            &[
                "--threads",
                threads,
                "segment",
                "--image",
                "data/images/scene_00001.png",
                "--model",
                "m.ckpt",
                "--alpha",
                "0",
                "--patch",
                "32",
                "--out-prob",
                &format!("{out}.pfm"),
                "--out-mask",
                &format!("{out}.png"),
            ],
        );
        (
            fs::read(d.join(format!("{out}.png"))).unwrap(),
            fs::read(d.join(format!("{out}.pfm"))).unwrap(),
        )
    };
    assert_eq!(seg("1", "one"), seg("3", "three"));
}

#[test]
fn profile_refined_windows_shrink_as_alpha_grows() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 2, 256, 8);
    ok(
        d,
        &[
            "profile",
            "--images",
            "data/images",
            "--model",
            "oracle:data/masks/scene_00000.png",
            "--alphas",
            "0,0.001,0.01,0.05,0.2",
            "--patch",
            "64",
            "--report",
            "prof.json",
        ],
    );
    let reports: Vec<Value> = serde_json::from_str(&fs::read_to_string(d.join("prof.json")).unwrap()).unwrap();
    let refined: Vec<u64> = reports.iter().map(|r| r["windows_refined"].as_u64().unwrap()).collect();
    assert_eq!(refined.len(), 5);
    assert_eq!(reports[0]["windows_refined"], reports[0]["windows_total"]);
    assert!(refined.windows(2).all(|w| w[1] <= w[0]), "{refined:?}");
    assert!(refined[4] < refined[0]);
}

#[test]
fn eval_commands_write_reports() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    synth(d, 2, 96, 9);
    ok(
        d,
        &[
            "eval-seg",
            "--pred-dir",
            "data/masks",
            "--gt-dir",
            "data/masks",
            "--report",
            "seg.json",
        ],
    );
    let seg: Value = serde_json::from_str(&fs::read_to_string(d.join("seg.json")).unwrap()).unwrap();
    assert_eq!(seg["summary"]["iou"], 1.0);
    assert_eq!(seg["rows"].as_array().unwrap().len(), 2);

    ok(
        d,
        &[
            "eval-inpaint",
            "--pred-dir",
            "data/clean",
            "--gt-dir",
            "data/clean",
            "--mask-dir",
            "data/masks",
            "--report",
            "inp.csv",
        ],
    );
    let csv = fs::read_to_string(d.join("inp.csv")).unwrap();
    assert!(csv.starts_with("name,psnr,psnr_masked"));
    assert!(csv.lines().last().unwrap().starts_with("mean,99"));

    fs::create_dir(d.join("lonely")).unwrap();
    fs::copy(d.join("data/masks/scene_00000.png"), d.join("lonely/other.png")).unwrap();
    assert_eq!(
        code(
            d,
            &[
                "eval-seg",
                "--pred-dir",
                "lonely",
                "--gt-dir",
                "data/masks",
                "--report",
                "x.csv"
            ]
        ),
        2
    );
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dpatn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpatn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DPATN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a small haze set into `<root>/data`.
fn synth(root: &Path, pairs: &str, crop: &str) -> PathBuf {
    let data = root.join("data");
    let o = dpatn(&["synth", "--pairs", pairs, "--crop", crop, "--seed", "4"], &data);
    assert_ok(&o);
    data
}

/// Trains a one-stage model on `data` and returns the model path.
fn train(data: &Path, out: &Path, extra: &[&str]) -> PathBuf {
    let manifest = data.join("manifest.tsv");
    let mut args = vec![
        "train",
        "--manifest",
        s(&manifest),
        "--stages",
        "1",
        "--filters",
        "2",
        "--kernel-size",
        "3",
        "--max-iter",
        "5",
    ];
    args.extend_from_slice(extra);
    assert_ok(&dpatn(&args, out));
    out.join("model.json")
}

#[test]
fn synth_is_deterministic() {
    let root = TempDir::new().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for dir in [&a, &b] {
        assert_ok(&dpatn(&["synth", "--pairs", "3", "--crop", "24", "--seed", "9"], dir));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 3 * 3 + 2, "{names:?}");
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    assert!(!a.join(".dpatn.lock").exists());
}

#[test]
fn zero_pairs_is_a_usage_error() {
    let root = TempDir::new().unwrap();
    let o = dpatn(&["synth", "--pairs", "0"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let root = TempDir::new().unwrap();
    let o = dpatn(&["synth", "--bogus"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let root = TempDir::new().unwrap();
    let o = dpatn(&["--help"], root.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("dehaze"));
}

#[test]
fn tiny_train_then_dehaze_and_eval() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "2", "16");
    let out = root.path().join("run");
    let model = train(&data, &out, &[]);
    assert!(model.exists() && out.join("train_report.json").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"], 2);

    let dehazed = root.path().join("dehazed");
    let o = dpatn(
        &[
            "dehaze",
            "--model",
            s(&model),
            "--input",
            s(&data.join("hazy_0000.png")),
            "--gt",
            s(&data.join("clean_0000.png")),
        ],
        &dehazed,
    );
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("psnr:") && text.contains("ssim:"), "{text}");
    for f in ["radiance.png", "transmission.png", "metrics.json"] {
        assert!(dehazed.join(f).exists(), "{f}");
    }

    let evaluated = root.path().join("eval");
    let o = dpatn(
        &["eval", "--manifest", s(&data.join("manifest.tsv")), "--model", s(&model)],
        &evaluated,
    );
    assert_ok(&o);
    assert!(evaluated.join("eval.json").exists());
}

#[test]
fn greedy_and_joint_give_different_models() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "2", "16");
    let manifest = data.join("manifest.tsv");
    let mut models = Vec::new();
    for mode in ["greedy", "joint"] {
        let out = root.path().join(mode);
        let args = [
            "train",
            "--manifest",
            s(&manifest),
            "--stages",
            "2",
            "--filters",
            "2",
            "--kernel-size",
            "3",
            "--max-iter",
            "5",
            "--mode",
            mode,
        ];
        assert_ok(&dpatn(&args, &out));
        models.push(fs::read_to_string(out.join("model.json")).unwrap());
    }
    assert_ne!(models[0], models[1]);
}

#[test]
fn underwater_without_separation() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "2", "16");
    let model = train(&data, &root.path().join("run"), &[]);
    let water = root.path().join("water");
    assert_ok(&dpatn(
        &["synth", "--kind", "underwater", "--pairs", "1", "--crop", "24", "--seed", "2"],
        &water,
    ));
    let out = root.path().join("uw");
    let o = dpatn(
        &[
            "underwater",
            "--model",
            s(&model),
            "--input",
            s(&water.join("underwater_0000.png")),
            "--no-separation",
        ],
        &out,
    );
    assert_ok(&o);
    assert!(out.join("radiance.png").exists());
}

#[test]
fn missing_model_exits_two() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "1", "16");
    let o = dpatn(
        &[
            "dehaze",
            "--model",
            s(&root.path().join("nope.json")),
            "--input",
            s(&data.join("hazy_0000.png")),
        ],
        &root.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn audit_of_trained_and_untied_models() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "2", "16");
    let tied = train(&data, &root.path().join("tied"), &[]);
    let o = dpatn(&["audit", "--model", s(&tied)], &root.path().join("audit_tied"));
    assert_ok(&o);
    assert!(stdout(&o).contains("energy stage 0: passed"), "{}", stdout(&o));

    let untied = train(&data, &root.path().join("untied"), &["--untied"]);
    let o = dpatn(&["audit", "--model", s(&untied)], &root.path().join("audit_untied"));
    assert_ok(&o);
    assert!(stdout(&o).contains("energy stage 0: skipped"), "{}", stdout(&o));
}

#[test]
fn corrupted_model_exits_two() {
    let root = TempDir::new().unwrap();
    let model = root.path().join("model.json");
    fs::write(&model, "{\"format\": \"dpatn-model\", \"version\": 1").unwrap();
    let o = dpatn(&["audit", "--model", s(&model)], &root.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("busy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".dpatn.lock"), "").unwrap();
    let o = dpatn(&["synth", "--pairs", "1", "--crop", "16"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.tsv").exists());
}

#[test]
fn config_file_supplies_defaults_and_rejects_unknown_keys() {
    let root = TempDir::new().unwrap();
    let good = root.path().join("good.toml");
    fs::write(&good, "seed = 4\n[synth]\npairs = 2\ncrop = 16\n").unwrap();
    let out = root.path().join("from_config");
    assert_ok(&dpatn(&["synth", "--config", s(&good)], &out));
    assert_eq!(fs::read_to_string(out.join("recipes.json")).map(|t| t.matches("\"index\"").count()).unwrap(), 2);

    let bad = root.path().join("bad.toml");
    fs::write(&bad, "[synth]\npears = 2\n").unwrap();
    let o = dpatn(&["synth", "--config", s(&bad)], &root.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_gmm_then_derain() {
    let root = TempDir::new().unwrap();
    let data = synth(root.path(), "2", "24");
    let model = train(&data, &root.path().join("run"), &[]);
    let gmm_dir = root.path().join("gmm");
    assert_ok(&dpatn(
        &[
            "fit-gmm",
            s(&data.join("clean_0000.png")),
            s(&data.join("clean_0001.png")),
            "--patch",
            "3",
            "--components",
            "2",
            "--em-iters",
            "5",
        ],
        &gmm_dir,
    ));
    let gmm = gmm_dir.join("gmm.json");
    assert!(gmm.exists());
    let out = root.path().join("derain");
    let o = dpatn(
        &[
            "derain",
            "--model",
            s(&model),
            "--gmm",
            s(&gmm),
            "--input",
            s(&data.join("hazy_0001.png")),
            "--sep-max-iter",
            "20",
            "--no-settle",
        ],
        &out,
    );
    assert_ok(&o);
    for f in ["radiance.png", "rain.png", "latent.png", "transmission.png", "separation.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
num_classes = 3
per_class_train = 2
per_class_test = 1
image_size = 32
seed = 3

[backbone]
stage_channels = [4, 8, 8]
stride_per_stage = [2, 2, 2]

[trainer]
epochs = 2
batch_size = 3
"#;

fn geosup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosup"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn generate(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, TINY);
    let data = dir.join("data");
    let out = geosup(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (cfg, data)
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let again = dir.path().join("again");
    assert!(geosup(&["generate", "--config", s(&cfg), "--out", s(&again)]).status.success());
    assert_eq!(
        fs::read(data.join("manifest.sha256")).unwrap(),
        fs::read(again.join("manifest.sha256")).unwrap()
    );
    assert_eq!(fs::read_dir(data.join("train")).unwrap().count(), 3);
    assert!(data.join("config.toml").is_file());
}

#[test]
fn train_eval_visualize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let run = dir.path().join("run");
    let out = geosup(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(!run.join(".geosup.lock").exists());

    let ck = run.join("checkpoint.bin");
    let out = geosup(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("top1 "));

    // resume extends the same metrics file
    let longer = write_config(dir.path(), &TINY.replace("epochs = 2", "epochs = 3"));
    let out = geosup(&[
        "train", "--config", s(&longer), "--data", s(&data), "--out", s(&run), "--resume", s(&ck),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().last().unwrap().contains("\"epoch\":2"));

    let img = fs::read_dir(data.join("test")).unwrap().next().unwrap().unwrap().path();
    let img = fs::read_dir(img).unwrap().next().unwrap().unwrap().path();
    let bogus = dir.path().join("bogus.png");
    fs::write(&bogus, b"not a png").unwrap();
    let vis = dir.path().join("vis");
    let out = geosup(&["visualize", "--checkpoint", s(&ck), "--out", s(&vis), s(&img), s(&bogus)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pngs = fs::read_dir(&vis)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().map_or(false, |x| x == "png"))
        .count();
    assert_eq!(pngs, 5);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(vis.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["skipped"], 1);
    assert_eq!(summary["images"].as_array().unwrap().len(), 1);
}

#[test]
fn deterministic_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        let out = geosup(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--deterministic"]);
        assert!(out.status.success());
        files.push(fs::read(run.join("metrics.jsonl")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sda]\nsigmaa = 0.1\n");
    let out = geosup(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sda.sigmaa"));
}

#[test]
fn eval_on_mismatched_classes_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let run = dir.path().join("run");
    assert!(geosup(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]).status.success());
    let other_cfg = dir.path().join("other.toml");
    fs::write(&other_cfg, TINY.replace("num_classes = 3", "num_classes = 4")).unwrap();
    let other = dir.path().join("other");
    assert!(geosup(&["generate", "--config", s(&other_cfg), "--out", s(&other)]).status.success());
    let out = geosup(&["eval", "--checkpoint", s(&run.join("checkpoint.bin")), "--data", s(&other)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_image_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let class = fs::read_dir(data.join("train")).unwrap().next().unwrap().unwrap().path();
    fs::write(class.join("broken.png"), b"garbage").unwrap();
    let out = geosup(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.png"));
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = generate(dir.path());
    let run = dir.path().join("run");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join(".geosup.lock"), "1").unwrap();
    let out = geosup(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.join("metrics.jsonl").exists());
}

#[test]
fn ablate_writes_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = generate(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!("{}\n[ablation]\nseeds = [0, 1]\n", TINY.replace("epochs = 2", "epochs = 1")),
    );
    let out_dir = dir.path().join("ablate");
    let out = geosup(&["ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 9 * 2);
    assert!(table.lines().nth(1).unwrap().starts_with("baseline\t0\t"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisec::data::parse_dataset;
use noisec::eval::EvalReport;

const TINY: &str = r#"
[data]
source = "synthetic"
classes = 4
train_samples = 160
test_samples = 150
seed = 3

[experiment]
seed = 5
samples_per_attack = 8
detector_samples = 60

[experiment.classifier]
feature_dim = 16
channels = [4, 8, 8]
init_seed = 1
train = { epochs = 6, batch_size = 16, learning_rate = 0.05, seed = 2 }

[experiment.surrogate]
feature_dim = 12
channels = [4, 6, 8]
init_seed = 3
train = { epochs = 2, batch_size = 16, learning_rate = 0.05, seed = 4 }

[experiment.autoencoder]
channels = [4, 8, 8]
init_seed = 5
train = { epochs = 1, batch_size = 16, learning_rate = 0.001, seed = 6, denoise_sigma = 0.05, optimizer = { kind = "adam" } }

[[experiment.attacks]]
kind = "fgsm"
epsilon = 0.05

[[experiment.attacks]]
kind = "bim"
epsilon = 0.05
alpha = 0.01
iterations = 3

[[experiment.attacks]]
kind = "pgd"
epsilon = 0.05
alpha = 0.01
iterations = 3

[[experiment.attacks]]
kind = "jsma"
theta = 0.3
gamma = 0.05

[[experiment.attacks]]
kind = "cw"
c = 1.0
kappa = 0.0
steps = 5
learning_rate = 0.05

[[experiment.attacks]]
kind = "uap"
step = 0.5
iterations = 1
budget = 1.0

[[experiment.attacks]]
kind = "badnet"
target = 0
poison_rate = 0.1
"#;

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn noisec(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisec"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(output: Output) -> Output {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn gen_data_round_trips() {
    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("out");
    ok(noisec(&["gen-data"], &cfg, &out));
    let (train, hash) = parse_dataset(&fs::read(out.join("data/train.nsds")).unwrap()).unwrap();
    assert_eq!(train.len(), 160);
    assert_eq!(train.classes(), 4);
    assert_ne!(hash, [0u8; 32]);
    let (test, _) = parse_dataset(&fs::read(out.join("data/test.nsds")).unwrap()).unwrap();
    assert_eq!(test.len(), 150);

    // a config pointing at the generated files trains from them
    let files = TINY.replace(
        "source = \"synthetic\"\nclasses = 4\ntrain_samples = 160\ntest_samples = 150\nseed = 3",
        "source = \"files\"\ntrain = \"out/data/train.nsds\"\ntest = \"out/data/test.nsds\"",
    );
    let files_cfg = dir.path().join("files.toml");
    fs::write(&files_cfg, files).unwrap();
    ok(noisec(&["train"], &files_cfg, &dir.path().join("out2")));
    assert!(dir.path().join("out2/models/classifier.nsck").exists());
}

#[test]
fn train_is_deterministic_and_pipeline_runs() {
    let (dir, cfg) = setup(TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(noisec(&["train"], &cfg, &a));
    ok(noisec(&["train"], &cfg, &b));
    for role in ["classifier", "surrogate", "autoencoder", "backdoored"] {
        let name = format!("models/{role}.nsck");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{role}"
        );
    }
    assert!(a.join("models/bundle_target_gmm.nsbd").exists());
    assert!(a.join("models/bundle_backdoored_knn.nsbd").exists());

    ok(noisec(&["attack"], &cfg, &a));
    let batch = a.join("attacks/white_box_fgsm.nsab");
    assert!(batch.exists());
    assert!(a.join("attacks/black_box_pgd.nsab").exists());
    assert!(!a.join("attacks/black_box_badnet.nsab").exists());

    let out = ok(Command::new(env!("CARGO_BIN_EXE_noisec"))
        .args(["detect", "--detector", "gmm", "--input"])
        .arg(&batch)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap());
    assert!(String::from_utf8_lossy(&out.stdout).contains("flagged"));
    let csv = fs::read_to_string(a.join("detect/white_box_fgsm_target_gmm.csv")).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("models/train_summary.json")).unwrap())
            .unwrap();
    let hash = summary["config_hash"].as_str().unwrap();
    assert!(csv.starts_with(&format!("# config_hash={hash}\n")));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 8);

    ok(noisec(&["eval"], &cfg, &a));
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(a.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report.config_hash, hash);
    let white: Vec<_> = report
        .results
        .iter()
        .filter(|r| r.setting.name() == "white_box")
        .collect();
    assert_eq!(white.len(), 7);
    assert_eq!(white.iter().map(|r| r.detectors.len()).sum::<usize>(), 42);
    assert!(fs::read_to_string(a.join("report/report.csv"))
        .unwrap()
        .starts_with("# config_hash="));
    assert!(fs::read_to_string(a.join("report/roc.csv"))
        .unwrap()
        .contains("fpr,tpr"));

    ok(noisec(&["report"], &cfg, &a));
    let md = fs::read_to_string(a.join("report/summary.md")).unwrap();
    assert!(md.contains(hash));
    assert!(md.contains("| white_box | fgsm |"));
}

#[test]
fn seed_override_changes_the_hash() {
    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("out");
    ok(noisec(&["gen-data"], &cfg, &out));
    let (_, h1) = parse_dataset(&fs::read(out.join("data/train.nsds")).unwrap()).unwrap();
    ok(noisec(&["gen-data", "--seed", "99"], &cfg, &out));
    let (_, h2) = parse_dataset(&fs::read(out.join("data/train.nsds")).unwrap()).unwrap();
    assert_ne!(h1, h2);
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup("[data]\nsource = \"synthetic\"\n");
    let out = dir.path().join("out");
    assert_eq!(noisec(&["train"], &cfg, &out).status.code(), Some(1));

    let (dir, cfg) = setup(&TINY.replace(
        "[experiment]\nseed = 5\n",
        "[experiment]\nseed = 5\nmax_fpr = 1.5\n",
    ));
    assert_eq!(
        noisec(&["train"], &cfg, &dir.path().join("out"))
            .status
            .code(),
        Some(1)
    );

    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("out");
    // attacking before training is a missing prerequisite
    assert_eq!(noisec(&["attack"], &cfg, &out).status.code(), Some(2));
    assert_eq!(noisec(&["report"], &cfg, &out).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(noisec(&["train"], &missing, &out).status.code(), Some(2));

    // an undertrained backdoored model leaves no source it classifies correctly
    let (dir, cfg) = setup(
        &TINY
            .replace(
                "epochs = 6, batch_size = 16, learning_rate = 0.05, seed = 2",
                "epochs = 2, batch_size = 16, learning_rate = 0.05, seed = 2",
            )
            .replace("poison_rate = 0.1", "poison_rate = 0.2"),
    );
    let out = dir.path().join("out");
    ok(noisec(&["train"], &cfg, &out));
    let output = noisec(&["attack"], &cfg, &out);
    assert_eq!(
        output.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let files = TINY.replace(
        "source = \"synthetic\"\nclasses = 4\ntrain_samples = 160\ntest_samples = 150\nseed = 3",
        "source = \"files\"\ntrain = \"absent.nsds\"\ntest = \"absent.nsds\"",
    );
    let (dir, cfg) = setup(&files);
    assert_eq!(
        noisec(&["train"], &cfg, &dir.path().join("out"))
            .status
            .code(),
        Some(2)
    );

    // a dataset file with the wrong magic is rejected, not a crash
    let (dir, cfg) = setup(&files.replace("absent.nsds", "bad.nsds"));
    fs::write(dir.path().join("bad.nsds"), b"XXXX0000").unwrap();
    assert_eq!(
        noisec(&["train"], &cfg, &dir.path().join("out"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn models_from_another_config_are_rejected() {
    let (dir, cfg) = setup(TINY);
    let out = dir.path().join("out");
    ok(noisec(&["train"], &cfg, &out));
    let output = noisec(&["attack", "--seed", "6"], &cfg, &out);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("different configuration"));
}

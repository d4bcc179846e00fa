//! The six subcommands and the output directory layout they share.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use noisec::attacks::{
    read_attack_batch, write_attack_batch, AttackBatch, AttackKind, AttackRecord,
};
use noisec::data::{parse_dataset, write_dataset, LabeledDataset, DATASET_MAGIC};
use noisec::eval::{
    evaluate, fit_bundle, generate_attack, train_models, Backdoored, EvalReport, Setting,
    TrainedModels,
};
use noisec::models::{Autoencoder, Checkpoint, Classifier};
use noisec::numcore::Tensor;
use noisec::pipeline::{Bundle, DetectorKind};

use crate::config::ExperimentConfig;
use crate::error::CliError;

const POISONED_ENTRY: &str = "meta.backdoor.poisoned_samples";

/// A loaded configuration together with its hash and output directory.
pub struct Context {
    pub config: ExperimentConfig,
    pub hash: [u8; 32],
    pub out: PathBuf,
}

impl Context {
    pub fn new(
        mut config: ExperimentConfig,
        seed: Option<u64>,
        out: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        if let Some(seed) = seed {
            config.experiment.seed = seed;
        }
        let out = out.or_else(|| config.out_dir.clone()).ok_or_else(|| {
            CliError::Config("no output directory: set out_dir or pass --out".into())
        })?;
        let hash = config.hash();
        Ok(Self { config, hash, out })
    }

    fn hash_hex(&self) -> String {
        hex::encode(self.hash)
    }

    fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(dir)
    }

    fn model_path(&self, role: &str) -> PathBuf {
        self.out.join("models").join(format!("{role}.nsck"))
    }

    fn bundle_path(&self, model: &str, kind: DetectorKind) -> PathBuf {
        self.out
            .join("models")
            .join(format!("bundle_{model}_{kind}.nsbd"))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::missing(path, e))
}

/// Writes both splits under `data/`.
pub fn gen_data(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let (train, test) = ctx.config.load_data()?;
    let dir = ctx.dir("data")?;
    let mut written = Vec::new();
    for (name, ds) in [("train", &train), ("test", &test)] {
        let path = dir.join(format!("{name}.nsds"));
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, ds, &ctx.hash)?;
        write_file(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    config_hash: String,
    model_checksums: BTreeMap<String, String>,
    classifier_test_accuracy: f64,
    surrogate_test_accuracy: f64,
    backdoored_test_accuracy: Option<f64>,
}

fn role_checkpoints(models: &TrainedModels) -> Vec<(&'static str, Checkpoint)> {
    let mut out = vec![
        ("classifier", models.classifier.to_checkpoint()),
        ("surrogate", models.surrogate.to_checkpoint()),
        ("autoencoder", models.autoencoder.to_checkpoint()),
    ];
    if let Some(b) = &models.backdoored {
        let mut ck = b.classifier.to_checkpoint();
        ck.push_ints(POISONED_ENTRY, &[b.poisoned_samples]);
        out.push(("backdoored", ck));
    }
    out
}

/// Trains every model and fits one deployable bundle per detector kind.
pub fn train(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let (train, test) = ctx.config.load_data()?;
    let cfg = &ctx.config.experiment;
    let models = train_models(cfg, &train)?;
    let dir = ctx.dir("models")?;
    let mut written = Vec::new();
    for (role, mut ck) in role_checkpoints(&models) {
        ck.set_config_hash(&ctx.hash);
        let path = ctx.model_path(role);
        write_file(&path, ck.to_bytes())?;
        written.push(path);
    }
    let mut defended = vec![("target", &models.classifier)];
    if let Some(b) = &models.backdoored {
        defended.push(("backdoored", &b.classifier));
    }
    for (name, clf) in defended {
        for &kind in &cfg.detectors {
            let bundle = fit_bundle(cfg, &models.autoencoder, clf, &test, kind, ctx.hash)?;
            let path = ctx.bundle_path(name, kind);
            write_file(&path, bundle.to_bytes())?;
            written.push(path);
        }
    }
    let summary = TrainSummary {
        config_hash: ctx.hash_hex(),
        model_checksums: models.checksums(),
        classifier_test_accuracy: models.classifier.accuracy(&test)? as f64,
        surrogate_test_accuracy: models.surrogate.accuracy(&test)? as f64,
        backdoored_test_accuracy: match &models.backdoored {
            Some(b) => Some(b.classifier.accuracy(&test)? as f64),
            None => None,
        },
    };
    let path = dir.join("train_summary.json");
    write_file(
        &path,
        serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n",
    )?;
    written.push(path);
    Ok(written)
}

fn load_checkpoint(ctx: &Context, role: &str) -> Result<Checkpoint, CliError> {
    let path = ctx.model_path(role);
    let ck = Checkpoint::from_bytes(&read_file(&path)?).map_err(|e| CliError::missing(&path, e))?;
    if ck.config_hash() != Some(ctx.hash) {
        return Err(CliError::missing(
            &path,
            "trained under a different configuration; run `train` again",
        ));
    }
    Ok(ck)
}

/// Loads the checkpoints written by `train` for this configuration.
pub fn load_models(ctx: &Context) -> Result<TrainedModels, CliError> {
    let model_err =
        |role: &str, e: noisec::models::ModelError| CliError::missing(ctx.model_path(role), e);
    let classifier = Classifier::from_checkpoint(&load_checkpoint(ctx, "classifier")?)
        .map_err(|e| model_err("classifier", e))?;
    let surrogate = Classifier::from_checkpoint(&load_checkpoint(ctx, "surrogate")?)
        .map_err(|e| model_err("surrogate", e))?;
    let autoencoder = Autoencoder::from_checkpoint(&load_checkpoint(ctx, "autoencoder")?)
        .map_err(|e| model_err("autoencoder", e))?;
    let wants_backdoor = ctx
        .config
        .experiment
        .attacks
        .iter()
        .any(|a| a.kind() == AttackKind::Badnet);
    let backdoored = if wants_backdoor {
        let ck = load_checkpoint(ctx, "backdoored")?;
        let poisoned = ck
            .ints(POISONED_ENTRY)
            .map_err(|e| model_err("backdoored", e))?;
        Some(Backdoored {
            classifier: Classifier::from_checkpoint(&ck).map_err(|e| model_err("backdoored", e))?,
            poisoned_samples: poisoned.first().copied().unwrap_or(0),
        })
    } else {
        None
    };
    Ok(TrainedModels {
        classifier,
        surrogate,
        autoencoder,
        backdoored,
    })
}

/// Generates every configured attack cell and writes one batch file each.
pub fn attack(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let (_, test) = ctx.config.load_data()?;
    let models = load_models(ctx)?;
    let cfg = &ctx.config.experiment;
    let dir = ctx.dir("attacks")?;
    let mut written = Vec::new();
    for setting in [Setting::WhiteBox, Setting::BlackBox] {
        for attack in &cfg.attacks {
            let kind = attack.kind();
            if setting == Setting::BlackBox && !cfg.black_box.contains(&kind) {
                continue;
            }
            let defended = match (&models.backdoored, kind) {
                (Some(b), AttackKind::Badnet) => &b.classifier,
                _ => &models.classifier,
            };
            let attacker = match setting {
                Setting::WhiteBox => defended,
                Setting::BlackBox => &models.surrogate,
            };
            let generated = generate_attack(cfg, setting, attack, attacker, defended, &test)?;
            let batch = AttackBatch {
                kind,
                config: serde_json::to_string(attack).expect("attack config serialises"),
                seed: cfg.seed,
                config_hash: ctx.hash,
                records: generated
                    .samples
                    .into_iter()
                    .map(|s| AttackRecord {
                        index: s.source,
                        eta: s.eta,
                        success: s.success,
                    })
                    .collect(),
            };
            let path = dir.join(format!("{}_{}.nsab", setting.name(), kind.name()));
            let mut bytes = Vec::new();
            write_attack_batch(&mut bytes, &batch)?;
            write_file(&path, bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Images to screen: a dataset file, or an attack batch applied to the test split.
fn detect_inputs(ctx: &Context, input: &Path) -> Result<(Vec<usize>, Vec<Tensor>, bool), CliError> {
    let bytes = read_file(input)?;
    if bytes.starts_with(DATASET_MAGIC) {
        let (ds, _) = parse_dataset(&bytes).map_err(|e| CliError::missing(input, e))?;
        return Ok(((0..ds.len()).collect(), images(&ds), false));
    }
    let batch = read_attack_batch(bytes.as_slice()).map_err(|e| CliError::missing(input, e))?;
    let (_, test) = ctx.config.load_data()?;
    let mut indices = Vec::new();
    let mut xs = Vec::new();
    for r in &batch.records {
        if r.index >= test.len() {
            return Err(CliError::missing(
                input,
                format!("record index {} outside the test split", r.index),
            ));
        }
        let x = test.image_tensor(r.index);
        xs.push(
            x.zip_map(&r.eta, |a, b| a + b)
                .map_err(|e| CliError::missing(input, e))?,
        );
        indices.push(r.index);
    }
    Ok((indices, xs, batch.kind == AttackKind::Badnet))
}

fn images(ds: &LabeledDataset) -> Vec<Tensor> {
    (0..ds.len()).map(|i| ds.image_tensor(i)).collect()
}

/// Screens an input file with a trained bundle and writes per-sample verdicts.
pub fn detect(
    ctx: &Context,
    input: &Path,
    kind: DetectorKind,
    model: Option<&str>,
) -> Result<(PathBuf, usize, usize), CliError> {
    let (indices, xs, backdoor_batch) = detect_inputs(ctx, input)?;
    let model = model.unwrap_or(if backdoor_batch {
        "backdoored"
    } else {
        "target"
    });
    let bundle_path = ctx.bundle_path(model, kind);
    let bundle = Bundle::from_bytes(&read_file(&bundle_path)?)
        .map_err(|e| CliError::missing(&bundle_path, e))?;
    if bundle.config_hash != ctx.hash {
        return Err(CliError::missing(
            &bundle_path,
            "trained under a different configuration; run `train` again",
        ));
    }
    let mut csv = format!(
        "# config_hash={}\n# threshold={}\nindex,score,malicious\n",
        ctx.hash_hex(),
        bundle.threshold.theta
    );
    let mut flagged = 0usize;
    for chunk in indices.chunks(64).zip(xs.chunks(64)) {
        let (idx, batch) = chunk;
        let refs: Vec<&Tensor> = batch.iter().collect();
        let x = Tensor::stack(&refs)?;
        for (i, d) in idx.iter().zip(bundle.detect(&x)?) {
            flagged += usize::from(d.malicious);
            writeln!(csv, "{i},{},{}", d.score, u8::from(d.malicious)).expect("string write");
        }
    }
    let stem = input
        .file_stem()
        .map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let path = ctx
        .dir("detect")?
        .join(format!("{stem}_{model}_{kind}.csv"));
    write_file(&path, csv)?;
    Ok((path, flagged, indices.len()))
}

/// Runs the full evaluation, reusing checkpoints from `train` when they match.
pub fn eval(ctx: &Context) -> Result<(EvalReport, Vec<PathBuf>), CliError> {
    let (train, test) = ctx.config.load_data()?;
    let cfg = &ctx.config.experiment;
    let models = match load_models(ctx) {
        Ok(m) => m,
        Err(CliError::Missing { .. }) => train_models(cfg, &train)?,
        Err(e) => return Err(e),
    };
    let mut report = evaluate(cfg, &models, &test)?;
    report.config_hash = ctx.hash_hex();
    let dir = ctx.dir("report")?;
    let mut written = Vec::new();
    for (name, body) in [
        ("report.json", report.to_json()),
        ("report.csv", report.to_csv()),
        ("roc.csv", report.roc_csv()),
    ] {
        let path = dir.join(name);
        write_file(&path, body)?;
        written.push(path);
    }
    Ok((report, written))
}

/// Renders `report.json` from a previous `eval` as markdown tables.
pub fn report(ctx: &Context) -> Result<PathBuf, CliError> {
    let json_path = ctx.out.join("report").join("report.json");
    let text =
        String::from_utf8(read_file(&json_path)?).map_err(|e| CliError::missing(&json_path, e))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| CliError::missing(&json_path, e))?;
    if report.config_hash != ctx.hash_hex() {
        return Err(CliError::missing(
            &json_path,
            "produced by a different configuration; run `eval` again",
        ));
    }
    let path = ctx.dir("report")?.join("summary.md");
    write_file(&path, render_summary(&report))?;
    Ok(path)
}

pub fn render_summary(report: &EvalReport) -> String {
    let mut md = String::new();
    let m = &report.models;
    writeln!(
        md,
        "# Evaluation summary\n\nconfig hash: `{}`\n",
        report.config_hash
    )
    .ok();
    writeln!(md, "| model | value |\n|---|---|").ok();
    writeln!(
        md,
        "| classifier test accuracy | {:.4} |",
        m.classifier_test_accuracy
    )
    .ok();
    writeln!(
        md,
        "| surrogate test accuracy | {:.4} |",
        m.surrogate_test_accuracy
    )
    .ok();
    writeln!(
        md,
        "| autoencoder test MSE | {:.5} |",
        m.autoencoder_test_mse
    )
    .ok();
    if let Some(b) = &m.backdoor {
        writeln!(
            md,
            "| backdoored clean accuracy | {:.4} |",
            b.clean_accuracy
        )
        .ok();
        writeln!(
            md,
            "| backdoored triggered accuracy | {:.4} |",
            b.triggered_accuracy
        )
        .ok();
    }
    let detectors: Vec<String> = report
        .results
        .first()
        .map(|r| r.detectors.iter().map(|d| d.detector.clone()).collect())
        .unwrap_or_default();
    for (title, pick) in [
        (
            "AUROC",
            (|d: &noisec::eval::DetectorResult| d.auroc)
                as fn(&noisec::eval::DetectorResult) -> f64,
        ),
        ("Recall at calibrated threshold", |d| d.recall),
    ] {
        writeln!(md, "\n## {title}\n").ok();
        writeln!(md, "| setting | attack | {} |", detectors.join(" | ")).ok();
        writeln!(md, "|---|---|{}", "---|".repeat(detectors.len())).ok();
        for r in &report.results {
            let cells: Vec<String> = detectors
                .iter()
                .map(|name| {
                    r.detector(name)
                        .map_or("-".into(), |d| format!("{:.3}", pick(d)))
                })
                .collect();
            writeln!(
                md,
                "| {} | {} | {} |",
                r.setting.name(),
                r.attack,
                cells.join(" | ")
            )
            .ok();
        }
    }
    writeln!(md, "\n## Attacks\n").ok();
    writeln!(
        md,
        "| setting | attack | samples | success rate | mean L2 | KS malicious | KS benign |"
    )
    .ok();
    writeln!(md, "|---|---|---|---|---|---|---|").ok();
    for r in &report.results {
        writeln!(
            md,
            "| {} | {} | {} | {:.3} | {:.3} | {:.2} | {:.2} |",
            r.setting.name(),
            r.attack,
            r.samples,
            r.success_rate,
            r.mean_l2,
            r.ks_malicious_mean,
            r.ks_benign_mean
        )
        .ok();
    }
    md
}

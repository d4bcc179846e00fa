//! End-to-end experiment: train, attack, pair with matched benign controls,
//! score with every detector and baseline, and summarise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matched::{matched_norm_benign, permute_perturbation};
use super::metrics::{auroc, ks_neglogp, prf1_at_threshold, roc_points};
use super::report::{
    AttackResult, BackdoorSummary, CalibrationRow, DetectorResult, EvalReport, ModelSummary,
    ScoreKind,
};
use super::{config_hash, derive_seed, EvalError};
use crate::attacks::{
    apply_universal, badnet_apply, badnet_poison, bim, cw, fgsm, jsma, pgd, target_class, uap,
    AttackConfig, AttackError, AttackKind, CwParams, MaliciousSample, Trigger,
};
use crate::baselines::{magnet_jsd, magnet_l1, BaselineKind};
use crate::data::LabeledDataset;
use crate::models::{
    build_autoencoder, build_classifier, train_autoencoder, train_classifier, Autoencoder,
    AutoencoderSpec, Classifier, ClassifierSpec, DifferentiableClassifier, TrainConfig,
};
use crate::numcore::Tensor;
use crate::pipeline::{
    calibrate_threshold, fit_detector, noise_features_of, Bundle, Detector, DetectorKind,
    DetectorParams, Threshold,
};

const CHUNK: usize = 64;

/// Whether attacks are crafted on the defended model or on a surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    WhiteBox,
    BlackBox,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::WhiteBox => "white_box",
            Setting::BlackBox => "black_box",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub feature_dim: usize,
    /// Conv block widths; defaults scale with the input side.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    pub init_seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    #[serde(default)]
    pub channels: Option<[usize; 3]>,
    pub init_seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub classifier: ClassifierConfig,
    /// The attacker's model for black-box attacks.
    pub surrogate: ClassifierConfig,
    pub autoencoder: AutoencoderConfig,
    pub attacks: Vec<AttackConfig>,
    /// Attacks also run in the black-box setting.
    #[serde(default = "default_black_box")]
    pub black_box: Vec<AttackKind>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorKind>,
    #[serde(default)]
    pub detector: DetectorParams,
    #[serde(default = "default_max_fpr")]
    pub max_fpr: f64,
    /// Malicious samples generated per attack and setting.
    pub samples_per_attack: usize,
    /// Benign test samples reserved for fitting and calibrating detectors.
    pub detector_samples: usize,
    /// Share of the reserved samples used for calibration.
    #[serde(default = "default_calibration_fraction")]
    pub calibration_fraction: f64,
}

fn default_black_box() -> Vec<AttackKind> {
    vec![AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd]
}

fn default_detectors() -> Vec<DetectorKind> {
    DetectorKind::ALL.to_vec()
}

fn default_max_fpr() -> f64 {
    0.01
}

fn default_calibration_fraction() -> f64 {
    0.2
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if !(self.max_fpr > 0.0 && self.max_fpr < 1.0) {
            return bad(format!("max_fpr {}", self.max_fpr));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad(format!(
                "calibration_fraction {}",
                self.calibration_fraction
            ));
        }
        if self.samples_per_attack < 2 {
            return bad("samples_per_attack must be at least 2".into());
        }
        let (fit, calib) = self.detector_split();
        if fit == 0 || calib == 0 {
            return bad(format!(
                "detector_samples {} leaves an empty fit or calibration part",
                self.detector_samples
            ));
        }
        let mut seen = Vec::new();
        for a in &self.attacks {
            a.validate()?;
            if seen.contains(&a.kind()) {
                return bad(format!("attack {} listed twice", a.kind()));
            }
            seen.push(a.kind());
        }
        if self.black_box.contains(&AttackKind::Badnet) {
            return bad("badnet has no black-box setting".into());
        }
        Ok(())
    }

    /// Sizes of the detector fit and calibration parts.
    pub fn detector_split(&self) -> (usize, usize) {
        let calib = (self.detector_samples as f64 * self.calibration_fraction).round() as usize;
        (
            self.detector_samples - calib.min(self.detector_samples),
            calib,
        )
    }

    fn badnet(&self) -> Option<(usize, f32, usize)> {
        self.attacks.iter().find_map(|a| match *a {
            AttackConfig::Badnet {
                target,
                poison_rate,
                trigger_size,
            } => Some((target, poison_rate, trigger_size)),
            _ => None,
        })
    }
}

/// A classifier trained on a poisoned copy of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Backdoored {
    pub classifier: Classifier,
    pub poisoned_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub classifier: Classifier,
    pub surrogate: Classifier,
    pub autoencoder: Autoencoder,
    pub backdoored: Option<Backdoored>,
}

impl TrainedModels {
    /// SHA-256 of every model checkpoint, keyed by role.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        let digest = |bytes: Vec<u8>| hex::encode(Sha256::digest(bytes));
        let mut out = BTreeMap::new();
        out.insert(
            "classifier".into(),
            digest(self.classifier.to_checkpoint().to_bytes()),
        );
        out.insert(
            "surrogate".into(),
            digest(self.surrogate.to_checkpoint().to_bytes()),
        );
        out.insert(
            "autoencoder".into(),
            digest(self.autoencoder.to_checkpoint().to_bytes()),
        );
        if let Some(b) = &self.backdoored {
            out.insert(
                "backdoored".into(),
                digest(b.classifier.to_checkpoint().to_bytes()),
            );
        }
        out
    }
}

fn stage<T, E: Into<EvalError>>(name: &'static str, r: Result<T, E>) -> Result<T, EvalError> {
    r.map_err(|e| EvalError::Stage {
        stage: name,
        source: Box::new(e.into()),
    })
}

fn classifier_spec(cfg: &ClassifierConfig, data: &LabeledDataset) -> ClassifierSpec {
    let mut spec = ClassifierSpec::new(data.shape(), data.classes(), cfg.feature_dim);
    if let Some(ch) = &cfg.channels {
        spec.channels = ch.clone();
    }
    spec
}

fn train_one(cfg: &ClassifierConfig, data: &LabeledDataset) -> Result<Classifier, EvalError> {
    let model = build_classifier(classifier_spec(cfg, data), cfg.init_seed)?;
    Ok(train_classifier(model, data, &cfg.train)?.0)
}

pub fn trigger_for(data_shape: [usize; 3], size: usize) -> Result<Trigger, AttackError> {
    Trigger::yellow_square(data_shape, size)
}

/// Trains the defended classifier, the surrogate, the autoencoder and, when a
/// BadNet attack is configured, a backdoored twin of the defended classifier.
pub fn train_models(cfg: &EvalConfig, train: &LabeledDataset) -> Result<TrainedModels, EvalError> {
    stage("config", cfg.validate())?;
    let classifier = stage("train classifier", train_one(&cfg.classifier, train))?;
    let surrogate = stage("train surrogate", train_one(&cfg.surrogate, train))?;
    let mut ae_spec = AutoencoderSpec::new(train.shape());
    if let Some(ch) = cfg.autoencoder.channels {
        ae_spec.channels = ch;
    }
    let autoencoder = stage(
        "train autoencoder",
        build_autoencoder(ae_spec, cfg.autoencoder.init_seed)
            .and_then(|ae| train_autoencoder(ae, train, &cfg.autoencoder.train))
            .map(|(ae, _)| ae),
    )?;
    let backdoored = match cfg.badnet() {
        None => None,
        Some((target, rate, size)) => {
            let trigger = stage("poison", trigger_for(train.shape(), size))?;
            let (poisoned, chosen) = stage(
                "poison",
                badnet_poison(
                    train,
                    &trigger,
                    target,
                    rate,
                    derive_seed(cfg.seed, "badnet/poison"),
                ),
            )?;
            Some(Backdoored {
                classifier: stage("train backdoored", train_one(&cfg.classifier, &poisoned))?,
                poisoned_samples: chosen.len(),
            })
        }
    };
    Ok(TrainedModels {
        classifier,
        surrogate,
        autoencoder,
        backdoored,
    })
}

/// Trains every model, then evaluates.
pub fn run_experiment(
    cfg: &EvalConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<EvalReport, EvalError> {
    let models = train_models(cfg, train)?;
    evaluate(cfg, &models, test)
}

/// A defended model with its fitted detectors and calibrated thresholds.
struct Defended<'a> {
    ae: &'a Autoencoder,
    classifier: &'a Classifier,
    detectors: Vec<Detector>,
    thresholds: BTreeMap<ScoreKind, Threshold>,
}

/// Noise features and every score of a set of images.
struct Scored {
    features: Vec<Vec<f32>>,
    scores: BTreeMap<ScoreKind, Vec<f64>>,
}

impl<'a> Defended<'a> {
    fn build(
        name: &'static str,
        cfg: &EvalConfig,
        ae: &'a Autoencoder,
        classifier: &'a Classifier,
        fit: &[Tensor],
        calib: &[Tensor],
        rows: &mut Vec<CalibrationRow>,
    ) -> Result<Self, EvalError> {
        let fit_features = noise_features_of(ae, classifier, fit)?;
        let detectors = cfg
            .detectors
            .iter()
            .map(|&k| {
                let mut params = cfg.detector.clone();
                params.gmm.seed = derive_seed(cfg.seed, &format!("{name}/gmm"));
                fit_detector(k, &fit_features, &params)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut me = Self {
            ae,
            classifier,
            detectors,
            thresholds: BTreeMap::new(),
        };
        let scored = me.score(calib)?;
        for (kind, scores) in scored.scores {
            let threshold = calibrate_threshold(&scores, cfg.max_fpr)?;
            rows.push(CalibrationRow {
                model: name.to_string(),
                detector: kind.name().to_string(),
                theta: threshold.theta,
                max_fpr: threshold.max_fpr,
                calibration_size: threshold.calibration_size,
                calibration_fpr: threshold.flagged_fraction(&scores),
                calibration_scores: scores,
            });
            me.thresholds.insert(kind, threshold);
        }
        Ok(me)
    }

    fn score(&self, images: &[Tensor]) -> Result<Scored, EvalError> {
        let features = noise_features_of(self.ae, self.classifier, images)?;
        let mut scores = BTreeMap::new();
        for det in &self.detectors {
            scores.insert(ScoreKind::Noise(det.kind()), det.scores(&features)?);
        }
        let (mut l1, mut jsd) = (Vec::new(), Vec::new());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let batch = Tensor::stack(&refs)?;
            l1.extend(magnet_l1(self.ae, &batch)?);
            jsd.extend(magnet_jsd(self.ae, self.classifier, &batch)?);
        }
        scores.insert(ScoreKind::Baseline(BaselineKind::MagnetL1), l1);
        scores.insert(ScoreKind::Baseline(BaselineKind::MagnetJsd), jsd);
        Ok(Scored { features, scores })
    }

    /// Report order: noise detectors as configured, then the baselines.
    fn kinds(&self) -> Vec<ScoreKind> {
        let mut kinds: Vec<ScoreKind> = self
            .detectors
            .iter()
            .map(|d| ScoreKind::Noise(d.kind()))
            .collect();
        kinds.extend(BaselineKind::ALL.map(ScoreKind::Baseline));
        kinds
    }
}

/// A deployable bundle for one detector kind, fitted and calibrated on the
/// reserved benign test samples exactly as in [`evaluate`].
pub fn fit_bundle(
    cfg: &EvalConfig,
    autoencoder: &Autoencoder,
    classifier: &Classifier,
    test: &LabeledDataset,
    kind: DetectorKind,
    config_hash: [u8; 32],
) -> Result<Bundle, EvalError> {
    cfg.validate()?;
    let (n_fit, n_calib) = cfg.detector_split();
    if test.len() < n_fit + n_calib {
        return Err(EvalError::InvalidConfig(format!(
            "test split of {} samples is smaller than {} detector samples",
            test.len(),
            cfg.detector_samples
        )));
    }
    let fit = noise_features_of(autoencoder, classifier, &images(test, 0..n_fit))?;
    let calib = noise_features_of(
        autoencoder,
        classifier,
        &images(test, n_fit..n_fit + n_calib),
    )?;
    let mut params = cfg.detector.clone();
    params.gmm.seed = derive_seed(cfg.seed, "target/gmm");
    let detector = fit_detector(kind, &fit, &params)?;
    let threshold = calibrate_threshold(&detector.scores(&calib)?, cfg.max_fpr)?;
    Ok(Bundle {
        autoencoder: autoencoder.clone(),
        classifier: classifier.clone(),
        detector,
        threshold,
        config_hash,
    })
}

fn images(ds: &LabeledDataset, range: std::ops::Range<usize>) -> Vec<Tensor> {
    range.map(|i| ds.image_tensor(i)).collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

fn reconstruction_mse(ae: &Autoencoder, test: &LabeledDataset) -> Result<f64, EvalError> {
    let (mut total, mut count) = (0.0f64, 0usize);
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let (x, _) = test.batch(chunk);
        let noise = ae.recon_noise(&x)?;
        total += noise
            .data()
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>();
        count += noise.len();
    }
    Ok(total / count.max(1) as f64)
}

fn backdoor_summary(
    cfg: &EvalConfig,
    models: &TrainedModels,
    test: &LabeledDataset,
) -> Result<Option<BackdoorSummary>, EvalError> {
    let (Some(b), Some((target, _, size))) = (&models.backdoored, cfg.badnet()) else {
        return Ok(None);
    };
    let trigger = trigger_for(test.shape(), size)?;
    let (mut correct, mut hit, mut n) = (0usize, 0usize, 0usize);
    for i in (0..test.len()).filter(|&i| test.label(i) != target) {
        let stamped = badnet_apply(&test.image_tensor(i), &trigger)?;
        let pred = b.classifier.classify(&stamped)?;
        correct += usize::from(pred == test.label(i));
        hit += usize::from(pred == target);
        n += 1;
    }
    Ok(Some(BackdoorSummary {
        target_class: target,
        poisoned_samples: b.poisoned_samples,
        clean_accuracy: b.classifier.accuracy(test)? as f64,
        twin_clean_accuracy: models.classifier.accuracy(test)? as f64,
        triggered_accuracy: correct as f64 / n.max(1) as f64,
        trigger_success_rate: hit as f64 / n.max(1) as f64,
    }))
}

/// Crafts one malicious input, or `None` when the attack gives up on this source.
fn craft<M: DifferentiableClassifier + ?Sized>(
    attack: &AttackConfig,
    attacker: &M,
    x: &Tensor,
    label: usize,
    seed: u64,
    universal: Option<&Tensor>,
    trigger: Option<&Trigger>,
) -> Result<Option<Tensor>, AttackError> {
    let k = attacker.num_classes();
    let out = match *attack {
        AttackConfig::Fgsm { epsilon } => fgsm(attacker, x, label, epsilon),
        AttackConfig::Bim {
            epsilon,
            alpha,
            iterations,
        } => bim(attacker, x, label, epsilon, alpha, iterations),
        AttackConfig::Pgd {
            epsilon,
            alpha,
            iterations,
            random_start,
        } => pgd(
            attacker,
            x,
            label,
            epsilon,
            alpha,
            iterations,
            random_start,
            seed,
        ),
        AttackConfig::Jsma { theta, gamma } => {
            jsma(attacker, x, target_class(label, k), theta, gamma)
        }
        AttackConfig::Cw {
            c,
            kappa,
            steps,
            learning_rate,
        } => cw(
            attacker,
            x,
            target_class(label, k),
            &CwParams {
                c,
                kappa,
                steps,
                learning_rate,
            },
        ),
        AttackConfig::Uap(_) => {
            apply_universal(x, universal.expect("universal perturbation computed"))
        }
        AttackConfig::Badnet { .. } => badnet_apply(x, trigger.expect("trigger built")),
    };
    match out {
        Ok(t) => Ok(Some(t)),
        Err(AttackError::NoSalientFeature) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores every configured attack against already-trained models.
pub fn evaluate(
    cfg: &EvalConfig,
    models: &TrainedModels,
    test: &LabeledDataset,
) -> Result<EvalReport, EvalError> {
    stage("config", cfg.validate())?;
    let (n_fit, n_calib) = cfg.detector_split();
    if test.len() <= cfg.detector_samples {
        return Err(EvalError::InvalidConfig(format!(
            "test split of {} samples leaves nothing to attack after {} detector samples",
            test.len(),
            cfg.detector_samples
        )));
    }
    let fit = images(test, 0..n_fit);
    let calib = images(test, n_fit..n_fit + n_calib);
    let mut calibration = Vec::new();
    let target = stage(
        "fit detectors",
        Defended::build(
            "target",
            cfg,
            &models.autoencoder,
            &models.classifier,
            &fit,
            &calib,
            &mut calibration,
        ),
    )?;
    let backdoored = match &models.backdoored {
        Some(b) => Some(stage(
            "fit detectors",
            Defended::build(
                "backdoored",
                cfg,
                &models.autoencoder,
                &b.classifier,
                &fit,
                &calib,
                &mut calibration,
            ),
        )?),
        None => None,
    };
    let summary = ModelSummary {
        classifier_test_accuracy: stage("summary", models.classifier.accuracy(test))? as f64,
        surrogate_test_accuracy: stage("summary", models.surrogate.accuracy(test))? as f64,
        autoencoder_test_mse: stage("summary", reconstruction_mse(&models.autoencoder, test))?,
        backdoor: stage("summary", backdoor_summary(cfg, models, test))?,
    };

    let mut results = Vec::new();
    for setting in [Setting::WhiteBox, Setting::BlackBox] {
        for attack in &cfg.attacks {
            let kind = attack.kind();
            if setting == Setting::BlackBox && !cfg.black_box.contains(&kind) {
                continue;
            }
            let defended = if kind == AttackKind::Badnet {
                backdoored
                    .as_ref()
                    .expect("backdoored model trained with badnet configured")
            } else {
                &target
            };
            let attacker: &Classifier = match setting {
                Setting::WhiteBox => defended.classifier,
                Setting::BlackBox => &models.surrogate,
            };
            let result = stage(
                "attack",
                run_cell(cfg, setting, attack, attacker, defended, test),
            )?;
            results.push(result);
        }
    }
    Ok(EvalReport {
        config_hash: hex::encode(config_hash(cfg)),
        config: cfg.clone(),
        model_checksums: models.checksums(),
        models: summary,
        calibration,
        results,
    })
}

/// Malicious samples crafted for one attack and setting.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAttack {
    pub samples: Vec<MaliciousSample>,
    /// Sources on which the attack gave up.
    pub skipped: usize,
}

/// Crafts up to `samples_per_attack` malicious inputs from the attack pool of
/// `test` (everything after the detector samples). Sources are the pool images
/// the attacker classifies correctly, excluding the backdoor target class for
/// BadNet; success is judged on `defended`.
pub fn generate_attack(
    cfg: &EvalConfig,
    setting: Setting,
    attack: &AttackConfig,
    attacker: &Classifier,
    defended: &Classifier,
    test: &LabeledDataset,
) -> Result<GeneratedAttack, EvalError> {
    let kind = attack.kind();
    let label_of = format!("{}/{}", setting.name(), kind.name());
    let badnet_target = match *attack {
        AttackConfig::Badnet { target, .. } => Some(target),
        _ => None,
    };
    let mut sources = Vec::new();
    for i in cfg.detector_samples..test.len() {
        if sources.len() == cfg.samples_per_attack {
            break;
        }
        if badnet_target == Some(test.label(i)) {
            continue;
        }
        if attacker.classify(&test.image_tensor(i))? == test.label(i) {
            sources.push(i);
        }
    }
    if sources.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "{label_of}: fewer than two attackable samples"
        )));
    }
    let naturals: Vec<Tensor> = sources.iter().map(|&i| test.image_tensor(i)).collect();
    let universal = match attack {
        AttackConfig::Uap(params) => Some(uap(attacker, &naturals, params)?),
        _ => None,
    };
    let trigger = match *attack {
        AttackConfig::Badnet { trigger_size, .. } => Some(trigger_for(test.shape(), trigger_size)?),
        _ => None,
    };
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (&i, x) in sources.iter().zip(&naturals) {
        let seed = derive_seed(cfg.seed, &format!("{label_of}/{i}"));
        match craft(
            attack,
            attacker,
            x,
            test.label(i),
            seed,
            universal.as_ref(),
            trigger.as_ref(),
        )? {
            Some(x_mal) => samples.push(MaliciousSample::new(
                x,
                x_mal,
                test.label(i),
                i,
                kind,
                defended,
            )?),
            None => skipped += 1,
        }
    }
    Ok(GeneratedAttack { samples, skipped })
}

fn run_cell(
    cfg: &EvalConfig,
    setting: Setting,
    attack: &AttackConfig,
    attacker: &Classifier,
    defended: &Defended<'_>,
    test: &LabeledDataset,
) -> Result<AttackResult, EvalError> {
    let kind = attack.kind();
    let label_of = format!("{}/{}", setting.name(), kind.name());
    let generated = generate_attack(cfg, setting, attack, attacker, defended.classifier, test)?;
    let (mut mal, mut ben, mut nat) = (Vec::new(), Vec::new(), Vec::new());
    let mut successes = 0usize;
    let (mut l2s, mut linfs, mut ben_pre, mut ben_post) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for sample in generated.samples {
        let x = test.image_tensor(sample.source);
        let benign_seed = derive_seed(cfg.seed, &format!("{label_of}/{}/benign", sample.source));
        let x_ben = matched_norm_benign(&x, &sample.eta, benign_seed)?;
        ben_pre.push(l2(permute_perturbation(&sample.eta, benign_seed).data()));
        successes += usize::from(sample.success);
        l2s.push(l2(sample.eta.data()));
        linfs.push(sample.eta.max_abs() as f64);
        ben_post.push(l2(x_ben.zip_map(&x, |a, b| a - b)?.data()));
        mal.push(sample.x_mal);
        ben.push(x_ben);
        nat.push(x);
    }
    if mal.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "{label_of}: fewer than two malicious samples"
        )));
    }
    let mal_scored = defended.score(&mal)?;
    let ben_scored = defended.score(&ben)?;
    let nat_features = noise_features_of(defended.ae, defended.classifier, &nat)?;
    let ks_malicious = ks_neglogp(&mal_scored.features, &nat_features)?;
    let ks_benign = ks_neglogp(&ben_scored.features, &nat_features)?;

    let mut detectors = Vec::new();
    for score_kind in defended.kinds() {
        let (b, m) = (
            &ben_scored.scores[&score_kind],
            &mal_scored.scores[&score_kind],
        );
        let threshold = defended.thresholds[&score_kind];
        let prf = prf1_at_threshold(b, m, threshold.theta)?;
        detectors.push(DetectorResult {
            detector: score_kind.name().to_string(),
            auroc: auroc(b, m)?,
            threshold: threshold.theta,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            fpr: prf.fpr,
            roc: roc_points(b, m)?,
        });
    }
    Ok(AttackResult {
        setting,
        attack: kind.name().to_string(),
        samples: mal.len(),
        skipped: generated.skipped,
        success_rate: successes as f64 / mal.len() as f64,
        mean_l2: mean(l2s.iter().copied()),
        mean_linf: mean(linfs),
        mean_benign_l2_pre_clip: mean(ben_pre),
        mean_benign_l2_post_clip: mean(ben_post),
        ks_malicious_mean: mean(ks_malicious.iter().copied()),
        ks_benign_mean: mean(ks_benign.iter().copied()),
        ks_malicious,
        ks_benign,
        detectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_split_sizes() {
        let cfg: EvalConfig = serde_json::from_value(serde_json::json!({
            "seed": 1,
            "classifier": {"feature_dim": 8, "init_seed": 1, "train": {"epochs": 1, "batch_size": 4, "learning_rate": 0.1, "seed": 1}},
            "surrogate": {"feature_dim": 8, "init_seed": 2, "train": {"epochs": 1, "batch_size": 4, "learning_rate": 0.1, "seed": 2}},
            "autoencoder": {"init_seed": 3, "train": {"epochs": 1, "batch_size": 4, "learning_rate": 0.001, "seed": 3}},
            "attacks": [{"kind": "fgsm", "epsilon": 0.03}],
            "samples_per_attack": 10,
            "detector_samples": 50
        }))
        .unwrap();
        assert_eq!(cfg.detector_split(), (40, 10));
        assert_eq!(cfg.max_fpr, 0.01);
        assert_eq!(cfg.detectors, DetectorKind::ALL.to_vec());
        cfg.validate().unwrap();
    }
}

//! Evasion attacks (FGSM, BIM, PGD, JSMA, UAP, C&W) and BadNet poisoning.
//!
//! Every attack works on a single `[c, h, w]` image in `[0, 1]` against any
//! [`DifferentiableClassifier`] and returns the adversarial image; the
//! success flag of a [`MaliciousSample`] is judged by a separate scorer model,
//! which is the target itself for white-box runs and differs for transfer runs.

mod badnet;
mod batch;
mod cw;
mod gradient;
mod jsma;
mod uap;

pub use badnet::{badnet_apply, badnet_poison, Trigger};
pub use batch::{
    read_attack_batch, write_attack_batch, AttackBatch, AttackRecord, ATTACK_BATCH_MAGIC,
};
pub use cw::{cw, cw_objective, CwParams};
pub use gradient::{bim, fgsm, input_gradient, pgd, project_linf};
pub use jsma::{jsma, jsma_saliency};
pub use uap::{apply_universal, deepfool_step, uap, UapParams};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::DifferentiableClassifier;
use crate::numcore::{NumError, Tensor};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid attack parameter: {0}")]
    InvalidParameter(String),
    #[error("no feature with positive saliency remains")]
    NoSalientFeature,
    #[error("no boundary direction found: the model is locally constant")]
    NoBoundaryDirection,
    #[error("optimizer diverged at step {0}")]
    Diverged(usize),
    #[error("trigger of size {patch:?} at ({row}, {col}) does not fit image {image:?}")]
    TriggerOutOfBounds {
        patch: [usize; 3],
        row: usize,
        col: usize,
        image: [usize; 3],
    },
    #[error("malformed attack batch: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Jsma,
    Uap,
    Cw,
    Badnet,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::Jsma,
        AttackKind::Cw,
        AttackKind::Uap,
        AttackKind::Badnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Jsma => "jsma",
            AttackKind::Uap => "uap",
            AttackKind::Cw => "cw",
            AttackKind::Badnet => "badnet",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one attack, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AttackConfig {
    Fgsm {
        epsilon: f32,
    },
    Bim {
        epsilon: f32,
        alpha: f32,
        iterations: usize,
    },
    Pgd {
        epsilon: f32,
        alpha: f32,
        iterations: usize,
        #[serde(default = "yes")]
        random_start: bool,
    },
    Jsma {
        theta: f32,
        gamma: f32,
    },
    Cw {
        c: f32,
        kappa: f32,
        steps: usize,
        learning_rate: f32,
    },
    Uap(UapParams),
    Badnet {
        target: usize,
        poison_rate: f32,
        #[serde(default = "two")]
        trigger_size: usize,
    },
}

fn yes() -> bool {
    true
}

fn two() -> usize {
    2
}

impl AttackConfig {
    pub fn kind(&self) -> AttackKind {
        match self {
            AttackConfig::Fgsm { .. } => AttackKind::Fgsm,
            AttackConfig::Bim { .. } => AttackKind::Bim,
            AttackConfig::Pgd { .. } => AttackKind::Pgd,
            AttackConfig::Jsma { .. } => AttackKind::Jsma,
            AttackConfig::Cw { .. } => AttackKind::Cw,
            AttackConfig::Uap(_) => AttackKind::Uap,
            AttackConfig::Badnet { .. } => AttackKind::Badnet,
        }
    }

    /// Checks the parameter ranges every attack requires.
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::InvalidParameter(m));
        match *self {
            AttackConfig::Fgsm { epsilon } if !(epsilon >= 0.0) => {
                bad(format!("epsilon {epsilon}"))
            }
            AttackConfig::Bim { epsilon, alpha, .. } | AttackConfig::Pgd { epsilon, alpha, .. }
                if !(epsilon >= 0.0) || !(alpha > 0.0) =>
            {
                bad(format!("epsilon {epsilon}, alpha {alpha}"))
            }
            AttackConfig::Jsma { theta, gamma }
                if theta == 0.0 || !(0.0..=1.0).contains(&gamma) =>
            {
                bad(format!("theta {theta}, gamma {gamma}"))
            }
            AttackConfig::Cw {
                c,
                kappa,
                learning_rate,
                ..
            } if !(c >= 0.0) || !(kappa >= 0.0) || !(learning_rate > 0.0) => bad(format!(
                "c {c}, kappa {kappa}, learning rate {learning_rate}"
            )),
            AttackConfig::Uap(ref p) => p.validate(),
            AttackConfig::Badnet {
                poison_rate,
                trigger_size,
                ..
            } if !(poison_rate > 0.0 && poison_rate <= 1.0) || trigger_size == 0 => bad(format!(
                "poison rate {poison_rate}, trigger size {trigger_size}"
            )),
            _ => Ok(()),
        }
    }
}

/// Target class used by the targeted attacks.
pub fn target_class(label: usize, classes: usize) -> usize {
    (label + 1) % classes
}

/// An adversarial or triggered input together with its perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaliciousSample {
    pub x_mal: Tensor,
    /// `x_mal - x_nat`.
    pub eta: Tensor,
    /// Index of the natural sample in its dataset.
    pub source: usize,
    pub kind: AttackKind,
    /// Whether the scorer's prediction differs from the true label.
    pub success: bool,
}

impl MaliciousSample {
    pub fn new<M: DifferentiableClassifier + ?Sized>(
        x_nat: &Tensor,
        x_mal: Tensor,
        label: usize,
        source: usize,
        kind: AttackKind,
        scorer: &M,
    ) -> Result<Self, AttackError> {
        let eta = x_mal.zip_map(x_nat, |a, b| a - b)?;
        let success = scorer.classify(&x_mal)? != label;
        Ok(Self {
            x_mal,
            eta,
            source,
            kind,
            success,
        })
    }
}

pub(crate) fn check_image<M: DifferentiableClassifier + ?Sized>(
    model: &M,
    x: &Tensor,
) -> Result<(), AttackError> {
    if x.shape() != model.input_shape() {
        return Err(NumError::Shape(format!(
            "image {:?} for model {:?}",
            x.shape(),
            model.input_shape()
        ))
        .into());
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AttackError::InvalidParameter("input outside [0, 1]".into()));
    }
    Ok(())
}

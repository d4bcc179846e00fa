//! Anomaly detectors over noise feature vectors. Every score grows with
//! distance from the benign training mass.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm, Gmm, GmmOptions};
use super::PipelineError;
use crate::models::Checkpoint;
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Knn,
    Gmm,
    Max,
    Std,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Knn,
        DetectorKind::Gmm,
        DetectorKind::Max,
        DetectorKind::Std,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Knn => "knn",
            DetectorKind::Gmm => "gmm",
            DetectorKind::Max => "max",
            DetectorKind::Std => "std",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    /// Neighbour rank used by the KNN score.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub gmm: GmmOptions,
}

fn default_k() -> usize {
    5
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            k: default_k(),
            gmm: GmmOptions::default(),
        }
    }
}

/// Stored training features scored by the distance to the k-th nearest one.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    k: usize,
    dim: usize,
    /// Row-major `[n, dim]`.
    points: Vec<f32>,
}

impl Knn {
    pub fn fit(features: &[Vec<f32>], k: usize) -> Result<Self, PipelineError> {
        if k == 0 {
            return Err(PipelineError::InvalidParameter("k must be positive".into()));
        }
        if features.len() < k + 1 {
            return Err(PipelineError::InsufficientData {
                need: k + 1,
                got: features.len(),
            });
        }
        let dim = check_rows(features)?;
        Ok(Self {
            k,
            dim,
            points: features.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance to the k-th nearest stored point (a stored copy of
    /// the query counts as a neighbour at distance zero).
    pub fn score(&self, x: &[f32]) -> f64 {
        let mut dist: Vec<f64> = self
            .points
            .chunks(self.dim)
            .map(|p| {
                p.iter()
                    .zip(x)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b as f64;
                        d * d
                    })
                    .sum::<f64>()
            })
            .collect();
        let (_, kth, _) = dist.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        kth.sqrt()
    }
}

/// A fitted detector.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Knn(Knn),
    Gmm(Gmm),
    /// Stateless; only the expected feature length is kept.
    Max(usize),
    Std(usize),
}

fn check_rows(features: &[Vec<f32>]) -> Result<usize, PipelineError> {
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(PipelineError::InsufficientData { need: 1, got: 0 });
    }
    for row in features {
        if row.len() != dim {
            return Err(PipelineError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::InvalidParameter(
                "non-finite feature value".into(),
            ));
        }
    }
    Ok(dim)
}

/// Fits a detector of the given kind on benign feature vectors.
pub fn fit_detector(
    kind: DetectorKind,
    features: &[Vec<f32>],
    params: &DetectorParams,
) -> Result<Detector, PipelineError> {
    Ok(match kind {
        DetectorKind::Knn => Detector::Knn(Knn::fit(features, params.k)?),
        DetectorKind::Gmm => {
            check_rows(features)?;
            let data: Vec<Vec<f64>> = features
                .iter()
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect();
            let mut model = fit_gmm(&data, &params.gmm)?.model;
            model.round_to_f32();
            Detector::Gmm(model)
        }
        DetectorKind::Max => Detector::Max(check_rows(features)?),
        DetectorKind::Std => Detector::Std(check_rows(features)?),
    })
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Knn(_) => DetectorKind::Knn,
            Detector::Gmm(_) => DetectorKind::Gmm,
            Detector::Max(_) => DetectorKind::Max,
            Detector::Std(_) => DetectorKind::Std,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Detector::Knn(m) => m.dim,
            Detector::Gmm(m) => m.dim(),
            Detector::Max(d) | Detector::Std(d) => *d,
        }
    }

    /// Anomaly score of one feature vector; larger is more anomalous.
    pub fn score(&self, features: &[f32]) -> Result<f64, PipelineError> {
        if features.len() != self.dim() {
            return Err(PipelineError::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        Ok(match self {
            Detector::Knn(m) => m.score(features),
            Detector::Gmm(m) => {
                -m.log_density(&features.iter().map(|&v| v as f64).collect::<Vec<_>>())
            }
            Detector::Max(_) => features.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64,
            Detector::Std(_) => {
                let n = features.len() as f64;
                let mean = features.iter().map(|&v| v as f64).sum::<f64>() / n;
                (features
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>()
                    / n)
                    .sqrt()
            }
        })
    }

    pub fn scores(&self, features: &[Vec<f32>]) -> Result<Vec<f64>, PipelineError> {
        features.iter().map(|f| self.score(f)).collect()
    }

    /// Fitted state as named arrays.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_ints("detector.dim", &[self.dim()]);
        match self {
            Detector::Knn(m) => {
                ck.push_ints("knn.k", &[m.k]);
                ck.push(
                    "knn.points",
                    Tensor::new(vec![m.len(), m.dim], m.points.clone())
                        .expect("consistent knn state"),
                );
            }
            Detector::Gmm(m) => {
                let (k, d) = (m.components(), m.dim());
                let flat = |rows: &[Vec<f64>]| {
                    rows.iter().flatten().map(|&v| v as f32).collect::<Vec<_>>()
                };
                ck.push(
                    "gmm.weights",
                    Tensor::from_vec(m.weights.iter().map(|&v| v as f32).collect()),
                );
                ck.push(
                    "gmm.means",
                    Tensor::new(vec![k, d], flat(&m.means)).expect("consistent gmm state"),
                );
                ck.push(
                    "gmm.variances",
                    Tensor::new(vec![k, d], flat(&m.variances)).expect("consistent gmm state"),
                );
            }
            Detector::Max(_) | Detector::Std(_) => {}
        }
        ck
    }

    pub fn from_checkpoint(kind: DetectorKind, ck: &Checkpoint) -> Result<Self, PipelineError> {
        let dim = ck.ints("detector.dim")?.first().copied().unwrap_or(0);
        let malformed = |m: &str| PipelineError::Malformed(m.to_string());
        Ok(match kind {
            DetectorKind::Knn => {
                let k = ck.ints("knn.k")?.first().copied().unwrap_or(0);
                let points = ck.get("knn.points")?;
                if points.rank() != 2 || points.shape()[1] != dim || k == 0 || k > points.shape()[0]
                {
                    return Err(malformed("knn state"));
                }
                Detector::Knn(Knn {
                    k,
                    dim,
                    points: points.data().to_vec(),
                })
            }
            DetectorKind::Gmm => {
                let weights = ck.get("gmm.weights")?;
                let rows = |name: &str| -> Result<Vec<Vec<f64>>, PipelineError> {
                    let t = ck.get(name)?;
                    if t.shape() != [weights.len(), dim] {
                        return Err(malformed("gmm state"));
                    }
                    Ok(t.data()
                        .chunks(dim)
                        .map(|r| r.iter().map(|&v| v as f64).collect())
                        .collect())
                };
                let means = rows("gmm.means")?;
                let variances = rows("gmm.variances")?;
                if variances.iter().flatten().any(|&v| !(v > 0.0)) {
                    return Err(malformed("non-positive gmm variance"));
                }
                Detector::Gmm(Gmm {
                    weights: weights.data().iter().map(|&v| v as f64).collect(),
                    means,
                    variances,
                })
            }
            DetectorKind::Max => Detector::Max(dim),
            DetectorKind::Std => Detector::Std(dim),
        })
    }
}

//! Diagonal-covariance Gaussian mixture fitted by expectation-maximisation in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A component whose responsibility mass falls below this many samples is collapsed.
const COLLAPSE_MASS: f64 = 1e-3;

const LLOYD_ROUNDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmOptions {
    pub components: usize,
    pub max_iterations: usize,
    /// EM stops once the mean per-sample log-likelihood improves by less than this.
    pub tolerance: f64,
    pub variance_floor: f64,
    /// Fresh initialisations tried after the first one collapses.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 10,
            max_iterations: 200,
            tolerance: 1e-5,
            variance_floor: 1e-6,
            max_restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// A fitted mixture and its EM trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: Gmm,
    /// Total log-likelihood of the data under each successive parameter set.
    pub log_likelihood: Vec<f64>,
    /// Initialisations discarded because a component collapsed.
    pub restarts: usize,
}

impl Gmm {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component `ln w_j + ln N(x | mu_j, diag(var_j))`.
    fn joint_log(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((&xi, &m), &v) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                let d = xi - m;
                acc += d * d / v + v.ln();
            }
            *o = self.weights[j].ln() - 0.5 * (acc + x.len() as f64 * LN_2PI);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        self.joint_log(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Rounds every parameter through `f32` so that the model survives the
    /// checkpoint encoding unchanged. Variances round upward to keep the floor.
    pub fn round_to_f32(&mut self) {
        let round = |v: &mut f64| *v = *v as f32 as f64;
        self.weights.iter_mut().for_each(round);
        self.means.iter_mut().flatten().for_each(round);
        for v in self.variances.iter_mut().flatten() {
            let mut r = *v as f32;
            if (r as f64) < *v {
                r = r.next_up();
            }
            *v = r as f64;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fits a mixture to `data` (one row per sample). Initialisation runs a
/// seeded k-means++ seeding and a few Lloyd rounds, then EM iterates until the
/// per-sample log-likelihood gain drops below the tolerance. A collapsed
/// component triggers a restart from the next seed.
pub fn fit_gmm(data: &[Vec<f64>], opts: &GmmOptions) -> Result<GmmFit, PipelineError> {
    let k = opts.components;
    if k == 0 || !(opts.variance_floor > 0.0) || !(opts.tolerance >= 0.0) {
        return Err(PipelineError::InvalidParameter(format!(
            "components {k}, variance floor {}, tolerance {}",
            opts.variance_floor, opts.tolerance
        )));
    }
    let need = k.max(10);
    if data.len() < need {
        return Err(PipelineError::InsufficientData {
            need,
            got: data.len(),
        });
    }
    let d = data[0].len();
    if let Some(row) = data.iter().find(|r| r.len() != d) {
        return Err(PipelineError::DimensionMismatch {
            expected: d,
            got: row.len(),
        });
    }
    for attempt in 0..=opts.max_restarts {
        let seed = opts.seed.wrapping_add(attempt as u64);
        if let Some((model, log_likelihood)) = run_em(data, opts, seed) {
            return Ok(GmmFit {
                model,
                log_likelihood,
                restarts: attempt,
            });
        }
    }
    Err(PipelineError::DegenerateMixture {
        restarts: opts.max_restarts,
    })
}

/// One EM run; `None` when a component collapses.
fn run_em(data: &[Vec<f64>], opts: &GmmOptions, seed: u64) -> Option<(Gmm, Vec<f64>)> {
    let (n, k) = (data.len(), opts.components);
    let mut resp = initial_responsibilities(data, k, seed);
    let mut model = m_step(data, &resp, k, opts.variance_floor)?;
    let mut history = Vec::new();
    let mut buf = vec![0.0; k];
    for _ in 0..opts.max_iterations {
        let mut total = 0.0;
        for (x, r) in data.iter().zip(resp.chunks_mut(k)) {
            model.joint_log(x, &mut buf);
            let lse = log_sum_exp(&buf);
            total += lse;
            for (rj, &lj) in r.iter_mut().zip(&buf) {
                *rj = (lj - lse).exp();
            }
        }
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (total - prev) / (n as f64) < opts.tolerance);
        history.push(total);
        if converged {
            break;
        }
        model = m_step(data, &resp, k, opts.variance_floor)?;
    }
    Some((model, history))
}

/// Maximisation step; variances are floored, which keeps each update a
/// constrained maximiser so the likelihood cannot decrease.
fn m_step(data: &[Vec<f64>], resp: &[f64], k: usize, floor: f64) -> Option<Gmm> {
    let (n, d) = (data.len(), data[0].len());
    let mut mass = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for (x, r) in data.iter().zip(resp.chunks(k)) {
        for j in 0..k {
            mass[j] += r[j];
            for (m, &xi) in means[j].iter_mut().zip(x) {
                *m += r[j] * xi;
            }
        }
    }
    if mass.iter().any(|&m| !(m >= COLLAPSE_MASS)) {
        return None;
    }
    for (mean, &m) in means.iter_mut().zip(&mass) {
        mean.iter_mut().for_each(|v| *v /= m);
    }
    let mut variances = vec![vec![0.0; d]; k];
    for (x, r) in data.iter().zip(resp.chunks(k)) {
        for j in 0..k {
            for ((v, &mu), &xi) in variances[j].iter_mut().zip(&means[j]).zip(x) {
                let diff = xi - mu;
                *v += r[j] * diff * diff;
            }
        }
    }
    for (var, &m) in variances.iter_mut().zip(&mass) {
        var.iter_mut().for_each(|v| *v = (*v / m).max(floor));
    }
    Some(Gmm {
        weights: mass.iter().map(|m| m / n as f64).collect(),
        means,
        variances,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hard responsibilities from k-means++ seeding followed by Lloyd rounds.
fn initial_responsibilities(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let mut centers = vec![data[rng.gen_range(0..n)].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            nearest
                .iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        centers.push(data[pick].clone());
        for (m, x) in nearest.iter_mut().zip(data) {
            *m = m.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    let mut assign = vec![0usize; n];
    for round in 0..=LLOYD_ROUNDS {
        for (a, x) in assign.iter_mut().zip(data) {
            *a = (0..k)
                .map(|j| sq_dist(x, &centers[j]))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (j, dist)| {
                    if dist < best.1 {
                        (j, dist)
                    } else {
                        best
                    }
                })
                .0;
        }
        if round == LLOYD_ROUNDS {
            break;
        }
        let d = data[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, x) in assign.iter().zip(data) {
            counts[a] += 1;
            sums[a].iter_mut().zip(x).for_each(|(s, &v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    // a cluster left empty keeps a small share of every sample so EM can still move it
    let mut counts = vec![0usize; k];
    assign.iter().for_each(|&a| counts[a] += 1);
    let empty = counts.iter().filter(|&&c| c == 0).count();
    let spread = if empty > 0 { 1e-2 } else { 0.0 };
    let mut resp = vec![0.0; n * k];
    for (i, &a) in assign.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (j, r) in row.iter_mut().enumerate() {
            *r = if counts[j] == 0 {
                spread / empty as f64
            } else {
                0.0
            };
        }
        row[a] += 1.0 - spread;
    }
    resp
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn responsibilities_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 4) as f64 * 10.0 + rng.gen::<f64>(), 0.0])
            .collect();
        let r = initial_responsibilities(&data, 6, 3);
        for row in r.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn single_gaussian_matches_closed_form_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dists = [
            Normal::new(1.0, 2.0).unwrap(),
            Normal::new(-3.0, 0.5).unwrap(),
        ];
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect())
            .collect();
        let fit = fit_gmm(
            &data,
            &GmmOptions {
                components: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let n = data.len() as f64;
        for dim in 0..2 {
            let mean = data.iter().map(|x| x[dim]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[dim] - mean).powi(2)).sum::<f64>() / n;
            assert!((fit.model.means[0][dim] - mean).abs() < 1e-9);
            assert!((fit.model.variances[0][dim] - var).abs() < 1e-9);
        }
    }
}

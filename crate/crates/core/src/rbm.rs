//! Restricted Boltzmann machine with `+-1` visible units and `{0,1}` hidden
//! units.
//!
//! Energy: `E(v, h) = -sum_i a_i v_i - sum_j b_j h_j - sum_ij v_i W_ij h_j`.
//! Because visible units take values `+-1`, the visible conditional is
//! `P(v_i = +1 | h) = logistic(2 (a_i + sum_j W_ij h_j))`.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{index_to_spins, log_sum_exp, spins_to_index, MAX_ENUM_SITES};
use crate::rng::{self, Rng};

/// Bound on `n_visible` and `n_hidden` for exact KL evaluation.
pub const MAX_KL_UNITS: usize = 12;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_WEIGHT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmModel {
    n_visible: usize,
    n_hidden: usize,
    /// Row-major `n_visible x n_hidden`.
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

impl RbmModel {
    pub fn new(
        n_visible: usize,
        n_hidden: usize,
        weights: Vec<f64>,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            n_visible,
            n_hidden,
            weights,
            visible_bias,
            hidden_bias,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.n_visible == 0 || self.n_hidden == 0 {
            return Err(Error::InvalidInput("RBM layers must be non-empty".into()));
        }
        if self.weights.len() != self.n_visible * self.n_hidden {
            return Err(Error::dims(
                "weight entries",
                self.n_visible * self.n_hidden,
                self.weights.len(),
            ));
        }
        if self.visible_bias.len() != self.n_visible {
            return Err(Error::dims(
                "visible bias",
                self.n_visible,
                self.visible_bias.len(),
            ));
        }
        if self.hidden_bias.len() != self.n_hidden {
            return Err(Error::dims(
                "hidden bias",
                self.n_hidden,
                self.hidden_bias.len(),
            ));
        }
        let all = self
            .weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("RBM parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        Self::new(
            n_visible,
            n_hidden,
            vec![0.0; n_visible * n_hidden],
            vec![0.0; n_visible],
            vec![0.0; n_hidden],
        )
    }

    /// Weights i.i.d. `N(0, INIT_WEIGHT_STD^2)`, biases zero.
    pub fn initialize(n_visible: usize, n_hidden: usize, rng: &mut Rng) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        let weights = (0..n_visible * n_hidden)
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(
            n_visible,
            n_hidden,
            weights,
            vec![0.0; n_visible],
            vec![0.0; n_hidden],
        )
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_hidden + j]
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    /// Copy with visible units relabelled: unit `i` of the result is unit
    /// `perm[i]` of `self`.
    pub fn permute_visible(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_visible {
            return Err(Error::dims(
                "permutation length",
                self.n_visible,
                perm.len(),
            ));
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        for &src in perm {
            weights
                .extend_from_slice(&self.weights[src * self.n_hidden..(src + 1) * self.n_hidden]);
        }
        let visible_bias = perm.iter().map(|&src| self.visible_bias[src]).collect();
        Self::new(
            self.n_visible,
            self.n_hidden,
            weights,
            visible_bias,
            self.hidden_bias.clone(),
        )
    }

    /// `b_j + sum_i W_ij v_i` for every hidden unit.
    fn hidden_input(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.hidden_bias.clone();
        for (i, &vi) in v.iter().enumerate() {
            let row = &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        out
    }

    /// `a_i + sum_j W_ij h_j` for every visible unit.
    fn visible_input(&self, h: &[f64]) -> Vec<f64> {
        self.visible_bias
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let row = &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden];
                a + row.iter().zip(h).map(|(w, hj)| w * hj).sum::<f64>()
            })
            .collect()
    }

    fn check_visible(&self, v: &[i8]) -> Result<Vec<f64>> {
        if v.len() != self.n_visible {
            return Err(Error::dims("visible units", self.n_visible, v.len()));
        }
        v.iter()
            .map(|&s| match s {
                1 => Ok(1.0),
                -1 => Ok(-1.0),
                other => Err(Error::InvalidInput(format!(
                    "visible value {other} is not +-1"
                ))),
            })
            .collect()
    }

    fn check_hidden(&self, h: &[u8]) -> Result<Vec<f64>> {
        if h.len() != self.n_hidden {
            return Err(Error::dims("hidden units", self.n_hidden, h.len()));
        }
        h.iter()
            .map(|&x| match x {
                0 => Ok(0.0),
                1 => Ok(1.0),
                other => Err(Error::InvalidInput(format!(
                    "hidden value {other} is not 0/1"
                ))),
            })
            .collect()
    }

    fn check_enumerable(&self) -> Result<()> {
        let units = self.n_visible + self.n_hidden;
        if units > MAX_ENUM_SITES {
            return Err(Error::SizeLimit {
                what: "n_visible + n_hidden",
                got: units,
                max: MAX_ENUM_SITES,
            });
        }
        Ok(())
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn energy(v: &[i8], h: &[u8], model: &RbmModel) -> Result<f64> {
    let vf = model.check_visible(v)?;
    let hf = model.check_hidden(h)?;
    let visible: f64 = model.visible_bias.iter().zip(&vf).map(|(a, x)| a * x).sum();
    let hidden: f64 = model.hidden_bias.iter().zip(&hf).map(|(b, x)| b * x).sum();
    let mut coupling = 0.0;
    for (i, vi) in vf.iter().enumerate() {
        for (j, hj) in hf.iter().enumerate() {
            coupling += vi * model.weight(i, j) * hj;
        }
    }
    Ok(-visible - hidden - coupling)
}

/// `F(v) = -sum_i a_i v_i - sum_j softplus(b_j + sum_i W_ij v_i)`.
pub fn free_energy(v: &[i8], model: &RbmModel) -> Result<f64> {
    let vf = model.check_visible(v)?;
    Ok(free_energy_unchecked(&vf, model))
}

fn free_energy_unchecked(v: &[f64], model: &RbmModel) -> f64 {
    let visible: f64 = model.visible_bias.iter().zip(v).map(|(a, x)| a * x).sum();
    let hidden: f64 = model.hidden_input(v).into_iter().map(softplus).sum();
    -visible - hidden
}

/// `log sum_v exp(-F(v))` over all `2^n_visible` visible states.
pub fn log_partition(model: &RbmModel) -> Result<f64> {
    Ok(log_sum_exp(&neg_free_energies(model)?))
}

fn neg_free_energies(model: &RbmModel) -> Result<Vec<f64>> {
    model.check_enumerable()?;
    Ok((0..1u64 << model.n_visible)
        .map(|idx| {
            let v: Vec<f64> = index_to_spins(idx, model.n_visible)
                .into_iter()
                .map(f64::from)
                .collect();
            -free_energy_unchecked(&v, model)
        })
        .collect())
}

/// Model marginal over visible configurations, indexed like Ising
/// configurations (bit `i` set means `v_i = +1`).
pub fn visible_distribution(model: &RbmModel) -> Result<Vec<f64>> {
    let logs = neg_free_energies(model)?;
    let log_z = log_sum_exp(&logs);
    Ok(logs.into_iter().map(|l| (l - log_z).exp()).collect())
}

pub fn exact_marginal(v: &[i8], model: &RbmModel) -> Result<f64> {
    let vf = model.check_visible(v)?;
    let log_z = log_partition(model)?;
    Ok((-free_energy_unchecked(&vf, model) - log_z).exp())
}

/// `P(h_j = 1 | v) = logistic(b_j + sum_i W_ij v_i)`.
pub fn hidden_conditional(v: &[i8], model: &RbmModel) -> Result<Vec<f64>> {
    let vf = model.check_visible(v)?;
    Ok(model.hidden_input(&vf).into_iter().map(logistic).collect())
}

/// `P(v_i = +1 | h) = logistic(2 (a_i + sum_j W_ij h_j))`.
pub fn visible_conditional(h: &[u8], model: &RbmModel) -> Result<Vec<f64>> {
    let hf = model.check_hidden(h)?;
    Ok(model
        .visible_input(&hf)
        .into_iter()
        .map(|x| logistic(2.0 * x))
        .collect())
}

fn bernoulli(p: f64, rng: &mut Rng) -> bool {
    rng.random::<f64>() < p
}

fn sample_hidden(v: &[f64], model: &RbmModel, rng: &mut Rng) -> Vec<f64> {
    model
        .hidden_input(v)
        .into_iter()
        .map(|x| {
            if bernoulli(logistic(x), rng) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn sample_visible(h: &[f64], model: &RbmModel, rng: &mut Rng) -> Vec<f64> {
    model
        .visible_input(h)
        .into_iter()
        .map(|x| {
            if bernoulli(logistic(2.0 * x), rng) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// `steps` rounds of `h ~ P(h | v)` followed by `v ~ P(v | h)`, starting at
/// `v0`. Returns the final visible state and the hidden state that produced it.
pub fn gibbs_chain_with(
    v0: &[i8],
    model: &RbmModel,
    steps: usize,
    rng: &mut Rng,
) -> Result<(Vec<i8>, Vec<u8>)> {
    if steps == 0 {
        return Err(Error::InvalidInput(
            "gibbs_chain needs at least one step".into(),
        ));
    }
    let mut v = model.check_visible(v0)?;
    let mut h = Vec::new();
    for _ in 0..steps {
        h = sample_hidden(&v, model, rng);
        v = sample_visible(&h, model, rng);
    }
    Ok((
        v.iter().map(|&x| x as i8).collect(),
        h.iter().map(|&x| x as u8).collect(),
    ))
}

pub fn gibbs_chain(
    v0: &[i8],
    model: &RbmModel,
    steps: usize,
    seed: u64,
) -> Result<(Vec<i8>, Vec<u8>)> {
    gibbs_chain_with(v0, model, steps, &mut rng::from_seed(seed))
}

/// Parameter-shaped vector: used for gradients and sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl Gradient {
    fn zeros(model: &RbmModel) -> Self {
        Self {
            weights: vec![0.0; model.weights.len()],
            visible_bias: vec![0.0; model.n_visible],
            hidden_bias: vec![0.0; model.n_hidden],
        }
    }

    fn components(&self) -> impl Iterator<Item = &f64> + Clone {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
    }

    fn zip_mut(&mut self, other: &Gradient, f: impl Fn(&mut f64, f64)) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            f(a, *b);
        }
        for (a, b) in self.visible_bias.iter_mut().zip(&other.visible_bias) {
            f(a, *b);
        }
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            f(a, *b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.components().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.components()
            .zip(other.components())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn cosine_similarity(&self, other: &Gradient) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    /// Accumulate `weight * (v_i p_j, v_i, p_j)` with `p = P(h = 1 | v)`.
    fn accumulate(&mut self, v: &[f64], model: &RbmModel, weight: f64) {
        let p: Vec<f64> = model.hidden_input(v).into_iter().map(logistic).collect();
        for (i, vi) in v.iter().enumerate() {
            let row = &mut self.weights[i * model.n_hidden..(i + 1) * model.n_hidden];
            for (w, pj) in row.iter_mut().zip(&p) {
                *w += weight * vi * pj;
            }
            self.visible_bias[i] += weight * vi;
        }
        for (b, pj) in self.hidden_bias.iter_mut().zip(&p) {
            *b += weight * pj;
        }
    }
}

impl std::ops::Sub for Gradient {
    type Output = Gradient;

    fn sub(mut self, rhs: Gradient) -> Gradient {
        self.zip_mut(&rhs, |a, b| *a -= b);
        self
    }
}

/// Batch means of `v_i p_j`, `v_i` and `p_j` with mean-field hidden
/// probabilities.
pub fn phase_statistics(batch: &[Vec<i8>], model: &RbmModel) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut stats = Gradient::zeros(model);
    let w = 1.0 / batch.len() as f64;
    for v in batch {
        stats.accumulate(&model.check_visible(v)?, model, w);
    }
    Ok(stats)
}

/// Contrastive-divergence estimate: data statistics minus statistics of
/// `k`-step Gibbs chains restarted at each data vector.
pub fn cd_gradient(
    batch: &[Vec<i8>],
    model: &RbmModel,
    k: usize,
    rng: &mut Rng,
) -> Result<Gradient> {
    let positive = phase_statistics(batch, model)?;
    let negative: Vec<Vec<i8>> = batch
        .iter()
        .map(|v| gibbs_chain_with(v, model, k, rng).map(|(vk, _)| vk))
        .collect::<Result<_>>()?;
    Ok(positive - phase_statistics(&negative, model)?)
}

/// Gradient of the average log-likelihood `sum_v P_data(v) log P_model(v)`
/// by full enumeration of the visible space.
pub fn exact_log_likelihood_gradient(data: &[f64], model: &RbmModel) -> Result<Gradient> {
    let expected = 1usize << model.n_visible.min(MAX_ENUM_SITES);
    if data.len() != expected {
        return Err(Error::dims(
            "data distribution length",
            expected,
            data.len(),
        ));
    }
    let model_dist = visible_distribution(model)?;
    let mut grad = Gradient::zeros(model);
    for (idx, (pd, pm)) in data.iter().zip(&model_dist).enumerate() {
        let v: Vec<f64> = index_to_spins(idx as u64, model.n_visible)
            .into_iter()
            .map(f64::from)
            .collect();
        grad.accumulate(&v, model, pd - pm);
    }
    Ok(grad)
}

/// Hyperparameters of CD-k training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "cd_steps and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

pub fn apply_gradient(model: &RbmModel, grad: &Gradient, learning_rate: f64) -> RbmModel {
    let step = |params: &[f64], g: &[f64]| -> Vec<f64> {
        params
            .iter()
            .zip(g)
            .map(|(p, g)| p + learning_rate * g)
            .collect()
    };
    RbmModel {
        n_visible: model.n_visible,
        n_hidden: model.n_hidden,
        weights: step(&model.weights, &grad.weights),
        visible_bias: step(&model.visible_bias, &grad.visible_bias),
        hidden_bias: step(&model.hidden_bias, &grad.hidden_bias),
    }
}

/// One CD-k step on `batch`.
pub fn cd_k_update(
    batch: &[Vec<i8>],
    model: &RbmModel,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<RbmModel> {
    config.validate()?;
    let grad = cd_gradient(batch, model, config.cd_steps, rng)?;
    let next = apply_gradient(model, &grad, config.learning_rate);
    if next.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical(
            "CD update produced non-finite weights".into(),
        ));
    }
    Ok(next)
}

/// Which quantity [`train`] records per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMetric {
    ExactKl,
    ReconstructionError,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RbmModel,
    pub metric: HistoryMetric,
    /// Entry 0 is the metric of the initial model; entry `e` follows epoch `e`.
    pub history: Vec<f64>,
}

/// Shuffled mini-batch CD-k training.
///
/// The history holds the exact KL divergence from `target` (or from the
/// empirical distribution of `dataset` when `target` is `None`) if
/// `n_visible <= 12` and `n_hidden <= 12`, else the mean squared
/// mean-field reconstruction error.
pub fn train(
    dataset: &[Vec<i8>],
    model0: &RbmModel,
    config: &TrainConfig,
    target: Option<&[f64]>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    config.validate()?;
    for v in dataset {
        model0.check_visible(v)?;
    }
    let exact = model0.n_visible <= MAX_KL_UNITS && model0.n_hidden <= MAX_KL_UNITS;
    let reference = match (exact, target) {
        (true, Some(t)) => Some(t.to_vec()),
        (true, None) => Some(empirical_visible_distribution(dataset, model0.n_visible)?),
        (false, _) => None,
    };
    let evaluate = |m: &RbmModel| match &reference {
        Some(r) => kl_exact(r, m),
        None => Ok(reconstruction_error(dataset, m)),
    };

    let mut rng = rng::from_seed(config.seed);
    let mut model = model0.clone();
    let mut history = vec![evaluate(&model)?];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<i8>> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            model = cd_k_update(&batch, &model, config, &mut rng)?;
        }
        history.push(evaluate(&model)?);
    }
    Ok(TrainOutcome {
        model,
        metric: if reference.is_some() {
            HistoryMetric::ExactKl
        } else {
            HistoryMetric::ReconstructionError
        },
        history,
    })
}

pub fn empirical_visible_distribution(dataset: &[Vec<i8>], n_visible: usize) -> Result<Vec<f64>> {
    if n_visible > MAX_ENUM_SITES {
        return Err(Error::SizeLimit {
            what: "n_visible",
            got: n_visible,
            max: MAX_ENUM_SITES,
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut p = vec![0.0; 1 << n_visible];
    let w = 1.0 / dataset.len() as f64;
    for v in dataset {
        if v.len() != n_visible {
            return Err(Error::dims("visible units", n_visible, v.len()));
        }
        p[spins_to_index(v) as usize] += w;
    }
    Ok(p)
}

/// Mean over the dataset of `sum_i (v_i - E[v_i | h = P(h | v)])^2`.
pub fn reconstruction_error(dataset: &[Vec<i8>], model: &RbmModel) -> f64 {
    let total: f64 = dataset
        .iter()
        .map(|v| {
            let vf: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let p: Vec<f64> = model.hidden_input(&vf).into_iter().map(logistic).collect();
            model
                .visible_input(&p)
                .into_iter()
                .zip(&vf)
                .map(|(x, vi)| {
                    let mean = 2.0 * logistic(2.0 * x) - 1.0;
                    (vi - mean).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    total / dataset.len() as f64
}

/// `sum_v P_data(v) log(P_data(v) / P_model(v))`; zero-probability data
/// states contribute nothing.
pub fn kl_exact(data: &[f64], model: &RbmModel) -> Result<f64> {
    for (what, n) in [("n_visible", model.n_visible), ("n_hidden", model.n_hidden)] {
        if n > MAX_KL_UNITS {
            return Err(Error::SizeLimit {
                what,
                got: n,
                max: MAX_KL_UNITS,
            });
        }
    }
    let expected = 1usize << model.n_visible;
    if data.len() != expected {
        return Err(Error::dims(
            "data distribution length",
            expected,
            data.len(),
        ));
    }
    let logs = neg_free_energies(model)?;
    let log_z = log_sum_exp(&logs);
    Ok(data
        .iter()
        .zip(&logs)
        .filter(|(pd, _)| **pd > 0.0)
        .map(|(pd, l)| pd * (pd.ln() - (l - log_z)))
        .sum())
}

/// Model plus the training configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub model: RbmModel,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)?;
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_model(nv: usize, nh: usize, scale: f64, seed: u64) -> RbmModel {
        let mut rng = rng::from_seed(seed);
        let n = Normal::new(0.0, scale).unwrap();
        let mut draw = |k: usize| (0..k).map(|_| n.sample(&mut rng)).collect::<Vec<f64>>();
        RbmModel::new(nv, nh, draw(nv * nh), draw(nv), draw(nh)).unwrap()
    }

    fn hidden_states(nh: usize) -> impl Iterator<Item = Vec<u8>> {
        (0..1u32 << nh).map(move |m| (0..nh).map(|j| (m >> j & 1) as u8).collect())
    }

    /// Oracle: `-log sum_h exp(-E(v, h))` by enumeration.
    fn free_energy_by_hidden_sum(v: &[i8], model: &RbmModel) -> f64 {
        let terms: Vec<f64> = hidden_states(model.n_hidden())
            .map(|h| -energy(v, &h, model).unwrap())
            .collect();
        -log_sum_exp(&terms)
    }

    #[test]
    fn energy_fixtures() {
        let m = RbmModel::new(1, 1, vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(energy(&[1], &[1], &m).unwrap(), -1.0);

        let m = RbmModel::new(2, 1, vec![1.0, -1.0], vec![0.0, 0.0], vec![1.0]).unwrap();
        assert_eq!(energy(&[1, 1], &[1], &m).unwrap(), -1.0);

        let m = random_model(4, 3, 1.0, 1);
        let v = [1, -1, -1, 1];
        let expected: f64 = -(m.visible_bias()[0] - m.visible_bias()[1] - m.visible_bias()[2]
            + m.visible_bias()[3]);
        assert!((energy(&v, &[0, 0, 0], &m).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_value_errors() {
        let m = RbmModel::zeros(2, 2).unwrap();
        assert!(matches!(
            energy(&[1], &[0, 0], &m),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            free_energy(&[1, 0], &m),
            Err(Error::InvalidInput(_))
        ));
        assert!(visible_conditional(&[2, 0], &m).is_err());
        assert!(RbmModel::new(2, 2, vec![0.0; 3], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(RbmModel::new(1, 1, vec![f64::NAN], vec![0.0], vec![0.0]).is_err());
        let big = RbmModel::zeros(16, 5).unwrap();
        assert!(matches!(
            exact_marginal(&[1; 16], &big),
            Err(Error::SizeLimit { .. })
        ));
        let wide = RbmModel::zeros(13, 2).unwrap();
        let data = vec![1.0 / 8192.0; 8192];
        assert!(matches!(
            kl_exact(&data, &wide),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn free_energy_of_zero_model() {
        let m = RbmModel::zeros(3, 2).unwrap();
        let f = free_energy(&[1, -1, 1], &m).unwrap();
        assert!((f + 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn free_energy_is_overflow_safe() {
        let m = RbmModel::new(1, 1, vec![0.0], vec![0.25], vec![500.0]).unwrap();
        let f = free_energy(&[1], &m).unwrap();
        assert!(f.is_finite());
        // softplus(500) = 500 + log1p(e^-500).
        assert!((f - (-0.25 - 500.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_marginal_is_uniform() {
        let m = RbmModel::zeros(4, 3).unwrap();
        for idx in 0..16 {
            let v = index_to_spins(idx, 4);
            assert!((exact_marginal(&v, &m).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_dominates_marginal() {
        let m = RbmModel::new(1, 1, vec![0.0], vec![10.0], vec![0.0]).unwrap();
        assert!(exact_marginal(&[1], &m).unwrap() > 1.0 - 1e-8);
    }

    #[test]
    fn marginal_matches_joint_enumeration() {
        // Oracle: P(v) = sum_h e^{-E} / sum_{v,h} e^{-E}.
        let m = random_model(4, 3, 0.8, 7);
        let mut joint = vec![0.0; 16];
        for (idx, slot) in joint.iter_mut().enumerate() {
            let v = index_to_spins(idx as u64, 4);
            *slot = hidden_states(3)
                .map(|h| (-energy(&v, &h, &m).unwrap()).exp())
                .sum();
        }
        let z: f64 = joint.iter().sum();
        let mut total = 0.0;
        for (idx, w) in joint.iter().enumerate() {
            let v = index_to_spins(idx as u64, 4);
            let p = exact_marginal(&v, &m).unwrap();
            assert!((p - w / z).abs() < 1e-13);
            total += p;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_fixtures() {
        let m = RbmModel::zeros(3, 2).unwrap();
        assert_eq!(hidden_conditional(&[1, -1, 1], &m).unwrap(), vec![0.5, 0.5]);
        assert_eq!(visible_conditional(&[1, 0], &m).unwrap(), vec![0.5; 3]);

        let m = RbmModel::new(1, 1, vec![0.0], vec![-10.0], vec![10.0]).unwrap();
        let p = hidden_conditional(&[1], &m).unwrap()[0];
        assert!((p - 0.99995).abs() < 1e-5);
        let q = visible_conditional(&[1], &m).unwrap()[0];
        assert!((q - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn hidden_conditional_matches_enumeration() {
        let m = random_model(3, 3, 1.0, 11);
        for idx in 0..8 {
            let v = index_to_spins(idx, 3);
            let weights: Vec<(Vec<u8>, f64)> = hidden_states(3)
                .map(|h| {
                    let e = energy(&v, &h, &m).unwrap();
                    (h, (-e).exp())
                })
                .collect();
            let z: f64 = weights.iter().map(|(_, w)| w).sum();
            let p = hidden_conditional(&v, &m).unwrap();
            for (j, pj) in p.iter().enumerate() {
                let brute: f64 = weights
                    .iter()
                    .filter(|(h, _)| h[j] == 1)
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    / z;
                assert!((pj - brute).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn visible_conditional_matches_two_point_normalization() {
        let m = random_model(3, 2, 1.0, 12);
        for h in hidden_states(2) {
            let p = visible_conditional(&h, &m).unwrap();
            for i in 0..3 {
                // e^{-E} restricted to v_i, other factors cancel.
                let field = m.visible_bias()[i]
                    + (0..2)
                        .map(|j| m.weight(i, j) * f64::from(h[j]))
                        .sum::<f64>();
                let up = field.exp();
                let down = (-field).exp();
                assert!((p[i] - up / (up + down)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gibbs_zero_model_is_uniform() {
        // Chi-square over the 8 visible states at the 1% level (df = 7: 18.475).
        let m = RbmModel::zeros(3, 2).unwrap();
        let mut rng = rng::from_seed(2024);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let (v, _) = gibbs_chain_with(&[1, 1, 1], &m, 1, &mut rng).unwrap();
            counts[spins_to_index(&v) as usize] += 1;
        }
        let e = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    #[test]
    fn gibbs_is_deterministic_and_respects_bias() {
        let m = random_model(4, 2, 1.0, 3);
        let a = gibbs_chain(&[1, -1, 1, -1], &m, 10, 99).unwrap();
        let b = gibbs_chain(&[1, -1, 1, -1], &m, 10, 99).unwrap();
        assert_eq!(a, b);
        assert!(gibbs_chain(&[1, -1, 1, -1], &m, 0, 99).is_err());

        let biased = RbmModel::new(3, 2, vec![0.0; 6], vec![10.0; 3], vec![0.0; 2]).unwrap();
        let mut ups = 0;
        let trials = 2000;
        let mut rng = rng::from_seed(5);
        for _ in 0..trials {
            let (v, _) = gibbs_chain_with(&[-1, -1, -1], &biased, 1, &mut rng).unwrap();
            ups += v.iter().filter(|&&x| x == 1).count();
        }
        assert!(ups as f64 / (3 * trials) as f64 >= 0.999);
    }

    #[test]
    fn matched_phases_cancel() {
        let m = random_model(4, 3, 0.5, 8);
        let batch: Vec<Vec<i8>> = (0..10).map(|i| index_to_spins(i, 4)).collect();
        let pos = phase_statistics(&batch, &m).unwrap();
        let neg = phase_statistics(&batch, &m).unwrap();
        assert_eq!((pos - neg).norm(), 0.0);
    }

    #[test]
    fn saturated_model_update_is_tiny() {
        // Chains of a strongly biased model return to the all-up batch.
        let m = RbmModel::new(3, 2, vec![0.0; 6], vec![10.0; 3], vec![0.0; 2]).unwrap();
        let batch = vec![vec![1i8; 3]; 50];
        let g = cd_gradient(&batch, &m, 3, &mut rng::from_seed(1)).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let m = random_model(4, 3, 0.5, 9);
        let cfg = TrainConfig {
            cd_steps: 2,
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 4,
            seed: 1,
        };
        let batch: Vec<Vec<i8>> = (0..6).map(|i| index_to_spins(i, 4)).collect();
        let next = cd_k_update(&batch, &m, &cfg, &mut rng::from_seed(1)).unwrap();
        let bits = |x: &RbmModel| {
            x.weights()
                .iter()
                .chain(x.visible_bias())
                .chain(x.hidden_bias())
                .map(|f| f.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&next), bits(&m));
        assert!(matches!(
            cd_k_update(&[], &m, &cfg, &mut rng::from_seed(1)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn cd50_tracks_exact_gradient() {
        // 3 visible / 2 hidden, data drawn from a different model.
        let model = random_model(3, 2, 0.7, 21);
        let target = visible_distribution(&random_model(3, 2, 1.2, 22)).unwrap();
        let batch: Vec<Vec<i8>> = target
            .iter()
            .enumerate()
            .flat_map(|(idx, p)| {
                std::iter::repeat_n(index_to_spins(idx as u64, 3), (p * 4000.0).round() as usize)
            })
            .collect();
        let empirical = empirical_visible_distribution(&batch, 3).unwrap();
        let exact = exact_log_likelihood_gradient(&empirical, &model).unwrap();
        let cd = cd_gradient(&batch, &model, 50, &mut rng::from_seed(24)).unwrap();
        assert!(cd.cosine_similarity(&exact) > 0.9);
    }

    #[test]
    fn kl_fixtures() {
        let m = random_model(3, 2, 1.0, 31);
        let own = visible_distribution(&m).unwrap();
        assert!(kl_exact(&own, &m).unwrap().abs() < 1e-10);
        let zero = RbmModel::zeros(3, 2).unwrap();
        assert!(kl_exact(&[0.125; 8], &zero).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let m = random_model(3, 2, 0.3, 41);
        let data: Vec<Vec<i8>> = (0..8).map(|i| index_to_spins(i, 3)).collect();
        let cfg = TrainConfig {
            cd_steps: 1,
            learning_rate: 0.1,
            epochs: 0,
            batch_size: 2,
            seed: 0,
        };
        let out = train(&data, &m, &cfg, None).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.history.len(), 1);
        assert!(matches!(train(&[], &m, &cfg, None), Err(Error::Empty(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let m = RbmModel::initialize(4, 2, &mut rng::from_seed(1)).unwrap();
        let data: Vec<Vec<i8>> = (0..40).map(|i| index_to_spins(i % 3, 4)).collect();
        let cfg = TrainConfig {
            cd_steps: 1,
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 8,
            seed: 77,
        };
        let a = train(&data, &m, &cfg, None).unwrap();
        let b = train(&data, &m, &cfg, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.metric, HistoryMetric::ExactKl);
        assert!(a.history.last().unwrap() < &a.history[0]);
    }

    #[test]
    fn large_models_record_reconstruction_error() {
        let m = RbmModel::initialize(13, 2, &mut rng::from_seed(1)).unwrap();
        let data = vec![vec![1i8; 13]; 4];
        let cfg = TrainConfig {
            cd_steps: 1,
            learning_rate: 0.05,
            epochs: 2,
            batch_size: 2,
            seed: 1,
        };
        let out = train(&data, &m, &cfg, None).unwrap();
        assert_eq!(out.metric, HistoryMetric::ReconstructionError);
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn checkpoint_records_config() {
        let m = random_model(3, 2, 1.0, 51);
        let cfg = TrainConfig {
            cd_steps: 5,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 20,
            seed: 3,
        };
        let ckpt = Checkpoint {
            model: m,
            train_config: Some(cfg),
        };
        let mut buf = Vec::new();
        ckpt.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"n_visible\": 3"));
        assert!(text.contains("\"cd_steps\": 5"));
        assert_eq!(Checkpoint::load(buf.as_slice()).unwrap(), ckpt);
    }

    proptest! {
        #[test]
        fn free_energy_identity(seed in any::<u64>(), nv in 1usize..6, nh in 1usize..7, scale in 0.1f64..3.0) {
            let m = random_model(nv, nh, scale, seed);
            for idx in 0..1u64 << nv {
                let v = index_to_spins(idx, nv);
                let f = free_energy(&v, &m).unwrap();
                let brute = free_energy_by_hidden_sum(&v, &m);
                prop_assert!((f - brute).abs() <= 1e-10 * (1.0 + f.abs()));
            }
        }

        #[test]
        fn kl_is_nonnegative(seed in any::<u64>(), raw in proptest::collection::vec(0.0f64..1.0, 8)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let data: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let m = random_model(3, 2, 1.5, seed);
            prop_assert!(kl_exact(&data, &m).unwrap() >= -1e-12);
        }

        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), scale in 1e-6f64..1e6) {
            let ckpt = Checkpoint { model: random_model(4, 3, scale, seed), train_config: None };
            let mut buf = Vec::new();
            ckpt.save(&mut buf).unwrap();
            let back = Checkpoint::load(buf.as_slice()).unwrap();
            let bits = |m: &RbmModel| m.weights().iter().chain(m.visible_bias()).chain(m.hidden_bias()).map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.model), bits(&ckpt.model));
        }
    }
}

//! Desk-scale federated SGD with ideal or over-the-air aggregation.
//!
//! Each round every device draws a mini-batch (without replacement) from its
//! shard, computes the batch-mean cross-entropy gradient, and the server
//! applies `w ← w − η·ĝ`. In over-the-air mode the ideal mean is computed as
//! well, so every record carries the measured `‖ĝ − g‖²`.
//!
//! Seeds: the system seed drives distances and fading, `train.seed` drives
//! data generation, partitioning, initialization and batch selection. Each
//! purpose has its own stream, so changing the aggregation mode never changes
//! the batches.

pub mod data;
pub mod idx;
pub mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{gaussian_blobs, partition, Dataset, Partition, Sample};
pub use idx::IdxSource;
pub use model::{Model, MLP_HIDDEN};

use crate::aircomp::{
    aggregate_with, check_gradients, preprocessing_beta, transmit_power, CoefficientMode,
    PowerConfig,
};
use crate::analysis::divergence_with_skips;
use crate::channel::{draw_channel, RngStream};
use crate::config::{streams, ResolvedSystem, SystemConfig};
use crate::error::{Error, Result};

/// Model weights; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::Precondition(format!("weight {i} is not finite ({})", w[i])));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    SyntheticLogistic,
    SmallMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Ideal,
    #[default]
    #[serde(rename = "aircomp")]
    AirComp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub task: TaskKind,
    pub seed: u64,
    pub aggregation: AggregationMode,
    /// Samples per device (`D`), identical for all devices.
    pub samples_per_device: usize,
    pub test_size: usize,
    /// Synthetic tasks only; IDX data fixes its own dimensions.
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
    pub partition: Partition,
    /// Use each round's true max gradient norm as `G` instead of the
    /// calibrated constant.
    pub genie_g_bound: bool,
    pub g_warmup_rounds: usize,
    pub g_margin: f64,
    pub mnist: Option<IdxSource>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.005,
            batch_size: 32,
            rounds: 200,
            task: TaskKind::SyntheticLogistic,
            seed: 1,
            aggregation: AggregationMode::AirComp,
            samples_per_device: 200,
            test_size: 1000,
            n_features: 10,
            n_classes: 2,
            separation: 2.0,
            partition: Partition::Iid,
            genie_g_bound: false,
            g_warmup_rounds: 10,
            g_margin: 1.1,
            mnist: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Usage(m));
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if self.batch_size == 0 || self.batch_size > self.samples_per_device {
            return fail(format!(
                "batch_size must lie in [1, samples_per_device = {}], got {}",
                self.samples_per_device, self.batch_size
            ));
        }
        if self.rounds == 0 || self.test_size == 0 || self.g_warmup_rounds == 0 {
            return fail("rounds, test_size and g_warmup_rounds must be at least 1".into());
        }
        if self.n_features == 0 || self.n_classes < 2 {
            return fail("need n_features ≥ 1 and n_classes ≥ 2".into());
        }
        if self.task == TaskKind::SyntheticLogistic && self.n_classes != 2 {
            return fail("the logistic task is binary".into());
        }
        if self.task == TaskKind::SyntheticLogistic && self.mnist.is_some() {
            return fail("IDX data requires task = small_mlp".into());
        }
        if !(self.g_margin > 0.0) || !self.separation.is_finite() {
            return fail("g_margin must be positive and separation finite".into());
        }
        Ok(())
    }
}

fn check_batch(model: &Model, w: &[f64], batch: &[&Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Usage("empty mini-batch".into()));
    }
    if w.len() != model.dim() {
        return Err(Error::Usage(format!("model has {} weights, got {}", model.dim(), w.len())));
    }
    let n_classes = match *model {
        Model::Logistic { .. } => 2,
        Model::Mlp { n_classes, .. } => n_classes,
    };
    for s in batch {
        if s.features.len() != model.n_features() || s.label >= n_classes {
            return Err(Error::Usage(format!(
                "sample with {} features and label {} does not fit the model",
                s.features.len(),
                s.label
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over `batch`.
pub fn batch_loss(model: &Model, w: &[f64], batch: &[&Sample]) -> Result<f64> {
    check_batch(model, w, batch)?;
    let total: f64 = batch.iter().map(|s| model.sample_loss(w, s, None)).sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of the batch-mean loss.
pub fn local_gradient(model: &Model, w: &[f64], batch: &[&Sample]) -> Result<Vec<f64>> {
    check_batch(model, w, batch)?;
    let mut g = vec![0.0; w.len()];
    for s in batch {
        model.sample_loss(w, s, Some(&mut g));
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|x| *x /= n);
    Ok(g)
}

/// `(1/K)·Σ g_k`, summed in device order.
pub fn ideal_aggregate(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_gradients(grads)?;
    let mut out = vec![0.0; dim];
    for g in grads {
        for (acc, v) in out.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let k = grads.len() as f64;
    out.iter_mut().for_each(|x| *x /= k);
    Ok(out)
}

/// `w − η·g`.
pub fn global_update(w: &ModelParams, g: &[f64], eta: f64) -> Result<ModelParams> {
    if g.len() != w.dim() {
        return Err(Error::Usage(format!("gradient has {} entries, model {}", g.len(), w.dim())));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Usage(format!("eta must be positive, got {eta}")));
    }
    ModelParams::new(w.0.iter().zip(g).map(|(a, b)| a - eta * b).collect())
}

/// Mean loss and fraction of correct predictions.
pub fn evaluate(model: &Model, w: &ModelParams, test: &Dataset) -> Result<(f64, f64)> {
    let refs: Vec<&Sample> = test.samples.iter().collect();
    let loss = batch_loss(model, w.as_slice(), &refs)?;
    let correct = test
        .samples
        .iter()
        .filter(|s| model.predict(w.as_slice(), &s.features) == s.label)
        .count();
    Ok((loss, correct as f64 / test.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Training loss over all device data after the update.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Measured `‖ĝ − g‖²`; zero in ideal mode.
    pub divergence: f64,
    /// Expected divergence for this round's gradient norms, accounting for
    /// skipped rounds; zero in ideal mode.
    pub predicted_divergence: f64,
    pub active_devices: usize,
    pub skipped: bool,
    /// Active devices whose transmit energy exceeded `P_max`.
    pub power_violations: usize,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub initial_train_loss: f64,
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    pub g_bound: f64,
    pub gamma_th: f64,
}

impl TrainingTrace {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.test_accuracy)
    }

    pub fn mean_divergence(&self) -> f64 {
        self.records.iter().map(|r| r.divergence).sum::<f64>() / self.records.len() as f64
    }
}

/// Mutable part of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub round: usize,
    batch_rng: RngStream,
    channel_rng: RngStream,
}

/// Devices, data and radio parameters of one training run.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: Model,
    pub devices: Vec<Dataset>,
    pub test: Dataset,
    pub system: ResolvedSystem,
    pub power: PowerConfig,
    pub train: TrainConfig,
    pub coefficient_mode: CoefficientMode,
    system_seed: u64,
}

impl Federation {
    /// Generate or load data, resolve the radio system and calibrate `G`.
    pub fn build(sys: &SystemConfig) -> Result<Self> {
        let system = sys.resolve()?;
        let tc = sys.train.clone();
        let k = sys.k_devices;
        let mut data_rng = RngStream::new(tc.seed, streams::DATA);
        let (model, pool, test) = match &tc.mnist {
            Some(src) => {
                let train_imgs = idx::read_images(&src.train_images)?;
                let train_labels = idx::read_labels(&src.train_labels)?;
                let test_imgs = idx::read_images(&src.test_images)?;
                let test_labels = idx::read_labels(&src.test_labels)?;
                let pool = idx::to_dataset(&train_imgs, &train_labels, src.train_subsample, &mut data_rng)?;
                let test = idx::to_dataset(&test_imgs, &test_labels, src.test_subsample, &mut data_rng)?;
                let n_classes = pool.samples.iter().chain(&test.samples).map(|s| s.label).max().unwrap_or(0) + 1;
                let model = Model::Mlp {
                    n_features: train_imgs.rows * train_imgs.cols,
                    hidden: MLP_HIDDEN,
                    n_classes: n_classes.max(2),
                };
                (model, pool, test)
            }
            None => {
                let n_train = k * tc.samples_per_device;
                let all = gaussian_blobs(
                    n_train + tc.test_size,
                    tc.n_features,
                    tc.n_classes,
                    tc.separation,
                    &mut data_rng,
                )?;
                let mut samples = all.samples;
                let test = Dataset::new(samples.split_off(n_train));
                let model = match tc.task {
                    TaskKind::SyntheticLogistic => Model::Logistic { n_features: tc.n_features },
                    TaskKind::SmallMlp => Model::Mlp {
                        n_features: tc.n_features,
                        hidden: MLP_HIDDEN,
                        n_classes: tc.n_classes,
                    },
                };
                (model, Dataset::new(samples), test)
            }
        };
        let mut part_rng = RngStream::new(tc.seed, streams::PARTITION);
        let devices = partition(&pool, k, tc.samples_per_device, tc.partition, &mut part_rng)?;

        let mut fed = Self {
            model,
            devices,
            test,
            power: system.power(1.0)?,
            system,
            train: tc,
            coefficient_mode: CoefficientMode::Channel,
            system_seed: sys.seed,
        };
        let g = match sys.g_bound {
            Some(g) => g,
            None => fed.calibrate_g_bound()?,
        };
        fed.power = fed.power.with_g_bound(g)?;
        Ok(fed)
    }

    pub fn initial_state(&self) -> Result<TrainState> {
        let mut init_rng = RngStream::new(self.train.seed, streams::INIT);
        Ok(TrainState {
            params: ModelParams::new(self.model.init(&mut init_rng))?,
            round: 0,
            batch_rng: RngStream::new(self.train.seed, streams::BATCHES),
            channel_rng: RngStream::new(self.system_seed, streams::CHANNEL),
        })
    }

    /// `g_margin` times the largest device gradient norm seen over an
    /// ideal-mode warm-up from the initial state.
    pub fn calibrate_g_bound(&self) -> Result<f64> {
        let mut state = self.initial_state()?;
        let mut max_norm: f64 = 0.0;
        for _ in 0..self.train.g_warmup_rounds {
            let rec = self.run_round(&mut state, AggregationMode::Ideal)?;
            max_norm = max_norm.max(rec.max_grad_norm);
        }
        if !(max_norm > 0.0) {
            return Err(Error::Degenerate("all warm-up gradients vanished; set g_bound explicitly".into()));
        }
        Ok(self.train.g_margin * max_norm)
    }

    /// Draw this round's mini-batches and compute the local gradients.
    pub fn round_gradients(&self, state: &mut TrainState) -> Result<Vec<Vec<f64>>> {
        let b = self.train.batch_size;
        let batches: Vec<Vec<usize>> = self
            .devices
            .iter()
            .map(|d| rand::seq::index::sample(state.batch_rng.rng_mut(), d.len(), b).into_vec())
            .collect();
        let w = state.params.as_slice();
        self.devices
            .par_iter()
            .zip(batches.par_iter())
            .map(|(d, idx)| {
                let batch: Vec<&Sample> = idx.iter().map(|&i| &d.samples[i]).collect();
                local_gradient(&self.model, w, &batch)
            })
            .collect()
    }

    pub fn training_loss(&self, w: &ModelParams) -> Result<f64> {
        let all: Vec<&Sample> = self.devices.iter().flat_map(|d| &d.samples).collect();
        batch_loss(&self.model, w.as_slice(), &all)
    }

    pub fn run_round(&self, state: &mut TrainState, mode: AggregationMode) -> Result<RoundRecord> {
        let grads = self.round_gradients(state)?;
        let ideal = ideal_aggregate(&grads)?;
        let grad_sq: Vec<f64> = grads.iter().map(|g| g.iter().map(|x| x * x).sum()).collect();
        let max_grad_norm = grad_sq.iter().cloned().fold(0.0, f64::max).sqrt();
        let k = grads.len();

        let (g_hat, divergence, predicted, active, skipped, violations) = match mode {
            AggregationMode::Ideal => (ideal, 0.0, 0.0, k, false, 0),
            AggregationMode::AirComp => {
                let sys = &self.system;
                let draws = sys
                    .distances
                    .iter()
                    .map(|&d| draw_channel(&sys.estimation, d, &mut state.channel_rng))
                    .collect::<Result<Vec<_>>>()?;
                let power = if self.train.genie_g_bound && max_grad_norm > 0.0 {
                    self.power.with_g_bound(max_grad_norm)?
                } else {
                    self.power
                };
                let out = aggregate_with(
                    &grads,
                    &draws,
                    sys.gamma_th,
                    sys.rho(),
                    &power,
                    &mut state.channel_rng,
                    self.coefficient_mode,
                )?;
                let divergence: f64 = out.g_hat.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum();
                let predicted =
                    divergence_with_skips(&grad_sq, k, sys.gamma_th, sys.rho(), &power, ideal.len())?;
                let mut violations = 0;
                for &i in &out.active_set {
                    let beta = preprocessing_beta(&draws[i], sys.alpha(), out.zeta, out.lambda, k)?;
                    if transmit_power(beta, &grads[i]) > power.p_max * (1.0 + 1e-9) {
                        violations += 1;
                    }
                }
                (out.g_hat, divergence, predicted, out.active_set.len(), out.skipped, violations)
            }
        };

        if !skipped {
            state.params = global_update(&state.params, &g_hat, self.train.eta)?;
        }
        state.round += 1;
        let train_loss = self.training_loss(&state.params)?;
        let (test_loss, test_accuracy) = evaluate(&self.model, &state.params, &self.test)?;
        Ok(RoundRecord {
            round: state.round,
            train_loss,
            test_loss,
            test_accuracy,
            divergence,
            predicted_divergence: predicted,
            active_devices: active,
            skipped,
            power_violations: violations,
            max_grad_norm,
        })
    }

    /// Run `train.rounds` rounds in `mode` from the initial state.
    pub fn run(&self, mode: AggregationMode) -> Result<TrainingTrace> {
        let mut state = self.initial_state()?;
        let initial_train_loss = self.training_loss(&state.params)?;
        let records = (0..self.train.rounds)
            .map(|_| self.run_round(&mut state, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingTrace {
            initial_train_loss,
            records,
            final_params: state.params,
            g_bound: self.power.g_bound,
            gamma_th: self.system.gamma_th,
        })
    }
}

/// Build the federation described by `sys` and train with `sys.train.aggregation`.
pub fn train(sys: &SystemConfig) -> Result<TrainingTrace> {
    Federation::build(sys)?.run(sys.train.aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(features: &[f64], label: usize) -> Sample {
        Sample {
            features: features.to_vec(),
            label,
        }
    }

    #[test]
    fn logistic_gradient_at_zero_by_hand() {
        let m = Model::Logistic { n_features: 2 };
        let a = s(&[1.0, 2.0], 1);
        let b = s(&[3.0, -1.0], 0);
        let g = local_gradient(&m, &[0.0, 0.0], &[&a, &b]).unwrap();
        // residuals -0.5 and +0.5
        assert_eq!(g, vec![(-0.5 * 1.0 + 0.5 * 3.0) / 2.0, (-0.5 * 2.0 - 0.5) / 2.0]);
        let l = batch_loss(&m, &[0.0, 0.0], &[&a, &b]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let dup = local_gradient(&m, &[0.0, 0.0], &[&a, &b, &a, &b]).unwrap();
        assert_eq!(dup, g);
        assert!(local_gradient(&m, &[0.0, 0.0], &[]).is_err());
        assert!(local_gradient(&m, &[0.0], &[&a]).is_err());
    }

    #[test]
    fn loss_by_hand_two_samples() {
        let m = Model::Logistic { n_features: 1 };
        let w = ModelParams::new(vec![2.0]).unwrap();
        let test = Dataset::new(vec![s(&[1.0], 1), s(&[0.5], 0)]);
        let (loss, acc) = evaluate(&m, &w, &test).unwrap();
        let expected = ((1.0 + (-2.0f64).exp()).ln() + (1.0 + 1f64.exp()).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-15);
        assert_eq!(acc, 0.5);
        assert!(evaluate(&m, &w, &Dataset::default()).is_err());
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let m = Model::Logistic { n_features: 1 };
        let w = ModelParams::new(vec![0.0]).unwrap();
        let test = Dataset::new((0..10).map(|i| s(&[i as f64 - 4.5], i % 2)).collect());
        assert_eq!(evaluate(&m, &w, &test).unwrap().1, 0.5);
        let perfect = ModelParams::new(vec![1.0]).unwrap();
        let sep = Dataset::new(vec![s(&[-2.0], 0), s(&[-1.0], 0), s(&[1.0], 1), s(&[3.0], 1)]);
        assert_eq!(evaluate(&m, &perfect, &sep).unwrap().1, 1.0);
    }

    #[test]
    fn aggregate_and_update_basics() {
        let g = vec![1.0, -2.0, 3.0];
        assert_eq!(ideal_aggregate(std::slice::from_ref(&g)).unwrap(), g);
        assert_eq!(ideal_aggregate(&[g.clone(), g.iter().map(|x| -x).collect()]).unwrap(), vec![0.0; 3]);
        assert!(ideal_aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let w = ModelParams::new(g.clone()).unwrap();
        assert_eq!(global_update(&w, &[0.0; 3], 0.1).unwrap(), w);
        assert_eq!(global_update(&w, &g, 1.0).unwrap().into_vec(), vec![0.0; 3]);
        assert!(global_update(&w, &[1.0], 0.1).is_err());
        assert!(ModelParams::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn validation() {
        let mut tc = TrainConfig::default();
        assert!(tc.validate().is_ok());
        tc.batch_size = 201;
        assert!(tc.validate().is_err());
        tc = TrainConfig { n_classes: 3, ..Default::default() };
        assert!(tc.validate().is_err());
        tc = TrainConfig { eta: 0.0, ..Default::default() };
        assert!(tc.validate().is_err());
    }
}

//! Loss, gradient and prediction for the two desk-scale tasks.
//!
//! Parameters are a flat vector. The logistic model has one weight per
//! feature and no bias (the synthetic blobs are symmetric about the origin).
//! The MLP packs `W1 (h×d) | b1 (h) | W2 (c×h) | b2 (c)` with ReLU hidden
//! units and a softmax output.

use rand::Rng;

use super::data::Sample;
use crate::channel::RngStream;

/// Width of the MLP hidden layer.
pub const MLP_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// Binary cross-entropy on `σ(w·x)`; labels 0/1.
    Logistic { n_features: usize },
    /// One hidden ReLU layer with softmax cross-entropy.
    Mlp {
        n_features: usize,
        hidden: usize,
        n_classes: usize,
    },
}

impl Model {
    pub fn dim(&self) -> usize {
        match *self {
            Model::Logistic { n_features } => n_features,
            Model::Mlp {
                n_features,
                hidden,
                n_classes,
            } => hidden * n_features + hidden + n_classes * hidden + n_classes,
        }
    }

    pub fn n_features(&self) -> usize {
        match *self {
            Model::Logistic { n_features } | Model::Mlp { n_features, .. } => n_features,
        }
    }

    /// Initial parameters. Logistic starts at zero; the MLP uses He-uniform
    /// weights and zero biases.
    pub fn init(&self, rng: &mut RngStream) -> Vec<f64> {
        match *self {
            Model::Logistic { n_features } => vec![0.0; n_features],
            Model::Mlp {
                n_features,
                hidden,
                n_classes,
            } => {
                let mut w = vec![0.0; self.dim()];
                let l1 = (6.0 / n_features as f64).sqrt();
                let l2 = (6.0 / hidden as f64).sqrt();
                let (w1, rest) = w.split_at_mut(hidden * n_features);
                for x in w1.iter_mut() {
                    *x = rng.rng_mut().gen_range(-l1..l1);
                }
                let w2 = &mut rest[hidden..hidden + n_classes * hidden];
                for x in w2.iter_mut() {
                    *x = rng.rng_mut().gen_range(-l2..l2);
                }
                w
            }
        }
    }

    /// Loss of one sample, added into `grad` when given.
    pub fn sample_loss(&self, w: &[f64], s: &Sample, grad: Option<&mut [f64]>) -> f64 {
        match *self {
            Model::Logistic { .. } => {
                let z: f64 = w.iter().zip(&s.features).map(|(a, b)| a * b).sum();
                let y = s.label as f64;
                if let Some(g) = grad {
                    let resid = sigmoid(z) - y;
                    for (gi, xi) in g.iter_mut().zip(&s.features) {
                        *gi += resid * xi;
                    }
                }
                softplus(z) - y * z
            }
            Model::Mlp {
                n_features,
                hidden,
                n_classes,
            } => mlp_loss(w, s, n_features, hidden, n_classes, grad),
        }
    }

    /// Predicted class; ties resolve to the lowest class index.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        match *self {
            Model::Logistic { .. } => {
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                usize::from(z > 0.0)
            }
            Model::Mlp {
                n_features,
                hidden,
                n_classes,
            } => {
                let (_, logits) = mlp_forward(w, x, n_features, hidden, n_classes);
                let mut best = 0;
                for (c, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = c;
                    }
                }
                best
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^z) without overflow
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn mlp_forward(w: &[f64], x: &[f64], d: usize, h: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
    let (w1, rest) = w.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(c * h);
    let act: Vec<f64> = (0..h)
        .map(|j| {
            let pre: f64 = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            pre.max(0.0)
        })
        .collect();
    let logits = (0..c)
        .map(|k| b2[k] + w2[k * h..(k + 1) * h].iter().zip(&act).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    (act, logits)
}

fn mlp_loss(
    w: &[f64],
    s: &Sample,
    d: usize,
    h: usize,
    c: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let (act, logits) = mlp_forward(w, &s.features, d, h, c);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let loss = log_z - logits[s.label];

    if let Some(g) = grad {
        let probs: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
        let (gw1, rest) = g.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);
        let w2 = &w[h * d + h..h * d + h + c * h];
        let mut dact = vec![0.0; h];
        for k in 0..c {
            let dl = probs[k] - if k == s.label { 1.0 } else { 0.0 };
            gb2[k] += dl;
            for j in 0..h {
                gw2[k * h + j] += dl * act[j];
                dact[j] += dl * w2[k * h + j];
            }
        }
        for j in 0..h {
            if act[j] <= 0.0 {
                continue;
            }
            gb1[j] += dact[j];
            for (gi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(&s.features) {
                *gi += dact[j] * xi;
            }
        }
    }
    loss
}

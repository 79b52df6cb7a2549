//! Synthetic datasets and device partitioning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How training samples are spread over devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Shuffled, equal-size shards.
    #[default]
    Iid,
    /// Samples sorted by label before sharding, so each device sees at most
    /// two classes when shards are no larger than a class.
    LabelSkew,
}

/// Gaussian blobs with unit noise.
///
/// Two classes sit at `±(separation/2)·(1, …, 1)/√d`. With more classes the
/// means are `±(separation/2)·e_{c mod d}`, sign flipping every `d` classes.
/// Labels are balanced (`i mod n_classes`) and then shuffled.
pub fn gaussian_blobs(
    n: usize,
    n_features: usize,
    n_classes: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if n_features == 0 || n_classes < 2 {
        return Err(Error::Usage("need n_features ≥ 1 and n_classes ≥ 2".into()));
    }
    let half = separation / 2.0;
    let mean = |c: usize| -> Vec<f64> {
        if n_classes == 2 {
            let s = if c == 0 { -half } else { half } / (n_features as f64).sqrt();
            vec![s; n_features]
        } else {
            let mut m = vec![0.0; n_features];
            let sign = if (c / n_features).is_multiple_of(2) { 1.0 } else { -1.0 };
            m[c % n_features] = sign * half;
            m
        }
    };
    let means: Vec<Vec<f64>> = (0..n_classes).map(mean).collect();
    let mut samples: Vec<Sample> = (0..n)
        .map(|i| {
            let label = i % n_classes;
            let features = means[label].iter().map(|m| m + rng.normal()).collect();
            Sample { features, label }
        })
        .collect();
    samples.shuffle(rng.rng_mut());
    Ok(Dataset::new(samples))
}

/// Split `data` into `k` shards of exactly `per_device` samples each.
pub fn partition(
    data: &Dataset,
    k: usize,
    per_device: usize,
    scheme: Partition,
    rng: &mut RngStream,
) -> Result<Vec<Dataset>> {
    if k == 0 || per_device == 0 {
        return Err(Error::Usage("need k ≥ 1 and per_device ≥ 1".into()));
    }
    if data.len() < k * per_device {
        return Err(Error::Usage(format!(
            "{} samples cannot fill {k} devices × {per_device}",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng.rng_mut());
    idx.truncate(k * per_device);
    if scheme == Partition::LabelSkew {
        idx.sort_by_key(|&i| (data.samples[i].label, i));
    }
    Ok(idx
        .chunks(per_device)
        .map(|chunk| Dataset::new(chunk.iter().map(|&i| data.samples[i].clone()).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced() {
        let mut rng = RngStream::new(1, 0);
        let d = gaussian_blobs(1000, 4, 2, 3.0, &mut rng).unwrap();
        let ones = d.samples.iter().filter(|s| s.label == 1).count();
        assert_eq!(ones, 500);
        assert!(d.samples.iter().all(|s| s.features.len() == 4));
    }

    #[test]
    fn shards_have_equal_size() {
        let mut rng = RngStream::new(2, 0);
        let d = gaussian_blobs(2000, 3, 4, 3.0, &mut rng).unwrap();
        let shards = partition(&d, 10, 200, Partition::Iid, &mut rng).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.len() == 200));
        assert!(partition(&d, 11, 200, Partition::Iid, &mut rng).is_err());
    }

    #[test]
    fn label_skew_limits_classes() {
        let mut rng = RngStream::new(3, 0);
        let d = gaussian_blobs(2000, 5, 10, 3.0, &mut rng).unwrap();
        let shards = partition(&d, 10, 150, Partition::LabelSkew, &mut rng).unwrap();
        for s in shards {
            let mut labels: Vec<usize> = s.samples.iter().map(|x| x.label).collect();
            labels.sort();
            labels.dedup();
            assert!(labels.len() <= 2, "{labels:?}");
        }
    }
}

//! Farthest point sampling, sample extraction and balanced dataset splitting.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{squared_distance, PointCloud};
use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scalar::Real;

/// Indices chosen by farthest point sampling from a fixed start index.
///
/// Keeps the running minimum squared distance of every point to the
/// selected set; each step picks its argmax, ties to the lowest index.
pub fn fps_indices<T: Real>(cloud: &PointCloud<T>, s: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if s == 0 {
        return Err(Error::EmptyRequest("sample size must be at least 1"));
    }
    if s > n {
        return Err(Error::InsufficientPoints {
            requested: s,
            available: n,
        });
    }
    if start >= n {
        return Err(Error::InvalidParams(format!("start index {start} out of range for {n} points")));
    }
    let dim = cloud.dim();
    let coords = cloud.as_flat();
    let mut selected = Vec::with_capacity(s);
    // Selected points are marked with -inf so they are never picked again.
    let mut min_d = vec![T::infinity(); n];
    let mut current = start;
    loop {
        selected.push(current);
        min_d[current] = T::neg_infinity();
        if selected.len() == s {
            break;
        }
        let anchor = cloud.point(current);
        let mut best = usize::MAX;
        let mut best_d = T::neg_infinity();
        for (i, (p, m)) in coords.chunks_exact(dim).zip(min_d.iter_mut()).enumerate() {
            let d = if dim == 3 {
                let (dx, dy, dz) = (p[0] - anchor[0], p[1] - anchor[1], p[2] - anchor[2]);
                dx * dx + dy * dy + dz * dz
            } else {
                squared_distance(p, anchor)
            };
            if d < *m {
                *m = d;
            }
            if *m > best_d {
                best_d = *m;
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Farthest point sampling with a seeded random start point.
pub fn fps<T: Real>(cloud: &PointCloud<T>, s: usize, seed: u64) -> Result<PointCloud<T>> {
    let start = rng(seed).random_range(0..cloud.len());
    let idx = fps_indices(cloud, s, start)?;
    cloud.select(&idx)
}

/// A batch of equally sized FPS samples drawn from one parent cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T> {
    pub samples: Vec<PointCloud<T>>,
    pub source_label: String,
}

impl<T: Real> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_size(&self) -> Option<usize> {
        self.samples.first().map(|c| c.len())
    }
}

/// Seed of the `index`-th draw of [`extract_samples`].
pub fn draw_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add(index as u64)
}

/// `count` FPS draws of `s` points each; draw `i` uses seed `master_seed + i`.
pub fn extract_samples<T: Real>(
    cloud: &PointCloud<T>,
    count: usize,
    s: usize,
    label: &str,
    seed: u64,
) -> Result<SampleSet<T>> {
    let samples = (0..count)
        .into_par_iter()
        .map(|i| fps(cloud, s, draw_seed(seed, i)).map(|c| c.with_label(label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        samples,
        source_label: label.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Ratio(r));
        }
        Ok(())
    }

    /// Per-label `(train, validation, test)` sizes for `n` samples.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.validation).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub cloud: PointCloud<T>,
    pub label: String,
    /// Position of the sample in its source [`SampleSet`].
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit<T> {
    pub train: Vec<LabeledSample<T>>,
    pub validation: Vec<LabeledSample<T>>,
    pub test: Vec<LabeledSample<T>>,
    pub ratios: SplitRatios,
}

impl<T: Real> DataSplit<T> {
    /// Samples of one label within a split part, ordered by source index.
    pub fn by_label<'a>(part: &'a [LabeledSample<T>], label: &str) -> Vec<&'a LabeledSample<T>> {
        let mut v: Vec<_> = part.iter().filter(|s| s.label == label).collect();
        v.sort_by_key(|s| s.index);
        v
    }
}

/// Stratified split of two labeled sample sets.
///
/// Each label's samples are permuted with a generator seeded by `seed` (so
/// equally sized sets get the same permutation) and cut by `ratios`; each
/// combined part is then shuffled.
pub fn split_dataset<T: Real>(
    a: &SampleSet<T>,
    b: &SampleSet<T>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DataSplit<T>> {
    ratios.validate()?;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for set in [a, b] {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng(seed));
        let (n_train, n_val, _) = ratios.sizes(set.len());
        for (pos, &i) in order.iter().enumerate() {
            let item = LabeledSample {
                cloud: set.samples[i].clone(),
                label: set.source_label.clone(),
                index: i,
            };
            if pos < n_train {
                train.push(item);
            } else if pos < n_train + n_val {
                validation.push(item);
            } else {
                test.push(item);
            }
        }
    }
    let mut r = rng(crate::rng::mix(seed, 1));
    train.shuffle(&mut r);
    validation.shuffle(&mut r);
    test.shuffle(&mut r);
    Ok(DataSplit {
        train,
        validation,
        test,
        ratios,
    })
}

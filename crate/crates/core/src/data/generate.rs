//! Synthetic bags with known instance-level ground truth.
//!
//! All generators share one construction: background instances are standard
//! normal; key instances have every coordinate's mean shifted by
//! `signal_shift` with a fixed random sign per coordinate. The stored
//! direction is that sign pattern scaled to unit length, so a key instance
//! moves `signal_shift * sqrt(D)` along it. Every generator is a pure function
//! of its config and seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{discretize_event_times, Bag, Dataset, TaskKind, TaskLabel};
use crate::error::{invalid, Result};
use crate::numeric::Tensor;

fn default_positive_fraction() -> f64 {
    0.5
}

fn default_shift() -> f64 {
    2.0
}

fn default_intervals() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationConfig {
    pub n_bags: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub dim: usize,
    pub witness_rate: f64,
    pub signal_shift: f64,
    #[serde(default = "default_positive_fraction")]
    pub positive_fraction: f64,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            n_bags: 500,
            n_min: 20,
            n_max: 60,
            dim: 32,
            witness_rate: 0.1,
            signal_shift: 2.0,
            positive_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub n_bags: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub dim: usize,
    pub signal_scale: f64,
    pub noise_sd: f64,
    /// Per-coordinate mean shift of key instances.
    #[serde(default = "default_shift")]
    pub signal_shift: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n_bags: 500,
            n_min: 20,
            n_max: 60,
            dim: 32,
            signal_scale: 1.0,
            noise_sd: 0.1,
            signal_shift: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConfig {
    pub n_bags: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub dim: usize,
    pub base_rate: f64,
    pub censor_rate: f64,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default = "default_shift")]
    pub signal_shift: f64,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            n_bags: 500,
            n_min: 20,
            n_max: 60,
            dim: 32,
            base_rate: 0.1,
            censor_rate: 0.03,
            intervals: 4,
            signal_shift: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Classification(ClassificationConfig),
    Regression(RegressionConfig),
    Survival(SurvivalConfig),
}

impl GeneratorConfig {
    pub fn task(&self) -> TaskKind {
        match self {
            GeneratorConfig::Classification(_) => TaskKind::Classification,
            GeneratorConfig::Regression(_) => TaskKind::Regression,
            GeneratorConfig::Survival(_) => TaskKind::Survival,
        }
    }
}

pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    match config {
        GeneratorConfig::Classification(c) => generate_classification_bags(c, seed),
        GeneratorConfig::Regression(c) => generate_regression_bags(c, seed),
        GeneratorConfig::Survival(c) => generate_survival_bags(c, seed),
    }
}

fn check_common(n_bags: usize, n_min: usize, n_max: usize, dim: usize) -> Result<()> {
    if n_bags == 0 || dim == 0 {
        return invalid("need at least one bag and one feature");
    }
    if n_min == 0 || n_min > n_max {
        return invalid(format!("bag size range [{n_min}, {n_max}] is empty"));
    }
    Ok(())
}

/// Random sign pattern scaled to unit length.
fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let norm = (dim as f64).sqrt();
    (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 } / norm)
        .collect()
}

/// Draws `n` instances; key instances get `shift` added to every coordinate
/// with the sign of `direction`.
fn draw_instances(
    rng: &mut ChaCha8Rng,
    key: &[bool],
    dim: usize,
    direction: &[f64],
    shift: f64,
) -> Tensor {
    let step = shift * (dim as f64).sqrt();
    let mut data = Vec::with_capacity(key.len() * dim);
    for &k in key {
        for &u in direction {
            let z: f64 = rng.sample(StandardNormal);
            data.push(if k { z + step * u } else { z });
        }
    }
    Tensor::matrix(key.len(), dim, data).expect("sized above")
}

fn bag_id(i: usize) -> String {
    format!("bag_{i:04}")
}

pub fn generate_classification_bags(cfg: &ClassificationConfig, seed: u64) -> Result<Dataset> {
    check_common(cfg.n_bags, cfg.n_min, cfg.n_max, cfg.dim)?;
    if !(0.0..=1.0).contains(&cfg.witness_rate) {
        return invalid(format!("witness_rate {} outside [0, 1]", cfg.witness_rate));
    }
    if !(0.0..=1.0).contains(&cfg.positive_fraction) {
        return invalid(format!(
            "positive_fraction {} outside [0, 1]",
            cfg.positive_fraction
        ));
    }
    if cfg.signal_shift <= 0.0 {
        return invalid("signal_shift must be positive");
    }
    let n_pos = (cfg.n_bags as f64 * cfg.positive_fraction).round() as usize;
    if cfg.witness_rate == 0.0 && n_pos > 0 {
        return invalid("witness_rate 0 cannot produce positive bags");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = unit_direction(&mut rng, cfg.dim);
    let mut labels: Vec<bool> = (0..cfg.n_bags).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);

    let bags = labels
        .iter()
        .enumerate()
        .map(|(i, &positive)| {
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let mut key = vec![false; n];
            if positive {
                for k in key.iter_mut() {
                    *k = rng.random::<f64>() < cfg.witness_rate;
                }
                if !key.iter().any(|&k| k) {
                    key[rng.random_range(0..n)] = true;
                }
            }
            let features = draw_instances(&mut rng, &key, cfg.dim, &direction, cfg.signal_shift);
            Bag {
                id: bag_id(i),
                features,
                label: Some(TaskLabel::Class(positive as usize)),
                positions: None,
                truth_mask: Some(key),
            }
        })
        .collect();
    Ok(Dataset {
        task: TaskKind::Classification,
        dim: cfg.dim,
        bags,
        direction: Some(direction),
        num_classes: Some(2),
        intervals: None,
        generator: Some(GeneratorConfig::Classification(cfg.clone())),
        seed: Some(seed),
    })
}

/// Projection of every instance onto `direction`.
pub(crate) fn contributions(features: &Tensor, direction: &[f64]) -> Vec<f64> {
    (0..features.rows())
        .map(|r| {
            features
                .row_slice(r)
                .iter()
                .zip(direction)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub fn generate_regression_bags(cfg: &RegressionConfig, seed: u64) -> Result<Dataset> {
    check_common(cfg.n_bags, cfg.n_min, cfg.n_max, cfg.dim)?;
    if cfg.noise_sd < 0.0 || !cfg.noise_sd.is_finite() {
        return invalid(format!("noise_sd {} must be finite and >= 0", cfg.noise_sd));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = unit_direction(&mut rng, cfg.dim);
    let bags = (0..cfg.n_bags)
        .map(|i| {
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let key_rate: f64 = rng.random_range(0.0..0.5);
            let key: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < key_rate).collect();
            let features = draw_instances(&mut rng, &key, cfg.dim, &direction, cfg.signal_shift);
            let contrib = contributions(&features, &direction);
            let mean = contrib.iter().sum::<f64>() / n as f64;
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_sd;
            let value = mean * cfg.signal_scale + noise;
            // top quartile by contribution, ties broken by index
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| contrib[b].total_cmp(&contrib[a]).then(a.cmp(&b)));
            let mut mask = vec![false; n];
            for &j in order.iter().take(n.div_ceil(4)) {
                mask[j] = true;
            }
            Bag {
                id: bag_id(i),
                features,
                label: Some(TaskLabel::Value(value)),
                positions: None,
                truth_mask: Some(mask),
            }
        })
        .collect();
    Ok(Dataset {
        task: TaskKind::Regression,
        dim: cfg.dim,
        bags,
        direction: Some(direction),
        num_classes: None,
        intervals: None,
        generator: Some(GeneratorConfig::Regression(cfg.clone())),
        seed: Some(seed),
    })
}

pub fn generate_survival_bags(cfg: &SurvivalConfig, seed: u64) -> Result<Dataset> {
    check_common(cfg.n_bags, cfg.n_min, cfg.n_max, cfg.dim)?;
    if cfg.intervals < 2 {
        return invalid(format!("need at least 2 intervals, got {}", cfg.intervals));
    }
    if !(cfg.base_rate > 0.0 && cfg.censor_rate > 0.0) {
        return invalid("base_rate and censor_rate must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = unit_direction(&mut rng, cfg.dim);
    let censor = Exp::new(cfg.censor_rate).map_err(|e| crate::Error::Invalid(e.to_string()))?;
    let mut bags = Vec::with_capacity(cfg.n_bags);
    let mut times = Vec::with_capacity(cfg.n_bags);
    let mut flags = Vec::with_capacity(cfg.n_bags);
    for i in 0..cfg.n_bags {
        let n = rng.random_range(cfg.n_min..=cfg.n_max);
        let key_rate: f64 = rng.random();
        let key: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < key_rate).collect();
        let features = draw_instances(&mut rng, &key, cfg.dim, &direction, cfg.signal_shift);
        let risk = key.iter().filter(|&&k| k).count() as f64 / n as f64;
        let event = Exp::new(cfg.base_rate * risk.exp())
            .map_err(|e| crate::Error::Invalid(e.to_string()))?
            .sample(&mut rng);
        let cens_time = censor.sample(&mut rng);
        let censored = cens_time < event;
        times.push(event.min(cens_time));
        flags.push(censored);
        bags.push(Bag {
            id: bag_id(i),
            features,
            label: None,
            positions: None,
            truth_mask: Some(key),
        });
    }
    let intervals = discretize_event_times(&times, &flags, cfg.intervals)?;
    for (((bag, &t), &c), &y) in bags.iter_mut().zip(&times).zip(&flags).zip(&intervals) {
        bag.label = Some(TaskLabel::Survival {
            interval: y,
            censored: c,
            raw_time: t,
        });
    }
    Ok(Dataset {
        task: TaskKind::Survival,
        dim: cfg.dim,
        bags,
        direction: Some(direction),
        num_classes: None,
        intervals: Some(cfg.intervals),
        generator: Some(GeneratorConfig::Survival(cfg.clone())),
        seed: Some(seed),
    })
}

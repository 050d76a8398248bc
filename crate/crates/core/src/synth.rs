//! Seeded synthetic multi-instance datasets.
//!
//! Background instances are i.i.d. standard normal. A unit "planted" direction
//! carries the class signal, either in a single witness instance per positive
//! bag or as a shift of every instance of positive bags.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Bag, ClassBag, Dataset, Label, MulticlassDataset};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SynthSignal {
    /// One instance of each positive bag has its planted-direction component
    /// replaced by `strength + ½|z|`; all other instances are background.
    WitnessInstance,
    /// Every instance of a positive bag is shifted by `strength` along the planted direction.
    MeanShift,
}

impl SynthSignal {
    pub fn default_strength(self) -> f64 {
        match self {
            SynthSignal::WitnessInstance => 5.0,
            SynthSignal::MeanShift => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub dim: usize,
    /// Inclusive range of instances per bag.
    pub bag_size: (usize, usize),
    pub signal: SynthSignal,
    pub strength: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_pos: usize, n_neg: usize, dim: usize, bag_size: (usize, usize), signal: SynthSignal, seed: u64) -> Self {
        SynthConfig { n_pos, n_neg, dim, bag_size, signal, strength: signal.default_strength(), seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::InvalidArgument(format!(
                "need at least one bag per class, got {} positive and {} negative",
                self.n_pos, self.n_neg
            )));
        }
        validate_shape(self.dim, self.bag_size, self.strength)
    }
}

fn validate_shape(dim: usize, (lo, hi): (usize, usize), strength: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!("invalid bag size range {lo}:{hi}")));
    }
    if !strength.is_finite() {
        return Err(Error::InvalidArgument(format!("signal strength must be finite, got {strength}")));
    }
    Ok(())
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let norm = libm::sqrt(dot(&v, &v));
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Replaces the `direction` component of `x` with `strength + ½|z|`.
fn plant_witness(rng: &mut ChaCha8Rng, x: &mut [f64], direction: &[f64], strength: f64) {
    let z: f64 = rng.sample(StandardNormal);
    let target = strength + 0.5 * z.abs();
    let proj = dot(x, direction);
    for (xi, vi) in x.iter_mut().zip(direction) {
        *xi += (target - proj) * vi;
    }
}

fn background_bag(rng: &mut ChaCha8Rng, dim: usize, (lo, hi): (usize, usize)) -> Vec<Vec<f64>> {
    let size = rng.random_range(lo..=hi);
    (0..size).map(|_| gaussian_vec(rng, dim)).collect()
}

/// Generates a binary dataset. Bags are emitted in a seeded random label order
/// with ids `bag-00000`, `bag-00001`, …
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    synth_with_direction(config).map(|(ds, _)| ds)
}

/// Like [`synth_dataset`], also returning the planted unit direction.
pub fn synth_with_direction(config: &SynthConfig) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let direction = unit_direction(&mut rng, config.dim);

    let mut labels: Vec<Label> = core::iter::repeat_n(Label::Positive, config.n_pos)
        .chain(core::iter::repeat_n(Label::Negative, config.n_neg))
        .collect();
    labels.shuffle(&mut rng);

    let mut bags = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let mut instances = background_bag(&mut rng, config.dim, config.bag_size);
        if label.is_positive() {
            match config.signal {
                SynthSignal::WitnessInstance => {
                    let at = rng.random_range(0..instances.len());
                    plant_witness(&mut rng, &mut instances[at], &direction, config.strength);
                }
                SynthSignal::MeanShift => {
                    for x in &mut instances {
                        for (xi, vi) in x.iter_mut().zip(&direction) {
                            *xi += config.strength * vi;
                        }
                    }
                }
            }
        }
        bags.push(Bag::new(bag_id(i), label, Matrix::from_rows(&instances)?)?);
    }
    Ok((Dataset::new(bags)?, direction))
}

fn bag_id(i: usize) -> String {
    format!("bag-{i:05}")
}

/// Multi-class witness-instance data: class `c` has its own planted direction
/// (the directions are orthonormal), and every bag holds one witness instance
/// along its class direction.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MulticlassSynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub bag_size: (usize, usize),
    pub strength: f64,
    pub seed: u64,
}

pub fn synth_multiclass(config: &MulticlassSynthConfig) -> Result<MulticlassDataset> {
    validate_shape(config.dim, config.bag_size, config.strength)?;
    if config.classes < 2 || config.classes > config.dim {
        return Err(Error::InvalidArgument(format!(
            "class count must lie in 2..={} for dimension {}, got {}",
            config.dim, config.dim, config.classes
        )));
    }
    if config.per_class == 0 {
        return Err(Error::InvalidArgument("need at least one bag per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Gram-Schmidt on random directions.
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(config.classes);
    while directions.len() < config.classes {
        let mut v = unit_direction(&mut rng, config.dim);
        for u in &directions {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= p * ui);
        }
        let norm = libm::sqrt(dot(&v, &v));
        if norm > 1e-6 {
            directions.push(v.into_iter().map(|x| x / norm).collect());
        }
    }

    let mut classes: Vec<usize> = (0..config.classes).flat_map(|c| core::iter::repeat_n(c, config.per_class)).collect();
    classes.shuffle(&mut rng);

    let mut bags = Vec::with_capacity(classes.len());
    for (i, &class) in classes.iter().enumerate() {
        let mut instances = background_bag(&mut rng, config.dim, config.bag_size);
        let at = rng.random_range(0..instances.len());
        plant_witness(&mut rng, &mut instances[at], &directions[class], config.strength);
        bags.push(ClassBag { id: bag_id(i), class, instances: Matrix::from_rows(&instances)? });
    }
    let names = (0..config.classes).map(|c| format!("class-{c}")).collect();
    MulticlassDataset::new(bags, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 99th percentile of the standard normal.
    const Z99: f64 = 2.326_347_874_040_840_8;

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::new(1, 1, 2, (1, 1), SynthSignal::WitnessInstance, 7);
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(synth_dataset(&cfg).unwrap(), synth_dataset(&other).unwrap());
    }

    #[test]
    fn rejects_invalid_ranges() {
        let cfg = SynthConfig::new(0, 1, 2, (1, 1), SynthSignal::WitnessInstance, 7);
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig::new(1, 1, 2, (0, 5), SynthSignal::WitnessInstance, 7);
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig::new(1, 1, 2, (6, 5), SynthSignal::WitnessInstance, 7);
        assert!(synth_dataset(&cfg).is_err());
    }

    #[test]
    fn shape_and_counts() {
        let cfg = SynthConfig::new(7, 5, 4, (3, 6), SynthSignal::MeanShift, 1);
        let ds = synth_dataset(&cfg).unwrap();
        assert_eq!((ds.count_positive(), ds.count_negative(), ds.dim()), (7, 5, 4));
        assert!(ds.bags().iter().all(|b| (3..=6).contains(&b.len())));
    }

    #[test]
    fn witness_exceeds_background_percentile() {
        let cfg = SynthConfig::new(60, 60, 8, (5, 20), SynthSignal::WitnessInstance, 42);
        assert!(cfg.strength > Z99);
        let (ds, v) = synth_with_direction(&cfg).unwrap();
        let mut background: Vec<f64> = ds
            .bags()
            .iter()
            .filter(|b| !b.label().is_positive())
            .flat_map(|b| b.instances().iter_rows().map(|x| dot(x, &v)).collect::<Vec<_>>())
            .collect();
        background.sort_by(f64::total_cmp);
        let p99 = background[(background.len() as f64 * 0.99) as usize];
        for bag in ds.bags().iter().filter(|b| b.label().is_positive()) {
            let best = bag.instances().iter_rows().map(|x| dot(x, &v)).fold(f64::NEG_INFINITY, f64::max);
            assert!(best > p99 && best >= cfg.strength, "bag {} max projection {best}", bag.id());
        }
    }

    #[test]
    fn mean_shift_moves_every_positive_instance() {
        let mut cfg = SynthConfig::new(3, 3, 3, (2, 4), SynthSignal::MeanShift, 5);
        cfg.strength = 100.0;
        let (ds, v) = synth_with_direction(&cfg).unwrap();
        for bag in ds.bags() {
            for x in bag.instances().iter_rows() {
                assert_eq!(dot(x, &v) > 50.0, bag.label().is_positive());
            }
        }
    }

    #[test]
    fn multiclass_balanced() {
        let cfg = MulticlassSynthConfig { classes: 3, per_class: 4, dim: 5, bag_size: (2, 3), strength: 5.0, seed: 9 };
        let ds = synth_multiclass(&cfg).unwrap();
        for c in 0..3 {
            assert_eq!(ds.bags().iter().filter(|b| b.class == c).count(), 4);
        }
        assert_eq!(ds, synth_multiclass(&cfg).unwrap());
        assert!(synth_multiclass(&MulticlassSynthConfig { classes: 6, ..cfg }).is_err());
    }
}

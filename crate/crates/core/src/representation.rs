//! Max-pooled convolutional bag encoding and the mean-pooling baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm_sq, Matrix};

/// Elementwise, monotonically nondecreasing, differentiable activation `φ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(alloc::format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// The `m` filters `w_1 … w_m` of dimension `d`, plus the activation.
///
/// Filters are stored one per row, so `filter(k)` is the column `w_k` of `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    weights: Matrix,
    activation: Activation,
}

impl FilterBank {
    /// `weights` holds one filter per row (`m × d`).
    pub fn new(weights: Matrix, activation: Activation) -> Result<FilterBank> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidArgument("filter bank needs m ≥ 1 filters of dimension d ≥ 1".into()));
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter weights".into()));
        }
        Ok(FilterBank { weights, activation })
    }

    /// i.i.d. Gaussian filters scaled by `init_scale / √d`.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        count: usize,
        activation: Activation,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<FilterBank> {
        let scale = init_scale / libm::sqrt(dim as f64);
        let data = (0..dim * count).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        FilterBank::new(Matrix::from_vec(count, dim, data)?, activation)
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn count(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        self.weights.row(k)
    }

    pub fn filter_mut(&mut self, k: usize) -> &mut [f64] {
        self.weights.row_mut(k)
    }

    /// Filters as an `m × d` matrix (the transpose of `W`).
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// `‖W‖²` (squared Frobenius norm).
    pub fn norm_sq(&self) -> f64 {
        norm_sq(self.weights.as_slice())
    }
}

/// Max-pooled response `g` of one bag and the witness instance `psi[k]` behind each entry.
#[derive(Clone, Debug, PartialEq)]
pub struct BagEncoding {
    pub g: Vec<f64>,
    pub psi: Vec<usize>,
}

/// `g_k = max_κ φ(w_kᵀ x_κ)`, with `psi_k` the lowest index attaining the maximum.
pub fn forward_bag(filters: &FilterBank, bag: &Bag) -> Result<BagEncoding> {
    if bag.dim() != filters.dim() {
        return Err(Error::DimensionMismatch { expected: filters.dim(), found: bag.dim() });
    }
    let phi = filters.activation();
    let m = filters.count();
    let mut g = vec![0.0; m];
    let mut psi = vec![0usize; m];
    for k in 0..m {
        let w = filters.filter(k);
        // The maximum is taken over activations, not pre-activations: the two agree
        // except where φ saturates to the same float, and only this order keeps
        // the lowest-index tie-break exact.
        let mut best = phi.apply(dot(w, bag.instance(0)));
        let mut arg = 0;
        for kappa in 1..bag.len() {
            let a = phi.apply(dot(w, bag.instance(kappa)));
            if a > best {
                best = a;
                arg = kappa;
            }
        }
        g[k] = best;
        psi[k] = arg;
    }
    Ok(BagEncoding { g, psi })
}

/// Encodings of every bag: `g` is `n × m`, `psi` is `n × m` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEncoding {
    pub g: Matrix,
    pub psi: Vec<usize>,
}

impl DatasetEncoding {
    #[inline]
    pub fn witness(&self, bag: usize, filter: usize) -> usize {
        self.psi[bag * self.g.cols() + filter]
    }

    fn from_rows(rows: Vec<BagEncoding>, m: usize) -> Result<DatasetEncoding> {
        let n = rows.len();
        let mut g = Vec::with_capacity(n * m);
        let mut psi = Vec::with_capacity(n * m);
        for r in rows {
            g.extend_from_slice(&r.g);
            psi.extend_from_slice(&r.psi);
        }
        Ok(DatasetEncoding { g: Matrix::from_vec(n, m, g)?, psi })
    }
}

/// Row `i` of the result is `forward_bag(filters, bag_i)`.
///
/// With the `parallel` feature bags are encoded on the rayon pool; rows are
/// independent, so the output does not depend on scheduling.
pub fn encode_dataset(filters: &FilterBank, dataset: &Dataset) -> Result<DatasetEncoding> {
    #[cfg(feature = "parallel")]
    {
        encode_dataset_parallel(filters, dataset)
    }
    #[cfg(not(feature = "parallel"))]
    {
        encode_dataset_serial(filters, dataset)
    }
}

pub fn encode_dataset_serial(filters: &FilterBank, dataset: &Dataset) -> Result<DatasetEncoding> {
    let rows = dataset.bags().iter().map(|b| forward_bag(filters, b)).collect::<Result<Vec<_>>>()?;
    DatasetEncoding::from_rows(rows, filters.count())
}

#[cfg(feature = "parallel")]
pub fn encode_dataset_parallel(filters: &FilterBank, dataset: &Dataset) -> Result<DatasetEncoding> {
    use rayon::prelude::*;
    let rows = dataset.bags().par_iter().map(|b| forward_bag(filters, b)).collect::<Result<Vec<_>>>()?;
    DatasetEncoding::from_rows(rows, filters.count())
}

/// Classifier score `uᵀg`.
pub fn score(u: &[f64], encoding: &BagEncoding) -> Result<f64> {
    score_features(u, &encoding.g)
}

pub fn score_features(u: &[f64], features: &[f64]) -> Result<f64> {
    if u.len() != features.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), found: u.len() });
    }
    Ok(dot(u, features))
}

/// Elementwise mean of a bag's instance vectors.
pub fn mean_pool(bag: &Bag) -> Vec<f64> {
    let mut acc = vec![0.0; bag.dim()];
    for row in bag.instances().iter_rows() {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = bag.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Mean-pooled features of every bag, `n × d`.
pub fn mean_pool_dataset(dataset: &Dataset) -> Matrix {
    let rows: Vec<Vec<f64>> = dataset.bags().iter().map(mean_pool).collect();
    Matrix::from_rows(&rows).expect("bags share one dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use proptest::prelude::*;

    const ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Identity];

    fn bag(rows: &[Vec<f64>]) -> Bag {
        Bag::new("b", Label::Positive, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn identity_filters_on_single_instance() {
        let x = vec![0.5, -1.0, 2.0];
        let bank = FilterBank::new(Matrix::identity(3), Activation::Identity).unwrap();
        let enc = forward_bag(&bank, &bag(core::slice::from_ref(&x))).unwrap();
        assert_eq!(enc.g, x);
        assert_eq!(enc.psi, vec![0, 0, 0]);
    }

    #[test]
    fn max_over_two_instances() {
        let bank = FilterBank::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), Activation::Tanh).unwrap();
        let enc = forward_bag(&bank, &bag(&[vec![1.0, 5.0], vec![2.0, -3.0]])).unwrap();
        assert_eq!(enc.g, vec![libm::tanh(2.0)]);
        assert_eq!(enc.psi, vec![1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let bank = FilterBank::new(Matrix::from_rows(&[[1.0]]).unwrap(), Activation::Tanh).unwrap();
        let enc = forward_bag(&bank, &bag(&[vec![0.0], vec![3.0], vec![3.0]])).unwrap();
        assert_eq!(enc.psi, vec![1]);
        // Saturation: tanh(40) == tanh(50) == 1.0, so index 0 wins.
        let enc = forward_bag(&bank, &bag(&[vec![40.0], vec![50.0]])).unwrap();
        assert_eq!(enc.psi, vec![0]);
        assert_eq!(enc.g, vec![1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let bank = FilterBank::new(Matrix::identity(2), Activation::Tanh).unwrap();
        assert_eq!(
            forward_bag(&bank, &bag(&[vec![1.0, 2.0, 3.0]])).unwrap_err(),
            Error::DimensionMismatch { expected: 2, found: 3 }
        );
    }

    #[test]
    fn score_cases() {
        let enc = BagEncoding { g: vec![0.3, -0.7, 0.9], psi: vec![0; 3] };
        assert_eq!(score(&[0.0; 3], &enc).unwrap(), 0.0);
        assert_eq!(score(&[0.0, 1.0, 0.0], &enc).unwrap(), -0.7);
        let u = [0.2, 1.5, -0.4];
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        assert_eq!(score(&u2, &enc).unwrap(), 2.0 * score(&u, &enc).unwrap());
        assert!(score(&[1.0], &enc).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        let v = vec![1.5, -2.0, 0.25];
        assert_eq!(mean_pool(&bag(core::slice::from_ref(&v))), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(mean_pool(&bag(&[v.clone(), neg])), vec![0.0; 3]);
        assert_eq!(mean_pool(&bag(&[v.clone(), v.clone(), v.clone(), v.clone()])), v);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for phi in ACTIVATIONS {
            for &z in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
                let h = 1e-6;
                let fd = (phi.apply(z + h) - phi.apply(z - h)) / (2.0 * h);
                assert!((fd - phi.derivative(z)).abs() < 1e-8, "{phi:?} at {z}");
            }
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
        (1usize..5, 1usize..4, 1usize..7).prop_flat_map(|(d, m, bag_len)| {
            (
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), m),
                proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), bag_len),
                0usize..3,
            )
        })
    }

    proptest! {
        #[test]
        fn witness_invariants((filters, instances, act) in arb_case()) {
            let phi = ACTIVATIONS[act];
            let bank = FilterBank::new(Matrix::from_rows(&filters).unwrap(), phi).unwrap();
            let b = bag(&instances);
            let enc = forward_bag(&bank, &b).unwrap();
            for k in 0..bank.count() {
                let w = bank.filter(k);
                let pre: Vec<f64> = instances.iter().map(|x| dot(w, x)).collect();
                let act_vals: Vec<f64> = pre.iter().map(|&z| phi.apply(z)).collect();
                let psi = enc.psi[k];
                prop_assert!(psi < b.len());
                prop_assert_eq!(enc.g[k], phi.apply(dot(w, b.instance(psi))));
                for (kappa, &a) in act_vals.iter().enumerate() {
                    prop_assert!(act_vals[psi] >= a);
                    if a == act_vals[psi] { prop_assert!(kappa >= psi); }
                }
                // φ commutes with the max, and both argmaxes agree away from saturation.
                let (pre_arg, pre_max) = pre.iter().enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                prop_assert_eq!(enc.g[k], phi.apply(pre_max));
                prop_assert_eq!(psi, pre_arg);
            }
        }

        #[test]
        fn permutation_and_duplicate_invariance((filters, instances, act) in arb_case(), rot in 0usize..7, dup in 0usize..7) {
            let bank = FilterBank::new(Matrix::from_rows(&filters).unwrap(), ACTIVATIONS[act]).unwrap();
            let g = forward_bag(&bank, &bag(&instances)).unwrap().g;

            let mut rotated = instances.clone();
            rotated.rotate_left(rot % instances.len());
            prop_assert_eq!(&forward_bag(&bank, &bag(&rotated)).unwrap().g, &g);

            let mut with_dup = instances.clone();
            with_dup.push(instances[dup % instances.len()].clone());
            prop_assert_eq!(&forward_bag(&bank, &bag(&with_dup)).unwrap().g, &g);
        }
    }
}

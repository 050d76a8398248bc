//! Bags, datasets and stratified fold splitting.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Binary bag label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_sign(raw: i64) -> Result<Label> {
        match raw {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    #[inline]
    pub fn as_i64(self) -> i64 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// One multi-instance data point: `m ≥ 1` instance vectors of dimension `d`
/// (stored one instance per row) sharing a single label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    id: String,
    label: Label,
    instances: Matrix,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: Label, instances: Matrix) -> Result<Bag> {
        let id = id.into();
        if instances.rows() == 0 {
            return Err(Error::EmptyBag { id });
        }
        if instances.cols() == 0 {
            return Err(Error::InvalidArgument(alloc::format!("bag `{id}` has zero-dimensional instances")));
        }
        if instances.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { id });
        }
        Ok(Bag { id, label, instances })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.instances.cols()
    }

    /// Number of instances `m_i`.
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn instance(&self, k: usize) -> &[f64] {
        self.instances.row(k)
    }

    pub fn instances(&self) -> &Matrix {
        &self.instances
    }

    pub fn with_label(&self, label: Label) -> Bag {
        Bag { id: self.id.clone(), label, instances: self.instances.clone() }
    }
}

/// An ordered collection of at least two bags with a common feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    dim: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>) -> Result<Dataset> {
        if bags.len() < 2 {
            return Err(Error::TooFewBags(bags.len()));
        }
        let dim = bags[0].dim();
        if let Some(bad) = bags.iter().find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        Ok(Dataset { bags, dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.bags.iter().map(Bag::label).collect()
    }

    /// The `y` vector as `±1.0`.
    pub fn signs(&self) -> Vec<f64> {
        self.bags.iter().map(|b| b.label().sign()).collect()
    }

    /// The `ε` indicator: 1 on positive bags, 0 elsewhere.
    pub fn positive_indicator(&self) -> Vec<f64> {
        self.bags.iter().map(|b| if b.label().is_positive() { 1.0 } else { 0.0 }).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.bags.iter().filter(|b| b.label().is_positive()).count()
    }

    pub fn count_negative(&self) -> usize {
        self.len() - self.count_positive()
    }

    pub fn require_both_classes(&self) -> Result<()> {
        require_both_classes(&self.labels())
    }

    /// A new dataset holding the bags at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut bags = Vec::with_capacity(indices.len());
        for &i in indices {
            let bag = self
                .bags
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(alloc::format!("bag index {i} out of range")))?;
            bags.push(bag.clone());
        }
        Dataset::new(bags)
    }
}

pub(crate) fn require_both_classes(labels: &[Label]) -> Result<()> {
    if !labels.iter().any(|l| l.is_positive()) {
        return Err(Error::MissingClass("positive"));
    }
    if labels.iter().all(|l| l.is_positive()) {
        return Err(Error::MissingClass("negative"));
    }
    Ok(())
}

/// A bag carrying a multi-class label, used for one-vs-all evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBag {
    pub id: String,
    pub class: usize,
    pub instances: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassDataset {
    bags: Vec<ClassBag>,
    classes: Vec<String>,
    dim: usize,
}

impl MulticlassDataset {
    pub fn new(bags: Vec<ClassBag>, classes: Vec<String>) -> Result<MulticlassDataset> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "one-vs-all needs at least 2 classes, found {}",
                classes.len()
            )));
        }
        if bags.len() < 2 {
            return Err(Error::TooFewBags(bags.len()));
        }
        let dim = bags[0].instances.cols();
        for b in &bags {
            if b.class >= classes.len() {
                return Err(Error::InvalidArgument(alloc::format!("bag `{}` has unknown class {}", b.id, b.class)));
            }
            // Validates emptiness and finiteness through the binary constructor.
            Bag::new(b.id.clone(), Label::Negative, b.instances.clone())?;
            if b.instances.cols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: b.instances.cols() });
            }
        }
        Ok(MulticlassDataset { bags, classes, dim })
    }

    pub fn bags(&self) -> &[ClassBag] {
        &self.bags
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Binary dataset with `class` as the positive class and every other class negative.
    pub fn one_vs_rest(&self, class: usize) -> Result<Dataset> {
        let bags = self
            .bags
            .iter()
            .map(|b| {
                let label = if b.class == class { Label::Positive } else { Label::Negative };
                Bag::new(b.id.clone(), label, b.instances.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(bags)
    }
}

/// Train/test index sets for one cross-validation fold. Both lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified `k`-fold split of a dataset. See [`stratified_folds`].
pub fn split_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    stratified_folds(&dataset.labels(), k, seed)
}

/// Stratified `k`-fold split over a label vector.
///
/// Each class is shuffled independently under `seed` and dealt round-robin into
/// the folds, so every test fold receives at least one member of each class
/// provided each class has at least `k` members.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(alloc::format!("fold count must be at least 2, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    if pos.len() < k {
        return Err(Error::ClassTooSmall { class: "positive", count: pos.len(), k });
    }
    if neg.len() < k {
        return Err(Error::ClassTooSmall { class: "negative", count: neg.len(), k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assignment = alloc::vec![0usize; labels.len()];
    for (slot, &i) in pos.iter().enumerate() {
        assignment[i] = slot % k;
    }
    for (slot, &i) in neg.iter().enumerate() {
        assignment[i] = slot % k;
    }

    Ok((0..k)
        .map(|fold| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == fold);
            FoldSplit { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn bag(id: &str, label: Label, rows: &[&[f64]]) -> Bag {
        Bag::new(id, label, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn labels(n_pos: usize, n_neg: usize) -> Vec<Label> {
        let mut l = vec![Label::Positive; n_pos];
        l.extend(vec![Label::Negative; n_neg]);
        l
    }

    #[test]
    fn bag_invariants() {
        assert!(matches!(
            Bag::new("e", Label::Positive, Matrix::zeros(0, 3)),
            Err(Error::EmptyBag { .. })
        ));
        let nan = Matrix::from_rows(&[[1.0, f64::NAN]]).unwrap();
        assert!(matches!(Bag::new("n", Label::Positive, nan), Err(Error::NonFiniteFeature { .. })));
        let b = bag("a", Label::Positive, &[&[0.0, 1.0], &[2.0, 3.0]]);
        assert_eq!((b.dim(), b.len()), (2, 2));
        assert_eq!(b.instance(1), &[2.0, 3.0]);
    }

    #[test]
    fn dataset_rejects_mixed_dimension() {
        let a = bag("a", Label::Positive, &[&[0.0, 1.0]]);
        let b = bag("b", Label::Negative, &[&[0.0, 1.0, 2.0]]);
        assert_eq!(Dataset::new(vec![a, b]).unwrap_err(), Error::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn dataset_derived_vectors() {
        let ds = Dataset::new(vec![
            bag("a", Label::Positive, &[&[1.0]]),
            bag("b", Label::Negative, &[&[2.0]]),
            bag("c", Label::Positive, &[&[3.0]]),
        ])
        .unwrap();
        assert_eq!(ds.signs(), vec![1.0, -1.0, 1.0]);
        assert_eq!(ds.positive_indicator(), vec![1.0, 0.0, 1.0]);
        assert_eq!(Dataset::new(vec![bag("a", Label::Positive, &[&[1.0]])]).unwrap_err(), Error::TooFewBags(1));
        let only_pos = Dataset::new(vec![bag("a", Label::Positive, &[&[1.0]]), bag("b", Label::Positive, &[&[1.0]])])
            .unwrap();
        assert_eq!(only_pos.require_both_classes().unwrap_err(), Error::MissingClass("negative"));
    }

    #[test]
    fn ten_folds_over_twenty_bags() {
        let folds = stratified_folds(&labels(10, 10), 10, 3).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.test.iter().filter(|&&i| i < 10).count(), 1);
        }
    }

    #[test]
    fn two_folds_over_four_bags() {
        let folds = stratified_folds(&labels(2, 2), 2, 0).unwrap();
        assert_eq!(folds.len(), 2);
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.test.iter().filter(|&&i| i < 2).count(), 1);
        }
    }

    #[test]
    fn too_few_positives_for_stratification() {
        assert_eq!(
            stratified_folds(&labels(5, 20), 10, 0).unwrap_err(),
            Error::ClassTooSmall { class: "positive", count: 5, k: 10 }
        );
        assert!(stratified_folds(&labels(5, 5), 1, 0).is_err());
    }

    #[test]
    fn one_vs_rest_binarizes() {
        let rows = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mc = MulticlassDataset::new(
            vec![
                ClassBag { id: "a".into(), class: 0, instances: rows.clone() },
                ClassBag { id: "b".into(), class: 1, instances: rows.clone() },
                ClassBag { id: "c".into(), class: 2, instances: rows },
            ],
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let ds = mc.one_vs_rest(1).unwrap();
        assert_eq!(ds.labels(), vec![Label::Negative, Label::Positive, Label::Negative]);
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(n_pos in 2usize..30, n_neg in 2usize..30, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(n_pos >= k && n_neg >= k);
            let labels = labels(n_pos, n_neg);
            let n = labels.len();
            let folds = stratified_folds(&labels, k, seed).unwrap();
            prop_assert_eq!(&folds, &stratified_folds(&labels, k, seed).unwrap());

            let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

            let global = n_pos as f64 / n as f64;
            for f in &folds {
                prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
                prop_assert_eq!(f.train.len() + f.test.len(), n);
                let p = f.test.iter().filter(|&&i| labels[i].is_positive()).count();
                prop_assert!(p >= 1 && p < f.test.len());
                let frac = p as f64 / f.test.len() as f64;
                prop_assert!((frac - global).abs() <= 1.0 / f.test.len() as f64 + 1e-12);
            }
        }
    }
}

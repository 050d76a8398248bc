//! Per-filter objective `s(w_k)` with frozen witnesses, its gradient, and
//! monotone gradient descent with backtracking.
//!
//! With `c_i = δ_i y_i` and `a_i = φ(wᵀx_i)` over the frozen witness instances,
//! the double sum in `s` factorizes:
//!
//! ```text
//! s(w) = −½ (Σ_i c_i a_i)² + C2 ‖w‖²
//! ∇s(w) = −(Σ_i c_i a_i) Σ_i c_i φ′(wᵀx_i) x_i + 2 C2 w
//! ```

use alloc::vec::Vec;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm_sq};
use crate::representation::{Activation, DatasetEncoding, FilterBank};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PsiRefresh {
    /// Witnesses are re-selected once per outer iteration and frozen for the whole W-step.
    #[default]
    PerOuterIteration,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerConfig {
    /// Initial step size of every descent step.
    pub eta: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    pub steps_per_filter: usize,
    pub psi_refresh: PsiRefresh,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eta: 0.1,
            backtrack_ratio: 0.5,
            max_backtracks: 30,
            steps_per_filter: 5,
            psi_refresh: PsiRefresh::PerOuterIteration,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "backtrack ratio must lie in (0, 1), got {}",
                self.backtrack_ratio
            )));
        }
        if self.steps_per_filter == 0 {
            return Err(Error::InvalidArgument("steps_per_filter must be at least 1".into()));
        }
        Ok(())
    }
}

/// The W-step subproblem for one filter.
#[derive(Clone, Debug)]
pub struct FilterSubproblem<'a> {
    coeffs: Vec<f64>,
    witnesses: Vec<&'a [f64]>,
    c2: f64,
    activation: Activation,
}

impl<'a> FilterSubproblem<'a> {
    /// `witnesses[i]` is bag `i`'s instance selected for this filter at freeze time.
    pub fn new(
        delta: &[f64],
        labels: &[Label],
        witnesses: Vec<&'a [f64]>,
        c2: f64,
        activation: Activation,
    ) -> Result<FilterSubproblem<'a>> {
        let n = witnesses.len();
        if delta.len() != n || labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: delta.len().min(labels.len()) });
        }
        if let Some(first) = witnesses.first() {
            if let Some(bad) = witnesses.iter().find(|w| w.len() != first.len()) {
                return Err(Error::DimensionMismatch { expected: first.len(), found: bad.len() });
            }
        }
        if !(c2 > 0.0 && c2.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("C2 must be positive and finite, got {c2}")));
        }
        let coeffs = delta.iter().zip(labels).map(|(d, l)| d * l.sign()).collect();
        Ok(FilterSubproblem { coeffs, witnesses, c2, activation })
    }

    /// Witnesses of filter `k` taken from a frozen dataset encoding.
    pub fn from_encoding(
        k: usize,
        delta: &[f64],
        dataset: &'a Dataset,
        encoding: &DatasetEncoding,
        c2: f64,
        activation: Activation,
    ) -> Result<FilterSubproblem<'a>> {
        if encoding.g.rows() != dataset.len() || k >= encoding.g.cols() {
            return Err(Error::DimensionMismatch { expected: dataset.len(), found: encoding.g.rows() });
        }
        let witnesses = dataset
            .bags()
            .iter()
            .enumerate()
            .map(|(i, bag)| {
                let psi = encoding.witness(i, k);
                if psi >= bag.len() {
                    return Err(Error::InvalidArgument(alloc::format!("witness {psi} out of range for bag {i}")));
                }
                Ok(bag.instance(psi))
            })
            .collect::<Result<Vec<_>>>()?;
        FilterSubproblem::new(delta, &dataset.labels(), witnesses, c2, activation)
    }

    /// `c_i = δ_i y_i`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn witnesses(&self) -> &[&'a [f64]] {
        &self.witnesses
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        match self.witnesses.first() {
            Some(x) if x.len() != w.len() => Err(Error::DimensionMismatch { expected: x.len(), found: w.len() }),
            _ => Ok(()),
        }
    }

    fn weighted_response(&self, w: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.witnesses)
            .fold(0.0, |acc, (c, x)| acc + c * self.activation.apply(dot(w, x)))
    }
}

/// `s(w) = −½ (Σ_i c_i φ(wᵀx_i))² + C2‖w‖²`.
pub fn filter_objective(sub: &FilterSubproblem<'_>, w: &[f64]) -> f64 {
    let s = sub.weighted_response(w);
    -0.5 * s * s + sub.c2 * norm_sq(w)
}

/// `∇s(w)` with the witnesses held fixed.
pub fn filter_gradient(sub: &FilterSubproblem<'_>, w: &[f64]) -> Vec<f64> {
    let phi = sub.activation;
    let mut total = 0.0;
    let mut inner: Vec<f64> = alloc::vec![0.0; w.len()];
    for (c, x) in sub.coeffs.iter().zip(&sub.witnesses) {
        if *c == 0.0 {
            continue;
        }
        let z = dot(w, x);
        total += c * phi.apply(z);
        let scale = c * phi.derivative(z);
        for (acc, xi) in inner.iter_mut().zip(x.iter()) {
            *acc += scale * xi;
        }
    }
    inner.iter().zip(w).map(|(g, wi)| -total * g + 2.0 * sub.c2 * wi).collect()
}

/// One entry of the descent log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: usize,
    /// Step size of the accepted trial (the last one tried if rejected).
    pub eta: f64,
    pub backtracks: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterUpdate {
    pub w: Vec<f64>,
    pub trace: Vec<StepRecord>,
}

/// Runs `steps_per_filter` gradient steps, each backtracking from `eta` until the
/// objective does not increase. A step that finds no such point leaves `w` as is,
/// so `s(w') ≤ s(w)` always holds.
pub fn update_filter(sub: &FilterSubproblem<'_>, w: &[f64], config: &OptimizerConfig) -> Result<FilterUpdate> {
    config.validate()?;
    sub.check_dim(w)?;
    let mut w = w.to_vec();
    let mut current = filter_objective(sub, &w);
    let mut trace = Vec::with_capacity(config.steps_per_filter);

    for step in 0..config.steps_per_filter {
        if !current.is_finite() {
            return Err(Error::NonFinite(alloc::format!("filter objective at step {step}")));
        }
        let grad = filter_gradient(sub, &w);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("filter gradient at step {step}")));
        }

        let mut eta = config.eta;
        let mut record = StepRecord {
            step,
            eta,
            backtracks: 0,
            objective_before: current,
            objective_after: current,
            accepted: false,
        };
        if grad.iter().all(|&g| g == 0.0) {
            trace.push(record);
            continue;
        }
        for backtracks in 0..=config.max_backtracks {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - eta * gi).collect();
            let value = filter_objective(sub, &trial);
            record.eta = eta;
            record.backtracks = backtracks;
            if value.is_finite() && value <= current {
                w = trial;
                current = value;
                record.objective_after = value;
                record.accepted = true;
                break;
            }
            eta *= config.backtrack_ratio;
        }
        trace.push(record);
    }
    Ok(FilterUpdate { w, trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBankUpdate {
    pub filters: FilterBank,
    /// Descent log of each filter, indexed by filter.
    pub traces: Vec<Vec<StepRecord>>,
    /// `Σ_k s(w_k)` before the update, summed in filter order.
    pub objective_before: f64,
    /// `Σ_k s(w_k')` after the update, summed in filter order.
    pub objective_after: f64,
}

/// Updates every filter against witnesses frozen in `encoding`. The filters do
/// not interact, so each is optimized independently.
pub fn update_filterbank(
    filters: &FilterBank,
    delta: &[f64],
    encoding: &DatasetEncoding,
    dataset: &Dataset,
    c2: f64,
    config: &OptimizerConfig,
) -> Result<FilterBankUpdate> {
    let order: Vec<usize> = (0..filters.count()).collect();
    update_filterbank_in_order(filters, delta, encoding, dataset, c2, config, &order)
}

/// [`update_filterbank`] visiting the filters in the given order.
pub fn update_filterbank_in_order(
    filters: &FilterBank,
    delta: &[f64],
    encoding: &DatasetEncoding,
    dataset: &Dataset,
    c2: f64,
    config: &OptimizerConfig,
    order: &[usize],
) -> Result<FilterBankUpdate> {
    config.validate()?;
    let m = filters.count();
    if encoding.g.cols() != m {
        return Err(Error::DimensionMismatch { expected: m, found: encoding.g.cols() });
    }
    let mut seen = alloc::vec![false; m];
    for &k in order {
        if k >= m || core::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidArgument("order must be a permutation of the filter indices".into()));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("order must be a permutation of the filter indices".into()));
    }

    let run = |k: usize| -> Result<(usize, f64, f64, FilterUpdate)> {
        let sub = FilterSubproblem::from_encoding(k, delta, dataset, encoding, c2, filters.activation())?;
        let before = filter_objective(&sub, filters.filter(k));
        let update = update_filter(&sub, filters.filter(k), config)?;
        let after = filter_objective(&sub, &update.w);
        Ok((k, before, after, update))
    };

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        order.par_iter().map(|&k| run(k)).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = order.iter().map(|&k| run(k)).collect::<Result<Vec<_>>>()?;

    let mut per_filter: Vec<Option<(f64, f64, FilterUpdate)>> = (0..m).map(|_| None).collect();
    for (k, before, after, update) in results {
        per_filter[k] = Some((before, after, update));
    }
    let mut next = filters.clone();
    let mut traces = Vec::with_capacity(m);
    let (mut objective_before, mut objective_after) = (0.0, 0.0);
    for (k, slot) in per_filter.into_iter().enumerate() {
        let (before, after, update) = slot.expect("every filter updated");
        objective_before += before;
        objective_after += after;
        next.filter_mut(k).copy_from_slice(&update.w);
        traces.push(update.trace);
    }
    Ok(FilterBankUpdate { filters: next, traces, objective_before, objective_after })
}

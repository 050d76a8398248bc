//! The alternating training loop.
//!
//! Each outer iteration encodes the dataset (recording the witnesses ψ), solves
//! the dual for `δ` warm-started from the previous iteration, recovers `(u, θ)`,
//! and then takes gradient steps on every filter with `δ` and ψ frozen. The
//! final classifier is re-derived from the final filters.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Bag, Dataset, Label};
use crate::dual::{build_gram, recover_theta, recover_u, solve_dual, DualProblem, DualSolution};
use crate::error::{Error, Result};
use crate::filter::{update_filterbank, OptimizerConfig};
use crate::matrix::{dot, norm_sq, Matrix};
use crate::metrics::{pos_at_top, ScoredSet};
use crate::representation::{encode_dataset, forward_bag, mean_pool, mean_pool_dataset, Activation, FilterBank};

/// Relative slack allowed when comparing the dual objective against its warm start.
const ASCENT_SLACK: f64 = 1e-12;
const PLATEAU_RTOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RepresentationMode {
    /// Learned max-pooled convolutional features.
    #[default]
    Conv,
    /// Linear classifier on mean-pooled instances; a single dual solve.
    MeanPoolBaseline,
}

impl core::str::FromStr for RepresentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(RepresentationMode::Conv),
            "baseline" | "mean-pool-baseline" => Ok(RepresentationMode::MeanPoolBaseline),
            other => Err(Error::InvalidArgument(alloc::format!("unknown representation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Weight of the hinge losses. The filter gradient grows like `(C1·n)²`, so
    /// larger datasets want smaller values; the default suits `n ≈ 100`.
    pub c1: f64,
    /// Weight of `‖W‖²`.
    pub c2: f64,
    /// Number of filters `m`.
    pub filters: usize,
    pub activation: Activation,
    pub outer_iters: usize,
    pub dual_tol: f64,
    pub optimizer: OptimizerConfig,
    /// Filters start as i.i.d. `N(0, 1) · init_scale / √d`.
    pub init_scale: f64,
    pub seed: u64,
    pub mode: RepresentationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c1: 0.01,
            c2: 0.1,
            filters: 8,
            activation: Activation::Tanh,
            outer_iters: 20,
            dual_tol: crate::dual::DEFAULT_TOL,
            optimizer: OptimizerConfig::default(),
            init_scale: 1.0,
            seed: 0,
            mode: RepresentationMode::Conv,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(alloc::format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("C1", self.c1)?;
        positive("C2", self.c2)?;
        positive("dual tolerance", self.dual_tol)?;
        positive("init scale", self.init_scale)?;
        if self.filters == 0 {
            return Err(Error::InvalidArgument("filter count must be at least 1".into()));
        }
        if self.outer_iters == 0 {
            return Err(Error::InvalidArgument("outer iteration count must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub iteration: usize,
    /// `D(δ)` at the warm start handed to the solver.
    pub warm_start_objective: f64,
    pub dual_objective: f64,
    pub dual_certified: bool,
    pub dual_updates: usize,
    pub kkt_max_residual: f64,
    /// Full primal objective (including `C2‖W‖²`) at the recovered `(u, θ)`.
    pub primal_objective: f64,
    pub train_pos_at_top: f64,
    /// `Σ_k s(w_k)` before and after the W-step; absent in baseline mode.
    pub filter_objective_before: Option<f64>,
    pub filter_objective_after: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub final_dual_objective: f64,
    pub final_primal_objective: f64,
    pub final_train_pos_at_top: f64,
    pub final_certified: bool,
    /// Iterations whose certified dual objective fell below its warm start.
    pub dual_ascent_violations: usize,
    /// Iterations whose W-step increased `Σ_k s(w_k)`.
    pub filter_descent_violations: usize,
    pub early_stopped: bool,
}

/// Trained classifier. `filters` is `None` in baseline mode, where `u` has the
/// input dimension instead of the filter count.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub filters: Option<FilterBank>,
    pub u: Vec<f64>,
    pub theta: f64,
    pub config: TrainConfig,
    pub diagnostics: Diagnostics,
}

impl Model {
    /// Checks that the parts fit together, for models assembled from storage.
    pub fn from_parts(
        filters: Option<FilterBank>,
        u: Vec<f64>,
        theta: f64,
        config: TrainConfig,
        diagnostics: Diagnostics,
    ) -> Result<Model> {
        match (&filters, config.mode) {
            (Some(bank), RepresentationMode::Conv) => {
                if bank.count() != u.len() {
                    return Err(Error::DimensionMismatch { expected: bank.count(), found: u.len() });
                }
            }
            (None, RepresentationMode::MeanPoolBaseline) => {}
            _ => return Err(Error::InvalidArgument("filters must be present exactly in conv mode".into())),
        }
        if u.is_empty() || u.iter().any(|v| !v.is_finite()) || !theta.is_finite() {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        Ok(Model { filters, u, theta, config, diagnostics })
    }

    pub fn mode(&self) -> RepresentationMode {
        self.config.mode
    }

    /// Dimension of the bag instances this model accepts.
    pub fn input_dim(&self) -> usize {
        self.filters.as_ref().map_or(self.u.len(), FilterBank::dim)
    }

    /// Representation the classifier is applied to: `g(X)` or the mean-pooled bag.
    pub fn features(&self, bag: &Bag) -> Result<Vec<f64>> {
        if bag.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: bag.dim() });
        }
        match &self.filters {
            Some(bank) => forward_bag(bank, bag).map(|e| e.g),
            None => Ok(mean_pool(bag)),
        }
    }

    fn feature_matrix(&self, dataset: &Dataset) -> Result<Matrix> {
        if dataset.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: dataset.dim() });
        }
        match &self.filters {
            Some(bank) => encode_dataset(bank, dataset).map(|e| e.g),
            None => Ok(mean_pool_dataset(dataset)),
        }
    }

    pub fn score(&self, bag: &Bag) -> Result<f64> {
        Ok(dot(&self.u, &self.features(bag)?))
    }

    /// Scores of every bag in `dataset`.
    pub fn scores(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.feature_matrix(dataset)?.mul_vec(&self.u)
    }
}

/// `max(0, θ − f_i + 1)` for a positive bag with score `f_i`.
#[inline]
pub fn hinge_loss(score: f64, theta: f64) -> f64 {
    (theta - score + 1.0).max(0.0)
}

/// `½‖u‖² + C1 Σ_{y_i=+1} ξ_i` with `θ` taken as the top negative score.
fn loss_terms(u: &[f64], scores: &[f64], labels: &[Label], c1: f64) -> Result<f64> {
    let theta = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_positive())
        .map(|(s, _)| *s)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .ok_or(Error::MissingClass("negative"))?;
    let slack: f64 = scores.iter().zip(labels).filter(|(_, l)| l.is_positive()).map(|(&s, _)| hinge_loss(s, theta)).sum();
    Ok(0.5 * norm_sq(u) + c1 * slack)
}

/// `½‖u‖² + C1 Σ ξ_i + C2‖W‖²` with `θ` and `ξ` computed from the current encodings.
/// The `C2` term is zero in baseline mode.
pub fn primal_objective(model: &Model, dataset: &Dataset, c1: f64, c2: f64) -> Result<f64> {
    let scores = model.scores(dataset)?;
    let reg = model.filters.as_ref().map_or(0.0, |f| c2 * f.norm_sq());
    Ok(loss_terms(&model.u, &scores, &dataset.labels(), c1)? + reg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

/// Positive iff the score is strictly above `θ`, the top training negative.
pub fn predict(model: &Model, bag: &Bag) -> Result<Prediction> {
    let score = model.score(bag)?;
    let label = if score > model.theta { Label::Positive } else { Label::Negative };
    Ok(Prediction { score, label })
}

struct Classifier {
    solution: DualSolution,
    warm_start_objective: f64,
    u: Vec<f64>,
    theta: f64,
    scores: Vec<f64>,
}

fn fit_classifier(features: &Matrix, labels: &[Label], config: &TrainConfig, warm: Option<&[f64]>) -> Result<Classifier> {
    let problem = DualProblem::new(build_gram(features), labels.to_vec(), config.c1)?.with_tol(config.dual_tol)?;
    let warm_start_objective = warm.map_or(0.0, |d| problem.objective(d));
    let solution = solve_dual(&problem, warm)?;
    let u = recover_u(&solution.delta, labels, features)?;
    let theta = recover_theta(&u, features, labels)?;
    let scores = features.mul_vec(&u)?;
    if !solution.objective.is_finite() || !theta.is_finite() || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier recovered from the dual".into()));
    }
    Ok(Classifier { solution, warm_start_objective, u, theta, scores })
}

fn train_pos_at_top(scores: &[f64], labels: &[Label]) -> Result<f64> {
    pos_at_top(&ScoredSet { scores: scores.to_vec(), labels: labels.to_vec() })
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    dataset.require_both_classes()?;
    let labels = dataset.labels();
    match config.mode {
        RepresentationMode::MeanPoolBaseline => train_baseline(dataset, &labels, config),
        RepresentationMode::Conv => train_conv(dataset, &labels, config),
    }
}

fn train_baseline(dataset: &Dataset, labels: &[Label], config: &TrainConfig) -> Result<Model> {
    let features = mean_pool_dataset(dataset);
    let fit = fit_classifier(&features, labels, config, None)?;
    let primal = loss_terms(&fit.u, &fit.scores, labels, config.c1)?;
    let train_pat = train_pos_at_top(&fit.scores, labels)?;
    let record = IterationRecord {
        iteration: 0,
        warm_start_objective: fit.warm_start_objective,
        dual_objective: fit.solution.objective,
        dual_certified: fit.solution.certified,
        dual_updates: fit.solution.iterations,
        kkt_max_residual: fit.solution.kkt.max_residual(),
        primal_objective: primal,
        train_pos_at_top: train_pat,
        filter_objective_before: None,
        filter_objective_after: None,
    };
    let diagnostics = Diagnostics {
        final_dual_objective: fit.solution.objective,
        final_primal_objective: primal,
        final_train_pos_at_top: train_pat,
        final_certified: fit.solution.certified,
        dual_ascent_violations: usize::from(fit.solution.objective < -ASCENT_SLACK),
        iterations: alloc::vec![record],
        ..Diagnostics::default()
    };
    Ok(Model { filters: None, u: fit.u, theta: fit.theta, config: config.clone(), diagnostics })
}

fn train_conv(dataset: &Dataset, labels: &[Label], config: &TrainConfig) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut filters = FilterBank::random(dataset.dim(), config.filters, config.activation, config.init_scale, &mut rng)?;
    let mut delta: Option<Vec<f64>> = None;
    let mut diagnostics = Diagnostics::default();

    let with_context = |iteration: usize, e: Error| match e {
        Error::NonFinite(what) => Error::NonFinite(alloc::format!("{what} (outer iteration {iteration})")),
        other => other,
    };

    for iteration in 0..config.outer_iters {
        let encoding = encode_dataset(&filters, dataset)?;
        let fit = fit_classifier(&encoding.g, labels, config, delta.as_deref()).map_err(|e| with_context(iteration, e))?;
        if fit.solution.objective < fit.warm_start_objective - ASCENT_SLACK * (1.0 + fit.warm_start_objective.abs()) {
            diagnostics.dual_ascent_violations += 1;
        }
        let primal = loss_terms(&fit.u, &fit.scores, labels, config.c1)? + config.c2 * filters.norm_sq();
        let train_pat = train_pos_at_top(&fit.scores, labels)?;

        let step = update_filterbank(&filters, &fit.solution.delta, &encoding, dataset, config.c2, &config.optimizer)
            .map_err(|e| with_context(iteration, e))?;
        if step.objective_after > step.objective_before {
            diagnostics.filter_descent_violations += 1;
        }
        filters = step.filters;

        diagnostics.iterations.push(IterationRecord {
            iteration,
            warm_start_objective: fit.warm_start_objective,
            dual_objective: fit.solution.objective,
            dual_certified: fit.solution.certified,
            dual_updates: fit.solution.iterations,
            kkt_max_residual: fit.solution.kkt.max_residual(),
            primal_objective: primal,
            train_pos_at_top: train_pat,
            filter_objective_before: Some(step.objective_before),
            filter_objective_after: Some(step.objective_after),
        });
        delta = Some(fit.solution.delta);

        let history = &diagnostics.iterations;
        if let [.., a, b, c] = history.as_slice() {
            if c.train_pos_at_top == 1.0
                && relative_change(a.primal_objective, b.primal_objective) < PLATEAU_RTOL
                && relative_change(b.primal_objective, c.primal_objective) < PLATEAU_RTOL
            {
                diagnostics.early_stopped = true;
                break;
            }
        }
    }

    // Re-derive the classifier from the shipped filters.
    let iteration = diagnostics.iterations.len();
    let encoding = encode_dataset(&filters, dataset)?;
    let fit = fit_classifier(&encoding.g, labels, config, delta.as_deref()).map_err(|e| with_context(iteration, e))?;
    if fit.solution.objective < fit.warm_start_objective - ASCENT_SLACK * (1.0 + fit.warm_start_objective.abs()) {
        diagnostics.dual_ascent_violations += 1;
    }
    diagnostics.final_dual_objective = fit.solution.objective;
    diagnostics.final_primal_objective =
        loss_terms(&fit.u, &fit.scores, labels, config.c1)? + config.c2 * filters.norm_sq();
    diagnostics.final_train_pos_at_top = train_pos_at_top(&fit.scores, labels)?;
    diagnostics.final_certified = fit.solution.certified;

    Ok(Model { filters: Some(filters), u: fit.u, theta: fit.theta, config: config.clone(), diagnostics })
}

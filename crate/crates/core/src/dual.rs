//! Dual quadratic program over the margin multipliers `δ` for a fixed representation.
//!
//! ```text
//! maximize   D(δ) = εᵀδ − ½ δᵀ diag(y) K diag(y) δ
//! subject to δ ≥ 0,  δ_i ≤ C1 for y_i = +1,  yᵀδ = 0
//! ```
//!
//! Solved by pairwise coordinate ascent with second-order working-set selection.
//! Each update moves one pair along the direction that keeps `yᵀδ = 0` and takes
//! the exact clipped line maximum. Optimality is certified by [`kkt_residual`].

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{require_both_classes, Label};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Negative multipliers have no upper bound; iterates beyond `NEGATIVE_CAP_FACTOR · C1`
/// are treated as divergence.
pub const NEGATIVE_CAP_FACTOR: f64 = 1e6;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Update budget is `max(100·n², MIN_UPDATE_BUDGET)`. Rank-deficient Gram
/// matrices with large `C1` can need thousands of pair updates even for `n < 10`.
pub const MIN_UPDATE_BUDGET: usize = 100_000;

const CURVATURE_FLOOR: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// `K_{ii'} = g_iᵀ g_{i'}` over the rows of `g`. The upper triangle is computed
/// and mirrored, so the result is exactly symmetric.
pub fn build_gram(g: &Matrix) -> Matrix {
    let n = g.rows();
    let upper = |i: usize| -> Vec<f64> { (i..n).map(|j| dot(g.row(i), g.row(j))).collect() };

    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(upper).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(upper).collect();

    let mut k = Matrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

#[derive(Clone, Debug)]
pub struct DualProblem {
    gram: Matrix,
    labels: Vec<Label>,
    c1: f64,
    tol: f64,
    max_updates: usize,
}

impl DualProblem {
    pub fn new(gram: Matrix, labels: Vec<Label>, c1: f64) -> Result<DualProblem> {
        let n = labels.len();
        if gram.rows() != n || gram.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: gram.rows() });
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("C1 must be positive and finite, got {c1}")));
        }
        require_both_classes(&labels)?;
        if gram.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (gram.get(i, j), gram.get(j, i));
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(alloc::format!("Gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DualProblem { gram, labels, c1, tol: DEFAULT_TOL, max_updates: (100 * n * n).max(MIN_UPDATE_BUDGET) })
    }

    pub fn with_tol(mut self, tol: f64) -> Result<DualProblem> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("tolerance must be positive, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_max_updates(mut self, max_updates: usize) -> DualProblem {
        self.max_updates = max_updates;
        self
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `C1` on positives, unbounded on negatives.
    pub fn upper_bound(&self, i: usize) -> f64 {
        if self.labels[i].is_positive() {
            self.c1
        } else {
            f64::INFINITY
        }
    }

    /// Classifier scores `f_t = Σ_j δ_j y_j K_tj` implied by `delta`.
    pub fn scores(&self, delta: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = delta.iter().zip(&self.labels).map(|(d, l)| d * l.sign()).collect();
        self.gram.iter_rows().map(|row| dot(row, &z)).collect()
    }

    /// `D(δ)`.
    pub fn objective(&self, delta: &[f64]) -> f64 {
        let f = self.scores(delta);
        let mut linear = 0.0;
        let mut quad = 0.0;
        for i in 0..delta.len() {
            let y = self.labels[i].sign();
            if self.labels[i].is_positive() {
                linear += delta[i];
            }
            quad += delta[i] * y * f[i];
        }
        linear - 0.5 * quad
    }

    /// `v_t = y_t ∂D/∂δ_t = ε_t − f_t`.
    fn signed_gradient(&self, delta: &[f64]) -> Vec<f64> {
        let f = self.scores(delta);
        f.iter()
            .zip(&self.labels)
            .map(|(f, l)| if l.is_positive() { 1.0 - f } else { -f })
            .collect()
    }
}

/// Residuals of the optimality conditions at a candidate `δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KktReport {
    /// `max_i max(0, −δ_i)`.
    pub nonnegativity: f64,
    /// `max_{i: y_i=+1} max(0, δ_i − C1)`.
    pub upper_bound: f64,
    /// `|yᵀδ|`.
    pub equality: f64,
    /// Largest projected-gradient component after removing the best multiple of `y`.
    pub stationarity: f64,
    /// Largest product of a bound's slack with the multiplier that bound would carry.
    pub complementarity: f64,
    /// Multiplier `b` of the equality constraint; at the optimum the threshold is `θ = −b`.
    pub offset: f64,
}

impl KktReport {
    pub fn feasibility(&self) -> f64 {
        self.nonnegativity.max(self.upper_bound).max(self.equality)
    }

    pub fn max_residual(&self) -> f64 {
        self.feasibility().max(self.stationarity).max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

fn report_from_gradient(problem: &DualProblem, delta: &[f64], v: &[f64]) -> KktReport {
    let c1 = problem.c1;
    let mut nonnegativity = 0.0f64;
    let mut upper_bound = 0.0f64;
    let mut equality = 0.0;
    // Coordinates that can move in the `+y` direction need v ≤ b; those that can
    // move in the `−y` direction need v ≥ b.
    let mut up_max = f64::NEG_INFINITY;
    let mut low_min = f64::INFINITY;
    for (i, (&d, &l)) in delta.iter().zip(&problem.labels).enumerate() {
        nonnegativity = nonnegativity.max(-d);
        equality += l.sign() * d;
        let (can_up, can_low) = if l.is_positive() {
            upper_bound = upper_bound.max(d - c1);
            (d < c1, d > 0.0)
        } else {
            (d > 0.0, true)
        };
        if can_up {
            up_max = up_max.max(v[i]);
        }
        if can_low {
            low_min = low_min.min(v[i]);
        }
    }

    let (stationarity, offset) = match (up_max.is_finite(), low_min.is_finite()) {
        (true, true) => (0.5 * (up_max - low_min).max(0.0), 0.5 * (up_max + low_min)),
        (true, false) => (0.0, up_max),
        (false, true) => (0.0, low_min),
        (false, false) => (0.0, 0.0),
    };

    let mut complementarity = 0.0f64;
    for (i, (&d, &l)) in delta.iter().zip(&problem.labels).enumerate() {
        let h = l.sign() * (v[i] - offset);
        let mut gap = d.max(0.0) * (-h).max(0.0);
        if l.is_positive() {
            gap += (c1 - d).max(0.0) * h.max(0.0);
        }
        complementarity = complementarity.max(gap);
    }

    KktReport {
        nonnegativity,
        upper_bound: upper_bound.max(0.0),
        equality: equality.abs(),
        stationarity,
        complementarity,
        offset,
    }
}

/// Evaluates every optimality residual of `delta` from scratch.
pub fn kkt_residual(problem: &DualProblem, delta: &[f64]) -> KktReport {
    let v = problem.signed_gradient(delta);
    report_from_gradient(problem, delta, &v)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DualSolution {
    pub delta: Vec<f64>,
    pub objective: f64,
    pub kkt: KktReport,
    /// Number of pair updates performed.
    pub iterations: usize,
    /// All residuals within tolerance and no divergence detected.
    pub certified: bool,
    /// Some negative multiplier reached `NEGATIVE_CAP_FACTOR · C1`.
    pub ill_conditioned: bool,
}

fn validate_warm_start(problem: &DualProblem, warm: &[f64]) -> Result<Vec<f64>> {
    const SLACK: f64 = 1e-9;
    if warm.len() != problem.len() {
        return Err(Error::InvalidWarmStart(alloc::format!("length {} != {}", warm.len(), problem.len())));
    }
    let mut balance = 0.0;
    let mut delta = Vec::with_capacity(warm.len());
    for (i, &d) in warm.iter().enumerate() {
        if !d.is_finite() || d < -SLACK || d > problem.upper_bound(i) + SLACK {
            return Err(Error::InvalidWarmStart(alloc::format!("coordinate {i} = {d} violates its bounds")));
        }
        balance += problem.labels[i].sign() * d;
        delta.push(d.clamp(0.0, problem.upper_bound(i)));
    }
    if balance.abs() > problem.tol.max(SLACK) {
        return Err(Error::InvalidWarmStart(alloc::format!("yᵀδ = {balance}")));
    }
    Ok(delta)
}

/// Maximizes the dual objective, starting from `warm_start` if given (it must be
/// feasible) or from `δ = 0`.
///
/// Hitting the update cap is not an error: the last (and best) iterate is
/// returned with `certified = false`.
pub fn solve_dual(problem: &DualProblem, warm_start: Option<&[f64]>) -> Result<DualSolution> {
    let n = problem.len();
    let k = &problem.gram;
    let c1 = problem.c1;
    let cap = NEGATIVE_CAP_FACTOR * c1;
    let pos: Vec<bool> = problem.labels.iter().map(|l| l.is_positive()).collect();
    let ub: Vec<f64> = pos.iter().map(|&p| if p { c1 } else { cap }).collect();

    let mut delta = match warm_start {
        Some(w) => validate_warm_start(problem, w)?,
        None => vec![0.0; n],
    };
    let mut v = problem.signed_gradient(&delta);
    let mut updates = 0usize;
    let mut ill_conditioned = false;

    loop {
        let report = report_from_gradient(problem, &delta, &v);
        if report.stationarity <= problem.tol && report.complementarity <= problem.tol {
            // The running gradient accumulates round-off; confirm from scratch.
            v = problem.signed_gradient(&delta);
            let fresh = report_from_gradient(problem, &delta, &v);
            if fresh.stationarity <= problem.tol && fresh.complementarity <= problem.tol {
                break;
            }
        }
        if updates >= problem.max_updates {
            break;
        }

        // First index: most violating coordinate that can move along +y.
        let mut i = usize::MAX;
        let mut v_max = f64::NEG_INFINITY;
        for t in 0..n {
            let can_up = if pos[t] { delta[t] < ub[t] } else { delta[t] > 0.0 };
            if can_up && v[t] > v_max {
                v_max = v[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        // Second index: largest second-order gain among coordinates that can move along −y.
        let mut j = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..n {
            let can_low = if pos[t] { delta[t] > 0.0 } else { delta[t] < ub[t] };
            let diff = v_max - v[t];
            if can_low && diff > 0.0 {
                let curvature = (k.get(i, i) + k.get(t, t) - 2.0 * k.get(i, t)).max(CURVATURE_FLOOR);
                let gain = diff * diff / curvature;
                if gain > best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break;
        }

        // Direction: δ_i += y_i·t, δ_j −= y_j·t. Along it D has slope v_i − v_j
        // and curvature ‖g_i − g_j‖².
        let curvature = k.get(i, i) + k.get(j, j) - 2.0 * k.get(i, j);
        let unconstrained = if curvature > CURVATURE_FLOOR { (v[i] - v[j]) / curvature } else { f64::INFINITY };
        let slack_i = if pos[i] { ub[i] - delta[i] } else { delta[i] };
        let slack_j = if pos[j] { delta[j] } else { ub[j] - delta[j] };
        let step = unconstrained.min(slack_i).min(slack_j);

        let (yi, yj) = (problem.labels[i].sign(), problem.labels[j].sign());
        delta[i] = if step == slack_i {
            if pos[i] {
                ub[i]
            } else {
                0.0
            }
        } else {
            (delta[i] + yi * step).clamp(0.0, ub[i])
        };
        delta[j] = if step == slack_j {
            if pos[j] {
                0.0
            } else {
                ill_conditioned = true;
                ub[j]
            }
        } else {
            (delta[j] - yj * step).clamp(0.0, ub[j])
        };
        for (t, vt) in v.iter_mut().enumerate() {
            *vt -= step * (k.get(t, i) - k.get(t, j));
        }
        updates += 1;
    }

    let kkt = kkt_residual(problem, &delta);
    Ok(DualSolution {
        objective: problem.objective(&delta),
        certified: kkt.within(problem.tol) && !ill_conditioned,
        kkt,
        delta,
        iterations: updates,
        ill_conditioned,
    })
}

/// `u = Σ_i δ_i y_i g_i`, from stationarity of the Lagrangian in `u`.
pub fn recover_u(delta: &[f64], labels: &[Label], g: &Matrix) -> Result<Vec<f64>> {
    if delta.len() != g.rows() || labels.len() != g.rows() {
        return Err(Error::DimensionMismatch { expected: g.rows(), found: delta.len().min(labels.len()) });
    }
    let mut u = vec![0.0; g.cols()];
    for (i, row) in g.iter_rows().enumerate() {
        let c = delta[i] * labels[i].sign();
        if c != 0.0 {
            for (uk, gk) in u.iter_mut().zip(row) {
                *uk += c * gk;
            }
        }
    }
    Ok(u)
}

/// `θ = max_{j: y_j = −1} uᵀg_j`.
pub fn recover_theta(u: &[f64], g: &Matrix, labels: &[Label]) -> Result<f64> {
    if u.len() != g.cols() {
        return Err(Error::DimensionMismatch { expected: g.cols(), found: u.len() });
    }
    if labels.len() != g.rows() {
        return Err(Error::DimensionMismatch { expected: g.rows(), found: labels.len() });
    }
    g.iter_rows()
        .zip(labels)
        .filter(|(_, l)| !l.is_positive())
        .map(|(row, _)| dot(u, row))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .ok_or(Error::MissingClass("negative"))
}

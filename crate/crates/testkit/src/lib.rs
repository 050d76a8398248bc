//! Reference oracles for the convmpt test suites.
//!
//! Everything here works on plain slices and is written from the mathematical
//! definitions, without calling into `convmpt-core`, so that it stays an
//! independent check on the optimized code paths.

/// `D(δ) = Σ_{y_i=+1} δ_i − ½ Σ_{i,j} δ_i δ_j y_i y_j K_ij`, evaluated as a double sum.
pub fn dual_objective(gram: &[Vec<f64>], signs: &[f64], delta: &[f64]) -> f64 {
    let n = signs.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += delta[i] * delta[j] * signs[i] * signs[j] * gram[i][j];
        }
    }
    let linear: f64 = (0..n).filter(|&i| signs[i] > 0.0).map(|i| delta[i]).sum();
    linear - 0.5 * quad
}

fn dual_gradient(gram: &[Vec<f64>], signs: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = signs.len();
    (0..n)
        .map(|i| {
            let eps = if signs[i] > 0.0 { 1.0 } else { 0.0 };
            let mut q = 0.0;
            for j in 0..n {
                q += signs[i] * signs[j] * gram[i][j] * delta[j];
            }
            eps - q
        })
        .collect()
}

/// Euclidean projection onto `{δ ≥ 0, δ_i ≤ c1 where y_i = +1, yᵀδ = 0}`.
///
/// The projection is `δ_i(λ) = clip(z_i − λ y_i)` for the unique `λ` that
/// balances `yᵀδ(λ) = 0`; `yᵀδ(λ)` is nonincreasing in `λ`, so bisection finds it.
pub fn project_feasible(z: &[f64], signs: &[f64], c1: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        z.iter()
            .zip(signs)
            .map(|(&zi, &y)| {
                let v = (zi - lambda * y).max(0.0);
                if y > 0.0 {
                    v.min(c1)
                } else {
                    v
                }
            })
            .collect()
    };
    let balance = |lambda: f64| -> f64 { at(lambda).iter().zip(signs).map(|(d, y)| d * y).sum() };

    let mut lo = -1.0;
    while balance(lo) < 0.0 {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while balance(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let mut delta = at(lambda);
    // Exact balance: spread the remaining imbalance over free coordinates.
    let residual: f64 = delta.iter().zip(signs).map(|(d, y)| d * y).sum();
    if residual != 0.0 {
        if let Some(i) = (0..delta.len()).find(|&i| signs[i] < 0.0 && delta[i] > residual.abs()) {
            delta[i] += residual;
        }
    }
    delta
}

/// Maximizes the dual by accelerated projected gradient with adaptive restart,
/// stopping once the gradient-mapping norm is below `tol`.
pub fn dual_projected_gradient(gram: &[Vec<f64>], signs: &[f64], c1: f64, tol: f64) -> Vec<f64> {
    let n = signs.len();
    // Largest eigenvalue of diag(y) K diag(y) by power iteration, padded.
    let mut x = vec![1.0; n];
    let mut lipschitz = 0.0;
    for _ in 0..500 {
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                y[i] += signs[i] * signs[j] * gram[i][j] * x[j];
            }
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lipschitz = norm / x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = y.iter().map(|v| v / norm).collect();
    }
    let step = 1.0 / (1.05 * lipschitz + 1e-12);

    let gradient_step = |point: &[f64]| -> Vec<f64> {
        let g = dual_gradient(gram, signs, point);
        let trial: Vec<f64> = point.iter().zip(&g).map(|(d, g)| d + step * g).collect();
        project_feasible(&trial, signs, c1)
    };

    let mut delta = vec![0.0; n];
    let mut value = dual_objective(gram, signs, &delta);
    let mut momentum_point = delta.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let plain = gradient_step(&delta);
        let mapping_norm = plain.iter().zip(&delta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / step;
        if mapping_norm <= tol {
            break;
        }

        let accelerated = gradient_step(&momentum_point);
        let accelerated_value = dual_objective(gram, signs, &accelerated);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let next = if accelerated_value >= value {
            let next = accelerated;
            momentum_point = next.iter().zip(&delta).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
            t = t_next;
            next
        } else {
            // Restart: fall back to the monotone plain step.
            momentum_point = plain.clone();
            t = 1.0;
            plain
        };
        value = dual_objective(gram, signs, &next);
        delta = next;
    }
    delta
}

/// Draws a feasible dual point: positives uniform in `[0, c1]`, their total mass
/// spread over the negatives with random weights.
pub fn random_feasible_delta(signs: &[f64], c1: f64, uniform: &mut dyn FnMut() -> f64) -> Vec<f64> {
    let mut delta = vec![0.0; signs.len()];
    let mut mass = 0.0;
    for (d, &y) in delta.iter_mut().zip(signs) {
        if y > 0.0 {
            *d = c1 * uniform();
            mass += *d;
        }
    }
    let weights: Vec<f64> = signs.iter().map(|&y| if y < 0.0 { uniform() + 1e-3 } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    for (d, w) in delta.iter_mut().zip(&weights) {
        if *w > 0.0 {
            *d = mass * w / total;
        }
    }
    delta
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `s(w) = −½ Σ_{i,i'} c_i c_{i'} φ(wᵀx_i) φ(wᵀx_{i'}) + c2‖w‖²` as the literal double sum.
pub fn filter_objective_double_sum(
    coeffs: &[f64],
    witnesses: &[Vec<f64>],
    c2: f64,
    phi: impl Fn(f64) -> f64,
    w: &[f64],
) -> f64 {
    let act: Vec<f64> = witnesses.iter().map(|x| phi(x.iter().zip(w).map(|(a, b)| a * b).sum())).collect();
    let mut double = 0.0;
    for i in 0..coeffs.len() {
        for j in 0..coeffs.len() {
            double += coeffs[i] * coeffs[j] * act[i] * act[j];
        }
    }
    -0.5 * double + c2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Pos@Top from its definition: a positive counts iff it outscores every negative.
pub fn pos_at_top_brute(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let mut above = 0usize;
    for i in 0..scores.len() {
        if positive[i] && (0..scores.len()).all(|j| positive[j] || scores[i] > scores[j]) {
            above += 1;
        }
    }
    above as f64 / n_pos as f64
}

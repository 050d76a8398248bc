//! Filter objective, gradient and descent checks.

use convmpt_core::filter::{
    filter_gradient, filter_objective, update_filter, update_filterbank, update_filterbank_in_order, FilterSubproblem,
    OptimizerConfig,
};
use convmpt_core::{encode_dataset, synth_dataset, Activation, FilterBank, Label, Matrix, SynthConfig, SynthSignal};
use convmpt_testkit::{central_gradient, filter_objective_double_sum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Identity];

struct Case {
    delta: Vec<f64>,
    labels: Vec<Label>,
    witnesses: Vec<Vec<f64>>,
    c2: f64,
    w: Vec<f64>,
}

impl Case {
    fn random(rng: &mut ChaCha8Rng) -> Case {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=8);
        let labels = (0..n).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
        Case {
            delta: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            labels,
            witnesses: (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
            c2: rng.random_range(0.001..0.5),
            w: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn sub(&self, activation: Activation) -> FilterSubproblem<'_> {
        let refs = self.witnesses.iter().map(Vec::as_slice).collect();
        FilterSubproblem::new(&self.delta, &self.labels, refs, self.c2, activation).unwrap()
    }

    fn saturated(&self) -> bool {
        self.witnesses.iter().any(|x| x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>().abs() > 5.0)
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-8)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 150 {
        let case = Case::random(&mut rng);
        if case.saturated() {
            continue;
        }
        for phi in ACTIVATIONS {
            let sub = case.sub(phi);
            let analytic = filter_gradient(&sub, &case.w);
            let numeric = central_gradient(|w| filter_objective(&sub, w), &case.w, 1e-6);
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        checked += 1;
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn factorized_objective_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let case = Case::random(&mut rng);
        for phi in ACTIVATIONS {
            let sub = case.sub(phi);
            let coeffs: Vec<f64> = case.delta.iter().zip(&case.labels).map(|(d, l)| d * l.sign()).collect();
            let reference = filter_objective_double_sum(&coeffs, &case.witnesses, case.c2, |z| phi.apply(z), &case.w);
            let ours = filter_objective(&sub, &case.w);
            assert!((ours - reference).abs() <= 1e-10 * reference.abs().max(1.0), "{ours} vs {reference}");
        }
    }
}

#[test]
fn objective_special_cases() {
    let x = [vec![0.3, -0.2], vec![1.0, 0.5]];
    let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let labels = [Label::Positive, Label::Negative];
    let w = [0.7, -1.1];
    let norm = 0.7 * 0.7 + 1.1 * 1.1;

    let zero = FilterSubproblem::new(&[0.0, 0.0], &labels, refs.clone(), 0.2, Activation::Tanh).unwrap();
    assert_eq!(filter_objective(&zero, &w), 0.2 * norm);
    let g = filter_gradient(&zero, &w);
    assert_eq!(g, vec![2.0 * 0.2 * 0.7, 2.0 * 0.2 * -1.1]);

    let sub = FilterSubproblem::new(&[0.4, 1.3], &labels, refs, 0.2, Activation::Tanh).unwrap();
    assert_eq!(filter_objective(&sub, &[0.0, 0.0]), 0.0);
    assert_eq!(filter_gradient(&sub, &[0.0, 0.0]), vec![0.0, 0.0]);

    // c = (1, −1) over identical witnesses cancels the square term.
    let v = vec![0.5, 2.0];
    let same: Vec<&[f64]> = vec![&v, &v];
    let sub = FilterSubproblem::new(&[1.0, 1.0], &labels, same, 0.3, Activation::Identity).unwrap();
    assert!((filter_objective(&sub, &w) - 0.3 * norm).abs() < 1e-15);
}

#[test]
fn fixed_point_and_ridge_shrinkage() {
    let x = [vec![0.3, -0.2, 0.9], vec![1.0, 0.5, -0.4]];
    let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let labels = [Label::Positive, Label::Negative];
    let config = OptimizerConfig { steps_per_filter: 4, ..OptimizerConfig::default() };

    let sub = FilterSubproblem::new(&[0.5, 0.5], &labels, refs.clone(), 0.1, Activation::Tanh).unwrap();
    let update = update_filter(&sub, &[0.0; 3], &config).unwrap();
    assert_eq!(update.w, vec![0.0; 3]);

    let c2 = 0.2;
    let sub = FilterSubproblem::new(&[0.0, 0.0], &labels, refs, c2, Activation::Tanh).unwrap();
    let w0 = [1.0, -2.0, 0.5];
    let update = update_filter(&sub, &w0, &config).unwrap();
    let factor = (1.0 - 2.0 * config.eta * c2).powi(config.steps_per_filter as i32);
    for (a, b) in update.w.iter().zip(&w0) {
        assert!((a - factor * b).abs() < 1e-14);
    }
    assert!(update.trace.iter().all(|r| r.accepted && r.backtracks == 0));
}

#[test]
fn descent_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut case = Case::random(&mut rng);
        case.delta.iter_mut().for_each(|d| *d *= 20.0);
        for phi in ACTIVATIONS {
            let sub = case.sub(phi);
            let config = OptimizerConfig { eta: rng.random_range(0.01..5.0), ..OptimizerConfig::default() };
            let before = filter_objective(&sub, &case.w);
            let update = update_filter(&sub, &case.w, &config).unwrap();
            assert!(filter_objective(&sub, &update.w) <= before);
            for r in &update.trace {
                assert!(r.objective_after <= r.objective_before);
            }
        }
    }
}

#[test]
fn non_finite_objective_aborts() {
    let x = [vec![1.0]];
    let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let sub = FilterSubproblem::new(&[1.0], &[Label::Positive], refs, 0.1, Activation::Identity).unwrap();
    assert!(update_filter(&sub, &[f64::INFINITY], &OptimizerConfig::default()).is_err());
}

fn bank_fixture() -> (convmpt_core::Dataset, FilterBank, Vec<f64>) {
    let ds = synth_dataset(&SynthConfig::new(6, 6, 5, (2, 6), SynthSignal::WitnessInstance, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bank = FilterBank::random(5, 4, Activation::Tanh, 1.0, &mut rng).unwrap();
    let delta: Vec<f64> = (0..ds.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    (ds, bank, delta)
}

#[test]
fn filterbank_order_independent_and_monotone() {
    let (ds, bank, delta) = bank_fixture();
    let enc = encode_dataset(&bank, &ds).unwrap();
    let config = OptimizerConfig::default();
    let forward = update_filterbank(&bank, &delta, &enc, &ds, 0.05, &config).unwrap();
    let reversed = update_filterbank_in_order(&bank, &delta, &enc, &ds, 0.05, &config, &[3, 1, 0, 2]).unwrap();
    assert_eq!(forward, reversed);
    assert!(forward.objective_after <= forward.objective_before);
    assert!(update_filterbank_in_order(&bank, &delta, &enc, &ds, 0.05, &config, &[0, 0, 1, 2]).is_err());
}

#[test]
fn single_filter_bank_equals_update_filter() {
    let (ds, bank, delta) = bank_fixture();
    let single = FilterBank::new(Matrix::from_rows(&[bank.filter(2)]).unwrap(), Activation::Tanh).unwrap();
    let enc = encode_dataset(&single, &ds).unwrap();
    let config = OptimizerConfig::default();
    let bank_update = update_filterbank(&single, &delta, &enc, &ds, 0.05, &config).unwrap();
    let sub = FilterSubproblem::from_encoding(0, &delta, &ds, &enc, 0.05, Activation::Tanh).unwrap();
    let direct = update_filter(&sub, single.filter(0), &config).unwrap();
    assert_eq!(bank_update.filters.filter(0), direct.w.as_slice());
    assert_eq!(bank_update.traces[0], direct.trace);
}

#[test]
fn zero_delta_decouples_into_ridge_shrinkage() {
    let (ds, bank, _) = bank_fixture();
    let enc = encode_dataset(&bank, &ds).unwrap();
    let config = OptimizerConfig { steps_per_filter: 3, ..OptimizerConfig::default() };
    let c2 = 0.3;
    let update = update_filterbank(&bank, &vec![0.0; ds.len()], &enc, &ds, c2, &config).unwrap();
    let factor = (1.0 - 2.0 * config.eta * c2).powi(3);
    for k in 0..bank.count() {
        for (a, b) in update.filters.filter(k).iter().zip(bank.filter(k)) {
            assert!((a - factor * b).abs() < 1e-14);
        }
    }
}

//! Statistical behaviour of the estimators: calibration against exact
//! Gaussian oracles, variance reduction, mixing and reproducibility.

use spectral_spde::estimators::{
    ergodic_average, moment_bound_probe, order_sweep, weak_error, Coupling, ErgodicConfig, McEstimate, MomentConfig,
    SweepConfig, WeakErrorConfig, Z_95,
};
use spectral_spde::integrators::{run_coarse, ModelSpec, SchemeParams};
use spectral_spde::noise::{stochastic_convolution_exact_step, NoiseStream};
use spectral_spde::nonlinear::{BuiltinNonlinearity, NemytskiiSpec};
use spectral_spde::oracles::{continuous_law, expectation_of, scheme_law, scheme_stationary_law, TestFunctional};
use spectral_spde::{SpectralVector, Spectrum};

fn arctan_model(n: usize, y0: SpectralVector) -> ModelSpec {
    let g: NemytskiiSpec = BuiltinNonlinearity::ScaledArctan { a: 1.0, b: 1.0 }.into();
    ModelSpec::new(Spectrum::dirichlet_laplacian(n), g, y0).unwrap()
}

fn linear_from(n: usize, amplitude: f64) -> ModelSpec {
    ModelSpec::linear(n).with_initial(SpectralVector::unit(n, 0).scaled(amplitude)).unwrap()
}

/// `E φ(Y(mτ)) - E φ(Y_m)` from the two Gaussian laws.
fn exact_weak_error(model: &ModelSpec, phi: &TestFunctional, tau: f64, m: usize) -> f64 {
    let cont = continuous_law(model.spectrum(), model.initial(), tau * m as f64).unwrap();
    let scheme = scheme_law(model.spectrum(), model.initial(), tau, m).unwrap();
    expectation_of(phi, &cont).unwrap() - expectation_of(phi, &scheme).unwrap()
}

#[test]
fn linear_weak_error_matches_oracle() {
    let model = linear_from(16, 1.0);
    let phi = TestFunctional::CosMode(0);
    for (tau, m) in [(0.125, 8), (1.0 / 32.0, 32)] {
        let cfg = WeakErrorConfig::new(SchemeParams::new(tau, m).with_seed(5), 4000);
        let est = weak_error(&model, &phi, &cfg).unwrap();
        let exact = exact_weak_error(&model, &phi, tau, m);
        assert!((est.estimate - exact).abs() <= 3.0 * est.std_error, "τ={tau}: {est:?} vs {exact}");
    }
}

#[test]
fn common_random_numbers_reduce_variance() {
    let model = linear_from(16, 0.5);
    let phi = TestFunctional::CosMode(0);
    // the pathwise correlation of the two solvers grows as τ shrinks; at
    // τ = 2^-4 the variance-reduction factor is only about 4.8
    let params = SchemeParams::new(1.0 / 64.0, 64).with_seed(9);
    let mut cfg = WeakErrorConfig::new(params, 2000);
    let coupled = weak_error(&model, &phi, &cfg).unwrap();
    cfg.coupling = Coupling::Independent;
    let independent = weak_error(&model, &phi, &cfg).unwrap();
    assert!(
        independent.std_error >= 5.0 * coupled.std_error,
        "coupled {} vs independent {}",
        coupled.std_error,
        independent.std_error
    );
}

#[test]
fn confidence_intervals_are_calibrated() {
    let model = linear_from(8, 1.0);
    let phi = TestFunctional::CosMode(0);
    let (tau, m) = (0.125, 8);
    let exact = exact_weak_error(&model, &phi, tau, m);
    let reps = 200;
    let covered = (0..reps)
        .filter(|&rep| {
            let cfg = WeakErrorConfig::new(SchemeParams::new(tau, m).with_refinement(4).with_seed(1000 + rep), 200);
            weak_error(&model, &phi, &cfg).unwrap().contains(exact)
        })
        .count();
    let rate = covered as f64 / reps as f64;
    assert!((0.90..=0.99).contains(&rate), "coverage {rate}");
}

#[test]
fn doubling_samples_shrinks_standard_error_by_root_two() {
    let model = arctan_model(8, SpectralVector::zeros(8));
    let phi = TestFunctional::CosMode(0);
    let params = SchemeParams::new(0.125, 8).with_refinement(4).with_seed(3);
    let small = weak_error(&model, &phi, &WeakErrorConfig::new(params, 4000)).unwrap();
    let large = weak_error(&model, &phi, &WeakErrorConfig::new(params, 8000)).unwrap();
    let ratio = small.std_error / large.std_error;
    assert!((1.25..=1.6).contains(&ratio), "{ratio}");
}

#[test]
fn antithetic_pairs_leave_linear_estimate_consistent() {
    let model = linear_from(8, 1.0);
    let phi = TestFunctional::CosMode(0);
    let mut cfg = WeakErrorConfig::new(SchemeParams::new(0.125, 8).with_refinement(4).with_seed(8), 2000);
    cfg.antithetic = true;
    let est = weak_error(&model, &phi, &cfg).unwrap();
    let exact = exact_weak_error(&model, &phi, 0.125, 8);
    assert!((est.estimate - exact).abs() <= 3.0 * est.std_error, "{est:?} vs {exact}");
}

#[test]
fn errors_are_uniform_in_the_horizon() {
    let model = arctan_model(8, SpectralVector::zeros(8));
    let phi = TestFunctional::CosMode(0);
    let tau = 1.0 / 16.0;
    let single = weak_error(&model, &phi, &WeakErrorConfig::new(SchemeParams::new(tau, 1).with_seed(2), 2000)).unwrap();
    assert!(single.estimate.is_finite() && single.std_error.is_finite());
    let est: Vec<McEstimate> = [1usize, 2, 4]
        .iter()
        .map(|t| {
            let params = SchemeParams::new(tau, 16 * t).with_seed(2);
            weak_error(&model, &phi, &WeakErrorConfig::new(params, 4000)).unwrap()
        })
        .collect();
    for a in &est {
        for b in &est {
            let half = Z_95 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            assert!((a.estimate - b.estimate).abs() <= half, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn galerkin_truncation_does_not_move_weak_errors() {
    let phi = TestFunctional::CosMode(0);
    let params = SchemeParams::new(1.0 / 16.0, 16).with_seed(4);
    let cfg = WeakErrorConfig::new(params, 1500);
    let e64 = weak_error(&arctan_model(64, SpectralVector::zeros(64)), &phi, &cfg).unwrap();
    let e128 = weak_error(&arctan_model(128, SpectralVector::zeros(128)), &phi, &cfg).unwrap();
    assert!(
        (e64.estimate - e128.estimate).abs() <= e64.ci_half_width().max(e128.ci_half_width()),
        "{e64:?} vs {e128:?}"
    );
}

#[test]
fn reports_are_reproducible_across_worker_counts() {
    let model = arctan_model(8, SpectralVector::zeros(8));
    let phi = TestFunctional::ExpNegSq { mode: 1, a: 3.0 };
    let mut cfg = SweepConfig::new(vec![0.25, 0.125, 0.0625, 0.03125], 0.5, 64, 17);
    cfg.refinement_r = 4;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| order_sweep(&model, &phi, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
}

#[test]
fn linear_ergodic_average_matches_scheme_invariant_law() {
    let model = ModelSpec::linear(16);
    let tau = 1.0 / 16.0;
    let rep = ergodic_average(&model, &TestFunctional::CosMode(0), &ErgodicConfig::new(tau, 500, 64_000, 12)).unwrap();
    let mu0 = model.spectrum().mu0();
    let oracle = (-1.0 / (2.0 * (2.0 * mu0 + mu0 * mu0 * tau))).exp();
    assert_eq!(rep.oracle_value, Some(oracle));
    assert!(rep.contains(oracle), "{rep:?}");
}

#[test]
fn ergodic_averages_forget_the_initial_condition() {
    let phi = TestFunctional::CosMode(0);
    let cfg = ErgodicConfig::new(1.0 / 32.0, 1000, 64_000, 21);
    let from_zero = ergodic_average(&arctan_model(16, SpectralVector::zeros(16)), &phi, &cfg).unwrap();
    let far = SpectralVector::unit(16, 0).scaled(10.0);
    let from_far = ergodic_average(&arctan_model(16, far), &phi, &ErgodicConfig { seed: 22, ..cfg }).unwrap();
    assert!(from_zero.ci_low <= from_far.ci_high && from_far.ci_low <= from_zero.ci_high, "{from_zero:?} {from_far:?}");
}

#[test]
fn longer_windows_stay_inside_the_previous_interval() {
    let model = arctan_model(16, SpectralVector::zeros(16));
    let phi = TestFunctional::CosMode(1);
    let short = ergodic_average(&model, &phi, &ErgodicConfig::new(1.0 / 16.0, 500, 16_000, 30)).unwrap();
    let long = ergodic_average(&model, &phi, &ErgodicConfig::new(1.0 / 16.0, 500, 64_000, 30)).unwrap();
    assert!(long.ci_high - long.ci_low < short.ci_high - short.ci_low);
    assert!(short.contains(long.average), "{short:?} {long:?}");
}

#[test]
fn linear_second_moment_grows_to_the_stationary_trace() {
    let model = ModelSpec::linear(32);
    let tau = 0.01;
    let cfg = MomentConfig { tau, power: 2, checkpoints: vec![1, 3, 10, 100, 1000], n_samples: 2000, seed: 6 };
    let rep = moment_bound_probe(&model, &cfg).unwrap();
    for w in rep.points.windows(2) {
        let (a, b) = (w[0].estimate, w[1].estimate);
        let half = Z_95 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!(b.estimate >= a.estimate - half, "{a:?} then {b:?}");
    }
    let trace: f64 = scheme_stationary_law(model.spectrum(), tau).unwrap().variance.iter().sum();
    let last = rep.points.last().unwrap().estimate;
    assert!(last.contains(trace), "{last:?} vs {trace}");
    assert!((rep.linear_oracle.unwrap() - trace).abs() < 1e-12);
}

#[test]
fn simulated_means_match_scheme_law_for_many_configurations() {
    let n = 8;
    let y0 = SpectralVector::new((0..n).map(|k| 0.8 / (k + 1) as f64).collect()).unwrap();
    let model = ModelSpec::linear(n).with_initial(y0.clone()).unwrap();
    let cases = [
        (0.5, 1, TestFunctional::CosMode(0)),
        (0.25, 3, TestFunctional::CosMode(1)),
        (0.125, 8, TestFunctional::ExpNegSq { mode: 0, a: 1.0 }),
        (0.1, 2, TestFunctional::ExpNegSq { mode: 2, a: 5.0 }),
        (0.05, 20, TestFunctional::BoundedPolyProbe(0)),
        (0.02, 5, TestFunctional::BoundedPolyProbe(3)),
        (0.01, 50, TestFunctional::CosMode(4)),
        (1.0 / 64.0, 64, TestFunctional::ExpNegSq { mode: 1, a: 0.5 }),
        (0.003, 10, TestFunctional::CosMode(0)),
        (0.2, 40, TestFunctional::Constant(2.0)),
    ];
    for (i, (tau, m, phi)) in cases.iter().enumerate() {
        let params = SchemeParams::new(*tau, *m).with_refinement(1).with_seed(400 + i as u64);
        let values: Vec<f64> = (0..5000).map(|s| phi.eval(run_coarse(&model, &params, s).unwrap().coeffs())).collect();
        let est = McEstimate::from_samples(&values);
        let exact = expectation_of(phi, &scheme_law(model.spectrum(), &y0, *tau, *m).unwrap()).unwrap();
        assert!((est.estimate - exact).abs() <= 3.0 * est.std_error + 1e-15, "case {i}: {est:?} vs {exact}");
    }
}

#[test]
fn scheme_variance_converges_at_first_order() {
    let sp = Spectrum::dirichlet_laplacian(8);
    let y0 = SpectralVector::zeros(8);
    let t_final = 0.5;
    let cont = continuous_law(&sp, &y0, t_final).unwrap();
    let err = |q: i32| {
        let tau = 2f64.powi(-q);
        let m = (t_final / tau) as usize;
        let law = scheme_law(&sp, &y0, tau, m).unwrap();
        (law.variance[0] - cont.variance[0]).abs()
    };
    for q in 8..11 {
        let ratio = err(q) / err(q + 1);
        assert!((1.7..=2.3).contains(&ratio), "q={q}: {ratio}");
    }
}

#[test]
fn exact_convolution_chain_reaches_stationary_spectrum() {
    let n = 9;
    let sp = Spectrum::dirichlet_laplacian(n);
    let samples = 10_000;
    let mut sums = vec![0.0; n];
    for s in 0..samples {
        let mut stream = NoiseStream::new(77, s);
        let mut z = SpectralVector::zeros(n);
        for _ in 0..10 {
            z = stochastic_convolution_exact_step(&sp, &z, 0.1, &mut stream).unwrap();
        }
        for (acc, c) in sums.iter_mut().zip(z.coeffs()) {
            *acc += c * c;
        }
    }
    for k in 0..n {
        let var = sums[k] / samples as f64;
        let target = 1.0 / (2.0 * sp.eigenvalue(k));
        assert!((var / target - 1.0).abs() < 0.05, "mode {k}: {var} vs {target}");
    }
}

#[test]
fn running_maximum_of_exact_convolution_grows_only_logarithmically() {
    let n = 16;
    let sp = Spectrum::dirichlet_laplacian(n);
    let chains = 20;
    let checkpoints = [100, 1000, 10_000];
    let mut mean_max = [0.0; 3];
    for c in 0..chains {
        let mut stream = NoiseStream::new(5, c);
        let mut z = SpectralVector::zeros(n);
        let mut best: f64 = 0.0;
        for m in 1..=10_000 {
            z = stochastic_convolution_exact_step(&sp, &z, 0.01, &mut stream).unwrap();
            best = best.max(z.norm().powi(2));
            if let Some(i) = checkpoints.iter().position(|&p| p == m) {
                mean_max[i] += best / chains as f64;
            }
        }
    }
    // The maximum of n stationary Gaussian draws of variance v grows like
    // 2 v ln n, i.e. by 2 v ln 10 per decade; mode 0 dominates.
    let per_decade = (mean_max[2] - mean_max[0]) / 2.0;
    let v0 = 1.0 / (2.0 * sp.mu0());
    assert!(per_decade > 0.0 && per_decade <= 2.0 * (2.0 * v0 * std::f64::consts::LN_10), "{mean_max:?}");
}

//! Invariants of the public API under random inputs.

use hamlearn::exact::{evolve_exact, DenseGenerator, DensityMatrix};
use hamlearn::interp::{derivative_error_budget, robust_fit, uniform_times, FitConfig};
use hamlearn::model::Edge;
use hamlearn::rng::stream;
use hamlearn::shadows::{estimator_value, run_round, IdentityChannel, Normalization};
use hamlearn::sim::{evolve_trajectory, DephasingConvention};
use hamlearn::{LindbladModel, PauliAxis, PauliString, ProductStateSpec, StateVector};
use proptest::prelude::*;

fn axis(k: usize) -> PauliAxis {
    PauliAxis::ALL[k % 3]
}

fn noisy_model(j: f64, w0: f64, w1: f64, t1: f64, t2: f64) -> LindbladModel {
    let mut m = LindbladModel::new(2);
    m.edges = vec![Edge { i: 0, j: 1, coupling: j }];
    m.frequency = vec![w0, w1];
    m.t1 = vec![t1, t1];
    m.t2 = vec![t2, t2];
    m
}

fn spec(k: &[usize], s: &[bool]) -> ProductStateSpec {
    let label: String = k
        .iter()
        .zip(s)
        .enumerate()
        .map(|(site, (a, plus))| format!("{}{}{site}", if *plus { '+' } else { '-' }, axis(*a).upper().to_ascii_lowercase()))
        .collect();
    ProductStateSpec::parse(&label, k.len()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_evolution_keeps_trace_and_hermiticity(
        j in -1.0..1.0f64, w0 in -2.0..2.0f64, w1 in -2.0..2.0f64,
        t1 in 1.0..50.0f64, t2 in 1.0..50.0f64, t in 0.0..3.0f64,
        axes in proptest::collection::vec(0..3usize, 2), signs in proptest::collection::vec(any::<bool>(), 2),
    ) {
        let m = noisy_model(j, w0, w1, t1, t2);
        let g = DenseGenerator::new(&m.lindbladian(DephasingConvention::default(), None)).unwrap();
        let rho = evolve_exact(&DensityMatrix::from_spec(&spec(&axes, &signs)), &g, t, 0.01).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(rho.trace().im.abs() < 1e-10);
        prop_assert!(rho.hermiticity_error() < 1e-10);
    }

    #[test]
    fn trajectories_stay_normalized(
        j in -1.0..1.0f64, w0 in -2.0..2.0f64, w1 in -2.0..2.0f64,
        t1 in 1.0..50.0f64, t2 in 1.0..50.0f64, t in 0.0..3.0f64, seed in any::<u64>(),
    ) {
        let m = noisy_model(j, w0, w1, t1, t2);
        let mut psi = StateVector::product(&[(PauliAxis::X, hamlearn::Sign::Plus), (PauliAxis::Y, hamlearn::Sign::Minus)]);
        evolve_trajectory(&mut psi, &m, t, 0.01, DephasingConvention::default(), &mut stream(seed, &[]));
        let norm: f64 = psi.amplitudes().iter().map(|a| a.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_polynomials_are_reproduced(coeffs in proptest::collection::vec(-1.0..1.0f64, 2..7), a in 0.0..1.0f64, w in 0.5..3.0f64) {
        let d = coeffs.len() - 1;
        let b = a + w;
        let p = |t: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
        let points: Vec<(f64, f64)> = uniform_times(60, a, b).unwrap().into_iter().map(|t| (t, p(t))).collect();
        let fit = robust_fit(&points, d, &FitConfig::default()).unwrap();
        for (t, y) in &points {
            prop_assert!((fit.eval(*t) - y).abs() < 1e-8);
        }
        prop_assert!((fit.derivative_at_zero() - coeffs[1]).abs() < 1e-5 * (1.0 + 1.0 / w).powi(d as i32));
    }

    #[test]
    fn budget_is_linear_in_sigma_and_grows_with_extrapolation_distance(d in 1..12usize, sigma in 1e-6..1e-1f64) {
        let a = 1.0 / (d * d) as f64;
        let base = derivative_error_budget(a, 2.0 + a, d, sigma);
        prop_assert!((derivative_error_budget(a, 2.0 + a, d, 2.0 * sigma) - 2.0 * base).abs() <= 1e-12 * base);
        prop_assert!(base <= 3.0 * std::f64::consts::E * sigma / a);
        prop_assert!(derivative_error_budget(2.0 * a, 2.0 + 2.0 * a, d, sigma) >= base);
    }

    #[test]
    fn identity_channel_estimator_is_supported_on_matching_bases(seed in any::<u64>(), a in 0..3usize, b in 0..3usize) {
        let channel = IdentityChannel { n_qubits: 2 };
        let pa = PauliString::single(2, 0, axis(a)).unwrap();
        let pb = PauliString::single(2, 0, axis(b)).unwrap();
        let mut rng = stream(seed, &[]);
        for _ in 0..50 {
            let rec = run_round(&channel, &PauliAxis::ALL, &mut rng);
            let x = estimator_value(&rec, &pa, &pb, Normalization::Unbiased);
            if rec.measure[0] != axis(a) || rec.prepare[0] != axis(b) {
                prop_assert_eq!(x, 0.0);
            } else if a == b {
                prop_assert_eq!(x, 9.0);
            } else {
                prop_assert_eq!(x.abs(), 9.0);
            }
        }
    }
}

use spde_ftle::amplitude::ae_simulate;
use spde_ftle::analysis::{regime_study, sweep, Metric, PathSetup, RegimeCase};
use spde_ftle::noise::{rescale_slow, simulate_convolution};
use spde_ftle::stats::{loglog_slope, Summary};
use spde_ftle::thresholds::{STABLE_AE_MAX, VS_TAIL_SLOPE_MIN};
use spde_ftle::{ExperimentConfig, ModelSpec, NoiseSpec, SimParams};

const SMALL_SWEEP: &str = "[model]\nmodes = 16\n\n[scaling]\neps = [0.2, 0.1, 0.05]\n";

fn small_setups() -> Vec<PathSetup> {
    ExperimentConfig::parse(SMALL_SWEEP).unwrap().path_setups().unwrap()
}

#[test]
fn rescaled_convolution_shrinks_with_eps() {
    let m = ModelSpec::burgers(32).unwrap();
    let rates = m.eigenvalues().to_vec();
    let mut alphas = vec![1.0; m.n()];
    alphas[0] = 0.0;
    let dt: f64 = 0.01;
    let grid = [0.2f64, 0.1, 0.05];
    let medians: Vec<f64> = grid
        .iter()
        .map(|&eps| {
            let steps = (1.0 / (eps * eps * dt)).round() as usize;
            let sups: Vec<f64> = (0..16)
                .map(|stream| {
                    let spec = NoiseSpec::new(alphas.clone(), 11, stream).unwrap();
                    let fast = simulate_convolution(&spec, &rates, dt, steps).unwrap();
                    rescale_slow(&fast, eps, 1.0).unwrap().sup_norm()
                })
                .collect();
            Summary::of(&sups).unwrap().median
        })
        .collect();
    let fit = loglog_slope(&grid, &medians).unwrap();
    assert!(fit.slope >= 0.8, "slope {} from {medians:?}", fit.slope);
}

#[test]
fn shared_noise_sweep_converges() {
    let result = sweep(&small_setups(), 40).unwrap();
    let approx = result.slope(Metric::ApproxError).unwrap();
    assert!(approx >= 0.7, "approx slope {approx}");
    let tail = result.slope(Metric::VsTail).unwrap();
    assert!(tail >= VS_TAIL_SLOPE_MIN, "V_s tail slope {tail}");
}

#[test]
fn independent_amplitude_noise_breaks_the_rate() {
    let setups: Vec<PathSetup> =
        small_setups().into_iter().map(|s| PathSetup { ae_stream_offset: Some(1 << 20), ..s }).collect();
    let slope = sweep(&setups, 12).unwrap().slope(Metric::ApproxError).unwrap();
    assert!(slope < 0.5, "slope {slope} with independent noise");
}

#[test]
fn mismatched_initial_amplitude_breaks_the_rate() {
    let setups: Vec<PathSetup> =
        small_setups().into_iter().map(|s| PathSetup { ae_a0: Some(vec![s.a0[0] + 1.0]), ..s }).collect();
    let result = sweep(&setups, 12).unwrap();
    let slope = result.slope(Metric::ApproxError).unwrap();
    assert!(slope < 0.5, "slope {slope} with a shifted start");
    let smallest = result.series(Metric::ApproxError).unwrap().per_eps[2].unwrap().median;
    assert!(smallest > 0.1, "error {smallest} should stay O(1)");
}

#[test]
fn amplitude_paths_stay_bounded() {
    let m = ModelSpec::burgers(16).unwrap();
    let cubic = spde_ftle::amplitude::CubicForm::from_model(&m).unwrap();
    let eps = 0.1;
    let params = SimParams::new(&m, eps * eps, eps * eps, eps, 4.0);
    let worst = (0..32)
        .map(|stream| {
            let spec = NoiseSpec::uniform(m.n(), 1.0, 5, stream).unwrap();
            ae_simulate(&cubic, &m, &params, &spec, &[3.0]).unwrap().sup_norm()
        })
        .fold(0.0, f64::max);
    assert!(worst.is_finite() && worst < 20.0, "sup |a| = {worst}");
}

#[test]
fn small_regimes_have_predicted_signs() {
    let text = |case: &str| format!("[model]\nmodes = 16\n\n[regime]\ncase = \"{case}\"\npaths = 60\n");
    let stable = ExperimentConfig::parse(&text("stable")).unwrap().regime_setup().unwrap();
    let report = regime_study(&stable, 60).unwrap();
    assert!(report.spde_negative.estimate >= 0.95, "{:?}", report.spde_negative);
    assert!(report.ae_max <= STABLE_AE_MAX + 1e-6);

    let unstable = ExperimentConfig::parse(&text("unstable")).unwrap().regime_setup().unwrap();
    let report = regime_study(&unstable, 60).unwrap();
    assert!(report.spde_positive.lo > 0.0, "{:?}", report.spde_positive);

    let deterministic = ExperimentConfig::parse(&text("deterministic")).unwrap().regime_setup().unwrap();
    let report = regime_study(&deterministic, 4).unwrap();
    assert_eq!(report.case, RegimeCase::Deterministic);
    assert!(report.deterministic_error.unwrap() <= 1e-8);
}

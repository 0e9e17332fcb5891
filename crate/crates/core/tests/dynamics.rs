use torstab::dynamics::{
    action_drift, ballistic_bound, escape_time, integrate, EscapeOptions, IntegratorOptions, Method, Sample,
};
use torstab::{Series, Trajectory};

const OMEGA: [f64; 2] = [1.0, 1.618_033_988_749_895];

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = frac(a - b);
    d.min(1.0 - d)
}

#[test]
fn linear_flow_is_exact() {
    let h = Series::linear_action(&OMEGA);
    let t_end = 12.345;
    let traj = integrate(&h, &[0.1, 0.7], &[0.3, -0.2], t_end, &IntegratorOptions::new(0.01)).unwrap();
    let last = traj.last();
    assert!((last.t - t_end).abs() < 1e-12);
    assert_eq!(last.action, vec![0.3, -0.2]);
    for i in 0..2 {
        let expected = frac([0.1, 0.7][i] + OMEGA[i] * t_end);
        assert!(
            circle_distance(last.theta[i], expected) < 1e-11,
            "{i}: {} vs {expected}",
            last.theta[i]
        );
    }
    assert!(action_drift(&traj) <= 1e-13);
    assert!(traj.passes());
}

#[test]
fn twist_map_matches_closed_form() {
    let h = &Series::linear_action(&OMEGA) + &Series::action_monomial(vec![2, 0]).scale(0.5);
    let (theta0, action0) = ([0.25, 0.5], [0.4, 0.1]);
    let t_end = 30.0;
    let traj = integrate(&h, &theta0, &action0, t_end, &IntegratorOptions::new(0.01)).unwrap();
    for s in &traj.samples {
        assert!(s.theta.iter().all(|&x| (0.0..1.0).contains(&x)));
        let rates = [OMEGA[0] + action0[0], OMEGA[1]];
        for i in 0..2 {
            assert!(circle_distance(s.theta[i], frac(theta0[i] + rates[i] * s.t)) < 1e-10);
        }
    }
    assert!(action_drift(&traj) <= 1e-13);
}

#[test]
fn time_is_strictly_increasing_and_decimated() {
    let h = &Series::linear_action(&OMEGA) + &Series::cos_term(vec![1, 1], vec![1, 0], 0.01);
    let mut opts = IntegratorOptions::new(0.01);
    opts.decimation = 7;
    let traj = integrate(&h, &[0.0, 0.0], &[0.1, 0.1], 1.0, &opts).unwrap();
    assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
    assert_eq!(traj.samples.len(), 1 + 100 / 7 + 1);
    assert!((traj.last().t - 1.0).abs() < 1e-12);
}

#[test]
fn forward_backward_round_trip() {
    let h = &(&Series::linear_action(&OMEGA) + &Series::cos_term(vec![1, -1], vec![2, 0], 0.3))
        + &Series::sin_term(vec![0, 1], vec![0, 1], 0.05);
    let opts = IntegratorOptions::new(0.01);
    let (theta0, action0) = ([0.3, 0.9], [0.2, -0.1]);
    let fwd = integrate(&h, &theta0, &action0, 5.0, &opts).unwrap();
    let end = fwd.last();
    let back = integrate(&h, &end.theta, &end.action, -5.0, &opts).unwrap();
    let start = back.last();
    for i in 0..2 {
        assert!(circle_distance(start.theta[i], theta0[i]) < 1e-9);
        assert!((start.action[i] - action0[i]).abs() < 1e-9);
    }
}

fn mixed(eps: f64) -> Series {
    &(&Series::linear_action(&OMEGA) + &Series::cos_term(vec![1, 1], vec![1, 1], eps))
        + &Series::sin_term(vec![2, -1], vec![0, 0], eps / 4.0)
}

fn energy_drift(h: &Series, method: Method) -> f64 {
    let mut opts = IntegratorOptions::new(0.005);
    opts.method = method;
    integrate(h, &[0.1, 0.2], &[0.3, 0.1], 100.0, &opts)
        .unwrap()
        .max_energy_drift
}

#[test]
fn energy_drift_stays_small_for_both_methods() {
    let weak = mixed(1e-4);
    for method in [Method::ImplicitMidpoint, Method::TripleJump] {
        let drift = energy_drift(&weak, method);
        assert!(drift <= 1e-8, "{}: {drift}", method.name());
    }
    let strong = mixed(0.2);
    assert!(energy_drift(&strong, Method::TripleJump) < 0.1 * energy_drift(&strong, Method::ImplicitMidpoint));
}

#[test]
fn leaving_the_domain_truncates_the_run() {
    let h = Series::sin_term(vec![1, 0], vec![0, 0], 1.0);
    let mut opts = IntegratorOptions::new(0.01);
    opts.action_radius = 0.5;
    let traj = integrate(&h, &[0.0, 0.0], &[0.0, 0.0], 10.0, &opts).unwrap();
    assert!(traj.domain_exit);
    assert!(!traj.passes());
    assert!(traj.last().t < 10.0);
}

#[test]
fn action_drift_of_manufactured_trajectories() {
    let sample = |t: f64, i: f64| Sample {
        t,
        theta: vec![0.0, 0.0],
        action: vec![i, 0.0],
        energy: 0.0,
    };
    let mut traj: Trajectory = Trajectory {
        samples: vec![sample(0.0, 0.1)],
        dt: 0.1,
        method: Method::ImplicitMidpoint,
        domain_exit: false,
        max_energy_drift: 0.0,
        energy_tolerance: 1e-8,
    };
    assert_eq!(action_drift(&traj), 0.0);
    traj.samples
        .extend([sample(0.1, 0.12), sample(0.2, 0.17), sample(0.3, 0.11)]);
    assert!((action_drift(&traj) - 0.07).abs() < 1e-15);
}

#[test]
fn unperturbed_samples_are_all_censored() {
    let h = Series::linear_action(&OMEGA);
    let mut opts = EscapeOptions::new(0.1, 5.0, 0.01);
    opts.n_samples = 8;
    let rec = escape_time(&h, &opts).unwrap();
    assert_eq!(rec.censored_count(), 8);
    assert!(rec.min_escape.is_none());
    assert!(rec.samples.iter().all(|s| s.time == rec.t_cap));
}

fn kicked(rho: f64) -> (Series, EscapeOptions<f64>) {
    let h = &Series::linear_action(&[0.01, 0.016]) + &Series::sin_term(vec![1, 0], vec![2, 0], 1.0);
    let mut opts = EscapeOptions::new(rho, 30.0 / rho, 0.01);
    opts.n_samples = 12;
    opts.seed = 42;
    (h, opts)
}

#[test]
fn ballistic_bound_on_the_kicked_oscillator() {
    for rho in [0.1, 0.05] {
        let h = &Series::linear_action(&OMEGA) + &Series::sin_term(vec![1, 0], vec![2, 0], 1.0);
        let exact = 1.0 / (4.0 * std::f64::consts::PI * rho);
        assert!((ballistic_bound(&h, rho, rho / 2.0) - exact).abs() <= 1e-14 * exact);

        let (h, opts) = kicked(rho);
        let rec = escape_time(&h, &opts).unwrap();
        assert!(rec.escapes().count() > 0);
        for t in rec.escapes() {
            assert!(t >= exact * (rho / (rho + rho / 2.0)).powi(2) && t >= rec.ballistic_bound);
        }
    }
}

#[test]
fn escape_records_are_deterministic_and_consistent() {
    let (h, opts) = kicked(0.1);
    let a = escape_time(&h, &opts).unwrap();
    let b = escape_time(&h, &opts).unwrap();
    assert_eq!(a, b);
    let min = a.escapes().fold(f64::INFINITY, f64::min);
    assert_eq!(a.min_escape, Some(min));
    assert!(a.samples.iter().filter(|s| s.censored).all(|s| s.time == a.t_cap));

    let mut longer = opts;
    longer.t_cap *= 2.0;
    let c = escape_time(&h, &longer).unwrap();
    assert!(c.min_escape.unwrap() >= a.min_escape.unwrap());
    assert!(c.censored_count() <= a.censored_count());
}

#[test]
fn diverging_implicit_step_is_a_step_failure() {
    let h = Series::sin_term(vec![1, 0], vec![2, 0], 1000.0);
    let err = integrate(&h, &[0.1, 0.0], &[0.4, 0.0], 10.0, &IntegratorOptions::new(1.0)).unwrap_err();
    assert!(matches!(err, torstab::Error::StepFailure { .. }), "{err}");
    assert!(err.is_numerical());
}

//! Long-time integration of `θ' = ∂_I H`, `I' = −∂_θ H` and Monte-Carlo
//! escape times.
//!
//! The stepper is the implicit midpoint rule, solved by fixed-point sweeps;
//! it is symplectic for non-separable `H`. A fourth-order triple-jump
//! composition of midpoint steps is available as an option. Angles are
//! reduced to `[0, 1)` after every step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::{CompiledSeries, Evaluator, FourierTaylorSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    ImplicitMidpoint,
    /// Yoshida's triple jump of three midpoint steps (order 4).
    TripleJump,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ImplicitMidpoint => "implicit-midpoint",
            Method::TripleJump => "triple-jump-midpoint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions<T> {
    pub dt: T,
    pub method: Method,
    /// Fixed-point sweeps stop once the update is below
    /// `tolerance · max(1, ‖x‖_∞)`.
    pub tolerance: T,
    pub max_sweeps: usize,
    /// Record every `decimation`-th step (the last step is always kept).
    pub decimation: usize,
    /// Actions leaving the sup-norm ball of this radius end the run.
    pub action_radius: T,
    /// Relative energy drift allowed for a passing trajectory.
    pub energy_tolerance: T,
}

impl<T: Real> IntegratorOptions<T> {
    pub fn new(dt: T) -> Self {
        IntegratorOptions {
            dt,
            method: Method::ImplicitMidpoint,
            tolerance: T::lit(1e-13),
            max_sweeps: 50,
            decimation: 1,
            action_radius: T::infinity(),
            energy_tolerance: T::lit(1e-8),
        }
    }

    /// `min(0.01, 0.01/‖ω‖_∞)`.
    pub fn default_dt(omega_sup: T) -> T {
        let c = T::lit(0.01);
        if omega_sup > T::one() {
            c / omega_sup
        } else {
            c
        }
    }

    /// Chooses the decimation so that at most `10⁵` samples are kept over
    /// `t_end`.
    pub fn with_sample_cap(mut self, t_end: T) -> Self {
        let steps = (t_end.abs() / self.dt).ceil().to_usize().unwrap_or(usize::MAX);
        self.decimation = steps.div_ceil(100_000).max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time step {} must be positive",
                self.dt
            )));
        }
        if self.max_sweeps == 0 || self.decimation == 0 {
            return Err(Error::InvalidArgument("sweeps and decimation must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub t: T,
    pub theta: Vec<T>,
    pub action: Vec<T>,
    pub energy: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub samples: Vec<Sample<T>>,
    pub dt: T,
    pub method: Method,
    /// The run stopped early because the actions left the domain.
    pub domain_exit: bool,
    /// `max_t |H(x_t) − H(x_0)| / max(|H(x_0)|, 1)` over every step.
    pub max_energy_drift: T,
    pub energy_tolerance: T,
}

impl<T: Real> Trajectory<T> {
    pub fn passes(&self) -> bool {
        !self.domain_exit && self.max_energy_drift <= self.energy_tolerance
    }

    pub fn last(&self) -> &Sample<T> {
        self.samples.last().expect("trajectories are never empty")
    }
}

/// `sup_t ‖I(t) − I(0)‖_∞` over the recorded samples.
pub fn action_drift<T: Real>(traj: &Trajectory<T>) -> T {
    let Some(first) = traj.samples.first() else {
        return T::zero();
    };
    traj.samples
        .iter()
        .map(|s| sup_distance(&s.action, &first.action))
        .fold(T::zero(), T::max)
}

fn sup_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

fn reduce_angles<T: Real>(theta: &mut [T]) {
    for t in theta {
        *t = *t - t.floor();
        if *t >= T::one() {
            *t = T::zero();
        }
    }
}

/// Implicit-midpoint stepper with its scratch space.
struct Stepper<'a, T> {
    eval: Evaluator<'a, T>,
    dim: usize,
    tolerance: T,
    max_sweeps: usize,
    method: Method,
    mid: Vec<T>,
    next: Vec<T>,
    gt: Vec<T>,
    ga: Vec<T>,
}

impl<'a, T: Real> Stepper<'a, T> {
    fn new(h: &'a CompiledSeries<T>, opts: &IntegratorOptions<T>) -> Self {
        let d = h.dim();
        Stepper {
            eval: h.evaluator(),
            dim: d,
            tolerance: opts.tolerance,
            max_sweeps: opts.max_sweeps,
            method: opts.method,
            mid: vec![T::zero(); 2 * d],
            next: vec![T::zero(); 2 * d],
            gt: vec![T::zero(); d],
            ga: vec![T::zero(); d],
        }
    }

    fn energy(&mut self, state: &[T]) -> T {
        self.eval.value(&state[..self.dim], &state[self.dim..])
    }

    fn field_at_mid(&mut self) {
        let d = self.dim;
        self.eval
            .value_and_gradient(&self.mid[..d], &self.mid[d..], &mut self.gt, &mut self.ga);
    }

    fn midpoint(&mut self, state: &mut [T], h: T, t: T) -> Result<()> {
        let d = self.dim;
        let half = T::lit(0.5);
        self.mid.copy_from_slice(state);
        self.field_at_mid();
        for i in 0..d {
            self.next[i] = state[i] + h * self.ga[i];
            self.next[d + i] = state[d + i] - h * self.gt[i];
        }
        let scale = state.iter().fold(T::one(), |m, x| m.max(x.abs()));
        let mut update = T::infinity();
        let mut sweeps = 0;
        while sweeps < self.max_sweeps {
            sweeps += 1;
            for j in 0..2 * d {
                self.mid[j] = half * (state[j] + self.next[j]);
            }
            self.field_at_mid();
            update = T::zero();
            for i in 0..d {
                let th = state[i] + h * self.ga[i];
                let ac = state[d + i] - h * self.gt[i];
                update = update.max((th - self.next[i]).abs()).max((ac - self.next[d + i]).abs());
                self.next[i] = th;
                self.next[d + i] = ac;
            }
            if !self.next.iter().all(|x| x.is_finite()) {
                update = T::infinity();
                break;
            }
            if update <= self.tolerance * scale {
                state.copy_from_slice(&self.next);
                return Ok(());
            }
        }
        Err(Error::StepFailure {
            t: t.as_f64(),
            iterations: sweeps,
            update: update.as_f64(),
        })
    }

    fn step(&mut self, state: &mut [T], h: T, t: T) -> Result<()> {
        match self.method {
            Method::ImplicitMidpoint => self.midpoint(state, h, t)?,
            Method::TripleJump => {
                let cbrt2 = T::lit(2.0).cbrt();
                let g1 = T::one() / (T::lit(2.0) - cbrt2);
                let g0 = -cbrt2 * g1;
                self.midpoint(state, g1 * h, t)?;
                self.midpoint(state, g0 * h, t)?;
                self.midpoint(state, g1 * h, t)?;
            }
        }
        reduce_angles(&mut state[..self.dim]);
        Ok(())
    }
}

/// Step sizes covering `[0, t_end]` with steps of `dt` and a shortened last
/// step; negative `t_end` integrates backward.
fn step_plan<T: Real>(t_end: T, dt: T) -> (usize, T, T) {
    let ratio = t_end.abs() / dt;
    let n = (ratio - T::lit(1e-9)).ceil().to_usize().unwrap_or(0).max(1);
    let sign = if t_end < T::zero() { -T::one() } else { T::one() };
    let last = t_end.abs() - T::from_usize(n - 1).unwrap() * dt;
    (n, sign * dt, sign * last)
}

fn check_start<T: Real>(h: &CompiledSeries<T>, theta: &[T], action: &[T]) -> Result<()> {
    if theta.len() != h.dim() || action.len() != h.dim() {
        return Err(Error::InvalidArgument(format!(
            "start point dimension differs from d = {}",
            h.dim()
        )));
    }
    Ok(())
}

/// Integrates from `(θ₀, I₀)` over `[0, t_end]` (backward for `t_end < 0`).
pub fn integrate<T: Real>(
    hamiltonian: &FourierTaylorSeries<T>,
    theta0: &[T],
    action0: &[T],
    t_end: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    let compiled = CompiledSeries::new(hamiltonian)?;
    integrate_compiled(&compiled, theta0, action0, t_end, opts)
}

pub fn integrate_compiled<T: Real>(
    h: &CompiledSeries<T>,
    theta0: &[T],
    action0: &[T],
    t_end: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    opts.validate()?;
    check_start(h, theta0, action0)?;
    let d = h.dim();
    let mut stepper = Stepper::new(h, opts);
    let mut state: Vec<T> = theta0.iter().chain(action0).copied().collect();
    reduce_angles(&mut state[..d]);
    let e0 = stepper.energy(&state);
    let e_scale = e0.abs().max(T::one());
    let record = |t: T, state: &[T], energy: T| Sample {
        t,
        theta: state[..d].to_vec(),
        action: state[d..].to_vec(),
        energy,
    };
    let mut samples = vec![record(T::zero(), &state, e0)];
    let (n, h_step, h_last) = step_plan(t_end, opts.dt);
    let mut max_drift = T::zero();
    let mut domain_exit = false;
    for i in 1..=n {
        let h_i = if i == n { h_last } else { h_step };
        let t_prev = h_step * T::from_usize(i - 1).unwrap();
        stepper.step(&mut state, h_i, t_prev)?;
        let t = if i == n {
            t_end
        } else {
            h_step * T::from_usize(i).unwrap()
        };
        let e = stepper.energy(&state);
        max_drift = max_drift.max((e - e0).abs() / e_scale);
        let exit = state[d..].iter().any(|x| !(x.abs() <= opts.action_radius));
        if i % opts.decimation == 0 || i == n || exit {
            samples.push(record(t, &state, e));
        }
        if exit {
            domain_exit = true;
            break;
        }
    }
    Ok(Trajectory {
        samples,
        dt: opts.dt,
        method: opts.method,
        domain_exit,
        max_energy_drift: max_drift,
        energy_tolerance: opts.energy_tolerance,
    })
}

/// CSV `t,theta_1..theta_d,I_1..I_d,energy`.
pub fn write_trajectory_csv<T: Real, W: Write>(traj: &Trajectory<T>, mut out: W) -> Result<()> {
    let d = traj.samples.first().map_or(0, |s| s.theta.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("theta_{i}")));
    header.extend((1..=d).map(|i| format!("I_{i}")));
    header.push("energy".into());
    writeln!(out, "{}", header.join(","))?;
    for s in &traj.samples {
        let mut row = vec![format!("{:e}", s.t)];
        row.extend(s.theta.iter().chain(&s.action).map(|v| format!("{v:e}")));
        row.push(format!("{:e}", s.energy));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// `threshold / Σ |c| 2π|k|_1 r^{|m|_1}`: no trajectory whose actions stay
/// in the ball of radius `r` can drift by `threshold` sooner.
pub fn ballistic_bound<T: Real>(hamiltonian: &FourierTaylorSeries<T>, radius: T, threshold: T) -> T {
    let sup: T = hamiltonian
        .iter()
        .map(|(md, c)| {
            c.norm() * T::two_pi() * T::from_u64(md.fourier_order()).unwrap() * radius.powi(md.taylor_order() as i32)
        })
        .fold(T::zero(), |a, b| a + b);
    if sup.is_zero() {
        T::infinity()
    } else {
        threshold / sup
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EscapeOptions<T> {
    pub rho: T,
    /// Drift `‖I(t) − I₀‖_∞` that counts as escape.
    pub threshold: T,
    pub t_cap: T,
    pub n_samples: usize,
    pub seed: u64,
    pub integrator: IntegratorOptions<T>,
    /// Relative enlargement of the tube radius `ρ + threshold` used for the
    /// ballistic majorant.
    pub ballistic_margin: T,
}

impl<T: Real> EscapeOptions<T> {
    /// Threshold `ρ/2`, 50 samples, seed 0, the given step.
    pub fn new(rho: T, t_cap: T, dt: T) -> Self {
        EscapeOptions {
            rho,
            threshold: rho / T::lit(2.0),
            t_cap,
            n_samples: 50,
            seed: 0,
            integrator: IntegratorOptions::new(dt),
            ballistic_margin: T::zero(),
        }
    }

    /// Threshold `2ρ`, the convention of the escape-time exponent comparison.
    pub fn with_wide_threshold(mut self) -> Self {
        self.threshold = self.rho * T::lit(2.0);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeSample<T> {
    pub theta0: Vec<T>,
    pub action0: Vec<T>,
    /// Escape time, or `t_cap` when censored.
    pub time: T,
    pub censored: bool,
    pub max_drift: T,
    pub max_energy_drift: T,
    pub domain_exit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeRecord<T> {
    pub rho: T,
    pub threshold: T,
    pub n_samples: usize,
    pub t_cap: T,
    pub seed: u64,
    pub samples: Vec<EscapeSample<T>>,
    /// Smallest uncensored escape time; `None` when every sample is censored.
    pub min_escape: Option<T>,
    /// Largest drift among censored samples.
    pub max_drift_at_cap: T,
    pub max_energy_drift: T,
    pub ballistic_bound: T,
}

impl<T: Real> EscapeRecord<T> {
    pub fn censored_count(&self) -> usize {
        self.samples.iter().filter(|s| s.censored).count()
    }

    pub fn censored_fraction(&self) -> T {
        T::from_usize(self.censored_count()).unwrap() / T::from_usize(self.n_samples.max(1)).unwrap()
    }

    pub fn escapes(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().filter(|s| !s.censored).map(|s| s.time)
    }

    pub fn max_drift(&self) -> T {
        self.samples.iter().map(|s| s.max_drift).fold(T::zero(), T::max)
    }
}

/// Initial condition `i` of a seeded run: uniform on `T^d × [−ρ, ρ]^d`, from
/// an independent ChaCha stream per sample.
pub fn initial_condition<T: Real>(seed: u64, index: usize, dim: usize, rho: T) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let theta = (0..dim).map(|_| T::lit(rng.gen::<f64>())).collect();
    let action = (0..dim).map(|_| rho * T::lit(rng.gen_range(-1.0..=1.0))).collect();
    (theta, action)
}

fn run_sample<T: Real>(
    h: &CompiledSeries<T>,
    theta0: Vec<T>,
    action0: Vec<T>,
    opts: &EscapeOptions<T>,
) -> Result<EscapeSample<T>> {
    let io = &opts.integrator;
    let d = h.dim();
    let mut stepper = Stepper::new(h, io);
    let mut state: Vec<T> = theta0.iter().chain(&action0).copied().collect();
    let e0 = stepper.energy(&state);
    let e_scale = e0.abs().max(T::one());
    let (n, h_step, h_last) = step_plan(opts.t_cap, io.dt);
    let mut max_drift = T::zero();
    let mut max_energy = T::zero();
    let mut outcome = None;
    let mut domain_exit = false;
    for i in 1..=n {
        let h_i = if i == n { h_last } else { h_step };
        stepper.step(&mut state, h_i, h_step * T::from_usize(i - 1).unwrap())?;
        let e = stepper.energy(&state);
        max_energy = max_energy.max((e - e0).abs() / e_scale);
        let drift = sup_distance(&state[d..], &action0);
        max_drift = max_drift.max(drift);
        if drift >= opts.threshold {
            outcome = Some(if i == n {
                opts.t_cap
            } else {
                h_step * T::from_usize(i).unwrap()
            });
            break;
        }
        if state[d..].iter().any(|x| !(x.abs() <= io.action_radius)) {
            domain_exit = true;
            break;
        }
    }
    Ok(EscapeSample {
        theta0,
        action0,
        time: outcome.unwrap_or(opts.t_cap),
        censored: outcome.is_none(),
        max_drift,
        max_energy_drift: max_energy,
        domain_exit,
    })
}

/// Samples escape times from the tube `T^d × B_ρ`.
///
/// Every uncensored time is checked against the ballistic bound on the ball
/// of radius `(ρ + threshold)(1 + margin)`; a violation is an integration
/// fault. Results do not depend on the number of worker threads.
pub fn escape_time<T: Real>(hamiltonian: &FourierTaylorSeries<T>, opts: &EscapeOptions<T>) -> Result<EscapeRecord<T>> {
    if !(opts.threshold > T::zero()) || !(opts.rho > T::zero()) || !(opts.t_cap > T::zero()) {
        return Err(Error::InvalidArgument(
            "rho, threshold and t_cap must be positive".into(),
        ));
    }
    if opts.n_samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    opts.integrator.validate()?;
    let compiled = CompiledSeries::new(hamiltonian)?;
    let d = compiled.dim();
    let radius = (opts.rho + opts.threshold) * (T::one() + opts.ballistic_margin);
    let bound = ballistic_bound(hamiltonian, radius, opts.threshold);
    let samples = (0..opts.n_samples)
        .into_par_iter()
        .map(|i| {
            let (theta0, action0) = initial_condition(opts.seed, i, d, opts.rho);
            let s = run_sample(&compiled, theta0, action0, opts).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })?;
            if !s.censored && s.time < bound {
                return Err(Error::Sample {
                    index: i,
                    source: Box::new(Error::BallisticViolation {
                        time: s.time.as_f64(),
                        bound: bound.as_f64(),
                    }),
                });
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let min_escape = samples.iter().filter(|s| !s.censored).map(|s| s.time).reduce(T::min);
    let max_drift_at_cap = samples
        .iter()
        .filter(|s| s.censored)
        .map(|s| s.max_drift)
        .fold(T::zero(), T::max);
    let max_energy_drift = samples.iter().map(|s| s.max_energy_drift).fold(T::zero(), T::max);
    Ok(EscapeRecord {
        rho: opts.rho,
        threshold: opts.threshold,
        n_samples: opts.n_samples,
        t_cap: opts.t_cap,
        seed: opts.seed,
        samples,
        min_escape,
        max_drift_at_cap,
        max_energy_drift,
        ballistic_bound: bound,
    })
}

/// CSV `sample,escape_time,censored,max_drift`.
pub fn write_escape_csv<T: Real, W: Write>(record: &EscapeRecord<T>, mut out: W) -> Result<()> {
    writeln!(out, "sample,escape_time,censored,max_drift")?;
    for (i, s) in record.samples.iter().enumerate() {
        writeln!(out, "{i},{:e},{},{:e}", s.time, u8::from(s.censored), s.max_drift)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    type S = FourierTaylorSeries<f64>;

    #[test]
    fn linear_flow_is_exact() {
        let h = S::linear_action(&[1.0, 1.618_033_988_7]);
        let opts = IntegratorOptions::new(0.01);
        let tr = integrate(&h, &[0.1, 0.2], &[0.3, -0.1], 10.0, &opts).unwrap();
        let last = tr.last();
        assert_eq!(last.action, vec![0.3, -0.1]);
        let expected = (0.2f64 + 16.180_339_887).rem_euclid(1.0);
        assert!((last.theta[1] - expected).abs() < 1e-10);
        assert_eq!(action_drift(&tr), 0.0);
        assert!(tr.passes());
    }

    #[test]
    fn step_plan_lands_on_t_end() {
        let (n, h, last) = step_plan(1.0f64, 0.3);
        assert_eq!(n, 4);
        assert_eq!(h, 0.3);
        assert!((last - 0.1).abs() < 1e-15);
        let (n, _, last) = step_plan(-1.0f64, 0.25);
        assert_eq!(n, 4);
        assert_eq!(last, -0.25);
    }

    #[test]
    fn escape_record_is_seeded() {
        let h = &S::linear_action(&[0.0, 1.0]) + &S::sin_term(vec![1, 0], vec![2, 0], 1.0);
        let mut opts = EscapeOptions::new(0.3, 20.0, 0.01);
        opts.n_samples = 8;
        opts.seed = 7;
        let a = escape_time(&h, &opts).unwrap();
        let b = escape_time(&h, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 8);
    }

    #[test]
    fn integrable_samples_are_censored() {
        let h = S::linear_action(&[1.0, 1.5]);
        let mut opts = EscapeOptions::new(0.1, 5.0, 0.01);
        opts.n_samples = 4;
        let r = escape_time(&h, &opts).unwrap();
        assert_eq!(r.censored_count(), 4);
        assert!(r.min_escape.is_none());
        assert!(r.samples.iter().all(|s| s.time == 5.0));
        assert_eq!(r.ballistic_bound, f64::INFINITY);
    }
}

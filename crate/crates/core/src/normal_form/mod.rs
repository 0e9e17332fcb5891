//! Resonant normal form by iterated Lie-series averaging.
//!
//! Starting from `H = ω·I + f`, each iteration takes the non-resonant part
//! of the current perturbation (modes `0 < |k|_1 ≤ K`), solves the
//! homological equation `ω·∂_θ χ = f_nr`, replaces `H` by
//! `H ∘ Φ^1_χ = Σ_n ad_χ^n H / n!` (with `ad_χ F = {F, χ}`) and moves the
//! angle averages into the integrable part. For a non-resonant `ω` every
//! retained low mode is removable, so `h` only ever gains `k = 0` terms.
//!
//! The outcome is certified numerically against the normal form lemma's
//! conclusions: the contraction `|||f*|||_{σ/6,ρ/2} ≤ e^{−Kσ/6} |||f|||_{σ,ρ}`
//! and the closeness of the transformation to the identity,
//! `|Δ J|_2 / ρ ≤ 1/(32ξ)` and `‖Δ φ‖_∞ / σ ≤ 1/(24ξ)`. Intermediate domains
//! of this scheme are not those of the lemma's original proof; only the end
//! inequalities are checked.

mod flow;

pub use flow::{symplectic_defect, Direction, TransformFlow};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::frequency::{is_completely_nonresonant, EnumerationBudget, Frequency};
use crate::scalar::Real;
use crate::series::{AnalyticityWidths, FourierTaylorSeries, Mode};

/// Working-precision cutoffs applied after every bracket of a Lie series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkingPrecision {
    pub kmax: Option<u64>,
    pub mmax: Option<u32>,
}

impl WorkingPrecision {
    pub const EXACT: WorkingPrecision = WorkingPrecision { kmax: None, mmax: None };
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormParams<T> {
    pub alpha: T,
    pub cutoff: u32,
    pub widths: AnalyticityWidths<T>,
    pub xi: T,
    /// Hessian bound of the integrable part; zero for `h = ω·I`.
    pub hessian_bound: T,
    pub lie_order: usize,
    pub precision: WorkingPrecision,
    pub divisor_floor: T,
    /// Iteration stops once the non-resonant part falls below this fraction
    /// of `|||f|||_{σ,ρ}`.
    pub residue_tolerance: T,
    /// Lattice budget for the complete non-resonance check.
    pub budget: EnumerationBudget,
}

impl<T: Real> NormalFormParams<T> {
    /// Validates `Kσ ≥ 6`, `ξ > 1` and, when `M > 0`, `ρ ≤ α/(2ξMK)`.
    ///
    /// Defaults: Lie order 6, working precision `|k|_1 ≤ 4K`, `|m|_1 ≤ 16`,
    /// divisor floor `1e-12`, residue tolerance `1e-13`.
    pub fn new(alpha: T, cutoff: u32, widths: AnalyticityWidths<T>, xi: T, hessian_bound: T) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::Parameters(format!("alpha = {alpha} must be positive")));
        }
        if cutoff < 1 {
            return Err(Error::Parameters("K must be at least 1".into()));
        }
        if !(xi > T::one()) {
            return Err(Error::Parameters(format!("xi = {xi} must exceed 1")));
        }
        let k = T::from_u32(cutoff).unwrap();
        if k * widths.sigma < T::lit(6.0) {
            return Err(Error::Parameters(format!("K sigma = {} is below 6", k * widths.sigma)));
        }
        if hessian_bound < T::zero() {
            return Err(Error::Parameters("Hessian bound must be non-negative".into()));
        }
        if hessian_bound > T::zero() {
            let cap = alpha / (T::lit(2.0) * xi * hessian_bound * k);
            if widths.rho > cap {
                return Err(Error::Parameters(format!(
                    "rho = {} exceeds alpha/(2 xi M K) = {cap}",
                    widths.rho
                )));
            }
        }
        Ok(NormalFormParams {
            alpha,
            cutoff,
            widths,
            xi,
            hessian_bound,
            lie_order: 6,
            precision: WorkingPrecision {
                kmax: Some(4 * u64::from(cutoff)),
                mmax: Some(16),
            },
            divisor_floor: T::lit(1e-12),
            residue_tolerance: T::lit(1e-13),
            budget: EnumerationBudget::default(),
        })
    }

    /// Right-hand side of the smallness condition, `αρ / (256 ξ K)`.
    pub fn smallness_threshold(&self) -> T {
        self.alpha * self.widths.rho / (T::lit(256.0) * self.xi * T::from_u32(self.cutoff).unwrap())
    }

    /// The lemma's inner domain `(σ/6, ρ/2)`.
    pub fn inner_widths(&self) -> AnalyticityWidths<T> {
        AnalyticityWidths {
            sigma: self.widths.sigma / T::lit(6.0),
            rho: self.widths.rho / T::lit(2.0),
        }
    }

    /// `e^{−Kσ/6}`.
    pub fn contraction_target(&self) -> T {
        (-T::from_u32(self.cutoff).unwrap() * self.widths.sigma / T::lit(6.0)).exp()
    }

    fn is_nonresonant_mode(&self, md: &Mode) -> bool {
        let n = md.fourier_order();
        n > 0 && n <= u64::from(self.cutoff)
    }
}

#[derive(Clone, Debug)]
pub struct NormalFormResult<T> {
    pub h: FourierTaylorSeries<T>,
    pub f_star: FourierTaylorSeries<T>,
    pub generators: Vec<FourierTaylorSeries<T>>,
    /// `|||f*|||_{σ/6,ρ/2} / |||f|||_{σ,ρ}`, with truncation losses and Lie
    /// tails added to the numerator.
    pub contraction: T,
    pub contraction_target: T,
    pub f_norm: T,
    pub f_star_norm: T,
    /// Weighted norm of everything dropped by working-precision truncation
    /// and of the last retained Lie brackets, on the inner domain.
    pub loss_norm: T,
    pub action_shift_bound: T,
    pub angle_shift_bound: T,
    /// `8K|||f|||/(αρ)`, the lemma's a priori bound on the action ratio.
    pub a_priori_action_ratio: T,
    /// `32K|||f|||/(3αρ)`, the a priori bound on the angle ratio.
    pub a_priori_angle_ratio: T,
    /// Non-resonant part left in `f*`, relative to `|||f|||_{σ,ρ}`.
    pub nonresonant_residue: T,
    pub iterations: usize,
    pub certified: bool,
    pub diagnostics: Vec<String>,
}

impl<T: Real> NormalFormResult<T> {
    pub fn action_ratio(&self, params: &NormalFormParams<T>) -> T {
        self.action_shift_bound / params.widths.rho
    }

    pub fn angle_ratio(&self, params: &NormalFormParams<T>) -> T {
        self.angle_shift_bound / params.widths.sigma
    }

    /// `h + f*`, the transformed Hamiltonian `H ∘ Ψ` up to the reported losses.
    pub fn transformed(&self) -> FourierTaylorSeries<T> {
        &self.h + &self.f_star
    }
}

/// Solves `ω·∂_θ χ = f_nr` mode by mode: `χ_{k,m} = f_{k,m} / (2πi ω·k)`.
pub fn solve_homological<T: Real>(
    f_nr: &FourierTaylorSeries<T>,
    omega: &Frequency<T>,
    divisor_floor: T,
) -> Result<FourierTaylorSeries<T>> {
    let mut terms = Vec::with_capacity(f_nr.len());
    for (md, c) in f_nr.iter() {
        if md.is_mean() {
            return Err(Error::MeanNotRemoved { m: md.m.clone() });
        }
        let dot = omega.dot(&md.k);
        if dot.abs() < divisor_floor {
            return Err(Error::SmallDivisor {
                k: md.k.clone(),
                divisor: dot.abs().as_f64(),
                floor: divisor_floor.as_f64(),
            });
        }
        let divisor = Complex::new(T::zero(), T::two_pi() * dot);
        terms.push((md.k.clone(), md.m.clone(), *c / divisor));
    }
    FourierTaylorSeries::from_terms(f_nr.dim(), terms)
}

/// `ω·∂_θ χ − f_nr`, which vanishes for an exact homological solution.
pub fn homological_residual<T: Real>(
    chi: &FourierTaylorSeries<T>,
    f_nr: &FourierTaylorSeries<T>,
    omega: &Frequency<T>,
) -> FourierTaylorSeries<T> {
    &chi.lie_derivative_linear(omega.as_slice()) - f_nr
}

#[derive(Clone, Debug)]
pub struct LieSeries<T> {
    /// `Σ_{n ≤ order} ad_χ^n H / n!`, truncated to working precision.
    pub series: FourierTaylorSeries<T>,
    /// Weighted norm of the last retained bracket (heuristic tail size).
    pub tail_norm: T,
    /// Everything removed by working-precision truncation.
    pub dropped: FourierTaylorSeries<T>,
    pub orders_used: usize,
}

/// `H ∘ Φ^1_χ` by the truncated Lie series.
///
/// Aborts with [`Error::Divergence`] when a bracket grows by more than `10³`
/// over its predecessor in the norm at `widths`.
pub fn lie_transform<T: Real>(
    h: &FourierTaylorSeries<T>,
    chi: &FourierTaylorSeries<T>,
    order: usize,
    precision: WorkingPrecision,
    widths: AnalyticityWidths<T>,
) -> Result<LieSeries<T>> {
    lie_transform_until(h, chi, order, precision, widths, T::zero())
}

/// As [`lie_transform`], stopping early once a bracket of order two or more
/// has norm at most `tail_floor` at `widths`; that bracket is reported as the tail.
pub fn lie_transform_until<T: Real>(
    h: &FourierTaylorSeries<T>,
    chi: &FourierTaylorSeries<T>,
    order: usize,
    precision: WorkingPrecision,
    widths: AnalyticityWidths<T>,
    tail_floor: T,
) -> Result<LieSeries<T>> {
    if order < 1 {
        return Err(Error::InvalidArgument("Lie series order must be at least 1".into()));
    }
    let mut total = h.clone();
    let mut dropped = FourierTaylorSeries::zero(h.dim());
    let mut term = h.clone();
    let mut prev_norm = term.weighted_norm(widths);
    let mut tail_norm = T::zero();
    let mut orders_used = 0;
    if chi.is_empty() {
        return Ok(LieSeries {
            series: total,
            tail_norm,
            dropped,
            orders_used,
        });
    }
    for n in 1..=order {
        let next = term.poisson_bracket(chi).scale(T::one() / T::from_usize(n).unwrap());
        let cut = next.truncate(precision.kmax, precision.mmax);
        if cut.dropped_mass > T::zero() {
            let (_, removed) = next.partition(|md| {
                precision.kmax.map_or(true, |kx| md.fourier_order() <= kx)
                    && precision.mmax.map_or(true, |mx| md.taylor_order() <= mx)
            });
            dropped = &dropped + &removed;
        }
        term = cut.series;
        orders_used = n;
        let norm = term.weighted_norm(widths);
        if prev_norm > T::zero() && norm > T::lit(1e3) * prev_norm {
            return Err(Error::Divergence {
                order: n,
                growth: (norm / prev_norm).as_f64(),
            });
        }
        tail_norm = norm;
        if term.is_empty() || (n > 1 && norm <= tail_floor) {
            break;
        }
        total = &total + &term;
        prev_norm = norm;
    }
    Ok(LieSeries {
        series: total,
        tail_norm,
        dropped,
        orders_used,
    })
}

/// Sup-norm over components of the majorants of `∂_θ χ` (as a Euclidean
/// vector) and `∂_I χ`, at `widths`.
fn generator_shifts<T: Real>(chi: &FourierTaylorSeries<T>, widths: AnalyticityWidths<T>) -> (T, T) {
    let d = chi.dim();
    let action = (0..d)
        .map(|i| chi.partial_theta(i).weighted_norm(widths).powi(2))
        .sum::<T>()
        .sqrt();
    let angle = (0..d)
        .map(|i| chi.partial_action(i).weighted_norm(widths))
        .fold(T::zero(), T::max);
    (action, angle)
}

/// Brings `H = ω·I + f` into resonant normal form with respect to modes
/// `0 < |k|_1 ≤ K`.
///
/// Preconditions: the smallness condition `|||f|||_{σ,ρ} ≤ αρ/(256ξK)` and
/// `(α, K)` complete non-resonance of `ω`. A run that does not meet every
/// certificate inequality within `max_iter` iterations is returned with
/// `certified = false` and the reasons in `diagnostics`.
pub fn resonant_normal_form<T: Real>(
    hamiltonian: &FourierTaylorSeries<T>,
    omega: &Frequency<T>,
    params: &NormalFormParams<T>,
    max_iter: usize,
) -> Result<NormalFormResult<T>> {
    let dim = hamiltonian.dim();
    if omega.dim() != dim {
        return Err(Error::InvalidArgument(format!(
            "frequency has d = {}, Hamiltonian has d = {dim}",
            omega.dim()
        )));
    }
    let linear = FourierTaylorSeries::linear_action(omega.as_slice());
    let f = hamiltonian - &linear;
    let f_norm = f.weighted_norm(params.widths);
    let threshold = params.smallness_threshold();
    if f_norm > threshold {
        return Err(Error::Smallness {
            lhs: f_norm.as_f64(),
            rhs: threshold.as_f64(),
        });
    }
    if !is_completely_nonresonant(omega, params.alpha, params.cutoff, params.budget)? {
        return Err(Error::Parameters(format!(
            "omega is not (alpha = {}, K = {}) completely non-resonant",
            params.alpha, params.cutoff
        )));
    }

    let inner = params.inner_widths();
    // Generators are measured on a domain that leaves room for the flow.
    let shift_widths = AnalyticityWidths {
        sigma: params.widths.sigma / T::lit(3.0),
        rho: params.widths.rho,
    };
    let (mean, mut g) = f.partition(Mode::is_mean);
    let mut h = &linear + &mean;
    let mut generators = Vec::new();
    let mut loss_norm = T::zero();
    let mut action_shift = T::zero();
    let mut angle_shift = T::zero();
    let mut iterations = 0;
    let mut residue;
    let floor_norm = f_norm.max(T::min_positive_value());
    // Brackets this small cannot affect the contraction certificate; they
    // are still charged to the loss.
    let tail_floor = T::lit(1e-6) * params.contraction_target() * f_norm;
    loop {
        let f_nr = g.filter(|md| params.is_nonresonant_mode(md));
        residue = f_nr.weighted_norm(params.widths) / floor_norm;
        if f_nr.is_empty() || residue <= params.residue_tolerance || iterations >= max_iter {
            break;
        }
        let chi = solve_homological(&f_nr, omega, params.divisor_floor)?.real_part();
        let lie = lie_transform_until(
            &(&h + &g),
            &chi,
            params.lie_order,
            params.precision,
            params.widths,
            tail_floor,
        )?;
        loss_norm = loss_norm + lie.dropped.weighted_norm(inner) + lie.tail_norm;
        let (shift_a, shift_phi) = generator_shifts(&chi, shift_widths);
        action_shift = action_shift + shift_a;
        angle_shift = angle_shift + shift_phi;
        let (new_mean, new_g) = lie.series.real_part().partition(Mode::is_mean);
        h = new_mean;
        g = new_g;
        generators.push(chi);
        iterations += 1;
    }

    let f_star = g;
    let f_star_norm = f_star.weighted_norm(inner);
    let contraction = if f_norm.is_zero() {
        T::zero()
    } else {
        (f_star_norm + loss_norm) / f_norm
    };
    let target = params.contraction_target();
    let kf = T::from_u32(params.cutoff).unwrap() * f_norm / (params.alpha * params.widths.rho);
    let a_priori_action_ratio = T::lit(8.0) * kf;
    let a_priori_angle_ratio = T::lit(32.0) / T::lit(3.0) * kf;

    let mut diagnostics = Vec::new();
    if residue > params.residue_tolerance {
        diagnostics.push(format!(
            "non-resonant residue {residue:e} above tolerance after {iterations} iterations"
        ));
    }
    if contraction > target {
        diagnostics.push(format!(
            "contraction {contraction:e} exceeds e^(-K sigma/6) = {target:e}"
        ));
    }
    let action_ratio = action_shift / params.widths.rho;
    let angle_ratio = angle_shift / params.widths.sigma;
    let action_cap = T::one() / (T::lit(32.0) * params.xi);
    let angle_cap = T::one() / (T::lit(24.0) * params.xi);
    if action_ratio > action_cap {
        diagnostics.push(format!("action shift ratio {action_ratio:e} exceeds 1/(32 xi)"));
    }
    if angle_ratio > angle_cap {
        diagnostics.push(format!("angle shift ratio {angle_ratio:e} exceeds 1/(24 xi)"));
    }
    Ok(NormalFormResult {
        certified: diagnostics.is_empty(),
        h,
        f_star,
        generators,
        contraction,
        contraction_target: target,
        f_norm,
        f_star_norm,
        loss_norm,
        action_shift_bound: action_shift,
        angle_shift_bound: angle_shift,
        a_priori_action_ratio,
        a_priori_angle_ratio,
        nonresonant_residue: residue,
        iterations,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::golden_frequency;

    type S = FourierTaylorSeries<f64>;

    fn omega() -> Frequency<f64> {
        golden_frequency(2).unwrap()
    }

    #[test]
    fn cosine_generator_is_scaled_sine() {
        let k = vec![2, -1];
        let w = omega();
        let f = S::cos_term(k.clone(), vec![0, 0], 1.0);
        let chi = solve_homological(&f, &w, 1e-12).unwrap();
        let dot = w.dot(&k);
        let expected = S::sin_term(k, vec![0, 0], 1.0 / (std::f64::consts::TAU * dot));
        assert!((&chi - &expected).mass() < 1e-15);
        assert!(homological_residual(&chi, &f, &w).mass() <= 1e-13 * f.mass());
    }

    #[test]
    fn action_dependent_term() {
        let w = omega();
        let f = S::cos_term(vec![1, 0], vec![2, 0], 1.0);
        let chi = solve_homological(&f, &w, 1e-12).unwrap();
        let expected = S::sin_term(vec![1, 0], vec![2, 0], 1.0 / std::f64::consts::TAU);
        assert!((&chi - &expected).mass() < 1e-16);
    }

    #[test]
    fn mean_term_is_rejected() {
        let f = &S::cos_term(vec![1, 0], vec![0, 0], 1.0) + &S::action_monomial(vec![1, 1]);
        assert!(matches!(
            solve_homological(&f, &omega(), 1e-12),
            Err(Error::MeanNotRemoved { .. })
        ));
    }

    #[test]
    fn resonant_mode_hits_the_floor() {
        let w = Frequency::new(vec![1.0, 1.0]).unwrap();
        let f = S::cos_term(vec![1, -1], vec![0, 0], 1.0);
        assert!(matches!(
            solve_homological(&f, &w, 1e-12),
            Err(Error::SmallDivisor { .. })
        ));
    }

    #[test]
    fn identity_generator_leaves_h_alone() {
        let h = &S::linear_action(&[1.0, 1.5]) + &S::cos_term(vec![1, 1], vec![2, 0], 0.1);
        let w = AnalyticityWidths::new(1.0, 1.0).unwrap();
        let l = lie_transform(&h, &S::zero(2), 6, WorkingPrecision::EXACT, w).unwrap();
        assert_eq!(l.series, h);
    }

    #[test]
    fn first_order_lie_series_of_linear_flow() {
        let w = omega();
        let lin = S::linear_action(w.as_slice());
        let chi = &S::sin_term(vec![1, -1], vec![0, 0], 0.01) + &S::cos_term(vec![0, 1], vec![0, 0], 0.02);
        let widths = AnalyticityWidths::new(1.0, 1.0).unwrap();
        let l = lie_transform(&lin, &chi, 1, WorkingPrecision::EXACT, widths).unwrap();
        let expected = &lin - &chi.lie_derivative_linear(w.as_slice());
        assert!((&l.series - &expected).mass() < 1e-16);
    }

    #[test]
    fn divergence_is_reported() {
        let h = S::action_monomial(vec![3, 0]);
        let chi = S::cos_term(vec![5, 0], vec![0, 0], 1e3);
        let widths = AnalyticityWidths::new(1.0, 1.0).unwrap();
        let err = lie_transform(&h, &chi, 6, WorkingPrecision::EXACT, widths).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn zero_perturbation_is_trivially_normal() {
        let w = omega();
        let h = S::linear_action(w.as_slice());
        let p = NormalFormParams::new(0.2, 5, AnalyticityWidths::new(1.2, 1.0).unwrap(), 2.0, 0.0).unwrap();
        let r = resonant_normal_form(&h, &w, &p, 10).unwrap();
        assert_eq!(r.h, h);
        assert!(r.f_star.is_empty());
        assert_eq!(r.contraction, 0.0);
        assert!(r.generators.is_empty());
        assert!(r.certified);
    }

    #[test]
    fn parameter_validation() {
        let w = AnalyticityWidths::new(1.0, 1.0).unwrap();
        assert!(NormalFormParams::new(0.2, 5, w, 2.0, 0.0).is_err()); // K sigma = 5
        assert!(NormalFormParams::new(0.2, 6, w, 1.0, 0.0).is_err());
        assert!(NormalFormParams::new(0.2, 6, w, 2.0, 1.0).is_err()); // rho > alpha/(2 xi M K)
        assert!(NormalFormParams::new(0.2, 6, w, 2.0, 1e-3).is_ok());
    }
}

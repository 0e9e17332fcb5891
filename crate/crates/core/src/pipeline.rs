//! The stability argument as a computation: Taylor split of the
//! perturbation, smoothing of the polynomial coefficients, parameter
//! schedule, normal form, remainder bounds and predicted times.
//!
//! With `a = 1/(τ+1)` and `b = 6(aℓ+1)` the schedule is
//!
//! ```text
//! ρ̃ = (γ / (256 ξ C₀ C_B max‖a_m‖))^{1/(a(τ+1))},
//! K = ⌊(ρ̃/ρ)^a⌋,  s = (ρ/ρ̃)^a |b log ρ|,  α = γ / K^τ,
//! ```
//!
//! and the stability time is `t* = 1/(6 C₆ ρ^{1+a(ℓ−1)} |b log ρ|^{ℓ−1})`.
//! All `C` constants are configuration (default 1); predictions are shapes
//! times configured constants.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::{KeyValueWriter, KeyValues};
use crate::error::{Error, Result};
use crate::frequency::{ball_size, diophantine_constant, EnumerationBudget, Frequency};
use crate::normal_form::{resonant_normal_form, NormalFormParams, NormalFormResult, WorkingPrecision};
use crate::series::{AnalyticityWidths, FourierTaylorSeries};
use crate::smoothing::{holder_norm_majorant, smooth, HolderClass};

type Series = FourierTaylorSeries<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub c_a: f64,
    pub c_b: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub xi: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            c_a: 1.0,
            c_b: 1.0,
            c0: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            c5: 1.0,
            c6: 1.0,
            xi: 2.0,
        }
    }
}

const CONSTANT_KEYS: [&str; 10] = ["C_A", "C_B", "C_0", "C_1", "C_2", "C_3", "C_4", "C_5", "C_6", "xi"];

impl BoundConstants {
    fn slots(&mut self) -> [&mut f64; 10] {
        [
            &mut self.c_a,
            &mut self.c_b,
            &mut self.c0,
            &mut self.c1,
            &mut self.c2,
            &mut self.c3,
            &mut self.c4,
            &mut self.c5,
            &mut self.c6,
            &mut self.xi,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let mut copy = *self;
        for (name, v) in CONSTANT_KEYS.iter().zip(copy.slots()) {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::Parameters(format!(
                    "constant {name} = {v} must be positive and finite"
                )));
            }
        }
        if self.xi <= 1.0 {
            return Err(Error::Parameters(format!("xi = {} must exceed 1", self.xi)));
        }
        Ok(())
    }

    /// Reads `C_A, C_B, C_0 … C_6, xi` from key-value text; missing keys
    /// keep their default.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = BoundConstants::default();
        for (name, slot) in CONSTANT_KEYS.iter().zip(c.slots()) {
            if let Some(v) = kv.get::<f64>(name)? {
                *slot = v;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&CONSTANT_KEYS)?;
        Self::from_key_values(&kv)
    }

    pub fn to_text(&self) -> String {
        let mut copy = *self;
        let mut w = KeyValueWriter::new();
        for (name, v) in CONSTANT_KEYS.iter().zip(copy.slots()) {
            w.entry(name, *v);
        }
        w.finish()
    }
}

/// Empirical calibration of a constant: the largest observed ratio of a
/// measured quantity to its bound shape over a probe set.
pub fn calibrate_constant(samples: &[(f64, f64)], shape: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("calibration needs at least one probe".into()));
    }
    let c = samples
        .iter()
        .map(|&(rho, observed)| observed / shape(rho))
        .fold(0.0, f64::max);
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Parameters(format!(
            "calibrated constant {c} is not positive and finite"
        )));
    }
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct TaylorSplit {
    /// Terms of Taylor order `2 … ⌊ℓ⌋−2`.
    pub p: Series,
    /// Terms of order `≥ ⌊ℓ⌋−1`.
    pub z: Series,
    /// `Σ_{z terms} |c| 2π|k|_1 ρ^{|m|_1}`, a majorant of `sup ‖∂_θ Z‖` on
    /// `T^d × B_ρ`.
    pub z_bound: f64,
    pub rho: f64,
}

impl TaylorSplit {
    /// The pure-angle coefficient `a_m(θ)` of each monomial `I^m` in `P`.
    pub fn coefficients(&self) -> BTreeMap<Vec<u32>, Series> {
        let mut out: BTreeMap<Vec<u32>, Vec<(Vec<i32>, Vec<u32>, _)>> = BTreeMap::new();
        let d = self.p.dim();
        for (md, c) in self.p.iter() {
            out.entry(md.m.clone())
                .or_default()
                .push((md.k.clone(), vec![0; d], *c));
        }
        out.into_iter()
            .map(|(m, terms)| (m, Series::from_terms(d, terms).expect("dimension checked")))
            .collect()
    }
}

pub fn taylor_split(f: &Series, hc: &HolderClass<f64>, rho: f64) -> Result<TaylorSplit> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} must be positive")));
    }
    if let Some(low) = f.min_taylor_order().filter(|&o| o < 2) {
        return Err(Error::ModelViolation(format!(
            "perturbation has Taylor order {low} terms; f must vanish to second order at I = 0"
        )));
    }
    let top = hc.poly_order();
    let (p, z) = f.partition(|md| md.taylor_order() <= top);
    let z_bound = z
        .iter()
        .map(|(md, c)| {
            c.norm() * std::f64::consts::TAU * md.fourier_order() as f64 * rho.powi(md.taylor_order() as i32)
        })
        .fold(0.0, |acc, x| acc + x);
    Ok(TaylorSplit { p, z, z_bound, rho })
}

/// `max_m holder_norm_majorant(a_m)` over the coefficients of `P`.
pub fn coeff_norm_max(split: &TaylorSplit, hc: &HolderClass<f64>) -> Result<f64> {
    let mut best = 0.0f64;
    for a in split.coefficients().values() {
        best = best.max(holder_norm_majorant(a, hc)?);
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct SmoothedPolynomial {
    pub p_s: Series,
    /// `P − P_s`.
    pub dropped: Series,
    pub s: f64,
    /// Majorant of `sup ‖∇_J (P − P_s)‖_∞` on `T^d × B_{ρ/2}`.
    pub action_gradient_gap: f64,
    /// Majorant of `sup ‖∇_φ (P − P_s)‖_∞` on `T^d × B_{ρ/2}`.
    pub angle_gradient_gap: f64,
    /// Largest relative defect of the truncated-sum norm identity over the
    /// smoothed coefficients.
    pub equality_defect: f64,
}

/// Replaces every coefficient `a_m` of `P` by its smoothing at width `s`.
pub fn smooth_coefficients(split: &TaylorSplit, s: f64) -> Result<SmoothedPolynomial> {
    let d = split.p.dim();
    let mut p_s = Series::zero(d);
    let mut dropped = Series::zero(d);
    let mut equality_defect = 0.0f64;
    for (m, a) in split.coefficients() {
        let r = smooth(&a, s)?;
        equality_defect = equality_defect.max(r.equality_defect);
        let lift = |g: &Series| {
            Series::from_terms(d, g.iter().map(|(md, c)| (md.k.clone(), m.clone(), *c))).expect("dimension checked")
        };
        p_s = &p_s + &lift(&r.g_s);
        dropped = &dropped + &lift(&r.dropped);
    }
    let half = split.rho / 2.0;
    let mut action_gap = vec![0.0; d];
    let mut angle_gap = vec![0.0; d];
    for (md, c) in dropped.iter() {
        let mono = half.powi(md.taylor_order() as i32);
        for i in 0..d {
            if md.m[i] > 0 {
                action_gap[i] += c.norm() * f64::from(md.m[i]) * mono / half;
            }
            angle_gap[i] += c.norm() * std::f64::consts::TAU * f64::from(md.k[i].unsigned_abs()) * mono;
        }
    }
    Ok(SmoothedPolynomial {
        p_s,
        dropped,
        s,
        action_gradient_gap: action_gap.into_iter().fold(0.0, f64::max),
        angle_gradient_gap: angle_gap.into_iter().fold(0.0, f64::max),
        equality_defect,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScheduleFlags {
    /// `C₀ C_B max‖a_m‖ ρ² ≤ αρ/(256 ξ K)`.
    pub smallness_ok: bool,
    /// `ρ ≤ ρ₀` with `ρ₀ = s`; the Hessian condition is vacuous for `h = ω·I`.
    pub rho_ok: bool,
    pub ks_ok: bool,
    pub s_in_range: bool,
    /// `ρ < e^{−6}`.
    pub below_threshold: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSchedule {
    pub rho: f64,
    pub ell: f64,
    pub tau: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub rho_tilde: f64,
    /// `(ρ̃/ρ)^a` before rounding.
    pub k_real: f64,
    pub k: u32,
    pub s: f64,
    pub alpha: f64,
    /// `C₀ C_B max‖a_m‖ ρ²`.
    pub norm_bound: f64,
    /// `αρ/(256 ξ K)`.
    pub smallness_threshold: f64,
    pub flags: ScheduleFlags,
}

impl ParameterSchedule {
    /// Names of the failed conditions, in a fixed order.
    pub fn failures(&self) -> Vec<&'static str> {
        let f = self.flags;
        let mut out = Vec::new();
        if !f.smallness_ok {
            out.push("smallness_ok");
        }
        if !f.rho_ok {
            out.push("rho_ok");
        }
        if !f.ks_ok {
            out.push("Ks_ok");
        }
        if !f.s_in_range {
            out.push("s_in_range");
        }
        if !f.below_threshold {
            out.push("rho_below_exp(-6)");
        }
        out
    }

    pub fn certified(&self) -> bool {
        self.failures().is_empty()
    }

    /// All conditions except `ρ < e^{−6}`, for dynamics-only runs.
    pub fn certified_relaxed(&self) -> bool {
        let f = self.flags;
        f.smallness_ok && f.rho_ok && f.ks_ok && f.s_in_range
    }

    /// `|K s − b|log ρ|| / (b|log ρ|)`.
    pub fn schedule_identity_defect(&self) -> f64 {
        let target = self.b * self.rho.ln().abs();
        (f64::from(self.k) * self.s - target).abs() / target
    }
}

/// `a = 1/(τ+1)`.
pub fn schedule_a(tau: f64) -> f64 {
    1.0 / (tau + 1.0)
}

/// `b = 6(aℓ + 1)`.
pub fn schedule_b(ell: f64, tau: f64) -> f64 {
    6.0 * (schedule_a(tau) * ell + 1.0)
}

/// `ρ̃ = (γ / (256 ξ C₀ C_B c))^{1/(a(τ+1))}`.
pub fn rho_tilde(gamma: f64, tau: f64, consts: &BoundConstants, coeff_norm_max: f64) -> f64 {
    let a = schedule_a(tau);
    (gamma / (256.0 * consts.xi * consts.c0 * consts.c_b * coeff_norm_max)).powf(1.0 / (a * (tau + 1.0)))
}

fn check_schedule_inputs(rho: f64, gamma: f64, tau: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameters(format!("rho = {rho} outside (0, 1)")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameters(format!("gamma = {gamma} must be positive")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Parameters(format!("tau = {tau} must be non-negative")));
    }
    Ok(())
}

/// Schedule for a given `ρ̃`. Failed conditions are reported in the flags;
/// only malformed inputs are errors.
pub fn schedule_with_rho_tilde(
    rho: f64,
    rho_tilde: f64,
    gamma: f64,
    tau: f64,
    ell: f64,
    consts: &BoundConstants,
    coeff_norm_max: f64,
) -> Result<ParameterSchedule> {
    check_schedule_inputs(rho, gamma, tau)?;
    if !(rho_tilde > 0.0 && rho_tilde.is_finite()) {
        return Err(Error::Parameters(format!(
            "rho_tilde = {rho_tilde} must be positive and finite"
        )));
    }
    let a = schedule_a(tau);
    let b = schedule_b(ell, tau);
    let k_real = (rho_tilde / rho).powf(a);
    if k_real >= f64::from(u32::MAX) {
        return Err(Error::Parameters(format!(
            "mode cutoff (rho_tilde/rho)^a = {k_real:e} too large"
        )));
    }
    let k = (k_real.floor() as u32).max(1);
    let log_term = (b * rho.ln()).abs();
    let s = (rho / rho_tilde).powf(a) * log_term;
    let kf = f64::from(k);
    let alpha = gamma / kf.powf(tau);
    let norm_bound = consts.c0 * consts.c_b * coeff_norm_max * rho * rho;
    let smallness_threshold = alpha * rho / (256.0 * consts.xi * kf);
    let flags = ScheduleFlags {
        smallness_ok: norm_bound <= smallness_threshold * (1.0 + 1e-12),
        rho_ok: rho <= s,
        ks_ok: kf * s >= 6.0,
        s_in_range: s > 0.0 && s <= 1.0,
        below_threshold: rho < (-6.0f64).exp(),
    };
    Ok(ParameterSchedule {
        rho,
        ell,
        tau,
        gamma,
        a,
        b,
        rho_tilde,
        k_real,
        k,
        s,
        alpha,
        norm_bound,
        smallness_threshold,
        flags,
    })
}

/// The schedule with `ρ̃` from the smallness condition.
pub fn parameter_schedule(
    rho: f64,
    gamma: f64,
    tau: f64,
    hc: &HolderClass<f64>,
    consts: &BoundConstants,
    coeff_norm_max: f64,
) -> Result<ParameterSchedule> {
    check_schedule_inputs(rho, gamma, tau)?;
    if !(coeff_norm_max > 0.0 && coeff_norm_max.is_finite()) {
        return Err(Error::Parameters(format!(
            "coefficient norm {coeff_norm_max} must be positive and finite"
        )));
    }
    let rt = rho_tilde(gamma, tau, consts, coeff_norm_max);
    schedule_with_rho_tilde(rho, rt, gamma, tau, hc.ell, consts, coeff_norm_max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dominant {
    Analytic,
    SmoothingGap,
    Taylor,
}

impl fmt::Display for Dominant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dominant::Analytic => "analytic",
            Dominant::SmoothingGap => "smoothing_gap",
            Dominant::Taylor => "taylor",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemainderBounds {
    /// `C₁ ρ^{2+b/6−a} / |log ρ^b|`.
    pub analytic: f64,
    /// `C₄ ρ^{2+a(ℓ−1)} |log ρ^b|^{ℓ−1}`.
    pub smoothing_gap: f64,
    /// `C₅ ρ^{ℓ−1}`.
    pub taylor: f64,
    pub dominant: Dominant,
}

/// Dominance of the smoothing gap needs `ℓ > (3−a)/(1−a) = 3 + 2/τ`.
pub fn dominance_bound(tau: f64) -> f64 {
    let a = schedule_a(tau);
    (3.0 - a) / (1.0 - a)
}

fn check_dominance(ell: f64, tau: f64) -> Result<()> {
    let bound = dominance_bound(tau);
    if !(ell > bound) {
        return Err(Error::Dominance { ell, bound });
    }
    Ok(())
}

pub fn remainder_bounds(rho: f64, ell: f64, tau: f64, consts: &BoundConstants) -> Result<RemainderBounds> {
    check_dominance(ell, tau)?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameters(format!("rho = {rho} outside (0, 1)")));
    }
    let a = schedule_a(tau);
    let b = schedule_b(ell, tau);
    let log_term = (b * rho.ln()).abs();
    let analytic = consts.c1 * rho.powf(2.0 + b / 6.0 - a) / log_term;
    let smoothing_gap = consts.c4 * rho.powf(2.0 + a * (ell - 1.0)) * log_term.powf(ell - 1.0);
    let taylor = consts.c5 * rho.powf(ell - 1.0);
    let dominant = if smoothing_gap >= analytic && smoothing_gap >= taylor {
        Dominant::SmoothingGap
    } else if analytic >= taylor {
        Dominant::Analytic
    } else {
        Dominant::Taylor
    };
    Ok(RemainderBounds {
        analytic,
        smoothing_gap,
        taylor,
        dominant,
    })
}

/// Largest `ρ*` such that the smoothing gap dominates on `(0, ρ*]`.
///
/// Both ratios `analytic/gap` and `taylor/gap` increase with `ρ` on `(0, 1)`,
/// so the threshold is found by bisection in `log ρ`.
pub fn dominance_threshold(ell: f64, tau: f64, consts: &BoundConstants) -> Result<f64> {
    check_dominance(ell, tau)?;
    let dominated = |log_rho: f64| {
        remainder_bounds(log_rho.exp(), ell, tau, consts)
            .map(|r| r.dominant == Dominant::SmoothingGap)
            .unwrap_or(false)
    };
    let (mut lo, mut hi) = (-700.0f64, -1e-12f64);
    if !dominated(lo) {
        return Err(Error::Parameters(
            "smoothing gap does not dominate even at rho = e^-700".into(),
        ));
    }
    if dominated(hi) {
        return Ok(hi.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dominated(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// `1 + (ℓ−1)/(τ+1)`.
pub fn stability_exponent(ell: f64, tau: f64) -> f64 {
    1.0 + (ell - 1.0) / (tau + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityTimes {
    /// `1/(6 C₆ ρ^{1+a(ℓ−1)} |b log ρ|^{ℓ−1})`.
    pub t_star: f64,
    /// `C₁ / (ρ^{1+(ℓ−1)/(τ+1)} |log ρ|^{ℓ−1})`.
    pub t_theorem: f64,
    /// `1 + a(ℓ−1)`.
    pub exponent: f64,
    /// `C₆ ρ^{2+a(ℓ−1)} |b log ρ|^{ℓ−1}`, the action drift rate bound.
    pub drift_rate: f64,
}

impl StabilityTimes {
    pub const INTEGRABLE: StabilityTimes = StabilityTimes {
        t_star: f64::INFINITY,
        t_theorem: f64::INFINITY,
        exponent: f64::NAN,
        drift_rate: 0.0,
    };
}

pub fn predicted_stability_time(rho: f64, ell: f64, tau: f64, consts: &BoundConstants) -> Result<StabilityTimes> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameters(format!("rho = {rho} outside (0, 1)")));
    }
    let a = schedule_a(tau);
    let b = schedule_b(ell, tau);
    let exponent = 1.0 + a * (ell - 1.0);
    let log_b = (b * rho.ln()).abs();
    let log_1 = rho.ln().abs();
    Ok(StabilityTimes {
        t_star: 1.0 / (6.0 * consts.c6 * rho.powf(exponent) * log_b.powf(ell - 1.0)),
        t_theorem: consts.c1 / (rho.powf(stability_exponent(ell, tau)) * log_1.powf(ell - 1.0)),
        exponent,
        drift_rate: consts.c6 * rho.powf(exponent + 1.0) * log_b.powf(ell - 1.0),
    })
}

/// `T₀ / ρ^{1+(ℓ−1)/(τ+1)+ε}`, the diffusion time scale of the optimality
/// examples.
pub fn diffusion_time_reference(rho: f64, ell: f64, tau: f64, epsilon: f64, t0: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && t0 > 0.0 && rho > 0.0) {
        return Err(Error::Parameters("need epsilon >= 0, T0 > 0, rho > 0".into()));
    }
    Ok(t0 / rho.powf(stability_exponent(ell, tau) + epsilon))
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub lie_order: usize,
    /// Defaults to `2K` when `None`.
    pub max_iter: Option<usize>,
    pub precision: Option<WorkingPrecision>,
    /// Largest lattice enumeration allowed for certifying `γ` at `K`.
    pub max_lattice_points: u128,
    /// Skip the `ρ < e^{−6}` gate.
    pub relaxed: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            lie_order: 6,
            max_iter: None,
            precision: None,
            max_lattice_points: 20_000_000,
            relaxed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub rho: f64,
    pub z_bound: f64,
    pub coeff_norm_max: f64,
    pub schedule: Option<ParameterSchedule>,
    pub smoothed: Option<SmoothedPolynomial>,
    /// `γ_K` recomputed at the scheduled cutoff.
    pub gamma_at_k: Option<f64>,
    pub normal_form: Option<NormalFormResult<f64>>,
    pub bounds: Option<RemainderBounds>,
    pub times: StabilityTimes,
    pub certified: bool,
    pub diagnostics: Vec<String>,
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.entry("rho", self.rho)
            .entry("certified", self.certified)
            .entry("z_bound", self.z_bound)
            .entry("coeff_norm_max", self.coeff_norm_max);
        if let Some(s) = &self.schedule {
            write_schedule(&mut w, s);
        }
        if let Some(sm) = &self.smoothed {
            w.entry("smoothing.action_gradient_gap", sm.action_gradient_gap)
                .entry("smoothing.angle_gradient_gap", sm.angle_gradient_gap)
                .entry("smoothing.equality_defect", sm.equality_defect);
        }
        if let Some(g) = self.gamma_at_k {
            w.entry("gamma_at_K", g);
        }
        if let Some(nf) = &self.normal_form {
            w.entry("nf.certified", nf.certified)
                .entry("nf.contraction", nf.contraction)
                .entry("nf.contraction_target", nf.contraction_target)
                .entry("nf.iterations", nf.iterations)
                .entry("nf.action_shift_bound", nf.action_shift_bound)
                .entry("nf.angle_shift_bound", nf.angle_shift_bound);
        }
        if let Some(b) = &self.bounds {
            write_bounds(&mut w, b);
        }
        write_times(&mut w, &self.times);
        for (i, d) in self.diagnostics.iter().enumerate() {
            w.entry(&format!("diagnostic.{i}"), d);
        }
        w.finish()
    }
}

pub fn write_schedule(w: &mut KeyValueWriter, s: &ParameterSchedule) {
    w.entry("schedule.a", s.a)
        .entry("schedule.b", s.b)
        .entry("schedule.rho_tilde", s.rho_tilde)
        .entry("schedule.K", s.k)
        .entry("schedule.s", s.s)
        .entry("schedule.alpha", s.alpha)
        .entry("schedule.norm_bound", s.norm_bound)
        .entry("schedule.smallness_threshold", s.smallness_threshold)
        .entry("schedule.smallness_ok", s.flags.smallness_ok)
        .entry("schedule.rho_ok", s.flags.rho_ok)
        .entry("schedule.Ks_ok", s.flags.ks_ok)
        .entry("schedule.s_in_range", s.flags.s_in_range)
        .entry("schedule.below_exp_minus_6", s.flags.below_threshold);
}

pub fn write_bounds(w: &mut KeyValueWriter, b: &RemainderBounds) {
    w.entry("bound.analytic", b.analytic)
        .entry("bound.smoothing_gap", b.smoothing_gap)
        .entry("bound.taylor", b.taylor)
        .entry("bound.dominant", b.dominant);
}

pub fn write_times(w: &mut KeyValueWriter, t: &StabilityTimes) {
    w.entry("t_star", t.t_star)
        .entry("t_theorem", t.t_theorem)
        .entry("stability_exponent", t.exponent)
        .entry("drift_rate", t.drift_rate);
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::stage(stage, e))
}

/// Runs split, smoothing, schedule, normal form and bounds for `H = ω·I + f`.
///
/// A failed schedule condition ends the run early with `certified = false`
/// and the failed flags in `diagnostics`; stage errors carry their stage.
pub fn run_pipeline(
    hamiltonian: &Series,
    omega: &Frequency<f64>,
    gamma: f64,
    tau: f64,
    hc: &HolderClass<f64>,
    rho: f64,
    consts: &BoundConstants,
    options: &PipelineOptions,
) -> Result<PipelineReport> {
    staged("constants", consts.validate())?;
    let f = hamiltonian - &Series::linear_action(omega.as_slice());
    let split = staged("taylor_split", taylor_split(&f, hc, rho))?;
    let mut report = PipelineReport {
        rho,
        z_bound: split.z_bound,
        coeff_norm_max: 0.0,
        schedule: None,
        smoothed: None,
        gamma_at_k: None,
        normal_form: None,
        bounds: None,
        times: StabilityTimes::INTEGRABLE,
        certified: false,
        diagnostics: Vec::new(),
    };
    if f.is_empty() {
        report.certified = true;
        report.diagnostics.push("integrable Hamiltonian: no drift".into());
        return Ok(report);
    }
    let cmax = staged("coefficient_norm", coeff_norm_max(&split, hc))?;
    report.coeff_norm_max = cmax;
    if cmax == 0.0 {
        return Err(Error::stage(
            "coefficient_norm",
            Error::ModelViolation("perturbation has no terms of order 2..floor(ell)-2".into()),
        ));
    }
    let schedule = staged("schedule", parameter_schedule(rho, gamma, tau, hc, consts, cmax))?;
    let ok = if options.relaxed {
        schedule.certified_relaxed()
    } else {
        schedule.certified()
    };
    report.times = staged("stability_time", predicted_stability_time(rho, hc.ell, tau, consts))?;
    if !ok {
        report.diagnostics.extend(
            schedule
                .failures()
                .into_iter()
                .map(|f| format!("schedule condition failed: {f}")),
        );
        report.schedule = Some(schedule);
        return Ok(report);
    }
    let smoothed = staged("smoothing", smooth_coefficients(&split, schedule.s))?;

    let max_points = ball_size(omega.dim(), schedule.k);
    if max_points > options.max_lattice_points {
        return Err(Error::stage(
            "certificate",
            Error::EnumerationBudget {
                cutoff: schedule.k,
                dim: omega.dim(),
                points: max_points,
                budget: options.max_lattice_points,
            },
        ));
    }
    let budget = EnumerationBudget { max_points };
    let cert = staged("certificate", diophantine_constant(omega, tau, schedule.k, budget))?;
    report.gamma_at_k = Some(cert.gamma);
    if cert.gamma < gamma * (1.0 - 1e-12) {
        return Err(Error::stage(
            "certificate",
            Error::Parameters(format!(
                "gamma = {gamma} exceeds gamma_K = {} at K = {}",
                cert.gamma, schedule.k
            )),
        ));
    }

    let widths = staged("normal_form", AnalyticityWidths::new(schedule.s, rho))?;
    let mut params = staged(
        "normal_form",
        NormalFormParams::new(schedule.alpha, schedule.k, widths, consts.xi, 0.0),
    )?;
    params.lie_order = options.lie_order;
    params.budget = budget;
    if let Some(p) = options.precision {
        params.precision = p;
    }
    let h_s = &Series::linear_action(omega.as_slice()) + &smoothed.p_s;
    let max_iter = options.max_iter.unwrap_or(2 * schedule.k as usize);
    let nf = staged("normal_form", resonant_normal_form(&h_s, omega, &params, max_iter))?;
    report
        .diagnostics
        .extend(nf.diagnostics.iter().map(|d| format!("normal form: {d}")));
    let bounds = staged("remainder_bounds", remainder_bounds(rho, hc.ell, tau, consts))?;
    report.certified = nf.certified;
    report.schedule = Some(schedule);
    report.smoothed = Some(smoothed);
    report.normal_form = Some(nf);
    report.bounds = Some(bounds);
    Ok(report)
}

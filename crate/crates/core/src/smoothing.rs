//! Analytic smoothing of periodic Hölder functions.
//!
//! A pure-angle series `g` is smoothed at width `s ∈ (0, 1]` by keeping the
//! modes with `|k|_1 ≤ 1/s` and discarding the rest. This is the operator for
//! which the weighted Fourier norm at width `s` of the smoothed function
//! equals the truncated sum `Σ_{|k|_1 ≤ 1/s} |ĝ_k| e^{|k|_1 s}`.
//!
//! Hölder norms are replaced by the computable Fourier majorant of
//! [`holder_norm_majorant`]; `C^p` distances by the analogous majorant
//! `Σ |ĝ_k| (2π|k|_1)^p`.

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::{AnalyticityWidths, FourierTaylorSeries};

/// Regularity `ℓ = q + μ` with `q = ⌊ℓ⌋`, `μ ∈ [0, 1)`, required to exceed
/// `2d + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderClass<T> {
    pub ell: T,
    pub q: u32,
    pub mu: T,
}

impl<T: Real> HolderClass<T> {
    pub fn new(ell: T, dim: usize) -> Result<Self> {
        let bound = T::from_int(2 * dim as i64 + 1);
        if !ell.is_finite() || ell <= bound {
            return Err(Error::InvalidArgument(format!(
                "regularity ell = {ell} must exceed 2d + 1 = {bound}"
            )));
        }
        let q = ell.floor();
        Ok(HolderClass {
            ell,
            q: q.to_u32().expect("moderate regularity"),
            mu: ell - q,
        })
    }

    /// Highest Taylor order kept in the polynomial part, `⌊ℓ⌋ − 2`.
    pub fn poly_order(&self) -> u32 {
        self.q - 2
    }
}

#[derive(Clone, Debug)]
pub struct SmoothingResult<T> {
    pub g_s: FourierTaylorSeries<T>,
    pub s: T,
    /// `Σ_{|k|_1 ≤ 1/s} |ĝ_k| e^{|k|_1 s}`.
    pub fourier_norm_at_s: T,
    /// `Σ |ĝ_k|` over the discarded modes.
    pub dropped_tail_mass: T,
    pub dropped: FourierTaylorSeries<T>,
    /// Relative mismatch between the weighted norm of `g_s` and the
    /// truncated sum over `g` (re-verified on every call).
    pub equality_defect: T,
}

fn check_width<T: Real>(s: T) -> Result<()> {
    if !(s > T::zero() && s <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing width s = {s} outside (0, 1]"
        )));
    }
    Ok(())
}

fn check_pure_angle<T: Real>(g: &FourierTaylorSeries<T>) -> Result<()> {
    if !g.is_pure_angle() {
        return Err(Error::InvalidArgument(
            "smoothing acts on pure-angle series (all m = 0)".into(),
        ));
    }
    Ok(())
}

/// Whether `|k|_1 ≤ 1/s`.
pub fn within_cutoff<T: Real>(fourier_order: u64, s: T) -> bool {
    T::from_u64(fourier_order).map_or(false, |k| k * s <= T::one())
}

/// Sharp `ℓ¹`-ball truncation at `|k|_1 ≤ 1/s`.
pub fn smooth<T: Real>(g: &FourierTaylorSeries<T>, s: T) -> Result<SmoothingResult<T>> {
    check_width(s)?;
    check_pure_angle(g)?;
    let (g_s, dropped) = g.partition(|md| within_cutoff(md.fourier_order(), s));
    let fourier_norm_at_s = g_s.weighted_norm(AnalyticityWidths {
        sigma: s,
        rho: T::one(),
    });
    let truncated_sum: T = g
        .iter()
        .filter(|(md, _)| within_cutoff(md.fourier_order(), s))
        .map(|(md, c)| c.norm() * (T::from_u64(md.fourier_order()).unwrap() * s).exp())
        .fold(T::zero(), |a, b| a + b);
    let scale = truncated_sum.max(T::min_positive_value());
    let equality_defect = (fourier_norm_at_s - truncated_sum).abs() / scale;
    if equality_defect > T::tol(1e-12) {
        return Err(Error::ModelViolation(format!(
            "smoothed Fourier norm {fourier_norm_at_s} differs from truncated sum {truncated_sum}"
        )));
    }
    Ok(SmoothingResult {
        dropped_tail_mass: dropped.mass(),
        g_s,
        s,
        fourier_norm_at_s,
        dropped,
        equality_defect,
    })
}

/// Upper bound on the `C^ℓ` norm of a real pure-angle series:
/// `(1 + 2^{1−μ}) Σ_k |ĝ_k| (1 + (2π|k|_1)^ℓ)`.
///
/// Derivatives of order `≤ q` are bounded termwise by `(2π|k|_1)^q ≤
/// 1 + (2π|k|_1)^ℓ`; the `μ`-Hölder quotient of the top derivatives uses
/// `|e^{ix} − e^{iy}| ≤ 2^{1−μ} |x − y|^μ`. Divergence yields `+∞`.
pub fn holder_norm_majorant<T: Real>(g: &FourierTaylorSeries<T>, hc: &HolderClass<T>) -> Result<T> {
    check_pure_angle(g)?;
    let prefactor = T::one() + T::lit(2.0).powf(T::one() - hc.mu);
    let sum: T = g
        .iter()
        .map(|(md, c)| {
            let k = T::from_u64(md.fourier_order()).unwrap();
            c.norm() * (T::one() + (T::two_pi() * k).powf(hc.ell))
        })
        .fold(T::zero(), |a, b| a + b);
    let total = prefactor * sum;
    Ok(if total.is_finite() { total } else { T::infinity() })
}

/// `C^p` majorant `Σ |ĝ_k| (2π|k|_1)^p` (with `0^0 = 1`).
pub fn cp_majorant<T: Real>(g: &FourierTaylorSeries<T>, p: u32) -> T {
    g.iter()
        .map(|(md, c)| {
            let k = T::from_u64(md.fourier_order()).unwrap();
            c.norm() * (T::two_pi() * k).powi(p as i32)
        })
        .fold(T::zero(), |a, b| a + b)
}

/// Modes of level `j` of the lacunary family: the axis modes `2^j e_i`
/// and, for `j ≥ 1` and `d ≥ 2`, the mixed mode `(2^{j−1}, −2^{j−1}, 0, …)`.
/// Every mode has `|k|_1 = 2^j`.
pub fn lacunary_modes(dim: usize, level: u32) -> Vec<Vec<i32>> {
    let n = 1i32 << level;
    let mut modes: Vec<Vec<i32>> = (0..dim)
        .map(|i| {
            let mut k = vec![0; dim];
            k[i] = n;
            k
        })
        .collect();
    if level >= 1 && dim >= 2 {
        let mut k = vec![0; dim];
        k[0] = n / 2;
        k[1] = -n / 2;
        modes.push(k);
    }
    modes
}

/// `amplitude · Σ_{j=0}^{levels} 2^{−jℓ} Σ_{k ∈ level j} cos(2π(k·θ + φ_{j,k})) · I^m`
/// with phases `φ` drawn uniformly from `rng`.
pub fn lacunary_series<T: Real, R: Rng>(
    dim: usize,
    ell: T,
    levels: u32,
    amplitude: T,
    m: &[u32],
    rng: &mut R,
) -> FourierTaylorSeries<T> {
    let mut total = FourierTaylorSeries::zero(dim);
    if amplitude.is_zero() {
        return total;
    }
    for j in 0..=levels {
        let size = amplitude * T::lit(2.0).powf(-T::from_int(j.into()) * ell);
        for k in lacunary_modes(dim, j) {
            let phase: f64 = rng.gen();
            let c = Complex::from_polar(size, T::two_pi() * T::lit(phase));
            total = &total + &FourierTaylorSeries::trig_term(k, m.to_vec(), c);
        }
    }
    total
}

/// One row of a smoothing sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint<T> {
    pub s: T,
    /// `‖g − g_s‖_{C^p}` majorant.
    pub error: T,
    /// `|||g_s|||_s / holder_norm_majorant(g)`.
    pub norm_ratio: T,
    pub saturated: bool,
}

#[derive(Clone, Debug)]
pub struct SmoothingEstimateReport<T> {
    pub points: Vec<SweepPoint<T>>,
    /// Fitted exponent of `error ∝ s^slope`; `None` when every point is
    /// saturated (nothing dropped).
    pub slope: Option<T>,
    pub target: T,
    pub pass: bool,
}

impl<T: Real> SmoothingEstimateReport<T> {
    pub fn saturated(&self) -> bool {
        self.slope.is_none()
    }
}

fn sweep_points<T: Real>(
    g: &FourierTaylorSeries<T>,
    hc: &HolderClass<T>,
    p: u32,
    s_list: &[T],
) -> Result<Vec<SweepPoint<T>>> {
    let majorant = holder_norm_majorant(g, hc)?;
    s_list
        .par_iter()
        .map(|&s| {
            let r = smooth(g, s)?;
            let error = cp_majorant(&r.dropped, p);
            Ok(SweepPoint {
                s,
                error,
                norm_ratio: r.fourier_norm_at_s / majorant,
                saturated: error.is_zero(),
            })
        })
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let n = T::from_usize(x.len()).unwrap();
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fits `log ‖g − g_s‖_{C^p}` against `log s`; passes when the slope is at
/// least `ℓ − p − 0.3`.
pub fn verify_smoothing_estimate<T: Real>(
    g: &FourierTaylorSeries<T>,
    hc: &HolderClass<T>,
    p: u32,
    s_list: &[T],
) -> Result<SmoothingEstimateReport<T>> {
    if T::from_u32(p).unwrap() > hc.ell {
        return Err(Error::InvalidArgument(format!("p = {p} exceeds ell = {}", hc.ell)));
    }
    let points = sweep_points(g, hc, p, s_list)?;
    let target = hc.ell - T::from_u32(p).unwrap();
    let usable: Vec<&SweepPoint<T>> = points.iter().filter(|pt| !pt.saturated).collect();
    if usable.is_empty() {
        return Ok(SmoothingEstimateReport {
            points,
            slope: None,
            target,
            pass: true,
        });
    }
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} unsaturated smoothing widths, need at least 4",
            usable.len()
        )));
    }
    let x: Vec<T> = usable.iter().map(|pt| pt.s.ln()).collect();
    let y: Vec<T> = usable.iter().map(|pt| pt.error.ln()).collect();
    let slope = ls_slope(&x, &y);
    Ok(SmoothingEstimateReport {
        pass: slope >= target - T::lit(0.3),
        points,
        slope: Some(slope),
        target,
    })
}

#[derive(Clone, Debug)]
pub struct NormBoundReport<T> {
    pub points: Vec<SweepPoint<T>>,
    pub sup_ratio: T,
    /// Mean ratio over the third of the sweep with the largest `s`.
    pub early_mean: T,
    /// Mean ratio over the third with the smallest `s`.
    pub late_mean: T,
    pub pass: bool,
}

/// Checks that `|||g_s|||_s / ‖g‖_{C^ℓ}` stays bounded as `s → 0`: the
/// late-third mean may not exceed twice the early-third mean.
pub fn fourier_norm_bound_check<T: Real>(
    g: &FourierTaylorSeries<T>,
    hc: &HolderClass<T>,
    s_list: &[T],
) -> Result<NormBoundReport<T>> {
    if s_list.len() < 3 {
        return Err(Error::InsufficientData("need at least 3 smoothing widths".into()));
    }
    let mut points = sweep_points(g, hc, 0, s_list)?;
    points.sort_by(|a, b| b.s.partial_cmp(&a.s).expect("finite widths"));
    let third = points.len() / 3;
    let mean = |pts: &[SweepPoint<T>]| pts.iter().map(|p| p.norm_ratio).sum::<T>() / T::from_usize(pts.len()).unwrap();
    let early_mean = mean(&points[..third]);
    let late_mean = mean(&points[points.len() - third..]);
    let sup_ratio = points.iter().map(|p| p.norm_ratio).fold(T::zero(), T::max);
    Ok(NormBoundReport {
        pass: sup_ratio.is_finite() && late_mean <= T::lit(2.0) * early_mean,
        points,
        sup_ratio,
        early_mean,
        late_mean,
    })
}

/// Geometric list `2^{-lo}, …, 2^{-hi}`, from the largest width down.
pub fn dyadic_widths<T: Real>(lo: u32, hi: u32) -> Vec<T> {
    (lo..=hi).map(|j| T::lit(2.0).powi(-(j as i32))).collect()
}

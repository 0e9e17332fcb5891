//! Frequency vectors, Diophantine constants and complete non-resonance.
//!
//! All mode sizes are measured with `|k|_1 = |k_1| + … + |k_d|`. The
//! Diophantine constant at cutoff `K` is found by exhaustive enumeration of
//! the `ℓ¹` ball; a budget on the number of lattice points turns oversized
//! requests into an error instead of a silent approximation.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::l1_norm;

/// Frequency vector `ω ∈ R^d`, `d ≥ 2`, in cycles per unit time (the basis
/// is `e^{2πi k·θ}`).
#[derive(Clone, Debug, PartialEq)]
pub struct Frequency<T> {
    omega: Vec<T>,
}

impl<T: Real> Frequency<T> {
    pub fn new(omega: Vec<T>) -> Result<Self> {
        if omega.len() < 2 {
            return Err(Error::UnsupportedDimension(omega.len()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("frequency components must be finite".into()));
        }
        if omega.iter().all(|w| w.is_zero()) {
            return Err(Error::InvalidArgument("frequency vector must be non-zero".into()));
        }
        Ok(Frequency { omega })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.omega
    }

    /// `ω · k`.
    pub fn dot(&self, k: &[i32]) -> T {
        self.omega
            .iter()
            .zip(k)
            .fold(T::zero(), |s, (&w, &ki)| s + w * T::from_int(ki.into()))
    }

    /// `‖ω‖_∞`.
    pub fn sup_norm(&self) -> T {
        self.omega.iter().fold(T::zero(), |m, w| m.max(w.abs()))
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.omega.iter().map(|&w| w * factor).collect())
    }
}

/// `(1, (1+√5)/2)`, the canonical badly approximable vector in `d = 2`.
pub fn golden_frequency<T: Real>(dim: usize) -> Result<Frequency<T>> {
    if dim != 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    let phi = (T::one() + T::lit(5.0).sqrt()) / T::lit(2.0);
    Frequency::new(vec![T::one(), phi])
}

/// Finite-cutoff Diophantine certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct DiophantineCertificate<T> {
    pub tau: T,
    pub cutoff: u32,
    /// `min_{0<|k|_1≤K} |ω·k| |k|_1^τ`.
    pub gamma: T,
    /// A mode attaining the minimum (the first found in enumeration order).
    pub witness: Vec<i32>,
}

impl<T: Real> DiophantineCertificate<T> {
    /// `α = γ_K / K^τ`, the non-resonance threshold certified at cutoff `K`.
    pub fn alpha(&self) -> T {
        self.gamma / T::from_int(self.cutoff.into()).powf(self.tau)
    }

    pub fn is_positive(&self) -> bool {
        self.gamma > T::zero()
    }
}

/// Cap on the number of lattice points an enumeration may visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_points: u128,
}

impl Default for EnumerationBudget {
    /// The `ℓ¹` ball of radius 200 in `d = 2` (80 401 points).
    fn default() -> Self {
        EnumerationBudget {
            max_points: ball_size(2, 200),
        }
    }
}

impl EnumerationBudget {
    pub fn check(&self, dim: usize, cutoff: u32) -> Result<()> {
        let points = ball_size(dim, cutoff);
        if points > self.max_points {
            return Err(Error::EnumerationBudget {
                cutoff,
                dim,
                points,
                budget: self.max_points,
            });
        }
        Ok(())
    }
}

/// Number of `k ∈ Z^d` with `|k|_1 ≤ r`: `Σ_j 2^j C(d,j) C(r,j)`.
pub fn ball_size(dim: usize, radius: u32) -> u128 {
    let binom = |n: u128, k: u128| -> u128 {
        if k > n {
            return 0;
        }
        (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
    };
    (0..=dim.min(radius as usize) as u128)
        .map(|j| {
            (1u128 << j)
                .saturating_mul(binom(dim as u128, j))
                .saturating_mul(binom(radius.into(), j))
        })
        .fold(0u128, u128::saturating_add)
}

/// Visits every non-zero `k` with `|k|_1 ≤ radius` whose first non-zero
/// component is positive (one representative of each `±k` pair).
pub fn for_each_half_mode<F: FnMut(&[i32])>(dim: usize, radius: u32, mut visit: F) {
    fn rec<F: FnMut(&[i32])>(k: &mut Vec<i32>, pos: usize, left: i32, leading: bool, visit: &mut F) {
        if pos == k.len() {
            if !leading {
                visit(k);
            }
            return;
        }
        let lo = if leading { 0 } else { -left };
        for v in lo..=left {
            k[pos] = v;
            rec(k, pos + 1, left - v.abs(), leading && v == 0, visit);
        }
        k[pos] = 0;
    }
    let mut k = vec![0; dim];
    rec(&mut k, 0, radius as i32, true, &mut visit);
}

/// `γ_K = min_{0<|k|_1≤K} |ω·k| |k|_1^τ` by exhaustive enumeration.
pub fn diophantine_constant<T: Real>(
    omega: &Frequency<T>,
    tau: T,
    cutoff: u32,
    budget: EnumerationBudget,
) -> Result<DiophantineCertificate<T>> {
    if cutoff < 1 {
        return Err(Error::InvalidArgument("cutoff K must be at least 1".into()));
    }
    if !(tau >= T::zero()) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tau must be finite and >= 0, got {tau}"
        )));
    }
    budget.check(omega.dim(), cutoff)?;
    let mut best = T::infinity();
    let mut witness = Vec::new();
    for_each_half_mode(omega.dim(), cutoff, |k| {
        let size = T::from_u64(l1_norm(k)).expect("small integer");
        let value = omega.dot(k).abs() * size.powf(tau);
        if value < best {
            best = value;
            witness = k.to_vec();
        }
    });
    Ok(DiophantineCertificate {
        tau,
        cutoff,
        gamma: best,
        witness,
    })
}

/// `|k·ω| ≥ α` for every `0 < |k|_1 ≤ K`.
///
/// The comparison allows a relative slack of `4ε` on `α`, so that a
/// threshold computed as `γ_K / K^τ` from the same products is always
/// accepted despite rounding in the division.
pub fn is_completely_nonresonant<T: Real>(
    omega: &Frequency<T>,
    alpha: T,
    cutoff: u32,
    budget: EnumerationBudget,
) -> Result<bool> {
    if !(alpha > T::zero()) || cutoff < 1 {
        return Err(Error::InvalidArgument("need alpha > 0 and K >= 1".into()));
    }
    budget.check(omega.dim(), cutoff)?;
    let floor = alpha * (T::one() - T::epsilon() * T::lit(4.0));
    let mut ok = true;
    for_each_half_mode(omega.dim(), cutoff, |k| {
        if ok && omega.dot(k).abs() < floor {
            ok = false;
        }
    });
    Ok(ok)
}

/// `min_{0<|k|_1≤K} |ω·k|` with a minimising mode.
pub fn smallest_divisor<T: Real>(
    omega: &Frequency<T>,
    cutoff: u32,
    budget: EnumerationBudget,
) -> Result<(T, Vec<i32>)> {
    let cert = diophantine_constant(omega, T::zero(), cutoff, budget)?;
    Ok((cert.gamma, cert.witness))
}

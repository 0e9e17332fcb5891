//! Sparse Fourier–Taylor series on `T^d × R^d`.
//!
//! A series is a finite sum of terms `c · e^{2πi k·θ} · I^m` with an integer
//! Fourier mode `k ∈ Z^d`, a Taylor multi-index `m ∈ N^d` and a complex
//! coefficient `c`. The torus is `R^d / Z^d`, so angle derivatives bring
//! down `2πi k_j` and small divisors read `2π ω·k`.
//!
//! Storage is canonical: keys are exact integer vectors kept in a `BTreeMap`
//! (deterministic iteration and output order) and no zero coefficient is ever
//! stored. Sums whose result is below the rounding noise of its own inputs are
//! treated as exact cancellations and dropped.

mod calculus;
mod eval;
mod text;

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use eval::{CompiledSeries, Evaluator};
pub use text::{parse_series, write_series};

/// Key of one term: Fourier mode `k` and Taylor multi-index `m`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub k: Vec<i32>,
    pub m: Vec<u32>,
}

impl Mode {
    pub fn new(k: Vec<i32>, m: Vec<u32>) -> Self {
        Mode { k, m }
    }

    /// `|k|_1`.
    pub fn fourier_order(&self) -> u64 {
        l1_norm(&self.k)
    }

    /// `|m|_1`, the total degree in the actions.
    pub fn taylor_order(&self) -> u32 {
        self.m.iter().sum()
    }

    /// The key of the complex-conjugate partner, `(-k, m)`.
    pub fn conjugate(&self) -> Mode {
        Mode {
            k: self.k.iter().map(|&x| -x).collect(),
            m: self.m.clone(),
        }
    }

    pub fn is_mean(&self) -> bool {
        self.k.iter().all(|&x| x == 0)
    }
}

/// `|k|_1` of an integer vector.
pub fn l1_norm(k: &[i32]) -> u64 {
    k.iter().map(|&x| u64::from(x.unsigned_abs())).sum()
}

/// Analyticity widths: angle strip half-width `sigma` and action radius `rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticityWidths<T> {
    pub sigma: T,
    pub rho: T,
}

impl<T: Real> AnalyticityWidths<T> {
    pub fn new(sigma: T, rho: T) -> Result<Self> {
        let ok = |x: T| x.is_finite() && x > T::zero();
        if !ok(sigma) || !ok(rho) {
            return Err(Error::InvalidArgument(format!(
                "analyticity widths must be finite and positive (sigma = {sigma}, rho = {rho})"
            )));
        }
        Ok(AnalyticityWidths { sigma, rho })
    }
}

/// Outcome of [`FourierTaylorSeries::truncate`].
#[derive(Clone, Debug)]
pub struct Truncation<T> {
    pub series: FourierTaylorSeries<T>,
    /// `Σ |c|` over the removed terms.
    pub dropped_mass: T,
}

/// Sparse complex Fourier–Taylor series in `d` angle/action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierTaylorSeries<T> {
    dim: usize,
    terms: BTreeMap<Mode, Complex<T>>,
}

impl<T: Real> FourierTaylorSeries<T> {
    pub fn zero(dim: usize) -> Self {
        FourierTaylorSeries {
            dim,
            terms: BTreeMap::new(),
        }
    }

    /// Builds a series from `(k, m, c)` triples; repeated keys are summed.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i32>, Vec<u32>, Complex<T>)>,
    {
        let mut acc = Accumulator::new(dim);
        for (k, m, c) in terms {
            if k.len() != dim || m.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "term has |k| = {}, |m| = {} but the series dimension is {dim}",
                    k.len(),
                    m.len()
                )));
            }
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coefficient at k = {k:?}, m = {m:?}"
                )));
            }
            acc.push(Mode { k, m }, c);
        }
        Ok(acc.finish())
    }

    /// The single term `c · e^{2πi k·θ} I^m`.
    pub fn monomial(k: Vec<i32>, m: Vec<u32>, c: Complex<T>) -> Self {
        assert_eq!(k.len(), m.len(), "mode and multi-index lengths differ");
        let dim = k.len();
        let mut s = Self::zero(dim);
        if !c.is_zero() {
            s.terms.insert(Mode { k, m }, c);
        }
        s
    }

    /// `amplitude · cos(2π k·θ) · I^m`, stored as two conjugate exponentials.
    pub fn cos_term(k: Vec<i32>, m: Vec<u32>, amplitude: T) -> Self {
        Self::trig_term(k, m, Complex::new(amplitude, T::zero()))
    }

    /// `amplitude · sin(2π k·θ) · I^m`.
    pub fn sin_term(k: Vec<i32>, m: Vec<u32>, amplitude: T) -> Self {
        Self::trig_term(k, m, Complex::new(T::zero(), -amplitude))
    }

    /// `Re(c e^{2πi k·θ}) · I^m`, stored as two conjugate exponentials.
    pub fn trig_term(k: Vec<i32>, m: Vec<u32>, c: Complex<T>) -> Self {
        let half = T::lit(0.5);
        let dim = k.len();
        let neg: Vec<i32> = k.iter().map(|&x| -x).collect();
        let terms = vec![(k, m.clone(), c.scale(half)), (neg, m, c.conj().scale(half))];
        Self::from_terms(dim, terms).expect("consistent dimensions")
    }

    /// The linear Hamiltonian `ω · I`.
    pub fn linear_action(omega: &[T]) -> Self {
        let dim = omega.len();
        let terms = omega.iter().enumerate().map(|(i, &w)| {
            let mut m = vec![0; dim];
            m[i] = 1;
            (vec![0; dim], m, Complex::new(w, T::zero()))
        });
        Self::from_terms(dim, terms).expect("consistent dimensions")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mode, &Complex<T>)> {
        self.terms.iter()
    }

    pub fn get(&self, k: &[i32], m: &[u32]) -> Complex<T> {
        self.terms
            .get(&Mode::new(k.to_vec(), m.to_vec()))
            .copied()
            .unwrap_or_else(Complex::zero)
    }

    /// `Σ |c|` over all terms.
    pub fn mass(&self) -> T {
        self.terms.values().map(|c| c.norm()).fold(T::zero(), |a, b| a + b)
    }

    pub fn max_fourier_order(&self) -> u64 {
        self.terms.keys().map(Mode::fourier_order).max().unwrap_or(0)
    }

    pub fn max_taylor_order(&self) -> u32 {
        self.terms.keys().map(Mode::taylor_order).max().unwrap_or(0)
    }

    pub fn min_taylor_order(&self) -> Option<u32> {
        self.terms.keys().map(Mode::taylor_order).min()
    }

    /// True when every term has `m = 0`.
    pub fn is_pure_angle(&self) -> bool {
        self.terms.keys().all(|md| md.m.iter().all(|&x| x == 0))
    }

    /// True when every term has `k = 0`.
    pub fn is_pure_action(&self) -> bool {
        self.terms.keys().all(Mode::is_mean)
    }

    /// Largest `|c_{-k,m} - conj(c_{k,m})|` relative to the series mass.
    pub fn reality_defect(&self) -> T {
        let mass = self.mass();
        if mass.is_zero() {
            return T::zero();
        }
        let worst = self
            .terms
            .iter()
            .map(|(md, c)| {
                let partner = self.terms.get(&md.conjugate()).copied().unwrap_or_else(Complex::zero);
                (partner - c.conj()).norm()
            })
            .fold(T::zero(), T::max);
        worst / mass
    }

    pub fn is_real(&self) -> bool {
        self.reality_defect() <= T::tol(1e-12)
    }

    /// Projection onto real-valued series: each coefficient becomes the mean
    /// of itself and the conjugate of its partner at `(−k, m)`.
    pub fn real_part(&self) -> Self {
        let half = T::lit(0.5);
        let mut out = Self::zero(self.dim);
        for (md, c) in &self.terms {
            let partner = self.terms.get(&md.conjugate()).copied().unwrap_or_else(Complex::zero);
            let v = (*c + partner.conj()).scale(half);
            if !v.is_zero() {
                out.terms.insert(md.clone(), v);
            }
        }
        for (md, c) in &self.terms {
            let mirror = md.conjugate();
            if !self.terms.contains_key(&mirror) {
                out.terms.insert(mirror, c.conj().scale(half));
            }
        }
        out
    }

    /// Keeps the terms satisfying `keep`; returns `(kept, removed)`.
    pub fn partition<F>(&self, mut keep: F) -> (Self, Self)
    where
        F: FnMut(&Mode) -> bool,
    {
        let mut kept = Self::zero(self.dim);
        let mut removed = Self::zero(self.dim);
        for (md, c) in &self.terms {
            if keep(md) {
                kept.terms.insert(md.clone(), *c);
            } else {
                removed.terms.insert(md.clone(), *c);
            }
        }
        (kept, removed)
    }

    pub fn filter<F>(&self, keep: F) -> Self
    where
        F: FnMut(&Mode) -> bool,
    {
        self.partition(keep).0
    }

    /// Drops terms with `|k|_1 > kmax` or `|m|_1 > mmax`; `None` means no
    /// limit.
    pub fn truncate(&self, kmax: Option<u64>, mmax: Option<u32>) -> Truncation<T> {
        let (series, dropped) = self.partition(|md| {
            kmax.map_or(true, |kx| md.fourier_order() <= kx) && mmax.map_or(true, |mx| md.taylor_order() <= mx)
        });
        Truncation {
            series,
            dropped_mass: dropped.mass(),
        }
    }

    /// The coefficient majorant `Σ |c| ρ^{|m|_1} e^{σ |k|_1}` of the
    /// sup-over-polydisc Fourier norm `|||f|||_{σ,ρ}`.
    ///
    /// Overflow yields `+∞` and logs a warning.
    pub fn weighted_norm(&self, widths: AnalyticityWidths<T>) -> T {
        let AnalyticityWidths { sigma, rho } = widths;
        let total: T = self
            .terms
            .iter()
            .map(|(md, c)| {
                let k1 = T::from_u64(md.fourier_order()).unwrap_or_else(T::infinity);
                c.norm() * rho.powi(md.taylor_order() as i32) * (sigma * k1).exp()
            })
            .fold(T::zero(), |a, b| a + b);
        if total.is_infinite() || total.is_nan() {
            log::warn!(
                "weighted norm overflowed at sigma = {sigma}, rho = {rho} over {} terms",
                self.len()
            );
            return T::infinity();
        }
        total
    }

    pub fn scale(&self, factor: T) -> Self {
        self.scale_complex(Complex::new(factor, T::zero()))
    }

    pub fn scale_complex(&self, factor: Complex<T>) -> Self {
        let mut acc = Accumulator::new(self.dim);
        for (md, c) in &self.terms {
            acc.push(md.clone(), *c * factor);
        }
        acc.finish()
    }

    /// `a·self + b·other` with a single rounding per coefficient.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Self {
        self.check_dim(other);
        let mut acc = Accumulator::new(self.dim);
        for (md, c) in &self.terms {
            acc.push(md.clone(), c.scale(a));
        }
        for (md, c) in &other.terms {
            acc.push(md.clone(), c.scale(b));
        }
        acc.finish()
    }

    /// Series product.
    pub fn product(&self, other: &Self) -> Self {
        self.check_dim(other);
        let mut acc = Accumulator::new(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let k = ma.k.iter().zip(&mb.k).map(|(x, y)| x + y).collect();
                let m = ma.m.iter().zip(&mb.m).map(|(x, y)| x + y).collect();
                acc.push(Mode { k, m }, *ca * *cb);
            }
        }
        acc.finish()
    }

    pub(crate) fn check_dim(&self, other: &Self) {
        assert_eq!(
            self.dim, other.dim,
            "series dimensions differ ({} vs {})",
            self.dim, other.dim
        );
    }
}

impl<T: Real> Add for &FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn add(self, rhs: Self) -> Self::Output {
        self.linear_combination(T::one(), rhs, T::one())
    }
}

impl<T: Real> Sub for &FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.linear_combination(T::one(), rhs, -T::one())
    }
}

impl<T: Real> Neg for &FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn neg(self) -> Self::Output {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for &FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.product(rhs)
    }
}

impl<T: Real> Add for FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn add(self, rhs: Self) -> Self::Output {
        &self + &rhs
    }
}

impl<T: Real> Sub for FourierTaylorSeries<T> {
    type Output = FourierTaylorSeries<T>;
    fn sub(self, rhs: Self) -> Self::Output {
        &self - &rhs
    }
}

/// Coefficient accumulator that remembers the absolute mass poured into each
/// key, so that results lost in rounding noise cancel to an absent term.
pub(crate) struct Accumulator<T> {
    dim: usize,
    slots: BTreeMap<Mode, (Complex<T>, T)>,
}

impl<T: Real> Accumulator<T> {
    pub(crate) fn new(dim: usize) -> Self {
        Accumulator {
            dim,
            slots: BTreeMap::new(),
        }
    }

    pub(crate) fn push(&mut self, mode: Mode, c: Complex<T>) {
        if c.is_zero() {
            return;
        }
        let slot = self.slots.entry(mode).or_insert((Complex::zero(), T::zero()));
        slot.0 = slot.0 + c;
        slot.1 = slot.1 + c.norm();
    }

    pub(crate) fn finish(self) -> FourierTaylorSeries<T> {
        let noise = T::epsilon() * T::lit(8.0);
        let terms = self
            .slots
            .into_iter()
            .filter(|(_, (c, mass))| !c.is_zero() && c.norm() > noise * *mass)
            .map(|(md, (c, _))| (md, c))
            .collect();
        FourierTaylorSeries { dim: self.dim, terms }
    }
}

impl<T: Real> FourierTaylorSeries<T> {
    /// Constant series `c`.
    pub fn constant(dim: usize, c: T) -> Self {
        Self::monomial(vec![0; dim], vec![0; dim], Complex::new(c, T::zero()))
    }

    /// `I^m` with unit coefficient.
    pub fn action_monomial(m: Vec<u32>) -> Self {
        let dim = m.len();
        Self::monomial(vec![0; dim], m, Complex::one())
    }
}

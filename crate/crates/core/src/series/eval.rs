//! Point evaluation: a direct path on the sparse map and a compiled path for
//! the integrators' inner loops.

use num_complex::Complex;
use num_traits::Zero;

use super::FourierTaylorSeries;
use crate::error::{Error, Result};
use crate::scalar::Real;

impl<T: Real> FourierTaylorSeries<T> {
    /// Complex value `Σ c e^{2πi k·θ} I^m` and the absolute term mass
    /// `Σ |c| |I^m|`.
    pub fn evaluate_complex(&self, theta: &[T], action: &[T]) -> (Complex<T>, T) {
        assert_eq!(theta.len(), self.dim, "angle vector has wrong length");
        assert_eq!(action.len(), self.dim, "action vector has wrong length");
        let mut sum = Complex::zero();
        let mut mass = T::zero();
        for (md, c) in &self.terms {
            let phase_arg =
                md.k.iter()
                    .zip(theta)
                    .fold(T::zero(), |s, (&k, &th)| s + T::from_int(k.into()) * th);
            let phase = Complex::from_polar(T::one(), T::two_pi() * phase_arg);
            let mono =
                md.m.iter()
                    .zip(action)
                    .fold(T::one(), |p, (&e, &x)| p * x.powi(e as i32));
            let term = *c * phase * mono;
            mass = mass + term.norm();
            sum = sum + term;
        }
        (sum, mass)
    }

    /// Real value at `(θ, I)`.
    ///
    /// Fails with [`Error::RealityViolation`] when the imaginary part exceeds
    /// `1e-12` of the absolute term mass.
    pub fn evaluate(&self, theta: &[T], action: &[T]) -> Result<T> {
        let (z, mass) = self.evaluate_complex(theta, action);
        let tolerance = T::tol(1e-12) * mass.max(T::min_positive_value());
        if z.im.abs() > tolerance {
            return Err(Error::RealityViolation {
                residual: z.im.abs().as_f64(),
                tolerance: tolerance.as_f64(),
            });
        }
        Ok(z.re)
    }
}

/// Real-valued series flattened for fast value-and-gradient evaluation.
///
/// Conjugate pairs `(k, m)`, `(−k, m)` collapse into one entry with
/// coefficient `2c`, whose real part of `c e^{2πi k·θ}` is taken. Per-axis
/// phase factors are computed once per call for the distinct `|k_i|` in use.
#[derive(Clone, Debug)]
pub struct CompiledSeries<T> {
    dim: usize,
    coeffs: Vec<Complex<T>>,
    /// Row-major `n_terms × dim`.
    k: Vec<i32>,
    m: Vec<u32>,
    /// Index of `|k_i|` in `axis_freqs[i]`, row-major.
    slot: Vec<usize>,
    axis_freqs: Vec<Vec<i32>>,
    max_power: Vec<u32>,
}

impl<T: Real> CompiledSeries<T> {
    pub fn new(series: &FourierTaylorSeries<T>) -> Result<Self> {
        let defect = series.reality_defect();
        if defect > T::tol(1e-12) {
            return Err(Error::RealityViolation {
                residual: defect.as_f64(),
                tolerance: T::tol(1e-12).as_f64(),
            });
        }
        let dim = series.dim();
        let mut coeffs = Vec::new();
        let mut k = Vec::new();
        let mut m = Vec::new();
        let mut axis_freqs: Vec<Vec<i32>> = vec![Vec::new(); dim];
        let mut max_power = vec![0u32; dim];
        for (md, c) in series.iter() {
            let lead = md.k.iter().find(|&&x| x != 0).copied().unwrap_or(0);
            let c = match lead {
                l if l > 0 => *c + *c,
                0 => Complex::new(c.re, T::zero()),
                _ => continue,
            };
            coeffs.push(c);
            k.extend_from_slice(&md.k);
            m.extend_from_slice(&md.m);
            for i in 0..dim {
                axis_freqs[i].push(md.k[i].abs());
                max_power[i] = max_power[i].max(md.m[i]);
            }
        }
        for f in &mut axis_freqs {
            f.sort_unstable();
            f.dedup();
        }
        let slot = k
            .chunks(dim.max(1))
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, &ki)| axis_freqs[i].binary_search(&ki.abs()).expect("frequency indexed"))
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(CompiledSeries {
            dim,
            coeffs,
            k,
            m,
            slot,
            axis_freqs,
            max_power,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn evaluator(&self) -> Evaluator<'_, T> {
        Evaluator {
            series: self,
            phases: self.axis_freqs.iter().map(|f| vec![Complex::zero(); f.len()]).collect(),
            powers: self.max_power.iter().map(|&p| vec![T::one(); p as usize + 1]).collect(),
        }
    }
}

/// Scratch space for evaluating a [`CompiledSeries`]; one per thread.
pub struct Evaluator<'a, T> {
    series: &'a CompiledSeries<T>,
    phases: Vec<Vec<Complex<T>>>,
    powers: Vec<Vec<T>>,
}

impl<T: Real> Evaluator<'_, T> {
    fn prepare(&mut self, theta: &[T], action: &[T]) {
        let s = self.series;
        for i in 0..s.dim {
            for (slot, &n) in s.axis_freqs[i].iter().enumerate() {
                let arg = T::two_pi() * T::from_int(n.into()) * theta[i];
                let (sin, cos) = arg.sin_cos();
                self.phases[i][slot] = Complex::new(cos, sin);
            }
            let pw = &mut self.powers[i];
            for e in 1..pw.len() {
                pw[e] = pw[e - 1] * action[i];
            }
        }
    }

    #[inline]
    fn phase(&self, row: usize) -> Complex<T> {
        let s = self.series;
        let d = s.dim;
        let mut z = Complex::new(T::one(), T::zero());
        for i in 0..d {
            let ki = s.k[row * d + i];
            if ki == 0 {
                continue;
            }
            let p = self.phases[i][s.slot[row * d + i]];
            z = z * if ki > 0 { p } else { p.conj() };
        }
        z
    }

    pub fn value(&mut self, theta: &[T], action: &[T]) -> T {
        self.prepare(theta, action);
        let s = self.series;
        let d = s.dim;
        let mut total = T::zero();
        for row in 0..s.coeffs.len() {
            let z = s.coeffs[row] * self.phase(row);
            let mono = (0..d).fold(T::one(), |p, i| p * self.powers[i][s.m[row * d + i] as usize]);
            total = total + z.re * mono;
        }
        total
    }

    /// Value and gradients `∂_θ H`, `∂_I H` written into the slices.
    pub fn value_and_gradient(&mut self, theta: &[T], action: &[T], grad_theta: &mut [T], grad_action: &mut [T]) -> T {
        self.prepare(theta, action);
        let s = self.series;
        let d = s.dim;
        grad_theta.iter_mut().for_each(|g| *g = T::zero());
        grad_action.iter_mut().for_each(|g| *g = T::zero());
        let two_pi = T::two_pi();
        let mut total = T::zero();
        for row in 0..s.coeffs.len() {
            let z = s.coeffs[row] * self.phase(row);
            let ms = &s.m[row * d..(row + 1) * d];
            let mono = (0..d).fold(T::one(), |p, i| p * self.powers[i][ms[i] as usize]);
            total = total + z.re * mono;
            for i in 0..d {
                let ki = s.k[row * d + i];
                if ki != 0 {
                    grad_theta[i] = grad_theta[i] - two_pi * T::from_int(ki.into()) * z.im * mono;
                }
                if ms[i] > 0 {
                    let partial = (0..d).fold(T::one(), |p, j| {
                        if j == i {
                            p * T::from_int(ms[i].into()) * self.powers[i][ms[i] as usize - 1]
                        } else {
                            p * self.powers[j][ms[j] as usize]
                        }
                    });
                    grad_action[i] = grad_action[i] + z.re * partial;
                }
            }
        }
        total
    }
}

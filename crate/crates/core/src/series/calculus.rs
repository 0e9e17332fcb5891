//! Exact symbolic derivatives and the Poisson bracket.

use num_complex::Complex;

use super::{Accumulator, FourierTaylorSeries, Mode};
use crate::scalar::Real;

impl<T: Real> FourierTaylorSeries<T> {
    /// `∂f/∂θ_i` (zero-based `i`): multiplies `c_{k,m}` by `2πi k_i`.
    pub fn partial_theta(&self, i: usize) -> Self {
        assert!(i < self.dim, "angle index {i} out of range");
        let mut acc = Accumulator::new(self.dim);
        for (md, c) in &self.terms {
            if md.k[i] != 0 {
                let factor = Complex::new(T::zero(), T::two_pi() * T::from_int(md.k[i].into()));
                acc.push(md.clone(), *c * factor);
            }
        }
        acc.finish()
    }

    /// `∂f/∂I_i` (zero-based `i`): lowers `m_i` by one with factor `m_i`.
    pub fn partial_action(&self, i: usize) -> Self {
        assert!(i < self.dim, "action index {i} out of range");
        let mut acc = Accumulator::new(self.dim);
        for (md, c) in &self.terms {
            if md.m[i] > 0 {
                let mut m = md.m.clone();
                m[i] -= 1;
                acc.push(Mode::new(md.k.clone(), m), c.scale(T::from_int(md.m[i].into())));
            }
        }
        acc.finish()
    }

    /// `{f, g} = Σ_i ∂_{θ_i} f ∂_{I_i} g − ∂_{I_i} f ∂_{θ_i} g`.
    ///
    /// For a pair of terms both products land on the same key
    /// `(k_a + k_b, m_a + m_b − e_i)`, so each pair contributes
    /// `2πi (k_{a,i} m_{b,i} − m_{a,i} k_{b,i}) c_a c_b` there.
    pub fn poisson_bracket(&self, other: &Self) -> Self {
        self.check_dim(other);
        let dim = self.dim;
        let two_pi_i = Complex::new(T::zero(), T::two_pi());
        let mut acc = Accumulator::new(dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let prod = *ca * *cb * two_pi_i;
                let k: Vec<i32> = ma.k.iter().zip(&mb.k).map(|(x, y)| x + y).collect();
                let m_sum: Vec<u32> = ma.m.iter().zip(&mb.m).map(|(x, y)| x + y).collect();
                for i in 0..dim {
                    let weight = i64::from(ma.k[i]) * i64::from(mb.m[i]) - i64::from(ma.m[i]) * i64::from(mb.k[i]);
                    if weight == 0 {
                        continue;
                    }
                    let mut m = m_sum.clone();
                    m[i] -= 1;
                    acc.push(Mode::new(k.clone(), m), prod.scale(T::from_int(weight)));
                }
            }
        }
        acc.finish()
    }

    /// `ω · ∂_θ f`.
    pub fn lie_derivative_linear(&self, omega: &[T]) -> Self {
        assert_eq!(omega.len(), self.dim);
        let mut acc = Accumulator::new(self.dim);
        for (md, c) in &self.terms {
            let dot = omega
                .iter()
                .zip(&md.k)
                .fold(T::zero(), |s, (&w, &k)| s + w * T::from_int(k.into()));
            acc.push(md.clone(), *c * Complex::new(T::zero(), T::two_pi() * dot));
        }
        acc.finish()
    }
}

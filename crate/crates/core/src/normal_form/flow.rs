//! Numerical realization of `Ψ = Φ_{χ_1} ∘ … ∘ Φ_{χ_n}` by time-1 flows of
//! the generators, `θ' = ∂_I χ`, `I' = −∂_θ χ`.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::{CompiledSeries, FourierTaylorSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub struct TransformFlow<T> {
    generators: Vec<CompiledSeries<T>>,
    tolerance: T,
    action_radius: T,
    max_doublings: u32,
}

impl<T: Real> TransformFlow<T> {
    /// Flows with RK4 step doubling until successive endpoints agree to
    /// `1e-10`; any action component leaving `[−radius, radius]` is a
    /// domain escape.
    pub fn new(generators: &[FourierTaylorSeries<T>], action_radius: T) -> Result<Self> {
        let generators = generators.iter().map(CompiledSeries::new).collect::<Result<Vec<_>>>()?;
        if let Some(d) = generators.first().map(CompiledSeries::dim) {
            if generators.iter().any(|g| g.dim() != d) {
                return Err(Error::InvalidArgument("generators of mixed dimension".into()));
            }
        }
        Ok(TransformFlow {
            generators,
            tolerance: T::lit(1e-10),
            action_radius,
            max_doublings: 16,
        })
    }

    pub fn with_tolerance(mut self, tolerance: T) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    fn order(&self, direction: Direction) -> Vec<usize> {
        let n = self.generators.len();
        match direction {
            Direction::Forward => (0..n).rev().collect(),
            Direction::Inverse => (0..n).collect(),
        }
    }

    fn flow(&self, idx: usize, state: &mut [T], time: T, steps: usize) -> Result<()> {
        let g = &self.generators[idx];
        let d = g.dim();
        let mut ev = g.evaluator();
        let mut gt = vec![T::zero(); d];
        let mut ga = vec![T::zero(); d];
        let radius = self.action_radius;
        let mut field = |x: &[T], out: &mut [T]| -> Result<()> {
            if let Some(reached) = x[d..].iter().map(|v| v.abs()).find(|v| !(*v <= radius)) {
                return Err(Error::DomainEscape {
                    radius: radius.as_f64(),
                    reached: reached.as_f64(),
                });
            }
            ev.value_and_gradient(&x[..d], &x[d..], &mut gt, &mut ga);
            for i in 0..d {
                out[i] = ga[i];
                out[d + i] = -gt[i];
            }
            Ok(())
        };
        let h = time / T::from_usize(steps).unwrap();
        let half = h / T::lit(2.0);
        let n = 2 * d;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            vec![T::zero(); n],
            vec![T::zero(); n],
            vec![T::zero(); n],
            vec![T::zero(); n],
            vec![T::zero(); n],
        );
        for _ in 0..steps {
            field(state, &mut k1)?;
            for j in 0..n {
                tmp[j] = state[j] + half * k1[j];
            }
            field(&tmp, &mut k2)?;
            for j in 0..n {
                tmp[j] = state[j] + half * k2[j];
            }
            field(&tmp, &mut k3)?;
            for j in 0..n {
                tmp[j] = state[j] + h * k3[j];
            }
            field(&tmp, &mut k4)?;
            for j in 0..n {
                state[j] = state[j] + h / T::lit(6.0) * (k1[j] + T::lit(2.0) * (k2[j] + k3[j]) + k4[j]);
            }
        }
        field(state, &mut k1)?;
        Ok(())
    }

    fn adaptive_flow(&self, idx: usize, state: &mut [T], time: T) -> Result<usize> {
        let start = state.to_vec();
        let mut coarse = start.clone();
        self.flow(idx, &mut coarse, time, 1)?;
        let mut steps = 1;
        for _ in 0..self.max_doublings {
            steps *= 2;
            let mut fine = start.clone();
            self.flow(idx, &mut fine, time, steps)?;
            let diff = fine
                .iter()
                .zip(&coarse)
                .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
            coarse = fine;
            if diff <= self.tolerance {
                state.copy_from_slice(&coarse);
                return Ok(steps);
            }
        }
        state.copy_from_slice(&coarse);
        log::warn!("generator flow {idx} did not reach tolerance with {steps} steps");
        Ok(steps)
    }

    fn pack(theta: &[T], action: &[T]) -> Result<Vec<T>> {
        if theta.len() != action.len() {
            return Err(Error::InvalidArgument("angle and action lengths differ".into()));
        }
        Ok(theta.iter().chain(action).copied().collect())
    }

    fn unpack(state: Vec<T>) -> (Vec<T>, Vec<T>) {
        let d = state.len() / 2;
        let mut theta = state;
        let action = theta.split_off(d);
        (theta, action)
    }

    /// Image of `(θ, I)` under `Ψ` (forward) or `Ψ^{-1}` (inverse), with the
    /// step counts used for each generator in application order.
    pub fn apply_with_plan(
        &self,
        theta: &[T],
        action: &[T],
        direction: Direction,
    ) -> Result<(Vec<T>, Vec<T>, Vec<usize>)> {
        let mut state = Self::pack(theta, action)?;
        let time = match direction {
            Direction::Forward => T::one(),
            Direction::Inverse => -T::one(),
        };
        let mut plan = Vec::with_capacity(self.generators.len());
        for idx in self.order(direction) {
            plan.push(self.adaptive_flow(idx, &mut state, time)?);
        }
        let (t, a) = Self::unpack(state);
        Ok((t, a, plan))
    }

    pub fn apply(&self, theta: &[T], action: &[T], direction: Direction) -> Result<(Vec<T>, Vec<T>)> {
        self.apply_with_plan(theta, action, direction).map(|(t, a, _)| (t, a))
    }

    /// Same map with step counts fixed by `plan`, so that nearby points are
    /// mapped by one and the same discrete map.
    pub fn apply_fixed(
        &self,
        theta: &[T],
        action: &[T],
        direction: Direction,
        plan: &[usize],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut state = Self::pack(theta, action)?;
        let time = match direction {
            Direction::Forward => T::one(),
            Direction::Inverse => -T::one(),
        };
        for (idx, &steps) in self.order(direction).into_iter().zip(plan) {
            self.flow(idx, &mut state, time, steps)?;
        }
        Ok(Self::unpack(state))
    }

    /// Central-difference Jacobian of the map in `(θ, I)` coordinates.
    pub fn jacobian(&self, theta: &[T], action: &[T], direction: Direction, step: T) -> Result<Vec<Vec<T>>> {
        let (_, _, plan) = self.apply_with_plan(theta, action, direction)?;
        let base = Self::pack(theta, action)?;
        let n = base.len();
        let d = n / 2;
        let mut jac = vec![vec![T::zero(); n]; n];
        for j in 0..n {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] = plus[j] + step;
            minus[j] = minus[j] - step;
            let (tp, ap) = self.apply_fixed(&plus[..d], &plus[d..], direction, &plan)?;
            let (tm, am) = self.apply_fixed(&minus[..d], &minus[d..], direction, &plan)?;
            for (i, (p, m)) in tp.iter().chain(&ap).zip(tm.iter().chain(&am)).enumerate() {
                jac[i][j] = (*p - *m) / (T::lit(2.0) * step);
            }
        }
        Ok(jac)
    }
}

/// `max |Jᵀ Ω J − Ω|` for the standard symplectic `Ω = [[0, 1], [−1, 0]]`.
pub fn symplectic_defect<T: Real>(jac: &[Vec<T>]) -> T {
    let n = jac.len();
    let d = n / 2;
    let omega = |i: usize, j: usize| -> T {
        if i < d && j == i + d {
            T::one()
        } else if i >= d && j + d == i {
            -T::one()
        } else {
            T::zero()
        }
    };
    let mut worst = T::zero();
    for a in 0..n {
        for b in 0..n {
            let mut s = T::zero();
            for i in 0..n {
                for j in 0..n {
                    let w = omega(i, j);
                    if !w.is_zero() {
                        s = s + jac[i][a] * w * jac[j][b];
                    }
                }
            }
            worst = worst.max((s - omega(a, b)).abs());
        }
    }
    worst
}

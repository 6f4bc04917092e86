//! The four prior terms, evaluated on encoded transitions.
//!
//! Every term works on a [`TransitionStates`] table holding `s_t` and
//! `s_{t+1}` per transition and returns its value together with the gradient
//! with respect to both columns. Indices refer to rows of that table.

use crate::error::{check_len, Error, Result};
use crate::nn::Matrix;

/// Added under the square root when differentiating a norm, so a zero state
/// change does not produce a NaN. The reported value uses the plain norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStates {
    pub current: Matrix,
    pub next: Matrix,
}

/// `∂L/∂s_t` and `∂L/∂s_{t+1}` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrad {
    pub current: Matrix,
    pub next: Matrix,
}

impl TransitionStates {
    pub fn new(current: Matrix, next: Matrix) -> Result<Self> {
        if !current.same_shape(&next) {
            return Err(Error::Shape {
                context: "TransitionStates",
                expected: current.rows() * current.cols(),
                got: next.rows() * next.cols(),
            });
        }
        Ok(Self { current, next })
    }

    pub fn len(&self) -> usize {
        self.current.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.current.cols()
    }

    fn delta(&self, i: usize) -> Vec<f64> {
        self.next.row(i).iter().zip(self.current.row(i)).map(|(a, b)| a - b).collect()
    }

    fn check(&self, idx: usize) -> Result<()> {
        if idx >= self.len() {
            return Err(Error::Contract(format!(
                "transition index {idx} out of range for {} rows",
                self.len()
            )));
        }
        Ok(())
    }

    fn zero_grad(&self) -> StateGrad {
        StateGrad {
            current: Matrix::zeros(self.len(), self.dim()),
            next: Matrix::zeros(self.len(), self.dim()),
        }
    }
}

impl StateGrad {
    pub fn add_scaled(&mut self, other: &StateGrad, scale: f64) -> Result<()> {
        check_len("StateGrad current", self.current.data().len(), other.current.data().len())?;
        check_len("StateGrad next", self.next.data().len(), other.next.data().len())?;
        for (a, b) in self.current.data_mut().iter_mut().zip(other.current.data()) {
            *a += scale * b;
        }
        for (a, b) in self.next.data_mut().iter_mut().zip(other.next.data()) {
            *a += scale * b;
        }
        Ok(())
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adds `scale·v` to `∂/∂s_{t+1}` and subtracts it from `∂/∂s_t`, i.e. the
/// chain rule through `Δs = s_{t+1} − s_t`.
fn push_delta_grad(g: &mut StateGrad, i: usize, v: &[f64], scale: f64) {
    for (k, &x) in v.iter().enumerate() {
        g.next.row_mut(i)[k] += scale * x;
        g.current.row_mut(i)[k] -= scale * x;
    }
}

fn check_pairs(states: &TransitionStates, pairs: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in pairs {
        states.check(a)?;
        states.check(b)?;
    }
    Ok(())
}

/// Temporal coherence: mean `‖Δs_t‖²` over `base`.
pub fn loss_temporal(states: &TransitionStates, base: &[usize]) -> Result<(f64, StateGrad)> {
    let mut g = states.zero_grad();
    if base.is_empty() {
        return Ok((0.0, g));
    }
    for &i in base {
        states.check(i)?;
    }
    let k = base.len() as f64;
    let mut total = 0.0;
    for &i in base {
        let d = states.delta(i);
        total += sq_norm(&d);
        push_delta_grad(&mut g, i, &d, 2.0 / k);
    }
    Ok((total / k, g))
}

/// Proportionality: mean `(‖Δs₂‖ − ‖Δs₁‖)²` over pairs with similar reward
/// change magnitude.
pub fn loss_proportionality(states: &TransitionStates, pairs: &[(usize, usize)]) -> Result<(f64, StateGrad)> {
    let mut g = states.zero_grad();
    if pairs.is_empty() {
        return Ok((0.0, g));
    }
    check_pairs(states, pairs)?;
    let k = pairs.len() as f64;
    let mut total = 0.0;
    for &(a, b) in pairs {
        let d1 = states.delta(a);
        let d2 = states.delta(b);
        let (q1, q2) = (sq_norm(&d1), sq_norm(&d2));
        let diff = q2.sqrt() - q1.sqrt();
        total += diff * diff;
        let n1 = (q1 + NORM_EPS).sqrt();
        let n2 = (q2 + NORM_EPS).sqrt();
        push_delta_grad(&mut g, b, &d2, 2.0 * diff / (n2 * k));
        push_delta_grad(&mut g, a, &d1, -2.0 * diff / (n1 * k));
    }
    Ok((total / k, g))
}

/// Causality: mean `exp(−‖s_{t₂} − s_{t₁}‖²)` over pairs with different
/// rewards.
pub fn loss_causality(states: &TransitionStates, pairs: &[(usize, usize)]) -> Result<(f64, StateGrad)> {
    let mut g = states.zero_grad();
    if pairs.is_empty() {
        return Ok((0.0, g));
    }
    check_pairs(states, pairs)?;
    let k = pairs.len() as f64;
    let mut total = 0.0;
    for &(a, b) in pairs {
        let (s1, s2) = (states.current.row(a), states.current.row(b));
        let e = (-sq_dist(s2, s1)).exp();
        total += e;
        let scale = -2.0 * e / k;
        let diff: Vec<f64> = s2.iter().zip(s1).map(|(x, y)| x - y).collect();
        for (j, d) in diff.iter().enumerate() {
            g.current.row_mut(b)[j] += scale * d;
            g.current.row_mut(a)[j] -= scale * d;
        }
    }
    Ok((total / k, g))
}

/// Repeatability: mean `exp(−‖s_{t₂} − s_{t₁}‖²)·‖Δs₂ − Δs₁‖²` over pairs
/// with similar reward change magnitude.
pub fn loss_repeatability(states: &TransitionStates, pairs: &[(usize, usize)]) -> Result<(f64, StateGrad)> {
    let mut g = states.zero_grad();
    if pairs.is_empty() {
        return Ok((0.0, g));
    }
    check_pairs(states, pairs)?;
    let k = pairs.len() as f64;
    let n = states.dim();
    let mut total = 0.0;
    for &(a, b) in pairs {
        let (s1, s2) = (states.current.row(a), states.current.row(b));
        let diff: Vec<f64> = s2.iter().zip(s1).map(|(x, y)| x - y).collect();
        let e = (-sq_norm(&diff)).exp();
        let d1 = states.delta(a);
        let d2 = states.delta(b);
        let v: Vec<f64> = d2.iter().zip(&d1).map(|(x, y)| x - y).collect();
        let q = sq_norm(&v);
        total += e * q;
        // similarity factor, through s_t of both transitions
        for j in 0..n {
            let gj = -2.0 * e * q * diff[j] / k;
            g.current.row_mut(b)[j] += gj;
            g.current.row_mut(a)[j] -= gj;
        }
        // change-difference factor, through both Δs
        push_delta_grad(&mut g, b, &v, 2.0 * e / k);
        push_delta_grad(&mut g, a, &v, -2.0 * e / k);
    }
    Ok((total / k, g))
}

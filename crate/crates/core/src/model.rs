//! Two-layer ReLU network, its pseudo-network linearization, and the
//! closed-form hidden-weight gradients.
//!
//! The network is `f_U(x) = Σ_r a_r · max(⟨U_r, x⟩ + b_r, 0)`. Only the hidden
//! matrix `U` trains; the output weights `a` and biases `b` stay at their
//! initial values. The pseudo-network
//! `g_U(x) = Σ_r a_r · ⟨U_r − U_r(0), x⟩ · 1{⟨U_r(0), x⟩ + b_r ≥ 0}`
//! gates the displacement from initialization with the *initial* activation
//! pattern.
//!
//! Activation indicators use `≥ 0` everywhere, so a neuron sitting exactly on
//! its kink counts as active.

use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::error::{FalError, Result};
use crate::linalg::{dot, norm2, Matrix, Vector};
use crate::rng::{purpose, RngStream};
use crate::scalar::Real;

/// Weights of a two-layer ReLU network: hidden `d × m`, output and bias `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    hidden: Matrix<T>,
    output: Vector<T>,
    bias: Vector<T>,
}

impl<T: Real> NetParams<T> {
    pub fn new(hidden: Matrix<T>, output: Vector<T>, bias: Vector<T>) -> Result<Self> {
        let m = hidden.cols();
        for len in [output.len(), bias.len()] {
            if len != m {
                return Err(FalError::DimensionMismatch {
                    expected: m,
                    found: len,
                });
            }
        }
        Ok(Self {
            hidden,
            output,
            bias,
        })
    }

    /// Hidden width `m`.
    pub fn width(&self) -> usize {
        self.hidden.cols()
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.hidden.rows()
    }

    pub fn hidden(&self) -> &Matrix<T> {
        &self.hidden
    }

    pub fn output(&self) -> &Vector<T> {
        &self.output
    }

    pub fn bias(&self) -> &Vector<T> {
        &self.bias
    }

    pub(crate) fn hidden_mut(&mut self) -> &mut Matrix<T> {
        &mut self.hidden
    }

    /// Replaces the hidden matrix; output weights and biases are untouched.
    pub fn set_hidden(&mut self, hidden: Matrix<T>) -> Result<()> {
        if hidden.shape() != self.hidden.shape() {
            return Err(FalError::DimensionMismatch {
                expected: self.hidden.as_slice().len(),
                found: hidden.as_slice().len(),
            });
        }
        self.hidden = hidden;
        Ok(())
    }

    pub fn with_hidden(&self, hidden: Matrix<T>) -> Result<Self> {
        let mut p = self.clone();
        p.set_hidden(hidden)?;
        Ok(p)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(FalError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn pre_activation(&self, r: usize, x: &[T]) -> T {
        dot(self.hidden.column(r), x) + self.bias[r]
    }

    /// Network output without the dimension check.
    #[inline]
    pub(crate) fn eval(&self, x: &[T]) -> T {
        self.hidden
            .columns()
            .zip(self.output.iter().zip(self.bias.iter()))
            .fold(T::zero(), |acc, (u, (&a, &b))| {
                let z = dot(u, x) + b;
                if z > T::zero() {
                    acc + a * z
                } else {
                    acc
                }
            })
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Gradient of `f` with respect to the input: `Σ_r a_r 1{z_r ≥ 0} U_r`.
    pub(crate) fn grad_input_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.input_dim()];
        for (u, (&a, &b)) in self
            .hidden
            .columns()
            .zip(self.output.iter().zip(self.bias.iter()))
        {
            if dot(u, x) + b >= T::zero() {
                for (gi, ui) in g.iter_mut().zip(u) {
                    *gi = *gi + a * *ui;
                }
            }
        }
        g
    }

    pub fn grad_input(&self, x: &[T]) -> Result<Vector<T>> {
        self.check_input(x)?;
        Ok(Vector::from_vec_unchecked(self.grad_input_unchecked(x)))
    }

    /// Lipschitz constant of `x ↦ f(x)` in ℓ₂: `Σ_r |a_r| ‖U_r‖₂`.
    pub fn input_lipschitz(&self) -> T {
        self.hidden
            .columns()
            .zip(self.output.iter())
            .fold(T::zero(), |acc, (u, a)| acc + a.abs() * norm2(u))
    }
}

/// Frozen copy of the initialization `(U(0), a(0), b(0))`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitAnchor<T> {
    init: NetParams<T>,
}

impl<T: Real> InitAnchor<T> {
    pub fn from_params(params: &NetParams<T>) -> Self {
        Self {
            init: params.clone(),
        }
    }

    pub fn hidden0(&self) -> &Matrix<T> {
        &self.init.hidden
    }

    pub fn output0(&self) -> &Vector<T> {
        &self.init.output
    }

    pub fn bias0(&self) -> &Vector<T> {
        &self.init.bias
    }

    /// The network at initialization.
    pub fn initial_params(&self) -> &NetParams<T> {
        &self.init
    }

    /// True when `params` has this anchor's shape and bitwise-identical
    /// output weights and biases.
    pub fn matches(&self, params: &NetParams<T>) -> bool {
        params.hidden.shape() == self.init.hidden.shape()
            && bitwise_eq(&params.output, &self.init.output)
            && bitwise_eq(&params.bias, &self.init.bias)
    }

    fn check(&self, params: &NetParams<T>) -> Result<()> {
        if params.hidden.shape() != self.init.hidden.shape() {
            return Err(FalError::DimensionMismatch {
                expected: self.init.hidden.as_slice().len(),
                found: params.hidden.as_slice().len(),
            });
        }
        Ok(())
    }

    /// `U − U(0)`.
    pub fn displacement(&self, params: &NetParams<T>) -> Result<Matrix<T>> {
        params.hidden.sub(&self.init.hidden)
    }

    /// Initial activation indicator `1{⟨U_r(0), x⟩ + b_r ≥ 0}`.
    #[inline]
    pub fn active_at_init(&self, r: usize, x: &[T]) -> bool {
        self.init.pre_activation(r, x) >= T::zero()
    }

    #[inline]
    pub(crate) fn pseudo_eval(&self, params: &NetParams<T>, x: &[T]) -> T {
        let mut acc = T::zero();
        for r in 0..params.width() {
            if self.active_at_init(r, x) {
                let shift = params
                    .hidden
                    .column(r)
                    .iter()
                    .zip(self.init.hidden.column(r))
                    .zip(x)
                    .fold(T::zero(), |s, ((u, u0), xi)| s + (*u - *u0) * *xi);
                acc = acc + params.output[r] * shift;
            }
        }
        acc
    }
}

fn bitwise_eq<T: Real>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
}

/// Samples the initialization: `a_r ~ U[−m^{-1/3}, m^{-1/3}]`,
/// `U_{i,r}, b_r ~ N(0, 1/m)`.
pub fn init_params<T: Real>(
    m: usize,
    d: usize,
    rng: &RngStream,
) -> Result<(NetParams<T>, InitAnchor<T>)> {
    if m == 0 || d == 0 {
        return Err(FalError::invalid(format!(
            "network width and input dimension must be positive (m={m}, d={d})"
        )));
    }
    let var = 1.0 / m as f64;
    let output = rng
        .derive(&[purpose::INIT_OUTPUT])
        .uniform_sym(m, (m as f64).powf(-1.0 / 3.0))?;
    let hidden_entries = rng.derive(&[purpose::INIT_HIDDEN]).gaussian(d * m, var)?;
    let hidden = Matrix::from_col_major(d, m, hidden_entries.into_vec())?;
    let bias = rng.derive(&[purpose::INIT_BIAS]).gaussian(m, var)?;
    let params = NetParams::new(hidden, output, bias)?;
    let anchor = InitAnchor::from_params(&params);
    Ok((params, anchor))
}

pub fn forward<T: Real>(params: &NetParams<T>, x: &[T]) -> Result<T> {
    params.forward(x)
}

pub fn pseudo_forward<T: Real>(params: &NetParams<T>, anchor: &InitAnchor<T>, x: &[T]) -> Result<T> {
    anchor.check(params)?;
    params.check_input(x)?;
    Ok(anchor.pseudo_eval(params, x))
}

/// Lipschitz convex loss `ℓ(z, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `|z − y|`
    #[default]
    Absolute,
}

impl LossKind {
    #[inline]
    pub fn eval<T: Real>(self, z: T, y: T) -> T {
        match self {
            LossKind::Absolute => (z - y).abs(),
        }
    }

    /// Derivative in the first argument; `0` at the kink.
    #[inline]
    pub fn subgrad<T: Real>(self, z: T, y: T) -> T {
        match self {
            LossKind::Absolute => {
                if z > y {
                    T::one()
                } else if z < y {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Distance from `(z, y)` to the nearest point of non-differentiability.
    pub fn kink_distance<T: Real>(self, z: T, y: T) -> T {
        match self {
            LossKind::Absolute => (z - y).abs(),
        }
    }
}

pub fn loss_eval<T: Real>(kind: LossKind, z: T, y: T) -> T {
    kind.eval(z, y)
}

pub fn loss_subgrad<T: Real>(kind: LossKind, z: T, y: T) -> T {
    kind.subgrad(z, y)
}

fn check_batch<T: Real>(params: &NetParams<T>, batch: &[DataPoint<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(FalError::Empty("gradient batch"));
    }
    for p in batch {
        params.check_input(&p.x)?;
    }
    Ok(())
}

/// Mean loss of the real network over `batch`.
pub fn batch_loss<T: Real>(params: &NetParams<T>, batch: &[DataPoint<T>], loss: LossKind) -> Result<T> {
    check_batch(params, batch)?;
    let total = batch
        .iter()
        .fold(T::zero(), |acc, p| acc + loss.eval(params.eval(&p.x), p.y));
    Ok(total / T::lit(batch.len() as f64))
}

/// Mean loss of the pseudo-network over `batch`.
pub fn pseudo_batch_loss<T: Real>(
    params: &NetParams<T>,
    anchor: &InitAnchor<T>,
    batch: &[DataPoint<T>],
    loss: LossKind,
) -> Result<T> {
    anchor.check(params)?;
    check_batch(params, batch)?;
    let total = batch
        .iter()
        .fold(T::zero(), |acc, p| acc + loss.eval(anchor.pseudo_eval(params, &p.x), p.y));
    Ok(total / T::lit(batch.len() as f64))
}

/// Shared accumulation: column `r` receives `(1/n) Σ_j s_j a_r 1_{rj} x_j`,
/// summed in batch order.
fn accumulate_grad<T: Real>(
    params: &NetParams<T>,
    batch: &[DataPoint<T>],
    loss_slope: impl Fn(&[T], T) -> T,
    active: impl Fn(usize, &[T]) -> bool,
) -> Result<Matrix<T>> {
    let (d, m) = params.hidden.shape();
    let mut grad = Matrix::zeros(d, m)?;
    for p in batch {
        let s = loss_slope(&p.x, p.y);
        if s == T::zero() {
            continue;
        }
        for (r, col) in grad.columns_mut().enumerate() {
            if active(r, &p.x) {
                let w = s * params.output[r];
                for (g, xi) in col.iter_mut().zip(p.x.iter()) {
                    *g = *g + w * *xi;
                }
            }
        }
    }
    let inv_n = T::one() / T::lit(batch.len() as f64);
    for g in grad.columns_mut().flatten() {
        *g = *g * inv_n;
    }
    Ok(grad)
}

/// `∇_U` of the mean real-network loss over `batch`.
pub fn grad_hidden<T: Real>(
    params: &NetParams<T>,
    batch: &[DataPoint<T>],
    loss: LossKind,
) -> Result<Matrix<T>> {
    check_batch(params, batch)?;
    accumulate_grad(
        params,
        batch,
        |x, y| loss.subgrad(params.eval(x), y),
        |r, x| params.pre_activation(r, x) >= T::zero(),
    )
}

/// `∇_U` of the mean pseudo-network loss over `batch`; indicators come from
/// the anchor.
pub fn pseudo_grad_hidden<T: Real>(
    params: &NetParams<T>,
    anchor: &InitAnchor<T>,
    batch: &[DataPoint<T>],
    loss: LossKind,
) -> Result<Matrix<T>> {
    anchor.check(params)?;
    check_batch(params, batch)?;
    accumulate_grad(
        params,
        batch,
        |x, y| loss.subgrad(anchor.pseudo_eval(params, x), y),
        |r, x| anchor.active_at_init(r, x),
    )
}

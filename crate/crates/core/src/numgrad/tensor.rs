//! Dense row-major tensors, trainable parameters, and vector primitives.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type the kernel is generic over. Training and evaluation use `f32`,
/// gradient checks use `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense 2-D tensor, row-major.
///
/// Invariant: `values.len() == rows * cols` and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "tensor dims must be >= 1");
        Tensor2 {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a tensor from row-major values, validating shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows < 1 || cols < 1 {
            return Err(Error::Config(format!(
                "tensor dims must be >= 1, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Config(format!(
                "tensor value count {} does not match shape {rows}x{cols}",
                values.len()
            )));
        }
        let t = Tensor2 { rows, cols, values };
        t.ensure_finite("from_vec")?;
        Ok(t)
    }

    /// Single-row tensor from a slice.
    pub fn row(values: &[T]) -> Result<Self> {
        Self::from_vec(1, values.len().max(1), values.to_vec())
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = T::one();
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    /// The single value of a 1x1 tensor.
    pub fn scalar(&self) -> T {
        debug_assert_eq!((self.rows, self.cols), (1, 1), "scalar() on non-1x1");
        self.values[0]
    }

    pub fn fill(&mut self, v: T) {
        for x in &mut self.values {
            *x = v;
        }
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at flat index {i} of {}x{} tensor ({context})",
                    self.rows, self.cols
                )));
            }
        }
        Ok(())
    }

    /// Matrix product `self * other`. Plain triple loop, fixed summation
    /// order, so results are bit-deterministic.
    pub fn matmul(&self, other: &Tensor2<T>) -> Result<Tensor2<T>> {
        if self.cols != other.rows {
            return Err(Error::Config(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.values[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.values[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + a * *b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`, used by matmul backward without materializing a
    /// transpose.
    pub(crate) fn t_matmul(&self, other: &Tensor2<T>) -> Tensor2<T> {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Tensor2::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            for i in 0..self.cols {
                let a = self.values[r * self.cols + i];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.values[r * other.cols..(r + 1) * other.cols];
                let orow = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + a * *b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub(crate) fn matmul_t(&self, other: &Tensor2<T>) -> Tensor2<T> {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = &self.values[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let brow = &other.values[j * other.cols..(j + 1) * other.cols];
                let mut acc = T::zero();
                for (a, b) in arow.iter().zip(brow.iter()) {
                    acc = acc + *a * *b;
                }
                out.values[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor2<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a = *a + *b;
        }
    }

    /// Column sums collapsed to a single row.
    pub(crate) fn column_sums(&self) -> Tensor2<T> {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c] = out.values[c] + self.values[r * self.cols + c];
            }
        }
        out
    }
}

/// Activation applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Plain (non-recording) affine layer forward: `act(x * w + b)`.
///
/// `b` must be a single row broadcast over the rows of `x`. The recording
/// variant on [`crate::numgrad::Tape`] reuses this implementation, so values
/// agree between the two paths by construction.
pub fn dense_forward<T: Real>(
    x: &Tensor2<T>,
    w: &Tensor2<T>,
    b: &Tensor2<T>,
    activation: Activation,
) -> Result<Tensor2<T>> {
    if x.cols() != w.rows() {
        return Err(Error::Config(format!(
            "dense layer shape mismatch: input {}x{} vs weights {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::Config(format!(
            "dense layer bias shape {}x{} does not match output width {}",
            b.rows(),
            b.cols(),
            w.cols()
        )));
    }
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            let v = out.get(r, c) + b.get(0, c);
            out.set(
                r,
                c,
                match activation {
                    Activation::Identity => v,
                    Activation::Relu => {
                        if v > T::zero() {
                            v
                        } else {
                            T::zero()
                        }
                    }
                },
            );
        }
    }
    Ok(out)
}

fn norm<T: Real>(v: &[T]) -> T {
    let mut acc = T::zero();
    for x in v {
        acc = acc + *x * *x;
    }
    acc.sqrt()
}

/// Cosine similarity `dot(a,b) / (|a||b|)`, in `[-1, 1]`.
///
/// Zero-norm inputs are rejected rather than silently dividing by zero.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Config(format!(
            "cosine similarity needs equal nonempty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::DegenerateInput(
            "cosine similarity of a zero-norm vector".to_string(),
        ));
    }
    let mut dot = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        dot = dot + *x * *y;
    }
    Ok(dot / (na * nb))
}

/// Cosine distance `1 - cosine_similarity`, in `[0, 2]`.
pub fn cosine_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    Ok(T::one() - cosine_similarity(a, b)?)
}

/// A trainable tensor: value plus accumulated gradient of identical shape.
#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub value: Tensor2<T>,
    pub grad: Tensor2<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(value: Tensor2<T>) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        ParamTensor { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Flat, named collection of all trainable parameters of a model.
///
/// The store is the single owner of parameter values and gradients; layers
/// hold [`ParamId`] handles into it. Iteration order is insertion order,
/// which keeps gradient accumulation, optimizer updates, and checkpoint
/// layout deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    params: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor2<T>) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Config(format!("duplicate parameter name: {name}")));
        }
        self.names.push(name.to_string());
        self.params.push(ParamTensor::new(value));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2<T> {
        &self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn num_coords(&self) -> usize {
        self.params.iter().map(|p| p.value.values().len()).sum()
    }
}

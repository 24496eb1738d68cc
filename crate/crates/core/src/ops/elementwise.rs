//! Pointwise operations. Binary operations need equal shapes; the only
//! broadcast allowed is a 0-dimensional scalar operand.

use alloc::format;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

fn is_scalar<T>(t: &Tensor<T>) -> bool
where
    T: Real,
{
    t.shape().is_empty()
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape(), data);
        }
        if is_scalar(tb) {
            let y = tb.item();
            return Ok(ta.map(|x| f(x, y)));
        }
        if is_scalar(ta) {
            let x = ta.item();
            return Ok(tb.map(|y| f(x, y)));
        }
        Err(shape_err(name, format!("operand shapes {:?} and {:?} differ", ta.shape(), tb.shape())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    /// Sums any number of equally shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::MulScalar(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::ln);
        self.push(out, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::sqrt);
        self.push(out, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// `max(x, lo)`; the gradient passes where `x >= lo`.
    pub fn clamp_min(&mut self, x: Var, lo: T) -> Var {
        let out = self.value(x).map(|v| if v >= lo { v } else { lo });
        self.push(out, Op::ClampMin(x, lo))
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Reduces a full-shape gradient onto an operand that may be a broadcast scalar.
fn fit<T: Real>(g: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::scalar(g.sum())
    }
}

pub(crate) fn backward_add<T: Real>(
    graph: &Graph<T>,
    a: Var,
    b: Var,
    g: &Tensor<T>,
    sign_b: T,
    sink: &mut GradSink<'_, T>,
) {
    if sink.wants(a) {
        sink.add(a, fit(g.clone(), graph.value(a)));
    }
    if sink.wants(b) {
        sink.add(b, fit(g.map(|v| v * sign_b), graph.value(b)));
    }
}

fn zip_with<T: Real>(g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if other.shape() == g.shape() {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(g.shape(), data).expect("same shape")
    } else {
        let y = other.item();
        g.map(|x| f(x, y))
    }
}

pub(crate) fn backward_mul<T: Real>(graph: &Graph<T>, a: Var, b: Var, g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let (ta, tb) = (graph.value(a), graph.value(b));
    if sink.wants(a) {
        sink.add(a, fit(zip_with(g, tb, |g, y| g * y), ta));
    }
    if sink.wants(b) {
        sink.add(b, fit(zip_with(g, ta, |g, x| g * x), tb));
    }
}

pub(crate) fn backward_div<T: Real>(graph: &Graph<T>, a: Var, b: Var, g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let (ta, tb) = (graph.value(a), graph.value(b));
    if sink.wants(a) {
        sink.add(a, fit(zip_with(g, tb, |g, y| g / y), ta));
    }
    if sink.wants(b) {
        // d(a/b)/db = -a / b^2, evaluated on the broadcast layout of g.
        let n = g.len();
        let at = |i: usize| if ta.len() == n { ta.data()[i] } else { ta.item() };
        let bt = |i: usize| if tb.len() == n { tb.data()[i] } else { tb.item() };
        let full = Tensor::from_fn(g.shape(), |i| -g.data()[i] * at(i) / (bt(i) * bt(i)));
        sink.add(b, fit(full, tb));
    }
}

pub(crate) fn backward_unary<T: Real>(
    graph: &Graph<T>,
    x: Var,
    y: &Tensor<T>,
    g: &Tensor<T>,
    df: impl Fn(T, T) -> T,
    sink: &mut GradSink<'_, T>,
) {
    let tx = graph.value(x);
    let data = g.data().iter().zip(tx.data()).zip(y.data()).map(|((&g, &x), &y)| g * df(x, y)).collect();
    sink.add(x, Tensor::new(g.shape(), data).expect("same shape"));
}

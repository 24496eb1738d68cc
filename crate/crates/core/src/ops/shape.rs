//! Layout operations: concatenation, slicing, reshaping, permutation and
//! explicit expansion along a unit axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{check_axis, split_at_axis, Tensor};

impl<T: Real> Graph<T> {
    /// Concatenates along `axis`; every other extent must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let first = self.shape(inputs[0]).to_vec();
        check_axis(&first, axis, "concat")?;
        let mut total = 0;
        for (k, &v) in inputs.iter().enumerate() {
            let s = self.shape(v);
            let agree =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(shape_err(
                    "concat",
                    format!("input {} has shape {:?}, incompatible with {:?} outside axis {}", k, s, first, axis),
                ));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Takes `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        check_axis(&s, axis, "slice")?;
        if start + len > s[axis] {
            return Err(shape_err(
                "slice",
                format!("range {}..{} exceeds axis {} extent {}", start, start + len, axis, s[axis]),
            ));
        }
        let (outer, ext, inner) = split_at_axis(&s, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Slice { input, axis, start }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{:?} is not a permutation of the axes of {:?}", perm, s)));
        }
        let out = permute_tensor(self.value(input), perm);
        Ok(self.push(out, Op::Permute { input, perm: perm.to_vec() }))
    }

    /// Repeats a unit axis `n` times. This is the only way to widen a tensor;
    /// binary operations never broadcast implicitly.
    pub fn expand(&mut self, input: Var, axis: usize, n: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        check_axis(&s, axis, "expand")?;
        if s[axis] != 1 {
            return Err(shape_err("expand", format!("axis {} of {:?} must have extent 1", axis, s)));
        }
        let (outer, _, inner) = split_at_axis(&s, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = s;
        shape[axis] = n;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Expand { input, axis }))
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        check_axis(&s, axis, "sum_axis")?;
        let (outer, ext, inner) = split_at_axis(&s, axis);
        let src = self.value(input).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let row = &src[(o * ext + e) * inner..][..inner];
                for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = s;
        shape[axis] = 1;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::SumAxis { input, axis }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::SumAll(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let out = Tensor::scalar(t.sum() / T::cst(t.len() as f64));
        self.push(out, Op::MeanAll(input))
    }
}

pub(crate) fn permute_tensor<T: Real>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let s = t.shape();
    let nd = s.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * s[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let src = t.data();
    for _ in 0..n {
        data.push(src[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permuted shape")
}

pub(crate) fn backward_concat<T: Real>(
    graph: &Graph<T>,
    inputs: &[Var],
    axis: usize,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let (outer, total, inner) = split_at_axis(g.shape(), axis);
    let mut offset = 0;
    for &v in inputs {
        let s = graph.shape(v);
        let ext = s[axis];
        if sink.wants(v) {
            let mut data = Vec::with_capacity(outer * ext * inner);
            for o in 0..outer {
                let base = (o * total + offset) * inner;
                data.extend_from_slice(&g.data()[base..base + ext * inner]);
            }
            sink.add(v, Tensor::new(s, data).expect("shape"));
        }
        offset += ext;
    }
}

pub(crate) fn backward_slice<T: Real>(
    graph: &Graph<T>,
    input: Var,
    axis: usize,
    start: usize,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let s = graph.shape(input);
    let (outer, ext, inner) = split_at_axis(s, axis);
    let len = g.shape()[axis];
    let mut data = vec![T::zero(); s.iter().product()];
    for o in 0..outer {
        let base = (o * ext + start) * inner;
        data[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    sink.add(input, Tensor::new(s, data).expect("shape"));
}

pub(crate) fn backward_permute<T: Real>(input: Var, perm: &[usize], g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    sink.add(input, permute_tensor(g, &inv));
}

pub(crate) fn backward_expand<T: Real>(input: Var, axis: usize, g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let (outer, n, inner) = split_at_axis(g.shape(), axis);
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for e in 0..n {
            let row = &g.data()[(o * n + e) * inner..][..inner];
            for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let mut shape = g.shape().to_vec();
    shape[axis] = 1;
    sink.add(input, Tensor::new(&shape, data).expect("shape"));
}

pub(crate) fn backward_sum_axis<T: Real>(
    graph: &Graph<T>,
    input: Var,
    axis: usize,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let s = graph.shape(input);
    let (outer, ext, inner) = split_at_axis(s, axis);
    let mut data = Vec::with_capacity(outer * ext * inner);
    for o in 0..outer {
        for _ in 0..ext {
            data.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
        }
    }
    sink.add(input, Tensor::new(s, data).expect("shape"));
}

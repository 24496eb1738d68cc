use alloc::format;
use alloc::vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(shape_err("matmul", format!("operands need at least two axes, got {:?} and {:?}", a, b)));
    }
    let (ra, rb) = (a.len(), b.len());
    if a[..ra - 2] != b[..rb - 2] {
        return Err(shape_err("matmul", format!("leading axes differ: {:?} vs {:?}", &a[..ra - 2], &b[..rb - 2])));
    }
    if a[ra - 1] != b[rb - 2] {
        return Err(shape_err(
            "matmul",
            format!("inner extents differ: a has k={} (last axis), b has k={} (second-to-last)", a[ra - 1], b[rb - 2]),
        ));
    }
    Ok(MatDims { batch: a[..ra - 2].iter().product(), m: a[ra - 2], k: a[ra - 1], n: b[rb - 1] })
}

impl<T: Real> Graph<T> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`; the
    /// leading axes must match exactly.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let d = matmul_dims(&sa, &sb)?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        for i in 0..d.batch {
            T::gemm(
                d.m,
                d.k,
                d.n,
                T::one(),
                &ta[i * d.m * d.k..],
                d.k as isize,
                1,
                &tb[i * d.k * d.n..],
                d.n as isize,
                1,
                T::zero(),
                &mut out[i * d.m * d.n..],
                d.n as isize,
                1,
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([d.m, d.n]);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }
}

pub(crate) fn backward_matmul<T: Real>(graph: &Graph<T>, a: Var, b: Var, g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let (va, vb) = (graph.value(a), graph.value(b));
    let d = matmul_dims(va.shape(), vb.shape()).expect("validated");
    let gd = g.data();
    if sink.wants(a) {
        // dA = G B^T
        let mut da = vec![T::zero(); va.len()];
        for i in 0..d.batch {
            T::gemm(
                d.m,
                d.n,
                d.k,
                T::one(),
                &gd[i * d.m * d.n..],
                d.n as isize,
                1,
                &vb.data()[i * d.k * d.n..],
                1,
                d.n as isize,
                T::zero(),
                &mut da[i * d.m * d.k..],
                d.k as isize,
                1,
            );
        }
        sink.add(a, Tensor::new(va.shape(), da).expect("shape"));
    }
    if sink.wants(b) {
        // dB = A^T G
        let mut db = vec![T::zero(); vb.len()];
        for i in 0..d.batch {
            T::gemm(
                d.k,
                d.m,
                d.n,
                T::one(),
                &va.data()[i * d.m * d.k..],
                1,
                d.k as isize,
                &gd[i * d.m * d.n..],
                d.n as isize,
                1,
                T::zero(),
                &mut db[i * d.k * d.n..],
                d.n as isize,
                1,
            );
        }
        sink.add(b, Tensor::new(vb.shape(), db).expect("shape"));
    }
}

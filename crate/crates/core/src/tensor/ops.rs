//! Elementwise and structural tensor operations.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Elementwise sum. This is also the memory-bank write primitive: writes
/// add to the tensor currently in the bank.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.same_shape_check(b, "add")?;
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            let g = |need: bool| need.then(|| ctx.grad_out.to_vec());
            vec![g(ctx.needs[0]), g(ctx.needs[1])]
        }),
    ))
}

/// Elementwise product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.same_shape_check(b, "mul")?;
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(x, y)| *x * *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            let a = &ctx.parents[0];
            let b = &ctx.parents[1];
            let da = ctx.needs[0].then(|| {
                ctx.grad_out.iter().zip(b.data().iter()).map(|(g, y)| *g * *y).collect()
            });
            let db = ctx.needs[1].then(|| {
                ctx.grad_out.iter().zip(a.data().iter()).map(|(g, x)| *g * *x).collect()
            });
            vec![da, db]
        }),
    ))
}

/// Multiply by a constant.
pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    let out: Vec<T> = a.data().iter().map(|x| *x * c).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |ctx| vec![ctx.needs[0].then(|| ctx.grad_out.iter().map(|g| *g * c).collect())]),
    )
}

/// `max(x, slope * x)` with the subgradient at exactly zero fixed to the
/// negative-side slope.
pub fn leaky_relu<T: Scalar>(a: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    let out: Vec<T> = a.data().iter().map(|&x| if x > T::zero() { x } else { s * x }).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let x = ctx.parents[0].data();
                ctx.grad_out
                    .iter()
                    .zip(x.iter())
                    .map(|(g, &v)| if v > T::zero() { *g } else { *g * s })
                    .collect()
            })]
        }),
    )
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for v in a.data().iter() {
        acc += *v;
    }
    Tensor::from_op(
        vec![1],
        vec![acc],
        vec![a.clone()],
        Box::new(|ctx| {
            vec![ctx.needs[0].then(|| vec![ctx.grad_out[0]; ctx.parents[0].numel()])]
        }),
    )
}

/// Concatenate along the channel axis (dim 1). All inputs must agree on
/// every other dimension.
pub fn concat_channels<T: Scalar>(inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.is_empty() {
        return Err(Error::Invalid { what: "concat_channels", detail: "empty input list".into() });
    }
    let first = &inputs[0];
    let rank = first.shape().len();
    if rank < 2 {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            detail: format!("rank {rank} < 2"),
        });
    }
    for (i, t) in inputs.iter().enumerate().skip(1) {
        if t.shape().len() != rank {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                detail: format!("input {i} rank {} vs {}", t.shape().len(), rank),
            });
        }
        for d in 0..rank {
            if d != 1 && t.shape()[d] != first.shape()[d] {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    detail: format!(
                        "input {i} dim {d}: {} vs {}",
                        t.shape()[d],
                        first.shape()[d]
                    ),
                });
            }
        }
    }

    let outer: usize = first.shape()[..1].iter().product();
    let inner: usize = first.shape()[2..].iter().product();
    let channels: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
    let c_total: usize = channels.iter().sum();

    let mut shape = first.shape().to_vec();
    shape[1] = c_total;
    let mut out = vec![T::zero(); outer * c_total * inner];
    for b in 0..outer {
        let mut c_off = 0;
        for t in inputs {
            let c = t.shape()[1];
            let src = t.data();
            let src_base = b * c * inner;
            let dst_base = (b * c_total + c_off) * inner;
            out[dst_base..dst_base + c * inner]
                .copy_from_slice(&src[src_base..src_base + c * inner]);
            c_off += c;
        }
    }

    Ok(Tensor::from_op(
        shape,
        out,
        inputs.to_vec(),
        Box::new(move |ctx| {
            let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(ctx.parents.len());
            let mut c_off = 0;
            for (p, &c) in ctx.parents.iter().zip(&channels) {
                if ctx.needs[grads.len()] {
                    let mut g = vec![T::zero(); p.numel()];
                    for b in 0..outer {
                        let src_base = (b * c_total + c_off) * inner;
                        let dst_base = b * c * inner;
                        g[dst_base..dst_base + c * inner]
                            .copy_from_slice(&ctx.grad_out[src_base..src_base + c * inner]);
                    }
                    grads.push(Some(g));
                } else {
                    grads.push(None);
                }
                c_off += c;
            }
            grads
        }),
    ))
}

/// Rectangular slice: `out = t[starts[0]..starts[0]+lens[0], ...]`.
/// Copies; the backward pass zero-pads back into the source shape.
pub fn slice<T: Scalar>(t: &Tensor<T>, starts: &[usize], lens: &[usize]) -> Result<Tensor<T>> {
    let shape = t.shape();
    if starts.len() != shape.len() || lens.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            op: "slice",
            detail: format!("rank {} with {} ranges", shape.len(), starts.len()),
        });
    }
    for (d, ((&s, &l), &ext)) in starts.iter().zip(lens).zip(shape).enumerate() {
        if l == 0 || s + l > ext {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("dim {d}: [{s}, {}) out of extent {ext}", s + l),
            });
        }
    }

    let src_strides = row_major_strides(shape);
    let out_numel: usize = lens.iter().product();
    let mut out = vec![T::zero(); out_numel];
    {
        let src = t.data();
        let mut idx = vec![0usize; shape.len()];
        for o in out.iter_mut() {
            let mut off = 0;
            for (d, &i) in idx.iter().enumerate() {
                off += (starts[d] + i) * src_strides[d];
            }
            *o = src[off];
            bump_index(&mut idx, lens);
        }
    }

    let starts_v = starts.to_vec();
    let lens_v = lens.to_vec();
    let src_shape = shape.to_vec();
    Ok(Tensor::from_op(
        lens_v.clone(),
        out,
        vec![t.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let strides = row_major_strides(&src_shape);
                let mut g = vec![T::zero(); src_shape.iter().product()];
                let mut idx = vec![0usize; src_shape.len()];
                for go in ctx.grad_out {
                    let mut off = 0;
                    for (d, &i) in idx.iter().enumerate() {
                        off += (starts_v[d] + i) * strides[d];
                    }
                    g[off] += *go;
                    bump_index(&mut idx, &lens_v);
                }
                g
            })]
        }),
    ))
}

/// Same data, new shape (element counts must agree).
pub fn reshape<T: Scalar>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if n != t.numel() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            detail: format!("{} elements into shape {:?}", t.numel(), shape),
        });
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        t.to_vec(),
        vec![t.clone()],
        Box::new(|ctx| vec![ctx.needs[0].then(|| ctx.grad_out.to_vec())]),
    ))
}

/// Gather by a fixed permutation of flat indices: `out[i] = t.flat[perm[i]]`.
/// `perm` must be injective; backward scatters through the inverse map.
pub fn permute_flat<T: Scalar>(
    t: &Tensor<T>,
    perm: Rc<Vec<usize>>,
    shape: &[usize],
) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if n != perm.len() || n != t.numel() {
        return Err(Error::ShapeMismatch {
            op: "permute_flat",
            detail: format!("{} indices for {} elements", perm.len(), t.numel()),
        });
    }
    let src = t.data();
    let out: Vec<T> = perm.iter().map(|&i| src[i]).collect();
    drop(src);
    let src_len = t.numel();
    Ok(Tensor::from_op(
        shape.to_vec(),
        out,
        vec![t.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let mut g = vec![T::zero(); src_len];
                for (go, &i) in ctx.grad_out.iter().zip(perm.iter()) {
                    g[i] += *go;
                }
                g
            })]
        }),
    ))
}

/// Divide the whole tensor by its Euclidean norm (simplified WeightNorm).
/// A small epsilon in the denominator keeps the zero filter finite.
pub fn normalize_filter<T: Scalar>(w: &Tensor<T>) -> Tensor<T> {
    let eps = T::from_f64(1e-12);
    let norm2 = w.data().iter().fold(T::zero(), |acc, &v| acc + v * v);
    let norm = norm2.sqrt();
    let denom = norm + eps;
    let out: Vec<T> = w.data().iter().map(|&v| v / denom).collect();
    Tensor::from_op(
        w.shape().to_vec(),
        out,
        vec![w.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let w = ctx.parents[0].data();
                let dot = ctx
                    .grad_out
                    .iter()
                    .zip(w.iter())
                    .fold(T::zero(), |acc, (g, v)| acc + *g * *v);
                // d/dw_i [w_i / (||w|| + eps)] applied to upstream g:
                //   g_i / denom  -  w_i * <g, w> / (||w|| * denom^2)
                let correction = if norm > T::from_f64(1e-30) {
                    dot / (norm * denom * denom)
                } else {
                    T::zero()
                };
                ctx.grad_out
                    .iter()
                    .zip(w.iter())
                    .map(|(g, v)| *g / denom - *v * correction)
                    .collect()
            })]
        }),
    )
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn bump_index(idx: &mut [usize], lens: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < lens[d] {
            return;
        }
        idx[d] = 0;
    }
}

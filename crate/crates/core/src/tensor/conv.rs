//! Convolution and pooling, implemented as explicit im2col + GEMM.
//! Correctness first; the loop order keeps the inner dimension contiguous
//! so the compiler can vectorize.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub struct ConvArgs {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl Default for ConvArgs {
    fn default() -> Self {
        ConvArgs { stride: 1, dilation: 1, groups: 1, padding: 0 }
    }
}

/// 2D cross-correlation of `input [B, C_in, H, W]` with
/// `weight [C_out, C_in/groups, kH, kW]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, args: &ConvArgs) -> Result<Tensor<T>> {
    let (b, c_in, h, w) = dims4(input, "conv2d input")?;
    let (c_out, c_in_g, kh, kw) = dims4(weight, "conv2d weight")?;
    let ConvArgs { stride, dilation, groups, padding } = *args;

    if stride == 0 || dilation == 0 || groups == 0 {
        return Err(Error::Invalid {
            what: "conv2d",
            detail: format!("stride={stride}, dilation={dilation}, groups={groups} must be >= 1"),
        });
    }
    if c_in % groups != 0 {
        return Err(Error::GroupDivisibility { op: "conv2d input channels", channels: c_in, groups });
    }
    if c_out % groups != 0 {
        return Err(Error::GroupDivisibility { op: "conv2d output channels", channels: c_out, groups });
    }
    if c_in_g != c_in / groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "weight expects {c_in_g} channels per group, input supplies {} ({} / {groups} groups)",
                c_in / groups,
                c_in
            ),
        });
    }
    let kh_eff = (kh - 1) * dilation + 1;
    let kw_eff = (kw - 1) * dilation + 1;
    if kh_eff > h + 2 * padding {
        return Err(Error::WindowExceedsInput { op: "conv2d (height)", window: kh_eff, extent: h + 2 * padding });
    }
    if kw_eff > w + 2 * padding {
        return Err(Error::WindowExceedsInput { op: "conv2d (width)", window: kw_eff, extent: w + 2 * padding });
    }

    let oh = (h + 2 * padding - kh_eff) / stride + 1;
    let ow = (w + 2 * padding - kw_eff) / stride + 1;
    let spatial = oh * ow;
    let k_per_group = c_in_g * kh * kw;
    let c_out_g = c_out / groups;

    let geom = ConvGeom {
        b, c_in, h, w, c_out, kh, kw, stride, dilation, groups, padding, oh, ow,
    };

    let cols = im2col(&input.data(), &geom);
    let wd = weight.data();
    let mut out = vec![T::zero(); b * c_out * spatial];
    for bi in 0..b {
        for g in 0..groups {
            let col_base = bi * (c_in * kh * kw) + g * k_per_group;
            for i in 0..c_out_g {
                let wrow = &wd[(g * c_out_g + i) * k_per_group..(g * c_out_g + i + 1) * k_per_group];
                let orow_base = (bi * c_out + g * c_out_g + i) * spatial;
                let orow = &mut out[orow_base..orow_base + spatial];
                for (k, &wv) in wrow.iter().enumerate() {
                    let crow = &cols[(col_base + k) * spatial..(col_base + k + 1) * spatial];
                    for (o, &c) in orow.iter_mut().zip(crow) {
                        *o += wv * c;
                    }
                }
            }
        }
    }
    drop(wd);

    Ok(Tensor::from_op(
        vec![b, c_out, oh, ow],
        out,
        vec![input.clone(), weight.clone()],
        Box::new(move |ctx| {
            let input = &ctx.parents[0];
            let weight = &ctx.parents[1];
            let g_out = ctx.grad_out;
            let spatial = geom.oh * geom.ow;
            let k_per_group = (geom.c_in / geom.groups) * geom.kh * geom.kw;
            let c_out_g = geom.c_out / geom.groups;

            // The column matrix is recomputed rather than kept alive from
            // the forward pass.
            let cols = if ctx.needs[0] || ctx.needs[1] {
                im2col(&input.data(), &geom)
            } else {
                Vec::new()
            };

            let d_weight = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); weight.numel()];
                for bi in 0..geom.b {
                    for g in 0..geom.groups {
                        let col_base = bi * (geom.c_in * geom.kh * geom.kw) + g * k_per_group;
                        for i in 0..c_out_g {
                            let grow_base = (bi * geom.c_out + g * c_out_g + i) * spatial;
                            let grow = &g_out[grow_base..grow_base + spatial];
                            let dwrow = &mut dw[(g * c_out_g + i) * k_per_group
                                ..(g * c_out_g + i + 1) * k_per_group];
                            for (k, dwv) in dwrow.iter_mut().enumerate() {
                                let crow = &cols[(col_base + k) * spatial..(col_base + k + 1) * spatial];
                                let mut acc = T::zero();
                                for (&gv, &cv) in grow.iter().zip(crow) {
                                    acc += gv * cv;
                                }
                                *dwv += acc;
                            }
                        }
                    }
                }
                dw
            });

            let d_input = ctx.needs[0].then(|| {
                let wd = weight.data();
                let mut dcols = vec![T::zero(); geom.b * geom.c_in * geom.kh * geom.kw * spatial];
                for bi in 0..geom.b {
                    for g in 0..geom.groups {
                        let col_base = bi * (geom.c_in * geom.kh * geom.kw) + g * k_per_group;
                        for i in 0..c_out_g {
                            let wrow = &wd[(g * c_out_g + i) * k_per_group
                                ..(g * c_out_g + i + 1) * k_per_group];
                            let grow_base = (bi * geom.c_out + g * c_out_g + i) * spatial;
                            let grow = &g_out[grow_base..grow_base + spatial];
                            for (k, &wv) in wrow.iter().enumerate() {
                                let drow = &mut dcols
                                    [(col_base + k) * spatial..(col_base + k + 1) * spatial];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                }
                col2im(&dcols, &geom)
            });

            vec![d_input, d_weight]
        }),
    ))
}

#[derive(Clone, Copy)]
struct ConvGeom {
    b: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    groups: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

/// Unfold to a `[B * C_in*kH*kW, oh*ow]` matrix, zero-filled outside the
/// padded input.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let spatial = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.b * g.c_in * g.kh * g.kw * spatial];
    for bi in 0..g.b {
        for c in 0..g.c_in {
            let x_base = (bi * g.c_in + c) * g.h * g.w;
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (bi * g.c_in + c) * g.kh * g.kw + ki * g.kw + kj;
                    let out_base = row * spatial;
                    for oh_i in 0..g.oh {
                        let ih = (oh_i * g.stride + ki * g.dilation) as isize - g.padding as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * g.w;
                        let o_row = out_base + oh_i * g.ow;
                        for ow_i in 0..g.ow {
                            let iw = (ow_i * g.stride + kj * g.dilation) as isize - g.padding as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            cols[o_row + ow_i] = x[x_row + iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column-gradient matrix back onto the input (scatter-add).
fn col2im<T: Scalar>(dcols: &[T], g: &ConvGeom) -> Vec<T> {
    let spatial = g.oh * g.ow;
    let mut dx = vec![T::zero(); g.b * g.c_in * g.h * g.w];
    for bi in 0..g.b {
        for c in 0..g.c_in {
            let x_base = (bi * g.c_in + c) * g.h * g.w;
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (bi * g.c_in + c) * g.kh * g.kw + ki * g.kw + kj;
                    let in_base = row * spatial;
                    for oh_i in 0..g.oh {
                        let ih = (oh_i * g.stride + ki * g.dilation) as isize - g.padding as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * g.w;
                        let i_row = in_base + oh_i * g.ow;
                        for ow_i in 0..g.ow {
                            let iw = (ow_i * g.stride + kj * g.dilation) as isize - g.padding as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            dx[x_row + iw as usize] += dcols[i_row + ow_i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean pooling with square window.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(input, "avg_pool2d input")?;
    if window == 0 || stride == 0 {
        return Err(Error::Invalid {
            what: "avg_pool2d",
            detail: format!("window={window}, stride={stride} must be >= 1"),
        });
    }
    if window > h {
        return Err(Error::WindowExceedsInput { op: "avg_pool2d (height)", window, extent: h });
    }
    if window > w {
        return Err(Error::WindowExceedsInput { op: "avg_pool2d (width)", window, extent: w });
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let inv = T::from_f64(1.0 / (window * window) as f64);

    let x = input.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for bc in 0..b * c {
        let x_base = bc * h * w;
        let o_base = bc * oh * ow;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = T::zero();
                for ki in 0..window {
                    let row = x_base + (oi * stride + ki) * w + oj * stride;
                    for kj in 0..window {
                        acc += x[row + kj];
                    }
                }
                out[o_base + oi * ow + oj] = acc * inv;
            }
        }
    }
    drop(x);

    Ok(Tensor::from_op(
        vec![b, c, oh, ow],
        out,
        vec![input.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); b * c * h * w];
                for bc in 0..b * c {
                    let x_base = bc * h * w;
                    let o_base = bc * oh * ow;
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let g = ctx.grad_out[o_base + oi * ow + oj] * inv;
                            for ki in 0..window {
                                let row = x_base + (oi * stride + ki) * w + oj * stride;
                                for kj in 0..window {
                                    dx[row + kj] += g;
                                }
                            }
                        }
                    }
                }
                dx
            })]
        }),
    ))
}

/// Per-channel spatial mean: `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(input, "global_avg_pool input")?;
    if h == 0 || w == 0 {
        return Err(Error::Invalid { what: "global_avg_pool", detail: "empty spatial extent".into() });
    }
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let x = input.data();
    let mut out = vec![T::zero(); b * c];
    for (bc, o) in out.iter_mut().enumerate() {
        let base = bc * h * w;
        let mut acc = T::zero();
        for v in &x[base..base + h * w] {
            acc += *v;
        }
        *o = acc * inv;
    }
    drop(x);

    Ok(Tensor::from_op(
        vec![b, c],
        out,
        vec![input.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); b * c * h * w];
                for (bc, &g) in ctx.grad_out.iter().enumerate() {
                    let gv = g * inv;
                    for d in &mut dx[bc * h * w..(bc + 1) * h * w] {
                        *d = gv;
                    }
                }
                dx
            })]
        }),
    ))
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &'static str) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch { op: what, detail: format!("expected 4D, got {:?}", s) });
    }
    Ok((s[0], s[1], s[2], s[3]))
}

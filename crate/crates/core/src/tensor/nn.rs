//! Affine map, batch normalization, and the classification loss.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;


use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// `x [B, C] @ w [K, C]^T + b [K]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "linear",
            detail: format!("x {:?}, w {:?}", xs, ws),
        });
    }
    let (batch, c) = (xs[0], xs[1]);
    let (k, wc) = (ws[0], ws[1]);
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "linear",
            detail: format!("inner dims disagree: x has {c}, w has {wc}"),
        });
    }
    if b.shape() != [k] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            detail: format!("bias {:?} for {k} outputs", b.shape()),
        });
    }

    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![T::zero(); batch * k];
    for bi in 0..batch {
        let xrow = &xd[bi * c..(bi + 1) * c];
        let orow = &mut out[bi * k..(bi + 1) * k];
        for (ki, o) in orow.iter_mut().enumerate() {
            let wrow = &wd[ki * c..(ki + 1) * c];
            let mut acc = bd[ki];
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += *xv * *wv;
            }
            *o = acc;
        }
    }
    drop(xd);
    drop(wd);
    drop(bd);

    Ok(Tensor::from_op(
        vec![batch, k],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad_out;
            let dx = ctx.needs[0].then(|| {
                let wd = ctx.parents[1].data();
                let mut dx = vec![T::zero(); batch * c];
                for bi in 0..batch {
                    let grow = &g[bi * k..(bi + 1) * k];
                    let drow = &mut dx[bi * c..(bi + 1) * c];
                    for (ki, &gv) in grow.iter().enumerate() {
                        let wrow = &wd[ki * c..(ki + 1) * c];
                        for (d, wv) in drow.iter_mut().zip(wrow) {
                            *d += gv * *wv;
                        }
                    }
                }
                dx
            });
            let dw = ctx.needs[1].then(|| {
                let xd = ctx.parents[0].data();
                let mut dw = vec![T::zero(); k * c];
                for bi in 0..batch {
                    let grow = &g[bi * k..(bi + 1) * k];
                    let xrow = &xd[bi * c..(bi + 1) * c];
                    for (ki, &gv) in grow.iter().enumerate() {
                        let drow = &mut dw[ki * c..(ki + 1) * c];
                        for (d, xv) in drow.iter_mut().zip(xrow) {
                            *d += gv * *xv;
                        }
                    }
                }
                dw
            });
            let db = ctx.needs[2].then(|| {
                let mut db = vec![T::zero(); k];
                for bi in 0..batch {
                    for (d, gv) in db.iter_mut().zip(&g[bi * k..(bi + 1) * k]) {
                        *d += *gv;
                    }
                }
                db
            });
            vec![dx, dw, db]
        }),
    ))
}

/// Running statistics for one batch-norm site. Updated in place during
/// train-phase forward passes; a site may be wider than any particular use,
/// in which case only the leading `C` entries are touched.
pub struct BnStats<T: Scalar> {
    pub mean: RefCell<Vec<T>>,
    pub var: RefCell<Vec<T>>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(width: usize) -> Self {
        BnStats {
            mean: RefCell::new(vec![T::zero(); width]),
            var: RefCell::new(vec![T::one(); width]),
        }
    }

    pub fn width(&self) -> usize {
        self.mean.borrow().len()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnPhase {
    Train,
    Eval,
}

/// Batch normalization over `[B, C, H, W]`, per-channel.
///
/// Train phase normalizes by batch statistics (biased variance) and folds
/// the exponential moving average into `stats` (unbiased variance, matching
/// the usual convention); eval phase reads `stats` and has no side effects.
/// `stat_offset` selects where this use's `C` channels sit inside the stats
/// buffers.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BnStats<T>,
    stat_offset: usize,
    phase: BnPhase,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            detail: format!("expected 4D input, got {:?}", s),
        });
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            detail: format!("gamma {:?}, beta {:?} for {c} channels", gamma.shape(), beta.shape()),
        });
    }
    if stat_offset + c > stats.width() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            detail: format!("stats width {} < offset {stat_offset} + {c}", stats.width()),
        });
    }

    let n = b * h * w;
    let spatial = h * w;
    let eps_t = T::from_f64(eps);

    match phase {
        BnPhase::Train => {
            if b < 2 {
                return Err(Error::DegenerateBatchStats);
            }
            let xd = x.data();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut acc = T::zero();
                for bi in 0..b {
                    let base = (bi * c + ci) * spatial;
                    for v in &xd[base..base + spatial] {
                        acc += *v;
                    }
                }
                mean[ci] = acc / T::from_usize(n);
            }
            for ci in 0..c {
                let m = mean[ci];
                let mut acc = T::zero();
                for bi in 0..b {
                    let base = (bi * c + ci) * spatial;
                    for v in &xd[base..base + spatial] {
                        let d = *v - m;
                        acc += d * d;
                    }
                }
                var[ci] = acc / T::from_usize(n);
            }

            let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
            let gd = gamma.data();
            let bd = beta.data();
            let mut out = vec![T::zero(); xd.len()];
            let mut xhat = vec![T::zero(); xd.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * spatial;
                    let (m, is, g, be) = (mean[ci], invstd[ci], gd[ci], bd[ci]);
                    for k in 0..spatial {
                        let xh = (xd[base + k] - m) * is;
                        xhat[base + k] = xh;
                        out[base + k] = g * xh + be;
                    }
                }
            }
            drop(xd);
            drop(gd);
            drop(bd);

            // EMA update with the unbiased variance.
            let mom = T::from_f64(momentum);
            let keep = T::one() - mom;
            let unbias = T::from_usize(n) / T::from_usize(n - 1);
            {
                let mut rm = stats.mean.borrow_mut();
                let mut rv = stats.var.borrow_mut();
                for ci in 0..c {
                    rm[stat_offset + ci] = keep * rm[stat_offset + ci] + mom * mean[ci];
                    rv[stat_offset + ci] = keep * rv[stat_offset + ci] + mom * var[ci] * unbias;
                }
            }

            Ok(Tensor::from_op(
                s.to_vec(),
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                Box::new(move |ctx| {
                    let g_out = ctx.grad_out;
                    let gd = ctx.parents[1].data();
                    // Per-channel reductions shared by dx, dgamma, dbeta.
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gx = vec![T::zero(); c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * spatial;
                            let mut a0 = T::zero();
                            let mut a1 = T::zero();
                            for k in 0..spatial {
                                a0 += g_out[base + k];
                                a1 += g_out[base + k] * xhat[base + k];
                            }
                            sum_g[ci] += a0;
                            sum_gx[ci] += a1;
                        }
                    }
                    let dx = ctx.needs[0].then(|| {
                        let n_t = T::from_usize(n);
                        let mut dx = vec![T::zero(); b * c * spatial];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * spatial;
                                let coef = gd[ci] * invstd[ci] / n_t;
                                for k in 0..spatial {
                                    dx[base + k] = coef
                                        * (n_t * g_out[base + k]
                                            - sum_g[ci]
                                            - xhat[base + k] * sum_gx[ci]);
                                }
                            }
                        }
                        dx
                    });
                    let dgamma = ctx.needs[1].then(|| sum_gx.clone());
                    let dbeta = ctx.needs[2].then(|| sum_g.clone());
                    vec![dx, dgamma, dbeta]
                }),
            ))
        }
        BnPhase::Eval => {
            let rm = stats.mean.borrow();
            let rv = stats.var.borrow();
            let invstd: Vec<T> = (0..c)
                .map(|ci| T::one() / (rv[stat_offset + ci] + eps_t).sqrt())
                .collect();
            let mean: Vec<T> = (0..c).map(|ci| rm[stat_offset + ci]).collect();
            drop(rm);
            drop(rv);

            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            let mut out = vec![T::zero(); xd.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * spatial;
                    let (m, is, g, be) = (mean[ci], invstd[ci], gd[ci], bd[ci]);
                    for k in 0..spatial {
                        out[base + k] = g * (xd[base + k] - m) * is + be;
                    }
                }
            }
            drop(xd);
            drop(gd);
            drop(bd);

            Ok(Tensor::from_op(
                s.to_vec(),
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                Box::new(move |ctx| {
                    let g_out = ctx.grad_out;
                    let gd = ctx.parents[1].data();
                    let xd = ctx.parents[0].data();
                    let dx = ctx.needs[0].then(|| {
                        let mut dx = vec![T::zero(); b * c * spatial];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * spatial;
                                let coef = gd[ci] * invstd[ci];
                                for k in 0..spatial {
                                    dx[base + k] = g_out[base + k] * coef;
                                }
                            }
                        }
                        dx
                    });
                    let dgamma = ctx.needs[1].then(|| {
                        let mut dg = vec![T::zero(); c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * spatial;
                                for k in 0..spatial {
                                    dg[ci] += g_out[base + k] * (xd[base + k] - mean[ci]) * invstd[ci];
                                }
                            }
                        }
                        dg
                    });
                    let dbeta = ctx.needs[2].then(|| {
                        let mut db = vec![T::zero(); c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * spatial;
                                for k in 0..spatial {
                                    db[ci] += g_out[base + k];
                                }
                            }
                        }
                        db
                    });
                    vec![dx, dgamma, dbeta]
                }),
            ))
        }
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max-subtraction. Returns a `[1]` tensor.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("expected [B, K] logits, got {:?}", s),
        });
    }
    let (b, k) = (s[0], s[1]);
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} labels for batch {b}", labels.len()),
        });
    }
    for &l in labels {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
    }

    let ld = logits.data();
    let mut probs = vec![T::zero(); b * k];
    let mut loss = T::zero();
    for bi in 0..b {
        let row = &ld[bi * k..(bi + 1) * k];
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut z = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[bi * k + j] = e;
            z += e;
        }
        for p in &mut probs[bi * k..(bi + 1) * k] {
            *p /= z;
        }
        let p_true = probs[bi * k + labels[bi]];
        loss -= (p_true + T::from_f64(1e-300)).ln();
    }
    loss /= T::from_usize(b);
    drop(ld);

    let labels_v = labels.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |ctx| {
            vec![ctx.needs[0].then(|| {
                // d loss / d logits = (softmax - onehot) / B
                let g = ctx.grad_out[0] / T::from_usize(b);
                let mut dl: Vec<T> = probs.iter().map(|&p| p * g).collect();
                for (bi, &l) in labels_v.iter().enumerate() {
                    dl[bi * k + l] -= g;
                }
                dl
            })]
        }),
    ))
}

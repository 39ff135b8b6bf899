//! Instantiation and execution of a sampled architecture.
//!
//! The freely-learned side is one `SharedParams`: a stem conv, four
//! maximal-size convolutions per block shared by all of the block's ops, a
//! 1x1-conv + batch-norm transition per block boundary, and a batch-norm +
//! linear classifier. Ops slice these tensors down to their sampled sizes.
//! The generated side is the per-op 1x1 bottleneck kernel, either sliced
//! from a [`WeightBank`] (search phase, weight-normalized) or freely
//! learned per op (`RetrainParams`, batch-normalized).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::arch::{encode, ArchitectureSpec, OpSpec, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::hypernet::{HyperNet, WeightBank};
use crate::scalar::Scalar;
use crate::tensor::{
    add, avg_pool2d, batch_norm, concat_channels, conv2d, global_avg_pool, leaky_relu, linear,
    slice, softmax_cross_entropy, BnPhase, BnStats, ConvArgs, Tensor,
};

/// Activation slope used throughout the main network.
const ACT_SLOPE: f64 = 0.02;
const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// One batch-norm site: learnable affine at maximal width plus running
/// statistics, sliced down to each use's actual channel count.
pub struct BnSite<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BnStats<T>,
}

impl<T: Scalar> BnSite<T> {
    fn new(width: usize) -> Self {
        BnSite {
            gamma: Tensor::parameter(&[width], vec![T::one(); width]),
            beta: Tensor::parameter(&[width], vec![T::zero(); width]),
            stats: BnStats::new(width),
        }
    }

    fn apply(&self, x: &Tensor<T>, phase: BnPhase) -> Result<Tensor<T>> {
        let c = x.shape()[1];
        let gamma = slice(&self.gamma, &[0], &[c])?;
        let beta = slice(&self.beta, &[0], &[c])?;
        batch_norm(x, &gamma, &beta, &self.stats, 0, phase, BN_MOMENTUM, BN_EPS)
    }

    fn detached(&self) -> BnSite<T> {
        BnSite {
            gamma: self.gamma.detach(),
            beta: self.beta.detach(),
            stats: BnStats {
                mean: self.stats.mean.clone(),
                var: self.stats.var.clone(),
            },
        }
    }
}

struct Transition<T: Scalar> {
    conv: Tensor<T>,
    bn: BnSite<T>,
}

/// Freely-learned parameters, instantiated once per search (or once per
/// retraining run) at maximal slice-source sizes.
pub struct SharedParams<T: Scalar> {
    pub config: SearchSpaceConfig,
    stem: Tensor<T>,
    block_convs: Vec<Vec<Tensor<T>>>,
    transitions: Vec<Transition<T>>,
    classifier_bn: BnSite<T>,
    classifier_w: Tensor<T>,
    classifier_b: Tensor<T>,
}

fn fan_in_init<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let std = libm::sqrt(2.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal(rng) * std)).collect();
    Tensor::parameter(shape, data)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Build the freely-learned inventory for a search space. Deterministic
/// for a fixed seed.
pub fn init_shared<T: Scalar, R: Rng>(config: &SearchSpaceConfig, rng: &mut R) -> Result<SharedParams<T>> {
    config.validate()?;
    let max_bank_ch = *config.bank_channel_choices().iter().max().unwrap();
    let concat_max = config.max_banks * max_bank_ch;
    let k_max = config.max_filter_size();
    let bottleneck_max = 4 * config.max_units;

    let stem = fan_in_init(&[max_bank_ch, config.input_channels, 3, 3], rng);
    let block_convs = (0..config.num_blocks)
        .map(|_| {
            (0..4)
                .map(|_| fan_in_init(&[config.max_units, bottleneck_max, k_max, k_max], rng))
                .collect()
        })
        .collect();
    let transitions = (0..config.num_blocks.saturating_sub(1))
        .map(|_| Transition {
            conv: fan_in_init(&[max_bank_ch, concat_max, 1, 1], rng),
            bn: BnSite::new(concat_max),
        })
        .collect();
    let classifier_bn = BnSite::new(concat_max);
    let classifier_w = fan_in_init(&[config.num_classes, concat_max], rng);
    let classifier_b = Tensor::parameter(&[config.num_classes], vec![T::zero(); config.num_classes]);

    Ok(SharedParams {
        config: config.clone(),
        stem,
        block_convs,
        transitions,
        classifier_bn,
        classifier_w,
        classifier_b,
    })
}

impl<T: Scalar> SharedParams<T> {
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![("shared.stem".into(), self.stem.clone())];
        for (bi, convs) in self.block_convs.iter().enumerate() {
            for (ki, w) in convs.iter().enumerate() {
                out.push((format!("shared.block{bi}.conv{ki}"), w.clone()));
            }
        }
        for (ti, t) in self.transitions.iter().enumerate() {
            out.push((format!("shared.transition{ti}.conv"), t.conv.clone()));
            out.push((format!("shared.transition{ti}.bn.gamma"), t.bn.gamma.clone()));
            out.push((format!("shared.transition{ti}.bn.beta"), t.bn.beta.clone()));
        }
        out.push(("shared.classifier.bn.gamma".into(), self.classifier_bn.gamma.clone()));
        out.push(("shared.classifier.bn.beta".into(), self.classifier_bn.beta.clone()));
        out.push(("shared.classifier.weight".into(), self.classifier_w.clone()));
        out.push(("shared.classifier.bias".into(), self.classifier_b.clone()));
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Running statistics, for checkpointing.
    pub fn named_buffers(&self) -> Vec<(String, &BnStats<T>)> {
        let mut out: Vec<(String, &BnStats<T>)> = Vec::new();
        for (ti, t) in self.transitions.iter().enumerate() {
            out.push((format!("shared.transition{ti}.bn"), &t.bn.stats));
        }
        out.push(("shared.classifier.bn".into(), &self.classifier_bn.stats));
        out
    }

    /// Forward-only view sharing the same buffers.
    pub fn detached(&self) -> SharedParams<T> {
        SharedParams {
            config: self.config.clone(),
            stem: self.stem.detach(),
            block_convs: self
                .block_convs
                .iter()
                .map(|c| c.iter().map(|w| w.detach()).collect())
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| Transition { conv: t.conv.detach(), bn: t.bn.detached() })
                .collect(),
            classifier_bn: self.classifier_bn.detached(),
            classifier_w: self.classifier_w.detach(),
            classifier_b: self.classifier_b.detach(),
        }
    }
}

struct ConvUnit<T: Scalar> {
    bn: BnSite<T>,
    weight: Tensor<T>,
}

struct RetrainOp<T: Scalar> {
    bn_in: BnSite<T>,
    w1x1: Tensor<T>,
    units: Vec<Option<ConvUnit<T>>>,
    fixed: Option<ConvUnit<T>>,
}

/// Per-op free parameters for retraining mode: the 1x1 kernel and each
/// active convolution at its exact sampled size, batch-normalized.
pub struct RetrainParams<T: Scalar> {
    ops: Vec<Vec<RetrainOp<T>>>,
}

pub fn init_retrain<T: Scalar, R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Result<RetrainParams<T>> {
    crate::arch::expect_valid(arch)?;
    let cfg = &arch.config;
    let mut ops = Vec::new();
    for block in &arch.blocks {
        let mut block_ops = Vec::new();
        for op in &block.ops {
            let n_in = op.n_in(block.bank_channels);
            let w_out = cfg.bottleneck_width(n_in, op.n_out);
            let bn_in = BnSite::new(n_in);
            let w1x1 = fan_in_init(&[w_out, n_in, 1, 1], rng);
            let mut units: Vec<Option<ConvUnit<T>>> = Vec::with_capacity(4);
            for path in 0..2 {
                let mut width = w_out;
                for k in 0..2 {
                    let pos = 2 * path + k;
                    if op.conv_mask[pos] {
                        let f = op.filter_sizes[pos];
                        units.push(Some(ConvUnit {
                            bn: BnSite::new(width),
                            weight: fan_in_init(&[op.n_out, width / op.groups, f, f], rng),
                        }));
                        width = op.n_out;
                    } else {
                        units.push(None);
                    }
                }
            }
            let fixed = if op.conv_mask.iter().all(|&m| !m) {
                Some(ConvUnit {
                    bn: BnSite::new(w_out),
                    weight: fan_in_init(&[op.n_out, w_out / op.groups, 3, 3], rng),
                })
            } else {
                None
            };
            block_ops.push(RetrainOp { bn_in, w1x1, units, fixed });
        }
        ops.push(block_ops);
    }
    Ok(RetrainParams { ops })
}

impl<T: Scalar> RetrainParams<T> {
    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for block in &self.ops {
            for op in block {
                out.push(op.bn_in.gamma.clone());
                out.push(op.bn_in.beta.clone());
                out.push(op.w1x1.clone());
                for unit in op.units.iter().chain(core::iter::once(&op.fixed)) {
                    if let Some(u) = unit {
                        out.push(u.bn.gamma.clone());
                        out.push(u.bn.beta.clone());
                        out.push(u.weight.clone());
                    }
                }
            }
        }
        out
    }
}

/// Where an op's 1x1 kernel comes from, which also selects the
/// normalization style: weight-normalized generated kernels during search,
/// batch-normalized free kernels during retraining.
pub enum OpKernels<'a, T: Scalar> {
    Generated(&'a WeightBank<T>),
    Free(&'a RetrainParams<T>),
}

/// Banks a block has had written by the end of its op list (the stem or
/// the incoming transition writes bank 0). Architecture-determined, with
/// no data dependence.
pub fn written_banks(arch: &ArchitectureSpec, block: usize) -> Vec<usize> {
    let mut written = vec![false; arch.blocks[block].bank_count];
    written[0] = true;
    for op in &arch.blocks[block].ops {
        for &b in &op.write_set {
            written[b] = true;
        }
    }
    (0..written.len()).filter(|&b| written[b]).collect()
}

/// Execute the architecture on a batch. `phase` controls batch-norm
/// behavior; eval is deterministic and side-effect free.
pub fn forward<T: Scalar>(
    arch: &ArchitectureSpec,
    kernels: OpKernels<'_, T>,
    shared: &SharedParams<T>,
    x: &Tensor<T>,
    phase: BnPhase,
) -> Result<Tensor<T>> {
    crate::arch::expect_valid(arch)?;
    if arch.config != shared.config {
        return Err(Error::Invalid {
            what: "forward",
            detail: "architecture and shared parameters use different search spaces".into(),
        });
    }
    let cfg = &arch.config;
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != cfg.input_channels {
        return Err(Error::ShapeMismatch {
            op: "forward",
            detail: format!("input {:?} vs {} image channels", xs, cfg.input_channels),
        });
    }
    let halvings = cfg.num_blocks - 1;
    let (b, h, w) = (xs[0], xs[2], xs[3]);
    if h % (1 << halvings) != 0 || w % (1 << halvings) != 0 || h >> halvings == 0 {
        return Err(Error::Invalid {
            what: "forward",
            detail: format!("spatial {h}x{w} not divisible into {} halvings", halvings),
        });
    }

    if let OpKernels::Generated(bank) = &kernels {
        bank.reset_cursor();
    }

    let mut logits = None;
    let mut carry: Option<Tensor<T>> = None; // incoming tensor for the next block's bank 0
    for (bi, block) in arch.blocks.iter().enumerate() {
        let sp_h = h >> bi;
        let sp_w = w >> bi;
        let mut banks: Vec<Tensor<T>> = (0..block.bank_count)
            .map(|_| Tensor::zeros(&[b, block.bank_channels, sp_h, sp_w]))
            .collect();

        // Bank 0 receives the stem (first block) or the transition output.
        if bi == 0 {
            let stem_w = slice(&shared.stem, &[0, 0, 0, 0], &[block.bank_channels, cfg.input_channels, 3, 3])?;
            let y = conv2d(x, &stem_w, &ConvArgs { padding: 1, ..ConvArgs::default() })?;
            banks[0] = add(&banks[0], &y)?;
        } else {
            banks[0] = add(&banks[0], &carry.take().unwrap())?;
        }

        for (oi, op) in block.ops.iter().enumerate() {
            run_op(block.bank_channels, bi, oi, op, &kernels, shared, &mut banks, phase)?;
        }

        let nonempty = written_banks(arch, bi);
        let gathered: Vec<Tensor<T>> = nonempty.iter().map(|&i| banks[i].clone()).collect();
        let t = concat_channels(&gathered)?;
        if bi + 1 < cfg.num_blocks {
            let tr = &shared.transitions[bi];
            let t = tr.bn.apply(&t, phase)?;
            let t = leaky_relu(&t, ACT_SLOPE);
            let next_ch = arch.blocks[bi + 1].bank_channels;
            let cin = t.shape()[1];
            let w_t = slice(&tr.conv, &[0, 0, 0, 0], &[next_ch, cin, 1, 1])?;
            let t = conv2d(&t, &w_t, &ConvArgs::default())?;
            carry = Some(avg_pool2d(&t, 2, 2)?);
        } else {
            let t = shared.classifier_bn.apply(&t, phase)?;
            let t = leaky_relu(&t, ACT_SLOPE);
            let pooled = global_avg_pool(&t)?;
            let cin = pooled.shape()[1];
            let w_c = slice(&shared.classifier_w, &[0, 0], &[cfg.num_classes, cin])?;
            logits = Some(linear(&pooled, &w_c, &shared.classifier_b)?);
        }
    }
    Ok(logits.unwrap())
}

#[allow(clippy::too_many_arguments)]
fn run_op<T: Scalar>(
    bank_channels: usize,
    block_idx: usize,
    op_idx: usize,
    op: &OpSpec,
    kernels: &OpKernels<'_, T>,
    shared: &SharedParams<T>,
    banks: &mut [Tensor<T>],
    phase: BnPhase,
) -> Result<()> {
    let reads: Vec<Tensor<T>> = op.read_set.iter().map(|&i| banks[i].clone()).collect();
    let x_read = concat_channels(&reads)?;
    let n_in = op.n_in(bank_channels);

    // Generated bottleneck (weight-normalized) or free pre-activation
    // (batch-normalized) 1x1.
    let y = match kernels {
        OpKernels::Generated(bank) => {
            let k = bank.slice_layer_weights(n_in, op.n_out)?;
            conv2d(&x_read, &k, &ConvArgs::default())?
        }
        OpKernels::Free(rp) => {
            let rop = &rp.ops[block_idx][op_idx];
            let t = rop.bn_in.apply(&x_read, phase)?;
            let t = leaky_relu(&t, ACT_SLOPE);
            conv2d(&t, &rop.w1x1, &ConvArgs::default())?
        }
    };

    let apply_conv = |h: &Tensor<T>, pos: usize| -> Result<Tensor<T>> {
        let f = if op.conv_mask[pos] { op.filter_sizes[pos] } else { 3 };
        let d = op.dilation;
        let g = op.groups;
        let in_w = h.shape()[1];
        let args = ConvArgs { stride: 1, dilation: d, groups: g, padding: d * (f - 1) / 2 };
        match kernels {
            OpKernels::Generated(_) => {
                let full = &shared.block_convs[block_idx][pos];
                let w = slice(full, &[0, 0, 0, 0], &[op.n_out, in_w / g, f, f])?;
                conv2d(&leaky_relu(h, ACT_SLOPE), &w, &args)
            }
            OpKernels::Free(rp) => {
                let rop = &rp.ops[block_idx][op_idx];
                let unit = if op.conv_mask[pos] {
                    rop.units[pos].as_ref().unwrap()
                } else {
                    rop.fixed.as_ref().unwrap()
                };
                let t = unit.bn.apply(h, phase)?;
                conv2d(&leaky_relu(&t, ACT_SLOPE), &unit.weight, &args)
            }
        }
    };

    // Up to two parallel paths of two convolutions; an op with no active
    // conv runs the single fixed 3x3 path.
    let mut path_outs: Vec<Tensor<T>> = Vec::new();
    for path in 0..2 {
        let active: Vec<usize> = (2 * path..2 * path + 2).filter(|&p| op.conv_mask[p]).collect();
        if active.is_empty() {
            continue;
        }
        let mut hcur = y.clone();
        for pos in active {
            hcur = apply_conv(&hcur, pos)?;
        }
        path_outs.push(hcur);
    }
    let out = if path_outs.is_empty() {
        apply_conv(&y, 0)?
    } else {
        let mut acc = path_outs[0].clone();
        for p in &path_outs[1..] {
            acc = add(&acc, p)?;
        }
        acc
    };

    // Distribute the output over the written banks: channel group g goes
    // to the g-th written bank.
    let (bsz, _, sh, sw) = {
        let s = out.shape();
        (s[0], s[1], s[2], s[3])
    };
    for (gi, &bank_idx) in op.write_set.iter().enumerate() {
        let part = slice(&out, &[0, gi * bank_channels, 0, 0], &[bsz, bank_channels, sh, sw])?;
        banks[bank_idx] = add(&banks[bank_idx], &part)?;
    }
    Ok(())
}

/// Full search-phase tape: encode, generate, execute, cross-entropy.
pub fn smash_loss<T: Scalar>(
    arch: &ArchitectureSpec,
    hyper: &HyperNet<T>,
    shared: &SharedParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    phase: BnPhase,
) -> Result<Tensor<T>> {
    let enc = encode::<T>(arch)?;
    let bank = hyper.generate_weights(&enc)?;
    let logits = forward(arch, OpKernels::Generated(&bank), shared, x, phase)?;
    softmax_cross_entropy(&logits, labels)
}

/// Retraining-phase tape with free per-op weights.
pub fn retrain_loss<T: Scalar>(
    arch: &ArchitectureSpec,
    retrain: &RetrainParams<T>,
    shared: &SharedParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    phase: BnPhase,
) -> Result<Tensor<T>> {
    let logits = forward(arch, OpKernels::Free(retrain), shared, x, phase)?;
    softmax_cross_entropy(&logits, labels)
}

/// d(loss)/d(encoding), treating the one-hot tensor as continuous. Purely
/// diagnostic; parameters stay detached and statistics untouched.
pub fn grad_wrt_encoding<T: Scalar>(
    arch: &ArchitectureSpec,
    hyper: &HyperNet<T>,
    shared: &SharedParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let enc = encode::<T>(arch)?;
    let c_leaf = enc.values().requiring_grad();
    let hyper_frozen = hyper.detached();
    let shared_frozen = shared.detached();
    let bank = hyper_frozen.generate_weights_raw(&c_leaf)?;
    let logits = forward(arch, OpKernels::Generated(&bank), &shared_frozen, x, BnPhase::Eval)?;
    let loss = softmax_cross_entropy(&logits, labels)?;
    loss.backward()?;
    let grad = c_leaf.grad().ok_or(Error::Invalid {
        what: "grad_wrt_encoding",
        detail: "no gradient reached the encoding".into(),
    })?;
    Ok(Tensor::from_vec(c_leaf.shape(), grad))
}

//! One-hot conditioning tensor for the weight generator.
//!
//! Shape `[1, C_enc, (N_max/N)^2, n_ch/D]`. Channels: the first M mark the
//! banks an op reads, the next M the banks it writes, the following d_max
//! are a one-hot of its dilation; the v2 space appends per-position filter
//! one-hots, a group one-hot, and the four conv-mask bits. Each op owns a
//! run of `n_in/D` columns in execution order and populates the leading
//! `n_out * N_max / N^2` rows of its run; everything else stays zero.
//!
//! The tensor alone does not pin down block boundaries or bank counts
//! (unused banks leave no trace), so an [`EncodingTensor`] carries a thin
//! [`EncodingLayout`] beside the data. Decoding reads every per-op field
//! from the tensor and takes only the block partition from the layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    expect_valid, validate, ArchitectureSpec, BlockSpec, OpSpec, SearchSpaceConfig, Variant,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub bank_count: usize,
    pub bank_channels: usize,
    pub op_count: usize,
}

/// Block partition of the encoding columns; everything the one-hot data
/// cannot express on its own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub blocks: Vec<BlockLayout>,
}

pub struct EncodingTensor<T: Scalar> {
    tensor: Tensor<T>,
    layout: EncodingLayout,
}

impl<T: Scalar> Clone for EncodingTensor<T> {
    fn clone(&self) -> Self {
        EncodingTensor { tensor: self.tensor.clone(), layout: self.layout.clone() }
    }
}

impl<T: Scalar> PartialEq for EncodingTensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.tensor.shape() == other.tensor.shape()
            && *self.tensor.data() == *other.tensor.data()
    }
}

impl<T: Scalar> core::fmt::Debug for EncodingTensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "EncodingTensor(shape={:?}, blocks={})",
            self.tensor.shape(),
            self.layout.blocks.len()
        )
    }
}

impl<T: Scalar> EncodingTensor<T> {
    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    /// The raw one-hot tensor — the generator's sole input.
    pub fn values(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn layout(&self) -> &EncodingLayout {
        &self.layout
    }

    /// Number of columns (network depth in input-channel units / D).
    pub fn columns(&self) -> usize {
        self.tensor.shape()[3]
    }
}

struct Geometry {
    c_enc: usize,
    height: usize,
    cols: usize,
}

impl Geometry {
    fn at(&self, ch: usize, h: usize, l: usize) -> usize {
        debug_assert!(ch < self.c_enc && h < self.height && l < self.cols);
        (ch * self.height + h) * self.cols + l
    }
}

/// Populated row extent for an op: `n_out * N_max / N^2`.
fn row_extent(cfg: &SearchSpaceConfig, n_out: usize) -> usize {
    (n_out / cfg.bank_quantum) * (cfg.max_units / cfg.bank_quantum)
}

/// Encode a valid architecture. Column windows follow op execution order.
pub fn encode<T: Scalar>(arch: &ArchitectureSpec) -> Result<EncodingTensor<T>> {
    expect_valid(arch)?;
    let cfg = &arch.config;
    let n_ch = arch.n_ch();
    if n_ch % cfg.depth_divisor != 0 {
        return Err(Error::Divisibility { what: "n_ch", value: n_ch, divisor: cfg.depth_divisor });
    }
    let geom = Geometry {
        c_enc: cfg.enc_channels(),
        height: cfg.enc_height(),
        cols: n_ch / cfg.depth_divisor,
    };
    let m = cfg.max_banks;
    let mut data = vec![T::zero(); geom.c_enc * geom.height * geom.cols];

    let mut cursor = 0usize;
    for (_, block, op) in arch.ops_in_order() {
        let n_in = op.n_in(block.bank_channels);
        let width = n_in / cfg.depth_divisor;
        let rows = row_extent(cfg, op.n_out);
        let mut set = |ch: usize| {
            for h in 0..rows {
                for l in cursor..cursor + width {
                    data[geom.at(ch, h, l)] = T::one();
                }
            }
        };
        for &b in &op.read_set {
            set(b);
        }
        for &b in &op.write_set {
            set(m + b);
        }
        set(2 * m + (op.dilation - 1));
        if cfg.variant == Variant::V2 {
            let fs = &cfg.allowed_filter_sizes;
            let filters_base = 2 * m + cfg.max_dilation;
            let groups_base = filters_base + 4 * fs.len();
            let mask_base = groups_base + cfg.allowed_groups.len();
            for pos in 0..4 {
                if op.conv_mask[pos] {
                    let fi = fs.iter().position(|&f| f == op.filter_sizes[pos]).unwrap();
                    set(filters_base + pos * fs.len() + fi);
                    set(mask_base + pos);
                }
            }
            let gi = cfg.allowed_groups.iter().position(|&g| g == op.groups).unwrap();
            set(groups_base + gi);
        }
        cursor += width;
    }
    debug_assert_eq!(cursor, geom.cols);

    let tensor = Tensor::from_vec(&[1, geom.c_enc, geom.height, geom.cols], data);
    let layout = EncodingLayout {
        blocks: arch
            .blocks
            .iter()
            .map(|b| BlockLayout {
                bank_count: b.bank_count,
                bank_channels: b.bank_channels,
                op_count: b.ops.len(),
            })
            .collect(),
    };
    Ok(EncodingTensor { tensor, layout })
}

/// Reconstruct the architecture an encoding describes. Strict: every cell
/// of every window must match the one-hot pattern the decoded fields imply.
pub fn decode<T: Scalar>(enc: &EncodingTensor<T>, cfg: &SearchSpaceConfig) -> Result<ArchitectureSpec> {
    cfg.validate()?;
    let shape = enc.tensor.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != cfg.enc_channels() || shape[2] != cfg.enc_height() {
        return Err(Error::DecodeError {
            window: (0, 0),
            detail: format!(
                "tensor shape {:?} does not match config (C_enc {}, H {})",
                shape,
                cfg.enc_channels(),
                cfg.enc_height()
            ),
        });
    }
    let geom = Geometry { c_enc: shape[1], height: shape[2], cols: shape[3] };
    let total_ops: usize = enc.layout.blocks.iter().map(|b| b.op_count).sum();
    if total_ops == 0 || geom.cols == 0 {
        return Err(Error::EmptyArchitecture);
    }
    let data = enc.tensor.data();
    let m = cfg.max_banks;
    let on = |ch: usize, h: usize, l: usize| data[geom.at(ch, h, l)].as_f64() > 0.5;

    let mut blocks = Vec::with_capacity(enc.layout.blocks.len());
    let mut cursor = 0usize;
    for bl in &enc.layout.blocks {
        let mut ops = Vec::with_capacity(bl.op_count);
        for _ in 0..bl.op_count {
            if cursor >= geom.cols {
                return Err(Error::DecodeError {
                    window: (cursor, cursor),
                    detail: "ran out of columns before all ops were decoded".into(),
                });
            }
            let read_set: Vec<usize> = (0..m).filter(|&b| on(b, 0, cursor)).collect();
            if read_set.is_empty() {
                return Err(Error::DecodeError {
                    window: (cursor, cursor + 1),
                    detail: "no read banks marked".into(),
                });
            }
            let n_in = read_set.len() * bl.bank_channels;
            if n_in % cfg.depth_divisor != 0 {
                return Err(Error::DecodeError {
                    window: (cursor, cursor + 1),
                    detail: format!("fan-in {n_in} not divisible by D"),
                });
            }
            let width = n_in / cfg.depth_divisor;
            let window = (cursor, cursor + width);
            if window.1 > geom.cols {
                return Err(Error::DecodeError {
                    window,
                    detail: format!("window exceeds {} columns", geom.cols),
                });
            }
            let fail = |detail: alloc::string::String| Error::DecodeError { window, detail };

            let write_set: Vec<usize> = (0..m).filter(|&b| on(m + b, 0, cursor)).collect();
            if write_set.is_empty() {
                return Err(fail("no write banks marked".into()));
            }

            // Row extent uses the first read channel as reference.
            let ref_ch = read_set[0];
            let mut rows = 0;
            while rows < geom.height && on(ref_ch, rows, cursor) {
                rows += 1;
            }
            let n_sq = cfg.bank_quantum * cfg.bank_quantum;
            if rows * n_sq % cfg.max_units != 0 {
                return Err(fail(format!("row extent {rows} is not a legal unit count")));
            }
            let n_out = rows * n_sq / cfg.max_units;
            if n_out != write_set.len() * bl.bank_channels {
                return Err(fail(format!(
                    "{n_out} units vs {} written banks of {} channels",
                    write_set.len(),
                    bl.bank_channels
                )));
            }

            let dilations: Vec<usize> =
                (0..cfg.max_dilation).filter(|&d| on(2 * m + d, 0, cursor)).collect();
            let [dilation] = dilations[..] else {
                return Err(fail(format!("{} dilation bits set", dilations.len())));
            };
            let dilation = dilation + 1;

            let (conv_mask, filter_sizes, groups) = match cfg.variant {
                Variant::V1 => ([false; 4], [3usize; 4], 1),
                Variant::V2 => {
                    let fs = &cfg.allowed_filter_sizes;
                    let filters_base = 2 * m + cfg.max_dilation;
                    let groups_base = filters_base + 4 * fs.len();
                    let mask_base = groups_base + cfg.allowed_groups.len();
                    let mut mask = [false; 4];
                    let mut filters = [3usize; 4];
                    for pos in 0..4 {
                        mask[pos] = on(mask_base + pos, 0, cursor);
                        let hits: Vec<usize> =
                            (0..fs.len()).filter(|&i| on(filters_base + pos * fs.len() + i, 0, cursor)).collect();
                        match (mask[pos], hits.len()) {
                            (true, 1) => filters[pos] = fs[hits[0]],
                            (true, n) => {
                                return Err(fail(format!("position {pos}: {n} filter bits set")))
                            }
                            (false, 0) => {}
                            (false, n) => {
                                return Err(fail(format!(
                                    "position {pos} inactive but {n} filter bits set"
                                )))
                            }
                        }
                    }
                    let g_hits: Vec<usize> = (0..cfg.allowed_groups.len())
                        .filter(|&i| on(groups_base + i, 0, cursor))
                        .collect();
                    let [gi] = g_hits[..] else {
                        return Err(fail(format!("{} group bits set", g_hits.len())));
                    };
                    (mask, filters, cfg.allowed_groups[gi])
                }
            };

            let op = OpSpec { read_set, write_set, n_out, dilation, conv_mask, filter_sizes, groups };

            // Strict whole-window verification against the re-encoded
            // pattern for this op.
            let expected = expected_channels(cfg, &op);
            for ch in 0..geom.c_enc {
                let want_on = expected.contains(&ch);
                for h in 0..geom.height {
                    for l in window.0..window.1 {
                        let want = want_on && h < rows;
                        if on(ch, h, l) != want {
                            return Err(fail(format!(
                                "cell (channel {ch}, row {h}, column {l}) contradicts decoded op"
                            )));
                        }
                    }
                }
            }

            ops.push(op);
            cursor = window.1;
        }
        blocks.push(BlockSpec { bank_count: bl.bank_count, bank_channels: bl.bank_channels, ops });
    }
    if cursor != geom.cols {
        return Err(Error::DecodeError {
            window: (cursor, geom.cols),
            detail: "trailing columns owned by no op".into(),
        });
    }
    drop(data);

    let arch = ArchitectureSpec::new(cfg.clone(), blocks);
    let violations = validate(&arch);
    if !violations.is_empty() {
        return Err(Error::InvalidArchitecture { violations });
    }
    Ok(arch)
}

fn expected_channels(cfg: &SearchSpaceConfig, op: &OpSpec) -> Vec<usize> {
    let m = cfg.max_banks;
    let mut chans: Vec<usize> = op.read_set.clone();
    chans.extend(op.write_set.iter().map(|&b| m + b));
    chans.push(2 * m + (op.dilation - 1));
    if cfg.variant == Variant::V2 {
        let fs = &cfg.allowed_filter_sizes;
        let filters_base = 2 * m + cfg.max_dilation;
        let groups_base = filters_base + 4 * fs.len();
        let mask_base = groups_base + cfg.allowed_groups.len();
        for pos in 0..4 {
            if op.conv_mask[pos] {
                let fi = fs.iter().position(|&f| f == op.filter_sizes[pos]).unwrap();
                chans.push(filters_base + pos * fs.len() + fi);
                chans.push(mask_base + pos);
            }
        }
        let gi = cfg.allowed_groups.iter().position(|&g| g == op.groups).unwrap();
        chans.push(groups_base + gi);
    }
    chans
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptMode {
    ShuffleDilations,
    ShuffleReads,
    SwapLayers,
}

pub struct CorruptOutcome<T: Scalar> {
    pub encoding: EncodingTensor<T>,
    /// False when the architecture had no degree of freedom for this mode
    /// (single op, all dilations equal, ...): the encoding is returned
    /// unchanged.
    pub changed: bool,
}

const CORRUPT_RETRIES: usize = 100;

/// Rewrite the encoding into a valid encoding of a different architecture.
pub fn corrupt_encoding<T: Scalar, R: Rng>(
    enc: &EncodingTensor<T>,
    cfg: &SearchSpaceConfig,
    mode: CorruptMode,
    rng: &mut R,
) -> Result<CorruptOutcome<T>> {
    let arch = decode(enc, cfg)?;

    for _ in 0..CORRUPT_RETRIES {
        let candidate = match mode {
            CorruptMode::ShuffleDilations => shuffle_dilations(&arch, rng),
            CorruptMode::ShuffleReads => shuffle_reads(&arch, rng),
            CorruptMode::SwapLayers => swap_layers(&arch, rng),
        };
        let Some(candidate) = candidate else { break };
        if candidate == arch || !validate(&candidate).is_empty() {
            continue;
        }
        let encoding = encode::<T>(&candidate)?;
        if encoding != *enc {
            return Ok(CorruptOutcome { encoding, changed: true });
        }
    }
    Ok(CorruptOutcome { encoding: enc.clone(), changed: false })
}

fn shuffle_dilations<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Option<ArchitectureSpec> {
    let mut values: Vec<usize> = arch.ops_in_order().map(|(_, _, op)| op.dilation).collect();
    if values.len() < 2 || values.iter().all(|&d| d == values[0]) {
        return None;
    }
    values.shuffle(rng);
    let mut out = arch.clone();
    let mut it = values.into_iter();
    for block in &mut out.blocks {
        for op in &mut block.ops {
            op.dilation = it.next().unwrap();
        }
    }
    Some(out)
}

fn shuffle_reads<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Option<ArchitectureSpec> {
    if !arch.blocks.iter().any(|b| {
        b.ops.len() >= 2 && b.ops.iter().any(|o| o.read_set != b.ops[0].read_set)
    }) {
        return None;
    }
    let mut out = arch.clone();
    for block in &mut out.blocks {
        if block.ops.len() < 2 {
            continue;
        }
        let mut sets: Vec<Vec<usize>> = block.ops.iter().map(|o| o.read_set.clone()).collect();
        sets.shuffle(rng);
        for (op, set) in block.ops.iter_mut().zip(sets) {
            op.read_set = set;
        }
    }
    Some(out)
}

fn swap_layers<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Option<ArchitectureSpec> {
    let eligible: Vec<usize> = arch
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.ops.len() >= 2 && b.ops.iter().any(|o| *o != b.ops[0]))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let bi = eligible[rng.gen_range(0..eligible.len())];
    let mut out = arch.clone();
    let n = out.blocks[bi].ops.len();
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    out.blocks[bi].ops.swap(i, j);
    Some(out)
}

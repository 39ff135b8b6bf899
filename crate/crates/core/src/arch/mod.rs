//! The memory-bank architecture space.
//!
//! A network is a sequence of blocks; each block owns a set of zero-filled
//! memory banks at one spatial resolution. An op reads a subset of banks
//! (channel concatenation), pushes the result through a generated 1x1
//! bottleneck convolution and up to four freely-learned convolutions, and
//! adds its output back across the banks it writes: the op's output units
//! are split into bank-sized channel groups, one group per written bank, so
//! `n_out = |write_set| * bank_channels` always holds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod canonical;
mod encoding;
mod graphviz;
mod sample;

pub use canonical::{canonical_pattern, CanonicalKind};
pub use encoding::{
    corrupt_encoding, decode, encode, CorruptMode, CorruptOutcome, EncodingLayout, EncodingTensor,
};
pub use graphviz::to_graphviz;
pub use sample::{perturb, sample_architecture};

pub const ARCH_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckMode {
    /// 1x1 output is always four times the op's output units.
    Constant4,
    /// 1x1 output equals the incoming channels, capped at twice the output
    /// units.
    V2Capped2,
}

/// Hyperparameters of the search space. `v1()` and `v2()` carry the
/// reference values; the `*_desk` variants shrink the space to sizes where
/// whole searches run in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceConfig {
    pub variant: Variant,
    /// Bank channel quantum N: every bank width and output-unit count is a
    /// multiple of this.
    pub bank_quantum: usize,
    /// Maximum output units per op (N_max). Must be a multiple of N.
    pub max_units: usize,
    /// Depth compression divisor D: one encoding column describes D input
    /// channels.
    pub depth_divisor: usize,
    /// Maximum banks per block (M). Fixes the read/write channel count of
    /// the encoding.
    pub max_banks: usize,
    /// Maximum kernel dilation (d_max).
    pub max_dilation: usize,
    pub num_blocks: usize,
    pub allowed_filter_sizes: Vec<usize>,
    pub allowed_groups: Vec<usize>,
    pub bottleneck: BottleneckMode,
    /// Upper bound on instantiated parameters per sampled network.
    pub param_budget: u64,
    /// Inclusive range for the sampled bank count per block.
    pub banks_per_block: (usize, usize),
    /// Inclusive range for the sampled op count per block.
    pub ops_per_block: (usize, usize),
    /// Weight of the all-four-active conv mask relative to every other
    /// mask's weight of 1 (v2 sampling prior).
    pub all_active_mask_weight: u32,
    pub input_channels: usize,
    pub num_classes: usize,
}

impl SearchSpaceConfig {
    /// Reference v1 space: fixed 6-channel banks, single fixed 3x3 conv per
    /// op, dilation 1..3, units in multiples of 6 up to 42, bottleneck
    /// ratio 4, 16M parameter budget.
    pub fn v1() -> Self {
        SearchSpaceConfig {
            variant: Variant::V1,
            bank_quantum: 6,
            max_units: 42,
            depth_divisor: 3,
            max_banks: 240,
            max_dilation: 3,
            num_blocks: 3,
            allowed_filter_sizes: vec![3],
            allowed_groups: vec![1],
            bottleneck: BottleneckMode::Constant4,
            param_budget: 16_000_000,
            banks_per_block: (1, 240),
            ops_per_block: (1, 12),
            all_active_mask_weight: 1,
            input_channels: 3,
            num_classes: 10,
        }
    }

    /// Reference v2 space: variable bank sizes in multiples of 8 up to 64,
    /// filter sizes {3,5,7} with spatial extent capped at 9, groups over
    /// the factors of 8, bottleneck capped at 2.
    pub fn v2() -> Self {
        SearchSpaceConfig {
            variant: Variant::V2,
            bank_quantum: 8,
            max_units: 64,
            depth_divisor: 4,
            max_banks: 240,
            max_dilation: 4,
            num_blocks: 3,
            allowed_filter_sizes: vec![3, 5, 7],
            allowed_groups: vec![1, 2, 4, 8],
            bottleneck: BottleneckMode::V2Capped2,
            param_budget: 16_000_000,
            banks_per_block: (1, 240),
            ops_per_block: (1, 12),
            all_active_mask_weight: 2,
            input_channels: 3,
            num_classes: 10,
        }
    }

    /// Small v1 space for tests and desk-scale runs.
    pub fn v1_desk() -> Self {
        SearchSpaceConfig {
            max_banks: 6,
            num_blocks: 2,
            param_budget: 2_000_000,
            banks_per_block: (2, 4),
            ops_per_block: (1, 4),
            input_channels: 1,
            ..Self::v1()
        }
    }

    /// Small v2 space for tests. The budget leaves room for the four
    /// shared 7x7 convolutions at maximal width, which alone cost ~3.2M
    /// parameters per block.
    pub fn v2_desk() -> Self {
        SearchSpaceConfig {
            max_banks: 6,
            num_blocks: 2,
            param_budget: 12_000_000,
            banks_per_block: (2, 4),
            ops_per_block: (1, 4),
            input_channels: 1,
            ..Self::v2()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Invalid { what: "search space config", detail });
        if self.bank_quantum == 0 || self.max_units % self.bank_quantum != 0 {
            return fail(format!(
                "max_units {} must be a positive multiple of bank_quantum {}",
                self.max_units, self.bank_quantum
            ));
        }
        if self.max_dilation < 1 {
            return fail("max_dilation must be >= 1".into());
        }
        if self.max_banks < 1 {
            return fail("max_banks must be >= 1".into());
        }
        if self.depth_divisor == 0 {
            return fail("depth_divisor must be >= 1".into());
        }
        if self.num_blocks == 0 {
            return fail("num_blocks must be >= 1".into());
        }
        if self.banks_per_block.0 == 0
            || self.banks_per_block.0 > self.banks_per_block.1
            || self.banks_per_block.1 > self.max_banks
        {
            return fail(format!("banks_per_block range {:?} invalid", self.banks_per_block));
        }
        if self.ops_per_block.0 == 0 || self.ops_per_block.0 > self.ops_per_block.1 {
            return fail(format!("ops_per_block range {:?} invalid", self.ops_per_block));
        }
        if self.allowed_filter_sizes.is_empty() || self.allowed_filter_sizes.iter().any(|&f| f % 2 == 0) {
            return fail("allowed_filter_sizes must be non-empty odd sizes".into());
        }
        if self.allowed_groups.is_empty() || !self.allowed_groups.contains(&1) {
            return fail("allowed_groups must contain 1".into());
        }
        // Per-layer fan-in is a multiple of the bank quantum; the encoding
        // needs every fan-in divisible by the depth divisor.
        if self.bank_quantum % self.depth_divisor != 0 {
            return fail(format!(
                "bank_quantum {} must be divisible by depth_divisor {}",
                self.bank_quantum, self.depth_divisor
            ));
        }
        if self.input_channels == 0 || self.num_classes < 2 {
            return fail("need input_channels >= 1 and num_classes >= 2".into());
        }
        Ok(())
    }

    /// Multiples of the quantum up to `max_units`.
    pub fn unit_choices(&self) -> Vec<usize> {
        (1..=self.max_units / self.bank_quantum).map(|k| k * self.bank_quantum).collect()
    }

    /// Legal bank widths for a block.
    pub fn bank_channel_choices(&self) -> Vec<usize> {
        match self.variant {
            Variant::V1 => vec![self.bank_quantum],
            Variant::V2 => self.unit_choices(),
        }
    }

    /// Channel count of the encoding tensor: read mask, write mask,
    /// dilation one-hot, plus the v2 op-configuration extension.
    pub fn enc_channels(&self) -> usize {
        let base = 2 * self.max_banks + self.max_dilation;
        match self.variant {
            Variant::V1 => base,
            Variant::V2 => base + 4 * self.allowed_filter_sizes.len() + self.allowed_groups.len() + 4,
        }
    }

    /// Height of the encoding tensor: (N_max / N)^2.
    pub fn enc_height(&self) -> usize {
        let r = self.max_units / self.bank_quantum;
        r * r
    }

    /// Weight elements generated per encoding cell (k = D * N^2).
    pub fn compression(&self) -> usize {
        self.depth_divisor * self.bank_quantum * self.bank_quantum
    }

    /// Output channels of the weight generator: 4 * D * N^2.
    pub fn generator_out_channels(&self) -> usize {
        4 * self.compression()
    }

    /// Largest filter size an op may use.
    pub fn max_filter_size(&self) -> usize {
        self.allowed_filter_sizes.iter().copied().max().unwrap_or(3)
    }

    /// Largest dilation legal for a filter of size `f`: the spatial extent
    /// `(f-1)*d + 1` may not exceed 9 in the v2 space.
    pub fn max_dilation_for_filter(&self, f: usize) -> usize {
        match self.variant {
            Variant::V1 => self.max_dilation,
            Variant::V2 => {
                if f <= 1 {
                    self.max_dilation
                } else {
                    self.max_dilation.min(8 / (f - 1)).max(1)
                }
            }
        }
    }

    /// 1x1 bottleneck output width for an op with the given fan-in/out.
    pub fn bottleneck_width(&self, n_in: usize, n_out: usize) -> usize {
        match self.bottleneck {
            BottleneckMode::Constant4 => 4 * n_out,
            BottleneckMode::V2Capped2 => n_in.min(2 * n_out),
        }
    }
}

/// One layer of the main network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSpec {
    /// Banks read, ascending. Their concatenation is the op input.
    pub read_set: Vec<usize>,
    /// Banks written, ascending. Output channel group `g` is added to the
    /// `g`-th written bank.
    pub write_set: Vec<usize>,
    /// Output units; equals `|write_set| * bank_channels`.
    pub n_out: usize,
    /// Dilation applied to every active convolution of this op.
    pub dilation: usize,
    /// Which of the 2x2 conv array is active. All-false selects the single
    /// fixed 3x3 path (the v1 op body).
    pub conv_mask: [bool; 4],
    /// Filter size per conv position; positions with an inactive mask stay
    /// at 3.
    pub filter_sizes: [usize; 4],
    pub groups: usize,
}

impl OpSpec {
    pub fn n_in(&self, bank_channels: usize) -> usize {
        self.read_set.len() * bank_channels
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub bank_count: usize,
    pub bank_channels: usize,
    pub ops: Vec<OpSpec>,
}

/// Complete description of one sampled network, standalone: it embeds the
/// search-space configuration it was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub format_version: u32,
    pub config: SearchSpaceConfig,
    pub blocks: Vec<BlockSpec>,
}

impl ArchitectureSpec {
    pub fn new(config: SearchSpaceConfig, blocks: Vec<BlockSpec>) -> Self {
        ArchitectureSpec { format_version: ARCH_FORMAT_VERSION, config, blocks }
    }

    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }

    /// Total 1x1-conv input channels across all ops (n_ch).
    pub fn n_ch(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.ops.iter().map(|op| op.n_in(b.bank_channels)).sum::<usize>())
            .sum()
    }

    /// Iterate `(block index, op)` in execution order. Encoding columns,
    /// weight slicing, and the forward pass all follow this order.
    pub fn ops_in_order(&self) -> impl Iterator<Item = (usize, &BlockSpec, &OpSpec)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(bi, b)| b.ops.iter().map(move |op| (bi, b, op)))
    }
}

/// Check every structural invariant; an empty list means valid.
pub fn validate(arch: &ArchitectureSpec) -> Vec<String> {
    let mut v = Vec::new();
    let cfg = &arch.config;
    if let Err(e) = cfg.validate() {
        v.push(format!("{e}"));
        return v;
    }
    if arch.format_version != ARCH_FORMAT_VERSION {
        v.push(format!("format_version {} != {}", arch.format_version, ARCH_FORMAT_VERSION));
    }
    if arch.blocks.len() != cfg.num_blocks {
        v.push(format!("{} blocks, config wants {}", arch.blocks.len(), cfg.num_blocks));
    }
    for (bi, block) in arch.blocks.iter().enumerate() {
        if block.bank_count == 0 || block.bank_count > cfg.max_banks {
            v.push(format!("block {bi}: bank_count {} outside [1, {}]", block.bank_count, cfg.max_banks));
        }
        let legal_widths = cfg.bank_channel_choices();
        if !legal_widths.contains(&block.bank_channels) {
            v.push(format!("block {bi}: bank_channels {} not a legal width", block.bank_channels));
        }
        for (oi, op) in block.ops.iter().enumerate() {
            let tag = format!("block {bi} op {oi}");
            if op.read_set.is_empty() {
                v.push(format!("{tag}: read_set empty"));
            }
            if op.write_set.is_empty() {
                v.push(format!("{tag}: write_set empty"));
            }
            for (name, set) in [("read_set", &op.read_set), ("write_set", &op.write_set)] {
                if set.windows(2).any(|w| w[0] >= w[1]) {
                    v.push(format!("{tag}: {name} not strictly ascending"));
                }
                if set.iter().any(|&b| b >= block.bank_count) {
                    v.push(format!("{tag}: {name} references bank >= {}", block.bank_count));
                }
            }
            if op.n_out == 0 || op.n_out % cfg.bank_quantum != 0 {
                v.push(format!("{tag}: n_out {} not a positive multiple of {}", op.n_out, cfg.bank_quantum));
            }
            if op.n_out > cfg.max_units {
                v.push(format!("{tag}: n_out {} exceeds max units {}", op.n_out, cfg.max_units));
            }
            if op.n_out != op.write_set.len() * block.bank_channels {
                v.push(format!(
                    "{tag}: n_out {} != {} written banks x {} channels",
                    op.n_out,
                    op.write_set.len(),
                    block.bank_channels
                ));
            }
            let n_in = op.n_in(block.bank_channels);
            if n_in % cfg.depth_divisor != 0 {
                v.push(format!("{tag}: fan-in {} not divisible by D={}", n_in, cfg.depth_divisor));
            }
            if op.dilation < 1 || op.dilation > cfg.max_dilation {
                v.push(format!("{tag}: dilation {} outside [1, {}]", op.dilation, cfg.max_dilation));
            }
            match cfg.variant {
                Variant::V1 => {
                    if op.conv_mask.iter().any(|&m| m) {
                        v.push(format!("{tag}: v1 ops use the fixed conv path (mask all false)"));
                    }
                    if op.groups != 1 {
                        v.push(format!("{tag}: v1 ops use groups=1"));
                    }
                    if op.filter_sizes != [3, 3, 3, 3] {
                        v.push(format!("{tag}: v1 ops use 3x3 filters"));
                    }
                }
                Variant::V2 => {
                    if !cfg.allowed_groups.contains(&op.groups) {
                        v.push(format!("{tag}: groups {} not allowed", op.groups));
                    }
                    let w_bottleneck = cfg.bottleneck_width(n_in, op.n_out);
                    if op.groups != 0
                        && (op.n_out % op.groups != 0 || w_bottleneck % op.groups != 0)
                    {
                        v.push(format!(
                            "{tag}: groups {} must divide n_out {} and bottleneck width {}",
                            op.groups, op.n_out, w_bottleneck
                        ));
                    }
                    for (pos, (&active, &f)) in op.conv_mask.iter().zip(&op.filter_sizes).enumerate() {
                        if active {
                            if !cfg.allowed_filter_sizes.contains(&f) {
                                v.push(format!("{tag}: filter {f} at position {pos} not allowed"));
                            }
                            if (f - 1) * op.dilation + 1 > 9 {
                                v.push(format!(
                                    "{tag}: filter {f} dilation {} exceeds spatial extent 9",
                                    op.dilation
                                ));
                            }
                        } else if f != 3 {
                            v.push(format!("{tag}: inactive position {pos} must keep filter 3"));
                        }
                    }
                    if op.conv_mask.iter().all(|&m| !m) && 2 * op.dilation + 1 > 9 {
                        v.push(format!("{tag}: fallback 3x3 dilation {} exceeds extent 9", op.dilation));
                    }
                }
            }
        }
    }
    if !v.is_empty() {
        return v;
    }
    let n_ch = arch.n_ch();
    if n_ch % cfg.depth_divisor != 0 {
        v.push(format!("n_ch {} not divisible by D={}", n_ch, cfg.depth_divisor));
    }
    let params = param_count(arch);
    if params > cfg.param_budget {
        v.push(format!("param count {} exceeds budget {}", params, cfg.param_budget));
    }
    v
}

pub fn expect_valid(arch: &ArchitectureSpec) -> Result<()> {
    let violations = validate(arch);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArchitecture { violations })
    }
}

/// Exact count of the parameters the dynamic network instantiates for this
/// architecture: generated 1x1 kernels at their sliced sizes, plus the
/// freely-learned stem, shared conv banks, transitions, and classifier at
/// their maximal (slice-source) sizes.
pub fn param_count(arch: &ArchitectureSpec) -> u64 {
    let cfg = &arch.config;
    let mut total: u64 = 0;

    for (_, block, op) in arch.ops_in_order() {
        let n_in = op.n_in(block.bank_channels);
        let w_out = cfg.bottleneck_width(n_in, op.n_out);
        total += (w_out * n_in) as u64;
    }

    total += free_param_count(cfg);
    total
}

/// Parameters of the freely-learned side alone (independent of the sampled
/// blocks): stem, per-block shared convolutions, transitions, classifier.
pub fn free_param_count(cfg: &SearchSpaceConfig) -> u64 {
    let max_bank_ch = *cfg.bank_channel_choices().iter().max().unwrap();
    let k_max = cfg.max_filter_size();
    let bottleneck_max = 4 * cfg.max_units;
    let concat_max = cfg.max_banks * max_bank_ch;

    let mut total: u64 = 0;
    // Stem: 3x3 conv from the input image into the first bank.
    total += (max_bank_ch * cfg.input_channels * 9) as u64;
    // Four shared convs per block at maximal size.
    total += (cfg.num_blocks * 4 * cfg.max_units * bottleneck_max * k_max * k_max) as u64;
    // Transition per block boundary: batch norm + 1x1 conv.
    let transitions = cfg.num_blocks.saturating_sub(1);
    total += (transitions * (2 * concat_max + max_bank_ch * concat_max)) as u64;
    // Classifier: batch norm + linear with bias.
    total += (2 * concat_max + cfg.num_classes * concat_max + cfg.num_classes) as u64;
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_op_arch() -> ArchitectureSpec {
        let cfg = SearchSpaceConfig { num_blocks: 1, ..SearchSpaceConfig::v1_desk() };
        ArchitectureSpec::new(
            cfg,
            vec![BlockSpec {
                bank_count: 2,
                bank_channels: 6,
                ops: vec![OpSpec {
                    read_set: vec![0],
                    write_set: vec![1],
                    n_out: 6,
                    dilation: 1,
                    conv_mask: [false; 4],
                    filter_sizes: [3; 4],
                    groups: 1,
                }],
            }],
        )
    }

    #[test]
    fn valid_single_op_architecture() {
        assert!(validate(&one_op_arch()).is_empty());
    }

    #[test]
    fn indivisible_units_flagged() {
        let mut a = one_op_arch();
        a.blocks[0].ops[0].n_out = 7;
        let v = validate(&a);
        assert!(v.iter().any(|s| s.contains("multiple of 6")), "{v:?}");
    }

    #[test]
    fn empty_read_set_flagged() {
        let mut a = one_op_arch();
        a.blocks[0].ops[0].read_set.clear();
        let v = validate(&a);
        assert!(v.iter().any(|s| s.contains("read_set empty")));
    }

    #[test]
    fn single_op_generated_count_matches_ratio_four() {
        // One v1 op with fan-in 6 and 6 output units: the 1x1 kernel is
        // 24 x 6 = 144 generated weights.
        let a = one_op_arch();
        let generated = param_count(&a) - free_param_count(&a.config);
        assert_eq!(generated, 144);
    }

    #[test]
    fn empty_blocks_have_no_generated_params() {
        let cfg = SearchSpaceConfig { num_blocks: 1, ..SearchSpaceConfig::v1_desk() };
        let a = ArchitectureSpec::new(
            cfg,
            vec![BlockSpec { bank_count: 1, bank_channels: 6, ops: vec![] }],
        );
        assert_eq!(param_count(&a), free_param_count(&a.config));
    }

    #[test]
    fn v1_reference_values() {
        let cfg = SearchSpaceConfig::v1();
        cfg.validate().unwrap();
        assert_eq!(cfg.bank_quantum, 6);
        assert_eq!(cfg.depth_divisor, 3);
        assert_eq!(cfg.max_dilation, 3);
        assert_eq!(cfg.max_units, 42);
        assert_eq!(cfg.unit_choices(), vec![6, 12, 18, 24, 30, 36, 42]);
        assert_eq!(cfg.generator_out_channels(), 432);
        assert_eq!(cfg.enc_height(), 49);
        assert_eq!(cfg.param_budget, 16_000_000);
    }

    #[test]
    fn arch_serialization_roundtrip() {
        let a = one_op_arch();
        let json = serde_json::to_string(&a).unwrap();
        let back: ArchitectureSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}

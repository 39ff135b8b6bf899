//! Random sampling and local perturbation of architectures.
//!
//! Every categorical choice is drawn uniformly over its legal values; the
//! parameter budget is enforced by resampling whole candidates.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    expect_valid, param_count, ArchitectureSpec, BlockSpec, OpSpec, SearchSpaceConfig, Variant,
};
use crate::error::{Error, Result};

const BUDGET_RETRIES: usize = 1000;
const REPAIR_RETRIES: usize = 100;

/// Draw one architecture block-by-block. `budget` overrides the config's
/// parameter budget when given.
pub fn sample_architecture<R: Rng>(
    config: &SearchSpaceConfig,
    rng: &mut R,
    budget: Option<u64>,
) -> Result<ArchitectureSpec> {
    config.validate()?;
    let budget = budget.unwrap_or(config.param_budget);

    // A minimal candidate (one single-bank op per block) is the cheapest
    // anything can get; an infeasible budget is reported up front.
    let minimal = minimal_cost(config);
    if minimal > budget {
        return Err(Error::BudgetInfeasible { budget, minimum: minimal });
    }

    for _ in 0..BUDGET_RETRIES {
        let arch = sample_unbudgeted(config, rng);
        if param_count(&arch) <= budget {
            debug_assert!(super::validate(&arch).is_empty(), "{:?}", super::validate(&arch));
            return Ok(arch);
        }
    }
    Err(Error::RetryBoundExceeded { what: "budget-constrained sampling", bound: BUDGET_RETRIES })
}

fn minimal_cost(config: &SearchSpaceConfig) -> u64 {
    let bank_ch = *config.bank_channel_choices().iter().min().unwrap();
    let min_ops = config.ops_per_block.0;
    let n_in = bank_ch;
    let n_out = bank_ch;
    let per_op = (config.bottleneck_width(n_in, n_out) * n_in) as u64;
    super::free_param_count(config) + per_op * (min_ops * config.num_blocks) as u64
}

fn sample_unbudgeted<R: Rng>(config: &SearchSpaceConfig, rng: &mut R) -> ArchitectureSpec {
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for _ in 0..config.num_blocks {
        let bank_count = rng.gen_range(config.banks_per_block.0..=config.banks_per_block.1);
        let widths = config.bank_channel_choices();
        let bank_channels = widths[rng.gen_range(0..widths.len())];
        let op_count = rng.gen_range(config.ops_per_block.0..=config.ops_per_block.1);
        let ops = (0..op_count)
            .map(|_| sample_op(config, bank_count, bank_channels, rng))
            .collect();
        blocks.push(BlockSpec { bank_count, bank_channels, ops });
    }
    ArchitectureSpec::new(config.clone(), blocks)
}

fn sample_op<R: Rng>(
    config: &SearchSpaceConfig,
    bank_count: usize,
    bank_channels: usize,
    rng: &mut R,
) -> OpSpec {
    let read_set = sample_nonempty_subset(bank_count, rng);
    let max_writes = (config.max_units / bank_channels).min(bank_count).max(1);
    let writes = rng.gen_range(1..=max_writes);
    let write_set = sample_subset_of_size(bank_count, writes, rng);
    let n_out = writes * bank_channels;

    let (conv_mask, filter_sizes, groups) = match config.variant {
        Variant::V1 => ([false; 4], [3; 4], 1),
        Variant::V2 => {
            let mask = sample_conv_mask(config, rng);
            let mut filters = [3usize; 4];
            for (f, &active) in filters.iter_mut().zip(&mask) {
                if active {
                    *f = config.allowed_filter_sizes
                        [rng.gen_range(0..config.allowed_filter_sizes.len())];
                }
            }
            let groups = config.allowed_groups[rng.gen_range(0..config.allowed_groups.len())];
            (mask, filters, groups)
        }
    };

    let dilation = sample_dilation(config, &conv_mask, &filter_sizes, rng);

    OpSpec { read_set, write_set, n_out, dilation, conv_mask, filter_sizes, groups }
}

fn max_legal_dilation(config: &SearchSpaceConfig, mask: &[bool; 4], filters: &[usize; 4]) -> usize {
    let widest = mask
        .iter()
        .zip(filters)
        .filter(|(&m, _)| m)
        .map(|(_, &f)| f)
        .max()
        .unwrap_or(3); // all-inactive falls back to the fixed 3x3
    config.max_dilation_for_filter(widest)
}

fn sample_dilation<R: Rng>(
    config: &SearchSpaceConfig,
    mask: &[bool; 4],
    filters: &[usize; 4],
    rng: &mut R,
) -> usize {
    rng.gen_range(1..=max_legal_dilation(config, mask, filters))
}

fn sample_conv_mask<R: Rng>(config: &SearchSpaceConfig, rng: &mut R) -> [bool; 4] {
    // 16 masks, each weight 1 except all-active which carries the
    // configured weight.
    let all_active = 15usize;
    let total = 15 + config.all_active_mask_weight as usize;
    let pick = rng.gen_range(0..total);
    let bits = if pick >= all_active { all_active } else { pick };
    [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0]
}

fn sample_nonempty_subset<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    loop {
        let set: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if !set.is_empty() {
            return set;
        }
    }
}

fn sample_subset_of_size<R: Rng>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(size <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut set: Vec<usize> = idx.into_iter().take(size).collect();
    set.sort_unstable();
    set
}

/// Independently resample each categorical element of each op with
/// probability `rate`, then repair any illegal combination locally.
///
/// Elements per op: read set, output units (which carries the write count
/// with it), write-set membership, dilation, and in the v2 space the conv
/// mask, the filter size of each active position, and the group count.
/// Block structure (bank counts and widths) is left alone.
pub fn perturb<R: Rng>(
    arch: &ArchitectureSpec,
    rate: f64,
    rng: &mut R,
) -> Result<ArchitectureSpec> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Invalid {
            what: "perturb",
            detail: alloc::format!("rate {rate} outside [0, 1]"),
        });
    }
    expect_valid(arch)?;
    let config = &arch.config;

    for _ in 0..REPAIR_RETRIES {
        let mut out = arch.clone();
        for block in &mut out.blocks {
            let bank_count = block.bank_count;
            let bank_channels = block.bank_channels;
            for op in &mut block.ops {
                if rng.gen_bool(rate) {
                    op.read_set = sample_nonempty_subset(bank_count, rng);
                }
                if rng.gen_bool(rate) {
                    let max_writes = (config.max_units / bank_channels).min(bank_count).max(1);
                    let writes = rng.gen_range(1..=max_writes);
                    op.n_out = writes * bank_channels;
                    op.write_set = sample_subset_of_size(bank_count, writes, rng);
                }
                if rng.gen_bool(rate) {
                    op.write_set = sample_subset_of_size(bank_count, op.write_set.len(), rng);
                }
                if config.variant == Variant::V2 {
                    if rng.gen_bool(rate) {
                        let mask = sample_conv_mask(config, rng);
                        for pos in 0..4 {
                            if mask[pos] && !op.conv_mask[pos] {
                                op.filter_sizes[pos] = config.allowed_filter_sizes
                                    [rng.gen_range(0..config.allowed_filter_sizes.len())];
                            } else if !mask[pos] {
                                op.filter_sizes[pos] = 3;
                            }
                        }
                        op.conv_mask = mask;
                    }
                    for pos in 0..4 {
                        if op.conv_mask[pos] && rng.gen_bool(rate) {
                            op.filter_sizes[pos] = config.allowed_filter_sizes
                                [rng.gen_range(0..config.allowed_filter_sizes.len())];
                        }
                    }
                    if rng.gen_bool(rate) {
                        op.groups =
                            config.allowed_groups[rng.gen_range(0..config.allowed_groups.len())];
                    }
                }
                if rng.gen_bool(rate) {
                    op.dilation = sample_dilation(config, &op.conv_mask, &op.filter_sizes, rng);
                }
                // Filter-size changes can strand a previously legal
                // dilation; clamp it back into range.
                let max_d = max_legal_dilation(config, &op.conv_mask, &op.filter_sizes);
                if op.dilation > max_d {
                    op.dilation = rng.gen_range(1..=max_d);
                }
            }
        }
        if param_count(&out) <= config.param_budget {
            debug_assert!(super::validate(&out).is_empty(), "{:?}", super::validate(&out));
            return Ok(out);
        }
    }
    Err(Error::RetryBoundExceeded { what: "perturbation repair", bound: REPAIR_RETRIES })
}

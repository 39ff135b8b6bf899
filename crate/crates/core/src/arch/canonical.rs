//! Canonical connectivity patterns expressed as memory-bank reads/writes.
//!
//! These make the "special cases" claim executable: a residual chain keeps
//! one bank it reads and adds to, a dense block reads everything written so
//! far and writes a fresh bank, and a fractal block runs parallel columns
//! into shared merge banks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, BlockSpec, OpSpec, SearchSpaceConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonicalKind {
    ResNet,
    DenseNet,
    FractalNet,
}

/// Build the pattern with `ops_per_block` ops in every block. For the
/// fractal kind the argument is the column count and must be a power of
/// two; a block then holds `2^columns - 1` ops.
pub fn canonical_pattern(
    kind: CanonicalKind,
    ops_per_block: usize,
    config: &SearchSpaceConfig,
) -> Result<ArchitectureSpec> {
    config.validate()?;
    if ops_per_block == 0 {
        return Err(Error::Invalid { what: "canonical_pattern", detail: "need at least one op".into() });
    }
    let bank_channels = config.bank_quantum;

    let block = match kind {
        CanonicalKind::ResNet => {
            let op = |_: usize| op_spec(vec![0], vec![0], bank_channels);
            BlockSpec { bank_count: 1, bank_channels, ops: (0..ops_per_block).map(op).collect() }
        }
        CanonicalKind::DenseNet => {
            let bank_count = ops_per_block + 1;
            if bank_count > config.max_banks {
                return Err(Error::Invalid {
                    what: "canonical_pattern",
                    detail: format!(
                        "densenet with {ops_per_block} ops needs {bank_count} banks, max is {}",
                        config.max_banks
                    ),
                });
            }
            let ops = (0..ops_per_block)
                .map(|i| op_spec((0..=i).collect(), vec![i + 1], bank_channels))
                .collect();
            BlockSpec { bank_count, bank_channels, ops }
        }
        CanonicalKind::FractalNet => {
            if !ops_per_block.is_power_of_two() {
                return Err(Error::Invalid {
                    what: "canonical_pattern",
                    detail: format!("fractal column budget {ops_per_block} must be a power of two"),
                });
            }
            let mut ops = Vec::new();
            let mut next_free = 2usize;
            expand_fractal(ops_per_block, 0, 1, &mut next_free, &mut ops, bank_channels);
            if next_free > config.max_banks {
                return Err(Error::Invalid {
                    what: "canonical_pattern",
                    detail: format!(
                        "fractal with {ops_per_block} columns needs {next_free} banks, max is {}",
                        config.max_banks
                    ),
                });
            }
            BlockSpec { bank_count: next_free, bank_channels, ops }
        }
    };

    let blocks = vec![block; config.num_blocks];
    let arch = ArchitectureSpec::new(config.clone(), blocks);
    super::expect_valid(&arch)?;
    Ok(arch)
}

fn op_spec(read_set: Vec<usize>, write_set: Vec<usize>, bank_channels: usize) -> OpSpec {
    OpSpec {
        n_out: write_set.len() * bank_channels,
        read_set,
        write_set,
        dilation: 1,
        conv_mask: [false; 4],
        filter_sizes: [3; 4],
        groups: 1,
    }
}

/// A fractal with `columns` columns from bank `input` to bank `output`:
/// one direct op in parallel with two stacked half-size fractals through a
/// fresh intermediate bank. Both writes into `output` join additively.
fn expand_fractal(
    columns: usize,
    input: usize,
    output: usize,
    next_free: &mut usize,
    ops: &mut Vec<OpSpec>,
    bank_channels: usize,
) {
    if columns == 1 {
        ops.push(op_spec(vec![input], vec![output], bank_channels));
        return;
    }
    let mid = *next_free;
    *next_free += 1;
    expand_fractal(columns / 2, input, mid, next_free, ops, bank_channels);
    expand_fractal(columns / 2, mid, output, next_free, ops, bank_channels);
    ops.push(op_spec(vec![input], vec![output], bank_channels));
}

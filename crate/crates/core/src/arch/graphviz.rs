//! Dot-format export of an architecture's dataflow.
//!
//! One node per op labelled with its output units and dilation; an edge
//! from op `i` to a later op `j` for every bank `i` writes and `j` reads,
//! plus a self edge when an op reads a bank it also writes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ArchitectureSpec;

pub fn to_graphviz(arch: &ArchitectureSpec) -> String {
    let mut out = String::new();
    out.push_str("digraph architecture {\n");
    out.push_str("  rankdir=TB;\n  node [shape=box];\n");

    let mut op_id = 0usize;
    let mut block_first = Vec::new();
    for (bi, block) in arch.blocks.iter().enumerate() {
        block_first.push(op_id);
        out.push_str(&format!("  subgraph cluster_{bi} {{\n    label=\"block {bi}\";\n"));
        for op in &block.ops {
            out.push_str(&format!(
                "    op{op_id} [label=\"N={} d={}\"];\n",
                op.n_out, op.dilation
            ));
            op_id += 1;
        }
        out.push_str("  }\n");
    }

    let mut id = 0usize;
    for block in &arch.blocks {
        let base = id;
        for (i, op) in block.ops.iter().enumerate() {
            if op.read_set.iter().any(|b| op.write_set.contains(b)) {
                out.push_str(&format!("  op{0} -> op{0};\n", base + i));
            }
            for (j, later) in block.ops.iter().enumerate().skip(i + 1) {
                let banks: Vec<String> = op
                    .write_set
                    .iter()
                    .filter(|b| later.read_set.contains(b))
                    .map(|b| format!("b{b}"))
                    .collect();
                if !banks.is_empty() {
                    out.push_str(&format!(
                        "  op{} -> op{} [label=\"{}\"];\n",
                        base + i,
                        base + j,
                        banks.join(",")
                    ));
                }
            }
            id += 1;
        }
    }

    out.push_str("}\n");
    out
}

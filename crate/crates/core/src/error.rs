//! Error type shared by the core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor operation received incompatible shapes. Names the operation
    /// and the offending dimension.
    ShapeMismatch {
        op: &'static str,
        detail: String,
    },
    /// Channel counts not divisible by the requested group count.
    GroupDivisibility {
        op: &'static str,
        channels: usize,
        groups: usize,
    },
    /// Pooling or convolution window larger than the (padded) input.
    WindowExceedsInput {
        op: &'static str,
        window: usize,
        extent: usize,
    },
    /// Batch statistics are undefined for a single-sample batch.
    DegenerateBatchStats,
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss {
        numel: usize,
    },
    /// A classification label falls outside `[0, num_classes)`.
    LabelOutOfRange {
        label: usize,
        classes: usize,
    },
    /// Cosine annealing queried past the end of the schedule.
    SchedulePastEnd {
        t: usize,
        total: usize,
    },
    /// Optimizer state does not match the parameter list it was built for.
    OptimizerStateMismatch {
        expected: usize,
        got: usize,
    },
    /// The sampling budget cannot fit one minimal op per block.
    BudgetInfeasible {
        budget: u64,
        minimum: u64,
    },
    /// Local re-resampling failed to produce a legal architecture.
    RetryBoundExceeded {
        what: &'static str,
        bound: usize,
    },
    /// An architecture failed validation where a valid one was required.
    InvalidArchitecture {
        violations: Vec<String>,
    },
    /// Malformed one-hot pattern while decoding an encoding tensor. Names
    /// the column window where decoding failed.
    DecodeError {
        window: (usize, usize),
        detail: String,
    },
    /// Decoding an all-zero or op-free encoding.
    EmptyArchitecture,
    /// Weight-bank cursor ran past the generated weight tensor: the
    /// encoding and the architecture being executed disagree.
    CursorOverrun {
        cursor: usize,
        need: usize,
        extent: usize,
    },
    /// A quantity violated a divisibility constraint of the encoding layout.
    Divisibility {
        what: &'static str,
        value: usize,
        divisor: usize,
    },
    /// Training aborted on a non-finite loss. Carries the offending
    /// architecture serialized as JSON for diagnosis.
    NonFiniteLoss {
        step: u64,
        arch_json: String,
    },
    /// Correlation is undefined on fewer than three complete pairs.
    CorrelationUndefined {
        pairs: usize,
    },
    /// A dataset split would be empty.
    EmptySplit {
        what: &'static str,
    },
    /// Catch-all for contract violations with context.
    Invalid {
        what: &'static str,
        detail: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::GroupDivisibility { op, channels, groups } => {
                write!(f, "{op}: {channels} channels not divisible by {groups} groups")
            }
            Error::WindowExceedsInput { op, window, extent } => {
                write!(f, "{op}: window {window} exceeds input extent {extent}")
            }
            Error::DegenerateBatchStats => {
                write!(f, "batch_norm: batch statistics undefined for batch size 1 in train mode")
            }
            Error::NonScalarLoss { numel } => {
                write!(f, "backward: loss must be a scalar, got {numel} elements")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::SchedulePastEnd { t, total } => {
                write!(f, "cosine_anneal: step {t} past schedule end {total}")
            }
            Error::OptimizerStateMismatch { expected, got } => {
                write!(f, "optimizer state initialized for {expected} parameters, got {got}")
            }
            Error::BudgetInfeasible { budget, minimum } => {
                write!(f, "parameter budget {budget} below minimal architecture cost {minimum}")
            }
            Error::RetryBoundExceeded { what, bound } => {
                write!(f, "{what}: no legal resample within {bound} retries")
            }
            Error::InvalidArchitecture { violations } => {
                write!(f, "invalid architecture: {}", violations.join("; "))
            }
            Error::DecodeError { window, detail } => {
                write!(f, "decode: malformed pattern in columns [{}, {}): {detail}", window.0, window.1)
            }
            Error::EmptyArchitecture => write!(f, "decode: encoding describes no ops"),
            Error::CursorOverrun { cursor, need, extent } => {
                write!(f, "weight bank: cursor {cursor} + {need} overruns extent {extent}")
            }
            Error::Divisibility { what, value, divisor } => {
                write!(f, "{what} = {value} not divisible by {divisor}")
            }
            Error::NonFiniteLoss { step, arch_json } => {
                write!(f, "non-finite loss at step {step}; offending architecture: {arch_json}")
            }
            Error::CorrelationUndefined { pairs } => {
                write!(f, "correlation undefined with {pairs} complete pairs (need >= 3)")
            }
            Error::EmptySplit { what } => write!(f, "split would leave {what} empty"),
            Error::Invalid { what, detail } => write!(f, "{what}: {detail}"),
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}

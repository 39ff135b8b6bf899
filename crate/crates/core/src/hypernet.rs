//! The weight generator: a fully-convolutional DenseNet mapping the
//! architecture encoding `c` to the main network's 1x1 kernels in a single
//! forward pass.
//!
//! Geometry, for encoding shape `[1, C_enc, H, L]`: the generator preserves
//! the spatial extent and emits `4*D*N^2` channels, giving
//! `W_raw [1, 4DN^2, H, L]`. That is regrouped into
//! `W_flat [N_max, 4*N_max*n_ch]` column-group by column-group: the
//! `4*D*N_max` flat columns of group `l` are exactly the cells of encoding
//! column `l`, so locality in `c` stays locality in `W_flat` and the
//! generator's receptive field bounds how far one op's description can
//! influence another op's weights.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::cell::{Cell, RefCell};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{EncodingTensor, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, conv2d, leaky_relu, normalize_filter, permute_flat, reshape, slice, ConvArgs, Tensor};

/// Shape of the generator network. The reference model is a 26-layer
/// DenseNet: a 3x3 stem, dense blocks of 8/10/4 3x3 layers at growth 10
/// joined by channel-halving 1x1 transitions, and a 1x1 head; every conv
/// is bias-free with whole-tensor weight normalization behind a leaky
/// activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperNetSpec {
    pub dense_block_layers: Vec<usize>,
    pub growth_rate: usize,
    /// Stem width as a multiple of the growth rate.
    pub stem_multiple: usize,
    pub activation_slope: f64,
}

impl HyperNetSpec {
    pub fn reference() -> Self {
        HyperNetSpec {
            dense_block_layers: vec![8, 10, 4],
            growth_rate: 10,
            stem_multiple: 2,
            activation_slope: 0.02,
        }
    }

    /// A deliberately tiny generator for fast tests.
    pub fn tiny() -> Self {
        HyperNetSpec {
            dense_block_layers: vec![1],
            growth_rate: 2,
            stem_multiple: 1,
            activation_slope: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Stem,
    Dense,
    Transition,
    Head,
}

#[derive(Clone, Debug)]
struct ConvPlan {
    stage: Stage,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
}

fn layer_plan(spec: &HyperNetSpec, in_channels: usize, out_channels: usize) -> Vec<ConvPlan> {
    let mut plan = Vec::new();
    let mut c = spec.stem_multiple * spec.growth_rate;
    plan.push(ConvPlan { stage: Stage::Stem, in_ch: in_channels, out_ch: c, kernel: 3 });
    for (bi, &layers) in spec.dense_block_layers.iter().enumerate() {
        for _ in 0..layers {
            plan.push(ConvPlan { stage: Stage::Dense, in_ch: c, out_ch: spec.growth_rate, kernel: 3 });
            c += spec.growth_rate;
        }
        if bi + 1 < spec.dense_block_layers.len() {
            let half = c / 2;
            plan.push(ConvPlan { stage: Stage::Transition, in_ch: c, out_ch: half, kernel: 1 });
            c = half;
        }
    }
    plan.push(ConvPlan { stage: Stage::Head, in_ch: c, out_ch: out_channels, kernel: 1 });
    plan
}

/// The generator's parameters plus the bound search-space geometry.
pub struct HyperNet<T: Scalar> {
    pub spec: HyperNetSpec,
    config: SearchSpaceConfig,
    weights: Vec<Tensor<T>>,
    plan: Vec<ConvPlan>,
    /// Regroup permutations per n_ch, built on first use.
    perm_cache: RefCell<BTreeMap<usize, Rc<Vec<usize>>>>,
}

/// Deterministic orthogonal-ish init: gaussian matrix, rows (or columns,
/// whichever are fewer) orthonormalized by modified Gram-Schmidt, scaled
/// by sqrt(2). The generator normalizes whole tensors at use, so only the
/// direction matters.
fn orthogonal_init<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<T> {
    let mut m: Vec<f64> = (0..rows * cols).map(|_| normal(rng)).collect();
    let (vecs, dim, count) = if rows <= cols { (true, cols, rows) } else { (false, rows, cols) };
    let get = |m: &Vec<f64>, v: usize, i: usize| if vecs { m[v * cols + i] } else { m[i * cols + v] };
    let set = |m: &mut Vec<f64>, v: usize, i: usize, x: f64| {
        if vecs {
            m[v * cols + i] = x;
        } else {
            m[i * cols + v] = x;
        }
    };
    for v in 0..count {
        for u in 0..v {
            let mut dot = 0.0;
            for i in 0..dim {
                dot += get(&m, v, i) * get(&m, u, i);
            }
            for i in 0..dim {
                let x = get(&m, v, i) - dot * get(&m, u, i);
                set(&mut m, v, i, x);
            }
        }
        let mut norm2 = 0.0;
        for i in 0..dim {
            norm2 += get(&m, v, i) * get(&m, v, i);
        }
        let inv = 1.0 / libm::sqrt(norm2).max(1e-12);
        for i in 0..dim {
            let x = get(&m, v, i) * inv;
            set(&mut m, v, i, x);
        }
    }
    let gain = core::f64::consts::SQRT_2;
    m.into_iter().map(|x| T::from_f64(x * gain)).collect()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; the log argument is kept away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Assemble generator parameters for the given search space. Deterministic
/// for a fixed seed.
pub fn build_hypernet<T: Scalar, R: Rng>(
    config: &SearchSpaceConfig,
    spec: &HyperNetSpec,
    rng: &mut R,
) -> Result<HyperNet<T>> {
    config.validate()?;
    if spec.dense_block_layers.is_empty() || spec.growth_rate == 0 || spec.stem_multiple == 0 {
        return Err(Error::Invalid {
            what: "hypernet spec",
            detail: format!("{spec:?} has an empty block plan or zero widths"),
        });
    }
    let plan = layer_plan(spec, config.enc_channels(), config.generator_out_channels());
    let weights = plan
        .iter()
        .map(|p| {
            let fan_in = p.in_ch * p.kernel * p.kernel;
            let data = orthogonal_init::<T, R>(p.out_ch, fan_in, rng);
            Tensor::parameter(&[p.out_ch, p.in_ch, p.kernel, p.kernel], data)
        })
        .collect();
    Ok(HyperNet {
        spec: spec.clone(),
        config: config.clone(),
        weights,
        plan,
        perm_cache: RefCell::new(BTreeMap::new()),
    })
}

impl<T: Scalar> HyperNet<T> {
    pub fn config(&self) -> &SearchSpaceConfig {
        &self.config
    }

    pub fn conv_layer_count(&self) -> usize {
        self.plan.len()
    }

    pub fn out_channels(&self) -> usize {
        self.plan.last().unwrap().out_ch
    }

    /// Columns of influence on either side of an input column: one per
    /// 3x3 conv (all convs are stride-1).
    pub fn receptive_field_radius(&self) -> usize {
        self.plan.iter().filter(|p| p.kernel == 3).count()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("hyper.conv{i}.weight"), w.clone()))
            .collect()
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.weights.clone()
    }

    /// Share the same buffers with gradient tracking disabled, for
    /// forward-only scoring.
    pub fn detached(&self) -> HyperNet<T> {
        HyperNet {
            spec: self.spec.clone(),
            config: self.config.clone(),
            weights: self.weights.iter().map(|w| w.detach()).collect(),
            plan: self.plan.clone(),
            perm_cache: RefCell::new(BTreeMap::new()),
        }
    }

    /// Raw fully-convolutional pass: `[1, C_enc, H, L] -> [1, 4DN^2, H, L]`.
    pub fn forward(&self, c: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = c.shape();
        if shape.len() != 4 || shape[0] != 1 || shape[1] != self.config.enc_channels() {
            return Err(Error::ShapeMismatch {
                op: "hypernet forward",
                detail: format!(
                    "encoding {:?} does not match input channels {}",
                    shape,
                    self.config.enc_channels()
                ),
            });
        }
        let slope = self.spec.activation_slope;
        let mut features: Vec<Tensor<T>> = vec![c.clone()];
        for (plan, w) in self.plan.iter().zip(&self.weights) {
            let input = if features.len() == 1 {
                features[0].clone()
            } else {
                concat_channels(&features)?
            };
            let x = leaky_relu(&input, slope);
            let wn = normalize_filter(w);
            let args = ConvArgs { stride: 1, dilation: 1, groups: 1, padding: plan.kernel / 2 };
            let y = conv2d(&x, &wn, &args)?;
            match plan.stage {
                Stage::Dense => features.push(y),
                _ => features = vec![y],
            }
        }
        Ok(features.pop().unwrap())
    }

    /// Generate and regroup the whole weight tensor for one encoding.
    pub fn generate_weights(&self, enc: &EncodingTensor<T>) -> Result<WeightBank<T>> {
        self.generate_weights_raw(enc.values())
    }

    /// Same, from a raw encoding tensor (used by the encoding-gradient
    /// diagnostic, where `c` itself requires a gradient).
    pub fn generate_weights_raw(&self, c: &Tensor<T>) -> Result<WeightBank<T>> {
        let w_raw = self.forward(c)?;
        let cols = c.shape()[3];
        let n_ch = cols * self.config.depth_divisor;
        let (raw_shape, flat_shape) = weight_output_shape(&self.config, n_ch)?;
        if w_raw.shape() != raw_shape {
            return Err(Error::ShapeMismatch {
                op: "generate_weights",
                detail: format!("{:?} vs expected {:?}", w_raw.shape(), raw_shape),
            });
        }
        let perm = self.regroup_permutation(n_ch);
        let w_flat = permute_flat(&w_raw, perm, &flat_shape)?;
        Ok(WeightBank::new(w_flat, self.config.clone()))
    }

    /// Flat index map for `W_raw [1, 4DN^2, H, L] -> W_flat [N_max, 4 N_max n_ch]`,
    /// grouping flat columns by encoding column.
    fn regroup_permutation(&self, n_ch: usize) -> Rc<Vec<usize>> {
        if let Some(p) = self.perm_cache.borrow().get(&n_ch) {
            return Rc::clone(p);
        }
        let cfg = &self.config;
        let n_max = cfg.max_units;
        let d = cfg.depth_divisor;
        let cell = cfg.generator_out_channels(); // 4DN^2
        let height = cfg.enc_height();
        let cols = n_ch / d;
        let group = 4 * n_max * d; // flat columns per encoding column
        let flat_cols = 4 * n_max * n_ch;
        let mut perm = vec![0usize; n_max * flat_cols];
        for i in 0..n_max {
            for j in 0..flat_cols {
                let l = j / group;
                let t = j % group;
                let p = i * group + t;
                let h = p / cell;
                let ch = p % cell;
                perm[i * flat_cols + j] = (ch * height + h) * cols + l;
            }
        }
        let rc = Rc::new(perm);
        self.perm_cache.borrow_mut().insert(n_ch, Rc::clone(&rc));
        rc
    }
}

/// Expected raw and flat shapes for a network with `n_ch` total 1x1 input
/// channels.
pub fn weight_output_shape(config: &SearchSpaceConfig, n_ch: usize) -> Result<([usize; 4], [usize; 2])> {
    if n_ch == 0 || n_ch % config.depth_divisor != 0 {
        return Err(Error::Divisibility {
            what: "n_ch",
            value: n_ch,
            divisor: config.depth_divisor,
        });
    }
    let raw = [
        1,
        config.generator_out_channels(),
        config.enc_height(),
        n_ch / config.depth_divisor,
    ];
    let flat = [config.max_units, 4 * config.max_units * n_ch];
    Ok((raw, flat))
}

/// Record of one layer's slice for the bookkeeping invariants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceWindow {
    pub start_col: usize,
    pub width_cols: usize,
    pub consumed: usize,
}

/// The reshaped generator output plus the deterministic cursor used to
/// hand out per-layer kernels in op order.
pub struct WeightBank<T: Scalar> {
    w_flat: Tensor<T>,
    config: SearchSpaceConfig,
    cursor: Cell<usize>,
    windows: RefCell<Vec<SliceWindow>>,
}

impl<T: Scalar> WeightBank<T> {
    pub fn new(w_flat: Tensor<T>, config: SearchSpaceConfig) -> Self {
        WeightBank { w_flat, config, cursor: Cell::new(0), windows: RefCell::new(Vec::new()) }
    }

    pub fn flat(&self) -> &Tensor<T> {
        &self.w_flat
    }

    pub fn total_elements(&self) -> usize {
        self.w_flat.numel()
    }

    pub fn total_cols(&self) -> usize {
        self.w_flat.shape()[1]
    }

    pub fn reset_cursor(&self) {
        self.cursor.set(0);
        self.windows.borrow_mut().clear();
    }

    pub fn consumed_elements(&self) -> usize {
        self.windows.borrow().iter().map(|w| w.consumed).sum()
    }

    pub fn windows(&self) -> Vec<SliceWindow> {
        self.windows.borrow().clone()
    }

    /// Slice the next layer's 1x1 kernel: the layer's column window spans
    /// `4*N_max*n_in` columns; rows `[0, n_out)` and the window's first
    /// `4*n_in` columns form the element pool, of which the leading
    /// `w_out*n_in` become the kernel `[w_out, n_in, 1, 1]`, normalized to
    /// unit Euclidean norm. Advances the cursor by the full window.
    pub fn slice_layer_weights(&self, n_in: usize, n_out: usize) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let n_max = cfg.max_units;
        if n_out > n_max || n_out == 0 {
            return Err(Error::Invalid {
                what: "slice_layer_weights",
                detail: format!("n_out {n_out} outside [1, {n_max}]"),
            });
        }
        let window_cols = 4 * n_max * n_in;
        let start = self.cursor.get();
        if start + window_cols > self.total_cols() {
            return Err(Error::CursorOverrun {
                cursor: start,
                need: window_cols,
                extent: self.total_cols(),
            });
        }
        let w_out = cfg.bottleneck_width(n_in, n_out);
        let consumed = w_out * n_in;

        let pool = slice(&self.w_flat, &[0, start], &[n_out, 4 * n_in])?;
        let flat = reshape(&pool, &[n_out * 4 * n_in])?;
        let prefix = slice(&flat, &[0], &[consumed])?;
        let kernel = reshape(&prefix, &[w_out, n_in, 1, 1])?;
        let kernel = normalize_filter(&kernel);

        self.cursor.set(start + window_cols);
        self.windows.borrow_mut().push(SliceWindow {
            start_col: start,
            width_cols: window_cols,
            consumed,
        });
        Ok(kernel)
    }
}

//! In-memory image datasets: deterministic synthetic generators, split
//! management, and batch augmentation. File ingestion lives in the
//! companion crate.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images scaled to [0,1] and per-channel standardized, with split tags
/// partitioning the indices.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Dataset {
    /// Wrap raw `[n, c, h, w]` pixel data (already in [0,1]) and
    /// standardize per channel. All indices start in the train split.
    pub fn from_raw(
        images: Vec<f32>,
        n: usize,
        channels: usize,
        height: usize,
        width: usize,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != n * channels * height * width {
            return Err(Error::Invalid {
                what: "dataset",
                detail: alloc::format!(
                    "{} pixels for {n}x{channels}x{height}x{width}",
                    images.len()
                ),
            });
        }
        if labels.len() != n {
            return Err(Error::Invalid {
                what: "dataset",
                detail: alloc::format!("{} labels for {n} images", labels.len()),
            });
        }
        if labels.iter().any(|&l| l as usize >= num_classes) {
            return Err(Error::Invalid { what: "dataset", detail: "label out of range".into() });
        }
        let mut d = Dataset {
            images,
            n,
            channels,
            height,
            width,
            labels,
            num_classes,
            train: (0..n as u32).collect(),
            val: Vec::new(),
            test: Vec::new(),
        };
        d.standardize();
        Ok(d)
    }

    /// Per-channel mean/std standardization over the whole set.
    fn standardize(&mut self) {
        let hw = self.height * self.width;
        for c in 0..self.channels {
            let mut mean = 0.0f64;
            let mut count = 0usize;
            for i in 0..self.n {
                let base = (i * self.channels + c) * hw;
                for &v in &self.images[base..base + hw] {
                    mean += v as f64;
                    count += 1;
                }
            }
            mean /= count as f64;
            let mut var = 0.0f64;
            for i in 0..self.n {
                let base = (i * self.channels + c) * hw;
                for &v in &self.images[base..base + hw] {
                    var += (v as f64 - mean) * (v as f64 - mean);
                }
            }
            var /= count as f64;
            let inv = 1.0 / libm::sqrt(var).max(1e-8);
            for i in 0..self.n {
                let base = (i * self.channels + c) * hw;
                for v in &mut self.images[base..base + hw] {
                    *v = ((*v as f64 - mean) * inv) as f32;
                }
            }
        }
    }

    /// Absorb another dataset's images as this one's test split. Image
    /// geometry and class count must agree.
    pub fn with_test_from(mut self, other: Dataset) -> Result<Self> {
        if (other.channels, other.height, other.width, other.num_classes)
            != (self.channels, self.height, self.width, self.num_classes)
        {
            return Err(Error::Invalid {
                what: "dataset merge",
                detail: "geometry or class count mismatch".into(),
            });
        }
        let offset = self.n as u32;
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
        self.test.extend((0..other.n as u32).map(|i| offset + i));
        self.n += other.n;
        Ok(self)
    }

    /// Gather a batch by dataset indices as `([len, c, h, w] buffer, labels)`.
    pub fn gather(&self, indices: &[u32]) -> (Vec<f32>, Vec<usize>) {
        let chw = self.channels * self.height * self.width;
        let mut out = Vec::with_capacity(indices.len() * chw);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let base = i as usize * chw;
            out.extend_from_slice(&self.images[base..base + chw]);
            labels.push(self.labels[i as usize] as usize);
        }
        (out, labels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Per-class smooth templates plus pixel noise; linearly separable.
    GaussianBlobs,
    /// Oriented sinusoidal gratings with random phase; phase invariance
    /// makes this genuinely nonlinear.
    StripedTextures,
}

/// Deterministic synthetic dataset, balanced within one image per class.
pub fn synth_dataset(kind: SynthKind, n: usize, classes: usize, size: usize, seed: u64) -> Result<Dataset> {
    if n < classes || classes < 2 || size < 4 {
        return Err(Error::Invalid {
            what: "synth_dataset",
            detail: alloc::format!("n={n}, classes={classes}, size={size}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = size * size;
    let mut images = vec![0.0f32; n * hw];
    let mut labels = vec![0u32; n];

    match kind {
        SynthKind::GaussianBlobs => {
            // Smooth low-frequency template per class.
            let mut templates = vec![0.0f64; classes * hw];
            for t in templates.chunks_mut(hw) {
                let comps: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(-1.5..1.5),
                            rng.gen_range(0.0..2.5),
                            rng.gen_range(0.0..2.5),
                            rng.gen_range(0.0..core::f64::consts::TAU),
                        )
                    })
                    .collect();
                for y in 0..size {
                    for x in 0..size {
                        let mut v = 0.0;
                        for &(a, fx, fy, ph) in &comps {
                            v += a
                                * libm::sin(
                                    core::f64::consts::TAU * (fx * x as f64 + fy * y as f64)
                                        / size as f64
                                        + ph,
                                );
                        }
                        t[y * size + x] = v;
                    }
                }
            }
            for i in 0..n {
                let class = i % classes;
                labels[i] = class as u32;
                let t = &templates[class * hw..(class + 1) * hw];
                for (p, &tv) in images[i * hw..(i + 1) * hw].iter_mut().zip(t) {
                    *p = (tv + 0.35 * normal(&mut rng)) as f32;
                }
            }
        }
        SynthKind::StripedTextures => {
            // One grating per class with random phase. Orientation,
            // spatial frequency, and noise all walk across the label
            // range: early classes are clean and coarse, late ones fine
            // and noisy. Phase invariance keeps linear models weak, the
            // noise gradient spreads network errors by capacity, and the
            // frequency gradient makes receptive-field choices (filter
            // dilation) consequential.
            for i in 0..n {
                let class = i % classes;
                labels[i] = class as u32;
                let t = class as f64 / (classes - 1).max(1) as f64;
                let angle = core::f64::consts::PI * class as f64 / classes as f64;
                let freq = 1.2 + 2.3 * t;
                let noise = 0.3 + 1.9 * t;
                let phase = rng.gen_range(0.0..core::f64::consts::TAU);
                let (ca, sa) = (libm::cos(angle), libm::sin(angle));
                for y in 0..size {
                    for x in 0..size {
                        let u = (x as f64 * ca + y as f64 * sa) / size as f64;
                        let v = libm::sin(core::f64::consts::TAU * freq * u + phase)
                            + noise * normal(&mut rng);
                        images[i * hw + y * size + x] = v as f32;
                    }
                }
            }
        }
    }

    // Shift into [0,1]-ish before the standardization pass for uniformity
    // with file-loaded data.
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &images {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let scale = 1.0 / (hi - lo).max(1e-6);
    for v in &mut images {
        *v = (*v - lo) * scale;
    }

    Dataset::from_raw(images, n, 1, size, size, labels, classes)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Carve a validation split out of the train split by a seeded shuffle.
pub fn split_dataset(mut d: Dataset, val_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::Invalid {
            what: "split_dataset",
            detail: alloc::format!("val_fraction {val_fraction} outside (0, 1)"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = core::mem::take(&mut d.train);
    idx.shuffle(&mut rng);
    let val_n = ((idx.len() as f64) * val_fraction) as usize;
    if val_n == 0 {
        return Err(Error::EmptySplit { what: "val" });
    }
    if val_n >= idx.len() {
        return Err(Error::EmptySplit { what: "train" });
    }
    let mut val: Vec<u32> = idx.split_off(idx.len() - val_n);
    idx.sort_unstable();
    val.sort_unstable();
    d.train = idx;
    d.val = val;
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    None,
    /// Reflect-pad by 4, random crop back to size, horizontal flip with
    /// probability one half.
    CropFlip,
}

/// Label-preserving batch augmentation on a raw `[b, c, h, w]` buffer.
pub fn augment<R: Rng>(
    batch: &[f32],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    policy: AugmentPolicy,
    rng: &mut R,
) -> Vec<f32> {
    match policy {
        AugmentPolicy::None => batch.to_vec(),
        AugmentPolicy::CropFlip => {
            let mut out = vec![0.0f32; batch.len()];
            let chw = c * h * w;
            for bi in 0..b {
                let dy = rng.gen_range(0..9) as isize - 4;
                let dx = rng.gen_range(0..9) as isize - 4;
                let flip = rng.gen_bool(0.5);
                let src = &batch[bi * chw..(bi + 1) * chw];
                let dst = &mut out[bi * chw..(bi + 1) * chw];
                shift_reflect(src, dst, c, h, w, dy, dx);
                if flip {
                    flip_horizontal(dst, c, h, w);
                }
            }
            out
        }
    }
}

/// Crop at offset (dy, dx) out of a reflect-padded image, in place per
/// sample. Offsets in [-4, 4].
fn shift_reflect(src: &[f32], dst: &mut [f32], c: usize, h: usize, w: usize, dy: isize, dx: isize) {
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };
    for ci in 0..c {
        for y in 0..h {
            let sy = reflect(y as isize + dy, h);
            for x in 0..w {
                let sx = reflect(x as isize + dx, w);
                dst[(ci * h + y) * w + x] = src[(ci * h + sy) * w + sx];
            }
        }
    }
}

/// Mirror the width axis in place (one sample).
pub fn flip_horizontal(img: &mut [f32], c: usize, h: usize, w: usize) {
    for ci in 0..c {
        for y in 0..h {
            let row = (ci * h + y) * w;
            for x in 0..w / 2 {
                img.swap(row + x, row + w - 1 - x);
            }
        }
    }
}

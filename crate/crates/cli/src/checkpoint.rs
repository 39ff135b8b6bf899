//! Versioned little-endian binary checkpoints: run config snapshot, RNG
//! position, epoch counter, every model tensor and batch-norm statistic,
//! and the optimizer moments. Loading a checkpoint and continuing
//! training reproduces the uninterrupted run bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smash_core::search::TrainState;

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

pub const MAGIC: [u8; 4] = *b"SMCK";
pub const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    fn f32s(&mut self, data: &[f32]) {
        self.u64(data.len() as u64);
        for &v in data {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(CliError::Truncated {
                path: self.path.to_path_buf(),
                needed: n,
                got: self.data.len() - self.pos,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

/// Every named tensor a training state carries, in a fixed order: model
/// parameters, batch-norm statistics, optimizer moments.
fn tensor_inventory(state: &TrainState<f32>) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    for (name, t) in state.model.named_params() {
        out.push((name, t.to_vec()));
    }
    for (name, stats) in state.model.shared.named_buffers() {
        out.push((format!("{name}.running_mean"), stats.mean.borrow().clone()));
        out.push((format!("{name}.running_var"), stats.var.borrow().clone()));
    }
    let names: Vec<String> = state.model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, (m, v, _)) in names.iter().zip(state.optimizer.export_state()) {
        out.push((format!("opt.m.{name}"), m));
        out.push((format!("opt.v.{name}"), v));
    }
    out
}

pub fn save(path: &Path, state: &TrainState<f32>, run: &RunConfig) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    let cfg = serde_json::to_vec(run).map_err(|e| CliError::Config(e.to_string()))?;
    w.bytes(&cfg);
    w.u64(state.epochs_done as u64);

    w.buf.extend_from_slice(&state.rng.get_seed());
    w.u128(state.rng.get_word_pos());
    w.u64(state.rng.get_stream());

    let tensors = tensor_inventory(state);
    w.u64(tensors.len() as u64);
    for (name, data) in &tensors {
        w.bytes(name.as_bytes());
        w.f32s(data);
    }

    let steps: Vec<u64> = state.optimizer.export_state().iter().map(|(_, _, s)| *s).collect();
    w.u64(steps.len() as u64);
    for s in steps {
        w.u64(s);
    }

    std::fs::write(path, w.buf).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<(TrainState<f32>, RunConfig)> {
    let data = std::fs::read(path).map_err(io_err(path))?;
    let mut c = Cursor { path, data: &data, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(CliError::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_le_bytes(MAGIC),
            got: u32::from_le_bytes(magic.try_into().unwrap()),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CliError::VersionMismatch { expected: VERSION, got: version });
    }
    let run: RunConfig =
        serde_json::from_slice(c.bytes()?).map_err(|e| CliError::Config(e.to_string()))?;
    let epochs_done = c.u64()? as usize;

    let seed: [u8; 32] = c.take(32)?.try_into().unwrap();
    let word_pos = c.u128()?;
    let stream = c.u64()?;

    let count = c.u64()? as usize;
    let mut tensors: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for _ in 0..count {
        let name = String::from_utf8(c.bytes()?.to_vec())
            .map_err(|e| CliError::Other(format!("tensor name not utf-8: {e}")))?;
        tensors.insert(name, c.f32s()?);
    }

    let step_count = c.u64()? as usize;
    let mut steps = Vec::with_capacity(step_count);
    for _ in 0..step_count {
        steps.push(c.u64()?);
    }

    // Rebuild the state skeleton, then overwrite every buffer.
    let mut state = TrainState::<f32>::new(&run.space, &run.hypernet, &run.train, run.seed)?;
    state.epochs_done = epochs_done;

    let expected = tensor_inventory(&state).len();
    if tensors.len() != expected {
        return Err(CliError::TensorCountMismatch { expected, got: tensors.len() });
    }

    let mut take = |name: &str| -> Result<Vec<f32>> {
        tensors.remove(name).ok_or_else(|| CliError::MissingTensor(name.to_string()))
    };
    for (name, t) in state.model.named_params() {
        let data = take(&name)?;
        if data.len() != t.numel() {
            return Err(CliError::Other(format!(
                "tensor {name}: {} elements in checkpoint, model wants {}",
                data.len(),
                t.numel()
            )));
        }
        t.set_data(&data);
    }
    for (name, stats) in state.model.shared.named_buffers() {
        *stats.mean.borrow_mut() = take(&format!("{name}.running_mean"))?;
        *stats.var.borrow_mut() = take(&format!("{name}.running_var"))?;
    }
    let names: Vec<String> = state.model.named_params().into_iter().map(|(n, _)| n).collect();
    if steps.len() != names.len() {
        return Err(CliError::TensorCountMismatch { expected: names.len(), got: steps.len() });
    }
    let mut opt_state = Vec::with_capacity(names.len());
    for (name, step) in names.iter().zip(steps) {
        let m = take(&format!("opt.m.{name}"))?;
        let v = take(&format!("opt.v.{name}"))?;
        opt_state.push((m, v, step));
    }
    state.optimizer.import_state(opt_state)?;

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;

    Ok((state, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use smash_core::arch::SearchSpaceConfig;
    use smash_core::data::{split_dataset, synth_dataset, SynthKind};
    use smash_core::hypernet::HyperNetSpec;
    use smash_core::search::{train_smash, NullTelemetry, TrainSettings};

    fn desk_run() -> RunConfig {
        RunConfig {
            space: SearchSpaceConfig {
                num_blocks: 2,
                ..SearchSpaceConfig::v1_desk()
            },
            hypernet: HyperNetSpec::tiny(),
            train: TrainSettings { epochs: 4, batch_size: 50, ..TrainSettings::default() },
            ..RunConfig::default()
        }
    }

    fn desk_data() -> smash_core::data::Dataset {
        let d = synth_dataset(SynthKind::GaussianBlobs, 260, 10, 8, 3).unwrap();
        split_dataset(d, 0.2, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let run = desk_run();
        let data = desk_data();
        let state =
            train_smash::<f32>(&run.space, &run.hypernet, &run.train, &data, 7, &mut NullTelemetry)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &state, &run).unwrap();
        let (restored, run2) = load(&p1).unwrap();
        assert_eq!(run, run2);
        assert_eq!(restored.epochs_done, state.epochs_done);
        save(&p2, &restored, &run2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save(load(x)) must be byte-identical");
    }

    #[test]
    fn wrong_magic_and_version_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load(&p), Err(CliError::BadMagic { .. })));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load(&p),
            Err(CliError::VersionMismatch { expected: VERSION, got: 99 })
        ));
    }

    #[test]
    fn resume_equals_uninterrupted_run_bitwise() {
        let run = desk_run();
        let data = desk_data();

        // Uninterrupted: 4 epochs.
        let full =
            train_smash::<f32>(&run.space, &run.hypernet, &run.train, &data, 7, &mut NullTelemetry)
                .unwrap();

        // Interrupted: 2 epochs, checkpoint, restore, 2 more.
        let mut half = smash_core::search::TrainState::<f32>::new(&run.space, &run.hypernet, &run.train, 7).unwrap();
        half.run_epochs(&data, 2, &mut NullTelemetry).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.ckpt");
        save(&p, &half, &run).unwrap();
        let (mut resumed, _) = load(&p).unwrap();
        resumed.run_epochs(&data, 2, &mut NullTelemetry).unwrap();

        let pa = dir.path().join("full.ckpt");
        let pb = dir.path().join("resumed.ckpt");
        save(&pa, &full, &run).unwrap();
        save(&pb, &resumed, &run).unwrap();
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "resumed run must match the uninterrupted run bit for bit"
        );
    }
}

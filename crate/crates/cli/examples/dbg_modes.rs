// Scratch: corruption probe across all modes on a cached checkpoint.

use std::path::Path;

use smash_cli::checkpoint;
use smash_cli::commands::{phase_rng, sample_probe_archs};
use smash_core::arch::CorruptMode;
use smash_core::data::{split_dataset, synth_dataset, SynthKind};
use smash_core::search::corruption_probe;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap();
    let (state, run) = checkpoint::load(Path::new(&ckpt)).unwrap();
    let data = synth_dataset(SynthKind::StripedTextures, 6250, 10, 8, 9).unwrap();
    let data = split_dataset(data, 0.2, 1).unwrap();

    let mut rng = phase_rng(7, 5);
    let archs = sample_probe_archs(&run.space, 20, &mut rng).unwrap();
    for mode in [CorruptMode::ShuffleDilations, CorruptMode::ShuffleReads, CorruptMode::SwapLayers] {
        let table = corruption_probe(&state.model, &archs, &[mode], &data, &mut rng).unwrap();
        let mean_delta: f64 =
            table.rows.iter().map(|r| r.delta).sum::<f64>() / table.rows.len() as f64;
        eprintln!(
            "{mode:?}: fraction clean better {:?}, mean delta {mean_delta:+.4}",
            table.fraction_clean_better
        );
    }
}

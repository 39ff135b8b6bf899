// Scratch: do generated weight values matter, and how much do dilation
// bits steer each generated kernel?

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use smash_cli::checkpoint;
use smash_cli::commands::{phase_rng, sample_probe_archs};
use smash_core::arch::encode;
use smash_core::data::{split_dataset, synth_dataset, SynthKind};
use smash_core::hypernet::build_hypernet;
use smash_core::search::{smash_score, SmashModel};

fn main() {
    let ckpt = std::env::args().nth(1).unwrap_or("/tmp/calib_48_7_0.001.ckpt".into());
    let (state, run) = checkpoint::load(Path::new(&ckpt)).unwrap();
    let space = run.space.clone();
    let data = synth_dataset(SynthKind::StripedTextures, 6250, 10, 8, 9).unwrap();
    let data = split_dataset(data, 0.2, 1).unwrap();

    // Untrained generator with a fresh seed, same shared parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let fresh = build_hypernet::<f32, _>(&space, &run.hypernet, &mut rng).unwrap();
    let hybrid = SmashModel { hyper: fresh, shared: state.model.shared.detached() };

    let mut rng = phase_rng(7, 5);
    let archs = sample_probe_archs(&space, 8, &mut rng).unwrap();
    for (i, arch) in archs.iter().enumerate() {
        let trained = smash_score(&state.model, arch, &data).unwrap();
        let untrained = smash_score(&hybrid, arch, &data).unwrap();
        eprintln!("arch {i}: trained-H {trained:.3} vs untrained-H {untrained:.3}");
    }

    // Kernel sensitivity to dilation bits: cosine between k(c) and
    // k(c with one op's dilation flipped).
    let arch = &archs[0];
    let enc = encode::<f32>(arch).unwrap();
    let bank_a = state.model.hyper.generate_weights(&enc).unwrap();
    let mut flipped = arch.clone();
    let d = flipped.blocks[0].ops[0].dilation;
    flipped.blocks[0].ops[0].dilation = if d == 1 { 2 } else { 1 };
    let enc_b = encode::<f32>(&flipped).unwrap();
    let bank_b = state.model.hyper.generate_weights(&enc_b).unwrap();
    for (bi, block, op) in arch.ops_in_order() {
        let n_in = op.n_in(block.bank_channels);
        let ka = bank_a.slice_layer_weights(n_in, op.n_out).unwrap().to_vec();
        let kb = bank_b.slice_layer_weights(n_in, op.n_out).unwrap().to_vec();
        let dot: f64 = ka.iter().zip(&kb).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        eprintln!("block {bi} op (n_in {n_in}, n_out {}): cos(k, k_flipped) = {dot:.6}", op.n_out);
    }
}

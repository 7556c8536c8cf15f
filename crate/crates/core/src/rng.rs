//! All randomness in the crate flows from one root seed through named
//! ChaCha8 substreams, so changing what one stage consumes never perturbs
//! another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent random streams of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Shuffle = 3,
    Dropout = 4,
    MaskRandom = 5,
    Synth = 6,
}

/// Deterministic generator for `(root seed, stream, index)`. The index
/// selects e.g. the epoch for shuffling or the example for dropout masks.
pub fn substream(root_seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    // 16 bits of stream kind, 48 bits of index.
    rng.set_stream(((stream as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}

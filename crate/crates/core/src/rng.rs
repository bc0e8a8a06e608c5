//! Seeded, counter-addressed random streams.
//!
//! Every consumer of randomness asks for the stream identified by
//! `(seed, stage, stream_id)`, so results never depend on the order in
//! which blocks or shifts are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags keep independent consumers of one seed on disjoint keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Texture,
    SensorNoise,
    Multiplier,
    Integrator,
    Perturbation,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Texture => 0x7465_7874_7572_6500,
            Stage::SensorNoise => 0x6e6f_6973_6566_6c00,
            Stage::Multiplier => 0x6d75_6c74_6970_6c00,
            Stage::Integrator => 0x696e_7465_6772_6100,
            Stage::Perturbation => 0x7065_7274_7572_6200,
        }
    }
}

pub fn stream(seed: u64, stage: Stage, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.tag());
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finalizer, used to fold coordinates into a stream id.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for one (block origin, shift) evaluation.
pub fn shift_stream_id(origin: (usize, usize), du: i32, dv: i32) -> u64 {
    let mut h = mix64(origin.0 as u64);
    h = mix64(h ^ origin.1 as u64);
    h = mix64(h ^ (du as i64 as u64));
    mix64(h ^ (dv as i64 as u64).rotate_left(32))
}

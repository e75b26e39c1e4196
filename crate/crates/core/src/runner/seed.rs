use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Bits of the stream id reserved for the replication index.
pub const REP_BITS: u32 = 40;
pub const MAX_SCENARIOS: u64 = 1 << (64 - REP_BITS);
pub const MAX_REPS: u64 = 1 << REP_BITS;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for one replication of one scenario.
///
/// The ChaCha key is expanded from `master_seed`; the 64-bit stream id packs
/// `(scenario_index, replication_index)`, so distinct index pairs never share
/// a stream and no stream depends on execution order.
pub fn derive_seed(master_seed: u64, scenario_index: u64, replication_index: u64) -> ChaCha8Rng {
    assert!(scenario_index < MAX_SCENARIOS, "scenario index {scenario_index} out of range");
    assert!(replication_index < MAX_REPS, "replication index {replication_index} out of range");
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((scenario_index << REP_BITS) | replication_index);
    rng
}

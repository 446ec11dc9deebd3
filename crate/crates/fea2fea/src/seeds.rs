//! Deterministic derivation of child seeds from a single root seed.
//!
//! Every random decision in a run (splits, parameter init, dropout masks,
//! synthetic graphs) draws from a ChaCha8 stream seeded through this module,
//! so one `u64` pins the whole pipeline. Child seeds are derived by folding
//! tag words into the root with SplitMix64, which gives well-mixed,
//! collision-resistant streams without any global state.

/// One round of the SplitMix64 mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed by absorbing each tag into the root in order.
///
/// `child_seed(root, &[a, b])` differs from `child_seed(root, &[b, a])`:
/// tags are positional (e.g. `[task_kind, pair_index, seed_index]`).
pub fn child_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// Tag words for the major consumers of randomness. Keeping them in one
/// place makes accidental stream sharing between stages impossible.
pub mod tags {
    pub const SPLIT: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SYNTH_GRAPH: u64 = 4;
    pub const PAIR_TASK: u64 = 5;
    pub const COMBINATION_TASK: u64 = 6;
    pub const APPLICATION_TASK: u64 = 7;
    pub const FOLD_ASSIGNMENT: u64 = 8;
}

//! Deterministic seed derivation helpers.
//!
//! Every stochastic operation takes an explicit 64-bit seed. Composite
//! workflows derive component seeds from one master seed with wrapping
//! offsets, and mix in user ids via FNV-1a so per-user streams differ.

/// FNV-1a hash of a string; stable across platforms and runs.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Component seed: master seed plus a fixed role offset.
pub fn derive(master: u64, offset: u64) -> u64 {
    master.wrapping_add(offset)
}

/// Per-user seed: component seed xor the user-id hash.
pub fn for_user(component: u64, user_id: &str) -> u64 {
    component ^ fnv1a64(user_id)
}

//! Small internal helpers shared across modules.

/// FNV-1a over a byte slice.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministically mix a base seed with a sequence of integer parts.
/// Used to derive per-block and per-restart RNG seeds.
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * (parts.len() + 1));
    buf.extend_from_slice(&base.to_le_bytes());
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a64(&buf)
}

/// Render a 0-based index set in the 1-based set notation used in reports,
/// e.g. `(1,2,3)`.
pub fn set_notation(indices: &[usize]) -> String {
    let inner = indices
        .iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!("({inner})")
}
